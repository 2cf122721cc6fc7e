//! Separatrix model and poloidal-angle region bookkeeping.
//!
//! The separatrix is modelled as a circle in the poloidal (R, Z) plane with a
//! single X-point marked at a configurable angle. Everything downstream only
//! depends on angles and region membership, so the curve shape is kept
//! deliberately simple.
//!
//! Two angle origins are supported. [`AngleOrigin::Horizontal`] measures from
//! the outboard midplane (the usual polar convention) and
//! [`AngleOrigin::Xpoint`] measures from the X-point, counter-clockwise.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of quadrants the separatrix is split into.
pub const QUADRANTS: u8 = 4;
/// Segments per quadrant.
pub const SEGMENTS_PER_QUADRANT: u8 = 8;
/// Total number of quadrant segments around the separatrix.
pub const TOTAL_SEGMENTS: usize = (QUADRANTS as usize) * (SEGMENTS_PER_QUADRANT as usize);

/// Angles closer than this to 2π are folded onto 0.
const ANGLE_SNAP: f64 = 1e-12;

const SEGMENT_WIDTH: f64 = TAU / TOTAL_SEGMENTS as f64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("position coincides with the separatrix center")]
    AtCenter,
    #[error("separatrix radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("angle {name} = {value} is outside [0, 2π)")]
    AngleOutOfRange { name: &'static str, value: f64 },
    #[error("quadrant {0} out of range 0..4")]
    BadQuadrant(u8),
    #[error("segment {0} out of range 0..8")]
    BadSegment(u8),
    #[error("angle range is empty: lo == hi == {0}")]
    EmptyRange(f64),
    #[error("cannot parse region '{0}'")]
    BadRegion(String),
}

/// Fold any finite angle into `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if TAU - r <= ANGLE_SNAP {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AngleOrigin {
    #[default]
    Horizontal,
    #[serde(alias = "x-point")]
    Xpoint,
}

impl fmt::Display for AngleOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AngleOrigin::Horizontal => "horizontal",
            AngleOrigin::Xpoint => "xpoint",
        })
    }
}

impl std::str::FromStr for AngleOrigin {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "horizontal" => Ok(AngleOrigin::Horizontal),
            "xpoint" | "x-point" => Ok(AngleOrigin::Xpoint),
            other => Err(GeometryError::BadRegion(format!("origin {other}"))),
        }
    }
}

/// Circular separatrix with one X-point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatrixModel {
    /// (R, Z) of the magnetic axis, meters.
    pub center: [f64; 2],
    /// Minor radius of the separatrix, meters.
    pub radius: f64,
    /// Horizontal-convention angle of the X-point, radians.
    pub xpoint_angle: f64,
}

impl Default for SeparatrixModel {
    fn default() -> Self {
        SeparatrixModel {
            center: [1.7, 0.0],
            radius: 0.6,
            xpoint_angle: 1.5 * PI,
        }
    }
}

impl SeparatrixModel {
    pub fn new(center: [f64; 2], radius: f64, xpoint_angle: f64) -> Result<Self, GeometryError> {
        let model = SeparatrixModel {
            center,
            radius,
            xpoint_angle,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(GeometryError::BadRadius(self.radius));
        }
        check_angle("xpoint_angle", self.xpoint_angle)
    }

    /// Point on the separatrix at horizontal-convention angle `theta`.
    pub fn point_at(&self, theta: f64) -> [f64; 2] {
        [
            self.center[0] + self.radius * theta.cos(),
            self.center[1] + self.radius * theta.sin(),
        ]
    }

    pub fn xpoint(&self) -> [f64; 2] {
        self.point_at(self.xpoint_angle)
    }

    /// Re-express a horizontal-convention angle under `origin`.
    pub fn to_origin(&self, theta: f64, origin: AngleOrigin) -> f64 {
        match origin {
            AngleOrigin::Horizontal => wrap_angle(theta),
            AngleOrigin::Xpoint => wrap_angle(theta - self.xpoint_angle),
        }
    }

    /// Poloidal angle of `position` (R, Z) around the model center.
    pub fn poloidal_angle(&self, position: [f64; 2], origin: AngleOrigin) -> Result<f64, GeometryError> {
        let dr = position[0] - self.center[0];
        let dz = position[1] - self.center[1];
        if dr == 0.0 && dz == 0.0 {
            return Err(GeometryError::AtCenter);
        }
        Ok(self.to_origin(dz.atan2(dr), origin))
    }
}

fn check_angle(name: &'static str, value: f64) -> Result<(), GeometryError> {
    if value.is_finite() && (0.0..TAU).contains(&value) {
        Ok(())
    } else {
        Err(GeometryError::AngleOutOfRange { name, value })
    }
}

/// Quadrant and segment containing `angle`, which must lie in `[0, 2π)`.
///
/// Segments are half-open `[lo, hi)`; the last one also absorbs 2π itself.
pub fn region_of(angle: f64) -> (u8, u8) {
    let g = global_segment(angle);
    (
        (g / SEGMENTS_PER_QUADRANT as usize) as u8,
        (g % SEGMENTS_PER_QUADRANT as usize) as u8,
    )
}

/// Global segment index in `0..32`.
pub fn global_segment(angle: f64) -> usize {
    debug_assert!(angle >= 0.0, "angle {angle} below 0");
    let g = (angle / SEGMENT_WIDTH).floor();
    let mut g = if g <= 0.0 { 0 } else { (g as usize).min(TOTAL_SEGMENTS - 1) };
    // the quotient can round across a boundary; boundaries are g × width exactly
    if g + 1 < TOTAL_SEGMENTS && (g + 1) as f64 * SEGMENT_WIDTH <= angle {
        g += 1;
    } else if g > 0 && g as f64 * SEGMENT_WIDTH > angle {
        g -= 1;
    }
    g
}

/// Inclusive membership in `[lo, hi]`, wrapping through 0 when `lo > hi`.
pub fn in_angle_range(angle: f64, lo: f64, hi: f64) -> bool {
    if lo <= hi {
        lo <= angle && angle <= hi
    } else {
        angle >= lo || angle <= hi
    }
}

/// Distance-from-separatrix proxy, `|ψ − 1|`.
pub fn separatrix_distance(psi: f64) -> f64 {
    (psi - 1.0).abs()
}

/// A region of the separatrix over which diffusion statistics are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegionSpec {
    QuadrantSegment {
        quadrant: u8,
        segment: u8,
        origin: AngleOrigin,
    },
    AngleRange {
        lo: f64,
        hi: f64,
        origin: AngleOrigin,
    },
}

impl RegionSpec {
    pub fn segment(quadrant: u8, segment: u8, origin: AngleOrigin) -> Result<Self, GeometryError> {
        let spec = RegionSpec::QuadrantSegment {
            quadrant,
            segment,
            origin,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn angle_range(lo: f64, hi: f64, origin: AngleOrigin) -> Result<Self, GeometryError> {
        let spec = RegionSpec::AngleRange { lo, hi, origin };
        spec.validate()?;
        Ok(spec)
    }

    /// The eight segments of one quadrant (index 0..4).
    pub fn quadrant(quadrant: u8, origin: AngleOrigin) -> Result<Vec<Self>, GeometryError> {
        (0..SEGMENTS_PER_QUADRANT)
            .map(|s| RegionSpec::segment(quadrant, s, origin))
            .collect()
    }

    /// All 32 segments, in global index order.
    pub fn all_segments(origin: AngleOrigin) -> Vec<Self> {
        (0..QUADRANTS)
            .flat_map(|q| {
                (0..SEGMENTS_PER_QUADRANT).map(move |s| RegionSpec::QuadrantSegment {
                    quadrant: q,
                    segment: s,
                    origin,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            RegionSpec::QuadrantSegment { quadrant, segment, .. } => {
                if quadrant >= QUADRANTS {
                    return Err(GeometryError::BadQuadrant(quadrant));
                }
                if segment >= SEGMENTS_PER_QUADRANT {
                    return Err(GeometryError::BadSegment(segment));
                }
                Ok(())
            }
            RegionSpec::AngleRange { lo, hi, .. } => {
                check_angle("angle_lo", lo)?;
                check_angle("angle_hi", hi)?;
                if lo == hi {
                    return Err(GeometryError::EmptyRange(lo));
                }
                Ok(())
            }
        }
    }

    pub fn origin(&self) -> AngleOrigin {
        match *self {
            RegionSpec::QuadrantSegment { origin, .. } | RegionSpec::AngleRange { origin, .. } => origin,
        }
    }

    /// Membership test for an angle already expressed under this region's origin.
    pub fn contains(&self, angle: f64) -> bool {
        match *self {
            RegionSpec::QuadrantSegment { quadrant, segment, .. } => region_of(angle) == (quadrant, segment),
            RegionSpec::AngleRange { lo, hi, .. } => in_angle_range(angle, lo, hi),
        }
    }

    /// Membership test for a horizontal-convention angle.
    pub fn contains_theta(&self, model: &SeparatrixModel, theta: f64) -> bool {
        self.contains(model.to_origin(theta, self.origin()))
    }

    /// Angular extent `(lo, hi)` under the region's origin.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            RegionSpec::QuadrantSegment { quadrant, segment, .. } => {
                let g = (quadrant * SEGMENTS_PER_QUADRANT + segment) as f64;
                (g * SEGMENT_WIDTH, (g + 1.0) * SEGMENT_WIDTH)
            }
            RegionSpec::AngleRange { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RegionSpec::QuadrantSegment { .. } => "quadrant-segment",
            RegionSpec::AngleRange { .. } => "angle-range",
        }
    }
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RegionSpec::QuadrantSegment {
                quadrant,
                segment,
                origin,
            } => write!(f, "q{quadrant}s{segment}@{origin}"),
            RegionSpec::AngleRange { lo, hi, origin } => {
                write!(f, "[{:.4}π,{:.4}π]@{origin}", lo / PI, hi / PI)
            }
        }
    }
}

/// Parse a region selector.
///
/// Accepted forms: `quadrant=Q` with Q the 1-based quadrant ordinal (1..=4),
/// `quadrant=all` for all 32 segments, and `angles=LO,HI` where each bound is
/// radians, optionally with a `pi` suffix (`0.2pi`).
pub fn parse_regions(text: &str, origin: AngleOrigin) -> Result<Vec<RegionSpec>, GeometryError> {
    let bad = || GeometryError::BadRegion(text.to_string());
    let (key, value) = text.split_once('=').ok_or_else(bad)?;
    match key.trim() {
        "quadrant" => {
            let value = value.trim();
            if value.eq_ignore_ascii_case("all") {
                return Ok(RegionSpec::all_segments(origin));
            }
            let ordinal: u8 = value.parse().map_err(|_| bad())?;
            if !(1..=QUADRANTS).contains(&ordinal) {
                return Err(bad());
            }
            RegionSpec::quadrant(ordinal - 1, origin)
        }
        "angles" => {
            let (lo, hi) = value.split_once(',').ok_or_else(bad)?;
            let lo = parse_angle(lo).ok_or_else(bad)?;
            let hi = parse_angle(hi).ok_or_else(bad)?;
            Ok(vec![RegionSpec::angle_range(lo, hi, origin)?])
        }
        _ => Err(bad()),
    }
}

fn parse_angle(text: &str) -> Option<f64> {
    let t = text.trim().to_ascii_lowercase();
    if let Some(coef) = t.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*');
        if coef.is_empty() {
            return Some(PI);
        }
        coef.parse::<f64>().ok().map(|c| c * PI)
    } else {
        t.parse().ok()
    }
}
