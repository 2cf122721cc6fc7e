//! Weighted displacement statistics and diffusion coefficients per region.
//!
//! For a region, property `p` and step `N`:
//!
//! ```text
//! Δ    = p(N) − p(0)
//! M    = Σ Δ·w0 / Σ w0
//! MSQ  = Σ Δ²·w0 / Σ w0
//! msd  = MSQ − M²
//! d    = msd / (dt · N)          (further divided by dpdrs² for ψ)
//! ```
//!
//! Sums run over particles present at steps 0 and N whose weight `w0(N)` is
//! not the unwanted marker. Region membership is decided once, from the
//! step-0 poloidal angle.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, RegionSpec, SeparatrixModel};
use crate::source::{Species, UNWANTED_WEIGHT};
use crate::staging::frame::{THETA, W0};
use crate::trajstore::TrajectoryDataset;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("trajectory dataset lacks property '{0}'")]
    MissingProperty(String),
}

/// Properties diffusion can be computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "psi")]
    Psi,
    #[serde(rename = "E")]
    E,
    #[serde(rename = "vPar")]
    VPar,
    #[serde(rename = "r")]
    R,
}

impl Property {
    pub const ALL: [Property; 4] = [Property::Psi, Property::E, Property::VPar, Property::R];

    /// Column name in frames and trajectory files.
    pub fn name(self) -> &'static str {
        match self {
            Property::Psi => "psi",
            Property::E => "E",
            Property::VPar => "vPar",
            Property::R => "r",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = DiffusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "psi" => Ok(Property::Psi),
            "E" => Ok(Property::E),
            "vPar" => Ok(Property::VPar),
            "r" => Ok(Property::R),
            other => Err(DiffusionError::Config(format!(
                "unknown property '{other}' (expected psi, E, vPar or r)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub regions: Vec<RegionSpec>,
    pub properties: Vec<Property>,
    /// Seconds per step.
    pub dt: f64,
    /// One positive scale per region, applied to ψ only. Empty means 1.0 everywhere.
    pub dpdrs: Vec<f64>,
    pub model: SeparatrixModel,
}

impl DiffusionConfig {
    pub fn new(regions: Vec<RegionSpec>, properties: Vec<Property>, dt: f64) -> Self {
        DiffusionConfig {
            regions,
            properties,
            dt,
            dpdrs: Vec::new(),
            model: SeparatrixModel::default(),
        }
    }

    pub fn dpdrs_for(&self, region: usize) -> f64 {
        self.dpdrs.get(region).copied().unwrap_or(1.0)
    }

    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            out.push(("dt".into(), format!("must be finite and > 0, got {}", self.dt)));
        }
        if self.regions.is_empty() {
            out.push(("regions".into(), "at least one region is required".into()));
        }
        for (k, r) in self.regions.iter().enumerate() {
            if let Err(e) = r.validate() {
                out.push((format!("regions[{k}]"), e.to_string()));
            }
        }
        if self.properties.is_empty() {
            out.push(("properties".into(), "at least one property is required".into()));
        }
        let mut seen = self.properties.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            out.push(("properties".into(), "listed more than once".into()));
        }
        if !self.dpdrs.is_empty() && self.dpdrs.len() != self.regions.len() {
            out.push((
                "dpdrs".into(),
                format!("{} values for {} regions", self.dpdrs.len(), self.regions.len()),
            ));
        }
        for (k, v) in self.dpdrs.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                out.push((format!("dpdrs[{k}]"), format!("must be finite and > 0, got {v}")));
            }
        }
        if let Err(e) = self.model.validate() {
            out.push(("geometry".into(), e.to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            let text: Vec<String> = issues.into_iter().map(|(f, m)| format!("{f}: {m}")).collect();
            Err(DiffusionError::Config(text.join("; ")))
        }
    }
}

fn column(ds: &TrajectoryDataset, name: &str) -> Result<usize, DiffusionError> {
    ds.property_index(name)
        .ok_or_else(|| DiffusionError::MissingProperty(name.to_string()))
}

/// Rows of `ds` in each region, by step-0 angle. Rows ascend, so ids do too.
pub fn assign_regions(
    ds: &TrajectoryDataset,
    model: &SeparatrixModel,
    regions: &[RegionSpec],
) -> Result<Vec<Vec<usize>>, DiffusionError> {
    let theta = column(ds, THETA)?;
    let mut out = vec![Vec::new(); regions.len()];
    if ds.steps() == 0 {
        return Ok(out);
    }
    for row in 0..ds.particles() {
        if !ds.present(row, 0) {
            continue;
        }
        let t0 = ds.value(theta, row, 0);
        for (k, region) in regions.iter().enumerate() {
            if region.contains_theta(model, t0) {
                out[k].push(row);
            }
        }
    }
    Ok(out)
}

/// `p(N) − p(0)`, or `None` when either sample is absent.
pub fn displacement(ds: &TrajectoryDataset, property: usize, row: usize, step: usize) -> Option<f64> {
    if ds.present(row, 0) && ds.present(row, step) {
        Some(ds.value(property, row, step) - ds.value(property, row, 0))
    } else {
        None
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }
}

/// Numerator and denominator sums of the weighted moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSums {
    pub w: CompensatedSum,
    pub wd: CompensatedSum,
    pub wd2: CompensatedSum,
    pub n: u64,
    /// Every contributing weight was strictly positive.
    pub all_positive: bool,
}

impl Default for RawSums {
    fn default() -> Self {
        RawSums {
            w: CompensatedSum::default(),
            wd: CompensatedSum::default(),
            wd2: CompensatedSum::default(),
            n: 0,
            all_positive: true,
        }
    }
}

impl RawSums {
    /// Add one particle. The unwanted marker weight is skipped.
    pub fn add(&mut self, delta: f64, w0: f64) {
        if w0 == UNWANTED_WEIGHT {
            return;
        }
        self.w.add(w0);
        self.wd.add(w0 * delta);
        self.wd2.add(w0 * delta * delta);
        self.n += 1;
        self.all_positive &= w0 > 0.0;
    }

    pub fn merge(&mut self, other: &RawSums) {
        self.w.merge(&other.w);
        self.wd.merge(&other.wd);
        self.wd2.merge(&other.wd2);
        self.n += other.n;
        self.all_positive &= other.all_positive;
    }

    pub fn moments(&self) -> Moments {
        let w_sum = self.w.value();
        let (m, msq) = if w_sum == 0.0 {
            (None, None)
        } else {
            (Some(self.wd.value() / w_sum), Some(self.wd2.value() / w_sum))
        };
        Moments {
            m,
            msq,
            w_sum,
            n_eff: self.n,
            all_positive: self.all_positive,
        }
    }
}

/// Weighted moments of one (region, property, step); `None` marks a gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m: Option<f64>,
    pub msq: Option<f64>,
    pub w_sum: f64,
    pub n_eff: u64,
    pub all_positive: bool,
}

impl Moments {
    /// `MSQ − M²`. With only positive weights the result is a variance, so
    /// cancellation residue below zero is clamped away.
    pub fn msd(&self) -> Option<f64> {
        let (m, msq) = (self.m?, self.msq?);
        let v = msq - m * m;
        Some(if self.all_positive { v.max(0.0) } else { v })
    }
}

/// Sums for `rows` (ascending) of `property` at `step`.
pub fn raw_sums(ds: &TrajectoryDataset, rows: &[usize], property: usize, w0: usize, step: usize) -> RawSums {
    let mut sums = RawSums::default();
    for &row in rows {
        if let Some(delta) = displacement(ds, property, row, step) {
            sums.add(delta, ds.value(w0, row, step));
        }
    }
    sums
}

pub fn weighted_moments(
    ds: &TrajectoryDataset,
    rows: &[usize],
    property: Property,
    step: usize,
) -> Result<Moments, DiffusionError> {
    let p = column(ds, property.name())?;
    let w0 = column(ds, W0)?;
    Ok(raw_sums(ds, rows, p, w0, step).moments())
}

/// `(MSQ − M²) / (dt · N)`, with the extra `dpdrs²` divisor for ψ.
pub fn diffusion_coefficient(m: f64, msq: f64, property: Property, step: u64, dt: f64, dpdrs: f64) -> f64 {
    let d = (msq - m * m) / (dt * step as f64);
    match property {
        Property::Psi => d / (dpdrs * dpdrs),
        _ => d,
    }
}

/// One (region, property, step) sample of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub region: usize,
    pub property: Property,
    pub step: u64,
    pub time_s: f64,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    #[serde(rename = "MSQ")]
    pub msq: Option<f64>,
    pub msd: Option<f64>,
    pub d: Option<f64>,
    pub n_eff: u64,
    pub w_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSeries {
    pub species: Species,
    pub dt: f64,
    pub regions: Vec<RegionSpec>,
    /// Particles assigned to each region.
    pub region_counts: Vec<usize>,
    pub properties: Vec<Property>,
    /// Steps 1..S−1.
    pub steps: usize,
    /// Ordered by region, then property, then step.
    pub points: Vec<SeriesPoint>,
}

impl DiffusionSeries {
    pub fn get(&self, region: usize, property: Property, step: u64) -> Option<&SeriesPoint> {
        let p = self.properties.iter().position(|&q| q == property)?;
        if step == 0 || step as usize > self.steps || region >= self.regions.len() {
            return None;
        }
        let idx = (region * self.properties.len() + p) * self.steps + (step as usize - 1);
        self.points.get(idx)
    }
}

fn point(
    region: usize,
    property: Property,
    step: usize,
    time_s: f64,
    moments: &Moments,
    dt: f64,
    dpdrs: f64,
) -> SeriesPoint {
    let msd = moments.msd();
    let d = msd.map(|v| {
        let d = v / (dt * step as f64);
        match property {
            Property::Psi => d / (dpdrs * dpdrs),
            _ => d,
        }
    });
    SeriesPoint {
        region,
        property,
        step: step as u64,
        time_s,
        m: moments.m,
        msq: moments.msq,
        msd,
        d,
        n_eff: moments.n_eff,
        w_sum: moments.w_sum,
    }
}

/// Full (region × property × step) grid. Regions are processed in parallel;
/// each region's sums are sequential in id order, so the output does not
/// depend on scheduling.
pub fn compute_series(ds: &TrajectoryDataset, config: &DiffusionConfig) -> Result<DiffusionSeries, DiffusionError> {
    config.validate()?;
    let cols: Vec<usize> = config
        .properties
        .iter()
        .map(|p| column(ds, p.name()))
        .collect::<Result<_, _>>()?;
    let w0 = column(ds, W0)?;
    let members = assign_regions(ds, &config.model, &config.regions)?;
    let steps = ds.steps().saturating_sub(1);

    let per_region: Vec<Vec<SeriesPoint>> = members
        .par_iter()
        .enumerate()
        .map(|(k, rows)| {
            let mut out = Vec::with_capacity(cols.len() * steps);
            for (&prop, &col) in config.properties.iter().zip(&cols) {
                for step in 1..=steps {
                    let moments = raw_sums(ds, rows, col, w0, step).moments();
                    out.push(point(k, prop, step, ds.times[step], &moments, config.dt, config.dpdrs_for(k)));
                }
            }
            out
        })
        .collect();

    Ok(DiffusionSeries {
        species: ds.species,
        dt: config.dt,
        regions: config.regions.clone(),
        region_counts: members.iter().map(Vec::len).collect(),
        properties: config.properties.clone(),
        steps,
        points: per_region.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AngleOrigin;
    use crate::trajstore::Presence;
    use proptest::prelude::*;

    /// Dataset with properties theta, E, psi, w0 from per-particle series.
    fn dataset(theta0: &[f64], e: &[Vec<f64>], w: &[Vec<f64>]) -> TrajectoryDataset {
        let p = e.len();
        let s = e[0].len();
        let mut presence = Presence::new(p, s);
        let mut vals = vec![Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for row in 0..p {
            for step in 0..s {
                presence.set(row, step, !e[row][step].is_nan());
                vals[0].push(theta0[row]);
                vals[1].push(e[row][step]);
                vals[2].push(e[row][step]);
                vals[3].push(w[row][step]);
            }
        }
        TrajectoryDataset {
            species: Species::Electron,
            dt: 1.0,
            ids: (0..p as u64).map(|i| i * 3 + 1).collect(),
            times: (0..s).map(|i| i as f64).collect(),
            presence,
            properties: vec!["theta".into(), "E".into(), "psi".into(), "w0".into()],
            values: vals,
        }
    }

    #[test]
    fn two_particle_moments() {
        let ds = dataset(&[0.1, 0.2], &[vec![5.0, 6.0], vec![5.0, 4.0]], &[vec![1.0; 2], vec![1.0; 2]]);
        let m = weighted_moments(&ds, &[0, 1], Property::E, 1).unwrap();
        assert_eq!(m.m, Some(0.0));
        assert_eq!(m.msq, Some(1.0));
        assert_eq!(m.n_eff, 2);
    }

    #[test]
    fn single_particle_weight_cancels() {
        let ds = dataset(&[0.1], &[vec![1.0, 4.0]], &[vec![2.0, 2.0]]);
        let m = weighted_moments(&ds, &[0], Property::E, 1).unwrap();
        assert_eq!((m.m, m.msq), (Some(3.0), Some(9.0)));
    }

    #[test]
    fn unwanted_is_excluded_and_zero_weight_is_a_gap() {
        let ds = dataset(
            &[0.1, 0.1],
            &[vec![1.0, 4.0], vec![1.0, 100.0]],
            &[vec![2.0, 2.0], vec![1.0, -1.0]],
        );
        let m = weighted_moments(&ds, &[0, 1], Property::E, 1).unwrap();
        assert_eq!((m.m, m.n_eff), (Some(3.0), 1));
        let ds = dataset(&[0.1], &[vec![1.0, 4.0]], &[vec![0.0, 0.0]]);
        let m = weighted_moments(&ds, &[0], Property::E, 1).unwrap();
        assert_eq!((m.m, m.msq, m.msd()), (None, None, None));
    }

    #[test]
    fn displacement_cases() {
        let ds = dataset(&[0.1, 0.1], &[vec![5.0, 7.5, 5.0], vec![1.0, f64::NAN, f64::NAN]], &[vec![1.0; 3], vec![1.0; 3]]);
        let e = ds.property_index("E").unwrap();
        assert_eq!(displacement(&ds, e, 0, 1), Some(2.5));
        assert_eq!(displacement(&ds, e, 0, 2), Some(0.0));
        assert_eq!(displacement(&ds, e, 1, 1), None);
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(diffusion_coefficient(0.0, 4.0, Property::E, 8, 0.5, 1.0), 1.0);
        assert_eq!(diffusion_coefficient(0.0, 4.0, Property::Psi, 8, 0.5, 2.0), 0.25);
        assert_eq!(diffusion_coefficient(2.0, 4.0, Property::VPar, 3, 1.0, 1.0), 0.0);
    }

    #[test]
    fn region_assignment_by_initial_angle() {
        let ds = dataset(&[0.05, 3.3, 6.2], &[vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]], &vec![vec![1.0; 2]; 3]);
        let model = SeparatrixModel::default();
        let all = RegionSpec::all_segments(AngleOrigin::Horizontal);
        let members = assign_regions(&ds, &model, &all).unwrap();
        assert_eq!(members[0], vec![0]);
        assert_eq!(members.iter().map(Vec::len).sum::<usize>(), 3);
    }

    #[test]
    fn series_matches_single_calls_and_frozen_is_zero() {
        let ds = dataset(
            &[0.3, 0.4, 0.5],
            &[vec![1.0, 1.5, 2.5], vec![2.0, 1.0, 0.0], vec![3.0, 3.0, 3.0]],
            &[vec![1.0, 2.0, 0.5], vec![1.0; 3], vec![1.0, 1.0, 3.0]],
        );
        let region = RegionSpec::angle_range(0.0, 1.0, AngleOrigin::Horizontal).unwrap();
        let mut cfg = DiffusionConfig::new(vec![region], vec![Property::E, Property::Psi], 0.5);
        cfg.dpdrs = vec![2.0];
        let series = compute_series(&ds, &cfg).unwrap();
        assert_eq!(series.points.len(), 2 * 2);
        let last = series.get(0, Property::Psi, 2).unwrap();
        let m = weighted_moments(&ds, &[0, 1, 2], Property::Psi, 2).unwrap();
        let d = diffusion_coefficient(m.m.unwrap(), m.msq.unwrap(), Property::Psi, 2, 0.5, 2.0);
        assert_eq!(last.m, m.m);
        assert!((last.d.unwrap() - d).abs() <= 1e-15 * d.abs());

        let frozen = dataset(&[0.3, 0.4], &[vec![7.0; 4], vec![9.0; 4]], &vec![vec![1.0; 4]; 2]);
        let s = compute_series(&frozen, &DiffusionConfig::new(vec![region], vec![Property::E], 1.0)).unwrap();
        assert!(s.points.iter().all(|p| p.msd == Some(0.0) && p.d == Some(0.0)));
    }

    #[test]
    fn config_issues() {
        let mut cfg = DiffusionConfig::new(vec![], vec![Property::E, Property::E], 0.0);
        cfg.dpdrs = vec![-1.0];
        let fields: Vec<String> = cfg.issues().into_iter().map(|(f, _)| f).collect();
        for f in ["dt", "regions", "properties", "dpdrs", "dpdrs[0]"] {
            assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-50.0f64..50.0, n),
                prop::collection::vec(0.01f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn weight_scale_invariance((d, w) in instance(), c in 0.01f64..100.0) {
            let mut a = RawSums::default();
            let mut b = RawSums::default();
            for (x, wi) in d.iter().zip(&w) {
                a.add(*x, *wi);
                b.add(*x, wi * c);
            }
            let (ma, mb) = (a.moments(), b.moments());
            let tol = |x: f64| 1e-9 * (1.0 + x.abs());
            prop_assert!((ma.m.unwrap() - mb.m.unwrap()).abs() <= tol(ma.m.unwrap()));
            prop_assert!((ma.msq.unwrap() - mb.msq.unwrap()).abs() <= tol(ma.msq.unwrap()));
            prop_assert!(ma.msd().unwrap() >= 0.0);
        }

        #[test]
        fn translation_leaves_outputs_unchanged(shift in -1e3f64..1e3, e in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 4), 1..6)) {
            let n = e.len();
            let shifted: Vec<Vec<f64>> = e.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
            let w = vec![vec![1.0; 4]; n];
            let region = RegionSpec::angle_range(0.0, 1.0, AngleOrigin::Horizontal).unwrap();
            let cfg = DiffusionConfig::new(vec![region], vec![Property::E], 1.0);
            let a = compute_series(&dataset(&vec![0.5; n], &e, &w), &cfg).unwrap();
            let b = compute_series(&dataset(&vec![0.5; n], &shifted, &w), &cfg).unwrap();
            for (x, y) in a.points.iter().zip(&b.points) {
                prop_assert!((x.msd.unwrap() - y.msd.unwrap()).abs() <= 1e-9 * (1.0 + shift.abs()));
            }
        }

        #[test]
        fn raw_sums_add_over_disjoint_sets((d, w) in instance(), split in 0usize..12) {
            let k = split.min(d.len());
            let mut a = RawSums::default();
            let mut b = RawSums::default();
            let mut all = RawSums::default();
            for (i, (x, wi)) in d.iter().zip(&w).enumerate() {
                if i < k { a.add(*x, *wi) } else { b.add(*x, *wi) }
                all.add(*x, *wi);
            }
            a.merge(&b);
            let close = |p: f64, q: f64| (p - q).abs() <= 1e-9 * (1.0 + p.abs());
            prop_assert!(close(a.w.value(), all.w.value()));
            prop_assert!(close(a.wd.value(), all.wd.value()));
            prop_assert!(close(a.wd2.value(), all.wd2.value()));
            prop_assert_eq!(a.n, all.n);
        }
    }
}
