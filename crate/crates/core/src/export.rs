//! Plot-ready CSV and JSON exports of a diffusion series.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::diffusion::{DiffusionSeries, Property, SeriesPoint};
use crate::geometry::{AngleOrigin, RegionSpec};
use crate::source::Species;
use crate::Error;

/// CSV header, in output order.
pub const CSV_COLUMNS: [&str; 15] = [
    "species",
    "region_kind",
    "quadrant",
    "segment",
    "angle_lo",
    "angle_hi",
    "property",
    "step",
    "time_s",
    "M",
    "MSQ",
    "msd",
    "d",
    "n_eff",
    "w_sum",
];

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One CSV record per series point, in series order.
pub fn csv_records(series: &DiffusionSeries) -> Vec<[String; 15]> {
    series
        .points
        .iter()
        .map(|p| {
            let region = &series.regions[p.region];
            let (quadrant, segment) = match *region {
                RegionSpec::QuadrantSegment { quadrant, segment, .. } => (quadrant.to_string(), segment.to_string()),
                RegionSpec::AngleRange { .. } => (String::new(), String::new()),
            };
            let (lo, hi) = region.bounds();
            [
                series.species.to_string(),
                region.kind_name().to_string(),
                quadrant,
                segment,
                fmt_f64(lo),
                fmt_f64(hi),
                p.property.to_string(),
                p.step.to_string(),
                fmt_f64(p.time_s),
                opt(p.m),
                opt(p.msq),
                opt(p.msd),
                opt(p.d),
                p.n_eff.to_string(),
                fmt_f64(p.w_sum),
            ]
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_csv(series: &DiffusionSeries, path: &Path) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
    for rec in csv_records(series) {
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RegionEntry {
    index: usize,
    kind: &'static str,
    quadrant: Option<u8>,
    segment: Option<u8>,
    angle_lo: f64,
    angle_hi: f64,
    origin: AngleOrigin,
    particles: usize,
}

#[derive(Serialize)]
struct SeriesDocument<'a> {
    species: Species,
    dt: f64,
    steps: usize,
    properties: &'a [Property],
    regions: Vec<RegionEntry>,
    points: &'a [SeriesPoint],
}

pub fn series_json(series: &DiffusionSeries) -> String {
    let regions = series
        .regions
        .iter()
        .zip(&series.region_counts)
        .enumerate()
        .map(|(index, (r, &particles))| {
            let (quadrant, segment) = match *r {
                RegionSpec::QuadrantSegment { quadrant, segment, .. } => (Some(quadrant), Some(segment)),
                RegionSpec::AngleRange { .. } => (None, None),
            };
            let (angle_lo, angle_hi) = r.bounds();
            RegionEntry {
                index,
                kind: r.kind_name(),
                quadrant,
                segment,
                angle_lo,
                angle_hi,
                origin: r.origin(),
                particles,
            }
        })
        .collect();
    let doc = SeriesDocument {
        species: series.species,
        dt: series.dt,
        steps: series.steps,
        properties: &series.properties,
        regions,
        points: &series.points,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("series serializes");
    text.push('\n');
    text
}

pub fn write_json(series: &DiffusionSeries, path: &Path) -> Result<(), Error> {
    fs::write(path, series_json(series)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> DiffusionSeries {
        let regions = vec![
            RegionSpec::segment(3, 1, AngleOrigin::Xpoint).unwrap(),
            RegionSpec::angle_range(0.2 * std::f64::consts::PI, 0.9 * std::f64::consts::PI, AngleOrigin::Horizontal)
                .unwrap(),
        ];
        let point = |region, m: Option<f64>| SeriesPoint {
            region,
            property: Property::E,
            step: 1,
            time_s: 0.1,
            m,
            msq: m.map(|v| v * v + 0.1),
            msd: m.map(|_| 0.1),
            d: m.map(|_| 1.0 / 3.0),
            n_eff: 3,
            w_sum: 3.0,
        };
        DiffusionSeries {
            species: Species::Ion,
            dt: 0.1,
            regions,
            region_counts: vec![3, 0],
            properties: vec![Property::E],
            steps: 1,
            points: vec![point(0, Some(0.7)), point(1, None)],
        }
    }

    #[test]
    fn csv_layout() {
        let recs = csv_records(&series());
        assert_eq!(recs[0][..4], ["ion", "quadrant-segment", "3", "1"]);
        assert_eq!(recs[1][1], "angle-range");
        assert_eq!((recs[1][2].as_str(), recs[1][3].as_str()), ("", ""));
        assert_eq!(recs[1][9], "");
        assert_eq!(recs[0][12].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn json_uses_null_for_gaps() {
        let v: serde_json::Value = serde_json::from_str(&series_json(&series())).unwrap();
        assert!(v["points"][1]["M"].is_null());
        assert_eq!(v["regions"][0]["quadrant"], 3);
        assert_eq!(v["regions"][1]["particles"], 0);
    }
}
