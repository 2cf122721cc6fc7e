//! Run configuration: one TOML document for a whole run.
//!
//! ```toml
//! [source]            # settings shared by every species
//! n_particles = 1000
//! n_steps = 100
//!
//! [species.electron]  # per-species overrides; one stream per table
//! sigma_e = 0.1
//!
//! [species.ion]
//! seed = 11
//!
//! [geometry]
//! [staging]
//! [pipeline]
//! [diffusion]
//! [output]
//! ```
//!
//! Without a `[species]` table the `[source]` table alone describes a single
//! stream. Unknown keys anywhere are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{DiffusionConfig, Property};
use crate::geometry::{parse_regions, AngleOrigin, RegionSpec, SeparatrixModel};
use crate::pipeline::PipelineConfig;
use crate::source::{SourceConfig, Species};
use crate::staging::frame::{ID, SEP_FLAG, THETA, W0};
use crate::staging::StageEndpoint;
use crate::Error;

fn default_properties() -> Vec<Property> {
    vec![Property::Psi, Property::E, Property::VPar]
}
fn default_regions() -> Vec<String> {
    vec!["quadrant=4".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSection {
    #[serde(default = "default_properties")]
    pub properties: Vec<Property>,
    /// Region selectors (`quadrant=Q`, `quadrant=all`, `angles=LO,HI`), concatenated in order.
    #[serde(default = "default_regions")]
    pub regions: Vec<String>,
    #[serde(default)]
    pub origin: AngleOrigin,
    /// ψ normalisation per region; a single value applies to all regions.
    #[serde(default)]
    pub dpdrs: Vec<f64>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            properties: default_properties(),
            regions: default_regions(),
            origin: AngleOrigin::default(),
            dpdrs: Vec::new(),
        }
    }
}

impl DiffusionSection {
    pub fn region_specs(&self) -> Result<Vec<RegionSpec>, Error> {
        let mut out = Vec::new();
        for text in &self.regions {
            out.extend(parse_regions(text, self.origin)?);
        }
        Ok(out)
    }

    /// Diffusion settings for a trajectory sampled every `dt` seconds.
    pub fn to_config(&self, model: SeparatrixModel, dt: f64) -> Result<DiffusionConfig, Error> {
        let regions = self.region_specs()?;
        let dpdrs = match self.dpdrs.as_slice() {
            [v] => vec![*v; regions.len()],
            other => other.to_vec(),
        };
        let cfg = DiffusionConfig {
            regions,
            properties: self.properties.clone(),
            dt,
            dpdrs,
            model,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    source: toml::Table,
    #[serde(default)]
    species: BTreeMap<String, toml::Table>,
    #[serde(default)]
    geometry: Option<SeparatrixModel>,
    #[serde(default)]
    staging: StageEndpoint,
    #[serde(default)]
    pipeline: PipelineConfig,
    #[serde(default)]
    diffusion: DiffusionSection,
    #[serde(default)]
    output: OutputSection,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// One source per stream, electron before ion.
    pub sources: Vec<SourceConfig>,
    pub geometry: SeparatrixModel,
    pub staging: StageEndpoint,
    pub pipeline: PipelineConfig,
    pub diffusion: DiffusionSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sources: vec![SourceConfig::default()],
            geometry: SeparatrixModel::default(),
            staging: StageEndpoint::default(),
            pipeline: PipelineConfig::default(),
            diffusion: DiffusionSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Sizing figures derived from a configuration without running it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesEstimate {
    pub species: Species,
    pub steps: u64,
    /// Expected seed-set size from the ψ band and selection threshold.
    pub seed_estimate: f64,
    /// Records in the largest frame (the last one, with growth).
    pub max_frame_records: usize,
    /// Upper bound on records held by the analysis side at once.
    pub retained_bound_records: f64,
    pub retained_bound_bytes: f64,
    pub trajectory_bytes: f64,
}

fn source_from_table(table: toml::Table, label: &str) -> Result<SourceConfig, Error> {
    SourceConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(format!("{label}: {e}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut sources = Vec::new();
        if raw.species.is_empty() {
            sources.push(source_from_table(raw.source, "source")?);
        } else {
            for (key, overrides) in &raw.species {
                let species: Species = key
                    .parse()
                    .map_err(|_| Error::Config(format!("species.{key}: unknown species (expected electron or ion)")))?;
                if overrides.contains_key("species") {
                    return Err(Error::Config(format!(
                        "species.{key}: 'species' is implied by the table name"
                    )));
                }
                let mut table = raw.source.clone();
                table.extend(overrides.clone());
                table.insert("species".into(), toml::Value::String(species.name().into()));
                sources.push(source_from_table(table, &format!("species.{key}"))?);
            }
            sources.sort_by_key(|s| s.species.code());
        }
        Ok(RunConfig {
            sources,
            geometry: raw.geometry.unwrap_or_default(),
            staging: raw.staging,
            pipeline: raw.pipeline,
            diffusion: raw.diffusion,
            output: raw.output,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn source_label(&self, s: &SourceConfig) -> String {
        if self.sources.len() > 1 {
            format!("species.{}", s.species)
        } else {
            "source".into()
        }
    }

    /// Every violated invariant, as `(field path, message)` pairs.
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.sources.is_empty() {
            out.push(("species".into(), "no stream configured".into()));
        }
        for s in &self.sources {
            let label = self.source_label(s);
            out.extend(s.issues().into_iter().map(|(f, m)| (format!("{label}.{f}"), m)));
            if self.pipeline.worker_count > s.n_particles {
                out.push((
                    "pipeline.worker_count".into(),
                    format!(
                        "{} workers exceed {label}.n_particles = {}; every worker needs at least one seed particle",
                        self.pipeline.worker_count, s.n_particles
                    ),
                ));
            }
        }
        out.extend(self.pipeline.issues().into_iter().map(|(f, m)| (format!("pipeline.{f}"), m)));
        out.extend(self.staging.issues().into_iter().map(|(f, m)| (format!("staging.{f}"), m)));
        if let Err(e) = self.geometry.validate() {
            out.push(("geometry".into(), e.to_string()));
        }

        let frame_props = self.staging.frame_properties();
        let mut required = vec![ID, THETA, W0, SEP_FLAG];
        required.extend(self.diffusion.properties.iter().map(|p| p.name()));
        if self.staging.properties.is_some() {
            for name in required {
                if !frame_props.contains(&name) {
                    out.push(("staging.properties".into(), format!("must include '{name}'")));
                }
            }
        }

        match self.diffusion.region_specs() {
            Err(e) => out.push(("diffusion.regions".into(), e.to_string())),
            Ok(regions) => {
                let dpdrs = &self.diffusion.dpdrs;
                if dpdrs.len() > 1 && dpdrs.len() != regions.len() {
                    out.push((
                        "diffusion.dpdrs".into(),
                        format!("{} values for {} regions", dpdrs.len(), regions.len()),
                    ));
                }
                let dt = self.sources.first().map_or(1.0, |s| s.dt);
                let probe = DiffusionConfig {
                    regions,
                    properties: self.diffusion.properties.clone(),
                    dt: if dt.is_finite() && dt > 0.0 { dt } else { 1.0 },
                    dpdrs: Vec::new(),
                    model: self.geometry,
                };
                out.extend(
                    probe
                        .issues()
                        .into_iter()
                        .filter(|(f, _)| f != "dt" && f != "geometry")
                        .map(|(f, m)| (format!("diffusion.{f}"), m)),
                );
            }
        }
        for (k, v) in self.diffusion.dpdrs.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                out.push((format!("diffusion.dpdrs[{k}]"), format!("must be finite and > 0, got {v}")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), Error> {
        let issues = self.issues();
        if issues.is_empty() {
            return Ok(());
        }
        let lines: Vec<String> = issues.into_iter().map(|(f, m)| format!("  {f}: {m}")).collect();
        Err(Error::Config(format!("invalid configuration:\n{}", lines.join("\n"))))
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration,
    /// leaving out where outputs are written.
    pub fn digest(&self) -> String {
        let computed = RunConfig {
            output: OutputSection { dir: PathBuf::new() },
            ..self.clone()
        };
        let json = serde_json::to_vec(&computed).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn estimates(&self) -> Vec<SpeciesEstimate> {
        let props = self.staging.frame_properties().len() as f64;
        let float_props = props - 1.0;
        self.sources
            .iter()
            .map(|s| {
                let t = self.pipeline.threshold;
                let [lo, hi] = s.psi_band;
                let fraction = if hi > lo {
                    ((hi.min(1.0 + t) - lo.max(1.0 - t)) / (hi - lo)).clamp(0.0, 1.0)
                } else if (lo - 1.0).abs() <= t {
                    1.0
                } else {
                    0.0
                };
                let seeds = fraction * s.n_particles as f64;
                let max_frame = s.n_particles + s.n_steps as usize * s.new_per_step();
                let bound = seeds + max_frame as f64;
                let steps = s.n_steps + 1;
                SpeciesEstimate {
                    species: s.species,
                    steps,
                    seed_estimate: seeds,
                    max_frame_records: max_frame,
                    retained_bound_records: bound,
                    retained_bound_bytes: bound * props * 8.0,
                    trajectory_bytes: seeds * (8.0 + steps as f64 * (float_props * 8.0 + 0.125)),
                }
            })
            .collect()
    }
}
