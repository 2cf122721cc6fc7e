//! Synthetic particle source standing in for the gyrokinetic code.
//!
//! Each particle performs independent Gaussian random walks in ψ, energy and
//! parallel velocity. Particles that drift past `loss_psi` are flagged with
//! `w0 = -1` for exactly one step and then removed. New particles can be
//! tagged every step to model a growing tracked population.

use std::f64::consts::TAU;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{separatrix_distance, wrap_angle};

/// Weight value marking a particle as unwanted for diffusion statistics.
pub const UNWANTED_WEIGHT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    #[default]
    Electron,
    Ion,
}

impl Species {
    pub fn code(self) -> u8 {
        match self {
            Species::Electron => 0,
            Species::Ion => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Species::Electron),
            1 => Some(Species::Ion),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::Electron => "electron",
            Species::Ion => "ion",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Species {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "electron" => Ok(Species::Electron),
            "ion" => Ok(Species::Ion),
            other => Err(format!("unknown species '{other}'")),
        }
    }
}

/// One particle's state at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleRecord {
    pub id: u64,
    /// Normalized poloidal flux; 1.0 on the separatrix.
    pub psi: f64,
    /// Poloidal angle, horizontal convention.
    pub theta: f64,
    /// Toroidal angle.
    pub zeta: f64,
    /// Minor radius, meters.
    pub r: f64,
    /// Parallel velocity, m/s.
    pub vpar: f64,
    /// Energy, eV.
    pub energy: f64,
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub sep_flag: f64,
}

impl ParticleRecord {
    pub fn is_unwanted(&self) -> bool {
        self.w0 == UNWANTED_WEIGHT
    }
}

/// All records emitted for one step. Record order is arbitrary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub step: u64,
    pub time: f64,
    pub species: Species,
    pub records: Vec<ParticleRecord>,
}

fn default_n_particles() -> usize {
    1000
}
fn default_n_steps() -> u64 {
    100
}
fn default_dt() -> f64 {
    1.0
}
fn default_sigma_psi() -> f64 {
    1e-3
}
fn default_sigma_e() -> f64 {
    0.1
}
fn default_sigma_vpar() -> f64 {
    1e3
}
fn default_loss_psi() -> f64 {
    1.1
}
fn default_psi_band() -> [f64; 2] {
    [0.95, 1.05]
}
fn default_theta_band() -> [f64; 2] {
    [0.0, TAU]
}
fn default_energy_band() -> [f64; 2] {
    [500.0, 1500.0]
}
fn default_vpar_std() -> f64 {
    1e5
}
fn default_minor_radius() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default)]
    pub species: Species,
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Number of advances after step 0; the stream carries `n_steps + 1` steps.
    #[serde(default = "default_n_steps")]
    pub n_steps: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_sigma_psi")]
    pub sigma_psi: f64,
    #[serde(default = "default_sigma_e", alias = "sigma_E")]
    pub sigma_e: f64,
    #[serde(default = "default_sigma_vpar", alias = "sigma_vPar")]
    pub sigma_vpar: f64,
    #[serde(default)]
    pub drift_psi: f64,
    #[serde(default = "default_loss_psi")]
    pub loss_psi: f64,
    #[serde(default)]
    pub seed: u64,
    /// New particles tagged per step, as a fraction of `n_particles`.
    #[serde(default)]
    pub growth_rate: f64,
    #[serde(default = "default_psi_band")]
    pub psi_band: [f64; 2],
    #[serde(default = "default_theta_band")]
    pub theta_band: [f64; 2],
    #[serde(default = "default_energy_band")]
    pub energy_band: [f64; 2],
    #[serde(default = "default_vpar_std")]
    pub vpar_std: f64,
    /// Poloidal rotation per step, radians.
    #[serde(default)]
    pub theta_rate: f64,
    /// Toroidal rotation per step, radians.
    #[serde(default)]
    pub zeta_rate: f64,
    #[serde(default = "default_minor_radius")]
    pub minor_radius: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            species: Species::Electron,
            n_particles: default_n_particles(),
            n_steps: default_n_steps(),
            dt: default_dt(),
            sigma_psi: default_sigma_psi(),
            sigma_e: default_sigma_e(),
            sigma_vpar: default_sigma_vpar(),
            drift_psi: 0.0,
            loss_psi: default_loss_psi(),
            seed: 0,
            growth_rate: 0.0,
            psi_band: default_psi_band(),
            theta_band: default_theta_band(),
            energy_band: default_energy_band(),
            vpar_std: default_vpar_std(),
            theta_rate: 0.0,
            zeta_rate: 0.0,
            minor_radius: default_minor_radius(),
        }
    }
}

impl SourceConfig {
    /// Every violated invariant, as `(field, message)` pairs.
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |field: &str, msg: String| out.push((field.to_string(), msg));
        if self.n_particles < 1 {
            push("n_particles", "must be at least 1".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            push("dt", format!("must be positive, got {}", self.dt));
        }
        for (name, v) in [
            ("sigma_psi", self.sigma_psi),
            ("sigma_e", self.sigma_e),
            ("sigma_vpar", self.sigma_vpar),
            ("vpar_std", self.vpar_std),
            ("growth_rate", self.growth_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                push(name, format!("must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("drift_psi", self.drift_psi),
            ("loss_psi", self.loss_psi),
            ("theta_rate", self.theta_rate),
            ("zeta_rate", self.zeta_rate),
        ] {
            if !v.is_finite() {
                push(name, format!("must be finite, got {v}"));
            }
        }
        if !(self.minor_radius.is_finite() && self.minor_radius > 0.0) {
            push("minor_radius", format!("must be positive, got {}", self.minor_radius));
        }
        for (name, [lo, hi]) in [
            ("psi_band", self.psi_band),
            ("energy_band", self.energy_band),
            ("theta_band", self.theta_band),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                push(name, format!("needs finite lo <= hi, got [{lo}, {hi}]"));
            }
        }
        if self.energy_band[0] < 0.0 {
            push("energy_band", "energies must be >= 0".into());
        }
        if self.theta_band[0] < 0.0 || self.theta_band[1] > TAU {
            push("theta_band", "must lie within [0, 2π]".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            let msg = issues
                .iter()
                .map(|(f, m)| format!("{f}: {m}"))
                .collect::<Vec<_>>()
                .join("; ");
            Err(crate::Error::Config(msg))
        }
    }

    /// Particles tagged per step after step 0.
    pub fn new_per_step(&self) -> usize {
        (self.growth_rate * self.n_particles as f64).round() as usize
    }
}

/// Deterministic, seeded stepper producing [`StepBatch`]es.
pub struct SyntheticSource {
    config: SourceConfig,
    rng: ChaCha8Rng,
    live: Vec<ParticleRecord>,
    next_id: u64,
    step: Option<u64>,
}

impl SyntheticSource {
    pub fn new(config: SourceConfig) -> Result<Self, crate::Error> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(SyntheticSource {
            config,
            rng,
            live: Vec::new(),
            next_id: 0,
            step: None,
        })
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Number of ids issued so far; the next tagged particle gets this id.
    pub fn issued_ids(&self) -> u64 {
        self.next_id
    }

    pub fn current_step(&self) -> Option<u64> {
        self.step
    }

    fn tag(&mut self) -> ParticleRecord {
        let c = &self.config;
        let id = self.next_id;
        self.next_id += 1;
        let psi = uniform(&mut self.rng, c.psi_band);
        let theta = wrap_angle(uniform(&mut self.rng, c.theta_band));
        let zeta = self.rng.random::<f64>() * TAU;
        let energy = uniform(&mut self.rng, c.energy_band);
        let vpar = c.vpar_std * self.rng.sample::<f64, _>(StandardNormal);
        ParticleRecord {
            id,
            psi,
            theta,
            zeta: wrap_angle(zeta),
            r: c.minor_radius * psi,
            vpar,
            energy,
            w0: 1.0,
            w1: 1.0,
            w2: 1.0,
            sep_flag: separatrix_distance(psi),
        }
    }

    fn emit(&mut self, step: u64) -> StepBatch {
        self.live.shuffle(&mut self.rng);
        StepBatch {
            step,
            time: step as f64 * self.config.dt,
            species: self.config.species,
            records: self.live.clone(),
        }
    }

    /// Tag the initial population and emit step 0.
    pub fn init_population(&mut self) -> StepBatch {
        self.live.clear();
        self.next_id = 0;
        for _ in 0..self.config.n_particles {
            let rec = self.tag();
            self.live.push(rec);
        }
        self.step = Some(0);
        self.emit(0)
    }

    /// Advance one step. Returns `None` once `n_steps` advances have happened.
    ///
    /// Calls [`Self::init_population`] first if it has not been called.
    pub fn advance(&mut self) -> Option<StepBatch> {
        let step = match self.step {
            None => return Some(self.init_population()),
            Some(s) if s >= self.config.n_steps => return None,
            Some(s) => s + 1,
        };
        // particles flagged on the previous step disappear now
        self.live.retain(|p| !p.is_unwanted());

        let c = self.config.clone();
        for p in &mut self.live {
            let z_psi: f64 = self.rng.sample(StandardNormal);
            let z_e: f64 = self.rng.sample(StandardNormal);
            let z_v: f64 = self.rng.sample(StandardNormal);
            p.psi += c.drift_psi + c.sigma_psi * z_psi;
            p.energy = (p.energy + c.sigma_e * z_e).abs();
            p.vpar += c.sigma_vpar * z_v;
            p.theta = wrap_angle(p.theta + c.theta_rate);
            p.zeta = wrap_angle(p.zeta + c.zeta_rate);
            p.r = c.minor_radius * p.psi;
            p.sep_flag = separatrix_distance(p.psi);
            if p.psi > c.loss_psi {
                p.w0 = UNWANTED_WEIGHT;
            }
        }
        for _ in 0..c.new_per_step() {
            let rec = self.tag();
            self.live.push(rec);
        }
        self.step = Some(step);
        Some(self.emit(step))
    }
}

impl Iterator for SyntheticSource {
    type Item = StepBatch;

    fn next(&mut self) -> Option<StepBatch> {
        self.advance()
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
