//! Experiment configuration: one JSON document with a model, an algorithm and
//! an evaluation section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use spectra::asyncsim::SimConfig;
use spectra::distsync::{GainSchedule, PsdMode, PsdOperator, SyncConfig};
use spectra::synthdata::{RatingModel, SimilarityModel};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    #[serde(default)]
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub fraction: f64,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSection {
    Similarity(SimilaritySection),
    Rating(RatingSection),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilaritySection {
    pub n_users: usize,
    pub classes: Vec<ClassSpec>,
    /// Row-major `K×K` similarity levels.
    pub b: Vec<Vec<f64>>,
    pub omega: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingSection {
    pub n_users: usize,
    /// Items per user, `F / N`.
    pub gamma_ratio: f64,
    pub classes: Vec<ClassSpec>,
    pub item_classes: Vec<ClassSpec>,
    /// Row-major `K×K'` rating affinities.
    pub r: Vec<Vec<f64>>,
    pub omega: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmSection {
    Oracle(OracleSection),
    Sync(SyncSection),
    Async(AsyncSection),
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection::Oracle(OracleSection { dim: default_dim() })
    }
}

impl AlgorithmSection {
    pub fn dim(&self) -> usize {
        match self {
            AlgorithmSection::Oracle(s) => s.dim,
            AlgorithmSection::Sync(s) => s.dim,
            AlgorithmSection::Async(s) => s.dim,
        }
    }

    fn dim_mut(&mut self) -> &mut usize {
        match self {
            AlgorithmSection::Oracle(s) => &mut s.dim,
            AlgorithmSection::Sync(s) => &mut s.dim,
            AlgorithmSection::Async(s) => &mut s.dim,
        }
    }
}

fn default_dim() -> usize {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdChoice {
    Squared,
    Shift,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSection {
    /// Decaying gains with the smallest offset that keeps the first steps stable.
    Stable,
    Decaying {
        #[serde(default)]
        offset: u64,
    },
    Constant {
        a: f64,
        b: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub horizon: u64,
    #[serde(default = "default_sync_trace")]
    pub trace_every: u64,
    #[serde(default = "default_sync_noise")]
    pub noise_std: f64,
    #[serde(default = "default_psd")]
    pub psd: PsdChoice,
    #[serde(default = "default_shift_epsilon")]
    pub shift_epsilon: f64,
    #[serde(default = "default_gains")]
    pub gains: GainSection,
    #[serde(default)]
    pub n_override: Option<f64>,
}

fn default_sync_trace() -> u64 {
    1000
}
fn default_sync_noise() -> f64 {
    1e-3
}
fn default_psd() -> PsdChoice {
    PsdChoice::Squared
}
fn default_shift_epsilon() -> f64 {
    0.1
}
fn default_gains() -> GainSection {
    GainSection::Stable
}

impl SyncSection {
    pub fn psd_mode(&self) -> PsdMode {
        match self.psd {
            PsdChoice::Squared => PsdMode::Squared,
            PsdChoice::Shift => PsdMode::DiagonalShift(self.shift_epsilon),
        }
    }

    pub fn to_config(&self, op: &PsdOperator, seed: u64) -> SyncConfig {
        let gains = match self.gains {
            GainSection::Stable => GainSchedule::decaying_stable_for(op),
            GainSection::Decaying { offset } => GainSchedule::decaying_with_offset(offset),
            GainSection::Constant { a, b } => GainSchedule::constant(a, b),
        };
        let mut cfg = SyncConfig::new(gains, self.horizon, seed);
        cfg.trace_every = self.trace_every;
        cfg.noise_std = self.noise_std;
        cfg.n_override = self.n_override;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsyncSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub horizon: f64,
    #[serde(default)]
    pub trace_every: Option<f64>,
    #[serde(default)]
    pub gain: Option<f64>,
    #[serde(default)]
    pub node_rate: Option<f64>,
    #[serde(default)]
    pub edge_rate: Option<f64>,
    #[serde(default)]
    pub noise_std: Option<f64>,
    #[serde(default)]
    pub n_override: Option<f64>,
}

impl AsyncSection {
    pub fn to_config(&self, seed: u64) -> SimConfig {
        let mut cfg = SimConfig::benchmark(self.horizon, seed);
        cfg.trace_every = self.trace_every.unwrap_or(cfg.trace_every);
        cfg.gain = self.gain.unwrap_or(cfg.gain);
        cfg.node_rate = self.node_rate.unwrap_or(cfg.node_rate);
        cfg.edge_rate = self.edge_rate.unwrap_or(cfg.edge_rate);
        cfg.noise_std = self.noise_std.unwrap_or(cfg.noise_std);
        cfg.n_override = self.n_override;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluationSection {
    Cluster {
        /// Distance defining "close to its centroid".
        #[serde(default = "default_radius")]
        radius: f64,
    },
    Voting {
        /// Vicinity radius; defaults to twice the eligibility radius.
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default = "default_sample_size")]
        sample_size: usize,
        #[serde(default = "default_n_samples")]
        n_samples: usize,
    },
    Agreement {
        #[serde(default = "default_max_rank")]
        max_rank: usize,
    },
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection::Cluster { radius: default_radius() }
    }
}

fn default_radius() -> f64 {
    1.0
}
fn default_sample_size() -> usize {
    5
}
fn default_n_samples() -> usize {
    20
}
fn default_max_rank() -> usize {
    20
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub knob: Knob,
    pub values: Vec<f64>,
}

/// Scalar fields a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Knob {
    Omega,
    /// `omega = value · ln N`.
    OmegaLog,
    NUsers,
    Dim,
    NoiseStd,
}

impl Knob {
    pub fn name(self) -> &'static str {
        match self {
            Knob::Omega => "omega",
            Knob::OmegaLog => "omega_log",
            Knob::NUsers => "n_users",
            Knob::Dim => "dim",
            Knob::NoiseStd => "noise_std",
        }
    }
}

pub enum Model {
    Similarity(SimilarityModel),
    Rating(RatingModel),
}

fn fractions(classes: &[ClassSpec]) -> Vec<f64> {
    classes.iter().map(|c| c.fraction).collect()
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be nonempty"));
        }
        self.build_model()?;
        let dim = self.algorithm.dim();
        if dim == 0 {
            return Err(invalid("algorithm.dim must be at least 1"));
        }
        let similarity = matches!(self.model, ModelSection::Similarity(_));
        if !similarity && !matches!(self.algorithm, AlgorithmSection::Oracle(_)) {
            return Err(invalid("distributed algorithms run on similarity models only"));
        }
        match (&self.evaluation, similarity) {
            (EvaluationSection::Voting { .. } | EvaluationSection::Agreement { .. }, true) => {
                return Err(invalid("voting and agreement evaluations need a rating model"));
            }
            (EvaluationSection::Voting { sample_size: 0, .. }, _) => return Err(invalid("evaluation.sample_size must be positive")),
            (EvaluationSection::Agreement { max_rank: 0 }, _) => return Err(invalid("evaluation.max_rank must be positive")),
            (EvaluationSection::Cluster { radius }, _) if !(*radius >= 0.0) => return Err(invalid("evaluation.radius must be nonnegative")),
            _ => {}
        }
        if let AlgorithmSection::Async(a) = &self.algorithm {
            a.to_config(0).validate().map_err(|e| invalid(format!("algorithm: {e}")))?;
        }
        if let AlgorithmSection::Sync(s) = &self.algorithm {
            if s.horizon == 0 || s.trace_every == 0 {
                return Err(invalid("algorithm.horizon and algorithm.trace_every must be positive"));
            }
            if !(s.noise_std >= 0.0) {
                return Err(invalid("algorithm.noise_std must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model, CliError> {
        let built = match &self.model {
            ModelSection::Similarity(s) => {
                SimilarityModel::new(s.n_users, fractions(&s.classes), s.b.clone(), s.omega).map(Model::Similarity)
            }
            ModelSection::Rating(r) => {
                RatingModel::new(r.n_users, r.gamma_ratio, fractions(&r.classes), fractions(&r.item_classes), r.r.clone(), r.omega)
                    .map(Model::Rating)
            }
        };
        built.map_err(|e| invalid(format!("model: {e}")))
    }

    pub fn model_seed(&self) -> u64 {
        match &self.model {
            ModelSection::Similarity(s) => s.seed,
            ModelSection::Rating(r) => r.seed,
        }
    }

    pub fn n_users(&self) -> usize {
        match &self.model {
            ModelSection::Similarity(s) => s.n_users,
            ModelSection::Rating(r) => r.n_users,
        }
    }

    /// Copy with one knob set to `value`.
    pub fn with_knob(&self, knob: Knob, value: f64) -> Result<Self, CliError> {
        let mut out = self.clone();
        let as_count = |v: f64| -> Result<usize, CliError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid(format!("{} needs a positive integer, got {v}", knob.name())))
            }
        };
        let n = out.n_users() as f64;
        match knob {
            Knob::Omega | Knob::OmegaLog => {
                let omega = if knob == Knob::Omega { value } else { value * n.ln() };
                match &mut out.model {
                    ModelSection::Similarity(s) => s.omega = omega,
                    ModelSection::Rating(r) => r.omega = omega,
                }
            }
            Knob::NUsers => {
                let v = as_count(value)?;
                match &mut out.model {
                    ModelSection::Similarity(s) => s.n_users = v,
                    ModelSection::Rating(r) => r.n_users = v,
                }
            }
            Knob::Dim => *out.algorithm.dim_mut() = as_count(value)?,
            Knob::NoiseStd => match &mut out.algorithm {
                AlgorithmSection::Sync(s) => s.noise_std = value,
                AlgorithmSection::Async(a) => a.noise_std = Some(value),
                AlgorithmSection::Oracle(_) => return Err(invalid("noise_std applies to sync and async algorithms only")),
            },
        }
        out.validate()?;
        Ok(out)
    }
}

/// Seed used to draw the data for run seed `s`.
pub fn data_seed(model_seed: u64, s: u64) -> u64 {
    model_seed.wrapping_add(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use spectra::synthdata::{FOUR_CLASS_B, FOUR_CLASS_SIZES};

    fn bundled() -> ExperimentConfig {
        ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/four_class_benchmark.json")).unwrap()
    }

    #[test]
    fn bundled_config_is_the_four_class_benchmark() {
        let cfg = bundled();
        let Model::Similarity(m) = cfg.build_model().unwrap() else { panic!("similarity model expected") };
        let reference = SimilarityModel::four_class_benchmark(2200);
        assert_eq!((m.n_users, m.omega), (reference.n_users, reference.omega));
        assert!(m.alpha.iter().zip(&reference.alpha).all(|(a, r)| (a - r).abs() < 1e-15));
        assert_eq!(m.b, FOUR_CLASS_B.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
        let sizes = spectra::synthdata::class_sizes(&m.alpha, 2200);
        assert_eq!(sizes, FOUR_CLASS_SIZES.to_vec());
        let AlgorithmSection::Async(a) = &cfg.algorithm else { panic!("async algorithm expected") };
        assert_eq!(a.to_config(1), { let mut c = SimConfig::benchmark(600.0, 1); c.trace_every = 10.0; c });
    }

    #[test]
    fn knobs_edit_the_right_fields() {
        let cfg = bundled();
        let ModelSection::Similarity(s) = cfg.with_knob(Knob::OmegaLog, 2.0).unwrap().model else { unreachable!() };
        assert!((s.omega - 2.0 * 2200f64.ln()).abs() < 1e-12);
        assert_eq!(cfg.with_knob(Knob::Dim, 3.0).unwrap().algorithm.dim(), 3);
        assert_eq!(cfg.with_knob(Knob::NUsers, 1100.0).unwrap().n_users(), 1100);
        assert!(cfg.with_knob(Knob::Dim, 1.5).is_err());
        assert!(cfg.with_knob(Knob::Omega, 1e5).is_err());
    }

    #[test]
    fn data_seed_offsets_the_model_seed() {
        assert_eq!(data_seed(10, 3), 13);
        assert_eq!(data_seed(u64::MAX, 1), 0);
    }
}
