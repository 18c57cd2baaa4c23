//! Experiment configuration read from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration. Unknown keys are
//! rejected with their path.

use std::path::{Path, PathBuf};

use ergolab::bc_induction::BcConfig;
use ergolab::maps::{Family, MapSpec};
use ergolab::paramex::ParamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub map: Family,
    pub density: DensityConfig,
    pub lyapunov: LyapunovConfig,
    pub gamma: GammaSection,
    pub cylinders: CylinderConfig,
    pub tower: TowerConfig,
    pub bc: BcSection,
    pub correlate: CorrelateConfig,
    pub paramex: ParamexSection,
    pub combinatorics: CombinatoricsConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            map: Family::CircleCovering { degree: 2 },
            density: DensityConfig::default(),
            lyapunov: LyapunovConfig::default(),
            gamma: GammaSection::default(),
            cylinders: CylinderConfig::default(),
            tower: TowerConfig::default(),
            bc: BcSection::default(),
            correlate: CorrelateConfig::default(),
            paramex: ParamexSection::default(),
            combinatorics: CombinatoricsConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Pull-back horizon n.
    pub iterations: usize,
    pub bins: usize,
    pub samples: usize,
    /// Histogram range; the map's domain when absent.
    pub range: Option<(f64, f64)>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { iterations: 200, bins: 256, samples: 1_000_000, range: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub x0: f64,
    pub iterations: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig { x0: 0.123_456_789, iterations: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSection {
    pub sample_size: usize,
    pub n_max: u64,
    pub n_cap: u64,
    pub lambda: f64,
    pub delta: f64,
    pub eps_rec: f64,
}

impl Default for GammaSection {
    fn default() -> Self {
        GammaSection { sample_size: 10_000, n_max: 200, n_cap: 2000, lambda: 0.1, delta: 0.1, eps_rec: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderConfig {
    pub depth: usize,
    pub distortion_depth: usize,
    pub distortion_samples: usize,
    pub mesh: usize,
    pub max_truncation_loss: f64,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        CylinderConfig {
            depth: 10,
            distortion_depth: 8,
            distortion_samples: 1000,
            mesh: ergolab::symbolic::DEFAULT_MESH,
            max_truncation_loss: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TowerConfig {
    /// Serialized induced Markov map; when absent the tower is built from `pieces`,
    /// or as a first return of `map` to `base_labels` when `pieces` is empty.
    pub input: Option<PathBuf>,
    pub base: (f64, f64),
    /// (return time, length) of consecutive affine branches.
    pub pieces: Vec<(u64, f64)>,
    pub base_labels: Vec<u64>,
    pub r_max: u64,
    pub max_branches: usize,
    pub n_max: usize,
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig {
            input: None,
            base: (0.0, 1.0),
            pieces: vec![(1, 0.6), (3, 0.4)],
            base_labels: vec![0],
            r_max: 40,
            max_branches: 1 << 20,
            n_max: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcSection {
    pub a: f64,
    /// Starting interval of the escape partition; [1, 1 + δ̂] when absent.
    pub interval: Option<(f64, f64)>,
    /// Horizon of the hyperbolicity and recurrence checks.
    pub check_n: usize,
    pub build_tower: bool,
    pub config: BcConfig,
}

impl Default for BcSection {
    fn default() -> Self {
        BcSection { a: 2.0, interval: None, check_n: 40, build_tower: true, config: BcConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableChoice {
    Identity,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Ensemble from the pull-back density of the map.
    Ensemble,
    SingleOrbit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateConfig {
    pub observable: ObservableChoice,
    pub frequency: u32,
    pub n_max: usize,
    pub samples: usize,
    pub method: MethodChoice,
    pub orbits: usize,
    pub burn_in: u64,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        CorrelateConfig {
            observable: ObservableChoice::Identity,
            frequency: 1,
            n_max: 14,
            samples: 1_000_000,
            method: MethodChoice::SingleOrbit,
            orbits: 4,
            burn_in: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamexSection {
    pub depth: u32,
    pub dump_events: bool,
    pub config: ParamConfig,
}

impl Default for ParamexSection {
    fn default() -> Self {
        ParamexSection { depth: 11, dump_events: false, config: ParamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinatoricsConfig {
    pub k_max: u64,
    pub eta_hat: f64,
}

impl Default for CombinatoricsConfig {
    fn default() -> Self {
        CombinatoricsConfig { k_max: 20, eta_hat: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    /// Smaller samples; tolerances are unchanged, so some criteria may fail.
    Quick,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub profile: Profile,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn map_spec(&self) -> Result<MapSpec, HarnessError> {
        MapSpec::new(self.map.clone()).map_err(|e| HarnessError::Config(format!("map: {e}")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |path: &str, why: &str| Err(HarnessError::Config(format!("{path}: {why}")));
        if self.density.iterations == 0 || self.density.samples == 0 {
            return bad("density", "iterations and samples must be positive");
        }
        if self.density.bins == 0 {
            return bad("density.bins", "must be positive");
        }
        if let Some((lo, hi)) = self.density.range {
            if !(lo < hi) {
                return bad("density.range", "need lo < hi");
            }
        }
        if self.lyapunov.iterations == 0 {
            return bad("lyapunov.iterations", "must be positive");
        }
        if self.gamma.sample_size == 0 || self.gamma.n_max == 0 {
            return bad("gamma", "sample_size and n_max must be positive");
        }
        if self.cylinders.depth == 0 || self.cylinders.mesh < 2 {
            return bad("cylinders", "depth must be positive and mesh at least 2");
        }
        if self.tower.n_max == 0 {
            return bad("tower.n_max", "must be positive");
        }
        if self.correlate.samples == 0 {
            return bad("correlate.samples", "must be positive");
        }
        if let Err(e) = self.bc.config.validate() {
            return bad("bc.config", &e.to_string());
        }
        if let Err(e) = self.paramex.config.validate() {
            return bad("paramex.config", &e.to_string());
        }
        if self.combinatorics.k_max == 0 || self.combinatorics.k_max > 48 {
            return bad("combinatorics.k_max", "must lie in 1..=48");
        }
        self.map_spec().map(|_| ())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
