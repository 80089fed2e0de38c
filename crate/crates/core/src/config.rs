//! TOML run configuration. Unknown keys are rejected in every section.

use serde::Deserialize;
use thiserror::Error;

use crate::coarsen::EtaChoice;
use crate::experiment::{hop_architecture, SimulationConfig, Switching};
use crate::model::{IndexEncoding, LaplacianTiming, ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulation: SimulationSection,
    pub coarsening: CoarseningSection,
    pub analysis: AnalysisSection,
    pub model: ModelSection,
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Oscillator count `N`; with `groups`, an alternative to `group_sizes`.
    pub nodes: Option<usize>,
    /// Coarse node count `M`.
    pub groups: Option<usize>,
    pub group_sizes: Option<Vec<usize>>,
    pub kappa: [f64; 2],
    pub omega: [f64; 2],
    pub dt: f64,
    pub horizon: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub topologies: usize,
    /// `fixed`, `count` or `mean-segment`.
    pub switching: String,
    pub switches: usize,
    pub mean_segment: f64,
    pub min_switch_step: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::desk();
        Self {
            nodes: None,
            groups: None,
            group_sizes: None,
            kappa: [d.kappa.0, d.kappa.1],
            omega: [d.omega.0, d.omega.1],
            dt: d.dt,
            horizon: d.horizon,
            n_train: d.n_train,
            n_test: d.n_test,
            seed: 0,
            topologies: d.topologies,
            switching: "fixed".into(),
            switches: 2,
            mean_segment: 1.0,
            min_switch_step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseningSection {
    /// Group of every oscillator; defaults to consecutive groups of `group_sizes`.
    pub assignment: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Lipschitz constant `L` of the memory estimate.
    pub lipschitz: f64,
    /// Hop radius `K` of a single coarse interaction.
    pub k: usize,
    /// `R^2` of the memory estimate; defaults to the squared basis scale of the coarse map, or 1
    /// for admittance input.
    pub basis_norm_sq: Option<f64>,
    /// Fixed decay parameter of the admittance weight map.
    pub eta: Option<f64>,
    /// Target `[lo, hi]` range of the admittance weights; `eta` is solved from it.
    pub weight_range: Option<[f64; 2]>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { lipschitz: 1.0, k: 1, basis_norm_sq: None, eta: None, weight_range: None }
    }
}

impl AnalysisSection {
    pub fn eta_choice(&self) -> Result<EtaChoice, ConfigError> {
        match (self.eta, self.weight_range) {
            (Some(e), None) => Ok(EtaChoice::Fixed(e)),
            (None, Some([lo, hi])) => Ok(EtaChoice::Range { lo, hi }),
            (None, None) => invalid("analysis needs either eta or weight_range for admittance input"),
            (Some(_), Some(_)) => invalid("analysis takes eta or weight_range, not both"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `chebconv` or `mlp`.
    pub variant: String,
    pub delay: usize,
    /// Total hops; overrides `order` and `layers` when set.
    pub hops: Option<usize>,
    pub order: usize,
    pub layers: usize,
    pub width: usize,
    pub encoder_hidden: Option<usize>,
    pub decoder_hidden: Option<usize>,
    /// `D_0..D_{N_C}`; defaults to `width` everywhere.
    pub features: Option<Vec<usize>>,
    /// `next` or `current`.
    pub laplacian_timing: String,
    /// `raw` or `onehot`.
    pub index_encoding: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: "chebconv".into(),
            delay: 50,
            hops: None,
            order: 2,
            layers: 1,
            width: crate::experiment::DESK_WIDTH,
            encoder_hidden: None,
            decoder_hidden: None,
            features: None,
            laplacian_timing: "next".into(),
            index_encoding: "raw".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub decay: f64,
    /// Defaults to the simulation seed.
    pub seed: Option<u64>,
    pub input_noise: f64,
    pub scale_rates: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = crate::experiment::desk_training();
        Self {
            epochs: d.epochs,
            batch: d.batch,
            lr0: d.lr0,
            decay: d.decay,
            seed: None,
            input_noise: d.input_noise,
            scale_rates: d.scale_rates,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.simulation()?;
        cfg.model_config(1, cfg.simulation.dt, cfg.simulation.topologies)?;
        cfg.training()?;
        Ok(cfg)
    }

    pub fn group_sizes(&self) -> Result<Vec<usize>, ConfigError> {
        let s = &self.simulation;
        let sizes = match (&s.group_sizes, s.nodes, s.groups) {
            (Some(g), None, None) => g.clone(),
            (Some(g), n, m) => {
                if n.is_some_and(|n| n != g.iter().sum::<usize>()) || m.is_some_and(|m| m != g.len()) {
                    return invalid("nodes/groups disagree with group_sizes");
                }
                g.clone()
            }
            (None, None, None) => SimulationConfig::desk().group_sizes,
            (None, Some(n), Some(m)) if m > 0 && n % m == 0 => vec![n / m; m],
            (None, Some(n), Some(m)) => return invalid(format!("{n} nodes do not split into {m} equal groups")),
            _ => return invalid("simulation needs group_sizes or both nodes and groups"),
        };
        if sizes.is_empty() || sizes.contains(&0) {
            return invalid("every group needs at least one oscillator");
        }
        Ok(sizes)
    }

    pub fn simulation(&self) -> Result<SimulationConfig, ConfigError> {
        let s = &self.simulation;
        let switching = match s.switching.as_str() {
            "fixed" => Switching::Fixed,
            "count" => Switching::Count(s.switches),
            "mean-segment" => Switching::MeanSegment(s.mean_segment),
            other => return invalid(format!("unknown switching '{other}'")),
        };
        let cfg = SimulationConfig {
            group_sizes: self.group_sizes()?,
            kappa: (s.kappa[0], s.kappa[1]),
            omega: (s.omega[0], s.omega[1]),
            dt: s.dt,
            horizon: s.horizon,
            n_train: s.n_train,
            n_test: s.n_test,
            topologies: s.topologies,
            switching,
            min_switch_step: s.min_switch_step,
            assignment: self.coarsening.assignment.clone(),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn variant(&self) -> Result<Variant, ConfigError> {
        Variant::parse(&self.model.variant)
            .map_or_else(|| invalid(format!("unknown model variant '{}'", self.model.variant)), Ok)
    }

    /// Model configuration for `nodes` coarse nodes and a pool of `topologies` graphs.
    pub fn model_config(&self, nodes: usize, dt: f64, topologies: usize) -> Result<ModelConfig, ConfigError> {
        let m = &self.model;
        let (order, layers) = m.hops.map_or((m.order, m.layers), hop_architecture);
        let mut cfg = ModelConfig::new(m.delay, order, layers, nodes, dt).with_width(m.width).with_variant(self.variant()?);
        if let Some(h) = m.encoder_hidden {
            cfg.encoder_hidden = h;
        }
        if let Some(h) = m.decoder_hidden {
            cfg.decoder_hidden = h;
        }
        if let Some(f) = &m.features {
            cfg.features = f.clone();
        }
        cfg.laplacian_timing = match m.laplacian_timing.as_str() {
            "next" => LaplacianTiming::Next,
            "current" => LaplacianTiming::Current,
            other => return invalid(format!("unknown laplacian_timing '{other}'")),
        };
        cfg.index_encoding = match m.index_encoding.as_str() {
            "raw" => IndexEncoding::Raw,
            "onehot" => IndexEncoding::OneHot { topologies },
            other => return invalid(format!("unknown index_encoding '{other}'")),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn training(&self) -> Result<TrainConfig, ConfigError> {
        let t = &self.training;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch: t.batch,
            lr0: t.lr0,
            decay: t.decay,
            seed: t.seed.unwrap_or(self.simulation.seed),
            input_noise: t.input_noise,
            scale_rates: t.scale_rates,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_desk_setup() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.simulation().unwrap(), SimulationConfig::desk());
        let m = cfg.model_config(5, 0.01, 1).unwrap();
        assert_eq!((m.delay, m.order, m.layers), (50, 2, 1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("[simulation]\nbogus = 1\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::parse("[nonsense]\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn sections_are_validated() {
        let text = "[simulation]\nnodes = 12\ngroups = 3\ngroup_sizes = []\n";
        assert!(RunConfig::parse(text).is_err());
        let cfg = RunConfig::parse("[simulation]\ngroup_sizes = [3, 3]\nn_train = 4\n[model]\nhops = 4\n").unwrap();
        assert_eq!(cfg.simulation().unwrap().group_sizes, vec![3, 3]);
        let m = cfg.model_config(2, 0.01, 1).unwrap();
        assert_eq!((m.order, m.layers), (2, 2));
        assert!(matches!(RunConfig::parse("[simulation]\nn_train = 0\n"), Err(ConfigError::Invalid(_))));
        assert!(RunConfig::parse("[model]\nvariant = \"lstm\"\n").is_err());
        assert!(RunConfig::parse("[training]\ndecay = 1.5\n").is_err());
    }

    #[test]
    fn nodes_and_groups_split_evenly() {
        let mut cfg = RunConfig::parse("[simulation]\nnodes = 12\ngroups = 3\n").unwrap();
        assert_eq!(cfg.group_sizes().unwrap(), vec![4, 4, 4]);
        cfg.simulation.groups = Some(5);
        assert!(cfg.group_sizes().is_err());
    }

    #[test]
    fn eta_choice_needs_exactly_one_source() {
        let mut a = AnalysisSection::default();
        assert!(a.eta_choice().is_err());
        a.eta = Some(2.0);
        assert_eq!(a.eta_choice().unwrap(), EtaChoice::Fixed(2.0));
        a.weight_range = Some([0.1, 0.9]);
        assert!(a.eta_choice().is_err());
    }
}
