//! Per-command JSON configs. Unknown fields are rejected and every field
//! has a default, so `{}` is a valid config for each command.

use std::path::PathBuf;

use godnf_core::experiments::{BenchConfig, ConsensusDemoConfig, InfluenceConfig};
use godnf_core::{CascadeModel, Graph, Task, TrainConfig, WeightMode};
use serde::{Deserialize, Serialize};

use crate::{read_input, CliError, CliResult};

pub trait Seeded {
    fn set_seed(&mut self, seed: u64);
}

/// Community graph used when no edge list is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmSpec {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            nodes: 50,
            communities: 5,
            p_in: 0.5,
            p_out: 0.02,
        }
    }
}

/// Either an edge-list file or an SBM drawn from the run seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSource {
    /// Whitespace-separated `u v` lines.
    pub edges: Option<PathBuf>,
    /// Node count for the edge list; inferred from the largest id if absent.
    pub nodes: Option<usize>,
    pub sbm: SbmSpec,
}

impl GraphSource {
    /// Returns the graph and, for generated graphs, the community labels.
    pub fn load(&self, seed: u64) -> CliResult<(Graph, Option<Vec<usize>>)> {
        match &self.edges {
            Some(path) => {
                let text = read_input(path)?;
                Ok((
                    Graph::parse_edge_list(&text, self.nodes, &path.display().to_string())?,
                    None,
                ))
            }
            None => {
                let s = &self.sbm;
                let sbm = godnf_core::generate_sbm(s.nodes, s.communities, s.p_in, s.p_out, seed)?;
                Ok((sbm.graph, Some(sbm.labels)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffuseConfig {
    pub graph: GraphSource,
    /// Headerless CSV of initial states; random in `[-1, 1]` if absent.
    pub features: Option<PathBuf>,
    /// Width of the random initial states.
    pub dims: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub mu: f64,
    pub steps: usize,
    pub self_weight: f64,
    pub weight_mode: WeightMode,
    pub max_delta_norm: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DiffuseConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            features: None,
            dims: 2,
            alpha: 0.1,
            lambda: 0.2,
            mu: 0.1,
            steps: 100,
            self_weight: 0.5,
            weight_mode: WeightMode::Static,
            max_delta_norm: 1.0,
            tolerance: godnf_core::diffusion::DEFAULT_TOLERANCE,
            seed: 0,
        }
    }
}

impl DiffuseConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.features.is_none() && self.dims == 0 {
            return Err(invalid("dims", "must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be positive"));
        }
        if !(self.max_delta_norm > 0.0) {
            return Err(invalid("max_delta_norm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcConfig {
    pub graph: GraphSource,
    /// Headerless CSV of node features. Required with an edge-list graph;
    /// generated from the communities otherwise.
    pub features: Option<PathBuf>,
    /// One class index per line. Required with an edge-list graph.
    pub labels: Option<PathBuf>,
    pub feature_noise: f64,
    pub extra_features: usize,
    /// `train.seed` also drives graph and feature generation.
    pub train: TrainConfig,
}

impl Default for NcConfig {
    fn default() -> Self {
        let d = godnf_core::experiments::ClassificationConfig::default();
        Self {
            graph: GraphSource {
                sbm: SbmSpec {
                    nodes: d.nodes,
                    communities: d.communities,
                    p_in: d.p_in,
                    p_out: d.p_out,
                },
                ..GraphSource::default()
            },
            features: None,
            labels: None,
            feature_noise: d.feature_noise,
            extra_features: d.extra_features,
            train: d.train,
        }
    }
}

impl NcConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.graph.edges.is_some() && (self.features.is_none() || self.labels.is_none()) {
            return Err(invalid(
                "labels",
                "an edge-list graph needs both `features` and `labels`",
            ));
        }
        if !(0.0..0.5).contains(&self.feature_noise) {
            return Err(invalid("feature_noise", "must lie in [0, 0.5)"));
        }
        if !matches!(self.train.task, Task::Classification { .. }) {
            return Err(invalid("train.task", "must be a classification task"));
        }
        self.train.validate().map_err(CliError::from)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IeConfig {
    pub graph: GraphSource,
    /// `influence.seed` also drives graph generation.
    pub influence: InfluenceConfig,
}

fn default_runs() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub graph: GraphSource,
    pub cascade: CascadeModel,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Explicit seed nodes; a random `seed_fraction` of nodes otherwise.
    pub seed_set: Option<Vec<usize>>,
    pub seed_fraction: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            graph: GraphSource::default(),
            cascade: CascadeModel::ic(),
            runs: default_runs(),
            seed_set: None,
            seed_fraction: 0.1,
            seed: 0,
        }
    }
}

fn invalid(field: &str, reason: &str) -> CliError {
    CliError::Config(format!("invalid parameter `{field}`: {reason}"))
}

impl Seeded for DiffuseConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for NcConfig {
    fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }
}

impl Seeded for IeConfig {
    fn set_seed(&mut self, seed: u64) {
        self.influence.seed = seed;
    }
}

impl Seeded for SimulateConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for ConsensusDemoConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}

impl Seeded for BenchConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }
}
