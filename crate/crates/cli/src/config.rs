//! `train` run configuration, read from TOML.

use std::path::{Path, PathBuf};

use cgmmn::datasets::{
    gen_conditional_gaussian, gen_cubic, gen_cubic_toy, gen_label_conditional_mixture, load_csv,
    load_idx_subset, LabelMode,
};
use cgmmn::net::init_net;
use cgmmn::{Activation, GeneratorNet, InputMode, LayerSpec, PairedDataset, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Master seed; the global `--seed` flag overrides it.
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    pub net: NetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    ConditionalGaussian {
        n: usize,
        slope: f64,
        noise_sd: f64,
    },
    Cubic {
        n: usize,
    },
    CubicToy,
    Mixture {
        n: usize,
        classes: usize,
    },
    Csv {
        path: PathBuf,
        x_cols: Vec<String>,
        y_cols: Vec<String>,
        #[serde(default)]
        label_mode: LabelMode,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        max_n: usize,
        #[serde(default)]
        downscale: bool,
        /// Labels as the conditioning input (generation) instead of the output.
        #[serde(default)]
        labels_as_x: bool,
    },
}

impl DataSpec {
    pub fn load(&self, seed: u64, base: &Path) -> Result<PairedDataset, CliError> {
        let d = match self {
            DataSpec::ConditionalGaussian { n, slope, noise_sd } => {
                gen_conditional_gaussian(*n, *slope, *noise_sd, seed)?
            }
            DataSpec::Cubic { n } => gen_cubic(*n, seed)?,
            DataSpec::CubicToy => gen_cubic_toy(seed)?,
            DataSpec::Mixture { n, classes } => gen_label_conditional_mixture(*n, *classes, seed)?,
            DataSpec::Csv {
                path,
                x_cols,
                y_cols,
                label_mode,
            } => load_csv(base.join(path), x_cols, y_cols, *label_mode)?,
            DataSpec::Idx {
                images,
                labels,
                max_n,
                downscale,
                labels_as_x,
            } => {
                let d = load_idx_subset(base.join(images), base.join(labels), *max_n, *downscale)?;
                if *labels_as_x {
                    d.swapped()
                } else {
                    d
                }
            }
        };
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// Hidden layers; an output layer sized to the response is appended.
    pub hidden: Vec<LayerSpec>,
    pub h_dim: usize,
    #[serde(default = "default_output_activation")]
    pub output_activation: Activation,
    #[serde(default)]
    pub input_mode: InputMode,
}

fn default_output_activation() -> Activation {
    Activation::Identity
}

impl NetSpec {
    pub fn build(&self, x_dim: usize, y_dim: usize, seed: u64) -> Result<GeneratorNet, CliError> {
        let mut layers = self.hidden.clone();
        layers.push(LayerSpec::new(y_dim, self.output_activation));
        Ok(init_net(&layers, x_dim, self.h_dim, self.input_mode, seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub model: PathBuf,
    pub run: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            model: PathBuf::from("model.json"),
            run: PathBuf::from("run.json"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Independent seeds for data generation, weight initialization and training.
pub fn derive_seeds(master: u64) -> (u64, u64, u64) {
    use rand::Rng;
    let mut rng = cgmmn::rng_from_seed(master);
    (rng.random(), rng.random(), rng.random())
}
