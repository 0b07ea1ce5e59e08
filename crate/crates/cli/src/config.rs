//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use siglass::hypothesis::{HypothesisConfig, PostProcess, Preset};
use siglass::inference::{Covariance, InferenceOptions, Mode};
use siglass::ir::{parse_model, ModelGraph};
use siglass::Tensor;

/// Exactly one covariance form.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CovSpec {
    Var(f64),
    Diag(PathBuf),
    Matrix(PathBuf),
}

/// Contents of a `--config` file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub input: Vec<PathBuf>,
    pub reference: Option<PathBuf>,
    pub hypothesis: Option<HypothesisConfig>,
    pub covariance: Option<CovSpec>,
    pub inference: Option<InferenceOptions>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub signal: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tensor file per graph input, in order.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_name = "back-mean-diff|neighbor-mean-diff|reference-mean-diff")]
    pub hypothesis: Option<Preset>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub use_norm: bool,
    /// Comma-separated chain, e.g. `input-diff,abs,gaussian:3:1.0`.
    #[arg(long)]
    pub post_process: Option<String>,
    #[arg(long)]
    pub neighborhood_range: Option<usize>,
    /// Tensor file of the pixel mask; nonzero entries are excluded.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub input_index: Option<usize>,
    #[arg(long)]
    pub output_index: Option<usize>,
    /// Scalar noise variance.
    #[arg(long, conflicts_with_all = ["cov_diag", "cov_matrix"])]
    pub var: Option<f64>,
    /// Tensor file of per-pixel variances.
    #[arg(long, conflicts_with = "cov_matrix")]
    pub cov_diag: Option<PathBuf>,
    /// Tensor file of an `n x n` covariance matrix.
    #[arg(long)]
    pub cov_matrix: Option<PathBuf>,
    #[arg(long, value_name = "parametric|over_conditioning")]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub z_range: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub no_memo: bool,
    /// Log of the number of hypotheses for the Bonferroni p-value.
    #[arg(long)]
    pub log_num_comparisons: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything needed to run inference, resolved and loaded.
pub struct Resolved {
    pub graph: ModelGraph,
    pub inputs: Vec<Tensor>,
    pub reference: Option<Tensor>,
    pub hypothesis: HypothesisConfig,
    pub cov: Covariance,
    pub options: InferenceOptions,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub signal: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Tensor::from_json_str(&text).with_context(|| format!("cannot parse tensor {}", path.display()))
}

pub fn read_model(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read model {}", path.display()))?;
    parse_model(&bytes).with_context(|| format!("cannot load model {}", path.display()))
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut cfg: FileConfig =
        serde_json::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    cfg.model.as_mut().map(fix);
    cfg.input.iter_mut().for_each(fix);
    cfg.reference.as_mut().map(fix);
    cfg.out.as_mut().map(fix);
    match &mut cfg.covariance {
        Some(CovSpec::Diag(p)) | Some(CovSpec::Matrix(p)) => fix(p),
        _ => {}
    }
    Ok(cfg)
}

impl RunArgs {
    /// Merges flags over the config file and loads every referenced file.
    /// `need_inputs` is false for commands that generate their own images.
    pub fn resolve(&self, need_inputs: bool) -> Result<Resolved> {
        let file = match &self.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };

        let model = self.model.clone().or(file.model).ok_or_else(|| anyhow!("no model given (--model)"))?;
        let graph = read_model(&model)?;

        let input_paths = if self.input.is_empty() { file.input } else { self.input.clone() };
        if need_inputs && input_paths.is_empty() {
            bail!("no input given (--input)");
        }
        let inputs = input_paths.iter().map(|p| read_tensor(p)).collect::<Result<Vec<_>>>()?;
        let reference = self.reference.clone().or(file.reference).map(|p| read_tensor(&p)).transpose()?;

        let mut h = match (file.hypothesis, self.hypothesis, self.threshold) {
            (Some(h), _, _) => h,
            (None, Some(p), Some(t)) => HypothesisConfig::new(p, t),
            (None, None, _) => bail!("no hypothesis given (--hypothesis)"),
            (None, Some(_), None) => bail!("no threshold given (--threshold)"),
        };
        if let Some(p) = self.hypothesis {
            h.preset = p;
        }
        if let Some(t) = self.threshold {
            h.threshold = t;
        }
        if self.use_norm {
            h.use_norm = true;
        }
        if let Some(chain) = &self.post_process {
            h.post_process = PostProcess::parse_chain(chain)?;
        }
        if let Some(r) = self.neighborhood_range {
            h.neighborhood_range = r;
        }
        if let Some(m) = &self.mask {
            h.mask = Some(read_tensor(m)?);
        }
        if let Some(i) = self.input_index {
            h.i_idx = i;
        }
        if let Some(o) = self.output_index {
            h.o_idx = o;
        }
        h.validate()?;

        let cov_spec = match (self.var, &self.cov_diag, &self.cov_matrix) {
            (Some(v), None, None) => Some(CovSpec::Var(v)),
            (None, Some(p), None) => Some(CovSpec::Diag(p.clone())),
            (None, None, Some(p)) => Some(CovSpec::Matrix(p.clone())),
            (None, None, None) => file.covariance,
            _ => bail!("give exactly one of --var, --cov-diag, --cov-matrix"),
        };
        let cov = match cov_spec.ok_or_else(|| anyhow!("no covariance given (--var, --cov-diag or --cov-matrix)"))? {
            CovSpec::Var(v) => Covariance::scalar(v)?,
            CovSpec::Diag(p) => Covariance::diagonal(read_tensor(&p)?.into_data())?,
            CovSpec::Matrix(p) => {
                let m = read_tensor(&p)?;
                match m.shape() {
                    [r, c] if r == c => Covariance::full(*r, m.into_data())?,
                    s => bail!("covariance matrix {} has shape {s:?}, expected square", p.display()),
                }
            }
        };

        let mut options = file.inference.unwrap_or_default();
        if let Some(m) = self.mode {
            options.mode = m;
        }
        if let Some(z) = self.z_range {
            options.z_range = z;
        }
        if self.epsilon.is_some() {
            options.epsilon = self.epsilon;
        }
        if self.no_memo {
            options.memoize = false;
        }
        if self.log_num_comparisons.is_some() {
            options.log_num_comparisons = self.log_num_comparisons;
        }

        Ok(Resolved {
            graph,
            inputs,
            reference,
            hypothesis: h,
            cov,
            options,
            seed: file.seed,
            trials: file.trials,
            signal: file.signal,
            out: self.out.clone().or(file.out),
        })
    }
}
