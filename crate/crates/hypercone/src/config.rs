//! Run configuration files: flat `key = value` text grouped into sections.
//!
//! One [`RunConfig`] covers everything a reproducible run needs — dataset
//! shape, optimization settings, loss weights, evaluation parameters, paths
//! and the master seed. The format is deliberately diff-able: fixed section
//! order, one key per line, every key always present when rendered. Parsing
//! is strict — unknown sections, unknown keys, duplicate keys and malformed
//! values are all structured errors, so a typo can never silently fall back
//! to a default.
//!
//! All randomness in a run flows from the single `[run] seed` through named
//! sub-streams (see [`substream_seed`]): the dataset generator and the
//! trainer's batch sampler each get their own derived seed, so regenerating
//! the dataset never perturbs batch order and vice versa. The trainer's
//! seed field is therefore derived, not persisted.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{ContrastiveDirections, LossMode};
use crate::trainer::TrainConfig;

/// Default recall cutoffs reported by the evaluation command.
pub const DEFAULT_RECALL_K: [usize; 2] = [5, 10];

/// Derives a named sub-stream seed from the master seed. The stream name is
/// folded in with FNV-1a, then the combined word is finalized with the
/// SplitMix64 mixer, so distinct names give statistically unrelated streams.
pub fn substream_seed(master: u64, stream: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in stream.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ hash;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shape and noise of the synthetic concept tree.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub branching: usize,
    pub depth: usize,
    pub dim: usize,
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            branching: 3,
            depth: 3,
            dim: 16,
            noise_sigma: 0.1,
        }
    }
}

/// Evaluation-command parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Recall cutoffs, each reported separately.
    pub recall_k: Vec<usize>,
    /// Bidirectional-consistency rank threshold; also the top-k width used
    /// when retrieval degrees drive automatic negative-pool selection.
    pub rank_threshold: usize,
    /// Negative-pool size for automatic pool construction.
    pub negative_pool: usize,
    /// Band count for subspace retrieval.
    pub subspaces: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recall_k: DEFAULT_RECALL_K.to_vec(),
            rank_threshold: crate::evaluation::DEFAULT_RANK_THRESHOLD,
            negative_pool: crate::evaluation::DEFAULT_NEGATIVE_POOL,
            subspaces: crate::evaluation::DEFAULT_SUBSPACES,
        }
    }
}

/// File locations recorded with a run so outputs are self-describing.
/// Empty strings mean "not used by this command".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathsConfig {
    pub data: String,
    pub store: String,
    pub labels: String,
    pub out_dir: String,
}

/// The complete, persistable configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every randomized component draws a sub-stream of it.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut config = RunConfig {
            seed: 42,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        };
        config.rederive_seeds();
        config
    }
}

impl RunConfig {
    /// Seed of the dataset generator sub-stream.
    pub fn dataset_seed(&self) -> u64 {
        substream_seed(self.seed, "dataset")
    }

    /// Re-derives dependent seeds after `seed` changes. The trainer owns a
    /// single RNG (batch sampling; initialization is deterministic), fed by
    /// the `batching` sub-stream.
    pub fn rederive_seeds(&mut self) {
        self.train.seed = substream_seed(self.seed, "batching");
    }

    /// Validates every embedded section.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.dataset.branching < 2 || self.dataset.depth == 0 || self.dataset.dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "dataset shape needs branching ≥ 2, depth ≥ 1, dim ≥ 2, got {} / {} / {}",
                self.dataset.branching, self.dataset.depth, self.dataset.dim
            )));
        }
        if !self.dataset.noise_sigma.is_finite() || self.dataset.noise_sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "noise_sigma must be finite and positive, got {}",
                self.dataset.noise_sigma
            )));
        }
        if self.eval.recall_k.is_empty() || self.eval.recall_k.contains(&0) {
            return Err(Error::InvalidParameter(
                "recall_k must list at least one positive cutoff".to_string(),
            ));
        }
        if self.eval.rank_threshold == 0 || self.eval.subspaces == 0 {
            return Err(Error::InvalidParameter(
                "rank_threshold and subspaces must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Renders the fully resolved configuration: fixed section order, every
    /// key present, values in Rust's shortest round-trip float form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[run]");
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "\n[dataset]");
        let _ = writeln!(out, "branching = {}", self.dataset.branching);
        let _ = writeln!(out, "depth = {}", self.dataset.depth);
        let _ = writeln!(out, "dim = {}", self.dataset.dim);
        let _ = writeln!(out, "noise_sigma = {}", self.dataset.noise_sigma);
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "steps = {}", self.train.steps);
        let _ = writeln!(out, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(out, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(out, "warmup_steps = {}", self.train.warmup_steps);
        let _ = writeln!(out, "weight_decay = {}", self.train.weight_decay);
        let _ = writeln!(out, "mode = {}", mode_name(self.train.mode));
        let _ = writeln!(out, "checkpoint_every = {}", self.train.checkpoint_every);
        let _ = writeln!(
            out,
            "scale_init = {}",
            match self.train.scale_init {
                Some(v) => v.to_string(),
                None => "default".to_string(),
            }
        );
        let _ = writeln!(out, "\n[loss]");
        let loss = &self.train.loss;
        let _ = writeln!(out, "gamma1 = {}", loss.gamma1);
        let _ = writeln!(out, "gamma2 = {}", loss.gamma2);
        let _ = writeln!(out, "beta = {}", loss.beta);
        let _ = writeln!(out, "eta = {}", loss.eta);
        let _ = writeln!(out, "c_const = {}", loss.c_const);
        let _ = writeln!(out, "tau_floor = {}", loss.tau_floor);
        let _ = writeln!(out, "norm_epsilon = {}", loss.norm_epsilon);
        let _ = writeln!(
            out,
            "contrastive_directions = {}",
            match loss.contrastive_directions {
                ContrastiveDirections::One => "one",
                ContrastiveDirections::Both => "both",
            }
        );
        let _ = writeln!(out, "stop_grad_h = {}", loss.stop_grad_h);
        let _ = writeln!(out, "\n[eval]");
        let ks: Vec<String> = self.eval.recall_k.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "recall_k = {}", ks.join(","));
        let _ = writeln!(out, "rank_threshold = {}", self.eval.rank_threshold);
        let _ = writeln!(out, "negative_pool = {}", self.eval.negative_pool);
        let _ = writeln!(out, "subspaces = {}", self.eval.subspaces);
        let _ = writeln!(out, "\n[paths]");
        let _ = writeln!(out, "data = {}", self.paths.data);
        let _ = writeln!(out, "store = {}", self.paths.store);
        let _ = writeln!(out, "labels = {}", self.paths.labels);
        let _ = writeln!(out, "out_dir = {}", self.paths.out_dir);
        out
    }

    /// Parses configuration text. Keys omitted from the text keep their
    /// defaults; unknown or repeated keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut section = String::new();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(path, line_no, "unterminated section header"))?
                    .trim();
                if !matches!(name, "run" | "dataset" | "train" | "loss" | "eval" | "paths") {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("unknown section `[{name}]`"),
                    ));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(path, line_no, "expected `key = value` or `[section]`")
            })?;
            let key = key.trim();
            let value = value.trim();
            if section.is_empty() {
                return Err(Error::parse(
                    path,
                    line_no,
                    "keys must appear inside a section",
                ));
            }
            let qualified = format!("{section}.{key}");
            if seen.contains(&qualified) {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate key `{qualified}`"),
                ));
            }
            seen.push(qualified.clone());
            apply_key(&mut config, &qualified, value)
                .map_err(|message| Error::parse(path, line_no, message))?;
        }
        config.rederive_seeds();
        config.validate()?;
        Ok(config)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path)
    }

    /// Writes the fully resolved configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// CLI/file name of a loss mode.
pub fn mode_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::Vanilla => "vanilla_ent",
        LossMode::AdaEnt => "adaent",
    }
}

/// Parses a loss-mode name as used by flags and config files.
pub fn parse_mode(name: &str) -> Result<LossMode> {
    match name {
        "vanilla_ent" | "vanilla" => Ok(LossMode::Vanilla),
        "adaent" => Ok(LossMode::AdaEnt),
        other => Err(Error::InvalidParameter(format!(
            "unknown loss mode `{other}` (expected vanilla_ent or adaent)"
        ))),
    }
}

fn apply_key(config: &mut RunConfig, qualified: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
        value
            .parse::<T>()
            .map_err(|_| format!("invalid value `{value}` for `{key}`"))
    }
    match qualified {
        "run.seed" => config.seed = num(value, qualified)?,
        "dataset.branching" => config.dataset.branching = num(value, qualified)?,
        "dataset.depth" => config.dataset.depth = num(value, qualified)?,
        "dataset.dim" => config.dataset.dim = num(value, qualified)?,
        "dataset.noise_sigma" => config.dataset.noise_sigma = num(value, qualified)?,
        "train.steps" => config.train.steps = num(value, qualified)?,
        "train.batch_size" => config.train.batch_size = num(value, qualified)?,
        "train.learning_rate" => config.train.learning_rate = num(value, qualified)?,
        "train.warmup_steps" => config.train.warmup_steps = num(value, qualified)?,
        "train.weight_decay" => config.train.weight_decay = num(value, qualified)?,
        "train.mode" => {
            config.train.mode = parse_mode(value).map_err(|e| e.to_string())?;
        }
        "train.checkpoint_every" => config.train.checkpoint_every = num(value, qualified)?,
        "train.scale_init" => {
            config.train.scale_init = if value == "default" {
                None
            } else {
                Some(num(value, qualified)?)
            };
        }
        "loss.gamma1" => config.train.loss.gamma1 = num(value, qualified)?,
        "loss.gamma2" => config.train.loss.gamma2 = num(value, qualified)?,
        "loss.beta" => config.train.loss.beta = num(value, qualified)?,
        "loss.eta" => config.train.loss.eta = num(value, qualified)?,
        "loss.c_const" => config.train.loss.c_const = num(value, qualified)?,
        "loss.tau_floor" => config.train.loss.tau_floor = num(value, qualified)?,
        "loss.norm_epsilon" => config.train.loss.norm_epsilon = num(value, qualified)?,
        "loss.contrastive_directions" => {
            config.train.loss.contrastive_directions = match value {
                "one" => ContrastiveDirections::One,
                "both" => ContrastiveDirections::Both,
                other => return Err(format!("unknown contrastive direction `{other}`")),
            };
        }
        "loss.stop_grad_h" => config.train.loss.stop_grad_h = num(value, qualified)?,
        "eval.recall_k" => {
            config.eval.recall_k = value
                .split(',')
                .map(|t| num(t.trim(), qualified))
                .collect::<std::result::Result<_, _>>()?;
        }
        "eval.rank_threshold" => config.eval.rank_threshold = num(value, qualified)?,
        "eval.negative_pool" => config.eval.negative_pool = num(value, qualified)?,
        "eval.subspaces" => config.eval.subspaces = num(value, qualified)?,
        "paths.data" => config.paths.data = value.to_string(),
        "paths.store" => config.paths.store = value.to_string(),
        "paths.labels" => config.paths.labels = value.to_string(),
        "paths.out_dir" => config.paths.out_dir = value.to_string(),
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}
