//! Desk-scale optimization loop embedding a concept tree into Lorentz space.
//!
//! There is no encoder: each (node, view) owns a free tangent-space
//! parameter row, initialized to the node's raw feature vector. The
//! effective embedding of a row `w` is `exp_o(scale · w)` at the current
//! curvature, so the stored parameters stay in flat coordinates while the
//! scalars (`κ`, `τ`, `scale`) move them on the manifold.
//!
//! One step: draw `min(batch_size, node_count)` distinct nodes uniformly
//! from the seeded stream, assemble their A/B rows into a batch, attach the
//! inter pair of every sampled node and the intra pairs of every tree edge
//! whose endpoints were both sampled, evaluate the objective with analytic
//! gradients, and apply one adaptive-moment update with decoupled weight
//! decay (first/second moment decay 0.9/0.999, epsilon 1e-8). Decay applies
//! only to embedding rows (default 0) — never to scalars, which are updated
//! in log space and hard-clamped afterwards. A zero learning rate (including
//! the very first warmup step) skips the optimizer entirely: parameters,
//! moments, and scalars stay untouched and only the step counter and batch
//! RNG advance.
//!
//! The learning rate follows a linear warmup from 0 to the configured
//! maximum over `warmup_steps`, then a cosine decay to 0 at `steps`.
//!
//! Checkpoints are binary: magic `LECP`, little-endian `u32` version, `u64`
//! payload length, then the payload in this exact field order, all integers
//! and doubles little-endian:
//!
//! 1. `u32` node_count, `u32` dim
//! 2. `u64` step counter, `u64` optimizer-application counter
//! 3. `f64 × 3` log-scalars (ln κ, ln τ, ln scale)
//! 4. `f64 × 3` scalar first moments, `f64 × 3` scalar second moments
//! 5. parameter rows: `2 · node_count × dim` doubles, A block then B block
//! 6. first-moment rows, then second-moment rows, same shape
//! 7. 32 bytes of RNG seed, `u128` RNG word position
//!
//! Restoring a checkpoint reproduces the uninterrupted run bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{exp_map_origin, TangentVector};
use crate::hierarchy::{HierarchyDataset, Modality};
use crate::losses::{
    self, Batch, LossConfig, LossMode, LossValue, ModelScalars, PairRelation,
};
use crate::store::{node_embedding_id, ByteReader, EmbeddingRecord, EmbeddingStore, Role};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Desk-scale defaults: the full pipeline runs in minutes on one core.
pub const DEFAULT_STEPS: u64 = 2000;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_WARMUP_STEPS: u64 = 100;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

/// Bins in a norm histogram.
pub const NORM_BINS: usize = 64;

const CHECKPOINT_MAGIC: &[u8; 4] = b"LECP";
const CHECKPOINT_VERSION: u32 = 1;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Maximum learning rate reached at the end of warmup. Zero is allowed
    /// as a diagnostic configuration (steps become counting no-ops).
    pub learning_rate: f64,
    pub warmup_steps: u64,
    /// Decoupled weight decay on embedding rows only; scalars are exempt.
    pub weight_decay: f64,
    /// Seeds the batch-sampling stream.
    pub seed: u64,
    pub mode: LossMode,
    pub loss: LossConfig,
    /// Checkpoint cadence for the command-line runner; 0 disables.
    pub checkpoint_every: u64,
    /// Initial value of the learnable scale; `None` uses 1/√512.
    pub scale_init: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: DEFAULT_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            weight_decay: 0.0,
            seed: 0,
            mode: LossMode::AdaEnt,
            loss: LossConfig::default(),
            checkpoint_every: 0,
            scale_init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidParameter(
                "steps must be at least 1".to_string(),
            ));
        }
        if self.warmup_steps >= self.steps {
            return Err(Error::InvalidParameter(format!(
                "warmup_steps ({}) must be smaller than steps ({})",
                self.warmup_steps, self.steps
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParameter(
                "batch_size must be at least 1".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "weight_decay must be finite and nonnegative, got {}",
                self.weight_decay
            )));
        }
        if let Some(s) = self.scale_init {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "scale_init must be finite and positive, got {s}"
                )));
            }
        }
        self.loss.validate()
    }

    pub fn scale_init_value(&self) -> f64 {
        self.scale_init.unwrap_or_else(losses::scale_init)
    }
}

/// Everything that evolves during training. Equality is bit-exact,
/// including the RNG cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    node_count: usize,
    dim: usize,
    step: u64,
    opt_steps: u64,
    scalars: ModelScalars,
    scalar_m: [f64; 3],
    scalar_v: [f64; 3],
    /// `2 · node_count` rows: A block then B block.
    params: Vec<Vec<f64>>,
    moment1: Vec<Vec<f64>>,
    moment2: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scalars(&self) -> &ModelScalars {
        &self.scalars
    }

    /// Raw parameter rows, A block `[0, n)` then B block `[n, 2n)`.
    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param(&self, node: usize, modality: Modality) -> &[f64] {
        match modality {
            Modality::A => &self.params[node],
            Modality::B => &self.params[self.node_count + node],
        }
    }

    /// Overwrites one parameter row (experiment plumbing).
    pub fn set_param(&mut self, row: usize, values: &[f64]) -> Result<()> {
        if row >= self.params.len() {
            return Err(Error::InvalidParameter(format!(
                "parameter row {row} out of range [0, {})",
                self.params.len()
            )));
        }
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "parameter rows must hold finite values".to_string(),
            ));
        }
        self.params[row] = values.to_vec();
        Ok(())
    }

    /// Replaces the learnable scalars (experiment plumbing).
    pub fn set_scalars(&mut self, scalars: ModelScalars) {
        self.scalars = scalars;
    }

    /// Effective embedding of one row: `exp_o(scale · w)`.
    pub fn embedded(&self, node: usize, modality: Modality) -> Result<crate::geometry::LorentzPoint> {
        let w = self.param(node, modality);
        let scale = self.scalars.scale();
        let scaled: Vec<f64> = w.iter().map(|x| scale * x).collect();
        Ok(exp_map_origin(&TangentVector::new(scaled)?, self.scalars.curvature()))
    }

    /// Spatial norm of the effective embedding without building the point:
    /// `sinh(√κ · scale · ‖w‖) / √κ`.
    fn embedded_norm(&self, row: usize) -> f64 {
        let u = self.scalars.curvature().sqrt();
        let r: f64 = self.params[row].iter().map(|x| x * x).sum::<f64>().sqrt();
        (u * self.scalars.scale() * r).sinh() / u
    }
}

/// One executed step of the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Zero-based index of the executed step.
    pub step: u64,
    pub learning_rate: f64,
    /// Objective on the sampled batch, before the update.
    pub loss: LossValue,
    /// Scalars after the update.
    pub kappa: f64,
    pub tau: f64,
    pub scale: f64,
}

/// Histogram of embedded spatial norms with summary moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NormHistogram {
    pub count: usize,
    /// `NORM_BINS + 1` uniform edges over the observed range.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
    /// Fraction of norms strictly below the invalid-region boundary.
    pub invalid_fraction: f64,
}

impl NormHistogram {
    fn from_norms(norms: &[f64], boundary: f64) -> NormHistogram {
        let count = norms.len();
        if count == 0 {
            return NormHistogram {
                count: 0,
                bin_edges: vec![0.0; NORM_BINS + 1],
                counts: vec![0; NORM_BINS],
                mean: 0.0,
                variance: 0.0,
                invalid_fraction: 0.0,
            };
        }
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = if max > min { max - min } else { 1.0 };
        let bin_edges: Vec<f64> = (0..=NORM_BINS)
            .map(|i| min + width * i as f64 / NORM_BINS as f64)
            .collect();
        let mut counts = vec![0u64; NORM_BINS];
        for &x in norms {
            let idx = (((x - min) / width) * NORM_BINS as f64) as usize;
            counts[idx.min(NORM_BINS - 1)] += 1;
        }
        let mean = norms.iter().sum::<f64>() / count as f64;
        let variance = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
        let invalid = norms.iter().filter(|&&x| x < boundary).count();
        NormHistogram {
            count,
            bin_edges,
            counts,
            mean,
            variance,
            invalid_fraction: invalid as f64 / count as f64,
        }
    }
}

/// Norm distributions at the current scalars, overall and per view, plus
/// the subset living at internal (parent) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStatistics {
    /// Invalid-region boundary `2C/√κ` at the current curvature.
    pub boundary: f64,
    pub all: NormHistogram,
    pub view_a: NormHistogram,
    pub view_b: NormHistogram,
    pub parents: NormHistogram,
}

/// Linear warmup to the configured maximum, then cosine decay to zero.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    let max = config.learning_rate;
    if config.warmup_steps > 0 && step < config.warmup_steps {
        return max * step as f64 / config.warmup_steps as f64;
    }
    let span = (config.steps - config.warmup_steps) as f64;
    let progress = ((step - config.warmup_steps) as f64 / span).min(1.0);
    0.5 * max * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// The static side of a run: tree structure, features, and configuration.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    node_count: usize,
    dim: usize,
    /// Feature rows in parameter layout (A block then B block).
    features: Vec<Vec<f64>>,
    levels: Vec<usize>,
    edges: Vec<(usize, usize)>,
    is_parent: Vec<bool>,
}

impl Trainer {
    pub fn new(dataset: &HierarchyDataset, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        dataset.validate()?;
        let n = dataset.len();
        let mut features = Vec::with_capacity(2 * n);
        for node in dataset.nodes() {
            features.push(node.feature_a.clone());
        }
        for node in dataset.nodes() {
            features.push(node.feature_b.clone());
        }
        let levels = dataset.nodes().iter().map(|n| n.level).collect();
        let edges = dataset.edges();
        let mut is_parent = vec![false; n];
        for &(_, parent) in &edges {
            is_parent[parent] = true;
        }
        Ok(Trainer {
            config,
            node_count: n,
            dim: dataset.dim(),
            features,
            levels,
            edges,
            is_parent,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Fresh state: parameter rows are the raw features (the configured
    /// scale multiplies them inside the loss), scalars at their standard
    /// initial values, moments zeroed, RNG seeded from the config.
    pub fn init_state(&self) -> Result<TrainState> {
        let scalars = ModelScalars::with_values(
            losses::KAPPA_INIT,
            losses::TAU_INIT,
            self.config.scale_init_value(),
        )?;
        let zero_rows = vec![vec![0.0; self.dim]; 2 * self.node_count];
        Ok(TrainState {
            node_count: self.node_count,
            dim: self.dim,
            step: 0,
            opt_steps: 0,
            scalars,
            scalar_m: [0.0; 3],
            scalar_v: [0.0; 3],
            params: self.features.clone(),
            moment1: zero_rows.clone(),
            moment2: zero_rows,
            rng: ChaCha8Rng::seed_from_u64(self.config.seed),
        })
    }

    /// Draws the step's node sample and assembles the loss batch. Returns
    /// the sampled node ids alongside the batch.
    fn sample_batch(&self, state: &mut TrainState) -> Result<(Vec<usize>, Batch)> {
        let n = self.node_count;
        let k = self.config.batch_size.min(n);
        let ids = rand::seq::index::sample(&mut state.rng, n, k).into_vec();
        let mut pos = vec![usize::MAX; n];
        for (p, &id) in ids.iter().enumerate() {
            pos[id] = p;
        }
        let left: Result<Vec<TangentVector>> = ids
            .iter()
            .map(|&id| TangentVector::new(state.params[id].clone()))
            .collect();
        let right: Result<Vec<TangentVector>> = ids
            .iter()
            .map(|&id| TangentVector::new(state.params[n + id].clone()))
            .collect();
        let mut pairs = Vec::with_capacity(k + 2 * self.edges.len());
        for p in 0..k {
            pairs.push((p, k + p, PairRelation::Inter));
        }
        for &(child, parent) in &self.edges {
            if pos[child] != usize::MAX && pos[parent] != usize::MAX {
                pairs.push((pos[child], pos[parent], PairRelation::Intra));
                pairs.push((k + pos[child], k + pos[parent], PairRelation::Intra));
            }
        }
        Ok((ids, Batch::new(left?, right?, pairs)?))
    }

    /// One optimization step. The returned record holds the loss measured
    /// on the sampled batch before the update and the scalars after it.
    pub fn train_step(&self, state: &mut TrainState) -> Result<StepRecord> {
        if state.node_count != self.node_count || state.dim != self.dim {
            return Err(Error::InvalidParameter(format!(
                "state shape ({} nodes × {}) does not match the trainer ({} nodes × {})",
                state.node_count, state.dim, self.node_count, self.dim
            )));
        }
        let step = state.step;
        let lr = lr_schedule(step, &self.config);
        let k = self.config.batch_size.min(self.node_count);
        let (ids, batch) = self.sample_batch(state)?;
        let (loss, grads) =
            losses::loss_gradients(&batch, &state.scalars, &self.config.loss, self.config.mode)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { pairs, .. } => Error::NonFiniteLoss {
                        step,
                        pairs: pairs
                            .iter()
                            .map(|&(s, g)| (self.global_row(&ids, k, s), self.global_row(&ids, k, g)))
                            .collect(),
                    },
                    other => other,
                })?;

        if lr > 0.0 {
            let t = state.opt_steps + 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
            let decay = self.config.weight_decay;

            // Scatter the batch gradients into dense rows, then update every
            // parameter row (momentum keeps moving rows outside the batch).
            let mut grad_rows = vec![vec![0.0; self.dim]; 2 * self.node_count];
            for (p, &id) in ids.iter().enumerate() {
                grad_rows[id] = grads.left[p].clone();
                grad_rows[self.node_count + id] = grads.right[p].clone();
            }
            for row in 0..2 * self.node_count {
                for d in 0..self.dim {
                    let g = grad_rows[row][d];
                    let m = &mut state.moment1[row][d];
                    let v = &mut state.moment2[row][d];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPSILON)
                        + decay * state.params[row][d];
                    state.params[row][d] -= lr * update;
                }
            }

            // Scalars live in log space: ∂L/∂ln s = s · ∂L/∂s. No decay.
            let raw = [grads.kappa, grads.tau, grads.scale];
            let mut logs = state.scalars.log_values();
            for j in 0..3 {
                let g = raw[j] * logs[j].exp();
                let m = &mut state.scalar_m[j];
                let v = &mut state.scalar_v[j];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                logs[j] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPSILON);
            }
            state.scalars.set_log_values(logs)?;
            state.scalars.clamp(self.config.loss.tau_floor);
            state.opt_steps += 1;

            for row in &state.params {
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "parameters became non-finite after step {step}"
                    )));
                }
            }
        }

        state.step += 1;
        Ok(StepRecord {
            step,
            learning_rate: lr,
            loss,
            kappa: state.scalars.kappa(),
            tau: state.scalars.tau(),
            scale: state.scalars.scale(),
        })
    }

    /// Maps a batch-local parameter index back to the global row layout
    /// for diagnostics: `[0, n)` A rows, `[n, 2n)` B rows.
    fn global_row(&self, ids: &[usize], k: usize, local: usize) -> usize {
        if local < k {
            ids[local]
        } else {
            self.node_count + ids[local - k]
        }
    }

    /// Runs `steps` additional steps, returning one record per step.
    pub fn run(&self, state: &mut TrainState, steps: u64) -> Result<Vec<StepRecord>> {
        let mut trace = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            trace.push(self.train_step(state)?);
        }
        Ok(trace)
    }

    /// Norm distributions of the effective embeddings at the current
    /// scalars: overall, per view, and over rows belonging to parent
    /// (internal) nodes.
    pub fn norm_statistics(&self, state: &TrainState) -> NormStatistics {
        let n = self.node_count;
        let norms: Vec<f64> = (0..2 * n).map(|row| state.embedded_norm(row)).collect();
        let boundary = 2.0 * self.config.loss.c_const / state.scalars.curvature().sqrt();
        let parent_norms: Vec<f64> = (0..2 * n)
            .filter(|&row| self.is_parent[row % n])
            .map(|row| norms[row])
            .collect();
        NormStatistics {
            boundary,
            all: NormHistogram::from_norms(&norms, boundary),
            view_a: NormHistogram::from_norms(&norms[..n], boundary),
            view_b: NormHistogram::from_norms(&norms[n..], boundary),
            parents: NormHistogram::from_norms(&parent_norms, boundary),
        }
    }

    /// Materializes every (node, view) embedding into a store at the
    /// current curvature.
    pub fn export_store(&self, state: &TrainState) -> Result<EmbeddingStore> {
        let mut store = EmbeddingStore::new(state.scalars.curvature());
        for node in 0..self.node_count {
            for modality in [Modality::A, Modality::B] {
                let role = match modality {
                    Modality::A => Role::NodeA,
                    Modality::B => Role::NodeB,
                };
                store.push(EmbeddingRecord {
                    id: node_embedding_id(node, modality),
                    role,
                    level: self.levels[node] as i32,
                    point: state.embedded(node, modality)?,
                })?;
            }
        }
        Ok(store)
    }

    /// Writes the embedding store to disk; a `.lemb` extension selects the
    /// binary twin, anything else the text format.
    pub fn export_embeddings(&self, state: &TrainState, path: &Path) -> Result<()> {
        let store = self.export_store(state)?;
        if path.extension().is_some_and(|e| e == "lemb") {
            store.save_binary(path)
        } else {
            store.save_text(path)
        }
    }
}

fn push_rows(out: &mut Vec<u8>, rows: &[Vec<f64>]) {
    for row in rows {
        for &x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Serializes the state to the checkpoint format described in the module
/// documentation.
pub fn checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    payload.extend_from_slice(&(state.node_count as u32).to_le_bytes());
    payload.extend_from_slice(&(state.dim as u32).to_le_bytes());
    payload.extend_from_slice(&state.step.to_le_bytes());
    payload.extend_from_slice(&state.opt_steps.to_le_bytes());
    for x in state.scalars.log_values() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    for x in state.scalar_m {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    for x in state.scalar_v {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    push_rows(&mut payload, &state.params);
    push_rows(&mut payload, &state.moment1);
    push_rows(&mut payload, &state.moment2);
    payload.extend_from_slice(&state.rng.get_seed());
    payload.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());

    let mut out: Vec<u8> = Vec::with_capacity(payload.len() + 16);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_rows(
    r: &mut ByteReader,
    path: &Path,
    rows: usize,
    dim: usize,
    what: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(r.f64(path, what)?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Reads a checkpoint back into a state that continues bit-identically.
pub fn restore(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(Error::parse(path, 0, "not a checkpoint (bad magic)"));
    }
    let mut r = ByteReader::new(&bytes, 4);
    let version = r.u32(path, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: format!("v{version}"),
            expected: format!("v{CHECKPOINT_VERSION}"),
        });
    }
    let payload_len = r.u64(path, "payload length")? as usize;
    if r.remaining() != payload_len {
        return Err(Error::parse(
            path,
            0,
            format!(
                "payload length field says {payload_len} bytes, file holds {}",
                r.remaining()
            ),
        ));
    }
    let node_count = r.u32(path, "node count")? as usize;
    let dim = r.u32(path, "dim")? as usize;
    let step = r.u64(path, "step")?;
    let opt_steps = r.u64(path, "optimizer step count")?;
    let mut logs = [0.0; 3];
    let mut scalar_m = [0.0; 3];
    let mut scalar_v = [0.0; 3];
    for slot in logs.iter_mut() {
        *slot = r.f64(path, "log scalar")?;
    }
    for slot in scalar_m.iter_mut() {
        *slot = r.f64(path, "scalar first moment")?;
    }
    for slot in scalar_v.iter_mut() {
        *slot = r.f64(path, "scalar second moment")?;
    }
    let params = read_rows(&mut r, path, 2 * node_count, dim, "parameter row")?;
    let moment1 = read_rows(&mut r, path, 2 * node_count, dim, "first-moment row")?;
    let moment2 = read_rows(&mut r, path, 2 * node_count, dim, "second-moment row")?;
    let seed: [u8; 32] = r
        .take(32, path, "rng seed")?
        .try_into()
        .expect("32 bytes");
    let word_pos = r.u128(path, "rng word position")?;
    if r.remaining() != 0 {
        return Err(Error::parse(
            path,
            0,
            format!("checkpoint holds {} trailing bytes", r.remaining()),
        ));
    }
    if params.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::parse(path, 0, "checkpoint holds non-finite parameters"));
    }
    let mut scalars = ModelScalars::default_init();
    scalars.set_log_values(logs)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        node_count,
        dim,
        step,
        opt_steps,
        scalars,
        scalar_m,
        scalar_v,
        params,
        moment1,
        moment2,
        rng,
    })
}
