//! Training objectives on the hyperboloid and their analytic gradients.
//!
//! A batch holds two families of tangent parameters at the origin, `left`
//! (structure-side) and `right` (caption-side). A learnable positive `scale`
//! multiplies every parameter before the exponential map, so the embedding of
//! parameter `w` is `x = exp_o(scale · w)`. Three objectives are combined:
//!
//! * **Contrastive alignment.** With similarity `s(x, y) = −d(x, y)` and
//!   temperature `τ`, each left item is scored against every right item and
//!   the mean cross-entropy of picking its own partner is taken; the symmetric
//!   variant averages the same term computed in both directions.
//! * **Entailment.** For an ordered pair (specific `x`, general `y`) the
//!   exterior angle `φ(x, y)` is compared against the half-aperture `ω(y)` of
//!   the entailment cone at `y`. The plain hinge is `max(0, φ − η·ω)`. The
//!   adaptive variant replaces the hinge by `huber(h · φ, β)` where the weight
//!   `h` is 1 for inter-family pairs and `1 − exp(−d(x, y))` for intra-family
//!   pairs, so coincident intra pairs exert no pull and the aperture drops out
//!   of the objective entirely.
//! * **Norm regularizer.** `‖x̃‖² − log ‖x̃‖` per embedding keeps spatial norms
//!   away from both the origin (where angles degenerate) and infinity.
//!
//! The total is `contrastive + γ₁ · entailment-term + γ₂ · regularizer`, with
//! the entailment term chosen by [`LossMode`].
//!
//! Gradients are computed in closed form by reverse accumulation. Every
//! pairwise quantity (distance, exterior angle, half-aperture) depends on a
//! pair of scaled tangents `(v_x, v_y)` only through the invariants
//! `r_x = ‖v_x‖`, `r_y = ‖v_y‖`, `v_x · v_y` and the curvature `κ`:
//! with `u = √κ`, `A = u·r_x`, `B = u·r_y` and `ĉ` the cosine between the
//! tangents,
//!
//! ```text
//! cosh(u·d)  = cosh A cosh B − sinh A sinh B ĉ      (law of cosines at o)
//! cos(π − φ) = (cosh B cosh C − cosh A) / (sinh B sinh C),  C = u·d
//! sin ω(y)   = 2·C_CONST / sinh B                   (√κ‖ỹ‖ = sinh B)
//! ```
//!
//! Adjoints of `A`, `B`, `ĉ` and `κ` are accumulated per pair and mapped back
//! to the tangent parameters at the end. Scalar gradients are reported for
//! the *raw* scalars `(κ, τ, scale)`; optimizers that store logarithms apply
//! their own chain-rule factor. All reductions run in a fixed order, so
//! results are bit-reproducible for a given batch.
//!
//! Non-finite results are reported as structured errors naming the offending
//! pairs rather than silently propagating NaN into an optimizer step.

use crate::error::{Error, Result};
use crate::geometry::{
    self, clamp_acosh_arg, clamp_unit, Curvature, LorentzPoint, TangentVector,
};

/// Relation carried by an ordered entailment pair (specific, general).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairRelation {
    /// Cross-family pair (structure vs caption); adaptive weight 1.
    Inter,
    /// Same-family pair; adaptive weight `1 − exp(−d)`.
    Intra,
}

/// Which entailment term enters the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Hinge on the cone violation, `max(0, φ − η·ω)`.
    Vanilla,
    /// Distance-weighted Huber on the exterior angle, `huber(h·φ, β)`.
    AdaEnt,
}

/// Directions used by the contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastiveDirections {
    /// Rows only: each left item against all right items.
    One,
    /// Mean of row-wise and column-wise cross-entropies.
    Both,
}

/// Default curvature at initialization.
pub const KAPPA_INIT: f64 = 1.0;
/// Lower clamp for the curvature.
pub const KAPPA_MIN: f64 = 0.1;
/// Upper clamp for the curvature.
pub const KAPPA_MAX: f64 = 1.0;
/// Default softmax temperature at initialization.
pub const TAU_INIT: f64 = 0.07;
/// Default lower clamp for the temperature.
pub const TAU_FLOOR: f64 = 0.01;

/// Default tangent scale at initialization, `1/√512`.
pub fn scale_init() -> f64 {
    1.0 / (512.0f64).sqrt()
}

/// The three learnable scalars, stored as logarithms so optimizer steps are
/// multiplicative and positivity is structural.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScalars {
    log_kappa: f64,
    log_tau: f64,
    log_scale: f64,
}

impl ModelScalars {
    /// Scalars at their default initial values (κ = 1, τ = 0.07, scale = 1/√512).
    pub fn default_init() -> Self {
        Self::with_values(KAPPA_INIT, TAU_INIT, scale_init())
            .expect("default scalar values are valid")
    }

    /// Builds scalars from raw (non-log) values; each must be finite and positive.
    pub fn with_values(kappa: f64, tau: f64, scale: f64) -> Result<Self> {
        for (name, v) in [("kappa", kappa), ("tau", tau), ("scale", scale)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "scalar {name} must be finite and positive, got {v}"
                )));
            }
        }
        Ok(Self {
            log_kappa: kappa.ln(),
            log_tau: tau.ln(),
            log_scale: scale.ln(),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Curvature newtype for geometry calls.
    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.kappa()).expect("stored curvature is positive and finite")
    }

    /// Log-space view `[ln κ, ln τ, ln scale]` for optimizers.
    pub fn log_values(&self) -> [f64; 3] {
        [self.log_kappa, self.log_tau, self.log_scale]
    }

    /// Overwrites the log-space values (as after an optimizer step).
    pub fn set_log_values(&mut self, values: [f64; 3]) -> Result<()> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "log-space scalar update produced a non-finite value".to_string(),
            ));
        }
        self.log_kappa = values[0];
        self.log_tau = values[1];
        self.log_scale = values[2];
        Ok(())
    }

    /// Clamps κ to `[KAPPA_MIN, KAPPA_MAX]` and τ to `[tau_floor, ∞)`.
    /// The scale is unclamped (positivity is structural in log space).
    pub fn clamp(&mut self, tau_floor: f64) {
        self.log_kappa = self.log_kappa.clamp(KAPPA_MIN.ln(), KAPPA_MAX.ln());
        if self.log_tau < tau_floor.ln() {
            self.log_tau = tau_floor.ln();
        }
    }
}

/// Weights and thresholds of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the entailment term.
    pub gamma1: f64,
    /// Weight of the norm regularizer.
    pub gamma2: f64,
    /// Huber transition point for the adaptive entailment term.
    pub beta: f64,
    /// Aperture multiplier in the hinge `max(0, φ − η·ω)`.
    pub eta: f64,
    /// Cone-width constant fed to the half-aperture.
    pub c_const: f64,
    /// Lower clamp for the temperature; evaluation rejects τ below it.
    pub tau_floor: f64,
    /// Floor inside the regularizer logarithm, guarding `log 0`.
    pub norm_epsilon: f64,
    /// Row-only or symmetric contrastive term.
    pub contrastive_directions: ContrastiveDirections,
    /// When set, the adaptive weight `h` is treated as a constant in the
    /// backward pass (no gradient flows through the distance inside `h`).
    pub stop_grad_h: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma1: 0.1,
            gamma2: 0.1,
            beta: 0.5,
            eta: 1.0,
            c_const: 0.1,
            tau_floor: TAU_FLOOR,
            norm_epsilon: 1e-6,
            contrastive_directions: ContrastiveDirections::Both,
            stop_grad_h: false,
        }
    }
}

impl LossConfig {
    /// Rejects non-positive or non-finite thresholds and weights.
    pub fn validate(&self) -> Result<()> {
        for (name, v, must_be_positive) in [
            ("gamma1", self.gamma1, false),
            ("gamma2", self.gamma2, false),
            ("beta", self.beta, true),
            ("eta", self.eta, true),
            ("c_const", self.c_const, true),
            ("tau_floor", self.tau_floor, true),
            ("norm_epsilon", self.norm_epsilon, true),
        ] {
            if !v.is_finite() || v < 0.0 || (must_be_positive && v == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "loss config field {name} must be finite and {}, got {v}",
                    if must_be_positive {
                        "positive"
                    } else {
                        "non-negative"
                    }
                )));
            }
        }
        Ok(())
    }
}

/// A batch of tangent parameters plus the ordered entailment pairs over them.
///
/// Pair endpoints index the concatenation `[left, right]`: indices in
/// `[0, n)` refer to `left`, indices in `[n, 2n)` to `right`.
#[derive(Debug, Clone)]
pub struct Batch {
    left: Vec<TangentVector>,
    right: Vec<TangentVector>,
    pairs: Vec<(usize, usize, PairRelation)>,
}

impl Batch {
    /// Validates family sizes, dimensions, and pair indices.
    pub fn new(
        left: Vec<TangentVector>,
        right: Vec<TangentVector>,
        pairs: Vec<(usize, usize, PairRelation)>,
    ) -> Result<Self> {
        if left.is_empty() || left.len() != right.len() {
            return Err(Error::InvalidParameter(format!(
                "batch families must be non-empty and equal-sized, got {} left / {} right",
                left.len(),
                right.len()
            )));
        }
        let dim = left[0].dim();
        for v in left.iter().chain(right.iter()) {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
        }
        let limit = 2 * left.len();
        for &(s, g, _) in &pairs {
            if s >= limit || g >= limit {
                return Err(Error::InvalidParameter(format!(
                    "entailment pair ({s}, {g}) indexes outside [0, {limit})"
                )));
            }
            if s == g {
                return Err(Error::InvalidParameter(format!(
                    "entailment pair ({s}, {g}) repeats one endpoint"
                )));
            }
        }
        Ok(Self { left, right, pairs })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.left[0].dim()
    }

    pub fn left(&self) -> &[TangentVector] {
        &self.left
    }

    pub fn right(&self) -> &[TangentVector] {
        &self.right
    }

    pub fn pairs(&self) -> &[(usize, usize, PairRelation)] {
        &self.pairs
    }

    /// Parameter at a concatenated index in `[0, 2n)`.
    fn param(&self, index: usize) -> &TangentVector {
        if index < self.left.len() {
            &self.left[index]
        } else {
            &self.right[index - self.left.len()]
        }
    }
}

/// Evaluated objective, with every component reported regardless of which
/// mode contributed to the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// `contrastive + γ₁ · (mode term) + γ₂ · regularizer`.
    pub total: f64,
    /// Symmetric (or row-only) InfoNCE over the batch.
    pub contrastive: f64,
    /// Mean hinge `max(0, φ − η·ω)` over usable pairs.
    pub entailment: f64,
    /// Mean `huber(h·φ, β)` over usable pairs.
    pub adaent: f64,
    /// Mean `‖x̃‖² − log ‖x̃‖` over all embeddings.
    pub regularizer: f64,
    /// Pairs dropped because both endpoints held identical parameters.
    pub skipped_pairs: usize,
}

/// Gradients of the total objective with respect to the raw tangent
/// parameters and the raw (non-log) scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub kappa: f64,
    pub tau: f64,
    pub scale: f64,
}

/// Similarity used by the contrastive term: negated geodesic distance.
pub fn similarity(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    Ok(-geometry::geodesic_distance(x, y)?)
}

/// Huber penalty: `z²/2` within `[−β, β]`, linear continuation outside.
pub fn huber(z: f64, beta: f64) -> f64 {
    assert!(
        beta > 0.0 && beta.is_finite(),
        "huber transition must be finite and positive"
    );
    let az = z.abs();
    if az <= beta {
        0.5 * z * z
    } else {
        beta * (az - 0.5 * beta)
    }
}

/// Adaptive entailment weight: 1 for inter pairs, `1 − exp(−d)` for intra.
/// Coincident intra inputs have distance 0 by definition, so the weight is
/// exactly 0 there regardless of rounding in the distance kernel.
pub fn adaptive_weight(x: &LorentzPoint, y: &LorentzPoint, relation: PairRelation) -> Result<f64> {
    match relation {
        PairRelation::Inter => Ok(1.0),
        PairRelation::Intra => {
            if x == y {
                return Ok(0.0);
            }
            Ok(1.0 - (-geometry::geodesic_distance(x, y)?).exp())
        }
    }
}

/// Cone-violation hinge `max(0, φ(x, y) − η·ω(y))` for the ordered pair
/// (specific `x`, general `y`).
pub fn entailment_loss(x: &LorentzPoint, y: &LorentzPoint, eta: f64, c_const: f64) -> Result<f64> {
    let phi = geometry::exterior_angle(x, y)?;
    let omega = geometry::half_aperture(y, c_const)?;
    Ok((phi.radians() - eta * omega.radians()).max(0.0))
}

/// Adaptive entailment penalty `huber(h·φ, β)`. Returns zero when the
/// adaptive weight vanishes, without evaluating the (then undefined) angle.
pub fn adaent_loss(
    x: &LorentzPoint,
    y: &LorentzPoint,
    relation: PairRelation,
    beta: f64,
) -> Result<f64> {
    let h = adaptive_weight(x, y, relation)?;
    if h == 0.0 {
        return Ok(0.0);
    }
    let phi = geometry::exterior_angle(x, y)?;
    Ok(huber(h * phi.radians(), beta))
}

/// Norm regularizer `‖x̃‖² − log(max(‖x̃‖, ε))`, minimized at `‖x̃‖ = 1/√2`.
pub fn norm_regularizer(x: &LorentzPoint, norm_epsilon: f64) -> f64 {
    let n = x.spatial_norm();
    n * n - n.max(norm_epsilon).ln()
}

/// Contrastive term of a batch under explicit temperature and curvature,
/// with parameters taken as the tangents themselves (unit scale). Rejects
/// temperatures below the default floor.
pub fn contrastive_loss(batch: &Batch, tau: f64, kappa: Curvature) -> Result<f64> {
    let scalars = ModelScalars::with_values(kappa.get(), tau, 1.0)?;
    let cfg = LossConfig {
        gamma1: 0.0,
        gamma2: 0.0,
        ..LossConfig::default()
    };
    let (value, _) = evaluate(batch, &scalars, &cfg, LossMode::AdaEnt, false)?;
    Ok(value.contrastive)
}

/// Evaluates the combined objective.
pub fn total_loss(
    batch: &Batch,
    scalars: &ModelScalars,
    cfg: &LossConfig,
    mode: LossMode,
) -> Result<LossValue> {
    let (value, _) = evaluate(batch, scalars, cfg, mode, false)?;
    Ok(value)
}

/// Evaluates the combined objective together with its analytic gradients.
pub fn loss_gradients(
    batch: &Batch,
    scalars: &ModelScalars,
    cfg: &LossConfig,
    mode: LossMode,
) -> Result<(LossValue, Gradients)> {
    let (value, grads) = evaluate(batch, scalars, cfg, mode, true)?;
    Ok((value, grads.expect("gradients requested")))
}

/// Reverse-accumulation record for one ordered pair of scaled tangents.
///
/// Forward caches the rescaled side lengths `A = √κ‖v_x‖`, `B = √κ‖v_y‖`,
/// the tangent cosine `ĉ`, and the comparison side `C = √κ·d`. Backward
/// seeds flow into the adjoints of `A`, `B`, `ĉ`, `κ`; `finalize` maps them
/// onto `(‖v_x‖, ‖v_y‖, v_x·v_y, κ)` adjoints for the caller to scatter
/// into tangent-space gradients.
struct PairChain {
    u: f64,
    rx: f64,
    ry: f64,
    chat: f64,
    b: f64,
    c: f64,
    sinh_a: f64,
    cosh_a: f64,
    sinh_b: f64,
    cosh_b: f64,
    sinh_c: f64,
    cosh_c: f64,
    /// Raw (unclamped) law-of-cosines value `cosh C`; gradients through the
    /// distance vanish when it does not exceed 1.
    p_raw: f64,
    /// Raw angle cosine fed to `acos`; gradients through the angle vanish
    /// when it falls outside (−1, 1).
    q_raw: Option<f64>,
    bar_a: f64,
    bar_b: f64,
    bar_chat: f64,
    bar_kappa: f64,
}

impl PairChain {
    fn new(vx: &[f64], vy: &[f64], kappa: f64) -> Self {
        let u = kappa.sqrt();
        let rx = geometry::dot(vx, vx).sqrt();
        let ry = geometry::dot(vy, vy).sqrt();
        let dotp = geometry::dot(vx, vy);
        let chat = if rx > 0.0 && ry > 0.0 {
            dotp / (rx * ry)
        } else {
            0.0
        };
        let a = u * rx;
        let b = u * ry;
        let (sinh_a, cosh_a) = (a.sinh(), a.cosh());
        let (sinh_b, cosh_b) = (b.sinh(), b.cosh());
        let p_raw = cosh_a * cosh_b - sinh_a * sinh_b * chat;
        let c = clamp_acosh_arg(p_raw).acosh();
        Self {
            u,
            rx,
            ry,
            chat,
            b,
            c,
            sinh_a,
            cosh_a,
            sinh_b,
            cosh_b,
            sinh_c: c.sinh(),
            cosh_c: c.cosh(),
            p_raw,
            q_raw: None,
            bar_a: 0.0,
            bar_b: 0.0,
            bar_chat: 0.0,
            bar_kappa: 0.0,
        }
    }

    /// Geodesic distance `d = C/√κ`.
    fn dist(&self) -> f64 {
        self.c / self.u
    }

    /// Exterior angle at the general endpoint; errors if either side through
    /// that endpoint degenerates to a point.
    fn phi(&mut self) -> Result<f64> {
        if self.b == 0.0 {
            return Err(Error::Degenerate(
                "exterior angle undefined when the general endpoint sits at the origin"
                    .to_string(),
            ));
        }
        if self.c == 0.0 {
            return Err(Error::Degenerate(
                "exterior angle undefined for coincident pair endpoints".to_string(),
            ));
        }
        let q_raw = (self.cosh_b * self.cosh_c - self.cosh_a) / (self.sinh_b * self.sinh_c);
        self.q_raw = Some(q_raw);
        Ok(std::f64::consts::PI - clamp_unit(q_raw).acos())
    }

    /// Half-aperture at the general endpoint and whether the asin argument
    /// was clipped. Errors at the origin where the cone is undefined.
    fn aperture(&self, c_const: f64) -> Result<(f64, bool)> {
        if self.b == 0.0 {
            return Err(Error::UndefinedMetric(
                "half-aperture undefined at the origin".to_string(),
            ));
        }
        let t = 2.0 * c_const / self.sinh_b;
        if t > 1.0 {
            Ok((std::f64::consts::FRAC_PI_2, true))
        } else {
            Ok((t.asin(), false))
        }
    }

    /// Seeds `w = ∂L/∂d` through the distance.
    fn seed_dist(&mut self, w: f64) {
        self.bar_kappa += -w * self.c / (2.0 * self.u.powi(3));
        self.seed_c(w / self.u);
    }

    /// Seeds an adjoint of the rescaled side `C = √κ·d`.
    fn seed_c(&mut self, bar_c: f64) {
        if self.p_raw <= 1.0 {
            return; // coincident endpoints: distance kink, gradient dropped
        }
        let bar_p = bar_c / (self.p_raw * self.p_raw - 1.0).sqrt();
        self.bar_a += bar_p * (self.sinh_a * self.cosh_b - self.cosh_a * self.sinh_b * self.chat);
        self.bar_b += bar_p * (self.cosh_a * self.sinh_b - self.sinh_a * self.cosh_b * self.chat);
        self.bar_chat += -bar_p * self.sinh_a * self.sinh_b;
    }

    /// Seeds `w = ∂L/∂φ` through the exterior angle. Requires `phi()` to
    /// have run. No-op where the angle saturates (collinear configurations).
    fn seed_phi(&mut self, w: f64) {
        let q = self.q_raw.expect("phi() must run before seed_phi");
        if q.abs() >= 1.0 {
            return;
        }
        let bar_q = w / (1.0 - q * q).sqrt();
        self.bar_a += -bar_q * self.sinh_a / (self.sinh_b * self.sinh_c);
        self.bar_b += bar_q * (self.cosh_a * self.cosh_b - self.cosh_c)
            / (self.sinh_b * self.sinh_b * self.sinh_c);
        let bar_c = bar_q * (self.cosh_a * self.cosh_c - self.cosh_b)
            / (self.sinh_b * self.sinh_c * self.sinh_c);
        self.seed_c(bar_c);
    }

    /// Seeds `w = ∂L/∂ω` through the half-aperture. No-op in the clipped
    /// region where the aperture saturates at π/2.
    fn seed_aperture(&mut self, w: f64, c_const: f64) {
        let t = 2.0 * c_const / self.sinh_b;
        if t >= 1.0 {
            return;
        }
        let bar_t = w / (1.0 - t * t).sqrt();
        self.bar_b += -bar_t * t * self.cosh_b / self.sinh_b;
    }

    /// Collapses the staged adjoints onto `(‖v_x‖, ‖v_y‖, v_x·v_y, κ)`.
    fn finalize(&self) -> PairAdjoints {
        let mut bar_rx = self.bar_a * self.u;
        let mut bar_ry = self.bar_b * self.u;
        let mut bar_dot = 0.0;
        if self.rx > 0.0 && self.ry > 0.0 {
            bar_rx += -self.bar_chat * self.chat / self.rx;
            bar_ry += -self.bar_chat * self.chat / self.ry;
            bar_dot = self.bar_chat / (self.rx * self.ry);
        }
        let bar_kappa =
            self.bar_kappa + (self.bar_a * self.rx + self.bar_b * self.ry) / (2.0 * self.u);
        PairAdjoints {
            bar_rx,
            bar_ry,
            bar_dot,
            bar_kappa,
        }
    }
}

/// Finalized adjoints of one pair with respect to its invariants.
struct PairAdjoints {
    bar_rx: f64,
    bar_ry: f64,
    bar_dot: f64,
    bar_kappa: f64,
}

/// Scatters finalized pair adjoints into the scaled-tangent gradient buffers.
fn scatter_pair(
    adj: &PairAdjoints,
    chain: &PairChain,
    vx: &[f64],
    vy: &[f64],
    gx: &mut [f64],
    gy: &mut [f64],
) {
    if chain.rx > 0.0 {
        let s = adj.bar_rx / chain.rx;
        for (g, &v) in gx.iter_mut().zip(vx) {
            *g += s * v;
        }
    }
    if chain.ry > 0.0 {
        let s = adj.bar_ry / chain.ry;
        for (g, &v) in gy.iter_mut().zip(vy) {
            *g += s * v;
        }
    }
    if adj.bar_dot != 0.0 {
        for (g, &v) in gx.iter_mut().zip(vy) {
            *g += adj.bar_dot * v;
        }
        for (g, &v) in gy.iter_mut().zip(vx) {
            *g += adj.bar_dot * v;
        }
    }
}

/// Per-embedding chain for the norm regularizer: with `r = ‖v‖`, `A = √κ·r`,
/// the spatial norm is `n = sinh(A)/√κ` and the penalty `n² − log(max(n, ε))`.
struct NormChain {
    u: f64,
    r: f64,
    sinh_a: f64,
    cosh_a: f64,
    n: f64,
}

impl NormChain {
    fn new(v: &[f64], kappa: f64) -> Self {
        let u = kappa.sqrt();
        let r = geometry::dot(v, v).sqrt();
        let a = u * r;
        let sinh_a = a.sinh();
        Self {
            u,
            r,
            sinh_a,
            cosh_a: a.cosh(),
            n: sinh_a / u,
        }
    }

    fn value(&self, norm_epsilon: f64) -> f64 {
        self.n * self.n - self.n.max(norm_epsilon).ln()
    }

    /// Gradient contribution of `w · reg(n)` onto the scaled tangent and κ.
    fn backward(&self, w: f64, norm_epsilon: f64, v: &[f64], g: &mut [f64], bar_kappa: &mut f64) {
        let mut bar_n = 2.0 * self.n;
        if self.n > norm_epsilon {
            bar_n -= 1.0 / self.n;
        }
        bar_n *= w;
        let bar_a = bar_n * self.cosh_a / self.u;
        *bar_kappa += -bar_n * self.sinh_a / (2.0 * self.u.powi(3))
            + bar_a * self.r / (2.0 * self.u);
        if self.r > 0.0 {
            let s = bar_a * self.u / self.r;
            for (gi, &vi) in g.iter_mut().zip(v) {
                *gi += s * vi;
            }
        }
    }
}

/// Shared forward/backward engine behind [`total_loss`] and
/// [`loss_gradients`].
fn evaluate(
    batch: &Batch,
    scalars: &ModelScalars,
    cfg: &LossConfig,
    mode: LossMode,
    with_grads: bool,
) -> Result<(LossValue, Option<Gradients>)> {
    cfg.validate()?;
    let tau = scalars.tau();
    if tau < cfg.tau_floor {
        return Err(Error::InvalidParameter(format!(
            "temperature {tau} is below the configured floor {}",
            cfg.tau_floor
        )));
    }
    let kappa = scalars.kappa();
    let scale = scalars.scale();
    let n = batch.len();
    let dim = batch.dim();

    // Scaled tangents v_i = scale · w_i, in concatenated [left, right] order.
    let scaled: Vec<Vec<f64>> = (0..2 * n)
        .map(|i| batch.param(i).spatial().iter().map(|w| scale * w).collect())
        .collect();

    // ---- contrastive forward ----------------------------------------------
    let mut cells: Vec<PairChain> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cells.push(PairChain::new(&scaled[i], &scaled[n + j], kappa));
        }
    }
    let z: Vec<f64> = cells.iter().map(|c| -c.dist() / tau).collect();
    let row_soft = |i: usize| -> (f64, Vec<f64>) {
        let row = &z[i * n..(i + 1) * n];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        (m + sum.ln(), exps.iter().map(|&e| e / sum).collect())
    };
    let col_soft = |j: usize| -> (f64, Vec<f64>) {
        let col: Vec<f64> = (0..n).map(|i| z[i * n + j]).collect();
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        (m + sum.ln(), exps.iter().map(|&e| e / sum).collect())
    };
    let mut loss_rows = 0.0;
    let mut row_probs: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (lse, probs) = row_soft(i);
        loss_rows += lse - z[i * n + i];
        row_probs.push(probs);
    }
    loss_rows /= n as f64;
    let mut loss_cols = 0.0;
    let mut col_probs: Vec<Vec<f64>> = Vec::with_capacity(n);
    if cfg.contrastive_directions == ContrastiveDirections::Both {
        for j in 0..n {
            let (lse, probs) = col_soft(j);
            loss_cols += lse - z[j * n + j];
            col_probs.push(probs);
        }
        loss_cols /= n as f64;
    }
    let contrastive = match cfg.contrastive_directions {
        ContrastiveDirections::One => loss_rows,
        ContrastiveDirections::Both => 0.5 * (loss_rows + loss_cols),
    };

    // ---- entailment forward -----------------------------------------------
    struct PairEval {
        chain: PairChain,
        specific: usize,
        general: usize,
        relation: PairRelation,
        phi: f64,
        omega: f64,
        h: f64,
    }
    let mut pair_evals: Vec<PairEval> = Vec::new();
    let mut skipped_pairs = 0usize;
    let mut bad_pairs: Vec<(usize, usize)> = Vec::new();
    let mut entailment_sum = 0.0;
    let mut adaent_sum = 0.0;
    for &(s, g, relation) in batch.pairs() {
        if batch.param(s).spatial() == batch.param(g).spatial() {
            skipped_pairs += 1;
            continue;
        }
        let mut chain = PairChain::new(&scaled[s], &scaled[g], kappa);
        let phi = chain.phi()?;
        let (omega, _) = chain.aperture(cfg.c_const)?;
        let h = match relation {
            PairRelation::Inter => 1.0,
            PairRelation::Intra => 1.0 - (-chain.dist()).exp(),
        };
        let hinge = (phi - cfg.eta * omega).max(0.0);
        let ada = huber(h * phi, cfg.beta);
        if !hinge.is_finite() || !ada.is_finite() {
            bad_pairs.push((s, g));
        }
        entailment_sum += hinge;
        adaent_sum += ada;
        pair_evals.push(PairEval {
            chain,
            specific: s,
            general: g,
            relation,
            phi,
            omega,
            h,
        });
    }
    let used = pair_evals.len();
    let entailment = if used > 0 {
        entailment_sum / used as f64
    } else {
        0.0
    };
    let adaent = if used > 0 { adaent_sum / used as f64 } else { 0.0 };

    // ---- regularizer forward ----------------------------------------------
    let norm_chains: Vec<NormChain> = scaled.iter().map(|v| NormChain::new(v, kappa)).collect();
    let regularizer = norm_chains
        .iter()
        .map(|c| c.value(cfg.norm_epsilon))
        .sum::<f64>()
        / (2 * n) as f64;

    let mode_term = match mode {
        LossMode::Vanilla => entailment,
        LossMode::AdaEnt => adaent,
    };
    let total = contrastive + cfg.gamma1 * mode_term + cfg.gamma2 * regularizer;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            pairs: bad_pairs,
        });
    }
    let value = LossValue {
        total,
        contrastive,
        entailment,
        adaent,
        regularizer,
        skipped_pairs,
    };
    if !with_grads {
        return Ok((value, None));
    }

    // ---- backward -----------------------------------------------------------
    let mut grad_scaled: Vec<Vec<f64>> = vec![vec![0.0; dim]; 2 * n];
    let mut bar_kappa = 0.0;
    let mut bar_tau = 0.0;

    // Contrastive: ∂total/∂z_ij assembled from row/column softmaxes, then
    // pushed through z = −d/τ into each cell's distance chain.
    let inv_n = 1.0 / n as f64;
    let (w_rows, w_cols) = match cfg.contrastive_directions {
        ContrastiveDirections::One => (1.0, 0.0),
        ContrastiveDirections::Both => (0.5, 0.5),
    };
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let mut bar_z = w_rows * inv_n * (row_probs[i][j] - delta);
            if w_cols != 0.0 {
                bar_z += w_cols * inv_n * (col_probs[j][i] - delta);
            }
            if bar_z == 0.0 {
                continue;
            }
            let cell = &mut cells[i * n + j];
            bar_tau += bar_z * cell.dist() / (tau * tau);
            cell.seed_dist(-bar_z / tau);
        }
    }
    for (idx, cell) in cells.iter().enumerate() {
        let (i, j) = (idx / n, idx % n);
        let adj = cell.finalize();
        bar_kappa += adj.bar_kappa;
        let (gx, gy) = {
            let (a, b) = grad_scaled.split_at_mut(n + j);
            (&mut a[i], &mut b[0])
        };
        scatter_pair(&adj, cell, &scaled[i], &scaled[n + j], gx, gy);
    }

    // Entailment: seed the active mode's per-pair derivative.
    if cfg.gamma1 != 0.0 && used > 0 {
        let w_pair = cfg.gamma1 / used as f64;
        for ev in pair_evals.iter_mut() {
            match mode {
                LossMode::Vanilla => {
                    if ev.phi - cfg.eta * ev.omega > 0.0 {
                        ev.chain.seed_phi(w_pair);
                        ev.chain.seed_aperture(-w_pair * cfg.eta, cfg.c_const);
                    }
                }
                LossMode::AdaEnt => {
                    let zarg = ev.h * ev.phi;
                    let dhuber = if zarg.abs() <= cfg.beta {
                        zarg
                    } else {
                        cfg.beta * zarg.signum()
                    };
                    let bar_zarg = w_pair * dhuber;
                    ev.chain.seed_phi(bar_zarg * ev.h);
                    if ev.relation == PairRelation::Intra && !cfg.stop_grad_h {
                        // ∂h/∂d = exp(−d)
                        ev.chain.seed_dist(bar_zarg * ev.phi * (-ev.chain.dist()).exp());
                    }
                }
            }
        }
        for ev in &pair_evals {
            let adj = ev.chain.finalize();
            bar_kappa += adj.bar_kappa;
            let (s, g) = (ev.specific, ev.general);
            // The batch constructor rejects s == g, so the split below is safe.
            let (gx, gy): (&mut [f64], &mut [f64]) = if s < g {
                let (a, b) = grad_scaled.split_at_mut(g);
                (&mut a[s], &mut b[0])
            } else {
                let (a, b) = grad_scaled.split_at_mut(s);
                (&mut b[0], &mut a[g])
            };
            scatter_pair(&adj, &ev.chain, &scaled[s], &scaled[g], gx, gy);
        }
    }

    // Regularizer.
    if cfg.gamma2 != 0.0 {
        let w_reg = cfg.gamma2 / (2 * n) as f64;
        for (i, chain) in norm_chains.iter().enumerate() {
            chain.backward(
                w_reg,
                cfg.norm_epsilon,
                &scaled[i],
                &mut grad_scaled[i],
                &mut bar_kappa,
            );
        }
    }

    // Map scaled-tangent gradients back to raw parameters and the scale:
    // v = scale · w gives ∂L/∂w = scale · ∂L/∂v and
    // ∂L/∂scale = Σ_i ⟨∂L/∂v_i, w_i⟩.
    let mut bar_scale = 0.0;
    for (i, g) in grad_scaled.iter().enumerate() {
        bar_scale += geometry::dot(g, batch.param(i).spatial());
    }
    let to_raw = |g: &[f64]| -> Vec<f64> { g.iter().map(|&v| scale * v).collect() };
    let grads = Gradients {
        left: grad_scaled[..n].iter().map(|g| to_raw(g)).collect(),
        right: grad_scaled[n..].iter().map(|g| to_raw(g)).collect(),
        kappa: bar_kappa,
        tau: bar_tau,
        scale: bar_scale,
    };
    for g in grads.left.iter().chain(grads.right.iter()) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "analytic gradient produced a non-finite component".to_string(),
            ));
        }
    }
    if ![grads.kappa, grads.tau, grads.scale]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite(
            "analytic scalar gradient is non-finite".to_string(),
        ));
    }
    Ok((value, Some(grads)))
}
