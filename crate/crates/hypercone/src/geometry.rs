//! Lorentz-model hyperbolic geometry kernels.
//!
//! Points live on the upper sheet of the hyperboloid
//! `H^n_κ = { x ∈ R^{n+1} : ⟨x,x⟩_L = −1/κ, x₀ > 0 }` for a curvature
//! parameter κ > 0 (the manifold's sectional curvature is −κ), where
//! `⟨x,y⟩_L = −x₀·y₀ + x̃·ỹ` is the Lorentzian inner product and a point is
//! written `x = (x₀, x̃)` with time coordinate x₀ and spatial part x̃.
//!
//! Provided kernels: lifting a spatial vector onto the manifold, geodesic
//! distance `d(x,y) = arccosh(−κ⟨x,y⟩_L)/√κ`, exponential/logarithm maps at
//! the origin, the exterior angle `φ(x,y) = π − ∠Oyx` used by the
//! entailment-cone losses, the half-aperture `ω(y) = asin(2C/(√κ‖ỹ‖))` of the
//! cone at `y`, and the Poincaré-ball conversion used for 2-D exports.
//!
//! All computation is in `f64`; persisted single-precision embeddings are
//! widened before any kernel runs. Inverse-trig arguments are clamped to
//! their domains; a clamp further than [`DOMAIN_SLACK`] past the boundary
//! increments a process-wide diagnostic counter (see [`clamp_warning_count`])
//! instead of erroring, since such values arise from float cancellation.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Distance past a domain boundary (of acosh/asin/acos arguments) beyond
/// which a clamp is counted as a diagnostic warning rather than attributed
/// to benign rounding.
pub const DOMAIN_SLACK: f64 = 1e-6;

/// Below this relative threshold `sinh(z)/z` is evaluated by series.
const SINCH_SERIES_THRESHOLD: f64 = 1e-4;

static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of domain clamps so far that exceeded [`DOMAIN_SLACK`].
///
/// Process-wide, monotone, updated with relaxed ordering; intended for
/// post-run diagnostics, not for control flow.
pub fn clamp_warning_count() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// Resets the diagnostic clamp counter (used by tests and the CLI between runs).
pub fn reset_clamp_warnings() {
    CLAMP_WARNINGS.store(0, Ordering::Relaxed);
}

fn note_clamp(excess: f64) {
    if excess > DOMAIN_SLACK {
        CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
    }
}

/// Clamps an arccosh argument to `[1, ∞)`.
pub(crate) fn clamp_acosh_arg(p: f64) -> f64 {
    if p < 1.0 {
        note_clamp(1.0 - p);
        1.0
    } else {
        p
    }
}

/// Clamps an acos/asin argument to `[−1, 1]`.
pub(crate) fn clamp_unit(q: f64) -> f64 {
    if q > 1.0 {
        note_clamp(q - 1.0);
        1.0
    } else if q < -1.0 {
        note_clamp(-1.0 - q);
        -1.0
    } else {
        q
    }
}

/// `sinh(z)/z`, series-expanded near zero so the z → 0 limit is exact.
pub(crate) fn sinch(z: f64) -> f64 {
    if z.abs() < SINCH_SERIES_THRESHOLD {
        1.0 + z * z / 6.0
    } else {
        z.sinh() / z
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Positive curvature parameter κ; the manifold has curvature −κ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    /// Validates κ > 0 and finite.
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa.is_finite() && kappa > 0.0 {
            Ok(Curvature(kappa))
        } else {
            Err(Error::InvalidParameter(format!(
                "curvature must be positive and finite, got {kappa}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// √κ, the factor that rescales lengths to the unit-curvature manifold.
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

/// A point `(time, spatial)` on the upper hyperboloid sheet at curvature κ.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    time: f64,
    spatial: Vec<f64>,
    kappa: Curvature,
}

impl LorentzPoint {
    /// Tolerance on `|⟨x,x⟩_L + 1/κ|` and on the time-coordinate identity
    /// accepted by [`LorentzPoint::from_parts`].
    pub const MANIFOLD_TOLERANCE: f64 = 1e-9;

    /// Builds a point from explicit coordinates, validating manifold
    /// membership (useful for hand-constructed test points; prefer [`lift`]
    /// or [`exp_map_origin`] in ordinary code).
    pub fn from_parts(time: f64, spatial: Vec<f64>, kappa: Curvature) -> Result<Self> {
        check_finite(&spatial, "LorentzPoint spatial part")?;
        if !time.is_finite() {
            return Err(Error::NonFinite("LorentzPoint time coordinate".into()));
        }
        let expected = (1.0 / kappa.get() + dot(&spatial, &spatial)).sqrt();
        if (time - expected).abs() > Self::MANIFOLD_TOLERANCE * expected.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "point off the manifold: time {time} vs lifted {expected}"
            )));
        }
        Ok(LorentzPoint {
            time,
            spatial,
            kappa,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn kappa(&self) -> Curvature {
        self.kappa
    }

    /// Spatial dimension n (the ambient vector has n+1 entries).
    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    /// Euclidean norm of the spatial part, `‖x̃‖`.
    pub fn spatial_norm(&self) -> f64 {
        dot(&self.spatial, &self.spatial).sqrt()
    }
}

/// A vector in the tangent space at the hyperboloid's origin, identified
/// with its spatial part (the time component of origin-tangents is 0).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    spatial: Vec<f64>,
}

impl TangentVector {
    /// Validates finite entries.
    pub fn new(spatial: Vec<f64>) -> Result<Self> {
        check_finite(&spatial, "TangentVector")?;
        Ok(TangentVector { spatial })
    }

    pub fn zero(dim: usize) -> Self {
        TangentVector {
            spatial: vec![0.0; dim],
        }
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn dim(&self) -> usize {
        self.spatial.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.spatial, &self.spatial).sqrt()
    }
}

/// Exterior angle `φ(x, y) = π − ∠Oyx`, in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExteriorAngle {
    radians: f64,
}

impl ExteriorAngle {
    pub fn radians(self) -> f64 {
        self.radians
    }
}

/// Half-aperture of the entailment cone at a point, in `(0, π/2]`.
///
/// `clipped` records that the asin argument exceeded 1 (the point sits in
/// the invalid-norm region where the cone degenerates to a half-space).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aperture {
    radians: f64,
    clipped: bool,
}

impl Aperture {
    pub fn radians(self) -> f64 {
        self.radians
    }

    pub fn clipped(self) -> bool {
        self.clipped
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The hyperboloid's apex `(1/√κ, 0, …, 0)`.
pub fn origin(dim: usize, kappa: Curvature) -> LorentzPoint {
    LorentzPoint {
        time: 1.0 / kappa.sqrt(),
        spatial: vec![0.0; dim],
        kappa,
    }
}

/// Lorentzian inner product of two ambient vectors (time coordinate first):
/// `−x₀·y₀ + x̃·ỹ`.
pub fn lorentz_inner_ambient(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(-x[0] * y[0] + dot(&x[1..], &y[1..]))
}

fn check_same_kappa(x: &LorentzPoint, y: &LorentzPoint) -> Result<()> {
    if x.kappa != y.kappa {
        return Err(Error::CurvatureMismatch {
            left: x.kappa.get(),
            right: y.kappa.get(),
        });
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Lorentzian inner product of two manifold points (same κ required).
pub fn lorentz_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_same_kappa(x, y)?;
    Ok(-x.time * y.time + dot(&x.spatial, &y.spatial))
}

/// Lifts a spatial vector onto the manifold by completing the time
/// coordinate: `x₀ = sqrt(1/κ + ‖x̃‖²)`.
pub fn lift(spatial: &[f64], kappa: Curvature) -> Result<LorentzPoint> {
    check_finite(spatial, "lift input")?;
    let time = (1.0 / kappa.get() + dot(spatial, spatial)).sqrt();
    Ok(LorentzPoint {
        time,
        spatial: spatial.to_vec(),
        kappa,
    })
}

/// Geodesic distance `d(x,y) = arccosh(−κ·⟨x,y⟩_L)/√κ`.
///
/// The arccosh argument is clamped to ≥ 1 before evaluation, so coincident
/// points yield exactly 0.
pub fn geodesic_distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    let inner = lorentz_inner(x, y)?;
    let kappa = x.kappa.get();
    let arg = clamp_acosh_arg(-kappa * inner);
    Ok(arg.acosh() / kappa.sqrt())
}

/// Exponential map at the origin: `exp_o(v)` has spatial part
/// `sinh(√κ‖v‖)·v/(√κ‖v‖)` (series limit `v` as ‖v‖ → 0) and the time
/// coordinate completing the manifold equation. `d(o, exp_o(v)) = ‖v‖`.
pub fn exp_map_origin(v: &TangentVector, kappa: Curvature) -> LorentzPoint {
    let z = kappa.sqrt() * v.norm();
    let factor = sinch(z);
    let spatial: Vec<f64> = v.spatial.iter().map(|c| c * factor).collect();
    let time = (1.0 / kappa.get() + dot(&spatial, &spatial)).sqrt();
    LorentzPoint {
        time,
        spatial,
        kappa,
    }
}

/// Logarithm map at the origin: the tangent vector `v` with
/// `exp_o(v) = x`; its norm equals `d(o, x)` and its direction is `x̃/‖x̃‖`.
pub fn log_map_origin(x: &LorentzPoint) -> TangentVector {
    let norm = x.spatial_norm();
    if norm == 0.0 {
        return TangentVector::zero(x.dim());
    }
    let kappa = x.kappa.get();
    let dist = clamp_acosh_arg(kappa.sqrt() * x.time).acosh() / kappa.sqrt();
    let scale = dist / norm;
    TangentVector {
        spatial: x.spatial.iter().map(|c| c * scale).collect(),
    }
}

/// Exterior angle `φ(x,y) = π − ∠Oyx`, the angle at vertex `y` of the
/// geodesic triangle (origin, y, x) measured from the outward continuation
/// of the radial geodesic through `y`.
///
/// Computed with the hyperbolic law of cosines on side lengths rescaled to
/// the unit-curvature manifold, `a = √κ·d(o,x)`, `b = √κ·d(o,y)`,
/// `c = √κ·d(y,x)`:
///
/// `cos ∠Oyx = (cosh b · cosh c − cosh a)/(sinh b · sinh c)`
///
/// with the cosine clamped to `[−1, 1]`. Small φ means x lies near the
/// outward radial direction at y (inside y's cone for φ ≤ ω(y)).
pub fn exterior_angle(x: &LorentzPoint, y: &LorentzPoint) -> Result<ExteriorAngle> {
    check_same_kappa(x, y)?;
    let sk = x.kappa.sqrt();
    // √κ·d(o, p) = arccosh(√κ·p₀) because ⟨o, p⟩_L = −p₀/√κ.
    let a = clamp_acosh_arg(sk * x.time).acosh();
    let b = clamp_acosh_arg(sk * y.time).acosh();
    if b == 0.0 {
        return Err(Error::Degenerate(
            "exterior angle at the origin is undefined (zero spatial norm)".into(),
        ));
    }
    let inner = lorentz_inner(x, y)?;
    let c = clamp_acosh_arg(-x.kappa.get() * inner).acosh();
    if c == 0.0 {
        return Err(Error::Degenerate(
            "exterior angle of coincident points is undefined".into(),
        ));
    }
    let cos_interior = clamp_unit((b.cosh() * c.cosh() - a.cosh()) / (b.sinh() * c.sinh()));
    Ok(ExteriorAngle {
        radians: std::f64::consts::PI - cos_interior.acos(),
    })
}

/// Half-aperture of the entailment cone at `y`:
/// `ω(y) = asin(2C/(√κ·‖ỹ‖))`, clipped to π/2 (with `clipped = true`) when
/// the argument exceeds 1, i.e. when `‖ỹ‖` falls below
/// [`invalid_region_boundary`]. At the boundary itself the argument is
/// exactly 1 and the aperture is π/2 *without* clipping.
pub fn half_aperture(y: &LorentzPoint, c_const: f64) -> Result<Aperture> {
    if !(c_const.is_finite() && c_const > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "aperture constant must be positive, got {c_const}"
        )));
    }
    let norm = y.spatial_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "half-aperture undefined at zero spatial norm".into(),
        ));
    }
    let arg = 2.0 * c_const / (y.kappa.sqrt() * norm);
    if arg > 1.0 {
        Ok(Aperture {
            radians: std::f64::consts::FRAC_PI_2,
            clipped: true,
        })
    } else {
        Ok(Aperture {
            radians: arg.asin(),
            clipped: false,
        })
    }
}

/// The spatial-norm boundary `2C/√κ` of the invalid region: points with
/// `‖ỹ‖` below it have their aperture clipped to π/2.
pub fn invalid_region_boundary(c_const: f64, kappa: Curvature) -> f64 {
    2.0 * c_const / kappa.sqrt()
}

/// Poincaré-ball conversion `p = √κ·x̃/(1 + √κ·x₀)`.
///
/// The √κ factors make the image curvature-independent in range: `‖p‖ =
/// tanh(√κ·d(o,x)/2) < 1` for every manifold point, and the map is monotone
/// in the distance from the origin.
pub fn lorentz_to_poincare(x: &LorentzPoint) -> Vec<f64> {
    let sk = x.kappa.sqrt();
    let denom = 1.0 + sk * x.time;
    x.spatial.iter().map(|c| sk * c / denom).collect()
}
