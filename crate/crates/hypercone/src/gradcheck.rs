//! Finite-difference verification of the analytic gradients.
//!
//! The objective is piecewise smooth: hinges, domain clamps, and the aperture
//! clip introduce isolated kinks where one-sided derivatives differ and a
//! central difference is meaningless. The harness therefore draws random
//! problem instances, *rejects* any instance that sits within a safety margin
//! of a kink, and compares every analytic gradient coordinate of the
//! surviving instances against a central finite difference:
//!
//! * tangent coordinates use an absolute step (they are O(1)),
//! * the positive scalars (κ, τ, scale) use a step relative to their value,
//!   since their admissible ranges span orders of magnitude and an absolute
//!   step inflates truncation error at the small end.
//!
//! A coordinate passes when `|analytic − numeric| / max(1e−8, |analytic|,
//! |numeric|) < 1e−5`. Coordinates whose gradient magnitude sits below
//! [`FD_FLOOR`] on both sides are reported separately instead of checked: a
//! central difference of an O(1) loss carries round-off of order
//! `ε·|loss|/step ≈ 1e−11`, so gradients that small cannot be resolved to
//! the tolerance by any double-precision difference, only hidden by a looser
//! one. The standard grid sweeps every objective component in isolation and
//! in combination, each at three curvatures. Isolation works by
//! construction: a one-pair batch has an identically zero contrastive term,
//! so entailment and regularizer checks are not masked by it.
//!
//! Failing instances can be dumped to a text file (full-precision decimal,
//! round-trips exactly) and replayed later, so a failure observed once is
//! reproducible in isolation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TangentVector;
use crate::losses::{
    loss_gradients, total_loss, Batch, ContrastiveDirections, LossConfig, LossMode, ModelScalars,
    PairRelation,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Relative-error tolerance of every coordinate check.
pub const TOLERANCE: f64 = 1e-5;
/// Absolute step for tangent coordinates; relative step factor for scalars.
pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitude below which a coordinate is unresolvable by central
/// differences in f64 (round-off ≈ `ε·|loss|/step`) and is skipped.
pub const FD_FLOOR: f64 = 1e-5;

/// One fully specified problem instance: everything needed to evaluate the
/// loss and its gradients, independent of any RNG.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Name of the originating grid case (free-form for replay files).
    pub case: String,
    pub mode: LossMode,
    pub cfg: LossConfig,
    pub kappa: f64,
    pub tau: f64,
    pub scale: f64,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize, PairRelation)>,
}

/// Outcome of checking every coordinate of one instance.
#[derive(Debug, Clone)]
pub struct InstanceCheck {
    pub checked: usize,
    /// Coordinates below the finite-difference resolution floor, not checked.
    pub below_floor: usize,
    pub max_rel_err: f64,
    pub worst_coordinate: String,
    /// Human-readable descriptions of coordinates exceeding the tolerance.
    pub failures: Vec<String>,
}

/// Aggregated outcome of one (case, curvature) cell of the standard grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case: String,
    pub kappa: f64,
    pub instances: usize,
    /// Instances redrawn because they sat too close to a kink.
    pub rejected_instances: usize,
    pub checked: usize,
    /// Coordinates below the finite-difference resolution floor, not checked.
    pub below_floor: usize,
    pub max_rel_err: f64,
    pub worst_coordinate: String,
}

/// Full report of a standard-grid run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub total_checked: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// `key = value` rendering, one line per fact.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "tolerance = {}", self.tolerance);
        let _ = writeln!(out, "total_checked = {}", self.total_checked);
        let _ = writeln!(out, "max_rel_err = {}", self.max_rel_err);
        let _ = writeln!(out, "passed = {}", self.passed);
        for c in &self.cases {
            let prefix = format!("{}.kappa_{}", c.case, c.kappa);
            let _ = writeln!(out, "{prefix}.instances = {}", c.instances);
            let _ = writeln!(out, "{prefix}.rejected = {}", c.rejected_instances);
            let _ = writeln!(out, "{prefix}.checked = {}", c.checked);
            let _ = writeln!(out, "{prefix}.below_floor = {}", c.below_floor);
            let _ = writeln!(out, "{prefix}.max_rel_err = {}", c.max_rel_err);
            let _ = writeln!(out, "{prefix}.worst = {}", c.worst_coordinate);
        }
        out
    }
}

/// Grid case: which parts of the objective are active and on what batch shape.
struct GridCase {
    name: &'static str,
    mode: LossMode,
    batch_size: usize,
    gamma1: f64,
    gamma2: f64,
    beta: f64,
    with_pairs: bool,
    instances: usize,
}

/// The standard verification grid. Single-pair batches make the contrastive
/// term vanish identically, isolating the entailment and regularizer paths;
/// those cases run one extra instance so every cell still probes at least
/// 50 coordinates after the constant-zero temperature column drops below
/// the finite-difference floor.
fn standard_cases() -> Vec<GridCase> {
    vec![
        GridCase {
            name: "contrastive",
            mode: LossMode::AdaEnt,
            batch_size: 4,
            gamma1: 0.0,
            gamma2: 0.0,
            beta: 0.5,
            with_pairs: false,
            instances: 3,
        },
        GridCase {
            name: "entailment_hinge",
            mode: LossMode::Vanilla,
            batch_size: 1,
            gamma1: 1.0,
            gamma2: 0.0,
            beta: 0.5,
            with_pairs: true,
            instances: 4,
        },
        GridCase {
            name: "adaent_beta_0.1",
            mode: LossMode::AdaEnt,
            batch_size: 1,
            gamma1: 1.0,
            gamma2: 0.0,
            beta: 0.1,
            with_pairs: true,
            instances: 4,
        },
        GridCase {
            name: "adaent_beta_0.5",
            mode: LossMode::AdaEnt,
            batch_size: 1,
            gamma1: 1.0,
            gamma2: 0.0,
            beta: 0.5,
            with_pairs: true,
            instances: 4,
        },
        GridCase {
            name: "adaent_beta_1.0",
            mode: LossMode::AdaEnt,
            batch_size: 1,
            gamma1: 1.0,
            gamma2: 0.0,
            beta: 1.0,
            with_pairs: true,
            instances: 4,
        },
        GridCase {
            name: "regularizer",
            mode: LossMode::AdaEnt,
            batch_size: 1,
            gamma1: 0.0,
            gamma2: 1.0,
            beta: 0.5,
            with_pairs: false,
            instances: 4,
        },
        GridCase {
            name: "total_vanilla",
            mode: LossMode::Vanilla,
            batch_size: 4,
            gamma1: 0.1,
            gamma2: 0.1,
            beta: 0.5,
            with_pairs: true,
            instances: 3,
        },
        GridCase {
            name: "total_adaent",
            mode: LossMode::AdaEnt,
            batch_size: 4,
            gamma1: 0.1,
            gamma2: 0.1,
            beta: 0.5,
            with_pairs: true,
            instances: 3,
        },
    ]
}

/// Curvatures every case is checked at.
pub const KAPPA_GRID: [f64; 3] = [0.1, 0.5, 1.0];
/// Tangent dimensionality of the generated instances.
const CHECK_DIM: usize = 6;
/// Attempts to redraw a kink-proximate instance before giving up.
const MAX_REDRAWS: usize = 64;

/// Standard pair layout over a batch of `n` items: one inter pair per
/// position plus chained intra pairs inside each family, so endpoints are
/// shared across pairs and adjoint accumulation is exercised.
fn standard_pairs(n: usize) -> Vec<(usize, usize, PairRelation)> {
    let mut pairs = Vec::new();
    for p in 0..n {
        pairs.push((p, n + p, PairRelation::Inter));
    }
    for p in 0..n.saturating_sub(1) {
        pairs.push((p + 1, p, PairRelation::Intra));
        pairs.push((n + p + 1, n + p, PairRelation::Intra));
    }
    if n == 1 {
        // A one-item batch still exercises both relations across families.
        pairs.push((0, 1, PairRelation::Intra));
        pairs.push((1, 0, PairRelation::Intra));
    }
    pairs
}

fn draw_instance(rng: &mut ChaCha8Rng, case: &GridCase, kappa: f64) -> Instance {
    let draw_family = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..case.batch_size)
            .map(|_| (0..CHECK_DIM).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    };
    let left = draw_family(rng);
    let right = draw_family(rng);
    let pairs = if case.with_pairs {
        standard_pairs(case.batch_size)
    } else {
        Vec::new()
    };
    Instance {
        case: case.name.to_string(),
        mode: case.mode,
        cfg: LossConfig {
            gamma1: case.gamma1,
            gamma2: case.gamma2,
            beta: case.beta,
            ..LossConfig::default()
        },
        kappa,
        tau: rng.random_range(0.05..0.2),
        scale: rng.random_range(0.5..1.2),
        left,
        right,
        pairs,
    }
}

fn build_batch(inst: &Instance) -> Result<Batch> {
    let tangents = |family: &[Vec<f64>]| -> Result<Vec<TangentVector>> {
        family.iter().map(|v| TangentVector::new(v.clone())).collect()
    };
    Batch::new(tangents(&inst.left)?, tangents(&inst.right)?, inst.pairs.clone())
}

fn scalars_of(inst: &Instance) -> Result<ModelScalars> {
    ModelScalars::with_values(inst.kappa, inst.tau, inst.scale)
}

/// True when the instance is safely differentiable: no pair sits near a
/// hinge activation, an aperture clip, a collinear angle saturation, a
/// coincidence, or a Huber transition, and no parameter norm approaches the
/// regularizer floor. Margins are deliberately generous; rejected instances
/// are simply redrawn.
pub fn instance_is_smooth(inst: &Instance) -> Result<bool> {
    const ANGLE_COS_MARGIN: f64 = 0.99;
    const DIST_ARG_MARGIN: f64 = 1e-6;
    const HINGE_MARGIN: f64 = 1e-3;
    const CLIP_MARGIN: f64 = 1e-3;
    const HUBER_MARGIN: f64 = 1e-3;
    const NORM_FLOOR_MARGIN: f64 = 1e-3;

    let u = inst.kappa.sqrt();
    let sides = |vx: &[f64], vy: &[f64]| -> (f64, f64, f64) {
        let rx = vx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ry = vy.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = vx.iter().zip(vy).map(|(a, b)| a * b).sum();
        (u * rx, u * ry, if rx > 0.0 && ry > 0.0 { dot / (rx * ry) } else { 0.0 })
    };
    let scaled: Vec<Vec<f64>> = inst
        .left
        .iter()
        .chain(inst.right.iter())
        .map(|w| w.iter().map(|v| v * inst.scale).collect())
        .collect();
    let n = inst.left.len();

    // Parameter norms must stay clear of the radial singularity and floor.
    for v in &scaled {
        let r: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (r * u).sinh() / u < NORM_FLOOR_MARGIN {
            return Ok(false);
        }
    }
    // Contrastive cells: reject near-coincident cross pairs.
    for i in 0..n {
        for j in 0..n {
            let (a, b, chat) = sides(&scaled[i], &scaled[n + j]);
            let p = a.cosh() * b.cosh() - a.sinh() * b.sinh() * chat;
            if p < 1.0 + DIST_ARG_MARGIN {
                return Ok(false);
            }
        }
    }
    // Entailment pairs: angle, aperture, hinge, and Huber margins.
    for &(s, g, relation) in &inst.pairs {
        let (a, b, chat) = sides(&scaled[s], &scaled[g]);
        if b == 0.0 {
            return Ok(false);
        }
        let p = a.cosh() * b.cosh() - a.sinh() * b.sinh() * chat;
        if p < 1.0 + DIST_ARG_MARGIN {
            return Ok(false);
        }
        let c = p.acosh();
        let q = (b.cosh() * c.cosh() - a.cosh()) / (b.sinh() * c.sinh());
        if q.abs() > ANGLE_COS_MARGIN {
            return Ok(false);
        }
        let phi = std::f64::consts::PI - q.clamp(-1.0, 1.0).acos();
        let t = 2.0 * inst.cfg.c_const / b.sinh();
        if (t - 1.0).abs() < CLIP_MARGIN {
            return Ok(false);
        }
        match inst.mode {
            LossMode::Vanilla => {
                let omega = if t > 1.0 {
                    std::f64::consts::FRAC_PI_2
                } else {
                    t.asin()
                };
                if (phi - inst.cfg.eta * omega).abs() < HINGE_MARGIN {
                    return Ok(false);
                }
            }
            LossMode::AdaEnt => {
                let h = match relation {
                    PairRelation::Inter => 1.0,
                    PairRelation::Intra => 1.0 - (-c / u).exp(),
                };
                if (h * phi - inst.cfg.beta).abs() < HUBER_MARGIN {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / f64::max(1e-8, f64::max(a.abs(), n.abs()))
}

/// Compares every analytic gradient coordinate of `inst` against central
/// finite differences of the total loss.
pub fn check_instance(inst: &Instance) -> Result<InstanceCheck> {
    let batch = build_batch(inst)?;
    let scalars = scalars_of(inst)?;
    let (_, grads) = loss_gradients(&batch, &scalars, &inst.cfg, inst.mode)?;

    let eval_params = |left: &[Vec<f64>], right: &[Vec<f64>]| -> Result<f64> {
        let tangents = |f: &[Vec<f64>]| -> Result<Vec<TangentVector>> {
            f.iter().map(|v| TangentVector::new(v.clone())).collect()
        };
        let b = Batch::new(tangents(left)?, tangents(right)?, inst.pairs.clone())?;
        Ok(total_loss(&b, &scalars, &inst.cfg, inst.mode)?.total)
    };

    let mut checked = 0usize;
    let mut below_floor = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst = String::from("none");
    let mut failures = Vec::new();
    let mut record = |name: String, analytic: f64, numeric: f64| {
        if analytic.abs() < FD_FLOOR && numeric.abs() < FD_FLOOR {
            below_floor += 1;
            return;
        }
        let e = rel_err(analytic, numeric);
        checked += 1;
        if e > max_rel {
            max_rel = e;
            worst = name.clone();
        }
        if e >= TOLERANCE {
            failures.push(format!(
                "{name}: analytic {analytic} vs numeric {numeric} (rel err {e})"
            ));
        }
    };

    // Tangent coordinates, absolute step.
    for (family, name, grad) in [(0usize, "left", &grads.left), (1usize, "right", &grads.right)] {
        for (i, g) in grad.iter().enumerate() {
            for (k, &a) in g.iter().enumerate() {
                let mut lo = inst.left.clone();
                let mut hi = inst.left.clone();
                let mut ro = inst.right.clone();
                let mut rh = inst.right.clone();
                if family == 0 {
                    lo[i][k] -= FD_STEP;
                    hi[i][k] += FD_STEP;
                } else {
                    ro[i][k] -= FD_STEP;
                    rh[i][k] += FD_STEP;
                }
                let f_hi = eval_params(&hi, &rh)?;
                let f_lo = eval_params(&lo, &ro)?;
                let numeric = (f_hi - f_lo) / (2.0 * FD_STEP);
                record(format!("{name}[{i}][{k}]"), a, numeric);
            }
        }
    }

    // Scalars, relative step.
    let base = [inst.kappa, inst.tau, inst.scale];
    for (which, name, a) in [
        (0usize, "kappa", grads.kappa),
        (1usize, "tau", grads.tau),
        (2usize, "scale", grads.scale),
    ] {
        let h = FD_STEP * base[which];
        let eval_scalar = |delta: f64| -> Result<f64> {
            let mut vals = base;
            vals[which] += delta;
            let s = ModelScalars::with_values(vals[0], vals[1], vals[2])?;
            let b = build_batch(inst)?;
            Ok(total_loss(&b, &s, &inst.cfg, inst.mode)?.total)
        };
        let numeric = (eval_scalar(h)? - eval_scalar(-h)?) / (2.0 * h);
        record(name.to_string(), a, numeric);
    }

    Ok(InstanceCheck {
        checked,
        below_floor,
        max_rel_err: max_rel,
        worst_coordinate: worst,
        failures,
    })
}

/// Runs the full standard grid. When `dump_dir` is set, every failing
/// instance is written there as a replay file before the run continues.
pub fn run_standard_grid(seed: u64, dump_dir: Option<&Path>) -> Result<GradCheckReport> {
    run_grid(seed, dump_dir, None, None)
}

/// Runs the standard grid restricted to cases whose name contains
/// `case_filter` and/or to one curvature of [`KAPPA_GRID`]. Filtered runs
/// draw the same instances as the full grid (each cell owns an independent
/// RNG stream), so a cell's verdict never depends on which cells ran.
pub fn run_grid(
    seed: u64,
    dump_dir: Option<&Path>,
    case_filter: Option<&str>,
    kappa_filter: Option<f64>,
) -> Result<GradCheckReport> {
    if let Some(k) = kappa_filter {
        if !KAPPA_GRID.contains(&k) {
            return Err(Error::InvalidParameter(format!(
                "curvature {k} is not on the verification grid {KAPPA_GRID:?}"
            )));
        }
    }
    let mut cases_out = Vec::new();
    let mut total_checked = 0usize;
    let mut global_max = 0.0f64;
    let mut passed = true;
    for (case_index, case) in standard_cases().iter().enumerate() {
        if case_filter.is_some_and(|f| !case.name.contains(f)) {
            continue;
        }
        for (kappa_index, &kappa) in KAPPA_GRID.iter().enumerate() {
            if kappa_filter.is_some_and(|f| f != kappa) {
                continue;
            }
            // Independent stream per grid cell so cells are stable under
            // reordering or instance-count changes elsewhere.
            let stream = seed
                ^ (case_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                ^ (kappa_index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut rejected = 0usize;
            let mut cell_checked = 0usize;
            let mut cell_below_floor = 0usize;
            let mut cell_max = 0.0f64;
            let mut cell_worst = String::from("none");
            for _ in 0..case.instances {
                let mut inst = draw_instance(&mut rng, case, kappa);
                let mut redraws = 0;
                while !instance_is_smooth(&inst)? {
                    rejected += 1;
                    redraws += 1;
                    if redraws > MAX_REDRAWS {
                        return Err(Error::Degenerate(format!(
                            "could not draw a kink-free instance for case {} at kappa {kappa}",
                            case.name
                        )));
                    }
                    inst = draw_instance(&mut rng, case, kappa);
                }
                let outcome = check_instance(&inst)?;
                cell_checked += outcome.checked;
                cell_below_floor += outcome.below_floor;
                if outcome.max_rel_err > cell_max {
                    cell_max = outcome.max_rel_err;
                    cell_worst = outcome.worst_coordinate.clone();
                }
                if !outcome.failures.is_empty() {
                    passed = false;
                    if let Some(dir) = dump_dir {
                        let path = dir.join(format!(
                            "gradcheck_failure_{}_kappa_{kappa}.txt",
                            case.name.replace('.', "_")
                        ));
                        write_replay_file(&path, &inst)?;
                    }
                }
            }
            total_checked += cell_checked;
            if cell_max > global_max {
                global_max = cell_max;
            }
            cases_out.push(CaseResult {
                case: case.name.to_string(),
                kappa,
                instances: case.instances,
                rejected_instances: rejected,
                checked: cell_checked,
                below_floor: cell_below_floor,
                max_rel_err: cell_max,
                worst_coordinate: cell_worst,
            });
        }
    }
    if cases_out.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no grid case matches filter `{}`",
            case_filter.unwrap_or("")
        )));
    }
    Ok(GradCheckReport {
        seed,
        tolerance: TOLERANCE,
        cases: cases_out,
        total_checked,
        max_rel_err: global_max,
        passed,
    })
}

/// Serializes an instance as a line-oriented text file. Floats are printed
/// with Rust's shortest round-trip formatting, so replay is exact.
pub fn write_replay_file(path: &Path, inst: &Instance) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "gradcheck replay v1");
    let _ = writeln!(out, "case = {}", inst.case);
    let _ = writeln!(
        out,
        "mode = {}",
        match inst.mode {
            LossMode::Vanilla => "vanilla",
            LossMode::AdaEnt => "adaent",
        }
    );
    let _ = writeln!(out, "kappa = {}", inst.kappa);
    let _ = writeln!(out, "tau = {}", inst.tau);
    let _ = writeln!(out, "scale = {}", inst.scale);
    let _ = writeln!(out, "gamma1 = {}", inst.cfg.gamma1);
    let _ = writeln!(out, "gamma2 = {}", inst.cfg.gamma2);
    let _ = writeln!(out, "beta = {}", inst.cfg.beta);
    let _ = writeln!(out, "eta = {}", inst.cfg.eta);
    let _ = writeln!(out, "c_const = {}", inst.cfg.c_const);
    let _ = writeln!(out, "tau_floor = {}", inst.cfg.tau_floor);
    let _ = writeln!(out, "norm_epsilon = {}", inst.cfg.norm_epsilon);
    let _ = writeln!(
        out,
        "directions = {}",
        match inst.cfg.contrastive_directions {
            ContrastiveDirections::One => "one",
            ContrastiveDirections::Both => "both",
        }
    );
    let _ = writeln!(out, "stop_grad_h = {}", inst.cfg.stop_grad_h);
    let _ = writeln!(out, "batch = {} {}", inst.left.len(), inst.left[0].len());
    for (label, family) in [("left", &inst.left), ("right", &inst.right)] {
        for (i, v) in family.iter().enumerate() {
            let joined: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(out, "{label} {i} = {}", joined.join(" "));
        }
    }
    for &(s, g, relation) in &inst.pairs {
        let _ = writeln!(
            out,
            "pair = {s} {g} {}",
            match relation {
                PairRelation::Inter => "inter",
                PairRelation::Intra => "intra",
            }
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a replay file written by [`write_replay_file`].
pub fn read_replay_file(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty replay file"))?;
    if header.trim() != "gradcheck replay v1" {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: header.trim().to_string(),
            expected: "gradcheck replay v1".to_string(),
        });
    }
    let mut case = String::new();
    let mut mode = LossMode::AdaEnt;
    let mut cfg = LossConfig::default();
    let mut kappa = f64::NAN;
    let mut tau = f64::NAN;
    let mut scale = f64::NAN;
    let mut batch_n = 0usize;
    let mut dim = 0usize;
    let mut left: Vec<Vec<f64>> = Vec::new();
    let mut right: Vec<Vec<f64>> = Vec::new();
    let mut pairs: Vec<(usize, usize, PairRelation)> = Vec::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::parse(path, line_no, format!("invalid number `{v}`")))
        };
        let parse_vec = |v: &str| -> Result<Vec<f64>> {
            v.split_whitespace().map(|t| parse_f64(t)).collect()
        };
        match key {
            "case" => case = value.to_string(),
            "mode" => {
                mode = match value {
                    "vanilla" => LossMode::Vanilla,
                    "adaent" => LossMode::AdaEnt,
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unknown mode `{other}`"),
                        ))
                    }
                }
            }
            "kappa" => kappa = parse_f64(value)?,
            "tau" => tau = parse_f64(value)?,
            "scale" => scale = parse_f64(value)?,
            "gamma1" => cfg.gamma1 = parse_f64(value)?,
            "gamma2" => cfg.gamma2 = parse_f64(value)?,
            "beta" => cfg.beta = parse_f64(value)?,
            "eta" => cfg.eta = parse_f64(value)?,
            "c_const" => cfg.c_const = parse_f64(value)?,
            "tau_floor" => cfg.tau_floor = parse_f64(value)?,
            "norm_epsilon" => cfg.norm_epsilon = parse_f64(value)?,
            "directions" => {
                cfg.contrastive_directions = match value {
                    "one" => ContrastiveDirections::One,
                    "both" => ContrastiveDirections::Both,
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unknown directions `{other}`"),
                        ))
                    }
                }
            }
            "stop_grad_h" => {
                cfg.stop_grad_h = value.parse::<bool>().map_err(|_| {
                    Error::parse(path, line_no, format!("invalid bool `{value}`"))
                })?
            }
            "batch" => {
                let mut it = value.split_whitespace();
                batch_n = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "invalid batch size"))?;
                dim = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "invalid batch dim"))?;
            }
            "pair" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(Error::parse(path, line_no, "pair needs `s g relation`"));
                }
                let s: usize = toks[0]
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, "invalid pair index"))?;
                let g: usize = toks[1]
                    .parse()
                    .map_err(|_| Error::parse(path, line_no, "invalid pair index"))?;
                let relation = match toks[2] {
                    "inter" => PairRelation::Inter,
                    "intra" => PairRelation::Intra,
                    other => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unknown relation `{other}`"),
                        ))
                    }
                };
                pairs.push((s, g, relation));
            }
            other if other.starts_with("left ") || other.starts_with("right ") => {
                let v = parse_vec(value)?;
                if dim != 0 && v.len() != dim {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("expected {dim} coordinates, got {}", v.len()),
                    ));
                }
                if other.starts_with("left") {
                    left.push(v);
                } else {
                    right.push(v);
                }
            }
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown replay key `{other}`"),
                ))
            }
        }
    }
    if left.len() != batch_n || right.len() != batch_n {
        return Err(Error::parse(
            path,
            0,
            format!(
                "replay batch header promises {batch_n} items per family, found {} / {}",
                left.len(),
                right.len()
            ),
        ));
    }
    Ok(Instance {
        case,
        mode,
        cfg,
        kappa,
        tau,
        scale,
        left,
        right,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filtered_grid_reproduces_the_matching_full_grid_cells() {
        let full = run_standard_grid(0, None).unwrap();
        let filtered = run_grid(0, None, Some("adaent_beta_0.5"), Some(0.5)).unwrap();
        assert_eq!(filtered.cases.len(), 1);
        let twin = full
            .cases
            .iter()
            .find(|c| c.case == "adaent_beta_0.5" && c.kappa == 0.5)
            .unwrap();
        assert_eq!(&filtered.cases[0], twin);

        assert!(run_grid(0, None, Some("no_such_case"), None).is_err());
        assert!(run_grid(0, None, None, Some(0.3)).is_err());
    }

    #[test]
    fn standard_grid_passes_at_tolerance() {
        let report = run_standard_grid(0, None).unwrap();
        assert!(
            report.passed,
            "grid failed, max rel err {} at {:?}",
            report.max_rel_err,
            report
                .cases
                .iter()
                .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
                .map(|c| (&c.case, c.kappa, &c.worst_coordinate))
        );
        assert!(report.max_rel_err < TOLERANCE);
        assert!(
            report.total_checked >= 1000,
            "grid must exercise at least 1000 coordinates, got {}",
            report.total_checked
        );
    }

    #[test]
    fn grid_is_deterministic_for_a_fixed_seed() {
        let a = run_standard_grid(42, None).unwrap();
        let b = run_standard_grid(42, None).unwrap();
        assert_eq!(a.total_checked, b.total_checked);
        assert_eq!(a.max_rel_err, b.max_rel_err);
        let errs_a: Vec<f64> = a.cases.iter().map(|c| c.max_rel_err).collect();
        let errs_b: Vec<f64> = b.cases.iter().map(|c| c.max_rel_err).collect();
        assert_eq!(errs_a, errs_b);
    }

    #[test]
    fn replay_file_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases = standard_cases();
        let inst = draw_instance(&mut rng, &cases[7], 0.5);
        let path = dir.path().join("replay.txt");
        write_replay_file(&path, &inst).unwrap();
        let back = read_replay_file(&path).unwrap();
        assert_eq!(inst, back);
        // Replaying checks the same coordinates with the same outcome.
        let a = check_instance(&inst).unwrap();
        let b = check_instance(&back).unwrap();
        assert_eq!(a.checked, b.checked);
        assert_eq!(a.max_rel_err, b.max_rel_err);
    }

    #[test]
    fn replay_parser_rejects_unknown_versions_and_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "gradcheck replay v2\n").unwrap();
        assert!(matches!(
            read_replay_file(&path).unwrap_err(),
            Error::UnsupportedVersion { .. }
        ));
        std::fs::write(&path, "gradcheck replay v1\nwidget = 3\n").unwrap();
        assert!(matches!(read_replay_file(&path).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn kink_filter_rejects_hinge_boundary_instances() {
        // A nested radial pair has φ = 0 and a definite hinge margin; pull
        // the specific endpoint until the margin crosses zero and verify the
        // filter rejects configurations close to the crossing.
        let mk = |y_shift: f64| Instance {
            case: "probe".to_string(),
            mode: LossMode::Vanilla,
            cfg: LossConfig {
                gamma1: 1.0,
                gamma2: 0.0,
                ..LossConfig::default()
            },
            kappa: 1.0,
            tau: 0.07,
            scale: 1.0,
            left: vec![vec![1.2, y_shift]],
            right: vec![vec![0.8, 0.0]],
            pairs: vec![(0, 1, PairRelation::Inter)],
        };
        // Find a shift where the margin is tiny by bisection on φ − ω.
        let margin = |shift: f64| -> f64 {
            let inst = mk(shift);
            let x = crate::geometry::exp_map_origin(
                &TangentVector::new(inst.left[0].clone()).unwrap(),
                crate::geometry::Curvature::new(1.0).unwrap(),
            );
            let y = crate::geometry::exp_map_origin(
                &TangentVector::new(inst.right[0].clone()).unwrap(),
                crate::geometry::Curvature::new(1.0).unwrap(),
            );
            let phi = crate::geometry::exterior_angle(&x, &y).unwrap().radians();
            let omega = crate::geometry::half_aperture(&y, 0.1).unwrap().radians();
            phi - omega
        };
        let (mut lo, mut hi) = (0.0f64, 3.0f64);
        assert!(margin(lo) < 0.0 && margin(hi) > 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if margin(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let at_kink = 0.5 * (lo + hi);
        assert!(!instance_is_smooth(&mk(at_kink)).unwrap());
        // Far from the crossing the filter accepts.
        assert!(instance_is_smooth(&mk(3.0)).unwrap());
    }

    #[test]
    fn report_renders_one_fact_per_line() {
        let report = run_standard_grid(1, None).unwrap();
        let text = report.render();
        assert!(text.lines().count() > 5 * report.cases.len());
        for line in text.lines() {
            assert!(line.contains('='), "non key=value line: {line}");
        }
        assert!(text.contains("passed = true"));
    }
}
