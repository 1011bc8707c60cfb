//! Acceptance gate: one integration test per shipped guarantee.
//!
//! Each test prints exactly one `criterion NN <name>: PASS|FAIL` line
//! (visible under `cargo test --test acceptance -- --nocapture`) and, on
//! failure, panics with the collected evidence. Tolerances are pinned as
//! constants next to the criterion they gate and are never loosened at
//! runtime. Checks that compare against an oracle implement that oracle
//! from scratch inside this file so a shared bug cannot hide.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2, PI};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hypercone::config::substream_seed;
use hypercone::evaluation::{
    auc_roc, average_precision, bidirectional_consistency, kendall_tau, p_ent, pep_collect,
    pep_input_from_tree, recall_at_k, retrieval_degree, subspace_retrieval, PepInput, PepSample,
    ScoredPairSet,
};
use hypercone::geometry::{
    exp_map_origin, exterior_angle, geodesic_distance, half_aperture, invalid_region_boundary,
    lift, origin, Curvature, LorentzPoint, TangentVector,
};
use hypercone::gradcheck;
use hypercone::hierarchy::{generate_tree, load_dataset, save_dataset};
use hypercone::losses::{
    adaptive_weight, huber, loss_gradients, norm_regularizer, total_loss, Batch, LossConfig,
    LossMode, ModelScalars, PairRelation,
};
use hypercone::store::{EmbeddingRecord, EmbeddingStore, Role};
use hypercone::trainer::{checkpoint, restore, TrainConfig, Trainer};

// --------------------------------------------------------------------
// shared helpers
// --------------------------------------------------------------------

/// Curvatures every numerical suite sweeps.
const KAPPAS: [f64; 3] = [0.1, 0.5, 1.0];

fn verdict(number: u32, name: &str, failures: &[String]) {
    let state = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {name}: {state}");
    assert!(
        failures.is_empty(),
        "criterion {number:02} {name} failed:\n{}",
        failures.join("\n")
    );
}

fn curv(kappa: f64) -> Curvature {
    Curvature::new(kappa).unwrap()
}

fn tangent(coords: &[f64]) -> TangentVector {
    TangentVector::new(coords.to_vec()).unwrap()
}

fn random_tangent(rng: &mut ChaCha8Rng, dim: usize, half_width: f64) -> TangentVector {
    tangent(
        &(0..dim)
            .map(|_| rng.random_range(-half_width..half_width))
            .collect::<Vec<f64>>(),
    )
}

/// Point at tangent radius `r` along the fixed direction (0.6, 0.8, 0, 0).
fn radial_point(r: f64, kappa: Curvature) -> LorentzPoint {
    exp_map_origin(&tangent(&[0.6 * r, 0.8 * r, 0.0, 0.0]), kappa)
}

// --------------------------------------------------------------------
// criterion 1 — geometry invariants
// --------------------------------------------------------------------

const C1_CASES: usize = 10_000;
const C1_MANIFOLD_TOL: f64 = 1e-9;
const C1_EXP_ISOMETRY_TOL: f64 = 1e-8;
const C1_TRIANGLE_SLACK: f64 = 1e-9;
const C1_TIME_LIMIT: Duration = Duration::from_secs(10);

#[test]
fn criterion_01_geometry_invariants() {
    let started = Instant::now();
    let mut failures = Vec::new();
    for (ki, &kappa) in KAPPAS.iter().enumerate() {
        let kappa = curv(kappa);
        let o = origin(8, kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1_0000 + ki as u64);
        let mut worst_manifold = 0.0f64;
        let mut worst_iso = 0.0f64;
        let mut worst_triangle = 0.0f64;
        for _ in 0..C1_CASES {
            let v1 = random_tangent(&mut rng, 8, 2.0);
            let v2 = random_tangent(&mut rng, 8, 2.0);
            let v3 = random_tangent(&mut rng, 8, 2.0);
            let x = exp_map_origin(&v1, kappa);
            let y = exp_map_origin(&v2, kappa);
            let z = exp_map_origin(&v3, kappa);
            // Manifold closure, with the quadratic form evaluated by hand
            // so the check does not reuse the library inner product.
            for p in [&x, &y, &z] {
                let quad = -p.time() * p.time()
                    + p.spatial().iter().map(|c| c * c).sum::<f64>();
                worst_manifold = worst_manifold.max((quad + 1.0 / kappa.get()).abs());
            }
            // The origin exponential map is a radial isometry.
            let d_ox = geodesic_distance(&o, &x).unwrap();
            worst_iso = worst_iso.max((d_ox - v1.norm()).abs());
            // Triangle inequality.
            let d_xz = geodesic_distance(&x, &z).unwrap();
            let d_xy = geodesic_distance(&x, &y).unwrap();
            let d_yz = geodesic_distance(&y, &z).unwrap();
            worst_triangle = worst_triangle.max(d_xz - (d_xy + d_yz));
        }
        if worst_manifold >= C1_MANIFOLD_TOL {
            failures.push(format!(
                "kappa {}: worst manifold residual {worst_manifold:e} >= {C1_MANIFOLD_TOL:e}",
                kappa.get()
            ));
        }
        if worst_iso >= C1_EXP_ISOMETRY_TOL {
            failures.push(format!(
                "kappa {}: worst |d(o, exp(v)) - ‖v‖| {worst_iso:e} >= {C1_EXP_ISOMETRY_TOL:e}",
                kappa.get()
            ));
        }
        if worst_triangle > C1_TRIANGLE_SLACK {
            failures.push(format!(
                "kappa {}: triangle inequality violated by {worst_triangle:e}",
                kappa.get()
            ));
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= C1_TIME_LIMIT {
        failures.push(format!("runtime {elapsed:?} exceeded {C1_TIME_LIMIT:?}"));
    }
    verdict(1, "geometry invariants", &failures);
}

// --------------------------------------------------------------------
// criterion 2 — exterior angle vs geodesic-shooting oracle
// --------------------------------------------------------------------

const C2_CONFIGS_PER_KAPPA: usize = 100;
const C2_ORACLE_TOL: f64 = 1e-4;
const C2_COLLINEAR_TOL: f64 = 1e-6;
/// Arc length of the oracle's probe steps. Small enough that the probe
/// triangle is effectively flat, large enough that the law-of-cosines
/// numerator (≈ sinh²ε · cos A ≈ 1e−8) stays far above rounding noise.
const C2_PROBE_ARC: f64 = 1e-4;

/// Independent exterior-angle oracle: walk a tiny geodesic arc from `y`
/// toward the origin and toward `x`, then recover the interior angle of
/// the resulting small triangle from its exact hyperbolic law of cosines.
/// Shares no code with the closed-form kernel beyond point accessors.
fn shooting_exterior_angle(x: &LorentzPoint, y: &LorentzPoint) -> f64 {
    let sk = x.kappa().sqrt();
    let unit = |p: &LorentzPoint| -> Vec<f64> {
        let mut v = Vec::with_capacity(p.dim() + 1);
        v.push(p.time() * sk);
        v.extend(p.spatial().iter().map(|c| c * sk));
        v
    };
    let yu = unit(y);
    let xu = unit(x);
    let mut ou = vec![0.0; yu.len()];
    ou[0] = 1.0;
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        -a[0] * b[0] + a[1..].iter().zip(&b[1..]).map(|(p, q)| p * q).sum::<f64>()
    };
    // Point an arc of length C2_PROBE_ARC along the geodesic from yu to
    // `target`: project the target into the tangent space at yu, normalize,
    // and follow cosh/sinh flow.
    let probe = |target: &[f64]| -> Vec<f64> {
        let ip = inner(&yu, target);
        let mut u: Vec<f64> = target.iter().zip(&yu).map(|(t, yc)| t + ip * yc).collect();
        let norm = inner(&u, &u).sqrt();
        for c in &mut u {
            *c /= norm;
        }
        yu.iter()
            .zip(&u)
            .map(|(yc, uc)| C2_PROBE_ARC.cosh() * yc + C2_PROBE_ARC.sinh() * uc)
            .collect()
    };
    let toward_origin = probe(&ou);
    let toward_x = probe(&xu);
    let chord = (-inner(&toward_origin, &toward_x)).max(1.0).acosh();
    let cos_interior = (C2_PROBE_ARC.cosh() * C2_PROBE_ARC.cosh() - chord.cosh())
        / (C2_PROBE_ARC.sinh() * C2_PROBE_ARC.sinh());
    PI - cos_interior.clamp(-1.0, 1.0).acos()
}

#[test]
fn criterion_02_exterior_angle_matches_shooting_oracle() {
    let mut failures = Vec::new();
    for (ki, &kappa) in KAPPAS.iter().enumerate() {
        let kappa = curv(kappa);
        let mut rng = ChaCha8Rng::seed_from_u64(0xC2_0000 + ki as u64);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        let mut worst = 0.0f64;
        while accepted < C2_CONFIGS_PER_KAPPA {
            attempts += 1;
            assert!(attempts < 100_000, "random configuration drought");
            let y = exp_map_origin(&random_tangent(&mut rng, 3, 1.5), kappa);
            let x = exp_map_origin(&random_tangent(&mut rng, 3, 1.5), kappa);
            let o = origin(3, kappa);
            if geodesic_distance(&o, &y).unwrap() < 0.1
                || geodesic_distance(&x, &y).unwrap() < 0.1
            {
                continue;
            }
            let phi = exterior_angle(&x, &y).unwrap().radians();
            // The probe triangle degenerates at the collinear ends, where
            // the oracle loses accuracy; those limits get dedicated exact
            // constructions below.
            if !(0.05..=PI - 0.05).contains(&phi) {
                continue;
            }
            accepted += 1;
            worst = worst.max((phi - shooting_exterior_angle(&x, &y)).abs());
        }
        if worst >= C2_ORACLE_TOL {
            failures.push(format!(
                "kappa {}: worst |closed-form − oracle| {worst:e} >= {C2_ORACLE_TOL:e}",
                kappa.get()
            ));
        }

        // Collinear limit φ → 0: x deeper than y on the same ray.
        let y = radial_point(0.6, kappa);
        let x = radial_point(1.2, kappa);
        let phi = exterior_angle(&x, &y).unwrap().radians();
        if phi > C2_COLLINEAR_TOL {
            failures.push(format!(
                "kappa {}: nested radial pair gives φ = {phi:e} > {C2_COLLINEAR_TOL:e}",
                kappa.get()
            ));
        }
        // Collinear limit φ → π: x between the origin and y.
        let x = radial_point(0.3, kappa);
        let y = radial_point(0.75, kappa);
        let phi = exterior_angle(&x, &y).unwrap().radians();
        if (phi - PI).abs() > C2_COLLINEAR_TOL {
            failures.push(format!(
                "kappa {}: between-o-and-y pair gives φ = {phi} (expected π ± {C2_COLLINEAR_TOL:e})",
                kappa.get()
            ));
        }
    }
    verdict(2, "exterior angle matches shooting oracle", &failures);
}

// --------------------------------------------------------------------
// criterion 3 — aperture clipping boundary
// --------------------------------------------------------------------

const C3_APERTURE_TOL: f64 = 1e-9;

#[test]
fn criterion_03_aperture_boundary() {
    let mut failures = Vec::new();
    let kappa = curv(0.1);
    let c_const = 0.1;
    let boundary = invalid_region_boundary(c_const, kappa);

    // The published four-decimal figure, and the closed form it rounds.
    if format!("{boundary:.4}") != "0.6325" {
        failures.push(format!("boundary prints as {boundary:.4}, expected 0.6325"));
    }
    let closed_form = 2.0 * c_const / 0.1f64.sqrt();
    if (boundary - closed_form).abs() > 1e-12 {
        failures.push(format!(
            "boundary {boundary} differs from 2C/√κ = {closed_form}"
        ));
    }

    // Exactly at the boundary the asin argument is 1: ω = π/2, unclipped.
    let at = half_aperture(&lift(&[boundary, 0.0], kappa).unwrap(), c_const).unwrap();
    if (at.radians() - FRAC_PI_2).abs() > C3_APERTURE_TOL {
        failures.push(format!(
            "aperture at the boundary is {} (expected π/2 ± {C3_APERTURE_TOL:e})",
            at.radians()
        ));
    }
    if at.clipped() {
        failures.push("aperture at the boundary reports clipped = true".to_string());
    }

    // Below the boundary the argument exceeds 1: clipped to exactly π/2.
    let below = half_aperture(&lift(&[0.99 * boundary, 0.0], kappa).unwrap(), c_const).unwrap();
    if !below.clipped() {
        failures.push("aperture below the boundary reports clipped = false".to_string());
    }
    if below.radians() != FRAC_PI_2 {
        failures.push(format!(
            "clipped aperture is {} (expected exactly π/2)",
            below.radians()
        ));
    }

    // Above the boundary the cone narrows and stays unclipped.
    let above = half_aperture(&lift(&[1.01 * boundary, 0.0], kappa).unwrap(), c_const).unwrap();
    if above.clipped() || above.radians() >= FRAC_PI_2 {
        failures.push(format!(
            "aperture above the boundary is {} (clipped = {})",
            above.radians(),
            above.clipped()
        ));
    }
    // Doubling the norm halves the asin argument: ω = asin(1/2) = π/6.
    let double = half_aperture(&lift(&[2.0 * boundary, 0.0], kappa).unwrap(), c_const).unwrap();
    if (double.radians() - 0.5f64.asin()).abs() > C3_APERTURE_TOL {
        failures.push(format!(
            "aperture at twice the boundary is {} (expected asin(1/2))",
            double.radians()
        ));
    }
    verdict(3, "aperture boundary", &failures);
}

// --------------------------------------------------------------------
// criterion 4 — analytic gradients vs central finite differences
// --------------------------------------------------------------------

const C4_SEED: u64 = 20260815;
const C4_MIN_CHECKED_PER_CELL: usize = 50;
const C4_TIME_LIMIT: Duration = Duration::from_secs(60);
const C4_EXPECTED_CASES: [&str; 8] = [
    "contrastive",
    "entailment_hinge",
    "adaent_beta_0.1",
    "adaent_beta_0.5",
    "adaent_beta_1.0",
    "regularizer",
    "total_vanilla",
    "total_adaent",
];

#[test]
fn criterion_04_gradient_verification() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let report = gradcheck::run_standard_grid(C4_SEED, None).unwrap();
    if !report.passed {
        failures.push(format!(
            "grid reports failure (max relative error {:e}):\n{}",
            report.max_rel_err,
            report.render()
        ));
    }
    if report.max_rel_err >= gradcheck::TOLERANCE {
        failures.push(format!(
            "max relative error {:e} >= {:e}",
            report.max_rel_err,
            gradcheck::TOLERANCE
        ));
    }
    let names: HashSet<&str> = report.cases.iter().map(|c| c.case.as_str()).collect();
    let expected: HashSet<&str> = C4_EXPECTED_CASES.iter().copied().collect();
    if names != expected {
        failures.push(format!("grid cases {names:?} differ from {expected:?}"));
    }
    if report.cases.len() != C4_EXPECTED_CASES.len() * KAPPAS.len() {
        failures.push(format!(
            "grid ran {} cells, expected {}",
            report.cases.len(),
            C4_EXPECTED_CASES.len() * KAPPAS.len()
        ));
    }
    for cell in &report.cases {
        if cell.checked < C4_MIN_CHECKED_PER_CELL {
            failures.push(format!(
                "cell {} at kappa {} checked only {} coordinates (need >= {})",
                cell.case, cell.kappa, cell.checked, C4_MIN_CHECKED_PER_CELL
            ));
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= C4_TIME_LIMIT {
        failures.push(format!("runtime {elapsed:?} exceeded {C4_TIME_LIMIT:?}"));
    }
    verdict(4, "gradient verification", &failures);
}

// --------------------------------------------------------------------
// criterion 5 — closed-form loss values, exact to 1e−10
// --------------------------------------------------------------------

const C5_VALUE_TOL: f64 = 1e-10;
const C5_STATIONARY_TOL: f64 = 1e-8;

/// Radial pairs whose law-of-cosines cosine rounds onto the −1 clamp, so
/// the exterior angle is exactly 0.0 and the entailment probability is
/// exactly 1.0. Measured stable for the pinned tangent direction
/// (0.6r, 0.8r, 0, 0) on this toolchain.
const C5_EXACT_ZERO_WITNESSES: [(f64, f64, f64); 3] =
    [(0.1, 0.6, 1.2), (0.5, 0.5, 1.0), (1.0, 0.4, 0.9)];

#[test]
fn criterion_05_closed_form_loss_values() {
    let mut failures = Vec::new();

    // Uniform contrastive case: two identical left rows against two
    // identical right rows make every softmax uniform over 2 candidates,
    // so both direction means equal ln 2.
    {
        let v = tangent(&[0.3, 0.1]);
        let w = tangent(&[0.5, -0.2]);
        let batch = Batch::new(vec![v.clone(), v], vec![w.clone(), w], Vec::new()).unwrap();
        let scalars = ModelScalars::with_values(1.0, 0.07, 1.0).unwrap();
        let cfg = LossConfig {
            gamma1: 0.0,
            gamma2: 0.0,
            ..LossConfig::default()
        };
        let value = total_loss(&batch, &scalars, &cfg, LossMode::Vanilla).unwrap();
        if (value.contrastive - LN_2).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "uniform contrastive is {} (expected ln 2 = {LN_2})",
                value.contrastive
            ));
        }
        if (value.total - LN_2).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "uniform total with both weights zero is {} (expected ln 2)",
                value.total
            ));
        }
    }

    // Huber branch values at and past the transition.
    for beta in [0.1, 0.5, 1.0] {
        let quadratic = huber(beta, beta);
        if (quadratic - 0.5 * beta * beta).abs() > C5_VALUE_TOL {
            failures.push(format!("huber({beta}, {beta}) = {quadratic}, expected 0.5β²"));
        }
        let linear = huber(2.0 * beta, beta);
        if (linear - 1.5 * beta * beta).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "huber({}, {beta}) = {linear}, expected 1.5β²",
                2.0 * beta
            ));
        }
    }

    // Regularizer minimum: value 0.5 + 0.5·ln 2 at spatial norm 1/√2, and
    // every analytic gradient stationary there (γ1 = 0 silences the mode
    // term; a singleton batch makes the contrastive term constant zero).
    {
        let half_sqrt2 = 0.5f64.sqrt();
        let point = lift(&[half_sqrt2, 0.0], curv(1.0)).unwrap();
        let direct = norm_regularizer(&point, 1e-6);
        let expected = 0.5 + 0.5 * LN_2;
        if (direct - expected).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "norm regularizer at 1/√2 is {direct}, expected 0.5 + 0.5·ln 2 = {expected}"
            ));
        }
        // Tangent radius whose embedded norm is 1/√2 at κ = 1, scale = 1.
        let r = half_sqrt2.asinh();
        let batch = Batch::new(
            vec![tangent(&[r, 0.0])],
            vec![tangent(&[0.0, r])],
            Vec::new(),
        )
        .unwrap();
        let scalars = ModelScalars::with_values(1.0, 0.07, 1.0).unwrap();
        let cfg = LossConfig {
            gamma1: 0.0,
            gamma2: 1.0,
            ..LossConfig::default()
        };
        let (value, grads) = loss_gradients(&batch, &scalars, &cfg, LossMode::AdaEnt).unwrap();
        if (value.regularizer - expected).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "batch regularizer at 1/√2 is {}, expected {expected}",
                value.regularizer
            ));
        }
        if (value.total - expected).abs() > C5_VALUE_TOL {
            failures.push(format!(
                "batch total at the regularizer minimum is {}, expected {expected}",
                value.total
            ));
        }
        let mut worst = grads.kappa.abs().max(grads.tau.abs()).max(grads.scale.abs());
        for row in grads.left.iter().chain(grads.right.iter()) {
            for g in row {
                worst = worst.max(g.abs());
            }
        }
        if worst > C5_STATIONARY_TOL {
            failures.push(format!(
                "gradient at the regularizer minimum has magnitude {worst:e} > {C5_STATIONARY_TOL:e}"
            ));
        }
    }

    // Adaptive weight: h(d = ln 2) = 1 − e^{−ln 2} = 1/2 for intra pairs,
    // exactly 1 for inter pairs.
    {
        let kappa = curv(1.0);
        let x = exp_map_origin(&tangent(&[0.4, 0.0]), kappa);
        let y = exp_map_origin(&tangent(&[0.4 + LN_2, 0.0]), kappa);
        let intra = adaptive_weight(&x, &y, PairRelation::Intra).unwrap();
        if (intra - 0.5).abs() > C5_VALUE_TOL {
            failures.push(format!("h(ln 2) = {intra}, expected 0.5"));
        }
        let inter = adaptive_weight(&x, &y, PairRelation::Inter).unwrap();
        if inter != 1.0 {
            failures.push(format!("inter-pair weight is {inter}, expected exactly 1"));
        }
    }

    // Entailment probability at φ = 0 (pinned exact-zero radial pairs),
    // φ = π/4 (located by bisection), and φ ≥ π/2 (score clamps to 0).
    for (kappa, r, deep) in C5_EXACT_ZERO_WITNESSES {
        let kappa = curv(kappa);
        let y = radial_point(r, kappa);
        let x = radial_point(deep, kappa);
        let phi = exterior_angle(&x, &y).unwrap().radians();
        if phi != 0.0 {
            failures.push(format!(
                "witness (κ {}, r {r}, R {deep}) gives φ = {phi:e}, expected exactly 0",
                kappa.get()
            ));
        }
        let p = p_ent(&x, &y).unwrap();
        if p != 1.0 {
            failures.push(format!(
                "p_ent at φ = 0 is {p}, expected exactly 1 (κ {})",
                kappa.get()
            ));
        }
    }
    {
        let kappa = curv(1.0);
        let y = exp_map_origin(&tangent(&[0.5, 0.0]), kappa);
        let x_at = |theta: f64| exp_map_origin(&tangent(&[theta.cos(), theta.sin()]), kappa);
        let phi_at =
            |theta: f64| exterior_angle(&x_at(theta), &y).unwrap().radians() - FRAC_PI_4;
        let (mut lo, mut hi) = (0.1, 2.5);
        assert!(phi_at(lo) < 0.0 && phi_at(hi) > 0.0, "bisection bracket");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi_at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = x_at(0.5 * (lo + hi));
        let p = p_ent(&x, &y).unwrap();
        if (p - 0.5).abs() > C5_VALUE_TOL {
            failures.push(format!("p_ent at φ = π/4 is {p}, expected 0.5 ± {C5_VALUE_TOL:e}"));
        }
        // Orthogonal legs put φ well past π/2; the max(·, 0) clamp makes
        // the probability exactly zero.
        let x = exp_map_origin(&tangent(&[0.0, 0.8]), kappa);
        let phi = exterior_angle(&x, &y).unwrap().radians();
        if phi <= FRAC_PI_2 {
            failures.push(format!("orthogonal configuration gives φ = {phi} <= π/2"));
        }
        let p = p_ent(&x, &y).unwrap();
        if p != 0.0 {
            failures.push(format!("p_ent at φ > π/2 is {p}, expected exactly 0"));
        }
        // Opposite ray: φ = π.
        let x = exp_map_origin(&tangent(&[-1.0, 0.0]), kappa);
        let p = p_ent(&x, &y).unwrap();
        if p != 0.0 {
            failures.push(format!("p_ent at φ = π is {p}, expected exactly 0"));
        }
    }
    verdict(5, "closed-form loss values", &failures);
}

// --------------------------------------------------------------------
// criterion 6 — metric oracle equivalence
// --------------------------------------------------------------------

const C6_INSTANCES: usize = 200;
const C6_MAX_SIZE: usize = 20;
const C6_METRIC_TOL: f64 = 1e-12;

/// Pairwise Mann–Whitney oracle: wins + half-ties over all pos×neg pairs.
fn oracle_auc(entries: &[(f64, bool)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(sp, lp) in entries {
        if !lp {
            continue;
        }
        for &(sn, ln_) in entries {
            if ln_ {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision oracle with an explicit (score desc, index asc) sort.
fn oracle_average_precision(entries: &[(f64, bool)]) -> f64 {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b].0
            .partial_cmp(&entries[a].0)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &e) in order.iter().enumerate() {
        if entries[e].1 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    sum / entries.iter().filter(|e| e.1).count() as f64
}

/// Rank-correlation oracle by bubble-sort swap counting: map the predicted
/// order through the reference ranks, count adjacent swaps to sort it, and
/// convert (each swap is one discordant pair).
fn oracle_kendall(predicted: &[usize], reference: &[usize]) -> f64 {
    let n = predicted.len();
    let mut rank = vec![0usize; n];
    for (r, &item) in reference.iter().enumerate() {
        rank[item] = r;
    }
    let mut seq: Vec<usize> = predicted.iter().map(|&item| rank[item]).collect();
    let mut swaps = 0u64;
    loop {
        let mut any = false;
        for i in 1..seq.len() {
            if seq[i - 1] > seq[i] {
                seq.swap(i - 1, i);
                swaps += 1;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    1.0 - 4.0 * swaps as f64 / (n as f64 * (n as f64 - 1.0))
}

/// Recall oracle: a truth item is retrieved iff fewer than k candidates
/// rank strictly ahead of it (smaller distance, index breaking ties).
fn oracle_recall(
    queries: &[LorentzPoint],
    candidates: &[LorentzPoint],
    truth: &[Vec<usize>],
    k: usize,
) -> f64 {
    let mut hits = 0usize;
    for (q, t) in queries.iter().zip(truth) {
        let d: Vec<f64> = candidates
            .iter()
            .map(|c| geodesic_distance(q, c).unwrap())
            .collect();
        let hit = t.iter().any(|&ti| {
            let ahead = (0..candidates.len())
                .filter(|&c| c != ti && (d[c] < d[ti] || (d[c] == d[ti] && c < ti)))
                .count();
            ahead < k
        });
        if hit {
            hits += 1;
        }
    }
    hits as f64 / queries.len() as f64
}

/// Degree oracle: column c enters a row's top k iff fewer than k other
/// columns score strictly ahead of it under the index tie-break.
fn oracle_degrees(similarity: &[Vec<f64>], k: usize) -> Vec<usize> {
    let cols = similarity[0].len();
    let mut degrees = vec![0usize; cols];
    for row in similarity {
        for c in 0..cols {
            let ahead = (0..cols)
                .filter(|&o| o != c && (row[o] > row[c] || (row[o] == row[c] && o < c)))
                .count();
            if ahead < k {
                degrees[c] += 1;
            }
        }
    }
    degrees
}

/// Banded-retrieval oracle restructured as one linear scan per band.
fn oracle_subspace(
    image: &LorentzPoint,
    texts: &EmbeddingStore,
    n_subspaces: usize,
    top: usize,
) -> Vec<String> {
    let o = origin(image.dim(), image.kappa());
    let image_radius = geodesic_distance(&o, image).unwrap();
    let mut out: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for band in 0..n_subspaces {
        let mut winner: Option<(f64, String)> = None;
        for record in texts.records() {
            if !record.role.is_text_like() {
                continue;
            }
            let radius = geodesic_distance(&o, &record.point).unwrap();
            let slot = if image_radius > 0.0 {
                (((radius / image_radius) * n_subspaces as f64) as usize).min(n_subspaces - 1)
            } else {
                0
            };
            if slot != band {
                continue;
            }
            let to_image = geodesic_distance(&record.point, image).unwrap();
            let better = match &winner {
                None => true,
                Some((d, id)) => to_image < *d || (to_image == *d && record.id < *id),
            };
            if better {
                winner = Some((to_image, record.id.clone()));
            }
        }
        if let Some((_, id)) = winner {
            if out.len() < top && seen.insert(id.clone()) {
                out.push(id);
            }
        }
    }
    out
}

/// Bidirectional-rank oracle via full argsorts of the row and the column.
fn oracle_bidirectional(similarity: &[Vec<f64>], pair: usize, threshold: usize) -> bool {
    let cols = similarity[0].len();
    let rows = similarity.len();
    let mut row_order: Vec<usize> = (0..cols).collect();
    row_order.sort_by(|&a, &b| {
        similarity[pair][b]
            .partial_cmp(&similarity[pair][a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut col_order: Vec<usize> = (0..rows).collect();
    col_order.sort_by(|&a, &b| {
        similarity[b][pair]
            .partial_cmp(&similarity[a][pair])
            .unwrap()
            .then(a.cmp(&b))
    });
    let row_rank = row_order.iter().position(|&c| c == pair).unwrap();
    let col_rank = col_order.iter().position(|&r| r == pair).unwrap();
    row_rank < threshold && col_rank < threshold
}

/// Scores on a coarse lattice inside [0, 1] so ties are common.
fn lattice_score(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..=8i32) as f64 / 8.0
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, kappa: Curvature) -> Vec<LorentzPoint> {
    (0..n)
        .map(|_| exp_map_origin(&random_tangent(rng, 3, 1.2), kappa))
        .collect()
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

#[test]
fn criterion_06_metric_oracle_equivalence() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6_0001);

    // auc_roc and average_precision share the random labeled instances.
    for i in 0..C6_INSTANCES {
        let n = rng.random_range(2..=C6_MAX_SIZE);
        let mut entries: Vec<(f64, bool)> =
            (0..n).map(|_| (lattice_score(&mut rng), rng.random::<f64>() < 0.5)).collect();
        entries[0].1 = true;
        entries[1].1 = false;
        let set = ScoredPairSet::new(entries.clone()).unwrap();
        let lib = auc_roc(&set).unwrap();
        let oracle = oracle_auc(&entries);
        if (lib - oracle).abs() > C6_METRIC_TOL {
            failures.push(format!("auc instance {i}: {lib} vs oracle {oracle}"));
        }
        let lib = average_precision(&set).unwrap();
        let oracle = oracle_average_precision(&entries);
        if (lib - oracle).abs() > C6_METRIC_TOL {
            failures.push(format!("ap instance {i}: {lib} vs oracle {oracle}"));
        }
    }

    // kendall_tau on random permutation pairs.
    for i in 0..C6_INSTANCES {
        let n = rng.random_range(2..=C6_MAX_SIZE);
        let predicted = shuffled(&mut rng, n);
        let reference = shuffled(&mut rng, n);
        let lib = kendall_tau(&predicted, &reference).unwrap();
        let oracle = oracle_kendall(&predicted, &reference);
        if (lib - oracle).abs() > C6_METRIC_TOL {
            failures.push(format!("kendall instance {i}: {lib} vs oracle {oracle}"));
        }
    }

    // recall_at_k on random hyperbolic retrieval problems.
    for i in 0..C6_INSTANCES {
        let kappa = curv(KAPPAS[rng.random_range(0..KAPPAS.len())]);
        let n_candidates = rng.random_range(1..=C6_MAX_SIZE);
        let n_queries = rng.random_range(1..=6);
        let candidates = random_points(&mut rng, n_candidates, kappa);
        let queries = random_points(&mut rng, n_queries, kappa);
        let truth: Vec<Vec<usize>> = (0..n_queries)
            .map(|_| {
                let size = rng.random_range(1..=n_candidates.min(3));
                (0..size).map(|_| rng.random_range(0..n_candidates)).collect()
            })
            .collect();
        let k = rng.random_range(1..=n_candidates);
        let lib = recall_at_k(&queries, &candidates, &truth, k).unwrap();
        let oracle = oracle_recall(&queries, &candidates, &truth, k);
        if lib != oracle {
            failures.push(format!("recall instance {i}: {lib} vs oracle {oracle}"));
        }
    }

    // retrieval_degree and bidirectional_consistency share score matrices.
    for i in 0..C6_INSTANCES {
        let rows = rng.random_range(1..=C6_MAX_SIZE);
        let cols = rng.random_range(1..=C6_MAX_SIZE);
        let similarity: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| lattice_score(&mut rng)).collect())
            .collect();
        let k = rng.random_range(1..=cols);
        let lib = retrieval_degree(&similarity, k).unwrap();
        let oracle = oracle_degrees(&similarity, k);
        if lib != oracle {
            failures.push(format!("degree instance {i}: {lib:?} vs oracle {oracle:?}"));
        }
        let square = rows.min(cols);
        if square > 0 {
            let pair = rng.random_range(0..square);
            let threshold = rng.random_range(1..=square);
            let lib = bidirectional_consistency(&similarity, pair, threshold).unwrap();
            let oracle = oracle_bidirectional(&similarity, pair, threshold);
            if lib != oracle {
                failures.push(format!(
                    "bidirectional instance {i}: {lib} vs oracle {oracle}"
                ));
            }
        }
    }

    // subspace_retrieval on random stores with mixed roles.
    for i in 0..C6_INSTANCES {
        let kappa = curv(KAPPAS[rng.random_range(0..KAPPAS.len())]);
        let mut texts = EmbeddingStore::new(kappa);
        let n = rng.random_range(1..=C6_MAX_SIZE);
        let mut previous: Option<LorentzPoint> = None;
        for t in 0..n {
            // Occasionally duplicate the previous point to force distance
            // ties and exercise the id tie-break.
            let point = match &previous {
                Some(p) if rng.random::<f64>() < 0.2 => p.clone(),
                _ => exp_map_origin(&random_tangent(&mut rng, 3, 1.2), kappa),
            };
            previous = Some(point.clone());
            let role = match t % 3 {
                0 => Role::Caption,
                1 => Role::NodeB,
                _ => Role::Image, // ignored by the retrieval
            };
            texts
                .push(EmbeddingRecord {
                    id: format!("t{t:02}"),
                    role,
                    level: 0,
                    point,
                })
                .unwrap();
        }
        let image = exp_map_origin(&random_tangent(&mut rng, 3, 1.2), kappa);
        if geodesic_distance(&origin(3, kappa), &image).unwrap() < 0.05 {
            continue;
        }
        let n_subspaces = rng.random_range(1..=6);
        let top = rng.random_range(1..=5);
        let lib = subspace_retrieval(&image, &texts, n_subspaces, top).unwrap();
        let oracle = oracle_subspace(&image, &texts, n_subspaces, top);
        if lib != oracle {
            failures.push(format!(
                "subspace instance {i}: {lib:?} vs oracle {oracle:?}"
            ));
        }
    }

    // Worked examples pinned across implementations.
    let ap = average_precision(
        &ScoredPairSet::new(vec![(0.9, true), (0.8, false), (0.7, true)]).unwrap(),
    )
    .unwrap();
    if (ap - 5.0 / 6.0).abs() > C6_METRIC_TOL {
        failures.push(format!("worked AP example gives {ap}, expected 5/6"));
    }
    let tau = kendall_tau(&[1, 0, 2, 3], &[0, 1, 2, 3]).unwrap();
    if tau != 2.0 / 3.0 {
        failures.push(format!("worked tau example gives {tau}, expected exactly 2/3"));
    }
    verdict(6, "metric oracle equivalence", &failures);
}

// --------------------------------------------------------------------
// criterion 7 — scored-pair collection fidelity
// --------------------------------------------------------------------

const C7_SAMPLES: usize = 2; // M
const C7_LEVELS: usize = 4; // L
const C7_POOL: usize = 100; // K
const C7_RATIO_TOL: f64 = 0.5;

/// Store whose geometry makes every positive score ≈ 1 and every negative
/// exactly 0: captions sit radially under their image, pool entries sit on
/// rays the images' cones cannot contain.
fn counting_store() -> (EmbeddingStore, Vec<PepSample>, Vec<String>) {
    let kappa = curv(1.0);
    let mut store = EmbeddingStore::new(kappa);
    let directions = [[0.6, 0.8, 0.0], [0.8, -0.6, 0.0]];
    let along = |dir: &[f64; 3], r: f64| {
        exp_map_origin(&tangent(&[dir[0] * r, dir[1] * r, dir[2] * r]), kappa)
    };
    let mut samples = Vec::new();
    for (i, dir) in directions.iter().enumerate() {
        store
            .push(EmbeddingRecord {
                id: format!("img_{i}"),
                role: Role::Image,
                level: 0,
                point: along(dir, 1.5),
            })
            .unwrap();
        let mut captions = Vec::new();
        for level in 1..=C7_LEVELS {
            let id = format!("cap_{i}_{level}");
            store
                .push(EmbeddingRecord {
                    id: id.clone(),
                    role: Role::Caption,
                    level: level as i32,
                    point: along(dir, 0.3 * level as f64),
                })
                .unwrap();
            captions.push(id);
        }
        samples.push(PepSample {
            image: format!("img_{i}"),
            captions,
        });
    }
    // Pool distractors on the ray opposite the first image.
    let opposite = [-0.6, -0.8, 0.0];
    let mut pool_ids = Vec::new();
    for j in 0..C7_POOL {
        let id = format!("neg_{j:02}");
        store
            .push(EmbeddingRecord {
                id: id.clone(),
                role: Role::Caption,
                level: C7_LEVELS as i32,
                point: along(&opposite, 0.2 + 0.003 * j as f64),
            })
            .unwrap();
        pool_ids.push(id);
    }
    (store, samples, pool_ids)
}

#[test]
fn criterion_07_scored_pair_collection_fidelity() {
    let mut failures = Vec::new();
    let (store, samples, fresh_pool) = counting_store();

    // Pool that contains both finest captions: one skip per sample.
    let mut pool = vec![
        samples[0].finest_caption().to_string(),
        samples[1].finest_caption().to_string(),
    ];
    pool.extend(fresh_pool[..C7_POOL - 2].iter().cloned());
    let input = PepInput {
        samples: samples.clone(),
        negative_pool: pool,
        levels: C7_LEVELS,
    };
    let set = pep_collect(&store, &input).unwrap();
    let expected_entries = C7_SAMPLES * C7_LEVELS + C7_SAMPLES * C7_POOL - C7_SAMPLES;
    if set.len() != expected_entries {
        failures.push(format!(
            "entry count {} != M·L + M·K − skips = {expected_entries}",
            set.len()
        ));
    }
    if set.positives() != C7_SAMPLES * C7_LEVELS {
        failures.push(format!(
            "positive count {} != M·L = {}",
            set.positives(),
            C7_SAMPLES * C7_LEVELS
        ));
    }
    let ratio = set.negatives() as f64 / set.positives() as f64;
    if (ratio - 25.0).abs() > C7_RATIO_TOL {
        failures.push(format!("pos:neg imbalance 1:{ratio} strays from 1:25"));
    }

    // Strict score separation makes both ranking metrics exactly 1.
    let min_positive = set
        .entries()
        .iter()
        .filter(|e| e.1)
        .map(|e| e.0)
        .fold(f64::INFINITY, f64::min);
    let max_negative = set
        .entries()
        .iter()
        .filter(|e| !e.1)
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if min_positive <= max_negative {
        failures.push(format!(
            "radial oracle store is not separated: min positive {min_positive}, max negative {max_negative}"
        ));
    }
    let auc = auc_roc(&set).unwrap();
    if auc != 1.0 {
        failures.push(format!("radial oracle AUC is {auc}, expected exactly 1"));
    }
    let ap = average_precision(&set).unwrap();
    if ap != 1.0 {
        failures.push(format!("radial oracle AP is {ap}, expected exactly 1"));
    }

    // With no finest caption in the pool, nothing is skipped.
    let input = PepInput {
        samples,
        negative_pool: fresh_pool,
        levels: C7_LEVELS,
    };
    let set = pep_collect(&store, &input).unwrap();
    if set.len() != C7_SAMPLES * C7_LEVELS + C7_SAMPLES * C7_POOL {
        failures.push(format!(
            "skip-free entry count {} != M·L + M·K = {}",
            set.len(),
            C7_SAMPLES * C7_LEVELS + C7_SAMPLES * C7_POOL
        ));
    }
    verdict(7, "scored-pair collection fidelity", &failures);
}

// --------------------------------------------------------------------
// criterion 8 — rank-correlation insensitivity regression
// --------------------------------------------------------------------

const C8_AP_TOL: f64 = 1e-12;

#[test]
fn criterion_08_rank_correlation_insensitivity() {
    let mut failures = Vec::new();
    // Two models mis-order exactly one adjacent level pair of a 4-level
    // chain: one at the coarse end, one at the fine end. Rank correlation
    // counts a single discordant pair either way.
    let reference = [0usize, 1, 2, 3];
    let coarse_swap = [1usize, 0, 2, 3];
    let fine_swap = [0usize, 1, 3, 2];
    let tau_coarse = kendall_tau(&coarse_swap, &reference).unwrap();
    let tau_fine = kendall_tau(&fine_swap, &reference).unwrap();
    if tau_coarse != tau_fine {
        failures.push(format!(
            "tau distinguishes the swaps: {tau_coarse} vs {tau_fine}"
        ));
    }
    if tau_coarse != 2.0 / 3.0 {
        failures.push(format!("tau is {tau_coarse}, expected exactly 2/3"));
    }

    // Scored-pair ranking does distinguish them: the same single negative
    // outranks the demoted coarse caption in one model but not the other.
    let coarse_set = ScoredPairSet::new(vec![
        (0.9, true),
        (0.8, false),
        (0.7, true),
        (0.6, true),
        (0.5, true),
    ])
    .unwrap();
    let fine_set = ScoredPairSet::new(vec![
        (0.9, true),
        (0.8, true),
        (0.7, false),
        (0.6, true),
        (0.5, true),
    ])
    .unwrap();
    let ap_coarse = average_precision(&coarse_set).unwrap();
    let ap_fine = average_precision(&fine_set).unwrap();
    let expected_coarse = (1.0 + 2.0 / 3.0 + 3.0 / 4.0 + 4.0 / 5.0) / 4.0;
    let expected_fine = (1.0 + 1.0 + 3.0 / 4.0 + 4.0 / 5.0) / 4.0;
    if (ap_coarse - expected_coarse).abs() > C8_AP_TOL {
        failures.push(format!(
            "coarse-swap AP {ap_coarse} differs from {expected_coarse}"
        ));
    }
    if (ap_fine - expected_fine).abs() > C8_AP_TOL {
        failures.push(format!("fine-swap AP {ap_fine} differs from {expected_fine}"));
    }
    if ap_coarse == ap_fine {
        failures.push(format!(
            "average precision fails to distinguish the swaps (both {ap_coarse})"
        ));
    }
    verdict(8, "rank-correlation insensitivity", &failures);
}

// --------------------------------------------------------------------
// criterion 9 — cone collapse vs adaptive entailment, 5 seeds
// --------------------------------------------------------------------

const C9_SEEDS: u64 = 5;
const C9_STEPS: u64 = 2000;
const C9_NORM_CHECK_EVERY: u64 = 100;
const C9_NORM_BAND: (f64, f64) = (0.3, 3.0);
const C9_MIN_COLLAPSE_SEEDS: usize = 4;
const C9_TIME_LIMIT: Duration = Duration::from_secs(300);

fn c9_config(mode: LossMode, gamma2: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        steps: C9_STEPS,
        batch_size: 64,
        learning_rate: 0.05,
        warmup_steps: 100,
        weight_decay: 0.0,
        seed,
        mode,
        loss: LossConfig {
            gamma2,
            ..LossConfig::default()
        },
        checkpoint_every: 0,
        scale_init: Some(1.0),
    }
}

#[test]
fn criterion_09_cone_collapse_vs_adaptive_entailment() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut collapse_seeds = 0usize;
    let mut auc_vanilla = Vec::new();
    let mut auc_adaent = Vec::new();
    for master in 0..C9_SEEDS {
        let dataset = generate_tree(3, 3, 16, 0.1, substream_seed(master, "dataset")).unwrap();
        let protocol = pep_input_from_tree(&dataset).unwrap();
        let train_seed = substream_seed(master, "batching");

        // Arm 1: unweighted hinge with the norm regularizer disabled.
        // Nothing counters the incentive to shrink parent norms, so the
        // fraction of parents inside the invalid region should grow.
        let trainer = Trainer::new(&dataset, c9_config(LossMode::Vanilla, 0.0, train_seed)).unwrap();
        let mut state = trainer.init_state().unwrap();
        let initial_invalid = trainer.norm_statistics(&state).parents.invalid_fraction;
        trainer.run(&mut state, C9_STEPS).unwrap();
        let final_invalid = trainer.norm_statistics(&state).parents.invalid_fraction;
        if final_invalid > initial_invalid {
            collapse_seeds += 1;
        }
        let store = trainer.export_store(&state).unwrap();
        auc_vanilla.push(auc_roc(&pep_collect(&store, &protocol).unwrap()).unwrap());

        // Arm 2: adaptive entailment with the regularizer at weight 0.1.
        // Mean norms must stay inside the healthy band the whole run.
        let trainer = Trainer::new(&dataset, c9_config(LossMode::AdaEnt, 0.1, train_seed)).unwrap();
        let mut state = trainer.init_state().unwrap();
        let mut checks = vec![trainer.norm_statistics(&state).all.mean];
        for _ in 0..(C9_STEPS / C9_NORM_CHECK_EVERY) {
            trainer.run(&mut state, C9_NORM_CHECK_EVERY).unwrap();
            checks.push(trainer.norm_statistics(&state).all.mean);
        }
        for (i, mean) in checks.iter().enumerate() {
            if !(C9_NORM_BAND.0..=C9_NORM_BAND.1).contains(mean) {
                failures.push(format!(
                    "seed {master}: adaptive-arm mean norm {mean} left [{}, {}] at check {i}",
                    C9_NORM_BAND.0, C9_NORM_BAND.1
                ));
            }
        }
        let store = trainer.export_store(&state).unwrap();
        auc_adaent.push(auc_roc(&pep_collect(&store, &protocol).unwrap()).unwrap());
    }
    if collapse_seeds < C9_MIN_COLLAPSE_SEEDS {
        failures.push(format!(
            "parent invalid-region fraction grew in only {collapse_seeds}/{C9_SEEDS} seeds (need >= {C9_MIN_COLLAPSE_SEEDS})"
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_vanilla = mean(&auc_vanilla);
    let mean_adaent = mean(&auc_adaent);
    if mean_adaent < mean_vanilla {
        failures.push(format!(
            "mean AUC: adaptive arm {mean_adaent} < hinge arm {mean_vanilla} ({auc_adaent:?} vs {auc_vanilla:?})"
        ));
    }
    let elapsed = started.elapsed();
    if elapsed >= C9_TIME_LIMIT {
        failures.push(format!("runtime {elapsed:?} exceeded {C9_TIME_LIMIT:?}"));
    }
    verdict(9, "cone collapse vs adaptive entailment", &failures);
}

// --------------------------------------------------------------------
// criterion 10 — reproducibility and checkpoint continuation
// --------------------------------------------------------------------

#[test]
fn criterion_10_reproducibility() {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate_tree(2, 3, 6, 0.1, 7).unwrap();
    let config = TrainConfig {
        steps: 60,
        batch_size: 8,
        learning_rate: 0.05,
        warmup_steps: 10,
        weight_decay: 0.0,
        seed: 99,
        mode: LossMode::AdaEnt,
        loss: LossConfig::default(),
        checkpoint_every: 0,
        scale_init: None,
    };

    // Identical config + seed: step-for-step identical traces, bytewise
    // identical exports, and identical rendered metric reports.
    let trainer = Trainer::new(&dataset, config.clone()).unwrap();
    let mut s1 = trainer.init_state().unwrap();
    let records1 = trainer.run(&mut s1, config.steps).unwrap();
    let mut s2 = trainer.init_state().unwrap();
    let records2 = trainer.run(&mut s2, config.steps).unwrap();
    if records1 != records2 {
        failures.push("twin runs disagree in their step records".to_string());
    }
    if s1 != s2 {
        failures.push("twin runs end in different states".to_string());
    }
    let p1 = dir.path().join("run1.emb");
    let p2 = dir.path().join("run2.emb");
    trainer.export_embeddings(&s1, &p1).unwrap();
    trainer.export_embeddings(&s2, &p2).unwrap();
    if std::fs::read(&p1).unwrap() != std::fs::read(&p2).unwrap() {
        failures.push("twin runs export different embedding bytes".to_string());
    }
    let protocol = pep_input_from_tree(&dataset).unwrap();
    let render = |state| -> String {
        let set = pep_collect(&trainer.export_store(state).unwrap(), &protocol).unwrap();
        format!(
            "auc = {}\nap = {}\n",
            auc_roc(&set).unwrap(),
            average_precision(&set).unwrap()
        )
    };
    if render(&s1) != render(&s2) {
        failures.push("twin runs render different metric reports".to_string());
    }

    // Checkpoint continuation matches the uninterrupted run step-for-step.
    let mut straight = trainer.init_state().unwrap();
    let straight_records = trainer.run(&mut straight, config.steps).unwrap();
    let mut first_leg = trainer.init_state().unwrap();
    let first_records = trainer.run(&mut first_leg, 25).unwrap();
    let ckpt = dir.path().join("mid.ckpt");
    checkpoint(&first_leg, &ckpt).unwrap();
    let mut resumed = restore(&ckpt).unwrap();
    if resumed != first_leg {
        failures.push("restored state differs from the checkpointed one".to_string());
    }
    let resumed_records = trainer.run(&mut resumed, config.steps - 25).unwrap();
    if first_records[..] != straight_records[..25] {
        failures.push("pre-checkpoint leg diverges from the uninterrupted run".to_string());
    }
    if resumed_records[..] != straight_records[25..] {
        failures.push("post-restore leg diverges from the uninterrupted run".to_string());
    }
    if resumed != straight {
        failures.push("resumed run ends in a different state".to_string());
    }
    verdict(10, "reproducibility", &failures);
}

// --------------------------------------------------------------------
// criterion 11 — format round trips and corruption handling
// --------------------------------------------------------------------

/// Distance drift allowed by one f32 quantization of the coordinates.
const C11_QUANTIZATION_TOL: f64 = 1e-4;

#[test]
fn criterion_11_format_round_trips() {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir().unwrap();

    // Dataset: bit-exact value round trip.
    let dataset = generate_tree(3, 2, 5, 0.2, 11).unwrap();
    let ds_path = dir.path().join("tree.hier");
    save_dataset(&dataset, &ds_path).unwrap();
    if load_dataset(&ds_path).unwrap() != dataset {
        failures.push("dataset changed across save/load".to_string());
    }

    // Embedding store: loading quantizes coordinates to f32 once; from the
    // second generation onward both formats are bytewise fixed points.
    let kappa = curv(0.5);
    let mut store = EmbeddingStore::new(kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC11);
    for i in 0..6 {
        store
            .push(EmbeddingRecord {
                id: format!("rec_{i}"),
                role: if i % 2 == 0 { Role::NodeA } else { Role::NodeB },
                level: i,
                point: exp_map_origin(&random_tangent(&mut rng, 4, 1.0), kappa),
            })
            .unwrap();
    }
    let t = |g: u32| dir.path().join(format!("store_t{g}.emb"));
    store.save_text(&t(1)).unwrap();
    let s1 = EmbeddingStore::load(&t(1)).unwrap();
    s1.save_text(&t(2)).unwrap();
    let s2 = EmbeddingStore::load(&t(2)).unwrap();
    s2.save_text(&t(3)).unwrap();
    if std::fs::read(&t(2)).unwrap() != std::fs::read(&t(3)).unwrap() {
        failures.push("text store is not a fixed point after one generation".to_string());
    }
    let b = |g: u32| dir.path().join(format!("store_b{g}.lemb"));
    store.save_binary(&b(1)).unwrap();
    let b1 = EmbeddingStore::load(&b(1)).unwrap();
    b1.save_binary(&b(2)).unwrap();
    let b2 = EmbeddingStore::load(&b(2)).unwrap();
    b2.save_binary(&b(3)).unwrap();
    if std::fs::read(&b(2)).unwrap() != std::fs::read(&b(3)).unwrap() {
        failures.push("binary store is not a fixed point after one generation".to_string());
    }
    // Both twins decode to identical records, and quantization moves no
    // pairwise distance beyond the f32 budget.
    if s1.records() != b1.records() {
        failures.push("text and binary loads decode different records".to_string());
    }
    for i in 0..store.len() {
        for j in (i + 1)..store.len() {
            let before =
                geodesic_distance(&store.records()[i].point, &store.records()[j].point).unwrap();
            let after =
                geodesic_distance(&s1.records()[i].point, &s1.records()[j].point).unwrap();
            if (before - after).abs() > C11_QUANTIZATION_TOL {
                failures.push(format!(
                    "distance ({i}, {j}) drifted {before} → {after} across one reload"
                ));
            }
        }
    }

    // Checkpoint: bit-exact state round trip and bytewise fixed point.
    let config = TrainConfig {
        steps: 10,
        batch_size: 4,
        learning_rate: 0.05,
        warmup_steps: 2,
        weight_decay: 0.0,
        seed: 5,
        mode: LossMode::AdaEnt,
        loss: LossConfig::default(),
        checkpoint_every: 0,
        scale_init: None,
    };
    let trainer = Trainer::new(&dataset, config).unwrap();
    let mut state = trainer.init_state().unwrap();
    trainer.run(&mut state, 10).unwrap();
    let c1 = dir.path().join("state1.ckpt");
    let c2 = dir.path().join("state2.ckpt");
    checkpoint(&state, &c1).unwrap();
    let restored = restore(&c1).unwrap();
    if restored != state {
        failures.push("checkpoint round trip changed the state".to_string());
    }
    checkpoint(&restored, &c2).unwrap();
    if std::fs::read(&c1).unwrap() != std::fs::read(&c2).unwrap() {
        failures.push("checkpoint bytes differ across one round trip".to_string());
    }

    // Corruption: truncated, wrong-magic, wrong-version, and garbled
    // files must all surface as structured errors, never partial loads.
    let corrupt = |name: &str, bytes: Vec<u8>| -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let originals = [
        std::fs::read(&ds_path).unwrap(),
        std::fs::read(&t(2)).unwrap(),
        std::fs::read(&b(2)).unwrap(),
        std::fs::read(&c1).unwrap(),
    ];
    for (kind, bytes) in ["dataset", "text store", "binary store", "checkpoint"]
        .iter()
        .zip(&originals)
    {
        let truncated = corrupt("truncated", bytes[..bytes.len() * 3 / 5].to_vec());
        let outcome: Result<(), hypercone::error::Error> = match *kind {
            "dataset" => load_dataset(&truncated).map(|_| ()),
            "checkpoint" => restore(&truncated).map(|_| ()),
            _ => EmbeddingStore::load(&truncated).map(|_| ()),
        };
        if outcome.is_ok() {
            failures.push(format!("truncated {kind} loaded without error"));
        }
        let mut garbled = bytes.clone();
        garbled[0] ^= 0x10;
        let flipped = corrupt("flipped", garbled);
        let outcome: Result<(), hypercone::error::Error> = match *kind {
            "dataset" => load_dataset(&flipped).map(|_| ()),
            "checkpoint" => restore(&flipped).map(|_| ()),
            _ => EmbeddingStore::load(&flipped).map(|_| ()),
        };
        if outcome.is_ok() {
            failures.push(format!("magic-flipped {kind} loaded without error"));
        }
    }
    // Version bumps surface as unsupported-version errors.
    let text = String::from_utf8(std::fs::read(&ds_path).unwrap()).unwrap();
    let bumped = corrupt("tree_v9.hier", text.replacen("HIER v1", "HIER v9", 1).into_bytes());
    if !matches!(
        load_dataset(&bumped),
        Err(hypercone::error::Error::UnsupportedVersion { .. })
    ) {
        failures.push("future dataset version did not raise the version error".to_string());
    }
    let text = String::from_utf8(std::fs::read(&t(2)).unwrap()).unwrap();
    let bumped = corrupt("store_v9.emb", text.replacen("EMB v1", "EMB v9", 1).into_bytes());
    if !matches!(
        EmbeddingStore::load(&bumped),
        Err(hypercone::error::Error::UnsupportedVersion { .. })
    ) {
        failures.push("future store version did not raise the version error".to_string());
    }
    let mut bytes = std::fs::read(&c1).unwrap();
    bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
    let bumped = corrupt("state_v9.ckpt", bytes);
    if !matches!(
        restore(&bumped),
        Err(hypercone::error::Error::UnsupportedVersion { .. })
    ) {
        failures.push("future checkpoint version did not raise the version error".to_string());
    }
    // A garbled numeric field is a parse error with a line number.
    let text = String::from_utf8(std::fs::read(&t(2)).unwrap()).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let tokens: Vec<String> = lines[1].split(' ').map(str::to_string).collect();
    lines[1] = {
        let mut t = tokens.clone();
        t[3] = "bogus".to_string();
        t.join(" ")
    };
    let garbled = corrupt("store_garbled.emb", (lines.join("\n") + "\n").into_bytes());
    if !matches!(
        EmbeddingStore::load(&garbled),
        Err(hypercone::error::Error::Parse { .. })
    ) {
        failures.push("garbled store coordinate did not raise a parse error".to_string());
    }
    verdict(11, "format round trips", &failures);
}
