//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skewlab::analysis::{
    compute_constants, convergence_experiment, correlation_experiment, fit_lasota_yorke, SpectralConstants,
    SpectralInputs,
};
use skewlab::base_dynamics::{
    admissibility_lhs, check_torus_example, estimate_base_rate, perron_frobenius, perron_frobenius_exact, BaseMap,
    ExponentMode, GridDensity, SystemParams, WeightsMode,
};
use skewlab::fiber_measure::{push_contraction, w_norm, AtomicMeasure, FiberContraction};
use skewlab::geometry::BaseMetric;
use skewlab::skew_measure::{path_holder_constant_with, product_measure, weak_norm, Observable};
use skewlab::transfer_operator::{
    compute_invariant, random_measure, Discretization, FiberFamily, SkewSystem, TransferOperator, PATH_PAIR_BUDGET,
};

// pinned tolerances
const CONTRACTION_TOL: f64 = 1e-9;
const CONTRACTION_BUDGET: Duration = Duration::from_secs(60);
const NORMALIZATION_TOL: f64 = 1e-9;
const VERTEX_TOL: f64 = 1e-8;
const LP_TOL: f64 = 1e-8;
const WEAK_FACTOR: f64 = 1.05;
const WEAK_EXACT_TOL: f64 = 1e-9;
const RATE_MARGIN: f64 = 0.05;
const CONVERGENCE_FACTOR: f64 = 1.1;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(300);
const HOLDER_MARGIN: f64 = 0.1;
const CORRELATION_FLOOR: f64 = 1e-12;
const PF_ONE_TOL: f64 = 1e-12;
const PF_INTEGRAL_TOL: f64 = 1e-6;
const PF_COS_TOL: f64 = 1e-6;
const ADMISSIBILITY_TOL: f64 = 1e-3;

const GRID: usize = 256;
const CAP: usize = 64;
const SEED: u64 = 20240611;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Doubling base with `G(x, y) = alpha y + c1 x`.
fn doubling_system(alpha: f64, c1: f64) -> SkewSystem {
    let params = SystemParams {
        zeta: 1.0,
        alpha,
        big_l: 1.0,
        sigma: 1.9,
        q: 0,
        eps_rho: 0.01,
        g_holder: c1,
        exponent_mode: ExponentMode::UseZeta,
    };
    SkewSystem::new(
        BaseMap::doubling().unwrap(),
        FiberFamily::affine(alpha, 0.0, c1),
        params,
    )
    .unwrap()
    .with_metric(BaseMetric::Interval)
}

fn operator(sys: &SkewSystem) -> TransferOperator {
    TransferOperator::new(
        sys,
        Discretization {
            cells: GRID,
            cap: Some(CAP),
        },
    )
    .unwrap()
}

fn random_contraction(rng: &mut impl Rng, alpha: f64) -> FiberContraction {
    let scale = alpha * rng.random_range(-1.0..=1.0);
    let shift = -scale.min(0.0) + rng.random::<f64>() * (1.0 - scale.abs());
    FiberContraction::new(alpha, scale, shift).unwrap()
}

fn fiber_contraction() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for alpha in [0.3, 0.5, 0.9] {
        for zeta in [0.5, 1.0] {
            for _ in 0..1000 {
                let mu = common::random_zero_mass(&mut rng, 16);
                let push = push_contraction(&mu, &random_contraction(&mut rng, alpha)).unwrap();
                let excess = w_norm(&push, zeta).unwrap() - alpha.powf(zeta) * w_norm(&mu, zeta).unwrap();
                worst = worst.max(excess);
                cases += 1;
            }
        }
    }
    let took = start.elapsed();
    outcome(
        worst <= CONTRACTION_TOL && took < CONTRACTION_BUDGET,
        format!(
            "{cases} cases, max excess over alpha^zeta bound {worst:.3e}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn probability_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let zeta = rng.random_range(0.2..=1.0);
        let mut mu = common::random_probability(&mut rng, 16);
        let n = rng.random_range(1..=10);
        for step in 0..=n {
            if step > 0 {
                let alpha = rng.random_range(0.05..0.99);
                mu = push_contraction(&mu, &random_contraction(&mut rng, alpha)).unwrap();
            }
            worst = worst.max((w_norm(&mu, zeta).unwrap() - 1.0).abs());
        }
    }
    outcome(
        worst <= NORMALIZATION_TOL,
        format!("500 fibers with up to 10 pushforwards, max |w_norm - 1| {worst:.3e}"),
    )
}

fn lp_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let (mut small, mut large): (f64, f64) = (0.0, 0.0);
    for i in 0..500 {
        let zeta = if i % 2 == 0 { 1.0 } else { rng.random_range(0.2..1.0) };
        let mu = if i % 3 == 0 {
            common::random_zero_mass(&mut rng, 3)
        } else {
            common::random_signed(&mut rng, 3)
        };
        small = small.max((w_norm(&mu, zeta).unwrap() - common::w_norm_vertices(&mu, zeta)).abs());
    }
    for i in 0..500 {
        let zeta = if i % 2 == 0 { 1.0 } else { rng.random_range(0.2..1.0) };
        let mu = common::random_signed(&mut rng, 12);
        large = large.max((w_norm(&mu, zeta).unwrap() - common::w_norm_lp(&mu, zeta)).abs());
    }
    outcome(
        small <= VERTEX_TOL && large <= LP_TOL,
        format!("max diff vs vertex enumeration {small:.3e}, vs all-pairs LP {large:.3e}"),
    )
}

fn weak_contraction() -> Outcome {
    let mut worst_ratio: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let dependent = operator(&doubling_system(0.5, 0.25));
    let independent = operator(&doubling_system(0.5, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    for _ in 0..100 {
        let mu = random_measure(GRID, 8, true, &mut rng).unwrap();
        let w0 = weak_norm(&mu, 1.0).unwrap();
        let w1 = weak_norm(&dependent.apply(&mu).unwrap().0, 1.0).unwrap();
        worst_ratio = worst_ratio.max(w1 / w0);
        let w2 = weak_norm(&independent.apply(&mu).unwrap().0, 1.0).unwrap();
        worst_exact = worst_exact.max(w2 / w0);
    }
    outcome(
        worst_ratio <= WEAK_FACTOR && worst_exact <= 1.0 + WEAK_EXACT_TOL,
        format!("max ratio {worst_ratio:.6}, x-independent max ratio {worst_exact:.12}"),
    )
}

/// Constants for the doubling system `0.5 y + 0.25 x` with measured base rate
/// and fitted Lasota-Yorke envelope.
fn main_constants(op: &TransferOperator) -> SpectralConstants {
    let rate = estimate_base_rate(&BaseMap::doubling().unwrap(), 1.0, 12, 16, SEED, GRID).unwrap();
    let ly = fit_lasota_yorke(op, 8, 12, SEED).unwrap();
    compute_constants(SpectralInputs {
        alpha: 0.5,
        zeta: 1.0,
        r: rate.r_hat,
        d_base: rate.d_hat,
        big_l: 1.0,
        eps_rho: 0.01,
        g_holder: 0.25,
        a: ly.a,
        lambda: ly.lambda,
        b2: ly.b2,
    })
    .unwrap()
}

fn convergence(op: &TransferOperator, c: &SpectralConstants) -> Outcome {
    let start = Instant::now();
    let mu = product_measure(&AtomicMeasure::dirac(0.0).unwrap(), GRID).unwrap();
    let nu = product_measure(&AtomicMeasure::new([(0.2, 0.5), (1.0, 0.5)]).unwrap(), GRID).unwrap();
    let rep = convergence_experiment(op, &mu, &nu, 20, c).unwrap();
    let took = start.elapsed();
    let strong0 = rep.rows[0].strong_norm;
    let within = rep.rows[1..]
        .iter()
        .all(|r| r.weak_norm <= c.d2 * c.beta1.powi(r.n as i32) * strong0 * CONVERGENCE_FACTOR);
    let rate = rep.fitted_rate.unwrap_or(f64::NAN);
    outcome(
        rate <= c.beta1 + RATE_MARGIN && within && took < CONVERGENCE_BUDGET,
        format!(
            "fitted rate {rate:.4} vs beta1 {:.4} (r_hat {:.4}), per-n bound held {within}, {:.1}s",
            c.beta1,
            c.inputs.r,
            took.as_secs_f64()
        ),
    )
}

fn holder_propagation(
    op: &TransferOperator,
    c: &SpectralConstants,
    mu0: &skewlab::skew_measure::DisintegratedMeasure,
) -> Outcome {
    let bound = c.holder_bound + HOLDER_MARGIN;
    let mut m = product_measure(&AtomicMeasure::dirac(0.5).unwrap(), GRID).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..=15 {
        if n > 0 {
            m = op.apply(&m).unwrap().0;
        }
        let h = path_holder_constant_with(&m, 1.0, PATH_PAIR_BUDGET, SEED + n, BaseMetric::Interval).unwrap();
        worst = worst.max(h.value);
    }
    let inv = path_holder_constant_with(mu0, 1.0, PATH_PAIR_BUDGET, SEED, BaseMetric::Interval)
        .unwrap()
        .value;
    outcome(
        worst <= bound && inv <= bound,
        format!("max over n <= 15 {worst:.4}, invariant {inv:.4}, bound D/(1-beta) + 0.1 = {bound:.4}"),
    )
}

fn correlations(
    op: &TransferOperator,
    c: &SpectralConstants,
    mu0: &skewlab::skew_measure::DisintegratedMeasure,
) -> Outcome {
    let s = correlation_experiment(
        op,
        mu0,
        &Observable::cos_x(1, 1.0),
        &Observable::fiber_coordinate(1.0),
        20,
        c,
    )
    .unwrap();
    let positive = s.rows[..4].iter().all(|r| r.c_n > CORRELATION_FLOOR);
    let bounded = s.rows.iter().all(|r| r.c_n <= r.bound_n);
    let rate_ok = s.fitted_rate.is_some_and(|r| r <= s.xi + RATE_MARGIN);
    let c_max = s.rows.iter().map(|r| r.c_n).fold(0.0, f64::max);
    let mut detail = format!(
        "max C_n {c_max:.3e} (n <= 20), C_n > 0 for n <= 3: {positive}, fitted rate {:?} vs xi {:.4}, C_n <= bound_n: {bounded}",
        s.fitted_rate, s.xi
    );
    if s.degenerate {
        detail.push_str("; degenerate series");
    }
    // the same run with sin(2 pi x), reported for reference only
    let alt = correlation_experiment(
        op,
        mu0,
        &Observable::sin_x(1, 1.0),
        &Observable::fiber_coordinate(1.0),
        20,
        c,
    )
    .unwrap();
    println!(
        "note: with f = sin(2 pi x): C_0 {:.3e}, C_20 {:.3e}, fitted rate {:?}, all C_n <= bound_n: {}",
        alt.rows[0].c_n,
        alt.rows[20].c_n,
        alt.fitted_rate,
        alt.rows.iter().all(|r| r.c_n <= r.bound_n)
    );
    outcome(positive && bounded && rate_ok, detail)
}

fn base_identities() -> Outcome {
    let n = 512;
    let tau = 2.0 * std::f64::consts::PI;
    let one = GridDensity::constant(n, 1.0).unwrap();
    let mut one_err: f64 = 0.0;
    for f in [
        BaseMap::doubling().unwrap(),
        BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap(),
    ] {
        let out = perron_frobenius(&f, &one).unwrap();
        one_err = one_err.max(out.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max));
    }
    let densities: [fn(f64) -> f64; 3] = [
        |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin(),
        |x| 1.0 + 0.3 * (6.0 * std::f64::consts::PI * x).cos() + 0.2 * (4.0 * std::f64::consts::PI * x).sin(),
        |x| 0.5 + (x - 0.5).abs(),
    ];
    // the identity holds for exact weights; the cell lookup adds an O(1/N)
    // drift and normalized weights do not preserve Lebesgue, both reported
    let mut per_map = Vec::new();
    let mut integral_err: f64 = 0.0;
    for (name, f) in [
        ("doubling", BaseMap::doubling().unwrap()),
        ("slopes(3,1.5)", BaseMap::piecewise_linear(&[3.0, 1.5]).unwrap()),
        ("perturbed(0.3)", BaseMap::perturbed_doubling(0.3).unwrap()),
    ] {
        let (mut exact, mut lookup): (f64, f64) = (0.0, 0.0);
        for phi in densities {
            let g = GridDensity::from_fn(n, phi).unwrap();
            exact = exact.max((perron_frobenius_exact(&f, phi, 1, n).unwrap().integral() - g.integral()).abs());
            lookup = lookup.max((perron_frobenius(&f, &g).unwrap().integral() - g.integral()).abs());
        }
        if f.weights_mode() == WeightsMode::Exact {
            integral_err = integral_err.max(exact);
            per_map.push(format!("{name} {exact:.2e} (cell lookup {lookup:.2e})"));
        } else {
            per_map.push(format!(
                "{name} normalized, not checked: {exact:.2e} (cell lookup {lookup:.2e})"
            ));
        }
    }
    let cos = GridDensity::from_fn(n, |x| (tau * x).cos()).unwrap();
    let cos_err = perron_frobenius(&BaseMap::doubling().unwrap(), &cos)
        .unwrap()
        .values()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    outcome(
        one_err <= PF_ONE_TOL && integral_err <= PF_INTEGRAL_TOL && cos_err <= PF_COS_TOL,
        format!(
            "P(1) err {one_err:.2e}; integral err {}; P(cos) err {cos_err:.2e}",
            per_map.join(", ")
        ),
    )
}

fn hypothesis_checker() -> Outcome {
    let lhs = admissibility_lhs(2, 1, 2.0, 1.05, 0.01, 1.0);
    let small = check_torus_example(0.05, 0.1, 2.0, 1.0, 256).unwrap();
    let large = check_torus_example(0.9, 0.1, 2.0, 1.0, 256).unwrap();
    let failed_small: Vec<&str> = small
        .conditions
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let log_ratio_fails = large.get("torus_log_ratio").is_some_and(|c| !c.passed);
    outcome(
        (lhs - 0.809).abs() <= ADMISSIBILITY_TOL && small.all_passed() && log_ratio_fails,
        format!(
            "admissibility lhs {lhs:.4}; a = 0.05 failing conditions {failed_small:?}; a = 0.9 log-ratio fails {log_ratio_fails}"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("system.toml");
    std::fs::write(
        &config,
        r#"[system]
base = "doubling"
alpha = 0.5
c1 = 0.25
zeta = 1.0
sigma = 1.9
eps_rho = 0.01
g_holder = 0.25
metric = "interval"

[discretization]
cells = 64
cap = 32

[experiment]
seed = 7
n_max = 8
invariant_iters = 40
tol = 1e-8
"#,
    )
    .unwrap();
    let mut identical = Vec::new();
    for (cmd, csv) in [
        ("invariant", "convergence.csv"),
        ("converge", "convergence.csv"),
        ("holder", "holder.csv"),
        ("correlate", "correlations.csv"),
    ] {
        let mut runs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{cmd}-{k}"));
            let status = Command::new(env!("CARGO_BIN_EXE_skewlab"))
                .args([cmd, "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            runs.push((status.status.code(), std::fs::read(out.join(csv)).ok()));
        }
        let same = runs[0].1.is_some() && runs[0] == runs[1];
        identical.push((cmd, same));
    }
    let all = identical.iter().all(|x| x.1);
    outcome(all, format!("byte-identical CSVs per subcommand: {identical:?}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |k: usize, name: &str, o: Outcome| {
        println!(
            "criterion {k:>2} {} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    };
    report(1, "fiber contraction", fiber_contraction());
    report(2, "probability normalization", probability_normalization());
    report(3, "LP oracle equivalence", lp_oracles());
    report(4, "weak contraction", weak_contraction());

    let sys = doubling_system(0.5, 0.25);
    let op = operator(&sys);
    let constants = main_constants(&op);
    let mu0 = compute_invariant(&op, &AtomicMeasure::dirac(0.5).unwrap(), 1e-10, 200).unwrap();
    report(5, "convergence to equilibrium", convergence(&op, &constants));
    report(
        6,
        "Hölder propagation",
        holder_propagation(&op, &constants, &mu0.measure),
    );
    report(7, "decay of correlations", correlations(&op, &constants, &mu0.measure));
    report(8, "base operator identities", base_identities());
    report(9, "hypothesis checker", hypothesis_checker());
    report(10, "determinism", determinism());

    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
