//! End-to-end acceptance run: one line per criterion, nonzero exit on any
//! failure. Reference values come from closed forms or independent
//! re-implementations inside this file; the finite-difference oracle is the
//! reference for variable coefficients.

use std::f64::consts::{E, PI};
use std::time::{Duration, Instant};

use parametrix_core::bounds::{
    chaining_log_terms, derivative_bound_check, envelope_ratio, log_tail_sum_bound, pointwise_bound_check,
    ChainingBound, DerivativeGrids, GaussianEnvelope,
};
use parametrix_core::coefficients::{dyadic_radii, modulus_continuity, CoefficientField, ProbeSpec, TimeCurve};
use parametrix_core::frozen_kernel::{
    bound_constants, c1_constant, reproducing_identity_check, FrozenKernel, GaussianQuadSpec,
};
use parametrix_core::grid::{GridSpec, Method};
use parametrix_core::linalg::SymMatrix;
use parametrix_core::oracle::{adjoint_kernel, adjoint_solve_and_symmetry, ck_check, gamma_eps, mass_check, FdGridSpec};
use parametrix_core::parametrix::{
    build_short_time, curve_grid, delta0, extend_semigroup, ParametrixConfig, ShortTimeKernel, TableSpec,
};
use parametrix_core::{Error, KernelGrid, SpaceTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn points(times: &[f64], xs: &[f64]) -> Vec<SpaceTime> {
    times
        .iter()
        .flat_map(|&t| xs.iter().map(move |&x| SpaceTime::new(t, &[x])))
        .collect()
}

fn sin_field() -> CoefficientField {
    CoefficientField::x_sine(1, 1.0, 0.3, 1.0).unwrap()
}

fn holder_field() -> CoefficientField {
    CoefficientField::holder(1, 1.0, 0.5, 0.5, 1.0).unwrap()
}

/// Quadrature a notch below the library default; agrees with it to ~2e-5.
fn test_config() -> ParametrixConfig {
    ParametrixConfig {
        delta0: 0.5f64.sqrt(),
        time_nodes: 16,
        space_nodes_per_dim: 20,
        table: TableSpec {
            time_slices: 16,
            z_nodes: 41,
        },
        ..ParametrixConfig::default()
    }
}

/// Keeps the listed target rows of a grid.
fn select_targets(grid: &KernelGrid, keep: impl Fn(&SpaceTime) -> bool) -> KernelGrid {
    let rows: Vec<usize> = (0..grid.targets().len()).filter(|&i| keep(&grid.targets()[i])).collect();
    let targets = rows.iter().map(|&i| grid.targets()[i].clone()).collect();
    let mut out = KernelGrid::zeros(grid.dim(), targets, grid.sources().to_vec(), grid.method).unwrap();
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..grid.sources().len() {
            out.set(r, j, grid.get(i, j));
        }
    }
    out
}

/// Shared builds reused by several criteria.
struct Shared {
    sin_build: ShortTimeKernel,
    sin_build_time: Duration,
    sin_sources: Vec<f64>,
    holder_step: ShortTimeKernel,
    composition: GridSpec,
}

fn shared() -> Shared {
    let sin_sources = vec![-1.0, 0.0, 1.5];
    let times = [0.1, 0.2, 0.3, 0.4, 0.5];
    let xs: Vec<f64> = (0..18).map(|i| -4.0 + 0.5 * i as f64).collect();
    let targets = points(&times, &xs);
    let sources: Vec<SpaceTime> = sin_sources.iter().map(|&y| SpaceTime::new(0.0, &[y])).collect();
    let start = Instant::now();
    let sin_build = build_short_time(&sin_field(), &targets, &sources, &test_config()).unwrap();
    let sin_build_time = start.elapsed();

    let composition = GridSpec::new(&[0.0], 4.0, 81);
    let holder_step = build_short_time(
        &holder_field(),
        &composition.space_times(0.1),
        &composition.space_times(0.0),
        &test_config(),
    )
    .unwrap();
    Shared {
        sin_build,
        sin_build_time,
        sin_sources,
        holder_step,
        composition,
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let field = CoefficientField::identity(1);
    let k = build_short_time(
        &field,
        &[SpaceTime::new(1.0, &[0.0])],
        &[SpaceTime::new(0.0, &[0.0])],
        &ParametrixConfig::default(),
    )?;
    let value = k.grid.get(0, 0);
    let exact = 1.0 / (4.0 * PI).sqrt();
    let terms_zero = k.terms.iter().all(|r| r.norms.iter().all(|n| *n == 0.0));
    let w0 = parametrix_core::parametrix::w0(&field, 1.0, &[0.3], 0.2, &[-0.4], &ParametrixConfig::default())?;
    let elapsed = start.elapsed();
    let err = (value - exact).abs();
    Ok(outcome(
        err <= 1e-8 && terms_zero && w0 == 0.0 && elapsed < Duration::from_secs(1),
        format!("Gamma(1,0,0,0) = {value:.12}, |err| = {err:.2e}, Levi terms zero = {terms_zero}, {elapsed:.2?}"),
    ))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let field = CoefficientField::t_sine(1, 2.0, 1.0, 1.0)?;
    let targets: Vec<SpaceTime> = (0..20)
        .map(|i| SpaceTime::new(0.5 + 0.1 * i as f64, &[-2.0 + 4.0 * i as f64 / 19.0]))
        .collect();
    let sources: Vec<SpaceTime> = (0..20)
        .map(|j| SpaceTime::new(0.025 * j as f64, &[2.0 - 4.0 * j as f64 / 19.0]))
        .collect();
    let k = build_short_time(&field, &targets, &sources, &ParametrixConfig::default())?;
    let mut worst = 0.0_f64;
    for (i, tg) in targets.iter().enumerate() {
        for (j, sc) in sources.iter().enumerate() {
            // Sigma = 2 int (2 + sin r) dr
            let sigma = 2.0 * (2.0 * (tg.t - sc.t) - tg.t.cos() + sc.t.cos());
            let r = tg.x[0] - sc.x[0];
            let exact = (2.0 * PI * sigma).powf(-0.5) * (-r * r / (2.0 * sigma)).exp();
            worst = worst.max((k.grid.get(i, j) - exact).abs());
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("400 pairs, max |Gamma - closed form| = {worst:.2e}, {elapsed:.2?}"),
    ))
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0_f64;
    let mut n = 0;
    while n < 10 {
        let d = 1 + n % 2;
        let kappa = rng.random_range(0.05..0.5);
        let mut ts = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        ts.sort_by(f64::total_cmp);
        let [tau, s, t] = ts;
        if !(s - tau > 1e-3 && t - s > 1e-3) {
            continue;
        }
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = reproducing_identity_check(kappa, d, s, tau, t, &x, &xi, &GaussianQuadSpec::default())?;
        worst = worst.max(r.abs_err / r.rhs);
        n += 1;
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("10 configurations in d = 1, 2, max relative error = {worst:.2e}, {elapsed:.2?}"),
    ))
}

/// Trapezoid rule on [-L, L]; spectrally accurate for a Gaussian.
fn gaussian_integral_1d(kappa: f64) -> f64 {
    let half = (40.0 / kappa).sqrt();
    let n = 20_000;
    let h = 2.0 * half / n as f64;
    (0..=n)
        .map(|i| {
            let y = -half + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * (-kappa * y * y).exp()
        })
        .sum::<f64>()
        * h
}

fn log_direct_tail(k: u32, alpha: f64) -> f64 {
    let logs: Vec<f64> = (2..100_002u64)
        .map(|n| k as f64 * ((n + 1) as f64).ln() - alpha * (n - 1) as f64)
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut c2_err = 0.0_f64;
    for d in [1usize, 2] {
        for (lambda, big) in [(1.0, 1.0), (0.5, 2.0)] {
            let c = bound_constants(lambda, big, 0.5, d)?;
            let direct = gaussian_integral_1d(c.kappa0_prime).powi(d as i32);
            c2_err = c2_err.max((c.c2 - direct).abs() / direct);
        }
    }

    let mut c1_err = 0.0_f64;
    for (k0, k0p) in [(0.25, 0.125), (0.125, 0.0625), (1.0, 0.9)] {
        let c1 = c1_constant(k0, k0p)?;
        let gap: f64 = k0 - k0p;
        let n = 1_000_000;
        let (lo, hi) = ((1e-9f64).ln(), (100.0 / gap).ln());
        let brute = (0..n)
            .map(|i| {
                let u = (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp();
                (2.0 * u.sqrt() * (1.0 + u)).max(1.0 + u) * (-gap * u).exp()
            })
            .fold(1.0_f64, f64::max);
        c1_err = c1_err.max((c1 - brute).abs() / brute);
    }

    let mut dominated = 0;
    let mut min_margin = f64::INFINITY;
    for k in 0..20u32 {
        for a in 0..20 {
            let alpha = 0.05 * 400f64.powf(a as f64 / 19.0);
            let margin = log_tail_sum_bound(k, alpha)? - log_direct_tail(k, alpha);
            min_margin = min_margin.min(margin);
            if margin >= 0.0 {
                dominated += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        c2_err <= 1e-10 && c1_err <= 1e-6 && dominated == 400 && elapsed < Duration::from_secs(30),
        format!(
            "C2 rel err {c2_err:.1e}, C1 rel err vs 1e6-point scan {c1_err:.1e}, tail bound dominates {dominated}/400 (min log margin {min_margin:.3}), {elapsed:.2?}"
        ),
    ))
}

fn sin_dini_horizon() -> Result<f64, Error> {
    let field = sin_field();
    let c = bound_constants(field.lambda(), field.big_lambda(), 0.5, 1)?.with_c1()?;
    let profile = modulus_continuity(&field, &dyadic_radii(12), &ProbeSpec::default())?;
    delta0(&profile, &c)
}

fn criterion_5(s: &Shared) -> Check {
    let ratio = s.sin_build.max_ratio();
    let levels = s.sin_build.max_levels();
    let computed = sin_dini_horizon()?;
    Ok(outcome(
        ratio <= 0.6 && levels >= 2 && s.sin_build_time < Duration::from_secs(120),
        format!(
            "{} targets, up to {levels} terms, max ||w_k+1||/||w_k|| = {ratio:.4}; horizon 0.5 (computed delta0^2 = {:.2e}, overridden), {:.1?}",
            s.sin_build.terms.len(),
            computed * computed,
            s.sin_build_time
        ),
    ))
}

fn criterion_6(s: &Shared) -> Check {
    let start = Instant::now();
    let field = sin_field();
    let spec = FdGridSpec::default();
    let grid = &s.sin_build.grid;
    let mut worst = 0.0_f64;
    for (j, &y) in s.sin_sources.iter().enumerate() {
        let pole = SpaceTime::new(0.0, &[y]);
        let fd = gamma_eps(&field, &pole, EPS, &spec, 0.5, grid.targets())?;
        // relative sup gap per time slice
        for t in [0.1, 0.2, 0.3, 0.4, 0.5] {
            let rows: Vec<usize> = (0..grid.targets().len())
                .filter(|&i| {
                    let p = &grid.targets()[i];
                    (p.t - t).abs() < 1e-12 && (p.x[0] - y).abs() <= 3.0 + 1e-12
                })
                .collect();
            let peak = rows.iter().map(|&i| fd.get(i, 0).abs()).fold(0.0, f64::max);
            let gap = rows.iter().map(|&i| (grid.get(i, j) - fd.get(i, 0)).abs()).fold(0.0, f64::max);
            worst = worst.max(gap / peak);
        }
    }
    let elapsed = start.elapsed() + s.sin_build_time;
    Ok(outcome(
        worst <= 0.05 && elapsed < Duration::from_secs(300),
        format!("t - tau in [0.1, 0.5], |x - xi| <= 3: relative sup gap = {:.3}%, {elapsed:.1?}", 100.0 * worst),
    ))
}

fn criterion_7(s: &Shared) -> Check {
    let limit_for = |f: &CoefficientField| -> Result<(f64, GaussianEnvelope), Error> {
        let c = bound_constants(f.lambda(), f.big_lambda(), 0.5, 1)?;
        Ok((c.c0 / (1.0 - c.eps0) * 1.2, GaussianEnvelope::new(1.0, c.kappa0 / 2.0, 2.0, 1)?))
    };
    let (sin_limit, sin_env) = limit_for(&sin_field())?;
    let sin = envelope_ratio(&s.sin_build.grid, &sin_env);

    let (h_limit, h_env) = limit_for(&holder_field())?;
    let fine = envelope_ratio(&s.holder_step.grid, &h_env);
    let coarse_grid = coarse_sources(&select_targets(&s.holder_step.grid, |p| on_coarse(p.x[0])));
    let coarse = envelope_ratio(&coarse_grid, &h_env);
    let drift = (fine.sup_ratio / coarse.sup_ratio - 1.0).abs();
    let pass = sin.sup_ratio.is_finite()
        && sin.sup_ratio <= sin_limit
        && fine.sup_ratio <= h_limit
        && drift <= 0.2;
    Ok(outcome(
        pass,
        format!(
            "sine field sup {:.4} <= {sin_limit:.4}; Holder field sup {:.4} <= {h_limit:.4}, refinement drift {:.2}%",
            sin.sup_ratio,
            fine.sup_ratio,
            100.0 * drift
        ),
    ))
}

fn on_coarse(x: f64) -> bool {
    let k = (x / 0.2).round();
    (x - 0.2 * k).abs() < 1e-9
}

fn coarse_sources(grid: &KernelGrid) -> KernelGrid {
    let cols: Vec<usize> = (0..grid.sources().len()).filter(|&j| on_coarse(grid.sources()[j].x[0])).collect();
    let sources = cols.iter().map(|&j| grid.sources()[j].clone()).collect();
    let mut out = KernelGrid::zeros(grid.dim(), grid.targets().to_vec(), sources, grid.method).unwrap();
    for i in 0..grid.targets().len() {
        for (c, &j) in cols.iter().enumerate() {
            out.set(i, c, grid.get(i, j));
        }
    }
    out
}

/// FD kernel with forward solves from each source pole.
fn fd_forward(field: &CoefficientField, sources: &[SpaceTime], targets: &[SpaceTime], horizon: f64) -> Result<KernelGrid, Error> {
    let mut out = KernelGrid::zeros(1, targets.to_vec(), sources.to_vec(), Method::FdOracle)?;
    for (j, pole) in sources.iter().enumerate() {
        let col = gamma_eps(field, pole, EPS, &FdGridSpec::default(), horizon, targets)?;
        for i in 0..targets.len() {
            out.set(i, j, col.get(i, 0));
        }
    }
    Ok(out)
}

/// FD kernel with one adjoint solve per target.
fn fd_adjoint(field: &CoefficientField, targets: &[SpaceTime], sources: &[SpaceTime], horizon: f64) -> Result<KernelGrid, Error> {
    let mut out = KernelGrid::zeros(1, targets.to_vec(), sources.to_vec(), Method::FdOracle)?;
    for (i, pole) in targets.iter().enumerate() {
        let row = adjoint_kernel(field, pole, EPS, &FdGridSpec::default(), horizon, sources)?;
        for j in 0..sources.len() {
            out.set(i, j, row.get(0, j));
        }
    }
    Ok(out)
}

fn criterion_8(s: &Shared) -> Check {
    // frozen: time-dependent curve, split at 0.3
    let curve = FrozenKernel::new(TimeCurve::exact_slice(&CoefficientField::t_sine(1, 2.0, 1.0, 1.0)?, &[0.0]));
    let lattice = GridSpec::new(&[0.0], 6.0, 121);
    let outer = points(&[0.6], &[-0.5, 0.0, 0.7]);
    let inner = points(&[0.0], &[-0.3, 0.0, 0.4]);
    let a = curve_grid(&curve, &outer, &lattice.space_times(0.3))?;
    let b = curve_grid(&curve, &lattice.space_times(0.3), &inner)?;
    let direct = curve_grid(&curve, &outer, &inner)?;
    let frozen = ck_check(&a, &b, &direct, 0.3)?;

    // parametrix: two steps of 0.1 against a direct FD solve over 0.2; the
    // FD reference is not converged for a pole on the cusp at 0
    let field = holder_field();
    let composed = extend_semigroup(&s.holder_step.grid, 0.2, 0.1, &s.composition)?;
    let mut param_gap = 0.0_f64;
    for y in [-1.0, -0.5, 0.5] {
        let j = composed
            .grid
            .find_source(&SpaceTime::new(0.0, &[y]))
            .ok_or("composition source missing")?;
        let rows: Vec<usize> = (0..composed.grid.targets().len())
            .filter(|&i| composed.grid.targets()[i].x[0].abs() <= 2.0 + 1e-12)
            .collect();
        let targets: Vec<SpaceTime> = rows.iter().map(|&i| composed.grid.targets()[i].clone()).collect();
        let fd = gamma_eps(&field, &SpaceTime::new(0.0, &[y]), EPS, &FdGridSpec::default(), 0.2, &targets)?;
        let peak = (0..targets.len()).map(|r| fd.get(r, 0)).fold(0.0, f64::max);
        let gap = rows
            .iter()
            .enumerate()
            .map(|(r, &i)| (composed.grid.get(i, j) - fd.get(r, 0)).abs())
            .fold(0.0, f64::max);
        param_gap = param_gap.max(gap / peak);
    }

    // FD against FD through the intermediate lattice
    let mid = s.composition.space_times(0.1);
    let outer = points(&[0.2], &[-0.5, 0.0, 0.5]);
    let inner = points(&[0.0], &[-0.5, 0.0, 0.5]);
    let a = fd_adjoint(&field, &outer, &mid, 0.1)?;
    let b = fd_forward(&field, &inner, &mid, 0.1)?;
    let direct = fd_forward(&field, &inner, &outer, 0.2)?;
    let fd = ck_check(&a, &b, &direct, 0.1)?;

    Ok(outcome(
        frozen.max_defect <= 1e-6 && param_gap <= 2e-2 && fd.max_defect <= 2e-2,
        format!(
            "frozen defect {:.1e}; Holder field: parametrix 2 x 0.1 vs FD over 0.2 {:.2e}, FD composed vs direct {:.2e}",
            frozen.max_defect, param_gap, fd.max_defect
        ),
    ))
}

fn criterion_9(s: &Shared) -> Check {
    let curve = FrozenKernel::new(TimeCurve::exact_slice(&CoefficientField::t_sine(1, 2.0, 1.0, 1.0)?, &[0.0]));
    let lattice = GridSpec::new(&[0.0], 15.0, 601);
    let frozen_grid = curve_grid(&curve, &points(&[0.5, 1.0], &[-1.0, 0.0, 0.8]), &lattice.space_times(0.0))?;
    let frozen = mass_check(&frozen_grid, 3.0)?;

    let field = holder_field();
    let inner = select_targets(&s.holder_step.grid, |p| p.x[0].abs() <= 1.5 + 1e-12);
    let param = mass_check(&inner, field.big_lambda())?;

    let sources: Vec<SpaceTime> = [0.0, 0.1]
        .iter()
        .flat_map(|&t| GridSpec::new(&[0.0], 4.0, 161).space_times(t))
        .collect();
    let fd_grid = adjoint_kernel(&field, &SpaceTime::new(0.2, &[0.0]), EPS, &FdGridSpec::default(), 0.2, &sources)?;
    let fd = mass_check(&fd_grid, field.big_lambda())?;
    Ok(outcome(
        frozen.max_deviation <= 1e-8 && param.max_deviation <= 1e-2 && fd.max_deviation <= 1e-2,
        format!(
            "max |int Gamma dxi - 1|: frozen {:.1e}, parametrix {:.1e}, FD adjoint {:.1e}",
            frozen.max_deviation, param.max_deviation, fd.max_deviation
        ),
    ))
}

fn criterion_10() -> Check {
    let field = holder_field();
    let x = SpaceTime::new(0.3, &[0.2]);
    let sources = points(&[0.0, 0.15], &[-0.8, -0.3, 0.2, 0.7, 1.2]);
    let report = adjoint_solve_and_symmetry(&field, &x, EPS, &FdGridSpec::default(), &sources)?;
    Ok(outcome(
        report.max_gap <= 0.05,
        format!("{} matched pairs, max relative gap {:.2}%", report.pairs.len(), 100.0 * report.max_gap),
    ))
}

fn fd_lattice_constants(field: &CoefficientField, dt: f64, dx: f64) -> Result<[f64; 3], Error> {
    let nt = (0.4 / dt).round() as usize + 1;
    let nx = (4.0 / dx).round() as usize + 1;
    let targets = points(&linspace(0.1, 0.5, nt), &linspace(-2.0, 2.0, nx));
    let grid = gamma_eps(field, &SpaceTime::new(0.0, &[0.0]), EPS, &FdGridSpec::default(), 0.5, &targets)?;
    let pointwise = pointwise_bound_check(&grid, 10.0)?;
    let derivs = derivative_bound_check(&DerivativeGrids::finite_difference(&grid)?, 10.0)?;
    Ok([pointwise.constant, derivs.gradient_constant, derivs.second_order_constant])
}

fn criterion_11(s: &Shared) -> Check {
    // closed-form extremization for the heat kernel: sup at x = 0 for the
    // pointwise constant, at |x| = sqrt(6 t) for the gradient constant
    let heat = FrozenKernel::new(TimeCurve::constant(SymMatrix::identity(1)));
    let mut targets = Vec::new();
    for t in [0.1_f64, 0.25] {
        for x in [0.0, 0.3 * t.sqrt(), (6.0 * t).sqrt(), 2.0 * t.sqrt(), 3.0] {
            targets.push(SpaceTime::new(t, &[x]));
        }
    }
    let sources = [SpaceTime::new(0.0, &[0.0])];
    let pw = pointwise_bound_check(&curve_grid(&heat, &targets, &sources)?, 10.0)?;
    let dv = derivative_bound_check(&DerivativeGrids::frozen(&heat, &targets, &sources)?, 10.0)?;
    let pw_exact = 1.0 / (4.0 * PI).sqrt();
    let grad_exact = 6.0 * 6f64.sqrt() * (-1.5f64).exp() / (4.0 * PI.sqrt());
    let closed_err = ((pw.constant - pw_exact) / pw_exact).abs().max(((dv.gradient_constant - grad_exact) / grad_exact).abs());

    let fields = [
        ("constant", CoefficientField::identity(1)),
        ("t_sine", CoefficientField::t_sine(1, 2.0, 1.0, 1.0)?),
        ("x_sine", sin_field()),
        ("holder", holder_field()),
    ];
    let mut worst_drift = 0.0_f64;
    let mut finite = true;
    let mut lines = Vec::new();
    for (name, f) in &fields {
        let coarse = fd_lattice_constants(f, 0.02, 0.05)?;
        let fine = fd_lattice_constants(f, 0.01, 0.025)?;
        let drift = coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| (f / c - 1.0).abs())
            .fold(0.0, f64::max);
        finite &= fine.iter().chain(&coarse).all(|v| v.is_finite() && *v > 0.0);
        worst_drift = worst_drift.max(drift);
        lines.push(format!("{name} {:.3}/{:.3}/{:.3}", fine[0], fine[1], fine[2]));
    }
    let p_fine = pointwise_bound_check(&s.holder_step.grid, 10.0)?.constant;
    let p_coarse = pointwise_bound_check(&coarse_sources(&select_targets(&s.holder_step.grid, |p| on_coarse(p.x[0]))), 10.0)?.constant;
    let p_drift = (p_fine / p_coarse - 1.0).abs();
    Ok(outcome(
        closed_err <= 1e-6 && finite && worst_drift <= 0.2 && p_drift <= 0.2,
        format!(
            "heat closed-form rel err {closed_err:.1e}; FD constants C/C'/C'' {}; max refinement drift {:.2}%; parametrix Holder C {p_fine:.4} (drift {:.2}%)",
            lines.join(", "),
            100.0 * worst_drift,
            100.0 * p_drift
        ),
    ))
}

/// The two-term chaining bound in plain arithmetic, written out factor by factor.
fn chaining_linear(c0: f64, kappa0: f64, delta: f64, t: f64, x: f64) -> f64 {
    let d = 1.0;
    let xi = x / t.sqrt();
    let n = xi.powf(1.0 - delta).ceil();
    let m = (d * (n * n - 1.0)) as i32;
    let decay = (-kappa0 * n * x / t.sqrt()).exp();
    let shared = t.powf(-d / 2.0) * decay * c0.powi((n * n) as i32) * n.powf(d);
    let first = shared * (4.0 * n * x / t.sqrt()).powi(m);
    let brace = 2.0 * d * (n * n - 1.0) / E * (3.0 * n * x / t.sqrt() + 1.0 / kappa0);
    let second = E * d.sqrt() * (t.sqrt() / (kappa0 * x)) * shared * brace.powi(m);
    first + second
}

fn criterion_12() -> Check {
    let c = bound_constants(1.0, 1.0, 0.5, 1)?;
    let mut worst = 0.0_f64;
    for (t, x, delta) in [(1.0, 25.0, 0.5), (1.0, 16.0, 0.5), (0.5, 3.0, 0.25), (1.0, 30.0, 0.5), (0.3, 40.0, 0.75)] {
        let (a, b) = chaining_log_terms(c.c0, c.kappa0, delta, t, x / f64::sqrt(t), 1)?;
        let m = a.max(b);
        let logged = m + ((a - m).exp() + (b - m).exp()).ln();
        let direct = chaining_linear(c.c0, c.kappa0, delta, t, x);
        // |log a - log b| is the relative gap to first order
        worst = worst.max((logged - direct.ln()).abs());
    }
    let mut monotone = true;
    let mut r0s = Vec::new();
    for delta in [0.25, 0.5, 0.75] {
        let bound = ChainingBound::new(c.c0, c.kappa0, delta, 1)?;
        r0s.push(format!("R0({delta}) = {:.3e}", bound.r0));
        let mut prev = f64::INFINITY;
        let mut xi = bound.r0 * (1.0 + 1e-9);
        while xi < 1000.0 * bound.r0 {
            let v = bound.evaluate(1.0, &[xi])?.log_value;
            monotone &= v <= prev;
            prev = v;
            xi *= 1.0 + 1e-3;
        }
    }
    Ok(outcome(
        worst <= 1e-10 && monotone,
        format!("max relative gap to the plain-arithmetic formula {worst:.1e}; nonincreasing beyond R0: {monotone}; {}", r0s.join(", ")),
    ))
}

fn criterion_13() -> Check {
    let field = CoefficientField::log_modulus(1, 1.0, 0.5, 0.5)?;
    let c = bound_constants(field.lambda(), field.big_lambda(), 0.5, 1)?.with_c1()?;
    let profile = modulus_continuity(&field, &dyadic_radii(16), &ProbeSpec::default())?;
    let rejected = match delta0(&profile, &c) {
        Err(Error::NonDini { diagnostic }) => Some(diagnostic),
        _ => None,
    };
    let targets = points(&[0.05, 0.2], &linspace(-1.0, 1.0, 21));
    let fd = gamma_eps(&field, &SpaceTime::new(0.0, &[0.0]), EPS, &FdGridSpec::default(), 0.2, &targets)?;
    let sources = GridSpec::new(&[0.0], 4.0, 161).space_times(0.0);
    let adjoint = adjoint_kernel(&field, &SpaceTime::new(0.2, &[0.0]), EPS, &FdGridSpec::default(), 0.2, &sources)?;
    let mass = mass_check(&adjoint, field.big_lambda())?.entries[0].mass;
    let ran = fd.is_finite() && fd.values().iter().any(|v| *v > 0.0) && (mass - 1.0).abs() < 1e-2;
    Ok(outcome(
        rejected.is_some() && ran,
        format!(
            "delta0 rejected: {}; FD oracle ran, source mass {mass:.6}",
            rejected.as_deref().unwrap_or("NOT REJECTED")
        ),
    ))
}

fn report(id: usize, name: &str, result: Check, failures: &mut usize) {
    match result {
        Ok(o) => {
            if !o.pass {
                *failures += 1;
            }
            println!("criterion {id:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        Err(e) => {
            *failures += 1;
            println!("criterion {id:>2} {name}: FAIL (error: {e})");
        }
    }
}

fn main() {
    let mut failures = 0;
    report(1, "constant-coefficient exactness", criterion_1(), &mut failures);
    report(2, "time-only coefficients", criterion_2(), &mut failures);
    report(3, "reproducing identity", criterion_3(), &mut failures);
    report(4, "constants", criterion_4(), &mut failures);
    let shared = shared();
    report(5, "series contraction", criterion_5(&shared), &mut failures);
    report(6, "cross-validation against FD", criterion_6(&shared), &mut failures);
    report(7, "Gaussian envelope", criterion_7(&shared), &mut failures);
    report(8, "semigroup composition", criterion_8(&shared), &mut failures);
    report(9, "mass normalization", criterion_9(&shared), &mut failures);
    report(10, "adjoint symmetry", criterion_10(), &mut failures);
    report(11, "pointwise and derivative bounds", criterion_11(&shared), &mut failures);
    report(12, "chaining bound", criterion_12(), &mut failures);
    report(13, "non-Dini negative control", criterion_13(), &mut failures);
    println!("acceptance: {} of 13 criteria pass", 13 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
