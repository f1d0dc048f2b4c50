use parametrix_core::bounds::{envelope_ratio, pointwise_bound_check, GaussianEnvelope};
use parametrix_core::coefficients::{dyadic_radii, modulus_continuity};
use parametrix_core::frozen_kernel::{bound_constants, BoundConstants, Provenance};
use parametrix_core::grid::Method;
use parametrix_core::oracle::gamma_eps;
use parametrix_core::parametrix::{build_short_time, compose_steps, delta0, extend_semigroup, ShortTimeKernel};
use parametrix_core::report::Report;
use parametrix_core::{Error, KernelGrid, SpaceTime};

use super::Ctx;
use crate::error::CliError;

pub fn run(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.build;
    let field = &ctx.field;
    let constants = bound_constants(field.lambda(), field.big_lambda(), p.kappa_ratio, field.dim())?
        .with_c1()?
        .with_eps0(p.parametrix.eps0)?;

    let mut horizon = (f64::INFINITY, Provenance::DerivedFormula);
    if !field.is_x_independent() {
        let profile = modulus_continuity(field, &dyadic_radii(p.dini_min_exp), &p.probe)?;
        match delta0(&profile, &constants) {
            Ok(d0) => horizon = (d0, Provenance::DerivedFormula),
            Err(Error::NonDini { diagnostic }) if ctx.force => return fd_fallback(ctx, &diagnostic),
            Err(Error::NonDini { diagnostic }) => {
                return Err(CliError::Guard(format!(
                    "non-Dini field ({diagnostic}); the parametrix bounds do not apply, rerun with --force for the finite-difference oracle"
                )))
            }
            Err(e) => return Err(e.into()),
        }
    }
    let computed = horizon.0;
    if let Some(d0) = p.delta0 {
        horizon = (d0, Provenance::ConfigOverride);
    }
    let constants = constants.with_delta0(horizon.0, horizon.1);
    let mut cfg = p.parametrix.clone();
    cfg.delta0 = horizon.0;
    cfg.validate()?;

    let (short, mut kernel) = match &p.composition {
        None => {
            let short = build_short_time(field, &p.targets.points(), &p.sources.points(), &cfg)?;
            let grid = short.grid.clone();
            (short, grid)
        }
        Some(c) => {
            if !(c.step > 0.0) {
                return Err(CliError::Config("build.composition.step: must be positive".into()));
            }
            let levels = (c.total / c.step).round();
            if levels < 1.0 || (levels * c.step - c.total).abs() > 1e-9 * c.total {
                return Err(CliError::Config("build.composition.total: must be a multiple of step".into()));
            }
            let short = build_short_time(
                field,
                &c.grid.space_times(c.t0 + c.step),
                &c.grid.space_times(c.t0),
                &cfg,
            )?;
            let composed = if field.is_t_independent() {
                extend_semigroup(&short.grid, c.total, c.step, &c.grid)?
            } else {
                let mut steps = vec![short.grid.clone()];
                for k in 1..levels as usize {
                    let s = c.t0 + k as f64 * c.step;
                    steps.push(build_short_time(field, &c.grid.space_times(s + c.step), &c.grid.space_times(s), &cfg)?.grid);
                }
                compose_steps(&steps, &c.grid, 1e-2)?
            };
            let mut grid = composed.grid;
            grid.meta.insert(
                "mass_drift".into(),
                format!("{:.6e}", composed.mass_drift.iter().copied().fold(0.0, f64::max)),
            );
            (short, grid)
        }
    };
    kernel.meta.insert("delta0_provenance".into(), horizon.1.as_str().into());
    ctx.write_kernel("kernel.csv", &mut kernel)?;
    ctx.write_text("terms.txt", &terms_text(&short, computed, &constants))?;
    let env = envelope_report(&kernel, &constants, true)?;
    ctx.write_report("envelope.txt", &env)?;
    Ok(format!(
        "build: {} targets, max contraction ratio {:.4}, envelope constant {}",
        kernel.targets().len(),
        short.max_ratio(),
        env.get("sup_ratio").unwrap_or("n/a")
    ))
}

fn terms_text(short: &ShortTimeKernel, computed: f64, constants: &BoundConstants) -> String {
    let mut out = short.terms_report();
    out.push_str(&format!("delta0_computed = {computed:e}\n"));
    out.push_str(&constants.to_kv());
    out
}

/// Empirical constant against the (kappa0/2, p = 2) envelope and the
/// pointwise constant.
fn envelope_report(kernel: &KernelGrid, constants: &BoundConstants, claimed: bool) -> Result<Report, CliError> {
    let env = GaussianEnvelope::new(1.0, constants.kappa0 / 2.0, 2.0, kernel.dim())?;
    let r = envelope_ratio(kernel, &env);
    let limit = constants.c0 / (1.0 - constants.eps0);
    let mut report = Report::new();
    report
        .set("method", kernel.method.as_str())
        .set("bounds_claimed", claimed)
        .set_f64("kappa", constants.kappa0 / 2.0)
        .set_f64("sup_ratio", r.sup_ratio)
        .set_f64("limit_c0_over_1_minus_eps0", limit)
        .set("within_limit", r.sup_ratio <= limit)
        .set("boundary_flag", r.boundary_flag)
        .set("points", r.points);
    if let Some(a) = &r.argmax {
        report.set("argmax", format!("t={} x={:?} tau={} xi={:?}", a.target.t, a.target.x.as_slice(), a.source.t, a.source.x.as_slice()));
    }
    if let Ok(pw) = pointwise_bound_check(kernel, f64::INFINITY) {
        report.set_f64("pointwise_constant", pw.constant);
    }
    Ok(report)
}

/// Non-Dini fields under --force: forward FD solves from each source.
fn fd_fallback(ctx: &Ctx, diagnostic: &str) -> Result<String, CliError> {
    let p = &ctx.manifest.build;
    let targets = p.targets.points();
    let sources = p.sources.points();
    let mut kernel = KernelGrid::zeros(ctx.field.dim(), targets.clone(), sources.clone(), Method::FdOracle)?;
    for (j, pole) in sources.iter().enumerate() {
        let later: Vec<SpaceTime> = targets.iter().filter(|t| t.t > pole.t).cloned().collect();
        let Some(horizon) = later.iter().map(|t| t.t - pole.t).reduce(f64::max) else { continue };
        let col = gamma_eps(&ctx.field, pole, p.eps, &p.fd, horizon, &later)?;
        for (k, tg) in later.iter().enumerate() {
            let i = kernel.find_target(tg).expect("target from the same list");
            kernel.set(i, j, col.get(k, 0));
        }
    }
    kernel.meta.insert("forced".into(), "non-Dini field".into());
    ctx.write_kernel("kernel.csv", &mut kernel)?;
    ctx.write_text(
        "terms.txt",
        &format!("method = fd_oracle\nseries = not run\nreason = non-Dini field\ndiagnostic = {diagnostic}\n"),
    )?;
    let constants = bound_constants(ctx.field.lambda(), ctx.field.big_lambda(), p.kappa_ratio, ctx.field.dim())?;
    ctx.write_report("envelope.txt", &envelope_report(&kernel, &constants, false)?)?;
    Ok(format!(
        "build: non-Dini field, finite-difference oracle used for {} sources (bounds not claimed)",
        sources.len()
    ))
}
