use parametrix_core::bounds::{envelope_ratio, GaussianEnvelope};
use parametrix_core::frozen_kernel::bound_constants;
use parametrix_core::oracle::{adjoint_solve_and_symmetry, ck_check, gamma_eps, mass_check, residual_check};
use parametrix_core::report::Report;
use parametrix_core::{KernelGrid, SpaceTime};

use super::Ctx;
use crate::error::CliError;

struct Line {
    name: &'static str,
    value: f64,
    limit: f64,
    pass: bool,
    note: String,
}

pub fn run(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.verify;
    let kernel = ctx.load_kernel(&p.kernel)?;
    if !kernel.is_finite() {
        return Err(CliError::Verify("kernel contains non-finite values".into()));
    }
    let mut lines = Vec::new();
    for check in &p.checks {
        let line = match check.as_str() {
            "mass" => mass(ctx, &kernel)?,
            "envelope" => envelope(ctx, &kernel)?,
            "residual" => residual(ctx, &kernel)?,
            "cross" => cross(ctx, &kernel)?,
            "ck" => ck(ctx)?,
            "symmetry" => symmetry(ctx)?,
            other => {
                return Err(CliError::Config(format!(
                    "verify.checks: unknown check `{other}` (mass, envelope, residual, cross, ck, symmetry)"
                )))
            }
        };
        lines.push(line);
    }

    let mut report = Report::new();
    report.set("kernel", ctx.resolve(&p.kernel).display()).set("method", kernel.method.as_str());
    for l in &lines {
        report
            .set_f64(format!("{}_value", l.name), l.value)
            .set_f64(format!("{}_limit", l.name), l.limit)
            .set(format!("{}_pass", l.name), l.pass);
        if !l.note.is_empty() {
            report.set(format!("{}_note", l.name), &l.note);
        }
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.name).collect();
    report.set("overall", if failed.is_empty() { "pass" } else { "fail" });
    ctx.write_report("verify.txt", &report)?;
    if failed.is_empty() {
        Ok(format!("verify: {} checks passed", lines.len()))
    } else {
        Err(CliError::Verify(format!("failed checks: {}", failed.join(", "))))
    }
}

fn mass(ctx: &Ctx, kernel: &KernelGrid) -> Result<Line, CliError> {
    let r = mass_check(kernel, ctx.field.big_lambda())?;
    let limit = ctx.manifest.verify.mass_tol;
    Ok(Line {
        name: "mass",
        value: r.max_deviation,
        limit,
        pass: r.max_deviation <= limit,
        note: format!("{} target/time pairs", r.entries.len()),
    })
}

fn envelope(ctx: &Ctx, kernel: &KernelGrid) -> Result<Line, CliError> {
    let b = &ctx.manifest.build;
    let c = bound_constants(ctx.field.lambda(), ctx.field.big_lambda(), b.kappa_ratio, ctx.field.dim())?
        .with_eps0(b.parametrix.eps0)?;
    let env = GaussianEnvelope::new(1.0, c.kappa0 / 2.0, 2.0, kernel.dim())?;
    let r = envelope_ratio(kernel, &env);
    let limit = ctx.manifest.verify.envelope_slack * c.c0 / (1.0 - c.eps0);
    Ok(Line {
        name: "envelope",
        value: r.sup_ratio,
        limit,
        pass: r.sup_ratio <= limit,
        note: if r.boundary_flag { "argmax on the window boundary".into() } else { String::new() },
    })
}

fn residual(ctx: &Ctx, kernel: &KernelGrid) -> Result<Line, CliError> {
    let p = &ctx.manifest.verify;
    let r = residual_check(kernel, &ctx.field, p.residual_exclusion)?;
    Ok(Line {
        name: "residual",
        value: r.max_scaled,
        limit: p.residual_threshold,
        pass: !r.flagged(p.residual_threshold),
        note: format!("{} interior points", r.points),
    })
}

/// Relative sup gap between kernel columns and forward FD solves from the
/// same poles, over entries at least 1e-3 of the column peak.
fn cross(ctx: &Ctx, kernel: &KernelGrid) -> Result<Line, CliError> {
    let p = &ctx.manifest.verify;
    let mut worst = 0.0_f64;
    for (j, pole) in kernel.sources().iter().enumerate() {
        let rows: Vec<usize> = (0..kernel.targets().len())
            .filter(|&i| kernel.targets()[i].t > pole.t)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let later: Vec<SpaceTime> = rows.iter().map(|&i| kernel.targets()[i].clone()).collect();
        let horizon = later.iter().map(|t| t.t - pole.t).fold(0.0, f64::max);
        let fd = gamma_eps(&ctx.field, pole, p.eps, &p.fd, horizon, &later)?;
        let peak = (0..later.len()).map(|k| fd.get(k, 0).abs()).fold(0.0, f64::max);
        for (k, &i) in rows.iter().enumerate() {
            let f = fd.get(k, 0);
            if f.abs() >= 1e-3 * peak {
                worst = worst.max((kernel.get(i, j) - f).abs() / f.abs());
            }
        }
    }
    Ok(Line {
        name: "cross",
        value: worst,
        limit: p.cross_tol,
        pass: worst <= p.cross_tol,
        note: format!("{} source poles", kernel.sources().len()),
    })
}

fn ck(ctx: &Ctx) -> Result<Line, CliError> {
    let Some(c) = &ctx.manifest.verify.ck else {
        return Err(CliError::Config("verify.ck: section required for the ck check".into()));
    };
    let first = ctx.load_kernel(&c.first)?;
    let second = ctx.load_kernel(&c.second)?;
    let direct = ctx.load_kernel(&c.direct)?;
    let r = ck_check(&first, &second, &direct, c.tau_mid)?;
    Ok(Line {
        name: "ck",
        value: r.max_defect,
        limit: c.tol,
        pass: r.max_defect <= c.tol,
        note: format!("{} compared entries", r.compared),
    })
}

fn symmetry(ctx: &Ctx) -> Result<Line, CliError> {
    let p = &ctx.manifest.verify;
    let Some(s) = &p.symmetry else {
        return Err(CliError::Config("verify.symmetry: section required for the symmetry check".into()));
    };
    let r = adjoint_solve_and_symmetry(&ctx.field, &SpaceTime::new(s.t, &s.x), p.eps, &p.fd, &s.sources.points())?;
    Ok(Line {
        name: "symmetry",
        value: r.max_gap,
        limit: s.tol,
        pass: r.max_gap <= s.tol,
        note: format!("{} source pairs", r.pairs.len()),
    })
}
