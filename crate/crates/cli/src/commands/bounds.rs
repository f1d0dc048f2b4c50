use parametrix_core::bounds::{
    envelope_ratio, log_tail_sum_bound, log_tail_sum_direct, ChainingBound, ChainingBranch, GaussianEnvelope,
};
use parametrix_core::frozen_kernel::bound_constants;
use parametrix_core::report::Report;

use super::{csv_text, num, Ctx};
use crate::error::CliError;

fn check_deltas(deltas: &[f64], key: &str) -> Result<(), CliError> {
    if deltas.is_empty() {
        return Err(CliError::Config(format!("{key}: at least one delta required")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
        return Err(CliError::Config(format!("{key}: delta = {d} must lie in (0, 1)")));
    }
    Ok(())
}

fn branch(b: ChainingBranch) -> &'static str {
    match b {
        ChainingBranch::SingleStep => "single_step",
        ChainingBranch::Chained => "chained",
    }
}

/// Constants, crossover radii, tail-sum spot checks and an optional
/// empirical envelope for a stored kernel.
pub fn bounds(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.bounds;
    check_deltas(&p.deltas, "bounds.deltas")?;
    if !(p.t > 0.0) || !(p.xi_max > 0.0) || p.xi_points < 2 {
        return Err(CliError::Config("bounds: t and xi_max must be positive, xi_points >= 2".into()));
    }
    let d = ctx.field.dim();
    let c = bound_constants(ctx.field.lambda(), ctx.field.big_lambda(), p.kappa_ratio, d)?.with_c1()?;
    let mut text = c.to_kv();
    let mut report = Report::new();
    let mut rows = Vec::new();
    for &delta in &p.deltas {
        let cb = ChainingBound::new(c.c0, c.kappa0, delta, d)?;
        let (below, above) = cb.seam(p.t)?;
        report
            .set_f64(format!("R0_delta_{delta}"), cb.r0)
            .set_f64(format!("seam_log_below_delta_{delta}"), below)
            .set_f64(format!("seam_log_above_delta_{delta}"), above);
        for k in 0..p.xi_points {
            let xi = p.xi_max * k as f64 / (p.xi_points - 1) as f64;
            let mut x = vec![0.0; d];
            x[0] = xi * p.t.sqrt();
            let v = if xi == 0.0 {
                c.c0.ln() - d as f64 / 2.0 * p.t.ln()
            } else {
                cb.evaluate(p.t, &x)?.log_value
            };
            let b = if xi <= cb.r0 { ChainingBranch::SingleStep } else { ChainingBranch::Chained };
            rows.push(vec![num(delta), num(xi), num(v), branch(b).to_string()]);
        }
    }
    for &(k, alpha) in &p.tail_checks {
        let bound = log_tail_sum_bound(k, alpha)?;
        let direct = log_tail_sum_direct(k, alpha, 20000)?;
        report
            .set_f64(format!("tail_log_bound_k{k}_alpha{alpha}"), bound)
            .set_f64(format!("tail_log_direct_k{k}_alpha{alpha}"), direct)
            .set(format!("tail_holds_k{k}_alpha{alpha}"), bound >= direct);
    }
    if let Some(path) = &p.kernel {
        let kernel = ctx.load_kernel(path)?;
        for (label, power) in [("p2", 2.0), ("p2_minus_delta", 2.0 - p.deltas[0])] {
            let env = GaussianEnvelope::new(1.0, c.kappa0, power, kernel.dim())?;
            let r = envelope_ratio(&kernel, &env);
            report
                .set_f64(format!("empirical_constant_{label}"), r.sup_ratio)
                .set(format!("empirical_boundary_flag_{label}"), r.boundary_flag);
        }
    }
    ctx.write_text("chain.csv", &csv_text(&["delta", "xi", "log_bound", "branch"], rows))?;
    text.push_str(&report.to_text());
    let mut full = Report::parse(&text)?;
    full.set("command_digest", ctx.digest());
    ctx.write_text("bounds.txt", &full.to_text())?;
    Ok(format!("bounds: C0 = {:.6}, kappa0 = {:.6}", c.c0, c.kappa0))
}

/// Geometric scan of the chained bound; the log bound must not increase
/// beyond R0.
pub fn chain(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.chain;
    check_deltas(&p.deltas, "chain.deltas")?;
    if !(p.t > 0.0) || !(p.xi_min > 0.0) || !(p.xi_max_factor > 1.0) || p.points < 2 {
        return Err(CliError::Config(
            "chain: t and xi_min must be positive, xi_max_factor > 1, points >= 2".into(),
        ));
    }
    let d = ctx.field.dim();
    let c = bound_constants(ctx.field.lambda(), ctx.field.big_lambda(), ctx.manifest.bounds.kappa_ratio, d)?;
    let mut rows = Vec::new();
    let mut report = Report::new();
    let mut broken = Vec::new();
    for &delta in &p.deltas {
        let cb = ChainingBound::new(c.c0, c.kappa0, delta, d)?;
        let hi = p.xi_max_factor * cb.r0.max(p.xi_min);
        let ratio = (hi / p.xi_min).powf(1.0 / (p.points - 1) as f64);
        let mut prev = f64::INFINITY;
        let mut monotone = true;
        for k in 0..p.points {
            let xi = p.xi_min * ratio.powi(k as i32);
            let mut x = vec![0.0; d];
            x[0] = xi * p.t.sqrt();
            let v = cb.evaluate(p.t, &x)?;
            if v.branch == ChainingBranch::Chained {
                monotone &= v.log_value <= prev;
                prev = v.log_value;
            }
            rows.push(vec![num(delta), num(xi), num(v.log_value), branch(v.branch).to_string(), num(v.n)]);
        }
        report
            .set_f64(format!("R0_delta_{delta}"), cb.r0)
            .set(format!("monotone_beyond_R0_delta_{delta}"), monotone);
        if !monotone {
            broken.push(delta.to_string());
        }
    }
    ctx.write_text("chain.csv", &csv_text(&["delta", "xi", "log_bound", "branch", "n"], rows))?;
    ctx.write_report("chain.txt", &report)?;
    if broken.is_empty() {
        Ok(format!("chain: {} deltas, nonincreasing beyond R0", p.deltas.len()))
    } else {
        Err(CliError::Verify(format!("chained bound increases beyond R0 for delta = {}", broken.join(", "))))
    }
}
