use parametrix_core::coefficients::{
    dini_integral, dyadic_radii, freeze as freeze_field, mean_oscillation_profile, modulus_continuity, DiniIntegral,
    ModulusProfile,
};
use parametrix_core::frozen_kernel::bound_constants;
use parametrix_core::parametrix::frozen_grid;
use parametrix_core::report::Report;

use super::{csv_text, num, Ctx};
use crate::error::CliError;

fn integral_keys(report: &mut Report, prefix: &str, profile: &ModulusProfile, whole: &DiniIntegral) -> Result<(), CliError> {
    report
        .set_f64(format!("{prefix}_integral"), whole.value)
        .set_f64(format!("{prefix}_tail"), whole.tail)
        .set_f64(format!("{prefix}_tail_exponent"), whole.tail_exponent)
        .set(format!("{prefix}_diverged"), whole.diverged);
    if !whole.diagnostic.is_empty() {
        report.set(format!("{prefix}_diagnostic"), &whole.diagnostic);
    }
    for k in [2u32, 4, 6, 8] {
        let r = 0.5f64.powi(k as i32);
        if r >= profile.radii[0] {
            report.set_f64(format!("{prefix}_integral_2^-{k}"), dini_integral(profile, r)?.value);
        }
    }
    Ok(())
}

/// Tabulates rho and omega on dyadic radii and classifies the field.
pub fn dmo(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.dmo;
    let radii = dyadic_radii(p.min_exp);
    let rho = modulus_continuity(&ctx.field, &radii, &p.probe)?;
    let omega = mean_oscillation_profile(&ctx.field, &radii, &p.probe, &p.ball)?;
    let rows = radii
        .iter()
        .enumerate()
        .map(|(k, r)| vec![num(*r), num(rho.values[k]), num(omega.values[k])]);
    ctx.write_text("modulus.csv", &csv_text(&["r", "rho", "omega"], rows))?;

    let mut report = Report::new();
    report.set("rho_sampling", &rho.sampling_spec);
    let classification = if ctx.field.is_x_independent() {
        report.set_f64("rho_integral", 0.0).set("rho_diverged", false);
        "constant-in-x; Dini trivially".to_string()
    } else {
        let whole_rho = dini_integral(&rho, 1.0)?;
        let whole_omega = dini_integral(&omega, 1.0)?;
        integral_keys(&mut report, "rho", &rho, &whole_rho)?;
        integral_keys(&mut report, "omega", &omega, &whole_omega)?;
        report.set_f64("lipschitz_estimate", rho.values[0] / rho.radii[0]);
        // the parametrix needs rho Dini; omega only decides DMO_x membership
        report.set("dmo_x", !whole_omega.diverged);
        if whole_rho.diverged {
            "non-Dini".to_string()
        } else if rho.tail_exponent().is_some_and(|e| e >= 0.95) {
            "Dini (Lipschitz)".to_string()
        } else {
            "Dini".to_string()
        }
    };
    report.set("classification", &classification);
    ctx.write_report("dini.txt", &report)?;
    Ok(format!("dmo: {classification}"))
}

/// Ball-average freezing at x0 with the dyadic increment table.
pub fn freeze(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.freeze;
    let d = ctx.field.dim();
    let x0 = if p.x0.is_empty() { vec![0.0; d] } else { p.x0.clone() };
    if p.samples < 2 {
        return Err(CliError::Config("freeze.samples: need at least 2".into()));
    }
    let res = freeze_field(&ctx.field, &x0, &p.spec)?;
    let [a, b] = p.spec.window;
    let mut header = vec!["t".to_string()];
    for i in 0..d {
        for j in i..d {
            header.push(format!("a{}{}", i + 1, j + 1));
        }
    }
    let rows = (0..p.samples).map(|k| {
        let t = a + (b - a) * k as f64 / (p.samples - 1) as f64;
        let m = res.curve.eval(t);
        let mut row = vec![num(t)];
        for i in 0..d {
            for j in i..d {
                row.push(num(m.get(i, j)));
            }
        }
        row
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.write_text("curve.csv", &csv_text(&header_refs, rows))?;
    let inc_rows = res
        .increments
        .iter()
        .enumerate()
        .map(|(k, v)| vec![(k + 1).to_string(), num(res.radii[k + 1]), num(*v)]);
    ctx.write_text("increments.csv", &csv_text(&["k", "radius", "increment"], inc_rows))?;

    let mut report = Report::new();
    report
        .set("x0", format!("{x0:?}"))
        .set_f64("radius", *res.radii.last().expect("nonempty radii"))
        .set("depth", p.spec.depth)
        .set("derivation", format!("{:?}", res.curve.derivation()));
    if let (Some(first), Some(last)) = (res.increments.first(), res.increments.last()) {
        report.set_f64("first_increment", *first).set_f64("last_increment", *last);
    }
    ctx.write_report("freeze.txt", &report)?;
    Ok(format!("freeze: {} increments", res.increments.len()))
}

/// Frozen kernel Phi^xi on the manifest grid, with the bound constants.
pub fn phi(ctx: &Ctx) -> Result<String, CliError> {
    let p = &ctx.manifest.phi;
    let mut grid = frozen_grid(&ctx.field, &p.targets.points(), &p.sources.points())?;
    ctx.write_kernel("kernel.csv", &mut grid)?;
    let c = bound_constants(ctx.field.lambda(), ctx.field.big_lambda(), p.kappa_ratio, ctx.field.dim())?.with_c1()?;
    ctx.write_text("constants.txt", &c.to_kv())?;
    Ok(format!(
        "phi: {} x {} frozen kernel",
        grid.targets().len(),
        grid.sources().len()
    ))
}
