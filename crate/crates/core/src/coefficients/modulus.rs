use std::path::Path;

use super::field::CoefficientField;
use super::probe::{BallQuadSpec, ProbeSpec};
use crate::error::{Error, Result};
use crate::linalg::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModulusKind {
    MeanOscillation,
    UniformContinuity,
}

/// Tabulated modulus over strictly increasing radii.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: ModulusKind,
    pub sampling_spec: String,
}

/// `2^-min_exp, ..., 1/2, 1`.
pub fn dyadic_radii(min_exp: u32) -> Vec<f64> {
    (0..=min_exp).rev().map(|k| 0.5f64.powi(k as i32)).collect()
}

impl ModulusProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>, kind: ModulusKind, sampling_spec: impl Into<String>) -> Result<Self> {
        if radii.len() != values.len() {
            return Err(Error::param("values", "length differs from radii"));
        }
        if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("radii", "must be positive and strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("values", "must be finite and nonnegative"));
        }
        Ok(Self {
            radii,
            values,
            kind,
            sampling_spec: sampling_spec.into(),
        })
    }

    /// Tabulates a closed-form modulus.
    pub fn from_fn(radii: Vec<f64>, kind: ModulusKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = radii.iter().map(|r| f(*r)).collect();
        Self::new(radii, values, kind, "closed form")
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn max_radius(&self) -> Option<f64> {
        self.radii.last().copied()
    }

    /// Interpolated value: power law between positive neighbours, linear
    /// otherwise, constant extension beyond the largest radius.
    pub fn value_at(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if n == 0 {
            return 0.0;
        }
        if r >= self.radii[n - 1] {
            return self.values[n - 1];
        }
        if r <= self.radii[0] {
            let beta = self.tail_exponent();
            return match beta {
                Some(b) if b > 0.0 => self.values[0] * (r / self.radii[0]).powf(b),
                _ => self.values[0],
            };
        }
        let hi = self.radii.partition_point(|x| *x <= r);
        let lo = hi - 1;
        let (a, b) = (self.radii[lo], self.radii[hi]);
        let (va, vb) = (self.values[lo], self.values[hi]);
        if va > 0.0 && vb > 0.0 {
            va * (vb / va).powf((r / a).ln() / (b / a).ln())
        } else {
            va + (vb - va) * (r - a) / (b - a)
        }
    }

    /// Least-squares log-log slope over the three smallest radii with
    /// positive values.
    pub fn tail_exponent(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .radii
            .iter()
            .zip(&self.values)
            .filter(|(_, v)| **v > 0.0)
            .take(3)
            .map(|(r, v)| (r.ln(), v.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Some(sxy / sxx)
    }

    /// Largest violation of rho(a + b) <= rho(a) + rho(b) over tabulated
    /// pairs whose sum is also tabulated (relative tolerance 1e-9).
    pub fn subadditivity_violation(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, a) in self.radii.iter().enumerate() {
            for (j, b) in self.radii.iter().enumerate().skip(i) {
                let s = a + b;
                if let Some(k) = self.radii.iter().position(|r| (r - s).abs() <= 1e-9 * s) {
                    worst = worst.max(self.values[k] - self.values[i] - self.values[j]);
                }
            }
        }
        worst
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "value"])?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            w.write_record([format!("{:.16e}", r), format!("{:.16e}", v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path, kind: ModulusKind) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut radii, mut values) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse("short row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            };
            radii.push(parse(0)?);
            values.push(parse(1)?);
        }
        Self::new(radii, values, kind, format!("loaded from {}", path.display()))
    }
}

/// Sampled uniform modulus of continuity in x: for each radius the maximum
/// entrywise difference |A(t,x) - A(t,x + r e)| over probe points, times and
/// directions, made nondecreasing by a running maximum.
pub fn modulus_continuity(field: &CoefficientField, radii: &[f64], probe: &ProbeSpec) -> Result<ModulusProfile> {
    if radii.is_empty() {
        return Err(Error::Empty("radii".into()));
    }
    let d = field.dim();
    let points = probe.points(d);
    let times = probe.times();
    let dirs = probe.directions(d);
    if points.is_empty() || times.is_empty() {
        return Err(Error::Empty("probe set".into()));
    }
    let mut values = vec![0.0; radii.len()];
    if !field.is_x_independent() {
        let mut y: Point = Point::from_elem(0.0, d);
        for &t in &times {
            for x in &points {
                let ax = field.eval_raw(t, x);
                for e in &dirs {
                    for (k, &r) in radii.iter().enumerate() {
                        for i in 0..d {
                            y[i] = x[i] + r * e[i];
                        }
                        let diff = field.eval_raw(t, &y).sub(&ax).max_abs();
                        if diff > values[k] {
                            values[k] = diff;
                        }
                    }
                }
            }
        }
        for k in 1..values.len() {
            values[k] = values[k].max(values[k - 1]);
        }
    }
    let spec = format!(
        "{} radii={}",
        probe.describe(d),
        radii.len()
    );
    ModulusProfile::new(radii.to_vec(), values, ModulusKind::UniformContinuity, spec)
}

/// Mean oscillation over the backward cylinder (t - r^2, t) x B_r(x):
/// average of |A(s,y) - mean_{B_r(x)} A(s,.)| in the entrywise-max norm.
pub fn mean_oscillation(field: &CoefficientField, r: f64, t: f64, x: &[f64], quad: &BallQuadSpec) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    let ball = quad.ball_nodes(field.dim(), r)?;
    let times = quad.time_nodes(t - r * r, t)?;
    Ok(oscillation_with_nodes(field, x, &ball, &times))
}

fn oscillation_with_nodes(field: &CoefficientField, x: &[f64], ball: &[(Point, f64)], times: &[(f64, f64)]) -> f64 {
    if field.is_x_independent() {
        return 0.0;
    }
    let d = field.dim();
    let pts: Vec<Point> = ball
        .iter()
        .map(|(p, _)| (0..d).map(|i| x[i] + p[i]).collect())
        .collect();
    let mut total = 0.0;
    let mut vals = Vec::with_capacity(pts.len());
    for &(s, ws) in times {
        vals.clear();
        vals.extend(pts.iter().map(|y| field.eval_raw(s, y)));
        let mut mean = crate::linalg::SymMatrix::zeros(d);
        for (v, (_, w)) in vals.iter().zip(ball) {
            mean.add_scaled(v, *w);
        }
        let osc: f64 = vals
            .iter()
            .zip(ball)
            .map(|(v, (_, w))| w * v.sub(&mean).max_abs())
            .sum();
        total += ws * osc;
    }
    total
}

/// Sup over the probe set of the mean oscillation, per radius.
pub fn mean_oscillation_profile(
    field: &CoefficientField,
    radii: &[f64],
    probe: &ProbeSpec,
    quad: &BallQuadSpec,
) -> Result<ModulusProfile> {
    if radii.is_empty() {
        return Err(Error::Empty("radii".into()));
    }
    let d = field.dim();
    let points = probe.points(d);
    let times = probe.times();
    let mut values = vec![0.0; radii.len()];
    if !field.is_x_independent() {
        for (k, &r) in radii.iter().enumerate() {
            let ball = quad.ball_nodes(d, r)?;
            for &t in &times {
                let tn = quad.time_nodes(t - r * r, t)?;
                for x in &points {
                    values[k] = f64::max(values[k], oscillation_with_nodes(field, x, &ball, &tn));
                }
            }
        }
    }
    let spec = format!(
        "{} ball_order={} panels={} time_order={}",
        probe.describe(d),
        quad.order,
        quad.panels,
        quad.time_order
    );
    ModulusProfile::new(radii.to_vec(), values, ModulusKind::MeanOscillation, spec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiniIntegral {
    pub value: f64,
    /// Extrapolated contribution below the smallest tabulated radius.
    pub tail: f64,
    pub tail_exponent: f64,
    /// Mean of n ln2 beta over the smallest tabulated pairs (near 1 for 1/log).
    pub raabe: f64,
    pub diverged: bool,
    pub diagnostic: String,
}

/// Integral of value(s)/s over (0, r], exact on each tabulated interval for
/// a power-law interpolant, with a geometric tail below the smallest radius.
pub fn dini_integral(profile: &ModulusProfile, r: f64) -> Result<DiniIntegral> {
    let rmax = profile.max_radius().ok_or_else(|| Error::Empty("modulus profile".into()))?;
    if !(r > 0.0) || r > rmax * (1.0 + 1e-12) {
        return Err(Error::param("r", format!("must lie in (0, {rmax}]")));
    }
    let r = r.min(rmax);
    let rmin = profile.radii[0];

    let mut value = 0.0;
    if r > rmin {
        let mut knots: Vec<f64> = profile.radii.iter().copied().filter(|x| *x < r).collect();
        knots.push(r);
        for w in knots.windows(2) {
            value += segment(w[0], w[1], profile.value_at(w[0]), profile.value_at(w[1]));
        }
    }

    let start = r.min(rmin);
    let v0 = profile.value_at(start);
    let beta = profile.tail_exponent().unwrap_or(0.0);
    let (raabe, decaying_exponent) = raabe_statistic(profile);

    let mut reasons = Vec::new();
    let small: Vec<f64> = profile.values.iter().copied().take(5).collect();
    if small.len() == 5 && small[0] > 0.0 && small[4] / small[0] < 1.05 {
        reasons.push(format!(
            "last five dyadic terms decrease by a factor {:.4} < 1.05",
            small[4] / small[0]
        ));
    }
    if v0 > 0.0 && beta <= 0.0 {
        reasons.push(format!("tail exponent {beta:.4} is not positive"));
    }
    if v0 > 0.0 && raabe.is_finite() && raabe < 1.5 && decaying_exponent {
        reasons.push(format!(
            "Raabe statistic {raabe:.3} < 1.5 with a local exponent decaying like 1/log(1/r)"
        ));
    }
    let diverged = !reasons.is_empty();
    let tail = if v0 == 0.0 {
        0.0
    } else if beta > 0.0 {
        v0 / beta
    } else {
        f64::INFINITY
    };
    let diagnostic = if diverged {
        reasons.join("; ")
    } else {
        format!("converged; tail exponent {beta:.4}, Raabe {raabe:.3}")
    };
    Ok(DiniIntegral {
        value: if diverged { f64::INFINITY } else { value + tail },
        tail,
        tail_exponent: beta,
        raabe,
        diverged,
        diagnostic,
    })
}

fn segment(a: f64, b: f64, va: f64, vb: f64) -> f64 {
    let l = (b / a).ln();
    if va > 0.0 && vb > 0.0 {
        let beta = (vb / va).ln() / l;
        if beta.abs() < 1e-12 {
            va * l
        } else {
            (vb - va) / beta
        }
    } else {
        let m = (vb - va) / (b - a);
        (va - m * a) * l + m * (b - a)
    }
}

/// Raabe-type statistic n ln2 beta_n over the smallest tabulated pairs, and
/// whether the local exponent at the finest level has dropped below 0.8 of
/// its value at half that level.
fn raabe_statistic(profile: &ModulusProfile) -> (f64, bool) {
    let pairs: Vec<(f64, f64)> = profile
        .radii
        .windows(2)
        .zip(profile.values.windows(2))
        .filter(|(r, v)| r[1] <= 0.5 && v[0] > 0.0 && v[1] > 0.0)
        .map(|(r, v)| {
            let beta = (v[1] / v[0]).ln() / (r[1] / r[0]).ln();
            let level = -(r[0] * r[1]).sqrt().log2();
            (level, beta)
        })
        .collect();
    if pairs.len() < 2 {
        return (f64::NAN, false);
    }
    let finest: Vec<&(f64, f64)> = pairs.iter().take(4).collect();
    let raabe = finest.iter().map(|(n, b)| n * std::f64::consts::LN_2 * b).sum::<f64>() / finest.len() as f64;
    let (n0, b0) = pairs[0];
    let half = pairs
        .iter()
        .min_by(|a, b| (a.0 - n0 / 2.0).abs().total_cmp(&(b.0 - n0 / 2.0).abs()))
        .copied()
        .unwrap_or((n0, b0));
    let decaying = n0 >= 4.0 && half.1 > 0.0 && b0 < 0.8 * half.1;
    (raabe, decaying)
}
