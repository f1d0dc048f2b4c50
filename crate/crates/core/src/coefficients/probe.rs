use serde::{Deserialize, Serialize};

use super::field::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg::Point;
use crate::quadrature::{halton, GaussRule};

/// Deterministic probe set: the box center, its corners, and Halton points
/// inside the box `center +- half_width`, crossed with evenly spaced times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSpec {
    pub t_range: [f64; 2],
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points: usize,
    pub time_points: usize,
    pub directions: usize,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            t_range: [0.0, 1.0],
            center: Vec::new(),
            half_width: std::f64::consts::PI,
            points: 256,
            time_points: 4,
            directions: 8,
        }
    }
}

impl ProbeSpec {
    pub fn points(&self, d: usize) -> Vec<Point> {
        let center: Point = if self.center.len() == d {
            Point::from_slice(&self.center)
        } else {
            Point::from_elem(0.0, d)
        };
        let h = self.half_width;
        let mut out = vec![center.clone()];
        if d <= 4 {
            for mask in 0..(1usize << d) {
                out.push(
                    (0..d)
                        .map(|k| center[k] + if mask >> k & 1 == 1 { h } else { -h })
                        .collect(),
                );
            }
        }
        for i in 0..self.points as u64 {
            let u = halton(i, d);
            out.push((0..d).map(|k| center[k] + h * (2.0 * u[k] - 1.0)).collect());
        }
        out
    }

    pub fn times(&self) -> Vec<f64> {
        let [a, b] = self.t_range;
        match self.time_points {
            0 | 1 => vec![a],
            n => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Unit directions: coordinate axes, then evenly spread or Halton
    /// directions, each with its negative.
    pub fn directions(&self, d: usize) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        for k in 0..d {
            let mut e = Point::from_elem(0.0, d);
            e[k] = 1.0;
            out.push(e);
        }
        if d == 2 {
            let n = self.directions.max(2);
            for i in 1..n {
                let a = std::f64::consts::PI * i as f64 / n as f64;
                if (a - std::f64::consts::FRAC_PI_2).abs() > 1e-12 {
                    out.push(Point::from_slice(&[a.cos(), a.sin()]));
                }
            }
        } else if d > 2 {
            for i in 0..self.directions as u64 {
                let u = halton(i, d);
                let v: Point = u.iter().map(|c| 2.0 * c - 1.0).collect();
                let n = crate::linalg::norm(&v);
                if n > 1e-6 {
                    out.push(v.iter().map(|c| c / n).collect());
                }
            }
        }
        let neg: Vec<Point> = out.iter().map(|e| e.iter().map(|c| -c).collect()).collect();
        out.extend(neg);
        out
    }

    pub fn describe(&self, d: usize) -> String {
        format!(
            "halton+corners points={} times={} directions={} t_range=[{}, {}] half_width={} d={}",
            self.points(d).len(),
            self.times().len(),
            self.directions(d).len(),
            self.t_range[0],
            self.t_range[1],
            self.half_width,
            d
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticityReport {
    pub lambda_est: f64,
    pub big_lambda_est: f64,
    pub pass: bool,
    pub probes: usize,
}

/// Extremes of the quadratic form over the probe set, compared with the
/// declared bounds (tolerance 1e-12).
pub fn check_ellipticity(field: &CoefficientField, probe: &ProbeSpec) -> EllipticityReport {
    let d = field.dim();
    let dirs = probe.directions(d);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut count = 0;
    for t in probe.times() {
        for x in probe.points(d) {
            let a = field.eval_raw(t, &x);
            for e in &dirs {
                let q = a.quad_form(e);
                lo = lo.min(q);
                hi = hi.max(q);
                count += 1;
            }
        }
    }
    let tol = 1e-12;
    EllipticityReport {
        lambda_est: lo,
        big_lambda_est: hi,
        pass: field.lambda() <= lo + tol && hi <= field.big_lambda() + tol,
        probes: count,
    }
}

/// Tensor quadrature specification for ball and cylinder averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallQuadSpec {
    pub order: usize,
    pub panels: usize,
    pub time_order: usize,
}

impl Default for BallQuadSpec {
    fn default() -> Self {
        Self {
            order: 12,
            panels: 2,
            time_order: 6,
        }
    }
}

impl BallQuadSpec {
    fn validate(&self) -> Result<()> {
        for v in [self.order, self.time_order] {
            if v < 2 {
                return Err(Error::QuadratureOrder { order: v, min: 2 });
            }
        }
        Ok(())
    }

    /// Offsets and normalized weights (summing to 1) for the average over the
    /// ball of radius `r` centered at the origin.
    pub fn ball_nodes(&self, d: usize, r: f64) -> Result<Vec<(Point, f64)>> {
        self.validate()?;
        let rule = GaussRule::new(self.order)?;
        let panels = self.panels.max(1);
        let mut out: Vec<(Point, f64)> = Vec::new();
        match d {
            1 => {
                for (x, w) in rule.composite(-r, r, 2 * panels) {
                    out.push((Point::from_slice(&[x]), w));
                }
            }
            2 => {
                let n_ang = 4 * self.order;
                let da = std::f64::consts::TAU / n_ang as f64;
                for (rho, w) in rule.composite(0.0, r, panels) {
                    for k in 0..n_ang {
                        let a = da * (k as f64 + 0.5);
                        out.push((Point::from_slice(&[rho * a.cos(), rho * a.sin()]), w * rho * da));
                    }
                }
            }
            _ => {
                let axis = rule.composite(-r, r, 2 * panels);
                let axes = vec![axis; d];
                crate::quadrature::for_each_tensor(&axes, |p, w| {
                    if crate::linalg::norm(p) <= r {
                        out.push((Point::from_slice(p), w));
                    }
                });
            }
        }
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::Empty("ball quadrature has no nodes".into()));
        }
        for (_, w) in &mut out {
            *w /= total;
        }
        Ok(out)
    }

    /// Nodes and normalized weights for the average over (a, b).
    pub fn time_nodes(&self, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        let rule = GaussRule::new(self.time_order)?;
        let span = b - a;
        Ok(rule.on(a, b).map(|(s, w)| (s, w / span)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;

    #[test]
    fn identity_and_diagonal_fields_pass() {
        let spec = ProbeSpec::default();
        let r = check_ellipticity(&CoefficientField::identity(2), &spec);
        assert_eq!((r.lambda_est, r.big_lambda_est, r.pass), (1.0, 1.0, true));
        let f = CoefficientField::constant(SymMatrix::diagonal(&[1.0, 3.0]), 1.0, 3.0).unwrap();
        let r = check_ellipticity(&f, &spec);
        assert!((r.lambda_est - 1.0).abs() < 1e-12 && (r.big_lambda_est - 3.0).abs() < 1e-12 && r.pass);
    }

    #[test]
    fn x_sine_estimates_within_declared_bounds() {
        let f = CoefficientField::x_sine(1, 1.0, 0.3, 1.0).unwrap();
        let r = check_ellipticity(&f, &ProbeSpec::default());
        assert!(r.pass);
        // exhaustive fine grid over one period bounds the probe estimates
        let n = 100_000;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..=n {
            let x = -std::f64::consts::PI + std::f64::consts::TAU * i as f64 / n as f64;
            let v = 1.0 + 0.3 * x.sin();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(r.lambda_est >= lo - 1e-12 && r.big_lambda_est <= hi + 1e-12);
        assert!(r.lambda_est >= 0.7 && r.big_lambda_est <= 1.3);
        assert!((r.lambda_est - 0.7).abs() < 1e-3 && (r.big_lambda_est - 1.3).abs() < 1e-3);
    }

    #[test]
    fn understated_bounds_fail() {
        let f = CoefficientField::custom(1, 1.0, 1.1, "wide", true, true, |_, _| {
            SymMatrix::scaled_identity(1, 2.0)
        })
        .unwrap();
        assert!(!check_ellipticity(&f, &ProbeSpec::default()).pass);
    }

    #[test]
    fn ball_weights_integrate_quadratics() {
        let spec = BallQuadSpec::default();
        for d in 1..=3 {
            let nodes = spec.ball_nodes(d, 0.5).unwrap();
            let s: f64 = nodes.iter().map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
            // average of |y|^2 over a ball of radius r is d r^2 / (d + 2)
            let m: f64 = nodes.iter().map(|(p, w)| w * crate::linalg::dot(p, p)).sum();
            let expect = d as f64 * 0.25 / (d as f64 + 2.0);
            let tol = if d == 3 { 5e-2 } else { 1e-10 };
            assert!((m - expect).abs() < tol * expect, "d={d}: {m} vs {expect}");
        }
    }

    #[test]
    fn low_order_is_rejected() {
        let spec = BallQuadSpec {
            order: 1,
            ..Default::default()
        };
        assert!(matches!(spec.ball_nodes(1, 1.0), Err(Error::QuadratureOrder { .. })));
    }
}
