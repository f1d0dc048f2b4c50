//! Envelope evaluators and checkers: parabolic geometry, Gaussian and
//! sub-Gaussian envelopes, pointwise and derivative constants, the
//! single-step exponential form and the chaining bound.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::frozen_kernel::FrozenKernel;
use crate::grid::{KernelGrid, Lattice, Method, SpaceTime};
use crate::linalg::{self, Point};

/// Stirling constant in k! <= c0 sqrt(k) (k/e)^k, k >= 1.
pub const STIRLING_C0: f64 = std::f64::consts::E;

/// |X - Y| = max(|x - y|, sqrt|t - s|).
pub fn parabolic_distance(a: &SpaceTime, b: &SpaceTime) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(linalg::distance(&a.x, &b.x).max((a.t - b.t).abs().sqrt()))
}

/// C dt^{-d/2} exp(-kappa (r / sqrt dt)^p).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianEnvelope {
    pub c: f64,
    pub kappa: f64,
    pub p: f64,
    pub d: usize,
}

impl GaussianEnvelope {
    pub fn new(c: f64, kappa: f64, p: f64, d: usize) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::param("C", "must be positive"));
        }
        if !(kappa > 0.0) {
            return Err(Error::param("kappa", "must be positive"));
        }
        if !(p > 0.0 && p <= 2.0) {
            return Err(Error::param("p", "must lie in (0, 2]"));
        }
        Ok(Self { c, kappa, p, d })
    }

    pub fn evaluate(&self, dt: f64, r: f64) -> f64 {
        self.c * self.shape(dt, r)
    }

    /// Envelope without its constant.
    pub fn shape(&self, dt: f64, r: f64) -> f64 {
        (-(self.d as f64) / 2.0 * dt.ln() - self.kappa * (r / dt.sqrt()).powf(self.p)).exp()
    }

    fn log_shape(&self, dt: f64, r: f64) -> f64 {
        -(self.d as f64) / 2.0 * dt.ln() - self.kappa * (r / dt.sqrt()).powf(self.p)
    }
}

/// A kernel entry located by its target and source.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub target: SpaceTime,
    pub source: SpaceTime,
    pub value: f64,
}

fn locate(kernel: &KernelGrid, i: usize, j: usize) -> GridPoint {
    GridPoint {
        target: kernel.targets()[i].clone(),
        source: kernel.sources()[j].clone(),
        value: kernel.get(i, j),
    }
}

#[derive(Clone, Debug)]
pub struct EnvelopeReport {
    pub sup_ratio: f64,
    pub argmax: Option<GridPoint>,
    /// The argmax sits at the largest offset |x - xi| available for its time
    /// gap, so the envelope may be violated outside the window.
    pub boundary_flag: bool,
    pub points: usize,
}

/// sup |Gamma| / envelope-shape over pairs with t > tau.
pub fn envelope_ratio(kernel: &KernelGrid, env: &GaussianEnvelope) -> EnvelopeReport {
    let mut best = (0.0_f64, None::<(usize, usize)>);
    let mut points = 0;
    for i in 0..kernel.targets().len() {
        for j in 0..kernel.sources().len() {
            let (tg, sc) = (&kernel.targets()[i], &kernel.sources()[j]);
            let dt = tg.t - sc.t;
            if dt <= 0.0 {
                continue;
            }
            points += 1;
            let r = linalg::distance(&tg.x, &sc.x);
            let v = kernel.get(i, j).abs();
            if v == 0.0 {
                continue;
            }
            let ratio = (v.ln() - env.log_shape(dt, r)).exp();
            if ratio > best.0 {
                best = (ratio, Some((i, j)));
            }
        }
    }
    let boundary_flag = best.1.is_some_and(|(i, j)| {
        let dt = kernel.targets()[i].t - kernel.sources()[j].t;
        let r = linalg::distance(&kernel.targets()[i].x, &kernel.sources()[j].x);
        let rmax = kernel
            .iter()
            .filter(|(a, b, _)| ((a.t - b.t) - dt).abs() <= 1e-12 * dt.max(1.0))
            .map(|(a, b, _)| linalg::distance(&a.x, &b.x))
            .fold(0.0, f64::max);
        r >= rmax * (1.0 - 1e-9)
    });
    EnvelopeReport {
        sup_ratio: best.0,
        argmax: best.1.map(|(i, j)| locate(kernel, i, j)),
        boundary_flag,
        points,
    }
}

#[derive(Clone, Debug)]
pub struct PointwiseReport {
    pub constant: f64,
    pub argmax: Option<GridPoint>,
    pub points: usize,
}

/// Empirical C in |Gamma(X, Y)| <= C |X - Y|^{-d} over 0 < |X - Y| < r0.
pub fn pointwise_bound_check(kernel: &KernelGrid, r0: f64) -> Result<PointwiseReport> {
    weighted_sup(kernel, r0, kernel.dim() as i32, |i, j| kernel.get(i, j).abs())
}

fn weighted_sup(
    kernel: &KernelGrid,
    r0: f64,
    power: i32,
    value: impl Fn(usize, usize) -> f64,
) -> Result<PointwiseReport> {
    if !(r0 > 0.0) {
        return Err(Error::param("R0", "must be positive"));
    }
    let mut out = PointwiseReport {
        constant: 0.0,
        argmax: None,
        points: 0,
    };
    for i in 0..kernel.targets().len() {
        for j in 0..kernel.sources().len() {
            let dist = parabolic_distance(&kernel.targets()[i], &kernel.sources()[j])?;
            if !(dist > 0.0 && dist < r0) {
                continue;
            }
            out.points += 1;
            let c = value(i, j) * dist.powi(power);
            if c > out.constant {
                out.constant = c;
                out.argmax = Some(locate(kernel, i, j));
            }
        }
    }
    if out.points == 0 {
        return Err(Error::Empty(format!("no grid point with 0 < |X - Y| < {r0}")));
    }
    Ok(out)
}

/// Magnitudes |D_x Gamma|, |D_x^2 Gamma| (spectral norm) and |d_t Gamma| on
/// a common target/source layout.
#[derive(Clone, Debug)]
pub struct DerivativeGrids {
    pub gradient: Option<KernelGrid>,
    pub hessian: Option<KernelGrid>,
    pub time: Option<KernelGrid>,
}

impl DerivativeGrids {
    /// Closed-form derivatives of a frozen kernel.
    pub fn frozen(kernel: &FrozenKernel, targets: &[SpaceTime], sources: &[SpaceTime]) -> Result<Self> {
        let d = kernel.dim();
        let mk = |f: &dyn Fn(&SpaceTime, &SpaceTime) -> Result<f64>| {
            KernelGrid::from_fn(d, targets.to_vec(), sources.to_vec(), Method::Frozen, |a, b| f(a, b))
        };
        let gradient = mk(&|a, b| Ok(linalg::norm(&kernel.phi_gradient(a.t, &a.x, b.t, &b.x)?)))?;
        let hessian = mk(&|a, b| Ok(spectral_norm(&kernel.phi_hessian(a.t, &a.x, b.t, &b.x)?)))?;
        let time = mk(&|a, b| Ok(kernel.phi_time_derivative(a.t, &a.x, b.t, &b.x)?.abs()))?;
        Ok(Self {
            gradient: Some(gradient),
            hessian: Some(hessian),
            time: Some(time),
        })
    }

    /// Central differences of a kernel whose targets form a (t, x) lattice;
    /// entries without a full stencil are left at zero.
    pub fn finite_difference(kernel: &KernelGrid) -> Result<Self> {
        let d = kernel.dim();
        let pts: Vec<Point> = kernel
            .targets()
            .iter()
            .map(|p| std::iter::once(p.t).chain(p.x.iter().copied()).collect())
            .collect();
        let lattice = Lattice::detect(&pts)?;
        if lattice.axes.iter().any(|a| a.len() < 3) {
            return Err(Error::Stencil("need at least 3 nodes per (t, x) axis".into()));
        }
        let dims: Vec<usize> = lattice.axes.iter().map(Vec::len).collect();
        let flat = |idx: &[usize]| idx.iter().zip(&dims).fold(0, |acc, (i, n)| acc * n + i);
        let mut position = vec![0usize; dims.iter().product()];
        for (row, idx) in lattice.index.iter().enumerate() {
            position[flat(idx)] = row;
        }
        let steps: Vec<f64> = (0..=d).map(|k| lattice.spacing(k)).collect();
        let (targets, sources) = (kernel.targets().to_vec(), kernel.sources().to_vec());
        let mut gradient = KernelGrid::zeros(d, targets.clone(), sources.clone(), kernel.method)?;
        let mut hessian = KernelGrid::zeros(d, targets.clone(), sources.clone(), kernel.method)?;
        let mut time = KernelGrid::zeros(d, targets, sources, kernel.method)?;
        for j in 0..kernel.sources().len() {
            let src_t = kernel.sources()[j].t;
            for (row, idx) in lattice.index.iter().enumerate() {
                if idx.iter().zip(&dims).any(|(&i, &n)| i == 0 || i + 1 == n) {
                    continue;
                }
                if kernel.targets()[row].t - steps[0] <= src_t {
                    continue;
                }
                let val = |shift: &[(usize, isize)]| -> f64 {
                    let mut m = idx.clone();
                    for &(k, s) in shift {
                        m[k] = (m[k] as isize + s) as usize;
                    }
                    kernel.get(position[flat(&m)], j)
                };
                time.set(row, j, ((val(&[(0, 1)]) - val(&[(0, -1)])) / (2.0 * steps[0])).abs());
                let mut g = Point::from_elem(0.0, d);
                let mut h = crate::linalg::SymMatrix::zeros(d);
                for k in 0..d {
                    let hk = steps[k + 1];
                    g[k] = (val(&[(k + 1, 1)]) - val(&[(k + 1, -1)])) / (2.0 * hk);
                    h.set(k, k, (val(&[(k + 1, 1)]) - 2.0 * val(&[]) + val(&[(k + 1, -1)])) / (hk * hk));
                    for l in (k + 1)..d {
                        let hl = steps[l + 1];
                        let m = (val(&[(k + 1, 1), (l + 1, 1)]) - val(&[(k + 1, 1), (l + 1, -1)])
                            - val(&[(k + 1, -1), (l + 1, 1)])
                            + val(&[(k + 1, -1), (l + 1, -1)]))
                            / (4.0 * hk * hl);
                        h.set(k, l, m);
                        h.set(l, k, m);
                    }
                }
                gradient.set(row, j, linalg::norm(&g));
                hessian.set(row, j, spectral_norm(&h));
            }
        }
        Ok(Self {
            gradient: Some(gradient),
            hessian: Some(hessian),
            time: Some(time),
        })
    }
}

fn spectral_norm(m: &crate::linalg::SymMatrix) -> f64 {
    let d = m.dim();
    let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| m.get(i, j));
    mat.symmetric_eigenvalues().iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

#[derive(Clone, Debug)]
pub struct DerivativeReport {
    /// sup |D_x Gamma| |X - Y|^{d+1}.
    pub gradient_constant: f64,
    /// sup (|d_t Gamma| + |D_x^2 Gamma|) |X - Y|^{d+2}.
    pub second_order_constant: f64,
    /// The two summands separately.
    pub time_constant: f64,
    pub hessian_constant: f64,
    pub points: usize,
}

pub fn derivative_bound_check(grids: &DerivativeGrids, r0: f64) -> Result<DerivativeReport> {
    let missing = |name: &str| Error::Empty(format!("missing {name} grid"));
    let g = grids.gradient.as_ref().ok_or_else(|| missing("gradient"))?;
    let h = grids.hessian.as_ref().ok_or_else(|| missing("hessian"))?;
    let t = grids.time.as_ref().ok_or_else(|| missing("time derivative"))?;
    if g.targets() != h.targets() || g.targets() != t.targets() || g.sources() != h.sources() || g.sources() != t.sources() {
        return Err(Error::GridMismatch("derivative grids must share targets and sources".into()));
    }
    let d = g.dim() as i32;
    let grad = weighted_sup(g, r0, d + 1, |i, j| g.get(i, j).abs())?;
    let second = weighted_sup(g, r0, d + 2, |i, j| t.get(i, j).abs() + h.get(i, j).abs())?;
    let time = weighted_sup(g, r0, d + 2, |i, j| t.get(i, j).abs())?;
    let hess = weighted_sup(g, r0, d + 2, |i, j| h.get(i, j).abs())?;
    Ok(DerivativeReport {
        gradient_constant: grad.constant,
        second_order_constant: second.constant,
        time_constant: time.constant,
        hessian_constant: hess.constant,
        points: grad.points,
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", "must lie in (0, 1)"));
    }
    Ok(())
}

fn logsumexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Logarithms of the two terms of the chaining bound at t and xi = |x|/sqrt t,
/// with N = ceil(xi^{1 - delta}).
pub fn chaining_log_terms(c0: f64, kappa0: f64, delta: f64, t: f64, xi: f64, d: usize) -> Result<(f64, f64)> {
    check_delta(delta)?;
    if !(t > 0.0) {
        return Err(Error::param("t", "must be positive"));
    }
    if !(xi > 0.0) {
        return Err(Error::param("xi", "must be positive"));
    }
    let df = d as f64;
    let n = xi.powf(1.0 - delta).ceil().max(1.0);
    let m = df * (n * n - 1.0);
    let common = -df / 2.0 * t.ln() - kappa0 * n * xi + n * n * c0.ln() + df * n.ln();
    let power = |base: f64| if m == 0.0 { 0.0 } else { m * base.ln() };
    let first = common + power(4.0 * n * xi);
    let second = common + (STIRLING_C0 * df.sqrt()).ln() - (kappa0 * xi).ln()
        + power(2.0 * m / std::f64::consts::E * (3.0 * n * xi + 1.0 / kappa0));
    Ok((first, second))
}

/// Crossover slack: max(A, B) + beta xi^{2 - delta}
/// with beta = kappa0 / 2 and N replaced by xi^{1 - delta} + 1.
pub fn crossover_slack(c0: f64, kappa0: f64, delta: f64, xi: f64, d: usize) -> f64 {
    let df = d as f64;
    let np = xi.powf(1.0 - delta) + 1.0;
    let m = df * (np * np - 1.0);
    let lead = -kappa0 * xi.powf(2.0 - delta);
    let shared = c0.ln() * np * np + df * np.ln();
    let a = lead + shared + m * (4.0 * np * xi).ln();
    let b = lead - (kappa0 * xi).ln() + shared + m * (2.0 * m * (3.0 * xi * np + 1.0 / kappa0) / std::f64::consts::E).ln();
    a.max(b) + 0.5 * kappa0 * xi.powf(2.0 - delta)
}

/// R0 >= 1 beyond which both conditions hold on a geometric scan up to
/// 1e15, refined by bisection.
pub fn crossover_radius(c0: f64, kappa0: f64, delta: f64, d: usize) -> Result<f64> {
    check_delta(delta)?;
    let g = |xi: f64| crossover_slack(c0, kappa0, delta, xi, d);
    let factor = 1.05;
    let mut xi = 1.0;
    let mut last_bad: Option<f64> = None;
    while xi < 1e15 {
        if g(xi) > 0.0 {
            last_bad = Some(xi);
        }
        xi *= factor;
    }
    if g(xi) > 0.0 {
        return Err(Error::param("delta", "no crossover below 1e15"));
    }
    let Some(bad) = last_bad else { return Ok(1.0) };
    let (mut lo, mut hi) = (bad, bad * factor);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Which branch of the chaining bound produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainingBranch {
    SingleStep,
    Chained,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainingValue {
    pub log_value: f64,
    pub branch: ChainingBranch,
    pub n: f64,
}

impl ChainingValue {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainingBound {
    pub c0: f64,
    pub kappa0: f64,
    pub delta: f64,
    pub d: usize,
    pub r0: f64,
}

impl ChainingBound {
    pub fn new(c0: f64, kappa0: f64, delta: f64, d: usize) -> Result<Self> {
        if !(c0 > 0.0 && kappa0 > 0.0) {
            return Err(Error::param("C0, kappa0", "must be positive"));
        }
        let r0 = crossover_radius(c0, kappa0, delta, d)?;
        Ok(Self {
            c0,
            kappa0,
            delta,
            d,
            r0,
        })
    }

    /// Chained two-term bound for |x|/sqrt t > R0, otherwise the single-step
    /// form C0 t^{-d/2} e^{-kappa0 |x|/sqrt t}.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<ChainingValue> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        if !(t > 0.0) {
            return Err(Error::param("t", "must be positive"));
        }
        let xi = linalg::norm(x) / t.sqrt();
        if xi <= self.r0 {
            return Ok(ChainingValue {
                log_value: self.c0.ln() - self.d as f64 / 2.0 * t.ln() - self.kappa0 * xi,
                branch: ChainingBranch::SingleStep,
                n: 1.0,
            });
        }
        let (a, b) = chaining_log_terms(self.c0, self.kappa0, self.delta, t, xi, self.d)?;
        Ok(ChainingValue {
            log_value: logsumexp(a, b),
            branch: ChainingBranch::Chained,
            n: xi.powf(1.0 - self.delta).ceil(),
        })
    }

    /// log of the two branches just below and above R0 at t.
    pub fn seam(&self, t: f64) -> Result<(f64, f64)> {
        let below = self.c0.ln() - self.d as f64 / 2.0 * t.ln() - self.kappa0 * self.r0;
        let (a, b) = chaining_log_terms(self.c0, self.kappa0, self.delta, t, self.r0 * (1.0 + 1e-12), self.d)?;
        Ok((below, logsumexp(a, b)))
    }
}

/// Convenience wrapper: builds the crossover and evaluates once.
pub fn chaining_bound(c0: f64, kappa0: f64, delta: f64, t: f64, x: &[f64]) -> Result<ChainingValue> {
    ChainingBound::new(c0, kappa0, delta, x.len())?.evaluate(t, x)
}

/// (k!/alpha)(3 + 1/alpha)^k, via log-gamma.
pub fn tail_sum_bound(k: u32, alpha: f64) -> Result<f64> {
    Ok(log_tail_sum_bound(k, alpha)?.exp())
}

pub fn log_tail_sum_bound(k: u32, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", "must be positive"));
    }
    let kf = k as f64;
    Ok(ln_gamma(kf + 1.0) - alpha.ln() + kf * (3.0 + 1.0 / alpha).ln())
}

/// log sum_{n=2}^{terms+1} (n+1)^k e^{-alpha(n-1)}.
pub fn log_tail_sum_direct(k: u32, alpha: f64, terms: usize) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", "must be positive"));
    }
    let logs: Vec<f64> = (2..terms + 2)
        .map(|n| k as f64 * ((n + 1) as f64).ln() - alpha * (n - 1) as f64)
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
}

#[derive(Clone, Debug)]
pub struct ExpDecayReport {
    pub violations: usize,
    /// max |Gamma| / (C0 eps^{-d} e^{-kappa0 |x - y| / eps}), eps = sqrt(t - tau).
    pub worst_ratio: f64,
    pub argmax: Option<GridPoint>,
    pub points: usize,
}

/// Single-step exponential envelope check over pairs with 0 < t - tau <= 1.
pub fn exp_decay_check(kernel: &KernelGrid, c0: f64, kappa0: f64) -> ExpDecayReport {
    let d = kernel.dim() as f64;
    let mut out = ExpDecayReport {
        violations: 0,
        worst_ratio: 0.0,
        argmax: None,
        points: 0,
    };
    for i in 0..kernel.targets().len() {
        for j in 0..kernel.sources().len() {
            let (tg, sc) = (&kernel.targets()[i], &kernel.sources()[j]);
            let dt = tg.t - sc.t;
            if !(dt > 0.0 && dt <= 1.0) {
                continue;
            }
            out.points += 1;
            let v = kernel.get(i, j).abs();
            if v == 0.0 {
                continue;
            }
            let eps = dt.sqrt();
            let log_env = c0.ln() - d * eps.ln() - kappa0 * linalg::distance(&tg.x, &sc.x) / eps;
            let ratio = (v.ln() - log_env).exp();
            if ratio > 1.0 + 1e-12 {
                out.violations += 1;
            }
            if ratio > out.worst_ratio {
                out.worst_ratio = ratio;
                out.argmax = Some(locate(kernel, i, j));
            }
        }
    }
    out
}

/// Smallest C0 with zero violations for the given kappa0.
pub fn fit_exp_decay(kernel: &KernelGrid, kappa0: f64) -> f64 {
    exp_decay_check(kernel, 1.0, kappa0).worst_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientField, TimeCurve};
    use crate::parametrix::frozen_grid;
    use approx::assert_relative_eq;

    #[test]
    fn parabolic_distance_examples() {
        let a = SpaceTime::new(1.0, &[0.0]);
        assert_eq!(parabolic_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(parabolic_distance(&a, &SpaceTime::new(0.0, &[0.0])).unwrap(), 1.0);
        let b = SpaceTime::new(0.0, &[3.0]);
        assert_eq!(parabolic_distance(&b, &SpaceTime::new(0.04, &[0.0])).unwrap(), 3.0);
        assert!(parabolic_distance(&a, &SpaceTime::new(0.0, &[0.0, 1.0])).is_err());
    }

    fn heat_grid() -> KernelGrid {
        let c = CoefficientField::identity(1);
        let tg: Vec<SpaceTime> = (1..=20)
            .flat_map(|i| (-40..=40).map(move |j| SpaceTime::new(0.05 * i as f64, &[0.1 * j as f64])))
            .collect();
        frozen_grid(&c, &tg, &[SpaceTime::new(0.0, &[0.0])]).unwrap()
    }

    #[test]
    fn frozen_kernel_envelope_constant() {
        let g = heat_grid();
        let c0 = (4.0 * std::f64::consts::PI).powf(-0.5);
        let env = GaussianEnvelope::new(1.0, 0.25, 2.0, 1).unwrap();
        let r = envelope_ratio(&g, &env);
        assert_relative_eq!(r.sup_ratio, c0, max_relative = 1e-9);
        let scaled = envelope_ratio(&g.scaled(3.0), &env);
        assert_relative_eq!(scaled.sup_ratio, 3.0 * r.sup_ratio, max_relative = 1e-14);
        assert!(!envelope_ratio(&g, &GaussianEnvelope::new(1.0, 0.1, 2.0, 1).unwrap()).boundary_flag);
        let tight = GaussianEnvelope::new(1.0, 0.5, 2.0, 1).unwrap();
        assert!(envelope_ratio(&g, &tight).boundary_flag);
        let env_c = GaussianEnvelope::new(r.sup_ratio, 0.25, 2.0, 1).unwrap();
        let at = r.argmax.unwrap();
        let dt = at.target.t - at.source.t;
        assert_relative_eq!(at.value / env_c.evaluate(dt, (at.target.x[0] - at.source.x[0]).abs()), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn pointwise_constant_of_heat_kernel() {
        let g = heat_grid();
        let r = pointwise_bound_check(&g, 10.0).unwrap();
        assert_relative_eq!(r.constant, (4.0 * std::f64::consts::PI).powf(-0.5), max_relative = 1e-12);
        assert!(pointwise_bound_check(&g, 1e-3).is_err());
    }

    #[test]
    fn frozen_gradient_constant_is_closed_form() {
        let k = FrozenKernel::new(TimeCurve::constant(crate::linalg::SymMatrix::identity(1)));
        let src = [SpaceTime::new(0.0, &[0.0])];
        let tg: Vec<SpaceTime> = [0.1, 0.4].iter().map(|&t: &f64| SpaceTime::new(t, &[6f64.sqrt() * t.sqrt()])).collect();
        let grids = DerivativeGrids::frozen(&k, &tg, &src).unwrap();
        let r = derivative_bound_check(&grids, 10.0).unwrap();
        let closed = 6.0 * 6f64.sqrt() * (-1.5f64).exp() / (4.0 * std::f64::consts::PI.sqrt());
        assert_relative_eq!(r.gradient_constant, closed, max_relative = 1e-12);
        assert_relative_eq!(r.time_constant, r.hessian_constant, max_relative = 1e-12);
    }

    #[test]
    fn tail_sum_examples() {
        assert_relative_eq!(tail_sum_bound(0, 1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(tail_sum_bound(2, 1.0).unwrap(), 32.0, max_relative = 1e-13);
        let direct = log_tail_sum_direct(0, 1.0, 100_000).unwrap().exp();
        let geometric = (-1.0f64).exp() / (1.0 - (-1.0f64).exp());
        assert_relative_eq!(direct, geometric, max_relative = 1e-12);
        assert!(tail_sum_bound(1, 0.0).is_err());
        assert!(tail_sum_bound(3, 1e6).unwrap() < 1e-3);
    }

    #[test]
    fn exp_decay_fault_injection() {
        let g = heat_grid();
        let c = fit_exp_decay(&g, 0.5);
        assert_eq!(exp_decay_check(&g, c, 0.5).violations, 0);
        let mut bad = g.clone();
        let i = g.find_target(&exp_decay_check(&g, c, 0.5).argmax.unwrap().target).unwrap();
        bad.set(i, 0, bad.get(i, 0) * 10.0);
        assert_eq!(exp_decay_check(&bad, c, 0.5).violations, 1);
    }

    #[test]
    fn chaining_single_step_branch_at_origin() {
        let v = chaining_bound(0.3, 0.25, 0.5, 0.5, &[0.0]).unwrap();
        assert_eq!(v.branch, ChainingBranch::SingleStep);
        assert_relative_eq!(v.value(), 0.3 / 0.5f64.sqrt(), max_relative = 1e-14);
        assert!(chaining_bound(0.3, 0.25, 1.0, 0.5, &[0.0]).is_err());
    }
}
