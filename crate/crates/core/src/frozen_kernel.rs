//! Gaussian fundamental solutions of operators whose coefficients depend on
//! time only, their derivatives, and the constants that bound them.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use crate::coefficients::TimeCurve;
use crate::error::{Error, Result};
use crate::linalg::{Point, SymMatrix};
use crate::quadrature::{for_each_tensor, GaussRule};

/// Time gaps below this are rejected rather than regularized.
pub const MIN_TIME_GAP: f64 = 1e-12;

/// Centered Gaussian density with covariance `sigma`, and its derivatives.
#[derive(Clone, Debug)]
pub struct Gaussian {
    sigma: SymMatrix,
    inv: SymMatrix,
    norm: f64,
}

impl Gaussian {
    pub fn new(sigma: SymMatrix) -> Result<Self> {
        let d = sigma.dim();
        let det = sigma.determinant();
        let inv = sigma
            .inverse()
            .filter(|_| det > 0.0)
            .ok_or_else(|| Error::param("covariance", "not positive definite"))?;
        let norm = (2.0 * PI).powf(-(d as f64) / 2.0) / det.sqrt();
        Ok(Self { sigma, inv, norm })
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.inv
    }

    /// Peak value (2 pi)^{-d/2} det(sigma)^{-1/2}.
    pub fn peak(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn density(&self, z: &[f64]) -> f64 {
        self.norm * (-0.5 * self.inv.quad_form(z)).exp()
    }

    pub fn gradient(&self, z: &[f64]) -> Point {
        let p = self.density(z);
        self.inv.mat_vec(z).iter().map(|v| -p * v).collect()
    }

    pub fn hessian(&self, z: &[f64]) -> SymMatrix {
        let p = self.density(z);
        let v = self.inv.mat_vec(z);
        let d = self.inv.dim();
        let mut h = SymMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                h.set(i, j, p * (v[i] * v[j] - self.inv.get(i, j)));
            }
        }
        h
    }

    /// m : D^2 density, without forming the Hessian.
    #[inline]
    pub fn hessian_contract(&self, z: &[f64], m: &SymMatrix) -> f64 {
        let v = self.inv.mat_vec(z);
        (m.quad_form(&v) - m.contract(&self.inv)) * self.density(z)
    }
}

/// Fundamental solution of d/dt - tr(A(t) D^2) for a time curve A(t):
/// the Gaussian with covariance 2 int_s^t A.
#[derive(Clone, Debug)]
pub struct FrozenKernel {
    curve: TimeCurve,
    cache: Arc<Mutex<HashMap<(u64, u64), Arc<Gaussian>>>>,
}

const CACHE_LIMIT: usize = 1 << 14;

impl FrozenKernel {
    pub fn new(curve: TimeCurve) -> Self {
        Self {
            curve,
            cache: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn curve(&self) -> &TimeCurve {
        &self.curve
    }

    pub fn dim(&self) -> usize {
        self.curve.dim()
    }

    fn check_gap(s: f64, t: f64) -> Result<()> {
        if t <= s {
            return Err(Error::TimeOrder(format!("need t > s, got t = {t}, s = {s}")));
        }
        if t - s < MIN_TIME_GAP {
            return Err(Error::DegenerateTimeGap {
                gap: t - s,
                threshold: MIN_TIME_GAP,
            });
        }
        Ok(())
    }

    /// Sigma(s, t) = 2 int_s^t A(r) dr.
    pub fn covariance(&self, s: f64, t: f64) -> Result<SymMatrix> {
        Self::check_gap(s, t)?;
        Ok(self.curve.integral(s, t).scale(2.0))
    }

    pub fn gaussian(&self, s: f64, t: f64) -> Result<Arc<Gaussian>> {
        Self::check_gap(s, t)?;
        let key = (s.to_bits(), t.to_bits());
        if let Some(g) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(Gaussian::new(self.covariance(s, t)?)?);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, g.clone());
        Ok(g)
    }

    fn diff(&self, x: &[f64], y: &[f64]) -> Result<Point> {
        let d = self.dim();
        if x.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if x.len() != d { x.len() } else { y.len() },
            });
        }
        Ok((0..d).map(|i| x[i] - y[i]).collect())
    }

    /// Phi(t, x, s, y); zero when t < s.
    pub fn phi(&self, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<f64> {
        let z = self.diff(x, y)?;
        if t < s {
            return Ok(0.0);
        }
        Ok(self.gaussian(s, t)?.density(&z))
    }

    pub fn phi_gradient(&self, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<Point> {
        let z = self.diff(x, y)?;
        Ok(self.gaussian(s, t)?.gradient(&z))
    }

    pub fn phi_hessian(&self, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<SymMatrix> {
        let z = self.diff(x, y)?;
        Ok(self.gaussian(s, t)?.hessian(&z))
    }

    /// d/dt Phi = tr(A(t) D^2 Phi).
    pub fn phi_time_derivative(&self, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<f64> {
        let z = self.diff(x, y)?;
        Ok(self.gaussian(s, t)?.hessian_contract(&z, &self.curve.eval(t)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    DerivedFormula,
    NumericOptimization,
    ConfigOverride,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::DerivedFormula => "derived_formula",
            Provenance::NumericOptimization => "numeric_optimization",
            Provenance::ConfigOverride => "config_override",
        }
    }
}

/// Constants of the short-time construction. `c1` and `delta0` are filled
/// in later stages.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundConstants {
    pub d: usize,
    pub c0: f64,
    pub kappa0: f64,
    pub c0_prime: f64,
    pub kappa0_prime: f64,
    pub c1: Option<f64>,
    pub c2: f64,
    pub eps0: f64,
    pub delta0: Option<f64>,
    pub provenance: BTreeMap<&'static str, Provenance>,
}

impl BoundConstants {
    pub fn with_c1(mut self) -> Result<Self> {
        self.c1 = Some(c1_constant(self.kappa0, self.kappa0_prime)?);
        self.provenance.insert("C1", Provenance::NumericOptimization);
        Ok(self)
    }

    pub fn with_eps0(mut self, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::param("eps0", "must lie in (0, 1)"));
        }
        self.eps0 = eps0;
        if eps0 != 0.5 {
            self.provenance.insert("eps0", Provenance::ConfigOverride);
        }
        Ok(self)
    }

    pub fn with_delta0(mut self, delta0: f64, provenance: Provenance) -> Self {
        self.delta0 = Some(delta0);
        self.provenance.insert("delta0", provenance);
        self
    }

    /// The product 2 C0' C1 C2 multiplying the Dini integral in the horizon
    /// condition.
    pub fn horizon_factor(&self) -> Option<f64> {
        self.c1.map(|c1| 2.0 * self.c0_prime * c1 * self.c2)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: Option<f64>| {
            let tag = self.provenance.get(k).map(|p| p.as_str()).unwrap_or("unset");
            match v {
                Some(v) => out.push_str(&format!("{k} = {v:.16e}  # {tag}\n")),
                None => out.push_str(&format!("{k} = unset\n")),
            }
        };
        line("C0", Some(self.c0));
        line("kappa0", Some(self.kappa0));
        line("C0_prime", Some(self.c0_prime));
        line("kappa0_prime", Some(self.kappa0_prime));
        line("C1", self.c1);
        line("C2", Some(self.c2));
        line("eps0", Some(self.eps0));
        line("delta0", self.delta0);
        out
    }
}

/// Gaussian bound constants for lambda I <= A <= Lambda I.
pub fn bound_constants(lambda: f64, big_lambda: f64, kappa_ratio: f64, d: usize) -> Result<BoundConstants> {
    if !(lambda > 0.0) {
        return Err(Error::param("lambda", "must be positive"));
    }
    if !(big_lambda >= lambda) {
        return Err(Error::param("Lambda", "must be at least lambda"));
    }
    if !(kappa_ratio > 0.0 && kappa_ratio < 1.0) {
        return Err(Error::param("kappa_ratio", "must lie in (0, 1)"));
    }
    if d == 0 {
        return Err(Error::param("d", "must be positive"));
    }
    let kappa0 = 1.0 / (4.0 * big_lambda);
    let c0 = (4.0 * PI * lambda).powf(-(d as f64) / 2.0);
    let kappa0_prime = kappa_ratio * kappa0;
    let c2 = (PI / kappa0_prime).powf(d as f64 / 2.0);
    let c0_prime = hessian_constant(lambda, big_lambda, kappa0, d);
    let provenance = BTreeMap::from([
        ("C0", Provenance::DerivedFormula),
        ("kappa0", Provenance::DerivedFormula),
        ("C0_prime", Provenance::NumericOptimization),
        ("kappa0_prime", Provenance::DerivedFormula),
        ("C2", Provenance::DerivedFormula),
        ("eps0", Provenance::DerivedFormula),
    ]);
    Ok(BoundConstants {
        d,
        c0,
        kappa0,
        c0_prime,
        kappa0_prime,
        c1: None,
        c2,
        eps0: 0.5,
        delta0: None,
        provenance,
    })
}

/// Largest eigenvalue in absolute value of a symmetric matrix.
fn spectral_norm(m: &SymMatrix) -> f64 {
    match m.dim() {
        1 => m.get(0, 0).abs(),
        2 => {
            let (a, b, c) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mid + rad).abs().max((mid - rad).abs())
        }
        d => {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, m.as_slice());
            mat.symmetric_eigenvalues().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
        }
    }
}

/// sup of |D^2 Phi| (t-s)^{d/2} / ((1/(t-s) + |z|^2/(t-s)^2) e^{-kappa0 |z|^2/(t-s)})
/// over diagonal A with eigenvalues on a grid in [lambda, Lambda] and
/// normalized displacements w = z / sqrt(t-s); the ratio does not depend on
/// t - s. Spectral norm on the Hessian.
pub(crate) fn hessian_constant(lambda: f64, big_lambda: f64, kappa0: f64, d: usize) -> f64 {
    let n_eig = match d {
        1 => 65,
        2 => 17,
        3 => 7,
        _ => 3,
    };
    let eig_axis: Vec<f64> = (0..n_eig)
        .map(|i| lambda + (big_lambda - lambda) * i as f64 / (n_eig - 1).max(1) as f64)
        .collect();
    let mut dirs: Vec<Point> = Vec::new();
    for k in 0..d {
        let mut e = Point::from_elem(0.0, d);
        e[k] = 1.0;
        dirs.push(e);
    }
    if d == 2 {
        for i in 1..24 {
            let a = PI / 2.0 * i as f64 / 24.0;
            dirs.push(Point::from_slice(&[a.cos(), a.sin()]));
        }
    } else if d > 2 {
        dirs.push(Point::from_elem(1.0 / (d as f64).sqrt(), d));
    }
    let mut radii = vec![0.0];
    radii.extend((0..=240).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 240.0)));

    let mut best = 0.0_f64;
    let mut eig = vec![0usize; d];
    loop {
        let a: Vec<f64> = eig.iter().map(|i| eig_axis[*i]).collect();
        let det: f64 = a.iter().product();
        let pref = (4.0 * PI).powf(-(d as f64) / 2.0) / det.sqrt();
        for e in &dirs {
            for &r in &radii {
                let w: Point = e.iter().map(|c| c * r).collect();
                let v: Vec<f64> = (0..d).map(|i| w[i] / a[i]).collect();
                let mut m = SymMatrix::zeros(d);
                for i in 0..d {
                    for j in 0..d {
                        let diag = if i == j { 0.5 / a[i] } else { 0.0 };
                        m.set(i, j, 0.25 * v[i] * v[j] - diag);
                    }
                }
                let q: f64 = (0..d).map(|i| w[i] * w[i] / a[i]).sum();
                let ratio = pref * spectral_norm(&m) * (-0.25 * q + kappa0 * r * r).exp() / (1.0 + r * r);
                best = best.max(ratio);
            }
        }
        // next eigenvalue combination, nondecreasing order only
        let mut k = d;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if eig[k] + 1 < n_eig {
                eig[k] += 1;
                for j in k + 1..d {
                    eig[j] = eig[k];
                }
                break;
            }
        }
    }
}

fn c1_objective(u: f64, gap: f64) -> f64 {
    (2.0 * u.sqrt() * (1.0 + u)).max(1.0 + u) * (-gap * u).exp()
}

/// C1 = sup_{u >= 0} max(2 sqrt(u)(1+u), 1+u) e^{-(kappa0 - kappa0') u}:
/// coarse bracketing on a logarithmic axis, then golden-section refinement.
pub fn c1_constant(kappa0: f64, kappa0_prime: f64) -> Result<f64> {
    if !(kappa0_prime > 0.0 && kappa0_prime < kappa0) {
        return Err(Error::param("kappa0_prime", "must lie in (0, kappa0)"));
    }
    let gap = kappa0 - kappa0_prime;
    let f = |lu: f64| c1_objective(lu.exp(), gap);
    let lo = (1e-12f64).ln();
    let hi = (200.0 / gap).ln();
    let n = 400;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let mut best = c1_objective(0.0, gap);
    let mut best_i = None;
    for (i, &g) in grid.iter().enumerate() {
        let v = f(g);
        if v > best {
            best = v;
            best_i = Some(i);
        }
    }
    if let Some(i) = best_i {
        let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(n)]);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..200 {
            if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
                break;
            }
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d);
            }
        }
        best = best.max(fc).max(fd);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianQuadSpec {
    pub order: usize,
    pub panels: usize,
    /// Relative tail level that fixes the truncation radius.
    pub tail_tol: f64,
}

impl Default for GaussianQuadSpec {
    fn default() -> Self {
        Self {
            order: 20,
            panels: 8,
            tail_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReproducingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
}

/// Checks int (t-s)^{-d/2} e^{-k|x-y|^2/(t-s)} (s-tau)^{-d/2} e^{-k|y-xi|^2/(s-tau)} dy
/// = C2 (t-tau)^{-d/2} e^{-k|x-xi|^2/(t-tau)} with C2 = (pi/k)^{d/2}.
#[allow(clippy::too_many_arguments)]
pub fn reproducing_identity_check(
    kappa0_prime: f64,
    d: usize,
    s: f64,
    tau: f64,
    t: f64,
    x: &[f64],
    xi: &[f64],
    quad: &GaussianQuadSpec,
) -> Result<ReproducingReport> {
    if !(tau < s && s < t) {
        return Err(Error::TimeOrder(format!("need tau < s < t, got {tau}, {s}, {t}")));
    }
    if x.len() != d || xi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len().min(xi.len()),
        });
    }
    if quad.order < 2 {
        return Err(Error::QuadratureOrder {
            order: quad.order,
            min: 2,
        });
    }
    let k = kappa0_prime;
    let (a, b) = (t - s, s - tau);
    // the integrand is a Gaussian in y centered at c with variance scale
    let center: Vec<f64> = (0..d).map(|i| (x[i] * b + xi[i] * a) / (a + b)).collect();
    let scale = (a * b / (a + b)).sqrt();
    let half = ((1.0 / quad.tail_tol).ln() / k).sqrt() * scale;
    let rule = GaussRule::new(quad.order)?;
    let axes: Vec<Vec<(f64, f64)>> = center
        .iter()
        .map(|c| rule.composite(c - half, c + half, quad.panels))
        .collect();
    let fa = a.powf(-(d as f64) / 2.0);
    let fb = b.powf(-(d as f64) / 2.0);
    let mut lhs = 0.0;
    for_each_tensor(&axes, |y, w| {
        let dx = crate::linalg::distance(x, y);
        let dxi = crate::linalg::distance(y, xi);
        lhs += w * fa * (-k * dx * dx / a).exp() * fb * (-k * dxi * dxi / b).exp();
    });
    let c2 = (PI / k).powf(d as f64 / 2.0);
    let r = crate::linalg::distance(x, xi);
    let rhs = c2 * (t - tau).powf(-(d as f64) / 2.0) * (-k * r * r / (t - tau)).exp();
    Ok(ReproducingReport {
        lhs,
        rhs,
        abs_err: (lhs - rhs).abs(),
    })
}
