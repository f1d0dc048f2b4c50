//! Levi parametrix: Gamma = Phi^xi + sum_k w_k on a short horizon, and
//! global extension by semigroup composition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{dini_integral, CoefficientField, ModulusKind, ModulusProfile, TimeCurve};
use crate::error::{Error, Result};
use crate::frozen_kernel::{BoundConstants, FrozenKernel, Gaussian, MIN_TIME_GAP};
use crate::grid::{GridSpec, KernelGrid, Method, SpaceTime};
use crate::linalg::{Point, SymMatrix};
use crate::quadrature::GaussRule;

/// Resolution of the per-target similarity table that stores w_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableSpec {
    /// Slices in v = sqrt((t - s) / H).
    pub time_slices: usize,
    /// Nodes per axis in z = (y - x) / sqrt(t - s) on [-M, M].
    pub z_nodes: usize,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            time_slices: 24,
            z_nodes: 49,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParametrixConfig {
    pub eps0: f64,
    /// Horizon: pairs must satisfy t - tau <= delta0^2. Infinite means
    /// unconstrained.
    pub delta0: f64,
    pub k_max: usize,
    pub series_tol: f64,
    pub time_nodes: usize,
    pub space_nodes_per_dim: usize,
    pub space_panels: usize,
    pub truncation_multiplier: f64,
    /// Allowed excess of the measured term ratio over eps0.
    pub witness_slack: f64,
    pub table: TableSpec,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        Self {
            eps0: 0.5,
            delta0: f64::INFINITY,
            k_max: 12,
            series_tol: 1e-8,
            time_nodes: 24,
            space_nodes_per_dim: 24,
            space_panels: 1,
            truncation_multiplier: 8.0,
            witness_slack: 0.1,
            table: TableSpec::default(),
        }
    }
}

impl ParametrixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::config("eps0", "must lie in (0, 1)"));
        }
        if !(self.delta0 > 0.0) {
            return Err(Error::config("delta0", "must be positive"));
        }
        if self.k_max < 1 {
            return Err(Error::config("k_max", "must be at least 1"));
        }
        if !(self.series_tol > 0.0) {
            return Err(Error::config("series_tol", "must be positive"));
        }
        for (key, n) in [
            ("time_nodes", self.time_nodes),
            ("space_nodes_per_dim", self.space_nodes_per_dim),
        ] {
            if n < 2 {
                return Err(Error::QuadratureOrder { order: n, min: 2 })
                    .map_err(|e| Error::config(key, e.to_string()));
            }
        }
        if self.table.time_slices < 2 || self.table.z_nodes < 3 {
            return Err(Error::config("table", "need at least 2 time slices and 3 z nodes"));
        }
        if !(self.truncation_multiplier > 0.0) {
            return Err(Error::config("truncation_multiplier", "must be positive"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.delta0 * self.delta0
    }
}

/// Covariance 2 int_s^t A(r, at) dr of the kernel frozen at `at`.
pub fn frozen_covariance(field: &CoefficientField, at: &[f64], s: f64, t: f64) -> SymMatrix {
    if field.is_t_independent() {
        field.eval_raw(s, at).scale(2.0 * (t - s))
    } else {
        TimeCurve::exact_slice(field, at).integral(s, t).scale(2.0)
    }
}

fn frozen_gaussian(field: &CoefficientField, at: &[f64], s: f64, t: f64) -> Result<Gaussian> {
    Gaussian::new(frozen_covariance(field, at, s, t))
}

/// Phi^{at}(t, x, s, y) evaluated at displacement z = x - y.
#[inline]
fn frozen_density(field: &CoefficientField, at: &[f64], s: f64, t: f64, z: &[f64]) -> Result<f64> {
    if field.dim() == 1 && field.is_t_independent() {
        let var = 2.0 * (t - s) * field.eval_raw(s, at).get(0, 0);
        if !(var > 0.0) {
            return Err(Error::param("covariance", "not positive definite"));
        }
        return Ok((-0.5 * z[0] * z[0] / var).exp() / (std::f64::consts::TAU * var).sqrt());
    }
    Ok(frozen_gaussian(field, at, s, t)?.density(z))
}

/// (a(s,y) - a(s,xi)) : D^2 Phi^xi(s, y, tau, xi).
pub fn levi_kernel(field: &CoefficientField, s: f64, y: &[f64], tau: f64, xi: &[f64]) -> Result<f64> {
    if s <= tau {
        return Err(Error::TimeOrder(format!("levi kernel needs s > tau, got s = {s}, tau = {tau}")));
    }
    let d = field.dim();
    if y.len() != d || xi.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len().min(xi.len()),
        });
    }
    if field.is_x_independent() {
        return Ok(0.0);
    }
    let g = frozen_gaussian(field, xi, tau, s)?;
    let diff = field.eval_raw(s, y).sub(&field.eval_raw(s, xi));
    let z: Point = (0..d).map(|i| y[i] - xi[i]).collect();
    Ok(g.hessian_contract(&z, &diff))
}

/// w_k(t, x, ., .) tabulated as W = (t - s)^{d/2} w_k on s = t - H v^2,
/// y = x + sqrt(t - s) z, with v uniform in [0, 1] and z uniform in [-M, M].
#[derive(Clone, Debug)]
pub struct TermTable {
    t: f64,
    x: Point,
    horizon: f64,
    m: f64,
    n_v: usize,
    n_z: usize,
    data: Vec<f64>,
}

impl TermTable {
    fn zeros(t: f64, x: &[f64], horizon: f64, m: f64, spec: &TableSpec) -> Self {
        let d = x.len();
        let n_v = spec.time_slices;
        let n_z = spec.z_nodes;
        Self {
            t,
            x: Point::from_slice(x),
            horizon,
            m,
            n_v,
            n_z,
            data: vec![0.0; (n_v + 1) * n_z.pow(d as u32)],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.x.len()
    }

    fn per_slice(&self) -> usize {
        self.n_z.pow(self.dim() as u32)
    }

    fn z_node(&self, i: usize) -> f64 {
        -self.m + 2.0 * self.m * i as f64 / (self.n_z - 1) as f64
    }

    /// (sigma, eta) of node (slice j, flat z index).
    fn node(&self, j: usize, flat: usize) -> (f64, Point) {
        let v = j as f64 / self.n_v as f64;
        let sigma = self.t - self.horizon * v * v;
        let scale = (self.t - sigma).sqrt();
        let d = self.dim();
        let mut eta = Point::from_elem(0.0, d);
        let mut rem = flat;
        for k in (0..d).rev() {
            eta[k] = self.x[k] + scale * self.z_node(rem % self.n_z);
            rem /= self.n_z;
        }
        (sigma, eta)
    }

    /// Weighted sup norm max |W|.
    pub fn norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn covers(&self, sigma: f64) -> bool {
        self.t - sigma <= self.horizon * (1.0 + 1e-9)
    }

    /// Interpolated W at (s, y); zero outside the z window or for s >= t.
    pub fn weighted(&self, s: f64, y: &[f64]) -> f64 {
        let gap = self.t - s;
        if !(gap > 0.0) {
            return 0.0;
        }
        let d = self.dim();
        let fv = ((gap / self.horizon).sqrt() * self.n_v as f64).min(self.n_v as f64);
        let j0 = (fv.floor() as usize).min(self.n_v - 1);
        let wv = fv - j0 as f64;
        let scale = gap.sqrt();
        let hz = 2.0 * self.m / (self.n_z - 1) as f64;
        let mut lo: smallvec::SmallVec<[usize; 3]> = smallvec::smallvec![0; d];
        let mut fr: smallvec::SmallVec<[f64; 3]> = smallvec::smallvec![0.0; d];
        for k in 0..d {
            let z = (y[k] - self.x[k]) / scale;
            if !(z >= -self.m && z <= self.m) {
                return 0.0;
            }
            let f = ((z + self.m) / hz).min((self.n_z - 1) as f64);
            let i0 = (f.floor() as usize).min(self.n_z - 2);
            lo[k] = i0;
            fr[k] = f - i0 as f64;
        }
        let per = self.per_slice();
        let mut acc = 0.0;
        for (jj, wj) in [(j0, 1.0 - wv), (j0 + 1, wv)] {
            if wj == 0.0 {
                continue;
            }
            for corner in 0..(1usize << d) {
                let mut w = wj;
                let mut flat = 0;
                for k in 0..d {
                    let up = corner >> k & 1;
                    w *= if up == 1 { fr[k] } else { 1.0 - fr[k] };
                    flat = flat * self.n_z + lo[k] + up;
                }
                if w != 0.0 {
                    acc += w * self.data[jj * per + flat];
                }
            }
        }
        acc
    }

    /// Unweighted w_k(t, x, s, y).
    pub fn value(&self, s: f64, y: &[f64]) -> f64 {
        let gap = self.t - s;
        if !(gap > 0.0) {
            return 0.0;
        }
        self.weighted(s, y) / gap.powf(self.dim() as f64 / 2.0)
    }
}

/// Quadrature machinery shared by w0, the iteration and the short-time build.
struct Levi<'a> {
    field: &'a CoefficientField,
    cfg: &'a ParametrixConfig,
    time_rule: GaussRule,
    space_rule: GaussRule,
}

impl<'a> Levi<'a> {
    fn new(field: &'a CoefficientField, cfg: &'a ParametrixConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            field,
            cfg,
            time_rule: GaussRule::new(cfg.time_nodes)?,
            space_rule: GaussRule::new(cfg.space_nodes_per_dim)?,
        })
    }

    /// int_sigma^t int f(s, y) K(s, y, sigma, eta) dy ds with s = sigma + (t - sigma) u^2;
    /// space box = intersection of the Gaussian boxes around x and eta.
    fn integrate(
        &self,
        t: f64,
        x: &[f64],
        sigma: f64,
        eta: &[f64],
        f: &dyn Fn(f64, &[f64]) -> Result<f64>,
    ) -> Result<f64> {
        let d = self.field.dim();
        let span = t - sigma;
        if !(span > 0.0) {
            return Ok(0.0);
        }
        let m = self.cfg.truncation_multiplier;
        let mut total = 0.0;
        let mut y = Point::from_elem(0.0, d);
        let mut z = Point::from_elem(0.0, d);
        let mut axes: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];
        for (u, wu) in self.time_rule.on(0.0, 1.0) {
            let s = sigma + span * u * u;
            let jac = 2.0 * span * u * wu;
            let g = frozen_gaussian(self.field, eta, sigma, s)?;
            let a_eta = self.field.eval_raw(s, eta);
            let (rx, re) = (m * (t - s).sqrt(), m * (s - sigma).sqrt());
            let mut empty = false;
            for k in 0..d {
                let lo = (x[k] - rx).max(eta[k] - re);
                let hi = (x[k] + rx).min(eta[k] + re);
                if lo >= hi {
                    empty = true;
                    break;
                }
                axes[k] = self.space_rule.composite(lo, hi, self.cfg.space_panels);
            }
            if empty {
                continue;
            }
            let mut acc = 0.0;
            let mut err = None;
            crate::quadrature::for_each_tensor(&axes, |p, w| {
                if err.is_some() {
                    return;
                }
                for k in 0..d {
                    y[k] = p[k];
                    z[k] = p[k] - eta[k];
                }
                let diff = self.field.eval_raw(s, &y).sub(&a_eta);
                if diff.max_abs() == 0.0 {
                    return;
                }
                match f(s, &y) {
                    Ok(left) if left != 0.0 => acc += w * left * g.hessian_contract(&z, &diff),
                    Ok(_) => {}
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            total += jac * acc;
        }
        Ok(total)
    }

    fn w0(&self, t: f64, x: &[f64], sigma: f64, eta: &[f64]) -> Result<f64> {
        let d = x.len();
        let field = self.field;
        let left = move |s: f64, y: &[f64]| -> Result<f64> {
            let z: Point = (0..d).map(|i| x[i] - y[i]).collect();
            frozen_density(field, y, s, t, &z)
        };
        self.integrate(t, x, sigma, eta, &left)
    }

    fn next(&self, prev: &TermTable, sigma: f64, eta: &[f64]) -> Result<f64> {
        if !prev.covers(sigma) {
            return Err(Error::GridCoverage(format!(
                "table horizon {:e} does not reach t - sigma = {:e}",
                prev.horizon,
                prev.t - sigma
            )));
        }
        let left = |s: f64, y: &[f64]| -> Result<f64> { Ok(prev.value(s, y)) };
        self.integrate(prev.t, &prev.x, sigma, eta, &left)
    }

    /// Tabulates w_0 (prev = None) or w_{k+1} from w_k.
    fn table(&self, t: f64, x: &[f64], horizon: f64, prev: Option<&TermTable>) -> Result<TermTable> {
        let mut table = TermTable::zeros(t, x, horizon, self.cfg.truncation_multiplier, &self.cfg.table);
        let per = table.per_slice();
        let d = x.len() as f64;
        let values: Vec<Result<f64>> = (per..table.data.len())
            .into_par_iter()
            .map(|k| {
                let (sigma, eta) = table.node(k / per, k % per);
                let w = match prev {
                    None => self.w0(t, x, sigma, &eta)?,
                    Some(p) => self.next(p, sigma, &eta)?,
                };
                Ok(w * (t - sigma).powf(d / 2.0))
            })
            .collect();
        for (slot, v) in table.data[per..].iter_mut().zip(values) {
            *slot = v?;
        }
        Ok(table)
    }
}

fn check_horizon(cfg: &ParametrixConfig, span: f64) -> Result<()> {
    if span > cfg.horizon() * (1.0 + 1e-12) {
        return Err(Error::HorizonExceeded {
            span,
            limit: cfg.horizon(),
        });
    }
    if span > 0.0 && span < MIN_TIME_GAP {
        return Err(Error::DegenerateTimeGap {
            gap: span,
            threshold: MIN_TIME_GAP,
        });
    }
    Ok(())
}

/// First Levi term w_0(t, x, tau, xi).
pub fn w0(field: &CoefficientField, t: f64, x: &[f64], tau: f64, xi: &[f64], cfg: &ParametrixConfig) -> Result<f64> {
    let levi = Levi::new(field, cfg)?;
    let span = t - tau;
    if !(span > 0.0) {
        return Err(Error::TimeOrder(format!("w0 needs t > tau, got t = {t}, tau = {tau}")));
    }
    check_horizon(cfg, span)?;
    if field.is_x_independent() {
        return Ok(0.0);
    }
    levi.w0(t, x, tau, xi)
}

/// Table of w_0(t, x, ., .) over sources within `horizon` of t.
pub fn w0_table(field: &CoefficientField, t: f64, x: &[f64], horizon: f64, cfg: &ParametrixConfig) -> Result<TermTable> {
    let levi = Levi::new(field, cfg)?;
    check_horizon(cfg, horizon)?;
    if field.is_x_independent() {
        return Ok(TermTable::zeros(t, x, horizon, cfg.truncation_multiplier, &cfg.table));
    }
    levi.table(t, x, horizon, None)
}

/// w_{k+1}(t, x, tau, xi) from the tabulated w_k(t, x, ., .).
pub fn iterate(field: &CoefficientField, prev: &TermTable, tau: f64, xi: &[f64], cfg: &ParametrixConfig) -> Result<f64> {
    let levi = Levi::new(field, cfg)?;
    if field.is_x_independent() {
        return Ok(0.0);
    }
    levi.next(prev, tau, xi)
}

/// Next table w_{k+1}(t, x, ., .) from w_k.
pub fn iterate_table(field: &CoefficientField, prev: &TermTable, cfg: &ParametrixConfig) -> Result<TermTable> {
    let levi = Levi::new(field, cfg)?;
    if field.is_x_independent() {
        return Ok(TermTable::zeros(prev.t, &prev.x, prev.horizon, prev.m, &cfg.table));
    }
    levi.table(prev.t, &prev.x, prev.horizon, Some(prev))
}

/// Per-target series diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TermRecord {
    pub target: usize,
    /// Weighted sup norms of w_0, w_1, ... over the target's table.
    pub norms: Vec<f64>,
    /// norms[k + 1] / norms[k].
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ShortTimeKernel {
    pub grid: KernelGrid,
    pub terms: Vec<TermRecord>,
}

impl ShortTimeKernel {
    pub fn max_ratio(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|r| r.ratios.iter().copied())
            .fold(0.0, f64::max)
    }

    pub fn max_levels(&self) -> usize {
        self.terms.iter().map(|r| r.norms.len()).max().unwrap_or(0)
    }

    /// Key-value listing of per-level maxima of the norms and ratios.
    pub fn terms_report(&self) -> String {
        let levels = self.max_levels();
        let mut out = format!("targets = {}\nlevels = {}\nmax_ratio = {:.6e}\n", self.terms.len(), levels, self.max_ratio());
        for k in 0..levels {
            let norm = self.terms.iter().filter_map(|r| r.norms.get(k)).fold(0.0_f64, |a, b| a.max(*b));
            out.push_str(&format!("norm_{k} = {norm:.6e}\n"));
            if k > 0 {
                let ratio = self
                    .terms
                    .iter()
                    .filter_map(|r| r.ratios.get(k - 1))
                    .fold(0.0_f64, |a, b| a.max(*b));
                out.push_str(&format!("ratio_{k} = {ratio:.6e}\n"));
            }
        }
        out
    }
}

/// Gamma = Phi^xi + sum_k w_k on every (target, source) pair with
/// 0 < t - tau <= delta0^2; pairs with t <= tau are zero.
pub fn build_short_time(
    field: &CoefficientField,
    targets: &[SpaceTime],
    sources: &[SpaceTime],
    cfg: &ParametrixConfig,
) -> Result<ShortTimeKernel> {
    let levi = Levi::new(field, cfg)?;
    let d = field.dim();
    let mut grid = KernelGrid::zeros(d, targets.to_vec(), sources.to_vec(), Method::Parametrix)?;
    for tg in targets {
        for src in sources {
            if tg.t > src.t {
                check_horizon(cfg, tg.t - src.t)?;
            }
        }
    }
    let x_indep = field.is_x_independent();
    let limit = cfg.eps0 + cfg.witness_slack;
    let rows: Vec<Result<(Vec<f64>, TermRecord)>> = targets
        .iter()
        .enumerate()
        .map(|(i, tg)| {
            let horizon = sources
                .iter()
                .filter(|s| s.t < tg.t)
                .map(|s| tg.t - s.t)
                .fold(0.0, f64::max);
            let mut row = vec![0.0; sources.len()];
            for (j, src) in sources.iter().enumerate() {
                if tg.t > src.t {
                    let z: Point = (0..d).map(|k| tg.x[k] - src.x[k]).collect();
                    row[j] = frozen_density(field, &src.x, src.t, tg.t, &z)?;
                }
            }
            let mut record = TermRecord {
                target: i,
                norms: Vec::new(),
                ratios: Vec::new(),
            };
            if x_indep || horizon == 0.0 {
                record.norms.push(0.0);
                return Ok((row, record));
            }
            // w_0 pointwise and tabulated
            for (j, src) in sources.iter().enumerate() {
                if tg.t > src.t {
                    row[j] += levi.w0(tg.t, &tg.x, src.t, &src.x)?;
                }
            }
            let mut table = levi.table(tg.t, &tg.x, horizon, None)?;
            record.norms.push(table.norm());
            let mut k = 0;
            while record.norms[k] > cfg.series_tol && k + 1 < cfg.k_max {
                for (j, src) in sources.iter().enumerate() {
                    if tg.t > src.t {
                        row[j] += levi.next(&table, src.t, &src.x)?;
                    }
                }
                let next = levi.table(tg.t, &tg.x, horizon, Some(&table))?;
                let n = next.norm();
                let ratio = n / record.norms[k];
                record.norms.push(n);
                record.ratios.push(ratio);
                if ratio > limit {
                    return Err(Error::ContractionWitness {
                        level: k + 1,
                        ratio,
                        limit,
                        horizon,
                        time_nodes: cfg.time_nodes,
                        space_nodes: cfg.space_nodes_per_dim,
                    });
                }
                table = next;
                k += 1;
            }
            Ok((row, record))
        })
        .collect();
    let mut terms = Vec::with_capacity(targets.len());
    for (i, r) in rows.into_iter().enumerate() {
        let (row, rec) = r?;
        for (j, v) in row.into_iter().enumerate() {
            grid.set(i, j, v);
        }
        terms.push(rec);
    }
    if !grid.is_finite() {
        return Err(Error::param("kernel", "non-finite values produced"));
    }
    grid.meta.insert("max_ratio".into(), format!("{:.6e}", terms.iter().flat_map(|r| r.ratios.iter().copied()).fold(0.0, f64::max)));
    grid.meta.insert("delta0".into(), format!("{:e}", cfg.delta0));
    Ok(ShortTimeKernel { grid, terms })
}

/// Phi^xi(t, x, tau, xi) on every pair (zero for t <= tau).
pub fn frozen_grid(field: &CoefficientField, targets: &[SpaceTime], sources: &[SpaceTime]) -> Result<KernelGrid> {
    let d = field.dim();
    KernelGrid::from_fn(d, targets.to_vec(), sources.to_vec(), Method::Frozen, |tg, src| {
        let z: Point = (0..d).map(|k| tg.x[k] - src.x[k]).collect();
        frozen_density(field, &src.x, src.t, tg.t, &z)
    })
}

/// Kernel of a single time curve on every pair (zero for t <= tau).
pub fn curve_grid(kernel: &FrozenKernel, targets: &[SpaceTime], sources: &[SpaceTime]) -> Result<KernelGrid> {
    KernelGrid::from_fn(kernel.dim(), targets.to_vec(), sources.to_vec(), Method::Frozen, |tg, src| {
        kernel.phi(tg.t, &tg.x, src.t, &src.x)
    })
}

/// Largest dyadic delta0 = r_max 2^-k with 2 C0' C1 C2 int_0^delta0 rho(s)/s ds <= eps0.
/// A vanishing modulus gives +infinity.
pub fn delta0(profile: &ModulusProfile, constants: &BoundConstants) -> Result<f64> {
    if profile.kind != ModulusKind::UniformContinuity {
        return Err(Error::param("profile", "delta0 needs a uniform continuity modulus"));
    }
    let rmax = profile.max_radius().ok_or_else(|| Error::Empty("modulus profile".into()))?;
    if profile.values.iter().all(|v| *v == 0.0) {
        return Ok(f64::INFINITY);
    }
    let whole = dini_integral(profile, rmax)?;
    if whole.diverged {
        return Err(Error::NonDini {
            diagnostic: whole.diagnostic,
        });
    }
    let factor = match constants.horizon_factor() {
        Some(f) => f,
        None => constants.clone().with_c1()?.horizon_factor().expect("c1 set"),
    };
    let eps0 = constants.eps0;
    let ok = |k: i32| -> Result<bool> {
        let r = rmax * 0.5f64.powi(k);
        Ok(factor * dini_integral(profile, r)?.value <= eps0)
    };
    if ok(0)? {
        return Ok(rmax);
    }
    // ok(k) is monotone in k; bisection for the smallest admissible k
    let (mut bad, mut good) = (0i32, 1i32);
    while !ok(good)? {
        bad = good;
        good *= 2;
        if good > 1000 {
            return Err(Error::NonDini {
                diagnostic: "no admissible horizon above 2^-1000".into(),
            });
        }
    }
    while good - bad > 1 {
        let mid = (good + bad) / 2;
        if ok(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(rmax * 0.5f64.powi(good))
}

#[derive(Clone, Debug)]
pub struct ComposedKernel {
    pub grid: KernelGrid,
    /// Max |int Gamma dxi - 1| over the middle half of the targets, per level.
    pub mass_drift: Vec<f64>,
}

/// Composes step kernels `steps[0]` (earliest) .. `steps[m-1]` by trapezoid
/// quadrature on the shared spatial grid. Sources of step j+1 must be the
/// targets of step j.
pub fn compose_steps(steps: &[KernelGrid], composition: &GridSpec, leakage_limit: f64) -> Result<ComposedKernel> {
    let first = steps.first().ok_or_else(|| Error::Empty("no step kernels".into()))?;
    if steps.len() == 1 {
        return Ok(ComposedKernel {
            grid: first.clone(),
            mass_drift: Vec::new(),
        });
    }
    let weights = composition.trapezoid_weights();
    let npts = weights.len();
    for w in steps.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.sources().len() != a.targets().len() || b.sources().len() != npts {
            return Err(Error::GridMismatch("step kernels do not share the composition grid".into()));
        }
        if b.sources().iter().zip(a.targets()).any(|(p, q)| (p.t - q.t).abs() > 1e-12 || p.x != q.x) {
            return Err(Error::GridMismatch("intermediate points differ between steps".into()));
        }
    }
    // acc[i][j]: current composed kernel from the earliest sources to step targets
    let ns = first.sources().len();
    let mut acc: Vec<f64> = first.values().to_vec();
    let mut mass_drift = Vec::new();
    for step in &steps[1..] {
        let nt = step.targets().len();
        let mut out = vec![0.0; nt * ns];
        out.par_chunks_mut(ns).enumerate().for_each(|(i, row)| {
            let srow = step.row(i);
            for (l, &g) in srow.iter().enumerate() {
                let c = g * weights[l];
                if c == 0.0 {
                    continue;
                }
                let arow = &acc[l * ns..(l + 1) * ns];
                for (o, a) in row.iter_mut().zip(arow) {
                    *o += c * a;
                }
            }
        });
        acc = out;
        // mass over the source variable for middle-half targets
        let src_w = source_weights(first, composition, &weights);
        let drift = (0..nt)
            .filter(|&i| middle_half(&step.targets()[i].x, composition))
            .map(|i| {
                let m: f64 = acc[i * ns..(i + 1) * ns].iter().zip(&src_w).map(|(v, w)| v * w).sum();
                (m - 1.0).abs()
            })
            .fold(0.0_f64, f64::max);
        mass_drift.push(drift);
    }
    let last = steps.last().expect("nonempty");
    let mut grid = KernelGrid::zeros(first.dim(), last.targets().to_vec(), first.sources().to_vec(), Method::Composed)?;
    grid.values_mut().copy_from_slice(&acc);
    grid.enforce_causality();
    if let Some(src_w) = Some(source_weights(first, composition, &weights)) {
        if src_w.iter().all(|w| *w > 0.0) {
            let worst = mass_drift.iter().copied().fold(0.0, f64::max);
            if worst > leakage_limit {
                return Err(Error::MassLeakage {
                    leakage: worst,
                    limit: leakage_limit,
                });
            }
        }
    }
    grid.meta.insert("levels".into(), steps.len().to_string());
    Ok(ComposedKernel { grid, mass_drift })
}

fn source_weights(first: &KernelGrid, composition: &GridSpec, weights: &[f64]) -> Vec<f64> {
    if first.sources().len() == weights.len() {
        weights.to_vec()
    } else {
        // sources off the composition grid carry no quadrature weight
        let _ = composition;
        vec![0.0; first.sources().len()]
    }
}

fn middle_half(x: &[f64], composition: &GridSpec) -> bool {
    x.iter()
        .zip(&composition.center)
        .all(|(v, c)| (v - c).abs() <= 0.5 * composition.half_width)
}

/// m-fold composition of a time-homogeneous step kernel whose targets and
/// sources are the composition grid at times t0 + step and t0.
pub fn extend_semigroup(short: &KernelGrid, total_span: f64, step: f64, composition: &GridSpec) -> Result<ComposedKernel> {
    if !(step > 0.0) {
        return Err(Error::param("step", "must be positive"));
    }
    let m_f = total_span / step;
    let m = m_f.round();
    if m < 1.0 || (m - m_f).abs() > 1e-9 * m_f.max(1.0) {
        return Err(Error::param("total_span", "must be an integer multiple of step"));
    }
    let m = m as usize;
    if m == 1 {
        return Ok(ComposedKernel {
            grid: short.clone(),
            mass_drift: Vec::new(),
        });
    }
    let pts = composition.points();
    let t0 = short.sources().first().map(|p| p.t).ok_or_else(|| Error::Empty("short kernel has no sources".into()))?;
    if short.sources().len() != pts.len() || short.targets().len() != pts.len() {
        return Err(Error::GridMismatch("short kernel must live on the composition grid".into()));
    }
    if short.targets().iter().any(|p| (p.t - t0 - step).abs() > 1e-9 * step.max(1.0)) {
        return Err(Error::GridMismatch("short kernel targets must sit one step after its sources".into()));
    }
    let steps: Vec<KernelGrid> = (0..m)
        .map(|k| {
            let ta = t0 + step * k as f64;
            let tb = ta + step;
            let mut g = KernelGrid::zeros(
                short.dim(),
                pts.iter().map(|x| SpaceTime { t: tb, x: x.clone() }).collect(),
                pts.iter().map(|x| SpaceTime { t: ta, x: x.clone() }).collect(),
                short.method,
            )?;
            g.values_mut().copy_from_slice(short.values());
            Ok(g)
        })
        .collect::<Result<_>>()?;
    compose_steps(&steps, composition, 1e-2)
}
