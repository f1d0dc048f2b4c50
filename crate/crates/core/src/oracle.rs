//! Finite-difference approximate fundamental solutions, adjoint solves and
//! global consistency checks (mass, Chapman-Kolmogorov, PDE residual).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{KernelGrid, Lattice, Method, SpaceTime};
use crate::linalg::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitTheta,
}

/// How the pole is mollified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceForm {
    /// Normalized indicator of the backward cylinder (s - eps^2, s) x B_eps(y).
    Cylinder,
    /// Normalized indicator of B_eps(y) as initial data at time s.
    InitialData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdGridSpec {
    pub half_width: f64,
    pub nodes: usize,
    /// Largest time step; steps start at eps^2/4 and grow geometrically.
    pub dt: f64,
    pub growth: f64,
    pub scheme: Scheme,
    pub theta: f64,
    /// Box center; the pole when absent.
    pub center: Option<Vec<f64>>,
    pub source: SourceForm,
    pub solver_tol: f64,
}

impl Default for FdGridSpec {
    fn default() -> Self {
        Self {
            half_width: 6.0,
            nodes: 1201,
            dt: 5e-5,
            growth: 1.15,
            scheme: Scheme::ImplicitTheta,
            theta: 1.0,
            center: None,
            source: SourceForm::Cylinder,
            solver_tol: 1e-10,
        }
    }
}

impl FdGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 16 {
            return Err(Error::config("nodes", "need at least 16 nodes per axis"));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::config("half_width", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.growth >= 1.0) {
            return Err(Error::config("growth", "must be at least 1"));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::config("theta", "must lie in [1/2, 1]"));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::config("solver_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes - 1) as f64
    }
}

/// Uniform node box, first axis slowest.
#[derive(Clone, Debug)]
struct Mesh {
    d: usize,
    n: usize,
    h: f64,
    lo: Point,
}

impl Mesh {
    fn new(center: &[f64], spec: &FdGridSpec) -> Self {
        Self {
            d: center.len(),
            n: spec.nodes,
            h: spec.spacing(),
            lo: center.iter().map(|c| c - spec.half_width).collect(),
        }
    }

    fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    fn stride(&self, k: usize) -> usize {
        self.n.pow((self.d - 1 - k) as u32)
    }

    fn multi(&self, flat: usize) -> Point {
        let mut rem = flat;
        let mut out = Point::from_elem(0.0, self.d);
        for k in (0..self.d).rev() {
            out[k] = (rem % self.n) as f64;
            rem /= self.n;
        }
        out
    }

    fn coord(&self, flat: usize) -> Point {
        let m = self.multi(flat);
        (0..self.d).map(|k| self.lo[k] + self.h * m[k]).collect()
    }

    fn on_boundary(&self, flat: usize) -> bool {
        self.multi(flat)
            .iter()
            .any(|&i| i == 0.0 || i as usize == self.n - 1)
    }

    /// Multilinear interpolation; None outside the box.
    fn interpolate(&self, u: &[f64], x: &[f64]) -> Option<f64> {
        let d = self.d;
        let mut lo = [0usize; 2];
        let mut fr = [0.0f64; 2];
        for k in 0..d {
            let f = (x[k] - self.lo[k]) / self.h;
            if !(f >= -1e-9 && f <= (self.n - 1) as f64 + 1e-9) {
                return None;
            }
            let f = f.clamp(0.0, (self.n - 1) as f64);
            let i0 = (f.floor() as usize).min(self.n - 2);
            lo[k] = i0;
            fr[k] = f - i0 as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..d {
                let up = corner >> k & 1;
                w *= if up == 1 { fr[k] } else { 1.0 - fr[k] };
                flat += (lo[k] + up) * self.stride(k);
            }
            if w != 0.0 {
                acc += w * u[flat];
            }
        }
        Some(acc)
    }

    /// Discrete normalized indicator of B_eps(c); falls back to the
    /// multilinear hat at c when no node lies inside the ball.
    fn bump(&self, c: &[f64], eps: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        let cell = self.h.powi(self.d as i32);
        let mut count = 0usize;
        for (flat, slot) in v.iter_mut().enumerate() {
            let x = self.coord(flat);
            if crate::linalg::distance(&x, c) <= eps * (1.0 + 1e-12) {
                *slot = 1.0;
                count += 1;
            }
        }
        if count == 0 {
            let mut lo = [0usize; 2];
            let mut fr = [0.0f64; 2];
            for k in 0..self.d {
                let f = ((c[k] - self.lo[k]) / self.h).clamp(0.0, (self.n - 1) as f64);
                let i0 = (f.floor() as usize).min(self.n - 2);
                lo[k] = i0;
                fr[k] = f - i0 as f64;
            }
            for corner in 0..(1usize << self.d) {
                let mut w = 1.0;
                let mut flat = 0;
                for k in 0..self.d {
                    let up = corner >> k & 1;
                    w *= if up == 1 { fr[k] } else { 1.0 - fr[k] };
                    flat += (lo[k] + up) * self.stride(k);
                }
                v[flat] += w / cell;
            }
            return v;
        }
        let scale = 1.0 / (count as f64 * cell);
        v.iter_mut().for_each(|x| *x *= scale);
        v
    }

    fn mass(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.h.powi(self.d as i32)
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug)]
struct Csr {
    n: usize,
    rowptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.rowptr[i]..self.rowptr[i + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            *o = acc;
        }
    }

    fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.col {
            counts[c + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col = vec![0; self.col.len()];
        let mut val = vec![0.0; self.val.len()];
        for i in 0..self.n {
            for k in self.rowptr[i]..self.rowptr[i + 1] {
                let c = self.col[k];
                let slot = next[c];
                col[slot] = i;
                val[slot] = self.val[k];
                next[c] += 1;
            }
        }
        Csr {
            n: self.n,
            rowptr: counts,
            col,
            val,
        }
    }

    /// I + c * self.
    fn shifted(&self, c: f64) -> Csr {
        let mut out = self.clone();
        for i in 0..self.n {
            let mut found = false;
            for k in out.rowptr[i]..out.rowptr[i + 1] {
                out.val[k] *= c;
                if out.col[k] == i {
                    out.val[k] += 1.0;
                    found = true;
                }
            }
            debug_assert!(found, "diagonal entry stored for every row");
        }
        out
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.rowptr[i]..self.rowptr[i + 1])
                    .find(|&k| self.col[k] == i)
                    .map_or(0.0, |k| self.val[k])
            })
            .collect()
    }
}

/// Discrete a^ij D_ij with zero rows on the boundary.
fn assemble(field: &CoefficientField, t: f64, mesh: &Mesh) -> Csr {
    let d = mesh.d;
    let n = mesh.len();
    let h2 = mesh.h * mesh.h;
    let mut rowptr = Vec::with_capacity(n + 1);
    let mut col = Vec::with_capacity(n * (1 + 2 * d + if d > 1 { 4 } else { 0 }));
    let mut val = Vec::with_capacity(col.capacity());
    rowptr.push(0);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
    for i in 0..n {
        row.clear();
        row.push((i, 0.0));
        if !mesh.on_boundary(i) {
            let a = field.eval_raw(t, &mesh.coord(i));
            for k in 0..d {
                let akk = a.get(k, k) / h2;
                let s = mesh.stride(k);
                row[0].1 -= 2.0 * akk;
                row.push((i - s, akk));
                row.push((i + s, akk));
                for l in (k + 1)..d {
                    let c = 2.0 * a.get(k, l) / (4.0 * h2);
                    if c != 0.0 {
                        let r = mesh.stride(l);
                        row.push((i + s + r, c));
                        row.push((i + s - r, -c));
                        row.push((i - s + r, -c));
                        row.push((i - s - r, c));
                    }
                }
            }
        }
        row.sort_by_key(|e| e.0);
        for &(c, v) in &row {
            col.push(c);
            val.push(v);
        }
        rowptr.push(col.len());
    }
    Csr { n, rowptr, col, val }
}

fn thomas(m: &Csr, rhs: &[f64]) -> Vec<f64> {
    let n = m.n;
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        for k in m.rowptr[i]..m.rowptr[i + 1] {
            let j = m.col[k];
            if j + 1 == i {
                a[i] = m.val[k];
            } else if j == i {
                b[i] = m.val[k];
            } else if j == i + 1 {
                c[i] = m.val[k];
            }
        }
    }
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = rhs[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        dp[i] = (rhs[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Jacobi-preconditioned BiCGSTAB with relative residual tolerance `tol`.
fn bicgstab(m: &Csr, b: &[f64], x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = m.n;
    let dinv: Vec<f64> = m.diagonal().iter().map(|v| 1.0 / v).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.to_vec();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = vec![0.0; n];
    m.matvec(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let max_iter = 10 * n.max(100);
    let mut res = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::SolverDivergence {
                residual: res,
                iterations: it,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = dinv[i] * p[i];
        }
        m.matvec(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
            z[i] = dinv[i] * s[i];
        }
        m.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(&r, &r).sqrt() / bnorm;
    }
    if res <= tol {
        return Ok(x);
    }
    Err(Error::SolverDivergence {
        residual: res,
        iterations: max_iter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    /// Forward in time with the operator a^ij D_ij.
    Forward,
    /// Backward in time with the transposed (conservative) operator.
    Backward,
}

/// Output of one FD march.
#[derive(Clone, Debug)]
struct March {
    /// (physical time, state) at each requested stop.
    snapshots: Vec<(f64, Vec<f64>)>,
    mass_trace: Vec<(f64, f64)>,
    leakage: f64,
    steps: usize,
}

struct Solver<'a> {
    field: &'a CoefficientField,
    spec: &'a FdGridSpec,
    mesh: Mesh,
    cached: Option<Csr>,
}

impl<'a> Solver<'a> {
    fn new(field: &'a CoefficientField, spec: &'a FdGridSpec, center: &[f64]) -> Result<Self> {
        spec.validate()?;
        if center.len() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                got: center.len(),
            });
        }
        if field.dim() > 2 {
            return Err(Error::param("d", "finite-difference oracle supports d <= 2"));
        }
        let mesh = Mesh::new(center, spec);
        let cached = field.is_t_independent().then(|| assemble(field, 0.0, &mesh));
        Ok(Self {
            field,
            spec,
            mesh,
            cached,
        })
    }

    fn operator(&self, t: f64, dir: Direction) -> Csr {
        let l = match &self.cached {
            Some(l) => l.clone(),
            None => assemble(self.field, t, &self.mesh),
        };
        match dir {
            Direction::Forward => l,
            Direction::Backward => l.transpose(),
        }
    }

    fn solve(&self, m: &Csr, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        if self.mesh.d == 1 {
            Ok(thomas(m, rhs))
        } else {
            bicgstab(m, rhs, guess, self.spec.solver_tol)
        }
    }

    /// Marches from `start` (physical) in direction `dir` with the pole
    /// mollified at `pole` by `eps`; records the state at elapsed times
    /// `stops` (ascending, >= 0).
    fn march(&self, dir: Direction, start: f64, pole: &[f64], eps: f64, stops: &[f64]) -> Result<March> {
        let sign = if dir == Direction::Forward { 1.0 } else { -1.0 };
        let phys = |r: f64| start + sign * r;
        let bump = self.mesh.bump(pole, eps);
        let window = match self.spec.source {
            SourceForm::Cylinder => eps * eps,
            SourceForm::InitialData => 0.0,
        };
        let mut u = if window == 0.0 { bump.clone() } else { vec![0.0; bump.len()] };
        let first = eps * eps / 4.0;
        let theta = self.spec.theta;
        let mut snapshots = Vec::with_capacity(stops.len());
        let mut mass_trace = Vec::new();
        let mut r = 0.0;
        let mut dt = first.min(self.spec.dt);
        let mut steps = 0usize;
        let mut stop_iter = stops.iter().copied().peekable();
        let mut l_old = self.operator(phys(0.0), dir);
        let mut leak = 0.0_f64;
        let mut peak = 0.0_f64;
        while let Some(&next_stop) = stop_iter.peek() {
            if next_stop <= r + 1e-15 {
                snapshots.push((phys(next_stop), u.clone()));
                mass_trace.push((phys(next_stop), self.mesh.mass(&u)));
                stop_iter.next();
                continue;
            }
            let mut step = if r < window { dt.min(window - r) } else { dt };
            step = step.min(next_stop - r);
            let r_new = r + step;
            let l_new = if self.cached.is_some() { l_old.clone() } else { self.operator(phys(r_new), dir) };
            let mut rhs = vec![0.0; u.len()];
            if theta < 1.0 {
                l_old.matvec(&u, &mut rhs);
                rhs.iter_mut().zip(&u).for_each(|(x, ui)| *x = ui + (1.0 - theta) * step * *x);
            } else {
                rhs.copy_from_slice(&u);
            }
            let overlap = (r_new.min(window) - r.min(window)).max(0.0);
            if overlap > 0.0 {
                let c = overlap / window;
                rhs.iter_mut().zip(&bump).for_each(|(x, b)| *x += c * b);
            }
            for (i, x) in rhs.iter_mut().enumerate() {
                if self.mesh.on_boundary(i) {
                    *x = 0.0;
                }
            }
            let m = l_new.shifted(-theta * step);
            u = self.solve(&m, &rhs, &u)?;
            for (i, x) in u.iter().enumerate() {
                peak = peak.max(x.abs());
                if self.mesh.on_boundary(i) {
                    continue;
                }
                if self.next_to_boundary(i) {
                    leak = leak.max(x.abs());
                }
            }
            l_old = l_new;
            r = r_new;
            steps += 1;
            if r >= window {
                dt = (dt * self.spec.growth).min(self.spec.dt);
            }
        }
        Ok(March {
            snapshots,
            mass_trace,
            leakage: if peak > 0.0 { leak / peak } else { 0.0 },
            steps,
        })
    }

    fn next_to_boundary(&self, flat: usize) -> bool {
        self.mesh
            .multi(flat)
            .iter()
            .any(|&i| i as usize == 1 || i as usize + 2 == self.mesh.n)
    }

    fn check_margin(&self, pole: &[f64], horizon: f64) -> Result<()> {
        let margin = 4.0 * horizon.sqrt();
        let distance = (0..self.mesh.d)
            .map(|k| {
                let lo = self.mesh.lo[k];
                let hi = lo + self.mesh.h * (self.mesh.n - 1) as f64;
                (pole[k] - lo).min(hi - pole[k])
            })
            .fold(f64::INFINITY, f64::min);
        if distance < margin {
            return Err(Error::BoundaryMargin { distance, margin });
        }
        Ok(())
    }
}

fn check_eps(eps: f64, horizon: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    if !(eps * eps < horizon) {
        return Err(Error::param("eps", "eps^2 must be below the horizon"));
    }
    Ok(())
}

fn sorted_stops(times: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = times.filter(|r| *r >= 0.0).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    v
}

fn snapshot_at<'m>(march: &'m March, t: f64) -> Option<&'m [f64]> {
    march
        .snapshots
        .iter()
        .find(|(ts, _)| (ts - t).abs() <= 1e-12 * t.abs().max(1.0))
        .map(|(_, u)| u.as_slice())
}

/// Gamma_eps(., Y) at `targets`: the forward solve with the mollified pole
/// at Y = (s, y). Targets later than s + horizon are rejected.
pub fn gamma_eps(
    field: &CoefficientField,
    pole: &SpaceTime,
    eps: f64,
    spec: &FdGridSpec,
    horizon: f64,
    targets: &[SpaceTime],
) -> Result<KernelGrid> {
    check_eps(eps, horizon)?;
    let center = spec.center.clone().unwrap_or_else(|| pole.x.to_vec());
    let solver = Solver::new(field, spec, &center)?;
    solver.check_margin(&pole.x, horizon)?;
    let start = match spec.source {
        SourceForm::Cylinder => pole.t - eps * eps,
        SourceForm::InitialData => pole.t,
    };
    if let Some(late) = targets.iter().find(|p| p.t > pole.t + horizon * (1.0 + 1e-12)) {
        return Err(Error::HorizonExceeded {
            span: late.t - pole.t,
            limit: horizon,
        });
    }
    let stops = sorted_stops(targets.iter().map(|p| p.t - start));
    let march = solver.march(Direction::Forward, start, &pole.x, eps, &stops)?;
    let mut grid = KernelGrid::zeros(field.dim(), targets.to_vec(), vec![pole.clone()], Method::FdOracle)?;
    for (i, p) in targets.iter().enumerate() {
        if p.t < start {
            continue;
        }
        let u = snapshot_at(&march, p.t).expect("stop recorded");
        let v = solver
            .mesh
            .interpolate(u, &p.x)
            .ok_or_else(|| Error::GridCoverage(format!("target {:?} outside the solver box", p.x.as_slice())))?;
        grid.set(i, 0, v);
    }
    grid.enforce_causality();
    annotate(&mut grid, &march, eps, spec);
    Ok(grid)
}

fn annotate(grid: &mut KernelGrid, march: &March, eps: f64, spec: &FdGridSpec) {
    grid.meta.insert("eps".into(), format!("{eps:e}"));
    grid.meta.insert("h".into(), format!("{:e}", spec.spacing()));
    grid.meta.insert("theta".into(), format!("{}", spec.theta));
    grid.meta.insert("steps".into(), march.steps.to_string());
    grid.meta.insert("leakage".into(), format!("{:.6e}", march.leakage));
    if let Some((t, m)) = march.mass_trace.last() {
        grid.meta.insert("mass_final".into(), format!("{m:.12e}"));
        grid.meta.insert("mass_final_time".into(), format!("{t:e}"));
    }
}

/// Gamma(X; ., .) at `sources` from the adjoint terminal-value solve with the
/// mollified pole at X = (t, x): Gamma*(s, y, t, x) = Gamma(t, x, s, y).
pub fn adjoint_kernel(
    field: &CoefficientField,
    pole: &SpaceTime,
    eps: f64,
    spec: &FdGridSpec,
    horizon: f64,
    sources: &[SpaceTime],
) -> Result<KernelGrid> {
    check_eps(eps, horizon)?;
    let center = spec.center.clone().unwrap_or_else(|| pole.x.to_vec());
    let solver = Solver::new(field, spec, &center)?;
    solver.check_margin(&pole.x, horizon)?;
    let start = match spec.source {
        SourceForm::Cylinder => pole.t + eps * eps,
        SourceForm::InitialData => pole.t,
    };
    if let Some(early) = sources.iter().find(|p| p.t < pole.t - horizon * (1.0 + 1e-12)) {
        return Err(Error::HorizonExceeded {
            span: pole.t - early.t,
            limit: horizon,
        });
    }
    let stops = sorted_stops(sources.iter().map(|p| start - p.t));
    let march = solver.march(Direction::Backward, start, &pole.x, eps, &stops)?;
    let mut grid = KernelGrid::zeros(field.dim(), vec![pole.clone()], sources.to_vec(), Method::FdOracle)?;
    for (j, p) in sources.iter().enumerate() {
        if p.t > start {
            continue;
        }
        let u = snapshot_at(&march, p.t).expect("stop recorded");
        let v = solver
            .mesh
            .interpolate(u, &p.x)
            .ok_or_else(|| Error::GridCoverage(format!("source {:?} outside the solver box", p.x.as_slice())))?;
        grid.set(0, j, v);
    }
    grid.enforce_causality();
    annotate(&mut grid, &march, eps, spec);
    Ok(grid)
}

#[derive(Clone, Debug)]
pub struct SymmetryReport {
    /// (source Y, forward Gamma_eps(X, Y), adjoint Gamma*_eps(Y, X)).
    pub pairs: Vec<(SpaceTime, f64, f64)>,
    /// Max relative gap over pairs with value >= 1e-3 of the peak.
    pub max_gap: f64,
}

/// Forward solves from each source Y compared against one adjoint solve from X.
pub fn adjoint_solve_and_symmetry(
    field: &CoefficientField,
    x: &SpaceTime,
    eps: f64,
    spec: &FdGridSpec,
    sources: &[SpaceTime],
) -> Result<SymmetryReport> {
    let horizon = sources
        .iter()
        .map(|s| x.t - s.t)
        .fold(0.0_f64, f64::max);
    if !(horizon > 0.0) {
        return Err(Error::TimeOrder("sources must precede the target".into()));
    }
    let adjoint = adjoint_kernel(field, x, eps, spec, horizon, sources)?;
    let forward: Vec<Result<f64>> = sources
        .par_iter()
        .map(|y| {
            let fspec = FdGridSpec {
                center: Some(spec.center.clone().unwrap_or_else(|| x.x.to_vec())),
                ..spec.clone()
            };
            Ok(gamma_eps(field, y, eps, &fspec, horizon, std::slice::from_ref(x))?.get(0, 0))
        })
        .collect();
    let mut pairs = Vec::with_capacity(sources.len());
    for (j, (y, f)) in sources.iter().zip(forward).enumerate() {
        pairs.push((y.clone(), f?, adjoint.get(0, j)));
    }
    let peak = pairs.iter().map(|p| p.1.abs().max(p.2.abs())).fold(0.0, f64::max);
    let max_gap = pairs
        .iter()
        .filter(|p| p.1.abs() >= 1e-3 * peak)
        .map(|p| (p.1 - p.2).abs() / p.1.abs())
        .fold(0.0, f64::max);
    Ok(SymmetryReport { pairs, max_gap })
}

#[derive(Clone, Debug)]
pub struct MassEntry {
    pub target: SpaceTime,
    pub tau: f64,
    pub mass: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug)]
pub struct MassReport {
    pub entries: Vec<MassEntry>,
    pub max_deviation: f64,
}

/// int Gamma(t, x, tau, xi) dxi per target and source time, by the trapezoid
/// rule on the source lattice of each source time. `big_lambda` sizes the
/// Gaussian envelope used for the coverage estimate.
pub fn mass_check(kernel: &KernelGrid, big_lambda: f64) -> Result<MassReport> {
    let mut taus: Vec<f64> = kernel.sources().iter().map(|s| s.t).collect();
    taus.sort_by(|a, b| a.total_cmp(b));
    taus.dedup();
    let mut entries = Vec::new();
    for tau in taus {
        let idx: Vec<usize> = (0..kernel.sources().len()).filter(|&j| kernel.sources()[j].t == tau).collect();
        let pts: Vec<Point> = idx.iter().map(|&j| kernel.sources()[j].x.clone()).collect();
        let lattice = Lattice::detect(&pts)?;
        let weights = lattice.trapezoid_weights();
        for (i, tg) in kernel.targets().iter().enumerate() {
            if tg.t <= tau {
                continue;
            }
            let sd = (2.0 * big_lambda * (tg.t - tau)).sqrt();
            let mut coverage = 1.0;
            for (k, ax) in lattice.axes.iter().enumerate() {
                let (lo, hi) = (ax[0], ax[ax.len() - 1]);
                let z = |v: f64| 0.5 * (1.0 + erf((v - tg.x[k]) / (sd * std::f64::consts::SQRT_2)));
                coverage *= z(hi) - z(lo);
            }
            if coverage < 0.999 {
                return Err(Error::Coverage {
                    coverage,
                    required: 0.999,
                });
            }
            let mass: f64 = idx.iter().zip(&weights).map(|(&j, w)| w * kernel.get(i, j)).sum();
            entries.push(MassEntry {
                target: tg.clone(),
                tau,
                mass,
                coverage,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Empty("no target after a source time".into()));
    }
    let max_deviation = entries.iter().map(|e| (e.mass - 1.0).abs()).fold(0.0, f64::max);
    Ok(MassReport { entries, max_deviation })
}

#[derive(Clone, Debug)]
pub struct CkReport {
    pub max_defect: f64,
    pub compared: usize,
}

/// Chapman-Kolmogorov defect: a spans (tau_mid, t] with sources on a lattice
/// at tau_mid, b spans (s, tau_mid] with those lattice points as targets;
/// `direct` has a's targets and b's sources.
pub fn ck_check(a: &KernelGrid, b: &KernelGrid, direct: &KernelGrid, tau_mid: f64) -> Result<CkReport> {
    let tol = 1e-12 * tau_mid.abs().max(1.0);
    if a.sources().iter().any(|p| (p.t - tau_mid).abs() > tol) || b.targets().iter().any(|p| (p.t - tau_mid).abs() > tol) {
        return Err(Error::GridMismatch(format!("intermediate points are not all at tau_mid = {tau_mid}")));
    }
    let pts: Vec<Point> = a.sources().iter().map(|p| p.x.clone()).collect();
    let weights = Lattice::detect(&pts)?.trapezoid_weights();
    let link: Vec<usize> = a
        .sources()
        .iter()
        .map(|p| {
            b.find_target(p)
                .ok_or_else(|| Error::GridMismatch(format!("point {:?} missing from the second kernel", p.x.as_slice())))
        })
        .collect::<Result<_>>()?;
    let ti: Vec<usize> = a
        .targets()
        .iter()
        .map(|p| direct.find_target(p).ok_or_else(|| Error::GridMismatch("direct kernel lacks a target".into())))
        .collect::<Result<_>>()?;
    let sj: Vec<usize> = b
        .sources()
        .iter()
        .map(|p| direct.find_source(p).ok_or_else(|| Error::GridMismatch("direct kernel lacks a source".into())))
        .collect::<Result<_>>()?;
    let peak = direct.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut max_defect = 0.0_f64;
    let mut compared = 0;
    for (i, &di) in ti.iter().enumerate() {
        for (j, &dj) in sj.iter().enumerate() {
            let reference = direct.get(di, dj);
            if reference.abs() < 1e-3 * peak {
                continue;
            }
            let composed: f64 = (0..link.len()).map(|l| weights[l] * a.get(i, l) * b.get(link[l], j)).sum();
            max_defect = max_defect.max((composed - reference).abs() / reference.abs());
            compared += 1;
        }
    }
    if compared == 0 {
        return Err(Error::Empty("no pair above the comparison floor".into()));
    }
    Ok(CkReport { max_defect, compared })
}

#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// max |P Gamma| |X - Y|^{d+2} over admissible interior points.
    pub max_scaled: f64,
    pub argmax: Option<SpaceTime>,
    pub points: usize,
}

impl ResidualReport {
    pub fn flagged(&self, threshold: f64) -> bool {
        self.max_scaled > threshold
    }
}

/// Discrete P Gamma = d_t Gamma - a^ij D_ij Gamma by central differences on
/// a kernel whose targets form a (t, x) lattice, one source per column.
pub fn residual_check(kernel: &KernelGrid, field: &CoefficientField, exclusion_radius: f64) -> Result<ResidualReport> {
    let d = kernel.dim();
    let pts: Vec<Point> = kernel
        .targets()
        .iter()
        .map(|p| std::iter::once(p.t).chain(p.x.iter().copied()).collect())
        .collect();
    let lattice = Lattice::detect(&pts)?;
    if lattice.axes.iter().any(|a| a.len() < 5) {
        return Err(Error::Stencil("need at least 5 nodes per (t, x) axis".into()));
    }
    let dims: Vec<usize> = lattice.axes.iter().map(Vec::len).collect();
    let mut position = vec![usize::MAX; dims.iter().product()];
    let flat = |idx: &[usize]| idx.iter().zip(&dims).fold(0, |acc, (i, n)| acc * n + i);
    for (row, idx) in lattice.index.iter().enumerate() {
        position[flat(idx)] = row;
    }
    let steps: Vec<f64> = (0..=d).map(|k| lattice.spacing(k)).collect();
    let mut best = ResidualReport {
        max_scaled: 0.0,
        argmax: None,
        points: 0,
    };
    for (j, src) in kernel.sources().iter().enumerate() {
        for (row, idx) in lattice.index.iter().enumerate() {
            if idx.iter().zip(&dims).any(|(&i, &n)| i == 0 || i + 1 == n) {
                continue;
            }
            let p = &kernel.targets()[row];
            if p.t - steps[0] <= src.t {
                continue;
            }
            let dist = parabolic_gap(p, src);
            if dist < exclusion_radius {
                continue;
            }
            let val = |shift: &[(usize, isize)]| -> f64 {
                let mut m = idx.clone();
                for &(k, s) in shift {
                    m[k] = (m[k] as isize + s) as usize;
                }
                kernel.get(position[flat(&m)], j)
            };
            let dt = (val(&[(0, 1)]) - val(&[(0, -1)])) / (2.0 * steps[0]);
            let a = field.eval_raw(p.t, &p.x);
            let mut diffusion = 0.0;
            for k in 0..d {
                let h = steps[k + 1];
                let dkk = (val(&[(k + 1, 1)]) - 2.0 * val(&[]) + val(&[(k + 1, -1)])) / (h * h);
                diffusion += a.get(k, k) * dkk;
                for l in (k + 1)..d {
                    let g = steps[l + 1];
                    let dkl = (val(&[(k + 1, 1), (l + 1, 1)]) - val(&[(k + 1, 1), (l + 1, -1)]) - val(&[(k + 1, -1), (l + 1, 1)])
                        + val(&[(k + 1, -1), (l + 1, -1)]))
                        / (4.0 * h * g);
                    diffusion += 2.0 * a.get(k, l) * dkl;
                }
            }
            let scaled = (dt - diffusion).abs() * dist.powi(d as i32 + 2);
            best.points += 1;
            if scaled > best.max_scaled {
                best.max_scaled = scaled;
                best.argmax = Some(p.clone());
            }
        }
    }
    if best.points == 0 {
        return Err(Error::Stencil("no interior point outside the exclusion radius".into()));
    }
    Ok(best)
}

fn parabolic_gap(a: &SpaceTime, b: &SpaceTime) -> f64 {
    crate::linalg::distance(&a.x, &b.x).max((a.t - b.t).abs().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametrix::frozen_grid;

    fn heat(t: f64, x: f64) -> f64 {
        (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
    }

    #[test]
    fn heat_kernel_reproduced() {
        let c = CoefficientField::identity(1);
        let targets: Vec<SpaceTime> = [0.1, 0.3, 0.5]
            .iter()
            .flat_map(|&t| (-12..=12).map(move |i| SpaceTime::new(t, &[0.25 * i as f64])))
            .collect();
        let g = gamma_eps(&c, &SpaceTime::new(0.0, &[0.0]), 0.01, &FdGridSpec::default(), 0.5, &targets).unwrap();
        let peak = targets.iter().map(|p| heat(p.t, p.x[0])).fold(0.0, f64::max);
        let mut worst = 0.0_f64;
        for (i, p) in targets.iter().enumerate() {
            let exact = heat(p.t, p.x[0]);
            if exact > 1e-3 * peak {
                worst = worst.max((g.get(i, 0) - exact).abs() / exact);
            }
        }
        assert!(worst < 0.02, "{worst}");
        let mass: f64 = g.meta["mass_final"].parse().unwrap();
        assert!((mass - 1.0).abs() < 1e-2);
    }

    #[test]
    fn causality_and_guards() {
        let c = CoefficientField::identity(1);
        let pole = SpaceTime::new(1.0, &[0.0]);
        let g = gamma_eps(&c, &pole, 0.05, &FdGridSpec::default(), 0.5, &[SpaceTime::new(0.5, &[0.0])]).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
        let near_edge = SpaceTime::new(0.0, &[5.5]);
        let spec = FdGridSpec {
            center: Some(vec![0.0]),
            ..Default::default()
        };
        assert!(matches!(
            gamma_eps(&c, &near_edge, 0.01, &spec, 0.5, &[]),
            Err(Error::BoundaryMargin { .. })
        ));
        assert!(gamma_eps(&c, &pole, 0.0, &spec, 0.5, &[]).is_err());
    }

    #[test]
    fn tridiagonal_and_krylov_solvers_agree() {
        let f = CoefficientField::x_sine(1, 1.0, 0.3, 1.0).unwrap();
        let spec = FdGridSpec {
            nodes: 41,
            half_width: 2.0,
            ..Default::default()
        };
        let mesh = Mesh::new(&[0.0], &spec);
        let m = assemble(&f, 0.0, &mesh).shifted(-0.01);
        let rhs: Vec<f64> = (0..41).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = thomas(&m, &rhs);
        let b = bicgstab(&m, &rhs, &vec![0.0; 41], 1e-13).unwrap();
        let mt = m.transpose();
        let c = thomas(&mt, &rhs);
        let e = bicgstab(&mt, &rhs, &vec![0.0; 41], 1e-13).unwrap();
        for i in 0..41 {
            assert!((a[i] - b[i]).abs() < 1e-10);
            assert!((c[i] - e[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn two_dimensional_isotropic_solve() {
        let c = CoefficientField::identity(2);
        let spec = FdGridSpec {
            half_width: 3.0,
            nodes: 61,
            dt: 2e-3,
            ..Default::default()
        };
        let targets = vec![SpaceTime::new(0.2, &[0.0, 0.0]), SpaceTime::new(0.2, &[0.5, -0.3])];
        let g = gamma_eps(&c, &SpaceTime::new(0.0, &[0.0, 0.0]), 0.1, &spec, 0.2, &targets).unwrap();
        for (i, p) in targets.iter().enumerate() {
            let r2 = p.x[0] * p.x[0] + p.x[1] * p.x[1];
            let exact = (-r2 / 0.8).exp() / (4.0 * std::f64::consts::PI * 0.2);
            assert!((g.get(i, 0) - exact).abs() / exact < 0.03, "{} vs {exact}", g.get(i, 0));
        }
    }

    #[test]
    fn frozen_mass_and_coverage() {
        let c = CoefficientField::identity(1);
        let src: Vec<SpaceTime> = (0..=320).map(|i| SpaceTime::new(0.0, &[-8.0 + 0.05 * i as f64])).collect();
        let tgt = vec![SpaceTime::new(0.3, &[0.2]), SpaceTime::new(0.5, &[-0.4])];
        let g = frozen_grid(&c, &tgt, &src).unwrap();
        assert!(mass_check(&g, 1.0).unwrap().max_deviation < 1e-8);
        let narrow: Vec<SpaceTime> = (0..=20).map(|i| SpaceTime::new(0.0, &[-0.55 + 0.055 * i as f64])).collect();
        let g = frozen_grid(&c, &tgt, &narrow).unwrap();
        assert!(matches!(mass_check(&g, 1.0), Err(Error::Coverage { .. })));
    }

    #[test]
    fn residual_is_second_order_and_catches_wrong_field() {
        let c = CoefficientField::identity(1);
        let run = |h: f64| {
            let n = (1.0 / h).round() as i32;
            let tgt: Vec<SpaceTime> = (0..=n)
                .flat_map(|i| (-n..=n).map(move |j| SpaceTime::new(0.5 + i as f64 * h * 0.5, &[j as f64 * h])))
                .collect();
            frozen_grid(&c, &tgt, &[SpaceTime::new(0.0, &[0.0])]).unwrap()
        };
        let coarse = residual_check(&run(0.1), &c, 0.5).unwrap().max_scaled;
        let fine = residual_check(&run(0.05), &c, 0.5).unwrap().max_scaled;
        let ratio = coarse / fine;
        assert!((ratio - 4.0).abs() < 0.8, "{ratio}");
        let wrong = c.scaled(2.0).unwrap();
        let r = residual_check(&run(0.1), &wrong, 0.5).unwrap();
        assert!(r.flagged(100.0 * coarse));
    }
}
