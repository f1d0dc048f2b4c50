//! Tabulated kernels Gamma(t, x, tau, xi) over target and source point sets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Point;

/// A space-time point (t, x).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTime {
    pub t: f64,
    pub x: Point,
}

impl SpaceTime {
    pub fn new(t: f64, x: &[f64]) -> Self {
        Self {
            t,
            x: Point::from_slice(x),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Frozen,
    Parametrix,
    FdOracle,
    Composed,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Frozen => "frozen",
            Method::Parametrix => "parametrix",
            Method::FdOracle => "fd_oracle",
            Method::Composed => "composed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Method::Frozen),
            "parametrix" => Ok(Method::Parametrix),
            "fd_oracle" => Ok(Method::FdOracle),
            "composed" => Ok(Method::Composed),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniform tensor grid on the box `center +- half_width` with `nodes` points
/// per axis (endpoints included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub nodes: usize,
}

impl GridSpec {
    pub fn new(center: &[f64], half_width: f64, nodes: usize) -> Self {
        Self {
            center: center.to_vec(),
            half_width,
            nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes.max(2) - 1) as f64
    }

    pub fn axis(&self, k: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.nodes)
            .map(|i| self.center[k] - self.half_width + h * i as f64)
            .collect()
    }

    /// All grid points, first axis slowest.
    pub fn points(&self) -> Vec<Point> {
        let d = self.dim();
        let axes: Vec<Vec<f64>> = (0..d).map(|k| self.axis(k)).collect();
        let total = self.nodes.pow(d as u32);
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = Point::from_elem(0.0, d);
            for k in (0..d).rev() {
                p[k] = axes[k][rem % self.nodes];
                rem /= self.nodes;
            }
            out.push(p);
        }
        out
    }

    /// Trapezoid weights matching `points()`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let d = self.dim();
        let h = self.spacing();
        let w1: Vec<f64> = (0..self.nodes)
            .map(|i| if i == 0 || i + 1 == self.nodes { 0.5 * h } else { h })
            .collect();
        let total = self.nodes.pow(d as u32);
        (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut w = 1.0;
                for _ in 0..d {
                    w *= w1[rem % self.nodes];
                    rem /= self.nodes;
                }
                w
            })
            .collect()
    }

    pub fn space_times(&self, t: f64) -> Vec<SpaceTime> {
        self.points().into_iter().map(|x| SpaceTime { t, x }).collect()
    }
}

/// A point set recognized as a uniform tensor lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub axes: Vec<Vec<f64>>,
    /// Per input point, its multi-index on the axes.
    pub index: Vec<Vec<usize>>,
}

impl Lattice {
    /// Detects a uniform tensor lattice (any point order). Axes with a
    /// single value are allowed.
    pub fn detect(points: &[Point]) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::Empty("lattice points".into()))?;
        let d = first.len();
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            let mut vals: Vec<f64> = points.iter().map(|p| p[k]).collect();
            vals.sort_by(|a, b| a.total_cmp(b));
            let span = (vals[vals.len() - 1] - vals[0]).abs().max(1.0);
            vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * span);
            if vals.len() > 2 {
                let h = vals[1] - vals[0];
                if vals.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-6 * h) {
                    return Err(Error::GridMismatch(format!("axis {k} is not uniformly spaced")));
                }
            }
            axes.push(vals);
        }
        let total: usize = axes.iter().map(Vec::len).product();
        if total != points.len() {
            return Err(Error::GridMismatch(format!(
                "{} points do not form a full {}-node tensor lattice",
                points.len(),
                total
            )));
        }
        let index = points
            .iter()
            .map(|p| {
                (0..d)
                    .map(|k| {
                        let ax = &axes[k];
                        let pos = ax.partition_point(|v| *v < p[k]);
                        let near = [pos.saturating_sub(1), pos.min(ax.len() - 1)];
                        near.into_iter()
                            .min_by(|a, b| (ax[*a] - p[k]).abs().total_cmp(&(ax[*b] - p[k]).abs()))
                            .expect("nonempty axis")
                    })
                    .collect()
            })
            .collect();
        Ok(Self { axes, index })
    }

    pub fn spacing(&self, k: usize) -> f64 {
        let ax = &self.axes[k];
        if ax.len() < 2 {
            0.0
        } else {
            (ax[ax.len() - 1] - ax[0]) / (ax.len() - 1) as f64
        }
    }

    /// Trapezoid weights per input point; single-valued axes weigh 1.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        self.index
            .iter()
            .map(|idx| {
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let n = self.axes[k].len();
                        if n < 2 {
                            1.0
                        } else if i == 0 || i + 1 == n {
                            0.5 * self.spacing(k)
                        } else {
                            self.spacing(k)
                        }
                    })
                    .product()
            })
            .collect()
    }
}

/// Hex SHA-256 of a configuration text.
pub fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dense [targets x sources] kernel table.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    d: usize,
    targets: Vec<SpaceTime>,
    sources: Vec<SpaceTime>,
    values: Vec<f64>,
    pub method: Method,
    pub config_digest: String,
    pub meta: BTreeMap<String, String>,
}

impl KernelGrid {
    pub fn zeros(d: usize, targets: Vec<SpaceTime>, sources: Vec<SpaceTime>, method: Method) -> Result<Self> {
        if let Some(p) = targets.iter().chain(&sources).find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.dim(),
            });
        }
        let n = targets.len() * sources.len();
        Ok(Self {
            d,
            targets,
            sources,
            values: vec![0.0; n],
            method,
            config_digest: String::new(),
            meta: BTreeMap::new(),
        })
    }

    /// Fills every pair with `t > tau` from `f`; other pairs stay zero.
    pub fn from_fn(
        d: usize,
        targets: Vec<SpaceTime>,
        sources: Vec<SpaceTime>,
        method: Method,
        mut f: impl FnMut(&SpaceTime, &SpaceTime) -> Result<f64>,
    ) -> Result<Self> {
        let mut g = Self::zeros(d, targets, sources, method)?;
        let ns = g.sources.len();
        for i in 0..g.targets.len() {
            for j in 0..ns {
                if g.targets[i].t > g.sources[j].t {
                    g.values[i * ns + j] = f(&g.targets[i], &g.sources[j])?;
                }
            }
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn targets(&self) -> &[SpaceTime] {
        &self.targets
    }

    pub fn sources(&self) -> &[SpaceTime] {
        &self.sources
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.sources.len() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let ns = self.sources.len();
        self.values[i * ns + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let ns = self.sources.len();
        &self.values[i * ns..(i + 1) * ns]
    }

    /// (target, source, value) for every pair.
    pub fn iter(&self) -> impl Iterator<Item = (&SpaceTime, &SpaceTime, f64)> + '_ {
        let ns = self.sources.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, v)| (&self.targets[k / ns], &self.sources[k % ns], *v))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Sets every pair with t <= tau to zero; returns how many were nonzero.
    pub fn enforce_causality(&mut self) -> usize {
        let ns = self.sources.len();
        let mut fixed = 0;
        for i in 0..self.targets.len() {
            for j in 0..ns {
                if self.targets[i].t <= self.sources[j].t && self.values[i * ns + j] != 0.0 {
                    self.values[i * ns + j] = 0.0;
                    fixed += 1;
                }
            }
        }
        fixed
    }

    pub fn find_target(&self, p: &SpaceTime) -> Option<usize> {
        self.targets.iter().position(|q| same_point(p, q))
    }

    pub fn find_source(&self, p: &SpaceTime) -> Option<usize> {
        self.sources.iter().position(|q| same_point(p, q))
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Writes `t,x1..,tau,xi1..,value,method` rows and a `.meta` sidecar.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|k| format!("x{k}")));
        header.push("tau".into());
        header.extend((1..=self.d).map(|k| format!("xi{k}")));
        header.push("value".into());
        header.push("method".into());
        w.write_record(&header)?;
        let method = self.method.as_str();
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (tgt, src, v) in self.iter() {
            rec.clear();
            rec.push(format!("{:.16e}", tgt.t));
            rec.extend(tgt.x.iter().map(|c| format!("{c:.16e}")));
            rec.push(format!("{:.16e}", src.t));
            rec.extend(src.x.iter().map(|c| format!("{c:.16e}")));
            rec.push(format!("{v:.16e}"));
            rec.push(method.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let mut meta = std::fs::File::create(Self::meta_path(path))?;
        writeln!(meta, "method = {}", method)?;
        writeln!(meta, "config_digest = {}", self.config_digest)?;
        writeln!(meta, "d = {}", self.d)?;
        writeln!(meta, "targets = {}", self.targets.len())?;
        writeln!(meta, "sources = {}", self.sources.len())?;
        for (k, v) in &self.meta {
            writeln!(meta, "{k} = {v}")?;
        }
        Ok(())
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 6 || header.len() % 2 != 0 || header[0] != "t" {
            return Err(Error::Parse(format!("unexpected kernel header {header:?}")));
        }
        let d = (header.len() - 4) / 2;
        let mut targets: Vec<SpaceTime> = Vec::new();
        let mut sources: Vec<SpaceTime> = Vec::new();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut method = None;
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse("short row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            };
            let tgt = SpaceTime {
                t: num(0)?,
                x: (1..=d).map(&num).collect::<Result<Point>>()?,
            };
            let src = SpaceTime {
                t: num(d + 1)?,
                x: (d + 2..2 * d + 2).map(&num).collect::<Result<Point>>()?,
            };
            let v = num(2 * d + 2)?;
            let m = Method::parse(rec.get(2 * d + 3).unwrap_or("").trim())?;
            method.get_or_insert(m);
            let i = position_or_push(&mut targets, tgt);
            let j = position_or_push(&mut sources, src);
            entries.push((i, j, v));
        }
        let method = method.ok_or_else(|| Error::Empty("kernel csv has no rows".into()))?;
        let mut g = Self::zeros(d, targets, sources, method)?;
        for (i, j, v) in entries {
            g.set(i, j, v);
        }
        let meta_path = Self::meta_path(path);
        if meta_path.exists() {
            for line in std::fs::read_to_string(meta_path)?.lines() {
                if let Some((k, v)) = line.split_once(" = ") {
                    match k.trim() {
                        "config_digest" => g.config_digest = v.trim().to_string(),
                        "method" | "d" | "targets" | "sources" => {}
                        key => {
                            g.meta.insert(key.to_string(), v.trim().to_string());
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

fn same_point(a: &SpaceTime, b: &SpaceTime) -> bool {
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + u.abs().max(v.abs()));
    close(a.t, b.t) && a.x.len() == b.x.len() && a.x.iter().zip(&b.x).all(|(u, v)| close(*u, *v))
}

fn position_or_push(list: &mut Vec<SpaceTime>, p: SpaceTime) -> usize {
    // rows arrive grouped by target, so the last entry is the common hit
    if let Some(last) = list.last() {
        if *last == p {
            return list.len() - 1;
        }
    }
    match list.iter().position(|q| *q == p) {
        Some(i) => i,
        None => {
            list.push(p);
            list.len() - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let targets = vec![SpaceTime::new(1.0, &[0.1]), SpaceTime::new(2.0, &[-0.3])];
        let sources = vec![SpaceTime::new(0.0, &[0.0]), SpaceTime::new(1.5, &[1.0 / 3.0])];
        let mut g = KernelGrid::from_fn(1, targets, sources, Method::Frozen, |a, b| {
            Ok((a.t - b.t).sqrt() + a.x[0] * b.x[0] + 1.0 / 7.0)
        })
        .unwrap();
        g.config_digest = digest("abc");
        g.meta.insert("note".into(), "x".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        g.to_csv(&path).unwrap();
        let back = KernelGrid::from_csv(&path).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.get(0, 1), 0.0);
    }

    #[test]
    fn grid_spec_points_and_weights() {
        let g = GridSpec::new(&[0.0, 1.0], 1.0, 5);
        let pts = g.points();
        assert_eq!(pts.len(), 25);
        assert_eq!(pts[1].as_slice(), &[-1.0, 0.5]);
        let total: f64 = g.trapezoid_weights().iter().sum();
        assert!((total - 4.0).abs() < 1e-14);
    }

    #[test]
    fn causality_is_enforced() {
        let mut g = KernelGrid::zeros(1, vec![SpaceTime::new(0.0, &[0.0])], vec![SpaceTime::new(1.0, &[0.0])], Method::Composed)
            .unwrap();
        g.set(0, 0, 3.0);
        assert_eq!(g.enforce_causality(), 1);
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
