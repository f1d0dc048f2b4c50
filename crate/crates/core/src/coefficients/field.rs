use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Point, SymMatrix};

pub type CustomEval = dyn Fn(f64, &[f64]) -> SymMatrix + Send + Sync;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    ClosedFormRegistryEntry,
    SampledGridWithInterpolation,
}

/// Closed-form coefficient families. All non-constant families are scalar
/// multiples of the identity.
#[derive(Clone)]
pub enum Family {
    Constant(SymMatrix),
    /// (base + amplitude sin(frequency t)) I
    TSine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// (base + amplitude sin(frequency x_1)) I
    XSine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// (base + amplitude min(|x - center|, clamp)^alpha) I
    Holder {
        base: f64,
        amplitude: f64,
        alpha: f64,
        clamp: f64,
        center: Point,
    },
    /// (base + amplitude / ln(1 / min(|x - center|, cutoff))) I, a modulus
    /// that fails the Dini condition at the center.
    LogModulus {
        base: f64,
        amplitude: f64,
        cutoff: f64,
        center: Point,
    },
    Custom {
        name: String,
        eval: Arc<CustomEval>,
        x_independent: bool,
        t_independent: bool,
    },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Constant(m) => write!(f, "Constant({:?})", m.as_slice()),
            Family::TSine { .. } => write!(f, "TSine"),
            Family::XSine { .. } => write!(f, "XSine"),
            Family::Holder { .. } => write!(f, "Holder"),
            Family::LogModulus { .. } => write!(f, "LogModulus"),
            Family::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Tensor grid of samples in (t, x_1[, x_2]) with multilinear interpolation,
/// clamped outside the sampled box.
#[derive(Clone, Debug)]
pub struct SampledGrid {
    d: usize,
    times: Vec<f64>,
    axes: Vec<Vec<f64>>,
    /// upper-triangle entries per node, index = ((it * n1) + i1) * n2 + i2
    values: Vec<Vec<f64>>,
}

fn locate(nodes: &[f64], v: f64) -> (usize, usize, f64) {
    let n = nodes.len();
    if n == 1 || v <= nodes[0] {
        return (0, 0, 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 1, n - 1, 0.0);
    }
    let hi = nodes.partition_point(|x| *x <= v).min(n - 1);
    let lo = hi - 1;
    let w = (v - nodes[lo]) / (nodes[hi] - nodes[lo]);
    (lo, hi, w)
}

impl SampledGrid {
    pub fn new(d: usize, times: Vec<f64>, axes: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self> {
        if !(1..=2).contains(&d) || axes.len() != d {
            return Err(Error::param("d", "sampled fields support d = 1 or d = 2"));
        }
        let ncomp = d * (d + 1) / 2;
        let expected = times.len() * axes.iter().map(Vec::len).product::<usize>();
        if values.len() != expected || values.iter().any(|v| v.len() != ncomp) {
            return Err(Error::Parse(format!(
                "sampled grid needs {expected} nodes with {ncomp} entries each"
            )));
        }
        Ok(Self {
            d,
            times,
            axes,
            values,
        })
    }

    /// Reads `t,x1[,x2],a11[,a12,a22]`.
    pub fn from_csv(path: &Path, d: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let expected: Vec<&str> = match d {
            1 => vec!["t", "x1", "a11"],
            2 => vec!["t", "x1", "x2", "a11", "a12", "a22"],
            _ => return Err(Error::param("d", "sampled fields support d = 1 or d = 2")),
        };
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != expected {
            return Err(Error::Parse(format!(
                "expected header {:?}, found {:?}",
                expected, header
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let uniq = |col: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let times = uniq(0);
        let axes: Vec<Vec<f64>> = (1..=d).map(uniq).collect();
        let n2 = if d == 2 { axes[1].len() } else { 1 };
        let n1 = axes[0].len();
        let ncomp = d * (d + 1) / 2;
        let mut values: Vec<Option<Vec<f64>>> = vec![None; times.len() * n1 * n2];
        for r in &rows {
            let it = times.partition_point(|v| *v < r[0]);
            let i1 = axes[0].partition_point(|v| *v < r[1]);
            let i2 = if d == 2 { axes[1].partition_point(|v| *v < r[2]) } else { 0 };
            values[(it * n1 + i1) * n2 + i2] = Some(r[1 + d..1 + d + ncomp].to_vec());
        }
        let values = values
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Parse("sampled grid is not a full tensor product".into()))?;
        Self::new(d, times, axes, values)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.d == 1 {
            w.write_record(["t", "x1", "a11"])?;
        } else {
            w.write_record(["t", "x1", "x2", "a11", "a12", "a22"])?;
        }
        let n1 = self.axes[0].len();
        let n2 = if self.d == 2 { self.axes[1].len() } else { 1 };
        for (it, t) in self.times.iter().enumerate() {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    let mut rec = vec![format!("{:.16e}", t), format!("{:.16e}", self.axes[0][i1])];
                    if self.d == 2 {
                        rec.push(format!("{:.16e}", self.axes[1][i2]));
                    }
                    for v in &self.values[(it * n1 + i1) * n2 + i2] {
                        rec.push(format!("{:.16e}", v));
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    fn eval(&self, t: f64, x: &[f64]) -> SymMatrix {
        let n1 = self.axes[0].len();
        let n2 = if self.d == 2 { self.axes[1].len() } else { 1 };
        let (t0, t1, wt) = locate(&self.times, t);
        let (a0, a1, wa) = locate(&self.axes[0], x[0]);
        let (b0, b1, wb) = if self.d == 2 { locate(&self.axes[1], x[1]) } else { (0, 0, 0.0) };
        let ncomp = self.d * (self.d + 1) / 2;
        let mut acc = vec![0.0; ncomp];
        for (it, ft) in [(t0, 1.0 - wt), (t1, wt)] {
            for (i1, f1) in [(a0, 1.0 - wa), (a1, wa)] {
                for (i2, f2) in [(b0, 1.0 - wb), (b1, wb)] {
                    let f = ft * f1 * f2;
                    if f == 0.0 {
                        continue;
                    }
                    let node = &self.values[(it * n1 + i1) * n2 + i2];
                    for (a, v) in acc.iter_mut().zip(node) {
                        *a += f * v;
                    }
                }
            }
        }
        SymMatrix::from_upper(self.d, &acc).expect("component count matches dimension")
    }

    fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|ax| ax.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub enum FieldSource {
    Closed(Family),
    Sampled(SampledGrid),
}

#[derive(Debug)]
struct Inner {
    d: usize,
    lambda: f64,
    big_lambda: f64,
    source: FieldSource,
}

/// A symmetric, uniformly parabolic coefficient matrix A(t, x) with declared
/// ellipticity bounds. Cheap to clone; immutable after construction.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    inner: Arc<Inner>,
}

impl CoefficientField {
    pub fn new(d: usize, lambda: f64, big_lambda: f64, source: FieldSource) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("d", "dimension must be positive"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::config("lambda", "must be positive and finite"));
        }
        if !(big_lambda >= lambda) || !big_lambda.is_finite() {
            return Err(Error::config("Lambda", "must be finite and at least lambda"));
        }
        match &source {
            FieldSource::Closed(Family::Constant(m)) if m.dim() != d => {
                return Err(Error::config("params.matrix", format!("matrix must be {d}x{d}")))
            }
            FieldSource::Closed(Family::Holder { center, .. })
            | FieldSource::Closed(Family::LogModulus { center, .. })
                if center.len() != d =>
            {
                return Err(Error::config("params.center", format!("center must have {d} entries")))
            }
            FieldSource::Sampled(g) if g.d != d => {
                return Err(Error::config("d", "does not match the sampled grid"))
            }
            _ => {}
        }
        Ok(Self {
            inner: Arc::new(Inner {
                d,
                lambda,
                big_lambda,
                source,
            }),
        })
    }

    pub fn constant(matrix: SymMatrix, lambda: f64, big_lambda: f64) -> Result<Self> {
        let d = matrix.dim();
        Self::new(d, lambda, big_lambda, FieldSource::Closed(Family::Constant(matrix)))
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(SymMatrix::identity(d), 1.0, 1.0).expect("identity field is valid")
    }

    pub fn t_sine(d: usize, base: f64, amplitude: f64, frequency: f64) -> Result<Self> {
        let (lo, hi) = (base - amplitude.abs(), base + amplitude.abs());
        Self::new(
            d,
            lo,
            hi,
            FieldSource::Closed(Family::TSine {
                base,
                amplitude,
                frequency,
            }),
        )
    }

    pub fn x_sine(d: usize, base: f64, amplitude: f64, frequency: f64) -> Result<Self> {
        let (lo, hi) = (base - amplitude.abs(), base + amplitude.abs());
        Self::new(
            d,
            lo,
            hi,
            FieldSource::Closed(Family::XSine {
                base,
                amplitude,
                frequency,
            }),
        )
    }

    pub fn holder(d: usize, base: f64, amplitude: f64, alpha: f64, clamp: f64) -> Result<Self> {
        let top = base + amplitude * clamp.powf(alpha);
        Self::new(
            d,
            base.min(top),
            base.max(top),
            FieldSource::Closed(Family::Holder {
                base,
                amplitude,
                alpha,
                clamp,
                center: Point::from_elem(0.0, d),
            }),
        )
    }

    pub fn log_modulus(d: usize, base: f64, amplitude: f64, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff < 1.0) {
            return Err(Error::config("params.cutoff", "must lie in (0, 1)"));
        }
        let top = base + amplitude / (1.0 / cutoff).ln();
        Self::new(
            d,
            base.min(top),
            base.max(top),
            FieldSource::Closed(Family::LogModulus {
                base,
                amplitude,
                cutoff,
                center: Point::from_elem(0.0, d),
            }),
        )
    }

    pub fn custom(
        d: usize,
        lambda: f64,
        big_lambda: f64,
        name: &str,
        x_independent: bool,
        t_independent: bool,
        eval: impl Fn(f64, &[f64]) -> SymMatrix + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(
            d,
            lambda,
            big_lambda,
            FieldSource::Closed(Family::Custom {
                name: name.to_string(),
                eval: Arc::new(eval),
                x_independent,
                t_independent,
            }),
        )
    }

    pub fn sampled(grid: SampledGrid, lambda: f64, big_lambda: f64) -> Result<Self> {
        let d = grid.d;
        Self::new(d, lambda, big_lambda, FieldSource::Sampled(grid))
    }

    /// Same coefficients scaled by `c` (ellipticity bounds scale with it).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let base = self.clone();
        Self::custom(
            self.dim(),
            self.lambda() * c,
            self.big_lambda() * c,
            "scaled",
            self.is_x_independent(),
            self.is_t_independent(),
            move |t, x| base.eval_raw(t, x).scale(c),
        )
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.d
    }

    pub fn lambda(&self) -> f64 {
        self.inner.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.inner.big_lambda
    }

    pub fn source(&self) -> &FieldSource {
        &self.inner.source
    }

    pub fn kind(&self) -> FieldKind {
        match self.inner.source {
            FieldSource::Closed(_) => FieldKind::ClosedFormRegistryEntry,
            FieldSource::Sampled(_) => FieldKind::SampledGridWithInterpolation,
        }
    }

    pub fn is_x_independent(&self) -> bool {
        match &self.inner.source {
            FieldSource::Closed(Family::Constant(_)) | FieldSource::Closed(Family::TSine { .. }) => true,
            FieldSource::Closed(Family::Custom { x_independent, .. }) => *x_independent,
            FieldSource::Closed(_) => false,
            FieldSource::Sampled(g) => g.axes.iter().all(|a| a.len() == 1),
        }
    }

    pub fn is_t_independent(&self) -> bool {
        match &self.inner.source {
            FieldSource::Closed(Family::TSine { amplitude, .. }) => *amplitude == 0.0,
            FieldSource::Closed(Family::Custom { t_independent, .. }) => *t_independent,
            FieldSource::Closed(_) => true,
            FieldSource::Sampled(g) => g.times.len() == 1,
        }
    }

    /// Smallest spatial scale the field resolves.
    pub fn resolution(&self, anchor: &[f64]) -> f64 {
        match &self.inner.source {
            FieldSource::Sampled(g) => g.min_spacing() * 1e-6,
            FieldSource::Closed(_) => {
                let scale = anchor.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                scale * 1e3 * f64::EPSILON
            }
        }
    }

    /// Unchecked evaluation for inner loops; `x.len()` must equal `dim()`.
    #[inline]
    pub fn eval_raw(&self, t: f64, x: &[f64]) -> SymMatrix {
        let d = self.inner.d;
        match &self.inner.source {
            FieldSource::Closed(fam) => match fam {
                Family::Constant(m) => m.clone(),
                Family::TSine {
                    base,
                    amplitude,
                    frequency,
                } => SymMatrix::scaled_identity(d, base + amplitude * (frequency * t).sin()),
                Family::XSine {
                    base,
                    amplitude,
                    frequency,
                } => SymMatrix::scaled_identity(d, base + amplitude * (frequency * x[0]).sin()),
                Family::Holder {
                    base,
                    amplitude,
                    alpha,
                    clamp,
                    center,
                } => {
                    let r = crate::linalg::distance(x, center).min(*clamp);
                    SymMatrix::scaled_identity(d, base + amplitude * r.powf(*alpha))
                }
                Family::LogModulus {
                    base,
                    amplitude,
                    cutoff,
                    center,
                } => {
                    let r = crate::linalg::distance(x, center).min(*cutoff);
                    let w = if r > 0.0 { 1.0 / (1.0 / r).ln() } else { 0.0 };
                    SymMatrix::scaled_identity(d, base + amplitude * w)
                }
                Family::Custom { eval, .. } => eval(t, x),
            },
            FieldSource::Sampled(g) => g.eval(t, x),
        }
    }

    /// A(t, x), symmetrized as (M + M^T)/2.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<SymMatrix> {
        if x.len() != self.inner.d {
            return Err(Error::DimensionMismatch {
                expected: self.inner.d,
                got: x.len(),
            });
        }
        let mut m = self.eval_raw(t, x);
        m.symmetrize();
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_field_evaluates_to_identity() {
        let f = CoefficientField::identity(2);
        assert_eq!(f.evaluate(3.0, &[0.1, -4.0]).unwrap(), SymMatrix::identity(2));
    }

    #[test]
    fn t_sine_at_quarter_period() {
        let f = CoefficientField::t_sine(1, 2.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(f.evaluate(FRAC_PI_2, &[0.3]).unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = CoefficientField::identity(2);
        assert!(matches!(
            f.evaluate(0.0, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn evaluation_symmetrizes_custom_fields() {
        let f = CoefficientField::custom(2, 0.5, 2.0, "skew", true, true, |_, _| {
            let mut m = SymMatrix::identity(2);
            m.set(0, 1, 0.2);
            m
        })
        .unwrap();
        let m = f.evaluate(0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(m.get(0, 1), 0.1);
        assert_eq!(m.get(1, 0), 0.1);
    }

    fn lerp(a: f64, b: f64, w: f64) -> f64 {
        a + (b - a) * w
    }

    #[test]
    fn sampled_grid_matches_independent_scalar_interpolation() {
        let times = vec![0.0, 1.0, 3.0];
        let xs = vec![-1.0, 0.0, 0.5, 2.0];
        let g = |t: f64, x: f64| 1.5 + 0.2 * t - 0.1 * x * x + 0.05 * t * x;
        let values = times
            .iter()
            .flat_map(|t| xs.iter().map(move |x| vec![g(*t, *x)]))
            .collect();
        let grid = SampledGrid::new(1, times.clone(), vec![xs.clone()], values).unwrap();
        let field = CoefficientField::sampled(grid, 1.0, 2.0).unwrap();
        // off-node point (t, x) = (2.2, 0.3): cell t in [1, 3], x in [0, 0.5]
        let (t, x) = (2.2, 0.3);
        let wt = (t - 1.0) / 2.0;
        let wx = (x - 0.0) / 0.5;
        let lo = lerp(g(1.0, 0.0), g(1.0, 0.5), wx);
        let hi = lerp(g(3.0, 0.0), g(3.0, 0.5), wx);
        let expect = lerp(lo, hi, wt);
        let got = field.evaluate(t, &[x]).unwrap().get(0, 0);
        assert_relative_eq!(got, expect, max_relative = 1e-14);
        // clamped outside the box
        let edge = field.evaluate(10.0, &[5.0]).unwrap().get(0, 0);
        assert_relative_eq!(edge, g(3.0, 2.0), max_relative = 1e-14);
    }

    #[test]
    fn sampled_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let times = vec![0.0, 1.0];
        let x1 = vec![0.0, 1.0];
        let x2 = vec![-1.0, 1.0];
        let mut values = Vec::new();
        for t in &times {
            for a in &x1 {
                for b in &x2 {
                    values.push(vec![1.0 + t + a, 0.1 * b, 2.0]);
                }
            }
        }
        let grid = SampledGrid::new(2, times, vec![x1, x2], values).unwrap();
        grid.to_csv(&path).unwrap();
        let back = SampledGrid::from_csv(&path, 2).unwrap();
        let f = CoefficientField::sampled(back, 0.5, 4.0).unwrap();
        let m = f.evaluate(0.5, &[0.5, 0.0]).unwrap();
        assert_relative_eq!(m.get(0, 0), 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.get(0, 1), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_csv_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "t,x,a\n0,0,1\n").unwrap();
        assert!(matches!(SampledGrid::from_csv(&path, 1), Err(Error::Parse(_))));
    }
}
