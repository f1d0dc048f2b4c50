use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::CoefficientField;
use super::probe::BallQuadSpec;
use crate::error::{Error, Result};
use crate::linalg::{Point, SymMatrix};
use crate::quadrature::{integrate_matrix, GaussRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveDerivation {
    ExactSlice,
    AveragedLimit,
}

type CurveEval = dyn Fn(f64) -> SymMatrix + Send + Sync;

/// Coefficients frozen at a spatial anchor: a matrix-valued function of t.
#[derive(Clone)]
pub struct TimeCurve {
    anchor: Point,
    d: usize,
    derivation: CurveDerivation,
    time_independent: bool,
    breakpoints: Vec<f64>,
    eval: Arc<CurveEval>,
}

impl fmt::Debug for TimeCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeCurve")
            .field("anchor", &self.anchor)
            .field("derivation", &self.derivation)
            .field("time_independent", &self.time_independent)
            .finish()
    }
}

impl TimeCurve {
    /// t -> A(t, x0).
    pub fn exact_slice(field: &CoefficientField, x0: &[f64]) -> Self {
        let f = field.clone();
        let anchor = Point::from_slice(x0);
        let a = anchor.clone();
        Self {
            d: field.dim(),
            anchor,
            derivation: CurveDerivation::ExactSlice,
            time_independent: field.is_t_independent(),
            breakpoints: Vec::new(),
            eval: Arc::new(move |t| f.eval_raw(t, &a)),
        }
    }

    pub fn constant(matrix: SymMatrix) -> Self {
        let d = matrix.dim();
        Self {
            anchor: Point::from_elem(0.0, d),
            d,
            derivation: CurveDerivation::ExactSlice,
            time_independent: true,
            breakpoints: Vec::new(),
            eval: Arc::new(move |_| matrix.clone()),
        }
    }

    /// Arbitrary curve; `breakpoints` are times where the curve may jump and
    /// where time integrals are split.
    pub fn custom(
        d: usize,
        time_independent: bool,
        breakpoints: Vec<f64>,
        eval: impl Fn(f64) -> SymMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            anchor: Point::from_elem(0.0, d),
            d,
            derivation: CurveDerivation::ExactSlice,
            time_independent,
            breakpoints,
            eval: Arc::new(eval),
        }
    }

    fn averaged(field: &CoefficientField, x0: &[f64], ball: Vec<(Point, f64)>) -> Self {
        let f = field.clone();
        let d = field.dim();
        let pts: Vec<(Point, f64)> = ball
            .into_iter()
            .map(|(p, w)| ((0..d).map(|i| x0[i] + p[i]).collect(), w))
            .collect();
        Self {
            anchor: Point::from_slice(x0),
            d,
            derivation: CurveDerivation::AveragedLimit,
            time_independent: field.is_t_independent(),
            breakpoints: Vec::new(),
            eval: Arc::new(move |t| {
                let mut acc = SymMatrix::zeros(d);
                for (y, w) in &pts {
                    acc.add_scaled(&f.eval_raw(t, y), *w);
                }
                acc
            }),
        }
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn derivation(&self) -> CurveDerivation {
        self.derivation
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }

    pub fn eval(&self, t: f64) -> SymMatrix {
        let mut m = (self.eval)(t);
        m.symmetrize();
        m
    }

    /// Integral of the curve over (s, t), absolute tolerance 1e-11 (t - s)
    /// per matrix entry.
    pub fn integral(&self, s: f64, t: f64) -> SymMatrix {
        if self.time_independent {
            return self.eval(s).scale(t - s);
        }
        let mut cuts = vec![s];
        cuts.extend(self.breakpoints.iter().copied().filter(|b| *b > s && *b < t));
        cuts.push(t);
        let mut acc = SymMatrix::zeros(self.d);
        for w in cuts.windows(2) {
            let tol = 1e-11 * (w[1] - w[0]);
            acc = acc.add(&integrate_matrix(|r| (self.eval)(r), w[0], w[1], tol, self.d));
        }
        acc.symmetrize();
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeSpec {
    pub r: f64,
    pub depth: u32,
    /// Reference time window for the L1 increments.
    pub window: [f64; 2],
    pub ball: BallQuadSpec,
}

impl Default for FreezeSpec {
    fn default() -> Self {
        Self {
            r: 1.0,
            depth: 10,
            window: [0.0, 1.0],
            ball: BallQuadSpec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FreezeResult {
    pub curve: TimeCurve,
    /// Radii 2^-k r for k = 0..=depth.
    pub radii: Vec<f64>,
    /// L1 distance over the window between consecutive ball-average curves.
    pub increments: Vec<f64>,
}

/// Ball average of A(t, .) over B_rho(x0) as a function of t.
pub fn ball_average_curve(field: &CoefficientField, x0: &[f64], rho: f64, ball: &BallQuadSpec) -> Result<TimeCurve> {
    Ok(TimeCurve::averaged(field, x0, ball.ball_nodes(field.dim(), rho)?))
}

/// L1-in-time distance between two curves over `window` (entrywise-max norm).
pub fn curve_distance(a: &TimeCurve, b: &TimeCurve, window: [f64; 2]) -> f64 {
    let rule = GaussRule::new(8).expect("fixed order");
    rule.composite(window[0], window[1], 8)
        .into_iter()
        .map(|(t, w)| w * a.eval(t).sub(&b.eval(t)).max_abs())
        .sum()
}

/// Freezes the field at x0 as the ball average at radius 2^-depth r, and
/// reports the successive L1 increments of the dyadic averages.
pub fn freeze(field: &CoefficientField, x0: &[f64], spec: &FreezeSpec) -> Result<FreezeResult> {
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    if !(spec.r > 0.0) {
        return Err(Error::param("r", "must be positive"));
    }
    if spec.depth < 1 {
        return Err(Error::param("depth", "must be at least 1"));
    }
    if !(spec.window[1] > spec.window[0]) {
        return Err(Error::param("window", "must be a nonempty interval"));
    }
    let finest = spec.r * 0.5f64.powi(spec.depth as i32);
    let resolution = field.resolution(x0);
    if finest < resolution {
        return Err(Error::ResolutionUnderflow {
            radius: finest,
            resolution,
        });
    }
    let radii: Vec<f64> = (0..=spec.depth).map(|k| spec.r * 0.5f64.powi(k as i32)).collect();
    if field.is_x_independent() {
        return Ok(FreezeResult {
            curve: TimeCurve::exact_slice(field, x0),
            increments: vec![0.0; spec.depth as usize],
            radii,
        });
    }
    let curves = radii
        .iter()
        .map(|rho| ball_average_curve(field, x0, *rho, &spec.ball))
        .collect::<Result<Vec<_>>>()?;
    let increments = curves
        .windows(2)
        .map(|w| curve_distance(&w[0], &w[1], spec.window))
        .collect();
    Ok(FreezeResult {
        curve: curves.last().expect("depth >= 1").clone(),
        radii,
        increments,
    })
}
