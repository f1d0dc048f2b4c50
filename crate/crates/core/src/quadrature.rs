//! Quadrature building blocks: Gauss-Legendre rules, tensor products,
//! adaptive Gauss-Kronrod for matrix-valued integrands, and Halton points.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Result<Self> {
        let degree = NonZeroUsize::new(n).ok_or(Error::QuadratureOrder { order: 0, min: 1 })?;
        let rule = GaussLegendre::new(degree);
        let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped affinely onto [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule: `panels` equal panels on [a, b], each with this rule.
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        (0..panels)
            .flat_map(|p| {
                let lo = a + h * p as f64;
                self.on(lo, lo + h).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Visits every point of the tensor product of one-dimensional
/// (node, weight) lists. The callback receives the point and the product weight.
pub fn for_each_tensor(axes: &[Vec<(f64, f64)>], mut f: impl FnMut(&[f64], f64)) {
    let d = axes.len();
    if d == 0 || axes.iter().any(|a| a.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; d];
    let mut pt = vec![0.0; d];
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let (x, wk) = axes[k][idx[k]];
            pt[k] = x;
            w *= wk;
        }
        f(&pt, w);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return;
            }
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod_panel(
    f: &mut impl FnMut(f64) -> SymMatrix,
    a: f64,
    b: f64,
    dim: usize,
) -> (SymMatrix, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let centre = f(mid);
    let mut kronrod = centre.scale(WGK[7]);
    let mut gauss = centre.scale(WG[3]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(mid - dx).add(&f(mid + dx));
        kronrod.add_scaled(&pair, WGK[j]);
        if j % 2 == 1 {
            gauss.add_scaled(&pair, WG[j / 2]);
        }
    }
    let kronrod = kronrod.scale(half);
    let gauss = gauss.scale(half);
    let err = kronrod.sub(&gauss).max_abs();
    debug_assert_eq!(kronrod.dim(), dim);
    (kronrod, err)
}

/// Adaptive 7/15 Gauss-Kronrod integration of a matrix-valued integrand with
/// absolute tolerance `tol` in the entrywise-max norm.
pub fn integrate_matrix(
    mut f: impl FnMut(f64) -> SymMatrix,
    a: f64,
    b: f64,
    tol: f64,
    dim: usize,
) -> SymMatrix {
    let mut total = SymMatrix::zeros(dim);
    let mut stack = vec![(a, b, 0u32)];
    let span = (b - a).abs().max(f64::MIN_POSITIVE);
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = kronrod_panel(&mut f, lo, hi, dim);
        let budget = tol * (hi - lo).abs() / span;
        if err <= budget || depth >= 40 {
            total = total.add(&val);
        } else {
            let m = 0.5 * (lo + hi);
            stack.push((m, hi, depth + 1));
            stack.push((lo, m, depth + 1));
        }
    }
    total
}

/// Radical-inverse (van der Corput) value of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut scale = inv;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Halton point `index` in the unit cube of dimension `dim` (dim <= 8).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|k| radical_inverse(index + 1, PRIMES[k % PRIMES.len()])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let rule = GaussRule::new(5).unwrap();
        let v = rule.integrate(0.0, 2.0, |x| x.powi(9));
        assert_relative_eq!(v, 2f64.powi(10) / 10.0, max_relative = 1e-13);
    }

    #[test]
    fn tensor_product_of_two_rules() {
        let rule = GaussRule::new(4).unwrap();
        let ax: Vec<_> = rule.on(0.0, 1.0).collect();
        let mut acc = 0.0;
        for_each_tensor(&[ax.clone(), ax], |p, w| acc += w * p[0] * p[1] * p[1]);
        assert_relative_eq!(acc, 1.0 / 6.0, max_relative = 1e-13);
    }

    #[test]
    fn adaptive_kronrod_matrix_integrand() {
        let m = integrate_matrix(
            |t| SymMatrix::scaled_identity(2, 2.0 + t.sin()),
            0.0,
            std::f64::consts::PI,
            1e-12,
            2,
        );
        assert_relative_eq!(m.get(0, 0), 2.0 * std::f64::consts::PI + 2.0, epsilon = 1e-11);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn adaptive_kronrod_resolves_kink() {
        let m = integrate_matrix(
            |t| SymMatrix::scaled_identity(1, if t < 0.3 { 1.0 } else { 4.0 }),
            0.0,
            1.0,
            1e-10,
            1,
        );
        assert_relative_eq!(m.get(0, 0), 0.3 + 4.0 * 0.7, epsilon = 1e-9);
    }

    #[test]
    fn halton_points_lie_in_unit_cube() {
        for i in 0..100 {
            let p = halton(i, 3);
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
        assert_eq!(halton(0, 1), vec![0.5]);
    }
}
