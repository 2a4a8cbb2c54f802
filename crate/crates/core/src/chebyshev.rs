//! Chebyshev–Gauss–Lobatto collocation on [0, 1]: nodes, spectral
//! differentiation, barycentric interpolation and coefficient transforms.

use std::f64::consts::PI;

/// A Lobatto grid of `m` points on [0, 1], ascending, with its
/// differentiation matrix (row-major, `m * m`).
#[derive(Debug, Clone)]
pub struct LobattoGrid {
    nodes: Vec<f64>,
    diff: Vec<f64>,
    bary: Vec<f64>,
}

impl LobattoGrid {
    pub fn new(m: usize) -> Self {
        assert!(m >= 2, "a Lobatto grid needs at least two points");
        let n = m - 1;
        let nodes = lobatto_nodes(m);
        let bary: Vec<f64> = (0..m)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();

        // Standard matrix on x_j = cos(j pi / n), then d/ds = -2 d/dx.
        let cbar = |j: usize| if j == 0 || j == n { 2.0 } else { 1.0 };
        let mut d = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                // x_i - x_j via the product formula, which keeps relative accuracy
                let dx = 2.0
                    * ((i + j) as f64 * PI / (2.0 * n as f64)).sin()
                    * ((j as f64 - i as f64) * PI / (2.0 * n as f64)).sin();
                d[i * m + j] = cbar(i) / cbar(j) * sign / dx;
            }
        }
        for i in 0..m {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| d[i * m + j]).sum();
            d[i * m + i] = -off;
        }
        for v in d.iter_mut() {
            *v *= -2.0;
        }
        Self { nodes, diff: d, bary }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn diff_entry(&self, i: usize, j: usize) -> f64 {
        self.diff[i * self.len() + j]
    }

    /// Differentiate nodal values of any linear-space-valued function.
    /// Uses Σ_{j≠i} D_ij (v_j − v_i), which equals the plain product because
    /// the rows of D sum to zero, and maps locally flat data to exact zeros.
    pub fn differentiate<T: Nodal>(&self, values: &[T]) -> Vec<T> {
        let m = self.len();
        assert_eq!(values.len(), m);
        (0..m)
            .map(|i| {
                let mut acc = values[i].scaled(0.0);
                for j in (0..m).filter(|&j| j != i) {
                    acc.add_scaled(&values[j].minus(&values[i]), self.diff[i * m + j]);
                }
                acc
            })
            .collect()
    }

    pub fn differentiate_scalar(&self, values: &[f64]) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| (0..m).map(|j| self.diff[i * m + j] * values[j]).sum())
            .collect()
    }

    /// Cardinal weights l_j(s) such that p(s) = sum_j l_j(s) v_j.
    pub fn interpolation_weights(&self, s: f64) -> Vec<f64> {
        let m = self.len();
        let mut out = vec![0.0; m];
        if let Some(j) = self.nodes.iter().position(|&x| x == s) {
            out[j] = 1.0;
            return out;
        }
        let mut denom = 0.0;
        for j in 0..m {
            let t = self.bary[j] / (s - self.nodes[j]);
            out[j] = t;
            denom += t;
        }
        for v in out.iter_mut() {
            *v /= denom;
        }
        out
    }

    pub fn interpolate_scalar(&self, values: &[f64], s: f64) -> f64 {
        self.interpolation_weights(s)
            .iter()
            .zip(values)
            .map(|(w, v)| w * v)
            .sum()
    }

    /// Chebyshev coefficients a_0..a_n of the interpolant of `values`
    /// (direct O(m^2) cosine transform).
    pub fn coefficients(&self, values: &[f64]) -> Vec<f64> {
        chebyshev_coefficients(values)
    }
}

/// Values that can be combined linearly with real weights.
pub trait Nodal: Sized {
    fn scaled(&self, w: f64) -> Self;
    fn add_scaled(&mut self, other: &Self, w: f64);
    fn minus(&self, other: &Self) -> Self;
}

impl Nodal for f64 {
    fn scaled(&self, w: f64) -> Self {
        self * w
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        *self += other * w;
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
}

impl Nodal for crate::linalg::CMatrix {
    fn scaled(&self, w: f64) -> Self {
        self.scale(w)
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.zip_apply(other, |a, b| *a += b * w);
    }
    fn minus(&self, other: &Self) -> Self {
        self - other
    }
}

/// Lobatto nodes s_j = (1 - cos(j pi / n)) / 2, ascending on [0, 1].
pub fn lobatto_nodes(m: usize) -> Vec<f64> {
    let n = (m - 1) as f64;
    (0..m)
        .map(|j| {
            // sin^2 form avoids cancellation near s = 0
            let t = (j as f64 * PI / (2.0 * n)).sin();
            t * t
        })
        .collect()
}

/// Coefficients of the degree-n interpolant through values at
/// x_j = cos(j pi / n) (in the order of ascending s, i.e. j = 0..n).
pub fn chebyshev_coefficients(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let n = m - 1;
    (0..m)
        .map(|k| {
            let mut acc = 0.0;
            for (j, v) in values.iter().enumerate() {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                acc += w * v * ((k * j) as f64 * PI / n as f64).cos();
            }
            let scale = if k == 0 || k == n { 1.0 } else { 2.0 };
            acc * scale / n as f64
        })
        .collect()
}
