//! Superadiabatic expansion P_τ(s) ~ Σ_j τ^(-j) B_j(s).
//!
//! The coefficients solve the hierarchy
//!
//! ```text
//! i Ḃ_j = [H, B_{j+1}],        B_j = Σ_{m=0}^{j} B_m B_{j-m},        B_0 = P.
//! ```
//!
//! Production route: the off-diagonal blocks of B_j come from the commutator
//! equation in the eigenbasis, the block-diagonal ones from the quadratic
//! identity (P B_j P = −P S_j P, Q B_j Q = Q S_j Q with
//! S_j = Σ_{m=1}^{j-1} B_m B_{j-m}). Derivatives in s are taken by
//! Chebyshev spectral differentiation on a Lobatto grid.
//!
//! The contour representation (1/2π) ∮ R_z [P, Ḃ_{j-1}] R_z dz, with the
//! circle |z − E| = g/2 traversed counter-clockwise, reproduces the
//! off-diagonal solve exactly and serves as an independent oracle.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::chebyshev::{lobatto_nodes, LobattoGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{BandPath, HamiltonianFamily, SpectralFrame};
use crate::linalg::{self, CMatrix, MatrixRows};

/// Orders above this exhaust double precision for small gaps.
pub const MAX_EXPANSION_ORDER: usize = 12;
pub const DEFAULT_CONTOUR_NODES: usize = 64;
const RESOLUTION_WARNING: f64 = 1e-8;

/// Minimal collocation size for a given order.
pub fn min_grid_size(order: usize) -> usize {
    4 * order + 33
}

/// Default collocation size for a given order.
pub fn default_grid_size(order: usize) -> usize {
    65.max(min_grid_size(order))
}

/// Unique X with vanishing block-diagonal parts and [H, X] = i Y on the
/// off-diagonal blocks.
pub fn solve_commutator_offdiag(frame: &SpectralFrame, y: &CMatrix) -> CMatrix {
    let v = &frame.vectors;
    let yt = v.adjoint() * y * v;
    let n = frame.dimension();
    let xt = CMatrix::from_fn(n, n, |a, b| match (frame.in_band(a), frame.in_band(b)) {
        (true, false) => linalg::I * yt[(a, b)] / (frame.energy - frame.energies[b]),
        (false, true) => linalg::I * yt[(a, b)] / (frame.energies[a] - frame.energy),
        _ => Complex64::new(0.0, 0.0),
    });
    v * xt * v.adjoint()
}

/// −P S P + Q S Q: the block-diagonal part of B_j fixed by the projector identity.
pub fn diagonal_blocks_from_s(frame: &SpectralFrame, s_term: &CMatrix) -> CMatrix {
    let p = &frame.projector;
    let q = &frame.complement;
    q * s_term * q - p * s_term * p
}

/// (1/2π) ∮ R_z A R_z dz over |z − E| = g/2, counter-clockwise, by the
/// periodic trapezoid rule.
pub fn contour_map(frame: &SpectralFrame, a: &CMatrix, nodes: usize) -> Result<CMatrix> {
    if nodes < 16 {
        return Err(Error::Validation(format!(
            "contour quadrature needs at least 16 nodes, got {nodes}"
        )));
    }
    let radius = 0.5 * frame.gap;
    if !radius.is_finite() {
        return Ok(CMatrix::zeros(a.nrows(), a.ncols()));
    }
    let n = frame.dimension();
    let mut acc = CMatrix::zeros(n, n);
    for k in 0..nodes {
        let theta = 2.0 * PI * k as f64 / nodes as f64;
        let offset = Complex64::from_polar(radius, theta);
        let r = frame.resolvent(Complex64::new(frame.energy, 0.0) + offset)?;
        // dz = i (z − E) dθ
        acc += (&r * a * &r) * (linalg::I * offset);
    }
    Ok(acc.unscale(nodes as f64))
}

/// S_j = Σ_{m=1}^{j-1} B_m B_{j-m} at one node.
fn s_term(terms: &[Vec<CMatrix>], j: usize, node: usize) -> CMatrix {
    let n = terms[0][node].nrows();
    let mut acc = CMatrix::zeros(n, n);
    for m in 1..j {
        acc += &terms[m][node] * &terms[j - m][node];
    }
    acc
}

/// The tabulated coefficients B_0 … B_N and their s-derivatives on a
/// Lobatto grid.
#[derive(Debug, Clone)]
pub struct ExpansionSeries {
    grid: LobattoGrid,
    frames: Vec<SpectralFrame>,
    terms: Vec<Vec<CMatrix>>,
    derivatives: Vec<Vec<CMatrix>>,
    /// per order: trailing / leading Chebyshev coefficient magnitude
    resolution: Vec<f64>,
}

impl ExpansionSeries {
    /// Build the series from a band tracked on a Lobatto grid.
    pub fn compute(path: &BandPath, order: usize) -> Result<Self> {
        if order > MAX_EXPANSION_ORDER {
            return Err(Error::Validation(format!(
                "expansion order {order} exceeds the supported maximum {MAX_EXPANSION_ORDER}"
            )));
        }
        let m = path.grid.len();
        if m < min_grid_size(order) {
            return Err(Error::Validation(format!(
                "order {order} needs at least {} collocation nodes, got {m}",
                min_grid_size(order)
            )));
        }
        let expected = lobatto_nodes(m);
        if expected
            .iter()
            .zip(&path.grid)
            .any(|(a, b)| (a - b).abs() > 1e-15)
        {
            return Err(Error::Validation(
                "band path must be tracked on the Lobatto grid of matching size".into(),
            ));
        }
        let grid = LobattoGrid::new(m);
        let frames = path.frames.clone();

        let mut terms: Vec<Vec<CMatrix>> = Vec::with_capacity(order + 1);
        let mut derivatives: Vec<Vec<CMatrix>> = Vec::with_capacity(order + 1);
        terms.push(frames.iter().map(|f| f.projector.clone()).collect());
        derivatives.push(grid.differentiate(&terms[0]));
        for j in 1..=order {
            let next: Vec<CMatrix> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let frame = &frames[i];
                    let off = solve_commutator_offdiag(frame, &derivatives[j - 1][i]);
                    let diag = diagonal_blocks_from_s(frame, &s_term(&terms, j, i));
                    linalg::hermitize(&(off + diag))
                })
                .collect();
            derivatives.push(grid.differentiate(&next));
            terms.push(next);
        }

        let resolution: Vec<f64> = terms.iter().map(|t| resolution_ratio(&grid, t)).collect();
        for (j, r) in resolution.iter().enumerate() {
            if *r > RESOLUTION_WARNING {
                log::warn!(
                    "B_{j}: trailing Chebyshev coefficients at {r:.2e} of the leading ones; increase the grid size"
                );
            }
        }
        Ok(Self {
            grid,
            frames,
            terms,
            derivatives,
            resolution,
        })
    }

    /// Track the band on the Lobatto grid of size `m` and build the series.
    pub fn for_family(
        fam: &HamiltonianFamily,
        band: crate::hamiltonian::BandSelector,
        order: usize,
        m: usize,
    ) -> Result<Self> {
        let path = crate::hamiltonian::track_band(fam, &lobatto_nodes(m), band)?;
        Self::compute(&path, order)
    }

    pub fn order(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn grid(&self) -> &LobattoGrid {
        &self.grid
    }

    pub fn frames(&self) -> &[SpectralFrame] {
        &self.frames
    }

    pub fn term(&self, j: usize, node: usize) -> &CMatrix {
        &self.terms[j][node]
    }

    pub fn term_derivative(&self, j: usize, node: usize) -> &CMatrix {
        &self.derivatives[j][node]
    }

    pub fn terms(&self, j: usize) -> &[CMatrix] {
        &self.terms[j]
    }

    pub fn resolution(&self) -> &[f64] {
        &self.resolution
    }

    /// S_j at a node.
    pub fn s_term(&self, j: usize, node: usize) -> CMatrix {
        s_term(&self.terms, j, node)
    }

    /// B_j at a node re-derived through the contour representation,
    /// (1/2π) ∮ R_z [P, Ḃ_{j-1}] R_z dz + S_j − 2 P S_j P.
    pub fn contour_term(&self, j: usize, node: usize, contour_nodes: usize) -> Result<CMatrix> {
        assert!(j >= 1 && j <= self.order());
        let frame = &self.frames[node];
        let a = linalg::commutator(&frame.projector, &self.derivatives[j - 1][node]);
        let s = self.s_term(j, node);
        let p = &frame.projector;
        Ok(contour_map(frame, &a, contour_nodes)? + &s - (p * &s * p).scale(2.0))
    }

    fn interpolate(&self, values: &[CMatrix], s: f64, outside: impl Fn(usize) -> CMatrix) -> CMatrix {
        if s <= 0.0 {
            return outside(0);
        }
        if s >= 1.0 {
            return outside(values.len() - 1);
        }
        let w = self.grid.interpolation_weights(s);
        let n = values[0].nrows();
        let mut acc = CMatrix::zeros(n, n);
        for (wi, v) in w.iter().zip(values) {
            if *wi != 0.0 {
                acc += v.scale(*wi);
            }
        }
        acc
    }

    /// B_j(s) by barycentric interpolation; constant continuation outside [0, 1].
    pub fn term_at(&self, j: usize, s: f64) -> CMatrix {
        let values = &self.terms[j];
        let n = values[0].nrows();
        self.interpolate(values, s, |edge| {
            if j == 0 {
                values[edge].clone()
            } else {
                CMatrix::zeros(n, n)
            }
        })
    }

    pub fn derivative_at(&self, j: usize, s: f64) -> CMatrix {
        let values = &self.derivatives[j];
        let n = values[0].nrows();
        self.interpolate(values, s, |_| CMatrix::zeros(n, n))
    }

    /// Σ_{j=0}^{N} τ^(-j) B_j(s).
    pub fn truncated_projector(&self, tau: f64, s: f64) -> CMatrix {
        self.truncated_projector_to(self.order(), tau, s)
    }

    /// Same, truncated at `order` ≤ N.
    pub fn truncated_projector_to(&self, order: usize, tau: f64, s: f64) -> CMatrix {
        assert!(tau > 0.0, "tau must be positive");
        let order = order.min(self.order());
        let mut acc = self.term_at(0, s);
        let mut weight = 1.0;
        for j in 1..=order {
            weight /= tau;
            acc += self.term_at(j, s).scale(weight);
        }
        acc
    }

    /// ‖B_j(s_i)‖ and ‖Ḃ_j(s_i)‖ for every order and node.
    pub fn norm_table(&self) -> Vec<NormRow> {
        let mut rows = Vec::new();
        for j in 0..=self.order() {
            for (i, &s) in self.nodes().iter().enumerate() {
                rows.push(NormRow {
                    j,
                    s,
                    norm: linalg::op_norm(&self.terms[j][i]),
                    derivative_norm: linalg::op_norm(&self.derivatives[j][i]),
                });
            }
        }
        rows
    }

    /// ∫_0^s ‖Ḃ_j(r)‖ dr by Clenshaw–Curtis-style integration of the
    /// interpolated norm on a dense auxiliary grid.
    pub fn derivative_norm_integral(&self, j: usize, s: f64) -> f64 {
        let upper = s.clamp(0.0, 1.0);
        if upper == 0.0 {
            return 0.0;
        }
        // composite Gauss–Legendre on 64 panels of the interpolant
        let rule = crate::quadrature::GaussLegendre::new(8);
        let panels = 64;
        let h = upper / panels as f64;
        (0..panels)
            .map(|p| {
                let a = p as f64 * h;
                rule.integrate(|r| linalg::op_norm(&self.derivative_at(j, r)), a, a + h)
            })
            .sum()
    }

    /// max over nodes of ‖B_j − Σ_{m=0}^{j} B_m B_{j-m}‖, per j.
    pub fn algebraic_residuals(&self) -> Vec<f64> {
        (0..=self.order())
            .map(|j| {
                (0..self.nodes().len())
                    .map(|i| {
                        let mut acc = self.terms[j][i].clone();
                        for m in 0..=j {
                            acc -= &self.terms[m][i] * &self.terms[j - m][i];
                        }
                        linalg::op_norm(&acc)
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// max over interior nodes of ‖i Ḃ_j − [H, B_{j+1}]‖, per j < N.
    pub fn differential_residuals(&self) -> Vec<f64> {
        let m = self.nodes().len();
        (0..self.order())
            .map(|j| {
                (1..m - 1)
                    .map(|i| {
                        let h = self.frames[i].hamiltonian();
                        let r = &self.derivatives[j][i] * linalg::I - linalg::commutator(&h, &self.terms[j + 1][i]);
                        linalg::op_norm(&r)
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn export(&self) -> SeriesExport {
        SeriesExport {
            order: self.order(),
            nodes: self.nodes().to_vec(),
            terms: (0..=self.order())
                .map(|j| TermExport {
                    j,
                    values: self.terms[j].iter().map(linalg::to_rows).collect(),
                    derivatives: self.derivatives[j].iter().map(linalg::to_rows).collect(),
                })
                .collect(),
        }
    }
}

fn resolution_ratio(grid: &LobattoGrid, values: &[CMatrix]) -> f64 {
    let n = values[0].nrows();
    let m = values.len();
    let tail = (m / 8).max(2);
    let mut leading: f64 = 0.0;
    let mut trailing: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            for part in [0, 1] {
                let series: Vec<f64> = values
                    .iter()
                    .map(|v| if part == 0 { v[(r, c)].re } else { v[(r, c)].im })
                    .collect();
                let coeffs = grid.coefficients(&series);
                for (k, a) in coeffs.iter().enumerate() {
                    leading = leading.max(a.abs());
                    if k + tail >= m {
                        trailing = trailing.max(a.abs());
                    }
                }
            }
        }
    }
    if leading == 0.0 {
        0.0
    } else {
        trailing / leading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct NormRow {
    pub j: usize,
    pub s: f64,
    pub norm: f64,
    pub derivative_norm: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TermExport {
    pub j: usize,
    pub values: Vec<MatrixRows>,
    pub derivatives: Vec<MatrixRows>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SeriesExport {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub terms: Vec<TermExport>,
}
