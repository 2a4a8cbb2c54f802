//! Interpolating Hamiltonian families and their instantaneous spectral data.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::schedule::Schedule;

/// Eigenvalues closer than this are one (degenerate) band.
pub const CLUSTER_TOLERANCE: f64 = 1e-10;
/// Below this the gap assumption is considered violated.
pub const GAP_FLOOR: f64 = 1e-12;
const HERMITIAN_TOLERANCE: f64 = 1e-12;
/// Matrices larger than this are outside the supported envelope.
pub const MAX_DIMENSION: usize = 64;

/// Which eigenvalue cluster to follow, by the ascending index of any of its
/// eigenvalues (0 = ground band).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct BandSelector {
    pub index: usize,
}

impl BandSelector {
    pub const GROUND: BandSelector = BandSelector { index: 0 };
}

/// s ↦ H(s) = (1 − f(s)) H_I + f(s) H_F.
#[derive(Debug, Clone)]
pub struct HamiltonianFamily {
    h_initial: CMatrix,
    h_final: CMatrix,
    delta: CMatrix,
    schedule: Schedule,
}

impl HamiltonianFamily {
    pub fn interpolating(h_initial: CMatrix, h_final: CMatrix, schedule: Schedule) -> Result<Self> {
        if !h_initial.is_square() || !h_final.is_square() {
            return Err(Error::Validation("Hamiltonians must be square".into()));
        }
        if h_initial.shape() != h_final.shape() {
            return Err(Error::Validation(format!(
                "dimension mismatch: H_I is {}x{}, H_F is {}x{}",
                h_initial.nrows(),
                h_initial.ncols(),
                h_final.nrows(),
                h_final.ncols()
            )));
        }
        let dim = h_initial.nrows();
        if dim == 0 || dim > MAX_DIMENSION {
            return Err(Error::Validation(format!(
                "dimension {dim} outside the supported range 1..={MAX_DIMENSION}"
            )));
        }
        for (name, m) in [("H_I", &h_initial), ("H_F", &h_final)] {
            let dev = linalg::hermitian_deviation(m);
            if dev > HERMITIAN_TOLERANCE {
                return Err(Error::Validation(format!(
                    "{name} is not Hermitian (deviation {dev:e})"
                )));
            }
            let norm = linalg::op_norm(m);
            if (norm - 1.0).abs() > 1e-12 {
                log::debug!("{name} has operator norm {norm}, not 1; bounds remain valid but are unnormalized");
            }
        }
        let h_initial = linalg::hermitize(&h_initial);
        let h_final = linalg::hermitize(&h_final);
        let delta = &h_final - &h_initial;
        Ok(Self {
            h_initial,
            h_final,
            delta,
            schedule,
        })
    }

    /// H(s) = (1 − 2 f(s)) σ_z + δ σ_x: the avoided crossing with minimal gap 2δ.
    pub fn two_level(delta: f64, schedule: Schedule) -> Result<Self> {
        let sx = linalg::sigma_x();
        let sz = linalg::sigma_z();
        let h_i = &sz + sx.scale(delta);
        let h_f = -&sz + sx.scale(delta);
        Self::interpolating(h_i, h_f, schedule)
    }

    pub fn dimension(&self) -> usize {
        self.h_initial.nrows()
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn initial(&self) -> &CMatrix {
        &self.h_initial
    }

    pub fn final_hamiltonian(&self) -> &CMatrix {
        &self.h_final
    }

    /// H_F − H_I.
    pub fn difference(&self) -> &CMatrix {
        &self.delta
    }

    pub fn at(&self, s: f64) -> CMatrix {
        let f = self.schedule.value(s);
        &self.h_initial + self.delta.scale(f)
    }

    /// d^k H / ds^k = f^(k)(s) (H_F − H_I) for k ≥ 1.
    pub fn derivative(&self, s: f64, k: usize) -> Result<CMatrix> {
        if k == 0 {
            return Ok(self.at(s));
        }
        let fk = self.schedule.derivative(s, k)?;
        Ok(self.delta.scale(fk))
    }

    pub fn spectral_frame(&self, s: f64, band: BandSelector) -> Result<SpectralFrame> {
        SpectralFrame::new(&self.at(s), s, band)
    }

    pub fn eigen(&self, s: f64) -> Eigensystem {
        Eigensystem::new(&self.at(s))
    }
}

/// Ascending eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub energies: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigensystem {
    pub fn new(h: &CMatrix) -> Self {
        let eig = SymmetricEigen::new(linalg::hermitize(h));
        let n = h.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Self { energies, vectors }
    }

    /// Contiguous index ranges of eigenvalue clusters.
    pub fn clusters(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.energies.len() {
            if i == self.energies.len() || self.energies[i] - self.energies[i - 1] > CLUSTER_TOLERANCE {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    fn projector(&self, band: &std::ops::Range<usize>) -> CMatrix {
        let v = self.vectors.columns(band.start, band.len());
        &v * v.adjoint()
    }
}

/// Spectral data at a fixed s for one tracked band.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub s: f64,
    pub energies: Vec<f64>,
    pub vectors: CMatrix,
    pub band: std::ops::Range<usize>,
    pub energy: f64,
    pub projector: CMatrix,
    pub complement: CMatrix,
    pub gap: f64,
}

impl SpectralFrame {
    pub fn new(h: &CMatrix, s: f64, band: BandSelector) -> Result<Self> {
        let eig = Eigensystem::new(h);
        if band.index >= eig.energies.len() {
            return Err(Error::Validation(format!(
                "band index {} out of range for dimension {}",
                band.index,
                eig.energies.len()
            )));
        }
        let cluster = eig
            .clusters()
            .into_iter()
            .find(|r| r.contains(&band.index))
            .expect("every index lies in a cluster");
        Self::from_cluster(eig, s, cluster)
    }

    fn from_cluster(eig: Eigensystem, s: f64, band: std::ops::Range<usize>) -> Result<Self> {
        let n = eig.energies.len();
        let energy = eig.energies[band.clone()].iter().sum::<f64>() / band.len() as f64;
        let gap = eig
            .energies
            .iter()
            .enumerate()
            .filter(|(i, _)| !band.contains(i))
            .map(|(_, e)| (e - energy).abs())
            .fold(f64::INFINITY, f64::min);
        if gap < GAP_FLOOR {
            return Err(Error::GapCollapse {
                s,
                gap,
                threshold: GAP_FLOOR,
            });
        }
        let projector = eig.projector(&band);
        let complement = CMatrix::identity(n, n) - &projector;
        Ok(Self {
            s,
            energies: eig.energies,
            vectors: eig.vectors,
            band,
            energy,
            projector,
            complement,
            gap,
        })
    }

    pub fn dimension(&self) -> usize {
        self.energies.len()
    }

    pub fn rank(&self) -> usize {
        self.band.len()
    }

    pub fn in_band(&self, i: usize) -> bool {
        self.band.contains(&i)
    }

    /// The Hamiltonian reassembled from the eigendecomposition.
    pub fn hamiltonian(&self) -> CMatrix {
        let n = self.dimension();
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            self.energies.iter().map(|&e| Complex64::new(e, 0.0)),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }

    /// Band eigenvectors as columns.
    pub fn band_vectors(&self) -> CMatrix {
        self.vectors.columns(self.band.start, self.band.len()).into_owned()
    }

    /// (H(s) − z)^(-1), assembled in the eigenbasis.
    pub fn resolvent(&self, z: Complex64) -> Result<CMatrix> {
        let distance = self
            .energies
            .iter()
            .map(|&e| (Complex64::new(e, 0.0) - z).norm())
            .fold(f64::INFINITY, f64::min);
        if distance <= 1e-12 {
            return Err(Error::NearSingular {
                re: z.re,
                im: z.im,
                distance,
            });
        }
        let n = self.dimension();
        let inv = nalgebra::DVector::from_iterator(
            n,
            self.energies.iter().map(|&e| Complex64::new(1.0, 0.0) / (Complex64::new(e, 0.0) - z)),
        );
        Ok(&self.vectors * CMatrix::from_diagonal(&inv) * self.vectors.adjoint())
    }
}

/// Frames of one band followed along a grid of s values.
#[derive(Debug, Clone)]
pub struct BandPath {
    pub grid: Vec<f64>,
    pub frames: Vec<SpectralFrame>,
    pub min_gap: f64,
}

const TRACKING_MARGIN: f64 = 0.1;
const CONTINUITY_LIMIT: f64 = 0.5;

/// Follow a band by maximal projector overlap tr(P(s_i) P(s_{i+1})).
pub fn track_band(fam: &HamiltonianFamily, grid: &[f64], initial: BandSelector) -> Result<BandPath> {
    if grid.is_empty() {
        return Err(Error::Validation("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation("grid must be sorted".into()));
    }
    let systems: Vec<Eigensystem> = grid.par_iter().map(|&s| fam.eigen(s)).collect();
    let mut frames: Vec<SpectralFrame> = Vec::with_capacity(grid.len());
    for (i, (eig, &s)) in systems.into_iter().zip(grid).enumerate() {
        let clusters = eig.clusters();
        let chosen = if i == 0 {
            clusters
                .into_iter()
                .find(|r| r.contains(&initial.index))
                .ok_or_else(|| Error::Validation(format!("band index {} out of range", initial.index)))?
        } else {
            let prev = &frames[i - 1].projector;
            let mut scored: Vec<(f64, std::ops::Range<usize>)> = clusters
                .into_iter()
                .map(|r| {
                    let overlap: f64 = r
                        .clone()
                        .map(|c| {
                            let v = eig.vectors.column(c);
                            (v.adjoint() * prev * v)[(0, 0)].re
                        })
                        .sum();
                    (overlap, r)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            if scored.len() > 1 && scored[0].0 - scored[1].0 < TRACKING_MARGIN {
                return Err(Error::Tracking {
                    s,
                    detail: format!(
                        "top candidate overlaps {:.4} and {:.4} differ by less than {TRACKING_MARGIN}",
                        scored[0].0, scored[1].0
                    ),
                });
            }
            scored.swap_remove(0).1
        };
        let frame = SpectralFrame::from_cluster(eig, s, chosen)?;
        if let Some(prev) = frames.last() {
            let jump = linalg::op_norm(&(&frame.projector - &prev.projector));
            if jump >= CONTINUITY_LIMIT {
                return Err(Error::Tracking {
                    s,
                    detail: format!("projector jumped by {jump:.3} between adjacent grid points"),
                });
            }
        }
        frames.push(frame);
    }
    let min_gap = frames.iter().map(|f| f.gap).fold(f64::INFINITY, f64::min);
    Ok(BandPath {
        grid: grid.to_vec(),
        frames,
        min_gap,
    })
}

/// Uniform grid of `points` values on [0, 1].
pub fn uniform_grid(points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| i as f64 / (points - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, real, sigma_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bump() -> Schedule {
        Schedule::bump().unwrap()
    }

    pub(crate) fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        linalg::hermitize(&a)
    }

    fn max_entry(a: &CMatrix) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn equal_endpoints_give_constant_family() {
        let id = CMatrix::identity(3, 3);
        let fam = HamiltonianFamily::interpolating(id.clone(), id.clone(), bump()).unwrap();
        for s in [0.0, 0.3, 0.5, 1.0, 1.7] {
            assert!(max_entry(&(fam.at(s) - &id)) < 1e-15);
        }
    }

    #[test]
    fn antisymmetric_endpoints_vanish_at_midpoint() {
        let fam = HamiltonianFamily::interpolating(sigma_z(), -sigma_z(), bump()).unwrap();
        assert!(max_entry(&fam.at(0.5)) < 1e-14);
    }

    #[test]
    fn definition_holds_entrywise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_hermitian(4, &mut rng), random_hermitian(4, &mut rng));
        let sched = bump();
        let f = sched.value(0.25);
        let fam = HamiltonianFamily::interpolating(a.clone(), b.clone(), sched).unwrap();
        let expect = a.scale(1.0 - f) + b.scale(f);
        assert!(max_entry(&(fam.at(0.25) - expect)) <= 1e-15);
        assert!(max_entry(&(fam.at(0.0) - &a)) == 0.0);
        assert!(max_entry(&(fam.at(1.0) - &b)) == 0.0);
    }

    #[test]
    fn rejects_invalid_input() {
        let bad = CMatrix::from_row_slice(2, 2, &[real(0.0), real(1.0), real(0.5), real(0.0)]);
        assert!(matches!(
            HamiltonianFamily::interpolating(bad, sigma_z(), bump()),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            HamiltonianFamily::interpolating(CMatrix::identity(3, 3), sigma_z(), bump()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let fam = HamiltonianFamily::two_level(0.3, bump()).unwrap();
        for k in 1..6 {
            assert_eq!(max_entry(&fam.derivative(1.2, k).unwrap()), 0.0);
        }
        let beta = fam.schedule().beta().unwrap();
        let d1 = fam.derivative(0.5, 1).unwrap();
        let expect = fam.difference().scale(beta * (-4.0f64).exp());
        assert!(max_entry(&(d1 - expect)) < 1e-14);
        let d6 = fam.derivative(0.4, 6).unwrap();
        let f6 = fam.schedule().derivative(0.4, 6).unwrap();
        let norm_delta = linalg::op_norm(fam.difference());
        assert!((linalg::op_norm(&d6) - f6.abs() * norm_delta).abs() <= 1e-12 * f6.abs() * norm_delta);
    }

    #[test]
    fn derivatives_are_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fam = HamiltonianFamily::interpolating(
            random_hermitian(5, &mut rng),
            random_hermitian(5, &mut rng),
            bump(),
        )
        .unwrap();
        for s in [0.1, 0.5, 0.8] {
            for k in 0..5 {
                let d = fam.derivative(s, k).unwrap();
                let scale = max_entry(&d).max(1.0);
                assert!(linalg::hermitian_deviation(&d) <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn diagonal_frame() {
        let h = CMatrix::from_row_slice(2, 2, &[real(-1.0), real(0.0), real(0.0), real(1.0)]);
        let fr = SpectralFrame::new(&h, 0.0, BandSelector::GROUND).unwrap();
        assert!((fr.energy + 1.0).abs() < 1e-15);
        assert!((fr.gap - 2.0).abs() < 1e-15);
        let p = CMatrix::from_row_slice(2, 2, &[real(1.0), real(0.0), real(0.0), real(0.0)]);
        assert!(max_entry(&(&fr.projector - p)) < 1e-15);
    }

    #[test]
    fn two_level_gap_at_midpoint() {
        let delta = 0.17;
        let fam = HamiltonianFamily::two_level(delta, bump()).unwrap();
        let fr = fam.spectral_frame(0.5, BandSelector::GROUND).unwrap();
        assert!((fr.gap - 2.0 * delta).abs() < 1e-12);
    }

    #[test]
    fn degenerate_band_is_clustered() {
        let h = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            real(-1.0),
            real(-1.0 + 1e-12),
            real(0.5),
        ]));
        let fr = SpectralFrame::new(&h, 0.0, BandSelector { index: 1 }).unwrap();
        assert_eq!(fr.rank(), 2);
        assert!((fr.gap - 1.5).abs() < 1e-11);
    }

    #[test]
    fn full_band_has_no_gap_edge() {
        let same = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![real(0.0), real(0.0)]));
        let fr = SpectralFrame::new(&same, 0.0, BandSelector::GROUND).unwrap();
        assert_eq!(fr.rank(), 2);
        assert!(fr.gap.is_infinite());
    }

    /// Riesz projector by trapezoid quadrature of LU-inverted resolvents:
    /// independent of the eigensolver.
    fn riesz_projector(h: &CMatrix, center: f64, radius: f64, nodes: usize) -> CMatrix {
        // (1 / 2πi) ∮ (z − H)^(-1) dz with z = center + r e^{iθ}
        let n = h.nrows();
        let mut acc = CMatrix::zeros(n, n);
        for k in 0..nodes {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / nodes as f64;
            let e = Complex64::from_polar(radius, theta);
            let z = Complex64::new(center, 0.0) + e;
            let shifted = CMatrix::identity(n, n) * z - h;
            let inv = shifted.lu().try_inverse().unwrap();
            acc += inv * e;
        }
        acc.unscale(nodes as f64)
    }

    #[test]
    fn random_projector_matches_riesz_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_hermitian(4, &mut rng);
        let fr = SpectralFrame::new(&h, 0.0, BandSelector::GROUND).unwrap();
        let oracle = riesz_projector(&h, fr.energy, fr.gap / 2.0, 256);
        assert!(linalg::op_norm(&(&fr.projector - &oracle)) < 1e-12);
    }

    #[test]
    fn frame_invariants_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3, 6, 10] {
            let h = random_hermitian(n, &mut rng);
            let fr = SpectralFrame::new(&h, 0.0, BandSelector { index: n / 2 }).unwrap();
            let p = &fr.projector;
            let q = &fr.complement;
            assert!(linalg::op_norm(&(p * p - p)) < 1e-12);
            assert!(linalg::hermitian_deviation(p) < 1e-12);
            assert!(linalg::op_norm(&(p * q)) < 1e-12);
            assert!(linalg::op_norm(&(p + q - CMatrix::identity(n, n))) < 1e-12);
            assert!(linalg::op_norm(&(&h * p - p.scale(fr.energy))) < 1e-11);
            assert!(linalg::op_norm(&(fr.hamiltonian() - &h)) < 1e-11);
        }
    }

    #[test]
    fn resolvent_examples() {
        let h = CMatrix::from_row_slice(2, 2, &[real(0.0), real(0.0), real(0.0), real(2.0)]);
        let fr = SpectralFrame::new(&h, 0.0, BandSelector::GROUND).unwrap();
        let r = fr.resolvent(real(1.0)).unwrap();
        let expect = CMatrix::from_row_slice(2, 2, &[real(-1.0), real(0.0), real(0.0), real(1.0)]);
        assert!(max_entry(&(r - expect)) < 1e-15);
        assert!(matches!(fr.resolvent(real(2.0)), Err(Error::NearSingular { .. })));

        let fam = HamiltonianFamily::two_level(0.25, bump()).unwrap();
        let fr = fam.spectral_frame(0.4, BandSelector::GROUND).unwrap();
        for k in 0..8 {
            let z = real(fr.energy) + Complex64::from_polar(fr.gap / 2.0, k as f64 * 0.7);
            let norm = linalg::op_norm(&fr.resolvent(z).unwrap());
            assert!((norm - 2.0 / fr.gap).abs() < 1e-12 * norm);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = random_hermitian(6, &mut rng);
        let fr = SpectralFrame::new(&h, 0.0, BandSelector::GROUND).unwrap();
        let z = c(0.3, 0.2);
        let r = fr.resolvent(z).unwrap();
        let shifted = &h - CMatrix::identity(6, 6) * z;
        assert!(linalg::op_norm(&(shifted * r - CMatrix::identity(6, 6))) < 1e-12);
    }

    #[test]
    fn tracking_constant_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_hermitian(3, &mut rng);
        let fam = HamiltonianFamily::interpolating(h.clone(), h, bump()).unwrap();
        let path = track_band(&fam, &uniform_grid(11), BandSelector::GROUND).unwrap();
        let first = &path.frames[0];
        for f in &path.frames {
            assert!(linalg::op_norm(&(&f.projector - &first.projector)) < 1e-12);
        }
        assert_eq!(path.min_gap, first.gap);

        let two = track_band(&fam, &[0.0, 1.0], BandSelector::GROUND).unwrap();
        assert!(linalg::op_norm(&(&two.frames[1].projector - &two.frames[0].projector)) < 0.5);
    }

    #[test]
    fn tracking_two_level_min_gap() {
        let delta = 0.1;
        let fam = HamiltonianFamily::two_level(delta, bump()).unwrap();
        let path = track_band(&fam, &uniform_grid(2001), BandSelector::GROUND).unwrap();
        // oracle: closed-form gap 2 sqrt((1-2f)^2 + δ^2) minimized on a finer grid
        let sched = fam.schedule();
        let oracle = (0..=20_000)
            .map(|i| {
                let f = sched.value(i as f64 / 20_000.0);
                2.0 * ((1.0 - 2.0 * f).powi(2) + delta * delta).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((path.min_gap - oracle).abs() < 1e-9);
        assert!(path.min_gap >= 2.0 * delta * (1.0 - 1e-6) && path.min_gap <= 2.0 * delta * (1.0 + 1e-6));
    }

    #[test]
    fn tracking_follows_a_crossing() {
        // diag(1-2f, -(1-2f)) + tiny: a true crossing, tracked by overlap across the grid
        let fam = HamiltonianFamily::interpolating(sigma_z(), -sigma_z(), bump()).unwrap();
        let grid: Vec<f64> = uniform_grid(20).into_iter().collect();
        let path = track_band(&fam, &grid, BandSelector::GROUND);
        // the ground band at s=0 is e_2; it stays e_2 though it becomes the upper level
        let path = path.unwrap();
        let last = path.frames.last().unwrap();
        assert!((last.projector[(1, 1)].re - 1.0).abs() < 1e-12);
        assert_eq!(last.band, 1..2);
    }

    #[test]
    fn unsorted_grid_rejected() {
        let fam = HamiltonianFamily::two_level(0.2, bump()).unwrap();
        assert!(track_band(&fam, &[0.5, 0.1], BandSelector::GROUND).is_err());
    }
}
