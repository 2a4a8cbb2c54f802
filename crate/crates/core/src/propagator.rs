//! Time evolution i ψ' = τ H(s) ψ on s ∈ [0, s_max].
//!
//! Dormand–Prince 5(4) with adaptive steps on [0, 1]. Each state is carried
//! as φ with ψ = exp(−iτθ) φ, where θ' = ρ(φ) = Re⟨φ|H|φ⟩ / ⟨φ|φ⟩ and
//! φ' = −iτ (H − ρ) φ. The substitution only moves the dynamical phase into
//! θ; it keeps φ slowly varying so the error control acts on the
//! non-adiabatic part rather than on the fast global rotation. For s > 1
//! the Hamiltonian is frozen and the exact exponential is applied.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::{BandSelector, HamiltonianFamily, SpectralFrame};
use crate::linalg::{self, CMatrix, CVector};

pub const DEFAULT_TOLERANCE: f64 = 1e-11;
const DEFAULT_MAX_STEPS: usize = 200_000_000;
const MIN_STEP: f64 = 1e-15;
/// |R(iy)| ≤ 1 for the Dormand–Prince stability function only up to y ≈ 0.95;
/// larger steps let unresolved small components grow
const STABILITY_LIMIT: f64 = 0.9;
const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// local error target, relative and absolute
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

/// H(s) = H_I + f(s) (H_F − H_I) in flat row-major storage.
struct Generator<'a> {
    fam: &'a HamiltonianFamily,
    n: usize,
    hi: Vec<Complex64>,
    d: Vec<Complex64>,
}

impl<'a> Generator<'a> {
    fn new(fam: &'a HamiltonianFamily) -> Self {
        let n = fam.dimension();
        let flat = |m: &CMatrix| -> Vec<Complex64> {
            (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| m[(r, c)]).collect()
        };
        Self {
            fam,
            n,
            hi: flat(fam.initial()),
            d: flat(fam.difference()),
        }
    }

    /// out = H(s) x, returns ⟨x|H|x⟩ real part and ⟨x|x⟩.
    fn apply(&self, s: f64, x: &[Complex64], out: &mut [Complex64]) -> (f64, f64) {
        let f = self.fam.schedule().value(s);
        let n = self.n;
        let mut energy = 0.0;
        let mut norm = 0.0;
        for r in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            let row = r * n;
            for c in 0..n {
                acc += (self.hi[row + c] + self.d[row + c] * f) * x[c];
            }
            out[r] = acc;
            energy += (x[r].conj() * acc).re;
            norm += x[r].norm_sqr();
        }
        (energy, norm)
    }
}

// Dormand–Prince tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One column: φ, θ and the derivative buffers.
struct ShiftedState {
    phi: Vec<Complex64>,
    theta: f64,
}

struct Stepper<'a> {
    gen: Generator<'a>,
    tau: f64,
    k: Vec<Vec<Complex64>>,
    kt: [f64; 7],
    hx: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl<'a> Stepper<'a> {
    fn new(fam: &'a HamiltonianFamily, tau: f64) -> Self {
        let gen = Generator::new(fam);
        let n = gen.n;
        Self {
            gen,
            tau,
            k: vec![vec![Complex64::new(0.0, 0.0); n]; 7],
            kt: [0.0; 7],
            hx: vec![Complex64::new(0.0, 0.0); n],
            stage: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// k = −iτ (H − ρ) x, returns ρ.
    fn rhs(&mut self, s: f64, from_stage: bool, slot: usize, phi: &[Complex64]) -> f64 {
        let x: &[Complex64] = if from_stage { &self.stage } else { phi };
        let (e, nn) = self.gen.apply(s, x, &mut self.hx);
        let rho = e / nn;
        let scale = Complex64::new(0.0, -self.tau);
        for i in 0..x.len() {
            self.k[slot][i] = scale * (self.hx[i] - x[i] * rho);
        }
        self.kt[slot] = rho;
        rho
    }

    /// Attempt a step of size h from (s, y). Returns the scaled error norm
    /// and writes the 5th-order solution into `out`.
    fn attempt(&mut self, s: f64, h: f64, y: &ShiftedState, out: &mut ShiftedState, tol: f64, fresh: bool) -> f64 {
        let n = y.phi.len();
        if fresh {
            self.rhs(s, false, 0, &y.phi);
        }
        for st in 1..7 {
            for i in 0..n {
                let mut acc = y.phi[i];
                for (j, a) in A[st].iter().enumerate().take(st) {
                    if *a != 0.0 {
                        acc += self.k[j][i] * (h * a);
                    }
                }
                self.stage[i] = acc;
            }
            self.rhs(s + C[st] * h, true, st, &[]);
        }
        // stage 6 input is the 5th-order solution (FSAL)
        let mut theta = y.theta;
        for j in 0..6 {
            theta += h * A[6][j] * self.kt[j];
        }
        out.phi.copy_from_slice(&self.stage);
        out.theta = theta;
        let mut err2 = 0.0;
        for i in 0..n {
            let mut e = Complex64::new(0.0, 0.0);
            for (j, w) in E.iter().enumerate() {
                if *w != 0.0 {
                    e += self.k[j][i] * (h * w);
                }
            }
            let scale = tol * (1.0 + y.phi[i].norm().max(out.phi[i].norm()));
            err2 += (e.re / scale).powi(2) + (e.im / scale).powi(2);
        }
        (err2 / (2 * n) as f64).sqrt()
    }
}

/// Integrate one state on [0, 1], recording ψ at the sorted `stops` ≤ 1.
fn integrate_unit(
    fam: &HamiltonianFamily,
    tau: f64,
    psi0: &CVector,
    stops: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<CVector>> {
    let n = psi0.len();
    let to_vector = |st: &ShiftedState| -> CVector {
        let phase = Complex64::from_polar(1.0, -tau * st.theta);
        CVector::from_iterator(n, st.phi.iter().map(|z| z * phase))
    };
    let mut y = ShiftedState {
        phi: psi0.iter().cloned().collect(),
        theta: 0.0,
    };
    let mut out = Vec::with_capacity(stops.len());
    if tau == 0.0 {
        return Ok(stops.iter().map(|_| psi0.clone()).collect());
    }
    let mut stepper = Stepper::new(fam, tau);
    let mut trial = ShiftedState {
        phi: y.phi.clone(),
        theta: 0.0,
    };
    // |E_k(s) − ρ| never exceeds the spectral spread of H(s), at most 2 max ‖H‖
    let norm_h = linalg::op_norm(fam.initial()).max(linalg::op_norm(fam.final_hamiltonian()));
    let h_max = STABILITY_LIMIT / (tau * 2.0 * norm_h.max(1e-300));
    let mut h = (0.01 / (tau * norm_h.max(1e-3))).min(h_max);
    let mut s = 0.0;
    let mut fresh = true;
    let mut steps = 0usize;
    let mut next = 0;
    while next < stops.len() && stops[next] <= 0.0 {
        out.push(to_vector(&y));
        next += 1;
    }
    while next < stops.len() {
        let target = stops[next];
        let mut step = h.min(target - s);
        let hits = step >= target - s;
        if hits {
            step = target - s;
        }
        let err = stepper.attempt(s, step, &y, &mut trial, opts.tolerance, fresh);
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Stiffness { s, h: step });
        }
        if err <= 1.0 {
            s = if hits { target } else { s + step };
            std::mem::swap(&mut y, &mut trial);
            // FSAL: stage 7 derivative is the first of the next step
            stepper.k.swap(0, 6);
            stepper.kt[0] = stepper.kt[6];
            fresh = false;
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = if hits { h.max(step * grow) } else { step * grow }.min(h_max);
            if hits {
                out.push(to_vector(&y));
                next += 1;
            }
        } else {
            h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            fresh = false;
            if h < MIN_STEP * s.max(1.0) {
                return Err(Error::Stiffness { s, h });
            }
        }
    }
    Ok(out)
}

/// exp(−iτ t H) for a fixed Hermitian H.
pub fn frozen_propagator(h: &CMatrix, tau: f64, t: f64) -> CMatrix {
    let eig = crate::hamiltonian::Eigensystem::new(h);
    let n = eig.energies.len();
    let phases = CVector::from_iterator(n, eig.energies.iter().map(|&e| Complex64::from_polar(1.0, -tau * t * e)));
    &eig.vectors * CMatrix::from_diagonal(&phases) * eig.vectors.adjoint()
}

fn validate_samples(samples: &[f64]) -> Result<()> {
    if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Validation("sample points must be finite and non-negative".into()));
    }
    Ok(())
}

/// States at arbitrary (unsorted) sample points.
fn propagate(
    fam: &HamiltonianFamily,
    tau: f64,
    psi0: &CVector,
    samples: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<CVector>> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let mut stops: Vec<f64> = order.iter().map(|&i| samples[i].min(1.0)).collect();
    let needs_end = samples.iter().any(|&s| s > 1.0);
    if needs_end {
        stops.push(1.0);
    }
    let states = integrate_unit(fam, tau, psi0, &stops, opts)?;
    let end = states.last().cloned();
    let hf = fam.at(1.0);
    let mut out = vec![CVector::zeros(psi0.len()); samples.len()];
    for (rank, &i) in order.iter().enumerate() {
        let s = samples[i];
        out[i] = if s > 1.0 {
            frozen_propagator(&hf, tau, s - 1.0) * end.as_ref().expect("end state recorded")
        } else {
            states[rank].clone()
        };
    }
    Ok(out)
}

/// ‖(I − P) ψ‖, the distance from ψ to Range P.
pub fn adiabatic_distance(psi: &CVector, frame: &SpectralFrame) -> f64 {
    let inside = &frame.projector * psi;
    linalg::vec_norm(&(psi - inside))
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: f64,
    pub samples: Vec<f64>,
    pub states: Vec<CVector>,
    pub distances: Vec<f64>,
    pub gaps: Vec<f64>,
    /// per-sample |‖ψ‖ − 1|
    pub norm_drift: Vec<f64>,
}

impl Trajectory {
    pub fn max_norm_drift(&self) -> f64 {
        self.norm_drift.iter().cloned().fold(0.0, f64::max)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::Validation(format!("run time must be finite and non-negative, got {tau}")));
    }
    Ok(())
}

/// Evolve `psi0` and measure its distance from the band at each sample.
pub fn evolve(
    fam: &HamiltonianFamily,
    band: BandSelector,
    tau: f64,
    psi0: &CVector,
    samples: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    check_tau(tau)?;
    validate_samples(samples)?;
    if psi0.len() != fam.dimension() {
        return Err(Error::Validation(format!(
            "initial state has length {}, family dimension is {}",
            psi0.len(),
            fam.dimension()
        )));
    }
    if (linalg::vec_norm(psi0) - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Validation("initial state must be normalized".into()));
    }
    let states = propagate(fam, tau, psi0, samples, opts)?;
    let mut distances = Vec::with_capacity(samples.len());
    let mut gaps = Vec::with_capacity(samples.len());
    for (s, psi) in samples.iter().zip(&states) {
        let frame = fam.spectral_frame(s.min(1.0), band)?;
        distances.push(adiabatic_distance(psi, &frame));
        gaps.push(frame.gap);
    }
    let norm_drift = states.iter().map(|p| (linalg::vec_norm(p) - 1.0).abs()).collect();
    Ok(Trajectory {
        tau,
        samples: samples.to_vec(),
        states,
        distances,
        gaps,
        norm_drift,
    })
}

/// First eigenvector of the band at s = 0.
pub fn default_initial_state(fam: &HamiltonianFamily, band: BandSelector) -> Result<CVector> {
    let frame = fam.spectral_frame(0.0, band)?;
    Ok(frame.vectors.column(frame.band.start).into_owned())
}

#[derive(Debug, Clone)]
pub struct ProjectorTrajectory {
    pub tau: f64,
    pub samples: Vec<f64>,
    /// P_τ(s) = U P_I U†
    pub projectors: Vec<CMatrix>,
    /// U_τ(s, 0) in the eigenbasis of H_I: column k evolves the k-th eigenvector
    pub propagators: Vec<CMatrix>,
    pub band: std::ops::Range<usize>,
}

impl ProjectorTrajectory {
    /// max_i ‖U†U − I‖ (the basis change to H_I eigenvectors is unitary).
    pub fn unitarity_drift(&self) -> f64 {
        self.propagators
            .iter()
            .map(|u| {
                let n = u.nrows();
                linalg::op_norm(&(u.adjoint() * u - CMatrix::identity(n, n)))
            })
            .fold(0.0, f64::max)
    }
}

/// P_τ(s) by evolving the full eigenbasis of H_I; columns run in parallel.
pub fn heisenberg_projector(
    fam: &HamiltonianFamily,
    band: BandSelector,
    tau: f64,
    samples: &[f64],
    opts: &IntegratorOptions,
) -> Result<ProjectorTrajectory> {
    check_tau(tau)?;
    validate_samples(samples)?;
    let frame = fam.spectral_frame(0.0, band)?;
    let n = fam.dimension();
    let columns: Vec<Vec<CVector>> = (0..n)
        .into_par_iter()
        .map(|k| propagate(fam, tau, &frame.vectors.column(k).into_owned(), samples, opts))
        .collect::<Result<_>>()?;
    let mut projectors = Vec::with_capacity(samples.len());
    let mut propagators = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let u = CMatrix::from_fn(n, n, |r, k| columns[k][i][r]);
        let mut p = CMatrix::zeros(n, n);
        for k in frame.band.clone() {
            p += linalg::outer(&columns[k][i], &columns[k][i]);
        }
        projectors.push(p);
        propagators.push(u);
    }
    Ok(ProjectorTrajectory {
        tau,
        samples: samples.to_vec(),
        projectors,
        propagators,
        band: frame.band,
    })
}
