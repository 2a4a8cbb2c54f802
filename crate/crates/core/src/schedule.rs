//! Gevrey-class switching functions.
//!
//! The bump schedule is f(t) = ∫_{-∞}^t g, with g(s) = β exp(-1/(s(1-s)))
//! on (0, 1) and zero elsewhere. Derivatives of order k ≥ 1 come from the
//! closed form g^(m)(s) = β P_m(s) w^(-2m) e^(-1/w), w = s(1-s), where the
//! polynomials P_m carry exact integer coefficients and are evaluated
//! exactly at the (dyadic) argument before the final rounding.

use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{Float, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::quadrature::{self, GaussLegendre};

/// Highest derivative order served by the exact oracle.
pub const MAX_ORDER: usize = 24;

const BETA_TOLERANCE: f64 = 1e-12;
const PANELS: usize = 512;
const PANEL_RULE: usize = 16;

#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    alpha: f64,
}

#[derive(Debug, Clone)]
enum ScheduleKind {
    Bump(Arc<BumpProfile>),
    /// f ≡ value; every derivative vanishes.
    Constant(f64),
}

impl Schedule {
    /// The symmetric bump schedule (declared Gevrey order 2).
    pub fn bump() -> Result<Self> {
        Ok(Self {
            kind: ScheduleKind::Bump(Arc::new(BumpProfile::new()?)),
            alpha: 2.0,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant(value),
            alpha: 1.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bump" => Self::bump(),
            "constant" => Ok(Self::constant(0.0)),
            other => Err(Error::Config(format!("unknown schedule '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Bump(_) => "bump",
            ScheduleKind::Constant(_) => "constant",
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Normalization constant β, if this is a bump schedule.
    pub fn beta(&self) -> Option<f64> {
        match &self.kind {
            ScheduleKind::Bump(b) => Some(b.beta),
            ScheduleKind::Constant(_) => None,
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        match &self.kind {
            ScheduleKind::Bump(b) => b.value(s),
            ScheduleKind::Constant(v) => *v,
        }
    }

    /// f^(k)(s); k = 0 is the value itself.
    pub fn derivative(&self, s: f64, k: usize) -> Result<f64> {
        if k > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                requested: k,
                max: MAX_ORDER,
            });
        }
        if k == 0 {
            return Ok(self.value(s));
        }
        match &self.kind {
            ScheduleKind::Constant(_) => Ok(0.0),
            ScheduleKind::Bump(b) => Ok(b.derivative(s, k)),
        }
    }

    /// First derivative without the order check; used in the integrator's
    /// inner loop.
    pub fn rate(&self, s: f64) -> f64 {
        match &self.kind {
            ScheduleKind::Bump(b) => b.kernel(s),
            ScheduleKind::Constant(_) => 0.0,
        }
    }
}

#[derive(Debug)]
struct BumpProfile {
    beta: f64,
    /// cumulative unnormalized integrals at panel edges of [0, 1/2]
    cumulative: Vec<f64>,
    rule: GaussLegendre,
    /// P_m for m = 0..MAX_ORDER-1, coefficients in ascending powers of s
    polys: Vec<Vec<BigInt>>,
}

fn bump_kernel(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    (-1.0 / (s * (1.0 - s))).exp()
}

impl BumpProfile {
    fn new() -> Result<Self> {
        let total = quadrature::adaptive(&bump_kernel, 0.0, 1.0, BETA_TOLERANCE * 1e-3, 40)?;
        // second resolution must agree: guards against a lucky coarse estimate
        let check = quadrature::adaptive(&bump_kernel, 0.0, 1.0, BETA_TOLERANCE, 40)?;
        if (total - check).abs() > BETA_TOLERANCE {
            return Err(Error::Config(format!(
                "bump normalization quadrature disagrees across resolutions: {total} vs {check}"
            )));
        }
        let beta = 1.0 / total;
        let rule = GaussLegendre::new(PANEL_RULE);
        let width = 0.5 / PANELS as f64;
        let mut cumulative = Vec::with_capacity(PANELS + 1);
        cumulative.push(0.0);
        for p in 0..PANELS {
            let a = p as f64 * width;
            let next = cumulative[p] + rule.integrate(bump_kernel, a, a + width);
            cumulative.push(next);
        }
        Ok(Self {
            beta,
            cumulative,
            rule,
            polys: derivative_polynomials(MAX_ORDER),
        })
    }

    fn kernel(&self, s: f64) -> f64 {
        self.beta * bump_kernel(s)
    }

    fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        if s > 0.5 {
            return 1.0 - self.lower_half(1.0 - s);
        }
        self.lower_half(s)
    }

    fn lower_half(&self, s: f64) -> f64 {
        let width = 0.5 / PANELS as f64;
        let p = ((s / width) as usize).min(PANELS - 1);
        let a = p as f64 * width;
        let partial = if s > a {
            self.rule.integrate(bump_kernel, a, s)
        } else {
            0.0
        };
        self.beta * (self.cumulative[p] + partial)
    }

    fn derivative(&self, s: f64, k: usize) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        if k == 1 {
            return self.kernel(s);
        }
        let m = k - 1;
        let w = s * (1.0 - s);
        let Some((sign, ln_abs)) = eval_poly_log(&self.polys[m], s) else {
            return 0.0;
        };
        let ln_value = self.beta.ln() + ln_abs - 2.0 * m as f64 * w.ln() - 1.0 / w;
        sign * ln_value.exp()
    }
}

/// P_0 = 1, P_{m+1} = P_m' w^2 - 2m P_m w w' + P_m w'.
fn derivative_polynomials(count: usize) -> Vec<Vec<BigInt>> {
    let big = |v: i64| BigInt::from(v);
    let w_sq = [0, 0, 1, -2, 1].map(big); // s^2 - 2 s^3 + s^4
    let w_wp = [0, 1, -3, 2].map(big); // (s - s^2)(1 - 2s)
    let wp = [1, -2].map(big); // 1 - 2s
    let mut out: Vec<Vec<BigInt>> = vec![vec![big(1)]];
    for m in 0..count.saturating_sub(1) {
        let p = &out[m];
        let dp: Vec<BigInt> = p
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * BigInt::from(i as i64))
            .collect();
        let mut next = poly_mul(&dp, &w_sq);
        let scaled: Vec<BigInt> = poly_mul(p, &w_wp)
            .into_iter()
            .map(|c| c * BigInt::from(-2 * m as i64))
            .collect();
        poly_add_assign(&mut next, &scaled);
        poly_add_assign(&mut next, &poly_mul(p, &wp));
        while next.len() > 1 && next.last().is_some_and(|c| c.is_zero()) {
            next.pop();
        }
        out.push(next);
    }
    out
}

fn poly_mul(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![BigInt::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add_assign(acc: &mut Vec<BigInt>, other: &[BigInt]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), BigInt::zero());
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Exact evaluation of an integer polynomial at a finite positive double,
/// returned as (sign, ln |value|). `None` when the value is exactly zero.
fn eval_poly_log(coeffs: &[BigInt], s: f64) -> Option<(f64, f64)> {
    let (mantissa, exponent, _) = s.integer_decode();
    let degree = coeffs.len() - 1;
    let mant = BigInt::from(mantissa);
    // s = mant * 2^exponent; scale by 2^(-exponent * degree) to stay integral
    let (num, shift) = if exponent < 0 {
        let e = (-exponent) as usize;
        let mut acc = coeffs[degree].clone();
        for i in (0..degree).rev() {
            acc = acc * &mant + (&coeffs[i] << (e * (degree - i)));
        }
        (acc, -((e * degree) as f64))
    } else {
        let x = &mant << exponent as usize;
        let mut acc = coeffs[degree].clone();
        for i in (0..degree).rev() {
            acc = acc * &x + &coeffs[i];
        }
        (acc, 0.0)
    };
    if num.is_zero() {
        return None;
    }
    let sign = if num.is_negative() { -1.0 } else { 1.0 };
    let mag = num.abs();
    let bits = mag.bits();
    let drop = bits.saturating_sub(60);
    let top = (mag >> drop).to_f64().expect("60-bit integer fits in f64");
    let ln_abs = top.ln() + (drop as f64 + shift) * std::f64::consts::LN_2;
    Some((sign, ln_abs))
}

/// Certified Gevrey constants: max_s |f^(k)(s)| ≤ C R^k k^(αk) for 1 ≤ k ≤ k_max.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GevreyFit {
    pub c: f64,
    pub r: f64,
    pub alpha: f64,
    pub k_max: usize,
}

impl GevreyFit {
    /// Constants for c·f, e.g. H(s) with ‖H_F − H_I‖ = c. Both stay ≥ 1.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            c: (self.c * factor).max(1.0),
            ..*self
        }
    }

    pub fn ln_bound(&self, k: usize) -> f64 {
        let kf = k as f64;
        let kk = if k == 0 { 0.0 } else { self.alpha * kf * kf.ln() };
        self.c.ln() + kf * self.r.ln() + kk
    }
}

pub const GEVREY_SAMPLES: usize = 2001;

/// ln max_s |f^(k)(s)| for k = 1..=k_max on a uniform interior grid
/// (`-inf` for identically vanishing derivatives).
pub fn derivative_maxima(sched: &Schedule, k_max: usize, samples: usize) -> Result<Vec<f64>> {
    let grid: Vec<f64> = (1..samples + 1)
        .map(|i| i as f64 / (samples + 1) as f64)
        .collect();
    (1..=k_max)
        .map(|k| {
            let mut best = f64::NEG_INFINITY;
            for &s in &grid {
                let v = sched.derivative(s, k)?.abs();
                if v > 0.0 {
                    best = best.max(v.ln());
                }
            }
            Ok(best)
        })
        .collect()
}

/// Smallest C·R on the search lattice C ∈ {2^0..2^20}, R ∈ 200 log-spaced
/// points of [1, 10^3] that dominates the sampled derivative maxima.
pub fn fit_gevrey_constants(sched: &Schedule, alpha: f64, k_max: usize) -> Result<GevreyFit> {
    if alpha <= 1.0 {
        return Err(Error::Validation(format!("alpha must exceed 1, got {alpha}")));
    }
    if k_max < 2 {
        return Err(Error::Validation(format!("k_max must be at least 2, got {k_max}")));
    }
    if k_max > MAX_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: k_max,
            max: MAX_ORDER,
        });
    }
    let maxima = derivative_maxima(sched, k_max, GEVREY_SAMPLES)?;
    let feasible = |c: f64, r: f64| {
        let fit = GevreyFit { c, r, alpha, k_max };
        maxima
            .iter()
            .enumerate()
            .all(|(i, &m)| m <= fit.ln_bound(i + 1))
    };
    let r_grid: Vec<f64> = (0..200).map(|i| 10f64.powf(3.0 * i as f64 / 199.0)).collect();
    let mut best: Option<(f64, f64)> = None;
    for e in 0..=20 {
        let c = 2f64.powi(e);
        // feasibility is monotone in R, so the first feasible R is the best for this C
        if let Some(&r) = r_grid.iter().find(|&&r| feasible(c, r)) {
            let better = match best {
                None => true,
                Some((bc, br)) => c * r < bc * br,
            };
            if better {
                best = Some((c, r));
            }
        }
    }
    let (c, r) = best.ok_or(Error::GevreyFitFailure { alpha, k_max })?;
    let fit = GevreyFit { c, r, alpha, k_max };
    debug_assert!(feasible(c, r));
    Ok(fit)
}

/// Rows (s, f, f', …, f^(k)) on `points` uniformly spaced values of [0, 1].
pub fn derivative_table(sched: &Schedule, points: usize, k: usize) -> Result<Vec<Vec<f64>>> {
    let points = points.max(2);
    (0..points)
        .map(|i| {
            let s = i as f64 / (points - 1) as f64;
            let mut row = vec![s];
            for order in 0..=k {
                row.push(sched.derivative(s, order)?);
            }
            Ok(row)
        })
        .collect()
}
