//! Explicit bounds for the expansion coefficients, the truncation
//! remainder and the resulting run-time threshold. Everything is evaluated
//! in log-space; the magnitudes involved overflow doubles for modest orders.

pub mod appendix;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use appendix::{verify_appendix, AppendixRanges, VerificationReport};

/// Gevrey constants C, R, exponent α and gap g entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub c: f64,
    pub r: f64,
    pub alpha: f64,
    pub g: f64,
}

impl BoundParams {
    pub fn new(c: f64, r: f64, alpha: f64, g: f64) -> Result<Self> {
        let p = Self { c, r, alpha, g };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 1.0 && self.r >= 1.0) {
            return Err(Error::Validation(format!(
                "C and R must be at least 1, got C = {}, R = {}",
                self.c, self.r
            )));
        }
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(Error::Validation(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.g > 0.0 && self.g <= 1.0) {
            return Err(Error::Validation(format!("gap must lie in (0, 1], got {}", self.g)));
        }
        Ok(())
    }

    /// ln(2CR)
    fn ln_2cr(&self) -> f64 {
        (2.0 * self.c * self.r).ln()
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Range(format!("{what} is not representable even in log-space")))
    }
}

fn checked_exp(ln: f64, what: &str) -> Result<f64> {
    let v = ln.exp();
    if v.is_infinite() {
        return Err(Error::Range(format!("{what} = exp({ln:.6e}) overflows")));
    }
    Ok(v)
}

/// ln L(n, k) with L(n, k) = (10n + 0.3)^(-2) g^(-2n-k) (2CR (k+3n)^(2α))^(k+3n).
pub fn ln_l_bound(n: u32, k: u32, p: &BoundParams) -> Result<f64> {
    let m = k as f64 + 3.0 * n as f64;
    let mut ln = -2.0 * (10.0 * n as f64 + 0.3).ln() - (2.0 * n as f64 + k as f64) * p.g.ln();
    if m > 0.0 {
        ln += m * (p.ln_2cr() + 2.0 * p.alpha * m.ln());
    }
    finite(ln, "L(n, k)")
}

pub fn l_bound(n: u32, k: u32, p: &BoundParams) -> Result<f64> {
    checked_exp(ln_l_bound(n, k, p)?, "L(n, k)")
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Validation(format!("tau must be positive and finite, got {tau}")));
    }
    Ok(())
}

/// ln of (τ/g)^(1/3) (2CR (3N+1)^(2α) / (τg²)^(1/3))^(3N+1).
pub fn ln_remainder_bound(n: u32, tau: f64, p: &BoundParams) -> Result<f64> {
    check_tau(tau)?;
    let m = 3.0 * n as f64 + 1.0;
    let ln = (tau / p.g).ln() / 3.0 + m * (p.ln_2cr() + 2.0 * p.alpha * m.ln() - (tau * p.g * p.g).ln() / 3.0);
    finite(ln, "remainder bound")
}

/// The same quantity written as τ^(-N) g^(-2N-1) (2CR (3N+1)^(2α))^(3N+1).
pub fn ln_remainder_bound_expanded(n: u32, tau: f64, p: &BoundParams) -> Result<f64> {
    check_tau(tau)?;
    let m = 3.0 * n as f64 + 1.0;
    let ln = -(n as f64) * tau.ln() - (2.0 * n as f64 + 1.0) * p.g.ln() + m * (p.ln_2cr() + 2.0 * p.alpha * m.ln());
    finite(ln, "remainder bound")
}

pub fn remainder_bound(n: u32, tau: f64, p: &BoundParams) -> Result<f64> {
    Ok(ln_remainder_bound(n, tau, p)?.exp())
}

/// x = (τg²)^(1/3) / (2CR), the scale that controls the truncation order.
fn truncation_scale(tau: f64, p: &BoundParams) -> f64 {
    (tau * p.g * p.g).cbrt() / (2.0 * p.c * p.r)
}

/// Continuous minimizer m* = x^(1/2α) / e of the remainder over m = 3N + 1.
pub fn continuous_optimum(tau: f64, p: &BoundParams) -> f64 {
    truncation_scale(tau, p).powf(1.0 / (2.0 * p.alpha)) * (-1.0f64).exp()
}

/// ln of the envelope (τ/g)^(1/3) exp(−2α x^(1/2α) / e).
pub fn ln_remainder_envelope(tau: f64, p: &BoundParams) -> f64 {
    (tau / p.g).ln() / 3.0 - 2.0 * p.alpha * continuous_optimum(tau, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationPlan {
    pub n_opt: u32,
    pub tau: f64,
    pub m_star: f64,
    /// the integer candidates that bracket m* among orders with 3N + 1 ≡ 1 (mod 3)
    pub candidates: (u32, u32),
    pub ln_remainder: f64,
    pub remainder_estimate: f64,
    pub partial_sum_estimate: f64,
}

/// Truncation order minimizing the remainder bound.
///
/// The remainder, as a function of m = 3N + 1, is log-convex with
/// continuous minimizer m*; the optimum over admissible m therefore sits at
/// N = ⌊(m* − 1)/3⌋ or ⌈(m* − 1)/3⌉. The two are compared directly and
/// ties go to the smaller order.
pub fn optimal_truncation(tau: f64, p: &BoundParams) -> Result<TruncationPlan> {
    p.validate()?;
    check_tau(tau)?;
    let x = truncation_scale(tau, p);
    if x < (2.0 * p.alpha).exp() {
        return Err(Error::InfeasibleTruncation(format!(
            "(τg²)^(1/3)/(2CR) = {x:.4e} is below e^(2α) = {:.4e}; tau {tau:e} is too small for gap {}",
            (2.0 * p.alpha).exp(),
            p.g
        )));
    }
    let m_star = continuous_optimum(tau, p);
    let t = ((m_star - 1.0) / 3.0).max(0.0);
    let lo = t.floor() as u32;
    let hi = t.ceil() as u32;
    let ln_lo = ln_remainder_bound(lo, tau, p)?;
    let ln_hi = ln_remainder_bound(hi, tau, p)?;
    let (n_opt, ln_remainder) = if ln_hi < ln_lo { (hi, ln_hi) } else { (lo, ln_lo) };
    let partial = partial_sum_terms(n_opt, tau, p)?;
    Ok(TruncationPlan {
        n_opt,
        tau,
        m_star,
        candidates: (lo, hi),
        ln_remainder,
        remainder_estimate: ln_remainder.exp(),
        partial_sum_estimate: partial,
    })
}

/// Direct argmin of the remainder bound over N ∈ [0, n_max]; smaller N on ties.
pub fn brute_force_truncation(tau: f64, p: &BoundParams, n_max: u32) -> Result<u32> {
    let mut best = (0, ln_remainder_bound(0, tau, p)?);
    for n in 1..=n_max {
        let v = ln_remainder_bound(n, tau, p)?;
        if v < best.1 {
            best = (n, v);
        }
    }
    Ok(best.0)
}

/// Σ_{j=1}^{N} (τg²)^(-j) (2CR (3j)^(2α))^(3j), each term formed in log-space.
fn partial_sum_terms(n: u32, tau: f64, p: &BoundParams) -> Result<f64> {
    let ln_tg2 = (tau * p.g * p.g).ln();
    let mut sum = 0.0;
    for j in 1..=n {
        let m = 3.0 * j as f64;
        sum += (-(j as f64) * ln_tg2 + m * (p.ln_2cr() + 2.0 * p.alpha * m.ln())).exp();
    }
    finite(sum, "partial sum")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSumBound {
    pub direct: f64,
    /// 2 (K^(-1) (2CR)^(3/2) (τg²)^(-1/2) + K^(-√N))
    pub closing: f64,
}

pub fn partial_sum_bound(plan: &TruncationPlan, p: &BoundParams, k_const: f64) -> Result<PartialSumBound> {
    if !(k_const > 0.0) {
        return Err(Error::Validation(format!("K must be positive, got {k_const}")));
    }
    let direct = partial_sum_terms(plan.n_opt, plan.tau, p)?;
    let closing = 2.0
        * ((2.0 * p.c * p.r).powf(1.5) / (k_const * (plan.tau * p.g * p.g).sqrt())
            + k_const.powf(-(plan.n_opt as f64).sqrt()));
    Ok(PartialSumBound { direct, closing })
}

/// τ(g) = K g^(-2) |ln g|^(6α).
pub fn tau_threshold(g: f64, alpha: f64, k_const: f64) -> Result<f64> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::Domain(format!("gap must lie in (0, 1), got {g}")));
    }
    if !(k_const > 0.0) {
        return Err(Error::Validation(format!("K must be positive, got {k_const}")));
    }
    if k_const <= 2.0 {
        log::warn!("K = {k_const} is at or below 2; the tail estimate for the partial sum needs K > 2");
    }
    Ok(k_const * g.powi(-2) * g.ln().abs().powf(6.0 * alpha))
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsSummary {
    pub params: BoundParams,
    pub l_table: Vec<LEntry>,
    pub tau: Option<f64>,
    pub plan: Option<TruncationPlan>,
    pub partial_sum: Option<PartialSumBound>,
    pub tau_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LEntry {
    pub n: u32,
    pub k: u32,
    pub ln_l: f64,
}

/// Everything the `bounds` subcommand reports for one parameter set.
pub fn summarize(p: &BoundParams, n_max: u32, tau: Option<f64>, k_const: f64) -> Result<BoundsSummary> {
    p.validate()?;
    let mut l_table = Vec::new();
    for n in 0..=n_max {
        for k in 0..=1 {
            l_table.push(LEntry {
                n,
                k,
                ln_l: ln_l_bound(n, k, p)?,
            });
        }
    }
    let plan = match tau {
        Some(t) => Some(optimal_truncation(t, p)?),
        None => None,
    };
    let partial_sum = match &plan {
        Some(pl) => Some(partial_sum_bound(pl, p, k_const)?),
        None => None,
    };
    let tau_threshold = if p.g < 1.0 {
        Some(tau_threshold(p.g, p.alpha, k_const)?)
    } else {
        None
    };
    Ok(BoundsSummary {
        params: *p,
        l_table,
        tau,
        plan,
        partial_sum,
        tau_threshold,
    })
}
