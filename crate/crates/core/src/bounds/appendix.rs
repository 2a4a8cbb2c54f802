//! Exhaustive check of the combinatorial inequalities behind the
//! coefficient bounds, in 256-bit floating point.
//!
//! With P_α(m) = m^(αm) (and 0^0 = 1) the checked families are
//!
//! ```text
//! binomial_power        C(k; k1, k2) P(k1+n) P(k2)            ≤ 4^(-(α-1) min(k1+n, k2)) P(k+n)
//! shifted_binomial      C(k; k1, k2) P(k1+n+1-i) P(k2+i)      ≤ 4^(-(α-1) min(k1+1, k2+1)) P(k+n+1)
//! weighted_double_sum   Σ_i Σ_{k1+k2=k} w(n,i) C(k; k1, k2)
//!                         P(k1+3(n+1-i)) P(k2+3i)             ≤ 0.05 κ_α P(k+3(n+1)) / (10n+10.3)²
//! reciprocal_square_sum Σ_i w(n,i)                             < 0.05 / (10n+10.3)²
//! trinomial_power       Σ C(k; k1, k2, k3) P(k1+n) P(k2) P(k3) ≤ κ_α² P(k+n)
//! quadrinomial_power    same with four parts                   ≤ κ_α³ P(k+n)
//! ```
//!
//! where w(n,i) = (10n+10.3−10i)^(-2) (10i+0.3)^(-2) and
//! κ_α = 4^(-(α-3/2)) / (1 − 4^(-(α-1))).

use std::io::Write;
use std::path::Path;

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;
/// Non-strict inequalities hold with equality on some instances; rounding at
/// 256 bits stays far below this.
const EQUALITY_SLACK: f64 = 1e-50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixRanges {
    /// k1, k2 ∈ [0, binomial_k_max], n ∈ binomial_n
    pub binomial_k_max: u32,
    pub binomial_n: (u32, u32),
    pub binomial_alphas: Vec<f64>,
    pub double_sum_k: (u32, u32),
    pub double_sum_n: (u32, u32),
    pub double_sum_alphas: Vec<f64>,
    pub reciprocal_n: (u32, u32),
    pub multinomial_k: (u32, u32),
    pub multinomial_n: (u32, u32),
    pub multinomial_alphas: Vec<f64>,
}

impl Default for AppendixRanges {
    fn default() -> Self {
        Self {
            binomial_k_max: 12,
            binomial_n: (1, 8),
            binomial_alphas: vec![1.0, 1.5, 2.0, 3.0],
            double_sum_k: (1, 10),
            double_sum_n: (0, 10),
            double_sum_alphas: vec![1.5, 2.0, 3.0],
            reciprocal_n: (1, 100),
            multinomial_k: (1, 8),
            multinomial_n: (0, 6),
            multinomial_alphas: vec![1.5, 2.0, 3.0],
        }
    }
}

impl AppendixRanges {
    fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (u32, u32), what: &str| {
            if a > b {
                Err(Error::Validation(format!("{what}: empty range ({a}, {b})")))
            } else {
                Ok(())
            }
        };
        ordered(self.binomial_n, "binomial_n")?;
        ordered(self.double_sum_k, "double_sum_k")?;
        ordered(self.double_sum_n, "double_sum_n")?;
        ordered(self.reciprocal_n, "reciprocal_n")?;
        ordered(self.multinomial_k, "multinomial_k")?;
        ordered(self.multinomial_n, "multinomial_n")?;
        if self.binomial_n.0 == 0 {
            return Err(Error::Validation("binomial_n must start at 1".into()));
        }
        if self.binomial_alphas.iter().any(|a| !(*a >= 1.0)) {
            return Err(Error::Validation("binomial alphas must be at least 1".into()));
        }
        for a in self.double_sum_alphas.iter().chain(&self.multinomial_alphas) {
            if !(*a > 1.0) {
                return Err(Error::Validation(format!("alpha {a} must exceed 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    BinomialPower,
    ShiftedBinomial,
    WeightedDoubleSum,
    ReciprocalSquareSum,
    TrinomialPower,
    QuadrinomialPower,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::BinomialPower,
        Family::ShiftedBinomial,
        Family::WeightedDoubleSum,
        Family::ReciprocalSquareSum,
        Family::TrinomialPower,
        Family::QuadrinomialPower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::BinomialPower => "binomial_power",
            Family::ShiftedBinomial => "shifted_binomial",
            Family::WeightedDoubleSum => "weighted_double_sum",
            Family::ReciprocalSquareSum => "reciprocal_square_sum",
            Family::TrinomialPower => "trinomial_power",
            Family::QuadrinomialPower => "quadrinomial_power",
        }
    }

    fn strict(self) -> bool {
        matches!(self, Family::ReciprocalSquareSum)
    }
}

/// One instance: which inequality, its indices, ln of both sides and the
/// margin ln(rhs) − ln(lhs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Instance {
    pub family: Family,
    pub alpha: f64,
    pub k: u32,
    pub k1: u32,
    pub k2: u32,
    pub n: u32,
    pub i: u32,
    pub ln_lhs: f64,
    pub ln_rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilySummary {
    pub family: Family,
    pub instances: usize,
    pub failures: usize,
    pub worst_margin: f64,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub instances: Vec<Instance>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.instances.iter().all(|x| x.pass)
    }

    pub fn failures(&self) -> usize {
        self.instances.iter().filter(|x| !x.pass).count()
    }

    pub fn summary(&self) -> Vec<FamilySummary> {
        Family::ALL
            .iter()
            .filter_map(|&family| {
                let of: Vec<&Instance> = self.instances.iter().filter(|x| x.family == family).collect();
                if of.is_empty() {
                    return None;
                }
                Some(FamilySummary {
                    family,
                    instances: of.len(),
                    failures: of.iter().filter(|x| !x.pass).count(),
                    worst_margin: of.iter().map(|x| x.margin).fold(f64::INFINITY, f64::min),
                })
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let csv_err = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        w.write_record(["family", "alpha", "k", "k1", "k2", "n", "i", "ln_lhs", "ln_rhs", "margin", "pass"])
            .map_err(csv_err)?;
        for x in &self.instances {
            w.write_record([
                x.family.name().to_string(),
                x.alpha.to_string(),
                x.k.to_string(),
                x.k1.to_string(),
                x.k2.to_string(),
                x.n.to_string(),
                x.i.to_string(),
                x.ln_lhs.to_string(),
                x.ln_rhs.to_string(),
                x.margin.to_string(),
                x.pass.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Human-readable per-family table.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{:<22} {:>9} {:>9} {:>14}", "family", "instances", "failures", "worst margin")?;
        for s in self.summary() {
            writeln!(
                out,
                "{:<22} {:>9} {:>9} {:>14.6e}",
                s.family.name(),
                s.instances,
                s.failures,
                s.worst_margin
            )?;
        }
        Ok(())
    }
}

/// Extended-precision scratch context; the constants cache is per thread.
struct Ctx {
    cc: Consts,
}

fn int(v: u64) -> BigFloat {
    BigFloat::from_word(v, PREC)
}

fn ratio(num: u64, den: u64) -> BigFloat {
    int(num).div(&int(den), PREC, RM)
}

impl Ctx {
    fn new() -> Self {
        Self {
            cc: Consts::new().expect("constants cache"),
        }
    }

    /// m^(αm) with 0^0 = 1.
    fn self_power(&mut self, m: u32, alpha: &BigFloat) -> BigFloat {
        if m == 0 {
            return int(1);
        }
        let e = alpha.mul(&int(m as u64), PREC, RM);
        int(m as u64).pow(&e, PREC, RM, &mut self.cc)
    }

    fn pow(&mut self, base: &BigFloat, e: &BigFloat) -> BigFloat {
        base.pow(e, PREC, RM, &mut self.cc)
    }

    fn ln(&mut self, x: &BigFloat) -> f64 {
        if x.is_zero() {
            return f64::NEG_INFINITY;
        }
        let l = x.ln(PREC, RM, &mut self.cc);
        self.to_f64(&l)
    }

    fn to_f64(&mut self, x: &BigFloat) -> f64 {
        x.format(Radix::Dec, RM, &mut self.cc)
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN)
    }

    /// 4^(-(α-1) m)
    fn quarter_power(&mut self, alpha: &BigFloat, m: u32) -> BigFloat {
        let e = alpha.sub(&int(1), PREC, RM).mul(&int(m as u64), PREC, RM).neg();
        self.pow(&int(4), &e)
    }

    /// κ_α = 4^(-(α-3/2)) / (1 − 4^(-(α-1)))
    fn kappa(&mut self, alpha: &BigFloat) -> BigFloat {
        let num = self.pow(&int(4), &alpha.sub(&ratio(3, 2), PREC, RM).neg());
        let den = int(1).sub(&self.pow(&int(4), &alpha.sub(&int(1), PREC, RM).neg()), PREC, RM);
        num.div(&den, PREC, RM)
    }

    fn compare(&mut self, lhs: &BigFloat, rhs: &BigFloat, strict: bool) -> (f64, f64, f64, bool) {
        let ln_lhs = self.ln(lhs);
        let ln_rhs = self.ln(rhs);
        let pass;
        let margin;
        if lhs.is_zero() {
            margin = f64::INFINITY;
            pass = !rhs.is_zero() || !strict;
        } else {
            // margin in extended precision, then rounded
            let d = rhs.ln(PREC, RM, &mut self.cc).sub(&lhs.ln(PREC, RM, &mut self.cc), PREC, RM);
            margin = self.to_f64(&d);
            pass = if strict {
                d.is_positive() && !d.is_zero()
            } else {
                margin >= -EQUALITY_SLACK
            };
        }
        (ln_lhs, ln_rhs, margin, pass)
    }
}

fn factorial(n: u32) -> BigFloat {
    (1..=n as u64).fold(int(1), |acc, j| acc.mul(&int(j), PREC, RM))
}

/// k! / (Π parts!)
fn multinomial(parts: &[u32]) -> BigFloat {
    let k: u32 = parts.iter().sum();
    let mut v = factorial(k);
    for &p in parts {
        v = v.div(&factorial(p), PREC, RM);
    }
    v
}

/// w(n, i) = 10^4 / ((100(n−i) + 103)² (100i + 3)²), exact in the inputs.
fn reciprocal_weight(n: u32, i: u32) -> BigFloat {
    let a = int(100 * (n - i) as u64 + 103);
    let b = int(100 * i as u64 + 3);
    let d = a.mul(&a, PREC, RM).mul(&b, PREC, RM).mul(&b, PREC, RM);
    int(10_000).div(&d, PREC, RM)
}

/// 0.05 / (10n + 10.3)² = 5 / (100n + 103)²
fn reciprocal_rhs(n: u32) -> BigFloat {
    let a = int(100 * n as u64 + 103);
    int(5).div(&a.mul(&a, PREC, RM), PREC, RM)
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Binomial { alpha: f64, n: u32, k1: u32, k2: u32 },
    Shifted { alpha: f64, n: u32, k1: u32, k2: u32, i: u32 },
    DoubleSum { alpha: f64, k: u32, n: u32 },
    Reciprocal { n: u32 },
    Multinomial { alpha: f64, k: u32, n: u32, parts: usize },
}

fn tasks(r: &AppendixRanges) -> Vec<Task> {
    let mut out = Vec::new();
    for &alpha in &r.binomial_alphas {
        for n in r.binomial_n.0..=r.binomial_n.1 {
            for k1 in 0..=r.binomial_k_max {
                for k2 in 0..=r.binomial_k_max {
                    out.push(Task::Binomial { alpha, n, k1, k2 });
                    for i in 1..=n {
                        out.push(Task::Shifted { alpha, n, k1, k2, i });
                    }
                }
            }
        }
    }
    for &alpha in &r.double_sum_alphas {
        for k in r.double_sum_k.0..=r.double_sum_k.1 {
            for n in r.double_sum_n.0..=r.double_sum_n.1 {
                out.push(Task::DoubleSum { alpha, k, n });
            }
        }
    }
    for n in r.reciprocal_n.0..=r.reciprocal_n.1 {
        out.push(Task::Reciprocal { n });
    }
    for &alpha in &r.multinomial_alphas {
        for k in r.multinomial_k.0..=r.multinomial_k.1 {
            for n in r.multinomial_n.0..=r.multinomial_n.1 {
                out.push(Task::Multinomial { alpha, k, n, parts: 3 });
                out.push(Task::Multinomial { alpha, k, n, parts: 4 });
            }
        }
    }
    out
}

/// All compositions of k into `parts` non-negative integers.
fn compositions(k: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![k]];
    }
    let mut out = Vec::new();
    for first in 0..=k {
        for mut rest in compositions(k - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn evaluate(ctx: &mut Ctx, task: Task) -> Instance {
    let blank = |family, alpha| Instance {
        family,
        alpha,
        k: 0,
        k1: 0,
        k2: 0,
        n: 0,
        i: 0,
        ln_lhs: 0.0,
        ln_rhs: 0.0,
        margin: 0.0,
        pass: false,
    };
    let (mut inst, lhs, rhs) = match task {
        Task::Binomial { alpha, n, k1, k2 } => {
            let a = BigFloat::from_f64(alpha, PREC);
            let k = k1 + k2;
            let lhs = multinomial(&[k1, k2])
                .mul(&ctx.self_power(k1 + n, &a), PREC, RM)
                .mul(&ctx.self_power(k2, &a), PREC, RM);
            let rhs = ctx.quarter_power(&a, (k1 + n).min(k2)).mul(&ctx.self_power(k + n, &a), PREC, RM);
            let inst = Instance {
                k,
                k1,
                k2,
                n,
                ..blank(Family::BinomialPower, alpha)
            };
            (inst, lhs, rhs)
        }
        Task::Shifted { alpha, n, k1, k2, i } => {
            let a = BigFloat::from_f64(alpha, PREC);
            let k = k1 + k2;
            let lhs = multinomial(&[k1, k2])
                .mul(&ctx.self_power(k1 + n + 1 - i, &a), PREC, RM)
                .mul(&ctx.self_power(k2 + i, &a), PREC, RM);
            let rhs = ctx.quarter_power(&a, (k1 + 1).min(k2 + 1)).mul(&ctx.self_power(k + n + 1, &a), PREC, RM);
            let inst = Instance {
                k,
                k1,
                k2,
                n,
                i,
                ..blank(Family::ShiftedBinomial, alpha)
            };
            (inst, lhs, rhs)
        }
        Task::DoubleSum { alpha, k, n } => {
            let a = BigFloat::from_f64(alpha, PREC);
            let mut lhs = int(0);
            for i in 1..=n {
                let w = reciprocal_weight(n, i);
                for k1 in 0..=k {
                    let k2 = k - k1;
                    let term = multinomial(&[k1, k2])
                        .mul(&ctx.self_power(k1 + 3 * (n + 1 - i), &a), PREC, RM)
                        .mul(&ctx.self_power(k2 + 3 * i, &a), PREC, RM)
                        .mul(&w, PREC, RM);
                    lhs = lhs.add(&term, PREC, RM);
                }
            }
            let rhs = ratio(1, 20)
                .mul(&ctx.kappa(&a), PREC, RM)
                .mul(&ctx.self_power(k + 3 * (n + 1), &a), PREC, RM)
                .mul(&reciprocal_rhs(n), PREC, RM)
                .div(&ratio(1, 20), PREC, RM);
            let inst = Instance {
                k,
                n,
                ..blank(Family::WeightedDoubleSum, alpha)
            };
            (inst, lhs, rhs)
        }
        Task::Reciprocal { n } => {
            let mut lhs = int(0);
            for i in 1..=n {
                lhs = lhs.add(&reciprocal_weight(n, i), PREC, RM);
            }
            let inst = Instance {
                n,
                ..blank(Family::ReciprocalSquareSum, 0.0)
            };
            (inst, lhs, reciprocal_rhs(n))
        }
        Task::Multinomial { alpha, k, n, parts } => {
            let a = BigFloat::from_f64(alpha, PREC);
            let mut lhs = int(0);
            for comp in compositions(k, parts) {
                let mut term = multinomial(&comp).mul(&ctx.self_power(comp[0] + n, &a), PREC, RM);
                for &kj in &comp[1..] {
                    term = term.mul(&ctx.self_power(kj, &a), PREC, RM);
                }
                lhs = lhs.add(&term, PREC, RM);
            }
            let kappa = ctx.kappa(&a);
            let mut rhs = ctx.self_power(k + n, &a);
            for _ in 1..parts {
                rhs = rhs.mul(&kappa, PREC, RM);
            }
            let family = if parts == 3 {
                Family::TrinomialPower
            } else {
                Family::QuadrinomialPower
            };
            let inst = Instance { k, n, ..blank(family, alpha) };
            (inst, lhs, rhs)
        }
    };
    let (ln_lhs, ln_rhs, margin, pass) = ctx.compare(&lhs, &rhs, inst.family.strict());
    inst.ln_lhs = ln_lhs;
    inst.ln_rhs = ln_rhs;
    inst.margin = margin;
    inst.pass = pass;
    inst
}

/// Evaluate every configured instance. Failures are entries, not errors.
pub fn verify_appendix(ranges: &AppendixRanges) -> Result<VerificationReport> {
    ranges.validate()?;
    let instances: Vec<Instance> = tasks(ranges)
        .into_par_iter()
        .map_init(Ctx::new, evaluate)
        .collect();
    Ok(VerificationReport { instances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AppendixRanges {
        AppendixRanges {
            binomial_k_max: 4,
            binomial_n: (1, 3),
            binomial_alphas: vec![1.0, 2.0],
            double_sum_k: (1, 3),
            double_sum_n: (0, 3),
            double_sum_alphas: vec![2.0],
            reciprocal_n: (1, 5),
            multinomial_k: (1, 3),
            multinomial_n: (0, 2),
            multinomial_alphas: vec![1.5],
        }
    }

    #[test]
    fn reciprocal_sum_at_one() {
        let mut ctx = Ctx::new();
        let inst = evaluate(&mut ctx, Task::Reciprocal { n: 1 });
        let lhs = 1.0 / (10.3f64.powi(2) * 10.3f64.powi(2));
        let rhs = 0.05 / 20.3f64.powi(2);
        assert!((inst.ln_lhs - lhs.ln()).abs() < 1e-13);
        assert!((inst.ln_rhs - rhs.ln()).abs() < 1e-13);
        assert!(inst.pass && inst.margin > 0.0);
    }

    #[test]
    fn single_term_equality_at_alpha_one() {
        let mut ctx = Ctx::new();
        for (k, n) in [(3, 1), (7, 4)] {
            let inst = evaluate(&mut ctx, Task::Binomial { alpha: 1.0, n, k1: k, k2: 0 });
            assert!(inst.margin.abs() < 1e-60, "{}", inst.margin);
            assert!(inst.pass);
        }
    }

    #[test]
    fn self_power_convention() {
        let mut ctx = Ctx::new();
        let a = BigFloat::from_f64(2.0, PREC);
        let zero = ctx.self_power(0, &a);
        let three = ctx.self_power(3, &a);
        let kappa = ctx.kappa(&a);
        assert_eq!(ctx.to_f64(&zero), 1.0);
        assert_eq!(ctx.to_f64(&three), 729.0);
        assert!((ctx.to_f64(&kappa) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(4, 3).len(), 15);
        assert_eq!(compositions(3, 4).len(), 20);
        assert!(compositions(5, 3).iter().all(|c| c.iter().sum::<u32>() == 5));
    }

    #[test]
    fn multinomial_values() {
        let mut ctx = Ctx::new();
        assert_eq!(ctx.to_f64(&multinomial(&[2, 1, 1])), 12.0);
        assert_eq!(ctx.to_f64(&multinomial(&[0, 5])), 1.0);
    }

    #[test]
    fn small_run_covers_families() {
        let report = verify_appendix(&small()).unwrap();
        let summary = report.summary();
        assert_eq!(summary.len(), 6);
        for s in &summary {
            match s.family {
                Family::BinomialPower | Family::ShiftedBinomial | Family::ReciprocalSquareSum | Family::WeightedDoubleSum => {
                    assert_eq!(s.failures, 0, "{:?}", s)
                }
                _ => {}
            }
        }
        let dir = std::env::temp_dir().join(format!("appendix-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("appendix.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), report.instances.len() + 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_ranges_rejected() {
        let mut r = small();
        r.double_sum_n = (3, 1);
        assert!(verify_appendix(&r).is_err());
        let mut r = small();
        r.multinomial_alphas = vec![1.0];
        assert!(verify_appendix(&r).is_err());
    }
}
