//! Config-driven experiments: (τ, δ) sweeps of the adiabatic distance,
//! log–log slope fits, bound overlays and the run-time law check.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams};
use crate::error::{Error, Result};
use crate::hamiltonian::{self, BandSelector, HamiltonianFamily};
use crate::linalg::{self, CMatrix, MatrixRows};
use crate::propagator::{self, IntegratorOptions};
use crate::schedule::{self, Schedule};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");
const GAP_SCAN_POINTS: usize = 2001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// (1 − 2f) σ_z + δ σ_x for each δ in the gap list.
    TwoLevel { schedule: String },
    /// Explicit endpoints; the gap list must be empty.
    Matrices {
        schedule: String,
        initial: MatrixRows,
        #[serde(rename = "final")]
        final_: MatrixRows,
    },
    /// Seeded diagonal endpoints with a random Hermitian coupling of norm δ.
    Random { schedule: String, dimension: usize },
}

impl FamilySpec {
    fn schedule_name(&self) -> &str {
        match self {
            FamilySpec::TwoLevel { schedule }
            | FamilySpec::Matrices { schedule, .. }
            | FamilySpec::Random { schedule, .. } => schedule,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl TauGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let (a, b) = (self.min.log10(), self.max.log10());
        (0..self.points)
            .map(|i| {
                let e = a + (b - a) * i as f64 / (self.points - 1) as f64;
                // keep exact powers of ten exact
                let r = e.round();
                if (e - r).abs() < 1e-12 {
                    10f64.powi(r as i32)
                } else {
                    10f64.powf(e)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundSource {
    /// Gevrey constants fitted to the schedule up to order `k_max`, C scaled
    /// by ‖H_F − H_I‖.
    Fitted { k_max: usize },
    Explicit { c: f64, r: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    pub deltas: Vec<f64>,
    pub k_const: f64,
    pub alpha: f64,
    pub threshold: f64,
    /// largest τ the integrator is asked to reach
    pub max_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub family: FamilySpec,
    #[serde(default)]
    pub band: usize,
    pub tau: TauGrid,
    pub deltas: Vec<f64>,
    pub samples: Vec<f64>,
    pub order: usize,
    pub alpha: f64,
    pub k_const: f64,
    pub bounds: BoundSource,
    /// slopes are fitted over records with τ in this window
    pub fit_window: (f64, f64),
    pub tolerance: f64,
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn shipped_default() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("shipped default config parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        let t = &self.tau;
        if !(t.min > 0.0 && t.max >= t.min && t.points >= 1 && t.max.is_finite()) {
            return bad(format!("tau grid must be positive and ascending, got {t:?}"));
        }
        if t.points > 1 && t.max == t.min {
            return bad("tau grid with several points needs max > min".into());
        }
        match &self.family {
            FamilySpec::Matrices { .. } => {
                if !self.deltas.is_empty() {
                    return bad("explicit matrices take no gap list".into());
                }
            }
            _ => {
                if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                    return bad("gap list must be non-empty and positive".into());
                }
            }
        }
        if let FamilySpec::Random { dimension, .. } = self.family {
            if !(2..=hamiltonian::MAX_DIMENSION).contains(&dimension) {
                return bad(format!("random family dimension {dimension} out of range"));
            }
        }
        if self.samples.is_empty() || self.samples.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sample points must be non-empty, finite and non-negative".into());
        }
        if self.samples.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sample points must be strictly ascending".into());
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1e-3) {
            return bad(format!("tolerance {} out of range", self.tolerance));
        }
        if !(self.k_const > 0.0) || !(self.runtime.k_const > 0.0) {
            return bad("K must be positive".into());
        }
        if !(self.alpha > 1.0) || !(self.runtime.alpha > 1.0) {
            return bad("alpha must exceed 1".into());
        }
        if !(self.fit_window.0 > 0.0 && self.fit_window.1 > self.fit_window.0) {
            return bad(format!("fit window {:?} is empty", self.fit_window));
        }
        if self.runtime.deltas.iter().any(|d| !(*d > 0.0)) || !(self.runtime.threshold > 0.0) || !(self.runtime.max_tau > 0.0) {
            return bad("runtime section needs positive gaps, threshold and max_tau".into());
        }
        if let BoundSource::Explicit { c, r } = self.bounds {
            if !(c >= 1.0 && r >= 1.0) {
                return bad("explicit C and R must be at least 1".into());
            }
        }
        Schedule::by_name(self.family.schedule_name())?;
        Ok(())
    }

    pub fn band(&self) -> BandSelector {
        BandSelector { index: self.band }
    }

    pub fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            tolerance: self.tolerance,
            ..IntegratorOptions::default()
        }
    }

    /// Gap parameters the sweep runs over; explicit matrices have a single
    /// member recorded as δ = 0.
    pub fn gap_parameters(&self) -> Vec<f64> {
        match self.family {
            FamilySpec::Matrices { .. } => vec![0.0],
            _ => self.deltas.clone(),
        }
    }

    /// Family member for one gap parameter.
    pub fn family_for(&self, delta: f64) -> Result<HamiltonianFamily> {
        let sched = Schedule::by_name(self.family.schedule_name())?;
        match &self.family {
            FamilySpec::TwoLevel { .. } => HamiltonianFamily::two_level(delta, sched),
            FamilySpec::Matrices { initial, final_, .. } => {
                let parse = |rows: &MatrixRows, name: &str| {
                    linalg::from_rows(rows).ok_or_else(|| Error::Config(format!("{name} rows are ragged")))
                };
                HamiltonianFamily::interpolating(parse(initial, "initial")?, parse(final_, "final")?, sched)
            }
            FamilySpec::Random { dimension, .. } => {
                let (hi, hf) = random_endpoints(*dimension, delta, self.seed);
                HamiltonianFamily::interpolating(hi, hf, sched)
            }
        }
    }
}

/// diag(e) and diag(reversed e) with e evenly spread in [−1, 1] plus
/// jitter, both coupled by the same seeded Hermitian V with ‖V‖ = δ.
fn random_endpoints(n: usize, delta: f64, seed: u64) -> (CMatrix, CMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64 + rng.gen_range(-0.1..0.1) / n as f64)
        .collect();
    e.sort_by(f64::total_cmp);
    let mut v = CMatrix::from_fn(n, n, |_, _| linalg::c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    v = linalg::hermitize(&v);
    let norm = linalg::op_norm(&v);
    v = v.scale(delta / norm);
    let diag = |vals: &[f64]| CMatrix::from_fn(n, n, |r, c| if r == c { linalg::real(vals[r]) } else { linalg::real(0.0) });
    let rev: Vec<f64> = e.iter().rev().cloned().collect();
    (diag(&e) + &v, diag(&rev) + &v)
}

/// Minimum of the tracked gap: a uniform scan refined by golden section
/// around the smallest sample.
pub fn measure_min_gap(fam: &HamiltonianFamily, band: BandSelector) -> Result<f64> {
    let grid = hamiltonian::uniform_grid(GAP_SCAN_POINTS);
    let path = hamiltonian::track_band(fam, &grid, band)?;
    let (imin, _) = path
        .frames
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.gap.total_cmp(&b.1.gap))
        .expect("non-empty grid");
    let h = 1.0 / (GAP_SCAN_POINTS - 1) as f64;
    let frame_gap = |s: f64| -> Result<f64> {
        // the band index is stable in a neighbourhood of a tracked sample
        let index = path.frames[imin].band.start;
        Ok(fam.spectral_frame(s, BandSelector { index })?.gap)
    };
    let (mut a, mut b) = ((path.grid[imin] - h).max(0.0), (path.grid[imin] + h).min(1.0));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (frame_gap(x1)?, frame_gap(x2)?);
    for _ in 0..60 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = frame_gap(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = frame_gap(x2)?;
        }
    }
    Ok(path.min_gap.min(f1).min(f2))
}

/// Least-squares line through (ln x, ln y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::Validation(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Domain(format!("log-log fit needs positive values, got ({x}, {y})")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - (syy - slope * sxy) / syy).clamp(0.0, 1.0)
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub tau: f64,
    pub delta: f64,
    pub min_gap: f64,
    pub s: f64,
    pub dist: f64,
    pub norm_drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitRecord {
    pub delta: f64,
    pub s: f64,
    pub points: usize,
    pub window: (f64, f64),
    #[serde(flatten)]
    pub fit: SlopeFit,
}

/// Measured distance against the assembled bound at one (τ, δ) with s ≥ 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundComparison {
    pub tau: f64,
    pub delta: f64,
    pub s: f64,
    pub dist: f64,
    pub n_opt: Option<u32>,
    /// remainder at N_opt plus the partial sum; `None` when the truncation
    /// precondition fails
    pub bound: Option<f64>,
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyBounds {
    pub delta: f64,
    pub min_gap: f64,
    pub params: Option<BoundParams>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub fits: Vec<FitRecord>,
    pub families: Vec<FamilyBounds>,
    pub comparisons: Vec<BoundComparison>,
}

impl SweepResult {
    pub fn fit(&self, delta: f64, s: f64) -> Option<&FitRecord> {
        self.fits.iter().find(|f| f.delta == delta && f.s == s)
    }

    /// Every applicable bound comparison holds.
    pub fn bounds_hold(&self) -> bool {
        self.comparisons.iter().all(|c| c.holds != Some(false))
    }
}

fn bound_params(cfg: &ExperimentConfig, fam: &HamiltonianFamily, g: f64) -> Result<Option<BoundParams>> {
    if g > 1.0 {
        return Ok(None);
    }
    let (c, r) = match cfg.bounds {
        BoundSource::Explicit { c, r } => (c, r),
        BoundSource::Fitted { k_max } => match schedule::fit_gevrey_constants(fam.schedule(), cfg.alpha, k_max) {
            Ok(fit) => {
                let scaled = fit.scaled(linalg::op_norm(fam.difference()));
                (scaled.c, scaled.r)
            }
            Err(Error::GevreyFitFailure { .. }) => return Ok(None),
            Err(e) => return Err(e),
        },
    };
    Ok(Some(BoundParams::new(c, r, cfg.alpha, g)?))
}

fn compare_with_bound(rec: &SweepRecord, params: Option<&BoundParams>, k_const: f64) -> Result<BoundComparison> {
    let mut out = BoundComparison {
        tau: rec.tau,
        delta: rec.delta,
        s: rec.s,
        dist: rec.dist,
        n_opt: None,
        bound: None,
        holds: None,
    };
    let Some(p) = params else { return Ok(out) };
    match bounds::optimal_truncation(rec.tau, p) {
        Ok(plan) => {
            let partial = bounds::partial_sum_bound(&plan, p, k_const)?;
            let bound = plan.remainder_estimate + partial.direct;
            out.n_opt = Some(plan.n_opt);
            out.bound = Some(bound);
            out.holds = Some(rec.dist <= bound);
        }
        Err(Error::InfeasibleTruncation(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

/// Run the sweep. On failure the records completed so far are written to
/// the configured output directory before the error is returned.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let taus = cfg.tau.values();
    let deltas = cfg.gap_parameters();
    let opts = cfg.integrator();
    let band = cfg.band();

    let mut result = SweepResult::default();
    let mut failure = None;
    for &delta in &deltas {
        let step = (|| -> Result<(FamilyBounds, Vec<SweepRecord>)> {
            let fam = cfg.family_for(delta)?;
            let g = measure_min_gap(&fam, band)?;
            let psi0 = propagator::default_initial_state(&fam, band)?;
            let runs: Vec<Result<Vec<SweepRecord>>> = taus
                .par_iter()
                .map(|&tau| {
                    let traj = propagator::evolve(&fam, band, tau, &psi0, &cfg.samples, &opts)?;
                    Ok(cfg
                        .samples
                        .iter()
                        .enumerate()
                        .map(|(i, &s)| SweepRecord {
                            tau,
                            delta,
                            min_gap: g,
                            s,
                            dist: traj.distances[i].clamp(0.0, 1.0),
                            norm_drift: traj.norm_drift[i],
                        })
                        .collect())
                })
                .collect();
            let mut records = Vec::new();
            for r in runs {
                match r {
                    Ok(mut rs) => records.append(&mut rs),
                    Err(e) => {
                        result.records.extend(records);
                        return Err(e);
                    }
                }
            }
            let params = bound_params(cfg, &fam, g)?;
            Ok((
                FamilyBounds {
                    delta,
                    min_gap: g,
                    params,
                },
                records,
            ))
        })();
        match step {
            Ok((fb, records)) => {
                result.families.push(fb);
                result.records.extend(records);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(e) = failure {
        if let Some(dir) = &cfg.output {
            fs::create_dir_all(dir).map_err(|io| Error::io(dir, io))?;
            write_sweep_csv(&result.records, &dir.join("sweep.csv"))?;
            log::warn!("partial sweep written to {}", dir.display());
        }
        return Err(e);
    }

    for fb in &result.families {
        for &s in &cfg.samples {
            let points: Vec<(f64, f64)> = result
                .records
                .iter()
                .filter(|r| r.delta == fb.delta && r.s == s)
                .filter(|r| r.tau >= cfg.fit_window.0 * (1.0 - 1e-12) && r.tau <= cfg.fit_window.1 * (1.0 + 1e-12))
                .map(|r| (r.tau, r.dist))
                .collect();
            if points.len() < 3 || points.iter().any(|p| p.1 <= 0.0) {
                continue;
            }
            let fit = fit_loglog_slope(&points)?;
            result.fits.push(FitRecord {
                delta: fb.delta,
                s,
                points: points.len(),
                window: cfg.fit_window,
                fit,
            });
        }
        for rec in result.records.iter().filter(|r| r.delta == fb.delta && r.s >= 1.0) {
            result
                .comparisons
                .push(compare_with_bound(rec, fb.params.as_ref(), cfg.k_const)?);
        }
    }
    Ok(result)
}

fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["tau", "delta", "min_gap", "s", "dist", "norm_drift"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([r.tau, r.delta, r.min_gap, r.s, r.dist, r.norm_drift].map(|x| x.to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct FitsFile<'a> {
    schema: u32,
    fits: &'a [FitRecord],
    families: &'a [FamilyBounds],
    bound_comparisons: &'a [BoundComparison],
}

/// sweep.csv, fits.json and one plotdata/dist_delta{δ}_s{s}.dat per curve
/// (columns: tau, dist, bound; `nan` where no bound applies).
pub fn emit_outputs(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let plot_dir = dir.join("plotdata");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;
    let mut written = Vec::new();

    let csv_path = dir.join("sweep.csv");
    write_sweep_csv(&result.records, &csv_path)?;
    written.push(csv_path);

    let fits_path = dir.join("fits.json");
    write_json(
        &FitsFile {
            schema: SCHEMA_VERSION,
            fits: &result.fits,
            families: &result.families,
            bound_comparisons: &result.comparisons,
        },
        &fits_path,
    )?;
    written.push(fits_path);

    let mut curves: Vec<(f64, f64)> = Vec::new();
    for r in &result.records {
        if !curves.contains(&(r.delta, r.s)) {
            curves.push((r.delta, r.s));
        }
    }
    for (delta, s) in curves {
        let path = plot_dir.join(format!("dist_delta{delta}_s{s}.dat"));
        let mut text = String::from("# tau dist bound\n");
        for r in result.records.iter().filter(|r| r.delta == delta && r.s == s) {
            let bound = result
                .comparisons
                .iter()
                .find(|c| c.delta == delta && c.s == s && c.tau == r.tau)
                .and_then(|c| c.bound)
                .unwrap_or(f64::NAN);
            text.push_str(&format!("{} {} {}\n", r.tau, r.dist, bound));
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RuntimeEntry {
    pub delta: f64,
    pub min_gap: f64,
    pub tau: f64,
    pub dist: f64,
    /// distance at s = 1 with τ held at the largest-gap value
    pub fixed_tau_dist: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RuntimeReport {
    pub alpha: f64,
    pub k_const: f64,
    pub threshold: f64,
    pub fixed_tau: f64,
    /// sorted by decreasing gap
    pub entries: Vec<RuntimeEntry>,
    pub below_threshold: bool,
    pub non_increasing: bool,
    pub fixed_tau_degrades: bool,
}

impl RuntimeReport {
    pub fn passed(&self) -> bool {
        self.below_threshold && self.non_increasing && self.fixed_tau_degrades
    }
}

/// For each gap set τ = K g^(-2) |ln g|^(6α) from the measured minimum gap,
/// evolve to s = 1 and compare with the same runs at fixed τ.
pub fn runtime_law_check(cfg: &ExperimentConfig) -> Result<RuntimeReport> {
    cfg.validate()?;
    let rt = &cfg.runtime;
    if matches!(cfg.family, FamilySpec::Matrices { .. }) {
        return Err(Error::Config("the run-time check needs a gap-parameterized family".into()));
    }
    if rt.deltas.len() < 2 {
        return Err(Error::Config("the run-time check needs at least two gaps".into()));
    }
    let band = cfg.band();
    let opts = cfg.integrator();
    let mut members = Vec::new();
    for &delta in &rt.deltas {
        let fam = cfg.family_for(delta)?;
        let g = measure_min_gap(&fam, band)?;
        let tau = bounds::tau_threshold(g, rt.alpha, rt.k_const)?;
        members.push((delta, fam, g, tau));
    }
    members.sort_by(|a, b| b.2.total_cmp(&a.2));
    let ratio = members.first().unwrap().2 / members.last().unwrap().2;
    if ratio < 2.0 {
        log::warn!("run-time check gaps span only a factor {ratio:.2}");
    }
    let too_long: Vec<f64> = members.iter().filter(|m| m.3 > rt.max_tau).map(|m| m.2).collect();
    if let Some(&worst) = too_long.iter().min_by(|a, b| a.total_cmp(b)) {
        let largest_feasible_gap = members.iter().filter(|m| m.3 <= rt.max_tau).map(|m| m.2).reduce(f64::max);
        let tau = members.iter().find(|m| m.2 == worst).unwrap().3;
        return Err(Error::Budget {
            tau,
            gap: worst,
            budget: rt.max_tau,
            largest_feasible_gap,
        });
    }
    let fixed_tau = members[0].3;
    let entries: Vec<RuntimeEntry> = members
        .par_iter()
        .map(|(delta, fam, g, tau)| {
            let psi0 = propagator::default_initial_state(fam, band)?;
            let scaled = propagator::evolve(fam, band, *tau, &psi0, &[1.0], &opts)?;
            let fixed = propagator::evolve(fam, band, fixed_tau, &psi0, &[1.0], &opts)?;
            Ok(RuntimeEntry {
                delta: *delta,
                min_gap: *g,
                tau: *tau,
                dist: scaled.distances[0],
                fixed_tau_dist: fixed.distances[0],
            })
        })
        .collect::<Result<_>>()?;
    let below_threshold = entries.iter().all(|e| e.dist <= rt.threshold);
    let non_increasing = entries.windows(2).all(|w| w[1].dist <= w[0].dist);
    let fixed_tau_degrades = entries.last().unwrap().fixed_tau_dist > rt.threshold;
    Ok(RuntimeReport {
        alpha: rt.alpha,
        k_const: rt.k_const,
        threshold: rt.threshold,
        fixed_tau,
        entries,
        below_threshold,
        non_increasing,
        fixed_tau_degrades,
    })
}

pub fn write_runtime_report(report: &RuntimeReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::shipped_default();
        cfg.tau = TauGrid {
            min: 10.0,
            max: 1000.0,
            points: 3,
        };
        cfg.deltas = vec![0.4];
        cfg.samples = vec![0.5, 1.0];
        cfg.fit_window = (10.0, 1000.0);
        cfg.tolerance = 1e-9;
        cfg
    }

    #[test]
    fn shipped_default_matches_documented_grid() {
        let cfg = ExperimentConfig::shipped_default();
        let taus = cfg.tau.values();
        assert_eq!(taus.len(), 13);
        assert_eq!(taus[0], 100.0);
        assert_eq!(taus[4], 1000.0);
        assert_eq!(taus[12], 1e5);
        assert_eq!(cfg.deltas, vec![0.4, 0.2, 0.1, 0.05]);
        assert_eq!(cfg.samples, vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.schema = 7;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.samples = vec![1.0, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.tau.min = -1.0;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"schema\": 1}").is_err());
        let text = serde_json::to_string(&small_config()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), small_config());
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let pts: Vec<(f64, f64)> = (1..8).map(|i| (i as f64, 1.0 / i as f64)).collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (1..8).map(|i| (i as f64, 3.0)).collect();
        assert!(fit_loglog_slope(&flat).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn slope_under_multiplicative_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = 10f64.powf(i as f64 / 5.0);
                (x, x.powi(-2) * (1.0 + rng.gen_range(-0.01..0.01)))
            })
            .collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert!((-2.1..=-1.9).contains(&fit.slope), "{}", fit.slope);
    }

    #[test]
    fn slope_rejects_bad_input() {
        assert!(matches!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]), Err(Error::Domain(_))));
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn slope_recovers_exponent(p in -5.0f64..5.0, c in 0.01f64..100.0) {
            let pts: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, c * (i as f64).powf(p))).collect();
            let fit = fit_loglog_slope(&pts).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-9);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-8);
            prop_assert!(fit.r_squared >= 0.0);
        }
    }

    #[test]
    fn constant_family_stays_in_band() {
        let mut cfg = small_config();
        cfg.family = FamilySpec::TwoLevel {
            schedule: "constant".into(),
        };
        cfg.tau.points = 1;
        let res = run_sweep(&cfg).unwrap();
        assert_eq!(res.records.len(), 2);
        assert!(res.records.iter().all(|r| r.dist < 1e-9));
    }

    #[test]
    fn min_gap_of_two_level_family() {
        for delta in [0.4, 0.1] {
            let fam = HamiltonianFamily::two_level(delta, Schedule::bump().unwrap()).unwrap();
            let g = measure_min_gap(&fam, BandSelector::GROUND).unwrap();
            assert!((g - 2.0 * delta).abs() < 1e-12, "{g}");
        }
    }

    #[test]
    fn random_family_is_seeded() {
        let (a, b) = random_endpoints(4, 0.3, 11);
        let (c, d) = random_endpoints(4, 0.3, 11);
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert!(linalg::hermitian_deviation(&a) < 1e-15);
        let (e, _) = random_endpoints(4, 0.3, 12);
        assert_ne!(a, e);
    }

    #[test]
    fn sweep_outputs_are_deterministic() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        emit_outputs(&run_sweep(&cfg).unwrap(), &a).unwrap();
        emit_outputs(&run_sweep(&cfg).unwrap(), &b).unwrap();
        for f in ["sweep.csv", "fits.json", "plotdata/dist_delta0.4_s0.5.dat"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let csv = fs::read_to_string(a.join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "tau,delta,min_gap,s,dist,norm_drift");
        assert_eq!(csv.lines().count(), 1 + 3 * 1 * 2);
    }

    #[test]
    fn empty_result_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&SweepResult::default(), dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv, "tau,delta,min_gap,s,dist,norm_drift\n");
    }

    #[test]
    fn fixed_tau_degrades_with_gap() {
        let opts = IntegratorOptions {
            tolerance: 1e-9,
            ..Default::default()
        };
        let dist = |delta: f64| {
            let fam = HamiltonianFamily::two_level(delta, Schedule::bump().unwrap()).unwrap();
            let psi0 = propagator::default_initial_state(&fam, BandSelector::GROUND).unwrap();
            propagator::evolve(&fam, BandSelector::GROUND, 50.0, &psi0, &[1.0], &opts).unwrap().distances[0]
        };
        let d = [dist(0.4), dist(0.2), dist(0.1)];
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn threshold_ratio_between_alphas() {
        for g in [0.5, 0.1, 0.01] {
            let a2 = bounds::tau_threshold(g, 2.0, 4.0).unwrap();
            let a3 = bounds::tau_threshold(g, 3.0, 4.0).unwrap();
            let expect = g.ln().abs().powi(6);
            assert!((a3 / a2 - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn budget_error_reports_feasible_gap() {
        let mut cfg = small_config();
        cfg.runtime.deltas = vec![0.2, 0.01];
        cfg.runtime.max_tau = 1e4;
        match runtime_law_check(&cfg) {
            Err(Error::Budget {
                largest_feasible_gap, ..
            }) => assert_eq!(largest_feasible_gap, Some(0.4)),
            other => panic!("{other:?}"),
        }
    }
}
