//! Fixed-design quantities that govern when backtracking with the Lasso
//! finds the true interactions, and Monte Carlo harnesses that check the
//! resulting guarantees against computed paths.
//!
//! Everything here works on the columns of a [`WorkingDesign`] (centered,
//! scaled to norm √n, interactions as products of standardized mains), so
//! `Σ_{S,M} = (1/n) X_Sᵀ X_M` is the sample Gram matrix the solver sees.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{RawDesign, ResponseVector, Standardizer, WorkingDesign};
use crate::engine::{self, EngineConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::lasso::{self, CoefficientVector, LambdaGrid, SolverConfig, StopRule};
use crate::linalg::{dot, min_eigenvalue, Cholesky};
use crate::simulation::{CovarianceKind, Population};
use crate::truth::TruthSpec;
use crate::variables::{CandidateSet, VariableId};

/// Pivots below this multiple of `‖Σ‖` count as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Grid length standing in for the continuous path.
pub const THEORY_GRID_LEN: usize = 400;
/// Beyond this many candidate interactions, admissible sets are sampled
/// rather than enumerated.
pub const EXHAUSTIVE_PAIR_CAP: usize = 10;
/// Random admissible sets checked per entry when sampling.
pub const SAMPLED_SETS: usize = 512;

const REFERENCE_SPEC: &str = include_str!("../data/reference_theory.json");

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// `(1/n) X_Rᵀ X_C` for column index lists of one design, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramBlock {
    pub rows: Vec<VariableId>,
    pub cols: Vec<VariableId>,
    pub values: Vec<f64>,
}

impl GramBlock {
    pub fn new(design: &WorkingDesign, rows: &[usize], cols: &[usize]) -> Self {
        let n = design.n() as f64;
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            for &c in cols {
                values.push(dot(design.column(r), design.column(c)) / n);
            }
        }
        Self {
            rows: rows.iter().map(|&j| design.variable(j).clone()).collect(),
            cols: cols.iter().map(|&j| design.variable(j).clone()).collect(),
            values,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols.len() + j]
    }

    /// `c_min` of a square block.
    pub fn min_eigenvalue(&self) -> f64 {
        assert_eq!(self.rows.len(), self.cols.len());
        min_eigenvalue(&self.values, self.rows.len())
    }
}

/// Cholesky factor of a symmetric `s×s` block with the rank tolerance
/// measured against its ∞-norm.
pub fn factor(sigma_ss: &[f64], s: usize) -> Result<Cholesky> {
    let norm = (0..s)
        .map(|i| sigma_ss[i * s..(i + 1) * s].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let diag = (0..s).map(|i| sigma_ss[i * s + i].abs()).fold(0.0, f64::max);
    if !(diag > 0.0) {
        return Err(Error::RankDeficient { pivot: 0.0, tolerance: 0.0 });
    }
    Cholesky::new(sigma_ss, s, RANK_TOL * norm / diag)
}

/// `β^S = (X_Sᵀ X_S)⁻¹ X_Sᵀ f*`.
pub fn beta_projection(design: &WorkingDesign, s: &[usize], fstar: &[f64]) -> Result<Vec<f64>> {
    let sigma = GramBlock::new(design, s, s);
    let chol = factor(&sigma.values, s.len())?;
    let n = design.n() as f64;
    let rhs: Vec<f64> = s.iter().map(|&j| dot(design.column(j), fstar) / n).collect();
    Ok(chol.solve(&rhs))
}

/// `(I − P^S) x`.
pub fn residualize(design: &WorkingDesign, s: &[usize], x: &[f64]) -> Result<Vec<f64>> {
    let b = beta_projection(design, s, x)?;
    let mut r = x.to_vec();
    for (&j, bj) in s.iter().zip(&b) {
        for (ri, xi) in r.iter_mut().zip(design.column(j)) {
            *ri -= bj * xi;
        }
    }
    Ok(r)
}

/// Rows of `Σ_{M,S}` (stored `|M|×|S|`) regressed on `Σ_{S,S}`: the vectors
/// `Σ_{S,S}⁻¹ Σ_{S,{u}}`.
fn regression_rows(chol: &Cholesky, sigma_ms: &[f64], s: usize) -> Vec<Vec<f64>> {
    sigma_ms.chunks(s.max(1)).map(|row| chol.solve(row)).collect()
}

/// `sup_{‖τ‖_∞ ≤ 1} ‖Σ_{M,S} Σ_{S,S}⁻¹ τ‖_∞`, the largest absolute row sum
/// of `Σ_{M,S} Σ_{S,S}⁻¹`. Zero when `M` is empty.
pub fn irrepresentable_lhs(sigma_ms: &[f64], sigma_ss: &[f64], s: usize) -> Result<f64> {
    let chol = factor(sigma_ss, s)?;
    Ok(regression_rows(&chol, sigma_ms, s)
        .iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// `‖Σ_{M,S} Σ_{S,S}⁻¹ τ‖_∞` for one sign vector.
pub fn weak_irrepresentable(sigma_ms: &[f64], sigma_ss: &[f64], s: usize, tau: &[f64]) -> Result<f64> {
    let chol = factor(sigma_ss, s)?;
    let w = chol.solve(tau);
    Ok(sigma_ms
        .chunks(s.max(1))
        .map(|row| dot(row, &w).abs())
        .fold(0.0, f64::max))
}

/// `(exact, bound)` for `‖(Σ_{S,S}⁻¹)_v‖₁ ≤ √s / c_min(Σ_{S,S})`.
pub fn l1_norm_bound_audit(sigma_ss: &[f64], s: usize, v: usize) -> Result<(f64, f64)> {
    let chol = factor(sigma_ss, s)?;
    let mut e = vec![0.0; s];
    e[v] = 1.0;
    let exact = chol.solve(&e).iter().map(|x| x.abs()).sum();
    let bound = (s as f64).sqrt() / min_eigenvalue(sigma_ss, s);
    Ok((exact, bound))
}

/// `σ √((t² + 2 log(p + s₁²/2)) / n)`.
pub fn eta_value(t: f64, n: usize, p: usize, s1: usize, sigma: f64) -> f64 {
    let s1 = s1 as f64;
    sigma * ((t * t + 2.0 * (p as f64 + 0.5 * s1 * s1).ln()) / n as f64).sqrt()
}

/// `σ √((t² + 2 log s) / (n c_min))`.
pub fn xi_value(t: f64, n: usize, s: usize, sigma: f64, cmin: f64) -> f64 {
    sigma * ((t * t + 2.0 * (s as f64).ln()) / (n as f64 * cmin)).sqrt()
}

/// One `u ∈ M` in the entry condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryThreshold {
    pub variable: VariableId,
    /// `(1/n)|X_uᵀ(I − P^S) f*|`.
    pub residual_correlation: f64,
    /// `1 − ‖Σ_{S,S}⁻¹ Σ_{S,{u}}‖₁`.
    pub denominator: f64,
    /// `(residual_correlation + 2η) / denominator + η`; `None` when the
    /// denominator is not positive.
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub variable: VariableId,
    pub s: Vec<VariableId>,
    pub m: Vec<VariableId>,
    pub irrep_lhs: f64,
    pub thresholds: Vec<EntryThreshold>,
    /// `‖(Σ_{S,S}⁻¹)_v‖₁`.
    pub outer_factor: f64,
    pub beta_s: Vec<f64>,
    pub beta_s_v: f64,
    pub eta: f64,
    /// Smallest `λ` covered by the no-entry guarantee for `M`:
    /// `max_u (residual_correlation + 2η) / denominator` (0 for empty `M`).
    pub lambda_quiet: f64,
    /// Right-hand side the coefficient must beat (infinite when some
    /// denominator is invalid).
    pub rhs: f64,
    pub invalid_denominators: Vec<VariableId>,
    pub holds: bool,
}

impl EntryReport {
    /// `|β^S_v| / rhs`; above 1 exactly when the coefficient part holds.
    pub fn margin(&self) -> f64 {
        if self.rhs > 0.0 {
            self.beta_s_v.abs() / self.rhs
        } else if self.beta_s_v != 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// Largest `λ` at which the lemma forces `v` to be active, provided no
    /// variable of `M` is: `|β^S_v| / ‖(Σ_{S,S}⁻¹)_v‖₁ − η`.
    pub fn lambda_active(&self) -> f64 {
        self.beta_s_v.abs() / self.outer_factor - self.eta
    }
}

/// Evaluates `Ent(v, S, C; η)` with `v`, `S`, `C` given as column indices of
/// `design` (`v ∈ S ⊆ C`). When `M = C \ S` is empty the maximum over `u`
/// is taken as the bare `+η` term.
pub fn entry_check(
    design: &WorkingDesign,
    fstar: &[f64],
    v: usize,
    s: &[usize],
    c: &[usize],
    eta: f64,
) -> Result<EntryReport> {
    let vpos = s
        .iter()
        .position(|&j| j == v)
        .ok_or_else(|| Error::InvalidConfig("entry variable must belong to S".into()))?;
    let sset: BTreeSet<usize> = s.iter().copied().collect();
    if sset.len() != s.len() || !sset.iter().all(|j| c.contains(j)) {
        return Err(Error::InvalidConfig("S must be a set of distinct members of C".into()));
    }
    let m: Vec<usize> = c.iter().copied().filter(|j| !sset.contains(j)).collect();
    let n = design.n() as f64;
    let k = s.len();

    let sigma_ss = GramBlock::new(design, s, s);
    let chol = factor(&sigma_ss.values, k)?;
    let sigma_ms = GramBlock::new(design, &m, s);
    let rows = regression_rows(&chol, &sigma_ms.values, k);
    let beta_s = chol.solve(&s.iter().map(|&j| dot(design.column(j), fstar) / n).collect::<Vec<_>>());
    let mut resid = fstar.to_vec();
    for (&j, bj) in s.iter().zip(&beta_s) {
        for (ri, xi) in resid.iter_mut().zip(design.column(j)) {
            *ri -= bj * xi;
        }
    }
    let mut e = vec![0.0; k];
    e[vpos] = 1.0;
    let outer_factor: f64 = chol.solve(&e).iter().map(|x| x.abs()).sum();

    let mut irrep_lhs = 0.0f64;
    let mut lambda_quiet = 0.0f64;
    let mut worst = eta;
    let mut invalid = Vec::new();
    let mut thresholds = Vec::with_capacity(m.len());
    for (&u, coef) in m.iter().zip(&rows) {
        let l1: f64 = coef.iter().map(|x| x.abs()).sum();
        irrep_lhs = irrep_lhs.max(l1);
        let corr = (dot(design.column(u), &resid) / n).abs();
        let denominator = 1.0 - l1;
        let threshold = (denominator > 0.0).then(|| (corr + 2.0 * eta) / denominator + eta);
        match threshold {
            Some(t) => {
                worst = worst.max(t);
                lambda_quiet = lambda_quiet.max(t - eta);
            }
            None => invalid.push(design.variable(u).clone()),
        }
        thresholds.push(EntryThreshold {
            variable: design.variable(u).clone(),
            residual_correlation: corr,
            denominator,
            threshold,
        });
    }
    let rhs = if invalid.is_empty() { worst * outer_factor } else { f64::INFINITY };
    let beta_s_v = beta_s[vpos];
    let holds = irrep_lhs < 1.0 && beta_s_v.abs() > rhs;
    Ok(EntryReport {
        variable: design.variable(v).clone(),
        s: s.iter().map(|&j| design.variable(j).clone()).collect(),
        m: m.iter().map(|&j| design.variable(j).clone()).collect(),
        irrep_lhs,
        thresholds,
        outer_factor,
        beta_s,
        beta_s_v,
        eta,
        lambda_quiet: if invalid.is_empty() { lambda_quiet } else { f64::INFINITY },
        rhs,
        invalid_denominators: invalid,
        holds,
    })
}

/// `(1/n) ‖X_Cᵀ ε‖_∞`.
pub fn noise_correlation(design: &WorkingDesign, c: &[usize], eps: &[f64]) -> f64 {
    let n = design.n() as f64;
    c.iter()
        .map(|&j| (dot(design.column(j), eps) / n).abs())
        .fold(0.0, f64::max)
}

/// `Ω_{C,η}`: `(1/n) ‖X_Cᵀ ε‖_∞ ≤ η`.
pub fn omega_c(design: &WorkingDesign, c: &[usize], eps: &[f64], eta: f64) -> bool {
    noise_correlation(design, c, eps) <= eta
}

/// `Ω₂`: `(1/n) ‖X_Nᵀ (I − P^{S*}) ε‖_∞ ≤ η`.
pub fn omega_2(design: &WorkingDesign, noise: &[usize], support: &[usize], eps: &[f64], eta: f64) -> Result<bool> {
    let r = residualize(design, support, eps)?;
    Ok(noise_correlation(design, noise, &r) <= eta)
}

/// `Ω₃`: `(1/n) ‖Σ_{S*,S*}⁻¹ X_{S*}ᵀ ε‖_∞ ≤ ξ`.
pub fn omega_3(design: &WorkingDesign, support: &[usize], eps: &[f64], xi: f64) -> Result<bool> {
    let w = beta_projection(design, support, eps)?;
    Ok(w.iter().all(|x| x.abs() <= xi))
}

/// Redraws `ε ~ N(0, σ²)` until `Ω_{C,η}` holds. Returns the draw and the
/// number of rejected draws.
pub fn draw_conditioned_noise(
    design: &WorkingDesign,
    c: &[usize],
    sigma: f64,
    eta: f64,
    rng: &mut ChaCha8Rng,
    max_draws: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = design.n();
    for rejected in 0..max_draws {
        let eps: Vec<f64> = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        if omega_c(design, c, &eps, eta) {
            return Ok((eps, rejected));
        }
    }
    Err(Error::EventNotSatisfied(format!(
        "no draw out of {max_draws} had (1/n)|X_C^T e|_inf <= {eta:e}"
    )))
}

/// A fixed design with a target `v ∈ S ⊆ C`, for checking the entry lemma.
#[derive(Clone, Debug)]
pub struct LemmaInstance {
    pub design: WorkingDesign,
    pub fstar: Vec<f64>,
    pub v: usize,
    pub s: Vec<usize>,
    pub c: Vec<usize>,
    pub sigma: f64,
    pub eta: f64,
}

impl LemmaInstance {
    /// Random instance where the entry condition holds with `|β^S_v|` equal
    /// to `margin` times its threshold: `n = 100` rows, 12 iid normal mains
    /// as `C`, the first 2–4 of them as `S`, and a hidden direction outside
    /// `C` so the residual term is not zero.
    pub fn constructed(seed: u64, trial: usize, margin: f64) -> Result<Self> {
        const N: usize = 100;
        const P: usize = 12;
        const SIGMA: f64 = 0.5;
        const T: f64 = 2.0;
        let mut rng = trial_rng(seed, trial);
        for _ in 0..100 {
            let raw = Population::Gaussian { p: P, covariance: CovarianceKind::Identity }.draw(N, &mut rng)?;
            let design = WorkingDesign::assemble(&raw, &CandidateSet::mains(P))?;
            let k = rng.random_range(2..=4usize);
            let s: Vec<usize> = (0..k).collect();
            let c: Vec<usize> = (0..P).collect();
            let eta = eta_value(T, N, P, 0, SIGMA);

            let mut hidden: Vec<f64> = (0..N).map(|_| rng.sample(StandardNormal)).collect();
            let mean = hidden.iter().sum::<f64>() / N as f64;
            let gamma = rng.random_range(0.1..0.4);
            for h in hidden.iter_mut() {
                *h = gamma * (*h - mean);
            }
            let mut fstar = hidden;
            for &j in &s[1..] {
                let b = rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                for (f, x) in fstar.iter_mut().zip(design.column(j)) {
                    *f += b * x;
                }
            }
            let base = entry_check(&design, &fstar, 0, &s, &c, eta)?;
            if base.irrep_lhs >= 1.0 {
                continue;
            }
            // β^S is linear in the coefficient of v, with unit slope
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let bv = sign * margin * base.rhs - base.beta_s_v;
            for (f, x) in fstar.iter_mut().zip(design.column(0)) {
                *f += bv * x;
            }
            return Ok(Self { design, fstar, v: 0, s, c, sigma: SIGMA, eta });
        }
        Err(Error::InvalidConfig("could not draw a design with irrep_lhs < 1".into()))
    }

    pub fn entry(&self) -> Result<EntryReport> {
        entry_check(&self.design, &self.fstar, self.v, &self.s, &self.c, self.eta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub entry: EntryReport,
    pub noise_level: f64,
    pub rejected_draws: usize,
    /// False when the precondition (irrepresentability, full rank, Ω)
    /// failed; no claim is checked then.
    pub applicable: bool,
    pub grid_points: usize,
    /// Grid points above `lambda_quiet` and how many had `β̂_M = 0`.
    pub part_i_checked: usize,
    pub part_i_held: usize,
    /// Grid points meeting the hypothesis of (ii) and how many had `β̂_v ≠ 0`.
    pub part_ii_checked: usize,
    pub part_ii_held: usize,
    /// Largest grid `λ` with some `β̂_M ≠ 0` (0 if none).
    pub lambda_ent: f64,
    /// Grid points in `(lambda_ent, lambda_active]`; (iii) needs at least
    /// one and `v` active at all of them.
    pub part_iii_points: usize,
    pub part_iii: bool,
    pub holds: bool,
}

/// Dense path on `C` covering `[1e-3 λ_top, λ_top]`, with the two critical
/// values of the entry condition inserted.
pub fn lemma_grid(design: &WorkingDesign, y: &[f64], entry: &EntryReport, len: usize) -> Result<LambdaGrid> {
    let top = lasso::lambda_max(design, y).max(entry.lambda_active()) * 1.01;
    let mut values: Vec<f64> = LambdaGrid::log_spaced(top, 1e-3, len)?.into();
    for x in [entry.lambda_active(), entry.lambda_quiet * (1.0 + 1e-3)] {
        if x.is_finite() && x > values[len - 1] && x < top {
            values.push(x);
        }
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    LambdaGrid::new(values)
}

/// Checks the three parts of the entry lemma on the computed Lasso path
/// for one noise realization. Fails with `EventNotSatisfied` when `eps`
/// is outside `Ω_{C,η}`.
pub fn verify_lemma1(inst: &LemmaInstance, eps: &[f64], grid_len: usize, solver: &SolverConfig) -> Result<LemmaReport> {
    let level = noise_correlation(&inst.design, &inst.c, eps);
    if level > inst.eta {
        return Err(Error::EventNotSatisfied(format!(
            "(1/n)|X_C^T e|_inf = {level:e} exceeds eta = {:e}",
            inst.eta
        )));
    }
    let entry = inst.entry()?;
    let mut report = LemmaReport {
        entry,
        noise_level: level,
        rejected_draws: 0,
        applicable: false,
        grid_points: 0,
        part_i_checked: 0,
        part_i_held: 0,
        part_ii_checked: 0,
        part_ii_held: 0,
        lambda_ent: 0.0,
        part_iii_points: 0,
        part_iii: false,
        holds: false,
    };
    if report.entry.irrep_lhs >= 1.0 {
        return Ok(report);
    }
    report.applicable = true;

    let design = inst.design.prefix(inst.c.len());
    debug_assert!(inst.c.iter().enumerate().all(|(i, &j)| i == j), "C must be the leading columns");
    let y: Vec<f64> = inst.fstar.iter().zip(eps).map(|(f, e)| f + e).collect();
    let y = ResponseVector::new(y)?;
    let grid = lemma_grid(&design, y.values(), &report.entry, grid_len)?;
    let path = lasso::path(&design, &y, &grid, &StopRule { max_active: None }, solver)?;
    report.grid_points = path.points.len();

    let m: BTreeSet<usize> = inst.c.iter().copied().filter(|j| !inst.s.contains(j)).collect();
    let m_active = |b: &CoefficientVector| b.entries().iter().any(|(j, _)| m.contains(j));
    let beta_v = report.entry.beta_s_v.abs();
    let outer = report.entry.outer_factor;
    for pt in &path.points {
        let quiet = !m_active(&pt.coefficients);
        if pt.lambda > report.entry.lambda_quiet {
            report.part_i_checked += 1;
            report.part_i_held += quiet as usize;
        }
        if quiet && beta_v > outer * (pt.lambda + inst.eta) {
            report.part_ii_checked += 1;
            report.part_ii_held += (pt.coefficients.get(inst.v) != 0.0) as usize;
        }
        if !quiet {
            report.lambda_ent = report.lambda_ent.max(pt.lambda);
        }
    }
    if report.entry.holds {
        let hi = report.entry.lambda_active();
        let window: Vec<_> = path
            .points
            .iter()
            .filter(|pt| pt.lambda > report.lambda_ent && pt.lambda <= hi)
            .collect();
        report.part_iii_points = window.len();
        report.part_iii = !window.is_empty() && window.iter().all(|pt| pt.coefficients.get(inst.v) != 0.0);
    }
    report.holds = report.part_i_held == report.part_i_checked
        && report.part_ii_held == report.part_ii_checked
        && (!report.entry.holds || report.part_iii);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaBatch {
    pub schema_version: u32,
    pub seed: u64,
    pub margin: f64,
    pub trials: usize,
    pub passed: usize,
    pub min_margin: f64,
    pub total_rejected_draws: usize,
    pub reports: Vec<LemmaReport>,
}

/// `trials` constructed instances, each with `Ω_{C,η}`-conditioned noise.
pub fn verify_lemma1_batch(seed: u64, trials: usize, margin: f64, solver: &SolverConfig) -> Result<LemmaBatch> {
    let reports = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let inst = LemmaInstance::constructed(seed, trial, margin)?;
            let mut rng = trial_rng(seed ^ 0x6e6f_6973_65, trial);
            let (eps, rejected) = draw_conditioned_noise(&inst.design, &inst.c, inst.sigma, inst.eta, &mut rng, 10_000)?;
            let mut r = verify_lemma1(&inst, &eps, THEORY_GRID_LEN, solver)?;
            r.rejected_draws = rejected;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LemmaBatch {
        schema_version: SCHEMA_VERSION,
        seed,
        margin,
        trials,
        passed: reports.iter().filter(|r| r.applicable && r.entry.holds && r.holds).count(),
        min_margin: reports.iter().map(|r| r.entry.margin()).fold(f64::INFINITY, f64::min),
        total_rejected_draws: reports.iter().map(|r| r.rejected_draws).sum(),
        reports,
    })
}

/// A truth together with a fixed design drawn from a population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub truth: TruthSpec,
    pub n: usize,
    pub population: Population,
    pub design_seed: u64,
    /// Confidence parameter of `η` and `ξ`.
    pub t: f64,
    pub draws: usize,
    #[serde(default = "default_grid_len")]
    pub grid_len: usize,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_grid_len() -> usize {
    THEORY_GRID_LEN
}

impl TheorySpec {
    /// The shipped p = 20 instance.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_SPEC).expect("reference spec parses")
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.population.p() != self.truth.p {
            return Err(Error::InvalidConfig(format!(
                "population has p = {} but the truth has p = {}",
                self.population.p(),
                self.truth.p
            )));
        }
        if self.truth.interactions().iter().any(|v| v.order() != 2) {
            return Err(Error::InvalidConfig("only pairwise true interactions are supported".into()));
        }
        if self.n < 2 || self.draws == 0 || self.grid_len < 2 {
            return Err(Error::InvalidConfig("need n >= 2, draws >= 1 and grid_len >= 2".into()));
        }
        if !(self.t > 0.0) {
            return Err(Error::InvalidConfig(format!("t must be positive, got {}", self.t)));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        eta_value(self.t, self.n, self.truth.p, self.truth.tilde().len(), self.truth.sigma)
    }
}

/// The fixed design of a [`TheorySpec`] and the signal on it. Columns are
/// the sandwich set `C̃*`: all mains, then the tilde pairs.
#[derive(Clone, Debug)]
pub struct TheoryDesign {
    pub raw: RawDesign,
    pub design: WorkingDesign,
    pub fstar: Vec<f64>,
    /// Column indices of `S*`, in truth order.
    pub support: Vec<usize>,
}

impl TheoryDesign {
    pub fn new(spec: &TheorySpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = trial_rng(spec.design_seed, 0);
        let raw = spec.population.draw(spec.n, &mut rng)?;
        let design = WorkingDesign::assemble_with(&Standardizer::new(&raw, true), &spec.truth.sandwich_set())?;
        let fstar = spec.truth.signal_on(&design)?;
        let support: Vec<usize> = spec
            .truth
            .support()
            .iter()
            .map(|v| design.candidates().position(v).expect("support lies in the sandwich set"))
            .collect();
        // identifiability
        factor(&GramBlock::new(&design, &support, &support).values, support.len())?;
        Ok(Self { raw, design, fstar, support })
    }

    fn index(&self, v: &VariableId) -> usize {
        self.design.candidates().position(v).expect("variable in the sandwich set")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryOrderReport {
    pub holds: bool,
    /// The first ordering (of the interacting mains) that works.
    pub ordering: Option<Vec<usize>>,
    pub orderings_tried: usize,
    /// Distinct `Ent` evaluations.
    pub checks: usize,
    /// Every admissible set was checked (otherwise `sampled_sets` per entry).
    pub exhaustive: bool,
    pub sampled_sets: Option<usize>,
    /// Smallest `|β^S_v| / rhs` over the checks of the accepted ordering.
    pub min_margin: Option<f64>,
    /// For a failed search: the first failing check of the ascending order.
    pub first_failure: Option<EntryReport>,
}

/// Searches for an ordering of the interacting mains under which every
/// required `Ent({j}, S̃*₁ ∪ (A ∩ S*₂), C₁ ∪ A; η)` holds. All orderings are
/// tried for up to 6 interacting mains, only the ascending one beyond.
pub fn entry_order_check(td: &TheoryDesign, truth: &TruthSpec, eta: f64, seed: u64) -> Result<EntryOrderReport> {
    let p = truth.p;
    let interacting: Vec<usize> = truth.interacting_mains().into_iter().collect();
    let tilde: Vec<usize> = truth.tilde();
    let pairs = truth.tilde_interactions();
    let q = pairs.len();
    let true_pairs: BTreeSet<VariableId> = truth.interactions().into_iter().collect();
    let exhaustive = q <= EXHAUSTIVE_PAIR_CAP;
    let pair_cols: Vec<usize> = pairs.iter().map(|v| td.index(v)).collect();
    let main_col = |j: usize| td.index(&VariableId::main(j));
    let tilde_cols: Vec<usize> = tilde.iter().map(|&j| main_col(j)).collect();

    let mut cache: HashMap<(usize, u64), EntryReport> = HashMap::new();
    let mut check = |j: usize, mask: u64| -> Result<EntryReport> {
        if let Some(r) = cache.get(&(j, mask)) {
            return Ok(r.clone());
        }
        let mut s = tilde_cols.clone();
        let mut c: Vec<usize> = (0..p).collect();
        for (b, v) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                c.push(pair_cols[b]);
                if true_pairs.contains(v) {
                    s.push(pair_cols[b]);
                }
            }
        }
        let r = match entry_check(&td.design, &td.fstar, main_col(j), &s, &c, eta) {
            Ok(r) => r,
            Err(Error::RankDeficient { .. }) => EntryReport {
                variable: VariableId::main(j),
                s: s.iter().map(|&k| td.design.variable(k).clone()).collect(),
                m: Vec::new(),
                irrep_lhs: f64::INFINITY,
                thresholds: Vec::new(),
                outer_factor: f64::NAN,
                beta_s: Vec::new(),
                beta_s_v: 0.0,
                eta,
                lambda_quiet: f64::INFINITY,
                rhs: f64::INFINITY,
                invalid_denominators: Vec::new(),
                holds: false,
            },
            Err(e) => return Err(e),
        };
        cache.insert((j, mask), r.clone());
        Ok(r)
    };

    // admissible sets A ⊇ base, as bit masks over `pairs`
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut admissible = |base: u64| -> Vec<u64> {
        let free: Vec<usize> = (0..q).filter(|b| base >> b & 1 == 0).collect();
        if exhaustive {
            (0..1u64 << free.len())
                .map(|bits| {
                    free.iter()
                        .enumerate()
                        .fold(base, |m, (i, &b)| if bits >> i & 1 == 1 { m | 1 << b } else { m })
                })
                .collect()
        } else {
            let full = free.iter().fold(base, |m, &b| m | 1 << b);
            let mut out = vec![base, full];
            for _ in 0..SAMPLED_SETS {
                out.push(free.iter().fold(base, |m, &b| if rng.random::<bool>() { m | 1 << b } else { m }));
            }
            out
        }
    };
    let base_mask = |earlier: &[usize]| -> u64 {
        pairs.iter().enumerate().fold(0u64, |m, (b, v)| {
            if v.members().iter().all(|x| earlier.contains(x)) {
                m | 1 << b
            } else {
                m
            }
        })
    };

    let orderings: Vec<Vec<usize>> = if interacting.len() <= 6 {
        permutations(&interacting)
    } else {
        vec![interacting.clone()]
    };
    let mut first_failure = None;
    let mut tried = 0;
    for order in &orderings {
        tried += 1;
        let mut ok = true;
        let mut min_margin = f64::INFINITY;
        'entries: for (pos, &j) in order.iter().enumerate() {
            for mask in admissible(base_mask(&order[..pos])) {
                let r = check(j, mask)?;
                if !r.holds {
                    if first_failure.is_none() {
                        first_failure = Some(r);
                    }
                    ok = false;
                    break 'entries;
                }
                min_margin = min_margin.min(r.margin());
            }
        }
        if ok {
            return Ok(EntryOrderReport {
                holds: true,
                ordering: Some(order.clone()),
                orderings_tried: tried,
                checks: cache.len(),
                exhaustive,
                sampled_sets: (!exhaustive).then_some(SAMPLED_SETS),
                min_margin: min_margin.is_finite().then_some(min_margin),
                first_failure: None,
            });
        }
    }
    Ok(EntryOrderReport {
        holds: false,
        ordering: None,
        orderings_tried: tried,
        checks: cache.len(),
        exhaustive,
        sampled_sets: (!exhaustive).then_some(SAMPLED_SETS),
        min_margin: None,
        first_failure,
    })
}

/// All orderings of `items`, lexicographic in input order.
fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryTerm {
    pub variable: VariableId,
    pub coefficient: f64,
    /// `η |sgn(β*)ᵀ (Σ⁻¹)_v| / (1 − weak_irrep) + ξ`.
    pub threshold: f64,
}

/// The extra conditions for exact support recovery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryConditions {
    /// `‖Σ_{N,S*} Σ_{S*,S*}⁻¹ sgn(β*)‖_∞` with `N = C̃* \ S*`.
    pub weak_irrep: f64,
    pub c_min: f64,
    pub xi: f64,
    pub terms: Vec<CorollaryTerm>,
    pub holds: bool,
}

pub fn corollary_conditions(td: &TheoryDesign, truth: &TruthSpec, t: f64, eta: f64) -> Result<CorollaryConditions> {
    let s = &td.support;
    let noise: Vec<usize> = (0..td.design.width()).filter(|j| !s.contains(j)).collect();
    let sigma_ss = GramBlock::new(&td.design, s, s);
    let sigma_ns = GramBlock::new(&td.design, &noise, s);
    let signs: Vec<f64> = truth.coefficients().iter().map(|b| b.signum()).collect();
    let weak_irrep = weak_irrepresentable(&sigma_ns.values, &sigma_ss.values, s.len(), &signs)?;
    let c_min = sigma_ss.min_eigenvalue();
    let xi = xi_value(t, td.design.n(), s.len(), truth.sigma, c_min);
    // Σ⁻¹ sgn, whose v-th entry is sgnᵀ(Σ⁻¹)_v by symmetry
    let w = factor(&sigma_ss.values, s.len())?.solve(&signs);
    let terms: Vec<CorollaryTerm> = truth
        .terms
        .iter()
        .zip(&w)
        .map(|(term, wv)| CorollaryTerm {
            variable: term.variable.clone(),
            coefficient: term.coefficient,
            threshold: if weak_irrep < 1.0 {
                eta * wv.abs() / (1.0 - weak_irrep) + xi
            } else {
                f64::INFINITY
            },
        })
        .collect();
    let holds = weak_irrep < 1.0 && terms.iter().all(|t| t.coefficient.abs() > t.threshold);
    Ok(CorollaryConditions { weak_irrep, c_min, xi, terms, holds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawOutcome {
    pub draw: usize,
    pub omega: bool,
    pub omega_2: bool,
    pub omega_3: bool,
    pub paths: usize,
    /// Smallest `k` with `S* ⊆ C_k ⊆ C̃*`.
    pub sandwich_rank: Option<usize>,
    /// First `(k, l)` whose active set is exactly `S*`.
    pub recovery: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub schema_version: u32,
    pub spec: TheorySpec,
    pub eta: f64,
    pub entry_order: EntryOrderReport,
    pub corollary: CorollaryConditions,
    /// `1 − exp(−t²/2)`.
    pub sandwich_bound: f64,
    /// `1 − 3 exp(−t²/2)`.
    pub recovery_bound: f64,
    pub draws: usize,
    pub sandwich_count: usize,
    pub sandwich_rate: f64,
    /// Binomial standard error of the rate.
    pub sandwich_stderr: f64,
    pub recovery_count: usize,
    pub recovery_rate: f64,
    pub recovery_stderr: f64,
    pub omega_count: usize,
    /// Draws inside `Ω_{C̃*,η}` where the sandwich still failed; these
    /// come from the finite grid, not from the probability bound.
    pub sandwich_failures_on_omega: usize,
    pub outcomes: Vec<DrawOutcome>,
}

/// Runs the engine (pairwise interactions, dense grid) on `draws` noise
/// realizations of the fixed design and counts how often some candidate set
/// is sandwiched between `S*` and `C̃*`, and how often some stored point
/// recovers `S*` exactly.
pub fn verify_theorem1(spec: &TheorySpec, seed: u64) -> Result<TheoremReport> {
    let td = TheoryDesign::new(spec)?;
    let truth = &spec.truth;
    let eta = spec.eta();
    let entry_order = entry_order_check(&td, truth, eta, seed)?;
    let corollary = corollary_conditions(&td, truth, spec.t, eta)?;

    let cfg = EngineConfig {
        max_order: 2,
        grid_len: spec.grid_len,
        ..EngineConfig::default()
    };
    let all: Vec<usize> = (0..td.design.width()).collect();
    let noise: Vec<usize> = all.iter().copied().filter(|j| !td.support.contains(j)).collect();
    let support_set: BTreeSet<VariableId> = truth.support().into_iter().collect();
    let sandwich = truth.sandwich_set();

    let outcomes = (0..spec.draws)
        .into_par_iter()
        .map(|draw| -> Result<DrawOutcome> {
            let mut rng = trial_rng(seed, draw);
            let eps: Vec<f64> = (0..spec.n)
                .map(|_| truth.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: Vec<f64> = td.fstar.iter().zip(&eps).map(|(f, e)| truth.intercept + f + e).collect();
            let tree = engine::run(&td.raw, &ResponseVector::new(y)?, &cfg)?;
            let mut sandwich_rank = None;
            let mut recovery = None;
            for k in 1..=tree.len() {
                let cands = tree.candidates(k);
                if sandwich_rank.is_none()
                    && support_set.iter().all(|v| cands.contains(v))
                    && cands.iter().all(|v| sandwich.contains(v))
                {
                    sandwich_rank = Some(k);
                }
                if recovery.is_none() {
                    recovery = tree.path(k).points.iter().enumerate().find_map(|(l, pt)| {
                        let active: BTreeSet<VariableId> = tree.active_variables(pt).into_iter().collect();
                        (active == support_set).then_some((k, l))
                    });
                }
            }
            Ok(DrawOutcome {
                draw,
                omega: omega_c(&td.design, &all, &eps, eta),
                omega_2: omega_2(&td.design, &noise, &td.support, &eps, eta)?,
                omega_3: omega_3(&td.design, &td.support, &eps, corollary.xi)?,
                paths: tree.len(),
                sandwich_rank,
                recovery,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let draws = spec.draws;
    let rate = |count: usize| count as f64 / draws as f64;
    let stderr = |r: f64| (r * (1.0 - r) / draws as f64).sqrt();
    let sandwich_count = outcomes.iter().filter(|o| o.sandwich_rank.is_some()).count();
    let recovery_count = outcomes.iter().filter(|o| o.recovery.is_some()).count();
    let tail = (-spec.t * spec.t / 2.0).exp();
    Ok(TheoremReport {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        eta,
        entry_order,
        corollary,
        sandwich_bound: 1.0 - tail,
        recovery_bound: 1.0 - 3.0 * tail,
        draws,
        sandwich_count,
        sandwich_rate: rate(sandwich_count),
        sandwich_stderr: stderr(rate(sandwich_count)),
        recovery_count,
        recovery_rate: rate(recovery_count),
        recovery_stderr: stderr(rate(recovery_count)),
        omega_count: outcomes.iter().filter(|o| o.omega).count(),
        sandwich_failures_on_omega: outcomes.iter().filter(|o| o.omega && o.sandwich_rank.is_none()).count(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_design(n: usize, p: usize, seed: u64) -> WorkingDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Population::Gaussian { p, covariance: CovarianceKind::Identity }
            .draw(n, &mut rng)
            .unwrap();
        WorkingDesign::assemble(&raw, &CandidateSet::mains(p)).unwrap()
    }

    /// Columns `√n e_j` (centered by pairing rows), so `Σ = I` exactly.
    fn orthonormal_design(p: usize) -> WorkingDesign {
        let n = 2 * p;
        let mut cols = vec![vec![0.0; n]; p];
        for (j, col) in cols.iter_mut().enumerate() {
            col[2 * j] = 1.0;
            col[2 * j + 1] = -1.0;
        }
        let raw = RawDesign::from_columns(cols).unwrap();
        WorkingDesign::assemble(&raw, &CandidateSet::mains(p)).unwrap()
    }

    fn sign_sup(sigma_ms: &[f64], sigma_ss: &[f64], s: usize) -> f64 {
        let mut best = 0.0f64;
        for bits in 0..1u32 << s {
            let tau: Vec<f64> = (0..s).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            best = best.max(weak_irrepresentable(sigma_ms, sigma_ss, s, &tau).unwrap());
        }
        best
    }

    #[test]
    fn projection_recovers_exact_representation() {
        let d = random_design(40, 6, 1);
        let s = [0, 2, 5];
        let beta = [1.5, -0.25, 2.0];
        let f = d.predict_sparse(&s.iter().copied().zip(beta).collect::<Vec<_>>());
        let b = beta_projection(&d, &s, &f).unwrap();
        for (x, y) in b.iter().zip(beta) {
            assert_relative_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_matches_qr_oracle() {
        let d = random_design(30, 5, 2);
        let s = [0, 1, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let x = nalgebra::DMatrix::from_fn(30, 4, |i, j| d.column(s[j])[i]);
        let qr = x.qr();
        let qty = qr.q().transpose() * nalgebra::DVector::from_vec(f.clone());
        let oracle = qr.r().solve_upper_triangular(&qty).unwrap();
        let b = beta_projection(&d, &s, &f).unwrap();
        for (x, y) in b.iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_of_orthogonal_signal_is_zero() {
        let d = orthonormal_design(4);
        let f = d.column(3).to_vec();
        let b = beta_projection(&d, &[0, 1], &f).unwrap();
        assert!(b.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let cols = vec![vec![1.0, 2.0, 3.0, 5.0], vec![1.0, 2.0, 3.0, 5.0]];
        let raw = RawDesign::from_columns(cols).unwrap();
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(2)).unwrap();
        assert!(matches!(beta_projection(&d, &[0, 1], &[0.0; 4]), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn irrep_reductions() {
        let d = orthonormal_design(4);
        let g_ss = GramBlock::new(&d, &[0, 1], &[0, 1]);
        let g_ms = GramBlock::new(&d, &[2, 3], &[0, 1]);
        assert_eq!(irrepresentable_lhs(&g_ms.values, &g_ss.values, 2).unwrap(), 0.0);
        // identity Gram: the row sum of the single cross row
        let ident = [1.0, 0.0, 0.0, 1.0];
        let cross = [0.3, -0.2];
        assert_relative_eq!(irrepresentable_lhs(&cross, &ident, 2).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn irrep_equals_sign_enumeration() {
        for (seed, s) in [(4u64, 1usize), (5, 3), (6, 6), (7, 10)] {
            let d = random_design(60, s + 5, seed);
            let sidx: Vec<usize> = (0..s).collect();
            let midx: Vec<usize> = (s..s + 5).collect();
            let g_ss = GramBlock::new(&d, &sidx, &sidx);
            let g_ms = GramBlock::new(&d, &midx, &sidx);
            let formula = irrepresentable_lhs(&g_ms.values, &g_ss.values, s).unwrap();
            let brute = sign_sup(&g_ms.values, &g_ss.values, s);
            assert_relative_eq!(formula, brute, max_relative = 1e-12);
        }
    }

    #[test]
    fn strong_irrep_implies_weak() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..40u64 {
            let d = random_design(50, 9, 100 + seed);
            let sidx = [0, 1, 2, 3];
            let midx = [4, 5, 6, 7, 8];
            let g_ss = GramBlock::new(&d, &sidx, &sidx);
            let g_ms = GramBlock::new(&d, &midx, &sidx);
            let strong = irrepresentable_lhs(&g_ms.values, &g_ss.values, 4).unwrap();
            let tau: Vec<f64> = (0..4).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let weak = weak_irrepresentable(&g_ms.values, &g_ss.values, 4, &tau).unwrap();
            assert!(weak <= strong + 1e-15);
            if strong < 1.0 {
                assert!(weak < 1.0);
            }
        }
    }

    #[test]
    fn eta_and_xi_values() {
        assert_eq!(eta_value(2.0, 100, 10, 4, 0.0), 0.0);
        assert_eq!(xi_value(2.0, 100, 5, 0.0, 0.7), 0.0);
        // 10 + 16/2 = 18
        let expected = ((4.0 + 2.0 * 18f64.ln()) / 100.0).sqrt();
        assert_relative_eq!(eta_value(2.0, 100, 10, 4, 1.0), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.312_741_802_703_001_8, epsilon = 1e-12);
        let scaled: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| eta_value(2.0, n, 10, 4, 1.3) * (n as f64).sqrt())
            .collect();
        assert_relative_eq!(scaled[0], scaled[1], max_relative = 1e-14);
        assert_relative_eq!(scaled[1], scaled[2], max_relative = 1e-14);
        assert_relative_eq!(
            xi_value(1.0, 50, 4, 2.0, 0.5),
            2.0 * ((1.0 + 2.0 * 4f64.ln()) / 25.0).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn l1_audit() {
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (exact, bound) = l1_norm_bound_audit(&ident, 3, 1).unwrap();
        assert_relative_eq!(exact, 1.0, epsilon = 1e-15);
        assert_relative_eq!(bound, 3f64.sqrt(), epsilon = 1e-12);

        // explicit inverse vs per-basis solves
        let d = random_design(40, 5, 9);
        let idx: Vec<usize> = (0..5).collect();
        let g = GramBlock::new(&d, &idx, &idx);
        let inv = nalgebra::DMatrix::from_row_slice(5, 5, &g.values).try_inverse().unwrap();
        for v in 0..5 {
            let (exact, bound) = l1_norm_bound_audit(&g.values, 5, v).unwrap();
            let oracle: f64 = inv.column(v).iter().map(|x| x.abs()).sum();
            assert!((exact - oracle).abs() < 1e-10);
            assert!(exact <= bound);
        }
    }

    #[test]
    fn l1_bound_random_correlation_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let s = rng.random_range(1..=8usize);
            let k = s + rng.random_range(0..6usize);
            // A Aᵀ rescaled to unit diagonal
            let a: Vec<f64> = (0..s * k).map(|_| rng.sample(StandardNormal)).collect();
            let mut c = vec![0.0; s * s];
            for i in 0..s {
                for j in 0..s {
                    c[i * s + j] = dot(&a[i * k..(i + 1) * k], &a[j * k..(j + 1) * k]);
                }
            }
            let dg: Vec<f64> = (0..s).map(|i| c[i * s + i].sqrt()).collect();
            for i in 0..s {
                for j in 0..s {
                    c[i * s + j] /= dg[i] * dg[j];
                }
            }
            let v = rng.random_range(0..s);
            if let Ok((exact, bound)) = l1_norm_bound_audit(&c, s, v) {
                assert!(exact <= bound * (1.0 + 1e-9), "{exact} > {bound}");
            }
        }
    }

    #[test]
    fn orthonormal_entry_reduces_to_three_eta() {
        let d = orthonormal_design(5);
        let eta = 0.1;
        let c: Vec<usize> = (0..5).collect();
        for (bv, expect) in [(0.31, true), (0.29, false)] {
            let f = d.predict_sparse(&[(0, bv), (1, 1.0)]);
            let r = entry_check(&d, &f, 0, &[0, 1], &c, eta).unwrap();
            assert_relative_eq!(r.rhs, 3.0 * eta, epsilon = 1e-12);
            assert_eq!(r.holds, expect);
        }
    }

    #[test]
    fn zero_coefficient_never_enters() {
        let d = random_design(50, 6, 11);
        let f = d.predict_sparse(&[(1, 2.0)]);
        let c: Vec<usize> = (0..6).collect();
        for eta in [0.0, 1e-6, 0.5] {
            let r = entry_check(&d, &f, 0, &[0, 1], &c, eta).unwrap();
            assert!(r.beta_s_v.abs() < 1e-12);
            assert!(!r.holds);
        }
    }

    #[test]
    fn entry_is_monotone_in_eta() {
        for seed in 0..20u64 {
            let d = random_design(80, 8, 200 + seed);
            let f = d.predict_sparse(&[(0, 1.0), (1, -0.7), (2, 0.4), (5, 0.2)]);
            let c: Vec<usize> = (0..8).collect();
            let etas = [0.3, 0.2, 0.1, 0.05, 0.0];
            let holds: Vec<bool> = etas
                .iter()
                .map(|&e| entry_check(&d, &f, 0, &[0, 1, 2], &c, e).unwrap().holds)
                .collect();
            for w in holds.windows(2) {
                assert!(!w[0] || w[1]);
            }
        }
    }

    #[test]
    fn noiseless_lemma_holds_on_first_draw() {
        let inst = LemmaInstance::constructed(12, 0, 1.25).unwrap();
        let eps = vec![0.0; inst.design.n()];
        let r = verify_lemma1(&inst, &eps, 200, &SolverConfig::default()).unwrap();
        assert!(r.applicable && r.entry.holds);
        assert!(r.part_i_checked > 0 && r.part_ii_checked > 0 && r.part_iii_points > 0);
        assert!(r.holds);
    }

    #[test]
    fn lemma_refuses_noise_outside_event() {
        let inst = LemmaInstance::constructed(13, 0, 1.25).unwrap();
        let eps: Vec<f64> = inst.design.column(1).iter().map(|x| x * 10.0).collect();
        assert!(matches!(
            verify_lemma1(&inst, &eps, 50, &SolverConfig::default()),
            Err(Error::EventNotSatisfied(_))
        ));
    }

    #[test]
    fn irrep_violation_is_flagged_without_claims() {
        // M contains a near copy of the sum of S
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 60;
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let raw = RawDesign::from_columns(vec![a, b, c]).unwrap();
        let design = WorkingDesign::assemble(&raw, &CandidateSet::mains(3)).unwrap();
        let fstar = design.predict_sparse(&[(0, 1.0), (1, 1.0)]);
        let inst = LemmaInstance { design, fstar, v: 0, s: vec![0, 1], c: vec![0, 1, 2], sigma: 0.0, eta: 0.01 };
        let r = verify_lemma1(&inst, &vec![0.0; n], 50, &SolverConfig::default()).unwrap();
        assert!(r.entry.irrep_lhs >= 1.0);
        assert!(!r.applicable && !r.entry.holds);
        assert_eq!(r.part_i_checked + r.part_ii_checked, 0);
    }

    #[test]
    fn empty_interaction_set_is_sandwiched_at_first_path() {
        let truth = TruthSpec::new(8, vec![(VariableId::main(1), 2.0), (VariableId::main(2), -1.5)], 0.5).unwrap();
        let spec = TheorySpec {
            schema_version: SCHEMA_VERSION,
            truth,
            n: 60,
            population: Population::Gaussian { p: 8, covariance: CovarianceKind::Identity },
            design_seed: 1,
            t: 2.0,
            draws: 5,
            grid_len: 100,
        };
        let r = verify_theorem1(&spec, 3).unwrap();
        assert!(r.entry_order.holds);
        assert_eq!(r.entry_order.ordering, Some(vec![]));
        assert!(r.outcomes.iter().all(|o| o.sandwich_rank == Some(1)));
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(&[1, 2, 3]);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![1, 2, 3]);
        assert_eq!(p[5], vec![3, 2, 1]);
    }

    #[test]
    fn reference_spec_is_valid() {
        let spec = TheorySpec::reference();
        spec.validate().unwrap();
        assert_eq!(spec.truth.p, 20);
        TheoryDesign::new(&spec).unwrap();
    }
}
