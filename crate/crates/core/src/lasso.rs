//! Coordinate-descent Lasso on a fixed candidate set.
//!
//! Minimizes `(1/2n)‖Y − Xβ‖² + λ‖β‖₁` over standardized, centered columns
//! with a centered response, so no intercept enters the optimization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::design::{ResponseVector, WorkingDesign};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Cholesky};
use crate::variables::VariableId;

/// Strictly decreasing positive λ values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidGrid("values must be finite and positive".into()));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidGrid("values must be strictly decreasing".into()));
        }
        Ok(Self { values })
    }

    /// `len` log-spaced values from `lambda_max` down to `ratio * lambda_max`.
    pub fn log_spaced(lambda_max: f64, ratio: f64, len: usize) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "lambda_max must be positive, got {lambda_max:e} (response orthogonal to every column?)"
            )));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidGrid(format!("ratio must lie in (0, 1), got {ratio}")));
        }
        if len < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 values, got {len}")));
        }
        let step = ratio.ln() / (len - 1) as f64;
        let values = (0..len)
            .map(|l| {
                if l == 0 {
                    lambda_max
                } else {
                    lambda_max * (step * l as f64).exp()
                }
            })
            .collect();
        Self::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, l: usize) -> f64 {
        self.values[l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Self {
        g.values
    }
}

/// Sparse coefficients keyed by column index of the design they were fit on.
/// Entries are sorted by index and never zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector {
    entries: Vec<(usize, f64)>,
}

impl CoefficientVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// Builds from arbitrary (index, value) pairs; zeros are dropped and
    /// duplicate indices keep the last value.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut entries: Vec<(usize, f64)> = pairs.into_iter().collect();
        entries.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (j, b) in entries {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 = b,
                _ => out.push((j, b)),
            }
        }
        out.retain(|e| e.1 != 0.0);
        Self { entries: out }
    }

    pub fn from_dense(beta: &[f64]) -> Self {
        Self {
            entries: beta
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0.0)
                .map(|(j, b)| (j, *b))
                .collect(),
        }
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for &(j, b) in &self.entries {
            if j < width {
                out[j] = b;
            }
        }
        out
    }

    pub fn get(&self, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn active(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1.abs()).sum()
    }

    /// Largest column index with a nonzero coefficient.
    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|e| e.0)
    }

    /// Coefficients keyed by variable.
    pub fn by_variable(&self, design: &WorkingDesign) -> Vec<(VariableId, f64)> {
        self.entries
            .iter()
            .map(|&(j, b)| (design.variable(j).clone(), b))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &CoefficientVector) -> f64 {
        let (mut i, mut k) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut m = 0.0f64;
        while i < a.len() || k < b.len() {
            match (a.get(i), b.get(k)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    m = m.max((x.1 - y.1).abs());
                    i += 1;
                    k += 1;
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    m = m.max(x.1.abs());
                    i += 1;
                }
                (Some(x), None) => {
                    m = m.max(x.1.abs());
                    i += 1;
                }
                (_, Some(y)) => {
                    m = m.max(y.1.abs());
                    k += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence: largest coefficient change in one cycle.
    pub tol: f64,
    /// Full cycles before giving up.
    pub max_iter: usize,
    /// KKT verification tolerance.
    pub kkt_tol: f64,
    /// Perfect fit when `‖R‖₂/√n` falls below this.
    pub fit_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            kkt_tol: 1e-7,
            fit_tol: 1e-8,
        }
    }
}

/// `(1/n)‖X_Cᵀ Y‖_∞`.
pub fn lambda_max(design: &WorkingDesign, y: &[f64]) -> f64 {
    let n = design.n() as f64;
    (0..design.width())
        .map(|j| (dot(design.column(j), y) / n).abs())
        .fold(0.0, f64::max)
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `(1/2n)‖Y − Xβ‖² + λ‖β‖₁`.
pub fn objective(design: &WorkingDesign, y: &[f64], beta: &CoefficientVector, lambda: f64) -> f64 {
    let r = residual(design, y, beta);
    dot(&r, &r) / (2.0 * design.n() as f64) + lambda * beta.l1_norm()
}

pub fn residual(design: &WorkingDesign, y: &[f64], beta: &CoefficientVector) -> Vec<f64> {
    let mut r = y.to_vec();
    for &(j, b) in beta.entries() {
        axpy(-b, design.column(j), &mut r);
    }
    r
}

/// A solution together with its residual `Y − X_C β`.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoState {
    pub beta: CoefficientVector,
    pub residual: Vec<f64>,
}

impl LassoState {
    pub fn zero(y: &[f64]) -> Self {
        Self {
            beta: CoefficientVector::zeros(),
            residual: y.to_vec(),
        }
    }

    /// `‖R‖₂/√n`.
    pub fn residual_rms(&self) -> f64 {
        (dot(&self.residual, &self.residual) / self.residual.len() as f64).sqrt()
    }
}

/// Solves at `lambda` starting from `warm`, which may be fit on a prefix of
/// the design's columns. `lambda_prev` (the previous grid value) enables
/// the sequential strong rule; screened-out columns are verified afterwards
/// so the result does not depend on it.
pub fn solve(
    design: &WorkingDesign,
    y: &[f64],
    lambda: f64,
    lambda_prev: Option<f64>,
    warm: &CoefficientVector,
    cfg: &SolverConfig,
) -> Result<LassoState> {
    let n = design.n();
    let nf = n as f64;
    let p = design.width();
    let mut beta = warm.to_dense(p);
    let mut r = residual(design, y, warm);

    let screen = 2.0 * lambda - lambda_prev.unwrap_or(lambda).max(lambda);
    let mut in_set = vec![false; p];
    let mut working: Vec<usize> = Vec::new();
    for j in 0..p {
        if beta[j] != 0.0 || (dot(design.column(j), &r) / nf).abs() >= screen {
            in_set[j] = true;
            working.push(j);
        }
    }

    let mut tol = cfg.tol;
    let mut cycles = 0usize;
    let mut last_change = f64::INFINITY;
    loop {
        // cyclic passes over the working set
        let mut prev_obj = f64::INFINITY;
        loop {
            if cycles >= cfg.max_iter {
                return Err(Error::NoConvergence {
                    lambda,
                    iterations: cycles,
                    last_change,
                    best: CoefficientVector::from_dense(&beta).entries,
                });
            }
            let mut change = 0.0f64;
            for &j in &working {
                let x = design.column(j);
                let c = design.curvature(j);
                let b = beta[j];
                let z = dot(x, &r) / nf + c * b;
                let nb = soft_threshold(z, lambda) / c;
                if nb != b {
                    axpy(b - nb, x, &mut r);
                    beta[j] = nb;
                    change = change.max((nb - b).abs());
                }
            }
            cycles += 1;
            last_change = change;
            if cfg!(debug_assertions) {
                let obj = dot(&r, &r) / (2.0 * nf)
                    + lambda * working.iter().map(|&j| beta[j].abs()).sum::<f64>();
                debug_assert!(
                    obj <= prev_obj + 1e-12 * (1.0 + prev_obj.abs()),
                    "objective increased: {prev_obj} -> {obj}"
                );
                prev_obj = obj;
            }
            if change <= tol {
                break;
            }
        }

        // verify the working set itself, then every screened-out column
        let mut worst = 0.0f64;
        for &j in &working {
            let g = dot(design.column(j), &r) / nf;
            let v = if beta[j] != 0.0 {
                (g - lambda * beta[j].signum()).abs()
            } else {
                g.abs() - lambda
            };
            worst = worst.max(v);
        }
        if worst > 0.1 * cfg.kkt_tol && tol > 1e-15 {
            tol *= 0.01;
            continue;
        }
        let mut added = false;
        for j in 0..p {
            if !in_set[j] && (dot(design.column(j), &r) / nf).abs() > lambda {
                in_set[j] = true;
                added = true;
            }
        }
        if !added {
            break;
        }
        working = (0..p).filter(|&j| in_set[j]).collect();
    }

    Ok(LassoState {
        beta: CoefficientVector::from_dense(&beta),
        residual: r,
    })
}

/// Single Lasso fit at `lambda`.
pub fn fit_at(
    design: &WorkingDesign,
    y: &ResponseVector,
    lambda: f64,
    warm: &CoefficientVector,
    cfg: &SolverConfig,
) -> Result<CoefficientVector> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    Ok(solve(design, y.values(), lambda, None, warm, cfg)?.beta)
}

/// When a path stops early.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// A point with more active variables than this ends the path and is
    /// not stored.
    pub max_active: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GridEnd,
    PerfectFit,
    ActiveCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub coefficients: CoefficientVector,
    pub residual_norm: f64,
}

/// Solutions at consecutive grid points starting from the grid head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFragment {
    pub points: Vec<PathPoint>,
    pub termination: Termination,
}

/// Warm-started path over the whole grid.
pub fn path(
    design: &WorkingDesign,
    y: &ResponseVector,
    grid: &LambdaGrid,
    stop: &StopRule,
    cfg: &SolverConfig,
) -> Result<PathFragment> {
    let mut points = Vec::new();
    let mut warm = CoefficientVector::zeros();
    for l in 0..grid.len() {
        let prev = (l > 0).then(|| grid.get(l - 1));
        let state = solve(design, y.values(), grid.get(l), prev, &warm, cfg)?;
        if stop.max_active.is_some_and(|m| state.beta.len() > m) {
            return Ok(PathFragment {
                points,
                termination: Termination::ActiveCap,
            });
        }
        let rms = state.residual_rms();
        points.push(PathPoint {
            lambda: grid.get(l),
            coefficients: state.beta.clone(),
            residual_norm: rms * (design.n() as f64).sqrt(),
        });
        if rms < cfg.fit_tol {
            return Ok(PathFragment {
                points,
                termination: Termination::PerfectFit,
            });
        }
        warm = state.beta;
    }
    Ok(PathFragment {
        points,
        termination: Termination::GridEnd,
    })
}

/// Long-format CSV: `lambda,variable,coefficient`, one row per nonzero.
pub fn write_path_csv<W: Write>(
    out: W,
    design: &WorkingDesign,
    fragment: &PathFragment,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "variable", "coefficient"])?;
    for pt in &fragment.points {
        for (v, b) in pt.coefficients.by_variable(design) {
            w.write_record([format!("{:e}", pt.lambda), v.to_string(), format!("{b:e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub max_violation: f64,
    pub worst_variable: Option<VariableId>,
    pub passed: bool,
}

/// KKT audit of `fitted` (indexed by `design_super` columns) for the
/// columns in `check`. Active columns need `|g_j − λ sgn β_j| ≤ τ`, inactive
/// ones `|g_j| ≤ λ + τ`, where `g_j = X_jᵀR/n`.
pub fn kkt_check(
    design_super: &WorkingDesign,
    fitted: &CoefficientVector,
    residual: &[f64],
    lambda: f64,
    check: &[usize],
    tol: f64,
) -> KktReport {
    let n = design_super.n() as f64;
    let mut worst: Option<(usize, f64)> = None;
    for &j in check {
        let g = dot(design_super.column(j), residual) / n;
        let b = fitted.get(j);
        let v = if b != 0.0 {
            (g - lambda * b.signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        if worst.is_none_or(|(_, w)| v > w) {
            worst = Some((j, v));
        }
    }
    let max_violation = worst.map_or(0.0, |w| w.1);
    KktReport {
        max_violation,
        worst_variable: worst
            .filter(|w| w.1 > 0.0)
            .map(|(j, _)| design_super.variable(j).clone()),
        passed: max_violation <= tol,
    }
}

/// Least-squares refit on the active columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: CoefficientVector,
}

/// Relative pivot tolerance for refits.
pub const REFIT_RANK_TOL: f64 = 1e-10;

/// OLS of `y` on the columns in `active`; the intercept is the response
/// mean because the columns are centered.
pub fn ols_refit(design: &WorkingDesign, y: &ResponseVector, active: &[usize]) -> Result<OlsFit> {
    let coefs = ols_coefficients(design, y.values(), active)?;
    Ok(OlsFit {
        intercept: y.mean(),
        coefficients: CoefficientVector::from_pairs(active.iter().copied().zip(coefs)),
    })
}

/// Normal-equation solve for the active columns, in `active` order.
pub fn ols_coefficients(design: &WorkingDesign, y: &[f64], active: &[usize]) -> Result<Vec<f64>> {
    let k = active.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let n = design.n();
    if k >= n {
        return Err(Error::RankDeficient {
            pivot: 0.0,
            tolerance: REFIT_RANK_TOL,
        });
    }
    let nf = n as f64;
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..=a {
            let v = dot(design.column(active[a]), design.column(active[b])) / nf;
            gram[a * k + b] = v;
            gram[b * k + a] = v;
        }
    }
    let rhs: Vec<f64> = active.iter().map(|&j| dot(design.column(j), y) / nf).collect();
    let chol = Cholesky::new(&gram, k, REFIT_RANK_TOL)?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::RawDesign;
    use crate::variables::CandidateSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (WorkingDesign, ResponseVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.5 * cols[0][i] - cols[1][i] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let raw = RawDesign::from_columns(cols).unwrap();
        let w = WorkingDesign::assemble(&raw, &CandidateSet::mains(p)).unwrap();
        (w, ResponseVector::new(y).unwrap())
    }

    #[test]
    fn grid_is_log_spaced_and_validated() {
        let g = LambdaGrid::log_spaced(2.0, 1e-3, 100).unwrap();
        assert_eq!(g.get(0), 2.0);
        assert!((g.get(99) - 2e-3).abs() < 1e-15);
        assert!(LambdaGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![1.0]).is_err());
        assert!(LambdaGrid::log_spaced(0.0, 1e-3, 10).is_err());
    }

    #[test]
    fn lambda_max_matches_direct_dot_products() {
        let (w, y) = instance(20, 5, 1);
        let direct = (0..5)
            .map(|j| {
                w.column(j)
                    .iter()
                    .zip(y.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .abs()
                    / 20.0
            })
            .fold(0.0, f64::max);
        assert!((lambda_max(&w, y.values()) - direct).abs() < 1e-12);
    }

    #[test]
    fn lambda_max_of_aligned_column_is_one() {
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let raw = RawDesign::from_columns(vec![x.clone()]).unwrap();
        let w = WorkingDesign::assemble(&raw, &CandidateSet::mains(1)).unwrap();
        assert!((lambda_max(&w, &x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solution_is_exactly_zero_at_lambda_max() {
        let (w, y) = instance(30, 6, 2);
        let lm = lambda_max(&w, y.values());
        let b = fit_at(&w, &y, lm, &CoefficientVector::zeros(), &SolverConfig::default()).unwrap();
        assert!(b.is_empty());
        let b = fit_at(&w, &y, 3.0 * lm, &CoefficientVector::zeros(), &SolverConfig::default()).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn orthogonal_design_is_soft_thresholding() {
        // Hadamard-type columns, mutually orthogonal with norm sqrt(8)
        let h = [
            [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
        ];
        let raw = RawDesign::from_columns(h.iter().map(|c| c.to_vec()).collect()).unwrap();
        let w = WorkingDesign::assemble(&raw, &CandidateSet::mains(3)).unwrap();
        let y = ResponseVector::new(vec![3.0, 1.0, -2.0, 0.5, 1.0, 0.0, 2.0, -1.0]).unwrap();
        let lambda = 0.3;
        let b = fit_at(&w, &y, lambda, &CoefficientVector::zeros(), &SolverConfig::default()).unwrap();
        for j in 0..3 {
            let z = dot(w.column(j), y.values()) / 8.0;
            assert!((b.get(j) - soft_threshold(z, lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn path_points_pass_kkt_and_match_cold_starts() {
        let (w, y) = instance(40, 8, 3);
        let grid = LambdaGrid::log_spaced(lambda_max(&w, y.values()), 1e-2, 15).unwrap();
        let cfg = SolverConfig::default();
        let frag = path(&w, &y, &grid, &StopRule { max_active: None }, &cfg).unwrap();
        assert_eq!(frag.termination, Termination::GridEnd);
        let all: Vec<usize> = (0..8).collect();
        for pt in &frag.points {
            let r = residual(&w, y.values(), &pt.coefficients);
            assert!(kkt_check(&w, &pt.coefficients, &r, pt.lambda, &all, cfg.kkt_tol).passed);
            let cold = fit_at(&w, &y, pt.lambda, &CoefficientVector::zeros(), &cfg).unwrap();
            assert!(cold.max_abs_diff(&pt.coefficients) < 1e-6);
        }
    }

    #[test]
    fn perturbed_solution_fails_kkt_at_perturbed_variable() {
        let (w, y) = instance(40, 6, 4);
        let cfg = SolverConfig::default();
        let lambda = 0.2 * lambda_max(&w, y.values());
        let b = fit_at(&w, &y, lambda, &CoefficientVector::zeros(), &cfg).unwrap();
        let target = b.active()[0];
        let bumped = CoefficientVector::from_pairs(
            b.entries()
                .iter()
                .map(|&(j, v)| (j, if j == target { v + 10.0 * cfg.kkt_tol } else { v })),
        );
        let r = residual(&w, y.values(), &bumped);
        let all: Vec<usize> = (0..6).collect();
        let rep = kkt_check(&w, &bumped, &r, lambda, &all, cfg.kkt_tol);
        assert!(!rep.passed);
        assert_eq!(rep.worst_variable, Some(w.variable(target).clone()));
    }

    #[test]
    fn zero_fit_above_lambda_max_passes_kkt() {
        let (w, y) = instance(20, 4, 5);
        let lm = lambda_max(&w, y.values());
        let rep = kkt_check(&w, &CoefficientVector::zeros(), y.values(), lm, &[0, 1, 2, 3], 1e-7);
        assert!(rep.passed);
    }

    #[test]
    fn active_cap_stops_path_without_storing() {
        let (w, y) = instance(40, 8, 6);
        let grid = LambdaGrid::log_spaced(lambda_max(&w, y.values()), 1e-3, 30).unwrap();
        let frag = path(&w, &y, &grid, &StopRule { max_active: Some(2) }, &SolverConfig::default()).unwrap();
        assert_eq!(frag.termination, Termination::ActiveCap);
        assert!(frag.points.iter().all(|p| p.coefficients.len() <= 2));
    }

    #[test]
    fn empty_refit_is_the_mean() {
        let (w, y) = instance(20, 3, 7);
        let fit = ols_refit(&w, &y, &[]).unwrap();
        assert_eq!(fit.intercept, y.mean());
        assert!(fit.coefficients.is_empty());
    }

    #[test]
    fn refit_recovers_noiseless_coefficients() {
        let (w, _) = instance(25, 5, 8);
        let truth = CoefficientVector::from_pairs([(1, 0.7), (3, -2.0)]);
        let y = ResponseVector::new(w.predict_sparse(truth.entries())).unwrap();
        let fit = ols_refit(&w, &y, &[1, 3]).unwrap();
        assert!(fit.coefficients.max_abs_diff(&truth) < 1e-8);
    }

    #[test]
    fn path_csv_has_long_format_header() {
        let (w, y) = instance(20, 3, 9);
        let grid = LambdaGrid::log_spaced(lambda_max(&w, y.values()), 0.1, 5).unwrap();
        let frag = path(&w, &y, &grid, &StopRule { max_active: None }, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&mut buf, &w, &frag).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,variable,coefficient\n"));
        assert!(text.contains(",[1],"));
    }
}
