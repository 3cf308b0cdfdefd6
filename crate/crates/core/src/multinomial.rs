//! Multinomial regression with a group-Lasso penalty on the rows of the
//! coefficient matrix, as a base procedure for the engine.
//!
//! The objective is the penalized negative log-likelihood
//! `Q(μ, β) = -(1/n) Σ_i log Π_{i,y_i} + λ Σ_v ‖β_v‖₂`. With it, active rows
//! satisfy `(1/n) X_vᵀ(Y − Π) = λ β_v / ‖β_v‖₂` and zero rows
//! `(1/n)‖X_vᵀ(Y − Π)‖₂ ≤ λ`.
//!
//! The solver is proximal Newton: each step minimizes the penalized
//! second-order model of the loss by block coordinate descent, bounding the
//! block Hessian `(1/n) Σ_i x_iv² W_i` by `(1/n) Σ_i x_iv² max_c 2Π_ic(1 − Π_ic)`
//! so that every row update is a group soft-threshold, then backtracks on the
//! true objective. The local bound keeps the steps useful near separation,
//! where the global bound `½` is far too loose. Rows and intercepts stay
//! centered across classes throughout.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{fold_assignment, split, CvConfig, CvGrid, FoldLosses, Refit, ValidationColumns};
use crate::design::{ColumnTransform, RawDesign, Standardizer, WorkingDesign};
use crate::engine::{self, BaseProcedure, EngineConfig, SolutionTree, SparsePoint, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::lasso::{KktReport, LambdaGrid};
use crate::linalg::Cholesky;
use crate::variables::{CandidateSet, VariableId};

/// Floor on probabilities inside the deviance.
pub const PROB_FLOOR: f64 = 1e-12;
/// Refits use `λ = REFIT_RATIO · λ_max` on the selected rows.
pub const REFIT_RATIO: f64 = 1e-4;
/// Newton steps allowed in one solve.
const MAX_NEWTON_STEPS: usize = 500;
/// Coordinate passes on one quadratic model; an inexact minimizer is still a
/// descent direction.
const MAX_INNER_PASSES: usize = 100;
/// Lower bound on a block curvature once probabilities saturate.
const CURVATURE_FLOOR: f64 = 1e-12;

/// Class of every observation; the indicator matrix `Y` is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorResponse {
    classes: usize,
    labels: Vec<usize>,
}

impl IndicatorResponse {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidConfig(format!("label {c} outside {classes} classes")));
        }
        Ok(Self { classes, labels })
    }

    /// From an n×J 0/1 matrix whose rows each contain a single 1.
    pub fn from_indicators(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        let labels = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let ok = r.len() == classes
                    && r.iter().all(|&v| v == 0.0 || v == 1.0)
                    && r.iter().sum::<f64>() == 1.0;
                if ok {
                    Ok(r.iter().position(|&v| v == 1.0).expect("one entry is 1"))
                } else {
                    Err(Error::InvalidConfig(format!("indicator row {} does not have exactly one 1", i + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn indicator(&self, i: usize, c: usize) -> f64 {
        f64::from(u8::from(self.labels[i] == c))
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            classes: self.classes,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn check_all_present(&self) -> Result<()> {
        if let Some(c) = self.counts().iter().position(|&k| k == 0) {
            return Err(Error::InvalidConfig(format!("class {c} has no observations")));
        }
        Ok(())
    }
}

/// n×J class probabilities, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    classes: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Row-wise softmax of an n×J matrix of linear predictors, with the row
    /// maximum subtracted first.
    pub fn from_linear(eta: &[f64], classes: usize) -> Self {
        let mut data = vec![0.0; eta.len()];
        for (out, row) in data.chunks_mut(classes).zip(eta.chunks(classes)) {
            softmax_into(row, out);
        }
        Self { classes, data }
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.classes + c]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn softmax_into(eta: &[f64], out: &mut [f64]) {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &e) in out.iter_mut().zip(eta) {
        *o = (e - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Sparse J-column coefficient matrix: one row per active column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCoefficients {
    pub classes: usize,
    /// (column, per-class values), ascending by column, no all-zero rows.
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl GroupCoefficients {
    pub fn zeros(classes: usize) -> Self {
        Self { classes, rows: Vec::new() }
    }

    fn from_dense(dense: &[Vec<f64>], classes: usize) -> Self {
        let rows = dense
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|&b| b != 0.0))
            .map(|(j, r)| (j, r.clone()))
            .collect();
        Self { classes, rows }
    }

    fn to_dense(&self, width: usize) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.classes]; width];
        for (j, r) in &self.rows {
            if *j < width {
                d[*j] = r.clone();
            }
        }
        d
    }

    pub fn active(&self) -> Vec<usize> {
        self.rows.iter().map(|(j, _)| *j).collect()
    }

    pub fn row(&self, j: usize) -> Option<&[f64]> {
        self.rows
            .binary_search_by_key(&j, |(k, _)| *k)
            .ok()
            .map(|i| self.rows[i].1.as_slice())
    }

    pub fn group_norm_sum(&self) -> f64 {
        self.rows.iter().map(|(_, r)| norm(r)).sum()
    }
}

impl SparsePoint for GroupCoefficients {
    const SCALAR: bool = false;

    fn support(&self) -> Vec<usize> {
        self.active()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.rows.clone()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn center(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= m;
    }
}

/// Group soft-threshold: `z · max(0, 1 − t/‖z‖)`.
pub fn group_soft_threshold(z: &[f64], t: f64) -> Vec<f64> {
    let nz = norm(z);
    if nz <= t {
        vec![0.0; z.len()]
    } else {
        let s = 1.0 - t / nz;
        z.iter().map(|v| v * s).collect()
    }
}

/// `Π(μ, β)` on the rows of `design`.
pub fn softmax_probs(mu: &[f64], beta: &GroupCoefficients, design: &WorkingDesign) -> ProbabilityMatrix {
    ProbabilityMatrix::from_linear(&linear_predictor(mu, beta, design), mu.len())
}

fn linear_predictor(mu: &[f64], beta: &GroupCoefficients, design: &WorkingDesign) -> Vec<f64> {
    let j = mu.len();
    let n = design.n();
    let mut eta: Vec<f64> = (0..n).flat_map(|_| mu.iter().copied()).collect();
    for (col, row) in &beta.rows {
        let x = design.column(*col);
        for i in 0..n {
            for c in 0..j {
                eta[i * j + c] += x[i] * row[c];
            }
        }
    }
    eta
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultinomialConfig {
    /// Floor on the scaled row change that ends the inner passes.
    pub tol: f64,
    /// Inner passes over the working set before giving up.
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// A path stops once the training deviance falls below this fraction
    /// of the intercept-only deviance.
    pub fit_tol: f64,
}

impl Default for MultinomialConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
            kkt_tol: 1e-7,
            fit_tol: 1e-3,
        }
    }
}

/// A fit together with its linear predictors and probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MultinomialFit {
    pub intercepts: Vec<f64>,
    pub beta: GroupCoefficients,
    pub lambda: f64,
    eta: Vec<f64>,
    probs: ProbabilityMatrix,
}

impl MultinomialFit {
    /// The intercept-only fit: class log-proportions, centered.
    pub fn intercept_only(y: &IndicatorResponse) -> Result<Self> {
        y.check_all_present()?;
        let n = y.len() as f64;
        let mut mu: Vec<f64> = y.counts().iter().map(|&k| (k as f64 / n).ln()).collect();
        center(&mut mu);
        let eta: Vec<f64> = (0..y.len()).flat_map(|_| mu.iter().copied()).collect();
        let probs = ProbabilityMatrix::from_linear(&eta, y.classes());
        Ok(Self {
            intercepts: mu,
            beta: GroupCoefficients::zeros(y.classes()),
            lambda: f64::INFINITY,
            eta,
            probs,
        })
    }

    pub fn probabilities(&self) -> &ProbabilityMatrix {
        &self.probs
    }

    /// −(2/n) log-likelihood on the training rows.
    pub fn deviance(&self, y: &IndicatorResponse) -> f64 {
        deviance(&self.probs, y.labels())
    }
}

/// −(2/n) Σ log Π_{i, y_i}, with probabilities floored at [`PROB_FLOOR`].
pub fn deviance(probs: &ProbabilityMatrix, labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    -2.0 * labels
        .iter()
        .enumerate()
        .map(|(i, &c)| probs.get(i, c).max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n
}

/// Score `(1/n) X_jᵀ (Y − Π)` of column `j`.
fn score(design: &WorkingDesign, j: usize, y: &IndicatorResponse, probs: &ProbabilityMatrix) -> Vec<f64> {
    let x = design.column(j);
    let classes = y.classes();
    let mut g = vec![0.0; classes];
    for (i, &xi) in x.iter().enumerate() {
        let pr = probs.row(i);
        for c in 0..classes {
            g[c] -= xi * pr[c];
        }
        g[y.labels[i]] += xi;
    }
    let n = x.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn intercept_score(y: &IndicatorResponse, probs: &ProbabilityMatrix) -> Vec<f64> {
    let classes = y.classes();
    let mut g = vec![0.0; classes];
    for i in 0..y.len() {
        let pr = probs.row(i);
        for c in 0..classes {
            g[c] -= pr[c];
        }
        g[y.labels[i]] += 1.0;
    }
    let n = y.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Smallest λ at which the intercept-only fit is optimal.
pub fn group_lambda_max(design: &WorkingDesign, y: &IndicatorResponse) -> Result<f64> {
    let fit = MultinomialFit::intercept_only(y)?;
    Ok((0..design.width())
        .map(|j| norm(&score(design, j, y, &fit.probs)))
        .fold(0.0, f64::max))
}

/// `-(1/n) Σ_i log Π_{i,y_i}` computed from the linear predictors.
fn loss(eta: &[f64], y: &IndicatorResponse) -> f64 {
    let classes = y.classes();
    let total: f64 = eta
        .chunks(classes)
        .zip(&y.labels)
        .map(|(row, &c)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|e| (e - m).exp()).sum::<f64>().ln() - row[c]
        })
        .sum();
    total / y.len() as f64
}

/// `(1/n) Σ_i x_i W_i r_i` with `W_i = diag(Π_i) − Π_i Π_iᵀ`; `None` is the
/// intercept column.
fn hessian_times(x: Option<&[f64]>, probs: &ProbabilityMatrix, r: &[f64]) -> Vec<f64> {
    let classes = probs.classes();
    let n = probs.n();
    let mut out = vec![0.0; classes];
    for (i, ri) in r.chunks(classes).enumerate() {
        let xi = x.map_or(1.0, |x| x[i]);
        if xi == 0.0 {
            continue;
        }
        let p = probs.row(i);
        let pr: f64 = p.iter().zip(ri).map(|(a, b)| a * b).sum();
        for c in 0..classes {
            out[c] += xi * p[c] * (ri[c] - pr);
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Orthonormal basis of the sum-zero subspace of `R^J` (Helmert vectors).
fn sum_zero_basis(classes: usize) -> Vec<Vec<f64>> {
    (0..classes - 1)
        .map(|k| {
            let scale = (((k + 1) * (k + 2)) as f64).sqrt();
            (0..classes)
                .map(|c| match c {
                    c if c <= k => 1.0 / scale,
                    c if c == k + 1 => -((k + 1) as f64) / scale,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

struct SmoothStep {
    intercepts: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
    eta: Vec<f64>,
    /// The unit Newton step was accepted.
    full: bool,
}

/// Newton step on the intercepts and the nonzero rows, where the objective
/// is smooth, with every zero row held at zero. Declined (`None`) when a
/// zero row sits on or outside its KKT boundary, when the Hessian is
/// singular, or when the line search finds no decrease.
fn smooth_step(
    design: &WorkingDesign,
    working: &[usize],
    y: &IndicatorResponse,
    probs: &ProbabilityMatrix,
    eta: &[f64],
    beta: &[Vec<f64>],
    lambda: f64,
) -> Option<SmoothStep> {
    let classes = y.classes();
    let n = y.len();
    let active: Vec<usize> = working.iter().copied().filter(|&j| norm(&beta[j]) > 0.0).collect();
    if working
        .iter()
        .filter(|j| !active.contains(j))
        .any(|&j| norm(&score(design, j, y, probs)) >= lambda)
    {
        return None;
    }
    let q = sum_zero_basis(classes);
    let r = classes - 1;
    let blocks = active.len() + 1;
    let m = blocks * r;
    let x = |b: usize, i: usize| if b == 0 { 1.0 } else { design.column(active[b - 1])[i] };

    // Qᵀ W_i Q for every row, W_i = diag(Π_i) − Π_i Π_iᵀ
    let mut v = vec![0.0; n * r * r];
    for i in 0..n {
        let p = probs.row(i);
        let pq: Vec<f64> = q.iter().map(|qs| qs.iter().zip(p).map(|(a, b)| a * b).sum()).collect();
        for s in 0..r {
            for t in 0..r {
                let d: f64 = (0..classes).map(|c| p[c] * q[s][c] * q[t][c]).sum();
                v[(i * r + s) * r + t] = d - pq[s] * pq[t];
            }
        }
    }
    let mut h = vec![0.0; m * m];
    for a in 0..blocks {
        for b in a..blocks {
            for i in 0..n {
                let w = x(a, i) * x(b, i) / n as f64;
                if w == 0.0 {
                    continue;
                }
                for s in 0..r {
                    for t in 0..r {
                        h[(a * r + s) * m + b * r + t] += w * v[(i * r + s) * r + t];
                    }
                }
            }
            for s in 0..r {
                for t in 0..r {
                    h[(b * r + t) * m + a * r + s] = h[(a * r + s) * m + b * r + t];
                }
            }
        }
    }
    let project = |full: &[f64]| -> Vec<f64> {
        q.iter().map(|qs| qs.iter().zip(full).map(|(a, b)| a * b).sum()).collect()
    };
    let mut grad = vec![0.0; m];
    let g0 = project(&intercept_score(y, probs));
    for s in 0..r {
        grad[s] = -g0[s];
    }
    for (b, &j) in active.iter().enumerate() {
        let nb = norm(&beta[j]);
        let u: Vec<f64> = beta[j].iter().map(|v| v / nb).collect();
        let sc = score(design, j, y, probs);
        let full: Vec<f64> = sc.iter().zip(&u).map(|(g, u)| -g + lambda * u).collect();
        let gp = project(&full);
        let up = project(&u);
        let base = (b + 1) * r;
        for s in 0..r {
            grad[base + s] = gp[s];
            for t in 0..r {
                let id = if s == t { 1.0 } else { 0.0 };
                h[(base + s) * m + base + t] += lambda / nb * (id - up[s] * up[t]);
            }
        }
    }
    let chol = Cholesky::new(&h, m, 1e-12).ok()?;
    let step: Vec<f64> = chol.solve(&grad).into_iter().map(|v| -v).collect();
    let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
    if !(slope < 0.0) {
        return None;
    }
    let lift = |b: usize| -> Vec<f64> {
        (0..classes).map(|c| (0..r).map(|s| q[s][c] * step[b * r + s]).sum()).collect()
    };
    let dirs: Vec<Vec<f64>> = (0..blocks).map(lift).collect();
    let mut deta = vec![0.0; n * classes];
    for (b, d) in dirs.iter().enumerate() {
        for i in 0..n {
            let xi = x(b, i);
            for c in 0..classes {
                deta[i * classes + c] += xi * d[c];
            }
        }
    }
    let penalty = |s: f64| -> f64 {
        active
            .iter()
            .enumerate()
            .map(|(b, &j)| {
                let row: Vec<f64> = beta[j].iter().zip(&dirs[b + 1]).map(|(a, d)| a + s * d).collect();
                norm(&row)
            })
            .sum()
    };
    let f0 = loss(eta, y) + lambda * penalty(0.0);
    let mut s = 1.0;
    while s > 1e-6 {
        let trial: Vec<f64> = eta.iter().zip(&deta).map(|(e, d)| e + s * d).collect();
        if loss(&trial, y) + lambda * penalty(s) <= f0 + 1e-4 * s * slope {
            return Some(SmoothStep {
                intercepts: dirs[0].iter().map(|d| s * d).collect(),
                rows: active
                    .iter()
                    .enumerate()
                    .map(|(b, &j)| (j, beta[j].iter().zip(&dirs[b + 1]).map(|(a, d)| a + s * d).collect()))
                    .collect(),
                eta: trial,
                full: s == 1.0,
            });
        }
        s *= 0.5;
    }
    None
}

/// Largest KKT residual over the intercepts and the rows in `working`.
fn kkt_worst(
    design: &WorkingDesign,
    working: &[usize],
    y: &IndicatorResponse,
    probs: &ProbabilityMatrix,
    beta: &[Vec<f64>],
    lambda: f64,
) -> f64 {
    working
        .iter()
        .map(|&j| row_violation(&score(design, j, y, probs), &beta[j], lambda))
        .fold(norm(&intercept_score(y, probs)), f64::max)
}

/// Solves at `lambda` on all columns of `design`, warm-started from `warm`
/// (which may be fit on a prefix of them).
pub fn fit_multinomial(
    design: &WorkingDesign,
    y: &IndicatorResponse,
    lambda: f64,
    lambda_prev: Option<f64>,
    warm: &MultinomialFit,
    cfg: &MultinomialConfig,
) -> Result<MultinomialFit> {
    let cols: Vec<usize> = (0..design.width()).collect();
    fit_columns(design, &cols, y, lambda, lambda_prev, warm, cfg)
}

/// As [`fit_multinomial`] with every column outside `cols` held at zero.
pub fn fit_columns(
    design: &WorkingDesign,
    cols: &[usize],
    y: &IndicatorResponse,
    lambda: f64,
    lambda_prev: Option<f64>,
    warm: &MultinomialFit,
    cfg: &MultinomialConfig,
) -> Result<MultinomialFit> {
    if design.n() != y.len() {
        return Err(Error::InvalidDesign(format!(
            "design has {} rows but response has {}",
            design.n(),
            y.len()
        )));
    }
    let classes = y.classes();
    let n = design.n();
    let width = design.width();
    let mut beta = warm.beta.to_dense(width);
    for (j, row) in beta.iter_mut().enumerate() {
        if !cols.contains(&j) {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut mu = warm.intercepts.clone();
    let sparse = GroupCoefficients::from_dense(&beta, classes);
    let mut eta = linear_predictor(&mu, &sparse, design);
    let mut probs = ProbabilityMatrix::from_linear(&eta, classes);

    let screen = 2.0 * lambda - lambda_prev.unwrap_or(lambda).max(lambda);
    let mut in_set = vec![false; width];
    let mut working = Vec::new();
    for &j in cols {
        if beta[j].iter().any(|&b| b != 0.0) || norm(&score(design, j, y, &probs)) >= screen {
            in_set[j] = true;
            working.push(j);
        }
    }

    let mut passes = 0usize;
    let mut steps = 0usize;
    let mut last_change = f64::INFINITY;
    let mut try_smooth = true;
    loop {
        loop {
            let worst = kkt_worst(design, &working, y, &probs, &beta, lambda);
            if worst <= 0.1 * cfg.kkt_tol {
                break;
            }
            if steps >= MAX_NEWTON_STEPS {
                return Err(Error::NoConvergence {
                    lambda,
                    iterations: passes,
                    last_change: worst,
                    best: Vec::new(),
                });
            }
            steps += 1;

            if try_smooth {
                if let Some(step) = smooth_step(design, &working, y, &probs, &eta, &beta, lambda) {
                    for (m, d) in mu.iter_mut().zip(&step.intercepts) {
                        *m += d;
                    }
                    for (j, row) in step.rows {
                        beta[j] = row;
                    }
                    // a damped step may be heading for a zero row, which
                    // only the thresholding step can reach
                    try_smooth = step.full;
                    eta = step.eta;
                    probs = ProbabilityMatrix::from_linear(&eta, classes);
                    continue;
                }
            }
            try_smooth = true;
            let inner_tol = (0.1 * worst).max(cfg.tol);

            // quadratic model of the loss at the current probabilities; the
            // bound on each block Hessian uses λ_max(W_i) ≤ max_c 2 p_c (1 − p_c)
            let wmax: Vec<f64> = (0..n)
                .map(|i| probs.row(i).iter().map(|p| 2.0 * p * (1.0 - p)).fold(0.0, f64::max))
                .collect();
            let t0 = (wmax.iter().sum::<f64>() / n as f64).max(CURVATURE_FLOOR);
            let tj: Vec<f64> = working
                .iter()
                .map(|&j| {
                    let x = design.column(j);
                    let h = x.iter().zip(&wmax).map(|(a, w)| a * a * w).sum::<f64>() / n as f64;
                    h.max(CURVATURE_FLOOR)
                })
                .collect();
            let g0 = intercept_score(y, &probs);
            let gj: Vec<Vec<f64>> = working.iter().map(|&j| score(design, j, y, &probs)).collect();
            let mut r = vec![0.0; n * classes];
            let mut dmu = vec![0.0; classes];
            let mut nb: Vec<Vec<f64>> = working.iter().map(|&j| beta[j].clone()).collect();
            let start = passes;
            loop {
                if passes >= cfg.max_iter {
                    return Err(Error::NoConvergence {
                        lambda,
                        iterations: passes,
                        last_change,
                        best: Vec::new(),
                    });
                }
                passes += 1;
                let mut change = 0.0f64;
                for (k, &j) in working.iter().enumerate() {
                    let x = design.column(j);
                    let hr = hessian_times(Some(x), &probs, &r);
                    let t = tj[k];
                    let z: Vec<f64> = nb[k]
                        .iter()
                        .zip(&gj[k])
                        .zip(&hr)
                        .map(|((b, g), h)| b + (g - h) / t)
                        .collect();
                    let mut next = group_soft_threshold(&z, lambda / t);
                    center(&mut next);
                    let delta: Vec<f64> = next.iter().zip(&nb[k]).map(|(a, b)| a - b).collect();
                    let d = norm(&delta);
                    if d > 0.0 {
                        for i in 0..n {
                            for c in 0..classes {
                                r[i * classes + c] += x[i] * delta[c];
                            }
                        }
                        nb[k] = next;
                        change = change.max(t * d);
                    }
                }
                let hr = hessian_times(None, &probs, &r);
                let mut step: Vec<f64> = g0.iter().zip(&hr).map(|(g, h)| (g - h) / t0).collect();
                center(&mut step);
                let d = norm(&step);
                if d > 0.0 {
                    for (m, s) in dmu.iter_mut().zip(&step) {
                        *m += s;
                    }
                    for row in r.chunks_mut(classes) {
                        for (e, s) in row.iter_mut().zip(&step) {
                            *e += s;
                        }
                    }
                    change = change.max(t0 * d);
                }
                last_change = change;
                if change <= inner_tol || passes - start >= MAX_INNER_PASSES {
                    break;
                }
            }

            // backtracking line search on the penalized objective
            let dbeta: Vec<Vec<f64>> = working
                .iter()
                .zip(&nb)
                .map(|(&j, next)| next.iter().zip(&beta[j]).map(|(a, b)| a - b).collect())
                .collect();
            let pen0: f64 = working.iter().map(|&j| norm(&beta[j])).sum();
            let pen1: f64 = nb.iter().map(|b| norm(b)).sum();
            let linear: f64 = g0.iter().zip(&dmu).map(|(g, d)| g * d).sum::<f64>()
                + gj.iter()
                    .zip(&dbeta)
                    .map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>();
            let predicted = -linear + lambda * (pen1 - pen0);
            let f0 = loss(&eta, y) + lambda * pen0;
            let mut s = 1.0;
            let mut accepted = None;
            while s > 1e-10 {
                let trial: Vec<f64> = eta.iter().zip(&r).map(|(e, d)| e + s * d).collect();
                let pen: f64 = working
                    .iter()
                    .zip(&dbeta)
                    .map(|(&j, d)| {
                        let row: Vec<f64> = beta[j].iter().zip(d).map(|(b, d)| b + s * d).collect();
                        norm(&row)
                    })
                    .sum();
                let f = loss(&trial, y) + lambda * pen;
                if f <= f0 + 1e-4 * s * predicted {
                    accepted = Some((s, trial));
                    break;
                }
                s *= 0.5;
            }
            // no decrease left at machine precision
            let Some((s, trial)) = accepted else { break };
            for (&j, d) in working.iter().zip(&dbeta) {
                for (b, d) in beta[j].iter_mut().zip(d) {
                    *b += s * d;
                }
            }
            for (m, d) in mu.iter_mut().zip(&dmu) {
                *m += s * d;
            }
            eta = trial;
            probs = ProbabilityMatrix::from_linear(&eta, classes);
        }

        let mut added = false;
        for &j in cols {
            if !in_set[j] && norm(&score(design, j, y, &probs)) > lambda {
                in_set[j] = true;
                added = true;
            }
        }
        if !added {
            break;
        }
        working = cols.iter().copied().filter(|&j| in_set[j]).collect();
    }

    Ok(MultinomialFit {
        intercepts: mu,
        beta: GroupCoefficients::from_dense(&beta, classes),
        lambda,
        eta,
        probs,
    })
}

/// KKT residual of one row: distance of the score from `λ β/‖β‖` for an
/// active row, excess of its norm over λ for a zero row.
fn row_violation(g: &[f64], b: &[f64], lambda: f64) -> f64 {
    let nb = norm(b);
    if nb > 0.0 {
        let d: Vec<f64> = g.iter().zip(b).map(|(gi, bi)| gi - lambda * bi / nb).collect();
        norm(&d)
    } else {
        norm(g) - lambda
    }
}

/// Group KKT audit of `fit` over the columns `check` of `design_super`,
/// whose leading columns are those `fit` was computed on.
pub fn group_kkt_check(
    fit: &MultinomialFit,
    design_super: &WorkingDesign,
    y: &IndicatorResponse,
    lambda: f64,
    check: &[usize],
    tol: f64,
) -> KktReport {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_j = None;
    for &j in check {
        let g = score(design_super, j, y, &fit.probs);
        let b = fit.beta.row(j).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; y.classes()]);
        let v = row_violation(&g, &b, lambda);
        if v > worst {
            worst = v;
            worst_j = Some(j);
        }
    }
    let max_violation = worst.max(0.0);
    KktReport {
        max_violation,
        worst_variable: worst_j.filter(|_| worst > 0.0).map(|j| design_super.variable(j).clone()),
        passed: max_violation <= tol,
    }
}

/// Engine adaptor.
pub struct MultinomialBase<'a> {
    pub y: &'a IndicatorResponse,
    pub solver: MultinomialConfig,
    null_deviance: f64,
}

impl<'a> MultinomialBase<'a> {
    pub fn new(y: &'a IndicatorResponse, solver: MultinomialConfig) -> Result<Self> {
        let null = MultinomialFit::intercept_only(y)?;
        Ok(Self {
            y,
            solver,
            null_deviance: null.deviance(y),
        })
    }
}

impl BaseProcedure for MultinomialBase<'_> {
    type State = MultinomialFit;
    type Point = GroupCoefficients;

    fn lambda_max(&self, design: &WorkingDesign) -> f64 {
        group_lambda_max(design, self.y).expect("classes checked at construction")
    }

    fn initial(&self) -> MultinomialFit {
        MultinomialFit::intercept_only(self.y).expect("classes checked at construction")
    }

    fn solve(
        &self,
        design: &WorkingDesign,
        lambda: f64,
        lambda_prev: Option<f64>,
        warm: &MultinomialFit,
    ) -> Result<MultinomialFit> {
        fit_multinomial(design, self.y, lambda, lambda_prev, warm, &self.solver)
    }

    fn point(&self, state: &MultinomialFit) -> GroupCoefficients {
        state.beta.clone()
    }

    fn perfect_fit(&self, state: &MultinomialFit) -> bool {
        state.deviance(self.y) < self.solver.fit_tol * self.null_deviance
    }

    fn restart_violation(
        &self,
        design: &WorkingDesign,
        state: &MultinomialFit,
        lambda: f64,
        columns: Range<usize>,
    ) -> f64 {
        columns
            .map(|j| norm(&score(design, j, self.y, &state.probs)) - lambda)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub type MultinomialTree = SolutionTree<GroupCoefficients>;

/// Backtracking with the multinomial group Lasso as base procedure.
pub fn run_multinomial_backtracking(
    raw: &RawDesign,
    y: &IndicatorResponse,
    cfg: &EngineConfig,
    solver: &MultinomialConfig,
    grid: Option<LambdaGrid>,
) -> Result<MultinomialTree> {
    if raw.n() != y.len() {
        return Err(Error::InvalidDesign(format!(
            "design has {} rows but response has {}",
            raw.n(),
            y.len()
        )));
    }
    let std = Standardizer::new(raw, cfg.standardize);
    let base = MultinomialBase::new(y, *solver)?;
    engine::run_base(&base, &std, cfg, grid)
}

/// Shared grid for cross-validation, from the full data.
pub fn full_data_grid(raw: &RawDesign, y: &IndicatorResponse, cfg: &EngineConfig) -> Result<LambdaGrid> {
    let std = Standardizer::new(raw, cfg.standardize);
    let initial = match &cfg.initial_candidates {
        Some(vs) => CandidateSet::from_variables(raw.p(), vs.iter().cloned())?,
        None => CandidateSet::mains(raw.p()),
    };
    let design = WorkingDesign::assemble_with(&std, &initial)?;
    LambdaGrid::log_spaced(group_lambda_max(&design, y)?, cfg.grid_ratio, cfg.grid_len)
}

/// Coefficients used to score a cell: a refit on the point's active rows at
/// a small penalty, or the point itself. The flag reports a refit that did
/// not converge and fell back to the point.
pub fn cell_fit(
    tree: &MultinomialTree,
    y: &IndicatorResponse,
    point: &GroupCoefficients,
    l: usize,
    refit: Refit,
    solver: &MultinomialConfig,
) -> Result<(MultinomialFit, bool)> {
    let lambda = tree.grid.get(l.min(tree.grid.len() - 1));
    let design = &tree.design;
    let warm = MultinomialFit {
        beta: point.clone(),
        ..MultinomialFit::intercept_only(y)?
    };
    let cols = point.active();
    let at_point = fit_columns(design, &cols, y, lambda, None, &warm, solver)?;
    if refit == Refit::Lasso || cols.is_empty() {
        return Ok((at_point, false));
    }
    let small = REFIT_RATIO * tree.grid.get(0);
    match fit_columns(design, &cols, y, small, None, &at_point, solver) {
        Ok(f) => Ok((f, false)),
        Err(Error::NoConvergence { .. }) => Ok((at_point, true)),
        Err(e) => Err(e),
    }
}

fn validation_probs(validation: &mut ValidationColumns<'_>, fit: &MultinomialFit) -> ProbabilityMatrix {
    let classes = fit.intercepts.len();
    let n = validation.n();
    let mut eta: Vec<f64> = (0..n).flat_map(|_| fit.intercepts.iter().copied()).collect();
    for (j, row) in &fit.beta.rows {
        let x = validation.column(*j);
        for i in 0..n {
            for c in 0..classes {
                eta[i * classes + c] += x[i] * row[c];
            }
        }
    }
    ProbabilityMatrix::from_linear(&eta, classes)
}

/// Validation deviance of every (l, k) cell of a training tree; refits are
/// cached by active set.
pub fn score_tree(
    tree: &MultinomialTree,
    y_train: &IndicatorResponse,
    valid_raw: RawDesign,
    y_valid: &[usize],
    refit: Refit,
    solver: &MultinomialConfig,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut validation = ValidationColumns::new(valid_raw, &tree.design);
    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let zero = GroupCoefficients::zeros(y_train.classes());
    let mut fallbacks = 0;
    let mut losses = Vec::with_capacity(tree.grid.len());
    for l in 0..tree.grid.len() {
        let mut row = Vec::with_capacity(tree.len());
        for k in 1..=tree.len() {
            let (point, l_used) = tree.clamped_point(k, l).map_or((&zero, 0), |(p, _, lu)| (p, lu));
            let key = match refit {
                Refit::OlsHybrid => point.active(),
                // the penalized fit depends on λ as well
                Refit::Lasso => {
                    let mut key = point.active();
                    key.push(usize::MAX - l_used);
                    key.push(usize::MAX - k);
                    key
                }
            };
            let loss = match cache.get(&key) {
                Some(&v) => v,
                None => {
                    let (fit, fell_back) = cell_fit(tree, y_train, point, l_used, refit, solver)?;
                    fallbacks += usize::from(fell_back);
                    let v = deviance(&validation_probs(&mut validation, &fit), y_valid);
                    cache.insert(key, v);
                    v
                }
            };
            row.push(loss);
        }
        losses.push(row);
    }
    Ok((losses, fallbacks))
}

pub fn cross_validate(
    raw: &RawDesign,
    y: &IndicatorResponse,
    engine_cfg: &EngineConfig,
    solver: &MultinomialConfig,
    cv: &CvConfig,
    grid: &LambdaGrid,
) -> Result<CvGrid> {
    cv.validate(raw.n())?;
    let jobs: Vec<(usize, usize)> = (0..cv.repeats)
        .flat_map(|r| (0..cv.folds).map(move |f| (r, f)))
        .collect();
    let assignments: Vec<Vec<usize>> = (0..cv.repeats)
        .map(|r| fold_assignment(cv.seed, r, raw.n(), cv.folds))
        .collect();
    let folds = jobs
        .par_iter()
        .map(|&(r, f)| -> Result<FoldLosses> {
            let (train, valid) = split(&assignments[r], f);
            let y_train = y.select(&train);
            let tree = run_multinomial_backtracking(
                &raw.select_rows(&train),
                &y_train,
                engine_cfg,
                solver,
                Some(grid.clone()),
            )?;
            let y_valid: Vec<usize> = valid.iter().map(|&i| y.labels[i]).collect();
            let (losses, fallbacks) =
                score_tree(&tree, &y_train, raw.select_rows(&valid), &y_valid, cv.refit, solver)?;
            Ok(FoldLosses {
                repeat: r,
                fold: f,
                losses,
                fallbacks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CvGrid::from_folds(grid.values().to_vec(), folds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTerm {
    pub variable: VariableId,
    pub coefficients: Vec<f64>,
    pub transform: ColumnTransform,
}

/// A fitted classifier that can score raw rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialModel {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub intercepts: Vec<f64>,
    pub terms: Vec<ClassTerm>,
    pub lambda: f64,
    pub l: usize,
    pub k: usize,
    pub refit: Refit,
    pub refit_fallback: bool,
}

impl MultinomialModel {
    pub fn from_tree(
        tree: &MultinomialTree,
        y: &IndicatorResponse,
        class_names: Vec<String>,
        l: usize,
        k: usize,
        refit: Refit,
        solver: &MultinomialConfig,
    ) -> Result<Self> {
        let zero = GroupCoefficients::zeros(y.classes());
        let (point, l_used) = tree.clamped_point(k, l).map_or((&zero, 0), |(p, _, lu)| (p, lu));
        let (fit, refit_fallback) = cell_fit(tree, y, point, l_used, refit, solver)?;
        let terms = fit
            .beta
            .rows
            .iter()
            .map(|(j, r)| ClassTerm {
                variable: tree.design.variable(*j).clone(),
                coefficients: r.clone(),
                transform: tree.design.transform(*j).clone(),
            })
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            class_names,
            intercepts: fit.intercepts,
            terms,
            lambda: tree.grid.get(l.min(tree.grid.len() - 1)),
            l,
            k,
            refit,
            refit_fallback,
        })
    }

    pub fn active_set(&self) -> Vec<VariableId> {
        self.terms.iter().map(|t| t.variable.clone()).collect()
    }

    pub fn probabilities(&self, raw: &RawDesign) -> ProbabilityMatrix {
        let classes = self.intercepts.len();
        let n = raw.n();
        let mut eta: Vec<f64> = (0..n).flat_map(|_| self.intercepts.iter().copied()).collect();
        for t in &self.terms {
            let x = t.transform.apply(raw);
            for i in 0..n {
                for c in 0..classes {
                    eta[i * classes + c] += x[i] * t.coefficients[c];
                }
            }
        }
        ProbabilityMatrix::from_linear(&eta, classes)
    }

    /// Most probable class of every row (lowest index on ties).
    pub fn classify(&self, raw: &RawDesign) -> Vec<usize> {
        let probs = self.probabilities(raw);
        (0..raw.n())
            .map(|i| {
                let r = probs.row(i);
                (0..r.len()).fold(0, |b, c| if r[c] > r[b] { c } else { b })
            })
            .collect()
    }
}

/// Cross-validation by deviance, then the final fit on all rows.
pub fn cv_fit(
    raw: &RawDesign,
    y: &IndicatorResponse,
    class_names: Vec<String>,
    engine_cfg: &EngineConfig,
    solver: &MultinomialConfig,
    cv: &CvConfig,
) -> Result<(MultinomialModel, CvGrid, MultinomialTree)> {
    let grid = full_data_grid(raw, y, engine_cfg)?;
    let scores = cross_validate(raw, y, engine_cfg, solver, cv, &grid)?;
    let tree = run_multinomial_backtracking(raw, y, engine_cfg, solver, Some(grid))?;
    let model = MultinomialModel::from_tree(&tree, y, class_names, scores.chosen_l, scores.chosen_k, cv.refit, solver)?;
    Ok((model, scores, tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, classes: usize, seed: u64) -> (RawDesign, IndicatorResponse) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let labels = (0..n)
            .map(|i| {
                let eta: Vec<f64> = (0..classes)
                    .map(|c| if c < p { 1.5 * cols[c][i] } else { 0.0 })
                    .collect();
                let mut pr = vec![0.0; classes];
                softmax_into(&eta, &mut pr);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                pr.iter().position(|&q| {
                    acc += q;
                    u < acc
                })
                .unwrap_or(classes - 1)
            })
            .collect();
        (
            RawDesign::from_columns(cols).unwrap(),
            IndicatorResponse::new(labels, classes).unwrap(),
        )
    }

    #[test]
    fn zero_coefficients_give_uniform_probabilities() {
        let (raw, _) = instance(10, 3, 3, 1);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(3)).unwrap();
        let p = softmax_probs(&[0.0; 3], &GroupCoefficients::zeros(3), &d);
        for i in 0..10 {
            for c in 0..3 {
                assert!((p.get(i, c) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_matches_direct_formula_and_ignores_intercept_shift() {
        let (raw, _) = instance(10, 4, 3, 2);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = GroupCoefficients {
            classes: 3,
            rows: vec![(0, vec![0.3, -0.2, 0.5]), (2, vec![-1.0, 0.4, 0.1])],
        };
        let p = softmax_probs(&mu, &beta, &d);
        for i in 0..10 {
            let e: Vec<f64> = (0..3)
                .map(|c| (mu[c] + d.column(0)[i] * beta.rows[0].1[c] + d.column(2)[i] * beta.rows[1].1[c]).exp())
                .collect();
            let s: f64 = e.iter().sum();
            for c in 0..3 {
                assert!((p.get(i, c) - e[c] / s).abs() < 1e-12);
            }
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = mu.iter().map(|m| m + 7.5).collect();
        assert!(softmax_probs(&shifted, &beta, &d).max_abs_diff(&p) < 1e-15);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = ProbabilityMatrix::from_linear(&[1000.0, 0.0, -1000.0], 3);
        assert!(p.row(0).iter().all(|v| v.is_finite()));
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn indicator_rows_must_have_a_single_one() {
        assert!(IndicatorResponse::from_indicators(&[vec![0.0, 1.0], vec![1.0, 0.0]]).is_ok());
        assert!(IndicatorResponse::from_indicators(&[vec![1.0, 1.0]]).is_err());
        assert!(IndicatorResponse::from_indicators(&[vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn at_lambda_max_the_fit_is_intercept_only() {
        let (raw, y) = instance(60, 5, 3, 3);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(5)).unwrap();
        let lmax = group_lambda_max(&d, &y).unwrap();
        let warm = MultinomialFit::intercept_only(&y).unwrap();
        let fit = fit_multinomial(&d, &y, lmax, None, &warm, &MultinomialConfig::default()).unwrap();
        assert!(fit.beta.rows.is_empty());
        let props: Vec<f64> = y.counts().iter().map(|&k| k as f64 / 60.0).collect();
        for i in 0..60 {
            for c in 0..3 {
                assert!((fit.probs.get(i, c) - props[c]).abs() < 1e-9);
            }
        }
        let report = group_kkt_check(&fit, &d, &y, lmax, &[0, 1, 2, 3, 4], 1e-9);
        assert!(report.passed);
    }

    #[test]
    fn fits_satisfy_group_kkt_and_intercept_conditions() {
        let (raw, y) = instance(80, 6, 3, 4);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(6)).unwrap();
        let lmax = group_lambda_max(&d, &y).unwrap();
        let cfg = MultinomialConfig::default();
        let mut warm = MultinomialFit::intercept_only(&y).unwrap();
        let mut prev = None;
        for t in 1..15 {
            let lambda = lmax * 0.8f64.powi(t);
            let fit = fit_multinomial(&d, &y, lambda, prev, &warm, &cfg).unwrap();
            let report = group_kkt_check(&fit, &d, &y, lambda, &(0..6).collect::<Vec<_>>(), cfg.kkt_tol);
            assert!(report.passed, "λ = {lambda}: {report:?}");
            assert!(norm(&intercept_score(&y, &fit.probs)) <= cfg.kkt_tol);
            for (_, r) in &fit.beta.rows {
                assert!(r.iter().sum::<f64>().abs() < 1e-12);
            }
            prev = Some(lambda);
            warm = fit;
        }
        assert!(!warm.beta.rows.is_empty());
    }

    #[test]
    fn perturbed_fit_fails_at_the_perturbed_row() {
        let (raw, y) = instance(80, 5, 3, 6);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(5)).unwrap();
        let lambda = 0.3 * group_lambda_max(&d, &y).unwrap();
        let warm = MultinomialFit::intercept_only(&y).unwrap();
        let fit = fit_multinomial(&d, &y, lambda, None, &warm, &MultinomialConfig::default()).unwrap();
        let target = fit.beta.rows[0].0;
        let mut beta = fit.beta.clone();
        beta.rows[0].1[0] += 0.5;
        beta.rows[0].1[1] -= 0.5;
        let eta = linear_predictor(&fit.intercepts, &beta, &d);
        let bad = MultinomialFit {
            beta,
            probs: ProbabilityMatrix::from_linear(&eta, 3),
            eta,
            ..fit
        };
        let report = group_kkt_check(&bad, &d, &y, lambda, &(0..5).collect::<Vec<_>>(), 1e-6);
        assert!(!report.passed);
        assert_eq!(report.worst_variable, Some(d.variable(target).clone()));
    }

    /// Binary logistic Lasso by FISTA. The two-class group Lasso with
    /// centered rows `(b/2, -b/2)` has penalty `λ|b|/√2` on the log-odds
    /// coefficient `b`, so it is matched by this oracle at `λ/√2`.
    fn logistic_oracle(d: &WorkingDesign, y: &IndicatorResponse, lambda: f64) -> Vec<f64> {
        let n = d.n();
        let p = d.width();
        let t: Vec<f64> = (0..n).map(|i| y.indicator(i, 0)).collect();
        let step = 4.0 / (1.0 + (0..p).map(|j| d.curvature(j)).sum::<f64>());
        let predict = |w: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| w[0] + (0..p).map(|j| d.column(j)[i] * w[j + 1]).sum::<f64>())
                .collect()
        };
        let mut w = vec![0.0; p + 1];
        let mut v = w.clone();
        let mut theta = 1.0f64;
        for _ in 0..200_000 {
            let eta = predict(&v);
            let resid: Vec<f64> = eta.iter().zip(&t).map(|(e, ti)| 1.0 / (1.0 + (-e).exp()) - ti).collect();
            let mut next = vec![0.0; p + 1];
            next[0] = v[0] - step * resid.iter().sum::<f64>() / n as f64;
            for j in 0..p {
                let g = dot(d.column(j), &resid) / n as f64;
                let z = v[j + 1] - step * g;
                next[j + 1] = z.signum() * (z.abs() - step * lambda).max(0.0);
            }
            let nt = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
            let moved = next.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            v = next.iter().zip(&w).map(|(a, b)| a + (theta - 1.0) / nt * (a - b)).collect();
            w = next;
            theta = nt;
            if moved < 1e-13 {
                break;
            }
        }
        predict(&w).into_iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect()
    }

    #[test]
    fn two_classes_match_binary_logistic_lasso() {
        let (raw, y) = instance(70, 4, 2, 8);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(4)).unwrap();
        let lmax = group_lambda_max(&d, &y).unwrap();
        for frac in [0.5, 0.2, 0.05] {
            let lambda = frac * lmax;
            let warm = MultinomialFit::intercept_only(&y).unwrap();
            let fit = fit_multinomial(&d, &y, lambda, None, &warm, &MultinomialConfig::default()).unwrap();
            let oracle = logistic_oracle(&d, &y, lambda / 2f64.sqrt());
            let gap = (0..70).fold(0.0f64, |m, i| m.max((fit.probs.get(i, 0) - oracle[i]).abs()));
            assert!(gap < 1e-4, "λ/λmax = {frac}: {gap}");
        }
    }

    #[test]
    fn permuting_classes_permutes_the_fit() {
        let (raw, y) = instance(90, 6, 3, 9);
        let perm = [2usize, 0, 1];
        let y2 = IndicatorResponse::new(y.labels().iter().map(|&c| perm[c]).collect(), 3).unwrap();
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(6)).unwrap();
        let lambda = 0.2 * group_lambda_max(&d, &y).unwrap();
        let cfg = MultinomialConfig::default();
        let a = fit_multinomial(&d, &y, lambda, None, &MultinomialFit::intercept_only(&y).unwrap(), &cfg).unwrap();
        let b = fit_multinomial(&d, &y2, lambda, None, &MultinomialFit::intercept_only(&y2).unwrap(), &cfg).unwrap();
        assert_eq!(a.beta.active(), b.beta.active());
        for ((_, ra), (_, rb)) in a.beta.rows.iter().zip(&b.beta.rows) {
            for c in 0..3 {
                assert!((ra[c] - rb[perm[c]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_strong_predictor_gives_one_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
        let labels = x.iter().map(|&v| usize::from(v > 0.0)).collect();
        let raw = RawDesign::from_columns(vec![x, z]).unwrap();
        let y = IndicatorResponse::new(labels, 2).unwrap();
        let cfg = EngineConfig {
            max_active: 1,
            grid_len: 30,
            ..EngineConfig::default()
        };
        let tree = run_multinomial_backtracking(&raw, &y, &cfg, &MultinomialConfig::default(), None).unwrap();
        assert_eq!(tree.len(), 1);
    }
}
