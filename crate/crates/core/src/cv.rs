//! Repeated K-fold cross-validation over (grid index l, path rank k).

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{ColumnTransform, RawDesign, ResponseVector, Standardizer, WorkingDesign};
use crate::engine::{self, EngineConfig, LassoTree, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::lasso::{self, CoefficientVector, LambdaGrid};
use crate::variables::VariableId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refit {
    /// OLS on the active set of each cell.
    #[default]
    OlsHybrid,
    /// The penalized coefficients themselves.
    Lasso,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub refit: Refit,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 5,
            refit: Refit::OlsHybrid,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if n < 2 * self.folds {
            return Err(Error::InvalidConfig(format!(
                "n = {n} is too small for {} folds",
                self.folds
            )));
        }
        Ok(())
    }
}

/// Fold label of every row for one repeat: a seeded shuffle dealt out
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(seed: u64, repeat: usize, n: usize, folds: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// (training rows, validation rows) of `fold`.
pub fn split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, &f) in assignment.iter().enumerate() {
        if f == fold {
            valid.push(i);
        } else {
            train.push(i);
        }
    }
    (train, valid)
}

/// Losses of one fold: `losses[l][k - 1]` for the fold's own ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldLosses {
    pub repeat: usize,
    pub fold: usize,
    pub losses: Vec<Vec<f64>>,
    /// Cells whose refit was rank deficient and fell back to the penalized fit.
    pub fallbacks: usize,
}

impl FoldLosses {
    pub fn ranks(&self) -> usize {
        self.losses.first().map_or(0, Vec::len)
    }

    /// Loss at rank `k`, clamped to the fold's largest rank.
    pub fn at(&self, l: usize, k: usize) -> f64 {
        let row = &self.losses[l];
        row[k.min(row.len()) - 1]
    }
}

/// Mean validation loss over the (l, k) grid and the selected cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub lambda: Vec<f64>,
    /// `scores[l][k - 1]`.
    pub scores: Vec<Vec<f64>>,
    /// Contributions per cell (every fold contributes to every cell).
    pub counts: Vec<Vec<usize>>,
    /// Cells where at least one fold had fewer ranks and was clamped.
    pub clamped: Vec<Vec<bool>>,
    pub folds: Vec<FoldLosses>,
    /// 0-based grid index of the chosen cell.
    pub chosen_l: usize,
    /// 1-based rank of the chosen cell.
    pub chosen_k: usize,
}

impl CvGrid {
    pub fn from_folds(lambda: Vec<f64>, folds: Vec<FoldLosses>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidConfig("no folds to aggregate".into()));
        }
        let len = lambda.len();
        let ranks = folds.iter().map(FoldLosses::ranks).max().unwrap_or(0).max(1);
        let mut scores = vec![vec![0.0; ranks]; len];
        let mut clamped = vec![vec![false; ranks]; len];
        for l in 0..len {
            for k in 1..=ranks {
                let sum: f64 = folds.iter().map(|f| f.at(l, k)).sum();
                scores[l][k - 1] = sum / folds.len() as f64;
                clamped[l][k - 1] = folds.iter().any(|f| f.ranks() < k);
            }
        }
        let (mut chosen_l, mut chosen_k, mut best) = (0, 1, f64::INFINITY);
        // ties go to the larger λ, then the smaller rank
        for (l, row) in scores.iter().enumerate() {
            for (k, &s) in row.iter().enumerate() {
                if s < best {
                    best = s;
                    chosen_l = l;
                    chosen_k = k + 1;
                }
            }
        }
        Ok(Self {
            lambda,
            counts: vec![vec![folds.len(); ranks]; len],
            scores,
            clamped,
            folds,
            chosen_l,
            chosen_k,
        })
    }

    pub fn ranks(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn best_score(&self) -> f64 {
        self.scores[self.chosen_l][self.chosen_k - 1]
    }

    pub fn fallbacks(&self) -> usize {
        self.folds.iter().map(|f| f.fallbacks).sum()
    }

    /// `l,k,lambda,mean_loss,n_contributions`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["l", "k", "lambda", "mean_loss", "n_contributions"])?;
        for (l, row) in self.scores.iter().enumerate() {
            for (k, s) in row.iter().enumerate() {
                w.write_record([
                    l.to_string(),
                    (k + 1).to_string(),
                    format!("{:e}", self.lambda[l]),
                    format!("{s:e}"),
                    self.counts[l][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "chosen_l": self.chosen_l,
            "chosen_k": self.chosen_k,
            "chosen_lambda": self.lambda[self.chosen_l],
            "best_score": self.best_score(),
            "ranks": self.ranks(),
            "fold_ranks": self.folds.iter().map(FoldLosses::ranks).collect::<Vec<_>>(),
            "refit_fallbacks": self.fallbacks(),
        })
    }
}

/// Validation rows mapped through a training design's transforms, built
/// column by column on demand.
pub struct ValidationColumns<'a> {
    raw: RawDesign,
    design: &'a WorkingDesign,
    cache: HashMap<usize, Vec<f64>>,
}

impl<'a> ValidationColumns<'a> {
    pub fn new(raw: RawDesign, design: &'a WorkingDesign) -> Self {
        Self {
            raw,
            design,
            cache: HashMap::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.raw.n()
    }

    pub fn column(&mut self, j: usize) -> &[f64] {
        let (raw, design) = (&self.raw, self.design);
        self.cache
            .entry(j)
            .or_insert_with(|| design.transform(j).apply(raw))
    }

    /// `intercept + Σ β_j x_j` on the validation rows.
    pub fn predict(&mut self, intercept: f64, coefs: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![intercept; self.n()];
        for &(j, b) in coefs {
            let col = self.column(j);
            for (o, x) in out.iter_mut().zip(col) {
                *o += b * x;
            }
        }
        out
    }
}

pub fn mean_squared_error(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Coefficients used to score a cell: the OLS refit on the active set, or
/// the penalized point itself. The flag reports a rank-deficient fallback.
pub fn cell_coefficients(
    design: &WorkingDesign,
    y: &ResponseVector,
    point: &CoefficientVector,
    refit: Refit,
) -> (CoefficientVector, bool) {
    match refit {
        Refit::Lasso => (point.clone(), false),
        Refit::OlsHybrid => {
            let active = point.active();
            match lasso::ols_coefficients(design, y.values(), &active) {
                Ok(c) => (CoefficientVector::from_pairs(active.into_iter().zip(c)), false),
                Err(Error::RankDeficient { .. }) => (point.clone(), true),
                Err(e) => unreachable!("refit only fails on rank: {e}"),
            }
        }
    }
}

/// Validation loss of one cell of a training tree.
pub fn score_cell(
    tree: &LassoTree,
    y_train: &ResponseVector,
    validation: &mut ValidationColumns<'_>,
    y_valid: &[f64],
    l: usize,
    k: usize,
    refit: Refit,
) -> f64 {
    let zero = CoefficientVector::zeros();
    let point = tree.clamped_point(k, l).map_or(&zero, |(p, _, _)| p);
    let (coefs, _) = cell_coefficients(&tree.design, y_train, point, refit);
    let pred = validation.predict(y_train.mean(), coefs.entries());
    mean_squared_error(&pred, y_valid)
}

/// Scores every cell of a training tree against validation rows. Refits
/// are cached by active set.
pub fn score_tree(
    tree: &LassoTree,
    y_train: &ResponseVector,
    valid_raw: RawDesign,
    y_valid: &[f64],
    refit: Refit,
) -> (Vec<Vec<f64>>, usize) {
    let mut validation = ValidationColumns::new(valid_raw, &tree.design);
    let mut cache: HashMap<Vec<(usize, u64)>, (f64, bool)> = HashMap::new();
    let zero = CoefficientVector::zeros();
    let mut fallbacks = 0;
    let losses = (0..tree.grid.len())
        .map(|l| {
            (1..=tree.len())
                .map(|k| {
                    let point = tree.clamped_point(k, l).map_or(&zero, |(p, _, _)| p);
                    let key: Vec<(usize, u64)> = match refit {
                        Refit::OlsHybrid => point.active().into_iter().map(|j| (j, 0)).collect(),
                        Refit::Lasso => point.entries().iter().map(|&(j, b)| (j, b.to_bits())).collect(),
                    };
                    let (loss, fell_back) = *cache.entry(key).or_insert_with(|| {
                        let (coefs, fb) = cell_coefficients(&tree.design, y_train, point, refit);
                        let pred = validation.predict(y_train.mean(), coefs.entries());
                        (mean_squared_error(&pred, y_valid), fb)
                    });
                    fallbacks += usize::from(fell_back);
                    loss
                })
                .collect()
        })
        .collect();
    (losses, fallbacks)
}

/// The λ grid every fold shares: built from the full data's initial
/// candidate set.
pub fn full_data_grid(raw: &RawDesign, y: &ResponseVector, cfg: &EngineConfig) -> Result<LambdaGrid> {
    let std = Standardizer::new(raw, cfg.standardize);
    let initial = match &cfg.initial_candidates {
        Some(vs) => crate::variables::CandidateSet::from_variables(raw.p(), vs.iter().cloned())?,
        None => crate::variables::CandidateSet::mains(raw.p()),
    };
    let design = WorkingDesign::assemble_with(&std, &initial)?;
    LambdaGrid::log_spaced(lasso::lambda_max(&design, y.values()), cfg.grid_ratio, cfg.grid_len)
}

/// Runs the engine on every training split and scores every (l, k) cell.
pub fn cross_validate(
    raw: &RawDesign,
    y: &ResponseVector,
    engine_cfg: &EngineConfig,
    cv: &CvConfig,
) -> Result<CvGrid> {
    let grid = full_data_grid(raw, y, engine_cfg)?;
    cross_validate_on_grid(raw, y, engine_cfg, cv, &grid)
}

pub fn cross_validate_on_grid(
    raw: &RawDesign,
    y: &ResponseVector,
    engine_cfg: &EngineConfig,
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
    let y_orig = y.original();
    let folds = jobs
        .par_iter()
        .map(|&(r, f)| -> Result<FoldLosses> {
            let (train, valid) = split(&assignments[r], f);
            let x_train = raw.select_rows(&train);
            let y_train = y.select(&train)?;
            let tree = engine::run_with_grid(&x_train, &y_train, engine_cfg, Some(grid.clone()))?;
            let y_valid: Vec<f64> = valid.iter().map(|&i| y_orig[i]).collect();
            let (losses, fallbacks) =
                score_tree(&tree, &y_train, raw.select_rows(&valid), &y_valid, cv.refit);
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

/// One term of a fitted model: a variable, its coefficient on the
/// standardized column, and how to build that column from raw rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub variable: VariableId,
    pub coefficient: f64,
    pub transform: ColumnTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub intercept: f64,
    pub terms: Vec<ModelTerm>,
    pub lambda: f64,
    /// Requested cell.
    pub l: usize,
    pub k: usize,
    /// Cell actually used after clamping to the full-data tree.
    pub l_used: usize,
    pub k_used: usize,
    pub refit: Refit,
    /// The OLS refit was rank deficient and the penalized fit was kept.
    pub refit_fallback: bool,
}

impl FittedModel {
    pub fn active_set(&self) -> Vec<VariableId> {
        self.terms.iter().map(|t| t.variable.clone()).collect()
    }

    pub fn predict(&self, raw: &RawDesign) -> Vec<f64> {
        let mut out = vec![self.intercept; raw.n()];
        for t in &self.terms {
            let col = t.transform.apply(raw);
            for (o, x) in out.iter_mut().zip(&col) {
                *o += t.coefficient * x;
            }
        }
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|t| t.coefficient * t.transform.apply_row(row))
                .sum::<f64>()
    }

    pub fn from_tree(
        tree: &LassoTree,
        y: &ResponseVector,
        l: usize,
        k: usize,
        refit: Refit,
    ) -> Self {
        let zero = CoefficientVector::zeros();
        let (point, k_used, l_used) = tree.clamped_point(k, l).unwrap_or((&zero, k.min(tree.len()), 0));
        let (coefs, refit_fallback) = cell_coefficients(&tree.design, y, point, refit);
        let terms = coefs
            .entries()
            .iter()
            .map(|&(j, b)| ModelTerm {
                variable: tree.design.variable(j).clone(),
                coefficient: b,
                transform: tree.design.transform(j).clone(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            intercept: y.mean(),
            terms,
            lambda: tree.grid.get(l.min(tree.grid.len() - 1)),
            l,
            k,
            l_used,
            k_used,
            refit,
            refit_fallback,
        }
    }
}

/// Reruns the engine on all rows (same grid) and refits the chosen cell.
pub fn final_fit(
    raw: &RawDesign,
    y: &ResponseVector,
    engine_cfg: &EngineConfig,
    grid: &LambdaGrid,
    l: usize,
    k: usize,
    refit: Refit,
) -> Result<(FittedModel, LassoTree)> {
    let tree = engine::run_with_grid(raw, y, engine_cfg, Some(grid.clone()))?;
    Ok((FittedModel::from_tree(&tree, y, l, k, refit), tree))
}

/// Cross-validation followed by the final fit on all rows.
pub fn cv_fit(
    raw: &RawDesign,
    y: &ResponseVector,
    engine_cfg: &EngineConfig,
    cv: &CvConfig,
) -> Result<(FittedModel, CvGrid, LassoTree)> {
    let grid = full_data_grid(raw, y, engine_cfg)?;
    let scores = cross_validate_on_grid(raw, y, engine_cfg, cv, &grid)?;
    let (model, tree) = final_fit(raw, y, engine_cfg, &grid, scores.chosen_l, scores.chosen_k, cv.refit)?;
    Ok((model, scores, tree))
}
