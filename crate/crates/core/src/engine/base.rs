use std::ops::Range;

use serde::Serialize;

use crate::design::WorkingDesign;
use crate::error::Result;
use crate::lasso::{self, CoefficientVector, LassoState, SolverConfig};
use crate::linalg::dot;

/// A stored solution: which columns are active and their values.
pub trait SparsePoint: Clone + Send + Sync + Serialize {
    /// One value per active column (the linear model) rather than one per
    /// class.
    const SCALAR: bool;

    /// Active column indices, ascending.
    fn support(&self) -> Vec<usize>;

    /// (column, values) for every active column.
    fn rows(&self) -> Vec<(usize, Vec<f64>)>;
}

impl SparsePoint for CoefficientVector {
    const SCALAR: bool = true;

    fn support(&self) -> Vec<usize> {
        self.active()
    }

    fn rows(&self) -> Vec<(usize, Vec<f64>)> {
        self.entries().iter().map(|&(j, b)| (j, vec![b])).collect()
    }
}

/// A penalized path method the engine can grow candidate sets around.
pub trait BaseProcedure: Sync {
    /// Solution plus whatever is needed to check KKT for new columns.
    type State: Clone + Send + Sync;
    type Point: SparsePoint;

    /// Smallest λ with an all-zero solution on `design`.
    fn lambda_max(&self, design: &WorkingDesign) -> f64;

    /// The all-zero solution.
    fn initial(&self) -> Self::State;

    /// Solution on all columns of `design`, warm-started from `warm`
    /// (which may be fit on a prefix of them).
    fn solve(
        &self,
        design: &WorkingDesign,
        lambda: f64,
        lambda_prev: Option<f64>,
        warm: &Self::State,
    ) -> Result<Self::State>;

    fn point(&self, state: &Self::State) -> Self::Point;

    fn perfect_fit(&self, state: &Self::State) -> bool;

    /// Largest zero-coefficient KKT score minus λ over `columns`; the state
    /// is also optimal with those columns added iff this is ≤ 0.
    fn restart_violation(
        &self,
        design: &WorkingDesign,
        state: &Self::State,
        lambda: f64,
        columns: Range<usize>,
    ) -> f64;
}

/// Squared-error Lasso by coordinate descent.
pub struct LassoBase<'a> {
    pub y: &'a [f64],
    pub solver: SolverConfig,
}

impl BaseProcedure for LassoBase<'_> {
    type State = LassoState;
    type Point = CoefficientVector;

    fn lambda_max(&self, design: &WorkingDesign) -> f64 {
        lasso::lambda_max(design, self.y)
    }

    fn initial(&self) -> LassoState {
        LassoState::zero(self.y)
    }

    fn solve(
        &self,
        design: &WorkingDesign,
        lambda: f64,
        lambda_prev: Option<f64>,
        warm: &LassoState,
    ) -> Result<LassoState> {
        lasso::solve(design, self.y, lambda, lambda_prev, &warm.beta, &self.solver)
    }

    fn point(&self, state: &LassoState) -> CoefficientVector {
        state.beta.clone()
    }

    fn perfect_fit(&self, state: &LassoState) -> bool {
        state.residual_rms() < self.solver.fit_tol
    }

    fn restart_violation(
        &self,
        design: &WorkingDesign,
        state: &LassoState,
        lambda: f64,
        columns: Range<usize>,
    ) -> f64 {
        let n = design.n() as f64;
        columns
            .map(|j| (dot(design.column(j), &state.residual) / n).abs() - lambda)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
