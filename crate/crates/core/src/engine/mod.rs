//! The backtracking coordinator.
//!
//! One main line of computation walks down the λ grid on the current
//! candidate set. When the active set generates interactions that are not
//! yet candidates, they are appended, the finished path is handed to a
//! continuation job, and the main line restarts from the latest grid point
//! at which the enlarged problem's KKT conditions still hold.
//!
//! Grid indices are 0-based; a restart index of `None` means "before the
//! first grid point", i.e. recompute from λ₁ with a zero warm start.

pub mod base;
pub mod interactions;

use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{RawDesign, ResponseVector, Standardizer, WorkingDesign};
use crate::error::{Error, Result};
use crate::lasso::{CoefficientVector, LambdaGrid, SolverConfig, Termination};
use crate::variables::{CandidateSet, VariableId};

pub use base::{BaseProcedure, LassoBase, SparsePoint};
pub use interactions::generate_interactions;

/// Version tag written into every JSON document this crate produces.
pub const SCHEMA_VERSION: u32 = 1;

/// How the restart index of an enlarged path is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStrategy {
    /// Always recompute from the grid head.
    Naive,
    /// Scan forward from the grid head until the KKT check first fails.
    Linear,
    /// Try the branch point itself, otherwise binary search for any point
    /// that passes followed by one that fails.
    #[default]
    Bisection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// A solution with more active variables ends its path.
    pub max_active: usize,
    /// Candidate-set size cap; `None` means `p + 1225`.
    pub max_candidates: Option<usize>,
    /// Largest interaction order generated (1 disables generation).
    pub max_order: usize,
    pub grid_len: usize,
    /// `λ_L / λ_1`.
    pub grid_ratio: f64,
    pub restart: RestartStrategy,
    /// Scale columns to norm √n (centering always happens).
    pub standardize: bool,
    pub solver: SolverConfig,
    /// Starting candidates; `None` means all main effects.
    pub initial_candidates: Option<Vec<VariableId>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_active: 50,
            max_candidates: None,
            max_order: 2,
            grid_len: 100,
            grid_ratio: 1e-3,
            restart: RestartStrategy::Bisection,
            standardize: true,
            solver: SolverConfig::default(),
            initial_candidates: None,
        }
    }
}

impl EngineConfig {
    pub fn candidate_cap(&self, p: usize) -> usize {
        self.max_candidates.unwrap_or(p + 1225)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.max_active < 1 {
            return Err(Error::InvalidConfig("max_active must be at least 1".into()));
        }
        if self.candidate_cap(p) < p {
            return Err(Error::InvalidConfig(format!(
                "max_candidates ({}) must be at least p ({p})",
                self.candidate_cap(p)
            )));
        }
        if self.max_order < 1 {
            return Err(Error::InvalidConfig("max_order must be at least 1".into()));
        }
        Ok(())
    }

    fn initial_set(&self, p: usize) -> Result<CandidateSet> {
        match &self.initial_candidates {
            Some(vs) => CandidateSet::from_variables(p, vs.iter().cloned()),
            None => Ok(CandidateSet::mains(p)),
        }
    }
}

/// One solution path `P_k`, stored from grid index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionPath<P> {
    /// 1-based rank k.
    pub rank: usize,
    /// `|C_k|`; the candidate set is this prefix of the tree's design.
    pub width: usize,
    /// Last grid index shared with the previous path (`None`: restarted
    /// from the grid head, or the first path).
    pub l_start: Option<usize>,
    /// Grid index at which this path generated new candidates.
    pub l_add: Option<usize>,
    pub points: Vec<P>,
    pub termination: Termination,
    /// The main line never diverged from this path after its branch, so its
    /// tail was shared rather than recomputed.
    pub aliased: bool,
}

impl<P> SolutionPath<P> {
    /// Index of the last stored point.
    pub fn last_index(&self) -> Option<usize> {
        self.points.len().checked_sub(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    /// Rank of the path that generated the new candidates.
    pub rank: usize,
    pub l_add: usize,
    pub l_start: Option<usize>,
    pub added: Vec<VariableId>,
    pub kkt_evaluations: usize,
}

/// The family of paths produced by one engine run.
#[derive(Clone, Debug)]
pub struct SolutionTree<P> {
    pub grid: LambdaGrid,
    /// Columns for every candidate ever added, in insertion order.
    pub design: WorkingDesign,
    pub paths: Vec<SolutionPath<P>>,
    pub branches: Vec<BranchRecord>,
    /// Candidate growth stopped because the cap would have been exceeded.
    pub cap_reached: bool,
}

pub type LassoTree = SolutionTree<CoefficientVector>;

impl<P: SparsePoint> SolutionTree<P> {
    /// Number of paths T.
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Path of rank `k` (1-based).
    pub fn path(&self, k: usize) -> &SolutionPath<P> {
        &self.paths[k - 1]
    }

    pub fn candidates(&self, k: usize) -> CandidateSet {
        self.design.candidates().prefix(self.path(k).width)
    }

    /// Solution for rank `k` at grid index `l`, clamping `k` to T and `l`
    /// to the path's last stored index. Returns the indices actually used;
    /// `None` if the path stored no point at all.
    pub fn clamped_point(&self, k: usize, l: usize) -> Option<(&P, usize, usize)> {
        let k = k.clamp(1, self.len());
        let path = self.path(k);
        let last = path.last_index()?;
        let l = l.min(last);
        Some((&path.points[l], k, l))
    }

    /// Active variables of a stored point.
    pub fn active_variables(&self, point: &P) -> Vec<VariableId> {
        point
            .support()
            .into_iter()
            .map(|j| self.design.variable(j).clone())
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let variables: Vec<&VariableId> = self.design.candidates().iter().collect();
        let coef_value = |vals: Vec<f64>| -> Value {
            if P::SCALAR {
                json!(vals[0])
            } else {
                json!(vals)
            }
        };
        let paths: Vec<Value> = self
            .paths
            .iter()
            .map(|p| {
                let points: Vec<Value> = p
                    .points
                    .iter()
                    .enumerate()
                    .map(|(l, pt)| {
                        let coefs: Vec<Value> = pt
                            .rows()
                            .into_iter()
                            .map(|(j, vals)| json!({"variable": variables[j], "value": coef_value(vals)}))
                            .collect();
                        json!({"l": l, "lambda": self.grid.get(l), "coefficients": coefs})
                    })
                    .collect();
                json!({
                    "rank": p.rank,
                    "candidate_set": &variables[..p.width],
                    "l_start": p.l_start,
                    "l_add": p.l_add,
                    "termination": p.termination,
                    "aliased": p.aliased,
                    "points": points,
                })
            })
            .collect();
        json!({
            "schema_version": SCHEMA_VERSION,
            "lambda": self.grid.values(),
            "candidates": variables,
            "cap_reached": self.cap_reached,
            "branches": self.branches,
            "paths": paths,
        })
    }

    /// Long-format coefficient paths, one row per nonzero coefficient.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if P::SCALAR {
            w.write_record(["rank", "l", "lambda", "variable", "coefficient"])?;
        } else {
            w.write_record(["rank", "l", "lambda", "variable", "class", "coefficient"])?;
        }
        for p in &self.paths {
            for (l, pt) in p.points.iter().enumerate() {
                for (j, vals) in pt.rows() {
                    let v = self.design.variable(j).to_string();
                    let lead = [p.rank.to_string(), l.to_string(), format!("{:e}", self.grid.get(l)), v];
                    if P::SCALAR {
                        let mut rec = lead.to_vec();
                        rec.push(format!("{:e}", vals[0]));
                        w.write_record(&rec)?;
                    } else {
                        for (c, b) in vals.iter().enumerate() {
                            let mut rec = lead.to_vec();
                            rec.push(c.to_string());
                            rec.push(format!("{b:e}"));
                            w.write_record(&rec)?;
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Lasso backtracking on `raw`, with the grid derived from the initial
/// candidate set.
pub fn run(raw: &RawDesign, y: &ResponseVector, cfg: &EngineConfig) -> Result<LassoTree> {
    run_with_grid(raw, y, cfg, None)
}

/// As [`run`], optionally on a fixed grid (cross-validation folds reuse the
/// full-data grid).
pub fn run_with_grid(
    raw: &RawDesign,
    y: &ResponseVector,
    cfg: &EngineConfig,
    grid: Option<LambdaGrid>,
) -> Result<LassoTree> {
    if raw.n() != y.len() {
        return Err(Error::InvalidDesign(format!(
            "design has {} rows but response has {}",
            raw.n(),
            y.len()
        )));
    }
    let std = Standardizer::new(raw, cfg.standardize);
    let base = LassoBase {
        y: y.values(),
        solver: cfg.solver,
    };
    run_base(&base, &std, cfg, grid)
}

/// Extends a path from grid index `start` with `warm` as the solution at
/// `start - 1`, until perfect fit, grid end or the active cap.
pub fn continue_path<B: BaseProcedure>(
    base: &B,
    design: &WorkingDesign,
    grid: &LambdaGrid,
    start: usize,
    warm: B::State,
    max_active: usize,
) -> Result<(Vec<B::Point>, Termination)> {
    let mut points = Vec::new();
    let mut warm = warm;
    let mut l = start;
    loop {
        if l > 0 && base.perfect_fit(&warm) {
            return Ok((points, Termination::PerfectFit));
        }
        if l == grid.len() {
            return Ok((points, Termination::GridEnd));
        }
        let prev = (l > 0).then(|| grid.get(l - 1));
        let state = base.solve(design, grid.get(l), prev, &warm)?;
        let point = base.point(&state);
        if point.support().len() > max_active {
            return Ok((points, Termination::ActiveCap));
        }
        points.push(point);
        warm = state;
        l += 1;
    }
}

struct RankState<P> {
    width: usize,
    l_start: Option<usize>,
    l_add: Option<usize>,
    prefix: Vec<P>,
    finished: Option<(Vec<P>, Termination)>,
    aliased: bool,
}

type JobResults<P> = Mutex<Vec<(usize, Result<(Vec<P>, Termination)>)>>;

/// The engine over any base procedure.
pub fn run_base<B: BaseProcedure>(
    base: &B,
    std: &Standardizer,
    cfg: &EngineConfig,
    grid: Option<LambdaGrid>,
) -> Result<SolutionTree<B::Point>> {
    let p = std.p();
    cfg.validate(p)?;
    let initial = cfg.initial_set(p)?;
    let mut design = WorkingDesign::assemble_with(std, &initial)?;
    let grid = match grid {
        Some(g) => g,
        None => LambdaGrid::log_spaced(base.lambda_max(&design), cfg.grid_ratio, cfg.grid_len)?,
    };
    let cap = cfg.candidate_cap(p).max(initial.len());
    let jobs: JobResults<B::Point> = Mutex::new(Vec::new());

    let (mut ranks, branches, cap_reached) = rayon::scope(|s| {
        let spawn = |rank: usize, design: WorkingDesign, start: usize, warm: B::State| {
            let (grid, jobs) = (&grid, &jobs);
            s.spawn(move |_| {
                let out = continue_path(base, &design, grid, start, warm, cfg.max_active);
                jobs.lock().expect("job registry").push((rank, out));
            });
        };
        coordinate(base, std, cfg, &grid, &mut design, cap, spawn)
    })?;

    for (rank, out) in jobs.into_inner().expect("job registry") {
        let (suffix, end) = out?;
        ranks[rank].finished = Some((suffix, end));
    }
    let paths = ranks
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let (suffix, termination) = r.finished.expect("every rank finishes");
            let mut points = r.prefix;
            points.extend(suffix);
            SolutionPath {
                rank: k + 1,
                width: r.width,
                l_start: r.l_start,
                l_add: r.l_add,
                points,
                termination,
                aliased: r.aliased,
            }
        })
        .collect();
    Ok(SolutionTree {
        grid,
        design,
        paths,
        branches,
        cap_reached,
    })
}

type Coordinated<P> = (Vec<RankState<P>>, Vec<BranchRecord>, bool);

fn coordinate<B, F>(
    base: &B,
    std: &Standardizer,
    cfg: &EngineConfig,
    grid: &LambdaGrid,
    design: &mut WorkingDesign,
    cap: usize,
    spawn: F,
) -> Result<Coordinated<B::Point>>
where
    B: BaseProcedure,
    F: Fn(usize, WorkingDesign, usize, B::State),
{
    let len = grid.len();
    // B(l), R(l) (inside the state) and K(l): the latest solution computed
    // at each grid index and the rank that computed it.
    let mut b: Vec<Option<B::State>> = vec![None; len];
    let mut kk: Vec<usize> = vec![0; len];
    let mut ranks: Vec<RankState<B::Point>> = vec![RankState {
        width: design.width(),
        l_start: None,
        l_add: None,
        prefix: Vec::new(),
        finished: None,
        aliased: false,
    }];
    let mut branches = Vec::new();
    let mut cap_reached = false;
    // ranks whose path still coincides with the main line
    let mut pending: Vec<usize> = Vec::new();
    let mut line: Vec<B::Point> = Vec::new();
    let mut current = design.clone();
    let mut k = 0usize;
    let mut l = 0usize;
    let mut warm = base.initial();

    let end = loop {
        if l > 0 && base.perfect_fit(&warm) {
            break Termination::PerfectFit;
        }
        if l == len {
            break Termination::GridEnd;
        }
        let prev = (l > 0).then(|| grid.get(l - 1));
        let state = base.solve(&current, grid.get(l), prev, &warm)?;
        let point = base.point(&state);
        let support = point.support();

        if let Some(&top) = support.last() {
            let mut still = Vec::with_capacity(pending.len());
            for j in pending.drain(..) {
                if top >= ranks[j].width {
                    let w = b[l - 1].clone().expect("solved before divergence");
                    ranks[j].prefix = line[..l].to_vec();
                    spawn(j, design.prefix(ranks[j].width), l, w);
                } else {
                    still.push(j);
                }
            }
            pending = still;
        }
        if support.len() > cfg.max_active {
            break Termination::ActiveCap;
        }
        debug_assert_eq!(line.len(), l);
        b[l] = Some(state.clone());
        kk[l] = k;
        line.push(point);

        if !cap_reached {
            let active: Vec<&VariableId> = support.iter().map(|&j| current.variable(j)).collect();
            let new: Vec<VariableId> = generate_interactions(active, cfg.max_order)
                .into_iter()
                .filter(|v| !current.candidates().contains(v))
                .collect();
            if !new.is_empty() && current.width() + new.len() > cap {
                cap_reached = true;
            } else if !new.is_empty() {
                for v in &new {
                    design.append(std, v.clone())?;
                }
                let width = design.width();
                let mut evals = 0usize;
                let mut pass = |t: usize| -> bool {
                    evals += 1;
                    let st = b[t].as_ref().expect("solution stored");
                    let from = ranks[kk[t]].width;
                    base.restart_violation(design, st, grid.get(t), from..width) <= 0.0
                };
                let l_start = match cfg.restart {
                    RestartStrategy::Naive => None,
                    RestartStrategy::Linear => {
                        let mut t = 0;
                        while t <= l && pass(t) {
                            t += 1;
                        }
                        t.checked_sub(1)
                    }
                    RestartStrategy::Bisection => {
                        if pass(l) {
                            Some(l)
                        } else {
                            // pass(lo) and fail(hi); lo = -1 stands for λ = ∞
                            let (mut lo, mut hi) = (-1i64, l as i64);
                            while hi - lo > 1 {
                                let mid = lo + (hi - lo) / 2;
                                if pass(mid as usize) {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                            usize::try_from(lo).ok()
                        }
                    }
                };
                branches.push(BranchRecord {
                    rank: k + 1,
                    l_add: l,
                    l_start,
                    added: new,
                    kkt_evaluations: evals,
                });
                ranks[k].l_add = Some(l);
                if l_start == Some(l) {
                    // the enlarged path extends this one; defer its tail
                    pending.push(k);
                } else {
                    for j in std::iter::once(k).chain(pending.drain(..)) {
                        ranks[j].prefix = line.clone();
                        spawn(j, design.prefix(ranks[j].width), l + 1, state.clone());
                    }
                }
                k += 1;
                ranks.push(RankState {
                    width,
                    l_start,
                    l_add: None,
                    prefix: Vec::new(),
                    finished: None,
                    aliased: false,
                });
                current = design.clone();
                match l_start {
                    Some(s) => {
                        warm = b[s].clone().expect("solution stored");
                        line.truncate(s + 1);
                        l = s + 1;
                    }
                    None => {
                        warm = base.initial();
                        line.clear();
                        l = 0;
                    }
                }
                continue;
            }
        }
        warm = state;
        l += 1;
    };

    ranks[k].prefix = line.clone();
    ranks[k].finished = Some((Vec::new(), end));
    for j in pending {
        ranks[j].prefix = line.clone();
        ranks[j].finished = Some((Vec::new(), end));
        ranks[j].aliased = true;
    }
    Ok((ranks, branches, cap_reached))
}
