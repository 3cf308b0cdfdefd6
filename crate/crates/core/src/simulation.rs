//! Synthetic data generators and the method comparison used to reproduce
//! the simulation study: main effects only, iterated Lasso fits,
//! backtracking, and an oracle that is handed the true interactions.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{self, CvConfig, FittedModel, Refit};
use crate::design::{RawDesign, ResponseVector};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::truth::{SelectionErrors, TruthSpec};
use crate::variables::VariableId;

/// Coefficients of the ten true main effects.
pub const MAIN_COEFFICIENTS: [f64; 10] = [2.0, -1.5, 1.25, -1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
/// Correlation decay of the banded covariance.
pub const BANDED_RHO: f64 = 0.75;
/// Rows used to estimate the signal's second moment.
pub const SNR_MC_ROWS: usize = 100_000;
const SNR_MC_SEED: u64 = 0x5151_7a2e;
/// Fresh rows used to estimate L2-sq.
pub const TEST_ROWS: usize = 10_000;

// purposes of the per-replicate random streams
const STREAM_DESIGN: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_TEST: u64 = 2;

fn stream(seed: u64, replicate: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 8) | purpose);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    /// `Σ_ij = ρ^d` with `d` the circular distance between `i` and `j`.
    BandedPower,
}

/// Row distribution of a simulated design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Population {
    Gaussian { p: usize, covariance: CovarianceKind },
    /// Columns 1–5 built from a correlated normal triple and random signs so
    /// that column 5 is uncorrelated with the response; the rest iid N(0, 1).
    Motivating { p: usize },
}

/// Circular distance `min(|i - j|, p - |i - j|)`, which equals
/// `-||i - j| - p/2| + p/2`.
pub fn circular_distance(i: usize, j: usize, p: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(p - d)
}

pub fn banded_entry(i: usize, j: usize, p: usize) -> f64 {
    BANDED_RHO.powi(circular_distance(i, j, p) as i32)
}

/// Smallest eigenvalue of the banded covariance. It is circulant, so its
/// eigenvalues are the discrete Fourier transform of its first row.
pub fn banded_min_eigenvalue(p: usize) -> f64 {
    let row: Vec<f64> = (0..p).map(|d| banded_entry(0, d, p)).collect();
    (0..p)
        .map(|m| {
            row.iter()
                .enumerate()
                .map(|(d, c)| c * (2.0 * std::f64::consts::PI * (m * d) as f64 / p as f64).cos())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn banded_factor(p: usize) -> Result<Arc<Cholesky>> {
    static FACTORS: OnceLock<Mutex<HashMap<usize, Arc<Cholesky>>>> = OnceLock::new();
    let cache = FACTORS.get_or_init(Default::default);
    if let Some(f) = cache.lock().expect("factor cache").get(&p) {
        return Ok(f.clone());
    }
    let min_eig = banded_min_eigenvalue(p);
    if min_eig <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "banded covariance with p = {p} is not positive definite (min eigenvalue {min_eig})"
        )));
    }
    let a: Vec<f64> = (0..p * p).map(|x| banded_entry(x / p, x % p, p)).collect();
    let f = Arc::new(Cholesky::new(&a, p, 1e-12)?);
    cache.lock().expect("factor cache").insert(p, f.clone());
    Ok(f)
}

fn motivating_z(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // Cholesky factor of [[1, 0, ½], [0, 1, ½], [½, ½, 1]]
    let (a, b, c): (f64, f64, f64) = (
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    [a, b, 0.5 * a + 0.5 * b + 0.5f64.sqrt() * c]
}

fn motivating_head(rng: &mut ChaCha8Rng) -> [f64; 5] {
    let z = motivating_z(rng);
    let r1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let r2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    [
        r1 * z[0].signum() * z[0].abs().powf(0.25),
        r1 * z[0].abs().powf(0.75),
        r2 * z[1].signum() * z[1].abs().powf(0.25),
        r2 * z[1].abs().powf(0.75),
        z[2],
    ]
}

/// Draws selected coordinates of a population's rows.
pub struct SubsetSampler {
    population: Population,
    /// 0-based, ascending.
    cols: Vec<usize>,
    factor: Option<Cholesky>,
}

impl Population {
    pub fn p(&self) -> usize {
        match *self {
            Population::Gaussian { p, .. } | Population::Motivating { p } => p,
        }
    }

    /// `n` full rows.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<RawDesign> {
        let p = self.p();
        let mut data = vec![0.0; n * p];
        let factor = match self {
            Population::Gaussian { covariance: CovarianceKind::BandedPower, p } => Some(banded_factor(*p)?),
            _ => None,
        };
        let mut z = vec![0.0; p];
        for i in 0..n {
            match self {
                Population::Gaussian { .. } => {
                    for zj in z.iter_mut() {
                        *zj = rng.sample(StandardNormal);
                    }
                    let row = match &factor {
                        Some(f) => f.mul_lower(&z),
                        None => z.clone(),
                    };
                    for (j, x) in row.into_iter().enumerate() {
                        data[j * n + i] = x;
                    }
                }
                Population::Motivating { .. } => {
                    let head = motivating_head(rng);
                    for (j, x) in head.into_iter().enumerate() {
                        data[j * n + i] = x;
                    }
                    for j in 5..p {
                        data[j * n + i] = rng.sample(StandardNormal);
                    }
                }
            }
        }
        RawDesign::from_column_major(n, p, data)
    }

    /// Sampler for the 0-based columns `cols` only; their joint law is the
    /// population's marginal.
    pub fn subset(&self, cols: &BTreeSet<usize>) -> Result<SubsetSampler> {
        let cols: Vec<usize> = cols.iter().copied().collect();
        if let Some(&j) = cols.last() {
            if j >= self.p() {
                return Err(Error::InvalidConfig(format!("column {} outside p = {}", j + 1, self.p())));
            }
        }
        let factor = match self {
            Population::Gaussian { covariance: CovarianceKind::BandedPower, p } if !cols.is_empty() => {
                let m = cols.len();
                let a: Vec<f64> = (0..m * m).map(|x| banded_entry(cols[x / m], cols[x % m], *p)).collect();
                Some(Cholesky::new(&a, m, 1e-12)?)
            }
            _ => None,
        };
        Ok(SubsetSampler {
            population: *self,
            cols,
            factor,
        })
    }
}

impl SubsetSampler {
    /// Fills the sampled coordinates of `row` (length p); others are left
    /// untouched.
    pub fn fill(&self, rng: &mut ChaCha8Rng, row: &mut [f64]) {
        match self.population {
            Population::Gaussian { .. } => {
                let z: Vec<f64> = self.cols.iter().map(|_| rng.sample(StandardNormal)).collect();
                let x = match &self.factor {
                    Some(f) => f.mul_lower(&z),
                    None => z,
                };
                for (&j, v) in self.cols.iter().zip(x) {
                    row[j] = v;
                }
            }
            Population::Motivating { .. } => {
                let head = motivating_head(rng);
                for &j in &self.cols {
                    row[j] = if j < 5 { head[j] } else { rng.sample(StandardNormal) };
                }
            }
        }
    }
}

/// `E f(x)²` over the population by Monte Carlo on [`SNR_MC_ROWS`] rows
/// (fixed seed, cached per population and model).
pub fn signal_second_moment(population: &Population, truth: &TruthSpec) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    let key = serde_json::to_string(&(population, &truth.terms, truth.intercept))?;
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&m) = cache.lock().expect("moment cache").get(&key) {
        return Ok(m);
    }
    let m = second_moment_mc(population, truth, SNR_MC_ROWS, SNR_MC_SEED)?;
    cache.lock().expect("moment cache").insert(key, m);
    Ok(m)
}

fn second_moment_mc(population: &Population, truth: &TruthSpec, rows: usize, seed: u64) -> Result<f64> {
    let cols: BTreeSet<usize> = truth
        .terms
        .iter()
        .flat_map(|t| t.variable.members().iter().map(|j| j - 1))
        .collect();
    let sampler = population.subset(&cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = vec![0.0; population.p()];
    let mut total = 0.0;
    for _ in 0..rows {
        sampler.fill(&mut rng, &mut row);
        let f = truth.signal_row(&row);
        total += f * f;
    }
    Ok(total / rows as f64)
}

/// Noise level giving `E‖f‖² / E‖ε‖² = snr²`.
pub fn sigma_for_snr(population: &Population, truth: &TruthSpec, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig(format!("SNR must be positive, got {snr}")));
    }
    Ok(signal_second_moment(population, truth)?.sqrt() / snr)
}

/// One of the five simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub snr: f64,
    pub covariance: CovarianceKind,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// The published setting: n = 250, p = 1000.
    pub fn standard(scenario: u8, snr: f64, replications: usize, seed: u64) -> Self {
        Self {
            scenario,
            n: 250,
            p: 1000,
            snr,
            covariance: if scenario == 2 {
                CovarianceKind::BandedPower
            } else {
                CovarianceKind::Identity
            },
            replications,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.scenario) {
            return Err(Error::InvalidConfig(format!("scenario must be 1–5, got {}", self.scenario)));
        }
        if self.p < MAIN_COEFFICIENTS.len() {
            return Err(Error::InvalidConfig(format!("p must be at least 10, got {}", self.p)));
        }
        if self.n < 10 {
            return Err(Error::InvalidConfig(format!("n must be at least 10, got {}", self.n)));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::InvalidConfig(format!("SNR must be positive, got {}", self.snr)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        Ok(())
    }

    pub fn population(&self) -> Population {
        Population::Gaussian {
            p: self.p,
            covariance: self.covariance,
        }
    }

    /// True interactions of the scenario.
    pub fn interactions(&self) -> Vec<VariableId> {
        let pair = VariableId::pair;
        match self.scenario {
            3 => vec![pair(1, 2), pair(3, 4), pair(5, 6)],
            4 => (2..=6).map(|j| pair(1, j)).collect(),
            5 => vec![pair(1, 2), pair(1, 3), pair(2, 3), pair(4, 5), pair(4, 6), pair(5, 6)],
            _ => vec![],
        }
    }

    /// Every interaction gets the root mean square of the main coefficients.
    pub fn interaction_coefficient() -> f64 {
        let ss: f64 = MAIN_COEFFICIENTS.iter().map(|b| b * b).sum();
        (ss / MAIN_COEFFICIENTS.len() as f64).sqrt()
    }

    /// The true model with σ calibrated to the SNR.
    pub fn truth(&self) -> Result<TruthSpec> {
        self.validate()?;
        let mut terms: Vec<(VariableId, f64)> = MAIN_COEFFICIENTS
            .iter()
            .enumerate()
            .map(|(j, &b)| (VariableId::main(j + 1), b))
            .collect();
        let c = Self::interaction_coefficient();
        terms.extend(self.interactions().into_iter().map(|v| (v, c)));
        let mut truth = TruthSpec::new(self.p, terms, 0.0)?;
        truth.sigma = sigma_for_snr(&self.population(), &truth, self.snr)?;
        Ok(truth)
    }
}

/// A simulated data set with its generating model and row distribution.
#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub raw: RawDesign,
    pub y: ResponseVector,
    pub truth: TruthSpec,
    pub population: Population,
}

fn respond(raw: &RawDesign, truth: &TruthSpec, rng: &mut ChaCha8Rng) -> Result<ResponseVector> {
    let f = truth.signal(raw)?;
    let y = f
        .into_iter()
        .map(|fi| fi + truth.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ResponseVector::new(y)
}

/// Replicate `replicate` of a scenario; `(spec.seed, replicate)` determines
/// the data completely.
pub fn gen_scenario(spec: &ScenarioSpec, replicate: usize) -> Result<SimulatedData> {
    let truth = spec.truth()?;
    let population = spec.population();
    let raw = population.draw(spec.n, &mut stream(spec.seed, replicate, STREAM_DESIGN))?;
    let y = respond(&raw, &truth, &mut stream(spec.seed, replicate, STREAM_NOISE))?;
    Ok(SimulatedData {
        raw,
        y,
        truth,
        population,
    })
}

/// Coefficients of the motivating model: mains 1–6, then the interactions
/// {1,2}, {3,4}, {5,6}.
pub const MOTIVATING_COEFFICIENTS: [f64; 9] = [-1.25, -0.75, 0.75, -0.5, -2.0, 1.5, 2.0, 2.0, 1.0];

pub fn motivating_truth(p: usize, snr: f64) -> Result<TruthSpec> {
    if p < 6 {
        return Err(Error::InvalidConfig(format!("p must be at least 6, got {p}")));
    }
    let b = MOTIVATING_COEFFICIENTS;
    let mut terms: Vec<(VariableId, f64)> = (0..6).map(|j| (VariableId::main(j + 1), b[j])).collect();
    terms.push((VariableId::pair(1, 2), b[6]));
    terms.push((VariableId::pair(3, 4), b[7]));
    terms.push((VariableId::pair(5, 6), b[8]));
    let mut truth = TruthSpec::new(p, terms, 0.0)?;
    truth.sigma = sigma_for_snr(&Population::Motivating { p }, &truth, snr)?;
    Ok(truth)
}

/// The motivating example: variable 5 is uncorrelated with the response
/// and with every other main effect.
pub fn gen_motivating(n: usize, p: usize, snr: f64, seed: u64) -> Result<SimulatedData> {
    let truth = motivating_truth(p, snr)?;
    let population = Population::Motivating { p };
    let raw = population.draw(n, &mut stream(seed, 0, STREAM_DESIGN))?;
    let y = respond(&raw, &truth, &mut stream(seed, 0, STREAM_NOISE))?;
    Ok(SimulatedData {
        raw,
        y,
        truth,
        population,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Lasso on main effects only.
    Main,
    /// Repeated Lasso fits, each adding all pairwise interactions among the
    /// main effects the previous fit selected.
    Iterate,
    Backtracking,
    /// Lasso on all mains plus exactly the true interactions.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Main, Method::Iterate, Method::Backtracking, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Main => "main",
            Method::Iterate => "iterate",
            Method::Backtracking => "backtracking",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub engine: EngineConfig,
    pub folds: usize,
    pub repeats: usize,
    pub refit: Refit,
    pub test_rows: usize,
    /// Upper bound on iterated fits (they also stop once a fit adds nothing
    /// or the design outgrows `p + n(n-1)/2`).
    pub iterate_rounds: usize,
    /// Cross-validation that picks the active set whose pairwise
    /// interactions the next iterated fit adds: plain Lasso, one 5-fold
    /// split by default. The final (λ, fit) choice uses the main settings.
    pub iterate_growth_refit: Refit,
    pub iterate_growth_repeats: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            folds: 5,
            repeats: 5,
            refit: Refit::OlsHybrid,
            test_rows: TEST_ROWS,
            iterate_rounds: 5,
            iterate_growth_refit: Refit::Lasso,
            iterate_growth_repeats: 1,
        }
    }
}

/// A CV-selected model of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    pub model: FittedModel,
    /// Mean validation loss at the chosen cell.
    pub cv_score: f64,
    /// Number of paths (backtracking) or fits (iterate) the choice ranged over.
    pub ranks: usize,
    /// Iterated fits only: the 1-based fit chosen.
    pub round: Option<usize>,
}

fn cv_config(cfg: &ComparisonConfig, seed: u64) -> CvConfig {
    CvConfig {
        folds: cfg.folds,
        repeats: cfg.repeats,
        refit: cfg.refit,
        seed,
    }
}

/// Fits `method` on `data` and selects its model by cross-validation with
/// folds drawn from `cv_seed`.
pub fn fit_method(method: Method, data: &SimulatedData, cfg: &ComparisonConfig, cv_seed: u64) -> Result<MethodFit> {
    let cv = cv_config(cfg, cv_seed);
    let (raw, y) = (&data.raw, &data.y);
    let p = raw.p();
    let single = |initial: Option<Vec<VariableId>>| EngineConfig {
        max_order: 1,
        initial_candidates: initial,
        ..cfg.engine.clone()
    };
    let fit = |engine: EngineConfig| -> Result<MethodFit> {
        let (model, grid, tree) = cv::cv_fit(raw, y, &engine, &cv)?;
        Ok(MethodFit {
            method,
            model,
            cv_score: grid.best_score(),
            ranks: tree.len(),
            round: None,
        })
    };
    match method {
        Method::Main => fit(single(None)),
        Method::Backtracking => fit(cfg.engine.clone()),
        Method::Oracle => {
            let mut vars: Vec<VariableId> = (1..=p).map(VariableId::main).collect();
            vars.extend(data.truth.interactions());
            fit(single(Some(vars)))
        }
        Method::Iterate => {
            let n = raw.n();
            let cap = p + n * (n - 1) / 2;
            let mut design: Vec<VariableId> = (1..=p).map(VariableId::main).collect();
            let mut present: BTreeSet<VariableId> = design.iter().cloned().collect();
            let mut best: Option<MethodFit> = None;
            let mut rounds = 0;
            for round in 1..=cfg.iterate_rounds.max(1) {
                rounds = round;
                let engine = single(Some(design.clone()));
                let mut f = fit(engine.clone())?;
                f.round = Some(round);
                let growth = CvConfig {
                    refit: cfg.iterate_growth_refit,
                    repeats: cfg.iterate_growth_repeats,
                    ..cv
                };
                let grown = if growth == cv {
                    f.model.clone()
                } else {
                    cv::cv_fit(raw, y, &engine, &growth)?.0
                };
                let mains: Vec<usize> = grown
                    .active_set()
                    .iter()
                    .filter(|v| v.is_main())
                    .map(|v| v.members()[0])
                    .collect();
                if best.as_ref().is_none_or(|b| f.cv_score < b.cv_score) {
                    best = Some(f);
                }
                let mut added = false;
                for (a, &i) in mains.iter().enumerate() {
                    for &j in &mains[a + 1..] {
                        let v = VariableId::pair(i, j);
                        if present.insert(v.clone()) {
                            design.push(v);
                            added = true;
                        }
                    }
                }
                if !added || design.len() > cap {
                    break;
                }
            }
            let mut best = best.expect("at least one round");
            best.ranks = rounds;
            Ok(best)
        }
    }
}

/// Per-method outcome of one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub l2sq: f64,
    pub errors: SelectionErrors,
    pub active: Vec<VariableId>,
    pub cv_score: f64,
    pub l: usize,
    pub k: usize,
    pub round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replicate: usize,
    pub sigma: f64,
    pub outcomes: Vec<MethodOutcome>,
    /// Methods whose fit failed, with the error message.
    pub failures: Vec<(Method, String)>,
}

/// L2-sq of every model on the same fresh rows.
pub fn test_error(
    data: &SimulatedData,
    models: &[&FittedModel],
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let mut cols: BTreeSet<usize> = data
        .truth
        .terms
        .iter()
        .flat_map(|t| t.variable.members().iter().map(|j| j - 1))
        .collect();
    for m in models {
        for t in &m.terms {
            cols.extend(t.variable.members().iter().map(|j| j - 1));
        }
    }
    let sampler = data.population.subset(&cols)?;
    let mut row = vec![0.0; data.population.p()];
    let mut sums = vec![0.0; models.len()];
    for _ in 0..rows {
        sampler.fill(rng, &mut row);
        let f = data.truth.signal_row(&row);
        for (s, m) in sums.iter_mut().zip(models) {
            let d = f - m.predict_row(&row);
            *s += d * d;
        }
    }
    Ok(sums.into_iter().map(|s| s / rows as f64).collect())
}

/// Fits every method on replicate `replicate` and scores it.
pub fn run_replication(
    spec: &ScenarioSpec,
    replicate: usize,
    methods: &[Method],
    cfg: &ComparisonConfig,
) -> Result<ReplicationResult> {
    let data = gen_scenario(spec, replicate)?;
    let cv_seed = spec.seed.wrapping_add(replicate as u64);
    evaluate_methods(&data, replicate, methods, cfg, cv_seed, &mut stream(spec.seed, replicate, STREAM_TEST))
}

/// Fits and scores `methods` on one data set.
pub fn evaluate_methods(
    data: &SimulatedData,
    replicate: usize,
    methods: &[Method],
    cfg: &ComparisonConfig,
    cv_seed: u64,
    test_rng: &mut ChaCha8Rng,
) -> Result<ReplicationResult> {
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for &m in methods {
        match fit_method(m, data, cfg, cv_seed) {
            Ok(f) => fits.push(f),
            Err(e) => failures.push((m, e.to_string())),
        }
    }
    let models: Vec<&FittedModel> = fits.iter().map(|f| &f.model).collect();
    let l2 = test_error(data, &models, cfg.test_rows, test_rng)?;
    let outcomes = fits
        .iter()
        .zip(l2)
        .map(|(f, l2sq)| {
            let active = f.model.active_set();
            MethodOutcome {
                method: f.method,
                l2sq,
                errors: data.truth.errors(&active),
                active,
                cv_score: f.cv_score,
                l: f.model.l,
                k: f.model.k,
                round: f.round,
            }
        })
        .collect();
    Ok(ReplicationResult {
        replicate,
        sigma: data.truth.sigma,
        outcomes,
        failures,
    })
}

/// Replication averages of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub l2sq: f64,
    /// Standard error of the L2-sq average across replications.
    pub l2sq_se: f64,
    pub fp_main: f64,
    pub fn_main: f64,
    pub fp_inter: f64,
    pub fn_inter: f64,
    /// Replications that contributed.
    pub replications: usize,
    pub failures: usize,
}

impl MetricRow {
    pub fn aggregate(method: Method, results: &[ReplicationResult]) -> Self {
        let outs: Vec<&MethodOutcome> = results
            .iter()
            .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
            .collect();
        let failures = results
            .iter()
            .map(|r| r.failures.iter().filter(|(m, _)| *m == method).count())
            .sum();
        let m = outs.len() as f64;
        let mean = |f: &dyn Fn(&MethodOutcome) -> f64| {
            if outs.is_empty() {
                f64::NAN
            } else {
                outs.iter().map(|o| f(o)).sum::<f64>() / m
            }
        };
        let l2sq = mean(&|o| o.l2sq);
        let l2sq_se = if outs.len() > 1 {
            (outs.iter().map(|o| (o.l2sq - l2sq).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt()
        } else {
            f64::NAN
        };
        Self {
            method,
            l2sq,
            l2sq_se,
            fp_main: mean(&|o| o.errors.fp_main as f64),
            fn_main: mean(&|o| o.errors.fn_main as f64),
            fp_inter: mean(&|o| o.errors.fp_inter as f64),
            fn_inter: mean(&|o| o.errors.fn_inter as f64),
            replications: outs.len(),
            failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub spec: ScenarioSpec,
    pub test_rows: usize,
    pub rows: Vec<MetricRow>,
    pub replications: Vec<ReplicationResult>,
}

impl Comparison {
    pub fn row(&self, method: Method) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Runs all replications (concurrently) and averages per method.
pub fn run_comparison(spec: &ScenarioSpec, methods: &[Method], cfg: &ComparisonConfig) -> Result<Comparison> {
    spec.validate()?;
    // the first call computes and caches σ and any covariance factor
    spec.truth()?;
    let replications = (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, r, methods, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let rows = methods.iter().map(|&m| MetricRow::aggregate(m, &replications)).collect();
    Ok(Comparison {
        spec: spec.clone(),
        test_rows: cfg.test_rows,
        rows,
        replications,
    })
}

/// Statistics in table order.
pub const STATISTICS: [&str; 5] = ["l2sq", "fp_main", "fn_main", "fp_inter", "fn_inter"];

/// Table layout: one line per statistic, one column per method (empty when
/// a method was not run).
pub fn write_table_csv<W: Write>(comparison: &Comparison, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario".to_string(), "snr".into(), "statistic".into()];
    header.extend(Method::ALL.iter().map(|m| m.name().to_string()));
    w.write_record(&header)?;
    for stat in STATISTICS {
        let mut rec = vec![comparison.spec.scenario.to_string(), comparison.spec.snr.to_string(), stat.to_string()];
        for m in Method::ALL {
            rec.push(match comparison.row(m) {
                Some(r) => {
                    let v = match stat {
                        "l2sq" => r.l2sq,
                        "fp_main" => r.fp_main,
                        "fn_main" => r.fn_main,
                        "fp_inter" => r.fp_inter,
                        _ => r.fn_inter,
                    };
                    format!("{v:.6}")
                }
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_covariance_has_unit_diagonal_and_wraps() {
        assert_eq!(banded_entry(7, 7, 1000), 1.0);
        assert_eq!(circular_distance(0, 999, 1000), 1);
        assert_eq!(circular_distance(0, 500, 1000), 500);
        assert_eq!(banded_entry(3, 5, 10), banded_entry(5, 3, 10));
        // matches the published exponent -||i-j| - p/2| + p/2
        for (i, j, p) in [(0usize, 7usize, 10usize), (2, 9, 11), (0, 3, 6)] {
            let d = i.abs_diff(j) as f64;
            let e = -(d - p as f64 / 2.0).abs() + p as f64 / 2.0;
            assert!((banded_entry(i, j, p) - BANDED_RHO.powf(e)).abs() < 1e-15);
        }
    }

    #[test]
    fn banded_min_eigenvalue_matches_dense_solver() {
        let p = 12;
        let a: Vec<f64> = (0..p * p).map(|x| banded_entry(x / p, x % p, p)).collect();
        let dense = crate::linalg::min_eigenvalue(&a, p);
        assert!((banded_min_eigenvalue(p) - dense).abs() < 1e-10);
        assert!(dense > 0.0);
    }

    #[test]
    fn motivating_products_recover_the_latent_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut probe = rng.clone();
            let z = motivating_z(&mut probe);
            let h = motivating_head(&mut rng);
            assert!((h[0] * h[1] - z[0]).abs() < 1e-12);
            assert!((h[2] * h[3] - z[1]).abs() < 1e-12);
            assert_eq!(h[4], z[2]);
        }
    }

    #[test]
    fn motivating_coefficients_decorrelate_column_five() {
        let b = MOTIVATING_COEFFICIENTS;
        assert_eq!(b[4], -0.5 * (b[6] + b[7]));
    }

    #[test]
    fn column_five_is_uncorrelated_with_the_response() {
        let data = gen_motivating(100_000, 6, 4.0, 11).unwrap();
        let x5 = data.raw.column(4);
        let y = data.y.values();
        let n = y.len() as f64;
        let m5 = x5.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, yi) in x5.iter().zip(y) {
            sxy += (x - m5) * yi;
            sxx += (x - m5) * (x - m5);
            syy += yi * yi;
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() < 0.01, "r = {r}");
    }

    #[test]
    fn zero_signal_gives_zero_sigma_and_scaling_is_linear() {
        let pop = Population::Gaussian {
            p: 10,
            covariance: CovarianceKind::Identity,
        };
        let zero = TruthSpec::new(10, vec![(VariableId::main(1), 0.0)], 0.0).unwrap();
        assert_eq!(sigma_for_snr(&pop, &zero, 2.0).unwrap(), 0.0);
        let one = TruthSpec::new(10, vec![(VariableId::main(1), 1.5), (VariableId::main(2), -1.0)], 0.0).unwrap();
        let two = TruthSpec::new(10, vec![(VariableId::main(1), 3.0), (VariableId::main(2), -2.0)], 0.0).unwrap();
        let s1 = sigma_for_snr(&pop, &one, 3.0).unwrap();
        let s2 = sigma_for_snr(&pop, &two, 3.0).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-12 * s2);
    }

    #[test]
    fn identity_main_effect_power_matches_closed_form() {
        let spec = ScenarioSpec {
            p: 20,
            ..ScenarioSpec::standard(1, 2.0, 1, 0)
        };
        let truth = spec.truth().unwrap();
        let closed: f64 = MAIN_COEFFICIENTS.iter().map(|b| b * b).sum();
        let mc = signal_second_moment(&spec.population(), &truth).unwrap();
        assert!((mc / closed - 1.0).abs() < 0.02, "{mc} vs {closed}");
    }

    #[test]
    fn realized_snr_matches_target() {
        let spec = ScenarioSpec {
            p: 30,
            replications: 500,
            ..ScenarioSpec::standard(3, 3.0, 500, 4)
        };
        let (mut fs, mut es) = (0.0, 0.0);
        for r in 0..spec.replications {
            let d = gen_scenario(&spec, r).unwrap();
            let f = d.truth.signal(&d.raw).unwrap();
            let y = d.y.original();
            fs += f.iter().map(|v| v * v).sum::<f64>();
            es += f.iter().zip(&y).map(|(a, b)| (b - a).powi(2)).sum::<f64>();
        }
        let ratio = fs / es;
        assert!((ratio / 9.0 - 1.0).abs() < 0.05, "SNR² = {ratio}");
    }

    #[test]
    fn scenario_one_signal_lives_on_the_first_ten_columns() {
        let spec = ScenarioSpec {
            p: 40,
            ..ScenarioSpec::standard(1, 2.0, 1, 9)
        };
        let truth = spec.truth().unwrap();
        assert!(truth.support().iter().all(|v| v.is_main() && v.members()[0] <= 10));
        assert_eq!(truth.interactions().len(), 0);
    }

    #[test]
    fn interaction_coefficient_is_rms_of_mains() {
        assert!((ScenarioSpec::interaction_coefficient() - (14.8125f64 / 10.0).sqrt()).abs() < 1e-15);
        assert_eq!(
            ScenarioSpec::standard(5, 2.0, 1, 0).interactions().len(),
            6
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = ScenarioSpec {
            p: 50,
            ..ScenarioSpec::standard(2, 2.0, 2, 5)
        };
        let a = gen_scenario(&spec, 1).unwrap();
        let b = gen_scenario(&spec, 1).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.y, b.y);
        let c = gen_scenario(&spec, 0).unwrap();
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn small_comparison_has_clean_oracle() {
        let spec = ScenarioSpec {
            n: 80,
            p: 30,
            ..ScenarioSpec::standard(3, 3.0, 2, 1)
        };
        let cfg = ComparisonConfig {
            folds: 5,
            repeats: 1,
            test_rows: 2000,
            engine: EngineConfig {
                grid_len: 30,
                ..EngineConfig::default()
            },
            ..ComparisonConfig::default()
        };
        let cmp = run_comparison(&spec, &Method::ALL, &cfg).unwrap();
        let oracle = cmp.row(Method::Oracle).unwrap();
        assert_eq!(oracle.fp_inter, 0.0);
        let main = cmp.row(Method::Main).unwrap();
        assert_eq!(main.fp_inter, 0.0);
        assert_eq!(main.fn_inter, 3.0);
        for r in &cmp.rows {
            assert_eq!(r.replications, 2);
            assert!(r.l2sq.is_finite() && r.l2sq >= 0.0);
        }
        let again = run_comparison(&spec, &Method::ALL, &cfg).unwrap();
        assert_eq!(cmp, again);
        let mut buf = Vec::new();
        write_table_csv(&cmp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,snr,statistic,main,iterate,backtracking,oracle\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
