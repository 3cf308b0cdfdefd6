use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use backtrack::cv::{self, CvConfig, FittedModel, Refit};
use backtrack::engine::{self, EngineConfig, RestartStrategy, SCHEMA_VERSION};
use backtrack::io::{ingest_csv, ingest_csv_labels};
use backtrack::multinomial::{self, IndicatorResponse, MultinomialConfig, MultinomialModel};
use backtrack::simulation::{self, ComparisonConfig, Method, ScenarioSpec};
use backtrack::theory::{self, TheorySpec};
use backtrack::SolverConfig;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::FileConfig;
use crate::{CvArgs, CvFlags, DataArgs, EngineArgs, ExportArgs, ExportFormat, FitArgs, RefitArg, RestartArg};
use crate::{SimulateArgs, TheoryArgs};

fn engine_config(a: &EngineArgs, file: &FileConfig) -> EngineConfig {
    let mut c = file.engine.clone().unwrap_or_default();
    if let Some(v) = a.max_order {
        c.max_order = v;
    }
    if let Some(v) = a.grid_len {
        c.grid_len = v;
    }
    if let Some(v) = a.grid_ratio {
        c.grid_ratio = v;
    }
    if let Some(v) = a.max_active {
        c.max_active = v;
    }
    if let Some(v) = a.max_candidates {
        c.max_candidates = Some(v);
    }
    if let Some(v) = a.restart {
        c.restart = match v {
            RestartArg::Naive => RestartStrategy::Naive,
            RestartArg::Linear => RestartStrategy::Linear,
            RestartArg::Bisection => RestartStrategy::Bisection,
        };
    }
    if let Some(v) = a.standardize {
        c.standardize = v;
    }
    c
}

fn refit(a: RefitArg) -> Refit {
    match a {
        RefitArg::OlsHybrid => Refit::OlsHybrid,
        RefitArg::Lasso => Refit::Lasso,
    }
}

fn cv_config(a: &CvFlags, file: &FileConfig, seed: u64) -> CvConfig {
    let d = CvConfig::default();
    CvConfig {
        folds: a.folds.or(file.cv.folds).unwrap_or(d.folds),
        repeats: a.repeats.or(file.cv.repeats).unwrap_or(d.repeats),
        refit: a.refit.map(refit).or(file.cv.refit).unwrap_or(d.refit),
        seed,
    }
}

fn require_seed(flag: Option<u64>, file: &FileConfig, command: &str) -> Result<u64> {
    match flag.or(file.seed) {
        Some(s) => Ok(s),
        None => bail!("{command} is stochastic: pass --seed or set \"seed\" in the config file"),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Serializes `value` and adds the input's column names.
fn with_columns(value: impl Serialize, names: &[String]) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(m) = &mut v {
        m.insert("column_names".into(), json!(names));
    }
    Ok(v)
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))
}

fn write_csv_with(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> backtrack::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_labels(data: &DataArgs, column: &str) -> Result<(backtrack::RawDesign, IndicatorResponse, Vec<String>, Vec<String>)> {
    let (raw, labels, names) =
        ingest_csv_labels(&data.input, column).with_context(|| format!("reading {}", data.input.display()))?;
    let y = IndicatorResponse::new(labels.indices.clone(), labels.classes())?;
    Ok((raw, y, labels.names, names))
}

pub fn fit(a: &FitArgs, file: &FileConfig) -> Result<()> {
    let cfg = engine_config(&a.engine, file);
    let refit = a.refit.map(refit).unwrap_or(Refit::Lasso);
    let out = &a.data.out;
    if let Some(resp) = &a.data.target.response {
        let (raw, y, names) = ingest_csv(&a.data.input, resp).with_context(|| format!("reading {}", a.data.input.display()))?;
        let tree = engine::run(&raw, &y, &cfg)?;
        let k = a.rank.unwrap_or(tree.len());
        let l = a
            .index
            .unwrap_or_else(|| tree.path(k.clamp(1, tree.len())).last_index().unwrap_or(0));
        let model = FittedModel::from_tree(&tree, &y, l, k, refit);
        out_dir(out)?;
        write_json(&out.join("tree.json"), &with_columns(tree.to_json(), &names)?)?;
        write_csv_with(&out.join("paths.csv"), |w| tree.write_csv(w))?;
        write_json(&out.join("model.json"), &with_columns(&model, &names)?)?;
    } else if let Some(col) = &a.data.target.labels {
        let (raw, y, classes, names) = read_labels(&a.data, col)?;
        let solver = file.multinomial.unwrap_or_default();
        let tree = multinomial::run_multinomial_backtracking(&raw, &y, &cfg, &solver, None)?;
        let k = a.rank.unwrap_or(tree.len());
        let l = a
            .index
            .unwrap_or_else(|| tree.path(k.clamp(1, tree.len())).last_index().unwrap_or(0));
        let model = MultinomialModel::from_tree(&tree, &y, classes, l, k, refit, &solver)?;
        out_dir(out)?;
        write_json(&out.join("tree.json"), &with_columns(tree.to_json(), &names)?)?;
        write_csv_with(&out.join("paths.csv"), |w| tree.write_csv(w))?;
        write_json(&out.join("model.json"), &with_columns(&model, &names)?)?;
    }
    Ok(())
}

pub fn cv(a: &CvArgs, file: &FileConfig) -> Result<()> {
    let cfg = engine_config(&a.engine, file);
    let seed = require_seed(a.seed, file, "cv")?;
    let cvc = cv_config(&a.cv, file, seed);
    let out = &a.data.out;
    if let Some(resp) = &a.data.target.response {
        let (raw, y, names) = ingest_csv(&a.data.input, resp).with_context(|| format!("reading {}", a.data.input.display()))?;
        let (model, scores, tree) = cv::cv_fit(&raw, &y, &cfg, &cvc)?;
        out_dir(out)?;
        write_json(&out.join("tree.json"), &with_columns(tree.to_json(), &names)?)?;
        write_csv_with(&out.join("paths.csv"), |w| tree.write_csv(w))?;
        write_json(&out.join("model.json"), &with_columns(&model, &names)?)?;
        write_csv_with(&out.join("cv.csv"), |w| scores.write_csv(w))?;
        write_json(&out.join("cv_summary.json"), &scores.summary_json())?;
    } else if let Some(col) = &a.data.target.labels {
        let (raw, y, classes, names) = read_labels(&a.data, col)?;
        let solver: MultinomialConfig = file.multinomial.unwrap_or_default();
        let (model, scores, tree) = multinomial::cv_fit(&raw, &y, classes, &cfg, &solver, &cvc)?;
        out_dir(out)?;
        write_json(&out.join("tree.json"), &with_columns(tree.to_json(), &names)?)?;
        write_csv_with(&out.join("paths.csv"), |w| tree.write_csv(w))?;
        write_json(&out.join("model.json"), &with_columns(&model, &names)?)?;
        write_csv_with(&out.join("cv.csv"), |w| scores.write_csv(w))?;
        write_json(&out.join("cv_summary.json"), &scores.summary_json())?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, file: &FileConfig) -> Result<()> {
    let s = &file.simulation;
    let seed = require_seed(a.seed, file, "simulate")?;
    let scenario = a.scenario.or(s.scenario).unwrap_or(1);
    let mut spec = ScenarioSpec::standard(
        scenario,
        a.snr.or(s.snr).unwrap_or(3.0),
        a.replications.or(s.replications).unwrap_or(20),
        seed,
    );
    if let Some(n) = a.n.or(s.n) {
        spec.n = n;
    }
    if let Some(p) = a.p.or(s.p) {
        spec.p = p;
    }
    let methods: Vec<Method> = match &a.methods {
        Some(names) => names.iter().map(|m| m.trim().parse()).collect::<backtrack::Result<_>>()?,
        None => s.methods.clone().unwrap_or_else(|| Method::ALL.to_vec()),
    };
    if methods.is_empty() {
        bail!("no methods selected");
    }
    let d = ComparisonConfig::default();
    let cfg = ComparisonConfig {
        engine: engine_config(&a.engine, file),
        folds: a.cv.folds.or(file.cv.folds).unwrap_or(d.folds),
        repeats: a.cv.repeats.or(file.cv.repeats).unwrap_or(d.repeats),
        refit: a.cv.refit.map(refit).or(file.cv.refit).unwrap_or(d.refit),
        test_rows: a.test_rows.or(s.test_rows).unwrap_or(d.test_rows),
        ..d
    };
    let cmp = simulation::run_comparison(&spec, &methods, &cfg)?;
    out_dir(&a.out)?;
    write_csv_with(&a.out.join("table.csv"), |w| simulation::write_table_csv(&cmp, w))?;
    let mut log = create(&a.out.join("replications.jsonl"))?;
    for r in &cmp.replications {
        serde_json::to_writer(&mut log, r)?;
        writeln!(log)?;
    }
    log.flush()?;
    write_json(
        &a.out.join("metadata.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "spec": cmp.spec,
            "methods": methods,
            "test_rows": cmp.test_rows,
            "config": cfg,
            "rows": cmp.rows,
        }),
    )?;
    Ok(())
}

pub fn verify_theory(a: &TheoryArgs, file: &FileConfig) -> Result<()> {
    let t = &file.theory;
    let seed = require_seed(a.seed, file, "verify-theory")?;
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TheorySpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TheorySpec::reference(),
    };
    if let Some(d) = a.draws.or(t.draws) {
        spec.draws = d;
    }
    if let Some(tv) = a.t.or(t.t) {
        spec.t = tv;
    }
    spec.validate()?;
    let trials = a.lemma_trials.or(t.lemma_trials).unwrap_or(100);
    let margin = a.lemma_margin.or(t.lemma_margin).unwrap_or(1.25);
    if !(margin > 1.0) {
        bail!("lemma margin must exceed 1, got {margin}");
    }
    let solver = file.engine.as_ref().map_or_else(SolverConfig::default, |e| e.solver);
    let lemma = theory::verify_lemma1_batch(seed, trials, margin, &solver)?;
    let theorem = theory::verify_theorem1(&spec, seed)?;
    let floor = |bound: f64| bound - 3.0 * (bound * (1.0 - bound) / theorem.draws as f64).sqrt();
    out_dir(&a.out)?;
    write_json(
        &a.out.join("theory_report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "seed": seed,
            "summary": {
                "lemma_passed": lemma.passed,
                "lemma_trials": lemma.trials,
                "entry_order_holds": theorem.entry_order.holds,
                "corollary_conditions_hold": theorem.corollary.holds,
                "sandwich_rate": theorem.sandwich_rate,
                "sandwich_bound": theorem.sandwich_bound,
                "sandwich_floor": floor(theorem.sandwich_bound),
                "recovery_rate": theorem.recovery_rate,
                "recovery_bound": theorem.recovery_bound,
                "recovery_floor": floor(theorem.sandwich_bound),
            },
            "lemma": lemma,
            "theorem": theorem,
        }),
    )?;
    Ok(())
}

fn variable_name(v: &Value) -> String {
    match v.as_array() {
        Some(members) => {
            let parts: Vec<String> = members.iter().map(|m| m.to_string()).collect();
            format!("[{}]", parts.join(","))
        }
        None => v.to_string(),
    }
}

pub fn export_paths(a: &ExportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.tree).with_context(|| format!("reading {}", a.tree.display()))?;
    let tree: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.tree.display()))?;
    let bad = || anyhow::anyhow!("{} is not a tree.json", a.tree.display());
    let candidates: Vec<String> = tree["candidates"].as_array().ok_or_else(bad)?.iter().map(variable_name).collect();
    let paths = tree["paths"].as_array().ok_or_else(bad)?;
    let classes = paths
        .iter()
        .flat_map(|p| p["points"].as_array().into_iter().flatten())
        .flat_map(|pt| pt["coefficients"].as_array().into_iter().flatten())
        .find_map(|c| c["value"].as_array().map(Vec::len));

    let mut w = csv::Writer::from_writer(create(&a.out)?);
    let format = a.format.unwrap_or(ExportFormat::Wide);
    let mut header = vec!["rank".to_string(), "l".into(), "lambda".into()];
    match format {
        ExportFormat::Long => {
            header.push("variable".into());
            if classes.is_some() {
                header.push("class".into());
            }
            header.push("coefficient".into());
        }
        ExportFormat::Wide => {
            if classes.is_some() {
                header.push("class".into());
            }
            header.extend(candidates.iter().cloned());
        }
    }
    w.write_record(&header)?;
    for p in paths {
        let rank = p["rank"].to_string();
        for pt in p["points"].as_array().ok_or_else(bad)? {
            let lead = [rank.clone(), pt["l"].to_string(), format!("{:e}", pt["lambda"].as_f64().ok_or_else(bad)?)];
            let coefs = pt["coefficients"].as_array().ok_or_else(bad)?;
            let values = |c: &Value| -> Result<Vec<f64>> {
                match &c["value"] {
                    Value::Array(vs) => vs.iter().map(|x| x.as_f64().ok_or_else(bad)).collect(),
                    x => Ok(vec![x.as_f64().ok_or_else(bad)?]),
                }
            };
            match format {
                ExportFormat::Long => {
                    for c in coefs {
                        let name = variable_name(&c["variable"]);
                        for (class, b) in values(c)?.into_iter().enumerate() {
                            let mut rec = lead.to_vec();
                            rec.push(name.clone());
                            if classes.is_some() {
                                rec.push(class.to_string());
                            }
                            rec.push(format!("{b:e}"));
                            w.write_record(&rec)?;
                        }
                    }
                }
                ExportFormat::Wide => {
                    let rows = classes.unwrap_or(1);
                    let mut dense = vec![vec![0.0; candidates.len()]; rows];
                    for c in coefs {
                        let name = variable_name(&c["variable"]);
                        let j = candidates.iter().position(|x| *x == name).ok_or_else(bad)?;
                        for (class, b) in values(c)?.into_iter().enumerate() {
                            dense[class][j] = b;
                        }
                    }
                    for (class, row) in dense.iter().enumerate() {
                        let mut rec = lead.to_vec();
                        if classes.is_some() {
                            rec.push(class.to_string());
                        }
                        rec.extend(row.iter().map(|b| format!("{b:e}")));
                        w.write_record(&rec)?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
