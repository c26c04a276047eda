use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use claimattn::data::{generate_dataset, sha256_hex, split, SplitFractions};
use claimattn::metrics::{profit_report, EvalReport};
use claimattn::models::{MANIFEST_FILE as MODEL_MANIFEST, WEIGHTS_FILE};
use claimattn::training::{evaluate as eval_model, fit, random_search, SearchSpace, TrainHistory};
use claimattn::{Claim, Dataset, GeneratorSpec, Model, ModelConfig, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    CompareArgs, Common, EvaluateArgs, GenerateArgs, InspectArgs, ReplayArgs, SplitPart, TrainArgs,
};
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecorder};
use crate::plot::{convergence_svg, Series};
use crate::{run, Command, Outcome};

type Output = (RunRecorder, Value, String);

fn load_dataset(rec: &mut RunRecorder, path: &Path) -> Result<Dataset> {
    let bytes = rec.read_input(path)?;
    let ds = Dataset::read_jsonl(&bytes[..]).map_err(|e| CliError::at(path, e))?;
    if ds.is_empty() {
        return Err(CliError::at(path, "data set is empty"));
    }
    rec.datasets.insert("claims".into(), ds.checksum());
    Ok(ds)
}

fn load_model_config(rec: &mut RunRecorder, path: &Path) -> Result<ModelConfig> {
    let text = rec.read_input_text(path)?;
    ModelConfig::from_json(&text).map_err(|e| CliError::at(path, e))
}

/// Training config with `--seed`, `--k` and `--threshold` applied.
fn load_train_config(rec: &mut RunRecorder, path: &Path, common: &Common) -> Result<TrainConfig> {
    let text = rec.read_input_text(path)?;
    let mut cfg = TrainConfig::from_json(&text).map_err(|e| CliError::at(path, e))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.k {
        cfg.clerk_cost = k;
    }
    if let Some(t) = common.threshold {
        cfg.threshold = t;
    }
    cfg.validate().map_err(|e| CliError::at(path, e))?;
    Ok(cfg)
}

fn load_model(rec: &mut RunRecorder, dir: &Path) -> Result<Model> {
    let manifest = rec.read_input_text(&dir.join(MODEL_MANIFEST))?;
    let blob = rec.read_input(&dir.join(WEIGHTS_FILE))?;
    Model::from_parts(&manifest, &blob).map_err(|e| CliError::at(dir, e))
}

fn clerk_cost_and_threshold(common: &Common) -> Result<(f64, f64)> {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        clerk_cost: common.k.unwrap_or(defaults.clerk_cost),
        threshold: common.threshold.unwrap_or(defaults.threshold),
        ..defaults
    };
    cfg.validate()?;
    Ok((cfg.clerk_cost, cfg.threshold))
}

fn record_splits(rec: &mut RunRecorder, prefix: &str, parts: [&Dataset; 3]) -> String {
    let sums: Vec<String> = parts.iter().map(|d| d.checksum()).collect();
    for (name, sum) in ["train", "val", "test"].iter().zip(&sums) {
        rec.datasets.insert(format!("{prefix}{name}"), sum.clone());
    }
    sha256_hex(sums.join(":").as_bytes())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn generate(a: &GenerateArgs) -> Result<Output> {
    let mut rec = RunRecorder::new(&a.common.out)?;
    let text = rec.read_input_text(&a.spec)?;
    let mut spec = GeneratorSpec::from_json(&text).map_err(|e| CliError::at(&a.spec, e))?;
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    let ds = generate_dataset(&spec)?;
    rec.config("spec", &spec);
    rec.seeds.insert("generator".into(), spec.seed);
    rec.datasets.insert("claims".into(), ds.checksum());
    rec.write("claims.jsonl", &ds.to_jsonl())?;
    let metrics = json!({
        "n_claims": ds.len(),
        "positives": ds.positives(),
    });
    let report = format!("wrote {} claims ({} positive)\n", ds.len(), ds.positives());
    Ok((rec, metrics, report))
}

fn leaderboard_csv(trials: &[claimattn::training::Trial]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["rank", "config_hash", "val_loss", "d_model", "fc_width", "dropout", "weight_decay", "seed"])
        .map_err(csv_err)?;
    for (i, t) in trials.iter().enumerate() {
        let c = &t.config;
        w.write_record([
            i.to_string(),
            t.config_hash.clone(),
            t.val_loss.to_string(),
            c.d_model.to_string(),
            c.fc_width.to_string(),
            c.dropout.to_string(),
            c.weight_decay.to_string(),
            c.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

pub(crate) fn train(a: &TrainArgs) -> Result<Output> {
    let mut rec = RunRecorder::new(&a.common.out)?;
    let ds = load_dataset(&mut rec, &a.data)?;
    let mut mcfg = load_model_config(&mut rec, &a.model)?;
    let tcfg = load_train_config(&mut rec, &a.train_config, &a.common)?;
    if let Some(s) = a.common.seed {
        mcfg.seed = s;
    }
    let fractions = SplitFractions::default();
    let (tr, va, te) = split(&ds, fractions, tcfg.seed)?;
    record_splits(&mut rec, "", [&tr, &va, &te]);
    rec.config("split", &fractions);
    rec.config("train", &tcfg);
    rec.seeds.insert("split".into(), tcfg.seed);
    rec.seeds.insert("train".into(), tcfg.seed);

    let (model, history) = match a.search {
        Some(0) => return Err(CliError::Input("--search needs at least one trial".into())),
        Some(trials) => {
            let space = SearchSpace::default();
            rec.config("search_space", &space);
            rec.seeds.insert("search".into(), tcfg.seed);
            let res = random_search(mcfg.encoder, &space, mcfg.code_vocab, trials, &tr, &va, &tcfg, a.common.jobs)?;
            rec.write("leaderboard.csv", &leaderboard_csv(&res.leaderboard)?)?;
            let history = res.leaderboard[0].history.clone();
            (res.best, history)
        }
        None => {
            rec.seeds.insert("model".into(), mcfg.seed);
            fit(Model::build(mcfg.clone())?, &tr, &va, &tcfg)?
        }
    };
    rec.config("model", &model.config);
    model.save(&rec.out.join("model"))?;
    rec.record(&format!("model/{MODEL_MANIFEST}"))?;
    rec.record(&format!("model/{WEIGHTS_FILE}"))?;
    rec.write("history.csv", history.to_csv().as_bytes())?;
    let val = eval_model(&model, &va, tcfg.clerk_cost, tcfg.threshold)?;
    rec.write("val_report.json", &to_json(&val))?;

    let metrics = json!({
        "weights_sha256": model.weights_checksum(),
        "epochs_run": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "best_val_loss": model.meta.best_val_loss,
        "val": val,
    });
    let report = format!(
        "trained {} for {} epochs (best {:?}); validation auroc {} profit {}\n",
        model.config.display_name(),
        history.epochs.len(),
        history.best_epoch,
        fmt_opt(val.auroc),
        val.profit
    );
    Ok((rec, metrics, report))
}

pub(crate) fn evaluate(a: &EvaluateArgs) -> Result<Output> {
    let mut rec = RunRecorder::new(&a.common.out)?;
    let model = load_model(&mut rec, &a.model_dir)?;
    let ds = load_dataset(&mut rec, &a.data)?;
    let (k, threshold) = clerk_cost_and_threshold(&a.common)?;
    let part = match a.split {
        SplitPart::All => ds,
        part => {
            let seed = a
                .common
                .seed
                .ok_or_else(|| CliError::Input("--split other than `all` needs --seed".into()))?;
            let (tr, va, te) = split(&ds, SplitFractions::default(), seed)?;
            record_splits(&mut rec, "", [&tr, &va, &te]);
            rec.seeds.insert("split".into(), seed);
            match part {
                SplitPart::Train => tr,
                SplitPart::Val => va,
                _ => te,
            }
        }
    };
    rec.config("evaluate", &json!({ "split": a.split, "clerk_cost": k, "threshold": threshold }));
    rec.config("model", &model.config);
    let scores = model.predict_many(&part.claims)?;
    let report = profit_report(&scores, &part.labels(), &part.corrections(), k, threshold)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["id", "label", "score"]).map_err(csv_err)?;
    for (c, s) in part.claims.iter().zip(&scores) {
        w.write_record([c.id.clone(), c.label.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    rec.write("scores.csv", &w.into_inner().map_err(|e| CliError::Input(e.to_string()))?)?;
    rec.write("report.json", &to_json(&report))?;
    let text = format!(
        "{} claims: auroc {} aupr {} profit {}\n",
        part.len(),
        fmt_opt(report.auroc),
        fmt_opt(report.aupr),
        report.profit
    );
    Ok((rec, serde_json::to_value(&report).expect("serializable"), text))
}

/// One (seed, model) cell of a comparison.
#[derive(Debug, Clone, Serialize)]
struct RunResult {
    model: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<EvalReport>,
    #[serde(skip)]
    history: TrainHistory,
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
    weights_sha256: Option<String>,
    split_checksum: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip)]
    exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    model: String,
    auroc: Option<f64>,
    aupr: Option<f64>,
    profit: Option<f64>,
    runs: usize,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(names: &[String], runs: &[RunResult]) -> Vec<SummaryRow> {
    names
        .iter()
        .map(|name| {
            let ok: Vec<&EvalReport> = runs
                .iter()
                .filter(|r| &r.model == name)
                .filter_map(|r| r.test.as_ref())
                .collect();
            SummaryRow {
                model: name.clone(),
                auroc: mean(ok.iter().map(|r| r.auroc)),
                aupr: mean(ok.iter().map(|r| r.aupr)),
                profit: mean(ok.iter().map(|r| Some(r.profit))),
                runs: ok.len(),
            }
        })
        .collect()
}

fn render_summary(rows: &[SummaryRow], runs: &[RunResult]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut s = format!("{:<width$}  {:>7}  {:>7}  {:>7}  runs\n", "model", "auroc", "aupr", "profit");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {}",
            r.model,
            cell(r.auroc),
            cell(r.aupr),
            cell(r.profit),
            r.runs
        );
    }
    for r in runs.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(s, "failed: {} seed {}: {}", r.model, r.seed, r.error.as_deref().unwrap_or(""));
    }
    s
}

fn comparison_csv(runs: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record([
        "model",
        "auroc",
        "aupr",
        "profit",
        "benefit",
        "cost",
        "potential",
        "seed",
        "epochs_run",
        "best_epoch",
        "best_val_loss",
        "weights_sha256",
        "split_checksum",
        "status",
    ])
    .map_err(csv_err)?;
    for r in runs {
        let t = r.test.as_ref();
        w.write_record([
            r.model.clone(),
            fmt_opt(t.and_then(|t| t.auroc)),
            fmt_opt(t.and_then(|t| t.aupr)),
            fmt_opt(t.map(|t| t.profit)),
            fmt_opt(t.map(|t| t.benefit)),
            fmt_opt(t.map(|t| t.cost)),
            fmt_opt(t.map(|t| t.potential)),
            r.seed.to_string(),
            r.epochs_run.to_string(),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            fmt_opt(r.best_val_loss),
            r.weights_sha256.clone().unwrap_or_default(),
            r.split_checksum.clone(),
            r.error.clone().map(|e| format!("failed: {e}")).unwrap_or_else(|| "ok".into()),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["model", "auroc", "aupr", "profit", "runs"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.model.clone(), fmt_opt(r.auroc), fmt_opt(r.aupr), fmt_opt(r.profit), r.runs.to_string()])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

fn convergence_csv(runs: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["model", "seed", "epoch", "train_loss", "val_loss", "val_profit"]).map_err(csv_err)?;
    for r in runs {
        for e in &r.history.epochs {
            w.write_record([
                r.model.clone(),
                r.seed.to_string(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                fmt_opt(e.val_profit),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

pub(crate) fn compare(a: &CompareArgs) -> Result<Output> {
    let mut rec = RunRecorder::new(&a.common.out)?;
    let ds = load_dataset(&mut rec, &a.data)?;
    let tcfg = load_train_config(&mut rec, &a.train_config, &a.common)?;
    let mut models = Vec::new();
    for path in &a.models {
        models.push(load_model_config(&mut rec, path)?);
    }
    if models.len() < 2 {
        return Err(CliError::Input("compare needs at least two model configs".into()));
    }
    let names: Vec<String> = models.iter().map(ModelConfig::display_name).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(CliError::Input(format!("model names must be unique, got {names:?}")));
    }
    let seeds = if a.seeds.is_empty() { vec![tcfg.seed] } else { a.seeds.clone() };
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(CliError::Input(format!("seeds must be distinct, got {seeds:?}")));
    }
    rec.config("train", &tcfg);
    rec.config("models", &models);
    rec.config("split", &SplitFractions::default());

    let mut splits = Vec::new();
    for &s in &seeds {
        let (tr, va, te) = split(&ds, SplitFractions::default(), s)?;
        let checksum = record_splits(&mut rec, &format!("seed{s}."), [&tr, &va, &te]);
        rec.seeds.insert(format!("run{}", splits.len()), s);
        splits.push((tr, va, te, checksum));
    }

    let cells: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|si| (0..models.len()).map(move |mi| (si, mi)))
        .collect();
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..a.common.jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("lock");
                    *n += 1;
                    *n - 1
                };
                let Some(&(si, mi)) = cells.get(i) else { break };
                let seed = seeds[si];
                let (tr, va, te, checksum) = &splits[si];
                let started = Instant::now();
                let mut cfg = models[mi].clone();
                cfg.seed = seed;
                let tc = TrainConfig { seed, ..tcfg.clone() };
                let outcome = Model::build(cfg)
                    .map_err(CliError::from)
                    .and_then(|m| fit(m, tr, va, &tc).map_err(CliError::from))
                    .and_then(|(m, h)| {
                        let report = eval_model(&m, te, tc.clerk_cost, tc.threshold)?;
                        Ok((m, h, report))
                    });
                let mut r = RunResult {
                    model: names[mi].clone(),
                    seed,
                    test: None,
                    history: TrainHistory::default(),
                    epochs_run: 0,
                    best_epoch: None,
                    best_val_loss: None,
                    weights_sha256: None,
                    split_checksum: checksum.clone(),
                    error: None,
                    exit_code: 0,
                };
                match outcome {
                    Ok((m, h, report)) => {
                        eprintln!(
                            "{} seed {seed}: auroc {} profit {:.4} ({} epochs, {:.1}s)",
                            r.model,
                            fmt_opt(report.auroc),
                            report.profit,
                            h.epochs.len(),
                            started.elapsed().as_secs_f64()
                        );
                        r.epochs_run = h.epochs.len();
                        r.best_epoch = h.best_epoch;
                        r.best_val_loss = m.meta.best_val_loss;
                        r.weights_sha256 = Some(m.weights_checksum());
                        r.test = Some(report);
                        r.history = h;
                    }
                    Err(e) => {
                        eprintln!("{} seed {seed}: failed: {e}", r.model);
                        r.exit_code = e.exit_code();
                        r.error = Some(e.to_string());
                    }
                }
                results.lock().expect("lock")[i] = Some(r);
            });
        }
    });
    let runs: Vec<RunResult> = results
        .into_inner()
        .expect("lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    if let Some(first) = runs.first().filter(|_| runs.iter().all(|r| r.error.is_some())) {
        let msg = format!("every variant failed; first: {}", first.error.as_deref().unwrap_or(""));
        return Err(if first.exit_code == 3 { CliError::Numerical(msg) } else { CliError::Input(msg) });
    }

    let summary = summarize(&names, &runs);
    let text = render_summary(&summary, &runs);
    rec.write("comparison.csv", &comparison_csv(&runs)?)?;
    rec.write("summary.csv", &summary_csv(&summary)?)?;
    rec.write("comparison.txt", text.as_bytes())?;
    rec.write("convergence.csv", &convergence_csv(&runs)?)?;
    let series: Vec<Series> = runs
        .iter()
        .filter(|r| !r.history.epochs.is_empty())
        .map(|r| Series {
            label: format!("{} seed {}", r.model, r.seed),
            group: names.iter().position(|n| n == &r.model).unwrap_or(0),
            values: r.history.epochs.iter().map(|e| e.val_loss).collect(),
            marker: r.best_epoch,
        })
        .collect();
    rec.write("convergence.svg", convergence_svg("validation loss", &series).as_bytes())?;
    let metrics = json!({ "summary": summary, "runs": runs });
    Ok((rec, metrics, text))
}

#[derive(Debug, Serialize)]
struct RowView {
    index: usize,
    code_id: u32,
    factor_id: u8,
    amount: f64,
    pool_weight: Option<f64>,
}

#[derive(Debug, Serialize)]
struct InspectView {
    model: String,
    probability: f64,
    threshold: f64,
    flagged: bool,
    rows: Vec<RowView>,
    self_attention: Option<Vec<Vec<f64>>>,
    note: Option<String>,
}

pub(crate) fn inspect(a: &InspectArgs) -> Result<Output> {
    let mut rec = RunRecorder::new(&a.common.out)?;
    let model = load_model(&mut rec, &a.model_dir)?;
    let text = rec.read_input_text(&a.claim)?;
    let claim = Claim::from_json(text.trim()).map_err(|e| CliError::at(&a.claim, e))?;
    let (_, threshold) = clerk_cost_and_threshold(&a.common)?;
    let report = model.extract_attention(&claim)?;
    rec.config("model", &model.config);

    let rows: Vec<RowView> = claim
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| RowView {
            index: i,
            code_id: r.code_id,
            factor_id: r.factor_id,
            amount: r.amount,
            pool_weight: report.pool_weights.as_ref().map(|w| w[i]),
        })
        .collect();
    let matrix = report
        .self_attention
        .as_ref()
        .map(|a| (0..a.rows()).map(|i| a.row(i).to_vec()).collect::<Vec<_>>());
    let encoder = model.encoder();
    let note = match (&matrix, &report.pool_weights) {
        (Some(_), _) => None,
        (None, Some(_)) => Some(format!("{encoder} has no self-attention; showing pooling weights only")),
        (None, None) => Some(format!("{encoder} has no per-row weights")),
    };
    let view = InspectView {
        model: model.config.display_name(),
        probability: report.probability,
        threshold,
        flagged: report.probability > threshold,
        rows,
        self_attention: matrix,
        note,
    };

    let mut out = format!(
        "model {} ({encoder})\nprobability {}{}\n\nrow  code  factor  amount  pool_weight\n",
        view.model,
        view.probability,
        if view.flagged { " (flagged)" } else { "" }
    );
    for r in &view.rows {
        let w = r.pool_weight.map(|w| w.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{}  {}  {}  {}  {}", r.index, r.code_id, r.factor_id, r.amount, w);
    }
    if let Some(m) = &view.self_attention {
        let labels: Vec<String> = claim.rows.iter().enumerate().map(|(i, r)| format!("r{i}:c{}", r.code_id)).collect();
        out.push_str("\nattention (row attends to column)\n");
        let _ = writeln!(out, "{}", std::iter::once(String::new()).chain(labels.iter().cloned()).collect::<Vec<_>>().join("\t"));
        for (label, row) in labels.iter().zip(m) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{label}\t{}", cells.join("\t"));
        }
    }
    if let Some(n) = &view.note {
        let _ = writeln!(out, "\nnote: {n}");
    }
    rec.write("attention.json", &to_json(&view))?;
    let metrics = serde_json::to_value(&view).expect("serializable");
    Ok((rec, metrics, out))
}

fn digest_mismatches(original: &RunManifest, rerun: &RunManifest) -> Vec<String> {
    let mut issues = Vec::new();
    for a in &original.artifacts {
        match rerun.artifacts.iter().find(|b| b.path == a.path) {
            None => issues.push(format!("{} was not produced", a.path.display())),
            Some(b) if b.sha256 != a.sha256 => issues.push(format!("{} differs", a.path.display())),
            _ => {}
        }
    }
    for b in &rerun.artifacts {
        if !original.artifacts.iter().any(|a| a.path == b.path) {
            issues.push(format!("{} is new", b.path.display()));
        }
    }
    if original.metrics != rerun.metrics {
        issues.push("metrics differ".into());
    }
    if original.datasets != rerun.datasets {
        issues.push("data set checksums differ".into());
    }
    issues
}

pub(crate) fn replay(a: &ReplayArgs) -> Result<Outcome> {
    let original = RunManifest::load(&a.manifest)?;
    if matches!(original.invocation, Command::Replay(_)) {
        return Err(CliError::Input("cannot replay a replay manifest".into()));
    }
    for input in &original.inputs {
        let bytes = std::fs::read(&input.path).map_err(|e| CliError::at(&input.path, e))?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(CliError::at(&input.path, "input changed since the recorded run"));
        }
    }
    let mut command = original.invocation.clone();
    if command.common().out == a.common.out {
        return Err(CliError::Input("replay needs an output directory different from the original".into()));
    }
    command.common_mut().out = a.common.out.clone();
    command.common_mut().jobs = 1;
    let outcome = run(command).map_err(|e| e.context("replayed run"))?;
    let issues = digest_mismatches(&original, &outcome.manifest);
    if !issues.is_empty() {
        return Err(CliError::Mismatch(issues.join("; ")));
    }
    let report = format!(
        "{}replayed {}: {} artifacts and all metrics identical\n",
        outcome.report,
        original.invocation.name(),
        original.artifacts.len()
    );
    Ok(Outcome {
        manifest: outcome.manifest,
        report,
    })
}
