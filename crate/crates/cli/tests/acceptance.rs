//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use claimattn::data::{generate_dataset, split, ClaimRow, SplitFractions};
use claimattn::layers::{
    bow_width, AttentionBlock, BowRows, Conv1d, Embedding, MlpHead, ParamStore, PiecewiseFeedForward,
    SigmoidPool,
};
use claimattn::metrics::{aupr, auroc, profit_report};
use claimattn::models::{EncoderKind, ModelError, RowBatch};
use claimattn::tensor::{grad_check, NodeId, Tape, Tensor};
use claimattn::training::fit;
use claimattn::{Claim, GeneratorSpec, Model, ModelConfig, TrainConfig};
use claimattn_cli::args::{
    CompareArgs, EvaluateArgs, GenerateArgs, InspectArgs, ReplayArgs, SplitPart, TrainArgs,
};
use claimattn_cli::{run, Command, Common, MANIFEST_FILE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn common(out: &Path, seed: Option<u64>, jobs: usize) -> Common {
    Common {
        out: out.to_path_buf(),
        seed,
        k: None,
        threshold: None,
        jobs,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn random_claim(r: &mut ChaCha8Rng, t: usize) -> Claim {
    let rows = (0..t)
        .map(|_| ClaimRow::new(r.random_range(0..70), r.random_range(0..6), r.random_range(1.0..900.0)).unwrap())
        .collect();
    Claim::new("c", rows, 0, 0.0).unwrap()
}

// ---------------------------------------------------------------- 1

const STATEMENT: &str = "The published figures for the self-attention model (AUROC 0.926, AUPR 0.267, \
Profit 0.736) were measured on a proprietary data set of about 2 million claims and are not \
reproducible here. This project checks property and ordering claims on synthetic data instead.";

fn criterion_1() -> Check {
    let readme = fs::read_to_string(workspace().join("README.md")).map_err(|e| e.to_string())?;
    let flat = readme.split_whitespace().collect::<Vec<_>>().join(" ");
    ensure(
        flat.contains(STATEMENT),
        format!("README states: \"{STATEMENT}\""),
    )
}

// ---------------------------------------------------------------- 2 and 8

struct BenchRun {
    model: String,
    seed: u64,
    auroc: f64,
    profit: f64,
    best_epoch: usize,
    best_val_loss: f64,
}

/// Three independent benchmark instances: seed `s` drives generation, the
/// split, initialization and batching.
fn benchmark(dir: &Path) -> Result<(Vec<BenchRun>, f64), String> {
    let cfg = workspace().join("configs/benchmark");
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get()).min(3);
    let started = Instant::now();
    let mut runs = Vec::new();
    for seed in [1, 2, 3] {
        let data_dir = dir.join(format!("data{seed}"));
        run(Command::Generate(GenerateArgs {
            spec: cfg.join("spec.json"),
            common: common(&data_dir, Some(seed), 1),
        }))
        .map_err(|e| e.to_string())?;
        let out = run(Command::Compare(CompareArgs {
            data: data_dir.join("claims.jsonl"),
            models: ["bow", "pff", "self_attention"].iter().map(|m| cfg.join(format!("{m}.json"))).collect(),
            train_config: cfg.join("train.json"),
            seeds: vec![seed],
            common: common(&dir.join(format!("compare{seed}")), None, jobs),
        }))
        .map_err(|e| e.to_string())?;
        for r in out.manifest.metrics["runs"].as_array().ok_or("no runs")? {
            let test = &r["test"];
            if test.is_null() {
                return Err(format!("{} seed {seed} failed: {}", r["model"], r["error"]));
            }
            runs.push(BenchRun {
                model: r["model"].as_str().unwrap().to_string(),
                seed,
                auroc: test["auroc"].as_f64().unwrap(),
                profit: test["profit"].as_f64().unwrap(),
                best_epoch: r["best_epoch"].as_u64().unwrap() as usize,
                best_val_loss: r["best_val_loss"].as_f64().unwrap(),
            });
        }
    }
    Ok((runs, started.elapsed().as_secs_f64()))
}

fn mean_of(runs: &[BenchRun], model: &str, f: impl Fn(&BenchRun) -> f64) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.model == model).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_2(runs: &[BenchRun], secs: f64) -> Check {
    let a = |m| mean_of(runs, m, |r| r.auroc);
    let p = |m| mean_of(runs, m, |r| r.profit);
    let (ab, ap, asa) = (a("BOW"), a("PFF"), a("SelfA"));
    let (pb, pp, psa) = (p("BOW"), p("PFF"), p("SelfA"));
    let ok = asa - ap >= 0.005 && ap - ab >= 0.01 && psa > pp && pp > pb && secs < 1800.0;
    ensure(
        ok,
        format!(
            "mean test AUROC BOW {ab:.4} PFF {ap:.4} SelfA {asa:.4}; mean Profit BOW {pb:.4} PFF {pp:.4} SelfA {psa:.4}; {secs:.0} s"
        ),
    )
}

fn criterion_8(runs: &[BenchRun]) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let get = |m: &str| runs.iter().find(|r| r.model == m && r.seed == seed).unwrap();
        let (b, s) = (get("BOW"), get("SelfA"));
        ok &= b.best_epoch < s.best_epoch && s.best_val_loss < b.best_val_loss;
        parts.push(format!(
            "seed {seed}: best epoch BOW {} SelfA {}, best val loss BOW {:.4} SelfA {:.4}",
            b.best_epoch, s.best_epoch, b.best_val_loss, s.best_val_loss
        ));
    }
    ensure(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 3

/// Mean of a fixed random weighting of `x`'s entries.
fn project(tape: &mut Tape<'_>, x: NodeId, seed: u64) -> claimattn::tensor::Result<NodeId> {
    let [r, c] = tape.value(x).shape();
    let w = tape.constant(random(&mut rng(seed), r, c));
    let m = tape.mul(x, w)?;
    let s = tape.sum(m)?;
    tape.scale(s, 1.0 / (r * c) as f64)
}

fn check<F>(store: &ParamStore, extra: Vec<Tensor>, f: F) -> f64
where
    F: for<'t> Fn(&mut Tape<'t>, &[NodeId]) -> claimattn::tensor::Result<NodeId>,
{
    let mut params: Vec<Tensor> = store.tensors().to_vec();
    params.extend(extra);
    grad_check(&params, 1e-4, f).unwrap()
}

fn layer_errors() -> Vec<(&'static str, f64)> {
    let (d, t) = (8, 3);
    let mut r = rng(200);
    let x = random(&mut r, 2 * t, d);
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let emb = Embedding::new(&mut s, &mut r, 12, d);
    out.push((
        "embedding",
        check(&s, vec![], |tp, p| {
            let y = emb.forward(tp, p, &[3, 5, 3, 11], &[0, 4, 4, 2], &[0.2, 0.9, 0.2, 0.5])?;
            project(tp, y, 1)
        }),
    ));

    let mut s = ParamStore::new();
    let pff = PiecewiseFeedForward::new(&mut s, &mut r, d);
    let n = s.len();
    out.push((
        "pff",
        check(&s, vec![x.clone()], |tp, p| {
            let y = pff.forward(tp, p, p[n])?;
            project(tp, y, 2)
        }),
    ));

    let mut s = ParamStore::new();
    let block = AttentionBlock::new(&mut s, &mut r, d);
    let n = s.len();
    out.push((
        "attention",
        check(&s, vec![x.clone()], |tp, p| {
            let y = block.forward(tp, p, p[n], t)?;
            project(tp, y.features, 3)
        }),
    ));

    let mut s = ParamStore::new();
    let conv = Conv1d::new(&mut s, &mut r, d, 3);
    let n = s.len();
    out.push((
        "conv",
        check(&s, vec![x.clone()], |tp, p| {
            let y = conv.forward(tp, p, p[n], t)?;
            project(tp, y, 4)
        }),
    ));

    let mut s = ParamStore::new();
    let pool = SigmoidPool::new(&mut s, &mut r, d);
    let n = s.len();
    out.push((
        "pool",
        check(&s, vec![x.clone()], |tp, p| {
            let y = pool.forward(tp, p, p[n], t)?;
            project(tp, y.pooled, 5)
        }),
    ));

    let mut s = ParamStore::new();
    let head = MlpHead::new(&mut s, &mut r, d, 5);
    let n = s.len();
    let h = random(&mut r, 2, d);
    out.push((
        "head",
        check(&s, vec![h], |tp, p| {
            let y = head.forward::<ChaCha8Rng>(tp, p, p[n], None)?;
            tp.weighted_bce(y, &[1.0, 0.0], &[2.0, 0.5])
        }),
    ));

    let mut s = ParamStore::new();
    let head = MlpHead::new(&mut s, &mut r, bow_width(10), 5);
    out.push((
        "bow head",
        check(&s, vec![], |tp, p| {
            let rows = BowRows {
                codes: &[1, 4, 4, 9],
                factors: &[0, 5, 2, 2],
                amounts: &[0.1, 0.7, 0.3, 0.9],
            };
            let pre = head.first_layer_bow(tp, p, 10, &rows, 2)?;
            let y = head.finish::<ChaCha8Rng>(tp, p, pre, None)?;
            tp.weighted_bce(y, &[0.0, 1.0], &[1.0, 3.0])
        }),
    ));
    out
}

fn full_model_error(t: usize) -> f64 {
    let mut c = ModelConfig::new(EncoderKind::SelfAttention, 8, 6);
    c.code_vocab = 20;
    c.seed = 31;
    let m = Model::build(c).unwrap();
    let mut r = rng(t as u64);
    let claims: Vec<_> = (0..2).map(|_| m.encode(&random_claim(&mut r, t)).unwrap()).collect();
    let batch = RowBatch::new(claims.iter()).unwrap();
    grad_check(m.params.tensors(), 1e-4, |tape, p| {
        let out = m.forward(tape, p, &batch, None).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        tape.weighted_bce(out.probs, &[1.0, 0.0], &[1.5, 0.5])
    })
    .unwrap()
}

fn criterion_3() -> Check {
    let started = Instant::now();
    let mut errors = layer_errors();
    for (name, t) in [("SelfA T=1", 1), ("SelfA T=3", 3), ("SelfA T=7", 7)] {
        errors.push((name, full_model_error(t)));
    }
    let secs = started.elapsed().as_secs_f64();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let list: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    ensure(
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} ({}); {secs:.1} s", list.join(", ")),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Check {
    let mut r = rng(11);
    let build = |enc| {
        let mut c = ModelConfig::new(enc, 8, 16);
        c.code_vocab = 60;
        c.seed = 5;
        Model::build(c).unwrap()
    };
    let mut worst: f64 = 0.0;
    for enc in [EncoderKind::Bow, EncoderKind::Pff, EncoderKind::SelfAttention] {
        let m = build(enc);
        for _ in 0..20 {
            let t = r.random_range(1..15);
            let claim = random_claim(&mut r, t);
            let base = m.predict(&claim).unwrap();
            for _ in 0..5 {
                let mut c = claim.clone();
                c.rows.shuffle(&mut r);
                worst = worst.max((m.predict(&c).unwrap() - base).abs());
            }
        }
    }
    let cnn = build(EncoderKind::Cnn);
    let mut witness: f64 = 0.0;
    for _ in 0..50 {
        let claim = random_claim(&mut r, 10);
        let mut c = claim.clone();
        c.rows.shuffle(&mut r);
        witness = witness.max((cnn.predict(&c).unwrap() - cnn.predict(&claim).unwrap()).abs());
        if witness > 1e-4 {
            break;
        }
    }
    ensure(
        worst <= 1e-9 && witness > 1e-4,
        format!("max |Δ| over 300 permutations for BOW/PFF/SelfA {worst:.1e}; CNN witness |Δ| {witness:.1e}"),
    )
}

// ---------------------------------------------------------------- 5

fn brute_force_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut half_units = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                half_units += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    half_units as f64 / 2.0 / (pos * neg) as f64
}

fn criterion_5() -> Check {
    let mut r = rng(5);
    let mut exact = 0;
    for _ in 0..200 {
        let n = r.random_range(2..60);
        let coarse = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(r.random_range(0..5u8)) / 4.0 } else { r.random::<f64>() })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
        labels[0] = 1;
        labels[1] = 0;
        if auroc(&scores, &labels).unwrap() == brute_force_auroc(&scores, &labels) {
            exact += 1;
        }
    }
    let aupr_ok = aupr(&[0.9, 0.1], &[1, 0]).unwrap() == 1.0
        && aupr(&[0.9, 0.1], &[0, 1]).unwrap() == 0.5
        && aupr(&[0.8, 0.7, 0.6, 0.3], &[1, 0, 1, 0]).unwrap() == (1.0 + 2.0 / 3.0) / 2.0;
    let rep = profit_report(&[0.9, 0.4, 0.6, 0.2], &[1, 1, 0, 0], &[100.0, 50.0, 0.0, 0.0], 10.0, 0.5).unwrap();
    let profit_ok = (rep.benefit, rep.cost, rep.potential) == (90.0, 10.0, 130.0)
        && format!("{:.12}", rep.profit) == format!("{:.12}", 80.0 / 130.0);
    ensure(
        exact == 200 && aupr_ok && profit_ok,
        format!(
            "sort AUROC == brute force on {exact}/200 instances; AUPR examples {}; profit {:.12} (80/130)",
            if aupr_ok { "exact" } else { "WRONG" },
            rep.profit
        ),
    )
}

// ---------------------------------------------------------------- 6

fn attention(store: &ParamStore, block: &AttentionBlock, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xn = tape.constant(x.clone());
    let out = block.forward(&mut tape, &p, xn, x.rows()).unwrap();
    (tape.value(out.features).clone(), tape.value(out.attention).clone())
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>())
}

fn criterion_6() -> Check {
    let started = Instant::now();
    let (mut row_err, mut equi_err): (f64, f64) = (0.0, 0.0);
    let mut single_ok = true;
    for seed in 0..40u64 {
        let mut r = rng(1000 + seed);
        let mut store = ParamStore::new();
        let d = [4, 6, 8][seed as usize % 3];
        let block = AttentionBlock::new(&mut store, &mut r, d);

        let (_, a1) = attention(&store, &block, &random(&mut r, 1, d));
        single_ok &= a1.shape() == [1, 1] && a1.data() == [1.0];

        let t = r.random_range(2..21);
        let x = random(&mut r, t, d);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut r);
        let (h, a) = attention(&store, &block, &x);
        let (ph, pa) = attention(&store, &block, &permute_rows(&x, &perm));
        for i in 0..t {
            row_err = row_err.max((a.row(i).iter().sum::<f64>() - 1.0).abs());
            for j in 0..t {
                equi_err = equi_err.max((pa.get(i, j) - a.get(perm[i], perm[j])).abs());
            }
        }
        equi_err = equi_err.max(ph.max_abs_diff(&permute_rows(&h, &perm)));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        row_err <= 1e-9 && equi_err <= 1e-9 && single_ok && secs < 10.0,
        format!(
            "row-sum error {row_err:.1e}; T=1 gives [[1.0]]: {single_ok}; equivariance error {equi_err:.1e}; {secs:.2} s"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let ds = generate_dataset(&GeneratorSpec::new(3000, 8)).unwrap();
    let (tr, va, te) = split(&ds, SplitFractions::default(), 8).unwrap();
    let scaled: Vec<f64> = te.corrections().iter().map(|c| c * 7.3).collect();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 2,
        seed: 8,
        ..Default::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for enc in [EncoderKind::Bow, EncoderKind::Cnn, EncoderKind::Pff, EncoderKind::SelfAttention] {
        let d = if enc == EncoderKind::Bow { 0 } else { 16 };
        let (m, _) = fit(Model::build(ModelConfig::new(enc, d, 32)).unwrap(), &tr, &va, &tc).unwrap();
        let scores = m.predict_many(&te.claims).unwrap();
        let base = profit_report(&scores, &te.labels(), &te.corrections(), 20.0, 0.5).unwrap().profit;
        let big = profit_report(&scores, &te.labels(), &scaled, 20.0 * 7.3, 0.5).unwrap().profit;
        let rel = ((big - base) / base).abs();
        ok &= rel <= 1e-12;
        parts.push(format!("{enc} {base:.6} vs {big:.6} (rel diff {rel:.1e})"));
    }
    ensure(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 9

fn criterion_9(dir: &Path) -> Check {
    let w = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let spec = w("spec.json", r#"{"format_version":1,"n_claims":1500,"seed":9}"#);
    let sa = w("sa.json", r#"{"encoder":"SELF_ATTENTION","d_model":8,"fc_width":16,"dropout":0.1}"#);
    let bow = w("bow.json", r#"{"encoder":"BOW","fc_width":16,"dropout":0.1}"#);
    let tc = w("train.json", r#"{"learning_rate":0.001,"max_epochs":3,"seed":9}"#);
    let claim = w(
        "claim.json",
        r#"{"format_version":1,"id":"q","rows":[[5,4,80.0],[17,1,12.5],[5,0,3.0]],"label":0,"correction":0.0}"#,
    );
    let data = dir.join("gen/claims.jsonl");
    let commands = vec![
        Command::Generate(GenerateArgs {
            spec,
            common: common(&dir.join("gen"), None, 1),
        }),
        Command::Train(TrainArgs {
            data: data.clone(),
            model: sa.clone(),
            train_config: tc.clone(),
            search: None,
            common: common(&dir.join("train"), None, 1),
        }),
        Command::Train(TrainArgs {
            data: data.clone(),
            model: sa.clone(),
            train_config: tc.clone(),
            search: Some(2),
            common: common(&dir.join("search"), None, 2),
        }),
        Command::Evaluate(EvaluateArgs {
            data: data.clone(),
            model_dir: dir.join("train/model"),
            split: SplitPart::Test,
            common: common(&dir.join("eval"), Some(9), 1),
        }),
        Command::Compare(CompareArgs {
            data,
            models: vec![bow, sa],
            train_config: tc,
            seeds: vec![1, 2],
            common: common(&dir.join("compare"), None, 2),
        }),
        Command::Inspect(InspectArgs {
            model_dir: dir.join("train/model"),
            claim,
            common: common(&dir.join("inspect"), None, 1),
        }),
    ];
    let mut done = Vec::new();
    for c in commands {
        let name = c.name();
        let out = c.common().out.clone();
        run(c).map_err(|e| format!("{name}: {e}"))?;
        let replayed = run(Command::Replay(ReplayArgs {
            manifest: out.join(MANIFEST_FILE),
            common: common(&out.with_extension("replay"), None, 1),
        }))
        .map_err(|e| format!("{name} replay: {e}"))?;
        done.push(format!("{name} ({} files)", replayed.manifest.artifacts.len()));
    }
    Ok(format!("replayed with --jobs 1, byte-identical outputs and metrics: {}", done.join(", ")))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let bench = benchmark(&dir.path().join("bench"));
    let replay_dir = dir.path().join("replay");
    fs::create_dir_all(&replay_dir).unwrap();

    let (c2, c8) = match &bench {
        Ok((runs, secs)) => (criterion_2(runs, *secs), criterion_8(runs)),
        Err(e) => (Err(format!("benchmark failed: {e}")), Err(format!("benchmark failed: {e}"))),
    };
    let results = [
        (1, criterion_1()),
        (2, c2),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, c8),
        (9, criterion_9(&replay_dir)),
    ];
    if let Ok((runs, _)) = &bench {
        for r in runs {
            println!(
                "  benchmark {} seed {}: auroc {:.4} profit {:.4} best epoch {} best val loss {:.4}",
                r.model, r.seed, r.auroc, r.profit, r.best_epoch, r.best_val_loss
            );
        }
    }
    let mut failed = 0;
    for (n, r) in &results {
        match r {
            Ok(d) => println!("criterion {n}: PASS  {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n}: FAIL  {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
