//! Acceptance run: one pass/fail line per criterion, non-zero exit if any fails.
//!
//! Criteria 5 to 8 share one desk-scale benchmark run, which dominates the
//! runtime (about 12 minutes on 8 cores).

use std::path::Path;
use std::time::{Duration, Instant};

use driftlab::drift_model::{
    cosine_embedding_loss, fit_additive, AdditiveLoss, DriftInstance, MlpConfig, MlpNet, ModelConfig, PredictorModel,
    TransDriftConfig, TransDriftNet,
};
use driftlab::embed::{EmbeddingMeta, EmbeddingSet, Vocabulary};
use driftlab::eval::{mean_cosine, nn_overlap, MetricsReport};
use driftlab::numeric::gradcheck::{check_gradients, GradReport};
use driftlab::numeric::{
    load_checkpoint, save_checkpoint, Attention, LayerNorm, Linear, ParamStore, Tape, Tensor, Var,
};
use driftlab::seed::{self, Rng};
use driftlab_cli::config::{RunConfig, Scale};
use driftlab_cli::pipeline::repro_synthetic;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random(rng: &mut Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_f32(rng: &mut Rng, r: usize, c: usize) -> Tensor<f32> {
    Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0f32..1.0))
}

fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

fn set(m: Tensor<f32>) -> EmbeddingSet {
    EmbeddingSet::new(
        Vocabulary::from_words(words(m.rows())).unwrap(),
        m,
        EmbeddingMeta::default(),
    )
    .unwrap()
}

fn contract(tape: &mut Tape<f64>, out: Var, s: u64) -> Var {
    let v = tape.value(out);
    let w = random(&mut seed::rng(s), v.rows(), v.cols());
    let w = tape.constant(w);
    let p = tape.mul(out, w);
    tape.mean(p)
}

fn jitter(store: &mut ParamStore<f64>, rng: &mut Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
}

fn criterion_1() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut worst = GradReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut cases = 0usize;
    let mut note = |name: &str, r: GradReport| {
        cases += 1;
        if r.max_rel_err >= worst.max_rel_err {
            worst = GradReport {
                worst: format!("{name}: {}", r.worst),
                ..r
            };
        }
    };
    let empty = ParamStore::<f64>::new();
    for s in 0..20u64 {
        let mut rng = seed::rng(seed::derive(s, "acceptance_grad", 0));
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(2..7));
        let a = random(&mut rng, r, c);
        let b = random(&mut rng, r, c);
        let row = random(&mut rng, 1, c);
        let k = rng.gen_range(1..5);
        let rhs = random(&mut rng, c, k);
        let targets: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
        let (start_col, width) = (1, c - 1);
        type Op<'a> = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a>;
        let ops: Vec<(&str, Vec<Tensor<f64>>, Op)> = vec![
            ("add", vec![a.clone(), b.clone()], Box::new(|t, v| t.add(v[0], v[1]))),
            ("mul", vec![a.clone(), b.clone()], Box::new(|t, v| t.mul(v[0], v[1]))),
            ("affine", vec![a.clone()], Box::new(|t, v| t.affine(v[0], 1.3, -0.2))),
            (
                "add_row",
                vec![a.clone(), row.clone()],
                Box::new(|t, v| t.add_row(v[0], v[1])),
            ),
            ("relu", vec![a.clone()], Box::new(|t, v| t.relu(v[0]))),
            (
                "matmul",
                vec![a.clone(), rhs.clone()],
                Box::new(|t, v| t.matmul(v[0], v[1])),
            ),
            (
                "matmul_nt",
                vec![a.clone(), b.clone()],
                Box::new(|t, v| t.matmul_t(v[0], false, v[1], true)),
            ),
            (
                "matmul_tn",
                vec![a.clone(), b.clone()],
                Box::new(|t, v| t.matmul_t(v[0], true, v[1], false)),
            ),
            ("softmax", vec![a.clone()], Box::new(|t, v| t.softmax(v[0]))),
            (
                "layer_norm",
                vec![a.clone(), row.clone(), row.map(|x| x * 0.5)],
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
            ),
            (
                "row_cosine",
                vec![a.clone(), b.clone()],
                Box::new(|t, v| t.row_cosine(v[0], v[1], 1e-8)),
            ),
            (
                "slice_cols",
                vec![a.clone()],
                Box::new(move |t, v| t.slice_cols(v[0], start_col, width)),
            ),
            (
                "concat_cols",
                vec![a.clone(), b.clone()],
                Box::new(|t, v| t.concat_cols(v)),
            ),
            ("mean", vec![a.clone()], Box::new(|t, v| t.mean(v[0]))),
        ];
        for (name, leaves, op) in &ops {
            note(
                name,
                check_gradients(leaves, &empty, H, |t, _, v| {
                    let o = op(t, v);
                    contract(t, o, s)
                }),
            );
        }
        note(
            "softmax_cross_entropy",
            check_gradients(std::slice::from_ref(&a), &empty, H, |t, _, v| {
                t.softmax_cross_entropy(v[0], &targets)
            }),
        );

        let heads = rng.gen_range(1..3);
        let dim = heads * rng.gen_range(1..4);
        let n_tok = rng.gen_range(1..5);
        let x = random(&mut rng, n_tok, dim);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "lin", dim, dim + 2, true, &mut rng);
        let ln = LayerNorm::new(&mut store, "ln", dim + 2);
        let attn = Attention::new(&mut store, "attn", dim, heads, &mut rng).unwrap();
        jitter(&mut store, &mut rng);
        note(
            "linear+layer_norm+attention",
            check_gradients(&[x], &store, H, |t, st, v| {
                let h = attn.forward(t, st, v[0]);
                let h = lin.forward(t, st, h);
                let o = ln.forward(t, st, h);
                contract(t, o, s)
            }),
        );

        let n = rng.gen_range(2..5);
        let inst = {
            let e1 = random_f32(&mut rng, n, 3);
            let target = random_f32(&mut rng, n, 3);
            let small = (s % 2 == 0).then(|| (random_f32(&mut rng, n, 3), (0..n).map(|i| i % 2 == 0).collect()));
            DriftInstance::new(words(n), e1, small, Some(target)).unwrap()
        };
        let target = inst.target.clone().unwrap().cast::<f64>();
        let loss = |t: &mut Tape<f64>, pred: Var| {
            let tgt = t.constant(target.clone());
            let cos = t.row_cosine(pred, tgt, 1e-8);
            let l = t.affine(cos, -1.0, 1.0);
            t.mean(l)
        };
        let cfg = TransDriftConfig {
            emb_dim: 3,
            model_dim: 4,
            n_heads: 2,
            n_layers: 2,
            ..TransDriftConfig::synthetic()
        };
        let mut store = ParamStore::<f64>::new();
        let td = TransDriftNet::new(&mut store, &cfg, &mut rng).unwrap();
        jitter(&mut store, &mut rng);
        note(
            "transdrift",
            check_gradients(&[], &store, H, |t, st, _| {
                let p = td.forward(t, st, &inst);
                loss(t, p)
            }),
        );
        let mlp_cfg = MlpConfig {
            emb_dim: 3,
            hidden: 5,
            ..MlpConfig::synthetic()
        };
        // Central differences are meaningless within a step of a ReLU kink,
        // so redraw until every hidden pre-activation is clear of zero.
        let (mlp, store) = loop {
            let mut store = ParamStore::<f64>::new();
            let mlp = MlpNet::new(&mut store, &mlp_cfg, &mut rng);
            jitter(&mut store, &mut rng);
            let mut t = Tape::new();
            let e1 = t.constant(inst.e1.cast());
            let pre = mlp.fc1.forward(&mut t, &store, e1);
            if t.value(pre).data().iter().all(|x| x.abs() > 1e-3) {
                break (mlp, store);
            }
        };
        note(
            "mlp",
            check_gradients(&[], &store, H, |t, st, _| {
                let p = mlp.forward(t, st, &inst);
                loss(t, p)
            }),
        );
    }
    let elapsed = start.elapsed();
    outcome(
        worst.max_rel_err < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{cases} checks over 20 seeds, max rel err {:.2e} ({}), {:.1}s",
            worst.max_rel_err,
            worst.worst,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(2);
    let model = PredictorModel::new(ModelConfig::TransDrift(TransDriftConfig::synthetic())).unwrap();
    let n = 100;
    let mask = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    let inst = DriftInstance::new(
        words(n),
        random_f32(&mut rng, n, 50),
        Some((random_f32(&mut rng, n, 50), mask)),
        None,
    )
    .unwrap();
    let base = model.predict(&inst).unwrap();
    let mut worst = 0.0f32;
    for _ in 0..50 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let out = model.predict(&inst.permuted(&perm)).unwrap();
        worst = worst.max(out.max_abs_diff(&base.gather_rows(&perm)));
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-5 && elapsed < Duration::from_secs(60),
        format!(
            "50 permutations of 100 rows, max abs diff {worst:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = seed::rng(3);
    let mut fails = Vec::new();
    let mut worst_loss = 0.0f64;
    for _ in 0..20 {
        let e = random_f32(&mut rng, 100, 50);
        let zero = cosine_embedding_loss(&e, &e).unwrap();
        let anti = cosine_embedding_loss(&e.map(|x| -x), &e).unwrap();
        worst_loss = worst_loss.max(zero.abs()).max((anti - 2.0).abs());
        let other = random_f32(&mut rng, 100, 50);
        let m = mean_cosine(&set(e.clone()), &set(other)).unwrap();
        if !(-1.0..=1.0).contains(&m) {
            fails.push(format!("mean_cosine {m}"));
        }
        let s = set(e);
        for w in s.words() {
            let o = nn_overlap(&s, &s, w, 30).unwrap();
            if o != 30 {
                fails.push(format!("overlap {o} for {w}"));
            }
        }
    }
    if worst_loss > 1e-6 {
        fails.push(format!("loss off by {worst_loss:.2e}"));
    }
    outcome(
        fails.is_empty(),
        if fails.is_empty() {
            format!("20 random sets: loss within {worst_loss:.1e}, cosine bounded, self overlap 30 for all words")
        } else {
            fails.join("; ")
        },
    )
}

/// Golden-section minimisation of a 1-D convex function on `[lo, hi]`.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-9 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_4() -> Outcome {
    let mut rng = seed::rng(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.gen_range(2..8);
        let instances: Vec<DriftInstance> = (0..10)
            .map(|_| {
                let n = rng.gen_range(3..12);
                let shift: Vec<f32> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let e1 = random_f32(&mut rng, n, d);
                let noise = random_f32(&mut rng, n, d);
                let e2 = Tensor::from_fn(n, d, |r, c| e1.get(r, c) + shift[c] + 0.3 * noise.get(r, c));
                DriftInstance::new(words(n), e1, None, Some(e2)).unwrap()
            })
            .collect();
        let delta = fit_additive(&instances, AdditiveLoss::Squared).unwrap();
        for (c, &dc) in delta.iter().enumerate() {
            let sq = |x: f64| {
                instances
                    .iter()
                    .map(|inst| {
                        let t = inst.target.as_ref().unwrap();
                        (0..inst.len())
                            .map(|r| (inst.e1.get(r, c) as f64 + x - t.get(r, c) as f64).powi(2))
                            .sum::<f64>()
                    })
                    .sum()
            };
            worst = worst.max((golden(sq, -5.0, 5.0) - dc).abs());
        }
    }
    outcome(
        worst < 1e-3,
        format!("20 random 10-instance sets, max |Δ - brute force| {worst:.2e}"),
    )
}

struct Desk {
    report: MetricsReport,
    elapsed: Duration,
}

fn cosine_of(r: &MetricsReport, name: &str) -> f64 {
    r.per_model.get(name).map_or(f64::NAN, |m| m.mean_cosine)
}

fn criterion_5(d: &Desk) -> Outcome {
    let (td, nd, add) = (
        cosine_of(&d.report, "transdrift"),
        cosine_of(&d.report, "no_drift"),
        cosine_of(&d.report, "additive"),
    );
    let mins = d.elapsed.as_secs_f64() / 60.0;
    outcome(
        td >= 0.60 && nd <= 0.45 && td - add >= 0.20 && mins <= 30.0,
        format!(
            "TransDrift {td:.4}, No-Drift {nd:.4}, Additive {add:.4} (gap {:.4}), {mins:.1} min",
            td - add
        ),
    )
}

fn criterion_6(d: &Desk) -> Outcome {
    let (td, mlp) = (cosine_of(&d.report, "transdrift"), cosine_of(&d.report, "mlp"));
    outcome(
        (td - mlp).abs() <= 0.08,
        format!("TransDrift {td:.4}, MLP {mlp:.4}, |diff| {:.4}", (td - mlp).abs()),
    )
}

fn criterion_7(d: &Desk) -> Outcome {
    let (td, td30) = (
        cosine_of(&d.report, "transdrift"),
        cosine_of(&d.report, "transdrift_small_30"),
    );
    outcome(td30 >= td - 0.01, format!("0% {td:.4}, 30% {td30:.4}"))
}

fn criterion_8(d: &Desk) -> Outcome {
    let acc = |source: &str| -> Vec<(u64, f64)> {
        let mut v: Vec<_> = d
            .report
            .downstream
            .iter()
            .filter(|e| e.embedding_source == source)
            .map(|e| (e.seed, e.accuracy))
            .collect();
        v.sort_by_key(|e| e.0);
        v
    };
    let (td, nd) = (acc("transdrift"), acc("no_drift"));
    if td.len() != 5 || nd.len() != 5 || td.iter().zip(&nd).any(|(a, b)| a.0 != b.0) {
        return outcome(
            false,
            format!("expected 5 paired seeds, got {} and {}", td.len(), nd.len()),
        );
    }
    let diffs: Vec<f64> = td.iter().zip(&nd).map(|(a, b)| a.1 - b.1).collect();
    let mean = diffs.iter().sum::<f64>() / 5.0;
    let wins = diffs.iter().filter(|&&x| x > 0.0).count();
    // One-sided sign test: P(at least `wins` of 5 positive | p = 1/2).
    let binom = |k: usize| (0..k).fold(1.0, |acc, i| acc * (5 - i) as f64 / (i + 1) as f64);
    let p = (wins..=5).map(binom).sum::<f64>() / 32.0;
    outcome(
        mean >= 0.02 && p < 0.05,
        format!(
            "mean gain {:.1} points, {wins}/5 seeds favour TransDrift (sign test p = {p:.3}); TransDrift {:.3}, No-Drift {:.3}",
            100.0 * mean,
            td.iter().map(|e| e.1).sum::<f64>() / 5.0,
            nd.iter().map(|e| e.1).sum::<f64>() / 5.0
        ),
    )
}

/// Largest numeric difference between two JSON documents, or `None` if their
/// structure or non-numeric content differs.
fn json_diff(a: &Value, b: &Value) -> Option<f64> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .try_fold(0.0f64, |m, (p, q)| Some(m.max(json_diff(p, q)?))),
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x.iter().try_fold(0.0f64, |m, (k, v)| {
            if k == "timestamp" {
                return Some(m);
            }
            Some(m.max(json_diff(v, y.get(k)?)?))
        }),
        _ => (a == b).then_some(0.0),
    }
}

fn criterion_9(tmp: &Path) -> Outcome {
    let cfg = RunConfig::profile(Scale::Smoke);
    let mut reports = Vec::new();
    for run in ["smoke_a", "smoke_b"] {
        let dir = tmp.join(run);
        if let Err(e) = repro_synthetic(&cfg, &dir) {
            return outcome(false, format!("smoke run failed: {e}"));
        }
        let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
        reports.push(serde_json::from_str::<Value>(&text).unwrap());
    }
    match json_diff(&reports[0], &reports[1]) {
        Some(d) => outcome(d <= 1e-6, format!("two smoke runs, max numeric difference {d:.1e}")),
        None => outcome(false, "reports differ in structure or non-numeric fields"),
    }
}

fn criterion_10(tmp: &Path, desk_root: &Path) -> Outcome {
    let mut rng = seed::rng(10);
    let mut fails = Vec::new();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut sets = vec![];
    for _ in 0..10 {
        let (n, d) = (rng.gen_range(1..60), rng.gen_range(1..60));
        sets.push(set(Tensor::from_fn(n, d, |_, _| {
            let x: f32 = rng.gen_range(-1.0..1.0);
            x * 10f32.powi(rng.gen_range(-30..30))
        })));
    }
    let e1 = desk_root.join("instances/0000/e1.txt");
    match EmbeddingSet::load(&e1, false) {
        Ok(s) => sets.push(s),
        Err(e) => fails.push(format!("{}: {e}", e1.display())),
    }
    for (i, s) in sets.iter().enumerate() {
        for binary in [false, true] {
            let path = tmp.join(format!("set{i}_{binary}"));
            s.save(&path, binary).unwrap();
            match EmbeddingSet::load(&path, binary) {
                Ok(b) if b.words() == s.words() && bits(&b.matrix) == bits(&s.matrix) => {}
                _ => fails.push(format!("set {i} binary={binary}")),
            }
        }
    }
    let mut n_ckpt = 0;
    for entry in std::fs::read_dir(desk_root.join("models"))
        .into_iter()
        .flatten()
        .flatten()
    {
        let dir = entry.path();
        let Ok(model) = PredictorModel::load(&dir) else {
            fails.push(format!("cannot load {}", dir.display()));
            continue;
        };
        let copy = tmp.join(format!("ckpt_{n_ckpt}"));
        model.save(&copy).unwrap();
        let (a, _) = load_checkpoint(&dir).unwrap();
        let (b, _) = load_checkpoint(&copy).unwrap();
        let same = a.len() == b.len()
            && a.iter()
                .zip(b.iter())
                .all(|((na, ta), (nb, tb))| na == nb && bits(ta) == bits(tb));
        if !same {
            fails.push(format!("checkpoint {}", dir.display()));
        }
        n_ckpt += 1;
    }
    let mut store = ParamStore::<f32>::new();
    store.add(
        "w",
        Tensor::from_fn(3, 4, |r, c| f32::from_bits(0x7f7f_ffff - (r * 4 + c) as u32)),
    );
    store.add("tiny", Tensor::from_fn(1, 2, |_, c| f32::from_bits(1 + c as u32)));
    let path = tmp.join("ckpt_edge");
    save_checkpoint(&path, &store, &serde_json::json!({})).unwrap();
    let (back, _) = load_checkpoint(&path).unwrap();
    if back.iter().map(|(_, t)| bits(t)).collect::<Vec<_>>() != store.iter().map(|(_, t)| bits(t)).collect::<Vec<_>>() {
        fails.push("extreme-value checkpoint".into());
    }
    outcome(
        fails.is_empty() && n_ckpt > 0,
        if fails.is_empty() {
            format!(
                "{} embedding sets (text and binary) and {} checkpoints bit-exact",
                sets.len(),
                n_ckpt + 1
            )
        } else {
            fails.join("; ")
        },
    )
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };

    report(1, "gradient correctness", criterion_1());
    report(2, "permutation equivariance", criterion_2());
    report(3, "loss and metric contracts", criterion_3());
    report(4, "additive closed form", criterion_4());

    let desk_root = tmp.path().join("desk");
    let start = Instant::now();
    match repro_synthetic(&RunConfig::profile(Scale::Desk), &desk_root) {
        Ok(r) => {
            let desk = Desk {
                report: r,
                elapsed: start.elapsed(),
            };
            report(5, "synthetic benchmark", criterion_5(&desk));
            report(6, "TransDrift vs MLP", criterion_6(&desk));
            report(7, "small-context trend", criterion_7(&desk));
            report(8, "downstream ordering", criterion_8(&desk));
        }
        Err(e) => {
            for (n, name) in [
                (5, "synthetic benchmark"),
                (6, "TransDrift vs MLP"),
                (7, "small-context trend"),
                (8, "downstream ordering"),
            ] {
                report(n, name, outcome(false, format!("desk run failed: {e}")));
            }
        }
    }
    report(9, "determinism", criterion_9(tmp.path()));
    report(10, "format round trips", criterion_10(tmp.path(), &desk_root));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
