//! The eight acceptance criteria, each reported on its own line.
//!
//! Built without the libtest harness so the summary always prints; the
//! process exits non-zero when any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssgrl::gradcheck;
use ssgrl::report::ReportDoc;
use ssgrl::train::parse_log_line;
use ssgrl_core::cooccurrence::{build_graph, AnnotationSet, CooccurrenceGraph};
use ssgrl_core::decoupling::{decouple, DecouplingDims, DecouplingParams};
use ssgrl_core::interaction::{
    aggregate, propagate, propagate_nodes, GraphVars, HiddenStateSet, NodeOrder, PropagationParams,
    PropagationWeights,
};
use ssgrl_core::metrics::{
    assign_labels, average_precision, mean_average_precision, prf_suite, Setting,
};
use ssgrl_core::model::{Context, Model, Variant};
use ssgrl_core::optim::{TrainConfig, Trainer};
use ssgrl_core::tape::Fault;
use ssgrl_core::{ParamSet, Tape, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("c{i}")).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = gradcheck::toy_config(Variant::Full, 0);
    let report = gradcheck::run(&cfg, Fault::None).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (_, params) = Model::new(cfg).map_err(|e| e.to_string())?;
    let all: Vec<&str> = params.iter().map(|(n, _)| n).collect();
    let covered: Vec<&str> = report.per_param.iter().map(|(n, _)| n.as_str()).collect();
    ensure(all == covered, || {
        format!("checked {covered:?}, model has {all:?}")
    })?;
    ensure(report.max_rel_error < 1e-4, || {
        format!(
            "max relative error {:e} at {:?}",
            report.max_rel_error, report.worst
        )
    })?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "max relative error {:.3e} over {} entries in {} tensors, {secs:.1} s",
        report.max_rel_error,
        report.entries_checked,
        covered.len()
    ))
}

fn criterion_2() -> Outcome {
    let mut worst_sum = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let dims = DecouplingDims {
            channels: r.random_range(1..=8),
            embed: r.random_range(1..=5),
            joint: r.random_range(1..=6),
            fused: r.random_range(1..=6),
        };
        let locations = r.random_range(1..=16);
        let c = r.random_range(1..=6);
        let mut ps = ParamSet::new();
        let layout =
            DecouplingParams::register(&mut ps, dims, &mut r).map_err(|e| e.to_string())?;
        let features = Tensor::uniform(&[locations, dims.channels], 3.0, &mut r);
        let embeddings = Tensor::uniform(&[c, dims.embed], 1.0, &mut r);
        let mut tape = Tape::new();
        let vars = layout.load(&mut tape, &ps).map_err(|e| e.to_string())?;
        let f = tape.constant(features.clone());
        let e = tape.constant(embeddings);
        let out = decouple(&mut tape, f, e, &vars).map_err(|e| e.to_string())?;
        let attention = tape.value(out.attention);
        let pooled = tape.value(out.category_features);
        for k in 0..c {
            let a = attention.row(k);
            let sum: f64 = a.iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            ensure((sum - 1.0).abs() <= 1e-9, || {
                format!("seed {seed}: attention sums to {sum}")
            })?;
            for n in 0..dims.channels {
                let col: Vec<f64> = (0..locations).map(|l| features.at(l, n)).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let p = pooled.at(k, n);
                ensure(p >= lo - 1e-12 && p <= hi + 1e-12, || {
                    format!("seed {seed}: pooled {p} outside [{lo}, {hi}]")
                })?;
            }
        }
    }
    Ok(format!("100 instances, worst |sum - 1| = {worst_sum:.1e}"))
}

fn count_oracle(c: usize, samples: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        let support = samples.iter().filter(|s| s.contains(&i)).count();
        for j in 0..c {
            let both = samples
                .iter()
                .filter(|s| s.contains(&i) && s.contains(&j))
                .count();
            if support > 0 {
                out[i * c + j] = both as f64 / support as f64;
            }
        }
    }
    out
}

fn graph_of(c: usize, samples: &[Vec<usize>]) -> Result<CooccurrenceGraph, String> {
    let mut ann = AnnotationSet::new(names(c));
    for (i, s) in samples.iter().enumerate() {
        ann.push(&format!("s{i}"), s).map_err(|e| e.to_string())?;
    }
    build_graph(&ann).map_err(|e| e.to_string())
}

fn criterion_3() -> Outcome {
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let c = r.random_range(1..=10);
        let m = r.random_range(1..=50);
        let samples: Vec<Vec<usize>> = (0..m)
            .map(|_| (0..c).filter(|_| r.random_bool(0.3)).collect())
            .collect();
        let g = graph_of(c, &samples)?;
        let want = count_oracle(c, &samples);
        let got = g.adjacency().data();
        ensure(
            got.iter()
                .zip(&want)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("seed {seed}: {got:?} vs {want:?}"),
        )?;
    }
    let hand = graph_of(3, &[vec![0, 1], vec![0], vec![0, 1, 2]])?;
    let a = hand.adjacency();
    ensure(
        a.at(0, 1) == 2.0 / 3.0 && a.at(1, 0) == 1.0 && a.at(0, 2) == 1.0 / 3.0,
        || format!("hand example gives {:?}", a.data()),
    )?;
    Ok("100 random sets match counting exactly, hand example exact".into())
}

fn prf_oracle(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> [f64; 6] {
    let c = gt[0].len();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let f1 = |p: f64, r: f64| {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    let count = |f: &dyn Fn(usize) -> bool| (0..gt.len()).filter(|&i| f(i)).count();
    let nc: Vec<usize> = (0..c).map(|k| count(&|i| pred[i][k] && gt[i][k])).collect();
    let np: Vec<usize> = (0..c).map(|k| count(&|i| pred[i][k])).collect();
    let ng: Vec<usize> = (0..c).map(|k| count(&|i| gt[i][k])).collect();
    let op = div(nc.iter().sum(), np.iter().sum());
    let or = div(nc.iter().sum(), ng.iter().sum());
    let kept: Vec<usize> = (0..c).filter(|&k| ng[k] > 0).collect();
    let (mut cp, mut cr) = (0.0, 0.0);
    if !kept.is_empty() {
        for &k in &kept {
            cp += div(nc[k], np[k]);
        }
        for &k in &kept {
            cr += div(nc[k], ng[k]);
        }
        cp /= kept.len() as f64;
        cr /= kept.len() as f64;
    }
    [op, or, f1(op, or), cp, cr, f1(cp, cr)]
}

fn rank_of(scores: &[f64], i: usize) -> usize {
    (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

fn ap_oracle(scores: &[f64], gt: &[bool]) -> Option<f64> {
    let mut pos: Vec<usize> = (0..gt.len()).filter(|&i| gt[i]).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by_key(|&i| rank_of(scores, i));
    let mut sum = 0.0;
    for &i in &pos {
        let r = rank_of(scores, i);
        let hits = pos.iter().filter(|&&j| rank_of(scores, j) <= r).count();
        sum += hits as f64 / (r + 1) as f64;
    }
    Some(sum / pos.len() as f64)
}

fn criterion_4() -> Outcome {
    for seed in 0..100u64 {
        let mut r = rng(2000 + seed);
        let c = r.random_range(1..=8);
        let m = r.random_range(1..=20);
        let probs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..c)
                    .map(|_| r.random_range(0..=10) as f64 / 10.0)
                    .collect()
            })
            .collect();
        let gt: Vec<Vec<bool>> = (0..m)
            .map(|_| (0..c).map(|_| r.random_bool(0.4)).collect())
            .collect();
        for setting in [Setting::Top3, Setting::Threshold] {
            let pred = assign_labels(&probs, setting);
            if setting == Setting::Top3 {
                for (row, p) in probs.iter().zip(&pred) {
                    ensure(p.iter().filter(|&&b| b).count() <= 3, || {
                        format!("seed {seed}: more than 3 labels")
                    })?;
                    for k in 0..c {
                        let want = row[k] >= 0.5 && rank_of(row, k) < 3;
                        ensure(p[k] == want, || format!("seed {seed}: top-3 rule at {k}"))?;
                    }
                }
            }
            let s = prf_suite(&pred, &gt).map_err(|e| e.to_string())?.scores;
            let got = [s.op, s.or, s.of1, s.cp, s.cr, s.cf1];
            let want = prf_oracle(&pred, &gt);
            ensure(
                got.iter()
                    .zip(&want)
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
                || format!("seed {seed}: {got:?} vs {want:?}"),
            )?;
        }
        let (per, _) = mean_average_precision(&probs, &gt).map_err(|e| e.to_string())?;
        for k in 0..c {
            let col: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let g: Vec<bool> = gt.iter().map(|r| r[k]).collect();
            let want = ap_oracle(&col, &g);
            ensure(per[k].map(f64::to_bits) == want.map(f64::to_bits), || {
                format!("seed {seed}: AP {:?} vs {want:?}", per[k])
            })?;
        }
    }
    let set = |rows: &[&[usize]]| -> Vec<Vec<bool>> {
        rows.iter()
            .map(|r| (0..2).map(|k| r.contains(&k)).collect())
            .collect()
    };
    let s = prf_suite(&set(&[&[0, 1], &[0], &[1]]), &set(&[&[0], &[0, 1], &[1]]))
        .map_err(|e| e.to_string())?
        .scores;
    for v in [s.op, s.or, s.of1, s.cp, s.cr, s.cf1] {
        ensure((v - 0.75).abs() <= 1e-12, || {
            format!("hand suite gives {v}")
        })?;
    }
    let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true])
        .map_err(|e| e.to_string())?
        .unwrap_or(f64::NAN);
    ensure((ap - 5.0 / 6.0).abs() <= 1e-12, || format!("hand AP {ap}"))?;
    Ok(format!(
        "100 instances match oracles exactly, hand suite 0.75, AP {ap:.4}"
    ))
}

fn criterion_5() -> Outcome {
    let hidden = 4;
    for seed in 0..20u64 {
        let mut r = rng(3000 + seed);
        let c = r.random_range(1..=6);
        let mut a = Tensor::uniform(&[c, c], 0.5, &mut r);
        a.data_mut().iter_mut().for_each(|v| *v += 0.5);
        let graph = CooccurrenceGraph::from_parts(names(c), a).map_err(|e| e.to_string())?;
        let init = HiddenStateSet {
            t: 0,
            states: Tensor::uniform(&[c, hidden], 2.0, &mut r),
        };
        let zero = propagate_nodes(
            &init,
            &graph,
            &PropagationWeights::zeros(hidden),
            3,
            NodeOrder::Ascending,
        )
        .map_err(|e| e.to_string())?;
        let mut ps = ParamSet::new();
        let layout =
            PropagationParams::register(&mut ps, hidden, &mut r).map_err(|e| e.to_string())?;
        let w = layout.weights(&ps);
        let asc = propagate_nodes(&init, &graph, &w, 3, NodeOrder::Ascending)
            .map_err(|e| e.to_string())?;
        let desc = propagate_nodes(&init, &graph, &w, 3, NodeOrder::Descending)
            .map_err(|e| e.to_string())?;
        ensure(asc == desc, || {
            format!("seed {seed}: order changes the states")
        })?;
        ps.fill_zero();
        let mut tape = Tape::new();
        let vars = layout.load(&mut tape, &ps);
        let g = GraphVars::load(&mut tape, &graph).map_err(|e| e.to_string())?;
        let h0 = tape.constant(init.states.clone());
        let h = propagate(&mut tape, h0, &g, &vars, 3).map_err(|e| e.to_string())?;
        for states in [zero.states.data(), tape.value(h).data()] {
            ensure(
                states
                    .iter()
                    .zip(init.states.data())
                    .all(|(o, i)| *o == i / 8.0),
                || format!("seed {seed}: zero-parameter states are not h/8"),
            )?;
        }
    }
    let graph = CooccurrenceGraph::from_parts(
        names(2),
        Tensor::from_rows(&[&[0.0, 0.25], &[1.0, 0.0]]).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let g = GraphVars::load(&mut tape, &graph).map_err(|e| e.to_string())?;
    let h = tape.constant(Tensor::from_rows(&[&[2.0], &[8.0]]).unwrap());
    let msg = aggregate(&mut tape, h, &g).map_err(|e| e.to_string())?;
    let got = tape.value(msg).data();
    ensure(got == [2.0, 8.0, 2.0, 0.5], || {
        format!("2-node messages {got:?}")
    })?;
    Ok(
        "h/8 exact on 20 graphs (nodes and tape), order-invariant bitwise, 2-node messages exact"
            .into(),
    )
}

struct Run {
    initial: f64,
    last: f64,
    map: f64,
    cf1: f64,
    secs: f64,
    checkpoint: Vec<u8>,
    log: Vec<String>,
    report: String,
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssgrl"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn checked(cmd: &mut Command) -> Result<std::process::Output, String> {
    let o = cmd.output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{cmd:?} failed: {}", String::from_utf8_lossy(&o.stderr))
    })?;
    Ok(o)
}

/// gen, train and eval through the binary on the bundled toy config.
fn toy_run(dir: &Path) -> Result<Run, String> {
    let config = configs().join("toy.json");
    let data = dir.join("data");
    let ckpt = dir.join("model.ckpt");
    let log = dir.join("train.log");
    let report = dir.join("report.txt");
    checked(
        bin()
            .arg("gen")
            .arg("--spec")
            .arg(&config)
            .arg("--out")
            .arg(&data),
    )?;
    let start = Instant::now();
    let o = checked(
        bin()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&ckpt)
            .arg("--log")
            .arg(&log),
    )?;
    let secs = start.elapsed().as_secs_f64();
    let summary = String::from_utf8_lossy(&o.stderr).into_owned();
    let initial: f64 = summary
        .split("initial loss ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("no initial loss in {summary:?}"))?;
    checked(
        bin()
            .arg("eval")
            .arg("--ckpt")
            .arg(&ckpt)
            .arg("--data")
            .arg(&data)
            .arg("--report")
            .arg(&report),
    )?;
    let report_text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let doc = ReportDoc::parse(&report_text, "report").map_err(|e| e.to_string())?;
    let log_text = fs::read_to_string(&log).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut last = f64::NAN;
    for line in log_text.lines() {
        let (epoch, loss, lr, _wall) =
            parse_log_line(line).ok_or_else(|| format!("bad log line {line:?}"))?;
        last = loss;
        lines.push(format!("{epoch}\t{}\t{}", loss.to_bits(), lr.to_bits()));
    }
    Ok(Run {
        initial,
        last,
        map: doc.map,
        cf1: doc.threshold.cf1,
        secs,
        checkpoint: fs::read(&ckpt).map_err(|e| e.to_string())?,
        log: lines,
        report: report_text,
    })
}

fn criterion_6(run: &Run) -> Outcome {
    ensure(run.log.len() == 200, || {
        format!("{} epochs logged", run.log.len())
    })?;
    ensure(run.map >= 0.95, || format!("test mAP {:.4}", run.map))?;
    ensure(run.cf1 >= 0.90, || format!("threshold CF1 {:.4}", run.cf1))?;
    let ratio = run.last / run.initial;
    ensure(ratio < 0.05, || {
        format!("loss {} -> {} ({ratio:.3})", run.initial, run.last)
    })?;
    ensure(run.secs < 300.0, || {
        format!("training took {:.0} s", run.secs)
    })?;
    Ok(format!(
        "test mAP {:.4}, threshold CF1 {:.4}, loss {:.4} -> {:.4} ({:.1}%), {:.1} s",
        run.map,
        run.cf1,
        run.initial,
        run.last,
        100.0 * ratio,
        run.secs
    ))
}

fn criterion_7() -> Outcome {
    let base = gradcheck::toy_config(Variant::Full, 1);
    let data =
        ssgrl::synth::generate(&gradcheck::instance_spec(&base)).map_err(|e| e.to_string())?;
    let ann =
        ssgrl::dataset::annotations_of(&data.categories, &data.train).map_err(|e| e.to_string())?;
    let graph = build_graph(&ann).map_err(|e| e.to_string())?;
    let ctx = Context {
        embeddings: &data.embeddings,
        graph: &graph,
    };
    let fm = &data.train[0].features;
    let mut full = None;
    for variant in Variant::ALL {
        let mut cfg = base;
        cfg.variant = variant;
        let (model, mut params) = Model::new(cfg).map_err(|e| e.to_string())?;
        let logits = model
            .predict(&params, &ctx, fm)
            .map_err(|e| e.to_string())?
            .logits;
        let train = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&params, train).map_err(|e| e.to_string())?;
        let stats = trainer
            .run_epoch(&model, &mut params, &ctx, &data.train)
            .map_err(|e| format!("{variant}: {e}"))?;
        ensure(stats.mean_loss.is_finite(), || {
            format!("{variant}: loss {}", stats.mean_loss)
        })?;
        match &full {
            None => full = Some(logits),
            Some(f) => ensure(*f != logits, || format!("{variant} logits equal full"))?,
        }
    }
    Ok("full, no_SD, no_SD_concat, no_SI train an epoch; ablations differ from full".into())
}

fn criterion_8(a: &Run, b: &Run) -> Outcome {
    ensure(a.checkpoint == b.checkpoint, || "checkpoints differ".into())?;
    ensure(a.log == b.log, || "logs differ".into())?;
    ensure(a.report == b.report, || "reports differ".into())?;
    Ok(format!(
        "checkpoint ({} bytes), log ({} epochs, wall time excluded) and report identical",
        a.checkpoint.len(),
        a.log.len()
    ))
}

fn main() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let first = toy_run(dirs[0].path());
    let second = toy_run(dirs[1].path());
    let run_err = |r: &Result<Run, String>| r.as_ref().err().cloned().unwrap_or_default();
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient fidelity", criterion_1()),
        (2, "attention normalisation", criterion_2()),
        (3, "co-occurrence oracle", criterion_3()),
        (4, "metrics oracle", criterion_4()),
        (5, "propagation analytics", criterion_5()),
        (
            6,
            "toy training",
            match &first {
                Ok(run) => criterion_6(run),
                Err(_) => Err(run_err(&first)),
            },
        ),
        (7, "variants", criterion_7()),
        (
            8,
            "determinism",
            match (&first, &second) {
                (Ok(a), Ok(b)) => criterion_8(a, b),
                _ => Err(format!("{} {}", run_err(&first), run_err(&second))),
            },
        ),
    ];
    let mut failed = Vec::new();
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(why) => {
                println!("criterion {n} ({name}): FAIL: {why}");
                failed.push(*n);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria passed", results.len());
}
