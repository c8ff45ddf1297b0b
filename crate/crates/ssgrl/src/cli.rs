//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or validation error,
//! 3 numeric failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use ssgrl_core::cooccurrence::{build_graph, CooccurrenceGraph};
use ssgrl_core::metrics::evaluate;
use ssgrl_core::model::{Context, Model};
use ssgrl_core::optim::Sample;
use ssgrl_core::tape::Fault;
use ssgrl_core::ParamSet;

use crate::config::{Profile, RunConfig};
use crate::dataset::{self, DatasetInfo, TEST, TRAIN};
use crate::error::{display_name, read_to_string, write_file, Error, Result, EXIT_CHECK_FAILED};
use crate::report::{self, ReportDoc};
use crate::synth::{self, SyntheticSpec};
use crate::{checkpoint, gradcheck, text, train};

#[derive(Debug, Parser)]
#[command(
    name = "ssgrl",
    version,
    about = "Semantic-specific graph representation head for multi-label recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-pattern synthetic dataset.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a co-occurrence graph from an annotation file.
    BuildGraph {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Category list fixing the index order; defaults to first appearance.
        #[arg(long)]
        categories: Option<PathBuf>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Use this graph instead of the one built from the training split.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on one split and write a report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = TEST)]
        split: String,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Export attention grids and the predicted distribution of one sample.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient on the toy profile.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Deliberately corrupt one backward rule.
        #[arg(long)]
        inject_fault: bool,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Gen { spec, out: dir } => gen(&spec, &dir, out),
        Command::BuildGraph {
            ann,
            out: path,
            categories,
        } => build_graph_file(&ann, &path, categories.as_deref(), out),
        Command::Train {
            config,
            data,
            out: ckpt,
            log,
            graph,
            epochs,
            lr,
            batch_size,
            seed,
            variant,
        } => {
            let mut cfg = RunConfig::read(&config)?;
            cfg.train.epochs = epochs.or(cfg.train.epochs);
            cfg.train.lr = lr.or(cfg.train.lr);
            cfg.train.batch_size = batch_size.or(cfg.train.batch_size);
            cfg.model.seed = seed.or(cfg.model.seed);
            cfg.model.variant = variant.or(cfg.model.variant);
            train_cmd(
                &cfg,
                &data,
                &ckpt,
                log.as_deref(),
                graph.as_deref(),
                out,
                err,
            )
        }
        Command::Eval {
            ckpt,
            data,
            report,
            split,
            graph,
        } => eval_cmd(&ckpt, &data, &split, &report, graph.as_deref(), out),
        Command::Inspect {
            ckpt,
            data,
            sample,
            out: dir,
            graph,
        } => inspect_cmd(&ckpt, &data, &sample, &dir, graph.as_deref(), out),
        Command::Gradcheck {
            config,
            inject_fault,
        } => gradcheck_cmd(&config, inject_fault, out),
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

/// Accepts a bare synthetic spec or a run config with a `data` section.
fn read_spec(path: &Path) -> Result<SyntheticSpec> {
    let raw = read_to_string(path)?;
    if let Ok(spec) = serde_json::from_str::<SyntheticSpec>(&raw) {
        return Ok(spec);
    }
    match RunConfig::parse(&raw, &display_name(path)) {
        Ok(RunConfig {
            data: Some(spec), ..
        }) => Ok(spec),
        _ => serde_json::from_str::<SyntheticSpec>(&raw).map_err(|e| Error::Parse {
            file: display_name(path),
            line: e.line(),
            msg: e.to_string(),
        }),
    }
}

fn gen(spec_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let spec = read_spec(spec_path)?;
    let data = synth::generate(&spec)?;
    data.write(dir)?;
    write!(out, "{}", data.summary()).map_err(io_out)?;
    Ok(0)
}

fn build_graph_file(
    ann: &Path,
    path: &Path,
    categories: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let names = categories.map(text::read_categories).transpose()?;
    let set = text::read_annotations(ann, names.as_deref())?;
    let graph = build_graph(&set)?;
    text::write_graph(path, &graph)?;
    writeln!(
        out,
        "{} categories, {} samples",
        graph.num_categories(),
        set.len()
    )
    .map_err(io_out)?;
    Ok(0)
}

fn load_graph(info: &DatasetInfo, graph: Option<&Path>) -> Result<CooccurrenceGraph> {
    match graph {
        Some(p) => {
            let g = text::read_graph(p)?;
            if g.names() != info.categories.as_slice() {
                return Err(Error::Validation(format!(
                    "graph {} lists categories {:?}, dataset has {:?}",
                    p.display(),
                    g.names(),
                    info.categories
                )));
            }
            Ok(g)
        }
        None => Ok(build_graph(&info.train_annotations)?),
    }
}

/// Rejects a model whose shape disagrees with the dataset before any compute.
fn check_compatible(model: &Model, info: &DatasetInfo, samples: &[Sample]) -> Result<()> {
    let cfg = model.config();
    if cfg.categories != info.categories.len() {
        return Err(Error::Validation(format!(
            "model has {} categories, dataset has {}",
            cfg.categories,
            info.categories.len()
        )));
    }
    if cfg.embed_dim != info.embeddings.dim() {
        return Err(Error::Validation(format!(
            "model expects {}-d embeddings, dataset has {}",
            cfg.embed_dim,
            info.embeddings.dim()
        )));
    }
    if let Some(s) = samples.iter().find(|s| {
        let f = &s.features;
        (f.width(), f.height(), f.channels()) != (cfg.width, cfg.height, cfg.channels)
    }) {
        let f = &s.features;
        return Err(Error::Validation(format!(
            "sample `{}` is {}x{}x{}, model expects {}x{}x{}",
            s.id,
            f.width(),
            f.height(),
            f.channels(),
            cfg.width,
            cfg.height,
            cfg.channels
        )));
    }
    Ok(())
}

pub fn diagnostic_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".diag");
    PathBuf::from(s)
}

fn train_cmd(
    cfg: &RunConfig,
    data: &Path,
    ckpt: &Path,
    log: Option<&Path>,
    graph: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let info = dataset::load_info(data)?;
    let samples = dataset::load_split(data, TRAIN, &info.categories)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("training split is empty".into()))?;
    let model_cfg = cfg.model_config(
        info.categories.len(),
        first.features.width(),
        first.features.height(),
    )?;
    let train_cfg = cfg.train_config()?;
    let (model, mut params) = Model::new(model_cfg)?;
    check_compatible(&model, &info, &samples)?;
    let graph = load_graph(&info, graph)?;
    let ctx = Context {
        embeddings: &info.embeddings,
        graph: &graph,
    };
    let mut log_text = String::new();
    let result = train::train(&model, &mut params, &ctx, &samples, train_cfg, |r| {
        let line = r.log_line();
        writeln!(out, "{line}").map_err(io_out)?;
        log_text.push_str(&line);
        log_text.push('\n');
        Ok(())
    });
    if let Some(p) = log {
        write_file(p, &log_text)?;
    }
    match result {
        Ok(summary) => {
            checkpoint::write(ckpt, &model_cfg, &params)?;
            let _ = writeln!(
                err,
                "initial loss {}, final loss {}, checkpoint {}",
                summary.initial_loss,
                summary.final_loss(),
                ckpt.display()
            );
            Ok(0)
        }
        Err(e) if e.is_numeric() => {
            let diag = diagnostic_path(ckpt);
            checkpoint::write(&diag, &model_cfg, &params)?;
            let _ = writeln!(err, "diagnostic checkpoint written to {}", diag.display());
            Err(e)
        }
        Err(e) => Err(e),
    }
}

struct Loaded {
    model: Model,
    params: ParamSet,
    info: DatasetInfo,
    graph: CooccurrenceGraph,
}

fn load_for_inference(ckpt: &Path, data: &Path, graph: Option<&Path>) -> Result<Loaded> {
    let (model, params) = checkpoint::read(ckpt)?;
    let info = dataset::load_info(data)?;
    let graph = load_graph(&info, graph)?;
    check_compatible(&model, &info, &[])?;
    Ok(Loaded {
        model,
        params,
        info,
        graph,
    })
}

fn eval_cmd(
    ckpt: &Path,
    data: &Path,
    split: &str,
    report_path: &Path,
    graph: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let l = load_for_inference(ckpt, data, graph)?;
    let samples = dataset::load_split(data, split, &l.info.categories)?;
    check_compatible(&l.model, &l.info, &samples)?;
    let ctx = Context {
        embeddings: &l.info.embeddings,
        graph: &l.graph,
    };
    let mut probs = Vec::with_capacity(samples.len());
    for s in &samples {
        probs.push(l.model.predict(&l.params, &ctx, &s.features)?.probabilities);
    }
    let gt: Vec<Vec<bool>> = samples.iter().map(|s| s.labels.clone()).collect();
    let report = evaluate(&probs, &gt)?;
    let doc = ReportDoc::new(&report, &l.info.categories, samples.len());
    write_file(report_path, doc.render())?;
    writeln!(
        out,
        "mAP {:.4}  top3 CF1 {:.4}  threshold CF1 {:.4}",
        doc.map, doc.top3.cf1, doc.threshold.cf1
    )
    .map_err(io_out)?;
    Ok(0)
}

fn inspect_cmd(
    ckpt: &Path,
    data: &Path,
    id: &str,
    dir: &Path,
    graph: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let l = load_for_inference(ckpt, data, graph)?;
    let mut found = None;
    for split in [TRAIN, TEST] {
        if !dataset::manifest_path(data, split).is_file() {
            continue;
        }
        let m = dataset::read_manifest(data, split, &l.info.categories)?;
        if let Some(e) = m.entries.into_iter().find(|e| e.id == id) {
            found = Some(e);
            break;
        }
    }
    let entry = found.ok_or_else(|| Error::Lookup(format!("unknown sample `{id}`")))?;
    let fm = crate::fmap::read(&data.join(&entry.path))?;
    let ctx = Context {
        embeddings: &l.info.embeddings,
        graph: &l.graph,
    };
    let dump = l.model.inspect(&l.params, &ctx, &fm)?;
    let ranked = report::ranked_categories(&dump.prediction);
    let top: Vec<usize> = ranked.into_iter().take(3).collect();
    write_file(
        &dir.join(format!("{id}.prediction.txt")),
        report::render_prediction(&dump.prediction, &l.info.categories),
    )?;
    match &dump.attention {
        Some(map) => {
            write_file(
                &dir.join(format!("{id}.attention.txt")),
                report::render_attention(map, &l.info.categories, &top),
            )?;
        }
        None => {
            writeln!(
                out,
                "variant {} has no attention maps",
                l.model.config().variant
            )
            .map_err(io_out)?;
        }
    }
    for &c in &top {
        writeln!(
            out,
            "{}\t{:.6}",
            l.info.categories[c], dump.prediction.probabilities[c]
        )
        .map_err(io_out)?;
    }
    Ok(0)
}

fn gradcheck_cmd(config: &Path, inject_fault: bool, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::read(config)?;
    if cfg.profile != Profile::Toy {
        return Err(Error::Validation(format!(
            "gradcheck runs on the toy profile, config selects `{}`",
            cfg.profile.as_str()
        )));
    }
    let base = gradcheck::toy_config(ssgrl_core::model::Variant::Full, 0);
    let model_cfg = cfg.model_config(base.categories, base.width, base.height)?;
    let fault = if inject_fault {
        Fault::TanhDerivative
    } else {
        Fault::None
    };
    let report = gradcheck::run(&model_cfg, fault)?;
    for (name, e) in &report.per_param {
        writeln!(out, "{name}\t{e:e}").map_err(io_out)?;
    }
    if let Some((name, i)) = &report.worst {
        writeln!(
            out,
            "worst: {name}[{i}] analytic {:e} numeric {:e}",
            report.analytic, report.numeric
        )
        .map_err(io_out)?;
    }
    writeln!(out, "entries checked: {}", report.entries_checked).map_err(io_out)?;
    writeln!(out, "max relative error: {:e}", report.max_rel_error).map_err(io_out)?;
    Ok(if report.max_rel_error < gradcheck::TOLERANCE {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}
