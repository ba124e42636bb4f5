//! Command-line orchestration.
//!
//! Subcommands: `gen-sbm`, `split`, `distill`, `eval`, `sweep`, `report`.
//! Every command reads a `key = value` config file (`--config`), with
//! `--set KEY=VALUE` overrides and the universal `--seed` / `--out` flags
//! taking precedence; unknown keys are rejected. A fully resolved copy of the
//! effective configuration is written to `<out>/resolved.cfg`, and re-running
//! a command from its resolved config reproduces its outputs byte for byte.
//!
//! Exit codes: 0 success, 1 validation/parse error, 2 runtime failure.
//! Errors go to stderr with an `E_PARSE` / `E_VALIDATE` / `E_RUNTIME` prefix.
//!
//! Determinism: all randomness stems from the single root `seed` key via
//! per-purpose streams. Measured runtimes are suppressed (written as 0) in
//! metrics files unless `timings = true`, so repeated runs are byte-identical.

use crate::config::KvConfig;
use crate::distill::{distill, export_synthetic, write_artifact, DistillConfig, ExportMode};
use crate::error::{Error, Result};
use crate::eval::{
    cross_arch_sweep, evaluate, records_from_jsonl, records_to_jsonl, substrate_from_artifact,
    tradeoff_report, MetricsRecord,
};
use crate::graph::{
    generate_sbm, graph_checksum, load_graph_dir, load_split, save_graph, save_split, split_edges,
    Graph, SbmConfig,
};
use crate::predictor::{Architecture, Substrate, TrainConfig};
use clap::{Arg, ArgAction, ArgMatches, Command};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn with_common_args(c: Command) -> Command {
    c.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value config file"),
    )
    .arg(
        Arg::new("set")
            .long("set")
            .value_name("KEY=VALUE")
            .action(ArgAction::Append)
            .help("override a config key"),
    )
    .arg(Arg::new("seed").long("seed").value_name("N").help("root seed override"))
    .arg(Arg::new("out").long("out").value_name("DIR").help("output directory override"))
}

fn build_command() -> Command {
    Command::new("fairlink")
        .about("Fairness-enhanced graph learning for link prediction")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_common_args(
            Command::new("gen-sbm").about("Generate a planted-bias benchmark graph"),
        ))
        .subcommand(with_common_args(
            Command::new("split").about("Partition edges and sample held-out negatives"),
        ))
        .subcommand(with_common_args(
            Command::new("distill").about("Learn a fairness-enhanced synthetic graph"),
        ))
        .subcommand(with_common_args(
            Command::new("eval").about("Train fresh predictors and write metric records"),
        ))
        .subcommand(with_common_args(
            Command::new("sweep")
                .about("Cross-architecture evaluation sweep")
                .arg(
                    Arg::new("parallel")
                        .long("parallel")
                        .value_name("N")
                        .help("evaluate up to N cells concurrently (deterministic merge)"),
                ),
        ))
        .subcommand(with_common_args(
            Command::new("report").about("Aggregate metric records into trade-off tables"),
        ))
}

/// Runs the CLI on the given arguments (without the binary name).
pub fn run(args: Vec<String>) -> i32 {
    let cmd = build_command().no_binary_name(true);
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("E_PARSE: {e}");
            return 1;
        }
    };

    let (name, sub) = matches
        .subcommand()
        .expect("subcommand_required guarantees a subcommand");
    match dispatch(name, sub) {
        Ok(()) => 0,
        Err(e) => {
            let (prefix, code) = match &e {
                Error::Parse { .. } => ("E_PARSE", 1),
                Error::Validation(_) => ("E_VALIDATE", 1),
                Error::Io { .. } | Error::Runtime(_) => ("E_RUNTIME", 2),
            };
            eprintln!("{prefix}: {e}");
            code
        }
    }
}

fn dispatch(name: &str, sub: &ArgMatches) -> Result<()> {
    let cfg = effective_config(sub)?;
    let resolved = match name {
        "gen-sbm" => cmd_gen_sbm(cfg)?,
        "split" => cmd_split(cfg)?,
        "distill" => cmd_distill(cfg)?,
        "eval" => cmd_eval(cfg)?,
        "sweep" => cmd_sweep(cfg, sub)?,
        "report" => cmd_report(cfg)?,
        other => return Err(Error::validation(format!("unknown subcommand {other}"))),
    };
    let out = PathBuf::from(resolved.require("out")?);
    write_text(&out.join("resolved.cfg"), resolved.to_text())
}

fn effective_config(sub: &ArgMatches) -> Result<KvConfig> {
    let mut cfg = match sub.get_one::<String>("config") {
        Some(f) => KvConfig::from_file(Path::new(f))?,
        None => KvConfig::new(),
    };
    if let Some(sets) = sub.get_many::<String>("set") {
        for kv in sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::validation(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            cfg.set(k.trim(), v.trim());
        }
    }
    if let Some(s) = sub.get_one::<String>("seed") {
        cfg.set("seed", s.clone());
    }
    if let Some(o) = sub.get_one::<String>("out") {
        cfg.set("out", o.clone());
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: String) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_gen_sbm(mut cfg: KvConfig) -> Result<KvConfig> {
    cfg.check_known(&[
        "n_nodes",
        "group_sizes",
        "p_intra",
        "p_inter",
        "feature_dim",
        "feature_signal",
        "seed",
        "out",
    ])?;
    let sbm = SbmConfig {
        n_nodes: cfg.req("n_nodes")?,
        group_sizes: cfg.list("group_sizes")?,
        p_intra: cfg.req("p_intra")?,
        p_inter: cfg.req("p_inter")?,
        feature_dim: cfg.get_or("feature_dim", 8)?,
        feature_signal: cfg.get_or("feature_signal", 1.0)?,
        seed: cfg.get_or("seed", 0)?,
    };
    let out = PathBuf::from(cfg.require("out")?);
    let g = generate_sbm(&sbm)?;
    save_graph(&g, &out)?;

    cfg.set("feature_dim", sbm.feature_dim.to_string());
    cfg.set("feature_signal", sbm.feature_signal.to_string());
    cfg.set("seed", sbm.seed.to_string());
    Ok(cfg)
}

fn cmd_split(mut cfg: KvConfig) -> Result<KvConfig> {
    cfg.check_known(&[
        "graph",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "neg_ratio",
        "seed",
        "out",
    ])?;
    let g = load_graph_dir(Path::new(cfg.require("graph")?))?;
    let ratios = (
        cfg.get_or("train_ratio", 0.8)?,
        cfg.get_or("val_ratio", 0.1)?,
        cfg.get_or("test_ratio", 0.1)?,
    );
    let neg_ratio = cfg.get_or("neg_ratio", 1.0)?;
    let seed = cfg.get_or("seed", 0)?;
    let out = PathBuf::from(cfg.require("out")?);
    let split = split_edges(&g, ratios, neg_ratio, seed)?;
    save_split(&split, &out)?;

    cfg.set("train_ratio", ratios.0.to_string());
    cfg.set("val_ratio", ratios.1.to_string());
    cfg.set("test_ratio", ratios.2.to_string());
    cfg.set("neg_ratio", neg_ratio.to_string());
    cfg.set("seed", seed.to_string());
    Ok(cfg)
}

fn cmd_distill(mut cfg: KvConfig) -> Result<KvConfig> {
    cfg.check_known(&[
        "graph",
        "split",
        "architecture",
        "alpha",
        "beta",
        "gamma",
        "t_total",
        "tau1",
        "tau2",
        "restarts",
        "inner_lr",
        "outer_lr_x",
        "outer_lr_psi",
        "m_pairs",
        "hidden",
        "embed",
        "export_mode",
        "target_edges",
        "seed",
        "out",
    ])?;
    let g = load_graph_dir(Path::new(cfg.require("graph")?))?;
    let split = load_split(Path::new(cfg.require("split")?))?;
    let architecture: Architecture = cfg.get_or("architecture", Architecture::Sage)?;
    let defaults = DistillConfig::default();
    let dcfg = DistillConfig {
        alpha: cfg.get_or("alpha", defaults.alpha)?,
        beta: cfg.get_or("beta", defaults.beta)?,
        gamma: cfg.get_or("gamma", defaults.gamma)?,
        t_total: cfg.get_or("t_total", defaults.t_total)?,
        tau1: cfg.get_or("tau1", defaults.tau1)?,
        tau2: cfg.get_or("tau2", defaults.tau2)?,
        restarts: cfg.get_or("restarts", defaults.restarts)?,
        inner_lr: cfg.get_or("inner_lr", defaults.inner_lr)?,
        outer_lr_x: cfg.get_or("outer_lr_x", defaults.outer_lr_x)?,
        outer_lr_psi: cfg.get_or("outer_lr_psi", defaults.outer_lr_psi)?,
        m_pairs: cfg.get_or("m_pairs", defaults.m_pairs)?,
        hidden: cfg.get_or("hidden", defaults.hidden)?,
        embed: cfg.get_or("embed", defaults.embed)?,
        seed: cfg.get_or("seed", 0)?,
    };
    let mode: ExportMode = cfg.get_or("export_mode", ExportMode::Weighted)?;
    let target: usize = cfg.get_or("target_edges", g.n_edges())?;
    let out = PathBuf::from(cfg.require("out")?);

    let run = distill(&g, &split, architecture, &dcfg)?;
    let artifact = export_synthetic(&run.synthetic, mode, Some(target))?;

    cfg.set("architecture", architecture.to_string());
    cfg.set("alpha", dcfg.alpha.to_string());
    cfg.set("beta", dcfg.beta.to_string());
    cfg.set("gamma", dcfg.gamma.to_string());
    cfg.set("t_total", dcfg.t_total.to_string());
    cfg.set("tau1", dcfg.tau1.to_string());
    cfg.set("tau2", dcfg.tau2.to_string());
    cfg.set("restarts", dcfg.restarts.to_string());
    cfg.set("inner_lr", dcfg.inner_lr.to_string());
    cfg.set("outer_lr_x", dcfg.outer_lr_x.to_string());
    cfg.set("outer_lr_psi", dcfg.outer_lr_psi.to_string());
    cfg.set("m_pairs", dcfg.m_pairs.to_string());
    cfg.set("hidden", dcfg.hidden.to_string());
    cfg.set("embed", dcfg.embed.to_string());
    cfg.set("seed", dcfg.seed.to_string());
    cfg.set(
        "export_mode",
        match mode {
            ExportMode::Weighted => "weighted",
            ExportMode::Sparsified => "sparsified",
        },
    );
    cfg.set("target_edges", target.to_string());

    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    meta.insert("input_checksum".to_string(), graph_checksum(&g));
    meta.insert(
        "supervision_pairs".to_string(),
        (2 * split.train_pos.len()).to_string(),
    );
    meta.insert("distill_architecture".to_string(), architecture.to_string());
    meta.insert("seed".to_string(), dcfg.seed.to_string());
    meta.insert("alpha".to_string(), dcfg.alpha.to_string());
    meta.insert("x_updates".to_string(), run.x_updates.to_string());
    meta.insert("psi_updates".to_string(), run.psi_updates.to_string());
    write_artifact(&run.synthetic, &artifact, &meta, &out)?;
    Ok(cfg)
}

const EVAL_KEYS: [&str; 13] = [
    "graph",
    "split",
    "artifact",
    "architecture",
    "seeds",
    "epochs",
    "lr",
    "weight_decay",
    "hidden",
    "embed",
    "graph_id",
    "timings",
    "out",
];

struct EvalSetup {
    graph: Graph,
    split: crate::graph::EdgeSplit,
    substrate: Substrate,
    graph_id: String,
    seeds: Vec<u64>,
    train: TrainConfig,
    timings: bool,
}

fn eval_setup(cfg: &mut KvConfig) -> Result<EvalSetup> {
    let graph = load_graph_dir(Path::new(cfg.require("graph")?))?;
    let split = load_split(Path::new(cfg.require("split")?))?;
    let (substrate, default_id) = match cfg.get("artifact") {
        Some(dir) => {
            let (artifact, meta) = crate::distill::load_artifact(Path::new(dir))?;
            if artifact.x.nrows() != graph.n_nodes() {
                return Err(Error::validation(format!(
                    "artifact has {} nodes but the graph has {}",
                    artifact.x.nrows(),
                    graph.n_nodes()
                )));
            }
            let pairs = meta
                .get("supervision_pairs")
                .and_then(|v| v.parse().ok())
                .unwrap_or(2 * split.train_pos.len());
            // tag records with the architecture that produced the artifact
            let id = match meta.get("distill_architecture") {
                Some(a) => format!("artifact[{a}]"),
                None => "artifact".to_string(),
            };
            (substrate_from_artifact(&artifact, pairs), id)
        }
        None => (Substrate::from_graph(&graph, &split), "original".to_string()),
    };
    let graph_id = cfg.get("graph_id").map(str::to_string).unwrap_or(default_id);
    let seeds: Vec<u64> = match cfg.get("seeds") {
        Some(_) => cfg.list("seeds")?,
        None => (0..10).collect(),
    };
    if seeds.is_empty() {
        return Err(Error::validation("seeds must not be empty"));
    }
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: cfg.get_or("epochs", defaults.epochs)?,
        lr: cfg.get_or("lr", defaults.lr)?,
        weight_decay: cfg.get_or("weight_decay", defaults.weight_decay)?,
        hidden: cfg.get_or("hidden", defaults.hidden)?,
        embed: cfg.get_or("embed", defaults.embed)?,
        seed: 0,
    };
    let timings = cfg.get_or("timings", false)?;

    cfg.set("graph_id", graph_id.clone());
    cfg.set(
        "seeds",
        seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    cfg.set("epochs", train.epochs.to_string());
    cfg.set("lr", train.lr.to_string());
    cfg.set("weight_decay", train.weight_decay.to_string());
    cfg.set("hidden", train.hidden.to_string());
    cfg.set("embed", train.embed.to_string());
    cfg.set("timings", timings.to_string());
    Ok(EvalSetup {
        graph,
        split,
        substrate,
        graph_id,
        seeds,
        train,
        timings,
    })
}

fn finalize_records(mut records: Vec<MetricsRecord>, timings: bool) -> Vec<MetricsRecord> {
    if !timings {
        for r in &mut records {
            r.runtime_s = 0.0;
        }
    }
    records
}

fn cmd_eval(mut cfg: KvConfig) -> Result<KvConfig> {
    cfg.check_known(&EVAL_KEYS)?;
    let setup = eval_setup(&mut cfg)?;
    let architecture: Architecture = cfg.get_or("architecture", Architecture::Sage)?;
    cfg.set("architecture", architecture.to_string());
    let out = PathBuf::from(cfg.require("out")?);

    let mut records = Vec::with_capacity(setup.seeds.len());
    for &seed in &setup.seeds {
        let train = TrainConfig {
            seed,
            ..setup.train.clone()
        };
        records.push(evaluate(
            &setup.graph_id,
            &setup.substrate,
            &setup.split,
            setup.graph.sensitive(),
            architecture,
            &train,
        )?);
    }
    let records = finalize_records(records, setup.timings);
    write_text(&out.join("metrics.jsonl"), records_to_jsonl(&records))?;
    Ok(cfg)
}

fn cmd_sweep(mut cfg: KvConfig, sub: &ArgMatches) -> Result<KvConfig> {
    let mut keys: Vec<&str> = EVAL_KEYS.to_vec();
    keys.retain(|k| *k != "architecture");
    keys.push("architectures");
    keys.push("parallel");
    cfg.check_known(&keys)?;
    if let Some(p) = sub.get_one::<String>("parallel") {
        cfg.set("parallel", p.clone());
    }
    let setup = eval_setup(&mut cfg)?;
    let architectures: Vec<Architecture> = match cfg.get("architectures") {
        Some(_) => cfg.list("architectures")?,
        None => Architecture::ALL.to_vec(),
    };
    let parallel: usize = cfg.get_or("parallel", 1)?;
    cfg.set(
        "architectures",
        architectures.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
    );
    cfg.set("parallel", parallel.to_string());
    let out = PathBuf::from(cfg.require("out")?);

    let records = if parallel <= 1 {
        cross_arch_sweep(
            &setup.graph_id,
            &setup.substrate,
            &setup.split,
            setup.graph.sensitive(),
            &architectures,
            &setup.seeds,
            &setup.train,
        )?
    } else {
        let cells: Vec<(Architecture, u64)> = architectures
            .iter()
            .flat_map(|&a| setup.seeds.iter().map(move |&s| (a, s)))
            .collect();
        let chunk = cells.len().div_ceil(parallel);
        let mut results: Vec<Result<Vec<MetricsRecord>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = cells
                .chunks(chunk.max(1))
                .map(|batch| {
                    let setup = &setup;
                    scope.spawn(move || {
                        batch
                            .iter()
                            .map(|&(arch, seed)| {
                                let train = TrainConfig {
                                    seed,
                                    ..setup.train.clone()
                                };
                                evaluate(
                                    &setup.graph_id,
                                    &setup.substrate,
                                    &setup.split,
                                    setup.graph.sensitive(),
                                    arch,
                                    &train,
                                )
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            for h in handles {
                results.push(h.join().expect("sweep worker panicked"));
            }
        });
        let mut merged = Vec::new();
        for r in results {
            merged.extend(r?);
        }
        merged.sort_by(|a, b| {
            (&a.graph_id, &a.architecture, a.seed).cmp(&(&b.graph_id, &b.architecture, b.seed))
        });
        merged
    };
    let records = finalize_records(records, setup.timings);
    write_text(&out.join("metrics.jsonl"), records_to_jsonl(&records))?;
    Ok(cfg)
}

fn cmd_report(mut cfg: KvConfig) -> Result<KvConfig> {
    cfg.check_known(&["metrics", "out"])?;
    let metrics_path = PathBuf::from(cfg.require("metrics")?);
    let out = PathBuf::from(cfg.require("out")?);
    let text = std::fs::read_to_string(&metrics_path)
        .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
    let records = records_from_jsonl(&text)?;
    let (report, scatter) = tradeoff_report(&records)?;
    write_text(&out.join("report.csv"), report)?;
    write_text(&out.join("scatter.csv"), scatter)?;
    cfg.set("metrics", metrics_path.display().to_string());
    Ok(cfg)
}
