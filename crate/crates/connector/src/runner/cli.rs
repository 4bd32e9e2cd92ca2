//! The `connector` batch CLI: train / evaluate / walk / export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::loaders::{self, FileRole, GraphKind};
use crate::logging::info_log;
use crate::runner::{
    evaluate_node_classification, generate_walks, parse_config, save_checkpoint,
    save_embeddings, save_matrix_embeddings, train_model, RunConfig,
};

const USAGE: &str = "usage: connector <train|evaluate|walk|export> [flags]
  common flags:
    --config PATH     run configuration (JSON); a manifest also works
    --seed INT        override the config seed
    --threads INT     override the worker-thread cap
    --deterministic   force single-threaded, bit-reproducible execution
    --out DIR         override the output directory
  evaluate flags:
    --task NAME       evaluation task (node-classification)
    --embeddings PATH word2vec-format embedding file
    --labels PATH     label file (token class per line)
    --ratio FLOAT     stratified train ratio (default 0.5)
  environment:
    CONNECTOR_LOG     error | warn | info | debug";

#[derive(Debug, Default)]
struct Flags {
    config: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    deterministic: bool,
    out: Option<PathBuf>,
    task: Option<String>,
    embeddings: Option<PathBuf>,
    labels: Option<PathBuf>,
    ratio: Option<f64>,
}

fn parse_flags(args: &[String]) -> Result<Flags> {
    let mut flags = Flags::default();
    let mut i = 0;
    let value = |i: &mut usize, name: &str| -> Result<String> {
        *i += 1;
        args.get(*i)
            .cloned()
            .ok_or_else(|| Error::usage(format!("flag {name} needs a value")))
    };
    while i < args.len() {
        match args[i].as_str() {
            "--config" => flags.config = Some(PathBuf::from(value(&mut i, "--config")?)),
            "--seed" => {
                let v = value(&mut i, "--seed")?;
                flags.seed = Some(v.parse().map_err(|_| {
                    Error::usage(format!("--seed expects an integer, found {v:?}"))
                })?);
            }
            "--threads" => {
                let v = value(&mut i, "--threads")?;
                flags.threads = Some(v.parse().map_err(|_| {
                    Error::usage(format!("--threads expects an integer, found {v:?}"))
                })?);
            }
            "--deterministic" => flags.deterministic = true,
            "--out" => flags.out = Some(PathBuf::from(value(&mut i, "--out")?)),
            "--task" => flags.task = Some(value(&mut i, "--task")?),
            "--embeddings" => flags.embeddings = Some(PathBuf::from(value(&mut i, "--embeddings")?)),
            "--labels" => flags.labels = Some(PathBuf::from(value(&mut i, "--labels")?)),
            "--ratio" => {
                let v = value(&mut i, "--ratio")?;
                flags.ratio = Some(v.parse().map_err(|_| {
                    Error::usage(format!("--ratio expects a number, found {v:?}"))
                })?);
            }
            other => return Err(Error::usage(format!("unknown flag {other:?}\n{USAGE}"))),
        }
        i += 1;
    }
    Ok(flags)
}

fn load_config(flags: &Flags) -> Result<RunConfig> {
    let path = flags
        .config
        .as_ref()
        .ok_or_else(|| Error::usage("--config PATH is required"))?;
    let mut cfg = parse_config(path)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = flags.threads {
        cfg.threads = threads;
    }
    if flags.deterministic {
        cfg.deterministic = true;
    }
    if let Some(out) = &flags.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_manifest(cfg: &RunConfig) -> Result<()> {
    let manifest = json!({
        "format_version": 1,
        "connector_version": env!("CARGO_PKG_VERSION"),
        "config": cfg.to_json(),
    });
    let path = cfg.output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap() + "\n")
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

fn write_metrics(dir: &Path, metrics: &[(String, Value)]) -> Result<()> {
    let mut txt = String::new();
    let mut obj = serde_json::Map::new();
    for (k, v) in metrics {
        txt.push_str(&format!("{k} {v}\n"));
        obj.insert(k.clone(), v.clone());
    }
    fs::write(dir.join("metrics.txt"), txt)
        .map_err(|e| Error::data(format!("cannot write metrics.txt: {e}")))?;
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&Value::Object(obj)).unwrap() + "\n",
    )
    .map_err(|e| Error::data(format!("cannot write metrics.json: {e}")))
}

fn cmd_train(flags: &Flags) -> Result<()> {
    let cfg = load_config(flags)?;
    ensure_out_dir(&cfg.output_dir)?;
    write_manifest(&cfg)?;
    let artifacts = train_model(&cfg)?;
    save_embeddings(
        &cfg.output_dir.join("embeddings.txt"),
        &artifacts.embedding,
        &artifacts.tokens,
    )?;
    for (stem, tokens, matrix) in &artifacts.extra_embeddings {
        save_matrix_embeddings(&cfg.output_dir.join(format!("{stem}.txt")), matrix, tokens)?;
    }
    if let Some(cp) = &artifacts.checkpoint {
        save_checkpoint(&cfg.output_dir.join("checkpoint.json"), cp)?;
    }
    write_metrics(&cfg.output_dir, &artifacts.metrics)?;
    for (k, v) in &artifacts.metrics {
        println!("{k} {v}");
    }
    info_log!("run artifacts written to {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_evaluate(flags: &Flags) -> Result<()> {
    let task = flags
        .task
        .as_deref()
        .ok_or_else(|| Error::usage("--task NAME is required for evaluate"))?;
    match task {
        "node-classification" => {
            let embeddings = flags
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::usage("--embeddings PATH is required"))?;
            let labels = flags
                .labels
                .as_ref()
                .ok_or_else(|| Error::usage("--labels PATH is required"))?;
            let ratio = flags.ratio.unwrap_or(0.5);
            let seed = flags.seed.unwrap_or(42);
            let m = evaluate_node_classification(embeddings, labels, ratio, seed)?;
            let metrics = vec![
                ("accuracy".to_string(), json!(m.accuracy)),
                ("micro_f1".to_string(), json!(m.micro_f1)),
                ("macro_f1".to_string(), json!(m.macro_f1)),
            ];
            for (k, v) in &metrics {
                println!("{k} {v}");
            }
            if let Some(out) = &flags.out {
                ensure_out_dir(out)?;
                write_metrics(out, &metrics)?;
            }
            Ok(())
        }
        other => Err(Error::usage(format!(
            "unknown task {other:?}; supported: node-classification"
        ))),
    }
}

fn cmd_walk(flags: &Flags) -> Result<()> {
    let cfg = load_config(flags)?;
    ensure_out_dir(&cfg.output_dir)?;
    write_manifest(&cfg)?;
    let (tokens, corpus) = generate_walks(&cfg)?;
    let mut out = String::new();
    for walk in &corpus.walks {
        let line: Vec<&str> = walk.iter().map(|&n| tokens[n].as_str()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let path = cfg.output_dir.join("walks.txt");
    fs::write(&path, out).map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    println!("walks {}", corpus.walks.len());
    println!("tokens {}", corpus.num_tokens());
    Ok(())
}

fn cmd_export(flags: &Flags) -> Result<()> {
    let cfg = load_config(flags)?;
    let spec = cfg
        .graph
        .as_ref()
        .ok_or_else(|| Error::usage("config has no \"graph\" section"))?;
    spec.validate()?;
    ensure_out_dir(&cfg.output_dir)?;
    write_manifest(&cfg)?;
    fn edges(spec: &loaders::DatasetSpec) -> Result<&Path> {
        spec.path(FileRole::Edges)
            .ok_or_else(|| Error::usage("dataset has no edges file"))
    }
    match spec.kind {
        GraphKind::Homogeneous => {
            let lg = loaders::load_edge_list(edges(spec)?, spec.directed, spec.weighted)?;
            let mut out = String::new();
            for (u, v, w) in lg.graph.arcs() {
                if !spec.directed && u > v {
                    continue;
                }
                if spec.weighted {
                    out.push_str(&format!(
                        "{}\t{}\t{w}\n",
                        lg.tokens.token(u),
                        lg.tokens.token(v)
                    ));
                } else {
                    out.push_str(&format!("{}\t{}\n", lg.tokens.token(u), lg.tokens.token(v)));
                }
            }
            fs::write(cfg.output_dir.join("edges.tsv"), out)
                .map_err(|e| Error::data(format!("cannot write edges.tsv: {e}")))?;
        }
        GraphKind::Signed => {
            let ls = loaders::load_signed_edge_list(edges(spec)?)?;
            let mut out = String::new();
            for u in 0..ls.graph.base.num_nodes() {
                let (targets, signs) = ls.graph.signed_neighbors(u);
                for (&v, &s) in targets.iter().zip(signs) {
                    out.push_str(&format!(
                        "{}\t{}\t{s}\n",
                        ls.tokens.token(u),
                        ls.tokens.token(v)
                    ));
                }
            }
            fs::write(cfg.output_dir.join("edges.tsv"), out)
                .map_err(|e| Error::data(format!("cannot write edges.tsv: {e}")))?;
        }
        GraphKind::Heterogeneous => {
            let nodes = spec
                .path(FileRole::Nodes)
                .ok_or_else(|| Error::usage("heterogeneous dataset needs a nodes file"))?;
            let lh = loaders::load_hetero(nodes, edges(spec)?)?;
            let mut nodes_out = String::new();
            for u in 0..lh.graph.base.num_nodes() {
                nodes_out.push_str(&format!(
                    "{}\t{}\n",
                    lh.tokens.token(u),
                    lh.graph.type_names()[lh.graph.node_type(u)]
                ));
            }
            fs::write(cfg.output_dir.join("nodes.tsv"), nodes_out)
                .map_err(|e| Error::data(format!("cannot write nodes.tsv: {e}")))?;
            let mut out = String::new();
            for (u, v, _) in lh.graph.base.arcs() {
                if u > v {
                    continue;
                }
                out.push_str(&format!("{}\t{}\n", lh.tokens.token(u), lh.tokens.token(v)));
            }
            fs::write(cfg.output_dir.join("edges.tsv"), out)
                .map_err(|e| Error::data(format!("cannot write edges.tsv: {e}")))?;
        }
        GraphKind::Knowledge => {
            let need = |role: FileRole| {
                spec.path(role).ok_or_else(|| {
                    Error::usage(format!("knowledge dataset needs a {role:?} file"))
                })
            };
            let kg = loaders::load_triples(
                need(FileRole::Train)?,
                need(FileRole::Valid)?,
                need(FileRole::Test)?,
            )?;
            let mut out = String::new();
            for (split, triples) in [
                ("train", &kg.train),
                ("valid", &kg.valid),
                ("test", &kg.test),
            ] {
                for t in triples {
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{split}\n",
                        kg.entity_names[t.head], kg.relation_names[t.rel], kg.entity_names[t.tail]
                    ));
                }
            }
            fs::write(cfg.output_dir.join("triples.tsv"), out)
                .map_err(|e| Error::data(format!("cannot write triples.tsv: {e}")))?;
        }
    }
    info_log!("export written to {}", cfg.output_dir.display());
    Ok(())
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(sub) = args.first() else {
        return Err(Error::usage(USAGE));
    };
    let flags = parse_flags(&args[1..])?;
    match sub.as_str() {
        "train" => cmd_train(&flags),
        "evaluate" => cmd_evaluate(&flags),
        "walk" => cmd_walk(&flags),
        "export" => cmd_export(&flags),
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(Error::usage(format!("unknown subcommand {other:?}\n{USAGE}"))),
    }
}

/// CLI entry point; returns the process exit code.
pub fn run_command(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
