use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use cfgd::augment::{AddedEdge, AugmentedGraph};
use cfgd::gcn::{Checkpoint, NodeFeatures};
use cfgd::graph::{load_graph, make_split, save_graph, Graph, SplitMasks};
use cfgd::noise::{generate_sbm, link_strategy_experiment, LinkStrategy, NoiseKind, NoiseRecord, NoiseSpec};
use cfgd::numerics::derive_seed;
use cfgd::trainer::{
    evaluate, predictions, prepare_graph, train, train_baseline, TrainConfig, TrainInputs,
};

use crate::args::*;
use crate::manifest::{graph_files, RunManifest};
use crate::UsageError;

/// Seed tag separating the noise stream from the training streams.
const NOISE_SEED_TAG: u64 = 100;

fn split_path(graph: &Path, split: &Option<PathBuf>) -> PathBuf {
    split.clone().unwrap_or_else(|| graph.join("split.json"))
}

fn load_split(graph: &Path, split: &Option<PathBuf>, g: &Graph) -> Result<(SplitMasks, PathBuf)> {
    let path = split_path(graph, split);
    let masks = SplitMasks::load(&path).with_context(|| format!("loading split {}", path.display()))?;
    masks.validate(g.num_nodes())?;
    Ok((masks, path))
}

fn write_split(g: &Graph, out: &Path, split: &SplitArgs, seed: u64) -> Result<()> {
    let masks = make_split(g, split.train_frac, split.val_frac, seed)?;
    masks.save(out.join("split.json"))?;
    Ok(())
}

pub fn prepare(source: PrepareSource) -> Result<()> {
    match source {
        PrepareSource::Sbm { out, classes, per_class, p_in, p_out, feat_dim, separation, seed, split } => {
            let g = generate_sbm(per_class, classes, p_in, p_out, feat_dim, separation, seed)?;
            save_graph(&g, &out)?;
            write_split(&g, &out, &split, seed)?;
            println!("wrote {} ({} nodes, {} edges)", out.display(), g.num_nodes(), g.num_edges());
        }
        PrepareSource::Graph { input, out, seed, split } => {
            let g = load_graph(&input).with_context(|| format!("loading {}", input.display()))?;
            save_graph(&g, &out)?;
            write_split(&g, &out, &split, seed)?;
            println!("wrote {} ({} nodes, {} edges)", out.display(), g.num_nodes(), g.num_edges());
        }
    }
    Ok(())
}

fn parse_kind(kind: &str) -> Result<NoiseKind> {
    kind.parse::<NoiseKind>().map_err(|e| UsageError(e.to_string()).into())
}

pub fn corrupt(a: CorruptArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.rate) {
        return Err(UsageError(format!("--rate {} outside [0, 1]", a.rate)).into());
    }
    let kind = parse_kind(&a.kind)?;
    let g = load_graph(&a.graph)?;
    let (masks, _) = load_split(&a.graph, &a.split, &g)?;
    let spec = NoiseSpec { kind, rate: a.rate, seed: a.seed, pair_map: a.pair_map };
    let record = spec.apply(g.labels(), &masks.train, g.num_classes())?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    record.save(&a.out)?;
    println!("flipped {} of {} training labels", record.flipped.len(), masks.train.len());
    Ok(())
}

/// Observed labels and clean flags: from a noise record, or the ground truth.
fn observed_labels(g: &Graph, noise: &Option<PathBuf>) -> Result<(Vec<usize>, Option<Vec<bool>>)> {
    match noise {
        Some(p) => {
            let r = NoiseRecord::load(p).with_context(|| format!("loading noise record {}", p.display()))?;
            if r.observed_labels.len() != g.num_nodes() {
                bail!("noise record covers {} nodes, graph has {}", r.observed_labels.len(), g.num_nodes());
            }
            let flags = r.clean_flags();
            Ok((r.observed_labels, Some(flags)))
        }
        None => Ok((g.labels().to_vec(), None)),
    }
}

#[derive(Serialize)]
struct TrainResult<'a> {
    method: &'a str,
    best_epoch: usize,
    val_acc: f64,
    test_acc: f64,
    added_edges: usize,
    config: &'a TrainConfig,
}

#[derive(Serialize)]
struct BaselineEpoch {
    epoch: usize,
    loss: f64,
    val_acc: f64,
    test_acc: f64,
}

fn edges_tensor(added: &[AddedEdge]) -> Vec<f64> {
    added.iter().flat_map(|e| [e.src as f64, e.dst as f64, e.weight]).collect()
}

pub fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let g = load_graph(&a.graph).with_context(|| format!("loading {}", a.graph.display()))?;
    let (masks, split_file) = load_split(&a.graph, &a.split, &g)?;
    let (observed, flags) = observed_labels(&g, &a.noise)?;
    let mut inputs = graph_files(&a.graph);
    inputs.push(split_file);
    inputs.extend(a.noise.clone());
    let mut manifest = RunManifest::begin(&a.out, "train", serde_json::to_value(&cfg)?, Some(cfg.seed), &inputs)?;
    let inp = TrainInputs { graph: &g, observed: &observed, masks: &masks, clean_truth: flags.as_deref() };

    let mut ckpt = Checkpoint::default();
    let (best_epoch, val_acc, test_acc, added, history_json) = match a.method {
        Method::Cfgd => {
            let out = train(inp, &cfg)?;
            let b = &out.best;
            ckpt.push_gcn("gcn1", &b.model.gcn1);
            ckpt.push_gcn("gcn2", &b.model.gcn2);
            if let Some(e) = &b.encoder {
                ckpt.push_gcn("encoder", &e.encoder);
            }
            (b.epoch, b.val_acc, b.test_acc, b.augmented.added.clone(), serde_json::to_string_pretty(&out.history)?)
        }
        Method::Gcn => {
            let out = train_baseline(inp, None, &cfg)?;
            ckpt.push_gcn("gcn1", &out.params);
            let hist: Vec<BaselineEpoch> = out
                .history
                .iter()
                .enumerate()
                .map(|(epoch, &(loss, val_acc, test_acc))| BaselineEpoch { epoch, loss, val_acc, test_acc })
                .collect();
            (out.best_epoch, out.val_acc, out.test_acc, Vec::new(), serde_json::to_string_pretty(&hist)?)
        }
    };
    if !(val_acc.is_finite() && test_acc.is_finite()) {
        bail!("non-finite accuracy (val {val_acc}, test {test_acc})");
    }
    ckpt.push("augmented_edges", vec![added.len(), 3], edges_tensor(&added));
    ckpt.meta = json!({
        "method": a.method.name(),
        "epoch": best_epoch,
        "val_acc": val_acc,
        "test_acc": test_acc,
        "config": cfg,
    });

    let history_path = a.out.join("history.json");
    fs::write(&history_path, history_json)?;
    manifest.output(&history_path);
    let ckpt_path = a.out.join("model.ckpt");
    ckpt.save(&ckpt_path)?;
    manifest.output(&ckpt_path);
    let edges_path = a.out.join("augmented_edges.csv");
    let mut csv = String::from("epoch,src,dst,weight\n");
    for e in &added {
        writeln!(csv, "{best_epoch},{},{},{}", e.src, e.dst, e.weight)?;
    }
    fs::write(&edges_path, csv)?;
    manifest.output(&edges_path);
    let result = TrainResult { method: a.method.name(), best_epoch, val_acc, test_acc, added_edges: added.len(), config: &cfg };
    let result_path = a.out.join("result.json");
    fs::write(&result_path, serde_json::to_string_pretty(&result)?)?;
    manifest.output(&result_path);
    manifest.finish()?;
    println!("{}", serde_json::to_string(&json!({"best_epoch": best_epoch, "val_acc": val_acc, "test_acc": test_acc}))?);
    Ok(())
}

pub fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.meta["config"].clone()).context("checkpoint config")?;
    let g = load_graph(&a.graph)?;
    let (masks, _) = load_split(&a.graph, &a.split, &g)?;
    let prepared = prepare_graph(&g, &cfg);
    let t = ckpt.get("augmented_edges")?;
    let added = t
        .data
        .chunks_exact(3)
        .map(|c| AddedEdge { src: c[0] as usize, dst: c[1] as usize, weight: c[2] })
        .collect();
    let adj = AugmentedGraph::from_added(&prepared, added)?.normalized(&prepared)?;
    let gcn1 = ckpt.gcn("gcn1")?;
    let x = NodeFeatures::new(prepared.features());
    let probs = cfgd::gcn::forward(&adj, &x, &gcn1)?.probs;
    let pred = predictions(&probs);
    let test_acc = evaluate(&pred, g.labels(), &masks.test)?;
    let val_acc = evaluate(&pred, g.labels(), &masks.val)?;
    let out = json!({
        "val_acc": val_acc,
        "test_acc": test_acc,
        "recorded_test_acc": ckpt.meta["test_acc"],
    });
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&out)?)?;
    }
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn dataset_name(graph: &Path) -> String {
    let dir = if graph.is_dir() { graph } else { graph.parent().unwrap_or(graph) };
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "graph".into())
}

/// Split, noise and config for one seed of a sweep.
struct Point {
    masks: SplitMasks,
    record: NoiseRecord,
    cfg: TrainConfig,
}

fn make_point(g: &Graph, sweep: &SweepArgs, base: &TrainConfig, kind: NoiseKind, rate: f64, seed: u64) -> Result<Point> {
    let masks = make_split(g, sweep.split.train_frac, sweep.split.val_frac, seed)?;
    let spec = NoiseSpec { kind, rate, seed: derive_seed(seed, NOISE_SEED_TAG), pair_map: None };
    let record = spec.apply(g.labels(), &masks.train, g.num_classes())?;
    let cfg = TrainConfig { seed, ..base.clone() };
    Ok(Point { masks, record, cfg })
}

fn run_method(g: &Graph, p: &Point, method: Method, cfg: &TrainConfig) -> Result<f64> {
    let flags = p.record.clean_flags();
    let inp = TrainInputs { graph: g, observed: &p.record.observed_labels, masks: &p.masks, clean_truth: Some(&flags) };
    let acc = match method {
        Method::Cfgd => train(inp, cfg)?.best.test_acc,
        Method::Gcn => train_baseline(inp, None, cfg)?.test_acc,
    };
    if !acc.is_finite() {
        bail!("non-finite accuracy");
    }
    Ok(acc)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn seeds(s: &SweepArgs) -> Vec<u64> {
    (s.seed_offset..s.seed_offset + s.seeds).collect()
}

fn sweep_start(s: &SweepArgs, command: &str, cfg: &TrainConfig, extra: serde_json::Value) -> Result<(Graph, RunManifest)> {
    if s.seeds == 0 {
        return Err(UsageError("--seeds must be at least 1".into()).into());
    }
    let g = load_graph(&s.graph).with_context(|| format!("loading {}", s.graph.display()))?;
    let config = json!({"train": cfg, "split": {"train_frac": s.split.train_frac, "val_frac": s.split.val_frac}, "sweep": extra});
    let manifest = RunManifest::begin(&s.out, command, config, None, &graph_files(&s.graph))?;
    Ok((g, manifest))
}

fn write_csv(manifest: &mut RunManifest, path: PathBuf, body: String) -> Result<()> {
    fs::write(&path, body).with_context(|| format!("{}", path.display()))?;
    manifest.output(&path);
    Ok(())
}

/// `(kind, rate, seed, method, test accuracy)` for one run.
type BenchRow = (NoiseKind, f64, u64, Method, f64);

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let base = a.sweep.cfg.resolve()?;
    let kinds: Vec<NoiseKind> = a.kinds.iter().map(|k| parse_kind(k)).collect::<Result<_>>()?;
    for &r in &a.rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(UsageError(format!("rate {r} outside [0, 1]")).into());
        }
    }
    let extra = json!({"kinds": a.kinds, "rates": a.rates, "seeds": seeds(&a.sweep),
        "methods": a.methods.iter().map(|m| m.name()).collect::<Vec<_>>()});
    let (g, mut manifest) = sweep_start(&a.sweep, "benchmark", &base, extra)?;
    let dataset = dataset_name(&a.sweep.graph);
    let seed_list = seeds(&a.sweep);
    let mut grid: Vec<(NoiseKind, f64, u64)> = Vec::new();
    for &k in &kinds {
        for &r in &a.rates {
            grid.extend(seed_list.iter().map(|&s| (k, r, s)));
        }
    }
    let results: Vec<Vec<BenchRow>> = grid
        .par_iter()
        .map(|&(kind, rate, seed)| -> Result<_> {
            let point = make_point(&g, &a.sweep, &base, kind, rate, seed)?;
            a.methods
                .iter()
                .map(|&m| {
                    let acc = run_method(&g, &point, m, &point.cfg)?;
                    log::info!("{dataset} {kind} {rate} seed {seed} {}: {acc:.4}", m.name());
                    Ok((kind, rate, seed, m, acc))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<_> = results.into_iter().flatten().collect();

    let mut runs = String::from("dataset,noise_kind,rate,seed,method,accuracy\n");
    for (kind, rate, seed, m, acc) in &rows {
        writeln!(runs, "{dataset},{kind},{rate},{seed},{},{acc}", m.name())?;
    }
    write_csv(&mut manifest, a.sweep.out.join("runs.csv"), runs)?;
    let mut summary = String::from("dataset,noise_kind,rate,method,n,mean,std\n");
    for &kind in &kinds {
        for &rate in &a.rates {
            for &m in &a.methods {
                let accs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.0 == kind && r.1 == rate && r.3 == m)
                    .map(|r| r.4)
                    .collect();
                let (mean, std) = mean_std(&accs);
                writeln!(summary, "{dataset},{kind},{rate},{},{},{mean},{std}", m.name(), accs.len())?;
            }
        }
    }
    print!("{summary}");
    write_csv(&mut manifest, a.sweep.out.join("summary.csv"), summary)?;
    manifest.finish()
}

pub fn linkexp(a: LinkexpArgs) -> Result<()> {
    let base = a.sweep.cfg.resolve()?;
    let kind = parse_kind(&a.kind)?;
    if !(0.0..=1.0).contains(&a.rate) {
        return Err(UsageError(format!("--rate {} outside [0, 1]", a.rate)).into());
    }
    let extra = json!({"kind": a.kind, "rate": a.rate, "k": a.k, "seeds": seeds(&a.sweep)});
    let (g, mut manifest) = sweep_start(&a.sweep, "linkexp", &base, extra)?;
    let dataset = dataset_name(&a.sweep.graph);
    let rows: Vec<Vec<(u64, cfgd::noise::LinkResult)>> = seeds(&a.sweep)
        .par_iter()
        .map(|&seed| -> Result<_> {
            let p = make_point(&g, &a.sweep, &base, kind, a.rate, seed)?;
            LinkStrategy::ALL
                .iter()
                .map(|&s| {
                    let r = link_strategy_experiment(&g, &p.record, &p.masks, s, a.k, &p.cfg)?;
                    log::info!("{dataset} seed {seed} {s}: acc {:.4}, noisy {:.4}", r.test_accuracy, r.noisy_neighbor_fraction);
                    Ok((seed, r))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("dataset,noise_kind,rate,seed,strategy,test_accuracy,noisy_neighbor_fraction,added_edges\n");
    for (seed, r) in rows.iter().flatten() {
        writeln!(
            csv,
            "{dataset},{kind},{},{seed},{},{},{},{}",
            a.rate, r.strategy, r.test_accuracy, r.noisy_neighbor_fraction, r.added_edges
        )?;
    }
    print!("{csv}");
    write_csv(&mut manifest, a.sweep.out.join("linkexp.csv"), csv)?;
    manifest.finish()
}

pub const ABLATIONS: [&str; 4] = ["full", "w/o GMM", "w/o PL", "w/o CR"];

pub fn ablation_config(base: &TrainConfig, variant: &str) -> TrainConfig {
    let mut c = base.clone();
    match variant {
        "w/o GMM" => c.use_gmm = false,
        "w/o PL" => c.use_fine = false,
        "w/o CR" => c.use_reg = false,
        _ => {}
    }
    c
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.sweep.cfg.resolve()?;
    let kind = parse_kind(&a.kind)?;
    if !(0.0..=1.0).contains(&a.rate) {
        return Err(UsageError(format!("--rate {} outside [0, 1]", a.rate)).into());
    }
    let extra = json!({"kind": a.kind, "rate": a.rate, "seeds": seeds(&a.sweep), "variants": ABLATIONS});
    let (g, mut manifest) = sweep_start(&a.sweep, "ablate", &base, extra)?;
    let dataset = dataset_name(&a.sweep.graph);
    let rows: Vec<Vec<(u64, &str, f64)>> = seeds(&a.sweep)
        .par_iter()
        .map(|&seed| -> Result<_> {
            let p = make_point(&g, &a.sweep, &base, kind, a.rate, seed)?;
            ABLATIONS
                .iter()
                .map(|&v| {
                    let acc = run_method(&g, &p, Method::Cfgd, &ablation_config(&p.cfg, v))?;
                    log::info!("{dataset} seed {seed} {v}: {acc:.4}");
                    Ok((seed, v, acc))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let mut runs = String::from("dataset,noise_kind,rate,seed,variant,accuracy\n");
    for (seed, v, acc) in &rows {
        writeln!(runs, "{dataset},{kind},{},{seed},{v},{acc}", a.rate)?;
    }
    write_csv(&mut manifest, a.sweep.out.join("ablation_runs.csv"), runs)?;
    let mut summary = String::from("dataset,noise_kind,rate,variant,n,mean,std\n");
    for v in ABLATIONS {
        let accs: Vec<f64> = rows.iter().filter(|r| r.1 == v).map(|r| r.2).collect();
        let (mean, std) = mean_std(&accs);
        writeln!(summary, "{dataset},{kind},{},{v},{},{mean},{std}", a.rate, accs.len())?;
    }
    print!("{summary}");
    write_csv(&mut manifest, a.sweep.out.join("ablation.csv"), summary)?;
    manifest.finish()
}
