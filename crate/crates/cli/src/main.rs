mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::FileConfig;
use dualtree::dataset::{load_bow, load_labels, smooth, write_bow, write_labels, BowFormat, LabelSet, SmoothedMatrix};
use dualtree::divergence::{DivergenceKind, DivergenceSpec};
use dualtree::experiment::{
    accuracy_sweep, approximate, resolve_spec, scaling_sweep, stratified_labeled, write_csv_file, write_scaling_csv,
    write_sweep_csv, MethodOptions, MethodRegistry, PhaseTimes, SweepConfig,
};
use dualtree::model::ModelFile;
use dualtree::partition::{StrategyOptions, DEFAULT_FINEST_CAP};
use dualtree::propagation::{
    classify_one_vs_all, dense_transition_matrix, initial_labels, per_class_accuracy, propagate_labels,
    evaluate_accuracy, PropagationConfig, TransitionOperator, DEFAULT_DENSE_CAP,
};
use dualtree::synthetic::{generate_synthetic, SyntheticSpec};
use dualtree::variational::exact_loglik;

const DEFAULT_EPSILON: f64 = 0.5;
const DEFAULT_FRACTION: f64 = 0.05;

#[derive(Parser)]
#[command(name = "dualtree", version, about = "Block-partitioned random-walk transition matrices over Bregman anchor trees")]
struct Cli {
    /// key = value file supplying defaults for any long flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Poisson-multinomial topic corpus with labels
    Synth(SynthArgs),
    /// Build a tree, a block partition and optimized block parameters
    Approximate(ApproximateArgs),
    /// Propagate a labeled subset over a fitted model
    Propagate(PropagateArgs),
    /// Accuracy sweep over labeled fractions, with an optional scaling run
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct DivergenceArgs {
    /// sq-euclidean, mahalanobis, gid, kl, itakura-saito or logistic
    #[arg(long)]
    divergence: Option<String>,
    /// Bandwidth for sq-euclidean (default: median pair distance)
    #[arg(long)]
    sigma: Option<f64>,
    /// Additive count smoothing
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated diagonal covariance for mahalanobis
    #[arg(long)]
    covariance: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Mean document length
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the shared Zipf background in each component
    #[arg(long)]
    background: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ApproximateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// uci-bow or dense-csv
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    div: DivergenceArgs,
    /// coarsest, refine:k or finest
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also compute the exact log-likelihood
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    max_exact_n: Option<usize>,
    #[arg(long)]
    max_finest_n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the dense transition matrix of --input instead of the model's Q
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    max_exact_n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    div: DivergenceArgs,
    /// Comma-separated methods, e.g. bvdt:gid,exact:gid
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated labeled fractions
    #[arg(long, alias = "labeled-fraction")]
    fractions: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also run the exact method for each divergence in --methods
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    max_exact_n: Option<usize>,
    #[arg(long)]
    max_finest_n: Option<usize>,
    /// Comma-separated row counts for a timing sweep over leading rows
    #[arg(long)]
    scaling: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Approximate(a) => cmd_approximate(a, &cfg),
        Command::Propagate(a) => cmd_propagate(a, &cfg),
        Command::Experiment(a) => cmd_experiment(a, &cfg),
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.with_context(|| format!("--{key} is required (flag or config key)"))
}

fn out_dir(flag: Option<PathBuf>, cfg: &FileConfig) -> Result<PathBuf> {
    let dir = cfg.pick(flag, "out")?.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow::anyhow!("bad {what} '{s}'")))
        .collect()
}

fn load_data(input: Option<PathBuf>, format: Option<String>, cfg: &FileConfig) -> Result<(PathBuf, dualtree::dataset::DataMatrix)> {
    let path = required(cfg.pick(input, "input")?, "input")?;
    let format: BowFormat = cfg.pick(format, "format")?.unwrap_or_else(|| "uci-bow".into()).parse()?;
    let data = load_bow(&path, format).with_context(|| format!("loading {}", path.display()))?;
    Ok((path, data))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(a: SynthArgs, cfg: &FileConfig) -> Result<()> {
    let k = cfg.pick(a.k, "k")?.unwrap_or(3);
    let dim = cfg.pick(a.dim, "dim")?.unwrap_or(200);
    let n = cfg.pick(a.n, "n")?.unwrap_or(1500);
    let lambda = cfg.pick(a.lambda, "lambda")?.unwrap_or(80.0);
    let background = cfg.pick(a.background, "background")?.unwrap_or(0.5);
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(1);
    let dir = out_dir(a.out, cfg)?;

    let spec = SyntheticSpec::topics(k, dim, lambda, background, n, seed)?;
    let (data, labels) = generate_synthetic(&spec)?;
    write_bow(&data, &dir.join("data.bow"))?;
    write_labels(&labels, data.ids(), &dir.join("labels.csv"))?;

    let mut counts = vec![0usize; labels.n_classes()];
    for c in labels.assignments.values() {
        counts[*c] += 1;
    }
    let total: f64 = data.rows().iter().map(|r| r.sum()).sum();
    println!("N={} d={} K={}", data.n_rows(), data.n_cols(), labels.n_classes());
    for (name, c) in labels.classes.iter().zip(&counts) {
        println!("class {name}: {c}");
    }
    println!("mean document length {:.3}", total / data.n_rows() as f64);
    println!("wrote {} and {}", dir.join("data.bow").display(), dir.join("labels.csv").display());
    Ok(())
}

/// Divergence kind and smoothing chosen by flags or config, with σ resolved
/// against the data.
fn divergence_spec(a: &DivergenceArgs, cfg: &FileConfig, raw: dualtree::dataset::DataMatrix, seed: u64) -> Result<(SmoothedMatrix, DivergenceSpec)> {
    let kind: DivergenceKind = cfg.pick(a.divergence.clone(), "divergence")?.unwrap_or_else(|| "gid".into()).parse()?;
    let epsilon = cfg.pick(a.epsilon, "epsilon")?.unwrap_or(DEFAULT_EPSILON);
    let sigma = cfg.pick(a.sigma, "sigma")?;
    let data = smooth(raw, epsilon);
    let mut spec = resolve_spec(kind, &data, sigma, seed);
    if let Some(cov) = cfg.pick(a.covariance.clone(), "covariance")? {
        spec.covariance_diag = parse_list(&cov, "covariance entry")?;
    }
    spec.validate()?;
    Ok((data, spec))
}

#[derive(Serialize)]
struct BuildReport {
    input: String,
    n: usize,
    dim: usize,
    divergence: String,
    epsilon: f64,
    sigma: Option<f64>,
    covariance_diag: Option<Vec<f64>>,
    partition: String,
    n_blocks: usize,
    ell: f64,
    constant: f64,
    divergence_term: f64,
    entropy: f64,
    constraint_residual: f64,
    exact_loglik: Option<f64>,
    gap: Option<f64>,
    seconds: PhaseSeconds,
}

#[derive(Serialize)]
struct PhaseSeconds {
    tree: f64,
    partition: f64,
    optimize: f64,
    exact: Option<f64>,
}

impl PhaseSeconds {
    fn from(t: &PhaseTimes) -> Self {
        PhaseSeconds {
            tree: t.tree,
            partition: t.partition,
            optimize: t.optimize,
            exact: None,
        }
    }
}

fn cmd_approximate(a: ApproximateArgs, cfg: &FileConfig) -> Result<()> {
    let (path, raw) = load_data(a.input, a.format, cfg)?;
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(0);
    let mode = cfg.pick(a.partition, "partition")?.unwrap_or_else(|| "coarsest".into());
    let exact = cfg.flag(a.exact, "exact")?;
    let max_exact_n = cfg.pick(a.max_exact_n, "max-exact-n")?.unwrap_or(DEFAULT_DENSE_CAP);
    let finest_cap = cfg.pick(a.max_finest_n, "max-finest-n")?.unwrap_or(DEFAULT_FINEST_CAP);
    let dir = out_dir(a.out, cfg)?;
    let ids = raw.ids().to_vec();
    let (data, spec) = divergence_spec(&a.div, cfg, raw, seed)?;
    if exact && data.n_rows() > max_exact_n {
        bail!("exact log-likelihood requested for N={} above --max-exact-n {max_exact_n}", data.n_rows());
    }

    let approx = approximate(&data, &spec, &mode, &StrategyOptions { finest_cap })?;
    let mut seconds = PhaseSeconds::from(&approx.times);
    let exact_ll = if exact {
        let t = Instant::now();
        let ll = exact_loglik(&data, &spec.build()?)?;
        seconds.exact = Some(t.elapsed().as_secs_f64());
        Some(ll)
    } else {
        None
    };
    let report = BuildReport {
        input: path.display().to_string(),
        n: data.n_rows(),
        dim: data.n_cols(),
        divergence: spec.kind.to_string(),
        epsilon: spec.epsilon,
        sigma: (spec.kind == DivergenceKind::SqEuclidean).then_some(spec.sigma),
        covariance_diag: (spec.kind == DivergenceKind::Mahalanobis).then(|| spec.covariance_diag.clone()),
        partition: mode.clone(),
        n_blocks: approx.partition.len(),
        ell: approx.report.ell,
        constant: approx.report.constant,
        divergence_term: approx.report.divergence_term,
        entropy: approx.report.entropy,
        constraint_residual: approx.fit.params.residual,
        exact_loglik: exact_ll,
        gap: exact_ll.map(|e| e - approx.report.ell),
        seconds,
    };
    let model = ModelFile::new(spec, mode, ids, approx.tree, approx.partition, approx.fit.params, approx.report);
    model.save(&dir.join("model.json"))?;
    write_json(&dir.join("report.json"), &report)?;

    println!("blocks {}", report.n_blocks);
    println!("lower bound {:.10}", report.ell);
    if let (Some(e), Some(g)) = (report.exact_loglik, report.gap) {
        println!("exact log-likelihood {e:.10} (gap {g:.3e})");
    }
    println!("constraint residual {:.3e}", report.constraint_residual);
    if let Some(sigma) = report.sigma {
        println!("sigma {sigma}");
    }
    println!(
        "seconds: tree {:.3}, partition {:.3}, optimize {:.3}",
        report.seconds.tree, report.seconds.partition, report.seconds.optimize
    );
    Ok(())
}

/// Truth class per row; every row must be labeled.
fn full_truth(labels: &LabelSet, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| labels.get(id).with_context(|| format!("no label for row id '{id}'")))
        .collect()
}

#[derive(Serialize)]
struct Metrics {
    accuracy: f64,
    per_class_accuracy: BTreeMap<String, Option<f64>>,
    n_labeled: usize,
    n_unlabeled: usize,
    unreached: usize,
    config: PropagateEcho,
    seconds: f64,
}

#[derive(Serialize)]
struct PropagateEcho {
    model: String,
    operator: String,
    alpha: f64,
    iterations: usize,
    labeled_fraction: f64,
    seed: u64,
}

fn cmd_propagate(a: PropagateArgs, cfg: &FileConfig) -> Result<()> {
    let model_path = required(cfg.pick(a.model, "model")?, "model")?;
    let labels_path = required(cfg.pick(a.labels, "labels")?, "labels")?;
    let fraction = cfg.pick(a.labeled_fraction, "labeled-fraction")?.unwrap_or(DEFAULT_FRACTION);
    let defaults = PropagationConfig::default();
    let prop = PropagationConfig {
        alpha: cfg.pick(a.alpha, "alpha")?.unwrap_or(defaults.alpha),
        iterations: cfg.pick(a.iters, "iters")?.unwrap_or(defaults.iterations),
    };
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(0);
    let exact = cfg.flag(a.exact, "exact")?;
    let dir = out_dir(a.out, cfg)?;

    let model = ModelFile::load(&model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let labels = load_labels(&labels_path)?;
    let truth = full_truth(&labels, &model.ids)?;
    let labeled = stratified_labeled(&truth, labels.n_classes(), fraction, seed)?;

    let t = Instant::now();
    let op: Box<dyn TransitionOperator> = if exact {
        let (_, raw) = load_data(a.input, a.format, cfg)?;
        if raw.ids() != model.ids.as_slice() {
            bail!("--input rows do not match the model's rows");
        }
        let cap = cfg.pick(a.max_exact_n, "max-exact-n")?.unwrap_or(DEFAULT_DENSE_CAP);
        let data = smooth(raw, model.spec.epsilon);
        Box::new(dense_transition_matrix(&data, &model.spec.build()?, cap)?)
    } else {
        Box::new(model.transition_model()?)
    };
    let given: Vec<Option<usize>> = truth.iter().zip(&labeled).map(|(&t, &l)| l.then_some(t)).collect();
    let scores = propagate_labels(op.as_ref(), &initial_labels(&given, labels.n_classes())?, &prop)?;
    let cls = classify_one_vs_all(&scores)?;
    let seconds = t.elapsed().as_secs_f64();
    let accuracy = evaluate_accuracy(&cls.classes, &truth, &labeled)?;

    let pred_path = dir.join("predictions.csv");
    let mut w = std::io::BufWriter::new(fs::File::create(&pred_path)?);
    writeln!(w, "id,predicted_class,score")?;
    for (i, id) in model.ids.iter().enumerate() {
        writeln!(w, "{},{},{}", id, labels.classes[cls.classes[i]], cls.scores[i])?;
    }
    w.flush()?;

    let per_class = per_class_accuracy(&cls.classes, &truth, &labeled, labels.n_classes());
    let metrics = Metrics {
        accuracy,
        per_class_accuracy: labels.classes.iter().cloned().zip(per_class).collect(),
        n_labeled: labeled.iter().filter(|&&l| l).count(),
        n_unlabeled: labeled.iter().filter(|&&l| !l).count(),
        unreached: cls.unreached.iter().filter(|&&u| u).count(),
        config: PropagateEcho {
            model: model_path.display().to_string(),
            operator: if exact { "exact".into() } else { format!("bvdt:{}", model.partition_mode) },
            alpha: prop.alpha,
            iterations: prop.iterations,
            labeled_fraction: fraction,
            seed,
        },
        seconds,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    println!("accuracy {accuracy:.4} over {} unlabeled rows", metrics.n_unlabeled);
    println!("wrote {} and {}", pred_path.display(), dir.join("metrics.json").display());
    Ok(())
}

#[derive(Serialize)]
struct ExperimentMeta {
    n: usize,
    dim: usize,
    preprocessing: &'static str,
    epsilon: f64,
    sigma: Option<f64>,
    methods: Vec<String>,
    partition: String,
    fractions: Vec<f64>,
    trials: usize,
    seed: u64,
    alpha: f64,
    iterations: usize,
    label_protocol: &'static str,
}

fn cmd_experiment(a: ExperimentArgs, cfg: &FileConfig) -> Result<()> {
    let (_, raw) = load_data(a.input, a.format, cfg)?;
    let labels_path = required(cfg.pick(a.labels, "labels")?, "labels")?;
    let labels = load_labels(&labels_path)?;
    let truth = full_truth(&labels, raw.ids())?;
    let seed = cfg.pick(a.seed, "seed")?.unwrap_or(0);
    let trials = cfg.pick(a.trials, "trials")?.unwrap_or(5);
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let fractions: Vec<f64> = parse_list(&cfg.pick(a.fractions, "fractions")?.unwrap_or_else(|| "0.02,0.05,0.1".into()), "fraction")?;
    let defaults = PropagationConfig::default();
    let prop = PropagationConfig {
        alpha: cfg.pick(a.alpha, "alpha")?.unwrap_or(defaults.alpha),
        iterations: cfg.pick(a.iters, "iters")?.unwrap_or(defaults.iterations),
    };
    let exact = cfg.flag(a.exact, "exact")?;
    let dir = out_dir(a.out, cfg)?;
    let (data, spec) = divergence_spec(&a.div, cfg, raw, seed)?;

    let opts = MethodOptions {
        sigma: cfg.pick(a.div.sigma, "sigma")?,
        partition: cfg.pick(a.partition, "partition")?.unwrap_or_else(|| "coarsest".into()),
        finest_cap: cfg.pick(a.max_finest_n, "max-finest-n")?.unwrap_or(DEFAULT_FINEST_CAP),
        dense_cap: cfg.pick(a.max_exact_n, "max-exact-n")?.unwrap_or(DEFAULT_DENSE_CAP),
        seed,
    };
    let mut names: Vec<String> = match cfg.pick(a.methods, "methods")? {
        Some(list) => parse_list(&list, "method")?,
        None => vec![format!("bvdt:{}", spec.kind)],
    };
    if exact {
        let extra: Vec<String> = names
            .iter()
            .filter_map(|m| m.split_once(':').map(|(_, k)| format!("exact:{k}")))
            .filter(|m| !names.contains(m))
            .collect();
        names.extend(extra);
    }
    let registry = MethodRegistry::builtin();
    let methods = names
        .iter()
        .map(|m| registry.parse(m, &opts))
        .collect::<dualtree::Result<Vec<_>>>()?;
    if names.iter().any(|m| m.starts_with("exact:")) && data.n_rows() > opts.dense_cap {
        bail!("exact method requested for N={} above --max-exact-n {}", data.n_rows(), opts.dense_cap);
    }

    let sweep = SweepConfig {
        fractions,
        trials,
        seed,
        propagation: prop,
    };
    let mut fracs = sweep.fractions.clone();
    fracs.sort_by(f64::total_cmp);
    let meta = ExperimentMeta {
        n: data.n_rows(),
        dim: data.n_cols(),
        preprocessing: "raw counts plus epsilon for every divergence",
        epsilon: data.epsilon,
        sigma: (spec.kind == DivergenceKind::SqEuclidean).then_some(spec.sigma),
        methods: names.clone(),
        partition: opts.partition.clone(),
        fractions: fracs,
        trials,
        seed,
        alpha: prop.alpha,
        iterations: prop.iterations,
        label_protocol: "stratified per class, round(fraction * count) with at least one, trial t seeded by seed + t",
    };
    write_json(&dir.join("experiment.json"), &meta)?;
    let rows = accuracy_sweep(&data, &truth, labels.n_classes(), &methods, &sweep)?;
    let sweep_path = dir.join("sweep.csv");
    write_csv_file(&sweep_path, |w| write_sweep_csv(&rows, w))?;
    for r in &rows {
        println!("{} fraction {}: accuracy {:.4} ± {:.4}", r.method, r.fraction, r.mean_accuracy, r.ci95);
    }
    println!("wrote {}", sweep_path.display());

    if let Some(list) = cfg.pick(a.scaling, "scaling")? {
        let sizes: Vec<usize> = parse_list(&list, "size")?;
        let mut sets = Vec::new();
        for &n in &sizes {
            if n > data.n_rows() || n < 2 {
                bail!("scaling size {n} must lie in 2..={}", data.n_rows());
            }
            if names.iter().any(|m| m.starts_with("exact:")) && n > opts.dense_cap {
                bail!("exact method requested for N={n} above --max-exact-n {}", opts.dense_cap);
            }
            let keep: Vec<usize> = (0..n).collect();
            let sub = smooth(data.base.select_rows(&keep)?, data.epsilon);
            sets.push((sub, truth[..n].to_vec(), labels.n_classes()));
        }
        let fraction = sweep.fractions.first().copied().unwrap_or(DEFAULT_FRACTION);
        let scaling = scaling_sweep(&sets, &methods, fraction, seed, &prop)?;
        let path = dir.join("scaling.csv");
        write_csv_file(&path, |w| write_scaling_csv(&scaling, w))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
