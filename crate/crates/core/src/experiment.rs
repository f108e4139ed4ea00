//! End-to-end pipelines, a registry of transition methods and the accuracy
//! and scaling sweeps built on them.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{median_pair_distance, SmoothedMatrix};
use crate::divergence::{DivergenceKind, DivergenceSpec};
use crate::error::{Error, Result};
use crate::partition::{BlockPartition, PartitionRegistry, StrategyOptions, DEFAULT_FINEST_CAP};
use crate::propagation::{
    classify_one_vs_all, dense_transition_matrix, evaluate_accuracy, initial_labels, propagate_labels,
    PropagationConfig, TransitionModel, TransitionOperator, DEFAULT_DENSE_CAP,
};
use crate::tree::{build_cluster_tree, ClusterTree};
use crate::variational::{lower_bound, optimize_q, BoundReport, Fit};

/// Number of random pairs used for the default bandwidth.
pub const SIGMA_PAIRS: usize = 1000;

/// Resolves a full divergence spec for `data`. For sq-euclidean without an
/// explicit σ, σ is the median Euclidean distance over seeded random pairs.
pub fn resolve_spec(kind: DivergenceKind, data: &SmoothedMatrix, sigma: Option<f64>, seed: u64) -> DivergenceSpec {
    let mut spec = DivergenceSpec::new(kind, data.n_cols()).with_epsilon(data.epsilon);
    if kind == DivergenceKind::SqEuclidean {
        spec.sigma = sigma.unwrap_or_else(|| median_pair_distance(data, SIGMA_PAIRS, seed));
    }
    spec
}

/// Wall-clock seconds per pipeline phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub tree: f64,
    pub partition: f64,
    pub optimize: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.tree + self.partition + self.optimize
    }
}

/// Tree, partition and optimized parameters for one dataset.
#[derive(Debug, Clone)]
pub struct Approximation {
    pub tree: ClusterTree,
    pub partition: BlockPartition,
    pub fit: Fit,
    pub report: BoundReport,
    pub times: PhaseTimes,
}

pub fn approximate(data: &SmoothedMatrix, spec: &DivergenceSpec, partition_mode: &str, opts: &StrategyOptions) -> Result<Approximation> {
    let div = spec.build()?;
    let strategy = PartitionRegistry::builtin().parse(partition_mode, opts)?;
    let mut times = PhaseTimes::default();

    let t = Instant::now();
    let tree = build_cluster_tree(data, &div)?;
    times.tree = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let partition = strategy.build(&tree)?;
    times.partition = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let fit = optimize_q(&tree, &partition)?;
    times.optimize = t.elapsed().as_secs_f64();

    let report = lower_bound(&fit.params, &partition, &tree)?;
    Ok(Approximation {
        tree,
        partition,
        fit,
        report,
        times,
    })
}

/// Options shared by all methods.
#[derive(Debug, Clone)]
pub struct MethodOptions {
    pub sigma: Option<f64>,
    pub partition: String,
    pub finest_cap: usize,
    pub dense_cap: usize,
    pub seed: u64,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            sigma: None,
            partition: "coarsest".into(),
            finest_cap: DEFAULT_FINEST_CAP,
            dense_cap: DEFAULT_DENSE_CAP,
            seed: 0,
        }
    }
}

/// A way of turning data into a transition operator.
pub trait Method: fmt::Debug + Send + Sync {
    fn name(&self) -> String;
    fn build(&self, data: &SmoothedMatrix) -> Result<Box<dyn TransitionOperator>>;
}

/// Block-partitioned variational approximation over an anchor tree.
#[derive(Debug, Clone)]
pub struct Bvdt {
    pub kind: DivergenceKind,
    pub opts: MethodOptions,
}

impl Method for Bvdt {
    fn name(&self) -> String {
        format!("bvdt:{}", self.kind)
    }

    fn build(&self, data: &SmoothedMatrix) -> Result<Box<dyn TransitionOperator>> {
        let spec = resolve_spec(self.kind, data, self.opts.sigma, self.opts.seed);
        let strategy_opts = StrategyOptions {
            finest_cap: self.opts.finest_cap,
        };
        let a = approximate(data, &spec, &self.opts.partition, &strategy_opts)?;
        Ok(Box::new(TransitionModel::new(a.tree, a.partition, &a.fit.params)?))
    }
}

/// The dense transition matrix.
#[derive(Debug, Clone)]
pub struct Exact {
    pub kind: DivergenceKind,
    pub opts: MethodOptions,
}

impl Method for Exact {
    fn name(&self) -> String {
        format!("exact:{}", self.kind)
    }

    fn build(&self, data: &SmoothedMatrix) -> Result<Box<dyn TransitionOperator>> {
        let spec = resolve_spec(self.kind, data, self.opts.sigma, self.opts.seed);
        Ok(Box::new(dense_transition_matrix(data, &spec.build()?, self.opts.dense_cap)?))
    }
}

type MethodFactory = fn(DivergenceKind, &MethodOptions) -> Box<dyn Method>;

/// Parses `family:divergence` method names.
#[derive(Clone)]
pub struct MethodRegistry {
    factories: BTreeMap<&'static str, MethodFactory>,
}

impl MethodRegistry {
    pub fn builtin() -> Self {
        let mut factories: BTreeMap<&'static str, MethodFactory> = BTreeMap::new();
        factories.insert("bvdt", |kind, opts| Box::new(Bvdt { kind, opts: opts.clone() }));
        factories.insert("exact", |kind, opts| Box::new(Exact { kind, opts: opts.clone() }));
        MethodRegistry { factories }
    }

    pub fn register(&mut self, family: &'static str, factory: MethodFactory) {
        self.factories.insert(family, factory);
    }

    pub fn families(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn parse(&self, name: &str, opts: &MethodOptions) -> Result<Box<dyn Method>> {
        let (family, kind) = name
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("method '{name}' must look like family:divergence")))?;
        let factory = self.factories.get(family).ok_or_else(|| Error::Unknown {
            what: "method",
            name: family.to_string(),
        })?;
        Ok(factory(kind.parse()?, opts))
    }
}

/// Labeled-row mask drawn per class: round(fraction·class size) rows, at
/// least one, from a seeded shuffle.
pub fn stratified_labeled(truth: &[usize], n_classes: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("labeled fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = vec![false; truth.len()];
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(&mut rng);
        let take = ((fraction * rows.len() as f64).round() as usize).max(1);
        for &i in &rows[..take.min(rows.len())] {
            labeled[i] = true;
        }
    }
    Ok(labeled)
}

/// Propagates the labeled rows over `op` and scores the rest.
pub fn run_trial(
    op: &dyn TransitionOperator,
    truth: &[usize],
    n_classes: usize,
    labeled: &[bool],
    config: &PropagationConfig,
) -> Result<(Vec<usize>, f64)> {
    let given: Vec<Option<usize>> = truth
        .iter()
        .zip(labeled)
        .map(|(&t, &l)| l.then_some(t))
        .collect();
    let y0 = initial_labels(&given, n_classes)?;
    let scores = propagate_labels(op, &y0, config)?;
    let classes = classify_one_vs_all(&scores)?.classes;
    let acc = evaluate_accuracy(&classes, truth, labeled)?;
    Ok((classes, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub fraction: f64,
    pub trials: usize,
    pub mean_accuracy: f64,
    /// 1.96·sd/√trials, sample standard deviation.
    pub ci95: f64,
    /// Operator build time plus mean propagation time per trial.
    pub mean_seconds: f64,
    pub accuracies: Vec<f64>,
}

/// Mean and 95% half-width 1.96·sd/√n (zero for a single value).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub propagation: PropagationConfig,
}

/// Accuracy sweep: rows sorted by method (in the given order) then by
/// fraction. Trial t uses seed `seed + t` for every method and fraction.
pub fn accuracy_sweep(
    data: &SmoothedMatrix,
    truth: &[usize],
    n_classes: usize,
    methods: &[Box<dyn Method>],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if truth.len() != data.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: data.n_rows(),
            got: truth.len(),
        });
    }
    let mut fractions = config.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for method in methods {
        let t = Instant::now();
        let op = method.build(data)?;
        let build_secs = t.elapsed().as_secs_f64();
        for &fraction in &fractions {
            let mut accuracies = Vec::with_capacity(config.trials);
            let mut prop_secs = 0.0;
            for trial in 0..config.trials {
                let labeled = stratified_labeled(truth, n_classes, fraction, config.seed + trial as u64)?;
                let t = Instant::now();
                let (_, acc) = run_trial(op.as_ref(), truth, n_classes, &labeled, &config.propagation)?;
                prop_secs += t.elapsed().as_secs_f64();
                accuracies.push(acc);
            }
            let (mean, ci) = mean_ci(&accuracies);
            rows.push(SweepRow {
                method: method.name(),
                fraction,
                trials: config.trials,
                mean_accuracy: mean,
                ci95: ci,
                mean_seconds: build_secs + prop_secs / config.trials as f64,
                accuracies,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "method,fraction,trials,mean_accuracy,ci95,mean_seconds")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.method, r.fraction, r.trials, r.mean_accuracy, r.ci95, r.mean_seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub method: String,
    pub n: usize,
    /// Operator build plus one full propagation.
    pub seconds: f64,
    pub accuracy: f64,
}

/// End-to-end timing for each method on each dataset. `datasets` yields
/// `(data, truth, n_classes)` per size.
pub fn scaling_sweep(
    datasets: &[(SmoothedMatrix, Vec<usize>, usize)],
    methods: &[Box<dyn Method>],
    fraction: f64,
    seed: u64,
    propagation: &PropagationConfig,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for method in methods {
        for (data, truth, k) in datasets {
            let labeled = stratified_labeled(truth, *k, fraction, seed)?;
            let t = Instant::now();
            let op = method.build(data)?;
            let (_, accuracy) = run_trial(op.as_ref(), truth, *k, &labeled, propagation)?;
            rows.push(ScalingRow {
                method: method.name(),
                n: data.n_rows(),
                seconds: t.elapsed().as_secs_f64(),
                accuracy,
            });
        }
    }
    Ok(rows)
}

pub fn write_scaling_csv(rows: &[ScalingRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "method,n,seconds,accuracy")?;
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.6}", r.method, r.n, r.seconds, r.accuracy)?;
    }
    Ok(())
}

/// Least-squares slope of log(time) against log(n).
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Writes a CSV file through a buffered writer.
pub fn write_csv_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
