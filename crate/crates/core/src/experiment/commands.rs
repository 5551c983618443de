use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{
    fmt_f64, fmt_opt, summarize, summary_table, write_artifacts, AccuracyRecord, Artifact,
    RunManifest, SummaryRecord, Table,
};
use super::train::{evaluate, noisy_split, train_model, EpochLog, Evaluation, TrainOutcome};
use crate::datagen::{encode_batch, generate, NoiseSpec, SyntheticSplits};
use crate::fusion::{FusionStrategy, UncertaintyKind, UncertaintyMeasure};
use crate::metrics::{ConvergenceTrace, GdpReport};
use crate::model::{encode_checkpoint, ModelOptions, PdfModel, PredictorTarget};
use crate::{Error, Result};

/// What `compare` varies while everything else stays fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareAxis {
    PredictorTarget,
    Uncertainty,
}

impl CompareAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            CompareAxis::PredictorTarget => "predictor_target",
            CompareAxis::Uncertainty => "uncertainty",
        }
    }
}

impl fmt::Display for CompareAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompareAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [CompareAxis::PredictorTarget, CompareAxis::Uncertainty]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::field("axis", format!("unknown axis `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Sweep,
    Gdp,
    Ablate,
    Compare(CompareAxis),
}

impl Command {
    /// Short name used for the manifest file.
    pub fn stem(self) -> String {
        match self {
            Command::Train => "train".into(),
            Command::Sweep => "sweep".into(),
            Command::Gdp => "gdp".into(),
            Command::Ablate => "ablate".into(),
            Command::Compare(axis) => format!("compare_{axis}"),
        }
    }
}

/// Runs `command` and writes its files plus a manifest under `out_dir`.
pub fn run(
    command: Command,
    config: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<RunManifest> {
    let artifacts = match command {
        Command::Train => train_runs(config, jobs)?.artifacts()?,
        Command::Sweep => sweep(config, jobs)?.artifacts()?,
        Command::Gdp => gdp_study(config, jobs)?.artifacts()?,
        Command::Ablate => ablation(config, jobs)?.artifacts()?,
        Command::Compare(axis) => compare(config, axis, jobs)?.artifacts()?,
    };
    let manifest = RunManifest::new(&command.stem(), config, &artifacts)?;
    write_artifacts(out_dir, &artifacts, &manifest)?;
    Ok(manifest)
}

/// Shared data and worker pool of one command.
struct Workbench<'a> {
    config: &'a ExperimentConfig,
    splits: SyntheticSplits,
    noise: Vec<NoiseSpec>,
    pool: rayon::ThreadPool,
}

/// One model to train and evaluate at every noise level.
#[derive(Clone)]
struct RunSpec {
    options: ModelOptions,
    seed: u64,
}

struct RunResult {
    outcome: TrainOutcome,
    /// One entry per noise level.
    evaluations: Vec<Evaluation>,
}

impl<'a> Workbench<'a> {
    fn new(config: &'a ExperimentConfig, jobs: usize) -> Result<Self> {
        config.validate()?;
        if jobs == 0 {
            return Err(Error::field("jobs", "must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            splits: generate(&config.generator)?,
            noise: config.noise_levels(),
            pool,
        })
    }

    fn options(&self, f: impl FnOnce(&mut ModelOptions)) -> ModelOptions {
        let mut o = self.config.model.clone();
        f(&mut o);
        o
    }

    fn specs(&self, options: &ModelOptions, seeds: &[u64]) -> Vec<RunSpec> {
        seeds
            .iter()
            .map(|&seed| RunSpec {
                options: options.clone(),
                seed,
            })
            .collect()
    }

    /// Trains every spec in the pool; results keep the order of `specs`.
    fn train(&self, specs: &[RunSpec], evaluate_noise: bool) -> Result<Vec<RunResult>> {
        self.pool.install(|| {
            specs
                .par_iter()
                .map(|spec| {
                    let outcome = train_model(
                        &self.splits,
                        &spec.options,
                        &self.config.training,
                        spec.seed,
                    )?;
                    let evaluations = if evaluate_noise {
                        self.noise
                            .iter()
                            .map(|n| {
                                evaluate(&outcome.model, &noisy_split(&self.splits, n, spec.seed)?)
                            })
                            .collect::<Result<Vec<_>>>()?
                    } else {
                        Vec::new()
                    };
                    Ok(RunResult {
                        outcome,
                        evaluations,
                    })
                })
                .collect()
        })
    }
}

fn fused_record(arm: &str, noise: &NoiseSpec, seed: u64, e: &Evaluation) -> AccuracyRecord {
    AccuracyRecord {
        arm: arm.to_string(),
        model: "fused".to_string(),
        noise_kind: noise.kind,
        noise_degree: noise.degree,
        seed,
        accuracy: e.accuracy,
        conflict_fraction: Some(e.conflict.conflict_fraction),
        conflict_accuracy: e.conflict.correct_given_conflict,
        aggregate_covariance: Some(e.aggregate_covariance),
    }
}

fn unimodal_name(m: usize) -> String {
    format!("unimodal_{m}")
}

fn unimodal_record(
    arm: &str,
    m: usize,
    noise: &NoiseSpec,
    seed: u64,
    e: &Evaluation,
) -> AccuracyRecord {
    AccuracyRecord {
        arm: arm.to_string(),
        model: unimodal_name(m),
        noise_kind: noise.kind,
        noise_degree: noise.degree,
        seed,
        accuracy: e.modality_accuracy[m],
        conflict_fraction: None,
        conflict_accuracy: None,
        aggregate_covariance: None,
    }
}

/// Rows of one arm ordered by noise level, then seed.
fn arm_records(
    noise: &[NoiseSpec],
    seeds: &[u64],
    runs: &[RunResult],
    mut make: impl FnMut(&NoiseSpec, u64, &Evaluation) -> Vec<AccuracyRecord>,
) -> Vec<AccuracyRecord> {
    let mut out = Vec::new();
    for (k, n) in noise.iter().enumerate() {
        for (seed, run) in seeds.iter().zip(runs) {
            out.extend(make(n, *seed, &run.evaluations[k]));
        }
    }
    out
}

/// Trained models, one per run seed, with their epoch logs.
pub struct TrainReport {
    pub splits: SyntheticSplits,
    pub runs: Vec<(u64, TrainOutcome)>,
}

pub fn train_runs(config: &ExperimentConfig, jobs: usize) -> Result<TrainReport> {
    let bench = Workbench::new(config, jobs)?;
    let specs = bench.specs(&config.model, &config.seeds);
    let results = bench.train(&specs, false)?;
    Ok(TrainReport {
        runs: config
            .seeds
            .iter()
            .copied()
            .zip(results.into_iter().map(|r| r.outcome))
            .collect(),
        splits: bench.splits,
    })
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("checkpoints/model_seed{seed}.pfck")
}

impl TrainReport {
    pub fn model(&self, seed: u64) -> Option<&PdfModel> {
        self.runs
            .iter()
            .find(|(s, _)| *s == seed)
            .map(|(_, o)| &o.model)
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let modalities = self.splits.train.modalities();
        let mut header = vec![
            "seed".to_string(),
            "epoch".into(),
            "total_loss".into(),
            "fused_ce".into(),
        ];
        header.extend((0..modalities).map(|m| format!("unimodal_ce_{m}")));
        header.extend((0..modalities).map(|m| format!("predictor_mse_{m}")));
        header.extend([
            "predictor_loss".into(),
            "val_accuracy".into(),
            "delta_omega".into(),
        ]);
        let mut log = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
        for (seed, outcome) in &self.runs {
            for e in &outcome.log {
                log.row(epoch_row(*seed, e))?;
            }
        }
        let mut artifacts = vec![Artifact::new("train_log.csv", log.finish()?)];
        for (seed, outcome) in &self.runs {
            artifacts.push(Artifact::new(
                checkpoint_name(*seed),
                encode_checkpoint(&outcome.model)?,
            ));
        }
        for (name, batch) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            artifacts.push(Artifact::new(
                format!("data/{name}.pfb"),
                encode_batch(batch)?,
            ));
        }
        Ok(artifacts)
    }
}

fn epoch_row(seed: u64, e: &EpochLog) -> Vec<String> {
    let mut row = vec![
        seed.to_string(),
        e.epoch.to_string(),
        fmt_f64(e.loss.total),
        fmt_f64(e.loss.fused_ce),
    ];
    row.extend(e.loss.unimodal_ce.iter().map(|&v| fmt_f64(v)));
    row.extend(e.loss.predictor_mse.iter().map(|&v| fmt_f64(v)));
    row.extend([
        fmt_f64(e.loss.predictor_loss),
        fmt_f64(e.val_accuracy),
        fmt_f64(e.delta_omega),
    ]);
    row
}

/// Accuracy of the configured strategy against late fusion and unimodal heads.
pub struct SweepReport {
    pub strategy: FusionStrategy,
    pub records: Vec<AccuracyRecord>,
    pub summary: Vec<SummaryRecord>,
    /// Δω traces of the configured strategy, one per seed.
    pub traces: Vec<(u64, ConvergenceTrace)>,
}

/// Unimodal baselines are the heads of the equal-weight model of each seed.
pub fn sweep(config: &ExperimentConfig, jobs: usize) -> Result<SweepReport> {
    let bench = Workbench::new(config, jobs)?;
    let strategy = config.model.strategy;
    let seeds = &config.seeds;
    let baseline = bench.options(|o| o.strategy = FusionStrategy::EqualWeight);
    let mut specs = bench.specs(&baseline, seeds);
    if strategy != FusionStrategy::EqualWeight {
        specs.extend(bench.specs(&config.model, seeds));
    }
    let results = bench.train(&specs, true)?;
    let (base, main) = results.split_at(seeds.len());
    let main = if main.is_empty() { base } else { main };

    let mut records = arm_records(&bench.noise, seeds, main, |n, s, e| {
        vec![fused_record(strategy.as_str(), n, s, e)]
    });
    if strategy != FusionStrategy::EqualWeight {
        records.extend(arm_records(&bench.noise, seeds, base, |n, s, e| {
            vec![fused_record(FusionStrategy::EqualWeight.as_str(), n, s, e)]
        }));
    }
    for m in 0..bench.splits.train.modalities() {
        let name = unimodal_name(m);
        records.extend(arm_records(&bench.noise, seeds, base, |n, s, e| {
            vec![unimodal_record(&name, m, n, s, e)]
        }));
    }
    Ok(SweepReport {
        strategy,
        summary: summarize(&records)?,
        traces: seeds
            .iter()
            .copied()
            .zip(main.iter().map(|r| r.outcome.trace.clone()))
            .collect(),
        records,
    })
}

impl SweepReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut rows = Table::new(&[
            "strategy",
            "noise_kind",
            "noise_degree",
            "seed",
            "accuracy",
            "conflict_fraction",
            "conflict_accuracy",
        ])?;
        for r in &self.records {
            rows.row([
                r.arm.clone(),
                r.noise_kind.as_str().into(),
                fmt_f64(r.noise_degree),
                r.seed.to_string(),
                fmt_f64(r.accuracy),
                fmt_opt(r.conflict_fraction),
                fmt_opt(r.conflict_accuracy),
            ])?;
        }
        let mut conv = Table::new(&["strategy", "seed", "epoch", "delta_omega"])?;
        for (seed, trace) in &self.traces {
            for (i, d) in trace.delta_omega.iter().enumerate() {
                conv.row([
                    self.strategy.as_str().to_string(),
                    seed.to_string(),
                    (i + 1).to_string(),
                    fmt_f64(*d),
                ])?;
            }
        }
        Ok(vec![
            Artifact::new("sweep.csv", rows.finish()?),
            Artifact::new(
                "sweep_summary.csv",
                summary_table(&self.summary, "strategy", false)?,
            ),
            Artifact::new("convergence.csv", conv.finish()?),
        ])
    }
}

/// Aggregate covariance of an ensemble per strategy and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdpStudy {
    pub ensemble_seeds: Vec<u64>,
    pub reports: Vec<GdpReport>,
}

pub fn gdp_study(config: &ExperimentConfig, jobs: usize) -> Result<GdpStudy> {
    let seeds = config.gdp.ensemble_seeds();
    if seeds.len() < 2 {
        return Err(Error::field(
            "gdp.seeds",
            "an ensemble needs at least 2 models",
        ));
    }
    if config.gdp.strategies.is_empty() {
        return Err(Error::field("gdp.strategies", "no strategies listed"));
    }
    let bench = Workbench::new(config, jobs)?;
    let mut specs = Vec::new();
    for &strategy in &config.gdp.strategies {
        specs.extend(bench.specs(&bench.options(|o| o.strategy = strategy), &seeds));
    }
    let results = bench.train(&specs, true)?;
    let mut reports = Vec::new();
    for (strategy, runs) in config
        .gdp
        .strategies
        .iter()
        .zip(results.chunks(seeds.len()))
    {
        for (k, n) in bench.noise.iter().enumerate() {
            let ac = runs
                .iter()
                .map(|r| r.evaluations[k].aggregate_covariance)
                .collect();
            reports.push(GdpReport::new(
                strategy.as_str(),
                n.kind.as_str(),
                n.degree,
                ac,
            )?);
        }
    }
    Ok(GdpStudy {
        ensemble_seeds: seeds,
        reports,
    })
}

impl GdpStudy {
    pub fn report(&self, strategy: FusionStrategy, noise_degree: f64) -> Option<&GdpReport> {
        self.reports
            .iter()
            .find(|r| r.strategy == strategy.as_str() && r.noise_degree == noise_degree)
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut json = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::format("gdp report", e.to_string()))?;
        json.push(b'\n');
        let mut dist = Table::new(&[
            "strategy",
            "noise_kind",
            "noise_degree",
            "seed",
            "aggregate_covariance",
        ])?;
        for r in &self.reports {
            for (seed, ac) in self.ensemble_seeds.iter().zip(&r.ac_values) {
                dist.row([
                    r.strategy.clone(),
                    r.noise_kind.clone(),
                    fmt_f64(r.noise_degree),
                    seed.to_string(),
                    fmt_f64(*ac),
                ])?;
            }
        }
        Ok(vec![
            Artifact::new("gdp.json", json),
            Artifact::new("ac_distribution.csv", dist.finish()?),
        ])
    }
}

/// Fusion-component ablation; `arm` holds the component label.
pub struct AblationReport {
    pub records: Vec<AccuracyRecord>,
    pub summary: Vec<SummaryRecord>,
}

fn arm_label(strategy: FusionStrategy) -> &'static str {
    strategy.components().unwrap_or("none")
}

/// Every arm reports its fused accuracy plus the unimodal heads of the
/// shared equal-weight baseline, so unimodal rows match across arms.
pub fn ablation(config: &ExperimentConfig, jobs: usize) -> Result<AblationReport> {
    let bench = Workbench::new(config, jobs)?;
    let seeds = &config.seeds;
    let arms = FusionStrategy::ABLATION_ARMS;
    let mut specs = bench.specs(
        &bench.options(|o| o.strategy = FusionStrategy::EqualWeight),
        seeds,
    );
    for &arm in &arms {
        specs.extend(bench.specs(&bench.options(|o| o.strategy = arm), seeds));
    }
    let results = bench.train(&specs, true)?;
    let mut chunks = results.chunks(seeds.len());
    let base = chunks.next().expect("baseline runs");
    let modalities = bench.splits.train.modalities();
    let mut records = Vec::new();
    for (&arm, runs) in arms.iter().zip(chunks) {
        let label = arm_label(arm);
        records.extend(arm_records(&bench.noise, seeds, runs, |n, s, e| {
            vec![fused_record(label, n, s, e)]
        }));
        records.extend(arm_records(&bench.noise, seeds, base, |n, s, e| {
            (0..modalities)
                .map(|m| unimodal_record(label, m, n, s, e))
                .collect()
        }));
    }
    Ok(AblationReport {
        summary: summarize(&records)?,
        records,
    })
}

impl AblationReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut rows = Table::new(&[
            "arm",
            "strategy",
            "model",
            "noise_kind",
            "noise_degree",
            "seed",
            "accuracy",
        ])?;
        for r in &self.records {
            let strategy = FusionStrategy::ABLATION_ARMS
                .into_iter()
                .find(|s| arm_label(*s) == r.arm)
                .map_or("", |s| s.as_str());
            rows.row([
                r.arm.clone(),
                strategy.to_string(),
                r.model.clone(),
                r.noise_kind.as_str().into(),
                fmt_f64(r.noise_degree),
                r.seed.to_string(),
                fmt_f64(r.accuracy),
            ])?;
        }
        Ok(vec![
            Artifact::new("ablation.csv", rows.finish()?),
            Artifact::new(
                "ablation_summary.csv",
                summary_table(&self.summary, "arm", true)?,
            ),
        ])
    }
}

/// The configured strategy under each value of one axis.
pub struct CompareReport {
    pub axis: CompareAxis,
    pub records: Vec<AccuracyRecord>,
    pub summary: Vec<SummaryRecord>,
}

pub fn compare(config: &ExperimentConfig, axis: CompareAxis, jobs: usize) -> Result<CompareReport> {
    let bench = Workbench::new(config, jobs)?;
    let arms: Vec<(String, ModelOptions)> = match axis {
        CompareAxis::PredictorTarget => [PredictorTarget::PTrue, PredictorTarget::Loss]
            .into_iter()
            .map(|t| {
                (
                    t.as_str().to_string(),
                    bench.options(|o| o.predictor_target = t),
                )
            })
            .collect(),
        CompareAxis::Uncertainty => UncertaintyKind::ALL
            .into_iter()
            .map(|k| {
                let temperature = config.model.uncertainty.temperature;
                let measure = UncertaintyMeasure {
                    kind: k,
                    temperature,
                };
                (
                    k.as_str().to_string(),
                    bench.options(|o| o.uncertainty = measure),
                )
            })
            .collect(),
    };
    let seeds = &config.seeds;
    let specs: Vec<RunSpec> = arms
        .iter()
        .flat_map(|(_, o)| bench.specs(o, seeds))
        .collect();
    let results = bench.train(&specs, true)?;
    let mut records = Vec::new();
    for ((name, _), runs) in arms.iter().zip(results.chunks(seeds.len())) {
        records.extend(arm_records(&bench.noise, seeds, runs, |n, s, e| {
            vec![fused_record(name, n, s, e)]
        }));
    }
    Ok(CompareReport {
        axis,
        summary: summarize(&records)?,
        records,
    })
}

impl CompareReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut rows = Table::new(&[
            "axis",
            "arm",
            "noise_kind",
            "noise_degree",
            "seed",
            "accuracy",
            "aggregate_covariance",
        ])?;
        for r in &self.records {
            rows.row([
                self.axis.as_str().to_string(),
                r.arm.clone(),
                r.noise_kind.as_str().into(),
                fmt_f64(r.noise_degree),
                r.seed.to_string(),
                fmt_f64(r.accuracy),
                fmt_opt(r.aggregate_covariance),
            ])?;
        }
        let stem = format!("compare_{}", self.axis.as_str());
        Ok(vec![
            Artifact::new(format!("{stem}.csv"), rows.finish()?),
            Artifact::new(
                format!("{stem}_summary.csv"),
                summary_table(&self.summary, "arm", false)?,
            ),
        ])
    }
}
