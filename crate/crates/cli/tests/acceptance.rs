//! Acceptance run: every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use predfuse::datagen::MultimodalBatch;
use predfuse::experiment::{
    ablation, compare, find_summary, gdp_study, manifest_file, sweep, CompareAxis,
    ExperimentConfig, RunManifest, SummaryRecord,
};
use predfuse::fusion::{
    co_belief, distribution_uniformity, fusion_weights, holo_confidence, relative_calibration,
    ConfidenceVector, FusionStrategy, SampleFusion, UncertaintyMeasure,
};
use predfuse::metrics::{empirical_cov, gdp, CovarianceRecord};
use predfuse::model::{ModelConfig, ModelOptions, PdfModel};
use predfuse::netcore::{finite_diff_check, softmax, Matrix, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

/// Accuracy summaries hold fractions; criteria are stated in points.
const POINT: f64 = 0.01;

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dims = vec![5, 4];
    let config = ModelConfig::new(dims.clone(), 3, ModelOptions::default());
    let mut model = PdfModel::new(config, &mut rng).unwrap();
    // zero-initialized biases sit on relu kinks for inputs that switch a layer off
    let jittered: Vec<f64> = model
        .flat_params()
        .iter()
        .map(|v| v + rng.random_range(-0.05..0.05))
        .collect();
    model.set_flat_params(&jittered).unwrap();
    let features = dims
        .iter()
        .map(|&d| {
            Matrix::from_vec(
                8,
                d,
                (0..8 * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
            .unwrap()
        })
        .collect();
    let batch = MultimodalBatch::new(features, (0..8).map(|i| i % 3).collect(), 3).unwrap();
    let report = finite_diff_check(
        &mut model,
        |m: &mut PdfModel| {
            let result = m.forward_full(&batch, None)?;
            let loss = m.compute_loss(&batch, &result)?;
            Ok((loss.total, m.backward(&batch, &result)?.flatten()))
        },
        1e-5,
        1e-4,
    )
    .unwrap();
    let elapsed = start.elapsed();
    outcome(
        report.max_rel_error <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "max relative error {:.2e} over {} parameters, {:.1} s",
            report.max_rel_error,
            report.param_count,
            elapsed.as_secs_f64()
        ),
    )
}

fn co_belief_of_losses(losses: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = losses.iter().map(|l| (-l).exp()).collect();
    co_belief(&ConfidenceVector::new(&p).unwrap())
}

fn holo_of_losses(losses: &[f64]) -> Vec<f64> {
    holo_confidence(losses).unwrap()
}

fn partial(f: fn(&[f64]) -> Vec<f64>, at: &[f64], out: usize, wrt: usize) -> f64 {
    let h = 1e-6;
    let mut plus = at.to_vec();
    let mut minus = at.to_vec();
    plus[wrt] += h;
    minus[wrt] -= h;
    (f(&plus)[out] - f(&minus)[out]) / (2.0 * h)
}

fn derivative_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut own_total, mut own_bad, mut cross_bad, mut holo_bad) =
        (0usize, 0usize, 0usize, 0usize);
    let mut own_max = f64::NEG_INFINITY;
    for i in 0..10_000 {
        let m = 2 + i % 2;
        let l: Vec<f64> = (0..m).map(|_| 10.0 - rng.random_range(0.0..9.99)).collect();
        for a in 0..m {
            let own = partial(co_belief_of_losses, &l, a, a);
            own_total += 1;
            own_max = own_max.max(own);
            if own > -1.0 + 1e-3 {
                own_bad += 1;
            }
            for j in (0..m).filter(|&j| j != a) {
                if partial(co_belief_of_losses, &l, a, j) < -1e-6 {
                    cross_bad += 1;
                }
                if partial(holo_of_losses, &l, a, j) < -1e-6 {
                    holo_bad += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        own_bad == 0 && cross_bad == 0 && holo_bad == 0 && elapsed < Duration::from_secs(5),
        format!(
            "own-loss partial > -1+1e-3 in {own_bad}/{own_total} (largest {own_max:.3e}); \
             cross partial < -1e-6: {cross_bad}; holo cross partial < -1e-6: {holo_bad}; {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn covariance_signs() -> Outcome {
    let start = Instant::now();
    let (mut mono_ok, mut holo_ok) = (0, 0);
    for set in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + set);
        let (n, m, classes) = (500, 2 + (set % 2) as usize, 4);
        let mut mono = Matrix::zeros(n, m);
        let mut holo = Matrix::zeros(n, m);
        let mut loss = Matrix::zeros(n, m);
        for i in 0..n {
            let label = rng.random_range(0..classes);
            let logits: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let boost = rng.random_range(-1.0..3.0);
                    (0..classes)
                        .map(|c| rng.random_range(-2.0..2.0) + if c == label { boost } else { 0.0 })
                        .collect()
                })
                .collect();
            let p_true: Vec<f64> = logits.iter().map(|z| softmax(z).unwrap()[label]).collect();
            let refs: Vec<&[f64]> = logits.iter().map(Vec::as_slice).collect();
            let f = SampleFusion::forward(
                &p_true,
                &refs,
                FusionStrategy::Ccb,
                UncertaintyMeasure::default(),
            )
            .unwrap();
            let b = f.breakdown();
            for k in 0..m {
                mono.set(i, k, b.mono_conf[k]);
                holo.set(i, k, b.holo_conf[k]);
                loss.set(i, k, -p_true[k].ln());
            }
        }
        let mono_neg =
            (0..m).all(|k| empirical_cov(&mono.column(k), &loss.column(k)).unwrap() < 0.0);
        let holo_cov = CovarianceRecord::new(&holo, &loss).unwrap();
        let holo_pos = (0..m).all(|k| {
            (0..m)
                .filter(|&j| j != k)
                .all(|j| holo_cov.holo(k, j) > 0.0)
        });
        mono_ok += usize::from(mono_neg);
        holo_ok += usize::from(holo_pos);
    }
    let elapsed = start.elapsed();
    outcome(
        mono_ok == 100 && holo_ok >= 99 && elapsed < Duration::from_secs(10),
        format!(
            "mono covariance negative in {mono_ok}/100 sets, holo covariance positive in {holo_ok}/100, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn highest_noise(config: &ExperimentConfig) -> f64 {
    config
        .noise_levels()
        .iter()
        .map(|n| n.degree)
        .fold(0.0, f64::max)
}

fn avg(summary: &[SummaryRecord], arm: &str, model: &str, degree: f64) -> f64 {
    find_summary(summary, arm, model, degree)
        .unwrap_or_else(|| panic!("no summary for {arm}/{model} at {degree}"))
        .avg
}

fn gdp_trend(config: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let study = gdp_study(config, 1).unwrap();
    let elapsed = start.elapsed();
    let mut ordered = true;
    let mut cells = Vec::new();
    let mut ccb_sum = 0.0;
    let levels = config.noise_levels();
    for n in &levels {
        let g = |s: FusionStrategy| study.report(s, n.degree).unwrap().gdp;
        let (mono, co, ccb) = (
            g(FusionStrategy::MonoOnly),
            g(FusionStrategy::CoBelief),
            g(FusionStrategy::Ccb),
        );
        ordered &= ccb >= co - 0.05 && co >= mono - 0.05;
        ccb_sum += ccb;
        cells.push(format!(
            "eps {}: mono {mono:.2} co {co:.2} ccb {ccb:.2}",
            n.degree
        ));
    }
    let ccb_mean = ccb_sum / levels.len() as f64;
    outcome(
        ordered && ccb_mean >= 0.6 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "{} models per strategy; {}; mean ccb {ccb_mean:.2}; {:.0} s",
            study.ensemble_seeds.len(),
            cells.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn robustness_and_convergence(config: &ExperimentConfig) -> (Outcome, Outcome) {
    let start = Instant::now();
    let report = sweep(config, 1).unwrap();
    let elapsed = start.elapsed();
    let s = &report.summary;
    let top = highest_noise(config);
    let ccb = avg(s, "ccb", "fused", top);
    let equal = avg(s, "equal_weight", "fused", top);
    let unimodal: Vec<f64> = (0..config.generator.modalities.len())
        .map(|m| avg(s, &format!("unimodal_{m}"), &format!("unimodal_{m}"), top))
        .collect();
    let ccb_clean = avg(s, "ccb", "fused", 0.0);
    let equal_clean = avg(s, "equal_weight", "fused", 0.0);
    let robust = ccb - equal >= 1.0 * POINT
        && unimodal.iter().all(|&u| ccb > u)
        && ccb_clean >= equal_clean - 0.5 * POINT
        && elapsed < Duration::from_secs(10 * 60);
    let robustness = outcome(
        robust,
        format!(
            "eps {top}: ccb {:.2} vs equal_weight {:.2}, unimodal {:?}; eps 0: ccb {:.2} vs equal_weight {:.2}; {:.0} s",
            ccb / POINT,
            equal / POINT,
            unimodal.iter().map(|u| format!("{:.2}", u / POINT)).collect::<Vec<_>>(),
            ccb_clean / POINT,
            equal_clean / POINT,
            elapsed.as_secs_f64()
        ),
    );

    let epochs = report.traces[0].1.len();
    let mean_trace: Vec<f64> = (0..epochs)
        .map(|e| {
            report
                .traces
                .iter()
                .map(|(_, t)| t.delta_omega[e])
                .sum::<f64>()
                / report.traces.len() as f64
        })
        .collect();
    let window = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let head = window(&mean_trace[..10.min(epochs)]);
    let tail = window(&mean_trace[epochs.saturating_sub(10)..]);
    let worst_seed = report
        .traces
        .iter()
        .map(|(_, t)| t.tail_mean(10).unwrap() / t.head_mean(10).unwrap())
        .fold(0.0, f64::max);
    let convergence = outcome(
        tail <= 0.2 * head,
        format!(
            "mean delta-omega first 10 epochs {head:.3e}, last 10 {tail:.3e} (ratio {:.3}; worst seed {worst_seed:.3})",
            tail / head
        ),
    );
    (robustness, convergence)
}

fn ablation_trend(config: &ExperimentConfig) -> Outcome {
    let report = ablation(config, 1).unwrap();
    let top = highest_noise(config);
    let full = avg(&report.summary, "MC+HC+RC", "fused", top);
    let mut pass = true;
    let mut cells = Vec::new();
    for arm in FusionStrategy::ABLATION_ARMS {
        let label = arm.components().unwrap();
        if label == "MC+HC+RC" {
            continue;
        }
        let a = avg(&report.summary, label, "fused", top);
        let slack = if arm.component_count() == 2 {
            0.5 * POINT
        } else {
            0.0
        };
        let ok = full >= a - slack;
        pass &= ok;
        cells.push(format!(
            "{label} {:.2}{}",
            a / POINT,
            if ok { "" } else { " (above)" }
        ));
    }
    outcome(
        pass,
        format!(
            "eps {top}: MC+HC+RC {:.2}; {}",
            full / POINT,
            cells.join(", ")
        ),
    )
}

fn predictor_target_trend(config: &ExperimentConfig) -> Outcome {
    let report = compare(config, CompareAxis::PredictorTarget, 1).unwrap();
    let top = highest_noise(config);
    let p_true = avg(&report.summary, "p_true", "fused", top);
    let loss = avg(&report.summary, "loss", "fused", top);
    outcome(
        p_true >= loss,
        format!(
            "eps {top}, {} seeds: p_true {:.2} vs loss {:.2}",
            config.seeds.len(),
            p_true / POINT,
            loss / POINT
        ),
    )
}

fn exact_values() -> Outcome {
    let mut failures = Vec::new();
    let du = distribution_uniformity(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]).unwrap();
    if (du - 1.0 / 9.0).abs() > 1e-9 {
        failures.push(format!("DU {du}"));
    }
    let holo = holo_confidence(&[1.0, 2.0, 3.0]).unwrap();
    if holo
        .iter()
        .zip([5.0 / 6.0, 4.0 / 6.0, 3.0 / 6.0])
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        failures.push(format!("holo {holo:?}"));
    }
    let rc = relative_calibration(&[0.2, 0.4]);
    if (rc[0] - 0.5).abs() > 1e-9 || (rc[1] - 2.0).abs() > 1e-9 {
        failures.push(format!("RC {rc:?}"));
    }
    let g = gdp(&[-1.0, 2.0, -3.0, 0.0]).unwrap();
    if g != 0.5 {
        failures.push(format!("GDP {g}"));
    }
    let w = fusion_weights(&[1.0, 1.0]);
    if w.iter().any(|v| (v - 0.5).abs() > 1e-9) {
        failures.push(format!("weights {w:?}"));
    }
    let pass = failures.is_empty();
    outcome(
        pass,
        if pass {
            "all five values match".to_string()
        } else {
            failures.join("; ")
        },
    )
}

/// Runs the binary and returns every output file keyed by relative path.
fn cli_run(args: &[&str], config: Option<&Path>, out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut cmd = Process::new(env!("CARGO_BIN_EXE_predfuse"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    let status = cmd.arg("--out").arg(out).args(args).output().unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let stem = match args[0] {
        "compare" => format!("compare_{}", args[2]),
        "ablate" => "ablate".to_string(),
        other => other.to_string(),
    };
    let name = manifest_file(&stem);
    let manifest = RunManifest::load(out.join(&name)).unwrap();
    assert!(manifest.verify(out).unwrap().is_empty());
    let mut files: Vec<(String, Vec<u8>)> = manifest
        .files
        .iter()
        .map(|f| (f.path.clone(), fs::read(out.join(&f.path)).unwrap()))
        .collect();
    files.push((name.clone(), fs::read(out.join(&name)).unwrap()));
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut small = ExperimentConfig::default();
    small.training.epochs = 4;
    small.generator.train = 120;
    small.seeds = vec![1, 2, 3];
    small.gdp.models = 3;
    let config_path = dir.path().join("small.toml");
    fs::write(&config_path, small.to_toml_string().unwrap()).unwrap();
    let commands: [&[&str]; 6] = [
        &["train"],
        &["sweep"],
        &["gdp"],
        &["ablate"],
        &["compare", "--axis", "predictor_target"],
        &["compare", "--axis", "uncertainty"],
    ];
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (i, args) in commands.iter().enumerate() {
        let a = dir.path().join(format!("a{i}"));
        let b = dir.path().join(format!("b{i}"));
        let first = cli_run(
            &[args, &["--jobs", "1"][..]].concat(),
            Some(&config_path),
            &a,
        );
        let second = cli_run(
            &[args, &["--jobs", "3"][..]].concat(),
            Some(&config_path),
            &b,
        );
        compared += first.len();
        if first != second {
            mismatched.push(args.join(" "));
        }
    }
    // the full default sweep as well
    let a = dir.path().join("default_a");
    let b = dir.path().join("default_b");
    let first = cli_run(&["sweep", "--jobs", "1"], None, &a);
    let second = cli_run(&["sweep", "--jobs", "2"], None, &b);
    compared += first.len();
    if first != second {
        mismatched.push("sweep (default config)".into());
    }
    let pass = mismatched.is_empty();
    outcome(
        pass,
        if pass {
            format!("{compared} files byte-identical across reruns with --jobs 1 and --jobs > 1")
        } else {
            format!("outputs differ for: {}", mismatched.join(", "))
        },
    )
}

fn main() {
    let config = ExperimentConfig::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} {name}: {} ({})",
            verdict(o.pass),
            o.detail
        );
        results.push((n, name, o));
    };
    record(1, "gradient oracle", gradient_oracle());
    record(2, "derivative bounds", derivative_bounds());
    record(3, "covariance signs", covariance_signs());
    record(4, "GDP trend", gdp_trend(&config));
    let (robustness, convergence) = robustness_and_convergence(&config);
    record(5, "robustness trend", robustness);
    record(6, "ablation trend", ablation_trend(&config));
    record(7, "predictor-target trend", predictor_target_trend(&config));
    record(8, "exact values", exact_values());
    record(9, "determinism", determinism());
    record(10, "convergence trace", convergence);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| r.0.to_string())
        .collect();
    println!(
        "\n{}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
