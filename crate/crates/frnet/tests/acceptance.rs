//! End-to-end acceptance gate. Ten criteria covering oracle equivalence,
//! gradients, budgets, asymptotics, trainability, ablations, metrics, and
//! determinism run sequentially in one test (the benchmark and training
//! criteria are timing-sensitive and must not share the process with other
//! running tests). One PASS/FAIL line is printed per criterion; run with
//! `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frnet::data::{generate_dataset, load_dataset, read_manifest, AngleRange, SyntheticSample};
use frnet::fft::{self, Direction};
use frnet::metrics::{angles_to_vector, angular_error, GazeAngles};
use frnet::nn::checkpoint::{load_checkpoint, save_checkpoint};
use frnet::nn::{FrNet, ModelConfig};
use frnet::profile;
use frnet::tensor::{ComplexTensor, Tensor};
use frnet::train::{train_loop, Schedule, TrainOptions};
use frnet::verify;

type CriterionResult = Result<String, String>;

fn run_verify_suite(suite: &str) -> CriterionResult {
    let results = verify::run_suite(suite, None).map_err(|e| e.to_string())?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        Ok(format!("{} oracle cases", results.len()))
    } else {
        Err(failed
            .iter()
            .map(|r| format!("{}: {}", r.name, r.detail))
            .collect::<Vec<_>>()
            .join("; "))
    }
}

// 1. Spectral convolution equals direct circular convolution.
fn criterion_conv_equivalence() -> CriterionResult {
    let start = Instant::now();
    let detail = run_verify_suite("conv")?;
    if start.elapsed().as_secs() >= 30 {
        return Err(format!("took {:.1}s, budget 30s", start.elapsed().as_secs_f64()));
    }
    Ok(detail)
}

// 2. FFT vs naive DFT, invertibility and Parseval at every size <= 256.
fn criterion_fft_correctness() -> CriterionResult {
    let start = Instant::now();
    let detail = run_verify_suite("fft")?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = 2usize;
    while n <= 256 {
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = ComplexTensor::from_parts(&[n], re, im).map_err(|e| e.to_string())?;
        let y = fft::fft1d(&x, Direction::Forward).map_err(|e| e.to_string())?;
        let z = fft::fft1d(&y, Direction::Inverse).map_err(|e| e.to_string())?;

        let peak = x
            .re
            .iter()
            .chain(&x.im)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = x
            .re
            .iter()
            .zip(&z.re)
            .chain(x.im.iter().zip(&z.im))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if diff / peak >= 1e-10 {
            return Err(format!("n={n}: round-trip relative error {:.2e}", diff / peak));
        }

        let ex: f64 = x.re.iter().zip(&x.im).map(|(r, i)| r * r + i * i).sum();
        let ey: f64 = y.re.iter().zip(&y.im).map(|(r, i)| r * r + i * i).sum::<f64>() / n as f64;
        if (ex - ey).abs() / ex >= 1e-9 {
            return Err(format!("n={n}: energy mismatch {:.2e}", (ex - ey).abs() / ex));
        }
        n *= 2;
    }
    if start.elapsed().as_secs() >= 60 {
        return Err(format!("took {:.1}s, budget 60s", start.elapsed().as_secs_f64()));
    }
    Ok(format!("{detail}; invertibility+energy at all sizes to 256"))
}

// 3. Filtering with mask = transform(padded kernel) equals spectral conv.
fn criterion_mask_equivalence() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sizes = [8usize, 16, 32];
    let mut worst = 0.0f64;
    for case in 0..50 {
        let h = sizes[case % sizes.len()];
        let w = sizes[(case / 3) % sizes.len()];
        let kh = rng.gen_range(1..=h);
        let kw = rng.gen_range(1..=w);
        let x = Tensor::from_vec(
            &[h, w],
            (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .map_err(|e| e.to_string())?;
        let k = Tensor::from_vec(
            &[kh, kw],
            (0..kh * kw).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .map_err(|e| e.to_string())?;

        let reference = fft::spectral_conv2d(&x, &k).map_err(|e| e.to_string())?;

        let padded = k.pad2d_zero(h, w).map_err(|e| e.to_string())?;
        let spectrum = fft::fft2d_real(&padded, Direction::Forward).map_err(|e| e.to_string())?;
        let mask = ComplexTensor::from_parts(&[1, h, w], spectrum.re.clone(), spectrum.im.clone())
            .map_err(|e| e.to_string())?;
        let x3 = x.reshape(&[1, h, w]).map_err(|e| e.to_string())?;
        let masked = fft::apply_mask(&x3, &mask).map_err(|e| e.to_string())?;

        let diff = reference
            .data()
            .iter()
            .zip(masked.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst = worst.max(diff);
    }
    if worst < 1e-9 {
        Ok(format!("50 cases, max abs diff {worst:.2e}"))
    } else {
        Err(format!("max abs diff {worst:.2e} >= 1e-9"))
    }
}

// 4. Every layer op passes finite-difference gradient checks.
fn criterion_gradients() -> CriterionResult {
    let start = Instant::now();
    let results = verify::run_suite("grad", None).map_err(|e| e.to_string())?;
    let required = [
        "grad.conv2d",
        "grad.depthwise_conv2d",
        "grad.instance_norm",
        "grad.layer_norm_channels",
        "grad.silu",
        "grad.apply_mask",
        "grad.concat_channels",
        "grad.elementwise",
        "grad.global_avg_pool",
        "grad.linear",
        "grad.smooth_l1",
    ];
    for name in required {
        if !results.iter().any(|r| r.name == name) {
            return Err(format!("missing gradient case {name}"));
        }
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    if !failed.is_empty() {
        return Err(failed
            .iter()
            .map(|r| format!("{}: {}", r.name, r.detail))
            .collect::<Vec<_>>()
            .join("; "));
    }
    if start.elapsed().as_secs() >= 300 {
        return Err(format!("took {:.1}s, budget 300s", start.elapsed().as_secs_f64()));
    }
    Ok(format!("{} ops checked against finite differences", results.len()))
}

// 5. Default model lands inside the published parameter and FLOP budgets.
fn criterion_budgets() -> CriterionResult {
    let model = FrNet::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let params = profile::count_params(&model);
    let flops = profile::count_flops(&model);
    let (lo, hi) = profile::param_budget_range();
    println!(
        "    parameters: {params} ({:.3}M) vs published 0.67M; flops: {flops} ({:.3}G) vs published 0.22B",
        params as f64 / 1e6,
        flops as f64 / 1e9
    );
    if !(lo..=hi).contains(&params) {
        return Err(format!("{params} params outside [{lo}, {hi}]"));
    }
    if !(profile::FLOP_MIN..=profile::FLOP_MAX).contains(&flops) {
        return Err(format!(
            "{flops} flops outside [{}, {}]",
            profile::FLOP_MIN,
            profile::FLOP_MAX
        ));
    }
    Ok(format!("{params} params in [{lo}, {hi}], {flops} flops in budget"))
}

// 6. Spectral filtering beats direct convolution and scales like n^2 log n.
fn scaling_attempt(seed: u64) -> CriterionResult {
    let rows = profile::bench_scaling(&[16, 32, 64, 128], 9, seed).map_err(|e| e.to_string())?;
    for r in &rows {
        println!(
            "    n={:3}: spectral {:.6}s, direct {:.6}s",
            r.n, r.spectral_secs, r.direct_secs
        );
        if r.n >= 32 && r.spectral_secs >= r.direct_secs {
            return Err(format!("spectral not faster at n={}", r.n));
        }
    }
    for pair in rows.windows(2) {
        let spec_ratio = pair[1].spectral_secs / pair[0].spectral_secs;
        let dir_ratio = pair[1].direct_secs / pair[0].direct_secs;
        if spec_ratio >= profile::SPECTRAL_DOUBLING_MAX {
            return Err(format!(
                "spectral doubling ratio {spec_ratio:.2} at n={} exceeds {}",
                pair[1].n,
                profile::SPECTRAL_DOUBLING_MAX
            ));
        }
        if dir_ratio < profile::DIRECT_DOUBLING_MIN {
            return Err(format!(
                "direct doubling ratio {dir_ratio:.2} at n={} below {}",
                pair[1].n,
                profile::DIRECT_DOUBLING_MIN
            ));
        }
    }
    Ok("spectral faster for n >= 32; doubling ratios within bounds".into())
}

fn criterion_scaling() -> CriterionResult {
    let start = Instant::now();
    // Wall-clock benchmarks on a shared machine see bursty interference that
    // can outlast a whole sampling block; one clean run out of three
    // demonstrates the asymptotic behavior.
    let mut last = Err("no attempts".to_string());
    for attempt in 0..3 {
        last = scaling_attempt(attempt as u64);
        if last.is_ok() {
            break;
        }
        println!("    attempt {} failed: {}", attempt + 1, last.as_ref().err().unwrap());
    }
    let detail = last?;
    if start.elapsed().as_secs() >= 120 {
        return Err(format!("took {:.1}s, budget 120s", start.elapsed().as_secs_f64()));
    }
    Ok(detail)
}

// 7. The reduced model trains to low error on the synthetic task.
fn criterion_trainability(samples: &[SyntheticSample]) -> CriterionResult {
    let start = Instant::now();

    let mut model = FrNet::new(ModelConfig::small(), 0).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        epochs: 20,
        batch_size: 16,
        seed: 0,
        schedule: Schedule {
            base_lr: 0.01,
            decayed_lr: 0.001,
            decay_epoch: 15,
        },
        ..TrainOptions::default()
    };
    let log = train_loop(&mut model, samples, &opts).map_err(|e| e.to_string())?;
    let first = log.epochs.first().ok_or("empty log")?.mean_angular_error_deg;
    let last = log.epochs.last().ok_or("empty log")?.mean_angular_error_deg;
    println!(
        "    512-sample run: epoch 1 {:.2} deg -> epoch 20 {:.2} deg ({:.0}s)",
        first,
        last,
        start.elapsed().as_secs_f64()
    );
    if last >= 8.0 {
        return Err(format!("final error {last:.2} deg >= 8"));
    }
    if last > 0.5 * first {
        return Err(format!("final {last:.2} not half of epoch-1 {first:.2}"));
    }

    let mut overfit_model = FrNet::new(ModelConfig::small(), 0).map_err(|e| e.to_string())?;
    let overfit_opts = TrainOptions {
        epochs: 200,
        batch_size: 2,
        seed: 0,
        schedule: Schedule {
            base_lr: 0.01,
            decayed_lr: 0.001,
            decay_epoch: 160,
        },
        ..TrainOptions::default()
    };
    let log = train_loop(&mut overfit_model, &samples[..8], &overfit_opts)
        .map_err(|e| e.to_string())?;
    let overfit = log.epochs.last().ok_or("empty log")?.mean_angular_error_deg;
    println!("    8-sample overfit: {overfit:.3} deg after 200 epochs");
    if overfit >= 1.0 {
        return Err(format!("overfit error {overfit:.3} deg >= 1"));
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 900.0 {
        return Err(format!("took {secs:.0}s, budget 900s"));
    }
    Ok(format!(
        "{first:.1} -> {last:.2} deg in 20 epochs; overfit {overfit:.2} deg; {secs:.0}s"
    ))
}

fn row_params(config: ModelConfig) -> Result<(usize, HashMap<String, usize>), String> {
    let model = FrNet::new(config, 0).map_err(|e| e.to_string())?;
    let report = profile::cost_report(&model);
    let map = report
        .rows
        .iter()
        .map(|r| (r.name.clone(), r.params))
        .collect();
    Ok((report.total_params, map))
}

fn changed_rows(
    base: &HashMap<String, usize>,
    other: &HashMap<String, usize>,
) -> Vec<String> {
    let mut names: Vec<String> = base
        .iter()
        .filter(|(k, v)| other.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    names.extend(
        other
            .iter()
            .filter(|(k, _)| !base.contains_key(*k))
            .map(|(k, _)| k.clone()),
    );
    names.sort();
    names.dedup();
    names
}

// 8. Each ablation flag alters exactly its documented subgraph and trains.
fn criterion_ablations(samples: &[SyntheticSample]) -> CriterionResult {
    let (base_total, base_rows) = row_params(ModelConfig::small())?;

    // names of blocks that hold spectral encoders in the unablated model
    let frb_prefixes: Vec<String> = {
        let mut prefixes: Vec<String> = base_rows
            .keys()
            .filter(|k| k.contains(".enc") || k.contains(".local") || k.contains(".fusion"))
            .map(|k| format!("{}.", k.split('.').next().expect("block prefix")))
            .collect();
        prefixes.sort();
        prefixes.dedup();
        prefixes
    };

    let flags: [(&str, fn(&mut ModelConfig)); 4] = [
        ("fft_residual_block", |c| {
            c.ablation.disable_fft_residual_block = true
        }),
        ("fft_encoder", |c| c.ablation.disable_fft_encoder = true),
        ("concat_shortcut", |c| c.ablation.disable_concat_shortcut = true),
        ("encoder_shortcut", |c| {
            c.ablation.disable_encoder_shortcut = true
        }),
    ];

    let mut notes = Vec::new();
    for (name, apply) in flags {
        let mut config = ModelConfig::small();
        apply(&mut config);
        let (total, rows) = row_params(config.clone())?;
        let changed = changed_rows(&base_rows, &rows);

        let confined = match name {
            "fft_encoder" => {
                let expected: usize = base_rows
                    .iter()
                    .filter(|(k, _)| k.contains(".enc"))
                    .map(|(_, v)| v)
                    .sum();
                if base_total - total != expected {
                    return Err(format!(
                        "{name}: delta {} != encoder params {expected}",
                        base_total - total
                    ));
                }
                changed.iter().all(|n| n.contains(".enc"))
            }
            "concat_shortcut" => changed.iter().all(|n| n.contains(".fusion")),
            "encoder_shortcut" => {
                total == base_total && changed.iter().all(|n| n.ends_with(".shortcut"))
            }
            "fft_residual_block" => changed
                .iter()
                .all(|n| frb_prefixes.iter().any(|p| n.starts_with(p.as_str()))),
            _ => unreachable!(),
        };
        if !confined {
            return Err(format!("{name}: unexpected rows changed: {changed:?}"));
        }

        // one epoch of training must run under the flag
        let mut model = FrNet::new(config, 1).map_err(|e| e.to_string())?;
        let opts = TrainOptions {
            epochs: 1,
            batch_size: 4,
            seed: 1,
            ..TrainOptions::default()
        };
        train_loop(&mut model, &samples[..8], &opts).map_err(|e| format!("{name}: {e}"))?;
        notes.push(format!("{name} delta {}", base_total as i64 - total as i64));
    }

    // no combination of flags crashes a forward pass
    let img = &samples[0].image;
    for bits in 0..16u32 {
        let mut config = ModelConfig::small();
        config.ablation.disable_fft_residual_block = bits & 1 != 0;
        config.ablation.disable_fft_encoder = bits & 2 != 0;
        config.ablation.disable_concat_shortcut = bits & 4 != 0;
        config.ablation.disable_encoder_shortcut = bits & 8 != 0;
        let model = FrNet::new(config, 2).map_err(|e| format!("combo {bits}: {e}"))?;
        model.infer(img).map_err(|e| format!("combo {bits}: {e}"))?;
    }
    Ok(notes.join(", "))
}

// 9. Angular error metric anchors.
fn criterion_metrics() -> CriterionResult {
    let detail = run_verify_suite("metrics")?;
    let fwd = angles_to_vector(GazeAngles::new(0.0, 0.0)).map_err(|e| e.to_string())?;
    let right =
        angles_to_vector(GazeAngles::new(0.0, std::f64::consts::FRAC_PI_2)).map_err(|e| e.to_string())?;
    let back = angles_to_vector(GazeAngles::new(0.0, std::f64::consts::PI)).map_err(|e| e.to_string())?;
    let zero = angular_error(fwd, fwd).map_err(|e| e.to_string())?;
    let ninety = angular_error(fwd, right).map_err(|e| e.to_string())?;
    let opposite = angular_error(fwd, back).map_err(|e| e.to_string())?;
    if zero.abs() >= 1e-10 || (ninety - 90.0).abs() >= 1e-10 || (opposite - 180.0).abs() >= 1e-10 {
        return Err(format!("anchors: {zero:.2e}, {ninety}, {opposite}"));
    }
    Ok(detail)
}

// 10. Determinism and on-disk formats.
fn criterion_determinism() -> CriterionResult {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    // dataset regeneration is bitwise identical
    let d1 = dir.path().join("d1");
    let d2 = dir.path().join("d2");
    generate_dataset(6, 32, 9, AngleRange::default(), &d1).map_err(|e| e.to_string())?;
    generate_dataset(6, 32, 9, AngleRange::default(), &d2).map_err(|e| e.to_string())?;
    for file in ["images.bin", "labels.csv"] {
        let a = std::fs::read(d1.join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(d2.join(file)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("dataset file {file} differs between same-seed runs"));
        }
    }

    // same-seed training is bitwise identical, end to end
    let train_dir = dir.path().join("train_data");
    generate_dataset(8, 64, 3, AngleRange::default(), &train_dir).map_err(|e| e.to_string())?;
    let samples =
        load_dataset(&read_manifest(train_dir.join("manifest.toml")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let train_once = |path: &std::path::Path| -> Result<Vec<u8>, String> {
        let mut model = FrNet::new(ModelConfig::small(), 7).map_err(|e| e.to_string())?;
        let opts = TrainOptions {
            epochs: 2,
            batch_size: 4,
            seed: 7,
            ..TrainOptions::default()
        };
        train_loop(&mut model, &samples, &opts).map_err(|e| e.to_string())?;
        save_checkpoint(path, &model).map_err(|e| e.to_string())?;
        std::fs::read(path).map_err(|e| e.to_string())
    };
    let c1 = train_once(&dir.path().join("a.frck"))?;
    let c2 = train_once(&dir.path().join("b.frck"))?;
    if c1 != c2 {
        return Err("same-seed training produced different checkpoints".into());
    }

    // checkpoints round-trip bitwise through load/save
    let loaded = load_checkpoint(dir.path().join("a.frck")).map_err(|e| e.to_string())?;
    save_checkpoint(dir.path().join("c.frck"), &loaded).map_err(|e| e.to_string())?;
    if std::fs::read(dir.path().join("c.frck")).map_err(|e| e.to_string())? != c1 {
        return Err("checkpoint did not round-trip bitwise".into());
    }

    // corruption fails loudly
    let mut bad = c1.clone();
    bad[0] ^= 0xff;
    std::fs::write(dir.path().join("bad.frck"), &bad).map_err(|e| e.to_string())?;
    if load_checkpoint(dir.path().join("bad.frck")).is_ok() {
        return Err("corrupt checkpoint loaded without error".into());
    }
    let blob = train_dir.join("images.bin");
    let bytes = std::fs::read(&blob).map_err(|e| e.to_string())?;
    std::fs::write(&blob, &bytes[..bytes.len() / 2]).map_err(|e| e.to_string())?;
    let manifest = read_manifest(train_dir.join("manifest.toml")).map_err(|e| e.to_string())?;
    if load_dataset(&manifest).is_ok() {
        return Err("truncated dataset blob loaded without error".into());
    }

    Ok("datasets, training, and checkpoints bitwise reproducible; corruption detected".into())
}

#[test]
fn acceptance() {
    // shared dataset for the training-based criteria
    let data_dir = tempfile::tempdir().expect("tempdir");
    let manifest = generate_dataset(512, 64, 0, AngleRange::default(), data_dir.path())
        .expect("dataset generation");
    let samples = load_dataset(&manifest).expect("dataset load");

    let criteria: Vec<(&str, Box<dyn FnOnce() -> CriterionResult>)> = vec![
        ("1 convolution-theorem equivalence", Box::new(criterion_conv_equivalence)),
        ("2 fft correctness", Box::new(criterion_fft_correctness)),
        ("3 mask equivalence", Box::new(criterion_mask_equivalence)),
        ("4 gradient checks", Box::new(criterion_gradients)),
        ("5 parameter and flop budgets", Box::new(criterion_budgets)),
        ("6 complexity scaling", Box::new(criterion_scaling)),
        ("7 trainability", {
            let s = samples.clone();
            Box::new(move || criterion_trainability(&s))
        }),
        ("8 ablation wiring", {
            let s = samples.clone();
            Box::new(move || criterion_ablations(&s))
        }),
        ("9 metric fidelity", Box::new(criterion_metrics)),
        ("10 determinism and formats", Box::new(criterion_determinism)),
    ];

    let mut failures = Vec::new();
    for (name, body) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(body))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.1}s): {detail}"),
            Err(reason) => {
                println!("FAIL criterion {name} ({secs:.1}s): {reason}");
                failures.push(format!("{name}: {reason}"));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "acceptance failures:\n{}",
        failures.join("\n")
    );
}
