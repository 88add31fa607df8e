//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with
//! its measurements; a lock runs them one at a time so timings are not
//! skewed by parallel tests.

use std::f64::consts::PI;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::RealFftPlanner;
use uatr::audio::synth::with_snr_range;
use uatr::audio::*;
use uatr::dsp::{build_filterbank, erb_bandwidth, FilterbankConfig};
use uatr::features::*;
use uatr::metrics::*;
use uatr::nn::layers::*;
use uatr::nn::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

#[test]
fn filterbank_fidelity() {
    let _guard = serial();
    let start = Instant::now();
    let bank = build_filterbank(&FilterbankConfig::default()).unwrap();
    let fs = bank.sample_rate();
    let n = 1 << 18;
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let df = fs / n as f64;
    let mut failures = Vec::new();
    for (k, (kernel, fc)) in bank.kernels().iter().zip(bank.center_frequencies()).enumerate() {
        let mut buf = vec![0.0; n];
        buf[..kernel.len()].copy_from_slice(kernel);
        let mut spec = fft.make_output_vec();
        fft.process(&mut buf, &mut spec).unwrap();
        let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
        let (peak_bin, peak) = power
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (i, &p)| if p > b.1 { (i, p) } else { b });
        let peak_hz = peak_bin as f64 * df;
        let erb = power.iter().sum::<f64>() * df / peak;
        let erb_ratio = erb / erb_bandwidth(fc).unwrap();
        let peak_err = (peak_hz - fc).abs() / fc;
        if peak_err > 0.01 || (erb_ratio - 1.0).abs() > 0.05 {
            failures.push(format!(
                "#{k} fc {fc:.0} Hz: peak {peak_hz:.1} Hz ({:.2}%), ERB ratio {erb_ratio:.3}",
                100.0 * peak_err
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "filterbank fidelity",
        failures.is_empty() && secs < 10.0,
        format!(
            "{} of {} filters out of tolerance {failures:?}; {secs:.1} s",
            failures.len(),
            bank.len()
        ),
    );
}

#[test]
fn pipeline_tonotopy() {
    let _guard = serial();
    let start = Instant::now();
    let bank = build_filterbank(&FilterbankConfig::default()).unwrap();
    let fcs = bank.center_frequencies();
    let fs = bank.sample_rate();
    let mut hits = 0;
    let mut misses = Vec::new();
    for i in 0..10 {
        let f = 100.0 * (7000.0f64 / 100.0).powf(i as f64 / 9.0);
        let clip = AudioClip::new(
            (0..16000)
                .map(|k| 0.5 * (2.0 * PI * f * k as f64 / fs).sin())
                .collect(),
            fs,
        );
        let map = cochleagram_map(
            &clip,
            &bank,
            &FramingConfig::default(),
            &CompressionConfig::default(),
        )
        .unwrap();
        let means = map.row_means();
        let got = (0..means.len())
            .max_by(|&a, &b| means[a].total_cmp(&means[b]))
            .unwrap();
        let want = (0..fcs.len())
            .min_by(|&a, &b| (fcs[a] - f).abs().total_cmp(&(fcs[b] - f).abs()))
            .unwrap();
        if got == want {
            hits += 1;
        } else {
            misses.push(format!("{f:.0} Hz -> row {got}, nearest {want}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "pipeline tonotopy",
        hits == 10 && secs < 30.0,
        format!("{hits}/10 tones on their nearest channel {misses:?}; {secs:.1} s"),
    );
}

fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Worst relative error of `analytic` against central differences of `f`.
fn fd(x: &Tensor, analytic: &Tensor, step: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[j] += step;
        let mut m = x.clone();
        m.data_mut()[j] -= step;
        let numeric = (f(&p) - f(&m)) / (2.0 * step);
        let a = analytic.data()[j];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}

#[test]
fn gradient_correctness() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    let mut layer_errors = Vec::new();

    let x = random(vec![1, 6, 6], &mut rng);
    let w = random(vec![2, 1, 3, 3], &mut rng);
    let b = random(vec![2], &mut rng);
    let (y, cache) = conv2d_forward_cached(&x, &w, &b, 1, 0).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let (gi, gw, gb) = conv2d_backward(&r, &cache, &w).unwrap();
    let conv = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&conv2d_forward(x, w, b, 1, 0).unwrap(), &r);
    layer_errors.push((
        "conv",
        fd(&x, &gi, 1e-3, |x| conv(x, &w, &b))
            .max(fd(&w, &gw, 1e-3, |w| conv(&x, w, &b)))
            .max(fd(&b, &gb, 1e-3, |b| conv(&x, &w, b))),
    ));

    let x = random(vec![2, 4, 6, 6], &mut rng);
    let r = random(x.dims().to_vec(), &mut rng);
    let g = relu_backward(&r, &x).unwrap();
    layer_errors.push(("relu", fd(&x, &g, 1e-6, |x| dot(&relu_forward(x), &r))));
    let (y, pc) = maxpool_forward(&x, 2, 2).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let g = maxpool_backward(&r, &pc).unwrap();
    layer_errors.push((
        "maxpool",
        fd(&x, &g, 1e-6, |x| dot(&maxpool_forward(x, 2, 2).unwrap().0, &r)),
    ));
    let r = random(vec![2, 4], &mut rng);
    let g = global_avg_pool_backward(&r, x.dims()).unwrap();
    layer_errors.push((
        "gap",
        fd(&x, &g, 1e-6, |x| dot(&global_avg_pool_forward(x).unwrap(), &r)),
    ));

    let x = random(vec![3, 8], &mut rng);
    let w = random(vec![5, 8], &mut rng);
    let b = random(vec![5], &mut rng);
    let r = random(vec![3, 5], &mut rng);
    let (gi, gw, gb) = fully_connected_backward(&r, &x, &w).unwrap();
    let fc = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&fully_connected_forward(x, w, b).unwrap(), &r);
    layer_errors.push((
        "fully connected",
        fd(&x, &gi, 1e-6, |x| fc(x, &w, &b))
            .max(fd(&w, &gw, 1e-6, |w| fc(&x, w, &b)))
            .max(fd(&b, &gb, 1e-6, |b| fc(&x, &w, b))),
    ));
    let z = random(vec![2, 5], &mut rng);
    let rs = random(vec![2, 5], &mut rng);
    let g = softmax_backward(&rs, &softmax(&z)).unwrap();
    layer_errors.push(("softmax", fd(&z, &g, 1e-6, |z| dot(&softmax(z), &rs))));

    let targets = one_hot(&[0, 3], 5).unwrap();
    let (_, g) = cce_loss(&softmax(&z), &targets).unwrap();
    let cce_err = fd(&z, &g, 1e-5, |z| cce_loss(&softmax(z), &targets).unwrap().0);

    let model = build_reference_model(32, 32, 3, 5, 7).unwrap();
    let sample = Tensor::new(
        vec![3, 32, 32],
        (0..3072).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let model_check = gradient_check(&model, &sample, 1, 0.05, 1e-5, 1e-6, 8).unwrap();

    let layer_max = layer_errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient correctness",
        layer_max < 1e-4 && model_check.max_relative_error < 1e-4 && cce_err < 1e-6 && secs < 120.0,
        format!(
            "layers {layer_errors:?}; model {:.2e} over {} params; softmax+cce {cce_err:.2e}; {secs:.1} s",
            model_check.max_relative_error, model_check.checked
        ),
    );
}

#[test]
fn parameter_budget() {
    let _guard = serial();
    let model = build_reference_model(224, 224, 3, 5, 0).unwrap();
    let count = count_parameters(&model);
    let off = (count as f64 - 1.6e6).abs() / 1.6e6;
    report(
        "parameter budget",
        count == 1_607_749 && count == closed_form_parameter_count(model.specs()) && off < 0.01,
        format!("{count} parameters, {:.2}% from 1.6 M", 100.0 * off),
    );
}

/// Features for every clip, grouped into train / val / test.
fn featurize(items: &[CorpusItem], frontend: Frontend, size: usize) -> [Vec<Example>; 3] {
    let ex = FeatureExtractor::new(FeatureConfig {
        frontend,
        height: size,
        width: size,
        ..FeatureConfig::default()
    })
    .unwrap();
    let mut sets: [Vec<Example>; 3] = Default::default();
    for item in items {
        let img = ex.extract(&item.clip).unwrap();
        let slot = Split::ALL.iter().position(|&s| s == item.split).unwrap();
        sets[slot].push(Example {
            input: Tensor::new(vec![3, size, size], img.to_chw()).unwrap(),
            label: item.clip.label.unwrap() as usize,
        });
    }
    sets
}

fn test_report(model: &Model, test: &[Example]) -> EvalReport {
    let inputs: Vec<&Tensor> = test.iter().map(|e| &e.input).collect();
    let mut probs = Vec::new();
    for chunk in inputs.chunks(32) {
        probs.extend(predict_batch(model, chunk).unwrap());
    }
    let labels: Vec<usize> = test.iter().map(|e| e.label).collect();
    let names: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    EvalReport::from_probabilities(&labels, &probs, &names).unwrap()
}

const FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

#[test]
fn desk_scale_classification() {
    let _guard = serial();
    let start = Instant::now();
    let corpus = synth_corpus(&default_profiles(), 200, 4.0, 16000.0, 2024, FRACTIONS).unwrap();
    let [train_set, val_set, test_set] = featurize(&corpus, Frontend::Gammatone, 64);
    let config = TrainConfig {
        epochs: 10,
        seed: 2024,
        ..TrainConfig::default()
    };
    let model = build_reference_model(64, 64, 3, 5, 2024).unwrap();
    let out = train(model, &train_set, &val_set, &config).unwrap();
    let r = test_report(&out.best, &test_set);
    let mins = start.elapsed().as_secs_f64() / 60.0;
    report(
        "desk-scale classification",
        r.accuracy >= 0.90 && r.kappa >= 0.85 && mins < 30.0,
        format!(
            "test accuracy {:.4}, kappa {:.4} on {} clips (best epoch {:?}); {mins:.1} min",
            r.accuracy, r.kappa, r.num_samples, out.best_epoch
        ),
    );
}

#[test]
fn frontend_ordering_low_snr() {
    let _guard = serial();
    let start = Instant::now();
    let profiles = with_snr_range(&default_profiles(), (-5.0, 5.0));
    let mut wins = 0;
    let mut runs = Vec::new();
    for seed in 1..=5u64 {
        let corpus = synth_corpus(&profiles, 100, 4.0, 16000.0, seed, FRACTIONS).unwrap();
        let mut acc = [0.0; 2];
        for (slot, frontend) in [Frontend::Gammatone, Frontend::Mfcc].into_iter().enumerate() {
            let [train_set, val_set, test_set] = featurize(&corpus, frontend, 64);
            let config = TrainConfig {
                epochs: 8,
                seed,
                ..TrainConfig::default()
            };
            let model = build_reference_model(64, 64, 3, 5, seed).unwrap();
            let out = train(model, &train_set, &val_set, &config).unwrap();
            acc[slot] = test_report(&out.best, &test_set).accuracy;
        }
        wins += (acc[0] >= acc[1]) as usize;
        runs.push(format!("seed {seed}: gammatone {:.3} mfcc {:.3}", acc[0], acc[1]));
    }
    let hours = start.elapsed().as_secs_f64() / 3600.0;
    report(
        "front-end ordering",
        wins >= 4 && hours < 3.0,
        format!("gammatone >= mfcc in {wins}/5 {runs:?}; {:.1} min", hours * 60.0),
    );
}

/// Share of positive/negative pairs where the positive scores higher, ties 1/2.
fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in pos.iter().enumerate() {
        for (j, &pj) in pos.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn metric_oracles() {
    let _guard = serial();
    let start = Instant::now();
    let hand = cohens_kappa(&ConfusionMatrix {
        counts: vec![vec![45, 5], vec![15, 35]],
    })
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_indep = 0.0f64;
    for _ in 0..50 {
        let c = rng.gen_range(2..6);
        let rows: Vec<u64> = (0..c).map(|_| rng.gen_range(1..10)).collect();
        let cols: Vec<u64> = (0..c).map(|_| rng.gen_range(1..10)).collect();
        let counts = rows
            .iter()
            .map(|r| cols.iter().map(|c| r * c).collect())
            .collect();
        worst_indep = worst_indep.max(cohens_kappa(&ConfusionMatrix { counts }).unwrap().abs());
    }

    let mut worst_auc = 0.0f64;
    let mut cases = 0;
    while cases < 100 {
        let scores: Vec<f64> = (0..20).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
        let pos: Vec<bool> = (0..20).map(|_| rng.gen_bool(0.5)).collect();
        let Ok(roc) = roc_curve(&scores, &pos) else {
            continue;
        };
        worst_auc = worst_auc.max((roc.auc - mann_whitney(&scores, &pos)).abs());
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "metric oracles",
        (hand - 0.6).abs() < 1e-12 && worst_indep < 1e-12 && worst_auc < 1e-12 && secs < 5.0,
        format!("kappa {hand:.12}; independent |kappa| <= {worst_indep:.1e}; |AUC - U| <= {worst_auc:.1e} over {cases} cases; {secs:.2} s"),
    );
}

#[test]
fn real_time_factor() {
    let _guard = serial();
    let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
    let model = build_reference_model(224, 224, 3, 5, 3).unwrap();
    let clip = synth_vessel(&default_profiles()[4], 4.0, 16000.0, 3).unwrap();
    let end_to_end = latency_benchmark(
        || {
            let img = ex.extract(&clip)?;
            predict(&model, &img)?;
            Ok(())
        },
        10,
    )
    .unwrap();
    let img = ex.extract(&clip).unwrap();
    let inference = latency_benchmark(|| predict(&model, &img).map(|_| ()), 10).unwrap();
    report(
        "real-time factor",
        end_to_end.max_ms < 4000.0 && end_to_end.real_time_factor > 1.0,
        format!(
            "4 s window end-to-end mean {:.1} ms (p50 {:.1}, p95 {:.1}), real-time factor {:.1}; inference only {:.1} ms",
            end_to_end.mean_ms, end_to_end.p50_ms, end_to_end.p95_ms, end_to_end.real_time_factor, inference.mean_ms
        ),
    );
}

/// Synthesize to disk, reload, extract, train and evaluate; returns the report JSON.
fn end_to_end(dir: &std::path::Path) -> (String, Model) {
    let manifest = make_dataset(dir, &default_profiles(), 10, 4.0, 16000.0, 99, FRACTIONS).unwrap();
    let ex = FeatureExtractor::new(FeatureConfig {
        height: 32,
        width: 32,
        ..FeatureConfig::default()
    })
    .unwrap();
    let load = |split| -> Vec<Example> {
        load_split(&manifest, dir, split)
            .unwrap()
            .iter()
            .map(|clip| Example {
                input: Tensor::new(vec![3, 32, 32], ex.extract(clip).unwrap().to_chw()).unwrap(),
                label: clip.label.unwrap() as usize,
            })
            .collect()
    };
    let (train_set, val_set, test_set) = (load(Split::Train), load(Split::Val), load(Split::Test));
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 99,
        ..TrainConfig::default()
    };
    let out = train(
        build_reference_model(32, 32, 3, 5, 99).unwrap(),
        &train_set,
        &val_set,
        &config,
    )
    .unwrap();
    (test_report(&out.best, &test_set).to_json().unwrap(), out.best)
}

#[test]
fn determinism_and_persistence() {
    let _guard = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (json_a, model) = end_to_end(a.path());
    let (json_b, _) = end_to_end(b.path());

    let path = a.path().join("model.gtcn");
    let mut opt = AdamState::new(model.params());
    opt.step = 3;
    save_checkpoint(&path, &model, Some(&opt)).unwrap();
    let (back, back_opt) = load_checkpoint(&path).unwrap();
    let bits = |m: &Model| -> Vec<u64> {
        m.params()
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|v| v.to_bits())
            .collect()
    };
    let params_exact = bits(&back) == bits(&model) && back.specs() == model.specs() && back_opt == Some(opt);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new(
        vec![4, 3, 32, 32],
        (0..4 * 3072).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let same_predictions = model.forward(&x).unwrap() == back.forward(&x).unwrap();
    report(
        "determinism and persistence",
        json_a == json_b && params_exact && same_predictions,
        format!(
            "report JSON identical: {} ({} bytes); checkpoint bit-exact: {params_exact}; predictions identical: {same_predictions}",
            json_a == json_b,
            json_a.len()
        ),
    );
}
