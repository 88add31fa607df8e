use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uatr::nn::layers::*;
use uatr::nn::*;

fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Worst relative error of `analytic` against central differences of the
/// scalar `f` over every entry of `x`.
fn check(x: &Tensor, analytic: &Tensor, step: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[j] += step;
        let mut m = x.clone();
        m.data_mut()[j] -= step;
        let numeric = (f(&p) - f(&m)) / (2.0 * step);
        worst = worst.max(rel(analytic.data()[j], numeric));
    }
    worst
}

#[test]
fn conv_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(vec![1, 6, 6], &mut rng);
    let w = random(vec![2, 1, 3, 3], &mut rng);
    let b = random(vec![2], &mut rng);
    let (y, cache) = conv2d_forward_cached(&x, &w, &b, 1, 1).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let (gi, gw, gb) = conv2d_backward(&r, &cache, &w).unwrap();
    let step = 1e-3;
    let ex = check(&x, &gi, step, |x| {
        dot(&conv2d_forward(x, &w, &b, 1, 1).unwrap(), &r)
    });
    let ew = check(&w, &gw, step, |w| {
        dot(&conv2d_forward(&x, w, &b, 1, 1).unwrap(), &r)
    });
    let eb = check(&b, &gb, step, |b| {
        dot(&conv2d_forward(&x, &w, b, 1, 1).unwrap(), &r)
    });
    assert!(ex < 1e-4 && ew < 1e-4 && eb < 1e-4, "{ex} {ew} {eb}");
}

#[test]
fn strided_batched_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random(vec![2, 3, 9, 9], &mut rng);
    let w = random(vec![4, 3, 5, 5], &mut rng);
    let b = random(vec![4], &mut rng);
    let (y, cache) = conv2d_forward_cached(&x, &w, &b, 2, 2).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let (gi, gw, _) = conv2d_backward(&r, &cache, &w).unwrap();
    let ex = check(&x, &gi, 1e-5, |x| {
        dot(&conv2d_forward(x, &w, &b, 2, 2).unwrap(), &r)
    });
    let ew = check(&w, &gw, 1e-5, |w| {
        dot(&conv2d_forward(&x, w, &b, 2, 2).unwrap(), &r)
    });
    assert!(ex < 1e-4 && ew < 1e-4, "{ex} {ew}");
}

#[test]
fn relu_pool_gap_fc_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let step = 1e-6;

    let x = random(vec![2, 3, 6, 6], &mut rng);
    let r = random(x.dims().to_vec(), &mut rng);
    let g = relu_backward(&r, &x).unwrap();
    assert!(check(&x, &g, step, |x| dot(&relu_forward(x), &r)) < 1e-4);

    let (y, cache) = maxpool_forward(&x, 2, 2).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let g = maxpool_backward(&r, &cache).unwrap();
    assert!(check(&x, &g, step, |x| dot(&maxpool_forward(x, 2, 2).unwrap().0, &r)) < 1e-4);

    let y = global_avg_pool_forward(&x).unwrap();
    let r = random(y.dims().to_vec(), &mut rng);
    let g = global_avg_pool_backward(&r, x.dims()).unwrap();
    assert!(check(&x, &g, step, |x| dot(&global_avg_pool_forward(x).unwrap(), &r)) < 1e-4);

    let x = random(vec![3, 7], &mut rng);
    let w = random(vec![4, 7], &mut rng);
    let b = random(vec![4], &mut rng);
    let r = random(vec![3, 4], &mut rng);
    let (gi, gw, gb) = fully_connected_backward(&r, &x, &w).unwrap();
    assert!(
        check(&x, &gi, step, |x| dot(
            &fully_connected_forward(x, &w, &b).unwrap(),
            &r
        )) < 1e-4
    );
    assert!(
        check(&w, &gw, step, |w| dot(
            &fully_connected_forward(&x, w, &b).unwrap(),
            &r
        )) < 1e-4
    );
    assert!(
        check(&b, &gb, step, |b| dot(
            &fully_connected_forward(&x, &w, b).unwrap(),
            &r
        )) < 1e-4
    );

    let z = random(vec![2, 5], &mut rng);
    let r = random(vec![2, 5], &mut rng);
    let g = softmax_backward(&r, &softmax(&z)).unwrap();
    assert!(check(&z, &g, step, |z| dot(&softmax(z), &r)) < 1e-4);
}

#[test]
fn softmax_cce_gradient_matches_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let targets = one_hot(&[1, 4], 5).unwrap();
    let z = random(vec![2, 5], &mut rng);
    let (_, g) = cce_loss(&softmax(&z), &targets).unwrap();
    let worst = check(&z, &g, 1e-5, |z| cce_loss(&softmax(z), &targets).unwrap().0);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn argmax_of_softmax_is_argmax_of_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let z = random(vec![5], &mut rng);
        assert_eq!(argmax(softmax(&z).data()), argmax(z.data()));
    }
}

#[test]
fn reference_model_gradient_check() {
    let model = build_reference_model(32, 32, 3, 5, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Tensor::new(
        vec![3, 32, 32],
        (0..3072).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let report = gradient_check(&model, &x, 2, 0.05, 1e-5, 1e-6, 23).unwrap();
    println!("{report:?}");
    assert!(report.checked > 80_000);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn initial_loss_is_near_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for seed in 0..3 {
        let model = build_reference_model(64, 64, 3, 5, seed).unwrap();
        let x = Tensor::new(
            vec![8, 3, 64, 64],
            (0..8 * 3 * 4096).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..8).map(|i| i % 5).collect();
        let loss = model.loss_and_gradients(&x, &labels).unwrap().loss;
        assert!((loss - 5f64.ln()).abs() < 0.2, "seed {seed}: {loss}");
    }
}

#[test]
fn memorises_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let input = Tensor::new(
        vec![3, 32, 32],
        (0..3072).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let sample = vec![Example { input, label: 3 }];
    let config = TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let model = build_reference_model(32, 32, 3, 5, 42).unwrap();
    let out = train(model, &sample, &sample, &config).unwrap();
    let last = out.history.last().unwrap();
    assert!(last.train_loss < 1e-2 || last.val_loss < 1e-2, "{last:?}");
    assert!(last.val_loss < 1e-2, "{last:?}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let examples: Vec<Example> = (0..10)
        .map(|i| Example {
            input: Tensor::new(
                vec![3, 32, 32],
                (0..3072).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap(),
            label: i % 5,
        })
        .collect();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let model = build_reference_model(32, 32, 3, 5, 1).unwrap();
        train(model, &examples[..8], &examples[8..], &config).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.last, b.last);

    let zero = TrainConfig { epochs: 0, ..config };
    let initial = build_reference_model(32, 32, 3, 5, 1).unwrap();
    let out = train(initial.clone(), &examples, &[], &zero).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best, initial);
    assert!(train(initial, &[], &examples, &config).is_err());
}
