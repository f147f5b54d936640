use kfc::kfc::{init_weights, Formulation, KfcSpec};
use kfc::linalg::{Matrix, Rng};
use kfc::train::{
    evaluate, evaluate_partitioned, gradcheck, softmax_xent, train, Dataset, Layer, Model, ModelConfig, OptimizerKind,
    Preset, TrainConfig,
};

fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal())
}

fn toy_model(seed: u64) -> Model {
    let mut m = Model::new(
        "toy",
        vec![Layer::dense("in", 4, 6), Layer::AbsTanh, Layer::kfc("fc", KfcSpec::kfcm(6, 4, 3, 2, 2).unwrap())],
    )
    .unwrap();
    m.init(&mut Rng::new(seed));
    m
}

/// Two Gaussian blobs separated along the first axis.
fn blobs(rng: &mut Rng, n: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Matrix::from_fn(n, 2, |i, j| {
        let centre = if j == 0 {
            if labels[i] == 1 {
                2.0
            } else {
                -2.0
            }
        } else {
            0.0
        };
        centre + 0.5 * rng.normal()
    });
    Dataset::new(x, labels, 2).unwrap()
}

fn small_cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig { batch_size: 16, epochs, seed, lr: 0.01, weight_decay: 1e-4, ..Default::default() }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut rng = Rng::new(11);
    let model = toy_model(12);
    let x = random(&mut rng, 3, 4);
    let pair = gradcheck::model_loss(&model, &x, &[0, 3, 1], 1e-5).unwrap();
    assert_eq!(pair.len(), model.param_slices().iter().map(|s| s.len()).sum::<usize>() + 12);
    assert!(pair.max_rel_error() < 1e-4, "{}", pair.max_rel_error());
}

#[test]
fn kfc_layer_gradients_every_formulation() {
    let mut rng = Rng::new(13);
    let dims = (2, 2, 3, 8);
    let specs = [
        KfcSpec::formulation(Formulation::I, dims, &[2, 2, 2], 2).unwrap(),
        KfcSpec::formulation(Formulation::II, dims, &[4, 2], 1).unwrap(),
        KfcSpec::formulation(Formulation::III, dims, &[2, 4], 3).unwrap(),
        KfcSpec::formulation(Formulation::IV, dims, &[4, 2], 1).unwrap(),
        KfcSpec::kfcm_padded(7, 6, 2).unwrap(),
    ];
    for spec in specs {
        let mut w = init_weights(&spec, &mut rng);
        w.bias = (0..spec.output_dim()).map(|_| rng.normal()).collect();
        let x = random(&mut rng, 2, spec.input_dim());
        let g = random(&mut rng, 2, spec.output_dim());
        let pair = gradcheck::kfc_layer(&spec, &w, &x, &g, 1e-5).unwrap();
        assert!(pair.max_rel_error() < 1e-4, "{:?}: {}", spec.groups()[0].formulation, pair.max_rel_error());
    }
}

#[test]
fn gradient_check_refuses_dropout() {
    let m = Model::new("d", vec![Layer::dense("a", 2, 2), Layer::Dropout { keep: 0.5 }]).unwrap();
    assert!(gradcheck::model_loss(&m, &Matrix::zeros(1, 2), &[0], 1e-5).is_err());
}

#[test]
fn separable_toy_set_is_learned() {
    let mut rng = Rng::new(21);
    let (tr, va) = (blobs(&mut rng, 400), blobs(&mut rng, 100));
    let mut model = Model::new("lin", vec![Layer::dense("out", 2, 2)]).unwrap();
    model.init(&mut Rng::new(1));
    let out = train(&mut model, &tr, &va, &small_cfg(1, 50), |_| {}).unwrap();
    assert!(evaluate(&out.best, &tr).unwrap() <= 0.02);
    assert_eq!(out.history.len(), 50);
}

#[test]
fn training_is_deterministic() {
    let mut rng = Rng::new(22);
    let (tr, va) = (blobs(&mut rng, 200), blobs(&mut rng, 50));
    let run = |seed| {
        let mut model = Model::new(
            "mlp",
            vec![Layer::dense("a", 2, 8), Layer::AbsTanh, Layer::Dropout { keep: 0.5 }, Layer::dense("b", 8, 2)],
        )
        .unwrap();
        model.init(&mut Rng::new(seed));
        let out = train(&mut model, &tr, &va, &small_cfg(seed, 5), |_| {}).unwrap();
        (out.history, model)
    };
    let (h1, m1) = run(5);
    let (h2, m2) = run(5);
    assert_eq!(h1, h2);
    assert_eq!(m1, m2);
    assert_ne!(run(6).1, m1);
}

#[test]
fn first_batch_loss_near_log_classes() {
    let mut rng = Rng::new(23);
    let model = ModelConfig { preset: Preset::Kfc2, ..Default::default() }.build(1).unwrap();
    let x = Matrix::from_fn(100, 784, |_, _| rng.next_f64());
    let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
    let trace = model.forward_train(&x, &mut rng).unwrap();
    let (loss, _) = softmax_xent(&trace.output, &labels).unwrap();
    let ln10 = 10f64.ln();
    assert!((loss - ln10).abs() < 0.05 * ln10, "{loss}");
}

#[test]
fn reported_snapshot_is_min_validation_epoch() {
    // validation labels are the training labels flipped, so learning makes
    // validation error worse and the best epoch is never the last one
    let mut rng = Rng::new(24);
    let tr = blobs(&mut rng, 200);
    let mut va = tr.clone();
    va.labels.iter_mut().for_each(|l| *l = 1 - *l);
    let mut model = Model::new("lin", vec![Layer::dense("out", 2, 2)]).unwrap();
    model.init(&mut Rng::new(3));
    let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, lr: 0.02, ..small_cfg(3, 8) };
    let out = train(&mut model, &tr, &va, &cfg, |_| {}).unwrap();
    let errs: Vec<f64> = out.history.iter().map(|h| h.val_error).collect();
    let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(errs.windows(2).any(|w| w[1] > w[0]), "{errs:?}");
    assert_eq!(out.best_val_error(), min);
    assert_eq!(out.best_epoch, errs.iter().position(|&e| e == min).unwrap() + 1);
    assert!(out.best_epoch < errs.len() && errs[errs.len() - 1] > min, "{errs:?}");
    assert_eq!(evaluate(&out.best, &va).unwrap(), min);
    assert_eq!(evaluate(&model, &va).unwrap(), errs[errs.len() - 1]);
}

#[test]
fn evaluation_error_rates() {
    let mut rng = Rng::new(25);
    // a dense identity on one-hot features is always right
    let x = Matrix::from_fn(30, 3, |i, j| f64::from(u8::from(i % 3 == j)));
    let data = Dataset::new(x, (0..30).map(|i| i % 3).collect(), 3).unwrap();
    let mut perfect = Model::new("id", vec![Layer::dense("out", 3, 3)]).unwrap();
    perfect.param_slices_mut()[0].copy_from_slice(Matrix::identity(3).data());
    assert_eq!(evaluate(&perfect, &data).unwrap(), 0.0);

    let n = 100_000;
    let x = random(&mut rng, n, 8);
    let labels = (0..n).map(|_| rng.below(10)).collect();
    let data = Dataset::new(x, labels, 10).unwrap();
    let mut model = Model::new("rand", vec![Layer::dense("out", 8, 10)]).unwrap();
    model.init(&mut rng);
    let err = evaluate(&model, &data).unwrap();
    assert!((err - 0.9).abs() < 0.01, "{err}");
    for parts in [1, 2, 3, 7] {
        assert_eq!(evaluate_partitioned(&model, &data, parts).unwrap(), err);
    }
}

#[test]
fn training_input_errors() {
    let mut rng = Rng::new(26);
    let tr = blobs(&mut rng, 20);
    let mut model = Model::new("lin", vec![Layer::dense("out", 3, 2)]).unwrap();
    assert!(train(&mut model, &tr, &tr, &small_cfg(1, 1), |_| {}).is_err());
    let mut model = Model::new("lin", vec![Layer::dense("out", 2, 2)]).unwrap();
    let empty = tr.slice(0, 0);
    assert!(train(&mut model, &empty, &tr, &small_cfg(1, 1), |_| {}).is_err());
    let bad = TrainConfig { batch_size: 0, ..small_cfg(1, 1) };
    assert!(train(&mut model, &tr, &tr, &bad, |_| {}).is_err());
}
