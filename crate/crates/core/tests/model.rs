mod common;

use common::*;
use mvlift_core::model::*;
use mvlift_core::train::OptimizerState;
use mvlift_core::Error;
use ndarray::{Array2, ArrayD};
use proptest::prelude::*;
use rand::Rng;

fn tiny(n: usize) -> ModelConfig {
    ModelConfig {
        n_landmarks: n,
        root: 0,
        width: 8,
        blocks: 1,
        output_scale: 1.0,
    }
}

fn random_input(b: usize, n: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((b, 2 * n), || rng.random_range(-1.0..1.0))
}

fn random_upstream(b: usize, n: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((b, 3 * n), || rng.random_range(-1.0..1.0))
}

/// Scalar probe `Σ upstream ⊙ output` evaluated without touching running
/// statistics.
fn probe(params: &ModelParams, x: &Array2<f64>, up: &Array2<f64>) -> f64 {
    (&params.forward(x).unwrap().output * up).sum()
}

/// Central-difference check of `backward` on a chosen subset of entries of
/// every learnable tensor.
fn check_backward(
    params: &ModelParams,
    x: &Array2<f64>,
    up: &Array2<f64>,
    per_tensor: usize,
    rng: &mut impl Rng,
) {
    let pass = params.forward(x).unwrap();
    let grads = params.backward(&pass, up).unwrap();
    let names = params.learnable_names();
    let h = 1e-5;
    let mut work = params.clone();
    for (t, name) in names.iter().enumerate() {
        let len = params.learnable()[t].len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for flat in picks {
            let base = *params.learnable()[t].iter().nth(flat).unwrap();
            let set = |w: &mut ModelParams, v: f64| {
                *w.learnable_mut()[t].iter_mut().nth(flat).unwrap() = v;
            };
            set(&mut work, base + h);
            let plus = probe(&work, x, up);
            set(&mut work, base - h);
            let minus = probe(&work, x, up);
            set(&mut work, base);
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = *grads.tensors[t].iter().nth(flat).unwrap();
            if analytic.abs() < 1e-8 && numeric.abs() < 1e-8 {
                continue;
            }
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(
                err < 1e-4,
                "{name}[{flat}]: analytic {analytic}, numeric {numeric}"
            );
        }
    }
}

#[test]
fn full_configuration_shapes() {
    let params = ModelParams::init(ModelConfig::full(16), 1).unwrap();
    assert_eq!(params.input.weight.dim(), (1024, 32));
    assert_eq!(params.output.weight.dim(), (48, 1024));
    assert_eq!(params.blocks.len(), 4);
    let names = params.learnable_names();
    assert_eq!(names.len(), params.learnable().len());
    assert_eq!(names.len(), 4 + 8 * 4);
    let expected = 32 * 1024 + 1024 + 4 * (2 * (1024 * 1024 + 1024) + 4 * 1024) + 1024 * 48 + 48;
    assert_eq!(params.parameter_count(), expected);
}

#[test]
fn init_is_deterministic_per_seed() {
    let a = ModelParams::init(tiny(6), 9).unwrap();
    let b = ModelParams::init(tiny(6), 9).unwrap();
    let c = ModelParams::init(tiny(6), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let bound = 1.0 / (12f64).sqrt();
    assert!(a.input.weight.iter().all(|w| w.abs() <= bound));
}

#[test]
fn config_is_validated() {
    let mut cfg = tiny(6);
    cfg.root = 6;
    assert!(ModelParams::init(cfg, 0).is_err());
    let mut cfg = tiny(6);
    cfg.output_scale = 0.0;
    assert!(ModelParams::init(cfg, 0).is_err());
    assert!(ModelParams::init(tiny(1), 0).is_err());
}

#[test]
fn root_landmark_is_exactly_zero() {
    let mut rng = rng(200);
    let mut cfg = tiny(7);
    cfg.root = 3;
    cfg.output_scale = 1000.0;
    let params = ModelParams::init(cfg, 4).unwrap();
    let out = params
        .forward(&random_input(5, 7, &mut rng))
        .unwrap()
        .output;
    assert_eq!(out.dim(), (5, 21));
    for row in out.rows() {
        assert_eq!([row[9], row[10], row[11]], [0.0, 0.0, 0.0]);
    }
}

#[test]
fn wrong_input_width_is_rejected() {
    let params = ModelParams::init(tiny(6), 0).unwrap();
    let err = params.forward(&Array2::zeros((3, 10))).unwrap_err();
    assert!(matches!(
        err,
        Error::LandmarkCount {
            expected: 6,
            got: 5
        }
    ));
}

#[test]
fn train_mode_needs_two_samples() {
    let mut params = ModelParams::init(tiny(6), 0).unwrap();
    assert!(params.forward(&Array2::zeros((1, 12))).is_err());
    params.set_mode(Mode::Eval);
    assert!(params.forward(&Array2::zeros((1, 12))).is_ok());
}

#[test]
fn eval_batch_matches_single_samples() {
    let mut rng = rng(201);
    let mut params = ModelParams::init(tiny(6), 2).unwrap();
    // move the running statistics away from identity first
    for _ in 0..3 {
        params.forward_train(&random_input(8, 6, &mut rng)).unwrap();
    }
    params.set_mode(Mode::Eval);
    let x = random_input(6, 6, &mut rng);
    let batch = params.predict(&x).unwrap();
    for i in 0..6 {
        let single = params
            .predict(&x.slice(ndarray::s![i..i + 1, ..]).to_owned())
            .unwrap();
        for (a, b) in batch.row(i).iter().zip(single.row(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn running_statistics_follow_momentum() {
    let mut rng = rng(202);
    let mut params = ModelParams::init(tiny(4), 3).unwrap();
    let x = random_input(5, 4, &mut rng);
    let pass = params.forward(&x).unwrap();
    assert_eq!(
        params.blocks[0].first_norm.running_mean,
        ndarray::Array1::zeros(8)
    );
    // oracle: recompute the first pre-norm activation and its moments directly
    let h = x.dot(&params.input.weight.t()) + &params.input.bias;
    let z = h.dot(&params.blocks[0].first.weight.t()) + &params.blocks[0].first.bias;
    params.commit_batch_statistics(&pass);
    for j in 0..8 {
        let col: Vec<f64> = z.column(j).to_vec();
        let mean = col.iter().sum::<f64>() / 5.0;
        let unbiased = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        let norm = &params.blocks[0].first_norm;
        assert!((norm.running_mean[j] - 0.1 * mean).abs() < 1e-12);
        assert!((norm.running_var[j] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences_tiny() {
    let mut rng = rng(203);
    let mut cfg = tiny(5);
    cfg.root = 2;
    let mut params = ModelParams::init(cfg, 5).unwrap();
    let x = random_input(4, 5, &mut rng);
    let up = random_upstream(4, 5, &mut rng);
    check_backward(&params, &x, &up, usize::MAX, &mut rng);
    for _ in 0..2 {
        params.forward_train(&random_input(6, 5, &mut rng)).unwrap();
    }
    params.set_mode(Mode::Eval);
    check_backward(&params, &x, &up, usize::MAX, &mut rng);
}

#[test]
fn backward_matches_finite_differences_full_width() {
    let mut rng = rng(204);
    let mut cfg = ModelConfig::full(16);
    cfg.output_scale = 1.0;
    let params = ModelParams::init(cfg, 6).unwrap();
    let x = random_input(4, 16, &mut rng);
    let up = random_upstream(4, 16, &mut rng);
    check_backward(&params, &x, &up, 6, &mut rng);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mut rng = rng(205);
    let params = ModelParams::init(tiny(6), 7).unwrap();
    let x = random_input(4, 6, &mut rng);
    let pass = params.forward(&x).unwrap();
    let g = params.backward(&pass, &Array2::zeros((4, 18))).unwrap();
    assert_eq!(g.max_abs(), 0.0);
    assert!(params.backward(&pass, &Array2::zeros((4, 17))).is_err());
}

#[test]
fn backward_is_linear_in_upstream() {
    let mut rng = rng(206);
    let params = ModelParams::init(tiny(6), 8).unwrap();
    let x = random_input(4, 6, &mut rng);
    let pass = params.forward(&x).unwrap();
    let u = random_upstream(4, 6, &mut rng);
    let v = random_upstream(4, 6, &mut rng);
    let (a, b) = (0.7, -1.3);
    let combined = params.backward(&pass, &(&u * a + &v * b)).unwrap();
    let mut expected = params.backward(&pass, &u).unwrap();
    expected.scale(a);
    let mut gv = params.backward(&pass, &v).unwrap();
    gv.scale(b);
    expected.add_assign(&gv);
    for (c, e) in combined.tensors.iter().zip(&expected.tensors) {
        let diff: ArrayD<f64> = c - e;
        assert!(diff.iter().all(|d| d.abs() < 1e-12));
    }
}

#[test]
fn silenced_blocks_are_identity() {
    let mut rng = rng(207);
    let mut cfg = tiny(6);
    cfg.blocks = 3;
    let mut params = ModelParams::init(cfg.clone(), 9).unwrap();
    for b in &mut params.blocks {
        b.second_norm.gamma.fill(0.0);
        b.second_norm.beta.fill(0.0);
    }
    let x = random_input(4, 6, &mut rng);
    let out = params.forward(&x).unwrap().output;
    // oracle: input dense straight into output dense, then root-centering
    let h = x.dot(&params.input.weight.t()) + &params.input.bias;
    let raw = h.dot(&params.output.weight.t()) + &params.output.bias;
    for (row, r) in out.rows().into_iter().zip(raw.rows()) {
        for j in 0..6 {
            for k in 0..3 {
                let expected = r[3 * j + k] - r[k];
                assert!((row[3 * j + k] - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let mut rng = rng(208);
    let mut params = ModelParams::init(tiny(6), 10).unwrap();
    params.forward_train(&random_input(4, 6, &mut rng)).unwrap();
    let mut optimizer = OptimizerState::new(&params);
    optimizer.step = 3;
    optimizer.first_moment[0].fill(0.25);
    let ck = Checkpoint {
        params,
        epoch: 7,
        optimizer: Some(optimizer),
    };
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &ck).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap(), ck);

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::Checkpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eval_output_is_finite_and_rooted(seed in 0u64..1000, b in 1usize..6) {
        let mut rng = rng(seed);
        let mut params = ModelParams::init(tiny(5), seed).unwrap();
        params.set_mode(Mode::Eval);
        let out = params.predict(&random_input(b, 5, &mut rng)).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
        for row in out.rows() {
            prop_assert_eq!([row[0], row[1], row[2]], [0.0, 0.0, 0.0]);
        }
    }
}
