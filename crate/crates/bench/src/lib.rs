//! Shared fixtures for the benchmarks.

use mvlift_core::data::{synth_generate, Dataset, SynthConfig};
use mvlift_core::losses::MultiViewBatch;
use mvlift_core::model::{input_matrix, ModelParams};
use mvlift_core::train::TrainConfig;
use ndarray::{Array2, Array3};

/// Triangulated synthetic dataset on the default 4-camera ring.
pub fn dataset(samples: usize) -> Dataset {
    let mut data = synth_generate(&SynthConfig {
        n_samples: samples,
        pixel_noise: 2.0,
        seed: 5,
        ..SynthConfig::default()
    })
    .expect("default synthetic config generates");
    data.triangulate().expect("noisy rig triangulates");
    data
}

/// Desk-preset network for `data`.
pub fn network(data: &Dataset) -> ModelParams {
    let cfg = TrainConfig::desk().model_config(data.n_landmarks(), data.root());
    ModelParams::init(cfg, 5).expect("desk preset is valid")
}

/// Sample-major network input of every (sample, view).
pub fn inputs(data: &Dataset) -> Array2<f64> {
    let samples: Vec<_> = (0..data.len())
        .map(|i| data.multiview_sample(i).unwrap())
        .collect();
    input_matrix(
        samples.iter().flat_map(|s| &s.detections),
        data.n_landmarks(),
    )
    .unwrap()
}

/// Loss batch over all of `data` with the network's predictions.
pub fn batch(data: &Dataset, params: &ModelParams) -> MultiViewBatch {
    let c = data.rig.len();
    let n = data.n_landmarks();
    let out = params.forward(&inputs(data)).unwrap().output;
    let predictions: Array3<f64> = out.into_shape_with_order((data.len(), c, 3 * n)).unwrap();
    let samples = (0..data.len())
        .map(|i| data.multiview_sample(i).unwrap())
        .collect();
    MultiViewBatch::new(
        &data.rig,
        data.rig.ids().collect(),
        n,
        data.root(),
        data.normalization.scale,
        samples,
        predictions,
    )
    .unwrap()
}
