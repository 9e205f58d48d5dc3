use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionfer::layers::{softmax, Mode};
use regionfer::models::{Architecture, ClassifierConfig, Model, VisualizerConfig};
use regionfer::{Graph, ParamStore, Shape, Tensor};

fn input_tensor(n: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(Shape::new(n, 1, 64, 64), 1.0, &mut rng)
}

/// Runs `op` on a leaf, backpropagates `upstream` through it and returns the
/// input gradient.
fn input_grad(
    x: Tensor<f64>,
    upstream_seed: u64,
    op: impl Fn(&mut Graph<f64>, regionfer::Var) -> regionfer::Var,
) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let v = g.leaf(x);
    let out = op(&mut g, v);
    let mut rng = ChaCha8Rng::seed_from_u64(upstream_seed);
    let upstream = Tensor::uniform(g.shape(out), -1.0, 1.0, &mut rng);
    let weighted = g.mul_const(out, upstream.clone()).unwrap();
    let root = g.sum(weighted);
    g.backward(root, &mut ParamStore::new()).unwrap();
    (g.grad(v).unwrap().clone(), upstream)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one(logits in proptest::collection::vec(-1e4f64..1e4, 12)) {
        let t = Tensor::from_vec(Shape::matrix(3, 4), logits).unwrap();
        let p = softmax(&t);
        prop_assert!(p.all_finite());
        for row in p.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pooling_backward_conserves_gradient_mass(seed in any::<u64>(), n in 1usize..3, c in 1usize..4, half in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(Shape::new(n, c, 2 * half, 2 * half), -1.0, 1.0, &mut rng);
        let (dx, up) = input_grad(x.clone(), seed ^ 7, |g, v| g.max_pool2(v).unwrap());
        prop_assert!((dx.sum() - up.sum()).abs() < 1e-9);
        let (dx, up) = input_grad(x, seed ^ 9, |g, v| g.avg_pool2(v).unwrap());
        prop_assert!((dx.sum() - up.sum()).abs() < 1e-9);
    }

    #[test]
    fn batch_norm_training_output_is_standardized(seed in any::<u64>(), shift in -50.0f64..50.0, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(4, 3, 5, 5);
        let x = Tensor::randn(shape, 1.0, &mut rng).map(|v| v * scale + shift);
        let mut g = Graph::new();
        let xv = g.leaf(x);
        let gamma = g.leaf(Tensor::full(Shape::new(1, 3, 1, 1), 1.0));
        let beta = g.leaf(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        let (y, _, _) = g.batch_norm_train(xv, gamma, beta, 1e-5).unwrap();
        let y = g.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..5).flat_map(move |h| (0..5).map(move |w| (n, h, w))))
                .map(|(n, h, w)| y.at(n, ch, h, w))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-4);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn global_average_times_area_is_spatial_sum(seed in any::<u64>(), h in 1usize..7, w in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(Shape::new(2, 3, h, w), -2.0, 2.0, &mut rng);
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let gap = g.global_avg_pool(v);
        for n in 0..2 {
            for c in 0..3 {
                let oracle: f64 = (0..h).flat_map(|y| (0..w).map(move |xx| (y, xx))).map(|(y, xx)| x.at(n, c, y, xx)).sum();
                prop_assert!((g.value(gap).at(n, c, 0, 0) * (h * w) as f64 - oracle).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn default_classifier_parameter_count() {
    let model: Model<f32> = Model::build(Architecture::Classifier(ClassifierConfig::with_classes(7)), 0).unwrap();
    // conv kernels (in·out·9) plus gamma and beta per output channel
    let convs = [
        (1, 64),
        (64, 64),
        (64, 128),
        (128, 128),
        (128, 256),
        (256, 256),
        (256, 256),
        (256, 256),
        (256, 256),
        (256, 256),
    ];
    let conv_total: usize = convs.iter().map(|&(i, o)| i * o * 9 + 2 * o).sum();
    // 256 channels at 4×4 after four halvings of 64, into 7 classes with bias
    let fc = 256 * 4 * 4 * 7 + 7;
    assert_eq!(model.params.trainable_count(), conv_total + fc);
    assert_eq!(conv_total + fc, 3_535_175);
}

#[test]
fn fresh_models_give_finite_outputs_over_100_seeds() {
    let x = input_tensor(2, 99);
    for seed in 0..100 {
        let plan = vec![vec![4 + (seed as usize % 3)], vec![8]];
        let mut classifier: Model<f32> =
            Model::build(Architecture::Classifier(ClassifierConfig::new(plan, 3)), seed).unwrap();
        assert!(classifier.logits(&x).unwrap().all_finite(), "classifier seed {seed}");
        let cfg = VisualizerConfig {
            initial_channels: 4,
            blocks: 2,
            layers_per_block: 2,
            growth_rate: 3,
            ..VisualizerConfig::with_classes(3)
        };
        let mut vis: Model<f32> = Model::build(Architecture::Visualizer(cfg), seed).unwrap();
        assert!(vis.logits(&x).unwrap().all_finite(), "visualizer seed {seed}");
    }
    for seed in 0..2 {
        let mut full: Model<f32> =
            Model::build(Architecture::Classifier(ClassifierConfig::with_classes(7)), seed).unwrap();
        assert!(full.logits(&x).unwrap().all_finite());
    }
}

#[test]
fn visualizer_final_maps_are_16x16_for_any_growth_and_compression() {
    let x = input_tensor(1, 5);
    for (growth, compression) in [(12, 0.5), (4, 0.25), (7, 1.0), (2, 0.75)] {
        let cfg = VisualizerConfig {
            initial_channels: 6,
            layers_per_block: 1,
            growth_rate: growth,
            compression,
            ..VisualizerConfig::with_classes(4)
        };
        let mut model: Model<f32> = Model::build(Architecture::Visualizer(cfg.clone()), 1).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = model.visualizer_forward(&mut g, xv, Mode::Infer).unwrap();
        let s = g.shape(out.feature_maps);
        assert_eq!((s.h, s.w), (16, 16));
        assert_eq!(s.c, cfg.feature_len());
    }
}

#[test]
fn replay_is_bit_identical() {
    let x = input_tensor(3, 11);
    let arch = Architecture::Classifier(ClassifierConfig::new(vec![vec![6], vec![8]], 4));
    let run = || {
        let mut m: Model<f32> = Model::build(arch.clone(), 42).unwrap();
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let logits = m.forward(&mut g, xv, Mode::Train).unwrap();
        let (loss, _) = g.softmax_cross_entropy(logits, &[0, 1, 2]).unwrap();
        g.backward(loss, &mut m.params).unwrap();
        let grads: Vec<u32> = m
            .params
            .iter()
            .flat_map(|p| p.grad.data().iter().map(|v| v.to_bits()))
            .collect();
        (g.value(loss).data()[0].to_bits(), grads)
    };
    assert_eq!(run(), run());
}
