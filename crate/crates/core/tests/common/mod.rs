#![allow(dead_code)]

pub mod gradcheck;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionfer::{Shape, Tensor};

use gradcheck::{away_from_zero, check, distinct_windows, Report};

fn small(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -0.1, 0.1, rng)
}

/// Runs the finite-difference check for every differentiable layer with
/// inputs drawn from `seed`. Returns `(layer name, report)` pairs.
pub fn layer_gradient_suite(seed: u64) -> Vec<(&'static str, Report)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = 2.0 * gradcheck::EPSILON;
    let mut out = Vec::new();

    let inputs = vec![
        small(Shape::new(2, 2, 5, 5), &mut rng),
        small(Shape::new(3, 2, 3, 3), &mut rng),
    ];
    out.push((
        "conv2d 3x3 pad 1",
        check(|g, v| g.conv2d(v[0], v[1], 1, 1).unwrap(), inputs, &mut rng),
    ));

    let inputs = vec![
        small(Shape::new(1, 2, 6, 6), &mut rng),
        small(Shape::new(2, 2, 3, 3), &mut rng),
    ];
    out.push((
        "conv2d 3x3 stride 2",
        check(|g, v| g.conv2d(v[0], v[1], 2, 0).unwrap(), inputs, &mut rng),
    ));

    let inputs = vec![
        small(Shape::new(2, 3, 4, 4), &mut rng),
        small(Shape::new(2, 3, 1, 1), &mut rng),
    ];
    out.push((
        "conv2d 1x1",
        check(|g, v| g.conv2d(v[0], v[1], 1, 0).unwrap(), inputs, &mut rng),
    ));

    // Batch normalization is scale invariant in its input, so a step of
    // 1e-3 on 1e-1-scale data behaves like a step of 1e-2 on unit data and
    // the O(step^2) truncation term alone reaches ~4e-4. Unit-scale inputs
    // keep the oracle's own error well under the tolerance.
    let inputs = vec![
        Tensor::randn(Shape::new(2, 3, 3, 3), 1.0, &mut rng),
        Tensor::uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, &mut rng),
        small(Shape::new(1, 3, 1, 1), &mut rng),
    ];
    out.push((
        "batch_norm train",
        check(
            |g, v| g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0,
            inputs,
            &mut rng,
        ),
    ));

    let running_mean: Vec<f64> = (0..3).map(|c| 0.01 * c as f64).collect();
    let running_var = vec![0.02, 0.5, 1.3];
    let inputs = vec![
        small(Shape::new(2, 3, 2, 2), &mut rng),
        Tensor::uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, &mut rng),
        small(Shape::new(1, 3, 1, 1), &mut rng),
    ];
    out.push((
        "batch_norm infer",
        check(
            |g, v| {
                g.batch_norm_infer(v[0], v[1], v[2], &running_mean, &running_var, 1e-5)
                    .unwrap()
            },
            inputs,
            &mut rng,
        ),
    ));

    let inputs = vec![away_from_zero(Shape::new(2, 3, 4, 4), gap, &mut rng)];
    out.push(("relu", check(|g, v| g.relu(v[0]), inputs, &mut rng)));

    let inputs = vec![distinct_windows(Shape::new(1, 2, 4, 4), gap, &mut rng)];
    out.push(("max_pool2", check(|g, v| g.max_pool2(v[0]).unwrap(), inputs, &mut rng)));

    let inputs = vec![small(Shape::new(2, 2, 4, 6), &mut rng)];
    out.push(("avg_pool2", check(|g, v| g.avg_pool2(v[0]).unwrap(), inputs, &mut rng)));

    let inputs = vec![small(Shape::new(2, 3, 4, 4), &mut rng)];
    out.push((
        "global_avg_pool",
        check(|g, v| g.global_avg_pool(v[0]), inputs, &mut rng),
    ));

    let inputs = vec![
        small(Shape::matrix(3, 5), &mut rng),
        small(Shape::matrix(5, 4), &mut rng),
        small(Shape::new(1, 4, 1, 1), &mut rng),
    ];
    out.push((
        "fully_connected",
        check(|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap(), inputs, &mut rng),
    ));

    let labels = [
        rand::Rng::random_range(&mut rng, 0..3usize),
        rand::Rng::random_range(&mut rng, 0..3usize),
    ];
    let inputs = vec![small(Shape::matrix(2, 3), &mut rng)];
    out.push((
        "softmax_cross_entropy",
        check(
            |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap().0,
            inputs,
            &mut rng,
        ),
    ));

    let inputs = vec![
        small(Shape::new(2, 1, 3, 3), &mut rng),
        small(Shape::new(2, 2, 3, 3), &mut rng),
    ];
    out.push((
        "concat + flatten",
        check(
            |g, v| {
                let c = g.concat_channels(&[v[0], v[1]]).unwrap();
                g.flatten(c)
            },
            inputs,
            &mut rng,
        ),
    ));

    out
}
