//! Helpers shared by the property and acceptance suites.
#![allow(dead_code)]

use rand::Rng;

use xordlab::gd::{self, subgradient, TrainingSet, WeightMatrix};
use xordlab::mnist::{forward_backward, mean_loss, ConvNet, MnistDataset, NetShape, PIXELS};
use xordlab::patterns::{sample_arrangement, PatternSet};
use xordlab::rng::seeded;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of the hinge loss against its subgradient.
///
/// The loss is piecewise linear, so the check is only meaningful where every
/// perturbed point lies on the same linear piece. Returns `None` when the
/// subgradient at some `W ± h·e_j` differs from the one at `W`.
pub fn hinge_fd_rel_err(w: &WeightMatrix<f64>, set: &TrainingSet, gamma: f64, h: f64) -> Option<f64> {
    let g = subgradient(w, set, gamma).unwrap().to_flat();
    let flat = w.to_flat();
    let k = w.k();
    let mut fd = Vec::with_capacity(flat.len());
    for j in 0..flat.len() {
        let side = |s: f64| {
            let mut p = flat.clone();
            p[j] += s * h;
            let wp = WeightMatrix::from_flat(k, &p).unwrap();
            let e = gd::evaluate(&wp, set, gamma).unwrap();
            (e.loss, e.grad.to_flat() == g)
        };
        let ((lp, sp), (lm, sm)) = (side(1.0), side(-1.0));
        if !(sp && sm) {
            return None;
        }
        fd.push((lp - lm) / (2.0 * h));
    }
    Some(rel_err(&fd, &g))
}

/// Random images with pixels in `[0, 1]` and random labels.
pub fn random_images(n: usize, seed: u64) -> MnistDataset {
    let mut rng = seeded(seed);
    let images = (0..n * PIXELS).map(|_| rng.random::<f32>()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..10u8)).collect();
    MnistDataset::new(images, labels).unwrap()
}

/// Central differences of the mean cross-entropy for an `f64` net, over all
/// conv parameters, all FC biases and `fc_samples` random FC weights.
///
/// ReLU and max pooling make the loss nonsmooth on a measure-zero set. A
/// coordinate whose differences at `h` and `h/2` disagree straddles such a
/// kink; the whole configuration is then reported as `None`.
pub fn mnist_fd_rel_err(channels: usize, images: usize, fc_samples: usize, seed: u64) -> Option<f64> {
    let shape = NetShape::new(channels, 5).unwrap();
    let mut rng = seeded(seed);
    let mut net = ConvNet::<f64>::init(shape, 0.1, &mut rng).unwrap();
    for b in net.params.conv_b.iter_mut().chain(net.params.fc_b.iter_mut()) {
        *b = rng.random_range(-0.1..0.1);
    }
    let data = random_images(images, seed ^ 0xdada);
    let idx: Vec<usize> = (0..images).collect();
    let (_, grad) = forward_backward(&net, &data, &idx).unwrap();

    // (group, index) coordinates to probe.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    coords.extend((0..net.params.conv_w.len()).map(|i| (0, i)));
    coords.extend((0..net.params.conv_b.len()).map(|i| (1, i)));
    coords.extend((0..fc_samples).map(|_| (2, rng.random_range(0..net.params.fc_w.len()))));
    coords.extend((0..net.params.fc_b.len()).map(|i| (3, i)));

    let h = 1e-5;
    let mut fd = Vec::new();
    let mut an = Vec::new();
    for (g, i) in coords {
        let central = |h: f64| {
            let probe = |s: f64| {
                let mut n = net.clone();
                n.params.groups_mut()[g][i] += s * h;
                mean_loss(&n, &data, &idx)
            };
            (probe(1.0) - probe(-1.0)) / (2.0 * h)
        };
        let (full, half) = (central(h), central(h / 2.0));
        if (full - half).abs() > 1e-7 * (1.0 + full.abs()) {
            return None;
        }
        fd.push(full);
        an.push(grad.groups()[g][i]);
    }
    Some(rel_err(&fd, &an))
}

/// Whether `xord_forward` is exactly constant over `per_class` random
/// inputs of every class feasible at `d`.
pub fn class_constant(w: &WeightMatrix<f64>, d: usize, per_class: usize, seed: u64) -> bool {
    let mut rng = seeded(seed);
    PatternSet::all().filter(|s| s.feasible(d)).all(|class| {
        let first = gd::xord_forward(w, &sample_arrangement(class, d, &mut rng));
        (1..per_class).all(|_| gd::xord_forward(w, &sample_arrangement(class, d, &mut rng)).to_bits() == first.to_bits())
    })
}
