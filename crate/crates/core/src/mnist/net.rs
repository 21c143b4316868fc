//! conv (stride 1, valid) → ReLU → 2×2 max-pool (stride 2) → FC → softmax
//! cross-entropy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::idx::{MnistDataset, SIDE};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub const CLASSES: usize = 10;

/// Examples per gradient chunk. Chunks are summed in order, so results do
/// not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub channels: usize,
    pub filter_size: usize,
}

impl NetShape {
    pub fn new(channels: usize, filter_size: usize) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("channels must be >= 1"));
        }
        if filter_size == 0 || filter_size > SIDE - 1 {
            return Err(invalid(format!("filter size {filter_size} outside 1..=27")));
        }
        Ok(NetShape { channels, filter_size })
    }

    /// Side of the convolution output, `28 − f + 1`.
    pub fn conv_side(&self) -> usize {
        SIDE - self.filter_size + 1
    }

    pub fn pool_side(&self) -> usize {
        self.conv_side() / 2
    }

    pub fn features(&self) -> usize {
        self.channels * self.pool_side() * self.pool_side()
    }

    pub fn filter_len(&self) -> usize {
        self.filter_size * self.filter_size
    }
}

/// Parameters, or gradients of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    /// `channels × f × f`, row-major within a filter.
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    /// `10 × features`; features are channel-major, then row, then column.
    pub fc_w: Vec<T>,
    pub fc_b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(shape: NetShape) -> Self {
        Params {
            conv_w: vec![T::zero(); shape.channels * shape.filter_len()],
            conv_b: vec![T::zero(); shape.channels],
            fc_w: vec![T::zero(); CLASSES * shape.features()],
            fc_b: vec![T::zero(); CLASSES],
        }
    }

    pub fn groups(&self) -> [&[T]; 4] {
        [&self.conv_w, &self.conv_b, &self.fc_w, &self.fc_b]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.conv_w, &mut self.conv_b, &mut self.fc_w, &mut self.fc_b]
    }

    fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    fn scale(&mut self, s: T) {
        for g in self.groups_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNet<T> {
    pub shape: NetShape,
    pub params: Params<T>,
}

/// Dot product with eight interleaved accumulators, combined in a fixed order.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Draws from `N(0, σ²)` and redraws values outside `±2σ`.
pub fn truncated_normal<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

fn argmax<T: Scalar>(l: &[T]) -> usize {
    let mut best = 0;
    for k in 1..l.len() {
        if l[k] > l[best] {
            best = k;
        }
    }
    best
}

impl<T: Scalar> ConvNet<T> {
    pub fn zeros(shape: NetShape) -> Self {
        ConvNet {
            shape,
            params: Params::zeros(shape),
        }
    }

    /// Conv and FC weights from a truncated normal with standard deviation
    /// `std`; biases zero. Conv weights are drawn first.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, std: f64, rng: &mut R) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(invalid(format!("init std must be finite and >= 0, got {std}")));
        }
        let mut net = Self::zeros(shape);
        for w in net.params.conv_w.iter_mut().chain(net.params.fc_w.iter_mut()) {
            *w = T::of(truncated_normal(std, rng));
        }
        Ok(net)
    }

    pub fn filter(&self, c: usize) -> &[T] {
        let l = self.shape.filter_len();
        &self.params.conv_w[c * l..(c + 1) * l]
    }

    pub fn filters(&self) -> Vec<Vec<f64>> {
        (0..self.shape.channels)
            .map(|c| self.filter(c).iter().map(|v| v.as_f64()).collect())
            .collect()
    }

    /// Logits, pooled features, and for each feature the flat index of the
    /// routed conv output (lowest index among maxima).
    fn forward_one(&self, img: &[f32]) -> (Vec<T>, Vec<T>, Vec<usize>, Vec<T>) {
        let f = self.shape.filter_size;
        let o = self.shape.conv_side();
        let p = self.shape.pool_side();
        let img: Vec<T> = img.iter().map(|&v| T::of(v as f64)).collect();
        let mut conv = vec![T::zero(); self.shape.channels * o * o];
        for c in 0..self.shape.channels {
            let w = self.filter(c);
            let out = &mut conv[c * o * o..(c + 1) * o * o];
            out.fill(self.params.conv_b[c]);
            for dy in 0..f {
                for dx in 0..f {
                    let wv = w[dy * f + dx];
                    for y in 0..o {
                        let src = &img[(y + dy) * SIDE + dx..(y + dy) * SIDE + dx + o];
                        for (dst, a) in out[y * o..(y + 1) * o].iter_mut().zip(src) {
                            *dst += wv * *a;
                        }
                    }
                }
            }
        }
        let mut feats = vec![T::zero(); self.shape.features()];
        let mut route = vec![0usize; self.shape.features()];
        for c in 0..self.shape.channels {
            for py in 0..p {
                for px in 0..p {
                    let mut best = T::neg_infinity();
                    let mut arg = 0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = c * o * o + (2 * py + dy) * o + 2 * px + dx;
                        let v = conv[idx].relu();
                        if v > best {
                            best = v;
                            arg = idx;
                        }
                    }
                    let fi = c * p * p + py * p + px;
                    feats[fi] = best;
                    route[fi] = arg;
                }
            }
        }
        let nf = self.shape.features();
        let logits = (0..CLASSES)
            .map(|k| {
                let row = &self.params.fc_w[k * nf..(k + 1) * nf];
                self.params.fc_b[k] + dot(row, &feats)
            })
            .collect();
        (logits, feats, route, conv)
    }

    pub fn logits(&self, img: &[f32]) -> Vec<T> {
        self.forward_one(img).0
    }

    pub fn predict(&self, img: &[f32]) -> u8 {
        argmax(&self.logits(img)) as u8
    }

    /// Fraction of correctly classified examples.
    pub fn accuracy(&self, data: &MnistDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct: usize = (0..data.len())
            .into_par_iter()
            .with_min_len(64)
            .filter(|&i| self.predict(data.image(i)) == data.labels[i])
            .count();
        correct as f64 / data.len() as f64
    }

    /// Loss and gradient for one example (not averaged), and whether the
    /// prediction was correct.
    fn backward_one(&self, img: &[f32], label: u8, grad: &mut Params<T>) -> (T, bool) {
        let (logits, feats, route, conv) = self.forward_one(img);
        let correct = argmax(&logits) == label as usize;
        let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        let loss = z.ln() + m - logits[label as usize];
        let nf = self.shape.features();
        let mut dfeat = vec![T::zero(); nf];
        for k in 0..CLASSES {
            let mut d = exps[k] / z;
            if k == label as usize {
                d -= T::one();
            }
            grad.fc_b[k] += d;
            let wrow = &self.params.fc_w[k * nf..(k + 1) * nf];
            let grow = &mut grad.fc_w[k * nf..(k + 1) * nf];
            for i in 0..nf {
                grow[i] += d * feats[i];
                dfeat[i] += d * wrow[i];
            }
        }
        let f = self.shape.filter_size;
        let o = self.shape.conv_side();
        let l = self.shape.filter_len();
        for (fi, &idx) in route.iter().enumerate() {
            if conv[idx] <= T::zero() || dfeat[fi] == T::zero() {
                continue;
            }
            let d = dfeat[fi];
            let c = idx / (o * o);
            let (y, x) = ((idx % (o * o)) / o, idx % o);
            grad.conv_b[c] += d;
            let gw = &mut grad.conv_w[c * l..(c + 1) * l];
            for dy in 0..f {
                for dx in 0..f {
                    gw[dy * f + dx] += d * T::of(img[(y + dy) * SIDE + x + dx] as f64);
                }
            }
        }
        (loss, correct)
    }
}

/// Mean softmax cross-entropy over `indices` of `data` and its gradient.
pub fn forward_backward<T: Scalar>(net: &ConvNet<T>, data: &MnistDataset, indices: &[usize]) -> Result<(T, Params<T>)> {
    forward_backward_counted(net, data, indices).map(|(l, g, _)| (l, g))
}

/// As [`forward_backward`], plus the number of examples the network
/// classified correctly before the update.
pub fn forward_backward_counted<T: Scalar>(net: &ConvNet<T>, data: &MnistDataset, indices: &[usize]) -> Result<(T, Params<T>, usize)> {
    if indices.is_empty() {
        return Err(invalid("empty batch"));
    }
    let parts: Vec<(T, Params<T>, usize)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Params::zeros(net.shape);
            let mut loss = T::zero();
            let mut correct = 0;
            for &i in chunk {
                let (l, ok) = net.backward_one(data.image(i), data.labels[i], &mut g);
                loss += l;
                correct += ok as usize;
            }
            (loss, g, correct)
        })
        .collect();
    let mut total = T::zero();
    let mut correct = 0;
    let mut grad = Params::zeros(net.shape);
    for (l, g, c) in &parts {
        total += *l;
        correct += c;
        grad.add_assign(g);
    }
    let inv = T::one() / T::of(indices.len() as f64);
    grad.scale(inv);
    Ok((total * inv, grad, correct))
}

/// Mean loss without gradients.
pub fn mean_loss<T: Scalar>(net: &ConvNet<T>, data: &MnistDataset, indices: &[usize]) -> T {
    let total: f64 = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let l = net.logits(data.image(i));
                    let m = l.iter().copied().fold(T::neg_infinity(), T::max);
                    let z: T = l.iter().map(|&v| (v - m).exp()).sum();
                    (z.ln() + m - l[data.labels[i] as usize]).as_f64()
                })
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    T::of(total / indices.len().max(1) as f64)
}
