use serde::{Deserialize, Serialize};

use super::net::{NetShape, Params};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Which parameter groups an optimizer step may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub conv_w: bool,
    pub conv_b: bool,
    pub fc_w: bool,
    pub fc_b: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        conv_w: true,
        conv_b: true,
        fc_w: true,
        fc_b: true,
    };
    /// Everything except the conv filters.
    pub const FROZEN_FILTERS: Trainable = Trainable {
        conv_w: false,
        ..Trainable::ALL
    };

    fn flags(&self) -> [bool; 4] {
        [self.conv_w, self.conv_b, self.fc_w, self.fc_b]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: NetShape) -> Self {
        AdamState {
            m: Params::zeros(shape),
            v: Params::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step with β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, params: &mut Params<T>, grads: &Params<T>, lr: f64, which: Trainable) {
    state.t += 1;
    let b1 = T::of(BETA1);
    let b2 = T::of(BETA2);
    let one = T::one();
    let c1 = one - T::of(BETA1.powi(state.t as i32));
    let c2 = one - T::of(BETA2.powi(state.t as i32));
    let lr = T::of(lr);
    let eps = T::of(EPSILON);
    let groups = params
        .groups_mut()
        .into_iter()
        .zip(state.m.groups_mut())
        .zip(state.v.groups_mut())
        .zip(grads.groups())
        .zip(which.flags());
    for ((((p, m), v), g), on) in groups {
        if !on {
            continue;
        }
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
