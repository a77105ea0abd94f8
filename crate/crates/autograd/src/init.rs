//! Weight initialisers. All take the caller's RNG so model construction is
//! reproducible from a seed.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::Mat;

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize),
    fan_in: usize,
    fan_out: usize,
) -> Mat {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    Mat::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// He/Kaiming normal for ReLU stacks: `N(0, 2 / fan_in)`.
pub fn he_normal<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), fan_in: usize) -> Mat {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Mat::from_shape_simple_fn(shape, || dist.sample(rng))
}

pub fn zeros(shape: (usize, usize)) -> Mat {
    Mat::zeros(shape)
}
