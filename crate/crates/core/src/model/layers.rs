//! Trainable layers: conv, transposed conv, linear, batch norm, residual
//! blocks. Kaiming-uniform init from a caller-supplied RNG so the whole
//! model is reproducible from one seed.

use std::cell::RefCell;

use rand::Rng;

use crate::tensor::{Tensor, TensorError};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn kaiming_uniform(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    // gain sqrt(2) for ReLU-family activations
    let bound = (2.0f64).sqrt() * (3.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn bias_uniform(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv2d {
        let fan_in = in_ch * k * k;
        Conv2d {
            weight: Tensor::param(
                vec![out_ch, in_ch, k, k],
                kaiming_uniform(rng, out_ch * fan_in, fan_in),
            )
            .unwrap(),
            bias: Tensor::param(vec![out_ch], bias_uniform(rng, out_ch, fan_in)).unwrap(),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct ConvTranspose2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        rng: &mut impl Rng,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> ConvTranspose2d {
        let fan_in = in_ch * k * k;
        ConvTranspose2d {
            weight: Tensor::param(
                vec![in_ch, out_ch, k, k],
                kaiming_uniform(rng, in_ch * out_ch * k * k, fan_in),
            )
            .unwrap(),
            bias: Tensor::param(vec![out_ch], bias_uniform(rng, out_ch, fan_in)).unwrap(),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv_transpose2d(&self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            weight: Tensor::param(
                vec![out_dim, in_dim],
                kaiming_uniform(rng, out_dim * in_dim, in_dim),
            )
            .unwrap(),
            bias: Tensor::param(vec![out_dim], bias_uniform(rng, out_dim, in_dim)).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.linear(&self.weight, &self.bias)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Tensor::param(vec![channels], vec![1.0; channels]).unwrap(),
            beta: Tensor::param(vec![channels], vec![0.0; channels]).unwrap(),
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor, TensorError> {
        x.batch_norm2d(
            &self.gamma,
            &self.beta,
            &mut self.running_mean.borrow_mut(),
            &mut self.running_var.borrow_mut(),
            training,
            BN_EPS,
            BN_MOMENTUM,
        )
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// conv -> LeakyReLU(0.2) -> conv, plus identity skip.
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(rng: &mut impl Rng, channels: usize) -> ResBlock {
        ResBlock {
            conv1: Conv2d::new(rng, channels, channels, 3, 1, 1),
            conv2: Conv2d::new(rng, channels, channels, 3, 1, 1),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let h = self.conv1.forward(x)?.leaky_relu(LEAKY_SLOPE);
        self.conv2.forward(&h)?.add(x)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
    }
}
