//! Five-layer 4x4 patch discriminator.
//!
//! Layers 1-3 use stride 2 and layers 4-5 stride 1, so the output grid is
//! `H/8 x W/8`. Stride-1 layers pad one row/column before and two after to
//! keep the size. Batch normalization (current-batch statistics) follows
//! the convolutions of layers 2-4; every layer but the last uses a
//! leaky ReLU with slope 0.2, the last a sigmoid.

use autoseg_nn::init::he_uniform;
use autoseg_nn::{Graph, NodeId, Padding, ParamId, ParamSet, ParamStore};
use ndarray::{Array4, ArrayD, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIDTHS: [usize; 5] = [64, 128, 256, 512, 1];
pub const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
pub const KERNEL: usize = 4;
pub const LEAK: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// Source channels plus one mask channel.
    pub in_channels: usize,
    /// Scales the widths of layers 1-4; the output layer keeps one channel.
    pub width_multiplier: f64,
}

impl DiscriminatorSpec {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            width_multiplier: 1.0,
        }
    }

    pub fn width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 2 {
            return Err(Error::Spec(format!(
                "the discriminator sees image and mask channels, so in_channels must be at least 2, got {}",
                self.in_channels
            )));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Spec(format!(
                "discriminator width_multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; 5] {
        let mut w = WIDTHS;
        for v in &mut w[..4] {
            *v = ((*v as f64 * self.width_multiplier).round() as usize).max(1);
        }
        w
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: ParamId,
    bias: Option<ParamId>,
    bn: Option<(ParamId, ParamId)>,
    stride: usize,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    store: ParamStore,
    layers: Vec<Layer>,
}

pub fn build_discriminator(in_channels: usize) -> Result<Discriminator> {
    build_discriminator_with(DiscriminatorSpec::new(in_channels), 0)
}

pub fn build_discriminator_with(spec: DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut cin = spec.in_channels;
    let mut layers = Vec::with_capacity(5);
    for (i, (&cout, &stride)) in spec.widths().iter().zip(STRIDES.iter()).enumerate() {
        let name = format!("disc{}", i + 1);
        let w = store.add(
            format!("{name}.weight"),
            he_uniform(&[KERNEL, KERNEL, cin, cout], KERNEL * KERNEL * cin, &mut rng),
        );
        let normed = (1..4).contains(&i);
        let (bias, bn) = if normed {
            let gamma = store.add(format!("{name}.gamma"), ArrayD::ones(vec![cout]));
            let beta = store.add(format!("{name}.beta"), ArrayD::zeros(vec![cout]));
            (None, Some((gamma, beta)))
        } else {
            (Some(store.add(format!("{name}.bias"), ArrayD::zeros(vec![cout]))), None)
        };
        layers.push(Layer { w, bias, bn, stride });
        cin = cout;
    }
    Ok(Discriminator { spec, store, layers })
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameters(&self) -> ParamSet {
        ParamSet::from_store(&self.store)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Spatial size of the patch grid for an `h x w` input.
    pub fn grid(h: usize, w: usize) -> (usize, usize) {
        (h / 8, w / 8)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        crate::generator::check_batch(shape, self.spec.in_channels, 8)
    }

    /// Scores the pair `(source, mask)`, both `B x H x W x _`.
    pub fn forward_graph(&self, g: &mut Graph, source: NodeId, mask: NodeId) -> Result<NodeId> {
        self.record(g, source, mask, false)
    }

    /// Like [`Self::forward_graph`] but with the weights held constant, so
    /// gradients reach the inputs only.
    pub fn forward_graph_frozen(&self, g: &mut Graph, source: NodeId, mask: NodeId) -> Result<NodeId> {
        self.record(g, source, mask, true)
    }

    fn record(&self, g: &mut Graph, source: NodeId, mask: NodeId, frozen: bool) -> Result<NodeId> {
        let x = g.concat_channels(source, mask);
        self.check_input(g.shape(x))?;
        let s = &self.store;
        let p = |g: &mut Graph, id| if frozen { g.frozen_param(s, id) } else { g.param(s, id) };
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let pad = if l.stride == 2 { Padding::uniform(1) } else { Padding::same(KERNEL) };
            let w = p(g, l.w);
            let b = l.bias.map(|b| p(g, b));
            h = g.conv2d(h, w, b, l.stride, pad);
            if let Some((gamma, beta)) = l.bn {
                let (gamma, beta) = (p(g, gamma), p(g, beta));
                h = g.batch_norm(h, gamma, beta, BN_EPS);
            }
            h = if i + 1 < self.layers.len() { g.leaky_relu(h, LEAK) } else { g.sigmoid(h) };
        }
        Ok(h)
    }

    /// Scores a concatenated `B x H x W x in_channels` batch.
    pub fn forward(&self, batch: &Array4<f64>) -> Result<Array4<f64>> {
        self.check_input(batch.shape())?;
        let c = self.spec.in_channels;
        let mut g = Graph::new();
        let src = g.input(batch.slice(ndarray::s![.., .., .., ..c - 1]).to_owned().into_dyn());
        let mask = g.input(batch.slice(ndarray::s![.., .., .., c - 1..]).to_owned().into_dyn());
        let y = self.forward_graph(&mut g, src, mask)?;
        Ok(g.value(y).clone().into_dimensionality::<Ix4>().expect("rank 4"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_grid_in_unit_interval() {
        let d = build_discriminator_with(DiscriminatorSpec::new(4).width(1.0 / 16.0), 3).unwrap();
        let x = Array4::from_shape_fn((2, 32, 32, 4), |(b, i, j, c)| ((b + i * j + c) % 5) as f64 / 5.0);
        let y = d.forward(&x).unwrap();
        assert_eq!(y.dim(), (2, 4, 4, 1));
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut d = build_discriminator_with(DiscriminatorSpec::new(4).width(1.0 / 16.0), 3).unwrap();
        let ids: Vec<_> = d.store().iter().map(|(id, _)| id).collect();
        for id in ids {
            d.store_mut().value_mut(id).fill(0.0);
        }
        let x = Array4::from_elem((1, 16, 16, 4), 0.7);
        assert!(d.forward(&x).unwrap().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn widths_and_channel_checks() {
        assert_eq!(DiscriminatorSpec::new(4).widths(), [64, 128, 256, 512, 1]);
        assert_eq!(DiscriminatorSpec::new(4).width(0.25).widths(), [16, 32, 64, 128, 1]);
        assert!(build_discriminator(1).is_err());
        let d = build_discriminator(4).unwrap();
        let shapes: Vec<_> = d.store().iter().filter(|(_, p)| p.name.ends_with(".weight")).map(|(_, p)| p.value().shape()[3]).collect();
        assert_eq!(shapes, vec![64, 128, 256, 512, 1]);
    }
}
