//! Single-stage encoder-decoder generators: the 32-channel UNet baseline and
//! the VGG-16 / VGG-19 shaped variants.
//!
//! Layout of the VGG variants: encoder levels `64x2, 128x2, 256xN, 512xN`
//! (N = 4 for VGG-19, 3 for VGG-16), each followed by a 2x2 max-pool, then a
//! fifth level holding `conv5_1` and the fifth pool, then the remaining
//! block-5 convolutions as the central part. Every encoder level has a skip
//! connection; the decoder mirrors each level with a 2x2 up-convolution,
//! concatenation and the same number of 3x3 convolutions.

use autoseg_nn::init::he_uniform;
use autoseg_nn::{Graph, NodeId, Padding, ParamId, ParamSet, ParamStore};
use ndarray::{Array4, ArrayD, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::WeightArchive;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Basic32,
    Vgg16,
    Vgg19,
}

impl EncoderKind {
    pub fn is_vgg(self) -> bool {
        matches!(self, Self::Vgg16 | Self::Vgg19)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: EncoderKind,
    pub pretrained: bool,
    pub final_activation: Activation,
    pub in_channels: usize,
    /// Scales every layer width; `1.0` is the published architecture.
    pub width_multiplier: f64,
}

impl NetworkSpec {
    pub fn new(encoder: EncoderKind) -> Self {
        Self {
            encoder,
            pretrained: false,
            final_activation: Activation::Sigmoid,
            in_channels: 3,
            width_multiplier: 1.0,
        }
    }

    pub fn pretrained(mut self, pretrained: bool) -> Self {
        self.pretrained = pretrained;
        self
    }

    pub fn activation(mut self, activation: Activation) -> Self {
        self.final_activation = activation;
        self
    }

    pub fn in_channels(mut self, in_channels: usize) -> Self {
        self.in_channels = in_channels;
        self
    }

    pub fn width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Spec("in_channels must be at least 1".into()));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Spec(format!(
                "width_multiplier must be positive, got {}",
                self.width_multiplier
            )));
        }
        if self.pretrained && !self.encoder.is_vgg() {
            return Err(Error::Spec(
                "pre-trained weights are only available for vgg16/vgg19 encoders".into(),
            ));
        }
        if self.pretrained && self.width_multiplier != 1.0 {
            return Err(Error::Spec(
                "pre-trained weights require width_multiplier = 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of 2x2 pooling stages; inputs must be divisible by `2^pools`.
    pub fn pools(&self) -> usize {
        match self.encoder {
            EncoderKind::Basic32 => 4,
            EncoderKind::Vgg16 | EncoderKind::Vgg19 => 5,
        }
    }

    pub fn size_divisor(&self) -> usize {
        1 << self.pools()
    }

    fn scaled(&self, width: usize) -> usize {
        ((width as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn plan(&self) -> Plan {
        let (levels, center): (Vec<(usize, usize)>, Vec<usize>) = match self.encoder {
            EncoderKind::Basic32 => (vec![(32, 2), (64, 2), (128, 2), (256, 2)], vec![256, 256]),
            EncoderKind::Vgg19 => (
                vec![(64, 2), (128, 2), (256, 4), (512, 4), (512, 1)],
                vec![512, 512, 512],
            ),
            EncoderKind::Vgg16 => (
                vec![(64, 2), (128, 2), (256, 3), (512, 3), (512, 1)],
                vec![512, 512],
            ),
        };
        let vgg = self.encoder.is_vgg();
        let mut encoder = Vec::new();
        let mut cin = self.in_channels;
        // vgg block/conv numbering; level 5 and the center share block 5
        for (li, &(w, n)) in levels.iter().enumerate() {
            let w = self.scaled(w);
            let mut convs = Vec::new();
            for ci in 0..n {
                let name = if vgg {
                    format!("conv{}_{}", li + 1, ci + 1)
                } else {
                    format!("enc{}_{}", li + 1, ci + 1)
                };
                convs.push(ConvPlan { name, cin, cout: w });
                cin = w;
            }
            encoder.push(convs);
        }
        let mut center_convs = Vec::new();
        let first_center = if vgg { levels[4].1 + 1 } else { 1 };
        for (i, &w) in center.iter().enumerate() {
            let w = self.scaled(w);
            let name = if vgg {
                format!("conv5_{}", first_center + i)
            } else {
                format!("center_{}", i + 1)
            };
            center_convs.push(ConvPlan { name, cin, cout: w });
            cin = w;
        }
        let mut decoder = Vec::new();
        for (li, convs) in encoder.iter().enumerate().rev() {
            let w = convs.last().map(|c| c.cout).unwrap_or(cin);
            let up = ConvPlan {
                name: format!("dec{}_up", li + 1),
                cin,
                cout: w,
            };
            let mut dconvs = Vec::new();
            for ci in 0..convs.len() {
                let c_in = if ci == 0 { 2 * w } else { w };
                dconvs.push(ConvPlan {
                    name: format!("dec{}_{}", li + 1, ci + 1),
                    cin: c_in,
                    cout: w,
                });
            }
            cin = w;
            decoder.push(DecoderPlan { up, convs: dconvs });
        }
        let head = ConvPlan {
            name: "head".into(),
            cin,
            cout: 1,
        };
        Plan {
            encoder,
            center: center_convs,
            decoder,
            head,
        }
    }

    /// Exact number of scalar parameters, computed without allocating.
    pub fn parameter_count(&self) -> usize {
        let p = self.plan();
        let conv3 = |c: &ConvPlan| 9 * c.cin * c.cout + c.cout;
        let enc: usize = p.encoder.iter().flatten().map(conv3).sum();
        let center: usize = p.center.iter().map(conv3).sum();
        let dec: usize = p
            .decoder
            .iter()
            .map(|d| 4 * d.up.cin * d.up.cout + d.up.cout + d.convs.iter().map(conv3).sum::<usize>())
            .sum();
        enc + center + dec + p.head.cin + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvPlan {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderPlan {
    pub up: ConvPlan,
    pub convs: Vec<ConvPlan>,
}

/// Layer-by-layer shape description of a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub encoder: Vec<Vec<ConvPlan>>,
    pub center: Vec<ConvPlan>,
    pub decoder: Vec<DecoderPlan>,
    pub head: ConvPlan,
}

impl Plan {
    /// Output width of every encoder level followed by the central part.
    pub fn encoder_widths(&self) -> Vec<usize> {
        self.encoder
            .iter()
            .map(|l| l.last().map(|c| c.cout).unwrap_or(0))
            .chain(self.center.last().map(|c| c.cout))
            .collect()
    }

    /// Convolutions that a pre-trained classification backbone provides.
    pub fn encoder_convs(&self) -> impl Iterator<Item = &ConvPlan> {
        self.encoder.iter().flatten().chain(self.center.iter())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId, pad: Padding) -> NodeId {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv2d(x, w, Some(b), 1, pad)
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: Conv,
    convs: Vec<Conv>,
}

/// An encoder-decoder network together with its parameters.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: NetworkSpec,
    plan: Plan,
    store: ParamStore,
    encoder: Vec<Vec<Conv>>,
    center: Vec<Conv>,
    decoder: Vec<DecoderLevel>,
    head: Conv,
}

fn add_conv(store: &mut ParamStore, p: &ConvPlan, k: usize, rng: &mut ChaCha8Rng) -> Conv {
    let w = store.add(
        format!("{}.weight", p.name),
        he_uniform(&[k, k, p.cin, p.cout], k * k * p.cin, rng),
    );
    let b = store.add(format!("{}.bias", p.name), ArrayD::zeros(vec![p.cout]));
    Conv { w, b }
}

fn add_upconv(store: &mut ParamStore, p: &ConvPlan, rng: &mut ChaCha8Rng) -> Conv {
    let w = store.add(
        format!("{}.weight", p.name),
        he_uniform(&[p.cin, 2, 2, p.cout], 4 * p.cin, rng),
    );
    let b = store.add(format!("{}.bias", p.name), ArrayD::zeros(vec![p.cout]));
    Conv { w, b }
}

/// Builds a generator with He-uniform weights and zero biases drawn from
/// `seed`.
pub fn build_generator(spec: NetworkSpec, seed: u64) -> Result<Generator> {
    spec.validate()?;
    let plan = spec.plan();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let encoder = plan
        .encoder
        .iter()
        .map(|l| l.iter().map(|c| add_conv(&mut store, c, 3, &mut rng)).collect())
        .collect();
    let center = plan
        .center
        .iter()
        .map(|c| add_conv(&mut store, c, 3, &mut rng))
        .collect();
    let decoder = plan
        .decoder
        .iter()
        .map(|d| DecoderLevel {
            up: add_upconv(&mut store, &d.up, &mut rng),
            convs: d
                .convs
                .iter()
                .map(|c| add_conv(&mut store, c, 3, &mut rng))
                .collect(),
        })
        .collect();
    let head = add_conv(&mut store, &plan.head, 1, &mut rng);
    Ok(Generator {
        spec,
        plan,
        store,
        encoder,
        center,
        decoder,
        head,
    })
}

/// Checks that a `B x H x W x C` batch fits a network with the given input
/// channels and pooling divisor.
pub(crate) fn check_batch(shape: &[usize], channels: usize, divisor: usize) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "expected a B x H x W x C batch, got shape {shape:?}"
        )));
    }
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if b == 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty batch {shape:?}")));
    }
    if c != channels {
        return Err(Error::Shape(format!(
            "batch has {c} channels, network expects {channels}"
        )));
    }
    if h % divisor != 0 || w % divisor != 0 {
        return Err(Error::Shape(format!(
            "input {h}x{w} is not divisible by {divisor} (2^number of pools)"
        )));
    }
    Ok(())
}

impl Generator {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
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

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        check_batch(shape, self.spec.in_channels, self.spec.size_divisor())
    }

    /// Records the network on `g`; returns the `B x H x W x 1` output node.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.check_input(g.shape(x))?;
        let s = &self.store;
        let same = Padding::same(3);
        let mut h = x;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for level in &self.encoder {
            for conv in level {
                h = conv.apply(g, s, h, same);
                h = g.relu(h);
            }
            skips.push(h);
            h = g.max_pool2(h);
        }
        for conv in &self.center {
            h = conv.apply(g, s, h, same);
            h = g.relu(h);
        }
        for (level, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let w = g.param(s, level.up.w);
            let b = g.param(s, level.up.b);
            h = g.upconv2x2(h, w, Some(b));
            h = g.relu(h);
            h = g.concat_channels(*skip, h);
            for conv in &level.convs {
                h = conv.apply(g, s, h, same);
                h = g.relu(h);
            }
        }
        h = self.head.apply(g, s, h, Padding::default());
        Ok(match self.spec.final_activation {
            Activation::Sigmoid => g.sigmoid(h),
            Activation::Linear => h,
        })
    }

    /// Inference on a `B x H x W x C` batch; returns `B x H x W x 1`.
    pub fn forward(&self, batch: &Array4<f64>) -> Result<Array4<f64>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone().into_dyn());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y)
            .clone()
            .into_dimensionality::<Ix4>()
            .expect("generator output is rank 4"))
    }

    /// Replaces every encoder and central convolution with the archive's
    /// weights. Either all tensors load or none do. Returns the number of
    /// weight/bias pairs loaded.
    ///
    /// When the network's first layer has more input channels than the
    /// archive (a second cascade stage), the extra input slices are zeroed.
    pub fn load_pretrained_encoder(&mut self, archive: &WeightArchive) -> Result<usize> {
        if !self.spec.encoder.is_vgg() {
            return Err(Error::Pretrained(
                "pre-trained weights are unsupported for the basic32 encoder".into(),
            ));
        }
        if self.spec.width_multiplier != 1.0 {
            return Err(Error::Pretrained(
                "pre-trained weights require width_multiplier = 1".into(),
            ));
        }
        let mut staged: Vec<(ParamId, ArrayD<f64>)> = Vec::new();
        let convs: Vec<(&ConvPlan, Conv)> = self
            .plan
            .encoder_convs()
            .zip(self.encoder.iter().flatten().chain(self.center.iter()).copied())
            .collect();
        for (i, (plan, conv)) in convs.iter().enumerate() {
            let wname = format!("{}.weight", plan.name);
            let bname = format!("{}.bias", plan.name);
            let w = archive
                .get(&wname)
                .ok_or_else(|| Error::Pretrained(format!("archive has no entry {wname}")))?;
            let b = archive
                .get(&bname)
                .ok_or_else(|| Error::Pretrained(format!("archive has no entry {bname}")))?;
            let expected = [3, 3, plan.cin, plan.cout];
            let shape = w.shape.as_slice();
            let widened = i == 0
                && shape.len() == 4
                && shape[..2] == [3, 3]
                && shape[2] < plan.cin
                && shape[3] == plan.cout;
            if shape != expected && !widened {
                return Err(Error::Pretrained(format!(
                    "{wname}: archive shape {shape:?}, layer expects {expected:?}"
                )));
            }
            if b.shape != [plan.cout] {
                return Err(Error::Pretrained(format!(
                    "{bname}: archive shape {:?}, layer expects [{}]",
                    b.shape, plan.cout
                )));
            }
            let src = w.to_array()?;
            let value = if widened {
                let mut v = ArrayD::<f64>::zeros(expected.to_vec());
                v.slice_each_axis_mut(|ax| match ax.axis.index() {
                    2 => ndarray::Slice::from(0..shape[2]),
                    _ => ndarray::Slice::from(..),
                })
                .assign(&src);
                v
            } else {
                src
            };
            staged.push((conv.w, value));
            staged.push((conv.b, b.to_array()?));
        }
        let pairs = staged.len() / 2;
        for (id, value) in staged {
            *self.store.value_mut(id) = value;
        }
        Ok(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic32_plan_follows_the_unet_schedule() {
        let plan = NetworkSpec::new(EncoderKind::Basic32).plan();
        assert_eq!(plan.encoder_widths(), vec![32, 64, 128, 256, 256]);
        assert_eq!(plan.encoder[0][0].cout, 32);
        assert_eq!(plan.decoder.len(), 4);
        assert_eq!(plan.decoder[0].convs[0].cin, 512);
        assert_eq!(plan.head.cin, 32);
    }

    #[test]
    fn vgg19_plan_has_sixteen_backbone_convs() {
        let plan = NetworkSpec::new(EncoderKind::Vgg19).plan();
        let names: Vec<_> = plan.encoder_convs().map(|c| c.name.as_str()).collect();
        assert_eq!(names.len(), 16);
        assert_eq!(names[0], "conv1_1");
        assert_eq!(names[15], "conv5_4");
        assert_eq!(plan.encoder_convs().next().unwrap().cout, 64);
        assert_eq!(*plan.encoder_widths().iter().max().unwrap(), 512);
        // 4-conv patterns after the second pool, mirrored in the decoder
        assert_eq!(plan.encoder[2].len(), 4);
        assert_eq!(plan.decoder[2].convs.len(), 4);
    }

    #[test]
    fn vgg16_plan_has_thirteen_backbone_convs() {
        let plan = NetworkSpec::new(EncoderKind::Vgg16).plan();
        assert_eq!(plan.encoder_convs().count(), 13);
        assert_eq!(plan.encoder_convs().last().unwrap().name, "conv5_3");
    }

    #[test]
    fn widths_are_monotone_and_capped() {
        for (kind, cap) in [
            (EncoderKind::Basic32, 256.0),
            (EncoderKind::Vgg16, 512.0),
            (EncoderKind::Vgg19, 512.0),
        ] {
            for m in [1.0, 0.5, 0.25, 0.125] {
                let w = NetworkSpec::new(kind).width(m).plan().encoder_widths();
                assert!(w.windows(2).all(|p| p[0] <= p[1]), "{kind:?} {w:?}");
                assert_eq!(*w.last().unwrap() as f64, cap * m);
            }
        }
    }

    #[test]
    fn parameter_count_matches_built_network() {
        for kind in [EncoderKind::Basic32, EncoderKind::Vgg16, EncoderKind::Vgg19] {
            let spec = NetworkSpec::new(kind).width(0.125).in_channels(4);
            let g = build_generator(spec, 0).unwrap();
            assert_eq!(g.num_parameters(), spec.parameter_count());
        }
    }

    #[test]
    fn spec_invariants() {
        let s = NetworkSpec::new(EncoderKind::Basic32).pretrained(true);
        assert!(build_generator(s, 0).is_err());
        let s = NetworkSpec::new(EncoderKind::Vgg19).pretrained(true).width(0.5);
        assert!(build_generator(s, 0).is_err());
        assert!(build_generator(NetworkSpec::new(EncoderKind::Vgg19).in_channels(0), 0).is_err());
    }

    #[test]
    fn same_seed_same_initial_parameters() {
        let spec = NetworkSpec::new(EncoderKind::Vgg16).width(0.125);
        let a = build_generator(spec, 9).unwrap();
        let b = build_generator(spec, 9).unwrap();
        let c = build_generator(spec, 10).unwrap();
        assert_eq!(a.store().flatten(), b.store().flatten());
        assert_ne!(a.store().flatten(), c.store().flatten());
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let g = build_generator(NetworkSpec::new(EncoderKind::Basic32).width(0.125), 0).unwrap();
        let err = g.forward(&Array4::zeros((1, 24, 16, 3))).unwrap_err();
        assert!(err.to_string().contains("divisible by 16"), "{err}");
        let err = g.forward(&Array4::zeros((1, 16, 16, 2))).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
