//! Two-stage auto-context cascade.
//!
//! Stage 1 ends in a linear layer. Its map is min-max normalized per sample,
//! appended to the source channels and fed to stage 2, which ends in a
//! sigmoid. Both stages train together from the stage-2 loss.

use autoseg_nn::{Graph, NodeId, ParamSet, ParamStore};
use ndarray::{Array4, Axis, Ix4};
use serde::{Deserialize, Serialize};

use crate::archive::WeightArchive;
use crate::error::{Error, Result};
use crate::generator::{build_generator, Activation, Generator, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub stage1: NetworkSpec,
    pub stage2: NetworkSpec,
}

impl CascadeSpec {
    /// Derives both stages from one generator description, forcing the
    /// stage activations and the extra stage-2 input channel.
    pub fn from_base(base: NetworkSpec) -> Self {
        Self {
            stage1: base.activation(Activation::Linear),
            stage2: base
                .activation(Activation::Sigmoid)
                .in_channels(base.in_channels + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stage1.final_activation != Activation::Linear {
            return Err(Error::Spec("cascade stage 1 must end in a linear activation".into()));
        }
        if self.stage2.final_activation != Activation::Sigmoid {
            return Err(Error::Spec("cascade stage 2 must end in a sigmoid".into()));
        }
        if self.stage2.in_channels != self.stage1.in_channels + 1 {
            return Err(Error::Spec(format!(
                "stage 2 takes {} channels, expected stage 1's {} plus one",
                self.stage2.in_channels, self.stage1.in_channels
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.stage1.parameter_count() + self.stage2.parameter_count()
    }
}

/// Per-sample min-max scaling of `B x H x W x 1` maps to `[0, 1]`.
/// Constant maps become zeros.
pub fn normalize_stage1(maps: &Array4<f64>) -> Result<Array4<f64>> {
    if let Some(i) = maps.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFiniteValues(format!("stage-1 map element {i} is NaN")));
    }
    let mut out = maps.clone();
    for mut sample in out.axis_iter_mut(Axis(0)) {
        let (lo, hi) = sample
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 {
            sample.mapv_inplace(|v| (v - lo) / range);
        } else {
            sample.fill(0.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Cascade {
    spec: CascadeSpec,
    pub stage1: Generator,
    pub stage2: Generator,
}

pub fn build_cascade(spec: CascadeSpec, seed: u64) -> Result<Cascade> {
    spec.validate()?;
    Ok(Cascade {
        spec,
        stage1: build_generator(spec.stage1, seed)?,
        stage2: build_generator(spec.stage2, seed ^ 0x5EED_0002)?,
    })
}

impl Cascade {
    pub fn spec(&self) -> &CascadeSpec {
        &self.spec
    }

    /// Records both stages; returns `(stage-1 map, stage-2 probabilities)`.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId)> {
        let s1 = self.stage1.forward_graph(g, x)?;
        let n1 = g.minmax_normalize(s1);
        let x2 = g.concat_channels(x, n1);
        let s2 = self.stage2.forward_graph(g, x2)?;
        Ok((s1, s2))
    }

    pub fn cascade_forward(&self, batch: &Array4<f64>) -> Result<(Array4<f64>, Array4<f64>)> {
        let mut g = Graph::new();
        let x = g.input(batch.clone().into_dyn());
        let (s1, s2) = self.forward_graph(&mut g, x)?;
        let as4 = |id| {
            g.value(id)
                .clone()
                .into_dimensionality::<Ix4>()
                .expect("generator output is rank 4")
        };
        Ok((as4(s1), as4(s2)))
    }

    /// Both stages' parameters as one trainable set.
    pub fn end_to_end_parameters(&self) -> ParamSet {
        self.stage1.parameters().union(&self.stage2.parameters())
    }

    pub fn num_parameters(&self) -> usize {
        self.stage1.num_parameters() + self.stage2.num_parameters()
    }

    /// Loads the encoder weights into both stages. Either both load or
    /// neither does.
    pub fn load_pretrained_encoders(&mut self, archive: &WeightArchive) -> Result<usize> {
        let mut s1 = self.stage1.clone();
        let mut s2 = self.stage2.clone();
        let n = s1.load_pretrained_encoder(archive)? + s2.load_pretrained_encoder(archive)?;
        self.stage1 = s1;
        self.stage2 = s2;
        Ok(n)
    }
}

/// Declarative form of a [`Segmenter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmenterSpec {
    Single { generator: NetworkSpec },
    Cascade { cascade: CascadeSpec },
}

impl SegmenterSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Single { generator } => generator.validate(),
            Self::Cascade { cascade } => cascade.validate(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<Segmenter> {
        Ok(match self {
            Self::Single { generator } => Segmenter::Single(build_generator(*generator, seed)?),
            Self::Cascade { cascade } => Segmenter::Cascade(build_cascade(*cascade, seed)?),
        })
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Self::Single { generator } => generator.parameter_count(),
            Self::Cascade { cascade } => cascade.parameter_count(),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Self::Single { generator } => generator.in_channels,
            Self::Cascade { cascade } => cascade.stage1.in_channels,
        }
    }

    pub fn size_divisor(&self) -> usize {
        match self {
            Self::Single { generator } => generator.size_divisor(),
            Self::Cascade { cascade } => cascade.stage1.size_divisor(),
        }
    }

    pub fn pretrained(&self) -> bool {
        match self {
            Self::Single { generator } => generator.pretrained,
            Self::Cascade { cascade } => cascade.stage1.pretrained || cascade.stage2.pretrained,
        }
    }
}

/// Anything trained and evaluated as one segmentation network.
#[derive(Debug, Clone)]
pub enum Segmenter {
    Single(Generator),
    Cascade(Cascade),
}

impl Segmenter {
    pub fn spec(&self) -> SegmenterSpec {
        match self {
            Self::Single(g) => SegmenterSpec::Single { generator: *g.spec() },
            Self::Cascade(c) => SegmenterSpec::Cascade { cascade: c.spec },
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Self::Single(g) => g.spec().in_channels,
            Self::Cascade(c) => c.spec.stage1.in_channels,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match self {
            Self::Single(g) => g.check_input(shape),
            Self::Cascade(c) => c.stage1.check_input(shape),
        }
    }

    /// Records the network and returns its final probability node.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Self::Single(gen) => gen.forward_graph(g, x),
            Self::Cascade(c) => Ok(c.forward_graph(g, x)?.1),
        }
    }

    pub fn forward(&self, batch: &Array4<f64>) -> Result<Array4<f64>> {
        match self {
            Self::Single(g) => g.forward(batch),
            Self::Cascade(c) => Ok(c.cascade_forward(batch)?.1),
        }
    }

    pub fn parameters(&self) -> ParamSet {
        match self {
            Self::Single(g) => g.parameters(),
            Self::Cascade(c) => c.end_to_end_parameters(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        match self {
            Self::Single(g) => g.num_parameters(),
            Self::Cascade(c) => c.num_parameters(),
        }
    }

    pub fn stores(&self) -> Vec<&ParamStore> {
        match self {
            Self::Single(g) => vec![g.store()],
            Self::Cascade(c) => vec![c.stage1.store(), c.stage2.store()],
        }
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        match self {
            Self::Single(g) => vec![g.store_mut()],
            Self::Cascade(c) => vec![c.stage1.store_mut(), c.stage2.store_mut()],
        }
    }

    pub fn generators(&self) -> Vec<&Generator> {
        match self {
            Self::Single(g) => vec![g],
            Self::Cascade(c) => vec![&c.stage1, &c.stage2],
        }
    }

    pub fn load_pretrained(&mut self, archive: &WeightArchive) -> Result<usize> {
        match self {
            Self::Single(g) => g.load_pretrained_encoder(archive),
            Self::Cascade(c) => c.load_pretrained_encoders(archive),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::EncoderKind;
    use ndarray::Array4;

    fn tiny() -> CascadeSpec {
        CascadeSpec::from_base(NetworkSpec::new(EncoderKind::Basic32).width(1.0 / 8.0))
    }

    #[test]
    fn normalization_examples() {
        let m = Array4::from_shape_vec((1, 1, 3, 1), vec![-2.0, 0.0, 2.0]).unwrap();
        let n = normalize_stage1(&m).unwrap();
        assert_eq!(n.iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_stage1(&n).unwrap(), n);
        let c = Array4::from_elem((2, 2, 2, 1), 3.5);
        assert!(normalize_stage1(&c).unwrap().iter().all(|&v| v == 0.0));
        let mut bad = c.clone();
        bad[[1, 0, 0, 0]] = f64::NAN;
        assert!(normalize_stage1(&bad).is_err());
    }

    #[test]
    fn spec_forces_activations_and_channels() {
        let s = tiny();
        assert_eq!(s.stage1.final_activation, Activation::Linear);
        assert_eq!(s.stage2.final_activation, Activation::Sigmoid);
        assert_eq!(s.stage2.in_channels, 4);
        let mut bad = s;
        bad.stage2.in_channels = 3;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let c = build_cascade(tiny(), 1).unwrap();
        let x = Array4::from_shape_fn((2, 16, 16, 3), |(b, i, j, k)| ((b + i * j + k) % 7) as f64 / 7.0);
        let (s1, s2) = c.cascade_forward(&x).unwrap();
        assert_eq!(s1.dim(), (2, 16, 16, 1));
        assert_eq!(s2.dim(), (2, 16, 16, 1));
        assert!(s2.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(
            c.end_to_end_parameters().len(),
            c.stage1.parameters().len() + c.stage2.parameters().len()
        );
        assert_eq!(c.num_parameters(), tiny().parameter_count());
    }

    #[test]
    fn stage_one_alone_is_the_plain_generator() {
        let c = build_cascade(tiny(), 4).unwrap();
        let plain = build_generator(tiny().stage1, 4).unwrap();
        let x = Array4::from_shape_fn((1, 16, 16, 3), |(_, i, j, k)| (i + 2 * j + k) as f64 / 50.0);
        assert_eq!(c.cascade_forward(&x).unwrap().0, plain.forward(&x).unwrap());
    }
}
