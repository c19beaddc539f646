//! The two-branch recognizer.
//!
//! A shared three-block convolutional backbone turns a `3 x H x W` image
//! into `W / 4` feature frames of 64 channels. The student head maps each
//! frame to class logits and is the only path used at inference. The
//! teacher head runs a bidirectional tanh recurrence over the frames before
//! its own per-frame classifier; it exists only to guide training.

mod checkpoint;
mod network;
mod scalar;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{backward, forward, forward_branches, ForwardTrace, ImageBatch, TeacherTrace};
pub use scalar::{matmul, Scalar};

use crate::rng::{self, stream};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input {height}x{width} must have both sides divisible by 4")]
    BadInputSize { height: usize, width: usize },
    #[error("unknown parameter tensor {0:?}")]
    UnknownTensor(String),
}

/// Layer widths. The default matches the production recognizer; tests use
/// narrower variants for finite-difference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: [usize; 3],
    /// Hidden size of each recurrent direction in the teacher.
    pub hidden: usize,
    /// Output classes including the blank.
    pub classes: usize,
}

impl Architecture {
    pub fn for_dict_size(dict_size: usize) -> Self {
        Self { channels: [16, 32, 64], hidden: 32, classes: dict_size + 1 }
    }

    pub fn feature_dim(&self) -> usize {
        self.channels[2]
    }
}

/// Which part of the network a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the flat parameter vector, in elements.
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn group(&self) -> ParamGroup {
        if self.name.starts_with("student.") {
            ParamGroup::Student
        } else if self.name.starts_with("teacher.") {
            ParamGroup::Teacher
        } else {
            ParamGroup::Backbone
        }
    }

    fn fan_in(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }

    fn is_bias(&self) -> bool {
        self.name.ends_with(".bias")
    }
}

/// Ordered tensor table over one flat buffer: backbone, then student, then
/// teacher, so each group is a contiguous range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorInfo>,
}

impl ParamLayout {
    pub fn new(arch: &Architecture) -> Self {
        let [c1, c2, c3] = arch.channels;
        let (h, k) = (arch.hidden, arch.classes);
        let specs: Vec<(&str, Vec<usize>)> = vec![
            ("backbone.conv1.weight", vec![c1, 3, 3, 3]),
            ("backbone.conv1.bias", vec![c1]),
            ("backbone.conv2.weight", vec![c2, c1, 3, 3]),
            ("backbone.conv2.bias", vec![c2]),
            ("backbone.conv3.weight", vec![c3, c2, 3, 3]),
            ("backbone.conv3.bias", vec![c3]),
            ("student.weight", vec![k, c3]),
            ("student.bias", vec![k]),
            ("teacher.fwd.input", vec![h, c3]),
            ("teacher.fwd.recurrent", vec![h, h]),
            ("teacher.fwd.bias", vec![h]),
            ("teacher.bwd.input", vec![h, c3]),
            ("teacher.bwd.recurrent", vec![h, h]),
            ("teacher.bwd.bias", vec![h]),
            ("teacher.head.weight", vec![k, 2 * h]),
            ("teacher.head.bias", vec![k]),
        ];
        let mut offset = 0;
        let tensors = specs
            .into_iter()
            .map(|(name, shape)| {
                let info = TensorInfo { name: name.to_string(), shape, offset };
                offset += info.len();
                info
            })
            .collect();
        Self { tensors }
    }

    /// Recovers the architecture from tensor shapes, as stored in a
    /// checkpoint manifest.
    pub fn from_tensors(tensors: Vec<TensorInfo>) -> Result<(Self, Architecture), ModelError> {
        let shape = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.shape.clone())
                .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))
        };
        let c1 = shape("backbone.conv1.weight")?[0];
        let c2 = shape("backbone.conv2.weight")?[0];
        let c3 = shape("backbone.conv3.weight")?[0];
        let classes = shape("student.weight")?[0];
        let hidden = shape("teacher.fwd.recurrent")?[0];
        let arch = Architecture { channels: [c1, c2, c3], hidden, classes };
        let layout = Self::new(&arch);
        if layout.tensors != tensors {
            return Err(ModelError::ShapeMismatch("tensor manifest does not match any known layout".into()));
        }
        Ok((layout, arch))
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn group_range(&self, group: ParamGroup) -> std::ops::Range<usize> {
        let mut it = self.tensors.iter().filter(|t| t.group() == group);
        let first = it.next().expect("every group has tensors");
        let end = it.next_back().unwrap_or(first).range().end;
        first.offset..end
    }
}

/// All recognizer parameters in one flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    arch: Architecture,
    layout: ParamLayout,
    values: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(arch: Architecture) -> Self {
        let layout = ParamLayout::new(&arch);
        let values = vec![F::zero(); layout.total()];
        Self { arch, layout, values }
    }

    pub fn from_values(arch: Architecture, values: Vec<F>) -> Result<Self, ModelError> {
        let layout = ParamLayout::new(&arch);
        if values.len() != layout.total() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.total(),
                values.len()
            )));
        }
        Ok(Self { arch, layout, values })
    }

    /// Weights uniform in `+-sqrt(6 / fan_in)` for convolutions (ReLU
    /// follows them) and `+-sqrt(3 / fan_in)` elsewhere; biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = rng::derived(seed, stream::INIT, 0);
        for t in params.layout.tensors.clone() {
            if t.is_bias() {
                continue;
            }
            let gain = if t.name.contains(".conv") { 6.0 } else { 3.0 };
            let bound = (gain / t.fan_in() as f64).sqrt();
            for v in &mut params.values[t.range()] {
                *v = F::from_f64(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> &[F] {
        let info = self.layout.get(name).unwrap_or_else(|| panic!("no tensor {name}"));
        &self.values[info.range()]
    }

    pub fn group(&self, group: ParamGroup) -> &[F] {
        &self.values[self.layout.group_range(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [F] {
        let r = self.layout.group_range(group);
        &mut self.values[r]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            arch: self.arch,
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Fresh parameters for a dictionary of `dict_size` characters.
pub fn init_params(dict_size: usize, seed: u64) -> ModelParams<f32> {
    ModelParams::init(Architecture::for_dict_size(dict_size), seed)
}

/// Parameters plus the forward/backward entry points.
pub type Recognizer = ModelParams<f32>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = init_params(20, 5);
        assert_eq!(a, init_params(20, 5));
        assert_ne!(a, init_params(20, 6));
        assert_eq!(a.tensor("student.weight").len(), 21 * 64);
        assert_eq!(a.tensor("student.bias").len(), 21);
        for t in a.layout().tensors() {
            if t.name.ends_with(".bias") {
                assert!(a.tensor(&t.name).iter().all(|&v| v == 0.0), "{}", t.name);
            } else {
                assert!(a.tensor(&t.name).iter().any(|&v| v != 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn groups_are_contiguous_and_cover_everything() {
        let p = init_params(20, 1);
        let l = p.layout();
        let b = l.group_range(ParamGroup::Backbone);
        let s = l.group_range(ParamGroup::Student);
        let t = l.group_range(ParamGroup::Teacher);
        assert_eq!(b.start, 0);
        assert_eq!(b.end, s.start);
        assert_eq!(s.end, t.start);
        assert_eq!(t.end, l.total());
    }

    #[test]
    fn layout_recovers_architecture() {
        let arch = Architecture { channels: [2, 3, 4], hidden: 5, classes: 6 };
        let layout = ParamLayout::new(&arch);
        let (back, arch2) = ParamLayout::from_tensors(layout.tensors().to_vec()).unwrap();
        assert_eq!(back, layout);
        assert_eq!(arch2, arch);
    }
}
