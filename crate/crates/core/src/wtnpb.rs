//! Masked multimodal autoencoder with parametric bias.
//!
//! The encoder sees the normalized sensor vector with masked modalities
//! zeroed, the raw mask bits and the parametric bias of the current tool
//! state. It maps to a small latent vector from which the decoder
//! reconstructs all eleven sensor dimensions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, ForwardTrace, LayerStack, StackGradients};
use crate::sim::{StateSample, ToolState};

pub const STATE_DIM: usize = StateSample::DIM;
pub const NUM_MODALITIES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Theta,
    Cog,
    Tool,
    Screen,
}

impl Modality {
    pub const ALL: [Modality; NUM_MODALITIES] = [Modality::Theta, Modality::Cog, Modality::Tool, Modality::Screen];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Slice of the 11-vector holding this modality.
    pub fn range(self) -> Range<usize> {
        match self {
            Modality::Theta => 0..4,
            Modality::Cog => 4..6,
            Modality::Tool => 6..9,
            Modality::Screen => 9..11,
        }
    }
}

/// Which modalities feed the encoder, ordered (theta, cog, tool, screen).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ModalityMask(pub [bool; NUM_MODALITIES]);

impl ModalityMask {
    pub const fn new(bits: [bool; NUM_MODALITIES]) -> Self {
        Self(bits)
    }

    pub fn uses(&self, m: Modality) -> bool {
        self.0[m.index()]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &ModalityMask) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| !*a || *b)
    }

    /// Per-dimension selection over the 11 sensor dims.
    pub fn dims(&self) -> [bool; STATE_DIM] {
        let mut d = [false; STATE_DIM];
        for m in Modality::ALL {
            if self.uses(m) {
                for i in m.range() {
                    d[i] = true;
                }
            }
        }
        d
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for ModalityMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        if bytes.len() != NUM_MODALITIES || !bytes.iter().all(|b| *b == b'0' || *b == b'1') {
            return Err(Error::Config(alloc::format!("bad modality mask {s:?}")));
        }
        Ok(Self(core::array::from_fn(|i| bytes[i] == b'1')))
    }
}

impl From<ModalityMask> for String {
    fn from(m: ModalityMask) -> String {
        alloc::format!("{m}")
    }
}

impl TryFrom<String> for ModalityMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

const fn mask(bits: [u8; 4]) -> ModalityMask {
    ModalityMask([bits[0] == 1, bits[1] == 1, bits[2] == 1, bits[3] == 1])
}

/// Mask used to encode the control reference (cog + tool tip).
pub const REFERENCE_MASK: ModalityMask = mask([0, 1, 1, 0]);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleMaskSet {
    pub masks: Vec<ModalityMask>,
}

impl FeasibleMaskSet {
    /// Every mask using theta plus the one inferring theta from the rest.
    pub fn base() -> Self {
        Self {
            masks: alloc::vec![
                mask([1, 0, 0, 0]),
                mask([1, 1, 0, 0]),
                mask([1, 0, 1, 0]),
                mask([1, 0, 0, 1]),
                mask([1, 1, 1, 0]),
                mask([1, 1, 0, 1]),
                mask([1, 0, 1, 1]),
                mask([0, 1, 1, 1]),
            ],
        }
    }

    pub fn contains(&self, m: &ModalityMask) -> bool {
        self.masks.contains(m)
    }

    /// The first mask of maximal size that only uses `available` modalities.
    pub fn largest_subset(&self, available: &ModalityMask) -> Option<ModalityMask> {
        let mut best: Option<ModalityMask> = None;
        for m in &self.masks {
            if m.is_subset_of(available) && best.is_none_or(|b| m.count() > b.count()) {
                best = Some(*m);
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.is_empty() {
            return Err(Error::Config("feasible mask set is empty".into()));
        }
        Ok(())
    }
}

impl Default for FeasibleMaskSet {
    /// The base set extended with the reference-encoding mask.
    fn default() -> Self {
        let mut s = Self::base();
        s.masks.push(REFERENCE_MASK);
        s
    }
}

/// Per-dimension standardization of the 11 sensor dims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; STATE_DIM],
    pub std: [f64; STATE_DIM],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; STATE_DIM],
            std: [1.0; STATE_DIM],
        }
    }

    /// Fit on the present modalities of `samples` (population std).
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a StateSample>) -> Result<Self> {
        let mut count = [0usize; STATE_DIM];
        let mut sum = [0.0; STATE_DIM];
        let mut sum_sq = [0.0; STATE_DIM];
        let all: Vec<&StateSample> = samples.into_iter().collect();
        for s in &all {
            let v = s.to_vector();
            for m in Modality::ALL {
                if s.present[m.index()] {
                    for i in m.range() {
                        count[i] += 1;
                        sum[i] += v[i];
                    }
                }
            }
        }
        let mean: [f64; STATE_DIM] = core::array::from_fn(|i| sum[i] / count[i].max(1) as f64);
        for s in &all {
            let v = s.to_vector();
            for m in Modality::ALL {
                if s.present[m.index()] {
                    for i in m.range() {
                        sum_sq[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
                    }
                }
            }
        }
        let mut std = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            std[i] = libm::sqrt(sum_sq[i] / count[i].max(1) as f64);
            if count[i] == 0 || !(std[i] > 1e-9) {
                return Err(Error::DegenerateNormalizer(i));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        core::array::from_fn(|i| (x[i] - self.mean[i]) / self.std[i])
    }

    pub fn denormalize(&self, x: &[f64]) -> [f64; STATE_DIM] {
        core::array::from_fn(|i| x[i] * self.std[i] + self.mean[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub pb_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: alloc::vec![200, 50],
            latent_dim: 8,
            decoder_hidden: alloc::vec![50, 200],
            pb_dim: 2,
        }
    }
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        STATE_DIM + NUM_MODALITIES + self.pb_dim
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = alloc::vec![self.input_dim()];
        d.extend(&self.encoder_hidden);
        d.push(self.latent_dim);
        d
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut d = alloc::vec![self.latent_dim];
        d.extend(&self.decoder_hidden);
        d.push(STATE_DIM);
        d
    }
}

/// Trained parametric bias of one tool state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbEntry {
    pub label: String,
    pub tool: ToolState,
    pub p: Vec<f64>,
}

/// Network weights, normalizer, PB table and mask set, saved as one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub architecture: Architecture,
    pub encoder: LayerStack,
    pub decoder: LayerStack,
    pub normalizer: Normalizer,
    pub pb_table: Vec<PbEntry>,
    pub masks: FeasibleMaskSet,
}

/// Forward traces of one reconstruction.
pub struct Reconstruction {
    pub encoder: ForwardTrace,
    pub decoder: ForwardTrace,
    /// Decoder output in normalized units.
    pub output: Vec<f64>,
}

impl ModelBundle {
    pub fn new<R: Rng + ?Sized>(architecture: Architecture, normalizer: Normalizer, masks: FeasibleMaskSet, rng: &mut R) -> Self {
        // The bottleneck is a hidden layer, so the encoder ends in tanh.
        let encoder = LayerStack::glorot(&architecture.encoder_dims(), Activation::Tanh, Activation::Tanh, rng);
        let decoder = LayerStack::glorot(&architecture.decoder_dims(), Activation::Tanh, Activation::Identity, rng);
        Self {
            architecture,
            encoder,
            decoder,
            normalizer,
            pb_table: Vec::new(),
            masks,
        }
    }

    pub fn pb_dim(&self) -> usize {
        self.architecture.pb_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.architecture.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.masks.validate()?;
        if self.encoder.dims() != self.architecture.encoder_dims() || self.decoder.dims() != self.architecture.decoder_dims() {
            return Err(Error::Config("network shapes disagree with the architecture".into()));
        }
        if self.pb_table.iter().any(|e| e.p.len() != self.pb_dim() || e.p.iter().any(|x| !x.is_finite())) {
            return Err(Error::Config("malformed parametric bias entry".into()));
        }
        if self.normalizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalizer std must be positive".into()));
        }
        Ok(())
    }

    pub fn pb(&self, label: &str) -> Option<&[f64]> {
        self.pb_table.iter().find(|e| e.label == label).map(|e| e.p.as_slice())
    }

    pub fn pb_for(&self, tool: &ToolState) -> Option<&[f64]> {
        self.pb(&tool.label())
    }

    /// Target vector in normalized units; absent modalities read as the mean.
    pub fn normalized_target(&self, x: &StateSample) -> [f64; STATE_DIM] {
        let mut t = self.normalizer.normalize(&x.to_vector());
        for m in Modality::ALL {
            if !x.present[m.index()] {
                for i in m.range() {
                    t[i] = 0.0;
                }
            }
        }
        t
    }

    /// Encoder input: masked normalized sensors, mask bits, parametric bias.
    pub fn assemble_input(&self, x: &StateSample, m: &ModalityMask, p: &[f64]) -> Result<Vec<f64>> {
        if !self.masks.contains(m) {
            return Err(Error::InfeasibleMask(*m));
        }
        if p.len() != self.pb_dim() {
            return Err(Error::Dimension {
                what: "parametric bias",
                expected: self.pb_dim(),
                actual: p.len(),
            });
        }
        for modality in Modality::ALL {
            if m.uses(modality) && !x.present[modality.index()] {
                return Err(Error::AbsentModality(modality));
            }
        }
        let normalized = self.normalizer.normalize(&x.to_vector());
        let keep = m.dims();
        let mut input = Vec::with_capacity(self.architecture.input_dim());
        input.extend((0..STATE_DIM).map(|i| if keep[i] { normalized[i] } else { 0.0 }));
        input.extend(m.0.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        input.extend_from_slice(p);
        Ok(input)
    }

    pub fn encode(&self, x: &StateSample, m: &ModalityMask, p: &[f64]) -> Result<Vec<f64>> {
        self.encoder.predict(&self.assemble_input(x, m, p)?)
    }

    /// Decoder output in normalized units.
    pub fn decode_normalized(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.predict(z)
    }

    /// Decoder output in physical units.
    pub fn decode(&self, z: &[f64]) -> Result<[f64; STATE_DIM]> {
        Ok(self.normalizer.denormalize(&self.decode_normalized(z)?))
    }

    pub fn reconstruct(&self, x: &StateSample, m: &ModalityMask, p: &[f64]) -> Result<[f64; STATE_DIM]> {
        self.decode(&self.encode(x, m, p)?)
    }

    pub fn reconstruct_traced(&self, x: &StateSample, m: &ModalityMask, p: &[f64]) -> Result<Reconstruction> {
        let input = self.assemble_input(x, m, p)?;
        let (z, encoder) = self.encoder.forward(&input)?;
        let (output, decoder) = self.decoder.forward(&z)?;
        Ok(Reconstruction { encoder, decoder, output })
    }

    /// Masked loss of one sample and its gradient with respect to `p`.
    ///
    /// When `weight_grads` is given, weight gradients are accumulated into it.
    pub fn sample_loss(
        &self,
        x: &StateSample,
        input_mask: &ModalityMask,
        loss_mask: &ModalityMask,
        p: &[f64],
        weight_grads: Option<(&mut StackGradients, &mut StackGradients)>,
    ) -> Result<(f64, Vec<f64>)> {
        for modality in Modality::ALL {
            if loss_mask.uses(modality) && !x.present[modality.index()] {
                return Err(Error::AbsentModality(modality));
            }
        }
        let rec = self.reconstruct_traced(x, input_mask, p)?;
        let target = self.normalized_target(x);
        let (loss, seed) = masked_loss(&rec.output, &target, loss_mask)?;
        let input_grad = match weight_grads {
            Some((enc, dec)) => {
                let dz = self.decoder.backward_accumulate(&rec.decoder, &seed, dec)?;
                self.encoder.backward_accumulate(&rec.encoder, &dz, enc)?
            }
            None => {
                let dz = self.decoder.input_gradient(&rec.decoder, &seed)?;
                self.encoder.input_gradient(&rec.encoder, &dz)?
            }
        };
        let offset = STATE_DIM + NUM_MODALITIES;
        Ok((loss, input_grad[offset..].to_vec()))
    }
}

/// Mean squared error over the dims of the selected modalities, with the
/// gradient seed (zero outside the mask).
pub fn masked_loss(prediction: &[f64], target: &[f64; STATE_DIM], loss_mask: &ModalityMask) -> Result<(f64, [f64; STATE_DIM])> {
    if prediction.len() != STATE_DIM {
        return Err(Error::Dimension {
            what: "prediction",
            expected: STATE_DIM,
            actual: prediction.len(),
        });
    }
    let keep = loss_mask.dims();
    let n = keep.iter().filter(|k| **k).count();
    if n == 0 {
        return Err(Error::EmptyLossMask);
    }
    let mut loss = 0.0;
    let mut grad = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        if keep[i] {
            let e = prediction[i] - target[i];
            loss += e * e;
            grad[i] = 2.0 * e / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
