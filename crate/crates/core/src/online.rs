//! Online estimation of the grasped tool's parametric bias.
//!
//! Observations stream in at a fixed tick rate. A sample is stored when any
//! available modality moved far enough from its last stored value; once enough
//! samples are buffered, the PB alone is refined by momentum SGD with the
//! network weights frozen.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{momentum_step, MomentumState};
use crate::sim::{NoiseSpec, RobotModel, StateSample, ToolState};
use crate::trainer::sample_constrained;
use crate::wtnpb::{FeasibleMaskSet, Modality, ModalityMask, ModelBundle, NUM_MODALITIES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    /// Collection thresholds (deg, mm, mm, px) per modality.
    pub thresholds: [f64; NUM_MODALITIES],
    pub min_samples: usize,
    pub capacity: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub tick_hz: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            thresholds: [10.0, 3.0, 20.0, 100.0],
            min_samples: 5,
            capacity: 100,
            epochs: 5,
            learning_rate: 0.01,
            momentum: 0.9,
            tick_hz: 5.0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("collection thresholds must be positive".into()));
        }
        if self.capacity == 0 || self.min_samples > self.capacity {
            return Err(Error::Config("need 0 < min_samples <= capacity".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.tick_hz > 0.0) {
            return Err(Error::Config("learning rate and tick rate must be positive".into()));
        }
        Ok(())
    }
}

/// A stored observation. The encoder sees `input_mask` (the largest feasible
/// subset of what was observed); the loss covers every observed modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub sample: StateSample,
    pub input_mask: ModalityMask,
    pub loss_mask: ModalityMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineBuffer {
    entries: VecDeque<BufferEntry>,
    capacity: usize,
    last_collected: [Option<Vec<f64>>; NUM_MODALITIES],
}

impl OnlineBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
            last_collected: Default::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn last_collected(&self, m: Modality) -> Option<&[f64]> {
        self.last_collected[m.index()].as_deref()
    }

    /// Stores `sample` when any present modality differs from its last
    /// stored value by more than its threshold (a modality never stored
    /// before always triggers). The oldest entry is evicted past capacity.
    pub fn maybe_collect(&mut self, sample: &StateSample, masks: &FeasibleMaskSet, thresholds: &[f64; NUM_MODALITIES]) -> bool {
        let v = sample.to_vector();
        let triggered = Modality::ALL.iter().any(|&m| {
            if !sample.present[m.index()] {
                return false;
            }
            match &self.last_collected[m.index()] {
                None => true,
                Some(prev) => {
                    let d2: f64 = m.range().zip(prev).map(|(i, p)| (v[i] - p) * (v[i] - p)).sum();
                    libm::sqrt(d2) > thresholds[m.index()]
                }
            }
        });
        if !triggered {
            return false;
        }
        let observed = ModalityMask::new(sample.present);
        let Some(input_mask) = (if masks.contains(&observed) {
            Some(observed)
        } else {
            masks.largest_subset(&observed)
        }) else {
            return false;
        };
        for m in Modality::ALL {
            if sample.present[m.index()] {
                self.last_collected[m.index()] = Some(v[m.range()].to_vec());
            }
        }
        self.entries.push_back(BufferEntry {
            sample: sample.clone(),
            input_mask,
            loss_mask: observed,
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    BelowThreshold,
    Updated,
}

/// Full-buffer mean masked loss and its gradient with respect to `p`.
pub fn buffer_loss(buffer: &OnlineBuffer, bundle: &ModelBundle, p: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut grad = alloc::vec![0.0; p.len()];
    let mut loss = 0.0;
    for e in buffer.entries() {
        let (l, g) = bundle.sample_loss(&e.sample, &e.input_mask, &e.loss_mask, p, None)?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = buffer.len().max(1) as f64;
    for g in &mut grad {
        *g /= n;
    }
    Ok((loss / n, grad))
}

/// `cfg.epochs` full-batch momentum steps on `p`; weights stay untouched.
pub fn update_pb(
    buffer: &OnlineBuffer,
    bundle: &ModelBundle,
    p: &mut [f64],
    state: &mut MomentumState,
    cfg: &OnlineConfig,
) -> Result<UpdateOutcome> {
    if buffer.len() < cfg.min_samples {
        return Ok(UpdateOutcome::BelowThreshold);
    }
    state.momentum = cfg.momentum;
    for _ in 0..cfg.epochs {
        let (_, grad) = buffer_loss(buffer, bundle, p)?;
        momentum_step(p, &grad, state, cfg.learning_rate)?;
    }
    Ok(UpdateOutcome::Updated)
}

/// Buffer, current PB and optimizer state of one online session.
#[derive(Clone, Debug)]
pub struct OnlineEstimator {
    pub buffer: OnlineBuffer,
    pub p: Vec<f64>,
    pub state: MomentumState,
    pub cfg: OnlineConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TickOutcome {
    pub collected: bool,
    pub updated: bool,
}

impl OnlineEstimator {
    pub fn new(initial_p: &[f64], cfg: OnlineConfig) -> Self {
        Self {
            buffer: OnlineBuffer::new(cfg.capacity),
            p: initial_p.to_vec(),
            state: MomentumState::new(initial_p.len()),
            cfg,
        }
    }

    /// Offer one observation; updates the PB after every new collection.
    pub fn offer(&mut self, bundle: &ModelBundle, sample: &StateSample) -> Result<TickOutcome> {
        let collected = self.buffer.maybe_collect(sample, &bundle.masks, &self.cfg.thresholds);
        let updated = collected
            && update_pb(&self.buffer, bundle, &mut self.p, &mut self.state, &self.cfg)? == UpdateOutcome::Updated;
        Ok(TickOutcome { collected, updated })
    }

    /// Copy of the current estimate.
    pub fn snapshot(&self) -> Vec<f64> {
        self.p.clone()
    }
}

/// Which modalities the robot can sense during operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// theta, cog, tool 3D and screen.
    A,
    /// theta, cog and screen.
    B,
    /// theta and cog.
    C,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::A, Regime::B, Regime::C];

    pub fn available(self) -> [bool; NUM_MODALITIES] {
        match self {
            Regime::A => [true, true, true, true],
            Regime::B => [true, true, false, true],
            Regime::C => [true, true, false, false],
        }
    }

    /// Drop the modalities this regime cannot sense.
    pub fn restrict(self, sample: &StateSample) -> StateSample {
        let mut s = sample.clone();
        for (p, a) in s.present.iter_mut().zip(self.available()) {
            *p &= a;
        }
        s.zero_absent();
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineTick {
    pub tick: usize,
    pub time_s: f64,
    pub p: Vec<f64>,
    pub buffer_len: usize,
    pub collected: bool,
    pub updated: bool,
}

pub struct OnlineRun<'a> {
    pub plant: &'a RobotModel,
    pub bundle: &'a ModelBundle,
    pub tool: ToolState,
    pub regime: Regime,
    pub initial_p: &'a [f64],
    pub ticks: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub cfg: OnlineConfig,
}

/// Random constrained motion with online PB updates. Entry 0 is the
/// initial PB; entry `t` is the state after tick `t`.
pub fn run_online(run: &OnlineRun<'_>) -> Result<Vec<OnlineTick>> {
    run.cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut est = OnlineEstimator::new(run.initial_p, run.cfg.clone());
    let mut out = Vec::with_capacity(run.ticks + 1);
    out.push(OnlineTick {
        tick: 0,
        time_s: 0.0,
        p: est.snapshot(),
        buffer_len: 0,
        collected: false,
        updated: false,
    });
    for tick in 1..=run.ticks {
        let observed = sample_constrained(run.plant, &run.tool, &run.noise, &mut rng)?;
        let sample = run.regime.restrict(&observed);
        let outcome = est.offer(run.bundle, &sample)?;
        out.push(OnlineTick {
            tick,
            time_s: tick as f64 / run.cfg.tick_hz,
            p: est.snapshot(),
            buffer_len: est.buffer.len(),
            collected: outcome.collected,
            updated: outcome.updated,
        });
    }
    Ok(out)
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}
