//! Dataset collection under stability and visibility constraints, and joint
//! training of the network weights with one parametric bias per tool state.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{adam_step, AdamState, StackGradients};
use crate::sim::{JointVector, NoiseSpec, RobotModel, StateSample, ToolState, NUM_JOINTS};
use crate::wtnpb::{Architecture, FeasibleMaskSet, ModalityMask, ModelBundle, Normalizer, PbEntry};

/// Samples must keep the COG this far inside the support polygon.
pub const COG_SAFETY_MARGIN_MM: f64 = 10.0;

const MIN_ACCEPTANCE: f64 = 0.01;
const MIN_ATTEMPTS_BEFORE_GIVING_UP: usize = 2000;
const MAX_SINGLE_DRAW_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolDataset {
    pub index: usize,
    pub tool: ToolState,
    pub samples: Vec<StateSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SamplingPolicy {
    RandomConstrained,
    /// A deterministic pose grid thinned to `grid_poses` feasible poses,
    /// topped up with random constrained poses.
    CuratedGrid { grid_poses: usize },
}

/// The acceptance rule every collected sample satisfies.
pub fn is_acceptable(model: &RobotModel, sample: &StateSample) -> bool {
    sample.present.iter().all(|p| *p) && model.inside_support(&sample.x_cog_mm, COG_SAFETY_MARGIN_MM)
}

/// Draws a commanded pose whose observation passes [`is_acceptable`].
pub fn sample_constrained<R: Rng + ?Sized>(
    model: &RobotModel,
    tool: &ToolState,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<StateSample> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let pose = model.random_pose(rng);
        if let Ok(s) = model.observe(&pose, tool, noise, rng) {
            if is_acceptable(model, &s) {
                return Ok(s);
            }
        }
        if attempts >= MAX_SINGLE_DRAW_ATTEMPTS {
            return Err(Error::LowAcceptance { accepted: 0, attempts });
        }
    }
}

fn random_constrained(
    model: &RobotModel,
    tool: &ToolState,
    n: usize,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<StateSample>,
) -> Result<()> {
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < n {
        attempts += 1;
        let pose = model.random_pose(rng);
        if let Ok(s) = model.observe(&pose, tool, noise, rng) {
            if is_acceptable(model, &s) {
                out.push(s);
                accepted += 1;
            }
        }
        if attempts >= MIN_ATTEMPTS_BEFORE_GIVING_UP && (accepted as f64) < MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::LowAcceptance { accepted, attempts });
        }
    }
    Ok(())
}

/// Regular grid over the joint ranges, ankle fastest.
pub fn pose_grid(model: &RobotModel, levels: [usize; NUM_JOINTS]) -> Vec<JointVector> {
    let ranges = model.joint_ranges();
    let value = |j: usize, k: usize| {
        let [lo, hi] = ranges[j];
        if levels[j] <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (levels[j] - 1) as f64
        }
    };
    let mut poses = Vec::with_capacity(levels.iter().product());
    for a in 0..levels[0] {
        for b in 0..levels[1] {
            for c in 0..levels[2] {
                for d in 0..levels[3] {
                    poses.push([value(0, a), value(1, b), value(2, c), value(3, d)]);
                }
            }
        }
    }
    poses
}

const CURATED_GRID_LEVELS: [usize; NUM_JOINTS] = [7, 5, 5, 3];
const CURATED_NOISE_RETRIES: usize = 8;

pub fn collect_dataset(
    model: &RobotModel,
    tool: &ToolState,
    n: usize,
    policy: SamplingPolicy,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<ToolDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    match policy {
        SamplingPolicy::RandomConstrained => random_constrained(model, tool, n, noise, &mut rng, &mut samples)?,
        SamplingPolicy::CuratedGrid { grid_poses } => {
            let feasible: Vec<JointVector> = pose_grid(model, CURATED_GRID_LEVELS)
                .into_iter()
                .filter(|pose| {
                    model
                        .observe_exact(pose, tool)
                        .is_ok_and(|s| is_acceptable(model, &s))
                })
                .collect();
            let take = grid_poses.min(n).min(feasible.len());
            for k in 0..take {
                // Evenly spaced over the feasible list.
                let pose = feasible[k * feasible.len() / take];
                for _ in 0..CURATED_NOISE_RETRIES {
                    let s = model.observe(&pose, tool, noise, &mut rng)?;
                    if is_acceptable(model, &s) {
                        samples.push(s);
                        break;
                    }
                }
            }
            let rest = n - samples.len();
            random_constrained(model, tool, rest, noise, &mut rng, &mut samples)?;
        }
    }
    Ok(ToolDataset { index: 0, tool: *tool, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Keep the weights and normalizer of the init bundle, reset every PB to 0.
    pub fine_tune: bool,
    pub architecture: Architecture,
    pub masks: FeasibleMaskSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            fine_tune: false,
            architecture: Architecture::default(),
            masks: FeasibleMaskSet::default(),
        }
    }
}

impl TrainConfig {
    pub fn fine_tune_default() -> Self {
        Self {
            epochs: 500,
            fine_tune: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.masks.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch.
    pub loss_history: Vec<f64>,
    /// How often each mask of the feasible set was drawn.
    pub mask_counts: Vec<usize>,
}

/// Owns the bundle and optimizer state during training.
pub struct Trainer<'a> {
    bundle: ModelBundle,
    datasets: &'a [ToolDataset],
    encoder_adam: AdamState,
    decoder_adam: AdamState,
    pb_adam: Vec<AdamState>,
    encoder_grads: StackGradients,
    decoder_grads: StackGradients,
    rng: ChaCha8Rng,
    cfg: TrainConfig,
    mask_counts: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(datasets: &'a [ToolDataset], cfg: &TrainConfig, init: Option<&ModelBundle>) -> Result<Self> {
        cfg.validate()?;
        if datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        for (i, d) in datasets.iter().enumerate() {
            if datasets[..i].iter().any(|o| o.tool.label() == d.tool.label()) {
                return Err(Error::Config(alloc::format!("duplicate tool state {}", d.tool.label())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut bundle = match (cfg.fine_tune, init) {
            (true, Some(b)) => {
                b.validate()?;
                b.clone()
            }
            (true, None) => return Err(Error::Config("fine-tuning requires an initial bundle".into())),
            (false, Some(_)) => return Err(Error::Config("an initial bundle is only used for fine-tuning".into())),
            (false, None) => {
                let normalizer = Normalizer::fit(datasets.iter().flat_map(|d| d.samples.iter()))?;
                ModelBundle::new(cfg.architecture.clone(), normalizer, cfg.masks.clone(), &mut rng)
            }
        };
        if cfg.fine_tune {
            bundle.masks = cfg.masks.clone();
        }
        let pb_dim = bundle.pb_dim();
        bundle.pb_table = datasets
            .iter()
            .map(|d| PbEntry {
                label: d.tool.label(),
                tool: d.tool,
                p: alloc::vec![0.0; pb_dim],
            })
            .collect();
        Ok(Self {
            encoder_adam: AdamState::for_stack(&bundle.encoder),
            decoder_adam: AdamState::for_stack(&bundle.decoder),
            pb_adam: datasets.iter().map(|_| AdamState::new(pb_dim)).collect(),
            encoder_grads: StackGradients::zeros_like(&bundle.encoder),
            decoder_grads: StackGradients::zeros_like(&bundle.decoder),
            mask_counts: alloc::vec![0; bundle.masks.masks.len()],
            bundle,
            datasets,
            rng,
            cfg: cfg.clone(),
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn mask_counts(&self) -> &[usize] {
        &self.mask_counts
    }

    /// One optimizer step on the given `(dataset, sample)` pairs. Returns
    /// the summed per-sample loss.
    pub fn step(&mut self, batch: &[(usize, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        self.encoder_grads.fill_zero();
        self.decoder_grads.fill_zero();
        let pb_dim = self.bundle.pb_dim();
        let mut pb_grads = alloc::vec![alloc::vec![0.0; pb_dim]; self.datasets.len()];
        let mut touched = alloc::vec![false; self.datasets.len()];
        let full = ModalityMask::new([true; 4]);
        let mut total = 0.0;
        for &(d, s) in batch {
            let k = self.rng.random_range(0..self.bundle.masks.masks.len());
            self.mask_counts[k] += 1;
            let mask = self.bundle.masks.masks[k];
            let sample = &self.datasets[d].samples[s];
            let (loss, pg) = self.bundle.sample_loss(
                sample,
                &mask,
                &full,
                &self.bundle.pb_table[d].p,
                Some((&mut self.encoder_grads, &mut self.decoder_grads)),
            )?;
            total += loss;
            touched[d] = true;
            for (a, g) in pb_grads[d].iter_mut().zip(&pg) {
                *a += g;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        self.encoder_grads.scale(scale);
        self.decoder_grads.scale(scale);
        let lr = self.cfg.learning_rate;
        adam_step(&mut self.bundle.encoder, &self.encoder_grads, &mut self.encoder_adam, lr)?;
        adam_step(&mut self.bundle.decoder, &self.decoder_grads, &mut self.decoder_adam, lr)?;
        for d in 0..self.datasets.len() {
            if touched[d] {
                for g in &mut pb_grads[d] {
                    *g *= scale;
                }
                self.pb_adam[d].step_flat(&mut self.bundle.pb_table[d].p, &pb_grads[d], lr)?;
            }
        }
        Ok(total)
    }

    /// One shuffled pass over every sample; returns the mean sample loss.
    pub fn epoch(&mut self) -> Result<f64> {
        let mut order: Vec<(usize, usize)> = self
            .datasets
            .iter()
            .enumerate()
            .flat_map(|(d, ds)| (0..ds.samples.len()).map(move |s| (d, s)))
            .collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            total += self.step(batch)?;
        }
        Ok(total / order.len().max(1) as f64)
    }

    pub fn finish(self) -> (ModelBundle, Vec<usize>) {
        (self.bundle, self.mask_counts)
    }
}

/// Trains from scratch, or fine-tunes `init` when `cfg.fine_tune` is set.
pub fn train(datasets: &[ToolDataset], cfg: &TrainConfig, init: Option<&ModelBundle>) -> Result<(ModelBundle, TrainReport)> {
    train_with_progress(datasets, cfg, init, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss)` after each epoch.
pub fn train_with_progress(
    datasets: &[ToolDataset],
    cfg: &TrainConfig,
    init: Option<&ModelBundle>,
    mut progress: impl FnMut(usize, f64),
) -> Result<(ModelBundle, TrainReport)> {
    let mut trainer = Trainer::new(datasets, cfg, init)?;
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let loss = trainer.epoch()?;
        progress(e, loss);
        loss_history.push(loss);
    }
    let (bundle, mask_counts) = trainer.finish();
    Ok((bundle, TrainReport { loss_history, mask_counts }))
}

/// Trained PB of every tool state, in dataset order.
pub fn pb_table(bundle: &ModelBundle) -> Vec<(ToolState, Vec<f64>)> {
    bundle.pb_table.iter().map(|e| (e.tool, e.p.clone())).collect()
}

/// Default sim-stage collection: 500 random constrained samples per state.
pub fn collect_training_set(
    model: &RobotModel,
    tools: &[ToolState],
    per_tool: usize,
    policy: SamplingPolicy,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<ToolDataset>> {
    tools
        .iter()
        .enumerate()
        .map(|(k, tool)| {
            let mut d = collect_dataset(model, tool, per_tool, policy, noise, seed.wrapping_add(k as u64 * 7919))?;
            d.index = k;
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            architecture: Architecture {
                encoder_hidden: alloc::vec![16],
                latent_dim: 4,
                decoder_hidden: alloc::vec![16],
                pb_dim: 2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_samples_is_empty() {
        let m = RobotModel::default();
        let d = collect_dataset(&m, &ToolState::LONG_LIGHT, 0, SamplingPolicy::RandomConstrained, &NoiseSpec::default(), 1).unwrap();
        assert!(d.samples.is_empty());
    }

    #[test]
    fn collected_samples_satisfy_constraints() {
        let m = RobotModel::default();
        for policy in [SamplingPolicy::RandomConstrained, SamplingPolicy::CuratedGrid { grid_poses: 60 }] {
            let d = collect_dataset(&m, &ToolState::LONG_HEAVY, 80, policy, &NoiseSpec::default(), 2).unwrap();
            assert_eq!(d.samples.len(), 80);
            for s in &d.samples {
                assert!(is_acceptable(&m, s));
                let [w, h] = m.camera.image_size_px;
                assert!((0.0..w).contains(&s.s_tool_px[0]) && (0.0..h).contains(&s.s_tool_px[1]));
                assert_eq!(s.tool, Some(ToolState::LONG_HEAVY));
            }
        }
    }

    #[test]
    fn impossible_constraints_are_a_configuration_error() {
        let mut m = RobotModel::default();
        m.camera.position_mm = [-500.0, 0.0, 360.0];
        m.camera.yaw_deg = 180.0;
        let r = collect_dataset(&m, &ToolState::LONG_LIGHT, 10, SamplingPolicy::RandomConstrained, &NoiseSpec::default(), 0);
        assert!(matches!(r, Err(Error::LowAcceptance { .. })));
    }

    #[test]
    fn single_dataset_has_one_zero_pb() {
        let m = RobotModel::default();
        let d = collect_training_set(&m, &[ToolState::SHORT_MIDDLE], 16, SamplingPolicy::RandomConstrained, &NoiseSpec::default(), 3).unwrap();
        let t = Trainer::new(&d, &small_cfg(), None).unwrap();
        assert_eq!(t.bundle().pb_table.len(), 1);
        assert_eq!(t.bundle().pb_table[0].p, alloc::vec![0.0, 0.0]);
        assert!(pb_table(t.bundle()).iter().all(|(_, p)| p.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn fine_tune_requires_init() {
        let m = RobotModel::default();
        let d = collect_training_set(&m, &[ToolState::SHORT_MIDDLE], 8, SamplingPolicy::RandomConstrained, &NoiseSpec::default(), 3).unwrap();
        let cfg = TrainConfig { fine_tune: true, ..small_cfg() };
        assert!(matches!(Trainer::new(&d, &cfg, None), Err(Error::Config(_))));
    }
}
