//! Latent-space control: search the decoder input for a state whose predicted
//! tool tip hits the command while the COG stays over the feet.

use alloc::vec::Vec;

use nalgebra::{Matrix2x4, Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{JointVector, RobotModel, StateSample, ToolState, NUM_JOINTS};
use crate::wtnpb::{Modality, ModalityMask, ModelBundle, REFERENCE_MASK, STATE_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlTarget {
    pub x_tool_ref_mm: [f64; 3],
    #[serde(default)]
    pub x_cog_ref_mm: [f64; 2],
    #[serde(default)]
    pub s_tool_ref_px: Option<[f64; 2]>,
    #[serde(default)]
    pub theta_cur_deg: Option<JointVector>,
}

impl ControlTarget {
    pub fn tool(x_tool_ref_mm: [f64; 3]) -> Self {
        Self {
            x_tool_ref_mm,
            x_cog_ref_mm: [0.0; 2],
            s_tool_ref_px: None,
            theta_cur_deg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub alpha: f64,
    pub gamma_max: f64,
    /// Smallest nonzero step on the exponential grid.
    pub gamma_min: f64,
    pub candidates: usize,
    pub epochs: usize,
    pub theta_weight: f64,
    pub screen_weight: f64,
    pub init_mask: ModalityMask,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma_max: 0.1,
            gamma_min: 1e-4,
            candidates: 30,
            epochs: 30,
            theta_weight: 0.0,
            screen_weight: 0.0,
            init_mask: REFERENCE_MASK,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !(self.theta_weight >= 0.0) || !(self.screen_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.gamma_max > 0.0) || !(self.gamma_min > 0.0) || self.gamma_min >= self.gamma_max {
            return Err(Error::Config("need 0 < gamma_min < gamma_max".into()));
        }
        if self.candidates < 2 {
            return Err(Error::Config("need at least 2 step candidates".into()));
        }
        Ok(())
    }
}

/// Nonzero step sizes, increasing geometrically from `gamma_min` to `gamma_max`.
pub fn gamma_grid(cfg: &ControlConfig) -> Vec<f64> {
    let n = cfg.candidates;
    let rho = libm::pow(cfg.gamma_min / cfg.gamma_max, 1.0 / (n as f64 - 1.0));
    let mut g: Vec<f64> = (1..=n).map(|j| cfg.gamma_max * libm::pow(rho, (n - j) as f64)).collect();
    g[n - 1] = cfg.gamma_max;
    g
}

/// Euclidean distance and its gradient with respect to `a`; zero gradient at
/// coincidence.
fn norm_term(a: &[f64], b: &[f64], out: &mut [f64]) -> f64 {
    let d = libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = if d > 0.0 { (x - y) / d } else { 0.0 };
    }
    d
}

/// Loss on a denormalized prediction and its gradient with respect to it.
pub fn prediction_loss(pred: &[f64; STATE_DIM], target: &ControlTarget, cfg: &ControlConfig) -> (f64, [f64; STATE_DIM]) {
    let mut grad = [0.0; STATE_DIM];
    let term = |m: Modality, reference: &[f64], weight: f64, grad: &mut [f64; STATE_DIM]| -> f64 {
        if weight == 0.0 {
            return 0.0;
        }
        let r = m.range();
        let mut g = [0.0; 4];
        let d = norm_term(&pred[r.clone()], reference, &mut g[..r.len()]);
        for (k, i) in r.enumerate() {
            grad[i] += weight * g[k];
        }
        weight * d
    };
    let mut loss = term(Modality::Tool, &target.x_tool_ref_mm, 1.0, &mut grad);
    loss += term(Modality::Cog, &target.x_cog_ref_mm, cfg.alpha, &mut grad);
    if let Some(theta) = &target.theta_cur_deg {
        loss += term(Modality::Theta, theta, cfg.theta_weight, &mut grad);
    }
    if let Some(s) = &target.s_tool_ref_px {
        loss += term(Modality::Screen, s, cfg.screen_weight, &mut grad);
    }
    (loss, grad)
}

/// Control loss of latent `z` and its gradient.
pub fn control_loss(bundle: &ModelBundle, z: &[f64], target: &ControlTarget, cfg: &ControlConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(bundle, z, target, cfg).map(|(l, g, _)| (l, g))
}

fn evaluate(
    bundle: &ModelBundle,
    z: &[f64],
    target: &ControlTarget,
    cfg: &ControlConfig,
) -> Result<(f64, Vec<f64>, [f64; STATE_DIM])> {
    let (y, trace) = bundle.decoder.forward(z)?;
    let pred = bundle.normalizer.denormalize(&y);
    let (loss, dpred) = prediction_loss(&pred, target, cfg);
    let dy: Vec<f64> = dpred.iter().zip(&bundle.normalizer.std).map(|(g, s)| g * s).collect();
    Ok((loss, bundle.decoder.input_gradient(&trace, &dy)?, pred))
}

/// Sample holding the references, used to seed the latent. Slots the
/// initialization mask drops carry normalizer means.
pub fn reference_sample(bundle: &ModelBundle, target: &ControlTarget, mask: &ModalityMask) -> StateSample {
    let mut s = StateSample::from_vector(&bundle.normalizer.mean, mask.0);
    s.x_cog_mm = target.x_cog_ref_mm;
    s.x_tool_mm = target.x_tool_ref_mm;
    if let Some(px) = target.s_tool_ref_px {
        s.s_tool_px = px;
    }
    if let Some(theta) = target.theta_cur_deg {
        s.theta_deg = theta;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    /// Decoded joint command clamped to the joint ranges.
    pub theta_cmd_deg: JointVector,
    pub theta_raw_deg: JointVector,
    pub z: Vec<f64>,
    /// Best loss after each epoch; entry 0 is the loss at the initial latent.
    pub loss_trace: Vec<f64>,
    /// Chosen step per epoch (0 when no candidate improved).
    pub gamma_trace: Vec<f64>,
    /// Decoded state at each entry of `loss_trace`.
    pub prediction_trace: Vec<[f64; STATE_DIM]>,
    pub prediction: [f64; STATE_DIM],
}

impl ControlSolution {
    pub fn predicted_tool_mm(&self) -> [f64; 3] {
        [self.prediction[6], self.prediction[7], self.prediction[8]]
    }

    pub fn predicted_cog_mm(&self) -> [f64; 2] {
        [self.prediction[4], self.prediction[5]]
    }
}

pub fn solve(
    bundle: &ModelBundle,
    model: &RobotModel,
    target: &ControlTarget,
    p: &[f64],
    cfg: &ControlConfig,
) -> Result<ControlSolution> {
    cfg.validate()?;
    if !bundle.masks.contains(&cfg.init_mask) {
        return Err(Error::Config(alloc::format!(
            "initialization mask {} is not in the feasible set",
            cfg.init_mask
        )));
    }
    let reference = reference_sample(bundle, target, &cfg.init_mask);
    let mut z = bundle.encode(&reference, &cfg.init_mask, p)?;
    let grid = gamma_grid(cfg);
    let (mut best, mut grad, mut pred) = evaluate(bundle, &z, target, cfg)?;
    let mut loss_trace = alloc::vec![best];
    let mut prediction_trace = alloc::vec![pred];
    let mut gamma_trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        // The current z (gamma = 0) is the incumbent; ties keep it.
        let mut chosen: Option<(f64, Vec<f64>, Vec<f64>, [f64; STATE_DIM], f64)> = None;
        for &gamma in &grid {
            let candidate: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - gamma * gi).collect();
            let (l, g, p) = evaluate(bundle, &candidate, target, cfg)?;
            if l < chosen.as_ref().map_or(best, |c| c.0) {
                chosen = Some((l, candidate, g, p, gamma));
            }
        }
        match chosen {
            Some((l, zc, g, p, gamma)) => {
                best = l;
                z = zc;
                grad = g;
                pred = p;
                gamma_trace.push(gamma);
            }
            None => gamma_trace.push(0.0),
        }
        loss_trace.push(best);
        prediction_trace.push(pred);
    }
    let prediction = pred;
    let theta_raw: JointVector = core::array::from_fn(|i| prediction[i]);
    Ok(ControlSolution {
        theta_cmd_deg: model.clamp_to_range(&theta_raw),
        theta_raw_deg: theta_raw,
        z,
        loss_trace,
        gamma_trace,
        prediction_trace,
        prediction,
    })
}

/// Realized tool tip and COG after sending `theta_cmd` to `plant`.
pub fn execute(plant: &RobotModel, theta_cmd: &JointVector, tool: &ToolState) -> Result<([f64; 3], [f64; 2])> {
    let act = plant.deflected_angles(theta_cmd, tool)?;
    Ok((plant.forward_kinematics(&act, tool), plant.center_of_gravity(&act, tool)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iterations: usize,
    pub damping: f64,
    pub tolerance_mm: f64,
    /// Gain of the COG-centering step projected into the tip null space.
    pub cog_gain: f64,
    pub fd_step_deg: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            damping: 0.1,
            tolerance_mm: 1e-3,
            cog_gain: 0.05,
            fd_step_deg: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub theta_cmd_deg: JointVector,
    pub tip_error_mm: f64,
    pub cog_error_mm: f64,
    pub converged: bool,
}

/// Damped least-squares IK on the rigid model with COG centering in the
/// null space of the tip task. Joints pinned at a limit drop out of the
/// Jacobian; a few starting poses guard against stalling there.
pub fn geometric_ik(model: &RobotModel, target: &ControlTarget, tool: &ToolState, cfg: &IkConfig) -> IkSolution {
    let rigid = model.rigid();
    let ranges = rigid.joint_ranges();
    let at = |f: [f64; NUM_JOINTS]| -> JointVector { core::array::from_fn(|i| ranges[i][0] + f[i] * (ranges[i][1] - ranges[i][0])) };
    let mut starts = Vec::new();
    if let Some(t) = target.theta_cur_deg {
        starts.push(rigid.clamp_to_range(&t));
    }
    starts.extend([
        at([0.5, 0.5, 0.5, 0.5]),
        at([0.75, 0.5, 0.25, 0.5]),
        at([0.25, 0.5, 0.75, 0.5]),
        at([0.75, 0.5, 0.75, 0.5]),
    ]);
    let solutions: Vec<IkSolution> = starts.iter().map(|s| dls(&rigid, target, tool, cfg, *s)).collect();
    let converged = solutions
        .iter()
        .filter(|s| s.converged)
        .min_by(|a, b| a.cog_error_mm.total_cmp(&b.cog_error_mm));
    *converged.unwrap_or_else(|| {
        solutions
            .iter()
            .min_by(|a, b| a.tip_error_mm.total_cmp(&b.tip_error_mm))
            .expect("at least one start")
    })
}

fn dls(rigid: &RobotModel, target: &ControlTarget, tool: &ToolState, cfg: &IkConfig, start: JointVector) -> IkSolution {
    let ranges = rigid.joint_ranges();
    let goal = Vector3::from(target.x_tool_ref_mm);
    let cog_goal = Vector2::from(target.x_cog_ref_mm);
    let tip = |t: &JointVector| Vector3::from(rigid.forward_kinematics(t, tool));
    let cog = |t: &JointVector| Vector2::from(rigid.center_of_gravity(t, tool));

    let mut theta = start;
    let mut best = (theta, (goal - tip(&theta)).norm());
    for _ in 0..cfg.max_iterations {
        let e = goal - tip(&theta);
        let err = e.norm();
        if err < best.1 {
            best = (theta, err);
        }
        if err < cfg.tolerance_mm {
            break;
        }
        let mut jt = Matrix3x4::zeros();
        let mut jc = Matrix2x4::zeros();
        for k in 0..NUM_JOINTS {
            let mut hi = theta;
            let mut lo = theta;
            hi[k] += cfg.fd_step_deg;
            lo[k] -= cfg.fd_step_deg;
            let h2 = 2.0 * cfg.fd_step_deg;
            jt.set_column(k, &((tip(&hi) - tip(&lo)) / h2));
            jc.set_column(k, &((cog(&hi) - cog(&lo)) / h2));
        }
        let cog_err = cog(&theta) - cog_goal;
        let mut free = [true; NUM_JOINTS];
        let mut step = Vector4::zeros();
        for _ in 0..NUM_JOINTS {
            let mut j = jt;
            let mut jcf = jc;
            for k in 0..NUM_JOINTS {
                if !free[k] {
                    j.column_mut(k).fill(0.0);
                    jcf.column_mut(k).fill(0.0);
                }
            }
            let jjt = j * j.transpose() + Matrix3::identity() * (cfg.damping * cfg.damping);
            let Some(inv) = jjt.try_inverse() else { break };
            let pinv = j.transpose() * inv;
            let null = Matrix4::identity() - pinv * j;
            let cog_step: Vector4<f64> = -cfg.cog_gain * jcf.transpose() * cog_err;
            step = pinv * e + null * cog_step;
            for k in 0..NUM_JOINTS {
                if !free[k] {
                    step[k] = 0.0;
                }
            }
            let mut pinned = false;
            for k in 0..NUM_JOINTS {
                let blocked = (theta[k] <= ranges[k][0] && step[k] < 0.0) || (theta[k] >= ranges[k][1] && step[k] > 0.0);
                if free[k] && blocked {
                    free[k] = false;
                    pinned = true;
                }
            }
            if !pinned {
                break;
            }
        }
        let next: JointVector = core::array::from_fn(|i| theta[i] + step[i]);
        theta = rigid.clamp_to_range(&next);
    }
    let theta = best.0;
    let tip_error = (goal - tip(&theta)).norm();
    IkSolution {
        theta_cmd_deg: theta,
        tip_error_mm: tip_error,
        cog_error_mm: (cog(&theta) - cog_goal).norm(),
        converged: tip_error < 10.0 * cfg.tolerance_mm,
    }
}
