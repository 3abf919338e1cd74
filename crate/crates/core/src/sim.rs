//! Static, deflection-aware model of a small low-rigidity humanoid holding a
//! tool.
//!
//! The body is a fixed chain: feet on the ground, an ankle-pitch joint, a
//! torso, a shoulder (pitch then yaw), an upper arm, an elbow-pitch joint and
//! a forearm whose end grasps the tool. The tool extends along the forearm
//! axis. Joint compliance is modeled as a static angular error proportional to
//! the gravity holding torque of each joint, solved as a fixed point because
//! the load depends on the deflected pose.
//!
//! World frame: origin at the foot center on the ground, `x` forward, `y`
//! left, `z` up. Lengths are in mm, masses in g, angles in deg, torques in Nm.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 4;
pub const NUM_FOOT_SENSORS: usize = 8;
pub const GRAVITY: f64 = 9.81;

/// Joint angles ordered (shoulder-pitch, shoulder-yaw, elbow-pitch, ankle-pitch).
pub type JointVector = [f64; NUM_JOINTS];

/// Arm held straight out in front, the pose used to calibrate the deflection gains.
pub const REFERENCE_POSE_DEG: JointVector = [90.0, 0.0, 0.0, 0.0];

const DEFLECTION_DAMPING: f64 = 0.5;
const DEFLECTION_TOLERANCE_DEG: f64 = 1e-6;
const DEFLECTION_MAX_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointName {
    ShoulderPitch,
    ShoulderYaw,
    ElbowPitch,
    AnklePitch,
}

impl JointName {
    pub const ALL: [JointName; NUM_JOINTS] = [
        JointName::ShoulderPitch,
        JointName::ShoulderYaw,
        JointName::ElbowPitch,
        JointName::AnklePitch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for JointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JointName::ShoulderPitch => "shoulder-pitch",
            JointName::ShoulderYaw => "shoulder-yaw",
            JointName::ElbowPitch => "elbow-pitch",
            JointName::AnklePitch => "ankle-pitch",
        })
    }
}

/// A rigid link. `direction_local` is the link axis in the frame of the joint
/// driving it (the feet use the world frame).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub length_mm: f64,
    pub mass_g: f64,
    pub com_offset_mm: f64,
    pub direction_local: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: JointName,
    pub axis_local: [f64; 3],
    pub range_deg: [f64; 2],
    pub deflection_gain_deg_per_nm: f64,
}

/// Pinhole camera rigidly mounted on the head. `pitch_down_deg` tilts the
/// optical axis below the horizon, `yaw_deg` turns it toward `+y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal_px: f64,
    pub principal_point_px: [f64; 2],
    pub image_size_px: [f64; 2],
    pub position_mm: [f64; 3],
    pub pitch_down_deg: f64,
    pub yaw_deg: f64,
}

/// Grasped tool: mass and length measured from the hand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub weight_g: f64,
    pub length_mm: f64,
}

pub const TOOL_WEIGHTS_G: [f64; 3] = [40.0, 80.0, 120.0];
pub const TOOL_LENGTHS_MM: [f64; 2] = [176.0, 236.0];

impl ToolState {
    pub const fn new(weight_g: f64, length_mm: f64) -> Self {
        Self {
            weight_g,
            length_mm,
        }
    }

    pub const SHORT_LIGHT: ToolState = ToolState::new(40.0, 176.0);
    pub const SHORT_MIDDLE: ToolState = ToolState::new(80.0, 176.0);
    pub const SHORT_HEAVY: ToolState = ToolState::new(120.0, 176.0);
    pub const LONG_LIGHT: ToolState = ToolState::new(40.0, 236.0);
    pub const LONG_MIDDLE: ToolState = ToolState::new(80.0, 236.0);
    pub const LONG_HEAVY: ToolState = ToolState::new(120.0, 236.0);

    pub fn none() -> Self {
        Self::new(0.0, 0.0)
    }

    /// The six training states, lengths outer, weights inner.
    pub fn training_states() -> [ToolState; 6] {
        [
            Self::SHORT_LIGHT,
            Self::SHORT_MIDDLE,
            Self::SHORT_HEAVY,
            Self::LONG_LIGHT,
            Self::LONG_MIDDLE,
            Self::LONG_HEAVY,
        ]
    }

    pub fn weight_class(&self) -> &'static str {
        nearest(&TOOL_WEIGHTS_G, self.weight_g, &["Light", "Middle", "Heavy"])
    }

    pub fn length_class(&self) -> &'static str {
        nearest(&TOOL_LENGTHS_MM, self.length_mm, &["Short", "Long"])
    }

    /// `Long/Light` style label.
    pub fn label(&self) -> String {
        let mut s = String::from(self.length_class());
        s.push('/');
        s.push_str(self.weight_class());
        s
    }
}

fn nearest(values: &[f64], x: f64, names: &[&'static str]) -> &'static str {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if (v - x).abs() < (values[best] - x).abs() {
            best = i;
        }
    }
    names[best]
}

/// Full robot description. Links are ordered feet, torso, upper arm, forearm;
/// joints follow [`JointName::ALL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotModel {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub camera: Camera,
    pub foot_corners_mm: Vec<[f64; 2]>,
    /// Tool center of mass as a fraction of its length from the hand.
    pub tool_com_fraction: f64,
    /// Constant joint offsets subtracted after deflection (zero on the nominal model).
    pub backlash_deg: JointVector,
    /// Extra downward tip sag per (mm of tool length x Nm of shoulder-pitch load).
    pub tip_sag_mm_per_mm_nm: f64,
}

const FOOT: usize = 0;
const TORSO: usize = 1;
const UPPER_ARM: usize = 2;
const FOREARM: usize = 3;

impl Default for RobotModel {
    fn default() -> Self {
        let link = |name: &str, length_mm, mass_g, com_offset_mm, dir: [f64; 3]| LinkSpec {
            name: name.into(),
            length_mm,
            mass_g,
            com_offset_mm,
            direction_local: dir,
        };
        let joint = |name, axis, lo, hi, gain| JointSpec {
            name,
            axis_local: axis,
            range_deg: [lo, hi],
            deflection_gain_deg_per_nm: gain,
        };
        Self {
            links: alloc::vec![
                link("feet", 40.0, 250.0, 20.0, [0.0, 0.0, 1.0]),
                link("torso", 260.0, 1030.0, 130.0, [0.0, 0.0, 1.0]),
                link("upper-arm", 100.0, 90.0, 50.0, [0.0, 0.0, -1.0]),
                link("forearm", 110.0, 130.0, 55.0, [0.0, 0.0, -1.0]),
            ],
            joints: alloc::vec![
                joint(JointName::ShoulderPitch, [0.0, -1.0, 0.0], 0.0, 110.0, 15.0),
                joint(JointName::ShoulderYaw, [1.0, 0.0, 0.0], -45.0, 45.0, 15.0),
                joint(JointName::ElbowPitch, [0.0, -1.0, 0.0], 0.0, 90.0, 15.0),
                joint(JointName::AnklePitch, [0.0, 1.0, 0.0], -15.0, 15.0, 3.0),
            ],
            camera: Camera {
                focal_px: 380.0,
                principal_point_px: [320.0, 240.0],
                image_size_px: [640.0, 480.0],
                position_mm: [20.0, 0.0, 360.0],
                pitch_down_deg: 35.0,
                yaw_deg: 0.0,
            },
            foot_corners_mm: alloc::vec![
                [50.0, 10.0],
                [50.0, 60.0],
                [-50.0, 60.0],
                [-50.0, 10.0],
                [50.0, -60.0],
                [50.0, -10.0],
                [-50.0, -10.0],
                [-50.0, -60.0],
            ],
            tool_com_fraction: 0.5,
            backlash_deg: [0.0; NUM_JOINTS],
            tip_sag_mm_per_mm_nm: 0.0,
        }
    }
}

/// Gaussian observation noise, one standard deviation per modality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub theta_deg: f64,
    pub cog_mm: f64,
    pub tool_mm: f64,
    pub screen_px: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            theta_deg: 0.0,
            cog_mm: 0.5,
            tool_mm: 2.0,
            screen_px: 2.0,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            theta_deg: 0.0,
            cog_mm: 0.0,
            tool_mm: 0.0,
            screen_px: 0.0,
        }
    }
}

/// Systematic differences between the nominal model and the "real" plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    pub gain_scale: f64,
    pub link_mass_scale: Vec<f64>,
    pub backlash_deg: JointVector,
    pub tip_sag_mm_per_mm_nm: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            gain_scale: 1.4,
            link_mass_scale: alloc::vec![0.9, 1.1, 1.1, 1.1],
            backlash_deg: [1.0; NUM_JOINTS],
            tip_sag_mm_per_mm_nm: 0.02,
        }
    }
}

impl PerturbSpec {
    pub fn identity() -> Self {
        Self {
            gain_scale: 1.0,
            link_mass_scale: alloc::vec![1.0; 4],
            backlash_deg: [0.0; NUM_JOINTS],
            tip_sag_mm_per_mm_nm: 0.0,
        }
    }
}

/// One synchronized observation of all four modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub theta_deg: JointVector,
    pub x_cog_mm: [f64; 2],
    pub x_tool_mm: [f64; 3],
    pub s_tool_px: [f64; 2],
    /// Presence per modality (theta, cog, tool 3D, screen).
    pub present: [bool; 4],
    /// Ground-truth metadata, never fed to the network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolState>,
}

impl StateSample {
    pub const DIM: usize = 11;

    pub fn to_vector(&self) -> [f64; 11] {
        let mut v = [0.0; 11];
        v[0..4].copy_from_slice(&self.theta_deg);
        v[4..6].copy_from_slice(&self.x_cog_mm);
        v[6..9].copy_from_slice(&self.x_tool_mm);
        v[9..11].copy_from_slice(&self.s_tool_px);
        v
    }

    pub fn from_vector(v: &[f64; 11], present: [bool; 4]) -> Self {
        let mut s = Self {
            theta_deg: [v[0], v[1], v[2], v[3]],
            x_cog_mm: [v[4], v[5]],
            x_tool_mm: [v[6], v[7], v[8]],
            s_tool_px: [v[9], v[10]],
            present,
            tool: None,
        };
        s.zero_absent();
        s
    }

    /// Zero every block whose presence flag is false.
    pub fn zero_absent(&mut self) {
        if !self.present[0] {
            self.theta_deg = [0.0; 4];
        }
        if !self.present[1] {
            self.x_cog_mm = [0.0; 2];
        }
        if !self.present[2] {
            self.x_tool_mm = [0.0; 3];
        }
        if !self.present[3] {
            self.s_tool_px = [0.0; 2];
        }
    }
}

/// Screen projection result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenPoint {
    pub px: [f64; 2],
    pub visible: bool,
}

struct MassPoint {
    position: Vector3<f64>,
    mass_g: f64,
    /// Whether each joint (in [`JointName::ALL`] order) carries this mass.
    carried_by: [bool; NUM_JOINTS],
}

/// World-frame placement of every joint, mass and the tool tip for one pose.
struct ChainPose {
    joint_origin: [Vector3<f64>; NUM_JOINTS],
    joint_axis: [Vector3<f64>; NUM_JOINTS],
    masses: [MassPoint; 5],
    tip: Vector3<f64>,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn rot(axis: [f64; 3], angle_deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(v3(axis)), angle_deg.to_radians())
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        if self.links.len() != 4 {
            return Err(Error::Config("exactly 4 links required".into()));
        }
        if self.joints.len() != NUM_JOINTS {
            return Err(Error::Config("exactly 4 joints required".into()));
        }
        for (joint, name) in self.joints.iter().zip(JointName::ALL) {
            if joint.name != name {
                return Err(Error::Config(alloc::format!(
                    "joint {} out of order, expected {}",
                    joint.name,
                    name
                )));
            }
            if !(joint.range_deg[0] < joint.range_deg[1]) {
                return Err(Error::Config(alloc::format!("{} has an empty range", name)));
            }
            if !(joint.deflection_gain_deg_per_nm >= 0.0) {
                return Err(Error::Config(alloc::format!("{} has a negative gain", name)));
            }
            if v3(joint.axis_local).norm() < 1e-12 {
                return Err(Error::Config(alloc::format!("{} has a zero axis", name)));
            }
        }
        for link in &self.links {
            if !(link.length_mm > 0.0)
                || !(link.mass_g >= 0.0)
                || !(0.0..=link.length_mm).contains(&link.com_offset_mm)
            {
                return Err(Error::Config(alloc::format!("link {} is malformed", link.name)));
            }
        }
        if self.foot_corners_mm.len() != NUM_FOOT_SENSORS {
            return Err(Error::Config("8 foot corners required".into()));
        }
        if support_hull(&self.foot_corners_mm).len() < 3 {
            return Err(Error::Config("foot corners are degenerate".into()));
        }
        let cam = &self.camera;
        if !(cam.image_size_px[0] > 0.0 && cam.image_size_px[1] > 0.0 && cam.focal_px > 0.0) {
            return Err(Error::Config("camera image size and focal length must be positive".into()));
        }
        Ok(())
    }

    pub fn body_mass_g(&self) -> f64 {
        self.links.iter().map(|l| l.mass_g).sum()
    }

    pub fn total_mass_g(&self, tool: &ToolState) -> f64 {
        self.body_mass_g() + tool.weight_g
    }

    pub fn joint_ranges(&self) -> [[f64; 2]; NUM_JOINTS] {
        core::array::from_fn(|i| self.joints[i].range_deg)
    }

    pub fn deflection_gains(&self) -> JointVector {
        core::array::from_fn(|i| self.joints[i].deflection_gain_deg_per_nm)
    }

    /// Same geometry with every compliance term removed.
    pub fn rigid(&self) -> RobotModel {
        let mut m = self.clone();
        for j in &mut m.joints {
            j.deflection_gain_deg_per_nm = 0.0;
        }
        m.backlash_deg = [0.0; NUM_JOINTS];
        m.tip_sag_mm_per_mm_nm = 0.0;
        m
    }

    pub fn check_range(&self, theta: &JointVector) -> Result<()> {
        for (joint, &value) in self.joints.iter().zip(theta) {
            let [lo, hi] = joint.range_deg;
            if !(lo..=hi).contains(&value) {
                return Err(Error::JointRange {
                    joint: joint.name,
                    value_deg: value,
                    min_deg: lo,
                    max_deg: hi,
                });
            }
        }
        Ok(())
    }

    pub fn clamp_to_range(&self, theta: &JointVector) -> JointVector {
        core::array::from_fn(|i| {
            let [lo, hi] = self.joints[i].range_deg;
            theta[i].clamp(lo, hi)
        })
    }

    fn chain(&self, theta: &JointVector, tool: &ToolState) -> ChainPose {
        let [sp, sy, ep, ap] = *theta;
        let j = &self.joints;
        let l = &self.links;
        let along = |r: &Rotation3<f64>, link: &LinkSpec, d: f64| r * (v3(link.direction_local).normalize() * d);

        let identity = Rotation3::identity();
        let ankle = along(&identity, &l[FOOT], l[FOOT].length_mm);
        let foot_com = along(&identity, &l[FOOT], l[FOOT].com_offset_mm);

        let r_torso = rot(j[3].axis_local, ap);
        let shoulder = ankle + along(&r_torso, &l[TORSO], l[TORSO].length_mm);
        let torso_com = ankle + along(&r_torso, &l[TORSO], l[TORSO].com_offset_mm);

        let r_pitch = r_torso * rot(j[0].axis_local, sp);
        let r_arm = r_pitch * rot(j[1].axis_local, sy);
        let elbow = shoulder + along(&r_arm, &l[UPPER_ARM], l[UPPER_ARM].length_mm);
        let upper_com = shoulder + along(&r_arm, &l[UPPER_ARM], l[UPPER_ARM].com_offset_mm);

        let r_fore = r_arm * rot(j[2].axis_local, ep);
        let hand = elbow + along(&r_fore, &l[FOREARM], l[FOREARM].length_mm);
        let fore_com = elbow + along(&r_fore, &l[FOREARM], l[FOREARM].com_offset_mm);
        let tip = hand + along(&r_fore, &l[FOREARM], tool.length_mm);
        let tool_com = hand + along(&r_fore, &l[FOREARM], tool.length_mm * self.tool_com_fraction);

        let axis = |r: &Rotation3<f64>, a: [f64; 3]| r * v3(a).normalize();
        ChainPose {
            joint_origin: [shoulder, shoulder, elbow, ankle],
            joint_axis: [
                axis(&r_torso, j[0].axis_local),
                axis(&r_pitch, j[1].axis_local),
                axis(&r_arm, j[2].axis_local),
                axis(&identity, j[3].axis_local),
            ],
            masses: [
                MassPoint {
                    position: foot_com,
                    mass_g: l[FOOT].mass_g,
                    carried_by: [false, false, false, false],
                },
                MassPoint {
                    position: torso_com,
                    mass_g: l[TORSO].mass_g,
                    carried_by: [false, false, false, true],
                },
                MassPoint {
                    position: upper_com,
                    mass_g: l[UPPER_ARM].mass_g,
                    carried_by: [true, true, false, true],
                },
                MassPoint {
                    position: fore_com,
                    mass_g: l[FOREARM].mass_g,
                    carried_by: [true, true, true, true],
                },
                MassPoint {
                    position: tool_com,
                    mass_g: tool.weight_g,
                    carried_by: [true, true, true, true],
                },
            ],
            tip,
        }
    }

    fn holding_torques(&self, theta: &JointVector, tool: &ToolState) -> JointVector {
        let pose = self.chain(theta, tool);
        core::array::from_fn(|j| {
            let origin = pose.joint_origin[j];
            let axis = pose.joint_axis[j];
            pose.masses
                .iter()
                .filter(|m| m.carried_by[j])
                .map(|m| {
                    let arm_m = (m.position - origin) * 1e-3;
                    let force = Vector3::new(0.0, 0.0, -m.mass_g * 1e-3 * GRAVITY);
                    // The actuator holds against gravity.
                    -axis.dot(&arm_m.cross(&force))
                })
                .sum()
        })
    }

    /// Holding torque each joint must supply against gravity at `theta`.
    pub fn joint_torques(&self, theta: &JointVector, tool: &ToolState) -> Result<JointVector> {
        self.check_range(theta)?;
        Ok(self.holding_torques(theta, tool))
    }

    fn deflection_map(&self, cmd: &JointVector, act: &JointVector, tool: &ToolState) -> JointVector {
        let tau = self.holding_torques(act, tool);
        core::array::from_fn(|i| {
            cmd[i] - self.joints[i].deflection_gain_deg_per_nm * tau[i] - self.backlash_deg[i]
        })
    }

    /// Actual joint angles under load: the fixed point of
    /// `act = cmd - gain * tau(act) - backlash`.
    pub fn deflected_angles(&self, theta_cmd: &JointVector, tool: &ToolState) -> Result<JointVector> {
        self.check_range(theta_cmd)?;
        let mut act = *theta_cmd;
        let mut residual = f64::INFINITY;
        for _ in 0..=DEFLECTION_MAX_ITERATIONS {
            let next = self.deflection_map(theta_cmd, &act, tool);
            residual = act
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if residual <= DEFLECTION_TOLERANCE_DEG {
                return Ok(act);
            }
            for (a, n) in act.iter_mut().zip(&next) {
                *a = DEFLECTION_DAMPING * *a + (1.0 - DEFLECTION_DAMPING) * n;
            }
        }
        Err(Error::DeflectionDiverged {
            last_deg: act,
            residual,
        })
    }

    /// Tool-tip world position at the given (already deflected) angles.
    pub fn forward_kinematics(&self, theta_act: &JointVector, tool: &ToolState) -> [f64; 3] {
        let mut tip = self.chain(theta_act, tool).tip;
        if self.tip_sag_mm_per_mm_nm != 0.0 {
            let load = self.holding_torques(theta_act, tool)[JointName::ShoulderPitch.index()];
            tip.z -= self.tip_sag_mm_per_mm_nm * tool.length_mm * load.abs();
        }
        [tip.x, tip.y, tip.z]
    }

    /// Ground-plane center of gravity of body and tool, relative to the foot center.
    pub fn center_of_gravity(&self, theta_act: &JointVector, tool: &ToolState) -> [f64; 2] {
        let pose = self.chain(theta_act, tool);
        let total: f64 = pose.masses.iter().map(|m| m.mass_g).sum();
        let weighted = pose
            .masses
            .iter()
            .fold(Vector3::zeros(), |acc, m| acc + m.position * m.mass_g);
        [weighted.x / total, weighted.y / total]
    }

    /// Whether `cog` lies inside the support polygon shrunk by `margin_mm`.
    pub fn inside_support(&self, cog: &[f64; 2], margin_mm: f64) -> bool {
        support_margin(&support_hull(&self.foot_corners_mm), cog) > margin_mm
    }

    /// Static corner forces (N) whose centroid is `cog`, carrying `total_mass_g`.
    ///
    /// Solves the minimum-norm non-negative distribution through its dual,
    /// `f = max(0, A^T lambda)` with `A f = b`, by a damped semismooth Newton
    /// iteration on the three multipliers.
    pub fn foot_forces(&self, cog: &[f64; 2], total_mass_g: f64) -> Result<[f64; NUM_FOOT_SENSORS]> {
        if !self.inside_support(cog, 0.0) {
            return Err(Error::Unstable(*cog));
        }
        Ok(min_norm_nonneg_forces(&self.foot_corners_mm, cog, total_mass_g * 1e-3 * GRAVITY))
    }

    /// Force-weighted centroid of the corner sensors.
    pub fn cog_from_forces(&self, forces: &[f64; NUM_FOOT_SENSORS]) -> [f64; 2] {
        let total: f64 = forces.iter().sum();
        let mut c = [0.0; 2];
        for (f, p) in forces.iter().zip(&self.foot_corners_mm) {
            c[0] += f * p[0];
            c[1] += f * p[1];
        }
        [c[0] / total, c[1] / total]
    }

    /// Pinhole projection through the head camera.
    pub fn project_to_screen(&self, x_tool: &[f64; 3]) -> ScreenPoint {
        let cam = &self.camera;
        let (pitch, yaw) = (cam.pitch_down_deg.to_radians(), cam.yaw_deg.to_radians());
        let (sp, cp) = libm::sincos(pitch);
        let (sy, cy) = libm::sincos(yaw);
        let forward = Vector3::new(cp * cy, cp * sy, -sp);
        let right = Vector3::new(sy, -cy, 0.0);
        let down = forward.cross(&right);
        let rel = v3(*x_tool) - v3(cam.position_mm);
        let depth = rel.dot(&forward);
        if depth <= 1e-9 {
            return ScreenPoint {
                px: [f64::NAN; 2],
                visible: false,
            };
        }
        let px = [
            cam.principal_point_px[0] + cam.focal_px * rel.dot(&right) / depth,
            cam.principal_point_px[1] + cam.focal_px * rel.dot(&down) / depth,
        ];
        ScreenPoint {
            px,
            visible: self.in_image(&px),
        }
    }

    fn in_image(&self, px: &[f64; 2]) -> bool {
        let size = self.camera.image_size_px;
        (0.0..size[0]).contains(&px[0]) && (0.0..size[1]).contains(&px[1])
    }

    /// Noise-free sensor readings at a commanded pose. The tip counts as
    /// hidden when it is below the floor.
    pub fn observe_exact(&self, theta_cmd: &JointVector, tool: &ToolState) -> Result<StateSample> {
        let act = self.deflected_angles(theta_cmd, tool)?;
        let tip = self.forward_kinematics(&act, tool);
        let cog = self.center_of_gravity(&act, tool);
        let forces = self.foot_forces(&cog, self.total_mass_g(tool))?;
        let sensed_cog = self.cog_from_forces(&forces);
        let screen = self.project_to_screen(&tip);
        let visible = screen.visible && tip[2] >= 0.0;
        let mut sample = StateSample {
            theta_deg: *theta_cmd,
            x_cog_mm: sensed_cog,
            x_tool_mm: tip,
            s_tool_px: screen.px,
            present: [true, true, visible, visible],
            tool: Some(*tool),
        };
        sample.zero_absent();
        Ok(sample)
    }

    /// One noisy observation. All eleven noise draws are consumed on every
    /// call so the random stream does not depend on visibility.
    pub fn observe<R: Rng + ?Sized>(
        &self,
        theta_cmd: &JointVector,
        tool: &ToolState,
        noise: &NoiseSpec,
        rng: &mut R,
    ) -> Result<StateSample> {
        let mut sample = self.observe_exact(theta_cmd, tool)?;
        let mut draw = |sigma: f64| -> f64 {
            let n: f64 = StandardNormal.sample(rng);
            n * sigma
        };
        for t in &mut sample.theta_deg {
            *t += draw(noise.theta_deg);
        }
        for c in &mut sample.x_cog_mm {
            *c += draw(noise.cog_mm);
        }
        for x in &mut sample.x_tool_mm {
            *x += draw(noise.tool_mm);
        }
        for s in &mut sample.s_tool_px {
            *s += draw(noise.screen_px);
        }
        if sample.present[3] && !self.in_image(&sample.s_tool_px) {
            sample.present[2] = false;
            sample.present[3] = false;
        }
        sample.zero_absent();
        Ok(sample)
    }

    /// Uniform draw of a commanded pose inside the joint ranges.
    pub fn random_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> JointVector {
        core::array::from_fn(|i| {
            let [lo, hi] = self.joints[i].range_deg;
            rng.random_range(lo..=hi)
        })
    }
}

/// Model standing in for the physical robot.
pub fn surrogate_real(model: &RobotModel, perturbation: &PerturbSpec) -> RobotModel {
    let mut m = model.clone();
    for j in &mut m.joints {
        j.deflection_gain_deg_per_nm *= perturbation.gain_scale;
    }
    for (link, s) in m.links.iter_mut().zip(&perturbation.link_mass_scale) {
        link.mass_g *= s;
    }
    for (b, p) in m.backlash_deg.iter_mut().zip(&perturbation.backlash_deg) {
        *b += p;
    }
    m.tip_sag_mm_per_mm_nm += perturbation.tip_sag_mm_per_mm_nm;
    m
}

/// Counter-clockwise convex hull (monotone chain).
pub fn support_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: alloc::boxed::Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            alloc::boxed::Box::new(pts.iter())
        } else {
            alloc::boxed::Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Signed distance from `c` to the hull boundary, positive inside.
fn support_margin(hull: &[[f64; 2]], c: &[f64; 2]) -> f64 {
    let n = hull.len();
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = libm::hypot(ex, ey);
        let d = (ex * (c[1] - a[1]) - ey * (c[0] - a[0])) / len;
        margin = margin.min(d);
    }
    margin
}

fn min_norm_nonneg_forces(corners: &[[f64; 2]], cog: &[f64; 2], weight_n: f64) -> [f64; NUM_FOOT_SENSORS] {
    use nalgebra::{Matrix3, SVector};
    // Rows scaled to comparable magnitude.
    const SCALE: f64 = 100.0;
    let a: [[f64; NUM_FOOT_SENSORS]; 3] = [
        [1.0; NUM_FOOT_SENSORS],
        core::array::from_fn(|i| corners[i][0] / SCALE),
        core::array::from_fn(|i| corners[i][1] / SCALE),
    ];
    let b = SVector::<f64, 3>::new(weight_n, weight_n * cog[0] / SCALE, weight_n * cog[1] / SCALE);
    let forces = |lambda: &SVector<f64, 3>| -> [f64; NUM_FOOT_SENSORS] {
        core::array::from_fn(|i| (a[0][i] * lambda[0] + a[1][i] * lambda[1] + a[2][i] * lambda[2]).max(0.0))
    };
    let residual = |f: &[f64; NUM_FOOT_SENSORS]| -> SVector<f64, 3> {
        SVector::<f64, 3>::from_fn(|r, _| (0..NUM_FOOT_SENSORS).map(|i| a[r][i] * f[i]).sum::<f64>()) - b
    };
    let dual = |lambda: &SVector<f64, 3>| -> f64 {
        let f = forces(lambda);
        0.5 * f.iter().map(|x| x * x).sum::<f64>() - b.dot(lambda)
    };
    let hessian = |lambda: &SVector<f64, 3>, with_zeros: bool| -> Matrix3<f64> {
        let mut h = Matrix3::zeros();
        for i in 0..NUM_FOOT_SENSORS {
            let s = a[0][i] * lambda[0] + a[1][i] * lambda[1] + a[2][i] * lambda[2];
            if s > 0.0 || (with_zeros && s == 0.0) {
                for r in 0..3 {
                    for c in 0..3 {
                        h[(r, c)] += a[r][i] * a[c][i];
                    }
                }
            }
        }
        h
    };

    // Unconstrained minimum-norm start.
    let mut lambda = hessian(&SVector::from([1.0, 0.0, 0.0]), true)
        .lu()
        .solve(&b)
        .unwrap_or_else(|| SVector::from([weight_n / NUM_FOOT_SENSORS as f64, 0.0, 0.0]));
    let tol = 1e-14 * weight_n.max(1e-12);
    for _ in 0..100 {
        let f = forces(&lambda);
        let g = residual(&f);
        if g.amax() <= tol {
            break;
        }
        let h = hessian(&lambda, false) + Matrix3::identity() * 1e-12;
        let step = match h.lu().solve(&(-g)) {
            Some(s) => s,
            None => -g,
        };
        let current = dual(&lambda);
        let mut t = 1.0;
        let slope = g.dot(&step);
        loop {
            let candidate = lambda + step * t;
            if dual(&candidate) <= current + 1e-4 * t * slope || t < 1e-12 {
                lambda = candidate;
                break;
            }
            t *= 0.5;
        }
    }
    forces(&lambda)
}
