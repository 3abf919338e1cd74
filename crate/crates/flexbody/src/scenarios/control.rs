use flexbody_core::analysis::{moving_average, MOVING_AVERAGE_WINDOW};
use flexbody_core::controller::{execute, geometric_ik, solve, ControlSolution, ControlTarget};
use flexbody_core::online::{distance, OnlineEstimator};
use flexbody_core::sim::{JointVector, RobotModel, ToolState};
use flexbody_core::wtnpb::ModelBundle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::online::{mean, variance};
use super::{pb_columns, Run};
use crate::config::Plant;
use crate::error::{CliError, Result};
use crate::io::{num, Table};

/// Columns of the control-eval error table, baseline first.
pub const METHODS: [&str; 3] = ["geometric", "sim-trained", "fine-tuned"];

/// Steps averaged when reading errors right after a tool swap.
pub const SWITCH_WINDOW: usize = MOVING_AVERAGE_WINDOW;

fn pb_of(bundle: &ModelBundle, tool: &ToolState, which: &str) -> Result<Vec<f64>> {
    bundle
        .pb_for(tool)
        .map(<[f64]>::to_vec)
        .ok_or_else(|| CliError::Config(format!("{which} bundle has no PB for {}", tool.label())))
}

pub(super) fn control_eval(run: &mut Run<'_>) -> Result<Value> {
    let sim = run.sim_bundle()?;
    let real = run.real_bundle()?;
    let plant = run.plant(Plant::Real);
    let model = run.cfg.robot.clone();
    let stage = run.cfg.control.clone();
    let tool = stage.tool;
    let p_sim = pb_of(&sim, &tool, "sim-trained")?;
    let p_real = pb_of(&real, &tool, "fine-tuned")?;

    let mut results = Table::new([
        "target", "method", "x_ref_mm", "y_ref_mm", "z_ref_mm", "theta0_deg", "theta1_deg", "theta2_deg", "theta3_deg",
        "x_tool_mm", "y_tool_mm", "z_tool_mm", "x_cog_mm", "y_cog_mm", "tool_error_mm", "cog_error_mm",
    ]);
    let mut log = Table::new([
        "target", "method", "epoch", "best_loss", "pred_x_tool_mm", "pred_y_tool_mm", "pred_z_tool_mm", "pred_x_cog_mm",
        "pred_y_cog_mm", "x_tool_mm", "y_tool_mm", "z_tool_mm", "x_cog_mm", "y_cog_mm",
    ]);
    let mut errors = Table::new(["target", "geometric_mm", "sim_trained_mm", "fine_tuned_mm"]);
    let mut by_method: [Vec<f64>; 3] = Default::default();
    let mut cog_by_method: [Vec<f64>; 3] = Default::default();

    for (i, x_ref) in stage.targets_mm.iter().enumerate() {
        let target = ControlTarget::tool(*x_ref);
        let ik = geometric_ik(&model, &target, &tool, &stage.ik);
        let learned = [
            solve(&sim, &model, &target, &p_sim, &stage.solver)?,
            solve(&real, &model, &target, &p_real, &stage.solver)?,
        ];
        let commands = [ik.theta_cmd_deg, learned[0].theta_cmd_deg, learned[1].theta_cmd_deg];
        let mut row_errors = Vec::with_capacity(3);
        for (m, theta) in commands.iter().enumerate() {
            let (tip, cog) = execute(&plant, theta, &tool)?;
            let err = distance(&tip, x_ref);
            let cog_err = distance(&cog, &target.x_cog_ref_mm);
            by_method[m].push(err);
            cog_by_method[m].push(cog_err);
            row_errors.push(num(err));
            let mut r = vec![i.to_string(), METHODS[m].to_string()];
            r.extend(x_ref.iter().map(|v| num(*v)));
            r.extend(theta.iter().map(|v| num(*v)));
            r.extend(tip.iter().map(|v| num(*v)));
            r.extend(cog.iter().map(|v| num(*v)));
            r.push(num(err));
            r.push(num(cog_err));
            results.push(r);
        }
        for (k, sol) in learned.iter().enumerate() {
            log_session(&mut log, i, METHODS[k + 1], sol, &model, &plant, &tool)?;
        }
        let mut r = vec![i.to_string()];
        r.extend(row_errors);
        errors.push(r);
    }
    results.write(&run.output("control_eval.csv"))?;
    errors.write(&run.output("error_table.csv"))?;
    log.write(&run.output("control_log.csv"))?;

    let mut methods = serde_json::Map::new();
    for (m, name) in METHODS.iter().enumerate() {
        methods.insert(
            name.to_string(),
            json!({
                "tool_error_mean_mm": mean(&by_method[m]),
                "tool_error_variance_mm2": variance(&by_method[m]),
                "cog_error_mean_mm": mean(&cog_by_method[m]),
                "tool_errors_mm": by_method[m],
            }),
        );
    }
    Ok(json!({ "tool": tool.label(), "targets": stage.targets_mm.len(), "methods": methods }))
}

fn log_session(
    log: &mut Table,
    target: usize,
    method: &str,
    sol: &ControlSolution,
    model: &RobotModel,
    plant: &RobotModel,
    tool: &ToolState,
) -> Result<()> {
    for (epoch, (loss, pred)) in sol.loss_trace.iter().zip(&sol.prediction_trace).enumerate() {
        let theta: JointVector = model.clamp_to_range(&[pred[0], pred[1], pred[2], pred[3]]);
        let (tip, cog) = execute(plant, &theta, tool)?;
        let mut r = vec![target.to_string(), method.to_string(), epoch.to_string(), num(*loss)];
        r.extend(pred[6..9].iter().chain(&pred[4..6]).map(|v| num(*v)));
        r.extend(tip.iter().chain(&cog).map(|v| num(*v)));
        log.push(r);
    }
    Ok(())
}

pub(super) fn tool_switch(run: &mut Run<'_>) -> Result<Value> {
    let bundle = run.real_bundle()?;
    let plant = run.plant(Plant::Real);
    let model = run.cfg.robot.clone();
    let stage = run.cfg.tool_switch.clone();
    let solver = run.cfg.control.solver.clone();
    let noise = run.cfg.noise;
    let steps = stage.steps_per_tool;
    let initial = pb_of(&bundle, &stage.sequence[0], "fine-tuned")?;
    let mut est = OnlineEstimator::new(&initial, stage.estimator.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed());

    let mut tool_errors = Vec::new();
    let mut cog_errors = Vec::new();
    let mut rows = Vec::new();
    for step in 0..stage.sequence.len() * steps {
        let tool = stage.sequence[step / steps];
        let k = rng.random_range(0..stage.targets_mm.len());
        let target = ControlTarget::tool(stage.targets_mm[k]);
        let p = est.snapshot();
        let sol = solve(&bundle, &model, &target, &p, &solver)?;
        let (tip, cog) = execute(&plant, &sol.theta_cmd_deg, &tool)?;
        tool_errors.push(distance(&tip, &target.x_tool_ref_mm));
        cog_errors.push(distance(&cog, &target.x_cog_ref_mm));
        // A pose that tips the robot over gives no usable foot reading.
        let outcome = match plant.observe(&sol.theta_cmd_deg, &tool, &noise, &mut rng) {
            Ok(obs) => Some(est.offer(&bundle, &obs)?),
            Err(flexbody_core::Error::Unstable(_)) => None,
            Err(e) => return Err(e.into()),
        };
        rows.push((step, tool, k, p, est.buffer.len(), outcome.is_some_and(|o| o.updated)));
    }
    let ma_tool = moving_average(&tool_errors, MOVING_AVERAGE_WINDOW);
    let ma_cog = moving_average(&cog_errors, MOVING_AVERAGE_WINDOW);

    let mut header: Vec<String> = ["step", "tool", "target"].map(String::from).to_vec();
    header.extend(["tool_error_mm", "cog_error_mm", "tool_error_ma_mm", "cog_error_ma_mm"].map(String::from));
    header.extend(pb_columns("p", bundle.pb_dim()));
    header.extend(["buffer_len", "updated"].map(String::from));
    header.extend(bundle.pb_table.iter().map(|e| format!("dist_{}", e.label)));
    let mut table = Table::new(header);
    for (i, (step, tool, k, p, len, updated)) in rows.iter().enumerate() {
        let mut r = vec![step.to_string(), tool.label(), k.to_string()];
        r.extend([tool_errors[i], cog_errors[i], ma_tool[i], ma_cog[i]].map(num));
        r.extend(p.iter().map(|v| num(*v)));
        r.push(len.to_string());
        r.push(u8::from(*updated).to_string());
        r.extend(bundle.pb_table.iter().map(|e| num(distance(p, &e.p))));
        table.push(r);
    }
    table.write(&run.output("tool_switch.csv"))?;

    let swaps: Vec<Value> = (1..stage.sequence.len())
        .map(|s| {
            let start = s * steps;
            let end = (s + 1) * steps - 1;
            let early = (start + SWITCH_WINDOW - 1).min(end);
            json!({
                "step": start,
                "from": stage.sequence[s - 1].label(),
                "to": stage.sequence[s].label(),
                "cog_error_ma_after_swap_mm": ma_cog[early],
                "cog_error_ma_end_mm": ma_cog[end],
                "tool_error_ma_after_swap_mm": ma_tool[early],
                "tool_error_ma_end_mm": ma_tool[end],
            })
        })
        .collect();
    Ok(json!({
        "sequence": stage.sequence.iter().map(|t| t.label()).collect::<Vec<_>>(),
        "steps_per_tool": steps,
        "capacity": stage.estimator.capacity,
        "swaps": swaps,
    }))
}
