use flexbody_core::online::{distance, run_online, OnlineRun, Regime};
use serde_json::{json, Value};

use super::{pb_columns, Run};
use crate::error::{CliError, Result};
use crate::io::{num, Table};

pub(super) fn online_traj(run: &mut Run<'_>) -> Result<Value> {
    let bundle = run.sim_bundle()?;
    let stage = run.cfg.online.clone();
    let plant = run.plant(stage.plant);
    let truth = bundle
        .pb_for(&stage.true_tool)
        .ok_or_else(|| CliError::Config(format!("bundle has no PB for {}", stage.true_tool.label())))?
        .to_vec();
    let initial = match &stage.initial_tool {
        Some(t) => bundle
            .pb_for(t)
            .ok_or_else(|| CliError::Config(format!("bundle has no PB for {}", t.label())))?
            .to_vec(),
        None => vec![0.0; bundle.pb_dim()],
    };

    let mut header: Vec<String> = ["regime", "run", "tick", "time_s"].map(String::from).to_vec();
    header.extend(pb_columns("p", bundle.pb_dim()));
    header.extend(["buffer_len", "collected", "updated", "dist_true"].map(String::from));
    header.extend(bundle.pb_table.iter().map(|e| format!("dist_{}", e.label)));
    let mut table = Table::new(header);

    let mut per_regime = serde_json::Map::new();
    for regime in Regime::ALL {
        let mut finals = Vec::with_capacity(stage.runs);
        let mut initials = Vec::with_capacity(stage.runs);
        for r in 0..stage.runs {
            let traj = run_online(&OnlineRun {
                plant: &plant,
                bundle: &bundle,
                tool: stage.true_tool,
                regime,
                initial_p: &initial,
                ticks: stage.ticks,
                seed: run.seed().wrapping_add(r as u64),
                noise: run.cfg.noise,
                cfg: stage.estimator.clone(),
            })?;
            for t in &traj {
                let mut row = vec![format!("{regime:?}"), r.to_string(), t.tick.to_string(), num(t.time_s)];
                row.extend(t.p.iter().map(|v| num(*v)));
                row.push(t.buffer_len.to_string());
                row.push(u8::from(t.collected).to_string());
                row.push(u8::from(t.updated).to_string());
                row.push(num(distance(&t.p, &truth)));
                row.extend(bundle.pb_table.iter().map(|e| num(distance(&t.p, &e.p))));
                table.push(row);
            }
            initials.push(distance(&traj[0].p, &truth));
            finals.push(distance(&traj.last().expect("initial entry").p, &truth));
        }
        per_regime.insert(
            format!("{regime:?}"),
            json!({
                "initial_distance_mean": mean(&initials),
                "final_distance_mean": mean(&finals),
                "final_distances": finals,
            }),
        );
    }
    table.write(&run.output("online_traj.csv"))?;
    Ok(json!({
        "true_tool": stage.true_tool.label(),
        "initial_tool": stage.initial_tool.map(|t| t.label()),
        "regimes": per_regime,
    }))
}

pub(super) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub(super) fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>())
}
