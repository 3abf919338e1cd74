use flexbody_core::analysis::{linearly_separable_2d, pca, spearman};
use flexbody_core::trainer::{collect_training_set, pb_table, train, SamplingPolicy, TrainReport};
use flexbody_core::wtnpb::ModelBundle;
use serde_json::{json, Value};

use super::{pb_columns, training_tools, Run};
use crate::config::Plant;
use crate::error::Result;
use crate::io::{self, num, Table};

pub(super) fn train_sim(run: &mut Run<'_>) -> Result<Value> {
    let stage = &run.cfg.sim_stage;
    let model = run.plant(Plant::Sim);
    let data = collect_training_set(
        &model,
        &training_tools(),
        stage.samples_per_tool,
        SamplingPolicy::RandomConstrained,
        &run.cfg.noise,
        run.seed(),
    )?;
    let mut cfg = stage.train.clone();
    cfg.seed = run.seed();
    cfg.fine_tune = false;
    let (bundle, report) = train(&data, &cfg, None)?;

    io::write_dataset(&run.output("sim_dataset.jsonl"), &data)?;
    io::write_bundle(&run.output("sim_bundle.json"), &bundle)?;
    loss_table(&report).write(&run.output("train_loss.csv"))?;
    pb_csv(&bundle).write(&run.output("pb_table.csv"))?;
    Ok(training_metrics(data.iter().map(|d| d.samples.len()).sum(), &report))
}

pub(super) fn fine_tune(run: &mut Run<'_>) -> Result<Value> {
    let sim = run.sim_bundle()?;
    let stage = &run.cfg.real_stage;
    let plant = run.plant(Plant::Real);
    let data = collect_training_set(
        &plant,
        &training_tools(),
        stage.samples_per_tool,
        SamplingPolicy::CuratedGrid {
            grid_poses: stage.curated_poses,
        },
        &run.cfg.noise,
        run.seed(),
    )?;
    let mut cfg = stage.train.clone();
    cfg.seed = run.seed();
    cfg.fine_tune = true;
    let (bundle, report) = train(&data, &cfg, Some(&sim))?;

    io::write_dataset(&run.output("real_dataset.jsonl"), &data)?;
    io::write_bundle(&run.output("real_bundle.json"), &bundle)?;
    loss_table(&report).write(&run.output("fine_tune_loss.csv"))?;
    pb_csv(&bundle).write(&run.output("fine_tuned_pb_table.csv"))?;
    Ok(training_metrics(data.iter().map(|d| d.samples.len()).sum(), &report))
}

pub(super) fn pb_map(run: &mut Run<'_>) -> Result<Value> {
    let bundle = run.sim_bundle()?;
    let rows = pb_table(&bundle);
    let points: Vec<Vec<f64>> = rows.iter().map(|(_, p)| p.clone()).collect();
    let map = pca(&points)?;

    let dim = bundle.pb_dim();
    let mut header = vec!["label".to_string(), "weight_g".into(), "length_mm".into()];
    header.extend(pb_columns("p", dim));
    header.extend((1..=dim).map(|i| format!("pc{i}")));
    let mut table = Table::new(header);
    for ((tool, p), proj) in rows.iter().zip(&map.projected) {
        let mut r = vec![tool.label(), num(tool.weight_g), num(tool.length_mm)];
        r.extend(p.iter().map(|v| num(*v)));
        r.extend(proj.iter().map(|v| num(*v)));
        table.push(r);
    }
    table.write(&run.output("pb_map.csv"))?;

    let weights: Vec<f64> = rows.iter().map(|(t, _)| t.weight_g).collect();
    let lengths: Vec<f64> = rows.iter().map(|(t, _)| t.length_mm).collect();
    let axis = |k: usize| -> Vec<f64> { map.projected.iter().map(|v| v.get(k).copied().unwrap_or(0.0)).collect() };
    let weight_rho: Vec<Option<f64>> = (0..dim).map(|k| spearman(&axis(k), &weights)).collect();
    let length_rho: Vec<Option<f64>> = (0..dim).map(|k| spearman(&axis(k), &lengths)).collect();
    let plane = |pred: &dyn Fn(f64) -> bool| -> Vec<[f64; 2]> {
        rows.iter()
            .zip(&map.projected)
            .filter(|((t, _), _)| pred(t.length_mm))
            .map(|(_, v)| [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)])
            .collect()
    };
    let cut = 0.5 * (lengths.iter().cloned().fold(f64::INFINITY, f64::min) + lengths.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let separable = !map.degenerate && linearly_separable_2d(&plane(&|l| l < cut), &plane(&|l| l > cut));
    Ok(json!({
        "degenerate": map.degenerate,
        "mean": map.mean,
        "eigenvalues": map.eigenvalues,
        "components": map.components,
        "weight_spearman_by_axis": weight_rho,
        "length_spearman_by_axis": length_rho,
        "length_linearly_separable": separable,
    }))
}

fn loss_table(report: &TrainReport) -> Table {
    let mut t = Table::new(["epoch", "loss"]);
    for (e, l) in report.loss_history.iter().enumerate() {
        t.push(vec![e.to_string(), num(*l)]);
    }
    t
}

fn pb_csv(bundle: &ModelBundle) -> Table {
    let mut header = vec!["label".to_string(), "weight_g".into(), "length_mm".into()];
    header.extend(pb_columns("p", bundle.pb_dim()));
    let mut t = Table::new(header);
    for e in &bundle.pb_table {
        let mut r = vec![e.label.clone(), num(e.tool.weight_g), num(e.tool.length_mm)];
        r.extend(e.p.iter().map(|v| num(*v)));
        t.push(r);
    }
    t
}

fn training_metrics(samples: usize, report: &TrainReport) -> Value {
    json!({
        "samples": samples,
        "epochs": report.loss_history.len(),
        "first_loss": report.loss_history.first(),
        "final_loss": report.loss_history.last(),
        "mask_counts": report.mask_counts,
    })
}
