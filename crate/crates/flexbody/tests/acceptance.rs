//! End-to-end acceptance run. Trains with the default configuration (or the
//! file in `FLEXBODY_ACCEPTANCE_CONFIG`), runs every scenario and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use flexbody::io::Table;
use flexbody::{ExperimentConfig, Inputs, RunSpec, Scenario};
use flexbody_core::analysis::{linearly_separable_2d, moving_average, spearman, MOVING_AVERAGE_WINDOW};
use flexbody_core::controller::{control_loss, solve, ControlConfig, ControlTarget};
use flexbody_core::net::StackGradients;
use flexbody_core::sim::{RobotModel, StateSample, ToolState, REFERENCE_POSE_DEG};
use flexbody_core::wtnpb::{Architecture, FeasibleMaskSet, ModalityMask, ModelBundle, Normalizer, STATE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn col(t: &Table, name: &str) -> Vec<f64> {
    t.column(name)
        .unwrap_or_else(|| panic!("missing column {name}"))
        .iter()
        .map(|v| v.parse().unwrap())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn run_scenario(cfg: &ExperimentConfig, out: &Path, scenario: Scenario, inputs: Inputs) -> f64 {
    let start = Instant::now();
    flexbody::run(&RunSpec {
        scenario,
        config: cfg.clone(),
        seed: SEED,
        out: out.to_path_buf(),
        inputs,
    })
    .unwrap_or_else(|e| panic!("{scenario} failed: {e}"));
    start.elapsed().as_secs_f64()
}

fn ce1(out: &Path, train_s: f64) -> Outcome {
    let t = Table::read(&out.join("pb_map.csv")).unwrap();
    let weights = col(&t, "weight_g");
    let lengths = col(&t, "length_mm");
    let axes: Vec<Vec<f64>> = (1..).map_while(|k| t.column(&format!("pc{k}")).map(|_| col(&t, &format!("pc{k}")))).collect();
    let rho: Vec<f64> = axes.iter().map(|a| spearman(a, &weights).unwrap_or(0.0).abs()).collect();
    let (best, best_rho) = rho.iter().cloned().enumerate().fold((0, 0.0), |b, (i, r)| if r > b.1 { (i, r) } else { b });
    let other = if best == 0 { 1 } else { 0 };
    let length_rho = axes.get(other).and_then(|a| spearman(a, &lengths)).unwrap_or(0.0).abs();
    let plane = |long: bool| -> Vec<[f64; 2]> {
        (0..lengths.len())
            .filter(|&i| (lengths[i] > 206.0) == long)
            .map(|i| [axes[0][i], axes.get(1).map_or(0.0, |a| a[i])])
            .collect()
    };
    let separable = linearly_separable_2d(&plane(false), &plane(true));
    outcome(
        best_rho >= 0.9 && separable && train_s <= 900.0,
        format!(
            "weight |rho| {best_rho:.3} on pc{}, length |rho| {length_rho:.3} on pc{}, long/short separable {separable}, train-sim {train_s:.0} s",
            best + 1,
            other + 1
        ),
    )
}

fn ce2(out: &Path) -> Outcome {
    let t = Table::read(&out.join("online_traj.csv")).unwrap();
    let regimes = t.column("regime").unwrap();
    let runs = t.column("run").unwrap();
    let d = col(&t, "dist_true");
    let mut first: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut last: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for i in 0..d.len() {
        first.entry((regimes[i], runs[i])).or_insert(d[i]);
        last.insert((regimes[i], runs[i]), d[i]);
    }
    let per = |m: &BTreeMap<(&str, &str), f64>, r: &str| mean(&m.iter().filter(|(k, _)| k.0 == r).map(|(_, v)| *v).collect::<Vec<_>>());
    let (a, b, c) = (per(&last, "A"), per(&last, "B"), per(&last, "C"));
    let a0 = per(&first, "A");
    let n = last.keys().filter(|k| k.0 == "A").count();
    outcome(
        a <= b && b <= c && a < 0.5 * a0,
        format!("{n} runs, final distance A {a:.4} B {b:.4} C {c:.4}, A initial {a0:.4}"),
    )
}

fn ce3(out: &Path) -> Outcome {
    let t = Table::read(&out.join("error_table.csv")).unwrap();
    let g = mean(&col(&t, "geometric_mm"));
    let s = mean(&col(&t, "sim_trained_mm"));
    let f = mean(&col(&t, "fine_tuned_mm"));
    outcome(
        f < s && s < g && f <= 0.6 * g,
        format!("{} targets, mean tip error fine-tuned {f:.1} mm, sim-trained {s:.1} mm, geometric {g:.1} mm", t.rows.len()),
    )
}

fn ce4(out: &Path) -> Outcome {
    let t = Table::read(&out.join("tool_switch.csv")).unwrap();
    let tools = t.column("tool").unwrap();
    let cog = moving_average(&col(&t, "cog_error_mm"), MOVING_AVERAGE_WINDOW);
    let tip = moving_average(&col(&t, "tool_error_mm"), MOVING_AVERAGE_WINDOW);
    let segment = |label: &str| -> (usize, usize) {
        let start = tools.iter().position(|x| *x == label).unwrap();
        let end = tools.iter().rposition(|x| *x == label).unwrap();
        (start, end)
    };
    let (h0, h1) = segment(&ToolState::LONG_HEAVY.label());
    let (s0, s1) = segment(&ToolState::SHORT_HEAVY.label());
    let at = |v: &[f64], s: usize, e: usize| (v[(s + MOVING_AVERAGE_WINDOW - 1).min(e)], v[e]);
    let (cog_swap, cog_end) = at(&cog, h0, h1);
    let (tip_swap, tip_end) = at(&tip, s0, s1);
    outcome(
        cog_end <= 0.7 * cog_swap && tip_end < tip_swap,
        format!(
            "Long/Heavy COG error MA {cog_swap:.2} -> {cog_end:.2} mm (ratio {:.2}); Short/Heavy tip error MA {tip_swap:.1} -> {tip_end:.1} mm",
            cog_end / cog_swap
        ),
    )
}

fn random_bundle(r: &mut ChaCha8Rng) -> ModelBundle {
    let arch = Architecture {
        encoder_hidden: vec![r.random_range(3..=8)],
        latent_dim: r.random_range(2..=4),
        decoder_hidden: vec![r.random_range(3..=8)],
        pb_dim: 2,
    };
    let normalizer = Normalizer {
        mean: std::array::from_fn(|_| r.random_range(-100.0..=100.0)),
        std: std::array::from_fn(|_| r.random_range(5.0..=50.0)),
    };
    ModelBundle::new(arch, normalizer, FeasibleMaskSet::default(), r)
}

fn ce5() -> Outcome {
    const H: f64 = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let b = random_bundle(&mut r);
        let v: [f64; STATE_DIM] = std::array::from_fn(|i| b.normalizer.mean[i] + b.normalizer.std[i] * r.random_range(-2.0..=2.0));
        let x = StateSample::from_vector(&v, [true; 4]);
        let m = b.masks.masks[r.random_range(0..b.masks.masks.len())];
        let full = ModalityMask::new([true; 4]);
        let p: Vec<f64> = (0..b.pb_dim()).map(|_| r.random_range(-1.0..=1.0)).collect();
        let loss = |b: &ModelBundle, p: &[f64]| b.sample_loss(&x, &m, &full, p, None).unwrap().0;

        let mut enc = StackGradients::zeros_like(&b.encoder);
        let mut dec = StackGradients::zeros_like(&b.decoder);
        let (_, gp) = b.sample_loss(&x, &m, &full, &p, Some((&mut enc, &mut dec))).unwrap();
        for (net, grads) in [(0, &enc), (1, &dec)] {
            let layers = if net == 0 { &b.encoder.layers } else { &b.decoder.layers };
            for l in 0..layers.len() {
                for i in 0..layers[l].weights.len() {
                    let mut plus = b.clone();
                    let mut minus = b.clone();
                    let (sp, sm) = if net == 0 { (&mut plus.encoder, &mut minus.encoder) } else { (&mut plus.decoder, &mut minus.decoder) };
                    sp.layers[l].weights[i] += H;
                    sm.layers[l].weights[i] -= H;
                    let fd = (loss(&plus, &p) - loss(&minus, &p)) / (2.0 * H);
                    worst[0] = worst[0].max(rel(fd, grads.weights[l][i]));
                }
            }
        }
        for k in 0..p.len() {
            let mut pp = p.clone();
            pp[k] += H;
            let mut pm = p.clone();
            pm[k] -= H;
            let fd = (loss(&b, &pp) - loss(&b, &pm)) / (2.0 * H);
            worst[1] = worst[1].max(rel(fd, gp[k]));
        }
        let target = ControlTarget::tool([r.random_range(250.0..=400.0), r.random_range(-100.0..=100.0), r.random_range(150.0..=320.0)]);
        let cfg = ControlConfig::default();
        let z: Vec<f64> = (0..b.latent_dim()).map(|_| r.random_range(-0.9..=0.9)).collect();
        let (_, gz) = control_loss(&b, &z, &target, &cfg).unwrap();
        for k in 0..z.len() {
            let mut zp = z.clone();
            zp[k] += H;
            let mut zm = z.clone();
            zm[k] -= H;
            let fd = (control_loss(&b, &zp, &target, &cfg).unwrap().0 - control_loss(&b, &zm, &target, &cfg).unwrap().0) / (2.0 * H);
            worst[2] = worst[2].max(rel(fd, gz[k]));
        }
    }
    outcome(
        worst.iter().all(|w| *w <= 1e-5),
        format!("100 configurations, max relative error weights {:.1e}, PB {:.1e}, latent {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn ce6(out: &Path, cfg: &ExperimentConfig) -> Outcome {
    let log = Table::read(&out.join("control_log.csv")).unwrap();
    let targets = log.column("target").unwrap();
    let methods = log.column("method").unwrap();
    let loss = col(&log, "best_loss");
    let mut runs = 0;
    let mut monotone = 0;
    let mut i = 0;
    while i < loss.len() {
        let mut j = i + 1;
        while j < loss.len() && targets[j] == targets[i] && methods[j] == methods[i] {
            j += 1;
        }
        runs += 1;
        monotone += usize::from(loss[i..j].windows(2).all(|w| w[1] <= w[0]));
        i = j;
    }
    let bundle = flexbody::io::read_bundle(&out.join("real_bundle.json")).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..100 {
        let mut target = ControlTarget::tool([r.random_range(280.0..=400.0), r.random_range(-120.0..=120.0), r.random_range(150.0..=320.0)]);
        target.x_cog_ref_mm = [r.random_range(-10.0..=10.0), r.random_range(-10.0..=10.0)];
        let entry = &bundle.pb_table[r.random_range(0..bundle.pb_table.len())];
        let sol = solve(&bundle, &cfg.robot, &target, &entry.p, &cfg.control.solver).unwrap();
        runs += 1;
        monotone += usize::from(sol.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }
    outcome(monotone == runs, format!("{monotone}/{runs} solve() runs with non-increasing best loss"))
}

fn ce7(cfg: &ExperimentConfig) -> Outcome {
    let m = &cfg.robot;
    let (light, heavy) = (ToolState::LONG_LIGHT, ToolState::LONG_HEAVY);
    let al = m.deflected_angles(&REFERENCE_POSE_DEG, &light).unwrap();
    let ah = m.deflected_angles(&REFERENCE_POSE_DEG, &heavy).unwrap();
    let tip = dist(&m.forward_kinematics(&al, &light), &m.forward_kinematics(&ah, &heavy));
    let cog = dist(&m.center_of_gravity(&al, &light), &m.center_of_gravity(&ah, &heavy));
    outcome(
        (35.0..=65.0).contains(&tip) && (10.0..=20.0).contains(&cog),
        format!("pose {REFERENCE_POSE_DEG:?}, Light->Heavy tip shift {tip:.2} mm, COG shift {cog:.2} mm"),
    )
}

fn ce8() -> Outcome {
    let m = RobotModel::default();
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst, mut negative, mut n) = (0.0f64, 0, 0);
    while n < 1000 {
        let c = [r.random_range(-50.0..=50.0), r.random_range(-60.0..=60.0)];
        if !m.inside_support(&c, 0.0) {
            continue;
        }
        n += 1;
        let f = m.foot_forces(&c, r.random_range(200.0..=3000.0)).unwrap();
        negative += f.iter().filter(|x| **x < 0.0).count();
        worst = worst.max(dist(&m.cog_from_forces(&f), &c));
    }
    outcome(worst <= 1e-9 && negative == 0, format!("{n} draws, max error {worst:.1e} mm, {negative} negative forces"))
}

fn main() -> ExitCode {
    let cfg = match std::env::var_os("FLEXBODY_ACCEPTANCE_CONFIG") {
        Some(p) => ExperimentConfig::load(Path::new(&p)).expect("acceptance config"),
        None => ExperimentConfig::default(),
    };
    let out = std::env::var_os("FLEXBODY_ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    println!("acceptance run: seed {SEED}, config {}, output {}", &cfg.hash()[..12], out.display());

    let sim = out.join("sim_bundle.json");
    let real = out.join("real_bundle.json");
    let with = |bundle: bool, tuned: bool| Inputs {
        bundle: bundle.then(|| sim.clone()),
        fine_tuned_bundle: tuned.then(|| real.clone()),
    };
    let train_s = run_scenario(&cfg, &out, Scenario::TrainSim, with(false, false));
    run_scenario(&cfg, &out, Scenario::FineTune, with(true, false));
    run_scenario(&cfg, &out, Scenario::PbMap, with(true, false));
    run_scenario(&cfg, &out, Scenario::OnlineTraj, with(true, false));
    run_scenario(&cfg, &out, Scenario::ControlEval, with(true, true));
    run_scenario(&cfg, &out, Scenario::ToolSwitch, with(false, true));

    let results = [
        ("CE-1", ce1(&out, train_s)),
        ("CE-2", ce2(&out)),
        ("CE-3", ce3(&out)),
        ("CE-4", ce4(&out)),
        ("CE-5", ce5()),
        ("CE-6", ce6(&out, &cfg)),
        ("CE-7", ce7(&cfg)),
        ("CE-8", ce8()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{name} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
