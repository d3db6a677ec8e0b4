//! File-level train / fine-tune / eval / analyze flows.

use std::fs;
use std::path::Path;

use drlfwd::campaign::{cmd_analyze, cmd_eval, cmd_export_trace, cmd_finetune, cmd_train, Variant};
use drlfwd::cltrain::{ClPlan, TrainParams};
use drlfwd::config::{presets, Scenario};
use drlfwd::features::FeatureSchema;
use drlfwd::mobility::load_trace;
use drlfwd::qnet::QNetwork;
use drlfwd::Error;

/// Short, busy 25-node scenario written as a config file.
fn busy(dir: &Path, name: &str, preset: &str, r: f64) -> Scenario {
    let mut sc = presets::small(preset, r).unwrap().with_duration(400, 200).with_seed(3);
    sc.sim.flow_arrival_rate = 0.02;
    sc.sim.packet_rate = 0.1;
    sc.sim.flow_duration_mean = 100.0;
    sc.mobility.warmup = 100;
    fs::write(dir.join(name), sc.to_toml()).unwrap();
    sc
}

#[test]
fn default_plan_has_three_phases_in_order() {
    let plan = ClPlan::default_plan();
    let ids: Vec<&str> = plan.scenarios.iter().map(|e| e.scenario.sim.scenario_id.as_str()).collect();
    assert_eq!(ids, ["rpgm-1group-r50", "rwp-3-r50", "rwp-mix2-r20"]);
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    busy(dir.path(), "a.toml", "rwp-3", 80.0);
    busy(dir.path(), "b.toml", "rwp-mix2", 30.0);
    fs::write(
        dir.path().join("plan.toml"),
        "round = 100\nseed = 9\n[[scenario]]\nconfig = \"a.toml\"\n[[scenario]]\nconfig = \"b.toml\"\n",
    )
    .unwrap();
    let plan = ClPlan::load(&dir.path().join("plan.toml")).unwrap();
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    cmd_train(&plan, &out1).unwrap();
    cmd_train(&plan, &out2).unwrap();
    let m1 = fs::read(out1.join("model.txt")).unwrap();
    assert_eq!(m1, fs::read(out2.join("model.txt")).unwrap());
    let text = String::from_utf8(m1).unwrap();
    assert!(text.contains("digest") && text.contains("seed"));
    let loss = fs::read_to_string(out1.join("loss.csv")).unwrap();
    assert!(loss.starts_with("# digest="));
    // Two phases of four rounds each.
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(loss.as_bytes());
    let mut rounds: Vec<(String, String)> = rdr.records().map(|r| r.unwrap()).map(|r| (r[0].to_string(), r[1].to_string())).collect();
    rounds.dedup();
    assert_eq!(rounds.len(), 8);
    assert_eq!(fs::read_dir(out1.join("datasets")).unwrap().count(), 2);
    assert!(fs::read_to_string(out1.join("schema.toml")).unwrap().contains(&FeatureSchema::default().hash()));
}

#[test]
fn single_scenario_plan_is_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    busy(dir.path(), "a.toml", "rwp-3", 80.0);
    fs::write(dir.path().join("plan.toml"), "round = 100\n[[scenario]]\nconfig = \"a.toml\"\n").unwrap();
    let plan = ClPlan::load(&dir.path().join("plan.toml")).unwrap();
    let out = dir.path().join("run");
    cmd_train(&plan, &out).unwrap();
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    // Every round trains on one dataset.
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(loss.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "datasets").unwrap();
    for rec in rdr.records() {
        assert_eq!(&rec.unwrap()[col], "1");
    }
}

#[test]
fn plan_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plan.toml");
    fs::write(&p, "round = 100\nbogus = 1\n").unwrap();
    let err = ClPlan::load(&p).unwrap_err();
    assert!(err.is_config_error());
    let msg = err.to_string();
    assert!(msg.contains("plan.toml") && msg.contains("line"), "{msg}");
}

#[test]
fn finetune_budget_and_trace_input() {
    let dir = tempfile::tempdir().unwrap();
    let schema = FeatureSchema::default();
    let base = QNetwork::for_schema(&schema, Default::default(), 1);
    let base_path = dir.path().join("base.txt");
    base.save(&base_path).unwrap();
    let mut sc = presets::small("rwp-mix2", 50.0).unwrap();
    sc.sim.flow_arrival_rate = 0.01;
    sc.mobility.warmup = 100;
    let params = TrainParams::default();

    let out = dir.path().join("ft.txt");
    let (net, log) = cmd_finetune(&base_path, &sc, None, 2000, 50, &params, &out).unwrap();
    assert_eq!(log.len(), 40);
    assert_eq!(net.schema_hash, base.schema_hash);
    assert_eq!(QNetwork::load(&out, &schema).unwrap().layers, net.layers);
    assert!(out.with_extension("loss.csv").exists());

    // Positions exported from one scenario drive another in trace mode.
    let trace_path = dir.path().join("trace.csv");
    let rows = cmd_export_trace(&sc.clone().with_seed(8), 2000, &trace_path).unwrap();
    assert_eq!(rows, 2001 * 25);
    let trace = load_trace(&trace_path).unwrap();
    let (_, log) = cmd_finetune(&base_path, &sc, Some(trace), 2000, 500, &params, &dir.path().join("ft2.txt")).unwrap();
    assert_eq!(log.len(), 4);
}

fn campaign(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("campaign.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn eval_writes_per_run_rows_summary_and_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = presets::small("rwp-3", 80.0).unwrap();
    sc.sim.flow_arrival_rate = 0.005;
    sc.sim.flow_duration_mean = 500.0;
    fs::write(dir.path().join("desk.toml"), sc.to_toml()).unwrap();
    let c = campaign(
        dir.path(),
        r#"
seeds = [1, 2, 3, 4, 5]
[[cell]]
label = "desk"
config = "desk.toml"
duration = 3000
cooldown = 1500
policies = ["utility", "seek-focus", "random", "oracle"]
"#,
    );
    let out = dir.path().join("out");
    let summary = cmd_eval(&c, Some(&out)).unwrap();
    assert_eq!(summary.len(), 4);
    for row in &summary {
        assert_eq!(row.runs, 5);
        assert_eq!(row.delivery_rate, 1.0, "{}", row.policy);
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# digest="));
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 1 + 20);
    let dominance = fs::read_to_string(out.join("dominance.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(dominance.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "violations").unwrap();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 15);
    assert!(rows.iter().all(|r| &r[col] == "0"));

    // Summary is a pure function of the per-run rows.
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(metrics.as_bytes());
    let h = rdr.headers().unwrap().clone();
    let (pc, dc) = (h.iter().position(|x| x == "policy").unwrap(), h.iter().position(|x| x == "mean_delay_s").unwrap());
    let delays: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[pc] == "utility")
        .map(|r| r[dc].parse().unwrap())
        .collect();
    let mean = delays.iter().sum::<f64>() / 5.0;
    let util = summary.iter().find(|r| r.policy == "utility").unwrap();
    assert!((util.mean_delay_s - mean).abs() < 1e-9 * mean.max(1.0));

    let logs: Vec<_> = fs::read_dir(out.join("decisions")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(logs.len(), 15);
    let rows = cmd_analyze(&logs, &dir.path().join("behavior.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().any(|r| r.variant == Variant::TransmitNoDest));
}

#[test]
fn eval_rejects_missing_and_mismatched_models() {
    let dir = tempfile::tempdir().unwrap();
    let body = |model: &str| {
        format!(
            "seeds = [1]\n[[cell]]\npreset = \"rwp-3\"\nrange = 50.0\nduration = 1000\ncooldown = 500\npolicies = [\"drl-cl\"]\n[cell.models]\ndrl-cl = \"{model}\"\n"
        )
    };
    let c = campaign(dir.path(), &body("nope.txt"));
    let err = cmd_eval(&c, Some(&dir.path().join("o"))).unwrap_err();
    assert!(err.is_config_error(), "{err}");

    let mut other = QNetwork::for_schema(&FeatureSchema::default(), Default::default(), 1);
    other.schema_hash = "0000".into();
    other.save(&dir.path().join("other.txt")).unwrap();
    let c = campaign(dir.path(), &body("other.txt"));
    assert!(matches!(cmd_eval(&c, Some(&dir.path().join("o"))), Err(Error::SchemaMismatch { .. })));

    let c = campaign(dir.path(), "seeds = [1]\n[[cell]]\npreset = \"rwp-3\"\nrange = 50.0\npolicies = [\"drl-cl\"]\n");
    assert!(cmd_eval(&c, Some(&dir.path().join("o"))).unwrap_err().is_config_error());
}
