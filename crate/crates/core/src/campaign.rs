//! Evaluation campaigns, confidence-interval summaries, forwarding-behavior
//! analysis and the file-level train/fine-tune commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{
    dominance_violations, oracle_run, write_oracle_paths, RandomPolicy, SeekFocus, SeekFocusParams, Utility,
    DEFAULT_THETA,
};
use crate::cltrain::{fine_tune, resolve_scenario, write_experience_log, write_loss_csv, ClPlan, RoundLog, TrainParams, Trainer};
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::mobility::{export_trajectory, load_trace, write_trace, TraceTable};
use crate::policy::{DrlPolicy, ForwardingPolicy};
use crate::qnet::QNetwork;
use crate::sim::{write_packets_csv, write_provenance, DecisionRecord, MetricsReport, RunOptions, World};

/// First 8 bytes of SHA-256, hex.
pub fn digest_of(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    DrlCl,
    DrlBase,
    Utility { theta: f64 },
    SeekFocus(SeekFocusParams),
    Random,
    Oracle,
}

impl PolicySpec {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "drl-cl" => PolicySpec::DrlCl,
            "drl-base" => PolicySpec::DrlBase,
            "utility" => PolicySpec::Utility { theta: DEFAULT_THETA },
            "seek-focus" => PolicySpec::SeekFocus(SeekFocusParams::default()),
            "random" => PolicySpec::Random,
            "oracle" => PolicySpec::Oracle,
            other => return Err(Error::InvalidConfig(format!("unknown policy '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::DrlCl => "drl-cl",
            PolicySpec::DrlBase => "drl-base",
            PolicySpec::Utility { .. } => "utility",
            PolicySpec::SeekFocus(_) => "seek-focus",
            PolicySpec::Random => "random",
            PolicySpec::Oracle => "oracle",
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, PolicySpec::DrlCl | PolicySpec::DrlBase)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignFile {
    #[serde(default)]
    output: Option<PathBuf>,
    seeds: Vec<u64>,
    #[serde(default = "yes")]
    testing: bool,
    #[serde(default = "default_theta")]
    theta: f64,
    cell: Vec<CellFile>,
}

fn yes() -> bool {
    true
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellFile {
    label: Option<String>,
    config: Option<PathBuf>,
    preset: Option<String>,
    range: Option<f64>,
    duration: Option<u64>,
    cooldown: Option<u64>,
    ttl: Option<u32>,
    policies: Vec<String>,
    #[serde(default)]
    models: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub scenario: Scenario,
    pub trace: Option<TraceTable>,
    pub policies: Vec<PolicySpec>,
    pub models: BTreeMap<String, QNetwork>,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub output: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
    pub digest: String,
}

impl Campaign {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(path, e.to_string()))?;
        Self::from_toml(&text, path.parent()).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::config(path, msg),
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let f: CampaignFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if f.seeds.is_empty() {
            return Err(Error::InvalidConfig("campaign needs at least one seed".into()));
        }
        let join = |p: &Path| base_dir.map_or_else(|| p.to_path_buf(), |b| b.join(p));
        let mut cells = Vec::new();
        for c in f.cell {
            let (mut sc, trace_path) = resolve_scenario(c.config.as_deref(), c.preset.as_deref(), c.range, base_dir)?;
            if f.testing {
                sc = sc.testing();
            }
            if let Some(d) = c.duration {
                let cd = c.cooldown.unwrap_or(sc.sim.cooldown.min(d.saturating_sub(1)));
                sc = sc.with_duration(d, cd);
            } else if let Some(cd) = c.cooldown {
                sc.sim.cooldown = cd;
            }
            if let Some(t) = c.ttl {
                sc.sim.initial_ttl = t;
            }
            sc.validate()?;
            let trace = trace_path.map(|p| load_trace(&p)).transpose()?;
            let policies: Vec<PolicySpec> = c
                .policies
                .iter()
                .map(|p| {
                    PolicySpec::parse(p).map(|s| match s {
                        PolicySpec::Utility { .. } => PolicySpec::Utility { theta: f.theta },
                        PolicySpec::SeekFocus(sf) => PolicySpec::SeekFocus(SeekFocusParams { theta: f.theta, ..sf }),
                        s => s,
                    })
                })
                .collect::<Result<_>>()?;
            let schema = FeatureSchema::new(sc.features.clone());
            let mut models = BTreeMap::new();
            for p in policies.iter().filter(|p| p.needs_model()) {
                let path = c
                    .models
                    .get(p.name())
                    .ok_or_else(|| Error::InvalidConfig(format!("policy {} needs a model path", p.name())))?;
                models.insert(p.name().to_string(), QNetwork::load(&join(path), &schema)?);
            }
            cells.push(Cell {
                label: c.label.unwrap_or_else(|| sc.sim.scenario_id.clone()),
                scenario: sc,
                trace,
                policies,
                models,
            });
        }
        Ok(Campaign { output: f.output.map(|o| join(&o)), seeds: f.seeds, cells, digest: digest_of(text.as_bytes()) })
    }
}

/// Result of one (cell, seed, policy) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub cell: usize,
    pub seed: u64,
    pub policy: String,
    pub scenario_digest: String,
    pub metrics: MetricsReport,
    pub decisions: Vec<DecisionRecord>,
    pub oracle_paths: Option<Vec<crate::baselines::OracleCopyRecord>>,
}

pub fn make_policy(spec: &PolicySpec, models: &BTreeMap<String, QNetwork>, seed: u64) -> Result<Box<dyn ForwardingPolicy>> {
    Ok(match spec {
        PolicySpec::DrlCl | PolicySpec::DrlBase => {
            let net = models
                .get(spec.name())
                .ok_or_else(|| Error::InvalidConfig(format!("no model for {}", spec.name())))?;
            Box::new(DrlPolicy::greedy(net.clone()).with_label(spec.name()))
        }
        PolicySpec::Utility { theta } => Box::new(Utility::new(*theta)),
        PolicySpec::SeekFocus(p) => Box::new(SeekFocus::new(p.clone(), seed)),
        PolicySpec::Random => Box::new(RandomPolicy::new(seed)),
        PolicySpec::Oracle => return Err(Error::InvalidConfig("the oracle is not a single-copy policy".into())),
    })
}

/// One greedy evaluation run of a single-copy policy.
pub fn evaluate(sc: &Scenario, trace: Option<TraceTable>, policy: &mut dyn ForwardingPolicy) -> Result<(MetricsReport, Vec<DecisionRecord>)> {
    let opts = RunOptions { record_experiences: false, log_decisions: true };
    let mut w = match trace {
        Some(t) => World::with_trace(sc, t, opts)?,
        None => World::new(sc, opts)?,
    };
    w.run(policy)?;
    let m = w.collect_metrics(policy.name())?;
    Ok((m, w.take_decisions()))
}

fn run_one(c: &Campaign, cell: usize, seed: u64, spec: &PolicySpec) -> Result<RunResult> {
    let cl = &c.cells[cell];
    let sc = cl.scenario.clone().with_seed(seed);
    let digest = sc.digest();
    if *spec == PolicySpec::Oracle {
        let rep = oracle_run(&sc, cl.trace.clone())?;
        return Ok(RunResult {
            cell,
            seed,
            policy: "oracle".into(),
            scenario_digest: digest,
            metrics: rep.metrics,
            decisions: Vec::new(),
            oracle_paths: Some(rep.copies),
        });
    }
    let mut pol = make_policy(spec, &cl.models, seed)?;
    let (metrics, decisions) = evaluate(&sc, cl.trace.clone(), pol.as_mut())?;
    Ok(RunResult { cell, seed, policy: spec.name().into(), scenario_digest: digest, metrics, decisions, oracle_paths: None })
}

/// Runs every cell x seed x policy (in parallel) and returns results in
/// campaign order.
pub fn run_campaign(c: &Campaign) -> Result<Vec<RunResult>> {
    let jobs: Vec<(usize, u64, &PolicySpec)> = c
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, cell)| c.seeds.iter().flat_map(move |&s| cell.policies.iter().map(move |p| (i, s, p))))
        .collect();
    jobs.par_iter().map(|&(i, s, p)| run_one(c, i, s, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    /// 95% Student-t half-width; NaN with fewer than two values.
    pub half_width: f64,
}

pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi { mean: f64::NAN, half_width: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanCi { mean, half_width: f64::NAN };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0").inverse_cdf(0.975);
    MeanCi { mean, half_width: t * (var / n as f64).sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub policy: String,
    pub runs: usize,
    pub delivery_rate: f64,
    pub delivery_rate_ci: f64,
    pub mean_delay_s: f64,
    pub mean_delay_s_ci: f64,
    pub mean_forwards: f64,
    pub mean_forwards_ci: f64,
}

/// Aggregates per-run rows by (scenario, policy), in first-seen order.
pub fn summarize(reports: &[&MetricsReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let k = (r.scenario.clone(), r.policy.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario, policy)| {
            let rs: Vec<&&MetricsReport> = reports.iter().filter(|r| r.scenario == scenario && r.policy == policy).collect();
            let col = |f: fn(&MetricsReport) -> f64| mean_ci(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (d, l, fw) = (col(|r| r.delivery_rate), col(|r| r.mean_delay), col(|r| r.mean_forwards));
            SummaryRow {
                scenario,
                policy,
                runs: rs.len(),
                delivery_rate: d.mean,
                delivery_rate_ci: d.half_width,
                mean_delay_s: l.mean,
                mean_delay_s_ci: l.half_width,
                mean_forwards: fw.mean,
                mean_forwards_ci: fw.half_width,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceRow {
    pub scenario: String,
    pub seed: u64,
    pub policy: String,
    pub delivered: usize,
    pub violations: usize,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_rows<T: Serialize>(path: &Path, digest: &str, seed: Option<u64>, rows: &[T], header: &[&str]) -> Result<()> {
    let mut f = create(path)?;
    write_provenance(&mut f, digest, seed)?;
    let mut w = csv::Writer::from_writer(f);
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const DECISION_HEADER: [&str; 13] = [
    "t",
    "packet",
    "holder",
    "chosen",
    "explore",
    "n_fast",
    "n_slow",
    "chose_fast",
    "dest_group_present",
    "chose_dest_group",
    "dest_neighbor",
    "n_neighbors",
    "n_dest_group",
];

pub fn write_decisions_csv<W: Write>(mut out: W, digest: &str, seed: u64, policy: &str, log: &[DecisionRecord]) -> Result<()> {
    writeln!(out, "# digest={digest} seed={seed} policy={policy}")?;
    let mut w = csv::Writer::from_writer(out);
    if log.is_empty() {
        w.write_record(DECISION_HEADER)?;
    }
    for d in log {
        w.serialize(d)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all campaign outputs under `out` and returns the summary rows.
pub fn write_campaign(c: &Campaign, results: &[RunResult], out: &Path) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(out)?;
    let reports: Vec<&MetricsReport> = results.iter().map(|r| &r.metrics).collect();
    {
        let mut f = create(&out.join("metrics.csv"))?;
        crate::sim::write_summary_csv(&mut f, &c.digest, &reports.iter().map(|r| (*r).clone()).collect::<Vec<_>>())?;
        f.flush()?;
    }
    let summary = summarize(&reports);
    write_rows(&out.join("summary.csv"), &c.digest, None, &summary, &[])?;
    for r in results {
        let stem = format!("{}_{}_s{}", c.cells[r.cell].label, r.policy, r.seed);
        let mut f = create(&out.join("packets").join(format!("{stem}.csv")))?;
        write_packets_csv(&mut f, &r.scenario_digest, &r.metrics)?;
        f.flush()?;
        if let Some(paths) = &r.oracle_paths {
            let mut f = create(&out.join("oracle").join(format!("{stem}_paths.csv")))?;
            write_oracle_paths(&mut f, &r.scenario_digest, r.seed, paths)?;
            f.flush()?;
        } else {
            let mut f = create(&out.join("decisions").join(format!("{stem}.csv")))?;
            write_decisions_csv(&mut f, &r.scenario_digest, r.seed, &r.policy, &r.decisions)?;
            f.flush()?;
        }
    }
    let mut dom = Vec::new();
    for o in results.iter().filter(|r| r.oracle_paths.is_some()) {
        for r in results.iter().filter(|r| r.cell == o.cell && r.seed == o.seed && r.oracle_paths.is_none()) {
            dom.push(DominanceRow {
                scenario: c.cells[r.cell].label.clone(),
                seed: r.seed,
                policy: r.policy.clone(),
                delivered: r.metrics.delivered,
                violations: dominance_violations(&o.metrics, &r.metrics).len(),
            });
        }
    }
    if !dom.is_empty() {
        write_rows(&out.join("dominance.csv"), &c.digest, None, &dom, &[])?;
    }
    Ok(summary)
}

/// Loads a campaign, runs it and writes every artifact.
pub fn cmd_eval(campaign: &Path, out: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let c = Campaign::load(campaign)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| c.output.clone())
        .ok_or_else(|| Error::config(campaign, "no output directory given"))?;
    let results = run_campaign(&c)?;
    write_campaign(&c, &results, &out)
}

// ----- behavior analysis -----

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Transmissions from a neighborhood holding both classes (or groups).
    Transmit,
    /// Same, leaving out decisions where the destination was adjacent.
    TransmitNoDest,
    /// Every decision in a mixed neighborhood; staying counts as neither.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorRow {
    pub policy: String,
    pub variant: Variant,
    pub fast_decisions: usize,
    pub p_fast: Option<f64>,
    pub uniform_fast: Option<f64>,
    pub group_decisions: usize,
    pub p_dest_group: Option<f64>,
    pub uniform_dest_group: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct DecisionIn {
    holder: usize,
    chosen: usize,
    n_fast: usize,
    n_slow: usize,
    chose_fast: bool,
    dest_group_present: bool,
    chose_dest_group: bool,
    dest_neighbor: bool,
    n_neighbors: usize,
    n_dest_group: usize,
}

fn rate(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Probability of picking a fast node (and a destination-group node) given a
/// mixed neighborhood, with the uniform-choice baseline from candidate counts.
pub fn analyze_behavior(policy: &str, log: &[DecisionRecord]) -> Vec<BehaviorRow> {
    let rows: Vec<DecisionIn> = log
        .iter()
        .map(|d| DecisionIn {
            holder: d.holder,
            chosen: d.chosen,
            n_fast: d.n_fast,
            n_slow: d.n_slow,
            chose_fast: d.chose_fast,
            dest_group_present: d.dest_group_present,
            chose_dest_group: d.chose_dest_group,
            dest_neighbor: d.dest_neighbor,
            n_neighbors: d.n_neighbors,
            n_dest_group: d.n_dest_group,
        })
        .collect();
    analyze_rows(policy, &rows)
}

fn analyze_rows(policy: &str, log: &[DecisionIn]) -> Vec<BehaviorRow> {
    [Variant::Transmit, Variant::TransmitNoDest, Variant::All]
        .into_iter()
        .map(|v| {
            let keep = |d: &&DecisionIn| match v {
                Variant::Transmit => d.chosen != d.holder,
                Variant::TransmitNoDest => d.chosen != d.holder && !d.dest_neighbor,
                Variant::All => true,
            };
            let stay_slot = if v == Variant::All { 1.0 } else { 0.0 };
            let fast: Vec<&DecisionIn> = log.iter().filter(keep).filter(|d| d.n_fast > 0 && d.n_slow > 0).collect();
            let uniform_fast: Vec<f64> =
                fast.iter().map(|d| d.n_fast as f64 / (d.n_neighbors as f64 + stay_slot)).collect();
            let group: Vec<&DecisionIn> = log.iter().filter(keep).filter(|d| d.dest_group_present).collect();
            let uniform_group: Vec<f64> =
                group.iter().map(|d| d.n_dest_group as f64 / (d.n_neighbors as f64 + stay_slot)).collect();
            let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
            BehaviorRow {
                policy: policy.to_string(),
                variant: v,
                fast_decisions: fast.len(),
                p_fast: rate(fast.iter().filter(|d| d.chose_fast).count(), fast.len()),
                uniform_fast: mean(&uniform_fast),
                group_decisions: group.len(),
                p_dest_group: rate(group.iter().filter(|d| d.chose_dest_group).count(), group.len()),
                uniform_dest_group: mean(&uniform_group),
            }
        })
        .collect()
}

/// Reads decision-log CSVs, groups them by the `policy=` provenance key (or
/// the file stem) and writes `behavior.csv`. Returns the rows; all-empty
/// results are marked with a `# no qualifying decisions` line.
pub fn cmd_analyze(logs: &[PathBuf], out: &Path) -> Result<Vec<BehaviorRow>> {
    let mut by_policy: BTreeMap<String, Vec<DecisionIn>> = BTreeMap::new();
    for path in logs {
        let mut text = String::new();
        fs::File::open(path).map_err(|e| Error::config(path, e.to_string()))?.read_to_string(&mut text)?;
        let policy = text
            .lines()
            .next()
            .filter(|l| l.starts_with('#'))
            .and_then(|l| l.split_whitespace().find_map(|kv| kv.strip_prefix("policy=")))
            .map(str::to_string)
            .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let entry = by_policy.entry(policy).or_default();
        for rec in rdr.deserialize() {
            let d: DecisionIn = rec.map_err(|e| Error::config(path, e.to_string()))?;
            entry.push(d);
        }
    }
    let rows: Vec<BehaviorRow> = by_policy.iter().flat_map(|(p, log)| analyze_rows(p, log)).collect();
    let mut f = create(out)?;
    let empty = rows.iter().all(|r| r.fast_decisions == 0 && r.group_decisions == 0);
    if empty {
        writeln!(f, "# no qualifying decisions")?;
    }
    let mut w = csv::Writer::from_writer(f);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

// ----- training commands -----

fn plan_digest(plan: &ClPlan) -> String {
    let mut text = String::new();
    for e in &plan.scenarios {
        text.push_str(&e.scenario.to_toml());
    }
    text.push_str(&format!("{:?}", plan.params));
    digest_of(text.as_bytes())
}

/// Continual learning over a plan. Writes `model.txt`, `loss.csv`,
/// `schema.toml` and one experience log per scenario under `out`.
pub fn cmd_train(plan: &ClPlan, out: &Path) -> Result<QNetwork> {
    let first = plan.scenarios.first().ok_or_else(|| Error::InvalidConfig("plan has no scenarios".into()))?;
    let schema = FeatureSchema::new(first.scenario.features.clone());
    let mut tr = Trainer::fresh(schema.clone(), plan.params.clone())?;
    for (i, e) in plan.scenarios.iter().enumerate() {
        log::info!("scenario {}/{}: {}", i + 1, plan.scenarios.len(), e.scenario.sim.scenario_id);
        let sc = e.scenario.clone().with_seed(plan.params.seed.wrapping_add(i as u64));
        tr.train_scenario(&sc, e.load_trace()?)?;
    }
    fs::create_dir_all(out)?;
    let digest = plan_digest(plan);
    for ds in tr.store.datasets() {
        let mut f = create(&out.join("datasets").join(format!("{}.exp", ds.scenario)))?;
        write_experience_log(&mut f, &tr.store.schema_hash, ds)?;
        f.flush()?;
    }
    write_loss(&out.join("loss.csv"), &digest, plan.params.seed, &tr.log)?;
    fs::write(out.join("schema.toml"), schema.dump())?;
    let mut net = tr.into_net();
    net.set_meta("digest", &digest);
    net.set_meta("seed", plan.params.seed);
    net.set_meta("scenarios", plan.scenarios.len());
    net.save(&out.join("model.txt"))?;
    Ok(net)
}

fn write_loss(path: &Path, digest: &str, seed: u64, log: &[RoundLog]) -> Result<()> {
    let mut f = create(path)?;
    write_provenance(&mut f, digest, Some(seed))?;
    write_loss_csv(&mut f, log)?;
    f.flush()?;
    Ok(())
}

/// Fine-tunes a saved model and writes the result to `out_model`, with the
/// round losses next to it.
pub fn cmd_finetune(
    base_path: &Path,
    sc: &Scenario,
    trace: Option<TraceTable>,
    budget: u64,
    round: u64,
    params: &TrainParams,
    out_model: &Path,
) -> Result<(QNetwork, Vec<RoundLog>)> {
    let schema = FeatureSchema::new(sc.features.clone());
    let base = QNetwork::load(base_path, &schema)?;
    let mut sc = sc.clone().with_seed(params.seed);
    if sc.sim.duration < budget {
        let cd = sc.sim.cooldown.min(budget.saturating_sub(1));
        sc = sc.with_duration(budget.max(1), cd);
    }
    let (mut net, log) = fine_tune(&base, &sc, trace, budget, round, params)?;
    let digest = sc.digest();
    net.set_meta("digest", &digest);
    net.set_meta("seed", params.seed);
    net.set_meta("finetune_budget", budget);
    net.save(out_model)?;
    write_loss(&out_model.with_extension("loss.csv"), &digest, params.seed, &log)?;
    Ok((net, log))
}

/// Writes positions for t = 0..=steps as a trace CSV, enough to drive a
/// `steps`-long run.
pub fn cmd_export_trace(sc: &Scenario, steps: u64, out: &Path) -> Result<usize> {
    let samples = export_trajectory(sc, steps + 1)?;
    let mut f = create(out)?;
    write_provenance(&mut f, &sc.digest(), Some(sc.sim.rng_seed))?;
    write_trace(&mut f, samples.iter().cloned())?;
    let n = samples.len();
    f.flush()?;
    Ok(n)
}
