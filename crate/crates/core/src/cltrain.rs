//! Round-based training within a scenario, continual learning across a
//! scenario sequence with balanced replay, and fine-tuning.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{presets, Scenario};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, ACTION_DIM, FEATURE_DIM, STATE_DIM};
use crate::mobility::TraceTable;
use crate::policy::{bellman_targets, DrlPolicy, Experience};
use crate::qnet::{make_batch, Hyper, LossTrace, QNetwork, TrainBatch};
use crate::sim::{RunOptions, World};

pub const TRAINER_STREAM: u64 = 4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub scenario: String,
    pub experiences: Vec<Experience>,
}

impl Dataset {
    pub fn new(scenario: &str) -> Self {
        Dataset { scenario: scenario.to_string(), experiences: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }
}

/// Frozen datasets of earlier scenarios plus the one being collected.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStore {
    pub schema_hash: String,
    pub frozen: Vec<Dataset>,
    pub current: Dataset,
}

impl ReplayStore {
    pub fn new(schema_hash: &str, scenario: &str) -> Self {
        ReplayStore { schema_hash: schema_hash.to_string(), frozen: Vec::new(), current: Dataset::new(scenario) }
    }

    /// Freezes the current dataset and opens a new one.
    pub fn freeze(&mut self, next_scenario: &str) {
        let done = std::mem::replace(&mut self.current, Dataset::new(next_scenario));
        self.frozen.push(done);
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.frozen.iter().chain(std::iter::once(&self.current))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.datasets().map(|d| d.len()).collect()
    }
}

/// Per-dataset sample size: the largest `alpha * |D_i|` (rounded up), capped
/// at the size of the last (current) dataset. `None` when the current dataset
/// is empty.
pub fn sample_size(sizes: &[usize], alpha: f64) -> Option<usize> {
    let &current = sizes.last()?;
    if current == 0 {
        return None;
    }
    let n = sizes
        .iter()
        .map(|&s| {
            let x = alpha * s as f64;
            (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize
        })
        .max()
        .unwrap_or(0);
    Some(n.min(current).max(1))
}

/// Indices drawn from each dataset, `n` apiece. Datasets with at least `n`
/// elements are sampled without replacement, smaller ones with replacement.
pub fn balanced_sample<R: Rng>(sizes: &[usize], alpha: f64, rng: &mut R) -> Option<Vec<Vec<usize>>> {
    let n = sample_size(sizes, alpha)?;
    Some(
        sizes
            .iter()
            .map(|&len| {
                if len >= n {
                    index::sample(rng, len, n).into_vec()
                } else if len == 0 {
                    Vec::new()
                } else {
                    (0..n).map(|_| rng.random_range(0..len)).collect()
                }
            })
            .collect(),
    )
}

/// Splits every sample into batches of `b` (the last may be short) and
/// shuffles all batches together. Each batch carries its dataset index.
pub fn interleave_batches<T, R: Rng>(samples: Vec<Vec<T>>, b: usize, rng: &mut R) -> Vec<(usize, Vec<T>)> {
    assert!(b > 0, "batch size must be positive");
    let mut out = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        let mut it = s.into_iter().peekable();
        while it.peek().is_some() {
            out.push((i, it.by_ref().take(b).collect()));
        }
    }
    out.shuffle(rng);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub alpha: f64,
    pub batch: usize,
    pub round: u64,
    pub epsilon: f64,
    pub seed: u64,
    #[serde(default)]
    pub hyper: Hyper,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { alpha: 0.1, batch: 32, round: 1000, epsilon: 0.1, seed: 1, hyper: Hyper::default() }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.batch == 0 || self.round == 0 {
            return Err(Error::InvalidConfig("batch and round must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig("epsilon must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub scenario: String,
    pub round: u64,
    pub t: u64,
    /// Per-dataset sample size; 0 when the round was skipped.
    pub n: usize,
    pub datasets: usize,
    pub batches: usize,
    pub loss: LossTrace,
}

impl RoundLog {
    pub fn skipped(&self) -> bool {
        self.n == 0
    }
}

pub struct Trainer {
    pub policy: DrlPolicy,
    pub store: ReplayStore,
    pub params: TrainParams,
    pub log: Vec<RoundLog>,
    /// Keep earlier datasets for replay; off gives plain sequential training.
    pub replay: bool,
    rng: ChaCha8Rng,
    schema: FeatureSchema,
}

impl Trainer {
    pub fn new(net: QNetwork, schema: FeatureSchema, params: TrainParams) -> Result<Self> {
        params.validate()?;
        net.check_schema(&schema)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(TRAINER_STREAM);
        let mut net = net;
        net.hyper.batch = params.batch;
        Ok(Trainer {
            policy: DrlPolicy::new(net, params.epsilon, params.seed),
            store: ReplayStore::new(&schema.hash(), ""),
            params,
            log: Vec::new(),
            replay: true,
            rng,
            schema,
        })
    }

    /// Fresh network for the given schema.
    pub fn fresh(schema: FeatureSchema, params: TrainParams) -> Result<Self> {
        let net = QNetwork::for_schema(&schema, params.hyper.clone(), params.seed);
        Self::new(net, schema, params)
    }

    pub fn net(&self) -> &QNetwork {
        &self.policy.net
    }

    pub fn into_net(self) -> QNetwork {
        self.policy.net
    }

    /// One training pass over a balanced replay sample. Skipped (n = 0) when
    /// the current dataset is empty.
    pub fn train_round(&mut self, round: u64, t: u64) -> Result<RoundLog> {
        let datasets: Vec<&Dataset> = if self.replay {
            self.store.datasets().collect()
        } else {
            vec![&self.store.current]
        };
        let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
        let mut log = RoundLog {
            scenario: self.store.current.scenario.clone(),
            round,
            t,
            n: 0,
            datasets: sizes.len(),
            batches: 0,
            loss: LossTrace::default(),
        };
        let Some(picks) = balanced_sample(&sizes, self.params.alpha, &mut self.rng) else {
            self.log.push(log.clone());
            return Ok(log);
        };
        log.n = picks[0].len().max(picks.last().map_or(0, |p| p.len()));
        let snapshot = self.policy.net.clone();
        let gamma = snapshot.hyper.gamma;
        let mut samples: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(picks.len());
        for (d, idx) in datasets.iter().zip(&picks) {
            let exps: Vec<&Experience> = idx.iter().map(|&j| &d.experiences[j]).collect();
            let targets = bellman_targets(&snapshot, &exps, gamma)?;
            samples.push(exps.iter().zip(targets).map(|(e, y)| (e.input_row(), y)).collect());
        }
        let batches: Vec<TrainBatch> = interleave_batches(samples, self.params.batch, &mut self.rng)
            .into_iter()
            .map(|(_, items)| {
                let mut rows = Vec::with_capacity(items.len() * FEATURE_DIM);
                let mut ys = Vec::with_capacity(items.len());
                for (r, y) in items {
                    rows.extend_from_slice(&r);
                    ys.push(y);
                }
                make_batch(&rows, FEATURE_DIM, ys)
            })
            .collect();
        log.batches = batches.len();
        log.loss = self.policy.net.train_epochs(&batches)?;
        self.log.push(log.clone());
        Ok(log)
    }

    /// Simulates `steps` timesteps of `world` with the exploring policy,
    /// training at every round boundary. Returns the rounds run.
    fn drive(&mut self, world: &mut World, steps: u64, round_len: u64) -> Result<u64> {
        let start = world.t;
        let mut rounds = 0;
        while world.t - start < steps {
            world.step(&mut self.policy)?;
            let elapsed = world.t - start;
            if elapsed % round_len == 0 || elapsed == steps {
                self.store.current.experiences.extend(world.take_experiences());
                rounds += 1;
                self.train_round(rounds, world.t)?;
            }
        }
        Ok(rounds)
    }

    fn world(&self, sc: &Scenario, trace: Option<TraceTable>) -> Result<World> {
        let schema = FeatureSchema::new(sc.features.clone());
        if schema.hash() != self.schema.hash() {
            return Err(Error::SchemaMismatch { expected: self.schema.hash(), found: schema.hash() });
        }
        let opts = RunOptions { record_experiences: true, log_decisions: false };
        let mut w = match trace {
            Some(t) => World::with_trace(sc, t, opts)?,
            None => World::new(sc, opts)?,
        };
        w.set_gamma(self.policy.net.hyper.gamma);
        Ok(w)
    }

    /// Trains through one scenario and freezes its dataset. Returns the
    /// number of rounds.
    pub fn train_scenario(&mut self, sc: &Scenario, trace: Option<TraceTable>) -> Result<u64> {
        if sc.sim.duration % self.params.round != 0 {
            return Err(Error::InvalidConfig(format!(
                "round {} does not divide duration {}",
                self.params.round, sc.sim.duration
            )));
        }
        if !self.store.current.is_empty() || !self.store.current.scenario.is_empty() {
            let id = sc.sim.scenario_id.clone();
            if self.replay {
                self.store.freeze(&id);
            } else {
                self.store.current = Dataset::new(&id);
            }
        } else {
            self.store.current.scenario = sc.sim.scenario_id.clone();
        }
        let mut world = self.world(sc, trace)?;
        let rounds = self.drive(&mut world, sc.sim.duration, self.params.round)?;
        log::info!(
            "scenario {} done: {} rounds, {} experiences",
            sc.sim.scenario_id,
            rounds,
            self.store.current.len()
        );
        Ok(rounds)
    }

    /// Runs every scenario of a plan in order.
    pub fn run_plan(&mut self, plan: &ClPlan) -> Result<()> {
        for entry in &plan.scenarios {
            let trace = entry.load_trace()?;
            self.train_scenario(&entry.scenario, trace)?;
        }
        Ok(())
    }
}

/// Fine-tunes `base` on the first `budget` steps of a scenario, training
/// every `round_len` steps on the fine-tuning data alone.
pub fn fine_tune(
    base: &QNetwork,
    sc: &Scenario,
    trace: Option<TraceTable>,
    budget: u64,
    round_len: u64,
    params: &TrainParams,
) -> Result<(QNetwork, Vec<RoundLog>)> {
    let schema = FeatureSchema::new(sc.features.clone());
    base.check_schema(&schema)?;
    if budget == 0 {
        return Ok((base.clone(), Vec::new()));
    }
    if budget > sc.sim.duration {
        return Err(Error::InvalidConfig(format!("budget {budget} exceeds scenario duration {}", sc.sim.duration)));
    }
    let params = TrainParams { round: round_len, ..params.clone() };
    let mut tr = Trainer::new(base.clone(), schema, params)?;
    tr.store.current.scenario = sc.sim.scenario_id.clone();
    let mut world = tr.world(sc, trace)?;
    tr.drive(&mut world, budget, round_len)?;
    let log = std::mem::take(&mut tr.log);
    Ok((tr.into_net(), log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub scenario: Scenario,
    pub trace: Option<PathBuf>,
}

impl PlanEntry {
    pub fn load_trace(&self) -> Result<Option<TraceTable>> {
        self.trace.as_deref().map(crate::mobility::load_trace).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClPlan {
    pub scenarios: Vec<PlanEntry>,
    pub params: TrainParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_batch")]
    batch: usize,
    #[serde(default = "default_round")]
    round: u64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    scenario: Vec<PlanScenario>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanScenario {
    config: Option<PathBuf>,
    preset: Option<String>,
    range: Option<f64>,
    duration: Option<u64>,
    cooldown: Option<u64>,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_batch() -> usize {
    32
}
fn default_round() -> u64 {
    1000
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    1
}

/// Resolves a scenario reference: a config path or a small-family preset.
pub fn resolve_scenario(
    config: Option<&Path>,
    preset: Option<&str>,
    range: Option<f64>,
    base_dir: Option<&Path>,
) -> Result<(Scenario, Option<PathBuf>)> {
    let sc = match (config, preset) {
        (Some(p), None) => {
            let p = base_dir.map_or_else(|| p.to_path_buf(), |b| b.join(p));
            Scenario::load(&p)?
        }
        (None, Some(name)) => {
            let r = range.ok_or_else(|| Error::InvalidConfig(format!("preset {name} needs a range")))?;
            presets::small(name, r)
                .or_else(|| name.strip_prefix("large-").and_then(|n| presets::large(n, r)))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown preset '{name}'")))?
        }
        _ => return Err(Error::InvalidConfig("scenario needs exactly one of 'config' or 'preset'".into())),
    };
    let trace = match &sc.mobility.model {
        crate::config::MobilityModel::Trace { path } => Some(path.clone()),
        _ => None,
    };
    Ok((sc, trace))
}

impl ClPlan {
    /// Dense groups at r = 50 m, then slow random waypoint at r = 50 m, then
    /// the half-fast mix at r = 20 m.
    pub fn default_plan() -> Self {
        let entries = [("rpgm-1group", 50.0), ("rwp-3", 50.0), ("rwp-mix2", 20.0)];
        ClPlan {
            scenarios: entries
                .iter()
                .map(|&(n, r)| PlanEntry { scenario: presets::small(n, r).expect("preset"), trace: None })
                .collect(),
            params: TrainParams::default(),
        }
    }

    pub fn with_duration(mut self, duration: u64, cooldown: u64) -> Self {
        for e in &mut self.scenarios {
            e.scenario = e.scenario.clone().with_duration(duration, cooldown);
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path, e.to_string()))?;
        Self::from_toml(&text, path.parent()).map_err(|e| match e {
            Error::Config { msg, .. } | Error::InvalidConfig(msg) => Error::config(path, msg),
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let f: PlanFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let params = TrainParams {
            alpha: f.alpha,
            batch: f.batch,
            round: f.round,
            epsilon: f.epsilon,
            seed: f.seed,
            hyper: Hyper { batch: f.batch, ..Hyper::default() },
        };
        params.validate()?;
        let plan = if f.scenario.is_empty() {
            ClPlan { params, ..ClPlan::default_plan() }
        } else {
            let mut scenarios = Vec::new();
            for s in f.scenario {
                let (mut sc, trace) = resolve_scenario(s.config.as_deref(), s.preset.as_deref(), s.range, base_dir)?;
                if let Some(d) = s.duration {
                    let c = s.cooldown.unwrap_or(sc.sim.cooldown.min(d.saturating_sub(1)));
                    sc = sc.with_duration(d, c);
                }
                sc.validate()?;
                scenarios.push(PlanEntry { scenario: sc, trace });
            }
            ClPlan { scenarios, params }
        };
        for (i, e) in plan.scenarios.iter().enumerate() {
            if e.scenario.sim.duration % plan.params.round != 0 {
                return Err(Error::InvalidConfig(format!(
                    "scenario {i}: round {} does not divide duration {}",
                    plan.params.round, e.scenario.sim.duration
                )));
            }
        }
        Ok(plan)
    }
}

// ----- experience logs -----

const LOG_MAGIC: &str = "# drlfwd-experiences";

/// Writes a dataset as delimited text: a header with the schema hash, then
/// one row per experience:
/// `t,reward,terminal,k,state(49),action(14),next_state(49|0),next_actions(k*14)`.
pub fn write_experience_log<W: Write>(mut out: W, schema_hash: &str, ds: &Dataset) -> Result<()> {
    writeln!(out, "{LOG_MAGIC} schema={schema_hash} scenario={}", ds.scenario)?;
    let mut line = String::new();
    for e in &ds.experiences {
        use std::fmt::Write as _;
        line.clear();
        write!(line, "{},{},{},{}", e.t, e.reward, u8::from(e.terminal), e.candidate_count()).unwrap();
        for x in e.state.iter().chain(&e.action).chain(&e.next_state).chain(&e.next_actions) {
            write!(line, ",{x}").unwrap();
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn read_experience_log<R: BufRead>(input: R, expected_schema: &str) -> Result<Dataset> {
    let mut lines = input.lines();
    let bad = |line: usize, msg: &str| Error::TraceParse { line, msg: msg.to_string() };
    let head = lines.next().ok_or_else(|| bad(1, "empty experience log"))??;
    let rest = head.strip_prefix(LOG_MAGIC).ok_or_else(|| bad(1, "not an experience log"))?;
    let mut schema = "";
    let mut scenario = "";
    for kv in rest.split_whitespace() {
        if let Some(v) = kv.strip_prefix("schema=") {
            schema = v;
        } else if let Some(v) = kv.strip_prefix("scenario=") {
            scenario = v;
        }
    }
    if schema != expected_schema {
        return Err(Error::SchemaMismatch { expected: expected_schema.to_string(), found: schema.to_string() });
    }
    let mut ds = Dataset::new(scenario);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(bad(ln, "too few fields"));
        }
        let t: u64 = f[0].parse().map_err(|_| bad(ln, "bad t"))?;
        let reward: f64 = f[1].parse().map_err(|_| bad(ln, "bad reward"))?;
        let terminal = f[2] == "1";
        let k: usize = f[3].parse().map_err(|_| bad(ln, "bad candidate count"))?;
        let ns = if terminal { 0 } else { STATE_DIM };
        let want = 4 + STATE_DIM + ACTION_DIM + ns + k * ACTION_DIM;
        if f.len() != want {
            return Err(bad(ln, &format!("expected {want} fields, found {}", f.len())));
        }
        let vals: Vec<f64> = f[4..].iter().map(|v| v.parse().map_err(|_| bad(ln, "bad number"))).collect::<Result<_>>()?;
        let (state, rest) = vals.split_at(STATE_DIM);
        let (action, rest) = rest.split_at(ACTION_DIM);
        let (next_state, next_actions) = rest.split_at(ns);
        ds.experiences.push(Experience {
            state: state.to_vec(),
            action: action.to_vec(),
            reward,
            terminal,
            next_state: next_state.to_vec(),
            next_actions: next_actions.to_vec(),
            t,
        });
    }
    Ok(ds)
}

/// `scenario,round,t,n,batches,epoch,train_loss,val_loss`.
pub fn write_loss_csv<W: Write>(out: W, logs: &[RoundLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "round", "t", "n", "datasets", "batches", "epoch", "train_loss", "val_loss"])?;
    for l in logs {
        let head = [
            l.scenario.clone(),
            l.round.to_string(),
            l.t.to_string(),
            l.n.to_string(),
            l.datasets.to_string(),
            l.batches.to_string(),
        ];
        if l.loss.epochs.is_empty() {
            w.write_record(head.iter().cloned().chain(["".into(), "".into(), "".into()]))?;
        }
        for (i, e) in l.loss.epochs.iter().enumerate() {
            let val = e.val.map(|v| v.to_string()).unwrap_or_default();
            w.write_record(head.iter().cloned().chain([i.to_string(), e.train.to_string(), val]))?;
        }
    }
    w.flush()?;
    Ok(())
}
