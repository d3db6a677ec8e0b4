//! Forwarding policies: the interface the engine calls each timestep, the
//! learned epsilon-greedy policy, rewards and experience records.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{NodeState, PeerTables, ACTION_DIM, FEATURE_DIM, STATE_DIM};
use crate::qnet::QNetwork;
use crate::sim::Packet;

pub const POLICY_STREAM: u64 = 3;

pub const R_STAY: f64 = -1.0;
pub const R_TRANSMIT: f64 = -2.0;
pub const R_DELIVERY: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Stay,
    Transmit,
    Delivery,
    Drop,
}

/// Reward for a transition. Dropping is charged as transmitting forever.
pub fn reward_for(tr: Transition, gamma: f64) -> f64 {
    match tr {
        Transition::Stay => R_STAY,
        Transition::Transmit => R_TRANSMIT,
        Transition::Delivery => R_DELIVERY,
        Transition::Drop => R_TRANSMIT / (1.0 - gamma),
    }
}

/// What the engine shows a policy during the decision phase.
pub struct StepView<'a> {
    pub t: u64,
    pub nodes: &'a [NodeState],
    pub neighbors: &'a [Vec<usize>],
    /// Tables as they were before this step's exchange; `None` for nodes
    /// that had no neighbors (their tables did not change).
    pub before_exchange: &'a [Option<PeerTables>],
}

impl StepView<'_> {
    pub fn tables_before(&self, node: usize) -> &PeerTables {
        self.before_exchange.get(node).and_then(|t| t.as_ref()).unwrap_or(&self.nodes[node].peers)
    }
}

/// One packet waiting for a decision.
pub struct Query<'a> {
    pub packet: &'a Packet,
    pub holder: usize,
    /// `Nbr(holder) ∪ {holder}`, ascending.
    pub candidates: &'a [usize],
    /// `candidates.len() x FEATURE_DIM` input rows, when features were built.
    pub rows: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub chosen: usize,
    pub explore: bool,
    pub q_values: Vec<f64>,
}

impl Choice {
    pub fn plain(chosen: usize) -> Self {
        Choice { chosen, explore: false, q_values: Vec::new() }
    }
}

pub trait ForwardingPolicy {
    fn name(&self) -> &str;

    /// Whether the engine must build feature rows for each query.
    fn needs_features(&self) -> bool {
        false
    }

    /// One choice per query, in query order.
    fn decide(&mut self, view: &StepView, queries: &[Query]) -> Result<Vec<Choice>>;

    /// Called once when a packet leaves the network.
    fn packet_finished(&mut self, _packet: u64) {}
}

/// Index of the first maximum; candidates are sorted so this is the lowest id.
pub fn argmax_lowest(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in q.iter().enumerate().skip(1) {
        if x > q[best] {
            best = i;
        }
    }
    best
}

/// Q-network policy, epsilon-greedy per decision.
pub struct DrlPolicy {
    pub net: QNetwork,
    pub epsilon: f64,
    rng: ChaCha8Rng,
    label: String,
}

impl DrlPolicy {
    pub fn new(net: QNetwork, epsilon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POLICY_STREAM);
        DrlPolicy { net, epsilon, rng, label: "drl".into() }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn greedy(net: QNetwork) -> Self {
        Self::new(net, 0.0, 0)
    }
}

impl ForwardingPolicy for DrlPolicy {
    fn name(&self) -> &str {
        &self.label
    }

    fn needs_features(&self) -> bool {
        true
    }

    fn decide(&mut self, _view: &StepView, queries: &[Query]) -> Result<Vec<Choice>> {
        let total: usize = queries.iter().map(|q| q.candidates.len()).sum();
        let mut states = Vec::with_capacity(queries.len() * STATE_DIM);
        let mut actions = Vec::with_capacity(total * ACTION_DIM);
        let mut owner = Vec::with_capacity(total);
        for (i, q) in queries.iter().enumerate() {
            let rows = q.rows.ok_or(Error::MissingCandidates)?;
            if rows.len() != q.candidates.len() * FEATURE_DIM {
                return Err(Error::Dimension { expected: q.candidates.len() * FEATURE_DIM, got: rows.len() });
            }
            // Every row of a query repeats the packet's state.
            states.extend_from_slice(&rows[..STATE_DIM.min(rows.len())]);
            for r in rows.chunks(FEATURE_DIM) {
                actions.extend_from_slice(&r[STATE_DIM..]);
                owner.push(i);
            }
        }
        let values = if total == 0 {
            Vec::new()
        } else {
            let s = ArrayView2::from_shape((queries.len(), STATE_DIM), &states).expect("state shape");
            let a = ArrayView2::from_shape((total, ACTION_DIM), &actions).expect("action shape");
            self.net.forward_grouped(s, a, &owner).to_vec()
        };
        let mut out = Vec::with_capacity(queries.len());
        let mut off = 0;
        for q in queries {
            let k = q.candidates.len();
            let qv = values[off..off + k].to_vec();
            off += k;
            let explore = self.epsilon > 0.0 && self.rng.random::<f64>() < self.epsilon;
            let idx = if explore { self.rng.random_range(0..k) } else { argmax_lowest(&qv) };
            out.push(Choice { chosen: q.candidates[idx], explore, q_values: qv });
        }
        Ok(out)
    }
}

/// A completed transition, with the next decision's candidates stored as the
/// shared next state plus one action block per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub next_state: Vec<f64>,
    /// `k x ACTION_DIM`, empty iff terminal.
    pub next_actions: Vec<f64>,
    pub t: u64,
}

impl Experience {
    pub fn input_row(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(FEATURE_DIM);
        r.extend_from_slice(&self.state);
        r.extend_from_slice(&self.action);
        r
    }

    pub fn candidate_count(&self) -> usize {
        self.next_actions.len() / ACTION_DIM
    }
}

/// Regression targets `r` (terminal) or `r + gamma * max_a' Q(s', a')`.
pub fn bellman_targets(net: &QNetwork, exps: &[&Experience], gamma: f64) -> Result<Vec<f64>> {
    const CHUNK: usize = 4096;
    let mut targets = vec![0.0; exps.len()];
    let mut chunk = NextChunk::default();
    for (i, e) in exps.iter().enumerate() {
        targets[i] = e.reward;
        if e.terminal {
            continue;
        }
        let k = e.candidate_count();
        if k == 0 || e.next_state.len() != STATE_DIM || e.next_actions.len() != k * ACTION_DIM {
            return Err(Error::MissingCandidates);
        }
        let slot = chunk.pending.len();
        chunk.states.extend_from_slice(&e.next_state);
        chunk.actions.extend_from_slice(&e.next_actions);
        chunk.owner.extend(std::iter::repeat_n(slot, k));
        chunk.pending.push((i, k));
        if chunk.owner.len() >= CHUNK {
            chunk.flush(net, gamma, &mut targets);
        }
    }
    chunk.flush(net, gamma, &mut targets);
    Ok(targets)
}

#[derive(Default)]
struct NextChunk {
    states: Vec<f64>,
    actions: Vec<f64>,
    owner: Vec<usize>,
    /// (experience index, candidate count)
    pending: Vec<(usize, usize)>,
}

impl NextChunk {
    fn flush(&mut self, net: &QNetwork, gamma: f64, targets: &mut [f64]) {
        if self.pending.is_empty() {
            return;
        }
        let s = ArrayView2::from_shape((self.pending.len(), STATE_DIM), &self.states).expect("state shape");
        let a = ArrayView2::from_shape((self.owner.len(), ACTION_DIM), &self.actions).expect("action shape");
        let q = net.forward_grouped(s, a, &self.owner);
        let mut off = 0;
        for &(i, k) in &self.pending {
            let best = q.slice(ndarray::s![off..off + k]).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            targets[i] += gamma * best;
            off += k;
        }
        self.states.clear();
        self.actions.clear();
        self.owner.clear();
        self.pending.clear();
    }
}
