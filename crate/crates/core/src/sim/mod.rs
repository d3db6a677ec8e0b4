//! Discrete-time engine: mobility, connectivity, table exchange, traffic,
//! per-packet decisions, TTL handling and metric collection.

mod metrics;
mod packet;
mod traffic;

use std::collections::VecDeque;

use serde::Serialize;

pub use metrics::{write_packets_csv, write_provenance, write_summary_csv, MetricsReport, PacketRecord};
pub use packet::{Packet, PacketStatus};
pub use traffic::{Birth, Flow, Traffic, TRAFFIC_STREAM};

use crate::config::{Scenario, SpeedClass};
use crate::error::{Error, Result};
use crate::features::{FeatureContext, FeatureSchema, NodeState, PeerTables, Scales, ACTION_DIM, FEATURE_DIM, STATE_DIM};
use crate::geom::Point;
use crate::mobility::{Mobility, TraceTable};
use crate::policy::{reward_for, Choice, Experience, ForwardingPolicy, Query, StepView, Transition};

/// Sorted neighbor lists for range `r` (inclusive).
pub fn build_neighbors(pos: &[Point], r: f64) -> Vec<Vec<usize>> {
    let n = pos.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if pos[i].dist(&pos[j]) <= r {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    out
}

/// `Nbr(v) ∪ {v}` in ascending order.
pub fn candidates_of(v: usize, nbrs: &[usize]) -> Vec<usize> {
    let mut c = Vec::with_capacity(nbrs.len() + 1);
    let at = nbrs.partition_point(|&u| u < v);
    c.extend_from_slice(&nbrs[..at]);
    c.push(v);
    c.extend_from_slice(&nbrs[at..]);
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_experiences: bool,
    pub log_decisions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub t: u64,
    pub packet: u64,
    pub holder: usize,
    pub chosen: usize,
    pub explore: bool,
    pub n_fast: usize,
    pub n_slow: usize,
    pub chose_fast: bool,
    pub dest_group_present: bool,
    pub chose_dest_group: bool,
    pub dest_neighbor: bool,
    pub n_neighbors: usize,
    pub n_dest_group: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub generated: usize,
    pub delivered: usize,
    pub dropped_ttl: usize,
    pub dropped_buffer: usize,
}

impl Counters {
    pub fn in_flight(&self) -> usize {
        self.generated - self.delivered - self.dropped_ttl - self.dropped_buffer
    }
}

struct Pending {
    state: Vec<f64>,
    action: Vec<f64>,
    reward: f64,
    t: u64,
}

pub struct World {
    pub sc: Scenario,
    pub t: u64,
    mobility: Mobility,
    traffic: Traffic,
    pub nodes: Vec<NodeState>,
    pub neighbors: Vec<Vec<usize>>,
    /// Packet indices per node, FIFO.
    pub queues: Vec<VecDeque<usize>>,
    pub packets: Vec<Packet>,
    pub counters: Counters,
    classes: Vec<Option<SpeedClass>>,
    groups: Vec<Option<usize>>,
    scales: Scales,
    gamma: f64,
    opts: RunOptions,
    pending: Vec<Option<Pending>>,
    scheduled: Vec<(usize, usize)>,
    before_exchange: Vec<Option<PeerTables>>,
    experiences: Vec<Experience>,
    decisions: Vec<DecisionRecord>,
}

impl World {
    pub fn new(sc: &Scenario, opts: RunOptions) -> Result<Self> {
        let mobility = Mobility::new(sc)?;
        Self::with_mobility(sc, mobility, opts)
    }

    pub fn with_trace(sc: &Scenario, trace: TraceTable, opts: RunOptions) -> Result<Self> {
        let mobility = Mobility::with_trace(sc, Some(trace))?;
        Self::with_mobility(sc, mobility, opts)
    }

    pub fn with_mobility(sc: &Scenario, mobility: Mobility, opts: RunOptions) -> Result<Self> {
        sc.validate()?;
        let n = sc.sim.node_count;
        let pos = mobility.positions().to_vec();
        let nodes = (0..n).map(|i| NodeState::new(i, n, pos[i], &sc.features)).collect();
        let neighbors = build_neighbors(&pos, sc.sim.tx_range);
        Ok(World {
            t: mobility.time(),
            traffic: Traffic::new(&sc.sim),
            mobility,
            nodes,
            neighbors,
            queues: vec![VecDeque::new(); n],
            packets: Vec::new(),
            counters: Counters::default(),
            classes: (0..n).map(|i| sc.mobility.class_of(i)).collect(),
            groups: (0..n).map(|i| sc.mobility.group_of(i, n)).collect(),
            scales: Scales {
                ttl: sc.sim.initial_ttl as f64,
                buffer: sc.sim.buffer_cap as f64,
                nodes: n as f64,
            },
            gamma: crate::qnet::Hyper::default().gamma,
            opts,
            pending: Vec::new(),
            scheduled: Vec::new(),
            before_exchange: Vec::new(),
            experiences: Vec::new(),
            decisions: Vec::new(),
            sc: sc.clone(),
        })
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.sc.features.clone())
    }

    pub fn finished(&self) -> bool {
        self.t >= self.sc.sim.duration
    }

    pub fn positions(&self) -> &[Point] {
        self.mobility.positions()
    }

    /// Drains completed experiences.
    pub fn take_experiences(&mut self) -> Vec<Experience> {
        std::mem::take(&mut self.experiences)
    }

    pub fn take_decisions(&mut self) -> Vec<DecisionRecord> {
        std::mem::take(&mut self.decisions)
    }

    pub fn in_flight(&self) -> usize {
        self.counters.in_flight()
    }

    /// Advances one timestep.
    pub fn step(&mut self, policy: &mut dyn ForwardingPolicy) -> Result<()> {
        self.t += 1;
        let t = self.t;
        self.mobility.advance();
        let pos = self.mobility.positions().to_vec();
        self.neighbors = build_neighbors(&pos, self.sc.sim.tx_range);
        for (v, node) in self.nodes.iter_mut().enumerate() {
            node.tick(t, pos[v], &self.sc.features);
            node.set_neighbors(&self.neighbors[v]);
        }
        self.exchange(&pos);
        for (src, dst) in std::mem::take(&mut self.scheduled) {
            self.admit(u64::MAX, src, dst, t);
        }
        if t < self.sc.sim.traffic_end() {
            for (flow, src, dst) in self.traffic.generate(t) {
                self.admit(flow, src, dst, t);
            }
        }
        self.decide(policy)?;
        self.age(policy);
        Ok(())
    }

    /// Queues an extra packet to be created at the next step, ahead of
    /// generated traffic. Returns its id.
    pub fn schedule(&mut self, src: usize, dst: usize) -> u64 {
        assert!(src != dst && dst < self.nodes.len());
        self.scheduled.push((src, dst));
        (self.packets.len() + self.scheduled.len() - 1) as u64
    }

    /// Runs to the configured duration.
    pub fn run(&mut self, policy: &mut dyn ForwardingPolicy) -> Result<()> {
        while !self.finished() {
            self.step(policy)?;
        }
        Ok(())
    }

    fn exchange(&mut self, pos: &[Point]) {
        let snap: Vec<Option<PeerTables>> = self
            .nodes
            .iter()
            .zip(&self.neighbors)
            .map(|(n, nb)| (!nb.is_empty()).then(|| n.peers.clone()))
            .collect();
        let speed = self.sc.mean_speed;
        for v in 0..self.nodes.len() {
            for &u in &self.neighbors[v] {
                let tables = snap[u].as_ref().expect("neighbor has a snapshot");
                self.nodes[v].on_meet(u, tables, pos[u], speed);
            }
        }
        self.before_exchange = snap;
    }

    fn admit(&mut self, flow: u64, src: usize, dst: usize, t: u64) {
        let id = self.packets.len();
        let mut p = Packet::new(id as u64, flow, src, dst, t, self.sc.sim.initial_ttl);
        self.counters.generated += 1;
        self.pending.push(None);
        if self.queues[src].len() >= self.sc.sim.buffer_cap {
            p.status = PacketStatus::DroppedBuffer;
            self.counters.dropped_buffer += 1;
        } else {
            self.queues[src].push_back(id);
        }
        self.packets.push(p);
    }

    fn decide(&mut self, policy: &mut dyn ForwardingPolicy) -> Result<()> {
        let n = self.nodes.len();
        let order: Vec<(usize, usize)> =
            (0..n).flat_map(|v| self.queues[v].iter().map(move |&pi| (v, pi))).collect();
        if order.is_empty() {
            return Ok(());
        }
        let cands: Vec<Vec<usize>> = order.iter().map(|&(v, _)| candidates_of(v, &self.neighbors[v])).collect();
        let build = policy.needs_features() || self.opts.record_experiences;
        // Per query: state (STATE_DIM) and candidate rows (k x FEATURE_DIM).
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        if build {
            let queue_len: Vec<usize> = self.queues.iter().map(|q| q.len()).collect();
            let mut dst_queue = vec![0u32; n * n];
            for (u, q) in self.queues.iter().enumerate() {
                for &pi in q {
                    dst_queue[u * n + self.packets[pi].dst] += 1;
                }
            }
            let ctx = FeatureContext::new(
                &self.sc.features,
                self.scales,
                &self.nodes,
                &self.neighbors,
                &queue_len,
                &dst_queue,
            );
            for (qi, &(v, pi)) in order.iter().enumerate() {
                let p = &self.packets[pi];
                let s = ctx.state(v, p.ttl, p.dst)?;
                let mut r = Vec::with_capacity(cands[qi].len() * FEATURE_DIM);
                for &u in &cands[qi] {
                    r.extend_from_slice(&s);
                    r.extend_from_slice(&ctx.action(v, u, p.dst, p.has_visited(u)));
                }
                states.push(s.to_vec());
                rows.push(r);
            }
        }

        if self.opts.record_experiences {
            for (qi, &(_, pi)) in order.iter().enumerate() {
                if let Some(prev) = self.pending[pi].take() {
                    let next_actions: Vec<f64> = rows[qi]
                        .chunks(FEATURE_DIM)
                        .flat_map(|r| r[STATE_DIM..].iter().copied())
                        .collect();
                    self.experiences.push(Experience {
                        state: prev.state,
                        action: prev.action,
                        reward: prev.reward,
                        terminal: false,
                        next_state: states[qi].clone(),
                        next_actions,
                        t: prev.t,
                    });
                }
            }
        }

        let choices: Vec<Choice> = {
            let queries: Vec<Query> = order
                .iter()
                .enumerate()
                .map(|(qi, &(v, pi))| Query {
                    packet: &self.packets[pi],
                    holder: v,
                    candidates: &cands[qi],
                    rows: if build { Some(&rows[qi]) } else { None },
                })
                .collect();
            let view = StepView {
                t: self.t,
                nodes: &self.nodes,
                neighbors: &self.neighbors,
                before_exchange: &self.before_exchange,
            };
            policy.decide(&view, &queries)?
        };
        if choices.len() != order.len() {
            return Err(Error::Runtime(format!(
                "policy {} returned {} choices for {} packets",
                policy.name(),
                choices.len(),
                order.len()
            )));
        }

        let t = self.t;
        let mut arrivals: Vec<(usize, usize)> = Vec::new();
        let mut leaving = vec![false; self.packets.len()];
        for (qi, (&(v, pi), c)) in order.iter().zip(&choices).enumerate() {
            let u = c.chosen;
            let k = match cands[qi].binary_search(&u) {
                Ok(k) => k,
                Err(_) => {
                    return Err(Error::Runtime(format!("policy chose {u}, not a candidate at node {v}")));
                }
            };
            if self.opts.log_decisions {
                let rec = self.decision_record(v, pi, c);
                self.decisions.push(rec);
            }
            let dst = self.packets[pi].dst;
            let tr = if u == v {
                Transition::Stay
            } else if u == dst {
                Transition::Delivery
            } else {
                Transition::Transmit
            };
            if self.opts.record_experiences {
                let row = &rows[qi][k * FEATURE_DIM..(k + 1) * FEATURE_DIM];
                let pend = Pending {
                    state: row[..STATE_DIM].to_vec(),
                    action: row[STATE_DIM..].to_vec(),
                    reward: reward_for(tr, self.gamma),
                    t,
                };
                if tr == Transition::Delivery {
                    self.experiences.push(terminal(pend));
                } else {
                    self.pending[pi] = Some(pend);
                }
            }
            match tr {
                Transition::Stay => {}
                Transition::Delivery => {
                    let p = &mut self.packets[pi];
                    p.move_to(u);
                    p.status = PacketStatus::Delivered;
                    p.delivered_at = Some(t + 1);
                    self.counters.delivered += 1;
                    leaving[pi] = true;
                    policy.packet_finished(p.id);
                }
                Transition::Transmit => {
                    leaving[pi] = true;
                    arrivals.push((pi, u));
                }
                Transition::Drop => unreachable!(),
            }
        }
        for q in &mut self.queues {
            q.retain(|&pi| !leaving[pi]);
        }
        let cap = self.sc.sim.buffer_cap;
        for (pi, u) in arrivals {
            self.packets[pi].move_to(u);
            if self.queues[u].len() >= cap {
                self.packets[pi].status = PacketStatus::DroppedBuffer;
                self.counters.dropped_buffer += 1;
                self.drop_pending(pi);
                policy.packet_finished(pi as u64);
            } else {
                self.queues[u].push_back(pi);
            }
        }
        Ok(())
    }

    fn drop_pending(&mut self, pi: usize) {
        if let Some(mut pend) = self.pending[pi].take() {
            pend.reward = reward_for(Transition::Drop, self.gamma);
            self.experiences.push(terminal(pend));
        }
    }

    fn age(&mut self, policy: &mut dyn ForwardingPolicy) {
        let mut expired = Vec::new();
        for q in &mut self.queues {
            q.retain(|&pi| {
                let p = &mut self.packets[pi];
                p.ttl -= 1;
                if p.ttl == 0 {
                    p.status = PacketStatus::DroppedTtl;
                    expired.push(pi);
                    false
                } else {
                    true
                }
            });
        }
        for pi in expired {
            self.counters.dropped_ttl += 1;
            self.drop_pending(pi);
            policy.packet_finished(pi as u64);
        }
    }

    fn decision_record(&self, v: usize, pi: usize, c: &Choice) -> DecisionRecord {
        let p = &self.packets[pi];
        let nbrs = &self.neighbors[v];
        let fast = |u: usize| self.classes[u] == Some(SpeedClass::Fast);
        let slow = |u: usize| self.classes[u] == Some(SpeedClass::Slow);
        let dg = self.groups[p.dst];
        let in_dg = |u: usize| dg.is_some() && self.groups[u] == dg;
        let n_dg = nbrs.iter().filter(|&&u| in_dg(u)).count();
        let transmit = c.chosen != v;
        DecisionRecord {
            t: self.t,
            packet: p.id,
            holder: v,
            chosen: c.chosen,
            explore: c.explore,
            n_fast: nbrs.iter().filter(|&&u| fast(u)).count(),
            n_slow: nbrs.iter().filter(|&&u| slow(u)).count(),
            chose_fast: transmit && fast(c.chosen),
            dest_group_present: n_dg > 0 && n_dg < nbrs.len(),
            chose_dest_group: transmit && in_dg(c.chosen),
            dest_neighbor: nbrs.binary_search(&p.dst).is_ok(),
            n_neighbors: nbrs.len(),
            n_dest_group: n_dg,
        }
    }

    /// Metrics over every packet generated so far. Fails once the run is over
    /// while packets are still in flight (the cool-down was too short).
    pub fn collect_metrics(&self, policy: &str) -> Result<MetricsReport> {
        let m = MetricsReport::from_packets(
            &self.sc.sim.scenario_id,
            self.sc.sim.rng_seed,
            policy,
            &self.packets,
            self.sc.sim.timestep,
        );
        if self.finished() {
            m.require_settled()?;
        }
        Ok(m)
    }

    pub fn class_of(&self, node: usize) -> Option<SpeedClass> {
        self.classes[node]
    }

    pub fn group_of(&self, node: usize) -> Option<usize> {
        self.groups[node]
    }
}

fn terminal(p: Pending) -> Experience {
    Experience {
        state: p.state,
        action: p.action,
        reward: p.reward,
        terminal: true,
        next_state: Vec::new(),
        next_actions: Vec::with_capacity(0),
        t: p.t,
    }
}

/// Checks the experience layout invariants.
pub fn experience_well_formed(e: &Experience) -> bool {
    e.state.len() == STATE_DIM
        && e.action.len() == ACTION_DIM
        && e.terminal == e.next_actions.is_empty()
        && (e.terminal || e.next_state.len() == STATE_DIM)
        && e.next_actions.len() % ACTION_DIM == 0
}
