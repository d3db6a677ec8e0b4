//! Reference forwarding strategies and the epidemic oracle.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Scenario, TEST_TTL};
use crate::error::Result;
use crate::mobility::{Mobility, TraceTable};
use crate::policy::{Choice, ForwardingPolicy, Query, StepView, POLICY_STREAM};
use crate::sim::{build_neighbors, write_provenance, MetricsReport, PacketRecord, PacketStatus, Traffic};

pub const DEFAULT_THETA: f64 = 10.0;

/// Lowest-timer neighbor for `d` using pre-exchange tables; ties go to the
/// lowest id.
fn best_neighbor(view: &StepView, v: usize, d: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &u in &view.neighbors[v] {
        let tu = view.tables_before(u).timer[d];
        if best.is_none_or(|(_, b)| tu < b) {
            best = Some((u, tu));
        }
    }
    best
}

/// Single-copy forwarding on transitive encounter timers: hand the packet to
/// the neighbor that met `d` most recently if it beats the holder by more than
/// `theta` seconds.
pub struct Utility {
    pub theta: f64,
}

impl Utility {
    pub fn new(theta: f64) -> Self {
        Utility { theta }
    }

    pub fn choose(&self, view: &StepView, v: usize, d: usize) -> usize {
        if view.neighbors[v].binary_search(&d).is_ok() {
            return d;
        }
        let own = view.tables_before(v).timer[d];
        match best_neighbor(view, v, d) {
            Some((u, tu)) if tu < own - self.theta => u,
            _ => v,
        }
    }
}

impl ForwardingPolicy for Utility {
    fn name(&self) -> &str {
        "utility"
    }

    fn decide(&mut self, view: &StepView, queries: &[Query]) -> Result<Vec<Choice>> {
        Ok(queries.iter().map(|q| Choice::plain(self.choose(view, q.holder, q.packet.dst))).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Seek,
    Focus { last_progress: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeekFocusParams {
    /// Probability of a random hop per seek decision.
    pub p_seek: f64,
    /// Required timer improvement for a focus hop, seconds.
    pub theta: f64,
    /// Focus steps without progress before falling back to seek.
    pub timeout: u64,
}

impl Default for SeekFocusParams {
    fn default() -> Self {
        SeekFocusParams { p_seek: 1.0, theta: DEFAULT_THETA, timeout: 20 }
    }
}

/// Random walk until someone nearby knows the destination, then greedy timer
/// descent; a focus phase that stalls for `timeout` steps goes back to seeking.
pub struct SeekFocus {
    pub params: SeekFocusParams,
    phases: HashMap<u64, Phase>,
    rng: ChaCha8Rng,
}

impl SeekFocus {
    pub fn new(params: SeekFocusParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POLICY_STREAM);
        SeekFocus { params, phases: HashMap::new(), rng }
    }

    pub fn phase(&self, packet: u64) -> Phase {
        self.phases.get(&packet).copied().unwrap_or(Phase::Seek)
    }

    fn seek(&mut self, view: &StepView, v: usize) -> usize {
        let nb = &view.neighbors[v];
        if nb.is_empty() || self.rng.random::<f64>() >= self.params.p_seek {
            v
        } else {
            nb[self.rng.random_range(0..nb.len())]
        }
    }

    pub fn choose(&mut self, view: &StepView, packet: u64, v: usize, d: usize) -> usize {
        if view.neighbors[v].binary_search(&d).is_ok() {
            return d;
        }
        let t = view.t;
        let useful = view.nodes[v].knows(d) || view.neighbors[v].iter().any(|&u| view.nodes[u].knows(d));
        let mut phase = self.phase(packet);
        if phase == Phase::Seek && useful {
            phase = Phase::Focus { last_progress: t };
        }
        let chosen = match phase {
            Phase::Seek => self.seek(view, v),
            Phase::Focus { last_progress } => {
                let own = view.tables_before(v).timer[d];
                match best_neighbor(view, v, d) {
                    Some((u, tu)) if tu < own - self.params.theta => {
                        phase = Phase::Focus { last_progress: t };
                        u
                    }
                    _ if t.saturating_sub(last_progress) >= self.params.timeout => {
                        phase = Phase::Seek;
                        self.seek(view, v)
                    }
                    _ => v,
                }
            }
        };
        self.phases.insert(packet, phase);
        chosen
    }
}

impl ForwardingPolicy for SeekFocus {
    fn name(&self) -> &str {
        "seek-focus"
    }

    fn decide(&mut self, view: &StepView, queries: &[Query]) -> Result<Vec<Choice>> {
        Ok(queries.iter().map(|q| Choice::plain(self.choose(view, q.packet.id, q.holder, q.packet.dst))).collect())
    }

    fn packet_finished(&mut self, packet: u64) {
        self.phases.remove(&packet);
    }
}

/// Uniform over `Nbr(v) ∪ {v}`.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(POLICY_STREAM);
        RandomPolicy { rng }
    }
}

impl ForwardingPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, _view: &StepView, queries: &[Query]) -> Result<Vec<Choice>> {
        Ok(queries
            .iter()
            .map(|q| Choice { chosen: q.candidates[self.rng.random_range(0..q.candidates.len())], explore: true, q_values: vec![] })
            .collect())
    }
}

/// How one node first received a copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Infection {
    pub node: usize,
    pub parent: usize,
    /// Step in which the copy was sent (it is held from the next step on).
    pub t: u64,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCopyRecord {
    pub packet_id: u64,
    pub lineage: Vec<Infection>,
    pub first_delivery_t: Option<u64>,
    /// Nodes from source to destination along the first-arriving copy.
    pub path: Vec<usize>,
}

impl OracleCopyRecord {
    pub fn path_len(&self) -> usize {
        self.path.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub metrics: MetricsReport,
    pub copies: Vec<OracleCopyRecord>,
}

struct Flood {
    record: PacketRecord,
    ttl: u32,
    /// Per node: hop count of its copy.
    held: Vec<Option<u32>>,
    lineage: Vec<Infection>,
}

/// Epidemic flooding over the same mobility and traffic as a paired
/// single-copy run. Copies spread one hop per step, ignore buffers and live
/// for the testing TTL. Each packet's delay is that of its first copy to
/// arrive and its forwards are that copy's hop count.
pub fn oracle_run(sc: &Scenario, trace: Option<TraceTable>) -> Result<OracleReport> {
    sc.validate()?;
    let mut mobility = Mobility::with_trace(sc, trace)?;
    let mut traffic = Traffic::new(&sc.sim);
    let n = sc.sim.node_count;
    let ttl = TEST_TTL.max(sc.sim.initial_ttl);
    let mut floods: Vec<Flood> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    let mut t = mobility.time();
    while t < sc.sim.duration {
        t += 1;
        mobility.advance();
        let nbrs = build_neighbors(mobility.positions(), sc.sim.tx_range);
        if t < sc.sim.traffic_end() {
            for (_, src, dst) in traffic.generate(t) {
                let id = floods.len() as u64;
                let mut held = vec![None; n];
                held[src] = Some(0);
                floods.push(Flood {
                    record: PacketRecord {
                        packet_id: id,
                        src,
                        dst,
                        created: t,
                        status: PacketStatus::InFlight.as_str(),
                        delivered_at: None,
                        forwards: 0,
                    },
                    ttl,
                    held,
                    lineage: Vec::new(),
                });
                active.push(id as usize);
            }
        }
        active.retain(|&fi| {
            let f = &mut floods[fi];
            // Best offer per uninfected node this step: (hops, parent).
            let mut offers: Vec<Option<(u32, usize)>> = vec![None; n];
            for x in 0..n {
                let Some(hx) = f.held[x] else { continue };
                for &y in &nbrs[x] {
                    if f.held[y].is_none() && offers[y].is_none_or(|o| (hx + 1, x) < o) {
                        offers[y] = Some((hx + 1, x));
                    }
                }
            }
            let dst = f.record.dst;
            for (y, o) in offers.iter().enumerate() {
                if let Some((h, parent)) = *o {
                    f.held[y] = Some(h);
                    f.lineage.push(Infection { node: y, parent, t, hops: h });
                }
            }
            if let Some((h, _)) = offers[dst] {
                f.record.status = PacketStatus::Delivered.as_str();
                f.record.delivered_at = Some(t + 1);
                f.record.forwards = h;
                return false;
            }
            f.ttl -= 1;
            if f.ttl == 0 {
                f.record.status = PacketStatus::DroppedTtl.as_str();
                return false;
            }
            true
        });
    }
    let mut records = Vec::with_capacity(floods.len());
    let mut copies = Vec::with_capacity(floods.len());
    for f in floods {
        let mut path = Vec::new();
        if f.record.delivered_at.is_some() {
            let parent: HashMap<usize, usize> = f.lineage.iter().map(|i| (i.node, i.parent)).collect();
            let mut x = f.record.dst;
            path.push(x);
            while x != f.record.src {
                x = parent[&x];
                path.push(x);
            }
            path.reverse();
        }
        copies.push(OracleCopyRecord {
            packet_id: f.record.packet_id,
            lineage: f.lineage,
            first_delivery_t: f.record.delivered_at,
            path,
        });
        records.push(f.record);
    }
    let metrics = MetricsReport::from_records(&sc.sim.scenario_id, sc.sim.rng_seed, "oracle", records, sc.sim.timestep);
    Ok(OracleReport { metrics, copies })
}

/// `packet_id,first_delivery_t,hops,path` with the path as `a-b-c`.
pub fn write_oracle_paths<W: Write>(mut out: W, digest: &str, seed: u64, copies: &[OracleCopyRecord]) -> Result<()> {
    write_provenance(&mut out, digest, Some(seed))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["packet_id", "first_delivery_t", "hops", "path"])?;
    for c in copies {
        let path: Vec<String> = c.path.iter().map(|x| x.to_string()).collect();
        w.write_record([
            c.packet_id.to_string(),
            c.first_delivery_t.map(|t| t.to_string()).unwrap_or_default(),
            if c.path.is_empty() { String::new() } else { c.path_len().to_string() },
            path.join("-"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-packet comparison against the oracle: packets the policy delivered
/// faster than the oracle (impossible if the engine is consistent).
pub fn dominance_violations(oracle: &MetricsReport, other: &MetricsReport) -> Vec<u64> {
    other
        .records
        .iter()
        .filter_map(|r| {
            let d = r.delay()?;
            match oracle.records.get(r.packet_id as usize).and_then(|o| o.delay()) {
                Some(od) if od <= d => None,
                _ => Some(r.packet_id),
            }
        })
        .collect()
}
