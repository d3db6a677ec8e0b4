//! Node trajectories: random waypoint, reference point group, Manhattan grid
//! and recorded traces.

mod grid;
mod rpgm;
mod rwp;
pub mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use grid::{GridWalker, Heading};
pub use rpgm::{GroupMobility, OFFSET_DRIFT_SPEED};
pub use rwp::{uniform_point, Walker};
pub use trace::{load_trace, parse_trace, write_trace, TraceTable, TrajectorySample};

use crate::config::{MobilityModel, Scenario, SpeedClass};
use crate::error::{Error, Result};
use crate::geom::Point;

/// RNG stream reserved for mobility, so trajectories do not depend on traffic
/// or policy randomness.
pub const MOBILITY_STREAM: u64 = 1;

#[derive(Debug, Clone)]
enum Kind {
    Rwp(Vec<Walker>),
    Rpgm(GroupMobility),
    Grid(Vec<GridWalker>),
    Trace(TraceTable),
}

#[derive(Debug, Clone)]
pub struct Mobility {
    kind: Kind,
    positions: Vec<Point>,
    rng: ChaCha8Rng,
    dt: f64,
    width: f64,
    height: f64,
    /// Steps taken since t = 0.
    t: u64,
}

impl Mobility {
    /// Builds the model for a scenario and runs its warm-up.
    pub fn new(sc: &Scenario) -> Result<Self> {
        let trace = match &sc.mobility.model {
            MobilityModel::Trace { path } => Some(load_trace(path)?),
            _ => None,
        };
        Self::with_trace(sc, trace)
    }

    /// Like [`Mobility::new`] but with an already loaded trace.
    pub fn with_trace(sc: &Scenario, trace: Option<TraceTable>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.sim.rng_seed);
        rng.set_stream(MOBILITY_STREAM);
        let (w, h) = (sc.sim.area_width, sc.sim.area_height);
        let n = sc.sim.node_count;
        let class = |i| sc.mobility.class_of(i).unwrap_or(SpeedClass::Slow);
        let kind = match &sc.mobility.model {
            MobilityModel::Rwp => {
                Kind::Rwp((0..n).map(|i| Walker::new(&mut rng, w, h, class(i), sc.mobility.pause)).collect())
            }
            MobilityModel::Rpgm { groups, group_radius } => {
                let assign: Vec<usize> = (0..n).map(|i| sc.mobility.group_of(i, n).unwrap_or(0)).collect();
                Kind::Rpgm(GroupMobility::new(&mut rng, &assign, *groups, *group_radius, sc.mobility.pause, w, h))
            }
            MobilityModel::Grid { block } => {
                Kind::Grid((0..n).map(|i| GridWalker::new(&mut rng, w, h, *block, class(i))).collect())
            }
            MobilityModel::Trace { .. } => {
                let table = trace.ok_or_else(|| Error::InvalidConfig("trace mobility without a trace".into()))?;
                if table.node_count() != n {
                    return Err(Error::InvalidConfig(format!(
                        "trace has {} nodes but node_count is {n}",
                        table.node_count()
                    )));
                }
                if table.duration() < sc.sim.duration {
                    return Err(Error::InvalidConfig(format!(
                        "trace covers {} steps but duration is {}",
                        table.duration(),
                        sc.sim.duration
                    )));
                }
                let out = table
                    .positions
                    .iter()
                    .flatten()
                    .any(|p| p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h);
                if out {
                    return Err(Error::InvalidConfig("trace positions fall outside the area".into()));
                }
                Kind::Trace(table)
            }
        };
        let mut m = Mobility { kind, positions: vec![Point::default(); n], rng, dt: sc.sim.timestep, width: w, height: h, t: 0 };
        if !matches!(m.kind, Kind::Trace(_)) {
            for _ in 0..sc.mobility.warmup {
                m.move_all();
            }
        }
        m.refresh();
        Ok(m)
    }

    fn move_all(&mut self) {
        let (dt, w, h) = (self.dt, self.width, self.height);
        match &mut self.kind {
            Kind::Rwp(walkers) => walkers.iter_mut().for_each(|wk| wk.step(&mut self.rng, dt, w, h)),
            Kind::Rpgm(g) => g.step(&mut self.rng, dt),
            Kind::Grid(walkers) => walkers.iter_mut().for_each(|wk| wk.step(&mut self.rng, dt)),
            Kind::Trace(_) => {}
        }
    }

    fn refresh(&mut self) {
        match &self.kind {
            Kind::Rwp(walkers) => {
                for (p, wk) in self.positions.iter_mut().zip(walkers) {
                    *p = wk.pos;
                }
            }
            Kind::Rpgm(g) => {
                for (i, p) in self.positions.iter_mut().enumerate() {
                    *p = g.position(i);
                }
            }
            Kind::Grid(walkers) => {
                for (p, wk) in self.positions.iter_mut().zip(walkers) {
                    *p = wk.position();
                }
            }
            Kind::Trace(table) => {
                let row = (self.t as usize).min(table.positions.len() - 1);
                self.positions.copy_from_slice(&table.positions[row]);
            }
        }
    }

    /// Advances every node by one timestep.
    pub fn advance(&mut self) {
        self.move_all();
        self.t += 1;
        self.refresh();
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn rwp_walkers(&self) -> Option<&[Walker]> {
        match &self.kind {
            Kind::Rwp(w) => Some(w),
            _ => None,
        }
    }

    pub fn grid_walkers(&self) -> Option<&[GridWalker]> {
        match &self.kind {
            Kind::Grid(w) => Some(w),
            _ => None,
        }
    }

    pub fn trace_ids(&self) -> Option<&[u64]> {
        match &self.kind {
            Kind::Trace(t) => Some(&t.node_ids),
            _ => None,
        }
    }
}

/// Samples `steps` timesteps (t = 0 included) of a scenario's trajectories.
pub fn export_trajectory(sc: &Scenario, steps: u64) -> Result<Vec<TrajectorySample>> {
    let mut m = Mobility::new(sc)?;
    let ids: Vec<u64> = match m.trace_ids() {
        Some(ids) => ids.to_vec(),
        None => (0..sc.sim.node_count as u64).collect(),
    };
    let mut out = Vec::with_capacity(steps as usize * ids.len());
    for t in 0..steps {
        if t > 0 {
            m.advance();
        }
        for (p, &node) in m.positions().iter().zip(&ids) {
            out.push(TrajectorySample { t, node, x: p.x, y: p.y });
        }
    }
    Ok(out)
}

/// Mean number of neighbors per node over `steps` timesteps.
pub fn average_degree(sc: &Scenario, steps: u64) -> Result<f64> {
    let mut m = Mobility::new(sc)?;
    let r = sc.sim.tx_range;
    let n = sc.sim.node_count;
    let mut links = 0u64;
    for _ in 0..steps {
        m.advance();
        let p = m.positions();
        for i in 0..n {
            for j in (i + 1)..n {
                if p[i].dist(&p[j]) <= r {
                    links += 2;
                }
            }
        }
    }
    Ok(links as f64 / (steps as f64 * n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;

    fn short(mut sc: Scenario) -> Scenario {
        sc.mobility.warmup = 200;
        sc
    }

    #[test]
    fn rwp_stays_in_bounds_and_respects_speed() {
        let sc = short(presets::small("rwp-mix2", 50.0).unwrap());
        let mut m = Mobility::new(&sc).unwrap();
        let mut prev = m.positions().to_vec();
        for _ in 0..5000 {
            m.advance();
            for (i, (p, q)) in m.positions().iter().zip(&prev).enumerate() {
                assert!((0.0..=500.0).contains(&p.x) && (0.0..=500.0).contains(&p.y));
                let max = sc.mobility.class_of(i).unwrap().range().1;
                assert!(p.dist(q) <= max + 1e-9);
            }
            prev = m.positions().to_vec();
        }
    }

    #[test]
    fn slow_class_mean_leg_speed_near_three() {
        let mut sc = short(presets::small("rwp-3", 50.0).unwrap());
        sc.sim.node_count = 2;
        sc.mobility.slow_count = 2;
        let mut m = Mobility::new(&sc).unwrap();
        for _ in 0..100_000 {
            m.advance();
        }
        for w in m.rwp_walkers().unwrap() {
            let mean = w.speed_draws / w.draws as f64;
            assert!((2.9..=3.1).contains(&mean), "mean leg speed {mean} over {} legs", w.draws);
        }
    }

    #[test]
    fn slow_class_time_average_speed_is_harmonic() {
        // Uniform per-leg speeds on [1, 5] weight slow legs by their duration:
        // the long-run time average is 1 / E[1/v] = 4 / ln 5.
        let mut sc = short(presets::small("rwp-3", 50.0).unwrap());
        sc.sim.node_count = 4;
        sc.mobility.slow_count = 4;
        let mut m = Mobility::new(&sc).unwrap();
        let mut travelled = 0.0;
        let steps = 200_000;
        let mut prev = m.positions().to_vec();
        for _ in 0..steps {
            m.advance();
            travelled += m.positions().iter().zip(&prev).map(|(a, b)| a.dist(b)).sum::<f64>();
            prev.copy_from_slice(m.positions());
        }
        let avg = travelled / (steps as f64 * 4.0);
        let expected = 4.0 / 5f64.ln();
        assert!((avg - expected).abs() < 0.1, "time-average speed {avg}, expected {expected}");
    }

    #[test]
    fn rpgm_zero_radius_coincides_with_reference() {
        let mut sc = short(presets::small("rpgm-1group", 50.0).unwrap());
        sc.mobility.model = MobilityModel::Rpgm { groups: 1, group_radius: 0.0 };
        let mut m = Mobility::new(&sc).unwrap();
        for _ in 0..100 {
            m.advance();
            let Kind::Rpgm(g) = &m.kind else { unreachable!() };
            for p in m.positions() {
                assert!(p.dist(&g.reference(0)) < 1e-12);
            }
        }
    }

    #[test]
    fn rpgm_speed_bounded_by_reference_plus_drift() {
        let sc = short(presets::small("rpgm-2group", 50.0).unwrap());
        let mut m = Mobility::new(&sc).unwrap();
        let mut prev = m.positions().to_vec();
        for _ in 0..3000 {
            m.advance();
            for (p, q) in m.positions().iter().zip(&prev) {
                assert!((0.0..=500.0).contains(&p.x) && (0.0..=500.0).contains(&p.y));
                assert!(p.dist(q) <= 5.0 + OFFSET_DRIFT_SPEED + 1e-9);
            }
            prev = m.positions().to_vec();
        }
    }

    #[test]
    fn grid_nodes_stay_on_lines() {
        let sc = short(presets::large("grid-mix2", 50.0).unwrap());
        let mut m = Mobility::new(&sc).unwrap();
        let mut prev_heading: Vec<Heading> = m.grid_walkers().unwrap().iter().map(|w| w.heading).collect();
        for _ in 0..3000 {
            m.advance();
            for p in m.positions() {
                assert!(p.x % 50.0 == 0.0 || p.y % 50.0 == 0.0, "{p:?} off grid");
                assert!((0.0..=1000.0).contains(&p.x) && (0.0..=1000.0).contains(&p.y));
            }
            for (w, h) in m.grid_walkers().unwrap().iter().zip(prev_heading.iter_mut()) {
                // A heading change means the walker passed an intersection this step.
                if w.heading != *h {
                    let travelled_past_corner = w.progress <= w.speed + 1e-9;
                    assert!(travelled_past_corner);
                }
                *h = w.heading;
            }
        }
    }

    #[test]
    fn grid_mid_edge_keeps_heading() {
        let sc = short(presets::large("grid-3", 50.0).unwrap());
        let mut m = Mobility::new(&sc).unwrap();
        for _ in 0..500 {
            let before: Vec<(Heading, f64, f64)> =
                m.grid_walkers().unwrap().iter().map(|w| (w.heading, w.progress, w.speed)).collect();
            m.advance();
            for (w, (h, prog, speed)) in m.grid_walkers().unwrap().iter().zip(before) {
                if prog + speed < 50.0 {
                    assert_eq!(w.heading, h);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let sc = short(presets::small("rwp-mix1", 50.0).unwrap());
        let a = export_trajectory(&sc, 300).unwrap();
        let b = export_trajectory(&sc, 300).unwrap();
        assert_eq!(a, b);
        let c = export_trajectory(&sc.clone().with_seed(9), 300).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exported_trace_replays_exactly() {
        let mut sc = short(presets::small("rwp-3", 50.0).unwrap());
        sc.sim.duration = 50;
        sc.sim.cooldown = 10;
        let samples = export_trajectory(&sc, 50).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, samples.iter().copied()).unwrap();
        let table = parse_trace(buf.as_slice()).unwrap();
        let mut tsc = sc.clone();
        tsc.mobility.model = MobilityModel::Trace { path: "unused".into() };
        let mut replay = Mobility::with_trace(&tsc, Some(table)).unwrap();
        let mut orig = Mobility::new(&sc).unwrap();
        for _ in 0..49 {
            assert_eq!(replay.positions(), orig.positions());
            replay.advance();
            orig.advance();
        }
    }
}
