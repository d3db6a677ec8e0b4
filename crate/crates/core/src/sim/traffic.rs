use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::config::SimConfig;

pub const TRAFFIC_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: u64,
    pub src: usize,
    pub dst: usize,
    pub start: u64,
    pub end: u64,
}

/// A packet birth: (flow id, src, dst).
pub type Birth = (u64, usize, usize);

/// Poisson flow arrivals with exponential lifetimes; each active flow emits
/// Poisson packets. Owns its own RNG stream so every policy sees the same
/// traffic for a seed.
#[derive(Debug, Clone)]
pub struct Traffic {
    rng: ChaCha8Rng,
    pub flows: Vec<Flow>,
    next_flow: u64,
    flow_rate: Option<Poisson<f64>>,
    packet_rate: Option<Poisson<f64>>,
    lifetime: Exp<f64>,
    node_count: usize,
}

fn poisson(rate: f64) -> Option<Poisson<f64>> {
    (rate > 0.0).then(|| Poisson::new(rate).expect("positive rate"))
}

impl Traffic {
    pub fn new(cfg: &SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(TRAFFIC_STREAM);
        Traffic {
            rng,
            flows: Vec::new(),
            next_flow: 0,
            flow_rate: poisson(cfg.flow_arrival_rate),
            packet_rate: poisson(cfg.packet_rate),
            lifetime: Exp::new(1.0 / cfg.flow_duration_mean.max(f64::MIN_POSITIVE)).expect("finite rate"),
            node_count: cfg.node_count,
        }
    }

    fn draw(rng: &mut ChaCha8Rng, d: &Option<Poisson<f64>>) -> u64 {
        d.as_ref().map_or(0, |d| d.sample(rng) as u64)
    }

    /// Flows and packets born at timestep `t`.
    pub fn generate(&mut self, t: u64) -> Vec<Birth> {
        self.flows.retain(|f| f.end > t);
        for _ in 0..Self::draw(&mut self.rng, &self.flow_rate) {
            let src = self.rng.random_range(0..self.node_count);
            let mut dst = self.rng.random_range(0..self.node_count - 1);
            if dst >= src {
                dst += 1;
            }
            let len = self.lifetime.sample(&mut self.rng).ceil().max(1.0) as u64;
            self.flows.push(Flow { id: self.next_flow, src, dst, start: t, end: t + len });
            self.next_flow += 1;
        }
        let mut out = Vec::new();
        for i in 0..self.flows.len() {
            let n = Self::draw(&mut self.rng, &self.packet_rate);
            let f = &self.flows[i];
            out.extend((0..n).map(|_| (f.id, f.src, f.dst)));
        }
        out
    }

    pub fn flows_started(&self) -> u64 {
        self.next_flow
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;

    #[test]
    fn endpoints_distinct_and_lifetimes_positive() {
        let mut cfg = presets::small("rwp-3", 50.0).unwrap().sim;
        cfg.flow_arrival_rate = 0.5;
        let mut tr = Traffic::new(&cfg);
        for t in 0..2000 {
            tr.generate(t);
            for f in &tr.flows {
                assert_ne!(f.src, f.dst);
                assert!(f.end > f.start);
            }
        }
        assert!(tr.flows_started() > 900);
    }

    #[test]
    fn packet_rate_per_active_flow() {
        // Pin one flow open for the whole run and count its packets.
        let mut cfg = presets::small("rwp-3", 50.0).unwrap().sim;
        cfg.flow_arrival_rate = 0.0;
        let mut tr = Traffic::new(&cfg);
        tr.flows.push(Flow { id: 0, src: 0, dst: 1, start: 0, end: u64::MAX });
        let steps = 1_000_000u64;
        let total: usize = (0..steps).map(|t| tr.generate(t).len()).sum();
        let mean = total as f64 / steps as f64;
        let sigma = (0.01 / steps as f64).sqrt();
        assert!((mean - 0.01).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn flow_arrivals_match_rate() {
        let cfg = presets::small("rwp-3", 50.0).unwrap().sim;
        let mut tr = Traffic::new(&cfg);
        let steps = 1_000_000u64;
        for t in 0..steps {
            tr.generate(t);
        }
        let mean = tr.flows_started() as f64 / steps as f64;
        let sigma = (0.001 / steps as f64).sqrt();
        assert!((mean - 0.001).abs() < 3.0 * sigma, "mean {mean}");
    }
}
