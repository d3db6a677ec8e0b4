use std::collections::VecDeque;

use super::schema::FeatureParams;
use crate::geom::Point;

/// What a node believes about every other node. This is the part exchanged
/// between neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerTables {
    /// Transitive (utility) timer toward each node, seconds.
    pub timer: Vec<f64>,
    /// Age of the location held for each node, timesteps.
    pub aoi: Vec<u64>,
    /// Last known location of each node, if any was ever received.
    pub known_loc: Vec<Option<Point>>,
}

/// Per-node mutable knowledge maintained by the simulator.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub pos: Point,
    pub peers: PeerTables,
    /// Timesteps since the last direct meeting with each node.
    pub last_met_elapsed: Vec<Option<u64>>,
    /// Own positions over the last `dispersion_long + 1` timesteps, oldest first.
    pub position_window: VecDeque<Point>,
    pub dispersion_short: f64,
    pub dispersion_long: f64,
    /// Neighbors at the previous timestep, ascending.
    pub prev_neighbors: Vec<usize>,
    /// Neighbors that were not neighbors at the previous timestep.
    pub new_neighbors: usize,
    last_tick: Option<u64>,
}

impl NodeState {
    pub fn new(id: usize, node_count: usize, pos: Point, params: &FeatureParams) -> Self {
        let init_aoi = params.timer_init as u64;
        let mut peers = PeerTables {
            timer: vec![params.timer_init; node_count],
            aoi: vec![init_aoi; node_count],
            known_loc: vec![None; node_count],
        };
        peers.timer[id] = 0.0;
        peers.aoi[id] = 0;
        peers.known_loc[id] = Some(pos);
        let mut position_window = VecDeque::with_capacity(params.dispersion_long as usize + 2);
        position_window.push_back(pos);
        NodeState {
            id,
            pos,
            peers,
            last_met_elapsed: vec![None; node_count],
            position_window,
            dispersion_short: params.dispersion_short_init(),
            dispersion_long: params.dispersion_long_init(),
            prev_neighbors: Vec::new(),
            new_neighbors: 0,
            last_tick: None,
        }
    }

    /// Ages every timer by one timestep, records the new position and updates
    /// dispersion at interval boundaries. Must be called exactly once per timestep.
    pub fn tick(&mut self, t: u64, pos: Point, params: &FeatureParams) {
        assert!(self.last_tick != Some(t), "node {} ticked twice at t={t}", self.id);
        self.last_tick = Some(t);
        for a in &mut self.peers.aoi {
            *a = a.saturating_add(1);
        }
        for x in &mut self.peers.timer {
            *x += 1.0;
        }
        for e in self.last_met_elapsed.iter_mut().flatten() {
            *e += 1;
        }
        self.pos = pos;
        let me = self.id;
        self.peers.timer[me] = 0.0;
        self.peers.aoi[me] = 0;
        self.peers.known_loc[me] = Some(pos);

        self.position_window.push_back(pos);
        let cap = params.dispersion_long as usize + 1;
        while self.position_window.len() > cap {
            self.position_window.pop_front();
        }
        if let Some(d) = window_dispersion(&self.position_window, t, params.dispersion_short) {
            self.dispersion_short = ewma(params.beta, d, self.dispersion_short);
        }
        if let Some(d) = window_dispersion(&self.position_window, t, params.dispersion_long) {
            self.dispersion_long = ewma(params.beta, d, self.dispersion_long);
        }
    }

    /// Merges what neighbor `u` knows (its tables as of the start of this
    /// exchange) into this node's tables.
    pub fn on_meet(&mut self, u: usize, u_tables: &PeerTables, u_pos: Point, mean_speed: f64) {
        self.last_met_elapsed[u] = Some(0);
        let penalty = self.pos.dist(&u_pos) / mean_speed;
        let me = self.id;
        for w in 0..self.peers.aoi.len() {
            if w == me {
                continue;
            }
            if u_tables.aoi[w] < self.peers.aoi[w] {
                self.peers.aoi[w] = u_tables.aoi[w];
                self.peers.known_loc[w] = u_tables.known_loc[w];
            }
            let via = if w == u { 0.0 } else { u_tables.timer[w] + penalty };
            if via < self.peers.timer[w] {
                self.peers.timer[w] = via;
            }
        }
    }

    pub fn set_neighbors(&mut self, neighbors: &[usize]) {
        self.new_neighbors = neighbors.iter().filter(|n| self.prev_neighbors.binary_search(n).is_err()).count();
        self.prev_neighbors.clear();
        self.prev_neighbors.extend_from_slice(neighbors);
    }

    /// Number of distinct nodes met within the closed window `[t - delta, t]`.
    pub fn dynamic_connectivity(&self, delta: u64) -> usize {
        self.last_met_elapsed.iter().flatten().filter(|&&e| e <= delta).count()
    }

    /// Whether this node has ever received information about `w`.
    pub fn knows(&self, w: usize) -> bool {
        self.peers.known_loc[w].is_some()
    }
}

pub fn ewma(beta: f64, latest: f64, prev: f64) -> f64 {
    beta * latest + (1.0 - beta) * prev
}

/// Farthest distance from the window's first position to any later one.
pub fn max_excursion(window: impl IntoIterator<Item = Point>) -> f64 {
    let mut it = window.into_iter();
    let Some(start) = it.next() else { return 0.0 };
    it.fold(0.0, |m, p| m.max(start.dist(&p)))
}

/// `d_{t,tau}` when `t` is a positive multiple of `tau` and the window covers
/// `[t - tau, t]`; `None` otherwise.
pub fn window_dispersion(window: &VecDeque<Point>, t: u64, tau: u64) -> Option<f64> {
    if tau == 0 || t == 0 || t % tau != 0 || window.len() < tau as usize + 1 {
        return None;
    }
    let skip = window.len() - (tau as usize + 1);
    Some(max_excursion(window.iter().skip(skip).copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> FeatureParams {
        FeatureParams::default()
    }

    #[test]
    fn isolated_node_ages_by_exactly_elapsed_steps() {
        let p = params();
        let mut n = NodeState::new(0, 5, Point::new(1.0, 1.0), &p);
        let before = n.peers.clone();
        for t in 1..=10 {
            n.tick(t, Point::new(1.0, 1.0), &p);
        }
        for w in 1..5 {
            assert_eq!(n.peers.aoi[w], before.aoi[w] + 10);
            assert_eq!(n.peers.timer[w], before.timer[w] + 10.0);
        }
        assert_eq!(n.peers.aoi[0], 0);
    }

    #[test]
    #[should_panic(expected = "ticked twice")]
    fn double_tick_panics() {
        let p = params();
        let mut n = NodeState::new(0, 2, Point::default(), &p);
        n.tick(1, Point::default(), &p);
        n.tick(1, Point::default(), &p);
    }

    #[test]
    fn direct_meeting_zeroes_destination_entries() {
        let p = params();
        let mut v = NodeState::new(0, 3, Point::new(0.0, 0.0), &p);
        let mut d = NodeState::new(2, 3, Point::new(10.0, 0.0), &p);
        v.tick(1, Point::new(0.0, 0.0), &p);
        d.tick(1, Point::new(12.0, 0.0), &p);
        v.on_meet(2, &d.peers, d.pos, 3.0);
        assert_eq!(v.peers.timer[2], 0.0);
        assert_eq!(v.peers.aoi[2], 0);
        assert_eq!(v.peers.known_loc[2], Some(Point::new(12.0, 0.0)));
        assert_eq!(v.last_met_elapsed[2], Some(0));
        v.tick(2, Point::new(0.0, 0.0), &p);
        assert_eq!(v.last_met_elapsed[2], Some(1));
    }

    #[test]
    fn fresher_location_is_adopted() {
        let p = params();
        let mut v = NodeState::new(0, 3, Point::new(0.0, 0.0), &p);
        let mut u = NodeState::new(1, 3, Point::new(5.0, 0.0), &p);
        v.peers.aoi[2] = 300;
        v.peers.known_loc[2] = Some(Point::new(100.0, 100.0));
        u.peers.aoi[2] = 50;
        u.peers.known_loc[2] = Some(Point::new(200.0, 200.0));
        v.on_meet(1, &u.peers, u.pos, 3.0);
        assert_eq!(v.peers.aoi[2], 50);
        assert_eq!(v.peers.known_loc[2], Some(Point::new(200.0, 200.0)));
        // Staler information never replaces fresher.
        u.peers.aoi[2] = 70;
        v.on_meet(1, &u.peers, u.pos, 3.0);
        assert_eq!(v.peers.aoi[2], 50);
    }

    #[test]
    fn transitive_timer_adds_travel_penalty() {
        let p = params();
        let mut v = NodeState::new(0, 3, Point::new(0.0, 0.0), &p);
        let mut u = NodeState::new(1, 3, Point::new(30.0, 0.0), &p);
        v.peers.timer[2] = 100.0;
        u.peers.timer[2] = 10.0;
        v.on_meet(1, &u.peers, u.pos, 3.0);
        // min(100, 10 + 30/3)
        assert_eq!(v.peers.timer[2], 20.0);
        u.peers.timer[2] = 15.0;
        v.on_meet(1, &u.peers, u.pos, 3.0);
        assert_eq!(v.peers.timer[2], 20.0);
    }

    #[test]
    fn stationary_dispersion_decays_geometrically() {
        let p = FeatureParams { beta: 0.5, ..params() };
        let mut n = NodeState::new(0, 2, Point::new(5.0, 5.0), &p);
        assert_eq!(n.dispersion_short, 75.0);
        for t in 1..=10 {
            n.tick(t, Point::new(5.0, 5.0), &p);
        }
        assert_eq!(n.dispersion_short, 37.5);
        for t in 11..=20 {
            n.tick(t, Point::new(5.0, 5.0), &p);
        }
        assert_eq!(n.dispersion_short, 18.75);
    }

    #[test]
    fn straight_line_excursion() {
        let w: VecDeque<Point> = (0..=10).map(|s| Point::new(5.0 * s as f64, 0.0)).collect();
        assert_eq!(window_dispersion(&w, 10, 10), Some(50.0));
        assert_eq!(window_dispersion(&w, 9, 10), None);
    }

    #[test]
    fn back_and_forth_loop_excursion_is_small() {
        // Oscillates between x=0 and x=5 for 100 s: 500 m of path, 5 m of excursion.
        let w: VecDeque<Point> =
            (0..=100).map(|s| Point::new(if s % 2 == 0 { 0.0 } else { 5.0 }, 0.0)).collect();
        let brute = w.iter().map(|p| p.dist(&w[0])).fold(0.0, f64::max);
        assert_eq!(window_dispersion(&w, 100, 100), Some(brute));
        assert_eq!(brute, 5.0);
    }

    #[test]
    fn dynamic_connectivity_window_is_closed() {
        let p = params();
        let mut n = NodeState::new(0, 4, Point::default(), &p);
        assert_eq!(n.dynamic_connectivity(100), 0);
        let other = NodeState::new(1, 4, Point::default(), &p);
        n.on_meet(1, &other.peers, other.pos, 3.0);
        n.on_meet(2, &other.peers, other.pos, 3.0);
        n.on_meet(1, &other.peers, other.pos, 3.0);
        assert_eq!(n.dynamic_connectivity(100), 2);
        for t in 1..=100 {
            n.tick(t, Point::default(), &p);
        }
        assert_eq!(n.dynamic_connectivity(100), 2);
        n.tick(101, Point::default(), &p);
        assert_eq!(n.dynamic_connectivity(100), 0);
    }

    #[test]
    fn new_neighbor_count() {
        let p = params();
        let mut n = NodeState::new(0, 5, Point::default(), &p);
        n.set_neighbors(&[1, 2]);
        assert_eq!(n.new_neighbors, 2);
        n.set_neighbors(&[2, 3, 4]);
        assert_eq!(n.new_neighbors, 2);
        n.set_neighbors(&[2, 3, 4]);
        assert_eq!(n.new_neighbors, 0);
    }
}
