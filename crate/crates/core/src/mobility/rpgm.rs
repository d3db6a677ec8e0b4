use rand::Rng;

use super::rwp::Walker;
use crate::config::SpeedClass;
use crate::geom::Point;

/// Speed at which a member drifts from its current offset toward a newly
/// drawn offset, m/s.
pub const OFFSET_DRIFT_SPEED: f64 = 1.0;

#[derive(Debug, Clone)]
struct Member {
    group: usize,
    offset: Point,
    target: Point,
}

/// Reference point group mobility. Each group's reference point is itself a
/// random-waypoint walker; members sit at a bounded offset from it that is
/// re-drawn whenever the reference reaches a waypoint.
#[derive(Debug, Clone)]
pub struct GroupMobility {
    refs: Vec<Walker>,
    legs_seen: Vec<u64>,
    members: Vec<Member>,
    radius: f64,
    width: f64,
    height: f64,
}

fn disc_offset<R: Rng>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Point::new(r * a.cos(), r * a.sin())
}

impl GroupMobility {
    /// `assign[i]` is node i's group index.
    pub fn new<R: Rng>(
        rng: &mut R,
        assign: &[usize],
        groups: usize,
        radius: f64,
        pause: f64,
        width: f64,
        height: f64,
    ) -> Self {
        let refs: Vec<Walker> =
            (0..groups).map(|_| Walker::new(rng, width, height, SpeedClass::Slow, pause)).collect();
        let members = assign
            .iter()
            .map(|&g| {
                let o = disc_offset(rng, radius);
                Member { group: g, offset: o, target: o }
            })
            .collect();
        GroupMobility { legs_seen: vec![0; groups], refs, members, radius, width, height }
    }

    pub fn step<R: Rng>(&mut self, rng: &mut R, dt: f64) {
        for (g, walker) in self.refs.iter_mut().enumerate() {
            walker.step(rng, dt, self.width, self.height);
            if walker.legs != self.legs_seen[g] {
                self.legs_seen[g] = walker.legs;
                for m in self.members.iter_mut().filter(|m| m.group == g) {
                    m.target = disc_offset(rng, self.radius);
                }
            }
        }
        for m in &mut self.members {
            let (o, _) = m.offset.advance_toward(&m.target, OFFSET_DRIFT_SPEED * dt);
            m.offset = o;
        }
    }

    pub fn position(&self, node: usize) -> Point {
        let m = &self.members[node];
        let r = self.refs[m.group].pos;
        Point::new(r.x + m.offset.x, r.y + m.offset.y).clamp_to(self.width, self.height)
    }

    pub fn reference(&self, group: usize) -> Point {
        self.refs[group].pos
    }
}
