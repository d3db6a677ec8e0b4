use rand::Rng;

use crate::config::SpeedClass;
use crate::geom::Point;

/// A random-waypoint walker: pick a uniform destination, travel to it at a
/// speed drawn from the walker's class, pause, repeat.
#[derive(Debug, Clone)]
pub struct Walker {
    pub pos: Point,
    pub dest: Point,
    pub speed: f64,
    pub class: SpeedClass,
    pause: f64,
    pause_left: f64,
    /// Completed legs since creation.
    pub legs: u64,
    /// Sum of the speeds drawn for every leg started.
    pub speed_draws: f64,
    pub draws: u64,
}

impl Walker {
    pub fn new<R: Rng>(rng: &mut R, width: f64, height: f64, class: SpeedClass, pause: f64) -> Self {
        let pos = uniform_point(rng, width, height);
        let mut w = Walker {
            pos,
            dest: pos,
            speed: 0.0,
            class,
            pause,
            pause_left: 0.0,
            legs: 0,
            speed_draws: 0.0,
            draws: 0,
        };
        w.new_leg(rng, width, height);
        w
    }

    fn new_leg<R: Rng>(&mut self, rng: &mut R, width: f64, height: f64) {
        let (lo, hi) = self.class.range();
        self.dest = uniform_point(rng, width, height);
        self.speed = rng.random_range(lo..=hi);
        self.speed_draws += self.speed;
        self.draws += 1;
    }

    /// Advances the walker by `dt` seconds.
    pub fn step<R: Rng>(&mut self, rng: &mut R, dt: f64, width: f64, height: f64) {
        let mut time = dt;
        // Bounded: each pass either exhausts `time` or completes a leg/pause.
        while time > 1e-12 {
            if self.pause_left > 0.0 {
                let p = self.pause_left.min(time);
                self.pause_left -= p;
                time -= p;
                if self.pause_left <= 0.0 {
                    self.pause_left = 0.0;
                    self.new_leg(rng, width, height);
                }
                continue;
            }
            let need = self.pos.dist(&self.dest) / self.speed;
            if need <= time {
                self.pos = self.dest;
                time -= need;
                self.legs += 1;
                if self.pause > 0.0 {
                    self.pause_left = self.pause;
                } else {
                    self.new_leg(rng, width, height);
                }
            } else {
                let (p, _) = self.pos.advance_toward(&self.dest, self.speed * time);
                self.pos = p;
                time = 0.0;
            }
        }
    }
}

pub fn uniform_point<R: Rng>(rng: &mut R, width: f64, height: f64) -> Point {
    Point::new(rng.random_range(0.0..=width), rng.random_range(0.0..=height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn straight_line_kinematics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = Walker::new(&mut rng, 500.0, 500.0, SpeedClass::Slow, 0.0);
        w.pos = Point::new(0.0, 0.0);
        w.dest = Point::new(30.0, 40.0);
        w.speed = 5.0;
        w.step(&mut rng, 1.0, 500.0, 500.0);
        assert!((w.pos.x - 3.0).abs() < 1e-12 && (w.pos.y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn leftover_time_carries_into_next_leg() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = Walker::new(&mut rng, 500.0, 500.0, SpeedClass::Slow, 0.0);
        w.pos = Point::new(0.0, 0.0);
        w.dest = Point::new(1.0, 0.0);
        w.speed = 4.0;
        w.step(&mut rng, 1.0, 500.0, 500.0);
        assert_eq!(w.legs, 1);
        assert!(w.pos != Point::new(1.0, 0.0));
        // 1 m on the first leg, 0.75 s at the new leg's speed on the second.
        let moved_on_second = w.pos.dist(&Point::new(1.0, 0.0));
        assert!((moved_on_second - 0.75 * w.speed).abs() < 1e-9);
    }

    #[test]
    fn pause_holds_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = Walker::new(&mut rng, 500.0, 500.0, SpeedClass::Slow, 10.0);
        w.pos = Point::new(0.0, 0.0);
        w.dest = Point::new(2.0, 0.0);
        w.speed = 2.0;
        w.step(&mut rng, 1.0, 500.0, 500.0);
        for _ in 0..10 {
            w.step(&mut rng, 1.0, 500.0, 500.0);
            assert_eq!(w.pos, Point::new(2.0, 0.0));
        }
        w.step(&mut rng, 1.0, 500.0, 500.0);
        assert!(w.pos != Point::new(2.0, 0.0));
    }
}
