use serde::{Deserialize, Serialize};

/// A position in the simulation plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Moves from `self` toward `target` by at most `step` meters.
    /// Returns the new point and the distance left unused (0 unless the target was reached).
    pub fn advance_toward(&self, target: &Point, step: f64) -> (Point, f64) {
        let d = self.dist(target);
        if d <= step {
            (*target, step - d)
        } else {
            let f = step / d;
            (
                Point::new(self.x + (target.x - self.x) * f, self.y + (target.y - self.y) * f),
                0.0,
            )
        }
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Point {
        Point::new(self.x.clamp(0.0, width), self.y.clamp(0.0, height))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_is_straight_line() {
        let (p, rest) = Point::new(0.0, 0.0).advance_toward(&Point::new(30.0, 40.0), 5.0);
        assert!((p.x - 3.0).abs() < 1e-12 && (p.y - 4.0).abs() < 1e-12);
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn advance_reports_leftover() {
        let (p, rest) = Point::new(0.0, 0.0).advance_toward(&Point::new(3.0, 4.0), 7.0);
        assert_eq!(p, Point::new(3.0, 4.0));
        assert!((rest - 2.0).abs() < 1e-12);
    }
}
