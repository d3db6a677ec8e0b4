use rand::Rng;

use crate::config::SpeedClass;
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().opposite()
    }

    pub fn opposite(self) -> Heading {
        match self {
            Heading::North => Heading::South,
            Heading::South => Heading::North,
            Heading::East => Heading::West,
            Heading::West => Heading::East,
        }
    }

    const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];
}

/// A Manhattan-grid walker. Position is kept as the last intersection passed
/// plus the distance travelled along the current block edge, so coordinates
/// on the fixed axis stay exact multiples of the block size.
#[derive(Debug, Clone)]
pub struct GridWalker {
    pub ix: i64,
    pub iy: i64,
    pub heading: Heading,
    pub progress: f64,
    pub speed: f64,
    pub class: SpeedClass,
    block: f64,
    nx: i64,
    ny: i64,
}

impl GridWalker {
    pub fn new<R: Rng>(rng: &mut R, width: f64, height: f64, block: f64, class: SpeedClass) -> Self {
        let nx = (width / block).round() as i64;
        let ny = (height / block).round() as i64;
        let mut w = GridWalker {
            ix: rng.random_range(0..=nx),
            iy: rng.random_range(0..=ny),
            heading: Heading::North,
            progress: 0.0,
            speed: 0.0,
            class,
            block,
            nx,
            ny,
        };
        let options: Vec<Heading> = Heading::ALL.into_iter().filter(|h| w.can_go(*h)).collect();
        w.heading = options[rng.random_range(0..options.len())];
        w.progress = rng.random_range(0.0..block);
        w.redraw_speed(rng);
        w
    }

    fn redraw_speed<R: Rng>(&mut self, rng: &mut R) {
        let (lo, hi) = self.class.range();
        self.speed = rng.random_range(lo..=hi);
    }

    fn can_go(&self, h: Heading) -> bool {
        let (dx, dy) = h.delta();
        let (x, y) = (self.ix + dx, self.iy + dy);
        (0..=self.nx).contains(&x) && (0..=self.ny).contains(&y)
    }

    /// Straight with probability 1/2, left or right with 1/4 each, restricted
    /// to edges that stay inside the area; U-turn only when nothing else fits.
    fn choose_heading<R: Rng>(&mut self, rng: &mut R) {
        let h = self.heading;
        let options: Vec<(Heading, f64)> = [(h, 0.5), (h.left(), 0.25), (h.right(), 0.25)]
            .into_iter()
            .filter(|(c, _)| self.can_go(*c))
            .collect();
        if options.is_empty() {
            self.heading = h.opposite();
            return;
        }
        let total: f64 = options.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for (c, w) in &options {
            if u < *w {
                self.heading = *c;
                return;
            }
            u -= w;
        }
        self.heading = options.last().unwrap().0;
    }

    pub fn step<R: Rng>(&mut self, rng: &mut R, dt: f64) {
        let mut remaining = self.speed * dt;
        loop {
            let left = self.block - self.progress;
            if remaining < left {
                self.progress += remaining;
                return;
            }
            remaining -= left;
            let (dx, dy) = self.heading.delta();
            self.ix += dx;
            self.iy += dy;
            self.progress = 0.0;
            self.choose_heading(rng);
            // Leftover time is spent at the newly drawn speed.
            let time_left = remaining / self.speed;
            self.redraw_speed(rng);
            remaining = self.speed * time_left;
        }
    }

    pub fn at_intersection(&self) -> bool {
        self.progress == 0.0
    }

    pub fn position(&self) -> Point {
        let (dx, dy) = self.heading.delta();
        Point::new(
            self.ix as f64 * self.block + dx as f64 * self.progress,
            self.iy as f64 * self.block + dy as f64 * self.progress,
        )
    }
}
