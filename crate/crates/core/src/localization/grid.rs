use crate::error::{domain, Result};
use crate::Point2;

/// Square search grid. Vertices lie on the lattice `step * Z^2`, centered on
/// the lattice point nearest `center`, with `floor(half_extent / step)`
/// vertices on each side. Vertices are indexed row-major: `iy * side + ix`,
/// `ix` running along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub center: Point2,
    pub half_extent: f64,
    pub step: f64,
}

impl GridSpec {
    pub const DEFAULT_STEP: f64 = 0.010;
    pub const DEFAULT_HALF_EXTENT: f64 = 6.0;

    pub fn new(center: Point2, half_extent: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(domain(format!("grid step must be positive, got {step}")));
        }
        if !(half_extent >= 0.0 && half_extent.is_finite()) {
            return Err(domain(format!("grid half-extent must be non-negative, got {half_extent}")));
        }
        if !(center.x.is_finite() && center.y.is_finite()) {
            return Err(domain("non-finite grid center"));
        }
        if half_extent / step > 1e5 {
            return Err(domain(format!("grid of half-extent {half_extent} at step {step} is too large")));
        }
        Ok(Self {
            center,
            half_extent,
            step,
        })
    }

    /// Default grid around the anchor centroid.
    pub fn around(anchors: &[Point2], half_extent: f64, step: f64) -> Result<Self> {
        GridSpec::new(Point2::centroid(anchors), half_extent, step)
    }

    /// Vertices per side of the centre.
    pub fn half_count(&self) -> i64 {
        (self.half_extent / self.step * (1.0 + 1e-12)).floor() as i64
    }

    pub fn side(&self) -> usize {
        (2 * self.half_count() + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn origin_index(&self) -> (i64, i64) {
        let n = self.half_count();
        (
            (self.center.x / self.step).round() as i64 - n,
            (self.center.y / self.step).round() as i64 - n,
        )
    }

    fn coord(&self, lattice: i64) -> f64 {
        lattice as f64 * self.step
    }

    pub fn vertex(&self, index: usize) -> Point2 {
        let side = self.side();
        let (ox, oy) = self.origin_index();
        Point2::new(
            self.coord(ox + (index % side) as i64),
            self.coord(oy + (index / side) as i64),
        )
    }

    /// Lowest and highest vertex coordinates, `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let (ox, oy) = self.origin_index();
        let last = self.side() as i64 - 1;
        (
            Point2::new(self.coord(ox), self.coord(oy)),
            Point2::new(self.coord(ox + last), self.coord(oy + last)),
        )
    }

    /// Range of distances from `p` to any point of the grid's bounding box.
    pub fn distance_range(&self, p: &Point2) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        let near = Point2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
        let far = Point2::new(
            if p.x - lo.x > hi.x - p.x { lo.x } else { hi.x },
            if p.y - lo.y > hi.y - p.y { lo.y } else { hi.y },
        );
        (p.distance(&near), p.distance(&far))
    }

    /// Index and value of the largest `score` over all vertices. Ties keep
    /// the smallest index; NaN scores never win.
    pub fn argmax(&self, mut score: impl FnMut(Point2) -> f64) -> (usize, f64) {
        let side = self.side();
        let (ox, oy) = self.origin_index();
        let xs: Vec<f64> = (0..side as i64).map(|i| self.coord(ox + i)).collect();
        let mut best = (0, f64::NEG_INFINITY);
        let mut first = true;
        for iy in 0..side {
            let y = self.coord(oy + iy as i64);
            for (ix, &x) in xs.iter().enumerate() {
                let v = score(Point2::new(x, y));
                if first || v > best.1 {
                    best = (iy * side + ix, v);
                    first = false;
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertices_are_lattice_aligned() {
        let g = GridSpec::new(Point2::new(0.123, -0.0049), 0.05, 0.01).unwrap();
        assert_eq!(g.side(), 11);
        let (lo, hi) = g.bounds();
        assert_eq!(lo, Point2::new(0.07, -0.05));
        assert!((hi.x - 0.17).abs() < 1e-15 && (hi.y - 0.05).abs() < 1e-15);
        let centered = GridSpec::new(Point2::new(0.004, 0.0), 6.0, 0.01).unwrap();
        let mid = centered.len() / 2;
        assert_eq!(centered.vertex(mid), Point2::ORIGIN);
    }

    #[test]
    fn argmax_breaks_ties_by_index() {
        let g = GridSpec::new(Point2::ORIGIN, 0.02, 0.01).unwrap();
        assert_eq!(g.argmax(|_| 1.0), (0, 1.0));
        let (i, _) = g.argmax(|p| -(p.x - 0.01).abs());
        assert_eq!(g.vertex(i), Point2::new(0.01, -0.02));
    }

    #[test]
    fn distance_range_covers_the_box() {
        let g = GridSpec::new(Point2::ORIGIN, 1.0, 0.5).unwrap();
        let (lo, hi) = g.distance_range(&Point2::new(3.0, 0.0));
        assert!((lo - 2.0).abs() < 1e-12);
        assert!((hi - 4f64.hypot(1.0)).abs() < 1e-12);
        assert_eq!(g.distance_range(&Point2::ORIGIN).0, 0.0);
    }

    #[test]
    fn rejects_bad_steps() {
        assert!(GridSpec::new(Point2::ORIGIN, 1.0, 0.0).is_err());
        assert!(GridSpec::new(Point2::ORIGIN, -1.0, 0.1).is_err());
    }
}
