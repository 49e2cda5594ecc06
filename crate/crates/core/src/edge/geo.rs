//! Point-in-polygon tests for geofences.

use serde::{Deserialize, Serialize};

use crate::num::Coord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Coord> Point<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Point { lat, lon }
    }

    pub fn in_range(&self) -> bool {
        let f = |v: f64| T::from(v).expect("float conversion");
        self.lat >= f(-90.0) && self.lat <= f(90.0) && self.lon >= f(-180.0) && self.lon <= f(180.0)
    }
}

/// Simple polygon (implicitly closed). Boundary points count as inside.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T> {
    vertices: Vec<Point<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolygonError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon vertex out of range or not finite")]
    BadVertex,
}

impl<T: Coord> Polygon<T> {
    pub fn new(vertices: Vec<Point<T>>) -> Result<Self, PolygonError> {
        if vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(vertices.len()));
        }
        if vertices.iter().any(|v| !v.lat.is_finite() || !v.lon.is_finite() || !v.in_range()) {
            return Err(PolygonError::BadVertex);
        }
        let p = Polygon { vertices };
        if p.signed_area() == T::zero() {
            return Err(PolygonError::ZeroArea);
        }
        Ok(p)
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, lon as x and lat as y.
    pub fn signed_area(&self) -> T {
        let two = T::one() + T::one();
        self.edges().fold(T::zero(), |acc, (a, b)| acc + (a.lon * b.lat - b.lon * a.lat)) / two
    }

    pub fn centroid(&self) -> Point<T> {
        let six = T::from(6.0).expect("float conversion");
        let area = self.signed_area();
        let (mut cx, mut cy) = (T::zero(), T::zero());
        for (a, b) in self.edges() {
            let cross = a.lon * b.lat - b.lon * a.lat;
            cx = cx + (a.lon + b.lon) * cross;
            cy = cy + (a.lat + b.lat) * cross;
        }
        Point { lat: cy / (six * area), lon: cx / (six * area) }
    }

    pub fn on_boundary(&self, p: &Point<T>) -> bool {
        self.edges().any(|(a, b)| {
            let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
            cross == T::zero()
                && p.lon >= a.lon.min(b.lon)
                && p.lon <= a.lon.max(b.lon)
                && p.lat >= a.lat.min(b.lat)
                && p.lat <= a.lat.max(b.lat)
        })
    }

    /// Even-odd ray casting along +lon, with an explicit boundary check first.
    pub fn contains(&self, p: &Point<T>) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
                if p.lon < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square<T: Coord>() -> Polygon<T> {
        let z = T::zero();
        let o = T::one();
        Polygon::new(vec![Point::new(z, z), Point::new(z, o), Point::new(o, o), Point::new(o, z)]).unwrap()
    }

    #[test]
    fn degenerate_polygons_rejected() {
        assert_eq!(
            Polygon::<f64>::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]),
            Err(PolygonError::TooFewVertices(2))
        );
        let collinear = vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(2.0, 2.0)];
        assert_eq!(Polygon::new(collinear), Err(PolygonError::ZeroArea));
        assert_eq!(
            Polygon::new(vec![Point::new(0.0, 0.0), Point::new(95.0, 0.0), Point::new(0.0, 1.0)]),
            Err(PolygonError::BadVertex)
        );
    }

    #[test]
    fn boundary_counts_as_inside() {
        let sq = unit_square::<f64>();
        assert!(sq.contains(&Point::new(0.0, 0.5)));
        assert!(sq.contains(&Point::new(1.0, 1.0)));
        assert!(sq.contains(&Point::new(0.5, 0.5)));
        assert!(!sq.contains(&Point::new(1.1, 0.5)));
        assert!(!sq.contains(&Point::new(0.5, -0.1)));
    }

    #[test]
    fn generic_over_float_width() {
        let sq = unit_square::<f32>();
        assert!(sq.contains(&Point::new(0.25f32, 0.75)));
        assert!(!sq.contains(&Point::new(-0.25f32, 0.75)));
        let c = sq.centroid();
        assert!((c.lat - 0.5).abs() < 1e-6 && (c.lon - 0.5).abs() < 1e-6);
    }

    /// Winding-number oracle, independent of the ray-casting code path.
    fn winding_contains(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let cross = (b.1 - a.1) * (p.0 - a.0) - (b.0 - a.0) * (p.1 - a.1);
            if cross == 0.0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
            {
                return true;
            }
        }
        let mut wn = 0i32;
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            // (lat, lon) -> y = lat, x = lon
            let is_left = (b.1 - a.1) * (p.0 - a.0) - (p.1 - a.1) * (b.0 - a.0);
            if a.0 <= p.0 {
                if b.0 > p.0 && is_left > 0.0 {
                    wn += 1;
                }
            } else if b.0 <= p.0 && is_left < 0.0 {
                wn -= 1;
            }
        }
        wn != 0
    }

    #[test]
    fn agrees_with_winding_oracle_on_probe_grid() {
        // concave "L" shape, lat/lon pairs
        let raw = [(0.0, 0.0), (0.0, 2.0), (1.0, 2.0), (1.0, 1.0), (2.0, 1.0), (2.0, 0.0)];
        let poly = Polygon::new(raw.iter().map(|&(la, lo)| Point::new(la, lo)).collect()).unwrap();
        let mut disagreements = 0;
        for i in 0..100 {
            for j in 0..100 {
                let p = (-0.5 + 3.0 * i as f64 / 99.0, -0.5 + 3.0 * j as f64 / 99.0);
                if poly.contains(&Point::new(p.0, p.1)) != winding_contains(&raw, p) {
                    disagreements += 1;
                }
            }
        }
        assert_eq!(disagreements, 0);
    }
}
