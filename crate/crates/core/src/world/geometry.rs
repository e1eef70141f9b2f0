use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn from_angle(theta: f64) -> Point {
        Point::new(theta.cos(), theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(a: Point, b: Point) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    /// Distance along the ray `origin + t * dir` to this segment, if hit.
    pub fn ray_hit(&self, origin: Point, dir: Point) -> Option<f64> {
        let e = self.b.sub(self.a);
        let denom = dir.cross(e);
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = self.a.sub(origin);
        let t = w.cross(e) / denom;
        let s = w.cross(dir) / denom;
        if t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            Some(t)
        } else {
            None
        }
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let e = self.b.sub(self.a);
        let len2 = e.dot(e);
        if len2 == 0.0 {
            return p.dist(self.a);
        }
        let t = (p.sub(self.a).dot(e) / len2).clamp(0.0, 1.0);
        p.dist(self.a.add(e.scale(t)))
    }

    /// Signed side of `p` relative to the directed line a→b.
    pub fn side(&self, p: Point) -> f64 {
        self.b.sub(self.a).cross(p.sub(self.a))
    }

    /// Closed-segment intersection test; touching counts.
    pub fn intersects(&self, other: &Segment) -> bool {
        const EPS: f64 = 1e-12;
        let d1 = orient(other.a, other.b, self.a);
        let d2 = orient(other.a, other.b, self.b);
        let d3 = orient(self.a, self.b, other.a);
        let d4 = orient(self.a, self.b, other.b);
        if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS))
            && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS))
        {
            return true;
        }
        (d1.abs() <= EPS && on_segment(other, self.a))
            || (d2.abs() <= EPS && on_segment(other, self.b))
            || (d3.abs() <= EPS && on_segment(self, other.a))
            || (d4.abs() <= EPS && on_segment(self, other.b))
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(s: &Segment, p: Point) -> bool {
    const EPS: f64 = 1e-12;
    p.x >= s.a.x.min(s.b.x) - EPS
        && p.x <= s.a.x.max(s.b.x) + EPS
        && p.y >= s.a.y.min(s.b.y) - EPS
        && p.y <= s.a.y.max(s.b.y) + EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_perpendicular_wall() {
        let wall = Segment::new(Point::new(2.0, -1.0), Point::new(2.0, 1.0));
        let t = wall.ray_hit(Point::new(0.0, 0.0), Point::new(1.0, 0.0));
        assert_eq!(t, Some(2.0));
        assert_eq!(wall.ray_hit(Point::new(0.0, 0.0), Point::new(-1.0, 0.0)), None);
    }

    #[test]
    fn touching_segments_intersect() {
        let a = Segment::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0));
        let b = Segment::new(Point::new(1.0, 0.0), Point::new(1.0, 1.0));
        let c = Segment::new(Point::new(0.0, 0.5), Point::new(1.0, 0.5));
        assert!(a.intersects(&b));
        assert!(!a.intersects(&c));
        assert!(b.intersects(&c));
    }
}
