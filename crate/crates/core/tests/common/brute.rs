//! Exact segment test against a rectangle by edge crossings.

use v2x_bcast_ack::geometry::{Rect, Vec2};

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Hits the rectangle iff an endpoint lies inside or the segment crosses an edge.
pub fn brute_hits(r: &Rect, a: Vec2, b: Vec2) -> bool {
    let inside = |p: Vec2| p.x >= r.min.x && p.x <= r.max.x && p.y >= r.min.y && p.y <= r.max.y;
    if inside(a) || inside(b) {
        return true;
    }
    let c = [
        r.min,
        Vec2::new(r.max.x, r.min.y),
        r.max,
        Vec2::new(r.min.x, r.max.y),
    ];
    (0..4).any(|i| segments_cross(a, b, c[i], c[(i + 1) % 4]))
}
