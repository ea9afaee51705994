//! Small planar geometry helpers on cell-coordinate points.

use serde::{Deserialize, Serialize};

use crate::field::Point;

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Distance from `p` to segment `ab` and the clamped parameter of the foot point.
pub fn point_segment(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (dist(p, add(a, scale(ab, t))), t)
}

/// Distance from `p` to a polyline and the index of the closest segment.
pub fn point_polyline(p: Point, line: &[Point]) -> (f64, usize) {
    if line.len() == 1 {
        return (dist(p, line[0]), 0);
    }
    let mut best = (f64::INFINITY, 0);
    for (k, seg) in line.windows(2).enumerate() {
        let (d, _) = point_segment(p, seg[0], seg[1]);
        if d < best.0 {
            best = (d, k);
        }
    }
    best
}

pub fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|s| dist(s[0], s[1])).sum()
}

/// Point at arc length `s` (clamped to the ends).
pub fn point_at_length(line: &[Point], s: f64) -> Point {
    let mut acc = 0.0;
    for seg in line.windows(2) {
        let l = dist(seg[0], seg[1]);
        if acc + l >= s && l > 0.0 {
            let t = ((s - acc) / l).clamp(0.0, 1.0);
            return add(seg[0], scale(sub(seg[1], seg[0]), t));
        }
        acc += l;
    }
    *line.last().expect("non-empty polyline")
}

/// `n >= 2` points equally spaced in arc length, including both ends.
pub fn resample_count(line: &[Point], n: usize) -> Vec<Point> {
    let total = polyline_length(line);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    let mut acc = 0.0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 1 < line.len() - 1 && acc + dist(line[seg], line[seg + 1]) < s {
            acc += dist(line[seg], line[seg + 1]);
            seg += 1;
        }
        let l = dist(line[seg], line[seg + 1]);
        let t = if l > 0.0 { ((s - acc) / l).clamp(0.0, 1.0) } else { 0.0 };
        out.push(add(line[seg], scale(sub(line[seg + 1], line[seg]), t)));
    }
    out
}

/// Resamples with spacing close to `spacing`.
pub fn resample_spacing(line: &[Point], spacing: f64) -> Vec<Point> {
    let n = ((polyline_length(line) / spacing).ceil() as usize).max(1) + 1;
    resample_count(line, n)
}

#[inline]
pub fn bezier2(p0: Point, c: Point, p2: Point, t: f64) -> Point {
    let u = 1.0 - t;
    [
        u * u * p0[0] + 2.0 * u * t * c[0] + t * t * p2[0],
        u * u * p0[1] + 2.0 * u * t * c[1] + t * t * p2[1],
    ]
}

/// Quadratic Bezier sampled at `n` uniform parameter values.
pub fn sample_bezier(p0: Point, c: Point, p2: Point, n: usize) -> Vec<Point> {
    (0..n).map(|k| bezier2(p0, c, p2, k as f64 / (n - 1) as f64)).collect()
}

/// Intersection of lines `p + s*u` and `q + r*v`, `None` when parallel.
pub fn line_intersection(p: Point, u: Point, q: Point, v: Point) -> Option<Point> {
    let den = u[0] * v[1] - u[1] * v[0];
    if den.abs() < 1e-12 {
        return None;
    }
    let w = sub(q, p);
    let s = (w[0] * v[1] - w[1] * v[0]) / den;
    Some(add(p, scale(u, s)))
}

/// Heading of the vector `a -> b` in radians.
pub fn heading(a: Point, b: Point) -> f64 {
    (b[1] - a[1]).atan2(b[0] - a[0])
}

/// Grid border a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    West,
    East,
    South,
    North,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::East, Side::North, Side::West, Side::South];

    /// Unit vector pointing out of the grid through this side.
    pub fn outward(self) -> Point {
        match self {
            Side::East => [1.0, 0.0],
            Side::North => [0.0, 1.0],
            Side::West => [-1.0, 0.0],
            Side::South => [0.0, -1.0],
        }
    }

    /// Counter-clockwise quarter turns applied `k` times.
    pub fn rotated(self, k: usize) -> Side {
        let idx = Side::ALL.iter().position(|&s| s == self).expect("listed");
        Side::ALL[(idx + k) % 4]
    }

    /// Closest border of a `width x height` grid.
    pub fn nearest(p: Point, width: f64, height: f64) -> Side {
        let cands = [
            (p[0], Side::West),
            (width - p[0], Side::East),
            (p[1], Side::South),
            (height - p[1], Side::North),
        ];
        cands
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|c| c.1)
            .expect("four candidates")
    }
}
