//! Angles on the projective line `[0, pi)` and the action of 2x2 matrices
//! on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::matset::Matrix;

/// Reduces an angle to `[0, pi)`.
pub fn wrap(alpha: f64) -> f64 {
    let r = alpha.rem_euclid(PI);
    if r >= PI { 0.0 } else { r }
}

/// Projective angle of a nonzero vector.
pub fn angle_of(x: f64, y: f64) -> f64 {
    wrap(y.atan2(x))
}

pub fn direction(alpha: f64) -> (f64, f64) {
    let (s, c) = alpha.sin_cos();
    (c, s)
}

pub fn apply(m: &Matrix, v: (f64, f64)) -> (f64, f64) {
    (
        m[(0, 0)] * v.0 + m[(0, 1)] * v.1,
        m[(1, 0)] * v.0 + m[(1, 1)] * v.1,
    )
}

/// Image of the direction `alpha` under `m`.
pub fn image_angle(m: &Matrix, alpha: f64) -> f64 {
    let (x, y) = apply(m, direction(alpha));
    angle_of(x, y)
}

/// `log(||m u|| / ||u||)` for the unit vector at angle `alpha`.
pub fn log_stretch(m: &Matrix, alpha: f64) -> f64 {
    let (x, y) = apply(m, direction(alpha));
    x.hypot(y).ln()
}

/// Counterclockwise distance from `a` to `b` on the projective line, in `[0, pi)`.
pub fn ccw_distance(a: f64, b: f64) -> f64 {
    wrap(b - a)
}

/// `|sin|` of the angle between two directions; a metric on the projective line.
pub fn sine_distance(a: f64, b: f64) -> f64 {
    (a - b).sin().abs()
}

/// Continuous lift of the projective action of `m` (with `det m > 0`) to
/// the real line: increasing, and commuting with translation by `pi`.
pub fn lifted_image_angle(m: &Matrix, alpha: f64) -> f64 {
    let k = (alpha / PI).floor();
    let r = alpha - k * PI;
    let (x0, y0) = apply(m, (1.0, 0.0));
    let base = y0.atan2(x0);
    let (x, y) = apply(m, direction(r));
    let mut delta = (y.atan2(x) - base).rem_euclid(2.0 * PI);
    // The true increment lies in [0, pi); values near 2 pi are rounding.
    if delta > 1.5 * PI {
        delta -= 2.0 * PI;
    }
    base + delta + k * PI
}

/// Closed arc `[start, start + len]` on the projective line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: f64,
    pub len: f64,
}

impl Arc {
    pub fn new(start: f64, len: f64) -> Self {
        Self {
            start: wrap(start),
            len: len.clamp(0.0, PI),
        }
    }

    pub fn centered(center: f64, half_width: f64) -> Self {
        Self::new(center - half_width, 2.0 * half_width)
    }

    pub fn end(&self) -> f64 {
        wrap(self.start + self.len)
    }

    pub fn contains(&self, alpha: f64) -> bool {
        self.len >= PI || ccw_distance(self.start, alpha) <= self.len
    }

    /// Arc containing `inner`, if any, with the smaller of the two gaps
    /// between their endpoints.
    pub fn gap_to(&self, inner: &Arc) -> Option<f64> {
        let lead = ccw_distance(self.start, inner.start);
        if lead + inner.len <= self.len {
            Some(lead.min(self.len - lead - inner.len))
        } else {
            None
        }
    }

    pub fn fattened(&self, eta: f64) -> Arc {
        Arc::new(self.start - eta, self.len + 2.0 * eta)
    }

    /// Image under `m`. The projective action is a homeomorphism, so the
    /// image is the arc between the endpoint images (reversed when
    /// `det m < 0`).
    pub fn image(&self, m: &Matrix) -> Arc {
        let a = image_angle(m, self.start);
        let b = image_angle(m, self.start + self.len);
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        if self.len >= PI {
            return Arc::new(0.0, PI);
        }
        let (from, to) = if det > 0.0 { (a, b) } else { (b, a) };
        Arc::new(from, ccw_distance(from, to))
    }

    /// Uniformly spaced nodes including both endpoints.
    pub fn nodes(&self, count: usize) -> Vec<f64> {
        if count <= 1 {
            return vec![self.start];
        }
        (0..count)
            .map(|i| wrap(self.start + self.len * i as f64 / (count - 1) as f64))
            .collect()
    }
}

/// Merges arcs into a sorted union of disjoint arcs. Returns a single full
/// arc when the union covers the line.
pub fn merge_arcs(arcs: &[Arc]) -> Vec<Arc> {
    if arcs.iter().any(|a| a.len >= PI) {
        return vec![Arc::new(0.0, PI)];
    }
    // Cut at 0 into plain intervals.
    let mut iv: Vec<(f64, f64)> = Vec::new();
    for a in arcs {
        let s = a.start;
        let e = s + a.len;
        if e <= PI {
            iv.push((s, e));
        } else {
            iv.push((s, PI));
            iv.push((0.0, e - PI));
        }
    }
    iv.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (s, e) in iv {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    if merged.len() == 1 && merged[0].0 <= 0.0 && merged[0].1 >= PI {
        return vec![Arc::new(0.0, PI)];
    }
    // Rejoin across the cut.
    if merged.len() > 1 && merged[0].0 <= 0.0 && merged.last().unwrap().1 >= PI {
        let first = merged.remove(0);
        let last = merged.last_mut().unwrap();
        last.1 = PI + first.1;
    }
    merged
        .into_iter()
        .map(|(s, e)| Arc { start: wrap(s), len: (e - s).min(PI) })
        .collect()
}

pub fn total_length(arcs: &[Arc]) -> f64 {
    arcs.iter().map(|a| a.len).sum()
}
