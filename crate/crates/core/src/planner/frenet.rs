//! Reference-path geometry and the boundary-value polynomials used to sample
//! candidates in the path's curvilinear frame.

use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("reference path needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("reference path segment {0} has zero length")]
    DegenerateSegment(usize),
    #[error("point ({x:.3}, {y:.3}) projects beyond the {end} of the reference path")]
    BeyondEnds { x: f64, y: f64, end: &'static str },
}

/// Natural cubic spline through `(t_k, y_k)`.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl Spline {
    fn new(t: Vec<f64>, y: Vec<f64>) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations.
            let k = n - 2;
            let (mut c, mut d) = (vec![0.0; k], vec![0.0; k]);
            for i in 0..k {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                let diag = 2.0 * (h0 + h1);
                let rhs = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
                let (sub, sup) = (h0, h1);
                if i == 0 {
                    c[i] = sup / diag;
                    d[i] = rhs / diag;
                } else {
                    let den = diag - sub * c[i - 1];
                    c[i] = sup / den;
                    d[i] = (rhs - sub * d[i - 1]) / den;
                }
            }
            for i in (0..k).rev() {
                m[i + 1] = d[i] - if i + 1 < k { c[i] * m[i + 2] } else { 0.0 };
            }
        }
        Self { t, y, m }
    }

    fn interval(&self, s: f64) -> usize {
        let n = self.t.len();
        match self.t.partition_point(|&k| k <= s) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value and first two derivatives. Outside the knot range the end
    /// segments continue linearly.
    fn eval(&self, s: f64) -> [f64; 3] {
        let n = self.t.len();
        let (lo, hi) = (self.t[0], self.t[n - 1]);
        if s < lo || s > hi {
            let edge = if s < lo { lo } else { hi };
            let [y, dy, _] = self.eval(edge);
            return [y + dy * (s - edge), dy, 0.0];
        }
        let i = self.interval(s);
        let h = self.t[i + 1] - self.t[i];
        let a = (self.t[i + 1] - s) / h;
        let b = (s - self.t[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let y = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let dy = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let ddy = a * m0 + b * m1;
        [y, dy, ddy]
    }
}

/// Smooth reference path parameterized by chord length through its points.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    x: Spline,
    y: Spline,
    length: f64,
}

/// Position, unit tangent and unit left normal at a path parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathFrame {
    pub position: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub heading: f64,
    pub curvature: f64,
}

impl ReferencePath {
    pub fn new(points: &[Vec2]) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::TooShort(points.len()));
        }
        let mut s = vec![0.0];
        for (i, w) in points.windows(2).enumerate() {
            let l = (w[1] - w[0]).norm();
            if l <= 0.0 {
                return Err(PathError::DegenerateSegment(i));
            }
            s.push(s[i] + l);
        }
        let length = s[s.len() - 1];
        Ok(Self {
            x: Spline::new(s.clone(), points.iter().map(|p| p.x).collect()),
            y: Spline::new(s, points.iter().map(|p| p.y).collect()),
            length,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn position(&self, s: f64) -> Vec2 {
        Vec2::new(self.x.eval(s)[0], self.y.eval(s)[0])
    }

    pub fn frame(&self, s: f64) -> PathFrame {
        let [x, dx, ddx] = self.x.eval(s);
        let [y, dy, ddy] = self.y.eval(s);
        let speed = dx.hypot(dy);
        let tangent = Vec2::new(dx / speed, dy / speed);
        PathFrame {
            position: Vec2::new(x, y),
            tangent,
            normal: tangent.perp(),
            heading: dy.atan2(dx),
            curvature: (dx * ddy - dy * ddx) / (speed * speed * speed),
        }
    }

    /// Cartesian point at path parameter `s`, lateral offset `d` (left
    /// positive).
    pub fn to_cartesian(&self, s: f64, d: f64) -> Vec2 {
        let f = self.frame(s);
        f.position + f.normal * d
    }

    /// Closest path parameter and signed lateral offset of `p`.
    pub fn project(&self, p: Vec2) -> Result<(f64, f64), PathError> {
        const COARSE: usize = 16;
        let knots = &self.x.t;
        let mut best = (f64::INFINITY, 0.0);
        for w in knots.windows(2) {
            for k in 0..=COARSE {
                let s = w[0] + (w[1] - w[0]) * k as f64 / COARSE as f64;
                let dist = (self.position(s) - p).norm();
                if dist < best.0 {
                    best = (dist, s);
                }
            }
        }
        let mut s = best.1;
        for _ in 0..20 {
            let [x, dx, ddx] = self.x.eval(s);
            let [y, dy, ddy] = self.y.eval(s);
            let (ex, ey) = (x - p.x, y - p.y);
            let g = ex * dx + ey * dy;
            let h = dx * dx + dy * dy + ex * ddx + ey * ddy;
            if h <= 0.0 {
                break;
            }
            let step = g / h;
            s = (s - step).clamp(0.0, self.length);
            if step.abs() < 1e-12 {
                break;
            }
        }
        let f = self.frame(s);
        let offset = p - f.position;
        let along = offset.dot(f.tangent);
        const TOL: f64 = 1e-6;
        if s <= 0.0 && along < -TOL {
            return Err(PathError::BeyondEnds { x: p.x, y: p.y, end: "start" });
        }
        if s >= self.length && along > TOL {
            return Err(PathError::BeyondEnds { x: p.x, y: p.y, end: "end" });
        }
        Ok((s, offset.dot(f.normal)))
    }
}

/// Polynomial `c0 + c1 t + ... + c5 t^5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polynomial {
    pub coeffs: [f64; 6],
}

impl Polynomial {
    /// Value (`k = 0`) or `k`-th derivative at `t`.
    pub fn eval(&self, t: f64, k: usize) -> f64 {
        let mut acc = 0.0;
        for i in (k..6).rev() {
            let falling: f64 = (i - k + 1..=i).map(|v| v as f64).product();
            acc = acc * t + falling * self.coeffs[i];
        }
        acc
    }

    /// Quintic matching position, velocity and acceleration at 0 and `t`.
    pub fn quintic(start: [f64; 3], end: [f64; 3], t: f64) -> Self {
        let [x0, v0, a0] = start;
        let [x1, v1, a1] = end;
        let (t2, t3) = (t * t, t * t * t);
        let c3a = x1 - x0 - v0 * t - 0.5 * a0 * t2;
        let c3b = v1 - v0 - a0 * t;
        let c3c = a1 - a0;
        let c3 = (10.0 * c3a - 4.0 * c3b * t + 0.5 * c3c * t2) / t3;
        let c4 = (-15.0 * c3a + 7.0 * c3b * t - c3c * t2) / (t3 * t);
        let c5 = (6.0 * c3a - 3.0 * c3b * t + 0.5 * c3c * t2) / (t3 * t2);
        Self { coeffs: [x0, v0, 0.5 * a0, c3, c4, c5] }
    }

    /// Quartic with free end position matching velocity and acceleration at
    /// 0 and `t`.
    pub fn quartic(start: [f64; 3], end_velocity: f64, end_acceleration: f64, t: f64) -> Self {
        let [x0, v0, a0] = start;
        let b1 = end_velocity - v0 - a0 * t;
        let b2 = end_acceleration - a0;
        let c3 = (3.0 * b1 - b2 * t) / (3.0 * t * t);
        let c4 = (-2.0 * b1 + b2 * t) / (4.0 * t * t * t);
        Self { coeffs: [x0, v0, 0.5 * a0, c3, c4, 0.0] }
    }
}
