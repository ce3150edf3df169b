//! Closed non-uniform Catmull-Rom curves.
//!
//! Segment `i` runs from control point `i` to `i + 1` and is shaped by points
//! `i - 1 .. i + 2` (indices wrap). Knots follow the chordal power rule
//! `tau_{k+1} = tau_k + |p_{k+1} - p_k|^beta`; `beta = 0.5` is the centripetal variant.
//! Segments are evaluated in knot units, so derivatives are with respect to `tau`.

use crate::dynamics::StateBox;
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scalar::{count, lit, Real};

/// Default knot exponent (centripetal parameterization).
pub const CENTRIPETAL: f64 = 0.5;

/// Number of speed samples per segment used by [`speed_bounds`].
pub const DEFAULT_SPEED_SAMPLES: usize = 64;

/// Knot values for four consecutive control points.
pub fn knots<T: Real>(points: &[Vec2<T>; 4], beta: T) -> Result<[T; 4]> {
    let mut tau = [T::zero(); 4];
    for k in 0..3 {
        let chord = points[k + 1].distance(points[k]);
        if !(chord > T::zero()) {
            return Err(Error::DegenerateSegment {
                index: k,
                reason: "coincident consecutive control points".into(),
            });
        }
        tau[k + 1] = tau[k] + chord.powf(beta);
    }
    Ok(tau)
}

/// Position and derivatives with respect to the knot parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint<T> {
    pub point: Vec2<T>,
    pub d1: Vec2<T>,
    pub d2: Vec2<T>,
}

/// One cubic piece of a closed Catmull-Rom curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub index: usize,
    pub points: [Vec2<T>; 4],
    pub knots: [T; 4],
    // p(s) = a s^3 + b s^2 + c s + d with s = (tau - tau1) / span
    a: Vec2<T>,
    b: Vec2<T>,
    c: Vec2<T>,
    d: Vec2<T>,
}

impl<T: Real> Segment<T> {
    pub fn new(index: usize, points: [Vec2<T>; 4], beta: T) -> Result<Self> {
        let knots = knots(&points, beta).map_err(|e| match e {
            Error::DegenerateSegment { reason, .. } => Error::DegenerateSegment { index, reason },
            other => other,
        })?;
        let [p0, p1, p2, p3] = points;
        let [t0, t1, t2, t3] = knots;
        // tangents of the equivalent cubic Hermite form
        let m1 = (p1 - p0) / (t1 - t0) - (p2 - p0) / (t2 - t0) + (p2 - p1) / (t2 - t1);
        let m2 = (p2 - p1) / (t2 - t1) - (p3 - p1) / (t3 - t1) + (p3 - p2) / (t3 - t2);
        let span = t2 - t1;
        let (m1, m2) = (m1 * span, m2 * span);
        let two: T = lit(2.0);
        let three: T = lit(3.0);
        let a = p1 * two - p2 * two + m1 + m2;
        let b = p2 * three - p1 * three - m1 * two - m2;
        Ok(Self { index, points, knots, a, b, c: m1, d: p1 })
    }

    /// Start knot of the drawn span.
    pub fn t_start(&self) -> T {
        self.knots[1]
    }

    pub fn t_end(&self) -> T {
        self.knots[2]
    }

    pub fn span(&self) -> T {
        self.knots[2] - self.knots[1]
    }

    pub fn start(&self) -> Vec2<T> {
        self.points[1]
    }

    pub fn end(&self) -> Vec2<T> {
        self.points[2]
    }

    /// Evaluates the curve at knot value `t` in `[tau1, tau2]`.
    pub fn eval(&self, t: T) -> Result<CurvePoint<T>> {
        if !(t >= self.t_start() && t <= self.t_end()) {
            return Err(Error::Contract(format!(
                "parameter {t} outside segment span [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        Ok(self.at_fraction((t - self.t_start()) / self.span()))
    }

    /// Evaluates at the normalized position `s` in `[0, 1]` along the span.
    pub fn at_fraction(&self, s: T) -> CurvePoint<T> {
        let span = self.span();
        let two: T = lit(2.0);
        let three: T = lit(3.0);
        let six: T = lit(6.0);
        let point = ((self.a * s + self.b) * s + self.c) * s + self.d;
        let d1 = ((self.a * (three * s) + self.b * two) * s + self.c) / span;
        let d2 = (self.a * (six * s) + self.b * two) / (span * span);
        CurvePoint { point, d1, d2 }
    }

    pub fn point_at_fraction(&self, s: T) -> Vec2<T> {
        ((self.a * s + self.b) * s + self.c) * s + self.d
    }

    /// Barry-Goldman pyramid evaluation; an independent route to the same cubic.
    pub fn eval_pyramid(&self, t: T) -> Vec2<T> {
        let [p0, p1, p2, p3] = self.points;
        let [t0, t1, t2, t3] = self.knots;
        let lerp = |pa: Vec2<T>, pb: Vec2<T>, ta: T, tb: T| pa * ((tb - t) / (tb - ta)) + pb * ((t - ta) / (tb - ta));
        let a1 = lerp(p0, p1, t0, t1);
        let a2 = lerp(p1, p2, t1, t2);
        let a3 = lerp(p2, p3, t2, t3);
        let b1 = lerp(a1, a2, t0, t2);
        let b2 = lerp(a2, a3, t1, t3);
        lerp(b1, b2, t1, t2)
    }

    /// Bezier control polygon of the span; its convex hull contains the curve.
    pub fn bezier_points(&self) -> [Vec2<T>; 4] {
        let third: T = lit(1.0 / 3.0);
        let m1 = self.c;
        // derivative in s at s = 1
        let m2 = self.a * lit(3.0) + self.b * lit(2.0) + self.c;
        [self.d, self.d + m1 * third, self.end() - m2 * third, self.end()]
    }
}

/// Unit normal obtained by rotating the unit tangent by +90 degrees.
///
/// For counter-clockwise curves this points into the enclosed region.
pub fn inward_normal<T: Real>(segment: &Segment<T>, t: T) -> Result<Vec2<T>> {
    let cp = segment.eval(t)?;
    normal_from_tangent(cp.d1).ok_or_else(|| Error::DegenerateSegment {
        index: segment.index,
        reason: "vanishing tangent".into(),
    })
}

pub(crate) fn normal_from_tangent<T: Real>(d1: Vec2<T>) -> Option<Vec2<T>> {
    d1.normalized().map(Vec2::perp)
}

/// Axis-aligned box containing the whole drawn span of a segment.
///
/// The chord-aligned rectangle extended by a quarter chord length on every side is
/// joined with the box of the Bezier control polygon, which bounds the cubic by the
/// convex hull property.
pub fn segment_box<T: Real>(segment: &Segment<T>) -> StateBox<T> {
    let (p1, p2) = (segment.start(), segment.end());
    let chord = p2 - p1;
    let len = chord.norm();
    let h = len * lit(0.25);
    let u = chord / len;
    let v = u.perp();
    let corners = [
        p1 - u * h + v * h,
        p1 - u * h - v * h,
        p2 + u * h + v * h,
        p2 + u * h - v * h,
    ];
    let rect = StateBox::hull(corners).expect("four corners");
    let bez = StateBox::hull(segment.bezier_points()).expect("four control points");
    rect.union(&bez)
}

/// Curve midpoint of a segment and the half width of its span in knot units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnforcementPoint<T> {
    pub t_mid: T,
    pub point: Vec2<T>,
    pub half_width: T,
}

pub fn enforcement_point<T: Real>(segment: &Segment<T>) -> EnforcementPoint<T> {
    let half: T = lit(0.5);
    EnforcementPoint {
        t_mid: (segment.t_start() + segment.t_end()) * half,
        point: segment.point_at_fraction(half),
        half_width: segment.span() * half,
    }
}

/// Bounds on the parametric speed and acceleration over a segment span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedBounds<T> {
    pub min_speed: T,
    pub max_speed: T,
    pub max_accel: T,
}

/// Sound speed and acceleration bounds.
///
/// The acceleration is affine in `tau`, so its norm peaks at an endpoint. The speed
/// upper bound combines per-coordinate extrema of the quadratic derivative. The lower
/// bound takes the smallest of `samples + 1` sampled speeds minus the worst drift
/// between samples. A non-positive lower bound is reported as a degenerate segment.
pub fn speed_bounds<T: Real>(segment: &Segment<T>, samples: usize) -> Result<SpeedBounds<T>> {
    let samples = samples.max(1);
    let span = segment.span();
    let max_accel = segment.at_fraction(T::zero()).d2.norm().max(segment.at_fraction(T::one()).d2.norm());

    let mut max_abs = [T::zero(); 2];
    for (axis, slot) in max_abs.iter_mut().enumerate() {
        // derivative in s: 3a s^2 + 2b s + c
        let a = segment.a.component(axis) * lit(3.0);
        let b = segment.b.component(axis) * lit(2.0);
        let c = segment.c.component(axis);
        let mut m = c.abs().max((a + b + c).abs());
        if a != T::zero() {
            let s = -b / (a + a);
            if s > T::zero() && s < T::one() {
                m = m.max(((a * s + b) * s + c).abs());
            }
        }
        *slot = m / span;
    }
    let max_speed = max_abs[0].hypot(max_abs[1]);

    let n: T = count(samples);
    let sampled_min = (0..=samples)
        .map(|k| segment.at_fraction(count::<T>(k) / n).d1.norm())
        .fold(T::infinity(), T::min);
    let min_speed = sampled_min - max_accel * span / n;
    if !(min_speed > T::zero()) {
        return Err(Error::DegenerateSegment {
            index: segment.index,
            reason: format!("speed lower bound {min_speed} is not positive"),
        });
    }
    Ok(SpeedBounds { min_speed, max_speed, max_accel })
}

/// Signed area of a closed polygon (positive when counter-clockwise).
pub fn shoelace<T: Real>(points: &[Vec2<T>]) -> T {
    let n = points.len();
    if n < 3 {
        return T::zero();
    }
    let twice: T = (0..n).map(|i| points[i].cross(points[(i + 1) % n])).sum();
    twice * lit(0.5)
}

/// The set state: ordered control points of a closed curve, counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryState<T> {
    points: Vec<Vec2<T>>,
    beta: T,
}

impl<T: Real> BoundaryState<T> {
    pub fn new(points: Vec<Vec2<T>>, beta: T) -> Result<Self> {
        let n = points.len();
        if n < 4 {
            return Err(Error::InvalidBoundary(format!("need at least 4 control points, got {n}")));
        }
        if !(beta >= T::zero()) || !beta.is_finite() {
            return Err(Error::InvalidBoundary(format!("knot exponent {beta} must be finite and non-negative")));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidBoundary(format!("control point {i} is not finite")));
        }
        for i in 0..n {
            if !(points[i].distance(points[(i + 1) % n]) > T::zero()) {
                return Err(Error::DegenerateSegment {
                    index: i,
                    reason: format!("control points {i} and {} coincide", (i + 1) % n),
                });
            }
        }
        let area = shoelace(&points);
        if !(area > T::zero()) {
            return Err(Error::InvalidBoundary(format!(
                "control polygon must be counter-clockwise (signed area {area})"
            )));
        }
        Ok(Self { points, beta })
    }

    /// Builds from the stacked coordinate vector `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(values: &[T], beta: T) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(Error::Dimension { expected: values.len() + 1, got: values.len() });
        }
        Self::new(values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect(), beta)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec2<T>] {
        &self.points
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Control point indices `i - 1, i, i + 1, i + 2` of segment `i`, wrapped.
    pub fn segment_indices(&self, i: usize) -> [usize; 4] {
        let n = self.len();
        [(i + n - 1) % n, i % n, (i + 1) % n, (i + 2) % n]
    }

    pub fn segment_points(&self, i: usize) -> [Vec2<T>; 4] {
        self.segment_indices(i).map(|k| self.points[k])
    }

    pub fn segment(&self, i: usize) -> Result<Segment<T>> {
        if i >= self.len() {
            return Err(Error::Contract(format!("segment {i} out of range for {} points", self.len())));
        }
        Segment::new(i, self.segment_points(i), self.beta)
    }

    pub fn segments(&self) -> impl Iterator<Item = Result<Segment<T>>> + '_ {
        (0..self.len()).map(move |i| self.segment(i))
    }

    /// Dense samples, `samples_per_segment` per segment, starting at each control point.
    pub fn polyline(&self, samples_per_segment: usize) -> Result<Vec<Vec2<T>>> {
        let k = samples_per_segment.max(1);
        let denom: T = count(k);
        let mut out = Vec::with_capacity(self.len() * k);
        for seg in self.segments() {
            let seg = seg?;
            out.extend((0..k).map(|j| seg.point_at_fraction(count::<T>(j) / denom)));
        }
        Ok(out)
    }

    /// Enclosed area estimated from the dense polyline.
    pub fn area(&self, samples_per_segment: usize) -> Result<T> {
        Ok(shoelace(&self.polyline(samples_per_segment.max(2))?))
    }

    pub fn control_polygon_area(&self) -> T {
        shoelace(&self.points)
    }

    /// Largest control point coordinate magnitude, `|s|_inf`.
    pub fn max_abs_coordinate(&self) -> T {
        self.points.iter().map(|p| p.norm_inf()).fold(T::zero(), T::max)
    }

    /// Translates every control point by `offset`.
    pub fn translated(&self, offset: Vec2<T>) -> Self {
        Self { points: self.points.iter().map(|&p| p + offset).collect(), beta: self.beta }
    }

    /// Points placed on an ellipse level set `x^T P x = level`.
    ///
    /// `spacing` selects between equal polar angle steps and equal arc length.
    pub fn ellipse(p: [[T; 2]; 2], level: T, n: usize, spacing: Spacing, beta: T) -> Result<Self> {
        if !(level > T::zero()) {
            return Err(Error::InvalidBoundary("ellipse level must be positive".into()));
        }
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        if !(p[0][0] > T::zero() && det > T::zero()) || (p[0][1] - p[1][0]).abs() > lit(1e-12) {
            return Err(Error::InvalidBoundary("ellipse matrix must be symmetric positive definite".into()));
        }
        let radial = |theta: T| {
            let d = Vec2::new(theta.cos(), theta.sin());
            let q = p[0][0] * d.x * d.x + (p[0][1] + p[1][0]) * d.x * d.y + p[1][1] * d.y * d.y;
            d * (level / q).sqrt()
        };
        let tau = T::PI() + T::PI();
        let points = match spacing {
            Spacing::Angle => (0..n).map(|k| radial(tau * count::<T>(k) / count::<T>(n))).collect(),
            Spacing::ArcLength => {
                let fine = 64 * n.max(4);
                let dense: Vec<Vec2<T>> = (0..fine).map(|k| radial(tau * count::<T>(k) / count::<T>(fine))).collect();
                resample_closed(&dense, n)
            }
        };
        Self::new(points, beta)
    }

    /// Circle of the given radius about `center`, equal angle steps.
    pub fn circle(center: Vec2<T>, radius: T, n: usize, beta: T) -> Result<Self> {
        let tau = T::PI() + T::PI();
        let points = (0..n)
            .map(|k| {
                let a = tau * count::<T>(k) / count::<T>(n);
                center + Vec2::new(a.cos(), a.sin()) * radius
            })
            .collect();
        Self::new(points, beta)
    }
}

/// How points are distributed along an initial ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Angle,
    ArcLength,
}

/// Resamples a closed polyline at `n` points equally spaced in arc length.
pub fn resample_closed<T: Real>(dense: &[Vec2<T>], n: usize) -> Vec<Vec2<T>> {
    let m = dense.len();
    let lengths: Vec<T> = (0..m).map(|i| dense[(i + 1) % m].distance(dense[i])).collect();
    let total: T = lengths.iter().copied().sum();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut acc = T::zero();
    for k in 0..n {
        let target = total * count::<T>(k) / count::<T>(n);
        while seg + 1 < m && acc + lengths[seg] < target {
            acc = acc + lengths[seg];
            seg += 1;
        }
        let frac = if lengths[seg] > T::zero() { (target - acc) / lengths[seg] } else { T::zero() };
        out.push(dense[seg] + (dense[(seg + 1) % m] - dense[seg]) * frac);
    }
    out
}
