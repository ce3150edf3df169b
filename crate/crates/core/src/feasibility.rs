//! Boundary flow margins and their per-segment certificates.

use rayon::prelude::*;

use crate::curve::{enforcement_point, normal_from_tangent, segment_box, speed_bounds, BoundaryState, Segment, DEFAULT_SPEED_SAMPLES};
use crate::dynamics::{StateBox, SystemModel};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::scalar::{lit, Real};

/// Minimizer of a linear cost over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub minimizer: Vec<T>,
    pub value: T,
    /// Coordinates whose cost was exactly zero.
    pub tie_mask: Vec<bool>,
}

fn check_box<T: Real>(lo: &[T], hi: &[T]) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::Dimension { expected: lo.len(), got: hi.len() });
    }
    match lo.iter().zip(hi).position(|(l, h)| !(l <= h)) {
        Some(index) => Err(Error::InfeasibleBox { index }),
        None => Ok(()),
    }
}

/// Closed-form `min c^T w` subject to `lo <= w <= hi`.
///
/// Zero-cost coordinates take the smallest-magnitude feasible value.
pub fn solve_box_lp<T: Real>(c: &[T], lo: &[T], hi: &[T]) -> Result<LpSolution<T>> {
    check_box(lo, hi)?;
    if c.len() != lo.len() {
        return Err(Error::Dimension { expected: lo.len(), got: c.len() });
    }
    let mut minimizer = Vec::with_capacity(c.len());
    let mut tie_mask = Vec::with_capacity(c.len());
    let mut value = T::zero();
    for ((&ci, &l), &h) in c.iter().zip(lo).zip(hi) {
        let w = if ci > T::zero() {
            l
        } else if ci < T::zero() {
            h
        } else {
            T::zero().max(l).min(h)
        };
        tie_mask.push(ci == T::zero());
        value = value + ci * w;
        minimizer.push(w);
    }
    Ok(LpSolution { minimizer, value, tie_mask })
}

/// Global Lipschitz constant of the box LP value with respect to its cost vector.
pub fn lp_lipschitz<T: Real>(lo: &[T], hi: &[T]) -> Result<T> {
    check_box(lo, hi)?;
    Ok(lo.iter().zip(hi).map(|(l, h)| { let m = l.abs().max(h.abs()); m * m }).sum::<T>().sqrt())
}

/// Largest inward flow `n^T (f(x) + g(x) u)` over admissible inputs, and an input attaining it.
///
/// `n` must be a unit vector.
pub fn b_star<T: Real>(system: &SystemModel<T>, x: Vec2<T>, n: Vec2<T>) -> Result<(T, Vec<T>)> {
    if !((n.norm() - T::one()).abs() <= lit(1e-9)) {
        return Err(Error::Contract(format!("normal must have unit length, got |n| = {}", n.norm())));
    }
    Ok(flow_margin(system, x, n))
}

/// Unnormalized form of [`b_star`]; positively homogeneous in `n`.
pub fn flow_margin<T: Real>(system: &SystemModel<T>, x: Vec2<T>, n: Vec2<T>) -> (T, Vec<T>) {
    let drift = n.dot(system.f(x));
    let cost: Vec<T> = system.g(x).iter().map(|col| -n.dot(*col)).collect();
    let lp = solve_box_lp(&cost, system.u_min(), system.u_max()).expect("input box validated at construction");
    (drift - lp.value, lp.minimizer)
}

/// Bound used for the turning rate of the unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LipschitzMode {
    /// `|n'| <= |p''| / |p'|`.
    #[default]
    Sound,
    /// Twice the sound rate.
    Conservative,
}

impl LipschitzMode {
    pub fn normal_rate_factor<T: Real>(self) -> T {
        match self {
            LipschitzMode::Sound => T::one(),
            LipschitzMode::Conservative => lit(2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CertifyOptions {
    pub mode: LipschitzMode,
    /// Speed samples per segment for the lower speed bound.
    pub speed_samples: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { mode: LipschitzMode::Sound, speed_samples: DEFAULT_SPEED_SAMPLES }
    }
}

/// Knot-unit Lipschitz constant of `b*` along a segment.
///
/// The normal turns at most at rate `|p''| / |p'|`, the state moves at most at rate
/// `|p'|`, and the drift and input matrix are bounded on the segment box.
pub fn segment_lipschitz<T: Real>(system: &SystemModel<T>, segment: &Segment<T>) -> Result<T> {
    segment_lipschitz_with(system, segment, &CertifyOptions::default())
}

pub fn segment_lipschitz_with<T: Real>(system: &SystemModel<T>, segment: &Segment<T>, options: &CertifyOptions) -> Result<T> {
    let sb = speed_bounds(segment, options.speed_samples)?;
    let d = system.interval_data(&segment_box(segment));
    let l_n = options.mode.normal_rate_factor::<T>() * sb.max_accel / sb.min_speed;
    let l_nf = l_n * d.m_f + d.l_f * sb.max_speed;
    let l_ng = l_n * d.m_g + d.l_g * sb.max_speed;
    let l_lp = lp_lipschitz(system.u_min(), system.u_max())?;
    Ok(l_nf + l_lp * l_ng)
}

/// Certified flow margin of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCertificate<T> {
    pub index: usize,
    /// Curve midpoint where the margin is enforced.
    pub point: Vec2<T>,
    pub normal: Vec2<T>,
    pub t_mid: T,
    pub b_star: T,
    pub u_star: Vec<T>,
    pub l_b_tau: T,
    pub half_width: T,
    pub margin: T,
}

impl<T: Real> SegmentCertificate<T> {
    pub fn certified(&self) -> bool {
        self.margin >= T::zero()
    }
}

/// Certifies a standalone segment.
pub fn certify_segment_points<T: Real>(system: &SystemModel<T>, segment: &Segment<T>) -> Result<SegmentCertificate<T>> {
    certify_segment_with(system, segment, &CertifyOptions::default())
}

pub fn certify_segment_with<T: Real>(system: &SystemModel<T>, segment: &Segment<T>, options: &CertifyOptions) -> Result<SegmentCertificate<T>> {
    let l_b_tau = segment_lipschitz_with(system, segment, options)?;
    let e = enforcement_point(segment);
    let cp = segment.at_fraction(lit(0.5));
    let normal = normal_from_tangent(cp.d1).ok_or_else(|| Error::DegenerateSegment {
        index: segment.index,
        reason: "vanishing tangent at the enforcement point".into(),
    })?;
    let (b, u_star) = flow_margin(system, e.point, normal);
    Ok(SegmentCertificate {
        index: segment.index,
        point: e.point,
        normal,
        t_mid: e.t_mid,
        b_star: b,
        u_star,
        l_b_tau,
        half_width: e.half_width,
        margin: b - l_b_tau * e.half_width,
    })
}

/// Certificate of segment `i` of a boundary.
pub fn certify_segment<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, i: usize) -> Result<SegmentCertificate<T>> {
    certify_segment_points(system, &boundary.segment(i)?)
}

/// Certificates of every segment, computed in parallel and returned in index order.
pub fn certify_all<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>) -> Vec<Result<SegmentCertificate<T>>> {
    certify_all_with(system, boundary, &CertifyOptions::default())
}

pub fn certify_all_with<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, options: &CertifyOptions) -> Vec<Result<SegmentCertificate<T>>> {
    (0..boundary.len())
        .into_par_iter()
        .map(|i| certify_segment_with(system, &boundary.segment(i)?, options))
        .collect()
}

/// Finite-difference step for gradients with respect to the set state.
pub fn fd_step<T: Real>(boundary: &BoundaryState<T>) -> T {
    lit::<T>(1e-6) * (T::one() + boundary.max_abs_coordinate())
}

/// Central-difference gradient of a per-segment quantity that depends only on the
/// four control points of segment `i`. Entries for other points are exactly zero.
pub fn segment_gradient<T, F>(boundary: &BoundaryState<T>, i: usize, h: T, value: F) -> Result<Vec<T>>
where
    T: Real,
    F: Fn(&Segment<T>) -> Result<T>,
{
    if i >= boundary.len() {
        return Err(Error::Contract(format!("segment {i} out of range for {} points", boundary.len())));
    }
    let idx = boundary.segment_indices(i);
    let base = boundary.segment_points(i);
    let eval = |k: usize, axis: usize, delta: T| -> Result<T> {
        let mut pts = base;
        *pts[k].component_mut(axis) = pts[k].component(axis) + delta;
        value(&Segment::new(i, pts, boundary.beta())?)
    };
    let mut grad = vec![T::zero(); 2 * boundary.len()];
    for (k, &p) in idx.iter().enumerate() {
        for axis in 0..2 {
            let d = (eval(k, axis, h)? - eval(k, axis, -h)?) / (h + h);
            grad[2 * p + axis] = d;
        }
    }
    Ok(grad)
}

/// Gradient of the certified margin of segment `i` with respect to all control point coordinates.
pub fn grad_margin<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, i: usize) -> Result<Vec<T>> {
    grad_margin_with_step(system, boundary, i, fd_step(boundary))
}

pub fn grad_margin_with_step<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, i: usize, h: T) -> Result<Vec<T>> {
    grad_margin_with(system, boundary, i, h, &CertifyOptions::default())
}

pub fn grad_margin_with<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, i: usize, h: T, options: &CertifyOptions) -> Result<Vec<T>> {
    segment_gradient(boundary, i, h, |seg| Ok(certify_segment_with(system, seg, options)?.margin))
}

/// Smallest slack between the segment box and the faces of `safe`; negative when the box leaves it.
pub fn containment_margin<T: Real>(segment: &Segment<T>, safe: &StateBox<T>) -> T {
    let b = segment_box(segment);
    [
        b.lower.x - safe.lower.x,
        safe.upper.x - b.upper.x,
        b.lower.y - safe.lower.y,
        safe.upper.y - b.upper.y,
    ]
    .into_iter()
    .fold(T::infinity(), T::min)
}

pub fn grad_containment<T: Real>(boundary: &BoundaryState<T>, i: usize, safe: &StateBox<T>) -> Result<Vec<T>> {
    segment_gradient(boundary, i, fd_step(boundary), |seg| Ok(containment_margin(seg, safe)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::BoundaryState;
    use crate::dynamics::{ControlAffine, IntervalData, InputMatrix, Mat2};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn di() -> SystemModel<f64> {
        SystemModel::double_integrator(1.0).unwrap()
    }

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    fn corner_min(c: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        (0..1usize << c.len())
            .map(|mask| (0..c.len()).map(|i| c[i] * if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    struct Still;

    impl ControlAffine<f64> for Still {
        fn input_dim(&self) -> usize {
            1
        }
        fn drift(&self, _x: Vec2<f64>) -> Vec2<f64> {
            Vec2::zero()
        }
        fn input_matrix(&self, _x: Vec2<f64>) -> InputMatrix<f64> {
            vec![v(0.3, 0.7)]
        }
        fn drift_jacobian(&self, _x: Vec2<f64>) -> Mat2<f64> {
            [[0.0; 2]; 2]
        }
        fn input_jacobians(&self, _x: Vec2<f64>) -> Vec<Mat2<f64>> {
            vec![[[0.0; 2]; 2]]
        }
        fn interval_data(&self, _b: &StateBox<f64>) -> IntervalData<f64> {
            IntervalData { m_f: 0.0, l_f: 0.0, m_g: 0.7615773105863909, l_g: 0.0 }
        }
    }

    #[test]
    fn box_lp_sign_rule() {
        let s = solve_box_lp(&[1.0, -2.0], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.minimizer, vec![-1.0, 1.0]);
        assert_eq!(s.value, -3.0);
        assert_eq!(s.tie_mask, vec![false, false]);
        let s = solve_box_lp(&[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.minimizer, vec![0.0, 0.0]);
        assert_eq!(s.value, 0.0);
        assert_eq!(s.tie_mask, vec![true, true]);
        let s = solve_box_lp(&[0.0], &[0.5], &[2.0]).unwrap();
        assert_eq!(s.minimizer, vec![0.5]);
        assert!(matches!(solve_box_lp(&[1.0], &[1.0], &[0.0]), Err(Error::InfeasibleBox { index: 0 })));
    }

    #[test]
    fn lp_lipschitz_values() {
        assert!((lp_lipschitz(&[-1.0, -1.0], &[1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(lp_lipschitz(&[-2.0], &[1.0]).unwrap(), 2.0);
        assert!(lp_lipschitz(&[0.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn b_star_double_integrator_cases() {
        let (b, u) = b_star(&di(), v(0.0, 2.0), v(0.0, -1.0)).unwrap();
        assert_eq!((b, u), (1.0, vec![-1.0]));
        let (b, u) = b_star(&di(), v(0.9, 0.5), v(-1.0, 0.0)).unwrap();
        assert_eq!((b, u), (-0.5, vec![0.0]));
        let r = 0.5f64.sqrt();
        let (b, u) = b_star(&di(), v(0.5, 1.0), v(-r, -r)).unwrap();
        assert!(b.abs() < 1e-15);
        assert_eq!(u, vec![-1.0]);
        assert!(matches!(b_star(&di(), v(0.0, 0.0), v(2.0, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn b_star_matches_input_grid() {
        for (x, n) in [(v(0.0, 2.0), v(0.0, -1.0)), (v(0.9, 0.5), v(-1.0, 0.0)), (v(-0.3, 0.7), v(0.6, -0.8))] {
            let grid = (0..=10_000)
                .map(|k| -1.0 + 2.0 * k as f64 / 10_000.0)
                .map(|u| n.dot(di().flow(x, &[u])))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((b_star(&di(), x, n).unwrap().0 - grid).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_segment_lipschitz_is_speed() {
        // horizontal line at constant velocity: the normal never turns
        let seg = Segment::new(0, [v(-0.3, 0.5), v(-0.1, 0.5), v(0.1, 0.5), v(0.3, 0.5)], 0.5).unwrap();
        let sb = speed_bounds(&seg, 64).unwrap();
        let l = segment_lipschitz(&di(), &seg).unwrap();
        assert!((l - sb.max_speed).abs() < 1e-12);
    }

    #[test]
    fn constant_field_has_zero_lipschitz() {
        let sys = SystemModel::new("still", Arc::new(Still), vec![-1.0], vec![1.0]).unwrap();
        let seg = Segment::new(0, [v(0.0, 0.0), v(1.0, 0.0), v(2.0, 0.0), v(3.0, 0.0)], 0.5).unwrap();
        assert_eq!(segment_lipschitz(&sys, &seg).unwrap(), 0.0);
    }

    #[test]
    fn small_circle_fails_where_velocity_vanishes() {
        let b = BoundaryState::circle(v(0.0, 0.0), 0.1, 20, 0.5).unwrap();
        // segments 19 and 0 meet at (0.1, 0)
        for i in [19, 0] {
            let c = certify_segment(&di(), &b, i).unwrap();
            assert!(c.margin < 0.0, "segment {i}: {}", c.margin);
            assert!(c.margin <= c.b_star);
        }
    }

    #[test]
    fn certified_segments_are_sound() {
        let p = [[1.0, 0.3], [0.3, 0.5]];
        let b = BoundaryState::ellipse(p, 0.2, 50, crate::curve::Spacing::Angle, 0.5).unwrap();
        let certs = certify_all(&di(), &b);
        assert!(certs.iter().all(|c| c.as_ref().unwrap().certified()));
        for (i, c) in certs.iter().enumerate() {
            assert_eq!(c.as_ref().unwrap().index, i);
            let seg = b.segment(i).unwrap();
            for k in 0..=1000 {
                let cp = seg.at_fraction(k as f64 / 1000.0);
                let n = normal_from_tangent(cp.d1).unwrap();
                assert!(b_star(&di(), cp.point, n).unwrap().0 >= -1e-9);
            }
        }
    }

    #[test]
    fn gradient_is_local_and_translation_invariant() {
        let b = BoundaryState::ellipse([[1.0, 0.3], [0.3, 0.5]], 0.2, 12, crate::curve::Spacing::Angle, 0.5).unwrap();
        let i = 5;
        let g = grad_margin(&di(), &b, i).unwrap();
        let touched = b.segment_indices(i);
        for p in 0..b.len() {
            if !touched.contains(&p) {
                assert_eq!(g[2 * p], 0.0);
                assert_eq!(g[2 * p + 1], 0.0);
            }
        }
        let shift: f64 = (0..b.len()).map(|p| g[2 * p]).sum();
        assert!(shift.abs() < 1e-6, "{shift}");
    }

    #[test]
    fn containment_margin_sign() {
        let safe = StateBox::new(v(-1.0, -1.0), v(1.0, 1.0)).unwrap();
        let inner = Segment::new(0, [v(-0.2, 0.0), v(-0.1, 0.0), v(0.1, 0.0), v(0.2, 0.0)], 0.5).unwrap();
        assert!(containment_margin(&inner, &safe) > 0.0);
        let outer = Segment::new(0, [v(0.5, 0.0), v(0.8, 0.0), v(1.2, 0.0), v(1.5, 0.0)], 0.5).unwrap();
        assert!(containment_margin(&outer, &safe) < 0.0);
    }

    proptest! {
        #[test]
        fn box_lp_matches_corners(
            dim in 1usize..=4,
            raw in prop::collection::vec((-3.0f64..3.0, -2.0f64..2.0, 0.0f64..2.0), 4),
        ) {
            let c: Vec<f64> = raw[..dim].iter().map(|r| r.0).collect();
            let lo: Vec<f64> = raw[..dim].iter().map(|r| r.1).collect();
            let hi: Vec<f64> = raw[..dim].iter().map(|r| r.1 + r.2).collect();
            let s = solve_box_lp(&c, &lo, &hi).unwrap();
            prop_assert!((s.value - corner_min(&c, &lo, &hi)).abs() <= 1e-12);
            for i in 0..dim {
                prop_assert!(lo[i] <= s.minimizer[i] && s.minimizer[i] <= hi[i]);
            }
        }

        #[test]
        fn lp_value_is_lipschitz(
            raw in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -2.0f64..2.0, 0.0f64..2.0), 1..=4),
        ) {
            let c: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let c2: Vec<f64> = raw.iter().map(|r| r.1).collect();
            let lo: Vec<f64> = raw.iter().map(|r| r.2).collect();
            let hi: Vec<f64> = raw.iter().map(|r| r.2 + r.3).collect();
            let l = lp_lipschitz(&lo, &hi).unwrap();
            let dv = (solve_box_lp(&c, &lo, &hi).unwrap().value - solve_box_lp(&c2, &lo, &hi).unwrap().value).abs();
            let dc = c.iter().zip(&c2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dv <= l * dc + 1e-12);
        }

        #[test]
        fn b_star_is_homogeneous(x in (-2.0f64..2.0, -2.0f64..2.0), angle in 0.0f64..6.3, lambda in 0.01f64..10.0) {
            let sys = SystemModel::inverted_pendulum(Default::default()).unwrap();
            let x = v(x.0, x.1);
            let n = v(angle.cos(), angle.sin());
            let (b, _) = flow_margin(&sys, x, n);
            let (bl, _) = flow_margin(&sys, x, n * lambda);
            prop_assert!((bl - lambda * b).abs() <= 1e-12 * (1.0 + lambda * b.abs()));
        }

        #[test]
        fn b_star_sign_matches_input_search(x in (-2.0f64..2.0, -2.0f64..2.0), angle in 0.0f64..6.3) {
            let sys = SystemModel::inverted_pendulum(Default::default()).unwrap();
            let x = v(x.0, x.1);
            let n = v(angle.cos(), angle.sin());
            let (b, _) = b_star(&sys, x, n).unwrap();
            let found = (0..=10_000).any(|k| n.dot(sys.flow(x, &[-2.0 + 4.0 * k as f64 / 10_000.0])) >= -1e-9);
            prop_assert_eq!(b >= 0.0, found);
        }
    }
}
