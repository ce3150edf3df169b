//! Runtime safety filter built on the signed distance to a certified boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curve::{normal_from_tangent, BoundaryState, Segment};
use crate::dynamics::{StateBox, SystemModel};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::ode::rk4_step;
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::scalar::{count, lit, Real};

pub const DEFAULT_SDF_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfResult<T> {
    /// Positive inside the set.
    pub h: T,
    pub closest_point: Vec2<T>,
    /// Unit gradient of `h`; on the curve itself this is the inward normal.
    pub gradient: Vec2<T>,
    pub on_boundary: bool,
}

/// Signed distance queries against a fixed boundary.
#[derive(Debug, Clone)]
pub struct SignedDistance<T> {
    segments: Vec<Segment<T>>,
    samples: usize,
    /// Dense closed polyline; vertex `j` lies on segment `j / samples`.
    polyline: Vec<Vec2<T>>,
    bounds: StateBox<T>,
}

fn point_edge<T: Real>(x: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> (T, T) {
    let e = b - a;
    let len2 = e.norm_sq();
    let s = if len2 > T::zero() { ((x - a).dot(e) / len2).max(T::zero()).min(T::one()) } else { T::zero() };
    ((a + e * s).distance(x), s)
}

impl<T: Real> SignedDistance<T> {
    pub fn new(boundary: &BoundaryState<T>, samples_per_segment: usize) -> Result<Self> {
        let samples = samples_per_segment.max(2);
        let segments = boundary.segments().collect::<Result<Vec<_>>>()?;
        let polyline = boundary.polyline(samples)?;
        let bounds = StateBox::hull(polyline.iter().copied()).expect("non-empty polyline");
        Ok(Self { segments, samples, polyline, bounds })
    }

    pub fn polyline(&self) -> &[Vec2<T>] {
        &self.polyline
    }

    /// Axis-aligned bounds of the dense polyline.
    pub fn bounds(&self) -> &StateBox<T> {
        &self.bounds
    }

    /// Even-odd test against the dense polyline.
    pub fn inside(&self, x: Vec2<T>) -> bool {
        let n = self.polyline.len();
        let mut inside = false;
        for j in 0..n {
            let a = self.polyline[j];
            let b = self.polyline[(j + 1) % n];
            if (a.y > x.y) != (b.y > x.y) {
                let cross_x = a.x + (x.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if x.x < cross_x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Winding number of the dense polyline about `x`.
    pub fn winding(&self, x: Vec2<T>) -> i32 {
        let n = self.polyline.len();
        let mut w = 0;
        for j in 0..n {
            let a = self.polyline[j];
            let b = self.polyline[(j + 1) % n];
            let side = (b - a).cross(x - a);
            if a.y <= x.y {
                if b.y > x.y && side > T::zero() {
                    w += 1;
                }
            } else if b.y <= x.y && side < T::zero() {
                w -= 1;
            }
        }
        w
    }

    pub fn query(&self, x: Vec2<T>) -> SdfResult<T> {
        let n = self.polyline.len();
        // best edge per segment from the coarse scan
        let mut best: Vec<(T, usize)> = vec![(T::infinity(), 0); self.segments.len()];
        for j in 0..n {
            let (d, _) = point_edge(x, self.polyline[j], self.polyline[(j + 1) % n]);
            let seg = j / self.samples;
            if d < best[seg].0 {
                best[seg] = (d, j % self.samples);
            }
        }
        let mut order: Vec<usize> = (0..best.len()).collect();
        order.sort_by(|&a, &b| best[a].0.partial_cmp(&best[b].0).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

        let k: T = count(self.samples);
        let mut closest = (T::infinity(), Vec2::zero(), 0, T::zero());
        for &seg_idx in order.iter().take(2) {
            let seg = &self.segments[seg_idx];
            let j = best[seg_idx].1;
            let lo = (count::<T>(j) - T::one()).max(T::zero()) / k;
            let hi = (count::<T>(j) + lit(2.0)).min(k) / k;
            let (d, s) = golden_section(|s| seg.point_at_fraction(s).distance(x), lo, hi, lit(1e-10));
            if d < closest.0 {
                closest = (d, seg.point_at_fraction(s), seg_idx, s);
            }
        }
        let (dist, cp, seg_idx, s) = closest;
        let sign = if self.inside(x) { T::one() } else { -T::one() };
        let offset = x - cp;
        let on_boundary = !(offset.norm() > T::zero());
        // too close for the offset direction to be trusted; the curve normal is its limit
        let near = lit::<T>(1e-9) * (T::one() + self.bounds.max_abs(0).max(self.bounds.max_abs(1)));
        let gradient = if offset.norm() > near {
            offset / offset.norm() * sign
        } else {
            normal_from_tangent(self.segments[seg_idx].at_fraction(s).d1).unwrap_or_else(Vec2::zero)
        };
        SdfResult { h: sign * dist, closest_point: cp, gradient, on_boundary }
    }
}

/// Minimizes a unimodal function on `[lo, hi]`; returns `(value, argmin)`.
fn golden_section<T: Real, F: Fn(T) -> T>(f: F, mut lo: T, mut hi: T, tol: T) -> (T, T) {
    let inv_phi: T = lit(0.618_033_988_749_894_9);
    let mut c = hi - (hi - lo) * inv_phi;
    let mut d = lo + (hi - lo) * inv_phi;
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - (hi - lo) * inv_phi;
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + (hi - lo) * inv_phi;
            fd = f(d);
        }
    }
    // the bracket ends are valid candidates too
    [(f(lo), lo), (fc, c), (fd, d), (f(hi), hi)]
        .into_iter()
        .fold((T::infinity(), lo), |best, cand| if cand.0 < best.0 { cand } else { best })
}

/// Signed distance of `x` to the boundary; positive inside.
pub fn signed_distance<T: Real>(boundary: &BoundaryState<T>, x: Vec2<T>, samples_per_segment: usize) -> Result<SdfResult<T>> {
    Ok(SignedDistance::new(boundary, samples_per_segment)?.query(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult<T> {
    pub u: Vec<T>,
    pub delta: T,
    pub qp_residual: T,
    pub h: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    pub gamma: T,
    /// Weight of the squared slack.
    pub k_s: T,
    pub samples_per_segment: usize,
}

impl<T: Real> Default for FilterConfig<T> {
    fn default() -> Self {
        Self { gamma: T::one(), k_s: lit(1e8), samples_per_segment: DEFAULT_SDF_SAMPLES }
    }
}

/// Slack-relaxed barrier QP on the signed distance.
#[derive(Debug, Clone)]
pub struct SafetyFilter<T: Real> {
    pub sdf: SignedDistance<T>,
    pub system: SystemModel<T>,
    pub config: FilterConfig<T>,
}

impl<T: Real> SafetyFilter<T> {
    pub fn new(boundary: &BoundaryState<T>, system: SystemModel<T>, config: FilterConfig<T>) -> Result<Self> {
        if !(config.k_s > T::zero()) || !(config.gamma > T::zero()) {
            return Err(Error::Contract("k_s and gamma must be positive".into()));
        }
        Ok(Self { sdf: SignedDistance::new(boundary, config.samples_per_segment)?, system, config })
    }

    /// `min |u - u_ref|^2 + k_s delta^2` subject to
    /// `grad h . (f + g u) >= -gamma h - delta`, `u` in the input box, `delta >= 0`.
    pub fn filter(&self, x: Vec2<T>, u_ref: &[T]) -> Result<FilterResult<T>> {
        let m = self.system.input_dim();
        if u_ref.len() != m {
            return Err(Error::Dimension { expected: m, got: u_ref.len() });
        }
        let sdf = self.sdf.query(x);
        let two: T = lit(2.0);
        let mut diag = vec![two; m + 1];
        diag[m] = two * self.config.k_s;
        let mut q: Vec<T> = u_ref.iter().map(|&u| -two * u).collect();
        q.push(T::zero());
        let mut row: Vec<T> = self.system.g(x).iter().map(|col| sdf.gradient.dot(*col)).collect();
        row.push(T::one());
        let rhs = -self.config.gamma * sdf.h - sdf.gradient.dot(self.system.f(x));
        let mut lo = self.system.u_min().to_vec();
        lo.push(T::zero());
        let mut hi = self.system.u_max().to_vec();
        hi.push(T::infinity());
        let problem = QpProblem::diagonal(&diag, q)?.with_inequalities(vec![row], vec![rhs])?.with_bounds(Some(lo), Some(hi))?;
        let sol = QpSolver::new(Default::default()).solve(&problem)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Contract(format!("filter QP ended with status {:?}", sol.status)));
        }
        let mut z = sol.z_star;
        let delta = z.pop().expect("slack variable").max(T::zero());
        Ok(FilterResult { u: z, delta, qp_residual: sol.kkt_residual, h: sdf.h })
    }
}

/// Convenience wrapper around [`SafetyFilter::filter`].
pub fn filter_control<T: Real>(
    boundary: &BoundaryState<T>,
    system: &SystemModel<T>,
    x: Vec2<T>,
    u_ref: &[T],
    gamma: T,
    k_s: T,
) -> Result<FilterResult<T>> {
    let config = FilterConfig { gamma, k_s, samples_per_segment: DEFAULT_SDF_SAMPLES };
    SafetyFilter::new(boundary, system.clone(), config)?.filter(x, u_ref)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow<T> {
    pub t: T,
    pub x: Vec2<T>,
    pub u: Vec<T>,
    pub delta: T,
    pub h: T,
    pub qp_residual: T,
}

/// Closed-loop run with the filtered input held constant over each step.
pub fn simulate<T, P>(filter: &SafetyFilter<T>, x0: Vec2<T>, mut u_ref: P, horizon: T, dt_sim: T) -> Result<Vec<TrajectoryRow<T>>>
where
    T: Real,
    P: FnMut(T, Vec2<T>) -> Vec<T>,
{
    if !(dt_sim > T::zero()) || !(horizon >= T::zero()) {
        return Err(Error::Contract("dt_sim must be positive and horizon non-negative".into()));
    }
    let steps = (horizon / dt_sim).round().to_usize().unwrap_or(0);
    let mut rows = Vec::with_capacity(steps + 1);
    let mut x = x0;
    for k in 0..=steps {
        let t = dt_sim * count::<T>(k);
        let out = filter.filter(x, &u_ref(t, x))?;
        let row = TrajectoryRow { t, x, u: out.u, delta: out.delta, h: out.h, qp_residual: out.qp_residual };
        if k < steps {
            let u = row.u.clone();
            let next = rk4_step(&[x.x, x.y], dt_sim, |s| {
                let v = filter.system.flow(Vec2::new(s[0], s[1]), &u);
                Ok(vec![v.x, v.y])
            })?;
            x = Vec2::new(next[0], next[1]);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Rejection-samples a state with `h > 0` inside the boundary.
pub fn sample_interior<T: Real, R: Rng>(sdf: &SignedDistance<T>, rng: &mut R) -> Vec2<T> {
    let b = sdf.bounds();
    loop {
        let x = Vec2::new(uniform(rng, b.lower.x, b.upper.x), uniform(rng, b.lower.y, b.upper.y));
        if sdf.inside(x) && sdf.query(x).h > T::zero() {
            return x;
        }
    }
}

fn uniform<T: Real, R: Rng>(rng: &mut R, lo: T, hi: T) -> T {
    lo + (hi - lo) * T::from_f64(rng.gen::<f64>()).expect("unit interval")
}

/// One seeded closed-loop run: random interior start and a constant random reference input.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededRun<T> {
    pub index: usize,
    pub x0: Vec2<T>,
    pub u_ref: Vec<T>,
    pub rows: Vec<TrajectoryRow<T>>,
}

/// Runs `count` trajectories in parallel; trajectory `k` draws from a stream keyed by `(seed, k)`.
pub fn simulate_batch<T: Real>(filter: &SafetyFilter<T>, count_runs: usize, seed: u64, horizon: T, dt_sim: T) -> Result<Vec<SeededRun<T>>> {
    (0..count_runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let x0 = sample_interior(&filter.sdf, &mut rng);
            let u_ref: Vec<T> = filter
                .system
                .u_min()
                .iter()
                .zip(filter.system.u_max())
                .map(|(&lo, &hi)| uniform(&mut rng, lo, hi))
                .collect();
            let u = u_ref.clone();
            let rows = simulate(filter, x0, move |_, _| u.clone(), horizon, dt_sim)?;
            Ok(SeededRun { index: k, x0, u_ref, rows })
        })
        .collect()
}

/// Signed distance on a regular grid over `region`, row-major in `x2` then `x1`.
pub fn sdf_grid<T: Real>(sdf: &SignedDistance<T>, region: &StateBox<T>, nx: usize, ny: usize) -> Vec<(Vec2<T>, T)> {
    let nx = nx.max(2);
    let ny = ny.max(2);
    let pts: Vec<Vec2<T>> = (0..ny)
        .flat_map(|j| {
            (0..nx).map(move |i| {
                Vec2::new(
                    region.lower.x + region.width(0) * count::<T>(i) / count::<T>(nx - 1),
                    region.lower.y + region.width(1) * count::<T>(j) / count::<T>(ny - 1),
                )
            })
        })
        .collect();
    pts.into_par_iter().map(|x| (x, sdf.query(x).h)).collect()
}
