//! Control-affine planar systems `x' = f(x) + g(x) u` with box-bounded inputs.
//!
//! Certificates need sound bounds on `f`, `g` and their Jacobians over axis-aligned
//! boxes of state space. Every system therefore supplies closed-form Jacobians and
//! interval data instead of relying on numerical differentiation.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{spectral_norm2, Vec2};
use crate::scalar::{lit, Real};

/// Columns of the input matrix `g(x)`, one planar vector per input channel.
pub type InputMatrix<T> = Vec<Vec2<T>>;

/// Row-major 2x2 matrix.
pub type Mat2<T> = [[T; 2]; 2];

/// Axis-aligned box in state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBox<T> {
    pub lower: Vec2<T>,
    pub upper: Vec2<T>,
}

impl<T: Real> StateBox<T> {
    pub fn new(lower: Vec2<T>, upper: Vec2<T>) -> Result<Self> {
        if !(lower.x <= upper.x) {
            return Err(Error::InfeasibleBox { index: 0 });
        }
        if !(lower.y <= upper.y) {
            return Err(Error::InfeasibleBox { index: 1 });
        }
        Ok(Self { lower, upper })
    }

    pub fn point(x: Vec2<T>) -> Self {
        Self { lower: x, upper: x }
    }

    /// Smallest box containing all `points`; `None` for an empty iterator.
    pub fn hull<I: IntoIterator<Item = Vec2<T>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (lower, upper) = it.fold((first, first), |(lo, hi), p| (lo.min(p), hi.max(p)));
        Some(Self { lower, upper })
    }

    pub fn contains(&self, x: Vec2<T>) -> bool {
        x.x >= self.lower.x && x.x <= self.upper.x && x.y >= self.lower.y && x.y <= self.upper.y
    }

    pub fn contains_box(&self, other: &Self) -> bool {
        self.contains(other.lower) && self.contains(other.upper)
    }

    pub fn union(&self, other: &Self) -> Self {
        Self { lower: self.lower.min(other.lower), upper: self.upper.max(other.upper) }
    }

    pub fn center(&self) -> Vec2<T> {
        (self.lower + self.upper) * lit(0.5)
    }

    pub fn width(&self, axis: usize) -> T {
        self.upper.component(axis) - self.lower.component(axis)
    }

    /// Largest absolute value of coordinate `axis` over the box.
    pub fn max_abs(&self, axis: usize) -> T {
        self.lower.component(axis).abs().max(self.upper.component(axis).abs())
    }
}

/// Upper bounds on the magnitudes of `f`, `g` and their Jacobians over a box.
///
/// `m_g` bounds the spectral norm of `g(x)`; `l_g` bounds the Lipschitz constant of
/// `x -> g(x)` in the induced 2-norm, aggregated over columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalData<T> {
    pub m_f: T,
    pub l_f: T,
    pub m_g: T,
    pub l_g: T,
}

/// Closed-form description of a control-affine planar system.
pub trait ControlAffine<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;
    fn drift(&self, x: Vec2<T>) -> Vec2<T>;
    fn input_matrix(&self, x: Vec2<T>) -> InputMatrix<T>;
    fn drift_jacobian(&self, x: Vec2<T>) -> Mat2<T>;
    /// Jacobian of each column of `g`.
    fn input_jacobians(&self, x: Vec2<T>) -> Vec<Mat2<T>>;
    fn interval_data(&self, b: &StateBox<T>) -> IntervalData<T>;
}

/// A system together with its input box.
#[derive(Clone)]
pub struct SystemModel<T: Real> {
    name: String,
    dynamics: Arc<dyn ControlAffine<T>>,
    u_min: Vec<T>,
    u_max: Vec<T>,
}

impl<T: Real> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("u_min", &self.u_min)
            .field("u_max", &self.u_max)
            .finish()
    }
}

impl<T: Real> SystemModel<T> {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn ControlAffine<T>>,
        u_min: Vec<T>,
        u_max: Vec<T>,
    ) -> Result<Self> {
        let m = dynamics.input_dim();
        if m == 0 {
            return Err(Error::Contract("system must have at least one input channel".into()));
        }
        if u_min.len() != m {
            return Err(Error::Dimension { expected: m, got: u_min.len() });
        }
        if u_max.len() != m {
            return Err(Error::Dimension { expected: m, got: u_max.len() });
        }
        if let Some(index) = u_min.iter().zip(&u_max).position(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InfeasibleBox { index });
        }
        Ok(Self { name: name.into(), dynamics, u_min, u_max })
    }

    /// Double integrator `p'' = u` with `|u| <= u_bound`.
    pub fn double_integrator(u_bound: T) -> Result<Self> {
        Self::new("double_integrator", Arc::new(DoubleIntegrator), vec![-u_bound], vec![u_bound])
    }

    /// Inverted pendulum `m l^2 phi'' = m g l sin(phi) + u` with `|u| <= u_max`.
    pub fn inverted_pendulum(params: PendulumParams<T>) -> Result<Self> {
        if !(params.mass > T::zero() && params.length > T::zero()) {
            return Err(Error::Contract("pendulum mass and length must be positive".into()));
        }
        let u = params.u_max;
        Self::new("inverted_pendulum", Arc::new(InvertedPendulum::from(params)), vec![-u], vec![u])
    }

    /// Builds one of the catalogued systems by name.
    pub fn from_catalog(name: &str, params: &CatalogParams<T>) -> Result<Self> {
        let mut sys = match name {
            "double_integrator" => Self::double_integrator(T::one())?,
            "inverted_pendulum" => Self::inverted_pendulum(PendulumParams {
                mass: params.mass.unwrap_or_else(T::one),
                length: params.length.unwrap_or_else(T::one),
                gravity: params.gravity.unwrap_or_else(T::one),
                u_max: lit(2.0),
            })?,
            other => return Err(Error::UnknownSystem(other.to_string())),
        };
        if params.u_min.is_some() || params.u_max.is_some() {
            let lo = params.u_min.clone().unwrap_or_else(|| sys.u_min.clone());
            let hi = params.u_max.clone().unwrap_or_else(|| sys.u_max.clone());
            sys = Self::new(sys.name.clone(), sys.dynamics.clone(), lo, hi)?;
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.u_min.len()
    }

    pub fn u_min(&self) -> &[T] {
        &self.u_min
    }

    pub fn u_max(&self) -> &[T] {
        &self.u_max
    }

    pub fn dynamics(&self) -> &dyn ControlAffine<T> {
        self.dynamics.as_ref()
    }

    /// Drift term `f(x)` for a state given as a slice.
    pub fn eval_f(&self, x: &[T]) -> Result<Vec2<T>> {
        Ok(self.f(state_from_slice(x)?))
    }

    /// Input matrix `g(x)` for a state given as a slice.
    pub fn eval_g(&self, x: &[T]) -> Result<InputMatrix<T>> {
        Ok(self.g(state_from_slice(x)?))
    }

    pub fn f(&self, x: Vec2<T>) -> Vec2<T> {
        self.dynamics.drift(x)
    }

    pub fn g(&self, x: Vec2<T>) -> InputMatrix<T> {
        self.dynamics.input_matrix(x)
    }

    pub fn interval_data(&self, b: &StateBox<T>) -> IntervalData<T> {
        self.dynamics.interval_data(b)
    }

    /// Closed-loop vector field `f(x) + g(x) u`.
    pub fn flow(&self, x: Vec2<T>, u: &[T]) -> Vec2<T> {
        debug_assert_eq!(u.len(), self.input_dim());
        self.g(x).iter().zip(u).fold(self.f(x), |acc, (col, &ui)| acc + *col * ui)
    }

    /// Largest relative mismatch between the analytic Jacobians and central finite
    /// differences at `samples` random states drawn from `region`.
    pub fn jacobian_self_test(&self, region: &StateBox<T>, samples: usize, seed: u64) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: T = lit(1e-6);
        let mut worst = T::zero();
        for _ in 0..samples {
            let x = Vec2::new(
                uniform(&mut rng, region.lower.x, region.upper.x),
                uniform(&mut rng, region.lower.y, region.upper.y),
            );
            let jac = self.dynamics.drift_jacobian(x);
            let jg = self.dynamics.input_jacobians(x);
            for axis in 0..2 {
                let mut xp = x;
                let mut xm = x;
                *xp.component_mut(axis) = xp.component(axis) + h;
                *xm.component_mut(axis) = xm.component(axis) - h;
                let two_h = h + h;
                let df = (self.f(xp) - self.f(xm)) / two_h;
                let analytic = Vec2::new(jac[0][axis], jac[1][axis]);
                worst = worst.max(relative_gap(df, analytic));
                let gp = self.g(xp);
                let gm = self.g(xm);
                for (j, jac_col) in jg.iter().enumerate() {
                    let dg = (gp[j] - gm[j]) / two_h;
                    worst = worst.max(relative_gap(dg, Vec2::new(jac_col[0][axis], jac_col[1][axis])));
                }
            }
        }
        worst
    }
}

fn relative_gap<T: Real>(numeric: Vec2<T>, analytic: Vec2<T>) -> T {
    (numeric - analytic).norm() / (T::one() + analytic.norm())
}

fn uniform<T: Real, R: Rng>(rng: &mut R, lo: T, hi: T) -> T {
    let s: f64 = rng.gen();
    lo + (hi - lo) * lit(s)
}

fn state_from_slice<T: Real>(x: &[T]) -> Result<Vec2<T>> {
    match x {
        [a, b] => Ok(Vec2::new(*a, *b)),
        _ => Err(Error::Dimension { expected: 2, got: x.len() }),
    }
}

/// Optional overrides used when building catalogued systems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatalogParams<T> {
    pub mass: Option<T>,
    pub length: Option<T>,
    pub gravity: Option<T>,
    pub u_min: Option<Vec<T>>,
    pub u_max: Option<Vec<T>>,
}

/// `x = (p, p')`, `f = (p', 0)`, `g = (0, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

impl<T: Real> ControlAffine<T> for DoubleIntegrator {
    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: Vec2<T>) -> Vec2<T> {
        Vec2::new(x.y, T::zero())
    }

    fn input_matrix(&self, _x: Vec2<T>) -> InputMatrix<T> {
        vec![Vec2::new(T::zero(), T::one())]
    }

    fn drift_jacobian(&self, _x: Vec2<T>) -> Mat2<T> {
        [[T::zero(), T::one()], [T::zero(), T::zero()]]
    }

    fn input_jacobians(&self, _x: Vec2<T>) -> Vec<Mat2<T>> {
        vec![[[T::zero(); 2]; 2]]
    }

    fn interval_data(&self, b: &StateBox<T>) -> IntervalData<T> {
        IntervalData { m_f: b.max_abs(1), l_f: T::one(), m_g: T::one(), l_g: T::zero() }
    }
}

/// Physical constants of the inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams<T> {
    pub mass: T,
    pub length: T,
    pub gravity: T,
    pub u_max: T,
}

impl<T: Real> Default for PendulumParams<T> {
    fn default() -> Self {
        Self { mass: T::one(), length: T::one(), gravity: T::one(), u_max: lit(2.0) }
    }
}

/// `x = (phi, phi')`, `f = (phi', (g/l) sin phi)`, `g = (0, 1/(m l^2))`.
#[derive(Debug, Clone, Copy)]
pub struct InvertedPendulum<T> {
    /// g / l
    gain: T,
    /// 1 / (m l^2)
    inv_inertia: T,
}

impl<T: Real> From<PendulumParams<T>> for InvertedPendulum<T> {
    fn from(p: PendulumParams<T>) -> Self {
        Self { gain: p.gravity / p.length, inv_inertia: T::one() / (p.mass * p.length * p.length) }
    }
}

impl<T: Real> ControlAffine<T> for InvertedPendulum<T> {
    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: Vec2<T>) -> Vec2<T> {
        Vec2::new(x.y, self.gain * x.x.sin())
    }

    fn input_matrix(&self, _x: Vec2<T>) -> InputMatrix<T> {
        vec![Vec2::new(T::zero(), self.inv_inertia)]
    }

    fn drift_jacobian(&self, x: Vec2<T>) -> Mat2<T> {
        [[T::zero(), T::one()], [self.gain * x.x.cos(), T::zero()]]
    }

    fn input_jacobians(&self, _x: Vec2<T>) -> Vec<Mat2<T>> {
        vec![[[T::zero(); 2]; 2]]
    }

    fn interval_data(&self, b: &StateBox<T>) -> IntervalData<T> {
        let (lo, hi) = (b.lower.x, b.upper.x);
        let sin_max = max_abs_sin(lo, hi);
        let cos_max = max_abs_sin(lo + T::FRAC_PI_2(), hi + T::FRAC_PI_2());
        let rate = b.max_abs(1);
        let g = self.gain.abs();
        IntervalData {
            m_f: rate.hypot(g * sin_max),
            // singular values of [[0, 1], [a cos, 0]] are 1 and |a cos|
            l_f: T::one().max(g * cos_max),
            m_g: self.inv_inertia.abs(),
            l_g: T::zero(),
        }
    }
}

/// Maximum of `|sin t|` over `[lo, hi]`.
pub fn max_abs_sin<T: Real>(lo: T, hi: T) -> T {
    if hi - lo >= T::PI() {
        return T::one();
    }
    // peaks of |sin| sit at pi/2 + k pi
    let k = ((lo - T::FRAC_PI_2()) / T::PI()).ceil();
    let peak = T::FRAC_PI_2() + k * T::PI();
    if peak <= hi {
        T::one()
    } else {
        lo.sin().abs().max(hi.sin().abs())
    }
}

/// Spectral norm of a 2x2 Jacobian; exposed for tests and custom systems.
pub fn jacobian_norm<T: Real>(m: Mat2<T>) -> T {
    spectral_norm2(m)
}
