//! Fixed-step integration.

use crate::error::Result;
use crate::scalar::{lit, Real};

/// One classical Runge-Kutta step of `y' = f(y)`.
pub fn rk4_step<T, F>(y: &[T], dt: T, mut f: F) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    let half = dt * lit(0.5);
    let offset = |k: &[T], h: T| -> Vec<T> { y.iter().zip(k).map(|(&a, &b)| a + h * b).collect() };
    let k1 = f(y)?;
    let k2 = f(&offset(&k1, half))?;
    let k3 = f(&offset(&k2, half))?;
    let k4 = f(&offset(&k3, dt))?;
    let two: T = lit(2.0);
    let sixth = dt / lit(6.0);
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| yi + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_bit_exact() {
        let y = vec![0.1, -3.7, 1e-300];
        assert_eq!(rk4_step(&y, 0.25, |s| Ok(vec![0.0; s.len()])).unwrap(), y);
    }

    #[test]
    fn exponential_decay_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let run = |n: usize| {
            let mut y = vec![1.0];
            for _ in 0..n {
                y = rk4_step(&y, 1.0 / n as f64, |s| Ok(vec![-s[0]])).unwrap();
            }
            (y[0] - exact).abs()
        };
        let ratio = run(10) / run(20);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }
}
