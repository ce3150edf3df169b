//! Grid viability kernels and the closed-form double integrator kernel.

use rayon::prelude::*;

use crate::curve::BoundaryState;
use crate::dynamics::{StateBox, SystemModel};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::ode::rk4_step;
use crate::scalar::{count, lit, Real};

/// Cell membership of a viability kernel over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid<T> {
    pub safe_box: StateBox<T>,
    pub nx: usize,
    pub ny: usize,
    pub input_samples: usize,
    /// Row-major in `i` (first axis) then `j`.
    membership: Vec<bool>,
    /// Member count after each sweep, starting with the full box.
    pub counts: Vec<usize>,
}

impl<T: Real> KernelGrid<T> {
    pub fn member(&self, i: usize, j: usize) -> bool {
        self.membership[i * self.ny + j]
    }

    pub fn cell_size(&self) -> Vec2<T> {
        Vec2::new(self.safe_box.width(0) / count::<T>(self.nx), self.safe_box.width(1) / count::<T>(self.ny))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2<T> {
        let w = self.cell_size();
        let half: T = lit(0.5);
        Vec2::new(
            self.safe_box.lower.x + w.x * (count::<T>(i) + half),
            self.safe_box.lower.y + w.y * (count::<T>(j) + half),
        )
    }

    /// Cell containing `x`, if it lies in the box.
    pub fn cell_of(&self, x: Vec2<T>) -> Option<(usize, usize)> {
        locate(&self.safe_box, self.nx, self.ny, x)
    }

    pub fn member_count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    pub fn area(&self) -> T {
        let w = self.cell_size();
        count::<T>(self.member_count()) * w.x * w.y
    }

    /// Whether a member cell lies within `margin` cells (Chebyshev distance) of `(i, j)`.
    pub fn member_near(&self, i: usize, j: usize, margin: usize) -> bool {
        let (i0, i1) = (i.saturating_sub(margin), (i + margin).min(self.nx - 1));
        let (j0, j1) = (j.saturating_sub(margin), (j + margin).min(self.ny - 1));
        (i0..=i1).any(|a| (j0..=j1).any(|b| self.member(a, b)))
    }
}

fn locate<T: Real>(b: &StateBox<T>, nx: usize, ny: usize, x: Vec2<T>) -> Option<(usize, usize)> {
    if !b.contains(x) {
        return None;
    }
    let fx = (x.x - b.lower.x) / b.width(0) * count::<T>(nx);
    let fy = (x.y - b.lower.y) / b.width(1) * count::<T>(ny);
    let i = fx.floor().to_usize()?.min(nx - 1);
    let j = fy.floor().to_usize()?.min(ny - 1);
    Some((i, j))
}

/// Evenly spaced samples of the input box, `per_axis` per input coordinate.
pub fn input_grid<T: Real>(lo: &[T], hi: &[T], per_axis: usize) -> Vec<Vec<T>> {
    let per_axis = per_axis.max(2);
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for (&l, &h) in lo.iter().zip(hi) {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..per_axis).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(l + (h - l) * count::<T>(k) / count::<T>(per_axis - 1));
                    v
                })
            })
            .collect();
    }
    out
}

/// Discrete-time viability kernel.
///
/// A cell survives a sweep when some sampled input moves its center, by one RK4
/// step of length `dt_k`, into a surviving cell. Sweeps repeat until nothing changes.
pub fn viability_kernel<T: Real>(
    system: &SystemModel<T>,
    safe_box: &StateBox<T>,
    resolution: (usize, usize),
    input_samples: usize,
    dt_k: T,
) -> Result<KernelGrid<T>> {
    let (nx, ny) = resolution;
    if nx < 20 || ny < 20 {
        return Err(Error::Contract(format!("kernel grid needs at least 20 cells per axis, got {nx}x{ny}")));
    }
    if input_samples < 9 {
        return Err(Error::Contract(format!("need at least 9 input samples, got {input_samples}")));
    }
    if !(dt_k > T::zero()) {
        return Err(Error::Contract("kernel step must be positive".into()));
    }
    if !(safe_box.width(0) > T::zero() && safe_box.width(1) > T::zero()) || !safe_box.width(0).is_finite() || !safe_box.width(1).is_finite() {
        return Err(Error::Contract("kernel box must be bounded with positive widths".into()));
    }
    let inputs = input_grid(system.u_min(), system.u_max(), input_samples);
    let mut grid = KernelGrid {
        safe_box: *safe_box,
        nx,
        ny,
        input_samples,
        membership: vec![true; nx * ny],
        counts: vec![nx * ny],
    };
    // successor cells never change, so compute them once
    let successors: Vec<Vec<usize>> = (0..nx * ny)
        .into_par_iter()
        .map(|c| {
            let x = grid.cell_center(c / ny, c % ny);
            let mut next: Vec<usize> = inputs
                .iter()
                .filter_map(|u| {
                    let y = rk4_step(&[x.x, x.y], dt_k, |s| {
                        let v = system.flow(Vec2::new(s[0], s[1]), u);
                        Ok(vec![v.x, v.y])
                    })
                    .ok()?;
                    locate(safe_box, nx, ny, Vec2::new(y[0], y[1])).map(|(i, j)| i * ny + j)
                })
                .collect();
            next.sort_unstable();
            next.dedup();
            next
        })
        .collect();
    loop {
        let next: Vec<bool> = (0..nx * ny)
            .into_par_iter()
            .map(|c| grid.membership[c] && successors[c].iter().any(|&s| grid.membership[s]))
            .collect();
        let changed = next != grid.membership;
        grid.membership = next;
        grid.counts.push(grid.member_count());
        if !changed {
            break;
        }
    }
    Ok(grid)
}

/// Exact viability kernel of `p'' = u`, `|u| <= 1`, `|p| <= 1`.
pub fn analytic_di_kernel<T: Real>(x: Vec2<T>) -> bool {
    let (p, v) = (x.x, x.y);
    let sweep = v * v * lit(0.5);
    p.abs() <= T::one() && (v <= T::zero() || p <= T::one() - sweep) && (v >= T::zero() || p >= sweep - T::one())
}

/// Area of [`analytic_di_kernel`].
pub fn analytic_di_kernel_area<T: Real>() -> T {
    lit(16.0 / 3.0)
}

/// Fraction of dense boundary samples inside the kernel, and whether every sample lies
/// in or within `margin_cells` of a kernel cell. Samples outside the box always fail.
pub fn kernel_contains<T: Real>(kernel: &KernelGrid<T>, boundary: &BoundaryState<T>, margin_cells: usize) -> Result<(T, bool)> {
    let samples = boundary.polyline(32)?;
    let mut inside = 0;
    let mut ok = true;
    for x in &samples {
        match kernel.cell_of(*x) {
            Some((i, j)) => {
                if kernel.member(i, j) {
                    inside += 1;
                } else if !kernel.member_near(i, j, margin_cells) {
                    ok = false;
                }
            }
            None => ok = false,
        }
    }
    Ok((count::<T>(inside) / count::<T>(samples.len()), ok))
}

/// Same as [`kernel_contains`] against the exact double integrator kernel.
pub fn analytic_contains<T: Real>(boundary: &BoundaryState<T>, samples_per_segment: usize) -> Result<(T, bool)> {
    let samples = boundary.polyline(samples_per_segment)?;
    let inside = samples.iter().filter(|x| analytic_di_kernel(**x)).count();
    Ok((count::<T>(inside) / count::<T>(samples.len()), inside == samples.len()))
}

/// Cell-by-cell comparison with the analytic double integrator kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelComparison<T> {
    pub disagreements: usize,
    pub fraction: T,
    /// Disagreeing cells that are not within one cell of the analytic boundary.
    pub far_disagreements: usize,
}

pub fn compare_with_analytic<T: Real>(kernel: &KernelGrid<T>) -> KernelComparison<T> {
    let w = kernel.cell_size();
    let mut disagreements = 0;
    let mut far = 0;
    for i in 0..kernel.nx {
        for j in 0..kernel.ny {
            let c = kernel.cell_center(i, j);
            let exact = analytic_di_kernel(c);
            if exact == kernel.member(i, j) {
                continue;
            }
            disagreements += 1;
            // the analytic boundary passes within one cell when membership changes
            // somewhere in the surrounding 3x3 block
            let steps = 12;
            let near = (0..=steps).any(|a| {
                (0..=steps).any(|b| {
                    let off = Vec2::new(
                        w.x * (lit::<T>(3.0) * count::<T>(a) / count::<T>(steps) - lit(1.5)),
                        w.y * (lit::<T>(3.0) * count::<T>(b) / count::<T>(steps) - lit(1.5)),
                    );
                    analytic_di_kernel(c + off) != exact
                })
            });
            if !near {
                far += 1;
            }
        }
    }
    KernelComparison {
        disagreements,
        fraction: count::<T>(disagreements) / count::<T>(kernel.nx * kernel.ny),
        far_disagreements: far,
    }
}
