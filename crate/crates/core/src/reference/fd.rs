//! Implicit solve of the one-dimensional Black–Scholes time step with the
//! same split as the trained networks: diffusion and rate implicit, drift
//! applied to the previous step. Piecewise-linear elements with lumped mass
//! on `[x_lo, x_p]`; beyond `x_p` the solution continues with unit slope, as
//! the networks do, and that tail is integrated in closed form.

use crate::error::{Error, Result};
use crate::models::BlackScholesSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub x_lo: f64,
    pub x_p: f64,
    pub x_hi: f64,
    /// Nodes on `[x_lo, x_p]`, both ends included.
    pub nodes: usize,
}

impl FdGrid {
    pub fn new(x_lo: f64, x_p: f64, x_hi: f64, nodes: usize) -> Result<Self> {
        if !(0.0 <= x_lo && x_lo < x_p && x_p <= x_hi) || nodes < 3 {
            return Err(Error::Config(format!("bad grid [{x_lo}, {x_p}, {x_hi}] with {nodes} nodes")));
        }
        Ok(Self { x_lo, x_p, x_hi, nodes })
    }

    /// Spacing near `dx` on the default domain `[0.01, 3]` with `x_p = 2`.
    pub fn standard(dx: f64) -> Self {
        let nodes = ((2.0 - 0.01) / dx).round() as usize + 1;
        Self::new(0.01, 2.0, 3.0, nodes.max(3)).expect("valid default grid")
    }

    pub fn dx(&self) -> f64 {
        (self.x_p - self.x_lo) / (self.nodes - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nodes).map(|i| self.x_lo + i as f64 * dx).collect()
    }

    /// Piecewise-linear interpolant with the unit-slope tail.
    pub fn interpolate(&self, u: &[f64], x: f64) -> f64 {
        let last = self.nodes - 1;
        if x >= self.x_p {
            return u[last] + (x - self.x_p);
        }
        let s = ((x - self.x_lo) / self.dx()).max(0.0);
        let i = (s.floor() as usize).min(last - 1);
        let t = s - i as f64;
        u[i] + t * (u[i + 1] - u[i])
    }

    /// Nodal slopes of a grid function: centred inside, second-order one-sided
    /// at the ends.
    pub fn slopes(&self, u: &[f64]) -> Vec<f64> {
        let (n, dx) = (self.nodes, self.dx());
        (0..n)
            .map(|i| match i {
                0 => (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx),
                _ if i == n - 1 => (3.0 * u[i] - 4.0 * u[i - 1] + u[i - 2]) / (2.0 * dx),
                _ => (u[i + 1] - u[i - 1]) / (2.0 * dx),
            })
            .collect()
    }
}

/// One step: minimizes the discrete energy given the previous solution's
/// nodal values and slopes. The previous solution is assumed to continue with
/// unit slope beyond `x_p`. With `boundary_flux` the energy carries the
/// boundary term `−h [a ∂_x u_prev · u]` over the two ends.
pub fn fd_step(spec: &BlackScholesSpec, grid: &FdGrid, h: f64, prev_value: &[f64], prev_slope: &[f64], boundary_flux: bool) -> Vec<f64> {
    let n = grid.nodes;
    assert_eq!(prev_value.len(), n);
    assert_eq!(prev_slope.len(), n);
    let (r, s2, dx) = (spec.r, spec.sigma * spec.sigma, grid.dx());
    let a = |x: f64| 0.5 * s2 * x * x;
    let int_a = |x0: f64, x1: f64| s2 / 6.0 * (x1.powi(3) - x0.powi(3));
    let xs = grid.points();

    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let w = if i == 0 || i == n - 1 { 0.5 * dx } else { dx };
        let drift = (s2 - r) * xs[i] * prev_slope[i];
        diag[i] += w * (1.0 + h * r);
        rhs[i] += w * (prev_value[i] - h * drift);
    }
    for e in 0..n - 1 {
        let k = h * int_a(xs[e], xs[e + 1]) / (dx * dx);
        diag[e] += k;
        diag[e + 1] += k;
        off[e] = -k;
    }
    // unit-slope tail u = u_J + y on y ∈ [0, L]
    let len = grid.x_hi - grid.x_p;
    let tail_drift = (s2 - r) * 0.5 * (grid.x_hi.powi(2) - grid.x_p.powi(2));
    diag[n - 1] += len * (1.0 + h * r);
    rhs[n - 1] += len * prev_value[n - 1] - h * r * 0.5 * len * len - h * tail_drift;
    if boundary_flux {
        rhs[0] -= h * a(grid.x_lo) * prev_slope[0];
        rhs[n - 1] += h * a(grid.x_hi);
    }
    solve_tridiagonal(&off, &diag, &rhs)
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn solve_tridiagonal(off: &[f64], diag: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off.first().copied().unwrap_or(0.0) / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Nodal solutions at `t_0, …, t_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSolution {
    pub grid: FdGrid,
    pub h: f64,
    pub steps: Vec<Vec<f64>>,
}

impl FdSolution {
    pub fn value(&self, k: usize, x: f64) -> f64 {
        self.grid.interpolate(&self.steps[k], x)
    }
}

/// Chains `time_steps` implicit steps over `[0, maturity]` from the payoff.
pub fn fd_oracle_bs(spec: &BlackScholesSpec, grid: &FdGrid, maturity: f64, time_steps: usize, boundary_flux: bool) -> FdSolution {
    let h = maturity / time_steps as f64;
    let xs = grid.points();
    let payoff: Vec<f64> = xs.iter().map(|x| (x - 1.0).max(0.0)).collect();
    let mut slope: Vec<f64> = xs.iter().map(|&x| if x > 1.0 { 1.0 } else { 0.0 }).collect();
    let mut steps = vec![payoff];
    for _ in 0..time_steps {
        let next = fd_step(spec, grid, h, steps.last().expect("payoff"), &slope, boundary_flux);
        slope = grid.slopes(&next);
        steps.push(next);
    }
    FdSolution { grid: *grid, h, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::bs_price;

    const SPEC: BlackScholesSpec = BlackScholesSpec { r: 0.05, sigma: 0.25 };

    fn eval_grid() -> Vec<f64> {
        (0..47).map(|i| 0.01 + 2.99 * i as f64 / 46.0).collect()
    }

    fn max_error(sol: &FdSolution) -> f64 {
        let k = sol.steps.len() - 1;
        eval_grid()
            .iter()
            .map(|&x| (sol.value(k, x) - bs_price(0.25, 0.05, 1.0, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn converges_to_closed_form() {
        let sol = fd_oracle_bs(&SPEC, &FdGrid::standard(1e-3), 1.0, 2000, true);
        let err = max_error(&sol);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn first_order_in_time() {
        let grid = FdGrid::standard(5e-4);
        let e: Vec<f64> = [25, 50, 100].iter().map(|&n| max_error(&fd_oracle_bs(&SPEC, &grid, 1.0, n, true))).collect();
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..=2.4).contains(&ratio), "{e:?}");
        }
    }

    #[test]
    fn single_step_is_monotone() {
        let sol = fd_oracle_bs(&SPEC, &FdGrid::standard(1e-3), 1.0, 1, true);
        assert!(sol.steps[1].windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn residual_of_the_discrete_equations_vanishes() {
        // apply the assembled operator to the solution directly
        let grid = FdGrid::new(0.01, 2.0, 3.0, 11).unwrap();
        let xs = grid.points();
        let prev: Vec<f64> = xs.iter().map(|x| (x - 1.0f64).max(0.0) + 0.05 * x.sin()).collect();
        let slope: Vec<f64> = xs.iter().map(|&x| if x > 1.0 { 1.0 } else { 0.0 } + 0.05 * x.cos()).collect();
        let h = 0.1;
        let u = fd_step(&SPEC, &grid, h, &prev, &slope, true);
        // energy is minimal: perturbing any node raises it
        let energy = |u: &[f64]| {
            let (r, s2, dx) = (SPEC.r, 0.0625, grid.dx());
            let mut e = 0.0;
            for i in 0..11 {
                let w = if i == 0 || i == 10 { 0.5 * dx } else { dx };
                let f = (s2 - r) * xs[i] * slope[i];
                e += w * (0.5 * (u[i] - prev[i]).powi(2) + h * (0.5 * r * u[i] * u[i] + f * u[i]));
            }
            for i in 0..10 {
                let ia = s2 / 6.0 * (xs[i + 1].powi(3) - xs[i].powi(3));
                e += 0.5 * h * ia * ((u[i + 1] - u[i]) / dx).powi(2);
            }
            // tail by fine midpoint quadrature
            let m = 20_000;
            let dy = 1.0 / m as f64;
            for j in 0..m {
                let y = (j as f64 + 0.5) * dy;
                let x = 2.0 + y;
                let v = u[10] + y;
                let p = prev[10] + y;
                e += dy * (0.5 * (v - p).powi(2) + h * (0.5 * (0.5 * s2 * x * x + r * v * v) + (s2 - r) * x * v));
            }
            e += h * 0.5 * s2 * 0.01f64.powi(2) * slope[0] * u[0];
            e -= h * 0.5 * s2 * 9.0 * (u[10] + 1.0);
            e
        };
        let base = energy(&u);
        for i in 0..11 {
            for d in [-1e-4, 1e-4] {
                let mut v = u.clone();
                v[i] += d;
                assert!(energy(&v) > base, "node {i}");
            }
        }
    }
}
