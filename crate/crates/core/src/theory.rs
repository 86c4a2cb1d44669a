//! Numerical checks of the approximation theory behind the networks.
//!
//! Covers Monte Carlo moments of importance-sampled quadrature, optimal
//! importance densities, the linear optimal-control path, bang-bang switching,
//! the bound constants built from the mollifier `h`, and stratified time
//! sampling. Every integral is a trapezoidal sum on a truncated 1-d grid:
//! frequency profiles live on whatever grid the caller supplies, the mollifier
//! transform is taken over `|z| <= H_RADIUS` and its L1 norms over
//! `|omega| <= HAT_RADIUS`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::seeds;

/// Truncation radius for the transform of `h`; `h(12)` is below 1e-50.
pub const H_RADIUS: f64 = 12.0;
/// Frequency radius over which L1 norms of the transform are taken.
pub const HAT_RADIUS: f64 = 40.0;
/// Quadrature cells on `[0, H_RADIUS]`; a multiple of 12 so `z = 1` is a node.
const H_CELLS: usize = 12 * 512;
const HAT_STEP: f64 = 0.01;

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let n = points.max(2) - 1;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// A real function sampled on a strictly increasing grid, linear in between
/// and zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("grid", "needs at least 2 points"));
        }
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "grid values",
                expected: grid.len(),
                found: values.len(),
            });
        }
        if grid.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid", "non-finite entry"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid", "must be strictly increasing"));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if !(x >= g[0] && x <= g[g.len() - 1]) {
            return 0.0;
        }
        let i = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1) - 1;
        let s = (x - g[i]) / (g[i + 1] - g[i]);
        self.values[i] + s * (self.values[i + 1] - self.values[i])
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    pub fn abs(&self) -> GridFn {
        GridFn {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }
}

/// Probability density on a grid: non-negative, unit trapezoidal mass,
/// piecewise linear.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpec {
    f: GridFn,
    cdf: Vec<f64>,
}

impl DensitySpec {
    pub const MASS_TOL: f64 = 1e-8;

    /// Takes values that already have unit mass.
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = GridFn::new(grid, values)?;
        if f.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("density", "negative value"));
        }
        let mass = f.integral();
        if (mass - 1.0).abs() > Self::MASS_TOL {
            return Err(Error::invalid("density", format!("mass {mass} is not 1")));
        }
        let mut cdf = Vec::with_capacity(f.grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for (g, v) in f.grid.windows(2).zip(f.values.windows(2)) {
            acc += 0.5 * (g[1] - g[0]) * (v[0] + v[1]);
            cdf.push(acc);
        }
        Ok(Self { f, cdf })
    }

    /// Scales non-negative values to unit mass.
    pub fn normalized(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = GridFn::new(grid, values)?;
        if f.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("density", "negative value"));
        }
        let mass = f.integral();
        if mass <= 0.0 {
            return Err(Error::invalid("density", "zero mass"));
        }
        Self::new(f.grid, f.values.iter().map(|v| v / mass).collect())
    }

    pub fn uniform(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let grid = uniform_grid(lo, hi, points);
        let n = grid.len();
        Self::normalized(grid, vec![1.0; n])
    }

    pub fn grid(&self) -> &[f64] {
        self.f.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.f.values()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.f.eval(x)
    }

    pub fn mass(&self) -> f64 {
        self.cdf[self.cdf.len() - 1]
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let g = self.grid();
        if x <= g[0] {
            return 0.0;
        }
        if x >= g[g.len() - 1] {
            return self.mass();
        }
        let i = g.partition_point(|&v| v <= x) - 1;
        let t = x - g[i];
        let p = self.values();
        let slope = (p[i + 1] - p[i]) / (g[i + 1] - g[i]);
        self.cdf[i] + p[i] * t + 0.5 * slope * t * t
    }

    /// Inverse of the cumulative distribution; exact for the piecewise-linear
    /// density, skipping cells of zero mass.
    pub fn quantile(&self, u: f64) -> f64 {
        let g = self.grid();
        let p = self.values();
        let target = u.clamp(0.0, 1.0) * self.mass();
        let i = self
            .cdf
            .partition_point(|&c| c <= target)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        let h = g[i + 1] - g[i];
        let r = target - self.cdf[i];
        let slope = (p[i + 1] - p[i]) / h;
        // p_i t + slope t^2 / 2 = r, in the cancellation-free form.
        let disc = (p[i] * p[i] + 2.0 * slope * r).max(0.0);
        let denom = p[i] + disc.sqrt();
        let t = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        g[i] + t.clamp(0.0, h)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

fn ratio(num: f64, den: f64, what: &'static str, at: f64) -> Result<f64> {
    if num == 0.0 {
        Ok(0.0)
    } else if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::invalid(what, format!("density vanishes at {at} where the integrand does not")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentsReport {
    pub samples_per_estimate: usize,
    pub replications: usize,
    pub exact_mean: f64,
    pub exact_variance: f64,
    /// Fourth central moment as `J^-2 V^2 + J^-3 M4`.
    pub lemma_fourth: f64,
    /// Fourth central moment of an i.i.d. mean, `3 (J-1) J^-3 V^2 + J^-3 M4`.
    pub exact_fourth: f64,
    pub mean: f64,
    pub variance: f64,
    pub fourth: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub fourth_se: f64,
    pub mean_ok: bool,
    pub variance_ok: bool,
    pub lemma_fourth_ok: bool,
    pub exact_fourth_ok: bool,
}

impl MomentsReport {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.variance_ok
    }
}

const SE_FACTOR: f64 = 5.0;

fn within_se(found: f64, expected: f64, se: f64, floor: f64) -> bool {
    (found - expected).abs() <= SE_FACTOR * se + floor
}

/// Replicates the estimator `J^-1 sum a(w_j)/p(w_j)` with `w_j ~ p` and
/// compares its empirical moments with the closed forms, all quadratures on
/// the grid of `p`.
pub fn mc_moments_check(
    a: impl Fn(f64) -> f64,
    p: &DensitySpec,
    samples: usize,
    replications: usize,
    seed: u64,
) -> Result<MomentsReport> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be >= 1"));
    }
    if replications < 2 {
        return Err(Error::invalid("replications", "must be >= 2"));
    }
    let grid = p.grid();
    let av: Vec<f64> = grid.iter().map(|&w| a(w)).collect();
    let ratios: Vec<f64> = grid
        .iter()
        .zip(&av)
        .zip(p.values())
        .map(|((&w, &a), &pv)| ratio(a, pv, "p", w))
        .collect::<Result<_>>()?;
    let mean = trapezoid(grid, &av);
    let second: Vec<f64> = av.iter().zip(&ratios).map(|(a, r)| a * r).collect();
    let spread = trapezoid(grid, &second) - mean * mean;
    let fourth_integrand: Vec<f64> = ratios
        .iter()
        .zip(p.values())
        .map(|(r, pv)| if *pv > 0.0 { (r - mean).powi(4) * pv } else { 0.0 })
        .collect();
    let m4 = trapezoid(grid, &fourth_integrand);
    let j = samples as f64;
    let exact_variance = spread / j;
    let lemma_fourth = exact_variance * exact_variance + m4 / (j * j * j);
    let exact_fourth = 3.0 * (j - 1.0) / j * exact_variance * exact_variance + m4 / (j * j * j);

    let mut rng = seeds::rng(seed, &[]);
    let mut est = Vec::with_capacity(replications);
    for _ in 0..replications {
        let mut acc = 0.0;
        for _ in 0..samples {
            let w = p.sample(&mut rng);
            acc += ratio(a(w), p.eval(w), "p", w)?;
        }
        est.push(acc / j);
    }
    let r = replications as f64;
    let emp_mean = est.iter().sum::<f64>() / r;
    let dev2: Vec<f64> = est.iter().map(|x| (x - emp_mean).powi(2)).collect();
    let dev4: Vec<f64> = dev2.iter().map(|d| d * d).collect();
    let variance = dev2.iter().sum::<f64>() / (r - 1.0);
    let fourth = dev4.iter().sum::<f64>() / r;
    let sd_of = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / r;
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    };
    let mean_se = (variance / r).sqrt();
    let variance_se = sd_of(&dev2) / r.sqrt();
    let fourth_se = sd_of(&dev4) / r.sqrt();
    // Rounding floor so exactly constant estimators compare equal.
    let scale = 1e-12 * (mean * mean + spread.abs()).max(f64::MIN_POSITIVE);
    Ok(MomentsReport {
        samples_per_estimate: samples,
        replications,
        exact_mean: mean,
        exact_variance,
        lemma_fourth,
        exact_fourth,
        mean: emp_mean,
        variance,
        fourth,
        mean_se,
        variance_se,
        fourth_se,
        mean_ok: within_se(emp_mean, mean, mean_se, scale),
        variance_ok: within_se(variance, exact_variance, variance_se, scale),
        lemma_fourth_ok: within_se(fourth, lemma_fourth, fourth_se, scale * scale),
        exact_fourth_ok: within_se(fourth, exact_fourth, fourth_se, scale * scale),
    })
}

/// `p = |g| / int |g|` on the grid of `g`.
pub fn optimal_density(g: &GridFn) -> Result<DensitySpec> {
    let abs = g.abs();
    if abs.values.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("g", "identically zero"));
    }
    DensitySpec::normalized(abs.grid, abs.values)
}

/// `int |g|^2 / p` on the grid of `g`.
pub fn variance_objective(g: &GridFn, p: &DensitySpec) -> Result<f64> {
    let vals: Vec<f64> = g
        .grid
        .iter()
        .zip(&g.values)
        .map(|(&w, &gv)| ratio(gv * gv, p.eval(w), "p", w))
        .collect::<Result<_>>()?;
    Ok(trapezoid(&g.grid, &vals))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub objective: f64,
    /// `(int |g|)^2`, the value the objective takes at the optimum.
    pub closed_form: f64,
    /// Smallest `objective(perturbed) - objective(optimal)` seen.
    pub min_margin: f64,
    pub trials: usize,
}

impl PerturbationReport {
    pub fn passed(&self, tol: f64) -> bool {
        (self.objective - self.closed_form).abs() <= tol * self.closed_form && self.min_margin >= -tol * self.objective
    }
}

/// Perturbs `p = optimal_density(g)` multiplicatively by `1 + eps r(w)`,
/// `r ~ U[-1, 1]` per node, renormalizes, and records the objective change.
pub fn optimal_density_check(
    g: &GridFn,
    directions: usize,
    magnitudes: &[f64],
    seed: u64,
) -> Result<PerturbationReport> {
    let p = optimal_density(g)?;
    let objective = variance_objective(g, &p)?;
    let l1 = g.abs().integral();
    let mut rng = seeds::rng(seed, &[]);
    let mut min_margin = f64::INFINITY;
    let mut trials = 0;
    for _ in 0..directions {
        let dir: Vec<f64> = p.values().iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
        for &eps in magnitudes {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::invalid("magnitudes", "must lie in (0, 1)"));
            }
            let vals = p.values().iter().zip(&dir).map(|(v, r)| v * (1.0 + eps * r)).collect();
            let q = DensitySpec::normalized(p.grid().to_vec(), vals)?;
            min_margin = min_margin.min(variance_objective(g, &q)? - objective);
            trials += 1;
        }
    }
    Ok(PerturbationReport {
        objective,
        closed_form: l1 * l1,
        min_margin,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlReport {
    pub delta: f64,
    /// Largest deviation of the integrated path from `t r / (1 + delta)`.
    pub max_path_error: f64,
    /// Mean of `|z_1 - r|^2`.
    pub terminal_cost: f64,
    /// `delta^2 / (1 + delta)^2` times the mean of `r^2`.
    pub terminal_closed: f64,
    /// Terminal cost plus `delta int |chi|^2`.
    pub objective: f64,
    /// `delta / (1 + delta)` times the mean of `r^2`.
    pub objective_closed: f64,
    /// Smallest objective increase over scaled constant controls.
    pub min_margin: f64,
}

impl ControlReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_path_error <= tol
            && (self.terminal_cost - self.terminal_closed).abs() <= tol
            && (self.objective - self.objective_closed).abs() <= tol
            && self.min_margin >= 0.0
    }
}

/// Integrates `dz/dt = chi` together with the running cost `delta chi^2` by
/// classical RK4 from `z_0 = 0`, one path per residual `r = f - beta`.
fn simulate_control(r: f64, delta: f64, chi: impl Fn(f64, f64) -> f64, steps: usize, mut visit: impl FnMut(f64, f64)) -> (f64, f64) {
    let h = 1.0 / steps as f64;
    let rhs = |t: f64, z: f64| {
        let c = chi(t, z);
        (c, delta * c * c)
    };
    let (mut z, mut run) = (0.0, 0.0);
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = rhs(t, z);
        let k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1.0);
        let k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2.0);
        let k4 = rhs(t + h, z + h * k3.0);
        z += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        run += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        visit((i + 1) as f64 * h, z);
    }
    ((z - r).powi(2), run)
}

pub fn optimal_control_check(delta: f64, residuals: &[f64], steps: usize) -> Result<ControlReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if residuals.is_empty() {
        return Err(Error::invalid("residuals", "empty"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    let n = residuals.len() as f64;
    let mut max_path_error: f64 = 0.0;
    let (mut terminal, mut objective) = (0.0, 0.0);
    for &r in residuals {
        let slope = r / (1.0 + delta);
        let (cost, run) = simulate_control(r, delta, |_, _| slope, steps, |t, z| {
            max_path_error = max_path_error.max((z - t * slope).abs());
        });
        terminal += cost;
        objective += cost + run;
    }
    let mut min_margin = f64::INFINITY;
    for scale in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
        let mut other = 0.0;
        for &r in residuals {
            let c = scale * r / (1.0 + delta);
            let (cost, run) = simulate_control(r, delta, |_, _| c, steps, |_, _| {});
            other += cost + run;
        }
        min_margin = min_margin.min((other - objective) / n);
    }
    let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / n;
    Ok(ControlReport {
        delta,
        max_path_error,
        terminal_cost: terminal / n,
        terminal_closed: mean_sq * delta * delta / ((1.0 + delta) * (1.0 + delta)),
        objective: objective / n,
        objective_closed: mean_sq * delta / (1.0 + delta),
        min_margin,
    })
}

/// `min(2 sqrt(AB) - B, A)`, the closed form quoted for the minimum of
/// `G(tau) = A tau + B (1/tau - 1)` on `(0, 1]`. It is the true minimum only
/// when `B <= A`; see [`bang_bang_min`].
pub fn constant_density_constant(a: f64, b: f64) -> f64 {
    (2.0 * (a * b).sqrt() - b).min(a)
}

/// `G(tau*)` with `tau* = min(1, sqrt(B/A))`: `2 sqrt(AB) - B` when `B <= A`
/// and `A` otherwise.
pub fn bang_bang_min(a: f64, b: f64) -> f64 {
    let t = bang_bang_switch(a, b);
    a * t + b * (1.0 / t - 1.0)
}

pub fn bang_bang_switch(a: f64, b: f64) -> f64 {
    (b / a).sqrt().min(1.0)
}

/// Uniform grid `i/n`, `i = 1..=n`, for the switch time.
pub fn switch_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BangBangReport {
    pub a: f64,
    pub b: f64,
    pub grid_argmin: f64,
    pub grid_min: f64,
    pub tau_star: f64,
    /// [`constant_density_constant`].
    pub formula_min: f64,
    /// [`bang_bang_min`].
    pub switch_min: f64,
    /// Width of the grid cells next to the grid minimizer.
    pub cell: f64,
}

impl BangBangReport {
    pub fn argmin_ok(&self) -> bool {
        (self.grid_argmin - self.tau_star).abs() <= self.cell
    }

    /// Grid minimum against `min(2 sqrt(AB) - B, A)`.
    pub fn formula_ok(&self, tol: f64) -> bool {
        self.argmin_ok() && (self.grid_min - self.formula_min).abs() <= tol
    }

    /// Grid minimum against `G(tau*)`.
    pub fn passed(&self, tol: f64) -> bool {
        self.argmin_ok() && (self.grid_min - self.switch_min).abs() <= tol
    }
}

/// Minimizes `G(tau) = A tau + B (1/tau - 1)` over a grid in `(0, 1]`.
pub fn bang_bang_check(a: f64, b: f64, grid: &[f64]) -> Result<BangBangReport> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("A, B", "must be positive"));
    }
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::invalid("grid", "points must lie in (0, 1]"));
    }
    let g = |t: f64| a * t + b * (1.0 / t - 1.0);
    let (mut best, mut arg) = (f64::INFINITY, 0);
    for (i, &t) in grid.iter().enumerate() {
        let v = g(t);
        if v < best {
            best = v;
            arg = i;
        }
    }
    let left = if arg > 0 { grid[arg] - grid[arg - 1] } else { 0.0 };
    let right = grid.get(arg + 1).map_or(0.0, |t| t - grid[arg]);
    Ok(BangBangReport {
        a,
        b,
        grid_argmin: grid[arg],
        grid_min: best,
        tau_star: bang_bang_switch(a, b),
        formula_min: constant_density_constant(a, b),
        switch_min: bang_bang_min(a, b),
        cell: left.max(right),
    })
}

/// The mollifier: 1 on `[-1, 1]`, `(1 + e^{1/(1-z)}) e^{-(1-z)^2}` for
/// `z > 1` and mirrored for `z < -1`.
pub fn h_eval(z: f64) -> f64 {
    let w = z.abs();
    if w <= 1.0 {
        return 1.0;
    }
    let s = w - 1.0;
    (1.0 + (-1.0 / s).exp()) * (-s * s).exp()
}

pub fn h_prime(z: f64) -> f64 {
    let w = z.abs();
    if w <= 1.0 {
        return 0.0;
    }
    let s = w - 1.0;
    let e = (-1.0 / s).exp();
    let g = (-s * s).exp();
    let d = e * g / (s * s) - 2.0 * s * (1.0 + e) * g;
    if z < 0.0 { -d } else { d }
}

/// `sup_z |d/dz (z h(z/F))| = sup_w |h(w) + w h'(w)|`, which does not depend
/// on `F`.
pub fn scaled_derivative_sup() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| {
        let f = |w: f64| (h_eval(w) + w * h_prime(w)).abs();
        let step = 1e-4;
        let n = ((H_RADIUS - 1.0) / step) as usize;
        let (mut best, mut at) = (1.0, 1.0);
        for i in 0..=n {
            let w = 1.0 + i as f64 * step;
            let v = f(w);
            if v > best {
                best = v;
                at = w;
            }
        }
        // Golden-section polish around the grid maximum.
        let (mut lo, mut hi) = ((at - step).max(1.0), at + step);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let m1 = hi - r * (hi - lo);
            let m2 = lo + r * (hi - lo);
            if f(m1) > f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.max(f(0.5 * (lo + hi)))
    })
}

/// Transform of `h` under `f^(w) = (2 pi)^-1 int f(z) e^{-i w z} dz`, by
/// trapezoidal quadrature on `[0, H_RADIUS]` using evenness of `h`.
#[derive(Debug, Clone)]
pub struct Mollifier {
    step: f64,
    weighted_h: Vec<f64>,
    weighted_zh: Vec<f64>,
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::new(H_CELLS)
    }
}

impl Mollifier {
    pub fn new(cells: usize) -> Self {
        let step = H_RADIUS / cells as f64;
        let mut weighted_h = Vec::with_capacity(cells + 1);
        let mut weighted_zh = Vec::with_capacity(cells + 1);
        for i in 0..=cells {
            let z = i as f64 * step;
            let w = if i == 0 || i == cells { 0.5 * step } else { step } / PI;
            weighted_h.push(w * h_eval(z));
            weighted_zh.push(w * z * h_eval(z));
        }
        Self {
            step,
            weighted_h,
            weighted_zh,
        }
    }

    /// `(h^(w), h^'(w))` in one sweep; the phase advances by rotation and is
    /// reset from `sin_cos` every 256 nodes.
    pub fn transform(&self, omega: f64) -> (f64, f64) {
        let (rs, rc) = (omega * self.step).sin_cos();
        let (mut hat, mut dhat) = (0.0, 0.0);
        let (mut s, mut c) = (0.0, 1.0);
        for (i, (wh, wzh)) in self.weighted_h.iter().zip(&self.weighted_zh).enumerate() {
            if i % 256 == 0 {
                (s, c) = (omega * i as f64 * self.step).sin_cos();
            }
            hat += wh * c;
            dhat -= wzh * s;
            (s, c) = (s * rc + c * rs, c * rc - s * rs);
        }
        (hat, dhat)
    }

    pub fn hat(&self, omega: f64) -> f64 {
        self.transform(omega).0
    }

    /// Derivative of the transform by quadrature of `-i z h(z)`.
    pub fn hat_prime(&self, omega: f64) -> f64 {
        self.transform(omega).1
    }

    /// Central difference of the quadrature transform.
    pub fn hat_prime_fd(&self, omega: f64, eta: f64) -> f64 {
        (self.hat(omega + eta) - self.hat(omega - eta)) / (2.0 * eta)
    }

    /// `|h^'|` tabulated on `[0, HAT_RADIUS]`; it is even in `omega`.
    pub fn hat_prime_abs_table(&self) -> GridFn {
        let grid = uniform_grid(0.0, HAT_RADIUS, (HAT_RADIUS / HAT_STEP).round() as usize + 1);
        GridFn::from_fn(grid, |w| self.hat_prime(w).abs()).expect("finite table")
    }
}

struct Shared {
    mollifier: Mollifier,
    abs_table: GridFn,
    /// `int |h^'|` over `|omega| <= HAT_RADIUS`.
    l1: f64,
}

fn shared() -> &'static Shared {
    static M: OnceLock<Shared> = OnceLock::new();
    M.get_or_init(|| {
        let mollifier = Mollifier::default();
        let abs_table = mollifier.hat_prime_abs_table();
        let l1 = 2.0 * abs_table.integral();
        Shared {
            mollifier,
            abs_table,
            l1,
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    /// `F = ||f||_inf`.
    pub f_sup: f64,
    pub a: f64,
    pub a_star: f64,
    pub b_prime: f64,
    /// `B'` recomputed with a finite-difference derivative of the transform.
    pub b_prime_fd: f64,
    pub b: f64,
    pub b_star: f64,
    /// `sup |d/dz (z h(z/F))|`.
    pub scaled_derivative_sup: f64,
    /// Constant for the optimal time-dependent densities.
    pub c_timedep: f64,
    /// Constant for time-independent densities, `G(tau*)` from
    /// [`bang_bang_min`].
    pub c_const: f64,
    pub t_star: f64,
    pub tau_star: f64,
}

const FD_STEP: f64 = 1e-3;

/// `B* = F ||h^'(F .)||_L1 exp(S)`; the `F` scaling cancels.
pub fn b_star() -> f64 {
    shared().l1 * scaled_derivative_sup().exp()
}

/// Computes the constants for a 1-d frequency profile `|f^|`, with
/// `p_bar` the density of the state frequencies and `p_bar_prime` that of the
/// input frequencies.
pub fn bound_constants(
    fhat_abs: &GridFn,
    f_sup: f64,
    p_bar: &DensitySpec,
    p_bar_prime: &DensitySpec,
) -> Result<BoundConstants> {
    if !(f_sup > 0.0 && f_sup.is_finite()) {
        return Err(Error::invalid("F", "must be positive"));
    }
    if fhat_abs.values.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("fhat_abs", "negative value"));
    }
    let a_vals: Vec<f64> = fhat_abs
        .grid
        .iter()
        .zip(&fhat_abs.values)
        .map(|(&w, &v)| ratio(v * v, p_bar_prime.eval(w), "p_bar_prime", w))
        .collect::<Result<_>>()?;
    let a = trapezoid(&fhat_abs.grid, &a_vals);
    let a_star = fhat_abs.integral();
    if a_star <= 0.0 {
        return Err(Error::invalid("fhat_abs", "zero profile"));
    }

    let moll = &shared().mollifier;
    let f2 = f_sup * f_sup;
    let mut spectral = Vec::with_capacity(p_bar.grid().len());
    let mut fd = Vec::with_capacity(p_bar.grid().len());
    for (&w, &p) in p_bar.grid().iter().zip(p_bar.values()) {
        let d1 = moll.hat_prime(f_sup * w);
        let d2 = moll.hat_prime_fd(f_sup * w, FD_STEP);
        spectral.push(ratio(f2 * d1 * d1, p, "p_bar", w)?);
        fd.push(ratio(f2 * d2 * d2, p, "p_bar", w)?);
    }
    let b_prime = trapezoid(p_bar.grid(), &spectral);
    let b_prime_fd = trapezoid(p_bar.grid(), &fd);
    let s = scaled_derivative_sup();
    let b = b_prime * (2.0 * s).exp();
    let b_star = b_star();
    let log = 1.0 + (a_star / b_star).ln();
    Ok(BoundConstants {
        f_sup,
        a,
        a_star,
        b_prime,
        b_prime_fd,
        b,
        b_star,
        scaled_derivative_sup: s,
        c_timedep: b_star * b_star * log * log,
        c_const: bang_bang_min(a, b),
        t_star: (b_star / a_star).min(1.0),
        tau_star: bang_bang_switch(a, b),
    })
}

/// The optimal time-dependent densities over `(t, omega)`: the input branch
/// uses `|f^|` on `t < t*`, the state branch `t^-1 |h^'(F omega)|` on
/// `t >= t*`. When `t* = 1` the state-branch time law is a point mass at 1
/// and `state` returns 0.
#[derive(Debug, Clone)]
pub struct TimeDependentDensities {
    fhat_abs: GridFn,
    f_sup: f64,
    a_star: f64,
    t_star: f64,
    /// `||h^'(F .)||_L1`.
    hat_prime_l1: f64,
}

impl TimeDependentDensities {
    pub fn new(fhat_abs: &GridFn, f_sup: f64) -> Result<Self> {
        if !(f_sup > 0.0 && f_sup.is_finite()) {
            return Err(Error::invalid("F", "must be positive"));
        }
        if fhat_abs.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("fhat_abs", "negative value"));
        }
        let a_star = fhat_abs.integral();
        if a_star <= 0.0 {
            return Err(Error::invalid("fhat_abs", "zero profile"));
        }
        Ok(Self {
            fhat_abs: fhat_abs.clone(),
            f_sup,
            a_star,
            t_star: (b_star() / a_star).min(1.0),
            hat_prime_l1: shared().l1 / f_sup,
        })
    }

    pub fn t_star(&self) -> f64 {
        self.t_star
    }

    /// Input-frequency density `p'(t, omega)`.
    pub fn input(&self, t: f64, omega: f64) -> f64 {
        if t < self.t_star {
            self.fhat_abs.eval(omega) / (self.t_star * self.a_star)
        } else {
            0.0
        }
    }

    /// State-frequency density `p(t, omega)`.
    pub fn state(&self, t: f64, omega: f64) -> f64 {
        if t < self.t_star || self.t_star >= 1.0 {
            return 0.0;
        }
        // Linear interpolation in the table the normalization was taken on.
        let d = shared().abs_table.eval((self.f_sup * omega).abs());
        d / (t * (1.0 / self.t_star).ln() * self.hat_prime_l1)
    }

    /// Frequency grid matching the one the L1 normalization was taken on.
    pub fn state_grid(&self) -> Vec<f64> {
        let n = (HAT_RADIUS / HAT_STEP).round() as usize;
        let r = HAT_RADIUS / self.f_sup;
        uniform_grid(-r, r, 2 * n + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedTimes {
    /// `times[l][k]`, drawn in stratum `l`.
    pub times: Vec<Vec<f64>>,
    /// `levels[l] = Q^-1(l / L)` for `l = 0..=L`.
    pub levels: Vec<f64>,
}

fn check_unit_support(q: &DensitySpec) -> Result<()> {
    let g = q.grid();
    if g[0].abs() > 1e-12 || (g[g.len() - 1] - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("q", "grid must span [0, 1]"));
    }
    Ok(())
}

/// Draws `tau` uniform on `[l/L, (l+1)/L)` and maps it through `Q^-1`.
pub fn stratified_times(q: &DensitySpec, layers: usize, nodes: usize, seed: u64) -> Result<StratifiedTimes> {
    check_unit_support(q)?;
    if layers == 0 {
        return Err(Error::invalid("layers", "must be >= 1"));
    }
    let l = layers as f64;
    let mut rng = seeds::rng(seed, &[]);
    let times = (0..layers)
        .map(|s| {
            (0..nodes)
                .map(|_| q.quantile((s as f64 + rng.random::<f64>()) / l))
                .collect()
        })
        .collect();
    let levels = (0..=layers).map(|s| q.quantile(s as f64 / l)).collect();
    Ok(StratifiedTimes { times, levels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chi2Report {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub level: f64,
}

impl Chi2Report {
    pub fn passed(&self) -> bool {
        self.p_value > self.level
    }
}

/// Goodness of fit of pooled stratified times against `L q` per stratum,
/// with `bins` equal-width bins inside each stratum.
pub fn stratified_chi2(
    q: &DensitySpec,
    layers: usize,
    nodes: usize,
    bins: usize,
    seed: u64,
    level: f64,
) -> Result<Chi2Report> {
    if bins < 2 {
        return Err(Error::invalid("bins", "must be >= 2"));
    }
    let st = stratified_times(q, layers, nodes, seed)?;
    let mut statistic = 0.0;
    for (s, draws) in st.times.iter().enumerate() {
        let (lo, hi) = (st.levels[s], st.levels[s + 1]);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &t in draws {
            let b = (((t - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let stratum_mass = q.cdf(hi) - q.cdf(lo);
        for (b, &c) in counts.iter().enumerate() {
            let e0 = lo + b as f64 * width;
            let e1 = if b + 1 == bins { hi } else { e0 + width };
            let expected = nodes as f64 * (q.cdf(e1) - q.cdf(e0)) / stratum_mass;
            if expected <= 0.0 {
                return Err(Error::invalid("q", "empty bin inside a stratum"));
            }
            statistic += (c as f64 - expected).powi(2) / expected;
        }
    }
    let dof = layers * (bins - 1);
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::invalid("dof", e.to_string()))?;
    Ok(Chi2Report {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
        level,
    })
}

/// Gaussian frequency profile with total mass `mass` and deviation `sd`,
/// sampled on `[-8 sd, 8 sd]`.
pub fn gaussian_profile(mass: f64, sd: f64, points: usize) -> Result<GridFn> {
    let grid = uniform_grid(-8.0 * sd, 8.0 * sd, points);
    let c = mass / (sd * (2.0 * PI).sqrt());
    let f = GridFn::from_fn(grid, |w| c * (-0.5 * (w / sd).powi(2)).exp())?;
    let scale = mass / f.integral();
    GridFn::new(f.grid, f.values.iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// Runs every theory check at its default size.
pub fn verify_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let p = DensitySpec::uniform(0.0, 1.0, 1001)?;
    let m = mc_moments_check(|w| w, &p, 100, 10_000, seeds::derive(seed, &[1]))?;
    out.push(outcome(
        "mc_moments",
        m.passed(),
        format!(
            "mean {:.6} (exact {:.6}, se {:.2e}); variance {:.4e} (exact {:.4e}, se {:.2e}); fourth {:.3e} vs lemma {:.3e} / exact {:.3e}",
            m.mean, m.exact_mean, m.mean_se, m.variance, m.exact_variance, m.variance_se, m.fourth, m.lemma_fourth, m.exact_fourth
        ),
    ));

    let g = gaussian_profile(1.0, 1.0, 801)?;
    let d = optimal_density_check(&g, 20, &[0.5, 0.2, 0.1, 0.05, 0.01], seeds::derive(seed, &[2]))?;
    out.push(outcome(
        "optimal_density",
        d.passed(1e-8),
        format!("objective {:.10} vs (int|g|)^2 {:.10}; min margin {:.3e}", d.objective, d.closed_form, d.min_margin),
    ));

    let mut rng = seeds::rng(seed, &[3]);
    let resid: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
    for delta in [0.01, 0.3, 1.0] {
        let c = optimal_control_check(delta, &resid, 100)?;
        out.push(outcome(
            "optimal_control",
            c.passed(1e-10),
            format!(
                "delta {delta}: path err {:.1e}, terminal {:.12} vs {:.12}, margin {:.2e}",
                c.max_path_error, c.terminal_cost, c.terminal_closed, c.min_margin
            ),
        ));
    }

    let grid = switch_grid(100_000);
    let mut rng = seeds::rng(seed, &[4]);
    let mut worst: f64 = 0.0;
    let (mut ok, mut literal) = (true, 0);
    for _ in 0..50 {
        let a = 10f64.powf(rng.random_range(-1.0..1.0));
        let b = 10f64.powf(rng.random_range(-1.0..1.0));
        let r = bang_bang_check(a, b, &grid)?;
        ok &= r.passed(1e-6);
        literal += usize::from(r.formula_ok(1e-6));
        worst = worst.max((r.grid_min - r.switch_min).abs());
    }
    out.push(outcome(
        "bang_bang",
        ok,
        format!("50 pairs: G(tau*) worst gap {worst:.2e}; min(2sqrt(AB)-B, A) matches in {literal}/50"),
    ));

    let pb = DensitySpec::normalized(uniform_grid(-30.0, 30.0, 6001), uniform_grid(-30.0, 30.0, 6001).iter().map(|w| 1.0 / (1.0 + w * w)).collect())?;
    let bc = bound_constants(&g, 1.0, &pb, &optimal_density(&g)?)?;
    let rel = (bc.b_prime - bc.b_prime_fd).abs() / bc.b_prime;
    out.push(outcome(
        "b_prime_two_ways",
        rel < 1e-4,
        format!("spectral {:.8e}, finite difference {:.8e}, relative gap {rel:.2e}", bc.b_prime, bc.b_prime_fd),
    ));

    let bs = b_star();
    let prof = gaussian_profile(1e3 * bs, 1.0, 801)?;
    let bc = bound_constants(&prof, prof.integral(), &pb, &optimal_density(&prof)?)?;
    let ratio_c = bc.c_timedep / (bc.a_star * bc.a_star);
    out.push(outcome(
        "deep_regime",
        ratio_c < 0.1,
        format!("B*/A* = {:.3e}, C/A*^2 = {ratio_c:.3e}", bc.b_star / bc.a_star),
    ));

    for (name, q) in [
        ("stratified_uniform", DensitySpec::uniform(0.0, 1.0, 2)?),
        ("stratified_linear", DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 1.0])?),
    ] {
        let r = stratified_chi2(&q, 4, 25_000, 10, seeds::derive(seed, &[5]), 0.01)?;
        out.push(outcome(
            name,
            r.passed(),
            format!("chi2 {:.2} on {} dof, p = {:.3}", r.statistic, r.dof, r.p_value),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn grid_fn_interpolates_and_vanishes_outside() {
        let f = GridFn::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.eval(3.0), 0.0);
        assert_eq!(f.eval(-0.1), 0.0);
        assert_eq!(f.integral(), 3.0);
        assert!(GridFn::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn density_rejects_bad_input() {
        assert!(DensitySpec::new(vec![0.0, 1.0], vec![1.0, 1.1]).is_err());
        assert!(DensitySpec::normalized(vec![0.0, 1.0], vec![1.0, -0.1]).is_err());
        assert!(DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        let p = DensitySpec::normalized(vec![0.0, 2.0, 5.0], vec![3.0, 1.0, 4.0]).unwrap();
        assert!((p.mass() - 1.0).abs() < DensitySpec::MASS_TOL);
    }

    #[test]
    fn quantile_of_linear_density_is_square_root() {
        let q = DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        for u in [0.0, 0.01, 0.25, 0.5, 0.9, 1.0] {
            assert!((q.quantile(u) - f64::sqrt(u)).abs() < 1e-14, "u = {u}");
            assert!((q.cdf(f64::sqrt(u)) - u).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_skips_zero_cells() {
        let q = DensitySpec::normalized(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mid = q.quantile(0.5);
        assert!(mid <= 1.0 || mid >= 3.0, "{mid}");
        let mut rng = seeds::rng(1, &[]);
        for _ in 0..1000 {
            let x = q.sample(&mut rng);
            assert!(!(x > 1.0 && x < 3.0), "{x}");
        }
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(vals in proptest::collection::vec(0.0f64..5.0, 2..8), u in 0.0f64..1.0) {
            prop_assume!(vals.iter().sum::<f64>() > 1e-3);
            let grid: Vec<f64> = (0..vals.len()).map(|i| i as f64 * 0.7).collect();
            let q = DensitySpec::normalized(grid, vals).unwrap();
            let x = q.quantile(u);
            prop_assert!((q.cdf(x) - u).abs() < 1e-10);
        }

        #[test]
        fn bang_bang_formula_is_grid_minimum(la in -1.0f64..1.0, lb in -1.0f64..1.0) {
            let (a, b) = (10f64.powf(la), 10f64.powf(lb));
            let r = bang_bang_check(a, b, &switch_grid(20_000)).unwrap();
            prop_assert!(r.grid_min >= r.switch_min - 1e-12);
            prop_assert!(r.grid_min >= r.formula_min - 1e-12);
            prop_assert!(r.passed(1e-4));
            if b <= a {
                prop_assert!(r.formula_ok(1e-4));
            }
        }
    }

    #[test]
    fn moments_constant_ratio_has_zero_variance() {
        let p = DensitySpec::normalized(uniform_grid(-1.0, 2.0, 31), (0..31).map(|i| 1.0 + (i as f64).sin().abs()).collect()).unwrap();
        let r = mc_moments_check(|w| p.eval(w), &p, 10, 200, 3).unwrap();
        assert_eq!(r.variance, 0.0);
        assert!(r.exact_variance.abs() < 1e-14);
        assert!(r.passed());

        let u = DensitySpec::uniform(0.0, 1.0, 11).unwrap();
        let r = mc_moments_check(|_| 1.0, &u, 7, 100, 4).unwrap();
        assert_eq!(r.variance, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn moments_linear_integrand() {
        let p = DensitySpec::uniform(0.0, 1.0, 2001).unwrap();
        let r = mc_moments_check(|w| w, &p, 100, 10_000, 11).unwrap();
        // Trapezoid error on int w^2 is h^2 / 6.
        assert!((r.exact_variance - 1.0 / 1200.0).abs() < 1e-9);
        assert!((r.exact_mean - 0.5).abs() < 1e-12);
        assert!(r.passed(), "{r:?}");
        // The i.i.d. fourth moment is the one the simulation reproduces.
        assert!(r.exact_fourth_ok, "{r:?}");
    }

    #[test]
    fn moments_reject_density_gaps() {
        let p = DensitySpec::normalized(vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(mc_moments_check(|w| w, &p, 5, 10, 0).is_err());
    }

    #[test]
    fn optimal_density_of_constant_is_uniform() {
        let g = GridFn::new(uniform_grid(-2.0, 2.0, 9), vec![3.0; 9]).unwrap();
        let p = optimal_density(&g).unwrap();
        assert!(p.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(optimal_density(&GridFn::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn optimal_density_beats_perturbations() {
        let g = gaussian_profile(2.0, 0.7, 401).unwrap();
        let r = optimal_density_check(&g, 20, &[0.5, 0.2, 0.1, 0.05, 0.01], 5).unwrap();
        assert_eq!(r.trials, 100);
        assert!((r.objective - 4.0).abs() < 1e-8);
        assert!(r.passed(1e-8), "{r:?}");
        assert!(r.min_margin > 0.0);
    }

    #[test]
    fn control_examples() {
        let r = optimal_control_check(1.0, &[2.0], 10).unwrap();
        assert!((r.terminal_cost - 1.0).abs() < 1e-14);
        assert!(r.passed(1e-12));
        let r = optimal_control_check(0.5, &[0.0, 0.0], 10).unwrap();
        assert_eq!(r.terminal_cost, 0.0);
        assert_eq!(r.objective, 0.0);
        assert!(optimal_control_check(0.0, &[1.0], 10).is_err());
        assert!(optimal_control_check(-1.0, &[1.0], 10).is_err());
    }

    #[test]
    fn control_random_residuals() {
        let mut rng = seeds::rng(8, &[]);
        let resid: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        for delta in [0.01, 0.3, 1.0] {
            let r = optimal_control_check(delta, &resid, 64).unwrap();
            assert!(r.passed(1e-10), "{r:?}");
            assert!(r.min_margin > 0.0);
        }
    }

    #[test]
    fn bang_bang_examples() {
        let grid = switch_grid(100_000);
        let r = bang_bang_check(2.5, 2.5, &grid).unwrap();
        assert_eq!(r.tau_star, 1.0);
        assert_eq!(r.grid_argmin, 1.0);
        assert!((r.grid_min - 2.5).abs() < 1e-12);
        let r = bang_bang_check(100.0, 1.0, &grid).unwrap();
        assert!((r.tau_star - 0.1).abs() < 1e-15);
        assert!((r.formula_min - 19.0).abs() < 1e-12);
        assert!(r.passed(1e-6) && r.formula_ok(1e-6), "{r:?}");
        // With B > A the switch sits at 1 and G(1) = A exceeds 2 sqrt(AB) - B.
        let r = bang_bang_check(1.0, 4.0, &grid).unwrap();
        assert_eq!(r.grid_argmin, 1.0);
        assert!((r.grid_min - 1.0).abs() < 1e-12);
        assert_eq!(r.formula_min, 0.0);
        assert!(r.passed(1e-6) && !r.formula_ok(1e-6));
        assert!(bang_bang_check(0.0, 1.0, &grid).is_err());
        assert!(bang_bang_check(1.0, 1.0, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn constant_density_constant_examples() {
        assert_eq!(constant_density_constant(3.0, 3.0), 3.0);
        assert_eq!(constant_density_constant(4.0, 1.0), 3.0);
        assert_eq!(bang_bang_min(3.0, 3.0), 3.0);
        assert_eq!(bang_bang_min(4.0, 1.0), 3.0);
        assert_eq!(bang_bang_min(1.0, 9.0), 1.0);
    }

    #[test]
    fn mollifier_shape() {
        assert_eq!(h_eval(0.5), 1.0);
        assert_eq!(h_eval(1.0), 1.0);
        for z in [1.3, 2.0, 4.5, 11.0] {
            assert_eq!(h_eval(z), h_eval(-z));
            assert_eq!(h_prime(z), -h_prime(-z));
        }
        // Approaching z = 1 from outside, the gap to h(1) = 1 shrinks like s^2.
        let gaps: Vec<f64> = (1..=8).map(|k| (h_eval(1.0 + 10f64.powi(-k)) - 1.0).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
        assert!(gaps[2..].iter().all(|&g| g < 1e-6), "{gaps:?}");
        assert!(h_eval(H_RADIUS) < 1e-50);
    }

    #[test]
    fn mollifier_derivative_matches_difference_quotient() {
        for z in [1.05, 1.5, 2.0, 3.7, -2.2] {
            let fd = (h_eval(z + 1e-6) - h_eval(z - 1e-6)) / 2e-6;
            assert!((h_prime(z) - fd).abs() < 1e-7, "z = {z}");
        }
    }

    #[test]
    fn scaled_derivative_sup_dominates_samples() {
        let s = scaled_derivative_sup();
        assert!(s >= 1.0);
        for i in 0..20_000 {
            let w = i as f64 * 6e-4;
            assert!((h_eval(w) + w * h_prime(w)).abs() <= s + 1e-12);
        }
    }

    #[test]
    fn transform_matches_direct_quadrature() {
        let m = Mollifier::default();
        // Independent evaluation with plain sin/cos and Simpson's rule.
        let n = 24_000;
        let dz = H_RADIUS / n as f64;
        for omega in [0.0, 0.3, 1.7, 5.0, 12.5] {
            let (mut hat, mut dhat) = (0.0, 0.0);
            for i in 0..=n {
                let z = i as f64 * dz;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 } * dz / 3.0;
                hat += w * h_eval(z) * (omega * z).cos();
                dhat -= w * z * h_eval(z) * (omega * z).sin();
            }
            let (a, b) = m.transform(omega);
            assert!((a - hat / PI).abs() < 1e-6, "omega = {omega}: {a} vs {}", hat / PI);
            assert!((b - dhat / PI).abs() < 1e-6, "omega = {omega}: {b} vs {}", dhat / PI);
        }
        // int h^ = h(0) = 1 under this convention.
        let grid = uniform_grid(-HAT_RADIUS, HAT_RADIUS, 8001);
        let vals: Vec<f64> = grid.iter().map(|&w| m.hat(w)).collect();
        assert!((trapezoid(&grid, &vals) - 1.0).abs() < 1e-3);
    }

    fn cauchy_density() -> DensitySpec {
        let grid = uniform_grid(-30.0, 30.0, 6001);
        let vals = grid.iter().map(|w| 1.0 / (1.0 + w * w)).collect();
        DensitySpec::normalized(grid, vals).unwrap()
    }

    #[test]
    fn b_prime_two_ways_agree() {
        let g = gaussian_profile(1.0, 1.0, 401).unwrap();
        let c = bound_constants(&g, 1.0, &cauchy_density(), &optimal_density(&g).unwrap()).unwrap();
        assert!(((c.b_prime - c.b_prime_fd) / c.b_prime).abs() < 1e-4, "{c:?}");
        assert!((c.a - c.a_star * c.a_star).abs() < 1e-10);
        assert!((c.b - c.b_prime * (2.0 * c.scaled_derivative_sup).exp()).abs() < 1e-12 * c.b);
        assert!(c.t_star > 0.0 && c.t_star <= 1.0);
        assert!(c.tau_star > 0.0 && c.tau_star <= 1.0);
    }

    #[test]
    fn b_prime_at_optimal_density_is_squared_l1() {
        let m = Mollifier::default();
        let grid = uniform_grid(-HAT_RADIUS, HAT_RADIUS, 8001);
        let vals: Vec<f64> = grid.iter().map(|&w| m.hat_prime(w).abs()).collect();
        let pb = DensitySpec::normalized(grid, vals).unwrap();
        let g = gaussian_profile(1.0, 1.0, 101).unwrap();
        let c = bound_constants(&g, 1.0, &pb, &optimal_density(&g).unwrap()).unwrap();
        let l1 = c.b_star / c.scaled_derivative_sup.exp();
        assert!((c.b_prime - l1 * l1).abs() < 1e-8 * l1 * l1, "{} vs {}", c.b_prime, l1 * l1);
    }

    #[test]
    fn b_star_independent_of_f() {
        let g = gaussian_profile(1.0, 1.0, 101).unwrap();
        let p = optimal_density(&g).unwrap();
        let c1 = bound_constants(&g, 1.0, &cauchy_density(), &p).unwrap();
        let c2 = bound_constants(&g, 3.0, &cauchy_density(), &p).unwrap();
        assert_eq!(c1.b_star, c2.b_star);
    }

    #[test]
    fn deep_regime_constant_is_small() {
        let bs = b_star();
        let prof = gaussian_profile(1e3 * bs, 1.0, 801).unwrap();
        let f_sup = prof.integral();
        let c = bound_constants(&prof, f_sup, &cauchy_density(), &optimal_density(&prof).unwrap()).unwrap();
        assert!((c.b_star / c.a_star - 1e-3).abs() < 1e-12);
        assert!((c.t_star - 1e-3).abs() < 1e-12);
        let expected = (1e-3f64 * (1.0 + 1e3f64.ln())).powi(2);
        assert!((c.c_timedep / (c.a_star * c.a_star) - expected).abs() < 1e-12);
        assert!(c.c_timedep / (c.a_star * c.a_star) < 0.1);
    }

    #[test]
    fn bound_constants_reject_gaps() {
        let g = gaussian_profile(1.0, 1.0, 101).unwrap();
        let narrow = DensitySpec::uniform(-1.0, 1.0, 11).unwrap();
        assert!(bound_constants(&g, 1.0, &cauchy_density(), &narrow).is_err());
        assert!(bound_constants(&g, 0.0, &cauchy_density(), &optimal_density(&g).unwrap()).is_err());
    }

    fn integrate_2d(t: &[f64], w: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        let rows: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let v: Vec<f64> = w.iter().map(|&wi| f(ti, wi)).collect();
                trapezoid(w, &v)
            })
            .collect();
        trapezoid(t, &rows)
    }

    #[test]
    fn time_dependent_densities_have_unit_mass() {
        let bs = b_star();
        let prof = gaussian_profile(20.0 * bs, 0.8, 641).unwrap();
        let f_sup = prof.integral();
        let td = TimeDependentDensities::new(&prof, f_sup).unwrap();
        let ts = td.t_star();
        assert!((ts - 0.05).abs() < 1e-12);

        // Pieces are integrated separately so the jump at t* is not smeared.
        let before = uniform_grid(0.0, ts * (1.0 - 1e-12), 5);
        let after = uniform_grid(ts, 1.0, 20_001);
        let input = integrate_2d(&before, prof.grid(), |t, w| td.input(t, w));
        assert!((input - 1.0).abs() < 1e-10, "{input}");
        assert_eq!(integrate_2d(&after, prof.grid(), |t, w| td.input(t, w)), 0.0);

        // Separable: omega mass times time mass.
        let wg = td.state_grid();
        let wmass = trapezoid(&wg, &wg.iter().map(|&w| td.state(0.5, w) * 0.5 * (1.0 / ts).ln()).collect::<Vec<_>>());
        assert!((wmass - 1.0).abs() < 1e-10, "{wmass}");
        let tmass = trapezoid(&after, &after.iter().map(|&t| 1.0 / (t * (1.0 / ts).ln())).collect::<Vec<_>>());
        assert!((tmass - 1.0).abs() < 1e-6, "{tmass}");
        for &t in &before {
            assert_eq!(td.state(t, 0.3), 0.0);
        }
        // Direct 2-d quadrature on a coarser time grid.
        let coarse = uniform_grid(ts, 1.0, 801);
        let full = integrate_2d(&coarse, &wg, |t, w| td.state(t, w));
        assert!((full - 1.0).abs() < 1e-3, "{full}");
    }

    #[test]
    fn time_dependent_clamps_at_one() {
        let prof = gaussian_profile(0.5 * b_star(), 1.0, 101).unwrap();
        let td = TimeDependentDensities::new(&prof, prof.integral()).unwrap();
        assert_eq!(td.t_star(), 1.0);
        assert_eq!(td.state(0.99, 0.2), 0.0);
        assert!(td.input(0.99, 0.2) > 0.0);
    }

    #[test]
    fn stratified_uniform_is_identity() {
        let q = DensitySpec::uniform(0.0, 1.0, 2).unwrap();
        let st = stratified_times(&q, 5, 200, 3).unwrap();
        for (l, lvl) in st.levels.iter().enumerate() {
            assert!((lvl - l as f64 / 5.0).abs() < 1e-15);
        }
        for (l, ts) in st.times.iter().enumerate() {
            assert_eq!(ts.len(), 200);
            assert!(ts.iter().all(|&t| t >= l as f64 / 5.0 - 1e-15 && t < (l + 1) as f64 / 5.0 + 1e-15));
        }
    }

    #[test]
    fn stratified_times_stay_in_strata() {
        let q = DensitySpec::normalized(uniform_grid(0.0, 1.0, 6), vec![0.2, 3.0, 0.5, 0.0, 1.0, 2.0]).unwrap();
        let st = stratified_times(&q, 4, 500, 9).unwrap();
        for (l, ts) in st.times.iter().enumerate() {
            assert!(ts.iter().all(|&t| t >= st.levels[l] && t <= st.levels[l + 1]));
        }
        let lin = DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let st = stratified_times(&lin, 4, 1, 0).unwrap();
        for (l, lvl) in st.levels.iter().enumerate() {
            assert!((lvl - (l as f64 / 4.0).sqrt()).abs() < 1e-14);
        }
        assert!(stratified_times(&DensitySpec::uniform(0.0, 2.0, 3).unwrap(), 2, 2, 0).is_err());
    }

    #[test]
    fn stratified_chi2_accepts_correct_law() {
        for q in [
            DensitySpec::uniform(0.0, 1.0, 2).unwrap(),
            DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap(),
        ] {
            let r = stratified_chi2(&q, 4, 25_000, 10, 17, 0.01).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn stratified_chi2_rejects_wrong_law() {
        // Draw from q(t) = 2t but test against the uniform law.
        let lin = DensitySpec::normalized(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let uni = DensitySpec::uniform(0.0, 1.0, 2).unwrap();
        let st = stratified_times(&lin, 1, 20_000, 4).unwrap();
        let mut counts = [0usize; 10];
        for &t in &st.times[0] {
            counts[((t * 10.0) as usize).min(9)] += 1;
        }
        let stat: f64 = counts
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                let e = 20_000.0 * (uni.cdf((b + 1) as f64 / 10.0) - uni.cdf(b as f64 / 10.0));
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new(9.0).unwrap().inverse_cdf(0.99);
        assert!(stat > crit);
    }

    #[test]
    fn verify_all_passes() {
        let out = verify_all(2024).unwrap();
        for o in &out {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
        assert!(out.len() >= 9);
    }
}
