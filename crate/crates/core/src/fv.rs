//! Upwind finite-volume scheme on a uniform grid.
//!
//! The density is advanced by
//!
//! ```text
//! ρᵢⁿ⁺¹ = ρᵢⁿ - Δt/Δx (J_{i+1/2} - J_{i-1/2}),   J_{i+1/2} = (aᵢ)₊ρᵢ + (aᵢ₊₁)₋ρᵢ₊₁
//! ```
//!
//! with the cell velocity `aᵢ` built so that the discrete product `aᵢρᵢ`
//! matches the measure-valued flux after blow-up:
//!
//! * linear mode: `aᵢ = Σ_{j≠i} W'(xᵢ - xⱼ) ρⱼ Δx`, diagonal excluded;
//! * nonlinear mode: `aᵢ` is the divided difference of `A` between the two
//!   interface values of `∂ₓS`, where `∂ₓS` solves the discrete version of
//!   `∂ₓ(W' * ρ) = -cρ + w * ρ` with `w * ρ` approximated by `νᵢ`.
//!
//! With `a = id` both constructions give the same `aᵢ` up to rounding.

use std::io::{self, Write};

use thiserror::Error;

use crate::measure::{DiscreteMeasure, MeasureError, MASS_TOL};
use crate::potentials::{
    velocity_sup_bound, Decomposition, Mode, PointyPotential, PotentialError, VelocityLaw,
    GAUSS_LEGENDRE_5,
};

/// Cells inspected at each end of the grid by the boundary-mass guard.
pub const BOUNDARY_CELLS: usize = 5;
/// Largest mass allowed in the boundary cells before a run aborts.
pub const BOUNDARY_MASS_TOL: f64 = 1e-8;
/// Largest mass allowed to leave through either end in a single step.
pub const OUTFLOW_TOL: f64 = 1e-15;
/// Tail mass of `w` dropped when truncating the `ν` kernel.
pub const KERNEL_TAIL_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("initial data reaches outside the grid ({0})")]
    SupportOutsideGrid(String),
    #[error("initial data has total mass {0}, expected 1")]
    NotUnitMass(f64),
    #[error("CFL number {0} exceeds 1")]
    CflViolation(f64),
    #[error("mass {mass:e} leaves through the {side} boundary in one step; enlarge the grid")]
    BoundaryOutflow { side: &'static str, mass: f64 },
    #[error("mass {mass:e} within {BOUNDARY_CELLS} cells of the {side} boundary at t = {time}; enlarge the grid")]
    BoundaryMass { side: &'static str, mass: f64, time: f64 },
    #[error("non-finite {what} in cell {cell}")]
    NonFinite { what: &'static str, cell: usize },
    #[error("states live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Uniform grid with cell centers `xᵢ = origin + i·dx` and cells
/// `Cᵢ = [xᵢ - dx/2, xᵢ + dx/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    origin: f64,
    dx: f64,
    n_cells: usize,
}

impl Grid {
    pub fn new(origin: f64, dx: f64, n_cells: usize) -> Result<Self, SchemeError> {
        if !(dx > 0.0 && dx.is_finite()) || !origin.is_finite() {
            return Err(SchemeError::InvalidGrid(format!("origin {origin}, dx {dx}")));
        }
        if n_cells < 2 {
            return Err(SchemeError::InvalidGrid(format!("{n_cells} cells, need at least 2")));
        }
        Ok(Self { origin, dx, n_cells })
    }

    /// `n_cells` equal cells tiling `[lo, hi]`.
    pub fn covering(lo: f64, hi: f64, n_cells: usize) -> Result<Self, SchemeError> {
        if !(hi > lo) {
            return Err(SchemeError::InvalidGrid(format!("empty domain [{lo}, {hi}]")));
        }
        let dx = (hi - lo) / n_cells as f64;
        Self::new(lo + 0.5 * dx, dx, n_cells)
    }

    /// Center of cell 0.
    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.dx
    }

    /// Left edge of cell `i` (`i = n_cells` gives the right end of the grid).
    pub fn edge(&self, i: usize) -> f64 {
        self.origin + (i as f64 - 0.5) * self.dx
    }

    pub fn lower(&self) -> f64 {
        self.edge(0)
    }

    pub fn upper(&self) -> f64 {
        self.edge(self.n_cells)
    }

    /// Index of the cell containing `x`; points on an interface go right.
    pub fn cell_containing(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower() && x < self.upper()) {
            return None;
        }
        let mut i = ((x - self.lower()) / self.dx).floor() as isize;
        i = i.clamp(0, self.n_cells as isize - 1);
        let mut i = i as usize;
        while i + 1 < self.n_cells && x >= self.edge(i + 1) {
            i += 1;
        }
        while i > 0 && x < self.edge(i) {
            i -= 1;
        }
        Some(i)
    }
}

/// Per-cell densities at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct FvState {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub time: f64,
    pub step_index: usize,
}

impl FvState {
    pub fn new(grid: Grid, rho: Vec<f64>) -> Result<Self, SchemeError> {
        if rho.len() != grid.n_cells() {
            return Err(SchemeError::InvalidGrid(format!(
                "{} densities for {} cells",
                rho.len(),
                grid.n_cells()
            )));
        }
        Ok(Self {
            grid,
            rho,
            time: 0.0,
            step_index: 0,
        })
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `M₁ = Σ |xᵢ| ρᵢ Δx`.
    pub fn first_moment(&self) -> f64 {
        self.rho
            .iter()
            .enumerate()
            .map(|(i, r)| self.grid.center(i).abs() * r)
            .sum::<f64>()
            * self.grid.dx()
    }

    /// First and last cells with nonzero density.
    pub fn support(&self) -> Option<(usize, usize)> {
        let lo = self.rho.iter().position(|&r| r != 0.0)?;
        let hi = self.rho.iter().rposition(|&r| r != 0.0)?;
        Some((lo, hi))
    }

    /// `Mᵢ = Σ_{k≤i} ρₖ Δx`.
    pub fn cumulative(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        self.rho
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r * dx;
                Some(*acc)
            })
            .collect()
    }

    /// Total variation of the cumulative mass over the whole line.
    pub fn cumulative_variation(&self) -> f64 {
        let m = self.cumulative();
        let mut prev = 0.0;
        m.iter()
            .map(|&mi| {
                let d = (mi - prev).abs();
                prev = mi;
                d
            })
            .sum()
    }

    /// Reconstruction `Σ ρᵢ Δx δ_{xᵢ}`.
    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::from_cells(self.grid.origin(), self.grid.dx(), &self.rho)
            .expect("scheme densities are nonnegative")
    }

    /// Mass held by the first and last [`BOUNDARY_CELLS`] cells.
    pub fn boundary_masses(&self) -> (f64, f64) {
        let k = BOUNDARY_CELLS.min(self.rho.len());
        let dx = self.grid.dx();
        let left = self.rho[..k].iter().sum::<f64>() * dx;
        let right = self.rho[self.rho.len() - k..].iter().sum::<f64>() * dx;
        (left, right)
    }

    /// Writes `x,rho` rows (cell centers and densities).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,rho")?;
        for (i, r) in self.rho.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.grid.center(i), r)?;
        }
        Ok(())
    }
}

/// A Gaussian bump `amplitude · exp(-((x - center)/width)²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-z * z).exp()
    }

    /// Mass over the whole line.
    pub fn mass(&self) -> f64 {
        self.amplitude * self.width * std::f64::consts::PI.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialData {
    Atoms(DiscreteMeasure),
    /// Sum of bumps; with `normalize` the projected profile is scaled to unit mass.
    Bumps { bumps: Vec<Bump>, normalize: bool },
}

impl InitialData {
    pub fn bump_density(bumps: &[Bump], x: f64) -> f64 {
        bumps.iter().map(|b| b.eval(x)).sum()
    }
}

/// Cell averages `(1/Δx) ∫_{Cᵢ} f` by 5-point Gauss-Legendre on each cell.
pub fn project_density<F: Fn(f64) -> f64>(grid: &Grid, density: F) -> Vec<f64> {
    let half = 0.5 * grid.dx();
    (0..grid.n_cells())
        .map(|i| {
            let mid = grid.center(i);
            GAUSS_LEGENDRE_5
                .iter()
                .map(|&(node, weight)| weight * density(mid + half * node))
                .sum::<f64>()
                * 0.5
        })
        .collect()
}

/// Cell averages of the initial measure, renormalized to unit mass.
pub fn project_initial(initial: &InitialData, grid: &Grid) -> Result<FvState, SchemeError> {
    let mut rho = vec![0.0; grid.n_cells()];
    match initial {
        InitialData::Atoms(measure) => {
            if (measure.total_mass() - 1.0).abs() > MASS_TOL {
                return Err(SchemeError::NotUnitMass(measure.total_mass()));
            }
            for atom in measure.atoms() {
                let cell = grid.cell_containing(atom.position).ok_or_else(|| {
                    SchemeError::SupportOutsideGrid(format!("atom at {}", atom.position))
                })?;
                rho[cell] += atom.mass / grid.dx();
            }
        }
        InitialData::Bumps { bumps, normalize } => {
            for b in bumps {
                if !(b.amplitude >= 0.0 && b.width > 0.0) || !b.center.is_finite() {
                    return Err(SchemeError::InvalidParameter {
                        name: "bump",
                        value: if b.width > 0.0 { b.amplitude } else { b.width },
                    });
                }
            }
            rho = project_density(grid, |x| InitialData::bump_density(bumps, x));
            let line_mass: f64 = bumps.iter().map(Bump::mass).sum();
            let grid_mass = rho.iter().sum::<f64>() * grid.dx();
            if (grid_mass - line_mass).abs() > 1e-6 * line_mass {
                return Err(SchemeError::SupportOutsideGrid(format!(
                    "grid holds {grid_mass} of {line_mass}"
                )));
            }
            if !normalize && (line_mass - 1.0).abs() > 1e-6 {
                return Err(SchemeError::NotUnitMass(line_mass));
            }
        }
    }
    let mass = rho.iter().sum::<f64>() * grid.dx();
    if !(mass > 0.0) {
        return Err(SchemeError::NotUnitMass(mass));
    }
    for r in &mut rho {
        *r /= mass;
    }
    FvState::new(*grid, rho)
}

/// Discrete `w` kernel: `½(g_d + g_{d+1}) Δx = ∫_{dΔx}^{(d+1)Δx} w` for every
/// offset `d`, so that `νᵢ = Σₖ ρₖ g_{i-k} Δx`.
///
/// The recursion starts at the far left of the truncated support from
/// `g = w(x_left)` and runs rightwards.
#[derive(Clone, Debug, PartialEq)]
pub struct NuKernel {
    dx: f64,
    reach: usize,
    values: Vec<f64>,
    /// `prefix[m] = Δx Σ_{l<m} values[l]`
    prefix: Vec<f64>,
}

impl NuKernel {
    /// Largest `|d|` with a stored value; `0` with no values for `w = 0`.
    pub fn reach(&self) -> usize {
        self.reach
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(offset, g_offset)` pairs in increasing offset order.
    pub fn entries(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        let reach = self.reach as isize;
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (k as isize - reach, v))
    }

    pub fn get(&self, offset: isize) -> f64 {
        let k = offset + self.reach as isize;
        if self.values.is_empty() || k < 0 || k as usize >= self.values.len() {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    /// `Δx Σ_{m<offset} g_m`: the `ν` mass a unit source deposits strictly left of `offset`.
    pub fn mass_below(&self, offset: isize) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let k = (offset + self.reach as isize).clamp(0, self.values.len() as isize);
        self.prefix[k as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.prefix.last().copied().unwrap_or(0.0)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }
}

pub fn build_nu_kernel(potential: &PointyPotential, grid: &Grid) -> Result<NuKernel, SchemeError> {
    let decomposition = potential.require_decomposition()?;
    Ok(kernel_for(decomposition, grid.dx()))
}

fn kernel_for(decomposition: &Decomposition, dx: f64) -> NuKernel {
    if decomposition.is_trivial() {
        return NuKernel {
            dx,
            reach: 0,
            values: Vec::new(),
            prefix: vec![0.0],
        };
    }
    let tails = |reach: usize| {
        let x = reach as f64 * dx;
        decomposition
            .interval_integral(f64::NEG_INFINITY, -x)
            .max(decomposition.interval_integral(x, f64::INFINITY))
    };
    let mut reach = 1usize;
    while tails(reach) >= KERNEL_TAIL_TOL {
        reach *= 2;
    }
    let mut values = Vec::with_capacity(2 * reach + 1);
    let mut g = decomposition.w(-(reach as f64) * dx);
    values.push(g);
    for k in 0..2 * reach {
        let d = k as f64 - reach as f64;
        let integral = decomposition.interval_integral(d * dx, (d + 1.0) * dx);
        g = 2.0 * integral / dx - g;
        values.push(g);
    }
    let mut prefix = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    prefix.push(acc);
    for v in &values {
        acc += v * dx;
        prefix.push(acc);
    }
    NuKernel {
        dx,
        reach,
        values,
        prefix,
    }
}

/// `νᵢ = Σₖ ρₖ g_{i-k} Δx`, the discrete `w * ρ`.
pub fn nu_convolution(state: &FvState, kernel: &NuKernel) -> Vec<f64> {
    let n = state.rho.len();
    let mut nu = vec![0.0; n];
    if kernel.is_empty() {
        return nu;
    }
    let dx = state.grid.dx();
    for (k, &r) in state.rho.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let weight = r * dx;
        let reach = kernel.reach() as isize;
        let lo = (k as isize - reach).max(0) as usize;
        let hi = ((k as isize + reach) as usize).min(n - 1);
        for (i, slot) in nu.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *slot += weight * kernel.get(i as isize - k as isize);
        }
    }
    nu
}

/// Interface gradients `∂ₓS_{i-1/2}`, `i = 0..=n`, from
/// `∂ₓS_{i+1/2} - ∂ₓS_{i-1/2} = Δx (νᵢ - c ρᵢ)`.
///
/// The left anchor is the value of `W' * ρ` at the left edge of the grid:
/// `mass · (c/2 - ∫_{-∞}^0 w)` plus the `ν` mass that the kernel deposits left of the grid.
pub fn solve_s_gradient(
    state: &FvState,
    potential: &PointyPotential,
    kernel: &NuKernel,
    nu: &[f64],
) -> Result<Vec<f64>, SchemeError> {
    let decomposition = potential.require_decomposition()?;
    let c = decomposition.c();
    let dx = state.grid.dx();
    let mut anchor = state.mass() * decomposition.far_left_gradient();
    if !kernel.is_empty() {
        anchor += state
            .rho
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0.0)
            .map(|(j, &r)| r * dx * kernel.mass_below(-(j as isize)))
            .sum::<f64>();
    }
    let mut s_grad = Vec::with_capacity(state.rho.len() + 1);
    s_grad.push(anchor);
    let mut current = anchor;
    for (r, v) in state.rho.iter().zip(nu) {
        current += dx * (v - c * r);
        s_grad.push(current);
    }
    Ok(s_grad)
}

/// Cell velocities, plus the `∂ₓS` and `ν` that produced them in nonlinear mode.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub a_cell: Vec<f64>,
    /// `s_grad[i] = ∂ₓS_{i-1/2}`, length `n + 1`.
    pub s_grad: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
}

impl VelocityField {
    pub fn zero(n: usize) -> Self {
        Self {
            a_cell: vec![0.0; n],
            s_grad: None,
            nu: None,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a_cell.iter().fold(0.0, |m, a| m.max(a.abs()))
    }
}

/// Velocity construction for one grid and potential, with the per-grid tables cached.
#[derive(Clone, Debug)]
pub struct VelocityOperator {
    grid: Grid,
    mode: Mode,
    potential: PointyPotential,
    law: VelocityLaw,
    /// `W'(dΔx)` for `d = -(n-1)..=(n-1)`, zero at `d = 0`.
    derivative_table: Vec<f64>,
    kernel: Option<NuKernel>,
}

impl VelocityOperator {
    pub fn new(
        grid: Grid,
        potential: PointyPotential,
        law: VelocityLaw,
        mode: Mode,
    ) -> Result<Self, SchemeError> {
        let n = grid.n_cells() as isize;
        let (derivative_table, kernel) = match mode {
            Mode::Linear => {
                let table = (-(n - 1)..n)
                    .map(|d| {
                        if d == 0 {
                            0.0
                        } else {
                            potential.derivative(d as f64 * grid.dx())
                        }
                    })
                    .collect();
                (table, None)
            }
            Mode::Nonlinear => (Vec::new(), Some(build_nu_kernel(&potential, &grid)?)),
        };
        Ok(Self {
            grid,
            mode,
            potential,
            law,
            derivative_table,
            kernel,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn kernel(&self) -> Option<&NuKernel> {
        self.kernel.as_ref()
    }

    /// `a_∞` for this configuration.
    pub fn velocity_bound(&self) -> Result<f64, SchemeError> {
        Ok(velocity_sup_bound(&self.potential, &self.law, self.mode)?)
    }

    pub fn velocity(&self, state: &FvState) -> Result<VelocityField, SchemeError> {
        if state.grid != self.grid {
            return Err(SchemeError::GridMismatch);
        }
        match self.mode {
            Mode::Linear => Ok(self.linear(state)),
            Mode::Nonlinear => self.nonlinear(state),
        }
    }

    fn linear(&self, state: &FvState) -> VelocityField {
        let n = state.rho.len();
        let dx = state.grid.dx();
        let sources: Vec<(usize, f64)> = state
            .rho
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0.0)
            .map(|(j, &r)| (j, r * dx))
            .collect();
        let a_cell = (0..n)
            .map(|i| {
                let row = &self.derivative_table[i..];
                // row[n - 1 - j] = W'((i - j)Δx)
                compensated_sum(sources.iter().map(|&(j, m)| row[n - 1 - j] * m))
            })
            .collect();
        VelocityField {
            a_cell,
            s_grad: None,
            nu: None,
        }
    }

    fn nonlinear(&self, state: &FvState) -> Result<VelocityField, SchemeError> {
        let kernel = self.kernel.as_ref().expect("nonlinear operator has a kernel");
        let nu = nu_convolution(state, kernel);
        let s_grad = solve_s_gradient(state, &self.potential, kernel, &nu)?;
        let a_cell = s_grad
            .windows(2)
            .enumerate()
            .map(|(cell, w)| {
                let a = self.law.divided_difference(w[0], w[1]);
                if a.is_finite() {
                    Ok(a)
                } else {
                    Err(SchemeError::NonFinite {
                        what: "velocity",
                        cell,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VelocityField {
            a_cell,
            s_grad: Some(s_grad),
            nu: Some(nu),
        })
    }
}

/// Neumaier summation.
fn compensated_sum<I: Iterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for t in terms {
        let next = sum + t;
        carry += if sum.abs() >= t.abs() {
            (sum - next) + t
        } else {
            (t - next) + sum
        };
        sum = next;
    }
    sum + carry
}

/// `aᵢ = Σ_{j≠i} W'(xᵢ - xⱼ) ρⱼ Δx` by direct summation.
pub fn linear_velocity(state: &FvState, potential: &PointyPotential) -> VelocityField {
    VelocityOperator::new(state.grid, potential.clone(), VelocityLaw::identity(), Mode::Linear)
        .expect("linear mode needs no decomposition")
        .linear(state)
}

/// Divided-difference velocity from the discrete `∂ₓS`.
pub fn nonlinear_velocity(
    state: &FvState,
    potential: &PointyPotential,
    law: &VelocityLaw,
) -> Result<VelocityField, SchemeError> {
    VelocityOperator::new(state.grid, potential.clone(), *law, Mode::Nonlinear)?.nonlinear(state)
}

/// `Δt = γ Δx / a_∞`, or `cap` when `a_∞ = 0`.
pub fn cfl_dt(velocity_bound: f64, dx: f64, gamma: f64, cap: f64) -> Result<f64, SchemeError> {
    if !(dx > 0.0) {
        return Err(SchemeError::InvalidParameter { name: "dx", value: dx });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(SchemeError::InvalidParameter {
            name: "gamma",
            value: gamma,
        });
    }
    if !(velocity_bound >= 0.0) {
        return Err(SchemeError::InvalidParameter {
            name: "velocity_bound",
            value: velocity_bound,
        });
    }
    if velocity_bound == 0.0 {
        if !(cap > 0.0) {
            return Err(SchemeError::InvalidParameter { name: "cap", value: cap });
        }
        return Ok(cap);
    }
    Ok(gamma * dx / velocity_bound)
}

/// One upwind step. Refuses to step when `Δt max|aᵢ| / Δx > 1`.
///
/// Densities outside the grid are zero; flux leaving through either end must
/// stay below [`OUTFLOW_TOL`].
pub fn step(state: &FvState, velocity: &VelocityField, dt: f64) -> Result<FvState, SchemeError> {
    let n = state.rho.len();
    let dx = state.grid.dx();
    let courant = dt * velocity.max_abs() / dx;
    if courant > 1.0 + 1e-12 {
        return Err(SchemeError::CflViolation(courant));
    }
    let rho = &state.rho;
    let a = &velocity.a_cell;
    // flux[i] = J_{i-1/2}
    let mut flux = vec![0.0; n + 1];
    flux[0] = a[0].min(0.0) * rho[0];
    for i in 0..n - 1 {
        flux[i + 1] = a[i].max(0.0) * rho[i] + a[i + 1].min(0.0) * rho[i + 1];
    }
    flux[n] = a[n - 1].max(0.0) * rho[n - 1];
    if -flux[0] * dt > OUTFLOW_TOL {
        return Err(SchemeError::BoundaryOutflow {
            side: "left",
            mass: -flux[0] * dt,
        });
    }
    if flux[n] * dt > OUTFLOW_TOL {
        return Err(SchemeError::BoundaryOutflow {
            side: "right",
            mass: flux[n] * dt,
        });
    }
    // Same update regrouped as a sum of nonnegative terms:
    // ρᵢ(1 - λ|aᵢ|) + λ(aᵢ₋₁)₊ρᵢ₋₁ - λ(aᵢ₊₁)₋ρᵢ₊₁.
    let ratio = dt / dx;
    let next: Vec<f64> = (0..n)
        .map(|i| {
            let stay = (1.0 - ratio * a[i].abs()).max(0.0) * rho[i];
            let from_left = if i > 0 { ratio * a[i - 1].max(0.0) * rho[i - 1] } else { 0.0 };
            let from_right = if i + 1 < n { -ratio * a[i + 1].min(0.0) * rho[i + 1] } else { 0.0 };
            stay + from_left + from_right
        })
        .collect();
    if let Some(cell) = next.iter().position(|r| !r.is_finite()) {
        return Err(SchemeError::NonFinite { what: "density", cell });
    }
    Ok(FvState {
        grid: state.grid,
        rho: next,
        time: state.time + dt,
        step_index: state.step_index + 1,
    })
}

/// `maxᵢ [(∂ₓS_{i+1/2} - ∂ₓS_{i-1/2})/Δx - νᵢ]`, the discrete form of
/// `∂ₓu - w * ρ ≤ 0`. It equals `maxᵢ(-c ρᵢ)` when the S-solve is intact.
///
/// `None` when the field carries no `∂ₓS` (linear mode).
pub fn entropy_residual(state: &FvState, velocity: &VelocityField) -> Option<f64> {
    let s_grad = velocity.s_grad.as_ref()?;
    let nu = velocity.nu.as_ref()?;
    let dx = state.grid.dx();
    Some(
        s_grad
            .windows(2)
            .zip(nu)
            .map(|(w, v)| (w[1] - w[0]) / dx - v)
            .fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Total variation of the cumulative mass at each time level.
pub fn cumulative_tv(states: &[FvState]) -> Result<Vec<f64>, SchemeError> {
    if let Some(first) = states.first() {
        if states.iter().any(|s| s.grid != first.grid) {
            return Err(SchemeError::GridMismatch);
        }
    }
    Ok(states.iter().map(FvState::cumulative_variation).collect())
}

/// Per-time-level scheme diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub max_abs_a: f64,
    pub moment1: f64,
    pub support: Option<(usize, usize)>,
    pub tv_cumulative: f64,
    pub entropy_residual: Option<f64>,
}

impl StepDiagnostics {
    pub fn of(state: &FvState, velocity: &VelocityField) -> Self {
        Self {
            step: state.step_index,
            time: state.time,
            mass: state.mass(),
            min_rho: state.min_density(),
            max_abs_a: velocity.max_abs(),
            moment1: state.first_moment(),
            support: state.support(),
            tv_cumulative: state.cumulative_variation(),
            entropy_residual: entropy_residual(state, velocity),
        }
    }

    pub fn support_cells(&self) -> usize {
        self.support.map_or(0, |(lo, hi)| hi - lo + 1)
    }
}

pub fn write_diagnostics_csv<W: Write>(rows: &[StepDiagnostics], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "step,time,mass,min_rho,max_abs_a,moment1,support_cells,tv_cumulative,entropy_residual"
    )?;
    for r in rows {
        let entropy = r
            .entropy_residual
            .map_or_else(|| "NaN".to_string(), |e| format!("{e:.16e}"));
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
            r.step,
            r.time,
            r.mass,
            r.min_rho,
            r.max_abs_a,
            r.moment1,
            r.support_cells(),
            r.tv_cumulative,
            entropy
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub t_end: f64,
    pub gamma: f64,
    /// Extra output times in `(0, t_end)`; `0` and `t_end` are always sampled.
    pub sample_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: FvState,
}

impl Snapshot {
    pub fn measure(&self) -> DiscreteMeasure {
        self.state.measure()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub velocity_bound: f64,
    pub dt: f64,
}

impl RunOutput {
    pub fn final_state(&self) -> &FvState {
        &self.snapshots.last().expect("a run keeps its initial snapshot").state
    }
}

/// Advances `initial` to `t_end` with `Δt = γΔx/a_∞`, shortening steps to land
/// on every sample time, and records diagnostics at every time level.
pub fn run(
    initial: &FvState,
    potential: &PointyPotential,
    law: &VelocityLaw,
    config: &RunConfig,
) -> Result<RunOutput, SchemeError> {
    if !(config.t_end >= 0.0 && config.t_end.is_finite()) {
        return Err(SchemeError::InvalidParameter {
            name: "t_end",
            value: config.t_end,
        });
    }
    let operator = VelocityOperator::new(initial.grid, potential.clone(), *law, config.mode)?;
    let velocity_bound = operator.velocity_bound()?;
    let dt = cfl_dt(
        velocity_bound,
        initial.grid.dx(),
        config.gamma,
        config.t_end.max(f64::MIN_POSITIVE),
    )?;

    let mut targets: Vec<f64> = config
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < config.t_end)
        .collect();
    targets.push(config.t_end);
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let mut state = initial.clone();
    let mut snapshots = vec![Snapshot {
        time: state.time,
        state: state.clone(),
    }];
    let mut diagnostics = Vec::new();
    let mut next_target = targets.iter().position(|&t| t > state.time);
    loop {
        check_boundary(&state)?;
        let velocity = operator.velocity(&state)?;
        diagnostics.push(StepDiagnostics::of(&state, &velocity));
        let Some(k) = next_target else { break };
        let target = targets[k];
        let remaining = target - state.time;
        let h = dt.min(remaining);
        state = step(&state, &velocity, h)?;
        if (target - state.time).abs() <= 1e-12 * target.abs().max(1.0) {
            state.time = target;
            snapshots.push(Snapshot {
                time: target,
                state: state.clone(),
            });
            next_target = if k + 1 < targets.len() { Some(k + 1) } else { None };
        }
    }
    Ok(RunOutput {
        snapshots,
        diagnostics,
        velocity_bound,
        dt,
    })
}

fn check_boundary(state: &FvState) -> Result<(), SchemeError> {
    let (left, right) = state.boundary_masses();
    for (side, mass) in [("left", left), ("right", right)] {
        if mass > BOUNDARY_MASS_TOL {
            return Err(SchemeError::BoundaryMass {
                side,
                mass,
                time: state.time,
            });
        }
    }
    Ok(())
}
