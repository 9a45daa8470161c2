//! Sticky-particle dynamics.
//!
//! Atoms move by the aggregate ODE between collisions and merge irreversibly
//! on contact. In linear mode the velocity of atom `i` is
//! `Σ_{j≠i} m_j W'(x_i - x_j)`; in nonlinear mode it is the jump of `A(W' * ρ)`
//! across the atom divided by `-c·m_i`.
//!
//! Between events the ODE is integrated with classical RK4. Steps are capped
//! so that no approaching pair can close more than half its gap, which keeps
//! the ordering intact through every stage; gaps below [`MERGE_TOL`] are
//! merged. A step that still ends with a crossed pair is shortened by
//! bisection until the crossing gap is resolved to [`MERGE_TOL`].

use std::io::{self, Write};

use thiserror::Error;

use crate::measure::{DiscreteMeasure, MeasureError, MERGE_TOL};
use crate::potentials::{Mode, PointyPotential, PotentialError, VelocityLaw};

/// Upper bound on the RK4 step between collisions.
pub const MAX_STEP: f64 = 0.01;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticleError {
    #[error("particles {0} and {1} coincide; merge them first")]
    Coincident(usize, usize),
    #[error("non-finite particle state at t = {0}")]
    NonFinite(f64),
    #[error("target time {target} is before the current time {current}")]
    Backwards { target: f64, current: f64 },
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Sample,
    Merge,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Sample => "sample",
            EventKind::Merge => "merge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub kind: EventKind,
    pub snapshot: DiscreteMeasure,
}

/// Sampled states and merge events in time order.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryLog {
    pub events: Vec<TrajectoryEvent>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time: f64, kind: EventKind, snapshot: DiscreteMeasure) {
        debug_assert!(self.events.last().is_none_or(|e| e.time <= time));
        self.events.push(TrajectoryEvent {
            time,
            kind,
            snapshot,
        });
    }

    pub fn merges(&self) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Merge)
    }

    /// One row per event: `time,event,x_1,…,x_n,m_1,…,m_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,event,positions...,masses...")?;
        for event in &self.events {
            write!(out, "{:.16e},{}", event.time, event.kind.as_str())?;
            for atom in event.snapshot.atoms() {
                write!(out, ",{:.16e}", atom.position)?;
            }
            for atom in event.snapshot.atoms() {
                write!(out, ",{:.16e}", atom.mass)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Distinct ordered particles evolving by the sticky aggregate dynamics.
#[derive(Clone, Debug)]
pub struct ParticleSystem {
    positions: Vec<f64>,
    masses: Vec<f64>,
    time: f64,
    mode: Mode,
    potential: PointyPotential,
    law: VelocityLaw,
}

impl ParticleSystem {
    pub fn new(
        initial: &DiscreteMeasure,
        mode: Mode,
        potential: PointyPotential,
        law: VelocityLaw,
    ) -> Result<Self, ParticleError> {
        if mode == Mode::Nonlinear {
            potential.require_decomposition()?;
        }
        Ok(Self {
            positions: initial.positions(),
            masses: initial.masses(),
            time: 0.0,
            mode,
            potential,
            law,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(self.positions.iter().copied().zip(self.masses.iter().copied()))
            .expect("particle state is a valid measure")
    }

    /// `x'_i = Σ_{j≠i} m_j W'(x_i - x_j)`.
    pub fn linear_velocities(&self) -> Result<Vec<f64>, ParticleError> {
        check_distinct(&self.positions)?;
        Ok(self.potential.interaction_velocities(&self.positions, &self.masses))
    }

    /// `x'_i = -[A(W' * ρ)]_{x_i} / (c m_i)`.
    pub fn nonlinear_velocities(&self) -> Result<Vec<f64>, ParticleError> {
        check_distinct(&self.positions)?;
        nonlinear_velocities(&self.potential, &self.law, &self.positions, &self.masses)
    }

    pub fn velocities(&self) -> Result<Vec<f64>, ParticleError> {
        match self.mode {
            Mode::Linear => self.linear_velocities(),
            Mode::Nonlinear => self.nonlinear_velocities(),
        }
    }

    fn velocities_at(&self, xs: &[f64]) -> Result<Vec<f64>, ParticleError> {
        match self.mode {
            Mode::Linear => Ok(self.potential.interaction_velocities(xs, &self.masses)),
            Mode::Nonlinear => nonlinear_velocities(&self.potential, &self.law, xs, &self.masses),
        }
    }

    /// Integrates up to `t_end`, merging colliding particles on the way.
    ///
    /// Every merge is logged with the post-merge state, and a sample is logged
    /// at `t_end`.
    pub fn advance_to(&mut self, t_end: f64, log: &mut TrajectoryLog) -> Result<(), ParticleError> {
        if t_end < self.time {
            return Err(ParticleError::Backwards {
                target: t_end,
                current: self.time,
            });
        }
        self.merge_contacts(log);
        while self.time < t_end {
            if self.len() <= 1 {
                self.time = t_end;
                break;
            }
            let velocities = self.velocities()?;
            let mut h = (t_end - self.time).min(MAX_STEP);
            for k in 0..self.len() - 1 {
                let closing = velocities[k] - velocities[k + 1];
                if closing > 0.0 {
                    h = h.min(0.5 * (self.positions[k + 1] - self.positions[k]) / closing);
                }
            }

            let mut next = self.rk4(&velocities, h)?;
            if min_gap(&next) < 0.0 {
                let (step, state) = self.bisect_crossing(&velocities, h)?;
                h = step;
                next = state;
            }
            self.positions = next;
            // land exactly on the target
            self.time = if t_end - (self.time + h) <= 1e-15 * t_end.abs().max(1.0) {
                t_end
            } else {
                self.time + h
            };
            if !self.positions.iter().all(|x| x.is_finite()) {
                return Err(ParticleError::NonFinite(self.time));
            }
            self.merge_contacts(log);
        }
        log.record(self.time, EventKind::Sample, self.measure());
        Ok(())
    }

    fn rk4(&self, k1: &[f64], h: f64) -> Result<Vec<f64>, ParticleError> {
        let x = &self.positions;
        let stage = |k: &[f64], scale: f64| -> Vec<f64> {
            x.iter().zip(k).map(|(xi, ki)| xi + scale * ki).collect()
        };
        let k2 = self.velocities_at(&stage(k1, 0.5 * h))?;
        let k3 = self.velocities_at(&stage(&k2, 0.5 * h))?;
        let k4 = self.velocities_at(&stage(&k3, h))?;
        Ok((0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// Shortest step whose end state has a gap in `[0, MERGE_TOL]`.
    fn bisect_crossing(&self, k1: &[f64], h: f64) -> Result<(f64, Vec<f64>), ParticleError> {
        let (mut lo, mut hi) = (0.0, h);
        let mut best = self.positions.clone();
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let state = self.rk4(k1, mid)?;
            let gap = min_gap(&state);
            if gap < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                best = state;
                if gap <= MERGE_TOL {
                    break;
                }
            }
            if hi - lo <= f64::EPSILON * h {
                break;
            }
        }
        Ok((lo, best))
    }

    /// Merges every run of neighbours closer than [`MERGE_TOL`] into one
    /// particle at the run's center of mass.
    fn merge_contacts(&mut self, log: &mut TrajectoryLog) {
        if self.positions.windows(2).all(|w| w[1] - w[0] > MERGE_TOL) {
            return;
        }
        let mut positions = Vec::with_capacity(self.len());
        let mut masses: Vec<f64> = Vec::with_capacity(self.len());
        let mut moment = 0.0;
        for i in 0..self.len() {
            let (x, m) = (self.positions[i], self.masses[i]);
            if i > 0 && x - self.positions[i - 1] <= MERGE_TOL {
                let last = masses.len() - 1;
                moment += m * x;
                masses[last] += m;
                positions[last] = moment / masses[last];
            } else {
                moment = m * x;
                positions.push(x);
                masses.push(m);
            }
        }
        self.positions = positions;
        self.masses = masses;
        log.record(self.time, EventKind::Merge, self.measure());
    }
}

fn check_distinct(xs: &[f64]) -> Result<(), ParticleError> {
    match xs.windows(2).position(|w| w[1] <= w[0]) {
        Some(k) => Err(ParticleError::Coincident(k, k + 1)),
        None => Ok(()),
    }
}

fn min_gap(xs: &[f64]) -> f64 {
    xs.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// One-sided traces of `u = W' * ρ` at each atom and the resulting jump velocity.
///
/// `u(x_i⁺) = -c Σ_{j≤i} m_j + Σ_j m_j w̃(x_i - x_j)`, `u(x_i⁻) = u(x_i⁺) + c m_i`,
/// and `v_i = -(A(u⁺) - A(u⁻)) / (c m_i)`, i.e. the mean of `a` between the traces.
pub fn nonlinear_velocities(
    potential: &PointyPotential,
    law: &VelocityLaw,
    xs: &[f64],
    ms: &[f64],
) -> Result<Vec<f64>, ParticleError> {
    let decomposition = potential.require_decomposition()?;
    let c = decomposition.c();
    let smooth = decomposition.smooth_sums(xs, ms);
    let mut mass_through = 0.0;
    Ok(ms
        .iter()
        .zip(&smooth)
        .map(|(&m, &s)| {
            mass_through += m;
            let right = -c * mass_through + s;
            let left = right + c * m;
            law.divided_difference(right, left)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{BuiltinLaw, BuiltinPotential};

    fn abs_half() -> PointyPotential {
        PointyPotential::builtin(BuiltinPotential::AbsHalf).unwrap()
    }

    fn atan() -> VelocityLaw {
        VelocityLaw::builtin(BuiltinLaw::preset_atan()).unwrap()
    }

    fn system(atoms: &[(f64, f64)], mode: Mode, pot: PointyPotential, law: VelocityLaw) -> ParticleSystem {
        ParticleSystem::new(&DiscreteMeasure::new(atoms.iter().copied()).unwrap(), mode, pot, law).unwrap()
    }

    #[test]
    fn linear_velocity_examples() {
        let ps = system(&[(-1.0, 0.5), (1.0, 0.5)], Mode::Linear, abs_half(), VelocityLaw::identity());
        assert_eq!(ps.linear_velocities().unwrap(), vec![0.25, -0.25]);
        let ps = system(
            &[(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)],
            Mode::Linear,
            abs_half(),
            VelocityLaw::identity(),
        );
        assert_eq!(ps.linear_velocities().unwrap(), vec![0.375, 0.0, -0.375]);
        for pot in [abs_half(), PointyPotential::builtin(BuiltinPotential::ExpPointy).unwrap()] {
            let ps = system(&[(0.0, 1.0)], Mode::Linear, pot, VelocityLaw::identity());
            assert_eq!(ps.linear_velocities().unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn coincident_particles_are_rejected() {
        let mut ps = system(&[(0.0, 0.5), (1.0, 0.5)], Mode::Linear, abs_half(), VelocityLaw::identity());
        ps.positions[1] = 0.0;
        assert_eq!(ps.linear_velocities(), Err(ParticleError::Coincident(0, 1)));
    }

    #[test]
    fn nonlinear_identity_matches_linear() {
        let ps = system(&[(-1.0, 0.5), (1.0, 0.5)], Mode::Nonlinear, abs_half(), VelocityLaw::identity());
        let v = ps.nonlinear_velocities().unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn nonlinear_atan_two_atoms() {
        let law = atan();
        let ps = system(&[(-1.0, 0.5), (1.0, 0.5)], Mode::Nonlinear, abs_half(), law);
        let v = ps.nonlinear_velocities().unwrap();
        let expected = 2.0 * law.antiderivative(0.5);
        assert!((v[0] - expected).abs() < 1e-14);
        assert!((v[0] - 0.892560).abs() < 1e-6);
        assert!((v[1] + expected).abs() < 1e-14);
    }

    #[test]
    fn nonlinear_single_particle_is_at_rest() {
        for pot in [
            abs_half(),
            PointyPotential::builtin(BuiltinPotential::ExpPointy).unwrap(),
            PointyPotential::builtin(BuiltinPotential::AbsScaled { sigma: 0.004 }).unwrap(),
        ] {
            for law in [VelocityLaw::identity(), atan()] {
                let ps = system(&[(0.3, 1.0)], Mode::Nonlinear, pot.clone(), law);
                // brute-force jump of A(W' * δ) across the atom, from traces just off it
                let eps = 1e-9;
                let u = |x: f64| pot.derivative(x - 0.3);
                let jump = law.antiderivative(u(0.3 + eps)) - law.antiderivative(u(0.3 - eps));
                let c = pot.decomposition().unwrap().c();
                let brute = -jump / c;
                let v = ps.nonlinear_velocities().unwrap()[0];
                assert!(v.abs() < 1e-15);
                assert!((v - brute).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn nonlinear_matches_one_sided_traces() {
        // u(xᵢ±) = Σ_{j≠i} W'(xᵢ - xⱼ) mⱼ ∓ (c/2) mᵢ, from W' alone
        let exp = PointyPotential::builtin(BuiltinPotential::ExpPointy).unwrap();
        let atoms = [(-1.3, 0.1), (-0.2, 0.35), (0.4, 0.3), (1.7, 0.25)];
        let ps = system(&atoms, Mode::Nonlinear, exp.clone(), atan());
        let v = ps.nonlinear_velocities().unwrap();
        let c = exp.decomposition().unwrap().c();
        for (i, &(xi, mi)) in atoms.iter().enumerate() {
            let off: f64 = atoms
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(xj, mj))| exp.derivative(xi - xj) * mj)
                .sum();
            let right = off - 0.5 * c * mi;
            let left = off + 0.5 * c * mi;
            let expected = (atan().antiderivative(left) - atan().antiderivative(right)) / (left - right);
            assert!((v[i] - expected).abs() < 1e-12, "atom {i}: {} vs {expected}", v[i]);
        }
    }

    #[test]
    fn two_particles_merge_at_four() {
        let mut ps = system(&[(-1.0, 0.5), (1.0, 0.5)], Mode::Linear, abs_half(), VelocityLaw::identity());
        let mut log = TrajectoryLog::new();
        ps.advance_to(5.0, &mut log).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps.positions()[0].abs() < 1e-12);
        assert_eq!(ps.masses()[0], 1.0);
        let merges: Vec<_> = log.merges().collect();
        assert_eq!(merges.len(), 1);
        assert!((merges[0].time - 4.0).abs() < 1e-8);
        assert_eq!(ps.time(), 5.0);
        assert_eq!(ps.linear_velocities().unwrap(), vec![0.0]);
    }

    #[test]
    fn single_particle_stays_put() {
        let mut ps = system(&[(0.7, 1.0)], Mode::Linear, abs_half(), VelocityLaw::identity());
        let mut log = TrajectoryLog::new();
        ps.advance_to(123.0, &mut log).unwrap();
        assert_eq!(ps.positions(), &[0.7]);
        assert_eq!(log.merges().count(), 0);
    }

    #[test]
    fn advance_rejects_backwards_target() {
        let mut ps = system(&[(0.0, 1.0)], Mode::Linear, abs_half(), VelocityLaw::identity());
        let mut log = TrajectoryLog::new();
        ps.advance_to(1.0, &mut log).unwrap();
        assert!(matches!(ps.advance_to(0.5, &mut log), Err(ParticleError::Backwards { .. })));
    }

    /// Fixed-step RK4 on the three-body problem, no event handling.
    fn three_body_reference(t_end: f64, steps: usize) -> [f64; 3] {
        let pot = abs_half();
        let ms = [0.25, 0.5, 0.25];
        let mut x = [-1.0, 0.0, 1.0];
        let h = t_end / steps as f64;
        let f = |x: &[f64; 3]| -> [f64; 3] {
            let mut v = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        v[i] += ms[j] * pot.derivative(x[i] - x[j]);
                    }
                }
            }
            v
        };
        let axpy = |x: &[f64; 3], k: &[f64; 3], s: f64| [x[0] + s * k[0], x[1] + s * k[1], x[2] + s * k[2]];
        for _ in 0..steps {
            let k1 = f(&x);
            let k2 = f(&axpy(&x, &k1, 0.5 * h));
            let k3 = f(&axpy(&x, &k2, 0.5 * h));
            let k4 = f(&axpy(&x, &k3, h));
            for i in 0..3 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        x
    }

    #[test]
    fn three_body_collapse() {
        let mut ps = system(
            &[(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)],
            Mode::Linear,
            abs_half(),
            VelocityLaw::identity(),
        );
        let mut log = TrajectoryLog::new();
        ps.advance_to(1.5, &mut log).unwrap();
        let reference = three_body_reference(1.5, 10_000);
        for (x, r) in ps.positions().iter().zip(reference) {
            assert!((x - r).abs() < 1e-10);
        }
        ps.advance_to(10.0, &mut log).unwrap();
        assert_eq!(ps.len(), 1);
        assert!(ps.positions()[0].abs() < 1e-12);
        assert!((ps.masses()[0] - 1.0).abs() < 1e-15);
        // both outer particles arrive together at t = 1/(3/8)
        let merges: Vec<_> = log.merges().collect();
        assert_eq!(merges.len(), 1);
        assert!((merges[0].time - 8.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn trajectory_csv_rows() {
        let mut ps = system(&[(-1.0, 0.5), (1.0, 0.5)], Mode::Linear, abs_half(), VelocityLaw::identity());
        let mut log = TrajectoryLog::new();
        ps.advance_to(5.0, &mut log).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].contains(",merge,"));
        assert_eq!(rows[2].split(',').count(), 4);
    }
}
