//! Finite atomic measures on the line.
//!
//! [`DiscreteMeasure`] is the common currency between the particle and
//! finite-volume solvers: both export their state as a list of atoms, and all
//! cross-validation goes through [`wasserstein1`].

use std::io::{self, Write};

use thiserror::Error;

/// Atoms closer than this are merged on construction.
pub const MERGE_TOL: f64 = 1e-12;

/// Allowed deviation of a probability measure's mass from 1, and of two
/// measures' masses from each other in [`wasserstein1`].
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("atom {index} has invalid mass {mass}")]
    InvalidMass { index: usize, mass: f64 },
    #[error("atom {index} has non-finite position {position}")]
    NonFinitePosition { index: usize, position: f64 },
    #[error("cell {index} has negative density {value}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("cell width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("quantile level {0} is outside (0, 1)")]
    QuantileLevel(f64),
    #[error("measure has total mass {0}, expected a probability measure")]
    NotProbability(f64),
    #[error("mass mismatch: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub position: f64,
    pub mass: f64,
}

/// Atoms with strictly increasing positions and strictly positive masses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    /// Builds a measure from `(position, mass)` pairs in any order.
    ///
    /// Zero masses are dropped; positions within [`MERGE_TOL`] of their
    /// neighbour are merged at their mass-weighted mean.
    pub fn new<I>(atoms: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw = Vec::new();
        for (index, (position, mass)) in atoms.into_iter().enumerate() {
            if !position.is_finite() {
                return Err(MeasureError::NonFinitePosition { index, position });
            }
            if !(mass >= 0.0 && mass.is_finite()) {
                return Err(MeasureError::InvalidMass { index, mass });
            }
            if mass > 0.0 {
                raw.push(Atom { position, mass });
            }
        }
        raw.sort_by(|a, b| a.position.total_cmp(&b.position));

        let mut atoms: Vec<Atom> = Vec::with_capacity(raw.len());
        let mut last_raw = f64::NEG_INFINITY;
        for atom in raw {
            match atoms.last_mut() {
                Some(prev) if atom.position - last_raw <= MERGE_TOL => {
                    let mass = prev.mass + atom.mass;
                    prev.position = (prev.position * prev.mass + atom.position * atom.mass) / mass;
                    prev.mass = mass;
                }
                _ => atoms.push(atom),
            }
            last_raw = atom.position;
        }
        Ok(Self { atoms })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn dirac(position: f64) -> Self {
        Self {
            atoms: vec![Atom {
                position,
                mass: 1.0,
            }],
        }
    }

    /// Reconstruction `Σ ρᵢ Δx δ_{xᵢ}` of cell densities, with `xᵢ = origin + i·dx`.
    pub fn from_cells(origin: f64, dx: f64, densities: &[f64]) -> Result<Self, MeasureError> {
        if !(dx > 0.0) {
            return Err(MeasureError::NonPositiveWidth(dx));
        }
        let mut atoms = Vec::new();
        for (index, &value) in densities.iter().enumerate() {
            if !(value >= 0.0) {
                return Err(MeasureError::NegativeDensity { index, value });
            }
            if value > 0.0 {
                atoms.push(Atom {
                    position: origin + index as f64 * dx,
                    mass: value * dx,
                });
            }
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.position).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= MASS_TOL
    }

    /// `Σ mᵢ |xᵢ|`.
    pub fn first_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.position.abs()).sum()
    }

    pub fn center_of_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.position).sum::<f64>() / self.total_mass()
    }

    /// Generalized inverse `F⁻¹(z) = inf{x : F(x) > z}` of the cumulative distribution.
    pub fn quantile(&self, z: f64) -> Result<f64, MeasureError> {
        if !(z > 0.0 && z < 1.0) {
            return Err(MeasureError::QuantileLevel(z));
        }
        if !self.is_probability() {
            return Err(MeasureError::NotProbability(self.total_mass()));
        }
        let mut cumulative = 0.0;
        for atom in &self.atoms {
            cumulative += atom.mass;
            if cumulative > z {
                return Ok(atom.position);
            }
        }
        // z within rounding of 1
        Ok(self.atoms[self.atoms.len() - 1].position)
    }

    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    position: a.position + offset,
                    mass: a.mass,
                })
                .collect(),
        }
    }

    /// Writes `position,mass` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "position,mass")?;
        for atom in &self.atoms {
            writeln!(out, "{:.16e},{:.16e}", atom.position, atom.mass)?;
        }
        Ok(())
    }
}

/// Wasserstein-1 distance `∫₀¹ |F₁⁻¹(z) - F₂⁻¹(z)| dz`.
///
/// Both quantile functions are piecewise constant, so the integral is summed
/// exactly over the merged sequence of cumulative-mass breakpoints.
pub fn wasserstein1(first: &DiscreteMeasure, second: &DiscreteMeasure) -> Result<f64, MeasureError> {
    let (left, right) = (first.total_mass(), second.total_mass());
    if (left - right).abs() > MASS_TOL {
        return Err(MeasureError::MassMismatch { left, right });
    }
    let (a, b) = (first.atoms(), second.atoms());
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }

    let (mut i, mut j) = (0, 0);
    let (mut cum_a, mut cum_b) = (a[0].mass, b[0].mass);
    let mut level = 0.0;
    let mut distance = 0.0;
    while i < a.len() && j < b.len() {
        let next = cum_a.min(cum_b);
        distance += (next - level) * (a[i].position - b[j].position).abs();
        level = next;
        let (advance_a, advance_b) = (cum_a <= cum_b, cum_b <= cum_a);
        if advance_a {
            i += 1;
            if i < a.len() {
                cum_a += a[i].mass;
            }
        }
        if advance_b {
            j += 1;
            if j < b.len() {
                cum_b += b[j].mass;
            }
        }
    }
    Ok(distance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measure(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn from_cells_examples() {
        let m = DiscreteMeasure::from_cells(0.0, 1.0, &[0.5, 0.0, 0.5]).unwrap();
        assert_eq!(
            m.atoms(),
            &[
                Atom { position: 0.0, mass: 0.5 },
                Atom { position: 2.0, mass: 0.5 }
            ]
        );
        let m = DiscreteMeasure::from_cells(0.0, 0.5, &[2.0]).unwrap();
        assert_eq!(m.atoms(), &[Atom { position: 0.0, mass: 1.0 }]);
        let m = DiscreteMeasure::from_cells(-1.0, 1.0, &[0.0, 0.0, 0.0]).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn from_cells_rejects_negative_density() {
        assert_eq!(
            DiscreteMeasure::from_cells(0.0, 1.0, &[0.5, -0.1]),
            Err(MeasureError::NegativeDensity { index: 1, value: -0.1 })
        );
        assert!(DiscreteMeasure::from_cells(0.0, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn construction_sorts_and_merges() {
        let m = measure(&[(1.0, 0.25), (-1.0, 0.25), (1.0 + 1e-13, 0.5), (3.0, 0.0)]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.atoms()[0].position, -1.0);
        assert!((m.atoms()[1].mass - 0.75).abs() < 1e-16);
        assert!(DiscreteMeasure::new([(0.0, -1.0)]).is_err());
        assert!(DiscreteMeasure::new([(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(DiscreteMeasure::dirac(0.0).quantile(0.7).unwrap(), 0.0);
        let m = measure(&[(-1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(m.quantile(0.25).unwrap(), -1.0);
        assert_eq!(m.quantile(0.75).unwrap(), 1.0);
        let m = measure(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(m.quantile(0.5).unwrap(), 2.0);
    }

    #[test]
    fn quantile_errors() {
        let m = DiscreteMeasure::dirac(0.0);
        assert_eq!(m.quantile(0.0), Err(MeasureError::QuantileLevel(0.0)));
        assert_eq!(m.quantile(1.0), Err(MeasureError::QuantileLevel(1.0)));
        let half = measure(&[(0.0, 0.5)]);
        assert!(matches!(half.quantile(0.3), Err(MeasureError::NotProbability(_))));
    }

    #[test]
    fn wasserstein_examples() {
        let d = wasserstein1(&DiscreteMeasure::dirac(-1.0), &DiscreteMeasure::dirac(1.0)).unwrap();
        assert_eq!(d, 2.0);
        let split = measure(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(wasserstein1(&split, &DiscreteMeasure::dirac(1.0)).unwrap(), 1.0);
        assert_eq!(wasserstein1(&split, &split).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_rejects_mass_mismatch() {
        let half = measure(&[(0.0, 0.5)]);
        assert!(matches!(
            wasserstein1(&half, &DiscreteMeasure::dirac(0.0)),
            Err(MeasureError::MassMismatch { .. })
        ));
    }

    #[test]
    fn first_moment_examples() {
        assert_eq!(DiscreteMeasure::dirac(0.0).first_moment(), 0.0);
        assert_eq!(measure(&[(-1.0, 0.5), (1.0, 0.5)]).first_moment(), 1.0);
        assert_eq!(measure(&[(-2.0, 0.25), (3.0, 0.75)]).first_moment(), 2.75);
    }

    #[test]
    fn csv_dump() {
        let mut buf = Vec::new();
        measure(&[(0.1, 0.5), (2.0, 0.5)]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("position,mass"));
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(first, vec![0.1, 0.5]);
    }

    /// Probability measure with up to 8 atoms on a coarse grid.
    fn arb_measure() -> impl Strategy<Value = DiscreteMeasure> {
        prop::collection::vec((-20i32..20, 1u32..100), 1..=8).prop_map(|raw| {
            let total: u32 = raw.iter().map(|&(_, w)| w).sum();
            DiscreteMeasure::new(
                raw.into_iter()
                    .map(|(p, w)| (p as f64 * 0.25, w as f64 / total as f64)),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn triangle_inequality(a in arb_measure(), b in arb_measure(), c in arb_measure()) {
            let ab = wasserstein1(&a, &b).unwrap();
            let bc = wasserstein1(&b, &c).unwrap();
            let ac = wasserstein1(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10);
        }

        #[test]
        fn symmetric_and_zero_on_diagonal(a in arb_measure(), b in arb_measure()) {
            prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
            let ab = wasserstein1(&a, &b).unwrap();
            let ba = wasserstein1(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-14);
        }

        #[test]
        fn translation_invariance(
            raw_a in prop::collection::vec((-64i32..64, 1u32..8), 1..=8),
            raw_b in prop::collection::vec((-64i32..64, 1u32..8), 1..=8),
            shift in -1000i32..1000,
        ) {
            // dyadic positions and masses: all arithmetic below is exact
            let build = |raw: &[(i32, u32)]| {
                let scale = raw.iter().map(|&(_, w)| w).sum::<u32>().next_power_of_two();
                let mut atoms: Vec<(f64, f64)> = raw.iter()
                    .map(|&(p, w)| (p as f64 / 16.0, w as f64 / scale as f64))
                    .collect();
                let rest = 1.0 - atoms.iter().map(|a| a.1).sum::<f64>();
                atoms.push((0.0, rest));
                DiscreteMeasure::new(atoms).unwrap()
            };
            let (a, b) = (build(&raw_a), build(&raw_b));
            let s = shift as f64 / 4.0;
            prop_assert_eq!(
                wasserstein1(&a.shifted(s), &b.shifted(s)).unwrap(),
                wasserstein1(&a, &b).unwrap()
            );
        }

        #[test]
        fn quantile_is_nondecreasing(m in arb_measure(), z1 in 0.001f64..0.999, z2 in 0.001f64..0.999) {
            let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
            prop_assert!(m.quantile(lo).unwrap() <= m.quantile(hi).unwrap());
        }
    }

    /// Midpoint-rule evaluation of the quantile integral, independent of the
    /// breakpoint merge.
    fn riemann_w1(a: &DiscreteMeasure, b: &DiscreteMeasure, n: usize) -> f64 {
        let qa = step_quantile(a);
        let qb = step_quantile(b);
        (0..n)
            .map(|k| {
                let z = (k as f64 + 0.5) / n as f64;
                (qa(z) - qb(z)).abs()
            })
            .sum::<f64>()
            / n as f64
    }

    fn step_quantile(m: &DiscreteMeasure) -> impl Fn(f64) -> f64 + '_ {
        move |z| {
            let mut c = 0.0;
            for atom in m.atoms() {
                c += atom.mass;
                if c > z {
                    return atom.position;
                }
            }
            m.atoms().last().unwrap().position
        }
    }

    #[test]
    fn merge_matches_riemann_oracle() {
        let a = measure(&[(-1.3, 0.2), (0.1, 0.35), (0.4, 0.1), (2.0, 0.35)]);
        let b = measure(&[(-0.5, 0.6), (1.7, 0.15), (3.1, 0.25)]);
        let exact = wasserstein1(&a, &b).unwrap();
        assert!((exact - riemann_w1(&a, &b, 1_000_000)).abs() < 1e-4);
    }
}
