//! Experiments built on the two engines: scheme runs, particle runs,
//! scheme-versus-particle comparison and grid refinement.

use std::time::Instant;

use aggr_core::fv::{self, project_initial, Bump, InitialData, RunConfig, RunOutput};
use aggr_core::measure::{wasserstein1, DiscreteMeasure};
use aggr_core::particles::{EventKind, ParticleSystem, TrajectoryLog};
use rayon::prelude::*;
use statrs::function::erf::erf;

use crate::config::SimConfig;
use crate::HarnessError;

/// Scheme run for a configuration.
pub fn simulate(config: &SimConfig) -> Result<RunOutput, HarnessError> {
    simulate_on(config, config.n_cells, &config.sample_times)
}

fn simulate_on(config: &SimConfig, n_cells: usize, sample_times: &[f64]) -> Result<RunOutput, HarnessError> {
    let grid = config.grid_with(n_cells)?;
    let state = project_initial(&config.initial_data()?, &grid)?;
    let run_config = RunConfig {
        mode: config.mode(),
        t_end: config.t_end,
        gamma: config.gamma,
        sample_times: sample_times.to_vec(),
    };
    Ok(fv::run(&state, &config.potential()?, &config.law()?, &run_config)?)
}

/// `n` equal-mass atoms at the mid-quantiles `(k + ½)/n` of the initial data.
///
/// Atomic data is returned unchanged.
pub fn particle_projection(initial: &InitialData, n: usize) -> Result<DiscreteMeasure, HarnessError> {
    match initial {
        InitialData::Atoms(measure) => Ok(measure.clone()),
        InitialData::Bumps { bumps, normalize } => {
            if n == 0 {
                return Err(HarnessError::Config("particle count must be positive".to_string()));
            }
            let total: f64 = bumps.iter().map(Bump::mass).sum();
            if !(total > 0.0) || (!normalize && (total - 1.0).abs() > 1e-6) {
                return Err(HarnessError::Config(format!("initial mass {total} cannot be normalized")));
            }
            let cdf = |x: f64| {
                bumps
                    .iter()
                    .map(|b| 0.5 * b.mass() * (1.0 + erf((x - b.center) / b.width)))
                    .sum::<f64>()
                    / total
            };
            let lo = bumps.iter().map(|b| b.center - 40.0 * b.width).fold(f64::INFINITY, f64::min);
            let hi = bumps.iter().map(|b| b.center + 40.0 * b.width).fold(f64::NEG_INFINITY, f64::max);
            let mass = 1.0 / n as f64;
            let atoms = (0..n).map(|k| {
                let z = (k as f64 + 0.5) * mass;
                (invert_monotone(&cdf, z, lo, hi), mass)
            });
            Ok(DiscreteMeasure::new(atoms)?)
        }
    }
}

/// Bisection for `f(x) = z` with `f` nondecreasing, `f(lo) < z < f(hi)`.
fn invert_monotone<F: Fn(f64) -> f64>(f: &F, z: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < z {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sticky-particle run sampled at the configuration's sample times and `t_end`.
pub fn particle_run(config: &SimConfig, initial: &DiscreteMeasure) -> Result<(ParticleSystem, TrajectoryLog), HarnessError> {
    let mut system = ParticleSystem::new(initial, config.mode(), config.potential()?, config.law()?)?;
    let mut log = TrajectoryLog::new();
    log.record(0.0, EventKind::Sample, system.measure());
    for t in sample_schedule(config) {
        if t > 0.0 {
            system.advance_to(t, &mut log)?;
        }
    }
    Ok((system, log))
}

/// Sorted distinct times in `[0, t_end]`: `0`, the sample times, `t_end`.
pub fn sample_schedule(config: &SimConfig) -> Vec<f64> {
    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(config.sample_times.iter().copied().filter(|&t| t > 0.0 && t < config.t_end))
        .chain(std::iter::once(config.t_end))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub time: f64,
    pub w1: f64,
}

/// `W₁` between the scheme and a particle run from the same initial data at every sample time.
pub fn compare(config: &SimConfig) -> Result<Vec<ComparisonRow>, HarnessError> {
    let output = simulate(config)?;
    let initial = particle_projection(&config.initial_data()?, config.particles.compare)?;
    let mut system = ParticleSystem::new(&initial, config.mode(), config.potential()?, config.law()?)?;
    let mut log = TrajectoryLog::new();
    output
        .snapshots
        .iter()
        .map(|snap| {
            if snap.time > system.time() {
                system.advance_to(snap.time, &mut log)?;
            }
            Ok(ComparisonRow {
                time: snap.time,
                w1: wasserstein1(&snap.measure(), &system.measure())?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_cells: usize,
    pub dx: f64,
    pub w1_error: f64,
    pub runtime_seconds: f64,
    pub final_state: fv::FvState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// `errorₖ₊₁ / errorₖ`
    pub ratios: Vec<f64>,
    pub oracle_particles: usize,
}

pub fn check_levels(levels: &[usize]) -> Result<(), HarnessError> {
    if levels.len() < 3 {
        return Err(HarnessError::Config(format!(
            "need at least 3 refinement levels, got {}",
            levels.len()
        )));
    }
    for w in levels.windows(2) {
        if w[0] < 10 || w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(HarnessError::Config(format!(
                "levels must be nested: {} does not refine {}",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

/// Scheme error in `W₁` at `t_end` against a particle oracle, one run per level,
/// levels in parallel.
pub fn converge(config: &SimConfig, pool: &rayon::ThreadPool) -> Result<ConvergenceReport, HarnessError> {
    check_levels(&config.levels)?;
    let oracle_initial = particle_projection(&config.initial_data()?, config.particles.oracle)?;
    let mut oracle = ParticleSystem::new(&oracle_initial, config.mode(), config.potential()?, config.law()?)?;
    oracle.advance_to(config.t_end, &mut TrajectoryLog::new())?;
    let oracle = oracle.measure();
    let rows = pool.install(|| {
        config
            .levels
            .par_iter()
            .map(|&n| {
                let start = Instant::now();
                let output = simulate_on(config, n, &[])?;
                let final_state = output.final_state().clone();
                let w1_error = wasserstein1(&final_state.measure(), &oracle)?;
                Ok(ConvergenceRow {
                    n_cells: n,
                    dx: final_state.grid.dx(),
                    w1_error,
                    runtime_seconds: start.elapsed().as_secs_f64(),
                    final_state,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let ratios = rows.windows(2).map(|w| w[1].w1_error / w[0].w1_error).collect();
    Ok(ConvergenceReport {
        rows,
        ratios,
        oracle_particles: config.particles.oracle,
    })
}

/// Thread pool sized by `AGGR_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var("AGGR_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::Config(format!("AGGR_THREADS = {value:?} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Runtime(format!("thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{builtin_initial, preset, BuiltinInitial};

    #[test]
    fn projection_of_atoms_is_identity() {
        let m = DiscreteMeasure::new([(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(particle_projection(&InitialData::Atoms(m.clone()), 7).unwrap(), m);
    }

    #[test]
    fn projection_hits_the_quantiles() {
        let init = builtin_initial(BuiltinInitial::Init1);
        let m = particle_projection(&init, 256).unwrap();
        assert_eq!(m.len(), 256);
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        // symmetric data gives symmetric atoms
        let xs = m.positions();
        for k in 0..128 {
            assert!((xs[k] + xs[255 - k]).abs() < 1e-12);
        }
        // the median sits between the two middle atoms, at 0
        assert!(xs[127] < 0.0 && xs[128] > 0.0);
    }

    #[test]
    fn projection_of_a_single_gaussian_matches_known_quantiles() {
        let width = 0.5;
        let init = InitialData::Bumps {
            bumps: vec![Bump { amplitude: 2.0, center: 0.3, width }],
            normalize: true,
        };
        let m = particle_projection(&init, 4).unwrap();
        // N(0.3, width²/2) quantiles at 1/8 and 3/8: z = -1.1503494, -0.3186394
        let s = width / 2f64.sqrt();
        let expected = [-1.150_349_380_376_008, -0.318_639_363_964_375];
        for (k, z) in expected.iter().enumerate() {
            assert!((m.positions()[k] - (0.3 + s * z)).abs() < 1e-9);
            assert!((m.positions()[3 - k] - (0.3 - s * z)).abs() < 1e-9);
        }
    }

    #[test]
    fn level_checks() {
        assert!(check_levels(&[100]).is_err());
        assert!(check_levels(&[100, 200]).is_err());
        assert!(check_levels(&[100, 150, 300]).is_err());
        assert!(check_levels(&[100, 200, 200]).is_err());
        assert!(check_levels(&[100, 200, 400]).is_ok());
        assert!(check_levels(&[50, 150, 600]).is_ok());
    }

    #[test]
    fn schedule_includes_endpoints() {
        let mut c = preset(1).unwrap();
        c.t_end = 1.0;
        c.sample_times = vec![0.5, 0.0, 2.0, 0.25, 0.5];
        assert_eq!(sample_schedule(&c), vec![0.0, 0.25, 0.5, 1.0]);
    }
}
