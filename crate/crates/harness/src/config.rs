//! Run configuration: a JSON document plus command-line overrides.

use std::f64::consts::FRAC_2_PI;
use std::path::{Path, PathBuf};

use aggr_core::fv::{Bump, Grid, InitialData};
use aggr_core::measure::DiscreteMeasure;
use aggr_core::potentials::{BuiltinLaw, BuiltinPotential, Mode, PointyPotential, VelocityLaw};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    AbsHalf,
    AbsScaled { sigma: f64 },
    ExpPointy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Identity,
    Atan {
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_k() -> f64 {
    50.0
}

fn default_scale() -> f64 {
    FRAC_2_PI
}

impl Default for LawSpec {
    fn default() -> Self {
        Self::Identity
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Linear,
    Nonlinear,
}

impl From<ModeSpec> for Mode {
    fn from(m: ModeSpec) -> Self {
        match m {
            ModeSpec::Linear => Mode::Linear,
            ModeSpec::Nonlinear => Mode::Nonlinear,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinInitial {
    Init1,
    Init2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Builtin {
        name: BuiltinInitial,
    },
    Bumps {
        bumps: Vec<BumpSpec>,
        #[serde(default = "default_true")]
        normalize: bool,
    },
    /// `[position, mass]` pairs.
    Atoms { atoms: Vec<[f64; 2]> },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleCounts {
    #[serde(default = "default_compare")]
    pub compare: usize,
    #[serde(default = "default_oracle")]
    pub oracle: usize,
}

fn default_compare() -> usize {
    256
}

fn default_oracle() -> usize {
    512
}

impl Default for ParticleCounts {
    fn default() -> Self {
        Self {
            compare: default_compare(),
            oracle: default_oracle(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub law: LawSpec,
    pub mode: ModeSpec,
    pub domain: [f64; 2],
    pub n_cells: usize,
    pub gamma: f64,
    pub t_end: f64,
    #[serde(default)]
    pub sample_times: Vec<f64>,
    pub initial: InitialSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub particles: ParticleCounts,
    /// Cell counts for `converge`.
    #[serde(default)]
    pub levels: Vec<usize>,
}

fn default_label() -> String {
    "run".to_string()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Field overrides taken from the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub n_cells: Option<usize>,
    pub gamma: Option<f64>,
    pub t_end: Option<f64>,
    pub levels: Option<Vec<usize>>,
    pub particles: Option<usize>,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(n) = o.n_cells {
            self.n_cells = n;
        }
        if let Some(g) = o.gamma {
            self.gamma = g;
        }
        if let Some(t) = o.t_end {
            self.t_end = t;
        }
        if let Some(levels) = &o.levels {
            self.levels = levels.clone();
        }
        if let Some(n) = o.particles {
            self.particles.compare = n;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("domain [{lo}, {hi}] is empty"));
        }
        if self.n_cells < 10 {
            return bad(format!("n_cells = {} (need at least 10)", self.n_cells));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} outside (0, 1]", self.gamma));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {}", self.t_end));
        }
        if let Some(t) = self.sample_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return bad(format!("sample time {t}"));
        }
        if self.particles.compare == 0 || self.particles.oracle == 0 {
            return bad("particle counts must be positive".to_string());
        }
        match &self.initial {
            InitialSpec::Builtin { .. } => {}
            InitialSpec::Bumps { bumps, .. } => {
                if bumps.is_empty() {
                    return bad("empty bump list".to_string());
                }
                for b in bumps {
                    if !(b.width > 0.0) || !(b.amplitude >= 0.0) || !b.center.is_finite() {
                        return bad(format!("bump {b:?}"));
                    }
                }
            }
            InitialSpec::Atoms { atoms } => {
                if atoms.is_empty() {
                    return bad("empty atom list".to_string());
                }
            }
        }
        self.potential()?;
        self.law()?;
        if self.mode == ModeSpec::Linear && self.law != LawSpec::Identity {
            return bad("linear mode takes the identity law".to_string());
        }
        if self.mode == ModeSpec::Nonlinear {
            self.potential()?
                .require_decomposition()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PointyPotential, HarnessError> {
        let kind = match self.potential {
            PotentialSpec::AbsHalf => BuiltinPotential::AbsHalf,
            PotentialSpec::AbsScaled { sigma } => BuiltinPotential::AbsScaled { sigma },
            PotentialSpec::ExpPointy => BuiltinPotential::ExpPointy,
        };
        PointyPotential::builtin(kind).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn law(&self) -> Result<VelocityLaw, HarnessError> {
        let kind = match self.law {
            LawSpec::Identity => BuiltinLaw::Identity,
            LawSpec::Atan { k, scale } => BuiltinLaw::Atan { k, scale },
        };
        VelocityLaw::builtin(kind).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn mode(&self) -> Mode {
        self.mode.into()
    }

    pub fn grid(&self) -> Result<Grid, HarnessError> {
        self.grid_with(self.n_cells)
    }

    pub fn grid_with(&self, n_cells: usize) -> Result<Grid, HarnessError> {
        Grid::covering(self.domain[0], self.domain[1], n_cells)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn initial_data(&self) -> Result<InitialData, HarnessError> {
        match &self.initial {
            InitialSpec::Builtin { name } => Ok(builtin_initial(*name)),
            InitialSpec::Bumps { bumps, normalize } => Ok(InitialData::Bumps {
                bumps: bumps
                    .iter()
                    .map(|b| Bump {
                        amplitude: b.amplitude,
                        center: b.center,
                        width: b.width,
                    })
                    .collect(),
                normalize: *normalize,
            }),
            InitialSpec::Atoms { atoms } => DiscreteMeasure::new(atoms.iter().map(|[x, m]| (*x, *m)))
                .map(InitialData::Atoms)
                .map_err(|e| HarnessError::Config(format!("atoms: {e}"))),
        }
    }
}

/// The two initial profiles of the built-in presets, flagged for unit-mass normalization.
///
/// `init1 = e^{-10(x-0.7)²} + e^{-10(x+0.7)²}`,
/// `init2 = e^{-10(x-1.25)²} + 0.8 e^{-20x²} + e^{-10(x+1)²}`.
pub fn builtin_initial(name: BuiltinInitial) -> InitialData {
    let w10 = 10f64.sqrt().recip();
    let w20 = 20f64.sqrt().recip();
    let bump = |amplitude, center, width| Bump {
        amplitude,
        center,
        width,
    };
    let bumps = match name {
        BuiltinInitial::Init1 => vec![bump(1.0, 0.7, w10), bump(1.0, -0.7, w10)],
        BuiltinInitial::Init2 => vec![bump(1.0, 1.25, w10), bump(0.8, 0.0, w20), bump(1.0, -1.0, w10)],
    };
    InitialData::Bumps {
        bumps,
        normalize: true,
    }
}

/// Built-in presets on `[-2.5, 2.5]` with 1000 cells and `γ = 0.9`.
pub fn preset(example: u8) -> Result<SimConfig, HarnessError> {
    let atan = LawSpec::Atan {
        k: default_k(),
        scale: default_scale(),
    };
    let flat = PotentialSpec::AbsScaled { sigma: 1.0 / 250.0 };
    let (potential, law, mode, initial, t_end, sample_times) = match example {
        1 => (
            PotentialSpec::ExpPointy,
            atan,
            ModeSpec::Nonlinear,
            BuiltinInitial::Init1,
            3.0,
            vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 2.4, 2.7],
        ),
        2 => (
            flat,
            atan,
            ModeSpec::Nonlinear,
            BuiltinInitial::Init1,
            EXAMPLE2_T_END,
            vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
        ),
        3 => (
            flat,
            LawSpec::Identity,
            ModeSpec::Linear,
            BuiltinInitial::Init2,
            EXAMPLE3_T_END,
            vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0, 550.0],
        ),
        other => return Err(HarnessError::Config(format!("unknown example {other} (expected 1, 2 or 3)"))),
    };
    Ok(SimConfig {
        label: format!("example{example}"),
        potential,
        law,
        mode,
        domain: [-2.5, 2.5],
        n_cells: 1000,
        gamma: 0.9,
        t_end,
        sample_times,
        initial: InitialSpec::Builtin { name: initial },
        output_dir: PathBuf::from(format!("out/example{example}")),
        particles: ParticleCounts::default(),
        levels: vec![100, 200, 400],
    })
}

pub const EXAMPLE2_T_END: f64 = 16.0;
pub const EXAMPLE3_T_END: f64 = 600.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init1_values() {
        let InitialData::Bumps { bumps, normalize } = builtin_initial(BuiltinInitial::Init1) else {
            panic!("bumps expected");
        };
        assert!(normalize);
        let at = |x: f64| InitialData::bump_density(&bumps, x);
        let expected = 1.0 + (-10.0f64 * 1.96).exp();
        assert!((at(0.7) - expected).abs() < 1e-15);
        assert!((at(0.7) - 1.0000000031).abs() < 1e-10);
        for x in [0.0, 0.3, 0.7, 1.1, 2.4] {
            assert_eq!(at(x), at(-x));
        }
    }

    #[test]
    fn init2_values() {
        let InitialData::Bumps { bumps, .. } = builtin_initial(BuiltinInitial::Init2) else {
            panic!("bumps expected");
        };
        let at0 = InitialData::bump_density(&bumps, 0.0);
        let expected = (-15.625f64).exp() + 0.8 + (-10.0f64).exp();
        assert!((at0 - expected).abs() < 1e-15);
        assert!((at0 - 0.80004).abs() < 1e-5);
        // independent form of the profile
        for x in [-1.7, -0.4, 0.2, 1.25] {
            let direct = (-10.0 * (x - 1.25f64).powi(2)).exp() + 0.8 * (-20.0 * x * x).exp() + (-10.0 * (x + 1.0f64).powi(2)).exp();
            assert!((InitialData::bump_density(&bumps, x) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for k in 1..=3 {
            let config = preset(k).unwrap();
            config.validate().unwrap();
            let back = SimConfig::from_json(&config.to_json()).unwrap();
            assert_eq!(back, config);
        }
        assert!(preset(4).is_err());
    }

    #[test]
    fn parses_minimal_document() {
        let text = r#"{
            "potential": {"name": "abs_scaled", "sigma": 0.004},
            "law": {"name": "atan"},
            "mode": "nonlinear",
            "domain": [-2.5, 2.5],
            "n_cells": 200,
            "gamma": 0.9,
            "t_end": 1.0,
            "initial": {"kind": "atoms", "atoms": [[-1.0, 0.5], [1.0, 0.5]]}
        }"#;
        let config = SimConfig::from_json(text).unwrap();
        assert_eq!(config.law, LawSpec::Atan { k: 50.0, scale: FRAC_2_PI });
        assert_eq!(config.particles, ParticleCounts { compare: 256, oracle: 512 });
        assert_eq!(config.label, "run");
    }

    #[test]
    fn rejects_invalid_documents() {
        let base = preset(1).unwrap();
        let mut c = base.clone();
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.n_cells = 5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.domain = [1.0, -1.0];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.initial = InitialSpec::Bumps {
            bumps: vec![BumpSpec { amplitude: 1.0, center: 0.0, width: 0.0 }],
            normalize: true,
        };
        assert!(c.validate().is_err());
        let mut c = base;
        c.potential = PotentialSpec::AbsScaled { sigma: -1.0 };
        assert!(c.validate().is_err());
        assert!(SimConfig::from_json("{\"potential\": 3}").is_err());
        assert!(SimConfig::from_json(&preset(1).unwrap().to_json().replace("\"gamma\"", "\"gama\"")).is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let mut c = preset(1).unwrap();
        c.apply(&Overrides {
            n_cells: Some(200),
            gamma: Some(0.5),
            t_end: Some(0.25),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!((c.n_cells, c.gamma, c.t_end), (200, 0.5, 0.25));
        assert!(c
            .apply(&Overrides {
                gamma: Some(0.0),
                ..Overrides::default()
            })
            .is_err());
    }
}
