//! Interaction potentials and velocity nonlinearities.
//!
//! A pointy potential `W` is even, Lipschitz and λ-concave with a kink at the
//! origin. For the nonlinear flux it must also split as `W'' = -c δ₀ + w` with
//! `w` continuous and integrable; that split is carried by [`Decomposition`].
//!
//! `W'(0)` is never evaluated by the solvers: every velocity sum excludes the
//! diagonal, so [`PointyPotential::derivative`] returns `0` at the origin.

use std::f64::consts::FRAC_2_PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("unknown potential `{0}`")]
    UnknownPotential(String),
    #[error("unknown velocity law `{0}`")]
    UnknownLaw(String),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("potential has no W'' = -c δ₀ + w decomposition; nonlinear mode needs one")]
    MissingDecomposition,
}

/// Linear (`a = id`, velocity from `W'`) or nonlinear (`a(W' * ρ)`) dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Linear,
    Nonlinear,
}

/// The builtin family of pointy potentials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BuiltinPotential {
    /// `W(x) = -|x|/2`
    AbsHalf,
    /// `W(x) = -σ|x|`
    AbsScaled { sigma: f64 },
    /// `W(x) = (e^{-|x|} - 1)/2`, the chemotaxis potential
    ExpPointy,
}

impl BuiltinPotential {
    pub fn from_name(name: &str, sigma: Option<f64>) -> Result<Self, PotentialError> {
        match name {
            "abs_half" => Ok(Self::AbsHalf),
            "abs_scaled" => Ok(Self::AbsScaled {
                sigma: sigma.unwrap_or(0.5),
            }),
            "exp_pointy" => Ok(Self::ExpPointy),
            other => Err(PotentialError::UnknownPotential(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    Abs { sigma: f64 },
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SmoothPart {
    Zero,
    /// `w(x) = e^{-|x|}/2`
    HalfExp,
}

/// Data of the split `W'' = -c δ₀ + w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    c: f64,
    w0: f64,
    smooth: SmoothPart,
}

impl Decomposition {
    /// Weight of the Dirac mass at the origin.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `‖w‖_{L¹}`.
    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn is_trivial(&self) -> bool {
        self.smooth == SmoothPart::Zero
    }

    /// The continuous part `w`.
    pub fn w(&self, x: f64) -> f64 {
        match self.smooth {
            SmoothPart::Zero => 0.0,
            SmoothPart::HalfExp => 0.5 * (-x.abs()).exp(),
        }
    }

    /// `∫_{-∞}^{x} w`.
    pub fn w_left_integral(&self, x: f64) -> f64 {
        match self.smooth {
            SmoothPart::Zero => 0.0,
            SmoothPart::HalfExp => {
                if x <= 0.0 {
                    0.5 * x.exp()
                } else {
                    1.0 - 0.5 * (-x).exp()
                }
            }
        }
    }

    /// `∫_a^b w`, accurate in the tails.
    pub fn interval_integral(&self, a: f64, b: f64) -> f64 {
        match self.smooth {
            SmoothPart::Zero => 0.0,
            SmoothPart::HalfExp => {
                if a >= 0.0 && b >= 0.0 {
                    0.5 * ((-a).exp() - (-b).exp())
                } else if a <= 0.0 && b <= 0.0 {
                    0.5 * (b.exp() - a.exp())
                } else {
                    half_exp_from_zero(b) - half_exp_from_zero(a)
                }
            }
        }
    }

    /// `w̃(x) = ∫₀^x w + c/2`, so that `W'(x) = -c H(x) + w̃(x)` for `x ≠ 0`.
    pub fn w_tilde(&self, x: f64) -> f64 {
        let from_zero = match self.smooth {
            SmoothPart::Zero => 0.0,
            SmoothPart::HalfExp => half_exp_from_zero(x),
        };
        from_zero + 0.5 * self.c
    }

    /// Limit of `W' * ρ` far to the left of a unit-mass measure: `c/2 - ∫_{-∞}^0 w`.
    pub fn far_left_gradient(&self) -> f64 {
        0.5 * self.c - self.w_left_integral(0.0)
    }

    /// `Σ_j m_j w̃(x_i - x_j)` at every atom, the `j = i` term included (`w̃(0) = c/2`).
    ///
    /// `xs` must be strictly increasing.
    pub fn smooth_sums(&self, xs: &[f64], ms: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xs.len(), ms.len());
        let total: f64 = ms.iter().sum();
        match self.smooth {
            SmoothPart::Zero => vec![0.5 * self.c * total; xs.len()],
            SmoothPart::HalfExp => {
                let sweep = ExpSweep::new(xs, ms);
                (0..xs.len())
                    .map(|i| {
                        let left = sweep.mass_left[i] - sweep.left[i];
                        let right = sweep.mass_right[i] - sweep.right[i];
                        0.5 * self.c * total + 0.5 * (left - right)
                    })
                    .collect()
            }
        }
    }

    /// Pairwise reference for [`Decomposition::smooth_sums`].
    pub fn smooth_sums_direct(&self, xs: &[f64], ms: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&xi| {
                xs.iter()
                    .zip(ms)
                    .map(|(&xj, &mj)| mj * self.w_tilde(xi - xj))
                    .sum()
            })
            .collect()
    }
}

/// `∫₀^x e^{-|y|}/2 dy`.
fn half_exp_from_zero(x: f64) -> f64 {
    -0.5 * x.signum() * (-x.abs()).exp_m1()
}

/// Left/right exponentially weighted mass sums over sorted atoms.
struct ExpSweep {
    /// `Σ_{j<i} m_j e^{-(x_i - x_j)}`
    left: Vec<f64>,
    /// `Σ_{j>i} m_j e^{-(x_j - x_i)}`
    right: Vec<f64>,
    mass_left: Vec<f64>,
    mass_right: Vec<f64>,
}

impl ExpSweep {
    fn new(xs: &[f64], ms: &[f64]) -> Self {
        let n = xs.len();
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        let mut mass_left = vec![0.0; n];
        let mut mass_right = vec![0.0; n];
        for i in 1..n {
            debug_assert!(xs[i] > xs[i - 1], "atoms must be strictly increasing");
            left[i] = (left[i - 1] + ms[i - 1]) * (xs[i - 1] - xs[i]).exp();
            mass_left[i] = mass_left[i - 1] + ms[i - 1];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            right[i] = (right[i + 1] + ms[i + 1]) * (xs[i] - xs[i + 1]).exp();
            mass_right[i] = mass_right[i + 1] + ms[i + 1];
        }
        Self {
            left,
            right,
            mass_left,
            mass_right,
        }
    }
}

/// An attractive pointy potential with its derived constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PointyPotential {
    shape: Shape,
    lambda: f64,
    lip: f64,
    decomposition: Option<Decomposition>,
}

impl PointyPotential {
    pub fn builtin(kind: BuiltinPotential) -> Result<Self, PotentialError> {
        match kind {
            BuiltinPotential::AbsHalf => Self::abs_scaled(0.5),
            BuiltinPotential::AbsScaled { sigma } => Self::abs_scaled(sigma),
            BuiltinPotential::ExpPointy => Ok(Self {
                shape: Shape::Exp,
                lambda: 0.5,
                lip: 0.5,
                decomposition: Some(Decomposition {
                    c: 1.0,
                    w0: 1.0,
                    smooth: SmoothPart::HalfExp,
                }),
            }),
        }
    }

    /// `W(x) = -σ|x|`; its second derivative is `-2σ δ₀`.
    fn abs_scaled(sigma: f64) -> Result<Self, PotentialError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PotentialError::NonPositive {
                name: "sigma",
                value: sigma,
            });
        }
        Ok(Self {
            shape: Shape::Abs { sigma },
            lambda: 0.0,
            lip: sigma,
            decomposition: Some(Decomposition {
                c: 2.0 * sigma,
                w0: 0.0,
                smooth: SmoothPart::Zero,
            }),
        })
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.shape {
            Shape::Abs { sigma } => -sigma * x.abs(),
            Shape::Exp => 0.5 * (-x.abs()).exp_m1(),
        }
    }

    /// `W'(x)` for `x ≠ 0`; `0` at the origin.
    pub fn derivative(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        match self.shape {
            Shape::Abs { sigma } => -sigma * x.signum(),
            Shape::Exp => -0.5 * x.signum() * (-x.abs()).exp(),
        }
    }

    /// λ-concavity constant: `W - λx²/2` is concave.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn decomposition(&self) -> Option<&Decomposition> {
        self.decomposition.as_ref()
    }

    pub fn require_decomposition(&self) -> Result<&Decomposition, PotentialError> {
        self.decomposition
            .as_ref()
            .ok_or(PotentialError::MissingDecomposition)
    }

    /// `Σ_{j≠i} m_j W'(x_i - x_j)` at every atom, in `O(n)`.
    ///
    /// `xs` must be strictly increasing.
    pub fn interaction_velocities(&self, xs: &[f64], ms: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xs.len(), ms.len());
        match self.shape {
            Shape::Abs { sigma } => {
                let total: f64 = ms.iter().sum();
                let mut below = 0.0;
                xs.iter()
                    .zip(ms)
                    .enumerate()
                    .map(|(i, (_, &mi))| {
                        debug_assert!(i == 0 || xs[i] > xs[i - 1]);
                        let above = total - below - mi;
                        let v = sigma * (above - below);
                        below += mi;
                        v
                    })
                    .collect()
            }
            Shape::Exp => {
                let sweep = ExpSweep::new(xs, ms);
                sweep
                    .left
                    .iter()
                    .zip(&sweep.right)
                    .map(|(l, r)| 0.5 * (r - l))
                    .collect()
            }
        }
    }

    /// Pairwise reference for [`PointyPotential::interaction_velocities`].
    pub fn interaction_velocities_direct(&self, xs: &[f64], ms: &[f64]) -> Vec<f64> {
        xs.iter()
            .enumerate()
            .map(|(i, &xi)| {
                xs.iter()
                    .zip(ms)
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, (&xj, &mj))| mj * self.derivative(xi - xj))
                    .sum()
            })
            .collect()
    }
}

/// The builtin velocity nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BuiltinLaw {
    Identity,
    /// `a(x) = scale · atan(k x)`
    Atan { k: f64, scale: f64 },
}

impl BuiltinLaw {
    /// The law used by the built-in presets: `a(x) = (2/π) atan(50 x)`.
    pub fn preset_atan() -> Self {
        Self::Atan {
            k: 50.0,
            scale: FRAC_2_PI,
        }
    }
}

/// A nondecreasing `C¹` velocity nonlinearity `a`, its antiderivative `A`
/// with `A(0) = 0`, and a bound `α ≥ a'`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityLaw {
    kind: BuiltinLaw,
    alpha: f64,
}

/// Below this interval length the divided difference of `A` is replaced by `a` at the midpoint.
pub const EQUAL_GRADIENT_TOL: f64 = 1e-12;

impl VelocityLaw {
    pub fn builtin(kind: BuiltinLaw) -> Result<Self, PotentialError> {
        match kind {
            BuiltinLaw::Identity => Ok(Self { kind, alpha: 1.0 }),
            BuiltinLaw::Atan { k, scale } => {
                for (name, value) in [("k", k), ("scale", scale)] {
                    if !(value > 0.0 && value.is_finite()) {
                        return Err(PotentialError::NonPositive { name, value });
                    }
                }
                Ok(Self {
                    kind,
                    alpha: scale * k,
                })
            }
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: BuiltinLaw::Identity,
            alpha: 1.0,
        }
    }

    pub fn from_name(name: &str, k: Option<f64>, scale: Option<f64>) -> Result<Self, PotentialError> {
        match name {
            "identity" => Ok(Self::identity()),
            "atan" => Self::builtin(BuiltinLaw::Atan {
                k: k.unwrap_or(50.0),
                scale: scale.unwrap_or(FRAC_2_PI),
            }),
            other => Err(PotentialError::UnknownLaw(other.to_string())),
        }
    }

    pub fn kind(&self) -> BuiltinLaw {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_identity(&self) -> bool {
        self.kind == BuiltinLaw::Identity
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            BuiltinLaw::Identity => x,
            BuiltinLaw::Atan { k, scale } => scale * (k * x).atan(),
        }
    }

    pub fn antiderivative(&self, x: f64) -> f64 {
        match self.kind {
            BuiltinLaw::Identity => 0.5 * x * x,
            BuiltinLaw::Atan { k, scale } => {
                let kx = k * x;
                scale * (x * kx.atan() - (kx * kx).ln_1p() / (2.0 * k))
            }
        }
    }

    /// `(A(q) - A(p)) / (q - p)`, i.e. the mean of `a` over `[p, q]`.
    ///
    /// Below [`EQUAL_GRADIENT_TOL`] this is `a` at the midpoint. Short intervals
    /// (relative to the scale on which `a` bends) use 5-point Gauss-Legendre on
    /// `a` instead of subtracting two nearly equal values of `A`.
    pub fn divided_difference(&self, p: f64, q: f64) -> f64 {
        let h = q - p;
        let mid = 0.5 * (p + q);
        match self.kind {
            BuiltinLaw::Identity => mid,
            BuiltinLaw::Atan { k, .. } => {
                if h.abs() < EQUAL_GRADIENT_TOL {
                    self.eval(mid)
                } else if h.abs() * k <= 0.05 {
                    GAUSS_LEGENDRE_5
                        .iter()
                        .map(|&(node, weight)| weight * self.eval(mid + 0.5 * h * node))
                        .sum::<f64>()
                        * 0.5
                } else {
                    (self.antiderivative(q) - self.antiderivative(p)) / h
                }
            }
        }
    }
}

/// Nodes and weights on `[-1, 1]`.
pub(crate) const GAUSS_LEGENDRE_5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Bound `a_∞` on every discrete velocity, used by the CFL condition.
///
/// Linear mode: `‖W‖_Lip`. Nonlinear mode: `max_{|x| ≤ R} |a(x)|` where
/// `R = |u_∞| + c + w0` bounds the discrete gradient `∂ₓS` of a unit-mass state.
pub fn velocity_sup_bound(
    potential: &PointyPotential,
    law: &VelocityLaw,
    mode: Mode,
) -> Result<f64, PotentialError> {
    match mode {
        Mode::Linear => Ok(potential.lip()),
        Mode::Nonlinear => {
            let reach = gradient_reach(potential.require_decomposition()?);
            // a is nondecreasing, so the max of |a| sits at an endpoint.
            Ok(law.eval(reach).abs().max(law.eval(-reach).abs()))
        }
    }
}

/// Largest `|∂ₓS|` a nonnegative unit-mass state can produce.
pub fn gradient_reach(decomposition: &Decomposition) -> f64 {
    decomposition.far_left_gradient().abs() + decomposition.c() + decomposition.w0()
}
