//! Exact likelihood inference for coarsened processes on finite path spaces.
//!
//! Every computation is generic over [`Scalar`]; the aliases below fix the
//! common choices: `f64` for speed and [`Exact`] rationals when a verdict
//! must not depend on rounding.

pub mod certify;
pub mod gcmp;
pub mod likelihood;
pub mod pathspace;
pub mod scalar;
pub mod scenarios;

pub mod tol {
    /// Equality tolerance for direct sums of path probabilities.
    pub const DIRECT: f64 = 1e-12;
    /// Equality tolerance for derived quantities (compensators, verdicts).
    pub const DERIVED: f64 = 1e-9;
}

pub use certify::{certify_all, Certificate, Condition, Tolerances, Verdict};
pub use gcmp::{JointModel, MechanismKernel, Observation, ProcessModel};
pub use pathspace::{ParamPair, PathSpace};
pub use scalar::{Exact, Scalar};

pub type Model = JointModel<f64>;
pub type ModelF32 = JointModel<f32>;
pub type ExactModel = JointModel<Exact>;
pub type Process = ProcessModel<f64>;
pub type ExactProcess = ProcessModel<Exact>;
pub type Mechanism = MechanismKernel<f64>;
pub type ExactMechanism = MechanismKernel<Exact>;
