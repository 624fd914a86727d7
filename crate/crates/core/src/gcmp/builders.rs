//! Named kernel builders shared by model files and the scenario catalog.
//!
//! Bernoulli-type mechanisms take `ψ = (q₁, q₀)`: the probability of
//! observing when the driving X-value is the second symbol, then when it is
//! the first.

use crate::pathspace::{TimeGrid, XAlphabet};
use crate::scalar::Scalar;

use super::{CountingKind, DependenceClass, MechanismKernel, ProcessModel};

fn bernoulli_row<S: Scalar>(p: &S) -> Vec<S> {
    vec![S::one() - p.clone(), p.clone()]
}

/// R_t distribution with `P(R_t = 1) = p` on a single component.
fn observe_row<S: Scalar>(p: &S) -> Vec<S> {
    bernoulli_row(p)
}

fn forced_one<S: Scalar>() -> Vec<S> {
    vec![S::zero(), S::one()]
}

/// X_t i.i.d. Bernoulli(θ₀) on a binary coordinate.
pub fn iid_bernoulli<S: Scalar>(alphabet: XAlphabet, grid: TimeGrid, thetas: Vec<Vec<S>>) -> ProcessModel<S> {
    ProcessModel::new(alphabet, grid, thetas, |th, _| bernoulli_row(&th[0]))
}

/// 0-1 survival process with constant discrete hazard θ₀, absorbing at 1.
pub fn survival_hazard<S: Scalar>(alphabet: XAlphabet, grid: TimeGrid, thetas: Vec<Vec<S>>) -> ProcessModel<S> {
    ProcessModel::new(alphabet, grid, thetas, |th, h| {
        if h.last() == Some(&1) {
            forced_one()
        } else {
            bernoulli_row(&th[0])
        }
    })
    .with_absorbing(1)
    .with_counting(vec![0])
}

/// R_1 = 1; for t ≥ 2, R_t ~ Bernoulli(q) with q chosen by X_{t-1}.
pub fn lagged_bernoulli<S: Scalar>(psis: Vec<Vec<S>>) -> MechanismKernel<S> {
    MechanismKernel::new(1, psis, DependenceClass::PastXOnly, CountingKind::Visit, |psi, x, rh| {
        let t = rh.len();
        if t == 0 {
            return forced_one();
        }
        observe_row(&psi[if x[t - 1] == 1 { 0 } else { 1 }])
    })
}

/// R_1 = 1; for t ≥ 2, R_t ~ Bernoulli(q) with q chosen by the current X_t,
/// which is exactly the value R_t decides whether to reveal.
pub fn anticipating_bernoulli<S: Scalar>(psis: Vec<Vec<S>>) -> MechanismKernel<S> {
    MechanismKernel::new(1, psis, DependenceClass::Anticipating, CountingKind::Visit, |psi, x, rh| {
        let t = rh.len();
        if t == 0 {
            return forced_one();
        }
        observe_row(&psi[if x[t] == 1 { 0 } else { 1 }])
    })
}

/// Window-type right censoring: once R drops to 0 it stays there; while
/// uncensored, the probability of being censored at step t is `ψ[t-1]`.
pub fn right_censor_hazard<S: Scalar>(psis: Vec<Vec<S>>) -> MechanismKernel<S> {
    MechanismKernel::new(1, psis, DependenceClass::PastObservedOnly, CountingKind::Window, |psi, _, rh| {
        if rh.last() == Some(&0) {
            return vec![S::one(), S::zero()];
        }
        let c = &psi[rh.len()];
        vec![c.clone(), S::one() - c.clone()]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmp::{JointModel, DEFAULT_PATH_CAP};
    use crate::pathspace::ParamPair;

    #[test]
    fn censoring_is_monotone() {
        let alphabet = XAlphabet::single("x", ["0", "1"]);
        let grid = TimeGrid::new(3, "").unwrap();
        let p = survival_hazard(alphabet, grid, vec![vec![0.3f64]]);
        let q = right_censor_hazard(vec![vec![0.2, 0.5, 0.5]]);
        let m = JointModel::build(p, q, ParamPair::new(0, 0), DEFAULT_PATH_CAP).unwrap();
        for path in m.space().paths() {
            assert!(path.r.windows(2).all(|w| w[0] >= w[1]));
            assert!(path.x.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
