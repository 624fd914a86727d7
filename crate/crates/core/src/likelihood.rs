//! Likelihood ratios on sub-σ-fields of a joint model.
//!
//! Every ratio is `num`-mass over `den`-mass of an atom, so the functions
//! here are thin, traceable wrappers around [`rn_derivative`]. Values at a
//! single observation come back as [`LrValue`], which names the atom the
//! number was read from.

use std::sync::Arc;

use thiserror::Error;

use crate::gcmp::{fixed_r_partition, observed_partition, JointModel, ModelError, Observation};
use crate::pathspace::{cond_expect, join, rn_derivative, ParamPair, Partition, PathFunction, SpaceError, TimeGrid};
use crate::scalar::{product, Scalar};
use crate::tol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("observation off support: {0}")]
    OffSupport(String),
    #[error("invalid compensator increment {value} at step {t}, mark {mark}")]
    InvalidIncrement { t: usize, mark: usize, value: String },
    #[error("simultaneous jumps unsupported (step {t})")]
    SimultaneousJumps { t: usize },
    #[error("invalid times: {0}")]
    InvalidTimes(String),
    #[error("increment sequences disagree in shape")]
    ShapeMismatch,
    #[error("observed likelihood cross-check failed: atom ratio {ratio} vs conditional expectation {expectation}")]
    CrossCheck { ratio: String, expectation: String },
}

pub type Result<T, E = LikelihoodError> = std::result::Result<T, E>;

/// A likelihood ratio read off one atom.
#[derive(Debug, Clone, PartialEq)]
pub struct LrValue<S> {
    pub value: S,
    pub field: String,
    pub atom: usize,
    /// Support paths in the atom.
    pub paths: Vec<usize>,
}

/// `L_G^{num/den}`: the ratio of the two measures restricted to `field`.
pub fn lr<S: Scalar>(model: &JointModel<S>, field: &Partition, num: ParamPair, den: ParamPair) -> Result<PathFunction<S>> {
    Ok(rn_derivative(model.measure(num), model.measure(den), field)?)
}

/// `L_{Y|X} = L_{X∨Y} / L_X`.
pub fn conditional_lr<S: Scalar>(
    model: &JointModel<S>,
    target: &Partition,
    given: &Partition,
    num: ParamPair,
    den: ParamPair,
) -> Result<PathFunction<S>> {
    let both = join(target, given)?;
    let joint = lr(model, &both, num, den)?;
    let marginal = lr(model, given, num, den)?;
    Ok(joint.div(&marginal)?)
}

fn find_atom<S: Scalar>(model: &JointModel<S>, part: &Partition, obs: &Observation) -> Result<usize> {
    let alphabet = model.alphabet();
    if !obs.is_consistent(alphabet) {
        return Err(LikelihoodError::OffSupport("observation is not consistent with its own r-path".into()));
    }
    model
        .space()
        .paths()
        .iter()
        .position(|p| Observation::of(alphabet, p) == *obs)
        .map(|i| part.atom_of(i))
        .ok_or_else(|| LikelihoodError::OffSupport(render(model, obs)))
}

fn render<S: Scalar>(model: &JointModel<S>, obs: &Observation) -> String {
    obs.render(model.alphabet(), model.r_dim())
        .into_iter()
        .map(|(r, x)| format!("(r={r}, x={x})"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `L_O` at one observation, computed as an atom-mass ratio and cross-checked
/// against `E_den[L_F | O]` on the same atom.
pub fn observed_lr<S: Scalar>(model: &JointModel<S>, obs: &Observation, num: ParamPair, den: ParamPair) -> Result<LrValue<S>> {
    let o = observed_partition(model);
    let atom = find_atom(model, &o, obs)?;
    let paths = o.atom(atom).to_vec();
    let ratio = model.measure(num).mass(&paths) / model.measure(den).mass(&paths);
    let via_full = cond_expect(&lr(model, &model.full_partition(), num, den)?, &o, model.measure(den))?;
    let expectation = via_full.value(paths[0]).clone();
    let scale = ratio.as_f64().abs().max(1.0);
    if !ratio.close_to(&expectation, tol::DIRECT * scale) {
        return Err(LikelihoodError::CrossCheck { ratio: ratio.to_string(), expectation: expectation.to_string() });
    }
    Ok(LrValue { value: ratio, field: o.label.clone(), atom, paths })
}

/// Likelihood ratio ignoring the mechanism: the X-marginals compared on
/// `X^r` with `r` the observation's own R-path, as though `r` had been fixed
/// in advance. ψ never enters.
pub fn ignoring_lr<S: Scalar>(model: &JointModel<S>, obs: &Observation, theta: usize, theta0: usize) -> Result<LrValue<S>> {
    if !obs.is_consistent(model.alphabet()) || obs.r.len() != model.horizon() {
        return Err(LikelihoodError::OffSupport(render(model, obs)));
    }
    let xr = fixed_r_partition(model, &obs.r)?;
    let alphabet = model.alphabet();
    let atom = model
        .space()
        .paths()
        .iter()
        .position(|p| Observation::under(alphabet, &p.x, &obs.r).x_obs == obs.x_obs)
        .map(|i| xr.atom_of(i))
        .ok_or_else(|| LikelihoodError::OffSupport(render(model, obs)))?;
    let matching: Vec<usize> = (0..model.x_paths().len())
        .filter(|&k| Observation::under(alphabet, &model.x_paths()[k], &obs.r).x_obs == obs.x_obs)
        .collect();
    let mass = |th: usize| S::sum_all(matching.iter().map(|&k| model.x_prob_by_id(th, k).clone()));
    Ok(LrValue { value: mass(theta) / mass(theta0), field: xr.label.clone(), atom, paths: xr.atom(atom).to_vec() })
}

/// Discrete Jacod functional. `num[t][h]`, `den[t][h]` are compensator
/// increments of mark `h` at step `t`, `jumps[t][h]` the counting increments.
/// Each step contributes `λ_h/λ0_h` if mark `h` jumps and
/// `(1 − Σλ)/(1 − Σλ0)` if nothing jumps.
///
/// Increments may sit on the boundary {0, 1} as long as every factor that is
/// actually used has a positive denominator; predictable compensators live
/// there.
pub fn jacod_phi<S: Scalar>(num: &[Vec<S>], den: &[Vec<S>], jumps: &[Vec<u8>]) -> Result<S> {
    if num.len() != den.len() || num.len() != jumps.len() {
        return Err(LikelihoodError::ShapeMismatch);
    }
    let mut factors = Vec::with_capacity(num.len());
    for (t, ((ln, ld), dn)) in num.iter().zip(den).zip(jumps).enumerate() {
        if ln.len() != ld.len() || ln.len() != dn.len() {
            return Err(LikelihoodError::ShapeMismatch);
        }
        for (h, v) in ln.iter().chain(ld).enumerate() {
            if v.is_negative() || *v > S::one() {
                return Err(LikelihoodError::InvalidIncrement { t: t + 1, mark: h % ln.len(), value: v.to_string() });
            }
        }
        let jumped: Vec<usize> = (0..dn.len()).filter(|&h| dn[h] > 0).collect();
        if jumped.len() > 1 || dn.iter().any(|&d| d > 1) {
            return Err(LikelihoodError::SimultaneousJumps { t: t + 1 });
        }
        let (top, bottom, mark) = match jumped.first() {
            Some(&h) => (ln[h].clone(), ld[h].clone(), h),
            None => {
                let sn = S::sum_all(ln.iter().cloned());
                let sd = S::sum_all(ld.iter().cloned());
                for (s, which) in [(&sn, 0), (&sd, 1)] {
                    if *s > S::one() {
                        return Err(LikelihoodError::InvalidIncrement { t: t + 1, mark: which, value: s.to_string() });
                    }
                }
                (S::one() - sn, S::one() - sd, 0)
            }
        };
        if bottom.is_zero() || !bottom.as_f64().is_finite() {
            return Err(LikelihoodError::InvalidIncrement { t: t + 1, mark, value: bottom.to_string() });
        }
        factors.push(top / bottom);
    }
    Ok(product(&factors))
}

pub type HazardFn<S> = Arc<dyn Fn(&[S], usize) -> S + Send + Sync>;

/// Discrete hazard `λ_θ(t)` for steps `1..=horizon`.
#[derive(Clone)]
pub struct HazardSpec<S> {
    pub grid: TimeGrid,
    hazard: HazardFn<S>,
}

impl<S: Scalar> HazardSpec<S> {
    pub fn new(grid: TimeGrid, hazard: impl Fn(&[S], usize) -> S + Send + Sync + 'static) -> Self {
        Self { grid, hazard: Arc::new(hazard) }
    }

    /// `λ_θ(t) = θ₀` at every step.
    pub fn constant(grid: TimeGrid) -> Self {
        Self::new(grid, |th, _| th[0].clone())
    }

    pub fn at(&self, theta: &[S], t: usize) -> Result<S> {
        let v = (self.hazard)(theta, t);
        if v <= S::zero() || v >= S::one() {
            return Err(LikelihoodError::InvalidIncrement { t, mark: 0, value: v.to_string() });
        }
        Ok(v)
    }

    /// Compensator increments and counting increments of the single-event
    /// process that is at risk up to `min(T, c)`.
    pub fn counting_setup(&self, theta: &[S], event_time: Option<usize>, censor_time: usize) -> Result<(Vec<Vec<S>>, Vec<Vec<u8>>)> {
        check_times(&self.grid, event_time, censor_time)?;
        let stop = event_time.unwrap_or(censor_time);
        let mut lambda = Vec::with_capacity(self.grid.horizon());
        let mut jumps = Vec::with_capacity(self.grid.horizon());
        for t in 1..=self.grid.horizon() {
            lambda.push(vec![if t <= stop { self.at(theta, t)? } else { S::zero() }]);
            jumps.push(vec![u8::from(event_time == Some(t))]);
        }
        Ok((lambda, jumps))
    }
}

fn check_times(grid: &TimeGrid, event_time: Option<usize>, censor_time: usize) -> Result<()> {
    if censor_time > grid.horizon() {
        return Err(LikelihoodError::InvalidTimes(format!("censoring time {censor_time} beyond horizon {}", grid.horizon())));
    }
    match event_time {
        Some(0) => Err(LikelihoodError::InvalidTimes("event time must be at least 1".into())),
        Some(t) if t > censor_time => Err(LikelihoodError::InvalidTimes(format!("event time {t} after censoring time {censor_time}"))),
        _ => Ok(()),
    }
}

/// Right-censored survival likelihood ratio in hazard-product form:
/// `Π_{t<T} (1−λ_θ)/(1−λ_θ0) · λ_θ(T)/λ_θ0(T)` for an event at `T ≤ c`,
/// `Π_{t≤c} (1−λ_θ)/(1−λ_θ0)` when censored at `c`.
pub fn survival_lr<S: Scalar>(h: &HazardSpec<S>, event_time: Option<usize>, censor_time: usize, theta: &[S], theta0: &[S]) -> Result<S> {
    check_times(&h.grid, event_time, censor_time)?;
    let survive_until = event_time.map_or(censor_time, |t| t - 1);
    let mut factors = Vec::with_capacity(censor_time + 1);
    for t in 1..=survive_until {
        factors.push((S::one() - h.at(theta, t)?) / (S::one() - h.at(theta0, t)?));
    }
    if let Some(t) = event_time {
        factors.push(h.at(theta, t)? / h.at(theta0, t)?);
    }
    Ok(product(&factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmp::builders::{anticipating_bernoulli, iid_bernoulli, lagged_bernoulli};
    use crate::gcmp::{MechanismKernel, DEFAULT_PATH_CAP};
    use crate::pathspace::XAlphabet;
    use crate::scalar::Exact;

    fn e(n: i64, d: i64) -> Exact {
        Exact::from_ratio(n, d)
    }

    fn m1(mechanism: MechanismKernel<Exact>) -> JointModel<Exact> {
        let p = iid_bernoulli(
            XAlphabet::single("x", ["0", "1"]),
            TimeGrid::new(2, "").unwrap(),
            vec![vec![e(3, 10)], vec![e(1, 2)]],
        );
        JointModel::build(p, mechanism, ParamPair::new(1, 0), DEFAULT_PATH_CAP).unwrap()
    }

    fn obs_10() -> Observation {
        Observation { r: vec![1, 0], x_obs: vec![vec![Some(1)], vec![None]] }
    }

    #[test]
    fn observed_and_ignoring_on_ignorable_variant() {
        let m = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)], vec![e(7, 10), e(2, 5)]]));
        let o = observed_lr(&m, &obs_10(), ParamPair::new(0, 0), ParamPair::new(1, 0)).unwrap();
        assert_eq!(o.value, e(3, 5));
        assert_eq!(o.paths.len(), 2);
        let i = ignoring_lr(&m, &obs_10(), 0, 1).unwrap();
        assert_eq!(i.value, e(3, 5));
    }

    #[test]
    fn anticipating_variant_breaks_ignorability() {
        let m = m1(anticipating_bernoulli(vec![vec![e(9, 10), e(1, 2)], vec![e(7, 10), e(1, 2)]]));
        let o = observed_lr(&m, &obs_10(), ParamPair::new(0, 0), ParamPair::new(1, 0)).unwrap();
        assert_eq!(o.value, e(76, 100));
        assert_eq!(ignoring_lr(&m, &obs_10(), 0, 1).unwrap().value, e(6, 10));
    }

    #[test]
    fn off_support_observation_is_rejected() {
        let m = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)]]));
        let never = Observation { r: vec![0, 0], x_obs: vec![vec![None], vec![None]] };
        assert!(matches!(
            observed_lr(&m, &never, ParamPair::new(0, 0), ParamPair::new(1, 0)),
            Err(LikelihoodError::OffSupport(_))
        ));
        let inconsistent = Observation { r: vec![1, 0], x_obs: vec![vec![Some(1)], vec![Some(0)]] };
        assert!(ignoring_lr(&m, &inconsistent, 0, 1).is_err());
    }

    #[test]
    fn conditional_lr_of_mechanism_is_kernel_ratio() {
        let m = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)], vec![e(7, 10), e(2, 5)]]));
        let l = conditional_lr(&m, &m.r_partition(), &m.x_partition(), ParamPair::new(1, 1), ParamPair::new(1, 0)).unwrap();
        let i = m.space().paths().iter().position(|p| p.x[0] == 1 && p.r == vec![1, 1]).unwrap();
        assert_eq!(l.value(i), &e(7, 5));
    }

    #[test]
    fn jacod_direct_product() {
        let num = vec![vec![e(3, 10)], vec![e(3, 10)]];
        let den = vec![vec![e(1, 2)], vec![e(1, 2)]];
        let v = jacod_phi(&num, &den, &[vec![0], vec![1]]).unwrap();
        assert_eq!(v, e(84, 100));
        assert_eq!(jacod_phi(&num, &num, &[vec![0], vec![1]]).unwrap(), e(1, 1));
    }

    #[test]
    fn jacod_errors() {
        let bad = vec![vec![e(3, 2)]];
        let ok = vec![vec![e(1, 2)]];
        assert!(matches!(jacod_phi(&bad, &ok, &[vec![0]]), Err(LikelihoodError::InvalidIncrement { .. })));
        let two = vec![vec![e(1, 4), e(1, 4)]];
        assert!(matches!(jacod_phi(&two, &two, &[vec![1, 1]]), Err(LikelihoodError::SimultaneousJumps { t: 1 })));
        let one = vec![vec![e(1, 1)]];
        assert!(matches!(jacod_phi(&ok, &one, &[vec![0]]), Err(LikelihoodError::InvalidIncrement { .. })));
    }

    #[test]
    fn survival_values() {
        let grid = TimeGrid::new(4, "").unwrap();
        let h = HazardSpec::constant(grid);
        let (th, th0) = (vec![e(3, 10)], vec![e(1, 2)]);
        assert_eq!(survival_lr(&h, None, 2, &th, &th0).unwrap(), e(196, 100));
        assert_eq!(survival_lr(&h, Some(1), 2, &th, &th0).unwrap(), e(3, 5));
        assert_eq!(survival_lr(&h, Some(2), 3, &th, &th).unwrap(), e(1, 1));
        assert!(matches!(survival_lr(&h, Some(3), 2, &th, &th0), Err(LikelihoodError::InvalidTimes(_))));
        assert!(matches!(survival_lr(&h, None, 5, &th, &th0), Err(LikelihoodError::InvalidTimes(_))));
    }

    #[test]
    fn survival_equals_jacod() {
        let grid = TimeGrid::new(4, "").unwrap();
        let h = HazardSpec::new(grid, |th: &[Exact], t| th[0].clone() * Exact::from_ratio(t as i64, 5));
        let (th, th0) = (vec![e(1, 2)], vec![e(4, 5)]);
        for c in 0..=4 {
            for event in std::iter::once(None).chain((1..=c).map(Some)) {
                let (ln, dn) = h.counting_setup(&th, event, c).unwrap();
                let (ld, _) = h.counting_setup(&th0, event, c).unwrap();
                let phi = jacod_phi(&ln, &ld, &dn).unwrap();
                assert_eq!(phi, survival_lr(&h, event, c, &th, &th0).unwrap(), "event {event:?}, c {c}");
            }
        }
    }
}
