//! Ready-built observation schemes and a Monte Carlo estimation study.
//!
//! Each [`Scenario`] builds a [`JointModel`] from a parameter record and
//! carries the verdicts it is expected to certify with, so the catalog
//! doubles as a regression suite for the certifier.

mod catalog;
pub mod study;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::certify::{certify_all, check_car_dyn, check_ignorable_coarsened, Certificate, CertifyError, Tolerances, Verdict};
use crate::gcmp::{JointModel, ModelError, Observation, VerticalCoarsener, DEFAULT_PATH_CAP};
use crate::likelihood::LikelihoodError;
use crate::pathspace::{ParamPair, SpaceError};
use crate::scalar::Scalar;

pub use study::{
    bias_report, fit_mle, law_at, run_study, simulate, write_csv, BiasReport, EstimationStudy, Method, MethodSummary, Objective,
    Search, StudyFile, StudySpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("unknown scenario {0:?}")]
    Unknown(String),
    #[error("parameter {name}: {message}")]
    Param { name: String, message: String },
    #[error("study: {0}")]
    Study(String),
    #[error("non-finite log-likelihood at θ = {0}")]
    NonFinite(f64),
}

impl From<SpaceError> for ScenarioError {
    fn from(e: SpaceError) -> Self {
        ScenarioError::Model(e.into())
    }
}

pub type Result<T, E = ScenarioError> = std::result::Result<T, E>;

/// Named scenario parameters as text, plus the path-count cap for the build.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub values: BTreeMap<String, String>,
    pub cap: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self { values: BTreeMap::new(), cap: DEFAULT_PATH_CAP }
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.values.insert(key.into(), value.into());
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    fn err(name: &str, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Param { name: name.into(), message: message.into() }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| Self::err(key, format!("{v:?} is not a nonnegative integer"))),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => f64::parse_decimal(v)
                .filter(|x| x.is_finite())
                .ok_or_else(|| Self::err(key, format!("{v:?} is not a number"))),
        }
    }

    /// Comma-separated steps in `1..=horizon`, sorted and deduplicated.
    pub fn steps(&self, key: &str, default: &[usize], horizon: usize) -> Result<Vec<usize>> {
        let Some(v) = self.values.get(key) else {
            return Ok(default.to_vec());
        };
        let mut steps = v
            .split(',')
            .map(|s| s.trim().parse::<usize>().ok().filter(|&t| (1..=horizon).contains(&t)))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Self::err(key, format!("{v:?} is not a list of steps in 1..={horizon}")))?;
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }
}

/// A scenario's model with the extras some checks need.
#[derive(Debug, Clone)]
pub struct Built<S> {
    pub model: JointModel<S>,
    /// Coarsening applied to observed values before inference, if any.
    pub vertical: Option<VerticalCoarsener>,
    /// Planned visit steps for fixed-visit schemes.
    pub visits: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    M1Ignorable,
    M1Anticipating,
    RightCensorIndependent,
    RightCensorInformative,
    RightCensorFuture,
    RightCensorFixed,
    RightCensorCovariates,
    LeftCensor,
    IntervalFixedVisits,
    IntervalInformative,
    ObservationWindows,
    MixedMonitoring,
    Type2,
    RandomizedType2,
    AdaptiveStopping,
    MarkerVisitSchedule,
    DetectionLimit,
    MarkerScheduleClamped,
    DropoutObserved,
    DropoutLatent,
}

/// Expected verdict for one condition. Per-R conditions ("CAR(GCMP)-loc",
/// "ignorable", "ignorable-coarsened") hold when every support R-path
/// holds and fail when at least one fails.
pub type Expectation = (&'static str, Verdict);

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: &'static str,
    /// Observation scheme the scenario illustrates.
    pub setting: &'static str,
    pub description: &'static str,
    /// Accepted parameters with their defaults.
    pub params: &'static [(&'static str, &'static str)],
    pub expected: Vec<Expectation>,
    #[serde(skip)]
    kind: Kind,
}

use Verdict::{Fails as F, Holds as H, NotApplicable as NA, PreconditionFailed as PF};

fn expect(
    gcmp: Verdict,
    abs: Verdict,
    dyn_: Verdict,
    predictable: Verdict,
    censoring: Verdict,
    ignorable: Verdict,
) -> Vec<Expectation> {
    vec![
        ("dependence-class", H),
        ("CAR(GCMP)", gcmp),
        ("CAR(REL)", gcmp),
        ("CAR(ABS)", abs),
        ("CAR(DYN)", dyn_),
        ("predictable", predictable),
        ("factorization", if gcmp == H { H } else { PF }),
        ("independent-censoring", censoring),
        ("CAR(GCMP)-loc", ignorable),
        ("ignorable", ignorable),
    ]
}

fn with(mut base: Vec<Expectation>, extra: Expectation) -> Vec<Expectation> {
    base.push(extra);
    base
}

/// Every scenario in the catalog.
pub fn catalog() -> Vec<Scenario> {
    let s = |name, setting, description, params, expected, kind| Scenario { name, setting, description, params, expected, kind };
    vec![
        s(
            "m1_ignorable",
            "binary process, lagged observation",
            "X_t i.i.d. Bernoulli(θ) on 2 steps; X_1 always seen, R_2 drawn from X_1",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::M1Ignorable,
        ),
        s(
            "m1_anticipating",
            "binary process, anticipating observation",
            "X_t i.i.d. Bernoulli(θ) on 2 steps; R_2 drawn from the value X_2 it reveals",
            &[],
            expect(F, F, F, F, NA, F),
            Kind::M1Anticipating,
        ),
        s(
            "right_censor_independent",
            "right censoring",
            "survival indicator with constant hazard θ, censoring hazards fixed in advance",
            &[],
            expect(H, H, H, F, H, H),
            Kind::RightCensorIndependent,
        ),
        s(
            "right_censor_informative",
            "right censoring",
            "censoring more likely at the step the event occurs",
            &[],
            expect(F, F, F, F, F, F),
            Kind::RightCensorInformative,
        ),
        s(
            "right_censor_future",
            "right censoring",
            "censoring hazard reacts to the value one step ahead",
            &[],
            expect(F, F, F, F, F, F),
            Kind::RightCensorFuture,
        ),
        s(
            "right_censor_fixed",
            "right censoring",
            "deterministic censoring: observed while t < c",
            &[("c", "3")],
            expect(H, H, H, H, H, H),
            Kind::RightCensorFixed,
        ),
        s(
            "right_censor_covariates",
            "right censoring with an external covariate",
            "event hazard doubles while Z = 1; Z always observed, censoring driven by the last Z",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::RightCensorCovariates,
        ),
        s(
            "left_censor",
            "left censoring",
            "observation starts at an entry step drawn independently of X",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::LeftCensor,
        ),
        s(
            "interval_censor_fixed_visits",
            "interval censoring",
            "survival indicator seen only at fixed visit steps",
            &[("visits", "2,4")],
            expect(H, H, H, H, NA, H),
            Kind::IntervalFixedVisits,
        ),
        s(
            "interval_censor_informative",
            "interval censoring",
            "attendance at the last visit depends on X at an unvisited step",
            &[],
            expect(F, F, F, F, NA, F),
            Kind::IntervalInformative,
        ),
        s(
            "observation_windows",
            "repeated observation windows",
            "windows close with a probability set by the last observed value and reopen at random",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::ObservationWindows,
        ),
        s(
            "mixed_monitoring",
            "continuous monitoring followed by visits",
            "monitored every step until a discharge chosen from the last observed value, then seen at even steps",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::MixedMonitoring,
        ),
        s(
            "type2",
            "Type II censoring",
            "two subjects followed until the step at which the d-th event is seen",
            &[("d", "1")],
            expect(H, H, H, H, H, H),
            Kind::Type2,
        ),
        s(
            "randomized_type2",
            "randomized Type II censoring",
            "after the j-th event observation stops with probability (j-1)/j",
            &[],
            expect(H, H, H, F, H, H),
            Kind::RandomizedType2,
        ),
        s(
            "adaptive_stopping_threshold",
            "interim analysis",
            "subjects with covariates (0, 1) are kept after step 1 only if the predicted event probability at the interim estimate is at least c",
            &[("c", "0.7")],
            expect(H, H, H, H, NA, H),
            Kind::AdaptiveStopping,
        ),
        s(
            "marker_visit_schedule",
            "marker-driven visits",
            "next visit due 1/2/3 steps after a low/mid/high marker reading; due visits attended with probability ψ",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::MarkerVisitSchedule,
        ),
        s(
            "detection_limit",
            "marker below a detection limit",
            "low and mid readings reported as below-limit; visit delays react only to the reported value",
            &[],
            with(expect(H, H, H, F, NA, H), ("ignorable-coarsened", H)),
            Kind::DetectionLimit,
        ),
        s(
            "marker_schedule_clamped",
            "marker below a detection limit",
            "the 1/2/3-step schedule combined with the detection-limit clamp: the schedule uses what the clamp hides",
            &[],
            with(expect(H, H, H, F, NA, H), ("ignorable-coarsened", F)),
            Kind::MarkerScheduleClamped,
        ),
        s(
            "joint_model_dropout_observed",
            "marker and event with drop-out",
            "drop-out probability set by the event status seen at the last visit",
            &[],
            expect(H, H, H, F, NA, H),
            Kind::DropoutObserved,
        ),
        s(
            "joint_model_dropout_latent",
            "marker and event with drop-out",
            "drop-out probability set by the current, unobserved event status",
            &[],
            expect(F, F, F, F, NA, F),
            Kind::DropoutLatent,
        ),
    ]
}

pub fn find(name: &str) -> Result<Scenario> {
    catalog().into_iter().find(|s| s.name == name).ok_or_else(|| ScenarioError::Unknown(name.into()))
}

/// A declared verdict that a fresh certification run disagrees with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub condition: String,
    pub expected: Verdict,
    pub actual: Option<Verdict>,
}

impl Scenario {
    pub fn build<S: Scalar>(&self, params: &Params) -> Result<Built<S>> {
        if let Some(k) = params.values.keys().find(|k| !self.params.iter().any(|(p, _)| p == k)) {
            return Err(Params::err(k, format!("not a parameter of {}", self.name)));
        }
        use catalog as c;
        let built = match self.kind {
            Kind::M1Ignorable => c::m1_ignorable(params),
            Kind::M1Anticipating => c::m1_anticipating(params),
            Kind::RightCensorIndependent => c::right_censor_independent(params),
            Kind::RightCensorInformative => c::right_censor_informative(params),
            Kind::RightCensorFuture => c::right_censor_future(params),
            Kind::RightCensorFixed => c::right_censor_fixed(params),
            Kind::RightCensorCovariates => c::right_censor_covariates(params),
            Kind::LeftCensor => c::left_censor(params),
            Kind::IntervalFixedVisits => c::interval_censor_fixed_visits(params),
            Kind::IntervalInformative => c::interval_censor_informative(params),
            Kind::ObservationWindows => c::observation_windows(params),
            Kind::MixedMonitoring => c::mixed_monitoring(params),
            Kind::Type2 => c::type2(params),
            Kind::RandomizedType2 => c::randomized_type2(params),
            Kind::AdaptiveStopping => c::adaptive_stopping_threshold(params),
            Kind::MarkerVisitSchedule => c::marker_visit_schedule(params),
            Kind::DetectionLimit => c::detection_limit(params),
            Kind::MarkerScheduleClamped => c::marker_schedule_clamped(params),
            Kind::DropoutObserved => c::joint_model_dropout_observed(params),
            Kind::DropoutLatent => c::joint_model_dropout_latent(params),
        }?;
        Ok(Built { model: built.model.named(self.name), ..built })
    }

    /// Compares fresh certificates with the declared verdicts.
    pub fn mismatches(&self, certs: &[Certificate]) -> Vec<Mismatch> {
        self.expected
            .iter()
            .filter_map(|&(condition, expected)| {
                let found: Vec<Verdict> = certs.iter().filter(|c| c.condition == condition).map(|c| c.verdict).collect();
                let actual = match found.as_slice() {
                    [] => None,
                    [v] => Some(*v),
                    many if many.iter().all(|v| *v == H) => Some(H),
                    many if many.contains(&F) => Some(F),
                    many => Some(many[0]),
                };
                (actual != Some(expected)).then(|| Mismatch { condition: condition.into(), expected, actual })
            })
            .collect()
    }
}

/// All certificates for a built scenario: [`certify_all`] plus coarsened
/// ignorability on every support R-path when a vertical coarsener is set.
pub fn certify_scenario<S: Scalar>(built: &Built<S>, tols: Tolerances) -> Result<Vec<Certificate>> {
    let mut certs = certify_all(&built.model, tols)?;
    if let Some(v) = &built.vertical {
        for r in built.model.support_r_paths() {
            certs.push(check_ignorable_coarsened(&built.model, &r, v, tols.derived)?);
        }
    }
    Ok(certs)
}

/// Where the fixed-visit characterization breaks: the kernel's attendance
/// probability against its conditional probability given what was seen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitMarWitness {
    pub pair: ParamPair,
    pub visit: usize,
    pub path: usize,
    pub kernel: f64,
    pub conditional: f64,
}

/// For every visit v and support path: `P(R_v = 1 | R_{<v}, X)` read off the
/// kernel equals `P(R_v = 1 | R_{<v}, X observed before v)` under the joint
/// law. Returns the first violation, if any.
pub fn visit_mar_check<S: Scalar>(model: &JointModel<S>, visits: &[usize], tol: f64) -> Option<VisitMarWitness> {
    let alphabet = model.alphabet();
    let space = model.space();
    for pair in model.pairs() {
        let mu = model.measure(pair);
        for &v in visits {
            let history = |i: usize| {
                let p = space.path(i);
                Observation::under(alphabet, &p.x[..v - 1], &p.r[..v - 1])
            };
            let mut groups: BTreeMap<Observation, Vec<usize>> = BTreeMap::new();
            for i in 0..space.len() {
                groups.entry(history(i)).or_default().push(i);
            }
            for members in groups.values() {
                let total = mu.mass(members);
                let attended: Vec<usize> = members.iter().copied().filter(|&i| space.path(i).r[v - 1] & 1 == 1).collect();
                let conditional = mu.mass(&attended) / total;
                for &i in members {
                    let p = space.path(i);
                    let row = model.mechanism().row(model.psi(pair.psi), &p.x, &p.r[..v - 1]);
                    let kernel = row[1].clone();
                    if !crate::certify::close(&kernel, &conditional, tol) {
                        return Some(VisitMarWitness { pair, visit: v, path: i, kernel: kernel.as_f64(), conditional: conditional.as_f64() });
                    }
                }
            }
        }
    }
    None
}

/// Whether the fixed-visit characterization and the CAR(DYN) certificate
/// agree for a scenario with planned visits.
pub fn visit_mar_agrees<S: Scalar>(built: &Built<S>, tol: f64) -> Option<bool> {
    let visits = built.visits.as_ref()?;
    let kernel_level = visit_mar_check(&built.model, visits, tol).is_none();
    Some(kernel_level == check_car_dyn(&built.model, tol).holds())
}

/// θ-argmaxes of the expected log-likelihoods for a model whose X has an
/// event coordinate and an always-observed covariate coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateArgmax {
    /// First θ-component maximizing the expected conditional log-likelihood
    /// of the event coordinate given the covariate.
    pub conditional: f64,
    /// First θ-component of the maximizer of the full ignoring likelihood.
    pub full: f64,
    /// The conditional likelihood does not move with the covariate parameters.
    pub covariate_free: bool,
}

/// Expected log-likelihoods under `truth`, by enumeration. `covariate` is
/// the index of the always-observed coordinate.
pub fn covariate_argmax<S: Scalar>(model: &JointModel<S>, covariate: usize, truth: ParamPair) -> CovariateArgmax {
    let alphabet = model.alphabet();
    let space = model.space();
    let mu = model.measure(truth);
    let xs = model.x_paths();
    let coarse = |x: &[u16], r: &[u8]| Observation::under(alphabet, x, r).x_obs;
    let covariate_of = |x: &[u16]| x.iter().map(|&s| alphabet.symbol(s, covariate)).collect::<Vec<_>>();
    let mut full = vec![0.0; model.n_theta()];
    let mut conditional = vec![0.0; model.n_theta()];
    for i in 0..space.len() {
        let w = mu.prob(i).as_f64();
        if w == 0.0 {
            continue;
        }
        let p = space.path(i);
        let seen = coarse(&p.x, &p.r);
        let z = covariate_of(&p.x);
        let joint: Vec<usize> = (0..xs.len()).filter(|&k| coarse(&xs[k], &p.r) == seen).collect();
        let given: Vec<usize> = (0..xs.len()).filter(|&k| covariate_of(&xs[k]) == z).collect();
        for th in 0..model.n_theta() {
            let mass = |set: &[usize]| S::sum_all(set.iter().map(|&k| model.x_prob_by_id(th, k).clone())).as_f64();
            let (pj, pg) = (mass(&joint), mass(&given));
            full[th] += w * pj.ln();
            conditional[th] += w * (pj / pg).ln();
        }
    }
    let first = |ll: &[f64]| {
        let mut best = 0;
        for k in 1..ll.len() {
            if ll[k] > ll[best] + 1e-12 {
                best = k;
            }
        }
        model.theta(best)[0].as_f64()
    };
    let covariate_free = (0..model.n_theta()).all(|a| {
        (0..model.n_theta())
            .filter(|&b| model.theta(a)[0] == model.theta(b)[0])
            .all(|b| (conditional[a] - conditional[b]).abs() <= 1e-9 * conditional[a].abs().max(1.0))
    });
    CovariateArgmax { conditional: first(&conditional), full: first(&full), covariate_free }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_parameter_is_rejected() {
        let s = find("m1_ignorable").unwrap();
        assert!(matches!(s.build::<f64>(&Params::new().with("d", "1")), Err(ScenarioError::Param { .. })));
        assert!(matches!(find("nope"), Err(ScenarioError::Unknown(_))));
    }

    #[test]
    fn bad_parameter_values_are_rejected() {
        let t2 = find("type2").unwrap();
        assert!(t2.build::<f64>(&Params::new().with("d", "3")).is_err());
        assert!(t2.build::<f64>(&Params::new().with("d", "x")).is_err());
        let iv = find("interval_censor_fixed_visits").unwrap();
        assert!(iv.build::<f64>(&Params::new().with("visits", "2,9")).is_err());
        let built = iv.build::<f64>(&Params::new().with("visits", "3, 1,3")).unwrap();
        assert_eq!(built.visits, Some(vec![1, 3]));
    }
}
