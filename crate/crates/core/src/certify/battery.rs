//! Implication arrows between certificates, checked on one model or on a
//! stream of random small models.
//!
//! Random models are tabular [`ModelSpec`]s, so a violating model can be
//! written out verbatim and rebuilt. Generation uses `ChaCha8Rng` seeded with
//! `seed_from_u64(seed)`, one stream per model index (`set_stream(index)`).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{certify_all, Certificate, Condition, Result, Tolerances, Verdict};
use crate::gcmp::file::{CoordinateSpec, FileError, MechanismRow, MechanismSpec, ModelSpec, ProcessRow, ProcessSpec};
use crate::gcmp::{CountingKind, DependenceClass, JointModel, ModelError};
use crate::pathspace::{ParamPair, SpaceError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrowCheck {
    pub arrow: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<String>,
    pub antecedent: Verdict,
    pub consequent: Verdict,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub model: String,
    pub certificates: Vec<Certificate>,
    pub arrows: Vec<ArrowCheck>,
    pub violations: usize,
}

/// Optional interference with certificates before the arrows are read,
/// used to prove that the battery notices a broken certifier.
pub type Tamper = dyn Fn(&mut Certificate) + Sync;

pub fn theorem_battery<S: Scalar>(model: &JointModel<S>, tols: Tolerances) -> Result<BatteryReport> {
    theorem_battery_with(model, tols, None)
}

pub fn theorem_battery_with<S: Scalar>(model: &JointModel<S>, tols: Tolerances, tamper: Option<&Tamper>) -> Result<BatteryReport> {
    let mut certs = certify_all(model, tols)?;
    if let Some(f) = tamper {
        certs.iter_mut().for_each(f);
    }
    let arrows = arrows_of(&certs);
    let violations = arrows.iter().filter(|a| a.violated).count();
    Ok(BatteryReport { model: model.name.clone(), certificates: certs, arrows, violations })
}

fn find<'a>(certs: &'a [Certificate], kind: &Condition) -> Option<&'a Certificate> {
    certs.iter().find(|c| &c.kind == kind)
}

fn implies(name: &str, r: Option<String>, a: &Certificate, b: &Certificate) -> ArrowCheck {
    ArrowCheck {
        arrow: name.to_string(),
        r,
        antecedent: a.verdict,
        consequent: b.verdict,
        violated: a.holds() && !b.holds(),
    }
}

fn equivalent(name: &str, a: &Certificate, b: &Certificate) -> ArrowCheck {
    ArrowCheck {
        arrow: name.to_string(),
        r: None,
        antecedent: a.verdict,
        consequent: b.verdict,
        violated: a.holds() != b.holds(),
    }
}

/// Reads every arrow off a certificate set produced by [`certify_all`].
pub fn arrows_of(certs: &[Certificate]) -> Vec<ArrowCheck> {
    let get = |k: Condition| find(certs, &k).expect("certify_all emits every global condition");
    let (gcmp, rel, abs, dyn_, pred, fact, indep) = (
        get(Condition::CarGcmp),
        get(Condition::CarRel),
        get(Condition::CarAbs),
        get(Condition::CarDyn),
        get(Condition::Predictable),
        get(Condition::Factorization),
        get(Condition::IndependentCensoring),
    );
    let mut out = vec![
        equivalent("CAR(GCMP) <=> CAR(REL)", gcmp, rel),
        implies("CAR(DYN) => CAR(GCMP)", None, dyn_, gcmp),
        implies("predictable => CAR(DYN)", None, pred, dyn_),
    ];
    if fact.verdict != Verdict::PreconditionFailed {
        out.push(implies("CAR(GCMP) => factorization", None, gcmp, fact));
    }
    if indep.verdict != Verdict::NotApplicable {
        out.push(equivalent("CAR(DYN) <=> independent-censoring", dyn_, indep));
    }
    for loc in certs.iter().filter(|c| matches!(c.kind, Condition::CarLoc(_))) {
        let Condition::CarLoc(r) = &loc.kind else { unreachable!() };
        out.push(implies("CAR(DYN) => CAR(GCMP)-loc", loc.r.clone(), dyn_, loc));
        out.push(implies("CAR(ABS) => CAR(GCMP)-loc", loc.r.clone(), abs, loc));
        if let Some(ign) = find(certs, &Condition::Ignorable(r.clone())) {
            out.push(implies("CAR(GCMP)-loc => ignorable", loc.r.clone(), loc, ign));
        }
    }
    out
}

/// How a random mechanism may look at X when drawing `R_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomDependence {
    XIndependent,
    ObservedPast,
    PastX,
    CurrentX,
    FullX,
}

const DEPENDENCES: [RandomDependence; 5] = [
    RandomDependence::XIndependent,
    RandomDependence::ObservedPast,
    RandomDependence::PastX,
    RandomDependence::CurrentX,
    RandomDependence::FullX,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomModelConfig {
    pub max_horizon: usize,
    /// Chance that a mechanism row is deterministic (same 0/1 for every ψ).
    pub deterministic_rate: f64,
}

impl Default for RandomModelConfig {
    fn default() -> Self {
        Self { max_horizon: 3, deterministic_rate: 0.25 }
    }
}

fn decimal(k: u32) -> String {
    format!("0.{k}")
}

fn bits(b: u8) -> String {
    if b == 1 { "1" } else { "0" }.to_string()
}

fn binary_histories(len: usize) -> Vec<Vec<u8>> {
    (0..1usize << len).map(|v| (0..len).map(|t| (v >> (len - 1 - t) & 1) as u8).collect()).collect()
}

/// Random binary-X, univariate-R tabular model number `index` of the stream
/// seeded by `seed`.
pub fn random_model_spec(seed: u64, index: u64, config: RandomModelConfig) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let horizon = rng.gen_range(1..=config.max_horizon.max(1));
    let n_psi = rng.gen_range(1..=2usize);
    let dependence = DEPENDENCES[rng.gen_range(0..DEPENDENCES.len())];
    let first_forced = rng.gen_bool(0.5);
    let counting = if rng.gen_bool(0.5) { CountingKind::Window } else { CountingKind::Visit };

    let mut process_rows = Vec::new();
    for t in 1..=horizon {
        for h in binary_histories(t - 1) {
            let probs = (0..2)
                .map(|_| {
                    let k = rng.gen_range(1..=9u32);
                    vec![decimal(10 - k), decimal(k)]
                })
                .collect();
            process_rows.push(ProcessRow { t: Some(t), history: Some(h.iter().map(|&b| bits(b)).collect()), probs });
        }
    }

    let mut mechanism_rows = Vec::new();
    let mut table: std::collections::HashMap<Vec<u8>, Vec<Vec<String>>> = std::collections::HashMap::new();
    for t in 1..=horizon {
        for x in binary_histories(horizon) {
            for rh in binary_histories(t - 1) {
                let mut key = vec![t as u8];
                key.extend(&rh);
                match dependence {
                    RandomDependence::XIndependent => {}
                    RandomDependence::ObservedPast => key.extend(x[..t - 1].iter().zip(&rh).map(|(&v, &b)| if b == 1 { v } else { 2 })),
                    RandomDependence::PastX => key.extend(&x[..t - 1]),
                    RandomDependence::CurrentX => key.extend(&x[..t]),
                    RandomDependence::FullX => key.extend(&x),
                }
                let probs = if t == 1 && first_forced {
                    vec![vec!["0".to_string(), "1".to_string()]]
                } else {
                    table
                        .entry(key)
                        .or_insert_with(|| {
                            if rng.gen_bool(config.deterministic_rate) {
                                let one = rng.gen_bool(0.5);
                                vec![vec![bits(u8::from(!one)), bits(u8::from(one))]]
                            } else {
                                (0..n_psi)
                                    .map(|_| {
                                        let k = rng.gen_range(1..=9u32);
                                        vec![decimal(10 - k), decimal(k)]
                                    })
                                    .collect()
                            }
                        })
                        .clone()
                };
                mechanism_rows.push(MechanismRow {
                    t: Some(t),
                    x: Some(x.iter().map(|&b| bits(b)).collect()),
                    r_history: Some(rh.iter().map(|&b| bits(b)).collect()),
                    probs,
                });
            }
        }
    }

    let declared = match dependence {
        RandomDependence::XIndependent | RandomDependence::ObservedPast => DependenceClass::PastObservedOnly,
        RandomDependence::PastX => DependenceClass::PastXOnly,
        RandomDependence::CurrentX | RandomDependence::FullX => DependenceClass::Anticipating,
    };
    ModelSpec {
        name: format!("random-{seed}-{index}-{dependence:?}").to_lowercase(),
        horizon,
        r_dim: 1,
        counting,
        dependence: declared,
        reference: ParamPair::new(rng.gen_range(0..2), rng.gen_range(0..n_psi)),
        marks: Vec::new(),
        coordinates: vec![CoordinateSpec { name: "x".into(), symbols: vec!["0".into(), "1".into()], r_component: 0, counting: false }],
        process: ProcessSpec {
            theta: vec![vec!["1".into()], vec!["2".into()]],
            absorbing: None,
            builder: None,
            rows: process_rows,
        },
        mechanism: MechanismSpec {
            psi: (1..=n_psi).map(|k| vec![k.to_string()]).collect(),
            builder: None,
            rows: mechanism_rows,
        },
        vertical: None,
    }
}

/// Shorter-horizon version of a tabular spec: later steps are dropped and
/// X patterns truncated (the first matching row still wins).
pub fn truncate_spec(spec: &ModelSpec, horizon: usize) -> ModelSpec {
    let mut s = spec.clone();
    s.horizon = horizon;
    s.process.rows.retain(|r| r.t.is_none_or(|t| t <= horizon));
    s.mechanism.rows.retain(|r| r.t.is_none_or(|t| t <= horizon));
    for row in &mut s.mechanism.rows {
        if let Some(x) = &mut row.x {
            x.truncate(horizon);
        }
    }
    s.name = format!("{}-h{horizon}", spec.name);
    s
}

/// Drops one ψ value (and its column of mechanism probabilities).
pub fn drop_psi(spec: &ModelSpec, k: usize) -> Option<ModelSpec> {
    if spec.mechanism.psi.len() < 2 || k >= spec.mechanism.psi.len() {
        return None;
    }
    let mut s = spec.clone();
    s.mechanism.psi.remove(k);
    for row in &mut s.mechanism.rows {
        if row.probs.len() > 1 {
            row.probs.remove(k);
        }
    }
    if s.reference.psi >= k && s.reference.psi > 0 {
        s.reference.psi -= 1;
    }
    Some(s)
}

/// Greedy shrinking: keep any smaller spec on which `fails` still holds.
pub fn shrink(spec: &ModelSpec, fails: impl Fn(&ModelSpec) -> bool) -> ModelSpec {
    let mut best = spec.clone();
    loop {
        let mut candidates: Vec<ModelSpec> = Vec::new();
        if best.horizon > 1 {
            candidates.push(truncate_spec(&best, best.horizon - 1));
        }
        candidates.extend((0..best.mechanism.psi.len()).filter_map(|k| drop_psi(&best, k)));
        match candidates.into_iter().find(|c| fails(c)) {
            Some(smaller) => best = smaller,
            None => return best,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub index: u64,
    pub arrows: Vec<ArrowCheck>,
    pub model: String,
    pub shrunk: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatterySummary {
    pub requested: usize,
    pub checked: usize,
    pub skipped_cap: usize,
    pub arrows_checked: usize,
    pub violations: Vec<Counterexample>,
}

fn violated_arrows<S: Scalar>(spec: &ModelSpec, cap: u64, tols: Tolerances, tamper: Option<&Tamper>) -> std::result::Result<Vec<ArrowCheck>, FileError> {
    let model = spec.build::<S>(cap)?.model;
    let report = theorem_battery_with(&model, tols, tamper).map_err(|e| FileError::Invalid(e.to_string()))?;
    Ok(report.arrows)
}

/// Runs the battery on `n` random models. Models over the cap are counted
/// as skipped; any other build failure is an error.
pub fn run_random_battery<S: Scalar>(
    n: usize,
    seed: u64,
    cap: u64,
    config: RandomModelConfig,
    tols: Tolerances,
    tamper: Option<&Tamper>,
) -> std::result::Result<BatterySummary, FileError> {
    let results: Vec<std::result::Result<Option<(u64, Vec<ArrowCheck>, ModelSpec)>, FileError>> = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let spec = random_model_spec(seed, index, config);
            match violated_arrows::<S>(&spec, cap, tols, tamper) {
                Ok(arrows) => Ok(Some((index, arrows, spec))),
                Err(FileError::Model(ModelError::Space(SpaceError::CapExceeded { .. }))) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut summary = BatterySummary { requested: n, checked: 0, skipped_cap: 0, arrows_checked: 0, violations: Vec::new() };
    for r in results {
        match r? {
            None => summary.skipped_cap += 1,
            Some((index, arrows, spec)) => {
                summary.checked += 1;
                summary.arrows_checked += arrows.len();
                let bad: Vec<ArrowCheck> = arrows.into_iter().filter(|a| a.violated).collect();
                if !bad.is_empty() {
                    let names: Vec<String> = bad.iter().map(|a| a.arrow.clone()).collect();
                    let shrunk = shrink(&spec, |s| {
                        violated_arrows::<S>(s, cap, tols, tamper)
                            .map(|arrows| arrows.iter().any(|a| a.violated && names.contains(&a.arrow)))
                            .unwrap_or(false)
                    });
                    summary.violations.push(Counterexample { index, arrows: bad, model: spec.to_toml(), shrunk: shrunk.to_toml() });
                }
            }
        }
    }
    Ok(summary)
}
