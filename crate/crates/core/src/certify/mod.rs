//! Certificates for coarsening-at-random conditions.
//!
//! Every check returns a [`Certificate`]; a failing certificate carries a
//! [`Witness`] naming the parameter pair, step and paths at which the
//! condition breaks, and [`Certificate::recheck`] re-derives it from the
//! model. "Almost surely" and "up to indistinguishability" become "on every
//! support path".

pub mod battery;
pub mod dynamics;

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::gcmp::{
    apply_vertical, check_support_r, fixed_r_partition, observed_partition, DependenceClass, JointModel, ModelError, Observation,
    VerticalCoarsener,
};
use crate::likelihood::{conditional_lr, lr, LikelihoodError};
use crate::pathspace::{cond_expect, ParamPair, Partition, PathFunction, SpaceError};
use crate::scalar::Scalar;
use crate::tol;

pub use dynamics::{compensator, counting_of_r, counting_of_x, martingale_residual, Compensator, Filtration, FiltrationKind, JumpProcess};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

pub type Result<T, E = CertifyError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Fails,
    PreconditionFailed,
    NotApplicable,
}

impl Verdict {
    pub fn holds(self) -> bool {
        self == Verdict::Holds
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::PreconditionFailed => "precondition-failed",
            Verdict::NotApplicable => "not-applicable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    Dependence,
    CarGcmp,
    CarRel,
    CarAbs,
    CarDyn,
    Predictable,
    Factorization,
    IndependentCensoring,
    CarLoc(Vec<u8>),
    Ignorable(Vec<u8>),
    IgnorableCoarsened(Vec<u8>, VerticalCoarsener),
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Dependence => "dependence-class",
            Condition::CarGcmp => "CAR(GCMP)",
            Condition::CarRel => "CAR(REL)",
            Condition::CarAbs => "CAR(ABS)",
            Condition::CarDyn => "CAR(DYN)",
            Condition::Predictable => "predictable",
            Condition::Factorization => "factorization",
            Condition::IndependentCensoring => "independent-censoring",
            Condition::CarLoc(_) => "CAR(GCMP)-loc",
            Condition::Ignorable(_) => "ignorable",
            Condition::IgnorableCoarsened(..) => "ignorable-coarsened",
        })
    }
}

/// Where a condition breaks: the two values that should agree and the paths
/// (support indices) they were read from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num: Option<ParamPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub den: Option<ParamPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub paths: Vec<usize>,
    pub path_labels: Vec<String>,
    pub values: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    #[serde(skip)]
    pub kind: Condition,
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<String>,
    pub verdict: Verdict,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Certificate {
    fn new<S: Scalar>(model: &JointModel<S>, kind: Condition, tolerance: f64, witness: Option<Witness>) -> Self {
        let r = match &kind {
            Condition::CarLoc(r) | Condition::Ignorable(r) | Condition::IgnorableCoarsened(r, _) => Some(model.describe_r(r)),
            _ => None,
        };
        Self {
            condition: kind.to_string(),
            kind,
            r,
            verdict: if witness.is_some() { Verdict::Fails } else { Verdict::Holds },
            tolerance,
            witness,
            note: None,
        }
    }

    fn with_verdict(mut self, verdict: Verdict, note: impl Into<String>) -> Self {
        self.verdict = verdict;
        self.note = Some(note.into());
        self
    }

    fn noted(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn holds(&self) -> bool {
        self.verdict.holds()
    }

    /// `condition` or `condition[r]`.
    pub fn key(&self) -> String {
        match &self.r {
            Some(r) => format!("{}[{r}]", self.condition),
            None => self.condition.clone(),
        }
    }

    /// Recomputes the certificate from the model and confirms the verdict and
    /// witness, and that a witness's values really differ by more than the
    /// tolerance.
    pub fn recheck<S: Scalar>(&self, model: &JointModel<S>) -> Result<bool> {
        let again = check(model, &self.kind, self.tolerance)?;
        let separated = self.witness.as_ref().is_none_or(|w| {
            w.values.len() < 2 || w.values.windows(2).any(|v| !close_f64(v[0], v[1], self.tolerance))
        });
        Ok(again.verdict == self.verdict && again.witness == self.witness && separated)
    }
}

fn scaled(tol: f64, a: f64, b: f64) -> f64 {
    tol * 1f64.max(a.abs()).max(b.abs())
}

fn close_f64(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= scaled(tol, a, b)
}

/// Equality up to `tol`, relative once magnitudes exceed 1; exact types
/// compare exactly.
pub fn close<S: Scalar>(a: &S, b: &S, tol: f64) -> bool {
    if S::is_exact() {
        return a == b;
    }
    a.close_to(b, scaled(tol, a.as_f64(), b.as_f64()))
}

pub fn path_label<S: Scalar>(model: &JointModel<S>, i: usize) -> String {
    let p = model.space().path(i);
    let xs: Vec<String> = p.x.iter().map(|&s| model.alphabet().state_label(s)).collect();
    format!("x=({}) r=({})", xs.join(" "), model.describe_r(&p.r))
}

fn witness<S: Scalar>(
    model: &JointModel<S>,
    num: Option<ParamPair>,
    den: Option<ParamPair>,
    t: Option<usize>,
    paths: Vec<usize>,
    values: Vec<&S>,
    detail: impl Into<String>,
) -> Witness {
    Witness {
        num,
        den,
        t,
        path_labels: paths.iter().map(|&i| path_label(model, i)).collect(),
        paths,
        values: values.into_iter().map(|v| v.as_f64()).collect(),
        detail: detail.into(),
    }
}

/// First pair of paths in one atom of `part` on which `f` differs.
fn non_constant<S: Scalar>(f: &PathFunction<S>, part: &Partition, tol: f64) -> Option<(usize, usize)> {
    part.atoms().iter().find_map(|atom| {
        let first = atom[0];
        atom[1..].iter().find(|&&i| !close(f.value(first), f.value(i), tol)).map(|&i| (first, i))
    })
}

/// Shared partitions and conditional ratios for a batch of checks.
struct Ctx<'a, S> {
    model: &'a JointModel<S>,
    o: Partition,
    rp: Partition,
    xp: Partition,
    r_given_x: HashMap<(ParamPair, ParamPair), PathFunction<S>>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    fn new(model: &'a JointModel<S>) -> Self {
        Self {
            model,
            o: observed_partition(model),
            rp: model.r_partition(),
            xp: model.x_partition(),
            r_given_x: HashMap::new(),
        }
    }

    fn l_r_given_x(&mut self, num: ParamPair, den: ParamPair) -> Result<&PathFunction<S>> {
        if !self.r_given_x.contains_key(&(num, den)) {
            let f = conditional_lr(self.model, &self.rp, &self.xp, num, den)?;
            self.r_given_x.insert((num, den), f);
        }
        Ok(&self.r_given_x[&(num, den)])
    }

    fn psi_pairs(&self) -> Vec<(ParamPair, ParamPair)> {
        let th = self.model.reference().theta;
        let n = self.model.n_psi();
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (ParamPair::new(th, a), ParamPair::new(th, b))))
            .collect()
    }

    fn all_pairs(&self) -> Vec<(ParamPair, ParamPair)> {
        let pairs = self.model.pairs();
        pairs
            .iter()
            .flat_map(|&a| pairs.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
            .collect()
    }

    fn car_gcmp(&mut self, tol: f64) -> Result<Certificate> {
        for (num, den) in self.psi_pairs() {
            let f = self.l_r_given_x(num, den)?.clone();
            if let Some((a, b)) = non_constant(&f, &self.o, tol) {
                let w = witness(
                    self.model,
                    Some(num),
                    Some(den),
                    None,
                    vec![a, b],
                    vec![f.value(a), f.value(b)],
                    "L_{R|X} differs inside one O-atom",
                );
                return Ok(Certificate::new(self.model, Condition::CarGcmp, tol, Some(w)));
            }
        }
        let cert = Certificate::new(self.model, Condition::CarGcmp, tol, None);
        Ok(if self.model.n_psi() == 1 { cert.noted("single ψ on the grid: L_{R|X} ≡ 1") } else { cert })
    }

    fn car_rel(&self, tol: f64) -> Certificate {
        let model = self.model;
        for (num, den) in self.psi_pairs() {
            for atom in self.o.atoms() {
                let ratio = |i: usize| model.r_prob(num.psi, i).clone() / model.r_prob(den.psi, i).clone();
                let first = ratio(atom[0]);
                if let Some(&j) = atom[1..].iter().find(|&&j| !close(&first, &ratio(j), tol)) {
                    let w = witness(
                        model,
                        Some(num),
                        Some(den),
                        None,
                        vec![atom[0], j],
                        vec![&first, &ratio(j)],
                        "q_ψ(r|x)/q_ψ0(r|x) differs for x, x' with rx = rx'",
                    );
                    return Certificate::new(model, Condition::CarRel, tol, Some(w));
                }
            }
        }
        Certificate::new(model, Condition::CarRel, tol, None)
    }

    fn car_loc(&mut self, r: &[u8], tol: f64) -> Result<Certificate> {
        check_support_r(self.model, r)?;
        let xr = fixed_r_partition(self.model, r)?;
        let on_r = self.model.paths_with_r(r);
        for (num, den) in self.all_pairs() {
            let given_x = self.l_r_given_x(num, den)?.clone();
            let given_xr = conditional_lr(self.model, &self.rp, &xr, num, den)?;
            if let Some(&i) = on_r.iter().find(|&&i| !close(given_x.value(i), given_xr.value(i), tol)) {
                let w = witness(
                    self.model,
                    Some(num),
                    Some(den),
                    None,
                    vec![i],
                    vec![given_x.value(i), given_xr.value(i)],
                    "L_{R|X} and L_{R|X^r} differ on {R=r}",
                );
                return Ok(Certificate::new(self.model, Condition::CarLoc(r.to_vec()), tol, Some(w)));
            }
        }
        Ok(Certificate::new(self.model, Condition::CarLoc(r.to_vec()), tol, None))
    }

    fn ignorable(&self, r: &[u8], tol: f64) -> Result<Certificate> {
        ignorable_under(self.model, &self.o, r, None, tol)
    }

    fn factorization(&mut self, gcmp_holds: bool, tol: f64) -> Result<Certificate> {
        let model = self.model;
        if !gcmp_holds {
            return Ok(Certificate::new(model, Condition::Factorization, tol, None)
                .with_verdict(Verdict::PreconditionFailed, "CAR(GCMP) fails; the identity is not asserted"));
        }
        for (num, den) in self.all_pairs() {
            let l_o = lr(model, &self.o, num, den)?;
            let l_x = lr(model, &self.xp, num, den)?;
            let e_lx = cond_expect(&l_x, &self.o, model.measure(den))?;
            let rhs = self.l_r_given_x(num, den)?.mul(&e_lx)?;
            if let Some(i) = (0..model.space().len()).find(|&i| !close(l_o.value(i), rhs.value(i), tol)) {
                let w = witness(model, Some(num), Some(den), None, vec![i], vec![l_o.value(i), rhs.value(i)], "L_O ≠ L_{R|X}·E[L_X|O]");
                return Ok(Certificate::new(model, Condition::Factorization, tol, Some(w)));
            }
            for psi0 in (0..model.n_psi()).filter(|&p| p != den.psi) {
                let other = cond_expect(&l_x, &self.o, model.measure(ParamPair::new(den.theta, psi0)))?;
                if let Some(i) = (0..model.space().len()).find(|&i| !close(e_lx.value(i), other.value(i), tol)) {
                    let w = witness(
                        model,
                        Some(num),
                        Some(ParamPair::new(den.theta, psi0)),
                        None,
                        vec![i],
                        vec![e_lx.value(i), other.value(i)],
                        format!("E[L_X|O] changes when ψ0 moves from #{} to #{psi0}", den.psi),
                    );
                    return Ok(Certificate::new(model, Condition::Factorization, tol, Some(w)));
                }
            }
        }
        Ok(Certificate::new(model, Condition::Factorization, tol, None))
    }
}

/// Compares the observed likelihood ratio with the one that ignores the
/// mechanism on `{R = r}`, optionally after a vertical coarsening of the
/// observed values.
fn ignorable_under<S: Scalar>(
    model: &JointModel<S>,
    observed: &Partition,
    r: &[u8],
    v: Option<&VerticalCoarsener>,
    tol: f64,
) -> Result<Certificate> {
    check_support_r(model, r)?;
    let kind = match v {
        Some(v) => Condition::IgnorableCoarsened(r.to_vec(), v.clone()),
        None => Condition::Ignorable(r.to_vec()),
    };
    let alphabet = model.alphabet();
    let seen_under = |x: &[u16], r: &[u8]| {
        let mut obs = Observation::under(alphabet, x, r).x_obs;
        if let Some(v) = v {
            v.apply(&mut obs);
        }
        obs
    };
    let on_r = model.paths_with_r(r);
    let matching: Vec<Vec<usize>> = on_r
        .iter()
        .map(|&i| {
            let seen = seen_under(&model.space().path(i).x, r);
            (0..model.x_paths().len()).filter(|&k| seen_under(&model.x_paths()[k], r) == seen).collect()
        })
        .collect();
    for th in 0..model.n_theta() {
        for th0 in (0..model.n_theta()).filter(|&k| k != th) {
            for psi0 in 0..model.n_psi() {
                let (num, den) = (ParamPair::new(th, psi0), ParamPair::new(th0, psi0));
                let ratio = lr(model, observed, num, den)?;
                for (&i, xs) in on_r.iter().zip(&matching) {
                    let mass = |t: usize| S::sum_all(xs.iter().map(|&k| model.x_prob_by_id(t, k).clone()));
                    let ignoring = mass(th) / mass(th0);
                    if !close(ratio.value(i), &ignoring, tol) {
                        let w = witness(
                            model,
                            Some(num),
                            Some(den),
                            None,
                            vec![i],
                            vec![ratio.value(i), &ignoring],
                            "observed likelihood ratio differs from the one ignoring the mechanism",
                        );
                        return Ok(Certificate::new(model, kind, tol, Some(w)));
                    }
                }
            }
        }
    }
    Ok(Certificate::new(model, kind, tol, None))
}

/// Ignorability on `{R = r}` when observed values pass through `v`.
pub fn check_ignorable_coarsened<S: Scalar>(
    model: &JointModel<S>,
    r: &[u8],
    v: &VerticalCoarsener,
    tol: f64,
) -> Result<Certificate> {
    let observed = apply_vertical(model, v)?;
    ignorable_under(model, &observed, r, Some(v), tol)
}

fn compare_compensators<S: Scalar>(
    model: &JointModel<S>,
    kind: Condition,
    n: &JumpProcess,
    a: &Filtration,
    b: &Filtration,
    tol: f64,
) -> Certificate {
    for pair in model.pairs() {
        let ca = compensator(model, n, a, pair);
        let cb = compensator(model, n, b, pair);
        for t in 1..=n.horizon() {
            for m in 0..n.n_marks {
                let (fa, fb) = (&ca.increments[t - 1][m], &cb.increments[t - 1][m]);
                if let Some(i) = (0..model.space().len()).find(|&i| !close(fa.value(i), fb.value(i), tol)) {
                    let w = witness(
                        model,
                        Some(pair),
                        None,
                        Some(t),
                        vec![i],
                        vec![fa.value(i), fb.value(i)],
                        format!("{} compensator of mark {} differs between {} and {}", n.label, n.mark_label(m), a.label, b.label),
                    );
                    return Certificate::new(model, kind, tol, Some(w));
                }
            }
        }
    }
    Certificate::new(model, kind, tol, None)
}

/// CAR(DYN): the compensator of the R-counting process is the same in the
/// observed filtration and in the one that also knows all of X.
pub fn check_car_dyn<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    let n = counting_of_r(model);
    let o = Filtration::build(model, FiltrationKind::Observed);
    let fs = Filtration::build(model, FiltrationKind::FullX);
    compare_compensators(model, Condition::CarDyn, &n, &o, &fs, tol)
}

/// R is O-predictable iff every O-compensator increment is 0 or 1.
pub fn check_predictable<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    let n = counting_of_r(model);
    let o = Filtration::build(model, FiltrationKind::Observed);
    for pair in model.pairs() {
        let c = compensator(model, &n, &o, pair);
        for (t, marks) in c.increments.iter().enumerate() {
            for f in marks {
                if let Some(i) = (0..model.space().len()).find(|&i| {
                    let v = f.value(i);
                    !close(v, &S::zero(), tol) && !close(v, &S::one(), tol)
                }) {
                    let w = witness(model, Some(pair), None, Some(t + 1), vec![i], vec![f.value(i)], "compensator increment strictly between 0 and 1");
                    return Certificate::new(model, Condition::Predictable, tol, Some(w));
                }
            }
        }
    }
    Certificate::new(model, Condition::Predictable, tol, None)
}

/// Applicable to right-censored counting processes: every X-coordinate is a
/// declared counting coordinate and R is window-type, univariate and
/// nonincreasing on the support.
pub fn independent_censoring_applicable<S: Scalar>(model: &JointModel<S>) -> bool {
    model.r_dim() == 1
        && model.mechanism().counting == crate::gcmp::CountingKind::Window
        && model.process().counting_coords.len() == model.alphabet().coords().len()
        && counting_of_x(model).is_some()
        && model.space().paths().iter().all(|p| p.r.windows(2).all(|w| w[0] >= w[1]))
}

/// Independent censoring: the compensator of X is unchanged when the
/// filtration also carries the censoring status. In discrete time the
/// censoring status at step t is settled before X moves at t.
pub fn check_independent_censoring<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    if !independent_censoring_applicable(model) {
        return Certificate::new(model, Condition::IndependentCensoring, tol, None)
            .with_verdict(Verdict::NotApplicable, "not applicable: X is not a counting process under univariate right censoring");
    }
    let x = counting_of_x(model).expect("applicability checked");
    let f = Filtration::build(model, FiltrationKind::CensoringFirst);
    let xs = Filtration::build(model, FiltrationKind::XOnly);
    compare_compensators(model, Condition::IndependentCensoring, &x, &f, &xs, tol)
}

/// CAR(ABS) read off the kernel: for every ψ and all support X-paths x, x'
/// and R-paths r with rx = rx', `q_ψ(r|x) = q_ψ(r|x')`.
pub fn check_car_abs<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    let alphabet = model.alphabet();
    let rs = model.support_r_paths();
    for psi in 0..model.n_psi() {
        for r in &rs {
            let mut seen: HashMap<Vec<Vec<Option<u16>>>, (usize, S)> = HashMap::new();
            for (k, x) in model.x_paths().iter().enumerate() {
                let q = kernel_prob(model, psi, x, r);
                let key = Observation::under(alphabet, x, r).x_obs;
                match seen.get(&key) {
                    Some((k0, q0)) if !close(q0, &q, tol) => {
                        let other = &model.x_paths()[*k0];
                        let paths: Vec<usize> = [other, x]
                            .iter()
                            .filter_map(|xx| model.space().index_of(&crate::pathspace::Path { x: (*xx).clone(), r: r.clone() }))
                            .collect();
                        let label = |xx: &[u16]| xx.iter().map(|&s| alphabet.state_label(s)).collect::<Vec<_>>().join(" ");
                        let w = Witness {
                            num: Some(ParamPair::new(model.reference().theta, psi)),
                            den: None,
                            t: None,
                            path_labels: vec![
                                format!("x=({}) r=({})", label(other), model.describe_r(r)),
                                format!("x=({}) r=({})", label(x), model.describe_r(r)),
                            ],
                            paths,
                            values: vec![q0.as_f64(), q.as_f64()],
                            detail: "q_ψ(r|x) ≠ q_ψ(r|x') although rx = rx'".into(),
                        };
                        return Certificate::new(model, Condition::CarAbs, tol, Some(w));
                    }
                    Some(_) => {}
                    None => {
                        seen.insert(key, (k, q));
                    }
                }
            }
        }
    }
    Certificate::new(model, Condition::CarAbs, tol, None).noted("quantified over every pair of support x-paths")
}

/// `q_ψ(r | x)`, stopping at the first zero factor so unreachable histories
/// are never evaluated.
fn kernel_prob<S: Scalar>(model: &JointModel<S>, psi: usize, x: &[u16], r: &[u8]) -> S {
    let mech = model.mechanism();
    let mut acc = S::one();
    for t in 0..r.len() {
        let row = mech.row(model.psi(psi), x, &r[..t]);
        let f = row.get(r[t] as usize).cloned().unwrap_or_else(S::zero);
        if f.is_zero() {
            return S::zero();
        }
        acc = acc * f;
    }
    acc
}

/// Verifies the mechanism's declared dependence class against its kernel on
/// every support history: past-observed-only rows may vary only with
/// (r_{<t}, revealed x_{<t}); past-x-only rows only with (r_{<t}, x_{<t}).
pub fn verify_dependence_class<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    let declared = model.mechanism().dependence_class;
    let alphabet = model.alphabet();
    let cert = |w| {
        Certificate::new(model, Condition::Dependence, tol, w).noted(format!(
            "declared {}",
            serde_json::to_value(declared).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        ))
    };
    if declared == DependenceClass::Anticipating {
        return cert(None);
    }
    for psi in 0..model.n_psi() {
        for t in 0..model.horizon() {
            let mut seen: HashMap<(Vec<u8>, Vec<Vec<Option<u16>>>), (usize, Vec<S>)> = HashMap::new();
            for (i, p) in model.space().paths().iter().enumerate() {
                let rh = &p.r[..t];
                let info = match declared {
                    DependenceClass::PastObservedOnly => Observation::under(alphabet, &p.x[..t], rh).x_obs,
                    _ => p.x[..t].iter().map(|&s| vec![Some(s)]).collect(),
                };
                let row = model.mechanism().row(model.psi(psi), &p.x, rh);
                match seen.get(&(rh.to_vec(), info.clone())) {
                    Some((j, row0)) => {
                        if let Some(k) = (0..row.len()).find(|&k| !close(&row[k], &row0[k], tol)) {
                            let w = witness(
                                model,
                                Some(ParamPair::new(model.reference().theta, psi)),
                                None,
                                Some(t + 1),
                                vec![*j, i],
                                vec![&row0[k], &row[k]],
                                format!("kernel row for step {} varies with information outside the declared class", t + 1),
                            );
                            return cert(Some(w));
                        }
                    }
                    None => {
                        seen.insert((rh.to_vec(), info), (i, row));
                    }
                }
            }
        }
    }
    cert(None)
}

pub fn check_car_gcmp<S: Scalar>(model: &JointModel<S>, tol: f64) -> Result<Certificate> {
    Ctx::new(model).car_gcmp(tol)
}

pub fn check_car_rel<S: Scalar>(model: &JointModel<S>, tol: f64) -> Certificate {
    Ctx::new(model).car_rel(tol)
}

pub fn check_car_loc<S: Scalar>(model: &JointModel<S>, r: &[u8], tol: f64) -> Result<Certificate> {
    Ctx::new(model).car_loc(r, tol)
}

pub fn check_ignorable<S: Scalar>(model: &JointModel<S>, r: &[u8], tol: f64) -> Result<Certificate> {
    Ctx::new(model).ignorable(r, tol)
}

/// Checks the factorization identity; records "precondition-failed" when
/// CAR(GCMP) does not hold.
pub fn check_factorization<S: Scalar>(model: &JointModel<S>, tol: f64) -> Result<Certificate> {
    let mut ctx = Ctx::new(model);
    let gcmp = ctx.car_gcmp(tol::DERIVED)?.holds();
    ctx.factorization(gcmp, tol)
}

/// Runs one condition.
pub fn check<S: Scalar>(model: &JointModel<S>, condition: &Condition, tol: f64) -> Result<Certificate> {
    Ok(match condition {
        Condition::Dependence => verify_dependence_class(model, tol),
        Condition::CarGcmp => check_car_gcmp(model, tol)?,
        Condition::CarRel => check_car_rel(model, tol),
        Condition::CarAbs => check_car_abs(model, tol),
        Condition::CarDyn => check_car_dyn(model, tol),
        Condition::Predictable => check_predictable(model, tol),
        Condition::Factorization => check_factorization(model, tol)?,
        Condition::IndependentCensoring => check_independent_censoring(model, tol),
        Condition::CarLoc(r) => check_car_loc(model, r, tol)?,
        Condition::Ignorable(r) => check_ignorable(model, r, tol)?,
        Condition::IgnorableCoarsened(r, v) => check_ignorable_coarsened(model, r, v, tol)?,
    })
}

/// Tolerances for a certification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Verdict comparisons (compensators, conditional ratios).
    pub derived: f64,
    /// Identities that hold by direct summation (factorization).
    pub direct: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { derived: tol::DERIVED, direct: tol::DIRECT }
    }
}

/// Every certificate for a model: global conditions first, then loc and
/// ignorability for each support R-path.
pub fn certify_all<S: Scalar>(model: &JointModel<S>, tols: Tolerances) -> Result<Vec<Certificate>> {
    let mut ctx = Ctx::new(model);
    let gcmp = ctx.car_gcmp(tols.derived)?;
    let gcmp_holds = gcmp.holds();
    let mut out = vec![
        verify_dependence_class(model, tols.derived),
        gcmp,
        ctx.car_rel(tols.derived),
        check_car_abs(model, tols.derived),
        check_car_dyn(model, tols.derived),
        check_predictable(model, tols.derived),
        ctx.factorization(gcmp_holds, tols.direct)?,
        check_independent_censoring(model, tols.derived),
    ];
    for r in model.support_r_paths() {
        out.push(ctx.car_loc(&r, tols.derived)?);
    }
    for r in model.support_r_paths() {
        out.push(ctx.ignorable(&r, tols.derived)?);
    }
    Ok(out)
}
