//! Kernel constructions behind each catalog entry.

use crate::gcmp::builders::{anticipating_bernoulli, iid_bernoulli, lagged_bernoulli, right_censor_hazard, survival_hazard};
use crate::gcmp::{
    enforce_absorbing_convention, CountingKind, DependenceClass, JointModel, MechanismKernel, ProcessModel, VerticalCoarsener,
};
use crate::pathspace::{Coordinate, ParamPair, TimeGrid, XAlphabet};
use crate::scalar::Scalar;

use super::{Built, Params, ScenarioError};

type Result<T> = std::result::Result<T, ScenarioError>;

fn fr<S: Scalar>(n: i64, d: i64) -> S {
    S::from_ratio(n, d)
}

fn grid(horizon: usize) -> Result<TimeGrid> {
    Ok(TimeGrid::new(horizon, "steps").map_err(crate::gcmp::ModelError::from)?)
}

fn binary() -> XAlphabet {
    XAlphabet::single("x", ["0", "1"])
}

fn scalars<S: Scalar>(grid: &[&[(i64, i64)]]) -> Vec<Vec<S>> {
    grid.iter().map(|row| row.iter().map(|&(n, d)| fr(n, d)).collect()).collect()
}

/// Row over a single R-component with `P(R_t = 1) = p`.
fn observe<S: Scalar>(p: S) -> Vec<S> {
    vec![S::one() - p.clone(), p]
}

/// Row putting all mass on one R-pattern.
fn pattern<S: Scalar>(bits: usize, width: usize) -> Vec<S> {
    let mut row = vec![S::zero(); width];
    row[bits] = S::one();
    row
}

fn build<S: Scalar>(
    p: ProcessModel<S>,
    q: MechanismKernel<S>,
    reference: ParamPair,
    params: &Params,
) -> Result<JointModel<S>> {
    Ok(JointModel::build(p, q, reference, params.cap())?)
}

fn plain<S: Scalar>(model: JointModel<S>) -> Built<S> {
    Built { model, vertical: None, visits: None }
}

// ---- binary two-step models ----

fn m1_process<S: Scalar>() -> Result<ProcessModel<S>> {
    Ok(iid_bernoulli(binary(), grid(2)?, scalars(&[&[(3, 10)], &[(1, 2)]])))
}

pub fn m1_ignorable<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = lagged_bernoulli(scalars(&[&[(1, 2), (1, 2)], &[(7, 10), (2, 5)]]));
    Ok(plain(build(m1_process()?, q, ParamPair::new(1, 0), params)?))
}

pub fn m1_anticipating<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = anticipating_bernoulli(scalars(&[&[(9, 10), (1, 2)], &[(7, 10), (1, 2)]]));
    Ok(plain(build(m1_process()?, q, ParamPair::new(1, 0), params)?))
}

// ---- right censoring of a survival indicator ----

fn survival<S: Scalar>(horizon: usize, thetas: &[(i64, i64)]) -> Result<ProcessModel<S>> {
    let grid_rows: Vec<&[(i64, i64)]> = thetas.iter().map(std::slice::from_ref).collect();
    Ok(survival_hazard(binary(), grid(horizon)?, scalars(&grid_rows)))
}

pub fn right_censor_independent<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = right_censor_hazard(scalars(&[&[(1, 4), (1, 3), (1, 2), (1, 1)], &[(1, 2), (1, 2), (1, 2), (1, 1)]]));
    let m = build(survival(4, &[(3, 10), (1, 2)])?, q, ParamPair::new(1, 0), params)?;
    Ok(plain(enforce_absorbing_convention(&m)?))
}

/// While uncensored, the censoring probability at step t is `ψ[0]` when the
/// step-`look` value of X is 1 and `ψ[1]` otherwise.
fn censor_on_x<S: Scalar>(look: impl Fn(&[u16], usize) -> bool + Send + Sync + 'static) -> MechanismKernel<S> {
    MechanismKernel::new(
        1,
        scalars(&[&[(3, 5), (1, 5)], &[(2, 5), (1, 5)]]),
        DependenceClass::Anticipating,
        CountingKind::Window,
        move |psi: &[S], x: &[u16], rh: &[u8]| {
            if rh.last() == Some(&0) {
                return pattern(0, 2);
            }
            let c = psi[if look(x, rh.len()) { 0 } else { 1 }].clone();
            vec![c.clone(), S::one() - c]
        },
    )
}

pub fn right_censor_informative<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = censor_on_x(|x, t| x[t] == 1 && (t == 0 || x[t - 1] == 0));
    let m = build(survival(4, &[(3, 10), (1, 2)])?, q, ParamPair::new(1, 0), params)?;
    Ok(plain(enforce_absorbing_convention(&m)?))
}

pub fn right_censor_future<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = censor_on_x(|x, t| x[(t + 1).min(x.len() - 1)] == 1);
    let m = build(survival(4, &[(3, 10), (1, 2)])?, q, ParamPair::new(1, 0), params)?;
    Ok(plain(enforce_absorbing_convention(&m)?))
}

pub fn right_censor_fixed<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let horizon = 4;
    let c = params.usize("c", 3)?;
    if c == 0 || c > horizon + 1 {
        return Err(ScenarioError::Param { name: "c".into(), message: format!("must lie in 1..={}", horizon + 1) });
    }
    let q = MechanismKernel::new(1, vec![vec![]], DependenceClass::PastObservedOnly, CountingKind::Window, move |_, _, rh| {
        pattern(usize::from(rh.len() + 1 < c), 2)
    });
    Ok(plain(build(survival(horizon, &[(3, 10), (1, 2)])?, q, ParamPair::new(1, 0), params)?))
}

/// W is an event indicator whose hazard doubles while the external covariate
/// Z is 1; Z is always observed and drives censoring through its last value.
pub fn right_censor_covariates<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let alphabet = XAlphabet::new(vec![
        Coordinate::new("w", ["0", "1"]).revealed_by(0),
        Coordinate::new("z", ["0", "1"]).revealed_by(1),
    ])?;
    let thetas: Vec<Vec<S>> = [(1, 10), (1, 5), (3, 10)]
        .iter()
        .flat_map(|&(a, b)| [(3, 10), (3, 5)].map(|(c, d)| vec![fr(a, b), fr(c, d)]))
        .collect();
    let ab = alphabet.clone();
    let p = ProcessModel::new(alphabet.clone(), grid(3)?, thetas, move |th: &[S], h: &[u16]| {
        let w_prev = h.last().map_or(0, |&s| ab.symbol(s, 0));
        (0..ab.size() as u16)
            .map(|s| {
                let (w, z) = (ab.symbol(s, 0), ab.symbol(s, 1));
                let pz = if z == 1 { th[1].clone() } else { S::one() - th[1].clone() };
                let hazard = th[0].clone() * fr(1 + z as i64, 1);
                let pw = match (w_prev, w) {
                    (1, 1) => S::one(),
                    (1, _) => S::zero(),
                    (_, 1) => hazard,
                    _ => S::one() - hazard,
                };
                pz * pw
            })
            .collect()
    })
    .with_counting(vec![0]);
    let ab = alphabet;
    let q = MechanismKernel::new(
        2,
        scalars(&[&[(1, 5), (2, 5)], &[(3, 10), (1, 10)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Window,
        move |psi: &[S], x: &[u16], rh: &[u8]| {
            let t = rh.len();
            if t == 0 {
                return pattern(0b11, 4);
            }
            if rh[t - 1] & 1 == 0 {
                return pattern(0b10, 4);
            }
            let c = psi[ab.symbol(x[t - 1], 1) as usize].clone();
            let mut row = vec![S::zero(); 4];
            row[0b10] = c.clone();
            row[0b11] = S::one() - c;
            row
        },
    );
    Ok(plain(build(p, q, ParamPair::new(2, 0), params)?))
}

// ---- left and interval censoring ----

/// Observation starts at a random entry step drawn independently of X and
/// continues to the horizon; before entry nothing is seen.
pub fn left_censor<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(1, 2), (1, 2), (1, 1)], &[(1, 3), (2, 3), (1, 1)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Window,
        |psi: &[S], _: &[u16], rh: &[u8]| {
            if rh.contains(&1) {
                pattern(1, 2)
            } else {
                observe(psi[rh.len()].clone())
            }
        },
    );
    Ok(plain(build(survival(3, &[(1, 5), (2, 5)])?, q, ParamPair::new(0, 0), params)?))
}

pub fn interval_censor_fixed_visits<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let horizon = 4;
    let visits = params.steps("visits", &[2, 4], horizon)?;
    let v = visits.clone();
    let q = MechanismKernel::new(1, vec![vec![]], DependenceClass::PastObservedOnly, CountingKind::Visit, move |_, _, rh| {
        pattern(usize::from(v.contains(&(rh.len() + 1))), 2)
    });
    let model = build(survival(horizon, &[(1, 5), (2, 5)])?, q, ParamPair::new(0, 0), params)?;
    Ok(Built { model, vertical: None, visits: Some(visits) })
}

/// Planned visits at steps 2 and 4; attendance at step 4 depends on X at
/// step 3, which no visit reveals.
pub fn interval_censor_informative<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(3, 10), (4, 5)], &[(1, 2), (4, 5)]]),
        DependenceClass::PastXOnly,
        CountingKind::Visit,
        |psi: &[S], x: &[u16], rh: &[u8]| match rh.len() + 1 {
            2 => observe(fr(4, 5)),
            4 => observe(psi[if x[2] == 1 { 0 } else { 1 }].clone()),
            _ => pattern(0, 2),
        },
    );
    let model = build(survival(4, &[(1, 5), (2, 5)])?, q, ParamPair::new(0, 0), params)?;
    Ok(Built { model, vertical: None, visits: Some(vec![2, 4]) })
}

// ---- monitoring schemes for a binary Markov chain ----

/// Two-state chain started uniformly; θ is the probability of staying put.
fn binary_chain<S: Scalar>(horizon: usize) -> Result<ProcessModel<S>> {
    Ok(ProcessModel::new(binary(), grid(horizon)?, scalars(&[&[(3, 5)], &[(4, 5)]]), |th: &[S], h: &[u16]| match h.last() {
        None => vec![fr(1, 2), fr(1, 2)],
        Some(&0) => vec![th[0].clone(), S::one() - th[0].clone()],
        Some(_) => vec![S::one() - th[0].clone(), th[0].clone()],
    }))
}

/// Windows open and close: an open window closes with a probability set by
/// the last observed value, a closed one reopens with probability 1/2.
pub fn observation_windows<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(3, 10), (3, 5)], &[(1, 2), (1, 2)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Window,
        |psi: &[S], x: &[u16], rh: &[u8]| {
            let t = rh.len();
            if t == 0 {
                return pattern(1, 2);
            }
            if rh[t - 1] == 0 {
                return observe(fr(1, 2));
            }
            let off = psi[if x[t - 1] == 1 { 0 } else { 1 }].clone();
            vec![off.clone(), S::one() - off]
        },
    );
    Ok(plain(build(binary_chain(3)?, q, ParamPair::new(0, 0), params)?))
}

/// Continuous monitoring until a discharge step (chosen from the last
/// observed value), then scheduled visits at even steps.
pub fn mixed_monitoring<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(3, 10), (1, 2)], &[(3, 5), (1, 5)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Visit,
        |psi: &[S], x: &[u16], rh: &[u8]| {
            let t = rh.len();
            if t == 0 {
                return pattern(1, 2);
            }
            if rh.contains(&0) {
                return pattern(usize::from((t + 1) % 2 == 0), 2);
            }
            let leave = psi[if x[t - 1] == 1 { 0 } else { 1 }].clone();
            vec![leave.clone(), S::one() - leave]
        },
    )
    .with_mark_labels(vec!["continuous".into(), "discrete".into()]);
    Ok(plain(build(binary_chain(4)?, q, ParamPair::new(0, 0), params)?))
}

// ---- several subjects observed jointly ----

/// Independent survival indicators, one per subject; `hazard(θ, i)` is the
/// discrete hazard of subject i.
fn subjects<S: Scalar>(
    n: usize,
    components: impl Fn(usize) -> usize,
    horizon: usize,
    thetas: &[(i64, i64)],
    hazard: impl Fn(&[S], usize) -> S + Send + Sync + 'static,
) -> Result<ProcessModel<S>> {
    let alphabet = XAlphabet::new((0..n).map(|i| Coordinate::new(format!("s{}", i + 1), ["0", "1"]).revealed_by(components(i))).collect())?;
    let ab = alphabet.clone();
    let grid_rows: Vec<&[(i64, i64)]> = thetas.iter().map(std::slice::from_ref).collect();
    let all_events = alphabet.encode(&vec![1; n]);
    Ok(ProcessModel::new(alphabet, grid(horizon)?, scalars(&grid_rows), move |th: &[S], h: &[u16]| {
        let prev = h.last().map_or_else(|| vec![0; ab.coords().len()], |&s| ab.decode(s));
        (0..ab.size() as u16)
            .map(|s| {
                let next = ab.decode(s);
                let factors: Vec<S> = (0..next.len())
                    .map(|i| match (prev[i], next[i]) {
                        (1, 1) => S::one(),
                        (1, _) => S::zero(),
                        (_, 1) => hazard(th, i),
                        _ => S::one() - hazard(th, i),
                    })
                    .collect();
                crate::scalar::product(&factors)
            })
            .collect()
    })
    .with_absorbing(all_events)
    .with_counting((0..n).collect()))
}

fn events(alphabet: &XAlphabet, state: u16) -> usize {
    alphabet.decode(state).iter().filter(|&&v| v == 1).count()
}

/// Observation of two subjects stops after the step at which the d-th event
/// is seen.
pub fn type2<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let d = params.usize("d", 1)?;
    if d == 0 || d > 2 {
        return Err(ScenarioError::Param { name: "d".into(), message: "must be 1 or 2".into() });
    }
    let p = subjects(2, |_| 0, 3, &[(1, 5), (2, 5)], |th: &[S], _| th[0].clone())?;
    let ab = p.alphabet.clone();
    let q = MechanismKernel::new(1, vec![vec![]], DependenceClass::PastObservedOnly, CountingKind::Window, move |_, x, rh| {
        let t = rh.len();
        let seen = if t == 0 { 0 } else { events(&ab, x[t - 1]) };
        pattern(usize::from(seen < d), 2)
    });
    Ok(plain(build(p, q, ParamPair::new(0, 0), params)?))
}

/// After the step at which the j-th event is seen, observation stops with
/// probability `ψ[j-1]`.
pub fn randomized_type2<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let p = subjects(2, |_| 0, 3, &[(1, 5), (2, 5)], |th: &[S], _| th[0].clone())?;
    let ab = p.alphabet.clone();
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(0, 1), (1, 2)], &[(0, 1), (1, 4)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Window,
        move |psi: &[S], x: &[u16], rh: &[u8]| {
            let t = rh.len();
            if t == 0 {
                return pattern(1, 2);
            }
            if rh[t - 1] == 0 {
                return pattern(0, 2);
            }
            let now = events(&ab, x[t - 1]);
            let before = if t >= 2 { events(&ab, x[t - 2]) } else { 0 };
            if now > before {
                let stop = psi[now - 1].clone();
                vec![stop.clone(), S::one() - stop]
            } else {
                pattern(1, 2)
            }
        },
    );
    Ok(plain(build(p, q, ParamPair::new(0, 0), params)?))
}

/// Interim maximum-likelihood estimate over a fixed candidate set from the
/// events seen at the interim step; hazards are `θ(1 + z_i)`.
fn interim_theta(events: &[u16], z: &[f64]) -> f64 {
    let candidates: Vec<f64> = (1..=9).map(|k| k as f64 * 0.05).collect();
    let loglik = |th: f64| -> f64 {
        events
            .iter()
            .zip(z)
            .map(|(&e, &zi)| {
                let h = th * (1.0 + zi);
                if e == 1 {
                    h.ln()
                } else {
                    (1.0 - h).ln()
                }
            })
            .sum()
    };
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if loglik(c) > loglik(best) {
            best = c;
        }
    }
    best
}

/// Two subjects with covariates z = (0, 1) are followed to an interim step;
/// afterwards a subject stays under observation only while its predicted
/// probability of an event by the horizon, at the interim estimate, is at
/// least the threshold c.
pub fn adaptive_stopping_threshold<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let c = params.f64("c", 0.7)?;
    let (interim, horizon) = (1usize, 3usize);
    let z = [0.0, 1.0];
    let p = subjects(2, |i| i, horizon, &[(1, 5), (3, 10)], move |th: &[S], i| th[0].clone() * fr(1 + i as i64, 1))?;
    let ab = p.alphabet.clone();
    let mut keep = [0usize; 4];
    for (code, slot) in keep.iter_mut().enumerate() {
        let e = [(code & 1) as u16, (code >> 1 & 1) as u16];
        let th = interim_theta(&e, &z);
        let mut bits = 0;
        for i in 0..2 {
            let predicted = if e[i] == 1 { 1.0 } else { 1.0 - (1.0 - th * (1.0 + z[i])).powi((horizon - interim) as i32) };
            if predicted >= c {
                bits |= 1 << i;
            }
        }
        *slot = bits;
    }
    let q = MechanismKernel::new(2, vec![vec![]], DependenceClass::PastObservedOnly, CountingKind::Window, move |_, x, rh| {
        let t = rh.len();
        if t < interim {
            return pattern(0b11, 4);
        }
        let e = ab.decode(x[interim - 1]);
        pattern(keep[(e[0] | e[1] << 1) as usize], 4)
    });
    Ok(plain(build(p, q, ParamPair::new(0, 0), params)?))
}

// ---- marker-driven visit schedules ----

fn marker_chain<S: Scalar>(horizon: usize) -> Result<ProcessModel<S>> {
    let alphabet = XAlphabet::single("marker", ["low", "mid", "high"]);
    Ok(ProcessModel::new(alphabet, grid(horizon)?, scalars(&[&[(1, 2)], &[(7, 10)]]), |th: &[S], h: &[u16]| match h.last() {
        None => vec![fr(1, 3); 3],
        Some(&s) => {
            let move_p = (S::one() - th[0].clone()) / fr(2, 1);
            (0..3).map(|k| if k == s { th[0].clone() } else { move_p.clone() }).collect()
        }
    }))
}

/// Visit at step 1; the next visit is due `delay[marker]` steps after the
/// last attended one, and a due visit is attended with probability ψ.
fn marker_schedule<S: Scalar>(delay: [usize; 3], params: &Params) -> Result<JointModel<S>> {
    let q = MechanismKernel::new(
        1,
        scalars(&[&[(4, 5)], &[(9, 10)]]),
        DependenceClass::PastObservedOnly,
        CountingKind::Visit,
        move |psi: &[S], x: &[u16], rh: &[u8]| {
            let t = rh.len();
            let Some(last) = rh.iter().rposition(|&b| b == 1) else {
                return pattern(1, 2);
            };
            if t >= last + delay[x[last] as usize] {
                observe(psi[0].clone())
            } else {
                pattern(0, 2)
            }
        },
    );
    build(marker_chain(4)?, q, ParamPair::new(0, 0), params)
}

fn clamp_low() -> VerticalCoarsener {
    VerticalCoarsener::new("detection-limit", 0, vec![0, 0, 1], vec!["below-limit".into(), "high".into()])
}

pub fn marker_visit_schedule<S: Scalar>(params: &Params) -> Result<Built<S>> {
    Ok(plain(marker_schedule([1, 2, 3], params)?))
}

/// Low and mid values are reported only as "below-limit"; the schedule
/// reacts to nothing finer than that.
pub fn detection_limit<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let model = marker_schedule([1, 1, 2], params)?;
    Ok(Built { model, vertical: Some(clamp_low()), visits: None })
}

/// The marker schedule distinguishes low from mid, which the clamp hides.
pub fn marker_schedule_clamped<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let model = marker_schedule([1, 2, 3], params)?;
    Ok(Built { model, vertical: Some(clamp_low()), visits: None })
}

// ---- joint model for a marker and a clinical event ----

/// W is a two-level marker, Y an event indicator with hazard 2θ while W is
/// low and θ while it is high.
fn marker_and_event<S: Scalar>() -> Result<ProcessModel<S>> {
    let alphabet = XAlphabet::new(vec![
        Coordinate::new("w", ["low", "high"]).revealed_by(0),
        Coordinate::new("y", ["0", "1"]).revealed_by(0),
    ])?;
    let ab = alphabet.clone();
    Ok(ProcessModel::new(alphabet, grid(3)?, scalars(&[&[(1, 10)], &[(1, 5)]]), move |th: &[S], h: &[u16]| {
        let prev = h.last().map(|&s| (ab.symbol(s, 0), ab.symbol(s, 1)));
        (0..ab.size() as u16)
            .map(|s| {
                let (w, y) = (ab.symbol(s, 0), ab.symbol(s, 1));
                let pw: S = match prev {
                    None => fr(1, 2),
                    Some((wp, _)) if wp == w => fr(3, 4),
                    Some(_) => fr(1, 4),
                };
                let hazard = th[0].clone() * fr(if w == 0 { 2 } else { 1 }, 1);
                let py = match (prev.map_or(0, |p| p.1), y) {
                    (1, 1) => S::one(),
                    (1, _) => S::zero(),
                    (_, 1) => hazard,
                    _ => S::one() - hazard,
                };
                pw * py
            })
            .collect()
    })
    .with_counting(vec![1]))
}

/// Drop-out with probability `ψ[0]` when the event indicator at step
/// `look(t)` is 1 and `ψ[1]` otherwise; once out, always out.
fn dropout<S: Scalar>(
    class: DependenceClass,
    alphabet: XAlphabet,
    look: impl Fn(usize) -> usize + Send + Sync + 'static,
) -> MechanismKernel<S> {
    MechanismKernel::new(1, scalars(&[&[(1, 2), (1, 10)], &[(3, 10), (1, 10)]]), class, CountingKind::Window, move |psi: &[S], x: &[u16], rh: &[u8]| {
        let t = rh.len();
        if t == 0 {
            return pattern(1, 2);
        }
        if rh[t - 1] == 0 {
            return pattern(0, 2);
        }
        let leave = psi[if alphabet.symbol(x[look(t)], 1) == 1 { 0 } else { 1 }].clone();
        vec![leave.clone(), S::one() - leave]
    })
}

pub fn joint_model_dropout_observed<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let p = marker_and_event()?;
    let q = dropout(DependenceClass::PastObservedOnly, p.alphabet.clone(), |t| t - 1);
    Ok(plain(build(p, q, ParamPair::new(0, 0), params)?))
}

pub fn joint_model_dropout_latent<S: Scalar>(params: &Params) -> Result<Built<S>> {
    let p = marker_and_event()?;
    let q = dropout(DependenceClass::Anticipating, p.alphabet.clone(), |t| t);
    Ok(plain(build(p, q, ParamPair::new(0, 0), params)?))
}
