//! Counting processes, filtrations and compensators on the path space.
//!
//! A jump process assigns every support path and step a *pattern*: 0 for no
//! jump, `m + 1` for a jump of mark `m`. Marks are patterns of components
//! that move together, so at most one mark jumps per step even when several
//! R-components flip at once.

use std::sync::Arc;

use crate::gcmp::{mask_state, CountingKind, JointModel};
use crate::pathspace::{generate_partition, ParamPair, Partition, PathFunction, PathSpace};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct JumpProcess {
    pub label: String,
    pub n_marks: usize,
    /// `pattern[path][t-1]`.
    pub pattern: Vec<Vec<u8>>,
}

impl JumpProcess {
    pub fn horizon(&self) -> usize {
        self.pattern.first().map_or(0, Vec::len)
    }

    /// `ΔN_{h,t}` as a 0/1 table `[t-1][h]` for one path.
    pub fn increments(&self, path: usize) -> Vec<Vec<u8>> {
        self.pattern[path]
            .iter()
            .map(|&p| (0..self.n_marks).map(|m| u8::from(p as usize == m + 1)).collect())
            .collect()
    }

    /// `N_t` summed over marks, `t = 0..=τ`.
    pub fn total_count(&self, path: usize) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.pattern[path].iter().scan(0, |n, &p| {
                *n += usize::from(p > 0);
                Some(*n)
            }))
            .collect()
    }

    pub fn mark_label(&self, mark: usize) -> String {
        format!("{:b}", mark + 1)
    }
}

/// Counting process associated with R. Window-type R counts every flip of a
/// component, starting from the all-ones state before step 1; visit-type R
/// counts every step at which a component is 1.
pub fn counting_of_r<S: Scalar>(model: &JointModel<S>) -> JumpProcess {
    let d = model.r_dim();
    let full = ((1u16 << d) - 1) as u8;
    let kind = model.mechanism().counting;
    let pattern = model
        .space()
        .paths()
        .iter()
        .map(|p| {
            let mut prev = full;
            p.r.iter()
                .map(|&b| {
                    let pat = match kind {
                        CountingKind::Window => b ^ prev,
                        CountingKind::Visit => b,
                    };
                    prev = b;
                    pat
                })
                .collect()
        })
        .collect();
    JumpProcess { label: format!("N[{kind:?}]"), n_marks: full as usize, pattern }
}

/// Counting process of the declared counting coordinates of X (each a 0-1
/// increment process started at 0). `None` when there are none.
pub fn counting_of_x<S: Scalar>(model: &JointModel<S>) -> Option<JumpProcess> {
    let coords = &model.process().counting_coords;
    if coords.is_empty() || coords.len() > 7 {
        return None;
    }
    let alphabet = model.alphabet();
    let mut pattern = Vec::with_capacity(model.space().len());
    for p in model.space().paths() {
        let mut prev = vec![0u16; alphabet.coords().len()];
        let mut row = Vec::with_capacity(p.x.len());
        for &s in &p.x {
            let now = alphabet.decode(s);
            let mut pat = 0u8;
            for (k, &c) in coords.iter().enumerate() {
                match now[c].checked_sub(prev[c]) {
                    Some(0) => {}
                    Some(1) => pat |= 1 << k,
                    _ => return None,
                }
            }
            prev = now;
            row.push(pat);
        }
        pattern.push(row);
    }
    Some(JumpProcess { label: "X".into(), n_marks: (1usize << coords.len()) - 1, pattern })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FiltrationKind {
    /// `O_s`: R up to s and X where revealed up to s.
    Observed,
    /// `F*_s = X ∨ O_s`.
    FullX,
    /// `F_s`: X and R up to s.
    Joint,
    /// `X_s`: X up to s.
    XOnly,
    /// `F^r_s = X^r ∨ N_s` for a fixed R-path.
    FixedR(Vec<u8>),
    /// `N_s`: R up to s.
    Counting,
    /// X up to s and R up to s + 1: the stage used to predict `ΔX_{s+1}`
    /// when the censoring status at `s + 1` is settled before X moves.
    CensoringFirst,
}

#[derive(Debug, Clone)]
pub struct Filtration {
    pub label: String,
    pub kind: FiltrationKind,
    /// `stages[s]` for `s = 0..=τ`.
    pub stages: Vec<Partition>,
}

fn masked_key(model_alphabet: &crate::pathspace::XAlphabet, x: &[u16], r: &[u8], key: &mut Vec<u32>) {
    for (&s, &b) in x.iter().zip(r) {
        key.extend(mask_state(model_alphabet, s, b).into_iter().map(|v| v.map_or(0, |v| v as u32 + 1)));
    }
}

impl Filtration {
    pub fn build<S: Scalar>(model: &JointModel<S>, kind: FiltrationKind) -> Self {
        let space: &Arc<PathSpace> = model.space();
        let alphabet = model.alphabet();
        let tau = model.horizon();
        let label = match &kind {
            FiltrationKind::Observed => "O".to_string(),
            FiltrationKind::FullX => "F*".to_string(),
            FiltrationKind::Joint => "F".to_string(),
            FiltrationKind::XOnly => "X".to_string(),
            FiltrationKind::FixedR(r) => format!("F^[{}]", model.describe_r(r)),
            FiltrationKind::Counting => "N".to_string(),
            FiltrationKind::CensoringFirst => "F(censoring first)".to_string(),
        };
        let stages = (0..=tau)
            .map(|s| {
                generate_partition(space, format!("{label}_{s}"), |_, p| {
                    let mut key: Vec<u32> = Vec::new();
                    match &kind {
                        FiltrationKind::Observed => {
                            key.extend(p.r[..s].iter().map(|&b| b as u32));
                            masked_key(alphabet, &p.x[..s], &p.r[..s], &mut key);
                        }
                        FiltrationKind::FullX => {
                            key.extend(p.r[..s].iter().map(|&b| b as u32));
                            key.extend(p.x.iter().map(|&v| v as u32));
                        }
                        FiltrationKind::Joint => {
                            key.extend(p.r[..s].iter().map(|&b| b as u32));
                            key.extend(p.x[..s].iter().map(|&v| v as u32));
                        }
                        FiltrationKind::XOnly => key.extend(p.x[..s].iter().map(|&v| v as u32)),
                        FiltrationKind::FixedR(r) => {
                            key.extend(p.r[..s].iter().map(|&b| b as u32));
                            masked_key(alphabet, &p.x, r, &mut key);
                        }
                        FiltrationKind::Counting => key.extend(p.r[..s].iter().map(|&b| b as u32)),
                        FiltrationKind::CensoringFirst => {
                            key.extend(p.r[..(s + 1).min(tau)].iter().map(|&b| b as u32));
                            key.extend(p.x[..s].iter().map(|&v| v as u32));
                        }
                    }
                    key
                })
            })
            .collect();
        Self { label, kind, stages }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    /// Every stage refines its predecessor.
    pub fn is_increasing(&self) -> bool {
        self.stages.windows(2).all(|w| w[1].refines(&w[0]).unwrap_or(false))
    }
}

/// Per-step, per-mark compensator increments `λ_t = E[ΔN_t | stage t-1]`.
#[derive(Debug, Clone)]
pub struct Compensator<S> {
    pub params: ParamPair,
    pub filtration: String,
    /// `increments[t-1][mark]`.
    pub increments: Vec<Vec<PathFunction<S>>>,
}

impl<S: Scalar> Compensator<S> {
    /// `λ[t-1][mark]` at one path, the layout [`crate::likelihood::jacod_phi`] takes.
    pub fn at_path(&self, path: usize) -> Vec<Vec<S>> {
        self.increments
            .iter()
            .map(|marks| marks.iter().map(|f| f.value(path).clone()).collect())
            .collect()
    }

    /// `Λ_t` summed over marks, `t = 0..=τ`.
    pub fn cumulative(&self, path: usize) -> Vec<S> {
        let mut acc = S::zero();
        std::iter::once(S::zero())
            .chain(self.increments.iter().map(|marks| {
                acc = acc.clone() + S::sum_all(marks.iter().map(|f| f.value(path).clone()));
                acc.clone()
            }))
            .collect()
    }
}

pub fn compensator<S: Scalar>(model: &JointModel<S>, n: &JumpProcess, filtration: &Filtration, params: ParamPair) -> Compensator<S> {
    let mu = model.measure(params);
    let space = model.space();
    let increments = (1..=n.horizon())
        .map(|t| {
            let stage = &filtration.stages[t - 1];
            let mut values = vec![vec![S::zero(); space.len()]; n.n_marks];
            for atom in stage.atoms() {
                let mass = mu.mass(atom);
                for m in 0..n.n_marks {
                    let hit = S::sum_all(
                        atom.iter()
                            .filter(|&&i| n.pattern[i][t - 1] as usize == m + 1)
                            .map(|&i| mu.prob(i).clone()),
                    );
                    let lambda = hit / mass.clone();
                    for &i in atom {
                        values[m][i] = lambda.clone();
                    }
                }
            }
            values.into_iter().map(|v| PathFunction::from_fn(space, |i, _| v[i].clone())).collect()
        })
        .collect();
    Compensator { params, filtration: filtration.label.clone(), increments }
}

/// Largest `|E[ΔN_t − λ_t | stage t-1]|` over atoms, steps and marks. Zero
/// (up to rounding) for every compensator built by [`compensator`].
pub fn martingale_residual<S: Scalar>(model: &JointModel<S>, n: &JumpProcess, filtration: &Filtration, comp: &Compensator<S>) -> f64 {
    let mu = model.measure(comp.params);
    let mut worst = 0.0f64;
    for t in 1..=n.horizon() {
        for atom in filtration.stages[t - 1].atoms() {
            let mass = mu.mass(atom);
            for m in 0..n.n_marks {
                let diff = S::sum_all(atom.iter().map(|&i| {
                    let dn = if n.pattern[i][t - 1] as usize == m + 1 { S::one() } else { S::zero() };
                    (dn - comp.increments[t - 1][m].value(i).clone()) * mu.prob(i).clone()
                })) / mass.clone();
                worst = worst.max(diff.as_f64().abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcmp::builders::{anticipating_bernoulli, iid_bernoulli, lagged_bernoulli, right_censor_hazard, survival_hazard};
    use crate::gcmp::{MechanismKernel, DEFAULT_PATH_CAP};
    use crate::pathspace::{TimeGrid, XAlphabet};
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

    #[test]
    fn visit_counting_on_m1() {
        let m = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)]]));
        let n = counting_of_r(&m);
        for (i, p) in m.space().paths().iter().enumerate() {
            assert_eq!(n.pattern[i][1], p.r[1]);
        }
    }

    #[test]
    fn window_counting_of_censoring() {
        let p = survival_hazard(XAlphabet::single("x", ["0", "1"]), TimeGrid::new(4, "").unwrap(), vec![vec![e(3, 10)]]);
        let q = right_censor_hazard(vec![vec![e(1, 4), e(1, 3), e(1, 2), e(1, 1)]]);
        let m = JointModel::build(p, q, ParamPair::new(0, 0), DEFAULT_PATH_CAP).unwrap();
        let n = counting_of_r(&m);
        let i = m.space().paths().iter().position(|p| p.r == vec![1, 1, 0, 0]).unwrap();
        assert_eq!(n.pattern[i], vec![0, 0, 1, 0]);
        assert_eq!(n.total_count(i), vec![0, 0, 0, 1, 1]);
        let x = counting_of_x(&m).unwrap();
        assert!(x.pattern.iter().all(|row| row.iter().filter(|&&v| v > 0).count() <= 1));
    }

    #[test]
    fn compensators_on_m1() {
        let ign = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)], vec![e(7, 10), e(2, 5)]]));
        let n = counting_of_r(&ign);
        let fstar = Filtration::build(&ign, FiltrationKind::FullX);
        let c = compensator(&ign, &n, &fstar, ParamPair::new(0, 1));
        let i = ign.space().paths().iter().position(|p| p.x[0] == 1).unwrap();
        assert_eq!(c.increments[1][0].value(i), &e(7, 10));
        assert!(martingale_residual(&ign, &n, &fstar, &c) == 0.0);

        let ant = m1(anticipating_bernoulli(vec![vec![e(9, 10), e(1, 2)]]));
        let n = counting_of_r(&ant);
        let fs = compensator(&ant, &n, &Filtration::build(&ant, FiltrationKind::FullX), ParamPair::new(0, 0));
        let ob = compensator(&ant, &n, &Filtration::build(&ant, FiltrationKind::Observed), ParamPair::new(0, 0));
        let i = ant.space().paths().iter().position(|p| p.x == vec![1, 1]).unwrap();
        assert_eq!(fs.increments[1][0].value(i), &e(9, 10));
        // 0.9·θ + 0.5·(1 − θ) at θ = 0.3
        assert_eq!(ob.increments[1][0].value(i), &e(62, 100));
    }

    #[test]
    fn filtrations_increase() {
        let m = m1(lagged_bernoulli(vec![vec![e(1, 2), e(1, 2)]]));
        for kind in [
            FiltrationKind::Observed,
            FiltrationKind::FullX,
            FiltrationKind::Joint,
            FiltrationKind::XOnly,
            FiltrationKind::FixedR(vec![1, 0]),
            FiltrationKind::Counting,
            FiltrationKind::CensoringFirst,
        ] {
            let f = Filtration::build(&m, kind.clone());
            assert!(f.is_increasing(), "{kind:?}");
            assert_eq!(f.horizon(), 2);
        }
        let fstar = Filtration::build(&m, FiltrationKind::FullX);
        assert!(fstar.stages[0].same_atoms(&m.x_partition()).unwrap());
    }
}
