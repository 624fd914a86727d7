//! General coarsening models for processes.
//!
//! A [`ProcessModel`] gives the law of X through a sequential kernel
//! `p_θ(x_t | x_1..x_{t-1})`; a [`MechanismKernel`] gives the law of R given
//! the whole X-path through `q_ψ(r_t | x_1..x_τ, r_1..r_{t-1})`. The
//! mechanism kernel never receives θ, so the conditional law of R given X is
//! θ-free by construction. [`JointModel::build`] enumerates the support of
//! `p_θ · q_ψ` and tabulates one measure per grid cell.

pub mod builders;
pub mod file;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathspace::{generate_partition, Measure, ParamPair, Partition, Path, PathSpace, SpaceError, TimeGrid, XAlphabet};
use crate::scalar::Scalar;
use crate::tol;

pub const DEFAULT_PATH_CAP: u64 = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("non-equivalent family: {0}")]
    NonEquivalentFamily(String),
    #[error("incompatible model parts: {0}")]
    Incompatible(String),
    #[error("reference pair (θ#{theta}, ψ#{psi}) is off the parameter grids")]
    ReferenceOffGrid { theta: usize, psi: usize },
    #[error("empty {0} grid")]
    EmptyGrid(&'static str),
    #[error("no absorbing state")]
    NoAbsorbingState,
    #[error("r-path {0} has zero probability under every measure")]
    ROffSupport(String),
    #[error("malformed r-path: {0}")]
    MalformedR(String),
    #[error("invalid vertical coarsener: {0}")]
    InvalidCoarsener(String),
}

pub type ProcessKernelFn<S> = Arc<dyn Fn(&[S], &[u16]) -> Vec<S> + Send + Sync>;
pub type MechanismKernelFn<S> = Arc<dyn Fn(&[S], &[u16], &[u8]) -> Vec<S> + Send + Sync>;

/// Law of X: `kernel(θ, history)` returns one probability per X-state for
/// the next step, where `history` holds `x_1..x_{t-1}`.
#[derive(Clone)]
pub struct ProcessModel<S> {
    pub alphabet: XAlphabet,
    pub grid: TimeGrid,
    pub theta_grid: Vec<Vec<S>>,
    pub absorbing_state: Option<u16>,
    /// Coordinates that are 0-1 increment counting processes started at 0.
    pub counting_coords: Vec<usize>,
    /// False when the kernel is only defined at grid points (tabular kernels).
    pub continuous_theta: bool,
    kernel: ProcessKernelFn<S>,
}

impl<S: Scalar> ProcessModel<S> {
    pub fn new(
        alphabet: XAlphabet,
        grid: TimeGrid,
        theta_grid: Vec<Vec<S>>,
        kernel: impl Fn(&[S], &[u16]) -> Vec<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            alphabet,
            grid,
            theta_grid,
            absorbing_state: None,
            counting_coords: Vec::new(),
            continuous_theta: true,
            kernel: Arc::new(kernel),
        }
    }

    pub fn with_absorbing(mut self, state: u16) -> Self {
        self.absorbing_state = Some(state);
        self
    }

    pub fn with_counting(mut self, coords: Vec<usize>) -> Self {
        self.counting_coords = coords;
        self
    }

    pub fn grid_only(mut self) -> Self {
        self.continuous_theta = false;
        self
    }

    pub fn row(&self, theta: &[S], history: &[u16]) -> Vec<S> {
        (self.kernel)(theta, history)
    }

    /// `p_θ(x)` for an arbitrary parameter value, not only grid points.
    pub fn path_prob(&self, theta: &[S], x: &[u16]) -> S {
        let factors: Vec<S> = (0..x.len())
            .map(|t| self.row(theta, &x[..t])[x[t] as usize].clone())
            .collect();
        crate::scalar::product(&factors)
    }
}

impl<S> fmt::Debug for ProcessModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessModel")
            .field("alphabet", &self.alphabet)
            .field("grid", &self.grid)
            .field("thetas", &self.theta_grid.len())
            .field("absorbing_state", &self.absorbing_state)
            .finish()
    }
}

/// What a mechanism declares it looks at when drawing `r_t`. Declarations
/// are checked by [`crate::certify::verify_dependence_class`], never trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DependenceClass {
    PastObservedOnly,
    PastXOnly,
    Anticipating,
}

/// How R is turned into a counting process: `Window` counts every flip of a
/// component (with the convention that each component is 1 before the first
/// step), `Visit` counts every step at which a component equals 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingKind {
    Window,
    Visit,
}

/// Conditional law of R given X: `kernel(ψ, x_path, r_history)` returns one
/// probability per R-pattern (bitmask `0..2^d`) for step `r_history.len()+1`.
#[derive(Clone)]
pub struct MechanismKernel<S> {
    pub r_dim: usize,
    pub psi_grid: Vec<Vec<S>>,
    pub dependence_class: DependenceClass,
    pub counting: CountingKind,
    /// Descriptive labels for kinds of monitoring; metadata only.
    pub mark_labels: Vec<String>,
    kernel: MechanismKernelFn<S>,
}

impl<S: Scalar> MechanismKernel<S> {
    pub fn new(
        r_dim: usize,
        psi_grid: Vec<Vec<S>>,
        dependence_class: DependenceClass,
        counting: CountingKind,
        kernel: impl Fn(&[S], &[u16], &[u8]) -> Vec<S> + Send + Sync + 'static,
    ) -> Self {
        Self {
            r_dim,
            psi_grid,
            dependence_class,
            counting,
            mark_labels: Vec::new(),
            kernel: Arc::new(kernel),
        }
    }

    /// R ≡ 1 on every component.
    pub fn always_observed(r_dim: usize) -> Self {
        let full = (1usize << r_dim) - 1;
        Self::new(r_dim, vec![vec![]], DependenceClass::PastObservedOnly, CountingKind::Window, move |_, _, _| {
            let mut row = vec![S::zero(); full + 1];
            row[full] = S::one();
            row
        })
    }

    pub fn with_mark_labels(mut self, marks: Vec<String>) -> Self {
        self.mark_labels = marks;
        self
    }

    pub fn row(&self, psi: &[S], x: &[u16], r_history: &[u8]) -> Vec<S> {
        (self.kernel)(psi, x, r_history)
    }

    pub fn path_prob(&self, psi: &[S], x: &[u16], r: &[u8]) -> S {
        let factors: Vec<S> = (0..r.len())
            .map(|t| self.row(psi, x, &r[..t])[r[t] as usize].clone())
            .collect();
        crate::scalar::product(&factors)
    }

    fn kernel_fn(&self) -> MechanismKernelFn<S> {
        Arc::clone(&self.kernel)
    }
}

impl<S> fmt::Debug for MechanismKernel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanismKernel")
            .field("r_dim", &self.r_dim)
            .field("psis", &self.psi_grid.len())
            .field("dependence_class", &self.dependence_class)
            .field("counting", &self.counting)
            .finish()
    }
}

fn validate_row<S: Scalar>(row: &[S], expected: usize, what: impl Fn() -> String) -> Result<(), ModelError> {
    if row.is_empty() {
        return Err(ModelError::InvalidKernel(format!("{}: no kernel row applies", what())));
    }
    if row.len() != expected {
        return Err(ModelError::InvalidKernel(format!(
            "{}: row has {} entries, expected {expected}",
            what(),
            row.len()
        )));
    }
    if let Some(v) = row.iter().find(|v| v.is_negative() || !v.as_f64().is_finite()) {
        return Err(ModelError::InvalidKernel(format!("{}: entry {v} is not a probability", what())));
    }
    let total = S::sum_all(row.iter().cloned());
    if !total.close_to(&S::one(), tol::DIRECT) {
        return Err(ModelError::InvalidKernel(format!("{}: row sums to {total}", what())));
    }
    Ok(())
}

/// Splits the entries of one kernel row across grid values into "kept"
/// (positive everywhere) and "pruned" (zero everywhere); anything else breaks
/// equivalence of the family.
fn support_mask<S: Scalar>(rows: &[Vec<S>], what: impl Fn(usize) -> String) -> Result<Vec<bool>, ModelError> {
    let width = rows[0].len();
    (0..width)
        .map(|k| {
            let positive = rows.iter().filter(|row| row[k] > S::zero()).count();
            if positive == 0 {
                Ok(false)
            } else if positive == rows.len() {
                Ok(true)
            } else {
                Err(ModelError::NonEquivalentFamily(what(k)))
            }
        })
        .collect()
}

fn fmt_r(r: &[u8], r_dim: usize) -> String {
    r.iter()
        .map(|b| (0..r_dim).map(|h| if b >> h & 1 == 1 { '1' } else { '0' }).collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Joint family `{P_(θ,ψ)}` on the common support.
#[derive(Clone)]
pub struct JointModel<S> {
    pub name: String,
    process: ProcessModel<S>,
    mechanism: MechanismKernel<S>,
    space: Arc<PathSpace>,
    x_paths: Vec<Vec<u16>>,
    x_of_path: Vec<usize>,
    x_prob: Vec<Vec<S>>,
    r_prob: Vec<Vec<S>>,
    measures: Vec<Measure<S>>,
    reference: ParamPair,
    cap: u64,
}

impl<S> fmt::Debug for JointModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JointModel")
            .field("name", &self.name)
            .field("support", &self.space.len())
            .field("enumerated", &self.space.enumerated())
            .field("reference", &self.reference)
            .finish()
    }
}

impl<S: Scalar> JointModel<S> {
    pub fn build(
        process: ProcessModel<S>,
        mechanism: MechanismKernel<S>,
        reference: ParamPair,
        cap: u64,
    ) -> Result<Self, ModelError> {
        if process.theta_grid.is_empty() {
            return Err(ModelError::EmptyGrid("θ"));
        }
        if mechanism.psi_grid.is_empty() {
            return Err(ModelError::EmptyGrid("ψ"));
        }
        if reference.theta >= process.theta_grid.len() || reference.psi >= mechanism.psi_grid.len() {
            return Err(ModelError::ReferenceOffGrid { theta: reference.theta, psi: reference.psi });
        }
        if let Some(c) = process.alphabet.coords().iter().find(|c| c.r_component >= mechanism.r_dim) {
            return Err(ModelError::Incompatible(format!(
                "coordinate {} is revealed by R-component {} but the mechanism has r_dim {}",
                c.name, c.r_component, mechanism.r_dim
            )));
        }
        if let Some(a) = process.absorbing_state {
            if a as usize >= process.alphabet.size() {
                return Err(ModelError::Incompatible(format!("absorbing state {a} outside the alphabet")));
            }
        }
        if let Some(&c) = process.counting_coords.iter().find(|&&c| c >= process.alphabet.coords().len()) {
            return Err(ModelError::Incompatible(format!("counting coordinate {c} does not exist")));
        }
        let full = PathSpace::full_size(&process.grid, &process.alphabet, mechanism.r_dim);
        if full > cap as u128 {
            return Err(SpaceError::CapExceeded { count: full, cap }.into());
        }

        let x_part = enumerate_x(&process)?;
        let mut rows: Vec<(Path, usize, Vec<S>)> = Vec::new();
        for (x_id, (x, _)) in x_part.iter().enumerate() {
            for (r, probs) in enumerate_r(&mechanism, &process.alphabet, x)? {
                rows.push((Path { x: x.clone(), r }, x_id, probs));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));

        let paths: Vec<Path> = rows.iter().map(|(p, _, _)| p.clone()).collect();
        let space = Arc::new(PathSpace::from_paths(
            process.grid.clone(),
            process.alphabet.clone(),
            mechanism.r_dim,
            paths,
        )?);
        let x_of_path: Vec<usize> = rows.iter().map(|(_, x, _)| *x).collect();
        let n_theta = process.theta_grid.len();
        let n_psi = mechanism.psi_grid.len();
        let x_prob: Vec<Vec<S>> = (0..n_theta)
            .map(|th| x_part.iter().map(|(_, probs)| probs[th].clone()).collect())
            .collect();
        let r_prob: Vec<Vec<S>> = (0..n_psi)
            .map(|ps| rows.iter().map(|(_, _, probs)| probs[ps].clone()).collect())
            .collect();

        let mut measures = Vec::with_capacity(n_theta * n_psi);
        for th in 0..n_theta {
            for ps in 0..n_psi {
                let p = (0..space.len())
                    .map(|i| x_prob[th][x_of_path[i]].clone() * r_prob[ps][i].clone())
                    .collect();
                measures.push(Measure::new(&space, p, ParamPair::new(th, ps))?);
            }
        }
        let x_paths = x_part.into_iter().map(|(x, _)| x).collect();
        Ok(Self {
            name: String::new(),
            process,
            mechanism,
            space,
            x_paths,
            x_of_path,
            x_prob,
            r_prob,
            measures,
            reference,
            cap,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn space(&self) -> &Arc<PathSpace> {
        &self.space
    }

    pub fn process(&self) -> &ProcessModel<S> {
        &self.process
    }

    pub fn mechanism(&self) -> &MechanismKernel<S> {
        &self.mechanism
    }

    pub fn alphabet(&self) -> &XAlphabet {
        &self.process.alphabet
    }

    pub fn horizon(&self) -> usize {
        self.process.grid.horizon()
    }

    pub fn r_dim(&self) -> usize {
        self.mechanism.r_dim
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn reference(&self) -> ParamPair {
        self.reference
    }

    pub fn n_theta(&self) -> usize {
        self.process.theta_grid.len()
    }

    pub fn n_psi(&self) -> usize {
        self.mechanism.psi_grid.len()
    }

    pub fn theta(&self, i: usize) -> &[S] {
        &self.process.theta_grid[i]
    }

    pub fn psi(&self, i: usize) -> &[S] {
        &self.mechanism.psi_grid[i]
    }

    /// All grid cells, θ-major.
    pub fn pairs(&self) -> Vec<ParamPair> {
        let n_psi = self.n_psi();
        (0..self.n_theta())
            .flat_map(|th| (0..n_psi).map(move |ps| ParamPair::new(th, ps)))
            .collect()
    }

    pub fn measure(&self, pair: ParamPair) -> &Measure<S> {
        &self.measures[pair.theta * self.n_psi() + pair.psi]
    }

    pub fn x_paths(&self) -> &[Vec<u16>] {
        &self.x_paths
    }

    pub fn x_id(&self, path: usize) -> usize {
        self.x_of_path[path]
    }

    /// `p_θ(x)` for the x-part of a support path.
    pub fn x_prob(&self, theta: usize, path: usize) -> &S {
        &self.x_prob[theta][self.x_of_path[path]]
    }

    pub fn x_prob_by_id(&self, theta: usize, x_id: usize) -> &S {
        &self.x_prob[theta][x_id]
    }

    /// `q_ψ(r | x)` for a support path.
    pub fn r_prob(&self, psi: usize, path: usize) -> &S {
        &self.r_prob[psi][path]
    }

    /// Distinct R-paths on the support, in canonical order.
    pub fn support_r_paths(&self) -> Vec<Vec<u8>> {
        let set: BTreeSet<Vec<u8>> = self.space.paths().iter().map(|p| p.r.clone()).collect();
        set.into_iter().collect()
    }

    pub fn paths_with_r(&self, r: &[u8]) -> Vec<usize> {
        (0..self.space.len()).filter(|&i| self.space.path(i).r == r).collect()
    }

    pub fn all_ones_r(&self) -> Vec<u8> {
        vec![((1u16 << self.r_dim()) - 1) as u8; self.horizon()]
    }

    pub fn describe_r(&self, r: &[u8]) -> String {
        fmt_r(r, self.r_dim())
    }

    /// σ(X).
    pub fn x_partition(&self) -> Partition {
        generate_partition(&self.space, "X", |i, _| self.x_of_path[i])
    }

    /// σ(R).
    pub fn r_partition(&self) -> Partition {
        generate_partition(&self.space, "R", |_, p| p.r.clone())
    }

    /// F = X ∨ R (the full σ-field on the support).
    pub fn full_partition(&self) -> Partition {
        Partition::full(&self.space)
    }

    /// Rebuilds with a different mechanism (same process, reference, cap).
    pub fn with_mechanism(&self, mechanism: MechanismKernel<S>) -> Result<Self, ModelError> {
        Ok(Self::build(self.process.clone(), mechanism, self.reference, self.cap)?.named(self.name.clone()))
    }
}

fn enumerate_x<S: Scalar>(process: &ProcessModel<S>) -> Result<Vec<(Vec<u16>, Vec<S>)>, ModelError> {
    let tau = process.grid.horizon();
    let n_states = process.alphabet.size();
    let n_theta = process.theta_grid.len();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<u16>, Vec<S>)> = vec![(Vec::new(), vec![S::one(); n_theta])];
    while let Some((prefix, probs)) = stack.pop() {
        if prefix.len() == tau {
            out.push((prefix, probs));
            continue;
        }
        let rows: Vec<Vec<S>> = process.theta_grid.iter().map(|th| process.row(th, &prefix)).collect();
        for (i, row) in rows.iter().enumerate() {
            validate_row(row, n_states, || {
                format!("process kernel at θ#{i}, history {:?}", label_history(&process.alphabet, &prefix))
            })?;
        }
        if let (Some(a), Some(&last)) = (process.absorbing_state, prefix.last()) {
            if last == a && rows.iter().any(|row| !row[a as usize].close_to(&S::one(), tol::DIRECT)) {
                return Err(ModelError::InvalidKernel(format!(
                    "process leaves absorbing state {} after history {:?}",
                    process.alphabet.state_label(a),
                    label_history(&process.alphabet, &prefix)
                )));
            }
        }
        let keep = support_mask(&rows, |k| {
            format!(
                "state {} after history {:?} is possible under some θ but not all",
                process.alphabet.state_label(k as u16),
                label_history(&process.alphabet, &prefix)
            )
        })?;
        for k in (0..n_states).rev().filter(|&k| keep[k]) {
            let mut next = prefix.clone();
            next.push(k as u16);
            let p = probs.iter().zip(&rows).map(|(p, row)| p.clone() * row[k].clone()).collect();
            stack.push((next, p));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn enumerate_r<S: Scalar>(
    mechanism: &MechanismKernel<S>,
    alphabet: &XAlphabet,
    x: &[u16],
) -> Result<Vec<(Vec<u8>, Vec<S>)>, ModelError> {
    let tau = x.len();
    let width = 1usize << mechanism.r_dim;
    let n_psi = mechanism.psi_grid.len();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<u8>, Vec<S>)> = vec![(Vec::new(), vec![S::one(); n_psi])];
    while let Some((prefix, probs)) = stack.pop() {
        if prefix.len() == tau {
            out.push((prefix, probs));
            continue;
        }
        let rows: Vec<Vec<S>> = mechanism.psi_grid.iter().map(|ps| mechanism.row(ps, x, &prefix)).collect();
        for (i, row) in rows.iter().enumerate() {
            validate_row(row, width, || {
                format!(
                    "mechanism kernel at ψ#{i}, x {:?}, r history [{}]",
                    label_history(alphabet, x),
                    fmt_r(&prefix, mechanism.r_dim)
                )
            })?;
        }
        let keep = support_mask(&rows, |k| {
            format!(
                "R-pattern {k:b} after r history [{}] with x {:?} is possible under some ψ but not all",
                fmt_r(&prefix, mechanism.r_dim),
                label_history(alphabet, x)
            )
        })?;
        for k in (0..width).rev().filter(|&k| keep[k]) {
            let mut next = prefix.clone();
            next.push(k as u8);
            let p = probs.iter().zip(&rows).map(|(p, row)| p.clone() * row[k].clone()).collect();
            stack.push((next, p));
        }
    }
    Ok(out)
}

fn label_history(alphabet: &XAlphabet, h: &[u16]) -> Vec<String> {
    h.iter().map(|&s| alphabet.state_label(s)).collect()
}

/// What is seen of one path: the R-path, and per step and coordinate either
/// the symbol (`Some`) or the MASK sentinel (`None`). MASK is not a member
/// of any alphabet, so a masked coordinate never collides with an observed
/// symbol such as `0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Observation {
    pub r: Vec<u8>,
    pub x_obs: Vec<Vec<Option<u16>>>,
}

pub fn mask_state(alphabet: &XAlphabet, state: u16, r_bits: u8) -> Vec<Option<u16>> {
    alphabet
        .decode(state)
        .into_iter()
        .zip(alphabet.coords())
        .map(|(s, c)| (r_bits >> c.r_component & 1 == 1).then_some(s))
        .collect()
}

impl Observation {
    pub fn of(alphabet: &XAlphabet, path: &Path) -> Self {
        Self::under(alphabet, &path.x, &path.r)
    }

    /// Observation that x would produce under an arbitrary r.
    pub fn under(alphabet: &XAlphabet, x: &[u16], r: &[u8]) -> Self {
        let x_obs = x.iter().zip(r).map(|(&s, &b)| mask_state(alphabet, s, b)).collect();
        Self { r: r.to_vec(), x_obs }
    }

    pub fn is_consistent(&self, alphabet: &XAlphabet) -> bool {
        self.r.len() == self.x_obs.len()
            && self.r.iter().zip(&self.x_obs).all(|(&b, xs)| {
                xs.len() == alphabet.coords().len()
                    && xs.iter().zip(alphabet.coords()).all(|(v, c)| match v {
                        Some(s) => b >> c.r_component & 1 == 1 && (*s as usize) < c.symbols.len(),
                        None => b >> c.r_component & 1 == 0,
                    })
            })
    }

    /// `(r_t, x_obs_t)` per step as text; masked coordinates render as `NA`,
    /// coordinates are joined with `;`.
    pub fn render(&self, alphabet: &XAlphabet, r_dim: usize) -> Vec<(String, String)> {
        self.r
            .iter()
            .zip(&self.x_obs)
            .map(|(&b, xs)| {
                let r = (0..r_dim).map(|h| if b >> h & 1 == 1 { '1' } else { '0' }).collect();
                let x = xs
                    .iter()
                    .zip(alphabet.coords())
                    .map(|(v, c)| v.map_or("NA", |s| c.symbols[s as usize].as_str()))
                    .collect::<Vec<_>>()
                    .join(";");
                (r, x)
            })
            .collect()
    }
}

/// O = σ(R_t X_t, R_t): paths share an atom iff they have equal R-paths and
/// equal X-values wherever R reveals them.
pub fn observed_partition<S: Scalar>(model: &JointModel<S>) -> Partition {
    let alphabet = model.alphabet();
    generate_partition(model.space(), "O", |_, p| Observation::of(alphabet, p))
}

/// X^r = σ(X_t : r_t = 1) for a fixed R-path `r`, ignoring each path's own R.
/// Any `r` of the right length is accepted; an all-zero `r` gives the
/// trivial partition.
pub fn fixed_r_partition<S: Scalar>(model: &JointModel<S>, r: &[u8]) -> Result<Partition, ModelError> {
    check_r_len(model, r)?;
    let alphabet = model.alphabet();
    Ok(generate_partition(model.space(), format!("X^[{}]", model.describe_r(r)), |_, p| {
        Observation::under(alphabet, &p.x, r).x_obs
    }))
}

fn check_r_len<S: Scalar>(model: &JointModel<S>, r: &[u8]) -> Result<(), ModelError> {
    let width = 1u16 << model.r_dim();
    if r.len() != model.horizon() || r.iter().any(|&b| b as u16 >= width) {
        return Err(ModelError::MalformedR(format!(
            "{r:?} does not fit horizon {} and r_dim {}",
            model.horizon(),
            model.r_dim()
        )));
    }
    Ok(())
}

/// Errors unless `r` is the R-path of some support path.
pub fn check_support_r<S: Scalar>(model: &JointModel<S>, r: &[u8]) -> Result<(), ModelError> {
    check_r_len(model, r)?;
    if !model.space().paths().iter().any(|p| p.r == r) {
        return Err(ModelError::ROffSupport(format!("[{}]", model.describe_r(r))));
    }
    Ok(())
}

/// Fixed, parameter-free coarsening of the value of one X-coordinate at
/// observed steps (e.g. a detection-limit clamp).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerticalCoarsener {
    pub label: String,
    pub coord: usize,
    /// Coarse label index for each symbol of the coordinate.
    pub map: Vec<u16>,
    pub coarse_labels: Vec<String>,
}

impl VerticalCoarsener {
    pub fn new(label: impl Into<String>, coord: usize, map: Vec<u16>, coarse_labels: Vec<String>) -> Self {
        Self { label: label.into(), coord, map, coarse_labels }
    }

    pub fn identity(alphabet: &XAlphabet, coord: usize) -> Self {
        let symbols = alphabet.coords()[coord].symbols.clone();
        Self::new("identity", coord, (0..symbols.len() as u16).collect(), symbols)
    }

    pub fn constant(alphabet: &XAlphabet, coord: usize) -> Self {
        let n = alphabet.coords()[coord].symbols.len();
        Self::new("constant", coord, vec![0; n], vec!["*".into()])
    }

    pub fn validate(&self, alphabet: &XAlphabet) -> Result<(), ModelError> {
        let coord = alphabet
            .coords()
            .get(self.coord)
            .ok_or_else(|| ModelError::InvalidCoarsener(format!("coordinate {} does not exist", self.coord)))?;
        if self.map.len() != coord.symbols.len() {
            return Err(ModelError::InvalidCoarsener(format!(
                "map covers {} symbols, coordinate has {}",
                self.map.len(),
                coord.symbols.len()
            )));
        }
        if self.coarse_labels.len() > coord.symbols.len() {
            return Err(ModelError::InvalidCoarsener("coarse alphabet larger than the original".into()));
        }
        if self.map.iter().any(|&m| m as usize >= self.coarse_labels.len()) {
            return Err(ModelError::InvalidCoarsener("map points past the coarse alphabet".into()));
        }
        Ok(())
    }

    pub(crate) fn apply(&self, obs: &mut [Vec<Option<u16>>]) {
        for step in obs {
            if let Some(v) = step[self.coord].as_mut() {
                *v = self.map[*v as usize];
            }
        }
    }
}

/// O' = σ(R, v(X_t) where R reveals X_t).
pub fn apply_vertical<S: Scalar>(model: &JointModel<S>, v: &VerticalCoarsener) -> Result<Partition, ModelError> {
    v.validate(model.alphabet())?;
    let alphabet = model.alphabet();
    Ok(generate_partition(model.space(), format!("O'[{}]", v.label), |_, p| {
        let mut obs = Observation::of(alphabet, p);
        v.apply(&mut obs.x_obs);
        obs
    }))
}

/// X'^r: coarse values at the steps revealed by a fixed R-path.
pub fn vertical_fixed_r_partition<S: Scalar>(
    model: &JointModel<S>,
    r: &[u8],
    v: &VerticalCoarsener,
) -> Result<Partition, ModelError> {
    v.validate(model.alphabet())?;
    check_r_len(model, r)?;
    let alphabet = model.alphabet();
    Ok(generate_partition(model.space(), format!("X'^[{}]", model.describe_r(r)), |_, p| {
        let mut obs = Observation::under(alphabet, &p.x, r);
        v.apply(&mut obs.x_obs);
        obs.x_obs
    }))
}

/// Once the absorbing state has been seen (`X_t = a` with R fully on), R is
/// forced to 1 on every component afterwards. Idempotent.
pub fn enforce_absorbing_convention<S: Scalar>(model: &JointModel<S>) -> Result<JointModel<S>, ModelError> {
    let a = model.process().absorbing_state.ok_or(ModelError::NoAbsorbingState)?;
    let old = model.mechanism();
    let inner = old.kernel_fn();
    let full = ((1u16 << old.r_dim) - 1) as u8;
    let width = full as usize + 1;
    let mut mechanism = MechanismKernel::new(old.r_dim, old.psi_grid.clone(), old.dependence_class, old.counting, move |psi, x, rh| {
        let seen = rh.iter().enumerate().any(|(s, &b)| x[s] == a && b == full);
        if seen {
            let mut row = vec![S::zero(); width];
            row[full as usize] = S::one();
            row
        } else {
            inner(psi, x, rh)
        }
    });
    mechanism.mark_labels = old.mark_labels.clone();
    model.with_mechanism(mechanism)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathspace::Coordinate;
    use crate::scalar::Exact;

    fn bernoulli_process<S: Scalar>(horizon: usize, thetas: &[(i64, i64)]) -> ProcessModel<S> {
        ProcessModel::new(
            XAlphabet::single("x", ["0", "1"]),
            TimeGrid::new(horizon, "steps").unwrap(),
            thetas.iter().map(|&(n, d)| vec![S::from_ratio(n, d)]).collect(),
            |th, _| vec![S::one() - th[0].clone(), th[0].clone()],
        )
    }

    #[test]
    fn always_observed_support_is_x_paths() {
        let m = JointModel::build(
            bernoulli_process::<f64>(2, &[(3, 10), (1, 2)]),
            MechanismKernel::always_observed(1),
            ParamPair::new(1, 0),
            DEFAULT_PATH_CAP,
        )
        .unwrap();
        assert_eq!(m.space().len(), 4);
        assert_eq!(m.space().enumerated(), 16);
        assert!(m.space().paths().iter().all(|p| p.r == vec![1, 1]));
        assert!(observed_partition(&m).same_atoms(&m.full_partition()).unwrap());
    }

    #[test]
    fn invalid_kernels_are_rejected() {
        let bad = ProcessModel::new(
            XAlphabet::single("x", ["0", "1"]),
            TimeGrid::new(2, "").unwrap(),
            vec![vec![0.3f64]],
            |th, _| vec![th[0], th[0]],
        );
        let err = JointModel::build(bad, MechanismKernel::always_observed(1), ParamPair::new(0, 0), 1000).unwrap_err();
        assert!(matches!(err, ModelError::InvalidKernel(_)), "{err}");

        let negative = ProcessModel::new(
            XAlphabet::single("x", ["0", "1"]),
            TimeGrid::new(1, "").unwrap(),
            vec![vec![1.5f64]],
            |th, _| vec![1.0 - th[0], th[0]],
        );
        let err = JointModel::build(negative, MechanismKernel::always_observed(1), ParamPair::new(0, 0), 1000).unwrap_err();
        assert!(matches!(err, ModelError::InvalidKernel(_)));
    }

    #[test]
    fn differing_supports_are_rejected() {
        let p = ProcessModel::new(
            XAlphabet::single("x", ["0", "1"]),
            TimeGrid::new(1, "").unwrap(),
            vec![vec![0.0f64], vec![0.5]],
            |th, _| vec![1.0 - th[0], th[0]],
        );
        let err = JointModel::build(p, MechanismKernel::always_observed(1), ParamPair::new(0, 0), 1000).unwrap_err();
        assert!(matches!(err, ModelError::NonEquivalentFamily(_)));
    }

    #[test]
    fn reference_must_be_on_grid() {
        let err = JointModel::build(
            bernoulli_process::<f64>(1, &[(1, 2)]),
            MechanismKernel::always_observed(1),
            ParamPair::new(1, 0),
            1000,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::ReferenceOffGrid { theta: 1, psi: 0 });
    }

    #[test]
    fn cap_is_enforced_before_enumeration() {
        let err = JointModel::build(
            bernoulli_process::<f64>(4, &[(1, 2)]),
            MechanismKernel::always_observed(1),
            ParamPair::new(0, 0),
            100,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Space(SpaceError::CapExceeded { count: 256, cap: 100 })));
    }

    #[test]
    fn mask_is_not_zero() {
        let a = XAlphabet::single("x", ["0", "1"]);
        let seen_zero = Observation::under(&a, &[0], &[1]);
        let masked = Observation::under(&a, &[0], &[0]);
        assert_ne!(seen_zero, masked);
        assert_eq!(seen_zero.x_obs, vec![vec![Some(0)]]);
        assert_eq!(masked.x_obs, vec![vec![None]]);
        assert!(seen_zero.is_consistent(&a) && masked.is_consistent(&a));
        let broken = Observation { r: vec![0], x_obs: vec![vec![Some(1)]] };
        assert!(!broken.is_consistent(&a));
        assert_eq!(masked.render(&a, 1), vec![("0".to_string(), "NA".to_string())]);
    }

    #[test]
    fn multivariate_r_masks_per_component() {
        let a = XAlphabet::new(vec![Coordinate::new("w", ["0", "1"]), Coordinate::new("z", ["0", "1"]).revealed_by(1)]).unwrap();
        let state = a.encode(&[1, 0]);
        assert_eq!(mask_state(&a, state, 0b01), vec![Some(1), None]);
        assert_eq!(mask_state(&a, state, 0b10), vec![None, Some(0)]);
        assert_eq!(mask_state(&a, state, 0b11), vec![Some(1), Some(0)]);
    }

    #[test]
    fn exact_build_factorizes() {
        let m = JointModel::build(
            bernoulli_process::<Exact>(2, &[(3, 10), (1, 2)]),
            MechanismKernel::always_observed(1),
            ParamPair::new(1, 0),
            DEFAULT_PATH_CAP,
        )
        .unwrap();
        let mu = m.measure(ParamPair::new(0, 0));
        let last = m.space().len() - 1;
        assert_eq!(mu.prob(last), &Exact::from_ratio(9, 100));
        for i in 0..m.space().len() {
            assert_eq!(mu.prob(i).clone(), m.x_prob(0, i).clone() * m.r_prob(0, i).clone());
        }
    }
}
