//! Finite probability spaces of joint `(X, R)` trajectories.
//!
//! A σ-field on a finite Ω is a partition of Ω, so every measure-theoretic
//! object used by the engine reduces to a finite one here: measurable maps
//! become functions constant on atoms, conditional expectations become
//! atom-wise weighted averages, and Radon–Nikodym derivatives become ratios
//! of atom masses.
//!
//! Path enumeration order is lexicographic in `(x_1, r_1, x_2, r_2, ...)`:
//! the first time step is the most significant digit, and within a step the
//! X-state comes before the R-pattern.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tol;

pub const DEFAULT_MAX_HORIZON: usize = 8;
pub const MAX_R_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("incompatible spaces")]
    IncompatibleSpaces,
    #[error("null atom {atom}")]
    NullAtom { atom: usize },
    #[error("dominance violated on atom {atom}")]
    DominanceViolated { atom: usize },
    #[error("horizon {horizon} outside 1..={max}")]
    HorizonOutOfRange { horizon: usize, max: usize },
    #[error("path space of {count} paths exceeds the cap of {cap}")]
    CapExceeded { count: u128, cap: u64 },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("non-finite path function value at path {path}")]
    NonFinite { path: usize },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("duplicate or malformed path at position {0}")]
    MalformedPath(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: usize,
    pub label: String,
}

impl TimeGrid {
    pub fn new(horizon: usize, label: impl Into<String>) -> Result<Self, SpaceError> {
        Self::with_max(horizon, label, DEFAULT_MAX_HORIZON)
    }

    pub fn with_max(horizon: usize, label: impl Into<String>, max: usize) -> Result<Self, SpaceError> {
        if horizon == 0 || horizon > max {
            return Err(SpaceError::HorizonOutOfRange { horizon, max });
        }
        Ok(Self { horizon, label: label.into() })
    }

    /// Number of time steps τ; steps are indexed `1..=τ` in reports and
    /// `0..τ` in slices.
    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// One component of the X-state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub name: String,
    pub symbols: Vec<String>,
    /// Index of the R-component whose value reveals this coordinate.
    pub r_component: usize,
}

impl Coordinate {
    pub fn new<S: Into<String>>(name: impl Into<String>, symbols: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            symbols: symbols.into_iter().map(Into::into).collect(),
            r_component: 0,
        }
    }

    pub fn revealed_by(mut self, r_component: usize) -> Self {
        self.r_component = r_component;
        self
    }
}

/// Product alphabet of the X-state. States are encoded as a mixed-radix
/// index with coordinate 0 as the most significant digit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XAlphabet {
    coords: Vec<Coordinate>,
    size: usize,
}

impl XAlphabet {
    pub fn new(coords: Vec<Coordinate>) -> Result<Self, SpaceError> {
        if coords.is_empty() {
            return Err(SpaceError::InvalidAlphabet("no coordinates".into()));
        }
        let mut size = 1usize;
        for c in &coords {
            if c.symbols.is_empty() {
                return Err(SpaceError::InvalidAlphabet(format!("coordinate {} has no symbols", c.name)));
            }
            let mut seen = c.symbols.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != c.symbols.len() {
                return Err(SpaceError::InvalidAlphabet(format!("coordinate {} repeats a symbol", c.name)));
            }
            if c.symbols.iter().any(|s| s == "*" || s == "NA" || s.contains(',')) {
                return Err(SpaceError::InvalidAlphabet(format!(
                    "coordinate {} uses a reserved symbol (`*`, `NA`, or a comma)",
                    c.name
                )));
            }
            size = size.saturating_mul(c.symbols.len());
        }
        if size > u16::MAX as usize {
            return Err(SpaceError::InvalidAlphabet(format!("{size} states exceed u16 range")));
        }
        Ok(Self { coords, size })
    }

    pub fn single<S: Into<String>>(name: &str, symbols: impl IntoIterator<Item = S>) -> Self {
        Self::new(vec![Coordinate::new(name, symbols)]).expect("valid single-coordinate alphabet")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn decode(&self, state: u16) -> Vec<u16> {
        let mut rest = state as usize;
        let mut out = vec![0u16; self.coords.len()];
        for (i, c) in self.coords.iter().enumerate().rev() {
            let k = c.symbols.len();
            out[i] = (rest % k) as u16;
            rest /= k;
        }
        out
    }

    pub fn encode(&self, symbols: &[u16]) -> u16 {
        let mut idx = 0usize;
        for (c, &s) in self.coords.iter().zip(symbols) {
            idx = idx * c.symbols.len() + s as usize;
        }
        idx as u16
    }

    pub fn symbol(&self, state: u16, coord: usize) -> u16 {
        self.decode(state)[coord]
    }

    pub fn state_label(&self, state: u16) -> String {
        self.decode(state)
            .iter()
            .zip(&self.coords)
            .map(|(&s, c)| c.symbols[s as usize].as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_state(&self, label: &str) -> Option<u16> {
        let parts: Vec<&str> = label.split(',').map(str::trim).collect();
        if parts.len() != self.coords.len() {
            return None;
        }
        let mut syms = Vec::with_capacity(parts.len());
        for (p, c) in parts.iter().zip(&self.coords) {
            syms.push(c.symbols.iter().position(|s| s == p)? as u16);
        }
        Some(self.encode(&syms))
    }
}

/// A joint trajectory. `r[t]` is a bitmask over R-components (bit `h` set
/// means component `h` equals 1 at step `t`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub x: Vec<u16>,
    pub r: Vec<u8>,
}

impl Path {
    fn key_cmp(&self, other: &Path) -> Ordering {
        for t in 0..self.x.len().min(other.x.len()) {
            match self.x[t].cmp(&other.x[t]).then(self.r[t].cmp(&other.r[t])) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.x.len().cmp(&other.x.len())
    }
}

impl PartialOrd for Path {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Path {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

static NEXT_SPACE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct PathSpace {
    id: u64,
    grid: TimeGrid,
    alphabet: XAlphabet,
    r_dim: usize,
    paths: Vec<Path>,
    enumerated: u128,
}

impl PathSpace {
    /// `(|X| * 2^d)^τ`.
    pub fn full_size(grid: &TimeGrid, alphabet: &XAlphabet, r_dim: usize) -> u128 {
        let per_step = alphabet.size() as u128 * (1u128 << r_dim);
        per_step.saturating_pow(grid.horizon() as u32)
    }

    fn check_dims(alphabet: &XAlphabet, r_dim: usize) -> Result<(), SpaceError> {
        if r_dim == 0 || r_dim > MAX_R_DIM {
            return Err(SpaceError::InvalidAlphabet(format!("r_dim {r_dim} outside 1..={MAX_R_DIM}")));
        }
        if let Some(c) = alphabet.coords().iter().find(|c| c.r_component >= r_dim) {
            return Err(SpaceError::InvalidAlphabet(format!(
                "coordinate {} is revealed by R-component {} but r_dim is {r_dim}",
                c.name, c.r_component
            )));
        }
        Ok(())
    }

    /// Exhaustive enumeration of every path, refusing above `cap`.
    pub fn enumerate(grid: TimeGrid, alphabet: XAlphabet, r_dim: usize, cap: u64) -> Result<Self, SpaceError> {
        Self::check_dims(&alphabet, r_dim)?;
        let count = Self::full_size(&grid, &alphabet, r_dim);
        if count > cap as u128 {
            return Err(SpaceError::CapExceeded { count, cap });
        }
        let tau = grid.horizon();
        let nx = alphabet.size() as u128;
        let nr = 1u128 << r_dim;
        let per_step = nx * nr;
        let mut paths = Vec::with_capacity(count as usize);
        for idx in 0..count {
            let mut rest = idx;
            let mut x = vec![0u16; tau];
            let mut r = vec![0u8; tau];
            for t in (0..tau).rev() {
                let digit = rest % per_step;
                rest /= per_step;
                x[t] = (digit / nr) as u16;
                r[t] = (digit % nr) as u8;
            }
            paths.push(Path { x, r });
        }
        Ok(Self {
            id: NEXT_SPACE_ID.fetch_add(1, AtomicOrdering::Relaxed),
            grid,
            alphabet,
            r_dim,
            paths,
            enumerated: count,
        })
    }

    /// Builds a space from an explicit list of paths (typically a support).
    /// Paths are sorted into canonical order; duplicates are rejected.
    pub fn from_paths(grid: TimeGrid, alphabet: XAlphabet, r_dim: usize, mut paths: Vec<Path>) -> Result<Self, SpaceError> {
        Self::check_dims(&alphabet, r_dim)?;
        let tau = grid.horizon();
        for (i, p) in paths.iter().enumerate() {
            let bad_len = p.x.len() != tau || p.r.len() != tau;
            let bad_val = p.x.iter().any(|&s| s as usize >= alphabet.size())
                || p.r.iter().any(|&b| (b as usize) >= (1usize << r_dim));
            if bad_len || bad_val {
                return Err(SpaceError::MalformedPath(i));
            }
        }
        paths.sort();
        if let Some(i) = paths.windows(2).position(|w| w[0] == w[1]) {
            return Err(SpaceError::MalformedPath(i + 1));
        }
        let enumerated = Self::full_size(&grid, &alphabet, r_dim);
        Ok(Self {
            id: NEXT_SPACE_ID.fetch_add(1, AtomicOrdering::Relaxed),
            grid,
            alphabet,
            r_dim,
            paths,
            enumerated,
        })
    }

    /// Sub-space keeping only the listed indices (order is re-canonicalized).
    pub fn restrict(&self, keep: &[usize]) -> Result<Self, SpaceError> {
        let paths = keep.iter().map(|&i| self.paths[i].clone()).collect();
        Self::from_paths(self.grid.clone(), self.alphabet.clone(), self.r_dim, paths)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &Path {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.grid.horizon()
    }

    pub fn alphabet(&self) -> &XAlphabet {
        &self.alphabet
    }

    pub fn r_dim(&self) -> usize {
        self.r_dim
    }

    /// Size of the unrestricted enumeration this space was carved from.
    pub fn enumerated(&self) -> u128 {
        self.enumerated
    }

    pub fn index_of(&self, path: &Path) -> Option<usize> {
        self.paths.binary_search(path).ok()
    }

    /// Position of `path` in the unrestricted enumeration.
    pub fn canonical_index(&self, path: &Path) -> u128 {
        let nr = 1u128 << self.r_dim;
        let per_step = self.alphabet.size() as u128 * nr;
        path.x
            .iter()
            .zip(&path.r)
            .fold(0u128, |acc, (&x, &r)| acc * per_step + x as u128 * nr + r as u128)
    }

    pub fn same_as(&self, other: &PathSpace) -> bool {
        self.id == other.id
    }
}

pub(crate) fn ensure_same(a: &PathSpace, b: &PathSpace) -> Result<(), SpaceError> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(SpaceError::IncompatibleSpaces)
    }
}

/// A σ-field on the path space, as a partition into atoms.
#[derive(Debug, Clone)]
pub struct Partition {
    space: Arc<PathSpace>,
    atoms: Vec<Vec<usize>>,
    atom_of: Vec<usize>,
    pub label: String,
}

impl Partition {
    fn from_atom_of(space: Arc<PathSpace>, atom_of: Vec<usize>, label: String) -> Self {
        let n_atoms = atom_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut atoms = vec![Vec::new(); n_atoms];
        for (i, &a) in atom_of.iter().enumerate() {
            atoms[a].push(i);
        }
        Self { space, atoms, atom_of, label }
    }

    pub fn trivial(space: &Arc<PathSpace>) -> Self {
        generate_partition(space, "trivial", |_, _| ())
    }

    pub fn full(space: &Arc<PathSpace>) -> Self {
        generate_partition(space, "full", |i, _| i)
    }

    pub fn space(&self) -> &Arc<PathSpace> {
        &self.space
    }

    pub fn atoms(&self) -> &[Vec<usize>] {
        &self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_of(&self, path: usize) -> usize {
        self.atom_of[path]
    }

    pub fn atom(&self, atom: usize) -> &[usize] {
        &self.atoms[atom]
    }

    /// Every atom of `self` lies inside an atom of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> Result<bool, SpaceError> {
        ensure_same(&self.space, &coarser.space)?;
        Ok(self
            .atoms
            .iter()
            .all(|a| a.iter().all(|&i| coarser.atom_of[i] == coarser.atom_of[a[0]])))
    }

    /// Same σ-field (identical atoms as sets).
    pub fn same_atoms(&self, other: &Partition) -> Result<bool, SpaceError> {
        Ok(self.refines(other)? && other.refines(self)?)
    }

    /// Nonempty intersections of atoms with `event`, in atom order.
    pub fn trace(&self, event: &[usize]) -> Vec<Vec<usize>> {
        let mut by_atom: Vec<Vec<usize>> = vec![Vec::new(); self.atoms.len()];
        for &i in event {
            by_atom[self.atom_of[i]].push(i);
        }
        by_atom.into_iter().filter(|a| !a.is_empty()).collect()
    }
}

/// σ(g) for a map `g` from paths to hashable labels. Atoms are numbered in
/// order of their first path.
pub fn generate_partition<L, F>(space: &Arc<PathSpace>, label: impl Into<String>, classify: F) -> Partition
where
    L: Hash + Eq,
    F: Fn(usize, &Path) -> L,
{
    let mut ids: HashMap<L, usize> = HashMap::new();
    let atom_of = space
        .paths()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let n = ids.len();
            *ids.entry(classify(i, p)).or_insert(n)
        })
        .collect();
    Partition::from_atom_of(Arc::clone(space), atom_of, label.into())
}

/// Common refinement `a ∨ b`.
pub fn join(a: &Partition, b: &Partition) -> Result<Partition, SpaceError> {
    ensure_same(&a.space, &b.space)?;
    Ok(generate_partition(&a.space, format!("{} ∨ {}", a.label, b.label), |i, _| {
        (a.atom_of[i], b.atom_of[i])
    }))
}

/// Parameter-grid coordinates `(θ index, ψ index)` of a measure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamPair {
    pub theta: usize,
    pub psi: usize,
}

impl ParamPair {
    pub fn new(theta: usize, psi: usize) -> Self {
        Self { theta, psi }
    }
}

#[derive(Debug, Clone)]
pub struct Measure<S> {
    space: Arc<PathSpace>,
    p: Vec<S>,
    pub params: ParamPair,
}

impl<S: Scalar> Measure<S> {
    /// Validates total mass 1 and strict positivity on every path.
    pub fn new(space: &Arc<PathSpace>, p: Vec<S>, params: ParamPair) -> Result<Self, SpaceError> {
        if p.len() != space.len() {
            return Err(SpaceError::LengthMismatch { expected: space.len(), actual: p.len() });
        }
        if let Some(i) = p.iter().position(|v| !(v > &S::zero()) || !v.as_f64().is_finite()) {
            return Err(SpaceError::InvalidMeasure(format!("path {i} has non-positive probability {}", p[i])));
        }
        let total = S::sum_all(p.iter().cloned());
        if !total.close_to(&S::one(), tol::DIRECT) {
            return Err(SpaceError::InvalidMeasure(format!("total mass {total} differs from 1")));
        }
        Ok(Self { space: Arc::clone(space), p, params })
    }

    pub fn space(&self) -> &Arc<PathSpace> {
        &self.space
    }

    pub fn prob(&self, path: usize) -> &S {
        &self.p[path]
    }

    pub fn probs(&self) -> &[S] {
        &self.p
    }

    pub fn mass(&self, paths: &[usize]) -> S {
        S::sum_all(paths.iter().map(|&i| self.p[i].clone()))
    }
}

/// A real random variable on the path space.
#[derive(Debug, Clone)]
pub struct PathFunction<S> {
    space: Arc<PathSpace>,
    v: Vec<S>,
}

impl<S: Scalar> PathFunction<S> {
    pub fn new(space: &Arc<PathSpace>, v: Vec<S>) -> Result<Self, SpaceError> {
        if v.len() != space.len() {
            return Err(SpaceError::LengthMismatch { expected: space.len(), actual: v.len() });
        }
        if let Some(path) = v.iter().position(|x| !x.as_f64().is_finite()) {
            return Err(SpaceError::NonFinite { path });
        }
        Ok(Self { space: Arc::clone(space), v })
    }

    pub fn constant(space: &Arc<PathSpace>, c: S) -> Self {
        Self { space: Arc::clone(space), v: vec![c; space.len()] }
    }

    pub fn from_fn(space: &Arc<PathSpace>, f: impl Fn(usize, &Path) -> S) -> Self {
        let v = space.paths().iter().enumerate().map(|(i, p)| f(i, p)).collect();
        Self { space: Arc::clone(space), v }
    }

    pub fn indicator(space: &Arc<PathSpace>, event: &[usize]) -> Self {
        let mut v = vec![S::zero(); space.len()];
        for &i in event {
            v[i] = S::one();
        }
        Self { space: Arc::clone(space), v }
    }

    pub fn space(&self) -> &Arc<PathSpace> {
        &self.space
    }

    pub fn value(&self, path: usize) -> &S {
        &self.v[path]
    }

    pub fn values(&self) -> &[S] {
        &self.v
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(&S, &S) -> S) -> Result<Self, SpaceError> {
        ensure_same(&self.space, &other.space)?;
        let v = self.v.iter().zip(&other.v).map(|(a, b)| f(a, b)).collect();
        Ok(Self { space: Arc::clone(&self.space), v })
    }

    pub fn mul(&self, other: &Self) -> Result<Self, SpaceError> {
        self.zip_with(other, |a, b| a.clone() * b.clone())
    }

    pub fn div(&self, other: &Self) -> Result<Self, SpaceError> {
        self.zip_with(other, |a, b| a.clone() / b.clone())
    }

    /// Largest pointwise absolute difference, as `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, SpaceError> {
        ensure_same(&self.space, &other.space)?;
        Ok(self
            .v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| (a.clone() - b.clone()).abs().as_f64())
            .fold(0.0, f64::max))
    }

    pub fn close_to(&self, other: &Self, tol: f64) -> Result<bool, SpaceError> {
        ensure_same(&self.space, &other.space)?;
        Ok(self.v.iter().zip(&other.v).all(|(a, b)| a.close_to(b, tol)))
    }
}

/// `E_μ[f | g]`: on each atom, the μ-weighted average of `f`.
pub fn cond_expect<S: Scalar>(f: &PathFunction<S>, g: &Partition, mu: &Measure<S>) -> Result<PathFunction<S>, SpaceError> {
    ensure_same(&f.space, &g.space)?;
    ensure_same(&f.space, &mu.space)?;
    let mut v = vec![S::zero(); f.space.len()];
    for (a, atom) in g.atoms.iter().enumerate() {
        let mass = mu.mass(atom);
        if !(mass > S::zero()) {
            return Err(SpaceError::NullAtom { atom: a });
        }
        let weighted = S::sum_all(atom.iter().map(|&i| f.v[i].clone() * mu.p[i].clone()));
        let value = weighted / mass;
        for &i in atom {
            v[i] = value.clone();
        }
    }
    Ok(PathFunction { space: Arc::clone(&f.space), v })
}

/// `d num / d den` restricted to σ-field `g`: `num(A) / den(A)` on each atom `A`.
pub fn rn_derivative<S: Scalar>(num: &Measure<S>, den: &Measure<S>, g: &Partition) -> Result<PathFunction<S>, SpaceError> {
    ensure_same(&num.space, &den.space)?;
    ensure_same(&num.space, &g.space)?;
    let mut v = vec![S::zero(); g.space.len()];
    for (a, atom) in g.atoms.iter().enumerate() {
        let d = den.mass(atom);
        if !(d > S::zero()) {
            return Err(SpaceError::DominanceViolated { atom: a });
        }
        let value = num.mass(atom) / d;
        for &i in atom {
            v[i] = value.clone();
        }
    }
    Ok(PathFunction { space: Arc::clone(&g.space), v })
}

/// `f` constant (within `tol`) on every atom of `g`.
pub fn is_measurable<S: Scalar>(f: &PathFunction<S>, g: &Partition, tol: f64) -> Result<bool, SpaceError> {
    Ok(measurability_witness(f, g, tol)?.is_none())
}

/// First pair of paths sharing an atom of `g` on which `f` differs.
pub fn measurability_witness<S: Scalar>(
    f: &PathFunction<S>,
    g: &Partition,
    tol: f64,
) -> Result<Option<(usize, usize)>, SpaceError> {
    ensure_same(&f.space, &g.space)?;
    for atom in &g.atoms {
        let first = atom[0];
        if let Some(&j) = atom.iter().find(|&&j| !f.v[j].close_to(&f.v[first], tol)) {
            return Ok(Some((first, j)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_space(horizon: usize) -> Arc<PathSpace> {
        let grid = TimeGrid::new(horizon, "t").unwrap();
        Arc::new(PathSpace::enumerate(grid, XAlphabet::single("x", ["0", "1"]), 1, 1 << 16).unwrap())
    }

    fn uniform(space: &Arc<PathSpace>) -> Measure<f64> {
        let n = space.len();
        Measure::new(space, vec![1.0 / n as f64; n], ParamPair::new(0, 0)).unwrap()
    }

    #[test]
    fn enumeration_is_exhaustive_and_ordered() {
        let s = binary_space(2);
        assert_eq!(s.len(), 16);
        assert_eq!(s.enumerated(), 16);
        assert!(s.paths().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.path(0), &Path { x: vec![0, 0], r: vec![0, 0] });
        // (x1, r1) is the most significant digit pair.
        assert_eq!(s.path(1), &Path { x: vec![0, 0], r: vec![0, 1] });
        assert_eq!(s.path(4), &Path { x: vec![0, 0], r: vec![1, 0] });
        for (i, p) in s.paths().iter().enumerate() {
            assert_eq!(s.canonical_index(p), i as u128);
            assert_eq!(s.index_of(p), Some(i));
        }
    }

    #[test]
    fn horizon_and_cap_limits() {
        assert!(matches!(TimeGrid::new(0, ""), Err(SpaceError::HorizonOutOfRange { .. })));
        assert!(matches!(TimeGrid::new(9, ""), Err(SpaceError::HorizonOutOfRange { .. })));
        let grid = TimeGrid::new(8, "").unwrap();
        let err = PathSpace::enumerate(grid, XAlphabet::single("x", ["0", "1"]), 1, 1000).unwrap_err();
        assert_eq!(err, SpaceError::CapExceeded { count: 65536, cap: 1000 });
    }

    #[test]
    fn multi_coordinate_alphabet_round_trips() {
        let a = XAlphabet::new(vec![
            Coordinate::new("w", ["0", "1"]),
            Coordinate::new("z", ["lo", "mid", "hi"]).revealed_by(1),
        ])
        .unwrap();
        assert_eq!(a.size(), 6);
        for s in 0..6u16 {
            assert_eq!(a.encode(&a.decode(s)), s);
            assert_eq!(a.parse_state(&a.state_label(s)), Some(s));
        }
        assert_eq!(a.state_label(4), "1,mid");
        assert!(XAlphabet::new(vec![Coordinate::new("x", ["0", "0"])]).is_err());
        assert!(XAlphabet::new(vec![Coordinate::new("x", ["NA"])]).is_err());
    }

    #[test]
    fn trivial_and_full_partitions() {
        let s = binary_space(2);
        assert_eq!(Partition::trivial(&s).n_atoms(), 1);
        assert_eq!(Partition::full(&s).n_atoms(), 16);
    }

    #[test]
    fn x_partition_groups_paths_sharing_x() {
        // On the 2-step binary space each x-path carries 4 r-paths; the
        // order interleaves (x_1, r_1, x_2, r_2), so x = (0,0) is 0,1,4,5.
        let s = binary_space(2);
        let px = generate_partition(&s, "X", |_, p| p.x.clone());
        assert_eq!(px.n_atoms(), 4);
        assert_eq!(px.atom(0), &[0, 1, 4, 5]);
        assert_eq!(px.atom(3), &[10, 11, 14, 15]);
    }

    #[test]
    fn join_identities_and_errors() {
        let s = binary_space(2);
        let px = generate_partition(&s, "X", |_, p| p.x.clone());
        let pr = generate_partition(&s, "R", |_, p| p.r.clone());
        let triv = Partition::trivial(&s);
        assert!(join(&triv, &px).unwrap().same_atoms(&px).unwrap());
        assert!(join(&px, &px).unwrap().same_atoms(&px).unwrap());
        let both = join(&px, &pr).unwrap();
        assert!(both.same_atoms(&Partition::full(&s)).unwrap());
        assert!(both.refines(&px).unwrap() && both.refines(&pr).unwrap());
        let other = binary_space(2);
        assert_eq!(join(&px, &Partition::trivial(&other)).unwrap_err(), SpaceError::IncompatibleSpaces);
    }

    #[test]
    fn conditional_expectation_edge_cases() {
        let s = binary_space(1);
        let mu = Measure::new(&s, vec![0.1f64, 0.2, 0.3, 0.4], ParamPair::new(0, 0)).unwrap();
        let f = PathFunction::new(&s, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let full = cond_expect(&f, &Partition::full(&s), &mu).unwrap();
        assert!(full.close_to(&f, 1e-15).unwrap());
        let mean = cond_expect(&f, &Partition::trivial(&s), &mu).unwrap();
        assert!(mean.values().iter().all(|v| (v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn measure_validation() {
        let s = binary_space(1);
        assert!(Measure::new(&s, vec![0.25; 4], ParamPair::new(0, 0)).is_ok());
        assert!(Measure::new(&s, vec![0.5, 0.5, 0.0, 0.0], ParamPair::new(0, 0)).is_err());
        assert!(Measure::new(&s, vec![0.3; 4], ParamPair::new(0, 0)).is_err());
        assert!(Measure::new(&s, vec![0.5; 2], ParamPair::new(0, 0)).is_err());
    }

    #[test]
    fn rn_derivative_trivial_cases() {
        let s = binary_space(1);
        let mu = Measure::new(&s, vec![0.1f64, 0.2, 0.3, 0.4], ParamPair::new(0, 0)).unwrap();
        let nu = uniform(&s);
        let same = rn_derivative(&mu, &mu, &Partition::full(&s)).unwrap();
        assert!(same.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let triv = rn_derivative(&mu, &nu, &Partition::trivial(&s)).unwrap();
        assert!(triv.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let full = rn_derivative(&mu, &nu, &Partition::full(&s)).unwrap();
        assert!((full.value(3) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn measurability_predicate() {
        let s = binary_space(1);
        let c = PathFunction::constant(&s, 2.5f64);
        assert!(is_measurable(&c, &Partition::trivial(&s), 0.0).unwrap());
        let ind = PathFunction::<f64>::indicator(&s, &[2]);
        assert!(!is_measurable(&ind, &Partition::trivial(&s), 1e-12).unwrap());
        assert!(is_measurable(&ind, &Partition::full(&s), 0.0).unwrap());
    }

    #[test]
    fn restrict_keeps_canonical_order() {
        let s = binary_space(1);
        let sub = s.restrict(&[3, 1]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.path(0), s.path(1));
        assert_eq!(sub.enumerated(), 4);
        assert!(!sub.same_as(&s));
    }
}
