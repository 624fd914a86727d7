//! Monte Carlo estimation of a scalar θ by two likelihoods: one that ignores
//! the mechanism and one that uses the observed likelihood at the true ψ.
//!
//! Random numbers come from ChaCha8 (`rand_chacha::ChaCha8Rng`). Replicate
//! `k` of a study with seed `s` uses `ChaCha8Rng::seed_from_u64(s)` moved to
//! stream `k` with `set_stream(k)`, so replicates are independent and any
//! one of them can be regenerated alone. A subject is drawn by inverse CDF:
//! `u = rng.gen::<f64>()` picks the first support path (in enumeration
//! order) whose cumulative probability exceeds `u`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gcmp::file::{parse_toml, FileError, ModelSpec};
use crate::gcmp::{observed_partition, JointModel, Observation};
use crate::scalar::Scalar;

use super::{find, Params, Result, ScenarioError};

/// Width at which golden-section search stops.
pub const GOLDEN_TOL: f64 = 1e-4;
const POPULATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Likelihood of the revealed X-values alone.
    Ignoring,
    /// Observed likelihood with ψ fixed at its true value.
    Correct,
}

/// Domain of the θ search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Search {
    /// Finite candidate set; ties go to the smallest value.
    Grid { values: Vec<f64> },
    /// Coarse grid of `grid_points` equally spaced values on `[lo, hi]`,
    /// then golden-section search around the best one.
    Golden { lo: f64, hi: f64, grid_points: usize },
}

impl Search {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ScenarioError::Study(m.into()));
        match self {
            Search::Grid { values } if values.is_empty() => bad("empty search grid"),
            Search::Grid { values } if values.iter().any(|v| !v.is_finite()) => bad("non-finite grid value"),
            Search::Golden { lo, hi, .. } if !(lo.is_finite() && hi.is_finite() && lo < hi) => bad("golden bracket needs lo < hi"),
            Search::Golden { grid_points, .. } if *grid_points < 2 => bad("golden search needs at least 2 grid points"),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        match self {
            Search::Grid { values } => values.contains(&theta),
            Search::Golden { lo, hi, .. } => (*lo..=*hi).contains(&theta),
        }
    }
}

/// Probability of each support path at an arbitrary scalar θ and grid ψ.
pub fn law_at(model: &JointModel<f64>, theta: &[f64], psi: usize) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    if psi >= model.n_psi() {
        return Err(ScenarioError::Study(format!("ψ index {psi} outside the grid of {}", model.n_psi())));
    }
    let law: Vec<f64> = (0..model.space().len())
        .map(|i| model.process().path_prob(theta, &model.space().path(i).x) * model.r_prob(psi, i))
        .collect();
    let total: f64 = law.iter().sum();
    if law.iter().any(|p| !p.is_finite() || *p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(ScenarioError::Study(format!("θ = {theta:?} does not give a probability law on the support")));
    }
    Ok(law)
}

fn check_theta(model: &JointModel<f64>, theta: &[f64]) -> Result<()> {
    if theta.len() != model.theta(0).len() {
        return Err(ScenarioError::Study(format!("θ has {} components, the model expects {}", theta.len(), model.theta(0).len())));
    }
    if !model.process().continuous_theta && !(0..model.n_theta()).any(|k| model.theta(k) == theta) {
        return Err(ScenarioError::Study(format!("θ = {theta:?} is off the grid of a tabular process kernel")));
    }
    Ok(())
}

/// Support-path indices of `n` independent subjects.
pub fn draw(law: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(law.len());
    let mut acc = 0.0;
    for p in law {
        acc += p;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(law.len() - 1)
        })
        .collect()
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// `n` observations drawn at `(θ, ψ#psi)` from replicate stream `replicate`.
pub fn simulate(model: &JointModel<f64>, theta: &[f64], psi: usize, n: usize, seed: u64, replicate: u64) -> Result<Vec<Observation>> {
    let law = law_at(model, theta, psi)?;
    let mut rng = replicate_rng(seed, replicate);
    Ok(draw(&law, n, &mut rng).into_iter().map(|i| Observation::of(model.alphabet(), model.space().path(i))).collect())
}

/// One row per subject: `subject, r_1, x_obs_1, ..., r_τ, x_obs_τ`, with
/// masked values written as `NA` and coordinates joined by `;`.
pub fn write_csv<S: Scalar, W: Write>(model: &JointModel<S>, observations: &[Observation], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string()];
    for t in 1..=model.horizon() {
        header.push(format!("r_{t}"));
        header.push(format!("x_obs_{t}"));
    }
    w.write_record(&header)?;
    for (k, obs) in observations.iter().enumerate() {
        let mut row = vec![(k + 1).to_string()];
        for (r, x) in obs.render(model.alphabet(), model.r_dim()) {
            row.push(r);
            row.push(x);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One observed atom's contribution to a log-likelihood.
#[derive(Debug, Clone)]
struct Term {
    weight: f64,
    /// X-paths consistent with the revealed values.
    consistent: Vec<usize>,
    /// Support paths of the atom as (X-path id, q at the true ψ).
    atom: Vec<(usize, f64)>,
}

/// Weighted log-likelihood over observed atoms as a function of scalar θ.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    model: &'a JointModel<f64>,
    terms: Vec<Term>,
}

impl<'a> Objective<'a> {
    /// Atoms weighted by `weights`, indexed by support path; the weight of an
    /// atom is the sum over its paths. `true_psi` fixes q for the correct
    /// method.
    pub fn new(model: &'a JointModel<f64>, true_psi: usize, path_weights: &[f64]) -> Result<Self> {
        if model.theta(0).len() != 1 {
            return Err(ScenarioError::Study("estimation needs a scalar θ".into()));
        }
        if true_psi >= model.n_psi() {
            return Err(ScenarioError::Study(format!("ψ index {true_psi} outside the grid of {}", model.n_psi())));
        }
        let o = observed_partition(model);
        let alphabet = model.alphabet();
        let xs = model.x_paths();
        let terms = o
            .atoms()
            .iter()
            .filter_map(|atom| {
                let weight: f64 = atom.iter().map(|&i| path_weights[i]).sum();
                (weight > 0.0).then(|| {
                    let seen = Observation::of(alphabet, model.space().path(atom[0]));
                    let consistent = (0..xs.len()).filter(|&k| Observation::under(alphabet, &xs[k], &seen.r) == seen).collect();
                    let atom = atom.iter().map(|&i| (model.x_id(i), *model.r_prob(true_psi, i))).collect();
                    Term { weight, consistent, atom }
                })
            })
            .collect();
        Ok(Self { model, terms })
    }

    /// Objective with each support path weighted by its count in `draws`.
    pub fn from_draws(model: &'a JointModel<f64>, true_psi: usize, draws: &[usize]) -> Result<Self> {
        let mut counts = vec![0.0; model.space().len()];
        for &i in draws {
            counts[i] += 1.0;
        }
        Self::new(model, true_psi, &counts)
    }

    pub fn log_likelihood(&self, method: Method, theta: f64) -> f64 {
        let px: Vec<f64> = self.model.x_paths().iter().map(|x| self.model.process().path_prob(&[theta], x)).collect();
        self.terms
            .iter()
            .map(|t| {
                let mass: f64 = match method {
                    Method::Ignoring => t.consistent.iter().map(|&k| px[k]).sum(),
                    Method::Correct => t.atom.iter().map(|&(k, q)| px[k] * q).sum(),
                };
                t.weight * mass.ln()
            })
            .sum()
    }
}

fn golden(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn maximize(objective: &Objective, method: Method, search: &Search, tol: f64) -> Result<f64> {
    search.validate()?;
    if !objective.model.process().continuous_theta {
        let on_grid = match search {
            Search::Grid { values } => values.iter().all(|&v| check_theta(objective.model, &[v]).is_ok()),
            Search::Golden { .. } => false,
        };
        if !on_grid {
            return Err(ScenarioError::Study("a tabular process kernel can only be searched over its own θ grid".into()));
        }
    }
    let f = |th: f64| objective.log_likelihood(method, th);
    let best_of = |points: &[f64]| -> Result<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, &p) in points.iter().enumerate() {
            let v = f(p);
            if v.is_nan() {
                return Err(ScenarioError::NonFinite(p));
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((k, v));
            }
        }
        Ok(best.expect("nonempty search"))
    };
    let (theta, value) = match search {
        Search::Grid { values } => {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let (k, v) = best_of(&sorted)?;
            (sorted[k], v)
        }
        Search::Golden { lo, hi, grid_points } => {
            let step = (hi - lo) / (*grid_points - 1) as f64;
            let points: Vec<f64> = (0..*grid_points).map(|k| if k + 1 == *grid_points { *hi } else { lo + step * k as f64 }).collect();
            let (k, v) = best_of(&points)?;
            let a = points[k.saturating_sub(1)];
            let b = points[(k + 1).min(points.len() - 1)];
            let refined = golden(&f, a, b, tol).clamp(*lo, *hi);
            let fr = f(refined);
            if fr > v {
                (refined, fr)
            } else {
                (points[k], v)
            }
        }
    };
    if !value.is_finite() {
        return Err(ScenarioError::NonFinite(theta));
    }
    Ok(theta)
}

/// Maximizer of the log-likelihood over the search domain.
pub fn fit_mle(objective: &Objective, method: Method, search: &Search) -> Result<f64> {
    maximize(objective, method, search, GOLDEN_TOL)
}

/// Study block of a study file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    /// Scalar θ generating the data, as a decimal string.
    pub true_theta: String,
    /// Grid index of the true ψ; defaults to the reference ψ.
    #[serde(default)]
    pub true_psi: Option<usize>,
    pub sample_size: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub search: Search,
}

/// A study file: either a catalog scenario with parameters or an inline
/// model in the model-file format, plus a `[study]` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub study: StudySpec,
}

impl StudyFile {
    pub fn from_toml(text: &str) -> Result<Self, FileError> {
        let file: Self = parse_toml(text)?;
        if file.scenario.is_some() == file.model.is_some() {
            return Err(FileError::Invalid("a study file names exactly one of `scenario` or `[model]`".into()));
        }
        if file.model.is_some() && !file.params.is_empty() {
            return Err(FileError::Invalid("`params` only applies to catalog scenarios".into()));
        }
        Ok(file)
    }

    pub fn build(&self, cap: u64) -> Result<JointModel<f64>, StudyFileError> {
        match (&self.scenario, &self.model) {
            (Some(name), _) => {
                let params = Params { values: self.params.clone(), cap };
                Ok(find(name)?.build::<f64>(&params)?.model)
            }
            (None, Some(spec)) => Ok(spec.build::<f64>(cap)?.model),
            (None, None) => Err(FileError::Invalid("no model".into()).into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StudyFileError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Executed study: per replicate, `(θ̂ ignoring, θ̂ correct)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationStudy {
    pub scenario: String,
    pub true_theta: f64,
    pub true_psi: usize,
    pub search: Search,
    pub n_replicates: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub results: Vec<(f64, f64)>,
}

/// Runs every replicate in parallel. A zero sample size yields no
/// replicate results.
pub fn run_study(model: &JointModel<f64>, spec: &StudySpec) -> Result<EstimationStudy> {
    let true_theta = f64::parse_decimal(&spec.true_theta)
        .ok_or_else(|| ScenarioError::Study(format!("true_theta {:?} is not a number", spec.true_theta)))?;
    let true_psi = spec.true_psi.unwrap_or(model.reference().psi);
    spec.search.validate()?;
    let law = law_at(model, &[true_theta], true_psi)?;
    let replicates = if spec.sample_size == 0 { 0 } else { spec.n_replicates };
    let results = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(spec.seed, k);
            let draws = draw(&law, spec.sample_size, &mut rng);
            let objective = Objective::from_draws(model, true_psi, &draws)?;
            Ok((
                fit_mle(&objective, Method::Ignoring, &spec.search)?,
                fit_mle(&objective, Method::Correct, &spec.search)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimationStudy {
        scenario: model.name.clone(),
        true_theta,
        true_psi,
        search: spec.search.clone(),
        n_replicates: spec.n_replicates,
        sample_size: spec.sample_size,
        seed: spec.seed,
        results,
    })
}

/// Sample summary of one method plus its population target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub replicates: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub se: Option<f64>,
    pub bias: Option<f64>,
    /// Maximizer of the expected log-likelihood under the true law.
    pub population_argmax: f64,
    pub population_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub scenario: String,
    pub true_theta: f64,
    pub true_psi: Vec<f64>,
    pub sample_size: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub search: Search,
    pub methods: Vec<MethodSummary>,
}

fn summarize(values: &mut [f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return (None, None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None, None);
    }
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    let sd = (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt();
    (Some(mean), Some(sd), Some(sd / (n as f64).sqrt()))
}

/// Summaries per method, with the population argmax found by enumerating
/// the true law over the search domain.
pub fn bias_report(model: &JointModel<f64>, study: &EstimationStudy) -> Result<BiasReport> {
    let law = law_at(model, &[study.true_theta], study.true_psi)?;
    let population = Objective::new(model, study.true_psi, &law)?;
    let methods = [Method::Ignoring, Method::Correct]
        .into_iter()
        .map(|method| {
            let mut values: Vec<f64> = study
                .results
                .iter()
                .map(|&(a, b)| if method == Method::Ignoring { a } else { b })
                .collect();
            let (mean, sd, se) = summarize(&mut values);
            let target = maximize(&population, method, &study.search, POPULATION_TOL)?;
            Ok(MethodSummary {
                method,
                replicates: values.len(),
                mean,
                sd,
                se,
                bias: mean.map(|m| m - study.true_theta),
                population_argmax: target,
                population_bias: target - study.true_theta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        scenario: study.scenario.clone(),
        true_theta: study.true_theta,
        true_psi: model.psi(study.true_psi).to_vec(),
        sample_size: study.sample_size,
        n_replicates: study.n_replicates,
        seed: study.seed,
        search: study.search.clone(),
        methods,
    })
}
