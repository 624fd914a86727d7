use coarsen::gcmp::{observed_partition, JointModel};
use coarsen::scenarios::study::draw;
use coarsen::scenarios::{bias_report, find, fit_mle, law_at, run_study, simulate, write_csv, Method, Objective, Params, Search, StudyFile, StudySpec};

fn m1(name: &str) -> JointModel<f64> {
    find(name).unwrap().build::<f64>(&Params::new()).unwrap().model
}

fn golden() -> Search {
    Search::Golden { lo: 0.05, hi: 0.95, grid_points: 19 }
}

fn spec(n: usize, reps: usize, psi: usize) -> StudySpec {
    StudySpec { true_theta: "0.3".into(), true_psi: Some(psi), sample_size: n, n_replicates: reps, seed: 7, search: golden() }
}

#[test]
fn simulation_is_reproducible_and_empty_at_zero() {
    let m = m1("m1_ignorable");
    assert!(simulate(&m, &[0.3], 1, 0, 1, 0).unwrap().is_empty());
    let a = simulate(&m, &[0.3], 1, 500, 11, 3).unwrap();
    let b = simulate(&m, &[0.3], 1, 500, 11, 3).unwrap();
    let c = simulate(&m, &[0.3], 1, 500, 11, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn atom_frequencies_match_enumerated_masses() {
    use rand::SeedableRng;
    let m = m1("m1_ignorable");
    let law = law_at(&m, &[0.3], 1).unwrap();
    let n = 10_000;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let draws = draw(&law, n, &mut rng);
    let o = observed_partition(&m);
    for atom in o.atoms() {
        let p: f64 = atom.iter().map(|&i| law[i]).sum();
        let hits = draws.iter().filter(|&&i| atom.contains(&i)).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() <= 4.0 * sigma, "atom mass {p}, hits {hits}");
    }
}

#[test]
fn single_observation_picks_the_larger_ratio() {
    let m = m1("m1_ignorable");
    let grid = Search::Grid { values: vec![0.5, 0.3] };
    for i in 0..m.space().len() {
        let obj = Objective::from_draws(&m, 0, &[i]).unwrap();
        let (l3, l5) = (obj.log_likelihood(Method::Ignoring, 0.3), obj.log_likelihood(Method::Ignoring, 0.5));
        let expected = if l5 > l3 { 0.5 } else { 0.3 };
        assert_eq!(fit_mle(&obj, Method::Ignoring, &grid).unwrap(), expected);
    }
}

#[test]
fn ties_go_to_the_smallest_value() {
    let m = m1("m1_ignorable");
    let obj = Objective::new(&m, 0, &vec![1.0; m.space().len()]).unwrap();
    let a = obj.log_likelihood(Method::Ignoring, 0.4);
    let grid = Search::Grid { values: vec![0.4, 0.4, 0.9] };
    assert!(a > obj.log_likelihood(Method::Ignoring, 0.9));
    assert_eq!(fit_mle(&obj, Method::Ignoring, &grid).unwrap(), 0.4);
}

#[test]
fn ignorable_fits_agree_with_the_truth() {
    let m = m1("m1_ignorable");
    let law = law_at(&m, &[0.3], 1).unwrap();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let draws = draw(&law, 5000, &mut rng);
    let obj = Objective::from_draws(&m, 1, &draws).unwrap();
    for method in [Method::Ignoring, Method::Correct] {
        let th = fit_mle(&obj, method, &golden()).unwrap();
        assert!((th - 0.3).abs() < 0.03, "{method:?}: {th}");
        assert!(golden().contains(th));
    }
}

#[test]
fn population_targets() {
    let ign = m1("m1_ignorable");
    let study = run_study(&ign, &spec(0, 0, 1)).unwrap();
    let report = bias_report(&ign, &study).unwrap();
    for s in &report.methods {
        assert!((s.population_argmax - 0.3).abs() < 1e-6, "{s:?}");
        assert_eq!(s.mean, None);
        assert_eq!(s.replicates, 0);
    }
    let ant = m1("m1_anticipating");
    let study = run_study(&ant, &spec(0, 5, 0)).unwrap();
    assert!(study.results.is_empty());
    let report = bias_report(&ant, &study).unwrap();
    // Expected score 0.57/θ - 1.05/(1-θ) vanishes at 0.57/1.62.
    assert!((report.methods[0].population_argmax - 0.57 / 1.62).abs() < 1e-6);
    assert!((report.methods[1].population_argmax - 0.3).abs() < 1e-6);
}

#[test]
fn studies_are_reproducible() {
    let m = m1("m1_anticipating");
    let a = run_study(&m, &spec(300, 6, 0)).unwrap();
    let b = run_study(&m, &spec(300, 6, 0)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.results.len(), 6);
    assert!(a.results.iter().all(|&(x, y)| golden().contains(x) && golden().contains(y)));
}

#[test]
fn csv_masks_hidden_values() {
    let m = m1("m1_ignorable");
    let obs: Vec<_> = m.space().paths().iter().map(|p| coarsen::gcmp::Observation::of(m.alphabet(), p)).collect();
    let mut out = Vec::new();
    write_csv(&m, &obs, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("subject,r_1,x_obs_1,r_2,x_obs_2"));
    assert!(text.contains(",0,NA"));
    assert_eq!(text.lines().count(), obs.len() + 1);
}

#[test]
fn study_files_name_one_model() {
    let ok = r#"
scenario = "m1_anticipating"
[study]
true_theta = "0.3"
sample_size = 10
n_replicates = 2
seed = 1
search = { kind = "grid", values = [0.3, 0.5] }
"#;
    let f = StudyFile::from_toml(ok).unwrap();
    let m = f.build(100_000).unwrap();
    let s = run_study(&m, &f.study).unwrap();
    assert!(s.results.iter().all(|&(a, b)| [0.3, 0.5].contains(&a) && [0.3, 0.5].contains(&b)));
    assert!(StudyFile::from_toml(&ok.replace("scenario = \"m1_anticipating\"", "")).is_err());
    assert!(StudyFile::from_toml(&ok.replace("seed = 1", "seed = 1\nbogus = 2")).is_err());
}

#[test]
fn tabular_models_search_only_their_grid() {
    let text = r#"
[model]
name = "tab"
horizon = 1
[[model.coordinates]]
name = "x"
symbols = ["0", "1"]
[model.process]
theta = [["0.3"], ["0.5"]]
[[model.process.rows]]
probs = [["0.7", "0.3"], ["0.5", "0.5"]]
[model.mechanism]
psi = [[]]
builder = "always-observed"
[study]
true_theta = "0.3"
sample_size = 50
n_replicates = 1
seed = 3
search = { kind = "golden", lo = 0.1, hi = 0.9, grid_points = 5 }
"#;
    let f = StudyFile::from_toml(text).unwrap();
    let m = f.build(100_000).unwrap();
    assert!(run_study(&m, &f.study).is_err());
    let on_grid = StudyFile::from_toml(&text.replace(r#"{ kind = "golden", lo = 0.1, hi = 0.9, grid_points = 5 }"#, r#"{ kind = "grid", values = [0.5, 0.3] }"#)).unwrap();
    let s = run_study(&m, &on_grid.study).unwrap();
    assert!(s.results.iter().all(|&(a, _)| a == 0.3 || a == 0.5));
    let off_grid = text.replace(r#"true_theta = "0.3""#, r#"true_theta = "0.4""#);
    assert!(run_study(&m, &StudyFile::from_toml(&off_grid).unwrap().study).is_err());
}
