//! End-to-end fits on exponential data with closed-form effects.

use csf_core::forest::Node;
use csf_core::inference::{average_treatment_effect, DrScores};
use csf_core::{CensoringCheck, CensoringModel, CsfModel, CsfParams, Matrix, Propensity, SurvivalDataset, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E[min(T, h)]` for `T ~ Exp(rate)`.
fn rmst(rate: f64, h: f64) -> f64 {
    -(-rate * h).exp_m1() / rate
}

/// Units with `p` uniform covariates, a fair coin treatment, event rate
/// `rate(x, w)` and optional exponential censoring.
fn draw(n: usize, p: usize, seed: u64, rate: impl Fn(&[f64], bool) -> f64, censor: Option<f64>) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n * p);
    let (mut y, mut w, mut d) = (Vec::new(), Vec::new(), Vec::new());
    let exp = |rng: &mut ChaCha8Rng, r: f64| -(1.0 - rng.random::<f64>()).ln() / r;
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let wi = rng.random_bool(0.5);
        let t = exp(&mut rng, rate(&x, wi));
        let c = censor.map_or(f64::INFINITY, |r| exp(&mut rng, r));
        y.push(t.min(c));
        d.push(t <= c);
        w.push(wi);
        xs.extend(x);
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let check = if censor.is_some() {
        CensoringCheck::Required
    } else {
        CensoringCheck::NotRequired
    };
    SurvivalDataset::new(names, Matrix::from_row_major(n, p, xs).unwrap(), y, w, d, check).unwrap()
}

fn params(h: f64, trees: usize, seed: u64) -> CsfParams {
    let mut p = CsfParams::new(h);
    p.forest.num_trees = trees;
    p.nuisance_forest.num_trees = 100;
    p.censoring_forest.num_trees = 100;
    p.seed = seed;
    p
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn constant_effect_without_censoring() {
    let h = 2.0;
    let truth = rmst(0.5, h) - rmst(1.0, h);
    let ds = draw(2000, 3, 1, |_, w| if w { 0.5 } else { 1.0 }, None);
    let model = CsfModel::fit(&ds, &params(h, 300, 1)).unwrap();
    assert_eq!(model.diagnostics.n_complete, 2000);
    let oob = mean(&model.tau_oob);
    assert!((oob - truth).abs() < 0.1, "mean OOB CATE {oob} vs {truth}");
    let ate = average_treatment_effect(&DrScores::from_model(&model).unwrap()).unwrap();
    assert!((ate.estimate - truth).abs() < 3.0 * ate.std_err, "{ate:?} vs {truth}");
}

#[test]
fn null_effect_is_centered_under_censoring() {
    let ds = draw(2000, 3, 2, |_, _| 1.0, Some(0.4));
    let model = CsfModel::fit(&ds, &params(1.5, 300, 2)).unwrap();
    let oob = mean(&model.tau_oob);
    assert!(oob.abs() < 0.1, "mean OOB CATE {oob}");
    let ate = average_treatment_effect(&DrScores::from_model(&model).unwrap()).unwrap();
    assert!(ate.estimate.abs() < 3.0 * ate.std_err, "{ate:?}");
}

#[test]
fn survival_probability_target_with_km_censoring() {
    let h: f64 = 1.0;
    let truth = (-0.5 * h).exp() - (-h).exp();
    let ds = draw(2000, 3, 3, |_, w| if w { 0.5 } else { 1.0 }, Some(0.3));
    let mut p = params(h, 300, 3);
    p.target = Target::SurvivalProbability;
    p.censoring_model = CensoringModel::Km;
    p.propensity = Propensity::Constant(0.5);
    let model = CsfModel::fit(&ds, &p).unwrap();
    assert!(model.censoring_forest.is_none());
    assert!(model.propensity_forest.is_none());
    let oob = mean(&model.tau_oob);
    assert!((oob - truth).abs() < 0.06, "mean OOB CATE {oob} vs {truth}");
}

#[test]
fn step_effect_is_found_at_the_root() {
    // Effect only when x1 > 0.5; x2..x4 are noise.
    let seeds = 10;
    let mut total = 0;
    let mut on_target = 0;
    for seed in 0..seeds {
        let ds = draw(2000, 4, 100 + seed, |x, w| if w && x[0] > 0.5 { 0.2 } else { 1.0 }, Some(0.2));
        let model = CsfModel::fit(&ds, &params(3.0, 50, seed)).unwrap();
        for tree in model.final_forest.trees() {
            total += 1;
            if let Node::Split { feature, threshold, .. } = &tree.nodes()[0] {
                if *feature == 0 && (0.4..0.6).contains(threshold) {
                    on_target += 1;
                }
            }
        }
    }
    let share = on_target as f64 / total as f64;
    assert!(share >= 0.95, "root splits near x1 = 0.5 in {on_target}/{total} trees");
}

#[test]
fn step_effect_cates_separate() {
    let h = 3.0;
    let high = rmst(0.2, h) - rmst(1.0, h);
    let ds = draw(2000, 4, 7, |x, w| if w && x[0] > 0.5 { 0.2 } else { 1.0 }, Some(0.2));
    let model = CsfModel::fit(&ds, &params(h, 300, 7)).unwrap();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for (i, &t) in model.tau_oob.iter().enumerate() {
        if ds.x().row(i)[0] > 0.5 {
            hi.push(t);
        } else {
            lo.push(t);
        }
    }
    let (lo, hi) = (mean(&lo), mean(&hi));
    assert!(lo.abs() < 0.25, "no-effect half {lo}");
    assert!((hi - high).abs() < 0.25, "effect half {hi} vs {high}");
}

#[test]
fn saved_model_predicts_identically() {
    let ds = draw(400, 2, 9, |x, w| if w { 0.5 + x[1] } else { 1.0 }, Some(0.3));
    let model = CsfModel::fit(&ds, &params(1.0, 60, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = CsfModel::load(&path).unwrap();
    assert_eq!(back, model);
    let a = model.predict_cate(ds.x()).unwrap();
    let b = back.predict_cate(ds.x()).unwrap();
    assert_eq!(a, b);
    assert!(back.check_training_data(&ds).is_ok());
    let other = draw(400, 2, 10, |_, _| 1.0, Some(0.3));
    assert!(back.check_training_data(&other).is_err());
}
