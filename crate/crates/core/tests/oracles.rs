//! Library results checked against small independent reimplementations.

use mixforge_core::dataset::{correlation_matrix, CorrelationMethod, DatasetTable, TargetId};
use mixforge_core::designer::{
    generate_candidate, probability_of_bound, probability_of_success, Bound, GeneratorParams,
    TargetCriteria,
};
use mixforge_core::forest::{fit_forest, fit_forest_with_bootstraps, Hyperparameters};
use mixforge_core::models::r_squared;
use mixforge_core::properties::{
    carbonation_depth, cost, embodied_carbon, fit_carbonation, CarbonationObservation,
    MaterialCoefficients,
};
use mixforge_core::stats::normal_cdf;
use mixforge_core::{CementType, MixComposition, PredictionWithUncertainty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// --- CART -----------------------------------------------------------------

/// Exhaustive 1-D regression tree: tries every cut between distinct sorted
/// values, keeps the lowest SSE (first wins on ties), recurses.
enum Node {
    Leaf(f64),
    Split(f64, Box<Node>, Box<Node>),
}

fn sse(ys: &[f64]) -> f64 {
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - m) * (y - m)).sum()
}

fn brute_tree(pts: &[(f64, f64)], min_split: usize) -> Node {
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    if pts.len() < min_split || sse(&ys) == 0.0 {
        return Node::Leaf(mean);
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in xs.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let l: Vec<f64> = pts.iter().filter(|p| p.0 <= t).map(|p| p.1).collect();
        let r: Vec<f64> = pts.iter().filter(|p| p.0 > t).map(|p| p.1).collect();
        let s = sse(&l) + sse(&r);
        if !best.is_some_and(|(bs, _)| s >= bs) {
            best = Some((s, t));
        }
    }
    match best {
        Some((s, t)) if s < sse(&ys) => {
            let l: Vec<_> = pts.iter().copied().filter(|p| p.0 <= t).collect();
            let r: Vec<_> = pts.iter().copied().filter(|p| p.0 > t).collect();
            Node::Split(t, Box::new(brute_tree(&l, min_split)), Box::new(brute_tree(&r, min_split)))
        }
        _ => Node::Leaf(mean),
    }
}

fn brute_predict(n: &Node, x: f64) -> f64 {
    match n {
        Node::Leaf(v) => *v,
        Node::Split(t, l, r) => brute_predict(if x <= *t { l } else { r }, x),
    }
}

#[test]
fn four_row_tree_by_hand() {
    // root cut at 2.5 (SSE 2 beats 82.7 and 66.7); both children then have
    // 2 rows, below min_samples_split = 3
    let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
    let y = [0.0, 0.0, 10.0, 12.0];
    let m = fit_forest_with_bootstraps(&x, &y, Hyperparameters::new(1, 1, 3), 0, vec![vec![0, 1, 2, 3]])
        .unwrap();
    let tree = &m.trees()[0];
    assert_eq!(tree.split_count(), 1);
    assert_eq!(tree.splits().next(), Some((0, 2.5)));
    assert_eq!(m.predict(&[1.0]).unwrap().mean, 0.0);
    assert_eq!(m.predict(&[4.0]).unwrap().mean, 11.0);
    assert_eq!(m.predict(&[2.5]).unwrap().mean, 0.0);
}

#[test]
fn four_row_trees_match_exhaustive_oracle() {
    let xs = [0.5, 1.7, 2.2, 3.9];
    let targets = [[3.0, -1.0, 4.0, 1.5], [0.0, 9.0, 2.0, 6.0], [5.0, 5.0, 1.0, 8.0]];
    let boots: [[u32; 4]; 4] = [[0, 1, 2, 3], [0, 0, 1, 3], [3, 2, 2, 1], [1, 1, 1, 0]];
    for y in &targets {
        for boot in &boots {
            for min_split in [2, 3, 4] {
                let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
                let m = fit_forest_with_bootstraps(
                    &x,
                    y,
                    Hyperparameters::new(1, 1, min_split),
                    7,
                    vec![boot.to_vec()],
                )
                .unwrap();
                let pts: Vec<(f64, f64)> = boot.iter().map(|&i| (xs[i as usize], y[i as usize])).collect();
                let oracle = brute_tree(&pts, min_split);
                for k in 0..=50 {
                    let q = -0.5 + k as f64 * 0.1;
                    let got = m.predict(&[q]).unwrap();
                    assert!(
                        (got.mean - brute_predict(&oracle, q)).abs() < 1e-12,
                        "y={y:?} boot={boot:?} mss={min_split} x={q}"
                    );
                    assert_eq!(got.sigma, 0.0);
                }
            }
        }
    }
}

#[test]
fn oob_tree_count_near_expectation() {
    let t = DatasetTable::supplementary();
    let (_, x, y) = t.training_set(TargetId::EnvImpact);
    let m = fit_forest(&x, &y, Hyperparameters::new(512, 6, 2), 42).unwrap();
    // 512 · (1 − 1/21)^21 ≈ 183.6
    let expected = 512.0 * (1.0 - 1.0 / 21.0f64).powi(21);
    let counts: Vec<usize> = (0..21).map(|r| m.oob_tree_count(r)).collect();
    assert!(counts.iter().all(|&c| c >= 1));
    let mean = counts.iter().sum::<usize>() as f64 / 21.0;
    assert!((mean - expected).abs() < 10.0, "mean OOB count {mean}");
}

// --- correlation & scoring --------------------------------------------------

fn two_pass_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn cement_env_pearson_matches_two_pass() {
    let t = DatasetTable::supplementary();
    let cement: Vec<f64> = t.records().iter().map(|r| r.composition.cement_pct).collect();
    let env: Vec<f64> = t.records().iter().map(|r| r.measured.env_impact.unwrap()).collect();
    let oracle = two_pass_pearson(&cement, &env);
    let m = correlation_matrix(&t, CorrelationMethod::Pearson).unwrap();
    let got = m.get("cement_pct", "env_impact").unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert!(got > 0.8, "{got}");
}

#[test]
fn strength_k_pearson_over_carbonation_rows() {
    let t = DatasetTable::supplementary();
    let (s, k): (Vec<f64>, Vec<f64>) = t
        .records()
        .iter()
        .filter_map(|r| Some((r.measured.strength?, r.measured.k4?)))
        .unzip();
    assert_eq!(s.len(), 16);
    let m = correlation_matrix(&t, CorrelationMethod::Pearson).unwrap();
    let got = m.get("strength", "k4").unwrap();
    assert!((got - two_pass_pearson(&s, &k)).abs() < 1e-12);
    assert!(got < 0.0);
}

#[test]
fn spearman_with_ties_by_hand() {
    // ranks of x: 1, 2.5, 2.5, 4; ranks of y: 2, 1, 3, 4
    let x = [1.0, 2.0, 2.0, 5.0];
    let y = [0.3, 0.1, 0.7, 0.9];
    let rx = [1.0, 2.5, 2.5, 4.0];
    let ry = [2.0, 1.0, 3.0, 4.0];
    let got = mixforge_core::stats::spearman(&x, &y).unwrap();
    assert!((got - two_pass_pearson(&rx, &ry)).abs() < 1e-15);
}

#[test]
fn r_squared_by_hand() {
    // SS_res = 0.25 + 0 + 1, SS_tot over mean 2 = 1 + 0 + 1
    let r2 = r_squared(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0]).unwrap();
    assert!((r2 - (1.0 - 1.25 / 2.0)).abs() < 1e-15);
}

// --- analytic properties ---------------------------------------------------

#[test]
fn embodied_carbon_and_cost_dot_products() {
    let c = MaterialCoefficients::default();
    // NC0.6 with CEM I: 0.912·14.2 + 0.007·77.3 + 0.0008·8.5, all / 100
    let nc = MixComposition::new(14.2, 48.9, 28.4, 8.5);
    let e = (0.912 * 14.2 + 0.007 * (48.9 + 28.4) + 0.0008 * 8.5) / 100.0;
    assert!((embodied_carbon(&nc, CementType::CemI_52_5N, &c) - e).abs() < 1e-15);
    assert!((e - 0.1350).abs() < 5e-4);
    let lc = MixComposition::new(10.5, 48.2, 32.6, 8.5);
    let k = (0.089 * 10.5 + 0.018 * (48.2 + 32.6) + 0.007 * 8.5) / 100.0;
    assert!((cost(&lc, CementType::CemI_52_5N, &c) - k).abs() < 1e-15);
    assert!((k - 0.0245).abs() < 5e-4);
    let water = MixComposition::new(0.0, 0.0, 0.0, 100.0);
    assert!((embodied_carbon(&water, CementType::CemI_52_5N, &c) - 0.0008).abs() < 1e-15);
    let cement = MixComposition::new(100.0, 0.0, 0.0, 0.0);
    assert!((cost(&cement, CementType::CemIIA_32_5R, &c) - 0.089).abs() < 1e-15);
}

#[test]
fn carbonation_depth_examples() {
    assert_eq!(carbonation_depth(3.0, 5.0, 0.0), 5.0);
    assert_eq!(carbonation_depth(2.0, 0.0, 9.0), 6.0);
    assert!((carbonation_depth(1.5, 1.0, 4.0) - 10f64.sqrt()).abs() < 1e-15);
}

/// Coarse-to-fine grid search over (k, x0) ≥ 0 minimising the SSE of
/// √(x0² + k² t) against the observations.
fn grid_search_fit(obs: &[(f64, f64)]) -> (f64, f64) {
    let sse = |k: f64, x0: f64| -> f64 {
        obs.iter()
            .map(|&(t, x)| {
                let r = (x0 * x0 + k * k * t).sqrt() - x;
                r * r
            })
            .sum()
    };
    let (mut kc, mut xc, mut half) = (2.5, 2.5, 2.5);
    // slow shrink so the search can walk along the shallow k–x0 valley
    for _ in 0..120 {
        let mut best = (f64::INFINITY, kc, xc);
        for i in 0..=20 {
            for j in 0..=20 {
                let k = (kc - half + i as f64 * half / 10.0).max(0.0);
                let x0 = (xc - half + j as f64 * half / 10.0).max(0.0);
                let s = sse(k, x0);
                if s < best.0 {
                    best = (s, k, x0);
                }
            }
        }
        kc = best.1;
        xc = best.2;
        half *= 0.75;
    }
    (kc, xc)
}

/// Same search over k alone.
fn grid_search_k(obs: &[(f64, f64)], x0: f64) -> (f64, f64) {
    let sse = |k: f64| -> f64 {
        obs.iter()
            .map(|&(t, x)| {
                let r = (x0 * x0 + k * k * t).sqrt() - x;
                r * r
            })
            .sum()
    };
    let (mut kc, mut half) = (2.5, 2.5);
    for _ in 0..120 {
        kc = (0..=20)
            .map(|i| (kc - half + i as f64 * half / 10.0).max(0.0))
            .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
            .unwrap();
        half *= 0.75;
    }
    (kc, x0)
}

fn series(k: f64, x0: f64, times: &[f64]) -> Vec<CarbonationObservation> {
    times
        .iter()
        .map(|&t| CarbonationObservation {
            t,
            x: carbonation_depth(k, x0, t),
            sigma_x: 0.0,
        })
        .collect()
}

#[test]
fn carbonation_fit_matches_grid_search() {
    let times = [1.0, 4.0, 9.0, 16.0, 25.0];
    let obs = series(1.5, 1.0, &times);
    let fit = fit_carbonation(&obs).unwrap();
    let (k, x0) = grid_search_fit(&obs.iter().map(|o| (o.t, o.x)).collect::<Vec<_>>());
    assert!((k - 1.5).abs() < 1e-6 && (x0 - 1.0).abs() < 1e-6, "oracle {k} {x0}");
    assert!((fit.k - k).abs() < 1e-6 && (fit.x0 - x0).abs() < 1e-6, "{fit:?}");
    assert_eq!(fit.k_err, 0.0);

    let fit = fit_carbonation(&series(2.0, 0.0, &[1.0, 4.0, 9.0, 16.0])).unwrap();
    assert!((fit.k - 2.0).abs() < 1e-6 && fit.x0.abs() < 1e-6);
}

#[test]
fn carbonation_fit_on_noisy_series_matches_grid_search() {
    let obs: Vec<CarbonationObservation> = [(7.0, 3.1), (14.0, 4.9), (28.0, 6.4), (56.0, 9.5), (91.0, 11.8)]
        .iter()
        .map(|&(t, x)| CarbonationObservation { t, x, sigma_x: 0.4 })
        .collect();
    let fit = fit_carbonation(&obs).unwrap();
    let (k, x0) = grid_search_fit(&obs.iter().map(|o| (o.t, o.x)).collect::<Vec<_>>());
    assert!((fit.k - k).abs() < 1e-6 && (fit.x0 - x0).abs() < 1e-6, "{fit:?} vs ({k}, {x0})");
    // upper refit moves k only; x0 stays at the central fit
    let upper: Vec<(f64, f64)> = obs.iter().map(|o| (o.t, o.x + o.sigma_x)).collect();
    let (ku, _) = grid_search_k(&upper, x0);
    assert!((fit.k_err - (ku - k).max(0.0)).abs() < 1e-6, "{fit:?} upper k {ku}");
}

// --- generator ---------------------------------------------------------------

#[test]
fn generator_at_wc_07_by_direct_evaluation() {
    let p = GeneratorParams::default();
    let c = generate_candidate(&p, 0.7).unwrap();
    let cement: f64 = 205.0 / 0.7;
    let aggregate = 2412.0 - 205.0 - cement;
    let share: f64 = 0.3674 + (0.7 - 0.6) * (0.4035 - 0.3674) / 0.2;
    assert!((share - 0.38545).abs() < 1e-12);
    assert!((c.sand_share - share).abs() < 1e-12);
    assert!((c.composition.cement_pct - cement / 2412.0 * 100.0).abs() < 1e-12);
    assert!((c.composition.cement_pct - 12.14).abs() < 5e-3);
    assert!((c.composition.sand_pct - share * aggregate / 2412.0 * 100.0).abs() < 1e-12);
    assert!((c.composition.total() - 100.0).abs() < 1e-9);
}

#[test]
fn generated_nc06_ratio_matches_table_rounding() {
    // the unrounded masses give total aggregate / cement ≈ 5.46
    let c = generate_candidate(&GeneratorParams::default(), 0.6).unwrap();
    let r = (c.composition.gravel_pct + c.composition.sand_pct) / c.composition.cement_pct;
    assert!((r - 5.5).abs() < 0.05, "{r}");
}

// --- probability -------------------------------------------------------------

/// Φ via the Maclaurin series of erf.
fn phi_series(z: f64) -> f64 {
    let u = z / std::f64::consts::SQRT_2;
    let mut term = u;
    let mut sum = u;
    let mut n = 0.0;
    while term.abs() > 1e-20 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= -u * u / n;
        sum += term / (2.0 * n + 1.0);
        if n > 400.0 {
            break;
        }
    }
    0.5 * (1.0 + 2.0 / std::f64::consts::PI.sqrt() * sum)
}

#[test]
fn normal_cdf_matches_erf_series() {
    assert!((phi_series(-1.0) - 0.158655).abs() < 1e-6);
    for i in -60..=60 {
        let z = i as f64 / 10.0;
        assert!((normal_cdf(z) - phi_series(z)).abs() < 1e-9, "z = {z}");
    }
    let p = PredictionWithUncertainty { mean: 1.5, sigma: 0.3 };
    let got = probability_of_bound(&p, &Bound::upper(TargetId::CarbonationK, 1.2));
    assert!((got - phi_series(-1.0)).abs() < 1e-6);
    let lower = probability_of_bound(&p, &Bound::lower(TargetId::CarbonationK, 1.2));
    assert!((lower - (1.0 - phi_series(-1.0))).abs() < 1e-6);
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random criteria over all five properties with their predictions.
fn random_case(rng: &mut ChaCha8Rng) -> (TargetCriteria, Vec<(TargetId, PredictionWithUncertainty)>) {
    let mut bounds = Vec::new();
    let mut preds = Vec::new();
    for t in TargetId::ALL {
        let mean = rng.gen_range(-2.0..2.0);
        let sigma = rng.gen_range(0.05..1.5);
        let threshold = mean + rng.gen_range(-1.0..2.5) * sigma;
        bounds.push(if rng.gen_bool(0.5) {
            Bound::upper(t, threshold)
        } else {
            Bound::lower(t, 2.0 * mean - threshold)
        });
        preds.push((t, PredictionWithUncertainty { mean, sigma }));
    }
    (TargetCriteria::new("random", bounds).unwrap(), preds)
}

#[test]
fn joint_probability_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    const N: usize = 1_000_000;
    for _ in 0..10 {
        let (criteria, preds) = random_case(&mut rng);
        let (_, joint) = probability_of_success(&preds, &criteria).unwrap();
        let mut hits = 0usize;
        for _ in 0..N {
            let ok = criteria.bounds.iter().all(|b| {
                let p = preds.iter().find(|(t, _)| *t == b.target).unwrap().1;
                let v = p.mean + p.sigma * standard_normal(&mut rng);
                match b.direction {
                    mixforge_core::BoundDirection::Upper => v < b.threshold,
                    mixforge_core::BoundDirection::Lower => v > b.threshold,
                }
            });
            hits += ok as usize;
        }
        let mc = hits as f64 / N as f64;
        let band = (3.0 * (joint * (1.0 - joint) / N as f64).sqrt()).max(1e-4);
        assert!((mc - joint).abs() < 0.005, "mc {mc} vs {joint}");
        assert!((mc - joint).abs() < band, "mc {mc} vs {joint}, band {band}");
    }
}
