use neurongauge_core::dataset::ActivationVector;
use neurongauge_core::scoring::{
    parse_explanation, predict, score_explanation, Cluster, ConceptMap, Explanation, Formula, LinearTerm,
};
use neurongauge_core::seed::SeedTree;
use proptest::prelude::*;
use rand::Rng;

const NAMES: [&str; 3] = ["a", "b", "c"];

/// Every formula over `a`, `b`, `c` with depth at most `depth` (a leaf has depth 0).
fn formulas(depth: usize) -> Vec<Formula> {
    let leaves: Vec<Formula> = NAMES.iter().map(|n| Formula::leaf(*n)).collect();
    if depth == 0 {
        return leaves;
    }
    let below = formulas(depth - 1);
    let mut out = below.clone();
    for f in &below {
        out.push(Formula::negate(f.clone()));
    }
    for x in &below {
        for y in &below {
            out.push(Formula::And(vec![x.clone(), y.clone()]));
            out.push(Formula::Or(vec![x.clone(), y.clone()]));
        }
    }
    out
}

fn truth(f: &Formula, env: &[bool; 3]) -> bool {
    match f {
        Formula::Leaf(id) => env[NAMES.iter().position(|n| n == id).unwrap()],
        Formula::Not(x) => !truth(x, env),
        Formula::And(xs) => xs.iter().all(|x| truth(x, env)),
        Formula::Or(xs) => xs.iter().any(|x| truth(x, env)),
    }
}

/// All 8 assignments laid out as 8 inputs.
fn truth_table() -> Vec<Vec<f64>> {
    (0..3)
        .map(|k| (0..8).map(|row| f64::from((row >> k) & 1)).collect())
        .collect()
}

fn map_of<'a>(cols: &'a [Vec<f64>]) -> ConceptMap<'a> {
    NAMES.iter().copied().zip(cols.iter().map(Vec::as_slice)).collect()
}

#[test]
fn probabilistic_logic_matches_boolean_truth_table() {
    let cols = truth_table();
    let concepts = map_of(&cols);
    let depth2 = formulas(2);
    // Depth 3: one more NOT/AND/OR layer over depth-2 formulas, sampled densely.
    let mut all = depth2.clone();
    let step = 7;
    for (i, x) in depth2.iter().enumerate() {
        all.push(Formula::negate(x.clone()));
        for y in depth2.iter().skip(i % step).step_by(step) {
            all.push(Formula::And(vec![x.clone(), y.clone()]));
            all.push(Formula::Or(vec![x.clone(), y.clone()]));
        }
    }
    assert!(all.len() > 100_000);
    for f in &all {
        let pred = predict(&Explanation::Compositional(f.clone()), &concepts).unwrap();
        for (row, &p) in pred.iter().enumerate() {
            let env = [row & 1 == 1, row >> 1 & 1 == 1, row >> 2 & 1 == 1];
            assert_eq!(p, f64::from(u8::from(truth(f, &env))), "{f} at {env:?}");
        }
    }
}

#[test]
fn de_morgan_holds_and_idempotence_needs_binary_inputs() {
    let cols = truth_table();
    let c = map_of(&cols);
    let lhs = parse_explanation("NOT (a AND b)").unwrap();
    let rhs = parse_explanation("NOT a OR NOT b").unwrap();
    assert_eq!(predict(&lhs, &c).unwrap(), predict(&rhs, &c).unwrap());
    // Product AND and probabilistic OR are De Morgan duals for any values in
    // [0, 1]; idempotence is the law that only holds on binary inputs.
    let soft = vec![vec![0.3, 0.5], vec![0.6, 0.5], vec![0.0, 0.0]];
    let c = map_of(&soft);
    let (l, r) = (predict(&lhs, &c).unwrap(), predict(&rhs, &c).unwrap());
    assert!(l.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-15));
    let twice = parse_explanation("a AND a").unwrap();
    assert_ne!(predict(&twice, &c).unwrap(), soft[0]);
    assert_eq!(predict(&twice, &map_of(&cols)).unwrap(), cols[0]);
}

fn random_formula(rng: &mut impl Rng, depth: usize) -> Formula {
    if depth == 0 || rng.random_bool(0.2) {
        return Formula::leaf(NAMES[rng.random_range(0..3)]);
    }
    match rng.random_range(0..3) {
        0 => Formula::negate(random_formula(rng, depth - 1)),
        1 => Formula::And((0..rng.random_range(2..4)).map(|_| random_formula(rng, depth - 1)).collect()),
        _ => Formula::Or((0..rng.random_range(2..4)).map(|_| random_formula(rng, depth - 1)).collect()),
    }
}

/// Straight-line evaluator over a name-indexed row.
fn soft(f: &Formula, row: &[f64; 3]) -> f64 {
    match f {
        Formula::Leaf(id) => row[NAMES.iter().position(|n| n == id).unwrap()],
        Formula::Not(x) => 1.0 - soft(x, row),
        Formula::And(xs) => xs.iter().fold(1.0, |acc, x| acc * soft(x, row)),
        Formula::Or(xs) => xs.iter().fold(0.0, |acc, x| 1.0 - (1.0 - acc) * (1.0 - soft(x, row))),
    }
}

#[test]
fn linear_and_clustered_match_straight_line_oracle() {
    let mut rng = SeedTree::new(8).rng();
    for _ in 0..1000 {
        let n = 5;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let c = map_of(&cols);
        let terms: Vec<LinearTerm> = (0..rng.random_range(1..4))
            .map(|_| LinearTerm { weight: rng.random_range(-3.0..3.0), concept_id: NAMES[rng.random_range(0..3)].into() })
            .collect();
        let clusters: Vec<Cluster> = (0..rng.random_range(1..4))
            .map(|_| {
                let lower = rng.random_range(-2.0..2.0);
                Cluster { lower, upper: lower + rng.random_range(0.1..3.0), formula: random_formula(&mut rng, 3) }
            })
            .collect();
        let lin = predict(&Explanation::Linear(terms.clone()), &c).unwrap();
        let cce = predict(&Explanation::Clustered(clusters.clone()), &c).unwrap();
        for i in 0..n {
            let row = [cols[0][i], cols[1][i], cols[2][i]];
            let mut want = 0.0;
            for t in &terms {
                want += t.weight * row[NAMES.iter().position(|n| *n == t.concept_id).unwrap()];
            }
            assert!((lin[i] - want).abs() < 1e-9);
            let mut want = 0.0;
            for cl in &clusters {
                want += (cl.lower + cl.upper) / 2.0 * soft(&cl.formula, &row);
            }
            assert!((cce[i] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn depth_three_scores_match_reimplementation() {
    let mut rng = SeedTree::new(9).rng();
    let n = 200;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let c = map_of(&cols);
    let a = ActivationVector::new("n", (0..n).map(|i| cols[0][i] * 2.0 - cols[2][i] + rng.random::<f64>()).collect()).unwrap();
    for _ in 0..50 {
        let f = random_formula(&mut rng, 3);
        let e = Explanation::Compositional(f.clone());
        let Ok(score) = score_explanation(&e, &a, &c, None) else { continue };
        let pred: Vec<f64> = (0..n).map(|i| soft(&f, &[cols[0][i], cols[1][i], cols[2][i]])).collect();
        let mx = a.values.iter().sum::<f64>() / n as f64;
        let my = pred.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            sxy += (a.values[i] - mx) * (pred[i] - my);
            sxx += (a.values[i] - mx).powi(2);
            syy += (pred[i] - my).powi(2);
        }
        assert!((score - sxy / (sxx * syy).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn evaluation_split_restricts_scoring() {
    let a = ActivationVector::new("n", vec![1.0, 2.0, 3.0, 4.0, 0.0, 9.0]).unwrap();
    let cols = vec![vec![0.1, 0.2, 0.3, 0.4, 0.9, 0.0], vec![0.0; 6], vec![0.0; 6]];
    let c = map_of(&cols);
    let e = Explanation::Simple("a".into());
    let split = [0, 1, 2, 3];
    assert!((score_explanation(&e, &a, &c, Some(&split)).unwrap() - 1.0).abs() < 1e-12);
    assert!(score_explanation(&e, &a, &c, None).unwrap() < 0.0);
}

proptest! {
    #[test]
    fn compositional_predictions_stay_in_unit_interval(seed in any::<u64>(), vals in prop::collection::vec(0.0f64..=1.0, 3)) {
        let mut rng = SeedTree::new(seed).rng();
        let f = random_formula(&mut rng, 4);
        let cols: Vec<Vec<f64>> = vals.iter().map(|v| vec![*v]).collect();
        let p = predict(&Explanation::Compositional(f), &map_of(&cols)).unwrap()[0];
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn linear_prediction_is_additive_and_homogeneous(
        w1 in -5.0f64..5.0, w2 in -5.0f64..5.0, k in -3.0f64..3.0,
        xs in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let cols = vec![xs[..3].to_vec(), xs[3..].to_vec(), vec![0.0; 3]];
        let c = map_of(&cols);
        let t = |w: f64, id: &str| LinearTerm { weight: w, concept_id: id.into() };
        let both = predict(&Explanation::Linear(vec![t(w1, "a"), t(w2, "b")]), &c).unwrap();
        let first = predict(&Explanation::Linear(vec![t(w1, "a")]), &c).unwrap();
        let second = predict(&Explanation::Linear(vec![t(w2, "b")]), &c).unwrap();
        let scaled = predict(&Explanation::Linear(vec![t(k * w1, "a"), t(k * w2, "b")]), &c).unwrap();
        for i in 0..3 {
            prop_assert!((both[i] - first[i] - second[i]).abs() < 1e-12);
            prop_assert!((scaled[i] - k * both[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn printed_formulas_parse_back(seed in any::<u64>()) {
        let mut rng = SeedTree::new(seed).rng();
        let e = match random_formula(&mut rng, 4) {
            Formula::Leaf(id) => Explanation::Simple(id),
            f => Explanation::Compositional(f),
        };
        prop_assert_eq!(parse_explanation(&e.to_string()).unwrap(), e);
    }
}
