use ndarray::Array2;
use pacl::autograd::gradcheck::check_gradients;
use pacl::autograd::Graph;
use pacl::contrastive::{
    assign_role, batch_weights, build_batch, cl_loss, cl_loss_value, negative_weights, pacl_loss, pacl_loss_value,
    positive_weights, AnchorSet, ContrastiveBatch, IntentSet, PairWeights, PredictionState, Role, RoleRule,
};
use pacl::model::{fuse_intent_slot, FusionVars, IntentProbabilities};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Row 0 is the anchor, rows `1..=p` positives, the rest negatives.
fn single_anchor_batch(p: usize, n: usize) -> ContrastiveBatch {
    ContrastiveBatch {
        items: 1 + p + n,
        anchors: vec![AnchorSet {
            anchor: 0,
            positives: (1..=p).collect(),
            negatives: (p + 1..=p + n).collect(),
        }],
        duplicates: Vec::new(),
    }
}

fn random_weights(p: usize, n: usize, rng: &mut ChaCha8Rng) -> PairWeights {
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    };
    PairWeights {
        positive: normalize((0..p).map(|_| rng.gen_range(0.05..1.0)).collect()),
        negative: normalize((0..n).map(|_| rng.gen_range(0.05..1.0)).collect()),
    }
}

const DIMS: [usize; 3] = [2, 8, 64];
const SIZES: [usize; 3] = [1, 3, 5];

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let d = DIMS[instance % 3];
        let p = SIZES[(instance / 3) % 3];
        let n = SIZES[(instance / 9) % 3];
        let batch = single_anchor_batch(p, n);
        let reps = random_matrix(batch.rows(), d, &mut rng);
        let tau = rng.gen_range(0.1..1.0);
        let weights = vec![random_weights(p, n, &mut rng)];

        let plain = check_gradients(std::slice::from_ref(&reps), |g, v| cl_loss(g, v[0], &batch, tau).unwrap());
        let weighted = check_gradients(&[reps], |g, v| pacl_loss(g, v[0], &batch, &weights, tau).unwrap());
        worst = worst.max(plain.max_relative_error).max(weighted.max_relative_error);
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

#[test]
fn fusion_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let d = DIMS[instance % 3];
        let heads = if d == 2 { 1 + instance % 2 } else { 2 + 2 * (instance % 2) };
        let tokens = 1 + instance % 5;
        let inputs = vec![
            random_matrix(1, d, &mut rng),
            random_matrix(tokens, d, &mut rng),
            random_matrix(d, d, &mut rng),
            random_matrix(d, d, &mut rng),
            random_matrix(d, d, &mut rng),
            random_matrix(d, d, &mut rng),
            random_matrix(d, 2 * d, &mut rng),
            random_matrix(1, d, &mut rng),
        ];
        let probe = random_matrix(1, d, &mut rng);
        let report = check_gradients(&inputs, |g, v| {
            let vars = FusionVars {
                query: v[2],
                key: v[3],
                value: v[4],
                output: v[5],
                projection: v[6],
                bias: v[7],
            };
            let out = fuse_intent_slot(g, v[0], v[1], &vars, heads).unwrap();
            let probe = g.input(probe.clone());
            let weighted = g.mul(out.representation, probe);
            g.sum(weighted)
        });
        worst = worst.max(report.max_relative_error);
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
}

fn state_from(probabilities: Vec<f64>, gold: IntentSet) -> PredictionState {
    PredictionState::new(IntentProbabilities(probabilities), gold, 0.5).unwrap()
}

fn intent_set(universe: usize) -> impl Strategy<Value = IntentSet> {
    proptest::collection::btree_set(0..universe, 1..=universe)
}

fn weight_case() -> impl Strategy<Value = (Vec<f64>, IntentSet, Vec<IntentSet>, Vec<IntentSet>)> {
    (2usize..=8).prop_flat_map(|m| {
        (
            proptest::collection::vec(0.0f64..=1.0, m),
            intent_set(m),
            proptest::collection::vec(intent_set(m), 1..=6),
            proptest::collection::vec(intent_set(m), 1..=6),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weight_groups_are_distributions((probs, gold, pos, neg) in weight_case()) {
        let state = state_from(probs, gold);
        let pos_refs: Vec<&IntentSet> = pos.iter().collect();
        let neg_refs: Vec<&IntentSet> = neg.iter().collect();
        let wp = positive_weights(&state, &pos_refs);
        let wn = negative_weights(&state, &neg_refs);
        prop_assert!((wp.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!((wn.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(wp.iter().chain(&wn).all(|w| *w > 0.0));

        let rev_pos: Vec<&IntentSet> = pos.iter().rev().collect();
        let rev_neg: Vec<&IntentSet> = neg.iter().rev().collect();
        let mut wp_rev = positive_weights(&state, &rev_pos);
        let mut wn_rev = negative_weights(&state, &rev_neg);
        wp_rev.reverse();
        wn_rev.reverse();
        for (a, b) in wp.iter().zip(&wp_rev).chain(wn.iter().zip(&wn_rev)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }

        prop_assert_eq!(positive_weights(&state, &pos_refs[..1]), vec![1.0]);
        prop_assert_eq!(negative_weights(&state, &neg_refs[..1]), vec![1.0]);
    }

    #[test]
    fn batch_roles_partition_candidates(
        golds in proptest::collection::vec(intent_set(4), 2..10),
        seed in any::<u64>(),
        k in 1usize..6,
    ) {
        let states: Vec<PredictionState> = golds
            .iter()
            .enumerate()
            .map(|(i, g)| state_from((0..4).map(|j| ((i * 7 + j * 3) % 10) as f64 / 10.0).collect(), g.clone()))
            .collect();
        let anchors: Vec<usize> = (0..golds.len()).collect();
        let batch = build_batch(&golds, &anchors, &states, k, RoleRule::Switching, seed).unwrap();
        for set in &batch.anchors {
            prop_assert!(!set.positives.is_empty());
            prop_assert!(set.positives.len() <= k && set.negatives.len() <= k);
            for &r in &set.positives {
                if r < batch.items {
                    prop_assert_eq!(assign_role(&states[set.anchor], &golds[set.anchor], &golds[r]).unwrap(), Role::Positive);
                } else {
                    prop_assert_eq!(batch.source(r), set.anchor);
                }
            }
            for &r in &set.negatives {
                prop_assert!(r < batch.items && r != set.anchor);
                prop_assert_eq!(assign_role(&states[set.anchor], &golds[set.anchor], &golds[r]).unwrap(), Role::Negative);
            }
        }
        prop_assert_eq!(batch, build_batch(&golds, &anchors, &states, k, RoleRule::Switching, seed).unwrap());
    }
}

fn mask_to_set(mask: u32) -> IntentSet {
    (0..4).filter(|j| mask & (1 << j) != 0).collect()
}

/// Bitmask form of the rule table: positive when the label sets coincide or
/// when some shared intent is mispredicted for the anchor.
fn oracle_role(anchor: u32, candidate: u32, incorrect: u32) -> Role {
    if anchor == candidate || anchor & candidate & incorrect != 0 {
        Role::Positive
    } else {
        Role::Negative
    }
}

#[test]
fn role_assignment_matches_exhaustive_oracle() {
    let mut cases = 0;
    for anchor in 1u32..16 {
        for correct in 0u32..16 {
            if correct & !anchor != 0 {
                continue;
            }
            let incorrect = anchor & !correct;
            let probs: Vec<f64> = (0..4).map(|j| if correct & (1 << j) != 0 { 0.9 } else { 0.1 }).collect();
            let state = state_from(probs, mask_to_set(anchor));
            assert_eq!(state.incorrect, mask_to_set(incorrect));
            for candidate in 1u32..16 {
                let got = assign_role(&state, &mask_to_set(anchor), &mask_to_set(candidate)).unwrap();
                assert_eq!(got, oracle_role(anchor, candidate, incorrect), "anchor {anchor:04b} cand {candidate:04b} incorrect {incorrect:04b}");
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 80 * 15);
}

#[test]
fn singleton_pairs_reduce_to_plain_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let d = rng.gen_range(2..16);
        let reps = random_matrix(3, d, &mut rng);
        let tau = rng.gen_range(0.05..2.0);
        let batch = single_anchor_batch(1, 1);
        let golds: Vec<IntentSet> = vec![[0, 1].into(), [0].into(), [1, 2].into()];
        let states = vec![
            state_from((0..3).map(|_| rng.gen_range(0.0..1.0)).collect(), golds[0].clone()),
            state_from(vec![0.5; 3], golds[1].clone()),
            state_from(vec![0.5; 3], golds[2].clone()),
        ];
        let weights = batch_weights(&batch, &golds, &states);
        assert_eq!(weights[0], PairWeights::unit(&batch.anchors[0]));
        let weighted = pacl_loss_value(&reps, &batch, &weights, tau).unwrap();
        let plain = cl_loss_value(&reps, &batch, tau).unwrap();
        assert!((weighted - plain).abs() <= 1e-10);

        let cos = |a: usize, b: usize| {
            let (x, y) = (reps.row(a), reps.row(b));
            x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
        };
        let (sp, sn) = (cos(0, 1) / tau, cos(0, 2) / tau);
        let reference = -(sp.exp() / (sp.exp() + sn.exp())).ln();
        assert!((plain - reference).abs() <= 1e-10);
    }
}

#[test]
fn orthogonal_negative_hand_value() {
    let reps = ndarray::array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]];
    let loss = cl_loss_value(&reps, &single_anchor_batch(1, 1), 1.0).unwrap();
    let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!((loss - expected).abs() < 1e-12);
    assert!((loss - 0.3133).abs() < 1e-4);
}

#[test]
fn weighted_loss_gradient_flows_only_through_representations() {
    let store = pacl::autograd::ParamStore::new();
    let mut g = Graph::new(&store);
    let reps = g.leaf(ndarray::array![[1.0, 0.2], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.3]]);
    let batch = single_anchor_batch(1, 2);
    let weights = vec![PairWeights {
        positive: vec![1.0],
        negative: vec![0.7, 0.3],
    }];
    let loss = pacl_loss(&mut g, reps, &batch, &weights, 0.5).unwrap();
    let grads = g.backward(loss);
    let gr = grads.wrt(reps).unwrap();
    assert!(gr.iter().all(|v| v.is_finite()));
    assert!(gr.row(0).iter().any(|v| v.abs() > 0.0));
}
