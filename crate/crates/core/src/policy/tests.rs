use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tensor};
use crate::scenario::{FactoredAction, Observation, Scenario, ScenarioConfig, NUM_LOGITS};

fn tigerclaw_obs() -> (Scenario, Vec<Observation>) {
    let sc = Scenario::new(ScenarioConfig::tigerclaw()).unwrap();
    let obs = sc.blue_observations().into_iter().map(|(_, o)| o).collect();
    (sc, obs)
}

fn random_obs(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Observation {
    let s = arch.screen_size;
    let screen: Vec<f64> = (0..arch.screen_channels * s * s).map(|_| rng.random()).collect();
    let mut nonspatial: Vec<f64> = (0..arch.nonspatial_len).map(|_| rng.random()).collect();
    let d = nonspatial.len();
    let g = rng.random_range(0..5);
    let mut control_group = [0.0; 5];
    control_group[g] = 1.0;
    nonspatial[d - 5..].copy_from_slice(&control_group);
    Observation {
        screen: Arc::new(Tensor::new(vec![arch.screen_channels, s, s], screen).unwrap()),
        nonspatial,
        action_mask: [true; NUM_LOGITS],
        control_group,
    }
}

fn out(logits: [f64; 8]) -> PolicyOutput {
    PolicyOutput::from_logits(&logits, 0.0)
}

#[test]
fn default_arch_matches_scenario() {
    let cfg = ScenarioConfig::tigerclaw();
    let arch = ArchConfig::for_scenario(&cfg);
    assert_eq!(arch.conv_sizes().unwrap(), vec![30, 14]);
    assert_eq!(arch.flat_len().unwrap(), 16 * 14 * 14);
    assert_eq!(arch.nonspatial_len, 127);
    let p = PolicyParams::init(&arch, 0).unwrap();
    assert!(p.is_finite());
    assert_eq!(p.get("logits.w").unwrap().shape(), [64, 8]);
    assert_eq!(p.get("conv1.w").unwrap().shape(), [8, 3, 5, 5]);
}

#[test]
fn forward_is_deterministic() {
    let (_, obs) = tigerclaw_obs();
    let arch = ArchConfig::for_scenario(&ScenarioConfig::tigerclaw());
    let p = PolicyParams::init(&arch, 7).unwrap();
    let a = forward_policy(&p, &obs[0]).unwrap();
    let b = forward_policy(&p, &obs[0]).unwrap();
    assert_eq!(a, b);
    assert!(a.is_finite());
}

#[test]
fn batched_rows_match_single_forward_bitwise() {
    let (_, obs) = tigerclaw_obs();
    let arch = ArchConfig::for_scenario(&ScenarioConfig::tigerclaw());
    let p = PolicyParams::init(&arch, 3).unwrap();
    let refs: Vec<&Observation> = obs.iter().collect();
    for share in [true, false] {
        let input = BatchInput::new(&arch, &refs, share).unwrap();
        assert_eq!(input.screens.shape()[0], if share { 1 } else { 5 });
        let batch = forward_batch(&p, &input).unwrap();
        for (o, b) in obs.iter().zip(&batch) {
            assert_eq!(forward_policy(&p, o).unwrap(), *b);
        }
    }
}

#[test]
fn zero_weights_give_uniform_heads() {
    let (_, obs) = tigerclaw_obs();
    let arch = ArchConfig::for_scenario(&ScenarioConfig::tigerclaw());
    let p = PolicyParams::zeros(&arch).unwrap();
    let o = forward_policy(&p, &obs[2]).unwrap();
    assert_eq!(o.logits(), [0.0; 8]);
    let d = masked_distribution(&o, &[true; 8]).unwrap();
    assert_eq!(d.head(0), &[0.5, 0.5]);
    for h in 1..3 {
        for &v in d.head(h) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn duplicate_dead_slots_are_interchangeable() {
    let (sc, obs) = tigerclaw_obs();
    let arch = ArchConfig::for_scenario(sc.config());
    let p = PolicyParams::init(&arch, 1).unwrap();
    let mut a = obs[0].clone();
    // Two dead slots (all zero) swapped: the input is the same vector.
    a.nonspatial[4..12].fill(0.0);
    let mut b = a.clone();
    let (left, right) = b.nonspatial.split_at_mut(8);
    left[4..8].swap_with_slice(&mut right[..4]);
    assert_eq!(forward_policy(&p, &a).unwrap(), forward_policy(&p, &b).unwrap());
    // A live slot swapped with a dead one is a different input.
    let mut c = obs[0].clone();
    let (left, right) = c.nonspatial.split_at_mut(4);
    left.swap_with_slice(&mut right[..4]);
    c.nonspatial[4..8].fill(0.0);
    let mut d = obs[0].clone();
    d.nonspatial[4..8].fill(0.0);
    assert_ne!(forward_policy(&p, &c).unwrap(), forward_policy(&p, &d).unwrap());
}

#[test]
fn input_shape_mismatch_is_reported() {
    let arch = ArchConfig::small(3, 8, 12);
    let p = PolicyParams::init(&arch, 0).unwrap();
    let (_, obs) = tigerclaw_obs();
    assert!(matches!(
        forward_policy(&p, &obs[0]),
        Err(PolicyError::InputShape(_))
    ));
}

#[test]
fn masked_distribution_examples() {
    let z = out([0.0; 8]);
    let mut mask = [true; 8];
    mask[1] = false;
    let d = masked_distribution(&z, &mask).unwrap();
    assert_eq!(d.head(0), &[1.0, 0.0]);
    let mut bad = [true; 8];
    bad[2..5].fill(false);
    assert_eq!(
        masked_distribution(&z, &bad),
        Err(PolicyError::FullyMaskedHead(1))
    );
}

#[test]
fn sampling_degenerate_heads_is_exact() {
    let d = HeadDistributions {
        probs: [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        assert_eq!(
            sample_action(&d, &mut rng),
            FactoredAction::from_indices(1, 2, 1).unwrap()
        );
    }
    // u at the top of [0, 1) still lands on the support.
    assert_eq!(
        d.sample_with_uniforms([0.999_999_999_999, 0.0, 0.5]),
        FactoredAction::from_indices(1, 2, 1).unwrap()
    );
}

#[test]
fn uniform_sampling_frequencies_within_three_sigma() {
    let d = masked_distribution(&out([0.0; 8]), &[true; 8]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut counts = [[0usize; 3]; 3];
    for _ in 0..n {
        let [v, x, y] = sample_action(&d, &mut rng).indices();
        counts[0][v] += 1;
        counts[1][x] += 1;
        counts[2][y] += 1;
    }
    for (h, c) in counts.iter().enumerate() {
        let k = [2, 3, 3][h];
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &ci in &c[..k] {
            assert!((ci as f64 - n as f64 * p).abs() < 3.0 * sigma, "head {h}: {c:?}");
        }
    }
}

#[test]
fn seeded_sampling_is_reproducible() {
    let d = masked_distribution(&out([0.3, -0.2, 1.0, 0.0, -1.0, 0.5, 0.5, 0.1]), &[true; 8]).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..50).map(|_| sample_action(&d, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn decode_matches_command_captions() {
    assert_eq!(decode_action(1, 1, 2).unwrap(), "ATTACK(CENTER,BOTTOM)");
    assert_eq!(decode_action(1, 2, 1).unwrap(), "ATTACK(RIGHT,CENTER)");
    assert_eq!(decode_action(0, 2, 1).unwrap(), "NO_OP");
    assert!(decode_action(2, 0, 0).is_err());
    assert!(decode_action(1, 3, 0).is_err());
}

#[test]
fn log_prob_and_entropy() {
    let d = masked_distribution(&out([0.0; 8]), &[true; 8]).unwrap();
    let lp = d.log_prob(FactoredAction::NO_OP);
    assert!((lp - (0.5f64.ln() + 2.0 * (1.0f64 / 3.0).ln())).abs() < 1e-12);
    let e = d.head_entropies();
    assert!((e[0] - 2f64.ln()).abs() < 1e-12);
    assert!((e[1] - 3f64.ln()).abs() < 1e-12);
    assert!((d.joint().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn input_gradients_flow_to_both_trunks() {
    let (_, obs) = tigerclaw_obs();
    let arch = ArchConfig::for_scenario(&ScenarioConfig::tigerclaw());
    let p = PolicyParams::init(&arch, 11).unwrap();
    let input = BatchInput::new(&arch, &[&obs[1]], false).unwrap();
    let (outs, g) = forward_backward::<_, PolicyError>(&p, &input, GradTarget::Inputs, |outs| {
        // d CE / d logits = softmax - onehot(argmax), per head.
        let d = masked_distribution(&outs[0], &[true; 8]).unwrap();
        let a = d.argmax();
        let [v, x, y] = a.indices();
        let mut seed = d.probs.to_vec();
        seed[v] -= 1.0;
        seed[2 + x] -= 1.0;
        seed[5 + y] -= 1.0;
        Ok(OutputSeeds {
            logits: seed,
            value: None,
        })
    })
    .unwrap();
    assert_eq!(outs.len(), 1);
    assert!(g[SCREEN_LEAF].max_abs() > 0.0);
    assert!(g[NONSPATIAL_LEAF].max_abs() > 0.0);
    assert_eq!(g.len(), 2);
}

#[test]
fn full_network_gradcheck_small_arch() {
    let arch = ArchConfig {
        conv: vec![
            ConvLayer { filters: 2, kernel: 3, stride: 2 },
            ConvLayer { filters: 3, kernel: 2, stride: 1 },
        ],
        ..ArchConfig::small(3, 9, 10)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = PolicyParams::init(&arch, 5).unwrap();
    let o1 = random_obs(&arch, &mut rng);
    let mut o2 = random_obs(&arch, &mut rng);
    o2.screen = o1.screen.clone();
    let input = BatchInput::new(&arch, &[&o1, &o2], true).unwrap();
    assert_eq!(input.rows, vec![0, 0]);
    let (pg, loss) = PolicyGraph::with_check_loss(&arch, input.rows.clone());
    let target = Tensor::new(
        vec![2, 8],
        vec![
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
        ],
    )
    .unwrap();
    let mut leaves: HashMap<&str, &Tensor> =
        p.tensors().iter().map(|(k, v)| (k.as_str(), v)).collect();
    leaves.insert(SCREEN_LEAF, &input.screens);
    leaves.insert(NONSPATIAL_LEAF, &input.nonspatial);
    leaves.insert("target", &target);
    let names: Vec<String> = leaves.keys().filter(|k| **k != "target").map(|k| k.to_string()).collect();
    for name in names {
        let r = grad_check(&pg.graph, &leaves, loss, &name, 1e-5, 1e-3, None);
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn checkpoint_round_trip_and_digest_check() {
    let arch = ArchConfig::small(3, 8, 12);
    let mut p = PolicyParams::init(&arch, 0).unwrap();
    p.version = 3;
    p.step = 999;
    let bytes = checkpoint::to_bytes(&p);
    assert_eq!(&bytes[..4], b"C2CK");
    let back = checkpoint::from_bytes(&bytes, Some(&arch)).unwrap();
    assert_eq!(back, p);
    assert_eq!(checkpoint::to_bytes(&back), bytes);

    let other = ArchConfig::small(3, 8, 13);
    assert!(matches!(
        checkpoint::from_bytes(&bytes, Some(&other)),
        Err(PolicyError::DigestMismatch { .. })
    ));
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1], None).is_err());
    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(checkpoint::from_bytes(&corrupt, None).is_err());
}

#[test]
fn init_is_seeded() {
    let arch = ArchConfig::small(3, 8, 12);
    assert_eq!(PolicyParams::init(&arch, 1).unwrap(), PolicyParams::init(&arch, 1).unwrap());
    assert_ne!(PolicyParams::init(&arch, 1).unwrap(), PolicyParams::init(&arch, 2).unwrap());
}

proptest! {
    #[test]
    fn per_head_probabilities_sum_to_one(
        logits in prop::array::uniform8(-30.0f64..30.0),
        mask_bits in prop::array::uniform8(any::<bool>()),
        shift in -100.0f64..100.0,
    ) {
        let mut mask = mask_bits;
        mask[0] |= !mask[1];
        if !mask[2..5].iter().any(|&m| m) { mask[3] = true; }
        if !mask[5..].iter().any(|&m| m) { mask[7] = true; }
        let d = masked_distribution(&out(logits), &mask).unwrap();
        for h in 0..3 {
            prop_assert!((d.head(h).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for i in 0..8 {
            if !mask[i] { prop_assert_eq!(d.probs[i], 0.0); }
        }
        let mut shifted = logits;
        for v in &mut shifted[2..5] { *v += shift; }
        let d2 = masked_distribution(&out(shifted), &mask).unwrap();
        for i in 2..5 {
            prop_assert!((d.probs[i] - d2.probs[i]).abs() < 1e-9);
        }
        // Masked sampling never selects a masked entry.
        let a = d.sample_with_uniforms([0.3, 0.99, 0.0]);
        let [v, x, y] = a.indices();
        prop_assert!(mask[v] && mask[2 + x] && mask[5 + y]);
    }

    #[test]
    fn argmax_invariant_under_positive_affine(
        logits in prop::array::uniform8(-5.0f64..5.0),
        a in 0.01f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let d1 = masked_distribution(&out(logits), &[true; 8]).unwrap();
        let t = logits.map(|v| a * v + b);
        let d2 = masked_distribution(&out(t), &[true; 8]).unwrap();
        prop_assert_eq!(d1.argmax(), d2.argmax());
        for h in 0..3 {
            let r = HEAD_OFFSETS[h]..HEAD_OFFSETS[h] + HEAD_SIZES[h];
            prop_assert_eq!(argmax_lowest(&logits[r.clone()]), argmax_lowest(&t[r]));
        }
    }
}
