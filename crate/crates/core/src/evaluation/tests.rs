use proptest::prelude::*;

use super::*;
use crate::attack::{AttackTargets, AttackVariant};
use crate::policy::ArchConfig;
use crate::scenario::{ScenarioConfig, ScenarioKind, SCREEN_CHANNELS};
use crate::testkit::within_budget;

fn tiny_scenario(kind: ScenarioKind) -> ScenarioConfig {
    ScenarioConfig {
        map_size: 16,
        t_max: 20,
        units_per_group: 1,
        ..ScenarioConfig::new(kind)
    }
}

fn early() -> ObsSource {
    ObsSource {
        timestep: 2,
        ..ObsSource::default()
    }
}

fn agent(cfg: &ScenarioConfig, seed: u64) -> PolicyParams {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    crate::testkit::random_params(&ArchConfig::for_scenario(cfg), 0.3, &mut rng)
}

#[test]
fn ema_examples() {
    assert_eq!(ema_smooth(&[3.0; 5], 4).unwrap(), vec![3.0; 5]);
    let s = [1.0, -2.0, 7.5, 0.25];
    assert_eq!(ema_smooth(&s, 1).unwrap(), s.to_vec());
    assert_eq!(ema_smooth(&[0.0, 10.0], 3).unwrap(), vec![0.0, 5.0]);
    assert!(matches!(ema_smooth(&[], 3), Err(EvalError::EmptySeries)));
    assert!(ema_smooth(&[1.0], 0).is_err());
}

#[test]
fn quantiles_are_type_seven() {
    let b = BoxStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!((b.q1, b.median, b.q3), (1.75, 2.5, 3.25));
    assert_eq!((b.min, b.max, b.mean), (1.0, 4.0, 2.5));
    let b = BoxStats::from_samples(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
    assert_eq!(b.whisker_hi, 4.0);
    assert_eq!(b.max, 100.0);
    assert!(BoxStats::from_samples(&[]).is_err());
}

#[test]
fn relative_reward_examples() {
    assert_eq!(relative_reward(50.0, 100.0), Some(0.5));
    assert_eq!(relative_reward(7.0, 7.0), Some(1.0));
    assert_eq!(relative_reward(5.0, 0.0), None);
    assert_eq!(relative_reward(5.0, -3.0), None);
}

#[test]
fn mann_whitney_reference_values() {
    // Separated samples: U = 0, continuity-corrected normal approximation.
    let r = mann_whitney_less(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    assert_eq!(r.u, 0.0);
    assert!((r.p_less - 0.040_427_80).abs() < 1e-6, "{}", r.p_less);
    let r = mann_whitney_less(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!(r.u, 9.0);
    assert!(r.p_less > 0.95);
    // Ties get midranks.
    let r = mann_whitney_less(&[1.0, 2.0, 2.0], &[2.0, 3.0]).unwrap();
    assert_eq!(r.u, 1.0);
    assert_eq!(mann_whitney_less(&[1.0; 4], &[1.0; 4]).unwrap().p_less, 0.5);
}

#[test]
fn histogram_normalization() {
    let h = Histogram::build(&[0.0, 0.5, 1.0, 1.0], 4, None).unwrap();
    assert_eq!(h.freq, vec![0.25, 0.0, 0.25, 0.5]);
    assert_eq!(h.edges.len(), 5);
    let h = Histogram::build(&[2.0; 10], 20, None).unwrap();
    assert_eq!(h.freq, vec![1.0]);
    assert_eq!(h.nonzero_bins(), 1);
    let h = Histogram::build(&[-1.0, 5.0], 2, Some((0.0, 2.0))).unwrap();
    assert_eq!(h.freq, vec![0.5, 0.5]);
}

fn record(pairs: &[(usize, usize)]) -> EpisodeRecord {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let env = crate::scenario::Scenario::new(cfg).unwrap();
    EpisodeRecord {
        env_seed: 0,
        steps: pairs
            .iter()
            .map(|&(b, s)| StepRecord {
                reward: 0.0,
                decisions: vec![GroupDecision {
                    group: 0,
                    benign: b,
                    subverted: s,
                    benign_argmax: b,
                    subverted_argmax: s,
                    screen_linf: 0.0,
                    nonspatial_linf: 0.0,
                }],
            })
            .collect(),
        cumulative_reward: 0.0,
        event_reward: 0,
        blue: env.health(crate::scenario::Side::Blue),
        red: env.health(crate::scenario::Side::Red),
        partial_win: false,
        length: pairs.len(),
    }
}

#[test]
fn action_shift_extremes() {
    let same = action_shift(&[record(&[(0, 0), (3, 3), (3, 3)])]);
    assert_eq!(same.benign, same.subverted);
    assert_eq!(same.tv_distance, 0.0);
    assert!((same.benign.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let disjoint = action_shift(&[record(&[(0, 1), (2, 3)])]);
    assert_eq!(disjoint.tv_distance, 1.0);
    assert_eq!(disjoint.changed_fraction, 1.0);
    assert_eq!(record(&[(0, 1), (2, 3)]).paired_sequence(0), (vec![0, 2], vec![1, 3]));
}

#[test]
fn rollouts_are_deterministic_and_consistent() {
    for kind in [ScenarioKind::Tigerclaw, ScenarioKind::Ntc] {
        let cfg = tiny_scenario(kind);
        let p = agent(&cfg, 1);
        let c = Controller::Policy {
            params: &p,
            mode: RolloutMode::Benign,
        };
        let a = run_rollouts(&cfg, &c, 3, 7).unwrap();
        assert_eq!(a, run_rollouts(&cfg, &c, 3, 7).unwrap());
        for e in &a {
            assert_eq!(e.cumulative_reward, e.event_reward as f64);
            assert_eq!(e.cumulative_reward, e.steps.iter().map(|s| s.reward).sum::<f64>());
            assert_eq!(e.partial_win, e.blue.total_pct > e.red.total_pct);
            for h in [&e.blue, &e.red] {
                assert!((0.0..=100.0).contains(&h.total_pct));
                assert!(h.casualties <= h.initial_units);
            }
            for d in e.steps.iter().flat_map(|s| &s.decisions) {
                assert_eq!(d.benign, d.subverted);
            }
        }
    }
}

#[test]
fn zero_budget_attack_matches_benign_run() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 2);
    let benign = run_rollouts(
        &cfg,
        &Controller::Policy {
            params: &p,
            mode: RolloutMode::Benign,
        },
        3,
        11,
    )
    .unwrap();
    let attacked = run_rollouts(
        &cfg,
        &Controller::Policy {
            params: &p,
            mode: RolloutMode::Attacked(AttackConfig::default()),
        },
        3,
        11,
    )
    .unwrap();
    assert_eq!(benign, attacked);
}

#[test]
fn shadow_mode_follows_the_benign_trajectory() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 3);
    let run = |mode| {
        run_rollouts(
            &cfg,
            &Controller::Policy { params: &p, mode },
            2,
            5,
        )
        .unwrap()
    };
    let benign = run(RolloutMode::Benign);
    let shadow = run(RolloutMode::Shadow(AttackConfig::default().with_epsilon(0.5)));
    for (b, s) in benign.iter().zip(&shadow) {
        assert_eq!(b.cumulative_reward, s.cumulative_reward);
        assert_eq!(b.length, s.length);
        let bs: Vec<usize> = b.steps.iter().flat_map(|x| &x.decisions).map(|d| d.benign).collect();
        let ss: Vec<usize> = s.steps.iter().flat_map(|x| &x.decisions).map(|d| d.benign).collect();
        assert_eq!(bs, ss);
    }
}

#[test]
fn screen_only_attack_leaves_nonspatial_untouched() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 4);
    let a = AttackConfig {
        epsilon: 0.1,
        variant: AttackVariant::WholeVector,
        targets: AttackTargets::Screen,
        clamp: true,
    };
    let recs = run_rollouts(
        &cfg,
        &Controller::Policy {
            params: &p,
            mode: RolloutMode::Attacked(a),
        },
        2,
        0,
    )
    .unwrap();
    let ds: Vec<&GroupDecision> = recs.iter().flat_map(|r| &r.steps).flat_map(|s| &s.decisions).collect();
    assert!(ds.iter().all(|d| d.nonspatial_linf == 0.0));
    assert!(ds.iter().any(|d| d.screen_linf > 0.0));
    assert!(ds.iter().all(|d| within_budget(d.screen_linf, 0.0, 0.1)));
}

#[test]
fn uniform_controller_and_mismatch() {
    let cfg = tiny_scenario(ScenarioKind::Ntc);
    let recs = run_rollouts(&cfg, &Controller::Uniform, 4, 0).unwrap();
    assert!(recs.iter().all(|r| r.cumulative_reward == r.event_reward as f64));
    let other = agent(&tiny_scenario(ScenarioKind::Tigerclaw), 0);
    let big = ScenarioConfig::tigerclaw_mini();
    let c = Controller::Policy {
        params: &other,
        mode: RolloutMode::Benign,
    };
    assert!(matches!(run_rollouts(&big, &c, 1, 0), Err(EvalError::Mismatch(_))));
    assert!(run_rollouts(&cfg, &Controller::Uniform, 0, 0).is_err());
}

#[test]
fn sweep_structure() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 5);
    let attack = AttackConfig::default();
    assert!(epsilon_sweep(&p, &cfg, &attack, &[0.1], 2, 0).is_err());
    let s = epsilon_sweep(&p, &cfg, &attack, &[0.0, 0.2], 4, 3).unwrap();
    assert_eq!(s.cells.len(), 2);
    let benign = s.cell(0.0).unwrap();
    assert!(benign.vs_benign.is_none());
    assert_eq!(benign.flip_rate, 0.0);
    assert_eq!(benign.action_tv_distance, 0.0);
    assert_eq!(
        benign.relative_reward,
        if s.benign_mean > 0.0 { Some(1.0) } else { None }
    );
    for c in &s.cells {
        let r = &c.reward;
        assert!(r.min <= r.q1 && r.q1 <= r.median && r.median <= r.q3 && r.q3 <= r.max);
        assert!((0.0..=1.0).contains(&c.partial_win_rate));
        assert_eq!(c.episodes.len(), 4);
    }
    assert!(s.cell(0.2).unwrap().vs_benign.is_some());
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &csv_header("abc", 3), &s).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("# config_digest=abc\n# seed=3\nepsilon,episode,"));
    assert_eq!(text.lines().count(), 3 + 8);
}

#[test]
fn probe_mechanics() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 6);
    let obs = probe_observation(&cfg, &early()).unwrap();
    let taken = probe_action(&p, &obs, 0).unwrap();
    let zero = ProbeConfig {
        epsilon: 0.0,
        n_samples: 100,
        ..ProbeConfig::default()
    };
    let r = loss_landscape_probe(&p, &obs, taken, &zero, 0).unwrap();
    assert_eq!(r.histogram.freq, vec![1.0]);
    assert!(r.losses.iter().all(|&l| l == r.benign_loss));
    assert_eq!(r.max_linf, 0.0);
    let cfg_probe = ProbeConfig {
        n_samples: 300,
        ..ProbeConfig::default()
    };
    let a = loss_landscape_probe(&p, &obs, taken, &cfg_probe, 1).unwrap();
    assert_eq!(a, loss_landscape_probe(&p, &obs, taken, &cfg_probe, 1).unwrap());
    assert_eq!(a.losses.len(), 300);
    assert!(within_budget(a.max_linf, 0.0, 0.1) && a.max_linf > 0.0);
    assert!((a.histogram.freq.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(a.losses.iter().any(|&l| l != a.losses[0]));
}

#[test]
fn constant_policy_has_flat_landscape() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let mut p = PolicyParams::zeros(&ArchConfig::for_scenario(&cfg)).unwrap();
    p.get_mut("logits.b").unwrap().data_mut()[1] = 2.0;
    let obs = probe_observation(&cfg, &early()).unwrap();
    let taken = probe_action(&p, &obs, 0).unwrap();
    let r = loss_landscape_probe(&p, &obs, taken, &ProbeConfig { n_samples: 200, ..Default::default() }, 0).unwrap();
    assert!(r.losses.iter().all(|&l| l == r.losses[0]));
    assert_eq!(r.histogram.nonzero_bins(), 1);
}

#[test]
fn comparing_an_agent_with_itself_gives_equal_rows() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    let p = agent(&cfg, 8);
    let obs = probe_observation(&cfg, &early()).unwrap();
    let probe = ProbeConfig {
        n_samples: 64,
        ..ProbeConfig::default()
    };
    let c = compare_agents(
        &[("a".into(), &p), ("b".into(), &p)],
        &cfg,
        &AttackConfig::default(),
        &[0.0, 0.1],
        2,
        0,
        &obs,
        &probe,
    )
    .unwrap();
    assert_eq!(c.agents[0].mean_reward, c.agents[1].mean_reward);
    assert_eq!(c.agents[0].relative_reward, c.agents[1].relative_reward);
    assert_eq!(c.agents[0].probe.histogram, c.agents[1].probe.histogram);
    assert!(compare_agents(&[("a".into(), &p)], &cfg, &AttackConfig::default(), &[0.0], 1, 0, &obs, &probe).is_err());
}

#[test]
fn probe_observation_source_validation() {
    let cfg = tiny_scenario(ScenarioKind::Tigerclaw);
    assert!(probe_observation(&cfg, &ObsSource { group: 5, ..Default::default() }).is_err());
    assert!(probe_observation(&cfg, &ObsSource { timestep: 500, ..Default::default() }).is_err());
    let o = probe_observation(&cfg, &ObsSource { group: 2, ..early() }).unwrap();
    assert_eq!(o.group_index(), 2);
    assert_eq!(o.screen.shape(), &[SCREEN_CHANNELS, 16, 16]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_stats_are_ordered(x in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let b = BoxStats::from_samples(&x).unwrap();
        prop_assert!(b.min <= b.whisker_lo && b.whisker_lo <= b.q1);
        prop_assert!(b.q1 <= b.median && b.median <= b.q3);
        prop_assert!(b.q3 <= b.whisker_hi && b.whisker_hi <= b.max);
    }

    #[test]
    fn histograms_sum_to_one(x in prop::collection::vec(-5f64..5.0, 1..200), bins in 1usize..30) {
        let h = Histogram::build(&x, bins, None).unwrap();
        prop_assert!((h.freq.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ema_preserves_length_and_first(x in prop::collection::vec(-5f64..5.0, 1..50), w in 1usize..20) {
        let s = ema_smooth(&x, w).unwrap();
        prop_assert_eq!(s.len(), x.len());
        prop_assert_eq!(s[0], x[0]);
    }
}
