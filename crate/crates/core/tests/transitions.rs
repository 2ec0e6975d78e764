mod common;

use common::random_trajectory;
use dagsm::attack::{Action, AttackModel, ModelParams};
use dagsm::baseline::{ChainAction, ChainState, Fork, TraditionalModel};
use dagsm::dag::{BlockDag, DefenderView::*, IgnoreStatus::*, Labels, WithholdStatus::*};
use dagsm::explorer::{explore, ExploreOptions};
use dagsm::{Bitcoin, BlockId, Ethereum, Miner, Protocol};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bitcoin(alpha: f64, gamma: f64, limit: u32) -> AttackModel<'static> {
    AttackModel::new(&Bitcoin, ModelParams::new(alpha, gamma, limit).unwrap()).unwrap()
}

#[test]
fn explored_states_are_sound() {
    for (alpha, gamma) in [(0.3, 0.5), (0.45, 0.0), (0.1, 1.0)] {
        let m = bitcoin(alpha, gamma, 4);
        let ex = explore(&m, &ExploreOptions::default()).unwrap();
        ex.mdp.validate(1e-12).unwrap();
        for k in &ex.mdp.states {
            k.to_dag().unwrap().check_invariants().unwrap();
        }
    }
}

#[test]
fn bitcoin_replay_accounts_every_block_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..400 {
        let alpha = [0.2, 0.35, 0.5][i % 3];
        let gamma = [0.0, 0.5, 1.0][i % 3];
        let m = bitcoin(alpha, gamma, 5);
        let r = random_trajectory(&m, &mut rng, 40);
        let settled = r.settled();
        let attacker = settled
            .iter()
            .filter(|&&b| r.full[b].1 == Miner::Attacker)
            .count();
        assert_eq!(r.reward_attacker, attacker as f64);
        assert_eq!(r.reward_defender, (settled.len() - attacker) as f64);
        assert_eq!(r.progress, settled.len() as f64);
    }
}

#[test]
fn ethereum_space_is_sound() {
    let eth = Ethereum::default();
    let m = AttackModel::new(&eth, ModelParams::new(0.35, 0.5, 3).unwrap()).unwrap();
    let ex = explore(&m, &ExploreOptions::default()).unwrap();
    ex.mdp.validate(1e-12).unwrap();
    for k in &ex.mdp.states {
        k.to_dag().unwrap().check_invariants().unwrap();
    }
    // some settlement pays an uncle or nephew share
    let fractional = ex
        .mdp
        .transitions
        .iter()
        .flatten()
        .flatten()
        .any(|t| (t.reward_attacker + t.reward_defender).fract() != 0.0);
    assert!(fractional);
}

#[test]
fn ethereum_replay_progress_matches_chain_length() {
    let eth = Ethereum::default();
    let m = AttackModel::new(&eth, ModelParams::new(0.4, 0.5, 4).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let r = random_trajectory(&m, &mut rng, 30);
        let settled = r.settled();
        assert_eq!(r.progress, settled.len() as f64);
        // every settled block pays its miner a full unit, uncles add more
        assert!(r.reward_attacker + r.reward_defender >= settled.len() as f64 - 1e-12);
    }
}

#[test]
fn matched_race_agrees_with_the_traditional_model() {
    // attacker a1 a2 released and preferred, defender d1 known, d2 in flight
    let b = BlockId::new;
    let d = BlockDag::from_parts(vec![
        (vec![], Labels::new(Known, Considered, Foreign)),
        (vec![b(0)], Labels::new(Unknown, Considered, Released)),
        (vec![b(1)], Labels::new(Unknown, PreferredA, Released)),
        (vec![b(0)], Labels::new(PreferredD, Ignored, Foreign)),
        (vec![b(3)], Labels::new(Unknown, Ignored, Foreign)),
    ])
    .unwrap();
    d.check_invariants().unwrap();
    let (alpha, gamma) = (0.3, 0.4);
    let generic = bitcoin(alpha, gamma, 7)
        .transitions(&d, Action::Continue)
        .unwrap();
    let tm = TraditionalModel::new(alpha, gamma, 7).unwrap();
    let active = tm
        .step(ChainState::new(2, 2, Fork::Relevant), ChainAction::Match)
        .unwrap()[0]
        .state;
    let traditional = tm.step(active, ChainAction::Wait).unwrap();

    let summarize = |v: Vec<(f64, f64, f64, f64, usize)>| {
        let mut v: Vec<_> = v
            .into_iter()
            .map(|(p, ra, rd, pr, n)| {
                (
                    (p * 1e12).round() as i64,
                    ra as i64,
                    rd as i64,
                    pr as i64,
                    n,
                )
            })
            .collect();
        v.sort();
        v
    };
    let g = summarize(
        generic
            .iter()
            .map(|t| {
                (
                    t.probability,
                    t.reward_attacker,
                    t.reward_defender,
                    t.progress,
                    t.state.len(),
                )
            })
            .collect(),
    );
    let t = summarize(
        traditional
            .iter()
            .map(|t| {
                let size = (t.state.a + t.state.h + 1) as usize;
                (
                    t.probability,
                    t.reward_attacker,
                    t.reward_defender,
                    t.progress,
                    size,
                )
            })
            .collect(),
    );
    assert_eq!(g, t);
    let fast_defender = (gamma * (1.0 - alpha) * 1e12).round() as i64;
    assert!(g.contains(&(fast_defender, 2, 0, 2, 2)));
}

#[test]
fn honest_trajectory_matches_fair_share_accounting() {
    // with alpha = 1 every settled block is the attacker's
    let m = bitcoin(1.0, 0.5, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let r = random_trajectory(&m, &mut rng, 25);
        assert_eq!(r.reward_defender, 0.0);
        assert_eq!(r.reward_attacker, r.progress);
    }
    assert_eq!(Bitcoin.name(), "bitcoin");
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trajectories_keep_invariants_and_accounting(
            seed in any::<u64>(),
            alpha in 0.0f64..=1.0,
            gamma in 0.0f64..=1.0,
            limit in 1u32..=5,
        ) {
            let m = bitcoin(alpha, gamma, limit);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_trajectory(&m, &mut rng, 30);
            r.state.check_invariants().unwrap();
            prop_assert!(r.state.max_height() <= limit);
            let settled = r.settled();
            let attacker = settled.iter().filter(|&&b| r.full[b].1 == Miner::Attacker).count();
            prop_assert_eq!(r.reward_attacker, attacker as f64);
            prop_assert_eq!(r.progress, settled.len() as f64);
        }

        #[test]
        fn traditional_actions_conserve_mass(
            a in 0u32..=6, h in 0u32..=6, f in 0usize..3,
            alpha in 0.0f64..=1.0, gamma in 0.0f64..=1.0,
        ) {
            let fork = [Fork::Irrelevant, Fork::Relevant, Fork::Active][f];
            prop_assume!(fork != Fork::Active || (h > 0 && a >= h));
            let tm = TraditionalModel::new(alpha, gamma, 6).unwrap();
            let s = ChainState::new(a, h, fork);
            for act in tm.feasible(s) {
                let ts = tm.step(s, act).unwrap();
                let mass: f64 = ts.iter().map(|t| t.probability).sum();
                prop_assert!((mass - 1.0).abs() < 1e-12);
                for t in &ts {
                    prop_assert!(t.state.a.max(t.state.h) <= 7);
                    prop_assert!(t.progress >= 0.0);
                }
            }
        }
    }
}
