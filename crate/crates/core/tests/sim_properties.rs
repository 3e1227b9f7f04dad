use coviz_core::{Action, EnvConfig, Highway};
use proptest::prelude::*;

fn actions() -> impl Strategy<Value = Vec<Action>> {
    proptest::collection::vec((0usize..5).prop_map(|a| Action::ALL[a]), 0..120)
}

/// Applies actions until the episode ends, returning the visited states and
/// every reward/termination triple.
fn run(hw: &Highway, seed: u64, actions: &[Action]) -> Vec<(coviz_core::SimState, coviz_core::RewardVector, bool)> {
    let mut state = hw.reset(seed);
    let mut out = Vec::new();
    for &a in actions {
        let t = hw.step(&state, a).unwrap();
        out.push((t.next.clone(), t.reward, t.terminated));
        if t.terminated {
            break;
        }
        state = t.next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stepping_a_copy_leaves_the_original_untouched(seed in any::<u64>(), acts in actions(), probe in 0usize..5) {
        let hw = Highway::new(EnvConfig::default()).unwrap();
        let states = run(&hw, seed, &acts);
        let state = states.iter().rev().find(|(_, _, done)| !done).map(|(s, _, _)| s.clone()).unwrap_or_else(|| hw.reset(seed));
        let before = serde_json::to_string(&state).unwrap();
        let copy = state.clone();
        let _ = hw.step(&copy, Action::ALL[probe]).unwrap();
        prop_assert_eq!(serde_json::to_string(&state).unwrap(), before);
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>(), acts in actions()) {
        let hw = Highway::new(EnvConfig::default()).unwrap();
        let valid: Vec<Action> = acts.iter().copied().take(run(&hw, seed, &acts).len()).collect();
        let a = serde_json::to_string(&hw.replay(seed, &valid).unwrap()).unwrap();
        let b = serde_json::to_string(&hw.replay(seed, &valid).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn clamping_reward_support_and_episode_bound(seed in any::<u64>(), acts in actions(), lanes in 2usize..6) {
        let cfg = EnvConfig { lanes, start_lane: 0, ..EnvConfig::default() };
        let hw = Highway::new(cfg.clone()).unwrap();
        let mut prev = hw.reset(seed);
        let steps = run(&hw, seed, &acts);
        prop_assert!(steps.len() <= cfg.episode_cap as usize);
        for (next, reward, terminated) in &steps {
            prop_assert!(next.ego.lane < lanes);
            prop_assert!(next.ego.speed_level < cfg.speeds.len());
            prop_assert_eq!(reward.col != 0.0, next.collided);
            prop_assert!(!next.collided || *terminated);
            prop_assert_eq!(reward.cl != 0.0, next.ego.lane != prev.ego.lane);
            prop_assert!(reward.cl >= 0.0 && reward.hs >= 0.0 && reward.rml >= 0.0 && reward.col <= 0.0);
            prev = next.clone();
        }
    }

    #[test]
    fn serialized_state_round_trips(seed in any::<u64>(), acts in actions()) {
        let hw = Highway::new(EnvConfig::default()).unwrap();
        for (state, _, _) in run(&hw, seed, &acts) {
            let text = serde_json::to_string(&state).unwrap();
            let back: coviz_core::SimState = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &state);
        }
    }
}

#[test]
fn restored_snapshot_continues_identically() {
    // A restored copy must consume the same random stream (respawns) as the
    // original trajectory.
    let hw = Highway::new(EnvConfig::default()).unwrap();
    let acts = vec![Action::Faster; 40];
    let states = hw.replay(9, &acts[..run(&hw, 9, &acts).len()]).unwrap();
    let mid = states.len() / 2;
    let text = serde_json::to_string(&states[mid]).unwrap();
    let mut restored: coviz_core::SimState = serde_json::from_str(&text).unwrap();
    for (i, expected) in states[mid + 1..].iter().enumerate() {
        let t = hw.step(&restored, acts[mid + i]).unwrap();
        assert_eq!(&t.next, expected);
        restored = t.next;
    }
}
