use coviz_core::agent::{AgentModel, AgentProfile, Component, Hyperparams};
use coviz_core::engine::record_trace;
use coviz_core::{Action, CollisionFolding, EnvConfig, Highway, Observation};

fn train(profile: AgentProfile, scale: f64, episodes: u32, seed: u64) -> AgentModel {
    let env = EnvConfig { weights: profile.weights().scaled(scale), ..EnvConfig::default() };
    let hp = Hyperparams { episodes, seed, ..Hyperparams::default() };
    AgentModel::train(profile.name(), env, &hp).unwrap()
}

#[test]
fn agent2_prefers_speeding_up_on_a_clear_road() {
    let model = train(AgentProfile::Agent2, 1.0, 2000, 0);
    let clear_slow = Observation { ego_lane: 1, ego_speed_level: 0, occupancy: [false; 6], at_right_most: false };
    let q = model.decomposed_q(&clear_slow);
    assert!(q.total_of(Action::Faster) > q.total_of(Action::Slower), "{q:?}");
    assert!(q.component(Component::Hs, Action::Faster) >= q.component(Component::Hs, Action::Slower));
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let a = train(AgentProfile::Agent1, 1.0, 200, 7);
    let b = train(AgentProfile::Agent1, 1.0, 200, 7);
    assert_eq!(a, b);
    let c = train(AgentProfile::Agent1, 1.0, 200, 8);
    assert_ne!(a.table, c.table);
}

#[test]
fn decomposition_is_exact_on_visited_states() {
    let model = train(AgentProfile::Agent3, 1.0, 300, 1);
    for (_, q) in model.table.iter() {
        let totals = q.totals();
        for a in 0..Action::COUNT {
            let sum: f64 = Component::ALL.iter().map(|&c| q.values[c as usize][a]).sum();
            assert!((totals[a] - sum).abs() <= 1e-12);
            assert!(q.values.iter().flatten().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn scaling_all_weights_keeps_every_greedy_action() {
    // Power-of-two factors scale every float operation exactly, so the
    // scaled run makes the same choices and its values are exact multiples.
    let base = train(AgentProfile::Agent2, 1.0, 400, 3);
    let hw = Highway::new(base.env.clone()).unwrap();
    let eval: Vec<Observation> = (0..20)
        .flat_map(|s| record_trace(&base, &hw, 500 + s).unwrap().steps.into_iter().map(|st| st.obs))
        .collect();
    for factor in [2.0, 4.0, 0.5] {
        let scaled = train(AgentProfile::Agent2, factor, 400, 3);
        for obs in &eval {
            assert_eq!(base.greedy_action(obs), scaled.greedy_action(obs));
            let (q, qs) = (base.decomposed_q(obs), scaled.decomposed_q(obs));
            for c in 0..4 {
                for a in 0..5 {
                    assert_eq!(qs.values[c][a], q.values[c][a] * factor);
                }
            }
        }
    }
}

#[test]
fn uniform_folding_keeps_the_collision_head_empty() {
    let env = EnvConfig { weights: AgentProfile::Agent2.weights(), ..EnvConfig::default() };
    let hp = Hyperparams { episodes: 200, seed: 2, fold_collision: CollisionFolding::Uniform, ..Hyperparams::default() };
    let model = AgentModel::train("folded", env, &hp).unwrap();
    assert!(model.table.iter().all(|(_, q)| q.values[Component::Col as usize].iter().all(|v| *v == 0.0)));
    assert!(model.table.iter().any(|(_, q)| q.values[0].iter().any(|v| *v < 0.0)));
}

#[test]
fn training_metadata_is_recorded() {
    let model = train(AgentProfile::Agent1, 1.0, 50, 4);
    let meta = model.meta.as_ref().unwrap();
    assert_eq!(meta.episodes, 50);
    assert_eq!(meta.seed, 4);
    assert!(meta.env_steps >= 50);
    assert!(meta.env_steps <= 50 * 80);
}
