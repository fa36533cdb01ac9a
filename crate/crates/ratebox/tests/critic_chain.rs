//! Critic updates against a hand-solvable MDP. Two states alternate
//! deterministically regardless of the action; reward 1 is paid when
//! leaving state 0. With γ = 0.9 the fixed point is
//!
//!   Q(s0, ·) = 1/(1 − γ²) = 5.263157894736842
//!   Q(s1, ·) = γ/(1 − γ²) = 4.736842105263158
//!
//! so every state-action probe must regress to those two numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratebox::geometry::ConstraintSpec;
use ratebox::learner::{
    augment, critic_update, Backbone, LearnerConfig, Nets, Transition,
};
use ratebox::maps::Mapping;

const GAMMA: f64 = 0.9;
const Q0: f64 = 5.263157894736842;
const Q1: f64 = 4.736842105263158;

fn chain_transition(from0: bool, rng: &mut ChaCha8Rng, spec: &ConstraintSpec) -> Transition {
    let obs = vec![if from0 { 0.0 } else { 1.0 }];
    let obs_next = vec![if from0 { 1.0 } else { 0.0 }];
    let a_prev = vec![rng.gen_range(-0.5..0.5)];
    let a = vec![a_prev[0] + rng.gen_range(-0.29..0.29)];
    Transition {
        s: augment(obs, a_prev, spec).unwrap(),
        s_next: augment(obs_next, a.clone(), spec).unwrap(),
        a,
        r: if from0 { 1.0 } else { 0.0 },
        done: false,
    }
}

#[test]
fn twin_critics_converge_to_chain_values() {
    let spec = ConstraintSpec::symmetric(vec![0.3], 1.0).unwrap();
    let cfg = LearnerConfig {
        backbone: Backbone::Td3,
        mapping: Mapping::DdSrad,
        hidden: vec![32, 32],
        gamma: GAMMA,
        lr: 1e-3,
        tau: 0.01,
        ..LearnerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut nets = Nets::new(1, 1, &cfg, &mut rng).unwrap();

    let pool: Vec<Transition> = (0..512)
        .map(|i| chain_transition(i % 2 == 0, &mut rng, &spec))
        .collect();

    for step in 0..6000 {
        let batch: Vec<&Transition> = (0..64)
            .map(|_| &pool[rng.gen_range(0..pool.len())])
            .collect();
        critic_update(&mut nets, &batch, &cfg, &spec, &mut rng, step).unwrap();
        for (t, o) in [
            (&mut nets.q1_target, &nets.q1),
            (&mut nets.q2_target, &nets.q2),
        ] {
            ratebox::nn::soft_update(t, o, cfg.tau as f32);
        }
    }

    // probe both states over a grid of feasible (a_prev, a) pairs
    let mut worst: f64 = 0.0;
    for s0 in [true, false] {
        let oracle = if s0 { Q0 } else { Q1 };
        for &p in &[-0.4, 0.0, 0.4] {
            for &da in &[-0.2, 0.0, 0.2] {
                let x = ndarray::Array2::from_shape_vec(
                    (1, 3),
                    vec![if s0 { 0.0 } else { 1.0 }, p as f32, (p + da) as f32],
                )
                .unwrap();
                for q in [&nets.q1, &nets.q2] {
                    let v = q.forward(&x)[[0, 0]] as f64;
                    worst = worst.max((v - oracle).abs());
                }
            }
        }
    }
    assert!(
        worst < 5e-2,
        "critic estimate deviates from chain fixed point by {worst}"
    );
}
