mod support;

use gametalk::training::{
    accumulate_gradients, dpo_pairs_loss, dpo_permutation_loss, dpo_ties_loss, grpo_batch_loss, grpo_loss,
    star_sft_loss, Algo, GrpoConfig, TrainRunConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

const TRIALS: usize = 25;

fn grpo_cfg() -> GrpoConfig {
    GrpoConfig { clip: 0.2, kl_coef: 0.1, entropy_coef: 0.01, std_floor: 1e-8 }
}

#[test]
fn preference_and_policy_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let all: Vec<usize> = (0..10).collect();
    for trial in 0..TRIALS {
        let model = tiny_model(&mut rng);
        let theta = model.theta.clone();
        let theta_old: Vec<f64> = theta.iter().map(|x| x + rand::Rng::gen_range(&mut rng, -0.5..0.5)).collect();
        let theta_ref = random_theta(&mut rng, 10, 1.0);
        let mut group = random_group(&mut rng, &model, &theta_old, &theta_ref, 5, 2);
        while group.rewards().iter().all(|r| *r == group.rewards()[0]) {
            group = random_group(&mut rng, &model, &theta_old, &theta_ref, 5, 2);
        }
        let cfg = grpo_cfg();
        let errs = [
            ("grpo", fd_max_rel_error(|t| grpo_loss(&model, t, &theta_ref, &group, &cfg).unwrap(), &theta, &all)),
            ("dpo_pairs", fd_max_rel_error(|t| dpo_pairs_loss(&model, t, &group, 0.5).unwrap(), &theta, &all)),
            ("dpo_perm", fd_max_rel_error(|t| dpo_permutation_loss(&model, t, &group, 0.5, 3).unwrap(), &theta, &all)),
            ("dpo_ties", fd_max_rel_error(|t| dpo_ties_loss(&model, t, &group, 0.5).unwrap(), &theta, &all)),
        ];
        for (name, e) in errs {
            assert!(e < FD_REL_TOL, "trial {trial}: {name} relative error {e:e}");
        }
    }
}

#[test]
fn star_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..5 {
        let (policy, data) = star_case(&mut rng);
        assert!(!data.is_empty());
        let theta = policy.model.theta.clone();
        let f = |t: &[f64]| star_sft_loss(&policy, t, &data).unwrap();
        let coords = probe_coords(&mut rng, &f(&theta).grad, 5);
        let e = fd_max_rel_error(f, &theta, &coords);
        assert!(e < FD_REL_TOL, "trial {trial}: star relative error {e:e}");
    }
}

#[test]
fn per_completion_accumulation_equals_batch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (policy, theta_ref, groups) = real_groups(&mut rng, 6);
    let cfg = TrainRunConfig { algo: Algo::Grpo, grpo: grpo_cfg(), ..TrainRunConfig::default() };
    let refs: Vec<_> = groups.iter().collect();
    let acc = accumulate_gradients(&cfg, &policy, &theta_ref, &refs, 0).unwrap().expect("some group has a signal");
    let batch = grpo_batch_loss(&policy.model, &policy.model.theta, &theta_ref, &groups, &cfg.grpo).unwrap();
    assert!((acc.loss - batch.loss).abs() <= 1e-10);
    let worst = acc.grad.iter().zip(&batch.grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "max gradient difference {worst:e}");
}
