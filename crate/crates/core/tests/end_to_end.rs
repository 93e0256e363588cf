use std::sync::OnceLock;

use dialpolicy::agents::{train_agent, AgentConfig, AgentReward, Algo, TrainContext};
use dialpolicy::dialenv::{
    generate_corpus, handcrafted_reward, Corpus, CorpusConfig, DialogueEnv, RewardSource, TurnStatus,
};
use dialpolicy::rewardgan::{train_reward, GanConfig, RewardModel, LOG_D_FLOOR};
use dialpolicy::statevae::{train_vae, VaeConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    env: DialogueEnv,
    corpus: Corpus,
    model: RewardModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let env = DialogueEnv::desk();
        let cfg = CorpusConfig {
            episodes: 150,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let vae_cfg = VaeConfig {
            hidden: 32,
            latent: 8,
            epochs: 2,
            ..VaeConfig::default()
        };
        let (vae, _) = train_vae(&corpus.states(), &vae_cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let gan = GanConfig {
            noise_dim: 8,
            hidden: 16,
            disc_hidden: 16,
            max_steps: 40,
            eval_every: 20,
            ..GanConfig::default()
        };
        let (model, _) = train_reward(&corpus, &vae, env.registry(), &gan, env.t_max(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        Fixture { env, corpus, model }
    })
}

#[test]
fn corpus_and_reward_survive_a_save_load_cycle() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let reg = f.env.registry();
    f.corpus.save(&dir.path().join("c.txt"), reg).unwrap();
    let back = Corpus::load(&dir.path().join("c.txt"), reg).unwrap();
    assert_eq!(back.num_turns(), f.corpus.num_turns());
    assert_eq!(back.pairs(), f.corpus.pairs());

    f.model.save(&dir.path().join("r.bin"), reg).unwrap();
    let model = RewardModel::load(&dir.path().join("r.bin"), reg).unwrap();
    let pairs = f.corpus.pairs();
    let states: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
    let idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    assert_eq!(model.log_d_indexed(&states, &idx).unwrap(), f.model.log_d_indexed(&states, &idx).unwrap());
}

#[test]
fn agents_train_under_both_rewards_and_are_reproducible() {
    let f = fixture();
    let cfg = AgentConfig {
        budget_frames: 120,
        eval_every: 60,
        eval_episodes: 5,
        final_eval_episodes: 5,
        ..AgentConfig::default()
    };
    for algo in [Algo::Dqn, Algo::Wdqn, Algo::Ppo] {
        for reward in [AgentReward::Human, AgentReward::Learned(&f.model)] {
            let ctx = TrainContext {
                env: &f.env,
                catalog: &f.corpus.catalog,
                reward,
                corpus: Some(&f.corpus),
                monitor: Some(&f.model),
            };
            let cfg = AgentConfig { algo, ..cfg };
            let a = train_agent(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let b = train_agent(&ctx, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.final_eval, b.final_eval);
            assert_eq!(a.curve.iter().map(|p| p.frames).collect::<Vec<_>>(), vec![0, 60, 120]);
            assert!(a.curve.iter().all(|p| p.mean_learned_reward.is_some_and(|r| r <= 0.0)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The learned reward adds the clamped log D of the pair to the
    // handcrafted value, whatever the turn outcome.
    #[test]
    fn learned_reward_is_handcrafted_plus_clamped_log_d(pair in 0usize..100, status in 0usize..3, t in 1u32..80) {
        let f = fixture();
        let pairs = f.corpus.pairs();
        let (state, index) = &pairs[pair % pairs.len()];
        let action = &f.corpus.catalog.actions()[*index];
        let status = [TurnStatus::Ongoing, TurnStatus::Success, TurnStatus::Failure][status];
        let log_d = f.model.log_d(state, action, Some(*index)).unwrap();
        prop_assert!((LOG_D_FLOOR..=0.0).contains(&log_d));
        let r = AgentReward::Learned(&f.model).reward(state, action, Some(*index), status, t);
        prop_assert_eq!(r, handcrafted_reward(status, t) + log_d);
        prop_assert_eq!(AgentReward::Human.reward(state, action, Some(*index), status, t), handcrafted_reward(status, t));
    }
}
