use podscale::ppo::{PpoAgent, PpoConfig, RolloutRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BANDIT_OPTIMUM: f64 = 0.3;
pub const BANDIT_TOLERANCE: f64 = 0.1;
/// Consecutive updates the mean must stay within tolerance to count as settled.
pub const BANDIT_HOLD: usize = 10;

/// Update at which the actor mean settles within [`BANDIT_TOLERANCE`] of the
/// optimum of `reward = -|a - 0.3|` and stays there for [`BANDIT_HOLD`] more
/// updates, or `None` if it has not settled by `max_updates`.
///
/// Also checks that the rollout buffer is empty after every update.
pub fn bandit_updates_to_converge(seed: u64, max_updates: usize) -> Option<usize> {
    let cfg = PpoConfig {
        batch_threshold: 32,
        gamma: 0.0,
        ..PpoConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = PpoAgent::new(cfg, 1, &mut rng).unwrap();
    agent.set_stddev(0.3).unwrap();
    let state = vec![1.0];
    let mut entered = None;
    for update in 1..=max_updates + BANDIT_HOLD {
        while !agent.ready() {
            let s = agent.sample_action(&state, true, &mut rng).unwrap();
            agent
                .remember(RolloutRecord {
                    state: state.clone(),
                    action: s.action,
                    raw_action: s.raw,
                    log_prob: s.log_prob,
                    reward: -(s.action - BANDIT_OPTIMUM).abs(),
                    next_state: state.clone(),
                    done: true,
                })
                .unwrap();
        }
        agent.update().unwrap().unwrap();
        assert!(agent.buffer().is_empty());
        let m = agent.mean_action(&state).unwrap();
        if (m - BANDIT_OPTIMUM).abs() < BANDIT_TOLERANCE {
            let e = *entered.get_or_insert(update);
            if update - e >= BANDIT_HOLD {
                return Some(e);
            }
        } else {
            entered = None;
            if update > max_updates {
                return None;
            }
        }
    }
    entered.filter(|&e| e <= max_updates)
}
