//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use afl_sim::agents::StrategyKind;
use afl_sim::harness::ExperimentConfig;

/// Shapley value straight from the permutation definition: the average
/// marginal contribution over all `n!` orderings, by recursive enumeration.
pub fn shapley_by_definition(n: usize, f: &dyn Fn(u32) -> f64) -> Vec<f64> {
    fn walk(n: usize, mask: u32, f: &dyn Fn(u32) -> f64, sums: &mut [f64], count: &mut f64) {
        if mask.count_ones() as usize == n {
            *count += 1.0;
            return;
        }
        // Each branch extends every ordering with one more player; marginals
        // are weighted by the number of completions below the branch.
        let remaining = n - mask.count_ones() as usize;
        let completions: f64 = (1..remaining).map(|k| k as f64).product();
        for p in 0..n {
            if mask & (1 << p) == 0 {
                sums[p] += completions * (f(mask | (1 << p)) - f(mask));
                walk(n, mask | (1 << p), f, sums, count);
            }
        }
    }
    let mut sums = vec![0.0; n];
    let mut count = 0.0;
    walk(n, 0, f, &mut sums, &mut count);
    sums.iter().map(|s| s / count).collect()
}

/// Deterministic chain: states `0..len`, ends absorbing. Entering the left
/// end pays `left`, the right end `right`; every other step pays `step`.
#[derive(Debug, Clone, Copy)]
pub struct Chain {
    pub len: usize,
    pub left: f64,
    pub right: f64,
    pub step: f64,
}

impl Chain {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    pub fn is_terminal(&self, s: usize) -> bool {
        s == 0 || s == self.len - 1
    }

    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let next = if a == Self::LEFT { s - 1 } else { s + 1 };
        let reward = if next == 0 {
            self.left
        } else if next == self.len - 1 {
            self.right
        } else {
            self.step
        };
        (next, reward, self.is_terminal(next))
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[s] = 1.0;
        v
    }

    /// Optimal action per non-terminal state by value iteration (γ = 1).
    pub fn optimal_policy(&self) -> Vec<(usize, usize)> {
        let mut v = vec![0.0; self.len];
        for _ in 0..10 * self.len {
            let mut next = v.clone();
            for s in 1..self.len - 1 {
                next[s] = (0..2)
                    .map(|a| {
                        let (t, r, _) = self.step(s, a);
                        r + v[t]
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = next;
        }
        (1..self.len - 1)
            .map(|s| {
                let q: Vec<f64> = (0..2)
                    .map(|a| {
                        let (t, r, _) = self.step(s, a);
                        r + v[t]
                    })
                    .collect();
                (s, if q[Self::LEFT] >= q[Self::RIGHT] { Self::LEFT } else { Self::RIGHT })
            })
            .collect()
    }
}

/// The chain used by the DQN oracle: the near end pays little, the far end
/// pays more, and steps cost, so only the state next to the near end goes left.
pub const ORACLE_CHAIN: Chain = Chain { len: 10, left: 0.4, right: 1.0, step: -0.1 };

/// Small market for fast end-to-end checks.
pub fn small_market(kinds: &[StrategyKind], seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(StrategyKind::MultiBos);
    cfg.seed = seed;
    cfg.sessions = 4;
    cfg.session_len = 12;
    cfg.scenario.num_dos = 40;
    cfg.scenario.task.test_size = 80;
    cfg.fl.rounds_per_session = 2;
    cfg.agents.inter_dqn.hidden = vec![16, 16];
    cfg.agents.intra_dqn.hidden = vec![16, 16];
    cfg.agents.intra_dqn.batch_size = 16;
    cfg.agents.inter_dqn.batch_size = 4;
    cfg.mus.truncate(kinds.len());
    for (mu, &k) in cfg.mus.iter_mut().zip(kinds) {
        mu.params = afl_sim::agents::StrategyParams::new(k);
        mu.budget = afl_sim::Money::from_micros(4_000_000);
    }
    cfg
}

pub const ALL_KINDS: [StrategyKind; 6] = StrategyKind::ALL;
