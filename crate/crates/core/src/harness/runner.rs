//! Episode orchestration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;

use super::config::ExperimentConfig;
use super::log::{
    compute_metrics, AuctionRecord, ContributionRecord, Metrics, OwnerRecord, RosterEntry,
    RunLog, SessionRecord,
};
use crate::agents::{build_strategy, InterScales, Mode, SessionSummary, SessionView, Strategy};
use crate::flsim::{evaluate, generate_scenario, run_fl_session, ModelParams, Participant};
use crate::market::{session_auction_loop, Bidder, DataOwner, MuId, MuLedger};
use crate::money::Money;
use crate::reputation::ReputationLedger;
use crate::seed::{self, stream};
use crate::{Error, Result};

/// A roster of strategies that persists across episodes.
pub struct Simulation {
    cfg: ExperimentConfig,
    strategies: Vec<Box<dyn Strategy>>,
    mode: Mode,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scales = InterScales {
            total_budget: Money::ZERO,
            num_sessions: cfg.sessions,
            session_scale: cfg.session_len,
        };
        let strategies = cfg
            .mus
            .iter()
            .map(|mu| {
                build_strategy(
                    mu.id,
                    &mu.params,
                    &cfg.agents,
                    InterScales { total_budget: mu.budget, ..scales },
                    seed::derive(cfg.seed, &[stream::STRATEGY, mu.id as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            strategies,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn strategies(&self) -> &[Box<dyn Strategy>] {
        &self.strategies
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for s in &mut self.strategies {
            s.set_mode(mode);
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Seed of training episode `e`.
    pub fn episode_seed(&self, e: u64) -> u64 {
        seed::derive(self.cfg.seed, &[stream::EPISODE, e])
    }

    /// One full market run: fresh owners, budgets and reputations; learned
    /// strategy state carries over.
    pub fn run_episode(&mut self, episode_seed: u64) -> Result<RunLog> {
        let cfg = &self.cfg;
        let scenario = generate_scenario(&cfg.scenario, &mut seed::rng(episode_seed, &[stream::SCENARIO]))?;
        let task = &scenario.task;
        let mut order_rng = seed::rng(episode_seed, &[stream::SESSION_ORDER]);
        let mut fl_rng = seed::rng(episode_seed, &[stream::FL]);

        for (s, mu) in self.strategies.iter_mut().zip(&cfg.mus) {
            s.reset_episode(seed::derive(episode_seed, &[stream::STRATEGY, mu.id as u64]));
        }

        let mut ledgers: BTreeMap<MuId, MuLedger> =
            cfg.mus.iter().map(|m| (m.id, MuLedger::new(m.id, m.budget))).collect();
        let mut reputation = ReputationLedger::new(scenario.owners.len());
        let mut models: Vec<ModelParams> = cfg.mus.iter().map(|_| ModelParams::for_task(task)).collect();
        let start_accuracy = evaluate(&models[0], task)?;
        let mut accuracy = vec![start_accuracy; cfg.mus.len()];

        let mut log = RunLog {
            seed: episode_seed,
            roster: cfg
                .mus
                .iter()
                .zip(&self.strategies)
                .map(|(m, s)| RosterEntry { mu_id: m.id, strategy: s.kind(), budget: m.budget })
                .collect(),
            owners: scenario
                .owners
                .iter()
                .map(|o| OwnerRecord {
                    do_id: o.id,
                    num_samples: o.num_samples,
                    noise_fraction: o.noise_fraction,
                    reserve: o.reserve_price,
                })
                .collect(),
            ..RunLog::default()
        };

        for session in 0..cfg.sessions {
            let picked = index::sample(&mut order_rng, scenario.owners.len(), cfg.session_len);
            let dos: Vec<&DataOwner> = picked.iter().map(|i| &scenario.owners[i]).collect();

            let mut allocated = Vec::with_capacity(cfg.mus.len());
            for (strategy, mu) in self.strategies.iter_mut().zip(&cfg.mus) {
                let ledger = ledgers.get_mut(&mu.id).expect("ledger per MU");
                let view = SessionView {
                    session,
                    num_sessions: cfg.sessions,
                    session_len: cfg.session_len,
                    remaining_total: ledger.remaining_total(),
                    total_budget: mu.budget,
                };
                let budget = strategy.plan_session(&view)?;
                ledger.begin_session(budget)?;
                allocated.push(budget);
            }

            let rep_before: Vec<f64> = (0..scenario.owners.len()).map(|i| reputation.value(i)).collect();
            let settled = {
                let mut bidders: Vec<&mut dyn Bidder> = self
                    .strategies
                    .iter_mut()
                    .map(|s| s.as_mut() as &mut dyn Bidder)
                    .collect();
                session_auction_loop(session, &dos, |id| rep_before[id], &mut bidders, &mut ledgers)?
            };

            // Each MU trains on what it bought; contributions feed the shared ledger.
            let mut won: Vec<Vec<usize>> = vec![Vec::new(); cfg.mus.len()];
            for a in &settled {
                if let Some(w) = a.outcome.winner {
                    let k = cfg.mus.iter().position(|m| m.id == w).expect("winner on roster");
                    won[k].push(a.request.do_id);
                }
            }
            for (k, mu) in cfg.mus.iter().enumerate() {
                if won[k].is_empty() {
                    continue;
                }
                let recruited: Vec<Participant<'_>> = won[k]
                    .iter()
                    .map(|&d| Participant { owner: &scenario.owners[d], data: &scenario.datasets[d] })
                    .collect();
                let result = run_fl_session(&models[k], &recruited, task, &cfg.fl, &cfg.shapley, &mut fl_rng)?;
                for (round, contrib) in result.contributions.iter().enumerate() {
                    reputation.apply(contrib);
                    log.contributions.extend(contrib.phi.iter().map(|&(do_id, phi)| ContributionRecord {
                        session,
                        mu_id: mu.id,
                        round,
                        do_id,
                        phi,
                    }));
                }
                models[k] = result.params;
                accuracy[k] = result.accuracy;
            }

            for (k, (strategy, mu)) in self.strategies.iter_mut().zip(&cfg.mus).enumerate() {
                let bids: Vec<Money> = settled
                    .iter()
                    .flat_map(|a| a.outcome.bids.iter().filter(|b| b.mu_id == mu.id).map(|b| b.price))
                    .collect();
                let wins: Vec<_> = settled.iter().filter(|a| a.outcome.won_by(mu.id)).collect();
                let payments: Vec<Money> = wins.iter().map(|a| a.outcome.market_price.unwrap_or(Money::ZERO)).collect();
                let reps_at_win: Vec<f64> = wins.iter().map(|a| a.request.reputation_at_auction).collect();
                let reps_after: Vec<f64> = wins.iter().map(|a| reputation.value(a.request.do_id)).collect();
                let summary = SessionSummary::from_activity(
                    session,
                    cfg.session_len,
                    allocated[k],
                    &bids,
                    &payments,
                    &reps_at_win,
                );
                let reward = cfg.agents.inter_reward.reward(&reps_after);
                strategy.finish_session(&summary, reward)?;
                log.sessions.push(SessionRecord {
                    session,
                    mu_id: mu.id,
                    allocated_budget: allocated[k],
                    spend: summary.spend,
                    wins: summary.wins,
                    inter_reward: reward,
                    accuracy: accuracy[k],
                });
            }

            log.auctions.extend(settled.into_iter().map(|a| AuctionRecord {
                session,
                slot: a.request.slot,
                do_id: a.request.do_id,
                reserve: a.reserve,
                winner: a.outcome.winner,
                price: a.outcome.market_price,
                failed: a.outcome.failed,
                bids: a.outcome.bids,
            }));
            log.reputations.push(reputation.records().to_vec());
        }

        for s in &mut self.strategies {
            s.finish_run()?;
        }
        Ok(log)
    }

    /// Runs `episodes` training episodes starting at index `first`, calling
    /// `after` with each episode's index and log.
    pub fn train(
        &mut self,
        first: u64,
        episodes: u64,
        mut after: impl FnMut(u64, &RunLog) -> Result<()>,
    ) -> Result<()> {
        let mode = self.mode;
        self.set_mode(Mode::Train);
        for e in first..first + episodes {
            let log = self.run_episode(self.episode_seed(e))?;
            after(e, &log)?;
        }
        self.set_mode(mode);
        Ok(())
    }

    /// Frozen greedy run at the configured seed.
    pub fn evaluate(&mut self) -> Result<(RunLog, Metrics)> {
        let mode = self.mode;
        self.set_mode(Mode::Eval);
        let log = self.run_episode(self.cfg.seed);
        self.set_mode(mode);
        let mut log = log?;
        log.seed = self.cfg.seed;
        let metrics = compute_metrics(&log);
        Ok((log, metrics))
    }

    pub fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        for (s, mu) in self.strategies.iter().zip(&self.cfg.mus) {
            let parts = s.checkpoint();
            if parts.is_empty() {
                continue;
            }
            let sub = dir.join(format!("mu_{}", mu.id));
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (name, bytes) in parts {
                let path = sub.join(format!("{name}.ckpt"));
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }

    /// Restores every learning MU from `dir`; returns how many MUs were restored.
    pub fn load_checkpoints(&mut self, dir: &Path) -> Result<usize> {
        let mut restored = 0;
        for (s, mu) in self.strategies.iter_mut().zip(&self.cfg.mus) {
            let names: Vec<&'static str> = s.checkpoint().into_iter().map(|(n, _)| n).collect();
            if names.is_empty() {
                continue;
            }
            let sub = dir.join(format!("mu_{}", mu.id));
            for name in names {
                let path = sub.join(format!("{name}.ckpt"));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                s.restore(name, &bytes)?;
            }
            restored += 1;
        }
        Ok(restored)
    }
}

/// One online run at the configured seed: learning strategies start from
/// fresh networks and learn as they go.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunLog, Metrics)> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut log = sim.run_episode(cfg.seed)?;
    log.seed = cfg.seed;
    let metrics = compute_metrics(&log);
    Ok((log, metrics))
}

/// Trains a fresh roster for `cfg.episodes` episodes and evaluates it frozen.
pub fn train_and_evaluate(cfg: &ExperimentConfig) -> Result<(RunLog, Metrics)> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.train(0, cfg.episodes as u64, |_, _| Ok(()))?;
    sim.evaluate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{StrategyKind, StrategyParams};
    use crate::harness::config::MuConfig;

    fn small(kinds: &[StrategyKind], budget: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.sessions = 2;
        cfg.session_len = 6;
        cfg.scenario.num_dos = 12;
        cfg.scenario.task.test_size = 60;
        cfg.fl.rounds_per_session = 1;
        cfg.agents.inter_dqn.hidden = vec![8];
        cfg.agents.intra_dqn.hidden = vec![8];
        cfg.mus = kinds
            .iter()
            .enumerate()
            .map(|(id, &k)| MuConfig { id, budget: Money::from_f64_round(budget), params: StrategyParams::new(k) })
            .collect();
        cfg
    }

    #[test]
    fn uncontested_const_buys_everything() {
        let mut cfg = small(&[StrategyKind::Const], 1000.0);
        cfg.sessions = 1;
        cfg.mus[0].params.const_bid = Money::from_f64_round(5.0);
        let (log, metrics) = run_experiment(&cfg).unwrap();
        assert_eq!(log.auctions.len(), 6);
        assert!(log.auctions.iter().all(|a| a.winner == Some(0)));
        let sold: usize = log.auctions.iter().map(|a| log.owners[a.do_id].num_samples).sum();
        assert_eq!(metrics[0].num_data, sold);
        // Uncontested: each DO sells at its reserve.
        assert!(log.auctions.iter().all(|a| a.price == Some(a.reserve)));
    }

    #[test]
    fn identical_const_bidders_lowest_id_wins() {
        let mut cfg = small(&[StrategyKind::Const, StrategyKind::Const], 1000.0);
        for mu in &mut cfg.mus {
            mu.params.const_bid = Money::from_f64_round(0.7);
        }
        let (log, _) = run_experiment(&cfg).unwrap();
        for a in &log.auctions {
            assert_eq!(a.winner, Some(0));
            assert_eq!(a.price, Some(Money::from_f64_round(0.7)));
        }
    }

    #[test]
    fn runs_are_deterministic_and_counts_match() {
        let cfg = small(&[StrategyKind::Rand, StrategyKind::MultiBos, StrategyKind::FlatDqn], 3.0);
        let (a, ma) = run_experiment(&cfg).unwrap();
        let (b, mb) = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.auctions.len(), cfg.sessions * cfg.session_len);
        assert_eq!(a.sessions.len(), cfg.sessions * cfg.mus.len());
        assert_eq!(a.reputations.len(), cfg.sessions);
    }

    #[test]
    fn checkpoints_roundtrip_through_disk() {
        let cfg = small(&[StrategyKind::Const, StrategyKind::MultiBos], 3.0);
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        sim.train(0, 1, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sim.save_checkpoints(dir.path()).unwrap();
        let mut fresh = Simulation::new(cfg).unwrap();
        assert_eq!(fresh.load_checkpoints(dir.path()).unwrap(), 1);
        assert_eq!(fresh.strategies()[1].checkpoint(), sim.strategies()[1].checkpoint());
        assert_eq!(fresh.evaluate().unwrap(), sim.evaluate().unwrap());
    }
}
