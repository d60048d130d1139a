mod common;

use afl_sim::agents::{build_strategy, AgentsConfig, InterScales, SessionView, StrategyKind, StrategyParams};
use afl_sim::market::{run_auction, settle, Bid, BidRequest, MuLedger};
use afl_sim::Money;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn small_agents() -> AgentsConfig {
    let mut cfg = AgentsConfig::default();
    cfg.inter_dqn.hidden = vec![8];
    cfg.intra_dqn.hidden = vec![8];
    cfg.inter_dqn.batch_size = 2;
    cfg.intra_dqn.batch_size = 4;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every strategy's bid fits in the remaining session budget, whatever
    /// the market does to it.
    #[test]
    fn bids_never_exceed_remaining_session_budget(
        kind_idx in 0usize..6,
        budget_micros in 0u64..30_000_000,
        sessions in 1usize..5,
        session_len in 1usize..8,
        rival in proptest::collection::vec(0u64..3_000_000, 40),
        reserves in proptest::collection::vec(0u64..1_000_000, 40),
        reps in proptest::collection::vec(0.01f64..1.0, 40),
        seed in any::<u64>(),
    ) {
        let kind = StrategyKind::ALL[kind_idx];
        let budget = Money::from_micros(budget_micros);
        let scales = InterScales { total_budget: budget, num_sessions: sessions, session_scale: session_len };
        let mut strategy = build_strategy(0, &StrategyParams::new(kind), &small_agents(), scales, seed).unwrap();
        strategy.reset_episode(seed);
        let mut ledgers = BTreeMap::from([(0, MuLedger::new(0, budget))]);
        let mut k = 0;
        for session in 0..sessions {
            let view = SessionView {
                session,
                num_sessions: sessions,
                session_len,
                remaining_total: ledgers[&0].remaining_total(),
                total_budget: budget,
            };
            let alloc = strategy.plan_session(&view).unwrap();
            prop_assert!(alloc <= view.remaining_total);
            ledgers.get_mut(&0).unwrap().begin_session(alloc).unwrap();
            for slot in 0..session_len {
                let i = k % rival.len();
                k += 1;
                let request = BidRequest {
                    do_id: i,
                    session,
                    slot,
                    session_len,
                    num_samples: 10,
                    reputation_at_auction: reps[i],
                };
                let price = strategy.bid(&request, &ledgers[&0]);
                prop_assert!(price <= ledgers[&0].remaining_session(), "{kind} bid {price}");
                let bids = vec![Bid { mu_id: 0, price }, Bid { mu_id: 1, price: Money::from_micros(rival[i]) }];
                let outcome = run_auction(bids, Money::from_micros(reserves[i]));
                let mut both = ledgers.clone();
                both.insert(1, MuLedger { session_budget: Money::from_micros(u64::MAX / 2), ..MuLedger::new(1, Money::from_micros(u64::MAX / 2)) });
                settle(&request, &outcome, &mut both).unwrap();
                ledgers.insert(0, both.remove(&0).unwrap());
                strategy.observe(&request, &outcome, &ledgers[&0]);
            }
        }
        strategy.finish_run().unwrap();
    }
}

#[test]
fn zero_only_bid_grid_never_wins_in_a_market() {
    let mut cfg = common::small_market(&[StrategyKind::Const, StrategyKind::FlatDqn, StrategyKind::MultiBos], 5);
    cfg.agents.bid_grid = afl_sim::agents::BidActionGrid::new(vec![0.0]).unwrap();
    let (_, metrics) = afl_sim::harness::run_experiment(&cfg).unwrap();
    for m in metrics.iter().filter(|m| m.strategy.is_learning()) {
        assert_eq!(m.num_data, 0);
        assert_eq!(m.utility, 0.0);
    }
}
