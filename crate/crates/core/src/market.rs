//! The data-owner market: bid requests, single-item sealed-bid auctions with
//! reserve prices, settlement, and the per-session auction loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::money::Money;
use crate::{Error, Result};

pub type MuId = usize;
pub type DoId = usize;

/// A seller of local training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataOwner {
    pub id: DoId,
    pub num_samples: usize,
    /// Fraction of local samples whose labels are flipped.
    pub noise_fraction: f64,
    /// Categorical distribution over classes that the local labels follow.
    pub class_profile: Vec<f64>,
    pub reserve_price: Money,
}

impl DataOwner {
    pub fn new(
        id: DoId,
        num_samples: usize,
        noise_fraction: f64,
        class_profile: Vec<f64>,
        reserve_price: Money,
    ) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::Scenario(format!("data owner {id} has no samples")));
        }
        if !(0.0..=1.0).contains(&noise_fraction) {
            return Err(Error::Scenario(format!(
                "data owner {id}: noise fraction {noise_fraction} outside [0, 1]"
            )));
        }
        let total: f64 = class_profile.iter().sum();
        if class_profile.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Scenario(format!(
                "data owner {id}: class profile must be a distribution (sums to {total})"
            )));
        }
        Ok(Self {
            id,
            num_samples,
            noise_fraction,
            class_profile,
            reserve_price,
        })
    }
}

/// What an MU sees about a data owner when asked to bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidRequest {
    pub do_id: DoId,
    pub session: usize,
    /// Position of this auction within the session, `0..session_len`.
    pub slot: usize,
    pub session_len: usize,
    pub num_samples: usize,
    pub reputation_at_auction: f64,
}

impl BidRequest {
    /// DOs still to be auctioned in this session, including this one.
    pub fn remaining_dos(&self) -> usize {
        self.session_len - self.slot
    }
}

/// A sealed bid. A price of zero is an abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub mu_id: MuId,
    pub price: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub winner: Option<MuId>,
    pub market_price: Option<Money>,
    pub failed: bool,
    pub bids: Vec<Bid>,
}

impl AuctionOutcome {
    pub fn won_by(&self, mu: MuId) -> bool {
        self.winner == Some(mu)
    }
}

/// Second-price sealed-bid auction with a reserve floor.
///
/// Zero bids are abstentions. Among bids at or above `reserve` the highest
/// wins (ties go to the lowest `mu_id`) and pays the larger of the runner-up
/// qualifying bid and the reserve. Without a qualifying bid the auction fails.
pub fn run_auction(bids: Vec<Bid>, reserve: Money) -> AuctionOutcome {
    let mut best: Option<Bid> = None;
    let mut second: Option<Money> = None;
    for bid in bids.iter().filter(|b| !b.price.is_zero() && b.price >= reserve) {
        match best {
            None => best = Some(*bid),
            Some(cur) => {
                let beats = bid.price > cur.price || (bid.price == cur.price && bid.mu_id < cur.mu_id);
                if beats {
                    second = Some(second.map_or(cur.price, |s| s.max(cur.price)));
                    best = Some(*bid);
                } else {
                    second = Some(second.map_or(bid.price, |s| s.max(bid.price)));
                }
            }
        }
    }
    match best {
        Some(w) => AuctionOutcome {
            winner: Some(w.mu_id),
            market_price: Some(second.map_or(reserve, |s| s.max(reserve))),
            failed: false,
            bids,
        },
        None => AuctionOutcome {
            winner: None,
            market_price: None,
            failed: true,
            bids,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Win {
    pub do_id: DoId,
    pub price: Money,
    pub session: usize,
}

/// Budget bookkeeping of one MU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuLedger {
    pub mu_id: MuId,
    pub total_budget: Money,
    pub total_spent: Money,
    pub session_budget: Money,
    pub session_spent: Money,
    pub wins: Vec<Win>,
}

impl MuLedger {
    pub fn new(mu_id: MuId, total_budget: Money) -> Self {
        Self {
            mu_id,
            total_budget,
            total_spent: Money::ZERO,
            session_budget: Money::ZERO,
            session_spent: Money::ZERO,
            wins: Vec::new(),
        }
    }

    pub fn remaining_total(&self) -> Money {
        self.total_budget.saturating_sub(self.total_spent)
    }

    pub fn remaining_session(&self) -> Money {
        self.session_budget.saturating_sub(self.session_spent)
    }

    /// Opens a session with budget `budget`, which must fit in what is left
    /// of the total budget.
    pub fn begin_session(&mut self, budget: Money) -> Result<()> {
        if budget > self.remaining_total() {
            return Err(Error::Protocol(format!(
                "MU {} allocated {budget} with only {} left",
                self.mu_id,
                self.remaining_total()
            )));
        }
        self.session_budget = budget;
        self.session_spent = Money::ZERO;
        Ok(())
    }

    pub fn session_wins(&self, session: usize) -> impl Iterator<Item = &Win> {
        self.wins.iter().filter(move |w| w.session == session)
    }
}

/// Charges the winner of `outcome` its market price.
pub fn settle(
    request: &BidRequest,
    outcome: &AuctionOutcome,
    ledgers: &mut BTreeMap<MuId, MuLedger>,
) -> Result<()> {
    let (Some(winner), Some(price)) = (outcome.winner, outcome.market_price) else {
        return Ok(());
    };
    let ledger = ledgers
        .get_mut(&winner)
        .ok_or_else(|| Error::Protocol(format!("winner {winner} has no ledger")))?;
    if price > ledger.remaining_session() {
        return Err(Error::Protocol(format!(
            "MU {winner} owes {price} for DO {} but has {} left in session {}",
            request.do_id,
            ledger.remaining_session(),
            request.session
        )));
    }
    ledger.session_spent += price;
    ledger.total_spent += price;
    ledger.wins.push(Win {
        do_id: request.do_id,
        price,
        session: request.session,
    });
    Ok(())
}

/// An MU's side of the auction protocol.
pub trait Bidder {
    fn mu_id(&self) -> MuId;

    /// Bid for `request`. Must not exceed the ledger's remaining session budget.
    fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money;

    /// Called after settlement with the ledger as it stands afterwards.
    fn observe(&mut self, _request: &BidRequest, _outcome: &AuctionOutcome, _ledger: &MuLedger) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettledAuction {
    pub request: BidRequest,
    pub reserve: Money,
    pub outcome: AuctionOutcome,
}

/// Runs one auction per data owner, in the given order, querying every
/// bidder once per request. Bidders whose session budget is exhausted are
/// still queried but their bid is recorded as an abstention.
pub fn session_auction_loop(
    session: usize,
    dos: &[&DataOwner],
    reputation_of: impl Fn(DoId) -> f64,
    bidders: &mut [&mut dyn Bidder],
    ledgers: &mut BTreeMap<MuId, MuLedger>,
) -> Result<Vec<SettledAuction>> {
    let mut settled = Vec::with_capacity(dos.len());
    for (slot, owner) in dos.iter().enumerate() {
        let request = BidRequest {
            do_id: owner.id,
            session,
            slot,
            session_len: dos.len(),
            num_samples: owner.num_samples,
            reputation_at_auction: reputation_of(owner.id),
        };
        let mut bids = Vec::with_capacity(bidders.len());
        for bidder in bidders.iter_mut() {
            let id = bidder.mu_id();
            let ledger = ledgers
                .get(&id)
                .ok_or_else(|| Error::Protocol(format!("bidder {id} has no ledger")))?;
            let price = bidder.bid(&request, ledger);
            let remaining = ledger.remaining_session();
            let price = if remaining.is_zero() { Money::ZERO } else { price };
            if price > remaining {
                return Err(Error::Protocol(format!(
                    "MU {id} bid {price} with {remaining} left in session {session}"
                )));
            }
            bids.push(Bid { mu_id: id, price });
        }
        let outcome = run_auction(bids, owner.reserve_price);
        settle(&request, &outcome, ledgers)?;
        for bidder in bidders.iter_mut() {
            let ledger = &ledgers[&bidder.mu_id()];
            bidder.observe(&request, &outcome, ledger);
        }
        settled.push(SettledAuction {
            request,
            reserve: owner.reserve_price,
            outcome,
        });
    }
    Ok(settled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(units: f64) -> Money {
        Money::from_f64_round(units)
    }

    fn bids(prices: &[(MuId, f64)]) -> Vec<Bid> {
        prices
            .iter()
            .map(|&(mu_id, p)| Bid { mu_id, price: m(p) })
            .collect()
    }

    #[test]
    fn second_price_with_reserve() {
        let o = run_auction(bids(&[(0, 5.0), (1, 3.0), (2, 2.0)]), m(1.0));
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.market_price, Some(m(3.0)));
        assert!(!o.failed);
    }

    #[test]
    fn lone_bidder_pays_reserve() {
        let o = run_auction(bids(&[(0, 5.0)]), m(2.0));
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.market_price, Some(m(2.0)));
    }

    #[test]
    fn below_reserve_fails() {
        let o = run_auction(bids(&[(0, 2.0)]), m(3.0));
        assert!(o.failed);
        assert_eq!(o.winner, None);
        assert_eq!(o.market_price, None);
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let o = run_auction(bids(&[(1, 3.0), (0, 3.0)]), m(1.0));
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.market_price, Some(m(3.0)));
    }

    #[test]
    fn empty_and_abstaining_bids_fail() {
        assert!(run_auction(vec![], m(1.0)).failed);
        assert!(run_auction(bids(&[(0, 0.0), (1, 0.0)]), Money::ZERO).failed);
    }

    #[test]
    fn runner_up_below_reserve_is_ignored() {
        let o = run_auction(bids(&[(0, 5.0), (1, 0.5)]), m(1.0));
        assert_eq!(o.market_price, Some(m(1.0)));
    }

    fn request(do_id: DoId, session: usize) -> BidRequest {
        BidRequest {
            do_id,
            session,
            slot: 0,
            session_len: 1,
            num_samples: 10,
            reputation_at_auction: 0.5,
        }
    }

    #[test]
    fn settle_charges_winner_only() {
        let mut ledgers = BTreeMap::new();
        for id in 0..2 {
            let mut l = MuLedger::new(id, m(10.0));
            l.begin_session(m(5.0)).unwrap();
            ledgers.insert(id, l);
        }
        let o = run_auction(bids(&[(0, 4.0), (1, 3.0)]), m(1.0));
        settle(&request(7, 0), &o, &mut ledgers).unwrap();
        assert_eq!(ledgers[&0].session_spent, m(3.0));
        assert_eq!(ledgers[&0].total_spent, m(3.0));
        assert_eq!(ledgers[&0].wins, vec![Win { do_id: 7, price: m(3.0), session: 0 }]);
        assert_eq!(ledgers[&1].total_spent, Money::ZERO);

        let before = ledgers.clone();
        let failed = run_auction(vec![], m(1.0));
        settle(&request(8, 0), &failed, &mut ledgers).unwrap();
        assert_eq!(before, ledgers);
    }

    #[test]
    fn settle_exact_remaining_then_abstain() {
        let mut ledgers = BTreeMap::new();
        let mut l = MuLedger::new(0, m(10.0));
        l.begin_session(m(3.0)).unwrap();
        ledgers.insert(0, l);
        let o = run_auction(bids(&[(0, 3.0)]), m(3.0));
        settle(&request(1, 0), &o, &mut ledgers).unwrap();
        assert_eq!(ledgers[&0].session_spent, ledgers[&0].session_budget);
        assert!(ledgers[&0].remaining_session().is_zero());
    }

    #[test]
    fn settle_over_budget_is_protocol_violation() {
        let mut ledgers = BTreeMap::new();
        let mut l = MuLedger::new(0, m(10.0));
        l.begin_session(m(2.0)).unwrap();
        ledgers.insert(0, l);
        let o = run_auction(bids(&[(0, 3.0)]), m(2.5));
        assert!(matches!(
            settle(&request(1, 0), &o, &mut ledgers),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn begin_session_rejects_overallocation() {
        let mut l = MuLedger::new(0, m(1.0));
        assert!(l.begin_session(m(1.5)).is_err());
        assert!(l.begin_session(m(1.0)).is_ok());
    }

    #[test]
    fn owner_validation() {
        assert!(DataOwner::new(0, 0, 0.0, vec![1.0], Money::ZERO).is_err());
        assert!(DataOwner::new(0, 5, 1.5, vec![1.0], Money::ZERO).is_err());
        assert!(DataOwner::new(0, 5, 0.0, vec![0.5, 0.4], Money::ZERO).is_err());
        assert!(DataOwner::new(0, 5, 0.1, vec![0.5, 0.5], Money::ZERO).is_ok());
    }

    struct Fixed {
        id: MuId,
        prices: Vec<Money>,
        queried: usize,
    }

    impl Bidder for Fixed {
        fn mu_id(&self) -> MuId {
            self.id
        }
        fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money {
            self.queried += 1;
            self.prices[request.slot].min(ledger.remaining_session())
        }
    }

    fn owners(reserves: &[f64]) -> Vec<DataOwner> {
        reserves
            .iter()
            .enumerate()
            .map(|(i, &r)| DataOwner::new(i, 10 + i, 0.0, vec![1.0], m(r)).unwrap())
            .collect()
    }

    fn open_ledgers(n: usize, budget: f64) -> BTreeMap<MuId, MuLedger> {
        (0..n)
            .map(|id| {
                let mut l = MuLedger::new(id, m(budget));
                l.begin_session(m(budget)).unwrap();
                (id, l)
            })
            .collect()
    }

    #[test]
    fn loop_all_abstain_fails_everything() {
        let dos = owners(&[0.5, 0.5, 0.5]);
        let refs: Vec<&DataOwner> = dos.iter().collect();
        let mut a = Fixed { id: 0, prices: vec![Money::ZERO; 3], queried: 0 };
        let mut ledgers = open_ledgers(1, 10.0);
        let out = session_auction_loop(0, &refs, |_| 0.5, &mut [&mut a], &mut ledgers).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|s| s.outcome.failed));
        assert_eq!(a.queried, 3);
    }

    #[test]
    fn loop_single_rich_bidder_pays_reserves() {
        let reserves = [0.2, 0.7, 0.4];
        let dos = owners(&reserves);
        let refs: Vec<&DataOwner> = dos.iter().collect();
        let mut a = Fixed { id: 0, prices: vec![m(1.0); 3], queried: 0 };
        let mut ledgers = open_ledgers(1, 10.0);
        let out = session_auction_loop(0, &refs, |_| 0.5, &mut [&mut a], &mut ledgers).unwrap();
        for (s, r) in out.iter().zip(reserves) {
            assert_eq!(s.outcome.winner, Some(0));
            assert_eq!(s.outcome.market_price, Some(m(r)));
        }
        assert_eq!(ledgers[&0].total_spent, m(1.3));
    }

    #[test]
    fn loop_matches_independent_auctions() {
        let dos = owners(&[0.3, 0.3, 0.3, 0.3]);
        let refs: Vec<&DataOwner> = dos.iter().collect();
        let pa = [1.0, 0.2, 0.6, 0.5];
        let pb = [0.8, 0.9, 0.6, 0.1];
        let mut a = Fixed { id: 0, prices: pa.iter().map(|&p| m(p)).collect(), queried: 0 };
        let mut b = Fixed { id: 1, prices: pb.iter().map(|&p| m(p)).collect(), queried: 0 };
        let mut ledgers = open_ledgers(2, 100.0);
        let out =
            session_auction_loop(0, &refs, |_| 0.5, &mut [&mut a, &mut b], &mut ledgers).unwrap();
        for (i, s) in out.iter().enumerate() {
            let oracle = run_auction(bids(&[(0, pa[i]), (1, pb[i])]), m(0.3));
            assert_eq!(s.outcome, oracle);
        }
        assert_eq!((a.queried, b.queried), (4, 4));
    }

    #[test]
    fn loop_forces_exhausted_bidders_to_abstain() {
        let dos = owners(&[1.0, 1.0, 1.0]);
        let refs: Vec<&DataOwner> = dos.iter().collect();
        let mut a = Fixed { id: 0, prices: vec![m(1.0); 3], queried: 0 };
        let mut ledgers = open_ledgers(1, 1.0);
        let out = session_auction_loop(0, &refs, |_| 0.5, &mut [&mut a], &mut ledgers).unwrap();
        assert_eq!(out[0].outcome.winner, Some(0));
        assert!(out[1].outcome.failed && out[2].outcome.failed);
        assert_eq!(out[1].outcome.bids[0].price, Money::ZERO);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn auction_invariants(
            prices in proptest::collection::vec(0u64..2_000, 0..8),
            reserve in 0u64..2_000,
        ) {
            let bids: Vec<Bid> = prices
                .iter()
                .enumerate()
                .map(|(i, &p)| Bid { mu_id: i, price: Money::from_micros(p) })
                .collect();
            let reserve = Money::from_micros(reserve);
            let max_q = bids.iter().filter(|b| !b.price.is_zero() && b.price >= reserve).map(|b| b.price).max();
            let o = run_auction(bids.clone(), reserve);
            prop_assert_eq!(o.failed, max_q.is_none());
            prop_assert_eq!(o.failed, o.winner.is_none());
            if let Some(w) = o.winner {
                let wb = bids[w].price;
                prop_assert_eq!(Some(wb), max_q);
                let p = o.market_price.unwrap();
                prop_assert!(p >= reserve && p <= wb);
            }
        }
    }
}
