//! Bidding strategies.
//!
//! The hierarchical strategy pairs an inter-session pacing agent, which picks
//! each session's budget as a fraction of what is left, with an intra-session
//! bidding agent, which picks a multiple of the pacing price
//! `remaining session budget / remaining DOs` for every request. Both are DQNs.
//! Four fixed baselines (Const, Rand, Bmub, Lin) and a flat ablation (the
//! bidding agent under uniform pacing) share the same [`Strategy`] interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::{AuctionOutcome, BidRequest, Bidder, MuId, MuLedger};
use crate::money::Money;
use crate::rl::{DqnAgent, DqnConfig, Transition};
use crate::seed::{self, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    Const,
    Rand,
    Bmub,
    Lin,
    #[serde(rename = "MultiBOS")]
    MultiBos,
    #[serde(rename = "FlatDQN")]
    FlatDqn,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Const,
        StrategyKind::Rand,
        StrategyKind::Bmub,
        StrategyKind::Lin,
        StrategyKind::MultiBos,
        StrategyKind::FlatDqn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Const => "Const",
            StrategyKind::Rand => "Rand",
            StrategyKind::Bmub => "Bmub",
            StrategyKind::Lin => "Lin",
            StrategyKind::MultiBos => "MultiBOS",
            StrategyKind::FlatDqn => "FlatDQN",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            StrategyKind::Const | StrategyKind::Rand | StrategyKind::Bmub | StrategyKind::Lin
        )
    }

    pub fn is_learning(self) -> bool {
        !self.is_baseline()
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown strategy kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub kind: StrategyKind,
    pub const_bid: Money,
    pub rand_range: (Money, Money),
    /// Bmub bids uniformly in `[0, bmub_upper · v]`.
    pub bmub_upper: Money,
    /// Lin bids `lambda_lin · v`.
    pub lambda_lin: f64,
}

impl StrategyParams {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            const_bid: Money::from_micros(600_000),
            rand_range: (Money::from_micros(100_000), Money::from_micros(1_000_000)),
            bmub_upper: Money::from_micros(1_600_000),
            lambda_lin: 1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rand_range.0 > self.rand_range.1 {
            return Err(Error::Config("rand range must satisfy lo <= hi".into()));
        }
        if !(self.lambda_lin > 0.0) || !self.lambda_lin.is_finite() {
            return Err(Error::Config("lambda_lin must be positive".into()));
        }
        Ok(())
    }
}

/// Bid of a fixed baseline, clamped to the remaining session budget.
pub fn baseline_bid<R: Rng + ?Sized>(
    params: &StrategyParams,
    request: &BidRequest,
    remaining_session: Money,
    rng: &mut R,
) -> Result<Money> {
    let v = request.reputation_at_auction;
    let bid = match params.kind {
        StrategyKind::Const => params.const_bid,
        StrategyKind::Rand => {
            let (lo, hi) = params.rand_range;
            Money::from_micros(rng.random_range(lo.micros()..=hi.micros()))
        }
        StrategyKind::Bmub => {
            let upper = Money::from_f64(params.bmub_upper.to_f64() * v);
            Money::from_micros(rng.random_range(0..=upper.micros()))
        }
        StrategyKind::Lin => Money::from_f64(params.lambda_lin * v),
        other => return Err(Error::NotABaseline(other.to_string())),
    };
    Ok(bid.min(remaining_session))
}

/// What one MU did in one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: usize,
    pub session_len: usize,
    pub allocated_budget: Money,
    pub spend: Money,
    pub wins: usize,
    /// Mean of submitted (non-zero) bids.
    pub mean_bid: f64,
    pub mean_payment: f64,
    pub mean_reputation: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl SessionSummary {
    pub fn from_activity(
        session: usize,
        session_len: usize,
        allocated_budget: Money,
        bids: &[Money],
        payments: &[Money],
        won_reputations: &[f64],
    ) -> Self {
        Self {
            session,
            session_len,
            allocated_budget,
            spend: payments.iter().copied().sum(),
            wins: payments.len(),
            mean_bid: mean(bids.iter().filter(|b| !b.is_zero()).map(|b| b.to_f64())),
            mean_payment: mean(payments.iter().map(|p| p.to_f64())),
            mean_reputation: mean(won_reputations.iter().copied()),
        }
    }
}

/// Scales used to normalize the pacing agent's state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterScales {
    pub total_budget: Money,
    pub num_sessions: usize,
    /// Reference session length; `C_s` enters the state as `C_s / session_scale`.
    pub session_scale: usize,
}

impl InterScales {
    fn price_scale(&self) -> f64 {
        (self.total_budget.to_f64() / self.num_sessions.max(1) as f64).max(1e-12)
    }
}

pub const SUMMARY_FEATURES: usize = 6;

pub fn inter_state_len(history_len: usize) -> usize {
    SUMMARY_FEATURES * history_len + 3
}

/// Pacing state: the last `history_len` session summaries (oldest first,
/// zero-padded in front) followed by session length, remaining budget and
/// session index, each normalized.
pub fn encode_inter_state(
    history: &[SessionSummary],
    session_len: usize,
    remaining_total: Money,
    session: usize,
    history_len: usize,
    scales: &InterScales,
) -> Vec<f64> {
    let b0 = scales.total_budget.to_f64().max(1e-12);
    let price = scales.price_scale();
    let mut out = Vec::with_capacity(inter_state_len(history_len));
    let recent = &history[history.len().saturating_sub(history_len)..];
    out.resize(SUMMARY_FEATURES * (history_len - recent.len()), 0.0);
    for h in recent {
        out.extend([
            h.allocated_budget.to_f64() / b0,
            h.spend.to_f64() / b0,
            h.wins as f64 / h.session_len.max(1) as f64,
            h.mean_bid / price,
            h.mean_payment / price,
            h.mean_reputation,
        ]);
    }
    out.push(session_len as f64 / scales.session_scale.max(1) as f64);
    out.push(remaining_total.to_f64() / b0);
    out.push(session as f64 / scales.num_sessions.max(1) as f64);
    out
}

pub const INTRA_STATE_LEN: usize = 3;

/// Length of the bidding agent's input: the encoded state plus the remaining
/// session budget in units of the even per-session share `B / S`.
pub const INTRA_INPUT_LEN: usize = INTRA_STATE_LEN + 1;

/// Bidding state: share of DOs left, share of session budget left, and the
/// reputation of the DO on offer.
pub fn encode_intra_state(
    remaining_dos: usize,
    remaining_session: Money,
    allocated: Money,
    session_len: usize,
    reputation: f64,
) -> Vec<f64> {
    let dos = remaining_dos as f64 / session_len.max(1) as f64;
    let budget = if allocated.is_zero() {
        0.0
    } else {
        remaining_session.micros() as f64 / allocated.micros() as f64
    };
    vec![dos.clamp(0.0, 1.0), budget.clamp(0.0, 1.0), reputation]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetActionGrid {
    fractions: Vec<f64>,
}

impl BudgetActionGrid {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        let ok = !fractions.is_empty()
            && fractions.iter().all(|&f| f > 0.0 && f <= 1.0)
            && fractions.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config(format!(
                "budget grid must be strictly increasing in (0, 1]: {fractions:?}"
            )));
        }
        Ok(Self { fractions })
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }
}

impl Default for BudgetActionGrid {
    fn default() -> Self {
        Self::new(vec![0.02, 0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 1.0]).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidActionGrid {
    multipliers: Vec<f64>,
}

impl BidActionGrid {
    pub fn new(multipliers: Vec<f64>) -> Result<Self> {
        let ok = !multipliers.is_empty()
            && multipliers.iter().all(|&m| m >= 0.0 && m.is_finite())
            && multipliers.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config(format!(
                "bid grid must be non-negative and strictly increasing: {multipliers:?}"
            )));
        }
        Ok(Self { multipliers })
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

impl Default for BidActionGrid {
    fn default() -> Self {
        Self::new(vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]).unwrap()
    }
}

pub fn decode_budget_action(index: usize, grid: &BudgetActionGrid, remaining_total: Money) -> Money {
    remaining_total.scale(grid.fractions[index])
}

pub fn decode_bid_action(
    index: usize,
    grid: &BidActionGrid,
    remaining_session: Money,
    remaining_dos: usize,
) -> Money {
    let base = remaining_session.micros() / remaining_dos.max(1) as u64;
    let bid = (grid.multipliers[index] * base as f64).floor();
    Money::from_micros(bid.min(u64::MAX as f64) as u64).min(remaining_session)
}

/// Mean reputation of the DOs won in a session, 0 when nothing was won.
pub fn inter_reward(won_reputations: &[f64]) -> f64 {
    mean(won_reputations.iter().copied())
}

/// How the pacing agent's per-session reward aggregates won reputations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InterRewardKind {
    /// Mean reputation of the session's wins ([`inter_reward`]).
    #[default]
    Mean,
    /// Sum of the session's won reputations.
    Sum,
}

impl InterRewardKind {
    pub fn reward(self, won_reputations: &[f64]) -> f64 {
        match self {
            InterRewardKind::Mean => inter_reward(won_reputations),
            InterRewardKind::Sum => won_reputations.iter().sum(),
        }
    }
}

impl fmt::Display for InterRewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterRewardKind::Mean => "mean",
            InterRewardKind::Sum => "sum",
        })
    }
}

impl FromStr for InterRewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(InterRewardKind::Mean),
            "sum" => Ok(InterRewardKind::Sum),
            other => Err(Error::Config(format!("inter reward must be mean or sum, got {other:?}"))),
        }
    }
}

pub fn intra_reward(won: bool, reputation: f64) -> f64 {
    if won {
        reputation
    } else {
        0.0
    }
}

/// Whether learning strategies explore and update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Greedy, frozen policy.
    Eval,
}

/// What a strategy sees when it sets a session budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionView {
    pub session: usize,
    pub num_sessions: usize,
    pub session_len: usize,
    pub remaining_total: Money,
    pub total_budget: Money,
}

impl SessionView {
    /// Even split of what is left over the remaining sessions.
    pub fn uniform_budget(&self) -> Money {
        let left = self.num_sessions.saturating_sub(self.session).max(1) as u64;
        Money::from_micros(self.remaining_total.micros() / left)
    }
}

/// A bidder that also paces its budget across sessions.
pub trait Strategy: Bidder {
    fn kind(&self) -> StrategyKind;

    /// Budget for the coming session; at most `view.remaining_total`.
    fn plan_session(&mut self, view: &SessionView) -> Result<Money>;

    /// Session outcome, with `inter_reward` computed from post-training reputations.
    fn finish_session(&mut self, _summary: &SessionSummary, _inter_reward: f64) -> Result<()> {
        Ok(())
    }

    fn finish_run(&mut self) -> Result<()> {
        Ok(())
    }

    fn set_mode(&mut self, _mode: Mode) {}

    /// Re-seeds per-episode randomness and clears per-episode state.
    /// Learned parameters and replay memory persist.
    fn reset_episode(&mut self, seed: u64);

    /// Named binary blobs describing learned state.
    fn checkpoint(&self) -> Vec<(&'static str, Vec<u8>)> {
        Vec::new()
    }

    fn restore(&mut self, _name: &str, _bytes: &[u8]) -> Result<()> {
        Ok(())
    }

    /// Exploration draws taken by the learning components (0 for baselines).
    fn exploration_steps(&self) -> u64 {
        0
    }
}

pub struct BaselineBidder {
    mu_id: MuId,
    params: StrategyParams,
    rng: SimRng,
}

impl BaselineBidder {
    pub fn new(mu_id: MuId, params: StrategyParams, seed: u64) -> Result<Self> {
        if !params.kind.is_baseline() {
            return Err(Error::NotABaseline(params.kind.to_string()));
        }
        params.validate()?;
        Ok(Self {
            mu_id,
            params,
            rng: seed::rng(seed, &[]),
        })
    }
}

impl Bidder for BaselineBidder {
    fn mu_id(&self) -> MuId {
        self.mu_id
    }

    fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money {
        baseline_bid(&self.params, request, ledger.remaining_session(), &mut self.rng)
            .expect("kind checked at construction")
    }
}

impl Strategy for BaselineBidder {
    fn kind(&self) -> StrategyKind {
        self.params.kind
    }

    fn plan_session(&mut self, view: &SessionView) -> Result<Money> {
        Ok(view.uniform_budget())
    }

    fn reset_episode(&mut self, seed: u64) {
        self.rng = seed::rng(seed, &[]);
    }
}

struct PendingStep {
    state: Vec<f64>,
    action: usize,
    reward: f64,
}

/// The per-request bidding agent.
pub struct IntraBidder {
    pub agent: DqnAgent,
    grid: BidActionGrid,
    budget_scale: f64,
    allocated: Money,
    pending: Option<PendingStep>,
    mode: Mode,
    rng: SimRng,
    last_loss: Option<f64>,
}

impl IntraBidder {
    pub fn new(grid: BidActionGrid, cfg: &DqnConfig, scales: &InterScales, net_seed: u64) -> Result<Self> {
        Ok(Self {
            agent: DqnAgent::new(INTRA_INPUT_LEN, grid.len(), cfg, net_seed)?,
            grid,
            budget_scale: scales.price_scale(),
            allocated: Money::ZERO,
            pending: None,
            mode: Mode::Train,
            rng: seed::rng(net_seed, &[1]),
            last_loss: None,
        })
    }

    pub fn begin_session(&mut self, allocated: Money) {
        self.allocated = allocated;
        self.pending = None;
    }

    fn input(&self, remaining_dos: usize, remaining: Money, session_len: usize, reputation: f64) -> Vec<f64> {
        let mut x = encode_intra_state(remaining_dos, remaining, self.allocated, session_len, reputation);
        x.push(remaining.to_f64() / self.budget_scale);
        x
    }

    fn learn(&mut self, t: Transition) {
        if self.mode != Mode::Train {
            return;
        }
        self.agent.store(t).expect("fixed state encoding");
        self.last_loss = self
            .agent
            .train_step(&mut self.rng)
            .expect("fixed network dimensions")
            .or(self.last_loss);
    }

    pub fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money {
        let remaining = ledger.remaining_session();
        if remaining.is_zero() {
            return Money::ZERO;
        }
        let state = self.input(
            request.remaining_dos(),
            remaining,
            request.session_len,
            request.reputation_at_auction,
        );
        if let Some(p) = self.pending.take() {
            self.learn(Transition {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state: state.clone(),
                terminal: false,
            });
        }
        let action = match self.mode {
            Mode::Train => self.agent.act(&state, &mut self.rng),
            Mode::Eval => self.agent.select_action(&state, 0.0, &mut self.rng),
        }
        .expect("fixed state encoding");
        let price = decode_bid_action(action, &self.grid, remaining, request.remaining_dos());
        self.pending = Some(PendingStep {
            state,
            action,
            reward: 0.0,
        });
        price
    }

    /// Records the reward; the step is closed as terminal when the session
    /// ends or the session budget runs out.
    pub fn observe(&mut self, request: &BidRequest, outcome: &AuctionOutcome, ledger: &MuLedger) {
        let Some(p) = self.pending.as_mut() else {
            return;
        };
        p.reward = intra_reward(outcome.won_by(ledger.mu_id), request.reputation_at_auction);
        let last_slot = request.slot + 1 >= request.session_len;
        let remaining = ledger.remaining_session();
        if last_slot || remaining.is_zero() {
            let p = self.pending.take().unwrap();
            let next_state = self.input(
                request.remaining_dos() - 1,
                remaining,
                request.session_len,
                request.reputation_at_auction,
            );
            self.learn(Transition {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state,
                terminal: true,
            });
        }
    }

    pub fn reset_episode(&mut self, seed: u64) {
        self.rng = seed::rng(seed, &[1]);
        self.pending = None;
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

/// Hierarchical strategy: DQN pacing over DQN bidding.
pub struct MultiBosBidder {
    mu_id: MuId,
    pub inter: DqnAgent,
    pub intra: IntraBidder,
    budget_grid: BudgetActionGrid,
    history_len: usize,
    scales: InterScales,
    history: Vec<SessionSummary>,
    pending: Option<PendingStep>,
    mode: Mode,
    rng: SimRng,
}

impl MultiBosBidder {
    pub fn new(
        mu_id: MuId,
        cfg: &AgentsConfig,
        scales: InterScales,
        net_seed: u64,
    ) -> Result<Self> {
        if cfg.history_len == 0 {
            return Err(Error::Config("agents.history must be at least 1".into()));
        }
        Ok(Self {
            mu_id,
            inter: DqnAgent::new(
                inter_state_len(cfg.history_len),
                cfg.budget_grid.len(),
                &cfg.inter_dqn,
                seed::derive(net_seed, &[0]),
            )?,
            intra: IntraBidder::new(cfg.bid_grid.clone(), &cfg.intra_dqn, &scales, seed::derive(net_seed, &[1]))?,
            budget_grid: cfg.budget_grid.clone(),
            history_len: cfg.history_len,
            scales,
            history: Vec::new(),
            pending: None,
            mode: Mode::Train,
            rng: seed::rng(net_seed, &[2]),
        })
    }

    fn learn(&mut self, t: Transition) -> Result<()> {
        if self.mode != Mode::Train {
            return Ok(());
        }
        self.inter.store(t)?;
        self.inter.train_step(&mut self.rng)?;
        Ok(())
    }
}

impl Bidder for MultiBosBidder {
    fn mu_id(&self) -> MuId {
        self.mu_id
    }

    fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money {
        self.intra.bid(request, ledger)
    }

    fn observe(&mut self, request: &BidRequest, outcome: &AuctionOutcome, ledger: &MuLedger) {
        self.intra.observe(request, outcome, ledger)
    }
}

impl Strategy for MultiBosBidder {
    fn kind(&self) -> StrategyKind {
        StrategyKind::MultiBos
    }

    fn plan_session(&mut self, view: &SessionView) -> Result<Money> {
        let state = encode_inter_state(
            &self.history,
            view.session_len,
            view.remaining_total,
            view.session,
            self.history_len,
            &self.scales,
        );
        if let Some(p) = self.pending.take() {
            self.learn(Transition {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state: state.clone(),
                terminal: false,
            })?;
        }
        let action = match self.mode {
            Mode::Train => self.inter.act(&state, &mut self.rng)?,
            Mode::Eval => self.inter.select_action(&state, 0.0, &mut self.rng)?,
        };
        let budget = decode_budget_action(action, &self.budget_grid, view.remaining_total);
        self.pending = Some(PendingStep {
            state,
            action,
            reward: 0.0,
        });
        self.intra.begin_session(budget);
        Ok(budget)
    }

    fn finish_session(&mut self, summary: &SessionSummary, inter_reward: f64) -> Result<()> {
        self.history.push(summary.clone());
        if let Some(p) = self.pending.as_mut() {
            p.reward = inter_reward;
        }
        Ok(())
    }

    fn finish_run(&mut self) -> Result<()> {
        if let Some(p) = self.pending.take() {
            let next_state = vec![0.0; p.state.len()];
            self.learn(Transition {
                state: p.state,
                action: p.action,
                reward: p.reward,
                next_state,
                terminal: true,
            })?;
        }
        Ok(())
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.intra.mode = mode;
    }

    fn reset_episode(&mut self, seed: u64) {
        self.rng = seed::rng(seed, &[2]);
        self.history.clear();
        self.pending = None;
        self.intra.reset_episode(seed);
    }

    fn checkpoint(&self) -> Vec<(&'static str, Vec<u8>)> {
        vec![
            ("inter", self.inter.to_checkpoint()),
            ("intra", self.intra.agent.to_checkpoint()),
        ]
    }

    fn restore(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        match name {
            "inter" => self.inter.load_checkpoint(bytes),
            "intra" => self.intra.agent.load_checkpoint(bytes),
            other => Err(Error::Format(format!("unknown checkpoint part {other:?}"))),
        }
    }

    fn exploration_steps(&self) -> u64 {
        self.inter.env_steps + self.intra.agent.env_steps
    }
}

/// The bidding agent alone, paced uniformly.
pub struct FlatDqnBidder {
    mu_id: MuId,
    pub intra: IntraBidder,
}

impl FlatDqnBidder {
    pub fn new(mu_id: MuId, cfg: &AgentsConfig, scales: InterScales, net_seed: u64) -> Result<Self> {
        Ok(Self {
            mu_id,
            intra: IntraBidder::new(cfg.bid_grid.clone(), &cfg.intra_dqn, &scales, seed::derive(net_seed, &[1]))?,
        })
    }
}

impl Bidder for FlatDqnBidder {
    fn mu_id(&self) -> MuId {
        self.mu_id
    }

    fn bid(&mut self, request: &BidRequest, ledger: &MuLedger) -> Money {
        self.intra.bid(request, ledger)
    }

    fn observe(&mut self, request: &BidRequest, outcome: &AuctionOutcome, ledger: &MuLedger) {
        self.intra.observe(request, outcome, ledger)
    }
}

impl Strategy for FlatDqnBidder {
    fn kind(&self) -> StrategyKind {
        StrategyKind::FlatDqn
    }

    fn plan_session(&mut self, view: &SessionView) -> Result<Money> {
        let budget = view.uniform_budget();
        self.intra.begin_session(budget);
        Ok(budget)
    }

    fn set_mode(&mut self, mode: Mode) {
        self.intra.mode = mode;
    }

    fn reset_episode(&mut self, seed: u64) {
        self.intra.reset_episode(seed);
    }

    fn checkpoint(&self) -> Vec<(&'static str, Vec<u8>)> {
        vec![("intra", self.intra.agent.to_checkpoint())]
    }

    fn restore(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        match name {
            "intra" => self.intra.agent.load_checkpoint(bytes),
            other => Err(Error::Format(format!("unknown checkpoint part {other:?}"))),
        }
    }

    fn exploration_steps(&self) -> u64 {
        self.intra.agent.env_steps
    }
}

/// Settings shared by the learning strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsConfig {
    pub budget_grid: BudgetActionGrid,
    pub bid_grid: BidActionGrid,
    /// Past sessions in the pacing state.
    pub history_len: usize,
    pub inter_reward: InterRewardKind,
    pub inter_dqn: DqnConfig,
    pub intra_dqn: DqnConfig,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        let mut inter_dqn = DqnConfig::default();
        inter_dqn.epsilon.anneal_steps = 400;
        Self {
            budget_grid: BudgetActionGrid::default(),
            bid_grid: BidActionGrid::default(),
            history_len: 3,
            inter_reward: InterRewardKind::Mean,
            inter_dqn,
            intra_dqn: DqnConfig::default(),
        }
    }
}

pub fn build_strategy(
    mu_id: MuId,
    params: &StrategyParams,
    agents: &AgentsConfig,
    scales: InterScales,
    seed: u64,
) -> Result<Box<dyn Strategy>> {
    Ok(match params.kind {
        StrategyKind::MultiBos => Box::new(MultiBosBidder::new(mu_id, agents, scales, seed)?),
        StrategyKind::FlatDqn => Box::new(FlatDqnBidder::new(mu_id, agents, scales, seed)?),
        _ => Box::new(BaselineBidder::new(mu_id, params.clone(), seed)?),
    })
}
