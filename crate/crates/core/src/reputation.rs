//! Shapley contributions of data owners and Beta reputation records.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::DoId;
use crate::{Error, Result};

/// Mean of `Beta(pc + 1, nc + 1)`.
pub fn reputation_value(pc: u64, nc: u64) -> f64 {
    (pc as f64 + 1.0) / ((pc + nc) as f64 + 2.0)
}

/// Positive/negative contribution counters of one data owner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationRecord {
    pub pc: u64,
    pub nc: u64,
}

impl ReputationRecord {
    pub fn value(&self) -> f64 {
        reputation_value(self.pc, self.nc)
    }
}

/// A zero contribution counts as positive.
pub fn update_reputation(record: ReputationRecord, phi: f64) -> ReputationRecord {
    if phi >= 0.0 {
        ReputationRecord {
            pc: record.pc + 1,
            ..record
        }
    } else {
        ReputationRecord {
            nc: record.nc + 1,
            ..record
        }
    }
}

/// Reputation records for every data owner, indexed by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReputationLedger {
    records: Vec<ReputationRecord>,
}

impl ReputationLedger {
    pub fn new(num_owners: usize) -> Self {
        Self {
            records: vec![ReputationRecord::default(); num_owners],
        }
    }

    pub fn record(&self, id: DoId) -> ReputationRecord {
        self.records[id]
    }

    pub fn value(&self, id: DoId) -> f64 {
        self.records[id].value()
    }

    pub fn records(&self) -> &[ReputationRecord] {
        &self.records
    }

    pub fn apply(&mut self, contributions: &ContributionVector) {
        for &(id, phi) in &contributions.phi {
            self.records[id] = update_reputation(self.records[id], phi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapleyMode {
    Exact,
    MonteCarlo { samples: usize },
    AllPermutations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionVector {
    /// `(DO id, contribution)` in player order.
    pub phi: Vec<(DoId, f64)>,
    pub mode: ShapleyMode,
}

impl ContributionVector {
    pub fn get(&self, id: DoId) -> Option<f64> {
        self.phi.iter().find(|(d, _)| *d == id).map(|(_, p)| *p)
    }

    pub fn values(&self) -> Vec<f64> {
        self.phi.iter().map(|(_, p)| *p).collect()
    }
}

/// A cooperative game over recruited data owners.
///
/// `perf` receives coalition members as ascending player indices (positions
/// in `players`, not DO ids). Every distinct coalition is evaluated at most
/// once per game; results are cached.
pub struct CoalitionGame<F> {
    players: Vec<DoId>,
    perf: F,
    alpha: Option<f64>,
    cache: HashMap<Vec<u64>, f64>,
    evaluations: usize,
}

impl<F: FnMut(&[usize]) -> f64> CoalitionGame<F> {
    pub fn new(players: Vec<DoId>, perf: F) -> Self {
        Self {
            players,
            perf,
            alpha: None,
            cache: HashMap::new(),
            evaluations: 0,
        }
    }

    /// Scaling constant; defaults to `1 / |N|`, the standard Shapley value.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn players(&self) -> &[DoId] {
        &self.players
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| 1.0 / self.players.len().max(1) as f64)
    }

    /// Distinct coalitions evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn value(&mut self, members: &[usize]) -> f64 {
        let mut key = vec![0u64; self.players.len().div_ceil(64)];
        for &m in members {
            key[m / 64] |= 1 << (m % 64);
        }
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let v = (self.perf)(members);
        self.evaluations += 1;
        self.cache.insert(key, v);
        v
    }

    fn value_of_mask(&mut self, mask: u64) -> f64 {
        let members: Vec<usize> = (0..self.players.len())
            .filter(|&i| mask & (1 << i) != 0)
            .collect();
        self.value(&members)
    }

    fn contribution_vector(&self, phi: Vec<f64>, mode: ShapleyMode) -> ContributionVector {
        ContributionVector {
            phi: self.players.iter().copied().zip(phi).collect(),
            mode,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley value by enumerating every coalition.
pub fn shapley_exact<F: FnMut(&[usize]) -> f64>(
    game: &mut CoalitionGame<F>,
    cap: usize,
) -> Result<ContributionVector> {
    let n = game.num_players();
    if n > cap || n > 30 {
        return Err(Error::ShapleyCap {
            players: n,
            cap: cap.min(30),
        });
    }
    let alpha = game.alpha();
    let full = 1u64 << n;
    let values: Vec<f64> = (0..full).map(|mask| game.value_of_mask(mask)).collect();
    let weights: Vec<f64> = (0..n).map(|k| 1.0 / binomial(n - 1, k)).collect();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for mask in (0..full).filter(|m| m & bit == 0) {
            let size = mask.count_ones() as usize;
            acc += (values[(mask | bit) as usize] - values[mask as usize]) * weights[size];
        }
        *p = alpha * acc;
    }
    Ok(game.contribution_vector(phi, ShapleyMode::Exact))
}

fn accumulate_permutation<F: FnMut(&[usize]) -> f64>(
    game: &mut CoalitionGame<F>,
    order: &[usize],
    sums: &mut [f64],
) {
    let mut prefix: Vec<usize> = Vec::with_capacity(order.len());
    let mut prev = game.value(&prefix);
    for &p in order {
        let pos = prefix.partition_point(|&x| x < p);
        prefix.insert(pos, p);
        let cur = game.value(&prefix);
        sums[p] += cur - prev;
        prev = cur;
    }
}

/// Permutation-sampling estimate of the Shapley value.
///
/// Marginals are averaged over `permutations` uniformly random orderings and
/// rescaled by `alpha * |N|`, so the default `alpha = 1 / |N|` estimates the
/// same quantity as [`shapley_exact`].
pub fn shapley_monte_carlo<F: FnMut(&[usize]) -> f64, R: Rng + ?Sized>(
    game: &mut CoalitionGame<F>,
    permutations: usize,
    rng: &mut R,
) -> ContributionVector {
    let n = game.num_players();
    let permutations = permutations.max(1);
    let mut sums = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..permutations {
        order.shuffle(rng);
        accumulate_permutation(game, &order, &mut sums);
    }
    let scale = game.alpha() * n as f64 / permutations as f64;
    let phi = sums.iter().map(|s| s * scale).collect();
    game.contribution_vector(phi, ShapleyMode::MonteCarlo { samples: permutations })
}

/// The permutation estimator run over all `n!` orderings.
pub fn shapley_all_permutations<F: FnMut(&[usize]) -> f64>(
    game: &mut CoalitionGame<F>,
) -> ContributionVector {
    let n = game.num_players();
    let mut sums = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    accumulate_permutation(game, &order, &mut sums);
    count += 1;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            accumulate_permutation(game, &order, &mut sums);
            count += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    let scale = game.alpha() * n as f64 / count as f64;
    let phi = sums.iter().map(|s| s * scale).collect();
    game.contribution_vector(phi, ShapleyMode::AllPermutations)
}

/// How per-round contributions are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapleyConfig {
    /// Largest coalition size solved by exhaustive enumeration.
    pub exact_cap: usize,
    /// Sampled permutations above the cap.
    pub permutations: usize,
    pub alpha: Option<f64>,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            exact_cap: 8,
            permutations: 50,
            alpha: None,
        }
    }
}

/// Exact below the configured cap, Monte Carlo above it.
pub fn shapley<F: FnMut(&[usize]) -> f64, R: Rng + ?Sized>(
    game: &mut CoalitionGame<F>,
    cfg: &ShapleyConfig,
    rng: &mut R,
) -> ContributionVector {
    if let Some(a) = cfg.alpha {
        game.alpha = Some(a);
    }
    if game.num_players() <= cfg.exact_cap.min(30) {
        shapley_exact(game, cfg.exact_cap).expect("player count checked against cap")
    } else {
        shapley_monte_carlo(game, cfg.permutations, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn table_game(table: Vec<f64>) -> impl FnMut(&[usize]) -> f64 {
        move |members: &[usize]| {
            let mask: usize = members.iter().map(|m| 1usize << m).sum();
            table[mask]
        }
    }

    #[test]
    fn two_player_example() {
        // f(∅)=0, f({1})=0.2, f({2})=0.6, f({1,2})=0.8
        let mut g = CoalitionGame::new(vec![1, 2], table_game(vec![0.0, 0.2, 0.6, 0.8]));
        let cv = shapley_exact(&mut g, 8).unwrap();
        assert!((cv.get(1).unwrap() - 0.2).abs() < 1e-15);
        assert!((cv.get(2).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(g.evaluations(), 4);
    }

    #[test]
    fn dummy_player_gets_zero() {
        // Player 2 never changes the value.
        let mut g = CoalitionGame::new(vec![0, 1, 2], |m: &[usize]| {
            m.iter().filter(|&&p| p != 2).map(|&p| (p + 1) as f64 * 0.1).sum::<f64>()
        });
        let cv = shapley_exact(&mut g, 8).unwrap();
        assert_eq!(cv.get(2), Some(0.0));
        let mut rng = seed::rng(3, &[]);
        let mc = shapley_monte_carlo(&mut g, 20, &mut rng);
        assert_eq!(mc.get(2), Some(0.0));
    }

    #[test]
    fn symmetric_players_share_equally() {
        let mut g = CoalitionGame::new(vec![5, 6, 7], |m: &[usize]| {
            let sym = m.iter().filter(|&&p| p < 2).count() as f64;
            let third = if m.contains(&2) { 0.3 } else { 0.0 };
            (sym * 0.25).min(0.4) + third
        });
        let cv = shapley_exact(&mut g, 8).unwrap();
        assert_eq!(cv.get(5), cv.get(6));
    }

    #[test]
    fn cap_is_enforced() {
        let mut g = CoalitionGame::new((0..9).collect(), |m: &[usize]| m.len() as f64);
        assert!(matches!(
            shapley_exact(&mut g, 8),
            Err(Error::ShapleyCap { players: 9, cap: 8 })
        ));
    }

    #[test]
    fn all_permutations_match_exact() {
        let mut rng = seed::rng(11, &[]);
        let table: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
        let mut g = CoalitionGame::new((0..5).collect(), table_game(table.clone()));
        let exact = shapley_exact(&mut g, 8).unwrap();
        let mut g2 = CoalitionGame::new((0..5).collect(), table_game(table));
        let perms = shapley_all_permutations(&mut g2);
        for (a, b) in exact.values().iter().zip(perms.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_scales_linearly() {
        let mut g = CoalitionGame::new(vec![1, 2], table_game(vec![0.0, 0.2, 0.6, 0.8])).with_alpha(1.0);
        let cv = shapley_exact(&mut g, 8).unwrap();
        assert!((cv.get(1).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn reputation_closed_form() {
        assert_eq!(reputation_value(0, 0), 0.5);
        assert_eq!(reputation_value(4, 0), 5.0 / 6.0);
        assert_eq!(reputation_value(1, 1), 0.5);
    }

    #[test]
    fn update_examples() {
        let r = update_reputation(ReputationRecord::default(), 0.3);
        assert_eq!(r, ReputationRecord { pc: 1, nc: 0 });
        assert_eq!(r.value(), 2.0 / 3.0);
        assert_eq!(update_reputation(ReputationRecord::default(), 0.0).pc, 1);
        let r = update_reputation(ReputationRecord { pc: 3, nc: 1 }, -0.1);
        assert_eq!(r, ReputationRecord { pc: 3, nc: 2 });
        assert_eq!(r.value(), 4.0 / 7.0);
    }

    #[test]
    fn ledger_applies_signs() {
        let mut ledger = ReputationLedger::new(3);
        ledger.apply(&ContributionVector {
            phi: vec![(0, 0.1), (2, -0.2)],
            mode: ShapleyMode::Exact,
        });
        assert_eq!(ledger.record(0), ReputationRecord { pc: 1, nc: 0 });
        assert_eq!(ledger.record(1), ReputationRecord::default());
        assert_eq!(ledger.record(2), ReputationRecord { pc: 0, nc: 1 });
    }

    proptest::proptest! {
        #[test]
        fn reputation_is_monotone_and_interior(pc in 0u64..10_000, nc in 0u64..10_000) {
            let v = reputation_value(pc, nc);
            proptest::prop_assert!(v > 0.0 && v < 1.0);
            proptest::prop_assert!(reputation_value(pc + 1, nc) > v);
            proptest::prop_assert!(reputation_value(pc, nc + 1) < v);
        }
    }
}
