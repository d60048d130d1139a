//! Desk-scale federated training.
//!
//! Tasks are Gaussian-mixture classification problems and the shared model
//! is multinomial logistic regression. Clients run mini-batch SGD on
//! cross-entropy; the server takes the sample-weighted mean of their
//! parameters. After each round the recruited owners are valued with a
//! Shapley game whose payoff is test accuracy of the sub-coalition's
//! aggregate, measured against the model broadcast at the start of the round.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market::{DataOwner, DoId};
use crate::money::Money;
use crate::reputation::{shapley, CoalitionGame, ContributionVector, ShapleyConfig};
use crate::seed::{self, SimRng};
use crate::{Error, Result};

/// Labelled examples stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    /// Labels before noise was injected.
    pub clean_labels: Vec<usize>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn flipped_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let flipped = self
            .labels
            .iter()
            .zip(&self.clean_labels)
            .filter(|(a, b)| a != b)
            .count();
        flipped as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Standard deviation of class-mean coordinates.
    pub separation: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    pub test_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            feature_dim: 10,
            separation: 1.0,
            spread: 1.0,
            test_size: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_means: Vec<Vec<f64>>,
    pub spread: f64,
    pub test_set: LocalDataset,
}

impl SyntheticTask {
    pub fn generate(cfg: &TaskConfig, rng: &mut SimRng) -> Result<Self> {
        if cfg.num_classes < 2 {
            return Err(Error::Scenario("a task needs at least 2 classes".into()));
        }
        if cfg.feature_dim == 0 {
            return Err(Error::Scenario("feature_dim must be positive".into()));
        }
        let mean_dist = Normal::new(0.0, cfg.separation)
            .map_err(|e| Error::Scenario(format!("separation: {e}")))?;
        Normal::new(0.0, cfg.spread).map_err(|e| Error::Scenario(format!("spread: {e}")))?;
        let class_means = (0..cfg.num_classes)
            .map(|_| (0..cfg.feature_dim).map(|_| mean_dist.sample(rng)).collect())
            .collect();
        let mut task = Self {
            num_classes: cfg.num_classes,
            feature_dim: cfg.feature_dim,
            class_means,
            spread: cfg.spread,
            test_set: LocalDataset {
                feature_dim: cfg.feature_dim,
                features: vec![],
                labels: vec![],
                clean_labels: vec![],
            },
        };
        let uniform = vec![1.0 / cfg.num_classes as f64; cfg.num_classes];
        task.test_set = task.sample_dataset(cfg.test_size, &uniform, 0.0, rng);
        Ok(task)
    }

    /// Draws `n` examples with class counts allocated proportionally to
    /// `profile` (largest remainder), then flips `round(noise * n)` labels
    /// to a uniformly chosen different class.
    pub fn sample_dataset(
        &self,
        n: usize,
        profile: &[f64],
        noise: f64,
        rng: &mut SimRng,
    ) -> LocalDataset {
        let noise_targets: Vec<usize> = (0..self.num_classes).collect();
        self.sample_dataset_with_noise_targets(n, profile, noise, &noise_targets, rng)
    }

    fn sample_dataset_with_noise_targets(
        &self,
        n: usize,
        profile: &[f64],
        noise: f64,
        noise_targets: &[usize],
        rng: &mut SimRng,
    ) -> LocalDataset {
        let mut labels = stratified_labels(n, profile);
        labels.shuffle(rng);
        let within = Normal::new(0.0, self.spread).expect("validated at generation");
        let mut features = Vec::with_capacity(n * self.feature_dim);
        for &y in &labels {
            for mean in &self.class_means[y] {
                features.push(mean + within.sample(rng));
            }
        }
        let clean_labels = labels.clone();
        let flips = ((noise * n as f64).round() as usize).min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(flips) {
            let choices: Vec<usize> = noise_targets
                .iter()
                .copied()
                .filter(|&c| c != labels[i])
                .collect();
            if let Some(&c) = choices.get(rng.random_range(0..choices.len().max(1))) {
                labels[i] = c;
            }
        }
        LocalDataset {
            feature_dim: self.feature_dim,
            features,
            labels,
            clean_labels,
        }
    }

    /// Pools several datasets into one.
    pub fn pool<'a>(&self, parts: impl IntoIterator<Item = &'a LocalDataset>) -> LocalDataset {
        let mut out = LocalDataset {
            feature_dim: self.feature_dim,
            features: vec![],
            labels: vec![],
            clean_labels: vec![],
        };
        for p in parts {
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
            out.clean_labels.extend_from_slice(&p.clean_labels);
        }
        out
    }
}

fn stratified_labels(n: usize, profile: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = profile.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..profile.len()).filter(|&c| profile[c] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[c] += 1;
        short -= 1;
    }
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect()
}

/// Multinomial logistic regression parameters: a `classes × dim` weight
/// block (row-major) followed by `classes` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            num_classes,
            values: vec![0.0; feature_dim * num_classes + num_classes],
        }
    }

    pub fn for_task(task: &SyntheticTask) -> Self {
        Self::zeros(task.feature_dim, task.num_classes)
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.feature_dim;
        let bias = &self.values[d * self.num_classes..];
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.values[c * d..(c + 1) * d];
            *o = bias[c] + crate::neural::dot(w, x);
        }
    }

    /// Index of the largest logit; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.num_classes];
        self.logits_into(x, &mut logits);
        argmax(&logits)
    }

    fn check(&self, feature_dim: usize, num_classes: usize) -> Result<()> {
        let expected = feature_dim * num_classes + num_classes;
        if self.feature_dim != feature_dim
            || self.num_classes != num_classes
            || self.values.len() != expected
        {
            return Err(Error::Dimension {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of `params` over `data`.
pub fn cross_entropy(params: &ModelParams, data: &LocalDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut logits = vec![0.0; params.num_classes];
    let mut total = 0.0;
    for i in 0..data.len() {
        params.logits_into(data.row(i), &mut logits);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[data.labels[i]];
    }
    total / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Communication rounds per session.
    pub rounds_per_session: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 2,
            batch_size: 32,
            learning_rate: 0.1,
            rounds_per_session: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 || !(self.learning_rate >= 0.0) {
            return Err(Error::Config(
                "fl: local_epochs and batch_size must be positive, learning_rate non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch SGD on cross-entropy, starting from `params`.
pub fn local_update(
    params: &ModelParams,
    data: &LocalDataset,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<ModelParams> {
    params.check(data.feature_dim, params.num_classes)?;
    if data.is_empty() {
        log::warn!("local update skipped: empty dataset");
        return Ok(params.clone());
    }
    let mut out = params.clone();
    let d = params.feature_dim;
    let k = params.num_classes;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; out.values.len()];
    let mut probs = vec![0.0; k];
    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = data.row(i);
                out.logits_into(x, &mut probs);
                let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    z += *p;
                }
                for (c, p) in probs.iter_mut().enumerate() {
                    *p /= z;
                    let delta = *p - if c == data.labels[i] { 1.0 } else { 0.0 };
                    let g = &mut grad[c * d..(c + 1) * d];
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += delta * xj;
                    }
                    grad[d * k + c] += delta;
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (w, g) in out.values.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
    }
    Ok(out)
}

/// Sample-weighted mean of client parameters.
///
/// Computed as a running mean so that identical inputs aggregate to
/// themselves bit for bit.
pub fn fedavg_aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates.first().ok_or(Error::EmptyAggregation)?;
    let mut mean = (*first).clone();
    let mut seen = 0usize;
    for (i, (params, n)) in updates.iter().enumerate() {
        params.check(first.feature_dim, first.num_classes)?;
        seen += n;
        if i == 0 || *n == 0 {
            continue;
        }
        let w = *n as f64 / seen as f64;
        for (m, v) in mean.values.iter_mut().zip(&params.values) {
            *m += w * (v - *m);
        }
    }
    if seen == 0 {
        return Err(Error::EmptyAggregation);
    }
    if updates[0].1 == 0 {
        // The running mean was seeded from a zero-weight client; recompute.
        let nonzero: Vec<(&ModelParams, usize)> =
            updates.iter().copied().filter(|(_, n)| *n > 0).collect();
        return fedavg_aggregate(&nonzero);
    }
    Ok(mean)
}

/// Fraction of the task's test set classified correctly.
pub fn evaluate(params: &ModelParams, task: &SyntheticTask) -> Result<f64> {
    params.check(task.feature_dim, task.num_classes)?;
    Ok(accuracy_on(params, &task.test_set))
}

fn accuracy_on(params: &ModelParams, data: &LocalDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut logits = vec![0.0; params.num_classes];
    let correct = (0..data.len())
        .filter(|&i| {
            params.logits_into(data.row(i), &mut logits);
            argmax(&logits) == data.labels[i]
        })
        .count();
    correct as f64 / data.len() as f64
}

/// A recruited owner and its private data.
#[derive(Debug, Clone, Copy)]
pub struct Participant<'a> {
    pub owner: &'a DataOwner,
    pub data: &'a LocalDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlSessionResult {
    pub params: ModelParams,
    pub accuracy: f64,
    /// One contribution vector per round.
    pub contributions: Vec<ContributionVector>,
}

/// Runs `rounds_per_session` rounds of broadcast, local update and FedAvg,
/// valuing participants after every round.
pub fn run_fl_session(
    initial: &ModelParams,
    recruited: &[Participant<'_>],
    task: &SyntheticTask,
    cfg: &TrainConfig,
    shapley_cfg: &ShapleyConfig,
    rng: &mut SimRng,
) -> Result<FlSessionResult> {
    if recruited.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let mut order: Vec<Participant<'_>> = recruited.to_vec();
    order.sort_by_key(|p| p.owner.id);
    let players: Vec<DoId> = order.iter().map(|p| p.owner.id).collect();

    let mut global = initial.clone();
    let mut contributions = Vec::with_capacity(cfg.rounds_per_session);
    for _ in 0..cfg.rounds_per_session {
        let updates: Vec<ModelParams> = order
            .iter()
            .map(|p| {
                let mut client_rng = seed::rng(rng.next_u64(), &[]);
                local_update(&global, p.data, cfg, &mut client_rng)
            })
            .collect::<Result<_>>()?;
        let weights: Vec<usize> = order.iter().map(|p| p.data.len()).collect();

        let baseline = evaluate(&global, task)?;
        let perf = |members: &[usize]| -> f64 {
            if members.is_empty() {
                return baseline;
            }
            let subset: Vec<(&ModelParams, usize)> =
                members.iter().map(|&m| (&updates[m], weights[m])).collect();
            match fedavg_aggregate(&subset) {
                Ok(agg) => accuracy_on(&agg, &task.test_set),
                Err(_) => baseline,
            }
        };
        let mut game = CoalitionGame::new(players.clone(), perf);
        contributions.push(shapley(&mut game, shapley_cfg, rng));

        let all: Vec<(&ModelParams, usize)> = updates.iter().zip(weights.iter().copied()).collect();
        global = fedavg_aggregate(&all)?;
    }
    let accuracy = evaluate(&global, task)?;
    Ok(FlSessionResult {
        params: global,
        accuracy,
        contributions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// IID data, varying sizes, no noise.
    IidVaryingSize,
    /// IID data, equal sizes, five noise tiers.
    IidNoisyTiers,
    /// A minority class held by a few noisy owners.
    NonIidMinority,
}

impl ScenarioKind {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            1 => Ok(ScenarioKind::IidVaryingSize),
            2 => Ok(ScenarioKind::IidNoisyTiers),
            3 => Ok(ScenarioKind::NonIidMinority),
            _ => Err(Error::Config(format!("scenario kind must be 1, 2 or 3, got {i}"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            ScenarioKind::IidVaryingSize => 1,
            ScenarioKind::IidNoisyTiers => 2,
            ScenarioKind::NonIidMinority => 3,
        }
    }
}

pub const NOISE_TIERS: [f64; 5] = [0.0, 0.10, 0.25, 0.40, 0.60];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub num_dos: usize,
    /// Dataset-size range for the varying-size scenario.
    pub size_lo: usize,
    pub size_hi: usize,
    /// Dataset size for the equal-size scenarios.
    pub equal_size: usize,
    pub minority_classes: Vec<usize>,
    pub minority_holders: usize,
    pub minority_noise: f64,
    pub reserve_lo: Money,
    pub reserve_hi: Money,
    pub task: TaskConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::IidVaryingSize,
            num_dos: 200,
            size_lo: 20,
            size_hi: 200,
            equal_size: 100,
            minority_classes: vec![4],
            minority_holders: 10,
            minority_noise: 0.10,
            reserve_lo: Money::from_micros(100_000),
            reserve_hi: Money::from_micros(500_000),
            task: TaskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task: SyntheticTask,
    pub owners: Vec<DataOwner>,
    pub datasets: Vec<LocalDataset>,
}

/// Builds the owner population and its private datasets.
pub fn generate_scenario(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Scenario> {
    let n = cfg.num_dos;
    if n == 0 {
        return Err(Error::Scenario("num_dos must be at least 1".into()));
    }
    if cfg.reserve_lo > cfg.reserve_hi {
        return Err(Error::Scenario("reserve_lo exceeds reserve_hi".into()));
    }
    let task = SyntheticTask::generate(&cfg.task, rng)?;
    let classes = task.num_classes;
    let uniform = vec![1.0 / classes as f64; classes];

    let mut sizes = vec![cfg.equal_size; n];
    let mut noise = vec![0.0; n];
    let mut profiles = vec![uniform.clone(); n];
    let mut noise_targets: Vec<Vec<usize>> = vec![(0..classes).collect(); n];

    match cfg.kind {
        ScenarioKind::IidVaryingSize => {
            if cfg.size_lo == 0 || cfg.size_lo > cfg.size_hi {
                return Err(Error::Scenario("size range must satisfy 1 <= lo <= hi".into()));
            }
            for s in sizes.iter_mut() {
                *s = rng.random_range(cfg.size_lo..=cfg.size_hi);
            }
        }
        ScenarioKind::IidNoisyTiers => {
            if n < NOISE_TIERS.len() {
                return Err(Error::Scenario(format!(
                    "the noise-tier scenario needs at least 5 data owners, got {n}"
                )));
            }
            for (i, x) in noise.iter_mut().enumerate() {
                *x = NOISE_TIERS[i * NOISE_TIERS.len() / n];
            }
        }
        ScenarioKind::NonIidMinority => {
            let minority = &cfg.minority_classes;
            if minority.is_empty() || minority.iter().any(|&c| c >= classes) {
                return Err(Error::Scenario("minority classes must be valid class indices".into()));
            }
            if minority.len() >= classes {
                return Err(Error::Scenario("at least one class must be non-minority".into()));
            }
            if cfg.minority_holders == 0 || cfg.minority_holders > n {
                return Err(Error::Scenario(format!(
                    "minority_holders must be in 1..={n}, got {}",
                    cfg.minority_holders
                )));
            }
            let majority: Vec<usize> = (0..classes).filter(|c| !minority.contains(c)).collect();
            let mut majority_profile = vec![0.0; classes];
            for &c in &majority {
                majority_profile[c] = 1.0 / majority.len() as f64;
            }
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(rng);
            let holders: Vec<usize> = ids[..cfg.minority_holders].to_vec();
            for i in 0..n {
                if holders.contains(&i) {
                    noise[i] = cfg.minority_noise;
                } else {
                    profiles[i] = majority_profile.clone();
                    noise_targets[i] = majority.clone();
                }
            }
        }
    }

    let mut owners = Vec::with_capacity(n);
    let mut datasets = Vec::with_capacity(n);
    let (lo, hi) = (cfg.reserve_lo.micros(), cfg.reserve_hi.micros());
    for i in 0..n {
        let reserve = Money::from_micros(rng.random_range(lo..=hi));
        let data = task.sample_dataset_with_noise_targets(
            sizes[i],
            &profiles[i],
            noise[i],
            &noise_targets[i],
            rng,
        );
        owners.push(DataOwner::new(i, sizes[i], noise[i], profiles[i].clone(), reserve)?);
        datasets.push(data);
    }
    Ok(Scenario {
        task,
        owners,
        datasets,
    })
}
