//! DQN machinery shared by the pacing and bidding agents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{ByteReader, Mlp, RmsPropState};
use crate::seed::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_len: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_len: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            state_len,
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for v in [&t.state, &t.next_state] {
            if v.len() != self.state_len {
                return Err(Error::Dimension {
                    expected: self.state_len,
                    got: v.len(),
                });
            }
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// `m` uniform draws with replacement. Empty buffers yield nothing.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..m)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Linear annealing from `start` to `end` over `anneal_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 5000,
        }
    }
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub capacity: usize,
    pub batch_size: usize,
    /// Target network sync period, in training steps.
    pub sync_period: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            capacity: 5000,
            batch_size: 64,
            sync_period: 20,
            gamma: 1.0,
            learning_rate: 0.0005,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            epsilon: EpsilonSchedule::default(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.capacity == 0 || self.sync_period == 0 {
            return Err(Error::Config("dqn capacity, batch size and sync period must be positive".into()));
        }
        let e = self.epsilon;
        if !(e.start >= e.end && e.end >= 0.0 && e.start <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon schedule needs 1 >= start >= end >= 0 (got {} -> {})",
                e.start, e.end
            )));
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Online and target Q-networks with their replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub optimizer: RmsPropState,
    pub buffer: ReplayBuffer,
    pub gamma: f64,
    pub sync_period: u64,
    pub batch_size: usize,
    pub epsilon: EpsilonSchedule,
    /// Completed training steps.
    pub train_steps: u64,
    /// Exploratory action selections so far; drives the epsilon schedule.
    pub env_steps: u64,
}

impl DqnAgent {
    pub fn new(state_len: usize, num_actions: usize, cfg: &DqnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![state_len];
        dims.extend(&cfg.hidden);
        dims.push(num_actions);
        let online = Mlp::init(&dims, seed)?;
        let optimizer =
            RmsPropState::new(online.params().len(), cfg.learning_rate, cfg.rms_decay, cfg.rms_eps)?;
        Ok(Self {
            target: online.clone(),
            online,
            optimizer,
            buffer: ReplayBuffer::new(cfg.capacity, state_len),
            gamma: cfg.gamma,
            sync_period: cfg.sync_period,
            batch_size: cfg.batch_size,
            epsilon: cfg.epsilon,
            train_steps: 0,
            env_steps: 0,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn state_len(&self) -> usize {
        self.online.input_dim()
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(state)
    }

    /// Epsilon-greedy choice over the online network.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.num_actions()));
        }
        Ok(greedy(&self.q_values(state)?))
    }

    /// Selects with the scheduled epsilon and advances the schedule.
    pub fn act<R: Rng + ?Sized>(&mut self, state: &[f64], rng: &mut R) -> Result<usize> {
        let eps = self.epsilon.epsilon_at(self.env_steps);
        self.env_steps += 1;
        self.select_action(state, eps, rng)
    }

    /// `r + γ · max_a' Q(s', a'; θ̂)`, or `r` for terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|t| {
                if t.terminal {
                    Ok(t.reward)
                } else {
                    let q = self.target.forward(&t.next_state)?;
                    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    Ok(t.reward + self.gamma * max)
                }
            })
            .collect()
    }

    pub fn store(&mut self, t: Transition) -> Result<()> {
        self.buffer.push(t)
    }

    /// One minibatch update once the buffer holds at least a batch;
    /// returns the pre-update loss.
    pub fn train_step(&mut self, rng: &mut SimRng) -> Result<Option<f64>> {
        if self.buffer.len() < self.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.batch_size, rng);
        let targets = self.td_targets(&batch)?;
        let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (loss, grads) = self.online.td_loss_and_grads(&states, &actions, &targets)?;
        self.optimizer.step(&mut self.online, &grads)?;
        self.train_steps += 1;
        if self.train_steps % self.sync_period == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Checkpoint: magic `AFLDQN01`, then length-prefixed (`u64` LE) fields:
    /// train steps (`u64`), env steps (`u64`), online network, target network,
    /// and the optimizer accumulator (`f64` LE each). Replay memory is not saved.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = b"AFLDQN01".to_vec();
        let mut field = |bytes: &[u8]| {
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        };
        field(&self.train_steps.to_le_bytes());
        field(&self.env_steps.to_le_bytes());
        field(&self.online.to_bytes());
        field(&self.target.to_bytes());
        let acc: Vec<u8> = self.optimizer.acc.iter().flat_map(|a| a.to_le_bytes()).collect();
        field(&acc);
        out
    }

    /// Restores networks and counters from a checkpoint written by an agent
    /// with the same architecture.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != b"AFLDQN01" {
            return Err(Error::Format("not a DQN checkpoint".into()));
        }
        let field = |r: &mut ByteReader| -> Result<Vec<u8>> {
            let n = r.u64()? as usize;
            Ok(r.take(n)?.to_vec())
        };
        let train_steps = ByteReader::new(&field(&mut r)?).u64()?;
        let env_steps = ByteReader::new(&field(&mut r)?).u64()?;
        let online = Mlp::from_bytes(&field(&mut r)?)?;
        let target = Mlp::from_bytes(&field(&mut r)?)?;
        let acc_bytes = field(&mut r)?;
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        if online.dims() != self.online.dims() || target.dims() != self.online.dims() {
            return Err(Error::Format(format!(
                "checkpoint network {:?} does not match agent {:?}",
                online.dims(),
                self.online.dims()
            )));
        }
        let mut ar = ByteReader::new(&acc_bytes);
        let acc = (0..online.params().len())
            .map(|_| ar.f64())
            .collect::<Result<Vec<_>>>()?;
        if !ar.is_done() {
            return Err(Error::Format("optimizer state size mismatch".into()));
        }
        self.online = online;
        self.target = target;
        self.optimizer.acc = acc;
        self.train_steps = train_steps;
        self.env_steps = env_steps;
        Ok(())
    }
}
