//! Experiment configuration.
//!
//! The file format is flat `key = value` text. Blank lines and lines starting
//! with `#` are ignored; keys use dotted section prefixes and unknown keys are
//! rejected. Lists are comma-separated.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agents::{AgentsConfig, BidActionGrid, BudgetActionGrid, StrategyKind, StrategyParams};
use crate::flsim::{ScenarioConfig, ScenarioKind, TrainConfig};
use crate::market::MuId;
use crate::money::Money;
use crate::reputation::ShapleyConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MuConfig {
    pub id: MuId,
    pub budget: Money,
    pub params: StrategyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sessions: usize,
    /// DOs auctioned per session.
    pub session_len: usize,
    /// Owner population, reserve interval and task.
    pub scenario: ScenarioConfig,
    pub fl: TrainConfig,
    pub shapley: ShapleyConfig,
    pub agents: AgentsConfig,
    /// Sorted by id.
    pub mus: Vec<MuConfig>,
    /// Training episodes run by `compare` before the frozen evaluation.
    pub episodes: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut scenario = ScenarioConfig::default();
        scenario.task.test_size = 200;
        Self {
            seed: 1,
            sessions: 20,
            session_len: 50,
            scenario,
            fl: TrainConfig {
                rounds_per_session: 3,
                ..TrainConfig::default()
            },
            shapley: ShapleyConfig::default(),
            agents: AgentsConfig::default(),
            mus: Vec::new(),
            episodes: 50,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale market: one MU per baseline plus one learning MU, equal budgets.
    pub fn desk(learner: StrategyKind) -> Self {
        let mut cfg = Self::default();
        let kinds = [
            StrategyKind::Const,
            StrategyKind::Rand,
            StrategyKind::Bmub,
            StrategyKind::Lin,
            learner,
        ];
        cfg.mus = kinds
            .iter()
            .enumerate()
            .map(|(id, &kind)| MuConfig {
                id,
                budget: Money::from_micros(20_000_000),
                params: StrategyParams::new(kind),
            })
            .collect();
        cfg
    }

    pub fn mu(&self, id: MuId) -> Option<&MuConfig> {
        self.mus.iter().find(|m| m.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sessions == 0 {
            return fail("market.sessions must be at least 1".into());
        }
        if self.session_len == 0 {
            return fail("market.session_len must be at least 1".into());
        }
        if self.session_len > self.scenario.num_dos {
            return fail(format!(
                "market.session_len ({}) exceeds market.num_dos ({})",
                self.session_len, self.scenario.num_dos
            ));
        }
        if self.scenario.reserve_lo > self.scenario.reserve_hi {
            return fail("market.reserve_lo exceeds market.reserve_hi".into());
        }
        if self.mus.is_empty() {
            return fail("at least one MU must be configured".into());
        }
        for w in self.mus.windows(2) {
            if w[0].id >= w[1].id {
                return fail(format!("duplicate or unsorted MU id {}", w[1].id));
            }
        }
        for mu in &self.mus {
            if mu.budget.is_zero() {
                return fail(format!("mu.{}.budget must be positive", mu.id));
            }
            mu.params.validate()?;
        }
        if self.shapley.exact_cap == 0 && self.shapley.permutations == 0 {
            return fail("shapley.permutations must be positive when exact mode is disabled".into());
        }
        self.fl.validate()?;
        self.agents.inter_dqn.validate()?;
        self.agents.intra_dqn.validate()?;
        if self.agents.history_len == 0 {
            return fail("agents.history must be at least 1".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses config text on top of [`ExperimentConfig::default`], which has no MUs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut mus: BTreeMap<MuId, (Option<StrategyKind>, Vec<(String, String, usize)>)> =
            BTreeMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = |e: Error| match e {
                Error::Config(msg) => Error::Config(format!("line {lineno}: {key}: {msg}")),
                other => other,
            };

            if let Some(rest) = key.strip_prefix("mu.") {
                let (id, field) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("line {lineno}: expected mu.<id>.<field>")))?;
                let id: MuId = parse_value(id).map_err(ctx)?;
                let entry = mus.entry(id).or_insert((None, Vec::new()));
                if field == "strategy" {
                    entry.0 = Some(parse_value(value).map_err(ctx)?);
                } else {
                    entry.1.push((field.to_string(), value.to_string(), lineno));
                }
                continue;
            }
            cfg.set(key, value).map_err(ctx)?;
        }

        for (id, (kind, fields)) in mus {
            let kind = kind
                .ok_or_else(|| Error::Config(format!("mu.{id}.strategy is required")))?;
            let mut mu = MuConfig {
                id,
                budget: Money::ZERO,
                params: StrategyParams::new(kind),
            };
            let mut has_budget = false;
            for (field, value, lineno) in fields {
                let ctx = |e: Error| match e {
                    Error::Config(msg) => Error::Config(format!("line {lineno}: mu.{id}.{field}: {msg}")),
                    other => other,
                };
                let p = &mut mu.params;
                match field.as_str() {
                    "budget" => {
                        mu.budget = parse_value(&value).map_err(ctx)?;
                        has_budget = true;
                    }
                    "const_bid" => p.const_bid = parse_value(&value).map_err(ctx)?,
                    "rand_lo" => p.rand_range.0 = parse_value(&value).map_err(ctx)?,
                    "rand_hi" => p.rand_range.1 = parse_value(&value).map_err(ctx)?,
                    "bmub_upper" => p.bmub_upper = parse_value(&value).map_err(ctx)?,
                    "lambda" => p.lambda_lin = parse_value(&value).map_err(ctx)?,
                    _ => return Err(Error::Config(format!("line {lineno}: unknown key mu.{id}.{field}"))),
                }
            }
            if !has_budget {
                return Err(Error::Config(format!("mu.{id}.budget is required")));
            }
            cfg.mus.push(mu);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one non-MU key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sc = &mut self.scenario;
        let ag = &mut self.agents;
        match key {
            "seed" => self.seed = parse_value(value)?,
            "market.sessions" => self.sessions = parse_value(value)?,
            "market.session_len" => self.session_len = parse_value(value)?,
            "market.num_dos" => sc.num_dos = parse_value(value)?,
            "market.reserve_lo" => sc.reserve_lo = parse_value(value)?,
            "market.reserve_hi" => sc.reserve_hi = parse_value(value)?,
            "scenario.kind" => sc.kind = parse_scenario_kind(value)?,
            "scenario.size_lo" => sc.size_lo = parse_value(value)?,
            "scenario.size_hi" => sc.size_hi = parse_value(value)?,
            "scenario.equal_size" => sc.equal_size = parse_value(value)?,
            "scenario.minority_classes" => sc.minority_classes = parse_list(value)?,
            "scenario.minority_holders" => sc.minority_holders = parse_value(value)?,
            "scenario.minority_noise" => sc.minority_noise = parse_value(value)?,
            "task.num_classes" => sc.task.num_classes = parse_value(value)?,
            "task.feature_dim" => sc.task.feature_dim = parse_value(value)?,
            "task.separation" => sc.task.separation = parse_value(value)?,
            "task.spread" => sc.task.spread = parse_value(value)?,
            "task.test_size" => sc.task.test_size = parse_value(value)?,
            "fl.local_epochs" => self.fl.local_epochs = parse_value(value)?,
            "fl.batch_size" => self.fl.batch_size = parse_value(value)?,
            "fl.learning_rate" => self.fl.learning_rate = parse_value(value)?,
            "fl.rounds" => self.fl.rounds_per_session = parse_value(value)?,
            "shapley.exact_cap" => self.shapley.exact_cap = parse_value(value)?,
            "shapley.permutations" => self.shapley.permutations = parse_value(value)?,
            "shapley.alpha" => {
                self.shapley.alpha = match value {
                    "auto" => None,
                    v => Some(parse_value(v)?),
                }
            }
            "agents.budget_grid" => ag.budget_grid = BudgetActionGrid::new(parse_list(value)?)?,
            "agents.bid_grid" => ag.bid_grid = BidActionGrid::new(parse_list(value)?)?,
            "agents.history" => ag.history_len = parse_value(value)?,
            "agents.inter_reward" => ag.inter_reward = parse_value(value)?,
            "dqn.hidden" => {
                let hidden: Vec<usize> = parse_list(value)?;
                ag.inter_dqn.hidden = hidden.clone();
                ag.intra_dqn.hidden = hidden;
            }
            "dqn.inter_anneal_steps" => ag.inter_dqn.epsilon.anneal_steps = parse_value(value)?,
            "dqn.intra_anneal_steps" => ag.intra_dqn.epsilon.anneal_steps = parse_value(value)?,
            "dqn.capacity" | "dqn.batch_size" | "dqn.sync_period" | "dqn.gamma"
            | "dqn.learning_rate" | "dqn.rms_decay" | "dqn.rms_eps" | "dqn.eps_start"
            | "dqn.eps_end" => {
                for d in [&mut ag.inter_dqn, &mut ag.intra_dqn] {
                    match key {
                        "dqn.capacity" => d.capacity = parse_value(value)?,
                        "dqn.batch_size" => d.batch_size = parse_value(value)?,
                        "dqn.sync_period" => d.sync_period = parse_value(value)?,
                        "dqn.gamma" => d.gamma = parse_value(value)?,
                        "dqn.learning_rate" => d.learning_rate = parse_value(value)?,
                        "dqn.rms_decay" => d.rms_decay = parse_value(value)?,
                        "dqn.rms_eps" => d.rms_eps = parse_value(value)?,
                        "dqn.eps_start" => d.epsilon.start = parse_value(value)?,
                        _ => d.epsilon.end = parse_value(value)?,
                    }
                }
            }
            "train.episodes" => self.episodes = parse_value(value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config("unknown key".into())),
        }
        Ok(())
    }

    /// Renders the configuration in the file format; `parse(render())` is the identity.
    pub fn render(&self) -> String {
        let sc = &self.scenario;
        let ag = &self.agents;
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let ulist = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let (d, i) = (&ag.inter_dqn, &ag.intra_dqn);
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("market.sessions = {}", self.sessions),
            format!("market.session_len = {}", self.session_len),
            format!("market.num_dos = {}", sc.num_dos),
            format!("market.reserve_lo = {}", sc.reserve_lo),
            format!("market.reserve_hi = {}", sc.reserve_hi),
            format!("scenario.kind = {}", sc.kind.index()),
            format!("scenario.size_lo = {}", sc.size_lo),
            format!("scenario.size_hi = {}", sc.size_hi),
            format!("scenario.equal_size = {}", sc.equal_size),
            format!("scenario.minority_classes = {}", ulist(&sc.minority_classes)),
            format!("scenario.minority_holders = {}", sc.minority_holders),
            format!("scenario.minority_noise = {}", sc.minority_noise),
            format!("task.num_classes = {}", sc.task.num_classes),
            format!("task.feature_dim = {}", sc.task.feature_dim),
            format!("task.separation = {}", sc.task.separation),
            format!("task.spread = {}", sc.task.spread),
            format!("task.test_size = {}", sc.task.test_size),
            format!("fl.local_epochs = {}", self.fl.local_epochs),
            format!("fl.batch_size = {}", self.fl.batch_size),
            format!("fl.learning_rate = {}", self.fl.learning_rate),
            format!("fl.rounds = {}", self.fl.rounds_per_session),
            format!("shapley.exact_cap = {}", self.shapley.exact_cap),
            format!("shapley.permutations = {}", self.shapley.permutations),
            format!(
                "shapley.alpha = {}",
                self.shapley.alpha.map_or("auto".to_string(), |a| a.to_string())
            ),
            format!("agents.budget_grid = {}", list(ag.budget_grid.fractions())),
            format!("agents.bid_grid = {}", list(ag.bid_grid.multipliers())),
            format!("agents.history = {}", ag.history_len),
            format!("agents.inter_reward = {}", ag.inter_reward),
            format!("dqn.hidden = {}", ulist(&i.hidden)),
            format!("dqn.capacity = {}", i.capacity),
            format!("dqn.batch_size = {}", i.batch_size),
            format!("dqn.sync_period = {}", i.sync_period),
            format!("dqn.gamma = {}", i.gamma),
            format!("dqn.learning_rate = {}", i.learning_rate),
            format!("dqn.rms_decay = {}", i.rms_decay),
            format!("dqn.rms_eps = {}", i.rms_eps),
            format!("dqn.eps_start = {}", i.epsilon.start),
            format!("dqn.eps_end = {}", i.epsilon.end),
            format!("dqn.inter_anneal_steps = {}", d.epsilon.anneal_steps),
            format!("dqn.intra_anneal_steps = {}", i.epsilon.anneal_steps),
            format!("train.episodes = {}", self.episodes),
            format!("output.dir = {}", self.output_dir.display()),
        ];
        for mu in &self.mus {
            let p = &mu.params;
            let id = mu.id;
            lines.push(format!("mu.{id}.strategy = {}", p.kind));
            lines.push(format!("mu.{id}.budget = {}", mu.budget));
            match p.kind {
                StrategyKind::Const => lines.push(format!("mu.{id}.const_bid = {}", p.const_bid)),
                StrategyKind::Rand => {
                    lines.push(format!("mu.{id}.rand_lo = {}", p.rand_range.0));
                    lines.push(format!("mu.{id}.rand_hi = {}", p.rand_range.1));
                }
                StrategyKind::Bmub => lines.push(format!("mu.{id}.bmub_upper = {}", p.bmub_upper)),
                StrategyKind::Lin => lines.push(format!("mu.{id}.lambda = {}", p.lambda_lin)),
                _ => {}
            }
        }
        lines.join("\n") + "\n"
    }
}

fn parse_value<T: FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?}: {e}")))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(parse_value).collect()
}

fn parse_scenario_kind(value: &str) -> Result<ScenarioKind> {
    match value {
        "1" | "iid_size" => Ok(ScenarioKind::IidVaryingSize),
        "2" | "iid_noise" => Ok(ScenarioKind::IidNoisyTiers),
        "3" | "non_iid" => Ok(ScenarioKind::NonIidMinority),
        other => Err(Error::Config(format!(
            "scenario.kind must be 1, 2, 3, iid_size, iid_noise or non_iid, got {other:?}"
        ))),
    }
}
