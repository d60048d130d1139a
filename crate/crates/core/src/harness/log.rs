//! Run logs, metrics, and their on-disk form.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::StrategyKind;
use crate::market::{Bid, DoId, MuId};
use crate::money::Money;
use crate::reputation::ReputationRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub mu_id: MuId,
    pub strategy: StrategyKind,
    pub budget: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerRecord {
    pub do_id: DoId,
    pub num_samples: usize,
    pub noise_fraction: f64,
    pub reserve: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub session: usize,
    pub slot: usize,
    pub do_id: DoId,
    pub reserve: Money,
    pub winner: Option<MuId>,
    pub price: Option<Money>,
    pub failed: bool,
    pub bids: Vec<Bid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: usize,
    pub mu_id: MuId,
    pub allocated_budget: Money,
    pub spend: Money,
    pub wins: usize,
    pub inter_reward: f64,
    /// Accuracy of the MU's model after the session.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRecord {
    pub session: usize,
    pub mu_id: MuId,
    pub round: usize,
    pub do_id: DoId,
    pub phi: f64,
}

/// Everything a run produced, in append order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub roster: Vec<RosterEntry>,
    pub owners: Vec<OwnerRecord>,
    pub auctions: Vec<AuctionRecord>,
    pub sessions: Vec<SessionRecord>,
    /// Reputation records of every DO after each session.
    pub reputations: Vec<Vec<ReputationRecord>>,
    pub contributions: Vec<ContributionRecord>,
}

impl RunLog {
    /// Reputation the auctioneer announced for `do_id` during `session`.
    pub fn reputation_at_auction(&self, session: usize, do_id: DoId) -> f64 {
        match session.checked_sub(1) {
            None => ReputationRecord::default().value(),
            Some(prev) => self.reputations[prev][do_id].value(),
        }
    }

    pub fn num_sessions(&self) -> usize {
        self.reputations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub mu_id: MuId,
    pub strategy: StrategyKind,
    pub num_data: usize,
    pub utility: f64,
    pub accuracy: f64,
}

pub type Metrics = Vec<MetricRow>;

/// Per-MU data volume, utility (reputation at win time, summed) and final accuracy.
pub fn compute_metrics(log: &RunLog) -> Metrics {
    let mut rows: BTreeMap<MuId, MetricRow> = log
        .roster
        .iter()
        .map(|r| {
            let row = MetricRow {
                seed: log.seed,
                mu_id: r.mu_id,
                strategy: r.strategy,
                num_data: 0,
                utility: 0.0,
                accuracy: 0.0,
            };
            (r.mu_id, row)
        })
        .collect();
    for a in &log.auctions {
        let Some(w) = a.winner else { continue };
        if let Some(row) = rows.get_mut(&w) {
            row.num_data += log.owners[a.do_id].num_samples;
            row.utility += log.reputation_at_auction(a.session, a.do_id);
        }
    }
    for s in &log.sessions {
        if let Some(row) = rows.get_mut(&s.mu_id) {
            row.accuracy = s.accuracy;
        }
    }
    rows.into_values().collect()
}

pub const AUCTIONS_HEADER: &str = "session,slot,do_id,reserve,winner,price,failed,bids_json";
pub const SESSIONS_HEADER: &str = "session,mu_id,allocated_budget,spend,wins,inter_reward,accuracy";
pub const METRICS_HEADER: &str = "seed,mu_id,strategy,num_data,utility,accuracy";

#[derive(Debug, Serialize, Deserialize)]
struct AuctionRow {
    session: usize,
    slot: usize,
    do_id: DoId,
    reserve: Money,
    winner: Option<MuId>,
    price: Option<Money>,
    failed: bool,
    bids_json: String,
}

#[derive(Serialize)]
struct AuctionEvent<'a> {
    session: usize,
    slot: usize,
    do_id: DoId,
    reserve: Money,
    winner: Option<MuId>,
    price: Option<Money>,
    failed: bool,
    bids_json: &'a [Bid],
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Event<'a> {
    Auction(AuctionEvent<'a>),
    Session(&'a SessionRecord),
}

#[derive(Debug, Serialize, Deserialize)]
struct ReputationRow {
    session: usize,
    do_id: DoId,
    pc: u64,
    nc: u64,
    value: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<T: Serialize>(path: &Path, header: Option<&str>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = match header {
        // Header is written explicitly so an empty table still has one.
        Some(h) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            w.write_record(h.split(',')).map_err(|e| csv_err(path, e))?;
            w
        }
        None => csv_writer(path)?,
    };
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_metrics(path: &Path, metrics: &[MetricRow]) -> Result<()> {
    write_rows(path, Some(METRICS_HEADER), metrics)
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    read_rows(path)
}

/// Writes the four primary tables plus the side tables needed to reload the log.
pub fn export(log: &RunLog, metrics: &[MetricRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let auction_rows = log
        .auctions
        .iter()
        .map(|a| {
            Ok(AuctionRow {
                session: a.session,
                slot: a.slot,
                do_id: a.do_id,
                reserve: a.reserve,
                winner: a.winner,
                price: a.price,
                failed: a.failed,
                bids_json: serde_json::to_string(&a.bids)
                    .map_err(|e| Error::Format(e.to_string()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows(&dir.join("auctions.csv"), Some(AUCTIONS_HEADER), auction_rows)?;
    write_rows(&dir.join("sessions.csv"), Some(SESSIONS_HEADER), &log.sessions)?;
    write_metrics(&dir.join("metrics.csv"), metrics)?;

    let path = dir.join("events.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    let mut sessions = log.sessions.iter().peekable();
    for a in &log.auctions {
        // Session records follow the auctions of their session.
        while let Some(s) = sessions.next_if(|s| s.session < a.session) {
            write_event(&mut out, &path, &Event::Session(s))?;
        }
        let event = Event::Auction(AuctionEvent {
            session: a.session,
            slot: a.slot,
            do_id: a.do_id,
            reserve: a.reserve,
            winner: a.winner,
            price: a.price,
            failed: a.failed,
            bids_json: &a.bids,
        });
        write_event(&mut out, &path, &event)?;
    }
    for s in sessions {
        write_event(&mut out, &path, &Event::Session(s))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    write_rows(&dir.join("roster.csv"), None, &log.roster)?;
    write_rows(&dir.join("owners.csv"), None, &log.owners)?;
    write_rows(&dir.join("contributions.csv"), None, &log.contributions)?;
    let reps = log.reputations.iter().enumerate().flat_map(|(session, recs)| {
        recs.iter().enumerate().map(move |(do_id, r)| ReputationRow {
            session,
            do_id,
            pc: r.pc,
            nc: r.nc,
            value: r.value(),
        })
    });
    write_rows(&dir.join("reputations.csv"), None, reps)?;
    fs::write(dir.join("seed.txt"), format!("{}\n", log.seed)).map_err(|e| Error::io(dir.join("seed.txt"), e))
}

fn write_event(out: &mut impl Write, path: &Path, event: &Event<'_>) -> Result<()> {
    serde_json::to_writer(&mut *out, event).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Reads back a directory written by [`export`].
pub fn load(dir: &Path) -> Result<RunLog> {
    let seed_path = dir.join("seed.txt");
    let seed = fs::read_to_string(&seed_path)
        .map_err(|e| Error::io(&seed_path, e))?
        .trim()
        .parse()
        .map_err(|e| Error::Format(format!("{}: {e}", seed_path.display())))?;

    let auctions = read_rows::<AuctionRow>(&dir.join("auctions.csv"))?
        .into_iter()
        .map(|r| {
            Ok(AuctionRecord {
                session: r.session,
                slot: r.slot,
                do_id: r.do_id,
                reserve: r.reserve,
                winner: r.winner,
                price: r.price,
                failed: r.failed,
                bids: serde_json::from_str(&r.bids_json).map_err(|e| Error::Format(e.to_string()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let owners: Vec<OwnerRecord> = read_rows(&dir.join("owners.csv"))?;
    let mut reputations: Vec<Vec<ReputationRecord>> = Vec::new();
    for row in read_rows::<ReputationRow>(&dir.join("reputations.csv"))? {
        if row.session == reputations.len() {
            reputations.push(vec![ReputationRecord::default(); owners.len()]);
        }
        let snapshot = reputations
            .get_mut(row.session)
            .and_then(|s| s.get_mut(row.do_id))
            .ok_or_else(|| Error::Format(format!("reputation row out of order: {row:?}")))?;
        *snapshot = ReputationRecord { pc: row.pc, nc: row.nc };
    }

    Ok(RunLog {
        seed,
        roster: read_rows(&dir.join("roster.csv"))?,
        owners,
        auctions,
        sessions: read_rows(&dir.join("sessions.csv"))?,
        reputations,
        contributions: read_rows(&dir.join("contributions.csv"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_log() -> RunLog {
        let m = Money::from_f64_round;
        RunLog {
            seed: 3,
            roster: vec![
                RosterEntry { mu_id: 0, strategy: StrategyKind::Const, budget: m(5.0) },
                RosterEntry { mu_id: 1, strategy: StrategyKind::Lin, budget: m(5.0) },
            ],
            owners: (0..3)
                .map(|i| OwnerRecord { do_id: i, num_samples: 10 * (i + 1), noise_fraction: 0.0, reserve: m(0.2) })
                .collect(),
            auctions: vec![
                AuctionRecord {
                    session: 0,
                    slot: 0,
                    do_id: 2,
                    reserve: m(0.2),
                    winner: Some(0),
                    price: Some(m(0.3)),
                    failed: false,
                    bids: vec![Bid { mu_id: 0, price: m(0.5) }, Bid { mu_id: 1, price: m(0.3) }],
                },
                AuctionRecord {
                    session: 1,
                    slot: 0,
                    do_id: 1,
                    reserve: m(0.2),
                    winner: Some(0),
                    price: Some(m(0.2)),
                    failed: false,
                    bids: vec![Bid { mu_id: 0, price: m(0.5) }, Bid { mu_id: 1, price: Money::ZERO }],
                },
                AuctionRecord {
                    session: 1,
                    slot: 1,
                    do_id: 0,
                    reserve: m(0.2),
                    winner: None,
                    price: None,
                    failed: true,
                    bids: vec![Bid { mu_id: 0, price: Money::ZERO }, Bid { mu_id: 1, price: m(0.1) }],
                },
            ],
            sessions: vec![
                SessionRecord { session: 0, mu_id: 0, allocated_budget: m(1.0), spend: m(0.3), wins: 1, inter_reward: 2.0 / 3.0, accuracy: 0.4 },
                SessionRecord { session: 0, mu_id: 1, allocated_budget: m(1.0), spend: Money::ZERO, wins: 0, inter_reward: 0.0, accuracy: 0.2 },
                SessionRecord { session: 1, mu_id: 0, allocated_budget: m(1.0), spend: m(0.2), wins: 1, inter_reward: 0.25, accuracy: 0.45 },
                SessionRecord { session: 1, mu_id: 1, allocated_budget: m(1.0), spend: Money::ZERO, wins: 0, inter_reward: 0.0, accuracy: 0.2 },
            ],
            reputations: vec![
                vec![ReputationRecord::default(), ReputationRecord::default(), ReputationRecord { pc: 1, nc: 0 }],
                vec![ReputationRecord::default(), ReputationRecord { pc: 0, nc: 2 }, ReputationRecord { pc: 1, nc: 0 }],
            ],
            contributions: vec![ContributionRecord { session: 0, mu_id: 0, round: 0, do_id: 2, phi: 0.125 }],
        }
    }

    #[test]
    fn metrics_sum_reputation_at_win() {
        let metrics = compute_metrics(&tiny_log());
        assert_eq!(metrics.len(), 2);
        assert_eq!(metrics[0].num_data, 30 + 20);
        assert_eq!(metrics[0].utility, 0.5 + 0.5);
        assert_eq!(metrics[0].accuracy, 0.45);
        assert_eq!((metrics[1].num_data, metrics[1].utility), (0, 0.0));
    }

    #[test]
    fn export_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let log = tiny_log();
        let metrics = compute_metrics(&log);
        export(&log, &metrics, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, log);
        assert_eq!(compute_metrics(&back), metrics);
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), metrics);

        let first = |name: &str| {
            fs::read_to_string(dir.path().join(name)).unwrap().lines().next().unwrap().to_string()
        };
        assert_eq!(first("auctions.csv"), AUCTIONS_HEADER);
        assert_eq!(first("sessions.csv"), SESSIONS_HEADER);
        assert_eq!(first("metrics.csv"), METRICS_HEADER);

        let events = fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
        let kinds: Vec<String> = events
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["type"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, ["auction", "session", "session", "auction", "auction", "session", "session"]);
    }

    #[test]
    fn empty_metrics_file_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().trim(), METRICS_HEADER);
    }
}
