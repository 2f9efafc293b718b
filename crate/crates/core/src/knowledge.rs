//! The knowledge base: sustainability goals, historical data and tactics.
//!
//! # Files
//!
//! A configuration root holds three JSON documents:
//!
//! * `goals.json`: `{ "revision": n, "boundaries": [{ "metric", "min"?, "max"?, "unit" }], "decision_map"?: {..} }`
//! * `decision_map.json`: `{ "concerns": [{ "name", "dimension", "impacts": [{ "kind", "description" }], "boundaries": [..] }] }`,
//!   read only when `goals.json` carries no inline `decision_map`.
//! * `tactics.json`: `{ "tactics": [{ "name", "applicable_kinds" }], "strategies": [{ "name", "tactic", "parameters", "executable"? }], "mapping": { kind: strategy } }`
//!
//! Goal updates replace `goals.json` atomically. The event log is a separate
//! line-delimited JSON file of `{ "seq", "time", "type", "payload" }` records.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_decision_map, AdaptationBoundary, DecisionMap, SensorReading, Strategy, Tactic, UncertaintyKind,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic_with;
use crate::monitor::known_unit;

pub const GOALS_FILE: &str = "goals.json";
pub const DECISION_MAP_FILE: &str = "decision_map.json";
pub const TACTICS_FILE: &str = "tactics.json";

const DEFAULT_GOALS: &str = include_str!("../config/goals.json");
const DEFAULT_DECISION_MAP: &str = include_str!("../config/decision_map.json");
const DEFAULT_TACTICS: &str = include_str!("../config/tactics.json");

/// Writes the bundled default configuration into `dir`.
pub fn write_default_config(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(GOALS_FILE), DEFAULT_GOALS)?;
    std::fs::write(dir.join(DECISION_MAP_FILE), DEFAULT_DECISION_MAP)?;
    std::fs::write(dir.join(TACTICS_FILE), DEFAULT_TACTICS)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GoalsDocument {
    #[serde(default)]
    revision: u64,
    boundaries: Vec<AdaptationBoundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decision_map: Option<DecisionMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SustainabilityGoalsRepository {
    pub boundaries: BTreeMap<String, AdaptationBoundary>,
    pub decision_map: DecisionMap,
    pub revision: u64,
    /// Whether the decision map lives inside goals.json.
    inline_decision_map: bool,
}

impl SustainabilityGoalsRepository {
    pub fn new(boundaries: Vec<AdaptationBoundary>, decision_map: DecisionMap, revision: u64) -> Result<Self> {
        let errors: Vec<String> =
            validate_decision_map(&decision_map, &boundaries).iter().map(ToString::to_string).collect();
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        let repo = Self {
            boundaries: boundaries.into_iter().map(|b| (b.metric_name.clone(), b)).collect(),
            decision_map,
            revision,
            inline_decision_map: false,
        };
        repo.validate()?;
        Ok(repo)
    }

    pub fn validate(&self) -> Result<()> {
        let list: Vec<_> = self.boundaries.values().cloned().collect();
        let mut errors: Vec<String> =
            validate_decision_map(&self.decision_map, &list).iter().map(ToString::to_string).collect();
        for b in &list {
            if known_unit(&b.metric_name).is_none() {
                errors.push(format!("boundary names unknown metric `{}`", b.metric_name));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn boundary(&self, metric: &str) -> Option<&AdaptationBoundary> {
        self.boundaries.get(metric)
    }

    pub fn boundary_list(&self) -> Vec<AdaptationBoundary> {
        self.boundaries.values().cloned().collect()
    }

    fn to_document(&self) -> GoalsDocument {
        GoalsDocument {
            revision: self.revision,
            boundaries: self.boundary_list(),
            decision_map: self.inline_decision_map.then(|| self.decision_map.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TacticsRepository {
    pub tactics: Vec<Tactic>,
    pub strategies: Vec<Strategy>,
    pub mapping: BTreeMap<UncertaintyKind, String>,
}

impl TacticsRepository {
    /// Coverage of every uncertainty kind plus referential integrity.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut names = HashSet::new();
        for t in &self.tactics {
            if !names.insert(t.name.as_str()) {
                errors.push(format!("duplicate tactic `{}`", t.name));
            }
        }
        let mut strategy_names = HashSet::new();
        for s in &self.strategies {
            if !strategy_names.insert(s.name.as_str()) {
                errors.push(format!("duplicate strategy `{}`", s.name));
            }
            if self.tactic(&s.tactic).is_none() {
                errors.push(format!("strategy `{}` names unknown tactic `{}`", s.name, s.tactic));
            }
        }
        for kind in UncertaintyKind::ALL {
            if !self.tactics.iter().any(|t| t.applies_to(kind)) {
                errors.push(format!("no tactic covers {kind}"));
            }
            match self.mapping.get(&kind) {
                None => errors.push(format!("no strategy mapped for {kind}")),
                Some(name) => match self.strategy(name) {
                    None => errors.push(format!("{kind} maps to unknown strategy `{name}`")),
                    Some(s) => {
                        if self.tactic(&s.tactic).is_some_and(|t| !t.applies_to(kind)) {
                            errors.push(format!("strategy `{name}` uses tactic `{}` inapplicable to {kind}", s.tactic));
                        }
                        if !s.executable {
                            errors.push(format!("{kind} maps to non-executable strategy `{name}`"));
                        }
                    }
                },
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn tactic(&self, name: &str) -> Option<&Tactic> {
        self.tactics.iter().find(|t| t.name == name)
    }

    pub fn strategy(&self, name: &str) -> Option<&Strategy> {
        self.strategies.iter().find(|s| s.name == name)
    }

    /// Tactic and strategy that handle `kind`.
    pub fn lookup(&self, kind: UncertaintyKind) -> Option<(&Tactic, &Strategy)> {
        let strategy = self.strategy(self.mapping.get(&kind)?)?;
        Some((self.tactic(&strategy.tactic)?, strategy))
    }

    pub fn covered_kinds(&self) -> BTreeSet<UncertaintyKind> {
        self.tactics.iter().flat_map(|t| t.applicable_kinds.iter().copied()).collect()
    }
}

/// Recent readings for retraining windows.
#[derive(Debug, Clone)]
pub struct HistoricalDataRepository {
    capacity: usize,
    recent: VecDeque<SensorReading>,
}

impl HistoricalDataRepository {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, recent: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, reading: SensorReading) {
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(reading);
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// The most recent `n` readings, oldest first (fewer if not yet stored).
    pub fn latest(&self, n: usize) -> Vec<SensorReading> {
        let skip = self.recent.len().saturating_sub(n);
        self.recent.iter().skip(skip).copied().collect()
    }
}

/// Loaded knowledge: mutable goals, fixed tactics.
#[derive(Debug)]
pub struct KnowledgeBase {
    root: PathBuf,
    goals: RwLock<SustainabilityGoalsRepository>,
    tactics: TacticsRepository,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Parse { file: path.to_path_buf(), line: 0, msg: format!("cannot read: {e}") })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), msg: e.to_string() })
}

impl KnowledgeBase {
    /// Loads and validates every repository under `root`.
    pub fn load(root: &Path) -> Result<Self> {
        let goals_path = root.join(GOALS_FILE);
        let doc: GoalsDocument = parse(&goals_path, &read(&goals_path)?)?;
        let inline = doc.decision_map.is_some();
        let decision_map = match doc.decision_map {
            Some(dm) => dm,
            None => {
                let p = root.join(DECISION_MAP_FILE);
                parse(&p, &read(&p)?)?
            }
        };
        let mut goals = SustainabilityGoalsRepository::new(doc.boundaries, decision_map, doc.revision)?;
        goals.inline_decision_map = inline;
        goals.validate()?;

        let tactics_path = root.join(TACTICS_FILE);
        let tactics: TacticsRepository = parse(&tactics_path, &read(&tactics_path)?)?;
        tactics.validate()?;

        Ok(Self { root: root.to_path_buf(), goals: RwLock::new(goals), tactics })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Snapshot of the last committed goals revision.
    pub fn goals(&self) -> SustainabilityGoalsRepository {
        self.goals.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn tactics(&self) -> &TacticsRepository {
        &self.tactics
    }

    pub fn revision(&self) -> u64 {
        self.goals.read().unwrap_or_else(|e| e.into_inner()).revision
    }

    /// Validates `goals`, bumps its revision past the committed one and
    /// atomically replaces goals.json. Returns the new revision.
    pub fn persist_update(&self, goals: SustainabilityGoalsRepository) -> Result<u64> {
        self.persist_update_with(goals, &mut |_| Ok(()))
    }

    /// As [`persist_update`](Self::persist_update), running `before_commit`
    /// between writing the temporary file and renaming it into place.
    pub fn persist_update_with(
        &self,
        mut goals: SustainabilityGoalsRepository,
        before_commit: &mut dyn FnMut(&Path) -> io::Result<()>,
    ) -> Result<u64> {
        goals.validate()?;
        let mut current = self.goals.write().unwrap_or_else(|e| e.into_inner());
        goals.revision = current.revision + 1;
        goals.inline_decision_map = current.inline_decision_map;
        let bytes = serde_json::to_vec_pretty(&goals.to_document())?;
        write_atomic_with(&self.root.join(GOALS_FILE), &bytes, before_commit)?;
        *current = goals;
        Ok(current.revision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub time: f64,
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: serde_json::Value,
}

struct EventLogInner {
    out: Option<File>,
    next_seq: u64,
    recent: VecDeque<EventRecord>,
}

/// Append-only, totally ordered event log.
pub struct EventLog {
    inner: Mutex<EventLogInner>,
    keep_recent: usize,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self> {
        let out = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self::with_output(Some(out)))
    }

    pub fn in_memory() -> Self {
        Self::with_output(None)
    }

    fn with_output(out: Option<File>) -> Self {
        Self { inner: Mutex::new(EventLogInner { out, next_seq: 0, recent: VecDeque::new() }), keep_recent: 32 }
    }

    pub fn append(&self, time: f64, kind: &str, payload: impl Serialize) -> Result<u64> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let record = EventRecord { seq: inner.next_seq, time, kind: kind.to_string(), payload: serde_json::to_value(payload)? };
        if let Some(out) = inner.out.as_mut() {
            let mut line = serde_json::to_vec(&record)?;
            line.push(b'\n');
            out.write_all(&line)?;
        }
        inner.next_seq += 1;
        if inner.recent.len() == self.keep_recent {
            inner.recent.pop_front();
        }
        inner.recent.push_back(record);
        Ok(inner.next_seq - 1)
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).next_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The most recent `n` records (at most the retained tail).
    pub fn recent(&self, n: usize) -> Vec<EventRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let skip = inner.recent.len().saturating_sub(n);
        inner.recent.iter().skip(skip).cloned().collect()
    }
}

pub fn read_event_log(path: &Path) -> Result<Vec<EventRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse { file: path.to_path_buf(), line: i + 1, msg: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write_default_config(dir.path()).unwrap();
        dir
    }

    #[test]
    fn bundled_config_loads_and_covers_every_kind() {
        let dir = config_dir();
        let kb = KnowledgeBase::load(dir.path()).unwrap();
        assert_eq!(kb.tactics().covered_kinds().len(), 4);
        for kind in UncertaintyKind::ALL {
            let (tactic, _) = kb.tactics().lookup(kind).unwrap();
            assert!(tactic.applies_to(kind));
        }
        assert_eq!(kb.goals().decision_map.concerns.len(), 3);
    }

    #[test]
    fn inverted_boundary_rejected_at_load() {
        let dir = config_dir();
        std::fs::write(
            dir.path().join(GOALS_FILE),
            r#"{"revision":1,"boundaries":[{"metric":"energy_avg_10s","min":10,"max":3,"unit":"uJ"},
               {"metric":"cost_per_hour","max":1,"unit":"cost/h"},{"metric":"kl_divergence","max":0.5,"unit":"nats"}]}"#,
        )
        .unwrap();
        let err = KnowledgeBase::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_tactic_rejected_at_load() {
        let dir = config_dir();
        let mut doc: serde_json::Value = serde_json::from_str(DEFAULT_TACTICS).unwrap();
        doc["strategies"][0]["tactic"] = "Teleport".into();
        std::fs::write(dir.path().join(TACTICS_FILE), doc.to_string()).unwrap();
        let err = KnowledgeBase::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("Teleport"), "{err}");
    }

    #[test]
    fn uncovered_kind_rejected() {
        let mut repo: TacticsRepository = serde_json::from_str(DEFAULT_TACTICS).unwrap();
        repo.tactics.retain(|t| t.name != "UpdateObjectives");
        repo.strategies.retain(|s| s.tactic != "UpdateObjectives");
        let err = repo.validate().unwrap_err().to_string();
        assert!(err.contains("FutureGoalChange"), "{err}");
    }

    #[test]
    fn parse_errors_carry_file_and_line() {
        let dir = config_dir();
        std::fs::write(dir.path().join(TACTICS_FILE), "{\n\n  oops").unwrap();
        match KnowledgeBase::load(dir.path()).unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert!(file.ends_with(TACTICS_FILE));
                assert_eq!(line, 3);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_metric_rejected() {
        let dir = config_dir();
        let kb = KnowledgeBase::load(dir.path()).unwrap();
        let mut goals = kb.goals();
        goals.boundaries.insert("latency_p99".into(), AdaptationBoundary::new("latency_p99", None, Some(1.0), "s"));
        assert!(kb.persist_update(goals).is_err());
    }

    #[test]
    fn persist_increments_revision_and_reloads() {
        let dir = config_dir();
        let kb = KnowledgeBase::load(dir.path()).unwrap();
        let mut goals = kb.goals();
        let r0 = goals.revision;
        goals.boundaries.get_mut("energy_avg_10s").unwrap().max = Some(8.0);
        let r1 = kb.persist_update(goals.clone()).unwrap();
        let r2 = kb.persist_update(goals).unwrap();
        assert_eq!((r1, r2), (r0 + 1, r0 + 2));
        let reloaded = KnowledgeBase::load(dir.path()).unwrap().goals();
        assert_eq!(reloaded.boundary("energy_avg_10s").unwrap().max, Some(8.0));
        assert_eq!(reloaded, kb.goals());
    }

    #[test]
    fn inline_decision_map_is_kept_inline() {
        let dir = config_dir();
        let mut doc: serde_json::Value = serde_json::from_str(DEFAULT_GOALS).unwrap();
        doc["decision_map"] = serde_json::from_str(DEFAULT_DECISION_MAP).unwrap();
        std::fs::write(dir.path().join(GOALS_FILE), doc.to_string()).unwrap();
        std::fs::remove_file(dir.path().join(DECISION_MAP_FILE)).unwrap();
        let kb = KnowledgeBase::load(dir.path()).unwrap();
        kb.persist_update(kb.goals()).unwrap();
        let again = KnowledgeBase::load(dir.path()).unwrap();
        assert_eq!(again.goals().decision_map, kb.goals().decision_map);
    }

    #[test]
    fn failed_commit_keeps_previous_file() {
        let dir = config_dir();
        let kb = KnowledgeBase::load(dir.path()).unwrap();
        let before = std::fs::read(dir.path().join(GOALS_FILE)).unwrap();
        let mut goals = kb.goals();
        goals.boundaries.get_mut("energy_avg_10s").unwrap().max = Some(8.0);
        let err = kb.persist_update_with(goals, &mut |_| Err(io::Error::other("disk pulled"))).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
        assert_eq!(std::fs::read(dir.path().join(GOALS_FILE)).unwrap(), before);
        assert_eq!(kb.goals().boundary("energy_avg_10s").unwrap().max, Some(4000.0));
        assert!(!dir.path().join("goals.json.tmp").exists());
    }

    #[test]
    fn history_ring_buffer() {
        let mut h = HistoricalDataRepository::new(3);
        for i in 0..5 {
            h.push(SensorReading { timestamp: i, pm25: i as f64, pm10: 0.0, temperature: 0.0, humidity: 0.0 });
        }
        assert_eq!(h.len(), 3);
        let ts: Vec<i64> = h.latest(2).iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![3, 4]);
        assert_eq!(h.latest(10).len(), 3);
    }

    #[test]
    fn event_log_is_gapless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let log = EventLog::open(&path).unwrap();
        for i in 0..5 {
            assert_eq!(log.append(i as f64, "tick", serde_json::json!({ "i": i })).unwrap(), i);
        }
        drop(log);
        let records = read_event_log(&path).unwrap();
        assert_eq!(records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(records[2].kind, "tick");
    }
}
