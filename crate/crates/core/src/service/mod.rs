//! The long-running monitor: one structure snapshot, an append-only event log with
//! cumulative counters, scene queries and a live verdict stream.

pub mod http;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{UnboundedReceiver, UnboundedSender, unbounded_channel};
use url::Url;

use crate::classifier::{ClassifiedRequest, ClassifyOptions, Level, Level1Result, LevelStatus, classify_with};
use crate::error::{IngestError, ServiceError};
use crate::ingest::{parse_capture_line, to_capture_line};
use crate::layout::{self, CircleScene, DetailScene, LaneScene, UNKNOWN_DESTINATION, UNKNOWN_GROUP_ID};
use crate::model::ApplicationStructure;

pub const DEFAULT_RETENTION: usize = 100_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub normal: u64,
    pub deep_anomaly: u64,
    pub violation: u64,
}

impl StatusCounts {
    fn add(&mut self, status: LevelStatus) {
        match status {
            LevelStatus::Normal => self.normal += 1,
            LevelStatus::DeepAnomaly => self.deep_anomaly += 1,
            LevelStatus::Violation => self.violation += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.normal + self.deep_anomaly + self.violation
    }

    pub fn worst(&self) -> LevelStatus {
        if self.violation > 0 {
            LevelStatus::Violation
        } else if self.deep_anomaly > 0 {
            LevelStatus::DeepAnomaly
        } else {
            LevelStatus::Normal
        }
    }
}

/// Per-destination counts by level-1 status and per-form counts by level-2 status.
/// Destinations are keyed by URL; requests to unknown destinations by
/// [`UNKNOWN_DESTINATION`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub groups: BTreeMap<String, StatusCounts>,
    pub forms: BTreeMap<String, StatusCounts>,
}

impl Counters {
    pub fn record(&mut self, c: &ClassifiedRequest) {
        let key = c.l1.destination().map_or_else(|| UNKNOWN_DESTINATION.to_string(), Url::to_string);
        self.groups.entry(key).or_default().add(c.status(Level::L1).unwrap_or(LevelStatus::Violation));
        if let (Some(form_id), Some(l2)) = (c.l1.form_id(), c.status(Level::L2)) {
            self.forms.entry(form_id.to_string()).or_default().add(l2);
        }
    }

    pub fn fold<'a>(events: impl IntoIterator<Item = &'a ClassifiedRequest>) -> Counters {
        let mut c = Counters::default();
        for e in events {
            c.record(e);
        }
        c
    }
}

/// Replays capture text through the classifier and tallies the verdicts.
pub fn counters_from_capture(text: &str, structure: &ApplicationStructure, options: &ClassifyOptions) -> Counters {
    let mut counters = Counters::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        if let Ok(r) = parse_capture_line(line, i + 1, "journal", &structure.base_url) {
            counters.record(&classify_with(&r, structure, options));
        }
    }
    counters
}

/// A classified request as stored and streamed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub seq: u64,
    pub snapshot_id: u64,
    #[serde(flatten)]
    pub classified: ClassifiedRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverviewRow {
    pub group_id: String,
    pub destination: String,
    pub form_count: usize,
    pub counts: StatusCounts,
    pub worst_status: LevelStatus,
}

#[derive(Debug, Clone)]
pub struct MonitorConfig {
    pub retention: usize,
    pub classify: ClassifyOptions,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { retention: DEFAULT_RETENTION, classify: ClassifyOptions::default() }
    }
}

struct Snapshot {
    id: u64,
    structure: Arc<ApplicationStructure>,
}

#[derive(Default)]
struct State {
    snapshot: Option<Snapshot>,
    next_snapshot: u64,
    events: VecDeque<Arc<StoredEvent>>,
    by_id: HashMap<String, Arc<StoredEvent>>,
    counters: Counters,
    next_seq: u64,
    batches: u64,
}

pub struct Monitor {
    config: MonitorConfig,
    state: RwLock<State>,
    journal: Mutex<Option<BufWriter<File>>>,
    subscribers: Mutex<Vec<UnboundedSender<Arc<StoredEvent>>>>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Monitor {
        Monitor {
            config,
            state: RwLock::new(State::default()),
            journal: Mutex::new(None),
            subscribers: Mutex::new(Vec::new()),
        }
    }

    /// Appends every accepted event to `path` in the capture format from now on.
    pub fn open_journal(&self, path: &Path) -> Result<(), ServiceError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        *self.journal.lock() = Some(BufWriter::new(file));
        Ok(())
    }

    /// Re-ingests a journal written by an earlier run, without journaling it again.
    pub fn replay_journal(&self, path: &Path) -> Result<IngestOutcome, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        self.ingest_inner(&text, false)
    }

    /// Swaps in a new structure; returns the new snapshot id. Events already stored
    /// keep the verdicts of the snapshot they were classified under.
    pub fn replace_structure(&self, structure: ApplicationStructure) -> Result<u64, ServiceError> {
        let mut state = self.state.write();
        state.next_snapshot += 1;
        let id = state.next_snapshot;
        state.snapshot = Some(Snapshot { id, structure: Arc::new(structure) });
        if let Some(j) = self.journal.lock().as_mut() {
            writeln!(j, "# snapshot {id}")?;
            j.flush()?;
        }
        Ok(id)
    }

    pub fn snapshot_id(&self) -> Option<u64> {
        self.state.read().snapshot.as_ref().map(|s| s.id)
    }

    pub fn structure(&self) -> Option<Arc<ApplicationStructure>> {
        self.state.read().snapshot.as_ref().map(|s| s.structure.clone())
    }

    pub fn subscribe(&self) -> UnboundedReceiver<Arc<StoredEvent>> {
        let (tx, rx) = unbounded_channel();
        self.subscribers.lock().push(tx);
        rx
    }

    /// Classifies and appends a batch of capture lines.
    pub fn ingest_events(&self, lines: &str) -> Result<IngestOutcome, ServiceError> {
        self.ingest_inner(lines, true)
    }

    fn ingest_inner(&self, lines: &str, journal: bool) -> Result<IngestOutcome, ServiceError> {
        let mut state = self.state.write();
        let snapshot = state.snapshot.as_ref().ok_or(ServiceError::NoStructure)?;
        let (snapshot_id, structure) = (snapshot.id, snapshot.structure.clone());
        state.batches += 1;
        let file_id = format!("batch{}", state.batches);

        let mut outcome = IngestOutcome::default();
        let mut appended = Vec::new();
        for (i, line) in lines.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let request = match parse_capture_line(line, line_no, &file_id, &structure.base_url) {
                Ok(r) => r,
                Err(e) => {
                    outcome.rejected.push(reject(line_no, line, &e));
                    continue;
                }
            };
            if state.by_id.contains_key(&request.request_id) {
                outcome.rejected.push(Rejection {
                    line: line_no,
                    text: line.to_string(),
                    reason: format!("duplicate request id {}", request.request_id),
                });
                continue;
            }
            let classified = classify_with(&request, &structure, &self.config.classify);
            state.counters.record(&classified);
            state.next_seq += 1;
            let event = Arc::new(StoredEvent { seq: state.next_seq, snapshot_id, classified });
            state.by_id.insert(request.request_id.clone(), event.clone());
            state.events.push_back(event.clone());
            while state.events.len() > self.config.retention {
                if let Some(old) = state.events.pop_front() {
                    state.by_id.remove(&old.classified.request.request_id);
                }
            }
            appended.push(event);
            outcome.accepted += 1;
        }

        if journal && let Some(j) = self.journal.lock().as_mut() {
            for e in &appended {
                writeln!(j, "{}", to_capture_line(&e.classified.request, &structure.base_url))?;
            }
            j.flush()?;
        }
        // still under the write lock, so every subscriber sees ingestion order
        let mut subs = self.subscribers.lock();
        subs.retain(|tx| appended.iter().all(|e| tx.send(e.clone()).is_ok()));
        Ok(outcome)
    }

    pub fn counters(&self) -> Counters {
        self.state.read().counters.clone()
    }

    /// Counters folded from the retained log; equal to [`Monitor::counters`] until eviction starts.
    pub fn recompute_counters(&self) -> Counters {
        let state = self.state.read();
        Counters::fold(state.events.iter().map(|e| &e.classified))
    }

    pub fn events(&self) -> Vec<Arc<StoredEvent>> {
        self.state.read().events.iter().cloned().collect()
    }

    pub fn event(&self, request_id: &str) -> Result<Arc<StoredEvent>, ServiceError> {
        self.state
            .read()
            .by_id
            .get(request_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("request {request_id}")))
    }

    pub fn overview(&self) -> Result<Vec<OverviewRow>, ServiceError> {
        let state = self.state.read();
        let snapshot = state.snapshot.as_ref().ok_or(ServiceError::NoStructure)?;
        let mut rows: Vec<OverviewRow> = snapshot
            .structure
            .groups
            .iter()
            .map(|g| {
                let counts = state.counters.groups.get(g.destination_page.as_str()).copied().unwrap_or_default();
                OverviewRow {
                    group_id: g.group_id(),
                    destination: g.destination_page.to_string(),
                    form_count: g.forms.len(),
                    counts,
                    worst_status: counts.worst(),
                }
            })
            .collect();
        if let Some(counts) = state.counters.groups.get(UNKNOWN_DESTINATION).copied() {
            rows.push(OverviewRow {
                group_id: UNKNOWN_GROUP_ID.into(),
                destination: UNKNOWN_DESTINATION.into(),
                form_count: 0,
                counts,
                worst_status: counts.worst(),
            });
        }
        Ok(rows)
    }

    pub fn group_scene(&self, group_id: &str) -> Result<CircleScene, ServiceError> {
        let state = self.state.read();
        let snapshot = state.snapshot.as_ref().ok_or(ServiceError::NoStructure)?;
        let current = state.events.iter().filter(|e| e.snapshot_id == snapshot.id);
        if group_id == UNKNOWN_GROUP_ID {
            let events: Vec<ClassifiedRequest> = current
                .filter(|e| matches!(e.classified.l1, Level1Result::Dummy { destination: None, .. }))
                .map(|e| e.classified.clone())
                .collect();
            return Ok(layout::layout_unknown(&events)?);
        }
        let group = snapshot
            .structure
            .group_by_id(group_id)
            .ok_or_else(|| ServiceError::NotFound(format!("group {group_id}")))?;
        let events: Vec<ClassifiedRequest> = current
            .filter(|e| e.classified.l1.destination() == Some(&group.destination_page))
            .map(|e| e.classified.clone())
            .collect();
        Ok(layout::layout_overview(group, &events)?)
    }

    fn current_event(
        state: &State,
        form_id: &str,
        request_id: &str,
    ) -> Result<(Arc<ApplicationStructure>, Arc<StoredEvent>), ServiceError> {
        let snapshot = state.snapshot.as_ref().ok_or(ServiceError::NoStructure)?;
        let event = state
            .by_id
            .get(request_id)
            .filter(|e| e.snapshot_id == snapshot.id && e.classified.l1.form_id() == Some(form_id))
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("request {request_id} on form {form_id}")))?;
        Ok((snapshot.structure.clone(), event))
    }

    pub fn form_scene(&self, form_id: &str, request_id: &str) -> Result<LaneScene, ServiceError> {
        let state = self.state.read();
        let (structure, event) = Self::current_event(&state, form_id, request_id)?;
        let form = structure.form(form_id).ok_or_else(|| ServiceError::NotFound(format!("form {form_id}")))?;
        Ok(layout::layout_form(form, &event.classified)?)
    }

    pub fn control_scene(
        &self,
        form_id: &str,
        request_id: &str,
        order_index: usize,
    ) -> Result<DetailScene, ServiceError> {
        let state = self.state.read();
        let (structure, event) = Self::current_event(&state, form_id, request_id)?;
        let not_found = || ServiceError::NotFound(format!("control {order_index} of request {request_id}"));
        let form = structure.form(form_id).ok_or_else(not_found)?;
        let control = form.control(order_index).ok_or_else(not_found)?;
        let checks = event.classified.verdicts_for_control(order_index).ok_or_else(not_found)?;
        let observed = &event.classified.request.params[checks.param_index].1;
        Ok(layout::layout_control(control, observed, &checks.verdicts)?)
    }
}

fn reject(line: usize, text: &str, e: &IngestError) -> Rejection {
    Rejection { line, text: text.to_string(), reason: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FormRequest;
    use crate::model::tests::sample_structure;

    fn line(id: &str, token: &str) -> String {
        format!(
            r#"{{"ts":"2011-04-01T10:00:00Z","method":"POST","uri":"/login.php","referer":"http://h/login.html","body":"user=a&token={token}","id":"{id}"}}"#
        )
    }

    fn monitor() -> Monitor {
        let m = Monitor::new(MonitorConfig::default());
        m.replace_structure(sample_structure()).unwrap();
        m
    }

    #[test]
    fn ingest_requires_structure() {
        let m = Monitor::new(MonitorConfig::default());
        assert!(matches!(m.ingest_events(&line("a", "1")), Err(ServiceError::NoStructure)));
        assert!(matches!(m.overview(), Err(ServiceError::NoStructure)));
    }

    #[test]
    fn batch_with_one_malformed_line() {
        let m = monitor();
        let mut batch: Vec<String> = (0..9).map(|i| line(&format!("r{i}"), "1")).collect();
        batch.insert(4, "{broken".into());
        let out = m.ingest_events(&batch.join("\n")).unwrap();
        assert_eq!(out.accepted, 9);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 5);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let m = monitor();
        m.ingest_events(&line("a", "1")).unwrap();
        let out = m.ingest_events(&line("a", "1")).unwrap();
        assert_eq!(out.accepted, 0);
        assert!(out.rejected[0].reason.contains("duplicate"));
    }

    #[test]
    fn overview_and_scenes() {
        let m = monitor();
        let rows = m.overview().unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].worst_status, LevelStatus::Normal);

        m.ingest_events(&[line("ok", "1"), line("deep", "2")].join("\n")).unwrap();
        let rows = m.overview().unwrap();
        assert_eq!(rows[0].counts, StatusCounts { normal: 1, deep_anomaly: 1, violation: 0 });
        assert_eq!(rows[0].worst_status, LevelStatus::DeepAnomaly);

        let scene = m.group_scene(&rows[0].group_id).unwrap();
        assert_eq!(scene.glyphs.len(), 2);
        assert_eq!(scene.glyphs[1].status, LevelStatus::DeepAnomaly);

        let form_id = sample_structure().groups[0].forms[0].form_id.clone();
        let lanes = m.form_scene(&form_id, "deep").unwrap();
        assert_eq!(lanes.links.len(), 2);
        let detail = m.control_scene(&form_id, "deep", 1).unwrap();
        assert_eq!(detail.ellipses.len(), 1);
        assert_eq!(detail.ellipses[0].fill, layout::Fill::Red);
        assert!(matches!(m.control_scene(&form_id, "deep", 9), Err(ServiceError::NotFound(_))));
        assert!(matches!(m.group_scene("nope"), Err(ServiceError::NotFound(_))));
        assert!(matches!(m.form_scene("nope", "deep"), Err(ServiceError::NotFound(_))));
    }

    #[test]
    fn unknown_destinations_get_their_own_row() {
        let m = monitor();
        m.ingest_events(r#"{"ts":"2011-04-01T10:00:00Z","method":"GET","uri":"/elsewhere?x=1","id":"u"}"#).unwrap();
        let rows = m.overview().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].group_id, UNKNOWN_GROUP_ID);
        let scene = m.group_scene(UNKNOWN_GROUP_ID).unwrap();
        assert_eq!(scene.sectors.len(), 1);
        assert_eq!(scene.glyphs.len(), 1);
    }

    #[test]
    fn retention_evicts_oldest_but_counters_stay_cumulative() {
        let m = Monitor::new(MonitorConfig { retention: 3, ..MonitorConfig::default() });
        m.replace_structure(sample_structure()).unwrap();
        let batch: Vec<String> = (0..5).map(|i| line(&format!("r{i}"), "1")).collect();
        m.ingest_events(&batch.join("\n")).unwrap();
        assert_eq!(m.events().len(), 3);
        assert!(m.event("r0").is_err());
        assert_eq!(m.counters().groups.values().map(StatusCounts::total).sum::<u64>(), 5);
    }

    #[test]
    fn structure_swap_keeps_old_verdicts_out_of_new_scenes() {
        let m = monitor();
        m.ingest_events(&line("a", "1")).unwrap();
        let old = m.event("a").unwrap();
        let second = m.replace_structure(sample_structure()).unwrap();
        assert_eq!(old.snapshot_id, second - 1);
        let gid = sample_structure().groups[0].group_id();
        assert!(m.group_scene(&gid).unwrap().glyphs.is_empty());
        m.ingest_events(&line("b", "1")).unwrap();
        assert_eq!(m.group_scene(&gid).unwrap().glyphs.len(), 1);
    }

    #[test]
    fn stream_sees_events_in_order_and_journal_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let m = monitor();
        m.open_journal(&path).unwrap();
        let mut rx = m.subscribe();
        m.ingest_events(&[line("a", "1"), line("b", "2")].join("\n")).unwrap();
        m.ingest_events(&line("c", "1")).unwrap();
        let ids: Vec<String> = (0..3).map(|_| rx.try_recv().unwrap().classified.request.request_id.clone()).collect();
        assert_eq!(ids, ["a", "b", "c"]);

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(counters_from_capture(&text, &sample_structure(), &ClassifyOptions::default()), m.counters());

        let fresh = monitor();
        assert_eq!(fresh.replay_journal(&path).unwrap().accepted, 3);
        assert_eq!(fresh.counters(), m.counters());
        let a: &FormRequest = &fresh.event("a").unwrap().classified.request;
        assert_eq!(a, &m.event("a").unwrap().classified.request);
    }
}
