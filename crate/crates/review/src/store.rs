//! Event log and the in-memory projection rebuilt from it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use dxassist_core::corpus::{write_span_ground_truth, Post, SpanAnnotation, WriteOptions};
use dxassist_core::evaluation::{cohens_kappa, mean_kappa, KappaReport};
use dxassist_core::questionnaire::{resolve_slug, QuestionnaireId};
use serde::{Deserialize, Serialize};

use crate::ReviewError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Agree,
    Disagree,
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agree" => Ok(Verdict::Agree),
            "disagree" => Ok(Verdict::Disagree),
            other => Err(format!("verdict must be agree or disagree, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    PartiallyReviewed,
    Complete,
}

/// Which verdict combinations accept a symptom for export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusPolicy {
    /// Every reviewer agrees.
    #[default]
    Unanimous,
    /// Strictly more than half of the reviewers agree.
    Majority,
}

impl ConsensusPolicy {
    pub fn accepts(self, verdicts: &[Verdict]) -> bool {
        let agree = verdicts.iter().filter(|v| **v == Verdict::Agree).count();
        match self {
            ConsensusPolicy::Unanimous => !verdicts.is_empty() && agree == verdicts.len(),
            ConsensusPolicy::Majority => 2 * agree > verdicts.len(),
        }
    }
}

impl FromStr for ConsensusPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unanimous" => Ok(ConsensusPolicy::Unanimous),
            "majority" => Ok(ConsensusPolicy::Majority),
            other => Err(format!("policy must be unanimous or majority, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub reviewer: String,
    pub task_id: u64,
    pub slug: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Milliseconds since the epoch, strictly increasing across the log.
    pub timestamp: u64,
}

/// A decision as submitted; the store fills in the timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct DecisionInput {
    pub reviewer: String,
    pub task_id: u64,
    pub slug: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    TaskEnqueued {
        task_id: u64,
        questionnaire: QuestionnaireId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
        post: Post,
        annotations: BTreeMap<String, Vec<String>>,
    },
    DecisionRecorded(Decision),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: u64,
    pub post: Post,
    pub annotation: SpanAnnotation,
    pub model: Option<String>,
}

impl Task {
    /// Slugs every reviewer must rule on: those with evidence, or every
    /// slug when the model found none.
    pub fn required_slugs(&self) -> Vec<&'static str> {
        let present: Vec<_> = self.annotation.present_slugs().collect();
        if present.is_empty() {
            self.annotation.evidence.keys().copied().collect()
        } else {
            present
        }
    }

    pub fn questionnaire(&self) -> QuestionnaireId {
        self.annotation.questionnaire
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub questionnaire: QuestionnaireId,
    pub pairs: Vec<KappaReport>,
    pub mean_kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSubset {
    pub questionnaire: QuestionnaireId,
    pub policy: ConsensusPolicy,
    pub records: Vec<(Post, SpanAnnotation)>,
}

impl ValidatedSubset {
    /// Span ground-truth file contents.
    pub fn to_file(&self) -> String {
        write_span_ground_truth(&self.records, WriteOptions { include_ids: true })
    }
}

/// The projection. Mutations append to the log first and only then touch
/// memory, so a crash never leaves state the log cannot reproduce.
#[derive(Debug)]
pub struct ReviewStore {
    reviewers: BTreeSet<String>,
    tasks: BTreeMap<u64, Task>,
    by_post: HashMap<(QuestionnaireId, String), u64>,
    decisions: BTreeMap<(u64, String, String), Decision>,
    log: Option<(PathBuf, File)>,
    seq: u64,
    last_timestamp: u64,
}

impl ReviewStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory(reviewers: impl IntoIterator<Item = String>) -> Self {
        ReviewStore {
            reviewers: reviewers.into_iter().collect(),
            tasks: BTreeMap::new(),
            by_post: HashMap::new(),
            decisions: BTreeMap::new(),
            log: None,
            seq: 0,
            last_timestamp: 0,
        }
    }

    /// Open (or create) the log at `path` and replay it.
    pub fn open(
        path: impl AsRef<Path>,
        reviewers: impl IntoIterator<Item = String>,
    ) -> Result<Self, ReviewError> {
        let path = path.as_ref().to_path_buf();
        let mut store = ReviewStore::in_memory(reviewers);
        let corrupt = |line: usize, message: String| ReviewError::CorruptLog {
            path: path.display().to_string(),
            line,
            message,
        };
        match File::open(&path) {
            Ok(f) => {
                for (n, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(|e| corrupt(n + 1, e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: LogLine =
                        serde_json::from_str(&line).map_err(|e| corrupt(n + 1, e.to_string()))?;
                    if rec.seq != store.seq + 1 {
                        return Err(corrupt(n + 1, format!("expected seq {}, got {}", store.seq + 1, rec.seq)));
                    }
                    store.apply(rec.event).map_err(|e| corrupt(n + 1, e.to_string()))?;
                    store.seq = rec.seq;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(ReviewError::Io(e.to_string())),
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ReviewError::Io(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ReviewError::Io(e.to_string()))?;
        store.log = Some((path, file));
        Ok(store)
    }

    pub fn reviewers(&self) -> impl Iterator<Item = &str> {
        self.reviewers.iter().map(String::as_str)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn task(&self, id: u64) -> Result<&Task, ReviewError> {
        self.tasks.get(&id).ok_or(ReviewError::UnknownTask(id))
    }

    pub fn contains_post(&self, q: QuestionnaireId, post_id: &str) -> bool {
        self.by_post.contains_key(&(q, post_id.to_string()))
    }

    pub fn decision(&self, task: u64, reviewer: &str, slug: &str) -> Option<&Decision> {
        self.decisions
            .get(&(task, reviewer.to_string(), slug.to_string()))
    }

    fn append(&mut self, event: &Event) -> Result<(), ReviewError> {
        let seq = self.seq + 1;
        if let Some((_, file)) = self.log.as_mut() {
            let line = LogLine {
                seq,
                event: event.clone(),
            };
            let mut text = serde_json::to_string(&line).expect("event serializes");
            text.push('\n');
            file.write_all(text.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| ReviewError::Io(e.to_string()))?;
        }
        self.seq = seq;
        Ok(())
    }

    fn apply(&mut self, event: Event) -> Result<(), ReviewError> {
        match event {
            Event::TaskEnqueued {
                task_id,
                questionnaire,
                model,
                post,
                annotations,
            } => {
                let mut annotation = SpanAnnotation::empty(&post.id, questionnaire);
                for (raw, spans) in annotations {
                    let item = resolve_slug(questionnaire, &raw)
                        .map_err(|_| ReviewError::UnknownSlug(raw.clone()))?;
                    annotation.evidence.insert(item.slug, spans);
                }
                let key = (questionnaire, post.id.clone());
                if self.by_post.contains_key(&key) {
                    return Err(ReviewError::DuplicatePost(post.id));
                }
                self.by_post.insert(key, task_id);
                self.tasks.insert(
                    task_id,
                    Task {
                        id: task_id,
                        post,
                        annotation,
                        model,
                    },
                );
            }
            Event::DecisionRecorded(d) => {
                self.task(d.task_id)?;
                self.last_timestamp = self.last_timestamp.max(d.timestamp);
                self.decisions
                    .insert((d.task_id, d.reviewer.clone(), d.slug.clone()), d);
            }
        }
        Ok(())
    }

    /// Persist new tasks; ids continue from the log.
    pub fn enqueue(
        &mut self,
        tasks: Vec<(Post, SpanAnnotation, Option<String>)>,
    ) -> Result<Vec<u64>, ReviewError> {
        let mut seen = BTreeSet::new();
        for (post, ann, _) in &tasks {
            if self.contains_post(ann.questionnaire, &post.id)
                || !seen.insert((ann.questionnaire, post.id.clone()))
            {
                return Err(ReviewError::DuplicatePost(post.id.clone()));
            }
        }
        let mut ids = Vec::with_capacity(tasks.len());
        for (post, ann, model) in tasks {
            let task_id = self.tasks.keys().next_back().copied().unwrap_or(0) + 1;
            let event = Event::TaskEnqueued {
                task_id,
                questionnaire: ann.questionnaire,
                model,
                post,
                annotations: ann
                    .evidence
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.clone()))
                    .collect(),
            };
            self.append(&event)?;
            self.apply(event)?;
            ids.push(task_id);
        }
        Ok(ids)
    }

    pub fn status(&self, task: &Task) -> TaskStatus {
        let required = task.required_slugs();
        let total = required.len() * self.reviewers.len();
        let done = self
            .reviewers
            .iter()
            .flat_map(|r| required.iter().map(move |s| (r, s)))
            .filter(|(r, s)| self.decision(task.id, r, s).is_some())
            .count();
        if done == 0 {
            TaskStatus::Pending
        } else if done == total {
            TaskStatus::Complete
        } else {
            TaskStatus::PartiallyReviewed
        }
    }

    /// Required slugs `reviewer` has not ruled on yet.
    pub fn pending_for(&self, task: &Task, reviewer: &str) -> Vec<&'static str> {
        task.required_slugs()
            .into_iter()
            .filter(|s| self.decision(task.id, reviewer, s).is_none())
            .collect()
    }

    /// Record a verdict; returns the task's new status. The log write is
    /// synced before this returns.
    pub fn submit_decision(&mut self, d: DecisionInput) -> Result<TaskStatus, ReviewError> {
        if !self.reviewers.contains(&d.reviewer) {
            return Err(ReviewError::UnknownReviewer(d.reviewer));
        }
        let q = self.task(d.task_id)?.questionnaire();
        let slug = resolve_slug(q, &d.slug)
            .map_err(|_| ReviewError::UnknownSlug(d.slug.clone()))?
            .slug;
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|t| t.as_millis() as u64)
            .unwrap_or(0);
        let event = Event::DecisionRecorded(Decision {
            reviewer: d.reviewer,
            task_id: d.task_id,
            slug: slug.to_string(),
            verdict: d.verdict,
            note: d.note.filter(|n| !n.trim().is_empty()),
            timestamp: now.max(self.last_timestamp + 1),
        });
        self.append(&event)?;
        self.apply(event)?;
        Ok(self.status(self.task(d.task_id)?))
    }

    fn complete_tasks(&self, q: QuestionnaireId) -> impl Iterator<Item = &Task> {
        self.tasks
            .values()
            .filter(move |t| t.questionnaire() == q && self.status(t) == TaskStatus::Complete)
    }

    /// Pairwise Cohen's kappa over the (task, slug) verdicts two reviewers
    /// share on completed tasks.
    pub fn agreement(&self, q: QuestionnaireId) -> Result<AgreementReport, ReviewError> {
        let reviewers: Vec<&String> = self.reviewers.iter().collect();
        let mut pairs = Vec::new();
        for (i, a) in reviewers.iter().enumerate() {
            for b in &reviewers[i + 1..] {
                let (mut va, mut vb) = (Vec::new(), Vec::new());
                for task in self.complete_tasks(q) {
                    for slug in task.required_slugs() {
                        if let (Some(x), Some(y)) =
                            (self.decision(task.id, a, slug), self.decision(task.id, b, slug))
                        {
                            va.push(x.verdict);
                            vb.push(y.verdict);
                        }
                    }
                }
                if va.is_empty() {
                    continue;
                }
                let report = cohens_kappa(&va, &vb)
                    .map_err(|e| ReviewError::Agreement(e.to_string()))?
                    .for_raters(a.as_str(), b.as_str());
                pairs.push(report);
            }
        }
        let mean = mean_kappa(&pairs).ok_or(ReviewError::InsufficientOverlap)?;
        Ok(AgreementReport {
            questionnaire: q,
            pairs,
            mean_kappa: mean,
        })
    }

    /// Completed tasks whose required symptoms all pass `policy`, in task
    /// order, as span ground truth.
    pub fn export_validated(
        &self,
        q: QuestionnaireId,
        policy: ConsensusPolicy,
    ) -> Result<ValidatedSubset, ReviewError> {
        let mut any_complete = false;
        let mut records = Vec::new();
        for task in self.complete_tasks(q) {
            any_complete = true;
            let accepted = task.required_slugs().iter().all(|slug| {
                let verdicts: Vec<Verdict> = self
                    .reviewers
                    .iter()
                    .filter_map(|r| self.decision(task.id, r, slug).map(|d| d.verdict))
                    .collect();
                policy.accepts(&verdicts)
            });
            if accepted {
                records.push((task.post.clone(), task.annotation.clone()));
            }
        }
        if !any_complete {
            return Err(ReviewError::NothingComplete);
        }
        Ok(ValidatedSubset {
            questionnaire: q,
            policy,
            records,
        })
    }

    /// Questionnaires that have at least one task.
    pub fn questionnaires(&self) -> BTreeSet<QuestionnaireId> {
        self.tasks.values().map(Task::questionnaire).collect()
    }
}
