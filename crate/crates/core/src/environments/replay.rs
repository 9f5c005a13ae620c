use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, DriftChange, DriftEntry, DriftEvent, PromptDraw};
use crate::error::{Error, Result};
use crate::linalg::normalize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arm_names: Vec<String>,
    d: usize,
    k: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRow {
    prompt_id: String,
    embedding: Vec<f64>,
    scores: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    category: Option<String>,
}

/// One prompt of a replay log. `scores[g]` holds the samples of arm `g` in
/// header order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub prompt_id: String,
    /// Unit-norm embedding.
    pub embedding: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
    pub category: Option<String>,
    pub line: usize,
}

impl ReplayRow {
    /// Average of the stored samples of each arm.
    pub fn reference_means(&self) -> Vec<f64> {
        self.scores
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

/// A parsed, schema-checked replay log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayLog {
    pub path: PathBuf,
    pub arm_names: Vec<String>,
    pub dim: usize,
    pub samples_per_arm: usize,
    pub rows: Vec<ReplayRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

/// Outcome of [`validate_replay`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub rows: usize,
    pub dim: Option<usize>,
    pub num_arms: Option<usize>,
    pub samples_per_arm: Option<usize>,
    pub violations: Vec<Violation>,
}

impl ReplayReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a replay log without loading it into an environment.
///
/// Only I/O failures are errors; schema problems are listed as violations
/// with 1-based line numbers.
pub fn validate_replay(path: &Path) -> Result<ReplayReport> {
    parse(path).map(|(report, _)| report)
}

fn parse(path: &Path) -> Result<(ReplayReport, Option<ReplayLog>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut report = ReplayReport {
        rows: 0,
        dim: None,
        num_arms: None,
        samples_per_arm: None,
        violations: Vec::new(),
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let Some((header_line, header_text)) = lines.next() else {
        report.violations.push(Violation {
            line: 1,
            message: "missing header record".into(),
        });
        return Ok((report, None));
    };
    let header: Header = match serde_json::from_str(header_text) {
        Ok(h) => h,
        Err(e) => {
            report.violations.push(Violation {
                line: header_line,
                message: format!("malformed header: {e}"),
            });
            return Ok((report, None));
        }
    };
    let mut bad =
        |line: usize, message: String| report.violations.push(Violation { line, message });
    if header.arm_names.is_empty() {
        bad(header_line, "header lists no arms".into());
    }
    let mut seen_arms = HashSet::new();
    for name in &header.arm_names {
        if !seen_arms.insert(name.as_str()) {
            bad(header_line, format!("duplicate arm name {name:?}"));
        }
    }
    if header.d == 0 {
        bad(header_line, "header d must be >= 1".into());
    }
    if header.k == 0 {
        bad(header_line, "header k must be >= 1".into());
    }
    let column: HashMap<&str, usize> = header
        .arm_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    let mut row_count = 0;
    for (line, text) in lines {
        row_count += 1;
        let raw: RawRow = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => {
                bad(line, format!("malformed record: {e}"));
                continue;
            }
        };
        let mut ok = true;
        if !ids.insert(raw.prompt_id.clone()) {
            bad(line, format!("duplicate prompt_id {:?}", raw.prompt_id));
            ok = false;
        }
        let mut embedding = raw.embedding;
        if embedding.len() != header.d {
            bad(
                line,
                format!(
                    "dimension mismatch: expected {}, got {}",
                    header.d,
                    embedding.len()
                ),
            );
            ok = false;
        } else if embedding.iter().any(|x| !x.is_finite()) {
            bad(line, "embedding contains a non-finite value".into());
            ok = false;
        } else if !normalize(&mut embedding) {
            bad(line, "embedding has zero norm".into());
            ok = false;
        }
        let mut scores = vec![Vec::new(); header.arm_names.len()];
        for (name, samples) in raw.scores {
            let Some(&g) = column.get(name.as_str()) else {
                bad(line, format!("scores for unknown arm {name:?}"));
                ok = false;
                continue;
            };
            if samples.len() != header.k {
                bad(
                    line,
                    format!(
                        "arm {name:?} has {} samples, expected {}",
                        samples.len(),
                        header.k
                    ),
                );
                ok = false;
            }
            if samples.iter().any(|x| !x.is_finite()) {
                bad(line, format!("arm {name:?} has a non-finite score"));
                ok = false;
            }
            scores[g] = samples;
        }
        for (g, name) in header.arm_names.iter().enumerate() {
            if scores[g].is_empty() && header.k > 0 {
                bad(line, format!("missing scores for arm {name:?}"));
                ok = false;
            }
        }
        if ok {
            rows.push(ReplayRow {
                prompt_id: raw.prompt_id,
                embedding,
                scores,
                category: raw.category,
                line,
            });
        }
    }
    report.rows = row_count;
    report.dim = Some(header.d);
    report.num_arms = Some(header.arm_names.len());
    report.samples_per_arm = Some(header.k);
    let log = ReplayLog {
        path: path.to_path_buf(),
        arm_names: header.arm_names,
        dim: header.d,
        samples_per_arm: header.k,
        rows,
    };
    Ok((report, Some(log)))
}

impl ReplayLog {
    /// Loads a log, failing on the first schema violation.
    pub fn load(path: &Path) -> Result<Self> {
        let (report, log) = parse(path)?;
        if let Some(v) = report.violations.first() {
            let more = report.violations.len() - 1;
            let message = if more > 0 {
                format!("{} ({more} more violations)", v.message)
            } else {
                v.message.clone()
            };
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: v.line,
                message,
            });
        }
        Ok(log.expect("a log without violations has a header"))
    }

    pub fn num_arms(&self) -> usize {
        self.arm_names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub path: PathBuf,
    /// Visit rows in file order (wrapping) instead of uniformly with replacement.
    #[serde(default)]
    pub sequential: bool,
    #[serde(default)]
    pub drift: Vec<DriftEntry>,
}

/// Environment that replays prompts and stored score samples from a log.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    spec: ReplaySpec,
    log: Arc<ReplayLog>,
    /// Log column of each policy-visible arm, in order of introduction.
    columns: Vec<usize>,
    withheld: HashSet<String>,
    schedule: Vec<DriftEntry>,
    applied: usize,
    by_id: HashMap<String, usize>,
    cursor: usize,
    reference: Vec<f64>,
}

impl ReplayEnv {
    pub fn new(spec: ReplaySpec, log: Arc<ReplayLog>) -> Result<Self> {
        if log.rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "replay log {} has no rows",
                log.path.display()
            )));
        }
        let mut schedule = spec.drift.clone();
        schedule.sort_by_key(|e| e.round);
        let mut late_arms = Vec::new();
        let mut withheld = HashSet::new();
        for entry in &schedule {
            if entry.round == 0 {
                return Err(Error::Config("drift rounds are 1-based".into()));
            }
            match &entry.event {
                DriftEvent::AddArm { name } => {
                    let col = log
                        .arm_names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "drift adds arm {name:?}, which the log does not contain"
                            ))
                        })?;
                    if late_arms.contains(&col) {
                        return Err(Error::InvalidInput(format!("duplicate arm name {name:?}")));
                    }
                    late_arms.push(col);
                }
                DriftEvent::AddCategory(c) => {
                    if !log
                        .rows
                        .iter()
                        .any(|r| r.category.as_deref() == Some(c.name.as_str()))
                    {
                        return Err(Error::Config(format!(
                            "drift adds category {:?}, which no row carries",
                            c.name
                        )));
                    }
                    if !withheld.insert(c.name.clone()) {
                        return Err(Error::InvalidInput(format!(
                            "duplicate category name {:?}",
                            c.name
                        )));
                    }
                }
            }
        }
        let columns: Vec<usize> = (0..log.num_arms())
            .filter(|g| !late_arms.contains(g))
            .collect();
        if columns.is_empty() {
            return Err(Error::Config("drift withholds every arm of the log".into()));
        }
        let by_id = log
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.prompt_id.clone(), i))
            .collect();
        let mut reference = vec![0.0; columns.len()];
        for row in &log.rows {
            let means = row.reference_means();
            for (r, &col) in reference.iter_mut().zip(&columns) {
                *r += means[col];
            }
        }
        let n = log.rows.len() as f64;
        reference.iter_mut().for_each(|r| *r /= n);
        Ok(Self {
            spec,
            log,
            columns,
            withheld,
            schedule,
            applied: 0,
            by_id,
            cursor: 0,
            reference,
        })
    }

    pub fn spec(&self) -> &ReplaySpec {
        &self.spec
    }

    pub fn log(&self) -> &Arc<ReplayLog> {
        &self.log
    }

    pub fn num_arms(&self) -> usize {
        self.columns.len()
    }

    pub fn dim(&self) -> usize {
        self.log.dim
    }

    pub fn arm_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|&c| self.log.arm_names[c].clone())
            .collect()
    }

    pub fn category_count(&self) -> usize {
        let tags: HashSet<&str> = self
            .log
            .rows
            .iter()
            .filter_map(|r| r.category.as_deref())
            .collect();
        tags.iter().filter(|t| !self.withheld.contains(**t)).count()
    }

    /// Full-log mean of each initial arm.
    pub fn reference_means(&self) -> &[f64] {
        &self.reference
    }

    fn eligible(&self, row: &ReplayRow) -> bool {
        row.category
            .as_ref()
            .is_none_or(|c| !self.withheld.contains(c))
    }

    pub fn begin_round(&mut self, round: usize) -> Vec<DriftChange> {
        let mut changes = Vec::new();
        while self.applied < self.schedule.len() && self.schedule[self.applied].round <= round {
            match &self.schedule[self.applied].event {
                DriftEvent::AddArm { name } => {
                    let col = self
                        .log
                        .arm_names
                        .iter()
                        .position(|n| n == name)
                        .expect("checked at construction");
                    self.columns.push(col);
                    changes.push(DriftChange::ArmAdded {
                        index: self.columns.len() - 1,
                        name: name.clone(),
                    });
                }
                DriftEvent::AddCategory(c) => {
                    self.withheld.remove(&c.name);
                    changes.push(DriftChange::CategoryAdded {
                        name: c.name.clone(),
                    });
                }
            }
            self.applied += 1;
        }
        changes
    }

    pub fn next_prompt<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PromptDraw> {
        let rows = &self.log.rows;
        let index = if self.spec.sequential {
            let start = self.cursor;
            loop {
                let i = self.cursor % rows.len();
                self.cursor += 1;
                if self.eligible(&rows[i]) {
                    break i;
                }
                if self.cursor - start > rows.len() {
                    return Err(self.no_rows());
                }
            }
        } else {
            let eligible: Vec<usize> = (0..rows.len())
                .filter(|&i| self.eligible(&rows[i]))
                .collect();
            if eligible.is_empty() {
                return Err(self.no_rows());
            }
            eligible[rng.random_range(0..eligible.len())]
        };
        let row = &rows[index];
        let all = row.reference_means();
        let means: Vec<f64> = self.columns.iter().map(|&c| all[c]).collect();
        Ok(PromptDraw {
            id: row.prompt_id.clone(),
            vector: row.embedding.clone(),
            best_arm: Some(argmax_lowest(&means)),
            means: Some(means),
            category: row.category.clone(),
        })
    }

    fn no_rows(&self) -> Error {
        Error::InvalidInput(format!(
            "replay log {} has no eligible rows",
            self.log.path.display()
        ))
    }

    pub fn sample_score<R: Rng + ?Sized>(
        &self,
        prompt_id: &str,
        arm: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let &i = self
            .by_id
            .get(prompt_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown prompt id {prompt_id:?}")))?;
        let &col = self.columns.get(arm).ok_or_else(|| {
            Error::InvalidInput(format!(
                "arm {arm} out of range for {} arms",
                self.columns.len()
            ))
        })?;
        let samples = &self.log.rows[i].scores[col];
        Ok(samples[rng.random_range(0..samples.len())])
    }
}
