//! Session logs, experiment datasets and their newline-delimited serialization.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::sim::SimConfig;

/// One shown video.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStep {
    pub creator: u32,
    pub action: u8,
    pub reward: f64,
    /// Total reward before this step.
    pub cumulative_watch: f64,
    /// Tabular state, when the log comes from a finite MDP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<u32>,
}

/// One viewer's trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub viewer_id: u64,
    pub steps: Vec<SessionStep>,
    /// False when the session was cut at the step cap.
    pub terminated: bool,
}

impl SessionLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `G_t = sum_{t' >= t} r_{t'}`, one backward pass.
    pub fn suffix_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc += step.reward;
            out[t] = acc;
        }
        out
    }
}

/// Main and holdout sessions plus the creator assignment table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentDataset {
    pub sessions: Vec<SessionLog>,
    /// Action of each creator, indexed by creator id.
    pub assignments: Vec<u8>,
    /// Treatment probability the estimators are told.
    pub p_nominal: f64,
    /// Treatment probability actually used for the assignment draw.
    pub p_actual: f64,
    pub holdout_sessions: Vec<SessionLog>,
}

impl ExperimentDataset {
    pub fn n_creators(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_steps(&self) -> usize {
        self.sessions.iter().map(|s| s.len()).sum()
    }

    /// Checks creator ids, action/assignment consistency and holdout disjointness.
    pub fn validate(&self) -> Result<()> {
        for log in self.sessions.iter().chain(&self.holdout_sessions) {
            for (t, step) in log.steps.iter().enumerate() {
                let j = step.creator as usize;
                let a = *self.assignments.get(j).ok_or_else(|| {
                    invalid("dataset", format!("viewer {} step {t}: unknown creator {j}", log.viewer_id))
                })?;
                if a != step.action {
                    return Err(invalid(
                        "dataset",
                        format!("viewer {} step {t}: action {} but creator {j} is assigned {a}", log.viewer_id, step.action),
                    ));
                }
            }
        }
        let main: HashSet<u64> = self.sessions.iter().map(|s| s.viewer_id).collect();
        if let Some(s) = self.holdout_sessions.iter().find(|s| main.contains(&s.viewer_id)) {
            return Err(invalid("dataset", format!("viewer {} is in both holdout and main", s.viewer_id)));
        }
        Ok(())
    }

    /// SHA-256 of the assignment table, hex.
    pub fn assignments_digest(&self) -> String {
        digest_assignments(&self.assignments)
    }
}

pub fn digest_assignments(assignments: &[u8]) -> String {
    hex::encode(Sha256::digest(assignments))
}

/// Sidecar header of a serialized dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    #[serde(default)]
    pub config: Option<SimConfig>,
    pub n_sessions: usize,
    pub n_holdout: usize,
    pub p_nominal: f64,
    pub p_actual: f64,
    pub n_creators: usize,
    pub assignments_digest: String,
    /// One digit per creator.
    pub assignments: String,
    #[serde(default)]
    pub truncated_viewers: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    viewer_id: u64,
    step_index: usize,
    creator_id: u32,
    action: u8,
    reward: f64,
    cumulative_watch: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<u32>,
}

/// Paths of the three files making up a dataset.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub main: PathBuf,
    pub holdout: PathBuf,
    pub header: PathBuf,
}

impl DatasetPaths {
    pub fn new(prefix: &Path) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        DatasetPaths {
            main: with(".ndjson"),
            holdout: with(".holdout.ndjson"),
            header: with(".header.json"),
        }
    }
}

/// Writes sessions as one JSON record per step.
pub fn write_sessions<W: Write>(out: W, sessions: &[SessionLog]) -> Result<()> {
    let mut out = BufWriter::new(out);
    for log in sessions {
        for (t, step) in log.steps.iter().enumerate() {
            let rec = StepRecord {
                viewer_id: log.viewer_id,
                step_index: t,
                creator_id: step.creator,
                action: step.action,
                reward: step.reward,
                cumulative_watch: step.cumulative_watch,
                state: step.state,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `<prefix>.ndjson`, `<prefix>.holdout.ndjson` and `<prefix>.header.json`.
pub fn write_dataset(ds: &ExperimentDataset, prefix: &Path, config: Option<&SimConfig>) -> Result<DatasetPaths> {
    if ds.assignments.iter().any(|&a| a > 9) {
        return Err(invalid("dataset", "serialization supports at most 10 actions"));
    }
    let paths = DatasetPaths::new(prefix);
    if let Some(dir) = paths.main.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_sessions(File::create(&paths.main)?, &ds.sessions)?;
    write_sessions(File::create(&paths.holdout)?, &ds.holdout_sessions)?;
    let header = DatasetHeader {
        format_version: 1,
        config: config.cloned(),
        n_sessions: ds.sessions.len(),
        n_holdout: ds.holdout_sessions.len(),
        p_nominal: ds.p_nominal,
        p_actual: ds.p_actual,
        n_creators: ds.n_creators(),
        assignments_digest: ds.assignments_digest(),
        assignments: ds.assignments.iter().map(|a| char::from(b'0' + a)).collect(),
        truncated_viewers: ds
            .sessions
            .iter()
            .chain(&ds.holdout_sessions)
            .filter(|s| !s.terminated)
            .map(|s| s.viewer_id)
            .collect(),
    };
    std::fs::write(&paths.header, serde_json::to_string_pretty(&header)?)?;
    Ok(paths)
}

/// Streams sessions out of newline-delimited step records, one session at a time.
pub struct SessionReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    pending: Option<StepRecord>,
    truncated: HashSet<u64>,
}

impl<R: BufRead> SessionReader<R> {
    pub fn new(reader: R, truncated: &[u64]) -> Self {
        SessionReader {
            lines: reader.lines(),
            line_no: 0,
            pending: None,
            truncated: truncated.iter().copied().collect(),
        }
    }

    fn next_record(&mut self) -> Option<Result<StepRecord>> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: self.line_no,
                msg: e.to_string(),
            }));
        }
    }
}

impl<R: BufRead> Iterator for SessionReader<R> {
    type Item = Result<SessionLog>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.pending.take() {
            Some(r) => r,
            None => match self.next_record()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            },
        };
        if first.step_index != 0 {
            return Some(Err(Error::Parse {
                line: self.line_no,
                msg: format!("viewer {} starts at step {}", first.viewer_id, first.step_index),
            }));
        }
        let viewer_id = first.viewer_id;
        let to_step = |r: &StepRecord| SessionStep {
            creator: r.creator_id,
            action: r.action,
            reward: r.reward,
            cumulative_watch: r.cumulative_watch,
            state: r.state,
        };
        let mut steps = vec![to_step(&first)];
        loop {
            match self.next_record() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(r)) => {
                    if r.viewer_id != viewer_id {
                        self.pending = Some(r);
                        break;
                    }
                    if r.step_index != steps.len() {
                        return Some(Err(Error::Parse {
                            line: self.line_no,
                            msg: format!("viewer {viewer_id}: expected step {}, got {}", steps.len(), r.step_index),
                        }));
                    }
                    steps.push(to_step(&r));
                }
            }
        }
        Some(Ok(SessionLog {
            viewer_id,
            steps,
            terminated: !self.truncated.contains(&viewer_id),
        }))
    }
}

pub fn read_header(prefix: &Path) -> Result<DatasetHeader> {
    let text = std::fs::read_to_string(DatasetPaths::new(prefix).header)?;
    Ok(serde_json::from_str(&text)?)
}

/// Opens the main session stream of a serialized dataset.
pub fn open_sessions(prefix: &Path, header: &DatasetHeader) -> Result<SessionReader<BufReader<File>>> {
    let f = File::open(DatasetPaths::new(prefix).main)?;
    Ok(SessionReader::new(BufReader::new(f), &header.truncated_viewers))
}

/// Loads a whole serialized dataset and checks the assignment digest.
pub fn read_dataset(prefix: &Path) -> Result<(ExperimentDataset, DatasetHeader)> {
    let header = read_header(prefix)?;
    let assignments: Vec<u8> = header
        .assignments
        .bytes()
        .map(|b| {
            if b.is_ascii_digit() {
                Ok(b - b'0')
            } else {
                Err(invalid("header", "assignment table must be digits"))
            }
        })
        .collect::<Result<_>>()?;
    if digest_assignments(&assignments) != header.assignments_digest {
        return Err(invalid("header", "assignment digest mismatch"));
    }
    let paths = DatasetPaths::new(prefix);
    let sessions = open_sessions(prefix, &header)?.collect::<Result<Vec<_>>>()?;
    let holdout = SessionReader::new(BufReader::new(File::open(paths.holdout)?), &header.truncated_viewers)
        .collect::<Result<Vec<_>>>()?;
    let ds = ExperimentDataset {
        sessions,
        assignments,
        p_nominal: header.p_nominal,
        p_actual: header.p_actual,
        holdout_sessions: holdout,
    };
    ds.validate()?;
    Ok((ds, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(viewer: u64, rewards: &[f64], creators: &[u32], actions: &[u8]) -> SessionLog {
        let mut w = 0.0;
        let steps = rewards
            .iter()
            .zip(creators)
            .zip(actions)
            .map(|((&r, &c), &a)| {
                let s = SessionStep {
                    creator: c,
                    action: a,
                    reward: r,
                    cumulative_watch: w,
                    state: None,
                };
                w += r;
                s
            })
            .collect();
        SessionLog {
            viewer_id: viewer,
            steps,
            terminated: true,
        }
    }

    #[test]
    fn suffix_sums_backward() {
        let l = log(0, &[1.0, 2.0, 3.0], &[0, 1, 0], &[1, 0, 1]);
        assert_eq!(l.suffix_sums(), vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = log(7, &[0.125, 3.5], &[1, 0], &[0, 1]);
        t.terminated = false;
        let ds = ExperimentDataset {
            sessions: vec![log(5, &[1.5, 2.25, 0.1], &[0, 0, 1], &[1, 1, 0]), t],
            assignments: vec![1, 0],
            p_nominal: 0.5,
            p_actual: 0.5,
            holdout_sessions: vec![log(1, &[4.0], &[1], &[0])],
        };
        let prefix = dir.path().join("d");
        write_dataset(&ds, &prefix, None).unwrap();
        let (back, header) = read_dataset(&prefix).unwrap();
        assert_eq!(back, ds);
        assert_eq!(header.truncated_viewers, vec![7]);
    }

    #[test]
    fn inconsistent_action_rejected() {
        let ds = ExperimentDataset {
            sessions: vec![log(0, &[1.0], &[0], &[0])],
            assignments: vec![1],
            p_nominal: 0.5,
            p_actual: 0.5,
            holdout_sessions: vec![],
        };
        assert!(ds.validate().is_err());
    }

    #[test]
    fn out_of_order_steps_rejected() {
        let text = "{\"viewer_id\":1,\"step_index\":0,\"creator_id\":0,\"action\":1,\"reward\":1.0,\"cumulative_watch\":0.0}\n\
                    {\"viewer_id\":1,\"step_index\":2,\"creator_id\":0,\"action\":1,\"reward\":1.0,\"cumulative_watch\":1.0}\n";
        let mut r = SessionReader::new(text.as_bytes(), &[]);
        assert!(matches!(r.next(), Some(Err(Error::Parse { line: 2, .. }))));
    }
}
