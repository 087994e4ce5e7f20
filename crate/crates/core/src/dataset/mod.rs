//! CI execution log data model.
//!
//! A dataset is a flat CSV of `(cycle_id, target, status, duration_ms)` rows.
//! Loading groups rows into cycles, validates them, and keeps the raw status
//! so nothing is lost; consumers work on [`Verdict`]s.

mod synth;
mod transitions;

pub use synth::{generate_synthetic, Scenario, ScenarioSpec};
pub use transitions::{classify_sequence, label_transitions, TransitionKind, TransitionLabel, TransitionLabels};

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: expected `cycle_id,target,status,duration_ms`, found `{0}`")]
    Header(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown status `{status}`")]
    UnknownStatus { line: u64, status: String },
    #[error("line {line}: duplicate record for cycle {cycle_id}, target `{target}`")]
    Duplicate {
        line: u64,
        cycle_id: u64,
        target: String,
    },
    #[error("invalid scenario parameter: {0}")]
    Parameter(String),
}

/// Status exactly as reported by the CI system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RawStatus {
    Passed,
    Failed,
    Flaky,
    Timeout,
    NoStatus,
    FailedToBuild,
}

impl RawStatus {
    pub const ALL: [RawStatus; 6] = [
        RawStatus::Passed,
        RawStatus::Failed,
        RawStatus::Flaky,
        RawStatus::Timeout,
        RawStatus::NoStatus,
        RawStatus::FailedToBuild,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RawStatus::Passed => "PASSED",
            RawStatus::Failed => "FAILED",
            RawStatus::Flaky => "FLAKY",
            RawStatus::Timeout => "TIMEOUT",
            RawStatus::NoStatus => "NO_STATUS",
            RawStatus::FailedToBuild => "FAILED_TO_BUILD",
        }
    }

    pub fn verdict(self) -> Verdict {
        effective_verdict(self)
    }
}

impl fmt::Display for RawStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RawStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RawStatus::ALL
            .into_iter()
            .find(|status| status.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Outcome used for histories, rewards and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Ignored,
}

impl Verdict {
    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }

    pub fn is_ignored(self) -> bool {
        self == Verdict::Ignored
    }
}

/// FLAKY counts as a pass; statuses that carry no outcome are ignored.
pub fn effective_verdict(status: RawStatus) -> Verdict {
    match status {
        RawStatus::Passed | RawStatus::Flaky => Verdict::Pass,
        RawStatus::Failed => Verdict::Fail,
        RawStatus::Timeout | RawStatus::NoStatus | RawStatus::FailedToBuild => Verdict::Ignored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    PreSubmit,
    PostSubmit,
}

impl FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre" | "pre_submit" | "pre-submit" => Ok(Pipeline::PreSubmit),
            "post" | "post_submit" | "post-submit" => Ok(Pipeline::PostSubmit),
            other => Err(format!("unknown pipeline `{other}` (expected pre or post)")),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::PreSubmit => "pre",
            Pipeline::PostSubmit => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub cycle_id: u64,
    pub target: String,
    pub status: RawStatus,
    pub duration_ms: u64,
}

impl ExecutionRecord {
    pub fn verdict(&self) -> Verdict {
        self.status.verdict()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub cycle_id: u64,
    pub records: Vec<ExecutionRecord>,
}

impl Cycle {
    /// Records whose verdict is PASS or FAIL, in recorded order.
    pub fn executed(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.records.iter().filter(|r| !r.verdict().is_ignored())
    }

    pub fn fail_count(&self) -> usize {
        self.records.iter().filter(|r| r.verdict().is_fail()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSeries {
    pub pipeline: Pipeline,
    pub cycles: Vec<Cycle>,
}

impl CycleSeries {
    /// Groups records into cycles ordered by id. Records keep their relative
    /// order within a cycle.
    pub fn from_records(pipeline: Pipeline, records: Vec<ExecutionRecord>) -> Self {
        let mut records = records;
        records.sort_by_key(|r| r.cycle_id);
        let mut cycles: Vec<Cycle> = Vec::new();
        for record in records {
            match cycles.last_mut() {
                Some(cycle) if cycle.cycle_id == record.cycle_id => cycle.records.push(record),
                _ => cycles.push(Cycle {
                    cycle_id: record.cycle_id,
                    records: vec![record],
                }),
            }
        }
        CycleSeries { pipeline, cycles }
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.cycles.iter().map(|c| c.records.len()).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(HEADER).map_err(csv_io)?;
        for record in self.cycles.iter().flat_map(|c| &c.records) {
            out.write_record([
                record.cycle_id.to_string().as_str(),
                record.target.as_str(),
                record.status.as_str(),
                record.duration_ms.to_string().as_str(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

const HEADER: [&str; 4] = ["cycle_id", "target", "status", "duration_ms"];

fn csv_io(err: csv::Error) -> DatasetError {
    DatasetError::Io(std::io::Error::other(err))
}

pub fn load_dataset(path: &Path, pipeline: Pipeline) -> Result<CycleSeries, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), pipeline)
}

pub fn read_dataset<R: Read>(reader: R, pipeline: Pipeline) -> Result<CycleSeries, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers().map_err(csv_io)?.clone();
    if header.iter().ne(HEADER) {
        return Err(DatasetError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DatasetError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |message: String| DatasetError::Malformed { line, message };
        if row.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", row.len())));
        }
        let cycle_id: u64 = row[0]
            .parse()
            .map_err(|_| malformed(format!("invalid cycle_id `{}`", &row[0])))?;
        let target = row[1].to_string();
        if target.is_empty() {
            return Err(malformed("empty target name".into()));
        }
        let status: RawStatus = row[2]
            .parse()
            .map_err(|status| DatasetError::UnknownStatus { line, status })?;
        let duration_ms: u64 = row[3]
            .parse()
            .map_err(|_| malformed(format!("invalid duration_ms `{}`", &row[3])))?;
        if !seen.insert((cycle_id, target.clone())) {
            return Err(DatasetError::Duplicate {
                line,
                cycle_id,
                target,
            });
        }
        records.push(ExecutionRecord {
            cycle_id,
            target,
            status,
            duration_ms,
        });
    }
    Ok(CycleSeries::from_records(pipeline, records))
}

/// Keeps cycles with at least `min_targets` executed records and, when
/// `require_failure` is set, at least one failure.
pub fn filter_cycles(series: &CycleSeries, min_targets: usize, require_failure: bool) -> CycleSeries {
    let cycles = series
        .cycles
        .iter()
        .filter(|cycle| {
            cycle.executed().count() >= min_targets && (!require_failure || cycle.fail_count() > 0)
        })
        .cloned()
        .collect();
    CycleSeries {
        pipeline: series.pipeline,
        cycles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(cycle_id: u64, target: &str, status: RawStatus) -> ExecutionRecord {
        ExecutionRecord {
            cycle_id,
            target: target.into(),
            status,
            duration_ms: 100,
        }
    }

    fn cycle_with(cycle_id: u64, pass: usize, fail: usize, ignored: usize) -> Vec<ExecutionRecord> {
        let mut out = Vec::new();
        for i in 0..pass {
            out.push(record(cycle_id, &format!("//p:{i}"), RawStatus::Passed));
        }
        for i in 0..fail {
            out.push(record(cycle_id, &format!("//f:{i}"), RawStatus::Failed));
        }
        for i in 0..ignored {
            out.push(record(cycle_id, &format!("//i:{i}"), RawStatus::Timeout));
        }
        out
    }

    #[test]
    fn verdict_mapping() {
        assert_eq!(effective_verdict(RawStatus::Flaky), Verdict::Pass);
        assert_eq!(effective_verdict(RawStatus::Passed), Verdict::Pass);
        assert_eq!(effective_verdict(RawStatus::Failed), Verdict::Fail);
        assert_eq!(effective_verdict(RawStatus::Timeout), Verdict::Ignored);
        assert_eq!(effective_verdict(RawStatus::NoStatus), Verdict::Ignored);
        assert_eq!(effective_verdict(RawStatus::FailedToBuild), Verdict::Ignored);
    }

    #[test]
    fn status_strings_round_trip() {
        for status in RawStatus::ALL {
            assert_eq!(status.as_str().parse::<RawStatus>(), Ok(status));
        }
        assert!("BROKEN".parse::<RawStatus>().is_err());
        assert!("passed".parse::<RawStatus>().is_err());
    }

    #[test]
    fn load_three_rows() {
        let csv = "cycle_id,target,status,duration_ms\n\
                   7,//a:t1,PASSED,10\n\
                   7,//a:t2,FAILED,20\n\
                   7,//a:t3,FLAKY,30\n";
        let series = read_dataset(csv.as_bytes(), Pipeline::PreSubmit).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series.cycles[0].cycle_id, 7);
        assert_eq!(series.cycles[0].records.len(), 3);
        assert_eq!(series.cycles[0].records[2].status, RawStatus::Flaky);
    }

    #[test]
    fn load_sorts_cycles() {
        let csv = "cycle_id,target,status,duration_ms\n\
                   9,//a:t1,PASSED,10\n\
                   2,//a:t1,FAILED,20\n\
                   9,//a:t2,PASSED,5\n";
        let series = read_dataset(csv.as_bytes(), Pipeline::PostSubmit).unwrap();
        let ids: Vec<u64> = series.cycles.iter().map(|c| c.cycle_id).collect();
        assert_eq!(ids, vec![2, 9]);
        assert_eq!(series.cycles[1].records.len(), 2);
    }

    #[test]
    fn unknown_status_names_line() {
        let csv = "cycle_id,target,status,duration_ms\n\
                   1,//a:t1,PASSED,10\n\
                   1,//a:t2,BROKEN,10\n";
        let err = read_dataset(csv.as_bytes(), Pipeline::PreSubmit).unwrap_err();
        match err {
            DatasetError::UnknownStatus { line, status } => {
                assert_eq!(line, 3);
                assert_eq!(status, "BROKEN");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let csv = "cycle_id,target,status,duration_ms\n\
                   1,//a:t1,PASSED,10\n\
                   1,//a:t1,FAILED,10\n";
        let err = read_dataset(csv.as_bytes(), Pipeline::PreSubmit).unwrap_err();
        assert!(matches!(err, DatasetError::Duplicate { line: 3, cycle_id: 1, .. }));
    }

    #[test]
    fn malformed_rows_rejected() {
        for bad in [
            "x,//a:t1,PASSED,10\n",
            "1,//a:t1,PASSED,-3\n",
            "1,//a:t1,PASSED\n",
            "1,,PASSED,4\n",
        ] {
            let csv = format!("cycle_id,target,status,duration_ms\n{bad}");
            let err = read_dataset(csv.as_bytes(), Pipeline::PreSubmit).unwrap_err();
            assert!(
                matches!(err, DatasetError::Malformed { line: 2, .. }),
                "{bad:?} -> {err}"
            );
        }
        let err = read_dataset("cycle,target\n".as_bytes(), Pipeline::PreSubmit).unwrap_err();
        assert!(matches!(err, DatasetError::Header(_)));
    }

    #[test]
    fn filter_rules() {
        let mut records = cycle_with(1, 4, 1, 0); // 5 targets
        records.extend(cycle_with(2, 10, 0, 0)); // no failure
        records.extend(cycle_with(3, 5, 1, 0)); // boundary
        records.extend(cycle_with(4, 4, 1, 3)); // ignored records do not count
        let series = CycleSeries::from_records(Pipeline::PreSubmit, records);

        let kept = filter_cycles(&series, 6, true);
        let ids: Vec<u64> = kept.cycles.iter().map(|c| c.cycle_id).collect();
        assert_eq!(ids, vec![3]);

        let kept = filter_cycles(&series, 6, false);
        let ids: Vec<u64> = kept.cycles.iter().map(|c| c.cycle_id).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn filter_is_idempotent_and_empty_is_ok() {
        let series = CycleSeries::from_records(Pipeline::PreSubmit, cycle_with(1, 2, 0, 0));
        let once = filter_cycles(&series, 6, true);
        assert!(once.is_empty());
        assert_eq!(filter_cycles(&once, 6, true), once);
    }

    #[test]
    fn csv_round_trip() {
        let mut records = cycle_with(1, 3, 1, 1);
        records.extend(cycle_with(4, 2, 2, 0));
        let series = CycleSeries::from_records(Pipeline::PreSubmit, records);
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), Pipeline::PreSubmit).unwrap();
        assert_eq!(back, series);
    }
}
