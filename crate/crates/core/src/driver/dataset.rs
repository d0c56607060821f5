//! Dataset ingestion: line-delimited records with mode-consistent gold
//! targets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scoring::{Gold, Task, TestCase};

use super::DriverError;

/// On-disk record shape: `{id, query, mode, gold_answer | tests}`.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    id: String,
    query: String,
    mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tests: Option<Vec<TestCase>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Math,
    Code,
}

fn record_to_task(record: DatasetRecord, line: usize) -> Result<Task, DriverError> {
    let gold = match (record.mode, record.gold_answer, record.tests) {
        (Mode::Math, Some(answer), None) => Gold::Answer(answer),
        (Mode::Code, None, Some(tests)) if !tests.is_empty() => Gold::Tests(tests),
        (Mode::Code, None, Some(_)) => {
            return Err(DriverError::Dataset(format!(
                "line {line}: code task with empty test suite"
            )))
        }
        (mode, _, _) => {
            return Err(DriverError::Dataset(format!(
                "line {line}: {mode:?} task must carry exactly its own gold field \
                 (math: gold_answer, code: tests)"
            )))
        }
    };
    if record.id.is_empty() {
        return Err(DriverError::Dataset(format!("line {line}: empty id")));
    }
    Ok(Task {
        id: record.id,
        query: record.query,
        gold,
    })
}

/// Load and validate a line-delimited dataset file.
pub fn load_dataset(path: &Path) -> Result<Vec<Task>, DriverError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| DriverError::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let mut tasks = Vec::new();
    for (i, raw) in body.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(raw)
            .map_err(|e| DriverError::Dataset(format!("line {line}: {e}")))?;
        tasks.push(record_to_task(record, line)?);
    }
    if tasks.is_empty() {
        return Err(DriverError::Dataset(format!(
            "{} holds no records",
            path.display()
        )));
    }
    crate::scoring::check_unique_ids(&tasks).map_err(DriverError::Dataset)?;
    Ok(tasks)
}

/// Helper for fixtures and tests: write tasks in the dataset format.
pub fn write_dataset(path: &Path, tasks: &[Task]) -> Result<(), DriverError> {
    let mut out = String::new();
    for task in tasks {
        let record = match &task.gold {
            Gold::Answer(answer) => DatasetRecord {
                id: task.id.clone(),
                query: task.query.clone(),
                mode: Mode::Math,
                gold_answer: Some(answer.clone()),
                tests: None,
            },
            Gold::Tests(tests) => DatasetRecord {
                id: task.id.clone(),
                query: task.query.clone(),
                mode: Mode::Code,
                gold_answer: None,
                tests: Some(tests.clone()),
            },
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
