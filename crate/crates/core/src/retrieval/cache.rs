use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One cached retrieval result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub query_id: usize,
    pub answer_pair_ids: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn write_cache(entries: &[CacheEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_cache(reader: impl BufRead) -> Result<Vec<CacheEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if e.answer_pair_ids.len() != e.scores.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "answer_pair_ids and scores differ in length".into(),
            });
        }
        out.push(e);
    }
    Ok(out)
}
