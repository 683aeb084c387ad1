use std::io::BufRead;

use super::Dialogue;
use crate::{Error, Result};

/// One JSON dialogue object per line.
pub fn to_jsonl(dialogues: &[Dialogue]) -> Result<String> {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(d)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if d.turns.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "dialogue has no turns".into(),
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn read_jsonl_str(text: &str) -> Result<Vec<Dialogue>> {
    read_jsonl(text.as_bytes())
}
