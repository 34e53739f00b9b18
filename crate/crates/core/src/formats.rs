//! JSON-lines file formats shared by the injector, BLEU scorer and dataset builders.

use std::collections::BTreeSet;
use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::ImageId;
use crate::error::{Error, Result};

/// One predicted caption: `{"image_id": 42, "caption": "a person riding a horse"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: ImageId,
    pub caption: String,
}

/// Parse JSON lines; blank lines are skipped. Errors carry the absolute byte offset.
pub fn parse_jsonl<T: DeserializeOwned>(label: &str, bytes: &[u8]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut start = 0;
    for line in bytes.split(|&b| b == b'\n') {
        let line_start = start;
        start += line.len() + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice(line) {
            Ok(v) => out.push(v),
            Err(e) => {
                let inner = Error::parse(label, line, e);
                let Error::Parse { offset, message, .. } = inner else {
                    unreachable!()
                };
                let absolute = line_start + offset;
                let line_no = bytes[..line_start].iter().filter(|&&b| b == b'\n').count() + 1;
                return Err(Error::Parse {
                    path: label.to_string(),
                    offset: absolute,
                    line: line_no,
                    column: offset + 1,
                    message,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a predictions file, rejecting duplicate image ids. Sorted by image id.
pub fn parse_predictions(label: &str, bytes: &[u8]) -> Result<Vec<Prediction>> {
    let mut preds: Vec<Prediction> = parse_jsonl(label, bytes)?;
    let mut seen = BTreeSet::new();
    let dups: Vec<u64> = preds
        .iter()
        .filter(|p| !seen.insert(p.image_id))
        .map(|p| p.image_id.0)
        .collect();
    if !dups.is_empty() {
        return Err(Error::integrity(
            format!("{label}: duplicate image ids in predictions"),
            dups,
        ));
    }
    preds.sort_by_key(|p| p.image_id);
    Ok(preds)
}
