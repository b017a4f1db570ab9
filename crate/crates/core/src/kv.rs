//! `key = value` text files. Blank lines and `#` comments are ignored.

use std::str::FromStr;

use crate::error::{HsdaError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HsdaError::Parse {
                line: i + 1,
                msg: format!("expected key=value, found {line:?}"),
            });
        };
        out.push(Entry {
            line: i + 1,
            key: k.trim().to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn value<T: FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| HsdaError::Parse {
        line: e.line,
        msg: format!("invalid value {:?} for {}", e.value, e.key),
    })
}
