//! Flat `key = value` text files, one pair per line.
//!
//! Blank lines and lines starting with `#` are ignored. The value is
//! everything after the first `=`, trimmed.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn render<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    }
    s
}
