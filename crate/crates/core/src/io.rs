//! Small helpers for the JSON-lines and plain term-list files shared by the stages.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::tokenize;
use crate::error::{Error, Result};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = open(path)?;
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Normalizes one line of a seed or lexicon file: tokenized, underscore-joined.
pub fn normalize_term(line: &str) -> Option<String> {
    let tokens = tokenize(line);
    if tokens.is_empty() {
        None
    } else {
        Some(tokens.join("_"))
    }
}

/// Reads a term-list file (seed list, lexicon): one term or phrase per line,
/// `#` starts a comment line.
pub fn read_term_list(path: &Path) -> Result<Vec<String>> {
    let reader = open(path)?;
    let mut terms = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if let Some(term) = normalize_term(line) {
            if !terms.contains(&term) {
                terms.push(term);
            }
        }
    }
    Ok(terms)
}

pub fn write_term_list<S: AsRef<str>>(path: &Path, terms: &[S]) -> Result<()> {
    let mut out = create(path)?;
    for term in terms {
        writeln!(out, "{}", term.as_ref())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_lines_normalize_phrases() {
        assert_eq!(
            normalize_term("Marijuana Concentrates"),
            Some("marijuana_concentrates".into())
        );
        assert_eq!(normalize_term("  coke "), Some("coke".into()));
        assert_eq!(normalize_term("  "), None);
    }

    #[test]
    fn term_list_skips_comments_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seeds.txt");
        std::fs::write(&path, "# seeds\ncocaine\n\nCocaine\nblue kush\n").unwrap();
        assert_eq!(read_term_list(&path).unwrap(), vec!["cocaine", "blue_kush"]);
    }
}
