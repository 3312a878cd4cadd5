use std::fmt::Write as _;
use std::path::Path;

use super::{Corpus, Sentence};
use crate::{Error, Result};

/// Longer sentences are dropped at load time.
pub const MAX_SENTENCE_LEN: usize = 200;

/// Reads a column corpus: token in the first column, label in the last,
/// tab- or space-separated, blank lines between sentences, `-DOCSTART-`
/// lines ignored.
pub fn load_conll(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_conll(&text, path)
}

pub fn parse_conll(text: &str, path: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;

    let flush = |tokens: &mut Vec<String>, labels: &mut Vec<String>, corpus: &mut Corpus| {
        if tokens.is_empty() {
            return;
        }
        if tokens.len() > MAX_SENTENCE_LEN {
            corpus.dropped += 1;
            tokens.clear();
            labels.clear();
            return;
        }
        corpus.sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            labels: std::mem::take(labels),
        });
    };

    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut labels, &mut corpus);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split([' ', '\t']).filter(|c| !c.is_empty()).collect();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if cols.len() < 2 {
            return Err(err(format!("expected token and label columns, found {}", cols.len())));
        }
        match width {
            None => width = Some(cols.len()),
            Some(w) if w != cols.len() => {
                return Err(err(format!("ragged line: {} columns, previous lines have {w}", cols.len())));
            }
            _ => {}
        }
        tokens.push(cols[0].to_string());
        labels.push(cols[cols.len() - 1].to_string());
    }
    flush(&mut tokens, &mut labels, &mut corpus);

    if corpus.dropped > 0 {
        log::warn!(
            "{}: dropped {} sentences longer than {MAX_SENTENCE_LEN} tokens",
            path.display(),
            corpus.dropped
        );
    }
    if corpus.sentences.is_empty() {
        return Err(Error::Empty(format!("{} contains no sentences", path.display())));
    }
    Ok(corpus)
}

/// Writes `token<TAB>label` lines with a blank line after each sentence.
pub fn write_conll(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (t, l) in s.tokens.iter().zip(&s.labels) {
            let _ = writeln!(out, "{t}\t{l}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
