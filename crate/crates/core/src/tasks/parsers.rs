//! Parsers from raw dataset files to episodes.
//!
//! bAbI: `N <statement>` or `N <question>\t<answer>[\t<supporting ids>]`,
//! with `N` restarting at 1 for every story.
//!
//! fbdialog: `N <text>[\t<labels>[\t<reward>[\t<candidates>]]]`, `|`
//! separated lists, `N` restarting at 1 for every episode.
//!
//! SQuAD v1.1 JSON. Answer character offsets are never carried over.

use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::episode::{Episode, Turn};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed SQuAD document: {0}")]
    Squad(#[from] serde_json::Error),
}

fn line_err(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::Line { line, reason: reason.into() }
}

/// Splits `N rest` into its line number and remainder.
fn numbered(raw: &str, lineno: usize) -> Result<(u64, &str), ParseError> {
    let (num, rest) = match raw.find(' ') {
        Some(i) => (&raw[..i], &raw[i + 1..]),
        None => (raw, ""),
    };
    let n = num
        .parse::<u64>()
        .map_err(|_| line_err(lineno, format!("expected a leading line number, found {num:?}")))?;
    Ok((n, rest))
}

fn split_list(field: &str) -> Vec<String> {
    field.split('|').map(|s| s.to_string()).collect()
}

/// Tracks line numbering and episode boundaries shared by both line formats.
struct EpisodeCursor {
    source: String,
    last: Option<u64>,
    turns: Vec<Turn>,
    episodes: Vec<Episode>,
}

impl EpisodeCursor {
    fn new(source: &str) -> Self {
        EpisodeCursor { source: source.to_string(), last: None, turns: Vec::new(), episodes: Vec::new() }
    }

    /// Returns true when `n` starts a new episode.
    fn advance(&mut self, n: u64, lineno: usize) -> Result<bool, ParseError> {
        let restart = n == 1;
        match self.last {
            Some(prev) if !restart && n <= prev => {
                return Err(line_err(lineno, format!("line number {n} does not follow {prev}")));
            }
            _ => {}
        }
        if restart {
            self.close();
        }
        self.last = Some(n);
        Ok(restart)
    }

    fn close(&mut self) {
        if !self.turns.is_empty() {
            let turns = std::mem::take(&mut self.turns);
            self.episodes.push(Episode::new(self.source.clone(), turns));
        }
    }

    fn finish(mut self) -> Vec<Episode> {
        self.close();
        self.episodes
    }
}

/// Parses a bAbI story file. Each question becomes one turn whose text is
/// the statements seen since the previous question followed by the
/// question. Stories without questions produce no episode.
pub fn parse_babi<R: BufRead>(input: R, source_task: &str) -> Result<Vec<Episode>, ParseError> {
    let mut cursor = EpisodeCursor::new(source_task);
    let mut context: Vec<String> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (n, rest) = numbered(line, lineno)?;
        if cursor.advance(n, lineno)? {
            context.clear();
        }
        if let Some((question, tail)) = rest.split_once('\t') {
            let mut fields = tail.split('\t');
            let answer = fields.next().unwrap_or("").trim();
            if answer.is_empty() {
                return Err(line_err(lineno, "question line without an answer"));
            }
            if let Some(support) = fields.next() {
                for id in support.split_whitespace() {
                    id.parse::<u64>()
                        .map_err(|_| line_err(lineno, format!("bad supporting fact id {id:?}")))?;
                }
            }
            context.push(question.trim().to_string());
            let text = std::mem::take(&mut context).join("\n");
            cursor.turns.push(Turn::new(text).with_labels(split_list(answer)));
        } else {
            context.push(rest.trim().to_string());
        }
    }
    Ok(cursor.finish())
}

/// Parses the generic fixed-log dialog format.
pub fn parse_fbdialog<R: BufRead>(input: R, source_task: &str) -> Result<Vec<Episode>, ParseError> {
    let mut cursor = EpisodeCursor::new(source_task);
    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (n, rest) = numbered(line, lineno)?;
        let fields: Vec<&str> = rest.split('\t').collect();
        if fields.len() > 4 {
            return Err(line_err(lineno, format!("expected at most 4 tab-separated fields, found {}", fields.len())));
        }
        cursor.advance(n, lineno)?;
        let mut turn = Turn::new(fields[0]);
        if let Some(labels) = fields.get(1).filter(|f| !f.is_empty()) {
            turn.labels = split_list(labels);
        }
        if let Some(reward) = fields.get(2).filter(|f| !f.trim().is_empty()) {
            let r = reward
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|r| r.is_finite())
                .ok_or_else(|| line_err(lineno, format!("bad reward {reward:?}")))?;
            turn.reward = Some(r);
        }
        if let Some(cands) = fields.get(3).filter(|f| !f.is_empty()) {
            turn.label_candidates = Some(split_list(cands));
        }
        cursor.turns.push(turn);
    }
    Ok(cursor.finish())
}

#[derive(Deserialize)]
struct SquadDocument {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    question: String,
    answers: Vec<SquadAnswer>,
}

// `answer_start` is present in the source but deliberately not read into
// any field.
#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

/// One single-turn episode per question; labels are the distinct answer
/// strings in annotator order.
pub fn parse_squad(document: &str, source_task: &str) -> Result<Vec<Episode>, ParseError> {
    let doc: SquadDocument = serde_json::from_str(document)?;
    let mut episodes = Vec::new();
    for article in doc.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let mut labels: Vec<String> = Vec::new();
                for a in qa.answers {
                    if !labels.contains(&a.text) {
                        labels.push(a.text);
                    }
                }
                let text = format!("{}\n{}", para.context, qa.question);
                episodes.push(Episode::new(source_task, vec![Turn::new(text).with_labels(labels)]));
            }
        }
    }
    Ok(episodes)
}

/// Distinct labels across `episodes`, in order of first appearance.
pub fn answer_vocabulary<'a>(episodes: impl IntoIterator<Item = &'a Episode>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for ep in episodes {
        for turn in &ep.turns {
            for l in &turn.labels {
                if seen.insert(l.clone()) {
                    out.push(l.clone());
                }
            }
        }
    }
    out
}
