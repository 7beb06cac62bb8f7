use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{validate_stimuli, Stimulus};
use crate::error::{Error, Result};

pub const MIN_RATING: u8 = 1;
pub const MAX_RATING: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: usize,
    pub question: String,
}

/// Stimuli x attributes matrix of integer ratings in 1..=5.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    stimuli: Vec<Stimulus>,
    attributes: Vec<Attribute>,
    /// Row-major, `stimuli.len() x attributes.len()`.
    ratings: Vec<u8>,
}

impl RatingTable {
    pub fn new(stimuli: Vec<Stimulus>, questions: Vec<String>, ratings: Vec<u8>) -> Result<Self> {
        validate_stimuli(&stimuli)?;
        let m = questions.len();
        if ratings.len() != stimuli.len() * m {
            return Err(Error::Dimension(format!(
                "{} ratings for {} stimuli x {m} attributes",
                ratings.len(),
                stimuli.len()
            )));
        }
        if let Some(pos) = ratings.iter().position(|r| !(MIN_RATING..=MAX_RATING).contains(r)) {
            return Err(Error::Rating {
                line: pos / m.max(1) + 2,
                column: pos % m.max(1) + 2,
                message: format!("rating {} outside 1..5", ratings[pos]),
            });
        }
        let attributes = questions
            .into_iter()
            .enumerate()
            .map(|(id, question)| Attribute { id, question })
            .collect();
        Ok(RatingTable { stimuli, attributes, ratings })
    }

    pub fn n(&self) -> usize {
        self.stimuli.len()
    }

    pub fn m(&self) -> usize {
        self.attributes.len()
    }

    pub fn stimuli(&self) -> &[Stimulus] {
        &self.stimuli
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn get(&self, stimulus: usize, attribute: usize) -> u8 {
        self.ratings[stimulus * self.m() + attribute]
    }

    /// `Y_j`: ratings of attribute `j` over all stimuli, as reals.
    pub fn column(&self, attribute: usize) -> Vec<f64> {
        (0..self.n()).map(|i| f64::from(self.get(i, attribute))).collect()
    }

    pub fn attribute_by_question(&self, question: &str) -> Option<&Attribute> {
        let key = normalize_question(question);
        self.attributes
            .iter()
            .find(|a| normalize_question(&a.question) == key)
    }

    /// For each stimulus text in `order`, the matching row of this table.
    pub fn rows_for(&self, order: &[Stimulus]) -> Result<Vec<usize>> {
        let index: BTreeMap<&str, usize> = self
            .stimuli
            .iter()
            .map(|s| (s.text.as_str(), s.id))
            .collect();
        order
            .iter()
            .map(|s| {
                index.get(s.text.as_str()).copied().ok_or_else(|| {
                    Error::Manifest(format!("stimulus {:?} has no ratings", s.text))
                })
            })
            .collect()
    }

    /// Ratings of the given stimuli (by row of this table), in that order.
    pub fn subset(&self, rows: &[usize]) -> Result<RatingTable> {
        let stimuli = Stimulus::from_texts(rows.iter().map(|&r| self.stimuli[r].text.clone()));
        let mut ratings = Vec::with_capacity(rows.len() * self.m());
        for &r in rows {
            ratings.extend_from_slice(&self.ratings[r * self.m()..(r + 1) * self.m()]);
        }
        RatingTable::new(
            stimuli,
            self.attributes.iter().map(|a| a.question.clone()).collect(),
            ratings,
        )
    }

    /// Writes the CSV form read by [`load_ratings`].
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["stimulus".to_string()];
        header.extend(self.attributes.iter().map(|a| a.question.clone()));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for s in &self.stimuli {
            let mut rec = vec![s.text.clone()];
            rec.extend((0..self.m()).map(|j| self.get(s.id, j).to_string()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Case-, whitespace- and trailing-punctuation-insensitive key for matching
/// attribute questions across sources.
pub fn normalize_question(q: &str) -> String {
    q.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(['?', '.'])
        .trim()
        .to_lowercase()
}

/// Parses a ratings CSV: the header holds a label cell followed by one
/// question per attribute; each subsequent row holds the stimulus text and
/// its integer ratings.
pub fn load_ratings(path: impl AsRef<Path>) -> Result<RatingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text)
}

pub fn parse_ratings(text: &str) -> Result<RatingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| rating_err(1, 1, e.to_string()))?,
        None => {
            return Err(Error::Rating {
                line: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    let questions: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if questions.is_empty() {
        return Err(rating_err(1, 2, "no attribute columns".into()));
    }
    let m = questions.len();
    let mut seen = BTreeSet::new();
    let mut texts = Vec::new();
    let mut ratings = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| rating_err(line, 1, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != m + 1 {
            return Err(rating_err(
                line,
                rec.len().min(m + 1),
                format!("ragged row: {} fields, expected {}", rec.len(), m + 1),
            ));
        }
        let stim = rec[0].to_string();
        if stim.is_empty() {
            return Err(rating_err(line, 1, "empty stimulus text".into()));
        }
        if !seen.insert(stim.clone()) {
            return Err(rating_err(line, 1, format!("duplicate stimulus {stim:?}")));
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: i64 = field
                .parse()
                .map_err(|_| rating_err(line, j + 2, format!("non-integer rating {field:?}")))?;
            if !(i64::from(MIN_RATING)..=i64::from(MAX_RATING)).contains(&v) {
                return Err(rating_err(line, j + 2, format!("rating {v} outside 1..5")));
            }
            ratings.push(v as u8);
        }
        texts.push(stim);
    }
    RatingTable::new(Stimulus::from_texts(texts), questions, ratings)
}

fn rating_err(line: usize, column: usize, message: String) -> Error {
    Error::Rating { line, column, message }
}
