//! Attribute subgroups (spatial / non-spatial, animacy, perceptual, size).
//!
//! Bundled lists hold one attribute question per line and are matched to a
//! rating table by normalized question text. The non-spatial group is the
//! complement of the spatial group within the table, so the two always
//! partition the attribute set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ratings::RatingTable;
use crate::error::{Error, Result};

const SPATIAL: &str = include_str!("../../data/subgroups/spatial.txt");
const NON_SPATIAL: &str = include_str!("../../data/subgroups/non_spatial.txt");
const ANIMACY: &str = include_str!("../../data/subgroups/animacy.txt");
const PERCEPTUAL: &str = include_str!("../../data/subgroups/perceptual.txt");
const SIZE: &str = include_str!("../../data/subgroups/size.txt");

pub const BUNDLED_GROUPS: [&str; 5] = ["spatial", "non_spatial", "animacy", "perceptual", "size"];

/// Questions of a bundled group, in file order.
pub fn bundled_questions(name: &str) -> Option<Vec<&'static str>> {
    let text = match name {
        "spatial" => SPATIAL,
        "non_spatial" => NON_SPATIAL,
        "animacy" => ANIMACY,
        "perceptual" => PERCEPTUAL,
        "size" => SIZE,
        _ => return None,
    };
    Some(parse_lines(text))
}

fn parse_lines(text: &str) -> Vec<&str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Every bundled question (spatial then non-spatial), without duplicates.
pub fn all_bundled_questions() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = parse_lines(SPATIAL);
    out.extend(parse_lines(NON_SPATIAL));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupDef {
    pub name: String,
    /// Sorted attribute ids.
    pub members: Vec<usize>,
}

/// A resolved subgroup plus the listed questions absent from the table.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub group: SubgroupDef,
    pub unmatched: Vec<String>,
}

impl SubgroupDef {
    pub fn new(name: impl Into<String>, mut members: Vec<usize>, m: usize) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if let Some(bad) = members.iter().find(|&&a| a >= m) {
            return Err(Error::Subgroup(format!("attribute id {bad} out of range (m = {m})")));
        }
        Ok(SubgroupDef { name: name.into(), members })
    }

    pub fn contains(&self, attribute: usize) -> bool {
        self.members.binary_search(&attribute).is_ok()
    }

    /// The remaining attributes of the table.
    pub fn complement(&self, m: usize) -> SubgroupDef {
        SubgroupDef {
            name: format!("not_{}", self.name),
            members: (0..m).filter(|a| !self.contains(*a)).collect(),
        }
    }

    /// Resolves a bundled group against the table.
    pub fn bundled(name: &str, table: &RatingTable) -> Result<Resolved> {
        if name == "non_spatial" {
            let spatial = Self::bundled("spatial", table)?;
            let mut group = spatial.group.complement(table.m());
            group.name = "non_spatial".into();
            let unmatched = bundled_questions("non_spatial")
                .unwrap()
                .into_iter()
                .filter(|q| table.attribute_by_question(q).is_none())
                .map(str::to_string)
                .collect();
            return Ok(Resolved { group, unmatched });
        }
        let questions = bundled_questions(name)
            .ok_or_else(|| Error::Subgroup(format!("unknown bundled group {name:?}")))?;
        Ok(Self::from_questions(name, &questions, table))
    }

    /// Custom group read from a file with one question per line.
    pub fn from_file(name: &str, path: impl AsRef<Path>, table: &RatingTable) -> Result<Resolved> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_questions(name, &parse_lines(&text), table))
    }

    pub fn from_questions(name: &str, questions: &[&str], table: &RatingTable) -> Resolved {
        let mut members = Vec::new();
        let mut unmatched = Vec::new();
        for q in questions {
            match table.attribute_by_question(q) {
                Some(a) => members.push(a.id),
                None => unmatched.push(q.to_string()),
            }
        }
        members.sort_unstable();
        members.dedup();
        Resolved {
            group: SubgroupDef { name: name.to_string(), members },
            unmatched,
        }
    }
}

/// Checks that `a` and `b` are disjoint and together cover `0..m`.
pub fn is_partition(a: &SubgroupDef, b: &SubgroupDef, m: usize) -> bool {
    let mut seen = vec![0u8; m];
    for &x in a.members.iter().chain(&b.members) {
        if x >= m {
            return false;
        }
        seen[x] += 1;
    }
    seen.iter().all(|&c| c == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize_question, Stimulus};

    #[test]
    fn bundled_lists_are_disjoint_and_cover_subgroups() {
        let spatial: Vec<String> = bundled_questions("spatial").unwrap().iter().map(|q| normalize_question(q)).collect();
        let non: Vec<String> = bundled_questions("non_spatial").unwrap().iter().map(|q| normalize_question(q)).collect();
        assert_eq!(spatial.len(), 123);
        assert_eq!(non.len(), 104);
        assert!(spatial.iter().all(|q| !non.contains(q)));
        for g in ["animacy", "perceptual", "size"] {
            for q in bundled_questions(g).unwrap() {
                let k = normalize_question(q);
                assert!(spatial.contains(&k) || non.contains(&k), "{q}");
            }
        }
        assert_eq!(bundled_questions("animacy").unwrap().len(), 26);
        assert_eq!(bundled_questions("size").unwrap().len(), 7);
        assert_eq!(bundled_questions("perceptual").unwrap().len(), 9);
    }

    #[test]
    fn spatial_and_non_spatial_partition_any_table() {
        let questions = vec![
            "Is it made of metal?".to_string(),
            "Is it an animal?".to_string(),
            "Something not in any list".to_string(),
        ];
        let table = RatingTable::new(Stimulus::from_texts(["a"]), questions, vec![1, 2, 3]).unwrap();
        let s = SubgroupDef::bundled("spatial", &table).unwrap().group;
        let n = SubgroupDef::bundled("non_spatial", &table).unwrap().group;
        assert_eq!(s.members, vec![0]);
        assert_eq!(n.members, vec![1, 2]);
        assert!(is_partition(&s, &n, 3));
    }

    #[test]
    fn members_must_be_attribute_ids() {
        assert!(SubgroupDef::new("custom", vec![0, 5], 3).is_err());
        let g = SubgroupDef::new("custom", vec![2, 0, 2], 3).unwrap();
        assert_eq!(g.members, vec![0, 2]);
        assert_eq!(g.complement(3).members, vec![1]);
    }
}
