//! ATC / ICD-10 code structure and category multi-hot encodings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, NodeKind, Result};

/// The five nested prefixes of a 7-character ATC code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtcLevels {
    pub levels: [String; 5],
}

/// Chapter letter and 3-character category of an ICD-10 code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcdLevels {
    pub level1: String,
    pub level2: String,
}

const ATC_PREFIX_LENS: [usize; 5] = [1, 3, 4, 5, 7];

pub fn parse_atc(code: &str) -> Result<AtcLevels> {
    let b = code.as_bytes();
    let upper = |c: u8| c.is_ascii_uppercase();
    let digit = |c: u8| c.is_ascii_digit();
    let ok = b.len() == 7
        && upper(b[0])
        && digit(b[1])
        && digit(b[2])
        && upper(b[3])
        && upper(b[4])
        && digit(b[5])
        && digit(b[6]);
    if !ok {
        return Err(Error::MalformedAtc(code.to_owned()));
    }
    Ok(AtcLevels {
        levels: ATC_PREFIX_LENS.map(|n| code[..n].to_owned()),
    })
}

pub fn parse_icd10(code: &str) -> Result<IcdLevels> {
    let b = code.as_bytes();
    if b.len() < 3 || !b[0].is_ascii_uppercase() || !b[1].is_ascii_digit() || !b[2].is_ascii_digit() {
        return Err(Error::MalformedIcd(code.to_owned()));
    }
    Ok(IcdLevels {
        level1: code[..1].to_owned(),
        level2: code[..3].to_owned(),
    })
}

/// The 3-character disease class used for splitting.
pub fn disease_class(code: &str) -> Result<String> {
    parse_icd10(code).map(|l| l.level2)
}

/// Level strings of a code under its kind's hierarchy.
pub fn code_levels(kind: NodeKind, code: &str) -> Result<Vec<String>> {
    match kind {
        NodeKind::Drug => Ok(parse_atc(code)?.levels.to_vec()),
        NodeKind::Disease => {
            let l = parse_icd10(code)?;
            Ok(vec![l.level1, l.level2])
        }
    }
}

/// Per-level vocabularies of observed level values. The encoding of a code is
/// the concatenation of one one-hot block per level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEncoder {
    pub kind: NodeKind,
    levels: Vec<Vec<String>>,
}

impl CategoryEncoder {
    /// Collects the distinct values at each level, sorted, from `codes`.
    pub fn fit<I, S>(kind: NodeKind, codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let depth = match kind {
            NodeKind::Drug => 5,
            NodeKind::Disease => 2,
        };
        let mut sets = vec![BTreeSet::new(); depth];
        for code in codes {
            for (set, value) in sets.iter_mut().zip(code_levels(kind, code.as_ref())?) {
                set.insert(value);
            }
        }
        Ok(CategoryEncoder {
            kind,
            levels: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Positions of the ones in the multi-hot encoding of `code`.
    pub fn hot_indices(&self, code: &str) -> Result<Vec<usize>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.depth());
        for (level, (values, v)) in self.levels.iter().zip(code_levels(self.kind, code)?).enumerate() {
            let pos = values.binary_search(&v).map_err(|_| Error::UnseenLevel {
                kind: self.kind,
                level: level + 1,
                value: v.clone(),
            })?;
            out.push(offset + pos);
            offset += values.len();
        }
        Ok(out)
    }

    pub fn encode(&self, code: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.total_dim()];
        for i in self.hot_indices(code)? {
            v[i] = 1.0;
        }
        Ok(v)
    }
}
