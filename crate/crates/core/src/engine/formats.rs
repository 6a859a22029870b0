//! Gold standards, predictions and final match files.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{escape, unescape};

/// A set of matching `(u1, u2)` entity names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pairs: HashSet<(String, String)>,
}

impl PairSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, u1: impl Into<String>, u2: impl Into<String>) -> bool {
        self.pairs.insert((u1.into(), u2.into()))
    }

    pub fn contains(&self, u1: &str, u2: &str) -> bool {
        // HashSet<(String, String)> cannot be probed with borrowed tuples.
        self.pairs.contains(&(u1.to_string(), u2.to_string()))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn intersection_len(&self, other: &PairSet) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.pairs.iter().filter(|p| large.pairs.contains(*p)).count()
    }
}

impl<A: Into<String>, B: Into<String>> FromIterator<(A, B)> for PairSet {
    fn from_iter<I: IntoIterator<Item = (A, B)>>(iter: I) -> Self {
        let mut s = PairSet::new();
        for (a, b) in iter {
            s.insert(a, b);
        }
        s
    }
}

/// Reads pairs from the first two tab-separated columns. Extra columns are
/// ignored, so both gold files and match outputs are accepted.
pub fn read_pairs<R: BufRead>(reader: R, name: &Path) -> Result<PairSet> {
    let mut out = PairSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                out.insert(unescape(a), unescape(b));
            }
            _ => {
                return Err(Error::Parse {
                    path: name.to_path_buf(),
                    line: i + 1,
                    message: "expected at least two tab-separated columns".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Exact label match used as a seed.
    Initial,
    /// Confirmed by workers.
    Labeled,
    /// Reached from a confirmed match with probability at least tau.
    Inferred,
    /// Isolated pair predicted by the classifier.
    Classified,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Initial => "initial",
            Provenance::Labeled => "labeled",
            Provenance::Inferred => "inferred",
            Provenance::Classified => "classified",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Provenance::Initial),
            "labeled" => Ok(Provenance::Labeled),
            "inferred" => Ok(Provenance::Inferred),
            "classified" => Ok(Provenance::Classified),
            other => Err(Error::Other(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMatch {
    pub u1: String,
    pub u2: String,
    pub provenance: Provenance,
    pub probability: f64,
}

/// `u1<TAB>u2<TAB>provenance<TAB>probability`, one line per match.
pub fn write_matches<W: Write>(mut w: W, matches: &[FinalMatch]) -> std::io::Result<()> {
    for m in matches {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}",
            escape(&m.u1),
            escape(&m.u2),
            m.provenance,
            m.probability
        )?;
    }
    w.flush()
}

pub fn read_matches<R: BufRead>(reader: R, name: &Path) -> Result<Vec<FinalMatch>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.to_path_buf(),
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(format!("expected 4 columns, found {}", cols.len())));
        }
        out.push(FinalMatch {
            u1: unescape(cols[0]),
            u2: unescape(cols[1]),
            provenance: cols[2].parse().map_err(|e: Error| err(e.to_string()))?,
            probability: cols[3].parse().map_err(|_| err(format!("bad probability {:?}", cols[3])))?,
        });
    }
    Ok(out)
}
