use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, FeatureBundle};

/// How subjects are divided between training and testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitRule {
    /// The `k` smallest subject ids train, the rest test.
    FirstSubjects(usize),
    /// Odd subject ids train, even ones test.
    OddSubjects,
    /// Listed subjects train; the test side is the listed test subjects, or
    /// every other subject when `test` is `None`.
    Explicit {
        train: Vec<u32>,
        test: Option<Vec<u32>>,
    },
    /// Every way of choosing `k` training subjects.
    AllKOfN(usize),
}

impl SplitRule {
    pub fn first_five() -> Self {
        SplitRule::FirstSubjects(5)
    }
}

/// A train/test division by subject, with the sample indices it induces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Training and test subject ids of one split.
pub type SubjectPair = (Vec<u32>, Vec<u32>);

/// Subject-level splits from a rule; a pure function of its inputs.
pub fn subject_splits(subjects: &[u32], rule: &SplitRule) -> Result<Vec<SubjectPair>, DataError> {
    let all: Vec<u32> = subjects
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let complement = |train: &[u32]| {
        all.iter()
            .copied()
            .filter(|s| !train.contains(s))
            .collect::<Vec<_>>()
    };
    Ok(match rule {
        SplitRule::FirstSubjects(k) => {
            let train: Vec<u32> = all.iter().copied().take(*k).collect();
            let test = complement(&train);
            vec![(train, test)]
        }
        SplitRule::OddSubjects => {
            let train: Vec<u32> = all.iter().copied().filter(|s| s % 2 == 1).collect();
            let test = complement(&train);
            vec![(train, test)]
        }
        SplitRule::Explicit { train, test } => {
            for s in train.iter().chain(test.iter().flatten()) {
                if !all.contains(s) {
                    return Err(DataError::UnknownSubject(*s));
                }
            }
            let mut tr = train.clone();
            tr.sort_unstable();
            tr.dedup();
            let te = match test {
                Some(t) => {
                    let mut t = t.clone();
                    t.sort_unstable();
                    t.dedup();
                    t
                }
                None => complement(&tr),
            };
            vec![(tr, te)]
        }
        SplitRule::AllKOfN(k) => combinations(all.len(), *k)
            .into_iter()
            .map(|idx| {
                let train: Vec<u32> = idx.iter().map(|&i| all[i]).collect();
                let test = complement(&train);
                (train, test)
            })
            .collect(),
    })
}

/// All `k`-element index subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

pub fn make_split(bundle: &FeatureBundle, rule: &SplitRule) -> Result<Vec<Split>, DataError> {
    let subjects = bundle.subjects();
    Ok(subject_splits(&subjects, rule)?
        .into_iter()
        .map(|(train_subjects, test_subjects)| {
            let pick = |side: &[u32]| {
                subjects
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| side.contains(s))
                    .map(|(i, _)| i)
                    .collect::<Vec<_>>()
            };
            Split {
                train: pick(&train_subjects),
                test: pick(&test_subjects),
                train_subjects,
                test_subjects,
            }
        })
        .collect())
}

/// Split file: a `[train]` section and a `[test]` section, one subject id per
/// line.
pub fn write_split_file(
    train: &[u32],
    test: &[u32],
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let mut s = String::from("[train]\n");
    for id in train {
        let _ = writeln!(s, "{id}");
    }
    s.push_str("[test]\n");
    for id in test {
        let _ = writeln!(s, "{id}");
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| DataError::io(path, e))
}

pub fn read_split_file(path: impl AsRef<Path>) -> Result<SplitRule, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut side: Option<bool> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| DataError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        };
        match line {
            "[train]" => side = Some(true),
            "[test]" => side = Some(false),
            _ => {
                let id: u32 = line
                    .parse()
                    .map_err(|_| err(format!("'{line}' is not a subject id")))?;
                match side {
                    Some(true) => train.push(id),
                    Some(false) => test.push(id),
                    None => return Err(err("subject id before [train]/[test] header".into())),
                }
            }
        }
    }
    Ok(SplitRule::Explicit {
        train,
        test: Some(test),
    })
}
