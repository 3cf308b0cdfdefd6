//! Variables indexed by subsets of the raw columns.
//!
//! A main effect is the singleton `{j}`; a first-order interaction is a
//! two-element set `{i, j}`. Indices are 1-based, matching how variables are
//! written in output files (`[1,2]`).

use std::cmp::Ordering;
use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonempty, sorted, duplicate-free set of 1-based column indices.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct VariableId(Vec<usize>);

impl VariableId {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::MalformedVariable("empty member set".into()));
        }
        if members.contains(&0) {
            return Err(Error::MalformedVariable(
                "column indices are 1-based".into(),
            ));
        }
        members.sort_unstable();
        let before = members.len();
        members.dedup();
        if members.len() != before {
            return Err(Error::MalformedVariable(format!(
                "duplicate members in {members:?}"
            )));
        }
        Ok(Self(members))
    }

    /// Main effect `{j}` (1-based).
    pub fn main(j: usize) -> Self {
        assert!(j >= 1, "column indices are 1-based");
        Self(vec![j])
    }

    /// Interaction `{i, j}` (1-based, `i != j`).
    pub fn pair(i: usize, j: usize) -> Self {
        assert!(i >= 1 && j >= 1 && i != j);
        Self(vec![i.min(j), i.max(j)])
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn is_main(&self) -> bool {
        self.0.len() == 1
    }

    /// Largest member; every member must be at most `p` for the variable to
    /// be valid against a design with `p` raw columns.
    pub fn max_member(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    /// All nonempty proper subsets, as variables.
    pub fn proper_subsets(&self) -> Vec<VariableId> {
        let k = self.0.len();
        let mut out = Vec::new();
        for mask in 1..(1u64 << k) - 1 {
            let members = (0..k)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| self.0[b])
                .collect();
            out.push(VariableId(members));
        }
        out
    }

    /// Splits `v` into the order-(k-1) prefix and the last main effect, the
    /// recursion used to build interaction columns. `None` for main effects.
    pub fn split_last(&self) -> Option<(VariableId, usize)> {
        if self.0.len() < 2 {
            return None;
        }
        let (last, head) = self.0.split_last().expect("nonempty");
        Some((VariableId(head.to_vec()), *last))
    }

    pub fn union(&self, other: &VariableId) -> VariableId {
        let mut m: Vec<usize> = self.0.iter().chain(other.0.iter()).copied().collect();
        m.sort_unstable();
        m.dedup();
        VariableId(m)
    }
}

impl TryFrom<Vec<usize>> for VariableId {
    type Error = Error;

    fn try_from(value: Vec<usize>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<VariableId> for Vec<usize> {
    fn from(v: VariableId) -> Self {
        v.0
    }
}

impl Ord for VariableId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for VariableId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Ordered, duplicate-free collection of candidate variables.
///
/// Iteration order is insertion order and defines the column layout of any
/// design assembled from the set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    p: usize,
    variables: IndexSet<VariableId>,
}

impl CandidateSet {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            variables: IndexSet::new(),
        }
    }

    /// `{{1}, ..., {p}}`.
    pub fn mains(p: usize) -> Self {
        Self {
            p,
            variables: (1..=p).map(VariableId::main).collect(),
        }
    }

    pub fn from_variables(p: usize, vars: impl IntoIterator<Item = VariableId>) -> Result<Self> {
        let mut set = Self::empty(p);
        for v in vars {
            if !set.push(v.clone())? {
                return Err(Error::MalformedVariable(format!(
                    "duplicate candidate {v}"
                )));
            }
        }
        Ok(set)
    }

    /// Appends `v`; returns `false` (and leaves the set unchanged) when it is
    /// already present.
    pub fn push(&mut self, v: VariableId) -> Result<bool> {
        if v.max_member() > self.p {
            return Err(Error::InvalidVariable {
                index: v.max_member(),
                variable: v,
                p: self.p,
            });
        }
        Ok(self.variables.insert(v))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn contains(&self, v: &VariableId) -> bool {
        self.variables.contains(v)
    }

    pub fn position(&self, v: &VariableId) -> Option<usize> {
        self.variables.get_index_of(v)
    }

    pub fn get(&self, index: usize) -> Option<&VariableId> {
        self.variables.get_index(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &VariableId> {
        self.variables.iter()
    }

    /// The first `len` candidates.
    pub fn prefix(&self, len: usize) -> CandidateSet {
        Self {
            p: self.p,
            variables: self.variables.iter().take(len).cloned().collect(),
        }
    }

    pub fn is_subset(&self, other: &CandidateSet) -> bool {
        self.variables.iter().all(|v| other.contains(v))
    }
}

impl<'a> IntoIterator for &'a CandidateSet {
    type Item = &'a VariableId;
    type IntoIter = indexmap::set::Iter<'a, VariableId>;

    fn into_iter(self) -> Self::IntoIter {
        self.variables.iter()
    }
}
