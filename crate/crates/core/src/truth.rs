//! The data-generating model of a simulation: which variables carry signal
//! and with what coefficients.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::design::{RawDesign, WorkingDesign};
use crate::engine::generate_interactions;
use crate::error::{Error, Result};
use crate::variables::{CandidateSet, VariableId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTerm {
    pub variable: VariableId,
    pub coefficient: f64,
}

/// `Y = μ* + Σ_v β*_v X_v + ε` with `ε ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub p: usize,
    /// The support S* with its coefficients.
    pub terms: Vec<TruthTerm>,
    /// Mains the sandwich set is built from; `None` means exactly the mains
    /// that take part in some true interaction.
    #[serde(default)]
    pub tilde_mains: Option<Vec<usize>>,
    #[serde(default)]
    pub intercept: f64,
    pub sigma: f64,
}

impl TruthSpec {
    pub fn new(p: usize, terms: Vec<(VariableId, f64)>, sigma: f64) -> Result<Self> {
        let spec = Self {
            p,
            terms: terms
                .into_iter()
                .map(|(variable, coefficient)| TruthTerm { variable, coefficient })
                .collect(),
            tilde_mains: None,
            intercept: 0.0,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that indices are in range, the support has no duplicates, every
    /// true interaction's mains are themselves true mains, and the chosen
    /// tilde set sits between the interacting mains and the true mains.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if t.variable.max_member() > self.p {
                return Err(Error::InvalidVariable {
                    variable: t.variable.clone(),
                    index: t.variable.max_member(),
                    p: self.p,
                });
            }
            if !seen.insert(t.variable.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate term {}", t.variable)));
            }
            if !t.coefficient.is_finite() {
                return Err(Error::InvalidConfig(format!("coefficient of {} is not finite", t.variable)));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        let mains: BTreeSet<usize> = self.mains().iter().map(|v| v.members()[0]).collect();
        let inter = self.interacting_mains();
        if let Some(j) = inter.iter().find(|j| !mains.contains(j)) {
            return Err(Error::InvalidConfig(format!(
                "main {j} takes part in a true interaction but is not a true main effect"
            )));
        }
        let tilde: BTreeSet<usize> = self.tilde().into_iter().collect();
        if !inter.is_subset(&tilde) || !tilde.is_subset(&mains) {
            return Err(Error::InvalidConfig(
                "tilde mains must contain the interacting mains and lie within the true mains".into(),
            ));
        }
        Ok(())
    }

    pub fn support(&self) -> Vec<VariableId> {
        self.terms.iter().map(|t| t.variable.clone()).collect()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coefficient).collect()
    }

    /// S*₁.
    pub fn mains(&self) -> Vec<VariableId> {
        self.terms.iter().filter(|t| t.variable.is_main()).map(|t| t.variable.clone()).collect()
    }

    /// S*₂ (every higher-order term).
    pub fn interactions(&self) -> Vec<VariableId> {
        self.terms.iter().filter(|t| !t.variable.is_main()).map(|t| t.variable.clone()).collect()
    }

    /// I*₁: mains appearing in some true interaction.
    pub fn interacting_mains(&self) -> BTreeSet<usize> {
        self.interactions().iter().flat_map(|v| v.members().to_vec()).collect()
    }

    /// S̃*₁ as 1-based column indices, ascending.
    pub fn tilde(&self) -> Vec<usize> {
        match &self.tilde_mains {
            Some(t) => {
                let mut t = t.clone();
                t.sort_unstable();
                t.dedup();
                t
            }
            None => self.interacting_mains().into_iter().collect(),
        }
    }

    /// Pairwise interactions among the tilde mains.
    pub fn tilde_interactions(&self) -> Vec<VariableId> {
        let mains: Vec<VariableId> = self.tilde().into_iter().map(VariableId::main).collect();
        generate_interactions(&mains, 2)
    }

    /// C̃*: all mains plus the pairwise interactions among the tilde mains.
    pub fn sandwich_set(&self) -> CandidateSet {
        let mut c = CandidateSet::mains(self.p);
        for v in self.tilde_interactions() {
            c.push(v).expect("tilde mains are within p");
        }
        c
    }

    /// Signal at one raw row, interactions as plain products of raw values.
    pub fn signal_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|t| t.coefficient * t.variable.members().iter().map(|&j| row[j - 1]).product::<f64>())
                .sum::<f64>()
    }

    /// Signal at every row of `raw` (raw products).
    pub fn signal(&self, raw: &RawDesign) -> Result<Vec<f64>> {
        if raw.p() != self.p {
            return Err(Error::InvalidDesign(format!("design has {} columns, model expects {}", raw.p(), self.p)));
        }
        let mut f = vec![self.intercept; raw.n()];
        for t in &self.terms {
            let mut col = vec![t.coefficient; raw.n()];
            for &j in t.variable.members() {
                for (c, x) in col.iter_mut().zip(raw.column(j - 1)) {
                    *c *= x;
                }
            }
            for (fi, c) in f.iter_mut().zip(&col) {
                *fi += c;
            }
        }
        Ok(f)
    }

    /// Signal on the columns of a working design (which must contain S*).
    /// Centered, so it omits the intercept.
    pub fn signal_on(&self, design: &WorkingDesign) -> Result<Vec<f64>> {
        let mut f = vec![0.0; design.n()];
        for t in &self.terms {
            let j = design
                .candidates()
                .position(&t.variable)
                .ok_or_else(|| Error::InvalidDesign(format!("design lacks true variable {}", t.variable)))?;
            for (fi, x) in f.iter_mut().zip(design.column(j)) {
                *fi += t.coefficient * x;
            }
        }
        Ok(f)
    }

    /// (false positive, false negative) counts of `selected` against the
    /// support, split into (mains, interactions).
    pub fn errors(&self, selected: &[VariableId]) -> SelectionErrors {
        let truth: BTreeSet<&VariableId> = self.terms.iter().map(|t| &t.variable).collect();
        let chosen: BTreeSet<&VariableId> = selected.iter().collect();
        let mut e = SelectionErrors::default();
        for v in chosen.difference(&truth) {
            if v.is_main() {
                e.fp_main += 1;
            } else {
                e.fp_inter += 1;
            }
        }
        for v in truth.difference(&chosen) {
            if v.is_main() {
                e.fn_main += 1;
            } else {
                e.fn_inter += 1;
            }
        }
        e
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionErrors {
    pub fp_main: usize,
    pub fn_main: usize,
    pub fp_inter: usize,
    pub fn_inter: usize,
}
