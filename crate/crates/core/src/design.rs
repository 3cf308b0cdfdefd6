//! Raw covariates, standardized working designs over candidate sets, and the
//! centered response.
//!
//! Main effects are centered and scaled to ℓ2-norm √n. An interaction column
//! is the componentwise product of its standardized order-(k-1) prefix column
//! and its last standardized main effect, centered and scaled again. Every
//! transformation is recorded in a [`ColumnTransform`] so that new rows (a
//! validation fold, a test set) can be mapped onto the same columns.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::variables::{CandidateSet, VariableId};

/// Post-centering norms below `CONSTANT_TOL * sqrt(n)` flag a degenerate column.
pub const CONSTANT_TOL: f64 = 1e-12;

/// Raw n×p covariates, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDesign {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl RawDesign {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidDesign("columns have unequal lengths".into()));
        }
        Self::from_column_major(n, p, columns.into_iter().flatten().collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidDesign("rows have unequal lengths".into()));
        }
        let mut data = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                data[j * n + i] = x;
            }
        }
        Self::from_column_major(n, p, data)
    }

    pub fn from_column_major(n: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDesign(format!("need at least 2 rows, got {n}")));
        }
        if p == 0 {
            return Err(Error::InvalidDesign("design has no columns".into()));
        }
        if data.len() != n * p {
            return Err(Error::InvalidDesign(format!(
                "expected {} values, got {}",
                n * p,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidDesign(format!(
                "non-finite entry at row {}, column {}",
                pos % n + 1,
                pos / n + 1
            )));
        }
        Ok(Self { n, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Column `j`, 0-based.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    /// The rows listed in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> RawDesign {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * self.p);
        for j in 0..self.p {
            let col = self.column(j);
            data.extend(rows.iter().map(|&i| col[i]));
        }
        RawDesign { n, p: self.p, data }
    }
}

/// Centered response; the removed mean is kept for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    values: Vec<f64>,
    mean: f64,
}

impl ResponseVector {
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDesign("non-finite response value".into()));
        }
        if raw.is_empty() {
            return Err(Error::InvalidDesign("empty response".into()));
        }
        let mean = mean(&raw);
        let values = raw.iter().map(|y| y - mean).collect();
        Ok(Self { values, mean })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The uncentered response.
    pub fn original(&self) -> Vec<f64> {
        self.values.iter().map(|v| v + self.mean).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Result<ResponseVector> {
        ResponseVector::new(rows.iter().map(|&i| self.values[i] + self.mean).collect())
    }
}

/// `x -> (x - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub center: f64,
    pub scale: f64,
}

impl Affine {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }
}

/// How a working column is produced from a raw row.
///
/// `mains[i]` standardizes member `i`; `chain[i - 1]` re-standardizes the
/// running product after multiplying in member `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub variable: VariableId,
    pub mains: Vec<Affine>,
    pub chain: Vec<Affine>,
}

impl ColumnTransform {
    /// Value of the working column at one raw row (`row` indexed 0-based by column).
    pub fn apply_row(&self, row: &[f64]) -> f64 {
        let members = self.variable.members();
        let mut z = self.mains[0].apply(row[members[0] - 1]);
        for (i, &m) in members.iter().enumerate().skip(1) {
            z = self.chain[i - 1].apply(z * self.mains[i].apply(row[m - 1]));
        }
        z
    }

    /// The working column evaluated on every row of `raw`.
    pub fn apply(&self, raw: &RawDesign) -> Vec<f64> {
        let members = self.variable.members();
        let first = raw.column(members[0] - 1);
        let mut z: Vec<f64> = first.iter().map(|&x| self.mains[0].apply(x)).collect();
        for (i, &m) in members.iter().enumerate().skip(1) {
            let col = raw.column(m - 1);
            for (zi, &x) in z.iter_mut().zip(col) {
                *zi = self.chain[i - 1].apply(*zi * self.mains[i].apply(x));
            }
        }
        z
    }

    /// Center and scale of the final standardization step.
    pub fn outer(&self) -> Affine {
        *self.chain.last().unwrap_or(&self.mains[0])
    }
}

fn mean(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    // second pass removes most of the rounding error of the first
    m + x.iter().map(|v| v - m).sum::<f64>() / n
}

/// Centers `x` in place and, when `scale` is set, rescales it to norm √n.
fn standardize_in_place(x: &mut [f64], scale: bool, v: &VariableId) -> Result<Affine> {
    let n = x.len() as f64;
    let center = mean(x);
    for xi in x.iter_mut() {
        *xi -= center;
    }
    let norm = dot(x, x).sqrt();
    if norm < CONSTANT_TOL * n.sqrt() {
        return Err(Error::ConstantColumn {
            variable: v.clone(),
            norm,
        });
    }
    let s = if scale { norm / n.sqrt() } else { 1.0 };
    if scale {
        for xi in x.iter_mut() {
            *xi /= s;
        }
    }
    Ok(Affine { center, scale: s })
}

/// Builds the working column for `v` from scratch.
pub fn build_column(design: &RawDesign, v: &VariableId) -> Result<Vec<f64>> {
    Standardizer::new(design, true).build(v).map(|(c, _)| c.to_vec())
}

/// Caches standardized main-effect columns of one raw design so interaction
/// columns can be appended cheaply.
#[derive(Debug)]
pub struct Standardizer {
    n: usize,
    p: usize,
    scale: bool,
    mains: Vec<std::result::Result<(Arc<[f64]>, Affine), f64>>,
}

impl Standardizer {
    pub fn new(design: &RawDesign, scale: bool) -> Self {
        let mains = (0..design.p())
            .map(|j| {
                let mut col = design.column(j).to_vec();
                let v = VariableId::main(j + 1);
                match standardize_in_place(&mut col, scale, &v) {
                    Ok(a) => Ok((Arc::from(col), a)),
                    Err(Error::ConstantColumn { norm, .. }) => Err(norm),
                    Err(_) => unreachable!(),
                }
            })
            .collect();
        Self {
            n: design.n(),
            p: design.p(),
            scale,
            mains,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn main(&self, j: usize) -> Result<&(Arc<[f64]>, Affine)> {
        self.mains[j - 1].as_ref().map_err(|&norm| Error::ConstantColumn {
            variable: VariableId::main(j),
            norm,
        })
    }

    /// Working column and its transform for `v`.
    pub fn build(&self, v: &VariableId) -> Result<(Arc<[f64]>, ColumnTransform)> {
        if v.max_member() > self.p {
            return Err(Error::InvalidVariable {
                variable: v.clone(),
                index: v.max_member(),
                p: self.p,
            });
        }
        let members = v.members();
        let (first, a0) = self.main(members[0])?;
        let mut mains = vec![*a0];
        if members.len() == 1 {
            return Ok((
                first.clone(),
                ColumnTransform {
                    variable: v.clone(),
                    mains,
                    chain: vec![],
                },
            ));
        }
        let mut z = first.to_vec();
        let mut chain = Vec::with_capacity(members.len() - 1);
        for (i, &m) in members.iter().enumerate().skip(1) {
            let (col, a) = self.main(m)?;
            mains.push(*a);
            for (zi, &c) in z.iter_mut().zip(col.iter()) {
                *zi *= c;
            }
            let prefix = VariableId::new(members[..=i].to_vec())?;
            chain.push(standardize_in_place(&mut z, self.scale, &prefix)?);
        }
        Ok((
            Arc::from(z),
            ColumnTransform {
                variable: v.clone(),
                mains,
                chain,
            },
        ))
    }
}

/// Standardized design over a candidate set; immutable once assembled apart
/// from appending new candidates.
#[derive(Clone, Debug)]
pub struct WorkingDesign {
    n: usize,
    candidates: CandidateSet,
    columns: Vec<Arc<[f64]>>,
    transforms: Vec<ColumnTransform>,
    /// `‖X_j‖² / n`, the coordinate-descent curvature of each column.
    curvature: Vec<f64>,
}

impl WorkingDesign {
    pub fn empty(n: usize, p: usize) -> Self {
        Self {
            n,
            candidates: CandidateSet::empty(p),
            columns: Vec::new(),
            transforms: Vec::new(),
            curvature: Vec::new(),
        }
    }

    pub fn assemble(design: &RawDesign, candidates: &CandidateSet) -> Result<Self> {
        Self::assemble_with(&Standardizer::new(design, true), candidates)
    }

    pub fn assemble_with(std: &Standardizer, candidates: &CandidateSet) -> Result<Self> {
        for v in candidates {
            if v.max_member() > std.p() {
                return Err(Error::InvalidVariable {
                    variable: v.clone(),
                    index: v.max_member(),
                    p: std.p(),
                });
            }
        }
        let mut out = Self::empty(std.n(), std.p());
        for v in candidates {
            out.append(std, v.clone())?;
        }
        Ok(out)
    }

    /// Appends `v` as the last column; existing columns are untouched.
    /// Returns `false` if `v` is already a candidate.
    pub fn append(&mut self, std: &Standardizer, v: VariableId) -> Result<bool> {
        if self.candidates.contains(&v) {
            return Ok(false);
        }
        let (col, tf) = std.build(&v)?;
        self.candidates.push(v)?;
        self.curvature.push(dot(&col, &col) / self.n as f64);
        self.columns.push(col);
        self.transforms.push(tf);
        Ok(true)
    }

    /// The design restricted to its first `len` candidates (shares storage).
    pub fn prefix(&self, len: usize) -> WorkingDesign {
        let len = len.min(self.columns.len());
        Self {
            n: self.n,
            candidates: self.candidates.prefix(len),
            columns: self.columns[..len].to_vec(),
            transforms: self.transforms[..len].to_vec(),
            curvature: self.curvature[..len].to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn variable(&self, j: usize) -> &VariableId {
        self.candidates.get(j).expect("column index in range")
    }

    pub fn curvature(&self, j: usize) -> f64 {
        self.curvature[j]
    }

    pub fn transform(&self, j: usize) -> &ColumnTransform {
        &self.transforms[j]
    }

    pub fn transforms(&self) -> &[ColumnTransform] {
        &self.transforms
    }

    pub fn column_means(&self) -> Vec<f64> {
        self.transforms.iter().map(|t| t.outer().center).collect()
    }

    pub fn column_scales(&self) -> Vec<f64> {
        self.transforms.iter().map(|t| t.outer().scale).collect()
    }

    /// Working columns for new raw rows, using the training transforms.
    pub fn transform_rows(&self, raw: &RawDesign, columns: &[usize]) -> Vec<Vec<f64>> {
        columns.iter().map(|&j| self.transforms[j].apply(raw)).collect()
    }

    /// `X_C β` for a sparse coefficient list.
    pub fn predict_sparse(&self, coefs: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(j, b) in coefs {
            for (o, &x) in out.iter_mut().zip(self.column(j)) {
                *o += b * x;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, p: usize, seed: u64) -> RawDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = (0..p)
            .map(|_| (0..n).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect())
            .collect();
        RawDesign::from_columns(cols).unwrap()
    }

    #[test]
    fn standardized_column_has_zero_mean_and_norm_sqrt_n() {
        let raw = random_design(5, 2, 1);
        let col = build_column(&raw, &VariableId::main(1)).unwrap();
        // independent two-pass oracle
        let m: f64 = col.iter().sum::<f64>() / 5.0;
        let ss: f64 = col.iter().map(|x| (x - m) * (x - m)).sum();
        assert!(m.abs() < 1e-10);
        assert!((ss.sqrt() - 5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn already_standard_column_is_unchanged() {
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let raw = RawDesign::from_columns(vec![x.clone()]).unwrap();
        let col = build_column(&raw, &VariableId::main(1)).unwrap();
        for (a, b) in col.iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_parents_give_centered_square() {
        let x = vec![0.3, -1.2, 2.0, 0.7, -0.1, 1.5];
        let raw = RawDesign::from_columns(vec![x.clone(), x.clone()]).unwrap();
        let col = build_column(&raw, &VariableId::pair(1, 2)).unwrap();
        let z = build_column(&raw, &VariableId::main(1)).unwrap();
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        let m = sq.iter().sum::<f64>() / 6.0;
        let centered: Vec<f64> = sq.iter().map(|v| v - m).collect();
        let ratio = col[0] / centered[0];
        for (a, b) in col.iter().zip(&centered) {
            assert!((a - ratio * b).abs() < 1e-12);
        }
        assert!((dot(&col, &col) - 6.0).abs() < 1e-10);
    }

    #[test]
    fn constant_column_is_an_error() {
        let raw = RawDesign::from_columns(vec![vec![2.0; 4], vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert!(matches!(
            build_column(&raw, &VariableId::main(1)),
            Err(Error::ConstantColumn { .. })
        ));
        assert!(build_column(&raw, &VariableId::pair(1, 2)).is_err());
        assert!(build_column(&raw, &VariableId::main(2)).is_ok());
    }

    #[test]
    fn non_finite_and_tiny_designs_are_rejected() {
        assert!(RawDesign::from_columns(vec![vec![1.0]]).is_err());
        assert!(RawDesign::from_columns(vec![vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn invalid_member_is_rejected() {
        let raw = random_design(6, 2, 3);
        assert!(matches!(
            build_column(&raw, &VariableId::pair(1, 3)),
            Err(Error::InvalidVariable { .. })
        ));
    }

    #[test]
    fn mains_assemble_to_standardized_matrix() {
        let raw = random_design(8, 3, 4);
        let w = WorkingDesign::assemble(&raw, &CandidateSet::mains(3)).unwrap();
        for j in 0..3 {
            assert_eq!(w.column(j), build_column(&raw, &VariableId::main(j + 1)).unwrap().as_slice());
        }
    }

    #[test]
    fn append_leaves_existing_columns_bit_identical() {
        let raw = random_design(10, 4, 5);
        let std = Standardizer::new(&raw, true);
        let mut w = WorkingDesign::assemble_with(&std, &CandidateSet::mains(4)).unwrap();
        let before: Vec<Vec<f64>> = (0..4).map(|j| w.column(j).to_vec()).collect();
        w.append(&std, VariableId::pair(2, 4)).unwrap();
        for j in 0..4 {
            assert_eq!(w.column(j), before[j].as_slice());
        }
        // recompute-from-scratch oracle
        let scratch = build_column(&raw, &VariableId::pair(2, 4)).unwrap();
        assert_eq!(w.column(4), scratch.as_slice());
    }

    #[test]
    fn transform_reproduces_training_columns() {
        let raw = random_design(12, 3, 6);
        let std = Standardizer::new(&raw, true);
        let mut c = CandidateSet::mains(3);
        c.push(VariableId::pair(1, 3)).unwrap();
        c.push(VariableId::new(vec![1, 2, 3]).unwrap()).unwrap();
        let w = WorkingDesign::assemble_with(&std, &c).unwrap();
        for j in 0..w.width() {
            let again = w.transform(j).apply(&raw);
            for i in 0..12 {
                assert!((again[i] - w.column(j)[i]).abs() < 1e-12);
                assert!((w.transform(j).apply_row(&raw.row(i)) - w.column(j)[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn response_is_centered() {
        let y = ResponseVector::new(vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(y.mean(), 3.0);
        assert!(y.values().iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(y.original(), vec![1.0, 2.0, 3.0, 6.0]);
    }
}
