//! Matrix sets, words, products and the spectral observables of a single
//! matrix: singular values, eigenvalue moduli, exterior powers.
//!
//! Long products are accumulated as a unit-scale matrix together with a
//! logarithmic scale factor and an exactly accumulated log-determinant, so
//! that words of several hundred letters neither overflow nor lose their
//! smallest singular direction in the planar case.

use std::collections::HashSet;

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// A matrix is accepted as invertible when `|det M| > INVERTIBILITY_TOLERANCE * ||M||^d`.
pub const INVERTIBILITY_TOLERANCE: f64 = 1e-12;

/// Anticlockwise rotation of the plane through `theta`.
pub fn rotation(theta: f64) -> Matrix {
    let (mut s, mut c) = theta.sin_cos();
    // Quarter turns come out exact.
    let snap = |x: &mut f64, y: &mut f64| {
        if x.abs() < 4.0 * f64::EPSILON {
            *x = 0.0;
            *y = y.signum();
        }
    };
    snap(&mut s, &mut c);
    snap(&mut c, &mut s);
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn diag(entries: &[f64]) -> Matrix {
    Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(entries))
}

/// Operator 2-norm.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        let (s1, _) = planar_singular_values(m);
        return s1;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Singular values of a 2x2 matrix in closed form, largest first.
fn planar_singular_values(m: &Matrix) -> (f64, f64) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let p = (a + d).hypot(c - b);
    let q = (a - d).hypot(b + c);
    let s1 = 0.5 * (p + q);
    let det = (a * d - b * c).abs();
    let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
    (s1, s2)
}

pub fn determinant(m: &Matrix) -> f64 {
    if m.nrows() == 2 {
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    } else {
        m.clone().lu().determinant()
    }
}

fn check_invertible(label: &str, m: &Matrix) -> Result<f64> {
    let d = m.nrows() as i32;
    let det = determinant(m);
    let norm = op_norm(m);
    if !det.is_finite() || det.abs() <= INVERTIBILITY_TOLERANCE * norm.powi(d) || norm == 0.0 {
        return Err(Error::Singular {
            label: label.to_string(),
            abs_det: det.abs(),
        });
    }
    Ok(det)
}

/// A finite nonempty set of invertible `d x d` matrices with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    dim: usize,
    matrices: Vec<Matrix>,
    labels: Vec<String>,
    log_abs_dets: Vec<f64>,
    det_signs: Vec<f64>,
}

impl MatrixSet {
    pub fn new(labels: Vec<String>, matrices: Vec<Matrix>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::EmptySet);
        }
        if labels.len() != matrices.len() {
            return Err(Error::LabelCount {
                labels: labels.len(),
                matrices: matrices.len(),
            });
        }
        let dim = matrices[0].nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        let mut log_abs_dets = Vec::with_capacity(matrices.len());
        let mut det_signs = Vec::with_capacity(matrices.len());
        for (label, m) in labels.iter().zip(&matrices) {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Shape {
                    label: label.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                    dim,
                });
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
            let det = check_invertible(label, m)?;
            log_abs_dets.push(det.abs().ln());
            det_signs.push(det.signum());
        }
        Ok(Self {
            dim,
            matrices,
            labels,
            log_abs_dets,
            det_signs,
        })
    }

    /// Builds a set with labels `A0, A1, ...`.
    pub fn from_matrices(matrices: Vec<Matrix>) -> Result<Self> {
        let labels = (0..matrices.len()).map(|i| format!("A{i}")).collect();
        Self::new(labels, matrices)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn matrix(&self, i: usize) -> &Matrix {
        &self.matrices[i]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn log_abs_det(&self, i: usize) -> f64 {
        self.log_abs_dets[i]
    }

    pub fn det_sign(&self, i: usize) -> f64 {
        self.det_signs[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.labels.iter().map(String::as_str).zip(&self.matrices)
    }

    /// Smallest `|det|` over the set.
    pub fn min_abs_det(&self) -> f64 {
        self.log_abs_dets
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .exp()
    }

    /// Smallest singular value over the set.
    pub fn min_sigma_d(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| *singular_values(m).last().unwrap())
            .fold(f64::INFINITY, f64::min)
    }

    /// Every element multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(
            self.labels.clone(),
            self.matrices.iter().map(|m| m * t).collect(),
        )
    }

    /// `M -> left * M` applied to every element, keeping labels.
    pub fn left_multiplied(&self, left: &Matrix) -> Result<Self> {
        Self::new(
            self.labels.clone(),
            self.matrices.iter().map(|m| left * m).collect(),
        )
    }

    /// Union with extra matrices; labels must stay unique.
    pub fn extended(&self, labels: Vec<String>, matrices: Vec<Matrix>) -> Result<Self> {
        let mut all_labels = self.labels.clone();
        all_labels.extend(labels);
        let mut all = self.matrices.clone();
        all.extend(matrices);
        Self::new(all_labels, all)
    }

    /// SHA-256 over dimension, labels and the bit patterns of all entries
    /// (row-major). Identifies a set independently of file formatting.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_be_bytes());
        for (label, m) in self.iter() {
            h.update((label.len() as u64).to_be_bytes());
            h.update(label.as_bytes());
            for i in 0..self.dim {
                for j in 0..self.dim {
                    h.update(m[(i, j)].to_bits().to_be_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// True when every element is diagonal (exact zero test).
    pub fn is_simultaneously_diagonal(&self) -> bool {
        self.matrices.iter().all(|m| {
            (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || m[(i, j)] == 0.0))
        })
    }
}

/// A product `A_{i_n} ... A_{i_1}`, stored in application order: the first
/// index is applied first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyWord);
        }
        Ok(Self(indices))
    }

    pub fn single(index: usize) -> Self {
        Self(vec![index])
    }

    /// `index` repeated `n` times.
    pub fn power_of(index: usize, n: usize) -> Self {
        Self(vec![index; n.max(1)])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The word applying `self` first and then `next`.
    pub fn then(&self, next: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&next.0);
        Word(v)
    }

    pub fn repeat(&self, n: usize) -> Word {
        Word(self.0.repeat(n.max(1)))
    }

    pub fn validate(&self, set_len: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::EmptyWord);
        }
        match self.0.iter().find(|&&i| i >= set_len) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index,
                len: set_len,
            }),
            None => Ok(()),
        }
    }

    /// Ordering used for tie-breaking: shorter first, then lexicographic.
    pub fn shortlex_cmp(&self, other: &Word) -> std::cmp::Ordering {
        self.len().cmp(&other.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}]", self.0.iter().join(","))
    }
}

/// Evaluates `A_{i_n} ... A_{i_1}` by left accumulation.
pub fn product(set: &MatrixSet, word: &Word) -> Result<Matrix> {
    word.validate(set.len())?;
    let mut it = word.indices().iter();
    let mut acc = set.matrix(*it.next().unwrap()).clone();
    for &i in it {
        acc = set.matrix(i) * acc;
    }
    Ok(acc)
}

/// A product kept as `exp(log_scale) * unit` with `max |unit_ij|` in `[1, 2)`, plus
/// the exactly accumulated logarithm of `|det|`.
#[derive(Debug, Clone)]
pub struct LogProduct {
    unit: Matrix,
    log_scale: f64,
    log_abs_det: f64,
    det_sign: f64,
    len: usize,
}

impl LogProduct {
    pub fn identity(dim: usize) -> Self {
        Self {
            unit: Matrix::identity(dim, dim),
            log_scale: 0.0,
            log_abs_det: 0.0,
            det_sign: 1.0,
            len: 0,
        }
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let det = check_invertible("product", m)?;
        let mut p = Self::identity(m.nrows());
        p.push_raw(m, det.abs().ln(), det.signum());
        p.len = 1;
        Ok(p)
    }

    pub fn from_word(set: &MatrixSet, word: &Word) -> Result<Self> {
        word.validate(set.len())?;
        let mut p = Self::identity(set.dim());
        for &i in word.indices() {
            p.push(set, i);
        }
        Ok(p)
    }

    /// Left-multiplies by element `i` of `set`.
    pub fn push(&mut self, set: &MatrixSet, i: usize) {
        self.push_raw(set.matrix(i), set.log_abs_det(i), set.det_sign(i));
    }

    /// Left-multiplies by `m`, whose `log|det|` and sign are supplied.
    pub fn push_raw(&mut self, m: &Matrix, log_abs_det: f64, det_sign: f64) {
        self.unit = m * &self.unit;
        self.log_abs_det += log_abs_det;
        self.det_sign *= det_sign;
        self.len += 1;
        self.renormalize();
    }

    /// Left-multiplies by another accumulated product.
    pub fn push_product(&mut self, other: &LogProduct) {
        self.unit = &other.unit * &self.unit;
        self.log_scale += other.log_scale;
        self.log_abs_det += other.log_abs_det;
        self.det_sign *= other.det_sign;
        self.len += other.len;
        self.renormalize();
    }

    /// Rescales by a power of two so that dyadic inputs stay exact.
    fn renormalize(&mut self) {
        let m = self.unit.amax();
        if m > 0.0 && m.is_finite() {
            let e = m.log2().floor();
            self.unit *= (-e).exp2();
            self.log_scale += e * std::f64::consts::LN_2;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn unit(&self) -> &Matrix {
        &self.unit
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// The product in linear scale (may overflow for very long words).
    pub fn to_matrix(&self) -> Matrix {
        &self.unit * self.log_scale.exp()
    }

    pub fn log_norm(&self) -> f64 {
        op_norm(&self.unit).ln() + self.log_scale
    }

    pub fn observables(&self) -> LogObservables {
        log_observables(&self.unit, self.log_scale, self.log_abs_det, self.det_sign)
    }

    /// `log rho` of the product; cheaper than the full observables in d = 2.
    pub fn log_spectral_radius(&self) -> f64 {
        if self.unit.nrows() == 2 {
            planar_log_eig_moduli(&self.unit, self.log_scale, self.log_abs_det, self.det_sign).0
        } else {
            self.observables().log_eig_moduli[0]
        }
    }
}

/// Spectral observables of an invertible matrix in linear scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub norm: f64,
    pub singular_values: Vec<f64>,
    pub spectral_radius: f64,
    pub determinant: f64,
    pub eig_moduli: Vec<f64>,
}

/// The same observables in logarithmic scale; safe for long products.
#[derive(Debug, Clone, PartialEq)]
pub struct LogObservables {
    pub log_singular_values: Vec<f64>,
    pub log_eig_moduli: Vec<f64>,
    pub log_abs_det: f64,
    pub det_sign: f64,
}

impl LogObservables {
    pub fn log_norm(&self) -> f64 {
        self.log_singular_values[0]
    }

    pub fn log_spectral_radius(&self) -> f64 {
        self.log_eig_moduli[0]
    }

    pub fn to_linear(&self) -> Observables {
        Observables {
            norm: self.log_singular_values[0].exp(),
            singular_values: self.log_singular_values.iter().map(|x| x.exp()).collect(),
            spectral_radius: self.log_eig_moduli[0].exp(),
            determinant: self.det_sign * self.log_abs_det.exp(),
            eig_moduli: self.log_eig_moduli.iter().map(|x| x.exp()).collect(),
        }
    }
}

/// Observables of `M`; rejects numerically singular input.
pub fn observables(m: &Matrix) -> Result<Observables> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape {
            label: "input".into(),
            rows: m.nrows(),
            cols: m.ncols(),
            dim: m.nrows(),
        });
    }
    let det = check_invertible("input", m)?;
    let singular_values = singular_values(m);
    let mut eig_moduli: Vec<f64> = if m.nrows() == 2 {
        planar_eig_moduli(m, det)
    } else {
        m.complex_eigenvalues().iter().map(|z| z.norm()).collect()
    };
    eig_moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(Observables {
        norm: singular_values[0],
        spectral_radius: eig_moduli[0],
        singular_values,
        determinant: det,
        eig_moduli,
    })
}

/// Singular values, largest first.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 2 && m.ncols() == 2 {
        let (a, b) = planar_singular_values(m);
        return vec![a, b];
    }
    let mut s: Vec<f64> = m.singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigenvalue moduli of `exp(log_scale) * unit`, largest first, for d = 2.
/// The determinant is taken from the exact accumulation rather than from
/// `unit`, whose smallest direction may have underflowed.
fn planar_log_eig_moduli(unit: &Matrix, log_scale: f64, log_abs_det: f64, det_sign: f64) -> (f64, f64) {
    let t = unit[(0, 0)] + unit[(1, 1)];
    let log_abs_d = log_abs_det - 2.0 * log_scale;
    let complex = det_sign > 0.0 && (t == 0.0 || 2.0 * t.abs().ln() < 4f64.ln() + log_abs_d);
    if complex {
        let half = 0.5 * log_abs_det;
        return (half, half);
    }
    let d = det_sign * log_abs_d.exp();
    let disc = (t * t - 4.0 * d).max(0.0).sqrt();
    let big = 0.5 * (t.abs() + disc);
    let log_big = big.ln() + log_scale;
    (log_big, log_abs_det - log_big)
}

fn log_observables(unit: &Matrix, log_scale: f64, log_abs_det: f64, det_sign: f64) -> LogObservables {
    let d = unit.nrows();
    if d == 1 {
        let l = unit[(0, 0)].abs().ln() + log_scale;
        return LogObservables {
            log_singular_values: vec![l],
            log_eig_moduli: vec![l],
            log_abs_det,
            det_sign,
        };
    }
    if d == 2 {
        let (s1, _) = planar_singular_values(unit);
        let ls1 = s1.ln() + log_scale;
        let (e1, e2) = planar_log_eig_moduli(unit, log_scale, log_abs_det, det_sign);
        return LogObservables {
            log_singular_values: vec![ls1, log_abs_det - ls1],
            log_eig_moduli: vec![e1, e2],
            log_abs_det,
            det_sign,
        };
    }
    let sv = singular_values(unit);
    let mut ls: Vec<f64> = sv.iter().map(|s| s.ln() + log_scale).collect();
    if sv[d - 1] < 1e-6 * sv[0] {
        ls[d - 1] = log_abs_det - ls[..d - 1].iter().sum::<f64>();
    }
    let mut moduli: Vec<f64> = unit
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let mut le: Vec<f64> = moduli.iter().map(|m| m.ln() + log_scale).collect();
    if moduli[d - 1] < 1e-6 * moduli[0] {
        le[d - 1] = log_abs_det - le[..d - 1].iter().sum::<f64>();
    }
    LogObservables {
        log_singular_values: ls,
        log_eig_moduli: le,
        log_abs_det,
        det_sign,
    }
}

fn planar_eig_moduli(m: &Matrix, det: f64) -> Vec<f64> {
    let t = m[(0, 0)] + m[(1, 1)];
    let disc = t * t - 4.0 * det;
    if disc < 0.0 {
        let r = det.abs().sqrt();
        return vec![r, r];
    }
    let big = 0.5 * (t.abs() + disc.sqrt());
    vec![big, if big > 0.0 { det.abs() / big } else { 0.0 }]
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.nrows() == 2 {
        return planar_eig_moduli(m, determinant(m))[0];
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Binomial coefficient.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// The sorted `k`-subsets of `0..d` in lexicographic order; this is the
/// basis ordering of the `k`-th exterior power.
pub fn k_subsets(d: usize, k: usize) -> Vec<Vec<usize>> {
    (0..d).combinations(k).collect()
}

/// `k`-th exterior power: entry `(I, J)` is the minor on rows `I` and
/// columns `J`, with `I`, `J` ranging over `k`-subsets in lexicographic order.
pub fn exterior_power(m: &Matrix, k: usize) -> Result<Matrix> {
    let d = m.nrows();
    if k == 0 || k > d {
        return Err(Error::IndexRange { k, max: d });
    }
    if k == 1 {
        return Ok(m.clone());
    }
    let subsets = k_subsets(d, k);
    let n = subsets.len();
    let mut out = Matrix::zeros(n, n);
    let mut sub = Matrix::zeros(k, k);
    for (r, rows) in subsets.iter().enumerate() {
        for (c, cols) in subsets.iter().enumerate() {
            for (a, &i) in rows.iter().enumerate() {
                for (b, &j) in cols.iter().enumerate() {
                    sub[(a, b)] = m[(i, j)];
                }
            }
            out[(r, c)] = determinant(&sub);
        }
    }
    Ok(out)
}

/// Element-wise exterior power of a set; labels get a `^k` suffix.
pub fn lift_set(set: &MatrixSet, k: usize) -> Result<MatrixSet> {
    if k == 0 || k > set.dim() {
        return Err(Error::IndexRange { k, max: set.dim() });
    }
    if k == 1 {
        return Ok(set.clone());
    }
    let matrices = set
        .matrices()
        .iter()
        .map(|m| exterior_power(m, k))
        .collect::<Result<Vec<_>>>()?;
    let labels = set.labels().iter().map(|l| format!("{l}^{k}")).collect();
    MatrixSet::new(labels, matrices)
}

/// Hausdorff distance between two sets under the operator 2-norm.
pub fn hausdorff_distance(a: &MatrixSet, b: &MatrixSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let directed = |x: &MatrixSet, y: &MatrixSet| {
        x.matrices()
            .iter()
            .map(|m| {
                y.matrices()
                    .iter()
                    .map(|n| op_norm(&(m - n)))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}
