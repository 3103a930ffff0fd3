//! Named example sets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matset::{determinant, diag, rotation, Matrix, MatrixSet};
use crate::projective::{image_angle, Arc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum GallerySpec {
    /// `{diag(2, 1/8), I}`.
    Simple,
    /// `{diag(2, 1/8), R_(pi/2n)}`.
    SimplePerturbed { n: u32 },
    /// `{diag(1/3, 3), diag(2, 1/2)}`.
    Nasty1,
    /// Block-diagonal products of `B1` and `B2`, plus `lambda (R1 + R2)`.
    BlockDirectSum {
        b1: Vec<Vec<Vec<f64>>>,
        b2: Vec<Vec<Vec<f64>>>,
        lambda: f64,
        r1: Vec<Vec<f64>>,
        r2: Vec<Vec<f64>>,
    },
    /// `{R_(q pi/p), H}` with `H` a scaled near-projection.
    RationalRotation {
        p: u32,
        q: i32,
        delta: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
    /// `{diag(2, 1/8), diag(1, -1)}`.
    NoDiscontinuity,
    /// `{diag(2, 2^-m, 1), diag(2^-m, 2, 1)}`.
    NonDomInvertibilized { m: u32 },
}

impl GallerySpec {
    pub fn name(&self) -> &'static str {
        match self {
            GallerySpec::Simple => "simple",
            GallerySpec::SimplePerturbed { .. } => "simple_perturbed",
            GallerySpec::Nasty1 => "nasty1",
            GallerySpec::BlockDirectSum { .. } => "block_direct_sum",
            GallerySpec::RationalRotation { .. } => "rational_rotation",
            GallerySpec::NoDiscontinuity => "no_discontinuity",
            GallerySpec::NonDomInvertibilized { .. } => "non_dom_invertibilized",
        }
    }
}

fn labelled(pairs: Vec<(&str, Matrix)>) -> Result<MatrixSet> {
    let (labels, ms) = pairs.into_iter().map(|(l, m)| (l.to_string(), m)).unzip();
    MatrixSet::new(labels, ms)
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Gallery(format!("{what}: rows must form a nonempty square matrix")));
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn gallery(spec: &GallerySpec) -> Result<MatrixSet> {
    match spec {
        GallerySpec::Simple => labelled(vec![("D", diag(&[2.0, 0.125])), ("I", Matrix::identity(2, 2))]),
        GallerySpec::SimplePerturbed { n } => {
            if *n == 0 {
                return Err(Error::Gallery("simple_perturbed needs n >= 1".into()));
            }
            labelled(vec![
                ("D", diag(&[2.0, 0.125])),
                ("R", rotation(PI / (2.0 * *n as f64))),
            ])
        }
        GallerySpec::Nasty1 => labelled(vec![("A", diag(&[1.0 / 3.0, 3.0])), ("B", diag(&[2.0, 0.5]))]),
        GallerySpec::NoDiscontinuity => labelled(vec![("A1", diag(&[2.0, 0.125])), ("A2", diag(&[1.0, -1.0]))]),
        GallerySpec::NonDomInvertibilized { m } => {
            let s = (-(*m as f64)).exp2();
            labelled(vec![("A", diag(&[2.0, s, 1.0])), ("B", diag(&[s, 2.0, 1.0]))])
        }
        GallerySpec::BlockDirectSum { b1, b2, lambda, r1, r2 } => {
            let b1: Vec<Matrix> = b1.iter().map(|m| matrix_from_rows(m, "B1")).collect::<Result<_>>()?;
            let b2: Vec<Matrix> = b2.iter().map(|m| matrix_from_rows(m, "B2")).collect::<Result<_>>()?;
            block_direct_sum(
                &MatrixSet::from_matrices(b1)?,
                &MatrixSet::from_matrices(b2)?,
                *lambda,
                &matrix_from_rows(r1, "R1")?,
                &matrix_from_rows(r2, "R2")?,
            )
        }
        GallerySpec::RationalRotation { p, q, delta, .. } => rational_rotation(*p, *q, *delta),
    }
}

fn is_orthogonal(m: &Matrix) -> bool {
    let d = m.nrows();
    (m.transpose() * m - Matrix::identity(d, d)).amax() <= 1e-12
}

fn block(a: &Matrix, b: &Matrix) -> Matrix {
    let (d1, d2) = (a.nrows(), b.nrows());
    let mut m = Matrix::zeros(d1 + d2, d1 + d2);
    m.view_mut((0, 0), (d1, d1)).copy_from(a);
    m.view_mut((d1, d1), (d2, d2)).copy_from(b);
    m
}

/// Direct sums `B1 + B2` together with `lambda (R1 + R2)`. Requires
/// `min sigma_d1(B1) > lambda > min |det B1 det B2|^(1/(d1+d2))`.
pub fn block_direct_sum(b1: &MatrixSet, b2: &MatrixSet, lambda: f64, r1: &Matrix, r2: &Matrix) -> Result<MatrixSet> {
    let (d1, d2) = (b1.dim(), b2.dim());
    if r1.nrows() != d1 || r2.nrows() != d2 {
        return Err(Error::Gallery("R1, R2 must match the dimensions of B1, B2".into()));
    }
    if !is_orthogonal(r1) || !is_orthogonal(r2) {
        return Err(Error::Gallery("R1 and R2 must be orthogonal".into()));
    }
    let sigma = b1.min_sigma_d();
    if sigma.partial_cmp(&lambda) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Gallery(format!(
            "inf sigma_d1(B1) > lambda fails: {sigma} <= {lambda}"
        )));
    }
    let det_root = ((b1.min_abs_det().ln() + b2.min_abs_det().ln()) / (d1 + d2) as f64).exp();
    if lambda.partial_cmp(&det_root) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Gallery(format!(
            "lambda > inf |det B1 det B2|^(1/(d1+d2)) fails: {lambda} <= {det_root}"
        )));
    }
    let mut labels = Vec::new();
    let mut ms = Vec::new();
    for (l1, m1) in b1.iter() {
        for (l2, m2) in b2.iter() {
            labels.push(format!("{l1}+{l2}"));
            ms.push(block(m1, m2));
        }
    }
    labels.push("L".into());
    ms.push(block(&(r1 * lambda), &(r2 * lambda)));
    MatrixSet::new(labels, ms)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// `{R, H}` with `R = R_(q pi/p)`: `V` is the horizontal axis, `W = R_(pi/2p) V`,
/// `P` projects onto `V` along `W`, and `H = (P + eta I)/kappa` with the
/// largest `eta` in `10^-1, ..., 10^-6` that passes the checks.
pub fn rational_rotation(p: u32, q: i32, delta: Option<f64>) -> Result<MatrixSet> {
    if p == 0 || gcd(p, q.unsigned_abs()) != 1 {
        return Err(Error::Gallery(format!("p = {p} and q = {q} must be coprime with p > 0")));
    }
    let half = PI / (2.0 * p as f64);
    let delta = delta.unwrap_or(PI / (4.0 * p as f64));
    if !(delta > 0.0 && delta < half) {
        return Err(Error::Gallery(format!("0 < delta < pi/(2p) fails for delta = {delta}")));
    }
    let r = rotation(q as f64 * PI / p as f64);
    let projection = Matrix::from_row_slice(2, 2, &[1.0, -1.0 / half.tan(), 0.0, 0.0]);
    // |P v| >= 2 kappa |v| on the union of arcs.
    let kappa = 0.5 * (half - delta).sin() / half.sin();
    let d_arc = Arc::centered(0.0, delta);
    let arcs: Vec<Arc> = (0..p).map(|k| Arc::centered(k as f64 * PI / p as f64, delta)).collect();
    let mut failures = Vec::new();
    for eta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let h = (&projection + Matrix::identity(2, 2) * eta) / kappa;
        let det = determinant(&h);
        if det.abs() >= 1.0 {
            failures.push(format!("eta = {eta}: |det H| = {det} >= 1"));
            continue;
        }
        let mapped_inside = arcs.iter().all(|a| d_arc.gap_to(&a.image(&h)).is_some());
        if !mapped_inside {
            failures.push(format!("eta = {eta}: H does not map the arcs into D"));
            continue;
        }
        let expands = arcs.iter().all(|a| {
            a.nodes(513).iter().all(|&t| {
                let (x, y) = crate::projective::apply(&h, crate::projective::direction(t));
                x.hypot(y) >= 1.0 - 1e-12
            })
        });
        if !expands {
            failures.push(format!("eta = {eta}: |H v| >= |v| fails on the arcs"));
            continue;
        }
        let rotation_invariant = arcs.iter().all(|a| {
            let img = image_angle(&r, a.start + delta);
            arcs.iter().any(|b| b.contains(img))
        });
        if !rotation_invariant {
            return Err(Error::Gallery("R does not permute the arcs".into()));
        }
        return labelled(vec![("R", r), ("H", h)]);
    }
    Err(Error::Gallery(format!("no eta passed: {}", failures.join("; "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_examples() {
        let s = gallery(&GallerySpec::Simple).unwrap();
        assert_eq!(s.matrix(0), &diag(&[2.0, 0.125]));
        assert_eq!(s.matrix(1), &Matrix::identity(2, 2));
        let p = gallery(&GallerySpec::SimplePerturbed { n: 1 }).unwrap();
        assert_eq!(p.matrix(1), &Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let n = gallery(&GallerySpec::Nasty1).unwrap();
        assert_eq!(n.matrix(0), &diag(&[1.0 / 3.0, 3.0]));
        assert!(gallery(&GallerySpec::SimplePerturbed { n: 0 }).is_err());
        let nd = gallery(&GallerySpec::NonDomInvertibilized { m: 3 }).unwrap();
        assert_eq!(nd.matrix(1), &diag(&[0.125, 2.0, 1.0]));
    }

    #[test]
    fn block_sum_validation() {
        let b1 = MatrixSet::from_matrices(vec![diag(&[3.0])]).unwrap();
        let b2 = MatrixSet::from_matrices(vec![diag(&[0.01])]).unwrap();
        let one = Matrix::identity(1, 1);
        let a = block_direct_sum(&b1, &b2, 1.0, &one, &one).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.matrix(0), &diag(&[3.0, 0.01]));
        let err = block_direct_sum(&b1, &b2, 4.0, &one, &one).unwrap_err();
        assert!(err.to_string().contains("sigma_d1"));
        let err = block_direct_sum(&b1, &b2, 0.1, &one, &one).unwrap_err();
        assert!(err.to_string().contains("det"));
        assert!(block_direct_sum(&b1, &b2, 1.0, &(one.clone() * 2.0), &one).is_err());
    }

    #[test]
    fn rational_rotation_examples() {
        for (p, q) in [(1, 1), (2, 1), (3, 1), (3, 2), (5, 3)] {
            let a = rational_rotation(p, q, None).unwrap();
            assert!(determinant(a.matrix(1)).abs() < 1.0);
        }
        assert!(rational_rotation(4, 2, None).is_err());
        assert!(rational_rotation(3, 1, Some(1.0)).is_err());
    }
}
