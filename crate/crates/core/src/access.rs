//! Singular-value alignment and small perturbations that lower the lower
//! spectral radius.
//!
//! A word `P` with a spectral gap at the pivot index is followed by a short
//! connector `R` of perturbed matrices that sends the expanding subspace `E`
//! of `P` into the contracting subspace `F`; the product `P R P` then grows
//! more slowly than any product of the unperturbed set.

use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::domination::{least_domination_index, DominationConfig};
use crate::error::{Error, Result};
use crate::estimators::{evaluate_word, subradius_bracket, BracketConfig};
use crate::matset::{
    exterior_power, hausdorff_distance, lift_set, op_norm, rotation, LogProduct, Matrix, MatrixSet, Word,
};
use crate::projective::lifted_image_angle;

/// Sine tolerance for accepting an alignment.
pub const ALIGNMENT_TOLERANCE: f64 = 1e-8;
const BISECTION_STEPS: usize = 200;

/// `lambda_k = log sigma_k`, partial sums `tau_k` and the area functionals
/// `zeta_k = sum_{i<k} tau_i - (k-1)/2 tau_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub lambdas: Vec<f64>,
    /// `tau_0 = 0, tau_1, ..., tau_d`.
    pub taus: Vec<f64>,
    /// `zeta_2, ..., zeta_upto`.
    pub zetas: Vec<f64>,
}

impl SpectrumProfile {
    pub fn from_lambdas(lambdas: Vec<f64>, upto_k: usize) -> Result<Self> {
        let d = lambdas.len();
        if upto_k > d {
            return Err(Error::IndexRange { k: upto_k, max: d });
        }
        let mut taus = vec![0.0];
        for l in &lambdas {
            taus.push(taus.last().unwrap() + l);
        }
        let zetas = (2..=upto_k)
            .map(|k| taus[1..k].iter().sum::<f64>() - 0.5 * (k - 1) as f64 * taus[k])
            .collect();
        Ok(Self { lambdas, taus, zetas })
    }

    pub fn zeta(&self, k: usize) -> Option<f64> {
        k.checked_sub(2).and_then(|i| self.zetas.get(i)).copied()
    }
}

/// Spectrum profile of `m`, with `zeta_k` for `2 <= k <= upto_k`.
pub fn spectrum_profile(m: &Matrix, upto_k: usize) -> Result<SpectrumProfile> {
    let p = LogProduct::from_matrix(m)?;
    SpectrumProfile::from_lambdas(p.observables().log_singular_values, upto_k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pivot {
    pub p: usize,
    /// `(lambda_p - lambda_{p+1}) / 2`.
    pub gap: f64,
}

pub fn pivot_from_lambdas(lambdas: &[f64], ell: usize) -> Result<Pivot> {
    let d = lambdas.len();
    if ell < 2 || ell > d {
        return Err(Error::IndexRange { k: ell, max: d });
    }
    let (p, diff) = (1..ell)
        .map(|p| (p, lambdas[p - 1] - lambdas[p]))
        .fold((1, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    Ok(Pivot { p, gap: 0.5 * diff.max(0.0) })
}

/// Index `p < ell` with the widest gap between consecutive log singular
/// values (smallest such `p` on ties).
pub fn pivot(m: &Matrix, ell: usize) -> Result<Pivot> {
    pivot_from_lambdas(&spectrum_profile(m, 0)?.lambdas, ell)
}

/// SVD with singular values sorted in decreasing order: `(U, sigma, V)`.
fn sorted_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = Matrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = Matrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    (u, s, v)
}

/// Unit vector spanning (approximately) the kernel of `m`, with the
/// smallest singular value as the quality of the approximation.
fn null_vector(m: &Matrix) -> (nalgebra::DVector<f64>, f64) {
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);
    let (i, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (eig.eigenvectors.column(i).into_owned(), lmin.max(0.0).sqrt())
}

/// Linear subspace of `R^d` stored by an orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Span of the columns of `m`; they must be independent.
    pub fn span(m: &Matrix) -> Result<Self> {
        let d = m.nrows();
        let k = m.ncols();
        if k == 0 {
            return Ok(Self { basis: Matrix::zeros(d, 0) });
        }
        let (u, s, _) = sorted_svd(m);
        if s[k - 1] <= 1e-12 * s[0] {
            return Err(Error::Degenerate("spanning vectors are dependent".into()));
        }
        Ok(Self {
            basis: u.columns(0, k).into_owned(),
        })
    }

    pub fn coordinate_axes(d: usize, axes: &[usize]) -> Result<Self> {
        let m = Matrix::from_fn(d, axes.len(), |r, c| if r == axes[c] { 1.0 } else { 0.0 });
        Self::span(&m)
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn complement(&self) -> Subspace {
        let d = self.ambient();
        let k = self.dim();
        let proj = Matrix::identity(d, d) - &self.basis * self.basis.transpose();
        let (u, _, _) = sorted_svd(&proj);
        Subspace {
            basis: u.columns(0, d - k).into_owned(),
        }
    }

    /// Sine of the smallest principal angle to `other`; zero iff the two
    /// subspaces intersect nontrivially.
    pub fn sine_to(&self, other: &Subspace) -> f64 {
        let c = self.complement();
        if other.dim() > c.dim() {
            return 0.0;
        }
        if other.dim() == 0 {
            return 1.0;
        }
        let m = c.basis.transpose() * &other.basis;
        let (_, s, _) = sorted_svd(&m);
        *s.last().unwrap()
    }

    /// Distance of a vector's direction to the subspace (sine).
    pub fn sine_of(&self, v: &nalgebra::DVector<f64>) -> f64 {
        let proj = &self.basis * (self.basis.transpose() * v);
        (v - proj).norm() / v.norm()
    }

    /// Image `m(self)`.
    pub fn image(&self, m: &Matrix) -> Result<Subspace> {
        Subspace::span(&(m * &self.basis))
    }
}

#[derive(Debug, Clone)]
pub struct EfSubspaces {
    /// Top-`p` left singular subspace.
    pub e: Subspace,
    /// Bottom-`(d - p)` right singular subspace.
    pub f: Subspace,
    /// `sigma_p` and `sigma_{p+1}` agree to 1e-12 relative.
    pub degenerate: bool,
}

pub fn ef_subspaces(p_matrix: &Matrix, p: usize) -> Result<EfSubspaces> {
    let d = p_matrix.nrows();
    if p == 0 || p >= d {
        return Err(Error::IndexRange { k: p, max: d.saturating_sub(1) });
    }
    let (u, s, v) = sorted_svd(p_matrix);
    Ok(EfSubspaces {
        e: Subspace { basis: u.columns(0, p).into_owned() },
        f: Subspace { basis: v.columns(p, d - p).into_owned() },
        degenerate: s[p - 1] - s[p] <= 1e-12 * s[0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCertificate {
    pub theta: f64,
    /// Number of matrices in the aligned product.
    pub steps: usize,
    pub v: (f64, f64),
    pub w: (f64, f64),
    /// Sine of the angle between the achieved image and the target.
    pub residual: f64,
}

fn normalize2(x: (f64, f64)) -> (f64, f64) {
    let n = x.0.hypot(x.1);
    (x.0 / n, x.1 / n)
}

fn apply2(m: &Matrix, v: (f64, f64)) -> (f64, f64) {
    crate::projective::apply(m, v)
}

/// Lifted angle of `R_theta A_n ... R_theta A_1 v`.
fn achieved_angle(ms: &[Matrix], alpha0: f64, theta: f64) -> f64 {
    ms.iter().fold(alpha0, |a, m| lifted_image_angle(m, a) + theta)
}

fn rotated_image(ms: &[Matrix], v: (f64, f64), theta: f64) -> (f64, f64) {
    let r = rotation(theta);
    ms.iter().fold(normalize2(v), |x, m| normalize2(apply2(&r, apply2(m, x))))
}

/// Smallest `|theta|` making `R_theta A_n ... R_theta A_1 v` parallel to
/// `A_n ... A_1 w`, or the angle that would be needed.
fn solve_alignment(ms: &[Matrix], v: (f64, f64), w: (f64, f64)) -> f64 {
    let a0 = v.1.atan2(v.0);
    let target_vec = ms.iter().fold(normalize2(w), |x, m| normalize2(apply2(m, x)));
    let target = target_vec.1.atan2(target_vec.0);
    let g0 = achieved_angle(ms, a0, 0.0);
    let up = target + ((g0 - target) / PI).ceil() * PI;
    let down = up - PI;
    let solve = |goal: f64, lo: f64, hi: f64| -> Option<f64> {
        let (mut lo, mut hi) = (lo, hi);
        if achieved_angle(ms, a0, lo) > goal || achieved_angle(ms, a0, hi) < goal {
            return None;
        }
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if achieved_angle(ms, a0, mid) < goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let pick = if (achieved_angle(ms, a0, lo) - goal).abs() <= (achieved_angle(ms, a0, hi) - goal).abs() {
            lo
        } else {
            hi
        };
        Some(pick)
    };
    let pos = if up == g0 { Some(0.0) } else { solve(up, 0.0, PI / 2.0) };
    let neg = solve(down, -PI / 2.0, 0.0);
    match (pos, neg) {
        (Some(p), Some(n)) => {
            if p <= -n + 1e-12 {
                p
            } else {
                n
            }
        }
        (Some(p), None) => p,
        (None, Some(n)) => n,
        (None, None) => unreachable!("the achieved angle sweeps n*pi over [-pi/2, pi/2]"),
    }
}

fn sine_between(a: (f64, f64), b: (f64, f64)) -> f64 {
    let a = normalize2(a);
    let b = normalize2(b);
    (a.0 * b.1 - a.1 * b.0).abs()
}

/// Finds `|theta| <= delta` with `R_theta A_n ... R_theta A_1 v` parallel to
/// `A_n ... A_1 w`, by bisection on the monotone lifted angle.
pub fn align_2d(matrices: &[Matrix], v: (f64, f64), w: (f64, f64), delta: f64) -> Result<AlignmentCertificate> {
    if matrices.is_empty() {
        return Err(Error::EmptyWord);
    }
    if (v.0 == 0.0 && v.1 == 0.0) || (w.0 == 0.0 && w.1 == 0.0) {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    for m in matrices {
        if m.nrows() != 2 || m.ncols() != 2 {
            return Err(Error::NotPlanar(m.nrows()));
        }
        if m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] <= 0.0 {
            return Err(Error::InvalidArgument("determinant must be positive".into()));
        }
    }
    let target = matrices.iter().fold(normalize2(w), |x, m| normalize2(apply2(m, x)));
    let residual0 = sine_between(rotated_image(matrices, v, 0.0), target);
    let theta = if residual0 <= ALIGNMENT_TOLERANCE {
        0.0
    } else {
        solve_alignment(matrices, v, w)
    };
    if theta.abs() > delta {
        return Err(Error::AngleBudget {
            needed: theta.abs(),
            available: delta,
        });
    }
    let residual = sine_between(rotated_image(matrices, v, theta), target);
    if residual > ALIGNMENT_TOLERANCE {
        return Err(Error::NoConvergence {
            iterations: BISECTION_STEPS,
            residual,
        });
    }
    Ok(AlignmentCertificate {
        theta,
        steps: matrices.len(),
        v,
        w,
        residual,
    })
}

/// Largest rotation angle whose perturbation of `A` stays within `epsilon`:
/// `||(R - I) A|| <= 2 sin(|theta| / 2) ||A||`.
pub fn angle_budget(epsilon: f64, max_norm: f64) -> f64 {
    2.0 * (epsilon / (2.0 * max_norm)).min(1.0).asin()
}

#[derive(Debug, Clone)]
pub struct PlaneAlignment {
    /// `(source index, L_i)` for each letter of the word.
    pub perturbed: Vec<(usize, Matrix)>,
    pub theta: f64,
    pub v: nalgebra::DVector<f64>,
    pub w: nalgebra::DVector<f64>,
    /// Sine of the smallest principal angle between `L(E)` and `F`.
    pub principal_sine: f64,
    pub max_perturbation: f64,
}

/// Perturbs each letter of `word` by a rotation in a moving plane so that
/// the perturbed product maps a vector of `E` into `F`.
pub fn plane_rotation_align(
    set: &MatrixSet,
    word: &Word,
    e: &Subspace,
    f: &Subspace,
    epsilon: f64,
) -> Result<PlaneAlignment> {
    word.validate(set.len())?;
    let d = set.dim();
    let p = e.dim();
    if e.ambient() != d || f.ambient() != d {
        return Err(Error::DimensionMismatch { left: e.ambient(), right: d });
    }
    if p == 0 || p >= d || f.dim() != d - p {
        return Err(Error::InvalidArgument(format!(
            "need dim E = codim F in 1..{d}, got dim E = {p}, dim F = {}",
            f.dim()
        )));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
    }
    let letters: Vec<&Matrix> = word.indices().iter().map(|&i| set.matrix(i)).collect();
    let prod = LogProduct::from_word(set, word)?;
    let (_, s, vr) = sorted_svd(prod.unit());
    let tie = 1e-9;

    // S: right singular directions stretched by at most sigma_p; U: by at
    // least sigma_{p+1}.
    let not_s: Vec<usize> = (0..d).filter(|&i| s[i] > s[p - 1] * (1.0 + tie)).collect();
    let u_idx: Vec<usize> = (0..d).filter(|&i| s[i] >= s[p] * (1.0 - tie)).collect();
    let v = if not_s.is_empty() {
        e.basis.column(0).into_owned()
    } else {
        let ns = Matrix::from_fn(d, not_s.len(), |r, c| vr[(r, not_s[c])]);
        let (x, q) = null_vector(&(ns.transpose() * &e.basis));
        if q > 1e-8 {
            return Err(Error::Degenerate("E meets S only trivially".into()));
        }
        &e.basis * x
    };
    let u_basis = Matrix::from_fn(d, u_idx.len(), |r, c| vr[(r, u_idx[c])]);
    let f_perp = f.complement();
    let (y, q) = null_vector(&(f_perp.basis.transpose() * prod.unit() * &u_basis));
    if q > 1e-8 * op_norm(prod.unit()).max(1.0) {
        return Err(Error::Degenerate("no vector of U is mapped into F".into()));
    }
    let w = &u_basis * y;
    let v = v.normalize();
    let w = w.normalize();

    let max_norm = letters.iter().map(|m| op_norm(m)).fold(0.0, f64::max);
    let delta = angle_budget(epsilon, max_norm);

    let wv = w.dot(&v);
    let w_perp = &w - &v * wv;
    let (theta, planes) = if w_perp.norm() <= 1e-12 {
        // v and w are parallel, so P v already lies in F.
        (0.0, Vec::new())
    } else {
        let mut q0 = Matrix::zeros(d, 2);
        q0.set_column(0, &v);
        q0.set_column(1, &w_perp.normalize());
        if d == 2 && q0.determinant() < 0.0 {
            let c = -q0.column(1);
            q0.set_column(1, &c);
        }
        let w_coords = (q0.column(0).dot(&w), q0.column(1).dot(&w));
        let mut planes = Vec::with_capacity(letters.len());
        let mut blocks = Vec::with_capacity(letters.len());
        let mut q = q0;
        for m in &letters {
            let y = *m * &q;
            let r11 = y.column(0).norm();
            let q1 = y.column(0) / r11;
            let r12 = q1.dot(&y.column(1));
            let rest = y.column(1) - &q1 * r12;
            let r22 = rest.norm();
            if r22 <= 1e-300 {
                return Err(Error::Degenerate("plane collapsed under the word".into()));
            }
            let mut next = Matrix::zeros(d, 2);
            next.set_column(0, &q1);
            next.set_column(1, &(rest / r22));
            blocks.push(Matrix::from_row_slice(2, 2, &[r11, r12, 0.0, r22]));
            planes.push(next.clone());
            q = next;
        }
        let cert = align_2d(&blocks, (1.0, 0.0), w_coords, delta)?;
        (cert.theta, planes)
    };

    let rot = rotation(theta) - Matrix::identity(2, 2);
    let mut perturbed = Vec::with_capacity(letters.len());
    let mut max_perturbation = 0.0f64;
    for (pos, (&src, m)) in word.indices().iter().zip(&letters).enumerate() {
        let l = match planes.get(pos) {
            Some(q) if theta != 0.0 => {
                let r_hat = Matrix::identity(d, d) + q * &rot * q.transpose();
                r_hat * *m
            }
            _ => (*m).clone(),
        };
        max_perturbation = max_perturbation.max(op_norm(&(&l - *m)));
        perturbed.push((src, l));
    }
    if max_perturbation > epsilon * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::AngleBudget {
            needed: theta.abs(),
            available: delta,
        });
    }
    let mut total = LogProduct::identity(d);
    for (_, l) in &perturbed {
        let det = l.determinant();
        total.push_raw(l, det.abs().ln(), det.signum());
    }
    let principal_sine = f.sine_to(&e.image(total.unit())?);
    if principal_sine > 1e-6 {
        return Err(Error::NoConvergence {
            iterations: BISECTION_STEPS,
            residual: principal_sine,
        });
    }
    Ok(PlaneAlignment {
        perturbed,
        theta,
        v,
        w,
        principal_sine,
        max_perturbation,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZDeltaEntry {
    pub n: usize,
    /// `min zeta_ell(P) / n` over qualifying words; infinite when none qualify.
    pub value: f64,
    pub qualifying: u64,
    pub argmin: Option<Word>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZDeltaProfile {
    pub ell: usize,
    pub delta: f64,
    /// Upper estimate of the lower spectral radius of the `ell`-th exterior power.
    pub reference: f64,
    pub entries: Vec<ZDeltaEntry>,
    pub complete: bool,
}

/// Finite-length surrogate of `Z_delta`: for each `n`, the least `zeta_ell/n`
/// over words with `||wedge^ell P|| <= e^{n delta} reference^n`.
pub fn z_delta_profile(
    set: &MatrixSet,
    delta: f64,
    ell: usize,
    n_range: std::ops::RangeInclusive<usize>,
    budget: u64,
) -> Result<ZDeltaProfile> {
    let d = set.dim();
    if ell < 2 || ell > d {
        return Err(Error::IndexRange { k: ell, max: d });
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let (lo, hi) = (*n_range.start(), *n_range.end());
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument("empty length range".into()));
    }
    let reference = if ell == d {
        set.min_abs_det()
    } else {
        subradius_bracket(&lift_set(set, ell)?, 8, &BracketConfig::default())?.upper
    };
    let log_ref = reference.ln();
    let mut entries: Vec<ZDeltaEntry> = (lo..=hi)
        .map(|n| ZDeltaEntry {
            n,
            value: f64::INFINITY,
            qualifying: 0,
            argmin: None,
        })
        .collect();
    let mut nodes = 0u64;
    let mut complete = true;
    let mut stack: Vec<(LogProduct, Vec<usize>)> = (0..set.len())
        .rev()
        .map(|i| (LogProduct::from_word(set, &Word::single(i)).unwrap(), vec![i]))
        .collect();
    while let Some((p, word)) = stack.pop() {
        if nodes >= budget {
            complete = false;
            break;
        }
        nodes += 1;
        let n = word.len();
        if n >= lo {
            let prof = SpectrumProfile::from_lambdas(p.observables().log_singular_values, ell)?;
            let nf = n as f64;
            if prof.taus[ell] <= nf * (delta + log_ref) + 1e-12 * nf.max(1.0) {
                let z = prof.zeta(ell).unwrap() / nf;
                let e = &mut entries[n - lo];
                e.qualifying += 1;
                let w = Word::new(word.clone())?;
                let better = z < e.value || (z == e.value && e.argmin.as_ref().is_some_and(|a| w.shortlex_cmp(a).is_lt()));
                if better {
                    e.value = z;
                    e.argmin = Some(w);
                }
            }
        }
        if n < hi {
            for i in (0..set.len()).rev() {
                let mut c = p.clone();
                c.push(set, i);
                let mut wc = word.clone();
                wc.push(i);
                stack.push((c, wc));
            }
        }
    }
    Ok(ZDeltaProfile {
        ell,
        delta,
        reference,
        entries,
        complete,
    })
}

#[derive(Debug, Clone)]
pub struct PerturbConfig {
    /// Longest candidate for the pivot word `P`.
    pub n_max: usize,
    pub max_total_len: usize,
    pub max_connector_len: usize,
    /// All words up to this length are tried as connectors, besides powers.
    pub connector_word_len: usize,
    /// Word length for the reference bracket of the base set.
    pub reference_n_max: usize,
    pub domination_n_max: usize,
    /// Accepted improvements before stopping.
    pub max_rounds: usize,
    pub improvement_tol: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            n_max: 6,
            max_total_len: 512,
            max_connector_len: 64,
            connector_word_len: 3,
            reference_n_max: 12,
            domination_n_max: 10,
            max_rounds: 8,
            improvement_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectorKind {
    /// Rotations in moving planes.
    PlaneRotation,
    /// Exact dyadic shears of a scalar letter.
    Shear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedMatrix {
    pub label: String,
    pub source: usize,
    pub rows: Vec<Vec<f64>>,
}

impl PerturbedMatrix {
    pub fn matrix(&self) -> Matrix {
        let d = self.rows.len();
        Matrix::from_fn(d, d, |i, j| self.rows[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub pivot: Pivot,
    /// `lambda_p - lambda_{p+1}` of `P^k`.
    pub log_gap: f64,
    /// Sine of the smallest principal angle between `R(E)` and `F`.
    pub alignment_sine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCertificate {
    pub base_set_id: String,
    pub epsilon: f64,
    pub ell: usize,
    pub pivot_word: Word,
    pub pivot_power: usize,
    pub connector_kind: ConnectorKind,
    pub perturbed_matrices: Vec<PerturbedMatrix>,
    /// Over the extended set: base elements first, then `perturbed_matrices`.
    pub full_word: Word,
    pub achieved_rate: f64,
    pub reference_rate: f64,
    pub reference_n_max: usize,
    pub hausdorff: f64,
    pub gap_check: GapCheck,
}

impl PerturbationCertificate {
    pub fn extended_set(&self, base: &MatrixSet) -> Result<MatrixSet> {
        base.extended(
            self.perturbed_matrices.iter().map(|p| p.label.clone()).collect(),
            self.perturbed_matrices.iter().map(|p| p.matrix()).collect(),
        )
    }
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `2^j * I` for an integer `j`, if `m` has that form.
fn dyadic_scalar(m: &Matrix) -> Option<f64> {
    let d = m.nrows();
    let c = m[(0, 0)];
    let scalar = (0..d).all(|i| (0..d).all(|j| m[(i, j)] == if i == j { c } else { 0.0 }));
    (scalar && c > 0.0 && c.log2().fract() == 0.0).then_some(c)
}

struct Connector {
    kind: ConnectorKind,
    letters: Vec<(usize, Matrix)>,
    needed_angle: f64,
}

/// Exact connector from a scalar letter `cI`: `m` lower shears then `m`
/// upper shears send a coordinate axis in `E` onto one in `F`.
fn shear_connector(set: &MatrixSet, ef: &EfSubspaces, epsilon: f64, max_len: usize) -> Option<Connector> {
    let d = set.dim();
    let axis_in = |s: &Subspace| {
        (0..d).find(|&a| {
            let mut x = nalgebra::DVector::zeros(d);
            x[a] = 1.0;
            s.sine_of(&x) <= 1e-12
        })
    };
    let a = axis_in(&ef.e)?;
    let b = axis_in(&ef.f)?;
    if a == b || epsilon <= 0.0 {
        return None;
    }
    let (src, c) = (0..set.len()).find_map(|i| dyadic_scalar(set.matrix(i)).map(|c| (i, c)))?;
    let s = (c / epsilon).log2().ceil().max(0.0);
    let m = s.exp2() as usize;
    if 2 * m > max_len {
        return None;
    }
    let t = (-s).exp2();
    let mut lower = Matrix::identity(d, d);
    lower[(b, a)] = t;
    let mut upper = Matrix::identity(d, d);
    upper[(a, b)] = -t;
    let lower = lower * c;
    let upper = upper * c;
    let mut letters = vec![(src, lower); m];
    letters.extend(vec![(src, upper); m]);
    Some(Connector {
        kind: ConnectorKind::Shear,
        letters,
        needed_angle: 0.0,
    })
}

fn connector_words(set: &MatrixSet, cfg: &PerturbConfig) -> Vec<Word> {
    let mut words: Vec<Word> = Vec::new();
    let mut level: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..cfg.connector_word_len.min(cfg.max_connector_len) {
        level = level
            .iter()
            .flat_map(|w| {
                (0..set.len()).map(move |i| {
                    let mut x = w.clone();
                    x.push(i);
                    x
                })
            })
            .collect();
        words.extend(level.iter().map(|w| Word::new(w.clone()).unwrap()));
    }
    for i in 0..set.len() {
        for n in cfg.connector_word_len + 1..=cfg.max_connector_len {
            words.push(Word::power_of(i, n));
        }
    }
    words.sort_by(|a, b| a.shortlex_cmp(b));
    words.dedup();
    words
}

/// Pivot word: minimizes `||wedge^ell P||^(1/n)` over words up to `n_max`.
fn pivot_word(set: &MatrixSet, ell: usize, n_max: usize) -> Result<Word> {
    let mut best: Option<(f64, Word)> = None;
    let mut level: Vec<(LogProduct, Vec<usize>)> = vec![(LogProduct::identity(set.dim()), vec![])];
    for n in 1..=n_max {
        let mut next = Vec::new();
        for (p, w) in &level {
            for i in 0..set.len() {
                let mut c = p.clone();
                c.push(set, i);
                let mut wc = w.clone();
                wc.push(i);
                let ls = c.observables().log_singular_values;
                let rate = ls[..ell].iter().sum::<f64>() / n as f64;
                let word = Word::new(wc.clone())?;
                let better = match &best {
                    None => true,
                    Some((r, bw)) => rate < *r || (rate == *r && word.shortlex_cmp(bw).is_lt()),
                };
                if better {
                    best = Some((rate, word));
                }
                next.push((c, wc));
            }
        }
        if next.len() > 200_000 {
            break;
        }
        level = next;
    }
    Ok(best.expect("nonempty set").1)
}

/// One synthesis of `P^k R P^k` with a perturbed connector `R`; returns the
/// best certificate found, or the reason none exists.
pub fn perturb_reduce(set: &MatrixSet, epsilon: f64, cfg: &PerturbConfig) -> Result<PerturbationCertificate> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be finite and nonnegative".into()));
    }
    let d = set.dim();
    let ell = least_domination_index(set, cfg.domination_n_max, &DominationConfig::default())?.ell;
    if ell == 1 {
        return Err(Error::NoCertificate {
            reason: "set is 1-dominated: no pivot below the least domination index".into(),
            min_epsilon: None,
        });
    }
    let reference_rate = subradius_bracket(set, cfg.reference_n_max, &BracketConfig::default())?.upper;
    let p_word = pivot_word(set, ell, cfg.n_max)?;
    let p_prod = LogProduct::from_word(set, &p_word)?;
    let piv = pivot_from_lambdas(&p_prod.observables().log_singular_values, ell)?;
    if piv.gap <= 1e-12 {
        return Err(Error::NoCertificate {
            reason: "pivot word has no singular value gap".into(),
            min_epsilon: None,
        });
    }
    let plen = p_word.len();
    if 2 * plen + 1 > cfg.max_total_len {
        return Err(Error::InvalidArgument("max_total_len too small for the pivot word".into()));
    }
    let k_ref = ((cfg.max_total_len.saturating_sub(cfg.max_connector_len)) / (2 * plen)).max(1);
    let pk_word = p_word.repeat(k_ref);
    let pk = LogProduct::from_word(set, &pk_word)?;
    let ef = ef_subspaces(pk.unit(), piv.p)?;
    let log_gap = {
        let ls = pk.observables().log_singular_values;
        ls[piv.p - 1] - ls[piv.p]
    };

    let mut connectors: Vec<Connector> = Vec::new();
    let mut min_needed = f64::INFINITY;
    let mut last_error = String::from("no connector candidates");
    for w in connector_words(set, cfg) {
        match plane_rotation_align(set, &w, &ef.e, &ef.f, epsilon) {
            Ok(a) => connectors.push(Connector {
                kind: ConnectorKind::PlaneRotation,
                letters: a.perturbed,
                needed_angle: a.theta.abs(),
            }),
            Err(Error::AngleBudget { needed, .. }) => {
                let norm = w.indices().iter().map(|&i| op_norm(set.matrix(i))).fold(0.0, f64::max);
                min_needed = min_needed.min(2.0 * (needed / 2.0).sin() * norm);
                last_error = "required rotation exceeds the epsilon budget".into();
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    if let Some(c) = shear_connector(set, &ef, epsilon, cfg.max_connector_len) {
        connectors.push(c);
    }
    connectors.sort_by(|a, b| {
        a.letters
            .len()
            .cmp(&b.letters.len())
            .then(a.needed_angle.total_cmp(&b.needed_angle))
    });

    let mut best: Option<PerturbationCertificate> = None;
    let mut rounds = 0;
    for c in connectors {
        if rounds >= cfg.max_rounds {
            break;
        }
        // Distinct perturbed matrices become new elements.
        let mut extra: Vec<(usize, Matrix)> = Vec::new();
        let mut connector_idx = Vec::with_capacity(c.letters.len());
        for (src, l) in &c.letters {
            if l == set.matrix(*src) {
                connector_idx.push(*src);
                continue;
            }
            let pos = match extra.iter().position(|(_, m)| m == l) {
                Some(p) => p,
                None => {
                    extra.push((*src, l.clone()));
                    extra.len() - 1
                }
            };
            connector_idx.push(set.len() + pos);
        }
        let perturbed: Vec<PerturbedMatrix> = extra
            .iter()
            .enumerate()
            .map(|(j, (src, m))| PerturbedMatrix {
                label: format!("{}~{}", set.labels()[*src], j + 1),
                source: *src,
                rows: rows_of(m),
            })
            .collect();
        let ext = match set.extended(
            perturbed.iter().map(|p| p.label.clone()).collect(),
            extra.iter().map(|(_, m)| m.clone()).collect(),
        ) {
            Ok(s) => s,
            Err(e) => {
                last_error = e.to_string();
                continue;
            }
        };
        let k_max = (cfg.max_total_len.saturating_sub(connector_idx.len())) / (2 * plen);
        if k_max == 0 {
            continue;
        }
        let mut ks: Vec<usize> = (0..)
            .map(|i| 1usize << i)
            .take_while(|&k| k < k_max)
            .flat_map(|k| [k, k + k / 2])
            .filter(|&k| k < k_max)
            .collect();
        ks.push(k_max);
        ks.dedup();
        let connector = Word::new(connector_idx)?;
        let mut best_k: Option<(f64, usize, Word)> = None;
        for k in ks {
            let pk = p_word.repeat(k);
            let full = pk.then(&connector).then(&pk);
            let rate = evaluate_word(&ext, &full)?.rho_rate;
            if best_k.as_ref().is_none_or(|b| rate < b.0) {
                best_k = Some((rate, k, full));
            }
        }
        let (rate, k, full) = best_k.expect("at least one power");
        let improves = match &best {
            None => rate < reference_rate,
            Some(b) => rate < b.achieved_rate - cfg.improvement_tol,
        };
        if !improves {
            continue;
        }
        let mut r_prod = LogProduct::identity(d);
        for &i in connector.indices() {
            r_prod.push(&ext, i);
        }
        let alignment_sine = ef.f.sine_to(&ef.e.image(r_prod.unit())?);
        best = Some(PerturbationCertificate {
            base_set_id: set.digest(),
            epsilon,
            ell,
            pivot_word: p_word.clone(),
            pivot_power: k,
            connector_kind: c.kind,
            hausdorff: hausdorff_distance(set, &ext)?,
            perturbed_matrices: perturbed,
            full_word: full,
            achieved_rate: rate,
            reference_rate,
            reference_n_max: cfg.reference_n_max,
            gap_check: GapCheck {
                pivot: piv,
                log_gap,
                alignment_sine,
            },
        });
        rounds += 1;
    }
    best.ok_or(Error::NoCertificate {
        reason: last_error,
        min_epsilon: min_needed.is_finite().then_some(min_needed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub valid: bool,
    pub failures: Vec<String>,
    pub recomputed_rate: f64,
    pub recomputed_reference: f64,
    pub hausdorff: f64,
}

/// Re-checks a certificate against its base set without searching.
pub fn verify_certificate(base: &MatrixSet, cert: &PerturbationCertificate) -> Result<CertificateCheck> {
    let mut failures = Vec::new();
    if base.digest() != cert.base_set_id {
        failures.push("base set digest does not match".to_string());
    }
    let ext = cert.extended_set(base)?;
    for p in &cert.perturbed_matrices {
        if p.source >= base.len() {
            failures.push(format!("{}: source index out of range", p.label));
            continue;
        }
        let dist = op_norm(&(p.matrix() - base.matrix(p.source)));
        if dist > cert.epsilon * (1.0 + 1e-12) + 1e-15 {
            failures.push(format!("{}: perturbation {dist:e} exceeds epsilon", p.label));
        }
    }
    let hausdorff = hausdorff_distance(base, &ext)?;
    if hausdorff > cert.epsilon * (1.0 + 1e-12) + 1e-15 {
        failures.push(format!("Hausdorff distance {hausdorff:e} exceeds epsilon"));
    }
    let recomputed_rate = evaluate_word(&ext, &cert.full_word)?.rho_rate;
    if recomputed_rate != cert.achieved_rate {
        failures.push(format!(
            "achieved rate {recomputed_rate:e} differs from the recorded {:e}",
            cert.achieved_rate
        ));
    }
    let recomputed_reference = subradius_bracket(base, cert.reference_n_max, &BracketConfig::default())?.upper;
    if recomputed_rate >= recomputed_reference {
        failures.push("achieved rate does not drop below the reference".to_string());
    }
    Ok(CertificateCheck {
        valid: failures.is_empty(),
        failures,
        recomputed_rate,
        recomputed_reference,
        hausdorff,
    })
}

/// `||wedge^k M||`, used to cross-check singular value products.
pub fn wedge_norm(m: &Matrix, k: usize) -> Result<f64> {
    Ok(op_norm(&exterior_power(m, k)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matset::diag;

    fn simple() -> MatrixSet {
        MatrixSet::new(
            vec!["D".into(), "I".into()],
            vec![diag(&[2.0, 0.125]), Matrix::identity(2, 2)],
        )
        .unwrap()
    }

    #[test]
    fn zeta_examples() {
        let p = spectrum_profile(&(rotation(0.3) * 2.5), 2).unwrap();
        assert!(p.zeta(2).unwrap().abs() < 1e-14);
        let p = spectrum_profile(&diag(&[2.0, 0.125]), 2).unwrap();
        assert!((p.zeta(2).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(spectrum_profile(&diag(&[2.0, 0.125]), 3).is_err());
    }

    #[test]
    fn pivot_examples() {
        let p = pivot(&diag(&[8.0, 4.0, 1.0, 0.5]), 4).unwrap();
        assert_eq!(p.p, 2);
        assert!((p.gap - 2f64.ln()).abs() < 1e-12);
        let p = pivot(&(rotation(0.2) * 3.0), 2).unwrap();
        assert!(p.gap.abs() < 1e-14);
        let p = pivot(&diag(&[2.0, 0.125]), 2).unwrap();
        assert_eq!(p.p, 1);
        assert!((p.gap - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(pivot(&diag(&[2.0, 0.125]), 1).is_err());
        assert!(pivot(&diag(&[2.0, 0.125]), 3).is_err());
    }

    #[test]
    fn ef_examples() {
        let ef = ef_subspaces(&diag(&[4.0, 1.0]), 1).unwrap();
        assert!(ef.e.sine_of(&nalgebra::DVector::from_vec(vec![1.0, 0.0])) < 1e-15);
        assert!(ef.f.sine_of(&nalgebra::DVector::from_vec(vec![0.0, 1.0])) < 1e-15);
        let ef = ef_subspaces(&diag(&[4.0, 2.0, 1.0]), 2).unwrap();
        assert_eq!(ef.e.dim(), 2);
        assert!(ef.e.sine_of(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0])) < 1e-15);
        assert!(ef.f.sine_of(&nalgebra::DVector::from_vec(vec![0.0, 0.0, 1.0])) < 1e-15);
        assert!(ef_subspaces(&Matrix::identity(2, 2), 1).unwrap().degenerate);
    }

    #[test]
    fn subspace_angles() {
        let x = Subspace::coordinate_axes(3, &[0]).unwrap();
        let yz = Subspace::coordinate_axes(3, &[1, 2]).unwrap();
        assert!((yz.sine_to(&x) - 1.0).abs() < 1e-15);
        let xy = Subspace::coordinate_axes(3, &[0, 1]).unwrap();
        assert!(yz.sine_to(&xy) < 1e-15);
        assert_eq!(x.complement().dim(), 2);
    }

    #[test]
    fn identity_alignment() {
        for n in 1..=16 {
            let ms = vec![Matrix::identity(2, 2); n];
            let c = align_2d(&ms, (1.0, 0.0), (0.0, 1.0), PI / 2.0).unwrap();
            assert!((c.theta - PI / (2.0 * n as f64)).abs() < 1e-8, "n={n} theta={}", c.theta);
        }
        let ms = vec![diag(&[2.0, 0.5]); 3];
        let c = align_2d(&ms, (1.0, 1.0), (1.0, 1.0), 0.1).unwrap();
        assert_eq!(c.theta, 0.0);
        let ms = vec![Matrix::identity(2, 2); 4];
        let err = align_2d(&ms, (1.0, 0.0), (0.0, 1.0), 0.1).unwrap_err();
        assert!(matches!(err, Error::AngleBudget { needed, .. } if (needed - PI / 8.0).abs() < 1e-8));
        assert!(align_2d(&ms, (0.0, 0.0), (1.0, 0.0), 1.0).is_err());
        assert!(align_2d(&[diag(&[1.0, -1.0])], (1.0, 0.0), (1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn plane_alignment_on_identity_word() {
        let set = simple();
        let e = Subspace::coordinate_axes(2, &[0]).unwrap();
        let f = Subspace::coordinate_axes(2, &[1]).unwrap();
        for n in [4usize, 8, 32] {
            let eps = 2.0 * (PI / (4.0 * n as f64)).sin() * (1.0 + 1e-9);
            let a = plane_rotation_align(&set, &Word::power_of(1, n), &e, &f, eps).unwrap();
            let r = rotation(PI / (2.0 * n as f64));
            for (src, l) in &a.perturbed {
                assert_eq!(*src, 1);
                assert!((l - &r).amax() < 1e-9);
            }
            assert!(a.max_perturbation <= eps);
        }
        let three = MatrixSet::from_matrices(vec![Matrix::identity(3, 3)]).unwrap();
        let e = Subspace::coordinate_axes(3, &[0]).unwrap();
        let f = Subspace::coordinate_axes(3, &[1, 2]).unwrap();
        match plane_rotation_align(&three, &Word::single(0), &e, &f, 0.01) {
            Err(Error::AngleBudget { needed, .. }) => assert!((needed - PI / 2.0).abs() < 1e-8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn already_aligned_word_needs_no_perturbation() {
        let set = MatrixSet::from_matrices(vec![rotation(PI / 2.0)]).unwrap();
        let e = Subspace::coordinate_axes(2, &[0]).unwrap();
        let f = Subspace::coordinate_axes(2, &[1]).unwrap();
        let a = plane_rotation_align(&set, &Word::single(0), &e, &f, 0.01).unwrap();
        assert_eq!(a.max_perturbation, 0.0);
    }

    #[test]
    fn z_delta_examples() {
        let z = z_delta_profile(&simple(), 0.1, 2, 1..=8, 1_000_000).unwrap();
        for e in &z.entries {
            assert!(e.value >= 2f64.ln());
        }
        let conformal = MatrixSet::from_matrices(vec![rotation(0.3) * 2.0, rotation(1.1) * 2.0]).unwrap();
        let z = z_delta_profile(&conformal, 0.1, 2, 1..=5, 1_000_000).unwrap();
        assert!(z.entries.iter().all(|e| e.value.abs() < 1e-9));
        assert!(z_delta_profile(&simple(), 0.1, 1, 1..=3, 100).is_err());
    }

    #[test]
    fn simple_set_certificate() {
        let cert = perturb_reduce(&simple(), 0.05, &PerturbConfig::default()).unwrap();
        assert!(cert.achieved_rate <= 0.6, "{}", cert.achieved_rate);
        assert!(cert.hausdorff <= 0.05);
        let check = verify_certificate(&simple(), &cert).unwrap();
        assert!(check.valid, "{:?}", check.failures);
        assert!(matches!(
            perturb_reduce(&simple(), 0.0, &PerturbConfig::default()),
            Err(Error::NoCertificate { min_epsilon: Some(_), .. })
        ));
        let dominated = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).unwrap();
        assert!(matches!(
            perturb_reduce(&dominated, 0.05, &PerturbConfig::default()),
            Err(Error::NoCertificate { .. })
        ));
    }
}
