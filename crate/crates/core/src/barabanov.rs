//! Lower and upper Barabanov functions of 1-dominated planar sets, computed
//! on a grid over an invariant multicone.
//!
//! The transfer operator is `(Lf)(u) = min_B [f(Bu) + log(|Bu| / |u|)]`
//! (max for the upper variant). Its fixed point modulo constants satisfies
//! `Lf = f + beta` with `beta = log` of the lower (upper) spectral radius.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domination::{invariance_margin, MulticoneApprox};
use crate::error::{Error, Result};
use crate::matset::{Matrix, MatrixSet, Word};
use crate::projective::{ccw_distance, image_angle, log_stretch, sine_distance, Arc};

/// `log(|A u| / |u|)` for the direction at angle `alpha`.
pub fn varphi(a: &Matrix, alpha: f64) -> f64 {
    log_stretch(a, alpha)
}

/// Values at uniformly spaced nodes inside each arc of a multicone,
/// interpolated linearly in angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectiveGridFunction {
    pub support: MulticoneApprox,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// First node index and node count per arc.
    segments: Vec<(usize, usize)>,
}

impl ProjectiveGridFunction {
    /// Grid of roughly `grid_size` nodes spread over the arcs by length,
    /// with value zero.
    pub fn zeros(support: &MulticoneApprox, grid_size: usize) -> Result<Self> {
        if support.arcs.is_empty() {
            return Err(Error::InvalidArgument("empty multicone".into()));
        }
        let total = support.total_length();
        let mut nodes = Vec::new();
        let mut segments = Vec::new();
        for arc in &support.arcs {
            let count = ((grid_size as f64 * arc.len / total).round() as usize).max(2);
            segments.push((nodes.len(), count));
            nodes.extend(arc.nodes(count));
        }
        let values = vec![0.0; nodes.len()];
        Ok(Self {
            support: support.clone(),
            nodes,
            values,
            segments,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest spacing between adjacent nodes.
    pub fn grid_step(&self) -> f64 {
        self.support
            .arcs
            .iter()
            .zip(&self.segments)
            .map(|(a, &(_, c))| a.len / (c - 1) as f64)
            .fold(0.0, f64::max)
    }

    /// Interpolation stencil `(i, w)`: value `(1 - w) f[i] + w f[i + 1]`.
    fn locate(&self, alpha: f64) -> Result<(usize, f64)> {
        const EDGE: f64 = 1e-12;
        for (arc, &(first, count)) in self.support.arcs.iter().zip(&self.segments) {
            let mut t = ccw_distance(arc.start, alpha);
            if t > arc.len {
                // Allow rounding just outside either endpoint.
                if t - arc.len <= EDGE {
                    t = arc.len;
                } else if std::f64::consts::PI - t <= EDGE {
                    t = 0.0;
                } else {
                    continue;
                }
            }
            let h = arc.len / (count - 1) as f64;
            let pos = if h > 0.0 { t / h } else { 0.0 };
            let i = (pos.floor() as usize).min(count - 2);
            return Ok((first + i, (pos - i as f64).clamp(0.0, 1.0)));
        }
        Err(Error::SupportEscaped { angle: alpha })
    }

    pub fn eval(&self, alpha: f64) -> Result<f64> {
        let (i, w) = self.locate(alpha)?;
        Ok(self.interp(i, w))
    }

    fn interp(&self, i: usize, w: f64) -> f64 {
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// Largest slope between adjacent nodes of the same arc.
    pub fn discrete_lipschitz(&self) -> f64 {
        discrete_lipschitz(&self.support.arcs, &self.segments, &self.values)
    }

    /// CSV with header `angle,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("angle,value\n");
        for (a, v) in self.nodes.iter().zip(&self.values) {
            let _ = writeln!(s, "{a:.17e},{v:.17e}");
        }
        s
    }
}

fn discrete_lipschitz(arcs: &[Arc], segments: &[(usize, usize)], values: &[f64]) -> f64 {
    let mut lip = 0.0f64;
    for (arc, &(first, count)) in arcs.iter().zip(segments) {
        let h = arc.len / (count - 1) as f64;
        if h <= 0.0 {
            continue;
        }
        for i in first..first + count - 1 {
            lip = lip.max((values[i + 1] - values[i]).abs() / h);
        }
    }
    lip
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extremum {
    /// Lower Barabanov function (min over the set).
    Lower,
    /// Upper Barabanov function (max over the set).
    Upper,
}

#[derive(Debug, Clone)]
pub struct BarabanovConfig {
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BarabanovConfig {
    fn default() -> Self {
        Self {
            grid_size: 4096,
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarabanovResult {
    pub kind: Extremum,
    pub beta: f64,
    pub psi: ProjectiveGridFunction,
    /// `sup |Lf - f - beta|` at the last iterate.
    pub residual: f64,
    pub contraction_estimate: f64,
    /// `residual / (1 - contraction_estimate)`.
    pub error_bar: f64,
    pub lipschitz: f64,
    /// `max_B Lip(varphi(B, .)) / (1 - contraction_estimate)`.
    pub lipschitz_bound: f64,
    pub iterations: usize,
}

impl BarabanovResult {
    /// `exp(beta)`, the estimate of the lower or upper spectral radius.
    pub fn radius(&self) -> f64 {
        self.beta.exp()
    }
}

/// Node-wise images under each element: interpolation stencil plus the
/// stretch term.
struct Transitions {
    /// Indexed `[node * m + b]`.
    stencil: Vec<(usize, f64, f64)>,
    per_node: usize,
}

impl Transitions {
    fn new(set: &MatrixSet, f: &ProjectiveGridFunction) -> Result<Self> {
        let m = set.len();
        let stencil: Result<Vec<Vec<(usize, f64, f64)>>> = f
            .nodes
            .par_iter()
            .map(|&u| {
                set.matrices()
                    .iter()
                    .map(|b| {
                        let (i, w) = f.locate(image_angle(b, u))?;
                        Ok((i, w, varphi(b, u)))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            stencil: stencil?.into_iter().flatten().collect(),
            per_node: m,
        })
    }

    fn apply(&self, kind: Extremum, values: &[f64], out: &mut [f64]) {
        for (node, o) in out.iter_mut().enumerate() {
            let row = &self.stencil[node * self.per_node..(node + 1) * self.per_node];
            let vals = row
                .iter()
                .map(|&(i, w, phi)| (1.0 - w) * values[i] + w * values[i + 1] + phi);
            *o = match kind {
                Extremum::Lower => vals.fold(f64::INFINITY, f64::min),
                Extremum::Upper => vals.fold(f64::NEG_INFINITY, f64::max),
            };
        }
    }
}

fn check_support(set: &MatrixSet, support: &MulticoneApprox) -> Result<()> {
    if set.dim() != 2 {
        return Err(Error::NotPlanar(set.dim()));
    }
    if invariance_margin(set, &support.arcs, 0.0).is_none() {
        return Err(Error::InvalidArgument(
            "multicone is not strictly invariant under the set".into(),
        ));
    }
    Ok(())
}

/// One application of the transfer operator.
pub fn apply_transfer_operator(
    set: &MatrixSet,
    f: &ProjectiveGridFunction,
    kind: Extremum,
) -> Result<ProjectiveGridFunction> {
    if set.dim() != 2 {
        return Err(Error::NotPlanar(set.dim()));
    }
    let t = Transitions::new(set, f)?;
    let mut out = f.clone();
    t.apply(kind, &f.values, &mut out.values);
    Ok(out)
}

/// Empirical contraction of the projective action in the sine metric:
/// `min over n <= 4 of (max ratio over words of length n)^(1/n)`.
pub fn contraction_estimate(set: &MatrixSet, f: &ProjectiveGridFunction) -> f64 {
    let stride = (f.len() / 256).max(1);
    let pairs: Vec<(f64, f64)> = f
        .segments
        .iter()
        .flat_map(|&(first, count)| {
            (first..first + count - 1)
                .step_by(stride)
                .map(move |i| (i, i + 1))
        })
        .map(|(i, j)| (f.nodes[i], f.nodes[j]))
        .filter(|(a, b)| sine_distance(*a, *b) > 0.0)
        .collect();
    let mut best = f64::INFINITY;
    let mut words: Vec<Word> = vec![];
    for n in 1..=4 {
        words = if n == 1 {
            (0..set.len()).map(Word::single).collect()
        } else {
            words
                .iter()
                .flat_map(|w| (0..set.len()).map(move |i| w.then(&Word::single(i))))
                .collect()
        };
        if words.len() > 256 {
            break;
        }
        let theta = words
            .iter()
            .map(|w| {
                let m = crate::matset::product(set, w).unwrap();
                pairs
                    .iter()
                    .map(|&(a, b)| sine_distance(image_angle(&m, a), image_angle(&m, b)) / sine_distance(a, b))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        best = best.min(theta.powf(1.0 / n as f64));
    }
    best
}

/// Iterations without halving the residual before damping kicks in.
const STALL_WINDOW: usize = 200;

fn iterate(
    set: &MatrixSet,
    support: &MulticoneApprox,
    cfg: &BarabanovConfig,
    kind: Extremum,
) -> Result<BarabanovResult> {
    check_support(set, support)?;
    let mut f = ProjectiveGridFunction::zeros(support, cfg.grid_size)?;
    let t = Transitions::new(set, &f)?;
    let n = f.len() as f64;
    let mut next = vec![0.0; f.len()];
    let mut beta_prev = f64::NAN;
    let mut residual = f64::INFINITY;
    // Plain iteration can cycle; once the residual stalls, switch to the
    // averaged map (f + Tf)/2, which has the same eigenvectors.
    let mut best_residual = f64::INFINITY;
    let mut stalled = 0;
    let mut damped = false;
    for it in 1..=cfg.max_iter {
        t.apply(kind, &f.values, &mut next);
        let beta = next.iter().sum::<f64>() / n - f.values.iter().sum::<f64>() / n;
        residual = next
            .iter()
            .zip(&f.values)
            .map(|(a, b)| (a - b - beta).abs())
            .fold(0.0, f64::max);
        if residual <= cfg.tol && (beta - beta_prev).abs() <= cfg.tol {
            // `f` is already the eigenvector; keep it normalized.
        } else {
            if residual < 0.5 * best_residual {
                best_residual = residual;
                stalled = 0;
            } else {
                stalled += 1;
                damped |= stalled >= STALL_WINDOW;
            }
            if damped {
                for (x, v) in next.iter_mut().zip(&f.values) {
                    *x = 0.5 * (*x + v);
                }
            }
            let mean = next.iter().sum::<f64>() / n;
            for (v, x) in f.values.iter_mut().zip(&next) {
                *v = x - mean;
            }
            beta_prev = beta;
            continue;
        }
        if residual <= cfg.tol && (beta - beta_prev).abs() <= cfg.tol {
            let theta = contraction_estimate(set, &f);
            let phi_lip = set
                .matrices()
                .iter()
                .map(|b| {
                    let vals: Vec<f64> = f.nodes.iter().map(|&u| varphi(b, u)).collect();
                    discrete_lipschitz(&f.support.arcs, &f.segments, &vals)
                })
                .fold(0.0, f64::max);
            let lipschitz = f.discrete_lipschitz();
            let room = 1.0 - theta;
            return Ok(BarabanovResult {
                kind,
                beta,
                residual,
                contraction_estimate: theta,
                error_bar: if room > 0.0 { residual / room } else { f64::INFINITY },
                lipschitz,
                lipschitz_bound: if room > 0.0 { phi_lip / room } else { f64::INFINITY },
                iterations: it,
                psi: f,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Lower Barabanov function; `exp(beta)` estimates the lower spectral radius.
pub fn compute_barabanov(set: &MatrixSet, multicone: &MulticoneApprox, cfg: &BarabanovConfig) -> Result<BarabanovResult> {
    iterate(set, multicone, cfg, Extremum::Lower)
}

/// Upper Barabanov function; `exp(beta)` estimates the joint spectral radius.
pub fn compute_upper_barabanov(
    set: &MatrixSet,
    multicone: &MulticoneApprox,
    cfg: &BarabanovConfig,
) -> Result<BarabanovResult> {
    iterate(set, multicone, cfg, Extremum::Upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domination::{find_multicone_2d, MulticoneConfig, MulticoneSearch};
    use crate::matset::{diag, rotation};
    use std::f64::consts::PI;

    fn cone(set: &MatrixSet) -> MulticoneApprox {
        match find_multicone_2d(set, &MulticoneConfig::default()).unwrap() {
            MulticoneSearch::Found(m) => m,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn varphi_examples() {
        assert!(varphi(&rotation(0.4), 1.1).abs() < 1e-15);
        let d = diag(&[2.0, 0.125]);
        assert!((varphi(&d, 0.0) - 2f64.ln()).abs() < 1e-15);
        let oracle = 0.5 * ((4.0 + 1.0 / 64.0) / 2.0f64).ln();
        assert!((varphi(&d, PI / 4.0) - oracle).abs() < 1e-15);
    }

    #[test]
    fn transfer_operator_basics() {
        let set = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).unwrap();
        let support = cone(&set);
        let mut f = ProjectiveGridFunction::zeros(&support, 64).unwrap();
        let lf = apply_transfer_operator(&set, &f, Extremum::Lower).unwrap();
        for (u, v) in f.nodes.iter().zip(&lf.values) {
            assert!((v - varphi(set.matrix(0), *u)).abs() < 1e-15);
        }
        let at_zero = lf.eval(0.0).unwrap();
        assert!((at_zero - 2f64.ln()).abs() < 1e-6);
        f.values.iter_mut().for_each(|v| *v = 3.5);
        let lc = apply_transfer_operator(&set, &f, Extremum::Lower).unwrap();
        for (a, b) in lc.values.iter().zip(&lf.values) {
            assert!((a - b - 3.5).abs() < 1e-14);
        }
    }

    #[test]
    fn singleton_beta() {
        for c in [0.5, 1.0, 3.0] {
            let set = MatrixSet::from_matrices(vec![diag(&[2.0 * c, 0.125 * c])]).unwrap();
            let r = compute_barabanov(&set, &cone(&set), &BarabanovConfig::default()).unwrap();
            assert!((r.beta - (2.0 * c).ln()).abs() <= 1e-3);
            assert!(r.residual <= 1e-9);
            assert!(r.contraction_estimate < 1.0);
            let u = compute_upper_barabanov(&set, &cone(&set), &BarabanovConfig::default()).unwrap();
            assert!((u.beta - (2.0 * c).ln()).abs() <= 1e-3);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let three = MatrixSet::from_matrices(vec![diag(&[2.0, 1.0, 0.5])]).unwrap();
        let fake = MulticoneApprox {
            arcs: vec![Arc::centered(0.0, 0.1)],
            margin: 0.01,
        };
        assert!(matches!(
            compute_barabanov(&three, &fake, &BarabanovConfig::default()),
            Err(Error::NotPlanar(3))
        ));
        let rot = MatrixSet::from_matrices(vec![rotation(1.0)]).unwrap();
        assert!(compute_barabanov(&rot, &fake, &BarabanovConfig::default()).is_err());
    }

    #[test]
    fn cycling_iteration_is_damped() {
        let set = MatrixSet::from_matrices(vec![
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.25, 1.0]),
            Matrix::from_row_slice(2, 2, &[2.2, -0.3, 0.0, 0.25]),
        ])
        .unwrap();
        let cfg = BarabanovConfig {
            grid_size: 1024,
            ..BarabanovConfig::default()
        };
        let r = compute_barabanov(&set, &cone(&set), &cfg).unwrap();
        assert!(r.residual <= cfg.tol);
        let b = crate::estimators::subradius_bracket(&set, 12, &crate::estimators::BracketConfig::default()).unwrap();
        assert!(r.radius() >= b.lower && r.radius() <= b.upper * (1.0 + 1e-6), "{} vs {:?}", r.radius(), (b.lower, b.upper));
    }
}
