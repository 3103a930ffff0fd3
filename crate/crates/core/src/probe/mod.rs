//! Continuity verdicts, rotation scans and the impurity probe.

pub mod gallery;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domination::{least_domination_index, DominationConfig};
use crate::error::{Error, Result};
use crate::estimators::{subradius_bracket, BracketConfig, SubradiusBracket};
use crate::matset::{determinant, lift_set, rotation, LogProduct, Matrix, MatrixSet, Word};

pub use gallery::{block_direct_sum, gallery, rational_rotation, GallerySpec};

/// Relative margin for every verdict in this module.
pub const VERDICT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuity {
    Continuous,
    Discontinuous,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhsMethod {
    /// `ell = 1`: both sides are the same quantity.
    Identical,
    /// `ell = d`: `(min |det|)^(1/d)`.
    MinDeterminant,
    /// Bracket of the lifted set, to the power `1/ell`.
    Lifted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityVerdict {
    pub ell: usize,
    pub lhs: SubradiusBracket,
    pub rhs_lower: f64,
    pub rhs_upper: f64,
    pub rhs_method: RhsMethod,
    pub verdict: Continuity,
    pub margin: f64,
    /// Word attaining `lhs.upper`.
    pub lhs_witness: Word,
}

#[derive(Debug, Clone)]
pub struct ContinuityConfig {
    pub n_max: usize,
    pub domination_n_max: usize,
    pub bracket: BracketConfig,
    pub domination: DominationConfig,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            n_max: 12,
            domination_n_max: 10,
            bracket: BracketConfig::default(),
            domination: DominationConfig::default(),
        }
    }
}

/// Compares the lower spectral radius with that of the `ell`-th exterior
/// power (rooted), where `ell` is the least domination index.
pub fn continuity_check(set: &MatrixSet, cfg: &ContinuityConfig) -> Result<ContinuityVerdict> {
    let d = set.dim();
    let ell = least_domination_index(set, cfg.domination_n_max, &cfg.domination)?.ell;
    let lhs = subradius_bracket(set, cfg.n_max, &cfg.bracket)?;
    let (rhs_lower, rhs_upper, rhs_method) = if ell == 1 {
        (lhs.lower, lhs.upper, RhsMethod::Identical)
    } else if ell == d {
        let v = set.min_abs_det().powf(1.0 / d as f64);
        (v, v, RhsMethod::MinDeterminant)
    } else {
        let b = subradius_bracket(&lift_set(set, ell)?, cfg.n_max, &cfg.bracket)?;
        let root = 1.0 / ell as f64;
        (b.lower.powf(root), b.upper.powf(root), RhsMethod::Lifted)
    };
    let verdict = if ell == 1 {
        Continuity::Continuous
    } else if lhs.lower >= rhs_upper * (1.0 + VERDICT_MARGIN) {
        Continuity::Discontinuous
    } else if lhs.upper <= rhs_lower * (1.0 + VERDICT_MARGIN) {
        // lhs >= rhs always holds, so the brackets pin both to one value.
        Continuity::Continuous
    } else {
        Continuity::Undetermined
    };
    Ok(ContinuityVerdict {
        ell,
        lhs_witness: lhs.best_word.clone(),
        lhs,
        rhs_lower,
        rhs_upper,
        rhs_method,
        verdict,
        margin: VERDICT_MARGIN,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationScan {
    pub thetas: Vec<f64>,
    pub upper_rates: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub baseline_lower: f64,
    pub baseline_upper: f64,
    pub drop_detected: bool,
    /// `baseline_lower - min upper rate` over nonzero angles.
    pub drop: f64,
    pub n_max: usize,
}

impl RotationScan {
    /// CSV with columns `theta,upper_rate,lower_bound`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,upper_rate,lower_bound\n");
        for ((t, u), l) in self.thetas.iter().zip(&self.upper_rates).zip(&self.lower_bounds) {
            s.push_str(&format!("{t:.17e},{u:.17e},{l:.17e}\n"));
        }
        s
    }
}

/// Brackets of `R_theta A = {R_theta A_i}` over a grid of angles.
pub fn rotation_scan(set: &MatrixSet, thetas: &[f64], n_max: usize, cfg: &BracketConfig) -> Result<RotationScan> {
    if set.dim() != 2 {
        return Err(Error::NotPlanar(set.dim()));
    }
    let baseline = subradius_bracket(set, n_max, cfg)?;
    let brackets: Vec<SubradiusBracket> = thetas
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                Ok(baseline.clone())
            } else {
                subradius_bracket(&set.left_multiplied(&rotation(t))?, n_max, cfg)
            }
        })
        .collect::<Result<_>>()?;
    let min_upper = thetas
        .iter()
        .zip(&brackets)
        .filter(|(t, _)| **t != 0.0)
        .map(|(_, b)| b.upper)
        .fold(f64::INFINITY, f64::min);
    let drop = baseline.lower - min_upper;
    Ok(RotationScan {
        thetas: thetas.to_vec(),
        upper_rates: brackets.iter().map(|b| b.upper).collect(),
        lower_bounds: brackets.iter().map(|b| b.lower).collect(),
        baseline_lower: baseline.lower,
        baseline_upper: baseline.upper,
        drop_detected: min_upper <= baseline.lower * (1.0 - VERDICT_MARGIN),
        drop: if drop.is_finite() { drop } else { 0.0 },
        n_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpurityEntry {
    pub epsilon: f64,
    /// Least `(1/n) log ||P||` over words with at most `epsilon n` letters `R`.
    pub lambda_est: f64,
    pub word: Word,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpurityProbe {
    pub n_max: usize,
    pub entries: Vec<ImpurityEntry>,
}

/// Exhaustive search behind the impurity probe. Letters are `0 = H`, `1 = R`.
pub fn resists_impurities_probe(h: &Matrix, r: &Matrix, eps_grid: &[f64], n_max: usize) -> Result<ImpurityProbe> {
    for (name, m) in [("H", h), ("R", r)] {
        if m.nrows() != 2 || m.ncols() != 2 {
            return Err(Error::NotPlanar(m.nrows()));
        }
        let det = determinant(m);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{name} must have unit determinant, got {det}")));
        }
    }
    if n_max == 0 || n_max > 24 {
        return Err(Error::InvalidArgument("n_max must be in 1..=24".into()));
    }
    if eps_grid.iter().any(|e| !(*e >= 0.0 && *e <= 1.0)) {
        return Err(Error::InvalidArgument("epsilon values must lie in [0, 1]".into()));
    }
    let set = MatrixSet::new(vec!["H".into(), "R".into()], vec![h.clone(), r.clone()])?;
    let allowed = |eps: f64, n: usize| (eps * n as f64 + 1e-12).floor() as usize;
    let max_r = eps_grid.iter().map(|&e| allowed(e, n_max)).max().unwrap_or(0);
    let mut best: Vec<(f64, Vec<usize>)> = vec![(f64::INFINITY, Vec::new()); eps_grid.len()];
    let mut stack = vec![(LogProduct::identity(2), Vec::<usize>::new(), 0usize)];
    while let Some((p, word, rs)) = stack.pop() {
        let n = word.len();
        if n > 0 {
            let rate = p.log_norm() / n as f64;
            for (e, b) in eps_grid.iter().zip(best.iter_mut()) {
                let better = rate < b.0 || (rate == b.0 && (n, &word) < (b.1.len(), &b.1));
                if rs <= allowed(*e, n) && better {
                    *b = (rate, word.clone());
                }
            }
        }
        if n < n_max {
            for letter in [1usize, 0] {
                let next_rs = rs + letter;
                if next_rs > max_r {
                    continue;
                }
                let mut c = p.clone();
                c.push(&set, letter);
                let mut w = word.clone();
                w.push(letter);
                stack.push((c, w, next_rs));
            }
        }
    }
    let entries = eps_grid
        .iter()
        .zip(best)
        .map(|(&epsilon, (lambda_est, w))| {
            Ok(ImpurityEntry {
                epsilon,
                lambda_est,
                word: Word::new(w)?,
                positive: lambda_est > VERDICT_MARGIN,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ImpurityProbe { n_max, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matset::diag;
    use std::f64::consts::PI;

    #[test]
    fn simple_is_discontinuous() {
        let v = continuity_check(&gallery(&GallerySpec::Simple).unwrap(), &ContinuityConfig::default()).unwrap();
        assert_eq!(v.ell, 2);
        assert_eq!(v.verdict, Continuity::Discontinuous);
        assert!((v.rhs_upper - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dominated_singleton_is_continuous() {
        let set = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).unwrap();
        let v = continuity_check(&set, &ContinuityConfig::default()).unwrap();
        assert_eq!(v.ell, 1);
        assert_eq!(v.verdict, Continuity::Continuous);
    }

    #[test]
    fn isometry_scan_is_flat() {
        let set = MatrixSet::from_matrices(vec![rotation(0.7) * 1.5]).unwrap();
        let s = rotation_scan(&set, &[-0.1, 0.0, 0.2], 6, &BracketConfig::default()).unwrap();
        for u in &s.upper_rates {
            assert!((u - 1.5).abs() < 1e-12);
        }
        assert!(!s.drop_detected);
        assert!(s.to_csv().starts_with("theta,upper_rate,lower_bound\n"));
    }

    #[test]
    fn impurity_without_r_letters() {
        let p = resists_impurities_probe(&diag(&[2.0, 0.5]), &rotation(PI / 2.0), &[0.0], 8).unwrap();
        assert!((p.entries[0].lambda_est - 2f64.ln()).abs() < 1e-12);
        assert!(p.entries[0].positive);
        assert!(resists_impurities_probe(&diag(&[2.0, 1.0]), &rotation(0.1), &[0.0], 4).is_err());
    }
}
