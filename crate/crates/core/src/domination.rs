//! Domination: exponential gaps between consecutive singular values of all
//! products, and invariant multicones on the projective line.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matset::{LogProduct, MatrixSet, Word};
use crate::projective::{merge_arcs, total_length, Arc};

/// Cap on words examined by one ratio profile.
pub const PROFILE_BUDGET: u64 = 20_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioProfile {
    pub k: usize,
    /// `log r_n` for `n = 1..=n_max`.
    pub log_ratios: Vec<f64>,
    /// A word attaining `r_n`, per length.
    pub witnesses: Vec<Word>,
    /// Longest length that was enumerated (may be below the request when
    /// the budget is too small).
    pub n_max: usize,
    pub evaluations: u64,
}

impl RatioProfile {
    pub fn ratios(&self) -> Vec<f64> {
        self.log_ratios.iter().map(|x| x.exp()).collect()
    }
}

fn log_gap(p: &LogProduct, k: usize) -> f64 {
    let ls = p.observables().log_singular_values;
    ls[k] - ls[k - 1]
}

fn better_max(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> bool {
    match b.0.total_cmp(&a.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => b.1 < a.1,
    }
}

/// `r_n = max over words of length n of sigma_{k+1} / sigma_k`, exhaustively.
pub fn ratio_profile(set: &MatrixSet, k: usize, n_max: usize) -> Result<RatioProfile> {
    ratio_profile_with_budget(set, k, n_max, PROFILE_BUDGET)
}

pub fn ratio_profile_with_budget(set: &MatrixSet, k: usize, n_max: usize, budget: u64) -> Result<RatioProfile> {
    let d = set.dim();
    if k == 0 || k >= d {
        return Err(Error::IndexRange { k, max: d.saturating_sub(1) });
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    // Largest length whose full tree fits in the budget.
    let mut n_eff = 0;
    let mut total = 0u64;
    let mut level = 1u64;
    while n_eff < n_max {
        level = level.saturating_mul(set.len() as u64);
        if total.saturating_add(level) > budget {
            break;
        }
        total += level;
        n_eff += 1;
    }
    let n_eff = n_eff.max(1);

    fn walk(
        set: &MatrixSet,
        k: usize,
        n_max: usize,
        p: &LogProduct,
        word: &mut Vec<usize>,
        best: &mut [(f64, Vec<usize>)],
    ) {
        let n = word.len();
        let cand = (log_gap(p, k), word.clone());
        if better_max(&best[n - 1], &cand) {
            best[n - 1] = cand;
        }
        if n == n_max {
            return;
        }
        for i in 0..set.len() {
            let mut c = p.clone();
            c.push(set, i);
            word.push(i);
            walk(set, k, n_max, &c, word, best);
            word.pop();
        }
    }

    let per_branch: Vec<Vec<(f64, Vec<usize>)>> = (0..set.len())
        .into_par_iter()
        .map(|first| {
            let mut best = vec![(f64::NEG_INFINITY, Vec::new()); n_eff];
            let p = LogProduct::from_word(set, &Word::single(first)).unwrap();
            walk(set, k, n_eff, &p, &mut vec![first], &mut best);
            best
        })
        .collect();
    let mut best = vec![(f64::NEG_INFINITY, Vec::new()); n_eff];
    for branch in per_branch {
        for (b, c) in best.iter_mut().zip(branch) {
            if better_max(b, &c) {
                *b = c;
            }
        }
    }
    Ok(RatioProfile {
        k,
        log_ratios: best.iter().map(|b| b.0).collect(),
        witnesses: best.into_iter().map(|b| Word::new(b.1).unwrap()).collect(),
        n_max: n_eff,
        evaluations: total.max(set.len() as u64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Dominated,
    NotDominated,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct DominationConfig {
    /// Dominated requires `tau_fit <= 1 - margin`.
    pub margin: f64,
    pub min_r_squared: f64,
    /// Not dominated when `r_{n_max}` is at least this.
    pub flat_ratio: f64,
    /// Not dominated when some witness ratio is within this of 1.
    pub witness_tolerance: f64,
    /// Look for a multicone in d = 2 to certify a dominated verdict.
    pub certify_2d: bool,
}

impl Default for DominationConfig {
    fn default() -> Self {
        Self {
            margin: 0.02,
            min_r_squared: 0.99,
            flat_ratio: 0.5,
            witness_tolerance: 1e-6,
            certify_2d: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub k: usize,
    pub profile: Vec<f64>,
    /// Least-squares slope of `log r_n` over the last half of the profile.
    pub slope: f64,
    pub tau_fit: f64,
    /// Smallest `C` with `r_n <= C tau_fit^n` on the whole profile.
    pub c_fit: f64,
    pub r_squared: f64,
    pub verdict: Verdict,
    /// Dominated and backed by a strictly invariant multicone.
    pub certified: bool,
    pub multicone: Option<MulticoneApprox>,
    pub witness_word: Word,
    pub n_max: usize,
}

/// Least squares fit of `y` against `x`; returns slope, intercept, R^2.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (ys[0] / xs[0], 0.0, 1.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot <= 1e-300 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

pub fn test_domination(set: &MatrixSet, k: usize, n_max: usize, cfg: &DominationConfig) -> Result<DominationReport> {
    let prof = ratio_profile(set, k, n_max)?;
    let n = prof.n_max;
    let start = n / 2;
    let xs: Vec<f64> = (start + 1..=n).map(|i| i as f64).collect();
    let ys = &prof.log_ratios[start..];
    let (slope, _, r_squared) = linear_fit(&xs, ys);
    let tau_fit = slope.exp();
    let log_c = prof
        .log_ratios
        .iter()
        .enumerate()
        .map(|(i, l)| l - (i + 1) as f64 * slope)
        .fold(f64::NEG_INFINITY, f64::max);

    let (top_idx, top) = prof
        .log_ratios
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    let mut verdict = if tau_fit <= 1.0 - cfg.margin && r_squared >= cfg.min_r_squared {
        Verdict::Dominated
    } else if prof.log_ratios[n - 1].exp() >= cfg.flat_ratio || top.exp() >= 1.0 - cfg.witness_tolerance {
        Verdict::NotDominated
    } else {
        Verdict::Undetermined
    };
    let witness_word = if verdict == Verdict::NotDominated && top.exp() >= 1.0 - cfg.witness_tolerance {
        prof.witnesses[top_idx].clone()
    } else {
        prof.witnesses[n - 1].clone()
    };
    // In d = 2 a strictly invariant multicone certifies domination, and
    // settles an inconclusive fit.
    let mut multicone = None;
    if set.dim() == 2 && cfg.certify_2d && verdict != Verdict::NotDominated {
        if let MulticoneSearch::Found(m) = find_multicone_2d(set, &MulticoneConfig::default())? {
            multicone = Some(m);
            verdict = Verdict::Dominated;
        }
    }
    Ok(DominationReport {
        k,
        profile: prof.ratios(),
        slope,
        tau_fit,
        c_fit: log_c.exp(),
        r_squared,
        verdict,
        certified: multicone.is_some(),
        multicone,
        witness_word,
        n_max: n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeastDominationIndex {
    pub ell: usize,
    pub per_k: Vec<DominationReport>,
}

/// Smallest `k` with a dominated verdict; `d` when none is found.
pub fn least_domination_index(set: &MatrixSet, n_max: usize, cfg: &DominationConfig) -> Result<LeastDominationIndex> {
    let d = set.dim();
    let mut per_k = Vec::new();
    for k in 1..d {
        let r = test_domination(set, k, n_max, cfg)?;
        let done = r.verdict == Verdict::Dominated;
        per_k.push(r);
        if done {
            return Ok(LeastDominationIndex { ell: k, per_k });
        }
    }
    Ok(LeastDominationIndex { ell: d, per_k })
}

/// Finite union of closed arcs mapped strictly inside itself by every
/// element of a planar set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticoneApprox {
    pub arcs: Vec<Arc>,
    /// Smallest angular distance from an image arc to the complement.
    pub margin: f64,
}

impl MulticoneApprox {
    pub fn locate(&self, alpha: f64) -> Option<usize> {
        self.arcs.iter().position(|a| a.contains(alpha))
    }

    pub fn total_length(&self) -> f64 {
        total_length(&self.arcs)
    }
}

#[derive(Debug, Clone)]
pub struct MulticoneConfig {
    pub seed_half_width: f64,
    pub seed_word_len: usize,
    pub max_rounds: usize,
    /// Widening applied to every computed image.
    pub slack: f64,
    /// Fattening amounts tried in turn.
    pub etas: Vec<f64>,
}

impl Default for MulticoneConfig {
    fn default() -> Self {
        Self {
            seed_half_width: 0.05,
            seed_word_len: 3,
            max_rounds: 200,
            slack: 1e-9,
            etas: vec![1e-2, 1e-3, 1e-4, 1e-5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum MulticoneSearch {
    Found(MulticoneApprox),
    Failed { reason: String },
}

/// Attracting eigendirection of a 2x2 matrix with real eigenvalues of
/// distinct moduli.
fn attracting_direction(p: &LogProduct) -> Option<f64> {
    let m = p.unit();
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let t = a + d;
    let det = a * d - b * c;
    let disc = t * t - 4.0 * det;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let lambda = if t >= 0.0 { 0.5 * (t + root) } else { 0.5 * (t - root) };
    let other = if lambda != 0.0 { det / lambda } else { 0.0 };
    if lambda.abs() <= other.abs() * (1.0 + 1e-9) {
        return None;
    }
    let v1 = (b, lambda - a);
    let v2 = (lambda - d, c);
    let v = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
    if v.0 == 0.0 && v.1 == 0.0 {
        return None;
    }
    Some(crate::projective::angle_of(v.0, v.1))
}

/// Margin of strict invariance of `arcs` under every element, or `None`
/// when some image is not contained in the union.
pub fn invariance_margin(set: &MatrixSet, arcs: &[Arc], slack: f64) -> Option<f64> {
    if arcs.is_empty() || total_length(arcs) >= std::f64::consts::PI {
        return None;
    }
    let mut margin = f64::INFINITY;
    for m in set.matrices() {
        for arc in arcs {
            let img = arc.image(m).fattened(slack);
            let gap = arcs.iter().filter_map(|a| a.gap_to(&img)).fold(None, |acc: Option<f64>, g| {
                Some(acc.map_or(g, |x| x.max(g)))
            })?;
            margin = margin.min(gap);
        }
    }
    (margin > 0.0).then_some(margin)
}

/// Searches for a strictly invariant finite union of arcs (d = 2).
pub fn find_multicone_2d(set: &MatrixSet, cfg: &MulticoneConfig) -> Result<MulticoneSearch> {
    if set.dim() != 2 {
        return Err(Error::NotPlanar(set.dim()));
    }
    let mut seeds = Vec::new();
    let mut frontier: Vec<LogProduct> = vec![LogProduct::identity(2)];
    for _ in 0..cfg.seed_word_len {
        let mut next = Vec::new();
        for p in &frontier {
            for i in 0..set.len() {
                let mut c = p.clone();
                c.push(set, i);
                if let Some(a) = attracting_direction(&c) {
                    seeds.push(Arc::centered(a, cfg.seed_half_width));
                }
                next.push(c);
            }
        }
        if next.len() > 4096 {
            break;
        }
        frontier = next;
    }
    if seeds.is_empty() {
        return Ok(MulticoneSearch::Failed {
            reason: "no short word has a dominant real eigenvalue".into(),
        });
    }
    let seeds = merge_arcs(&seeds);
    let mut last_reason = String::new();
    'eta: for &eta in &cfg.etas {
        let mut v = seeds.clone();
        for _ in 0..cfg.max_rounds {
            if total_length(&v) >= std::f64::consts::PI - 1e-12 {
                last_reason = format!("union covers the projective line at fattening {eta:e}");
                continue 'eta;
            }
            let images: Vec<Arc> = set
                .matrices()
                .iter()
                .flat_map(|m| v.iter().map(move |a| a.image(m).fattened(eta + cfg.slack)))
                .collect();
            let inside = images.iter().all(|img| v.iter().any(|a| a.gap_to(img).is_some()));
            if inside {
                if let Some(margin) = invariance_margin(set, &v, cfg.slack) {
                    return Ok(MulticoneSearch::Found(MulticoneApprox { arcs: v, margin }));
                }
            }
            let mut all = v.clone();
            all.extend(images);
            v = merge_arcs(&all);
        }
        last_reason = format!("no strictly invariant union within {} rounds at fattening {eta:e}", cfg.max_rounds);
    }
    Ok(MulticoneSearch::Failed { reason: last_reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matset::{diag, rotation, Matrix};
    use std::f64::consts::PI;

    fn single(m: Matrix) -> MatrixSet {
        MatrixSet::from_matrices(vec![m]).unwrap()
    }

    #[test]
    fn profile_of_diagonal_power() {
        let p = ratio_profile(&single(diag(&[2.0, 0.125])), 1, 10).unwrap();
        for (n, r) in p.ratios().iter().enumerate() {
            let oracle = 16f64.powi(-(n as i32 + 1));
            assert!((r / oracle - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isometries_keep_ratio_one() {
        let p = ratio_profile(&single(rotation(PI / 4.0)), 1, 8).unwrap();
        assert!(p.ratios().iter().all(|r| (r - 1.0).abs() < 1e-12));
        let simple = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125]), Matrix::identity(2, 2)]).unwrap();
        let p = ratio_profile(&simple, 1, 8).unwrap();
        assert!(p.ratios().iter().all(|&r| r == 1.0));
        assert!(ratio_profile(&simple, 2, 3).is_err());
    }

    #[test]
    fn verdicts() {
        let cfg = DominationConfig::default();
        let r = test_domination(&single(diag(&[2.0, 0.125])), 1, 12, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Dominated);
        assert!((r.slope / (1.0f64 / 16.0).ln() - 1.0).abs() < 0.01);
        assert!(r.certified);
        let simple = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125]), Matrix::identity(2, 2)]).unwrap();
        let r = test_domination(&simple, 1, 12, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::NotDominated);
        assert_eq!(r.witness_word, Word::single(1));
    }

    #[test]
    fn least_index_examples() {
        let cfg = DominationConfig::default();
        let simple = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125]), Matrix::identity(2, 2)]).unwrap();
        assert_eq!(least_domination_index(&simple, 10, &cfg).unwrap().ell, 2);
        assert_eq!(least_domination_index(&single(diag(&[2.0, 0.125])), 10, &cfg).unwrap().ell, 1);
        assert_eq!(least_domination_index(&single(diag(&[3.0, 3.0, 1.0])), 10, &cfg).unwrap().ell, 2);
    }

    #[test]
    fn multicone_examples() {
        let cfg = MulticoneConfig::default();
        match find_multicone_2d(&single(diag(&[2.0, 0.125])), &cfg).unwrap() {
            MulticoneSearch::Found(m) => {
                assert!(m.margin > 0.0);
                assert_eq!(m.arcs.len(), 1);
                assert!(m.arcs[0].contains(0.0));
                assert!(m.arcs[0].len / 2.0 <= PI / 8.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            find_multicone_2d(&single(rotation(PI / 4.0)), &cfg).unwrap(),
            MulticoneSearch::Failed { .. }
        ));
        let three = single(diag(&[1.0, 2.0, 3.0]));
        assert!(matches!(find_multicone_2d(&three, &cfg), Err(Error::NotPlanar(3))));
    }
}
