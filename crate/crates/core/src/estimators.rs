//! Two-sided brackets for the lower and upper spectral radius of a finite
//! matrix set.
//!
//! Upper bounds on the lower spectral radius come from finite words: every
//! product `P` of length `n` gives `rho(P)^(1/n) <= ||P||^(1/n)` as an upper
//! bound. Lower bounds come from the smallest singular value, the smallest
//! determinant, the exact linear program available for commuting diagonal
//! sets, and (when supplied) a lower Barabanov function.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matset::{lift_set, LogObservables, LogProduct, MatrixSet, Word};

/// Default cap on node expansions for one enumeration.
pub const DEFAULT_BUDGET: u64 = 50_000_000;

#[derive(Debug, Clone)]
pub struct WordEvaluation {
    pub length: usize,
    /// `||P||^(1/n)`.
    pub norm_rate: f64,
    /// `rho(P)^(1/n)`.
    pub rho_rate: f64,
    /// `|det P|^(1/(n d))`.
    pub det_rate: f64,
    pub observables: LogObservables,
}

/// Growth rates of the product named by `word`, computed in log scale.
pub fn evaluate_word(set: &MatrixSet, word: &Word) -> Result<WordEvaluation> {
    let p = LogProduct::from_word(set, word)?;
    let obs = p.observables();
    let n = word.len() as f64;
    Ok(WordEvaluation {
        length: word.len(),
        norm_rate: (obs.log_norm() / n).exp(),
        rho_rate: (obs.log_spectral_radius() / n).exp(),
        det_rate: (obs.log_abs_det / (n * set.dim() as f64)).exp(),
        observables: obs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    NormBased,
    SpectralRadiusBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerMethod {
    /// `min sigma_d` over the set.
    SigmaMinChain,
    /// `(min |det|)^(1/d)`.
    DetWedge,
    /// Supplied from a lower Barabanov function.
    Barabanov,
    /// Exact dual bound for simultaneously diagonal sets.
    CommutingExact,
}

#[derive(Debug, Clone)]
pub struct BracketConfig {
    /// Hard cap on node expansions.
    pub budget: u64,
    /// Evaluate spectral radii only on Lyndon words (one representative per
    /// rotation class).
    pub cyclic_reduction: bool,
    /// Use exponent-count formulas when every matrix is diagonal.
    pub commuting_fast_path: bool,
    /// External lower bound, e.g. `exp(beta - error)` from a Barabanov run.
    pub barabanov_lower: Option<f64>,
    pub parallel: bool,
}

impl Default for BracketConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            cyclic_reduction: true,
            commuting_fast_path: true,
            barabanov_lower: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubradiusBracket {
    pub lower: f64,
    pub upper: f64,
    pub best_word: Word,
    pub best_value_kind: ValueKind,
    pub n_max: usize,
    pub lower_method: LowerMethod,
    pub evaluations: u64,
    /// False when the node budget ran out before the enumeration finished.
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperRadiusBracket {
    pub lower: f64,
    pub upper: f64,
    pub n_max: usize,
    pub witness_word: Word,
    pub evaluations: u64,
    pub complete: bool,
}

/// Best candidate found so far: value, then shortlex word.
#[derive(Debug, Clone)]
struct Incumbent {
    value: f64,
    word: Word,
    kind: ValueKind,
}

impl Incumbent {
    fn better_than(&self, other: &Incumbent) -> bool {
        match self.value.total_cmp(&other.value) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.word.shortlex_cmp(&other.word) == Ordering::Less,
        }
    }
}

fn merge(a: Option<Incumbent>, b: Option<Incumbent>) -> Option<Incumbent> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(if b.better_than(&a) { b } else { a }),
    }
}

/// Lyndon test (strictly smaller than every proper rotation).
pub fn is_lyndon(w: &[usize]) -> bool {
    let n = w.len();
    let mut p = 1;
    for i in 1..n {
        match w[i].cmp(&w[i - p]) {
            Ordering::Less => return false,
            Ordering::Greater => p = i + 1,
            Ordering::Equal => {}
        }
    }
    p == n
}

fn candidate(p: &LogProduct, word: &[usize]) -> Incumbent {
    let n = word.len() as f64;
    let log_norm = p.log_norm();
    let log_rho = p.log_spectral_radius();
    let norm_rate = (log_norm / n).exp();
    let rho_rate = (log_rho / n).exp();
    let (value, kind) = if norm_rate <= rho_rate {
        (norm_rate, ValueKind::NormBased)
    } else {
        (rho_rate, ValueKind::SpectralRadiusBased)
    };
    Incumbent {
        value,
        word: Word::new(word.to_vec()).expect("nonempty"),
        kind,
    }
}

struct SubtreeSearch<'a> {
    set: &'a MatrixSet,
    n_max: usize,
    cyclic: bool,
    min_log_det: f64,
    budget: u64,
    nodes: u64,
    exhausted: bool,
    best: Option<Incumbent>,
}

impl SubtreeSearch<'_> {
    fn log_incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.value.ln())
    }

    /// Sound cut: every extension of length `n` has
    /// `log rho >= (log|det P| + (n - m) min log|det A|) / d`.
    fn prunable(&self, p: &LogProduct, m: usize) -> bool {
        if m >= self.n_max {
            return true;
        }
        let d = self.set.dim() as f64;
        let target = self.log_incumbent();
        let bound = |n: usize| {
            (p.log_abs_det() + (n - m) as f64 * self.min_log_det) / (n as f64 * d)
        };
        bound(m + 1) > target && bound(self.n_max) > target
    }

    fn visit(&mut self, p: &LogProduct, word: &mut Vec<usize>) {
        if self.nodes >= self.budget {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        if !self.cyclic || is_lyndon(word) {
            let c = candidate(p, word);
            if self.best.as_ref().is_none_or(|b| c.better_than(b)) {
                self.best = Some(c);
            }
        }
        if self.prunable(p, word.len()) {
            return;
        }
        for i in 0..self.set.len() {
            let mut child = p.clone();
            child.push(self.set, i);
            word.push(i);
            self.visit(&child, word);
            word.pop();
            if self.exhausted {
                return;
            }
        }
    }
}

fn thread_count() -> usize {
    rayon::current_num_threads().max(1)
}

/// Minimum of `min(norm_rate, rho_rate)` over all words of length at most
/// `n_max`, with sound determinant pruning.
fn enumerate_upper(set: &MatrixSet, n_max: usize, cfg: &BracketConfig) -> (Option<Incumbent>, u64, bool) {
    let min_log_det = (0..set.len())
        .map(|i| set.log_abs_det(i))
        .fold(f64::INFINITY, f64::min);
    // Seed every subtree with the best single letter so that branches prune
    // identically regardless of scheduling.
    let seed = (0..set.len())
        .map(|i| {
            let p = LogProduct::from_word(set, &Word::single(i)).unwrap();
            Some(candidate(&p, &[i]))
        })
        .fold(None, merge);
    let per_branch = (cfg.budget / set.len() as u64).max(1);
    let run = |first: usize| {
        let mut search = SubtreeSearch {
            set,
            n_max,
            cyclic: cfg.cyclic_reduction,
            min_log_det,
            budget: per_branch,
            nodes: 0,
            exhausted: false,
            best: seed.clone(),
        };
        let p = LogProduct::from_word(set, &Word::single(first)).unwrap();
        let mut word = vec![first];
        search.visit(&p, &mut word);
        (search.best, search.nodes, !search.exhausted)
    };
    let results: Vec<_> = if cfg.parallel && thread_count() > 1 {
        (0..set.len()).into_par_iter().map(run).collect()
    } else {
        (0..set.len()).map(run).collect()
    };
    results.into_iter().fold((None, 0, true), |(b, n, c), (rb, rn, rc)| {
        (merge(b, rb), n + rn, c && rc)
    })
}

/// Exponent-count enumeration for simultaneously diagonal sets:
/// `rho(P) = ||P|| = max_j prod_i |a_ij|^{c_i}`.
fn commuting_upper(set: &MatrixSet, n_max: usize, budget: u64) -> (Option<Incumbent>, u64, bool) {
    let logs = diagonal_logs(set);
    let k = set.len();
    let mut best: Option<Incumbent> = None;
    let mut evaluations = 0u64;
    let mut counts = vec![0usize; k];
    for n in 1..=n_max {
        let mut complete = true;
        for_each_composition(n, &mut counts, 0, &mut |c| {
            if evaluations >= budget {
                complete = false;
                return false;
            }
            evaluations += 1;
            if gcd_all(c) != 1 {
                return true;
            }
            let rate = (max_linear(&logs, c) / n as f64).exp();
            let word: Vec<usize> = c
                .iter()
                .enumerate()
                .flat_map(|(i, &ci)| std::iter::repeat_n(i, ci))
                .collect();
            let cand = Incumbent {
                value: rate,
                word: Word::new(word).unwrap(),
                kind: ValueKind::NormBased,
            };
            if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                best = Some(cand);
            }
            true
        });
        if !complete {
            return (best, evaluations, false);
        }
    }
    (best, evaluations, true)
}

fn gcd_all(c: &[usize]) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    c.iter().fold(0, |g, &x| gcd(g, x))
}

fn max_linear(logs: &[Vec<f64>], counts: &[usize]) -> f64 {
    let d = logs[0].len();
    (0..d)
        .map(|j| {
            counts
                .iter()
                .zip(logs)
                .map(|(&c, l)| c as f64 * l[j])
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Calls `f` on every composition of `n` into `counts.len()` nonnegative
/// parts; stops early when `f` returns false.
fn for_each_composition(
    n: usize,
    counts: &mut [usize],
    pos: usize,
    f: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    let k = counts.len();
    if pos == k - 1 {
        counts[pos] = n;
        return f(counts);
    }
    for c in (0..=n).rev() {
        counts[pos] = c;
        if !for_each_composition(n - c, counts, pos + 1, f) {
            return false;
        }
    }
    true
}

/// `log |a_jj|` per matrix, for diagonal sets.
fn diagonal_logs(set: &MatrixSet) -> Vec<Vec<f64>> {
    set.matrices()
        .iter()
        .map(|m| (0..set.dim()).map(|j| m[(j, j)].abs().ln()).collect())
        .collect()
}

/// Certified lower bound on the lower spectral radius of a diagonal set.
///
/// For any weight vector `q` on the coordinates, every product with letter
/// frequencies `p` satisfies `log rho / n = max_j sum_i p_i l_ij >= min_i sum_j q_j l_ij`.
/// In d = 2 the best `q` is found exactly among the breakpoints.
pub fn commuting_lower_bound(set: &MatrixSet) -> Option<f64> {
    if !set.is_simultaneously_diagonal() {
        return None;
    }
    let logs = diagonal_logs(set);
    let d = set.dim();
    let value_at = |q: &[f64]| {
        logs.iter()
            .map(|l| l.iter().zip(q).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = f64::NEG_INFINITY;
    for j in 0..d {
        let mut q = vec![0.0; d];
        q[j] = 1.0;
        best = best.max(value_at(&q));
    }
    if d == 2 {
        for a in &logs {
            for b in &logs {
                let denom = (a[0] - a[1]) - (b[0] - b[1]);
                if denom == 0.0 {
                    continue;
                }
                let q = (b[1] - a[1]) / denom;
                if (0.0..=1.0).contains(&q) {
                    best = best.max(value_at(&[q, 1.0 - q]));
                }
            }
        }
    } else if d > 2 {
        // Multiplicative-weights ascent; every iterate is a valid certificate.
        let mut q = vec![1.0 / d as f64; d];
        best = best.max(value_at(&q));
        let scale = logs
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(1e-300);
        for t in 1..=4000 {
            let worst = logs
                .iter()
                .min_by(|a, b| {
                    let va: f64 = a.iter().zip(&q).map(|(x, y)| x * y).sum();
                    let vb: f64 = b.iter().zip(&q).map(|(x, y)| x * y).sum();
                    va.total_cmp(&vb)
                })
                .unwrap();
            let eta = 1.0 / (scale * (t as f64).sqrt());
            for (qj, lj) in q.iter_mut().zip(worst) {
                *qj *= (eta * lj).exp();
            }
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= s);
            best = best.max(value_at(&q));
        }
    }
    Some(best.exp())
}

/// Lower bound candidates that need no enumeration.
fn static_lower(set: &MatrixSet, cfg: &BracketConfig) -> (f64, LowerMethod) {
    let mut lower = set.min_sigma_d();
    let mut method = LowerMethod::SigmaMinChain;
    let det = determinant_lower_bound(set);
    if det > lower {
        lower = det;
        method = LowerMethod::DetWedge;
    }
    if let Some(c) = commuting_lower_bound(set) {
        if c > lower {
            lower = c;
            method = LowerMethod::CommutingExact;
        }
    }
    if let Some(b) = cfg.barabanov_lower {
        if b > lower {
            lower = b;
            method = LowerMethod::Barabanov;
        }
    }
    (lower, method)
}

/// `(min |det|)^(1/d)`, exact lower spectral radius of the top exterior power.
pub fn determinant_lower_bound(set: &MatrixSet) -> f64 {
    let min_log = (0..set.len())
        .map(|i| set.log_abs_det(i))
        .fold(f64::INFINITY, f64::min);
    (min_log / set.dim() as f64).exp()
}

/// Certified bracket for the lower spectral radius using words of length at
/// most `n_max`.
pub fn subradius_bracket(set: &MatrixSet, n_max: usize, cfg: &BracketConfig) -> Result<SubradiusBracket> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let (best, evaluations, complete) = if cfg.commuting_fast_path && set.is_simultaneously_diagonal() {
        commuting_upper(set, n_max, cfg.budget)
    } else {
        enumerate_upper(set, n_max, cfg)
    };
    let best = best.expect("at least one word examined");
    let (lower, lower_method) = static_lower(set, cfg);
    Ok(SubradiusBracket {
        lower,
        upper: best.value,
        best_word: best.word,
        best_value_kind: best.kind,
        n_max,
        lower_method,
        evaluations,
        complete,
    })
}

/// Bracket for the upper spectral radius: `max rho^(1/n) <= rho_hat <= min_n max ||.||^(1/n)`.
pub fn upper_radius_bracket(set: &MatrixSet, n_max: usize, budget: u64) -> Result<UpperRadiusBracket> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    struct Walk<'a> {
        set: &'a MatrixSet,
        n_max: usize,
        budget: u64,
        nodes: u64,
        max_log_norm: Vec<f64>,
        best_rho: (f64, Vec<usize>),
    }
    impl Walk<'_> {
        fn visit(&mut self, p: &LogProduct, word: &mut Vec<usize>) -> bool {
            if self.nodes >= self.budget {
                return false;
            }
            self.nodes += 1;
            let n = word.len();
            let ln = p.log_norm();
            self.max_log_norm[n] = self.max_log_norm[n].max(ln);
            let rate = p.log_spectral_radius() / n as f64;
            let better = rate > self.best_rho.0
                || (rate == self.best_rho.0
                    && (n, word.as_slice()) < (self.best_rho.1.len(), self.best_rho.1.as_slice()));
            if better {
                self.best_rho = (rate, word.clone());
            }
            if n == self.n_max {
                return true;
            }
            for i in 0..self.set.len() {
                let mut child = p.clone();
                child.push(self.set, i);
                word.push(i);
                let ok = self.visit(&child, word);
                word.pop();
                if !ok {
                    return false;
                }
            }
            true
        }
    }
    let mut walk = Walk {
        set,
        n_max,
        budget,
        nodes: 0,
        max_log_norm: vec![f64::NEG_INFINITY; n_max + 1],
        best_rho: (f64::NEG_INFINITY, vec![]),
    };
    let mut complete = true;
    for first in 0..set.len() {
        let p = LogProduct::from_word(set, &Word::single(first))?;
        if !walk.visit(&p, &mut vec![first]) {
            complete = false;
            break;
        }
    }
    // A length is usable for the upper bound only if all its words were seen.
    let upper = (1..=n_max)
        .filter(|&n| complete || walk.nodes >= full_tree_size(set.len(), n))
        .map(|n| (walk.max_log_norm[n] / n as f64).exp())
        .fold(f64::INFINITY, f64::min);
    Ok(UpperRadiusBracket {
        lower: walk.best_rho.0.exp(),
        upper,
        n_max,
        witness_word: Word::new(walk.best_rho.1).unwrap(),
        evaluations: walk.nodes,
        complete,
    })
}

fn full_tree_size(k: usize, n: usize) -> u64 {
    (1..=n).map(|i| (k as u64).saturating_pow(i as u32)).fold(0u64, u64::saturating_add)
}

/// Smallest-singular-value chain bound on blocks of length `n`:
/// `rho_check >= (min_{|w| = n} sigma_d(w))^(1/n)`, maximized over `n <= n_max`.
fn sigma_chain_lower(set: &MatrixSet, n_max: usize, budget: u64) -> f64 {
    let mut best = set.min_sigma_d();
    let mut level: Vec<LogProduct> = (0..set.len())
        .map(|i| LogProduct::from_word(set, &Word::single(i)).unwrap())
        .collect();
    let mut spent = level.len() as u64;
    for n in 2..=n_max {
        let next_size = level.len() as u64 * set.len() as u64;
        if spent + next_size > budget {
            break;
        }
        spent += next_size;
        let mut next = Vec::with_capacity(next_size as usize);
        for p in &level {
            for i in 0..set.len() {
                let mut c = p.clone();
                c.push(set, i);
                next.push(c);
            }
        }
        let min_log_sd = next
            .iter()
            .map(|p| *p.observables().log_singular_values.last().unwrap())
            .fold(f64::INFINITY, f64::min);
        best = best.max((min_log_sd / n as f64).exp());
        level = next;
    }
    best
}

/// Certified lower bound `rho_check(A) >= rho_check(wedge^k A)^(1/k)`; exact
/// `(min |det|)^(1/d)` at `k = d`.
pub fn wedge_lower_bound(set: &MatrixSet, k: usize, n_max: usize) -> Result<f64> {
    let d = set.dim();
    if k == 0 || k > d {
        return Err(Error::IndexRange { k, max: d });
    }
    if k == d {
        return Ok(determinant_lower_bound(set));
    }
    let lifted = lift_set(set, k)?;
    let mut lb = sigma_chain_lower(&lifted, n_max.max(1), 2_000_000);
    lb = lb.max(determinant_lower_bound(&lifted));
    if let Some(c) = commuting_lower_bound(&lifted) {
        lb = lb.max(c);
    }
    Ok(lb.powf(1.0 / k as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinitenessScan {
    /// True when a finite word meets the certified lower bound.
    pub attained: bool,
    pub witness: Option<Word>,
    pub best_word: Word,
    pub best_rho_rate: f64,
    pub lower: f64,
    pub upper: f64,
    /// `best_rho_rate - lower`.
    pub gap: f64,
    pub tolerance: f64,
    pub n_max: usize,
}

/// Looks for a periodic product attaining the lower spectral radius. A
/// negative outcome only means no witness exists up to `n_max` at margin
/// `gap`.
pub fn finiteness_witness_scan(set: &MatrixSet, n_max: usize, tolerance: f64) -> Result<FinitenessScan> {
    let cfg = BracketConfig {
        cyclic_reduction: true,
        ..BracketConfig::default()
    };
    let bracket = subradius_bracket(set, n_max, &cfg)?;
    let best = evaluate_word(set, &bracket.best_word)?;
    let gap = best.rho_rate - bracket.lower;
    let attained = gap <= tolerance * bracket.lower.max(1e-300);
    Ok(FinitenessScan {
        attained,
        witness: attained.then(|| bracket.best_word.clone()),
        best_word: bracket.best_word,
        best_rho_rate: best.rho_rate,
        lower: bracket.lower,
        upper: bracket.upper,
        gap,
        tolerance,
        n_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matset::{diag, rotation, Matrix};
    use std::f64::consts::PI;

    fn simple() -> MatrixSet {
        MatrixSet::new(
            vec!["D".into(), "I".into()],
            vec![diag(&[2.0, 0.125]), Matrix::identity(2, 2)],
        )
        .unwrap()
    }

    fn simple_perturbed() -> MatrixSet {
        MatrixSet::new(
            vec!["D".into(), "R".into()],
            vec![diag(&[2.0, 0.125]), rotation(PI / 2.0)],
        )
        .unwrap()
    }

    fn nasty() -> MatrixSet {
        MatrixSet::from_matrices(vec![diag(&[1.0 / 3.0, 3.0]), diag(&[2.0, 0.5])]).unwrap()
    }

    fn word_r_then_d(m: usize) -> Word {
        let mut idx = vec![1];
        idx.extend(std::iter::repeat_n(0, m));
        Word::new(idx).unwrap()
    }

    #[test]
    fn lyndon_words() {
        assert!(is_lyndon(&[0]));
        assert!(is_lyndon(&[0, 1]));
        assert!(!is_lyndon(&[1, 0]));
        assert!(!is_lyndon(&[0, 0]));
        assert!(is_lyndon(&[0, 0, 1, 0, 1]));
        assert!(!is_lyndon(&[0, 1, 0, 1]));
    }

    #[test]
    fn evaluate_word_examples() {
        let e = evaluate_word(&simple_perturbed(), &word_r_then_d(19)).unwrap();
        let oracle = 2f64.powf(-19.0 / 20.0);
        assert!((e.rho_rate - oracle).abs() < 1e-12);
        assert!((e.rho_rate - 0.5176).abs() < 1e-4);
        assert!(e.rho_rate <= e.norm_rate);

        // 12 copies of diag(1/3,3) and 19 of diag(2,1/2).
        let mut idx = vec![0; 12];
        idx.extend(vec![1; 19]);
        let e = evaluate_word(&nasty(), &Word::new(idx).unwrap()).unwrap();
        let a = 531441f64;
        let b = 524288f64;
        let oracle = (a / b).max(b / a).powf(1.0 / 31.0);
        assert!((e.rho_rate - oracle).abs() < 1e-12);
        assert!((e.rho_rate - 1.00044).abs() < 1e-5);

        let single = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).unwrap();
        assert_eq!(evaluate_word(&single, &Word::single(0)).unwrap().rho_rate, 2.0);
    }

    #[test]
    fn bracket_simple_examples() {
        let cfg = BracketConfig::default();
        let b = subradius_bracket(&simple_perturbed(), 20, &cfg).unwrap();
        assert_eq!(b.lower, 0.5);
        assert!(b.upper <= 0.52);
        assert!(b.complete);
        let b = subradius_bracket(&simple(), 20, &cfg).unwrap();
        assert_eq!(b.upper, 1.0);
        assert_eq!(b.lower, 1.0);
        assert_eq!(b.lower_method, LowerMethod::CommutingExact);
        assert_eq!(b.best_word, Word::single(1));
    }

    #[test]
    fn bracket_without_fast_path_still_finds_identity() {
        let cfg = BracketConfig {
            commuting_fast_path: false,
            ..BracketConfig::default()
        };
        let b = subradius_bracket(&simple(), 12, &cfg).unwrap();
        assert_eq!(b.upper, 1.0);
        assert_eq!(b.best_word, Word::single(1));
        assert_eq!(b.lower, 1.0);
    }

    #[test]
    fn nasty_bracket_matches_count_formula() {
        let b = subradius_bracket(&nasty(), 13, &BracketConfig::default()).unwrap();
        // Oracle: best over counts (a, b), a + b <= 13, of max(3^a 2^-b, 3^-a 2^b)^(1/(a+b)).
        let mut oracle = f64::INFINITY;
        for n in 1..=13u32 {
            for a in 0..=n {
                let bb = n - a;
                let x = 3f64.powi(a as i32) / 2f64.powi(bb as i32);
                oracle = oracle.min(x.max(1.0 / x).powf(1.0 / n as f64));
            }
        }
        assert!((b.upper - oracle).abs() < 1e-12);
        assert!(b.upper <= 1.005);
        assert_eq!(b.lower, 1.0);
        let mut counts = [0usize; 2];
        for &i in b.best_word.indices() {
            counts[i] += 1;
        }
        assert_eq!(counts, [5, 8]);
    }

    #[test]
    fn upper_radius_examples() {
        let close = |x: f64, y: f64| (x - y).abs() <= 4.0 * f64::EPSILON * y;
        let u = upper_radius_bracket(&simple(), 1, DEFAULT_BUDGET).unwrap();
        assert!(close(u.lower, 2.0) && close(u.upper, 2.0));
        let r = MatrixSet::from_matrices(vec![rotation(0.3)]).unwrap();
        let u = upper_radius_bracket(&r, 5, DEFAULT_BUDGET).unwrap();
        assert!((u.lower - 1.0).abs() < 1e-14 && (u.upper - 1.0).abs() < 1e-14);
        let two = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125]), diag(&[3.0, 1.0 / 3.0])]).unwrap();
        let u = upper_radius_bracket(&two, 1, DEFAULT_BUDGET).unwrap();
        assert!(close(u.lower, 3.0) && close(u.upper, 3.0));
        assert_eq!(u.witness_word, Word::single(1));
    }

    #[test]
    fn wedge_bounds() {
        assert_eq!(wedge_lower_bound(&simple(), 2, 4).unwrap(), 0.5);
        let sl = MatrixSet::from_matrices(vec![
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
            rotation(1.0),
        ])
        .unwrap();
        assert!((wedge_lower_bound(&sl, 2, 4).unwrap() - 1.0).abs() < 1e-15);
        assert!(wedge_lower_bound(&sl, 3, 4).is_err());
        let upper = subradius_bracket(&sl, 10, &BracketConfig::default()).unwrap().upper;
        assert!(upper >= wedge_lower_bound(&sl, 1, 6).unwrap());
    }

    #[test]
    fn finiteness_examples() {
        let s = finiteness_witness_scan(&nasty(), 13, 1e-9).unwrap();
        assert!(!s.attained);
        assert!(s.witness.is_none());
        assert!(s.gap > 1e-3);

        let single = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).unwrap();
        let s = finiteness_witness_scan(&single, 5, 1e-9).unwrap();
        assert!(s.attained);
        assert_eq!(s.witness, Some(Word::single(0)));
        assert_eq!(s.gap, 0.0);

        let s = finiteness_witness_scan(&simple(), 8, 1e-9).unwrap();
        assert!(s.attained);
        assert_eq!(s.witness, Some(Word::single(1)));
        assert_eq!(s.best_rho_rate, 1.0);
    }

    #[test]
    fn rejects_zero_n_max() {
        assert!(subradius_bracket(&simple(), 0, &BracketConfig::default()).is_err());
        assert!(upper_radius_bracket(&simple(), 0, 10).is_err());
    }

    #[test]
    fn budget_marks_incomplete() {
        let cfg = BracketConfig {
            budget: 10,
            ..BracketConfig::default()
        };
        let b = subradius_bracket(&simple_perturbed(), 20, &cfg).unwrap();
        assert!(!b.complete);
        assert!(b.lower <= b.upper);
    }
}
