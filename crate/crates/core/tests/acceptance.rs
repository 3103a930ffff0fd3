//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subradius::access::{align_2d, perturb_reduce, spectrum_profile, verify_certificate, PerturbConfig};
use subradius::barabanov::{compute_barabanov, BarabanovConfig};
use subradius::domination::{
    find_multicone_2d, least_domination_index, test_domination, DominationConfig, MulticoneConfig, MulticoneSearch,
    Verdict,
};
use subradius::estimators::{
    evaluate_word, finiteness_witness_scan, subradius_bracket, BracketConfig, LowerMethod,
};
use subradius::matset::{diag, exterior_power, op_norm, singular_values};
use subradius::probe::{continuity_check, gallery, rotation_scan, Continuity, ContinuityConfig, GallerySpec};
use subradius::{Error, Matrix, MatrixSet, Word};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(what.into()) }
}

fn err(e: Error) -> String {
    e.to_string()
}

fn simple() -> MatrixSet {
    gallery(&GallerySpec::Simple).unwrap()
}

fn c1_simple_perturbed() -> Outcome {
    let set = gallery(&GallerySpec::SimplePerturbed { n: 1 }).map_err(err)?;
    let t = Instant::now();
    let b = subradius_bracket(&set, 20, &BracketConfig::default()).map_err(err)?;
    let elapsed = t.elapsed();
    check(b.lower == 0.5, format!("lower = {} (want exactly 0.5)", b.lower))?;
    check(b.upper <= 0.52, format!("upper = {} > 0.52", b.upper))?;
    check(elapsed < Duration::from_secs(60), format!("runtime {elapsed:?}"))?;
    // R first, then D^511.
    let mut w = vec![1];
    w.extend(std::iter::repeat_n(0, 511));
    let e = evaluate_word(&set, &Word::new(w).map_err(err)?).map_err(err)?;
    check(e.rho_rate <= 0.502, format!("D^511 R rate = {}", e.rho_rate))?;
    Ok(format!(
        "bracket [{}, {}] in {:.2?}; D^511 R rate {:.6}",
        b.lower, b.upper, elapsed, e.rho_rate
    ))
}

fn c2_simple() -> Outcome {
    let set = simple();
    let mut last = None;
    for n in 1..=20 {
        let b = subradius_bracket(&set, n, &BracketConfig::default()).map_err(err)?;
        check(b.upper == 1.0, format!("n = {n}: upper = {}", b.upper))?;
        check(
            b.best_word.indices().iter().all(|&i| i == 1),
            format!("n = {n}: witness {} is not a power of I", b.best_word),
        )?;
        check(
            b.lower == 1.0 && b.lower_method == LowerMethod::CommutingExact,
            format!("n = {n}: lower = {} via {:?}", b.lower, b.lower_method),
        )?;
        last = Some(b);
    }
    let v = continuity_check(&set, &ContinuityConfig::default()).map_err(err)?;
    check(v.verdict == Continuity::Discontinuous, format!("verdict {:?}", v.verdict))?;
    check(v.rhs_upper == 0.5 && v.rhs_lower == 0.5, format!("rhs = [{}, {}]", v.rhs_lower, v.rhs_upper))?;
    let b = last.unwrap();
    Ok(format!("[{}, {}] for n <= 20; continuity: discontinuous, rhs {}", b.lower, b.upper, v.rhs_upper))
}

fn c3_nasty1() -> Outcome {
    let set = gallery(&GallerySpec::Nasty1).map_err(err)?;
    let b = subradius_bracket(&set, 13, &BracketConfig::default()).map_err(err)?;
    check(b.lower == 1.0, format!("lower = {}", b.lower))?;
    check(b.upper <= 1.005, format!("upper = {}", b.upper))?;
    let mut w = vec![0; 12];
    w.extend(std::iter::repeat_n(1, 19));
    let e = evaluate_word(&set, &Word::new(w).map_err(err)?).map_err(err)?;
    check(e.rho_rate <= 1.0005, format!("(12, 19) word rate = {}", e.rho_rate))?;
    let scan = finiteness_witness_scan(&set, 13, 1e-3).map_err(err)?;
    check(!scan.attained && scan.witness.is_none(), "finiteness scan reported a witness")?;
    Ok(format!(
        "[{}, {:.6}]; (12, 19) word {:.7}; no witness within 1e-3 (best {:.6})",
        b.lower, b.upper, e.rho_rate, scan.best_rho_rate
    ))
}

fn c4_barabanov() -> Outcome {
    let base = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).map_err(err)?;
    let cfg = BarabanovConfig::default();
    check(cfg.grid_size == 4096, "default grid is not 4096")?;
    let mut betas = Vec::new();
    let mut worst_runtime = Duration::ZERO;
    for c in [0.5, 1.0, 3.0] {
        let set = base.scaled(c).map_err(err)?;
        let t = Instant::now();
        let cone = match find_multicone_2d(&set, &MulticoneConfig::default()).map_err(err)? {
            MulticoneSearch::Found(m) => m,
            MulticoneSearch::Failed { reason } => return Err(format!("c = {c}: no multicone: {reason}")),
        };
        let r = compute_barabanov(&set, &cone, &cfg).map_err(err)?;
        worst_runtime = worst_runtime.max(t.elapsed());
        check(
            (r.beta - (2.0 * c).ln()).abs() <= 1e-3,
            format!("c = {c}: beta = {} vs ln(2c) = {}", r.beta, (2.0 * c).ln()),
        )?;
        check(r.residual <= 1e-9, format!("c = {c}: residual {:e}", r.residual))?;
        betas.push((c, r.beta));
    }
    check(worst_runtime < Duration::from_secs(10), format!("runtime {worst_runtime:?}"))?;
    let beta1 = betas[1].1;
    for &(c, b) in &betas {
        check(
            (b - beta1 - c.ln()).abs() <= 1e-10,
            format!("homogeneity at c = {c}: shift error {:e}", b - beta1 - c.ln()),
        )?;
    }
    Ok(format!(
        "betas {:?}; slowest run {:.2?}",
        betas.iter().map(|(_, b)| *b).collect::<Vec<_>>(),
        worst_runtime
    ))
}

fn c5_domination() -> Outcome {
    let single = MatrixSet::from_matrices(vec![diag(&[2.0, 0.125])]).map_err(err)?;
    let cfg = DominationConfig::default();
    let r = test_domination(&single, 1, 12, &cfg).map_err(err)?;
    let target = (1.0f64 / 16.0).ln();
    check(
        ((r.slope - target) / target).abs() <= 0.01,
        format!("slope {} vs {}", r.slope, target),
    )?;
    let s = test_domination(&simple(), 1, 12, &cfg).map_err(err)?;
    check(s.verdict == Verdict::NotDominated, format!("simple at k = 1: {:?}", s.verdict))?;
    let l = least_domination_index(&simple(), 12, &cfg).map_err(err)?;
    check(l.ell == 2, format!("ell = {}", l.ell))?;
    Ok(format!("slope {:.6} (target {:.6}); simple: not dominated, ell = 2", r.slope, target))
}

fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    Matrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0))
}

fn c6_exterior_powers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let d = rng.gen_range(2..=6);
        let k = rng.gen_range(1..d);
        let m = random_matrix(&mut rng, d);
        let s = singular_values(&m);
        let w = exterior_power(&m, k).map_err(err)?;
        let ws = singular_values(&w);
        let top: f64 = s[..k].iter().product();
        let second: f64 = s[..k - 1].iter().product::<f64>() * s[k];
        let e1 = ((op_norm(&w) - top) / top).abs();
        let e2 = ((ws[1] - second) / second).abs();
        worst = worst.max(e1).max(e2);
        check(e1 <= 1e-10 && e2 <= 1e-10, format!("trial {trial} (d = {d}, k = {k}): errors {e1:e}, {e2:e}"))?;
    }
    Ok(format!("1000 matrices, worst relative error {worst:e}"))
}

fn c7_zeta() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let d = rng.gen_range(2..=6);
        let m = random_matrix(&mut rng, d);
        let p = spectrum_profile(&m, d).map_err(err)?;
        for k in 2..=d {
            let z = p.zeta(k).unwrap();
            let bound = 0.0f64.max((k as f64 * p.taus[1] - p.taus[k]) / 2.0);
            let slack = 1e-9 * (1.0 + p.taus.iter().map(|t| t.abs()).fold(0.0, f64::max));
            check(z >= bound - slack, format!("trial {trial}, k = {k}: zeta {z} < {bound}"))?;
        }
    }
    let z = spectrum_profile(&diag(&[2.0, 0.125]), 2).map_err(err)?.zeta(2).unwrap();
    check((z - 2.0 * 2f64.ln()).abs() <= 1e-12, format!("zeta_2(diag(2, 1/8)) = {z}"))?;
    Ok(format!("inequality holds on 1000 matrices; zeta_2(diag(2, 1/8)) = {z}"))
}

fn c8_align() -> Outcome {
    let mut worst = 0.0f64;
    for n in 1..=16 {
        let ms = vec![Matrix::identity(2, 2); n];
        let c = align_2d(&ms, (1.0, 0.0), (0.0, 1.0), PI / 2.0).map_err(err)?;
        let e = (c.theta - PI / (2.0 * n as f64)).abs();
        worst = worst.max(e);
        check(e <= 1e-8, format!("n = {n}: theta = {}", c.theta))?;
    }
    Ok(format!("n = 1..16, worst error {worst:e}"))
}

fn c9_perturb() -> Outcome {
    let set = simple();
    let cert = perturb_reduce(&set, 0.05, &PerturbConfig::default()).map_err(err)?;
    let check_result = verify_certificate(&set, &cert).map_err(err)?;
    check(check_result.valid, format!("verification failed: {:?}", check_result.failures))?;
    check(cert.achieved_rate <= 0.6, format!("achieved rate {}", cert.achieved_rate))?;
    check(cert.hausdorff <= 0.05, format!("d_H = {}", cert.hausdorff))?;
    let dominated = MatrixSet::from_matrices(vec![
        diag(&[2.0, 0.125]),
        Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.25, 1.0]),
    ])
    .map_err(err)?;
    let rep = test_domination(&dominated, 1, 10, &DominationConfig::default()).map_err(err)?;
    check(
        rep.verdict == Verdict::Dominated && rep.multicone.is_some(),
        "comparison set is not certified 1-dominated",
    )?;
    match perturb_reduce(&dominated, 0.05, &PerturbConfig::default()) {
        Err(Error::NoCertificate { .. }) => {}
        other => return Err(format!("1-dominated set gave {other:?}")),
    }
    Ok(format!(
        "rate {:.6} via {:?} connector, d_H {}; 1-dominated set refused",
        cert.achieved_rate, cert.connector_kind, cert.hausdorff
    ))
}

fn c10_rotation_scans() -> Outcome {
    let mut grid = vec![0.0];
    for n in 1..=8 {
        let t = PI / (2.0 * n as f64);
        grid.extend([t, -t]);
    }
    let s = rotation_scan(&simple(), &grid, 16, &BracketConfig::default()).map_err(err)?;
    check(s.baseline_lower == 1.0, format!("baseline lower {}", s.baseline_lower))?;
    check(s.drop >= 0.45, format!("drop {}", s.drop))?;
    let nd = gallery(&GallerySpec::NoDiscontinuity).map_err(err)?;
    let thetas: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.005).collect();
    let flat = rotation_scan(&nd, &thetas, 16, &BracketConfig::default()).map_err(err)?;
    for (t, u) in thetas.iter().zip(&flat.upper_rates) {
        check(*u == 1.0, format!("no_discontinuity at theta = {t}: upper {u}"))?;
    }
    Ok(format!("simple drop {:.6}; no_discontinuity flat at 1.0 on 21 angles", s.drop))
}

fn c11_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = BracketConfig {
        cyclic_reduction: false,
        ..BracketConfig::default()
    };
    for trial in 0..50 {
        let set = loop {
            let ms = vec![random_matrix(&mut rng, 2), random_matrix(&mut rng, 2)];
            if let Ok(s) = MatrixSet::from_matrices(ms) {
                break s;
            }
        };
        let b = subradius_bracket(&set, 10, &cfg).map_err(err)?;
        let mut oracle = f64::INFINITY;
        for n in 1..=10usize {
            for code in 0..(1u32 << n) {
                let w: Vec<usize> = (0..n).map(|i| ((code >> i) & 1) as usize).collect();
                let e = evaluate_word(&set, &Word::new(w).map_err(err)?).map_err(err)?;
                oracle = oracle.min(e.rho_rate).min(e.norm_rate);
            }
        }
        check(b.upper == oracle, format!("pair {trial}: pruned {} vs brute force {}", b.upper, oracle))?;
    }
    Ok("50 random pairs at n_max = 10 match exactly".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("simple perturbed (n = 1) bracket", c1_simple_perturbed),
        ("simple unperturbed bracket and continuity", c2_simple),
        ("nasty1 bracket and finiteness", c3_nasty1),
        ("Barabanov on scaled diag(2, 1/8)", c4_barabanov),
        ("domination slope and verdicts", c5_domination),
        ("exterior power identities", c6_exterior_powers),
        ("zeta properties", c7_zeta),
        ("align_2d identity words", c8_align),
        ("perturbation certificate", c9_perturb),
        ("rotation scans", c10_rotation_scans),
        ("brute-force oracle equivalence", c11_brute_force),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match r {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{:.2?}]", i + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{:.2?}]", i + 1, t.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
