//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one result line.

use std::f64::consts::{E, LN_2};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use powinst::certify::{
    classify, fit_certificate, required_offset, verify_certificate, ClassifyParams, Concept,
};
use powinst::przyluski::{certificate_to_criterion, criterion_margin, criterion_to_certificate, CriterionParams};
use powinst::report::{report_json, run_analyze, AnalysisConfig};
use powinst::systems::{
    make_constant, make_paper_example, make_random_dense, make_random_diagonal, OperatorSeq,
    StepOperator, SystemSpec,
};
use powinst::transition::{paper_example_closed_form, GrowthSource, GrowthStream, Norm, TransitionCache};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_s), || {
        format!("runtime {:.1}s exceeds {limit_s}s", elapsed.as_secs_f64())
    })
}

fn scalar_log(op: &StepOperator) -> f64 {
    match op {
        StepOperator::Scalar(v) => v.log(),
        _ => unreachable!("scalar system"),
    }
}

fn closed_form_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for c in [0.5, 1.0, 2.0, E] {
        let cache = TransitionCache::new(&make_paper_example(c).unwrap(), 200).unwrap();
        for m in 0..=200 {
            for n in 0..=m {
                let got = scalar_log(&cache.transition(m, n).unwrap());
                let want = paper_example_closed_form(c, m, n).unwrap();
                worst = worst.max((got - want).abs());
                pairs += 1;
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 5)?;
    Ok(format!("{pairs} pairs, max deviation {worst:.2e}"))
}

fn cocycle_violations(system: &OperatorSeq, horizon: usize) -> (usize, usize) {
    let cache = TransitionCache::new(system, horizon).unwrap();
    let id = StepOperator::identity(system.kind(), system.dim());
    let ops: Vec<Vec<StepOperator>> = (0..=horizon)
        .map(|m| (0..=m).map(|n| cache.transition(m, n).unwrap()).collect())
        .collect();
    let (mut bad, mut checked) = (0, 0);
    for m in 0..=horizon {
        checked += 1;
        if !ops[m][m].approx_eq(&id, 1e-9) {
            bad += 1;
        }
        for n in 0..=m {
            for p in 0..=n {
                checked += 1;
                if !ops[m][p].approx_eq(&ops[m][n].compose(&ops[n][p]), 1e-9) {
                    bad += 1;
                }
            }
        }
    }
    (bad, checked)
}

fn cocycle_and_identity() -> Outcome {
    let start = Instant::now();
    let mut fixtures = vec![
        (make_paper_example(2.0).unwrap(), 64),
        (make_paper_example(0.5).unwrap(), 64),
        (make_constant(StepOperator::scalar(3.0), 1).unwrap(), 64),
        (make_constant(StepOperator::diagonal(&[2.0, 0.5, 0.0]), 3).unwrap(), 64),
        (make_random_diagonal(4, 7, (-2.0, 2.0)).unwrap(), 64),
    ];
    for seed in 0..20u64 {
        let dim = 1 + (seed as usize % 4);
        fixtures.push((make_random_dense(dim, seed, 0.5).unwrap(), 32));
    }
    let (mut bad, mut checked) = (0, 0);
    for (system, horizon) in &fixtures {
        let (b, c) = cocycle_violations(system, *horizon);
        bad += b;
        checked += c;
    }
    ensure(bad == 0, || format!("{bad} violations out of {checked}"))?;
    within(start.elapsed(), 30)?;
    Ok(format!("{checked} identities over {} systems, 0 violations", fixtures.len()))
}

fn example_classifications() -> Outcome {
    let start = Instant::now();
    let params = ClassifyParams::default();
    let mut upis_slope_c2 = f64::NAN;
    for c in [0.5, 1.0, 1.5, 2.0, 3.0] {
        let system = make_paper_example(c).unwrap();
        let upis = classify(&system, Concept::Upis, &params).unwrap();
        ensure(upis.verdict.is_rejected(), || format!("UPIS at c={c}: {}", upis.verdict.name()))?;
        if c == 2.0 {
            if let powinst::certify::Verdict::Rejected { slope } = upis.verdict {
                upis_slope_c2 = slope;
            }
        }
        let pis = classify(&system, Concept::Pis, &params).unwrap();
        let want_certified = c > 1.0;
        let ok = if want_certified {
            pis.verdict.is_certified()
        } else {
            pis.verdict.is_rejected()
        };
        ensure(ok, || format!("PIS at c={c}: {}", pis.verdict.name()))?;
    }
    let rel = (upis_slope_c2 - LN_2).abs() / LN_2;
    ensure(rel <= 0.05, || format!("UPIS slope at c=2 is {upis_slope_c2}, off by {:.1}%", 100.0 * rel))?;
    within(start.elapsed(), 60)?;
    Ok(format!("UPIS rejected for all c, PIS threshold c>1 reproduced, slope at c=2 {upis_slope_c2:.6} (ln 2 {:.2}%)", 100.0 * rel))
}

fn spis_boundary_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_powinst"))
        .args(["sweep", "--param", "c", "--concept", "SPIS", "--bisect", "1.5,4.0,0.05", "--no-timestamp"])
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        format!("exit status {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr))
    })?;
    let text = std::fs::read_to_string(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let sweep = &report["sweep"];
    ensure(sweep["monotone"] == true, || "verdict profile not monotone".into())?;
    let b = &sweep["boundary"];
    let (lo, hi) = (b["lo"].as_f64().unwrap_or(f64::NAN), b["hi"].as_f64().unwrap_or(f64::NAN));
    ensure(hi - lo <= 0.05, || format!("boundary interval {b} missing or too wide"))?;
    let claim = &sweep["published_threshold"];
    ensure(claim["threshold"].as_f64() == Some(E), || format!("stated threshold missing: {claim}"))?;
    let agrees = sweep["agrees_with_published"].as_bool().unwrap_or(false);
    Ok(format!(
        "measured boundary [{lo:.4}, {hi:.4}], stated c > e ({}), exit 0",
        if agrees { "agrees" } else { "disagrees" }
    ))
}

fn pis_certified_random_diagonals(count: usize) -> Vec<OperatorSeq> {
    let params = ClassifyParams::default();
    (0u64..)
        .map(|seed| make_random_diagonal(2, seed, (-0.5, 1.5)).unwrap())
        .filter(|s| classify(s, Concept::Pis, &params).unwrap().verdict.is_certified())
        .take(count)
        .collect()
}

fn round_trip() -> Outcome {
    let window = 64;
    let mut systems = vec![
        make_constant(StepOperator::scalar(2.0), 1).unwrap(),
        make_paper_example(2.0).unwrap(),
    ];
    systems.extend(pis_certified_random_diagonals(10));
    let params = CriterionParams::default();
    let mut worst_margin = f64::INFINITY;
    for system in &systems {
        let cache = TransitionCache::new(system, window).unwrap();
        let table = cache.growth_table(window, Norm::Two).unwrap();
        let cert = fit_certificate(&table, window, Concept::Pis, 1.0, 1e-6)
            .unwrap()
            .ok_or_else(|| format!("{}: no PIS certificate", system.label()))?;
        let fit = certificate_to_criterion(&cert, 2.0).map_err(|e| e.to_string())?;
        let margin = criterion_margin(&cache, &fit, window, &params).unwrap();
        worst_margin = worst_margin.min(margin);
        ensure(margin >= -1e-9, || format!("{}: criterion margin {margin:e}", system.label()))?;
        let (back, _) = criterion_to_certificate(&fit);
        let v = verify_certificate(system, &back, 1000, 1, Norm::Two).unwrap();
        ensure(v.pass, || format!("{}: reconstructed certificate fails ({:e})", system.label(), v.worst_margin))?;
    }
    Ok(format!("{} systems, worst criterion margin {worst_margin:.3e}, all reconstructions verify", systems.len()))
}

fn ordering_chain() -> Outcome {
    let window = 64;
    let mut systems = vec![
        make_constant(StepOperator::scalar(2.0), 1).unwrap(),
        make_constant(StepOperator::scalar(1.5), 1).unwrap(),
        make_constant(StepOperator::diagonal(&[1.2, 3.0]), 2).unwrap(),
        make_random_diagonal(3, 11, (0.1, 1.0)).unwrap(),
        make_random_dense(2, 3, 1.5).unwrap(),
    ];
    for c in [1.5, 2.0, 3.0, 4.0] {
        systems.push(make_paper_example(c).unwrap());
    }
    systems.extend(pis_certified_random_diagonals(3));
    let (mut upis, mut spis, mut checks) = (0, 0, 0);
    for system in &systems {
        let cache = TransitionCache::new(system, window).unwrap();
        let table = cache.growth_table(window, Norm::Two).unwrap();
        let verify = |cert: &powinst::certify::Certificate| verify_certificate(system, cert, 1000, 2, Norm::Two).unwrap().pass;
        if let Some(u) = fit_certificate(&table, window, Concept::Upis, 1.0, 1e-6).unwrap() {
            upis += 1;
            checks += 2;
            ensure(verify(&u.as_concept(Concept::Spis)) && verify(&u.as_concept(Concept::Pis)), || {
                format!("{}: UPIS certificate does not induce SPIS/PIS", system.label())
            })?;
        }
        if let Some(s) = fit_certificate(&table, window, Concept::Spis, 1.0, 1e-6).unwrap() {
            spis += 1;
            checks += 1;
            ensure(verify(&s.as_concept(Concept::Pis)), || {
                format!("{}: SPIS certificate does not induce PIS", system.label())
            })?;
        }
    }
    ensure(upis > 0 && spis > 0, || "no certificates to check".into())?;
    Ok(format!("{checks} induced certificates from {upis} UPIS and {spis} SPIS fits, all verify"))
}

fn lp_exactness() -> Outcome {
    let window = 64;
    let mut worst = 0.0f64;
    for lambda in [1.5f64, 2.0, 4.0] {
        let system = make_constant(StepOperator::scalar(lambda), 1).unwrap();
        let table = TransitionCache::new(&system, window).unwrap().growth_table(window, Norm::Two).unwrap();
        let cert = fit_certificate(&table, window, Concept::Upis, 0.0, 1e-6)
            .unwrap()
            .ok_or_else(|| format!("lambda={lambda}: no certificate"))?;
        let err = (cert.a - lambda.ln()).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6 && cert.l == 0.0, || format!("lambda={lambda}: a={}, L={}", cert.a, cert.l))?;
        let off = required_offset(&table, window, cert.a, cert.b).unwrap();
        ensure(off <= 1e-9, || format!("lambda={lambda}: required offset {off:e}"))?;
    }
    Ok(format!("rates match log(lambda) within {worst:.1e}, L = 0, offsets <= 1e-9"))
}

fn numerical_robustness() -> Outcome {
    let horizon = 10_000;
    let c = 2.0;
    let system = make_paper_example(c).unwrap();
    let cache = TransitionCache::new(&system, horizon).unwrap();
    let stream = GrowthStream::new(&cache, Norm::Two).unwrap();
    // prefix sums of |log a_k| bound the conditioning of each pair sum
    let mut abs_prefix = vec![0.0f64];
    for k in 1..=horizon {
        let step = scalar_log(&system.coeff_at(k).unwrap()).abs();
        abs_prefix.push(abs_prefix[k - 1] + step);
    }
    let (mut lo, mut hi, mut worst, mut bad) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, 0usize);
    stream.for_each_pair(horizon, &mut |m, n, g| {
        if !g.is_finite() {
            bad += 1;
            return;
        }
        lo = lo.min(g);
        hi = hi.max(g);
        if m % 97 == 0 || n % 89 == 0 {
            let want = paper_example_closed_form(c, m, n).unwrap();
            let scale = (abs_prefix[m] - abs_prefix[n]).max(1.0);
            worst = worst.max((g - want).abs() / scale);
        }
    });
    ensure(bad == 0, || format!("{bad} non-finite entries"))?;
    ensure(worst <= 64.0 * f64::EPSILON, || format!("error relative to the summed step magnitudes {worst:e}"))?;
    ensure(hi > 9_000.0 * LN_2, || format!("largest log gain {hi} below expected magnitude"))?;
    let cert = fit_certificate(&stream, horizon, Concept::Pis, 1.0, 1e-6)
        .map_err(|e| e.to_string())?
        .ok_or("no PIS certificate at M = 10^4")?;
    ensure(cert.a.is_finite() && cert.b.is_finite(), || "non-finite certificate".into())?;
    Ok(format!(
        "g in [{lo:.1}, {hi:.1}] (max/ln2 = {:.0}), closed-form error {worst:.1e} relative to summed step logs",
        hi / LN_2
    ))
}

fn determinism() -> Outcome {
    let config = AnalysisConfig {
        system: SystemSpec::PaperExample { c: 2.0, label: None },
        timestamp: false,
        ..Default::default()
    };
    let a = report_json(&run_analyze(&config).map_err(|e| e.to_string())?);
    let b = report_json(&run_analyze(&config).map_err(|e| e.to_string())?);
    ensure(a == b, || "library reports differ".into())?;

    let run = |dir: &std::path::Path| -> Result<Vec<u8>, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_powinst"))
            .args(["analyze", "--no-timestamp", "--system", "constant", "--value", "2", "--output-dir"])
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())
    };
    // same output directory so the embedded configuration is identical
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run(dir.path())?;
    let second = run(dir.path())?;
    ensure(first == second, || "CLI reports differ".into())?;
    Ok(format!("library ({} bytes) and CLI ({} bytes) reports byte-identical", a.len(), first.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form oracle equivalence", closed_form_equivalence),
        ("cocycle and identity invariants", cocycle_and_identity),
        ("example classifications", example_classifications),
        ("SPIS boundary sweep", spis_boundary_sweep),
        ("definition/criterion round trip", round_trip),
        ("ordering chain", ordering_chain),
        ("LP fitter exactness", lp_exactness),
        ("numerical robustness at M = 10^4", numerical_robustness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
