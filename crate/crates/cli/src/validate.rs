//! The validation suite behind `nmarkov validate`. Each criterion checks a
//! published number or a statistical consistency claim at fixed reference
//! seeds and reports one line.

use std::time::{Duration, Instant};

use markovize::bounds::{
    design_tail_bound, expected_purity_haar, haar_b, haar_c, haar_moment_bound, log2_eta,
    optimize_m, BoundParams, MChoice,
};
use markovize::designs::{
    gate_count, layer_phases, min_repetitions, phase_sets, CircuitHook, CircuitSpec, WCircuit,
};
use markovize::measures::{nm_one_marginal, nm_two_identity};
use markovize::montecarlo::{mean_stderr, run_ensemble, EnsembleSpec, MeasureSet};
use markovize::numerics::{kron, kron_all, ComplexMatrix, RngStream, UNITARY_TOL};
use markovize::process::{build_process_choi, ProcessChoi, ProcessDims};
use num_traits::ToPrimitive;

use crate::commands::sample;
use crate::config::{EnsembleArgs, EnsembleChoice, InitialChoice, RealList, SampleConfig};
use crate::oracle::Oracle;
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug)]
pub struct ValidateOptions {
    pub threads: usize,
    /// Feed a non-unitary circuit into the integrity checks.
    pub corrupt_phase: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            corrupt_phase: false,
        }
    }
}

pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget: Option<Duration>,
    pub run: fn(&ValidateOptions) -> CliResult<Check>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<18} {}  {} [{:.2} s]",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

pub const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "premise-bound",
        budget: secs(1),
        run: premise_bound,
    },
    Criterion {
        id: 2,
        name: "repetitions",
        budget: secs(1),
        run: repetitions,
    },
    Criterion {
        id: 3,
        name: "bound-shape",
        budget: secs(10),
        run: bound_shape,
    },
    Criterion {
        id: 4,
        name: "haar-purity",
        budget: secs(60),
        run: haar_purity,
    },
    Criterion {
        id: 5,
        name: "moment-bound",
        budget: secs(600),
        run: moment_bound,
    },
    Criterion {
        id: 6,
        name: "markov-null",
        budget: None,
        run: markov_null,
    },
    Criterion {
        id: 7,
        name: "circuit-integrity",
        budget: None,
        run: circuit_integrity,
    },
    Criterion {
        id: 8,
        name: "markovianization",
        budget: secs(900),
        run: markovianization,
    },
    Criterion {
        id: 9,
        name: "stability-oracle",
        budget: None,
        run: stability_oracle,
    },
    Criterion {
        id: 10,
        name: "determinism",
        budget: None,
        run: determinism,
    },
];

pub fn criterion(name: &str) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.name == name)
}

/// Runs one criterion; errors and budget overruns count as failures.
pub fn run_criterion(c: &Criterion, opts: &ValidateOptions) -> Outcome {
    let start = Instant::now();
    let check = (c.run)(opts).unwrap_or_else(|e| Check::new(false, format!("error: {e}")));
    let elapsed = start.elapsed();
    let mut passed = check.passed;
    let mut detail = check.detail;
    if let Some(b) = c.budget {
        if elapsed > b {
            passed = false;
            detail.push_str(&format!("; over the {} s budget", b.as_secs()));
        }
    }
    Outcome {
        id: c.id,
        name: c.name,
        passed,
        detail,
        elapsed,
    }
}

/// Runs the named criteria (all when `only` is empty) in suite order.
pub fn run_suite(only: &[String], opts: &ValidateOptions) -> CliResult<Vec<Outcome>> {
    for name in only {
        if criterion(name).is_none() {
            let known: Vec<&str> = CRITERIA.iter().map(|c| c.name).collect();
            return Err(CliError::Usage(format!(
                "unknown criterion {name:?}; known: {}",
                known.join(", ")
            )));
        }
    }
    Ok(CRITERIA
        .iter()
        .filter(|c| only.is_empty() || only.iter().any(|n| n == c.name))
        .map(|c| run_criterion(c, opts))
        .collect())
}

fn premise(log2_de: u32, k: u32, t: u32) -> BoundParams {
    BoundParams {
        d_s: 2,
        log2_de,
        k,
        t,
        epsilon: 1e-12,
        delta: 0.1,
        m: MChoice::Optimize,
    }
}

fn premise_bound(_: &ValidateOptions) -> CliResult<Check> {
    let (m, b) = optimize_m(&premise(60, 2, 10))?;
    Ok(Check::new(
        b.total_clamped <= 0.01,
        format!(
            "B_nu = {:.3e} at m* = {m:.4} (need <= 0.01)",
            b.total_clamped
        ),
    ))
}

fn repetitions(_: &ValidateOptions) -> CliResult<Check> {
    let mut worst = 0;
    for n in 35..=60 {
        worst = worst.max(min_repetitions(10, 1e-12, n)?);
    }
    let spec = CircuitSpec::with_min_repetitions(35, 10, 1e-12)?;
    let gates = gate_count(&spec).0;
    Ok(Check::new(
        worst <= 12 && (10_000..=20_000).contains(&gates),
        format!("max ell over n in [35,60] = {worst} (need <= 12); gates at n=35 = {gates}"),
    ))
}

fn bound_shape(_: &ValidateOptions) -> CliResult<Check> {
    let mut rising = Vec::new();
    let mut crossed = Vec::new();
    for k in 0..=4 {
        let mut curves = Vec::new();
        for t in 2..=10 {
            let mut curve = Vec::with_capacity(51);
            for l in 10..=60 {
                curve.push(optimize_m(&premise(l, k, t))?.1.total_clamped);
            }
            if let Some(i) = curve.windows(2).position(|w| w[1] > w[0]) {
                rising.push(format!("k={k} t={t} at log2 d_E={}", 11 + i));
            }
            curves.push(curve);
        }
        let (t2, t10) = (&curves[0], &curves[8]);
        if let Some(i) = t2.iter().zip(t10).position(|(a, b)| b > a) {
            crossed.push(format!("k={k} at log2 d_E={}", 10 + i));
        }
    }
    let detail = if rising.is_empty() && crossed.is_empty() {
        "45 curves non-increasing; t=10 <= t=2 everywhere".to_string()
    } else {
        format!("increasing: {rising:?}; t=10 above t=2: {crossed:?}")
    };
    Ok(Check::new(rising.is_empty() && crossed.is_empty(), detail))
}

fn purity_z(
    dims: ProcessDims,
    samples: usize,
    seed: u64,
    target: f64,
    threads: usize,
) -> CliResult<(bool, String)> {
    let spec = EnsembleSpec::haar(dims, samples, seed);
    let records = run_ensemble(&spec, threads, MeasureSet { n1_marginal: false })?;
    let values: Vec<f64> = records.iter().map(|r| r.purity).collect();
    let (mean, se) = mean_stderr(&values);
    let ok = (mean - target).abs() <= 3.0 * se;
    Ok((
        ok,
        format!(
            "d_E={} k={}: mean {mean:.5} vs {target:.5}, z = {:.2}",
            dims.d_e,
            dims.k,
            (mean - target) / se
        ),
    ))
}

fn haar_purity(opts: &ValidateOptions) -> CliResult<Check> {
    // closed-form values worked out by hand: (15/36)(15/63) + 1/4 and 3/10 + 1/2
    let (a, da) = purity_z(
        ProcessDims::new(4, 2, 1)?,
        2000,
        4001,
        22.0 / 63.0,
        opts.threads,
    )?;
    let (b, db) = purity_z(ProcessDims::new(2, 2, 0)?, 2000, 4002, 0.8, opts.threads)?;
    Ok(Check::new(a && b, format!("{da}; {db}")))
}

fn moment_bound(opts: &ValidateOptions) -> CliResult<Check> {
    let dims = ProcessDims::new(256, 2, 1)?;
    let spec = EnsembleSpec::haar(dims, 200, 5001);
    let records = run_ensemble(&spec, opts.threads, MeasureSet { n1_marginal: false })?;
    let squares: Vec<f64> = records.iter().map(|r| r.n2id * r.n2id).collect();
    let (mean, se) = mean_stderr(&squares);
    let bound = haar_moment_bound(1.0, 256, 2, 1)?;
    let e = expected_purity_haar(256, 2, 1)?.to_f64().expect("finite");
    let analytic = 0.25 * (e - 0.125);
    Ok(Check::new(
        mean <= bound && mean <= analytic + 3.0 * se,
        format!(
            "mean N2^2 = {mean:.3e} (se {se:.1e}); moment bound {bound:.4}; exact {analytic:.3e}"
        ),
    ))
}

fn random_pure_state(d: usize, rng: &mut RngStream) -> ComplexMatrix {
    let v: Vec<_> = (0..d)
        .map(|_| num_complex_pair(rng.standard_normal(), rng.standard_normal()))
        .collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let v: Vec<_> = v.into_iter().map(|z| z / n).collect();
    ComplexMatrix::outer(&v)
}

fn num_complex_pair(re: f64, im: f64) -> markovize::numerics::Complex64 {
    markovize::numerics::Complex64::new(re, im)
}

fn markov_null(_: &ValidateOptions) -> CliResult<Check> {
    let mut rng = RngStream::new(6001, 0);
    let mut worst_n1: f64 = 0.0;
    for (d_e, d_s, k) in [
        (2, 2, 0),
        (2, 2, 1),
        (2, 2, 2),
        (2, 2, 3),
        (3, 2, 1),
        (2, 3, 2),
    ] {
        let dims = ProcessDims::new(d_e, d_s, k)?;
        let rho = kron(
            &random_pure_state(d_e, &mut rng),
            &random_pure_state(d_s, &mut rng),
        );
        let id = ComplexMatrix::identity(d_e * d_s);
        let upsilon = build_process_choi(&rho, &vec![id; k + 1], dims)?;
        worst_n1 = worst_n1.max(nm_one_marginal(&upsilon));
    }
    let mut worst_n2: f64 = 0.0;
    for (d_s, k) in [(2, 0), (2, 1), (2, 3), (3, 2), (4, 1)] {
        let mixed = ProcessChoi::maximally_mixed(ProcessDims::new(1, d_s, k)?);
        worst_n2 = worst_n2.max(nm_two_identity(&mixed)?);
    }
    Ok(Check::new(
        worst_n1 <= 1e-12 && worst_n2 <= 1e-12,
        format!("max N1 (identity dynamics) = {worst_n1:.1e}; max N2 (maximally mixed) = {worst_n2:.1e}"),
    ))
}

fn hadamard_all(n: usize) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = ComplexMatrix::from_fn(2, 2, |r, c| {
        num_complex_pair(if r == 1 && c == 1 { -s } else { s }, 0.0)
    });
    kron_all(&vec![h; n])
}

fn diagonal(phases: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_fn(phases.len(), phases.len(), |r, c| {
        if r == c {
            markovize::numerics::Complex64::from_polar(1.0, phases[r])
        } else {
            num_complex_pair(0.0, 0.0)
        }
    })
}

fn circuit_integrity(opts: &ValidateOptions) -> CliResult<Check> {
    let hook = if opts.corrupt_phase {
        CircuitHook::CorruptPhase
    } else {
        CircuitHook::None
    };
    let mut rng = RngStream::new(7001, 0);
    let mut failures = Vec::new();

    let mut worst: f64 = 0.0;
    for n in 2..=10 {
        let spec = CircuitSpec::new(n, 2, 1e-3, 2)?;
        let u = WCircuit::sample_with_hook(&spec, &mut rng, hook).unitary()?;
        let r = u.unitarity_residual();
        if r > UNITARY_TOL {
            failures.push(format!("unitarity residual {r:.1e} at n={n}"));
        }
        worst = worst.max(r);
    }

    let spec = CircuitSpec::new(2, 4, 1e-3, 1)?;
    let w = WCircuit::sample_with_hook(&spec, &mut rng, hook);
    let sets = phase_sets(4)?;
    let d: Vec<ComplexMatrix> = w
        .layers()
        .iter()
        .map(|g| diagonal(&layer_phases(2, g, &sets)))
        .collect();
    let h = hadamard_all(2);
    let oracle = &(&(&(&d[2] * &h) * &d[1]) * &h) * &d[0];
    let diff = w.unitary()?.max_abs_diff(&oracle);
    if diff > 1e-12 && !opts.corrupt_phase {
        failures.push(format!("five-matrix product differs by {diff:.1e}"));
    }

    for (n, ell) in [(2, 1), (3, 0), (5, 3), (12, 2), (35, 12)] {
        let spec = CircuitSpec::new(n, 3, 0.5, ell)?;
        let expect = (2 * ell + 1) * n * (n - 1) / 2;
        let sampled: usize = WCircuit::sample(&spec, &mut rng)
            .layers()
            .iter()
            .map(Vec::len)
            .sum();
        if gate_count(&spec).0 != expect || sampled != expect {
            failures.push(format!("gate count mismatch at n={n}, ell={ell}"));
        }
    }

    let detail = if failures.is_empty() {
        format!("max unitarity residual {worst:.1e} for n<=10; oracle diff {diff:.1e}; gate counts match")
    } else {
        failures.join("; ")
    };
    Ok(Check::new(failures.is_empty(), detail))
}

fn markovianization(opts: &ValidateOptions) -> CliResult<Check> {
    let samples = 500;
    let mut means = Vec::new();
    for (i, ell) in [0usize, 1, 2, 4].into_iter().enumerate() {
        let circuit = CircuitSpec::new(6, 2, 1e-3, ell)?;
        let spec = EnsembleSpec::design(circuit, 1, 1, samples, 8001 + i as u64)?;
        let records = run_ensemble(&spec, opts.threads, MeasureSet { n1_marginal: false })?;
        let v: Vec<f64> = records.iter().map(|r| r.n2id).collect();
        means.push((ell, mean_stderr(&v)));
    }
    let haar = EnsembleSpec::haar(ProcessDims::new(32, 2, 1)?, samples, 8100);
    let records = run_ensemble(&haar, opts.threads, MeasureSet { n1_marginal: false })?;
    let v: Vec<f64> = records.iter().map(|r| r.n2id).collect();
    let (haar_mean, haar_se) = mean_stderr(&v);

    let mut problems = Vec::new();
    for w in means.windows(2) {
        let ((l0, (m0, s0)), (l1, (m1, s1))) = (w[0], w[1]);
        let se = (s0 * s0 + s1 * s1).sqrt();
        if m1 > m0 + 2.0 * se {
            problems.push(format!(
                "rises {:.1} se from ell={l0} to ell={l1}",
                (m1 - m0) / se
            ));
        }
    }
    let (_, (m4, s4)) = means[3];
    let tol = (0.1 * haar_mean).max(5.0 * (s4 * s4 + haar_se * haar_se).sqrt());
    if (m4 - haar_mean).abs() > tol {
        problems.push(format!("ell=4 off the haar mean by more than {tol:.4}"));
    }
    let ok = problems.is_empty();

    let trend: Vec<String> = means
        .iter()
        .map(|(l, (m, s))| format!("ell={l}: {m:.4}±{s:.4}"))
        .collect();
    Ok(Check::new(
        ok,
        format!(
            "{}; haar {haar_mean:.4}±{haar_se:.4}{}",
            trend.join(", "),
            if ok {
                String::new()
            } else {
                format!("; {}", problems.join("; "))
            }
        ),
    ))
}

fn stability_oracle(_: &ValidateOptions) -> CliResult<Check> {
    let mut oracle = Oracle::new();
    let mut rng = RngStream::new(9001, 0);
    let mut unif = || rng.index_below(1 << 30) as f64 / (1u64 << 30) as f64;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for _ in 0..100 {
        let log2_de = 1 + (unif() * 60.0) as u32;
        let k = (unif() * 5.0) as u32;
        let t = 2 + (unif() * 9.0) as u32;
        let d_s = 2 + (unif() * 2.0) as u64;
        let delta = 0.01 + 0.49 * unif();
        let epsilon = 10f64.powf(-15.0 * unif());
        let m = (0.05 + 0.95 * unif()) * t as f64 / 4.0;
        let d_e = 1u64 << log2_de;

        let mut track = |what: &str, rel: f64| {
            if !(rel <= worst) {
                worst = rel;
                worst_at = format!("{what} at d_E=2^{log2_de} d_S={d_s} k={k} t={t}");
            }
        };
        let rel = |a: f64, b: f64| ((a - b) / b).abs();

        let e = expected_purity_haar(d_e, d_s, k)?.to_f64().expect("finite");
        let oe = oracle.expected_purity(d_e, d_s, k);
        track("expected purity", rel(e, oracle.to_f64(&oe)));

        let b = haar_b(d_e, d_s, k)?;
        let ob = oracle.b(d_e, d_s, k);
        track("B", rel(b, oracle.to_f64(&ob)));

        let c = haar_c(d_e, d_s, k)?.to_f64().expect("finite");
        let oc = oracle.c(d_e, d_s, k);
        track("C", rel(c, oracle.to_f64(&oc)));

        // compare in log2 so huge values stay comparable: relative error of
        // the linear value is 2^Δ − 1
        let eta = oracle.eta(d_e, d_s, k);
        let ol = oracle.log2(&eta);
        let ol = oracle.to_f64(&ol);
        track(
            "eta",
            ((log2_eta(d_e, d_s, k)? - ol) * std::f64::consts::LN_2)
                .exp_m1()
                .abs(),
        );

        let p = BoundParams {
            d_s,
            log2_de,
            k,
            t,
            epsilon,
            delta,
            m: MChoice::Explicit(m),
        };
        let got = design_tail_bound(&p, m)?.log2_total;
        let want = oracle.design_bound(d_e, d_s, k, t, epsilon, delta, m);
        let want = oracle.log2(&want);
        let want = oracle.to_f64(&want);
        track(
            "design bound",
            ((got - want) * std::f64::consts::LN_2).exp_m1().abs(),
        );
    }
    Ok(Check::new(
        worst <= 1e-9,
        format!("worst relative error {worst:.1e} over 100 tuples ({worst_at})"),
    ))
}

fn determinism(_: &ValidateOptions) -> CliResult<Check> {
    let config = SampleConfig {
        ensemble: EnsembleArgs {
            ensemble: EnsembleChoice::Haar,
            log2_de: Some(2),
            ds: 2,
            k: 1,
            seed: 7,
            n: None,
            t: 2,
            epsilon: 1e-3,
            ell: None,
            initial: InitialChoice::Zero,
        },
        samples: 100,
        deltas: RealList(vec![0.05, 0.1]),
    };
    let (a, sa) = sample(&config, 1, false)?;
    let (b, sb) = sample(&config, 1, false)?;
    let (c, sc) = sample(&config, 8, false)?;
    let ok = a == b && a == c && sa == sb && sa == sc;
    Ok(Check::new(
        ok,
        format!(
            "{} CSV bytes; repeat run {}, 8 threads {}",
            a.len(),
            if a == b { "identical" } else { "differs" },
            if a == c { "identical" } else { "differs" }
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        for (i, c) in CRITERIA.iter().enumerate() {
            assert_eq!(c.id as usize, i + 1);
            assert_eq!(criterion(c.name).unwrap().id, c.id);
        }
        assert!(run_suite(&["nope".into()], &ValidateOptions::default()).is_err());
    }

    #[test]
    fn corrupt_hook_fails_integrity_naming_unitarity() {
        let opts = ValidateOptions {
            corrupt_phase: true,
            ..Default::default()
        };
        let out = run_criterion(criterion("circuit-integrity").unwrap(), &opts);
        assert!(!out.passed);
        assert!(out.detail.contains("unitarity"));
    }

    #[test]
    fn fast_criteria_pass() {
        let out = run_suite(
            &[
                "premise-bound".into(),
                "repetitions".into(),
                "markov-null".into(),
            ],
            &ValidateOptions::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.passed), "{out:?}");
    }
}
