//! Seeded ensembles of random processes and the statistics drawn from them.
//!
//! Sample `i` of an ensemble uses the RNG stream `(base_seed, i)`, so any
//! sample can be regenerated on its own and parallel runs give the same
//! records in the same order as serial ones.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::designs::{CircuitHook, CircuitSpec, WCircuit};
use crate::error::{Error, Result};
use crate::measures::{nm_one_marginal, nm_two_identity, purity};
use crate::numerics::{haar_unitary, hermitian_eigen, ComplexMatrix, RngStream};
use crate::process::{ensure_state, evolve_components, ProcessChoi, ProcessDims};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnsembleKind {
    /// `k+1` independent Haar unitaries on `E⊗S`.
    HaarPerStep,
    /// `k+1` independent circuits on `n = log2(d_E d_S)` qubits; the system
    /// occupies the last qubits.
    DesignCircuit {
        circuit: CircuitSpec,
        hook: CircuitHook,
    },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum InitialState {
    /// `|0…0⟩` on `E⊗S`.
    #[default]
    AllZeroPure,
    /// `I_E/d_E ⊗ |0⟩⟨0|_S`.
    MixedEnvironment,
    Explicit(ComplexMatrix),
}

impl InitialState {
    pub fn name(&self) -> &'static str {
        match self {
            InitialState::AllZeroPure => "all-zero-pure",
            InitialState::MixedEnvironment => "mixed-environment",
            InitialState::Explicit(_) => "explicit",
        }
    }

    /// Weighted pure components `√pᵢ |vᵢ⟩` of the state.
    fn components(&self, dims: ProcessDims) -> Result<Vec<Vec<Complex64>>> {
        let d_es = dims.d_es();
        let basis = |i: usize, w: f64| {
            let mut v = vec![Complex64::new(0.0, 0.0); d_es];
            v[i] = Complex64::new(w, 0.0);
            v
        };
        Ok(match self {
            InitialState::AllZeroPure => vec![basis(0, 1.0)],
            InitialState::MixedEnvironment => {
                let w = (1.0 / dims.d_e as f64).sqrt();
                (0..dims.d_e).map(|e| basis(e * dims.d_s, w)).collect()
            }
            InitialState::Explicit(rho) => {
                ensure_state(rho, d_es)?;
                let (vals, vecs) = hermitian_eigen(rho)?;
                vals.into_iter()
                    .zip(vecs)
                    .filter(|(l, _)| *l > 0.0)
                    .map(|(l, v)| v.into_iter().map(|z| z * l.sqrt()).collect())
                    .collect()
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub dims: ProcessDims,
    pub initial: InitialState,
    pub samples: usize,
    pub base_seed: u64,
}

impl EnsembleSpec {
    pub fn haar(dims: ProcessDims, samples: usize, base_seed: u64) -> Self {
        Self {
            kind: EnsembleKind::HaarPerStep,
            dims,
            initial: InitialState::default(),
            samples,
            base_seed,
        }
    }

    /// Design-circuit ensemble with `d_S = 2^system_qubits` and
    /// `d_E = 2^(n − system_qubits)`.
    pub fn design(
        circuit: CircuitSpec,
        system_qubits: usize,
        k: usize,
        samples: usize,
        base_seed: u64,
    ) -> Result<Self> {
        if system_qubits == 0 || system_qubits > circuit.n() {
            return Err(Error::Domain(format!(
                "system must use between 1 and {} qubits",
                circuit.n()
            )));
        }
        let dims = ProcessDims::new(1 << (circuit.n() - system_qubits), 1 << system_qubits, k)?;
        Ok(Self {
            kind: EnsembleKind::DesignCircuit {
                circuit,
                hook: CircuitHook::None,
            },
            dims,
            initial: InitialState::default(),
            samples,
            base_seed,
        })
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Domain("ensemble needs at least one sample".into()));
        }
        if let EnsembleKind::DesignCircuit { circuit, .. } = &self.kind {
            let (d_e, d_s) = (self.dims.d_e, self.dims.d_s);
            if !d_e.is_power_of_two() || !d_s.is_power_of_two() {
                return Err(Error::Domain(format!(
                    "design ensembles need power-of-two d_E and d_S, got {d_e} and {d_s}"
                )));
            }
            if 1usize << circuit.n() != d_e * d_s {
                return Err(Error::DimensionMismatch(format!(
                    "{} qubits do not match d_E d_S = {}",
                    circuit.n(),
                    d_e * d_s
                )));
            }
        }
        if let InitialState::Explicit(rho) = &self.initial {
            ensure_state(rho, self.dims.d_es())?;
        }
        Ok(())
    }

    /// JSON echo of the ensemble, as embedded in run summaries.
    pub fn describe(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "d_e": self.dims.d_e,
            "d_s": self.dims.d_s,
            "k": self.dims.k,
            "initial_state": self.initial.name(),
            "samples": self.samples,
            "base_seed": self.base_seed,
        });
        match &self.kind {
            EnsembleKind::HaarPerStep => v["kind"] = "haar".into(),
            EnsembleKind::DesignCircuit { circuit, hook } => {
                v["kind"] = "design".into();
                v["n"] = circuit.n().into();
                v["t"] = circuit.t().into();
                v["epsilon"] = circuit.epsilon().into();
                v["ell"] = circuit.ell().into();
                if *hook != CircuitHook::None {
                    v["hook"] = format!("{hook:?}").into();
                }
            }
        }
        v
    }
}

fn step_unitaries(spec: &EnsembleSpec, rng: &mut RngStream) -> Result<Vec<ComplexMatrix>> {
    let steps = spec.dims.k + 1;
    match &spec.kind {
        EnsembleKind::HaarPerStep => Ok((0..steps)
            .map(|_| haar_unitary(spec.dims.d_es(), rng))
            .collect()),
        EnsembleKind::DesignCircuit { circuit, hook } => (0..steps)
            .map(|_| WCircuit::sample_with_hook(circuit, rng, *hook).unitary())
            .collect(),
    }
}

fn sample_with_components(
    spec: &EnsembleSpec,
    components: &[Vec<Complex64>],
    index: usize,
) -> Result<ProcessChoi> {
    let mut rng = RngStream::new(spec.base_seed, index as u64);
    let unitaries = step_unitaries(spec, &mut rng)?;
    Ok(evolve_components(components, &unitaries, spec.dims))
}

/// Sample `index` of the ensemble; a pure function of `(base_seed, index)`.
pub fn sample_process(spec: &EnsembleSpec, index: usize) -> Result<ProcessChoi> {
    spec.validate()?;
    if index >= spec.samples {
        return Err(Error::IndexOutOfRange(format!(
            "sample {index} of an ensemble of {}",
            spec.samples
        )));
    }
    let components = spec.initial.components(spec.dims)?;
    sample_with_components(spec, &components, index)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Purity,
    N2Identity,
    N1Marginal,
}

/// Per-sample measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub purity: f64,
    pub n2id: f64,
    pub n1marg: f64,
    pub seed: u64,
}

impl SampleRecord {
    pub fn get(&self, m: Measure) -> f64 {
        match m {
            Measure::Purity => self.purity,
            Measure::N2Identity => self.n2id,
            Measure::N1Marginal => self.n1marg,
        }
    }
}

/// Which per-sample measures to compute. The Schatten-1 measure needs an
/// eigendecomposition of the Choi state and can be skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeasureSet {
    pub n1_marginal: bool,
}

impl Default for MeasureSet {
    fn default() -> Self {
        Self { n1_marginal: true }
    }
}

fn record(
    spec: &EnsembleSpec,
    upsilon: &ProcessChoi,
    index: usize,
    set: MeasureSet,
) -> Result<SampleRecord> {
    Ok(SampleRecord {
        index,
        purity: purity(upsilon),
        n2id: nm_two_identity(upsilon)?,
        n1marg: if set.n1_marginal {
            nm_one_marginal(upsilon)
        } else {
            f64::NAN
        },
        seed: spec.base_seed,
    })
}

/// Samples the whole ensemble on `threads` worker threads; records come back
/// in index order regardless of the thread count.
pub fn run_ensemble(
    spec: &EnsembleSpec,
    threads: usize,
    set: MeasureSet,
) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    let components = spec.initial.components(spec.dims)?;
    let work = |i: usize| -> Result<SampleRecord> {
        let upsilon = sample_with_components(spec, &components, i)?;
        record(spec, &upsilon, i, set)
    };
    if threads <= 1 {
        return (0..spec.samples).map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    pool.install(|| (0..spec.samples).into_par_iter().map(work).collect())
}

pub const CSV_HEADER: &str = "index,purity,n2id,n1marg,seed";

/// Records as CSV with 17 significant digits.
pub fn records_to_csv(records: &[SampleRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{}\n",
            r.index, r.purity, r.n2id, r.n1marg, r.seed
        ));
    }
    out
}

/// Empirical `P[measure ≥ δ]` with a 95% Clopper–Pearson interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub delta: f64,
    pub hits: usize,
    pub samples: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const CONFIDENCE: f64 = 0.95;

/// Exact binomial interval for `hits` successes out of `samples`.
pub fn clopper_pearson(hits: usize, samples: usize, confidence: f64) -> (f64, f64) {
    assert!(samples > 0 && hits <= samples);
    let alpha = 1.0 - confidence;
    let (x, n) = (hits as f64, samples as f64);
    let low = if hits == 0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0)
            .expect("positive shapes")
            .inverse_cdf(alpha / 2.0)
    };
    let high = if hits == samples {
        1.0
    } else {
        Beta::new(x + 1.0, n - x)
            .expect("positive shapes")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

pub fn tail_from_values(values: &[f64], delta: f64) -> TailEstimate {
    let samples = values.len();
    let hits = values.iter().filter(|&&v| v >= delta).count();
    let p_hat = hits as f64 / samples as f64;
    let (low, high) = clopper_pearson(hits, samples, CONFIDENCE);
    TailEstimate {
        delta,
        hits,
        samples,
        p_hat,
        ci_low: low.clamp(0.0, p_hat),
        ci_high: high.clamp(p_hat, 1.0),
    }
}

pub fn estimate_tail(spec: &EnsembleSpec, measure: Measure, delta: f64) -> Result<TailEstimate> {
    let set = MeasureSet {
        n1_marginal: measure == Measure::N1Marginal,
    };
    let records = run_ensemble(spec, 1, set)?;
    let values: Vec<f64> = records.iter().map(|r| r.get(measure)).collect();
    Ok(tail_from_values(&values, delta))
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn estimate_mean_purity(spec: &EnsembleSpec) -> Result<(f64, f64)> {
    if spec.samples < 2 {
        return Err(Error::Domain(
            "need at least two samples for a standard error".into(),
        ));
    }
    let records = run_ensemble(spec, 1, MeasureSet { n1_marginal: false })?;
    let values: Vec<f64> = records.iter().map(|r| r.purity).collect();
    Ok(mean_stderr(&values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Run summary: ensemble echo, means, and tail estimates of `n2id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub ensemble: serde_json::Value,
    pub purity: MeanEstimate,
    pub n2id: MeanEstimate,
    pub n1marg: MeanEstimate,
    pub tails: Vec<TailEstimate>,
}

impl EnsembleSummary {
    pub fn new(spec: &EnsembleSpec, records: &[SampleRecord], deltas: &[f64]) -> Self {
        let column = |m: Measure| -> Vec<f64> { records.iter().map(|r| r.get(m)).collect() };
        let est = |m: Measure| {
            let (mean, stderr) = mean_stderr(&column(m));
            MeanEstimate { mean, stderr }
        };
        let n2 = column(Measure::N2Identity);
        Self {
            ensemble: spec.describe(),
            purity: est(Measure::Purity),
            n2id: est(Measure::N2Identity),
            n1marg: est(Measure::N1Marginal),
            tails: deltas.iter().map(|&d| tail_from_values(&n2, d)).collect(),
        }
    }
}
