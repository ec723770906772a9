//! Random diagonal circuits built from discrete two-qubit phase gates
//! interleaved with full Hadamard layers.
//!
//! Qubits are numbered `0..n` with qubit 0 the most significant bit of the
//! computational-basis index. A layer gates every unordered pair `(i, j)`,
//! `i < j`, once, in lexicographic order. Diagonal layers are held as phase
//! exponent vectors; the dense unitary is only formed on request.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, RngStream};

/// Largest qubit count for which a dense unitary is built by default.
pub const DENSE_QUBIT_CAP: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSets {
    t: u32,
    phi_values: Vec<f64>,
    theta_values: Vec<f64>,
}

impl PhaseSets {
    pub fn t(&self) -> u32 {
        self.t
    }

    /// `{2πm/(t+1)}` for `m = 0..=t`.
    pub fn phi_values(&self) -> &[f64] {
        &self.phi_values
    }

    /// `{2πm/(⌊t/2⌋+1)}` for `m = 0..=⌊t/2⌋`.
    pub fn theta_values(&self) -> &[f64] {
        &self.theta_values
    }
}

pub fn phase_sets(t: u32) -> Result<PhaseSets> {
    if t < 1 {
        return Err(Error::Domain("design order t must be at least 1".into()));
    }
    let grid = |count: u32| -> Vec<f64> {
        (0..count)
            .map(|m| 2.0 * PI * m as f64 / count as f64)
            .collect()
    };
    Ok(PhaseSets {
        t,
        phi_values: grid(t + 1),
        theta_values: grid(t / 2 + 1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircuitSpec {
    n: usize,
    t: u32,
    epsilon: f64,
    ell: usize,
}

impl CircuitSpec {
    pub fn new(n: usize, t: u32, epsilon: f64, ell: usize) -> Result<Self> {
        check_domain(t, epsilon, n)?;
        Ok(Self { n, t, epsilon, ell })
    }

    /// Spec with `ell = min_repetitions(t, epsilon, n)`.
    pub fn with_min_repetitions(n: usize, t: u32, epsilon: f64) -> Result<Self> {
        let ell = min_repetitions(t, epsilon, n)?;
        Self::new(n, t, epsilon, ell)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn pair_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    /// Number of diagonal layers, `2ℓ+1`.
    pub fn layer_count(&self) -> usize {
        2 * self.ell + 1
    }
}

fn check_domain(t: u32, epsilon: f64, n: usize) -> Result<()> {
    if t < 1 {
        return Err(Error::Domain("design order t must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} not in (0, 1]")));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 qubits, got {n}")));
    }
    Ok(())
}

/// `t − log₂(ε)/n`.
pub fn gate_depth(t: u32, epsilon: f64, n: usize) -> Result<f64> {
    check_domain(t, epsilon, n)?;
    Ok(t as f64 - epsilon.log2() / n as f64)
}

/// `⌈t − log₂(ε)/n⌉`.
pub fn min_repetitions(t: u32, epsilon: f64, n: usize) -> Result<usize> {
    let depth = gate_depth(t, epsilon, n)?;
    // values within rounding of an integer are that integer, not the next one
    let nearest = depth.round();
    let ell = if (depth - nearest).abs() <= 1e-12 * nearest.max(1.0) {
        nearest
    } else {
        depth.ceil()
    };
    Ok(ell as usize)
}

/// `(two-qubit gates, Hadamard gates)`.
pub fn gate_count(spec: &CircuitSpec) -> (usize, usize) {
    (
        spec.layer_count() * spec.pair_count(),
        2 * spec.ell * spec.n,
    )
}

/// One diagonal gate on qubits `i < j`, with phases given as indices into
/// the [`PhaseSets`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairGate {
    pub i: usize,
    pub j: usize,
    pub phi1_idx: u32,
    pub phi2_idx: u32,
    pub theta_idx: u32,
}

/// Draws one gate per pair, pairs in lexicographic order, `φ₁, φ₂, ϑ` per pair.
pub fn sample_rdc_gates(n: usize, sets: &PhaseSets, rng: &mut RngStream) -> Vec<PairGate> {
    let n_phi = sets.phi_values.len() as u32;
    let n_theta = sets.theta_values.len() as u32;
    let mut gates = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let phi1_idx = rng.index_below(n_phi);
            let phi2_idx = rng.index_below(n_phi);
            let theta_idx = rng.index_below(n_theta);
            gates.push(PairGate {
                i,
                j,
                phi1_idx,
                phi2_idx,
                theta_idx,
            });
        }
    }
    gates
}

/// Phase exponents of a diagonal layer: entry `b` is the total phase on basis
/// state `|b⟩`.
pub fn layer_phases(n: usize, gates: &[PairGate], sets: &PhaseSets) -> Vec<f64> {
    let mut phases = vec![0.0; 1 << n];
    for g in gates {
        let phi1 = sets.phi_values[g.phi1_idx as usize];
        let phi2 = sets.phi_values[g.phi2_idx as usize];
        let theta = sets.theta_values[g.theta_idx as usize];
        let bi = n - 1 - g.i;
        let bj = n - 1 - g.j;
        for (b, p) in phases.iter_mut().enumerate() {
            let xi = (b >> bi) & 1 == 1;
            let xj = (b >> bj) & 1 == 1;
            if xi {
                *p += phi1;
            }
            if xj {
                *p += phi2;
            }
            if xi && xj {
                *p += theta;
            }
        }
    }
    phases
}

/// Samples a fresh diagonal layer and returns its phase exponents.
pub fn sample_rdc_layer(n: usize, t: u32, rng: &mut RngStream) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 qubits, got {n}")));
    }
    let sets = phase_sets(t)?;
    let gates = sample_rdc_gates(n, &sets, rng);
    Ok(layer_phases(n, &gates, &sets))
}

/// Test hooks applied when a circuit is sampled or turned into a matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CircuitHook {
    #[default]
    None,
    /// Every drawn phase index is replaced by 0.
    ZeroPhases,
    /// The first diagonal entry of the first layer gets modulus 1.5, so the
    /// result is not unitary.
    CorruptPhase,
}

/// A sampled circuit `D_{2ℓ+1} H D_{2ℓ} H ⋯ H D_1`, stored as gate lists.
#[derive(Clone, Debug, PartialEq)]
pub struct WCircuit {
    n: usize,
    sets: PhaseSets,
    layers: Vec<Vec<PairGate>>,
    corrupt: bool,
}

impl WCircuit {
    pub fn sample(spec: &CircuitSpec, rng: &mut RngStream) -> Self {
        Self::sample_with_hook(spec, rng, CircuitHook::None)
    }

    pub fn sample_with_hook(spec: &CircuitSpec, rng: &mut RngStream, hook: CircuitHook) -> Self {
        let sets = phase_sets(spec.t).expect("spec validated t");
        let layers = (0..spec.layer_count())
            .map(|_| {
                let mut gates = sample_rdc_gates(spec.n, &sets, rng);
                if hook == CircuitHook::ZeroPhases {
                    for g in &mut gates {
                        g.phi1_idx = 0;
                        g.phi2_idx = 0;
                        g.theta_idx = 0;
                    }
                }
                gates
            })
            .collect();
        Self {
            n: spec.n,
            sets,
            layers,
            corrupt: hook == CircuitHook::CorruptPhase,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> u32 {
        self.sets.t
    }

    pub fn ell(&self) -> usize {
        self.layers.len() / 2
    }

    /// Diagonal layers in application order (`D_1` first).
    pub fn layers(&self) -> &[Vec<PairGate>] {
        &self.layers
    }

    /// Dense unitary, refusing more than [`DENSE_QUBIT_CAP`] qubits.
    pub fn unitary(&self) -> Result<ComplexMatrix> {
        self.unitary_with_cap(DENSE_QUBIT_CAP)
    }

    pub fn unitary_with_cap(&self, max_qubits: usize) -> Result<ComplexMatrix> {
        if self.n > max_qubits {
            return Err(Error::ResourceCap(format!(
                "dense {}-qubit unitary exceeds the {max_qubits}-qubit cap",
                self.n
            )));
        }
        let dim = 1usize << self.n;
        let mut m = ComplexMatrix::identity(dim);
        for (li, gates) in self.layers.iter().enumerate() {
            if li > 0 {
                hadamard_layer(&mut m, self.n);
            }
            let phases = layer_phases(self.n, gates, &self.sets);
            let data = m.data_mut();
            for (r, p) in phases.iter().enumerate() {
                let mut f = Complex64::from_polar(1.0, *p);
                if self.corrupt && li == 0 && r == 0 {
                    f *= 1.5;
                }
                for z in &mut data[r * dim..(r + 1) * dim] {
                    *z *= f;
                }
            }
        }
        Ok(m)
    }

    /// Text form: a `w-circuit v1 n t` header, then `pair i j phi1_idx
    /// phi2_idx theta_idx` lines, with a `hadamard-layer` line between
    /// consecutive diagonal layers. Qubit indices are 0-based.
    pub fn to_dump(&self) -> String {
        let mut out = format!("w-circuit v1 {} {}\n", self.n, self.sets.t);
        for (li, gates) in self.layers.iter().enumerate() {
            if li > 0 {
                out.push_str("hadamard-layer\n");
            }
            for g in gates {
                let _ = writeln!(
                    out,
                    "pair {} {} {} {} {}",
                    g.i, g.j, g.phi1_idx, g.phi2_idx, g.theta_idx
                );
            }
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty circuit dump".into()))?
            .split_whitespace()
            .collect();
        if header.len() != 4 || header[0] != "w-circuit" || header[1] != "v1" {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let n: usize = parse_field(header[2])?;
        let t: u32 = parse_field(header[3])?;
        if n < 2 {
            return Err(Error::Parse(format!("need at least 2 qubits, got {n}")));
        }
        let sets = phase_sets(t).map_err(|e| Error::Parse(e.to_string()))?;
        let mut layers = vec![Vec::new()];
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["hadamard-layer"] => layers.push(Vec::new()),
                ["pair", rest @ ..] if rest.len() == 5 => {
                    let g = PairGate {
                        i: parse_field(rest[0])?,
                        j: parse_field(rest[1])?,
                        phi1_idx: parse_field(rest[2])?,
                        phi2_idx: parse_field(rest[3])?,
                        theta_idx: parse_field(rest[4])?,
                    };
                    let n_phi = sets.phi_values.len() as u32;
                    let n_theta = sets.theta_values.len() as u32;
                    if g.i >= g.j
                        || g.j >= n
                        || g.phi1_idx >= n_phi
                        || g.phi2_idx >= n_phi
                        || g.theta_idx >= n_theta
                    {
                        return Err(Error::Parse(format!("gate out of range: {line}")));
                    }
                    layers.last_mut().expect("nonempty").push(g);
                }
                _ => return Err(Error::Parse(format!("unrecognized line: {line}"))),
            }
        }
        if layers.len() % 2 == 0 {
            return Err(Error::Parse(
                "odd number of Hadamard layers; expected 2ℓ".into(),
            ));
        }
        Ok(Self {
            n,
            sets,
            layers,
            corrupt: false,
        })
    }
}

fn parse_field<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad field {s:?}")))
}

/// Left-multiplies by `H^{⊗n}` as one butterfly pass per qubit.
fn hadamard_layer(m: &mut ComplexMatrix, n: usize) {
    let dim = 1usize << n;
    let cols = m.cols();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let data = m.data_mut();
    for bit in 0..n {
        let stride = 1usize << bit;
        for r0 in 0..dim {
            if r0 & stride != 0 {
                continue;
            }
            let r1 = r0 | stride;
            let (lo, hi) = data.split_at_mut(r1 * cols);
            let a = &mut lo[r0 * cols..(r0 + 1) * cols];
            let b = &mut hi[..cols];
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = (u + v) * s;
                *y = (u - v) * s;
            }
        }
    }
}

/// Samples a circuit for `spec` and returns its dense unitary.
pub fn build_w_circuit(spec: &CircuitSpec, rng: &mut RngStream) -> Result<ComplexMatrix> {
    WCircuit::sample(spec, rng).unitary()
}
