//! Choi states of multi-step processes generated by system–environment
//! unitaries, built through an explicit ancilla dilation.
//!
//! # Leg order
//!
//! A `k`-step Choi matrix lives on `2k + 1` system-sized legs, ordered
//!
//! ```text
//! (S_out, in_1, out_1, in_2, out_2, ..., in_k, out_k)
//! ```
//!
//! `out_i` carries what the dynamics delivered to slot `i` (the input of the
//! intervention made there) and `in_i` is where the intervention's output is
//! fed back in. `S_out` is the system after the last unitary. Leg `0` is the
//! most significant factor of the matrix index.
//!
//! In the dilation, every slot owns a maximally entangled ancilla pair placed
//! in the same `(in_i, out_i)` order, and step `i` swaps the system with
//! `out_i` before `U_i` acts.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{
    hermitian_eigen, hermitian_eigenvalues, kron, kron_all, partial_trace, permute_subsystems,
    ComplexMatrix, HERMITIAN_TOL,
};

/// Tolerance for positivity and normalization checks on states.
pub const STATE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProcessDims {
    pub d_e: usize,
    pub d_s: usize,
    pub k: usize,
}

impl ProcessDims {
    pub fn new(d_e: usize, d_s: usize, k: usize) -> Result<Self> {
        if d_e < 1 {
            return Err(Error::Domain(format!("d_E must be >= 1, got {d_e}")));
        }
        if d_s < 2 {
            return Err(Error::Domain(format!("d_S must be >= 2, got {d_s}")));
        }
        Ok(Self { d_e, d_s, k })
    }

    pub fn d_es(&self) -> usize {
        self.d_e * self.d_s
    }

    pub fn leg_count(&self) -> usize {
        2 * self.k + 1
    }

    /// `d_S^(2k+1)`
    pub fn choi_dim(&self) -> usize {
        self.d_s.pow(self.leg_count() as u32)
    }

    /// `d_E * d_S^(2k+1)`
    pub fn dilation_dim(&self) -> usize {
        self.d_e * self.choi_dim()
    }

    pub fn leg_dims(&self) -> Vec<usize> {
        vec![self.d_s; self.leg_count()]
    }
}

/// Named legs of a Choi matrix, mapped to positions by [`Leg::index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    SystemOut,
    /// Intervention output fed into the dynamics at slot `i` (1-based).
    In(usize),
    /// System handed to the intervention at slot `i` (1-based).
    Out(usize),
}

impl Leg {
    pub fn index(self) -> usize {
        match self {
            Leg::SystemOut => 0,
            Leg::In(i) => 2 * i - 1,
            Leg::Out(i) => 2 * i,
        }
    }
}

fn min_eigenvalue(m: &ComplexMatrix) -> Result<f64> {
    Ok(*hermitian_eigenvalues(m)?.last().expect("non-empty matrix"))
}

/// Checks that `rho` is a density matrix of dimension `d`.
pub fn ensure_state(rho: &ComplexMatrix, d: usize) -> Result<()> {
    if rho.rows() != d || rho.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "state must be {d}x{d}, got {}x{}",
            rho.rows(),
            rho.cols()
        )));
    }
    let residual = rho.hermiticity_residual();
    if residual > HERMITIAN_TOL {
        return Err(Error::InvalidState(format!(
            "not Hermitian (residual {residual:e})"
        )));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let min = min_eigenvalue(rho)?;
    if min < -STATE_TOL {
        return Err(Error::InvalidState(format!(
            "not positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessChoi {
    dims: ProcessDims,
    matrix: ComplexMatrix,
}

impl ProcessChoi {
    /// Wraps a matrix after checking it is a trace-one, positive Choi state
    /// of the right size.
    pub fn new(dims: ProcessDims, matrix: ComplexMatrix) -> Result<Self> {
        ensure_state(&matrix, dims.choi_dim())?;
        Ok(Self { dims, matrix })
    }

    pub(crate) fn from_parts_unchecked(dims: ProcessDims, matrix: ComplexMatrix) -> Self {
        debug_assert_eq!(matrix.rows(), dims.choi_dim());
        Self { dims, matrix }
    }

    /// `I / d_S^(2k+1)`.
    pub fn maximally_mixed(dims: ProcessDims) -> Self {
        let d = dims.choi_dim();
        Self {
            dims,
            matrix: ComplexMatrix::identity(d).scale_real(1.0 / d as f64),
        }
    }

    pub fn dims(&self) -> ProcessDims {
        self.dims
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// Reduced matrix on `legs`, returned with legs in ascending index order.
    pub fn marginal(&self, legs: &[usize]) -> Result<ComplexMatrix> {
        partial_trace(&self.matrix, &self.dims.leg_dims(), legs)
    }

    /// Plain-text dump: a `upsilon v1 dE dS k` header, then one
    /// `row col real imag` line per entry in row-major order.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so [`ProcessChoi::from_text`] round-trips exactly.
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let d = self.matrix.rows();
        let mut out = String::with_capacity(32 * d * d + 32);
        writeln!(
            out,
            "upsilon v1 {} {} {}",
            self.dims.d_e, self.dims.d_s, self.dims.k
        )
        .unwrap();
        for r in 0..d {
            for c in 0..d {
                let z = self.matrix[(r, c)];
                writeln!(out, "{r} {c} {:?} {:?}", z.re, z.im).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty input".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "upsilon" || fields[1] != "v1" {
            return Err(Error::Parse(format!("bad header line: {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad header field {s:?}: {e}")))
        };
        let dims = ProcessDims::new(num(fields[2])?, num(fields[3])?, num(fields[4])?)?;
        let d = dims.choi_dim();
        let mut data = vec![Complex64::new(0.0, 0.0); d * d];
        let mut seen = vec![false; d * d];
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("bad entry line: {line:?}")));
            }
            let r = num(f[0])?;
            let c = num(f[1])?;
            if r >= d || c >= d {
                return Err(Error::Parse(format!("entry ({r}, {c}) outside {d}x{d}")));
            }
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
            };
            data[r * d + c] = Complex64::new(parse_f(f[2])?, parse_f(f[3])?);
            seen[r * d + c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!(
                "missing entry ({}, {})",
                missing / d,
                missing % d
            )));
        }
        Self::new(dims, ComplexMatrix::new(d, d, data)?)
    }
}

/// Product of marginals of a Choi state over the Markov partition
/// `{(S_out, in_k), (out_k, in_{k-1}), ..., (out_2, in_1), (out_1)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChoi {
    dims: ProcessDims,
    groups: Vec<Vec<usize>>,
    factors: Vec<ComplexMatrix>,
}

impl MarkovChoi {
    pub fn dims(&self) -> ProcessDims {
        self.dims
    }

    /// Leg indices of each group, ascending within a group.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// One factor per group; legs inside a factor follow the group's order.
    pub fn factors(&self) -> &[ComplexMatrix] {
        &self.factors
    }

    /// Reassembles the tensor product of the factors in the standard leg order.
    pub fn to_process_choi(&self) -> ProcessChoi {
        let product = kron_all(&self.factors);
        let layout: Vec<usize> = self.groups.iter().flatten().copied().collect();
        let order: Vec<usize> = (0..layout.len())
            .map(|leg| layout.iter().position(|&l| l == leg).unwrap())
            .collect();
        let matrix = permute_subsystems(&product, &self.dims.leg_dims(), &order)
            .expect("groups partition the legs");
        ProcessChoi::from_parts_unchecked(self.dims, matrix)
    }
}

/// Groups of the Markov partition, as leg indices.
pub fn markov_partition(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![Leg::SystemOut.index()]];
    }
    let mut groups = vec![vec![Leg::SystemOut.index(), Leg::In(k).index()]];
    for j in (2..=k).rev() {
        let mut g = vec![Leg::Out(j).index(), Leg::In(j - 1).index()];
        g.sort_unstable();
        groups.push(g);
    }
    groups.push(vec![Leg::Out(1).index()]);
    groups
}

pub fn markov_product(upsilon: &ProcessChoi) -> MarkovChoi {
    let groups = markov_partition(upsilon.dims.k);
    let factors = groups
        .iter()
        .map(|g| upsilon.marginal(g).expect("valid leg indices"))
        .collect();
    MarkovChoi {
        dims: upsilon.dims,
        groups,
        factors,
    }
}

/// Normalized maximally entangled projector `(1/d) sum_ij |ii><jj|`.
pub fn max_entangled(d: usize) -> ComplexMatrix {
    let v = max_entangled_vector(d);
    ComplexMatrix::outer(&v)
}

fn max_entangled_vector(d: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); d * d];
    let amp = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
    for i in 0..d {
        v[i * d + i] = amp;
    }
    v
}

/// Subsystem layout of the dilation: `(E, S, in_1, out_1, ..., in_k, out_k)`.
pub fn dilation_dims(dims: ProcessDims) -> Vec<usize> {
    let mut v = vec![dims.d_e, dims.d_s];
    v.extend(std::iter::repeat_n(dims.d_s, 2 * dims.k));
    v
}

/// Dense permutation on the full dilation space exchanging the system with
/// the `out_i` ancilla (the half of pair `i` that receives the system).
pub fn swap_system_ancilla(i: usize, dims: ProcessDims) -> Result<ComplexMatrix> {
    if i < 1 || i > dims.k {
        return Err(Error::IndexOutOfRange(format!(
            "step {i} outside 1..={}",
            dims.k
        )));
    }
    let layout = dilation_dims(dims);
    let n = dims.dilation_dim();
    let s_pos = 1;
    let a_pos = 1 + Leg::Out(i).index();
    let mut stride = vec![1usize; layout.len()];
    for p in (0..layout.len() - 1).rev() {
        stride[p] = stride[p + 1] * layout[p + 1];
    }
    let mut p = ComplexMatrix::zeros(n, n);
    for idx in 0..n {
        let s = (idx / stride[s_pos]) % dims.d_s;
        let a = (idx / stride[a_pos]) % dims.d_s;
        let swapped =
            idx - s * stride[s_pos] - a * stride[a_pos] + a * stride[s_pos] + s * stride[a_pos];
        p[(swapped, idx)] = Complex64::new(1.0, 0.0);
    }
    Ok(p)
}

fn check_unitaries(unitaries: &[ComplexMatrix], dims: ProcessDims) -> Result<()> {
    if unitaries.len() != dims.k + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} steps need {} unitaries, got {}",
            dims.k,
            dims.k + 1,
            unitaries.len()
        )));
    }
    for (i, u) in unitaries.iter().enumerate() {
        if u.rows() != dims.d_es() || u.cols() != dims.d_es() {
            return Err(Error::DimensionMismatch(format!(
                "unitary {i} must be {0}x{0}, got {1}x{2}",
                dims.d_es(),
                u.rows(),
                u.cols()
            )));
        }
        u.ensure_unitary()?;
    }
    Ok(())
}

/// Choi state of the process generated by `rho0` on `E ⊗ S` and the step
/// unitaries `U_0..U_k` on `E ⊗ S`.
///
/// Mixed initial states are split into their eigenvectors, each evolved as
/// a pure dilation and recombined with its weight.
pub fn build_process_choi(
    rho0: &ComplexMatrix,
    unitaries: &[ComplexMatrix],
    dims: ProcessDims,
) -> Result<ProcessChoi> {
    ensure_state(rho0, dims.d_es())?;
    check_unitaries(unitaries, dims)?;
    let components = match pure_vector(rho0) {
        Some(v) => vec![v],
        None => {
            let (vals, vecs) = hermitian_eigen(rho0)?;
            vals.into_iter()
                .zip(vecs)
                .filter(|(l, _)| *l > 0.0)
                .map(|(l, v)| v.into_iter().map(|z| z * l.sqrt()).collect())
                .collect()
        }
    };
    Ok(evolve_components(&components, unitaries, dims))
}

/// Same as [`build_process_choi`] for a pure initial state `|psi>`.
pub fn build_process_choi_pure(
    psi: &[Complex64],
    unitaries: &[ComplexMatrix],
    dims: ProcessDims,
) -> Result<ProcessChoi> {
    if psi.len() != dims.d_es() {
        return Err(Error::DimensionMismatch(format!(
            "state vector must have length {}, got {}",
            dims.d_es(),
            psi.len()
        )));
    }
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > STATE_TOL {
        return Err(Error::InvalidState(format!(
            "vector norm^2 {norm} is not 1"
        )));
    }
    check_unitaries(unitaries, dims)?;
    Ok(evolve_components(&[psi.to_vec()], unitaries, dims))
}

/// Recovers `v` with `rho = |v><v|` when `rho` is pure.
fn pure_vector(rho: &ComplexMatrix) -> Option<Vec<Complex64>> {
    let purity = rho.trace_product(rho).ok()?.re;
    if (purity - 1.0).abs() > STATE_TOL {
        return None;
    }
    let d = rho.rows();
    let j = (0..d).max_by(|&a, &b| rho[(a, a)].re.total_cmp(&rho[(b, b)].re))?;
    let pivot = rho[(j, j)].re.sqrt();
    let v: Vec<Complex64> = (0..d).map(|i| rho[(i, j)] / pivot).collect();
    let rebuilt = ComplexMatrix::outer(&v);
    (rebuilt.max_abs_diff(rho) <= STATE_TOL).then_some(v)
}

/// Runs the dilation for each (sub-normalized) component vector and sums
/// the resulting reduced states. No validation.
pub(crate) fn evolve_components(
    components: &[Vec<Complex64>],
    unitaries: &[ComplexMatrix],
    dims: ProcessDims,
) -> ProcessChoi {
    let d_es = dims.d_es();
    let d_s = dims.d_s;
    let d_e = dims.d_e;
    let k = dims.k;
    let d_anc = d_s.pow(2 * k as u32);
    let choi_dim = dims.choi_dim();

    let mut anc = vec![Complex64::new(1.0, 0.0)];
    let pair = max_entangled_vector(d_s);
    for _ in 0..k {
        anc = anc
            .iter()
            .flat_map(|&a| pair.iter().map(move |&p| a * p))
            .collect();
    }

    let mut upsilon = ComplexMatrix::zeros(choi_dim, choi_dim);
    for v in components {
        // U_0 acts before any ancilla is touched
        let first = unitaries[0]
            .matmul(&ComplexMatrix::new(d_es, 1, v.clone()).expect("length checked"))
            .expect("shapes checked")
            .into_data();
        // rows: (e, s), columns: ancilla multi-index
        let mut state = ComplexMatrix::from_fn(d_es, d_anc, |r, c| first[r] * anc[c]);
        for (step, u) in unitaries.iter().enumerate().skip(1) {
            state = swap_into_ancilla(&state, dims, step);
            state = u.matmul(&state).expect("shapes checked");
        }
        // tr_E |psi><psi| with the remaining index (s, anc)
        let data = state.data();
        let row_len = d_s * d_anc;
        for e in 0..d_e {
            let block = &data[e * row_len..(e + 1) * row_len];
            for (r, &x) in block.iter().enumerate() {
                if x.norm_sqr() == 0.0 {
                    continue;
                }
                let out_row = &mut upsilon.data_mut()[r * choi_dim..(r + 1) * choi_dim];
                for (o, &y) in out_row.iter_mut().zip(block) {
                    *o += x * y.conj();
                }
            }
        }
    }
    ProcessChoi::from_parts_unchecked(dims, upsilon)
}

/// Swaps the system digit with the `out_step` ancilla digit.
fn swap_into_ancilla(state: &ComplexMatrix, dims: ProcessDims, step: usize) -> ComplexMatrix {
    let d_s = dims.d_s;
    let d_anc = state.cols();
    // ancilla legs (in_1, out_1, ..., in_k, out_k); out_step is position 2*step - 1
    let pos = 2 * step - 1;
    let legs = 2 * dims.k;
    let stride = d_s.pow((legs - 1 - pos) as u32);
    let mut out = ComplexMatrix::zeros(state.rows(), d_anc);
    for r in 0..state.rows() {
        let e = r / d_s;
        let s = r % d_s;
        for c in 0..d_anc {
            let a = (c / stride) % d_s;
            let src_row = e * d_s + a;
            let src_col = c - a * stride + s * stride;
            out[(r, c)] = state[(src_row, src_col)];
        }
    }
    out
}

/// Joint probability of a sequence of intervention outcomes followed by a
/// final measurement effect.
///
/// `intervention_chois[i - 1]` is the Choi matrix of the CP map applied at
/// slot `i`, in the usual `J = sum_ab |a><b| ⊗ A(|a><b|)` form (map input
/// first, map output second). `final_effect` is a POVM element on `S_out`.
///
/// The result is `d_S^k tr[Υ Λ^T]`, where `Λ` places `final_effect^T` on
/// `S_out` and each `J` on its `(out_i, in_i)` legs; the `d_S^k` factor
/// undoes the normalization of the ancilla pairs.
pub fn event_probability(
    upsilon: &ProcessChoi,
    intervention_chois: &[ComplexMatrix],
    final_effect: &ComplexMatrix,
) -> Result<f64> {
    let dims = upsilon.dims;
    let d_s = dims.d_s;
    if intervention_chois.len() != dims.k {
        return Err(Error::DimensionMismatch(format!(
            "{}-step process needs {} intervention Choi matrices, got {}",
            dims.k,
            dims.k,
            intervention_chois.len()
        )));
    }
    let tol = 1e-10;
    for (i, j) in intervention_chois.iter().enumerate() {
        if j.rows() != d_s * d_s || j.cols() != d_s * d_s {
            return Err(Error::DimensionMismatch(format!(
                "intervention {} must be {1}x{1}",
                i + 1,
                d_s * d_s
            )));
        }
        let vals = hermitian_eigenvalues(j).map_err(|_| {
            Error::InadmissibleOperator(format!("intervention {} not Hermitian", i + 1))
        })?;
        let tr = j.trace().re;
        if *vals.last().unwrap() < -tol || tr < -tol || tr > d_s as f64 + tol {
            return Err(Error::InadmissibleOperator(format!(
                "intervention {} is not a CP map Choi with 0 <= tr <= d_S (tr = {tr})",
                i + 1
            )));
        }
    }
    if final_effect.rows() != d_s || final_effect.cols() != d_s {
        return Err(Error::DimensionMismatch(format!(
            "final effect must be {d_s}x{d_s}"
        )));
    }
    let vals = hermitian_eigenvalues(final_effect)
        .map_err(|_| Error::InadmissibleOperator("final effect not Hermitian".into()))?;
    if vals[0] > 1.0 + tol || *vals.last().unwrap() < -tol {
        return Err(Error::InadmissibleOperator(
            "final effect must satisfy 0 <= F <= 1".into(),
        ));
    }

    // Λ^T = F ⊗ J'_1^T ⊗ ... with J' the Choi reordered to (in_i, out_i)
    let mut lambda_t = final_effect.clone();
    for j in intervention_chois {
        let reordered = permute_subsystems(j, &[d_s, d_s], &[1, 0])?;
        lambda_t = kron(&lambda_t, &reordered.transpose());
    }
    let raw = upsilon.matrix.trace_product(&lambda_t)?.re * (d_s as f64).powi(dims.k as i32);
    if !(-1e-9..=1.0 + 1e-9).contains(&raw) {
        return Err(Error::InadmissibleOperator(format!(
            "contraction gave {raw}, outside [0, 1]; interventions are not trace non-increasing"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Choi matrix of a single-Kraus map `rho -> K rho K^dag` (input leg first).
pub fn kraus_choi(kraus: &[ComplexMatrix]) -> ComplexMatrix {
    let d_in = kraus[0].cols();
    let d_out = kraus[0].rows();
    let mut j = ComplexMatrix::zeros(d_in * d_out, d_in * d_out);
    for a in 0..d_in {
        for b in 0..d_in {
            let mut unit = ComplexMatrix::zeros(d_in, d_in);
            unit[(a, b)] = Complex64::new(1.0, 0.0);
            let mut image = ComplexMatrix::zeros(d_out, d_out);
            for kr in kraus {
                image = &image + &(&(kr * &unit) * &kr.adjoint());
            }
            j = &j + &kron(&unit, &image);
        }
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{haar_unitary, RngStream};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_state(d: usize, rng: &mut RngStream) -> ComplexMatrix {
        let g =
            ComplexMatrix::from_fn(d, d, |_, _| c(rng.standard_normal(), rng.standard_normal()));
        let p = &g * &g.adjoint();
        let tr = p.trace().re;
        p.scale_real(1.0 / tr)
    }

    fn random_pure(d: usize, rng: &mut RngStream) -> Vec<Complex64> {
        let v: Vec<Complex64> = (0..d)
            .map(|_| c(rng.standard_normal(), rng.standard_normal()))
            .collect();
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|z| z / n).collect()
    }

    /// Dense reference: materialize the full dilation operator and state.
    fn brute_force_choi(
        rho0: &ComplexMatrix,
        unitaries: &[ComplexMatrix],
        dims: ProcessDims,
    ) -> ComplexMatrix {
        let d_anc = dims.d_s.pow(2 * dims.k as u32);
        let psi_k = kron_all(&vec![max_entangled(dims.d_s); dims.k]);
        let mut state = kron(rho0, &psi_k);
        let lift = |u: &ComplexMatrix| kron(u, &ComplexMatrix::identity(d_anc));
        let u0 = lift(&unitaries[0]);
        state = &(&u0 * &state) * &u0.adjoint();
        for i in 1..=dims.k {
            let s = swap_system_ancilla(i, dims).unwrap();
            let op = &lift(&unitaries[i]) * &s;
            state = &(&op * &state) * &op.adjoint();
        }
        let layout = dilation_dims(dims);
        let keep: Vec<usize> = (1..layout.len()).collect();
        partial_trace(&state, &layout, &keep).unwrap()
    }

    #[test]
    fn dims_arithmetic() {
        let d = ProcessDims::new(3, 2, 2).unwrap();
        assert_eq!(d.choi_dim(), 32);
        assert_eq!(d.dilation_dim(), 96);
        assert!(ProcessDims::new(2, 1, 0).is_err());
        assert!(ProcessDims::new(0, 2, 0).is_err());
    }

    #[test]
    fn bell_projector() {
        let m = max_entangled(2);
        for r in 0..4 {
            for col in 0..4 {
                let expected = if [0, 3].contains(&r) && [0, 3].contains(&col) {
                    0.5
                } else {
                    0.0
                };
                assert!((m[(r, col)] - c(expected, 0.0)).norm() < 1e-15);
            }
        }
        for d in 2..5 {
            let m = max_entangled(d);
            assert!((m.trace().re - 1.0).abs() < 1e-14);
            let half = ComplexMatrix::identity(d).scale_real(1.0 / d as f64);
            assert!(
                partial_trace(&m, &[d, d], &[0])
                    .unwrap()
                    .max_abs_diff(&half)
                    < 1e-14
            );
            assert!(
                partial_trace(&m, &[d, d], &[1])
                    .unwrap()
                    .max_abs_diff(&half)
                    < 1e-14
            );
        }
    }

    #[test]
    fn swap_is_an_involution() {
        let dims = ProcessDims::new(2, 2, 2).unwrap();
        for i in 1..=2 {
            let s = swap_system_ancilla(i, dims).unwrap();
            assert_eq!(&s * &s, ComplexMatrix::identity(dims.dilation_dim()));
        }
        assert!(matches!(
            swap_system_ancilla(0, dims),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(swap_system_ancilla(3, dims).is_err());
    }

    #[test]
    fn swap_permutes_designated_digits() {
        let dims = ProcessDims::new(2, 3, 1).unwrap();
        let s = swap_system_ancilla(1, dims).unwrap();
        // layout (E, S, in_1, out_1) with dims (2, 3, 3, 3)
        let idx = |e: usize, sys: usize, a: usize, b: usize| ((e * 3 + sys) * 3 + a) * 3 + b;
        for e in 0..2 {
            for sys in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        let from = idx(e, sys, a, b);
                        let to = idx(e, b, a, sys);
                        assert_eq!(s[(to, from)], c(1.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn swap_commutes_with_environment_operators() {
        let dims = ProcessDims::new(3, 2, 2).unwrap();
        let mut rng = RngStream::new(4, 0);
        let v = haar_unitary(3, &mut rng);
        let rest = dims.dilation_dim() / 3;
        let op = kron(&v, &ComplexMatrix::identity(rest));
        let s = swap_system_ancilla(2, dims).unwrap();
        assert!((&op * &s).max_abs_diff(&(&s * &op)) < 1e-15);
    }

    #[test]
    fn zero_steps_is_reduced_output_state() {
        let mut rng = RngStream::new(5, 0);
        let dims = ProcessDims::new(3, 2, 0).unwrap();
        let rho_e = random_state(3, &mut rng);
        let rho_s = random_state(2, &mut rng);
        let rho0 = kron(&rho_e, &rho_s);
        let u = haar_unitary(6, &mut rng);
        let choi = build_process_choi(&rho0, std::slice::from_ref(&u), dims).unwrap();
        let evolved = &(&u * &rho0) * &u.adjoint();
        let expected = partial_trace(&evolved, &[3, 2], &[1]).unwrap();
        assert!(choi.matrix().max_abs_diff(&expected) < 1e-13);
    }

    #[test]
    fn identity_dynamics_product_structure() {
        let mut rng = RngStream::new(6, 0);
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let rho_e = random_state(2, &mut rng);
        let rho_s = random_state(2, &mut rng);
        let rho0 = kron(&rho_e, &rho_s);
        let id = ComplexMatrix::identity(4);
        let choi = build_process_choi(&rho0, &[id.clone(), id], dims).unwrap();
        // S_out and in_1 are maximally entangled, out_1 carries rho_S
        let expected = kron(&max_entangled(2), &rho_s);
        assert!(choi.matrix().max_abs_diff(&expected) < 1e-14);
        let brute = brute_force_choi(
            &rho0,
            &[ComplexMatrix::identity(4), ComplexMatrix::identity(4)],
            dims,
        );
        assert!(brute.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn structured_dilation_matches_dense_oracle() {
        let mut rng = RngStream::new(7, 0);
        for (d_e, d_s, k) in [(2, 2, 1), (2, 2, 2), (3, 2, 1), (2, 3, 1)] {
            let dims = ProcessDims::new(d_e, d_s, k).unwrap();
            let rho0 = random_state(dims.d_es(), &mut rng);
            let us: Vec<_> = (0..=k)
                .map(|_| haar_unitary(dims.d_es(), &mut rng))
                .collect();
            let fast = build_process_choi(&rho0, &us, dims).unwrap();
            let slow = brute_force_choi(&rho0, &us, dims);
            assert!(fast.matrix().max_abs_diff(&slow) < 1e-12, "{dims:?}");
        }
    }

    #[test]
    fn pure_path_matches_density_path() {
        let mut rng = RngStream::new(8, 0);
        let dims = ProcessDims::new(3, 2, 2).unwrap();
        let psi = random_pure(6, &mut rng);
        let us: Vec<_> = (0..3).map(|_| haar_unitary(6, &mut rng)).collect();
        let a = build_process_choi_pure(&psi, &us, dims).unwrap();
        let b = brute_force_choi(&ComplexMatrix::outer(&psi), &us, dims);
        assert!(a.matrix().max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let rho0 = ComplexMatrix::from_real_diagonal(&[1.0, 0.0, 0.0, 0.0]);
        let id = ComplexMatrix::identity(4);
        assert!(matches!(
            build_process_choi(&rho0, std::slice::from_ref(&id), dims),
            Err(Error::DimensionMismatch(_))
        ));
        let bad_u = id.scale_real(1.1);
        assert!(matches!(
            build_process_choi(&rho0, &[id.clone(), bad_u], dims),
            Err(Error::NotUnitary { .. })
        ));
        let not_state = ComplexMatrix::from_real_diagonal(&[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            build_process_choi(&not_state, &[id.clone(), id.clone()], dims),
            Err(Error::InvalidState(_))
        ));
        let negative = ComplexMatrix::from_real_diagonal(&[1.5, -0.5, 0.0, 0.0]);
        assert!(build_process_choi(&negative, &[id.clone(), id.clone()], dims).is_err());
        assert!(build_process_choi(&ComplexMatrix::identity(2), &[id.clone(), id], dims).is_err());
    }

    #[test]
    fn environment_basis_freedom_with_mixed_environment() {
        let mut rng = RngStream::new(9, 0);
        let dims = ProcessDims::new(3, 2, 1).unwrap();
        let rho_s = random_state(2, &mut rng);
        let rho0 = kron(&ComplexMatrix::identity(3).scale_real(1.0 / 3.0), &rho_s);
        let u0 = haar_unitary(6, &mut rng);
        let u1 = haar_unitary(6, &mut rng);
        let v = kron(&haar_unitary(3, &mut rng), &ComplexMatrix::identity(2));
        let a = build_process_choi(&rho0, &[u0.clone(), u1.clone()], dims).unwrap();
        // an environment rotation ahead of U_0 is absorbed by the mixed environment
        let b = build_process_choi(&rho0, &[&u0 * &v, u1], dims).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-12);

        // with no later steps a rotation after U_0 is traced out as well
        let dims0 = ProcessDims::new(3, 2, 0).unwrap();
        let a0 = build_process_choi(&rho0, std::slice::from_ref(&u0), dims0).unwrap();
        let b0 = build_process_choi(&rho0, &[&v * &u0], dims0).unwrap();
        assert!(a0.matrix().max_abs_diff(b0.matrix()) < 1e-12);
    }

    #[test]
    fn markov_product_is_idempotent_on_products() {
        let mut rng = RngStream::new(10, 0);
        let dims = ProcessDims::new(2, 2, 2).unwrap();
        // a product across the partition {(0,3), (2,4)->(1,4)... } built from factors
        let f0 = random_state(4, &mut rng); // legs (0, 3)
        let f1 = random_state(4, &mut rng); // legs (1, 4)
        let f2 = random_state(2, &mut rng); // leg 2
        let product = kron_all([&f0, &f1, &f2]);
        // layout (0, 3, 1, 4, 2) -> standard order
        let layout = [0usize, 3, 1, 4, 2];
        let order: Vec<usize> = (0..5)
            .map(|l| layout.iter().position(|&x| x == l).unwrap())
            .collect();
        let m = permute_subsystems(&product, &dims.leg_dims(), &order).unwrap();
        let choi = ProcessChoi::new(dims, m).unwrap();
        let markov = markov_product(&choi).to_process_choi();
        assert!(markov.matrix().max_abs_diff(choi.matrix()) < 1e-12);
    }

    #[test]
    fn markov_partition_layout() {
        assert_eq!(markov_partition(0), vec![vec![0]]);
        assert_eq!(markov_partition(1), vec![vec![0, 1], vec![2]]);
        assert_eq!(markov_partition(2), vec![vec![0, 3], vec![1, 4], vec![2]]);
        assert_eq!(
            markov_partition(3),
            vec![vec![0, 5], vec![3, 6], vec![1, 4], vec![2]]
        );
    }

    #[test]
    fn markov_product_of_identity_dynamics() {
        let mut rng = RngStream::new(11, 0);
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let rho0 = kron(&random_state(2, &mut rng), &random_state(2, &mut rng));
        let id = ComplexMatrix::identity(4);
        let choi = build_process_choi(&rho0, &[id.clone(), id], dims).unwrap();
        let markov = markov_product(&choi).to_process_choi();
        assert!(markov.matrix().max_abs_diff(choi.matrix()) < 1e-12);
    }

    #[test]
    fn markov_factors_are_states_and_match_marginals() {
        let mut rng = RngStream::new(12, 0);
        let dims = ProcessDims::new(3, 2, 2).unwrap();
        let psi = random_pure(6, &mut rng);
        let us: Vec<_> = (0..3).map(|_| haar_unitary(6, &mut rng)).collect();
        let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
        let markov = markov_product(&choi);
        for (g, f) in markov.groups().iter().zip(markov.factors()) {
            ensure_state(f, 2usize.pow(g.len() as u32)).unwrap();
        }
        let rebuilt = markov.to_process_choi();
        assert!((rebuilt.matrix().trace().re - 1.0).abs() < 1e-12);
        for g in markov.groups() {
            let a = rebuilt.marginal(g).unwrap();
            let b = choi.marginal(g).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    fn identity_choi(d: usize) -> ComplexMatrix {
        kraus_choi(&[ComplexMatrix::identity(d)])
    }

    #[test]
    fn event_probability_normalization_anchor() {
        let mut rng = RngStream::new(13, 0);
        for k in 0..3 {
            let dims = ProcessDims::new(2, 2, k).unwrap();
            let psi = random_pure(4, &mut rng);
            let us: Vec<_> = (0..=k).map(|_| haar_unitary(4, &mut rng)).collect();
            let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
            let slots = vec![identity_choi(2); k];
            let p = event_probability(&choi, &slots, &ComplexMatrix::identity(2)).unwrap();
            assert!((p - 1.0).abs() < 1e-12, "k={k}: {p}");
        }
    }

    #[test]
    fn event_probability_zero_slot() {
        let mut rng = RngStream::new(14, 0);
        let dims = ProcessDims::new(2, 2, 2).unwrap();
        let psi = random_pure(4, &mut rng);
        let us: Vec<_> = (0..3).map(|_| haar_unitary(4, &mut rng)).collect();
        let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
        let slots = vec![identity_choi(2), ComplexMatrix::zeros(4, 4)];
        let p = event_probability(&choi, &slots, &ComplexMatrix::identity(2)).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn event_probability_rejects_bad_operators() {
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let choi = ProcessChoi::maximally_mixed(dims);
        let id = ComplexMatrix::identity(2);
        assert!(matches!(
            event_probability(&choi, &[], &id),
            Err(Error::DimensionMismatch(_))
        ));
        let too_big = identity_choi(2).scale_real(2.0);
        assert!(matches!(
            event_probability(&choi, &[too_big], &id),
            Err(Error::InadmissibleOperator(_))
        ));
        assert!(event_probability(&choi, &[identity_choi(2)], &id.scale_real(1.5)).is_err());
    }

    /// Direct sequential simulation of outcome probabilities.
    fn direct_probability(
        psi: &[Complex64],
        us: &[ComplexMatrix],
        kraus: &[ComplexMatrix],
        effect: &ComplexMatrix,
        d_e: usize,
        d_s: usize,
    ) -> f64 {
        let mut rho = ComplexMatrix::outer(psi);
        rho = &(&us[0] * &rho) * &us[0].adjoint();
        for (u, kr) in us[1..].iter().zip(kraus) {
            let lifted = kron(&ComplexMatrix::identity(d_e), kr);
            rho = &(&lifted * &rho) * &lifted.adjoint();
            rho = &(u * &rho) * &u.adjoint();
        }
        let rho_s = partial_trace(&rho, &[d_e, d_s], &[1]).unwrap();
        (&rho_s * effect).trace().re
    }

    #[test]
    fn event_probability_matches_direct_simulation() {
        let mut rng = RngStream::new(15, 0);
        for k in 1..=2 {
            let dims = ProcessDims::new(2, 2, k).unwrap();
            let psi = random_pure(4, &mut rng);
            let us: Vec<_> = (0..=k).map(|_| haar_unitary(4, &mut rng)).collect();
            let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
            // contraction with non-symmetric Kraus operators probes the transpose convention
            let kraus: Vec<ComplexMatrix> = (0..k)
                .map(|_| haar_unitary(2, &mut rng).scale_real(0.8))
                .collect();
            let chois: Vec<_> = kraus
                .iter()
                .map(|kr| kraus_choi(std::slice::from_ref(kr)))
                .collect();
            let w = random_pure(2, &mut rng);
            let effect = ComplexMatrix::outer(&w);
            let p = event_probability(&choi, &chois, &effect).unwrap();
            let expected = direct_probability(&psi, &us, &kraus, &effect, 2, 2);
            assert!((p - expected).abs() < 1e-12, "k={k}: {p} vs {expected}");
        }
    }

    #[test]
    fn projective_outcomes_sum_to_one() {
        let mut rng = RngStream::new(16, 0);
        let dims = ProcessDims::new(3, 2, 1).unwrap();
        let psi = random_pure(6, &mut rng);
        let us: Vec<_> = (0..2).map(|_| haar_unitary(6, &mut rng)).collect();
        let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
        let basis = haar_unitary(2, &mut rng);
        let projector = |i: usize| {
            let v: Vec<Complex64> = (0..2).map(|r| basis[(r, i)]).collect();
            ComplexMatrix::outer(&v)
        };
        let mut total = 0.0;
        for x0 in 0..2 {
            for x1 in 0..2 {
                let slot = kraus_choi(&[projector(x0)]);
                total += event_probability(&choi, &[slot], &projector(x1)).unwrap();
            }
        }
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn event_probability_is_linear_in_each_slot() {
        let mut rng = RngStream::new(17, 0);
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let psi = random_pure(4, &mut rng);
        let us: Vec<_> = (0..2).map(|_| haar_unitary(4, &mut rng)).collect();
        let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
        let a = kraus_choi(&[haar_unitary(2, &mut rng).scale_real(0.5)]);
        let b = kraus_choi(&[haar_unitary(2, &mut rng).scale_real(0.6)]);
        let f = ComplexMatrix::identity(2).scale_real(0.7);
        let mix = &a.scale_real(0.3) + &b.scale_real(0.7);
        let pa = event_probability(&choi, &[a], &f).unwrap();
        let pb = event_probability(&choi, &[b], &f).unwrap();
        let pm = event_probability(&choi, &[mix], &f).unwrap();
        assert!((pm - (0.3 * pa + 0.7 * pb)).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut rng = RngStream::new(18, 0);
        let dims = ProcessDims::new(2, 2, 1).unwrap();
        let psi = random_pure(4, &mut rng);
        let us: Vec<_> = (0..2).map(|_| haar_unitary(4, &mut rng)).collect();
        let choi = build_process_choi_pure(&psi, &us, dims).unwrap();
        let text = choi.to_text();
        assert!(text.starts_with("upsilon v1 2 2 1\n"));
        let back = ProcessChoi::from_text(&text).unwrap();
        for (x, y) in back.matrix().data().iter().zip(choi.matrix().data()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
        assert_eq!(back.dims(), dims);
    }

    #[test]
    fn text_parse_errors() {
        assert!(ProcessChoi::from_text("").is_err());
        assert!(ProcessChoi::from_text("upsilon v2 1 2 0\n").is_err());
        assert!(matches!(
            ProcessChoi::from_text("upsilon v1 1 2 0\n0 0 1 0\n"),
            Err(Error::Parse(_))
        ));
        let ok = "upsilon v1 1 2 0\n0 0 0.5 0\n0 1 0 0\n1 0 0 0\n1 1 0.5 0\n";
        assert!(ProcessChoi::from_text(ok).is_ok());
        let bad_number = "upsilon v1 1 2 0\n0 0 x 0\n0 1 0 0\n1 0 0 0\n1 1 0.5 0\n";
        assert!(ProcessChoi::from_text(bad_number).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn built_choi_is_a_state(seed in any::<u64>(), d_e in 2usize..5, d_s in 2usize..5, k in 0usize..3) {
            prop_assume!(d_s.pow(2 * k as u32 + 1) <= 256);
            let mut rng = RngStream::new(seed, 0);
            let dims = ProcessDims::new(d_e, d_s, k).unwrap();
            let rho0 = random_state(dims.d_es(), &mut rng);
            let us: Vec<_> = (0..=k).map(|_| haar_unitary(dims.d_es(), &mut rng)).collect();
            let choi = build_process_choi(&rho0, &us, dims).unwrap();
            prop_assert!(ensure_state(choi.matrix(), dims.choi_dim()).is_ok());
        }
    }

    #[test]
    fn largest_property_configuration_is_a_state() {
        let mut rng = RngStream::new(19, 0);
        let dims = ProcessDims::new(4, 4, 2).unwrap();
        let rho0 = random_state(16, &mut rng);
        let us: Vec<_> = (0..3).map(|_| haar_unitary(16, &mut rng)).collect();
        let choi = build_process_choi(&rho0, &us, dims).unwrap();
        ensure_state(choi.matrix(), 1024).unwrap();
    }
}
