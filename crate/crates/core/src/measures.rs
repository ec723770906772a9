//! Non-Markovianity functionals of a process Choi state.
//!
//! The true measures minimize a distance over all Markovian processes. Here
//! two computable reference points stand in for the minimizer: the maximally
//! mixed Choi state (for the Schatten-2 measure) and the product of the
//! process's own marginals over the Markov partition (for Schatten-1). Both
//! give upper bounds on the minimized quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{schatten_norm, Schatten};
use crate::process::{markov_product, ProcessChoi};

/// Radicands down to this value are treated as rounding noise and clamped.
pub const RADICAND_CLAMP: f64 = 1e-12;

/// `tr(Υ²)`.
pub fn purity(upsilon: &ProcessChoi) -> f64 {
    // Hermitian, so tr(Υ²) = Σ |Υ_ij|²
    upsilon.matrix().data().iter().map(|z| z.norm_sqr()).sum()
}

/// `½ sqrt(tr(Υ²) − d_S^-(2k+1))`, i.e. `½‖Υ − I/d_S^(2k+1)‖₂`.
pub fn nm_two_identity(upsilon: &ProcessChoi) -> Result<f64> {
    let floor = 1.0 / upsilon.dims().choi_dim() as f64;
    let radicand = purity(upsilon) - floor;
    if radicand < -RADICAND_CLAMP {
        return Err(Error::NegativeRadicand {
            value: radicand,
            context: "purity below the maximally mixed value",
        });
    }
    // summing |Υ − I/D|² directly avoids the cancellation in tr(Υ²) − 1/D,
    // which leaves ~1e-9 after the square root for near-mixed inputs
    let d = upsilon.dims().choi_dim();
    let m = upsilon.matrix();
    let mut sum = 0.0;
    for r in 0..d {
        for (c, z) in m.row(r).iter().enumerate() {
            sum += if r == c {
                (z - floor).norm_sqr()
            } else {
                z.norm_sqr()
            };
        }
    }
    Ok(0.5 * sum.sqrt())
}

/// `½‖Υ − Υ^M‖₁` with `Υ^M` the product of marginals.
pub fn nm_one_marginal(upsilon: &ProcessChoi) -> f64 {
    let markov = markov_product(upsilon).to_process_choi();
    let diff = upsilon.matrix() - markov.matrix();
    0.5 * schatten_norm(&diff, Schatten::One).expect("difference of Hermitian matrices")
}

/// `½‖Υ − Υ^M‖₂` with `Υ^M` the product of marginals.
pub fn nm_two_marginal(upsilon: &ProcessChoi) -> f64 {
    let markov = markov_product(upsilon).to_process_choi();
    let diff = upsilon.matrix() - markov.matrix();
    0.5 * schatten_norm(&diff, Schatten::Two).expect("two-norm is infallible")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmReport {
    pub purity: f64,
    pub n2_identity: f64,
    pub n1_marginal: f64,
    /// Lower end of the diamond-norm bracket; equals `n1_marginal`.
    pub diamond_lower: f64,
    /// `d_S^(2k+1) · n1_marginal`.
    pub diamond_upper: f64,
}

pub fn nm_report(upsilon: &ProcessChoi) -> Result<NmReport> {
    let n1 = nm_one_marginal(upsilon);
    Ok(NmReport {
        purity: purity(upsilon),
        n2_identity: nm_two_identity(upsilon)?,
        n1_marginal: n1,
        diamond_lower: n1,
        diamond_upper: upsilon.dims().choi_dim() as f64 * n1,
    })
}
