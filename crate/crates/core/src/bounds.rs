//! Closed-form Haar averages and large-deviation bounds on non-Markovianity
//! for processes generated by Haar-random or approximate-design dynamics.
//!
//! Rational quantities (expected purity, the concentration constant `C`, the
//! radicand of `B`) are exact big rationals. Everything that can overflow a
//! double at `d_E ~ 2^60` is carried as a base-2 logarithm and terms are
//! combined with log-sum-exp.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn big(n: u64) -> BigInt {
    BigInt::from(n)
}

fn ratio(n: BigInt, d: BigInt) -> BigRational {
    BigRational::new(n, d)
}

/// Base-2 logarithm of a positive big integer, accurate to double precision.
pub fn log2_bigint(n: &BigInt) -> f64 {
    assert!(n.is_positive(), "log2 of non-positive integer");
    let bits = n.bits();
    let shift = bits.saturating_sub(64);
    let top = (n >> shift).to_u64().expect("at most 64 bits remain");
    (top as f64).log2() + shift as f64
}

/// Base-2 logarithm of a positive rational.
pub fn log2_rational(r: &BigRational) -> f64 {
    log2_bigint(r.numer()) - log2_bigint(r.denom())
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rational converts to f64")
}

/// `log2(Σ 2^xᵢ)`; `-inf` entries contribute nothing.
pub fn log2_sum_exp2(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp2()).sum::<f64>().log2()
}

fn check_dims(d_e: u64, d_s: u64) -> Result<()> {
    if d_e < 1 {
        return Err(Error::Domain("d_E must be at least 1".into()));
    }
    if d_s < 2 {
        return Err(Error::Domain("d_S must be at least 2".into()));
    }
    Ok(())
}

/// `d_S^(2k+1)`, the Choi dimension.
fn choi_dim(d_s: u64, k: u32) -> BigInt {
    num_traits::pow(big(d_s), 2 * k as usize + 1)
}

/// Haar average of `tr(Υ²)`:
/// `(d_E²−1)/(d_E(d_E d_S+1)) · ((d_E²−1)/((d_E d_S)²−1))^k + 1/d_E`.
///
/// Holds for a pure initial state of `E⊗S`.
pub fn expected_purity_haar(d_e: u64, d_s: u64, k: u32) -> Result<BigRational> {
    check_dims(d_e, d_s)?;
    let de = big(d_e);
    let des = &de * big(d_s);
    let de2m1: BigInt = &de * &de - 1;
    let head = ratio(de2m1.clone(), &de * (&des + 1));
    let step = ratio(de2m1, &des * &des - 1);
    Ok(head * num_traits::pow(step, k as usize) + ratio(BigInt::one(), de))
}

/// Which side of `d_E = d_S^(2k+1)` the bound `B` is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BBranch {
    /// `d_E < d_S^(2k+1)`: `B = (√(d_E E − x) + y)/2`.
    SmallEnvironment,
    /// `d_E ≥ d_S^(2k+1)`: `B = ½√(d_S^(2k+1) E − 1)`.
    LargeEnvironment,
}

/// Exact pieces of `B`: branch, radicand, and the additive `y` (zero on the
/// large-environment branch).
pub fn haar_b_parts(d_e: u64, d_s: u64, k: u32) -> Result<(BBranch, BigRational, BigRational)> {
    let e = expected_purity_haar(d_e, d_s, k)?;
    let dim = choi_dim(d_s, k);
    let de = big(d_e);
    if de >= dim {
        let rad = BigRational::from_integer(dim) * e - BigRational::one();
        Ok((BBranch::LargeEnvironment, rad, BigRational::zero()))
    } else {
        let frac = ratio(de.clone(), dim);
        let y = BigRational::one() - &frac;
        let x = &frac * (BigRational::one() + &y);
        let rad = BigRational::from_integer(de) * e - x;
        Ok((BBranch::SmallEnvironment, rad, y))
    }
}

fn b_from_parts(rad: &BigRational, y: &BigRational) -> Result<(f64, f64)> {
    if rad.is_negative() {
        return Err(Error::NegativeRadicand {
            value: to_f64(rad),
            context: "Haar bound B",
        });
    }
    if y.is_zero() {
        if rad.is_zero() {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        // ½√rad, logged from the exact rational so tiny radicands keep precision
        let log2_b = 0.5 * log2_rational(rad) - 1.0;
        Ok((log2_b.exp2(), log2_b))
    } else {
        let b = 0.5 * (to_f64(rad).sqrt() + to_f64(y));
        Ok((b, b.log2()))
    }
}

/// Upper bound `B` on the Haar-average non-Markovianity.
pub fn haar_b(d_e: u64, d_s: u64, k: u32) -> Result<f64> {
    let (_, rad, y) = haar_b_parts(d_e, d_s, k)?;
    Ok(b_from_parts(&rad, &y)?.0)
}

/// `log2 B`.
pub fn log2_haar_b(d_e: u64, d_s: u64, k: u32) -> Result<f64> {
    let (_, rad, y) = haar_b_parts(d_e, d_s, k)?;
    Ok(b_from_parts(&rad, &y)?.1)
}

/// Concentration constant `C = d_E d_S (k+1)/16 · ((d_S−1)/(d_S^(k+1)−1))²`.
pub fn haar_c(d_e: u64, d_s: u64, k: u32) -> Result<BigRational> {
    check_dims(d_e, d_s)?;
    let ds = big(d_s);
    let frac = ratio(&ds - 1, num_traits::pow(ds.clone(), k as usize + 1) - 1);
    Ok(ratio(big(d_e) * ds * big(k as u64 + 1), big(16)) * &frac * frac)
}

/// The same constant in the normalization used by the exponential Haar
/// bounds, `4C`.
pub fn haar_c_exponential(d_e: u64, d_s: u64, k: u32) -> Result<BigRational> {
    Ok(haar_c(d_e, d_s, k)? * big(4))
}

/// `log2 η` with `η = (d_E⁴ d_S^(2(k+2)) + d_S^(−(2k+1)))/4`, the bound on the
/// coefficient sum of the design error term.
pub fn log2_eta(d_e: u64, d_s: u64, k: u32) -> Result<f64> {
    check_dims(d_e, d_s)?;
    let lde = (d_e as f64).log2();
    let lds = (d_s as f64).log2();
    let k = k as f64;
    Ok(log2_sum_exp2(&[4.0 * lde + 2.0 * (k + 2.0) * lds, -(2.0 * k + 1.0) * lds]) - 2.0)
}

/// `η` as an exact rational.
pub fn eta_exact(d_e: u64, d_s: u64, k: u32) -> Result<BigRational> {
    check_dims(d_e, d_s)?;
    let ds = big(d_s);
    let main = num_traits::pow(big(d_e), 4) * num_traits::pow(ds.clone(), 2 * k as usize + 4);
    let tail = ratio(BigInt::one(), num_traits::pow(ds, 2 * k as usize + 1));
    Ok((BigRational::from_integer(main) + tail) / big(4))
}

/// `log2` of `(m/C)^m + (2B)^(2m)`, the bound on `E_H[N₂^(2m)]`.
pub fn log2_haar_moment_bound(m: f64, d_e: u64, d_s: u64, k: u32) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Domain(format!(
            "moment order m = {m} must be positive"
        )));
    }
    let lc = log2_rational(&haar_c(d_e, d_s, k)?);
    let lb = log2_haar_b(d_e, d_s, k)?;
    Ok(log2_sum_exp2(&[m * (m.log2() - lc), 2.0 * m * (1.0 + lb)]))
}

pub fn haar_moment_bound(m: f64, d_e: u64, d_s: u64, k: u32) -> Result<f64> {
    Ok(log2_haar_moment_bound(m, d_e, d_s, k)?.exp2())
}

/// Moment order: fixed, or chosen to minimize the bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MChoice {
    Explicit(f64),
    Optimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub d_s: u64,
    /// `d_E = 2^log2_de`.
    pub log2_de: u32,
    pub k: u32,
    /// Design order.
    pub t: u32,
    pub epsilon: f64,
    pub delta: f64,
    pub m: MChoice,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.d_s < 2 {
            return Err(Error::Domain("d_S must be at least 2".into()));
        }
        if self.log2_de > 63 {
            return Err(Error::Domain(format!(
                "log2 d_E = {} exceeds 63",
                self.log2_de
            )));
        }
        if self.t < 1 {
            return Err(Error::Domain("design order t must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Domain(format!(
                "epsilon {} not in [0, 1]",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::Domain(format!(
                "delta {} must be positive",
                self.delta
            )));
        }
        if let MChoice::Explicit(m) = self.m {
            self.check_m(m)?;
        }
        Ok(())
    }

    pub fn d_e(&self) -> u64 {
        1u64 << self.log2_de
    }

    /// Upper end of the admissible moment range, `t/4`.
    pub fn m_max(&self) -> f64 {
        self.t as f64 / 4.0
    }

    fn check_m(&self, m: f64) -> Result<()> {
        if !(m > 0.0 && m <= self.m_max()) {
            return Err(Error::Domain(format!(
                "m = {m} outside (0, {}]",
                self.m_max()
            )));
        }
        Ok(())
    }
}

/// Term-by-term `log2` breakdown of the design tail bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub m_used: f64,
    /// `log2[(d_S^(3m(2k+1))/δ^(2m)) (m/C)^m]`.
    pub log2_term_moment: f64,
    /// `log2[(d_S^(3m(2k+1))/δ^(2m)) (2B)^(2m)]`.
    pub log2_term_b: f64,
    /// `log2[(d_S^(3m(2k+1))/δ^(2m)) (ε/(d_E d_S)^t) η^(2m)]`.
    pub log2_term_eps: f64,
    pub log2_total: f64,
    /// `min(1, 2^log2_total)`.
    pub total_clamped: f64,
}

/// Parameter-dependent logs shared by every `m`.
#[derive(Clone, Copy, Debug)]
struct TailLogs {
    k: f64,
    t: f64,
    log2_ds: f64,
    log2_de: f64,
    log2_delta: f64,
    log2_eps: f64,
    log2_c: f64,
    log2_b: f64,
    log2_eta: f64,
}

impl TailLogs {
    fn new(p: &BoundParams) -> Result<Self> {
        let d_e = p.d_e();
        Ok(Self {
            k: p.k as f64,
            t: p.t as f64,
            log2_ds: (p.d_s as f64).log2(),
            log2_de: p.log2_de as f64,
            log2_delta: p.delta.log2(),
            log2_eps: p.epsilon.log2(),
            log2_c: log2_rational(&haar_c(d_e, p.d_s, p.k)?),
            log2_b: log2_haar_b(d_e, p.d_s, p.k)?,
            log2_eta: log2_eta(d_e, p.d_s, p.k)?,
        })
    }

    fn breakdown(&self, m: f64) -> BoundBreakdown {
        let prefactor = 3.0 * m * (2.0 * self.k + 1.0) * self.log2_ds - 2.0 * m * self.log2_delta;
        let moment = prefactor + m * (m.log2() - self.log2_c);
        let b = prefactor + 2.0 * m * (1.0 + self.log2_b);
        let eps = prefactor + self.log2_eps - self.t * (self.log2_de + self.log2_ds)
            + 2.0 * m * self.log2_eta;
        let total = log2_sum_exp2(&[moment, b, eps]);
        BoundBreakdown {
            m_used: m,
            log2_term_moment: moment,
            log2_term_b: b,
            log2_term_eps: eps,
            log2_total: total,
            total_clamped: total.exp2().min(1.0),
        }
    }
}

/// Bound on the probability that a process drawn from an ε-approximate
/// t-design has non-Markovianity at least δ, at moment order `m`.
pub fn design_tail_bound(params: &BoundParams, m: f64) -> Result<BoundBreakdown> {
    params.validate()?;
    params.check_m(m)?;
    Ok(TailLogs::new(params)?.breakdown(m))
}

pub const M_GRID_POINTS: usize = 512;
/// Lower end of the search range as a fraction of `t/4`.
pub const M_GRID_FLOOR: f64 = 1e-6;
pub const M_REL_TOL: f64 = 1e-6;

/// Minimizes `log2_total` over `m ∈ (0, t/4]`: geometric grid, then
/// golden-section refinement around the best grid point. Ties go to the
/// smaller `m`.
pub fn optimize_m(params: &BoundParams) -> Result<(f64, BoundBreakdown)> {
    params.validate()?;
    let logs = TailLogs::new(params)?;
    let hi = params.m_max();
    let lo = hi * M_GRID_FLOOR;
    let ratio = (hi / lo).powf(1.0 / (M_GRID_POINTS - 1) as f64);
    let grid: Vec<f64> = (0..M_GRID_POINTS)
        .map(|i| {
            if i + 1 == M_GRID_POINTS {
                hi
            } else {
                lo * ratio.powi(i as i32)
            }
        })
        .collect();

    let mut best_i = 0;
    let mut best = logs.breakdown(grid[0]);
    for (i, &m) in grid.iter().enumerate().skip(1) {
        let b = logs.breakdown(m);
        if b.log2_total < best.log2_total {
            best_i = i;
            best = b;
        }
    }

    let a = grid[best_i.saturating_sub(1)];
    let c = grid[(best_i + 1).min(M_GRID_POINTS - 1)];
    let refined = golden_section(|m| logs.breakdown(m).log2_total, a, c);
    let candidate = logs.breakdown(refined);
    if candidate.log2_total < best.log2_total
        || (candidate.log2_total == best.log2_total && refined < best.m_used)
    {
        best = candidate;
    }
    Ok((best.m_used, best))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > M_REL_TOL * a.abs().max(f64::MIN_POSITIVE) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Exponent form of the Haar tail bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HaarTailForm {
    /// `exp(−4C δ² d_S^(−2(2k+1)))`.
    #[default]
    Quadratic,
    /// `exp(−η' δ)` with `η' = 4C d_S^(−2(2k+1))`.
    Linear,
}

/// Threshold `d_S^(2k+1) B + δ` and the bound on the probability that a
/// Haar-sampled process exceeds it.
pub fn haar_tail_bound(
    delta: f64,
    d_e: u64,
    d_s: u64,
    k: u32,
    form: HaarTailForm,
) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta {delta} must be positive")));
    }
    let dim = choi_dim(d_s, k);
    let threshold = to_f64(&BigRational::from_integer(dim.clone())) * haar_b(d_e, d_s, k)? + delta;
    let rate = to_f64(&(haar_c_exponential(d_e, d_s, k)? / (&dim * &dim)));
    let exponent = match form {
        HaarTailForm::Quadratic => rate * delta * delta,
        HaarTailForm::Linear => rate * delta,
    };
    Ok((threshold, (-exponent).exp().clamp(0.0, 1.0)))
}

pub const DEFAULT_EPSILON_MARGIN_BITS: f64 = 10.0;

/// `log2` of the largest design error for which the error term stays
/// negligible at moment order `m`, and whether `log2 ε` sits below it by at
/// least `margin_bits`.
pub fn epsilon_condition(params: &BoundParams, m: f64, margin_bits: f64) -> Result<(f64, bool)> {
    params.validate()?;
    params.check_m(m)?;
    let lds = (params.d_s as f64).log2();
    let lde = params.log2_de as f64;
    let k = params.k as f64;
    let inner = 2.0 * params.delta.log2() + 4.0 * (1.0 - 2.0 * lde - (10.0 * k + 11.0) / 4.0 * lds);
    let required = m * inner + params.t as f64 * (lde + lds);
    Ok((required, params.epsilon.log2() <= required - margin_bits))
}
