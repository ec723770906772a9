//! Independent high-precision evaluation of the closed-form bounds. Every
//! quantity is computed directly in binary floating point at 256 bits
//! (about 77 decimal digits), with no rational arithmetic and no log-domain
//! tricks, so it shares no code path with the library.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};

pub const PRECISION_BITS: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Oracle {
    cc: Consts,
}

impl Default for Oracle {
    fn default() -> Self {
        Self::new()
    }
}

impl Oracle {
    pub fn new() -> Self {
        Self {
            cc: Consts::new().expect("constant cache"),
        }
    }

    fn int(&self, x: u64) -> BigFloat {
        BigFloat::from_u64(x, PRECISION_BITS)
    }

    fn real(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, PRECISION_BITS)
    }

    fn add(a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, PRECISION_BITS, RM)
    }

    fn sub(a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, PRECISION_BITS, RM)
    }

    fn mul(a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, PRECISION_BITS, RM)
    }

    fn div(a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, PRECISION_BITS, RM)
    }

    fn pow(&mut self, a: &BigFloat, e: &BigFloat) -> BigFloat {
        a.pow(e, PRECISION_BITS, RM, &mut self.cc)
    }

    pub fn to_f64(&mut self, x: &BigFloat) -> f64 {
        x.format(Radix::Dec, RM, &mut self.cc)
            .expect("formats")
            .parse()
            .expect("decimal parses as f64")
    }

    pub fn log2(&mut self, x: &BigFloat) -> BigFloat {
        x.log2(PRECISION_BITS, RM, &mut self.cc)
    }

    pub fn expected_purity(&self, d_e: u64, d_s: u64, k: u32) -> BigFloat {
        let one = self.int(1);
        let de = self.int(d_e);
        let des = Self::mul(&de, &self.int(d_s));
        let de2m1 = Self::sub(&Self::mul(&de, &de), &one);
        let head = Self::div(&de2m1, &Self::mul(&de, &Self::add(&des, &one)));
        let step = Self::div(&de2m1, &Self::sub(&Self::mul(&des, &des), &one));
        Self::add(
            &Self::mul(&head, &step.powi(k as usize, PRECISION_BITS, RM)),
            &Self::div(&one, &de),
        )
    }

    pub fn b(&self, d_e: u64, d_s: u64, k: u32) -> BigFloat {
        let e = self.expected_purity(d_e, d_s, k);
        let one = self.int(1);
        let half = self.real(0.5);
        let de = self.int(d_e);
        let dim = self.int(d_s).powi(2 * k as usize + 1, PRECISION_BITS, RM);
        let sqrt = |x: BigFloat| x.sqrt(PRECISION_BITS, RM);
        if de.cmp(&dim).expect("ordered") >= 0 {
            Self::mul(&sqrt(Self::sub(&Self::mul(&dim, &e), &one)), &half)
        } else {
            let frac = Self::div(&de, &dim);
            let y = Self::sub(&one, &frac);
            let x = Self::mul(&frac, &Self::add(&one, &y));
            Self::mul(
                &Self::add(&sqrt(Self::sub(&Self::mul(&de, &e), &x)), &y),
                &half,
            )
        }
    }

    pub fn c(&self, d_e: u64, d_s: u64, k: u32) -> BigFloat {
        let ds = self.int(d_s);
        let frac = Self::div(
            &Self::sub(&ds, &self.int(1)),
            &Self::sub(&ds.powi(k as usize + 1, PRECISION_BITS, RM), &self.int(1)),
        );
        let lead = Self::div(
            &Self::mul(&Self::mul(&self.int(d_e), &ds), &self.int(k as u64 + 1)),
            &self.int(16),
        );
        Self::mul(&lead, &Self::mul(&frac, &frac))
    }

    pub fn eta(&self, d_e: u64, d_s: u64, k: u32) -> BigFloat {
        let ds = self.int(d_s);
        let main = Self::mul(
            &self.int(d_e).powi(4, PRECISION_BITS, RM),
            &ds.powi(2 * k as usize + 4, PRECISION_BITS, RM),
        );
        let tail = Self::div(
            &self.int(1),
            &ds.powi(2 * k as usize + 1, PRECISION_BITS, RM),
        );
        Self::div(&Self::add(&main, &tail), &self.int(4))
    }

    /// The design tail bound evaluated in linear space.
    #[allow(clippy::too_many_arguments)]
    pub fn design_bound(
        &mut self,
        d_e: u64,
        d_s: u64,
        k: u32,
        t: u32,
        epsilon: f64,
        delta: f64,
        m: f64,
    ) -> BigFloat {
        let mm = self.real(m);
        let two_m = self.real(2.0 * m);
        let ds = self.int(d_s);
        let de = self.int(d_e);
        let pref = Self::div(
            &self.pow(&ds, &self.real(3.0 * m * (2 * k + 1) as f64)),
            &self.pow(&self.real(delta), &two_m),
        );
        let c = self.c(d_e, d_s, k);
        let moment = self.pow(&Self::div(&mm, &c), &mm);
        let b2 = Self::mul(&self.int(2), &self.b(d_e, d_s, k));
        let bterm = self.pow(&b2, &two_m);
        let eta = self.eta(d_e, d_s, k);
        let eps_term = Self::mul(
            &Self::div(
                &self.real(epsilon),
                &Self::mul(&de, &ds).powi(t as usize, PRECISION_BITS, RM),
            ),
            &self.pow(&eta, &two_m),
        );
        Self::mul(&pref, &Self::add(&Self::add(&moment, &bterm), &eps_term))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let mut o = Oracle::new();
        let e = o.expected_purity(4, 2, 1);
        assert!((o.to_f64(&e) - 22.0 / 63.0).abs() < 1e-16);
        let c = o.c(2, 2, 1);
        assert!((o.to_f64(&c) - 1.0 / 18.0).abs() < 1e-17);
        let eta = o.eta(2, 2, 1);
        assert_eq!(o.to_f64(&eta), 256.03125);
        // d_E = 8 = d_S^3: ½√(8·E − 1)
        let b = o.b(8, 2, 1);
        let e8 = o.expected_purity(8, 2, 1);
        let e8 = o.to_f64(&e8);
        assert!((o.to_f64(&b) - 0.5 * (8.0 * e8 - 1.0).sqrt()).abs() < 1e-15);
    }
}
