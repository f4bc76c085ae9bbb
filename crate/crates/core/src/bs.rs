//! Black-Scholes reference prices and deltas for European puts and calls.
//!
//! The normal distribution function uses Hart's double-precision rational
//! approximation (Hart et al., *Computer Approximations*, 1968, algorithm
//! 5666, in the form popularised by G. West, 2005), which is accurate to
//! about 1e-14 in absolute terms.

use crate::error::{QlbsError, Result};
use crate::market::{OptionContract, OptionKind};

const P: [f64; 7] = [
    220.206867912376,
    221.213596169931,
    112.079291497871,
    33.912866078383,
    6.37396220353165,
    0.700383064443688,
    3.52624965998911e-02,
];
const Q: [f64; 8] = [
    440.413735824752,
    793.826512519948,
    637.333633378831,
    296.564248779674,
    86.7807322029461,
    16.064177579207,
    1.75566716318264,
    8.83883476483184e-02,
];
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs();
    let tail = if z > 37.0 {
        0.0
    } else {
        let e = (-0.5 * z * z).exp();
        if z < 7.07106781186547 {
            let num = P.iter().rev().fold(0.0, |acc, &c| acc * z + c);
            let den = Q.iter().rev().fold(0.0, |acc, &c| acc * z + c);
            e * num / den
        } else {
            let mut f = z + 0.65;
            f = z + 4.0 / f;
            f = z + 3.0 / f;
            f = z + 2.0 / f;
            f = z + 1.0 / f;
            e / f / SQRT_2PI
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Price and delta of a European option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsQuote {
    pub price: f64,
    pub delta: f64,
}

fn check(s: f64, strike: f64, tau: f64, r: f64, sigma: f64) -> Result<()> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(QlbsError::invalid("s", "spot must be positive"));
    }
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(QlbsError::invalid("strike", "must be positive"));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(QlbsError::invalid("tau", "time to maturity must be non-negative"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(QlbsError::invalid("sigma", "must be non-negative"));
    }
    if !r.is_finite() {
        return Err(QlbsError::invalid("r", "must be finite"));
    }
    Ok(())
}

pub fn bs_quote(s: f64, contract: &OptionContract, tau: f64, r: f64, sigma: f64) -> Result<BsQuote> {
    let k = contract.strike;
    check(s, k, tau, r, sigma)?;
    let df = (-r * tau).exp();
    let vol = sigma * tau.sqrt();
    if vol == 0.0 {
        // Deterministic forward: intrinsic value against the discounted strike.
        let kd = k * df;
        let (price, delta) = match contract.kind {
            OptionKind::Call => ((s - kd).max(0.0), if s > kd { 1.0 } else { 0.0 }),
            OptionKind::Put => ((kd - s).max(0.0), if s < kd { -1.0 } else { 0.0 }),
        };
        return Ok(BsQuote { price, delta });
    }
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    let q = match contract.kind {
        OptionKind::Call => BsQuote {
            price: s * norm_cdf(d1) - k * df * norm_cdf(d2),
            delta: norm_cdf(d1),
        },
        OptionKind::Put => BsQuote {
            price: k * df * norm_cdf(-d2) - s * norm_cdf(-d1),
            delta: norm_cdf(d1) - 1.0,
        },
    };
    Ok(q)
}

pub fn bs_price(s: f64, contract: &OptionContract, tau: f64, r: f64, sigma: f64) -> Result<f64> {
    bs_quote(s, contract, tau, r, sigma).map(|q| q.price)
}

pub fn bs_delta(s: f64, contract: &OptionContract, tau: f64, r: f64, sigma: f64) -> Result<f64> {
    bs_quote(s, contract, tau, r, sigma).map(|q| q.delta)
}

/// Small-time-step limit of the risk-adjusted optimal hedge:
/// `delta + (mu - r) / (2 lambda sigma^2 s)`.
pub fn limit_hedge_correction(s: f64, bs_delta: f64, mu: f64, r: f64, sigma: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(QlbsError::invalid("lambda", "must be positive"));
    }
    if !(sigma > 0.0) {
        return Err(QlbsError::invalid("sigma", "must be positive"));
    }
    if !(s > 0.0) {
        return Err(QlbsError::invalid("s", "must be positive"));
    }
    Ok(bs_delta + (mu - r) / (2.0 * lambda * sigma * sigma * s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn put(k: f64) -> OptionContract {
        OptionContract::put(k)
    }

    #[test]
    fn cdf_symmetry_and_tails() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_eq!(norm_cdf(-40.0), 0.0);
        assert_eq!(norm_cdf(40.0), 1.0);
    }

    #[test]
    fn expired_option_is_intrinsic() {
        let q = bs_quote(90.0, &put(100.0), 0.0, 0.03, 0.2).unwrap();
        assert_eq!(q.price, 10.0);
        assert_eq!(q.delta, -1.0);
    }

    #[test]
    fn zero_vol_atm_put_worthless() {
        assert_eq!(bs_price(100.0, &put(100.0), 1.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn limit_correction_vanishes_when_mu_equals_r() {
        assert_eq!(limit_hedge_correction(100.0, -0.4, 0.03, 0.03, 0.15, 1e-3).unwrap(), -0.4);
        assert!(limit_hedge_correction(100.0, -0.4, 0.05, 0.03, 0.15, 0.0).is_err());
    }
}
