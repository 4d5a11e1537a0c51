//! Distribution of `argmax_s V(s)` for the two-sided drifted Brownian motion
//! `V(s) = B₁(−s) − |s|/2` for `s ≤ 0`, `V(s) = √(ξφ₂/φ₁) B₂(s) − ξ|s|/2` for `s > 0`.
//!
//! The maximum of each side is exponential and, given its value `m`, its location is
//! inverse Gaussian (first passage of the oppositely drifted motion through `m`). The
//! tails of the argmax are one-dimensional integrals over `m`, done by adaptive Simpson.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng;

const QUAD_TOLERANCE: f64 = 1e-12;
const QUAD_DEPTH: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxLaw {
    pub xi: f64,
    pub phi1: f64,
    pub phi2: f64,
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Mills ratio `Φ(−b)/φ(b)` for `b ≥ 0`.
fn mills(b: f64) -> f64 {
    if b < 5.0 {
        return std_normal_sf(b) / std_normal_pdf(b);
    }
    // Lentz evaluation of 1/(b + 1/(b + 2/(b + 3/(b + …)))).
    let tiny = 1e-300;
    let mut f = b;
    let mut c = b;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64;
        d = b + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = b + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `P(U > x)` for `U ~ IG(mean μ, shape λ)`.
fn inverse_gaussian_sf(x: f64, mu: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if mu <= 0.0 || lambda <= 0.0 {
        return 0.0;
    }
    let r = (lambda / x).sqrt();
    let a = r * (x / mu - 1.0);
    let b = r * (x / mu + 1.0);
    (std_normal_sf(a) - std_normal_pdf(a) * mills(b)).clamp(0.0, 1.0)
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    // Split first so the recursion sees the shape of the integrand near zero.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, lo, hi, fa, fm, fb, whole, QUAD_TOLERANCE / pieces as f64, QUAD_DEPTH)
        })
        .sum()
}

impl ArgmaxLaw {
    pub fn new(xi: f64, phi1: f64, phi2: f64) -> Result<Self> {
        for (name, v) in [("xi", xi), ("phi1", phi1), ("phi2", phi2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self { xi, phi1, phi2 })
    }

    pub fn symmetric() -> Self {
        Self { xi: 1.0, phi1: 1.0, phi2: 1.0 }
    }

    /// Exponential rate of the right-hand maximum.
    fn right_rate(&self) -> f64 {
        self.phi1 / self.phi2
    }

    fn upper(&self) -> f64 {
        50.0 / self.right_rate().min(1.0)
    }

    /// `P(argmax > x)` for `x ≥ 0`.
    pub fn right_tail(&self, x: f64) -> f64 {
        let r = self.right_rate();
        let variance = self.xi * self.phi2 / self.phi1;
        let xi = self.xi;
        integrate(
            |m| {
                let s = inverse_gaussian_sf(x, 2.0 * m / xi, m * m / variance);
                r * (-r * m).exp() * (-(-m).exp_m1()) * s
            },
            0.0,
            self.upper(),
        )
        .clamp(0.0, 1.0)
    }

    /// `P(argmax < −x)` for `x ≥ 0`.
    pub fn left_tail(&self, x: f64) -> f64 {
        let r = self.right_rate();
        integrate(
            |m| (-m).exp() * (-(-r * m).exp_m1()) * inverse_gaussian_sf(x, 2.0 * m, m * m),
            0.0,
            self.upper(),
        )
        .clamp(0.0, 1.0)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0 - self.right_tail(x)
        } else {
            self.left_tail(-x)
        }
    }

    /// Smallest `x` with `P(argmax ≤ x) ≥ p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("probability must lie in (0, 1), got {p}")));
        }
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo) > p {
            lo *= 2.0;
            if lo < -1e9 {
                return Err(Error::Internal("argmax quantile search diverged".into()));
            }
        }
        while self.cdf(hi) < p {
            hi *= 2.0;
            if hi > 1e9 {
                return Err(Error::Internal("argmax quantile search diverged".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-10 * hi.abs().max(1.0) {
                break;
            }
        }
        Ok(hi)
    }
}

/// Distribution function of the argmax in the symmetric case, in closed form.
pub fn symmetric_cdf(x: f64) -> f64 {
    let g = |x: f64| {
        let r = x.sqrt();
        1.0 + (x / (2.0 * std::f64::consts::PI)).sqrt() * (-x / 8.0).exp()
            - (x + 5.0) / 2.0 * std_normal_sf(r / 2.0)
            + 1.5 * x.exp() * std_normal_sf(1.5 * r)
    };
    if x >= 0.0 {
        g(x)
    } else {
        1.0 - g(-x)
    }
}

/// Monte Carlo argmax draws from discretized paths on `[−span, span]` with step `step`.
pub fn simulate_argmax(law: &ArgmaxLaw, paths: usize, step: f64, span: f64, seed: u64) -> Vec<f64> {
    let n = (span / step).ceil() as usize;
    let sd_left = step.sqrt();
    let sd_right = (law.xi * law.phi2 / law.phi1 * step).sqrt();
    (0..paths as u64)
        .map(|rep| {
            let mut rng = rng::stream(seed, rep, rng::COMMON, rng::var::BROWNIAN);
            let (mut best, mut at) = (0.0_f64, 0.0);
            let mut v = 0.0;
            for i in 1..=n {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += sd_left * z - 0.5 * step;
                if v > best {
                    best = v;
                    at = -(i as f64) * step;
                }
            }
            v = 0.0;
            for i in 1..=n {
                let z: f64 = StandardNormal.sample(&mut rng);
                v += sd_right * z - 0.5 * law.xi * step;
                if v > best {
                    best = v;
                    at = i as f64 * step;
                }
            }
            at
        })
        .collect()
}
