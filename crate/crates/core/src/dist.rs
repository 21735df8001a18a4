//! Random variate generators and closed-form moments used by the samplers
//! and the variational updates.
//!
//! Every stochastic routine takes an explicit `&mut R: Rng`. Reproducible
//! streams come from [`rng_stream`], which maps `(seed, stream)` onto a
//! ChaCha8 generator with a distinct stream id so parallel chains never
//! share randomness.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

/// Generator used throughout the crate.
pub type RngStream = ChaCha8Rng;

/// Independent substream `stream` of the generator seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw with shape `a` and rate `b`.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "gamma({shape}, {rate})");
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

/// Inverse-gamma draw: if `x ~ IG(a, b)` then `1/x ~ Gamma(a, rate b)`.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma(rng, shape, scale)
}

/// Draws an index with probability proportional to `exp(log_w[i])`.
pub fn categorical_log<R: Rng + ?Sized>(rng: &mut R, log_w: &[f64]) -> usize {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|l| (l - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, l) in log_w.iter().enumerate() {
        u -= (l - m).exp();
        if u <= 0.0 {
            return i;
        }
    }
    log_w.len() - 1
}

/// Standard normal cdf.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln Φ(x)`, accurate in the far left tail.
fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Mills ratio expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

const PG_TRUNC: f64 = 0.64;

/// Mean of `PG(1, z)`: `tanh(z/2) / (2z)`, with limit 1/4 at zero.
pub fn pg_mean(z: f64) -> f64 {
    let z = z.abs();
    if z < 1e-6 {
        0.25 - z * z / 48.0
    } else {
        (0.5 * z).tanh() / (2.0 * z)
    }
}

/// Exact draw from the Pólya-Gamma `PG(1, z)` law using Devroye's
/// alternating-series rejection sampler.
pub fn sample_pg1<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let z = 0.5 * z.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = mass_texpon(z, fz);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            PG_TRUNC + e / fz
        } else {
            truncated_inv_gauss(rng, z)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

fn series_coef(n: u32, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > PG_TRUNC {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    } else {
        (FRAC_2_PI / x).powf(1.5) * PI * k * (-2.0 * k * k / x).exp()
    }
}

/// Probability of proposing from the exponential tail.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = PG_TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let ratio = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + ratio)
}

/// Inverse-Gaussian(mean 1/z, shape 1) truncated to `(0, PG_TRUNC)`.
fn truncated_inv_gauss<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    let t = PG_TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        loop {
            let (mut e1, mut e2): (f64, f64);
            loop {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    break;
                }
            }
            let d = 1.0 + e1 * t;
            let x = t / (d * d);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n = std_normal(rng);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

/// First moments of the generalized inverse Gaussian with index 1/2 and
/// density proportional to `z^{-1/2} exp(-(a z + b / z) / 2)`.
///
/// Returns `(E[z], E[1/z])`, using `K_{3/2}(x)/K_{1/2}(x) = 1 + 1/x`.
pub fn gig_moments(a: f64, b: f64) -> (f64, f64) {
    let s = (a * b).sqrt();
    let ratio = 1.0 + 1.0 / s;
    let ez = (b / a).sqrt() * ratio;
    let einv = (a / b).sqrt() * ratio - 1.0 / b;
    (ez, einv)
}

/// Log normalizer of the index-1/2 GIG above: `log ∫ z^{-1/2} e^{-(az+b/z)/2} dz`.
pub fn gig_log_normalizer(a: f64, b: f64) -> f64 {
    // 2 K_{1/2}(sqrt(ab)) (b/a)^{1/4}, with K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}
    let s = (a * b).sqrt();
    (2.0f64).ln() + 0.5 * (PI / (2.0 * s)).ln() - s + 0.25 * (b / a).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cumulant generating function of PG(1, c): log cosh(c/2) - log cosh(sqrt((c^2/2 - s)/2)).
    fn pg_cgf(c: f64, s: f64) -> f64 {
        let arg = 0.5 * c * c - s;
        let inner = if arg >= 0.0 {
            (0.5 * arg).sqrt().cosh().ln()
        } else {
            (0.5 * -arg).sqrt().cos().ln()
        };
        (0.5 * c).cosh().ln() - inner
    }

    fn pg_cgf_moments(c: f64) -> (f64, f64) {
        let h = 1e-4;
        let k1 = (pg_cgf(c, h) - pg_cgf(c, -h)) / (2.0 * h);
        let k2 = (pg_cgf(c, h) - 2.0 * pg_cgf(c, 0.0) + pg_cgf(c, -h)) / (h * h);
        (k1, k2)
    }

    #[test]
    fn pg_mean_matches_cgf() {
        for &c in &[0.0, 0.3, 1.0, 2.5, 7.0] {
            let (m, _) = pg_cgf_moments(c);
            assert!((pg_mean(c) - m).abs() < 1e-7, "c={c}");
        }
        assert_eq!(pg_mean(0.0), 0.25);
    }

    #[test]
    fn pg_sampler_moments() {
        let mut rng = rng_stream(11, 0);
        for &c in &[0.0, 1.0, 4.0] {
            let n = 100_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_pg1(&mut rng, c)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let (m, v) = pg_cgf_moments(c);
            assert!((mean - m).abs() / m < 0.01, "c={c} mean {mean} vs {m}");
            assert!((var - v).abs() / v < 0.03, "c={c} var {var} vs {v}");
            assert!(draws.iter().all(|d| *d > 0.0));
        }
    }

    #[test]
    fn gig_examples() {
        let (ez, ei) = gig_moments(1.0, 1.0);
        assert!((ez - 2.0).abs() < 1e-14 && (ei - 1.0).abs() < 1e-14);
        let (ez, ei) = gig_moments(4.0, 1.0);
        assert!((ez - 0.75).abs() < 1e-14 && (ei - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gig_moments_match_quadrature() {
        for &(a, b) in &[(0.5, 2.0), (3.0, 0.2), (10.0, 10.0)] {
            // trapezoid on a log grid
            let n = 200_000;
            let (lo, hi) = (1e-8f64.ln(), 1e4f64.ln());
            let dl = (hi - lo) / n as f64;
            let (mut m0, mut m1, mut mi) = (0.0, 0.0, 0.0);
            for i in 0..=n {
                let z = (lo + i as f64 * dl).exp();
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let f = z.powf(-0.5) * (-(a * z + b / z) / 2.0).exp() * z * w * dl;
                m0 += f;
                m1 += f * z;
                mi += f / z;
            }
            let (ez, ei) = gig_moments(a, b);
            assert!((m1 / m0 - ez).abs() < 1e-6 * ez);
            assert!((mi / m0 - ei).abs() < 1e-6 * ei);
            assert!((m0.ln() - gig_log_normalizer(a, b)).abs() < 1e-6);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| rng_stream(3, 1).random()).collect();
        let mut r1 = rng_stream(3, 1);
        let mut r2 = rng_stream(3, 2);
        let x: u64 = r1.random();
        let y: u64 = r2.random();
        assert_eq!(a[0], x);
        assert_ne!(x, y);
    }

    #[test]
    fn categorical_respects_weights() {
        let mut rng = rng_stream(5, 0);
        let lw = [0.0f64.ln(), 1.0f64.ln(), 3.0f64.ln()];
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[categorical_log(&mut rng, &lw)] += 1;
        }
        assert_eq!(counts[0], 0);
        let frac = counts[2] as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.01);
    }
}
