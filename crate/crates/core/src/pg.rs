//! Pólya-Gamma sampling by Devroye's alternating-series method.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::dist::ln_norm_cdf;

const TRUNC: f64 = 0.64;

/// One draw from `PG(b, c)` for integer `b ≥ 1`, as a sum of `b` unit-shape draws.
pub fn pg_sample<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> f64 {
    assert!(b >= 1, "PG shape must be at least one");
    (0..b).map(|_| pg1(c, rng)).sum()
}

/// Exact `PG(1, c)` draw.
pub fn pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let fz = PI * PI / 8.0 + 0.5 * z * z;
    let p_exp = mass_texpon(z, fz);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + rng.sample::<f64, _>(Exp1) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// n-th term of the alternating series for the Jacobi density.
fn coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let e = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * (n as f64 + 0.5).powi(2) / x;
        e.exp()
    } else {
        0.0
    }
}

/// Probability of proposing from the exponential tail piece.
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let qdivp = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse-Gaussian with mean `1/z`, shape 1, truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if 1.0 / t > z {
        loop {
            let (mut e1, mut e2): (f64, f64);
            loop {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
                if e1 * e1 <= 2.0 * e2 / t {
                    break;
                }
            }
            let x = t / (1.0 + e1 * t).powi(2);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        let n: f64 = rng.sample(StandardNormal);
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

/// `E[PG(b, c)] = b/(2c)·tanh(c/2)`, `b/4` at zero.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(1, c)] = (sinh c − c)/(4c³ cosh²(c/2))`, `1/24` at zero.
pub fn pg1_variance(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        1.0 / 24.0 - c * c / 240.0
    } else {
        (c.sinh() - c) / (4.0 * c.powi(3) * (0.5 * c).cosh().powi(2))
    }
}
