//! Log-domain helpers shared by the transition and criterion code.

use serde::{Serialize, Serializer};

/// `log(exp(a) + exp(b))` without forming either exponential.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// `log(sum(exp(x_i)))`, shifting by the running maximum.
///
/// Returns `-inf` for an empty input or when every term is `-inf`.
pub fn logsumexp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Splits a finite nonzero `x` into `(mantissa, exp)` with
/// `x = mantissa * 2^exp` and `|mantissa|` in `[0.5, 1)`.
pub fn frexp(x: f64) -> (f64, i64) {
    debug_assert!(x.is_finite() && x != 0.0);
    let mut e = x.abs().log2().floor() as i64 + 1;
    let mut m = ldexp(x, -e);
    // log2 can be off by one near powers of two
    while m.abs() >= 1.0 {
        e += 1;
        m = ldexp(x, -e);
    }
    while m.abs() < 0.5 {
        e -= 1;
        m = ldexp(x, -e);
    }
    (m, e)
}

/// `x * 2^e`, exact whenever the result is a normal number.
pub fn ldexp(x: f64, e: i64) -> f64 {
    let mut x = x;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// Text form of an extended real with 17 significant digits; `inf`, `-inf`
/// and `nan` literals for the non-finite values.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Serializes an extended real as a JSON number, or as the strings
/// `"inf"`/`"-inf"`/`"nan"` when it is not finite.
pub fn ser_ext<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&fmt17(*x))
    }
}

pub fn ser_ext_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_ext(v, s),
        None => s.serialize_none(),
    }
}

/// Wrapper used when an extended real sits inside a collection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ext(pub f64);

impl Serialize for Ext {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ser_ext(&self.0, s)
    }
}

/// Running sum with Neumaier compensation; `-inf` terms are absorbing.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        if !x.is_finite() || !self.sum.is_finite() {
            self.sum += x;
            return;
        }
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        if self.sum.is_finite() {
            self.sum + self.comp
        } else {
            self.sum
        }
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if ys.iter().any(|y| y.is_infinite()) {
        return f64::INFINITY;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
