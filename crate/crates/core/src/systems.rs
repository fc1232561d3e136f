//! Coefficient sequences `A(n)`, `n = 0, 1, 2, ...`.
//!
//! Scalar and diagonal operators are stored as log-magnitudes so that the
//! built-in fixtures (whose coefficients reach `2^(n+1)`) never overflow.
//! Dense operators are stored as a matrix with unit-order entries together
//! with an exact power-of-two scale.

use std::f64::consts::LN_2;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{frexp, ldexp};

/// Magnitude of a real number held as its logarithm.
///
/// The zero flag marks an exact zero; the stored logarithm is then ignored
/// and [`LogMag::log`] reports `-inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMag {
    log: f64,
    zero: bool,
}

impl LogMag {
    pub const ZERO: LogMag = LogMag {
        log: f64::NEG_INFINITY,
        zero: true,
    };
    pub const ONE: LogMag = LogMag {
        log: 0.0,
        zero: false,
    };

    pub fn from_log(log: f64) -> Self {
        if log == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogMag { log, zero: false }
        }
    }

    /// Magnitude of `v`; the sign is discarded.
    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            LogMag {
                log: v.abs().ln(),
                zero: false,
            }
        }
    }

    pub fn log(self) -> f64 {
        if self.zero {
            f64::NEG_INFINITY
        } else {
            self.log
        }
    }

    pub fn is_zero(self) -> bool {
        self.zero
    }

    /// Real value; overflows to `inf` for large logarithms.
    pub fn value(self) -> f64 {
        if self.zero {
            0.0
        } else {
            self.log.exp()
        }
    }

    pub fn mul(self, other: LogMag) -> LogMag {
        if self.zero || other.zero {
            Self::ZERO
        } else {
            LogMag {
                log: self.log + other.log,
                zero: false,
            }
        }
    }
}

/// A dense matrix stored as `2^exp2 * mat` with `max |mat_ij|` in `[0.5, 1)`.
///
/// The exactly-zero matrix is stored with `exp2 = 0` and an all-zero `mat`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMatrix {
    mat: DMatrix<f64>,
    exp2: i64,
}

impl ScaledMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("dense operator must be square"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dense operator has non-finite entries"));
        }
        Ok(Self::normalized(m, 0))
    }

    pub fn identity(dim: usize) -> Self {
        ScaledMatrix {
            mat: DMatrix::identity(dim, dim) * 0.5,
            exp2: 1,
        }
    }

    fn normalized(mut mat: DMatrix<f64>, exp2: i64) -> Self {
        let max = mat.amax();
        if max == 0.0 {
            return ScaledMatrix { mat, exp2: 0 };
        }
        let (_, e) = frexp(max);
        if e != 0 {
            mat.apply(|v| *v = ldexp(*v, -e));
        }
        ScaledMatrix { mat, exp2: exp2 + e }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// The unit-order factor.
    pub fn normalized_part(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn exp2(&self) -> i64 {
        self.exp2
    }

    /// Natural logarithm of the scale factor.
    pub fn log_scale(&self) -> f64 {
        self.exp2 as f64 * LN_2
    }

    pub fn is_zero(&self) -> bool {
        self.mat.amax() == 0.0
    }

    /// `2^exp2 * mat` as a plain matrix; entries may overflow.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.mat.map(|v| ldexp(v, self.exp2))
    }

    /// `self * rhs`, renormalized.
    pub fn mul(&self, rhs: &ScaledMatrix) -> ScaledMatrix {
        Self::normalized(&self.mat * &rhs.mat, self.exp2 + rhs.exp2)
    }

    /// Inverse, or `None` when the matrix is exactly singular.
    pub fn try_inverse(&self) -> Option<ScaledMatrix> {
        let inv = self.mat.clone().try_inverse()?;
        if inv.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self::normalized(inv, -self.exp2))
    }

    /// Largest absolute entry difference after aligning scales, relative to
    /// the largest entry of `other`.
    pub fn rel_distance(&self, other: &ScaledMatrix) -> f64 {
        if self.is_zero() || other.is_zero() {
            return if self.is_zero() && other.is_zero() {
                0.0
            } else {
                f64::INFINITY
            };
        }
        let shift = self.exp2 - other.exp2;
        let aligned = self.mat.map(|v| ldexp(v, shift));
        (aligned - &other.mat).amax() / other.mat.amax()
    }
}

/// One coefficient `A(n)`.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOperator {
    Scalar(LogMag),
    Diagonal(Vec<LogMag>),
    Dense(ScaledMatrix),
}

impl StepOperator {
    pub fn scalar(v: f64) -> Self {
        StepOperator::Scalar(LogMag::from_value(v))
    }

    pub fn diagonal(vs: &[f64]) -> Self {
        StepOperator::Diagonal(vs.iter().map(|&v| LogMag::from_value(v)).collect())
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        Ok(StepOperator::Dense(ScaledMatrix::from_matrix(m)?))
    }

    pub fn identity(kind: Kind, dim: usize) -> Self {
        match kind {
            Kind::Scalar => StepOperator::Scalar(LogMag::ONE),
            Kind::Diagonal => StepOperator::Diagonal(vec![LogMag::ONE; dim]),
            Kind::Dense => StepOperator::Dense(ScaledMatrix::identity(dim)),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            StepOperator::Scalar(_) => Kind::Scalar,
            StepOperator::Diagonal(_) => Kind::Diagonal,
            StepOperator::Dense(_) => Kind::Dense,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StepOperator::Scalar(_) => 1,
            StepOperator::Diagonal(d) => d.len(),
            StepOperator::Dense(m) => m.dim(),
        }
    }

    /// `self * rhs` (apply `rhs` first). Both operands must share kind and dim.
    pub fn compose(&self, rhs: &StepOperator) -> StepOperator {
        match (self, rhs) {
            (StepOperator::Scalar(a), StepOperator::Scalar(b)) => StepOperator::Scalar(a.mul(*b)),
            (StepOperator::Diagonal(a), StepOperator::Diagonal(b)) => {
                StepOperator::Diagonal(a.iter().zip(b).map(|(x, y)| x.mul(*y)).collect())
            }
            (StepOperator::Dense(a), StepOperator::Dense(b)) => StepOperator::Dense(a.mul(b)),
            _ => panic!("compose: mismatched operator kinds"),
        }
    }

    /// Largest entry log-magnitude; an upper bound proxy for the step gain.
    pub fn log_max_gain(&self) -> f64 {
        match self {
            StepOperator::Scalar(a) => a.log(),
            StepOperator::Diagonal(d) => d.iter().map(|x| x.log()).fold(f64::NEG_INFINITY, f64::max),
            StepOperator::Dense(m) => {
                if m.is_zero() {
                    f64::NEG_INFINITY
                } else {
                    m.log_scale() + m.normalized_part().amax().ln()
                }
            }
        }
    }

    /// Closeness in the sense used by the cocycle checks: log-magnitudes
    /// within `tol` absolute (exact zeros must match), dense matrices within
    /// `tol` relative to their largest entry.
    pub fn approx_eq(&self, other: &StepOperator, tol: f64) -> bool {
        let close = |a: &LogMag, b: &LogMag| {
            a.is_zero() == b.is_zero() && (a.is_zero() || (a.log() - b.log()).abs() <= tol)
        };
        match (self, other) {
            (StepOperator::Scalar(a), StepOperator::Scalar(b)) => close(a, b),
            (StepOperator::Diagonal(a), StepOperator::Diagonal(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(x, y))
            }
            (StepOperator::Dense(a), StepOperator::Dense(b)) => {
                a.dim() == b.dim() && a.rel_distance(b) <= tol
            }
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Scalar,
    Diagonal,
    Dense,
}

/// How an explicit coefficient list continues past its last entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extension {
    Periodic,
    ConstantTail,
}

#[derive(Clone, Debug, PartialEq)]
enum Rule {
    PaperExample { log_c: f64 },
    Constant(StepOperator),
    RandomDiagonal { seed: u64, lo: f64, hi: f64 },
    RandomDense { seed: u64, log_scale: f64 },
    Explicit {
        coeffs: Vec<StepOperator>,
        extension: Option<Extension>,
    },
}

/// An immutable coefficient sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSeq {
    kind: Kind,
    dim: usize,
    label: String,
    rule: Rule,
}

fn check_positive_finite(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

/// Log-magnitude of the built-in example coefficient: `c 2^-n` for even `n`,
/// `c 2^(n+1)` for odd `n`.
pub fn paper_example_log_coeff(log_c: f64, n: usize) -> f64 {
    if n % 2 == 0 {
        log_c + (-(n as f64)) * LN_2
    } else {
        log_c + ((n + 1) as f64) * LN_2
    }
}

/// The example system `A(n) = c a_n` with `a_n = 2^-n` (n even) and
/// `a_n = 2^(n+1)` (n odd).
pub fn make_paper_example(c: f64) -> Result<OperatorSeq> {
    check_positive_finite("c", c)?;
    Ok(OperatorSeq {
        kind: Kind::Scalar,
        dim: 1,
        label: format!("paper-example(c={c})"),
        rule: Rule::PaperExample { log_c: c.ln() },
    })
}

pub fn make_constant(op: StepOperator, dim: usize) -> Result<OperatorSeq> {
    if dim == 0 || op.dim() != dim {
        return Err(Error::invalid(format!(
            "operator has dimension {}, requested {dim}",
            op.dim()
        )));
    }
    Ok(OperatorSeq {
        kind: op.kind(),
        dim,
        label: format!("constant({:?}, dim={dim})", op.kind()).to_lowercase(),
        rule: Rule::Constant(op),
    })
}

/// Diagonal system whose entry log-magnitudes are uniform on
/// `[lo, hi]`, drawn independently per step from a generator keyed by
/// `(seed, n)`.
pub fn make_random_diagonal(dim: usize, seed: u64, log_gain_range: (f64, f64)) -> Result<OperatorSeq> {
    let (lo, hi) = log_gain_range;
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::invalid(format!("empty or unbounded log-gain range [{lo}, {hi}]")));
    }
    Ok(OperatorSeq {
        kind: Kind::Diagonal,
        dim,
        label: format!("random-diagonal(dim={dim}, seed={seed}, range=[{lo}, {hi}])"),
        rule: Rule::RandomDiagonal { seed, lo, hi },
    })
}

/// Dense system with entries uniform on `[-1, 1]` times `exp(log_scale)`,
/// keyed by `(seed, n)`.
pub fn make_random_dense(dim: usize, seed: u64, log_scale: f64) -> Result<OperatorSeq> {
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if !log_scale.is_finite() {
        return Err(Error::invalid("log_scale must be finite"));
    }
    Ok(OperatorSeq {
        kind: Kind::Dense,
        dim,
        label: format!("random-dense(dim={dim}, seed={seed})"),
        rule: Rule::RandomDense { seed, log_scale },
    })
}

pub fn make_explicit(coeffs: Vec<StepOperator>, extension: Option<Extension>) -> Result<OperatorSeq> {
    let first = coeffs
        .first()
        .ok_or_else(|| Error::invalid("explicit coefficient list is empty"))?;
    let (kind, dim) = (first.kind(), first.dim());
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if let Some(i) = coeffs.iter().position(|c| c.kind() != kind || c.dim() != dim) {
        return Err(Error::invalid(format!(
            "coefficient {i} does not match the kind/dimension of coefficient 0"
        )));
    }
    Ok(OperatorSeq {
        kind,
        dim,
        label: format!("explicit(len={}, dim={dim})", coeffs.len()),
        rule: Rule::Explicit { coeffs, extension },
    })
}

fn step_rng(seed: u64, n: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(n as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

impl OperatorSeq {
    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `A(n)`.
    pub fn coeff_at(&self, n: usize) -> Result<StepOperator> {
        Ok(match &self.rule {
            Rule::PaperExample { log_c } => {
                StepOperator::Scalar(LogMag::from_log(paper_example_log_coeff(*log_c, n)))
            }
            Rule::Constant(op) => op.clone(),
            Rule::RandomDiagonal { seed, lo, hi } => {
                let mut rng = step_rng(*seed, n);
                let logs = (0..self.dim)
                    .map(|_| {
                        let l = if lo == hi { *lo } else { rng.gen_range(*lo..=*hi) };
                        LogMag::from_log(l)
                    })
                    .collect();
                StepOperator::Diagonal(logs)
            }
            Rule::RandomDense { seed, log_scale } => {
                let mut rng = step_rng(*seed, n);
                let scale = log_scale.exp();
                let m = DMatrix::from_fn(self.dim, self.dim, |_, _| rng.gen_range(-1.0..=1.0) * scale);
                StepOperator::dense(m)?
            }
            Rule::Explicit { coeffs, extension } => {
                let len = coeffs.len();
                let idx = match extension {
                    _ if n < len => n,
                    Some(Extension::Periodic) => n % len,
                    Some(Extension::ConstantTail) => len - 1,
                    None => return Err(Error::OutOfRange { index: n, len }),
                };
                coeffs[idx].clone()
            }
        })
    }
}

/// A coefficient in the system-description document: a number (scalar),
/// a list of numbers (diagonal) or a list of rows (dense).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoeffSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

impl CoeffSpec {
    pub fn to_operator(&self) -> Result<StepOperator> {
        match self {
            CoeffSpec::Scalar(v) => {
                if !v.is_finite() {
                    return Err(Error::invalid("non-finite coefficient"));
                }
                Ok(StepOperator::scalar(*v))
            }
            CoeffSpec::Diagonal(vs) => {
                if vs.is_empty() || vs.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("diagonal coefficient must be a nonempty finite list"));
                }
                Ok(StepOperator::diagonal(vs))
            }
            CoeffSpec::Dense(rows) => {
                let d = rows.len();
                if d == 0 || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("dense coefficient must be a square list of rows"));
                }
                StepOperator::dense(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }
}

/// The system-description document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    PaperExample {
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Constant {
        value: CoeffSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    RandomDiagonal {
        dim: usize,
        seed: u64,
        log_gain_range: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Explicit {
        coeffs: Vec<CoeffSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extension: Option<Extension>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

const KNOWN_KINDS: [&str; 4] = ["paper-example", "constant", "random-diagonal", "explicit"];

impl SystemSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse(&e))?;
        match value.get("kind").and_then(|k| k.as_str()) {
            Some(k) if !KNOWN_KINDS.contains(&k) => return Err(Error::UnsupportedKind(k.to_string())),
            _ => {}
        }
        // re-parse from text so schema errors keep their position
        serde_json::from_str(text).map_err(|e| Error::parse(&e))
    }

    pub fn build(&self) -> Result<OperatorSeq> {
        let (seq, label) = match self {
            SystemSpec::PaperExample { c, label } => (make_paper_example(*c)?, label),
            SystemSpec::Constant { value, label } => {
                let op = value.to_operator()?;
                let dim = op.dim();
                (make_constant(op, dim)?, label)
            }
            SystemSpec::RandomDiagonal {
                dim,
                seed,
                log_gain_range,
                label,
            } => (
                make_random_diagonal(*dim, *seed, (log_gain_range[0], log_gain_range[1]))?,
                label,
            ),
            SystemSpec::Explicit {
                coeffs,
                extension,
                label,
            } => {
                let ops = coeffs.iter().map(CoeffSpec::to_operator).collect::<Result<Vec<_>>>()?;
                (make_explicit(ops, *extension)?, label)
            }
        };
        Ok(match label {
            Some(l) => seq.with_label(l.clone()),
            None => seq,
        })
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            SystemSpec::PaperExample { label, .. }
            | SystemSpec::Constant { label, .. }
            | SystemSpec::RandomDiagonal { label, .. }
            | SystemSpec::Explicit { label, .. } => label.as_deref(),
        }
    }
}

/// Parses a system-description document and builds its sequence.
pub fn load_system(source: &str) -> Result<OperatorSeq> {
    SystemSpec::parse(source)?.build()
}

pub fn load_system_file(path: &Path) -> Result<OperatorSeq> {
    load_system(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_example_values() {
        let s = make_paper_example(1.0).unwrap();
        assert_eq!(s.coeff_at(0).unwrap(), StepOperator::Scalar(LogMag::ONE));
        let s2 = make_paper_example(2.0).unwrap();
        let StepOperator::Scalar(a1) = s2.coeff_at(1).unwrap() else { panic!() };
        assert!((a1.value() - 8.0).abs() < 1e-12);
        // n = 1000 is even: 2^-1000, below the smallest normal double
        let StepOperator::Scalar(big) = s.coeff_at(1000).unwrap() else { panic!() };
        assert_eq!(big.log(), -1000.0 * LN_2);
        let StepOperator::Scalar(big) = s.coeff_at(1001).unwrap() else { panic!() };
        assert_eq!(big.log(), 1002.0 * LN_2);
        let StepOperator::Scalar(huge) = s.coeff_at(1101).unwrap() else { panic!() };
        assert!(huge.log().is_finite() && huge.value().is_infinite());
        let StepOperator::Scalar(odd) = s.coeff_at(999).unwrap() else { panic!() };
        assert_eq!(odd.log(), 1000.0 * LN_2);
    }

    #[test]
    fn paper_example_parity_structure() {
        let c = 3.0f64;
        let s = make_paper_example(c).unwrap();
        for n in 0..=10_000usize {
            let StepOperator::Scalar(a) = s.coeff_at(n).unwrap() else { panic!() };
            // exponent is an exact integer, so the sum is reproduced bit-for-bit
            let k: i64 = if n % 2 == 0 { -(n as i64) } else { n as i64 + 1 };
            assert_eq!(a.log(), c.ln() + (k as f64) * LN_2, "n={n}");
        }
    }

    #[test]
    fn paper_example_rejects_bad_c() {
        for c in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(make_paper_example(c), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn constant_and_dimension_mismatch() {
        let s = make_constant(StepOperator::scalar(2.0), 1).unwrap();
        assert_eq!(s.coeff_at(17).unwrap(), StepOperator::scalar(2.0));
        assert!(make_constant(StepOperator::diagonal(&[2.0, 3.0]), 3).is_err());
    }

    #[test]
    fn random_diagonal_determinism() {
        let id = make_random_diagonal(1, 7, (0.0, 0.0)).unwrap();
        for n in 0..10 {
            assert_eq!(id.coeff_at(n).unwrap(), StepOperator::Diagonal(vec![LogMag::ONE]));
        }
        let a = make_random_diagonal(2, 1, (-1.0, 1.0)).unwrap();
        let b = make_random_diagonal(2, 1, (-1.0, 1.0)).unwrap();
        let c = make_random_diagonal(2, 2, (-1.0, 1.0)).unwrap();
        for n in 0..50 {
            assert_eq!(a.coeff_at(n).unwrap(), b.coeff_at(n).unwrap());
        }
        assert!((0..=8).any(|n| a.coeff_at(n).unwrap() != c.coeff_at(n).unwrap()));
        assert!(make_random_diagonal(2, 1, (1.0, -1.0)).is_err());
    }

    #[test]
    fn scale_normalized_dense_form() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0e5, -1.0, 0.25, 7.0]);
        let s = ScaledMatrix::from_matrix(m.clone()).unwrap();
        let max = s.normalized_part().amax();
        assert!((0.5..=1.0).contains(&max));
        let back = s.to_matrix();
        for (x, y) in back.iter().zip(m.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.abs());
        }
        let z = ScaledMatrix::from_matrix(DMatrix::zeros(2, 2)).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn load_documents() {
        let s = load_system(r#"{"kind": "paper-example", "c": 2}"#).unwrap();
        let p = make_paper_example(2.0).unwrap();
        for n in 0..20 {
            assert_eq!(s.coeff_at(n).unwrap(), p.coeff_at(n).unwrap());
        }

        let s = load_system(r#"{"kind": "explicit", "coeffs": [2, 2], "extension": "periodic"}"#).unwrap();
        for n in 0..20 {
            assert_eq!(s.coeff_at(n).unwrap(), StepOperator::scalar(2.0));
        }

        let s = load_system(
            r#"{"kind": "explicit", "coeffs": [[[1, 0], [0, 1]], [[2, 1], [0, 3]]],
                "extension": "constant-tail"}"#,
        )
        .unwrap();
        assert_eq!(s.kind(), Kind::Dense);
        let last = StepOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0])).unwrap();
        assert_eq!(s.coeff_at(50).unwrap(), last);
    }

    #[test]
    fn load_errors() {
        match load_system("{\n  \"kind\": \"constant\",\n  \"value\": [1, 2,\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_system(r#"{"kind": "lorenz"}"#),
            Err(Error::UnsupportedKind(k)) if k == "lorenz"
        ));
        let s = load_system(r#"{"kind": "explicit", "coeffs": [2, 3]}"#).unwrap();
        assert!(s.coeff_at(1).is_ok());
        assert!(matches!(s.coeff_at(2), Err(Error::OutOfRange { index: 2, len: 2 })));
    }

    #[test]
    fn spec_roundtrip_through_json() {
        let spec = SystemSpec::RandomDiagonal {
            dim: 3,
            seed: 9,
            log_gain_range: [-0.5, 1.0],
            label: Some("rd".into()),
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(SystemSpec::parse(&text).unwrap(), spec);
    }
}
