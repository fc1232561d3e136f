//! Transition operators `A(m)...A(n+1)` over the index set `m >= n`.
//!
//! Everything is carried in log form. Scalar and diagonal products are sums
//! of log-magnitudes, accumulated left to right from `n + 1` to `m`. Dense
//! products are scale-normalized matrices; the minimum gain of a dense
//! product is obtained as `1 / sigma_max` of the inverse product, which keeps
//! relative accuracy even when the forward product is badly conditioned.

use std::f64::consts::LN_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fmt17, frexp, ldexp, logsumexp, CompensatedSum};
use crate::systems::{Kind, LogMag, OperatorSeq, ScaledMatrix, StepOperator};

pub const DEFAULT_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    One,
    #[default]
    Two,
    Infinity,
}

impl std::str::FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "1" => Ok(Norm::One),
            "two" | "2" => Ok(Norm::Two),
            "infinity" | "inf" => Ok(Norm::Infinity),
            _ => Err(Error::invalid(format!("unknown norm `{s}`"))),
        }
    }
}

fn check_pair(m: usize, n: usize) -> Result<()> {
    if m < n {
        Err(Error::Domain { m, n })
    } else {
        Ok(())
    }
}

fn log_sigma_max(m: &ScaledMatrix) -> f64 {
    let sv = m.normalized_part().clone().singular_values();
    sv.max().ln() + m.log_scale()
}

/// Coefficients `A(0..=horizon)` of a system, with dense block products at
/// checkpoint rows every `stride` indices.
#[derive(Clone, Debug)]
pub struct TransitionCache {
    kind: Kind,
    dim: usize,
    label: String,
    horizon: usize,
    stride: usize,
    steps: Vec<StepOperator>,
    // dense only
    inv_steps: Vec<Option<ScaledMatrix>>,
    blocks: Vec<ScaledMatrix>,
    inv_blocks: Vec<Option<ScaledMatrix>>,
}

impl TransitionCache {
    pub fn new(system: &OperatorSeq, horizon: usize) -> Result<Self> {
        Self::with_stride(system, horizon, DEFAULT_STRIDE)
    }

    pub fn with_stride(system: &OperatorSeq, horizon: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("checkpoint stride must be positive"));
        }
        let steps = (0..=horizon).map(|n| system.coeff_at(n)).collect::<Result<Vec<_>>>()?;
        let mut cache = TransitionCache {
            kind: system.kind(),
            dim: system.dim(),
            label: system.label().to_string(),
            horizon,
            stride,
            steps,
            inv_steps: Vec::new(),
            blocks: Vec::new(),
            inv_blocks: Vec::new(),
        };
        if cache.kind == Kind::Dense {
            cache.inv_steps = cache
                .steps
                .iter()
                .map(|s| match s {
                    StepOperator::Dense(m) => m.try_inverse(),
                    _ => unreachable!(),
                })
                .collect();
            // block j covers steps j*stride+1 ..= (j+1)*stride
            let nblocks = horizon / stride;
            for j in 0..nblocks {
                let (lo, hi) = (j * stride, (j + 1) * stride);
                cache.blocks.push(cache.direct_forward(hi, lo));
                cache.inv_blocks.push(cache.direct_inverse(hi, lo));
            }
        }
        Ok(cache)
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step(&self, n: usize) -> &StepOperator {
        &self.steps[n]
    }

    fn check(&self, m: usize, n: usize) -> Result<()> {
        check_pair(m, n)?;
        if m > self.horizon {
            return Err(Error::BeyondHorizon {
                index: m,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    fn dense_step(&self, i: usize) -> &ScaledMatrix {
        match &self.steps[i] {
            StepOperator::Dense(m) => m,
            _ => unreachable!(),
        }
    }

    fn direct_forward(&self, m: usize, n: usize) -> ScaledMatrix {
        let mut p = ScaledMatrix::identity(self.dim);
        for i in n + 1..=m {
            p = self.dense_step(i).mul(&p);
        }
        p
    }

    fn direct_inverse(&self, m: usize, n: usize) -> Option<ScaledMatrix> {
        let mut q = ScaledMatrix::identity(self.dim);
        for i in n + 1..=m {
            q = q.mul(self.inv_steps[i].as_ref()?);
        }
        Some(q)
    }

    /// Splits `(n, m]` into a leading partial block, whole blocks, and a
    /// trailing partial block.
    fn segments(&self, m: usize, n: usize) -> (usize, std::ops::Range<usize>, usize) {
        let k = self.stride;
        let first = n.div_ceil(k);
        let last = m / k;
        if first >= last {
            return (m, 0..0, m);
        }
        (first * k, first..last, last * k)
    }

    fn dense_forward(&self, m: usize, n: usize) -> ScaledMatrix {
        let (c1, blocks, c2) = self.segments(m, n);
        let mut p = ScaledMatrix::identity(self.dim);
        for i in n + 1..=c1 {
            p = self.dense_step(i).mul(&p);
        }
        for j in blocks {
            p = self.blocks[j].mul(&p);
        }
        for i in c2 + 1..=m {
            p = self.dense_step(i).mul(&p);
        }
        p
    }

    fn dense_inverse(&self, m: usize, n: usize) -> Option<ScaledMatrix> {
        let (c1, blocks, c2) = self.segments(m, n);
        let mut q = ScaledMatrix::identity(self.dim);
        for i in n + 1..=c1 {
            q = q.mul(self.inv_steps[i].as_ref()?);
        }
        for j in blocks {
            q = q.mul(self.inv_blocks[j].as_ref()?);
        }
        for i in c2 + 1..=m {
            q = q.mul(self.inv_steps[i].as_ref()?);
        }
        Some(q)
    }

    /// The transition operator `A(m)...A(n+1)`; identity when `m == n`.
    pub fn transition(&self, m: usize, n: usize) -> Result<StepOperator> {
        self.check(m, n)?;
        Ok(match self.kind {
            Kind::Scalar => {
                let mut acc = CompensatedSum::default();
                for i in n + 1..=m {
                    let StepOperator::Scalar(a) = &self.steps[i] else { unreachable!() };
                    acc.add(a.log());
                }
                StepOperator::Scalar(LogMag::from_log(acc.value()))
            }
            Kind::Diagonal => {
                let mut acc = vec![CompensatedSum::default(); self.dim];
                for i in n + 1..=m {
                    let StepOperator::Diagonal(d) = &self.steps[i] else { unreachable!() };
                    for (x, a) in acc.iter_mut().zip(d) {
                        x.add(a.log());
                    }
                }
                StepOperator::Diagonal(acc.iter().map(|x| LogMag::from_log(x.value())).collect())
            }
            Kind::Dense => StepOperator::Dense(self.dense_forward(m, n)),
        })
    }

    /// `log` of the minimum gain `inf_{|x|=1} |A_m^n x|`; `-inf` for a
    /// singular product.
    pub fn min_gain(&self, m: usize, n: usize, norm: Norm) -> Result<f64> {
        self.check(m, n)?;
        self.check_norm(norm)?;
        if m == n {
            return Ok(0.0);
        }
        Ok(match self.kind {
            Kind::Scalar | Kind::Diagonal => min_log_entry(&self.transition(m, n)?),
            Kind::Dense => match self.dense_inverse(m, n) {
                Some(q) => -log_sigma_max(&q),
                None => f64::NEG_INFINITY,
            },
        })
    }

    fn check_norm(&self, norm: Norm) -> Result<()> {
        if self.kind == Kind::Dense && norm != Norm::Two {
            return Err(Error::UnsupportedCombination(format!(
                "minimum gain of dense operators is only available in the two-norm, not {norm:?}"
            )));
        }
        Ok(())
    }

    /// Calls `f(m, g(m, n))` for `m = n..=last`, accumulating along the row.
    pub fn for_each_in_row(&self, n: usize, last: usize, norm: Norm, mut f: impl FnMut(usize, f64)) -> Result<()> {
        self.check(last, n)?;
        self.check_norm(norm)?;
        f(n, 0.0);
        match self.kind {
            Kind::Scalar => {
                let mut acc = CompensatedSum::default();
                for m in n + 1..=last {
                    let StepOperator::Scalar(a) = &self.steps[m] else { unreachable!() };
                    acc.add(a.log());
                    f(m, acc.value());
                }
            }
            Kind::Diagonal => {
                let mut acc = vec![CompensatedSum::default(); self.dim];
                for m in n + 1..=last {
                    let StepOperator::Diagonal(d) = &self.steps[m] else { unreachable!() };
                    let mut min = f64::INFINITY;
                    for (x, a) in acc.iter_mut().zip(d) {
                        x.add(a.log());
                        min = min.min(x.value());
                    }
                    f(m, min);
                }
            }
            Kind::Dense => {
                let mut q = Some(ScaledMatrix::identity(self.dim));
                for m in n + 1..=last {
                    q = match (q, &self.inv_steps[m]) {
                        (Some(q), Some(inv)) => Some(q.mul(inv)),
                        _ => None,
                    };
                    f(m, q.as_ref().map_or(f64::NEG_INFINITY, |q| -log_sigma_max(q)));
                }
            }
        }
        Ok(())
    }

    /// Table of `g(m, n)` for `0 <= n <= m <= horizon`.
    pub fn growth_table(&self, horizon: usize, norm: Norm) -> Result<GrowthTable> {
        if horizon > self.horizon {
            return Err(Error::BeyondHorizon {
                index: horizon,
                horizon: self.horizon,
            });
        }
        let mut data = vec![0.0; (horizon + 1) * (horizon + 2) / 2];
        for n in 0..=horizon {
            self.for_each_in_row(n, horizon, norm, |m, g| data[tri(m, n)] = g)?;
        }
        Ok(GrowthTable { horizon, norm, data })
    }

    /// Basis vectors, plus `random` seeded unit directions for dense systems.
    pub fn test_vectors(&self, random: usize, seed: u64) -> Vec<LogVector> {
        let mut out: Vec<LogVector> = (0..self.dim).map(|i| LogVector::basis(self.kind, self.dim, i)).collect();
        if self.kind == Kind::Dense {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..random {
                let v = DVector::from_fn(self.dim, |_, _| rng.gen_range(-1.0..=1.0));
                let nrm = v.norm();
                if nrm > 0.0 {
                    out.push(LogVector::dense(v / nrm));
                }
            }
        }
        out
    }

    /// `log |A_k^n x|` for `k = n..=m`, propagating `x` forward one step at a time.
    pub fn orbit_log_norms(&self, n: usize, m: usize, x: &LogVector, norm: Norm) -> Result<Vec<f64>> {
        self.check(m, n)?;
        self.check_norm(norm)?;
        let mut v = x.clone();
        let mut out = Vec::with_capacity(m - n + 1);
        out.push(v.log_norm(norm));
        for k in n + 1..=m {
            v.apply(&self.steps[k]);
            out.push(v.log_norm(norm));
        }
        Ok(out)
    }
}

fn min_log_entry(op: &StepOperator) -> f64 {
    match op {
        StepOperator::Scalar(a) => a.log(),
        StepOperator::Diagonal(d) => d.iter().map(|x| x.log()).fold(f64::INFINITY, f64::min),
        StepOperator::Dense(_) => unreachable!(),
    }
}

/// A state vector in log form: per-entry log-magnitudes for scalar and
/// diagonal systems, a scaled real vector for dense systems.
#[derive(Clone, Debug, PartialEq)]
pub enum LogVector {
    Entries(Vec<f64>),
    Dense { v: DVector<f64>, exp2: i64 },
}

impl LogVector {
    pub fn basis(kind: Kind, dim: usize, i: usize) -> Self {
        match kind {
            Kind::Dense => {
                let mut v = DVector::zeros(dim);
                v[i] = 1.0;
                LogVector::dense(v)
            }
            _ => {
                let mut e = vec![f64::NEG_INFINITY; dim];
                e[i] = 0.0;
                LogVector::Entries(e)
            }
        }
    }

    pub fn dense(v: DVector<f64>) -> Self {
        let mut out = LogVector::Dense { v, exp2: 0 };
        out.renormalize();
        out
    }

    fn renormalize(&mut self) {
        if let LogVector::Dense { v, exp2 } = self {
            let max = v.amax();
            if max > 0.0 {
                let (_, e) = frexp(max);
                v.apply(|x| *x = ldexp(*x, -e));
                *exp2 += e;
            }
        }
    }

    pub fn apply(&mut self, step: &StepOperator) {
        match (self, step) {
            (LogVector::Entries(e), StepOperator::Scalar(a)) => e[0] += a.log(),
            (LogVector::Entries(e), StepOperator::Diagonal(d)) => {
                for (x, a) in e.iter_mut().zip(d) {
                    *x += a.log();
                }
            }
            (this @ LogVector::Dense { .. }, StepOperator::Dense(m)) => {
                if let LogVector::Dense { v, exp2 } = this {
                    *v = m.normalized_part() * &*v;
                    *exp2 += m.exp2();
                }
                this.renormalize();
            }
            _ => panic!("apply: vector and operator kinds differ"),
        }
    }

    pub fn log_norm(&self, norm: Norm) -> f64 {
        match self {
            LogVector::Entries(e) => match norm {
                Norm::One => logsumexp(e),
                Norm::Infinity => e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Norm::Two => {
                    let doubled: Vec<f64> = e.iter().map(|x| 2.0 * x).collect();
                    0.5 * logsumexp(&doubled)
                }
            },
            LogVector::Dense { v, exp2 } => {
                let raw = match norm {
                    Norm::One => v.lp_norm(1),
                    Norm::Two => v.norm(),
                    Norm::Infinity => v.amax(),
                };
                if raw == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    raw.ln() + *exp2 as f64 * LN_2
                }
            }
        }
    }
}

#[inline]
fn tri(m: usize, n: usize) -> usize {
    m * (m + 1) / 2 + n
}

/// `g(m, n) = log gamma(m, n)` for `0 <= n <= m <= horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthTable {
    horizon: usize,
    norm: Norm,
    data: Vec<f64>,
}

impl GrowthTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        assert!(n <= m && m <= self.horizon, "({m}, {n}) outside the table");
        self.data[tri(m, n)]
    }

    /// Minimum and maximum finite entry, and whether any entry is `-inf`.
    pub fn extremes(&self) -> (f64, f64, bool) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut singular = false;
        for &g in &self.data {
            if g == f64::NEG_INFINITY {
                singular = true;
            } else {
                lo = lo.min(g);
                hi = hi.max(g);
            }
        }
        (lo, hi, singular)
    }

    /// CSV with header `m,n,g`, rows in lexicographic `(m, n)` order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "m,n,g")?;
        for m in 0..=self.horizon {
            for n in 0..=m {
                writeln!(w, "{m},{n},{}", fmt17(self.get(m, n)))?;
            }
        }
        Ok(())
    }
}

/// Anything that can enumerate `g(m, n)` over a window.
pub trait GrowthSource {
    fn horizon(&self) -> usize;

    /// Calls `f(m, n, g)` once for every pair with `n <= m <= window`.
    fn for_each_pair(&self, window: usize, f: &mut dyn FnMut(usize, usize, f64));
}

impl GrowthSource for GrowthTable {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn for_each_pair(&self, window: usize, f: &mut dyn FnMut(usize, usize, f64)) {
        let window = window.min(self.horizon);
        for m in 0..=window {
            let row = &self.data[tri(m, 0)..=tri(m, m)];
            for (n, &g) in row.iter().enumerate() {
                f(m, n, g);
            }
        }
    }
}

/// Recomputes growth rows on demand instead of storing the triangle;
/// memory is linear in the horizon.
pub struct GrowthStream<'a> {
    cache: &'a TransitionCache,
    norm: Norm,
}

impl<'a> GrowthStream<'a> {
    pub fn new(cache: &'a TransitionCache, norm: Norm) -> Result<Self> {
        cache.check_norm(norm)?;
        Ok(GrowthStream { cache, norm })
    }
}

impl GrowthSource for GrowthStream<'_> {
    fn horizon(&self) -> usize {
        self.cache.horizon
    }

    fn for_each_pair(&self, window: usize, f: &mut dyn FnMut(usize, usize, f64)) {
        let window = window.min(self.cache.horizon);
        for n in 0..=window {
            self.cache
                .for_each_in_row(n, window, self.norm, |m, g| f(m, n, g))
                .expect("validated at construction");
        }
    }
}

/// Closed-form `log |A_m^n|` for the built-in example:
/// `(m - n) log c + log a_mn` with the four parity cases of `a_mn`.
pub fn paper_example_closed_form(c: f64, m: usize, n: usize) -> Result<f64> {
    check_pair(m, n)?;
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::invalid(format!("c must be positive and finite, got {c}")));
    }
    if m == n {
        return Ok(0.0);
    }
    let (mi, ni) = (m as i64, n as i64);
    let exp2 = match (m % 2, n % 2) {
        (0, 0) => 0,
        (0, _) => -ni - 1,
        (_, 0) => mi + 1,
        _ => mi - ni,
    };
    Ok((m - n) as f64 * c.ln() + exp2 as f64 * LN_2)
}

/// Plain dense product used by tests; no scaling.
pub fn dense_product_unscaled(ops: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = ops[0].nrows();
    ops.iter().fold(DMatrix::identity(d, d), |acc, a| a * acc)
}
