//! Instability certificates `(N, r, s)`, stored as
//! `(L, a, b) = (log N, -log r, log s)`.
//!
//! On the pair form, a certificate holds on a window `[0, M]` when
//!
//! ```text
//! a (m - n) - b n - L <= g(m, n)      for all 0 <= n <= m <= M,
//! ```
//!
//! where `g` is the log minimum gain. Fitting maximizes `a` over this
//! polyhedron with `L` in `[0, L_budget]`; because every constraint is
//! monotone in `L` and `b`, the three-variable program reduces to a
//! one-dimensional set of linear bounds on `a` which is solved exactly.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{fmt17, ls_slope, ser_ext, ser_ext_opt, Ext};
use crate::systems::{Kind, OperatorSeq};
use crate::transition::{GrowthSource, GrowthStream, LogVector, Norm, TransitionCache};

/// Tolerance on the log-domain inequality when verifying.
pub const VERIFY_TOL: f64 = 1e-9;

/// Horizons above this are evaluated with a [`GrowthStream`] instead of a
/// stored table.
pub const STREAM_THRESHOLD: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Concept {
    /// uniform power instability
    #[serde(rename = "UPIS")]
    Upis,
    /// power instability
    #[serde(rename = "PIS")]
    Pis,
    /// strong power instability
    #[serde(rename = "SPIS")]
    Spis,
}

impl std::str::FromStr for Concept {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "UPIS" => Ok(Concept::Upis),
            "PIS" => Ok(Concept::Pis),
            "SPIS" => Ok(Concept::Spis),
            _ => Err(Error::invalid(format!("unknown concept `{s}`"))),
        }
    }
}

impl std::fmt::Display for Concept {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Concept::Upis => "UPIS",
            Concept::Pis => "PIS",
            Concept::Spis => "SPIS",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub concept: Concept,
    /// `log N`
    pub l: f64,
    /// `log(1/r)`
    pub a: f64,
    /// `log s`
    pub b: f64,
    pub window: usize,
    /// Minimum over the window of `g(m,n) - [a(m-n) - b n - L]`; `None` when
    /// the certificate was not built against a growth table.
    pub slack: Option<f64>,
}

impl Certificate {
    pub fn n(&self) -> f64 {
        self.l.exp()
    }

    pub fn r(&self) -> f64 {
        (-self.a).exp()
    }

    pub fn s(&self) -> f64 {
        self.b.exp()
    }

    /// Checks the parameter constraints of the certificate's concept.
    pub fn is_well_formed(&self, gap_delta: f64) -> bool {
        let base = self.l >= 0.0 && self.a > 0.0 && self.b >= 0.0 && self.l.is_finite() && self.b.is_finite();
        base && match self.concept {
            Concept::Upis => self.b == 0.0,
            Concept::Pis => true,
            Concept::Spis => self.b <= self.a - gap_delta,
        }
    }

    /// The same constants relabelled under a weaker (or equal) concept.
    pub fn as_concept(&self, concept: Concept) -> Certificate {
        Certificate {
            concept,
            ..self.clone()
        }
    }
}

impl Serialize for Certificate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Certificate", 9)?;
        st.serialize_field("concept", &self.concept)?;
        st.serialize_field("N", &Ext(self.n()))?;
        st.serialize_field("r", &Ext(self.r()))?;
        st.serialize_field("s", &Ext(self.s()))?;
        st.serialize_field("L", &Ext(self.l))?;
        st.serialize_field("a", &Ext(self.a))?;
        st.serialize_field("b", &Ext(self.b))?;
        st.serialize_field("window", &self.window)?;
        st.serialize_field("slack", &self.slack.map(Ext))?;
        st.end()
    }
}

fn check_rates(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("rate a must be positive and finite, got {a}")));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("b must be nonnegative and finite, got {b}")));
    }
    Ok(())
}

#[inline]
fn term(a: f64, b: f64, m: usize, n: usize, g: f64) -> f64 {
    if m == n {
        // g(n, n) = 0 exactly
        return -b * n as f64;
    }
    a * (m - n) as f64 - b * n as f64 - g
}

/// `L*(M; a, b) = max(0, max_{n<=m<=M} [a(m-n) - b n - g(m,n)])`;
/// `+inf` when some `g` in the window is `-inf`.
pub fn required_offset(src: &dyn GrowthSource, window: usize, a: f64, b: f64) -> Result<f64> {
    check_rates(a, b)?;
    Ok(offset_unchecked(src, window, a, b))
}

fn offset_unchecked(src: &dyn GrowthSource, window: usize, a: f64, b: f64) -> f64 {
    let mut worst = 0.0f64;
    src.for_each_pair(window, &mut |m, n, g| worst = worst.max(term(a, b, m, n, g)));
    worst
}

/// Smallest `b >= 0` keeping every pair with `n > 0` within the budget at rate `a`.
fn min_b(src: &dyn GrowthSource, window: usize, a: f64, l_budget: f64) -> f64 {
    let mut b = 0.0f64;
    src.for_each_pair(window, &mut |m, n, g| {
        if n > 0 && m > n {
            b = b.max((a * (m - n) as f64 - g - l_budget) / n as f64);
        }
    });
    b
}

fn has_singular(src: &dyn GrowthSource, window: usize) -> bool {
    let mut singular = false;
    src.for_each_pair(window, &mut |_, _, g| singular |= g == f64::NEG_INFINITY);
    singular
}

/// Largest feasible rate on the window, or `None` when no `a > 0` works.
fn max_rate(src: &dyn GrowthSource, window: usize, concept: Concept, l_budget: f64, gap_delta: f64) -> Option<f64> {
    if has_singular(src, window) {
        return None;
    }
    let mut upper = f64::INFINITY;
    let mut lower = 0.0f64;
    let mut contradiction = false;
    src.for_each_pair(window, &mut |m, n, g| {
        if m == n {
            return;
        }
        match concept {
            Concept::Upis => upper = upper.min((g + l_budget) / (m - n) as f64),
            Concept::Pis => {
                if n == 0 {
                    upper = upper.min((g + l_budget) / m as f64);
                }
            }
            Concept::Spis => {
                // with b = a - delta: a (m - 2n) <= g + L - delta n
                let coef = m as f64 - 2.0 * n as f64;
                let rhs = g + l_budget - gap_delta * n as f64;
                if coef > 0.0 {
                    upper = upper.min(rhs / coef);
                } else if coef < 0.0 {
                    lower = lower.max(rhs / coef);
                } else if rhs < 0.0 {
                    contradiction = true;
                }
            }
        }
    });
    if concept == Concept::Spis {
        lower = lower.max(gap_delta);
    }
    if contradiction || upper < lower || !(upper > 0.0) || !upper.is_finite() {
        return None;
    }
    Some(upper)
}

/// Exact certificate fit: maximize `a`, then minimize `b`, then minimize `L`.
///
/// Returns `Ok(None)` when the window admits no certificate with `a > 0`
/// and `L <= l_budget`.
pub fn fit_certificate(
    src: &dyn GrowthSource,
    window: usize,
    concept: Concept,
    l_budget: f64,
    gap_delta: f64,
) -> Result<Option<Certificate>> {
    if window == 0 || window > src.horizon() {
        return Err(Error::invalid(format!(
            "fit window {window} must be in 1..={} (an empty window has no constraints)",
            src.horizon()
        )));
    }
    if !(l_budget >= 0.0 && l_budget.is_finite()) {
        return Err(Error::invalid("L_budget must be nonnegative and finite"));
    }
    if concept == Concept::Spis && !(gap_delta > 0.0) {
        return Err(Error::invalid("gap_delta must be positive"));
    }
    let Some(a) = max_rate(src, window, concept, l_budget, gap_delta) else {
        return Ok(None);
    };
    let b = match concept {
        Concept::Upis => 0.0,
        Concept::Pis => min_b(src, window, a, l_budget),
        Concept::Spis => min_b(src, window, a, l_budget).min(a - gap_delta).max(0.0),
    };
    Ok(Some(certificate_on(src, window, concept, a, b)))
}

/// Builds the certificate with the smallest `L` for the given rates and
/// records its slack.
pub fn certificate_on(src: &dyn GrowthSource, window: usize, concept: Concept, a: f64, b: f64) -> Certificate {
    let l = offset_unchecked(src, window, a, b);
    let mut slack = f64::INFINITY;
    src.for_each_pair(window, &mut |m, n, g| slack = slack.min(l - term(a, b, m, n, g)));
    Certificate {
        concept,
        l,
        a,
        b,
        window,
        slack: Some(slack),
    }
}

/// Minimum over the window of `g - [a(m-n) - b n - L]`.
pub fn pair_slack(src: &dyn GrowthSource, cert: &Certificate) -> f64 {
    let mut slack = f64::INFINITY;
    src.for_each_pair(cert.window, &mut |m, n, g| {
        slack = slack.min(cert.l - term(cert.a, cert.b, m, n, g))
    });
    slack
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Certified {
        rate: f64,
    },
    Rejected {
        #[serde(serialize_with = "ser_ext")]
        slope: f64,
    },
    Inconclusive,
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verdict::Certified { .. })
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Verdict::Rejected { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Certified { .. } => "certified",
            Verdict::Rejected { .. } => "rejected",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub window: usize,
    #[serde(serialize_with = "ser_ext")]
    pub l_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub schedule: Vec<usize>,
    pub epsilon: f64,
    pub l_budget: f64,
    pub gap_delta: f64,
    #[serde(default)]
    pub norm: Norm,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            schedule: vec![32, 64, 128, 256],
            epsilon: 1e-6,
            l_budget: 1.0,
            gap_delta: 1e-6,
            norm: Norm::Two,
        }
    }
}

impl ClassifyParams {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.len() < 3 {
            return Err(Error::invalid("horizon schedule needs at least 3 entries"));
        }
        if self.schedule[0] == 0 || self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("horizon schedule must be positive and strictly increasing"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.l_budget >= 0.0 && self.l_budget.is_finite()) {
            return Err(Error::invalid("L_budget must be nonnegative and finite"));
        }
        if !(self.gap_delta > 0.0 && self.gap_delta.is_finite()) {
            return Err(Error::invalid("gap_delta must be positive"));
        }
        Ok(())
    }

    /// Smallest rate the classifier will test; any fitted rate below it is
    /// treated as the degenerate `a -> 0` boundary.
    pub fn rate_floor(&self) -> f64 {
        2.0 * self.epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub concept: Concept,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub evidence: Vec<Evidence>,
    /// Rates used for every window.
    pub a: f64,
    pub b: f64,
    /// Certificate fitted on the first window, if one exists.
    pub first_window_fit: Option<Certificate>,
    /// The fitted rate was at or below the floor (`a -> 0` edge).
    pub rate_at_floor: bool,
    pub singular: bool,
    pub params: ClassifyParams,
}

/// Window-robust classification over the nested windows of
/// `params.schedule`.
///
/// The rates are fitted once on the first window and frozen. The fitted
/// rate is lowered by `L_budget / M_1` (the most the offset budget can have
/// inflated it on that window) and the fitted `b` is raised by the same
/// amount, so that a system with an exact asymptotic rate shows bounded
/// `L*` instead of a slow linear drift. The verdict is
///
/// * certified when the last two increments of `L*` are at most `epsilon`,
/// * rejected when the least-squares slope of the last three `L*` values
///   against `M` is at least `epsilon`,
/// * inconclusive otherwise.
pub fn classify(system: &OperatorSeq, concept: Concept, params: &ClassifyParams) -> Result<Classification> {
    params.validate()?;
    let horizon = *params.schedule.last().unwrap();
    let cache = TransitionCache::new(system, horizon)?;
    if horizon <= STREAM_THRESHOLD {
        let table = cache.growth_table(horizon, params.norm)?;
        classify_source(&table, concept, params)
    } else {
        let stream = GrowthStream::new(&cache, params.norm)?;
        classify_source(&stream, concept, params)
    }
}

pub fn classify_source(src: &dyn GrowthSource, concept: Concept, params: &ClassifyParams) -> Result<Classification> {
    params.validate()?;
    let schedule = &params.schedule;
    let first = schedule[0];
    let last = *schedule.last().unwrap();
    if last > src.horizon() {
        return Err(Error::invalid("schedule exceeds the growth source horizon"));
    }
    let (lb, delta) = (params.l_budget, params.gap_delta);
    let discount = lb / first as f64;
    let floor = params.rate_floor();

    let singular = has_singular(src, last);
    let fit = fit_certificate(src, first, concept, lb, delta)?;
    let fitted_rate = fit.as_ref().map_or(f64::NEG_INFINITY, |c| c.a - discount);
    let rate_at_floor = fitted_rate <= floor;
    let a = fitted_rate.max(floor);
    let b = match concept {
        Concept::Upis => 0.0,
        Concept::Pis => min_b(src, first, a, lb) + discount,
        Concept::Spis => (min_b(src, first, a, lb) + discount).min(a - delta).max(0.0),
    };

    let evidence: Vec<Evidence> = schedule
        .iter()
        .map(|&w| Evidence {
            window: w,
            l_star: offset_unchecked(src, w, a, b),
        })
        .collect();

    let verdict = if singular {
        Verdict::Rejected { slope: f64::INFINITY }
    } else {
        let ls: Vec<f64> = evidence.iter().map(|e| e.l_star).collect();
        let k = ls.len();
        let incr_ok = ls[k - 1] - ls[k - 2] <= params.epsilon && ls[k - 2] - ls[k - 3] <= params.epsilon;
        let xs: Vec<f64> = schedule[k - 3..].iter().map(|&w| w as f64).collect();
        let slope = ls_slope(&xs, &ls[k - 3..]);
        if incr_ok {
            Verdict::Certified { rate: a }
        } else if slope >= params.epsilon {
            Verdict::Rejected { slope }
        } else {
            Verdict::Inconclusive
        }
    };

    Ok(Classification {
        concept,
        verdict,
        evidence,
        a,
        b,
        first_window_fit: fit,
        rate_at_floor,
        singular,
        params: params.clone(),
    })
}

/// Writes `concept,window,l_star` rows.
pub fn write_evidence_csv<W: Write>(classes: &[Classification], mut w: W) -> std::io::Result<()> {
    writeln!(w, "concept,window,l_star")?;
    for c in classes {
        for e in &c.evidence {
            writeln!(w, "{},{},{}", c.concept, e.window, fmt17(e.l_star))?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Triplet {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    /// index into the test-vector list (basis vectors first)
    pub vector: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    #[serde(serialize_with = "ser_ext")]
    pub worst_margin: f64,
    pub worst_at: Option<Triplet>,
    pub checked: usize,
}

impl VerificationReport {
    fn new() -> Self {
        VerificationReport {
            pass: true,
            worst_margin: f64::INFINITY,
            worst_at: None,
            checked: 0,
        }
    }

    fn record(&mut self, margin: f64, at: Triplet) {
        self.checked += 1;
        // NaN (e.g. -inf - -inf) counts as a failure
        if margin.is_nan() || margin < self.worst_margin {
            self.worst_margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
            self.worst_at = Some(at);
        }
        self.pass = self.worst_margin >= -VERIFY_TOL;
    }
}

/// Margin `log(N r^(m-n) s^n |A_m^p x|) - log |A_n^p x|` of the full
/// definition inequality for one triplet.
fn triplet_margin(cert: &Certificate, m: usize, n: usize, norms_from_p: &[f64], p: usize) -> f64 {
    let at_n = norms_from_p[n - p];
    let at_m = norms_from_p[m - p];
    if at_n == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    cert.l - cert.a * (m - n) as f64 + cert.b * n as f64 + at_m - at_n
}

/// Samples triplets `M >= m >= n >= p >= 0` and unit vectors and checks the
/// definition inequality in log form with slack [`VERIFY_TOL`].
pub fn verify_certificate(
    system: &OperatorSeq,
    cert: &Certificate,
    sample_count: usize,
    seed: u64,
    norm: Norm,
) -> Result<VerificationReport> {
    let cache = TransitionCache::new(system, cert.window)?;
    verify_with_cache(&cache, cert, sample_count, seed, norm)
}

pub fn verify_with_cache(
    cache: &TransitionCache,
    cert: &Certificate,
    sample_count: usize,
    seed: u64,
    norm: Norm,
) -> Result<VerificationReport> {
    let window = cert.window.min(cache.horizon());
    let norm = if cache.kind() == Kind::Dense { Norm::Two } else { norm };
    let vectors = cache.test_vectors(if cache.kind() == Kind::Dense { 8 } else { 0 }, seed ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerificationReport::new();
    if !cert.a.is_finite() || !cert.l.is_finite() || !cert.b.is_finite() {
        report.record(f64::NEG_INFINITY, Triplet { m: 0, n: 0, p: 0, vector: 0 });
        return Ok(report);
    }
    for _ in 0..sample_count {
        let m = rng.gen_range(0..=window);
        let n = rng.gen_range(0..=m);
        let p = rng.gen_range(0..=n);
        let vi = rng.gen_range(0..vectors.len());
        let norms = cache.orbit_log_norms(p, m, &vectors[vi], norm)?;
        let margin = triplet_margin(cert, m, n, &norms, p);
        report.record(margin, Triplet { m, n, p, vector: vi });
    }
    Ok(report)
}

/// Every triplet in the window against every basis vector.
pub fn verify_exhaustive_basis(cache: &TransitionCache, cert: &Certificate, norm: Norm) -> Result<VerificationReport> {
    let window = cert.window.min(cache.horizon());
    let norm = if cache.kind() == Kind::Dense { Norm::Two } else { norm };
    let vectors: Vec<LogVector> = cache.test_vectors(0, 0);
    let mut report = VerificationReport::new();
    for (vi, x) in vectors.iter().enumerate() {
        for p in 0..=window {
            let norms = cache.orbit_log_norms(p, window, x, norm)?;
            for n in p..=window {
                for m in n..=window {
                    report.record(triplet_margin(cert, m, n, &norms, p), Triplet { m, n, p, vector: vi });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateRecord {
    pub certificate: Option<Certificate>,
    pub concept: Concept,
    pub window: usize,
    pub verification: Option<VerificationReport>,
    #[serde(serialize_with = "ser_ext_opt")]
    pub zero_budget_rate: Option<f64>,
}
