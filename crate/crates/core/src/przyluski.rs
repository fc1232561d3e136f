//! The weighted summation criterion
//!
//! ```text
//! sum_{k=n}^{m} d^(m-k) |A_k^n x|  <=  D c^m |A_m^n x|
//! ```
//!
//! in three variants: `c` in `[1, d)` (equivalent to power instability),
//! `1 <= 2c < d` (strong power instability) and `c = 1` (uniform power
//! instability). Fitting, evaluation and the conversions between criterion
//! constants and certificates all work in log form.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize, Serializer};

use crate::certify::{fit_certificate, verify_with_cache, Certificate, Concept, VERIFY_TOL};
use crate::error::{Error, Result};
use crate::numerics::{logaddexp, logsumexp, ser_ext_opt, Ext};
use crate::systems::{Kind, OperatorSeq};
use crate::transition::{LogVector, Norm, TransitionCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "THM2")]
    Thm2,
    #[serde(rename = "PROP3")]
    Prop3,
    #[serde(rename = "COR4")]
    Cor4,
}

impl Variant {
    /// The instability concept the variant characterizes.
    pub fn concept(self) -> Concept {
        match self {
            Variant::Thm2 => Concept::Pis,
            Variant::Prop3 => Concept::Spis,
            Variant::Cor4 => Concept::Upis,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "THM2" => Ok(Variant::Thm2),
            "PROP3" => Ok(Variant::Prop3),
            "COR4" => Ok(Variant::Cor4),
            _ => Err(Error::invalid(format!("unknown criterion variant `{s}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Thm2 => "THM2",
            Variant::Prop3 => "PROP3",
            Variant::Cor4 => "COR4",
        })
    }
}

/// Whether the for-all-x quantifier was covered exactly (basis vectors of a
/// scalar/diagonal system) or only sampled (dense systems).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionFit {
    pub variant: Variant,
    pub log_big_d: f64,
    pub logd: f64,
    pub logc: f64,
    pub window: usize,
    /// `min (log D + m log c + log|A_m^n x| - log S)` over the tested
    /// `(m, n, x)`; `None` until evaluated.
    pub slack: Option<f64>,
    pub x_coverage: Coverage,
    pub warning: Option<String>,
}

impl CriterionFit {
    pub fn big_d(&self) -> f64 {
        self.log_big_d.exp()
    }

    pub fn d(&self) -> f64 {
        self.logd.exp()
    }

    pub fn c(&self) -> f64 {
        self.logc.exp()
    }

    /// The variant's constraint on `(d, c)`.
    pub fn variant_constraint_holds(&self) -> bool {
        let base = self.logd > 0.0 && self.logc >= 0.0 && self.log_big_d >= 0.0;
        base && match self.variant {
            Variant::Thm2 => self.logc < self.logd,
            Variant::Prop3 => LN_2 + self.logc < self.logd,
            Variant::Cor4 => self.logc == 0.0,
        }
    }
}

impl Serialize for CriterionFit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("CriterionFit", 11)?;
        st.serialize_field("variant", &self.variant)?;
        st.serialize_field("D", &Ext(self.big_d()))?;
        st.serialize_field("d", &Ext(self.d()))?;
        st.serialize_field("c", &Ext(self.c()))?;
        st.serialize_field("logD", &Ext(self.log_big_d))?;
        st.serialize_field("logd", &Ext(self.logd))?;
        st.serialize_field("logc", &Ext(self.logc))?;
        st.serialize_field("window", &self.window)?;
        st.serialize_field("slack", &self.slack.map(Ext))?;
        st.serialize_field("x_coverage", &self.x_coverage)?;
        st.serialize_field("warning", &self.warning)?;
        st.end()
    }
}

/// `log sum_{k=n}^{m} d^(m-k) |A_k^n x|`, by log-sum-exp over the orbit norms.
pub fn weighted_sum(cache: &TransitionCache, m: usize, n: usize, x: &LogVector, d: f64, norm: Norm) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("d must be positive and finite, got {d}")));
    }
    if m < n {
        return Err(Error::Domain { m, n });
    }
    let logd = d.ln();
    let norms = cache.orbit_log_norms(n, m, x, norm)?;
    let terms: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(i, &v)| (m - n - i) as f64 * logd + v)
        .collect();
    Ok(logsumexp(&terms))
}

/// One constraint `R <= log D + m log c` with `R = log S - log|A_m^n x|`.
#[derive(Clone, Copy, Debug)]
struct Row {
    m: usize,
    ratio: f64,
}

/// All criterion rows on the window for a given `log d`, reusing one
/// forward orbit per `(n, x)`: `S_m = d S_(m-1) + |A_m^n x|`.
fn criterion_rows(cache: &TransitionCache, window: usize, logd: f64, vectors: &[LogVector], norm: Norm) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for n in 0..=window {
        for x in vectors {
            let orbit = cache.orbit_log_norms(n, window, x, norm)?;
            let mut log_s = f64::NEG_INFINITY;
            for (i, &v) in orbit.iter().enumerate() {
                log_s = logaddexp(logd + log_s, v);
                let ratio = if v == f64::NEG_INFINITY {
                    if log_s == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    }
                } else {
                    log_s - v
                };
                rows.push(Row { m: n + i, ratio });
            }
        }
    }
    Ok(rows)
}

fn slack_of(rows: &[Row], log_big_d: f64, logc: f64) -> f64 {
    rows.iter()
        .map(|r| log_big_d + r.m as f64 * logc - r.ratio)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionParams {
    /// Real `d` values; `None` selects the default log-uniform grid.
    pub d_grid: Option<Vec<f64>>,
    /// Upper bound on `log D` for a fit to count as feasible.
    pub d_budget: f64,
    pub gap_delta: f64,
    pub random_vectors: usize,
    pub seed: u64,
    #[serde(default)]
    pub norm: Norm,
}

impl Default for CriterionParams {
    fn default() -> Self {
        CriterionParams {
            d_grid: None,
            d_budget: 4.0,
            gap_delta: 1e-6,
            random_vectors: 4,
            seed: 0,
            norm: Norm::Two,
        }
    }
}

pub const DEFAULT_GRID_POINTS: usize = 17;

/// `log d` values: 17 log-uniform points spanning `(1, 4 * max step gain]`.
pub fn default_log_d_grid(cache: &TransitionCache, window: usize) -> Vec<f64> {
    let max_gain = (0..=window)
        .map(|n| cache.step(n).log_max_gain())
        .fold(f64::NEG_INFINITY, f64::max);
    let top = (max_gain + 4f64.ln()).max(4f64.ln());
    (1..=DEFAULT_GRID_POINTS)
        .map(|i| top * i as f64 / DEFAULT_GRID_POINTS as f64)
        .collect()
}

fn coverage(cache: &TransitionCache) -> Coverage {
    if cache.kind() == Kind::Dense {
        Coverage::Sampled
    } else {
        Coverage::Exact
    }
}

fn criterion_vectors(cache: &TransitionCache, params: &CriterionParams) -> Vec<LogVector> {
    cache.test_vectors(params.random_vectors, params.seed)
}

/// Exact 2-variable fit of `(log D, log c)` at a fixed `log d`.
///
/// Minimizes `log D`; among minimizers takes the smallest `log c`.
fn fit_at(rows: &[Row], logd: f64, variant: Variant, gap_delta: f64) -> Option<(f64, f64)> {
    let cmax = match variant {
        Variant::Thm2 => logd - gap_delta,
        Variant::Prop3 => logd - LN_2 - gap_delta,
        Variant::Cor4 => 0.0,
    };
    if cmax < 0.0 {
        return None;
    }
    let big_d_at = |c: f64| {
        rows.iter()
            .map(|r| r.ratio - r.m as f64 * c)
            .fold(0.0f64, f64::max)
    };
    let dmin = big_d_at(cmax);
    if !dmin.is_finite() {
        return None;
    }
    let c = rows
        .iter()
        .filter(|r| r.m > 0)
        .map(|r| (r.ratio - dmin) / r.m as f64)
        .fold(0.0f64, f64::max)
        .min(cmax);
    Some((big_d_at(c), c))
}

/// Fits the criterion constants on window `[0, window]` over a grid of `d`.
///
/// Returns the feasible fit (log D within `params.d_budget`) with the largest
/// `d`, ties broken by the smallest `D`.
pub fn fit_criterion(
    system: &OperatorSeq,
    window: usize,
    variant: Variant,
    params: &CriterionParams,
) -> Result<Option<CriterionFit>> {
    let cache = TransitionCache::new(system, window)?;
    fit_criterion_cached(&cache, window, variant, params)
}

pub fn fit_criterion_cached(
    cache: &TransitionCache,
    window: usize,
    variant: Variant,
    params: &CriterionParams,
) -> Result<Option<CriterionFit>> {
    let log_grid = match &params.d_grid {
        Some(grid) => {
            if grid.is_empty() {
                return Err(Error::invalid("d grid is empty"));
            }
            if let Some(d) = grid.iter().find(|&&d| !(d > 1.0 && d.is_finite())) {
                return Err(Error::invalid(format!("every d in the grid must exceed 1, got {d}")));
            }
            grid.iter().map(|d| d.ln()).collect()
        }
        None => default_log_d_grid(cache, window),
    };
    if !(params.d_budget >= 0.0) {
        return Err(Error::invalid("d_budget must be nonnegative"));
    }
    let vectors = criterion_vectors(cache, params);
    let mut best: Option<CriterionFit> = None;
    for &logd in &log_grid {
        let rows = criterion_rows(cache, window, logd, &vectors, params.norm)?;
        let Some((log_big_d, logc)) = fit_at(&rows, logd, variant, params.gap_delta) else {
            continue;
        };
        if log_big_d > params.d_budget {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => logd > b.logd || (logd == b.logd && log_big_d < b.log_big_d),
        };
        if better {
            best = Some(CriterionFit {
                variant,
                log_big_d,
                logd,
                logc,
                window,
                slack: Some(slack_of(&rows, log_big_d, logc)),
                x_coverage: coverage(cache),
                warning: None,
            });
        }
    }
    Ok(best)
}

/// Slack of arbitrary criterion constants on a window.
pub fn criterion_margin(cache: &TransitionCache, fit: &CriterionFit, window: usize, params: &CriterionParams) -> Result<f64> {
    let vectors = criterion_vectors(cache, params);
    let rows = criterion_rows(cache, window, fit.logd, &vectors, params.norm)?;
    Ok(slack_of(&rows, fit.log_big_d, fit.logc))
}

fn check_source_cert(cert: &Certificate) -> Result<()> {
    if !(cert.a > 0.0 && cert.a.is_finite()) {
        return Err(Error::invalid("certificate rate a must be positive"));
    }
    if let Some(s) = cert.slack {
        if s < -VERIFY_TOL {
            return Err(Error::invalid("certificate has negative slack"));
        }
    }
    Ok(())
}

/// Definition-to-criterion construction: `d = kappa s / r`, `c = d r`,
/// `D = N kappa / (kappa - 1)`.
///
/// The factor `kappa / (kappa - 1)` bounds the geometric series
/// `sum_k (s / (d r))^k`.
pub fn certificate_to_criterion(cert: &Certificate, kappa: f64) -> Result<CriterionFit> {
    if !(kappa > 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("kappa must exceed 1, got {kappa}")));
    }
    check_source_cert(cert)?;
    let lk = kappa.ln();
    Ok(CriterionFit {
        variant: Variant::Thm2,
        log_big_d: cert.l + (kappa / (kappa - 1.0)).ln(),
        logd: lk + cert.b + cert.a,
        logc: lk + cert.b,
        window: cert.window,
        slack: None,
        x_coverage: Coverage::Exact,
        warning: None,
    })
}

/// Uniform construction for a certificate with `s = 1`: `d = r^(-1/2)`,
/// `c = 1`, `D = N / (1 - r^(1/2))`.
pub fn uniform_certificate_to_criterion(cert: &Certificate) -> Result<CriterionFit> {
    check_source_cert(cert)?;
    if cert.b != 0.0 {
        return Err(Error::invalid("uniform construction needs s = 1 (b = 0)"));
    }
    let half = cert.a / 2.0;
    Ok(CriterionFit {
        variant: Variant::Cor4,
        log_big_d: cert.l - (-(-half).exp_m1()).ln(),
        logd: half,
        logc: 0.0,
        window: cert.window,
        slack: None,
        x_coverage: Coverage::Exact,
        warning: None,
    })
}

/// Criterion-to-definition construction: `N = D`, `r = c / d`, `s = c`.
///
/// A PROP3 fit with `c^2 >= d` does not give `s < 1/r`; the certificate is
/// then returned as PIS with a warning.
pub fn criterion_to_certificate(fit: &CriterionFit) -> (Certificate, Option<String>) {
    let a = fit.logd - fit.logc;
    let b = fit.logc;
    let (concept, warning) = match fit.variant {
        Variant::Thm2 => (Concept::Pis, None),
        Variant::Cor4 => (Concept::Upis, None),
        Variant::Prop3 => {
            if b < a {
                (Concept::Spis, None)
            } else {
                (
                    Concept::Pis,
                    Some(format!(
                        "2c < d holds but c^2 >= d (log c = {b}, log d = {}); s < 1/r fails, downgraded to PIS",
                        fit.logd
                    )),
                )
            }
        }
    };
    let cert = Certificate {
        concept,
        l: fit.log_big_d,
        a,
        b,
        window: fit.window,
        slack: None,
    };
    (cert, warning)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    DefinitionToCriterion,
    CriterionToDefinition,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub system: String,
    pub variant: Variant,
    pub direction: Direction,
    pub source: Option<serde_json::Value>,
    pub constructed: Option<serde_json::Value>,
    #[serde(serialize_with = "ser_ext_opt")]
    pub margin: Option<f64>,
    pub pass: bool,
    /// The source fit did not exist on the window.
    pub infeasible: bool,
    /// The constructed constants satisfy the variant's own constraint.
    pub variant_constraint_ok: Option<bool>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceParams {
    pub l_budget: f64,
    pub gap_delta: f64,
    pub kappa: f64,
    pub samples: usize,
    pub criterion: CriterionParams,
}

impl Default for EquivalenceParams {
    fn default() -> Self {
        EquivalenceParams {
            l_budget: 1.0,
            gap_delta: 1e-6,
            kappa: 2.0,
            samples: 1000,
            criterion: CriterionParams::default(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report records serialize")
}

/// Runs both constructive directions of the equivalence on `[0, window]`.
pub fn check_equivalence(
    system: &OperatorSeq,
    window: usize,
    variant: Variant,
    params: &EquivalenceParams,
) -> Result<Vec<EquivalenceReport>> {
    let cache = TransitionCache::new(system, window)?;
    let norm = params.criterion.norm;
    let table = cache.growth_table(window, if cache.kind() == Kind::Dense { Norm::Two } else { norm })?;
    let concept = variant.concept();
    let label = system.label().to_string();

    // definition -> criterion
    let mut forward = EquivalenceReport {
        system: label.clone(),
        variant,
        direction: Direction::DefinitionToCriterion,
        source: None,
        constructed: None,
        margin: None,
        pass: false,
        infeasible: true,
        variant_constraint_ok: None,
        notes: Vec::new(),
    };
    if let Some(cert) = fit_certificate(&table, window, concept, params.l_budget, params.gap_delta)? {
        let mut crit = match variant {
            Variant::Cor4 => uniform_certificate_to_criterion(&cert)?,
            Variant::Thm2 | Variant::Prop3 => {
                forward.notes.push(format!(
                    "D includes the geometric-series factor kappa/(kappa-1) = {}",
                    params.kappa / (params.kappa - 1.0)
                ));
                certificate_to_criterion(&cert, params.kappa)?
            }
        };
        crit.variant = variant;
        crit.x_coverage = coverage(&cache);
        let margin = criterion_margin(&cache, &crit, window, &params.criterion)?;
        crit.slack = Some(margin);
        let ok = crit.variant_constraint_holds();
        if !ok {
            forward
                .notes
                .push("constructed constants violate the variant constraint on (d, c)".to_string());
        }
        forward.source = Some(to_value(&cert));
        forward.constructed = Some(to_value(&crit));
        forward.margin = Some(margin);
        forward.pass = margin >= -VERIFY_TOL;
        forward.infeasible = false;
        forward.variant_constraint_ok = Some(ok);
    } else {
        forward.notes.push(format!("no {concept} certificate on the window"));
    }

    // criterion -> definition
    let mut backward = EquivalenceReport {
        system: label,
        variant,
        direction: Direction::CriterionToDefinition,
        source: None,
        constructed: None,
        margin: None,
        pass: false,
        infeasible: true,
        variant_constraint_ok: None,
        notes: Vec::new(),
    };
    if let Some(fit) = fit_criterion_cached(&cache, window, variant, &params.criterion)? {
        let (cert, warning) = criterion_to_certificate(&fit);
        let report = verify_with_cache(&cache, &cert, params.samples, params.criterion.seed, norm)?;
        backward.variant_constraint_ok = Some(cert.concept == concept);
        if let Some(w) = warning {
            backward.notes.push(w);
        }
        if fit.x_coverage == Coverage::Sampled {
            backward
                .notes
                .push("criterion checked on basis plus sampled directions only".to_string());
        }
        backward.source = Some(to_value(&fit));
        backward.constructed = Some(to_value(&cert));
        backward.margin = Some(report.worst_margin);
        backward.pass = report.worst_margin >= -VERIFY_TOL;
        backward.infeasible = false;
    } else {
        backward.notes.push(format!("no {variant} criterion fit on the window"));
    }

    Ok(vec![forward, backward])
}
