//! Configuration-driven analyses and their JSON/CSV reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::certify::{
    classify_source, fit_certificate, verify_with_cache, write_evidence_csv, CertificateRecord, Classification,
    ClassifyParams, Concept, STREAM_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::numerics::{fmt17, ser_ext};
use crate::przyluski::{check_equivalence, fit_criterion_cached, CriterionFit, CriterionParams, EquivalenceParams, EquivalenceReport, Variant};
use crate::systems::{CoeffSpec, Kind, OperatorSeq, SystemSpec};
use crate::transition::{GrowthSource, GrowthStream, Norm, TransitionCache};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    #[default]
    Both,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "both" => Ok(Format::Both),
            _ => Err(Error::invalid(format!("format: unknown value `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `c` (built-in example) or `value` (constant scalar system).
    pub parameter: String,
    pub concept: Concept,
    #[serde(default)]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub bisect: Option<Bisection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub system: SystemSpec,
    pub concepts: Vec<Concept>,
    pub variants: Vec<Variant>,
    pub schedule: Vec<usize>,
    /// Window for growth export, certificate fits, criterion fits and
    /// equivalence checks.
    pub window: usize,
    pub epsilon: f64,
    pub l_budget: f64,
    pub gap_delta: f64,
    pub kappa: f64,
    pub d_budget: f64,
    pub d_grid: Option<Vec<f64>>,
    pub seed: u64,
    pub samples: usize,
    pub random_vectors: usize,
    pub norm: Norm,
    pub output_dir: PathBuf,
    pub format: Format,
    pub timestamp: bool,
    pub sweep: Option<SweepSpec>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            system: SystemSpec::PaperExample { c: 2.0, label: None },
            concepts: vec![Concept::Upis, Concept::Pis, Concept::Spis],
            variants: vec![Variant::Thm2, Variant::Prop3, Variant::Cor4],
            schedule: vec![32, 64, 128, 256],
            window: 64,
            epsilon: 1e-6,
            l_budget: 1.0,
            gap_delta: 1e-6,
            kappa: 2.0,
            d_budget: 4.0,
            d_grid: None,
            seed: 0,
            samples: 1000,
            random_vectors: 4,
            norm: Norm::Two,
            output_dir: PathBuf::from("out"),
            format: Format::Both,
            timestamp: true,
            sweep: None,
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("{field}: {msg}"))
}

fn nested(field: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter(msg) => field_err(field, msg),
        other => field_err(field, other),
    }
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(&e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn classify_params(&self) -> ClassifyParams {
        ClassifyParams {
            schedule: self.schedule.clone(),
            epsilon: self.epsilon,
            l_budget: self.l_budget,
            gap_delta: self.gap_delta,
            norm: self.norm,
        }
    }

    pub fn criterion_params(&self) -> CriterionParams {
        CriterionParams {
            d_grid: self.d_grid.clone(),
            d_budget: self.d_budget,
            gap_delta: self.gap_delta,
            random_vectors: self.random_vectors,
            seed: self.seed,
            norm: self.norm,
        }
    }

    pub fn equivalence_params(&self) -> EquivalenceParams {
        EquivalenceParams {
            l_budget: self.l_budget,
            gap_delta: self.gap_delta,
            kappa: self.kappa,
            samples: self.samples,
            criterion: self.criterion_params(),
        }
    }

    /// Checks every numeric field against the preconditions of the
    /// operations it feeds. Builds the system to surface its errors too.
    pub fn validate(&self) -> Result<OperatorSeq> {
        let system = self.system.build().map_err(|e| nested("system", e))?;
        self.classify_params()
            .validate()
            .map_err(|e| nested("classification", e))?;
        if self.window == 0 {
            return Err(field_err("window", "must be positive"));
        }
        if !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(field_err("kappa", "must exceed 1"));
        }
        if !(self.d_budget >= 0.0 && self.d_budget.is_finite()) {
            return Err(field_err("d_budget", "must be nonnegative and finite"));
        }
        if let Some(grid) = &self.d_grid {
            if grid.is_empty() || grid.iter().any(|&d| !(d > 1.0 && d.is_finite())) {
                return Err(field_err("d_grid", "must be a nonempty list of values > 1"));
            }
        }
        if self.samples == 0 {
            return Err(field_err("samples", "must be positive"));
        }
        if system.kind() == Kind::Dense && self.norm != Norm::Two {
            return Err(field_err("norm", "dense systems support only the two-norm"));
        }
        if let Some(sweep) = &self.sweep {
            validate_sweep(&self.system, sweep)?;
        }
        Ok(system)
    }
}

fn validate_sweep(system: &SystemSpec, sweep: &SweepSpec) -> Result<()> {
    with_parameter(system, &sweep.parameter, 1.0).map_err(|e| nested("sweep.parameter", e))?;
    if sweep.grid.is_empty() && sweep.bisect.is_none() {
        return Err(field_err("sweep", "needs a grid, a bisection, or both"));
    }
    if sweep.grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(field_err("sweep.grid", "values must be positive and finite"));
    }
    if let Some(b) = &sweep.bisect {
        if !(b.lo > 0.0 && b.lo < b.hi && b.hi.is_finite() && b.width > 0.0) {
            return Err(field_err("sweep.bisect", "needs 0 < lo < hi and width > 0"));
        }
    }
    Ok(())
}

/// The system document with its sweepable parameter replaced.
pub fn with_parameter(system: &SystemSpec, parameter: &str, value: f64) -> Result<SystemSpec> {
    match (parameter, system) {
        ("c", SystemSpec::PaperExample { label, .. }) => Ok(SystemSpec::PaperExample {
            c: value,
            label: label.clone(),
        }),
        ("value", SystemSpec::Constant { value: CoeffSpec::Scalar(_), label }) => Ok(SystemSpec::Constant {
            value: CoeffSpec::Scalar(value),
            label: label.clone(),
        }),
        _ => Err(Error::invalid(format!(
            "parameter `{parameter}` is not sweepable for this system (use `c` with paper-example or `value` with a scalar constant)"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SystemSummary {
    pub label: String,
    pub kind: Kind,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthSummary {
    pub window: usize,
    pub norm: Norm,
    #[serde(serialize_with = "ser_ext")]
    pub min_g: f64,
    #[serde(serialize_with = "ser_ext")]
    pub max_g: f64,
    pub singular: bool,
    pub csv: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriterionRecord {
    pub variant: Variant,
    pub window: usize,
    pub fit: Option<CriterionFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub verdict: String,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Boundary {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    pub evaluations: usize,
}

/// Threshold stated for the built-in example, kept for comparison only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PublishedThreshold {
    pub statement: String,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub concept: Concept,
    pub grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub monotone: bool,
    pub boundary: Option<Boundary>,
    pub bisection_refused: Option<String>,
    pub published_threshold: Option<PublishedThreshold>,
    /// Whether the measured boundary interval contains the stated threshold.
    pub agrees_with_published: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub config: AnalysisConfig,
    pub system: SystemSummary,
    pub growth_summary: Option<GrowthSummary>,
    pub certificates: Vec<CertificateRecord>,
    pub classifications: Vec<Classification>,
    pub criterion_fits: Vec<CriterionRecord>,
    pub equivalence: Vec<EquivalenceReport>,
    pub sweep: Option<SweepResult>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

/// Which sections a run computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Analyze,
    Growth,
    Certify,
    Criterion,
    Equivalence,
    Sweep,
}

const WINDOW_NOTE: &str = "Classifications are window-robust: on any finite window every system admits some \
certificate with a large enough N, so `certified` means the required offset L* stays within epsilon across \
the last windows of the schedule at a rate frozen on the first window, and `rejected` means L* keeps growing \
linearly (slope >= epsilon).";

const SUM_NOTE: &str = "Definition-to-criterion constructions include the geometric-series factor \
kappa/(kappa-1) in D; without it the constructed constants do not satisfy the summation inequality.";

const PROP3_NOTE: &str = "The strong-variant conversion r = c/d, s = c satisfies s < 1/r only when c^2 < d, \
which 1 <= 2c < d does not imply; such fits are reported as PIS with a warning.";

fn summary(system: &OperatorSeq) -> SystemSummary {
    SystemSummary {
        label: system.label().to_string(),
        kind: system.kind(),
        dim: system.dim(),
    }
}

fn growth_norm(system: &OperatorSeq, norm: Norm) -> Norm {
    if system.kind() == Kind::Dense {
        Norm::Two
    } else {
        norm
    }
}

fn classify_all(system: &OperatorSeq, config: &AnalysisConfig, concepts: &[Concept]) -> Result<Vec<Classification>> {
    let params = config.classify_params();
    let horizon = *params.schedule.last().unwrap();
    let cache = TransitionCache::new(system, horizon)?;
    let norm = growth_norm(system, config.norm);
    let params = ClassifyParams { norm, ..params };
    if horizon <= STREAM_THRESHOLD {
        let table = cache.growth_table(horizon, norm)?;
        concepts.iter().map(|&c| classify_source(&table, c, &params)).collect()
    } else {
        let stream = GrowthStream::new(&cache, norm)?;
        concepts.iter().map(|&c| classify_source(&stream, c, &params)).collect()
    }
}

pub fn run(config: &AnalysisConfig, scope: Scope) -> Result<Report> {
    let system = config.validate()?;
    let mut report = Report {
        config: config.clone(),
        system: summary(&system),
        growth_summary: None,
        certificates: Vec::new(),
        classifications: Vec::new(),
        criterion_fits: Vec::new(),
        equivalence: Vec::new(),
        sweep: None,
        notes: Vec::new(),
        timestamp: None,
    };
    let window = config.window;
    let norm = growth_norm(&system, config.norm);
    let cache = TransitionCache::new(&system, window)?;
    let wants = |s: Scope| scope == Scope::Analyze || scope == s;

    if wants(Scope::Growth) || wants(Scope::Certify) {
        let (min_g, max_g, singular) = if window <= STREAM_THRESHOLD {
            cache.growth_table(window, norm)?.extremes()
        } else {
            let stream = GrowthStream::new(&cache, norm)?;
            let (mut lo, mut hi, mut sing) = (f64::INFINITY, f64::NEG_INFINITY, false);
            stream.for_each_pair(window, &mut |_, _, g| {
                if g == f64::NEG_INFINITY {
                    sing = true;
                } else {
                    lo = lo.min(g);
                    hi = hi.max(g);
                }
            });
            (lo, hi, sing)
        };
        let wants_csv = config.format != Format::Json && window <= STREAM_THRESHOLD;
        report.growth_summary = Some(GrowthSummary {
            window,
            norm,
            min_g,
            max_g,
            singular,
            csv: wants_csv.then(|| "growth.csv".to_string()),
        });
    }

    if wants(Scope::Certify) {
        report.notes.push(WINDOW_NOTE.to_string());
        let table = cache.growth_table(window, norm)?;
        for &concept in &config.concepts {
            let cert = fit_certificate(&table, window, concept, config.l_budget, config.gap_delta)?;
            let zero = fit_certificate(&table, window, concept, 0.0, config.gap_delta)?.map(|c| c.a);
            let verification = match &cert {
                Some(c) => Some(verify_with_cache(&cache, c, config.samples, config.seed, norm)?),
                None => None,
            };
            report.certificates.push(CertificateRecord {
                certificate: cert,
                concept,
                window,
                verification,
                zero_budget_rate: zero,
            });
        }
        report.classifications = classify_all(&system, config, &config.concepts)?;
    }

    if wants(Scope::Criterion) {
        let params = config.criterion_params();
        for &variant in &config.variants {
            let fit = fit_criterion_cached(&cache, window, variant, &params)?;
            report.criterion_fits.push(CriterionRecord { variant, window, fit });
        }
        if config.variants.contains(&Variant::Prop3) {
            report.notes.push(PROP3_NOTE.to_string());
        }
    }

    if wants(Scope::Equivalence) {
        report.notes.push(SUM_NOTE.to_string());
        let params = config.equivalence_params();
        for &variant in &config.variants {
            report.equivalence.extend(check_equivalence(&system, window, variant, &params)?);
        }
    }

    if scope == Scope::Sweep || (scope == Scope::Analyze && config.sweep.is_some()) {
        let spec = config
            .sweep
            .as_ref()
            .ok_or_else(|| field_err("sweep", "the sweep command needs a sweep specification"))?;
        report.sweep = Some(run_sweep(config, spec)?);
    }

    if config.timestamp {
        report.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    Ok(report)
}

pub fn run_analyze(config: &AnalysisConfig) -> Result<Report> {
    run(config, Scope::Analyze)
}

fn published_threshold(system: &SystemSpec, parameter: &str, concept: Concept) -> Option<PublishedThreshold> {
    if parameter != "c" || !matches!(system, SystemSpec::PaperExample { .. }) {
        return None;
    }
    Some(match concept {
        Concept::Upis => PublishedThreshold {
            statement: "not uniformly power instable for any c > 0".to_string(),
            threshold: None,
        },
        Concept::Pis => PublishedThreshold {
            statement: "power instable if and only if c > 1".to_string(),
            threshold: Some(1.0),
        },
        Concept::Spis => PublishedThreshold {
            statement: "strongly power instable if and only if c > e".to_string(),
            threshold: Some(std::f64::consts::E),
        },
    })
}

fn classify_at(config: &AnalysisConfig, spec: &SweepSpec, value: f64) -> Result<Classification> {
    let system = with_parameter(&config.system, &spec.parameter, value)?.build()?;
    Ok(classify_all(&system, config, &[spec.concept])?.remove(0))
}

/// Classifies along a parameter grid and optionally bisects the
/// not-certified/certified boundary.
pub fn run_sweep(config: &AnalysisConfig, spec: &SweepSpec) -> Result<SweepResult> {
    validate_sweep(&config.system, spec)?;
    let mut points = Vec::new();
    for &v in &spec.grid {
        let class = classify_at(config, spec, v)?;
        points.push(SweepPoint {
            value: v,
            verdict: class.verdict.name().to_string(),
            classification: class,
        });
    }
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    let monotone = sorted
        .windows(2)
        .all(|w| !(w[0].classification.verdict.is_certified() && !w[1].classification.verdict.is_certified()));

    let mut boundary = None;
    let mut refused = None;
    if let Some(bis) = &spec.bisect {
        if !monotone {
            refused = Some("grid verdicts are not monotone in the parameter".to_string());
        } else {
            let lo_c = classify_at(config, spec, bis.lo)?.verdict.is_certified();
            let hi_c = classify_at(config, spec, bis.hi)?.verdict.is_certified();
            if lo_c || !hi_c {
                refused = Some(format!(
                    "bisection needs a non-certified lower end and a certified upper end (lo certified: {lo_c}, hi certified: {hi_c})"
                ));
            } else {
                let (mut lo, mut hi) = (bis.lo, bis.hi);
                let mut evaluations = 2;
                while hi - lo > bis.width {
                    let mid = 0.5 * (lo + hi);
                    evaluations += 1;
                    if classify_at(config, spec, mid)?.verdict.is_certified() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                boundary = Some(Boundary {
                    lo,
                    hi,
                    width: hi - lo,
                    evaluations,
                });
            }
        }
    }

    let published = published_threshold(&config.system, &spec.parameter, spec.concept);
    let agrees = match (&boundary, published.as_ref().and_then(|p| p.threshold)) {
        (Some(b), Some(t)) => Some(b.lo <= t && t <= b.hi),
        _ => None,
    };
    Ok(SweepResult {
        parameter: spec.parameter.clone(),
        concept: spec.concept,
        grid: spec.grid.clone(),
        points,
        monotone,
        boundary,
        bisection_refused: refused,
        published_threshold: published,
        agrees_with_published: agrees,
    })
}

/// Serialized report; deterministic for a given configuration when the
/// timestamp is off.
pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn write_sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from("parameter,value,verdict,a,b,last_l_star\n");
    for p in &sweep.points {
        let last = p.classification.evidence.last().map_or(f64::NAN, |e| e.l_star);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sweep.parameter,
            fmt17(p.value),
            p.verdict,
            fmt17(p.classification.a),
            fmt17(p.classification.b),
            fmt17(last)
        ));
    }
    out
}

/// Writes `report.json` and the CSV sidecars into the configured output
/// directory; returns the written paths.
pub fn write_outputs(config: &AnalysisConfig, report: &Report) -> Result<Vec<PathBuf>> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if config.format != Format::Csv {
        let p = dir.join("report.json");
        fs::write(&p, report_json(report))?;
        written.push(p);
    }
    if config.format != Format::Json {
        if let Some(g) = &report.growth_summary {
            if g.csv.is_some() {
                let system = config.system.build()?;
                let table = TransitionCache::new(&system, g.window)?.growth_table(g.window, g.norm)?;
                let p = dir.join("growth.csv");
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                fs::write(&p, buf)?;
                written.push(p);
            }
        }
        if !report.classifications.is_empty() {
            let p = dir.join("evidence.csv");
            let mut buf = Vec::new();
            write_evidence_csv(&report.classifications, &mut buf)?;
            fs::write(&p, buf)?;
            written.push(p);
        }
        if let Some(s) = &report.sweep {
            let p = dir.join("sweep.csv");
            fs::write(&p, write_sweep_csv(s))?;
            written.push(p);
        }
    }
    Ok(written)
}
