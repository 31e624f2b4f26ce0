//! JSON experiment specs, their execution, and run manifests with output
//! digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concentration::{
    a1_diagnostic, assumption_diagnostics, lindeberg_check, moment_check_t1_t2_scaling,
    moment_check_t5, moment_check_t6_scaling, prop1_battery, t5_battery, A1Report,
    BoundCheckReport, DiagnosticsReport, ScalingReport, T6ScalingReport, TestMatrixFamily,
    TruncationLevel,
};
use crate::ensembles::{EnsembleConfig, EntryLaw, IidModel};
use crate::lemmas::{fuzz_lemmas, FuzzOptions, FuzzSummary, LemmaId};
use crate::linalg::UpperHalfPoint;
use crate::spectra::{
    default_z_grid, universality_experiment, UniversalityReport, UniversalitySpec,
};
use crate::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SPEC_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn default_ks_max() -> f64 {
    0.05
}

fn default_gap_max() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

/// Pass thresholds for ladder experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderCriteria {
    /// Largest allowed top-rung mean KS distance to the MP law.
    #[serde(default = "default_ks_max")]
    pub ks_max: f64,
    /// Largest allowed top-rung mean of the maximal Stieltjes gap.
    #[serde(default = "default_gap_max")]
    pub gap_max: f64,
    /// Require strict decrease rung to rung instead of first versus last.
    #[serde(default = "default_true")]
    pub monotone: bool,
}

impl Default for LadderCriteria {
    fn default() -> Self {
        Self {
            ks_max: default_ks_max(),
            gap_max: default_gap_max(),
            monotone: true,
        }
    }
}

/// One entry of a concentration battery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConcentrationCheck {
    /// The fixed 50-instance probability-bound battery.
    Prop1Battery {},
    /// The 50-matrix Rademacher second-moment battery.
    T5Battery {},
    MomentScaling {
        laws: Vec<EntryLaw>,
        sizes: Vec<usize>,
    },
    TruncatedScaling {
        laws: Vec<EntryLaw>,
        sizes: Vec<usize>,
        b: TruncationLevel,
    },
    A1 {
        model: IidModel,
        family: TestMatrixFamily,
        eps: Vec<f64>,
        ladder: Vec<usize>,
        /// Set for negative controls, which pass when flagged.
        #[serde(default)]
        expect_flag: bool,
    },
    Lindeberg {
        laws: Vec<EntryLaw>,
        eps: f64,
        ladder: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the working directory.
    pub dir: PathBuf,
    /// Dump one CSV of eigenvalues per replica and side.
    #[serde(default = "default_true")]
    pub eigenvalues: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Universality {
        version: u32,
        seed: u64,
        replicas: usize,
        ensemble: EnsembleConfig,
        ladder: Vec<(usize, usize)>,
        #[serde(default)]
        grid: Option<Vec<UpperHalfPoint>>,
        #[serde(default)]
        criteria: LadderCriteria,
        output: OutputSpec,
    },
    MpConvergence {
        version: u32,
        seed: u64,
        replicas: usize,
        ensemble: EnsembleConfig,
        ladder: Vec<(usize, usize)>,
        #[serde(default)]
        criteria: LadderCriteria,
        output: OutputSpec,
    },
    ConcentrationBattery {
        version: u32,
        seed: u64,
        replicas: usize,
        checks: Vec<ConcentrationCheck>,
        output: OutputSpec,
    },
    LemmaFuzz {
        version: u32,
        seed: u64,
        /// Instances per lemma.
        replicas: usize,
        #[serde(default)]
        lemmas: Option<Vec<LemmaId>>,
        #[serde(default)]
        options: Option<FuzzOptions>,
        output: OutputSpec,
    },
    AssumptionDiagnostics {
        version: u32,
        seed: u64,
        /// Independent realizations per rung.
        replicas: usize,
        ensemble: EnsembleConfig,
        ladder: Vec<(usize, usize)>,
        eps: f64,
        /// Diagnostics that must be flagged (negative controls). Empty means
        /// no diagnostic may be flagged.
        #[serde(default)]
        expect_flagged: Vec<String>,
        output: OutputSpec,
    },
}

fn field_err(field: &str, message: impl Into<String>) -> Error {
    Error::SpecValidation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn wrap(field: &str, e: Error) -> Error {
    match e {
        Error::SpecValidation { .. } => e,
        other => field_err(field, other.to_string()),
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Universality { .. } => "universality",
            ExperimentSpec::MpConvergence { .. } => "mp-convergence",
            ExperimentSpec::ConcentrationBattery { .. } => "concentration-battery",
            ExperimentSpec::LemmaFuzz { .. } => "lemma-fuzz",
            ExperimentSpec::AssumptionDiagnostics { .. } => "assumption-diagnostics",
        }
    }

    fn common(&self) -> (u32, u64, usize, &OutputSpec) {
        match self {
            ExperimentSpec::Universality {
                version,
                seed,
                replicas,
                output,
                ..
            }
            | ExperimentSpec::MpConvergence {
                version,
                seed,
                replicas,
                output,
                ..
            }
            | ExperimentSpec::ConcentrationBattery {
                version,
                seed,
                replicas,
                output,
                ..
            }
            | ExperimentSpec::LemmaFuzz {
                version,
                seed,
                replicas,
                output,
                ..
            }
            | ExperimentSpec::AssumptionDiagnostics {
                version,
                seed,
                replicas,
                output,
                ..
            } => (*version, *seed, *replicas, output),
        }
    }

    pub fn output(&self) -> &OutputSpec {
        self.common().3
    }

    /// Hex SHA-256 of the canonical re-serialization.
    pub fn spec_hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("spec serializes"),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let (version, _, replicas, output) = self.common();
        if version != SPEC_VERSION {
            return Err(field_err(
                "version",
                format!("unsupported spec version {version}, expected {SPEC_VERSION}"),
            ));
        }
        if replicas == 0 {
            return Err(field_err("replicas", "must be >= 1"));
        }
        if output.dir.as_os_str().is_empty() {
            return Err(field_err("output.dir", "must be non-empty"));
        }
        match self {
            ExperimentSpec::Universality { .. } | ExperimentSpec::MpConvergence { .. } => self
                .universality_spec()?
                .validate()
                .map_err(|e| wrap("ladder", e)),
            ExperimentSpec::ConcentrationBattery {
                checks, replicas, ..
            } => {
                if checks.is_empty() {
                    return Err(field_err("checks", "must be non-empty"));
                }
                for (i, c) in checks.iter().enumerate() {
                    let field = format!("checks[{i}]");
                    match c {
                        ConcentrationCheck::MomentScaling { laws, sizes }
                        | ConcentrationCheck::TruncatedScaling { laws, sizes, .. } => {
                            if laws.is_empty() || sizes.len() < 2 {
                                return Err(field_err(
                                    &field,
                                    "needs at least one law and two sizes",
                                ));
                            }
                            for law in laws {
                                law.validate().map_err(|e| wrap(&field, e))?;
                            }
                        }
                        ConcentrationCheck::A1 {
                            family,
                            eps,
                            ladder,
                            ..
                        } => {
                            family.validate().map_err(|e| wrap(&field, e))?;
                            if eps.is_empty() || ladder.is_empty() {
                                return Err(field_err(&field, "eps and ladder must be non-empty"));
                            }
                            if *replicas < 100 {
                                return Err(field_err(
                                    "replicas",
                                    "a1 checks need at least 100 replicas",
                                ));
                            }
                        }
                        ConcentrationCheck::Lindeberg { laws, eps, ladder } => {
                            if laws.is_empty() || ladder.is_empty() || !(*eps > 0.0) {
                                return Err(field_err(&field, "needs laws, a ladder and eps > 0"));
                            }
                        }
                        ConcentrationCheck::Prop1Battery {} | ConcentrationCheck::T5Battery {} => {
                            if *replicas < 2 {
                                return Err(field_err(
                                    "replicas",
                                    "batteries need at least 2 replicas",
                                ));
                            }
                        }
                    }
                }
                Ok(())
            }
            ExperimentSpec::LemmaFuzz {
                options, lemmas, ..
            } => {
                if let Some(o) = options {
                    o.validate().map_err(|e| wrap("options", e))?;
                }
                if lemmas.as_ref().is_some_and(|l| l.is_empty()) {
                    return Err(field_err("lemmas", "must be non-empty when given"));
                }
                Ok(())
            }
            ExperimentSpec::AssumptionDiagnostics {
                ensemble,
                ladder,
                eps,
                ..
            } => {
                ensemble.validate().map_err(|e| wrap("ensemble", e))?;
                if ladder.is_empty() || ladder.iter().any(|&(p, n)| p == 0 || n == 0) {
                    return Err(field_err("ladder", "must be non-empty with positive sizes"));
                }
                if !(*eps > 0.0) {
                    return Err(field_err("eps", "must be positive"));
                }
                Ok(())
            }
        }
    }

    fn universality_spec(&self) -> Result<UniversalitySpec> {
        match self {
            ExperimentSpec::Universality {
                seed,
                replicas,
                ensemble,
                ladder,
                grid,
                ..
            } => {
                let grid = match grid {
                    Some(g) => g.clone(),
                    None => vec![UpperHalfPoint::i()],
                };
                Ok(UniversalitySpec {
                    ensemble: ensemble.clone(),
                    ladder: ladder.clone(),
                    grid,
                    replicas: *replicas,
                    seed: *seed,
                    compare_mp: false,
                })
            }
            ExperimentSpec::MpConvergence {
                seed,
                replicas,
                ensemble,
                ladder,
                ..
            } => {
                let (p, n) = *ladder
                    .first()
                    .ok_or_else(|| field_err("ladder", "ladder is empty"))?;
                Ok(UniversalitySpec {
                    ensemble: ensemble.clone(),
                    ladder: ladder.clone(),
                    grid: default_z_grid(p as f64 / n.max(1) as f64)
                        .map_err(|e| wrap("ladder", e))?,
                    replicas: *replicas,
                    seed: *seed,
                    compare_mp: true,
                })
            }
            _ => Err(Error::InvalidParameter("not a ladder experiment".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub spec_hash: String,
    pub toolkit_version: String,
    pub pass: bool,
    pub outputs: Vec<OutputDigest>,
    pub wall_time_seconds: f64,
}

/// Files produced by a run, keyed by path relative to the output directory.
#[derive(Default)]
struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.files.insert(name.to_string(), text);
        Ok(())
    }

    fn text(&mut self, name: &str, body: String) {
        self.files.insert(name.to_string(), body.into_bytes());
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Report of a ladder experiment with its evaluated criteria.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderOutcome {
    pub report: UniversalityReport,
    pub criteria: LadderCriteria,
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn trend(v: &[f64], monotone: bool) -> bool {
    if monotone {
        strictly_decreasing(v)
    } else {
        v.last() < v.first()
    }
}

fn run_ladder(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<(bool, String)> {
    let u = spec.universality_spec()?;
    let mp_side = matches!(spec, ExperimentSpec::MpConvergence { .. });
    let (criteria, output) = match spec {
        ExperimentSpec::Universality {
            criteria, output, ..
        }
        | ExperimentSpec::MpConvergence {
            criteria, output, ..
        } => (criteria.clone(), output),
        _ => unreachable!("ladder kinds only"),
    };
    let report = universality_experiment(&u)?;
    if output.eigenvalues {
        for rung in &report.ladder {
            for (r, (sy, sz)) in rung.spectra.iter().enumerate() {
                art.text(
                    &format!("eigenvalues/p{}_n{}_r{r}_y.csv", rung.p, rung.n),
                    sy.to_csv(),
                );
                if !mp_side {
                    art.text(
                        &format!("eigenvalues/p{}_n{}_r{r}_z.csv", rung.p, rung.n),
                        sz.to_csv(),
                    );
                }
            }
        }
    }
    let mut checks = BTreeMap::new();
    if mp_side {
        let ks: Vec<f64> = report
            .ladder
            .iter()
            .filter_map(|r| r.ks_mp.map(|m| m.mean))
            .collect();
        checks.insert(
            "ks_top_below_max".to_string(),
            ks.last().is_some_and(|&v| v <= criteria.ks_max),
        );
        checks.insert("ks_decreasing".to_string(), trend(&ks, criteria.monotone));
    } else {
        let gaps: Vec<f64> = report.ladder.iter().map(|r| r.max_gap.mean).collect();
        checks.insert(
            "gap_top_below_max".to_string(),
            gaps.last().is_some_and(|&v| v <= criteria.gap_max),
        );
        checks.insert(
            "gap_decreasing".to_string(),
            trend(&gaps, criteria.monotone),
        );
    }
    let pass = checks.values().all(|&b| b);
    let mut summary = String::from(if mp_side {
        "p\tn\tks_mean\tks_se\n"
    } else {
        "p\tn\tmax_gap_mean\tmax_gap_se\n"
    });
    for rung in &report.ladder {
        let stat = if mp_side {
            rung.ks_mp.unwrap_or(rung.max_gap)
        } else {
            rung.max_gap
        };
        summary.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\n",
            rung.p, rung.n, stat.mean, stat.se
        ));
    }
    for (name, ok) in &checks {
        summary.push_str(&format!("{name}: {}\n", if *ok { "pass" } else { "FAIL" }));
    }
    art.json(
        "report.json",
        &LadderOutcome {
            report,
            criteria,
            checks,
            pass,
        },
    )?;
    Ok((pass, summary))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum ConcentrationOutcome {
    Prop1Battery {
        instances: usize,
        failures: usize,
        pass: bool,
    },
    T5Battery {
        instances: usize,
        failures: usize,
        pass: bool,
    },
    MomentScaling {
        reports: Vec<ScalingReport>,
        pass: bool,
    },
    TruncatedScaling {
        reports: Vec<T6ScalingReport>,
        pass: bool,
    },
    A1 {
        report: A1Report,
        expect_flag: bool,
        pass: bool,
    },
    Lindeberg {
        eps: f64,
        ladder: Vec<usize>,
        values: Vec<(EntryLaw, Vec<f64>)>,
    },
}

impl ConcentrationOutcome {
    fn pass(&self) -> bool {
        match self {
            ConcentrationOutcome::Prop1Battery { pass, .. }
            | ConcentrationOutcome::T5Battery { pass, .. }
            | ConcentrationOutcome::MomentScaling { pass, .. }
            | ConcentrationOutcome::TruncatedScaling { pass, .. }
            | ConcentrationOutcome::A1 { pass, .. } => *pass,
            ConcentrationOutcome::Lindeberg { .. } => true,
        }
    }
}

fn run_concentration(
    checks: &[ConcentrationCheck],
    replicas: usize,
    seed: u64,
    art: &mut Artifacts,
) -> Result<(bool, String)> {
    let mut lines: Vec<BoundCheckReport> = Vec::new();
    let mut outcomes = Vec::new();
    for (i, check) in checks.iter().enumerate() {
        let seed = crate::rng::derive_id(&[seed, i as u64]);
        let outcome = match check {
            ConcentrationCheck::Prop1Battery {} => {
                let reports = prop1_battery()
                    .iter()
                    .enumerate()
                    .map(|(k, inst)| inst.run(replicas, crate::rng::derive_id(&[seed, k as u64])))
                    .collect::<Result<Vec<_>>>()?;
                let failures = reports.iter().filter(|r| !r.pass).count();
                let instances = reports.len();
                lines.extend(reports);
                ConcentrationOutcome::Prop1Battery {
                    instances,
                    failures,
                    pass: failures == 0,
                }
            }
            ConcentrationCheck::T5Battery {} => {
                let law = EntryLaw::Rademacher {};
                let reports = t5_battery(seed)?
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        moment_check_t5(
                            &law,
                            a,
                            1.0,
                            replicas,
                            crate::rng::derive_id(&[seed, k as u64]),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let failures = reports.iter().filter(|r| !r.pass).count();
                let instances = reports.len();
                lines.extend(reports);
                ConcentrationOutcome::T5Battery {
                    instances,
                    failures,
                    pass: failures == 0,
                }
            }
            ConcentrationCheck::MomentScaling { laws, sizes } => {
                let reports = laws
                    .iter()
                    .map(|l| moment_check_t1_t2_scaling(l, sizes, replicas, seed))
                    .collect::<Result<Vec<_>>>()?;
                let pass = reports.iter().all(|r| r.pass);
                ConcentrationOutcome::MomentScaling { reports, pass }
            }
            ConcentrationCheck::TruncatedScaling { laws, sizes, b } => {
                let reports = laws
                    .iter()
                    .map(|l| moment_check_t6_scaling(l, sizes, *b, replicas, seed))
                    .collect::<Result<Vec<_>>>()?;
                for r in &reports {
                    lines.extend(r.checks.iter().cloned());
                }
                let pass = reports.iter().all(|r| r.pass);
                ConcentrationOutcome::TruncatedScaling { reports, pass }
            }
            ConcentrationCheck::A1 {
                model,
                family,
                eps,
                ladder,
                expect_flag,
            } => {
                let report = a1_diagnostic(model, family, eps, ladder, replicas, seed)?;
                let pass = report.flagged == *expect_flag;
                ConcentrationOutcome::A1 {
                    report,
                    expect_flag: *expect_flag,
                    pass,
                }
            }
            ConcentrationCheck::Lindeberg { laws, eps, ladder } => {
                let values = laws
                    .iter()
                    .map(|l| {
                        Ok((
                            l.clone(),
                            ladder
                                .iter()
                                .map(|&p| lindeberg_check(l, *eps, p))
                                .collect::<Result<Vec<_>>>()?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ConcentrationOutcome::Lindeberg {
                    eps: *eps,
                    ladder: ladder.clone(),
                    values,
                }
            }
        };
        outcomes.push(outcome);
    }
    let pass = outcomes.iter().all(|o| o.pass());
    let mut jsonl = String::new();
    for r in &lines {
        jsonl.push_str(&r.to_json_line());
        jsonl.push('\n');
    }
    art.text("bounds.jsonl", jsonl);
    let mut summary = String::new();
    for (c, o) in checks.iter().zip(&outcomes) {
        let name = serde_json::to_value(c)?
            .get("check")
            .and_then(|v| v.as_str())
            .unwrap_or("check")
            .to_string();
        let detail = match o {
            ConcentrationOutcome::Prop1Battery {
                instances,
                failures,
                ..
            }
            | ConcentrationOutcome::T5Battery {
                instances,
                failures,
                ..
            } => {
                format!(" ({failures}/{instances} failing)")
            }
            ConcentrationOutcome::A1 { report, .. } => format!(" (flagged: {})", report.flagged),
            ConcentrationOutcome::MomentScaling { reports, .. } => {
                let growth = reports
                    .iter()
                    .flat_map(|r| r.statistics.iter().map(|t| t.growth))
                    .fold(0.0, f64::max);
                format!(" (largest top/bottom ratio {growth:.3})")
            }
            ConcentrationOutcome::TruncatedScaling { reports, .. } => {
                let growth = reports.iter().map(|r| r.trend.growth).fold(0.0, f64::max);
                format!(" (largest top/bottom ratio {growth:.3})")
            }
            _ => String::new(),
        };
        summary.push_str(&format!(
            "{name}: {}{detail}\n",
            if o.pass() { "pass" } else { "FAIL" }
        ));
    }
    art.json(
        "report.json",
        &serde_json::json!({ "checks": outcomes, "pass": pass }),
    )?;
    Ok((pass, summary))
}

fn run_fuzz(
    lemmas: &Option<Vec<LemmaId>>,
    options: &Option<FuzzOptions>,
    count: usize,
    seed: u64,
    art: &mut Artifacts,
) -> Result<(bool, String)> {
    let ids = lemmas.clone().unwrap_or_else(|| LemmaId::ALL.to_vec());
    let opts = options.clone().unwrap_or_default();
    let summary: FuzzSummary = fuzz_lemmas(&ids, count, &opts, seed)?;
    let pass = summary.total_failures() == 0;
    let mut text = String::from("lemma\tinstances\tfailures\tmin_margin\n");
    for l in &summary.lemmas {
        text.push_str(&format!(
            "{}\t{}\t{}\t{:.3e}\n",
            l.lemma, l.instances, l.failures, l.min_margin
        ));
    }
    art.json("failures.json", &summary.failing)?;
    art.json("report.json", &serde_json::json!({ "lemmas": summary.lemmas, "seed": seed, "count": count, "options": opts, "pass": pass }))?;
    Ok((pass, text))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsOutcome {
    pub report: DiagnosticsReport,
    pub expect_flagged: Vec<String>,
    pub pass: bool,
}

fn run_diagnostics(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<(bool, String)> {
    let ExperimentSpec::AssumptionDiagnostics {
        seed,
        replicas,
        ensemble,
        ladder,
        eps,
        expect_flagged,
        ..
    } = spec
    else {
        unreachable!("diagnostics kind only")
    };
    let report = assumption_diagnostics(ensemble, ladder, *replicas, *eps, *seed)?;
    let mut expected = expect_flagged.clone();
    expected.sort();
    let mut got = report.flagged.clone();
    got.sort();
    // Clean models must raise no flag; negative controls must raise at
    // least the listed ones.
    let pass = if expected.is_empty() {
        got.is_empty()
    } else {
        expected.iter().all(|e| got.contains(e))
    };
    let summary = format!(
        "flagged: [{}], expected: [{}]\n",
        got.join(", "),
        expected.join(", ")
    );
    art.json(
        "report.json",
        &DiagnosticsOutcome {
            report,
            expect_flagged: expect_flagged.clone(),
            pass,
        },
    )?;
    Ok((pass, summary))
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub pass: bool,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Plain-text table for terminal output.
    pub summary: String,
}

/// Executes `spec`, writing all artifacts and `manifest.json` under
/// `out_dir` (or the spec's own output directory).
pub fn run(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<RunOutcome> {
    spec.validate()?;
    let start = Instant::now();
    let (_, seed, replicas, output) = spec.common();
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| output.dir.clone());
    let mut art = Artifacts::default();
    art.json("spec.json", spec)?;
    let (pass, summary) = match spec {
        ExperimentSpec::Universality { .. } | ExperimentSpec::MpConvergence { .. } => {
            run_ladder(spec, &mut art)?
        }
        ExperimentSpec::ConcentrationBattery { checks, .. } => {
            run_concentration(checks, replicas, seed, &mut art)?
        }
        ExperimentSpec::LemmaFuzz {
            lemmas, options, ..
        } => run_fuzz(lemmas, options, replicas, seed, &mut art)?,
        ExperimentSpec::AssumptionDiagnostics { .. } => run_diagnostics(spec, &mut art)?,
    };
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    for (name, bytes) in &art.files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        outputs.push(OutputDigest {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        kind: spec.kind().to_string(),
        spec_hash: spec.spec_hash(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        pass,
        outputs,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(RunOutcome {
        pass,
        dir,
        manifest,
        summary,
    })
}

/// One digest that no longer matches the file on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DigestMismatch {
    pub path: String,
    pub expected: String,
    /// `None` when the file is missing.
    pub actual: Option<String>,
}

/// Recomputes every digest listed in `dir/manifest.json`.
pub fn verify_manifest(dir: &Path) -> Result<Vec<DigestMismatch>> {
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut bad = Vec::new();
    for out in &manifest.outputs {
        let actual = fs::read(dir.join(&out.path)).ok().map(|b| sha256_hex(&b));
        if actual.as_deref() != Some(out.sha256.as_str()) {
            bad.push(DigestMismatch {
                path: out.path.clone(),
                expected: out.sha256.clone(),
                actual,
            });
        }
    }
    Ok(bad)
}
