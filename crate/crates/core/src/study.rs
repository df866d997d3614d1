//! Declarative study configs and the end-to-end pipeline that runs them.
//!
//! A study is one TOML document: where the ratings come from, which raters
//! are benchmarks, which item groups feed alpha, which ensembles to build
//! and which item subsets to fit the model on. [`run_study`] executes the
//! stages in order and writes every artifact plus a `manifest.json` listing
//! each file with its SHA-256 digest. Nothing in the output depends on the
//! wall clock, so reruns of the same config give identical manifests.
//!
//! ```toml
//! # Every path is relative to the directory holding this file.
//! output_dir = "out"          # overridden by the CLI's --out or FACETKIT_OUT_DIR
//! seed = 7                    # replaces the seed of a simulated input
//!
//! [input]
//! ratings = "ratings.csv"     # long CSV: person_id,item_id,rater_id,score
//! # simulate = "sim.json"     # ...or simulate the data from a spec instead
//! scale_min = 0               # optional; inferred from the data when absent
//! scale_max = 6
//!
//! [agreement]
//! benchmarks = "R1,R2"
//! candidates = "R1,R2,A1..A10"   # default: every rater
//! per_item = true                # one group per item (default true)
//! items = "SN1_H,ER1_H"          # restrict the per-item groups (default: all)
//! groups = ["holistic:SN1_H,ER1_H"]   # extra pooled groups, `name:ids`
//!
//! [alpha]
//! raters = "R1,R2,A1..A10"       # default: every rater
//! groups = ["holistic:SN1_H,ER1_H,SN2_H,ER2_H"]
//!
//! [[ensembles]]
//! name = "AI11"
//! members = "A1..A10"
//! rounding = "half-away-from-zero"   # or half-to-even
//!
//! [[ensembles]]
//! name = "AI12"
//! base = "AI11"                  # members of an earlier ensemble...
//! drop = "A7"                    # ...minus these
//!
//! [prune]                        # optional greedy leave-worst-out trace
//! members = "A1..A10"
//! steps = 5
//! items = "SN1_H,ER1_H"          # default: every item
//!
//! [[analyses]]                   # one model fit per entry
//! name = "holistic"
//! items = "SN1_H,ER1_H,SN2_H,ER2_H"
//! raters = "R1,R2,A1..A10"       # default: every original rater
//!
//! [estimation]                   # any EstimationConfig field
//! max_iterations = 200
//!
//! [fit]
//! cuts = "0.7,1.3"               # or wide / stringent / high-stakes
//! severity_cut = 0.3
//!
//! [report]
//! wright = "svg"                 # svg also writes the ascii map; or ascii
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{alpha_table, qwk_matrix, ItemGroup};
use crate::ensemble::{build_ensemble, greedy_prune, EnsembleSpec, Rounding};
use crate::error::{Error, Result};
use crate::estimate::{estimate, EstimationConfig, DEFAULT_SEVERITY_CUT};
use crate::fit::{fit_statistics, FitCuts};
use crate::idlist::{parse_id_list, parse_named_group};
use crate::ratings::{ingest_csv, Facet, IngestOptions, RatingsTensor};
use crate::report::{
    descriptive_table, measure_table, write_report, ReportOptions, SortOrder, Statistic,
    WrightFormat, DEFAULT_BUCKET,
};
use crate::simulate::{simulate, SimSpec};

/// Identifier list written either as one string (`"A1..A10,R1"`) or as an
/// array of such strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct IdSpec(pub Vec<String>);

impl<'de> Deserialize<'de> for IdSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(String),
            Many(Vec<String>),
        }
        let parts = match Raw::deserialize(d)? {
            Raw::One(s) => vec![s],
            Raw::Many(v) => v,
        };
        let mut ids = Vec::new();
        for p in parts {
            ids.extend(parse_id_list(&p).map_err(serde::de::Error::custom)?);
        }
        Ok(IdSpec(ids))
    }
}

fn groups<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ItemGroup>, D::Error> {
    Vec::<String>::deserialize(d)?
        .iter()
        .map(|g| {
            parse_named_group(g)
                .map(|(name, items)| ItemGroup::new(name, items))
                .map_err(serde::de::Error::custom)
        })
        .collect()
}

fn cuts<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<FitCuts, D::Error> {
    FitCuts::parse(&String::deserialize(d)?).map_err(serde::de::Error::custom)
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub ratings: Option<PathBuf>,
    pub simulate: Option<PathBuf>,
    pub scale_min: Option<i32>,
    pub scale_max: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementConfig {
    pub benchmarks: IdSpec,
    pub candidates: Option<IdSpec>,
    #[serde(default = "yes")]
    pub per_item: bool,
    pub items: Option<IdSpec>,
    #[serde(default, deserialize_with = "groups")]
    pub groups: Vec<ItemGroup>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaConfig {
    pub raters: Option<IdSpec>,
    #[serde(deserialize_with = "groups")]
    pub groups: Vec<ItemGroup>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub name: String,
    pub members: Option<IdSpec>,
    pub base: Option<String>,
    #[serde(default)]
    pub drop: IdSpec,
    #[serde(default)]
    pub rounding: Option<Rounding>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub members: IdSpec,
    /// Default: the agreement benchmarks.
    pub benchmarks: Option<IdSpec>,
    pub steps: usize,
    pub items: Option<IdSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub name: String,
    pub items: Option<IdSpec>,
    pub raters: Option<IdSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default, deserialize_with = "cuts")]
    pub cuts: FitCuts,
    #[serde(default = "default_severity_cut")]
    pub severity_cut: f64,
}

fn default_severity_cut() -> f64 {
    DEFAULT_SEVERITY_CUT
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            cuts: FitCuts::default(),
            severity_cut: DEFAULT_SEVERITY_CUT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub wright: WrightFormat,
    pub bucket: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub input: InputConfig,
    pub agreement: Option<AgreementConfig>,
    pub alpha: Option<AlphaConfig>,
    #[serde(default)]
    pub ensembles: Vec<EnsembleConfig>,
    pub prune: Option<PruneConfig>,
    #[serde(default)]
    pub analyses: Vec<AnalysisConfig>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match (&self.input.ratings, &self.input.simulate) {
            (Some(_), Some(_)) => {
                return bad("input takes `ratings` or `simulate`, not both".into())
            }
            (None, None) => return bad("input needs `ratings` or `simulate`".into()),
            _ => {}
        }
        self.estimation.validate()?;
        let mut names: Vec<&str> = Vec::new();
        for e in &self.ensembles {
            match (&e.members, &e.base) {
                (Some(_), Some(_)) | (None, None) => {
                    return bad(format!(
                        "ensemble `{}` needs exactly one of `members` or `base`",
                        e.name
                    ))
                }
                (None, Some(b)) if !names.contains(&b.as_str()) => {
                    return bad(format!(
                        "ensemble `{}` builds on `{b}`, which is not defined before it",
                        e.name
                    ))
                }
                _ => {}
            }
            if e.rounding == Some(Rounding::None) {
                return bad(format!(
                    "ensemble `{}`: rounding `none` cannot be stored",
                    e.name
                ));
            }
            if names.contains(&e.name.as_str()) {
                return bad(format!("ensemble `{}` defined twice", e.name));
            }
            names.push(&e.name);
        }
        let mut seen: Vec<&str> = Vec::new();
        for a in &self.analyses {
            let ok = !a.name.is_empty()
                && a.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
                && !a.name.starts_with('.');
            if !ok {
                return bad(format!(
                    "analysis name `{}` is not a plain file name",
                    a.name
                ));
            }
            if seen.contains(&a.name.as_str()) {
                return bad(format!("analysis `{}` defined twice", a.name));
            }
            seen.push(&a.name);
        }
        if let Some(p) = &self.prune {
            if p.benchmarks.is_none() && self.agreement.is_none() {
                return bad("prune needs benchmarks (or an [agreement] section)".into());
            }
        }
        if !(self.fit.severity_cut >= 0.0 && self.fit.severity_cut.is_finite()) {
            return bad("severity_cut must be ≥ 0".into());
        }
        Ok(())
    }

    /// Ensemble specs with every `base` expanded.
    pub fn ensemble_specs(&self) -> Vec<EnsembleSpec> {
        let mut out: Vec<EnsembleSpec> = Vec::new();
        for e in &self.ensembles {
            let spec = match (&e.members, &e.base) {
                (Some(m), _) => {
                    let mut s = EnsembleSpec::new(e.name.clone(), m.0.clone());
                    s.rounding = e.rounding.unwrap_or_default();
                    s.members.retain(|x| !e.drop.0.contains(x));
                    s
                }
                (None, Some(b)) => {
                    let base = out.iter().find(|s| &s.name == b).expect("validated");
                    let mut s = base.without(e.name.clone(), &e.drop.0);
                    if let Some(r) = e.rounding {
                        s.rounding = r;
                    }
                    s
                }
                (None, None) => unreachable!("validated"),
            };
            out.push(spec);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    fn sorted(mut self) -> Self {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self
    }

    pub fn get(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// A failed stage, with whatever was written before it.
#[derive(Debug)]
pub struct StudyError {
    pub stage: &'static str,
    pub source: Error,
    pub manifest: Manifest,
}

impl std::fmt::Display for StudyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StudyError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl StudyError {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "status": "error",
            "stage": self.stage,
            "error": self.source.to_string(),
            "artifacts": self.manifest.artifacts,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative config paths are resolved against.
    pub base_dir: PathBuf,
    /// Takes precedence over the config's `output_dir`.
    pub out_dir: Option<PathBuf>,
    /// Takes precedence over the config's `seed`.
    pub seed: Option<u64>,
}

struct Writer {
    root: PathBuf,
    manifest: Manifest,
}

impl Writer {
    fn put(&mut self, rel: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, body.as_ref())?;
        self.record(rel, body.as_ref());
        Ok(())
    }

    fn record(&mut self, rel: &str, body: &[u8]) {
        self.manifest.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(body)),
            bytes: body.len() as u64,
        });
    }

    /// Record files written by someone else under `rel_dir`.
    fn record_files(&mut self, rel_dir: &str, files: &[PathBuf]) -> Result<()> {
        for f in files {
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let body = fs::read(f)?;
            self.record(&format!("{rel_dir}/{name}"), &body);
        }
        Ok(())
    }

    fn write_manifest(&mut self, status: serde_json::Value) -> Result<()> {
        let manifest = std::mem::take(&mut self.manifest).sorted();
        let mut doc = serde_json::json!({ "artifacts": manifest.artifacts });
        if let (Some(obj), serde_json::Value::Object(extra)) = (doc.as_object_mut(), status) {
            obj.extend(extra);
        }
        self.manifest = manifest;
        fs::write(
            self.root.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&doc)? + "\n",
        )?;
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn resolve_output_dir(config: &StudyConfig, options: &RunOptions) -> PathBuf {
    options
        .out_dir
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| options.base_dir.join(d)))
        .unwrap_or_else(|| options.base_dir.join("facetkit-out"))
}

/// Run every stage of `config`. On success the manifest is returned and
/// written to `manifest.json`; on failure the partial manifest is written
/// with the failing stage and cause.
pub fn run_study(
    config: &StudyConfig,
    options: &RunOptions,
) -> std::result::Result<Manifest, StudyError> {
    let root = resolve_output_dir(config, options);
    let mut w = Writer {
        root,
        manifest: Manifest::default(),
    };
    let mut stage: &'static str = "setup";
    let result = run_stages(config, options, &mut w, &mut stage);
    match result {
        Ok(()) => {
            w.write_manifest(serde_json::json!({ "status": "ok" }))
                .map_err(|e| StudyError {
                    stage: "manifest",
                    source: e,
                    manifest: w.manifest.clone(),
                })?;
            Ok(w.manifest)
        }
        Err(source) => {
            let status = serde_json::json!({
                "status": "error",
                "stage": stage,
                "error": source.to_string(),
            });
            // best effort: the directory may be the thing that failed
            let _ = fs::create_dir_all(&w.root).and_then(|_| {
                w.write_manifest(status)
                    .map_err(|e| std::io::Error::other(e.to_string()))
            });
            Err(StudyError {
                stage,
                source,
                manifest: w.manifest.clone().sorted(),
            })
        }
    }
}

fn run_stages(
    config: &StudyConfig,
    options: &RunOptions,
    w: &mut Writer,
    stage: &mut &'static str,
) -> Result<()> {
    config.validate()?;
    fs::create_dir_all(&w.root)?;

    *stage = "ingest";
    let tensor = load_input(config, options)?;
    w.put("tensor.json", tensor.to_json()? + "\n")?;
    let original_raters: Vec<String> = tensor.ids().raters().to_vec();

    *stage = "descriptives";
    let desc = descriptive_table(&tensor);
    w.put("descriptives.csv", desc.to_csv()?)?;
    w.put("descriptive_means.csv", desc.to_wide_csv(Statistic::Mean)?)?;
    w.put("descriptive_sds.csv", desc.to_wide_csv(Statistic::Sd)?)?;

    let agreement_groups = |t: &RatingsTensor, a: &AgreementConfig| -> Result<Vec<ItemGroup>> {
        let mut g = Vec::new();
        if a.per_item {
            match &a.items {
                Some(items) => {
                    t.ids().resolve(Facet::Item, &items.0)?;
                    g.extend(
                        items
                            .0
                            .iter()
                            .map(|i| ItemGroup::new(i.clone(), vec![i.clone()])),
                    );
                }
                None => g.extend(ItemGroup::per_item(t)),
            }
        }
        g.extend(a.groups.iter().cloned());
        Ok(g)
    };

    if let Some(a) = &config.agreement {
        *stage = "agreement";
        let candidates = a.candidates.as_ref().map_or(&original_raters, |c| &c.0);
        let table = qwk_matrix(
            &tensor,
            &a.benchmarks.0,
            candidates,
            &agreement_groups(&tensor, a)?,
        )?;
        w.put("agreement.csv", table.to_csv()?)?;
        w.put("agreement_wide.csv", table.to_wide_csv()?)?;
        w.put("agreement.json", json(&table)?)?;
    }

    if let Some(a) = &config.alpha {
        *stage = "alpha";
        let raters = a.raters.as_ref().map_or(&original_raters, |r| &r.0);
        let table = alpha_table(&tensor, raters, &a.groups)?;
        w.put("alpha.csv", table.to_csv()?)?;
        w.put("alpha.json", json(&table)?)?;
    }

    let mut augmented = tensor.clone();
    if !config.ensembles.is_empty() {
        *stage = "ensembles";
        let specs = config.ensemble_specs();
        for spec in &specs {
            augmented = build_ensemble(&augmented, spec)?;
        }
        w.put("ensembles.json", json(&specs)?)?;
        w.put("ensemble_tensor.json", augmented.to_json()? + "\n")?;
        if let Some(a) = &config.agreement {
            let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
            let table = qwk_matrix(
                &augmented,
                &a.benchmarks.0,
                &names,
                &agreement_groups(&augmented, a)?,
            )?;
            w.put("ensemble_agreement.csv", table.to_csv()?)?;
            w.put("ensemble_agreement_wide.csv", table.to_wide_csv()?)?;
            w.put("ensemble_agreement.json", json(&table)?)?;
        }
    }

    if let Some(p) = &config.prune {
        *stage = "prune";
        let benchmarks = match (&p.benchmarks, &config.agreement) {
            (Some(b), _) => &b.0,
            (None, Some(a)) => &a.benchmarks.0,
            (None, None) => unreachable!("validated"),
        };
        let items = p.items.as_ref().map_or(&[][..], |i| &i.0[..]);
        let trace = greedy_prune(&tensor, &p.members.0, benchmarks, items, p.steps)?;
        w.put("prune_trace.csv", trace.to_csv()?)?;
        w.put("prune_trace.json", json(&trace)?)?;
    }

    let report_options = ReportOptions {
        wright: config.report.wright,
        bucket: config.report.bucket.unwrap_or(DEFAULT_BUCKET),
        cuts: config.fit.cuts,
        severity_cut: config.fit.severity_cut,
        sort: SortOrder::ByMeasure,
    };
    for a in &config.analyses {
        *stage = "estimate";
        let raters = a.raters.as_ref().map_or(&original_raters, |r| &r.0);
        let sub = augmented.slice(None, a.items.as_ref().map(|i| &i.0[..]), Some(&raters[..]))?;
        let est = estimate(&sub, &config.estimation)?;
        let dir = format!("analyses/{}", a.name);
        w.put(&format!("{dir}/estimates.json"), est.to_json()? + "\n")?;

        *stage = "fit";
        for (facet, name) in [
            (Facet::Rater, "raters"),
            (Facet::Item, "items"),
            (Facet::Person, "persons"),
        ] {
            let fit = fit_statistics(&sub, &est, facet)?.with_cuts(config.fit.cuts);
            let table = measure_table(&est, &fit, SortOrder::ByMeasure, config.fit.severity_cut)?;
            w.put(&format!("{dir}/fit_{name}.csv"), table.to_csv()?)?;
            w.put(&format!("{dir}/fit_{name}.json"), table.to_json()? + "\n")?;
        }

        *stage = "report";
        let report_dir = format!("{dir}/report");
        let files = write_report(&w.root.join(&report_dir), &sub, &est, &report_options)?;
        w.record_files(&report_dir, &files)?;
    }
    Ok(())
}

fn load_input(config: &StudyConfig, options: &RunOptions) -> Result<RatingsTensor> {
    let input = &config.input;
    let opts = IngestOptions {
        scale_min: input.scale_min,
        scale_max: input.scale_max,
    };
    if let Some(path) = &input.ratings {
        return ingest_csv(options.base_dir.join(path), opts);
    }
    let path = input.simulate.as_ref().expect("validated");
    let mut spec: SimSpec =
        serde_json::from_str(&fs::read_to_string(options.base_dir.join(path))?)?;
    if let Some(seed) = options.seed.or(config.seed) {
        spec.seed = seed;
    }
    if let (Some(lo), Some(hi)) = (input.scale_min, input.scale_max) {
        if (lo, hi) != (spec.scale.min_score(), spec.scale.max_score()) {
            return Err(Error::InvalidConfig(format!(
                "declared scale {lo}..={hi} differs from the simulation spec"
            )));
        }
    }
    Ok(simulate(&spec)?.0)
}
