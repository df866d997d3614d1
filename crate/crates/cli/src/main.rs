use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use facetkit_core::agreement::{alpha_table, qwk_matrix, ItemGroup};
use facetkit_core::ensemble::{build_ensemble, greedy_prune, EnsembleSpec, Rounding};
use facetkit_core::estimate::DEFAULT_SEVERITY_CUT;
use facetkit_core::fit::{fit_statistics, FitCuts};
use facetkit_core::idlist::{parse_id_list, parse_named_group};
use facetkit_core::ratings::{ingest_csv, IngestOptions};
use facetkit_core::report::{
    measure_table, write_report, ReportOptions, SortOrder, WrightFormat, DEFAULT_BUCKET,
};
use facetkit_core::simulate::{simulate, SimSpec};
use facetkit_core::study::{run_study, RunOptions, StudyConfig};
use facetkit_core::{estimate, EstimationConfig, Facet, FacetEstimates, RatingsTensor};

/// Rater-effects analysis for person × item × rater score data.
#[derive(Parser)]
#[command(name = "facetkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a long-format ratings CSV and write the tensor document.
    Ingest {
        file: PathBuf,
        #[command(flatten)]
        scale: ScaleArgs,
        /// Output path (.json or .csv); stdout JSON when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted kappa of candidate raters against benchmark raters.
    Agree {
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long, value_parser = id_list)]
        benchmarks: IdList,
        /// Default: every rater.
        #[arg(long, value_parser = id_list)]
        candidates: Option<IdList>,
        /// One group per item.
        #[arg(long)]
        per_item: bool,
        /// Restrict the per-item groups to these items.
        #[arg(long, value_parser = id_list)]
        items: Option<IdList>,
        /// Pooled item group `name:ids`; repeatable.
        #[arg(long = "group", value_parser = named_group)]
        groups: Vec<ItemGroup>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cronbach alpha per rater and item group.
    Alpha {
        #[command(flatten)]
        input: TensorArgs,
        /// Item group `name:ids`; repeatable or comma-free list of groups.
        #[arg(long = "groups", value_parser = named_group, required = true, num_args = 1..)]
        groups: Vec<ItemGroup>,
        /// Default: every rater.
        #[arg(long, value_parser = id_list)]
        raters: Option<IdList>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the rating-scale many-facet model.
    Estimate {
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        residual_tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        extreme_adjust: Option<f64>,
        #[arg(long)]
        logit_clamp: Option<f64>,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infit/outfit mean squares and flags for one facet.
    Fit {
        estimates: PathBuf,
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long, value_enum, default_value_t = FacetArg::Rater)]
        facet: FacetArg,
        /// `lower,upper`, or wide / stringent / high-stakes.
        #[arg(long, value_parser = fit_cuts, default_value = "0.7,1.3")]
        cuts: FitCuts,
        #[arg(long, default_value_t = DEFAULT_SEVERITY_CUT)]
        severity_cut: f64,
        #[arg(long, value_enum, default_value_t = SortArg::ByMeasure)]
        sort: SortArg,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add an averaged ensemble rater to a tensor.
    Ensemble {
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long, value_parser = id_list)]
        members: IdList,
        #[arg(long)]
        name: String,
        #[arg(long = "round", value_parser = rounding, default_value = "half-away")]
        rounding: Rounding,
        /// Output tensor (.json or .csv); stdout JSON when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy leave-worst-out pruning of an ensemble.
    Prune {
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long, value_parser = id_list)]
        members: IdList,
        #[arg(long, value_parser = id_list)]
        benchmarks: IdList,
        #[arg(long)]
        steps: usize,
        /// Default: every item.
        #[arg(long, value_parser = id_list)]
        items: Option<IdList>,
        /// Trace CSV; stdout when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sample ratings from the model.
    Simulate {
        /// JSON simulation spec; the built-in 30 × 4 × 12 design when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output tensor (.csv or .json); stdout CSV when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the generating parameters.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Wright maps, measure tables and descriptives for one fit.
    Report {
        estimates: PathBuf,
        #[command(flatten)]
        input: TensorArgs,
        #[arg(long, value_enum, default_value_t = WrightArg::Svg)]
        wright: WrightArg,
        #[arg(long, default_value_t = DEFAULT_BUCKET)]
        bucket: f64,
        #[arg(long, value_parser = fit_cuts, default_value = "0.7,1.3")]
        cuts: FitCuts,
        #[arg(long, default_value_t = DEFAULT_SEVERITY_CUT)]
        severity_cut: f64,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Run a whole study from a TOML config.
    Run {
        config: PathBuf,
        /// Output directory; beats the config's `output_dir`.
        #[arg(long, env = "FACETKIT_OUT_DIR")]
        out: Option<PathBuf>,
        /// Seed for a simulated input; beats the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

type IdList = Vec<String>;

fn id_list(s: &str) -> Result<IdList, String> {
    parse_id_list(s).map_err(|e| e.to_string())
}

fn named_group(s: &str) -> Result<ItemGroup, String> {
    parse_named_group(s)
        .map(|(n, items)| ItemGroup::new(n, items))
        .map_err(|e| e.to_string())
}

fn fit_cuts(s: &str) -> Result<FitCuts, String> {
    FitCuts::parse(s).map_err(|e| e.to_string())
}

fn rounding(s: &str) -> Result<Rounding, String> {
    s.parse().map_err(|e: facetkit_core::Error| e.to_string())
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long)]
    scale_min: Option<i32>,
    #[arg(long)]
    scale_max: Option<i32>,
}

impl ScaleArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            scale_min: self.scale_min,
            scale_max: self.scale_max,
        }
    }
}

#[derive(Args)]
struct TensorArgs {
    /// Tensor document (.json) or ratings CSV.
    tensor: PathBuf,
    #[command(flatten)]
    scale: ScaleArgs,
}

impl TensorArgs {
    fn load(&self) -> Result<RatingsTensor> {
        load_tensor(&self.tensor, self.scale.options())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Wide,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FacetArg {
    Person,
    Item,
    Rater,
}

impl From<FacetArg> for Facet {
    fn from(f: FacetArg) -> Self {
        match f {
            FacetArg::Person => Facet::Person,
            FacetArg::Item => Facet::Item,
            FacetArg::Rater => Facet::Rater,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SortArg {
    ByMeasure,
    ById,
}

#[derive(Clone, Copy, ValueEnum)]
enum WrightArg {
    Ascii,
    Svg,
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn load_tensor(path: &Path, options: IngestOptions) -> Result<RatingsTensor> {
    if is_json(path) {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t = RatingsTensor::from_json(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        if options.scale_min.is_some() || options.scale_max.is_some() {
            log::warn!("--scale-min/--scale-max ignored for a tensor document");
        }
        Ok(t)
    } else {
        ingest_csv(path, options).with_context(|| format!("ingesting {}", path.display()))
    }
}

fn load_estimates(path: &Path) -> Result<FacetEstimates> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    FacetEstimates::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, body).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn tensor_body(t: &RatingsTensor, out: Option<&Path>, default_json: bool) -> Result<String> {
    let json = out.map_or(default_json, is_json);
    Ok(if json {
        t.to_json()? + "\n"
    } else {
        t.to_csv_string()
    })
}

fn json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { file, scale, out } => {
            let t = ingest_csv(&file, scale.options())
                .with_context(|| format!("ingesting {}", file.display()))?;
            let (np, ni, nr) = t.dims();
            eprintln!(
                "{} observations ({} missing), {np} persons × {ni} items × {nr} raters, scale {}..={}, {}",
                t.len(),
                t.missing_count(),
                t.scale().min_score(),
                t.scale().max_score(),
                if t.is_connected() { "connected" } else { "disconnected" }
            );
            emit(out.as_deref(), &tensor_body(&t, out.as_deref(), true)?)?;
        }
        Command::Agree {
            input,
            benchmarks,
            candidates,
            per_item,
            items,
            mut groups,
            format,
            out,
        } => {
            let t = input.load()?;
            let candidates = candidates.unwrap_or_else(|| t.ids().raters().to_vec());
            let mut all = Vec::new();
            if per_item || groups.is_empty() {
                match items {
                    Some(items) => all.extend(
                        items
                            .iter()
                            .map(|i| ItemGroup::new(i.clone(), vec![i.clone()])),
                    ),
                    None => all.extend(ItemGroup::per_item(&t)),
                }
            }
            all.append(&mut groups);
            let table = qwk_matrix(&t, &benchmarks, &candidates, &all)?;
            let body = match format {
                TableFormat::Csv => table.to_csv()?,
                TableFormat::Wide => table.to_wide_csv()?,
                TableFormat::Json => json_line(&table)?,
            };
            emit(out.as_deref(), &body)?;
        }
        Command::Alpha {
            input,
            groups,
            raters,
            format,
            out,
        } => {
            let t = input.load()?;
            let raters = raters.unwrap_or_else(|| t.ids().raters().to_vec());
            let table = alpha_table(&t, &raters, &groups)?;
            let body = match format {
                TableFormat::Csv | TableFormat::Wide => table.to_csv()?,
                TableFormat::Json => json_line(&table)?,
            };
            emit(out.as_deref(), &body)?;
        }
        Command::Estimate {
            input,
            tol,
            residual_tol,
            max_iter,
            extreme_adjust,
            logit_clamp,
            damping,
            out,
        } => {
            let t = input.load()?;
            let mut cfg = EstimationConfig::default();
            if let Some(v) = tol {
                cfg.convergence_tol = v;
            }
            if let Some(v) = residual_tol {
                cfg.residual_tol = v;
            }
            if let Some(v) = max_iter {
                cfg.max_iterations = v;
            }
            if let Some(v) = extreme_adjust {
                cfg.extreme_adjust = v;
            }
            if let Some(v) = logit_clamp {
                cfg.logit_clamp = v;
            }
            if let Some(v) = damping {
                cfg.newton_damping = v;
            }
            let est = estimate(&t, &cfg)?;
            eprintln!(
                "{} after {} iterations, log-likelihood {:.4}",
                if est.converged {
                    "converged"
                } else {
                    "NOT converged"
                },
                est.iterations_used,
                est.log_likelihood_final
            );
            emit(out.as_deref(), &(est.to_json()? + "\n"))?;
            if !est.converged {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Fit {
            estimates,
            input,
            facet,
            cuts,
            severity_cut,
            sort,
            format,
            out,
        } => {
            let est = load_estimates(&estimates)?;
            let t = input.load()?;
            let fit = fit_statistics(&t, &est, facet.into())?.with_cuts(cuts);
            let sort = match sort {
                SortArg::ByMeasure => SortOrder::ByMeasure,
                SortArg::ById => SortOrder::ById,
            };
            let table = measure_table(&est, &fit, sort, severity_cut)?;
            let body = match format {
                TableFormat::Csv | TableFormat::Wide => table.to_csv()?,
                TableFormat::Json => table.to_json()? + "\n",
            };
            emit(out.as_deref(), &body)?;
        }
        Command::Ensemble {
            input,
            members,
            name,
            rounding,
            out,
        } => {
            let t = input.load()?;
            let mut spec = EnsembleSpec::new(name, members);
            spec.rounding = rounding;
            let augmented = build_ensemble(&t, &spec)?;
            emit(
                out.as_deref(),
                &tensor_body(&augmented, out.as_deref(), true)?,
            )?;
        }
        Command::Prune {
            input,
            members,
            benchmarks,
            steps,
            items,
            trace,
        } => {
            let t = input.load()?;
            let items = items.unwrap_or_default();
            let result = greedy_prune(&t, &members, &benchmarks, &items, steps)?;
            eprintln!("removal order: {}", result.removal_order().join(", "));
            emit(trace.as_deref(), &result.to_csv()?)?;
        }
        Command::Simulate {
            spec,
            seed,
            out,
            truth,
        } => {
            let mut spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<SimSpec>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => SimSpec::essay_panel(0),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (t, params) = simulate(&spec)?;
            emit(out.as_deref(), &tensor_body(&t, out.as_deref(), false)?)?;
            if let Some(p) = truth {
                let doc = serde_json::json!({ "ids": t.ids(), "params": params, "spec": spec });
                emit(Some(&p), &json_line(&doc)?)?;
            }
        }
        Command::Report {
            estimates,
            input,
            wright,
            bucket,
            cuts,
            severity_cut,
            out,
        } => {
            let est = load_estimates(&estimates)?;
            let t = input.load()?;
            let options = ReportOptions {
                wright: match wright {
                    WrightArg::Ascii => WrightFormat::Ascii,
                    WrightArg::Svg => WrightFormat::Svg,
                },
                bucket,
                cuts,
                severity_cut,
                sort: SortOrder::ByMeasure,
            };
            for f in write_report(&out, &t, &est, &options)? {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Run { config, out, seed } => {
            let cfg = match StudyConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    let doc = serde_json::json!({
                        "status": "error",
                        "stage": "config",
                        "error": e.to_string(),
                        "artifacts": [],
                    });
                    eprintln!("{doc}");
                    return Ok(ExitCode::from(2));
                }
            };
            let options = RunOptions {
                base_dir: config.parent().map(Path::to_path_buf).unwrap_or_default(),
                out_dir: out,
                seed,
            };
            match run_study(&cfg, &options) {
                Ok(manifest) => {
                    eprintln!("{} artifacts written", manifest.artifacts.len());
                }
                Err(e) => {
                    eprintln!("{}", e.to_json());
                    return Ok(ExitCode::from(1));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
