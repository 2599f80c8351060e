use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mixforge_core::dataset::{correlation_matrix, parse_training_csv};
use mixforge_core::designer::{scan, GeneratorParams, ProbabilityMode, TargetCriteria};
use mixforge_core::models::{default_grid, fit_two_layer_all, loocv, loocv_all, tune, TwoLayerConfig};
use mixforge_core::plot::{correlation_heatmap, probability_plot};
use mixforge_core::properties::{cost, embodied_carbon, fit_carbonation, read_carbonation_csv};
use mixforge_core::{
    CementType, CorrelationMethod, CrossValReport, DatasetTable, Hyperparameters, MaterialCoefficients,
    Measured, MixComposition, MixRecord, ModelKind, TargetId,
};
use serde::Serialize;
use serde_json::json;

/// Uncertainty-aware random forests for concrete mix specification.
///
/// Every command prints its primary result on stdout. With `--out DIR` the
/// full set of artifacts (JSON, CSV and, with `--plots`, SVG) is written to
/// DIR as well. The default seed is 0.
#[derive(Debug, Parser)]
#[command(name = "mixforge", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Training CSV; defaults to the bundled 21-mix table.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    /// RNG seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output artifacts (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also emit SVG plots into the output directory.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Correlation map over the nine features and five properties.
    Correlate {
        #[arg(long, value_enum, default_value_t = Method::Pearson)]
        method: Method,
    },
    /// Leave-one-out cross-validated R² per model and property.
    Crossval {
        /// Model to score; all four when omitted.
        #[arg(long, value_enum)]
        model: Option<Kind>,
        /// Property to score; all five when omitted.
        #[arg(long, value_enum)]
        target: Option<Target>,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Grid search of hyperparameters by LOOCV R².
    Tune {
        #[arg(long, value_enum, default_value_t = Kind::TwoLayer)]
        model: Kind,
        /// Score a single property instead of the sum over all five.
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// JSON array of `{n_trees, max_features, min_samples_split}`;
        /// a built-in grid is used when omitted.
        #[arg(long, value_name = "PATH")]
        grid: Option<PathBuf>,
    },
    /// Scan the hypothetical mix family and select the most probable mix.
    Design {
        /// Criteria JSON file.
        #[arg(long, value_name = "PATH", conflicts_with = "preset", required_unless_present = "preset")]
        criteria: Option<PathBuf>,
        /// Built-in criteria set.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, value_enum, default_value_t = Mode::Gaussian)]
        mode: Mode,
        #[arg(long)]
        wc_min: Option<f64>,
        #[arg(long)]
        wc_max: Option<f64>,
        #[arg(long)]
        wc_step: Option<f64>,
        /// Preconditioning days assumed for every candidate.
        #[arg(long)]
        precond: Option<f64>,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Predict all five properties of a mix with the two-layer model.
    Predict {
        #[command(flatten)]
        mix: MixArgs,
        /// Preconditioning days (imputed median when omitted).
        #[arg(long)]
        precond: Option<f64>,
        #[command(flatten)]
        hp: HpArgs,
    },
    /// Fit a carbonation coefficient to a depth series.
    Carbfit {
        /// CSV with columns `t_days,x_mm,sigma_mm`.
        #[arg(long, value_name = "PATH")]
        series: PathBuf,
    },
    /// Embodied carbon and cost of a composition.
    Props {
        #[command(flatten)]
        mix: MixArgs,
        /// JSON overrides keyed by material, e.g. `{"water": {"c": 0.01}}`.
        #[arg(long, value_name = "PATH")]
        coeffs: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct HpArgs {
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
}

impl HpArgs {
    fn resolve(&self, kind: ModelKind) -> Hyperparameters {
        let d = kind.default_hyperparameters();
        Hyperparameters::new(
            self.n_trees.unwrap_or(d.n_trees),
            self.max_features.unwrap_or(d.max_features),
            self.min_samples_split.unwrap_or(d.min_samples_split),
        )
    }
}

/// A composition either taken from a record of the data table or given as
/// four mass percentages.
#[derive(Debug, Args)]
struct MixArgs {
    /// Record id in the data table, e.g. "C25 I".
    #[arg(long, conflicts_with_all = ["cement", "gravel", "sand", "water"])]
    mix: Option<String>,
    #[arg(long, requires_all = ["gravel", "sand", "water"])]
    cement: Option<f64>,
    #[arg(long)]
    gravel: Option<f64>,
    #[arg(long)]
    sand: Option<f64>,
    #[arg(long)]
    water: Option<f64>,
    #[arg(long, value_enum, default_value_t = Cement::CemI)]
    cement_type: Cement,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Kind {
    Linear,
    SingleRf,
    TwoLayer,
    Imputation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Target {
    K4,
    EnvImpact,
    Strength,
    Density,
    Cost,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    LowK,
    LowE,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Gaussian,
    Empirical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cement {
    /// CEM I 52.5 N
    CemI,
    /// CEM II/A 32.5 R
    CemIia,
}

impl From<Method> for CorrelationMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Pearson => CorrelationMethod::Pearson,
            Method::Spearman => CorrelationMethod::Spearman,
        }
    }
}

impl From<Kind> for ModelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Linear => ModelKind::Linear,
            Kind::SingleRf => ModelKind::SingleRf,
            Kind::TwoLayer => ModelKind::TwoLayer,
            Kind::Imputation => ModelKind::Imputation,
        }
    }
}

impl From<Target> for TargetId {
    fn from(t: Target) -> Self {
        match t {
            Target::K4 => TargetId::CarbonationK,
            Target::EnvImpact => TargetId::EnvImpact,
            Target::Strength => TargetId::Strength,
            Target::Density => TargetId::Density,
            Target::Cost => TargetId::Cost,
        }
    }
}

impl From<Mode> for ProbabilityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Gaussian => ProbabilityMode::Gaussian,
            Mode::Empirical => ProbabilityMode::Empirical,
        }
    }
}

impl From<Cement> for CementType {
    fn from(c: Cement) -> Self {
        match c {
            Cement::CemI => CementType::CemI_52_5N,
            Cement::CemIia => CementType::CemIIA_32_5R,
        }
    }
}

/// Output artifacts, held in memory until the command has fully succeeded.
struct Artifacts {
    stdout: String,
    files: Vec<(String, Vec<u8>)>,
    plots: Vec<(String, String)>,
}

impl Artifacts {
    fn new(stdout: String) -> Self {
        Artifacts {
            stdout,
            files: Vec::new(),
            plots: Vec::new(),
        }
    }

    fn file(mut self, name: &str, bytes: impl Into<Vec<u8>>) -> Self {
        self.files.push((name.to_string(), bytes.into()));
        self
    }

    fn plot(mut self, name: &str, svg: String) -> Self {
        self.plots.push((name.to_string(), svg));
        self
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    let target = dir.join(name);
    tmp.persist(&target)
        .with_context(|| format!("writing {}", target.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn load_table(path: Option<&Path>) -> Result<DatasetTable> {
    match path {
        None => Ok(DatasetTable::supplementary()),
        Some(p) => {
            let text = read_text(p)?;
            if text.lines().skip(1).all(|l| l.trim().is_empty()) {
                bail!("{}: no records", p.display());
            }
            let table = parse_training_csv(text.as_bytes()).with_context(|| format!("reading {}", p.display()))?;
            if table.is_empty() {
                bail!("{}: no records", p.display());
            }
            Ok(table)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("MIXFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("MIXFORGE_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn resolve_mix(args: &MixArgs, table: impl FnOnce() -> Result<DatasetTable>) -> Result<(String, MixComposition, CementType, Option<f64>)> {
    if let Some(id) = &args.mix {
        let table = table()?;
        let idx = table
            .position(id)
            .with_context(|| format!("no record `{id}` in the data table"))?;
        let r = &table.records()[idx];
        return Ok((r.id.clone(), r.composition, r.cement_type, r.preconditioning_days));
    }
    let (Some(c), Some(g), Some(s), Some(w)) = (args.cement, args.gravel, args.sand, args.water) else {
        bail!("give either --mix ID or all of --cement, --gravel, --sand and --water");
    };
    let composition = MixComposition::new(c, g, s, w);
    composition.validate()?;
    Ok(("custom".to_string(), composition, args.cement_type.into(), None))
}

fn crossval_csv(reports: &[CrossValReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "target", "n_trees", "max_features", "min_samples_split", "seed", "folds", "r2"])?;
    for r in reports {
        w.write_record([
            r.model_kind.token().to_string(),
            r.target.token().to_string(),
            r.hyperparams.n_trees.to_string(),
            r.hyperparams.max_features.to_string(),
            r.hyperparams.min_samples_split.to_string(),
            r.seed.to_string(),
            r.per_fold.len().to_string(),
            r.r2.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn run(cli: &Cli) -> Result<Artifacts> {
    let g = &cli.global;
    let data = g.data.as_deref();
    match &cli.command {
        Command::Correlate { method } => {
            let table = load_table(data)?;
            let m = correlation_matrix(&table, (*method).into())?;
            let mut csv = Vec::new();
            m.write_csv(&mut csv)?;
            let name = format!("correlation_{}", format!("{method:?}").to_lowercase());
            let text = String::from_utf8(csv)?;
            Ok(Artifacts::new(text.clone())
                .file(&format!("{name}.csv"), text)
                .file(&format!("{name}.json"), to_json(&m)?)
                .plot(&format!("{name}.svg"), correlation_heatmap(&m)))
        }
        Command::Crossval { model, target, hp } => {
            let table = load_table(data)?;
            let kinds: Vec<ModelKind> = match model {
                Some(k) => vec![(*k).into()],
                None => ModelKind::ALL.to_vec(),
            };
            let mut reports = Vec::new();
            for kind in kinds {
                let hp = hp.resolve(kind);
                match target {
                    Some(t) => reports.push(loocv(&table, (*t).into(), kind, hp, g.seed)?),
                    None => reports.extend(loocv_all(&table, kind, hp, g.seed)?),
                }
            }
            let summary: Vec<_> = reports
                .iter()
                .map(|r| {
                    json!({
                        "model": r.model_kind,
                        "target": r.target.token(),
                        "hyperparams": r.hyperparams,
                        "seed": r.seed,
                        "r2": r.r2,
                    })
                })
                .collect();
            let mut folds = Vec::new();
            for (i, r) in reports.iter().enumerate() {
                let mut buf = Vec::new();
                r.write_folds_csv(&mut buf)?;
                let text = String::from_utf8(buf)?;
                // Keep a single header line.
                let body = if i == 0 { &text[..] } else { text.split_once('\n').map_or("", |x| x.1) };
                folds.extend_from_slice(body.as_bytes());
            }
            let summary_json = to_json(&summary)?;
            Ok(Artifacts::new(summary_json.clone())
                .file("crossval.json", summary_json)
                .file("crossval.csv", crossval_csv(&reports)?)
                .file("crossval_folds.csv", folds))
        }
        Command::Tune { model, target, grid } => {
            let table = load_table(data)?;
            let kind: ModelKind = (*model).into();
            let grid: Vec<Hyperparameters> = match grid {
                Some(p) => {
                    let grid: Vec<Hyperparameters> = serde_json::from_str(&read_text(p)?)
                        .with_context(|| format!("parsing grid {}", p.display()))?;
                    if grid.is_empty() {
                        bail!("{}: empty hyperparameter grid", p.display());
                    }
                    grid
                }
                None => default_grid(kind, table.feature_count()),
            };
            let result = tune(&table, &grid, kind, target.map(Into::into), g.seed)?;
            let best = to_json(&json!({
                "model": result.model_kind,
                "target": result.target.map(|t| t.token()),
                "seed": g.seed,
                "hyperparams": result.best,
                "summed_r2": result.best_summed_r2,
            }))?;
            Ok(Artifacts::new(best.clone())
                .file("tune_best.json", best)
                .file("tune.json", to_json(&result)?))
        }
        Command::Design {
            criteria,
            preset,
            mode,
            wc_min,
            wc_max,
            wc_step,
            precond,
            hp,
        } => {
            let criteria = match (criteria, preset) {
                (Some(p), _) => TargetCriteria::from_json(&read_text(p)?)
                    .with_context(|| format!("reading criteria {}", p.display()))?,
                (None, Some(Preset::LowK)) => TargetCriteria::low_k(),
                (None, Some(Preset::LowE)) => TargetCriteria::low_e(),
                (None, None) => bail!("give --criteria PATH or --preset"),
            };
            let mut params = GeneratorParams::default();
            params.wc_min = wc_min.unwrap_or(params.wc_min);
            params.wc_max = wc_max.unwrap_or(params.wc_max);
            params.wc_step = wc_step.unwrap_or(params.wc_step);
            params.preconditioning_days = precond.unwrap_or(params.preconditioning_days);
            params.validate()?;

            let table = load_table(data)?;
            let models = fit_two_layer_all(&table, hp.resolve(ModelKind::TwoLayer), g.seed, TwoLayerConfig::default())?;
            let report = scan(&models, &criteria, &params, (*mode).into())?;
            let best = report.best_result();
            let selected = to_json(&json!({
                "criteria": report.criteria_name,
                "mode": report.mode,
                "seed": g.seed,
                "preconditioning_days": params.preconditioning_days,
                "selected": best,
                "joint_probability_by_wc": report
                    .results
                    .iter()
                    .map(|r| json!({ "wc": r.candidate.wc, "joint_probability": r.joint_probability }))
                    .collect::<Vec<_>>(),
            }))?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            Ok(Artifacts::new(selected.clone())
                .file("selected.json", selected)
                .file("scan.csv", csv)
                .plot("design.svg", probability_plot(&[&report])))
        }
        Command::Predict { mix, precond, hp } => {
            let table = load_table(data)?;
            let (id, composition, cement_type, record_precond) = resolve_mix(mix, || Ok(table.clone()))?;
            let record = MixRecord {
                id: id.clone(),
                cement_type,
                composition,
                est_mass_per_m3: mixforge_core::GeneratorParams::default().wet_density,
                preconditioning_days: precond.or(record_precond),
                measured: Measured::default(),
            };
            let x = table.features_for(&record)?;
            let models = fit_two_layer_all(&table, hp.resolve(ModelKind::TwoLayer), g.seed, TwoLayerConfig::default())?;
            let mut predictions = serde_json::Map::new();
            for m in &models {
                let p = m.predict(&x)?;
                predictions.insert(
                    m.final_target.token().to_string(),
                    json!({ "mean": p.mean, "sigma": p.sigma, "unit": m.final_target.unit() }),
                );
            }
            let out = to_json(&json!({
                "mix": id,
                "composition": composition,
                "cement_type": cement_type,
                "seed": g.seed,
                "predictions": predictions,
            }))?;
            Ok(Artifacts::new(out.clone()).file("prediction.json", out))
        }
        Command::Carbfit { series } => {
            let file = fs::File::open(series).with_context(|| format!("opening {}", series.display()))?;
            let obs = read_carbonation_csv(file).with_context(|| format!("reading {}", series.display()))?;
            let out = to_json(&fit_carbonation(&obs)?)?;
            Ok(Artifacts::new(out.clone()).file("carbfit.json", out))
        }
        Command::Props { mix, coeffs } => {
            let (id, composition, cement_type, _) = resolve_mix(mix, || load_table(data))?;
            let mut c = MaterialCoefficients::default();
            if let Some(p) = coeffs {
                c = c
                    .with_overrides_json(&read_text(p)?)
                    .with_context(|| format!("reading coefficients {}", p.display()))?;
            }
            let out = to_json(&json!({
                "mix": id,
                "composition": composition,
                "cement_type": cement_type,
                "env_impact": embodied_carbon(&composition, cement_type, &c),
                "cost": cost(&composition, cement_type, &c),
            }))?;
            Ok(Artifacts::new(out.clone()).file("props.json", out))
        }
    }
}

fn emit(g: &Global, artifacts: Artifacts) -> Result<()> {
    if g.plots && g.out.is_none() {
        bail!("--plots needs --out DIR");
    }
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in &artifacts.files {
            write_atomic(dir, name, bytes)?;
        }
        if g.plots {
            for (name, svg) in &artifacts.plots {
                write_atomic(dir, name, svg.as_bytes())?;
            }
        }
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(artifacts.stdout.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads()
        .and_then(|()| run(&cli))
        .and_then(|a| emit(&cli.global, a));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
