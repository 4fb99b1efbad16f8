use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use hcl_core::data::io::{write_heatmap, write_image, write_sample};
use hcl_core::data::{gen_scene, Dataset, Degradation, DegradationKind, SceneSpec};
use hcl_core::model::Model;
use hcl_core::pipeline::bench::{degradation_seed, write_csv};
use hcl_core::pipeline::report::{self, METRICS};
use hcl_core::pipeline::{debug_maps, load_samples, run_benchmark, train, BenchConfig, Config, Mode};
use hcl_core::verify::{run_acceptance_with, run_property_suite_with, write_reports, AcceptanceConfig, Fixture};
use hcl_core::{HclError, Result};

#[derive(Parser, Debug)]
#[command(name = "hcl", version, about = "Test-time adaptation for camouflaged-object segmentation")]
struct Cli {
    /// Settings file; unspecified keys keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic camouflaged scenes.
    GenData(GenData),
    /// Apply a corruption to every image of a dataset.
    Degrade(DegradeArgs),
    /// Train the detector and reconstruction branches.
    Train(TrainArgs),
    /// Predict a dataset frozen, with per-sample adaptation, or with the
    /// entropy baseline, and score it.
    Adapt(AdaptArgs),
    /// Score saved prediction maps against masks.
    Eval(EvalArgs),
    /// Summarize metric CSV files.
    Report(ReportArgs),
    /// Run the property suite and optionally the acceptance experiments.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.7)]
    camouflage: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Gn,
    Gb,
    Cr,
}

impl From<Kind> for DegradationKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Gn => DegradationKind::Gn,
            Kind::Gb => DegradationKind::Gb,
            Kind::Cr => DegradationKind::Cr,
        }
    }
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    severity: u8,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Noise seed; sample i draws from a seed derived from this and i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// The configuration is written next to it with a `.toml` extension.
    #[arg(long)]
    out_checkpoint: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Frozen,
    Hcl,
    Tent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Frozen => Mode::Frozen,
            ModeArg::Hcl => Mode::Hcl,
            ModeArg::Tent => Mode::Tent,
        }
    }
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Overrides `adapt.iterations`.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Write prediction maps here, and confidence and similarity heatmaps
    /// under its `debug/` subdirectory.
    #[arg(long, value_name = "DIR")]
    dump_maps: Option<PathBuf>,
    /// Corrupt images on the fly before prediction.
    #[arg(long, value_enum, requires = "severity")]
    kind: Option<Kind>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5), requires = "kind")]
    severity: Option<u8>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    /// Label written in the mode column.
    #[arg(long, default_value = "external")]
    label: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    csv: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write one bar chart per metric.
    #[arg(long)]
    plots: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run only properties whose name contains this.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    acceptance: bool,
    /// Trained weights of the verification profile; written after training
    /// when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    no_train: bool,
    #[arg(long, default_value = "verify-report")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HclError::io(dir, e))?;
    }
    File::create(path).map_err(|e| HclError::io(path, e))
}

fn gen_data(a: &GenData) -> Result<()> {
    for i in 0..a.count as u64 {
        let seed = a.seed + i;
        let (image, mask) = gen_scene(&SceneSpec::new(a.size, a.camouflage, seed))?;
        write_sample(&a.out, &format!("scene{seed:05}"), &image, &mask)?;
    }
    info!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn degrade(a: &DegradeArgs) -> Result<()> {
    let d = Degradation::new(a.kind.into(), a.severity)?;
    let ds = Dataset::open(&a.input)?;
    for (i, (name, pair)) in ds.iter().enumerate() {
        match pair {
            Ok((image, mask)) => {
                let image = d.apply(&image, degradation_seed(a.seed, i))?;
                write_sample(&a.out, &name, &image, &mask)?;
            }
            Err(e) => warn!("skipping {name}: {e}"),
        }
    }
    info!("wrote {} {} severity {} to {}", ds.len(), d.kind, d.severity, a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, cfg: &Config) -> Result<()> {
    let (samples, _) = load_samples(&a.data)?;
    let mut model = Model::new(cfg.network.clone())?;
    let trace = train(&mut model, &samples, &cfg.hcl, &cfg.train, |step, r| {
        log::debug!("step {step}: total {:.4}", r.total);
    })?;
    model.save_checkpoint(&a.out_checkpoint)?;
    let cfg_path = sidecar(&a.out_checkpoint);
    std::fs::write(&cfg_path, cfg.render()).map_err(|e| HclError::io(&cfg_path, e))?;
    info!(
        "trained {} steps on {} samples, saved {}",
        trace.len(),
        samples.len(),
        a.out_checkpoint.display()
    );
    Ok(())
}

fn adapt(a: &AdaptArgs, config: Option<&Path>) -> Result<()> {
    let sc = sidecar(&a.checkpoint);
    let mut cfg = match config {
        Some(p) => Config::load(p)?,
        None if sc.exists() => Config::load(&sc)?,
        None => Config::default(),
    };
    if let Some(n) = a.iters {
        cfg.adapt.iterations = n;
    }
    cfg.validate()?;
    let mut model = Model::new(cfg.network.clone())?;
    model.load_checkpoint(&a.checkpoint)?;
    let (samples, _) = load_samples(&a.data)?;
    let degradation = match (a.kind, a.severity) {
        (Some(k), Some(s)) => Some(Degradation::new(k.into(), s)?),
        _ => None,
    };
    let bench = BenchConfig {
        mode: a.mode.into(),
        degradation,
        hcl: cfg.hcl.clone(),
        adapt: cfg.adapt.clone(),
    };
    let result = run_benchmark(&mut model, &samples, &bench)?;
    write_csv(create(&a.out_csv)?, &result)?;
    info!(
        "{}: {} samples, mean MAE {:.4}, S_m {:.4}",
        result.mode,
        result.records.len(),
        result.mean.mae,
        result.mean.s_measure
    );

    if let Some(dir) = &a.dump_maps {
        for (i, (s, r)) in samples.iter().zip(&result.records).enumerate() {
            write_image(&dir.join(format!("{}.png", s.name)), &r.prediction)?;
            let image = match degradation {
                Some(d) => d.apply(&s.image, degradation_seed(cfg.adapt.seed, i))?,
                None => s.image.clone(),
            };
            let (confidence, similarity) = debug_maps(&model, &image, &cfg.hcl, cfg.adapt.seed)?;
            write_heatmap(&dir.join("debug").join(format!("{}_confidence.pgm", s.name)), &confidence)?;
            write_heatmap(&dir.join("debug").join(format!("{}_similarity.pgm", s.name)), &similarity)?;
        }
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let rows = report::evaluate_predictions(&a.pred_dir, &a.gt_dir, &a.label)?;
    report::write_rows(create(&a.out_csv)?, &rows)?;
    info!("scored {} predictions", rows.len());
    Ok(())
}

fn report_cmd(a: &ReportArgs) -> Result<()> {
    let mut sources = Vec::new();
    for path in &a.csv {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        sources.push((name, report::read_rows(path)?));
    }
    let summary = report::summarize(&sources);
    let table = report::render_table(&summary);
    print!("{table}");
    std::fs::create_dir_all(&a.out).map_err(|e| HclError::io(&a.out, e))?;
    let txt = a.out.join("summary.txt");
    std::fs::write(&txt, &table).map_err(|e| HclError::io(&txt, e))?;
    report::write_summary_csv(create(&a.out.join("summary.csv"))?, &summary)?;
    if a.plots {
        for (name, get) in METRICS {
            let values: Vec<f64> = summary.iter().map(|r| get(&r.mean)).collect();
            report::write_bar_chart(&a.out.join(format!("{name}.png")), &values)?;
        }
        let legend: String = summary.iter().enumerate().map(|(i, r)| format!("{i}\t{}\n", r.label())).collect();
        let path = a.out.join("plots.txt");
        std::fs::write(&path, legend).map_err(|e| HclError::io(&path, e))?;
    }
    Ok(())
}

/// Returns whether everything passed.
fn verify(a: &VerifyArgs) -> Result<bool> {
    let cfg = AcceptanceConfig {
        checkpoint: a.checkpoint.clone(),
        no_train: a.no_train,
        ..AcceptanceConfig::default()
    };
    let mut fixture = Fixture::new(cfg.profile.clone());
    if let Some(p) = &a.checkpoint {
        fixture = fixture.with_checkpoint(p.clone(), !a.no_train);
    }
    fixture.allow_training = !a.no_train;

    let results = run_property_suite_with(a.filter.as_deref(), &mut fixture);
    if results.is_empty() {
        return Err(HclError::Usage(format!(
            "no property matches `{}`",
            a.filter.as_deref().unwrap_or_default()
        )));
    }
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} properties passed", results.len());

    let acceptance = if a.acceptance {
        let report = run_acceptance_with(&cfg, &mut fixture)?;
        println!("{report}");
        Some(report)
    } else {
        None
    };
    write_reports(&a.out, &results, acceptance.as_ref())?;
    Ok(passed == results.len() && acceptance.as_ref().is_none_or(|r| r.all_passed()))
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(cli.config.as_deref())?;
    if cli.print_config {
        print!("{}", cfg.render());
        return Ok(true);
    }
    let Some(command) = cli.command else {
        return Err(HclError::Usage("no command given (see --help)".into()));
    };
    match command {
        Command::GenData(a) => gen_data(&a)?,
        Command::Degrade(a) => degrade(&a)?,
        Command::Train(a) => train_cmd(&a, &cfg)?,
        Command::Adapt(a) => adapt(&a, cli.config.as_deref())?,
        Command::Eval(a) => eval(&a)?,
        Command::Report(a) => report_cmd(&a)?,
        Command::Verify(a) => return verify(&a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HclError::Usage(_) | HclError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
