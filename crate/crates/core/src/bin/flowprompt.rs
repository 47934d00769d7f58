use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use flowprompt::bundle::{cmd_run, evaluate_bundle, read_scored_csv, verify_bundle, RunConfig};
use flowprompt::calibration::calibrate_threshold;
use flowprompt::dataset::{load_csv, sample_balanced, split_dev_test, write_csv, write_ids, FlowRecord, Schema};
use flowprompt::flags::{fit_rarity_table, flags_for, FlagThresholds, FLAG_NAMES};
use flowprompt::inference::{BackendConfig, BackendKind, MockWeights};
use flowprompt::prompt::PromptMode;
use flowprompt::render::{FlowRenderer, RenderPolicy};
use flowprompt::report::cmd_report;
use flowprompt::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "flowprompt", version, about = "Prompt-only flow intrusion detection harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a flow CSV and summarize it; optionally draw a balanced subset.
    Ingest(IngestArgs),
    /// Print the six flags for every record of a CSV.
    Flags(FlagsArgs),
    /// Print the flow text for records of a CSV.
    Render(RenderArgs),
    /// Run the full pipeline and write a bundle.
    Run(RunArgs),
    /// Pick the F1-maximizing threshold from a CSV with p_attack and label.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Recompute metrics from a bundle's predictions.csv.
    Evaluate {
        bundle: PathBuf,
        /// Rewrite metric files and manifest to match predictions.csv.
        #[arg(long)]
        write: bool,
        /// Check hashes, file set and dev/test separation.
        #[arg(long)]
        verify: bool,
    },
    /// Metrics table for a bundle next to the published reference rows.
    Report { bundle: PathBuf },
    /// Write seeded synthetic train/test CSVs in the UNSW-NB15 schema.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Column manifest for non-UNSW exports.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl DataArgs {
    fn schema(&self) -> Result<Schema> {
        Ok(match &self.schema {
            Some(p) => Schema::from_manifest(p)?,
            None => Schema::unsw_nb15(),
        })
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 300)]
    dev_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write ids.txt for the drawn subset.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct FlagsArgs {
    /// Training CSV used to fit the rarity table.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    flags: FlagsArgs,
    /// Only these record IDs.
    #[arg(long = "id")]
    ids: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    limit: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    Remote,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 300)]
    dev_size: usize,
    /// zero_shot, instruction, few_shot or few_shot:K
    #[arg(long, default_value = "few_shot:1")]
    mode: PromptMode,
    /// Seed for sampling; exemplar and bootstrap seeds default to it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    exemplar_seed: Option<u64>,
    #[arg(long)]
    bootstrap_seed: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    bootstrap_resamples: usize,
    #[arg(long, value_enum, default_value_t = BackendChoice::Mock)]
    backend: BackendChoice,
    /// Shorthand for `--backend mock`.
    #[arg(long)]
    mock: bool,
    /// Completion endpoint URL (or FLOWPROMPT_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 1024)]
    n_ctx: usize,
    #[arg(long, default_value_t = 1024)]
    n_batch: usize,
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    mock_bias: f64,
    #[arg(long, default_value_t = 1.2, allow_hyphen_values = true)]
    mock_weight: f64,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Flags(a) => flags(a),
        Command::Render(a) => render(a),
        Command::Run(a) => run(a),
        Command::Calibrate { scores } => {
            let (s, l) = read_scored_csv(&scores)?;
            let r = calibrate_threshold(&s, &l)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }
        Command::Evaluate { bundle, write, verify } => {
            let report = evaluate_bundle(&bundle, write)?;
            if verify {
                verify_bundle(&bundle)?;
                log::info!("bundle verified");
            }
            println!("{}", serde_json::to_string_pretty(&report.rounded())?);
            Ok(())
        }
        Command::Report { bundle } => {
            print!("{}", cmd_report(&bundle)?);
            Ok(())
        }
        Command::Synth { out_dir, n, seed } => {
            let data = generate(&SynthConfig {
                n_train: n,
                n_test: n,
                seed,
                ..Default::default()
            });
            fs::create_dir_all(&out_dir)?;
            let schema = Schema::unsw_nb15();
            for (name, records) in [("train.csv", &data.train), ("test.csv", &data.test)] {
                let path = out_dir.join(name);
                write_csv(fs::File::create(&path)?, &schema, records)?;
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn load(path: &Path, data: &DataArgs) -> Result<Vec<FlowRecord>> {
    load_csv(path, &data.schema()?).with_context(|| format!("loading {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let records = load(&a.test, &a.data)?;
    let attacks = records.iter().filter(|r| r.label.is_attack()).count();
    println!("rows: {}", records.len());
    println!("attack: {attacks}");
    println!("benign: {}", records.len() - attacks);
    if let Some(n) = a.n {
        let subset = sample_balanced(&records, n, a.seed)?;
        let (dev, test) = split_dev_test(&subset, a.dev_size, a.seed)?;
        println!("subset: {} ({} dev, {} test)", subset.len(), dev.len(), test.len());
        match &a.out {
            Some(p) => write_ids(fs::File::create(p)?, &dev, &test)?,
            None => write_ids(std::io::stdout().lock(), &dev, &test)?,
        }
    } else if a.out.is_some() {
        bail!("--out needs --n");
    }
    Ok(())
}

fn renderer(a: &FlagsArgs) -> Result<(FlowRenderer, Vec<FlowRecord>)> {
    let train = load(&a.train, &a.data)?;
    let test = load(&a.test, &a.data)?;
    let thresholds = match &a.thresholds {
        Some(p) => FlagThresholds::load(p)?,
        None => FlagThresholds::default(),
    };
    thresholds.validate()?;
    let rarity = fit_rarity_table(&train, &thresholds)?;
    Ok((FlowRenderer::new(thresholds, rarity, RenderPolicy::default()), test))
}

fn flags(a: FlagsArgs) -> Result<()> {
    let (r, test) = renderer(&a)?;
    let mut out = csv::Writer::from_writer(std::io::stdout().lock());
    let mut header = vec!["id", "label"];
    header.extend(FLAG_NAMES);
    header.push("count");
    out.write_record(&header)?;
    for rec in &test {
        let (_, f) = flags_for(rec, &r.thresholds, &r.rarity);
        let mut row = vec![rec.id.to_string(), rec.label.to_string()];
        row.extend(f.as_array().iter().map(|b| u8::from(*b).to_string()));
        row.push(f.count().to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let (r, test) = renderer(&a.flags)?;
    let mut stdout = std::io::stdout().lock();
    let selected: Vec<&FlowRecord> = if a.ids.is_empty() {
        test.iter().take(a.limit).collect()
    } else {
        test.iter().filter(|rec| a.ids.contains(&rec.id)).collect()
    };
    for rec in selected {
        let (text, _) = r.render(rec)?;
        writeln!(stdout, "{}\t{}\t{}", rec.id, rec.label, text.text)?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let kind = match (a.mock, a.backend) {
        (true, _) | (false, BackendChoice::Mock) => BackendKind::Mock,
        (false, BackendChoice::Remote) => BackendKind::Remote,
    };
    let backend = BackendConfig {
        kind,
        endpoint: a.endpoint,
        model_name: if kind == BackendKind::Mock { "mock".into() } else { a.model },
        n_ctx: a.n_ctx,
        n_batch: a.n_batch,
        timeout_secs: a.timeout,
        max_retries: a.max_retries,
        mock: MockWeights {
            bias: a.mock_bias,
            per_flag_weight: a.mock_weight,
        },
        ..Default::default()
    }
    .with_env();
    let config = RunConfig {
        n: a.n,
        dev_size: a.dev_size,
        sample_seed: a.seed,
        exemplar_seed: a.exemplar_seed.unwrap_or(a.seed),
        bootstrap_seed: a.bootstrap_seed.unwrap_or(a.seed),
        bootstrap_resamples: a.bootstrap_resamples,
        mode: a.mode,
        thresholds: a.thresholds,
        template: a.template,
        schema: a.data.schema,
        backend,
        ..RunConfig::new(a.train, a.test, a.out)
    };
    let bundle = cmd_run(&config)?;
    let m = &bundle.metrics.metrics;
    println!(
        "tau*={} accuracy={:.4} f1={:.4} macro_f1={:.4} -> {}",
        bundle.calibration.result.tau_star,
        m.accuracy,
        m.f1_pos,
        m.macro_f1,
        bundle.dir.display()
    );
    Ok(())
}
