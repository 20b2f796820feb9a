use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ropo_core::harness::config::Settings;
use ropo_core::harness::io::{self, Metadata};
use ropo_core::harness::{self, generate_dataset, generate_world, summarize};
use ropo_core::noise::flip_exact_fraction;
use ropo_core::theory::verification_report;
use ropo_core::trainer::stable_learning_rate;
use ropo_core::{train, Policy, RiskMode, TrainConfig};

#[derive(Parser)]
#[command(name = "ropo", about = "Noise-tolerant preference optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// key=value settings file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    loss: Option<String>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Margin clip bound M; `inf` disables clipping
    #[arg(long, global = true)]
    clip: Option<f64>,
    /// Output directory (generate, train, report) or results file (sweep)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write world.csv and dataset.csv
    Generate,
    /// Train one cell and write trace.csv and policy.csv
    Train {
        /// Directory holding world.csv and dataset.csv; generated from the seed when absent
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the numeric verification report
    Verify,
    /// Run the noise sweep and write the results table
    Sweep,
    /// Summarize a results table
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn settings(common: &Common) -> ropo_core::Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    macro_rules! flag {
        ($($f:ident),*) => {$(
            if let Some(v) = &common.$f {
                s.$f = v.clone();
            }
        )*};
    }
    flag!(seed, eta, loss, beta, eps, alpha, gamma, clip);
    Ok(s)
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn run_meta(s: &Settings, pairs: &[(&str, String)]) -> Metadata {
    let mut meta: Metadata = [
        ("loss", s.loss.clone()),
        ("seed", s.seed.to_string()),
        ("eta", s.eta.to_string()),
        ("beta", s.beta.to_string()),
        ("eps", s.eps.to_string()),
        ("margin_clip", s.clip.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    meta.extend(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())));
    meta
}

fn generate(s: &Settings, dir: &Path) -> ropo_core::Result<()> {
    let world = generate_world(&s.world_spec())?;
    let samples = generate_dataset(&world, s.n_samples, s.seed.wrapping_add(1))?;
    let data = flip_exact_fraction(&samples, s.eta, s.seed.wrapping_add(2))?;
    io::write_world(io::create(&dir.join("world.csv"))?, &world)?;
    io::write_dataset(io::create(&dir.join("dataset.csv"))?, &data)?;
    println!("wrote {} and {} ({} samples, {} flipped)", dir.join("world.csv").display(), dir.join("dataset.csv").display(), data.len(), data.n_flipped());
    Ok(())
}

fn train_one(s: &Settings, data: Option<&Path>, dir: &Path) -> ropo_core::Result<()> {
    let hyper = s.hyper()?;
    let kind = s.loss_kind()?;
    let (world, noisy) = match data {
        Some(d) => (io::read_world(io::open(&d.join("world.csv"))?)?, io::read_dataset(io::open(&d.join("dataset.csv"))?)?),
        None => harness::cell_data(&s.sweep_config(), s.eta, s.seed)?,
    };
    let reference = Policy::uniform(&world);
    let lr = s.lr_factor * stable_learning_rate(kind, &hyper);
    let config = TrainConfig {
        learning_rate: lr,
        max_steps: s.max_steps,
        grad_tol: s.grad_tol,
        risk_mode: RiskMode::Empirical,
        seed: s.seed,
        record_every: 10,
        track_margins: noisy.len().min(8),
        ..TrainConfig::default()
    };
    let trace = train(kind, &world, noisy.samples(), &reference, &reference, &hyper, &config)?;
    let meta = run_meta(s, &[("learning_rate", lr.to_string())]);
    io::write_trace(io::create(&dir.join("trace.csv"))?, &trace, &meta)?;
    io::write_policy(io::create(&dir.join("policy.csv"))?, &trace.final_policy)?;
    let pairs = world.all_pairs();
    let acc = harness::evaluate_accuracy(&trace.final_policy, &reference, &world, &hyper, &pairs)?;
    println!(
        "{kind}: {} steps, converged={}, final risk {:.6}, accuracy {acc:.4} (clip M={})",
        trace.steps_taken,
        trace.converged,
        trace.final_risk().unwrap_or(f64::NAN),
        s.clip
    );
    Ok(())
}

fn verify(s: &Settings) -> ropo_core::Result<bool> {
    let records = verification_report(&s.hyper()?, s.seed)?;
    println!("# margin_clip={} beta={} eps={}", s.clip, s.beta, s.eps);
    for r in &records {
        println!("{r}");
    }
    let failed: Vec<_> = records.iter().filter(|r| !r.pass).collect();
    match failed.first() {
        None => {
            println!("all {} checks passed", records.len());
            Ok(true)
        }
        Some(first) => {
            eprintln!("verify: {} of {} checks failed, first: {first}", failed.len(), records.len());
            Ok(false)
        }
    }
}

fn run_sweep(s: &Settings, out: Option<&Path>) -> ropo_core::Result<()> {
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("results.csv"));
    let mut writer = io::results_writer(io::create(&path)?);
    let grid = s.sweep_grid()?;
    let total = grid.len();
    let mut done = 0;
    harness::sweep_with(&grid, &s.hyper()?, &s.sweep_config(), |row| {
        writer.serialize(row)?;
        writer.flush()?;
        done += 1;
        if let Some(e) = &row.error {
            eprintln!("cell {} eta={} seed={} failed: {e}", row.kind, row.eta, row.seed);
        }
        Ok(())
    })?;
    println!("wrote {done}/{total} rows to {} (clip M={})", path.display(), s.clip);
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn report(input: &Path, dir: &Path) -> ropo_core::Result<()> {
    let rows = io::read_results(io::open(input)?)?;
    let summary = summarize(&rows);
    let mut table = String::from("kind\teta\tn\tfailed\taccuracy\tacc_sd\twin_rate\tmargin_clean\tmargin_noisy\n");
    for r in &summary {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.kind,
            r.eta,
            r.n,
            r.failed,
            fmt_opt(r.accuracy_mean),
            fmt_opt(r.accuracy_std),
            fmt_opt(r.win_rate_mean),
            fmt_opt(r.margin_clean_mean),
            fmt_opt(r.margin_noisy_mean)
        ));
    }
    print!("{table}");
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.tsv"), &table)?;
    let mut long = csv::Writer::from_writer(io::create(&dir.join("long.csv"))?);
    long.write_record(["kind", "eta", "seed", "metric", "value"])?;
    for r in &rows {
        let metrics = [
            ("accuracy", r.accuracy),
            ("win_rate_vs_reference", r.win_rate_vs_reference),
            ("mean_margin_clean", r.mean_margin_clean),
            ("mean_margin_noisy", r.mean_margin_noisy),
            ("steps_to_converge", r.steps_to_converge.map(|s| s as f64)),
        ];
        for (name, v) in metrics {
            if let Some(v) = v {
                long.serialize((&r.kind, r.eta, r.seed, name, v))?;
            }
        }
    }
    long.flush()?;
    Ok(())
}

fn run(cli: Cli) -> ropo_core::Result<bool> {
    let s = settings(&cli.common)?;
    let dir = out_dir(&cli.common);
    match cli.command {
        Command::Generate => generate(&s, &dir)?,
        Command::Train { data } => train_one(&s, data.as_deref(), &dir)?,
        Command::Verify => return verify(&s),
        Command::Sweep => run_sweep(&s, cli.common.out.as_deref())?,
        Command::Report { input } => report(&input, &dir)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
