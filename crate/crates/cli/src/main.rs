use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpmb::experiment::{
    generate_scenario, run_experiment, run_table1, write_steps_csv, write_summary_csv, ExperimentConfig, FilterKind,
};

#[derive(Parser)]
#[command(name = "vpmb", version, about = "PMBM and PMB multi-target tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo runs of one filter; writes steps.csv and summary.csv.
    Run {
        #[command(flatten)]
        opts: Options,
        #[arg(long)]
        filter: Option<FilterKind>,
        #[arg(long)]
        pd: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the ground-truth trajectories of a scenario seed.
    Scenario {
        #[arg(long, default_value_t = vpmb::experiment::DEFAULT_TRUTH_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// All five filters at every detection probability of the results table.
    Table1 {
        #[command(flatten)]
        opts: Options,
        /// Directory for table1.csv and steps_pd<pd>.csv; the summary also goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Options {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    truth_seed: Option<u64>,
    #[arg(long)]
    max_hyp: Option<usize>,
    #[arg(long)]
    clutter_rate: Option<f64>,
    #[arg(long)]
    gamma_ppp: Option<f64>,
    #[arg(long)]
    gamma_bern: Option<f64>,
    #[arg(long)]
    estimator_threshold: Option<f64>,
    #[arg(long)]
    gate: Option<f64>,
    #[arg(long)]
    gamma_vpmb: Option<f64>,
    #[arg(long)]
    vpmb_max_iter: Option<usize>,
}

impl Options {
    fn config(&self) -> vpmb::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        macro_rules! apply {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        apply!(
            runs => n_runs, seed => rng_seed, truth_seed => truth_seed, max_hyp => max_hyp,
            clutter_rate => clutter_rate, gamma_ppp => gamma_ppp, gamma_bern => gamma_bern,
            estimator_threshold => estimator_threshold, gate => gate_threshold,
            gamma_vpmb => gamma_vpmb, vpmb_max_iter => vpmb_max_iter
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> vpmb::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> vpmb::Result<()> {
    match cli.command {
        Command::Run { opts, filter, pd, out } => {
            let mut cfg = opts.config()?;
            if let Some(f) = filter {
                cfg.filter_kind = f;
            }
            if let Some(pd) = pd {
                cfg.p_detect = pd;
            }
            let result = run_experiment(&cfg)?;
            fs::create_dir_all(&out)?;
            let mut w = create(&out.join("steps.csv"))?;
            write_steps_csv(&mut w, std::slice::from_ref(&result))?;
            w.flush()?;
            let mut w = create(&out.join("summary.csv"))?;
            write_summary_csv(&mut w, &[(cfg.p_detect, vec![result.clone()])])?;
            w.flush()?;
            eprintln!(
                "{}: RMS-GOSPA {:.4}, {:.3} s per run",
                cfg.filter_kind,
                result.summary_rms,
                result.mean_runtime_secs()
            );
        }
        Command::Scenario { seed, out } => {
            let mut w = create(&out)?;
            w.write_all(generate_scenario(seed)?.to_text().as_bytes())?;
            w.flush()?;
        }
        Command::Table1 { opts, out } => {
            let cfg = opts.config()?;
            let rows = run_table1(&cfg)?;
            write_summary_csv(io::stdout().lock(), &rows)?;
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                let mut w = create(&out.join("table1.csv"))?;
                write_summary_csv(&mut w, &rows)?;
                w.flush()?;
                for (pd, results) in &rows {
                    let mut w = create(&out.join(format!("steps_pd{pd}.csv")))?;
                    write_steps_csv(&mut w, results)?;
                    w.flush()?;
                }
            }
            eprintln!("mean runtime per run (s):");
            for (pd, results) in &rows {
                let times: Vec<String> = results
                    .iter()
                    .map(|r| format!("{} {:.3}", r.config.filter_kind.label(), r.mean_runtime_secs()))
                    .collect();
                eprintln!("  pd {pd}: {}", times.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
