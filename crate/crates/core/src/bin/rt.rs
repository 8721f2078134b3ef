use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use reservoir_transformer::harness::{
    curve_steps_within_se, run_d2, run_forecast, run_gen_data, run_group_ablation, run_init_sensitivity,
    run_readout_ablation, run_scaling_probe, write_records, ExperimentSpec, SweepOutcome,
};
use reservoir_transformer::{Error, Result};

#[derive(Parser)]
#[command(name = "rt", version, about = "Group reservoir transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML file overriding profile fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every (seed, horizon) cell.
    Forecast,
    /// Initialization schemes with one reservoir against a group.
    InitSensitivity,
    /// Test error against the number of reservoirs.
    GroupAblation,
    /// Readout activation arms.
    ReadoutAblation,
    /// Reservoir-pass time and retained memory against length and size.
    Scaling,
    /// Correlation dimension of the configured dataset.
    D2,
    /// Write the configured dataset and its metadata.
    GenData,
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let profile = match cli.profile {
        Profile::Desk => "desk",
        Profile::Paper => "paper",
    };
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p, profile)?,
        None => ExperimentSpec::profile(profile)?,
    };
    if let Some(s) = cli.seed {
        spec.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        spec.out_dir = o.display().to_string();
    }
    spec.validate()?;
    Ok(spec)
}

fn report(out: &Path, stem: &str, o: &SweepOutcome) -> Result<()> {
    write_records(out, stem, &o.records)?;
    for r in &o.records {
        println!("{:<16} seed {:<3} h {:<4} mse {:.6} mae {:.6}", r.arm, r.seed, r.horizon, r.mse, r.mae);
    }
    for (arm, seed, e) in &o.failures {
        eprintln!("run {arm} seed {seed} failed: {e}");
    }
    if o.records.is_empty() {
        return Err(Error::Config("every run failed".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let spec = load_spec(cli)?;
    let out = PathBuf::from(&spec.out_dir);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("spec.toml"), spec.to_toml())?;
    match cli.command {
        Command::Forecast => report(&out, "forecast", &run_forecast(&spec)?)?,
        Command::InitSensitivity => {
            let t = run_init_sensitivity(&spec)?;
            write_records(&out, "init_sensitivity", &t.records)?;
            let mut text = format!("combined_mean\t{:?}\n", t.combined_mean);
            for b in &t.blocks {
                let _ = writeln!(text, "l:{}\tvariance:{:?}\tp:{:?}", b.l, b.cross_scheme_variance, b.p_value);
                for r in &b.rows {
                    let _ = writeln!(text, "l:{}\tscheme:{}\tmean_mse:{:?}\tp:{:?}", b.l, r.scheme, r.mean_mse, r.p_value);
                }
            }
            std::fs::write(out.join("init_sensitivity.table"), &text)?;
            print!("{text}");
            for (arm, seed, e) in &t.outcome_failures {
                eprintln!("run {arm} seed {seed} failed: {e}");
            }
        }
        Command::GroupAblation => {
            let (curve, o) = run_group_ablation(&spec)?;
            report(&out, "group_ablation", &o)?;
            let mut text = String::from("l,median_mse,n\n");
            for p in &curve {
                let _ = writeln!(text, "{},{:?},{}", p.l, p.median_mse, p.mses.len());
            }
            std::fs::write(out.join("group_curve.csv"), &text)?;
            print!("{text}");
            for (a, b, rise, se, ok) in curve_steps_within_se(&curve) {
                println!("L {a} -> {b}: change {rise:+.3e}, pooled se {se:.3e}, {}", if ok { "ok" } else { "rises" });
            }
        }
        Command::ReadoutAblation => report(&out, "readout_ablation", &run_readout_ablation(&spec)?)?,
        Command::Scaling => {
            let r = run_scaling_probe(&spec)?;
            let mut text = String::new();
            for ((t, s), b) in r.t_values.iter().zip(&r.t_seconds).zip(&r.t_retained_bytes) {
                let _ = writeln!(text, "t:{t}\tseconds:{s:?}\tretained_bytes:{b}");
            }
            for (n, s) in r.nr_values.iter().zip(&r.nr_seconds) {
                let _ = writeln!(text, "n_r:{n}\tseconds:{s:?}");
            }
            let _ = writeln!(text, "t_slope:{:?}\tn_r_slope:{:?}", r.t_slope, r.nr_slope);
            std::fs::write(out.join("scaling.txt"), &text)?;
            print!("{text}");
        }
        Command::D2 => {
            let e = run_d2(&spec)?;
            let text = format!(
                "dataset:{}\tn_points:{}\td2:{:?}\tr2:{:?}\tfit:{}..{}\n",
                spec.dataset, e.n_points, e.d2, e.r2, e.fit_range.0, e.fit_range.1
            );
            std::fs::write(out.join("d2.txt"), &text)?;
            print!("{text}");
        }
        Command::GenData => println!("{}", run_gen_data(&spec, &out)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
