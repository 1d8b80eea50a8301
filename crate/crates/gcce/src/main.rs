use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nv_gcce::config::{default_cutoffs, Cutoff, RunConfig, Scale};
use nv_gcce::workflows::{self, ScanGrids};
use nv_gcce::{io, Error, Result};
use nv_gcce_core::fit::fit_curve;
use nv_gcce_core::{ensemble_average, generate_configuration, seed, FitMethod, FitOptions, LatticeSpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "nv-gcce", version, about = "Hahn-echo gCCE simulations of an NV center in an electron-spin bath")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random bath configurations and write them as JSON.
    Generate {
        #[arg(long)]
        concentration: f64,
        /// Å, or "auto".
        #[arg(long, default_value = "auto")]
        r_bath: Cutoff,
        /// Selects the "auto" cutoff table.
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, average and fit every ensemble of a run configuration.
    Simulate(RunArgs),
    /// Average curve CSVs from a directory into one curve.
    Average {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one curve CSV, or every curve in a directory.
    Fit {
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "exponential")]
        method: Vec<FitMethod>,
        #[arg(long, value_delimiter = ',', default_value = "0.4")]
        l_f: Vec<f64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subsampling statistics of an ensemble of member curves.
    Bootstrap {
        /// Directory of member curve CSVs.
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,100,150,200,250")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        repeats: usize,
        #[arg(long, default_value = "exponential")]
        method: FitMethod,
        #[arg(long, default_value_t = 0.4)]
        l_f: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence of (T2, p) in r_dipole, r_bath and order.
    Scan {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        r_dipole_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        r_bath_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        order_grid: Vec<usize>,
    },
    /// Slope of log T2 against log concentration.
    Sweep(RunArgs),
    /// T2 ratios between CCE orders on shared configurations.
    CompareOrders {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reference: usize,
        #[arg(long, default_value_t = 200)]
        repeats: usize,
    },
    /// T2 against magnetic field on identical configurations.
    FieldScan {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,500")]
        fields: Vec<f64>,
    },
    /// Compare gCCE with exact evolution on random baths of 2 to 4 spins.
    OracleCheck {
        #[arg(long, default_value_t = 50)]
        baths: usize,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    config: PathBuf,
    #[arg(long)]
    scale: Option<Scale>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_json_file(&self.config)?;
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: PathBuf::from("<stdout>"),
        source,
    })?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    file: PathBuf,
    fits: Vec<workflows::FitEntry>,
}

fn fit_files(input: &Path, methods: &[FitMethod], l_fs: &[f64]) -> Result<Vec<FitReport>> {
    if let Some(bad) = l_fs.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::validation(format!("l_f values must lie in (0, 1), got {bad}")));
    }
    let files = if input.is_dir() {
        io::list_curves(input)?
    } else {
        vec![input.to_owned()]
    };
    files
        .into_iter()
        .map(|file| {
            let curve = io::read_curve(&file)?;
            let fits = methods
                .iter()
                .flat_map(|&m| l_fs.iter().map(move |&l| (m, l)))
                .map(|(m, l)| workflows::fit_entry(&curve, m, l))
                .collect();
            Ok(FitReport { file, fits })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            concentration,
            r_bath,
            order,
            count,
            seed: master,
            out,
        } => {
            let r_bath = match r_bath {
                Cutoff::Auto => default_cutoffs(order, concentration).1,
                Cutoff::Value(v) => v,
            };
            for k in 0..count as u64 {
                let config = generate_configuration(
                    concentration,
                    r_bath,
                    &LatticeSpec::DIAMOND,
                    seed::derive(master, seed::CONFIGURATION, k),
                    k,
                )?;
                io::write_configuration(&out.join(format!("config_{k:06}.json")), &config)?;
                log::info!("configuration {k}: {} spins", config.len());
            }
        }
        Command::Simulate(args) => {
            let summary = workflows::run_simulation(&args.load()?, true)?;
            for e in &summary.ensembles {
                for f in &e.fits {
                    match &f.fit {
                        Some(r) => println!(
                            "{} ppm order {} {} L_f={}: T2 = {:.6e} ms, p = {:.4}",
                            e.concentration_ppm, e.order, f.method, f.l_f, r.t2, r.p
                        ),
                        None => println!(
                            "{} ppm order {} {} L_f={}: no fit ({})",
                            e.concentration_ppm,
                            e.order,
                            f.method,
                            f.l_f,
                            f.error.as_deref().unwrap_or("")
                        ),
                    }
                }
            }
        }
        Command::Average { input, out } => {
            let curves = io::read_curves(&input)?;
            let avg = ensemble_average(&curves)?;
            io::write_curve(&out, &avg, None)?;
        }
        Command::Fit { input, method, l_f, out } => {
            let reports = fit_files(&input, &method, &l_f)?;
            match out {
                Some(path) => io::write_json(&path, &reports)?,
                None => print_json(&reports)?,
            }
        }
        Command::Bootstrap {
            input,
            sizes,
            repeats,
            method,
            l_f,
            seed,
            out,
        } => {
            let curves = io::read_curves(&input)?;
            // reference fit only; catches bad input before the repeats
            fit_curve(
                &curves[0].times,
                &ensemble_average(&curves)?.real_values(),
                method,
                l_f,
                &FitOptions::default(),
            )?;
            let results = workflows::bootstrap_report(&curves, &sizes, repeats, method, l_f, seed)?;
            workflows::write_bootstrap(&out, &results)?;
            if let Some(s) = workflows::bootstrap_summary(&results) {
                for e in &s.entries {
                    println!(
                        "N = {}: half-width dT2 = {:.4}, dp = {:.4}",
                        e.subsample_size, e.half_width_t2, e.half_width_p
                    );
                }
            }
        }
        Command::Scan {
            run,
            r_dipole_grid,
            r_bath_grid,
            order_grid,
        } => {
            let grids = ScanGrids {
                r_dipole: r_dipole_grid,
                r_bath: r_bath_grid,
                orders: order_grid,
            };
            let report = workflows::scan_convergence(&run.load()?, &grids, true)?;
            print_json(&report.rows)?;
        }
        Command::Sweep(args) => {
            let report = workflows::sweep_concentration(&args.load()?, true)?;
            print_json(&report.slopes)?;
        }
        Command::CompareOrders {
            run,
            orders,
            reference,
            repeats,
        } => {
            let report = workflows::compare_orders(&run.load()?, &orders, reference, repeats, true)?;
            for c in &report.comparisons {
                for e in &c.entries {
                    println!(
                        "{} ppm: T2(order {})/T2(order {}) = {:.4} ± {:.4}",
                        c.concentration_ppm, e.order, c.reference_order, e.ratio, e.ratio_std
                    );
                }
            }
        }
        Command::FieldScan { run, fields } => {
            let report = workflows::field_sensitivity(&run.load()?, &fields, true)?;
            print_json(&report.tables)?;
        }
        Command::OracleCheck { baths, samples, seed } => {
            let report = workflows::oracle_check(baths, seed, samples)?;
            println!(
                "{} baths: max |L_gcce - L_exact| = {:.3e} ({})",
                report.cases.len(),
                report.max_abs_difference,
                if report.passed { "pass" } else { "FAIL" }
            );
            if !report.passed {
                return Err(Error::Check(format!(
                    "oracle mismatch above {:e}",
                    workflows::ORACLE_TOLERANCE
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
