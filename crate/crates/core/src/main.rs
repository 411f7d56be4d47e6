use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde_json::json;

use gevspec::experiments::{configure_workers, parse_complex, parse_model, run_scaling, run_toeplitz, GridRule, SweepConfig, FieldPlot};
use gevspec::geometry::{build_escape, check_deformed_ellipticity, nontrapping_check, DEFAULT_HORIZON};
use gevspec::quantize::assemble_weyl;
use gevspec::spectral::{eigenvalues, pseudospectrum, ZLattice};
use gevspec::{Error, Result};

#[derive(Parser)]
#[command(name = "gps", version, about = "Spectra, pseudospectra and deformations of semiclassical Weyl operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct GridArgs {
    /// Half width L of the grid [-L, L).
    #[arg(long)]
    half_width: Option<f64>,
    /// Number of grid points (power of two); default from the Nyquist rule.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the Weyl matrix and write it in binary form.
    Quantize {
        #[arg(long)]
        model: String,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Print retained eigenvalues as CSV, nearest to z0 first.
    Spectrum {
        #[arg(long)]
        model: String,
        #[arg(long)]
        h: f64,
        #[command(flatten)]
        grid: GridArgs,
        /// Also write every eigenvalue with its boundary mass.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// sigma_min(P - z) on a square lattice; writes CSV and SVG.
    Pseudospectrum {
        #[arg(long)]
        model: String,
        #[arg(long)]
        h: f64,
        #[arg(long, allow_hyphen_values = true)]
        center: String,
        #[arg(long)]
        span: f64,
        #[arg(long)]
        res: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Free-radius and resolvent sweep described by a config file.
    Scaling {
        #[arg(long)]
        config: PathBuf,
    },
    /// Toeplitz residuals and the elliptic estimate over an h-sweep.
    Toeplitz {
        #[arg(long)]
        config: PathBuf,
    },
    /// Nontrapping check and escape function on the model's zero-set box.
    Escape {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: f64,
        /// Write the sampled escape function here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ellipticity of the deformed symbol at t = -epsilon h^(1-1/s).
    DeformCheck {
        #[arg(long)]
        model: String,
        #[arg(long)]
        h: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
}

fn grid_for(model: &gevspec::Model, h: f64, args: GridArgs) -> Result<gevspec::quantize::RealGrid> {
    let mut rule = GridRule::for_model(model);
    if let Some(l) = args.half_width {
        rule.half_width = l;
    }
    if let Some(n) = args.n {
        rule.n = Some(n);
    }
    rule.grid(h)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).unwrap_or_default());
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Quantize { model, h, out, grid } => {
            let m = parse_model(&model)?;
            let g = grid_for(&m, h, grid)?;
            let p = assemble_weyl(m.symbol.as_ref(), g, h)?;
            p.write_binary(&out)?;
            print_json(&json!({
                "model": m.tag(), "h": h, "n": g.len(), "half_width": g.half_width(),
                "out": out.display().to_string(),
            }));
        }
        Command::Spectrum { model, h, grid, out } => {
            let m = parse_model(&model)?;
            let g = grid_for(&m, h, grid)?;
            let p = assemble_weyl(m.symbol.as_ref(), g, h)?;
            let spec = eigenvalues(&p)?;
            if let Some(path) = out {
                spec.write_csv(&path)?;
            }
            println!("re,im");
            for z in spec.nearest(m.z0, usize::MAX) {
                println!("{},{}", gevspec::output::fmt17(z.re), gevspec::output::fmt17(z.im));
            }
        }
        Command::Pseudospectrum { model, h, center, span, res, out_dir, grid } => {
            let m = parse_model(&model)?;
            let g = grid_for(&m, h, grid)?;
            let p = assemble_weyl(m.symbol.as_ref(), g, h)?;
            let lattice = ZLattice::square(parse_complex(&center)?, span, res);
            let field = pseudospectrum(&p, lattice)?;
            let spec = eigenvalues(&p)?;
            let plot = FieldPlot {
                name: "pseudospectrum".into(),
                field,
                eigenvalues: spec.retained().collect(),
                disk: None,
            };
            plot.field.write_csv(&out_dir.join("pseudospectrum.csv"))?;
            plot.write_svg(&out_dir.join("pseudospectrum.svg"))?;
            let ((i, k), v) = plot.field.argmin();
            let z: Complex64 = plot.field.lattice.point(i, k);
            print_json(&json!({ "min_sigma": v, "at": [z.re, z.im], "out_dir": out_dir.display().to_string() }));
        }
        Command::Scaling { config } => {
            let cfg = SweepConfig::from_file(&config)?;
            let (_, summary, written) = run_scaling(&cfg)?;
            print_json(&summary);
            for p in written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Toeplitz { config } => {
            let cfg = SweepConfig::from_file(&config)?;
            let (_, summary) = run_toeplitz(&cfg)?;
            print_json(&summary);
        }
        Command::Escape { model, horizon, out } => {
            let m = parse_model(&model)?;
            let trap = nontrapping_check(&m, 1e-3, 0.05, horizon)?;
            let esc = build_escape(&m, horizon, None)?;
            if let Some(path) = out {
                esc.write_csv(&path)?;
            }
            let mut summary = esc.summary();
            summary["nontrapping"] = json!({
                "ok": trap.ok,
                "worst_escape_time": trap.worst_escape_time,
                "worst_point": [trap.worst_point.0, trap.worst_point.1],
            });
            print_json(&summary);
        }
        Command::DeformCheck { model, h, epsilon } => {
            let m = parse_model(&model)?;
            if !(h > 0.0 && h <= 1.0) {
                return Err(Error::InvalidH(h));
            }
            let esc = build_escape(&m, DEFAULT_HORIZON, None)?;
            let t = -epsilon * h.powf(m.order().free_region_exponent());
            let check = check_deformed_ellipticity(&m, &esc, t, 2)?;
            let mut summary = check.summary();
            summary["h"] = json!(h);
            summary["margin_c"] = json!(esc.margin_c);
            print_json(&summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
