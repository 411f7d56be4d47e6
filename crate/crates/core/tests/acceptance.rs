//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use gevspec::experiments::{run_scaling, run_toeplitz, GridRule, SweepConfig, SweepOutcome};
use gevspec::fbi::{hermite_state, inner_l2, make_fbi, ComplexGrid};
use gevspec::geometry::{build_escape, check_deformed_ellipticity, DEFAULT_HORIZON};
use gevspec::quantize::{assemble_weyl, compose_and_extract, lattice_momentum, RealGrid};
use gevspec::spectral::eigenvalues;
use gevspec::symbols::{make_analytic_transport, make_davies, make_gevrey_transport, make_trapped_toy, CustomSymbol};
use gevspec::{Complex, Model};
use ndarray::Array1;
use serde_json::Value;

fn report(n: usize, pass: bool, detail: String) {
    // written to the handle directly so the line survives test output capture
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n}: {detail}");
}

fn transport_models() -> Vec<Model> {
    let mut models: Vec<Model> = [1.5, 2.0, 3.0].iter().map(|&s| make_gevrey_transport(s).unwrap()).collect();
    models.push(make_analytic_transport());
    models
}

#[test]
fn davies_calibration() {
    let model = make_davies::<f64>();
    let grid = RealGrid::new(8.0, 512).unwrap();
    let rot = Complex::from_polar(1.0, PI / 4.0);
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for &h in &[0.1, 0.05] {
        let start = Instant::now();
        let p = assemble_weyl(model.symbol.as_ref(), grid, h).unwrap();
        let spec = eigenvalues(&p).unwrap();
        let mut got: Vec<Complex> = spec.retained().collect();
        got.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        slowest = slowest.max(start.elapsed().as_secs_f64());
        for k in 0..10 {
            let want = rot * h * (2 * k + 1) as f64;
            let err = got.get(k).map_or(f64::INFINITY, |z| (z - want).norm() / want.norm());
            worst = worst.max(err);
        }
    }
    report(1, worst < 1e-3 && slowest < 60.0, format!("max rel err {worst:.2e}, slowest h {slowest:.1}s"));
}

#[test]
fn weyl_structure() {
    let grid = RealGrid::new(4.0, 256).unwrap();
    let h = 0.1;
    let one = CustomSymbol::constant(Complex::new(1.0, 0.0));
    let id = assemble_weyl(&one, grid, h).unwrap();
    let id_err = id
        .entries
        .indexed_iter()
        .map(|((j, k), z)| (z - Complex::new(if j == k { 1.0 } else { 0.0 }, 0.0)).norm())
        .fold(0.0, f64::max);

    let herm = assemble_weyl(&CustomSymbol::<f64>::tanh_momentum(), grid, h).unwrap().hermitian_defect();

    let r = compose_and_extract(&CustomSymbol::position(), &lattice_momentum(grid, h), grid, h).unwrap();
    let moyal = r
        .window_iter(1.5, grid.nyquist(h) / 3.0)
        .map(|(row, m)| (r.values[[row, m]] - Complex::new(0.0, 0.5)).norm())
        .fold(0.0, f64::max);

    let pass = id_err == 0.0 && herm <= 1e-10 * grid.len() as f64 && moyal < 1e-6;
    report(2, pass, format!("identity {id_err:.1e}, hermitian {herm:.1e}, x#xi {moyal:.1e}"));
}

#[test]
fn composition_remainder_bounded() {
    let a = make_gevrey_transport::<f64>(2.0).unwrap();
    let b = make_analytic_transport::<f64>();
    let rule = GridRule::for_model(&a);
    let mut norms = Vec::new();
    for &h in &[0.2, 0.1, 0.05, 0.025] {
        let grid = rule.grid(h).unwrap();
        let r = compose_and_extract(a.symbol.as_ref(), b.symbol.as_ref(), grid, h).unwrap();
        norms.push(r.sup_norm_window(1.5, 2.0));
    }
    let hi = norms.iter().copied().fold(0.0, f64::max);
    let lo = norms.iter().copied().fold(f64::INFINITY, f64::min);
    report(3, lo > 0.0 && hi / lo < 2.0, format!("sup |c-ab|/h = {norms:.3?}, variation {:.3}", hi / lo));
}

#[test]
fn fbi_unitarity() {
    let grid = RealGrid::new(4.0, 256).unwrap();
    let mut worst = 0.0f64;
    for &h in &[0.1, 0.05] {
        let states: Vec<Array1<Complex>> =
            (0..5).map(|k| hermite_state(&grid, h, 0.3 * k as f64 - 0.5, 0.4 - 0.2 * k as f64, k)).collect();
        let refs: Vec<&Array1<Complex>> = states.iter().collect();
        let cgrid = ComplexGrid::for_states(&refs, &grid, h).unwrap();
        let fbi = make_fbi(&grid, &cgrid, h).unwrap();
        for u in &states {
            let norm = inner_l2(u, u, &grid).re.sqrt();
            let image = fbi.norm_phi0(&fbi.apply(u).unwrap());
            worst = worst.max((image - norm).abs() / norm);
        }
    }
    report(4, worst <= 1e-6, format!("max relative defect {worst:.2e}"));
}

#[test]
fn toeplitz_identity() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "model = gevrey-transport:s=2.0\nh_list = 0.2, 0.1, 0.05, 0.025\nepsilon = 0.1\noutput_dir = {}\n",
        dir.path().display()
    );
    let start = Instant::now();
    let cfg = SweepConfig::parse(&text).unwrap();
    let (records, summary) = run_toeplitz(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let slope0 = summary["toeplitz_t0"]["fit"]["slope"].as_f64().unwrap_or(f64::NAN);
    let slope_t = summary["toeplitz_t"]["fit"]["slope"].as_f64().unwrap_or(f64::NAN);
    let pass = records.len() == 4 && slope0 >= 0.9 && slope_t >= 0.9 && secs < 900.0;
    report(5, pass, format!("slope t=0 {slope0:.3}, slope t=-0.1h^1/2 {slope_t:.3}, {secs:.0}s"));
}

#[test]
fn escape_function() {
    let mut margins = Vec::new();
    for s in [1.5, 2.0, 3.0] {
        let m = make_gevrey_transport::<f64>(s).unwrap();
        margins.push(build_escape(&m, DEFAULT_HORIZON, None).map(|e| e.margin_c).unwrap_or(f64::NAN));
    }
    let trapped = build_escape(&make_trapped_toy::<f64>(), DEFAULT_HORIZON, None);
    let trapped_fails = trapped.is_err();
    let pass = margins.iter().all(|&c| c > 0.0) && trapped_fails;
    let why = trapped.err().map(|e| e.to_string()).unwrap_or_else(|| "built".into());
    report(6, pass, format!("margins {margins:.3?}, trapped toy: {why}"));
}

#[test]
fn deformed_ellipticity() {
    let mut lines = Vec::new();
    let mut pass = true;
    for m in transport_models() {
        let esc = build_escape(&m, DEFAULT_HORIZON, None).unwrap();
        let exponent = m.order().free_region_exponent();
        for &h in &[0.1, 0.05, 0.025] {
            let t = -0.1 * f64::powf(h, exponent);
            match check_deformed_ellipticity(&m, &esc, t, 2) {
                Ok(c) => lines.push(format!("{}@{h}: {:.3}", m.tag(), c.gamma_measured)),
                Err(e) => {
                    pass = false;
                    lines.push(format!("{}@{h}: {e}", m.tag()));
                }
            }
        }
    }
    report(7, pass, lines.join(", "));
}

struct Sweeps {
    gevrey: (SweepOutcome, Value),
    analytic: (SweepOutcome, Value),
    secs: f64,
}

fn sweeps() -> &'static Sweeps {
    static CELL: OnceLock<Sweeps> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("gps-acceptance-{}", std::process::id()));
        let start = Instant::now();
        let run = |model: &str, sub: &str| {
            let text = format!(
                "model = {model}\nh_max = 0.2\nh_min = 0.0125\nh_count = 7\noutput_dir = {}\n",
                root.join(sub).display()
            );
            let (outcome, summary, _) = run_scaling(&SweepConfig::parse(&text).unwrap()).unwrap();
            (outcome, summary)
        };
        let gevrey = run("gevrey-transport:s=2.0", "gevrey");
        let analytic = run("analytic-transport", "analytic");
        let secs = start.elapsed().as_secs_f64();
        let _ = std::fs::remove_dir_all(&root);
        Sweeps { gevrey, analytic, secs }
    })
}

#[test]
fn spectrum_free_scaling() {
    let s = sweeps();
    let (g_out, g) = &s.gevrey;
    let (a_out, _) = &s.analytic;
    let fr = &g["free_radius"];
    let slope = fr["fit"]["slope"].as_f64().unwrap_or(f64::NAN);
    let c = fr["lower_bound_c"].as_f64().unwrap_or(f64::NAN);
    let gevrey_ok = g_out.records.len() >= 5
        && fr["lower_bound_holds"].as_bool() == Some(true)
        && (fr["approaches_z0"].as_bool() != Some(true) || fr["exponent_in_band"].as_bool() == Some(true));

    // h-independent floor: r stays above a constant well clear of an O(h) collapse
    let a_min = a_out.records.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
    let h_min = a_out.records.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
    let analytic_ok = a_out.records.len() >= 5 && a_min > 10.0 * h_min;

    report(
        8,
        gevrey_ok && analytic_ok && s.secs < 1800.0,
        format!(
            "s=2: {} points, exponent {slope:.3}, c {c:.3}; analytic: {} points, min r {a_min:.3}; {:.0}s",
            g_out.records.len(),
            a_out.records.len(),
            s.secs
        ),
    );
}

#[test]
fn resolvent_growth() {
    let s = sweeps();
    let g = &s.gevrey.1["resolvent_growth"];
    let a = &s.analytic.1["resolvent_growth"];
    let pass = g["pass"].as_bool() == Some(true) && a["pass"].as_bool() == Some(true);
    report(9, pass, format!("s=2 regime {}, analytic regime {}", g["regime"], a["regime"]));
}

fn scaling_csv(dir: &Path, tag: &str) -> Vec<u8> {
    let out = dir.join(tag);
    let cfg = dir.join(format!("{tag}.cfg"));
    std::fs::write(
        &cfg,
        format!("model = gevrey-transport:s=2.0\nh_list = 0.1, 0.07, 0.05\noutput_dir = {}\n", out.display()),
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_gps")).args(["scaling", "--config"]).arg(&cfg).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out.join("sweep.csv")).unwrap()
}

#[test]
fn scaling_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let first = scaling_csv(dir.path(), "a");
    let second = scaling_csv(dir.path(), "b");
    report(10, !first.is_empty() && first == second, format!("{} bytes, identical {}", first.len(), first == second));
}
