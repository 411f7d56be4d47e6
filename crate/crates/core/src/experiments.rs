//! h-sweeps, power-law fits, configuration and persisted outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fbi::{
    coherent_state, egorov_conjugate, elliptic_on, fit_elliptic, make_fbi, toeplitz_on, weight_phi_t, ComplexGrid,
    EllipticSample,
};
use crate::geometry::{build_escape, check_deformed_ellipticity, EscapeField, PhaseLattice, DEFAULT_HORIZON};
use crate::output::{write_text, CsvSink};
use crate::quantize::{assemble_weyl, RealGrid};
use crate::schur::SchurForm;
use crate::spectral::{
    eigenvalues, pseudospectrum_from_schur, spectrum_free_radius, PseudospectrumField, ZLattice, SINGULAR_TOL,
};
use crate::svg::Heatmap;
use crate::symbols::{
    make_analytic_transport, make_davies, make_gevrey_transport, make_trapped_toy, Family, GevreyOrder,
    ModelInstance,
};

type C = Complex64;

/// Default half width of the real grid.
pub const DEFAULT_HALF_WIDTH: f64 = 4.0;
/// Nyquist margin of the grid rule: smallest `N` with `πh/Δx ≥ 4`.
pub const DEFAULT_XI_EXTENT: f64 = 4.0;
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Times `ε` is halved when the deformed symbol fails to be elliptic.
pub const EPSILON_HALVINGS: usize = 4;
/// Points on the circle `|z - z0| = r/2` where `sigma_min` is sampled.
pub const CIRCLE_POINTS: usize = 16;
pub const MIN_FIT_POINTS: usize = 4;
/// Allowed deviation of a fitted exponent from its target.
pub const EXPONENT_BAND: f64 = 0.15;
pub const GROWTH_R2: f64 = 0.9;
pub const TOEPLITZ_SLOPE: f64 = 0.9;
/// Resolvent norms below `POLY_BUDGET / h²` count as sub-exponential.
pub const POLY_BUDGET: f64 = 100.0;
/// `ξ0` with `tanh² ξ0 = 2/3`, where `∂_ξ⁴ tanh` vanishes.
pub const TOEPLITZ_PROBE_XI: f64 = 1.146_215_834_780_588_9;
pub const DEFAULT_PSEUDO_RES: usize = 32;

/// Worker-pool size from `GPS_WORKERS` (unset: rayon's default).
pub fn configure_workers() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var("GPS_WORKERS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("GPS_WORKERS must be a positive integer, got {raw:?}")))?;
    // a pool may already exist (e.g. in tests); keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

/// Catalog tags: `davies`, `analytic-transport`, `gevrey-transport:s=2.0`,
/// `trapped-toy`. Underscores and `gevrey_transport(s=2)` are accepted too.
pub fn parse_model(tag: &str) -> Result<ModelInstance<f64>> {
    let t = tag.trim().to_ascii_lowercase().replace('_', "-");
    match t.as_str() {
        "davies" => return Ok(make_davies()),
        "analytic-transport" => return Ok(make_analytic_transport()),
        "trapped-toy" => return Ok(make_trapped_toy()),
        _ => {}
    }
    let rest = t
        .strip_prefix("gevrey-transport")
        .ok_or_else(|| Error::UnknownModel(tag.to_string()))?;
    let rest = rest.trim_start_matches([':', '(']).trim_end_matches(')');
    let value = rest
        .strip_prefix("s=")
        .and_then(|v| v.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::UnknownModel(tag.to_string()))?;
    make_gevrey_transport(value)
}

/// `1.5`, `-0.2i`, `0.1+0.3i`, `1e-2-4e-1i`.
pub fn parse_complex(text: &str) -> Result<C> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Config(format!("cannot parse complex number {text:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some(body) = s.strip_suffix(['i', 'j']) else {
        return s.parse::<f64>().map(|re| C::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let im_of = |t: &str| match t {
        "" | "+" => Ok(1.0),
        "-" => Ok(-1.0),
        _ => t.parse::<f64>().map_err(|_| bad()),
    };
    match split {
        Some(k) => Ok(C::new(body[..k].parse().map_err(|_| bad())?, im_of(&body[k..])?)),
        None => Ok(C::new(0.0, im_of(body)?)),
    }
}

/// Flat `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(map)
}

/// Real grid per `h`: fixed `N` or the smallest power of two with
/// `πh/Δx ≥ xi_extent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRule {
    pub half_width: f64,
    pub n: Option<usize>,
    pub xi_extent: f64,
}

impl GridRule {
    pub fn for_model(model: &ModelInstance<f64>) -> Self {
        match model.family {
            Family::Davies => Self {
                half_width: 8.0,
                n: Some(512),
                xi_extent: DEFAULT_XI_EXTENT,
            },
            _ => Self {
                half_width: DEFAULT_HALF_WIDTH,
                n: None,
                xi_extent: DEFAULT_XI_EXTENT,
            },
        }
    }

    pub fn grid(&self, h: f64) -> Result<RealGrid> {
        match self.n {
            Some(n) => RealGrid::new(self.half_width, n),
            None => RealGrid::for_extent(self.half_width, h, self.xi_extent),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model_tag: String,
    pub model: ModelInstance<f64>,
    /// Strictly decreasing.
    pub h_list: Vec<f64>,
    pub grid: GridRule,
    pub epsilon: f64,
    pub output_dir: PathBuf,
    /// Recorded in the summary; every randomized step uses a fixed seed.
    pub seed: u64,
    /// Unit direction from `z0` to the resolvent probe.
    pub probe_direction: C,
    pub geometry: bool,
    pub toeplitz: bool,
    /// Phase-space center of the coherent state used by the Toeplitz probe.
    pub toeplitz_probe: (f64, f64),
    pub escape_horizon: f64,
    /// Side of the pseudospectrum lattice at the smallest `h`; 0 disables it.
    pub pseudo_res: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "h_list",
    "h_max",
    "h_min",
    "h_count",
    "half_width",
    "n",
    "xi_extent",
    "z0",
    "epsilon",
    "output_dir",
    "seed",
    "probe_direction",
    "geometry",
    "toeplitz",
    "probe_x",
    "probe_xi",
    "escape_horizon",
    "pseudospectrum_res",
];

fn parse_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("{key}: not a finite number: {v:?}")))
        })
        .transpose()
}

fn parse_usize(map: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>> {
    map.get(key)
        .map(|v| v.parse::<usize>().map_err(|_| Error::Config(format!("{key}: not a count: {v:?}"))))
        .transpose()
}

fn parse_bool(map: &BTreeMap<String, String>, key: &str) -> Result<Option<bool>> {
    map.get(key)
        .map(|v| match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
        })
        .transpose()
}

/// `count` values from `hi` down to `lo`, evenly spaced in `log h`.
pub fn geometric_h(hi: f64, lo: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(hi > lo && lo > 0.0) {
        return Err(Error::Config(format!("geometric sweep needs h_max > h_min > 0 and h_count >= 2, got {hi}, {lo}, {count}")));
    }
    let ratio = (lo / hi).powf(1.0 / (count - 1) as f64);
    Ok((0..count)
        .map(|k| if k + 1 == count { lo } else { hi * ratio.powi(k as i32) })
        .collect())
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if !cfg.output_dir.is_absolute() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_config(text)?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let model_tag = map
            .get("model")
            .ok_or_else(|| Error::Config("missing key `model`".into()))?
            .clone();
        let mut model = parse_model(&model_tag)?;
        if let Some(z0) = map.get("z0") {
            model.z0 = parse_complex(z0)?;
        }

        let h_list = match map.get("h_list") {
            Some(list) => list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("h_list: bad value {v:?}"))))
                .collect::<Result<Vec<f64>>>()?,
            None => {
                let hi = parse_f64(map, "h_max")?;
                let lo = parse_f64(map, "h_min")?;
                let count = parse_usize(map, "h_count")?;
                match (hi, lo, count) {
                    (Some(hi), Some(lo), Some(count)) => geometric_h(hi, lo, count)?,
                    _ => return Err(Error::Config("need `h_list` or all of `h_max`, `h_min`, `h_count`".into())),
                }
            }
        };
        if h_list.is_empty() {
            return Err(Error::Config("h_list is empty".into()));
        }
        if let Some(&h) = h_list.iter().find(|&&h| !(h > 0.0 && h <= 1.0)) {
            return Err(Error::Config(format!("h = {h} outside (0, 1]")));
        }
        if h_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("h_list must be strictly decreasing".into()));
        }

        let mut grid = GridRule::for_model(&model);
        if let Some(l) = parse_f64(map, "half_width")? {
            grid.half_width = l;
        }
        if let Some(n) = parse_usize(map, "n")? {
            grid.n = Some(n);
        }
        if let Some(e) = parse_f64(map, "xi_extent")? {
            grid.xi_extent = e;
        }
        for &h in &h_list {
            grid.grid(h)?;
        }

        let epsilon = parse_f64(map, "epsilon")?.unwrap_or(DEFAULT_EPSILON);
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon = {epsilon} must be positive")));
        }
        let probe_direction = match map.get("probe_direction") {
            Some(v) => parse_complex(v)?,
            None => C::new(-1.0, 0.0),
        };
        if !(probe_direction.norm() > 0.0) {
            return Err(Error::Config("probe_direction must be nonzero".into()));
        }
        let transport = matches!(model.family, Family::GevreyTransport(_) | Family::AnalyticTransport);
        let pseudo_res = parse_usize(map, "pseudospectrum_res")?.unwrap_or(DEFAULT_PSEUDO_RES);
        let escape_horizon = parse_f64(map, "escape_horizon")?.unwrap_or(DEFAULT_HORIZON);
        if !(escape_horizon > 0.0) {
            return Err(Error::Config("escape_horizon must be positive".into()));
        }
        Ok(Self {
            model_tag,
            h_list,
            grid,
            epsilon,
            output_dir: map.get("output_dir").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
            seed: map
                .get("seed")
                .map(|v| v.parse::<u64>().map_err(|_| Error::Config(format!("seed: {v:?}"))))
                .transpose()?
                .unwrap_or(0),
            probe_direction: probe_direction / probe_direction.norm(),
            geometry: parse_bool(map, "geometry")?.unwrap_or(transport),
            toeplitz: parse_bool(map, "toeplitz")?.unwrap_or(transport),
            toeplitz_probe: (
                parse_f64(map, "probe_x")?.unwrap_or(0.0),
                parse_f64(map, "probe_xi")?.unwrap_or(TOEPLITZ_PROBE_XI),
            ),
            escape_horizon,
            pseudo_res,
            model,
        })
    }

    /// `1 - 1/s`; analytic symbols use the `s = ∞` sentinel.
    pub fn exponent(&self) -> f64 {
        self.model.order().free_region_exponent()
    }

    /// `t = -ε h^{1-1/s}`.
    pub fn deformation(&self, epsilon: f64, h: f64) -> f64 {
        -epsilon * h.powf(self.exponent())
    }
}

/// One row of a sweep. Geometry columns are NaN when not computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRecord {
    pub h: f64,
    /// Distance from `z0` to the nearest retained eigenvalue.
    pub r: f64,
    /// Smallest `sigma_min(P - z)` over the circle `|z - z0| = r/2`.
    pub sigma_min_probe: f64,
    /// `‖(P - z)^{-1}‖` at the probe `z0 + r/2 · direction`.
    pub resnorm: f64,
    pub margin_c: f64,
    pub gamma: f64,
    pub toeplitz_res: f64,
}

pub const SWEEP_HEADER: [&str; 7] = ["h", "r", "sigma_min_probe", "resnorm", "margin_c", "gamma", "toeplitz_res"];

impl SweepRecord {
    pub fn row(&self) -> [f64; 7] {
        [
            self.h,
            self.r,
            self.sigma_min_probe,
            self.resnorm,
            self.margin_c,
            self.gamma,
            self.toeplitz_res,
        ]
    }

    pub fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != 7 {
            return Err(Error::Shape(format!("sweep row with {} columns", row.len())));
        }
        Ok(Self {
            h: row[0],
            r: row[1],
            sigma_min_probe: row[2],
            resnorm: row[3],
            margin_c: row[4],
            gamma: row[5],
            toeplitz_res: row[6],
        })
    }
}

/// Reads a sweep CSV back into records.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("{}: bad value {v:?}", path.display()))))
                .collect::<Result<Vec<f64>>>()?;
            SweepRecord::from_row(&row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub h: f64,
    pub reason: String,
}

/// Everything a sweep produced besides the CSV rows.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub skipped: Vec<Skipped>,
    /// Retained eigenvalues at the smallest completed `h`.
    pub last_spectrum: Vec<C>,
    pub field: Option<PseudospectrumField>,
    pub epsilon_used: Vec<f64>,
    pub csv_path: PathBuf,
}

/// Largest `ε · 2^{-k}`, `k ≤ EPSILON_HALVINGS`, with a deformed-elliptic
/// symbol, and the measured `gamma` (last attempt on failure).
fn deformation_gamma(cfg: &SweepConfig, esc: &EscapeField<f64>, h: f64) -> Result<(f64, f64)> {
    let mut eps = cfg.epsilon;
    let mut last = Err(Error::DeformationParameter(0.0));
    for _ in 0..=EPSILON_HALVINGS {
        match check_deformed_ellipticity(&cfg.model, esc, cfg.deformation(eps, h), 2) {
            Ok(check) => return Ok((eps, check.gamma_measured)),
            Err(Error::DeformationFailure { gamma, .. }) => {
                log::warn!("h = {h}: deformation with epsilon = {eps} not elliptic (gamma = {gamma:.3e})");
                last = Ok((eps, gamma));
            }
            Err(e) => return Err(e),
        }
        eps /= 2.0;
    }
    last
}

/// Escape field whose lattice box covers the phase-space footprint of a
/// complex grid, for exact `G` lookups. The coarse lattice only bounds the
/// lookup region.
fn escape_covering(cfg: &SweepConfig, cgrid: &ComplexGrid) -> Result<EscapeField<f64>> {
    let lattice = PhaseLattice::new(cgrid.phase_box().inflate(0.01), 3, 3)?;
    build_escape(&cfg.model, cfg.escape_horizon, Some(lattice))
}

/// Toeplitz residual of the coherent probe at deformation `t`.
pub fn toeplitz_probe(cfg: &SweepConfig, grid: &RealGrid, h: f64, t: f64) -> Result<f64> {
    let (x0, xi0) = cfg.toeplitz_probe;
    let u = coherent_state(grid, h, x0, xi0);
    let cgrid = ComplexGrid::for_states(&[&u], grid, h)?;
    let esc = if t != 0.0 { Some(escape_covering(cfg, &cgrid)?) } else { None };
    let p = assemble_weyl(cfg.model.symbol.as_ref(), *grid, h)?;
    let fbi = make_fbi(grid, &cgrid, h)?;
    let weight = weight_phi_t(esc.as_ref(), t, &cgrid, h)?;
    let op = egorov_conjugate(&p, &fbi)?;
    let f = fbi.apply(&u)?;
    Ok(toeplitz_on(cfg.model.symbol.as_ref(), &op, &weight, &f, &f)?.residual)
}

struct PointResult {
    record: SweepRecord,
    epsilon: f64,
    spectrum: Vec<C>,
    schur: SchurForm,
}

fn measure(cfg: &SweepConfig, esc: Option<&EscapeField<f64>>, h: f64) -> Result<PointResult> {
    let z0 = cfg.model.z0;
    let grid = cfg.grid.grid(h)?;
    let p = assemble_weyl(cfg.model.symbol.as_ref(), grid, h)?;
    let spec = eigenvalues(&p)?;
    let r = spectrum_free_radius(&spec, z0)?;
    let schur = SchurForm::new(&p.entries)?;

    let circle = (0..CIRCLE_POINTS)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / CIRCLE_POINTS as f64;
            schur.sigma_min(z0 + C::from_polar(0.5 * r, angle))
        })
        .fold(f64::INFINITY, f64::min);

    let mut sigma = schur.sigma_min(z0 + cfg.probe_direction * (0.5 * r));
    if sigma < SINGULAR_TOL {
        log::warn!("h = {h}: probe at r/2 is numerically singular, moving to 3r/4");
        sigma = schur.sigma_min(z0 + cfg.probe_direction * (0.75 * r));
        if sigma < SINGULAR_TOL {
            return Err(Error::Linalg(format!("resolvent probe singular at h = {h}")));
        }
    }

    let (mut margin_c, mut gamma, mut epsilon) = (f64::NAN, f64::NAN, f64::NAN);
    if let Some(esc) = esc {
        margin_c = esc.margin_c;
        let (eps, g) = deformation_gamma(cfg, esc, h)?;
        epsilon = eps;
        gamma = g;
    }
    let toeplitz_res = if cfg.toeplitz {
        let eps = if epsilon.is_finite() { epsilon } else { cfg.epsilon };
        toeplitz_probe(cfg, &grid, h, cfg.deformation(eps, h))?
    } else {
        f64::NAN
    };
    let mut spectrum: Vec<C> = spec.retained().collect();
    spectrum.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap_or(std::cmp::Ordering::Equal));
    Ok(PointResult {
        record: SweepRecord {
            h,
            r,
            sigma_min_probe: circle,
            resnorm: 1.0 / sigma,
            margin_c,
            gamma,
            toeplitz_res,
        },
        epsilon,
        spectrum,
        schur,
    })
}

/// Runs the sweep in decreasing `h`, appending each finished record to
/// `output_dir/sweep.csv`. Failures at one `h` are logged and skipped;
/// configuration errors abort.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    let csv_path = cfg.output_dir.join("sweep.csv");
    let mut sink = CsvSink::create(&csv_path, &SWEEP_HEADER)?;

    let esc = if cfg.geometry {
        match build_escape(&cfg.model, cfg.escape_horizon, None) {
            Ok(e) => Some(e),
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(e) => {
                log::warn!("escape function unavailable: {e}");
                None
            }
        }
    } else {
        None
    };

    let mut outcome = SweepOutcome {
        records: Vec::new(),
        skipped: Vec::new(),
        last_spectrum: Vec::new(),
        field: None,
        epsilon_used: Vec::new(),
        csv_path,
    };
    let mut last: Option<(PointResult, f64)> = None;
    for &h in &cfg.h_list {
        match measure(cfg, esc.as_ref(), h) {
            Ok(point) => {
                sink.row(&point.record.row())?;
                log::info!("h = {h}: r = {:.6e}", point.record.r);
                outcome.records.push(point.record);
                outcome.epsilon_used.push(point.epsilon);
                last = Some((point, h));
            }
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(e) => {
                log::warn!("h = {h} skipped: {e}");
                outcome.skipped.push(Skipped { h, reason: e.to_string() });
            }
        }
    }
    if let Some((point, _)) = last {
        if cfg.pseudo_res > 0 {
            let span = 4.0 * point.record.r;
            let lattice = ZLattice::square(cfg.model.z0, span, cfg.pseudo_res);
            outcome.field = Some(pseudospectrum_from_schur(&point.schur, lattice));
        }
        outcome.last_spectrum = point.spectrum;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::FitPoints(n));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Fit of `log value` against `log h`. Nonpositive or non-finite values are
/// dropped with a warning; fewer than four remaining points is an error.
pub fn fit_power_law_points(points: &[(f64, f64)]) -> Result<FitResult> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(h, v)| {
            let ok = h > 0.0 && v > 0.0 && v.is_finite() && h.is_finite();
            if !ok {
                log::warn!("excluding ({h}, {v}) from the power-law fit");
            }
            ok
        })
        .map(|&(h, v)| (h.ln(), v.ln()))
        .collect();
    if logs.len() < MIN_FIT_POINTS {
        return Err(Error::FitPoints(logs.len()));
    }
    linear_fit(&logs)
}

pub fn fit_power_law(records: &[SweepRecord], field: impl Fn(&SweepRecord) -> f64) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.h, field(r))).collect();
    fit_power_law_points(&points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthRegime {
    /// `‖R‖ ≤ POLY_BUDGET / h²` at every probe.
    Polynomial,
    /// `log ‖R‖` linear in `h^{-1/s}` with `r² ≥ GROWTH_R2`.
    Exponential,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCheck {
    /// `log ‖R‖` against `h^{-1/s}`; absent with fewer than four probes.
    pub fit: Option<FitResult>,
    pub regime: GrowthRegime,
    pub pass: bool,
}

/// Checks the resolvent against `exp(O(1) h^{-1/s})`; `s = ∞` (analytic)
/// degenerates to a fit against a constant and so relies on the
/// polynomial branch.
pub fn resolvent_growth_check(records: &[SweepRecord], s: f64) -> Result<GrowthCheck> {
    if !(s > 1.0) {
        return Err(Error::InvalidOrder(s));
    }
    if let Some(r) = records.iter().find(|r| !r.resnorm.is_finite()) {
        return Err(Error::Linalg(format!("infinite resolvent at h = {}", r.h)));
    }
    let valid: Vec<&SweepRecord> = records.iter().filter(|r| r.resnorm > 0.0 && r.h > 0.0).collect();
    let points: Vec<(f64, f64)> = valid.iter().map(|r| (r.h.powf(-1.0 / s), r.resnorm.ln())).collect();
    let fit = if points.len() >= MIN_FIT_POINTS {
        linear_fit(&points).ok()
    } else {
        None
    };
    let polynomial = !valid.is_empty() && valid.iter().all(|r| r.resnorm <= POLY_BUDGET / (r.h * r.h));
    let exponential = fit.is_some_and(|f| f.r_squared >= GROWTH_R2 && f.slope > 0.0);
    let regime = if polynomial {
        GrowthRegime::Polynomial
    } else if exponential {
        GrowthRegime::Exponential
    } else {
        GrowthRegime::Neither
    };
    Ok(GrowthCheck {
        fit,
        regime,
        pass: regime != GrowthRegime::Neither,
    })
}

fn order_s(order: GevreyOrder) -> f64 {
    match order {
        GevreyOrder::Gevrey(s) => s,
        GevreyOrder::Analytic => f64::INFINITY,
    }
}

fn fit_json(fit: &Result<FitResult>) -> serde_json::Value {
    match fit {
        Ok(f) => serde_json::to_value(f).unwrap_or(serde_json::Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Verdicts computed from the records alone, so they can be re-derived from
/// the CSV.
pub fn summarize(model_tag: &str, order: GevreyOrder, records: &[SweepRecord]) -> serde_json::Value {
    let target = order.free_region_exponent();
    let s = order_s(order);
    let r_fit = fit_power_law(records, |r| r.r);
    let lower_c = records
        .iter()
        .map(|r| r.r / r.h.powf(target))
        .fold(f64::INFINITY, f64::min);
    let min_r = records.iter().map(|r| r.r).fold(f64::INFINITY, f64::min);
    // r(h) "approaches z0" when it shrinks by at least half over the sweep
    let approaches = match (records.first(), records.last()) {
        (Some(a), Some(b)) if records.len() >= 2 => b.r <= 0.5 * a.r,
        _ => false,
    };
    let exponent_in_band = r_fit.as_ref().map(|f| (f.slope - target).abs() <= EXPONENT_BAND).unwrap_or(false);
    let plateau = r_fit.as_ref().map(|f| f.slope <= EXPONENT_BAND).unwrap_or(false) && min_r > 0.0;
    let growth = resolvent_growth_check(records, if s.is_finite() { s } else { f64::MAX });
    let gammas: Vec<f64> = records.iter().map(|r| r.gamma).filter(|g| !g.is_nan()).collect();
    let margins: Vec<f64> = records.iter().map(|r| r.margin_c).filter(|g| !g.is_nan()).collect();
    let toeplitz_fit = fit_power_law(records, |r| r.toeplitz_res);

    json!({
        "model": model_tag,
        "order_s": finite_or_null(s),
        "target_exponent": target,
        "rows": records.len(),
        "free_radius": {
            "fit": fit_json(&r_fit),
            "lower_bound_c": finite_or_null(lower_c),
            "lower_bound_holds": records.iter().all(|r| r.r > 0.0) && !records.is_empty(),
            "min_r": finite_or_null(min_r),
            "approaches_z0": approaches,
            "exponent_in_band": exponent_in_band,
            "plateau": plateau,
        },
        "resolvent_growth": match &growth {
            Ok(g) => serde_json::to_value(g).unwrap_or(serde_json::Value::Null),
            Err(e) => json!({ "error": e.to_string(), "pass": false }),
        },
        "deformation": {
            "gamma_min": finite_or_null(gammas.iter().copied().fold(f64::INFINITY, f64::min)),
            "all_positive": !gammas.is_empty() && gammas.iter().all(|&g| g > 0.0),
            "margin_c": finite_or_null(margins.first().copied().unwrap_or(f64::NAN)),
        },
        "toeplitz": {
            "fit": fit_json(&toeplitz_fit),
            "slope_ok": toeplitz_fit.as_ref().map(|f| f.slope >= TOEPLITZ_SLOPE).unwrap_or(false),
        },
    })
}

/// A pseudospectrum heatmap with its overlays.
#[derive(Debug, Clone)]
pub struct FieldPlot {
    pub name: String,
    pub field: PseudospectrumField,
    pub eigenvalues: Vec<C>,
    /// Disk `(center, radius)` drawn over the map.
    pub disk: Option<(C, f64)>,
}

impl FieldPlot {
    pub fn heatmap(&self) -> (ndarray::Array2<f64>, (f64, f64), (f64, f64)) {
        let lat = &self.field.lattice;
        let values = self.field.sigma_min.mapv(|v| v.max(1e-300).log10());
        let (nx, ny) = lat.resolution;
        let lo = lat.point(0, 0);
        let hi = lat.point(nx.saturating_sub(1), ny.saturating_sub(1));
        (values, (lo.re, hi.re), (lo.im, hi.im))
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        let (values, xr, yr) = self.heatmap();
        let mut map = Heatmap::new(&values, xr, yr);
        map.title = format!("log10 sigma_min: {}", self.name);
        map.points = self.eigenvalues.iter().map(|z| (z.re, z.im)).collect();
        if let Some((c, r)) = self.disk {
            map.circles.push((c.re, c.im, r));
        }
        map.write(path)
    }
}

/// Writes `sweep.csv` (rewritten in full), `summary.json` and one SVG and
/// CSV per pseudospectrum field. Returns the written paths.
pub fn emit_outputs(
    dir: &Path,
    records: &[SweepRecord],
    summary: &serde_json::Value,
    plots: &[FieldPlot],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let csv = dir.join("sweep.csv");
    let mut sink = CsvSink::create(&csv, &SWEEP_HEADER)?;
    for r in records {
        sink.row(&r.row())?;
    }
    written.push(csv);
    let json_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&json_path, &(text + "\n"))?;
    written.push(json_path);
    for plot in plots {
        let svg = dir.join(format!("{}.svg", plot.name));
        plot.write_svg(&svg)?;
        written.push(svg);
        let csv = dir.join(format!("{}.csv", plot.name));
        plot.field.write_csv(&csv)?;
        written.push(csv);
    }
    Ok(written)
}

/// `run_sweep` followed by `emit_outputs`, with the pseudospectrum at the
/// smallest `h` and the disk `c · h^{1-1/s}` from the fitted lower bound.
pub fn run_scaling(cfg: &SweepConfig) -> Result<(SweepOutcome, serde_json::Value, Vec<PathBuf>)> {
    let outcome = run_sweep(cfg)?;
    let mut summary = summarize(&cfg.model_tag, cfg.model.order(), &outcome.records);
    summary["h_list"] = json!(cfg.h_list);
    summary["seed"] = json!(cfg.seed);
    summary["epsilon_used"] = json!(outcome.epsilon_used.iter().map(|&e| finite_or_null(e)).collect::<Vec<_>>());
    summary["skipped"] = serde_json::to_value(&outcome.skipped).unwrap_or_default();
    let mut plots = Vec::new();
    if let (Some(field), Some(last)) = (&outcome.field, outcome.records.last()) {
        let c = summary["free_radius"]["lower_bound_c"].as_f64();
        plots.push(FieldPlot {
            name: "pseudospectrum".into(),
            field: field.clone(),
            eigenvalues: outcome.last_spectrum.clone(),
            disk: c.map(|c| (cfg.model.z0, c * last.h.powf(cfg.exponent()))),
        });
    }
    let written = emit_outputs(&cfg.output_dir, &outcome.records, &summary, &plots)?;
    Ok((outcome, summary, written))
}

/// One row of the Toeplitz/elliptic experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToeplitzRecord {
    pub h: f64,
    pub residual_flat: f64,
    pub t: f64,
    pub residual_deformed: f64,
    pub elliptic: EllipticSample,
}

pub const TOEPLITZ_HEADER: [&str; 9] = [
    "h",
    "residual_t0",
    "t",
    "residual_t",
    "outside_mass",
    "image_norm2",
    "norm2",
    "c1",
    "elliptic_h",
];

/// Toeplitz residuals at `t = 0` and `t = -ε h^{1-1/s}` for the coherent
/// probe, plus the elliptic estimate for `P - z0` with `U = κ(Ω)`.
pub fn run_toeplitz(cfg: &SweepConfig) -> Result<(Vec<ToeplitzRecord>, serde_json::Value)> {
    let csv_path = cfg.output_dir.join("toeplitz.csv");
    let mut sink = CsvSink::create(&csv_path, &TOEPLITZ_HEADER)?;
    let hint = cfg
        .model
        .symbol
        .zero_set_hint()
        .ok_or_else(|| Error::Config(format!("{} has no zero-set hint", cfg.model_tag)))?;
    let u_box = (hint.x, (-hint.xi.1, -hint.xi.0));
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &h in &cfg.h_list {
        let run = || -> Result<ToeplitzRecord> {
            let grid = cfg.grid.grid(h)?;
            let t = cfg.deformation(cfg.epsilon, h);
            let flat = toeplitz_probe(cfg, &grid, h, 0.0)?;
            let deformed = toeplitz_probe(cfg, &grid, h, t)?;
            let (x0, xi0) = cfg.toeplitz_probe;
            let u = coherent_state(&grid, h, x0, xi0);
            let cgrid = ComplexGrid::for_states(&[&u], &grid, h)?;
            let esc = escape_covering(cfg, &cgrid)?;
            let reduced = cfg.model.reduced();
            let p = assemble_weyl(reduced.as_ref(), grid, h)?;
            let fbi = make_fbi(&grid, &cgrid, h)?;
            let weight = weight_phi_t(Some(&esc), t, &cgrid, h)?;
            let op = egorov_conjugate(&p, &fbi)?;
            let elliptic = elliptic_on(reduced.as_ref(), &op, &weight, &fbi.apply(&u)?, u_box)?;
            Ok(ToeplitzRecord {
                h,
                residual_flat: flat,
                t,
                residual_deformed: deformed,
                elliptic,
            })
        };
        match run() {
            Ok(rec) => {
                let e = &rec.elliptic;
                sink.row(&[
                    rec.h,
                    rec.residual_flat,
                    rec.t,
                    rec.residual_deformed,
                    e.outside_mass,
                    e.image_norm2,
                    e.norm2,
                    e.c1,
                    e.h,
                ])?;
                records.push(rec);
            }
            Err(e) if e.exit_code() == 2 => return Err(e),
            Err(e) => {
                log::warn!("h = {h} skipped: {e}");
                skipped.push(Skipped { h, reason: e.to_string() });
            }
        }
    }
    let flat = fit_power_law_points(&records.iter().map(|r| (r.h, r.residual_flat)).collect::<Vec<_>>());
    let deformed = fit_power_law_points(&records.iter().map(|r| (r.h, r.residual_deformed)).collect::<Vec<_>>());
    let samples: Vec<EllipticSample> = records.iter().map(|r| r.elliptic).collect();
    let elliptic = fit_elliptic(&samples);
    let ok = |f: &Result<FitResult>| f.as_ref().map(|f| f.slope >= TOEPLITZ_SLOPE).unwrap_or(false);
    let summary = json!({
        "model": cfg.model_tag,
        "probe": [cfg.toeplitz_probe.0, cfg.toeplitz_probe.1],
        "epsilon": cfg.epsilon,
        "rows": records.len(),
        "toeplitz_t0": { "fit": fit_json(&flat), "slope_ok": ok(&flat) },
        "toeplitz_t": { "fit": fit_json(&deformed), "slope_ok": ok(&deformed) },
        "elliptic": match &elliptic {
            Ok(f) => json!({ "c1": f.c1, "c2": f.c2, "holds": f.holds, "slack": f.slack }),
            Err(e) => json!({ "error": e.to_string(), "holds": false }),
        },
        "skipped": serde_json::to_value(&skipped).unwrap_or_default(),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&cfg.output_dir.join("toeplitz_summary.json"), &(text + "\n"))?;
    Ok((records, summary))
}
