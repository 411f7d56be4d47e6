//! Hamilton flow of `Im p`, nontrapping checks, a time-averaged escape
//! function `G`, and the ellipticity of `p` on the deformed space
//! `{ρ + i t H_G(ρ)}`.
//!
//! All routines work on the reduced symbol `q (p - z0)` of a model.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::output::{write_text, CsvSink};
use crate::scalar::Real;
use crate::symbols::{lerp, smooth_step_derivs, taylor_extension, FlatFn, GevreySymbol, ModelInstance, PhaseBox};

/// Trajectories leaving `[-FLOW_BOX, FLOW_BOX]²` are cut and flagged.
pub const FLOW_BOX: f64 = 50.0;
pub const DEFAULT_DT: f64 = 1e-2;
pub const DEFAULT_HORIZON: f64 = 4.0;
/// `|p - z0|` threshold that defines the numerical zero set.
pub const ZERO_SET_TOL: f64 = 1e-3;
/// Nodes per axis of the zero-set search lattice (odd, so box centers are nodes).
pub const ZERO_LATTICE: usize = 201;
/// Target spacing of the escape-function lattice.
pub const ESCAPE_SPACING: f64 = 0.025;
const MAX_STEPS: f64 = 1e6;

/// Order of the flat function used for every cutoff in this module.
const CUTOFF_ORDER: f64 = 2.0;

/// `H_{Im p} = (∂_ξ Im p, -∂_x Im p)`.
pub fn hamilton_field<T: Real>(sym: &dyn GevreySymbol<T>, x: T, xi: T) -> (T, T) {
    let g = sym.grad(x, xi);
    (g[1].im, -g[0].im)
}

fn rk4_step<T: Real>(sym: &dyn GevreySymbol<T>, (x, xi): (T, T), dt: T) -> (T, T) {
    let half = T::lit(0.5);
    let (k1x, k1y) = hamilton_field(sym, x, xi);
    let (k2x, k2y) = hamilton_field(sym, x + half * dt * k1x, xi + half * dt * k1y);
    let (k3x, k3y) = hamilton_field(sym, x + half * dt * k2x, xi + half * dt * k2y);
    let (k4x, k4y) = hamilton_field(sym, x + dt * k3x, xi + dt * k3y);
    let sixth = dt / T::lit(6.0);
    (
        x + sixth * (k1x + T::lit(2.0) * (k2x + k3x) + k4x),
        xi + sixth * (k1y + T::lit(2.0) * (k2y + k3y) + k4y),
    )
}

fn in_flow_box<T: Real>((x, xi): (T, T)) -> bool {
    let b = T::lit(FLOW_BOX);
    x.abs() <= b && xi.abs() <= b
}

/// `steps` RK4 steps of signed size `dt`; stops early when leaving the box.
fn march<T: Real>(sym: &dyn GevreySymbol<T>, rho: (T, T), dt: T, steps: usize) -> (Vec<(T, T)>, bool) {
    let mut pts = Vec::with_capacity(steps + 1);
    pts.push(rho);
    let mut cur = rho;
    for _ in 0..steps {
        cur = rk4_step(sym, cur, dt);
        if !(in_flow_box(cur) && cur.0.is_finite() && cur.1.is_finite()) {
            return (pts, true);
        }
        pts.push(cur);
    }
    (pts, false)
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub points: Vec<(T, T)>,
    /// `max |Im p(ρ(t)) - Im p(ρ(0))|`.
    pub energy_drift: T,
    /// The trajectory left `[-50, 50]²` before `t_max`.
    pub truncated: bool,
}

impl<T: Real> Trajectory<T> {
    pub fn end(&self) -> (T, T) {
        *self.points.last().expect("trajectory has a start point")
    }
}

/// RK4 integration of `ρ' = H_{Im p}(ρ)` up to `t_max` (negative for the
/// backward flow) with steps of at most `dt`.
pub fn flow<T: Real>(sym: &dyn GevreySymbol<T>, rho0: (T, T), t_max: T, dt: T) -> Result<Trajectory<T>> {
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(Error::Flow(format!("dt = {dt} must be positive")));
    }
    if !t_max.is_finite() {
        return Err(Error::Flow(format!("t_max = {t_max} must be finite")));
    }
    let steps_f = (t_max.abs() / dt).ceil();
    if steps_f.to_f64_lossy() > MAX_STEPS {
        return Err(Error::Flow(format!("{} steps exceed the budget of 1e6", steps_f)));
    }
    let steps = steps_f.to_f64_lossy() as usize;
    let step = if steps == 0 { T::zero() } else { t_max / T::lit(steps as f64) };
    let (points, truncated) = march(sym, rho0, step, steps);
    let e0 = sym.eval(rho0.0, rho0.1).im;
    let energy_drift = points
        .iter()
        .map(|&(x, xi)| (sym.eval(x, xi).im - e0).abs())
        .fold(T::zero(), T::max);
    let times = (0..points.len()).map(|k| step * T::lit(k as f64)).collect();
    Ok(Trajectory {
        times,
        points,
        energy_drift,
        truncated,
    })
}

/// Uniform lattice on a phase-space box, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseLattice<T> {
    pub bounds: PhaseBox<T>,
    pub nx: usize,
    pub nxi: usize,
}

impl<T: Real> PhaseLattice<T> {
    pub fn new(bounds: PhaseBox<T>, nx: usize, nxi: usize) -> Result<Self> {
        if nx < 2 || nxi < 2 || !(bounds.x.1 > bounds.x.0) || !(bounds.xi.1 > bounds.xi.0) {
            return Err(Error::Config(format!("degenerate phase lattice {nx}x{nxi}")));
        }
        Ok(Self { bounds, nx, nxi })
    }

    /// Lattice whose nodes include the corners of `inner`, with spacing at
    /// most `spacing` and `pad` extra nodes on every side.
    pub fn padded(inner: PhaseBox<T>, spacing: T, pad: usize) -> Result<Self> {
        let axis = |(lo, hi): (T, T)| {
            let n = ((hi - lo) / spacing).ceil().to_f64_lossy().max(1.0) as usize + 1;
            let step = (hi - lo) / T::lit((n - 1) as f64);
            let p = T::lit(pad as f64) * step;
            ((lo - p, hi + p), n + 2 * pad)
        };
        let (x, nx) = axis(inner.x);
        let (xi, nxi) = axis(inner.xi);
        Self::new(PhaseBox::new(x, xi), nx, nxi)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nxi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> (T, T) {
        (
            (self.bounds.x.1 - self.bounds.x.0) / T::lit((self.nx - 1) as f64),
            (self.bounds.xi.1 - self.bounds.xi.0) / T::lit((self.nxi - 1) as f64),
        )
    }

    pub fn node(&self, i: usize, j: usize) -> (T, T) {
        (lerp(self.bounds.x, i, self.nx), lerp(self.bounds.xi, j, self.nxi))
    }

    /// Flat index, `x` major.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nxi + j
    }
}

/// Lattice points with `|p - z0| <= delta` inside the model's zero-set hint.
pub fn zero_set_points<T: Real>(model: &ModelInstance<T>, delta: T) -> Result<Vec<(T, T)>> {
    let sym = model.reduced();
    let hint = search_box(model);
    let n = ZERO_LATTICE;
    let mut pts = Vec::new();
    for i in 0..n {
        let x = lerp(hint.x, i, n);
        for j in 0..n {
            let xi = lerp(hint.xi, j, n);
            if sym.eval(x, xi).norm() <= delta {
                pts.push((x, xi));
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::EmptyZeroSet {
            delta: delta.to_f64_lossy(),
        });
    }
    Ok(pts)
}

fn search_box<T: Real>(model: &ModelInstance<T>) -> PhaseBox<T> {
    model.symbol.zero_set_hint().unwrap_or_else(|| {
        let two = T::lit(2.0);
        PhaseBox::new((-two, two), (-two, two))
    })
}

/// First `|t| <= t_max` (forward or backward) at which `Re p > epsilon`.
pub fn escape_time<T: Real>(sym: &dyn GevreySymbol<T>, rho: (T, T), epsilon: T, t_max: T, dt: T) -> Option<T> {
    let steps = (t_max / dt).ceil().to_f64_lossy() as usize;
    let (mut fwd, mut bwd) = (rho, rho);
    for k in 0..=steps {
        if sym.eval(fwd.0, fwd.1).re > epsilon || sym.eval(bwd.0, bwd.1).re > epsilon {
            return Some(dt * T::lit(k as f64));
        }
        if k < steps {
            if in_flow_box(fwd) {
                fwd = rk4_step(sym, fwd, dt);
            }
            if in_flow_box(bwd) {
                bwd = rk4_step(sym, bwd, -dt);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NontrappingReport<T> {
    pub ok: bool,
    /// Largest escape time over the zero set (`+∞` if some point is trapped).
    pub worst_escape_time: T,
    pub worst_point: (T, T),
    pub zero_points: usize,
}

/// Every numerical zero point must reach `Re p > epsilon` within `|t| <= horizon`.
pub fn nontrapping_check<T: Real>(
    model: &ModelInstance<T>,
    delta: T,
    epsilon: T,
    horizon: T,
) -> Result<NontrappingReport<T>> {
    let sym = model.reduced();
    let pts = zero_set_points(model, delta)?;
    let dt = T::lit(DEFAULT_DT);
    let times: Vec<T> = pts
        .par_iter()
        .map(|&rho| escape_time(sym.as_ref(), rho, epsilon, horizon, dt).unwrap_or(T::infinity()))
        .collect();
    let (k, worst) = times
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |acc, (k, &t)| if t > acc.1 { (k, t) } else { acc });
    Ok(NontrappingReport {
        ok: worst.is_finite(),
        worst_escape_time: worst,
        worst_point: pts[k],
        zero_points: pts.len(),
    })
}

/// Knobs of [`build_escape_with`].
#[derive(Debug, Clone, Copy)]
pub struct EscapeOptions<T> {
    /// `χ_T ≡ 1` on `[0, T]`, supported in `[0, 2T]`.
    pub horizon: T,
    pub dt: T,
    pub zero_tol: T,
    /// Sample lattice; defaults to the zero-set hint padded by three nodes.
    pub lattice: Option<PhaseLattice<T>>,
}

impl<T: Real> Default for EscapeOptions<T> {
    fn default() -> Self {
        Self {
            horizon: T::lit(DEFAULT_HORIZON),
            dt: T::lit(DEFAULT_DT),
            zero_tol: T::lit(ZERO_SET_TOL),
            lattice: None,
        }
    }
}

/// `G`, `H_{Im p} G` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeSample<T> {
    pub g: T,
    /// Fourth-order finite difference of `G` along the discrete flow.
    pub hg_flow: T,
    /// `χ_cut (2 Re p + ∫ χ_T' (Re p∘Φ_t + Re p∘Φ_{-t})) + G_raw H χ_cut`.
    pub hg_identity: T,
}

/// Escape function `G = χ_cut [-∫ χ_T Re p∘Φ_t + ∫ χ_T Re p∘Φ_{-t}]`
/// sampled on a lattice.
#[derive(Clone)]
pub struct EscapeField<T: Real> {
    symbol: Arc<dyn GevreySymbol<T>>,
    flat: FlatFn,
    pub horizon: T,
    pub dt: T,
    /// Center of the cutoff ball.
    pub center: (T, T),
    /// `G = 0` outside this radius; `χ_cut ≡ 1` inside half of it.
    pub cutoff_radius: T,
    /// Box `Ω` on which the deformation is checked.
    pub omega: PhaseBox<T>,
    pub lattice: PhaseLattice<T>,
    pub g_values: Vec<T>,
    pub hg_values: Vec<T>,
    /// `-max H_{Im p} G` over the numerical zero set.
    pub margin_c: T,
    pub worst_zero_point: (T, T),
    pub zero_points: usize,
}

impl<T: Real> std::fmt::Debug for EscapeField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EscapeField")
            .field("symbol", &self.symbol.tag())
            .field("horizon", &self.horizon)
            .field("cutoff_radius", &self.cutoff_radius)
            .field("margin_c", &self.margin_c)
            .field("lattice", &(self.lattice.nx, self.lattice.nxi))
            .finish()
    }
}

pub fn build_escape<T: Real>(model: &ModelInstance<T>, horizon: T, lattice: Option<PhaseLattice<T>>) -> Result<EscapeField<T>> {
    build_escape_with(
        model,
        &EscapeOptions {
            horizon,
            lattice,
            ..EscapeOptions::default()
        },
    )
}

pub fn build_escape_with<T: Real>(model: &ModelInstance<T>, opts: &EscapeOptions<T>) -> Result<EscapeField<T>> {
    if !(opts.horizon > T::zero() && opts.dt > T::zero()) {
        return Err(Error::Config("escape horizon and dt must be positive".into()));
    }
    let omega = search_box(model);
    let lattice = match opts.lattice {
        Some(l) => l,
        None => PhaseLattice::padded(omega, T::lit(ESCAPE_SPACING), 3)?,
    };
    let mut field = EscapeField {
        symbol: model.reduced(),
        flat: FlatFn::new(CUTOFF_ORDER),
        horizon: opts.horizon,
        dt: opts.dt,
        center: omega.center(),
        cutoff_radius: T::lit(2.0) * omega.diagonal(),
        omega,
        lattice,
        g_values: Vec::new(),
        hg_values: Vec::new(),
        margin_c: T::zero(),
        worst_zero_point: omega.center(),
        zero_points: 0,
    };

    let samples: Vec<EscapeSample<T>> = (0..lattice.len())
        .into_par_iter()
        .map(|idx| {
            let (x, xi) = lattice.node(idx / lattice.nxi, idx % lattice.nxi);
            field.sample(x, xi)
        })
        .collect();
    field.g_values = samples.iter().map(|s| s.g).collect();
    field.hg_values = samples.iter().map(|s| s.hg_flow).collect();

    let zeros = zero_set_points(model, opts.zero_tol)?;
    let hg: Vec<T> = zeros.par_iter().map(|&(x, xi)| field.sample(x, xi).hg_flow).collect();
    let (k, worst) = hg
        .iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    field.margin_c = -worst;
    field.worst_zero_point = zeros[k];
    field.zero_points = zeros.len();
    if !(field.margin_c > T::zero()) {
        return Err(Error::EscapeFailure {
            margin: field.margin_c.to_f64_lossy(),
            x: zeros[k].0.to_f64_lossy(),
            xi: zeros[k].1.to_f64_lossy(),
        });
    }
    Ok(field)
}

impl<T: Real> EscapeField<T> {
    fn steps(&self) -> usize {
        // even, so composite Simpson applies
        let n = (T::lit(2.0) * self.horizon / self.dt).ceil().to_f64_lossy() as usize;
        n + n % 2
    }

    /// `(χ_T(t), χ_T'(t))`.
    fn time_cutoff(&self, t: T) -> (T, T) {
        let (v, d) = smooth_step_derivs(&self.flat, (t - self.horizon) / self.horizon);
        (T::one() - v, -d / self.horizon)
    }

    /// `(χ_cut, ∂_x χ_cut, ∂_ξ χ_cut)`.
    fn space_cutoff(&self, (x, xi): (T, T)) -> (T, T, T) {
        let half = self.cutoff_radius / T::lit(2.0);
        let (dx, dxi) = (x - self.center.0, xi - self.center.1);
        let r = dx.hypot(dxi);
        let (v, d) = smooth_step_derivs(&self.flat, (r - half) / half);
        if d == T::zero() || r == T::zero() {
            return (T::one() - v, T::zero(), T::zero());
        }
        let scale = -d / (half * r);
        (T::one() - v, scale * dx, scale * dxi)
    }

    fn outside_support(&self, (x, xi): (T, T)) -> bool {
        (x - self.center.0).hypot(xi - self.center.1) >= self.cutoff_radius
    }

    /// `G` at an arbitrary phase-space point.
    pub fn g(&self, x: T, xi: T) -> T {
        if self.outside_support((x, xi)) {
            return T::zero();
        }
        self.sample(x, xi).g
    }

    /// `G` and two independent evaluations of `H_{Im p} G`.
    pub fn sample(&self, x: T, xi: T) -> EscapeSample<T> {
        let sym = self.symbol.as_ref();
        let n = self.steps();
        let dt = T::lit(2.0) * self.horizon / T::lit(n as f64);
        let extra = 2;
        let (fwd, _) = march(sym, (x, xi), dt, n + extra);
        let (bwd, _) = march(sym, (x, xi), -dt, n + extra);
        let re = |pts: &[(T, T)]| -> Vec<T> {
            let mut v: Vec<T> = pts.iter().map(|&(a, b)| sym.eval(a, b).re).collect();
            // hold the last value past a box exit
            let last = *v.last().expect("start point");
            v.resize(n + extra + 1, last);
            v
        };
        let (rf, rb) = (re(&fwd), re(&bwd));
        let value_at = |j: isize| if j >= 0 { rf[j as usize] } else { rb[(-j) as usize] };
        let point_at = |j: isize| -> (T, T) {
            let (src, k) = if j >= 0 { (&fwd, j as usize) } else { (&bwd, (-j) as usize) };
            src[k.min(src.len() - 1)]
        };

        let third = T::one() / T::lit(3.0);
        let simpson = |k: usize| {
            let w = if k == 0 || k == n {
                T::one()
            } else if k % 2 == 1 {
                T::lit(4.0)
            } else {
                T::lit(2.0)
            };
            w * dt * third
        };
        let weights: Vec<(T, T)> = (0..=n)
            .map(|k| {
                let (c, dc) = self.time_cutoff(dt * T::lit(k as f64));
                let s = simpson(k);
                (s * c, s * dc)
            })
            .collect();

        // G_raw at Φ_{m dt} ρ for m = -2..=2
        let raw = |m: isize| -> T {
            let mut acc = T::zero();
            for (k, &(w, _)) in weights.iter().enumerate() {
                let k = k as isize;
                acc += w * (value_at(m - k) - value_at(m + k));
            }
            acc
        };
        let g_at = |m: isize| -> T {
            let p = point_at(m);
            if self.outside_support(p) {
                T::zero()
            } else {
                self.space_cutoff(p).0 * raw(m)
            }
        };
        let g0 = g_at(0);
        let hg_flow = (T::lit(8.0) * (g_at(1) - g_at(-1)) - (g_at(2) - g_at(-2))) / (T::lit(12.0) * dt);

        let mut tail = T::zero();
        for (k, &(_, wd)) in weights.iter().enumerate() {
            let k = k as isize;
            tail += wd * (value_at(k) + value_at(-k));
        }
        let (chi, cx, cxi) = self.space_cutoff((x, xi));
        let (hx, hxi) = hamilton_field(sym, x, xi);
        let hg_raw = T::lit(2.0) * rf[0] + tail;
        let hg_identity = if self.outside_support((x, xi)) {
            T::zero()
        } else {
            chi * hg_raw + raw(0) * (cx * hx + cxi * hxi)
        };
        EscapeSample {
            g: g0,
            hg_flow,
            hg_identity,
        }
    }

    pub fn g_lattice(&self, i: usize, j: usize) -> T {
        self.g_values[self.lattice.index(i, j)]
    }

    /// `(∂_x G, ∂_ξ G)` by centered differences on the lattice: sixth order
    /// in the interior, dropping to fourth and second order towards the
    /// edge, one-sided on the edge itself.
    pub fn grad_lattice(&self, i: usize, j: usize) -> (T, T) {
        let (sx, sxi) = self.lattice.spacing();
        let dx = diff_1d(|k| self.g_lattice(k, j), i, self.lattice.nx, sx);
        let dxi = diff_1d(|k| self.g_lattice(i, k), j, self.lattice.nxi, sxi);
        (dx, dxi)
    }

    /// `H_G = (∂_ξ G, -∂_x G)` at a lattice node.
    pub fn hamilton_g(&self, i: usize, j: usize) -> (T, T) {
        let (gx, gxi) = self.grad_lattice(i, j);
        (gxi, -gx)
    }

    /// `∇G · H_{Im p}` from the lattice gradient.
    pub fn hg_from_lattice(&self, i: usize, j: usize) -> T {
        let (x, xi) = self.lattice.node(i, j);
        let (hx, hxi) = hamilton_field(self.symbol.as_ref(), x, xi);
        let (gx, gxi) = self.grad_lattice(i, j);
        gx * hx + gxi * hxi
    }

    pub fn sup_g(&self) -> T {
        self.g_values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// `G` for the Bargmann weight: exact inside the lattice box, zero
    /// outside the cutoff ball, coverage error in between.
    pub fn lookup(&self, x: T, xi: T) -> Result<T> {
        if self.outside_support((x, xi)) {
            return Ok(T::zero());
        }
        if self.lattice.bounds.contains(x, xi) {
            return Ok(self.sample(x, xi).g);
        }
        Err(Error::Coverage {
            x: x.to_f64_lossy(),
            xi: xi.to_f64_lossy(),
        })
    }

    pub fn symbol(&self) -> &Arc<dyn GevreySymbol<T>> {
        &self.symbol
    }

    /// Lattice nodes inside `Ω`.
    pub fn omega_nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let eps = self.lattice.spacing().0.min(self.lattice.spacing().1) * T::lit(1e-6);
        let inner = self.omega.inflate(eps);
        (0..self.lattice.nx)
            .flat_map(move |i| (0..self.lattice.nxi).map(move |j| (i, j)))
            .filter(move |&(i, j)| {
                let (x, xi) = self.lattice.node(i, j);
                inner.contains(x, xi)
            })
    }

    /// One row per lattice node: `x, xi, G, HG`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut sink = CsvSink::create(path, &["x", "xi", "G", "HG"])?;
        for i in 0..self.lattice.nx {
            for j in 0..self.lattice.nxi {
                let (x, xi) = self.lattice.node(i, j);
                let k = self.lattice.index(i, j);
                sink.row(&[
                    x.to_f64_lossy(),
                    xi.to_f64_lossy(),
                    self.g_values[k].to_f64_lossy(),
                    self.hg_values[k].to_f64_lossy(),
                ])?;
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        json!({
            "symbol": self.symbol.tag(),
            "margin_c": self.margin_c.to_f64_lossy(),
            "T": self.horizon.to_f64_lossy(),
            "dt": self.dt.to_f64_lossy(),
            "cutoff_radius": self.cutoff_radius.to_f64_lossy(),
            "zero_points": self.zero_points,
            "worst_zero_point": [self.worst_zero_point.0.to_f64_lossy(), self.worst_zero_point.1.to_f64_lossy()],
            "sup_g": self.sup_g().to_f64_lossy(),
        })
    }
}

fn diff_1d<T: Real>(f: impl Fn(usize) -> T, i: usize, n: usize, step: T) -> T {
    if i >= 3 && i + 3 < n {
        (T::lit(45.0) * (f(i + 1) - f(i - 1)) - T::lit(9.0) * (f(i + 2) - f(i - 2)) + (f(i + 3) - f(i - 3)))
            / (T::lit(60.0) * step)
    } else if i >= 2 && i + 2 < n {
        (T::lit(8.0) * (f(i + 1) - f(i - 1)) - (f(i + 2) - f(i - 2))) / (T::lit(12.0) * step)
    } else if i >= 1 && i + 1 < n {
        (f(i + 1) - f(i - 1)) / (T::lit(2.0) * step)
    } else if i == 0 {
        (f(1) - f(0)) / step
    } else {
        (f(i) - f(i - 1)) / step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationCheck<T> {
    pub t: T,
    /// `min_Ω Re p̃(ρ + i t H_G(ρ)) / |t|`.
    pub gamma_measured: T,
    pub omega_box: PhaseBox<T>,
    pub worst_point: (T, T),
    pub ext_order: u32,
}

impl<T: Real> DeformationCheck<T> {
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "t": self.t.to_f64_lossy(),
            "gamma_measured": self.gamma_measured.to_f64_lossy(),
            "ext_order": self.ext_order,
            "omega": [[self.omega_box.x.0.to_f64_lossy(), self.omega_box.x.1.to_f64_lossy()],
                      [self.omega_box.xi.0.to_f64_lossy(), self.omega_box.xi.1.to_f64_lossy()]],
            "worst_point": [self.worst_point.0.to_f64_lossy(), self.worst_point.1.to_f64_lossy()],
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary()).expect("json value");
        write_text(path, &text)
    }
}

/// `Re p̃` on the deformed space over the lattice nodes of `Ω`.
pub fn check_deformed_ellipticity<T: Real>(
    model: &ModelInstance<T>,
    esc: &EscapeField<T>,
    t: T,
    ext_order: u32,
) -> Result<DeformationCheck<T>> {
    if !(t < T::zero()) {
        return Err(Error::DeformationParameter(t.to_f64_lossy()));
    }
    let sym = model.reduced();
    let mut gamma = T::infinity();
    let mut worst = esc.omega.center();
    for (i, j) in esc.omega_nodes() {
        let (x, xi) = esc.lattice.node(i, j);
        let (hx, hxi) = esc.hamilton_g(i, j);
        let p = taylor_extension(sym.as_ref(), ext_order, [x, xi], [t * hx, t * hxi])?;
        let g = p.re / t.abs();
        if g < gamma {
            gamma = g;
            worst = (x, xi);
        }
    }
    if !(gamma > T::zero()) {
        return Err(Error::DeformationFailure {
            gamma: gamma.to_f64_lossy(),
            x: worst.0.to_f64_lossy(),
            xi: worst.1.to_f64_lossy(),
        });
    }
    Ok(DeformationCheck {
        t,
        gamma_measured: gamma,
        omega_box: esc.omega,
        worst_point: worst,
        ext_order,
    })
}

/// Largest `|t|` of the form `t_start · 2^k` (k = 0..max_doublings) with
/// positive `gamma_measured`; `None` if already `t_start` fails.
pub fn largest_valid_deformation<T: Real>(
    model: &ModelInstance<T>,
    esc: &EscapeField<T>,
    t_start: T,
    max_doublings: usize,
    ext_order: u32,
) -> Option<T> {
    let mut best = None;
    let mut t = -t_start.abs();
    for _ in 0..=max_doublings {
        match check_deformed_ellipticity(model, esc, t, ext_order) {
            Ok(_) => best = Some(t),
            Err(_) => break,
        }
        t *= T::lit(2.0);
    }
    best
}
