//! Discrete FBI (Bargmann) transform with phase `i(x - y)^2 / 2`, the
//! deformed weights `Φ_t = Φ_0 + t G∘κ^{-1}` and the Toeplitz and elliptic
//! residuals on the Bargmann side.
//!
//! Samples are stored weight-normalized: `f̃(x) = Tu(x) e^{-Φ_0(x)/h}` with
//! `Φ_0(x) = (Im x)^2 / 2`, so `‖Tu‖²_{Φ_t} = Σ |f̃|² e^{-2tG̃/h} dA`.
//! On `Λ_{Φ_0}` the point `x = a + ib` sits over `(a, -b)` in phase space.

use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::EscapeField;
use crate::output::CsvSink;
use crate::quantize::{assemble_weyl, check_h, RealGrid, WeylMatrix};
use crate::svg::Heatmap;
use crate::symbols::{taylor_extension, GevreySymbol, ModelInstance, PhaseBox};

/// Complex grid spacing in units of `√h`.
pub const SPACING_FACTOR: f64 = 0.4;
/// Half width of a state's box, in standard deviations of its Bargmann image.
pub const STATE_RADIUS: f64 = 8.0;
/// Largest edge amplitude (relative to the peak) of an interior state.
pub const EDGE_TOL: f64 = 1e-6;
/// `|ã|` below this outside `U` is rejected as non-elliptic.
pub const ELLIPTIC_FLOOR: f64 = 1e-3;
/// Step of the centered difference used for `∇G`.
const G_STEP: f64 = 1e-4;

type C = Complex64;

/// Uniform grid on a rectangle of the complex plane, indexed `j * n_re + i`
/// with `i` along `Re x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGrid {
    pub re: (f64, f64),
    pub im: (f64, f64),
    pub n_re: usize,
    pub n_im: usize,
}

impl ComplexGrid {
    pub fn new(re: (f64, f64), im: (f64, f64), n_re: usize, n_im: usize) -> Result<Self> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok(re) || !ok(im) || n_re < 2 || n_im < 2 {
            return Err(Error::Grid(format!("complex grid {re:?} x {im:?} with {n_re} x {n_im} nodes")));
        }
        Ok(Self { re, im, n_re, n_im })
    }

    /// Rectangle sampled with spacing at most `spacing` on both axes.
    pub fn with_spacing(re: (f64, f64), im: (f64, f64), spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::Grid(format!("spacing {spacing} must be positive")));
        }
        let count = |r: (f64, f64)| ((r.1 - r.0) / spacing).ceil() as usize + 1;
        Self::new(re, im, count(re), count(im))
    }

    /// Box holding the Bargmann images of the given real-side states.
    pub fn for_states(states: &[&Array1<C>], grid: &RealGrid, h: f64) -> Result<Self> {
        check_h(h)?;
        if states.is_empty() {
            return Err(Error::Grid("no states to cover".into()));
        }
        let mut re = (f64::INFINITY, f64::NEG_INFINITY);
        let mut im = (f64::INFINITY, f64::NEG_INFINITY);
        for u in states {
            let m = phase_moments(u, grid, h)?;
            let ra = STATE_RADIUS * (m.var_x + h / 2.0).sqrt();
            let rb = STATE_RADIUS * (m.var_xi + h / 2.0).sqrt();
            re = (re.0.min(m.x - ra), re.1.max(m.x + ra));
            im = (im.0.min(-m.xi - rb), im.1.max(-m.xi + rb));
            let peak = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let edge = u[0].norm().max(u[u.len() - 1].norm());
            if edge > EDGE_TOL * peak {
                return Err(Error::GridExtent(format!(
                    "state reaches the edge of [-{0}, {0}) (relative amplitude {1:.1e})",
                    grid.half_width(),
                    edge / peak
                )));
            }
        }
        // the image of an interior state is negligible past the real domain
        let l = grid.half_width();
        let re = (re.0.max(-l), re.1.min(l - grid.spacing()));
        Self::with_spacing(re, im, SPACING_FACTOR * h.sqrt())
    }

    /// Image of the zero-set hint under `κ` with margin 2.
    pub fn covering_zero_set(model: &ModelInstance<f64>, h: f64) -> Result<Self> {
        check_h(h)?;
        let hint = model
            .symbol
            .zero_set_hint()
            .ok_or_else(|| Error::Grid(format!("{} has no zero-set hint", model.tag())))?;
        let re = (hint.x.0 - 2.0, hint.x.1 + 2.0);
        let im = (-hint.xi.1 - 2.0, -hint.xi.0 + 2.0);
        Self::with_spacing(re, im, SPACING_FACTOR * h.sqrt())
    }

    pub fn len(&self) -> usize {
        self.n_re * self.n_im
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.re.1 - self.re.0) / (self.n_re - 1) as f64,
            (self.im.1 - self.im.0) / (self.n_im - 1) as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (da, db) = self.spacing();
        da * db
    }

    pub fn node(&self, k: usize) -> C {
        let (da, db) = self.spacing();
        let (i, j) = (k % self.n_re, k / self.n_re);
        C::new(self.re.0 + i as f64 * da, self.im.0 + j as f64 * db)
    }

    pub fn contains(&self, z: C) -> bool {
        (self.re.0..=self.re.1).contains(&z.re) && (self.im.0..=self.im.1).contains(&z.im)
    }

    /// Phase-space box `κ^{-1}` sends the grid into (`Λ_{Φ_0}`).
    pub fn phase_box(&self) -> PhaseBox<f64> {
        PhaseBox::new(self.re, (-self.im.1, -self.im.0))
    }
}

/// Position and momentum mean and variance of a real-side state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMoments {
    pub x: f64,
    pub xi: f64,
    pub var_x: f64,
    pub var_xi: f64,
}

pub fn phase_moments(u: &Array1<C>, grid: &RealGrid, h: f64) -> Result<PhaseMoments> {
    let n = grid.len();
    if u.len() != n {
        return Err(Error::Shape(format!("state of length {} on a grid of {n}", u.len())));
    }
    let mass: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if !(mass > 0.0) {
        return Err(Error::Grid("state has zero norm".into()));
    }
    let (mut x1, mut x2) = (0.0, 0.0);
    for (j, v) in u.iter().enumerate() {
        let (y, w) = (grid.node(j), v.norm_sqr() / mass);
        x1 += w * y;
        x2 += w * y * y;
    }
    let mut buf = u.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dk = 2.0 * std::f64::consts::PI * h / (n as f64 * grid.spacing());
    let (mut k1, mut k2) = (0.0, 0.0);
    for (m, v) in buf.iter().enumerate() {
        let signed = if m < n / 2 { m as f64 } else { m as f64 - n as f64 };
        let (xi, w) = (signed * dk, v.norm_sqr() / (mass * n as f64));
        k1 += w * xi;
        k2 += w * xi * xi;
    }
    Ok(PhaseMoments {
        x: x1,
        xi: k1,
        var_x: (x2 - x1 * x1).max(0.0),
        var_xi: (k2 - k1 * k1).max(0.0),
    })
}

/// `(πh)^{-1/4} e^{-(y - x0)^2/2h + iξ0 (y - x0)/h}`.
pub fn coherent_state(grid: &RealGrid, h: f64, x0: f64, xi0: f64) -> Array1<C> {
    let c = (std::f64::consts::PI * h).powf(-0.25);
    Array1::from_shape_fn(grid.len(), |j| {
        let d = grid.node(j) - x0;
        C::from_polar(c * (-d * d / (2.0 * h)).exp(), xi0 * d / h)
    })
}

/// `k`-th Hermite function in the semiclassical scaling, centered at
/// `(x0, ξ0)` and normalized on the grid.
pub fn hermite_state(grid: &RealGrid, h: f64, x0: f64, xi0: f64, k: usize) -> Array1<C> {
    let mut u = Array1::from_shape_fn(grid.len(), |j| {
        let d = grid.node(j) - x0;
        let s = d / h.sqrt();
        let (mut p0, mut p1) = (1.0, 2.0 * s);
        let herm = match k {
            0 => p0,
            _ => {
                for m in 1..k {
                    let next = 2.0 * s * p1 - 2.0 * m as f64 * p0;
                    p0 = p1;
                    p1 = next;
                }
                p1
            }
        };
        C::from_polar(herm * (-s * s / 2.0).exp(), xi0 * d / h)
    });
    let norm = (u.iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.spacing()).sqrt();
    u.mapv_inplace(|v| v / norm);
    u
}

/// `L²` inner product on the real grid.
pub fn inner_l2(u: &Array1<C>, v: &Array1<C>, grid: &RealGrid) -> C {
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum::<C>() * grid.spacing()
}

/// Dense sampled transform: rows are complex nodes, columns real nodes.
#[derive(Debug, Clone)]
pub struct FbiOperator {
    matrix: Array2<C>,
    pub h: f64,
    /// Constant `C` in `Tu = C h^{-3/4} ∫ e^{iφ/h} u dy`.
    pub normalization: f64,
    pub grid: RealGrid,
    pub cgrid: ComplexGrid,
}

/// Builds `T` and calibrates `C` so that the coherent state centered over
/// the grid center has unit `Φ_0` norm.
pub fn make_fbi(grid: &RealGrid, cgrid: &ComplexGrid, h: f64) -> Result<FbiOperator> {
    check_h(h)?;
    let l = grid.half_width();
    if cgrid.re.0 < -l || cgrid.re.1 > l - grid.spacing() {
        return Err(Error::GridExtent(format!(
            "Re x in [{}, {}] leaves the real grid [-{l}, {l})",
            cgrid.re.0, cgrid.re.1
        )));
    }
    let dy = grid.spacing();
    let scale = h.powf(-0.75) * dy;
    let ys = grid.nodes();
    let rows: Vec<Vec<C>> = (0..cgrid.len())
        .into_par_iter()
        .map(|k| {
            let x = cgrid.node(k);
            ys.iter()
                .map(|&y| {
                    let d = x.re - y;
                    let e = d * d / (2.0 * h);
                    if e > 745.0 {
                        C::default()
                    } else {
                        C::from_polar(scale * (-e).exp(), -x.im * d / h)
                    }
                })
                .collect()
        })
        .collect();
    let mut matrix = Array2::zeros((cgrid.len(), grid.len()));
    for (k, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            matrix[[k, j]] = v;
        }
    }
    let mut fbi = FbiOperator {
        matrix,
        h,
        normalization: 1.0,
        grid: *grid,
        cgrid: *cgrid,
    };
    let mid_re = 0.5 * (cgrid.re.0 + cgrid.re.1);
    let mid_im = 0.5 * (cgrid.im.0 + cgrid.im.1);
    let probe = coherent_state(grid, h, mid_re, -mid_im);
    let norm = fbi.norm_phi0(&fbi.apply(&probe)?);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::GridExtent("calibration state has no mass on the complex grid".into()));
    }
    fbi.matrix.mapv_inplace(|v| v / norm);
    fbi.normalization = 1.0 / norm;
    Ok(fbi)
}

impl FbiOperator {
    /// `(complex nodes, real nodes)`.
    pub fn dim(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    /// Weight-normalized samples `Tu e^{-Φ_0/h}`.
    pub fn apply(&self, u: &Array1<C>) -> Result<Array1<C>> {
        if u.len() != self.grid.len() {
            return Err(Error::Shape(format!("state of length {} for a {}-node grid", u.len(), self.grid.len())));
        }
        Ok(self.matrix.dot(u))
    }

    /// `T*` with respect to `L²(e^{-2Φ_0/h})` and `L²(dy)`.
    pub fn adjoint(&self, f: &Array1<C>) -> Result<Array1<C>> {
        if f.len() != self.cgrid.len() {
            return Err(Error::Shape(format!("sample of length {} for {} nodes", f.len(), self.cgrid.len())));
        }
        let w = self.cgrid.cell_area() / self.grid.spacing();
        let mut out = self.matrix.t().mapv(|v| v.conj()).dot(f);
        out.mapv_inplace(|v| v * w);
        Ok(out)
    }

    pub fn inner_phi0(&self, f: &Array1<C>, g: &Array1<C>) -> C {
        f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<C>() * self.cgrid.cell_area()
    }

    pub fn norm_phi0(&self, f: &Array1<C>) -> f64 {
        self.inner_phi0(f, f).re.max(0.0).sqrt()
    }
}

/// `Φ_t` on a complex grid together with the section `ξ_t = (2/i) ∂_x Φ_t`
/// and its preimage `κ^{-1}(x, ξ_t(x))`.
#[derive(Debug, Clone)]
pub struct BargmannWeight {
    pub t: f64,
    pub h: f64,
    pub cgrid: ComplexGrid,
    pub phi: Vec<f64>,
    /// `e^{-2(Φ_t - Φ_0)/h}`.
    pub factor: Vec<f64>,
    pub xi: Vec<C>,
    /// Real and imaginary parts of `κ^{-1}(x, ξ_t(x))` in phase space.
    pub preimage_re: Vec<[f64; 2]>,
    pub preimage_im: Vec<[f64; 2]>,
}

/// `Φ_t(x) = Φ_0(x) + t G(Re x, -Im x)`. At `t = 0` no escape function is
/// needed and `Φ_0` is returned exactly.
pub fn weight_phi_t(esc: Option<&EscapeField<f64>>, t: f64, cgrid: &ComplexGrid, h: f64) -> Result<BargmannWeight> {
    check_h(h)?;
    if !t.is_finite() {
        return Err(Error::DeformationParameter(t));
    }
    let nodes: Vec<C> = (0..cgrid.len()).map(|k| cgrid.node(k)).collect();
    let rows: Vec<(f64, f64, C, [f64; 2], [f64; 2])> = if t == 0.0 {
        nodes
            .iter()
            .map(|x| (x.im * x.im / 2.0, 1.0, C::new(-x.im, 0.0), [x.re, -x.im], [0.0, 0.0]))
            .collect()
    } else {
        let esc = esc.ok_or_else(|| Error::Config("a nonzero deformation needs an escape function".into()))?;
        nodes
            .par_iter()
            .map(|x| {
                let (a, b) = (x.re, -x.im);
                let g = esc.lookup(a, b)?;
                let gx = (esc.lookup(a + G_STEP, b)? - esc.lookup(a - G_STEP, b)?) / (2.0 * G_STEP);
                let gxi = (esc.lookup(a, b + G_STEP)? - esc.lookup(a, b - G_STEP)?) / (2.0 * G_STEP);
                let phi = x.im * x.im / 2.0 + t * g;
                let factor = (-2.0 * t * g / h).exp();
                let xi = C::new(b + t * gxi, -t * gx);
                Ok((phi, factor, xi, [a + t * gx, b + t * gxi], [t * gxi, -t * gx]))
            })
            .collect::<Result<_>>()?
    };
    Ok(BargmannWeight {
        t,
        h,
        cgrid: *cgrid,
        phi: rows.iter().map(|r| r.0).collect(),
        factor: rows.iter().map(|r| r.1).collect(),
        xi: rows.iter().map(|r| r.2).collect(),
        preimage_re: rows.iter().map(|r| r.3).collect(),
        preimage_im: rows.iter().map(|r| r.4).collect(),
    })
}

impl BargmannWeight {
    /// `(f, g)` in `L²(e^{-2Φ_t/h} L(dx))` for weight-normalized samples.
    pub fn inner(&self, f: &Array1<C>, g: &Array1<C>) -> C {
        let s: C = f.iter().zip(g).zip(&self.factor).map(|((a, b), w)| a * b.conj() * *w).sum();
        s * self.cgrid.cell_area()
    }

    pub fn norm(&self, f: &Array1<C>) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }

    /// `ã(x, ξ_t(x))`: order-two extension of `sym` at `κ^{-1}(x, ξ_t(x))`.
    pub fn symbol_on_section(&self, sym: &dyn GevreySymbol<f64>) -> Result<Vec<C>> {
        self.preimage_re
            .iter()
            .zip(&self.preimage_im)
            .map(|(&re, &im)| taylor_extension(sym, 2, re, im))
            .collect()
    }

    /// `‖∇(Φ_t - Φ_0)‖_∞` by differences on the grid.
    pub fn excess_gradient(&self) -> f64 {
        let (da, db) = self.cgrid.spacing();
        let (nr, ni) = (self.cgrid.n_re, self.cgrid.n_im);
        let ex = |k: usize| {
            let z = self.cgrid.node(k);
            self.phi[k] - z.im * z.im / 2.0
        };
        let mut worst = 0.0f64;
        for j in 0..ni - 1 {
            for i in 0..nr - 1 {
                let k = j * nr + i;
                let ga = (ex(k + 1) - ex(k)) / da;
                let gb = (ex(k + nr) - ex(k)) / db;
                worst = worst.max(ga.hypot(gb));
            }
        }
        worst
    }

    /// `Re x, Im x, Re u, Im u, Φ_t` with `u` the unnormalized samples.
    pub fn write_csv(&self, path: &Path, f: &Array1<C>) -> Result<()> {
        let mut sink = CsvSink::create(path, &["re_x", "im_x", "re_u", "im_u", "phi"])?;
        for (k, v) in f.iter().enumerate() {
            let x = self.cgrid.node(k);
            let u = v * (x.im * x.im / (2.0 * self.h)).exp();
            sink.row(&[x.re, x.im, u.re, u.im, self.phi[k]])?;
        }
        Ok(())
    }

    /// `log10(|u|² e^{-2Φ_t/h})` over the grid.
    pub fn write_svg(&self, path: &Path, f: &Array1<C>) -> Result<()> {
        let (nr, ni) = (self.cgrid.n_re, self.cgrid.n_im);
        let values = Array2::from_shape_fn((ni, nr), |(j, i)| {
            let k = j * nr + i;
            (f[k].norm_sqr() * self.factor[k]).max(1e-300).log10()
        });
        let mut map = Heatmap::new(&values, self.cgrid.re, self.cgrid.im);
        map.title = format!("Bargmann density, t = {}", self.t);
        map.write(path)
    }
}

/// `T P T*` applied lazily, so the Bargmann-side matrix is never formed
/// unless requested.
#[derive(Debug, Clone, Copy)]
pub struct EgorovOperator<'a> {
    pub fbi: &'a FbiOperator,
    pub p: &'a WeylMatrix,
}

pub fn egorov_conjugate<'a>(p: &'a WeylMatrix, fbi: &'a FbiOperator) -> Result<EgorovOperator<'a>> {
    if p.dim() != fbi.grid.len() {
        return Err(Error::Shape(format!("operator of size {} for a {}-node transform", p.dim(), fbi.grid.len())));
    }
    if (p.h - fbi.h).abs() > 1e-15 * p.h.max(fbi.h) {
        return Err(Error::Shape(format!("operator at h = {} and transform at h = {}", p.h, fbi.h)));
    }
    Ok(EgorovOperator { fbi, p })
}

impl EgorovOperator<'_> {
    pub fn apply(&self, f: &Array1<C>) -> Result<Array1<C>> {
        let back = self.fbi.adjoint(f)?;
        self.fbi.apply(&self.p.apply(&back))
    }

    /// Full matrix; only sensible for small complex grids.
    pub fn dense(&self) -> Array2<C> {
        let t = &self.fbi.matrix;
        let w = self.fbi.cgrid.cell_area() / self.fbi.grid.spacing();
        let tp = t.dot(&self.p.entries);
        let mut out = tp.dot(&t.t().mapv(|v| v.conj()));
        out.mapv_inplace(|v| v * w);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzReport {
    /// `|lhs - rhs| / (‖u‖ ‖v‖)` in the `Φ_t` norm.
    pub residual: f64,
    pub lhs: C,
    pub rhs: C,
    pub norm_u: f64,
    pub norm_v: f64,
}

/// Compares `(A u, v)_{Φ_t}` with `∫ ã(x, ξ_t(x)) u v̄ e^{-2Φ_t/h} L(dx)` for
/// weight-normalized Bargmann samples `u`, `v`.
pub fn toeplitz_on(
    sym: &dyn GevreySymbol<f64>,
    op: &EgorovOperator<'_>,
    weight: &BargmannWeight,
    u: &Array1<C>,
    v: &Array1<C>,
) -> Result<ToeplitzReport> {
    let au = op.apply(u)?;
    let lhs = weight.inner(&au, v);
    let a = weight.symbol_on_section(sym)?;
    let au_sym = Array1::from_shape_fn(u.len(), |k| a[k] * u[k]);
    let rhs = weight.inner(&au_sym, v);
    let (norm_u, norm_v) = (weight.norm(u), weight.norm(v));
    Ok(ToeplitzReport {
        residual: (lhs - rhs).norm() / (norm_u * norm_v),
        lhs,
        rhs,
        norm_u,
        norm_v,
    })
}

/// Toeplitz residual for real-side states `u`, `v` on `grid`.
pub fn toeplitz_residual(
    model: &ModelInstance<f64>,
    esc: Option<&EscapeField<f64>>,
    t: f64,
    u: &Array1<C>,
    v: &Array1<C>,
    grid: &RealGrid,
    h: f64,
) -> Result<ToeplitzReport> {
    let p = assemble_weyl(model.symbol.as_ref(), *grid, h)?;
    let cgrid = ComplexGrid::for_states(&[u, v], grid, h)?;
    let fbi = make_fbi(grid, &cgrid, h)?;
    let weight = weight_phi_t(esc, t, &cgrid, h)?;
    let op = egorov_conjugate(&p, &fbi)?;
    toeplitz_on(model.symbol.as_ref(), &op, &weight, &fbi.apply(u)?, &fbi.apply(v)?)
}

/// Ingredients of `∫_{ℂ∖U} |u|² e^{-2Φ_t/h} ≤ C1 ‖Au‖² + C2 h ‖u‖²` at one `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticSample {
    pub h: f64,
    /// Left-hand side: mass outside `U`.
    pub outside_mass: f64,
    pub image_norm2: f64,
    pub norm2: f64,
    /// `1 / min |ã|²` over the grid outside `U`.
    pub c1: f64,
}

/// `U` is the box `re × im` of the complex plane; `sym` should be the
/// symbol of the operator behind `op` (typically `p - z0`).
pub fn elliptic_on(
    sym: &dyn GevreySymbol<f64>,
    op: &EgorovOperator<'_>,
    weight: &BargmannWeight,
    u: &Array1<C>,
    u_box: ((f64, f64), (f64, f64)),
) -> Result<EllipticSample> {
    let cg = &weight.cgrid;
    let inside = |z: C| (u_box.0 .0..=u_box.0 .1).contains(&z.re) && (u_box.1 .0..=u_box.1 .1).contains(&z.im);
    let a = weight.symbol_on_section(sym)?;
    let mut floor = f64::INFINITY;
    let mut mass = 0.0;
    for k in 0..cg.len() {
        let z = cg.node(k);
        if inside(z) {
            continue;
        }
        let m = a[k].norm();
        if m < ELLIPTIC_FLOOR {
            return Err(Error::Ellipticity { re: z.re, im: z.im, value: m });
        }
        floor = floor.min(m);
        mass += u[k].norm_sqr() * weight.factor[k];
    }
    let au = op.apply(u)?;
    Ok(EllipticSample {
        h: weight.h,
        outside_mass: mass * cg.cell_area(),
        image_norm2: weight.norm(&au).powi(2),
        norm2: weight.norm(u).powi(2),
        c1: if floor.is_finite() { 1.0 / (floor * floor) } else { 0.0 },
    })
}

/// Elliptic estimate for a real-side state: builds `P - z0`, the transform
/// and `Φ_t`, then evaluates [`elliptic_on`].
#[allow(clippy::too_many_arguments)]
pub fn elliptic_residual(
    model: &ModelInstance<f64>,
    esc: Option<&EscapeField<f64>>,
    t: f64,
    u: &Array1<C>,
    grid: &RealGrid,
    h: f64,
    u_box: ((f64, f64), (f64, f64)),
) -> Result<EllipticSample> {
    let reduced = model.reduced();
    let p = assemble_weyl(reduced.as_ref(), *grid, h)?;
    let cgrid = ComplexGrid::for_states(&[u], grid, h)?;
    let fbi = make_fbi(grid, &cgrid, h)?;
    let weight = weight_phi_t(esc, t, &cgrid, h)?;
    let op = egorov_conjugate(&p, &fbi)?;
    elliptic_on(reduced.as_ref(), &op, &weight, &fbi.apply(u)?, u_box)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticFit {
    pub c1: f64,
    /// Fitted at the largest `h`.
    pub c2: f64,
    /// `lhs - rhs` per sample, in input order.
    pub slack: Vec<f64>,
    pub holds: bool,
}

/// `C1` is the largest ellipticity constant of the sweep; `C2` is the
/// smallest value that makes the inequality hold at the largest `h`. The
/// estimate then has to hold at every other `h` with those constants.
pub fn fit_elliptic(samples: &[EllipticSample]) -> Result<EllipticFit> {
    let top = samples
        .iter()
        .max_by(|a, b| a.h.total_cmp(&b.h))
        .ok_or(Error::FitPoints(0))?;
    let c1 = samples.iter().map(|s| s.c1).fold(0.0, f64::max);
    let c2 = ((top.outside_mass - c1 * top.image_norm2) / (top.h * top.norm2)).max(0.0);
    let tol = 1e-12;
    let slack: Vec<f64> = samples
        .iter()
        .map(|s| s.outside_mass - (c1 * s.image_norm2 + c2 * s.h * s.norm2))
        .collect();
    let holds = samples.iter().zip(&slack).all(|(s, d)| *d <= tol * s.norm2.max(1.0));
    Ok(EllipticFit { c1, c2, slack, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_escape, PhaseLattice};
    use crate::spectral::eigenvalues;
    use crate::symbols::{make_davies, make_gevrey_transport, CustomSymbol};
    use std::sync::Arc;

    fn local(grid: &RealGrid, h: f64, states: &[&Array1<C>]) -> FbiOperator {
        let cg = ComplexGrid::for_states(states, grid, h).unwrap();
        make_fbi(grid, &cg, h).unwrap()
    }

    #[test]
    fn normalization_matches_closed_form() {
        let h = 0.1;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let g = coherent_state(&grid, h, 0.0, 0.0);
        let fbi = local(&grid, h, &[&g]);
        let want = 2f64.powf(-0.5) * std::f64::consts::PI.powf(-0.75);
        assert!((fbi.normalization - want).abs() < 1e-8 * want, "{} vs {want}", fbi.normalization);
    }

    #[test]
    fn isometric_on_interior_states() {
        let h = 0.1;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let states: Vec<Array1<C>> = (0..5).map(|k| hermite_state(&grid, h, 0.3 * k as f64 - 0.5, 0.4 - 0.2 * k as f64, k)).collect();
        let refs: Vec<&Array1<C>> = states.iter().collect();
        let fbi = local(&grid, h, &refs);
        for u in &states {
            let n = fbi.norm_phi0(&fbi.apply(u).unwrap());
            let want = inner_l2(u, u, &grid).re.sqrt();
            assert!((n - want).abs() < 1e-6, "{n} vs {want}");
        }
    }

    #[test]
    fn adjoint_inverts_on_range() {
        let h = 0.1;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let u = hermite_state(&grid, h, 0.2, -0.3, 2);
        let fbi = local(&grid, h, &[&u]);
        let back = fbi.adjoint(&fbi.apply(&u).unwrap()).unwrap();
        let err = (&back - &u).iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.spacing();
        assert!(err.sqrt() < 1e-6, "{}", err.sqrt());
    }

    #[test]
    fn identity_conjugates_to_projector() {
        let h = 0.2;
        let grid = RealGrid::new(4.0, 64).unwrap();
        let u = coherent_state(&grid, h, 0.0, 0.0);
        let cg = ComplexGrid::for_states(&[&u], &grid, h).unwrap();
        let cg = ComplexGrid::new(cg.re, cg.im, 14, 14).unwrap();
        let fbi = make_fbi(&grid, &cg, h).unwrap();
        let id = WeylMatrix::identity(grid, h);
        let a = egorov_conjugate(&id, &fbi).unwrap().dense();
        let f = fbi.apply(&u).unwrap();
        let af = a.dot(&f);
        let proj = fbi.apply(&fbi.adjoint(&f).unwrap()).unwrap();
        let err = (&af - &proj).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn real_symbol_conjugates_to_hermitian() {
        let h = 0.2;
        let grid = RealGrid::new(4.0, 64).unwrap();
        let sym = CustomSymbol::<f64>::new(
            "x2",
            |x, _| C::new(x * x, 0.0),
            |x, _| [C::new(2.0 * x, 0.0), C::default()],
            |_, _| [[C::new(2.0, 0.0), C::default()], [C::default(), C::default()]],
        );
        let p = assemble_weyl(&sym, grid, h).unwrap();
        let a = coherent_state(&grid, h, 0.5, 0.0);
        let b = coherent_state(&grid, h, -0.4, 0.3);
        let fbi = local(&grid, h, &[&a, &b]);
        let op = egorov_conjugate(&p, &fbi).unwrap();
        let (fa, fb) = (fbi.apply(&a).unwrap(), fbi.apply(&b).unwrap());
        let lhs = fbi.inner_phi0(&op.apply(&fa).unwrap(), &fb);
        let rhs = fbi.inner_phi0(&fa, &op.apply(&fb).unwrap());
        assert!((lhs - rhs).norm() < 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn davies_ground_state_survives_conjugation() {
        let h = 0.1;
        let grid = RealGrid::new(8.0, 512).unwrap();
        let model = make_davies::<f64>();
        let p = assemble_weyl(model.symbol.as_ref(), grid, h).unwrap();
        let spec = eigenvalues(&p).unwrap();
        let lambda = spec.nearest(C::new(0.0, 0.0), 1)[0];
        // ground state of x^2 + i hD-type rotation: e^{-e^{iπ/4} y²/2h}
        let rot = C::from_polar(1.0, std::f64::consts::FRAC_PI_4);
        let mut u = Array1::from_shape_fn(grid.len(), |j| {
            let y = grid.node(j);
            (-rot * y * y / (2.0 * h)).exp()
        });
        let n = inner_l2(&u, &u, &grid).re.sqrt();
        u.mapv_inplace(|v| v / n);
        let pu = p.apply(&u);
        let lam_u = inner_l2(&pu, &u, &grid);
        assert!((lam_u - lambda).norm() < 1e-6, "{lam_u} vs {lambda}");
        let fbi = local(&grid, h, &[&u]);
        let op = egorov_conjugate(&p, &fbi).unwrap();
        let f = fbi.apply(&u).unwrap();
        let r = &op.apply(&f).unwrap() - &f.mapv(|v| v * lambda);
        assert!(fbi.norm_phi0(&r) < 1e-6 * fbi.norm_phi0(&f), "{}", fbi.norm_phi0(&r));
    }

    #[test]
    fn constant_symbol_is_toeplitz() {
        let h = 0.1;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let model = ModelInstance::custom(Arc::new(CustomSymbol::constant(C::new(1.0, 0.0))), C::default());
        let u = coherent_state(&grid, h, 0.2, 0.1);
        let v = coherent_state(&grid, h, 0.3, -0.1);
        let rep = toeplitz_residual(&model, None, 0.0, &u, &v, &grid, h).unwrap();
        assert!(rep.residual < 1e-6, "{}", rep.residual);
    }

    #[test]
    fn orthogonal_states_stay_orthogonal() {
        let h = 0.1;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let u = hermite_state(&grid, h, 0.0, 0.0, 0);
        let v = hermite_state(&grid, h, 0.0, 0.0, 1);
        let fbi = local(&grid, h, &[&u, &v]);
        let ip = fbi.inner_phi0(&fbi.apply(&u).unwrap(), &fbi.apply(&v).unwrap());
        assert!(ip.norm() < 1e-8, "{ip}");
    }

    #[test]
    fn fbi_rejects_grid_past_real_domain() {
        let grid = RealGrid::new(1.0, 64).unwrap();
        let cg = ComplexGrid::new((-1.5, 1.0), (-1.0, 1.0), 10, 10).unwrap();
        assert!(matches!(make_fbi(&grid, &cg, 0.1), Err(Error::GridExtent(_))));
        let wide = coherent_state(&grid, 0.1, 0.9, 0.0);
        assert!(matches!(ComplexGrid::for_states(&[&wide], &grid, 0.1), Err(Error::GridExtent(_))));
    }

    #[test]
    fn undeformed_weight_is_exact() {
        let cg = ComplexGrid::new((-1.0, 1.0), (-0.7, 0.9), 9, 7).unwrap();
        let w = weight_phi_t(None, 0.0, &cg, 0.1).unwrap();
        for k in 0..cg.len() {
            let z = cg.node(k);
            assert_eq!(w.phi[k], z.im * z.im / 2.0);
            assert_eq!(w.factor[k], 1.0);
        }
        assert!(weight_phi_t(None, 0.1, &cg, 0.1).is_err());
    }

    #[test]
    fn deformed_weight_gradient_bound_and_coverage() {
        let model = make_gevrey_transport::<f64>(2.0).unwrap();
        let cg = ComplexGrid::new((-0.6, 0.6), (-0.3, 0.3), 13, 7).unwrap();
        let bounds = cg.phase_box().inflate(0.01);
        let lat = PhaseLattice::new(bounds, 5, 5).unwrap();
        let esc = build_escape(&model, 4.0, Some(lat)).unwrap();
        let t = 0.05;
        let w = weight_phi_t(Some(&esc), t, &cg, 0.1).unwrap();
        // ‖∇G‖ by differences over the same box
        let mut grad = 0.0f64;
        for k in 0..cg.len() {
            let z = cg.node(k);
            let gx = (esc.g(z.re + 1e-4, -z.im) - esc.g(z.re - 1e-4, -z.im)) / 2e-4;
            let gb = (esc.g(z.re, -z.im + 1e-4) - esc.g(z.re, -z.im - 1e-4)) / 2e-4;
            grad = grad.max(gx.hypot(gb));
        }
        assert!(w.excess_gradient() <= t * grad * 1.05 + 1e-9, "{} vs {}", w.excess_gradient(), t * grad);
        let far = ComplexGrid::new((1.5, 2.0), (-0.3, 0.3), 3, 3).unwrap();
        assert!(matches!(weight_phi_t(Some(&esc), t, &far, 0.1), Err(Error::Coverage { .. })));
    }

    #[test]
    fn elliptic_mass_vanishes_deep_inside_u() {
        let h = 0.05;
        let grid = RealGrid::new(4.0, 256).unwrap();
        let model = make_gevrey_transport::<f64>(2.0).unwrap();
        let u = coherent_state(&grid, h, 0.0, 0.0);
        let s = elliptic_residual(&model, None, 0.0, &u, &grid, h, ((-2.0, 2.0), (-2.0, 2.0))).unwrap();
        assert!(s.outside_mass < 1e-8, "{}", s.outside_mass);
    }

    #[test]
    fn globally_elliptic_symbol_satisfies_estimate() {
        let grid = RealGrid::new(4.0, 256).unwrap();
        let sym = CustomSymbol::<f64>::new(
            "two-plus-tanh",
            |_, xi| C::new(2.0 + xi.tanh(), 0.0),
            |_, xi| [C::default(), C::new(1.0 / xi.cosh().powi(2), 0.0)],
            |_, xi| {
                let s = 1.0 / xi.cosh().powi(2);
                [[C::default(), C::default()], [C::default(), C::new(-2.0 * xi.tanh() * s, 0.0)]]
            },
        );
        let model = ModelInstance::custom(Arc::new(sym), C::default());
        let samples: Vec<EllipticSample> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&h| {
                let u = coherent_state(&grid, h, 0.3, 0.5);
                elliptic_residual(&model, None, 0.0, &u, &grid, h, ((0.0, 0.0), (0.0, 0.0))).unwrap()
            })
            .collect();
        let fit = fit_elliptic(&samples).unwrap();
        assert!(fit.holds, "{fit:?}");
        for s in &samples {
            assert!(s.outside_mass <= s.c1 * s.image_norm2 + 1e-10);
        }
    }

    #[test]
    fn export_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cg = ComplexGrid::new((-1.0, 1.0), (-1.0, 1.0), 4, 3).unwrap();
        let w = weight_phi_t(None, 0.0, &cg, 0.1).unwrap();
        let f = Array1::from_elem(cg.len(), C::new(1.0, 0.5));
        w.write_csv(&dir.path().join("u.csv"), &f).unwrap();
        w.write_svg(&dir.path().join("u.svg"), &f).unwrap();
        let text = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("re_x,im_x,re_u,im_u,phi"));
    }
}
