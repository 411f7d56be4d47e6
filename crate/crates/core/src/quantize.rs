//! Dense discretization of the semiclassical Weyl quantization `p^w(x, hD)`.
//!
//! On the grid `x_j = -L + jΔx` with the symmetric dual grid
//! `θ_m = -Θ + mΔθ`, `Θ = πh/Δx`, `Δθ = 2πh/(NΔx)`, the matrix is
//!
//! ```text
//! P_jk = (1/N) Σ_m exp(i (x_j - x_k) θ_m / h) p((x_j + x_k)/2, θ_m)
//! ```
//!
//! which reduces to one inverse FFT per anti-diagonal `j + k = const`.
//! `p ≡ 1` maps to the identity exactly and real symbols map to Hermitian
//! matrices. Vectors are plain samples with the inner product
//! `⟨u, v⟩ = Δx Σ u_k conj(v_k)`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::symbols::{CustomSymbol, GevreySymbol};

const MAGIC: &[u8; 4] = b"GPSW";

/// Uniform grid on `[-L, L)` with a power-of-two number of nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealGrid {
    half_width: f64,
    n: usize,
}

impl RealGrid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Grid(format!("half width {half_width} must be positive")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::GridSize(n));
        }
        Ok(Self { half_width, n })
    }

    /// Smallest power-of-two grid on `[-L, L)` whose Nyquist frequency
    /// `πh/Δx` reaches `extent`.
    pub fn for_extent(half_width: f64, h: f64, extent: f64) -> Result<Self> {
        let n = required_points(half_width, h, extent);
        Self::new(half_width, n)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|j| self.node(j)))
    }

    /// Dual Nyquist frequency `Θ(h) = πh/Δx`.
    pub fn nyquist(&self, h: f64) -> f64 {
        PI * h / self.spacing()
    }

    /// Dual node `θ_m = -Θ + m Δθ`.
    pub fn dual_node(&self, h: f64, m: usize) -> f64 {
        let theta = self.nyquist(h);
        -theta + 2.0 * theta * m as f64 / self.n as f64
    }

    /// Midpoint `(x_j + x_k)/2` for `j + k = s`.
    pub fn midpoint(&self, s: usize) -> f64 {
        -self.half_width + 0.5 * s as f64 * self.spacing()
    }

    pub fn check_resolution(&self, h: f64, extent: f64) -> Result<()> {
        let nyquist = self.nyquist(h);
        if nyquist + 1e-12 < extent {
            return Err(Error::Resolution {
                nyquist,
                extent,
                required_n: required_points(self.half_width, h, extent),
            });
        }
        Ok(())
    }
}

fn required_points(half_width: f64, h: f64, extent: f64) -> usize {
    // πh N / (2L) >= extent
    let raw = (2.0 * half_width * extent / (PI * h)).ceil().max(2.0) as usize;
    raw.next_power_of_two()
}

pub(crate) fn check_h(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 && h <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidH(h))
    }
}

/// Dense matrix of `p^w(x, hD)` on a [`RealGrid`].
#[derive(Debug, Clone)]
pub struct WeylMatrix {
    pub entries: Array2<Complex64>,
    pub h: f64,
    pub grid: RealGrid,
    pub symbol_tag: String,
}

impl WeylMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Wrap an arbitrary square matrix (products, test operators).
    pub fn from_entries(
        entries: Array2<Complex64>,
        h: f64,
        grid: RealGrid,
        symbol_tag: impl Into<String>,
    ) -> Result<Self> {
        if entries.nrows() != grid.len() || entries.ncols() != grid.len() {
            return Err(Error::Shape(format!(
                "{}x{} matrix on a {}-point grid",
                entries.nrows(),
                entries.ncols(),
                grid.len()
            )));
        }
        Ok(Self {
            entries,
            h,
            grid,
            symbol_tag: symbol_tag.into(),
        })
    }

    pub fn identity(grid: RealGrid, h: f64) -> Self {
        Self {
            entries: Array2::eye(grid.len()),
            h,
            grid,
            symbol_tag: "identity".into(),
        }
    }

    /// Matrix product `self · other` (composition of operators).
    pub fn compose(&self, other: &WeylMatrix) -> Result<WeylMatrix> {
        if self.grid != other.grid {
            return Err(Error::Shape("composition on different grids".into()));
        }
        Ok(WeylMatrix {
            entries: self.entries.dot(&other.entries),
            h: self.h,
            grid: self.grid,
            symbol_tag: format!("{}#{}", self.symbol_tag, other.symbol_tag),
        })
    }

    /// `max |P - P*|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for k in j..n {
                let d = self.entries[[j, k]] - self.entries[[k, j]].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// Apply to a sampled state.
    pub fn apply(&self, u: &Array1<Complex64>) -> Array1<Complex64> {
        self.entries.dot(u)
    }

    /// Binary export: 16-byte little-endian header (`b"GPSW"`, `N: u32`,
    /// `h: f64`) followed by row-major `(re, im)` pairs of `f64`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.encode(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n = u32::try_from(self.dim()).expect("matrix dimension fits in u32");
        w.write_all(MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&self.h.to_le_bytes())?;
        for z in self.entries.iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a matrix written by [`WeylMatrix::write_binary`]. The grid is not
    /// stored in the file, so the caller supplies the half width.
    pub fn read_binary(path: &Path, half_width: f64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, half_width)
    }

    pub fn decode(bytes: &[u8], half_width: f64) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Shape("missing GPSW header".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if body.len() != n * n * 16 {
            return Err(Error::Shape(format!(
                "payload of {} bytes for N = {n}",
                body.len()
            )));
        }
        let vals: Vec<Complex64> = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let entries = Array2::from_shape_vec((n, n), vals)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            entries,
            h,
            grid: RealGrid::new(half_width, n)?,
            symbol_tag: "binary".into(),
        })
    }
}

/// Quantize with the symbol's own declared ξ-extent.
pub fn assemble_weyl(sym: &dyn GevreySymbol<f64>, grid: RealGrid, h: f64) -> Result<WeylMatrix> {
    assemble_weyl_with_extent(sym, grid, h, sym.xi_extent())
}

/// Quantize `sym`, refusing grids whose Nyquist frequency is below `extent`.
pub fn assemble_weyl_with_extent(
    sym: &dyn GevreySymbol<f64>,
    grid: RealGrid,
    h: f64,
    extent: f64,
) -> Result<WeylMatrix> {
    check_h(h)?;
    grid.check_resolution(h, extent)?;
    let n = grid.len();
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let thetas: Vec<f64> = (0..n).map(|m| grid.dual_node(h, m)).collect();
    let inv_n = 1.0 / n as f64;

    // Each anti-diagonal s = j + k is written by exactly one task, so the
    // result does not depend on the worker count.
    let diagonals: Vec<Vec<Complex64>> = (0..2 * n - 1)
        .into_par_iter()
        .map_init(
            || vec![Complex64::default(); fft.get_inplace_scratch_len()],
            |scratch, s| {
                let mid = grid.midpoint(s);
                let mut buf: Vec<Complex64> = thetas.iter().map(|&t| sym.eval(mid, t)).collect();
                fft.process_with_scratch(&mut buf, scratch);
                let (lo, hi) = antidiagonal_range(s, n);
                (lo..=hi)
                    .map(|j| {
                        let d = 2 * j as isize - s as isize;
                        let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                        buf[d.rem_euclid(n as isize) as usize] * (sign * inv_n)
                    })
                    .collect()
            },
        )
        .collect();

    let mut entries = Array2::<Complex64>::zeros((n, n));
    for (s, diag) in diagonals.into_iter().enumerate() {
        let (lo, _) = antidiagonal_range(s, n);
        for (offset, value) in diag.into_iter().enumerate() {
            let j = lo + offset;
            entries[[j, s - j]] = value;
        }
    }
    Ok(WeylMatrix {
        entries,
        h,
        grid,
        symbol_tag: sym.tag(),
    })
}

/// Row range `j` of the anti-diagonal `j + k = s`.
fn antidiagonal_range(s: usize, n: usize) -> (usize, usize) {
    (s.saturating_sub(n - 1), s.min(n - 1))
}

/// Symbol samples `c(x_s, θ_m)` recovered from a matrix, on the central
/// midpoints `x_s = -L + sΔx/2`, `s ∈ [s_lo, s_hi]`.
#[derive(Debug, Clone)]
pub struct SampledSymbol {
    /// Rows indexed by `s - s_lo`, columns by `m`.
    pub values: Array2<Complex64>,
    pub s_lo: usize,
    pub grid: RealGrid,
    pub h: f64,
}

impl SampledSymbol {
    pub fn x(&self, row: usize) -> f64 {
        self.grid.midpoint(self.s_lo + row)
    }

    pub fn theta(&self, m: usize) -> f64 {
        self.grid.dual_node(self.h, m)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.values.nrows()).map(|r| self.x(r)).collect()
    }

    /// Evaluate a reference symbol on the same sample points.
    pub fn sample(&self, sym: &dyn GevreySymbol<f64>) -> Array2<Complex64> {
        Array2::from_shape_fn(self.values.dim(), |(r, m)| sym.eval(self.x(r), self.theta(m)))
    }

    /// `max |c|` over samples with `|x| <= x_max` and `|θ| <= theta_max`.
    pub fn sup_norm_window(&self, x_max: f64, theta_max: f64) -> f64 {
        self.window_iter(x_max, theta_max)
            .map(|(r, m)| self.values[[r, m]].norm())
            .fold(0.0, f64::max)
    }

    /// Sample indices inside the window `|x| <= x_max`, `|θ| <= theta_max`.
    pub fn window_iter(&self, x_max: f64, theta_max: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (rows, cols) = self.values.dim();
        (0..rows)
            .filter(move |&r| self.x(r).abs() <= x_max)
            .flat_map(move |r| {
                (0..cols)
                    .filter(move |&m| self.theta(m).abs() <= theta_max)
                    .map(move |m| (r, m))
            })
    }
}

/// Half-width of the Lagrange stencil used to move between the two
/// anti-diagonal parities.
const STENCIL_HALF: usize = 8;

/// Invert [`assemble_weyl`] on the central anti-diagonals.
///
/// An anti-diagonal of parity `r` only sees `p(θ) + (-1)^r p(θ + Θ)`. The
/// complementary combination at the same midpoint is interpolated from the
/// neighbouring anti-diagonals (16-point centered Lagrange in `x`), which is
/// exact for symbols polynomial of degree < 16 in `x`.
pub fn inverse_weyl(p: &WeylMatrix) -> Result<SampledSymbol> {
    let n = p.dim();
    if n < 4 * STENCIL_HALF {
        return Err(Error::Shape(format!("inverse needs N >= {}, got {n}", 4 * STENCIL_HALF)));
    }
    let half = n / 2;
    // anti-diagonals carrying every residue of their parity
    let full_lo = half - 1;
    let full_hi = 3 * half - 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(half);

    // folded[s - full_lo][m'] = p(θ_m') + (-1)^s p(θ_{m'+N/2})
    let folded: Vec<Vec<Complex64>> = (full_lo..=full_hi)
        .into_par_iter()
        .map(|s| {
            let r = s % 2;
            let mut y = vec![Complex64::default(); half];
            for (e, slot) in y.iter_mut().enumerate() {
                // representative d ≡ 2e + r (mod N) closest to the diagonal
                let mut d = (2 * e + r) as isize;
                if d > half as isize {
                    d -= n as isize;
                }
                let value = if d == half as isize || d == -(half as isize) {
                    // Nyquist residue: average both representatives
                    0.5 * (kernel_at(p, s, half as isize) + kernel_at(p, s, -(half as isize)))
                } else {
                    kernel_at(p, s, d)
                };
                let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                *slot = value * (sign * n as f64);
            }
            fft.process(&mut y);
            let scale = 1.0 / half as f64;
            y.iter()
                .enumerate()
                .map(|(m, v)| {
                    let demod = Complex64::from_polar(1.0, -2.0 * PI * (r * m) as f64 / n as f64);
                    v * demod * scale
                })
                .collect()
        })
        .collect();

    let weights = midpoint_lagrange_weights(STENCIL_HALF);
    let s_lo = full_lo + 2 * STENCIL_HALF - 1;
    let s_hi = full_hi - (2 * STENCIL_HALF - 1);
    let mut values = Array2::<Complex64>::zeros((s_hi - s_lo + 1, n));
    for s in s_lo..=s_hi {
        let own = &folded[s - full_lo];
        let row = s - s_lo;
        for m in 0..half {
            // other parity at the same midpoint
            let mut other = Complex64::default();
            for (i, w) in weights.iter().enumerate() {
                let off = 2 * i + 1;
                other += (folded[s + off - full_lo][m] + folded[s - off - full_lo][m]) * *w;
            }
            let (sum, diff) = if s % 2 == 0 { (own[m], other) } else { (other, own[m]) };
            values[[row, m]] = 0.5 * (sum + diff);
            values[[row, m + half]] = 0.5 * (sum - diff);
        }
    }
    Ok(SampledSymbol {
        values,
        s_lo,
        grid: p.grid,
        h: p.h,
    })
}

/// Entry on anti-diagonal `s` at offset `d = j - k`.
fn kernel_at(p: &WeylMatrix, s: usize, d: isize) -> Complex64 {
    let j = (s as isize + d) / 2;
    let k = s as isize - j;
    p.entries[[j as usize, k as usize]]
}

/// Weights `w_i` so that `f(0) ≈ Σ_i w_i (f(-(2i+1)) + f(2i+1))` for a
/// polynomial sampled on odd offsets (symmetric stencil of `2·half` points).
fn midpoint_lagrange_weights(half: usize) -> Vec<f64> {
    let nodes: Vec<f64> = (0..half)
        .flat_map(|i| {
            let o = (2 * i + 1) as f64;
            [o, -o]
        })
        .collect();
    (0..half)
        .map(|i| {
            let xi = (2 * i + 1) as f64;
            let mut w = 1.0;
            for &xk in &nodes {
                if xk != xi {
                    w *= -xk / (xi - xk);
                }
            }
            w
        })
        .collect()
}

/// `ξ` on the lattice: equal to `ξ` well inside the band and tapered to zero
/// before the Nyquist frequency, so that its kernel decays fast in `j - k`.
/// The plain sawtooth `θ_m` jumps at `±Θ` and its kernel only decays like
/// `1/(j - k)`, which pollutes every product with a non-periodic factor.
pub fn lattice_momentum(grid: RealGrid, h: f64) -> CustomSymbol<f64> {
    let theta = grid.nyquist(h);
    let cut = move |xi: f64| {
        let u = xi / (0.8 * theta);
        let w = (-u.powi(32)).exp();
        (w, -32.0 * u.powi(31) / (0.8 * theta) * w)
    };
    CustomSymbol::new(
        "lattice-momentum",
        move |_, xi| Complex64::new(xi * cut(xi).0, 0.0),
        move |_, xi| {
            let (w, dw) = cut(xi);
            [Complex64::default(), Complex64::new(w + xi * dw, 0.0)]
        },
        |_, _| [[Complex64::default(); 2]; 2],
    )
    .with_xi_extent(0.8 * theta)
}

/// Remainder `r = (c - ab)/h` of the discrete composition `A·B = c^w`.
pub fn compose_and_extract(
    a: &dyn GevreySymbol<f64>,
    b: &dyn GevreySymbol<f64>,
    grid: RealGrid,
    h: f64,
) -> Result<SampledSymbol> {
    let am = assemble_weyl(a, grid, h)?;
    let bm = assemble_weyl(b, grid, h)?;
    let mut c = inverse_weyl(&am.compose(&bm)?)?;
    let (rows, cols) = c.values.dim();
    for r in 0..rows {
        let x = c.x(r);
        for m in 0..cols {
            let theta = c.theta(m);
            let ab = a.eval(x, theta) * b.eval(x, theta);
            c.values[[r, m]] = (c.values[[r, m]] - ab) / h;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{FlatFn, PhaseBox};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    type C = Complex64;

    fn grid(n: usize) -> RealGrid {
        RealGrid::new(4.0, n).unwrap()
    }

    fn one() -> CustomSymbol<f64> {
        CustomSymbol::constant(C::new(1.0, 0.0))
    }

    /// Smooth window `exp(-x²)` times `tanh ξ`.
    fn tanh_window() -> CustomSymbol<f64> {
        CustomSymbol::new(
            "tanh-window",
            |x: f64, xi: f64| C::new(xi.tanh() * (-x * x).exp(), 0.0),
            |x: f64, xi: f64| {
                let w = (-x * x).exp();
                let t = xi.tanh();
                [C::new(-2.0 * x * w * t, 0.0), C::new(w * (1.0 - t * t), 0.0)]
            },
            |_, _| [[C::default(); 2]; 2],
        )
    }

    #[test]
    fn grid_basics() {
        let g = grid(64);
        assert_abs_diff_eq!(g.spacing() * 64.0, 8.0);
        assert_eq!(g.node(0), -4.0);
        assert!(matches!(RealGrid::new(4.0, 48), Err(Error::GridSize(48))));
        assert!(RealGrid::new(-1.0, 64).is_err());
        let r = RealGrid::for_extent(4.0, 0.0125, 4.0).unwrap();
        assert_eq!(r.len(), 1024);
        assert!(r.nyquist(0.0125) >= 4.0);
        assert!(RealGrid::new(4.0, 512).unwrap().nyquist(0.0125) < 4.0);
    }

    #[test]
    fn nyquist_violation_names_required_size() {
        let g = grid(64);
        let err = assemble_weyl_with_extent(&one(), g, 0.01, 4.0).unwrap_err();
        match err {
            Error::Resolution { required_n, .. } => assert_eq!(required_n, 1024),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(assemble_weyl(&one(), g, 0.0), Err(Error::InvalidH(_))));
        assert!(matches!(assemble_weyl(&one(), g, 1.5), Err(Error::InvalidH(_))));
    }

    #[test]
    fn constant_one_is_identity_exactly() {
        for &n in &[8usize, 64, 256] {
            let g = grid(n);
            let p = assemble_weyl_with_extent(&one(), g, 0.5, 0.0).unwrap();
            for j in 0..n {
                for k in 0..n {
                    let want = if j == k { 1.0 } else { 0.0 };
                    let z = p.entries[[j, k]];
                    assert!((z.re - want).abs() < 1e-15 && z.im.abs() < 1e-15, "({j},{k}) = {z}");
                }
            }
        }
    }

    #[test]
    fn position_is_diagonal() {
        let g = grid(8);
        let p = assemble_weyl_with_extent(&CustomSymbol::position(), g, 0.5, 0.0).unwrap();
        for j in 0..8 {
            for k in 0..8 {
                let want = if j == k { g.node(j) } else { 0.0 };
                assert!((p.entries[[j, k]] - C::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn momentum_on_plane_waves() {
        let g = grid(128);
        let h = 0.1;
        let p = assemble_weyl_with_extent(&CustomSymbol::momentum(), g, h, 0.0).unwrap();
        for &m in &[1usize, 17, 64, 100, 127] {
            let theta = g.dual_node(h, m);
            let u = Array1::from_iter((0..128).map(|j| C::from_polar(1.0, theta * g.node(j) / h)));
            let pu = p.apply(&u);
            let err = (&pu - &u.mapv(|z| z * theta)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "θ_{m}: {err}");
        }
    }

    #[test]
    fn real_symbols_are_hermitian() {
        let g = grid(256);
        let p = assemble_weyl(&tanh_window(), g, 0.05).unwrap();
        assert!(p.hermitian_defect() <= 1e-10 * 256.0);
    }

    #[test]
    fn linearity() {
        let g = grid(64);
        let h = 0.2;
        let a = tanh_window();
        let b = CustomSymbol::position();
        let (alpha, beta) = (C::new(0.3, -1.2), C::new(-2.0, 0.5));
        let combo = CustomSymbol::new(
            "combo",
            move |x, xi| alpha * tanh_window().eval(x, xi) + beta * C::new(x, 0.0),
            |_, _| [C::default(); 2],
            |_, _| [[C::default(); 2]; 2],
        );
        let lhs = assemble_weyl(&combo, g, h).unwrap().entries;
        let rhs = assemble_weyl(&a, g, h).unwrap().entries * alpha
            + assemble_weyl(&b, g, h).unwrap().entries * beta;
        let err = (&lhs - &rhs).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn translation_covariance() {
        // ξ-independent symbol shifted by one node: P' = S P S^{-1}
        let g = grid(128);
        let h = 0.1;
        let dx = g.spacing();
        let bump = |x: f64| (-(x * x) * 2.0).exp();
        let p0 = CustomSymbol::new("b0", move |x, xi: f64| C::new(bump(x), xi.tanh()), |_, _| [C::default(); 2], |_, _| [[C::default(); 2]; 2]);
        let p1 = CustomSymbol::new("b1", move |x, xi: f64| C::new(bump(x - dx), xi.tanh()), |_, _| [C::default(); 2], |_, _| [[C::default(); 2]; 2]);
        let a = assemble_weyl(&p0, g, h).unwrap();
        let b = assemble_weyl(&p1, g, h).unwrap();
        let n = 128;
        let mut err = 0.0f64;
        for j in 1..n {
            for k in 1..n {
                let shifted = a.entries[[j - 1, k - 1]];
                err = err.max((b.entries[[j, k]] - shifted).norm());
            }
        }
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn binary_roundtrip() {
        let g = grid(32);
        let p = assemble_weyl(&tanh_window(), g, 0.4).unwrap();
        let mut buf = Vec::new();
        p.encode(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 32 * 32 * 16);
        assert_eq!(&buf[..4], b"GPSW");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 32);
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 0.4);
        let q = WeylMatrix::decode(&buf, 4.0).unwrap();
        assert_eq!(q.entries, p.entries);
        assert_eq!(q.h, 0.4);
        assert!(WeylMatrix::decode(&buf[..20], 4.0).is_err());
    }

    #[test]
    fn inverse_of_identity_and_position() {
        let g = grid(128);
        let h = 0.1;
        let id = inverse_weyl(&WeylMatrix::identity(g, h)).unwrap();
        for z in id.values.iter() {
            assert!((z - C::new(1.0, 0.0)).norm() < 1e-13);
        }
        let px = assemble_weyl_with_extent(&CustomSymbol::position(), g, h, 0.0).unwrap();
        let c = inverse_weyl(&px).unwrap();
        for r in 0..c.values.nrows() {
            for m in 0..128 {
                assert!((c.values[[r, m]] - C::new(c.x(r), 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_roundtrip_smooth_symbol() {
        let g = grid(256);
        let h = 0.05;
        let sym = tanh_window();
        let c = inverse_weyl(&assemble_weyl(&sym, g, h).unwrap()).unwrap();
        let want = c.sample(&sym);
        let err = (&c.values - &want).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn compose_identity_gives_zero_remainder() {
        let g = grid(128);
        let r = compose_and_extract(&one(), &tanh_window(), g, 0.1).unwrap();
        assert!(r.sup_norm_window(10.0, 100.0) < 1e-9);
    }

    #[test]
    fn position_momentum_moyal_term() {
        // x # ξ = xξ + ih/2
        let g = grid(256);
        for &h in &[0.1, 0.05] {
            let r = compose_and_extract(&CustomSymbol::position(), &lattice_momentum(g, h), g, h).unwrap();
            let mut worst = 0.0f64;
            for (row, m) in r.window_iter(1.5, g.nyquist(h) / 3.0) {
                worst = worst.max((r.values[[row, m]] - C::new(0.0, 0.5)).norm());
            }
            assert!(worst < 1e-6, "h = {h}: {worst}");
        }
    }

    #[test]
    fn commuting_momentum_symbols_have_small_remainder() {
        let g = RealGrid::new(4.0, 512).unwrap();
        let t = CustomSymbol::tanh_momentum();
        let r = compose_and_extract(&t, &t, g, 0.05).unwrap();
        assert!(r.sup_norm_window(1.5, 2.0) < 1e-8);
    }

    #[test]
    fn flat_window_symbol_recovers() {
        // Gevrey-flat window in x: exercised by the transport models
        let flat = FlatFn::new(2.0);
        let sym = CustomSymbol::new(
            "flat",
            move |x: f64, xi: f64| C::new(flat.value(x * x - 1.0), xi.tanh()),
            |_, _| [C::default(); 2],
            |_, _| [[C::default(); 2]; 2],
        )
        .with_zero_set_hint(PhaseBox::new((-1.0, 1.0), (0.0, 0.0)));
        let g = RealGrid::new(4.0, 512).unwrap();
        let c = inverse_weyl(&assemble_weyl(&sym, g, 0.025).unwrap()).unwrap();
        let want = c.sample(&sym);
        let err = (&c.values - &want).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn real_polynomial_symbols_hermitian(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -1.0f64..1.0, h in 0.05f64..0.5) {
            let sym = CustomSymbol::new(
                "poly",
                move |x: f64, xi: f64| C::new(a * x * x + b * x * xi + c * xi * xi * xi, 0.0),
                |_, _| [C::default(); 2],
                |_, _| [[C::default(); 2]; 2],
            );
            let g = grid(64);
            let p = assemble_weyl_with_extent(&sym, g, h, 0.0).unwrap();
            prop_assert!(p.hermitian_defect() <= 1e-10 * 64.0);
        }
    }
}
