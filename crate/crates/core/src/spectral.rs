//! Eigenvalues, smallest singular values, pseudospectra and resolvent norms
//! of dense Weyl matrices.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Eigh, FactorizeInto, Solve, UPLO, SVD};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::output::write_csv;
use crate::quantize::WeylMatrix;
use crate::schur::SchurForm;

/// Largest matrix handed to the dense eigensolver.
pub const DENSE_BUDGET: usize = 2048;
/// Largest matrix for which `sigma_min` uses a full SVD.
pub const SVD_LIMIT: usize = 512;
/// Eigenvectors with more than this fraction of mass near the edges are
/// treated as artifacts of domain truncation.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;
/// Width of the edge window, as a fraction of the half width.
pub const BOUNDARY_FRACTION: f64 = 0.1;
/// Largest pseudospectrum lattice per axis.
pub const LATTICE_BUDGET: usize = 512;
/// `sigma_min` below this counts as singular for the resolvent.
pub const SINGULAR_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<Complex64>,
    pub boundary_mass: Vec<f64>,
    pub h: f64,
    pub symbol_tag: String,
}

impl SpectrumResult {
    pub fn is_retained(&self, i: usize) -> bool {
        self.boundary_mass[i] <= BOUNDARY_MASS_TOL
    }

    /// Eigenvalues that pass the boundary-mass filter.
    pub fn retained(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.is_retained(i))
            .map(|(_, &z)| z)
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }

    /// Retained eigenvalues sorted by distance to `z0`.
    pub fn nearest(&self, z0: Complex64, count: usize) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = self.retained().collect();
        v.sort_by(|a, b| (a - z0).norm().total_cmp(&(b - z0).norm()));
        v.truncate(count);
        v
    }

    /// `Re λ, Im λ, boundary_mass` per eigenvalue.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["re", "im", "boundary_mass"],
            self.eigenvalues
                .iter()
                .zip(&self.boundary_mass)
                .map(|(z, &m)| vec![z.re, z.im, m]),
        )
    }
}

/// All eigenvalues of `P` with the boundary mass of each eigenvector.
pub fn eigenvalues(p: &WeylMatrix) -> Result<SpectrumResult> {
    let n = p.dim();
    if n > DENSE_BUDGET {
        return Err(Error::Budget { n, max: DENSE_BUDGET });
    }
    let (vals, vecs) = match p.entries.eig() {
        Ok(v) => v,
        Err(e) => {
            let dump = dump_path("eig");
            let saved = p.write_binary(&dump);
            log::error!("eigensolver failed: {e}; matrix saved: {}", saved.is_ok());
            return Err(Error::NoConvergence {
                info: lapack_info(&e.to_string()),
                dump,
            });
        }
    };
    let edge = (1.0 - BOUNDARY_FRACTION) * p.grid.half_width();
    let outer: Vec<bool> = (0..n).map(|j| p.grid.node(j).abs() >= edge).collect();
    let boundary_mass = (0..n)
        .map(|k| {
            let col = vecs.column(k);
            let (mut total, mut edge_mass) = (0.0, 0.0);
            for (j, v) in col.iter().enumerate() {
                let m = v.norm_sqr();
                total += m;
                if outer[j] {
                    edge_mass += m;
                }
            }
            if total > 0.0 {
                (edge_mass / total).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect();
    Ok(SpectrumResult {
        eigenvalues: vals.to_vec(),
        boundary_mass,
        h: p.h,
        symbol_tag: p.symbol_tag.clone(),
    })
}

fn dump_path(what: &str) -> PathBuf {
    std::env::temp_dir().join(format!("gps-{what}-failure-{}.bin", std::process::id()))
}

fn lapack_info(msg: &str) -> i32 {
    msg.rsplit(|c: char| !(c.is_ascii_digit() || c == '-'))
        .find_map(|tok| tok.parse().ok())
        .unwrap_or(-1)
}

fn shifted(p: &WeylMatrix, z: Complex64) -> Array2<Complex64> {
    let mut a = p.entries.clone();
    for d in a.diag_mut() {
        *d -= z;
    }
    a
}

/// Smallest singular value of `P - z`: full SVD up to [`SVD_LIMIT`],
/// Lanczos on `((P - z)* (P - z))^{-1}` through an LU factorization above.
pub fn sigma_min(p: &WeylMatrix, z: Complex64) -> Result<f64> {
    if p.dim() <= SVD_LIMIT {
        sigma_min_svd(p, z)
    } else {
        sigma_min_iterative(p, z)
    }
}

pub fn sigma_min_svd(p: &WeylMatrix, z: Complex64) -> Result<f64> {
    let (_, s, _) = shifted(p, z)
        .svd(false, false)
        .map_err(|e| Error::Linalg(e.to_string()))?;
    Ok(s.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn sigma_min_iterative(p: &WeylMatrix, z: Complex64) -> Result<f64> {
    let n = p.dim();
    let lu = shifted(p, z)
        .factorize_into()
        .map_err(|e| Error::Linalg(e.to_string()))?;
    let mut failed = None;
    let theta = lanczos_largest(n, |x, out| {
        let v = Array1::from(x.to_vec());
        match lu.solve_h(&v).and_then(|y| lu.solve(&y)) {
            Ok(w) => out.copy_from_slice(w.as_slice().expect("contiguous")),
            Err(e) => {
                failed = Some(e.to_string());
                out.fill(Complex64::new(f64::INFINITY, 0.0));
            }
        }
    });
    if let Some(msg) = failed {
        // an exactly singular pivot means z is an eigenvalue
        log::debug!("LU solve at z = {z}: {msg}");
        return Ok(0.0);
    }
    Ok(theta_to_sigma(theta))
}

fn theta_to_sigma(theta: f64) -> f64 {
    if theta.is_finite() && theta > 0.0 {
        theta.sqrt().recip()
    } else {
        0.0
    }
}

/// Largest eigenvalue of a Hermitian positive operator by Lanczos with full
/// reorthogonalization and a fixed start vector.
fn lanczos_largest(n: usize, mut apply: impl FnMut(&[Complex64], &mut [Complex64])) -> f64 {
    const MAX_STEPS: usize = 80;
    const TOL: f64 = 1e-12;
    let steps = MAX_STEPS.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    normalize(&mut q);

    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(steps);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::default(); n];
    let mut best = 0.0;
    for k in 0..steps {
        apply(&q, &mut w);
        if w.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let a = dot(&q, &w).re;
        basis.push(q.clone());
        alpha.push(a);
        // two passes of Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= c * bi;
                }
            }
        }
        let bnorm = norm(&w);
        let (theta, last) = tridiagonal_top(&alpha, &beta);
        best = theta;
        if bnorm * last.abs() <= TOL * theta || bnorm <= TOL * theta || k + 1 == steps {
            break;
        }
        beta.push(bnorm);
        q = w.iter().map(|v| v / bnorm).collect();
    }
    best
}

/// Largest eigenvalue of the symmetric tridiagonal matrix and the last
/// component of its eigenvector.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let mut t = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        t[[i, i]] = alpha[i];
        if i + 1 < k {
            t[[i, i + 1]] = beta[i];
            t[[i + 1, i]] = beta[i];
        }
    }
    match t.eigh(UPLO::Upper) {
        Ok((vals, vecs)) => (vals[k - 1], vecs[[k - 1, k - 1]]),
        Err(_) => (alpha.iter().copied().fold(0.0, f64::max), 1.0),
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(a: &mut [Complex64]) {
    let s = norm(a);
    for v in a.iter_mut() {
        *v /= s;
    }
}

impl SchurForm {
    /// Smallest singular value of `T - z` (equal to that of `P - z`).
    pub fn sigma_min(&self, z: Complex64) -> f64 {
        let gap = self.diagonal_gap(z);
        if gap == 0.0 {
            return 0.0;
        }
        let mut tmp = Vec::new();
        let theta = lanczos_largest(self.dim(), |x, out| {
            tmp.clear();
            tmp.extend_from_slice(x);
            self.solve_shifted_adjoint(z, &mut tmp);
            self.solve_shifted(z, &mut tmp);
            out.copy_from_slice(&tmp);
        });
        theta_to_sigma(theta).min(gap)
    }
}

/// Rectangular lattice of spectral parameters, stored row-major with the
/// imaginary index as the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZLattice {
    pub center: Complex64,
    /// Full side lengths along `Re z` and `Im z`.
    pub span: (f64, f64),
    /// Points along `Re z` and `Im z`.
    pub resolution: (usize, usize),
}

impl ZLattice {
    pub fn square(center: Complex64, span: f64, res: usize) -> Self {
        Self {
            center,
            span: (span, span),
            resolution: (res, res),
        }
    }

    fn axis(center: f64, span: f64, res: usize, i: usize) -> f64 {
        if res <= 1 {
            center
        } else {
            center - 0.5 * span + span * i as f64 / (res - 1) as f64
        }
    }

    /// Point at column `i` (real direction), row `k` (imaginary direction).
    pub fn point(&self, i: usize, k: usize) -> Complex64 {
        Complex64::new(
            Self::axis(self.center.re, self.span.0, self.resolution.0, i),
            Self::axis(self.center.im, self.span.1, self.resolution.1, k),
        )
    }

    pub fn cell(&self) -> (f64, f64) {
        let step = |s: f64, r: usize| if r > 1 { s / (r - 1) as f64 } else { 0.0 };
        (step(self.span.0, self.resolution.0), step(self.span.1, self.resolution.1))
    }

    fn check(&self) -> Result<()> {
        let (nx, ny) = self.resolution;
        if nx == 0 || ny == 0 || !(self.span.0 >= 0.0 && self.span.1 >= 0.0) {
            return Err(Error::Config(format!(
                "invalid z-lattice {nx}x{ny} with span {:?}",
                self.span
            )));
        }
        if nx > LATTICE_BUDGET || ny > LATTICE_BUDGET {
            return Err(Error::LatticeBudget {
                nx,
                ny,
                suggest: LATTICE_BUDGET,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PseudospectrumField {
    pub lattice: ZLattice,
    /// `sigma_min[[k, i]]` at `lattice.point(i, k)`.
    pub sigma_min: Array2<f64>,
}

impl PseudospectrumField {
    /// Lattice indices `(i, k)` and value of the minimum.
    pub fn argmin(&self) -> ((usize, usize), f64) {
        let mut best = ((0, 0), f64::INFINITY);
        for ((k, i), &v) in self.sigma_min.indexed_iter() {
            if v < best.1 {
                best = ((i, k), v);
            }
        }
        best
    }

    /// One row per `z`: `Re z, Im z, sigma_min`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(
            path,
            &["re", "im", "sigma_min"],
            self.sigma_min
                .indexed_iter()
                .map(|((k, i), &s)| {
                    let z = self.lattice.point(i, k);
                    vec![z.re, z.im, s]
                }),
        )
    }
}

/// `sigma_min(P - z)` over a lattice. One Schur factorization, then an
/// O(N²) inverse Lanczos per point; points are independent and evaluated in
/// parallel with schedule-independent results.
pub fn pseudospectrum(p: &WeylMatrix, lattice: ZLattice) -> Result<PseudospectrumField> {
    lattice.check()?;
    let schur = SchurForm::new(&p.entries)?;
    Ok(pseudospectrum_from_schur(&schur, lattice))
}

pub fn pseudospectrum_from_schur(schur: &SchurForm, lattice: ZLattice) -> PseudospectrumField {
    let (nx, ny) = lattice.resolution;
    let values: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| schur.sigma_min(lattice.point(idx % nx, idx / nx)))
        .collect();
    PseudospectrumField {
        lattice,
        sigma_min: Array2::from_shape_vec((ny, nx), values).expect("lattice shape"),
    }
}

/// Distance from `z0` to the nearest retained eigenvalue.
pub fn spectrum_free_radius(spec: &SpectrumResult, z0: Complex64) -> Result<f64> {
    spec.retained()
        .map(|z| (z - z0).norm())
        .reduce(f64::min)
        .ok_or(Error::EmptySpectrum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventNorm {
    /// `1/sigma_min`, or `+inf` when `z` is numerically in the spectrum.
    pub value: f64,
    pub in_spectrum: bool,
}

impl ResolventNorm {
    pub fn from_sigma(sigma: f64) -> Self {
        if sigma < SINGULAR_TOL {
            Self {
                value: f64::INFINITY,
                in_spectrum: true,
            }
        } else {
            Self {
                value: sigma.recip(),
                in_spectrum: false,
            }
        }
    }
}

pub fn resolvent_norm(p: &WeylMatrix, z: Complex64) -> Result<ResolventNorm> {
    sigma_min(p, z).map(ResolventNorm::from_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{assemble_weyl, RealGrid};
    use crate::symbols::{make_davies, CustomSymbol};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    type C = Complex64;

    fn identity(n: usize) -> WeylMatrix {
        WeylMatrix::identity(RealGrid::new(4.0, n).unwrap(), 0.1)
    }

    fn davies(h: f64, n: usize) -> WeylMatrix {
        let m = make_davies::<f64>();
        assemble_weyl(m.symbol.as_ref(), RealGrid::new(8.0, n).unwrap(), h).unwrap()
    }

    /// Real symbol `tanh ξ + x² e^{-x²/4}`.
    fn hermitian(n: usize, h: f64) -> WeylMatrix {
        let sym = CustomSymbol::new(
            "herm",
            |x: f64, xi: f64| C::new(xi.tanh() + x * x * (-x * x / 4.0).exp(), 0.0),
            |_, _| [C::default(); 2],
            |_, _| [[C::default(); 2]; 2],
        );
        assemble_weyl(&sym, RealGrid::new(4.0, n).unwrap(), h).unwrap()
    }

    fn nonnormal(n: usize) -> WeylMatrix {
        let m = make_davies::<f64>();
        assemble_weyl(m.symbol.as_ref(), RealGrid::new(4.0, n).unwrap(), 0.3).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let s = eigenvalues(&identity(32)).unwrap();
        assert_eq!(s.eigenvalues.len(), 32);
        assert!(s.eigenvalues.iter().all(|z| (z - C::new(1.0, 0.0)).norm() < 1e-14));
        assert!(s.boundary_mass.iter().all(|&m| (0.0..=1.0).contains(&m)));
    }

    #[test]
    fn davies_lowest_eigenvalues() {
        let h = 0.1;
        let s = eigenvalues(&davies(h, 512)).unwrap();
        let low = s.nearest(C::default(), 10);
        assert_eq!(low.len(), 10);
        let mut low = low;
        low.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        for (k, z) in low.iter().enumerate() {
            let want = C::from_polar(h * (2 * k + 1) as f64, FRAC_PI_4);
            assert!((z - want).norm() / want.norm() < 1e-3, "k = {k}: {z} vs {want}");
        }
        let r = spectrum_free_radius(&s, C::default()).unwrap();
        assert!((r - h).abs() < 1e-3 * h);
    }

    #[test]
    fn hermitian_spectrum_is_real() {
        let s = eigenvalues(&hermitian(128, 0.1)).unwrap();
        assert!(s.eigenvalues.iter().all(|z| z.im.abs() < 1e-10));
    }

    #[test]
    fn free_radius_of_identity() {
        let s = eigenvalues(&identity(16)).unwrap();
        // identity eigenvectors are unit vectors; keep the interior ones
        assert!(s.retained_count() > 0);
        assert!((spectrum_free_radius(&s, C::default()).unwrap() - 1.0).abs() < 1e-14);
        assert!(spectrum_free_radius(&s, C::new(1.0, 0.0)).unwrap() < 1e-14);
        let empty = SpectrumResult {
            eigenvalues: vec![C::default()],
            boundary_mass: vec![0.5],
            h: 0.1,
            symbol_tag: String::new(),
        };
        assert!(matches!(spectrum_free_radius(&empty, C::default()), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn sigma_min_basics() {
        let id = identity(16);
        assert!((sigma_min(&id, C::default()).unwrap() - 1.0).abs() < 1e-14);
        let p = nonnormal(128);
        let s = eigenvalues(&p).unwrap();
        let pnorm = sigma_norm(&p);
        for &lam in s.nearest(C::default(), 3).iter() {
            assert!(sigma_min(&p, lam).unwrap() <= 1e-10 * pnorm);
        }
    }

    fn sigma_norm(p: &WeylMatrix) -> f64 {
        let (_, s, _) = p.entries.svd(false, false).unwrap();
        s[0]
    }

    #[test]
    fn hermitian_sigma_is_distance() {
        let p = hermitian(64, 0.2);
        let s = eigenvalues(&p).unwrap();
        for z in [C::new(0.3, 0.2), C::new(-1.1, -0.05), C::new(2.0, 1.0)] {
            let dist = s.eigenvalues.iter().map(|l| (l - z).norm()).fold(f64::INFINITY, f64::min);
            assert!((sigma_min(&p, z).unwrap() - dist).abs() < 1e-10);
            let r = resolvent_norm(&p, z).unwrap();
            assert!(!r.in_spectrum);
            assert!((r.value - 1.0 / dist).abs() <= 1e-9 * r.value.max(1.0));
        }
    }

    #[test]
    fn svd_and_iterative_agree() {
        let p = nonnormal(256);
        let schur = SchurForm::new(&p.entries).unwrap();
        for z in [C::new(0.1, 0.1), C::new(0.45, 0.5), C::new(-0.3, 0.2), C::new(1.0, -0.5)] {
            let a = sigma_min_svd(&p, z).unwrap();
            let b = sigma_min_iterative(&p, z).unwrap();
            let c = schur.sigma_min(z);
            assert!((a - b).abs() <= 1e-8 * a.max(1e-300) + 1e-14, "{z}: {a} vs {b}");
            assert!((a - c).abs() <= 1e-8 * a.max(1e-300) + 1e-14, "{z}: {a} vs schur {c}");
        }
    }

    #[test]
    fn resolvent_sentinel() {
        let id = identity(8);
        assert_eq!(resolvent_norm(&id, C::default()).unwrap().value, 1.0);
        let r = resolvent_norm(&id, C::new(1.0, 0.0)).unwrap();
        assert!(r.in_spectrum && r.value.is_infinite());
    }

    #[test]
    fn pseudospectrum_of_identity() {
        let lat = ZLattice::square(C::new(1.0, 0.0), 1.0, 9);
        let f = pseudospectrum(&identity(16), lat).unwrap();
        for ((k, i), &s) in f.sigma_min.indexed_iter() {
            let z = lat.point(i, k);
            assert!((s - (z - C::new(1.0, 0.0)).norm()).abs() < 1e-12);
        }
        assert!(matches!(
            pseudospectrum(&identity(16), ZLattice::square(C::default(), 1.0, 600)),
            Err(Error::LatticeBudget { suggest: 512, .. })
        ));
    }

    #[test]
    fn pseudospectrum_minimum_near_ground_state() {
        let h = 0.1;
        let p = davies(h, 256);
        let ground = C::from_polar(h, FRAC_PI_4);
        let lat = ZLattice::square(ground + C::new(0.004, -0.003), 0.1, 21);
        let f = pseudospectrum(&p, lat).unwrap();
        let ((i, k), v) = f.argmin();
        let z = lat.point(i, k);
        let (cx, cy) = lat.cell();
        let spec = eigenvalues(&p).unwrap();
        let lam = spec.nearest(ground, 1)[0];
        assert!((z.re - lam.re).abs() <= cx && (z.im - lam.im).abs() <= cy, "{z} vs {lam}");
        assert!(v >= 0.0);
        assert!(f.sigma_min.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn pseudospectrum_independent_of_workers() {
        let p = nonnormal(64);
        let lat = ZLattice::square(C::new(0.3, 0.3), 0.5, 7);
        let a = pseudospectrum(&p, lat).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| pseudospectrum(&p, lat).unwrap());
        assert_eq!(a.sigma_min, b.sigma_min);
    }

    #[test]
    fn free_radius_gauge_invariant() {
        // diagonal unitary conjugation keeps eigenvector localization
        let p = davies(0.2, 128);
        let g = p.grid;
        let mut q = p.clone();
        let phase: Vec<C> = (0..128).map(|j| C::from_polar(1.0, (g.node(j) * 1.7).sin() * 3.0)).collect();
        for ((j, k), v) in q.entries.indexed_iter_mut() {
            *v *= phase[j] * phase[k].conj();
        }
        let z0 = C::new(0.05, -0.02);
        let a = spectrum_free_radius(&eigenvalues(&p).unwrap(), z0).unwrap();
        let b = spectrum_free_radius(&eigenvalues(&q).unwrap(), z0).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn spectrum_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.csv");
        eigenvalues(&identity(8)).unwrap().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("re,im,boundary_mass\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sigma_min_is_lipschitz(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
            let p = nonnormal(32);
            let (z, w) = (C::new(a, b), C::new(c, d));
            let gap = (sigma_min(&p, z).unwrap() - sigma_min(&p, w).unwrap()).abs();
            prop_assert!(gap <= (z - w).norm() + 1e-12);
        }
    }
}
