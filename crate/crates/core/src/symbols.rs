//! Phase-space symbols on `T*R = R^2` and the model catalog.
//!
//! Every symbol carries closed-form first and second derivatives. Catalog
//! models are generic over the scalar type; the quantizer consumes them as
//! `f64` symbols.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gevrey regularity of a symbol. `Analytic` is the `s = ∞` sentinel used
/// for real-analytic symbols, which belong to every class with `s > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GevreyOrder {
    Gevrey(f64),
    Analytic,
}

impl GevreyOrder {
    /// Exponent `1 - 1/s` of the spectrum-free region; 1 for analytic symbols.
    pub fn free_region_exponent(self) -> f64 {
        match self {
            GevreyOrder::Gevrey(s) => 1.0 - 1.0 / s,
            GevreyOrder::Analytic => 1.0,
        }
    }

    pub fn is_analytic(self) -> bool {
        matches!(self, GevreyOrder::Analytic)
    }
}

/// Axis-aligned box `[x0, x1] × [xi0, xi1]` in phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseBox<T> {
    pub x: (T, T),
    pub xi: (T, T),
}

impl<T: Real> PhaseBox<T> {
    pub fn new(x: (T, T), xi: (T, T)) -> Self {
        Self { x, xi }
    }

    pub fn contains(&self, x: T, xi: T) -> bool {
        x >= self.x.0 && x <= self.x.1 && xi >= self.xi.0 && xi <= self.xi.1
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x.0 + self.x.1) / two, (self.xi.0 + self.xi.1) / two)
    }

    pub fn diagonal(&self) -> T {
        (self.x.1 - self.x.0).hypot(self.xi.1 - self.xi.0)
    }

    /// Box grown by `margin` on every side.
    pub fn inflate(&self, margin: T) -> Self {
        Self {
            x: (self.x.0 - margin, self.x.1 + margin),
            xi: (self.xi.0 - margin, self.xi.1 + margin),
        }
    }
}

pub type Grad<T> = [Complex<T>; 2];
pub type Hess<T> = [[Complex<T>; 2]; 2];

/// A complex-valued symbol `p(x, ξ)` with closed-form derivatives.
pub trait GevreySymbol<T: Real>: Send + Sync {
    fn eval(&self, x: T, xi: T) -> Complex<T>;

    /// `(∂_x p, ∂_ξ p)`.
    fn grad(&self, x: T, xi: T) -> Grad<T>;

    /// `[[∂_xx p, ∂_xξ p], [∂_ξx p, ∂_ξξ p]]`.
    fn hess(&self, x: T, xi: T) -> Hess<T>;

    fn order(&self) -> GevreyOrder;

    /// Declared bound on `|p|`; `+∞` for unbounded calibration symbols.
    fn bound(&self) -> T;

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        None
    }

    /// Largest `|ξ|` the quantizer has to resolve for this symbol.
    fn xi_extent(&self) -> T {
        T::lit(4.0)
    }

    fn tag(&self) -> String;
}

/// Finite-order substitute for an almost holomorphic extension:
/// `p̃(ρ_re + iρ_im) = Σ_{|α| ≤ order} ∂^α p(ρ_re) (iρ_im)^α / α!`.
pub fn taylor_extension<T: Real>(
    sym: &dyn GevreySymbol<T>,
    order: u32,
    rho_re: [T; 2],
    rho_im: [T; 2],
) -> Result<Complex<T>> {
    if !(1..=2).contains(&order) {
        return Err(Error::ExtensionOrder(order));
    }
    let [x, xi] = rho_re;
    let d = [Complex::new(T::zero(), rho_im[0]), Complex::new(T::zero(), rho_im[1])];
    let mut value = sym.eval(x, xi);
    let g = sym.grad(x, xi);
    value = value + g[0] * d[0] + g[1] * d[1];
    if order == 2 {
        let hs = sym.hess(x, xi);
        let half = T::lit(0.5);
        let mut quad = Complex::new(T::zero(), T::zero());
        for (k, row) in hs.iter().enumerate() {
            for (l, entry) in row.iter().enumerate() {
                quad = quad + *entry * d[k] * d[l];
            }
        }
        value = value + quad * half;
    }
    Ok(value)
}

/// Canonical Gevrey-flat function `E_s(t) = exp(-t^{-1/(s-1)})` for `t > 0`,
/// zero for `t <= 0`.
pub fn gevrey_flat<T: Real>(s: f64, t: T) -> Result<T> {
    check_order(s)?;
    Ok(FlatFn::new(s).value(t))
}

fn check_order(s: f64) -> Result<()> {
    if s.is_finite() && s > 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidOrder(s))
    }
}

/// `E_s` together with its first two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct FlatFn {
    s: f64,
    k: f64,
}

impl FlatFn {
    /// Panics on `s <= 1`; use [`gevrey_flat`] for checked evaluation.
    pub fn new(s: f64) -> Self {
        assert!(s > 1.0, "Gevrey order must exceed 1");
        Self {
            s,
            k: 1.0 / (s - 1.0),
        }
    }

    pub fn order(&self) -> f64 {
        self.s
    }

    pub fn value<T: Real>(&self, t: T) -> T {
        if t <= T::zero() {
            return T::zero();
        }
        (-t.powf(T::lit(-self.k))).exp()
    }

    /// `(E, E', E'')`. Products are formed in log space so tiny `t` gives
    /// clean zeros instead of `0 · ∞`.
    pub fn derivs<T: Real>(&self, t: T) -> (T, T, T) {
        if t <= T::zero() {
            return (T::zero(), T::zero(), T::zero());
        }
        let k = T::lit(self.k);
        let lt = t.ln();
        let a = -(-k * lt).exp(); // -t^{-k}
        let e = a.exp();
        let d1 = (a + k.ln() + (-k - T::one()) * lt).exp();
        let d2a = (a + T::lit(2.0) * k.ln() + (-T::lit(2.0) * k - T::lit(2.0)) * lt).exp();
        let d2b = (a + (k * (k + T::one())).ln() + (-k - T::lit(2.0)) * lt).exp();
        (e, d1, d2a - d2b)
    }
}

/// Smooth Gevrey step: 0 for `t <= 0`, 1 for `t >= 1`,
/// `E(t) / (E(t) + E(1-t))` in between.
pub fn smooth_step<T: Real>(flat: &FlatFn, t: T) -> T {
    smooth_step_derivs(flat, t).0
}

/// Smooth step value and first derivative.
pub fn smooth_step_derivs<T: Real>(flat: &FlatFn, t: T) -> (T, T) {
    if t <= T::zero() {
        return (T::zero(), T::zero());
    }
    if t >= T::one() {
        return (T::one(), T::zero());
    }
    let (a, da) = {
        let (v, d, _) = flat.derivs(t);
        (v, d)
    };
    let (b, db) = {
        let (v, d, _) = flat.derivs(T::one() - t);
        (v, -d)
    };
    let sum = a + b;
    let value = a / sum;
    let deriv = (da * b - a * db) / (sum * sum);
    (value, deriv)
}

#[inline]
fn c<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Complex harmonic oscillator symbol `ξ² + i x²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Davies;

impl<T: Real> GevreySymbol<T> for Davies {
    fn eval(&self, x: T, xi: T) -> Complex<T> {
        c(xi * xi, x * x)
    }

    fn grad(&self, x: T, xi: T) -> Grad<T> {
        let two = T::lit(2.0);
        [c(T::zero(), two * x), c(two * xi, T::zero())]
    }

    fn hess(&self, _x: T, _xi: T) -> Hess<T> {
        let two = T::lit(2.0);
        [[c(T::zero(), two), zero()], [zero(), c(two, T::zero())]]
    }

    fn order(&self) -> GevreyOrder {
        GevreyOrder::Analytic
    }

    fn bound(&self) -> T {
        T::infinity()
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        let q = T::lit(0.25);
        Some(PhaseBox::new((-q, q), (-q, q)))
    }

    fn xi_extent(&self) -> T {
        T::lit(3.0)
    }

    fn tag(&self) -> String {
        "davies".into()
    }
}

/// Transport model `i tanh ξ + E_s(x² - 1)`: absorbing outside `|x| > 1`,
/// zero set `[-1, 1] × {0}`.
#[derive(Debug, Clone, Copy)]
pub struct GevreyTransport {
    flat: FlatFn,
}

impl GevreyTransport {
    pub fn new(s: f64) -> Result<Self> {
        check_order(s)?;
        Ok(Self {
            flat: FlatFn::new(s),
        })
    }

    pub fn s(&self) -> f64 {
        self.flat.order()
    }

    /// Real part `f(x) = E_s(x² - 1)` with `f'` and `f''`.
    pub fn absorption<T: Real>(&self, x: T) -> (T, T, T) {
        let two = T::lit(2.0);
        let (e, d1, d2) = self.flat.derivs(x * x - T::one());
        (e, two * x * d1, two * d1 + T::lit(4.0) * x * x * d2)
    }
}

/// `(tanh ξ, sech² ξ, -2 tanh ξ sech² ξ)`.
#[inline]
fn tanh_derivs<T: Real>(xi: T) -> (T, T, T) {
    let th = xi.tanh();
    let sech2 = T::one() - th * th;
    (th, sech2, -T::lit(2.0) * th * sech2)
}

impl<T: Real> GevreySymbol<T> for GevreyTransport {
    fn eval(&self, x: T, xi: T) -> Complex<T> {
        c(self.absorption(x).0, xi.tanh())
    }

    fn grad(&self, x: T, xi: T) -> Grad<T> {
        let (_, f1, _) = self.absorption(x);
        let (_, t1, _) = tanh_derivs(xi);
        [c(f1, T::zero()), c(T::zero(), t1)]
    }

    fn hess(&self, x: T, xi: T) -> Hess<T> {
        let (_, _, f2) = self.absorption(x);
        let (_, _, t2) = tanh_derivs(xi);
        [[c(f2, T::zero()), zero()], [zero(), c(T::zero(), t2)]]
    }

    fn order(&self) -> GevreyOrder {
        GevreyOrder::Gevrey(self.s())
    }

    fn bound(&self) -> T {
        T::SQRT_2()
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        Some(PhaseBox::new(
            (T::lit(-1.25), T::lit(1.25)),
            (T::lit(-0.25), T::lit(0.25)),
        ))
    }

    fn tag(&self) -> String {
        format!("gevrey-transport:s={:?}", self.s())
    }
}

/// Analytic control `i tanh ξ + c₀ x² / (1 + x²)`; `Re p` vanishes only on `x = 0`.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticTransport {
    pub c0: f64,
}

impl Default for AnalyticTransport {
    fn default() -> Self {
        Self { c0: 1.0 }
    }
}

impl AnalyticTransport {
    fn well<T: Real>(&self, x: T) -> (T, T, T) {
        let c0 = T::lit(self.c0);
        let one = T::one();
        let d = one + x * x;
        (
            c0 * x * x / d,
            c0 * T::lit(2.0) * x / (d * d),
            c0 * (T::lit(2.0) - T::lit(6.0) * x * x) / (d * d * d),
        )
    }
}

impl<T: Real> GevreySymbol<T> for AnalyticTransport {
    fn eval(&self, x: T, xi: T) -> Complex<T> {
        c(self.well(x).0, xi.tanh())
    }

    fn grad(&self, x: T, xi: T) -> Grad<T> {
        let (_, g1, _) = self.well(x);
        let (_, t1, _) = tanh_derivs(xi);
        [c(g1, T::zero()), c(T::zero(), t1)]
    }

    fn hess(&self, x: T, xi: T) -> Hess<T> {
        let (_, _, g2) = self.well(x);
        let (_, _, t2) = tanh_derivs(xi);
        [[c(g2, T::zero()), zero()], [zero(), c(T::zero(), t2)]]
    }

    fn order(&self) -> GevreyOrder {
        GevreyOrder::Analytic
    }

    fn bound(&self) -> T {
        T::lit(self.c0).hypot(T::one())
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        let q = T::lit(0.25);
        Some(PhaseBox::new((-q, q), (-q, q)))
    }

    fn tag(&self) -> String {
        "analytic-transport".into()
    }
}

/// Trapped negative control `i x²`: `Re p ≡ 0`, so no trajectory ever leaves
/// the zero set of the real part.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrappedToy;

impl<T: Real> GevreySymbol<T> for TrappedToy {
    fn eval(&self, x: T, _xi: T) -> Complex<T> {
        c(T::zero(), x * x)
    }

    fn grad(&self, x: T, _xi: T) -> Grad<T> {
        [c(T::zero(), T::lit(2.0) * x), zero()]
    }

    fn hess(&self, _x: T, _xi: T) -> Hess<T> {
        [[c(T::zero(), T::lit(2.0)), zero()], [zero(), zero()]]
    }

    fn order(&self) -> GevreyOrder {
        GevreyOrder::Analytic
    }

    fn bound(&self) -> T {
        T::infinity()
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        let q = T::lit(0.25);
        Some(PhaseBox::new((-q, q), (-q, q)))
    }

    fn tag(&self) -> String {
        "trapped-toy".into()
    }
}

type EvalFn<T> = dyn Fn(T, T) -> Complex<T> + Send + Sync;
type GradFn<T> = dyn Fn(T, T) -> Grad<T> + Send + Sync;
type HessFn<T> = dyn Fn(T, T) -> Hess<T> + Send + Sync;

/// Symbol assembled from closures; used for custom models and test fixtures.
pub struct CustomSymbol<T: Real> {
    tag: String,
    eval: Box<EvalFn<T>>,
    grad: Box<GradFn<T>>,
    hess: Box<HessFn<T>>,
    order: GevreyOrder,
    bound: T,
    hint: Option<PhaseBox<T>>,
    xi_extent: T,
}

impl<T: Real> CustomSymbol<T> {
    pub fn new(
        tag: impl Into<String>,
        eval: impl Fn(T, T) -> Complex<T> + Send + Sync + 'static,
        grad: impl Fn(T, T) -> Grad<T> + Send + Sync + 'static,
        hess: impl Fn(T, T) -> Hess<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            tag: tag.into(),
            eval: Box::new(eval),
            grad: Box::new(grad),
            hess: Box::new(hess),
            order: GevreyOrder::Analytic,
            bound: T::infinity(),
            hint: None,
            xi_extent: T::lit(4.0),
        }
    }

    pub fn with_order(mut self, order: GevreyOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_bound(mut self, bound: T) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_zero_set_hint(mut self, hint: PhaseBox<T>) -> Self {
        self.hint = Some(hint);
        self
    }

    pub fn with_xi_extent(mut self, extent: T) -> Self {
        self.xi_extent = extent;
        self
    }

    /// `p ≡ value`.
    pub fn constant(value: Complex<T>) -> Self {
        Self::new(
            "constant",
            move |_, _| value,
            |_, _| [zero(), zero()],
            |_, _| [[zero(), zero()], [zero(), zero()]],
        )
        .with_bound(value.norm())
    }

    /// `p = x`.
    pub fn position() -> Self {
        Self::new(
            "position",
            |x, _| c(x, T::zero()),
            |_, _| [c(T::one(), T::zero()), zero()],
            |_, _| [[zero(), zero()], [zero(), zero()]],
        )
    }

    /// `p = ξ`.
    pub fn momentum() -> Self {
        Self::new(
            "momentum",
            |_, xi| c(xi, T::zero()),
            |_, _| [zero(), c(T::one(), T::zero())],
            |_, _| [[zero(), zero()], [zero(), zero()]],
        )
    }

    /// `p = tanh ξ`.
    pub fn tanh_momentum() -> Self {
        Self::new(
            "tanh-momentum",
            |_, xi: T| c(xi.tanh(), T::zero()),
            |_, xi| [zero(), c(tanh_derivs(xi).1, T::zero())],
            |_, xi| [[zero(), zero()], [zero(), c(tanh_derivs(xi).2, T::zero())]],
        )
        .with_bound(T::one())
    }
}

impl<T: Real> fmt::Debug for CustomSymbol<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSymbol").field("tag", &self.tag).finish()
    }
}

impl<T: Real> GevreySymbol<T> for CustomSymbol<T> {
    fn eval(&self, x: T, xi: T) -> Complex<T> {
        (self.eval)(x, xi)
    }

    fn grad(&self, x: T, xi: T) -> Grad<T> {
        (self.grad)(x, xi)
    }

    fn hess(&self, x: T, xi: T) -> Hess<T> {
        (self.hess)(x, xi)
    }

    fn order(&self) -> GevreyOrder {
        self.order
    }

    fn bound(&self) -> T {
        self.bound
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        self.hint
    }

    fn xi_extent(&self) -> T {
        self.xi_extent
    }

    fn tag(&self) -> String {
        self.tag.clone()
    }
}

/// `q · (p - z0)`: the symbol the geometry layer works with once a model's
/// multiplier has been applied.
pub struct Reduced<T: Real> {
    p: Arc<dyn GevreySymbol<T>>,
    q: Option<Arc<dyn GevreySymbol<T>>>,
    z0: Complex<T>,
}

impl<T: Real> GevreySymbol<T> for Reduced<T> {
    fn eval(&self, x: T, xi: T) -> Complex<T> {
        let base = self.p.eval(x, xi) - self.z0;
        match &self.q {
            Some(q) => q.eval(x, xi) * base,
            None => base,
        }
    }

    fn grad(&self, x: T, xi: T) -> Grad<T> {
        let gp = self.p.grad(x, xi);
        match &self.q {
            None => gp,
            Some(q) => {
                let base = self.p.eval(x, xi) - self.z0;
                let qv = q.eval(x, xi);
                let gq = q.grad(x, xi);
                [gq[0] * base + qv * gp[0], gq[1] * base + qv * gp[1]]
            }
        }
    }

    fn hess(&self, x: T, xi: T) -> Hess<T> {
        let hp = self.p.hess(x, xi);
        match &self.q {
            None => hp,
            Some(q) => {
                let base = self.p.eval(x, xi) - self.z0;
                let qv = q.eval(x, xi);
                let gp = self.p.grad(x, xi);
                let gq = q.grad(x, xi);
                let hq = q.hess(x, xi);
                let mut out = [[zero(); 2]; 2];
                for k in 0..2 {
                    for l in 0..2 {
                        out[k][l] = hq[k][l] * base
                            + gq[k] * gp[l]
                            + gq[l] * gp[k]
                            + qv * hp[k][l];
                    }
                }
                out
            }
        }
    }

    fn order(&self) -> GevreyOrder {
        let po = self.p.order();
        match (&self.q, po) {
            (Some(q), GevreyOrder::Analytic) => q.order(),
            (Some(q), GevreyOrder::Gevrey(s)) => match q.order() {
                GevreyOrder::Gevrey(sq) => GevreyOrder::Gevrey(s.max(sq)),
                GevreyOrder::Analytic => po,
            },
            (None, _) => po,
        }
    }

    fn bound(&self) -> T {
        let base = self.p.bound() + self.z0.norm();
        match &self.q {
            Some(q) => q.bound() * base,
            None => base,
        }
    }

    fn zero_set_hint(&self) -> Option<PhaseBox<T>> {
        self.p.zero_set_hint()
    }

    fn xi_extent(&self) -> T {
        self.p.xi_extent()
    }

    fn tag(&self) -> String {
        format!("reduced({})", self.p.tag())
    }
}

/// Which catalog family a model belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Davies,
    AnalyticTransport,
    GevreyTransport(f64),
    Custom(String),
}

/// A symbol together with its target boundary point and optional multiplier.
#[derive(Clone)]
pub struct ModelInstance<T: Real> {
    pub symbol: Arc<dyn GevreySymbol<T>>,
    pub z0: Complex<T>,
    pub multiplier_q: Option<Arc<dyn GevreySymbol<T>>>,
    pub family: Family,
}

impl<T: Real> fmt::Debug for ModelInstance<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelInstance")
            .field("symbol", &self.symbol.tag())
            .field("z0", &self.z0)
            .field("has_q", &self.multiplier_q.is_some())
            .field("family", &self.family)
            .finish()
    }
}

impl<T: Real> ModelInstance<T> {
    pub fn custom(symbol: Arc<dyn GevreySymbol<T>>, z0: Complex<T>) -> Self {
        let tag = symbol.tag();
        Self {
            symbol,
            z0,
            multiplier_q: None,
            family: Family::Custom(tag),
        }
    }

    pub fn with_multiplier(mut self, q: Arc<dyn GevreySymbol<T>>) -> Self {
        self.multiplier_q = Some(q);
        self
    }

    pub fn tag(&self) -> String {
        match &self.family {
            Family::Davies => "davies".into(),
            Family::AnalyticTransport => "analytic-transport".into(),
            Family::GevreyTransport(s) => format!("gevrey-transport:s={s:?}"),
            Family::Custom(t) => t.clone(),
        }
    }

    pub fn order(&self) -> GevreyOrder {
        self.symbol.order()
    }

    /// `q (p - z0)`, or `p - z0` when no multiplier is attached.
    pub fn reduced(&self) -> Arc<dyn GevreySymbol<T>> {
        Arc::new(Reduced {
            p: Arc::clone(&self.symbol),
            q: self.multiplier_q.clone(),
            z0: self.z0,
        })
    }

    /// Smallest `|q|` over an `n × n` sample of the zero-set hint box.
    /// `None` if the model carries no multiplier or no hint.
    pub fn multiplier_floor(&self, n: usize) -> Option<T> {
        let q = self.multiplier_q.as_ref()?;
        let hint = self.symbol.zero_set_hint()?;
        let n = n.max(2);
        let mut floor = T::infinity();
        for i in 0..n {
            let x = lerp(hint.x, i, n);
            for j in 0..n {
                let xi = lerp(hint.xi, j, n);
                floor = floor.min(q.eval(x, xi).norm());
            }
        }
        Some(floor)
    }
}

pub(crate) fn lerp<T: Real>(range: (T, T), i: usize, n: usize) -> T {
    let frac = T::lit(i as f64 / (n - 1) as f64);
    range.0 + (range.1 - range.0) * frac
}

pub fn make_davies<T: Real>() -> ModelInstance<T> {
    ModelInstance {
        symbol: Arc::new(Davies),
        z0: Complex::new(T::zero(), T::zero()),
        multiplier_q: None,
        family: Family::Davies,
    }
}

pub fn make_gevrey_transport<T: Real>(s: f64) -> Result<ModelInstance<T>> {
    Ok(ModelInstance {
        symbol: Arc::new(GevreyTransport::new(s)?),
        z0: Complex::new(T::zero(), T::zero()),
        multiplier_q: None,
        family: Family::GevreyTransport(s),
    })
}

pub fn make_analytic_transport<T: Real>() -> ModelInstance<T> {
    ModelInstance {
        symbol: Arc::new(AnalyticTransport::default()),
        z0: Complex::new(T::zero(), T::zero()),
        multiplier_q: None,
        family: Family::AnalyticTransport,
    }
}

/// The trapped control `i x²` with `z0 = 0`.
pub fn make_trapped_toy<T: Real>() -> ModelInstance<T> {
    ModelInstance {
        symbol: Arc::new(TrappedToy),
        z0: Complex::new(T::zero(), T::zero()),
        multiplier_q: None,
        family: Family::Custom("trapped-toy".into()),
    }
}
