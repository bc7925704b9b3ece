//! Mollifier `d_N`, the smoothed fluctuation field, the functional `F_N`,
//! and the degree-≤2 observables `V_ε^G`, `V^{H,1..4}` built from them.
//!
//! The field of a configuration is `Y⋆d_N(u) = √ε Σ_x ξ(x) d_N(u - εx)` with
//! `x` over the centered window, and `F_N = -∫ G'(u) (Y⋆d_N)²(u) du`.
//! With `H = -G'` the difference `F_N - V_ε^G` splits exactly into the four
//! observables `V^{H,i}` returned by [`build_v_h`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{check_ring_size, index_site, LatticeState, ObservableMeta, ObservableSpec};
use crate::quad::{integrate, integrate_panels};

const NORM_TOL: f64 = 1e-13;
const OVERLAP_TOL: f64 = 1e-13;

fn bump_exponent(u: f64) -> Option<f64> {
    (u.abs() < 1.0).then(|| -1.0 / (1.0 - u * u))
}

/// Smooth even bump `d(u) = C exp(-1/(1-u²))` on `(-1, 1)` with unit mass,
/// scaled to `d_N(x) = N d(Nx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub n: u32,
    /// Normalizing constant `C`.
    pub norm_const: f64,
    /// `‖d‖₂²` of the base bump.
    pub l2_sq: f64,
    /// `‖d‖_∞ = d(0)`.
    pub sup: f64,
    /// `‖d''‖_∞` of the base bump.
    pub sup_dd: f64,
}

impl MollifierSpec {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::OutOfRange("mollifier index N must be >= 1".into()));
        }
        let raw = |u: f64| bump_exponent(u).map_or(0.0, f64::exp);
        let mass = integrate(raw, -1.0, 1.0, NORM_TOL)?;
        let norm_const = 1.0 / mass;
        let l2_sq = integrate(|u| (norm_const * raw(u)).powi(2), -1.0, 1.0, NORM_TOL)?;
        let mut spec = Self {
            n,
            norm_const,
            l2_sq,
            sup: norm_const * (-1.0f64).exp(),
            sup_dd: 0.0,
        };
        spec.sup_dd = sup_abs(|u| spec.base_dd(u), 0.0, 1.0);
        Ok(spec)
    }

    /// Base bump `d(u)`.
    pub fn base(&self, u: f64) -> f64 {
        bump_exponent(u).map_or(0.0, |g| self.norm_const * g.exp())
    }

    /// `d''(u) = C e^g (g'² + g'')` with `g = -1/(1-u²)`.
    pub fn base_dd(&self, u: f64) -> f64 {
        let Some(g) = bump_exponent(u) else { return 0.0 };
        let w = 1.0 - u * u;
        let g1 = -2.0 * u / (w * w);
        let g2 = -2.0 / (w * w) - 8.0 * u * u / (w * w * w);
        self.norm_const * g.exp() * (g1 * g1 + g2)
    }

    /// `d_N(x) = N d(Nx)`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = f64::from(self.n);
        n * self.base(n * x)
    }

    /// Half-width `1/N` of the support of `d_N`.
    pub fn radius(&self) -> f64 {
        1.0 / f64::from(self.n)
    }

    /// `∫ d_N(w) d_N(w - δ) dw`.
    pub fn overlap(&self, delta: f64) -> Result<f64> {
        let r = self.radius();
        let lo = (-r).max(delta - r);
        let hi = r.min(delta + r);
        if lo >= hi {
            return Ok(0.0);
        }
        integrate(|w| self.eval(w) * self.eval(w - delta), lo, hi, OVERLAP_TOL)
    }

    /// Overlaps `O(k) = ∫ d_N(w) d_N(w - εk) dw` for all `k ≥ 0` with nonzero value.
    pub fn overlap_table(&self, eps: f64) -> Result<OverlapTable> {
        let kmax = (2.0 * self.radius() / eps).ceil() as usize;
        let mut values = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            values.push(if k == 0 {
                f64::from(self.n) * self.l2_sq
            } else {
                self.overlap(eps * k as f64)?
            });
        }
        while values.len() > 1 && *values.last().expect("non-empty") == 0.0 {
            values.pop();
        }
        Ok(OverlapTable { eps, values })
    }
}

/// Cached `O(k)`, symmetric in `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapTable {
    pub eps: f64,
    values: Vec<f64>,
}

impl OverlapTable {
    pub fn get(&self, k: i64) -> f64 {
        self.values.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    /// Largest `|k|` with a stored value.
    pub fn bandwidth(&self) -> usize {
        self.values.len() - 1
    }
}

fn sup_abs<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 20_000;
    let h = (hi - lo) / GRID as f64;
    let (mut best, mut at) = (0.0f64, lo);
    for i in 0..=GRID {
        let u = lo + h * i as f64;
        let v = f(u).abs();
        if v > best {
            best = v;
            at = u;
        }
    }
    // golden-section refinement around the grid maximum
    let (mut a, mut b) = ((at - h).max(lo), (at + h).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c).abs() >= f(d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)).abs())
}

/// Polynomial in ascending coefficients.
fn poly_eval(c: &[f64], z: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * z + k)
}

/// `Q ↦ Q' - zQ`, the derivative of `Q(z) e^{-z²/2}` divided by the Gaussian.
fn gauss_derivative(c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; c.len() + 1];
    for (k, &ck) in c.iter().enumerate() {
        if k > 0 {
            out[k - 1] += k as f64 * ck;
        }
        out[k + 1] -= ck;
    }
    out
}

/// Test-function family `G(u) = P(u/σ) exp(-u²/(2σ²))`, or a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFamily {
    GaussianPoly { coeffs: Vec<f64>, sigma: f64 },
    Constant { value: f64 },
}

impl Default for TestFamily {
    fn default() -> Self {
        TestFamily::GaussianPoly {
            coeffs: vec![1.0],
            sigma: 0.4,
        }
    }
}

/// Sup- and `L¹`-norms of `H = -G'` used by the scaling bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestNorms {
    pub weighted_h: f64,
    pub weighted_h1: f64,
    pub weighted_h2: f64,
    pub h_l1: f64,
    pub h1_sup: f64,
    pub h2_sup: f64,
    /// `∫ H`, zero up to quadrature error.
    pub h_integral: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctionSpec {
    pub family: TestFamily,
    /// `D^k P` for `k = 0..=3`, so `G^{(k)}(u) = σ^{-k} (D^k P)(u/σ) e^{-u²/(2σ²)}`.
    derivs: Vec<Vec<f64>>,
    radius: f64,
    pub norms: TestNorms,
}

impl TestFunctionSpec {
    pub fn new(family: TestFamily) -> Result<Self> {
        let derivs = match &family {
            TestFamily::GaussianPoly { coeffs, sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::NonPositive {
                        what: "test-function width sigma",
                        value: *sigma,
                    });
                }
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config(
                        "test-function polynomial needs finite coefficients".into(),
                    ));
                }
                let mut d = vec![coeffs.clone()];
                for k in 0..3 {
                    let next = gauss_derivative(&d[k]);
                    d.push(next);
                }
                d
            }
            TestFamily::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("constant test function must be finite".into()));
                }
                Vec::new()
            }
        };
        let mut spec = Self {
            family,
            derivs,
            radius: 0.0,
            norms: TestNorms::default(),
        };
        spec.radius = spec.compute_radius();
        spec.norms = spec.compute_norms()?;
        Ok(spec)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(TestFamily::GaussianPoly {
            coeffs: vec![1.0],
            sigma,
        })
    }

    pub fn label(&self) -> String {
        match &self.family {
            TestFamily::GaussianPoly { coeffs, sigma } => format!("gaussian_poly{coeffs:?}/sigma={sigma}"),
            TestFamily::Constant { value } => format!("constant({value})"),
        }
    }

    /// `G^{(k)}(u)` for `k ≤ 3`.
    pub fn derivative(&self, k: usize, u: f64) -> f64 {
        match &self.family {
            TestFamily::Constant { value } => {
                if k == 0 {
                    *value
                } else {
                    0.0
                }
            }
            TestFamily::GaussianPoly { sigma, .. } => {
                let z = u / sigma;
                poly_eval(&self.derivs[k], z) * (-0.5 * z * z).exp() / sigma.powi(k as i32)
            }
        }
    }

    pub fn g(&self, u: f64) -> f64 {
        self.derivative(0, u)
    }

    /// `H = -G'`.
    pub fn h(&self, u: f64) -> f64 {
        -self.derivative(1, u)
    }

    pub fn h1(&self, u: f64) -> f64 {
        -self.derivative(2, u)
    }

    pub fn h2(&self, u: f64) -> f64 {
        -self.derivative(3, u)
    }

    /// Radius beyond which `G` and its first three derivatives stay below
    /// `1e-14` of their maxima. Zero when `H ≡ 0`.
    pub fn support_radius(&self) -> f64 {
        self.radius
    }

    fn compute_radius(&self) -> f64 {
        let TestFamily::GaussianPoly { sigma, .. } = &self.family else {
            return 0.0;
        };
        let step = 1e-3;
        let zs: Vec<f64> = (0..=60_000).map(|i| i as f64 * step).collect();
        let mut r = 0.0f64;
        for d in &self.derivs {
            let f = |z: f64| (poly_eval(d, z) * (-0.5 * z * z).exp()).abs();
            let peak = zs.iter().map(|&z| f(z).max(f(-z))).fold(0.0, f64::max);
            if peak == 0.0 {
                continue;
            }
            let last = zs
                .iter()
                .rev()
                .find(|&&z| f(z).max(f(-z)) > 1e-14 * peak)
                .copied()
                .unwrap_or(0.0);
            r = r.max(last + step);
        }
        r * sigma
    }

    fn compute_norms(&self) -> Result<TestNorms> {
        let r = self.radius;
        if r == 0.0 {
            return Ok(TestNorms::default());
        }
        let w = |f: &dyn Fn(f64) -> f64| sup_abs(|u| (1.0 + u * u) * f(u), -r, r);
        let panels: Vec<f64> = (0..=64).map(|i| -r + 2.0 * r * i as f64 / 64.0).collect();
        Ok(TestNorms {
            weighted_h: w(&|u| self.h(u)),
            weighted_h1: w(&|u| self.h1(u)),
            weighted_h2: w(&|u| self.h2(u)),
            h_l1: integrate_panels(|u| self.h(u).abs(), &panels, 1e-12)?,
            h1_sup: sup_abs(|u| self.h1(u), -r, r),
            h2_sup: sup_abs(|u| self.h2(u), -r, r),
            h_integral: integrate_panels(|u| self.h(u), &panels, 1e-13)?,
        })
    }
}

fn half_width(eps: f64, m: usize) -> f64 {
    eps * m as f64 / 2.0
}

/// `supp(G) ⊕ [-1/N, 1/N]` must sit inside the open window `(-εM/2, εM/2)`.
pub fn check_safe_window(g: &TestFunctionSpec, eps: f64, m: usize, moll: &MollifierSpec) -> Result<()> {
    let half = half_width(eps, m);
    let reach = g.support_radius() + moll.radius();
    if g.support_radius() > 0.0 && reach >= half {
        return Err(Error::SafeWindow {
            lo: -reach,
            hi: reach,
            half,
        });
    }
    Ok(())
}

/// `(Y⋆d_N)(u) = √ε Σ_x ξ(x) d_N(u - εx)`.
pub fn field_convolution(state: &LatticeState, eps: f64, moll: &MollifierSpec, u: f64) -> Result<f64> {
    let m = state.m();
    let half = half_width(eps, m);
    if u.abs() + moll.radius() >= half {
        return Err(Error::SafeWindow {
            lo: u - moll.radius(),
            hi: u + moll.radius(),
            half,
        });
    }
    Ok(field_unchecked(state, eps, moll, u))
}

fn field_unchecked(state: &LatticeState, eps: f64, moll: &MollifierSpec, u: f64) -> f64 {
    let m = state.m();
    let r = moll.radius();
    let lo = ((u - r) / eps).ceil() as i64;
    let hi = ((u + r) / eps).floor() as i64;
    let (wlo, whi) = (-(m as i64) / 2, m as i64 / 2 - 1);
    let mut acc = 0.0;
    for x in lo.max(wlo)..=hi.min(whi) {
        acc += state.spin(x) * moll.eval(u - eps * x as f64);
    }
    eps.sqrt() * acc
}

/// Integration range and panel break points for `u`-integrals against `H`.
fn u_panels(g: &TestFunctionSpec, eps: f64, moll: &MollifierSpec) -> Vec<f64> {
    let reach = g.support_radius() + moll.radius();
    let width = moll.radius().min(eps * 8.0).max(eps);
    let count = (2.0 * reach / width).ceil().max(1.0) as usize;
    (0..=count)
        .map(|i| -reach + 2.0 * reach * i as f64 / count as f64)
        .collect()
}

/// `F_N(Y, G) = ∫ H(u) (Y⋆d_N)²(u) du` by panelized adaptive quadrature.
pub fn evaluate_f_n(state: &LatticeState, eps: f64, moll: &MollifierSpec, g: &TestFunctionSpec) -> Result<f64> {
    check_safe_window(g, eps, state.m(), moll)?;
    if g.support_radius() == 0.0 {
        return Ok(0.0);
    }
    integrate_panels(
        |u| {
            let y = field_unchecked(state, eps, moll, u);
            g.h(u) * y * y
        },
        &u_panels(g, eps, moll),
        1e-12,
    )
}

/// `V_ε^G(ξ) = -Σ_x G'(εx) ξ(x)ξ(x+1)`.
pub fn build_v_g(g: &TestFunctionSpec, eps: f64, m: usize) -> Result<ObservableSpec> {
    check_ring_size(m)?;
    let mut v = ObservableSpec::new(m)?;
    for i in 0..m {
        let x = index_site(i, m);
        v.add_product(x, x + 1, -g.derivative(1, eps * x as f64));
    }
    v.prune_zeros();
    v.meta = ObservableMeta {
        label: "V_G".into(),
        eps: Some(eps),
        mollifier_n: None,
        test_function: Some(g.label()),
    };
    Ok(v)
}

/// Shared inputs for assembling the four fluctuation observables.
pub struct FluctuationBuilder<'a> {
    pub g: &'a TestFunctionSpec,
    pub eps: f64,
    pub moll: &'a MollifierSpec,
    pub m: usize,
    overlaps: OverlapTable,
}

impl<'a> FluctuationBuilder<'a> {
    pub fn new(g: &'a TestFunctionSpec, eps: f64, moll: &'a MollifierSpec, m: usize) -> Result<Self> {
        check_ring_size(m)?;
        if !(eps > 0.0) {
            return Err(Error::NonPositive {
                what: "eps",
                value: eps,
            });
        }
        check_safe_window(g, eps, m, moll)?;
        Ok(Self {
            g,
            eps,
            moll,
            m,
            overlaps: moll.overlap_table(eps)?,
        })
    }

    pub fn overlaps(&self) -> &OverlapTable {
        &self.overlaps
    }

    fn sites(&self) -> impl Iterator<Item = i64> {
        let h = self.m as i64 / 2;
        -h..h
    }

    fn in_window(&self, x: i64) -> bool {
        let h = self.m as i64 / 2;
        (-h..h).contains(&x)
    }

    fn meta(&self, label: &str) -> ObservableMeta {
        ObservableMeta {
            label: label.into(),
            eps: Some(self.eps),
            mollifier_n: Some(self.moll.n),
            test_function: Some(self.g.label()),
        }
    }

    /// `ε Σ_{x̃} O(x̃ - x)` over window sites `x̃`.
    pub fn riemann_mass(&self, x: i64) -> f64 {
        let b = self.overlaps.bandwidth() as i64;
        let mut acc = 0.0;
        for k in -b..=b {
            if self.in_window(x + k) {
                acc += self.overlaps.get(k);
            }
        }
        self.eps * acc
    }

    pub fn build(&self, i: u8) -> Result<ObservableSpec> {
        let mut v = match i {
            1 => self.v1()?,
            2 => self.v2()?,
            3 => self.v3()?,
            4 => self.v4()?,
            _ => return Err(Error::OutOfRange(format!("fluctuation index must be 1..=4, got {i}"))),
        };
        v.prune_zeros();
        v.meta = self.meta(&format!("V_H{i}"));
        Ok(v)
    }

    fn v1(&self) -> Result<ObservableSpec> {
        let mut v = ObservableSpec::new(self.m)?;
        if self.g.support_radius() == 0.0 {
            return Ok(v);
        }
        let eps = self.eps;
        let r = self.moll.radius();
        let b = self.overlaps.bandwidth() as i64;
        for x in self.sites() {
            let ux = eps * x as f64;
            let hx = self.g.h(ux);
            for k in -b..=b {
                let xt = x + k;
                if !self.in_window(xt) {
                    continue;
                }
                let delta = eps * k as f64;
                let (lo, hi) = ((-r).max(delta - r), r.min(delta + r));
                if lo >= hi {
                    continue;
                }
                let c = eps
                    * integrate(
                        |w| (self.g.h(ux + w) - hx) * self.moll.eval(w) * self.moll.eval(w - delta),
                        lo,
                        hi,
                        OVERLAP_TOL,
                    )?;
                v.add_product(x, xt, c);
            }
        }
        Ok(v)
    }

    fn v2(&self) -> Result<ObservableSpec> {
        let mut v = ObservableSpec::new(self.m)?;
        let o0 = self.overlaps.get(0);
        for x in self.sites() {
            let c = self.eps * self.g.h(self.eps * x as f64) * o0;
            v.c0 += c;
            v.add_product(x, x + 1, -c);
        }
        Ok(v)
    }

    fn v3(&self) -> Result<ObservableSpec> {
        let mut v = ObservableSpec::new(self.m)?;
        let b = self.overlaps.bandwidth() as i64;
        for x in self.sites() {
            let hx = self.eps * self.g.h(self.eps * x as f64);
            if hx == 0.0 {
                continue;
            }
            for k in (-b..=b).filter(|&k| k != 0) {
                if !self.in_window(x + k) {
                    continue;
                }
                let c = hx * self.overlaps.get(k);
                v.add_product(x, x + k, c);
                v.add_product(x, x + 1, -c);
            }
        }
        Ok(v)
    }

    fn v4(&self) -> Result<ObservableSpec> {
        let mut v = ObservableSpec::new(self.m)?;
        for x in self.sites() {
            let hx = self.g.h(self.eps * x as f64);
            if hx == 0.0 {
                continue;
            }
            v.add_product(x, x + 1, hx * (self.riemann_mass(x) - 1.0));
        }
        Ok(v)
    }
}

/// Convenience wrapper around [`FluctuationBuilder`].
pub fn build_v_h(g: &TestFunctionSpec, eps: f64, moll: &MollifierSpec, m: usize, i: u8) -> Result<ObservableSpec> {
    FluctuationBuilder::new(g, eps, moll, m)?.build(i)
}

/// `Σ_x̃ ε d_N(u - εx̃) - 1` over all of `εℤ`.
pub fn riemann_defect(eps: f64, moll: &MollifierSpec, u: f64) -> f64 {
    let r = moll.radius();
    let lo = ((u - r) / eps).ceil() as i64;
    let hi = ((u + r) / eps).floor() as i64;
    let s: f64 = (lo..=hi).map(|x| moll.eval(u - eps * x as f64)).sum();
    eps * s - 1.0
}

/// The bound `ε²N²‖d''‖_∞` on [`riemann_defect`].
pub fn riemann_defect_bound(eps: f64, moll: &MollifierSpec) -> f64 {
    let n = f64::from(moll.n);
    eps * eps * n * n * moll.sup_dd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{eval_observable, sample_bernoulli_half};
    use crate::stats::replica_rng;

    #[test]
    fn bump_is_normalized() {
        let d = MollifierSpec::new(1).unwrap();
        assert!((d.norm_const - 2.2522836206907617).abs() < 1e-9, "{}", d.norm_const);
        for n in [1, 4, 16] {
            let dn = MollifierSpec::new(n).unwrap();
            let r = dn.radius();
            let mass = integrate(|x| dn.eval(x), -r, r, 1e-12).unwrap();
            assert!((mass - 1.0).abs() < 1e-10);
            let sq = integrate(|x| dn.eval(x).powi(2), -r, r, 1e-12).unwrap();
            assert!((sq - f64::from(n) * dn.l2_sq).abs() < 1e-10 * sq);
            assert_eq!(dn.eval(1.0001 * r), 0.0);
            assert_eq!(dn.eval(-1.5 * r), 0.0);
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let d = MollifierSpec::new(1).unwrap();
        for u in [-0.7, -0.2, 0.0, 0.33, 0.8] {
            let h = 1e-4;
            let fd = (d.base(u + h) - 2.0 * d.base(u) + d.base(u - h)) / (h * h);
            assert!((fd - d.base_dd(u)).abs() < 1e-5 * d.sup_dd, "u={u}");
        }
        assert!(d.sup_dd >= d.base_dd(0.0).abs());
    }

    #[test]
    fn evenness_kills_first_moment() {
        let d = MollifierSpec::new(8).unwrap();
        let r = d.radius();
        let m1 = integrate(|w| w * d.eval(w).powi(2), -r, r, 1e-14).unwrap();
        assert!(m1.abs() <= 1e-12);
    }

    #[test]
    fn gaussian_family_derivatives() {
        let g = TestFunctionSpec::new(TestFamily::GaussianPoly {
            coeffs: vec![0.5, -1.0, 0.25],
            sigma: 0.7,
        })
        .unwrap();
        for u in [-1.3, -0.2, 0.0, 0.9] {
            let h = 1e-5;
            for k in 0..3 {
                let fd = (g.derivative(k, u + h) - g.derivative(k, u - h)) / (2.0 * h);
                assert!((fd - g.derivative(k + 1, u)).abs() < 1e-7, "k={k} u={u}");
            }
        }
        assert!(g.norms.h_integral.abs() < 1e-12);
        let dflt = TestFunctionSpec::new(TestFamily::default()).unwrap();
        assert!(
            dflt.support_radius() > 3.0 && dflt.support_radius() < 3.7,
            "{}",
            dflt.support_radius()
        );
        assert!(dflt.h(5.0).abs() < 1e-14 * dflt.norms.weighted_h);
    }

    #[test]
    fn field_convolution_examples() {
        let eps = 1.0 / 32.0;
        let m = 256;
        let d = MollifierSpec::new(4).unwrap();
        let full = LatticeState::full(m).unwrap();
        let u = 0.37;
        let direct: f64 = (-128..128).map(|x| d.eval(u - eps * x as f64)).sum::<f64>() * eps.sqrt();
        assert!((field_convolution(&full, eps, &d, u).unwrap() - direct).abs() < 1e-12);

        let mut rng = replica_rng(2, 0);
        let s = sample_bernoulli_half(m, &mut rng).unwrap();
        let mut flipped = s.clone();
        let x0 = 10i64;
        let i0 = crate::lattice::site_index(x0, m);
        flipped.set_at(i0, !s.occ_at(i0));
        for u in [0.2, 0.3125, 0.4] {
            let diff = field_convolution(&flipped, eps, &d, u).unwrap() - field_convolution(&s, eps, &d, u).unwrap();
            let expect = 2.0 * eps.sqrt() * d.eval(u - eps * x0 as f64) * flipped.spin(x0);
            assert!((diff - expect).abs() < 1e-13);
        }
        assert!(field_convolution(&s, eps, &d, 3.9).is_err());
    }

    #[test]
    fn f_n_equals_double_sum() {
        let eps = 1.0 / 16.0;
        let m = 128;
        let d = MollifierSpec::new(4).unwrap();
        let g = TestFunctionSpec::gaussian(0.4).unwrap();
        let mut rng = replica_rng(9, 0);
        let s = sample_bernoulli_half(m, &mut rng).unwrap();
        let f = evaluate_f_n(&s, eps, &d, &g).unwrap();
        let r = d.radius();
        let mut dbl = 0.0;
        for x in -64i64..64 {
            for xt in -64i64..64 {
                let (ux, ut) = (eps * x as f64, eps * xt as f64);
                let (lo, hi) = ((ux - r).max(ut - r), (ux + r).min(ut + r));
                if lo >= hi {
                    continue;
                }
                let i = integrate(|u| g.h(u) * d.eval(u - ux) * d.eval(u - ut), lo, hi, 1e-13).unwrap();
                dbl += eps * i * s.spin(x) * s.spin(xt);
            }
        }
        assert!((f - dbl).abs() < 1e-8, "{f} vs {dbl}");
    }

    #[test]
    fn v_g_examples() {
        let g = TestFunctionSpec::gaussian(0.4).unwrap();
        let v = build_v_g(&g, 1.0 / 16.0, 128).unwrap();
        assert_eq!(v.pair(0, 1), -g.derivative(1, 0.0));
        let full = LatticeState::full(128).unwrap();
        let direct: f64 = (-64..64).map(|x| -g.derivative(1, x as f64 / 16.0)).sum();
        assert!((eval_observable(&full, &v).unwrap() - direct).abs() < 1e-13);
        let c = TestFunctionSpec::new(TestFamily::Constant { value: 2.0 }).unwrap();
        assert!(build_v_g(&c, 1.0 / 16.0, 128).unwrap().is_zero());
    }

    #[test]
    fn v_h2_closed_form() {
        let g = TestFunctionSpec::gaussian(0.4).unwrap();
        let d = MollifierSpec::new(8).unwrap();
        let eps = 1.0 / 32.0;
        let v = build_v_h(&g, eps, &d, 256, 2).unwrap();
        let nd = 8.0 * d.l2_sq;
        let c0: f64 = (-128..128).map(|x| eps * g.h(eps * x as f64) * nd).sum();
        assert!((v.c0 - c0).abs() < 1e-14);
        assert!((v.pair(3, 4) + eps * g.h(3.0 * eps) * nd).abs() < 1e-15);
    }

    #[test]
    fn zero_h_gives_zero_fluctuations() {
        let c = TestFunctionSpec::new(TestFamily::Constant { value: 1.0 }).unwrap();
        let d = MollifierSpec::new(4).unwrap();
        for i in 1..=4 {
            assert!(build_v_h(&c, 1.0 / 16.0, &d, 128, i).unwrap().is_zero());
        }
        assert!(build_v_h(&c, 1.0 / 16.0, &d, 128, 5).is_err());
    }

    #[test]
    fn band_structure() {
        let g = TestFunctionSpec::gaussian(0.4).unwrap();
        let d = MollifierSpec::new(4).unwrap();
        let eps = 1.0 / 32.0;
        let width = (2.0 / (eps * 4.0)) as usize + 2;
        for i in 1..=4 {
            let v = build_v_h(&g, eps, &d, 256, i).unwrap();
            assert!(v.max_pair_distance() <= width, "i={i}");
        }
    }

    #[test]
    fn split_identity_small() {
        let g = TestFunctionSpec::gaussian(0.4).unwrap();
        let d = MollifierSpec::new(4).unwrap();
        let eps = 1.0 / 16.0;
        let m = 128;
        let b = FluctuationBuilder::new(&g, eps, &d, m).unwrap();
        let vs: Vec<ObservableSpec> = (1..=4).map(|i| b.build(i).unwrap()).collect();
        let vg = build_v_g(&g, eps, m).unwrap();
        let mut rng = replica_rng(31, 0);
        for _ in 0..10 {
            let s = sample_bernoulli_half(m, &mut rng).unwrap();
            let lhs = evaluate_f_n(&s, eps, &d, &g).unwrap() - eval_observable(&s, &vg).unwrap();
            let rhs: f64 = vs.iter().map(|v| eval_observable(&s, v).unwrap()).sum();
            assert!((lhs - rhs).abs() < 1e-7, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn safe_window_is_enforced() {
        let g = TestFunctionSpec::gaussian(1.0).unwrap();
        let d = MollifierSpec::new(4).unwrap();
        assert!(matches!(
            FluctuationBuilder::new(&g, 1.0 / 16.0, &d, 128),
            Err(Error::SafeWindow { .. })
        ));
    }

    #[test]
    fn riemann_defect_within_bound() {
        let d = MollifierSpec::new(8).unwrap();
        let eps = 1.0 / 64.0;
        let bound = riemann_defect_bound(eps, &d);
        for i in 0..100 {
            let u = -1.0 + 0.02 * i as f64;
            assert!(riemann_defect(eps, &d, u).abs() <= bound);
        }
    }
}
