//! Dense configuration-space semigroup on small rings.
//!
//! Functions on `{0,1}^M` are vectors indexed by configuration code and the
//! stationary measure is uniform, so `(U | V)_{L²(ν)} = 2^{-M} Σ_η U(η)V(η)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kmc::{psi2, DynamicsParams, TimeProfile};
use crate::lattice::{eval_observable, LatticeState, ObservableSpec};
use crate::walsh::{config_generator_matrix, MAX_DENSE_SITES};

/// Values of `v` on every configuration, indexed by code.
pub fn observable_vector(v: &ObservableSpec) -> Result<DVector<f64>> {
    let m = v.m();
    if m > MAX_DENSE_SITES {
        return Err(Error::TooLarge {
            what: "ring size for dense observables",
            value: m,
            limit: MAX_DENSE_SITES,
        });
    }
    let n = 1usize << m;
    let mut out = DVector::zeros(n);
    for code in 0..n {
        out[code] = eval_observable(&LatticeState::from_code(m, code as u64)?, v)?;
    }
    Ok(out)
}

/// `(u | w)_{L²(ν)}`.
pub fn nu_inner(u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    u.dot(w) / u.len() as f64
}

/// `[φ₁(A)b, …, φ_p(A)b]` from one exponential of the augmented matrix
/// `[[A, b e₁ᵀ], [0, J]]`, `J` the upper shift.
pub fn phi_columns(a: &DMatrix<f64>, b: &DVector<f64>, p: usize) -> Vec<DVector<f64>> {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    for j in 0..p.saturating_sub(1) {
        aug[(n + j, n + j + 1)] = 1.0;
    }
    let e = aug.exp();
    (0..p)
        .map(|j| e.view((0, n + j), (n, 1)).into_owned().column(0).into_owned())
        .collect()
}

/// Dense generator with helpers for correlation functions and time integrals.
#[derive(Clone, Debug)]
pub struct DenseSemigroup {
    pub m: usize,
    pub params: DynamicsParams,
    /// Rate matrix `Q`; `Q f = L f`.
    pub q: DMatrix<f64>,
}

impl DenseSemigroup {
    pub fn new(m: usize, params: &DynamicsParams) -> Result<Self> {
        Ok(Self {
            m,
            params: *params,
            q: config_generator_matrix(m, params)?,
        })
    }

    /// `(Q + Qᵀ)/2`, the matrix of `S`.
    pub fn symmetric_part(&self) -> DMatrix<f64> {
        (&self.q + self.q.transpose()) * 0.5
    }

    /// `f(τ) = (V | e^{τL} V)` by the Padé matrix exponential.
    pub fn correlation(&self, v: &DVector<f64>, tau: f64) -> f64 {
        let e = (&self.q * tau).exp();
        nu_inner(v, &(e * v))
    }

    /// `f(τ)` by classical Runge–Kutta on `w' = Qw` with `steps` steps.
    pub fn correlation_rk4(&self, v: &DVector<f64>, tau: f64, steps: usize) -> f64 {
        let h = tau / steps as f64;
        let mut w = v.clone();
        for _ in 0..steps {
            let k1 = &self.q * &w;
            let k2 = &self.q * (&w + &k1 * (h / 2.0));
            let k3 = &self.q * (&w + &k2 * (h / 2.0));
            let k4 = &self.q * (&w + &k3 * h);
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        nu_inner(v, &w)
    }

    /// `f(τ)` through the symmetric eigendecomposition; only valid for `γ = 0`.
    pub fn correlation_eigen(&self, v: &DVector<f64>, taus: &[f64]) -> Result<Vec<f64>> {
        if self.params.gamma() != 0.0 {
            return Err(Error::OutOfRange(
                "eigendecomposition route needs a symmetric generator (gamma = 0)".into(),
            ));
        }
        let eig = SymmetricEigen::new(self.q.clone());
        let proj = eig.eigenvectors.transpose() * v;
        Ok(taus
            .iter()
            .map(|&t| {
                proj.iter()
                    .zip(eig.eigenvalues.iter())
                    .map(|(p, l)| p * p * (l * t).exp())
                    .sum::<f64>()
                    / v.len() as f64
            })
            .collect())
    }

    /// `∫₀ᵀ dt E_ν[(∫₀ᵗ a(s) V(η_{cs}) ds)²]` in closed form through φ-functions.
    pub fn time_avg_square(&self, v: &DVector<f64>, horizon: f64, profile: &TimeProfile) -> f64 {
        let c = self.params.time_scale();
        let n = self.q.nrows();
        let lambda = profile.lambda();
        let id = DMatrix::<f64>::identity(n, n);
        if lambda == 0.0 {
            let phis = phi_columns(&(&self.q * (horizon * c)), v, 3);
            return 2.0 * horizon.powi(3) * nu_inner(v, &phis[2]);
        }
        // K(u) = (T-u)e^{-λu}/λ - e^{-λu}/(2λ²) + e^{-2λT}e^{λu}/(2λ²)
        let b = &self.q * c - &id * lambda;
        let down = phi_columns(&(&b * horizon), v, 2);
        let up = phi_columns(&((&self.q * c + &id * lambda) * horizon), v, 1);
        let t = horizon;
        let l2 = lambda * lambda;
        t * t / lambda * nu_inner(v, &down[1]) - t / (2.0 * l2) * nu_inner(v, &down[0])
            + (-2.0 * lambda * t).exp() * t / (2.0 * l2) * nu_inner(v, &up[0])
    }

    /// Same quantity as [`Self::time_avg_square`] by composite Gauss–Legendre
    /// quadrature of `∫₀ᵀ K(u) f(cu) du` over `panels` panels.
    pub fn time_avg_square_quadrature(
        &self,
        v: &DVector<f64>,
        horizon: f64,
        profile: &TimeProfile,
        panels: usize,
    ) -> f64 {
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683_1,
            0.0,
            0.538_469_310_105_683_1,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189_08,
            0.478_628_670_499_366_47,
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_47,
            0.236_926_885_056_189_08,
        ];
        let c = self.params.time_scale();
        let lambda = profile.lambda();
        let kernel = |u: f64| {
            let r = horizon - u;
            2.0 * (-lambda * u).exp() * r * r * psi2(2.0 * lambda * r)
        };
        let h = horizon / panels as f64;
        let step = (&self.q * (c * h)).exp();
        let offsets: Vec<DMatrix<f64>> = NODES
            .iter()
            .map(|x| (&self.q * (c * h * 0.5 * (1.0 + x))).exp())
            .collect();
        let mut w = v.clone();
        let mut total = 0.0;
        for k in 0..panels {
            let u0 = k as f64 * h;
            let mut panel = 0.0;
            for ((x, wt), e) in NODES.iter().zip(WEIGHTS).zip(&offsets) {
                let u = u0 + h * 0.5 * (1.0 + x);
                panel += wt * kernel(u) * nu_inner(v, &(e * &w));
            }
            total += panel * h * 0.5;
            w = &step * w;
        }
        total
    }

    /// `(U | (μ - X)^{-1} W)` for `X ∈ {L, L*, S}` by dense LU.
    pub fn resolvent_form(&self, u: &DVector<f64>, w: &DVector<f64>, mu: f64, which: Which) -> Result<f64> {
        if !(mu > 0.0) {
            return Err(Error::NonPositive {
                what: "resolvent parameter mu",
                value: mu,
            });
        }
        let x = match which {
            Which::L => self.q.clone(),
            Which::LStar => self.q.transpose(),
            Which::S => self.symmetric_part(),
        };
        let n = x.nrows();
        let a = DMatrix::<f64>::identity(n, n) * mu - x;
        let g = a
            .lu()
            .solve(w)
            .ok_or(Error::OutOfRange("singular resolvent matrix".into()))?;
        Ok(nu_inner(u, &g))
    }
}

/// Which operator a dense resolvent inverts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    L,
    #[serde(rename = "lstar")]
    LStar,
    S,
}

/// `(V | (μ - X)^{-1} V)` in configuration space, `M ≤ 8`.
pub fn dense_resolvent_full(v: &ObservableSpec, mu: f64, params: &DynamicsParams, which: Which) -> Result<f64> {
    const MAX_SITES: usize = 8;
    if v.m() > MAX_SITES {
        return Err(Error::TooLarge {
            what: "ring size for dense resolvents",
            value: v.m(),
            limit: MAX_SITES,
        });
    }
    let sg = DenseSemigroup::new(v.m(), params)?;
    let x = observable_vector(v)?;
    sg.resolvent_form(&x, &x, mu, which)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_columns_of_scalar() {
        let a = DMatrix::from_element(1, 1, 0.7);
        let b = DVector::from_element(1, 1.0);
        let p = phi_columns(&a, &b, 3);
        let x: f64 = 0.7;
        let phi1 = (x.exp() - 1.0) / x;
        let phi2 = (x.exp() - 1.0 - x) / (x * x);
        let phi3 = (x.exp() - 1.0 - x - x * x / 2.0) / x.powi(3);
        assert!((p[0][0] - phi1).abs() < 1e-14);
        assert!((p[1][0] - phi2).abs() < 1e-14);
        assert!((p[2][0] - phi3).abs() < 1e-14);
    }

    #[test]
    fn correlation_routes_agree() {
        let p = DynamicsParams::symmetric(0.5).unwrap();
        let sg = DenseSemigroup::new(6, &p).unwrap();
        let v = observable_vector(&ObservableSpec::v_sharp(6).unwrap()).unwrap();
        let taus = [0.0, 0.3, 1.0, 2.5];
        let eig = sg.correlation_eigen(&v, &taus).unwrap();
        for (t, e) in taus.iter().zip(eig) {
            assert!((sg.correlation(&v, *t) - e).abs() < 1e-12);
            assert!((sg.correlation_rk4(&v, *t, 2000) - e).abs() < 1e-10);
        }
        assert!((eig_at_zero(&sg, &v) - 1.0 / 16.0).abs() < 1e-15);
    }

    fn eig_at_zero(sg: &DenseSemigroup, v: &DVector<f64>) -> f64 {
        sg.correlation(v, 0.0)
    }

    #[test]
    fn constant_observable_time_average() {
        let p = DynamicsParams::new(0.5, 1.0).unwrap();
        let sg = DenseSemigroup::new(4, &p).unwrap();
        let v = observable_vector(&ObservableSpec::constant(4, 2.0).unwrap()).unwrap();
        let got = sg.time_avg_square(&v, 1.5, &TimeProfile::Constant);
        assert!((got - 4.0 * 1.5f64.powi(3) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_panel_quadrature() {
        let p = DynamicsParams::new(0.5, 1.0).unwrap();
        let sg = DenseSemigroup::new(6, &p).unwrap();
        let v = observable_vector(&ObservableSpec::v_sharp(6).unwrap()).unwrap();
        for prof in [
            TimeProfile::Constant,
            TimeProfile::Exponential { lambda: 1.0 },
            TimeProfile::Exponential { lambda: 0.05 },
        ] {
            let a = sg.time_avg_square(&v, 1.0, &prof);
            let b = sg.time_avg_square_quadrature(&v, 1.0, &prof, 64);
            assert!((a - b).abs() < 1e-10 * a.abs(), "{prof:?}: {a} vs {b}");
        }
    }

    #[test]
    fn dense_resolvent_basics() {
        let v = ObservableSpec::v_sharp(6).unwrap();
        let p0 = DynamicsParams::symmetric(0.25).unwrap();
        let l = dense_resolvent_full(&v, 0.7, &p0, Which::L).unwrap();
        let s = dense_resolvent_full(&v, 0.7, &p0, Which::S).unwrap();
        assert_eq!(l, s);
        let p = DynamicsParams::new(0.25, 1.0).unwrap();
        let big = dense_resolvent_full(&v, 1e4, &p, Which::L).unwrap();
        assert!((big * 1e4 / v.norm_sq() - 1.0).abs() < 0.01);
        assert!(dense_resolvent_full(&v, 0.0, &p, Which::L).is_err());
        assert!(dense_resolvent_full(&ObservableSpec::v_sharp(10).unwrap(), 1.0, &p, Which::L).is_err());
    }
}
