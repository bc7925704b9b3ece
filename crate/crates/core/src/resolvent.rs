//! Quadratic forms of the symmetric resolvent `(α - S)^{-1}` on degree-≤2
//! observables, and the dense matrix-level resolvent comparison.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmc::DynamicsParams;
use crate::lattice::{ObservableSpec, WalshIndex};
use crate::walsh::{config_generator_matrix, sector_matrix, SectorOperator, WalshVector};

pub const DEFAULT_CG_TOL: f64 = 1e-10;
/// Smallest admissible `α·M²`; below it the sector problem is too ill-conditioned.
pub const MIN_ALPHA_M2: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub alpha: f64,
    pub m: usize,
    pub value: f64,
    /// `c0²/α`.
    pub degree0: f64,
    /// `⟨V₂, (α - S)^{-1} V₂⟩`.
    pub degree2: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Upper bound `(α + 8)/α` on the condition number of the sector matrix.
    pub condition_bound: f64,
}

/// Jacobi-preconditioned conjugate gradient for `A x = b`.
///
/// Returns the solution, the iteration count and the final relative residual
/// `‖Ax - b‖/‖b‖` (recomputed from scratch at exit).
pub fn conjugate_gradient(op: &SectorOperator, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = op.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0, 0.0));
    }
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut iters = 0;
    while iters < max_iter {
        if norm(&r) <= tol * bnorm {
            let res = true_residual(op, &x, b) / bnorm;
            if res <= tol {
                return Ok((x, iters, res));
            }
            // drifted recursive residual: restart from the true one
            op.apply(&x, &mut ap);
            r.iter_mut().zip(b).zip(&ap).for_each(|((r, b), a)| *r = b - a);
            z.iter_mut().zip(&r).zip(&inv_diag).for_each(|((z, r), d)| *z = r * d);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        op.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iters += 1;
    }
    let res = true_residual(op, &x, b) / bnorm;
    if res <= tol {
        Ok((x, iters, res))
    } else {
        Err(Error::CgNotConverged {
            iterations: iters,
            residual: res,
        })
    }
}

fn true_residual(op: &SectorOperator, x: &[f64], b: &[f64]) -> f64 {
    let mut ax = vec![0.0; b.len()];
    op.apply(x, &mut ax);
    ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_alpha(alpha: f64, m: usize) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositive {
            what: "resolvent shift alpha",
            value: alpha,
        });
    }
    if alpha * ((m * m) as f64) < MIN_ALPHA_M2 {
        return Err(Error::OutOfRange(format!(
            "alpha*M^2 = {:e} is below {MIN_ALPHA_M2:e}; the sector problem is too ill-conditioned",
            alpha * (m * m) as f64
        )));
    }
    Ok(())
}

fn max_iterations(dim: usize) -> usize {
    (10 * dim).clamp(1000, 200_000)
}

/// Solves `(α - S) g = V₂` on the pair sector and returns `g` with its report.
pub fn solve_pair_sector(v: &ObservableSpec, alpha: f64, tol: f64) -> Result<(SectorOperator, Vec<f64>, SolveReport)> {
    let m = v.m();
    check_alpha(alpha, m)?;
    let op = sector_matrix(m, 2, alpha)?;
    let mut b = vec![0.0; op.dim()];
    for ((x, y), c) in v.pairs() {
        let idx = op
            .index_of(&WalshIndex::from_sorted_unchecked(vec![x, y]))
            .expect("pair indices lie in the window");
        b[idx] += c;
    }
    let (g, iterations, residual) = conjugate_gradient(&op, &b, tol, max_iterations(op.dim()))?;
    let degree2 = dot(&b, &g);
    let degree0 = v.c0 * v.c0 / alpha;
    let report = SolveReport {
        alpha,
        m,
        value: degree0 + degree2,
        degree0,
        degree2,
        iterations,
        residual,
        condition_bound: (alpha + 8.0) / alpha,
    };
    Ok((op, g, report))
}

/// `(V | (α - S)^{-1} V)` for an observable of degrees `{0, 2}`.
pub fn quadratic_form_sym_resolvent(v: &ObservableSpec, alpha: f64) -> Result<SolveReport> {
    solve_pair_sector(v, alpha, DEFAULT_CG_TOL).map(|(_, _, r)| r)
}

/// Same as [`quadratic_form_sym_resolvent`] for a general Walsh vector;
/// degrees other than 0 and 2 are rejected.
pub fn quadratic_form_walsh(v: &WalshVector<f64>, alpha: f64) -> Result<SolveReport> {
    if let Some(&d) = v.degrees().iter().find(|&&d| d != 0 && d != 2) {
        return Err(Error::UnsupportedDegree(d));
    }
    quadratic_form_sym_resolvent(&v.to_observable()?, alpha)
}

/// `(U | (α - S)^{-1} V)`.
pub fn bilinear_sym_resolvent(u: &ObservableSpec, v: &ObservableSpec, alpha: f64) -> Result<f64> {
    if u.m() != v.m() {
        return Err(Error::Config("observables live on different rings".into()));
    }
    let (op, g, _) = solve_pair_sector(v, alpha, DEFAULT_CG_TOL)?;
    let mut acc = u.c0 * v.c0 / alpha;
    for ((x, y), c) in u.pairs() {
        acc += c * g[op
            .index_of(&WalshIndex::from_sorted_unchecked(vec![x, y]))
            .expect("in window")];
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KvRow {
    pub m: usize,
    pub alpha: f64,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `(V | (1/M² - S)^{-1} V)` across ring sizes, with `V` centered first.
pub fn kv_divergence_scan<F>(make: F, ms: &[usize]) -> Result<Vec<KvRow>>
where
    F: Fn(usize) -> Result<ObservableSpec>,
{
    ms.iter()
        .map(|&m| {
            let v = make(m)?.centered();
            let alpha = 1.0 / (m * m) as f64;
            let r = quadratic_form_sym_resolvent(&v, alpha)?;
            Ok(KvRow {
                m,
                alpha,
                value: r.value,
                iterations: r.iterations,
                residual: r.residual,
            })
        })
        .collect()
}

/// One random-vector comparison `uᵀ(α - L)^{-1}u` against `uᵀ(α - S)^{-1}u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventComparison {
    pub alpha: f64,
    pub with_l: f64,
    pub with_s: f64,
}

impl ResolventComparison {
    pub fn holds(&self, tol: f64) -> bool {
        self.with_l <= self.with_s + tol
    }
}

/// Draws `count` standard Gaussian vectors in configuration space and compares
/// the full and symmetric resolvent forms at each `alpha`.
pub fn compare_resolvents<R: Rng + ?Sized>(
    m: usize,
    params: &DynamicsParams,
    alphas: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<ResolventComparison>> {
    let q = config_generator_matrix(m, params)?;
    let s = (&q + q.transpose()) * 0.5;
    let n = q.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let us: Vec<DVector<f64>> = (0..count)
        .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(rng)))
        .collect();
    let mut out = Vec::with_capacity(alphas.len() * count);
    for &alpha in alphas {
        if !(alpha > 0.0) {
            return Err(Error::NonPositive {
                what: "resolvent shift alpha",
                value: alpha,
            });
        }
        let lu_l = (&id * alpha - &q).lu();
        let lu_s = (&id * alpha - &s).lu();
        for u in &us {
            let gl = lu_l.solve(u).ok_or(Error::OutOfRange("singular (alpha - L)".into()))?;
            let gs = lu_s.solve(u).ok_or(Error::OutOfRange("singular (alpha - S)".into()))?;
            out.push(ResolventComparison {
                alpha,
                with_l: u.dot(&gl),
                with_s: u.dot(&gs),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::{dense_resolvent_full, Which};
    use crate::stats::replica_rng;

    #[test]
    fn constant_observable() {
        let v = ObservableSpec::constant(8, 3.0).unwrap();
        let r = quadratic_form_sym_resolvent(&v, 0.5).unwrap();
        assert_eq!(r.value, 18.0);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn matches_dense_solve() {
        let v = ObservableSpec::v_sharp(8).unwrap();
        let p = DynamicsParams::symmetric(0.5).unwrap();
        let dense = dense_resolvent_full(&v, 1.0, &p, Which::S).unwrap();
        let r = quadratic_form_sym_resolvent(&v, 1.0).unwrap();
        assert!((r.value - dense).abs() < 1e-8, "{} vs {dense}", r.value);
        assert!(r.residual <= 1e-10);

        let mut w = ObservableSpec::pair_gradient(8).unwrap();
        w.c0 = 0.4;
        w.add_product(-4, 3, 0.7);
        let pa = DynamicsParams::new(0.25, 1.0).unwrap();
        let dense = dense_resolvent_full(&w, 0.3, &pa, Which::S).unwrap();
        assert!((quadratic_form_sym_resolvent(&w, 0.3).unwrap().value - dense).abs() < 1e-8);
    }

    #[test]
    fn monotone_in_alpha() {
        let v = ObservableSpec::v_sharp(32).unwrap();
        let vals: Vec<f64> = (0..8)
            .map(|k| quadratic_form_sym_resolvent(&v, 2f64.powi(-k)).unwrap().value)
            .collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn form_is_symmetric() {
        let mut rng = replica_rng(4, 0);
        let m = 16;
        let mut u = ObservableSpec::new(m).unwrap();
        let mut v = ObservableSpec::new(m).unwrap();
        for _ in 0..20 {
            u.add_product(
                rng.random_range(-8..8),
                rng.random_range(-8..8),
                rng.random_range(-1.0..1.0),
            );
            v.add_product(
                rng.random_range(-8..8),
                rng.random_range(-8..8),
                rng.random_range(-1.0..1.0),
            );
        }
        u.c0 = 0.0;
        v.c0 = 0.0;
        let a = bilinear_sym_resolvent(&u, &v, 0.2).unwrap();
        let b = bilinear_sym_resolvent(&v, &u, 0.2).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn rejects_higher_degrees_and_tiny_alpha() {
        let cubic = WalshVector::<f64>::basis_sites(&[0, 1, 2], 8).unwrap();
        assert!(matches!(
            quadratic_form_walsh(&cubic, 1.0),
            Err(Error::UnsupportedDegree(3))
        ));
        let v = ObservableSpec::v_sharp(8).unwrap();
        assert!(quadratic_form_sym_resolvent(&v, 1e-6).is_err());
        assert!(quadratic_form_sym_resolvent(&v, 0.0).is_err());
        let ok = WalshVector::from_observable(&v);
        assert!(quadratic_form_walsh(&ok, 1.0).is_ok());
    }

    #[test]
    fn full_resolvent_below_symmetric() {
        let p = DynamicsParams::new(0.25, 1.0).unwrap();
        let mut rng = replica_rng(21, 0);
        let rows = compare_resolvents(4, &p, &[0.1, 1.0], 20, &mut rng).unwrap();
        assert!(rows.iter().all(|r| r.holds(1e-10)));
    }
}
