//! Monte Carlo estimators, dense oracles and the inequality checks built on them.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmc::{simulate_path_integrals, DynamicsParams, ObservableBank, PathOptions, PathRecord, TimeProfile};
use crate::lattice::{check_ring_size, sample_bernoulli_half, ObservableSpec};
use crate::mollifier::{build_v_g, FluctuationBuilder, MollifierSpec, TestFamily, TestFunctionSpec};
use crate::quad::integrate_to_infinity;
use crate::resolvent::{compare_resolvents, quadratic_form_sym_resolvent, ResolventComparison};
use crate::semigroup::{dense_resolvent_full, observable_vector, DenseSemigroup, Which};
use crate::stats::{fan_out, pairwise_sum, replica_rng, Estimate};

/// Largest ring on which the dense oracles run.
pub const MAX_ORACLE_SITES: usize = 8;
/// Default macroscopic window length: `M = ⌈L/ε⌉` rounded up to even.
pub const DEFAULT_L_MACRO: f64 = 8.0;

fn one() -> f64 {
    1.0
}

fn default_l_macro() -> f64 {
    DEFAULT_L_MACRO
}

/// Which observable an experiment integrates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableChoice {
    /// `scale · ξ(0)ξ(1)/4`.
    VSharp {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale · (ξ(0)ξ(2) - ξ(0)ξ(1))`.
    PairGradient {
        #[serde(default = "one")]
        scale: f64,
    },
    Constant {
        value: f64,
    },
    /// `V_ε^G` for the configured test function.
    VG,
    /// `V^{H,i}` for the configured test function and mollifier.
    VH {
        i: u8,
    },
    /// An observable document written by [`ObservableSpec::to_json`].
    File {
        path: PathBuf,
    },
}

impl Default for ObservableChoice {
    fn default() -> Self {
        ObservableChoice::VSharp { scale: 1.0 }
    }
}

/// Parameters shared by every suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub eps: f64,
    pub gamma_tilde: f64,
    /// Macroscopic horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Ring size; defaults to `⌈l_macro/ε⌉` rounded up to even.
    #[serde(default, rename = "M")]
    pub m: Option<usize>,
    /// Mollifier index.
    #[serde(default, rename = "N")]
    pub n: Option<u32>,
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub observable: ObservableChoice,
    #[serde(default)]
    pub profile: TimeProfile,
    #[serde(default)]
    pub test_function: TestFamily,
    #[serde(default = "default_l_macro")]
    pub l_macro: f64,
    #[serde(default)]
    pub scan: ScanConfig,
}

/// One `(ε, N)` grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub eps: f64,
    #[serde(rename = "N")]
    pub n: u32,
}

/// Grids and switches for the scanning commands; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Macroscopic times for two-point functions.
    pub times: Vec<f64>,
    /// Site offsets for two-point functions.
    pub distances: Vec<i64>,
    pub alphas: Vec<f64>,
    /// Ring sizes for the `α = 1/M²` scan; empty skips it.
    pub kv_ms: Vec<usize>,
    pub gammas: Vec<f64>,
    pub epss: Vec<f64>,
    pub vectors: usize,
    pub grid: Vec<GridPoint>,
    /// Fluctuation indices for the resolvent scan.
    pub fluctuations: Vec<u8>,
    pub lhs: LhsSource,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let pt = |eps: f64, n: u32| GridPoint { eps, n };
        Self {
            times: vec![0.0, 0.25, 0.5, 1.0],
            distances: vec![0, 1, 2],
            alphas: vec![0.1, 1.0, 10.0],
            kv_ms: Vec::new(),
            gammas: vec![0.5, 1.0],
            epss: vec![0.25, 0.0625],
            vectors: 100,
            grid: vec![
                pt(1.0 / 64.0, 4),
                pt(1.0 / 64.0, 8),
                pt(1.0 / 64.0, 16),
                pt(1.0 / 64.0, 32),
                pt(1.0 / 16.0, 8),
                pt(1.0 / 32.0, 8),
            ],
            fluctuations: vec![1, 2, 3],
            lhs: LhsSource::MonteCarlo,
        }
    }
}

/// Ring size tied to `ε`: `⌈l/ε⌉`, rounded up to the next even number.
pub fn ring_size_for(eps: f64, l_macro: f64) -> usize {
    let m = (l_macro / eps - 1e-9).ceil() as usize;
    (m + m % 2).max(4)
}

impl ExperimentConfig {
    pub fn params(&self) -> Result<DynamicsParams> {
        DynamicsParams::new(self.eps, self.gamma_tilde)
    }

    pub fn ring_size(&self) -> usize {
        self.m.unwrap_or_else(|| ring_size_for(self.eps, self.l_macro))
    }

    /// `c = ε^{-2}`.
    pub fn time_scale(&self) -> f64 {
        1.0 / (self.eps * self.eps)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        check_ring_size(self.ring_size())?;
        if self.replicas == 0 {
            return Err(Error::Config("field `replicas` must be positive".into()));
        }
        if self.scan.vectors == 0 {
            return Err(Error::Config("field `scan.vectors` must be positive".into()));
        }
        for (what, value) in [("T", self.horizon), ("beta", self.beta), ("l_macro", self.l_macro)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!(
                    "field `{what}` must be finite and positive, got {value}"
                )));
            }
        }
        if self.n == Some(0) {
            return Err(Error::Config("field `N` must be at least 1".into()));
        }
        self.profile.validate()?;
        TestFunctionSpec::new(self.test_function.clone())?;
        Ok(())
    }

    pub fn test_function(&self) -> Result<TestFunctionSpec> {
        TestFunctionSpec::new(self.test_function.clone())
    }

    pub fn mollifier(&self) -> Result<MollifierSpec> {
        let n = self
            .n
            .ok_or_else(|| Error::Config("field `N` is required for mollified observables".into()))?;
        MollifierSpec::new(n)
    }

    pub fn observable(&self) -> Result<ObservableSpec> {
        let m = self.ring_size();
        match &self.observable {
            ObservableChoice::VSharp { scale } => Ok(ObservableSpec::v_sharp(m)?.scaled(*scale)),
            ObservableChoice::PairGradient { scale } => Ok(ObservableSpec::pair_gradient(m)?.scaled(*scale)),
            ObservableChoice::Constant { value } => ObservableSpec::constant(m, *value),
            ObservableChoice::VG => build_v_g(&self.test_function()?, self.eps, m),
            ObservableChoice::VH { i } => {
                let g = self.test_function()?;
                let d = self.mollifier()?;
                FluctuationBuilder::new(&g, self.eps, &d, m)?.build(*i)
            }
            ObservableChoice::File { path } => {
                let v = ObservableSpec::from_json(&std::fs::read_to_string(path)?)?;
                if v.m() != m {
                    return Err(Error::Config(format!(
                        "observable file is defined on {} sites, configuration asks for {m}",
                        v.m()
                    )));
                }
                Ok(v)
            }
        }
    }
}

/// Per-replica path integrals of several observables.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct McResult {
    pub replicas: usize,
    /// `I_j` per replica, outer index observable.
    pub samples: Vec<Vec<f64>>,
    pub sum_samples: Option<Vec<f64>>,
    pub frozen: usize,
    pub events: u64,
}

impl McResult {
    pub fn estimate(&self, j: usize) -> Estimate {
        Estimate::from_samples(&self.samples[j])
    }

    pub fn sum_estimate(&self) -> Option<Estimate> {
        self.sum_samples.as_deref().map(Estimate::from_samples)
    }
}

/// Stationary replicas of the dynamics integrating every observable in `vs`.
#[allow(clippy::too_many_arguments)]
pub fn mc_time_avg_squares(
    vs: &[ObservableSpec],
    params: &DynamicsParams,
    m: usize,
    horizon: f64,
    profile: &TimeProfile,
    replicas: usize,
    seed: u64,
    workers: usize,
    track_sum: bool,
) -> Result<McResult> {
    let bank = ObservableBank::new(m, vs)?;
    let opts = PathOptions {
        track_sum,
        ..Default::default()
    };
    let runs: Vec<Result<PathRecord>> = fan_out(replicas, workers, |r| {
        let mut rng = replica_rng(seed, r as u64);
        let mut state = sample_bernoulli_half(m, &mut rng)?;
        simulate_path_integrals(&mut state, params, &bank, horizon, profile, &opts, &mut rng)
    });
    let mut out = McResult {
        replicas,
        samples: vec![Vec::with_capacity(replicas); vs.len()],
        sum_samples: track_sum.then(|| Vec::with_capacity(replicas)),
        ..Default::default()
    };
    for run in runs {
        let rec = run?;
        for (s, i) in out.samples.iter_mut().zip(&rec.integrals) {
            s.push(*i);
        }
        if let (Some(s), Some(v)) = (out.sum_samples.as_mut(), rec.sum_integral) {
            s.push(v);
        }
        out.frozen += usize::from(rec.frozen);
        out.events += rec.events;
    }
    Ok(out)
}

/// Monte Carlo estimate of `∫₀ᵀ dt E[(∫₀ᵗ a(s) V(ξ_{sε^{-2}}) ds)²]`.
pub fn mc_time_avg_square(v: &ObservableSpec, cfg: &ExperimentConfig, workers: usize) -> Result<McResult> {
    mc_time_avg_squares(
        std::slice::from_ref(v),
        &cfg.params()?,
        v.m(),
        cfg.horizon,
        &cfg.profile,
        cfg.replicas,
        cfg.seed,
        workers,
        false,
    )
}

fn check_oracle_size(m: usize) -> Result<()> {
    if m > MAX_ORACLE_SITES {
        return Err(Error::TooLarge {
            what: "ring size for dense oracles",
            value: m,
            limit: MAX_ORACLE_SITES,
        });
    }
    Ok(())
}

/// Exact `∫₀ᵀ dt E[(∫₀ᵗ a(s) V ds)²]` from the dense semigroup, `M ≤ 8`.
pub fn oracle_time_avg_square(
    v: &ObservableSpec,
    params: &DynamicsParams,
    horizon: f64,
    profile: &TimeProfile,
) -> Result<f64> {
    check_oracle_size(v.m())?;
    let sg = DenseSemigroup::new(v.m(), params)?;
    Ok(sg.time_avg_square(&observable_vector(v)?, horizon, profile))
}

/// Right-hand side of the space-time resolvent bound for `V(s,η) = a(s)V(η)`:
/// `2e^{βT}/(βc²) · c/(β+2λ) · (V | ((β+λ)/c - L)^{-1} V)`.
pub fn rhs_lemma1(
    v: &ObservableSpec,
    params: &DynamicsParams,
    horizon: f64,
    beta: f64,
    profile: &TimeProfile,
) -> Result<f64> {
    check_oracle_size(v.m())?;
    let c = params.time_scale();
    let lambda = profile.lambda();
    let form = dense_resolvent_full(v, (beta + lambda) / c, params, Which::L)?;
    Ok(2.0 * (beta * horizon).exp() / (beta * c * c) * c / (beta + 2.0 * lambda) * form)
}

/// Time-independent bound `2e^{βT}/(β²c) · (V | (β/c - L)^{-1} V)`.
pub fn rhs_time_independent(v: &ObservableSpec, params: &DynamicsParams, horizon: f64, beta: f64) -> Result<f64> {
    check_oracle_size(v.m())?;
    let c = params.time_scale();
    Ok(2.0 * (beta * horizon).exp() / (beta * beta * c) * dense_resolvent_full(v, beta / c, params, Which::L)?)
}

/// `2e^{βT}/(βc²) · ∫₀^∞ds ∫₀^∞dr e^{-βr/(2c)} (Ṽ(s) | p_r Ṽ(s+r))` with
/// `Ṽ(s) = e^{-βs/(2c)} a(s/c) V`, by nested adaptive quadrature.
pub fn rhs_lemma1_double_quadrature(
    v: &ObservableSpec,
    params: &DynamicsParams,
    horizon: f64,
    beta: f64,
    profile: &TimeProfile,
    tol: f64,
) -> Result<f64> {
    check_oracle_size(v.m())?;
    let sg = DenseSemigroup::new(v.m(), params)?;
    let x = observable_vector(v)?;
    let c = params.time_scale();
    let tilde = |s: f64| (-beta * s / (2.0 * c)).exp() * profile.eval(s / c);
    let mut failure = None;
    let outer = integrate_to_infinity(
        |s| {
            let inner = integrate_to_infinity(
                |r| (-beta * r / (2.0 * c)).exp() * tilde(s) * tilde(s + r) * sg.correlation(&x, r),
                0.0,
                tol,
            );
            inner.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                0.0
            })
        },
        0.0,
        tol,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(2.0 * (beta * horizon).exp() / (beta * c * c) * outer)
}

/// Symmetric-resolvent bound `2e^{βT}/(β²c) · (V | (β/c - S)^{-1} V)` by CG.
pub fn rhs_symmetric(v: &ObservableSpec, eps: f64, horizon: f64, beta: f64) -> Result<f64> {
    let c = 1.0 / (eps * eps);
    let form = quadratic_form_sym_resolvent(v, beta / c)?;
    Ok(2.0 * (beta * horizon).exp() / (beta * beta * c) * form.value)
}

/// One inequality `lhs ≤ rhs` with a Monte Carlo or exact left-hand side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub label: String,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub replicas: usize,
    pub frozen: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl InequalityReport {
    pub fn from_estimate(label: impl Into<String>, lhs: Estimate, rhs: f64, samples: Vec<f64>, frozen: usize) -> Self {
        Self {
            label: label.into(),
            lhs: lhs.mean,
            lhs_se: lhs.se,
            rhs,
            slack: rhs - lhs.mean,
            pass: lhs.mean - 3.0 * lhs.se <= rhs,
            replicas: lhs.n,
            frozen,
            samples,
        }
    }

    pub fn exact(label: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::from_estimate(
            label,
            Estimate {
                mean: lhs,
                se: 0.0,
                n: 0,
            },
            rhs,
            Vec::new(),
            0,
        )
    }
}

/// Where the left-hand side of a small-ring check comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhsSource {
    #[default]
    MonteCarlo,
    Oracle,
}

/// Space-time bound with the configured profile, `M ≤ 8`.
pub fn check_lemma1(cfg: &ExperimentConfig, source: LhsSource, workers: usize) -> Result<InequalityReport> {
    let v = cfg.observable()?;
    let params = cfg.params()?;
    let rhs = rhs_lemma1(&v, &params, cfg.horizon, cfg.beta, &cfg.profile)?;
    let label = format!(
        "lemma1 M={} eps={} gamma_tilde={} beta={} lambda={} {:?}",
        v.m(),
        cfg.eps,
        cfg.gamma_tilde,
        cfg.beta,
        cfg.profile.lambda(),
        source
    );
    Ok(match source {
        LhsSource::Oracle => InequalityReport::exact(
            label,
            oracle_time_avg_square(&v, &params, cfg.horizon, &cfg.profile)?,
            rhs,
        ),
        LhsSource::MonteCarlo => {
            let mc = mc_time_avg_square(&v, cfg, workers)?;
            let est = mc.estimate(0);
            InequalityReport::from_estimate(
                label,
                est,
                rhs,
                mc.samples.into_iter().next().unwrap_or_default(),
                mc.frozen,
            )
        }
    })
}

/// Time-independent observable against the symmetric-resolvent bound,
/// Monte Carlo left-hand side; the configured profile is ignored.
pub fn check_remark6iii(cfg: &ExperimentConfig, workers: usize) -> Result<InequalityReport> {
    let v = cfg.observable()?;
    let rhs = rhs_symmetric(&v, cfg.eps, cfg.horizon, cfg.beta)?;
    let mut flat = cfg.clone();
    flat.profile = TimeProfile::Constant;
    let mc = mc_time_avg_square(&v, &flat, workers)?;
    let label = format!(
        "remark6iii M={} eps={} gamma_tilde={} beta={} observable={}",
        v.m(),
        cfg.eps,
        cfg.gamma_tilde,
        cfg.beta,
        if v.meta.label.is_empty() {
            "custom"
        } else {
            &v.meta.label
        }
    );
    Ok(InequalityReport::from_estimate(
        label,
        mc.estimate(0),
        rhs,
        mc.samples.into_iter().next().unwrap_or_default(),
        mc.frozen,
    ))
}

/// Matrix-level resolvent comparison row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corollary24Row {
    pub m: usize,
    pub eps: f64,
    pub gamma_tilde: f64,
    pub alpha: f64,
    pub vectors: usize,
    pub violations: usize,
    /// `max (uᵀ(α-L)^{-1}u - uᵀ(α-S)^{-1}u)` over the vectors.
    pub max_excess: f64,
}

pub fn corollary24_suite(
    m: usize,
    gammas: &[f64],
    epss: &[f64],
    alphas: &[f64],
    vectors: usize,
    seed: u64,
) -> Result<Vec<Corollary24Row>> {
    let mut rows = Vec::new();
    let mut stream = 0u64;
    for &gt in gammas {
        for &eps in epss {
            let params = DynamicsParams::new(eps, gt)?;
            let mut rng = replica_rng(seed, stream);
            stream += 1;
            let cmp: Vec<ResolventComparison> = compare_resolvents(m, &params, alphas, vectors, &mut rng)?;
            for &alpha in alphas {
                let sel: Vec<&ResolventComparison> = cmp.iter().filter(|c| c.alpha == alpha).collect();
                rows.push(Corollary24Row {
                    m,
                    eps,
                    gamma_tilde: gt,
                    alpha,
                    vectors: sel.len(),
                    violations: sel.iter().filter(|c| !c.holds(1e-10)).count(),
                    max_excess: sel
                        .iter()
                        .map(|c| c.with_l - c.with_s)
                        .fold(f64::NEG_INFINITY, f64::max),
                });
            }
        }
    }
    Ok(rows)
}

/// `R(ε, N, i) = 2e^{T} ε² (V^{H,i} | (ε² - S)^{-1} V^{H,i})` with `β = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyRow {
    pub i: u8,
    pub eps: f64,
    pub n: u32,
    pub m: usize,
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

pub fn key_result_value(g: &TestFunctionSpec, eps: f64, n: u32, i: u8, horizon: f64, l_macro: f64) -> Result<KeyRow> {
    if !(1..=3).contains(&i) {
        return Err(Error::OutOfRange(format!(
            "resolvent scan covers i = 1, 2, 3; i = {i} uses the direct bound"
        )));
    }
    let m = ring_size_for(eps, l_macro);
    let d = MollifierSpec::new(n)?;
    let v = FluctuationBuilder::new(g, eps, &d, m)?.build(i)?;
    let r = quadratic_form_sym_resolvent(&v, eps * eps)?;
    Ok(KeyRow {
        i,
        eps,
        n,
        m,
        value: 2.0 * horizon.exp() * eps * eps * r.value,
        iterations: r.iterations,
        residual: r.residual,
    })
}

pub fn scan_key_result(
    g: &TestFunctionSpec,
    grid: &[(f64, u32)],
    i: u8,
    horizon: f64,
    l_macro: f64,
    workers: usize,
) -> Result<Vec<KeyRow>> {
    fan_out(grid.len(), workers, |k| {
        key_result_value(g, grid[k].0, grid[k].1, i, horizon, l_macro)
    })
    .into_iter()
    .collect()
}

/// `∫₀ᵀ ε²N⁴‖d''‖²_∞‖H‖₁² t² dt`, the direct bound for the fourth fluctuation.
pub fn v4_direct_bound(g: &TestFunctionSpec, eps: f64, moll: &MollifierSpec, horizon: f64) -> f64 {
    let n = f64::from(moll.n);
    let per_t2 = eps * eps * n.powi(4) * moll.sup_dd.powi(2);
    per_t2 * g.norms.h_l1.powi(2) * horizon.powi(3) / 3.0
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = pairwise_sum(&lx) / n;
    let my = pairwise_sum(&ly) / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Replacement statistic and its consistency bounds at one `(N, ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementRow {
    pub n: u32,
    pub eps: f64,
    pub m: usize,
    pub replicas: usize,
    /// `∫₀ᵀ E[(∫₀ᵗ F_N ds - ∫₀ᵗ V_ε^G ds)²] dt`.
    pub statistic: f64,
    pub statistic_se: f64,
    /// `∫₀ᵀ E[(∫₀ᵗ V^{H,i})²] dt`, `i = 1..4`.
    pub parts: [f64; 4],
    pub parts_se: [f64; 4],
    /// `4 Σ_i parts[i]` with its standard error.
    pub cs_bound: f64,
    pub cs_bound_se: f64,
    /// Symmetric-resolvent bounds for `i = 1, 2, 3`.
    pub resolvent_bounds: [f64; 3],
    pub v4_bound: f64,
    pub frozen: usize,
}

impl ReplacementRow {
    /// Pathwise Cauchy–Schwarz makes `statistic ≤ cs_bound` hold sample by sample.
    pub fn cauchy_schwarz_holds(&self) -> bool {
        self.statistic <= self.cs_bound * (1.0 + 1e-12)
    }

    /// `parts[i] - 3·se ≤ bound` for `i = 1..3` and the direct bound for `i = 4`.
    pub fn bounds_hold(&self) -> bool {
        (0..3).all(|i| self.parts[i] - 3.0 * self.parts_se[i] <= self.resolvent_bounds[i])
            && self.parts[3] - 3.0 * self.parts_se[3] <= self.v4_bound
    }
}

pub fn replacement_point(
    g: &TestFunctionSpec,
    n: u32,
    eps: f64,
    cfg: &ExperimentConfig,
    seed: u64,
    workers: usize,
) -> Result<ReplacementRow> {
    let m = ring_size_for(eps, cfg.l_macro);
    let d = MollifierSpec::new(n)?;
    let builder = FluctuationBuilder::new(g, eps, &d, m)?;
    let vs: Vec<ObservableSpec> = (1..=4).map(|i| builder.build(i)).collect::<Result<_>>()?;
    let params = DynamicsParams::new(eps, cfg.gamma_tilde)?;
    let mc = mc_time_avg_squares(
        &vs,
        &params,
        m,
        cfg.horizon,
        &TimeProfile::Constant,
        cfg.replicas,
        seed,
        workers,
        true,
    )?;
    let stat = mc.sum_estimate().expect("sum tracked");
    let cs: Vec<f64> = (0..cfg.replicas)
        .map(|r| 4.0 * (0..4).map(|j| mc.samples[j][r]).sum::<f64>())
        .collect();
    let cs = Estimate::from_samples(&cs);
    let mut parts = [0.0; 4];
    let mut parts_se = [0.0; 4];
    for j in 0..4 {
        let e = mc.estimate(j);
        parts[j] = e.mean;
        parts_se[j] = e.se;
    }
    let mut resolvent_bounds = [0.0; 3];
    for (j, b) in resolvent_bounds.iter_mut().enumerate() {
        *b = rhs_symmetric(&vs[j], eps, cfg.horizon, 1.0)?;
    }
    Ok(ReplacementRow {
        n,
        eps,
        m,
        replicas: cfg.replicas,
        statistic: stat.mean,
        statistic_se: stat.se,
        parts,
        parts_se,
        cs_bound: cs.mean,
        cs_bound_se: cs.se,
        resolvent_bounds,
        v4_bound: v4_direct_bound(g, eps, &d, cfg.horizon),
        frozen: mc.frozen,
    })
}

/// Runs [`replacement_point`] over `(N, ε)` pairs; each point gets its own
/// seed derived from the master seed and the point index.
pub fn check_weak_replacement(
    g: &TestFunctionSpec,
    grid: &[(u32, f64)],
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<ReplacementRow>> {
    grid.iter()
        .enumerate()
        .map(|(k, &(n, eps))| replacement_point(g, n, eps, cfg, cfg.seed.wrapping_add(k as u64), workers))
        .collect()
}

/// `a - b` exceeds twice the combined standard error.
pub fn significantly_greater(a: f64, a_se: f64, b: f64, b_se: f64) -> bool {
    a - b > 2.0 * (a_se * a_se + b_se * b_se).sqrt()
}
