use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmc::rates::{apply, propose, RateTable, Step};
use crate::kmc::DynamicsParams;
use crate::lattice::{site_index, LatticeState, ObservableSpec};

/// Time weight `a(s)` multiplying the observable inside the time integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum TimeProfile {
    #[default]
    Constant,
    Exponential {
        lambda: f64,
    },
}

impl TimeProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeProfile::Constant => Ok(()),
            TimeProfile::Exponential { lambda } if lambda >= 0.0 && lambda.is_finite() => Ok(()),
            TimeProfile::Exponential { lambda } => Err(Error::OutOfRange(format!(
                "profile rate lambda must be finite and >= 0, got {lambda}"
            ))),
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            TimeProfile::Constant => 0.0,
            TimeProfile::Exponential { lambda } => lambda,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        (-self.lambda() * s).exp()
    }
}

/// `(1 - e^{-x})/x`.
pub fn psi1(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(x - 1 + e^{-x})/x²`.
pub fn psi2(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let mut term = 0.5; // k = 2
        let mut sum = term;
        for k in 3..30 {
            term *= -x / k as f64;
            sum += term;
        }
        sum
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

/// `(x - 2(1 - e^{-x}) + (1 - e^{-2x})/2)/x³`.
pub fn psi3(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // Σ_{k≥3} (-1)^k (2 - 2^{k-1}) x^{k-3} / k!
        let mut fact = 6.0;
        let mut xp = 1.0;
        let mut sum = 0.0;
        for k in 3..40 {
            if k > 3 {
                fact *= k as f64;
                xp *= x;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (2.0 - 2f64.powi(k - 1)) * xp / fact;
        }
        sum
    } else {
        (x + 2.0 * (-x).exp_m1() - 0.5 * (-2.0 * x).exp_m1()) / (x * x * x)
    }
}

/// Running pair `(A, ∫A²)` over one piecewise-constant integrand.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Accum {
    a: f64,
    sq: f64,
}

impl Accum {
    /// Advance over `[t0, t0 + h]` with integrand `a(s)·v`.
    #[inline]
    fn advance(&mut self, profile: &TimeProfile, t0: f64, h: f64, v: f64) {
        let a0 = self.a;
        match *profile {
            TimeProfile::Constant => {
                let a1 = a0 + v * h;
                self.sq += h * (a0 * a0 + a0 * a1 + a1 * a1) / 3.0;
                self.a = a1;
            }
            TimeProfile::Exponential { lambda } => {
                let x = lambda * h;
                let g = v * (-lambda * t0).exp();
                self.sq += a0 * a0 * h + 2.0 * a0 * g * h * h * psi2(x) + g * g * h * h * h * psi3(x);
                self.a = a0 + g * h * psi1(x);
            }
        }
    }

    /// `A(t0 + h)` without committing.
    fn peek(&self, profile: &TimeProfile, t0: f64, h: f64, v: f64) -> f64 {
        let mut c = *self;
        c.advance(profile, t0, h, v);
        c.a
    }
}

/// Several degree-≤2 observables merged over one sparse adjacency so a jump
/// updates all of them in a single pass.
#[derive(Clone, Debug)]
pub struct ObservableBank {
    m: usize,
    k: usize,
    c0: Vec<f64>,
    row_ptr: Vec<usize>,
    nbr: Vec<u32>,
    coef: Vec<f64>,
}

impl ObservableBank {
    pub fn new(m: usize, observables: &[ObservableSpec]) -> Result<Self> {
        let k = observables.len();
        let mut adj: Vec<std::collections::BTreeMap<u32, Vec<f64>>> = vec![Default::default(); m];
        for (j, v) in observables.iter().enumerate() {
            if v.m() != m {
                return Err(Error::Config(format!(
                    "observable {j} is defined on {} sites but the lattice has {m}",
                    v.m()
                )));
            }
            for ((x, y), c) in v.pairs() {
                let (a, b) = (site_index(x, m), site_index(y, m));
                adj[a].entry(b as u32).or_insert_with(|| vec![0.0; k])[j] += c;
                adj[b].entry(a as u32).or_insert_with(|| vec![0.0; k])[j] += c;
            }
        }
        let mut row_ptr = vec![0];
        let mut nbr = Vec::new();
        let mut coef = Vec::new();
        for row in adj {
            for (b, cs) in row {
                nbr.push(b);
                coef.extend(cs);
            }
            row_ptr.push(nbr.len());
        }
        Ok(Self {
            m,
            k,
            c0: observables.iter().map(|v| v.c0).collect(),
            row_ptr,
            nbr,
            coef,
        })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn eval(&self, state: &LatticeState) -> Vec<f64> {
        let mut out = self.c0.clone();
        for a in 0..self.m {
            let sa = state.spin_at(a);
            for e in self.row_ptr[a]..self.row_ptr[a + 1] {
                let b = self.nbr[e] as usize;
                if b > a {
                    let s = sa * state.spin_at(b);
                    for (o, c) in out.iter_mut().zip(&self.coef[e * self.k..(e + 1) * self.k]) {
                        *o += c * s;
                    }
                }
            }
        }
        out
    }

    /// Add to `values` the change caused by exchanging the spins at `a` and `b`
    /// (which differ), evaluated on the state before the exchange.
    #[inline]
    pub fn add_exchange_delta(&self, state: &LatticeState, a: usize, b: usize, values: &mut [f64]) {
        for (x, other) in [(a, b), (b, a)] {
            let sx = -2.0 * state.spin_at(x);
            for e in self.row_ptr[x]..self.row_ptr[x + 1] {
                let y = self.nbr[e] as usize;
                if y == other {
                    continue;
                }
                let s = sx * state.spin_at(y);
                for (o, c) in values.iter_mut().zip(&self.coef[e * self.k..(e + 1) * self.k]) {
                    *o += c * s;
                }
            }
        }
    }
}

/// Options for [`simulate_path_integrals`].
#[derive(Clone, Debug, Default)]
pub struct PathOptions {
    /// Macroscopic times at which every `A_j(t)` is recorded.
    pub sample_times: Vec<f64>,
    /// Also integrate `(Σ_j A_j)²`.
    pub track_sum: bool,
    /// Keep the microscopic time of every event.
    pub record_events: bool,
}

/// Path functionals of one trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    /// Microscopic event times, when requested.
    pub event_times: Vec<f64>,
    pub events: u64,
    /// The configuration had no movable particle at some point before the horizon.
    pub frozen: bool,
    /// `A_j(t)` for each observable `j` (outer) and sample time (inner).
    pub samples: Vec<Vec<f64>>,
    /// `A_j(T)`.
    pub finals: Vec<f64>,
    /// `I_j = ∫₀ᵀ A_j(t)² dt`.
    pub integrals: Vec<f64>,
    /// `∫₀ᵀ (Σ_j A_j(t))² dt`, when requested.
    pub sum_integral: Option<f64>,
}

struct Integrator<'a> {
    profile: &'a TimeProfile,
    acc: Vec<Accum>,
    sum: Option<Accum>,
    samples: Vec<Vec<f64>>,
    times: &'a [f64],
    next_sample: usize,
}

impl Integrator<'_> {
    fn segment(&mut self, t0: f64, t1: f64, values: &[f64]) {
        while self.next_sample < self.times.len() && self.times[self.next_sample] <= t1 {
            let ts = self.times[self.next_sample];
            for (j, (acc, &v)) in self.acc.iter().zip(values).enumerate() {
                self.samples[j].push(acc.peek(self.profile, t0, ts - t0, v));
            }
            self.next_sample += 1;
        }
        let h = t1 - t0;
        if h <= 0.0 {
            return;
        }
        for (acc, &v) in self.acc.iter_mut().zip(values) {
            acc.advance(self.profile, t0, h, v);
        }
        if let Some(s) = self.sum.as_mut() {
            s.advance(self.profile, t0, h, values.iter().sum());
        }
    }
}

/// Run the dynamics from `state` for macroscopic time `horizon` (microscopic
/// time `horizon·ε^{-2}`) and integrate `A_j(t) = ∫₀ᵗ a(s) V_j ds` and
/// `∫₀ᵀ A_j²` exactly over each holding interval.
pub fn simulate_path_integrals<R: Rng + ?Sized>(
    state: &mut LatticeState,
    params: &DynamicsParams,
    bank: &ObservableBank,
    horizon: f64,
    profile: &TimeProfile,
    opts: &PathOptions,
    rng: &mut R,
) -> Result<PathRecord> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::NonPositive {
            what: "time horizon",
            value: horizon,
        });
    }
    profile.validate()?;
    if opts.sample_times.windows(2).any(|w| w[1] < w[0])
        || opts.sample_times.iter().any(|&t| !(0.0..=horizon).contains(&t))
    {
        return Err(Error::OutOfRange(
            "sample times must be sorted and lie in [0, horizon]".into(),
        ));
    }
    let m = state.m();
    if bank.m != m {
        return Err(Error::Config(format!(
            "observable bank is built for {} sites, lattice has {m}",
            bank.m
        )));
    }
    let c = params.time_scale();
    let mut table = RateTable::build(state);
    let mut values = bank.eval(state);
    let mut integ = Integrator {
        profile,
        acc: vec![Accum::default(); bank.k],
        sum: opts.track_sum.then(Accum::default),
        samples: vec![Vec::with_capacity(opts.sample_times.len()); bank.k],
        times: &opts.sample_times,
        next_sample: 0,
    };
    let mut rec = PathRecord::default();
    let mut t = 0.0;
    let mut tau = 0.0;
    loop {
        match propose(&table, params, rng) {
            Step::Frozen => {
                rec.frozen = true;
                integ.segment(t, horizon, &values);
                break;
            }
            Step::Jump(jump) => {
                let tau_next = tau + jump.dt;
                let t_next = tau_next / c;
                if t_next >= horizon {
                    integ.segment(t, horizon, &values);
                    break;
                }
                integ.segment(t, t_next, &values);
                bank.add_exchange_delta(state, jump.from, jump.to, &mut values);
                apply(state, &mut table, &jump);
                rec.events += 1;
                if opts.record_events {
                    rec.event_times.push(tau_next);
                }
                tau = tau_next;
                t = t_next;
            }
        }
    }
    rec.samples = integ.samples;
    rec.finals = integ.acc.iter().map(|a| a.a).collect();
    rec.integrals = integ.acc.iter().map(|a| a.sq).collect();
    rec.sum_integral = integ.sum.map(|s| s.sq);
    Ok(rec)
}

/// Integrate a given piecewise-constant path `(segment end times, values)` in
/// macroscopic time; `breaks` may contain artificial split points.
pub fn integrate_piecewise(profile: &TimeProfile, breaks: &[f64], values: &[f64]) -> (f64, f64) {
    let mut acc = Accum::default();
    let mut t0 = 0.0;
    for (&t1, &v) in breaks.iter().zip(values) {
        acc.advance(profile, t0, t1 - t0, v);
        t0 = t1;
    }
    (acc.a, acc.sq)
}
