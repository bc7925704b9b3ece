//! Event-driven simulation of the exclusion dynamics.

mod params;
mod path;
mod rates;

pub use params::DynamicsParams;
pub use path::{
    integrate_piecewise, psi1, psi2, psi3, simulate_path_integrals, ObservableBank, PathOptions, PathRecord,
    TimeProfile,
};
pub use rates::{apply, propose, step, Jump, RateTable, Step};

use crate::error::Result;
use crate::lattice::{check_ring_size, sample_bernoulli_half, site_index, LatticeState};
use crate::stats::{fan_out, replica_rng, Estimate};

/// Advance `state` by microscopic time `tau`; returns the number of jumps and
/// whether the state froze.
pub fn evolve<R: rand::Rng + ?Sized>(
    state: &mut LatticeState,
    params: &DynamicsParams,
    tau: f64,
    rng: &mut R,
) -> (u64, bool) {
    let mut table = RateTable::build(state);
    let mut clock = 0.0;
    let mut events = 0;
    loop {
        match propose(&table, params, rng) {
            Step::Frozen => return (events, true),
            Step::Jump(j) => {
                clock += j.dt;
                if clock >= tau {
                    return (events, false);
                }
                apply(state, &mut table, &j);
                events += 1;
            }
        }
    }
}

/// Stationary estimate of `E[ξ_0(0)·ξ_x(t ε^{-2})]` on a ring of `m` sites.
pub fn two_point_function(
    m: usize,
    params: &DynamicsParams,
    x: i64,
    t: f64,
    replicas: usize,
    seed: u64,
    workers: usize,
) -> Result<Estimate> {
    check_ring_size(m)?;
    let xi = site_index(x, m);
    let i0 = site_index(0, m);
    let tau = t * params.time_scale();
    let samples = fan_out(replicas, workers, |r| {
        let mut rng = replica_rng(seed, r as u64);
        let mut s = sample_bernoulli_half(m, &mut rng).expect("ring size checked");
        let s0 = s.spin_at(i0);
        if tau > 0.0 {
            evolve(&mut s, params, tau, &mut rng);
        }
        s0 * s.spin_at(xi)
    });
    Ok(Estimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_at_time_zero() {
        let p = DynamicsParams::new(0.25, 1.0).unwrap();
        let same = two_point_function(8, &p, 0, 0.0, 500, 1, 1).unwrap();
        assert_eq!(same.mean, 1.0);
        assert_eq!(same.se, 0.0);
        let other = two_point_function(8, &p, 2, 0.0, 20_000, 2, 1).unwrap();
        assert!(other.within(0.0, 3.0), "{other:?}");
    }

    #[test]
    fn symmetric_dynamics_keeps_single_site_mean() {
        let p = DynamicsParams::symmetric(0.5).unwrap();
        let vals = fan_out(20_000, 1, |r| {
            let mut rng = replica_rng(77, r as u64);
            let mut s = sample_bernoulli_half(8, &mut rng).unwrap();
            evolve(&mut s, &p, 1.5, &mut rng);
            s.spin(0)
        });
        assert!(Estimate::from_samples(&vals).within(0.0, 3.0));
    }
}
