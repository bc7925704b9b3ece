use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::kmc::DynamicsParams;
use crate::lattice::{index_site, LatticeState};

const ABSENT: u32 = u32::MAX;

/// Set of site indices with O(1) insert, remove and uniform pick.
#[derive(Clone, Debug, PartialEq, Eq)]
struct IndexSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

impl IndexSet {
    fn new(m: usize) -> Self {
        Self {
            items: Vec::with_capacity(m / 2 + 1),
            pos: vec![ABSENT; m],
        }
    }

    fn set(&mut self, i: usize, member: bool) {
        let present = self.pos[i] != ABSENT;
        if member && !present {
            self.pos[i] = self.items.len() as u32;
            self.items.push(i as u32);
        } else if !member && present {
            let p = self.pos[i] as usize;
            let last = *self.items.last().expect("non-empty");
            self.items.swap_remove(p);
            if last as usize != i {
                self.pos[last as usize] = p as u32;
            }
            self.pos[i] = ABSENT;
        }
    }

    fn contains(&self, i: usize) -> bool {
        self.pos[i] != ABSENT
    }
}

/// Registry of movable particle-hole edges.
///
/// Site index `i` is a right mover when `i` is occupied and `i+1` empty, and
/// a left mover when `i` is occupied and `i-1` empty (indices mod `M`).
#[derive(Clone, Debug)]
pub struct RateTable {
    m: usize,
    right: IndexSet,
    left: IndexSet,
}

impl PartialEq for RateTable {
    fn eq(&self, other: &Self) -> bool {
        let sorted = |s: &IndexSet| {
            let mut v = s.items.clone();
            v.sort_unstable();
            v
        };
        self.m == other.m && sorted(&self.right) == sorted(&other.right) && sorted(&self.left) == sorted(&other.left)
    }
}

fn is_right_mover(state: &LatticeState, i: usize) -> bool {
    let m = state.m();
    state.occ_at(i) && !state.occ_at((i + 1) % m)
}

fn is_left_mover(state: &LatticeState, i: usize) -> bool {
    let m = state.m();
    state.occ_at(i) && !state.occ_at((i + m - 1) % m)
}

impl RateTable {
    pub fn build(state: &LatticeState) -> Self {
        let m = state.m();
        let mut t = Self {
            m,
            right: IndexSet::new(m),
            left: IndexSet::new(m),
        };
        for i in 0..m {
            t.right.set(i, is_right_mover(state, i));
            t.left.set(i, is_left_mover(state, i));
        }
        t
    }

    /// Internal indices of right movers, in table order.
    pub fn right_movers(&self) -> &[u32] {
        &self.right.items
    }

    pub fn left_movers(&self) -> &[u32] {
        &self.left.items
    }

    pub fn is_right_mover(&self, x: i64) -> bool {
        self.right.contains(crate::lattice::site_index(x, self.m))
    }

    pub fn is_left_mover(&self, x: i64) -> bool {
        self.left.contains(crate::lattice::site_index(x, self.m))
    }

    /// Number of particle blocks, `k = |right_movers| = |left_movers|`.
    pub fn k(&self) -> usize {
        self.right.items.len()
    }

    pub fn total_rate(&self, params: &DynamicsParams) -> f64 {
        2.0 * params.p() * self.right.items.len() as f64 + 2.0 * params.q() * self.left.items.len() as f64
    }

    /// Re-derive membership around the edge `(i, i+1)` after an exchange there.
    fn refresh_edge(&mut self, state: &LatticeState, i: usize) {
        let m = self.m;
        for s in [i + m - 1, i, i + 1, i + 2] {
            let s = s % m;
            self.right.set(s, is_right_mover(state, s));
            self.left.set(s, is_left_mover(state, s));
        }
    }
}

/// A proposed or executed particle jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jump {
    /// Microscopic holding time before the jump.
    pub dt: f64,
    /// Internal index of the jumping particle.
    pub from: usize,
    /// Internal index of the target hole.
    pub to: usize,
}

impl Jump {
    /// Left end of the exchanged edge, internal index.
    pub fn edge(&self, m: usize) -> usize {
        if (self.from + 1) % m == self.to {
            self.from
        } else {
            self.to
        }
    }

    pub fn is_right(&self, m: usize) -> bool {
        (self.from + 1) % m == self.to
    }

    pub fn from_site(&self, m: usize) -> i64 {
        index_site(self.from, m)
    }

    pub fn to_site(&self, m: usize) -> i64 {
        index_site(self.to, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    Jump(Jump),
    /// No particle can move; the configuration is absorbing.
    Frozen,
}

/// Draw the next event without changing the state.
///
/// The holding time is exponential with rate `2k`; the direction is right
/// with probability `p`, and the edge is uniform among that direction's movers.
pub fn propose<R: Rng + ?Sized>(table: &RateTable, params: &DynamicsParams, rng: &mut R) -> Step {
    let k = table.k();
    if k == 0 {
        return Step::Frozen;
    }
    let rate = table.total_rate(params);
    let dt: f64 = Exp1.sample(rng);
    let dt = dt / rate;
    let right = rng.random::<f64>() < params.p();
    let m = table.m;
    let jump = if right {
        let from = table.right.items[rng.random_range(0..k)] as usize;
        Jump {
            dt,
            from,
            to: (from + 1) % m,
        }
    } else {
        let from = table.left.items[rng.random_range(0..table.left.items.len())] as usize;
        Jump {
            dt,
            from,
            to: (from + m - 1) % m,
        }
    };
    Step::Jump(jump)
}

/// Execute a proposed jump, updating state and table in O(1).
pub fn apply(state: &mut LatticeState, table: &mut RateTable, jump: &Jump) {
    debug_assert!(state.occ_at(jump.from) && !state.occ_at(jump.to));
    state.swap_at(jump.from, jump.to);
    table.refresh_edge(state, jump.edge(state.m()));
    debug_assert_eq!(*table, RateTable::build(state));
}

/// One event of the dynamics: propose, then apply.
pub fn step<R: Rng + ?Sized>(
    state: &mut LatticeState,
    table: &mut RateTable,
    params: &DynamicsParams,
    rng: &mut R,
) -> Step {
    let s = propose(table, params, rng);
    if let Step::Jump(j) = &s {
        apply(state, table, j);
    }
    s
}
