//! Periodic lattice state, the Walsh product basis and degree-{0,2} observables.
//!
//! Sites are labelled by centered integers `x ∈ {-M/2, …, M/2 - 1}`; every
//! site argument is reduced mod `M` into that window before use. Internally a
//! site is stored at position `x + M/2` of a packed bit vector, bit set means
//! occupied. The spin at a site is `2·occ - 1`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupation configuration of a ring with an even number of sites.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LatticeState {
    m: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for LatticeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits: String = (0..self.m).map(|i| if self.occ_at(i) { '1' } else { '0' }).collect();
        write!(f, "LatticeState(M={}, {bits})", self.m)
    }
}

pub fn check_ring_size(m: usize) -> Result<()> {
    if m < 4 || !m.is_multiple_of(2) {
        return Err(Error::InvalidRingSize(m));
    }
    Ok(())
}

/// Reduce a site label mod `m` into the centered window.
#[inline]
pub fn wrap_site(x: i64, m: usize) -> i64 {
    let m = m as i64;
    let h = m / 2;
    (x + h).rem_euclid(m) - h
}

#[inline]
pub fn site_index(x: i64, m: usize) -> usize {
    (wrap_site(x, m) + (m / 2) as i64) as usize
}

#[inline]
pub fn index_site(i: usize, m: usize) -> i64 {
    i as i64 - (m / 2) as i64
}

pub fn in_window(x: i64, m: usize) -> bool {
    let h = (m / 2) as i64;
    (-h..h).contains(&x)
}

impl LatticeState {
    /// All sites empty.
    pub fn empty(m: usize) -> Result<Self> {
        check_ring_size(m)?;
        Ok(Self {
            m,
            words: vec![0; m.div_ceil(64)],
        })
    }

    pub fn full(m: usize) -> Result<Self> {
        let mut s = Self::empty(m)?;
        for i in 0..m {
            s.set_at(i, true);
        }
        Ok(s)
    }

    /// Build from occupations listed from site `-M/2` upwards.
    pub fn from_occupations(occ: &[bool]) -> Result<Self> {
        let mut s = Self::empty(occ.len())?;
        for (i, &o) in occ.iter().enumerate() {
            s.set_at(i, o);
        }
        Ok(s)
    }

    /// Configuration whose bit `i` (site `i - M/2`) is bit `i` of `code`.
    pub fn from_code(m: usize, code: u64) -> Result<Self> {
        if m > 63 {
            return Err(Error::TooLarge {
                what: "ring size for integer coding",
                value: m,
                limit: 63,
            });
        }
        let mut s = Self::empty(m)?;
        s.words[0] = code & ((1u64 << m) - 1);
        Ok(s)
    }

    /// Inverse of [`LatticeState::from_code`]; only meaningful for `M ≤ 63`.
    pub fn code(&self) -> u64 {
        self.words[0]
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn occ_at(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set_at(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    /// Exchange the contents of two positions.
    #[inline]
    pub fn swap_at(&mut self, i: usize, j: usize) {
        let (a, b) = (self.occ_at(i), self.occ_at(j));
        self.set_at(i, b);
        self.set_at(j, a);
    }

    #[inline]
    pub fn spin_at(&self, i: usize) -> f64 {
        ((self.words[i >> 6] >> (i & 63)) & 1) as f64 * 2.0 - 1.0
    }

    pub fn occ(&self, x: i64) -> bool {
        self.occ_at(site_index(x, self.m))
    }

    /// Spin `ξ(x) = 2η(x) - 1`, site reduced mod `M`.
    pub fn spin(&self, x: i64) -> f64 {
        self.spin_at(site_index(x, self.m))
    }

    pub fn particle_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupations(&self) -> Vec<bool> {
        (0..self.m).map(|i| self.occ_at(i)).collect()
    }
}

/// Draw a configuration from the Bernoulli(1/2) product measure.
pub fn sample_bernoulli_half<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<LatticeState> {
    let mut s = LatticeState::empty(m)?;
    for w in s.words.iter_mut() {
        *w = rng.random::<u64>();
    }
    let tail = m % 64;
    if tail != 0 {
        let last = s.words.len() - 1;
        s.words[last] &= (1u64 << tail) - 1;
    }
    Ok(s)
}

/// A finite site set `Λ`, stored sorted and duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WalshIndex(Vec<i64>);

impl WalshIndex {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Validating constructor: sites must be strictly increasing and inside
    /// the window of a ring of size `m`.
    pub fn new(sites: Vec<i64>, m: usize) -> Result<Self> {
        if sites.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NonCanonicalIndex(sites));
        }
        if let Some(&x) = sites.iter().find(|&&x| !in_window(x, m)) {
            return Err(Error::SiteOutOfWindow { site: x, m });
        }
        Ok(Self(sites))
    }

    /// Reduce sites mod `m`, sort them; duplicates are an error.
    pub fn from_sites(sites: &[i64], m: usize) -> Result<Self> {
        let mut v: Vec<i64> = sites.iter().map(|&x| wrap_site(x, m)).collect();
        v.sort_unstable();
        Self::new(v, m)
    }

    pub(crate) fn from_sorted_unchecked(v: Vec<i64>) -> Self {
        Self(v)
    }

    pub fn sites(&self) -> &[i64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, x: i64) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        Self::new(self.0.clone(), m).map(|_| ())
    }

    /// Bit mask over internal positions, for rings of at most 63 sites.
    pub fn mask(&self, m: usize) -> u64 {
        self.0.iter().fold(0u64, |acc, &x| acc | (1u64 << site_index(x, m)))
    }

    pub fn from_mask(mask: u64, m: usize) -> Self {
        Self(
            (0..m)
                .filter(|&i| (mask >> i) & 1 == 1)
                .map(|i| index_site(i, m))
                .collect(),
        )
    }
}

/// `ξ_Λ(η) = Π_{x∈Λ} ξ(x)`, with `ξ_∅ = 1`.
pub fn eval_walsh(state: &LatticeState, idx: &WalshIndex) -> Result<f64> {
    let m = state.m();
    let mut prod = 1.0;
    for &x in idx.sites() {
        if !in_window(x, m) {
            return Err(Error::SiteOutOfWindow { site: x, m });
        }
        prod *= state.spin(x);
    }
    Ok(prod)
}

/// Provenance attached to an observable when it is written to disk.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservableMeta {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollifier_n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<String>,
}

/// `c0 + Σ_{x<y} c_{xy} ξ(x)ξ(y)` on a ring of `m` sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSpec {
    m: usize,
    pub c0: f64,
    pairs: BTreeMap<(i64, i64), f64>,
    pub meta: ObservableMeta,
}

impl ObservableSpec {
    pub fn new(m: usize) -> Result<Self> {
        check_ring_size(m)?;
        Ok(Self {
            m,
            c0: 0.0,
            pairs: BTreeMap::new(),
            meta: ObservableMeta::default(),
        })
    }

    pub fn constant(m: usize, c0: f64) -> Result<Self> {
        let mut v = Self::new(m)?;
        v.c0 = c0;
        Ok(v)
    }

    /// `V_# = (η(0) - 1/2)(η(1) - 1/2) = ξ(0)ξ(1)/4`.
    pub fn v_sharp(m: usize) -> Result<Self> {
        let mut v = Self::new(m)?;
        v.add_product(0, 1, 0.25);
        v.meta.label = "v_sharp".into();
        Ok(v)
    }

    /// `ξ(0)ξ(2) - ξ(0)ξ(1)`, a discrete gradient in the pair separation.
    pub fn pair_gradient(m: usize) -> Result<Self> {
        let mut v = Self::new(m)?;
        v.add_product(0, 2, 1.0);
        v.add_product(0, 1, -1.0);
        v.meta.label = "pair_gradient".into();
        Ok(v)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Accumulate `c·ξ(x)ξ(y)`. Sites are reduced mod `M`; when they coincide
    /// the product is `ξ(x)² = 1` and `c` goes to the constant term.
    pub fn add_product(&mut self, x: i64, y: i64, c: f64) {
        let (a, b) = (wrap_site(x, self.m), wrap_site(y, self.m));
        if a == b {
            self.c0 += c;
            return;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        *self.pairs.entry(key).or_insert(0.0) += c;
    }

    pub fn pair(&self, x: i64, y: i64) -> f64 {
        let (a, b) = (wrap_site(x, self.m), wrap_site(y, self.m));
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.get(&key).copied().unwrap_or(0.0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((i64, i64), f64)> + '_ {
        self.pairs.iter().map(|(&k, &c)| (k, c))
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Drop pair entries that are exactly zero.
    pub fn prune_zeros(&mut self) {
        self.pairs.retain(|_, c| *c != 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.c0 == 0.0 && self.pairs.values().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.c0 *= s;
        out.pairs.values_mut().for_each(|c| *c *= s);
        out
    }

    /// Coefficientwise sum; both operands must live on the same ring.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.m != other.m {
            return Err(Error::OutOfRange(format!(
                "cannot add observables on rings of size {} and {}",
                self.m, other.m
            )));
        }
        let mut out = self.clone();
        out.c0 += other.c0;
        for (&k, &c) in &other.pairs {
            *out.pairs.entry(k).or_insert(0.0) += c;
        }
        Ok(out)
    }

    /// Same observable with its mean under the product measure removed.
    pub fn centered(&self) -> Self {
        let mut out = self.clone();
        out.c0 = 0.0;
        out
    }

    /// Squared L²(ν) norm: `c0² + Σ c²`.
    pub fn norm_sq(&self) -> f64 {
        self.c0 * self.c0 + self.pairs.values().map(|c| c * c).sum::<f64>()
    }

    /// Largest distance `|x - y|` on the ring over stored pairs.
    pub fn max_pair_distance(&self) -> usize {
        let m = self.m as i64;
        self.pairs
            .keys()
            .map(|&(a, b)| {
                let d = (b - a).rem_euclid(m);
                d.min(m - d) as usize
            })
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ObservableDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ObservableDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservableDoc {
    m: usize,
    c0: f64,
    pairs: Vec<PairTerm>,
    #[serde(default)]
    meta: ObservableMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairTerm {
    x: i64,
    y: i64,
    c: f64,
}

impl From<&ObservableSpec> for ObservableDoc {
    fn from(v: &ObservableSpec) -> Self {
        Self {
            m: v.m,
            c0: v.c0,
            pairs: v.pairs().map(|((x, y), c)| PairTerm { x, y, c }).collect(),
            meta: v.meta.clone(),
        }
    }
}

impl TryFrom<ObservableDoc> for ObservableSpec {
    type Error = Error;

    fn try_from(doc: ObservableDoc) -> Result<Self> {
        let mut v = ObservableSpec::new(doc.m)?;
        v.c0 = doc.c0;
        v.meta = doc.meta;
        for t in doc.pairs {
            for s in [t.x, t.y] {
                if !in_window(s, doc.m) {
                    return Err(Error::SiteOutOfWindow { site: s, m: doc.m });
                }
            }
            if t.x == t.y {
                return Err(Error::Config(format!("pair ({}, {}) repeats a site", t.x, t.y)));
            }
            v.add_product(t.x, t.y, t.c);
        }
        Ok(v)
    }
}

/// `c0 + Σ c_{xy} ξ(x)ξ(y)` evaluated at `state`.
pub fn eval_observable(state: &LatticeState, v: &ObservableSpec) -> Result<f64> {
    if state.m() != v.m {
        return Err(Error::OutOfRange(format!(
            "observable on {} sites evaluated on a ring of {}",
            v.m,
            state.m()
        )));
    }
    Ok(v.c0
        + v.pairs
            .iter()
            .map(|(&(x, y), &c)| c * state.spin(x) * state.spin(y))
            .sum::<f64>())
}
