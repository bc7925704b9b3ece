//! Operator algebra of the exclusion generator in the Walsh product basis.
//!
//! On `Lin{ξ_Λ}` the generator splits as `L = γA₊ - γA₊* + S` with
//!
//! ```text
//! A₊ ξ_Λ  = Σ_{x∈Λ} [1(x+1∉Λ) ξ_{Λ∪{x+1}} - 1(x-1∉Λ) ξ_{Λ∪{x-1}}]
//! A₊* ξ_Λ = Σ_{x∈Λ} [1(x+1∉Λ) - 1(x-1∉Λ)] ξ_{Λ∖{x}}
//! S ξ_Λ   = S₀ ξ_Λ - 2|Λ| ξ_Λ
//! S₀ ξ_Λ  = Σ_{x∈Λ} Σ_{y=x±1} [1(y∉Λ) ξ_{Λ∖{x}∪{y}} + 1(y∈Λ) ξ_Λ]
//! ```
//!
//! and `L* = γA₊* - γA₊ + S`. All `±1` shifts wrap around the ring.
//! Coefficients are generic so that identities can be checked in exact
//! rational arithmetic; solver paths use `f64`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Debug;
use std::ops::Neg;

use nalgebra::DMatrix;
use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::kmc::DynamicsParams;
use crate::lattice::{check_ring_size, index_site, site_index, wrap_site, ObservableSpec, WalshIndex};

/// Dense configuration-space matrices are limited to rings of this size.
pub const MAX_DENSE_SITES: usize = 12;

pub trait Coefficient: Num + Copy + Neg<Output = Self> + FromPrimitive + Debug {}
impl<T: Num + Copy + Neg<Output = T> + FromPrimitive + Debug> Coefficient for T {}

fn int<T: Coefficient>(k: i64) -> T {
    T::from_i64(k).expect("small integer is representable")
}

/// Finite linear combination `Σ c_Λ ξ_Λ` on a ring of `m` sites.
#[derive(Clone, Debug, PartialEq)]
pub struct WalshVector<T = f64> {
    m: usize,
    terms: BTreeMap<WalshIndex, T>,
}

impl<T: Coefficient> WalshVector<T> {
    pub fn zero(m: usize) -> Result<Self> {
        check_ring_size(m)?;
        Ok(Self {
            m,
            terms: BTreeMap::new(),
        })
    }

    pub fn basis(idx: WalshIndex, m: usize) -> Result<Self> {
        idx.validate(m)?;
        let mut v = Self::zero(m)?;
        v.terms.insert(idx, T::one());
        Ok(v)
    }

    /// Basis vector from unsorted, possibly out-of-window sites.
    pub fn basis_sites(sites: &[i64], m: usize) -> Result<Self> {
        Self::basis(WalshIndex::from_sites(sites, m)?, m)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn add_term(&mut self, idx: WalshIndex, c: T) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(idx) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let s = *e.get() + c;
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    pub fn coeff(&self, idx: &WalshIndex) -> T {
        self.terms.get(idx).copied().unwrap_or_else(T::zero)
    }

    pub fn coeff_of(&self, sites: &[i64]) -> T {
        WalshIndex::from_sites(sites, self.m)
            .map(|i| self.coeff(&i))
            .unwrap_or_else(|_| T::zero())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&WalshIndex, &T)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Degrees `|Λ|` carrying a nonzero coefficient.
    pub fn degrees(&self) -> BTreeSet<usize> {
        self.terms.keys().map(WalshIndex::degree).collect()
    }

    /// Projection onto the span of `{ξ_Λ : |Λ| = d}`.
    pub fn sector(&self, d: usize) -> Self {
        Self {
            m: self.m,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| k.degree() == d)
                .map(|(k, c)| (k.clone(), *c))
                .collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = Self {
            m: self.m,
            terms: BTreeMap::new(),
        };
        for (k, c) in &self.terms {
            out.add_term(k.clone(), *c * s);
        }
        out
    }

    pub fn plus(&self, other: &Self) -> Self {
        debug_assert_eq!(self.m, other.m);
        let mut out = self.clone();
        for (k, c) in &other.terms {
            out.add_term(k.clone(), *c);
        }
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-T::one()))
    }

    /// `L²(ν)` inner product; the `ξ_Λ` are orthonormal.
    pub fn inner(&self, other: &Self) -> T {
        self.terms
            .iter()
            .filter_map(|(k, c)| other.terms.get(k).map(|d| *c * *d))
            .fold(T::zero(), |a, b| a + b)
    }

    fn map_basis<F>(&self, f: F) -> Self
    where
        F: Fn(&[i64], usize, &mut dyn FnMut(Vec<i64>, i64)),
    {
        let mut out = Self {
            m: self.m,
            terms: BTreeMap::new(),
        };
        for (k, c) in &self.terms {
            f(k.sites(), self.m, &mut |sites, s| {
                out.add_term(WalshIndex::from_sorted_unchecked(sites), *c * int(s));
            });
        }
        out
    }
}

impl WalshVector<f64> {
    pub fn from_observable(v: &ObservableSpec) -> Self {
        let mut out = Self {
            m: v.m(),
            terms: BTreeMap::new(),
        };
        out.add_term(WalshIndex::empty(), v.c0);
        for ((x, y), c) in v.pairs() {
            out.add_term(WalshIndex::from_sorted_unchecked(vec![x, y]), c);
        }
        out
    }

    pub fn to_observable(&self) -> Result<ObservableSpec> {
        let mut v = ObservableSpec::new(self.m)?;
        for (k, &c) in &self.terms {
            match k.sites() {
                [] => v.c0 += c,
                [x, y] => v.add_product(*x, *y, c),
                s => return Err(Error::UnsupportedDegree(s.len())),
            }
        }
        Ok(v)
    }
}

fn with_inserted(sites: &[i64], y: i64) -> Vec<i64> {
    let mut v = sites.to_vec();
    let pos = v.binary_search(&y).unwrap_err();
    v.insert(pos, y);
    v
}

fn with_removed(sites: &[i64], x: i64) -> Vec<i64> {
    sites.iter().copied().filter(|&s| s != x).collect()
}

fn with_moved(sites: &[i64], x: i64, y: i64) -> Vec<i64> {
    with_inserted(&with_removed(sites, x), y)
}

fn contains(sites: &[i64], x: i64) -> bool {
    sites.binary_search(&x).is_ok()
}

fn a_plus_basis(sites: &[i64], m: usize, emit: &mut dyn FnMut(Vec<i64>, i64)) {
    for &x in sites {
        let right = wrap_site(x + 1, m);
        if !contains(sites, right) {
            emit(with_inserted(sites, right), 1);
        }
        let left = wrap_site(x - 1, m);
        if !contains(sites, left) {
            emit(with_inserted(sites, left), -1);
        }
    }
}

fn a_plus_star_basis(sites: &[i64], m: usize, emit: &mut dyn FnMut(Vec<i64>, i64)) {
    for &x in sites {
        let c = i64::from(!contains(sites, wrap_site(x + 1, m))) - i64::from(!contains(sites, wrap_site(x - 1, m)));
        if c != 0 {
            emit(with_removed(sites, x), c);
        }
    }
}

fn s_basis(sites: &[i64], m: usize, emit: &mut dyn FnMut(Vec<i64>, i64)) {
    let mut diag = -2 * sites.len() as i64;
    for &x in sites {
        for y in [wrap_site(x + 1, m), wrap_site(x - 1, m)] {
            if contains(sites, y) {
                diag += 1;
            } else {
                emit(with_moved(sites, x, y), 1);
            }
        }
    }
    if diag != 0 {
        emit(sites.to_vec(), diag);
    }
}

/// `A₊`, raising the degree by one.
pub fn a_plus<T: Coefficient>(v: &WalshVector<T>) -> WalshVector<T> {
    v.map_basis(a_plus_basis)
}

/// `A₊*`, lowering the degree by one.
pub fn a_plus_star<T: Coefficient>(v: &WalshVector<T>) -> WalshVector<T> {
    v.map_basis(a_plus_star_basis)
}

/// Symmetric part `S = S₀ - 2|Λ|`, degree preserving.
pub fn s_op<T: Coefficient>(v: &WalshVector<T>) -> WalshVector<T> {
    v.map_basis(s_basis)
}

/// `γA₊v - γA₊*v + Sv`, or `γA₊*v - γA₊v + Sv` for the adjoint.
pub fn generator_apply<T: Coefficient>(v: &WalshVector<T>, gamma: T, adjoint: bool) -> WalshVector<T> {
    let up = a_plus(v);
    let down = a_plus_star(v);
    let drift = if adjoint { down.minus(&up) } else { up.minus(&down) };
    drift.scaled(gamma).plus(&s_op(v))
}

pub fn generator_apply_params(v: &WalshVector<f64>, params: &DynamicsParams, adjoint: bool) -> WalshVector<f64> {
    generator_apply(v, params.gamma(), adjoint)
}

fn check_dense(m: usize) -> Result<()> {
    check_ring_size(m)?;
    if m > MAX_DENSE_SITES {
        return Err(Error::TooLarge {
            what: "ring size for dense configuration-space matrices",
            value: m,
            limit: MAX_DENSE_SITES,
        });
    }
    Ok(())
}

/// Rate matrix `Q` of the exclusion dynamics on all `2^M` configurations.
///
/// Row and column `c` refer to [`crate::lattice::LatticeState::from_code`]`(m, c)`.
/// Acting on a function `f` (as a column vector) gives `Lf`.
pub fn config_generator_matrix(m: usize, params: &DynamicsParams) -> Result<DMatrix<f64>> {
    check_dense(m)?;
    let n = 1usize << m;
    let (right, left) = (2.0 * params.p(), 2.0 * params.q());
    let mut q = DMatrix::<f64>::zeros(n, n);
    for code in 0..n {
        let occ = |i: usize| (code >> i) & 1 == 1;
        let mut out = 0.0;
        for i in 0..m {
            if !occ(i) {
                continue;
            }
            for (j, rate) in [((i + 1) % m, right), ((i + m - 1) % m, left)] {
                if !occ(j) && rate > 0.0 {
                    let target = code ^ (1 << i) ^ (1 << j);
                    q[(code, target)] += rate;
                    out += rate;
                }
            }
        }
        q[(code, code)] = -out;
    }
    Ok(q)
}

/// Orthogonal matrix whose column `s` holds `2^{-M/2} ξ_Λ(η)` for the set
/// `Λ` with position mask `s`, rows indexed by configuration code.
pub fn walsh_transform_matrix(m: usize) -> Result<DMatrix<f64>> {
    check_dense(m)?;
    let n = 1usize << m;
    let full = (n - 1) as u64;
    let scale = (n as f64).sqrt().recip();
    Ok(DMatrix::from_fn(n, n, |code, s| {
        let holes = (s as u64) & !(code as u64) & full;
        if holes.count_ones().is_multiple_of(2) {
            scale
        } else {
            -scale
        }
    }))
}

/// Matrix of a linear operator on `Lin{ξ_Λ}` in the mask-ordered Walsh basis:
/// entry `(s', s)` is the coefficient of `ξ_{s'}` in `op(ξ_s)`.
pub fn walsh_basis_matrix<F>(m: usize, op: F) -> Result<DMatrix<f64>>
where
    F: Fn(&WalshVector<f64>) -> WalshVector<f64>,
{
    check_dense(m)?;
    let n = 1usize << m;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        let col = op(&WalshVector::basis(WalshIndex::from_mask(s as u64, m), m)?);
        for (k, &c) in col.terms() {
            b[(k.mask(m) as usize, s)] = c;
        }
    }
    Ok(b)
}

/// Walsh-basis matrix of `L` (or `L*`).
pub fn generator_walsh_matrix(m: usize, params: &DynamicsParams, adjoint: bool) -> Result<DMatrix<f64>> {
    let gamma = params.gamma();
    walsh_basis_matrix(m, |v| generator_apply(v, gamma, adjoint))
}

/// Default cap on the dimension of an assembled sector.
pub const DEFAULT_SECTOR_CAP: usize = 20_000_000;

/// `(α - S)` restricted to `span{ξ_Λ : |Λ| = d}`, in compressed-row form.
#[derive(Clone, Debug)]
pub struct SectorOperator {
    m: usize,
    degree: usize,
    alpha: f64,
    basis: Vec<WalshIndex>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Position of the pair `{i, j}` (internal positions, `i < j`) among all pairs.
#[inline]
pub fn pair_position(i: usize, j: usize, m: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// All `d`-subsets of `0..m` in lexicographic order.
fn combinations(m: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if d > m {
        return out;
    }
    let mut cur: Vec<usize> = (0..d).collect();
    loop {
        out.push(cur.clone());
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < m - d + i {
                cur[i] += 1;
                for j in i + 1..d {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Assemble `(α - S)` on the degree-`d` sector of a ring with `m` sites.
pub fn sector_matrix(m: usize, degree: usize, alpha: f64) -> Result<SectorOperator> {
    sector_matrix_capped(m, degree, alpha, DEFAULT_SECTOR_CAP)
}

pub fn sector_matrix_capped(m: usize, degree: usize, alpha: f64, cap: usize) -> Result<SectorOperator> {
    check_ring_size(m)?;
    if degree > m {
        return Err(Error::OutOfRange(format!("degree {degree} exceeds ring size {m}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "sector shift alpha must be >= 0, got {alpha}"
        )));
    }
    let dim = binomial(m, degree).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(Error::TooLarge {
            what: "sector dimension",
            value: dim,
            limit: cap,
        });
    }
    if degree == 2 {
        return Ok(pair_sector(m, alpha));
    }
    let basis: Vec<WalshIndex> = combinations(m, degree)
        .into_iter()
        .map(|c| WalshIndex::from_sorted_unchecked(c.into_iter().map(|i| index_site(i, m)).collect()))
        .collect();
    let lookup: HashMap<&WalshIndex, usize> = basis.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut row_ptr = vec![0];
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for b in &basis {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        *row.entry(lookup[b]).or_insert(0.0) += alpha;
        s_basis(b.sites(), m, &mut |sites, c| {
            let k = lookup[&WalshIndex::from_sorted_unchecked(sites)];
            *row.entry(k).or_insert(0.0) -= c as f64;
        });
        for (k, v) in row {
            if v != 0.0 {
                cols.push(k);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(SectorOperator {
        m,
        degree,
        alpha,
        basis,
        row_ptr,
        cols,
        vals,
    })
}

/// Direct assembly for `d = 2`: two-particle symmetric exclusion walk.
fn pair_sector(m: usize, alpha: f64) -> SectorOperator {
    let dim = m * (m - 1) / 2;
    let mut basis = Vec::with_capacity(dim);
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::with_capacity(5 * dim);
    let mut vals = Vec::with_capacity(5 * dim);
    row_ptr.push(0);
    for i in 0..m {
        for j in i + 1..m {
            basis.push(WalshIndex::from_sorted_unchecked(vec![
                index_site(i, m),
                index_site(j, m),
            ]));
            let mut diag = alpha + 4.0;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
            for (mover, other) in [(i, j), (j, i)] {
                for target in [(mover + 1) % m, (mover + m - 1) % m] {
                    if target == other {
                        diag -= 1.0;
                    } else {
                        let (a, b) = if target < other {
                            (target, other)
                        } else {
                            (other, target)
                        };
                        entries.push((pair_position(a, b, m), -1.0));
                    }
                }
            }
            entries.push((pair_position(i, j, m), diag));
            entries.sort_by_key(|e| e.0);
            for (c, v) in entries {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
    }
    SectorOperator {
        m,
        degree: 2,
        alpha,
        basis,
        row_ptr,
        cols,
        vals,
    }
}

impl SectorOperator {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn basis(&self) -> &[WalshIndex] {
        &self.basis
    }

    pub fn index_of(&self, idx: &WalshIndex) -> Option<usize> {
        if idx.degree() != self.degree {
            return None;
        }
        if self.degree == 2 {
            let s = idx.sites();
            let (i, j) = (site_index(s[0], self.m), site_index(s[1], self.m));
            return Some(pair_position(i.min(j), i.max(j), self.m));
        }
        self.basis.binary_search(idx).ok()
    }

    /// Entries of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(k, _)| k == c).map_or(0.0, |(_, v)| v)
    }

    /// `y = (α - S) x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|r| self.entry(r, r)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim()).all(|r| self.row(r).all(|(c, v)| self.entry(c, r) == v))
    }

    /// Coefficient vector of the degree-`d` part of `v` in this sector's basis.
    pub fn coefficients(&self, v: &WalshVector<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (k, &c) in v.terms() {
            if let Some(i) = self.index_of(k) {
                out[i] += c;
            }
        }
        out
    }

    /// Coordinate-format (MatrixMarket) text, one-based indices.
    pub fn to_coordinate_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(
            s,
            "% sector operator: M={} degree={} alpha={:e}",
            self.m, self.degree, self.alpha
        );
        let _ = writeln!(s, "{} {} {}", self.dim(), self.dim(), self.nnz());
        for r in 0..self.dim() {
            for (c, v) in self.row(r) {
                let _ = writeln!(s, "{} {} {:.17e}", r + 1, c + 1, v);
            }
        }
        s
    }
}
