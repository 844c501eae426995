//! Basis-function sets, piecewise region masking and whitening.
//!
//! Every basis function is a monomial in lagged copies of the input `x` and
//! its conjugate. Three shapes cover all supported families:
//!
//! * `Aligned { p, m }`: `x(n-m) |x(n-m)|^{2p}`
//! * `Cross { p, m, l }`: `x(n-m) |x(n-l)|^{2p}`
//! * `Conj { p, m, l }`: `x*(n-m) x(n-l)^2 |x(n-l)|^{2(p-1)}`
//!
//! The full dual-input family lists the regressors of the dual-input PA
//! model with the coupled wave replaced by the input itself. Terms that
//! collapse to the same monomial are listed once.
//!
//! With a partition the matrix is `N × K·B`: row `n` is nonzero only in the
//! block of the region containing `|x(n)|`. [`BasisMatrix`] stores the `B`
//! active values of each row plus the region index.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_outer, cholesky, finish_gram, CMatrix};
use crate::partition::RegionPartition;
use crate::scalar::{count, lit, Real, C};
use crate::signal::IqSignal;

/// Relative tolerance for parallel columns and for unloaded Cholesky pivots.
pub const PIVOT_TOLERANCE: f64 = 1e-12;
/// Default diagonal loading `ε` of the covariance and whitening Grams.
pub const COVARIANCE_LOADING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisFamily {
    FullDualInput,
    Gmp,
    MemoryPoly,
    Memoryless,
}

/// Per-term orders and memory depths of the dual-input family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualInputOrders {
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub m4: usize,
    pub m5: usize,
    pub m6: usize,
}

impl DualInputOrders {
    pub fn uniform(max_order: usize, memory: usize) -> Self {
        Self {
            p1: max_order,
            p2: max_order,
            p3: max_order,
            m1: memory,
            m2: memory,
            m3: memory,
            m4: memory,
            m5: memory,
            m6: memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BasisSpec<T: Real> {
    pub family: BasisFamily,
    pub max_order: usize,
    pub memory_depth: usize,
    #[serde(default)]
    pub cross_memory_depth: usize,
    /// Individual orders for the dual-input family; defaults to
    /// `max_order` / `memory_depth` everywhere.
    #[serde(default)]
    pub dual_orders: Option<DualInputOrders>,
    #[serde(default)]
    pub partition: Option<RegionPartition<T>>,
}

impl<T: Real> BasisSpec<T> {
    pub fn new(family: BasisFamily, max_order: usize, memory_depth: usize) -> Self {
        Self {
            family,
            max_order,
            memory_depth,
            cross_memory_depth: 0,
            dual_orders: None,
            partition: None,
        }
    }

    pub fn memoryless(max_order: usize) -> Self {
        Self::new(BasisFamily::Memoryless, max_order, 0)
    }

    pub fn memory_poly(max_order: usize, memory_depth: usize) -> Self {
        Self::new(BasisFamily::MemoryPoly, max_order, memory_depth)
    }

    pub fn gmp(max_order: usize, memory_depth: usize, cross: usize) -> Self {
        Self {
            cross_memory_depth: cross,
            ..Self::new(BasisFamily::Gmp, max_order, memory_depth)
        }
    }

    pub fn full_dual_input(max_order: usize, memory_depth: usize) -> Self {
        Self::new(BasisFamily::FullDualInput, max_order, memory_depth)
    }

    pub fn with_partition(mut self, partition: RegionPartition<T>) -> Self {
        self.partition = Some(partition);
        self
    }

    pub fn num_regions(&self) -> usize {
        self.partition.as_ref().map_or(1, |p| p.num_regions())
    }

    /// Basis functions per region.
    pub fn width(&self) -> Result<usize> {
        Ok(enumerate_bfs(self)?.len())
    }

    /// Total coefficient count `Σ B_k`.
    pub fn total(&self) -> Result<usize> {
        Ok(self.width()? * self.num_regions())
    }

    #[inline]
    pub fn region_of(&self, amplitude: T) -> usize {
        self.partition.as_ref().map_or(0, |p| p.region_of(amplitude))
    }

    pub fn validate(&self) -> Result<()> {
        let check = |o: usize| {
            if o % 2 == 0 {
                Err(Error::config(format!("basis order {o} must be odd")))
            } else {
                Ok(())
            }
        };
        check(self.max_order)?;
        if let Some(d) = &self.dual_orders {
            check(d.p1)?;
            check(d.p2)?;
            check(d.p3)?;
        }
        if self.family == BasisFamily::Memoryless && self.memory_depth > 0 {
            return Err(Error::config("memoryless basis cannot have memory taps"));
        }
        if let Some(p) = &self.partition {
            p.validate()?;
        }
        Ok(())
    }
}

/// One basis function; `p` is the polynomial index (order `2p+1`), `m` and
/// `l` are sample lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "term")]
pub enum BfDescriptor {
    Aligned { p: usize, m: usize },
    Cross { p: usize, m: usize, l: usize },
    Conj { p: usize, m: usize, l: usize },
}

impl BfDescriptor {
    pub fn order(&self) -> usize {
        match *self {
            BfDescriptor::Aligned { p, .. }
            | BfDescriptor::Cross { p, .. }
            | BfDescriptor::Conj { p, .. } => 2 * p + 1,
        }
    }

    pub fn max_lag(&self) -> usize {
        match *self {
            BfDescriptor::Aligned { m, .. } => m,
            BfDescriptor::Cross { m, l, .. } | BfDescriptor::Conj { m, l, .. } => m.max(l),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, BfDescriptor::Aligned { p: 0, .. })
    }

    /// Canonical monomial: lag -> (power of x, power of x*).
    pub fn monomial(&self) -> BTreeMap<usize, (usize, usize)> {
        let mut mono = BTreeMap::new();
        let mut add = |lag: usize, a: usize, b: usize| {
            let e = mono.entry(lag).or_insert((0, 0));
            e.0 += a;
            e.1 += b;
        };
        match *self {
            BfDescriptor::Aligned { p, m } => add(m, p + 1, p),
            BfDescriptor::Cross { p, m, l } => {
                add(m, 1, 0);
                add(l, p, p);
            }
            BfDescriptor::Conj { p, m, l } => {
                add(m, 0, 1);
                add(l, p + 1, p - 1);
            }
        }
        mono.retain(|_, v| *v != (0, 0));
        mono
    }

    /// Value at time `n` given lagged samples and envelope powers:
    /// `x[l] = x(n-l)`, `env[l][p] = |x(n-l)|^{2p}`.
    #[inline]
    fn eval<T: Real>(&self, x: &[C<T>], env: &[Vec<T>]) -> C<T> {
        match *self {
            BfDescriptor::Aligned { p, m } => x[m] * env[m][p],
            BfDescriptor::Cross { p, m, l } => x[m] * env[l][p],
            BfDescriptor::Conj { p, m, l } => x[m].conj() * x[l] * x[l] * env[l][p - 1],
        }
    }
}

/// Ordered, duplicate-free basis of one region. The linear term
/// `x(n)` is always first.
pub fn enumerate_bfs<T: Real>(spec: &BasisSpec<T>) -> Result<Vec<BfDescriptor>> {
    spec.validate()?;
    let pmax = (spec.max_order - 1) / 2;
    let mut raw = vec![];
    match spec.family {
        BasisFamily::Memoryless => {
            for p in 0..=pmax {
                raw.push(BfDescriptor::Aligned { p, m: 0 });
            }
        }
        BasisFamily::MemoryPoly => {
            for m in 0..=spec.memory_depth {
                for p in 0..=pmax {
                    raw.push(BfDescriptor::Aligned { p, m });
                }
            }
        }
        BasisFamily::Gmp => {
            let big_m = spec.memory_depth;
            for m in 0..=big_m {
                for p in 0..=pmax {
                    raw.push(BfDescriptor::Aligned { p, m });
                }
            }
            // Lagging envelope, then leading envelope expressed causally.
            for p in 1..=pmax {
                for m in 0..=big_m {
                    for c in 1..=spec.cross_memory_depth {
                        raw.push(BfDescriptor::Cross { p, m, l: m + c });
                    }
                }
            }
            for p in 1..=pmax {
                for m in 0..=big_m {
                    for c in 1..=spec.cross_memory_depth {
                        raw.push(BfDescriptor::Cross { p, m: m + c, l: m });
                    }
                }
            }
        }
        BasisFamily::FullDualInput => {
            let d = spec
                .dual_orders
                .unwrap_or_else(|| DualInputOrders::uniform(spec.max_order, spec.memory_depth));
            let (p1, p2, p3) = ((d.p1 - 1) / 2, (d.p2 - 1) / 2, (d.p3 - 1) / 2);
            for m1 in 0..=d.m1 {
                for p in 0..=p1 {
                    raw.push(BfDescriptor::Aligned { p, m: m1 });
                }
            }
            for m2 in 0..=d.m2 {
                raw.push(BfDescriptor::Aligned { p: 0, m: m2 });
            }
            for p in 1..=p2 {
                for m4 in 0..=d.m4 {
                    for m3 in 0..=d.m3 {
                        raw.push(if m3 == m4 {
                            BfDescriptor::Aligned { p, m: m3 }
                        } else {
                            BfDescriptor::Cross { p, m: m3, l: m4 }
                        });
                    }
                }
            }
            for p in 1..=p3 {
                for m6 in 0..=d.m6 {
                    for m5 in 0..=d.m5 {
                        raw.push(if m5 == m6 {
                            BfDescriptor::Aligned { p, m: m5 }
                        } else {
                            BfDescriptor::Conj { p, m: m5, l: m6 }
                        });
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut out: Vec<BfDescriptor> = raw.into_iter().filter(|b| seen.insert(b.monomial())).collect();
    // Linear term first, remaining order preserved.
    if let Some(i) = out.iter().position(|b| *b == BfDescriptor::Aligned { p: 0, m: 0 }) {
        let lin = out.remove(i);
        out.insert(0, lin);
    }
    Ok(out)
}

/// Closed-form count of the dual-input family with uniform orders.
pub fn full_dual_input_count(max_order: usize, memory: usize) -> usize {
    let p = (max_order - 1) / 2;
    (p + 1) * (memory + 1) + 2 * p * (memory + 1) * memory
}

/// Closed-form GMP count.
pub fn gmp_count(max_order: usize, memory: usize, cross: usize) -> usize {
    let p = (max_order - 1) / 2;
    (p + 1) * (memory + 1) + 2 * p * (memory + 1) * cross
}

/// Row evaluator shared by matrix construction and the predistorter.
#[derive(Debug, Clone)]
pub struct BasisEvaluator<T: Real> {
    bfs: Vec<BfDescriptor>,
    lags: usize,
    pmax: usize,
    partition: Option<RegionPartition<T>>,
}

impl<T: Real> BasisEvaluator<T> {
    pub fn new(spec: &BasisSpec<T>) -> Result<Self> {
        let bfs = enumerate_bfs(spec)?;
        let lags = bfs.iter().map(|b| b.max_lag()).max().unwrap_or(0) + 1;
        let pmax = bfs.iter().map(|b| (b.order() - 1) / 2).max().unwrap_or(0);
        Ok(Self {
            bfs,
            lags,
            pmax,
            partition: spec.partition.clone(),
        })
    }

    pub fn descriptors(&self) -> &[BfDescriptor] {
        &self.bfs
    }

    pub fn width(&self) -> usize {
        self.bfs.len()
    }

    pub fn num_regions(&self) -> usize {
        self.partition.as_ref().map_or(1, |p| p.num_regions())
    }

    /// Evaluates rows `start..start+len` of `x` into `out` (row-major, width
    /// `B`) and returns the region of each row. Samples before index 0 are
    /// zero.
    pub fn eval_rows(&self, x: &[C<T>], start: usize, len: usize, out: &mut Vec<C<T>>) -> Vec<usize> {
        let b = self.bfs.len();
        out.clear();
        out.reserve(len * b);
        let zero = C::new(T::zero(), T::zero());
        let mut lagged = vec![zero; self.lags];
        let mut env = vec![vec![T::one(); self.pmax + 1]; self.lags];
        let mut regions = Vec::with_capacity(len);
        for n in start..start + len {
            for l in 0..self.lags {
                let s = if n >= l { x[n - l] } else { zero };
                lagged[l] = s;
                let e = s.norm_sqr();
                let row = &mut env[l];
                for p in 1..=self.pmax {
                    row[p] = row[p - 1] * e;
                }
            }
            for bf in &self.bfs {
                out.push(bf.eval(&lagged, &env));
            }
            regions.push(self.partition.as_ref().map_or(0, |p| p.region_of(x[n].norm())));
        }
        regions
    }
}

/// Realised basis matrix in compact piecewise form.
#[derive(Debug, Clone)]
pub struct BasisMatrix<T: Real> {
    pub spec: BasisSpec<T>,
    pub rows: usize,
    /// Basis functions per region.
    pub width: usize,
    pub num_regions: usize,
    /// `rows × width` active entries, row-major.
    pub values: Vec<C<T>>,
    pub region: Vec<usize>,
    pub orthogonalized: bool,
    pub whitener: Option<Whitener<T>>,
}

impl<T: Real> BasisMatrix<T> {
    pub fn row(&self, n: usize) -> &[C<T>] {
        &self.values[n * self.width..(n + 1) * self.width]
    }

    pub fn cols(&self) -> usize {
        self.width * self.num_regions
    }

    /// Dense `N × K·B` matrix.
    pub fn dense(&self) -> CMatrix<T> {
        let mut m = CMatrix::zeros(self.rows, self.cols());
        for n in 0..self.rows {
            let off = self.region[n] * self.width;
            m.row_mut(n)[off..off + self.width].copy_from_slice(self.row(n));
        }
        m
    }

    /// `Ψᴴ v` over all `K·B` columns.
    pub fn adjoint_mul(&self, v: &[C<T>]) -> Vec<C<T>> {
        let mut out = vec![C::new(T::zero(), T::zero()); self.cols()];
        for n in 0..self.rows {
            let off = self.region[n] * self.width;
            let vn = v[n];
            for (o, p) in out[off..off + self.width].iter_mut().zip(self.row(n)) {
                *o = *o + p.conj() * vn;
            }
        }
        out
    }

    /// `Ψ γ`.
    pub fn mul(&self, gamma: &[C<T>]) -> Vec<C<T>> {
        (0..self.rows)
            .map(|n| {
                let off = self.region[n] * self.width;
                self.row(n)
                    .iter()
                    .zip(&gamma[off..off + self.width])
                    .fold(C::new(T::zero(), T::zero()), |a, (p, g)| a + p * g)
            })
            .collect()
    }

    /// Per-region Gram blocks `Σ_{n∈k} ψ(n)ψ(n)ᴴ / N`.
    pub fn region_grams(&self) -> Vec<CMatrix<T>> {
        let mut g = vec![CMatrix::zeros(self.width, self.width); self.num_regions];
        for n in 0..self.rows {
            accumulate_outer(&mut g[self.region[n]], self.row(n));
        }
        let scale = count(self.rows.max(1));
        for m in &mut g {
            finish_gram(m, scale);
        }
        g
    }

    pub fn region_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_regions];
        for &r in &self.region {
            c[r] += 1;
        }
        c
    }

    /// Applies a whitener to the stored rows.
    pub fn whiten_with(&self, w: &Whitener<T>) -> Result<Self> {
        if self.orthogonalized {
            return Err(Error::config("basis matrix is already orthogonalized"));
        }
        if w.blocks.len() != self.num_regions || w.width() != self.width {
            return Err(Error::config("whitener shape does not match basis matrix"));
        }
        let mut out = self.clone();
        for n in 0..self.rows {
            let t = &w.blocks[self.region[n]].upper;
            let row = self.row(n);
            let dst = &mut out.values[n * self.width..(n + 1) * self.width];
            for (j, d) in dst.iter_mut().enumerate() {
                let mut acc = C::new(T::zero(), T::zero());
                for (i, r) in row.iter().enumerate().take(j + 1) {
                    acc = acc + *r * t[(i, j)];
                }
                *d = acc;
            }
        }
        out.orthogonalized = true;
        out.whitener = Some(w.clone());
        Ok(out)
    }
}

/// Builds `Ψ` for rows `start..start+n` of `a1`.
pub fn build_matrix<T: Real>(spec: &BasisSpec<T>, a1: &IqSignal<T>, start: usize, n: usize) -> Result<BasisMatrix<T>> {
    if start + n > a1.len() || n == 0 {
        return Err(Error::Index {
            index: start + n,
            len: a1.len(),
        });
    }
    let ev = BasisEvaluator::new(spec)?;
    let mut values = vec![];
    let region = ev.eval_rows(&a1.samples, start, n, &mut values);
    Ok(BasisMatrix {
        spec: spec.clone(),
        rows: n,
        width: ev.width(),
        num_regions: ev.num_regions(),
        values,
        region,
        orthogonalized: false,
        whitener: None,
    })
}

/// Per-region factor of the whitening transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WhitenerBlock<T: Real> {
    /// Cholesky factor `L` of the region Gram.
    pub lower: CMatrix<T>,
    /// `T = L⁻ᴴ` (upper triangular): `Ψ⊥ = Ψ T`.
    pub upper: CMatrix<T>,
}

/// Block-diagonal whitening transform, one block per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Whitener<T: Real> {
    pub blocks: Vec<WhitenerBlock<T>>,
}

impl<T: Real> Whitener<T> {
    /// Factors each region Gram after loading it by `loading·tr(G_k)/B`.
    /// Zero columns and columns that are numerically parallel to an earlier
    /// one are rejected before loading, since loading would hide them.
    pub fn from_grams(grams: &[CMatrix<T>], loading: f64) -> Result<Self> {
        let mut blocks = Vec::with_capacity(grams.len());
        for (k, g) in grams.iter().enumerate() {
            if let Some(column) = degenerate_column(g) {
                return Err(Error::DegenerateRegion { region: k, column });
            }
            let b = g.rows();
            let load = lit::<T>(loading) * g.trace().re / count(b.max(1));
            let mut loaded = g.clone();
            for i in 0..b {
                loaded[(i, i)] = loaded[(i, i)] + C::new(load, T::zero());
            }
            let tol = if load > T::zero() { T::zero() } else { lit(PIVOT_TOLERANCE) };
            let ch = cholesky(&loaded, tol).map_err(|e| match e {
                Error::NotPositiveDefinite(c) => Error::DegenerateRegion { region: k, column: c },
                other => other,
            })?;
            let upper = ch.inverse_adjoint();
            blocks.push(WhitenerBlock {
                lower: ch.lower,
                upper,
            });
        }
        Ok(Self { blocks })
    }

    pub fn width(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.upper.rows())
    }

    /// Orthogonal-domain coefficients to native ones: `γ = T γ⊥` per region.
    pub fn to_native(&self, gamma_orth: &[C<T>]) -> Vec<C<T>> {
        let b = self.width();
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(k, blk)| blk.upper.mul_vec(&gamma_orth[k * b..(k + 1) * b]))
            .collect()
    }

    /// Native coefficients to the orthogonal domain: `γ⊥ = Lᴴ γ`.
    pub fn to_orthogonal(&self, gamma: &[C<T>]) -> Vec<C<T>> {
        let b = self.width();
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(k, blk)| blk.lower.adjoint_mul_vec(&gamma[k * b..(k + 1) * b]))
            .collect()
    }

    /// Dense block-diagonal `T`.
    pub fn dense_upper(&self) -> CMatrix<T> {
        let b = self.width();
        let k = self.blocks.len();
        let mut m = CMatrix::zeros(b * k, b * k);
        for (r, blk) in self.blocks.iter().enumerate() {
            for i in 0..b {
                for j in 0..b {
                    m[(r * b + i, r * b + j)] = blk.upper[(i, j)];
                }
            }
        }
        m
    }
}

/// First column that is zero or parallel to an earlier column.
fn degenerate_column<T: Real>(g: &CMatrix<T>) -> Option<usize> {
    let tol = T::one() - lit::<T>(PIVOT_TOLERANCE);
    for j in 0..g.rows() {
        let d = g[(j, j)].re;
        if !(d > T::zero()) {
            return Some(j);
        }
        for i in 0..j {
            if g[(i, j)].norm_sqr() >= tol * g[(i, i)].re * d {
                return Some(j);
            }
        }
    }
    None
}

/// Whitens `bm` so that `ΨᴴΨ/N = I` per region. With `stats` the Gram is
/// estimated from that signal instead of from `bm` itself. Without it the
/// Gram is factored unloaded, and loaded only when a pivot falls below the
/// tolerance.
pub fn orthogonalize<T: Real>(bm: &BasisMatrix<T>, stats: Option<&IqSignal<T>>) -> Result<BasisMatrix<T>> {
    if bm.orthogonalized {
        return Err(Error::config("basis matrix is already orthogonalized"));
    }
    let w = match stats {
        Some(s) => whitener_from_signal(&bm.spec, s)?,
        None => match whitener_from_matrix(bm, 0.0) {
            Err(Error::DegenerateRegion { .. }) => whitener_from_matrix(bm, COVARIANCE_LOADING)?,
            other => other?,
        },
    };
    bm.whiten_with(&w)
}

pub fn whitener_from_matrix<T: Real>(bm: &BasisMatrix<T>, loading: f64) -> Result<Whitener<T>> {
    let counts = bm.region_counts();
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::DegenerateRegion { region: k, column: 0 });
        }
        if c < bm.width {
            return Err(Error::UnderdeterminedRegion {
                region: k,
                rows: c,
                cols: bm.width,
            });
        }
    }
    Whitener::from_grams(&bm.region_grams(), loading)
}

pub fn whitener_from_signal<T: Real>(spec: &BasisSpec<T>, stats: &IqSignal<T>) -> Result<Whitener<T>> {
    let bm = build_matrix(spec, stats, 0, stats.len())?;
    whitener_from_matrix(&bm, COVARIANCE_LOADING)
}

/// Block-diagonal sample covariance and its inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Covariance<T: Real> {
    pub blocks: Vec<CMatrix<T>>,
    pub inverse_blocks: Vec<CMatrix<T>>,
}

impl<T: Real> Covariance<T> {
    fn assemble(blocks: &[CMatrix<T>]) -> CMatrix<T> {
        let b = blocks.first().map_or(0, |m| m.rows());
        let k = blocks.len();
        let mut m = CMatrix::zeros(b * k, b * k);
        for (r, blk) in blocks.iter().enumerate() {
            for i in 0..b {
                for j in 0..b {
                    m[(r * b + i, r * b + j)] = blk[(i, j)];
                }
            }
        }
        m
    }

    pub fn dense(&self) -> CMatrix<T> {
        Self::assemble(&self.blocks)
    }

    pub fn dense_inverse(&self) -> CMatrix<T> {
        Self::assemble(&self.inverse_blocks)
    }

    /// `R⁻¹ g` applied block-wise.
    pub fn solve(&self, g: &[C<T>]) -> Vec<C<T>> {
        let b = self.blocks.first().map_or(0, |m| m.rows());
        self.inverse_blocks
            .iter()
            .enumerate()
            .flat_map(|(k, inv)| inv.mul_vec(&g[k * b..(k + 1) * b]))
            .collect()
    }
}

/// `R = ΨᴴΨ/N` from a training signal, loaded by `ε·tr(R_k)/B` per region
/// block before inversion.
pub fn precompute_covariance<T: Real>(spec: &BasisSpec<T>, training: &IqSignal<T>) -> Result<Covariance<T>> {
    let bm = build_matrix(spec, training, 0, training.len())?;
    covariance_from_matrix(&bm, COVARIANCE_LOADING)
}

pub fn covariance_from_matrix<T: Real>(bm: &BasisMatrix<T>, loading: f64) -> Result<Covariance<T>> {
    let mut blocks = bm.region_grams();
    let b = bm.width;
    let mut inverse_blocks = Vec::with_capacity(blocks.len());
    for (k, g) in blocks.iter_mut().enumerate() {
        let mut load = lit::<T>(loading) * g.trace().re / count(b);
        if !(load > T::zero()) {
            // Empty region: identity keeps the inverse defined.
            load = T::one();
        }
        for i in 0..b {
            g[(i, i)] = g[(i, i)] + C::new(load, T::zero());
        }
        let ch = cholesky(g, T::zero()).map_err(|_| Error::DegenerateRegion { region: k, column: 0 })?;
        inverse_blocks.push(ch.inverse());
    }
    Ok(Covariance {
        blocks,
        inverse_blocks,
    })
}
