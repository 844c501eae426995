//! Amplitude-range partitioning for piecewise predistortion.
//!
//! [`partition_regions`] walks the amplitude axis left to right. Each region
//! gets the widest `Δ` for which the Taylor remainder bound
//! `max|f^{(Q+1)}| Δ^{Q+1} / (Q+1)!` of the AM/AM curve stays at the target
//! error. Because the derivative maximum depends on the interval itself the
//! width is found by fixed-point iteration, seeded with the derivative maximum
//! over the whole remaining range. Should the iteration fail to settle the
//! width is bracketed and bisected instead; the map
//! `Δ ↦ ((Q+1)! e / max|f^{(Q+1)}|_{[u,u+Δ]})^{1/(Q+1)}` is non-increasing,
//! so its fixed point is unique.
//!
//! [`kmeans_partition`] is the clustering baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, CMatrix};
use crate::scalar::{count, lit, to_f64, Real, C};
use crate::signal::IqSignal;

/// Grid points used when maximising a derivative over an interval.
pub const DERIVATIVE_GRID: usize = 1000;
/// Regions narrower than this fraction of the full range are merged.
pub const SLIVER_FRACTION: f64 = 0.02;
const MAX_REGIONS: usize = 256;
const FIXED_POINT_ITERATIONS: usize = 60;

/// Ordered amplitude regions `[u_k, v_k)`, the last one closed on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RegionPartition<T: Real> {
    /// `u_1 = 0, v_1 = u_2, ..., v_K`; length `K + 1`.
    pub boundaries: Vec<T>,
    /// Taylor order per region (0 when the partition was not derived from
    /// a remainder bound).
    pub orders: Vec<usize>,
    /// Target error per region (0 when not applicable).
    pub target_error: Vec<T>,
}

impl<T: Real> RegionPartition<T> {
    pub fn single(a_max: T) -> Self {
        Self {
            boundaries: vec![T::zero(), a_max],
            orders: vec![0],
            target_error: vec![T::zero()],
        }
    }

    /// Partition from explicit boundaries `[0, b_1, ..., a_max]`.
    pub fn from_boundaries(boundaries: Vec<T>) -> Result<Self> {
        let k = boundaries.len().saturating_sub(1);
        let p = Self {
            boundaries,
            orders: vec![0; k],
            target_error: vec![T::zero(); k],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_regions(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn a_max(&self) -> T {
        *self.boundaries.last().expect("validated partition")
    }

    pub fn bounds(&self, k: usize) -> (T, T) {
        (self.boundaries[k], self.boundaries[k + 1])
    }

    pub fn width(&self, k: usize) -> T {
        self.boundaries[k + 1] - self.boundaries[k]
    }

    /// Region of an envelope value. Amplitudes above the top boundary fall
    /// in the last region.
    #[inline]
    pub fn region_of(&self, amplitude: T) -> usize {
        let k = self.num_regions();
        self.boundaries[1..k].partition_point(|&b| b <= amplitude)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.boundaries;
        if b.len() < 2 {
            return Err(Error::config("partition needs at least one region"));
        }
        if b[0] != T::zero() {
            return Err(Error::config("partition must start at zero amplitude"));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) || !b.iter().all(|v| v.is_finite()) {
            return Err(Error::config("partition boundaries must be finite and strictly increasing"));
        }
        let k = b.len() - 1;
        if self.orders.len() != k || self.target_error.len() != k {
            return Err(Error::config("partition needs one order and target per region"));
        }
        Ok(())
    }

    /// Fraction of samples of `x` falling in each region.
    pub fn sample_share(&self, x: &IqSignal<T>) -> Vec<f64> {
        let mut hits = vec![0usize; self.num_regions()];
        for s in &x.samples {
            hits[self.region_of(s.norm())] += 1;
        }
        let n = x.len().max(1) as f64;
        hits.into_iter().map(|h| h as f64 / n).collect()
    }

    /// Merges regions holding fewer than `min_samples` samples of `x` into a
    /// neighbour, sparsest first. Returns the merged partition and one
    /// message per merge.
    pub fn merge_sparse(&self, x: &IqSignal<T>, min_samples: usize) -> (Self, Vec<String>) {
        let mut p = self.clone();
        let mut notes = vec![];
        while p.num_regions() > 1 {
            let mut hits = vec![0usize; p.num_regions()];
            for s in &x.samples {
                hits[p.region_of(s.norm())] += 1;
            }
            let (k, &n) = hits.iter().enumerate().min_by_key(|(_, &h)| h).expect("at least one region");
            if n >= min_samples {
                break;
            }
            let last = p.num_regions() - 1;
            // Boundary index to drop: the one shared with the sparser neighbour.
            let drop = if k == 0 {
                1
            } else if k == last || hits[k - 1] <= hits[k + 1] {
                k
            } else {
                k + 1
            };
            notes.push(format!(
                "region {} holds {n} samples (< {min_samples}); merged at boundary {:.4}",
                k + 1,
                to_f64(p.boundaries[drop])
            ));
            p.boundaries.remove(drop);
            p.orders.remove(drop);
            p.target_error.remove(drop);
        }
        (p, notes)
    }

    /// Same partition with every boundary multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            boundaries: self.boundaries.iter().map(|&b| b * k).collect(),
            ..self.clone()
        }
    }
}

/// Polynomial AM/AM characteristic `f(a) = Σ c_k a^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AmAmModel<T: Real> {
    pub coefficients: Vec<T>,
    pub fit_domain: (T, T),
    pub fit_residual: T,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl<T: Real> AmAmModel<T> {
    pub fn from_coefficients(coefficients: Vec<T>, a_max: T) -> Self {
        Self {
            coefficients,
            fit_domain: (T::zero(), a_max),
            fit_residual: T::zero(),
            warnings: vec![],
        }
    }

    pub fn eval(&self, a: T) -> T {
        horner(&self.coefficients, a)
    }

    /// Coefficients of the `d`-th derivative.
    pub fn derivative_coefficients(&self, d: usize) -> Vec<T> {
        let mut c = self.coefficients.clone();
        for _ in 0..d {
            if c.len() <= 1 {
                return vec![];
            }
            c = c.iter().enumerate().skip(1).map(|(k, &v)| v * count(k)).collect();
        }
        c
    }

    pub fn derivative(&self, d: usize, a: T) -> T {
        horner(&self.derivative_coefficients(d), a)
    }

    /// `max |f^{(d)}|` over `DERIVATIVE_GRID` points spanning `[u, v]`.
    pub fn derivative_max(&self, d: usize, u: T, v: T) -> T {
        derivative_max_grid(&self.derivative_coefficients(d), u, v, DERIVATIVE_GRID)
    }
}

fn horner<T: Real>(c: &[T], a: T) -> T {
    c.iter().rev().fold(T::zero(), |acc, &v| acc * a + v)
}

fn derivative_max_grid<T: Real>(c: &[T], u: T, v: T, points: usize) -> T {
    if c.is_empty() {
        return T::zero();
    }
    let step = (v - u) / count(points - 1);
    (0..points)
        .map(|i| horner(c, u + step * count(i)).abs())
        .fold(T::zero(), T::max)
}

/// Least-squares polynomial fit of `|z|` against `|a1|` with powers
/// `0..=fit_order`.
pub fn fit_amam<T: Real>(a1: &IqSignal<T>, z: &IqSignal<T>, fit_order: usize) -> Result<AmAmModel<T>> {
    if a1.len() != z.len() {
        return Err(Error::LengthMismatch {
            what: "AM/AM fit input vs observation",
            left: a1.len(),
            right: z.len(),
        });
    }
    if a1.is_empty() {
        return Err(Error::EmptySignal("fit_amam"));
    }
    if fit_order < 3 {
        return Err(Error::config("AM/AM fit order must be at least 3"));
    }
    let amps: Vec<T> = a1.samples.iter().map(|s| s.norm()).collect();
    let a_max = amps.iter().copied().fold(T::zero(), T::max);
    if a_max == T::zero() {
        return Err(Error::ZeroEnergy);
    }
    let a_min = amps.iter().copied().fold(a_max, T::min);
    let mut warnings = vec![];
    if a_min * lit(2.0) > a_max {
        warnings.push(format!(
            "insufficient amplitude spread: max/min = {:.3} < 2",
            crate::scalar::to_f64(a_max / a_min.max(T::min_positive_value()))
        ));
    }
    // Fit on a/a_max for conditioning, then rescale.
    let cols = fit_order + 1;
    let m = CMatrix::from_fn(amps.len(), cols, |r, c| {
        C::new((amps[r] / a_max).powi(c as i32), T::zero())
    });
    let rhs: Vec<C<T>> = z.samples.iter().map(|s| C::new(s.norm(), T::zero())).collect();
    let sol = least_squares(&m, &rhs, T::zero())?;
    let coefficients: Vec<T> = sol
        .iter()
        .enumerate()
        .map(|(k, c)| c.re / a_max.powi(k as i32))
        .collect();
    let mut model = AmAmModel::from_coefficients(coefficients, a_max);
    let sse: T = amps
        .iter()
        .zip(&z.samples)
        .map(|(&a, s)| {
            let d = model.eval(a) - s.norm();
            d * d
        })
        .sum();
    model.fit_residual = (sse / count(amps.len())).sqrt();
    model.warnings = warnings;
    Ok(model)
}

fn factorial<T: Real>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * count(k))
}

/// Taylor-remainder partition of `[0, a_max]`.
///
/// `orders` and `targets` are per region; the last entry is reused once the
/// lists run out.
pub fn partition_regions<T: Real>(
    model: &AmAmModel<T>,
    a_max: T,
    orders: &[usize],
    targets: &[T],
    delta: T,
) -> Result<RegionPartition<T>> {
    if orders.is_empty() || targets.is_empty() {
        return Err(Error::config("partition needs at least one order and one target error"));
    }
    if orders.contains(&0) {
        return Err(Error::config("Taylor order must be at least 1"));
    }
    if targets.iter().any(|&e| !(e > T::zero())) {
        return Err(Error::config("target error must be positive"));
    }
    if !(delta > T::zero()) || !(a_max > T::zero()) {
        return Err(Error::config("delta and a_max must be positive"));
    }
    let mut boundaries = vec![T::zero()];
    let mut used_orders = vec![];
    let mut used_targets = vec![];
    let mut u = T::zero();
    while u < a_max {
        let k = used_orders.len();
        if k >= MAX_REGIONS {
            return Err(Error::config(format!(
                "partition needs more than {MAX_REGIONS} regions; relax the target error"
            )));
        }
        let q = orders[k.min(orders.len() - 1)];
        let e = targets[k.min(targets.len() - 1)];
        let width = region_width(model, u, a_max, q, e, delta);
        let v = if u + width >= a_max { a_max } else { u + width };
        boundaries.push(v);
        used_orders.push(q);
        used_targets.push(e);
        u = v;
    }
    let sliver = a_max * lit(SLIVER_FRACTION);
    if boundaries.len() > 2 && a_max - boundaries[boundaries.len() - 2] < sliver {
        let last = boundaries.len() - 2;
        boundaries.remove(last);
        used_orders.pop();
        used_targets.pop();
    }
    let p = RegionPartition {
        boundaries,
        orders: used_orders,
        target_error: used_targets,
    };
    p.validate()?;
    Ok(p)
}

/// Width of the region starting at `u`.
fn region_width<T: Real>(model: &AmAmModel<T>, u: T, a_max: T, q: usize, e: T, delta: T) -> T {
    let remaining = a_max - u;
    let dc = model.derivative_coefficients(q + 1);
    let tiny = T::eps() * T::eps().sqrt();
    let num = factorial::<T>(q + 1) * e;
    let inv = T::one() / count::<T>(q + 1);
    let h = |w: T| -> T {
        let fmax = derivative_max_grid(&dc, u, u + w.min(remaining), DERIVATIVE_GRID);
        if fmax < tiny {
            T::infinity()
        } else {
            (num / fmax).powf(inv)
        }
    };
    let first = h(remaining);
    if first >= remaining {
        return remaining;
    }
    let mut w = first;
    for _ in 0..FIXED_POINT_ITERATIONS {
        let next = h(w);
        if (next - w).abs() <= delta {
            return next.min(remaining);
        }
        w = next;
    }
    // g(w) = w - h(w) is increasing: g(first) <= 0 < g(remaining).
    let (mut lo, mut hi) = (first, remaining);
    while hi - lo > delta {
        let mid = (lo + hi) / lit(2.0);
        if mid - h(mid) > T::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// One-dimensional K-means over `|a1|`, seeded at the sorted amplitude
/// quantiles `(k + 1/2)/K`. Boundaries sit midway between centroids.
pub fn kmeans_partition<T: Real>(a1: &IqSignal<T>, k: usize) -> Result<(RegionPartition<T>, Vec<T>)> {
    if k == 0 {
        return Err(Error::config("K-means needs K >= 1"));
    }
    if a1.is_empty() {
        return Err(Error::EmptySignal("kmeans_partition"));
    }
    let mut amps: Vec<T> = a1.samples.iter().map(|s| s.norm()).collect();
    amps.sort_by(|a, b| a.partial_cmp(b).expect("finite amplitudes"));
    let a_max = *amps.last().unwrap();
    let mut distinct = 1;
    for w in amps.windows(2) {
        if w[1] > w[0] {
            distinct += 1;
        }
    }
    if k > distinct {
        return Err(Error::config(format!(
            "K-means with K = {k} but only {distinct} distinct amplitudes"
        )));
    }
    if a_max == T::zero() {
        return Err(Error::ZeroEnergy);
    }
    let n = amps.len();
    let mut centroids: Vec<T> = (0..k)
        .map(|i| amps[(((2 * i + 1) * n) / (2 * k)).min(n - 1)])
        .collect();
    dedupe_centroids(&mut centroids, &amps);
    // Prefix sums make each Lloyd step O(K log N) on sorted data.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    for &a in &amps {
        let last = *prefix.last().unwrap();
        prefix.push(last + a);
    }
    for _ in 0..1000 {
        let cuts = midpoints(&centroids);
        let mut starts = vec![0usize];
        starts.extend(cuts.iter().map(|&c| amps.partition_point(|&a| a < c)));
        starts.push(n);
        let mut next = centroids.clone();
        for j in 0..k {
            let (s, e) = (starts[j], starts[j + 1]);
            if e > s {
                next[j] = (prefix[e] - prefix[s]) / count(e - s);
            }
        }
        if next == centroids {
            break;
        }
        centroids = next;
    }
    let mut boundaries = vec![T::zero()];
    boundaries.extend(midpoints(&centroids));
    boundaries.push(a_max);
    // Empty clusters can collapse boundaries; keep the strictly increasing subset.
    boundaries.dedup_by(|a, b| !(*a > *b));
    let p = RegionPartition::from_boundaries(boundaries)?;
    Ok((p, centroids))
}

fn midpoints<T: Real>(c: &[T]) -> Vec<T> {
    c.windows(2).map(|w| (w[0] + w[1]) / lit(2.0)).collect()
}

fn dedupe_centroids<T: Real>(c: &mut [T], sorted: &[T]) {
    // Quantile seeds can coincide on heavily repeated amplitudes; move the
    // later duplicate to the next distinct amplitude.
    for i in 1..c.len() {
        if c[i] <= c[i - 1] {
            let idx = sorted.partition_point(|&a| a <= c[i - 1]);
            if idx < sorted.len() {
                c[i] = sorted[idx];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rayleigh(n: usize, seed: u64) -> IqSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                cplx::<f64>(a * 0.5f64.sqrt(), b * 0.5f64.sqrt())
            })
            .collect();
        IqSignal::new(s, 1.0).unwrap()
    }

    #[test]
    fn region_lookup_follows_half_open_convention() {
        let p = RegionPartition::from_boundaries(vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.region_of(0.2), 0);
        assert_eq!(p.region_of(0.5), 1);
        assert_eq!(p.region_of(1.0), 1);
        assert_eq!(p.region_of(7.0), 1);
        assert!(RegionPartition::from_boundaries(vec![0.0, 0.5, 0.5]).is_err());
        assert!(RegionPartition::<f64>::from_boundaries(vec![0.0]).is_err());
    }

    #[test]
    fn linear_fit_and_single_region() {
        let a = rayleigh(2000, 1);
        let z = a.scaled(cplx::<f64>(2.0, 0.0));
        let m = fit_amam(&a, &z, 9).unwrap();
        assert!((m.coefficients[1] - 2.0).abs() < 1e-8);
        assert!(m.fit_residual < 1e-8);
        let p = partition_regions(&m, a.peak_amplitude(), &[3], &[0.01], 1e-4).unwrap();
        assert_eq!(p.num_regions(), 1);
    }

    #[test]
    fn cubic_plant_recovered() {
        let a = rayleigh(5000, 2);
        let z = IqSignal::from_parts(
            a.samples.iter().map(|x| x - x * x.norm_sqr() * 0.1).collect(),
            1.0,
        );
        let m = fit_amam(&a, &z, 9).unwrap();
        assert!((m.coefficients[1] - 1.0).abs() < 1e-3);
        assert!((m.coefficients[3] + 0.1).abs() < 1e-3);
    }

    #[test]
    fn cubic_closed_form_partition() {
        let m = AmAmModel::from_coefficients(vec![0.0, 1.0, 0.0, 0.1], 1.0);
        let p = partition_regions(&m, 1.0, &[2], &[0.01], 1e-4).unwrap();
        let d = 0.1f64.powf(1.0 / 3.0);
        assert_eq!(p.num_regions(), 3);
        assert!((p.boundaries[1] - d).abs() <= 1e-4);
        assert!((p.boundaries[2] - 2.0 * d).abs() <= 2e-4);
        assert_eq!(p.boundaries[3], 1.0);
    }

    #[test]
    fn sliver_is_merged() {
        // Width 0.4 per region on [0, 0.81]: the 0.01 tail is merged.
        let e = 0.4f64.powi(3) * 0.6 / 6.0;
        let m = AmAmModel::from_coefficients(vec![0.0, 1.0, 0.0, 0.1], 0.81);
        let p = partition_regions(&m, 0.81, &[2], &[e], 1e-6).unwrap();
        assert_eq!(p.num_regions(), 2);
        assert_eq!(*p.boundaries.last().unwrap(), 0.81);
    }

    #[test]
    fn smaller_target_never_widens_regions() {
        let m = AmAmModel::from_coefficients(vec![0.0, 1.0, 0.0, 0.1], 1.0);
        let wide = partition_regions(&m, 1.0, &[2], &[0.01], 1e-5).unwrap();
        let narrow = partition_regions(&m, 1.0, &[2], &[0.001], 1e-5).unwrap();
        assert!(narrow.width(0) <= wide.width(0));
        assert!(narrow.num_regions() >= wide.num_regions());
    }

    #[test]
    fn refining_grid_moves_width_less_than_delta() {
        let m = AmAmModel::from_coefficients(vec![0.0, 1.0, 0.2, -0.6, 0.3, -0.05], 1.5);
        let dc = m.derivative_coefficients(4);
        for (u, w) in [(0.0, 0.5), (0.4, 0.9)] {
            let coarse = derivative_max_grid(&dc, u, u + w, DERIVATIVE_GRID);
            let fine = derivative_max_grid(&dc, u, u + w, 4 * DERIVATIVE_GRID);
            let dw: f64 = ((0.24f64 / coarse).powf(0.25) - (0.24f64 / fine).powf(0.25)).abs();
            assert!(dw < 1e-4 * 1.5);
        }
    }

    #[test]
    fn kmeans_two_clusters() {
        let mut v = vec![cplx::<f64>(0.1, 0.0); 50];
        v.extend(vec![cplx::<f64>(0.0, 0.9); 50]);
        let (p, c) = kmeans_partition(&IqSignal::new(v, 1.0).unwrap(), 2).unwrap();
        assert!((p.boundaries[1] - 0.5).abs() < 1e-12);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn kmeans_single_and_too_many() {
        let a = rayleigh(100, 3);
        let (p, _) = kmeans_partition(&a, 1).unwrap();
        assert_eq!(p.num_regions(), 1);
        let two = IqSignal::new(vec![cplx::<f64>(0.1, 0.0), cplx::<f64>(0.3, 0.0)], 1.0).unwrap();
        assert!(kmeans_partition(&two, 3).is_err());
    }

    #[test]
    fn kmeans_gathers_near_the_mode() {
        let a = rayleigh(50_000, 4);
        let (_, c) = kmeans_partition(&a, 4).unwrap();
        let near_mode = c[1] - c[0];
        let near_peak = c[3] - c[2];
        assert!(near_mode < near_peak, "{c:?}");
    }
}
