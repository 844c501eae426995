//! Piecewise injection predistorter and closed-loop block learning.
//!
//! The predistorter adds a correction to its input,
//! `ã1(n) = a1(n) + Σ_k Σ_j γ^k_j ψ^k_j(n)`, with the basis always built on
//! the original `a1`. Learning uses the error `e = z - Ĝ a1` between the
//! observation and the scaled input, and per block either
//!
//! * `Γ ← Γ - μ/(N Ĝ) · R⁻¹ Ψᴴ e` (self-orthogonalized), or
//! * `Γ⊥ ← Γ⊥ - μ/(N Ĝ) · Ψ⊥ᴴ e` (orthogonal basis functions).
//!
//! The `1/(N Ĝ)` factor makes one step with `μ = 1` the least-squares
//! correction for a plant whose small-signal gain is `Ĝ`, so `μ ∈ (0, 2)`
//! is the stable range in either domain.
//!
//! Pruning works on `ζ = Ψ⊥ᴴ e / N`, the per-sample projection of the error
//! onto each orthonormal basis function, expressed in dB relative to the
//! carrier `|Ĝ|² P(a1)`. The first block fixes the predistortion set; from
//! then on only predistortion-set members still above threshold are updated,
//! the others keep their value.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::basis::{
    covariance_from_matrix, whitener_from_matrix, BasisEvaluator, COVARIANCE_LOADING, BasisMatrix, BasisSpec, Covariance,
    Whitener, WhitenerBlock,
};
use crate::error::{Error, Result};
use crate::linalg::{czero, CMatrix};
use crate::partition::RegionPartition;
use crate::scalar::{count, db10, inner, lit, to_f64, Real, C};
use crate::signal::{decode_iq, encode_iq, IqSignal};

/// Error-power rise over three iterations that counts as divergence.
pub const DIVERGENCE_RISE_DB: f64 = 10.0;
const MODEL_MAGIC: &[u8; 7] = b"PWDPD1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningRule {
    SelfOrthogonalized,
    OrthogonalBfs,
}

/// How the linear gain `Ĝ` used in the error signal is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GainPolicy {
    /// Estimated once on the first block and held.
    #[default]
    FixedFirstBlock,
    /// Re-estimated on every block.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub mu: f64,
    pub block_size: usize,
    pub iterations: usize,
    pub rule: LearningRule,
    #[serde(default)]
    pub prune_threshold_db: Option<f64>,
    #[serde(default)]
    pub noise_floor_dbc: Option<f64>,
    #[serde(default)]
    pub gain_policy: GainPolicy,
    /// Diagonal loading `ε` applied to the statistics Gram of either rule.
    #[serde(default = "default_loading")]
    pub loading: f64,
    /// Samples used to estimate the covariance or whitener; `block_size`
    /// when absent.
    #[serde(default)]
    pub statistics_length: Option<usize>,
}

fn default_loading() -> f64 {
    COVARIANCE_LOADING
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            mu: 0.25,
            block_size: 20_000,
            iterations: 10,
            rule: LearningRule::OrthogonalBfs,
            prune_threshold_db: None,
            noise_floor_dbc: None,
            gain_policy: GainPolicy::FixedFirstBlock,
            loading: COVARIANCE_LOADING,
            statistics_length: None,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self, coefficients: usize) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 2.0) {
            return Err(Error::config(format!("learning rate {} outside (0, 2)", self.mu)));
        }
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(Error::config(format!("loading {} must be finite and non-negative", self.loading)));
        }
        if self.iterations == 0 {
            return Err(Error::config("at least one learning iteration is required"));
        }
        if self.block_size < 10 * coefficients {
            return Err(Error::config(format!(
                "block size {} below 10 x {coefficients} coefficients",
                self.block_size
            )));
        }
        if self.prune_threshold_db.is_some() && self.rule != LearningRule::OrthogonalBfs {
            return Err(Error::config("pruning requires the orthogonal basis-function rule"));
        }
        Ok(())
    }
}

/// One line of the learning trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `P(e) / P(z)` in dB.
    pub error_power_dbc: f64,
    /// `Σ|z/Ĝ - a1|² / Σ|a1|²` in dB.
    pub nmse_db: f64,
    pub active_bf_count: usize,
    /// Normalised `|ζ_j|` in dB (orthogonal domain when available).
    #[serde(default)]
    pub zeta_db: Vec<f64>,
}

/// Coefficients plus everything needed to apply them.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdModel<T: Real> {
    pub gamma: Vec<C<T>>,
    pub spec: BasisSpec<T>,
    pub ghat: C<T>,
    pub orthogonal_domain: bool,
    pub whitener: Option<Whitener<T>>,
    /// Coefficients still being updated.
    pub active_mask: Vec<bool>,
    /// Coefficients used by the predistorter.
    pub pd_mask: Vec<bool>,
}

impl<T: Real> DpdModel<T> {
    /// All-zero native-domain model.
    pub fn zero(spec: BasisSpec<T>) -> Result<Self> {
        let n = spec.total()?;
        Ok(Self {
            gamma: vec![czero(); n],
            spec,
            ghat: C::new(T::one(), T::zero()),
            orthogonal_domain: false,
            whitener: None,
            active_mask: vec![true; n],
            pd_mask: vec![true; n],
        })
    }

    pub fn partition(&self) -> Option<&RegionPartition<T>> {
        self.spec.partition.as_ref()
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    pub fn pd_count(&self) -> usize {
        self.pd_mask.iter().filter(|&&a| a).count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.spec.total()?;
        if self.gamma.len() != n || self.active_mask.len() != n || self.pd_mask.len() != n {
            return Err(Error::LengthMismatch {
                what: "model coefficient count vs basis",
                left: self.gamma.len(),
                right: n,
            });
        }
        if self.orthogonal_domain && self.whitener.is_none() {
            return Err(Error::config("orthogonal-domain model without whitener"));
        }
        Ok(())
    }

    /// Coefficients in the original basis.
    pub fn native_gamma(&self) -> Vec<C<T>> {
        let masked: Vec<C<T>> = self
            .gamma
            .iter()
            .zip(&self.pd_mask)
            .map(|(&g, &m)| if m { g } else { czero() })
            .collect();
        match (&self.whitener, self.orthogonal_domain) {
            (Some(w), true) => w.to_native(&masked),
            _ => masked,
        }
    }

    /// Equivalent model with coefficients in the original basis.
    pub fn to_native(&self) -> Self {
        Self {
            gamma: self.native_gamma(),
            orthogonal_domain: false,
            pd_mask: vec![true; self.gamma.len()],
            active_mask: vec![true; self.gamma.len()],
            ..self.clone()
        }
    }

    /// Static response `a + Σ γ_j a^{order_j}` to a constant envelope `a`;
    /// the DPD AM/AM (and AM/PM via its phase) curve.
    pub fn static_response(&self, amplitude: T) -> Result<C<T>> {
        let ev = BasisEvaluator::new(&self.spec)?;
        let g = self.native_gamma();
        let b = ev.width();
        let k = self.spec.region_of(amplitude);
        let mut acc = C::new(amplitude, T::zero());
        for (j, d) in ev.descriptors().iter().enumerate() {
            acc = acc + g[k * b + j] * amplitude.powi(d.order() as i32);
        }
        Ok(acc)
    }
}

/// Applies the predistorter. With all coefficients zero the input is
/// returned unchanged.
pub fn predistort<T: Real>(model: &DpdModel<T>, a1: &IqSignal<T>) -> Result<IqSignal<T>> {
    if a1.is_empty() {
        return Err(Error::EmptySignal("predistort"));
    }
    model.validate()?;
    let gamma = model.native_gamma();
    if gamma.iter().all(|g| g.re == T::zero() && g.im == T::zero()) {
        return Ok(a1.clone());
    }
    let ev = BasisEvaluator::new(&model.spec)?;
    let b = ev.width();
    let mut out = a1.samples.clone();
    let chunk = 4096;
    let mut rows = vec![];
    let mut start = 0;
    while start < a1.len() {
        let len = chunk.min(a1.len() - start);
        let regions = ev.eval_rows(&a1.samples, start, len, &mut rows);
        for (r, &k) in regions.iter().enumerate() {
            let g = &gamma[k * b..(k + 1) * b];
            let row = &rows[r * b..(r + 1) * b];
            let corr = row.iter().zip(g).fold(czero(), |acc: C<T>, (p, c)| acc + p * c);
            out[start + r] = out[start + r] + corr;
        }
        start += len;
    }
    Ok(IqSignal::from_parts(out, a1.sample_rate))
}

/// Least-squares gain `Ĝ = a1ᴴ z / a1ᴴ a1`.
pub fn estimate_gain<T: Real>(a1: &IqSignal<T>, z: &IqSignal<T>) -> Result<C<T>> {
    check_same_len(a1, z, "gain estimate")?;
    let den = inner(&a1.samples, &a1.samples).re;
    if !(den > T::zero()) {
        return Err(Error::ZeroEnergy);
    }
    Ok(inner(&a1.samples, &z.samples) / den)
}

/// `e = z - Ĝ a1`.
pub fn error_signal<T: Real>(z: &IqSignal<T>, a1: &IqSignal<T>, ghat: C<T>) -> Result<IqSignal<T>> {
    check_same_len(a1, z, "error signal")?;
    Ok(IqSignal::from_parts(
        z.samples.iter().zip(&a1.samples).map(|(z, a)| z - ghat * a).collect(),
        z.sample_rate,
    ))
}

fn check_same_len<T: Real>(a: &IqSignal<T>, b: &IqSignal<T>, what: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what,
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Integer delay and unit phase of `measured` relative to `reference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment<T: Real> {
    /// Positive when `measured` lags `reference`.
    pub delay: isize,
    pub phase: C<T>,
    /// Normalised correlation magnitude at the peak.
    pub peak: T,
}

/// Locates the cross-correlation peak over lags up to half the shorter
/// length.
pub fn align<T: Real>(reference: &IqSignal<T>, measured: &IqSignal<T>) -> Result<Alignment<T>> {
    if reference.is_empty() || measured.is_empty() {
        return Err(Error::EmptySignal("align"));
    }
    let n = reference.len().max(measured.len());
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut r = vec![czero(); size];
    let mut m = vec![czero(); size];
    r[..reference.len()].copy_from_slice(&reference.samples);
    m[..measured.len()].copy_from_slice(&measured.samples);
    fwd.process(&mut r);
    fwd.process(&mut m);
    let mut x: Vec<C<T>> = r.iter().zip(&m).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut x);
    // x[d] = Σ conj(ref(n)) meas(n + d) · size
    let max_lag = (reference.len().min(measured.len()) / 2) as isize;
    let mut best = (0isize, T::zero(), czero());
    for d in -max_lag..=max_lag {
        let idx = d.rem_euclid(size as isize) as usize;
        let v = x[idx];
        if v.norm() > best.1 {
            best = (d, v.norm(), v);
        }
    }
    let er = inner(&reference.samples, &reference.samples).re;
    let em = inner(&measured.samples, &measured.samples).re;
    let peak = best.1 / count::<T>(size) / (er * em).sqrt();
    if !(peak >= lit(0.2)) {
        return Err(Error::Alignment { peak: to_f64(peak) });
    }
    Ok(Alignment {
        delay: best.0,
        phase: best.2 / best.1,
        peak,
    })
}

/// Undoes an alignment: advances `measured` by the delay (zero-filling the
/// tail) and removes the phase.
pub fn apply_alignment<T: Real>(measured: &IqSignal<T>, al: &Alignment<T>) -> IqSignal<T> {
    let n = measured.len() as isize;
    let rot = al.phase.conj();
    let out = (0..n)
        .map(|i| {
            let j = i + al.delay;
            if (0..n).contains(&j) {
                measured.samples[j as usize] * rot
            } else {
                czero()
            }
        })
        .collect();
    IqSignal::from_parts(out, measured.sample_rate)
}

/// Closed-loop plant access: fresh transmit data per iteration and the
/// observation of whatever is sent to the transmitter.
pub trait ClosedLoopSource<T: Real> {
    /// New `a1` realisation for learning iteration `iteration`.
    fn next_input(&mut self, iteration: usize, len: usize) -> Result<IqSignal<T>>;
    /// Aligned observation `z` of the transmission of `x`.
    fn transmit(&mut self, x: &IqSignal<T>) -> Result<IqSignal<T>>;
    /// Signal used to estimate the basis statistics (covariance or
    /// whitener) before learning starts.
    fn statistics_input(&mut self, len: usize) -> Result<IqSignal<T>> {
        self.next_input(usize::MAX, len)
    }
}

/// `true` where `20 log10(|ζ_j| / √reference_power) > threshold_db`; `zeta`
/// is the per-sample normalised correlation `Ψ⊥ᴴ e / N`.
pub fn prune_select<T: Real>(zeta: &[C<T>], threshold_db: f64, reference_power: T) -> Vec<bool> {
    zeta_db(zeta, reference_power)
        .into_iter()
        .map(|z| z > threshold_db)
        .collect()
}

pub fn zeta_db<T: Real>(zeta: &[C<T>], reference_power: T) -> Vec<f64> {
    zeta.iter()
        .map(|z| to_f64(db10(z.norm_sqr() / reference_power)))
        .collect()
}

/// Error power `D_e = Σ|e|²/N` against `Σ|ζ_j|²` with `ζ` normalised per
/// sample.
pub fn distortion_power_identity<T: Real>(zeta: &[C<T>], e: &IqSignal<T>) -> (T, T, T) {
    let lhs = e.power();
    let rhs: T = zeta.iter().map(|z| z.norm_sqr()).sum();
    let gap = if lhs > T::zero() {
        (lhs - rhs).abs() / lhs
    } else {
        rhs
    };
    (lhs, rhs, gap)
}

/// Statistics the learner needs for its update rule.
enum Preconditioner<T: Real> {
    Covariance(Covariance<T>),
    Whitener(Whitener<T>),
}

/// Closed-loop learning. Returns the learnt model and the per-iteration
/// trace.
pub fn learn<T: Real, S: ClosedLoopSource<T> + ?Sized>(
    source: &mut S,
    spec: &BasisSpec<T>,
    cfg: &LearnConfig,
    init: Option<&DpdModel<T>>,
) -> Result<(DpdModel<T>, Vec<IterationRecord>)> {
    let ev = BasisEvaluator::new(spec)?;
    let b = ev.width();
    let total = b * ev.num_regions();
    cfg.validate(total)?;

    let stats = source.statistics_input(cfg.statistics_length.unwrap_or(cfg.block_size))?;
    let stats_bm = basis_matrix(&ev, spec, &stats);
    let pre = match cfg.rule {
        LearningRule::SelfOrthogonalized => Preconditioner::Covariance(covariance_from_matrix(&stats_bm, cfg.loading)?),
        LearningRule::OrthogonalBfs => Preconditioner::Whitener(whitener_from_matrix(&stats_bm, cfg.loading)?),
    };
    drop(stats_bm);

    let mut model = match init {
        Some(m) => {
            if m.spec != *spec {
                return Err(Error::config("initial model was built for a different basis"));
            }
            m.to_native()
        }
        None => DpdModel::zero(spec.clone())?,
    };
    let held_gain = init.map(|m| m.ghat);
    if let Preconditioner::Whitener(w) = &pre {
        model.gamma = w.to_orthogonal(&model.gamma);
        model.orthogonal_domain = true;
        model.whitener = Some(w.clone());
    }

    let mut trace: Vec<IterationRecord> = Vec::with_capacity(cfg.iterations);
    let mu: T = lit(cfg.mu);
    let mut ghat = held_gain.unwrap_or(C::new(T::zero(), T::zero()));
    for i in 0..cfg.iterations {
        let a1 = source.next_input(i, cfg.block_size)?;
        let x = predistort(&model, &a1)?;
        let z = source.transmit(&x)?;
        check_same_len(&a1, &z, "closed-loop observation")?;
        let fresh_gain = cfg.gain_policy == GainPolicy::PerBlock || (i == 0 && held_gain.is_none());
        if fresh_gain {
            ghat = estimate_gain(&a1, &z)?;
        }
        if ghat.norm() == T::zero() {
            return Err(Error::ZeroEnergy);
        }
        let e = error_signal(&z, &a1, ghat)?;
        let pe = e.power();
        let pz = z.power();
        let pa = a1.power();
        let error_power_dbc = to_f64(db10(pe / pz));
        let nmse_db = to_f64(db10(pe / (ghat.norm_sqr() * pa)));

        let bm = basis_matrix(&ev, spec, &a1);
        let n = count::<T>(bm.rows);
        let g: Vec<C<T>> = bm.adjoint_mul(&e.samples).into_iter().map(|v| v / n).collect();
        let scale = C::new(mu, T::zero()) / ghat;

        let reference = ghat.norm_sqr() * pa;
        let zeta_record;
        match &pre {
            Preconditioner::Covariance(cov) => {
                zeta_record = zeta_db(&g, reference);
                let step = cov.solve(&g);
                for (gm, s) in model.gamma.iter_mut().zip(step) {
                    *gm = *gm - s * scale;
                }
            }
            Preconditioner::Whitener(w) => {
                let zeta = orthogonal_correlation(w, &g);
                zeta_record = zeta_db(&zeta, reference);
                if let Some(th) = cfg.prune_threshold_db {
                    let sel = prune_select(&zeta, th, reference);
                    if i == 0 {
                        model.pd_mask = sel.clone();
                    }
                    model.active_mask = model.pd_mask.iter().zip(&sel).map(|(&p, &s)| p && s).collect();
                }
                for ((gm, z), &act) in model.gamma.iter_mut().zip(&zeta).zip(&model.active_mask) {
                    if act {
                        *gm = *gm - z * scale;
                    }
                }
            }
        }
        model.ghat = ghat;
        trace.push(IterationRecord {
            iteration: i,
            error_power_dbc,
            nmse_db,
            active_bf_count: model.active_count(),
            zeta_db: zeta_record,
        });
        if i >= 3 {
            let rise = trace[i].error_power_dbc - trace[i - 3].error_power_dbc;
            if rise > DIVERGENCE_RISE_DB {
                return Err(Error::Divergence {
                    iteration: i,
                    rise_db: rise,
                    trace,
                });
            }
        }
        if !model.gamma.iter().all(|g| g.re.is_finite() && g.im.is_finite()) {
            return Err(Error::Divergence {
                iteration: i,
                rise_db: f64::INFINITY,
                trace,
            });
        }
    }
    Ok((model, trace))
}

fn basis_matrix<T: Real>(ev: &BasisEvaluator<T>, spec: &BasisSpec<T>, x: &IqSignal<T>) -> BasisMatrix<T> {
    let mut values = vec![];
    let region = ev.eval_rows(&x.samples, 0, x.len(), &mut values);
    BasisMatrix {
        spec: spec.clone(),
        rows: x.len(),
        width: ev.width(),
        num_regions: ev.num_regions(),
        values,
        region,
        orthogonalized: false,
        whitener: None,
    }
}

/// `ζ⊥ = Tᴴ g` per region block.
pub fn orthogonal_correlation<T: Real>(w: &Whitener<T>, g: &[C<T>]) -> Vec<C<T>> {
    let b = w.width();
    w.blocks
        .iter()
        .enumerate()
        .flat_map(|(k, blk)| blk.upper.adjoint_mul_vec(&g[k * b..(k + 1) * b]))
        .collect()
}

/// Writes the trace as CSV.
pub fn write_trace_csv(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "iteration,error_power_dbc,nmse_db,active_bf_count")?;
    for r in trace {
        writeln!(
            f,
            "{},{:.6},{:.6},{}",
            r.iteration, r.error_power_dbc, r.nmse_db, r.active_bf_count
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
struct ModelHeader<T: Real> {
    spec: BasisSpec<T>,
    ghat: [f64; 2],
    orthogonal_domain: bool,
    active_mask: Vec<bool>,
    pd_mask: Vec<bool>,
    coefficients: usize,
    whitener_blocks: usize,
    whitener_width: usize,
}

/// Single-file model format: magic, little-endian `u64` header length,
/// JSON header, then `f64` I/Q pairs for `Γ` followed by each whitener
/// block (`L` then `T`, row-major).
pub fn encode_model<T: Real>(model: &DpdModel<T>) -> Result<Vec<u8>> {
    model.validate()?;
    let (blocks, width) = model
        .whitener
        .as_ref()
        .map_or((0, 0), |w| (w.blocks.len(), w.width()));
    let header = ModelHeader {
        spec: model.spec.clone(),
        ghat: [to_f64(model.ghat.re), to_f64(model.ghat.im)],
        orthogonal_domain: model.orthogonal_domain,
        active_mask: model.active_mask.clone(),
        pd_mask: model.pd_mask.clone(),
        coefficients: model.gamma.len(),
        whitener_blocks: blocks,
        whitener_width: width,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&encode_iq(&model.gamma));
    if let Some(w) = &model.whitener {
        for blk in &w.blocks {
            out.extend_from_slice(&encode_iq(blk.lower.as_slice()));
            out.extend_from_slice(&encode_iq(blk.upper.as_slice()));
        }
    }
    Ok(out)
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<DpdModel<T>> {
    let bad = |m: &str| Error::Format(format!("model file: {m}"));
    if bytes.len() < 15 || &bytes[..7] != MODEL_MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
    let body = &bytes[15..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: ModelHeader<T> = serde_json::from_slice(&body[..hlen])?;
    let payload = decode_iq::<T>(&body[hlen..])?;
    let b = header.whitener_width;
    let need = header.coefficients + header.whitener_blocks * 2 * b * b;
    if payload.len() != need {
        return Err(bad(&format!("payload has {} values, expected {need}", payload.len())));
    }
    let gamma = payload[..header.coefficients].to_vec();
    let whitener = if header.whitener_blocks > 0 {
        let mut blocks = vec![];
        let mut off = header.coefficients;
        for _ in 0..header.whitener_blocks {
            let lower = CMatrix::from_rows(b, b, payload[off..off + b * b].to_vec())?;
            off += b * b;
            let upper = CMatrix::from_rows(b, b, payload[off..off + b * b].to_vec())?;
            off += b * b;
            blocks.push(WhitenerBlock { lower, upper });
        }
        Some(Whitener { blocks })
    } else {
        None
    };
    let model = DpdModel {
        gamma,
        spec: header.spec,
        ghat: Complex::new(lit(header.ghat[0]), lit(header.ghat[1])),
        orthogonal_domain: header.orthogonal_domain,
        whitener,
        active_mask: header.active_mask,
        pd_mask: header.pd_mask,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model<T: Real>(path: &Path, model: &DpdModel<T>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model<T: Real>(path: &Path) -> Result<DpdModel<T>> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_sim::{ArrayPlant, PaModel};
    use crate::basis::build_matrix;
    use crate::scalar::cplx;
    use crate::waveform::clip_magnitude;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(n: usize, seed: u64, rms: f64) -> IqSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rms * 0.5f64.sqrt();
        IqSignal::new(
            (0..n)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    cplx::<f64>(a * s, b * s)
                })
                .collect(),
            1.0,
        )
        .unwrap()
    }

    struct PlantSource {
        plant: ArrayPlant<f64>,
        seed: u64,
        rms: f64,
    }

    impl ClosedLoopSource<f64> for PlantSource {
        fn next_input(&mut self, iteration: usize, len: usize) -> Result<IqSignal<f64>> {
            // PAPR-limited like a crest-factor-reduced waveform.
            let g = gauss(len, self.seed.wrapping_add(iteration as u64), self.rms);
            Ok(IqSignal::from_parts(clip_magnitude(&g.samples, 2.2 * self.rms), 1.0))
        }
        fn transmit(&mut self, x: &IqSignal<f64>) -> Result<IqSignal<f64>> {
            let out = self.plant.array_forward(x)?;
            self.plant.observation_receive(&out.per_element, None)
        }
    }

    #[test]
    fn zero_model_is_identity() {
        let m = DpdModel::zero(BasisSpec::<f64>::memory_poly(5, 2)).unwrap();
        let a = gauss(100, 1, 1.0);
        assert_eq!(predistort(&m, &a).unwrap(), a);
    }

    #[test]
    fn cubic_coefficient_hand_expansion() {
        let mut m = DpdModel::zero(BasisSpec::<f64>::memoryless(3)).unwrap();
        let c = cplx::<f64>(-0.2, 0.05);
        m.gamma[1] = c;
        let a = gauss(64, 2, 1.0);
        let y = predistort(&m, &a).unwrap();
        for (x, v) in a.samples.iter().zip(&y.samples) {
            assert!((v - (x + c * x * x.norm_sqr())).norm() < 1e-15);
        }
    }

    #[test]
    fn region_two_only_leaves_region_one_untouched() {
        let p = RegionPartition::from_boundaries(vec![0.0, 0.7, 10.0]).unwrap();
        let mut m = DpdModel::zero(BasisSpec::memoryless(3).with_partition(p)).unwrap();
        m.gamma[2] = cplx::<f64>(0.1, 0.0);
        m.gamma[3] = cplx::<f64>(-0.1, 0.1);
        let a = gauss(500, 3, 1.0);
        let y = predistort(&m, &a).unwrap();
        for (x, v) in a.samples.iter().zip(&y.samples) {
            if x.norm() < 0.7 {
                assert_eq!(x, v);
            } else {
                assert_ne!(x, v);
            }
        }
    }

    #[test]
    fn gain_estimates() {
        let a = gauss(1000, 4, 1.0);
        assert!((estimate_gain(&a, &a.scaled(cplx::<f64>(2.0, 0.0))).unwrap() - cplx::<f64>(2.0, 0.0)).norm() < 1e-12);
        assert!((estimate_gain(&a, &a.scaled(cplx::<f64>(1.0, 1.0))).unwrap() - cplx::<f64>(1.0, 1.0)).norm() < 1e-12);
        // Orthogonal residual: remove the projection of noise onto a.
        let d = gauss(1000, 5, 0.3);
        let k = inner(&a.samples, &d.samples) / inner(&a.samples, &a.samples);
        let z = IqSignal::from_parts(
            a.samples.iter().zip(&d.samples).map(|(x, y)| x + (y - k * x)).collect(),
            1.0,
        );
        assert!((estimate_gain(&a, &z).unwrap() - cplx::<f64>(1.0, 0.0)).norm() < 1e-10);
        let zero = IqSignal::from_parts(vec![cplx::<f64>(0.0, 0.0); 3], 1.0);
        assert!(matches!(estimate_gain(&zero, &zero), Err(Error::ZeroEnergy)));
    }

    #[test]
    fn error_signal_is_distortion() {
        let a = gauss(100, 6, 1.0);
        let d = gauss(100, 7, 0.1);
        let g = cplx::<f64>(0.8, 0.3);
        let z = IqSignal::from_parts(a.samples.iter().zip(&d.samples).map(|(x, y)| g * x + y).collect(), 1.0);
        let e = error_signal(&z, &a, g).unwrap();
        for (u, v) in e.samples.iter().zip(&d.samples) {
            assert!((u - v).norm() < 1e-15);
        }
    }

    #[test]
    fn alignment_recovers_delay_and_phase() {
        let r = gauss(2000, 8, 1.0);
        let ph = cplx::<f64>(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2);
        let mut m = vec![cplx::<f64>(0.0, 0.0); 7];
        m.extend(r.samples[..1993].iter().map(|v| v * ph));
        let al = align(&r, &IqSignal::from_parts(m, 1.0)).unwrap();
        assert_eq!(al.delay, 7);
        assert!((al.phase - ph).norm() < 1e-6);
        let noise = gauss(2000, 9, 1.0);
        assert!(matches!(align(&r, &noise), Err(Error::Alignment { .. })));
    }

    #[test]
    fn one_step_update_algebra() {
        // With e = Ψ⊥ c exactly, one orthogonal-rule step moves Γ⊥ by -μ c / Ĝ.
        let a = gauss(4000, 10, 1.0);
        let spec = BasisSpec::memoryless(5);
        let bm = build_matrix(&spec, &a, 0, a.len()).unwrap();
        let w = whitener_from_matrix(&bm, 0.0).unwrap();
        let o = bm.whiten_with(&w).unwrap();
        let c = [cplx::<f64>(0.0, 0.0), cplx::<f64>(0.01, -0.02), cplx::<f64>(0.003, 0.001)];
        let e = o.mul(&c);
        let g: Vec<C<f64>> = bm.adjoint_mul(&e).into_iter().map(|v| v / 4000.0).collect();
        let zeta = orthogonal_correlation(&w, &g);
        for (z, want) in zeta.iter().zip(&c) {
            assert!((z - want).norm() < 1e-10);
        }
        let (lhs, rhs, gap) = distortion_power_identity(&zeta, &IqSignal::from_parts(e, 1.0));
        assert!(gap < 1e-6, "{lhs} {rhs}");
    }

    #[test]
    fn identity_detects_unspanned_error() {
        let zeta = [cplx::<f64>(0.1, 0.0)];
        let e = IqSignal::from_parts(vec![cplx::<f64>(0.2, 0.0); 10], 1.0);
        let (l, r, _) = distortion_power_identity(&zeta, &e);
        assert!(l > r);
        let (l, r, _) = distortion_power_identity::<f64>(&[], &IqSignal::from_parts(vec![cplx::<f64>(0.0, 0.0)], 1.0));
        assert_eq!((l, r), (0.0, 0.0));
    }

    #[test]
    fn prune_mask_threshold() {
        let z = [cplx::<f64>(10f64.powf(-30.0 / 20.0), 0.0), cplx::<f64>(0.0, 10f64.powf(-60.0 / 20.0))];
        assert_eq!(prune_select(&z, -50.0, 1.0), vec![true, false]);
        assert_eq!(prune_select(&[cplx::<f64>(0.0, 0.0); 3], -50.0, 1.0), vec![false; 3]);
    }

    #[test]
    fn linear_plant_keeps_zero_coefficients() {
        let mut src = PlantSource {
            plant: ArrayPlant::single(PaModel::linear(cplx::<f64>(0.9, 0.2))),
            seed: 100,
            rms: 0.5,
        };
        let cfg = LearnConfig {
            block_size: 2000,
            iterations: 3,
            ..LearnConfig::default()
        };
        let (m, trace) = learn(&mut src, &BasisSpec::memory_poly(5, 1), &cfg, None).unwrap();
        assert!(trace.iter().all(|r| r.error_power_dbc < -60.0));
        assert!(m.native_gamma().iter().all(|g| g.norm() < 1e-8));
    }

    #[test]
    fn cubic_plant_converges() {
        let plant = ArrayPlant::single(PaModel::memoryless(&[cplx::<f64>(1.0, 0.0), cplx::<f64>(-0.03, 0.012)]));
        for rule in [LearningRule::OrthogonalBfs, LearningRule::SelfOrthogonalized] {
            let mut src = PlantSource {
                plant: plant.clone(),
                seed: 200,
                rms: 0.5,
            };
            let cfg = LearnConfig {
                mu: 0.5,
                block_size: 5000,
                iterations: 10,
                rule,
                ..LearnConfig::default()
            };
            let (_, trace) = learn(&mut src, &BasisSpec::memoryless(7), &cfg, None).unwrap();
            for w in trace.windows(2) {
                assert!(w[1].error_power_dbc < w[0].error_power_dbc + 1e-9, "{rule:?} {:?}", trace.iter().map(|r| r.error_power_dbc).collect::<Vec<_>>());
            }
            assert!(trace[0].nmse_db - trace[9].nmse_db >= 20.0, "{rule:?}");
        }
    }

    #[test]
    fn orthogonal_and_native_models_predistort_identically() {
        let a = gauss(5000, 11, 1.0);
        let spec = BasisSpec::memory_poly(5, 1);
        let bm = build_matrix(&spec, &a, 0, a.len()).unwrap();
        let w = whitener_from_matrix(&bm, COVARIANCE_LOADING).unwrap();
        let go: Vec<C<f64>> = (0..6).map(|i| cplx::<f64>(0.01 * i as f64, -0.003)).collect();
        let mut m = DpdModel::zero(spec).unwrap();
        m.gamma = go;
        m.orthogonal_domain = true;
        m.whitener = Some(w);
        let y1 = predistort(&m, &a).unwrap();
        let y2 = predistort(&m.to_native(), &a).unwrap();
        let num: f64 = y1.samples.iter().zip(&y2.samples).map(|(u, v)| (u - v).norm_sqr()).sum();
        let den: f64 = y1.samples.iter().map(|u| u.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        // A plant whose gain flips sign after the first block defeats a held gain.
        struct Flip(usize);
        impl ClosedLoopSource<f64> for Flip {
            fn next_input(&mut self, i: usize, len: usize) -> Result<IqSignal<f64>> {
                Ok(gauss(len, 300u64.wrapping_add(i as u64), 1.0))
            }
            fn transmit(&mut self, x: &IqSignal<f64>) -> Result<IqSignal<f64>> {
                self.0 += 1;
                let g = if self.0 > 1 { -1.0 } else { 1.0 };
                Ok(IqSignal::from_parts(
                    x.samples.iter().map(|v| (v - v * v.norm_sqr() * 0.1) * g).collect(),
                    1.0,
                ))
            }
        }
        let cfg = LearnConfig {
            mu: 1.9,
            block_size: 1000,
            iterations: 12,
            ..LearnConfig::default()
        };
        match learn(&mut Flip(0), &BasisSpec::memoryless(3), &cfg, None) {
            Err(Error::Divergence { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn model_file_round_trip() {
        let a = gauss(3000, 12, 1.0);
        let p = RegionPartition::from_boundaries(vec![0.0, 0.8, 9.0]).unwrap();
        let spec = BasisSpec::memory_poly(3, 1).with_partition(p);
        let bm = build_matrix(&spec, &a, 0, a.len()).unwrap();
        let mut m = DpdModel::zero(spec).unwrap();
        m.whitener = Some(whitener_from_matrix(&bm, COVARIANCE_LOADING).unwrap());
        m.orthogonal_domain = true;
        m.gamma[3] = cplx::<f64>(0.25, -1.5);
        m.pd_mask[5] = false;
        m.ghat = cplx::<f64>(0.9, -0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pwdpd");
        save_model(&path, &m).unwrap();
        assert_eq!(load_model::<f64>(&path).unwrap(), m);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(decode_model::<f64>(&bytes).is_err());
    }

    #[test]
    fn trace_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rec = IterationRecord {
            iteration: 0,
            error_power_dbc: -20.0,
            nmse_db: -19.5,
            active_bf_count: 4,
            zeta_db: vec![],
        };
        write_trace_csv(&p, &[rec]).unwrap();
        let s = fs::read_to_string(&p).unwrap();
        assert!(s.starts_with("iteration,error_power_dbc,nmse_db,active_bf_count\n0,-20.000000,-19.500000,4"));
    }
}
