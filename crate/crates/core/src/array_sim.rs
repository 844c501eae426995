//! Nonlinear active-array transmitter simulator.
//!
//! Each element is a behavioral PA driven by `w_i a1(n)`. The dual-input
//! form adds load-modulation terms driven by the coupled wave
//! `c_i(n) = (f_i ⋆ a1)(n)` with `f_i = Σ_l w_l λ_il ⋆ μ_l`, where the self
//! coupling `λ_ii` is a unit impulse and off-diagonal filters are scaled by
//! `coupling_strength` and by the scan factor `1 + sin²θ` of the current
//! steering angle.
//!
//! The array is a uniform linear array with half-wavelength spacing:
//! steering uses `w_i = e^{-jπ i sinθ}` and the far field towards `φ` sees
//! `h_i(φ) = e^{jπ i sinφ}`.
//!
//! An optional Rapp limiter `b / (1 + (|b|/S)^{2k})^{1/(2k)}` bounds every
//! element output by `S`.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::czero;
use crate::scalar::{count, expj, lit, mean_power, Real, C};
use crate::signal::IqSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaKind {
    MemorylessPoly,
    MemoryPoly,
    DohertyLike,
    DualInputLumped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Saturation<T: Real> {
    /// Output amplitude ceiling.
    pub level: T,
    /// Rapp smoothness `k`.
    pub smoothness: T,
}

/// Peak-amplifier branch of the Doherty-like model. The output is
/// `(1-s) y_main + s y_peak` with `s` a logistic step in `|a_1i|` centred on
/// `crossover` with transition width `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DohertyBranch<T: Real> {
    pub peak_alpha: Vec<Vec<C<T>>>,
    pub crossover: T,
    pub width: T,
}

/// Behavioral PA model. Tables are indexed by polynomial index `p`
/// (order `2p+1`) and memory taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PaModel<T: Real> {
    pub kind: PaKind,
    /// `alpha[p][m1]`.
    pub alpha: Vec<Vec<C<T>>>,
    /// `beta0[m2]`.
    #[serde(default)]
    pub beta0: Vec<C<T>>,
    /// `beta[p-1][m4][m3]`, p ≥ 1.
    #[serde(default)]
    pub beta: Vec<Vec<Vec<C<T>>>>,
    /// `zeta[p-1][m6][m5]`, p ≥ 1.
    #[serde(default)]
    pub zeta: Vec<Vec<Vec<C<T>>>>,
    #[serde(default)]
    pub saturation: Option<Saturation<T>>,
    #[serde(default)]
    pub doherty: Option<DohertyBranch<T>>,
}

impl<T: Real> PaModel<T> {
    /// Memoryless polynomial from odd-order coefficients `[α1, α3, α5, ...]`.
    pub fn memoryless(coefs: &[C<T>]) -> Self {
        Self {
            kind: PaKind::MemorylessPoly,
            alpha: coefs.iter().map(|&c| vec![c]).collect(),
            beta0: vec![],
            beta: vec![],
            zeta: vec![],
            saturation: None,
            doherty: None,
        }
    }

    /// Memory polynomial from `alpha[p][m]`.
    pub fn memory_poly(alpha: Vec<Vec<C<T>>>) -> Self {
        Self {
            kind: PaKind::MemoryPoly,
            alpha,
            ..Self::memoryless(&[])
        }
    }

    pub fn linear(gain: C<T>) -> Self {
        Self::memoryless(&[gain])
    }

    pub fn max_order(&self) -> usize {
        2 * self.alpha.len().max(1) - 1
    }

    pub fn memory_depth(&self) -> usize {
        self.alpha.iter().map(|r| r.len()).max().unwrap_or(1).saturating_sub(1)
    }

    /// Output ceiling, if the model is bounded.
    pub fn ceiling(&self) -> Option<T> {
        self.saturation.as_ref().map(|s| s.level)
    }

    fn uses_coupling(&self) -> bool {
        self.kind == PaKind::DualInputLumped
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::config("PA model needs at least a linear coefficient"));
        }
        if let Some(s) = &self.saturation {
            if !(s.level > T::zero() && s.smoothness > T::zero()) {
                return Err(Error::config("saturation level and smoothness must be positive"));
            }
        }
        if self.kind == PaKind::DohertyLike && self.doherty.is_none() {
            return Err(Error::config("DohertyLike model needs a peak branch"));
        }
        if self.kind == PaKind::MemorylessPoly && self.memory_depth() > 0 {
            return Err(Error::config("MemorylessPoly model must not have memory taps"));
        }
        Ok(())
    }
}

/// Evaluates `Σ_p Σ_m α[p][m] x(n-m) |x(n-m)|^{2p}` at every `n`.
fn memory_poly_eval<T: Real>(alpha: &[Vec<C<T>>], x: &[C<T>]) -> Vec<C<T>> {
    let n = x.len();
    let env: Vec<T> = x.iter().map(|s| s.norm_sqr()).collect();
    let taps = alpha.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut out = vec![czero(); n];
    for t in 0..n {
        let mut acc = czero();
        for m in 0..taps.min(t + 1) {
            let xs = x[t - m];
            let e = env[t - m];
            let mut pw = T::one();
            for row in alpha {
                if let Some(&a) = row.get(m) {
                    acc = acc + a * xs * pw;
                }
                pw = pw * e;
            }
        }
        out[t] = acc;
    }
    out
}

fn fir<T: Real>(h: &[C<T>], x: &[C<T>]) -> Vec<C<T>> {
    let mut y = vec![czero(); x.len()];
    for (t, yt) in y.iter_mut().enumerate() {
        let mut acc = czero();
        for (k, &hk) in h.iter().enumerate().take(t + 1) {
            acc = acc + hk * x[t - k];
        }
        *yt = acc;
    }
    y
}

#[inline]
fn rapp<T: Real>(b: C<T>, sat: &Saturation<T>) -> C<T> {
    let a = b.norm();
    if a == T::zero() {
        return b;
    }
    let two_k = sat.smoothness + sat.smoothness;
    let d = (T::one() + (a / sat.level).powf(two_k)).powf(T::one() / two_k);
    b / d
}

/// The simulated array transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ArrayPlant<T: Real> {
    pub elements: Vec<PaModel<T>>,
    /// Beamforming weights `w_i`.
    pub weights: Vec<C<T>>,
    /// Unscaled crosstalk impulse responses `λ_il`; the diagonal is ignored
    /// (the self term is a unit impulse).
    pub coupling: Vec<Vec<Vec<C<T>>>>,
    /// Branch filters `μ_l`.
    pub branch_filters: Vec<Vec<C<T>>>,
    /// LOS channel `h_i` towards the intended user.
    pub channel: Vec<C<T>>,
    pub coupling_strength: T,
    /// Current steering angle in degrees.
    #[serde(default)]
    pub steering_deg: T,
    /// Input drive in dB applied to `a1` before the elements.
    #[serde(default)]
    pub drive_db: T,
}

impl<T: Real> ArrayPlant<T> {
    /// Single element with unit weight and channel.
    pub fn single(pa: PaModel<T>) -> Self {
        let one = C::new(T::one(), T::zero());
        Self {
            elements: vec![pa],
            weights: vec![one],
            coupling: vec![vec![vec![]]],
            branch_filters: vec![vec![one]],
            channel: vec![one],
            coupling_strength: T::zero(),
            steering_deg: T::zero(),
            drive_db: T::zero(),
        }
    }

    /// `L` elements at broadside with nearest-neighbour coupling filters of
    /// magnitude `1/|i-l|` for `|i-l| ≤ 2` (two taps, the second at half the
    /// first, phase `-π/2·|i-l|`).
    pub fn uniform(elements: Vec<PaModel<T>>, coupling_strength: T) -> Self {
        let l = elements.len();
        let one = C::new(T::one(), T::zero());
        let coupling = (0..l)
            .map(|i| {
                (0..l)
                    .map(|k| {
                        let d = i.abs_diff(k);
                        if d == 0 || d > 2 {
                            vec![]
                        } else {
                            let mag = T::one() / count::<T>(d);
                            let ph = expj(-T::FRAC_PI_2() * count::<T>(d));
                            vec![ph * mag, ph * (mag * lit::<T>(0.5))]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut p = Self {
            elements,
            weights: vec![one; l],
            coupling,
            branch_filters: vec![vec![one]; l],
            channel: vec![one; l],
            coupling_strength,
            steering_deg: T::zero(),
            drive_db: T::zero(),
        };
        p = p.steer(T::zero());
        p
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.elements.len();
        if l == 0 {
            return Err(Error::config("array needs at least one element"));
        }
        if self.weights.len() != l
            || self.channel.len() != l
            || self.branch_filters.len() != l
            || self.coupling.len() != l
            || self.coupling.iter().any(|r| r.len() != l)
        {
            return Err(Error::config("array tables must all have L entries"));
        }
        if self.weights.iter().any(|w| !(w.norm() <= lit(1e3))) {
            return Err(Error::config("beamforming weight magnitude out of bounds"));
        }
        for e in &self.elements {
            e.validate()?;
        }
        Ok(())
    }

    /// Scan-dependent multiplier applied to the off-diagonal coupling.
    pub fn scan_factor(&self) -> T {
        let s = (self.steering_deg.to_radians()).sin();
        T::one() + s * s
    }

    fn drive(&self) -> T {
        lit::<T>(10.0).powf(self.drive_db / lit(20.0))
    }

    /// Coupled waves `c_i = (f_i ⋆ a1)` for every element.
    fn coupled_waves(&self, a1: &[C<T>]) -> Vec<Vec<C<T>>> {
        let l = self.elements.len();
        let k = self.coupling_strength * self.scan_factor();
        let branch: Vec<Vec<C<T>>> = self.branch_filters.iter().map(|m| fir(m, a1)).collect();
        (0..l)
            .map(|i| {
                let mut c: Vec<C<T>> = branch[i].iter().map(|v| v * self.weights[i]).collect();
                if k != T::zero() {
                    for (li, taps) in self.coupling[i].iter().enumerate() {
                        if li == i || taps.is_empty() {
                            continue;
                        }
                        let scaled: Vec<C<T>> = taps.iter().map(|t| t * self.weights[li] * k).collect();
                        for (cv, v) in c.iter_mut().zip(fir(&scaled, &branch[li])) {
                            *cv = *cv + v;
                        }
                    }
                }
                c
            })
            .collect()
    }

    fn element_output(&self, i: usize, a1: &[C<T>], coupled: Option<&[C<T>]>) -> Vec<C<T>> {
        let pa = &self.elements[i];
        let w = self.weights[i];
        let x: Vec<C<T>> = a1.iter().map(|s| s * w).collect();
        let mut b = match (&pa.kind, &pa.doherty) {
            (PaKind::DohertyLike, Some(d)) => {
                let main = memory_poly_eval(&pa.alpha, &x);
                let peak = memory_poly_eval(&d.peak_alpha, &x);
                x.iter()
                    .zip(main.iter().zip(&peak))
                    .map(|(xs, (m, p))| {
                        let s = T::one() / (T::one() + (-(xs.norm() - d.crossover) / d.width).exp());
                        m * (T::one() - s) + p * s
                    })
                    .collect()
            }
            _ => memory_poly_eval(&pa.alpha, &x),
        };
        if pa.uses_coupling() {
            if let Some(c) = coupled {
                add_dual_input_terms(pa, w, a1, c, &mut b);
            }
        }
        if let Some(sat) = &pa.saturation {
            for v in &mut b {
                *v = rapp(*v, sat);
            }
        }
        b
    }

    fn prepare_input(&self, a1: &IqSignal<T>) -> Vec<C<T>> {
        let g = self.drive();
        a1.samples.iter().map(|s| s * g).collect()
    }

    /// Output `b_2i(n)` of one element.
    pub fn pa_forward(&self, element: usize, a1: &IqSignal<T>) -> Result<IqSignal<T>> {
        if element >= self.elements.len() {
            return Err(Error::Index {
                index: element,
                len: self.elements.len(),
            });
        }
        if a1.is_empty() {
            return Err(Error::EmptySignal("pa_forward"));
        }
        let x = self.prepare_input(a1);
        let coupled = if self.elements[element].uses_coupling() {
            Some(self.coupled_waves(&x))
        } else {
            None
        };
        let out = self.element_output(element, &x, coupled.as_ref().map(|c| c[element].as_slice()));
        Ok(IqSignal::from_parts(out, a1.sample_rate))
    }

    /// All element outputs and the OTA combination `r = Σ h_i b_2i`.
    pub fn array_forward(&self, a1: &IqSignal<T>) -> Result<ArrayOutput<T>> {
        if a1.is_empty() {
            return Err(Error::EmptySignal("array_forward"));
        }
        let x = self.prepare_input(a1);
        let coupled = if self.elements.iter().any(|e| e.uses_coupling()) {
            Some(self.coupled_waves(&x))
        } else {
            None
        };
        let per_element: Vec<IqSignal<T>> = (0..self.elements.len())
            .map(|i| {
                IqSignal::from_parts(
                    self.element_output(i, &x, coupled.as_ref().map(|c| c[i].as_slice())),
                    a1.sample_rate,
                )
            })
            .collect();
        let combined = combine(&per_element, &self.channel, a1.sample_rate);
        Ok(ArrayOutput {
            per_element,
            combined,
        })
    }

    /// Phase-aligned observation `z = Σ e^{-j∠w_i} b_2i`, optionally with a
    /// circular Gaussian noise floor `floor_dbc` below the observed power.
    pub fn observation_receive(
        &self,
        per_element: &[IqSignal<T>],
        noise: Option<NoiseFloor>,
    ) -> Result<IqSignal<T>> {
        if per_element.len() != self.elements.len() {
            return Err(Error::LengthMismatch {
                what: "per-element outputs vs array size",
                left: per_element.len(),
                right: self.elements.len(),
            });
        }
        let rot: Vec<C<T>> = self
            .weights
            .iter()
            .map(|w| {
                if w.norm() > T::zero() {
                    (w / w.norm()).conj()
                } else {
                    C::new(T::one(), T::zero())
                }
            })
            .collect();
        let sr = per_element.first().map(|s| s.sample_rate).unwrap_or(1.0);
        let mut z = combine(per_element, &rot, sr);
        if let Some(nf) = noise {
            add_noise(&mut z.samples, nf);
        }
        Ok(z)
    }

    /// Phase-only steering towards `angle_deg`, keeping the main beam aligned
    /// with the receiver (`h_i = e^{-j∠w_i}`). PA tables are untouched.
    pub fn steer(&self, angle_deg: T) -> Self {
        let s = angle_deg.to_radians().sin();
        let mut p = self.clone();
        p.weights = (0..self.elements.len())
            .map(|i| expj(-T::PI() * count::<T>(i) * s))
            .collect();
        p.channel = p.weights.iter().map(|w| w.conj()).collect();
        p.steering_deg = angle_deg;
        p
    }

    /// Far-field signal towards `angle_deg` given the element outputs.
    pub fn far_field(&self, per_element: &[IqSignal<T>], angle_deg: T) -> IqSignal<T> {
        let s = angle_deg.to_radians().sin();
        let h: Vec<C<T>> = (0..self.elements.len())
            .map(|i| expj(T::PI() * count::<T>(i) * s))
            .collect();
        let sr = per_element.first().map(|s| s.sample_rate).unwrap_or(1.0);
        combine(per_element, &h, sr)
    }

    pub fn with_drive_db(&self, drive_db: T) -> Self {
        Self {
            drive_db,
            ..self.clone()
        }
    }

    pub fn with_coupling_strength(&self, k: T) -> Self {
        Self {
            coupling_strength: k,
            ..self.clone()
        }
    }
}

fn add_dual_input_terms<T: Real>(pa: &PaModel<T>, w: C<T>, a: &[C<T>], c: &[C<T>], b: &mut [C<T>]) {
    let n = a.len();
    let wabs2 = w.norm_sqr();
    let wabs = w.norm();
    let at = |v: &[C<T>], t: usize, m: usize| if t >= m { v[t - m] } else { czero() };
    for t in 0..n {
        let mut acc = czero();
        for (m2, &b0) in pa.beta0.iter().enumerate() {
            acc = acc + b0 * at(c, t, m2);
        }
        for (pi, tab) in pa.beta.iter().enumerate() {
            let p = pi + 1;
            let wp = wabs2.powi(p as i32);
            for (m4, row) in tab.iter().enumerate() {
                let env = at(a, t, m4).norm_sqr().powi(p as i32);
                for (m3, &coef) in row.iter().enumerate() {
                    acc = acc + coef * at(c, t, m3) * (wp * env);
                }
            }
        }
        for (pi, tab) in pa.zeta.iter().enumerate() {
            let p = pi + 1;
            // |w|^{p-1} as printed in the dual-input model.
            let wf = w * w * wabs.powi(p as i32 - 1);
            for (m6, row) in tab.iter().enumerate() {
                let x6 = at(a, t, m6);
                let core = x6 * x6 * x6.norm_sqr().powi(p as i32 - 1);
                for (m5, &coef) in row.iter().enumerate() {
                    acc = acc + coef * wf * at(c, t, m5).conj() * core;
                }
            }
        }
        b[t] = b[t] + acc;
    }
}

fn combine<T: Real>(sigs: &[IqSignal<T>], coefs: &[C<T>], sample_rate: f64) -> IqSignal<T> {
    let n = sigs.first().map(|s| s.len()).unwrap_or(0);
    let mut out = vec![czero(); n];
    for (s, &h) in sigs.iter().zip(coefs) {
        for (o, v) in out.iter_mut().zip(&s.samples) {
            *o = *o + h * v;
        }
    }
    IqSignal::from_parts(out, sample_rate)
}

/// Receiver noise floor relative to the observed signal power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub floor_dbc: f64,
    pub seed: u64,
}

pub fn add_noise<T: Real>(x: &mut [C<T>], nf: NoiseFloor) {
    let p = mean_power(x);
    let sigma = (p * lit::<T>(10f64.powf(nf.floor_dbc / 10.0)) / lit(2.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(nf.seed);
    for v in x.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v = *v + Complex::new(lit::<T>(re), lit::<T>(im)) * sigma;
    }
}

#[derive(Debug, Clone)]
pub struct ArrayOutput<T: Real> {
    pub per_element: Vec<IqSignal<T>>,
    pub combined: IqSignal<T>,
}

/// Named plant presets shipped with the workbench.
pub mod presets {
    use super::*;

    pub const NAMES: &[&str] = &["array8-deep", "array8-backoff", "doherty-n3", "linear"];

    /// Drive of the deep-compression preset, dB.
    pub const ARRAY8_DEEP_DRIVE_DB: f64 = 3.0;
    /// Drive of the backed-off preset, dB.
    pub const ARRAY8_BACKOFF_DRIVE_DB: f64 = -6.0;

    fn c<T: Real>(re: f64, im: f64) -> C<T> {
        Complex::new(lit(re), lit(im))
    }

    /// Nominal element of the 8-element array: memory polynomial of order 5
    /// with three taps on orders 1 and 3, load-modulation terms and a Rapp
    /// limiter.
    pub fn array_element<T: Real>() -> PaModel<T> {
        PaModel {
            kind: PaKind::DualInputLumped,
            alpha: vec![
                vec![c(1.0, 0.0), c(0.06, -0.03), c(-0.015, 0.01)],
                vec![c(-0.01, 0.06), c(0.004, -0.003), c(-0.001, 0.001)],
                vec![c(-0.0002, 0.0003)],
            ],
            beta0: vec![c(0.02, 0.01)],
            beta: vec![vec![vec![c(-0.006, 0.012), c(0.002, 0.0)], vec![c(0.002, -0.001)]]],
            zeta: vec![vec![vec![c(0.004, -0.003)]]],
            saturation: Some(Saturation {
                level: lit(4.5),
                smoothness: lit(1.5),
            }),
            doherty: None,
        }
    }

    /// Perturbs every nonzero coefficient by a uniform complex factor within
    /// `±spread` (relative).
    pub fn spread<T: Real>(pa: &PaModel<T>, spread: f64, rng: &mut ChaCha8Rng) -> PaModel<T> {
        let mut jitter = |v: &C<T>| -> C<T> {
            let a: f64 = rng.random_range(-spread..=spread);
            let b: f64 = rng.random_range(-spread..=spread);
            v * c::<T>(1.0 + a, b)
        };
        let mut out = pa.clone();
        for row in &mut out.alpha {
            for v in row.iter_mut() {
                *v = jitter(v);
            }
        }
        for v in &mut out.beta0 {
            *v = jitter(v);
        }
        for tab in out.beta.iter_mut().chain(out.zeta.iter_mut()) {
            for row in tab.iter_mut() {
                for v in row.iter_mut() {
                    *v = jitter(v);
                }
            }
        }
        out
    }

    pub fn array8<T: Real>(drive_db: f64, coupling_strength: f64) -> ArrayPlant<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x00a8_8a);
        let base = array_element::<T>();
        let elements: Vec<PaModel<T>> = (0..8).map(|_| spread(&base, 0.10, &mut rng)).collect();
        let mut p = ArrayPlant::uniform(elements, lit(coupling_strength));
        for (l, m) in p.branch_filters.iter_mut().enumerate() {
            let ph = 0.3 * l as f64;
            *m = vec![c(1.0, 0.0), c(0.04 * ph.cos(), 0.04 * ph.sin())];
        }
        p.drive_db = lit(drive_db);
        p
    }

    /// Single-element Doherty-like PA: the peak branch switches in near the
    /// RMS envelope, giving a local gain and phase step.
    pub fn doherty<T: Real>() -> ArrayPlant<T> {
        let pa = PaModel {
            kind: PaKind::DohertyLike,
            alpha: vec![
                vec![c(1.0, 0.0), c(0.04, -0.02)],
                vec![c(-0.08, 0.03), c(0.005, 0.0)],
                vec![c(0.004, -0.002)],
            ],
            beta0: vec![],
            beta: vec![],
            zeta: vec![],
            saturation: Some(Saturation {
                level: lit(2.4),
                smoothness: lit(2.0),
            }),
            doherty: Some(DohertyBranch {
                peak_alpha: vec![vec![c(1.02, 0.13), c(0.04, -0.02)], vec![c(-0.02, 0.01)]],
                crossover: lit(0.9),
                width: lit(0.04),
            }),
        };
        ArrayPlant::single(pa)
    }

    pub fn linear<T: Real>() -> ArrayPlant<T> {
        ArrayPlant::single(PaModel::linear(c(1.0, 0.0)))
    }

    pub fn by_name<T: Real>(name: &str) -> Result<ArrayPlant<T>> {
        match name {
            "array8-deep" => Ok(array8(ARRAY8_DEEP_DRIVE_DB, 0.15)),
            "array8-backoff" => Ok(array8(ARRAY8_BACKOFF_DRIVE_DB, 0.15)),
            "doherty-n3" => Ok(doherty()),
            "linear" => Ok(linear()),
            other => Err(Error::config(format!("unknown plant preset '{other}'"))),
        }
    }
}
