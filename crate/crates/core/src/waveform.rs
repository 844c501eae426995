//! NR-like OFDM excitation, crest-factor reduction and PAPR statistics.
//!
//! Subcarrier mapping: the `active_subcarriers` occupy logical indices
//! `-⌊A/2⌋ ..= A-⌊A/2⌋-1` around DC (DC is used, as in NR), mapped onto an
//! IFFT of `fft_size * oversampling` points. Symbols are normalized to unit
//! average power. Each OFDM symbol carries a cyclic prefix of
//! `round(cp_fraction * fft_size * oversampling)` samples; optional WOLA
//! windowing applies raised-cosine ramps of `wola_taper_samples` that overlap
//! inside the next symbol's cyclic prefix, with the last symbol's tail
//! wrapped circularly onto the first.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::czero;
use crate::scalar::{count, db10, lit, mean_power, Real, C};
use crate::signal::IqSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constellation {
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "16QAM")]
    Qam16,
    #[serde(rename = "64QAM")]
    Qam64,
}

impl Constellation {
    /// Unit average power constellation points.
    pub fn points<T: Real>(self) -> Vec<C<T>> {
        let side: usize = match self {
            Constellation::Qpsk => 2,
            Constellation::Qam16 => 4,
            Constellation::Qam64 => 8,
        };
        let levels: Vec<f64> = (0..side).map(|i| 2.0 * i as f64 - (side as f64 - 1.0)).collect();
        let norm = (2.0 * (side * side - 1) as f64 / 3.0).sqrt();
        let mut pts = Vec::with_capacity(side * side);
        for &i in &levels {
            for &q in &levels {
                pts.push(Complex::new(lit(i / norm), lit(q / norm)));
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    /// Hz.
    pub subcarrier_spacing: f64,
    pub fft_size: usize,
    pub active_subcarriers: usize,
    pub oversampling: usize,
    pub num_symbols: usize,
    pub constellation: Constellation,
    #[serde(default = "default_cp_fraction")]
    pub cp_fraction: f64,
    #[serde(default)]
    pub wola_taper_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cp_fraction() -> f64 {
    0.07
}

impl OfdmConfig {
    /// 400 MHz FR2 carrier: 120 kHz spacing, 3168 of 4096 subcarriers,
    /// oversampled five times relative to the FFT rate.
    pub fn nr_fr2_400mhz() -> Self {
        Self {
            subcarrier_spacing: 120e3,
            fft_size: 4096,
            active_subcarriers: 3168,
            oversampling: 5,
            num_symbols: 1,
            constellation: Constellation::Qam64,
            cp_fraction: 0.07,
            wola_taper_samples: 256,
            seed: 1,
        }
    }

    /// Three contiguous 20 MHz carriers at 15 kHz spacing treated as one
    /// 60 MHz allocation.
    pub fn nr_n3_3x20mhz() -> Self {
        Self {
            subcarrier_spacing: 15e3,
            fft_size: 4096,
            active_subcarriers: 3816,
            oversampling: 5,
            num_symbols: 1,
            constellation: Constellation::Qam64,
            cp_fraction: 0.07,
            wola_taper_samples: 256,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.oversampling == 0 || self.num_symbols == 0 {
            return Err(Error::config("fft_size, oversampling and num_symbols must be positive"));
        }
        if self.active_subcarriers == 0 {
            return Err(Error::config("active_subcarriers must be positive"));
        }
        if self.active_subcarriers >= self.fft_size {
            return Err(Error::config(format!(
                "active_subcarriers {} must be below fft_size {}",
                self.active_subcarriers, self.fft_size
            )));
        }
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::config("subcarrier_spacing must be positive"));
        }
        if !(0.0..1.0).contains(&self.cp_fraction) {
            return Err(Error::config("cp_fraction must lie in [0, 1)"));
        }
        if self.wola_taper_samples > self.cp_len() {
            return Err(Error::config("wola_taper_samples must not exceed the cyclic prefix"));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.fft_size as f64 * self.subcarrier_spacing * self.oversampling as f64
    }

    pub fn occupied_bandwidth(&self) -> f64 {
        self.active_subcarriers as f64 * self.subcarrier_spacing
    }

    /// IFFT length including oversampling.
    pub fn ifft_len(&self) -> usize {
        self.fft_size * self.oversampling
    }

    pub fn cp_len(&self) -> usize {
        (self.cp_fraction * self.ifft_len() as f64).round() as usize
    }

    pub fn symbol_len(&self) -> usize {
        self.ifft_len() + self.cp_len()
    }

    /// Logical subcarrier index of active slot `i`.
    pub fn subcarrier_index(&self, i: usize) -> isize {
        i as isize - (self.active_subcarriers / 2) as isize
    }

    /// IFFT bin of active slot `i`.
    pub fn bin(&self, i: usize) -> usize {
        let n = self.ifft_len() as isize;
        self.subcarrier_index(i).rem_euclid(n) as usize
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Transmitted constellation points, `symbols[s][i]` for OFDM symbol `s` and
/// active slot `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid<T: Real> {
    pub symbols: Vec<Vec<C<T>>>,
}

/// Generates an OFDM waveform and returns it with the symbol grid.
pub fn generate_ofdm<T: Real>(cfg: &OfdmConfig) -> Result<(IqSignal<T>, SymbolGrid<T>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts = cfg.constellation.points::<T>();
    let n = cfg.ifft_len();
    let cp = cfg.cp_len();
    let ls = cfg.symbol_len();
    let taper = cfg.wola_taper_samples;
    let total = ls * cfg.num_symbols;
    let norm = T::one() / count::<T>(cfg.active_subcarriers).sqrt();

    let mut planner = FftPlanner::<T>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut out = vec![czero::<T>(); total];
    let mut grid = Vec::with_capacity(cfg.num_symbols);

    // Raised-cosine up ramp; the down ramp is its complement.
    let ramp: Vec<T> = (0..taper)
        .map(|i| {
            let x = (lit::<T>(i as f64) + lit(0.5)) / count::<T>(taper);
            lit::<T>(0.5) * (T::one() - (T::PI() * x).cos())
        })
        .collect();

    for s in 0..cfg.num_symbols {
        let syms: Vec<C<T>> = (0..cfg.active_subcarriers)
            .map(|_| pts[rng.random_range(0..pts.len())])
            .collect();
        let mut buf = vec![czero::<T>(); n];
        for (i, &x) in syms.iter().enumerate() {
            buf[cfg.bin(i)] = x;
        }
        ifft.process(&mut buf);
        for v in &mut buf {
            *v = *v * norm;
        }
        let start = s * ls;
        // Prefix + body.
        for j in 0..ls {
            let src = if j < cp { buf[n - cp + j] } else { buf[j - cp] };
            let w = if j < taper { ramp[j] } else { T::one() };
            out[start + j] = out[start + j] + src * w;
        }
        // Suffix overlapping the next symbol's prefix (circularly).
        for j in 0..taper {
            let w = T::one() - ramp[j];
            let idx = (start + ls + j) % total;
            out[idx] = out[idx] + buf[j] * w;
        }
        grid.push(syms);
    }
    Ok((IqSignal::from_parts(out, cfg.sample_rate()), SymbolGrid { symbols: grid }))
}

/// Ideal receiver: removes the cyclic prefix, takes the FFT and reads the
/// active subcarriers.
pub fn demodulate<T: Real>(sig: &IqSignal<T>, cfg: &OfdmConfig) -> Result<SymbolGrid<T>> {
    cfg.validate()?;
    let n = cfg.ifft_len();
    let cp = cfg.cp_len();
    let ls = cfg.symbol_len();
    if sig.len() < ls * cfg.num_symbols {
        return Err(Error::LengthMismatch {
            what: "signal shorter than the OFDM frame",
            left: sig.len(),
            right: ls * cfg.num_symbols,
        });
    }
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft_forward(n);
    let scale = count::<T>(cfg.active_subcarriers).sqrt() / count::<T>(n);
    let mut symbols = Vec::with_capacity(cfg.num_symbols);
    for s in 0..cfg.num_symbols {
        let start = s * ls + cp;
        let mut buf = sig.samples[start..start + n].to_vec();
        fft.process(&mut buf);
        symbols.push(
            (0..cfg.active_subcarriers)
                .map(|i| buf[cfg.bin(i)] * scale)
                .collect(),
        );
    }
    Ok(SymbolGrid { symbols })
}

/// Limits every sample magnitude to `level`, keeping its phase.
pub fn clip_magnitude<T: Real>(x: &[C<T>], level: T) -> Vec<C<T>> {
    x.iter()
        .map(|&s| {
            let a = s.norm();
            if a > level {
                s * (level / a)
            } else {
                s
            }
        })
        .collect()
}

/// Zeroes all spectral content outside `|f| <= passband_hz / 2` using one
/// FFT over the whole (circular) signal.
pub fn brickwall<T: Real>(x: &[C<T>], sample_rate: f64, passband_hz: f64) -> Vec<C<T>> {
    let n = x.len();
    let mut planner = FftPlanner::<T>::new();
    let mut buf = x.to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = passband_hz / 2.0;
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let f = kk * sample_rate / n as f64;
        if f.abs() > half {
            *v = czero();
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let inv = T::one() / count::<T>(n);
    buf.iter_mut().for_each(|v| *v = *v * inv);
    buf
}

/// Output of [`crest_factor_reduce`].
#[derive(Debug, Clone)]
pub struct CfrResult<T: Real> {
    pub signal: IqSignal<T>,
    /// PAPR at the 1% CCDF point before and after.
    pub papr_before_db: T,
    pub papr_after_db: T,
    pub iterations_run: usize,
}

/// Iterative clipping and filtering.
///
/// Each iteration clips at `target_papr_db` above the current mean power and
/// adds back only the in-band part of the clipping noise (brick-wall
/// projection onto `|f| <= passband_hz / 2`), so no out-of-band content is
/// created. An iteration that would raise the 1% PAPR is rejected and the
/// loop stops.
pub fn crest_factor_reduce<T: Real>(
    sig: &IqSignal<T>,
    target_papr_db: f64,
    iterations: usize,
    passband_hz: f64,
) -> Result<CfrResult<T>> {
    if !(target_papr_db > 0.0) {
        return Err(Error::config("target PAPR must be positive"));
    }
    let p1 = |x: &[C<T>]| papr_at(x, 0.01);
    let before = p1(&sig.samples)?;
    let mut best = sig.samples.clone();
    let mut best_papr = before;
    let mut run = 0;
    for _ in 0..iterations {
        let pm = mean_power(&best);
        let level = (pm * lit::<T>(10f64.powf(target_papr_db / 10.0))).sqrt();
        let clipped = clip_magnitude(&best, level);
        let noise: Vec<C<T>> = clipped.iter().zip(&best).map(|(c, x)| c - x).collect();
        if noise.iter().all(|v| v.norm_sqr() == T::zero()) {
            break;
        }
        let shaped = brickwall(&noise, sig.sample_rate, passband_hz);
        let next: Vec<C<T>> = best.iter().zip(&shaped).map(|(x, n)| x + n).collect();
        let p = p1(&next)?;
        if p > best_papr {
            break;
        }
        best = next;
        best_papr = p;
        run += 1;
    }
    Ok(CfrResult {
        signal: IqSignal::from_parts(best, sig.sample_rate),
        papr_before_db: before,
        papr_after_db: best_papr,
        iterations_run: run,
    })
}

/// PAPR (dB) exceeded by a fraction `p` of samples.
pub fn papr_at<T: Real>(x: &[C<T>], p: f64) -> Result<T> {
    Ok(papr_ccdf_samples(x, &[p])?[0].1)
}

/// Empirical CCDF of the instantaneous-to-mean power ratio.
///
/// For each probability `p` the returned level is the `⌈pN⌉`-th largest
/// normalized power, in dB.
pub fn papr_ccdf<T: Real>(sig: &IqSignal<T>, probabilities: &[f64]) -> Result<Vec<(f64, T)>> {
    papr_ccdf_samples(&sig.samples, probabilities)
}

fn papr_ccdf_samples<T: Real>(x: &[C<T>], probabilities: &[f64]) -> Result<Vec<(f64, T)>> {
    if x.is_empty() {
        return Err(Error::EmptySignal("papr_ccdf"));
    }
    if let Some(p) = probabilities.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::config(format!("probability {p} outside (0, 1]")));
    }
    let mean = mean_power(x);
    if mean <= T::zero() {
        return Err(Error::ZeroEnergy);
    }
    let mut pw: Vec<T> = x.iter().map(|s| s.norm_sqr() / mean).collect();
    pw.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = pw.len();
    Ok(probabilities
        .iter()
        .map(|&p| {
            let k = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
            (p, db10(pw[k]))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use rand_distr::{Distribution, StandardNormal};

    fn small_cfg() -> OfdmConfig {
        OfdmConfig {
            subcarrier_spacing: 15e3,
            fft_size: 64,
            active_subcarriers: 52,
            oversampling: 1,
            num_symbols: 1,
            constellation: Constellation::Qpsk,
            cp_fraction: 0.07,
            wola_taper_samples: 0,
            seed: 3,
        }
    }

    #[test]
    fn nr_numerology() {
        let c = OfdmConfig::nr_fr2_400mhz();
        assert_eq!(c.sample_rate(), 2457.6e6);
        assert!((c.occupied_bandwidth() - 380.16e6).abs() < 1e-3);
    }

    #[test]
    fn empty_or_oversized_allocation_rejected() {
        let mut c = small_cfg();
        c.active_subcarriers = 0;
        assert!(matches!(generate_ofdm::<f64>(&c), Err(Error::Config(_))));
        c.active_subcarriers = 64;
        assert!(matches!(generate_ofdm::<f64>(&c), Err(Error::Config(_))));
    }

    #[test]
    fn single_symbol_round_trip_is_exact() {
        let c = small_cfg();
        let (sig, grid) = generate_ofdm::<f64>(&c).unwrap();
        assert_eq!(sig.len(), 64 + c.cp_len());
        assert_eq!(c.cp_len(), 4);
        let back = demodulate(&sig, &c).unwrap();
        let pts = Constellation::Qpsk.points::<f64>();
        for (a, b) in back.symbols[0].iter().zip(&grid.symbols[0]) {
            assert!((a - b).norm() < 1e-12);
            assert!(pts.contains(b));
        }
    }

    #[test]
    fn wola_round_trip_and_unit_power() {
        let mut c = OfdmConfig::nr_fr2_400mhz();
        c.fft_size = 256;
        c.active_subcarriers = 198;
        c.num_symbols = 6;
        c.wola_taper_samples = 40;
        let (sig, grid) = generate_ofdm::<f64>(&c).unwrap();
        let back = demodulate(&sig, &c).unwrap();
        for (ra, rb) in back.symbols.iter().zip(&grid.symbols) {
            for (a, b) in ra.iter().zip(rb) {
                assert!((a - b).norm() < 1e-10);
            }
        }
        let p = sig.power();
        assert!((p - 1.0).abs() < 0.1, "power {p}");
    }

    #[test]
    fn constellations_have_unit_power() {
        for c in [Constellation::Qpsk, Constellation::Qam16, Constellation::Qam64] {
            let p = c.points::<f64>();
            let m: f64 = p.iter().map(|x| x.norm_sqr()).sum::<f64>() / p.len() as f64;
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ccdf_constant_envelope_is_zero_db() {
        let s = IqSignal::new((0..100).map(|i| crate::scalar::expj(i as f64 * 0.3)).collect(), 1.0)
            .unwrap();
        for (_, d) in papr_ccdf(&s, &[0.5, 0.01, 1.0]).unwrap() {
            assert!(d.abs() < 1e-9);
        }
    }

    #[test]
    fn ccdf_two_level_hand_quantile() {
        let s = IqSignal::new(
            vec![cplx::<f64>(1.0, 0.0), cplx(1.0, 0.0), cplx(1.0, 0.0), cplx(3.0, 0.0)],
            1.0,
        )
        .unwrap();
        let r = papr_ccdf(&s, &[0.25]).unwrap();
        assert!((r[0].1 - 10.0 * 3f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn ccdf_gaussian_matches_exponential_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<C<f64>> = (0..1_000_000)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                cplx(re, im)
            })
            .collect();
        let s = IqSignal::new(x, 1.0).unwrap();
        let d = papr_ccdf(&s, &[0.01]).unwrap()[0].1;
        let analytic = 10.0 * (-(0.01f64).ln()).log10();
        assert!((analytic - 6.63).abs() < 0.01);
        assert!((d - analytic).abs() < 0.3, "{d} vs {analytic}");
    }

    #[test]
    fn ccdf_rejects_empty_and_bad_probability() {
        assert!(papr_ccdf_samples::<f64>(&[], &[0.1]).is_err());
        let s = IqSignal::new(vec![cplx::<f64>(1.0, 0.0)], 1.0).unwrap();
        assert!(papr_ccdf(&s, &[0.0]).is_err());
        assert!(papr_ccdf(&s, &[1.5]).is_err());
    }

    #[test]
    fn cfr_leaves_constant_envelope_untouched() {
        let s = IqSignal::new((0..256).map(|i| crate::scalar::expj(i as f64 * 0.05)).collect(), 1e6)
            .unwrap();
        let r = crest_factor_reduce(&s, 3.0, 4, 0.5e6).unwrap();
        assert_eq!(r.signal, s);
        assert_eq!(r.iterations_run, 0);
    }

    #[test]
    fn clip_reduces_single_peak_to_level() {
        let mut x = vec![cplx::<f64>(1.0, 0.0); 64];
        x[10] = cplx(0.0, 5.0);
        let level = 2.0;
        let y = clip_magnitude(&x, level);
        assert!((y[10] - cplx(0.0, 2.0)).norm() < 1e-15);
        assert_eq!(y[11], x[11]);
    }

    #[test]
    fn cfr_does_not_increase_papr_and_keeps_band() {
        let mut c = OfdmConfig::nr_fr2_400mhz();
        c.fft_size = 512;
        c.active_subcarriers = 396;
        c.num_symbols = 8;
        c.wola_taper_samples = 32;
        let (sig, _) = generate_ofdm::<f64>(&c).unwrap();
        let r = crest_factor_reduce(&sig, 6.5, 6, c.occupied_bandwidth()).unwrap();
        assert!(r.papr_after_db <= r.papr_before_db);
        assert!(r.papr_after_db < r.papr_before_db - 0.1);
        // Out-of-band content of the difference must vanish.
        let d: Vec<C<f64>> = r.signal.samples.iter().zip(&sig.samples).map(|(a, b)| a - b).collect();
        let inband = brickwall(&d, sig.sample_rate, c.occupied_bandwidth());
        let oob: f64 = d.iter().zip(&inband).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(oob < 1e-20 * d.len() as f64);
    }
}
