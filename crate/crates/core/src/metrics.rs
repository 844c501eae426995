//! Figures of merit: PSD, ACLR (single direction and TRP-based), EVM,
//! NMSE and far-field beam patterns, plus the NR requirement tables.
//!
//! Spectra are Welch estimates with a periodic Hann window and 50% overlap,
//! scaled so that `Σ S(f) Δf` equals the mean time-domain power. The
//! frequency axis is centred (`-fs/2 .. fs/2`).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array_sim::ArrayPlant;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real, C};
use crate::signal::IqSignal;
use crate::waveform::{demodulate, Constellation, OfdmConfig, SymbolGrid};

type C64 = Complex<f64>;

/// Default Welch segment length for ACLR measurements.
pub const DEFAULT_RESOLUTION: usize = 8192;

/// Welch power spectral density, linear units per Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
    pub bin_width: f64,
    pub segments: usize,
}

impl Psd {
    pub fn db(&self) -> Vec<f64> {
        self.density.iter().map(|&d| 10.0 * d.max(1e-300).log10()).collect()
    }

    /// `∫ S(f) df` over the whole axis.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width
    }

    /// Power in `[lo, hi]` Hz; bins straddling an edge count fractionally.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let half = self.bin_width / 2.0;
        self.freqs
            .iter()
            .zip(&self.density)
            .map(|(&f, &d)| {
                let overlap = ((f + half).min(hi) - (f - half).max(lo)).max(0.0);
                d * overlap
            })
            .sum()
    }
}

fn to_c64<T: Real>(x: &[C<T>]) -> Vec<C64> {
    x.iter().map(|s| C64::new(to_f64(s.re), to_f64(s.im))).collect()
}

/// Welch PSD with `resolution_bins`-point segments.
pub fn psd<T: Real>(sig: &IqSignal<T>, resolution_bins: usize) -> Result<Psd> {
    let n = resolution_bins;
    if n < 2 {
        return Err(Error::config("PSD resolution must be at least 2 bins"));
    }
    if sig.len() < 4 * n {
        return Err(Error::config(format!(
            "signal of {} samples is shorter than 4 x {n} PSD bins",
            sig.len()
        )));
    }
    let x = to_c64(&sig.samples);
    let w: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let wpow: f64 = w.iter().map(|v| v * v).sum();
    let hop = n / 2;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut acc = vec![0.0; n];
    let mut segments = 0;
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        for (b, (s, wi)) in buf.iter_mut().zip(x[start..start + n].iter().zip(&w)) {
            *b = s * wi;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let fs = sig.sample_rate;
    let scale = 1.0 / (segments as f64 * fs * wpow);
    let bin_width = fs / n as f64;
    // fftshift
    let mut freqs = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    for k in 0..n {
        let src = (k + n - n / 2) % n;
        freqs.push((k as f64 - (n / 2) as f64) * bin_width);
        density.push(acc[src] * scale);
    }
    Ok(Psd {
        freqs,
        density,
        bin_width,
        segments,
    })
}

/// Largest power-of-two segment length not above `preferred` that leaves at
/// least four segments' worth of data.
pub fn fit_resolution(len: usize, preferred: usize) -> usize {
    let mut n = preferred.max(2);
    while n > 2 && len < 4 * n {
        n /= 2;
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum MeasurementBandwidth {
    /// Band holding 99% of the in-channel power.
    #[default]
    Occupied99,
    /// Fixed bandwidth in Hz, centred on the channel.
    Fixed(f64),
}

/// Measurement band relative to the channel centre; adjacent channels use
/// the same band shifted by `±channel_bw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AclrBands {
    pub channel_bw: f64,
    pub lo: f64,
    pub hi: f64,
}

impl AclrBands {
    pub fn measurement_bw(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn from_psd(psd: &Psd, channel_bw: f64, rule: MeasurementBandwidth) -> Result<Self> {
        let (lo, hi) = match rule {
            MeasurementBandwidth::Fixed(bw) => {
                if !(bw > 0.0 && bw <= channel_bw) {
                    return Err(Error::config(format!("fixed measurement bandwidth {bw} outside (0, {channel_bw}]")));
                }
                (-bw / 2.0, bw / 2.0)
            }
            MeasurementBandwidth::Occupied99 => occupied_band(psd, channel_bw, 0.99)?,
        };
        Ok(Self { channel_bw, lo, hi })
    }

    /// Bands measured on `reference`.
    pub fn from_signal<T: Real>(reference: &IqSignal<T>, settings: &AclrSettings) -> Result<Self> {
        check_bandwidth(reference.sample_rate, settings.channel_bw)?;
        let p = psd(reference, fit_resolution(reference.len(), settings.resolution_bins))?;
        Self::from_psd(&p, settings.channel_bw, settings.rule)
    }

    /// `(in-band, lower adjacent, upper adjacent)` powers.
    pub fn powers(&self, psd: &Psd) -> (f64, f64, f64) {
        let b = self.channel_bw;
        (
            psd.band_power(self.lo, self.hi),
            psd.band_power(self.lo - b, self.hi - b),
            psd.band_power(self.lo + b, self.hi + b),
        )
    }
}

/// Interval inside `±channel_bw/2` that leaves `(1-fraction)/2` of the
/// channel power on each side.
pub fn occupied_band(psd: &Psd, channel_bw: f64, fraction: f64) -> Result<(f64, f64)> {
    let half = psd.bin_width / 2.0;
    let (lo, hi) = (-channel_bw / 2.0, channel_bw / 2.0);
    let parts: Vec<(f64, f64, f64)> = psd
        .freqs
        .iter()
        .zip(&psd.density)
        .filter_map(|(&f, &d)| {
            let a = (f - half).max(lo);
            let b = (f + half).min(hi);
            (b > a).then_some((a, b, d * (b - a)))
        })
        .collect();
    let total: f64 = parts.iter().map(|p| p.2).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let tail = total * (1.0 - fraction) / 2.0;
    let crossing = |iter: &mut dyn Iterator<Item = &(f64, f64, f64)>, from_low: bool| -> f64 {
        let mut acc = 0.0;
        for &(a, b, p) in iter {
            if acc + p >= tail {
                let frac = if p > 0.0 { (tail - acc) / p } else { 0.0 };
                return if from_low { a + frac * (b - a) } else { b - frac * (b - a) };
            }
            acc += p;
        }
        if from_low {
            hi
        } else {
            lo
        }
    };
    let f_lo = crossing(&mut parts.iter(), true);
    let f_hi = crossing(&mut parts.iter().rev(), false);
    Ok((f_lo, f_hi))
}

fn check_bandwidth(sample_rate: f64, channel_bw: f64) -> Result<()> {
    if !(channel_bw > 0.0) {
        return Err(Error::config("channel bandwidth must be positive"));
    }
    if sample_rate < 3.0 * channel_bw {
        return Err(Error::InsufficientBandwidth {
            sample_rate,
            required: 3.0 * channel_bw,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AclrSettings {
    pub channel_bw: f64,
    #[serde(default)]
    pub rule: MeasurementBandwidth,
    #[serde(default = "default_resolution")]
    pub resolution_bins: usize,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl AclrSettings {
    pub fn new(channel_bw: f64) -> Self {
        Self {
            channel_bw,
            rule: MeasurementBandwidth::Occupied99,
            resolution_bins: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AclrReport {
    /// Worst-case ACLR, dBc.
    pub aclr_dbc: f64,
    pub lower_dbc: f64,
    pub upper_dbc: f64,
    pub inband_power: f64,
    pub adjacent_low: f64,
    pub adjacent_high: f64,
    pub measurement_bw: f64,
}

impl AclrReport {
    fn from_powers(inband: f64, low: f64, high: f64, bw: f64) -> Self {
        let r = |adj: f64| 10.0 * (inband / adj.max(1e-300)).log10();
        Self {
            aclr_dbc: r(low.max(high)),
            lower_dbc: r(low),
            upper_dbc: r(high),
            inband_power: inband,
            adjacent_low: low,
            adjacent_high: high,
            measurement_bw: bw,
        }
    }
}

/// ACLR of one signal with measurement bands taken from the signal itself.
pub fn aclr_single_direction<T: Real>(
    sig: &IqSignal<T>,
    channel_bw: f64,
    rule: MeasurementBandwidth,
) -> Result<AclrReport> {
    let settings = AclrSettings {
        rule,
        ..AclrSettings::new(channel_bw)
    };
    aclr_with_settings(sig, &settings)
}

pub fn aclr_with_settings<T: Real>(sig: &IqSignal<T>, settings: &AclrSettings) -> Result<AclrReport> {
    check_bandwidth(sig.sample_rate, settings.channel_bw)?;
    let p = psd(sig, fit_resolution(sig.len(), settings.resolution_bins))?;
    let bands = AclrBands::from_psd(&p, settings.channel_bw, settings.rule)?;
    let (i, l, h) = bands.powers(&p);
    Ok(AclrReport::from_powers(i, l, h, bands.measurement_bw()))
}

/// ACLR of `sig` over fixed, previously determined bands.
pub fn aclr_in_bands<T: Real>(sig: &IqSignal<T>, bands: &AclrBands, resolution_bins: usize) -> Result<AclrReport> {
    check_bandwidth(sig.sample_rate, bands.channel_bw)?;
    let p = psd(sig, fit_resolution(sig.len(), resolution_bins))?;
    let (i, l, h) = bands.powers(&p);
    Ok(AclrReport::from_powers(i, l, h, bands.measurement_bw()))
}

/// Per-angle in-band and adjacent powers of a far-field sweep at fixed
/// elevation and single polarisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSweepResult {
    pub angles_deg: Vec<f64>,
    pub inband_power: Vec<f64>,
    pub adjacent_power_low: Vec<f64>,
    pub adjacent_power_high: Vec<f64>,
    pub eirp_scale: f64,
}

impl AngleSweepResult {
    pub fn validate(&self) -> Result<()> {
        let n = self.angles_deg.len();
        if n == 0 {
            return Err(Error::EmptySignal("angle sweep"));
        }
        for (what, v) in [
            ("in-band powers", &self.inband_power),
            ("lower adjacent powers", &self.adjacent_power_low),
            ("upper adjacent powers", &self.adjacent_power_high),
        ] {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    what,
                    left: n,
                    right: v.len(),
                });
            }
            if v.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::config(format!("{what} must be non-negative")));
            }
        }
        if self.angles_deg.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("sweep angles must be strictly increasing"));
        }
        Ok(())
    }

    /// Per-angle ACLR, dBc.
    pub fn aclr_per_angle(&self) -> Vec<f64> {
        (0..self.angles_deg.len())
            .map(|i| {
                let adj = self.adjacent_power_low[i].max(self.adjacent_power_high[i]);
                10.0 * (self.inband_power[i] / adj.max(1e-300)).log10()
            })
            .collect()
    }

    pub fn inband_db(&self) -> Vec<f64> {
        to_db(&self.inband_power)
    }

    /// Worst adjacent channel per angle, dB.
    pub fn adjacent_db(&self) -> Vec<f64> {
        let v: Vec<f64> = self
            .adjacent_power_low
            .iter()
            .zip(&self.adjacent_power_high)
            .map(|(a, b)| a.max(*b))
            .collect();
        to_db(&v)
    }
}

fn to_db(v: &[f64]) -> Vec<f64> {
    v.iter().map(|p| 10.0 * p.max(1e-300).log10()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpAclr {
    pub aclr_dbc: f64,
    pub trp_channel: f64,
    pub trp_adjacent_low: f64,
    pub trp_adjacent_high: f64,
    pub warning: Option<String>,
}

/// ACLR from total radiated powers. At fixed elevation the angular weight
/// is constant, so the TRPs reduce to plain sums over the sweep.
pub fn aclr_trp(sweep: &AngleSweepResult) -> Result<TrpAclr> {
    sweep.validate()?;
    let s = sweep.eirp_scale;
    let ch: f64 = sweep.inband_power.iter().sum::<f64>() * s;
    let lo: f64 = sweep.adjacent_power_low.iter().sum::<f64>() * s;
    let hi: f64 = sweep.adjacent_power_high.iter().sum::<f64>() * s;
    let warning = (sweep.angles_deg.len() == 1).then(|| {
        "single-angle sweep: TRP ACLR reduces to the single-direction value and is optimistic".to_string()
    });
    Ok(TrpAclr {
        aclr_dbc: 10.0 * (ch / lo.max(hi).max(1e-300)).log10(),
        trp_channel: ch,
        trp_adjacent_low: lo,
        trp_adjacent_high: hi,
        warning,
    })
}

/// Inclusive angle grid `from..=to` in `step` degrees.
pub fn angle_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(|i| from + i as f64 * step).collect()
}

/// Far-field powers of the array driven by `input` at every angle. The
/// measurement bands are taken from `input` itself.
pub fn beam_pattern<T: Real>(
    plant: &ArrayPlant<T>,
    input: &IqSignal<T>,
    angles_deg: &[f64],
    settings: &AclrSettings,
) -> Result<AngleSweepResult> {
    let bands = AclrBands::from_signal(input, settings)?;
    let out = plant.array_forward(input)?;
    let res = fit_resolution(input.len(), settings.resolution_bins);
    let mut result = AngleSweepResult {
        angles_deg: angles_deg.to_vec(),
        inband_power: Vec::with_capacity(angles_deg.len()),
        adjacent_power_low: Vec::with_capacity(angles_deg.len()),
        adjacent_power_high: Vec::with_capacity(angles_deg.len()),
        eirp_scale: 1.0,
    };
    for &a in angles_deg {
        let ff = plant.far_field(&out.per_element, lit(a));
        let p = psd(&ff, res)?;
        let (i, l, h) = bands.powers(&p);
        result.inband_power.push(i);
        result.adjacent_power_low.push(l);
        result.adjacent_power_high.push(h);
    }
    result.validate()?;
    Ok(result)
}

/// Width in degrees of the contiguous region around the peak where the
/// pattern stays within `drop_db` of its maximum, linearly interpolated.
pub fn beamwidth(angles_deg: &[f64], power: &[f64], drop_db: f64) -> f64 {
    if angles_deg.len() < 2 || angles_deg.len() != power.len() {
        return 0.0;
    }
    let db = to_db(power);
    let (peak, pmax) = db
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let level = pmax - drop_db;
    let edge = |i: usize, j: usize| -> f64 {
        // Between inside sample i and outside sample j.
        let t = (db[i] - level) / (db[i] - db[j]);
        angles_deg[i] + t * (angles_deg[j] - angles_deg[i])
    };
    let mut l = peak;
    while l > 0 && db[l - 1] >= level {
        l -= 1;
    }
    let left = if l == 0 { angles_deg[0] } else { edge(l, l - 1) };
    let mut r = peak;
    while r + 1 < db.len() && db[r + 1] >= level {
        r += 1;
    }
    let right = if r + 1 == db.len() { angles_deg[r] } else { edge(r, r + 1) };
    right - left
}

/// EVM in percent after per-subcarrier single-tap equalisation.
///
/// With `S ≥ 2` symbols each subcarrier gets its own LS gain and the error
/// power is corrected by `S/(S-1)` for the degree of freedom the equaliser
/// absorbs. A single symbol falls back to one common gain.
pub fn evm_from_grids<T: Real>(reference: &SymbolGrid<T>, received: &SymbolGrid<T>) -> Result<f64> {
    let s = reference.symbols.len();
    if s == 0 || reference.symbols[0].is_empty() {
        return Err(Error::EmptySignal("EVM reference grid"));
    }
    if received.symbols.len() != s || received.symbols.iter().zip(&reference.symbols).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::LengthMismatch {
            what: "EVM grids",
            left: s,
            right: received.symbols.len(),
        });
    }
    let m = reference.symbols[0].len();
    let x = |si: usize, i: usize| {
        let v = reference.symbols[si][i];
        C64::new(to_f64(v.re), to_f64(v.im))
    };
    let r = |si: usize, i: usize| {
        let v = received.symbols[si][i];
        C64::new(to_f64(v.re), to_f64(v.im))
    };
    let gain = |idx: &mut dyn Iterator<Item = (usize, usize)>| -> C64 {
        let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
        for (si, i) in idx {
            num += r(si, i) * x(si, i).conj();
            den += x(si, i).norm_sqr();
        }
        num / den
    };
    let (mut perr, mut pref) = (0.0, 0.0);
    let correction;
    if s >= 2 {
        for i in 0..m {
            let h = gain(&mut (0..s).map(|si| (si, i)));
            if h.norm() == 0.0 || !h.norm().is_finite() {
                continue;
            }
            for si in 0..s {
                perr += (r(si, i) / h - x(si, i)).norm_sqr();
                pref += x(si, i).norm_sqr();
            }
        }
        correction = s as f64 / (s as f64 - 1.0);
    } else {
        let h = gain(&mut (0..m).map(|i| (0, i)));
        if h.norm() == 0.0 || !h.norm().is_finite() {
            return Err(Error::ZeroEnergy);
        }
        for i in 0..m {
            perr += (r(0, i) / h - x(0, i)).norm_sqr();
            pref += x(0, i).norm_sqr();
        }
        correction = m as f64 / (m as f64 - 1.0);
    }
    if !(pref > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok((perr * correction / pref).sqrt() * 100.0)
}

/// EVM of a time-aligned received waveform.
pub fn evm<T: Real>(reference_grid: &SymbolGrid<T>, received: &IqSignal<T>, ofdm: &OfdmConfig) -> Result<f64> {
    let rx = demodulate(received, ofdm)?;
    evm_from_grids(reference_grid, &rx)
}

/// Normalised mean-square error in dB; identical signals give the -300 dB
/// floor.
pub fn nmse<T: Real>(reference: &IqSignal<T>, measured: &IqSignal<T>) -> Result<f64> {
    if reference.len() != measured.len() {
        return Err(Error::LengthMismatch {
            what: "nmse operands",
            left: reference.len(),
            right: measured.len(),
        });
    }
    let num: f64 = reference
        .samples
        .iter()
        .zip(&measured.samples)
        .map(|(r, m)| to_f64((m - r).norm_sqr()))
        .sum();
    let den: f64 = reference.samples.iter().map(|r| to_f64(r.norm_sqr())).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(if num > 0.0 { 10.0 * (num / den).log10() } else { -300.0 })
}

/// Sample-wise mean of repeated captures; uncorrelated receiver noise drops
/// by the number of captures.
pub fn average_captures<T: Real>(captures: &[IqSignal<T>]) -> Result<IqSignal<T>> {
    let first = captures.first().ok_or(Error::EmptySignal("capture list"))?;
    let n = first.len();
    let mut acc = vec![C::new(T::zero(), T::zero()); n];
    for c in captures {
        if c.len() != n {
            return Err(Error::LengthMismatch {
                what: "captures",
                left: n,
                right: c.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(&c.samples) {
            *a = *a + v;
        }
    }
    let k: T = lit(captures.len() as f64);
    Ok(IqSignal::from_parts(acc.into_iter().map(|a| a / k).collect(), first.sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvmRequirement {
    pub percent: f64,
    pub db: f64,
}

/// NR Release-15 transmitter EVM limits.
pub fn evm_requirement(c: Constellation) -> EvmRequirement {
    let percent = match c {
        Constellation::Qpsk => 17.5,
        Constellation::Qam16 => 12.5,
        Constellation::Qam64 => 8.0,
    };
    EvmRequirement {
        percent,
        db: 20.0 * (percent / 100.0).log10(),
    }
}

/// NR Release-15 FR2 ACLR limit for a carrier frequency, dBc.
pub fn aclr_requirement(carrier_hz: f64) -> Option<f64> {
    if (24.25e9..=33.4e9).contains(&carrier_hz) {
        Some(28.0)
    } else if (37e9..=52.6e9).contains(&carrier_hz) {
        Some(26.0)
    } else {
        None
    }
}

pub fn write_psd_csv(path: &Path, psd: &Psd) -> Result<()> {
    let mut out = String::from("freq_hz,psd_db_per_hz\n");
    for (f, d) in psd.freqs.iter().zip(psd.db()) {
        out.push_str(&format!("{f},{d}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, sweep: &AngleSweepResult) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "angle_deg,inband_db,adjacent_low_db,adjacent_high_db,aclr_dbc")?;
    let aclr = sweep.aclr_per_angle();
    let (i, l, h) = (
        sweep.inband_db(),
        to_db(&sweep.adjacent_power_low),
        to_db(&sweep.adjacent_power_high),
    );
    for k in 0..sweep.angles_deg.len() {
        writeln!(f, "{},{},{},{},{}", sweep.angles_deg[k], i[k], l[k], h[k], aclr[k])?;
    }
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_sim::PaModel;
    use crate::scalar::cplx;
    use crate::waveform::generate_ofdm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64, fs: f64) -> IqSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 0.5f64.sqrt();
        IqSignal::from_parts(
            (0..n)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    cplx::<f64>(a * s, b * s)
                })
                .collect(),
            fs,
        )
    }

    /// Random-phase flat spectrum with a per-bin level function.
    fn shaped(n: usize, fs: f64, seed: u64, level: impl Fn(f64) -> f64) -> IqSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Vec<C64> = (0..n)
            .map(|k| {
                let f = if k < n / 2 { k as f64 } else { k as f64 - n as f64 } * fs / n as f64;
                let ph: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
                C64::from_polar(level(f).sqrt(), ph)
            })
            .collect();
        FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spec);
        IqSignal::from_parts(spec, fs)
    }

    #[test]
    fn parseval_on_random_signal() {
        let x = noise(1 << 16, 1, 10.0);
        let p = psd(&x, 1024).unwrap();
        let d = 10.0 * (p.total_power() / x.power()).log10();
        assert!(d.abs() < 0.1, "{d}");
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let fs = 1000.0;
        let f0 = 125.0;
        let x = IqSignal::from_parts(
            (0..8192).map(|n| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * f0 * n as f64 / fs)).collect(),
            fs,
        );
        let p = psd(&x, 256).unwrap();
        let k = p.density.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((p.freqs[k] - f0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_is_flat() {
        let x = noise(1 << 17, 2, 1.0);
        let p = psd(&x, 256).unwrap();
        assert!(p.segments >= 100);
        let mean = p.density.iter().sum::<f64>() / p.density.len() as f64;
        for d in &p.density {
            assert!((10.0 * (d / mean).log10()).abs() < 1.0);
        }
    }

    #[test]
    fn constructed_adjacent_block_at_minus_30() {
        let fs = 1.0;
        let bw = 0.2;
        let x = shaped(1 << 18, fs, 3, |f| {
            if f.abs() <= bw / 2.0 {
                1.0
            } else if f > bw / 2.0 && f <= 1.5 * bw {
                1e-3
            } else {
                0.0
            }
        });
        let r = aclr_single_direction(&x, bw, MeasurementBandwidth::Occupied99).unwrap();
        assert!((r.aclr_dbc - 30.0).abs() < 0.1, "{r:?}");
        assert!(r.lower_dbc > 60.0);
    }

    #[test]
    fn clean_band_limited_signal_has_high_aclr() {
        let cfg = OfdmConfig {
            fft_size: 256,
            active_subcarriers: 200,
            oversampling: 4,
            num_symbols: 40,
            wola_taper_samples: 8,
            ..OfdmConfig::nr_fr2_400mhz()
        };
        let (x, _) = generate_ofdm::<f64>(&cfg).unwrap();
        let x = IqSignal::from_parts(
            crate::waveform::brickwall(&x.samples, x.sample_rate, cfg.occupied_bandwidth() * 1.01),
            x.sample_rate,
        );
        let r = aclr_single_direction(&x, cfg.occupied_bandwidth() / 0.95, MeasurementBandwidth::Occupied99).unwrap();
        assert!(r.aclr_dbc > 60.0, "{r:?}");
    }

    #[test]
    fn insufficient_bandwidth() {
        let x = noise(4096, 4, 1.0);
        assert!(matches!(
            aclr_single_direction(&x, 0.4, MeasurementBandwidth::Occupied99),
            Err(Error::InsufficientBandwidth { .. })
        ));
    }

    #[test]
    fn trp_hand_sum() {
        let s = AngleSweepResult {
            angles_deg: vec![0.0, 2.0],
            inband_power: vec![1.0, 1.0],
            adjacent_power_low: vec![0.001, 0.1],
            adjacent_power_high: vec![0.001, 0.1],
            eirp_scale: 1.0,
        };
        let t = aclr_trp(&s).unwrap();
        assert!((t.aclr_dbc - 10.0 * (2.0f64 / 0.101).log10()).abs() < 1e-12);
        assert!((t.aclr_dbc - 12.97).abs() < 0.01);
        assert!(t.warning.is_none());
    }

    #[test]
    fn trp_isotropic_and_single_angle() {
        let s = AngleSweepResult {
            angles_deg: vec![-2.0, 0.0, 2.0],
            inband_power: vec![3.0; 3],
            adjacent_power_low: vec![0.003; 3],
            adjacent_power_high: vec![0.001; 3],
            eirp_scale: 1.0,
        };
        assert!((aclr_trp(&s).unwrap().aclr_dbc - s.aclr_per_angle()[0]).abs() < 1e-12);

        let x = shaped(1 << 16, 1.0, 5, |f| if f.abs() < 0.1 { 1.0 } else { 1e-4 });
        let single = aclr_single_direction(&x, 0.2, MeasurementBandwidth::Occupied99).unwrap();
        let one = AngleSweepResult {
            angles_deg: vec![0.0],
            inband_power: vec![single.inband_power],
            adjacent_power_low: vec![single.adjacent_low],
            adjacent_power_high: vec![single.adjacent_high],
            eirp_scale: 1.0,
        };
        let t = aclr_trp(&one).unwrap();
        assert!(t.warning.is_some());
        assert!((t.aclr_dbc - single.aclr_dbc).abs() < 1e-12);
    }

    #[test]
    fn nmse_examples() {
        let r = noise(1000, 6, 1.0);
        assert!(nmse(&r, &r).unwrap() <= -150.0);
        let m = r.scaled(cplx::<f64>(1.01, 0.0));
        assert!((nmse(&r, &m).unwrap() + 40.0).abs() < 1e-9);
        let e = noise(1000, 7, 1.0);
        let sum = IqSignal::from_parts(r.samples.iter().zip(&e.samples).map(|(a, b)| a + b).collect(), 1.0);
        // Independent unit-power error: 0 dB up to sampling noise.
        assert!(nmse(&r, &sum).unwrap().abs() < 0.3);
    }

    fn small_ofdm(symbols: usize) -> OfdmConfig {
        OfdmConfig {
            fft_size: 512,
            active_subcarriers: 400,
            oversampling: 2,
            num_symbols: symbols,
            wola_taper_samples: 0,
            ..OfdmConfig::nr_fr2_400mhz()
        }
    }

    #[test]
    fn evm_ideal_is_zero_and_scale_invariant() {
        let cfg = small_ofdm(4);
        let (x, grid) = generate_ofdm::<f64>(&cfg).unwrap();
        assert!(evm(&grid, &x, &cfg).unwrap() < 1e-10);
        let y = x.scaled(cplx::<f64>(-0.3, 2.0));
        let noisy = IqSignal::from_parts(
            x.samples.iter().zip(noise(x.len(), 9, 1.0).samples).map(|(a, n)| a + n * 0.05).collect(),
            x.sample_rate,
        );
        let noisy_scaled = noisy.scaled(cplx::<f64>(0.2, -0.7));
        assert!(evm(&grid, &y, &cfg).unwrap() < 1e-10);
        let (a, b) = (evm(&grid, &noisy, &cfg).unwrap(), evm(&grid, &noisy_scaled, &cfg).unwrap());
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn noise_evm_at_minus_22_db() {
        let m = 2000;
        let s = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Constellation::Qam64.points::<f64>();
        let reference = SymbolGrid {
            symbols: (0..s)
                .map(|_| (0..m).map(|_| pts[rand::Rng::random_range(&mut rng, 0..pts.len())]).collect())
                .collect::<Vec<Vec<C64>>>(),
        };
        let sigma = 10f64.powf(-22.0 / 20.0);
        let n = noise(m * s, 12, 1.0);
        let received = SymbolGrid {
            symbols: reference
                .symbols
                .iter()
                .enumerate()
                .map(|(si, row)| row.iter().enumerate().map(|(i, x)| x * cplx::<f64>(0.8, 0.3) + n.samples[si * m + i] * sigma).collect())
                .collect(),
        };
        let e = evm_from_grids(&reference, &received).unwrap();
        // Noise relative to the received signal power |h|².
        let want = 100.0 * sigma / cplx::<f64>(0.8, 0.3).norm();
        assert!((e / want - 1.0).abs() < 0.03, "{e} vs {want}");
    }

    #[test]
    fn requirement_tables() {
        let r = evm_requirement(Constellation::Qam64);
        assert_eq!(r.percent, 8.0);
        assert!((r.db + 21.94).abs() < 0.01);
        assert_eq!(evm_requirement(Constellation::Qam16).percent, 12.5);
        assert_eq!(aclr_requirement(28e9), Some(28.0));
        assert_eq!(aclr_requirement(39e9), Some(26.0));
        assert_eq!(aclr_requirement(3.5e9), None);
    }

    #[test]
    fn linear_array_pattern_matches_array_factor() {
        let fs = 1.0;
        let x = shaped(1 << 15, fs, 13, |f| if f.abs() < 0.1 { 1.0 } else { 0.0 });
        let plant = ArrayPlant::uniform(vec![PaModel::linear(cplx::<f64>(1.0, 0.0)); 8], 0.0).steer(20.0);
        let angles = angle_grid(-60.0, 60.0, 2.0);
        let settings = AclrSettings::new(0.2);
        let sweep = beam_pattern(&plant, &x, &angles, &settings).unwrap();
        let p0 = settings_power(&x, &settings);
        let st = 20f64.to_radians().sin();
        for (a, p) in angles.iter().zip(&sweep.inband_power) {
            let d = std::f64::consts::PI * (a.to_radians().sin() - st);
            let af: C64 = (0..8).map(|i| C64::from_polar(1.0, d * i as f64)).sum();
            let want = af.norm_sqr() * p0;
            if 10.0 * (want / (64.0 * p0)).log10() > -30.0 {
                assert!((10.0 * (p / want).log10()).abs() < 0.2, "{a}: {p} vs {want}");
            }
        }
        let single = ArrayPlant::single(PaModel::linear(cplx::<f64>(1.0, 0.0)));
        let flat = beam_pattern(&single, &x, &angles, &settings).unwrap();
        let first = flat.inband_power[0];
        assert!(flat.inband_power.iter().all(|p| (p / first - 1.0).abs() < 1e-9));
    }

    fn settings_power(x: &IqSignal<f64>, s: &AclrSettings) -> f64 {
        let bands = AclrBands::from_signal(x, s).unwrap();
        let p = psd(x, fit_resolution(x.len(), s.resolution_bins)).unwrap();
        bands.powers(&p).0
    }

    #[test]
    fn beamwidth_interpolates() {
        let a = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let p = [0.01, 0.1, 1.0, 0.1, 0.01];
        assert!((beamwidth(&a, &p, 10.0) - 2.0).abs() < 1e-12);
        assert!((beamwidth(&a, &p, 15.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_lowers_noise() {
        let r = noise(4000, 20, 1.0);
        let caps: Vec<_> = (0..16)
            .map(|k| {
                let n = noise(4000, 100 + k, 1.0);
                IqSignal::from_parts(r.samples.iter().zip(&n.samples).map(|(a, b)| a + b * 0.1).collect(), 1.0)
            })
            .collect();
        let one = nmse(&r, &caps[0]).unwrap();
        let avg = nmse(&r, &average_captures(&caps).unwrap()).unwrap();
        assert!((one - avg - 10.0 * 16f64.log10()).abs() < 0.5);
    }
}
