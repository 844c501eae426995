//! Analytical FLOP model of the predistorter main path and of parameter
//! learning.
//!
//! Cost units: complex multiply 6, complex-by-real multiply 2, complex add
//! 2. Main-path figures are per sample; learning figures are totals divided
//! by the number of training samples `I·B` of the method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpdConfig {
    PwIla,
    ClSelfOrth,
    ClOrthBfs,
    PwclSelfOrth,
    /// Piecewise closed loop with orthogonal basis functions and no pruning.
    PwclOrthBfs,
    PwclOrthPruned,
}

impl DpdConfig {
    pub const ALL: [DpdConfig; 6] = [
        DpdConfig::PwIla,
        DpdConfig::ClSelfOrth,
        DpdConfig::ClOrthBfs,
        DpdConfig::PwclSelfOrth,
        DpdConfig::PwclOrthBfs,
        DpdConfig::PwclOrthPruned,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DpdConfig::PwIla => "PW-ILA",
            DpdConfig::ClSelfOrth => "CL self-orth",
            DpdConfig::ClOrthBfs => "CL orth BFs",
            DpdConfig::PwclSelfOrth => "PW-CL self-orth",
            DpdConfig::PwclOrthBfs => "PW-CL orth BFs",
            DpdConfig::PwclOrthPruned => "PW-CL orth+pruned",
        }
    }
}

/// Counts entering the FLOP formulas.
///
/// `n_isp`/`n_ipw` count instantaneous (memoryless) basis functions of the
/// single-polynomial and piecewise models, `n_sp`/`n_pw` all coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityParams {
    pub n_isp: usize,
    pub n_ipw: usize,
    pub n_sp: usize,
    pub n_pw: usize,
    #[serde(default)]
    pub n_pw_pruned: Option<usize>,
    /// Defaults to `n_ipw` when absent.
    #[serde(default)]
    pub n_ipw_pruned: Option<usize>,
    pub k: usize,
    pub b_cl: usize,
    pub i_cl: usize,
    pub b_ila: usize,
    pub i_ila: usize,
}

impl ComplexityParams {
    /// 28 GHz array experiment: order-9 full dual-input basis with three
    /// memory taps, three regions, 96 coefficients left after pruning.
    pub fn reference() -> Self {
        Self {
            n_isp: 5,
            n_ipw: 15,
            n_sp: 116,
            n_pw: 348,
            n_pw_pruned: Some(96),
            n_ipw_pruned: None,
            k: 3,
            b_cl: 20_000,
            i_cl: 10,
            b_ila: 50_000,
            i_ila: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("n_isp", self.n_isp),
            ("n_ipw", self.n_ipw),
            ("n_sp", self.n_sp),
            ("n_pw", self.n_pw),
            ("k", self.k),
            ("b_cl", self.b_cl),
            ("i_cl", self.i_cl),
            ("b_ila", self.b_ila),
            ("i_ila", self.i_ila),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if let Some(p) = self.n_pw_pruned {
            if p == 0 || p > self.n_pw {
                return Err(Error::config(format!("n_pw_pruned {p} outside 1..={}", self.n_pw)));
            }
        }
        if let Some(p) = self.n_ipw_pruned {
            if p == 0 || p > self.n_ipw {
                return Err(Error::config(format!("n_ipw_pruned {p} outside 1..={}", self.n_ipw)));
            }
        }
        Ok(())
    }
}

/// FLOP ledger of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub config: DpdConfig,
    pub bf_gen: f64,
    pub filt: f64,
    pub orth: Option<f64>,
    pub main_total: f64,
    pub learn_bf_gen: Option<f64>,
    pub learn_est: f64,
    pub learn_total: f64,
    /// Unnormalised learning FLOPs.
    pub learn_flops: f64,
    pub training_samples: f64,
}

fn ceil_div(a: usize, b: usize) -> f64 {
    a.div_ceil(b) as f64
}

/// Evaluates the FLOP formulas for one configuration. With `uncapped`
/// the ceilings in the pruned filtering and orthogonalisation cells are
/// dropped.
pub fn flops(cfg: DpdConfig, p: &ComplexityParams, uncapped: bool) -> Result<Ledger> {
    p.validate()?;
    let k = p.k;
    let (nsp, nisp) = (p.n_sp as f64, p.n_isp as f64);
    let npw_k = ceil_div(p.n_pw, k);
    let nipw_k = ceil_div(p.n_ipw, k);
    let (icl, bcl) = (p.i_cl as f64, p.b_cl as f64);
    let (iila, bila) = (p.i_ila as f64, p.b_ila as f64);

    let (bf_gen, filt, orth, learn_bf_gen, learn_flops, samples) = match cfg {
        DpdConfig::PwIla => {
            let est = 4.0 * iila * k as f64 * npw_k * npw_k * (ceil_div(p.b_ila, k) + ceil_div(p.n_pw, 3 * k));
            let gen = iila * bila * (2.0 * nipw_k + 1.0);
            (2.0 * nipw_k - 1.0, 8.0 * npw_k - 2.0, None, Some(gen), est, iila * bila)
        }
        DpdConfig::ClSelfOrth => (
            2.0 * nisp - 1.0,
            8.0 * nsp - 2.0,
            None,
            None,
            icl * bcl * nsp * (4.0 * nsp + 6.0),
            icl * bcl,
        ),
        DpdConfig::ClOrthBfs => (
            2.0 * nisp - 1.0,
            8.0 * nsp - 2.0,
            Some(2.0 * nsp * nsp),
            None,
            icl * nsp * (8.0 * bcl + 2.0),
            icl * bcl,
        ),
        DpdConfig::PwclSelfOrth => {
            let ratio = p.n_pw as f64 / k as f64;
            (
                2.0 * nipw_k - 1.0,
                8.0 * npw_k - 2.0,
                None,
                None,
                icl * bcl * npw_k * (4.0 * ratio + 6.0),
                icl * bcl,
            )
        }
        DpdConfig::PwclOrthBfs | DpdConfig::PwclOrthPruned => {
            let (npr, nipr) = if cfg == DpdConfig::PwclOrthBfs {
                (p.n_pw, p.n_ipw)
            } else {
                (
                    p.n_pw_pruned
                        .ok_or_else(|| Error::config("pruned configuration needs n_pw_pruned"))?,
                    p.n_ipw_pruned.unwrap_or(p.n_ipw),
                )
            };
            let npr_k = ceil_div(npr, k);
            let pruned = cfg == DpdConfig::PwclOrthPruned;
            let (filt_n, orth) = if uncapped && pruned {
                let r = npr as f64 / k as f64;
                (r, 2.0 * r * r)
            } else {
                let r = npr as f64 / k as f64;
                (npr_k, 2.0 * (r * r).ceil())
            };
            let learn = 8.0 * bcl * npw_k + 2.0 * npr_k * icl + 8.0 * npr_k * bcl * (icl - 1.0);
            (
                2.0 * ceil_div(nipr, k) - 1.0,
                8.0 * filt_n - 2.0,
                Some(orth),
                None,
                learn,
                icl * bcl,
            )
        }
    };
    let main_total = bf_gen + filt + orth.unwrap_or(0.0);
    let learn_bf_gen = learn_bf_gen.map(|g| g / samples);
    let learn_est = learn_flops / samples;
    Ok(Ledger {
        config: cfg,
        bf_gen,
        filt,
        orth,
        main_total,
        learn_bf_gen,
        learn_est,
        learn_total: learn_est + learn_bf_gen.unwrap_or(0.0),
        learn_flops: learn_flops + learn_bf_gen.unwrap_or(0.0) * samples,
        training_samples: samples,
    })
}

/// All configurations that the parameters support.
pub fn ledger_table(p: &ComplexityParams, uncapped: bool) -> Result<Vec<Ledger>> {
    DpdConfig::ALL
        .iter()
        .filter(|&&c| c != DpdConfig::PwclOrthPruned || p.n_pw_pruned.is_some())
        .map(|&c| flops(c, p, uncapped))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Agreement {
    Exact,
    Within5Percent,
    Discrepancy,
}

/// One published figure next to the computed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub config: DpdConfig,
    pub cell: String,
    pub published: f64,
    pub computed: f64,
    pub relative_error: f64,
    pub agreement: Agreement,
}

/// Published per-sample figures for [`ComplexityParams::reference`]:
/// `(config, cell, value)`.
pub const REFERENCE_FIGURES: &[(DpdConfig, &str, f64)] = &[
    (DpdConfig::PwIla, "filt", 926.0),
    (DpdConfig::PwIla, "main_total", 935.0),
    (DpdConfig::PwIla, "learn_bf_gen", 9.0),
    (DpdConfig::PwIla, "learn_est", 2.7e9),
    (DpdConfig::ClSelfOrth, "bf_gen", 9.0),
    (DpdConfig::ClSelfOrth, "filt", 926.0),
    (DpdConfig::ClSelfOrth, "main_total", 935.0),
    (DpdConfig::ClSelfOrth, "learn_est", 54_520.0),
    (DpdConfig::ClOrthBfs, "orth", 26_912.0),
    (DpdConfig::ClOrthBfs, "main_total", 27_847.0),
    (DpdConfig::ClOrthBfs, "learn_est", 928.0),
    (DpdConfig::PwclSelfOrth, "filt", 926.0),
    (DpdConfig::PwclSelfOrth, "main_total", 935.0),
    (DpdConfig::PwclSelfOrth, "learn_est", 54_520.0),
    (DpdConfig::PwclOrthBfs, "orth", 26_912.0),
    (DpdConfig::PwclOrthBfs, "main_total", 27_847.0),
    (DpdConfig::PwclOrthBfs, "learn_est", 928.0),
    (DpdConfig::PwclOrthPruned, "bf_gen", 9.0),
    (DpdConfig::PwclOrthPruned, "filt", 249.0),
    (DpdConfig::PwclOrthPruned, "orth", 1_964.0),
    (DpdConfig::PwclOrthPruned, "main_total", 2_219.0),
    (DpdConfig::PwclOrthPruned, "learn_est", 323.2),
];

fn cell(l: &Ledger, name: &str) -> Option<f64> {
    match name {
        "bf_gen" => Some(l.bf_gen),
        "filt" => Some(l.filt),
        "orth" => l.orth,
        "main_total" => Some(l.main_total),
        "learn_bf_gen" => l.learn_bf_gen,
        "learn_est" => Some(l.learn_est),
        "learn_total" => Some(l.learn_total),
        _ => None,
    }
}

/// Compares computed cells with the published figures. A cell is exact when
/// it matches to the precision printed (four significant digits for the
/// learning cells, the nearest integer otherwise).
pub fn check_reference(p: &ComplexityParams, uncapped: bool) -> Result<Vec<ReferenceCheck>> {
    let table = ledger_table(p, uncapped)?;
    let mut out = vec![];
    for &(config, name, published) in REFERENCE_FIGURES {
        let Some(l) = table.iter().find(|l| l.config == config) else {
            continue;
        };
        let Some(computed) = cell(l, name) else {
            continue;
        };
        let rel = (computed - published).abs() / published.abs();
        let exact = if name.starts_with("learn") {
            rounds_to(computed, published)
        } else {
            computed.round() == published
        };
        let agreement = if exact {
            Agreement::Exact
        } else if rel <= 0.05 {
            Agreement::Within5Percent
        } else {
            Agreement::Discrepancy
        };
        out.push(ReferenceCheck {
            config,
            cell: name.to_string(),
            published,
            computed,
            relative_error: rel,
            agreement,
        });
    }
    Ok(out)
}

/// True when `computed` rounds to `published` at the precision `published`
/// is written with (up to four significant digits).
fn rounds_to(computed: f64, published: f64) -> bool {
    if published == 0.0 {
        return computed == 0.0;
    }
    let mag = published.abs().log10().floor();
    for sig in 1..=4 {
        let q = 10f64.powf(mag - (sig as f64 - 1.0));
        if ((published / q).round() * q - published).abs() <= 1e-9 * published.abs() {
            return ((computed / q).round() * q - published).abs() <= 1e-9 * published.abs();
        }
    }
    (computed - published).abs() <= 1e-9 * published.abs()
}

/// Plain-text ledger table.
pub fn render_table(ledgers: &[Ledger]) -> String {
    let mut s = format!(
        "{:<20}{:>10}{:>10}{:>12}{:>12}{:>14}{:>16}\n",
        "config", "bf_gen", "filt", "orth", "main", "learn_bf_gen", "learn_est"
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
    for l in ledgers {
        s.push_str(&format!(
            "{:<20}{:>10.0}{:>10.1}{:>12}{:>12.1}{:>14}{:>16}\n",
            l.config.label(),
            l.bf_gen,
            l.filt,
            opt(l.orth),
            l.main_total,
            opt(l.learn_bf_gen),
            format_sig(l.learn_est),
        ));
    }
    s
}

fn format_sig(v: f64) -> String {
    if v.abs() >= 1e6 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}
