//! End-to-end experiments: excitation, partitioning, learning with every
//! DPD method and evaluation of the linearised array.
//!
//! Learning blocks are fresh crest-factor-reduced OFDM realisations, one
//! seed per iteration. Evaluation uses a separate multi-symbol waveform so
//! that EVM can be equalised per subcarrier.

use serde::{Deserialize, Serialize};

use crate::array_sim::{presets, ArrayPlant, NoiseFloor};
use crate::basis::{BasisFamily, BasisSpec, DualInputOrders};
use crate::dpd::{estimate_gain, learn, predistort, ClosedLoopSource, DpdModel, IterationRecord, LearnConfig};
use crate::error::{Error, Result};
use crate::ila::{ila_learn, IlaConfig};
use crate::metrics::{
    aclr_in_bands, aclr_trp, angle_grid, evm_from_grids, fit_resolution, nmse, AclrBands, AclrReport,
    AclrSettings, AngleSweepResult, TrpAclr, DEFAULT_RESOLUTION,
};
use crate::partition::{fit_amam, kmeans_partition, partition_regions, RegionPartition};
use crate::scalar::{lit, Real, C};
use crate::signal::IqSignal;
use crate::waveform::{brickwall, crest_factor_reduce, demodulate, generate_ofdm, OfdmConfig, SymbolGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfrSettings {
    pub target_papr_db: f64,
    pub iterations: usize,
}

impl Default for CfrSettings {
    fn default() -> Self {
        Self {
            target_papr_db: 6.4,
            iterations: 2,
        }
    }
}

/// Transmit waveform description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub ofdm: OfdmConfig,
    #[serde(default)]
    pub cfr: Option<CfrSettings>,
    /// Channel bandwidth used for ACLR, Hz.
    pub channel_bw: f64,
}

impl Excitation {
    pub fn fr2_400mhz() -> Self {
        Self {
            ofdm: OfdmConfig::nr_fr2_400mhz(),
            cfr: Some(CfrSettings::default()),
            channel_bw: 400e6,
        }
    }

    pub fn n3_3x20mhz() -> Self {
        Self {
            ofdm: OfdmConfig::nr_n3_3x20mhz(),
            cfr: Some(CfrSettings::default()),
            channel_bw: 60e6,
        }
    }

    /// Waveform of `symbols` OFDM symbols with its ideal symbol grid.
    pub fn realize<T: Real>(&self, seed: u64, symbols: usize) -> Result<(IqSignal<T>, SymbolGrid<T>)> {
        let cfg = OfdmConfig {
            num_symbols: symbols.max(1),
            seed,
            ..self.ofdm.clone()
        };
        let (x, grid) = generate_ofdm::<T>(&cfg)?;
        let x = match &self.cfr {
            Some(c) => crest_factor_reduce(&x, c.target_papr_db, c.iterations, cfg.occupied_bandwidth())?.signal,
            None => x,
        };
        Ok((x, grid))
    }

    /// At least `len` samples, truncated to `len`.
    pub fn block<T: Real>(&self, seed: u64, len: usize) -> Result<IqSignal<T>> {
        let symbols = len.div_ceil(self.ofdm.symbol_len());
        let (mut x, _) = self.realize::<T>(seed, symbols)?;
        x.samples.truncate(len);
        Ok(x)
    }
}

/// Closed-loop access to a simulated array.
pub struct PlantSource<'a, T: Real> {
    pub plant: &'a ArrayPlant<T>,
    pub excitation: &'a Excitation,
    pub seed: u64,
    pub noise_floor_dbc: Option<f64>,
    /// Two-sided bandwidth of the observation receiver; unlimited when absent.
    pub observation_bandwidth_hz: Option<f64>,
    transmissions: u64,
}

impl<'a, T: Real> PlantSource<'a, T> {
    pub fn new(plant: &'a ArrayPlant<T>, excitation: &'a Excitation, seed: u64, noise_floor_dbc: Option<f64>) -> Self {
        Self {
            plant,
            excitation,
            seed,
            noise_floor_dbc,
            observation_bandwidth_hz: None,
            transmissions: 0,
        }
    }

    pub fn with_observation_bandwidth(mut self, bandwidth_hz: Option<f64>) -> Self {
        self.observation_bandwidth_hz = bandwidth_hz;
        self
    }
}

impl<T: Real> ClosedLoopSource<T> for PlantSource<'_, T> {
    fn next_input(&mut self, iteration: usize, len: usize) -> Result<IqSignal<T>> {
        let seed = self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(iteration as u64);
        self.excitation.block(seed, len)
    }

    fn transmit(&mut self, x: &IqSignal<T>) -> Result<IqSignal<T>> {
        let out = self.plant.array_forward(x)?;
        self.transmissions += 1;
        let noise = self.noise_floor_dbc.map(|floor_dbc| NoiseFloor {
            floor_dbc,
            seed: self.seed ^ (self.transmissions << 32),
        });
        let z = self.plant.observation_receive(&out.per_element, noise)?;
        Ok(match self.observation_bandwidth_hz {
            Some(bw) => IqSignal::from_parts(brickwall(&z.samples, z.sample_rate, bw), z.sample_rate),
            None => z,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSettings {
    pub preset: String,
    #[serde(default)]
    pub drive_db: Option<f64>,
    #[serde(default)]
    pub coupling_strength: Option<f64>,
    #[serde(default)]
    pub steer_deg: f64,
}

impl PlantSettings {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: name.to_string(),
            drive_db: None,
            coupling_strength: None,
            steer_deg: 0.0,
        }
    }

    pub fn build<T: Real>(&self) -> Result<ArrayPlant<T>> {
        let mut p = presets::by_name::<T>(&self.preset)?;
        if let Some(d) = self.drive_db {
            p = p.with_drive_db(lit(d));
        }
        if let Some(k) = self.coupling_strength {
            p = p.with_coupling_strength(lit(k));
        }
        if self.steer_deg != 0.0 {
            p = p.steer(lit(self.steer_deg));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSettings {
    pub family: BasisFamily,
    pub max_order: usize,
    pub memory_depth: usize,
    #[serde(default)]
    pub cross_memory_depth: usize,
}

impl BasisSettings {
    pub fn spec<T: Real>(&self) -> BasisSpec<T> {
        let mut s = BasisSpec::new(self.family, self.max_order, self.memory_depth);
        s.cross_memory_depth = self.cross_memory_depth;
        if self.family == BasisFamily::FullDualInput {
            s.dual_orders = Some(DualInputOrders::uniform(self.max_order, self.memory_depth));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PartitionMethod {
    /// Taylor-remainder partition of the measured AM/AM curve.
    Remainder {
        orders: Vec<usize>,
        targets: Vec<f64>,
        #[serde(default = "default_fit_order")]
        fit_order: usize,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    KMeans {
        k: usize,
    },
    /// Boundaries on normalised amplitude `|a1|/max|a1|`.
    Fixed {
        boundaries: Vec<f64>,
    },
}

fn default_fit_order() -> usize {
    7
}

fn default_delta() -> f64 {
    1e-4
}

impl PartitionMethod {
    pub fn remainder(k_order: usize, target: f64) -> Self {
        PartitionMethod::Remainder {
            orders: vec![k_order],
            targets: vec![target],
            fit_order: default_fit_order(),
            delta: default_delta(),
        }
    }
}

/// Envelope the regions are keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PartitionDomain {
    /// `|a1|`: the predistorter input, used by closed-loop learning.
    #[default]
    Input,
    /// `|z/Ĝ|`: the postinverse input, used by indirect learning. The AM/AM
    /// is fitted with the roles of input and output swapped.
    Observation,
}

/// Partition derived from one no-DPD transmission, computed on amplitudes
/// normalised to the block maximum and rescaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PartitionOutcome<T: Real> {
    pub partition: RegionPartition<T>,
    pub a_max: T,
    pub amam_coefficients: Vec<T>,
    pub warnings: Vec<String>,
}

/// Regions holding fewer than `min_region_samples` samples of the statistics
/// block are merged into a neighbour and reported in the warnings.
pub fn measure_partition<T: Real, S: ClosedLoopSource<T> + ?Sized>(
    source: &mut S,
    method: &PartitionMethod,
    block: usize,
    domain: PartitionDomain,
    min_region_samples: usize,
) -> Result<PartitionOutcome<T>> {
    let a1 = source.statistics_input(block)?;
    let z = source.transmit(&a1)?;
    let g = estimate_gain(&a1, &z)?;
    let y = z.scaled(C::new(T::one(), T::zero()) / g);
    let (input, output) = match domain {
        PartitionDomain::Input => (a1, y),
        PartitionDomain::Observation => (y, a1),
    };
    let a_max = input.peak_amplitude();
    if a_max == T::zero() {
        return Err(Error::ZeroEnergy);
    }
    let an = input.scaled(C::new(T::one() / a_max, T::zero()));
    let zn = output.scaled(C::new(T::one() / a_max, T::zero()));
    let (normalized, coefs, mut warnings) = match method {
        PartitionMethod::Remainder {
            orders,
            targets,
            fit_order,
            delta,
        } => {
            let model = fit_amam(&an, &zn, *fit_order)?;
            let t: Vec<T> = targets.iter().map(|&e| lit(e)).collect();
            let p = partition_regions(&model, T::one(), orders, &t, lit(*delta))?;
            (p, model.coefficients.clone(), model.warnings.clone())
        }
        PartitionMethod::KMeans { k } => {
            let (mut p, _) = kmeans_partition(&an, *k)?;
            *p.boundaries.last_mut().unwrap() = T::one();
            (p, vec![], vec![])
        }
        PartitionMethod::Fixed { boundaries } => (
            RegionPartition::from_boundaries(boundaries.iter().map(|&b| lit(b)).collect())?,
            vec![],
            vec![],
        ),
    };
    let (partition, notes) = normalized.scaled(a_max).merge_sparse(&input, min_region_samples);
    warnings.extend(notes);
    Ok(PartitionOutcome {
        partition,
        a_max,
        amam_coefficients: coefs,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum Method {
    NoDpd,
    /// Piecewise closed loop.
    PwCl,
    /// Single-polynomial closed loop.
    Cl,
    PwIla,
    Ila,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::NoDpd => "no-DPD",
            Method::PwCl => "PW-CL",
            Method::Cl => "CL",
            Method::PwIla => "PW-ILA",
            Method::Ila => "ILA",
        }
    }

    pub fn piecewise(self) -> bool {
        matches!(self, Method::PwCl | Method::PwIla)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub from_deg: f64,
    pub to_deg: f64,
    pub step_deg: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            from_deg: -60.0,
            to_deg: 60.0,
            step_deg: 2.0,
        }
    }
}

impl SweepSettings {
    pub fn angles(&self) -> Vec<f64> {
        angle_grid(self.from_deg, self.to_deg, self.step_deg)
    }
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plant: PlantSettings,
    pub excitation: Excitation,
    pub basis: BasisSettings,
    pub partition: PartitionMethod,
    pub learn: LearnConfig,
    pub ila: IlaConfig,
    /// Observation receiver noise floor, dBc.
    #[serde(default)]
    pub noise_floor_dbc: Option<f64>,
    /// Observation receiver bandwidth, Hz.
    #[serde(default)]
    pub observation_bandwidth_hz: Option<f64>,
    pub eval_symbols: usize,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default = "default_resolution")]
    pub resolution_bins: usize,
    pub seed: u64,
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

impl ExperimentConfig {
    /// Deep-compression array with the full dual-input basis of order 9 and
    /// memory 3, three Taylor regions of order 5.
    pub fn array8_deep() -> Self {
        Self {
            plant: PlantSettings::preset("array8-deep"),
            excitation: Excitation::fr2_400mhz(),
            basis: BasisSettings {
                family: BasisFamily::FullDualInput,
                max_order: 9,
                memory_depth: 3,
                cross_memory_depth: 0,
            },
            partition: PartitionMethod::remainder(5, 0.01),
            learn: LearnConfig {
                mu: 0.6,
                loading: 1e-4,
                ..LearnConfig::default()
            },
            ila: IlaConfig::default(),
            noise_floor_dbc: Some(-50.0),
            observation_bandwidth_hz: Some(800e6),
            eval_symbols: 4,
            sweep: SweepSettings::default(),
            resolution_bins: DEFAULT_RESOLUTION,
            seed: 1,
        }
    }

    pub fn doherty_n3() -> Self {
        Self {
            plant: PlantSettings::preset("doherty-n3"),
            excitation: Excitation::n3_3x20mhz(),
            basis: BasisSettings {
                family: BasisFamily::MemoryPoly,
                max_order: 9,
                memory_depth: 2,
                cross_memory_depth: 0,
            },
            partition: PartitionMethod::remainder(5, 0.01),
            learn: LearnConfig {
                loading: 1e-4,
                ..LearnConfig::default()
            },
            observation_bandwidth_hz: None,
            sweep: SweepSettings {
                from_deg: 0.0,
                to_deg: 0.0,
                step_deg: 2.0,
            },
            ..Self::array8_deep()
        }
    }

    /// Linear plant without crest-factor reduction, so the evaluation
    /// waveform is exactly the reference constellation.
    pub fn linear_sanity() -> Self {
        Self {
            plant: PlantSettings::preset("linear"),
            excitation: Excitation {
                cfr: None,
                ..Excitation::fr2_400mhz()
            },
            basis: BasisSettings {
                family: BasisFamily::MemoryPoly,
                max_order: 5,
                memory_depth: 1,
                cross_memory_depth: 0,
            },
            noise_floor_dbc: None,
            observation_bandwidth_hz: None,
            learn: LearnConfig {
                iterations: 3,
                ..LearnConfig::default()
            },
            sweep: SweepSettings {
                from_deg: 0.0,
                to_deg: 0.0,
                step_deg: 2.0,
            },
            ..Self::array8_deep()
        }
    }

    pub fn aclr_settings(&self) -> AclrSettings {
        AclrSettings {
            resolution_bins: self.resolution_bins,
            ..AclrSettings::new(self.excitation.channel_bw)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.excitation.ofdm.validate()?;
        if self.eval_symbols < 2 {
            return Err(Error::config("evaluation needs at least two OFDM symbols"));
        }
        if !(self.sweep.step_deg > 0.0) || self.sweep.to_deg < self.sweep.from_deg {
            return Err(Error::config("invalid angle sweep"));
        }
        self.basis.spec::<f64>().validate()
    }
}

/// Evaluation waveform with its reference grid and measurement bands.
pub struct EvalSet<T: Real> {
    pub a1: IqSignal<T>,
    pub grid: SymbolGrid<T>,
    pub ofdm: OfdmConfig,
    pub bands: AclrBands,
    pub settings: AclrSettings,
}

impl<T: Real> EvalSet<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = cfg.seed.wrapping_add(0x5eed_0000_0000);
        let (a1, grid) = cfg.excitation.realize::<T>(seed, cfg.eval_symbols)?;
        let settings = cfg.aclr_settings();
        let bands = AclrBands::from_signal(&a1, &settings)?;
        let ofdm = OfdmConfig {
            num_symbols: cfg.eval_symbols,
            seed,
            ..cfg.excitation.ofdm.clone()
        };
        Ok(Self {
            a1,
            grid,
            ofdm,
            bands,
            settings,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub main_beam: AclrReport,
    pub trp: TrpAclr,
    pub evm_percent: f64,
    pub nmse_db: f64,
    pub sweep: AngleSweepResult,
}

/// Linearisation metrics of `plant` driven by `a1` through `model`.
pub fn evaluate<T: Real>(
    plant: &ArrayPlant<T>,
    model: Option<&DpdModel<T>>,
    eval: &EvalSet<T>,
    angles: &[f64],
) -> Result<Evaluation> {
    let x = match model {
        Some(m) => predistort(m, &eval.a1)?,
        None => eval.a1.clone(),
    };
    let out = plant.array_forward(&x)?;
    let main = plant.far_field(&out.per_element, plant.steering_deg);
    let res = fit_resolution(main.len(), eval.settings.resolution_bins);
    let main_beam = aclr_in_bands(&main, &eval.bands, res)?;
    let rx = demodulate(&main, &eval.ofdm)?;
    let evm_percent = evm_from_grids(&eval.grid, &rx)?;
    let g = estimate_gain(&eval.a1, &main)?;
    let nmse_db = nmse(&eval.a1, &main.scaled(C::new(T::one(), T::zero()) / g))?;
    let sweep = beam_pattern_with_bands(plant, &out.per_element, angles, &eval.bands, res)?;
    let trp = aclr_trp(&sweep)?;
    Ok(Evaluation {
        main_beam,
        trp,
        evm_percent,
        nmse_db,
        sweep,
    })
}

fn beam_pattern_with_bands<T: Real>(
    plant: &ArrayPlant<T>,
    per_element: &[IqSignal<T>],
    angles: &[f64],
    bands: &AclrBands,
    res: usize,
) -> Result<AngleSweepResult> {
    let mut r = AngleSweepResult {
        angles_deg: angles.to_vec(),
        inband_power: vec![],
        adjacent_power_low: vec![],
        adjacent_power_high: vec![],
        eirp_scale: 1.0,
    };
    for &a in angles {
        let ff = plant.far_field(per_element, lit(a));
        let p = crate::metrics::psd(&ff, res)?;
        let (i, l, h) = bands.powers(&p);
        r.inband_power.push(i);
        r.adjacent_power_low.push(l);
        r.adjacent_power_high.push(h);
    }
    r.validate()?;
    Ok(r)
}

/// Learnt model, trace and evaluation of one method.
#[derive(Debug, Clone)]
pub struct MethodResult<T: Real> {
    pub method: Method,
    pub model: Option<DpdModel<T>>,
    pub trace: Vec<IterationRecord>,
    pub partition: Option<PartitionOutcome<T>>,
    pub evaluation: Evaluation,
}

/// Summary line of a [`MethodResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub aclr_main_dbc: f64,
    pub aclr_trp_dbc: f64,
    pub evm_percent: f64,
    pub nmse_db: f64,
    pub coefficients: usize,
    pub active_coefficients: usize,
    pub regions: usize,
}

impl<T: Real> MethodResult<T> {
    pub fn summary(&self) -> MethodSummary {
        MethodSummary {
            method: self.method,
            aclr_main_dbc: self.evaluation.main_beam.aclr_dbc,
            aclr_trp_dbc: self.evaluation.trp.aclr_dbc,
            evm_percent: self.evaluation.evm_percent,
            nmse_db: self.evaluation.nmse_db,
            coefficients: self.model.as_ref().map_or(0, |m| m.len()),
            active_coefficients: self.model.as_ref().map_or(0, |m| m.pd_count()),
            regions: self.model.as_ref().map_or(0, |m| m.spec.num_regions()),
        }
    }
}

/// Learns the basis for `method`, including the partition when piecewise.
pub fn train<T: Real>(
    cfg: &ExperimentConfig,
    plant: &ArrayPlant<T>,
    method: Method,
) -> Result<(Option<DpdModel<T>>, Vec<IterationRecord>, Option<PartitionOutcome<T>>)> {
    let mut source = PlantSource::new(plant, &cfg.excitation, cfg.seed, cfg.noise_floor_dbc)
        .with_observation_bandwidth(cfg.observation_bandwidth_hz);
    let mut spec = cfg.basis.spec::<T>();
    let mut outcome = None;
    if method.piecewise() {
        let (block, domain) = match method {
            Method::PwIla => (cfg.ila.block_size, PartitionDomain::Observation),
            _ => (cfg.learn.block_size, PartitionDomain::Input),
        };
        // Every region needs enough statistics rows for its whitener.
        let min_rows = 10 * spec.width()?;
        let p = measure_partition(&mut source, &cfg.partition, block, domain, min_rows)?;
        spec = spec.with_partition(p.partition.clone());
        outcome = Some(p);
    }
    match method {
        Method::NoDpd => Ok((None, vec![], None)),
        Method::PwCl | Method::Cl => {
            let (m, t) = learn(&mut source, &spec, &cfg.learn, None)?;
            Ok((Some(m), t, outcome))
        }
        Method::PwIla | Method::Ila => {
            let (m, t) = ila_learn(&mut source, &spec, &cfg.ila)?;
            Ok((Some(m), t, outcome))
        }
    }
}

pub fn run_method<T: Real>(cfg: &ExperimentConfig, method: Method) -> Result<MethodResult<T>> {
    cfg.validate()?;
    let plant = cfg.plant.build::<T>()?;
    let eval = EvalSet::<T>::new(cfg)?;
    run_method_with(cfg, &plant, &eval, method)
}

pub fn run_method_with<T: Real>(
    cfg: &ExperimentConfig,
    plant: &ArrayPlant<T>,
    eval: &EvalSet<T>,
    method: Method,
) -> Result<MethodResult<T>> {
    let (model, trace, partition) = train(cfg, plant, method)?;
    let evaluation = evaluate(plant, model.as_ref(), eval, &cfg.sweep.angles())?;
    Ok(MethodResult {
        method,
        model,
        trace,
        partition,
        evaluation,
    })
}

/// Main-beam ACLR of a fixed model as the beam is steered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringPoint {
    pub steer_deg: f64,
    pub aclr_dbc: f64,
    pub evm_percent: f64,
}

pub fn steering_sweep<T: Real>(
    plant: &ArrayPlant<T>,
    model: Option<&DpdModel<T>>,
    eval: &EvalSet<T>,
    angles_deg: &[f64],
) -> Result<Vec<SteeringPoint>> {
    angles_deg
        .iter()
        .map(|&a| {
            let steered = plant.steer(lit(a));
            let e = evaluate(&steered, model, eval, &[a])?;
            Ok(SteeringPoint {
                steer_deg: a,
                aclr_dbc: e.main_beam.aclr_dbc,
                evm_percent: e.evm_percent,
            })
        })
        .collect()
}
