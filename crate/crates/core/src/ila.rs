//! Indirect-learning baselines: single-polynomial ILA and piecewise ILA.
//!
//! Each iteration fits a postinverse from the gain-normalised observation
//! `y = z/Ĝ` to the transmitter input `ã1` and copies it into the
//! predistorter. With a partition the regions are taken on `|y|` and every
//! region is an independent least-squares problem. No damping is applied
//! between iterations.

use serde::{Deserialize, Serialize};

use crate::basis::{BasisEvaluator, BasisSpec, COVARIANCE_LOADING};
use crate::dpd::{error_signal, estimate_gain, predistort, ClosedLoopSource, DpdModel, IterationRecord};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, CMatrix};
use crate::scalar::{count, db10, lit, to_f64, Real, C};
use crate::signal::IqSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlaConfig {
    pub iterations: usize,
    pub block_size: usize,
}

impl Default for IlaConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            block_size: 50_000,
        }
    }
}

/// Least-squares postinverse coefficients mapping `ψ(y)` onto `target`,
/// solved per region with loading `ε·Σ‖ψ_j‖²/B`.
pub fn fit_postinverse<T: Real>(spec: &BasisSpec<T>, y: &IqSignal<T>, target: &IqSignal<T>) -> Result<Vec<C<T>>> {
    if y.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "postinverse target",
            left: y.len(),
            right: target.len(),
        });
    }
    let ev = BasisEvaluator::new(spec)?;
    let b = ev.width();
    let k = ev.num_regions();
    let mut values = vec![];
    let region = ev.eval_rows(&y.samples, 0, y.len(), &mut values);

    let mut coefs = Vec::with_capacity(b * k);
    for r in 0..k {
        let rows: Vec<usize> = (0..y.len()).filter(|&n| region[n] == r).collect();
        if rows.len() < b {
            return Err(Error::UnderdeterminedRegion {
                region: r,
                rows: rows.len(),
                cols: b,
            });
        }
        let mut data = Vec::with_capacity(rows.len() * b);
        for &n in &rows {
            data.extend_from_slice(&values[n * b..(n + 1) * b]);
        }
        let a = CMatrix::from_rows(rows.len(), b, data)?;
        let rhs: Vec<C<T>> = rows.iter().map(|&n| target.samples[n]).collect();
        let energy: T = a.as_slice().iter().map(|v| v.norm_sqr()).sum();
        let loading = lit::<T>(COVARIANCE_LOADING) * energy / count(b);
        let c = least_squares(&a, &rhs, loading).map_err(|e| match e {
            Error::DegenerateRegion { column, .. } => Error::DegenerateRegion { region: r, column },
            Error::UnderdeterminedRegion { rows, cols, .. } => Error::UnderdeterminedRegion { region: r, rows, cols },
            other => other,
        })?;
        coefs.extend(c);
    }
    Ok(coefs)
}

/// Converts postinverse coefficients into injection form by removing the
/// identity from the linear term of every region.
pub fn postinverse_to_injection<T: Real>(spec: &BasisSpec<T>, coefs: &[C<T>]) -> Result<Vec<C<T>>> {
    let ev = BasisEvaluator::new(spec)?;
    let b = ev.width();
    let lin = ev
        .descriptors()
        .iter()
        .position(|d| d.is_linear())
        .ok_or_else(|| Error::config("basis has no linear term"))?;
    let mut gamma = coefs.to_vec();
    for r in 0..ev.num_regions() {
        gamma[r * b + lin] = gamma[r * b + lin] - C::new(T::one(), T::zero());
    }
    Ok(gamma)
}

/// Indirect learning. A partition in `spec` selects the piecewise variant.
pub fn ila_learn<T: Real, S: ClosedLoopSource<T> + ?Sized>(
    source: &mut S,
    spec: &BasisSpec<T>,
    cfg: &IlaConfig,
) -> Result<(DpdModel<T>, Vec<IterationRecord>)> {
    if cfg.iterations == 0 {
        return Err(Error::config("at least one ILA iteration is required"));
    }
    let mut model = DpdModel::zero(spec.clone())?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut ghat = C::new(T::zero(), T::zero());
    for i in 0..cfg.iterations {
        let a1 = source.next_input(i, cfg.block_size)?;
        let x = predistort(&model, &a1)?;
        let z = source.transmit(&x)?;
        if z.len() != a1.len() {
            return Err(Error::LengthMismatch {
                what: "ila observation",
                left: a1.len(),
                right: z.len(),
            });
        }
        if i == 0 {
            ghat = estimate_gain(&a1, &z)?;
            if ghat.norm() == T::zero() {
                return Err(Error::ZeroEnergy);
            }
        }
        let e = error_signal(&z, &a1, ghat)?;
        let pe = e.power();
        trace.push(IterationRecord {
            iteration: i,
            error_power_dbc: to_f64(db10(pe / z.power())),
            nmse_db: to_f64(db10(pe / (ghat.norm_sqr() * a1.power()))),
            active_bf_count: model.len(),
            zeta_db: vec![],
        });
        let y = z.scaled(C::new(T::one(), T::zero()) / ghat);
        let coefs = fit_postinverse(spec, &y, &x)?;
        model.gamma = postinverse_to_injection(spec, &coefs)?;
        model.ghat = ghat;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_sim::{ArrayPlant, PaModel};
    use crate::linalg::cholesky;
    use crate::partition::RegionPartition;
    use crate::scalar::cplx;
    use crate::waveform::clip_magnitude;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(n: usize, seed: u64, rms: f64) -> IqSignal<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rms * 0.5f64.sqrt();
        let v: Vec<C<f64>> = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                cplx::<f64>(a * s, b * s)
            })
            .collect();
        IqSignal::from_parts(clip_magnitude(&v, 2.2 * rms), 1.0)
    }

    struct Src {
        plant: ArrayPlant<f64>,
        rms: f64,
    }

    impl ClosedLoopSource<f64> for Src {
        fn next_input(&mut self, iteration: usize, len: usize) -> Result<IqSignal<f64>> {
            Ok(gauss(len, 100u64.wrapping_add(iteration as u64), self.rms))
        }
        fn transmit(&mut self, x: &IqSignal<f64>) -> Result<IqSignal<f64>> {
            let out = self.plant.array_forward(x)?;
            self.plant.observation_receive(&out.per_element, None)
        }
    }

    #[test]
    fn linear_plant_gives_identity_postinverse() {
        let mut src = Src {
            plant: ArrayPlant::single(PaModel::linear(cplx::<f64>(0.7, -0.3))),
            rms: 0.5,
        };
        let spec = BasisSpec::memory_poly(5, 2);
        let (m, _) = ila_learn(&mut src, &spec, &IlaConfig { iterations: 2, block_size: 4000 }).unwrap();
        for g in &m.gamma {
            assert!(g.norm() < 1e-8, "{g}");
        }
    }

    #[test]
    fn cubic_plant_residual() {
        let plant = ArrayPlant::single(PaModel::memoryless(&[cplx::<f64>(1.0, 0.0), cplx::<f64>(-0.03, 0.012)]));
        let mut src = Src { plant, rms: 0.5 };
        let spec = BasisSpec::memoryless(7);
        let (_, trace) = ila_learn(&mut src, &spec, &IlaConfig { iterations: 5, block_size: 20_000 }).unwrap();
        // Record i measures the model learnt in i-1; the last one covers 4 fits.
        let last = trace.last().unwrap().nmse_db;
        assert!(last <= -40.0, "{trace:?}");
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let y = gauss(180, 3, 0.8);
        let t = IqSignal::from_parts(
            y.samples.iter().map(|v| v * cplx::<f64>(0.9, 0.1) + v * v.norm_sqr() * cplx::<f64>(0.05, -0.02)).collect(),
            1.0,
        );
        let spec = BasisSpec::<f64>::memory_poly(5, 2);
        let c = fit_postinverse(&spec, &y, &t).unwrap();
        let ev = BasisEvaluator::new(&spec).unwrap();
        let mut vals = vec![];
        ev.eval_rows(&y.samples, 0, y.len(), &mut vals);
        let a = CMatrix::from_rows(y.len(), ev.width(), vals).unwrap();
        let mut g = a.gram(1.0);
        let lam = COVARIANCE_LOADING * g.trace().re / ev.width() as f64;
        for i in 0..ev.width() {
            g[(i, i)] += cplx::<f64>(lam, 0.0);
        }
        let want = cholesky(&g, 0.0).unwrap().solve(&a.adjoint_mul_vec(&t.samples));
        for (u, v) in c.iter().zip(&want) {
            assert!((u - v).norm() < 1e-8 * (1.0 + v.norm()), "{u} {v}");
        }
    }

    #[test]
    fn single_region_partition_is_plain_ila() {
        let plant = ArrayPlant::single(PaModel::memoryless(&[cplx::<f64>(1.0, 0.0), cplx::<f64>(-0.03, 0.012)]));
        let cfg = IlaConfig { iterations: 2, block_size: 3000 };
        let plain = BasisSpec::memory_poly(5, 1);
        let pw = plain.clone().with_partition(RegionPartition::single(10.0));
        let (a, _) = ila_learn(&mut Src { plant: plant.clone(), rms: 0.5 }, &plain, &cfg).unwrap();
        let (b, _) = ila_learn(&mut Src { plant, rms: 0.5 }, &pw, &cfg).unwrap();
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn sparse_region_is_rejected() {
        let y = gauss(500, 5, 0.3);
        let p = RegionPartition::from_boundaries(vec![0.0, 0.5, 0.66, 9.0]).unwrap();
        let spec = BasisSpec::memory_poly(7, 3).with_partition(p);
        let err = fit_postinverse(&spec, &y, &y).unwrap_err();
        assert!(matches!(err, Error::UnderdeterminedRegion { region: 1 | 2, .. }), "{err}");
    }
}
