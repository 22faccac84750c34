//! Fixed-position MIMO baselines: a fully-digital uniform linear array and a
//! sub-connected hybrid array fitted to the fully-digital solution.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, PassError, Result};
use crate::kernel::maxmin_quadratics_ball;
use crate::pdd::{optimal_mu, stream_quadratics};
use crate::rates::{dot, multistream_report, norm_sqr, total_power, RateReport};
use crate::scenario::{Point3, RfConfig, UserLayout};

const IMPROVEMENT_TOL: f64 = 1e-3;
const MAX_ROUNDS: usize = 100;
const HYBRID_ROUNDS: usize = 20;

/// Uniform linear array along the x-axis.
#[derive(Debug, Clone, PartialEq)]
pub struct UlaGeometry {
    pub centroid: Point3,
    pub spacing_m: f64,
    pub elements: usize,
}

impl UlaGeometry {
    pub fn new(centroid: Point3, spacing_m: f64, elements: usize) -> Result<Self> {
        if !(spacing_m > 0.0 && spacing_m.is_finite()) {
            return Err(invalid("spacing_m", "must be positive"));
        }
        if elements == 0 {
            return Err(invalid("elements", "need at least one element"));
        }
        Ok(Self {
            centroid,
            spacing_m,
            elements,
        })
    }

    /// Half-wavelength array centered at (5, 0, 3) m.
    pub fn standard(elements: usize, rf: &RfConfig) -> Result<Self> {
        Self::new(Point3::new(5.0, 0.0, 3.0), rf.free_space_wavelength_m / 2.0, elements)
    }

    pub fn positions(&self) -> Vec<Point3> {
        let mid = (self.elements - 1) as f64 / 2.0;
        (0..self.elements)
            .map(|m| {
                Point3::new(
                    self.centroid.x + (m as f64 - mid) * self.spacing_m,
                    self.centroid.y,
                    self.centroid.z,
                )
            })
            .collect()
    }
}

/// LoS row `eta e^{-j k r_m} / r_m` from every array element to the user.
pub fn ula_channel(user: &Point3, ula: &UlaGeometry, rf: &RfConfig) -> Vec<Complex64> {
    let k0 = rf.wavenumber();
    ula.positions()
        .iter()
        .map(|p| {
            let r = p.distance(user);
            Complex64::from_polar(rf.reference_gain / r, -k0 * r)
        })
        .collect()
}

/// Max-min beamformers for fixed channels, one stream per group.
#[derive(Debug, Clone)]
pub struct DigitalSolution {
    pub beamformers: Vec<Vec<Complex64>>,
    pub report: RateReport,
    pub iterations: usize,
}

impl DigitalSolution {
    pub fn min_rate(&self) -> f64 {
        self.report.min_rate
    }
}

/// Rescales so the total power is exactly `p_max`.
fn fill_budget(beamformers: &mut [Vec<Complex64>], p_max: f64) {
    let p = total_power(beamformers);
    if p > 0.0 {
        let s = (p_max / p).sqrt();
        beamformers.iter_mut().flatten().for_each(|c| *c *= s);
    }
}

/// Quadratic-transform alternation on fixed channels, started from per-group MRT.
///
/// Channels are scaled by `sqrt(p_max / noise)` so the solver sees unit noise and a unit ball.
pub fn maxmin_fixed_channels(
    channels: &[Vec<Complex64>],
    stream_of: &[usize],
    streams: usize,
    p_max: f64,
    noise: f64,
) -> Result<DigitalSolution> {
    if channels.is_empty() || streams == 0 || stream_of.len() != channels.len() {
        return Err(PassError::ShapeMismatch("channels and stream assignment disagree".into()));
    }
    if !(p_max > 0.0 && noise > 0.0) {
        return Err(invalid("p_max", "power and noise must be positive"));
    }
    let dim = channels[0].len();
    let scale = (p_max / noise).sqrt();
    let h: Vec<Vec<Complex64>> = channels.iter().map(|c| c.iter().map(|v| v * scale).collect()).collect();
    let mut w: Vec<Vec<Complex64>> = (0..streams)
        .map(|k| {
            let mut sum = vec![Complex64::new(0.0, 0.0); dim];
            for (hj, _) in h.iter().zip(stream_of).filter(|(_, &s)| s == k) {
                for (acc, v) in sum.iter_mut().zip(hj) {
                    *acc += v.conj() / norm_sqr(hj).sqrt();
                }
            }
            sum
        })
        .collect();
    fill_budget(&mut w, 1.0);
    let worst = |w: &[Vec<Complex64>]| multistream_report(&h, stream_of, w, 1.0).min_rate;
    let mut current = worst(&w);
    let mut iterations = 0;
    while iterations < MAX_ROUNDS {
        iterations += 1;
        let mu: Vec<Complex64> = h
            .iter()
            .zip(stream_of)
            .map(|(hj, &k)| optimal_mu(hj, &w, k, 1.0))
            .collect();
        let fs = stream_quadratics(&h, stream_of, streams, &mu, 1.0);
        let warm: Vec<Complex64> = w.iter().flatten().copied().collect();
        let z = maxmin_quadratics_ball(&fs, 1.0, Some(&warm))?.complex_optimizer();
        let mut next: Vec<Vec<Complex64>> = (0..streams).map(|s| z[s * dim..(s + 1) * dim].to_vec()).collect();
        fill_budget(&mut next, 1.0);
        let value = worst(&next);
        if value < current {
            break;
        }
        let gain = (value - current) / current.abs().max(1e-12);
        w = next;
        current = value;
        if gain < IMPROVEMENT_TOL {
            break;
        }
    }
    let p_scale = p_max.sqrt();
    let beamformers: Vec<Vec<Complex64>> = w.iter().map(|v| v.iter().map(|c| c * p_scale).collect()).collect();
    let report = multistream_report(channels, stream_of, &beamformers, noise);
    Ok(DigitalSolution {
        beamformers,
        report,
        iterations,
    })
}

fn group_streams(users: &UserLayout) -> Vec<usize> {
    (0..users.num_users()).map(|u| users.group_of(u)).collect()
}

/// Fully-digital array: one RF chain per element, max-min over all groups.
pub fn fulldigital_mmf(users: &UserLayout, ula: &UlaGeometry, rf: &RfConfig) -> Result<DigitalSolution> {
    let channels: Vec<Vec<Complex64>> = users.positions.iter().map(|p| ula_channel(p, ula, rf)).collect();
    maxmin_fixed_channels(
        &channels,
        &group_streams(users),
        users.group_count,
        rf.max_transmit_power_w,
        rf.noise_power_w,
    )
}

/// Sub-connected factorization `F ~ A D`: block k of `A` (rows `k*block..(k+1)*block`, column k)
/// has unit-modulus entries, everything else is zero.
#[derive(Debug, Clone)]
pub struct SubConnectedFit {
    pub analog: DMatrix<Complex64>,
    pub digital: DMatrix<Complex64>,
    /// `||F - A D||_F`.
    pub residual: f64,
}

fn phase_only(c: Complex64) -> Complex64 {
    if c.norm() > 0.0 {
        c / c.norm()
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Least-squares digital stage for fixed analog phases. Columns of `A` are orthogonal with
/// squared norm `block`.
fn digital_fit(analog: &DMatrix<Complex64>, target: &DMatrix<Complex64>, block: usize) -> DMatrix<Complex64> {
    analog.adjoint() * target / Complex64::new(block as f64, 0.0)
}

/// Alternating phase extraction and least squares, started from each block's dominant
/// left singular vector.
pub fn factorize_sub_connected(target: &DMatrix<Complex64>, chains: usize, block: usize, rounds: usize) -> Result<SubConnectedFit> {
    if block == 0 || target.nrows() != chains * block {
        return Err(PassError::ShapeMismatch(format!(
            "{} rows cannot split into {chains} blocks of {block}",
            target.nrows()
        )));
    }
    let mut analog = DMatrix::zeros(chains * block, chains);
    for k in 0..chains {
        let rows = target.rows(k * block, block).into_owned();
        let svd = rows.svd(true, false);
        let u = svd.u.ok_or_else(|| PassError::ShapeMismatch("singular vectors unavailable".into()))?;
        let lead = svd.singular_values.imax();
        for n in 0..block {
            analog[(k * block + n, k)] = phase_only(u[(n, lead)]);
        }
    }
    let mut digital = digital_fit(&analog, target, block);
    for _ in 0..rounds {
        for k in 0..chains {
            let d = digital.row(k).into_owned();
            for n in 0..block {
                let m = k * block + n;
                let c: Complex64 = (0..target.ncols()).map(|s| target[(m, s)] * d[s].conj()).sum();
                analog[(m, k)] = phase_only(c);
            }
        }
        digital = digital_fit(&analog, target, block);
    }
    let residual = (target - &analog * &digital).norm();
    Ok(SubConnectedFit {
        analog,
        digital,
        residual,
    })
}

#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub fit: SubConnectedFit,
    /// Element-domain precoders `A d_k`, rescaled to the power budget.
    pub precoders: Vec<Vec<Complex64>>,
    pub report: RateReport,
}

impl HybridSolution {
    pub fn min_rate(&self) -> f64 {
        self.report.min_rate
    }
}

/// Hybrid array with one RF chain per group driving `block` elements each: the fully-digital
/// solution on the same array is fitted by a sub-connected factorization. With the analog
/// phases fixed, the digital stage is then re-solved as a max-min problem on the reduced
/// channels `h A` and kept if it beats the least-squares fit.
pub fn hybrid_mmf(users: &UserLayout, ula: &UlaGeometry, rf: &RfConfig, block: usize) -> Result<HybridSolution> {
    let chains = users.group_count;
    if ula.elements != chains * block {
        return Err(PassError::ShapeMismatch(format!(
            "{} elements cannot split into {chains} blocks of {block}",
            ula.elements
        )));
    }
    let full = fulldigital_mmf(users, ula, rf)?;
    let target = DMatrix::from_fn(ula.elements, chains, |m, k| full.beamformers[k][m]);
    let fit = factorize_sub_connected(&target, chains, block, HYBRID_ROUNDS)?;
    let channels: Vec<Vec<Complex64>> = users.positions.iter().map(|p| ula_channel(p, ula, rf)).collect();
    let effective = &fit.analog * &fit.digital;
    let mut precoders: Vec<Vec<Complex64>> = (0..chains).map(|k| effective.column(k).iter().copied().collect()).collect();
    fill_budget(&mut precoders, rf.max_transmit_power_w);
    let streams = group_streams(users);
    let reduced: Vec<Vec<Complex64>> = channels
        .iter()
        .map(|h| (0..chains).map(|k| (0..ula.elements).map(|m| h[m] * fit.analog[(m, k)]).sum()).collect())
        .collect();
    let digital = maxmin_fixed_channels(&reduced, &streams, chains, rf.max_transmit_power_w / block as f64, rf.noise_power_w)?;
    let mut refined: Vec<Vec<Complex64>> = digital
        .beamformers
        .iter()
        .map(|d| (0..ula.elements).map(|m| (0..chains).map(|k| fit.analog[(m, k)] * d[k]).sum()).collect())
        .collect();
    fill_budget(&mut refined, rf.max_transmit_power_w);
    let fitted = multistream_report(&channels, &streams, &precoders, rf.noise_power_w);
    let resolved = multistream_report(&channels, &streams, &refined, rf.noise_power_w);
    let (precoders, report) = if resolved.min_rate > fitted.min_rate {
        (refined, resolved)
    } else {
        (precoders, fitted)
    };
    Ok(HybridSolution {
        fit,
        precoders,
        report,
    })
}

/// Single-user rate `log2(1 + P ||h||^2 / noise)` reached by MRT on a fixed array.
pub fn single_user_rate(channel: &[Complex64], rf: &RfConfig) -> f64 {
    (1.0 + rf.max_transmit_power_w * norm_sqr(channel) / rf.noise_power_w).log2()
}

/// Received amplitude `|h w|` of every user for the given precoders.
pub fn received_amplitudes(channels: &[Vec<Complex64>], precoders: &[Vec<Complex64>], stream_of: &[usize]) -> Vec<f64> {
    channels
        .iter()
        .zip(stream_of)
        .map(|(h, &k)| dot(h, &precoders[k]).norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{user_channel, PinchingLayout};
    use crate::scenario::{build_scenario, Geometry, Scenario, ScenarioConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario() -> Scenario {
        build_scenario(&ScenarioConfig::default(), 20.0).unwrap()
    }

    fn cplx(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn ula_positions_are_centered_and_spaced() {
        let s = scenario();
        let ula = UlaGeometry::standard(4, &s.rf).unwrap();
        let p = ula.positions();
        let mean = p.iter().map(|q| q.x).sum::<f64>() / 4.0;
        assert_relative_eq!(mean, 5.0, epsilon = 1e-12);
        assert_relative_eq!(p[1].x - p[0].x, s.rf.free_space_wavelength_m / 2.0, epsilon = 1e-15);
        assert!(p.iter().all(|q| q.y == 0.0 && q.z == 3.0));
        assert!(UlaGeometry::new(Point3::new(0.0, 0.0, 1.0), 0.0, 2).is_err());
    }

    #[test]
    fn ula_channel_single_element_and_symmetry() {
        let s = scenario();
        let one = UlaGeometry::standard(1, &s.rf).unwrap();
        let user = Point3::ground(5.0, 4.0);
        let h = ula_channel(&user, &one, &s.rf);
        assert_relative_eq!(h[0].norm(), s.rf.reference_gain / 5.0, max_relative = 1e-12);
        let two = UlaGeometry::standard(2, &s.rf).unwrap();
        let h = ula_channel(&user, &two, &s.rf);
        assert_relative_eq!(h[0].norm(), h[1].norm(), max_relative = 1e-12);
    }

    #[test]
    fn ula_channel_matches_antenna_channel_model() {
        let s = scenario();
        let ula = UlaGeometry::standard(3, &s.rf).unwrap();
        let g = Geometry::new(1, 3, 10.0, 3.0, vec![0.0], ula.spacing_m).unwrap();
        let row: Vec<f64> = ula.positions().iter().map(|p| p.x).collect();
        let layout = PinchingLayout::new(vec![row], &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let user = Point3::ground(rng.gen_range(0.0..10.0), rng.gen_range(-8.0..8.0));
            let a = ula_channel(&user, &ula, &s.rf);
            let b = user_channel(&user, &layout, &g, &s.rf);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() <= 1e-12 * y.norm());
            }
        }
    }

    #[test]
    fn single_user_reaches_mrt_rate() {
        let s = scenario();
        let ula = UlaGeometry::standard(2, &s.rf).unwrap();
        let users = UserLayout::new(1, 1, vec![Point3::ground(3.0, 2.5)]).unwrap();
        let sol = fulldigital_mmf(&users, &ula, &s.rf).unwrap();
        let h = ula_channel(&users.positions[0], &ula, &s.rf);
        assert_relative_eq!(sol.min_rate(), single_user_rate(&h, &s.rf), max_relative = 1e-6);
    }

    #[test]
    fn orthogonal_users_split_power_evenly() {
        let g = 3.0;
        let channels = vec![
            vec![Complex64::new(g, 0.0), Complex64::new(0.0, 0.0)],
            vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, g)],
        ];
        let sol = maxmin_fixed_channels(&channels, &[0, 1], 2, 2.0, 1.0).unwrap();
        assert_relative_eq!(sol.report.rates[0], sol.report.rates[1], max_relative = 1e-6);
        assert_relative_eq!(norm_sqr(&sol.beamformers[0]), 1.0, max_relative = 1e-5);
        let grid_best = (0..=2000)
            .map(|i| {
                let p = 2.0 * i as f64 / 2000.0;
                (1.0 + p * g * g).log2().min((1.0 + (2.0 - p) * g * g).log2())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(sol.min_rate(), grid_best, max_relative = 1e-6);
    }

    #[test]
    fn realizable_targets_factor_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (chains, block) in [(1, 4), (2, 3), (3, 2)] {
            let mut a = DMatrix::zeros(chains * block, chains);
            for k in 0..chains {
                for n in 0..block {
                    a[(k * block + n, k)] = phase_only(cplx(&mut rng));
                }
            }
            let d = DMatrix::from_fn(chains, chains, |_, _| cplx(&mut rng));
            let target = &a * &d;
            let fit = factorize_sub_connected(&target, chains, block, HYBRID_ROUNDS).unwrap();
            assert!(fit.residual < 1e-9 * target.norm(), "residual {}", fit.residual);
            for k in 0..chains {
                for m in 0..chains * block {
                    let v = fit.analog[(m, k)].norm();
                    let on_block = m / block == k;
                    assert_relative_eq!(v, if on_block { 1.0 } else { 0.0 }, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn unit_blocks_reproduce_fully_digital() {
        let s = scenario();
        let ula = UlaGeometry::standard(2, &s.rf).unwrap();
        for seed in 0..5 {
            let users = s.sample_users(seed).unwrap();
            let full = fulldigital_mmf(&users, &ula, &s.rf).unwrap();
            let hybrid = hybrid_mmf(&users, &ula, &s.rf, 1).unwrap();
            assert_relative_eq!(hybrid.min_rate(), full.min_rate(), max_relative = 1e-6);
        }
    }

    #[test]
    fn hybrid_never_beats_its_fully_digital_array() {
        let s = scenario();
        let n = 4;
        let ula = UlaGeometry::standard(2 * n, &s.rf).unwrap();
        for seed in 0..8 {
            let users = s.sample_users(seed).unwrap();
            let full = fulldigital_mmf(&users, &ula, &s.rf).unwrap();
            let hybrid = hybrid_mmf(&users, &ula, &s.rf, n).unwrap();
            assert!(hybrid.min_rate() <= full.min_rate() * (1.0 + 1e-9), "seed {seed}");
            let p = s.rf.max_transmit_power_w;
            assert!((total_power(&hybrid.precoders) - p).abs() <= 1e-9 * p);
            assert!(total_power(&full.beamformers) <= p * (1.0 + 1e-9));
        }
    }

    #[test]
    fn hybrid_rejects_bad_block_split() {
        let s = scenario();
        let ula = UlaGeometry::standard(5, &s.rf).unwrap();
        let users = s.sample_users(0).unwrap();
        assert!(hybrid_mmf(&users, &ula, &s.rf, 2).is_err());
    }
}
