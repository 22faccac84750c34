//! Low-complexity waveguide switching for unicast: per-user two-stage antenna placement,
//! MRT baseband beamforming and closed-form time sharing.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::channel::{effective_channel, PinchingLayout};
use crate::error::{invalid, PassError, Result};
use crate::kernel::time_allocation;
use crate::rates::{dot, norm_sqr, rate_ws, RateReport};
use crate::scenario::{Geometry, Point3, RfConfig, Scenario, UserLayout};

/// Phase equation accuracy of the aligned-point search, in metres.
const ROOT_TOL_M: f64 = 1e-12;
const MAX_BLOCK_SHIFTS: usize = 32;

/// Antenna layout serving one user.
#[derive(Debug, Clone)]
pub struct PlacementResult {
    pub layout: PinchingLayout,
    /// Largest wrapped phase deviation from the reference antenna, per waveguide (rad).
    pub phase_residual: Vec<f64>,
    /// `sum 1/r` over every antenna.
    pub path_loss_objective: f64,
}

impl PlacementResult {
    pub fn max_phase_residual(&self) -> f64 {
        self.phase_residual.iter().copied().fold(0.0, f64::max)
    }
}

/// `sqrt(P) conj(h) / ||h||`, the single-user optimal beamformer for `dot(h, w)`.
pub fn mrt_beamformer(channel: &[Complex64], p_max: f64) -> Result<Vec<Complex64>> {
    if !(p_max > 0.0) {
        return Err(invalid("p_max", "must be positive"));
    }
    let norm = norm_sqr(channel).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(PassError::ZeroChannel("MRT needs a nonzero channel".into()));
    }
    let scale = p_max.sqrt() / norm;
    Ok(channel.iter().map(|h| h.conj() * scale).collect())
}

/// Wraps a phase difference into `(-pi, pi]`.
pub fn wrap_phase(d: f64) -> f64 {
    let w = (d + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Phase profile of one waveguide seen from one user: `k0 r(x) + kg x`.
#[derive(Debug, Clone, Copy)]
struct PhaseProfile {
    user_x: f64,
    offset_sq: f64,
    k0: f64,
    kg: f64,
}

impl PhaseProfile {
    fn new(user: &Point3, y: f64, height: f64, rf: &RfConfig) -> Self {
        let dy = user.y - y;
        let dz = user.z - height;
        Self {
            user_x: user.x,
            offset_sq: dy * dy + dz * dz,
            k0: rf.wavenumber(),
            kg: rf.guided_wavenumber(),
        }
    }

    fn distance(&self, x: f64) -> f64 {
        let dx = x - self.user_x;
        (dx * dx + self.offset_sq).sqrt()
    }

    fn phase(&self, x: f64) -> f64 {
        self.k0 * self.distance(x) + self.kg * x
    }

    fn slope(&self, x: f64) -> f64 {
        let r = self.distance(x);
        if r > 0.0 {
            self.k0 * (x - self.user_x) / r + self.kg
        } else {
            self.kg
        }
    }

    /// Solves `phase(x) = target` starting from `x0`. The phase is strictly increasing with
    /// slope in `[kg - k0, kg + k0]`, which brackets the root.
    fn solve(&self, target: f64, x0: f64) -> f64 {
        let gap = target - self.phase(x0);
        let reach = gap / (self.kg - self.k0);
        let (mut lo, mut hi) = if gap >= 0.0 { (x0, x0 + reach) } else { (x0 + reach, x0) };
        let mut x = x0 + gap / self.slope(x0);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let f = self.phase(x) - target;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut next = x - f / self.slope(x);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - x).abs();
            x = next;
            if step < ROOT_TOL_M || hi - lo < ROOT_TOL_M {
                break;
            }
        }
        x
    }
}

/// Stage one: an `N`-antenna block at spacing `delta`, centered on the user's projection
/// clamped so the block fits the waveguide.
pub fn stage_one_block(user_x: f64, geometry: &Geometry) -> Vec<f64> {
    let n = geometry.antennas_per_waveguide;
    let l = geometry.waveguide_length_m;
    let delta = geometry.min_antenna_spacing_m;
    let half = (n - 1) as f64 * delta / 2.0;
    let center = user_x.clamp(half, l - half);
    block_at(center, n, delta)
}

fn block_at(center: f64, n: usize, delta: f64) -> Vec<f64> {
    let mid = (n - 1) as f64 / 2.0;
    (0..n).map(|j| center + (j as f64 - mid) * delta).collect()
}

/// Snaps every antenna of `block` to a position in phase with the reference antenna,
/// walking outwards and skipping to the next aligned point whenever spacing would break.
fn align_block(profile: &PhaseProfile, block: &[f64], delta: f64) -> Vec<f64> {
    let n = block.len();
    let r = (n - 1) / 2;
    let phi_ref = profile.phase(block[r]);
    let two_pi = 2.0 * PI;
    let mut row = block.to_vec();
    for j in r + 1..n {
        let mut m = ((profile.phase(block[j]) - phi_ref) / two_pi).round();
        let mut x = profile.solve(phi_ref + two_pi * m, block[j]);
        while x < row[j - 1] + delta {
            m += 1.0;
            x = profile.solve(phi_ref + two_pi * m, x);
        }
        row[j] = x;
    }
    for j in (0..r).rev() {
        let mut m = ((profile.phase(block[j]) - phi_ref) / two_pi).round();
        let mut x = profile.solve(phi_ref + two_pi * m, block[j]);
        while x > row[j + 1] - delta {
            m -= 1.0;
            x = profile.solve(phi_ref + two_pi * m, x);
        }
        row[j] = x;
    }
    row
}

fn place_waveguide(user: &Point3, i: usize, geometry: &Geometry, rf: &RfConfig) -> Result<(Vec<f64>, f64)> {
    let n = geometry.antennas_per_waveguide;
    let l = geometry.waveguide_length_m;
    let delta = geometry.min_antenna_spacing_m;
    if n == 1 {
        return Ok((vec![user.x.clamp(0.0, l)], 0.0));
    }
    let profile = PhaseProfile::new(user, geometry.waveguide_y_coords_m[i], geometry.height_m, rf);
    let half = (n - 1) as f64 * delta / 2.0;
    let mut center = user.x.clamp(half, l - half);
    for _ in 0..MAX_BLOCK_SHIFTS {
        let row = align_block(&profile, &block_at(center, n, delta), delta);
        let over = row[n - 1] - l;
        let under = -row[0];
        if over > 0.0 && under > 0.0 {
            break;
        }
        if over > 0.0 {
            center -= over + delta;
            continue;
        }
        if under > 0.0 {
            center += under + delta;
            continue;
        }
        let r = (n - 1) / 2;
        let phi_ref = profile.phase(row[r]);
        let residual = row
            .iter()
            .map(|&x| wrap_phase(profile.phase(x) - phi_ref).abs())
            .fold(0.0, f64::max);
        return Ok((row, residual));
    }
    Err(PassError::AlignmentFailed {
        waveguide: i,
        reason: format!("no phase-aligned block of {n} antennas fits in [0, {l}] m"),
    })
}

/// Start layout that splits each waveguide's antennas among `targets[i]`: one phase-aligned
/// block per target user, sized `N / len` (the first blocks take the remainder), then pushed
/// apart to restore spacing. A waveguide without targets keeps the evenly spread row.
pub fn user_block_layout(
    users: &[Point3],
    targets: &[Vec<usize>],
    geometry: &Geometry,
    rf: &RfConfig,
) -> Result<PinchingLayout> {
    let n = geometry.antennas_per_waveguide;
    let l = geometry.waveguide_length_m;
    let delta = geometry.min_antenna_spacing_m;
    let uniform = PinchingLayout::uniform(geometry);
    let mut rows = Vec::with_capacity(geometry.num_waveguides);
    for i in 0..geometry.num_waveguides {
        let mut who: Vec<usize> = targets.get(i).cloned().unwrap_or_default();
        if who.is_empty() {
            rows.push(uniform.row(i).to_vec());
            continue;
        }
        who.sort_by(|a, b| users[*a].x.total_cmp(&users[*b].x));
        who.truncate(n);
        let g = who.len();
        let mut row = Vec::with_capacity(n);
        for (c, &u) in who.iter().enumerate() {
            let count = n / g + usize::from(c < n % g);
            let half = (count - 1) as f64 * delta / 2.0;
            let center = users[u].x.clamp(half, l - half);
            let block = block_at(center, count, delta);
            if count == 1 {
                row.extend(block);
            } else {
                let profile = PhaseProfile::new(&users[u], geometry.waveguide_y_coords_m[i], geometry.height_m, rf);
                row.extend(align_block(&profile, &block, delta));
            }
        }
        row.sort_by(f64::total_cmp);
        row[0] = row[0].max(0.0);
        for j in 1..n {
            row[j] = row[j].max(row[j - 1] + delta);
        }
        row[n - 1] = row[n - 1].min(l);
        for j in (0..n - 1).rev() {
            row[j] = row[j].min(row[j + 1] - delta);
        }
        rows.push(row);
    }
    PinchingLayout::new(rows, geometry)
}

/// Two-stage placement for one user: large-scale centering, then phase snapping on every
/// waveguide independently.
pub fn two_stage_placement(user: &Point3, geometry: &Geometry, rf: &RfConfig) -> Result<PlacementResult> {
    let mut rows = Vec::with_capacity(geometry.num_waveguides);
    let mut phase_residual = Vec::with_capacity(geometry.num_waveguides);
    for i in 0..geometry.num_waveguides {
        let (row, res) = place_waveguide(user, i, geometry, rf)?;
        rows.push(row);
        phase_residual.push(res);
    }
    let layout = PinchingLayout::new(rows, geometry)?;
    let path_loss_objective = path_loss_objective(user, &layout, geometry);
    Ok(PlacementResult {
        layout,
        phase_residual,
        path_loss_objective,
    })
}

/// `sum_i sum_n 1 / r_{i,n}` for one user.
pub fn path_loss_objective(user: &Point3, layout: &PinchingLayout, geometry: &Geometry) -> f64 {
    (0..geometry.num_waveguides)
        .flat_map(|i| (0..geometry.antennas_per_waveguide).map(move |n| (i, n)))
        .map(|(i, n)| 1.0 / crate::channel::antenna_user_distance(user, layout, geometry, i, n))
        .sum()
}

/// Per-waveguide coherent-combining ratio `|sum_n e^{-j phi_n} / r_n| / sum_n 1 / r_n`.
pub fn coherent_ratio(user: &Point3, layout: &PinchingLayout, geometry: &Geometry, rf: &RfConfig) -> Vec<f64> {
    (0..geometry.num_waveguides)
        .map(|i| {
            let mut sum = Complex64::new(0.0, 0.0);
            let mut mag = 0.0;
            for n in 0..geometry.antennas_per_waveguide {
                let r = crate::channel::antenna_user_distance(user, layout, geometry, i, n);
                let phi = crate::channel::phase_phi(user, layout, geometry, i, n, rf);
                sum += Complex64::from_polar(1.0 / r, -phi);
                mag += 1.0 / r;
            }
            sum.norm() / mag
        })
        .collect()
}

/// Time-shared unicast schedule: one layout and one beamformer per user.
#[derive(Debug, Clone)]
pub struct UnicastSchedule {
    pub layouts: Vec<PinchingLayout>,
    pub beamformers: Vec<Vec<Complex64>>,
    pub time_shares: Vec<f64>,
    pub report: RateReport,
}

impl UnicastSchedule {
    pub fn min_rate(&self) -> f64 {
        self.report.min_rate
    }
}

fn require_unicast(users: &UserLayout) -> Result<()> {
    if users.users_per_group != 1 {
        return Err(invalid("users", "unicast scheduling needs exactly one user per group"));
    }
    Ok(())
}

/// MRT for each user's own layout, then the max-min time split.
fn mrt_schedule(scenario: &Scenario, users: &UserLayout, layouts: Vec<PinchingLayout>) -> Result<UnicastSchedule> {
    let geometry = &scenario.geometry;
    let rf = &scenario.rf;
    let mut beamformers = Vec::with_capacity(layouts.len());
    let mut slot_rates = Vec::with_capacity(layouts.len());
    for (p, layout) in users.positions.iter().zip(&layouts) {
        let h = effective_channel(p, layout, geometry, rf);
        let w = mrt_beamformer(&h, rf.max_transmit_power_w)?;
        slot_rates.push((1.0 + dot(&h, &w).norm_sqr() / rf.noise_power_w).log2());
        beamformers.push(w);
    }
    let (time_shares, _) = time_allocation(&slot_rates)?;
    let report = rate_ws(&layouts, &beamformers, &time_shares, users, geometry, rf);
    Ok(UnicastSchedule {
        layouts,
        beamformers,
        time_shares,
        report,
    })
}

/// Placement, MRT and time allocation for every unicast user.
pub fn solve_unicast_ws(scenario: &Scenario, users: &UserLayout) -> Result<UnicastSchedule> {
    require_unicast(users)?;
    let layouts = users
        .positions
        .iter()
        .map(|p| two_stage_placement(p, &scenario.geometry, &scenario.rf).map(|r| r.layout))
        .collect::<Result<Vec<_>>>()?;
    mrt_schedule(scenario, users, layouts)
}

/// Same schedule with the evenly spread layout in every slot.
pub fn uniform_unicast_ws(scenario: &Scenario, users: &UserLayout) -> Result<UnicastSchedule> {
    require_unicast(users)?;
    let layouts = vec![PinchingLayout::uniform(&scenario.geometry); users.num_users()];
    mrt_schedule(scenario, users, layouts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, ScenarioConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unicast_config() -> ScenarioConfig {
        ScenarioConfig {
            g_users: 1,
            ..ScenarioConfig::default()
        }
    }

    fn random_channel(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn mrt_axis_aligned_and_full_power() {
        let w = mrt_beamformer(&[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], 4.0).unwrap();
        assert_relative_eq!(w[0].re, 2.0, epsilon = 1e-15);
        assert_eq!(w[1], Complex64::new(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_channel(&mut rng, 3);
        let w = mrt_beamformer(&h, 0.7).unwrap();
        assert_relative_eq!(norm_sqr(&w), 0.7, max_relative = 1e-14);
        assert_relative_eq!(dot(&h, &w).norm_sqr(), 0.7 * norm_sqr(&h), max_relative = 1e-12);
    }

    #[test]
    fn mrt_beats_random_competitors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_channel(&mut rng, 4);
        let best = dot(&h, &mrt_beamformer(&h, 1.0).unwrap()).norm_sqr();
        for _ in 0..1000 {
            let v = random_channel(&mut rng, 4);
            let scale = 1.0 / norm_sqr(&v).sqrt();
            let v: Vec<Complex64> = v.iter().map(|c| c * scale).collect();
            assert!(dot(&h, &v).norm_sqr() <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mrt_rejects_zero_channel() {
        assert!(matches!(
            mrt_beamformer(&[Complex64::new(0.0, 0.0); 2], 1.0),
            Err(PassError::ZeroChannel(_))
        ));
    }

    #[test]
    fn wrap_phase_range() {
        assert_relative_eq!(wrap_phase(2.0 * PI + 0.1), 0.1, epsilon = 1e-12);
        assert_relative_eq!(wrap_phase(-PI), PI, epsilon = 1e-15);
        assert_relative_eq!(wrap_phase(-0.3 - 4.0 * PI), -0.3, epsilon = 1e-12);
    }

    #[test]
    fn phase_root_solver_hits_target() {
        let s = build_scenario(&ScenarioConfig::default(), 20.0).unwrap();
        let user = Point3::ground(3.0, -4.0);
        let prof = PhaseProfile::new(&user, -2.5, 3.0, &s.rf);
        for &x0 in &[0.0, 2.9, 3.0, 3.1, 9.7] {
            for &dphi in &[-20.0, -3.0, 0.0, 0.5, 6.0, 40.0] {
                let target = prof.phase(x0) + dphi;
                let x = prof.solve(target, x0);
                assert!((prof.phase(x) - target).abs() < 1e-6, "x0 {x0} dphi {dphi}");
            }
        }
    }

    #[test]
    fn single_antenna_sits_at_clamped_projection() {
        let cfg = ScenarioConfig {
            n_pas: 1,
            ..unicast_config()
        };
        let s = build_scenario(&cfg, 20.0).unwrap();
        for (ux, want) in [(3.3, 3.3), (-1.0, 0.0), (12.0, 10.0)] {
            let res = two_stage_placement(&Point3::ground(ux, 2.0), &s.geometry, &s.rf).unwrap();
            assert_relative_eq!(res.layout.x(0, 0), want, epsilon = 1e-15);
            assert_eq!(res.max_phase_residual(), 0.0);
        }
    }

    #[test]
    fn stage_one_centers_on_the_user() {
        let cfg = ScenarioConfig {
            n_pas: 4,
            ..unicast_config()
        };
        let s = build_scenario(&cfg, 20.0).unwrap();
        let block = stage_one_block(5.0, &s.geometry);
        let mean = block.iter().sum::<f64>() / 4.0;
        assert_relative_eq!(mean, 5.0, epsilon = 1e-12);
        let delta = s.geometry.min_antenna_spacing_m;
        for w in block.windows(2) {
            assert_relative_eq!(w[1] - w[0], delta, epsilon = 1e-12);
        }
        let end = stage_one_block(10.0, &s.geometry);
        assert_relative_eq!(end[3], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn placement_is_coherent_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 4, 8, 12] {
            let cfg = ScenarioConfig {
                n_pas: n,
                ..unicast_config()
            };
            let s = build_scenario(&cfg, 20.0).unwrap();
            for t in 0..50 {
                let ux = match t {
                    0 => 0.0,
                    1 => 10.0,
                    _ => rng.gen_range(0.0..10.0),
                };
                let user = Point3::ground(ux, rng.gen_range(-6.0..6.0));
                let res = two_stage_placement(&user, &s.geometry, &s.rf).unwrap();
                assert_eq!(res.layout.max_violation(&s.geometry), 0.0);
                assert!(res.max_phase_residual() < 1e-6, "residual {}", res.max_phase_residual());
                for ratio in coherent_ratio(&user, &res.layout, &s.geometry, &s.rf) {
                    assert!(ratio >= 0.999, "ratio {ratio}");
                }
                let lead = res.layout.row(0)[0];
                assert!((lead - stage_one_block(ux, &s.geometry)[0]).abs() < 0.1);
            }
        }
    }

    #[test]
    fn user_blocks_are_feasible_and_near_their_users() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 3, 4, 8, 12] {
            let cfg = ScenarioConfig {
                n_pas: n,
                ..ScenarioConfig::default()
            };
            let s = build_scenario(&cfg, 20.0).unwrap();
            for _ in 0..20 {
                let users: Vec<Point3> = (0..4)
                    .map(|_| Point3::ground(rng.gen_range(0.0..10.0), rng.gen_range(-6.0..6.0)))
                    .collect();
                let targets = vec![vec![0, 1], vec![]];
                let layout = user_block_layout(&users, &targets, &s.geometry, &s.rf).unwrap();
                assert!(layout.max_violation(&s.geometry) <= 1e-12);
                assert_eq!(layout.row(1), PinchingLayout::uniform(&s.geometry).row(1));
                let nearest = users[..2].iter().map(|u| (u.x - layout.row(0)[0]).abs()).fold(f64::INFINITY, f64::min);
                assert!(nearest < 0.1 + n as f64 * s.geometry.min_antenna_spacing_m * 2.0, "lead {}", layout.row(0)[0]);
            }
        }
    }

    #[test]
    fn single_user_gets_the_whole_frame() {
        let cfg = ScenarioConfig {
            k_waveguides: 1,
            ..unicast_config()
        };
        let s = build_scenario(&cfg, 20.0).unwrap();
        let users = s.sample_users(3).unwrap();
        let sol = solve_unicast_ws(&s, &users).unwrap();
        assert_eq!(sol.time_shares, vec![1.0]);
        let h = effective_channel(&users.positions[0], &sol.layouts[0], &s.geometry, &s.rf);
        let rate = (1.0 + s.rf.max_transmit_power_w * norm_sqr(&h) / s.rf.noise_power_w).log2();
        assert_relative_eq!(sol.min_rate(), rate, max_relative = 1e-12);
    }

    #[test]
    fn mirrored_users_split_time_evenly() {
        let s = build_scenario(&unicast_config(), 20.0).unwrap();
        let users = UserLayout::new(2, 1, vec![Point3::ground(4.2, -3.7), Point3::ground(4.2, 3.7)]).unwrap();
        let sol = solve_unicast_ws(&s, &users).unwrap();
        assert_relative_eq!(sol.time_shares[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.time_shares[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn beats_uniform_layout_on_every_seed() {
        let s = build_scenario(&unicast_config(), 20.0).unwrap();
        for seed in 0..30 {
            let users = s.sample_users(seed).unwrap();
            let placed = solve_unicast_ws(&s, &users).unwrap();
            let uniform = uniform_unicast_ws(&s, &users).unwrap();
            assert!(placed.min_rate() >= uniform.min_rate(), "seed {seed}");
            let power: f64 = placed.beamformers.iter().map(|w| norm_sqr(w)).fold(0.0, f64::max);
            assert!(power <= s.rf.max_transmit_power_w * (1.0 + 1e-9));
            assert_relative_eq!(placed.time_shares.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_multicast_groups() {
        let s = build_scenario(&ScenarioConfig::default(), 20.0).unwrap();
        let users = s.sample_users(0).unwrap();
        assert!(solve_unicast_ws(&s, &users).is_err());
    }
}
