//! Physical constants, waveguide geometry and random user placement.
//!
//! All quantities are SI (meters, watts, hertz). dBm only appears in
//! [`ScenarioConfig`], which mirrors the parameter names of the reference
//! simulation setup and is converted once by [`build_scenario`].

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PassError, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

/// RF constants shared by every channel computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub carrier_frequency_hz: f64,
    pub free_space_wavelength_m: f64,
    pub effective_refractive_index: f64,
    pub guided_wavelength_m: f64,
    /// Free-space amplitude gain at 1 m, wavelength / (4 pi).
    pub reference_gain: f64,
    pub noise_power_w: f64,
    pub max_transmit_power_w: f64,
}

impl RfConfig {
    pub fn new(
        carrier_frequency_hz: f64,
        effective_refractive_index: f64,
        noise_power_w: f64,
        max_transmit_power_w: f64,
    ) -> Result<Self> {
        if !(carrier_frequency_hz.is_finite() && carrier_frequency_hz > 0.0) {
            return Err(invalid("carrier_frequency_hz", "must be positive"));
        }
        if !(effective_refractive_index.is_finite() && effective_refractive_index >= 1.0) {
            return Err(invalid("effective_refractive_index", "must be >= 1"));
        }
        if !(noise_power_w.is_finite() && noise_power_w > 0.0) {
            return Err(invalid("noise_power_w", "must be positive"));
        }
        if !(max_transmit_power_w.is_finite() && max_transmit_power_w > 0.0) {
            return Err(invalid("max_transmit_power_w", "must be positive"));
        }
        let wavelength = SPEED_OF_LIGHT / carrier_frequency_hz;
        Ok(Self {
            carrier_frequency_hz,
            free_space_wavelength_m: wavelength,
            effective_refractive_index,
            guided_wavelength_m: wavelength / effective_refractive_index,
            reference_gain: wavelength / (4.0 * PI),
            noise_power_w,
            max_transmit_power_w,
        })
    }

    /// Free-space wavenumber 2 pi / lambda.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.free_space_wavelength_m
    }

    /// In-waveguide wavenumber 2 pi / lambda_g.
    pub fn guided_wavenumber(&self) -> f64 {
        2.0 * PI / self.guided_wavelength_m
    }

    /// Same RF setup at a different transmit budget.
    pub fn with_max_power(&self, max_transmit_power_w: f64) -> Result<Self> {
        Self::new(
            self.carrier_frequency_hz,
            self.effective_refractive_index,
            self.noise_power_w,
            max_transmit_power_w,
        )
    }
}

/// Waveguides run parallel to the x-axis at height `height_m`, fed at x = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub num_waveguides: usize,
    pub antennas_per_waveguide: usize,
    pub waveguide_length_m: f64,
    pub height_m: f64,
    pub waveguide_y_coords_m: Vec<f64>,
    pub min_antenna_spacing_m: f64,
}

impl Geometry {
    pub fn new(
        num_waveguides: usize,
        antennas_per_waveguide: usize,
        waveguide_length_m: f64,
        height_m: f64,
        waveguide_y_coords_m: Vec<f64>,
        min_antenna_spacing_m: f64,
    ) -> Result<Self> {
        if num_waveguides < 1 {
            return Err(invalid("num_waveguides", "need at least one waveguide"));
        }
        if antennas_per_waveguide < 1 {
            return Err(invalid("antennas_per_waveguide", "need at least one antenna"));
        }
        if waveguide_y_coords_m.len() != num_waveguides {
            return Err(invalid(
                "waveguide_y_coords_m",
                format!(
                    "expected {num_waveguides} coordinates, got {}",
                    waveguide_y_coords_m.len()
                ),
            ));
        }
        if !(height_m.is_finite() && height_m > 0.0) {
            return Err(invalid("height_m", "must be positive"));
        }
        if !(min_antenna_spacing_m.is_finite() && min_antenna_spacing_m >= 0.0) {
            return Err(invalid("min_antenna_spacing_m", "must be non-negative"));
        }
        let needed = (antennas_per_waveguide - 1) as f64 * min_antenna_spacing_m;
        if !(waveguide_length_m.is_finite() && waveguide_length_m > needed) {
            return Err(PassError::InfeasibleGeometry(format!(
                "length {waveguide_length_m} m cannot hold {antennas_per_waveguide} antennas at spacing {min_antenna_spacing_m} m"
            )));
        }
        Ok(Self {
            num_waveguides,
            antennas_per_waveguide,
            waveguide_length_m,
            height_m,
            waveguide_y_coords_m,
            min_antenna_spacing_m,
        })
    }

    pub fn total_antennas(&self) -> usize {
        self.num_waveguides * self.antennas_per_waveguide
    }
}

/// A point on the ground plane (z = 0) or in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Users of group `k` occupy indices `k * users_per_group .. (k + 1) * users_per_group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLayout {
    pub group_count: usize,
    pub users_per_group: usize,
    pub positions: Vec<Point3>,
}

impl UserLayout {
    pub fn new(group_count: usize, users_per_group: usize, positions: Vec<Point3>) -> Result<Self> {
        if group_count == 0 || users_per_group == 0 {
            return Err(invalid("user_layout", "need at least one group and one user"));
        }
        if positions.len() != group_count * users_per_group {
            return Err(PassError::ShapeMismatch(format!(
                "{} positions for {group_count} groups of {users_per_group}",
                positions.len()
            )));
        }
        if positions.iter().any(|p| p.z != 0.0) {
            return Err(invalid("user_layout", "users must lie on the ground plane"));
        }
        Ok(Self {
            group_count,
            users_per_group,
            positions,
        })
    }

    pub fn num_users(&self) -> usize {
        self.positions.len()
    }

    pub fn group_of(&self, user: usize) -> usize {
        user / self.users_per_group
    }

    pub fn group(&self, k: usize) -> &[Point3] {
        let g = self.users_per_group;
        &self.positions[k * g..(k + 1) * g]
    }

    /// Keeps only group `k`, as a one-group layout.
    pub fn single_group(&self, k: usize) -> UserLayout {
        UserLayout {
            group_count: 1,
            users_per_group: self.users_per_group,
            positions: self.group(k).to_vec(),
        }
    }
}

/// Axis-aligned rectangle on the ground plane (open interior).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn centered(cx: f64, cy: f64, width_x: f64, width_y: f64) -> Self {
        Self {
            x_min: cx - width_x / 2.0,
            x_max: cx + width_x / 2.0,
            y_min: cy - width_y / 2.0,
            y_max: cy + width_y / 2.0,
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn contains_strictly(&self, p: &Point3) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }
}

/// One rectangle per group; group k's users are uniform inside rectangle k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegions {
    pub rects: Vec<Rect>,
    pub users_per_group: usize,
}

impl PlacementRegions {
    /// Rectangles centered at (L/2, y_k) of size `s_x` by `s_y`, one per waveguide.
    pub fn around_waveguides(geometry: &Geometry, s_x: f64, s_y: f64, users_per_group: usize) -> Self {
        let cx = geometry.waveguide_length_m / 2.0;
        let rects = geometry
            .waveguide_y_coords_m
            .iter()
            .map(|&y| Rect::centered(cx, y, s_x, s_y))
            .collect();
        Self {
            rects,
            users_per_group,
        }
    }
}

/// Draws every group's users independently and uniformly inside its rectangle.
pub fn sample_users(regions: &PlacementRegions, rng_seed: u64) -> Result<UserLayout> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_users_with(regions, &mut rng)
}

pub fn sample_users_with<R: Rng + ?Sized>(regions: &PlacementRegions, rng: &mut R) -> Result<UserLayout> {
    if regions.rects.is_empty() || regions.users_per_group == 0 {
        return Err(PassError::DegenerateRegion("no groups or users".into()));
    }
    let mut positions = Vec::with_capacity(regions.rects.len() * regions.users_per_group);
    for (k, r) in regions.rects.iter().enumerate() {
        if !(r.x_max > r.x_min && r.y_max > r.y_min) || !(r.x_min.is_finite() && r.y_max.is_finite()) {
            return Err(PassError::DegenerateRegion(format!("rectangle {k} has empty interior")));
        }
        for _ in 0..regions.users_per_group {
            positions.push(Point3::ground(
                open_uniform(rng, r.x_min, r.x_max),
                open_uniform(rng, r.y_min, r.y_max),
            ));
        }
    }
    UserLayout::new(regions.rects.len(), regions.users_per_group, positions)
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let v = lo + (hi - lo) * rng.gen::<f64>();
        if v > lo && v < hi {
            return v;
        }
    }
}

/// A fully resolved simulation scenario. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rf: RfConfig,
    pub geometry: Geometry,
    pub regions: PlacementRegions,
}

impl Scenario {
    pub fn with_max_power(&self, p_max_w: f64) -> Result<Self> {
        Ok(Self {
            rf: self.rf.with_max_power(p_max_w)?,
            ..self.clone()
        })
    }

    pub fn sample_users(&self, seed: u64) -> Result<UserLayout> {
        sample_users(&self.regions, seed)
    }
}

/// Key/value configuration file. Field names follow the simulation-setup
/// parameter list; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub f_c_ghz: f64,
    pub n_eff: f64,
    pub k_waveguides: usize,
    pub n_pas: usize,
    pub l_m: f64,
    pub d_m: f64,
    pub delta_over_lambda: f64,
    pub w_m: f64,
    pub s_x_m: f64,
    pub s_y_m: f64,
    pub p_max_dbm_list: Vec<f64>,
    pub noise_dbm: f64,
    pub g_users: usize,
    pub seeds: Vec<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            f_c_ghz: 28.0,
            n_eff: 1.4,
            k_waveguides: 2,
            n_pas: 8,
            l_m: 10.0,
            d_m: 3.0,
            delta_over_lambda: 0.5,
            w_m: 5.0,
            s_x_m: 6.0,
            s_y_m: 5.0,
            p_max_dbm_list: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            noise_dbm: -90.0,
            g_users: 2,
            seeds: vec![1],
        }
    }
}

impl ScenarioConfig {
    /// Reads JSON (`.json`) or TOML (anything else).
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            Ok(toml::from_str(&text)?)
        }
    }

    /// Waveguides spaced `w_m` apart, centered on y = 0.
    pub fn waveguide_y_coords(&self) -> Vec<f64> {
        let k = self.k_waveguides as f64;
        (0..self.k_waveguides)
            .map(|i| (i as f64 - (k - 1.0) / 2.0) * self.w_m)
            .collect()
    }

    /// Highest power in the list, or 20 dBm when the list is empty.
    pub fn default_p_max_dbm(&self) -> f64 {
        self.p_max_dbm_list
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            .unwrap_or(20.0)
    }
}

/// Converts raw configuration into a validated scenario at transmit power `p_max_dbm`.
pub fn build_scenario(config: &ScenarioConfig, p_max_dbm: f64) -> Result<Scenario> {
    if !p_max_dbm.is_finite() {
        return Err(invalid("p_max_dbm", "must be finite"));
    }
    if !config.noise_dbm.is_finite() {
        return Err(invalid("noise_dbm", "must be finite"));
    }
    if !(config.s_x_m > 0.0 && config.s_y_m > 0.0) {
        return Err(PassError::DegenerateRegion(format!(
            "s_x = {}, s_y = {}",
            config.s_x_m, config.s_y_m
        )));
    }
    if config.g_users == 0 {
        return Err(invalid("g_users", "need at least one user per group"));
    }
    if !(config.delta_over_lambda >= 0.0) {
        return Err(invalid("delta_over_lambda", "must be non-negative"));
    }
    let rf = RfConfig::new(
        config.f_c_ghz * 1e9,
        config.n_eff,
        dbm_to_watts(config.noise_dbm),
        dbm_to_watts(p_max_dbm),
    )?;
    let geometry = Geometry::new(
        config.k_waveguides,
        config.n_pas,
        config.l_m,
        config.d_m,
        config.waveguide_y_coords(),
        config.delta_over_lambda * rf.free_space_wavelength_m,
    )?;
    let regions = PlacementRegions::around_waveguides(&geometry, config.s_x_m, config.s_y_m, config.g_users);
    Ok(Scenario {
        rf,
        geometry,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wavelengths_at_28_ghz() {
        // c / f_c evaluated independently
        let lambda = 2.997_924_58e8 / 28e9;
        assert_relative_eq!(lambda, 1.070_687_35e-2, max_relative = 1e-8);
        let rf = RfConfig::new(28e9, 1.4, 1e-12, 0.1).unwrap();
        assert_relative_eq!(rf.free_space_wavelength_m, 1.0707e-2, max_relative = 1e-4);
        assert_relative_eq!(rf.guided_wavelength_m, 7.648e-3, max_relative = 1e-3);
        assert_eq!(rf.guided_wavelength_m, rf.free_space_wavelength_m / 1.4);
        assert_relative_eq!(rf.reference_gain, 8.520e-4, max_relative = 1e-3);
        assert_eq!(rf.reference_gain, rf.free_space_wavelength_m / (4.0 * PI));
    }

    #[test]
    fn unit_refractive_index() {
        let rf = RfConfig::new(28e9, 1.0, 1e-12, 0.1).unwrap();
        assert_eq!(rf.guided_wavelength_m, rf.free_space_wavelength_m);
    }

    #[test]
    fn dbm_conversion() {
        assert_relative_eq!(dbm_to_watts(0.0), 1e-3, max_relative = 1e-14);
        assert_relative_eq!(dbm_to_watts(20.0), 1e-1, max_relative = 1e-14);
        assert_relative_eq!(dbm_to_watts(-90.0), 1e-12, max_relative = 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut cfg = ScenarioConfig::default();
        cfg.k_waveguides = 0;
        assert!(build_scenario(&cfg, 20.0).is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.n_pas = 0;
        assert!(build_scenario(&cfg, 20.0).is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.l_m = 7.0 * cfg.delta_over_lambda * SPEED_OF_LIGHT / 28e9;
        assert!(matches!(build_scenario(&cfg, 20.0), Err(PassError::InfeasibleGeometry(_))));
        assert!(RfConfig::new(28e9, 1.4, 0.0, 0.1).is_err());
        assert!(RfConfig::new(28e9, 1.4, 1e-12, -1.0).is_err());
        assert!(RfConfig::new(28e9, 0.9, 1e-12, 1.0).is_err());
    }

    #[test]
    fn default_geometry_matches_setup() {
        let s = build_scenario(&ScenarioConfig::default(), 20.0).unwrap();
        assert_eq!(s.geometry.total_antennas(), 16);
        assert_eq!(s.geometry.waveguide_y_coords_m, vec![-2.5, 2.5]);
        assert_relative_eq!(s.geometry.min_antenna_spacing_m, s.rf.free_space_wavelength_m / 2.0);
        let r = s.regions.rects[0];
        assert_relative_eq!(r.x_min, 2.0);
        assert_relative_eq!(r.x_max, 8.0);
        assert_relative_eq!(r.y_min, -5.0);
        assert_relative_eq!(r.y_max, 0.0);
        assert_relative_eq!(s.rf.max_transmit_power_w, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_inside() {
        let s = build_scenario(&ScenarioConfig::default(), 20.0).unwrap();
        let a = s.sample_users(7).unwrap();
        let b = s.sample_users(7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s.sample_users(8).unwrap());
        for (u, p) in a.positions.iter().enumerate() {
            assert!(s.regions.rects[a.group_of(u)].contains_strictly(p));
            assert_eq!(p.z, 0.0);
        }
    }

    #[test]
    fn tiny_rectangle_pins_users() {
        let regions = PlacementRegions {
            rects: vec![Rect::centered(5.0, -2.5, 1e-9, 1e-9)],
            users_per_group: 3,
        };
        let layout = sample_users(&regions, 3).unwrap();
        for p in &layout.positions {
            assert!((p.x - 5.0).abs() < 1e-9 && (p.y + 2.5).abs() < 1e-9);
        }
        let degenerate = PlacementRegions {
            rects: vec![Rect::centered(5.0, -2.5, 0.0, 1.0)],
            users_per_group: 1,
        };
        assert!(matches!(sample_users(&degenerate, 1), Err(PassError::DegenerateRegion(_))));
    }

    #[test]
    fn empirical_mean_near_centroid() {
        let rect = Rect::centered(5.0, -2.5, 6.0, 5.0);
        let regions = PlacementRegions {
            rects: vec![rect],
            users_per_group: 10_000,
        };
        let layout = sample_users(&regions, 11).unwrap();
        let n = layout.num_users() as f64;
        let mx = layout.positions.iter().map(|p| p.x).sum::<f64>() / n;
        let my = layout.positions.iter().map(|p| p.y).sum::<f64>() / n;
        // std of the mean of U(a, b) is (b - a) / sqrt(12 n)
        let sx = 6.0 / (12.0 * n).sqrt();
        let sy = 5.0 / (12.0 * n).sqrt();
        assert!((mx - 5.0).abs() < 3.0 * sx, "mean x {mx}");
        assert!((my + 2.5).abs() < 3.0 * sy, "mean y {my}");
    }

    #[test]
    fn config_round_trip_is_idempotent() {
        let cfg = ScenarioConfig {
            n_pas: 6,
            w_m: 15.0,
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(build_scenario(&cfg, 10.0).unwrap(), build_scenario(&back, 10.0).unwrap());
        let t = toml::to_string(&cfg).unwrap();
        let back: ScenarioConfig = toml::from_str(&t).unwrap();
        assert_eq!(cfg, back);
        let s = build_scenario(&cfg, 10.0).unwrap();
        let s2: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, s2);
    }
}
