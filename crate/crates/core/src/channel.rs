//! In-waveguide responses, free-space channels and effective channels.
//!
//! The per-antenna power split `1/sqrt(N)` lives in [`waveguide_response`]
//! and nowhere else, so rate formulas use the plain noise power.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PassError, Result};
use crate::scenario::{Geometry, Point3, RfConfig};

/// Slack allowed when checking box and spacing constraints, in meters.
pub const LAYOUT_TOL: f64 = 1e-12;

/// Antenna x-positions, one ascending row per waveguide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchingLayout {
    rows: Vec<Vec<f64>>,
}

impl PinchingLayout {
    /// Validates box and minimum-spacing constraints against `geometry`.
    pub fn new(rows: Vec<Vec<f64>>, geometry: &Geometry) -> Result<Self> {
        let layout = Self { rows };
        layout.validate(geometry)?;
        Ok(layout)
    }

    /// Evenly spread antennas: spacing `max(delta, L / N)`, centered on the waveguide.
    pub fn uniform(geometry: &Geometry) -> Self {
        let n = geometry.antennas_per_waveguide;
        let l = geometry.waveguide_length_m;
        let spacing = geometry.min_antenna_spacing_m.max(l / n as f64);
        let span = (n - 1) as f64 * spacing;
        let start = ((l - span) / 2.0).max(0.0);
        let row: Vec<f64> = (0..n).map(|j| start + j as f64 * spacing).collect();
        Self {
            rows: vec![row; geometry.num_waveguides],
        }
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if self.rows.len() != geometry.num_waveguides
            || self.rows.iter().any(|r| r.len() != geometry.antennas_per_waveguide)
        {
            return Err(PassError::ShapeMismatch(format!(
                "layout is not {}x{}",
                geometry.num_waveguides, geometry.antennas_per_waveguide
            )));
        }
        for (k, row) in self.rows.iter().enumerate() {
            check_row(k, row, geometry)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn x(&self, k: usize, n: usize) -> f64 {
        self.rows[k][n]
    }

    pub fn num_waveguides(&self) -> usize {
        self.rows.len()
    }

    pub fn antennas_per_waveguide(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Largest violation of the box and spacing constraints (0 when feasible).
    pub fn max_violation(&self, geometry: &Geometry) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            for (j, &x) in row.iter().enumerate() {
                worst = worst.max(-x).max(x - geometry.waveguide_length_m);
                if j + 1 < row.len() {
                    worst = worst.max(geometry.min_antenna_spacing_m - (row[j + 1] - x));
                }
            }
        }
        worst.max(0.0)
    }
}

fn check_row(k: usize, row: &[f64], geometry: &Geometry) -> Result<()> {
    let l = geometry.waveguide_length_m;
    for &x in row {
        if !(x.is_finite() && x >= -LAYOUT_TOL && x <= l + LAYOUT_TOL) {
            return Err(PassError::PositionOutOfRange {
                waveguide: k,
                value: x,
                length: l,
            });
        }
    }
    for w in row.windows(2) {
        let gap = w[1] - w[0];
        if gap < geometry.min_antenna_spacing_m - LAYOUT_TOL {
            return Err(PassError::SpacingViolation {
                waveguide: k,
                gap,
                min_spacing: geometry.min_antenna_spacing_m,
            });
        }
    }
    Ok(())
}

/// Feed-to-antenna response of one waveguide: entry n is `exp(-j 2 pi x_n / lambda_g) / sqrt(N)`.
pub fn waveguide_response(x_row: &[f64], rf: &RfConfig, length_m: f64) -> Result<Vec<Complex64>> {
    let scale = 1.0 / (x_row.len() as f64).sqrt();
    let kg = rf.guided_wavenumber();
    x_row
        .iter()
        .map(|&x| {
            if !(x.is_finite() && x >= -LAYOUT_TOL && x <= length_m + LAYOUT_TOL) {
                return Err(PassError::PositionOutOfRange {
                    waveguide: 0,
                    value: x,
                    length: length_m,
                });
            }
            Ok(Complex64::from_polar(scale, -kg * x))
        })
        .collect()
}

/// Block-diagonal M x K matrix whose column k holds waveguide k's response.
pub fn stacked_response(layout: &PinchingLayout, geometry: &Geometry, rf: &RfConfig) -> Result<DMatrix<Complex64>> {
    layout.validate(geometry)?;
    let k = geometry.num_waveguides;
    let n = geometry.antennas_per_waveguide;
    let mut g = DMatrix::zeros(k * n, k);
    for i in 0..k {
        let col = waveguide_response(layout.row(i), rf, geometry.waveguide_length_m)?;
        for (j, v) in col.into_iter().enumerate() {
            g[(i * n + j, i)] = v;
        }
    }
    Ok(g)
}

pub fn antenna_position(layout: &PinchingLayout, geometry: &Geometry, i: usize, n: usize) -> Point3 {
    Point3::new(layout.x(i, n), geometry.waveguide_y_coords_m[i], geometry.height_m)
}

/// Distance between a ground user and antenna n on waveguide i.
pub fn antenna_user_distance(user: &Point3, layout: &PinchingLayout, geometry: &Geometry, i: usize, n: usize) -> f64 {
    let dx = user.x - layout.x(i, n);
    let dy = user.y - geometry.waveguide_y_coords_m[i];
    let dz = user.z - geometry.height_m;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Free-space LoS row from all M antennas to the user, waveguide-major order.
pub fn user_channel(user: &Point3, layout: &PinchingLayout, geometry: &Geometry, rf: &RfConfig) -> Vec<Complex64> {
    let k0 = rf.wavenumber();
    let mut h = Vec::with_capacity(geometry.total_antennas());
    for i in 0..geometry.num_waveguides {
        for n in 0..geometry.antennas_per_waveguide {
            let r = antenna_user_distance(user, layout, geometry, i, n);
            h.push(Complex64::from_polar(rf.reference_gain / r, -k0 * r));
        }
    }
    h
}

/// Total phase from the feed point to the user through antenna (i, n). Not wrapped.
pub fn phase_phi(user: &Point3, layout: &PinchingLayout, geometry: &Geometry, i: usize, n: usize, rf: &RfConfig) -> f64 {
    let r = antenna_user_distance(user, layout, geometry, i, n);
    rf.wavenumber() * r + rf.guided_wavenumber() * layout.x(i, n)
}

/// Effective 1 x K channel `h G`, evaluated as a per-waveguide sum over antennas.
pub fn effective_channel(user: &Point3, layout: &PinchingLayout, geometry: &Geometry, rf: &RfConfig) -> Vec<Complex64> {
    let scale = rf.reference_gain / (geometry.antennas_per_waveguide as f64).sqrt();
    (0..geometry.num_waveguides)
        .map(|i| {
            (0..geometry.antennas_per_waveguide)
                .map(|n| {
                    let r = antenna_user_distance(user, layout, geometry, i, n);
                    let phi = phase_phi(user, layout, geometry, i, n, rf);
                    Complex64::from_polar(scale / r, -phi)
                })
                .sum()
        })
        .collect()
}

/// Effective channel via the explicit product `h * G`.
pub fn effective_channel_product(
    user: &Point3,
    layout: &PinchingLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> Result<Vec<Complex64>> {
    let g = stacked_response(layout, geometry, rf)?;
    let h = user_channel(user, layout, geometry, rf);
    Ok((0..g.ncols())
        .map(|c| h.iter().enumerate().map(|(m, hm)| hm * g[(m, c)]).sum())
        .collect())
}

/// Effective channels of every user, in user order.
pub fn effective_channels(
    users: &[Point3],
    layout: &PinchingLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> Vec<Vec<Complex64>> {
    users
        .iter()
        .map(|u| effective_channel(u, layout, geometry, rf))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, ScenarioConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rf() -> RfConfig {
        RfConfig::new(28e9, 1.4, 1e-12, 0.1).unwrap()
    }

    fn geometry(k: usize, n: usize) -> Geometry {
        let ys = (0..k).map(|i| (i as f64 - (k as f64 - 1.0) / 2.0) * 5.0).collect();
        Geometry::new(k, n, 10.0, 3.0, ys, rf().free_space_wavelength_m / 2.0).unwrap()
    }

    fn random_layout(rng: &mut ChaCha8Rng, g: &Geometry) -> PinchingLayout {
        let rows = (0..g.num_waveguides)
            .map(|_| {
                let mut xs: Vec<f64> = (0..g.antennas_per_waveguide).map(|_| rng.gen_range(0.0..9.0)).collect();
                xs.sort_by(f64::total_cmp);
                for j in 1..xs.len() {
                    if xs[j] - xs[j - 1] < g.min_antenna_spacing_m {
                        xs[j] = xs[j - 1] + g.min_antenna_spacing_m;
                    }
                }
                xs
            })
            .collect();
        PinchingLayout::new(rows, g).unwrap()
    }

    #[test]
    fn waveguide_response_examples() {
        let rf = rf();
        let lg = rf.guided_wavelength_m;
        let r = waveguide_response(&[0.0], &rf, 10.0).unwrap();
        assert_relative_eq!(r[0].re, 1.0);
        assert_relative_eq!(r[0].im, 0.0);
        let s = 1.0 / 2f64.sqrt();
        let r = waveguide_response(&[0.0, lg], &rf, 10.0).unwrap();
        assert_relative_eq!(r[1].re, s, epsilon = 1e-12);
        assert_relative_eq!(r[1].im, 0.0, epsilon = 1e-12);
        let r = waveguide_response(&[0.0, lg / 2.0], &rf, 10.0).unwrap();
        // exp(-j pi) = -1
        assert_relative_eq!(r[1].re, -s, epsilon = 1e-12);
        assert_relative_eq!(r[1].im, 0.0, epsilon = 1e-12);
        assert!(waveguide_response(&[-0.1], &rf, 10.0).is_err());
        assert!(waveguide_response(&[10.5], &rf, 10.0).is_err());
    }

    #[test]
    fn stacked_response_structure() {
        let rf = rf();
        let g1 = geometry(1, 3);
        let lay = PinchingLayout::uniform(&g1);
        let g = stacked_response(&lay, &g1, &rf).unwrap();
        let w = waveguide_response(lay.row(0), &rf, 10.0).unwrap();
        assert_eq!(g.ncols(), 1);
        for n in 0..3 {
            assert_eq!(g[(n, 0)], w[n]);
        }

        let g2 = geometry(2, 1);
        let lay = PinchingLayout::new(vec![vec![0.0], vec![0.0]], &g2).unwrap();
        let g = stacked_response(&lay, &g2, &rf).unwrap();
        assert_eq!(g[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(g[(1, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(g[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(g[(1, 0)], Complex64::new(0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g3 = geometry(3, 4);
        for _ in 0..20 {
            let lay = random_layout(&mut rng, &g3);
            let g = stacked_response(&lay, &g3, &rf).unwrap();
            for c in 0..3 {
                let norm: f64 = (0..12).map(|m| g[(m, c)].norm_sqr()).sum();
                assert_relative_eq!(norm, 1.0, max_relative = 1e-14);
                for m in 0..12 {
                    if m / 4 != c {
                        assert_eq!(g[(m, c)], Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn distance_examples() {
        let g = geometry(1, 1);
        let lay = PinchingLayout::new(vec![vec![4.0]], &g).unwrap();
        let y0 = g.waveguide_y_coords_m[0];
        assert_relative_eq!(antenna_user_distance(&Point3::ground(4.0, y0), &lay, &g, 0, 0), 3.0);
        assert_relative_eq!(antenna_user_distance(&Point3::ground(4.0, y0 + 4.0), &lay, &g, 0, 0), 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = geometry(2, 3);
        for _ in 0..50 {
            let lay = random_layout(&mut rng, &g);
            let u = Point3::ground(rng.gen_range(0.0..10.0), rng.gen_range(-6.0..6.0));
            for i in 0..2 {
                for n in 0..3 {
                    let p = antenna_position(&lay, &g, i, n);
                    let direct = ((u.x - p.x).powi(2) + (u.y - p.y).powi(2) + (u.z - p.z).powi(2)).sqrt();
                    let r = antenna_user_distance(&u, &lay, &g, i, n);
                    assert_relative_eq!(r, direct, max_relative = 1e-15);
                    assert!(r >= g.height_m);
                }
            }
        }
    }

    #[test]
    fn user_channel_magnitudes() {
        let rf = rf();
        let g = geometry(1, 1);
        let lay = PinchingLayout::new(vec![vec![4.0]], &g).unwrap();
        let h = user_channel(&Point3::ground(4.0, g.waveguide_y_coords_m[0]), &lay, &g, &rf);
        assert_relative_eq!(h[0].norm(), rf.reference_gain / 3.0, max_relative = 1e-14);
        assert_relative_eq!(h[0].norm(), 2.840e-4, max_relative = 1e-3);

        // doubling every distance: height 3 -> 6 with the user right below
        let g6 = Geometry::new(1, 1, 10.0, 6.0, vec![g.waveguide_y_coords_m[0]], g.min_antenna_spacing_m).unwrap();
        let h6 = user_channel(&Point3::ground(4.0, g.waveguide_y_coords_m[0]), &lay, &g6, &rf);
        assert_relative_eq!(h6[0].norm(), h[0].norm() / 2.0, max_relative = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = geometry(2, 4);
        let lay = random_layout(&mut rng, &g);
        let u = Point3::ground(3.3, 1.2);
        let h = user_channel(&u, &lay, &g, &rf);
        for i in 0..2 {
            for n in 0..4 {
                let r = antenna_position(&lay, &g, i, n).distance(&u);
                assert_relative_eq!(h[i * 4 + n].norm(), rf.reference_gain / r, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn phase_examples() {
        let rf = rf();
        let lambda = rf.free_space_wavelength_m;
        // height chosen as an integer number of wavelengths
        let height = 280.0 * lambda;
        let g = Geometry::new(1, 1, 10.0, height, vec![0.0], lambda / 2.0).unwrap();
        let lay = PinchingLayout::new(vec![vec![0.0]], &g).unwrap();
        let phi = phase_phi(&Point3::ground(0.0, 0.0), &lay, &g, 0, 0, &rf);
        let wrapped = phi.rem_euclid(2.0 * PI);
        assert!(wrapped < 1e-9 || 2.0 * PI - wrapped < 1e-9, "phi = {phi}");

        // shifting by lambda_g adds exactly 2 pi to the waveguide term
        let g = geometry(1, 1);
        let x = 3.0;
        let kg = rf.guided_wavenumber();
        assert_relative_eq!(kg * (x + rf.guided_wavelength_m) - kg * x, 2.0 * PI, max_relative = 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g2 = geometry(2, 3);
        for _ in 0..20 {
            let lay = random_layout(&mut rng, &g2);
            let u = Point3::ground(rng.gen_range(0.0..10.0), rng.gen_range(-5.0..5.0));
            for i in 0..2 {
                for n in 0..3 {
                    let r = antenna_user_distance(&u, &lay, &g2, i, n);
                    let z = Complex64::from_polar(1.0, -rf.wavenumber() * r)
                        * Complex64::from_polar(1.0, -kg * lay.x(i, n));
                    let phi = phase_phi(&u, &lay, &g2, i, n, &rf);
                    let d = (Complex64::from_polar(1.0, -phi) - z).norm();
                    assert!(d < 1e-9);
                }
            }
        }
        let _ = g;
    }

    #[test]
    fn effective_channel_forms_agree() {
        let rf = rf();
        let g = geometry(1, 1);
        let lay = PinchingLayout::new(vec![vec![2.0]], &g).unwrap();
        let u = Point3::ground(1.0, 1.0);
        let h = effective_channel(&u, &lay, &g, &rf);
        let r = antenna_user_distance(&u, &lay, &g, 0, 0);
        let phi = phase_phi(&u, &lay, &g, 0, 0, &rf);
        let expected = Complex64::from_polar(rf.reference_gain / r, -phi);
        assert!((h[0] - expected).norm() < 1e-12 * expected.norm());

        // mirrored waveguides, user on the symmetry axis
        let g = geometry(2, 3);
        let row = vec![1.0, 4.0, 7.5];
        let lay = PinchingLayout::new(vec![row.clone(), row], &g).unwrap();
        let h = effective_channel(&Point3::ground(5.0, 0.0), &lay, &g, &rf);
        assert!((h[0] - h[1]).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = geometry(3, 5);
        for _ in 0..50 {
            let lay = random_layout(&mut rng, &g);
            let u = Point3::ground(rng.gen_range(0.0..10.0), rng.gen_range(-8.0..8.0));
            let a = effective_channel(&u, &lay, &g, &rf);
            let b = effective_channel_product(&u, &lay, &g, &rf).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() <= 1e-10 * y.norm(), "{x} vs {y}");
                assert!(x.norm() > 0.0);
            }
        }
    }

    #[test]
    fn uniform_layout_is_feasible() {
        let s = build_scenario(&ScenarioConfig::default(), 20.0).unwrap();
        let lay = PinchingLayout::uniform(&s.geometry);
        lay.validate(&s.geometry).unwrap();
        assert_relative_eq!(lay.x(0, 0), 0.625, epsilon = 1e-12);
        assert_relative_eq!(lay.x(0, 7), 9.375, epsilon = 1e-12);
        assert_eq!(lay.max_violation(&s.geometry), 0.0);
    }

    #[test]
    fn layout_validation_errors() {
        let g = geometry(1, 2);
        assert!(matches!(
            PinchingLayout::new(vec![vec![0.0, 1e-4]], &g),
            Err(PassError::SpacingViolation { .. })
        ));
        assert!(matches!(
            PinchingLayout::new(vec![vec![-1.0, 1.0]], &g),
            Err(PassError::PositionOutOfRange { .. })
        ));
        assert!(PinchingLayout::new(vec![vec![1.0]], &g).is_err());
    }
}
