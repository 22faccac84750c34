//! Achievable rates and SINRs under the three transmission structures.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, effective_channels, PinchingLayout};
use crate::error::{invalid, PassError, Result};
use crate::scenario::{Geometry, RfConfig, UserLayout};

/// Relative slack on power and time-share constraints.
const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    /// Waveguide multiplexing: full digital precoding across waveguides.
    Wm,
    /// Waveguide division: one stream per waveguide, power allocation only.
    Wd,
    /// Waveguide switching: time division with per-slot beamformer and layout.
    Ws,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Wm => "wm",
            Structure::Wd => "wd",
            Structure::Ws => "ws",
        })
    }
}

impl FromStr for Structure {
    type Err = PassError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wm" => Ok(Structure::Wm),
            "wd" => Ok(Structure::Wd),
            "ws" => Ok(Structure::Ws),
            other => Err(invalid("structure", format!("unknown structure `{other}`"))),
        }
    }
}

/// Baseband variables of one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BasebandState {
    Wm {
        beamformers: Vec<Vec<Complex64>>,
    },
    Wd {
        powers: Vec<f64>,
    },
    Ws {
        layouts: Vec<PinchingLayout>,
        beamformers: Vec<Vec<Complex64>>,
        time_shares: Vec<f64>,
    },
}

impl BasebandState {
    pub fn structure(&self) -> Structure {
        match self {
            BasebandState::Wm { .. } => Structure::Wm,
            BasebandState::Wd { .. } => Structure::Wd,
            BasebandState::Ws { .. } => Structure::Ws,
        }
    }

    /// Checks the power (and, for WS, time-share) constraints.
    pub fn check_budget(&self, p_max: f64) -> Result<()> {
        let over = |used: f64| used > p_max * (1.0 + BUDGET_TOL);
        match self {
            BasebandState::Wm { beamformers } => {
                let used = total_power(beamformers);
                if over(used) {
                    return Err(invalid("beamformers", format!("total power {used} exceeds {p_max}")));
                }
            }
            BasebandState::Wd { powers } => {
                if powers.iter().any(|&p| p < 0.0) {
                    return Err(invalid("powers", "negative power"));
                }
                let used: f64 = powers.iter().sum();
                if over(used) {
                    return Err(invalid("powers", format!("total power {used} exceeds {p_max}")));
                }
            }
            BasebandState::Ws {
                beamformers,
                time_shares,
                ..
            } => {
                for w in beamformers {
                    let used = norm_sqr(w);
                    if over(used) {
                        return Err(invalid("beamformers", format!("slot power {used} exceeds {p_max}")));
                    }
                }
                if time_shares.iter().any(|&l| !(-BUDGET_TOL..=1.0 + BUDGET_TOL).contains(&l)) {
                    return Err(invalid("time_shares", "each share must lie in [0, 1]"));
                }
                let sum: f64 = time_shares.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(invalid("time_shares", format!("shares sum to {sum}")));
                }
            }
        }
        Ok(())
    }
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum()
}

pub fn total_power(beamformers: &[Vec<Complex64>]) -> f64 {
    beamformers.iter().map(|w| norm_sqr(w)).sum()
}

/// Row-vector times column-vector, no conjugation.
pub fn dot(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Per-user rates and SINRs. `interference` is zero for WS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rates: Vec<f64>,
    pub sinr: Vec<f64>,
    pub interference: Vec<f64>,
    pub min_rate: f64,
}

impl RateReport {
    pub fn from_parts(rates: Vec<f64>, sinr: Vec<f64>, interference: Vec<f64>) -> Self {
        let min_rate = min_of(&rates);
        Self {
            rates,
            sinr,
            interference,
            min_rate,
        }
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Exact minimum over users.
pub fn min_rate(report: &RateReport) -> f64 {
    min_of(&report.rates)
}

/// Multi-stream SINR for fixed effective channels; user j decodes stream `stream_of[j]`.
pub fn multistream_report(
    channels: &[Vec<Complex64>],
    stream_of: &[usize],
    beamformers: &[Vec<Complex64>],
    noise: f64,
) -> RateReport {
    let mut rates = Vec::with_capacity(channels.len());
    let mut sinrs = Vec::with_capacity(channels.len());
    let mut interf = Vec::with_capacity(channels.len());
    for (h, &k) in channels.iter().zip(stream_of) {
        let signal = dot(h, &beamformers[k]).norm_sqr();
        let interference: f64 = beamformers
            .iter()
            .enumerate()
            .filter(|(kk, _)| *kk != k)
            .map(|(_, w)| dot(h, w).norm_sqr())
            .sum();
        let sinr = signal / (interference + noise);
        sinrs.push(sinr);
        rates.push((1.0 + sinr).log2());
        interf.push(interference);
    }
    RateReport::from_parts(rates, sinrs, interf)
}

/// WM rates: every stream is precoded across all waveguides.
pub fn rate_wm(
    layout: &PinchingLayout,
    beamformers: &[Vec<Complex64>],
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> RateReport {
    let channels = effective_channels(&users.positions, layout, geometry, rf);
    let stream_of: Vec<usize> = (0..users.num_users()).map(|u| users.group_of(u)).collect();
    multistream_report(&channels, &stream_of, beamformers, rf.noise_power_w)
}

/// WD rates: stream k leaves only through waveguide k with power `powers[k]`.
pub fn rate_wd(
    layout: &PinchingLayout,
    powers: &[f64],
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> RateReport {
    let channels = effective_channels(&users.positions, layout, geometry, rf);
    wd_report(&channels, users, powers, rf.noise_power_w)
}

pub(crate) fn wd_report(channels: &[Vec<Complex64>], users: &UserLayout, powers: &[f64], noise: f64) -> RateReport {
    let mut rates = Vec::new();
    let mut sinrs = Vec::new();
    let mut interf = Vec::new();
    for (u, h) in channels.iter().enumerate() {
        let k = users.group_of(u);
        let signal = powers[k] * h[k].norm_sqr();
        let interference: f64 = (0..powers.len())
            .filter(|&kk| kk != k)
            .map(|kk| powers[kk] * h[kk].norm_sqr())
            .sum();
        let sinr = signal / (interference + noise);
        sinrs.push(sinr);
        rates.push((1.0 + sinr).log2());
        interf.push(interference);
    }
    RateReport::from_parts(rates, sinrs, interf)
}

/// WS rates: group k is served alone with layout `layouts[k]` for a fraction `time_shares[k]`.
pub fn rate_ws(
    layouts: &[PinchingLayout],
    beamformers: &[Vec<Complex64>],
    time_shares: &[f64],
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> RateReport {
    let mut rates = Vec::new();
    let mut sinrs = Vec::new();
    for (u, p) in users.positions.iter().enumerate() {
        let k = users.group_of(u);
        let h = effective_channel(p, &layouts[k], geometry, rf);
        let snr = dot(&h, &beamformers[k]).norm_sqr() / rf.noise_power_w;
        sinrs.push(snr);
        rates.push(time_shares[k] * (1.0 + snr).log2());
    }
    let n = rates.len();
    RateReport::from_parts(rates, sinrs, vec![0.0; n])
}

/// Per-group single-slot rates `log2(1 + SNR)` before time sharing, minimised over the group.
pub fn ws_group_rates(
    layouts: &[PinchingLayout],
    beamformers: &[Vec<Complex64>],
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> Vec<f64> {
    let ones = vec![1.0; users.group_count];
    let report = rate_ws(layouts, beamformers, &ones, users, geometry, rf);
    (0..users.group_count)
        .map(|k| {
            let g = users.users_per_group;
            min_of(&report.rates[k * g..(k + 1) * g])
        })
        .collect()
}

/// Evaluates whichever structure `state` describes.
pub fn evaluate(
    layout: &PinchingLayout,
    state: &BasebandState,
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> RateReport {
    match state {
        BasebandState::Wm { beamformers } => rate_wm(layout, beamformers, users, geometry, rf),
        BasebandState::Wd { powers } => rate_wd(layout, powers, users, geometry, rf),
        BasebandState::Ws {
            layouts,
            beamformers,
            time_shares,
        } => rate_ws(layouts, beamformers, time_shares, users, geometry, rf),
    }
}
