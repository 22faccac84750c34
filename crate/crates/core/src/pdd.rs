//! Penalty dual decomposition (PDD) for joint pinching and baseband beamforming.
//!
//! Internally everything is normalised so that the penalty and the max-min objective
//! live on comparable scales:
//!
//! * auxiliary coefficients `u` are stored multiplied by `sqrt(N) / eta`, so the
//!   consistency constraint reads `u r = exp(-j e)`;
//! * beamformers are divided by `sqrt(P_max)` (unit power budget);
//! * the noise becomes `N sigma^2 / (eta^2 P_max)`.
//!
//! None of this changes any SINR. The equality residuals are measured in these units.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::PinchingLayout;
use crate::error::{invalid, PassError, Result};
use crate::kernel::{
    box_ordered_qp, maxmin_power_budget, maxmin_quadratics_ball, realify_vec, solve_epigraph, time_allocation,
    BarrierOptions, Block, ComplexQuadratic, EpigraphProblem, PowerTerm, SeparableConvex,
};
use crate::rates::{dot, multistream_report, rate_ws, BasebandState, RateReport, Structure};
use crate::scenario::{Geometry, Point3, RfConfig, Scenario, UserLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PddConfig {
    /// Outer loop stops once the largest equality residual is below this.
    pub residual_tol: f64,
    /// Inner loop stops once the fractional objective change is below this.
    pub improvement_tol: f64,
    /// Starting penalty factor, in the normalised units of [`PddProblem`].
    pub initial_rho: f64,
    pub penalty_shrink: f64,
    /// Residual beyond which an inner loop counts as running away. The outer
    /// iteration is then discarded and retried with the penalty scaled by `rejection_shrink`.
    pub blowup_residual: f64,
    pub rejection_shrink: f64,
    /// A dual step is taken when the residual fell below this fraction of the previous one.
    pub residual_improvement: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub x_surrogate: XSurrogate,
    pub initial_layout: InitialLayout,
}

/// Antenna layout the solver starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLayout {
    /// Evenly spread over the waveguide.
    Uniform,
    /// Phase-aligned blocks next to the served users.
    UserBlocks,
}

impl Default for PddConfig {
    fn default() -> Self {
        Self {
            residual_tol: 1e-6,
            improvement_tol: 1e-3,
            initial_rho: 10.0,
            penalty_shrink: 0.85,
            blowup_residual: 0.5,
            rejection_shrink: 0.5,
            residual_improvement: 0.9,
            max_outer: 200,
            max_inner: 100,
            x_surrogate: XSurrogate::Tangent,
            initial_layout: InitialLayout::Uniform,
        }
    }
}

impl PddConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || !(self.improvement_tol > 0.0) {
            return Err(invalid("tolerance", "tolerances must be positive"));
        }
        if !(self.initial_rho > 0.0) {
            return Err(invalid("initial_rho", "must be positive"));
        }
        if !(self.penalty_shrink > 0.0 && self.penalty_shrink < 1.0) {
            return Err(invalid("penalty_shrink", "must lie in (0, 1)"));
        }
        if !(self.rejection_shrink > 0.0 && self.rejection_shrink < 1.0) {
            return Err(invalid("rejection_shrink", "must lie in (0, 1)"));
        }
        if !(self.blowup_residual > 0.0) {
            return Err(invalid("blowup_residual", "must be positive"));
        }
        if !(self.residual_improvement > 0.0 && self.residual_improvement < 1.0) {
            return Err(invalid("residual_improvement", "must lie in (0, 1)"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(invalid("max_outer", "iteration caps must be at least 1"));
        }
        Ok(())
    }
}

/// How the baseband block is parameterised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasebandMode {
    /// Arbitrary precoders under a total power ball.
    Full,
    /// Stream k only on waveguide k; only powers are free.
    Diagonal,
}

/// One PDD instance: users, the stream each decodes and the baseband parameterisation.
#[derive(Debug, Clone)]
pub struct PddProblem {
    pub geometry: Geometry,
    pub rf: RfConfig,
    pub users: Vec<Point3>,
    pub stream_of: Vec<usize>,
    pub streams: usize,
    pub mode: BasebandMode,
}

impl PddProblem {
    pub fn new(
        geometry: &Geometry,
        rf: &RfConfig,
        users: Vec<Point3>,
        stream_of: Vec<usize>,
        streams: usize,
        mode: BasebandMode,
    ) -> Result<Self> {
        if users.is_empty() || streams == 0 {
            return Err(invalid("users", "need at least one user and one stream"));
        }
        if stream_of.len() != users.len() || stream_of.iter().any(|&s| s >= streams) {
            return Err(PassError::ShapeMismatch("stream assignment does not match users".into()));
        }
        if mode == BasebandMode::Diagonal && streams != geometry.num_waveguides {
            return Err(PassError::ShapeMismatch(
                "diagonal baseband needs one stream per waveguide".into(),
            ));
        }
        Ok(Self {
            geometry: geometry.clone(),
            rf: *rf,
            users,
            stream_of,
            streams,
            mode,
        })
    }

    /// All groups at once, group k decoding stream k.
    pub fn multigroup(geometry: &Geometry, rf: &RfConfig, users: &UserLayout, mode: BasebandMode) -> Result<Self> {
        if users.group_count != geometry.num_waveguides {
            return Err(PassError::ShapeMismatch(format!(
                "{} groups but {} waveguides",
                users.group_count, geometry.num_waveguides
            )));
        }
        let stream_of = (0..users.num_users()).map(|u| users.group_of(u)).collect();
        Self::new(geometry, rf, users.positions.clone(), stream_of, users.group_count, mode)
    }

    /// Group k alone with a single stream.
    pub fn single_group(geometry: &Geometry, rf: &RfConfig, users: &UserLayout, k: usize) -> Result<Self> {
        let members = users.group(k).to_vec();
        let n = members.len();
        Self::new(geometry, rf, members, vec![0; n], 1, BasebandMode::Full)
    }

    /// Noise power in normalised units.
    pub fn noise(&self) -> f64 {
        let eta = self.rf.reference_gain;
        self.geometry.antennas_per_waveguide as f64 * self.rf.noise_power_w
            / (eta * eta * self.rf.max_transmit_power_w)
    }

    /// Physical-over-normalised factor of auxiliary coefficients, `eta / sqrt(N)`.
    pub fn amplitude(&self) -> f64 {
        self.rf.reference_gain / (self.geometry.antennas_per_waveguide as f64).sqrt()
    }

    fn wg(&self) -> usize {
        self.geometry.num_waveguides
    }

    fn pas(&self) -> usize {
        self.geometry.antennas_per_waveguide
    }

    fn c2(&self, j: usize, i: usize) -> f64 {
        let dy = self.users[j].y - self.geometry.waveguide_y_coords_m[i];
        let dz = self.users[j].z - self.geometry.height_m;
        dy * dy + dz * dz
    }

    /// Distances `r[user][i * N + n]`.
    pub fn distances(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.users.len())
            .map(|j| {
                let ux = self.users[j].x;
                rows.iter()
                    .enumerate()
                    .flat_map(|(i, row)| {
                        let c2 = self.c2(j, i);
                        row.iter().map(move |&x| ((x - ux) * (x - ux) + c2).sqrt())
                    })
                    .collect()
            })
            .collect()
    }

    /// Phases `kappa r + kappa_g x` for given distances.
    pub fn phases(&self, rows: &[Vec<f64>], r: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k0 = self.rf.wavenumber();
        let kg = self.rf.guided_wavenumber();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        r.iter()
            .map(|rj| rj.iter().zip(&flat).map(|(r, x)| k0 * r + kg * x).collect())
            .collect()
    }

    /// `(U, E)` satisfying both equality constraints exactly at `rows`.
    pub fn consistent_aux(&self, rows: &[Vec<f64>]) -> (Vec<Vec<Complex64>>, Vec<Vec<f64>>) {
        let r = self.distances(rows);
        let e = self.phases(rows, &r);
        let u = r
            .iter()
            .zip(&e)
            .map(|(rj, ej)| rj.iter().zip(ej).map(|(r, e)| Complex64::from_polar(1.0 / r, -e)).collect())
            .collect();
        (u, e)
    }

    /// Normalised effective channels of the actual layout.
    pub fn true_channels(&self, rows: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
        let (u, _) = self.consistent_aux(rows);
        u.iter().map(|uj| combine(uj, self.wg(), self.pas())).collect()
    }

    /// Per-user rates of the actual layout with normalised beamformers.
    pub fn report(&self, rows: &[Vec<f64>], beamformers: &[Vec<Complex64>]) -> RateReport {
        multistream_report(&self.true_channels(rows), &self.stream_of, beamformers, self.noise())
    }
}

/// Per-waveguide sums of the auxiliary coefficients: the effective channel they imply.
pub fn combine(u: &[Complex64], waveguides: usize, pas: usize) -> Vec<Complex64> {
    (0..waveguides).map(|i| u[i * pas..(i + 1) * pas].iter().sum()).collect()
}

/// `y(mu) = 2 Re{mu* h w_k} - |mu|^2 (interference + noise)`.
pub fn quadratic_transform_value(
    mu: Complex64,
    channel: &[Complex64],
    beamformers: &[Vec<Complex64>],
    stream: usize,
    noise: f64,
) -> f64 {
    let desired = dot(channel, &beamformers[stream]);
    let interference: f64 = beamformers
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != stream)
        .map(|(_, w)| dot(channel, w).norm_sqr())
        .sum();
    2.0 * (mu.conj() * desired).re - mu.norm_sqr() * (interference + noise)
}

/// Maximiser of [`quadratic_transform_value`] over `mu`.
pub fn optimal_mu(channel: &[Complex64], beamformers: &[Vec<Complex64>], stream: usize, noise: f64) -> Complex64 {
    let desired = dot(channel, &beamformers[stream]);
    let interference: f64 = beamformers
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != stream)
        .map(|(_, w)| dot(channel, w).norm_sqr())
        .sum();
    desired / (interference + noise)
}

/// Quadratic-transform lower bounds `y_j(w)` of every user, in the stacked beamformer
/// `[w_0; w_1; ...]`. `channels[j]` has one entry per transmit chain.
pub fn stream_quadratics(
    channels: &[Vec<Complex64>],
    stream_of: &[usize],
    streams: usize,
    mu: &[Complex64],
    noise: f64,
) -> Vec<ComplexQuadratic> {
    channels
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let kw = h.len();
            let dim = streams * kw;
            let k = stream_of[j];
            let m2 = mu[j].norm_sqr();
            let mut a = vec![Complex64::new(0.0, 0.0); dim];
            for i in 0..kw {
                a[k * kw + i] = mu[j] * h[i].conj();
            }
            let mut q = DMatrix::zeros(dim, dim);
            for s in (0..streams).filter(|&s| s != k) {
                for a_ in 0..kw {
                    for b_ in 0..kw {
                        q[(s * kw + a_, s * kw + b_)] = h[a_].conj() * h[b_] * m2;
                    }
                }
            }
            ComplexQuadratic { a, q, c: -m2 * noise }
        })
        .collect()
}

/// Beamformers `sqrt(p_k) e_k` of a power allocation.
pub fn diagonal_beamformers(powers: &[f64]) -> Vec<Vec<Complex64>> {
    let k = powers.len();
    (0..k)
        .map(|s| {
            let mut w = vec![Complex64::new(0.0, 0.0); k];
            w[s] = Complex64::new(powers[s].max(0.0).sqrt(), 0.0);
            w
        })
        .collect()
}

/// Multipliers of every user on the actual channel, physical units.
pub fn mu_update(
    layout: &PinchingLayout,
    state: &BasebandState,
    users: &UserLayout,
    geometry: &Geometry,
    rf: &RfConfig,
) -> Vec<Complex64> {
    let noise = rf.noise_power_w;
    match state {
        BasebandState::Wm { beamformers } => users
            .positions
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let h = crate::channel::effective_channel(p, layout, geometry, rf);
                optimal_mu(&h, beamformers, users.group_of(j), noise)
            })
            .collect(),
        BasebandState::Wd { powers } => {
            let w = diagonal_beamformers(powers);
            users
                .positions
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let h = crate::channel::effective_channel(p, layout, geometry, rf);
                    optimal_mu(&h, &w, users.group_of(j), noise)
                })
                .collect()
        }
        BasebandState::Ws {
            layouts, beamformers, ..
        } => users
            .positions
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let k = users.group_of(j);
                let h = crate::channel::effective_channel(p, &layouts[k], geometry, rf);
                optimal_mu(&h, std::slice::from_ref(&beamformers[k]), 0, noise)
            })
            .collect(),
    }
}

/// Auxiliary variables: coefficients `u`, phases `e` (both `[user][i * N + n]`) and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    pub u: Vec<Vec<Complex64>>,
    pub e: Vec<Vec<f64>>,
    pub mu: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda_u: Vec<Vec<Complex64>>,
    pub lambda_e: Vec<Vec<f64>>,
    pub rho: f64,
}

impl DualState {
    pub fn zeros(users: usize, entries: usize, rho: f64) -> Self {
        Self {
            lambda_u: vec![vec![Complex64::new(0.0, 0.0); entries]; users],
            lambda_e: vec![vec![0.0; entries]; users],
            rho,
        }
    }
}

/// Equality residuals `A = u r - exp(-j e)` and `B = e - kappa r - kappa_g x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPack {
    pub a: Vec<Vec<Complex64>>,
    pub b: Vec<Vec<f64>>,
    pub max_inf_norm: f64,
}

pub fn residuals(problem: &PddProblem, rows: &[Vec<f64>], u: &[Vec<Complex64>], e: &[Vec<f64>]) -> ResidualPack {
    let r = problem.distances(rows);
    let theta = problem.phases(rows, &r);
    let mut max = 0.0f64;
    let mut a = Vec::with_capacity(u.len());
    let mut b = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let aj: Vec<Complex64> = (0..r[j].len())
            .map(|m| u[j][m] * r[j][m] - Complex64::from_polar(1.0, -e[j][m]))
            .collect();
        let bj: Vec<f64> = (0..r[j].len()).map(|m| e[j][m] - theta[j][m]).collect();
        for v in &aj {
            max = max.max(v.re.abs()).max(v.im.abs());
        }
        for v in &bj {
            max = max.max(v.abs());
        }
        a.push(aj);
        b.push(bj);
    }
    ResidualPack {
        a,
        b,
        max_inf_norm: max,
    }
}

/// Augmented-Lagrangian penalty `(1/2rho) sum(|A + rho lambda_u|^2 + (B + rho lambda_e)^2)`.
pub fn al_value(problem: &PddProblem, rows: &[Vec<f64>], u: &[Vec<Complex64>], e: &[Vec<f64>], duals: &DualState) -> f64 {
    let res = residuals(problem, rows, u, e);
    let rho = duals.rho;
    let mut acc = 0.0;
    for j in 0..u.len() {
        for m in 0..res.a[j].len() {
            acc += (res.a[j][m] + duals.lambda_u[j][m] * rho).norm_sqr();
            let b = res.b[j][m] + rho * duals.lambda_e[j][m];
            acc += b * b;
        }
    }
    acc / (2.0 * rho)
}

/// Baseband update for fixed multipliers and auxiliary coefficients.
/// Returns the new worst-user value of the quadratic transform and the beamformers.
pub fn subproblem_w(
    problem: &PddProblem,
    mu: &[Complex64],
    u: &[Vec<Complex64>],
    previous: &[Vec<Complex64>],
) -> Result<(f64, Vec<Vec<Complex64>>)> {
    let kw = problem.wg();
    let streams = problem.streams;
    let noise = problem.noise();
    let hbar: Vec<Vec<Complex64>> = u.iter().map(|uj| combine(uj, kw, problem.pas())).collect();
    let beamformers = match problem.mode {
        BasebandMode::Full => {
            let fs = stream_quadratics(&hbar, &problem.stream_of, streams, mu, noise);
            let warm: Vec<Complex64> = previous.iter().flatten().copied().collect();
            let rep = maxmin_quadratics_ball(&fs, 1.0, Some(&warm))?;
            let z = rep.complex_optimizer();
            (0..streams).map(|s| z[s * kw..(s + 1) * kw].to_vec()).collect::<Vec<_>>()
        }
        BasebandMode::Diagonal => {
            let terms: Vec<PowerTerm> = hbar
                .iter()
                .enumerate()
                .map(|(j, h)| {
                    let k = problem.stream_of[j];
                    let m2 = mu[j].norm_sqr();
                    PowerTerm {
                        stream: k,
                        linear: 2.0 * (mu[j].conj() * h[k]).re,
                        interference: (0..streams).map(|s| if s == k { 0.0 } else { m2 * h[s].norm_sqr() }).collect(),
                        constant: -m2 * noise,
                    }
                })
                .collect();
            let warm: Vec<f64> = (0..streams).map(|s| previous[s][s].norm_sqr()).collect();
            let rep = maxmin_power_budget(&terms, 1.0, Some(&warm))?;
            diagonal_beamformers(&rep.optimizer)
        }
    };
    let gamma = worst_value(problem, mu, &hbar, &beamformers);
    Ok((gamma, beamformers))
}

fn worst_value(problem: &PddProblem, mu: &[Complex64], hbar: &[Vec<Complex64>], w: &[Vec<Complex64>]) -> f64 {
    let noise = problem.noise();
    hbar.iter()
        .enumerate()
        .map(|(j, h)| quadratic_transform_value(mu[j], h, w, problem.stream_of[j], noise))
        .fold(f64::INFINITY, f64::min)
}

/// Worst-user quadratic-transform value with coefficients `u`.
pub fn worst_user_value(problem: &PddProblem, mu: &[Complex64], u: &[Vec<Complex64>], w: &[Vec<Complex64>]) -> f64 {
    let hbar: Vec<Vec<Complex64>> = u.iter().map(|uj| combine(uj, problem.wg(), problem.pas())).collect();
    worst_value(problem, mu, &hbar, w)
}

/// Auxiliary-coefficient update: `max gamma - penalty` s.t. every user's value is at least `gamma`.
///
/// The penalty is separable and diagonal in `u` while the constraints see `u` only through
/// its projections on the stream beamformers, so the optimum lies on a low-dimensional
/// affine set; the kernel is run on that reduced program. Returns `(gamma, U)`.
pub fn subproblem_u(
    problem: &PddProblem,
    mu: &[Complex64],
    beamformers: &[Vec<Complex64>],
    rows: &[Vec<f64>],
    e: &[Vec<f64>],
    current_u: &[Vec<Complex64>],
    duals: &DualState,
) -> Result<(f64, Vec<Vec<Complex64>>)> {
    let rho = duals.rho;
    let noise = problem.noise();
    let kw = problem.wg();
    let n_pa = problem.pas();
    let streams = problem.streams;
    let r = problem.distances(rows);

    struct Reduced {
        u0: Vec<Complex64>,
        basis: DMatrix<Complex64>,
        lambda: Vec<f64>,
    }
    let mut reduced = Vec::with_capacity(problem.users.len());
    let mut blocks = Vec::new();
    let mut constraints = Vec::new();
    let mut start = Vec::new();
    for j in 0..problem.users.len() {
        let rj = &r[j];
        let entries = rj.len();
        let u0: Vec<Complex64> = (0..entries)
            .map(|m| {
                let zeta = duals.lambda_u[j][m] * rho - Complex64::from_polar(1.0, -e[j][m]);
                -zeta / rj[m]
            })
            .collect();
        // b[m][s] = w_s(i) for entry m = i * N + n
        let b = |m: usize, s: usize| beamformers[s][m / n_pa];
        let mut gram = DMatrix::<Complex64>::zeros(streams, streams);
        for m in 0..entries {
            let inv = 1.0 / (rj[m] * rj[m]);
            for a in 0..streams {
                for c in 0..streams {
                    gram[(a, c)] += b(m, a) * b(m, c).conj() * inv;
                }
            }
        }
        let eig = gram.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(*v));
        let keep: Vec<usize> = (0..streams)
            .filter(|&c| eig.eigenvalues[c] > 1e-12 * top && top > 0.0)
            .collect();
        let rank = keep.len();
        let basis = DMatrix::from_fn(streams, rank, |a, c| eig.eigenvectors[(a, keep[c])]);
        let lambda: Vec<f64> = keep.iter().map(|&c| eig.eigenvalues[c]).collect();
        let z0: Vec<Complex64> = (0..streams)
            .map(|s| (0..entries).map(|m| b(m, s) * u0[m]).sum())
            .collect();
        // z = z0 + tilde beta, tilde = basis * diag(lambda)
        let tilde = DMatrix::from_fn(streams, rank, |a, c| basis[(a, c)] * lambda[c]);
        if rank > 0 {
            let k = problem.stream_of[j];
            let m2 = mu[j].norm_sqr();
            let mut a_vec = vec![Complex64::new(0.0, 0.0); rank];
            let mut q = DMatrix::<Complex64>::zeros(rank, rank);
            let mut c = 2.0 * (mu[j].conj() * z0[k]).re - m2 * noise;
            for c_ in 0..rank {
                a_vec[c_] = mu[j] * tilde[(k, c_)].conj();
            }
            for s in (0..streams).filter(|&s| s != k) {
                c -= m2 * z0[s].norm_sqr();
                for c_ in 0..rank {
                    a_vec[c_] -= z0[s] * tilde[(s, c_)].conj() * m2;
                    for d_ in 0..rank {
                        q[(c_, d_)] += tilde[(s, c_)].conj() * tilde[(s, d_)] * m2;
                    }
                }
            }
            let block_index = blocks.len();
            let obj_q = DMatrix::from_fn(rank, rank, |a, c| {
                if a == c {
                    Complex64::new(lambda[a] / (2.0 * rho), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            // |z_k| cannot exceed its value under perfect phase alignment; the bound is
            // redundant at consistency and keeps the desired signal finite otherwise.
            let coherent: f64 = (0..kw)
                .map(|i| beamformers[k][i].norm() * (0..n_pa).map(|n| 1.0 / rj[i * n_pa + n]).sum::<f64>())
                .sum();
            let row: Vec<Complex64> = (0..rank).map(|c_| tilde[(k, c_)]).collect();
            let row_norm2: f64 = row.iter().map(|v| v.norm_sqr()).sum();
            let bound = ComplexQuadratic {
                a: row.iter().map(|t| -z0[k] * t.conj()).collect(),
                q: DMatrix::from_fn(rank, rank, |a, c| row[a].conj() * row[c]),
                c: coherent * coherent - z0[k].norm_sqr(),
            };
            blocks.push(Block {
                dim: 2 * rank,
                objective: Some(
                    ComplexQuadratic {
                        a: vec![Complex64::new(0.0, 0.0); rank],
                        q: obj_q,
                        c: 0.0,
                    }
                    .realify(),
                ),
                ball: None,
                nonneg: false,
                bounds: vec![bound.realify()],
            });
            constraints.push((block_index, ComplexQuadratic { a: a_vec, q, c }.realify()));
            // warm start: projections of the current coefficients
            let zc: Vec<Complex64> = (0..streams)
                .map(|s| (0..entries).map(|m| b(m, s) * current_u[j][m]).sum())
                .collect();
            let mut beta0: Vec<Complex64> = (0..rank)
                .map(|c_| {
                    let proj: Complex64 = (0..streams).map(|s| basis[(s, c_)].conj() * (zc[s] - z0[s])).sum();
                    proj / lambda[c_]
                })
                .collect();
            let zk = z0[k] + row.iter().zip(&beta0).map(|(t, b)| t * b).sum::<Complex64>();
            if zk.norm() > 0.99 * coherent && row_norm2 > 0.0 {
                let target = zk * (0.9 * coherent / zk.norm());
                let shift = (target - zk) / row_norm2;
                for (b, t) in beta0.iter_mut().zip(&row) {
                    *b += t.conj() * shift;
                }
            }
            start.extend(realify_vec(&beta0));
        } else {
            // no usable beamformer direction: this user's value does not depend on u
            let w_zero: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); kw]; streams];
            let h = combine(&u0, kw, n_pa);
            let y = quadratic_transform_value(mu[j], &h, &w_zero, problem.stream_of[j], noise);
            let dim = 1;
            let block_index = blocks.len();
            blocks.push(Block::free(dim));
            constraints.push((
                block_index,
                crate::kernel::ConcaveQuadratic::new(
                    DMatrix::zeros(dim, dim),
                    nalgebra::DVector::zeros(dim),
                    y,
                ),
            ));
            start.push(0.0);
        }
        reduced.push(Reduced { u0, basis, lambda });
    }
    let problem_ep = EpigraphProblem { blocks, constraints };
    let rep = solve_epigraph(&problem_ep, &start, &BarrierOptions::default())?;

    let mut offset = 0;
    let mut u_new = Vec::with_capacity(reduced.len());
    for (j, red) in reduced.into_iter().enumerate() {
        let rank = red.lambda.len();
        if rank == 0 {
            offset += 1;
            u_new.push(red.u0);
            continue;
        }
        let beta: Vec<Complex64> = (0..rank)
            .map(|c| Complex64::new(rep.optimizer[offset + c], rep.optimizer[offset + rank + c]))
            .collect();
        offset += 2 * rank;
        let alpha: Vec<Complex64> = (0..problem.streams)
            .map(|s| (0..rank).map(|c| red.basis[(s, c)] * beta[c]).sum())
            .collect();
        let uj: Vec<Complex64> = red
            .u0
            .iter()
            .enumerate()
            .map(|(m, u0)| {
                let corr: Complex64 = (0..problem.streams)
                    .map(|s| beamformers[s][m / n_pa].conj() * alpha[s])
                    .sum();
                u0 + corr / (r[j][m] * r[j][m])
            })
            .collect();
        u_new.push(uj);
    }
    let gamma = worst_user_value(problem, mu, &u_new, beamformers);
    Ok((gamma, u_new))
}

/// Convex majorizer used by the position update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XSurrogate {
    /// Each squared residual is written as (affine + u * q)^2 with `q = r - tangent(r) >= 0`;
    /// cross terms are bounded by their non-negative parts. Tight curvature at the expansion point.
    Tangent,
    /// Expanded quadratic with the concave distance term linearised and the `x * r` product
    /// bounded by the arithmetic-geometric mean inequality.
    Jensen,
}

#[derive(Debug, Clone, Copy)]
struct PaTerm {
    user_x: f64,
    c2: f64,
    u: Complex64,
    zeta: Complex64,
    e_shift: f64,
    r_t: f64,
    dr_t: f64,
    // Jensen data
    lin_coef: f64,
    shift: f64,
    ratio: f64,
    // Tangent data
    amp_t: Complex64,
    psi_t: f64,
    dpsi: f64,
}

/// `r(x) - r(x_t) - r'(x_t) (x - x_t)` without cancellation.
fn distance_excess(x: f64, x_t: f64, user_x: f64, c2: f64, r: f64, r_t: f64) -> f64 {
    let delta = x - x_t;
    let dx = x - user_x;
    let dt = x_t - user_x;
    let cross = if dx * dt > 0.0 {
        c2 * (dt * dt + dx * dx + c2) / (r_t * r + dt * dx)
    } else {
        r_t * r - dt * dx
    };
    delta * delta * (cross + c2) / (r_t * (r + r_t) * (r + r_t))
}

/// Convex majorizer of the penalty along one waveguide, tangent at the current positions.
#[derive(Debug, Clone)]
pub struct WaveguideSurrogate {
    kind: XSurrogate,
    kappa: f64,
    kappa_g: f64,
    half_inv_rho: f64,
    expansion: Vec<f64>,
    terms: Vec<Vec<PaTerm>>,
}

impl WaveguideSurrogate {
    pub fn new(
        problem: &PddProblem,
        kind: XSurrogate,
        waveguide: usize,
        rows: &[Vec<f64>],
        u: &[Vec<Complex64>],
        e: &[Vec<f64>],
        duals: &DualState,
    ) -> Self {
        let kappa = problem.rf.wavenumber();
        let kappa_g = problem.rf.guided_wavenumber();
        let rho = duals.rho;
        let n_pa = problem.pas();
        let expansion = rows[waveguide].clone();
        let terms = (0..n_pa)
            .map(|n| {
                let m = waveguide * n_pa + n;
                let x_t = expansion[n];
                (0..problem.users.len())
                    .map(|j| {
                        let user_x = problem.users[j].x;
                        let c2 = problem.c2(j, waveguide);
                        let uu = u[j][m];
                        let zeta = duals.lambda_u[j][m] * rho - Complex64::from_polar(1.0, -e[j][m]);
                        let e_shift = e[j][m] + rho * duals.lambda_e[j][m];
                        let r_t = ((x_t - user_x) * (x_t - user_x) + c2).sqrt();
                        let dr_t = (x_t - user_x) / r_t;
                        let shift = (r_t - x_t).max(0.0);
                        PaTerm {
                            user_x,
                            c2,
                            u: uu,
                            zeta,
                            e_shift,
                            r_t,
                            dr_t,
                            lin_coef: 2.0 * (uu.conj() * zeta).re - 2.0 * e_shift * kappa,
                            shift,
                            ratio: r_t / (x_t + shift),
                            amp_t: uu * r_t + zeta,
                            psi_t: e_shift - kappa * r_t - kappa_g * x_t,
                            dpsi: -kappa * dr_t - kappa_g,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            kind,
            kappa,
            kappa_g,
            half_inv_rho: 0.5 / rho,
            expansion,
            terms,
        }
    }

    pub fn expansion_point(&self) -> &[f64] {
        &self.expansion
    }

    /// Penalty contribution of antenna `n` at position `x` (no surrogate).
    pub fn exact(&self, n: usize, x: f64) -> f64 {
        self.terms[n].iter().map(|t| self.term(t, n, x).0).sum()
    }

    /// Surrogate minus exact penalty; non-negative.
    pub fn gap(&self, n: usize, x: f64) -> f64 {
        self.terms[n].iter().map(|t| self.term(t, n, x).2).sum()
    }

    /// (exact, exact', gap, gap', surrogate'')
    fn term(&self, t: &PaTerm, n: usize, x: f64) -> (f64, f64, f64, f64, f64) {
        let (k0, kg, h) = (self.kappa, self.kappa_g, self.half_inv_rho);
        let x_t = self.expansion[n];
        let delta = x - x_t;
        let dx = x - t.user_x;
        let r = (dx * dx + t.c2).sqrt();
        let dr = dx / r;
        let d2r = t.c2 / (r * r * r);
        let a = t.u * r + t.zeta;
        let b = t.e_shift - k0 * r - kg * x;
        let exact = h * (a.norm_sqr() + b * b);
        let exact_d = h * (2.0 * (a.conj() * t.u).re * dr + 2.0 * b * (-k0 * dr - kg));
        let q = distance_excess(x, x_t, t.user_x, t.c2, r, t.r_t);
        let dq = dr - t.dr_t;

        let (gap, gap_d, curv) = match self.kind {
            XSurrogate::Jensen => {
                let kk = k0 * kg;
                let sq = t.ratio.sqrt();
                let p = x + t.shift;
                let am = sq * p - r / sq;
                let mut gap = kk * am * am + 2.0 * kk * t.shift * q;
                let mut gap_d = 2.0 * kk * am * (sq - dr / sq) + 2.0 * kk * t.shift * dq;
                let mut curv = 2.0 * (t.u.norm_sqr() + k0 * k0) + 2.0 * kg * kg + 2.0 * kk * (t.ratio + 1.0 / t.ratio);
                if t.lin_coef < 0.0 {
                    gap -= t.lin_coef * q;
                    gap_d -= t.lin_coef * dq;
                } else {
                    curv += t.lin_coef * d2r;
                }
                (gap, gap_d, curv)
            }
            XSurrogate::Tangent => {
                let u2 = t.u.norm_sqr();
                let drive = (t.amp_t.conj() * t.u).re;
                let sgn = if delta > 0.0 {
                    1.0
                } else if delta < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                // amplitude residual u r + zeta = (affine) + u q
                let (g0a, g1a, g2a) = ((-drive).max(0.0), u2 * t.dr_t.abs(), u2 * t.dr_t);
                // phase residual psi = (affine) - kappa q
                let (g0b, g1b, g2b) = (k0 * t.psi_t.max(0.0), k0 * t.dpsi.abs(), -k0 * t.dpsi);
                let (g0, g1, g2) = (g0a + g0b, g1a + g1b, g2a + g2b);
                let coeff = g0 + g1 * delta.abs() - g2 * delta;
                let gap = 2.0 * q * coeff;
                let gap_d = 2.0 * dq * coeff + 2.0 * q * (g1 * sgn - g2);
                let abs_q = 2.0 * sgn * dq + delta.abs() * d2r;
                let sq_q = 2.0 * dq * dq + 2.0 * q * d2r;
                let curv_a = 2.0 * u2 * t.dr_t * t.dr_t + 2.0 * d2r * drive.max(0.0) + 2.0 * g1a * abs_q + u2 * sq_q;
                let curv_b = 2.0 * t.dpsi * t.dpsi
                    + 2.0 * k0 * d2r * (-t.psi_t).max(0.0)
                    + 2.0 * g1b * abs_q
                    + k0 * k0 * sq_q;
                (gap, gap_d, curv_a + curv_b)
            }
        };
        (exact, exact_d, h * gap, h * gap_d, h * curv)
    }

    /// Surrogate of the whole waveguide at `row`.
    pub fn value(&self, row: &[f64]) -> f64 {
        row.iter().enumerate().map(|(n, &x)| self.exact(n, x) + self.gap(n, x)).sum()
    }

    pub fn exact_total(&self, row: &[f64]) -> f64 {
        row.iter().enumerate().map(|(n, &x)| self.exact(n, x)).sum()
    }
}

impl SeparableConvex for WaveguideSurrogate {
    fn dim(&self) -> usize {
        self.expansion.len()
    }

    fn eval(&self, n: usize, x: f64) -> (f64, f64, f64) {
        self.terms[n].iter().fold((0.0, 0.0, 0.0), |acc, t| {
            let (v, d, g, gd, c) = self.term(t, n, x);
            (acc.0 + v + g, acc.1 + d + gd, acc.2 + c)
        })
    }
}

/// One majorize-minimize pass over the positions; never increases the penalty.
pub fn subproblem_x(
    problem: &PddProblem,
    kind: XSurrogate,
    rows: &[Vec<f64>],
    u: &[Vec<Complex64>],
    e: &[Vec<f64>],
    duals: &DualState,
) -> Result<Vec<Vec<f64>>> {
    let length = problem.geometry.waveguide_length_m;
    let spacing = problem.geometry.min_antenna_spacing_m;
    (0..problem.wg())
        .map(|i| {
            let sur = WaveguideSurrogate::new(problem, kind, i, rows, u, e, duals);
            let x = box_ordered_qp(&sur, length, spacing, Some(&rows[i]))?;
            if sur.exact_total(&x) <= sur.exact_total(&rows[i]) {
                Ok(x)
            } else {
                Ok(rows[i].clone())
            }
        })
        .collect()
}

/// Closed-form phase update: minimises the penalty with its oscillating part replaced by
/// a quadratic upper bound at the current phases.
pub fn e_closed_form(
    problem: &PddProblem,
    rows: &[Vec<f64>],
    u: &[Vec<Complex64>],
    e_t: &[Vec<f64>],
    duals: &DualState,
) -> Vec<Vec<f64>> {
    let rho = duals.rho;
    let r = problem.distances(rows);
    let theta = problem.phases(rows, &r);
    (0..u.len())
        .map(|j| {
            (0..e_t[j].len())
                .map(|m| {
                    let v = duals.lambda_u[j][m] + u[j][m] * (r[j][m] / rho);
                    e_entry_update(e_t[j][m], v, theta[j][m], duals.lambda_e[j][m], rho)
                })
                .collect()
        })
        .collect()
}

/// One phase entry. `v = lambda_u + u r / rho`; the oscillating term is `-|v| cos(e + arg v)`.
pub fn e_entry_update(e_t: f64, v: Complex64, theta: f64, lambda_e: f64, rho: f64) -> f64 {
    let lip = v.norm();
    let grad = lip * (e_t + v.arg()).sin();
    (lip * e_t - grad + theta / rho - lambda_e) / (lip + 1.0 / rho)
}

/// Entry objective the phase update majorizes: `(e - theta + rho lambda_e)^2 / (2 rho) - |v| cos(e + arg v)`.
pub fn e_entry_objective(e: f64, v: Complex64, theta: f64, lambda_e: f64, rho: f64) -> f64 {
    let b = e - theta + rho * lambda_e;
    b * b / (2.0 * rho) - v.norm() * (e + v.arg()).cos()
}

/// Surrogate of [`e_entry_objective`] at expansion point `e_t`.
pub fn e_entry_surrogate(e: f64, e_t: f64, v: Complex64, theta: f64, lambda_e: f64, rho: f64) -> f64 {
    let b = e - theta + rho * lambda_e;
    let lip = v.norm();
    let f_t = -lip * (e_t + v.arg()).cos();
    let g_t = lip * (e_t + v.arg()).sin();
    b * b / (2.0 * rho) + f_t + g_t * (e - e_t) + 0.5 * lip * (e - e_t) * (e - e_t)
}

/// Full iterate of one PDD run (normalised units).
#[derive(Debug, Clone, PartialEq)]
pub struct PddState {
    pub rows: Vec<Vec<f64>>,
    pub beamformers: Vec<Vec<Complex64>>,
    pub aux: AuxState,
    pub duals: DualState,
}

/// Uniform layout, per-group maximum-ratio beamformers at equal power, residual-free auxiliaries.
pub fn initial_state(problem: &PddProblem, rho: f64) -> PddState {
    initial_state_from(problem, PinchingLayout::uniform(&problem.geometry).rows().to_vec(), rho)
}

/// Antennas split among the users each waveguide serves: group k's users for waveguide k when
/// there is one group per waveguide, otherwise every user.
pub fn user_block_rows(problem: &PddProblem) -> Result<Vec<Vec<f64>>> {
    let kw = problem.wg();
    let targets: Vec<Vec<usize>> = (0..kw)
        .map(|i| {
            (0..problem.users.len())
                .filter(|&j| problem.streams != kw || problem.stream_of[j] == i)
                .collect()
        })
        .collect();
    let layout = crate::ws_unicast::user_block_layout(&problem.users, &targets, &problem.geometry, &problem.rf)?;
    Ok(layout.rows().to_vec())
}

/// Start from `rows` with consistent auxiliaries and per-group MRT beamformers.
pub fn initial_state_from(problem: &PddProblem, rows: Vec<Vec<f64>>, rho: f64) -> PddState {
    let (u, e) = problem.consistent_aux(&rows);
    let kw = problem.wg();
    let hbar: Vec<Vec<Complex64>> = u.iter().map(|uj| combine(uj, kw, problem.pas())).collect();
    let share = 1.0 / problem.streams as f64;
    let beamformers = match problem.mode {
        BasebandMode::Diagonal => diagonal_beamformers(&vec![share; problem.streams]),
        BasebandMode::Full => (0..problem.streams)
            .map(|s| {
                let mut sum = vec![Complex64::new(0.0, 0.0); kw];
                for (j, h) in hbar.iter().enumerate() {
                    if problem.stream_of[j] == s {
                        for i in 0..kw {
                            sum[i] += h[i].conj();
                        }
                    }
                }
                let norm = sum.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    sum.iter().map(|c| c * (share.sqrt() / norm)).collect()
                } else {
                    vec![Complex64::new((share / kw as f64).sqrt(), 0.0); kw]
                }
            })
            .collect(),
    };
    let noise = problem.noise();
    let mu = hbar
        .iter()
        .enumerate()
        .map(|(j, h)| optimal_mu(h, &beamformers, problem.stream_of[j], noise))
        .collect();
    let entries = kw * problem.pas();
    PddState {
        rows,
        beamformers,
        aux: AuxState { u, e, mu },
        duals: DualState::zeros(problem.users.len(), entries, rho),
    }
}

/// One row per inner iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Sub-problem index (the group for per-group runs, otherwise 0).
    pub group: usize,
    pub outer: usize,
    pub inner: usize,
    /// Worst-user rate of the actual layout and beamformers, bps/Hz.
    pub min_rate: f64,
    pub max_residual: f64,
    pub rho: f64,
    /// Penalised inner objective.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct PddRun {
    pub state: PddState,
    pub trace: Vec<TraceRow>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Outer iterations discarded because the inner loop ran away.
    pub rejected: usize,
}

fn inner_sweep(problem: &PddProblem, config: &PddConfig, st: &mut PddState) -> Result<f64> {
    let (_, w) = subproblem_w(problem, &st.aux.mu, &st.aux.u, &st.beamformers)?;
    st.beamformers = w;
    let (gamma, u) = subproblem_u(problem, &st.aux.mu, &st.beamformers, &st.rows, &st.aux.e, &st.aux.u, &st.duals)?;
    st.aux.u = u;
    st.rows = subproblem_x(problem, config.x_surrogate, &st.rows, &st.aux.u, &st.aux.e, &st.duals)?;
    st.aux.e = e_closed_form(problem, &st.rows, &st.aux.u, &st.aux.e, &st.duals);
    Ok(gamma)
}

/// Runs the nested penalty / block-ascent loop from [`initial_state`].
pub fn run_pdd(problem: &PddProblem, config: &PddConfig, group: usize) -> Result<PddRun> {
    config.validate()?;
    let mut st = match config.initial_layout {
        InitialLayout::Uniform => initial_state(problem, config.initial_rho),
        InitialLayout::UserBlocks => initial_state_from(problem, user_block_rows(problem)?, config.initial_rho),
    };
    let mut trace = Vec::new();
    let mut prev_residual = f64::INFINITY;
    let mut inner_total = 0;
    let mut outer = 0;
    let mut final_residual = 0.0;
    let mut converged = false;
    let mut rejected = 0;
    while outer < config.max_outer {
        outer += 1;
        let snapshot = st.clone();
        let mut blown = false;
        let mut prev_obj = worst_user_value(problem, &st.aux.mu, &st.aux.u, &st.beamformers)
            - al_value(problem, &st.rows, &st.aux.u, &st.aux.e, &st.duals);
        for inner in 1..=config.max_inner {
            inner_total += 1;
            let noise = problem.noise();
            let kw = problem.wg();
            st.aux.mu = st
                .aux
                .u
                .iter()
                .enumerate()
                .map(|(j, uj)| optimal_mu(&combine(uj, kw, problem.pas()), &st.beamformers, problem.stream_of[j], noise))
                .collect();
            let gamma = match inner_sweep(problem, config, &mut st) {
                Ok(g) => g,
                Err(_) => {
                    blown = true;
                    break;
                }
            };
            let obj = gamma - al_value(problem, &st.rows, &st.aux.u, &st.aux.e, &st.duals);
            let res = residuals(problem, &st.rows, &st.aux.u, &st.aux.e);
            if !(res.max_inf_norm <= config.blowup_residual) || !obj.is_finite() {
                blown = true;
                break;
            }
            trace.push(TraceRow {
                group,
                outer,
                inner,
                min_rate: problem.report(&st.rows, &st.beamformers).min_rate,
                max_residual: res.max_inf_norm,
                rho: st.duals.rho,
                objective: obj,
            });
            let change = (obj - prev_obj).abs() / prev_obj.abs().max(1e-12);
            prev_obj = obj;
            if change < config.improvement_tol {
                break;
            }
        }
        if blown {
            rejected += 1;
            let rho = st.duals.rho * config.rejection_shrink;
            st = snapshot;
            st.duals.rho = rho;
            continue;
        }
        let res = residuals(problem, &st.rows, &st.aux.u, &st.aux.e);
        final_residual = res.max_inf_norm;
        if final_residual <= config.residual_tol {
            converged = true;
            break;
        }
        if final_residual <= config.residual_improvement * prev_residual {
            let inv = 1.0 / st.duals.rho;
            for j in 0..res.a.len() {
                for m in 0..res.a[j].len() {
                    st.duals.lambda_u[j][m] += res.a[j][m] * inv;
                    st.duals.lambda_e[j][m] += res.b[j][m] * inv;
                }
            }
        } else {
            st.duals.rho *= config.penalty_shrink;
        }
        prev_residual = final_residual;
    }
    Ok(PddRun {
        state: st,
        trace,
        outer_iterations: outer,
        inner_iterations: inner_total,
        final_residual,
        converged,
        rejected,
    })
}

/// Result of [`pdd_solve`] in physical units.
#[derive(Debug, Clone)]
pub struct PddOutcome {
    /// One layout for WM / WD, one per group for WS.
    pub layouts: Vec<PinchingLayout>,
    pub baseband: BasebandState,
    pub report: RateReport,
    pub trace: Vec<TraceRow>,
    /// For WS the largest count over the per-group runs.
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl PddOutcome {
    pub fn min_rate(&self) -> f64 {
        self.report.min_rate
    }
}

/// Solves the max-min problem of one transmission structure.
pub fn pdd_solve(scenario: &Scenario, users: &UserLayout, structure: Structure, config: &PddConfig) -> Result<PddOutcome> {
    let geometry = &scenario.geometry;
    let rf = &scenario.rf;
    let scale = rf.max_transmit_power_w.sqrt();
    match structure {
        Structure::Wm | Structure::Wd => {
            let mode = if structure == Structure::Wm {
                BasebandMode::Full
            } else {
                BasebandMode::Diagonal
            };
            let problem = PddProblem::multigroup(geometry, rf, users, mode)?;
            let run = run_pdd(&problem, config, 0)?;
            let layout = PinchingLayout::new(run.state.rows.clone(), geometry)?;
            let baseband = match mode {
                BasebandMode::Full => BasebandState::Wm {
                    beamformers: run
                        .state
                        .beamformers
                        .iter()
                        .map(|w| w.iter().map(|c| c * scale).collect())
                        .collect(),
                },
                BasebandMode::Diagonal => BasebandState::Wd {
                    powers: (0..problem.streams)
                        .map(|s| run.state.beamformers[s][s].norm_sqr() * rf.max_transmit_power_w)
                        .collect(),
                },
            };
            let report = crate::rates::evaluate(&layout, &baseband, users, geometry, rf);
            Ok(PddOutcome {
                layouts: vec![layout],
                baseband,
                report,
                trace: run.trace,
                outer_iterations: run.outer_iterations,
                inner_iterations: run.inner_iterations,
                final_residual: run.final_residual,
                converged: run.converged,
            })
        }
        Structure::Ws => {
            let mut layouts = Vec::with_capacity(users.group_count);
            let mut beamformers = Vec::with_capacity(users.group_count);
            let mut trace = Vec::new();
            let (mut outer, mut inner, mut residual, mut converged) = (0, 0, 0.0f64, true);
            for k in 0..users.group_count {
                let problem = PddProblem::single_group(geometry, rf, users, k)?;
                let run = run_pdd(&problem, config, k)?;
                layouts.push(PinchingLayout::new(run.state.rows.clone(), geometry)?);
                beamformers.push(run.state.beamformers[0].iter().map(|c| c * scale).collect::<Vec<_>>());
                trace.extend(run.trace);
                outer = outer.max(run.outer_iterations);
                inner += run.inner_iterations;
                residual = residual.max(run.final_residual);
                converged &= run.converged;
            }
            let group_rates = crate::rates::ws_group_rates(&layouts, &beamformers, users, geometry, rf);
            let (time_shares, _) = time_allocation(&group_rates)?;
            let report = rate_ws(&layouts, &beamformers, &time_shares, users, geometry, rf);
            Ok(PddOutcome {
                layouts: layouts.clone(),
                baseband: BasebandState::Ws {
                    layouts,
                    beamformers,
                    time_shares,
                },
                report,
                trace,
                outer_iterations: outer,
                inner_iterations: inner,
                final_residual: residual,
                converged,
            })
        }
    }
}
