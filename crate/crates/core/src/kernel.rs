//! Small dense convex solvers.
//!
//! * [`solve_epigraph`]: primal log-barrier interior-point method for
//!   `max gamma + sum_b phi_b(z_b)` subject to `f_j(z_{b(j)}) >= gamma`, optional
//!   per-block power balls, non-negativity and concave-quadratic bounds. Every `f_j` and `phi_b` is a concave
//!   quadratic. The barrier Hessian is an arrowhead (gamma couples all blocks),
//!   so each Newton step factors the blocks independently.
//! * [`maxmin_quadratics_ball`] and [`maxmin_power_budget`]: the two max-min
//!   forms used for baseband updates.
//! * [`box_ordered_qp`]: separable convex minimisation over positions with box
//!   and minimum-spacing constraints, solved in gap coordinates.
//! * [`time_allocation`]: closed-form max-min time sharing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{PassError, Result};

/// Concave quadratic in real variables: `c + g.z - z' Q z`, with `Q` symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveQuadratic {
    pub q: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: f64,
}

impl ConcaveQuadratic {
    pub fn new(q: DMatrix<f64>, g: DVector<f64>, c: f64) -> Self {
        debug_assert_eq!(q.nrows(), g.len());
        Self { q, g, c }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Realifies `2 Re{a^H z} - z^H Q z + c` over `z = x + j y` stacked as `[x; y]`.
    pub fn from_complex(a: &[Complex64], q: &DMatrix<Complex64>, c: f64) -> Self {
        let n = a.len();
        let mut g = DVector::zeros(2 * n);
        for (m, am) in a.iter().enumerate() {
            g[m] = 2.0 * am.re;
            g[n + m] = 2.0 * am.im;
        }
        let mut qr = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for s in 0..n {
                // Hermitian part only; an anti-Hermitian remainder does not affect z^H Q z.
                let v = 0.5 * (q[(r, s)] + q[(s, r)].conj());
                qr[(r, s)] = v.re;
                qr[(n + r, n + s)] = v.re;
                qr[(r, n + s)] = -v.im;
                qr[(n + r, s)] = v.im;
            }
        }
        Self { q: qr, g, c }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        self.c + self.g.dot(&z) - (z.transpose() * &self.q * &z)[(0, 0)]
    }

    fn value_vec(&self, z: &DVector<f64>, qz: &DVector<f64>) -> f64 {
        self.c + self.g.dot(z) - z.dot(qz)
    }

    /// Smallest eigenvalue of `Q` (PSD check).
    pub fn min_curvature(&self) -> f64 {
        if self.q.nrows() == 0 {
            return 0.0;
        }
        self.q.clone().symmetric_eigenvalues().min()
    }
}

/// Complex-form concave quadratic `2 Re{a^H z} - z^H Q z + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexQuadratic {
    pub a: Vec<Complex64>,
    pub q: DMatrix<Complex64>,
    pub c: f64,
}

impl ComplexQuadratic {
    pub fn value(&self, z: &[Complex64]) -> f64 {
        let lin: Complex64 = self.a.iter().zip(z).map(|(a, z)| a.conj() * z).sum();
        let qz = &self.q * DVector::from_column_slice(z);
        let quad: Complex64 = z.iter().zip(qz.iter()).map(|(z, v)| z.conj() * v).sum();
        2.0 * lin.re - quad.re + self.c
    }

    pub fn realify(&self) -> ConcaveQuadratic {
        ConcaveQuadratic::from_complex(&self.a, &self.q, self.c)
    }
}

/// One variable block of an epigraph problem.
#[derive(Debug, Clone)]
pub struct Block {
    pub dim: usize,
    /// Concave term added to the objective.
    pub objective: Option<ConcaveQuadratic>,
    /// `||z_b||^2 <= radius_sq`.
    pub ball: Option<f64>,
    pub nonneg: bool,
    /// Extra constraints `h(z_b) >= 0`.
    pub bounds: Vec<ConcaveQuadratic>,
}

impl Block {
    pub fn free(dim: usize) -> Self {
        Self {
            dim,
            objective: None,
            ball: None,
            nonneg: false,
            bounds: Vec::new(),
        }
    }
}

/// `max gamma + sum_b phi_b(z_b)` s.t. `constraints[j].1 (z_{constraints[j].0}) >= gamma`.
#[derive(Debug, Clone)]
pub struct EpigraphProblem {
    pub blocks: Vec<Block>,
    pub constraints: Vec<(usize, ConcaveQuadratic)>,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Stop when `m / t` falls below `gap_tol * max(1, |objective|)`.
    pub gap_tol: f64,
    /// Factor by which `t` grows per centering stage.
    pub mu: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            mu: 10.0,
            max_newton: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `gamma + sum phi_b(z_b)` at the optimizer.
    pub value: f64,
    /// `min_j f_j(z)` at the optimizer.
    pub gamma: f64,
    /// Realified optimizer, blocks concatenated.
    pub optimizer: Vec<f64>,
    /// Largest violation of ball / sign constraints (0 when feasible).
    pub max_violation: f64,
    /// Final duality-gap bound `m / t`.
    pub gap_bound: f64,
    pub iterations: usize,
}

impl SolveReport {
    /// Interprets the optimizer as `[re; im]` of one complex vector.
    pub fn complex_optimizer(&self) -> Vec<Complex64> {
        complexify(&self.optimizer)
    }
}

pub fn complexify(z: &[f64]) -> Vec<Complex64> {
    let n = z.len() / 2;
    (0..n).map(|m| Complex64::new(z[m], z[n + m])).collect()
}

pub fn realify_vec(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

struct Layout {
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(blocks: &[Block]) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut acc = 0;
        for b in blocks {
            offsets.push(acc);
            acc += b.dim;
        }
        Self { offsets, total: acc }
    }
}

struct Eval {
    /// Barrier value at the point, or None when infeasible.
    value: Option<f64>,
}

impl EpigraphProblem {
    fn inequality_count(&self) -> usize {
        self.constraints.len()
            + self
                .blocks
                .iter()
                .map(|b| b.ball.is_some() as usize + b.bounds.len() + if b.nonneg { b.dim } else { 0 })
                .sum::<usize>()
    }

    fn block_slice<'a>(&self, lay: &Layout, z: &'a [f64], b: usize) -> &'a [f64] {
        &z[lay.offsets[b]..lay.offsets[b] + self.blocks[b].dim]
    }

    /// Objective `gamma + sum phi`.
    fn objective(&self, lay: &Layout, gamma: f64, z: &[f64]) -> f64 {
        gamma
            + self
                .blocks
                .iter()
                .enumerate()
                .filter_map(|(b, blk)| blk.objective.as_ref().map(|o| o.value(self.block_slice(lay, z, b))))
                .sum::<f64>()
    }

    fn min_constraint(&self, lay: &Layout, z: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|(b, f)| f.value(self.block_slice(lay, z, *b)))
            .fold(f64::INFINITY, f64::min)
    }

    fn barrier_value(&self, lay: &Layout, t: f64, gamma: f64, z: &[f64]) -> Eval {
        let mut val = -t * self.objective(lay, gamma, z);
        for (b, f) in &self.constraints {
            let s = f.value(self.block_slice(lay, z, *b)) - gamma;
            if !(s > 0.0) {
                return Eval { value: None };
            }
            val -= s.ln();
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let zb = self.block_slice(lay, z, b);
            if let Some(r2) = blk.ball {
                let h = r2 - zb.iter().map(|v| v * v).sum::<f64>();
                if !(h > 0.0) {
                    return Eval { value: None };
                }
                val -= h.ln();
            }
            if blk.nonneg {
                for &v in zb {
                    if !(v > 0.0) {
                        return Eval { value: None };
                    }
                    val -= v.ln();
                }
            }
            for h in &blk.bounds {
                let hv = h.value(zb);
                if !(hv > 0.0) {
                    return Eval { value: None };
                }
                val -= hv.ln();
            }
        }
        Eval { value: Some(val) }
    }

    /// Newton direction for the barrier function at (gamma, z). Returns (dgamma, dz, decrement^2).
    fn newton_step(&self, lay: &Layout, t: f64, gamma: f64, z: &[f64]) -> Option<(f64, Vec<f64>, f64)> {
        let nb = self.blocks.len();
        // gradient of the barrier function
        let mut g_gamma = -t;
        let mut h_gg = 0.0;
        let mut grads: Vec<DVector<f64>> = self.blocks.iter().map(|b| DVector::zeros(b.dim)).collect();
        let mut cross: Vec<DVector<f64>> = self.blocks.iter().map(|b| DVector::zeros(b.dim)).collect();
        let mut hess: Vec<DMatrix<f64>> = self.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect();

        for (b, blk) in self.blocks.iter().enumerate() {
            let zb = DVector::from_column_slice(self.block_slice(lay, z, b));
            if let Some(obj) = &blk.objective {
                // -t * phi: gradient -t (g - 2Qz), Hessian 2tQ
                let qz = &obj.q * &zb;
                grads[b] -= (&obj.g - 2.0 * &qz) * t;
                hess[b] += &obj.q * (2.0 * t);
            }
            if let Some(r2) = blk.ball {
                let h = r2 - zb.norm_squared();
                grads[b] += &zb * (2.0 / h);
                hess[b] += DMatrix::identity(blk.dim, blk.dim) * (2.0 / h);
                hess[b] += (&zb * zb.transpose()) * (4.0 / (h * h));
            }
            if blk.nonneg {
                for m in 0..blk.dim {
                    grads[b][m] -= 1.0 / zb[m];
                    hess[b][(m, m)] += 1.0 / (zb[m] * zb[m]);
                }
            }
            for h in &blk.bounds {
                let qz = &h.q * &zb;
                let hv = h.value_vec(&zb, &qz);
                let dh = &h.g - 2.0 * &qz;
                grads[b] -= &dh / hv;
                hess[b] += (&dh * dh.transpose()) / (hv * hv);
                hess[b] += &h.q * (2.0 / hv);
            }
        }
        for (b, f) in &self.constraints {
            let zb = DVector::from_column_slice(self.block_slice(lay, z, *b));
            let qz = &f.q * &zb;
            let s = f.value_vec(&zb, &qz) - gamma;
            let df = &f.g - 2.0 * &qz;
            // -log(s): d/dgamma = 1/s, d/dz = -df/s
            g_gamma += 1.0 / s;
            grads[*b] -= &df / s;
            h_gg += 1.0 / (s * s);
            cross[*b] -= &df / (s * s);
            hess[*b] += (&df * df.transpose()) / (s * s);
            hess[*b] += &f.q * (2.0 / s);
        }

        // arrowhead solve of H d = -grad
        let mut schur = h_gg;
        let mut rhs_gamma = -g_gamma;
        let mut solved: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(nb);
        for b in 0..nb {
            let chol = factor_spd(hess[b].clone())?;
            let hinv_c = chol.solve(&cross[b]);
            let hinv_r = chol.solve(&(-&grads[b]));
            schur -= cross[b].dot(&hinv_c);
            rhs_gamma -= cross[b].dot(&hinv_r);
            solved.push((hinv_c, hinv_r));
        }
        if !(schur > 0.0) {
            schur = h_gg.max(f64::MIN_POSITIVE) * 1e-12 + schur.abs();
        }
        let dgamma = rhs_gamma / schur;
        let mut dz = vec![0.0; lay.total];
        let mut dec = -g_gamma * dgamma;
        for (b, (hinv_c, hinv_r)) in solved.into_iter().enumerate() {
            let d = hinv_r - hinv_c * dgamma;
            dec -= grads[b].dot(&d);
            dz[lay.offsets[b]..lay.offsets[b] + d.len()].copy_from_slice(d.as_slice());
        }
        Some((dgamma, dz, dec))
    }
}

fn factor_spd(mut h: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = h.nrows();
    if n == 0 {
        return nalgebra::Cholesky::new(h);
    }
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..12 {
        if let Some(c) = nalgebra::Cholesky::new(h.clone()) {
            return Some(c);
        }
        let add = if ridge == 0.0 { scale * 1e-14 } else { ridge * 9.0 };
        for i in 0..n {
            h[(i, i)] += add;
        }
        ridge += add;
    }
    None
}

/// Solves an epigraph problem from the strictly feasible (after adjustment) start `z0`.
pub fn solve_epigraph(problem: &EpigraphProblem, z0: &[f64], opts: &BarrierOptions) -> Result<SolveReport> {
    let lay = Layout::new(&problem.blocks);
    if z0.len() != lay.total {
        return Err(PassError::ShapeMismatch(format!(
            "start has {} entries, problem has {}",
            z0.len(),
            lay.total
        )));
    }
    if problem.constraints.is_empty() {
        return Err(PassError::ShapeMismatch("epigraph problem without constraints".into()));
    }
    let mut z = z0.to_vec();
    // pull the start strictly inside balls and the positive orthant
    for (b, blk) in problem.blocks.iter().enumerate() {
        let range = lay.offsets[b]..lay.offsets[b] + blk.dim;
        if blk.nonneg {
            let floor = blk.ball.map_or(1e-3, |r2| 1e-3 * r2.sqrt() / (blk.dim as f64).sqrt());
            for v in &mut z[range.clone()] {
                if !(*v > floor) {
                    *v = floor;
                }
            }
        }
        if let Some(r2) = blk.ball {
            let n2: f64 = z[range.clone()].iter().map(|v| v * v).sum();
            let target = 0.9 * r2;
            if n2 > target {
                let s = (target / n2).sqrt();
                z[range].iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    let f_min = problem.min_constraint(&lay, &z);
    let mut gamma = f_min - 0.1 * (1.0 + f_min.abs());
    let m = problem.inequality_count() as f64;
    let scale0 = 1.0 + problem.objective(&lay, f_min, &z).abs();
    let mut t = m / scale0;
    let mut iterations = 0usize;

    loop {
        // centering
        let mut stage_steps = 0usize;
        loop {
            if iterations >= opts.max_newton {
                return Err(PassError::NonConvergence {
                    iterations,
                    residual: m / t,
                });
            }
            let Some((dg, dz, dec)) = problem.newton_step(&lay, t, gamma, &z) else {
                return Err(PassError::NonConvergence {
                    iterations,
                    residual: m / t,
                });
            };
            iterations += 1;
            stage_steps += 1;
            if !(dec.is_finite()) || dec / 2.0 <= 1e-10 || stage_steps > 80 {
                break;
            }
            let f0 = problem
                .barrier_value(&lay, t, gamma, &z)
                .value
                .expect("iterate stays strictly feasible");
            if dec < 1e-13 * f0.abs() {
                break;
            }
            let slope = -dec;
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let zn: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a + alpha * d).collect();
                let gn = gamma + alpha * dg;
                if let Some(fv) = problem.barrier_value(&lay, t, gn, &zn).value {
                    if fv <= f0 + 0.25 * alpha * slope {
                        z = zn;
                        gamma = gn;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no further progress possible at this precision
                break;
            }
        }
        let obj = problem.objective(&lay, gamma, &z);
        if m / t < opts.gap_tol * obj.abs().max(1.0) {
            break;
        }
        t *= opts.mu;
    }

    let gamma_star = problem.min_constraint(&lay, &z);
    let mut violation = 0.0f64;
    for (b, blk) in problem.blocks.iter().enumerate() {
        let zb = problem.block_slice(&lay, &z, b);
        if let Some(r2) = blk.ball {
            violation = violation.max(zb.iter().map(|v| v * v).sum::<f64>() - r2);
        }
        if blk.nonneg {
            violation = violation.max(zb.iter().map(|v| -v).fold(0.0, f64::max));
        }
        for h in &blk.bounds {
            violation = violation.max(-h.value(zb));
        }
    }
    Ok(SolveReport {
        value: problem.objective(&lay, gamma_star, &z),
        gamma: gamma_star,
        optimizer: z,
        max_violation: violation.max(0.0),
        gap_bound: m / t,
        iterations,
    })
}

/// `max_z min_i f_i(z)` over the complex ball `||z||^2 <= p_max`.
///
/// The start defaults to the origin when `warm` is `None`.
pub fn maxmin_quadratics_ball(fs: &[ComplexQuadratic], p_max: f64, warm: Option<&[Complex64]>) -> Result<SolveReport> {
    let dim = fs.first().map(|f| f.a.len()).ok_or_else(|| PassError::ShapeMismatch("no quadratics".into()))?;
    if !(p_max > 0.0) {
        return Err(crate::error::invalid("p_max", "must be positive"));
    }
    if fs.iter().any(|f| f.a.len() != dim || f.q.nrows() != dim || f.q.ncols() != dim) {
        return Err(PassError::ShapeMismatch("quadratics of different dimension".into()));
    }
    let problem = EpigraphProblem {
        blocks: vec![Block {
            dim: 2 * dim,
            objective: None,
            ball: Some(p_max),
            nonneg: false,
            bounds: Vec::new(),
        }],
        constraints: fs.iter().map(|f| (0, f.realify())).collect(),
    };
    let z0 = warm.map_or_else(|| vec![0.0; 2 * dim], realify_vec);
    solve_epigraph(&problem, &z0, &BarrierOptions::default())
}

/// WD power-allocation constraint of one user in `s = sqrt(p)` coordinates:
/// `linear * s[stream] - sum_k interference[k] * s[k]^2 + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTerm {
    pub stream: usize,
    pub linear: f64,
    /// Per-stream weights; the entry for `stream` itself must be zero.
    pub interference: Vec<f64>,
    pub constant: f64,
}

impl PowerTerm {
    pub fn value(&self, powers: &[f64]) -> f64 {
        self.linear * powers[self.stream].max(0.0).sqrt()
            - self.interference.iter().zip(powers).map(|(w, p)| w * p).sum::<f64>()
            + self.constant
    }
}

/// Max-min over power allocations with `sum p <= p_max`, `p >= 0`.
/// Returns the report whose optimizer holds the powers `p` (not their roots).
pub fn maxmin_power_budget(terms: &[PowerTerm], p_max: f64, warm: Option<&[f64]>) -> Result<SolveReport> {
    let k = terms
        .first()
        .map(|t| t.interference.len())
        .ok_or_else(|| PassError::ShapeMismatch("no power terms".into()))?;
    if !(p_max > 0.0) {
        return Err(crate::error::invalid("p_max", "must be positive"));
    }
    let constraints = terms
        .iter()
        .map(|t| {
            let mut q = DMatrix::zeros(k, k);
            for (m, w) in t.interference.iter().enumerate() {
                q[(m, m)] = if m == t.stream { 0.0 } else { w.max(0.0) };
            }
            let mut g = DVector::zeros(k);
            g[t.stream] = t.linear;
            (0, ConcaveQuadratic::new(q, g, t.constant))
        })
        .collect();
    let problem = EpigraphProblem {
        blocks: vec![Block {
            dim: k,
            objective: None,
            ball: Some(p_max),
            nonneg: true,
            bounds: Vec::new(),
        }],
        constraints,
    };
    let s0: Vec<f64> = match warm {
        Some(p) => p.iter().map(|v| v.max(0.0).sqrt()).collect(),
        None => vec![(p_max / k as f64).sqrt(); k],
    };
    let mut rep = solve_epigraph(&problem, &s0, &BarrierOptions::default())?;
    rep.optimizer = rep.optimizer.iter().map(|s| s * s).collect();
    Ok(rep)
}

/// Per-coordinate convex objective for [`box_ordered_qp`].
pub trait SeparableConvex {
    fn dim(&self) -> usize;
    /// (value, first derivative, second derivative) of term `n` at `x`.
    fn eval(&self, n: usize, x: f64) -> (f64, f64, f64);

    fn total(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(n, &v)| self.eval(n, v).0).sum()
    }
}

/// Sum of `weight * (x_n - target_n)^2`.
#[derive(Debug, Clone)]
pub struct WeightedTargets {
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SeparableConvex for WeightedTargets {
    fn dim(&self) -> usize {
        self.targets.len()
    }

    fn eval(&self, n: usize, x: f64) -> (f64, f64, f64) {
        let d = x - self.targets[n];
        let w = self.weights[n];
        (w * d * d, 2.0 * w * d, 2.0 * w)
    }
}

/// Minimises each term over its own implied box `[n*spacing, length - (N-1-n)*spacing]`.
/// Returns the point only when it also satisfies the ordering constraints, in
/// which case it solves the coupled problem exactly.
fn separable_minimiser(objective: &dyn SeparableConvex, length: f64, spacing: f64, start: Option<&[f64]>) -> Option<Vec<f64>> {
    let n = objective.dim();
    let mut x = Vec::with_capacity(n);
    for j in 0..n {
        let lo = j as f64 * spacing;
        let hi = length - (n - 1 - j) as f64 * spacing;
        let guess = start.filter(|s| s.len() == n).map(|s| s[j]).unwrap_or(0.5 * (lo + hi));
        x.push(minimise_1d(|v| objective.eval(j, v), lo, hi, guess)?);
    }
    for j in 1..n {
        if x[j] - x[j - 1] < spacing {
            return None;
        }
    }
    Some(x)
}

/// Safeguarded Newton for a convex function on `[lo, hi]`.
fn minimise_1d(f: impl Fn(f64) -> (f64, f64, f64), lo: f64, hi: f64, guess: f64) -> Option<f64> {
    let (_, dlo, _) = f(lo);
    if dlo >= 0.0 {
        return Some(lo);
    }
    let (_, dhi, _) = f(hi);
    if dhi <= 0.0 {
        return Some(hi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = guess.clamp(lo, hi);
    let tol = 1e-15 * hi.abs().max(1.0);
    for _ in 0..200 {
        let (_, d1, d2) = f(x);
        if !d1.is_finite() || !d2.is_finite() || d2 < 0.0 {
            return None;
        }
        if d1 == 0.0 {
            return Some(x);
        }
        if d1 > 0.0 {
            b = x;
        } else {
            a = x;
        }
        let newton = if d2 > 0.0 { x - d1 / d2 } else { f64::NAN };
        let next = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if (next - x).abs() <= tol || b - a <= tol {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Minimises a separable convex objective over `0 <= x_1`, `x_{n+1} - x_n >= spacing`, `x_N <= length`.
///
/// Works in gap coordinates `g_0 = x_1`, `g_n = x_{n+1} - x_n - spacing`, so ordering
/// becomes non-negativity. If `start` is given (feasible) and the computed point is not
/// better than it, `start` is returned unchanged.
pub fn box_ordered_qp(objective: &dyn SeparableConvex, length: f64, spacing: f64, start: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = objective.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    let span = (n - 1) as f64 * spacing;
    if !(length > span) {
        return Err(PassError::InfeasibleGeometry(format!(
            "length {length} m cannot hold {n} antennas at spacing {spacing} m"
        )));
    }
    let free = length - span;
    if let Some(x) = separable_minimiser(objective, length, spacing, start) {
        return Ok(x);
    }
    // strictly interior start: equal gaps, blended with the warm start
    let centre: Vec<f64> = {
        let g = free / (n as f64 + 1.0);
        (0..n).map(|j| g * (j as f64 + 1.0) + spacing * j as f64).collect()
    };
    let x0: Vec<f64> = match start {
        Some(s) if s.len() == n => s.iter().zip(&centre).map(|(a, c)| 0.999 * a + 0.001 * c).collect(),
        _ => centre.clone(),
    };
    let to_gaps = |x: &[f64]| -> Vec<f64> {
        let mut g = Vec::with_capacity(n);
        g.push(x[0]);
        for j in 1..n {
            g.push(x[j] - x[j - 1] - spacing);
        }
        g
    };
    let to_x = |g: &[f64]| -> Vec<f64> {
        let mut x = Vec::with_capacity(n);
        let mut acc = g[0];
        x.push(acc);
        for j in 1..n {
            acc += spacing + g[j];
            x.push(acc);
        }
        x
    };
    let mut g = to_gaps(&x0);
    if g.iter().any(|v| !(*v > 0.0)) || !(length - to_x(&g)[n - 1] > 0.0) {
        g = to_gaps(&centre);
    }
    let m = (n + 1) as f64;

    let barrier = |t: f64, g: &[f64]| -> Option<f64> {
        let x = to_x(g);
        let slack = length - x[n - 1];
        if !(slack > 0.0) || g.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let f = objective.total(&x);
        Some(t * f - g.iter().map(|v| v.ln()).sum::<f64>() - slack.ln())
    };

    // scale of the objective's variation from one unconstrained Newton estimate
    let x_init = to_x(&g);
    let mut est = 0.0;
    for (j, &xv) in x_init.iter().enumerate() {
        let (_, d1, d2) = objective.eval(j, xv);
        if d2 > 0.0 {
            est += 0.5 * d1 * d1 / d2;
        } else {
            est += d1.abs() * free;
        }
    }
    let var_scale = est.max(1e-12);
    let f_scale = objective.total(&x_init).abs();
    let mut t = m / var_scale;
    let stop = (1e-10 * var_scale).max(1e-14 * f_scale);
    let mut newton = 0usize;

    loop {
        let mut stage_steps = 0usize;
        loop {
            stage_steps += 1;
            if newton > 5000 {
                return Err(PassError::NonConvergence {
                    iterations: newton,
                    residual: m / t,
                });
            }
            let x = to_x(&g);
            let slack = length - x[n - 1];
            // gradient / Hessian in x, then map through x = T g (T lower-triangular ones)
            let mut dx = vec![0.0; n];
            let mut hx = vec![0.0; n];
            for j in 0..n {
                let (_, d1, d2) = objective.eval(j, x[j]);
                dx[j] = t * d1;
                hx[j] = t * d2.max(0.0);
            }
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            // d x_j / d g_i = 1 for i <= j
            let mut suffix = 0.0;
            for i in (0..n).rev() {
                suffix += dx[i];
                grad[i] = suffix - 1.0 / g[i] + 1.0 / slack;
            }
            for a in 0..n {
                for b in 0..n {
                    let lo = a.max(b);
                    let mut s = 0.0;
                    for j in lo..n {
                        s += hx[j];
                    }
                    hess[(a, b)] = s + 1.0 / (slack * slack);
                }
                hess[(a, a)] += 1.0 / (g[a] * g[a]);
            }
            let Some(chol) = factor_spd(hess) else {
                return Err(PassError::NonConvergence {
                    iterations: newton,
                    residual: m / t,
                });
            };
            let step = chol.solve(&(-&grad));
            let dec = -grad.dot(&step);
            newton += 1;
            if !dec.is_finite() || dec / 2.0 <= 1e-12 || stage_steps > 80 {
                break;
            }
            let f0 = barrier(t, &g).expect("feasible iterate");
            if dec < 1e-13 * f0.abs() {
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let gn: Vec<f64> = g.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some(fv) = barrier(t, &gn) {
                    if fv <= f0 - 0.25 * alpha * dec {
                        g = gn;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if m / t < stop {
            break;
        }
        t *= 10.0;
    }
    let x = to_x(&g);
    if let Some(s) = start {
        if s.len() == n && objective.total(&x) > objective.total(s) {
            return Ok(s.to_vec());
        }
    }
    Ok(x)
}

/// Closed-form `max_lambda min_k lambda_k R_k` over the simplex.
///
/// Returns `(lambda, xi)`. A zero rate makes the optimum 0: shares are then uniform.
pub fn time_allocation(rates: &[f64]) -> Result<(Vec<f64>, f64)> {
    if rates.is_empty() {
        return Err(PassError::ShapeMismatch("no groups".into()));
    }
    for (k, &r) in rates.iter().enumerate() {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(PassError::NonPositiveRate { group: k, rate: r });
        }
    }
    if rates.contains(&0.0) {
        let n = rates.len() as f64;
        return Ok((vec![1.0 / n; rates.len()], 0.0));
    }
    let inv_sum: f64 = rates.iter().map(|r| 1.0 / r).sum();
    let lambda = rates.iter().map(|r| (1.0 / r) / inv_sum).collect();
    Ok((lambda, 1.0 / inv_sum))
}
