//! Duhamel operator, the fixed point `I = 1 + 𝒦(I)`, the gauge function
//! `φ = 2β∫₀^∞ e^{−2βt} I(t) dt` and the Schrödinger-operator checks that
//! accompany it.
//!
//! Everything runs in the eigenbasis of `Δ`. A space-time field is held at
//! the nodes of a geometric time grid; the Duhamel integral of each mode is
//! done exactly against a quintic Lagrange interpolant of its source, so the
//! only time error is the interpolation error of `V·u`.

use faer::prelude::Solve;
use faer::{Mat, Side};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{DiscreteField, ModelGeometry};
use crate::kato::{check_potential, kato_of_potential};
use crate::spectral::{stiffness_matrix, SpectralDecomposition};

/// Relative slack on the Dynkin hypothesis, which is met with equality in
/// one parameter regime.
pub const HYPOTHESIS_RTOL: f64 = 1e-10;

/// Interpolation stencil width in time.
const P: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `intervals` steps on `[0, t_final]` growing by `ratio`.
    pub fn geometric(t_final: f64, intervals: usize, ratio: f64) -> Result<Self> {
        if !(t_final > 0.0) || intervals < P || !(ratio >= 1.0) {
            return Err(Error::Config(format!(
                "time grid needs T > 0, at least {P} intervals and ratio >= 1 (got {t_final}, {intervals}, {ratio})"
            )));
        }
        let times = if ratio == 1.0 {
            (0..=intervals).map(|j| t_final * j as f64 / intervals as f64).collect()
        } else {
            let total = ratio.powi(intervals as i32) - 1.0;
            let mut t: Vec<f64> = (0..=intervals)
                .map(|j| t_final * (ratio.powi(j as i32) - 1.0) / total)
                .collect();
            t[intervals] = t_final;
            t
        };
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() <= P || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::TimeGridMismatch);
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn stencil(&self, j: usize) -> [usize; P] {
        let s = self.intervals();
        let start = j.saturating_sub(P / 2).min(s + 1 - P);
        std::array::from_fn(|i| start + i)
    }

    /// Monomial coefficients in `σ = (t_j − s)/Δ_j` of the Lagrange basis
    /// polynomials on the stencil of interval `j`.
    fn lagrange_monomials(&self, j: usize) -> ([usize; P], [[f64; P]; P]) {
        let st = self.stencil(j);
        let dt = self.times[j] - self.times[j - 1];
        let sig: Vec<f64> = st.iter().map(|p| (self.times[j] - self.times[*p]) / dt).collect();
        let mut coef = [[0.0; P]; P];
        for a in 0..P {
            // product of (σ − σ_b)/(σ_a − σ_b) over b ≠ a
            let mut poly = [0.0; P];
            poly[0] = 1.0;
            let mut deg = 0;
            for b in 0..P {
                if a == b {
                    continue;
                }
                let d = sig[a] - sig[b];
                let mut next = [0.0; P];
                for m in 0..=deg {
                    next[m + 1] += poly[m] / d;
                    next[m] -= poly[m] * sig[b] / d;
                }
                poly = next;
                deg += 1;
            }
            coef[a] = poly;
        }
        (st, coef)
    }
}

/// `E_m(z) = ∫₀¹ e^{−zσ} σ^m dσ` for `m < P`.
pub(crate) fn exp_moments(z: f64) -> [f64; P] {
    if z.abs() < 2.0 {
        let mut out = [0.0; P];
        for (m, o) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for j in 0..60 {
                let add = term / (m + j + 1) as f64;
                sum += add;
                if add.abs() < 1e-18 * sum.abs() {
                    break;
                }
                term *= -z / (j + 1) as f64;
            }
            *o = sum;
        }
        out
    } else if z > 0.0 {
        let ez = (-z).exp();
        let mut out = [0.0; P];
        out[0] = -(-z).exp_m1() / z;
        for m in 1..P {
            out[m] = (m as f64 * out[m - 1] - ez) / z;
        }
        out
    } else {
        // reflect σ → 1 − σ so the recurrence runs on a positive argument
        let pos = exp_moments(-z);
        let scale = (-z).exp();
        let mut out = [0.0; P];
        for m in 0..P {
            // (1 − σ)^m expanded with alternating binomial coefficients
            let mut c = 1.0;
            let mut acc = 0.0;
            for (i, p) in pos.iter().enumerate().take(m + 1) {
                acc += c * p;
                c *= -((m - i) as f64) / (i + 1) as f64;
            }
            out[m] = scale * acc;
        }
        out
    }
}

/// Node values of a function on a time grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: TimeGrid,
    // nodes × times
    values: Mat<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: TimeGrid, slices: Vec<Vec<f64>>) -> Result<Self> {
        if slices.len() != grid.times.len() {
            return Err(Error::TimeGridMismatch);
        }
        let n = slices.first().map_or(0, |s| s.len());
        if slices.iter().any(|s| s.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                got: slices.iter().map(|s| s.len()).find(|l| *l != n).unwrap_or(0),
            });
        }
        if slices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite space-time value".into()));
        }
        let values = Mat::from_fn(n, slices.len(), |i, j| slices[j][i]);
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, nodes: usize, c: f64) -> Self {
        let cols = grid.times.len();
        Self {
            grid,
            values: Mat::from_fn(nodes, cols, |_, _| c),
        }
    }

    fn from_mat(grid: TimeGrid, values: Mat<f64>) -> Self {
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn slice(&self, j: usize) -> Vec<f64> {
        self.values.col_as_slice(j).to_vec()
    }

    pub fn value(&self, node: usize, j: usize) -> f64 {
        self.values[(node, j)]
    }

    /// Piecewise-linear interpolation in time.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let ts = &self.grid.times;
        let last = ts.len() - 1;
        if t <= 0.0 {
            return self.slice(0);
        }
        if t >= ts[last] {
            return self.slice(last);
        }
        let j = ts.partition_point(|x| *x <= t);
        let a = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
        let (c0, c1) = (self.values.col_as_slice(j - 1), self.values.col_as_slice(j));
        c0.iter().zip(c1).map(|(x, y)| (1.0 - a) * x + a * y).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        sup_abs(&self.values)
    }
}

fn sup_abs(m: &Mat<f64>) -> f64 {
    let mut s: f64 = 0.0;
    for j in 0..m.ncols() {
        for v in m.col_as_slice(j) {
            s = s.max(v.abs());
        }
    }
    s
}

/// Precomputed Duhamel operator `𝒦u(t) = ∫₀^t e^{−(t−s)Δ}(V u(s)) ds` on
/// one time grid.
pub struct DuhamelOperator<'a> {
    dec: &'a SpectralDecomposition,
    v: Vec<f64>,
    grid: TimeGrid,
    stencils: Vec<[usize; P]>,
    // [mode][interval-1][stencil point]
    omega: Vec<[f64; P]>,
    decay: Vec<f64>,
    norm_bound: f64,
}

impl<'a> DuhamelOperator<'a> {
    pub fn new(dec: &'a SpectralDecomposition, v: &[f64], grid: TimeGrid) -> Result<Self> {
        check_potential(v)?;
        if v.len() != dec.node_count() {
            return Err(Error::LengthMismatch {
                expected: dec.node_count(),
                got: v.len(),
            });
        }
        let s = grid.intervals();
        let m = dec.mode_count();
        let mut stencils = Vec::with_capacity(s);
        let mut monomials = Vec::with_capacity(s);
        for j in 1..=s {
            let (st, c) = grid.lagrange_monomials(j);
            stencils.push(st);
            monomials.push(c);
        }
        let mut omega = Vec::with_capacity(m * s);
        let mut decay = Vec::with_capacity(m * s);
        for &mu in dec.eigenvalues() {
            for j in 1..=s {
                let dt = grid.times[j] - grid.times[j - 1];
                let e = exp_moments(mu * dt);
                let c = &monomials[j - 1];
                let mut w = [0.0; P];
                for p in 0..P {
                    w[p] = dt * (0..P).map(|q| c[p][q] * e[q]).sum::<f64>();
                }
                omega.push(w);
                decay.push((-mu * dt).exp());
            }
        }
        let norm_bound = kato_of_potential(dec, v, grid.final_time())?;
        Ok(Self {
            dec,
            v: v.to_vec(),
            grid,
            stencils,
            omega,
            decay,
            norm_bound,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `k_T(V)`, the bound on `‖𝒦‖_{∞→∞}`.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// Apply `𝒦` to node values (nodes × times).
    fn apply_nodes(&self, u: &Mat<f64>) -> Mat<f64> {
        let n = u.nrows();
        let cols = u.ncols();
        let vu = Mat::from_fn(n, cols, |i, j| self.v[i] * u[(i, j)]);
        let b = self.dec.coefficients_batch(vu.as_ref());
        let a = self.integrate_modes(&b);
        self.dec.synthesize_batch(a.as_ref())
    }

    /// Mode-wise exponential integration of a source given at the time nodes.
    fn integrate_modes(&self, b: &Mat<f64>) -> Mat<f64> {
        let s = self.grid.intervals();
        let m = b.nrows();
        let mut a = Mat::<f64>::zeros(m, s + 1);
        for k in 0..m {
            let mut acc = 0.0;
            for j in 1..=s {
                let w = &self.omega[k * s + j - 1];
                let st = &self.stencils[j - 1];
                let src: f64 = (0..P).map(|p| w[p] * b[(k, st[p])]).sum();
                acc = self.decay[k * s + j - 1] * acc + src;
                a[(k, j)] = acc;
            }
        }
        a
    }

    pub fn apply(&self, u: &SpaceTimeField) -> Result<SpaceTimeField> {
        if u.grid != self.grid {
            return Err(Error::TimeGridMismatch);
        }
        if u.node_count() != self.dec.node_count() {
            return Err(Error::LengthMismatch {
                expected: self.dec.node_count(),
                got: u.node_count(),
            });
        }
        Ok(SpaceTimeField::from_mat(self.grid.clone(), self.apply_nodes(&u.values)))
    }

    /// Free evolution `τ ↦ e^{−τΔ}d` on the grid.
    fn free_evolution(&self, data: &[f64]) -> Result<Mat<f64>> {
        let d = self.dec.coefficients(data)?;
        let ts = &self.grid.times;
        let a = Mat::from_fn(d.len(), ts.len(), |k, j| {
            d[k] * (-self.dec.eigenvalues()[k] * ts[j]).exp()
        });
        Ok(self.dec.synthesize_batch(a.as_ref()))
    }
}

/// One-shot `𝒦u` on the grid carried by `u`.
pub fn duhamel_apply(dec: &SpectralDecomposition, v: &[f64], u: &SpaceTimeField) -> Result<SpaceTimeField> {
    let op = DuhamelOperator::new(dec, v, u.grid.clone())?;
    op.apply(u)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    /// Neumann-series tolerance, also the `φ` tail target.
    pub tol: f64,
    pub intervals: usize,
    pub ratio: f64,
    pub max_terms: usize,
    /// Slack on the pointwise bounds `1 ≤ I ≤ e^{β(T+t)}`.
    pub bound_slack: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            intervals: 96,
            ratio: 1.08,
            max_terms: 400,
            bound_slack: 1e-6,
        }
    }
}

/// The fixed point `I` on `[0, K·T]`, one field per window of length `T`.
#[derive(Debug, Clone)]
pub struct ISolution {
    pub windows: Vec<SpaceTimeField>,
    pub window_length: f64,
    pub kato_v: f64,
    pub terms_per_window: Vec<usize>,
    pub max_contraction: f64,
    pub final_term: f64,
    pub bounds_ok: bool,
    /// Worst violation of the pointwise bounds as `(window, time index, node, excess)`.
    pub worst_bound: Option<(usize, usize, usize, f64)>,
}

impl ISolution {
    pub fn first_window(&self) -> &SpaceTimeField {
        &self.windows[0]
    }

    /// `I(t, ·)` by linear interpolation inside the owning window.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let k = ((t / self.window_length).floor() as usize).min(self.windows.len() - 1);
        self.windows[k].at(t - k as f64 * self.window_length)
    }

    pub fn horizon(&self) -> f64 {
        self.window_length * self.windows.len() as f64
    }
}

/// `t_max = T + ln(2/tol)/β`, where the analytic tail of `φ` drops below `tol`.
pub fn laplace_horizon(beta: f64, t_final: f64, tol: f64) -> f64 {
    t_final + (2.0 / tol).ln() / beta
}

pub fn check_hypothesis(kato_v: f64, beta: f64, t_final: f64) -> Result<()> {
    let thr = -(-beta * t_final).exp_m1();
    if kato_v > thr * (1.0 + HYPOTHESIS_RTOL) {
        return Err(Error::HypothesisViolated(format!(
            "k_T(V) = {kato_v:.10} exceeds 1 - exp(-beta T) = {thr:.10}"
        )));
    }
    Ok(())
}

/// Neumann series for `I = 1 + 𝒦(I)` on `[0, T]`, continued window by window
/// until `horizon` (or just the first window when `horizon ≤ T`).
#[allow(non_snake_case)]
pub fn solve_I(
    dec: &SpectralDecomposition,
    v: &[f64],
    beta: f64,
    t_final: f64,
    horizon: f64,
    opts: &SolveOptions,
) -> Result<ISolution> {
    if !(beta > 0.0) {
        return Err(Error::OutOfRange {
            what: "beta",
            value: beta,
            range: "(0, inf)".into(),
        });
    }
    let grid = TimeGrid::geometric(t_final, opts.intervals, opts.ratio)?;
    let op = DuhamelOperator::new(dec, v, grid)?;
    let kato_v = op.norm_bound();
    check_hypothesis(kato_v, beta, t_final)?;
    let n = dec.node_count();
    let windows_needed = ((horizon / t_final).ceil() as usize).max(1);
    let mut data: Vec<f64> = vec![1.0; n];
    let mut windows = Vec::with_capacity(windows_needed);
    let mut terms_per_window = Vec::with_capacity(windows_needed);
    let mut max_contraction: f64 = 0.0;
    let mut final_term: f64 = 0.0;
    let mut worst: Option<(usize, usize, usize, f64)> = None;
    let ts = op.grid().times().to_vec();
    for w in 0..windows_needed {
        let data_norm = data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let stop = opts.tol * (1.0 - kato_v).max(f64::EPSILON) * data_norm;
        let mut term = op.free_evolution(&data)?;
        let mut total = term.clone();
        let mut prev_norm = sup_abs(&term);
        let mut terms = 1;
        let mut last = prev_norm;
        while prev_norm > stop {
            if terms >= opts.max_terms {
                return Err(Error::SeriesStagnation(max_contraction));
            }
            term = op.apply_nodes(&term);
            let norm = sup_abs(&term);
            if prev_norm > 1e-280 {
                let ratio = norm / prev_norm;
                if ratio >= 1.0 {
                    return Err(Error::SeriesStagnation(ratio));
                }
                max_contraction = max_contraction.max(ratio);
            }
            if norm == 0.0 {
                break;
            }
            total += &term;
            terms += 1;
            prev_norm = norm;
            last = norm;
        }
        final_term = final_term.max(last);
        terms_per_window.push(terms);
        let offset = w as f64 * t_final;
        for (j, t) in ts.iter().enumerate() {
            let upper = (beta * (t_final + offset + t)).exp();
            for (i, val) in total.col_as_slice(j).iter().enumerate() {
                let excess = (1.0 - val).max(val - upper);
                if excess > worst.map_or(f64::NEG_INFINITY, |x| x.3) {
                    worst = Some((w, j, i, excess));
                }
            }
        }
        data = total.col_as_slice(ts.len() - 1).to_vec();
        windows.push(SpaceTimeField::from_mat(op.grid().clone(), total));
    }
    let bounds_ok = worst.is_none_or(|x| x.3 <= opts.bound_slack);
    Ok(ISolution {
        windows,
        window_length: t_final,
        kato_v,
        terms_per_window,
        max_contraction,
        final_term,
        bounds_ok,
        worst_bound: worst.filter(|x| x.3 > 0.0),
    })
}

/// Weights `w_p` with `∫_{grid} e^{−2βs} u(s) ds ≈ Σ_p w_p u(t_p)` for the
/// piecewise quintic interpolant.
fn laplace_weights(grid: &TimeGrid, two_beta: f64) -> Vec<f64> {
    let s = grid.intervals();
    let mut w = vec![0.0; s + 1];
    for j in 1..=s {
        let (st, c) = grid.lagrange_monomials(j);
        let dt = grid.times[j] - grid.times[j - 1];
        let e = exp_moments(-two_beta * dt);
        let scale = dt * (-two_beta * grid.times[j]).exp();
        for p in 0..P {
            w[st[p]] += scale * (0..P).map(|q| c[p][q] * e[q]).sum::<f64>();
        }
    }
    w
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugeResult {
    pub phi: DiscreteField,
    /// Conformal exponent, filled in by the time change.
    pub f: Option<DiscreteField>,
    pub lambda: Option<f64>,
    pub beta: f64,
    pub t_final: f64,
    pub kato_v: f64,
    pub t_max: f64,
    pub windows: usize,
    pub series_terms: usize,
    pub series_tail: f64,
    pub max_contraction: f64,
    pub tail_bound: f64,
    pub pde_residual: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_upper: f64,
    pub bounds_ok: bool,
    pub i_bounds_ok: bool,
}

/// Gauge function by the Neumann series and a Laplace transform in time.
pub fn gauge_phi(
    geom: &ModelGeometry,
    dec: &SpectralDecomposition,
    v: &[f64],
    beta: f64,
    t_final: f64,
    opts: &SolveOptions,
) -> Result<GaugeResult> {
    let t_max = laplace_horizon(beta, t_final, opts.tol);
    let sol = solve_I(dec, v, beta, t_final, t_max, opts)?;
    let grid = sol.windows[0].grid().clone();
    let w = laplace_weights(&grid, 2.0 * beta);
    let n = dec.node_count();
    let mut phi = vec![0.0; n];
    for (k, win) in sol.windows.iter().enumerate() {
        let damp = (-2.0 * beta * t_final * k as f64).exp();
        for (p, wp) in w.iter().enumerate() {
            let c = 2.0 * beta * damp * wp;
            for (o, val) in phi.iter_mut().zip(win.values.col_as_slice(p)) {
                *o += c * val;
            }
        }
    }
    let horizon = sol.horizon();
    let tail_bound = 2.0 * (beta * t_final).exp() * (-beta * horizon).exp();
    let residual = gauge_residual(geom, v, beta, &phi);
    let upper = 2.0 * (beta * t_final).exp();
    let phi_min = phi.iter().cloned().fold(f64::INFINITY, f64::min);
    let phi_max = phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slack = opts.bound_slack;
    Ok(GaugeResult {
        phi: DiscreteField::new(geom, phi)?,
        f: None,
        lambda: None,
        beta,
        t_final,
        kato_v: sol.kato_v,
        t_max: horizon,
        windows: sol.windows.len(),
        series_terms: sol.terms_per_window.iter().sum(),
        series_tail: sol.final_term,
        max_contraction: sol.max_contraction,
        tail_bound,
        pde_residual: residual,
        phi_min,
        phi_max,
        phi_upper: upper,
        bounds_ok: phi_min >= 1.0 - slack && phi_max <= upper + slack,
        i_bounds_ok: sol.bounds_ok,
    })
}

/// `sup |Δφ − Vφ + 2βφ − 2β|`.
pub fn gauge_residual(geom: &ModelGeometry, v: &[f64], beta: f64, phi: &[f64]) -> f64 {
    let lap = geom.laplacian(phi);
    lap.iter()
        .zip(v)
        .zip(phi)
        .map(|((l, vi), p)| (l - vi * p + 2.0 * beta * p - 2.0 * beta).abs())
        .fold(0.0, f64::max)
}

/// `(Δ − V + 2β)φ = 2β` as one symmetric positive definite solve.
pub fn direct_solve_phi(geom: &ModelGeometry, v: &[f64], beta: f64) -> Result<DiscreteField> {
    check_potential(v)?;
    let n = geom.node_count();
    if v.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let w = geom.weights();
    let mut a = stiffness_matrix(geom);
    for i in 0..n {
        a[(i, i)] += w[i] * (2.0 * beta - v[i]);
    }
    let llt = match a.llt(Side::Lower) {
        Ok(l) => l,
        Err(_) => {
            let report = spectral_bound_check(geom, v, beta)?;
            return Err(Error::NotPositiveDefinite(report.lowest + 2.0 * beta));
        }
    };
    let rhs = Mat::from_fn(n, 1, |i, _| 2.0 * beta * w[i]);
    let sol = llt.solve(&rhs);
    DiscreteField::new(geom, (0..n).map(|i| sol[(i, 0)]).collect())
}

/// `M^{-1/2}(A − MV)M^{-1/2}`, the symmetric form of `Δ − V`.
fn schrodinger_symmetric(geom: &ModelGeometry, v: &[f64]) -> Mat<f64> {
    let a = stiffness_matrix(geom);
    let w = geom.weights();
    let n = geom.node_count();
    Mat::from_fn(n, n, |i, j| {
        let s = a[(i, j)] / (w[i] * w[j]).sqrt();
        if i == j {
            s - v[i]
        } else {
            s
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralBoundReport {
    pub lowest: f64,
    pub minus_beta: f64,
    pub margin: f64,
    pub holds: bool,
}

/// Smallest eigenvalue of the discrete `Δ − V` against `−β`.
pub fn spectral_bound_check(geom: &ModelGeometry, v: &[f64], beta: f64) -> Result<SpectralBoundReport> {
    check_potential(v)?;
    let s = schrodinger_symmetric(geom, v);
    let vals = s
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let lowest = vals[0];
    Ok(SpectralBoundReport {
        lowest,
        minus_beta: -beta,
        margin: lowest + beta,
        holds: lowest >= -beta,
    })
}

/// Norm in which the Schrödinger semigroup is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LpNorm {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

#[derive(Debug, Clone, Serialize)]
pub struct LpRow {
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LpReport {
    pub p: LpNorm,
    pub rows: Vec<LpRow>,
    pub holds: bool,
}

/// Eigendecomposition of `Δ − V`, used for exact Schrödinger semigroups.
pub struct SchrodingerSemigroup {
    values: Vec<f64>,
    // M^{-1/2} Q
    left: Mat<f64>,
    // M^{1/2} Q
    right: Mat<f64>,
}

impl SchrodingerSemigroup {
    pub fn new(geom: &ModelGeometry, v: &[f64]) -> Result<Self> {
        check_potential(v)?;
        let s = schrodinger_symmetric(geom, v);
        let evd = s
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let n = geom.node_count();
        let vals = evd.S().column_vector();
        let q = evd.U();
        let w = geom.weights();
        Ok(Self {
            values: (0..n).map(|k| vals[k]).collect(),
            left: Mat::from_fn(n, n, |i, k| q[(i, k)] / w[i].sqrt()),
            right: Mat::from_fn(n, n, |i, k| q[(i, k)] * w[i].sqrt()),
        })
    }

    pub fn lowest(&self) -> f64 {
        self.values[0]
    }

    /// Matrix of `e^{−tH_V}` acting on node vectors.
    pub fn propagator(&self, t: f64) -> Mat<f64> {
        let n = self.values.len();
        let scaled = Mat::from_fn(n, n, |i, k| self.left[(i, k)] * (-self.values[k] * t).exp());
        &scaled * self.right.transpose()
    }

    pub fn apply(&self, t: f64, u: &[f64]) -> Vec<f64> {
        let n = self.values.len();
        let mut c = vec![0.0; n];
        for k in 0..n {
            let col = self.right.col_as_slice(k);
            c[k] = (-self.values[k] * t).exp() * col.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            for (o, l) in out.iter_mut().zip(self.left.col_as_slice(k)) {
                *o += c[k] * l;
            }
        }
        out
    }
}

/// `‖e^{−tH_V}‖_{p→p} ≤ e^{β(t+T)}` on the given times.
pub fn semigroup_lp_check(
    geom: &ModelGeometry,
    v: &[f64],
    beta: f64,
    t_final: f64,
    times: &[f64],
    p: LpNorm,
) -> Result<LpReport> {
    let kato_v = {
        let dec = crate::spectral::decompose(geom, None)?;
        kato_of_potential(&dec, v, t_final)?
    };
    check_hypothesis(kato_v, beta, t_final)?;
    let sg = SchrodingerSemigroup::new(geom, v)?;
    lp_rows(geom, &sg, beta, t_final, times, p)
}

pub fn lp_rows(
    geom: &ModelGeometry,
    sg: &SchrodingerSemigroup,
    beta: f64,
    t_final: f64,
    times: &[f64],
    p: LpNorm,
) -> Result<LpReport> {
    let n = geom.node_count();
    let w = geom.weights();
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let norm = match p {
            LpNorm::Two => (-sg.lowest() * t).exp(),
            LpNorm::Inf => {
                let pm = sg.propagator(t);
                (0..n)
                    .map(|i| (0..n).map(|j| pm[(i, j)].abs()).sum::<f64>())
                    .fold(0.0, f64::max)
            }
            LpNorm::One => {
                let pm = sg.propagator(t);
                (0..n)
                    .map(|j| (0..n).map(|i| pm[(i, j)].abs() * w[i]).sum::<f64>() / w[j])
                    .fold(0.0, f64::max)
            }
        };
        let bound = (beta * (t + t_final)).exp();
        rows.push(LpRow {
            t,
            norm,
            bound,
            holds: norm <= bound * (1.0 + 1e-12),
        });
    }
    let holds = rows.iter().all(|r| r.holds);
    Ok(LpReport { p, rows, holds })
}

/// Backward-Euler solution of `∂_t u + Δu − Vu = 0`, `u(0) = 1`, returned at
/// `t_final`.
pub fn backward_euler_solution(geom: &ModelGeometry, v: &[f64], t_final: f64, steps: usize) -> Result<Vec<f64>> {
    let n = geom.node_count();
    let tau = t_final / steps as f64;
    let w = geom.weights();
    let mut a = stiffness_matrix(geom);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= tau;
        }
        a[(i, i)] += w[i] * (1.0 - tau * v[i]);
    }
    let llt = a.llt(Side::Lower).map_err(|_| Error::NotPositiveDefinite(f64::NAN))?;
    let mut u = Mat::from_fn(n, 1, |_, _| 1.0);
    for _ in 0..steps {
        let rhs = Mat::from_fn(n, 1, |i, _| w[i] * u[(i, 0)]);
        u = llt.solve(&rhs);
    }
    Ok((0..n).map(|i| u[(i, 0)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, Endpoint, GeometrySpec};
    use crate::profile::Profile;
    use crate::spectral::decompose;
    use std::f64::consts::PI;

    #[test]
    fn moments_match_quadrature() {
        for z in [-5.0, -1.5, -0.1, 0.0, 0.3, 1.9, 2.1, 10.0, 300.0] {
            let e = exp_moments(z);
            for m in 0..P {
                let q = crate::quadrature::integrate(|s: f64| (-z * s).exp() * s.powi(m as i32), 0.0, 1.0, 1e-14, 0.0)
                    .unwrap();
                assert!(
                    (e[m] - q).abs() <= 1e-13 * q.abs().max(1e-3),
                    "z={z} m={m}: {} vs {q}",
                    e[m]
                );
            }
        }
    }

    #[test]
    fn lagrange_weights_reproduce_quintics() {
        let g = TimeGrid::geometric(1.0, 16, 1.1).unwrap();
        let w = laplace_weights(&g, 0.0);
        let u: Vec<f64> = g
            .times()
            .iter()
            .map(|t| 1.0 + t - 2.0 * t * t + t.powi(3) - t.powi(5))
            .collect();
        let s: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((s - (1.0 + 0.5 - 2.0 / 3.0 + 0.25 - 1.0 / 6.0)).abs() < 1e-14);
    }

    fn sphere(res: usize) -> (ModelGeometry, SpectralDecomposition) {
        let g = build_geometry(&GeometrySpec::round_sphere(3, res)).unwrap();
        let d = decompose(&g, None).unwrap();
        (g, d)
    }

    #[test]
    fn zero_potential_is_trivial() {
        let (g, d) = sphere(64);
        let v = vec![0.0; 64];
        let r = gauge_phi(&g, &d, &v, 1.0, 1.0, &SolveOptions::default()).unwrap();
        assert!(r.phi.iter().all(|p| (p - 1.0).abs() < 1e-12));
        assert_eq!(r.series_terms, r.windows);
    }

    #[test]
    fn constant_potential_closed_forms() {
        let (g, d) = sphere(64);
        let (v0, beta, t) = (0.5, 1.0, 1.0);
        assert!(v0 * t <= 1.0 - f64::exp(-beta * t));
        let v = vec![v0; 64];
        let sol = solve_I(&d, &v, beta, t, t, &SolveOptions::default()).unwrap();
        for (j, s) in sol.first_window().times().iter().enumerate() {
            for i in [0, 31, 63] {
                assert!((sol.first_window().value(i, j) - (v0 * s).exp()).abs() < 1e-7);
            }
        }
        let r = gauge_phi(&g, &d, &v, beta, t, &SolveOptions::default()).unwrap();
        let exact = 2.0 * beta / (2.0 * beta - v0);
        assert!(r.phi.iter().all(|p| (p - exact).abs() < 1e-7));
        assert!(r.max_contraction <= r.kato_v + 1e-6);
    }

    #[test]
    fn duhamel_of_one_is_kato_constant() {
        let spec = GeometrySpec::Warped {
            dimension: 3,
            r_max: PI,
            left: Endpoint::Pole,
            right: Endpoint::Pole,
            warp: Profile::parse("sin(r)*(1-0.3*sin(r)^4)", "r").unwrap(),
            resolution: 128,
        };
        let g = build_geometry(&spec).unwrap();
        let d = decompose(&g, None).unwrap();
        let v = crate::geometry::ricci_minus_field(&g);
        let grid = TimeGrid::geometric(0.15, 64, 1.05).unwrap();
        let one = SpaceTimeField::constant(grid.clone(), g.node_count(), 1.0);
        let k1 = duhamel_apply(&d, &v, &one).unwrap();
        let kt = kato_of_potential(&d, &v, 0.15).unwrap();
        let at_t = k1.slice(64).iter().cloned().fold(0.0, f64::max);
        assert!((at_t - kt).abs() < 1e-8);
        let zero = SpaceTimeField::constant(grid, g.node_count(), 0.0);
        assert_eq!(duhamel_apply(&d, &v, &zero).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn hypothesis_gate() {
        let (_, d) = sphere(32);
        let v = vec![2.0; 32];
        assert!(matches!(
            solve_I(&d, &v, 1.0, 1.0, 1.0, &SolveOptions::default()),
            Err(Error::HypothesisViolated(_))
        ));
    }

    #[test]
    fn direct_solve_constant() {
        let (g, _) = sphere(48);
        let phi = direct_solve_phi(&g, &vec![0.3; 48], 1.0).unwrap();
        assert!(phi.iter().all(|p| (p - 2.0 / 1.7).abs() < 1e-12));
        assert!(matches!(
            direct_solve_phi(&g, &vec![3.0; 48], 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn spectral_bound_and_lp_for_constant_potential() {
        let (g, _) = sphere(48);
        let rep = spectral_bound_check(&g, &vec![0.4; 48], 1.0).unwrap();
        assert!((rep.lowest + 0.4).abs() < 1e-10);
        assert!(rep.holds);
        let times = [0.25, 0.5, 1.0, 2.0];
        for p in [LpNorm::One, LpNorm::Two, LpNorm::Inf] {
            let r = semigroup_lp_check(&g, &vec![0.4; 48], 1.0, 1.0, &times, p).unwrap();
            for row in &r.rows {
                assert!((row.norm - (0.4 * row.t).exp()).abs() < 1e-10);
            }
            assert!(r.holds);
        }
    }
}
