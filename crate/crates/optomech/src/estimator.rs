//! Multimode Kalman prediction and retrodiction on demodulated records,
//! prediction–retrodiction covariance reconstruction, Williamson normal form,
//! and the single-mode analytic results used to check them.
//!
//! State ordering is (X1, Y1, X2, Y2, ...). The record model is
//! i dt = 2H r dt + dW with H rows √Γ_meas,i on the X (resp. Y) entries, so
//! the gain is K = 2CHᵀ and Ċ = AC + CAᵀ + D − 4CHᵀHC.

use crate::model_core::{gamma_opt, ModeRates, SystemParams};
use crate::simulator::MeasurementRecord;
use crate::{Error, Result, C64};
use nalgebra::{DMatrix, Matrix4, Vector4};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    /// cov + iΩ/2 ⪰ 0 within `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        let n = self.cov.nrows();
        let h = DMatrix::from_fn(n, n, |r, c| C64::new(self.cov[(r, c)], 0.5 * symplectic_form(n)[(r, c)]));
        h.symmetric_eigenvalues().iter().all(|&v| v >= -tol)
    }
}

/// Ω = ⊕ [[0, 1], [−1, 0]].
pub fn symplectic_form(dim: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        o[(2 * k, 2 * k + 1)] = 1.0;
        o[(2 * k + 1, 2 * k)] = -1.0;
    }
    o
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterModel {
    pub modes: Vec<ModeRates>,
    /// Record sample interval (s).
    pub dt: f64,
    pub cov_oversample: usize,
    pub discretization_compensation: bool,
}

impl FilterModel {
    pub fn new(modes: Vec<ModeRates>, dt: f64) -> Self {
        Self { modes, dt, cov_oversample: 10, discretization_compensation: true }
    }

    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || !(self.dt > 0.0) || self.cov_oversample == 0 {
            return Err(Error::InvalidParams("filter model needs modes, dt > 0 and cov_oversample ≥ 1".into()));
        }
        for m in &self.modes {
            let ok = [m.gamma, m.gamma_th, m.gamma_qba, m.gamma_meas].iter().all(|v| *v >= 0.0 && v.is_finite());
            if !ok || !m.offset.is_finite() {
                return Err(Error::InvalidParams(format!("mode rates {m:?}")));
            }
            // Gain step 8Γ_meas·C·dt at the single-mode conditional variance.
            let gain_step = 8.0 * m.gamma_meas * steady_state_single_mode(m) * self.dt;
            if gain_step > 0.5 {
                return Err(Error::StepTooLarge(format!("measurement gain step {gain_step:.3} > 0.5; reduce dt")));
            }
        }
        Ok(())
    }

    /// Time-reversed model: offsets negated.
    pub fn reversed(&self) -> Self {
        let mut r = self.clone();
        r.modes.iter_mut().for_each(|m| m.offset = -m.offset);
        r
    }

    /// Per-mode (Γ', δ') of the Euler mean update at step `h`. With
    /// compensation the Euler factor equals e^{iδh} − Γh/2, the simulator's
    /// exact-rotation step. The covariance does not need it.
    pub fn discrete_rates(&self, h: f64) -> Vec<(f64, f64)> {
        self.modes
            .iter()
            .map(|m| {
                if self.discretization_compensation {
                    let x = m.offset * h;
                    (m.gamma + 2.0 * (1.0 - x.cos()) / h, x.sin() / h)
                } else {
                    (m.gamma, m.offset)
                }
            })
            .collect()
    }

    /// Diffusion matrix: Γ_th + Γ_qba on the diagonal, common backaction
    /// √(Γ_qba,i Γ_qba,j) between like quadratures.
    pub fn diffusion(&self) -> DMatrix<f64> {
        let n = self.modes.len();
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        for (i, a) in self.modes.iter().enumerate() {
            for (j, b) in self.modes.iter().enumerate() {
                let v = if i == j { a.gamma_th + a.gamma_qba } else { (a.gamma_qba * b.gamma_qba).sqrt() };
                d[(2 * i, 2 * j)] = v;
                d[(2 * i + 1, 2 * j + 1)] = v;
            }
        }
        d
    }

    /// Continuous drift matrix.
    pub fn drift(&self) -> DMatrix<f64> {
        let n = self.modes.len();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for (i, m) in self.modes.iter().enumerate() {
            a[(2 * i, 2 * i)] = -0.5 * m.gamma;
            a[(2 * i + 1, 2 * i + 1)] = -0.5 * m.gamma;
            a[(2 * i, 2 * i + 1)] = m.offset;
            a[(2 * i + 1, 2 * i)] = -m.offset;
        }
        a
    }

    /// Unconditional covariance P from AP + PAᵀ + D = 0, solved blockwise.
    pub fn unconditional_covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.modes.len();
        let d = self.diffusion();
        let block = |m: &ModeRates| nalgebra::Matrix2::new(-0.5 * m.gamma, m.offset, -m.offset, -0.5 * m.gamma);
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let (ai, aj) = (block(&self.modes[i]), block(&self.modes[j]));
                // vec(A_i P + P A_jᵀ) = (I ⊗ A_i + A_j ⊗ I) vec(P), column-major.
                let mut m = Matrix4::zeros();
                for c in 0..2 {
                    for r in 0..2 {
                        for k in 0..2 {
                            m[(2 * c + r, 2 * c + k)] += ai[(r, k)];
                            m[(2 * c + r, 2 * k + r)] += aj[(c, k)];
                        }
                    }
                }
                let rhs = Vector4::new(-d[(2 * i, 2 * j)], -d[(2 * i + 1, 2 * j)], -d[(2 * i, 2 * j + 1)], -d[(2 * i + 1, 2 * j + 1)]);
                let x = m.lu().solve(&rhs).ok_or(Error::NotPositiveDefinite)?;
                p[(2 * i, 2 * j)] = x[0];
                p[(2 * i + 1, 2 * j)] = x[1];
                p[(2 * i, 2 * j + 1)] = x[2];
                p[(2 * i + 1, 2 * j + 1)] = x[3];
            }
        }
        Ok(p)
    }

    /// Numeric Riccati fixed point, propagated from the unconditional
    /// covariance until the relative change per record step is < `tol`.
    pub fn steady_state_covariance(&self, tol: f64, max_record_steps: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        let mut r = Riccati::new(self)?;
        for _ in 0..max_record_steps {
            if r.advance(self.cov_oversample) < tol {
                return Ok(r.matrix());
            }
        }
        Err(Error::NonConvergent { err: r.last_change, tol })
    }
}

/// Flat-array Riccati integrator at the oversampled step.
struct Riccati {
    n: usize,
    h: f64,
    c: Vec<f64>,
    d: Vec<f64>,
    a: Vec<(f64, f64)>,
    sqrt_meas: Vec<f64>,
    work: Vec<f64>,
    k: Vec<f64>,
    last_change: f64,
}

impl Riccati {
    fn new(model: &FilterModel) -> Result<Self> {
        let n = model.dim();
        let h = model.dt / model.cov_oversample as f64;
        let p = model.unconditional_covariance()?;
        let c: Vec<f64> = (0..n * n).map(|x| p[(x / n, x % n)]).collect();
        let dm = model.diffusion();
        let d = (0..n * n).map(|x| dm[(x / n, x % n)]).collect();
        let mut r = Self {
            n,
            h,
            c,
            d,
            a: model.modes.iter().map(|m| (m.gamma, m.offset)).collect(),
            sqrt_meas: model.modes.iter().map(|m| m.gamma_meas.sqrt()).collect(),
            work: vec![0.0; n * n],
            k: vec![0.0; 2 * n],
            last_change: f64::INFINITY,
        };
        r.update_gain();
        Ok(r)
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.c)
    }

    /// K = 2CHᵀ, stored as n rows of (k_x, k_y).
    fn update_gain(&mut self) {
        let n = self.n;
        for r in 0..n {
            let (mut kx, mut ky) = (0.0, 0.0);
            for (j, s) in self.sqrt_meas.iter().enumerate() {
                kx += self.c[r * n + 2 * j] * s;
                ky += self.c[r * n + 2 * j + 1] * s;
            }
            self.k[2 * r] = 2.0 * kx;
            self.k[2 * r + 1] = 2.0 * ky;
        }
    }

    /// `sub` Euler sub-steps of the continuous equation, whose fixed point
    /// does not depend on the step; returns max|ΔC|/max|C| over the call.
    fn advance(&mut self, sub: usize) -> f64 {
        let n = self.n;
        let start = self.c.clone();
        let meas: f64 = self.sqrt_meas.iter().map(|s| s * s).sum();
        let h0 = self.h;
        for _ in 0..sub {
            // Split the step while the gain term 8Γ_meas·C·h is stiff, as it
            // is on the way down from the unconditional covariance.
            let cmax = (0..n).map(|r| self.c[r * n + r]).fold(0.0f64, f64::max);
            let split = (8.0 * meas * cmax * h0 / 0.5).ceil().max(1.0);
            self.h = h0 / split;
            for _ in 0..split as usize {
                self.euler_step();
            }
        }
        self.h = h0;
        let scale = self.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let change = self.c.iter().zip(&start).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        self.last_change = change / scale;
        self.last_change
    }

    fn euler_step(&mut self) {
        let n = self.n;
        // work = A'C (block rows)
        for (i, &(g, w)) in self.a.iter().enumerate() {
            let (r0, r1) = (2 * i * n, (2 * i + 1) * n);
            for col in 0..n {
                let (x, y) = (self.c[r0 + col], self.c[r1 + col]);
                self.work[r0 + col] = -0.5 * g * x + w * y;
                self.work[r1 + col] = -w * x - 0.5 * g * y;
            }
        }
        for r in 0..n {
            for col in r..n {
                let kk = self.k[2 * r] * self.k[2 * col] + self.k[2 * r + 1] * self.k[2 * col + 1];
                let f = self.work[r * n + col] + self.work[col * n + r] + self.d[r * n + col] - kk;
                let v = self.c[r * n + col] + self.h * f;
                self.c[r * n + col] = v;
                self.c[col * n + r] = v;
            }
        }
        self.update_gain();
    }
}

/// Filter output sampled at chosen record instants.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    /// Record instants in forward time; state k is conditioned on samples
    /// before k (prediction) or from k on (retrodiction).
    pub indices: Vec<usize>,
    pub states: Vec<GaussianState>,
    /// Innovations i − 2Hm in processing order, when requested.
    pub innovations: Option<Vec<[f64; 2]>>,
    /// Record step after which the covariance was frozen.
    pub converged_at: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOptions {
    pub keep_innovations: bool,
    /// Relative covariance change per record step that freezes the Riccati.
    pub convergence_tol: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { keep_innovations: false, convergence_tol: 1e-10 }
    }
}

fn run_filter<I: Iterator<Item = (f64, f64)>>(samples: I, n: usize, model: &FilterModel, at: &[usize], opts: FilterOptions) -> Result<FilterOutput> {
    model.validate()?;
    if at.windows(2).any(|w| w[0] >= w[1]) || at.last().is_some_and(|&k| k > n) {
        return Err(Error::InvalidParams("sample indices must be increasing and ≤ record length".into()));
    }
    let dim = model.dim();
    let nm = model.modes.len();
    let mut ric = Riccati::new(model)?;
    let limit: Vec<f64> = (0..dim).map(|r| 10.0 * ric.c[r * dim + r]).collect();
    let step = model.discrete_rates(model.dt);
    let fac: Vec<(f64, f64)> = step.iter().map(|&(g, w)| (1.0 - 0.5 * g * model.dt, w * model.dt)).collect();
    let sm = ric.sqrt_meas.clone();
    let dt = model.dt;

    let mut m = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    let mut states = Vec::with_capacity(at.len());
    let mut innovations = opts.keep_innovations.then(|| Vec::with_capacity(n));
    let mut converged_at = None;
    let mut cursor = 0;
    let snapshot = |m: &[f64], ric: &Riccati| GaussianState { mean: m.to_vec(), cov: ric.matrix() };

    for (k, (ix, iy)) in samples.enumerate().take(n) {
        if cursor < at.len() && at[cursor] == k {
            states.push(snapshot(&m, &ric));
            cursor += 1;
        }
        let (mut px, mut py) = (0.0, 0.0);
        for j in 0..nm {
            px += sm[j] * m[2 * j];
            py += sm[j] * m[2 * j + 1];
        }
        let ex = ix - 2.0 * px;
        let ey = iy - 2.0 * py;
        if let Some(v) = innovations.as_mut() {
            v.push([ex, ey]);
        }
        for j in 0..nm {
            let (a, b) = fac[j];
            let (x, y) = (m[2 * j], m[2 * j + 1]);
            next[2 * j] = a * x + b * y;
            next[2 * j + 1] = -b * x + a * y;
        }
        for r in 0..dim {
            next[r] += (ric.k[2 * r] * ex + ric.k[2 * r + 1] * ey) * dt;
        }
        std::mem::swap(&mut m, &mut next);

        if converged_at.is_none() {
            let change = ric.advance(model.cov_oversample);
            if (0..dim).any(|r| !(ric.c[r * dim + r] <= limit[r])) {
                return Err(Error::DivergenceDetected(k));
            }
            if change < opts.convergence_tol {
                converged_at = Some(k + 1);
            }
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DivergenceDetected(k));
        }
    }
    if cursor < at.len() && at[cursor] == n {
        states.push(snapshot(&m, &ric));
    }
    Ok(FilterOutput { indices: at.to_vec(), states, innovations, converged_at })
}

fn check_rate(record: &MeasurementRecord, model: &FilterModel) -> Result<()> {
    if record.i_x.len() != record.i_y.len() {
        return Err(Error::InvalidParams("record channels differ in length".into()));
    }
    if ((record.dt() - model.dt) / model.dt).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!("record dt {} vs model dt {}", record.dt(), model.dt)));
    }
    Ok(())
}

/// Forward filter; state at index k is conditioned on samples 0..k.
pub fn filter_predict(record: &MeasurementRecord, model: &FilterModel, at: &[usize], opts: FilterOptions) -> Result<FilterOutput> {
    check_rate(record, model)?;
    let it = record.i_x.iter().copied().zip(record.i_y.iter().copied());
    run_filter(it, record.len(), model, at, opts)
}

/// The forward update on the time-reversed record with negated offsets;
/// state at index k is conditioned on samples k..N.
pub fn filter_retrodict(record: &MeasurementRecord, model: &FilterModel, at: &[usize], opts: FilterOptions) -> Result<FilterOutput> {
    check_rate(record, model)?;
    let n = record.len();
    let rev: Vec<usize> = at.iter().rev().map(|&k| n - k).collect();
    let it = record.i_x.iter().rev().copied().zip(record.i_y.iter().rev().copied());
    let mut out = run_filter(it, n, &model.reversed(), &rev, opts)?;
    out.states.reverse();
    out.indices = at.to_vec();
    Ok(out)
}

/// Conditioning instants: after `burn_in` samples, every `spacing` samples,
/// leaving `burn_in` samples at the end for the retrodiction filter.
pub fn conditioning_instants(n: usize, burn_in: usize, spacing: usize) -> Vec<usize> {
    if spacing == 0 || n <= 2 * burn_in {
        return Vec::new();
    }
    (burn_in..=n - burn_in).step_by(spacing).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub cov: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub n_slices: usize,
    /// ⟨‖r_r − r_p‖²⟩ per mode, equal to 4V for isotropic modes.
    pub squared_distance: Vec<f64>,
    /// Set when the estimates carry no conditioning (C below vacuum).
    pub flag: Option<String>,
}

impl Reconstruction {
    /// n = (C_XX + C_YY)/2 − ½ of mode j.
    pub fn occupancy(&self, j: usize) -> f64 {
        0.5 * (self.cov[(2 * j, 2 * j)] + self.cov[(2 * j + 1, 2 * j + 1)]) - 0.5
    }

    pub fn occupancy_stderr(&self, j: usize) -> f64 {
        0.5 * (self.stderr[(2 * j, 2 * j)].powi(2) + self.stderr[(2 * j + 1, 2 * j + 1)].powi(2)).sqrt()
    }

    /// C_ij/√(C_ii C_jj).
    pub fn correlation(&self) -> DMatrix<f64> {
        let n = self.cov.nrows();
        DMatrix::from_fn(n, n, |r, c| self.cov[(r, c)] / (self.cov[(r, r)] * self.cov[(c, c)]).sqrt())
    }
}

pub const MIN_SLICES: usize = 100;

/// C = ½⟨(r_r − r_p)(r_r − r_p)ᵀ⟩ over the conditioning instants, with
/// batch-means standard errors over `batches` contiguous groups.
pub fn reconstruct_covariance(pred: &FilterOutput, retro: &FilterOutput, batches: usize) -> Result<Reconstruction> {
    if pred.indices != retro.indices {
        return Err(Error::InvalidParams("prediction and retrodiction instants differ".into()));
    }
    let s = pred.states.len();
    if s < MIN_SLICES {
        return Err(Error::InsufficientSlices { got: s, need: MIN_SLICES });
    }
    let dim = pred.states[0].mean.len();
    let b = batches.clamp(2, s / 2);
    let mut batch_sums = vec![DMatrix::<f64>::zeros(dim, dim); b];
    let mut counts = vec![0usize; b];
    for (t, (p, r)) in pred.states.iter().zip(&retro.states).enumerate() {
        let d = nalgebra::DVector::from_iterator(dim, r.mean.iter().zip(&p.mean).map(|(a, c)| a - c));
        let k = t * b / s;
        batch_sums[k] += 0.5 * &d * d.transpose();
        counts[k] += 1;
    }
    let means: Vec<DMatrix<f64>> = batch_sums.iter().zip(&counts).map(|(m, &c)| m / c as f64).collect();
    let total = batch_sums.iter().fold(DMatrix::zeros(dim, dim), |a, m| a + m) / s as f64;
    let mut var = DMatrix::<f64>::zeros(dim, dim);
    for m in &means {
        let d = m - &total;
        var += d.component_mul(&d);
    }
    let stderr = (var / ((b - 1) * b) as f64).map(f64::sqrt);
    let squared_distance = (0..dim / 2).map(|j| 2.0 * (total[(2 * j, 2 * j)] + total[(2 * j + 1, 2 * j + 1)])).collect();
    let flag = (0..dim)
        .any(|r| total[(r, r)] < 0.5 * (1.0 - 1e-6))
        .then(|| "reconstructed variance below vacuum: the record carries no conditioning".to_string());
    Ok(Reconstruction { cov: total, stderr, n_slices: s, squared_distance, flag })
}

/// Expected value of the reconstruction: ½(C_p + C_r − C_p P⁻¹ C_r − C_r P⁻¹ C_p).
/// Prediction and retrodiction errors are correlated through the state, so
/// this differs from either filter covariance.
pub fn expected_reconstruction(c_p: &DMatrix<f64>, c_r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = p.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let pc_r = chol.solve(c_r);
    let pc_p = chol.solve(c_p);
    Ok(0.5 * (c_p + c_r - c_p * pc_r - c_r * pc_p))
}

/// V = [−Γ' + √(Γ'² + 16Γ_meas(Γ_th+Γ_qba))]/(8Γ_meas).
pub fn steady_state_single_mode(rates: &ModeRates) -> f64 {
    let g = rates.gamma;
    let d = rates.gamma_th + rates.gamma_qba;
    let m = rates.gamma_meas;
    // Rationalized form, stable as Γ_meas → 0.
    2.0 * d / (g + (g * g + 16.0 * m * d).sqrt())
}

pub fn purity(occupancy: f64) -> f64 {
    1.0 / (2.0 * occupancy + 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveBasis {
    /// U with UᵀΩU = Ω and UᵀCU = diag(ν1, ν1, ν2, ν2, ...).
    pub transform: DMatrix<f64>,
    /// Sorted descending.
    pub symplectic_eigenvalues: Vec<f64>,
    /// Row 2k (2k+1) holds collective X_k (Y_k) over the original quadratures.
    pub coefficients: DMatrix<f64>,
    /// Original mode j ↦ collective mode with the largest overlap.
    pub assignment: Vec<usize>,
}

impl CollectiveBasis {
    /// ν − ½ of the collective mode assigned to original mode j.
    pub fn occupancy_of(&self, j: usize) -> f64 {
        self.symplectic_eigenvalues[self.assignment[j]] - 0.5
    }
}

/// Williamson normal form of a positive-definite covariance.
pub fn symplectic_diagonalize(cov: &DMatrix<f64>) -> Result<CollectiveBasis> {
    let n = cov.nrows();
    if n == 0 || n % 2 == 1 || cov.ncols() != n {
        return Err(Error::InvalidParams("covariance must be square with even dimension".into()));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let q = &eig.eigenvectors;
    let inv_sqrt = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt())) * q.transpose();
    let omega = symplectic_form(n);
    // K = C^{-1/2} Ω C^{-1/2} is antisymmetric; iK is Hermitian with
    // eigenvalues ±1/ν.
    let k = &inv_sqrt * &omega * &inv_sqrt;
    let ik = k.map(|v| C64::new(0.0, v));
    let he = ik.symmetric_eigen();
    let mut pos: Vec<(f64, nalgebra::DVector<C64>)> = (0..n)
        .filter(|&c| he.eigenvalues[c] > 0.0)
        .map(|c| (he.eigenvalues[c], he.eigenvectors.column(c).into_owned()))
        .collect();
    if pos.len() != n / 2 {
        return Err(Error::NotPositiveDefinite);
    }
    pos.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = n / 2;
    // Columns o1 = √2 Re v, o2 = −√2 Im v give Oᵀ K O = ⊕ λ[[0,1],[−1,0]].
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut nus = Vec::with_capacity(m);
    for (idx, (lambda, v)) in pos.iter().enumerate() {
        let nu = 1.0 / lambda;
        let o1 = v.map(|z| std::f64::consts::SQRT_2 * z.re);
        let o2 = v.map(|z| -std::f64::consts::SQRT_2 * z.im);
        // Rows of S = diag(√ν) Oᵀ C^{-1/2}.
        let r1 = (inv_sqrt.transpose() * &o1).transpose() * nu.sqrt();
        let r2 = (inv_sqrt.transpose() * &o2).transpose() * nu.sqrt();
        s.row_mut(2 * idx).copy_from(&r1);
        s.row_mut(2 * idx + 1).copy_from(&r2);
        nus.push(nu);
    }

    // Greedy assignment of collective modes to original modes by overlap,
    // then a phase rotation within each pair that makes the coefficient on
    // the assigned original X positive and maximal.
    let weight = |c: usize, j: usize| -> f64 {
        (0..2).map(|a| (0..2).map(|b| s[(2 * c + a, 2 * j + b)].powi(2)).sum::<f64>()).sum()
    };
    let mut assignment = vec![usize::MAX; m];
    let mut taken = vec![false; m];
    let mut pairs: Vec<(f64, usize, usize)> = (0..m).flat_map(|c| (0..m).map(move |j| (c, j))).map(|(c, j)| (weight(c, j), c, j)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, c, j) in pairs {
        if assignment[j] == usize::MAX && !taken[c] {
            assignment[j] = c;
            taken[c] = true;
        }
    }
    for (j, &c) in assignment.iter().enumerate() {
        let (a, b) = (s[(2 * c, 2 * j)], s[(2 * c + 1, 2 * j)]);
        let phi = b.atan2(a);
        let (co, si) = (phi.cos(), phi.sin());
        let r1 = s.row(2 * c).clone_owned();
        let r2 = s.row(2 * c + 1).clone_owned();
        s.row_mut(2 * c).copy_from(&(co * &r1 + si * &r2));
        s.row_mut(2 * c + 1).copy_from(&(-si * &r1 + co * &r2));
    }

    // Descending order of ν.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| nus[b].total_cmp(&nus[a]));
    let mut sorted = DMatrix::<f64>::zeros(n, n);
    let mut rank = vec![0; m];
    for (new, &old) in order.iter().enumerate() {
        sorted.row_mut(2 * new).copy_from(&s.row(2 * old));
        sorted.row_mut(2 * new + 1).copy_from(&s.row(2 * old + 1));
        rank[old] = new;
    }
    Ok(CollectiveBasis {
        transform: sorted.transpose(),
        symplectic_eigenvalues: order.iter().map(|&o| nus[o]).collect(),
        coefficients: sorted,
        assignment: assignment.iter().map(|&c| rank[c]).collect(),
    })
}

/// H₀ = −2g/√(ηκ_a), the constant feedback filter that cancels the
/// cooling-induced correlations.
pub fn feedback_cancellation_filter(p: &SystemParams, _omega: f64) -> C64 {
    let k = p.cavity.kappa_out;
    if p.eta_d <= 0.0 || k <= 0.0 {
        return C64::new(0.0, 0.0);
    }
    C64::new(-2.0 * p.g() / (p.eta_d * k).sqrt(), 0.0)
}

/// H = H₀ + H₁.
pub fn compose_feedback(h0: C64, h1: C64) -> C64 {
    h0 + h1
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledOccupancy {
    pub n_full: f64,
    pub n_decoupled: f64,
}

/// Defect occupancy from the full multimode spectrum and from the defect
/// mode alone (its Lorentzian with the optical damping it would have in
/// isolation).
pub fn coupled_vs_decoupled_occupancy(p: &SystemParams) -> Result<CoupledOccupancy> {
    use crate::model_core::{occupancy_from_spectrum, SpectrumKind, SpectrumModel};
    let full = occupancy_from_spectrum(&SpectrumModel::new(SpectrumKind::MechanicalPosition, p.clone()))?.n;
    let mut alone = p.clone();
    alone.modes.truncate(1);
    let dec = occupancy_from_spectrum(&SpectrumModel::new(SpectrumKind::MechanicalPosition, alone))?.n;
    Ok(CoupledOccupancy { n_full: full, n_decoupled: dec })
}

/// Lorentzian occupancy (Γ_th + Γ_qba)/Γ' − ½ of the isolated defect mode.
pub fn lorentzian_occupancy(p: &SystemParams) -> f64 {
    let m = p.defect();
    let go = gamma_opt(p, m.omega_m);
    let qba = crate::model_core::gamma_qba(p);
    (m.gamma_m * (m.n_th + 0.5) + qba) / (m.gamma_m + go) - 0.5
}

/// Ljung–Box statistic Q = n(n+2) Σ_{k=1}^{h} ρ_k²/(n−k).
pub fn ljung_box(x: &[f64], lags: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let mut q = 0.0;
    for k in 1..=lags {
        let ck: f64 = (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
        q += (ck / c0).powi(2) / (n - k) as f64;
    }
    n as f64 * (n as f64 + 2.0) * q
}
