//! Weighted least-squares fitting of demodulated-record spectra to the
//! detected-spectrum model, with a hand-written Levenberg–Marquardt solver.
//!
//! Physical parameters are fitted in unconstrained coordinates: log g,
//! logit η_d and θ; spurious modes add (offset, log Γ_m, coupling weight).

use crate::model_core::{derived_rates, iq_channel_spectrum, mode_rates, quadrature_offset, SystemParams};
use crate::{Error, Result, TAU};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub cost_rtol: f64,
    pub step_tol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, cost_rtol: 1e-10, step_tol: 1e-12, lambda0: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// ½ Σ r².
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Central differences with h = max(1e-6|p|, 1e-9).
pub fn finite_difference_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, x: &[f64], m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = (1e-6 * x[k].abs()).max(1e-9);
        xp[k] = x[k] + h;
        let up = f(&xp);
        xp[k] = x[k] - h;
        let dn = f(&xp);
        xp[k] = x[k];
        for r in 0..m {
            j[(r, k)] = (up[r] - dn[r]) / (2.0 * h);
        }
    }
    j
}

/// Minimizes ½‖r(x)‖² by damped Gauss–Newton steps (JᵀJ + λ diag(JᵀJ)) δ = −Jᵀr
/// with multiplicative λ adaptation. Only cost-decreasing steps are accepted.
pub fn levenberg_marquardt<F, J>(residual: &F, jacobian: &J, x0: &[f64], opts: LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64], &[f64]) -> DMatrix<f64>,
{
    levenberg_marquardt_bounded(residual, jacobian, x0, &[], opts)
}

/// As [`levenberg_marquardt`], with trial points projected onto the box
/// `bounds` (empty for none, otherwise one optional interval per parameter).
pub fn levenberg_marquardt_bounded<F, J>(residual: &F, jacobian: &J, x0: &[f64], bounds: &[Option<(f64, f64)>], opts: LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64], &[f64]) -> DMatrix<f64>,
{
    let project = |x: &mut [f64]| {
        for (v, b) in x.iter_mut().zip(bounds) {
            if let Some((lo, hi)) = b {
                *v = v.clamp(*lo, *hi);
            }
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let mut r = residual(&x);
    let cost_of = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidParams("non-finite residual at the starting point".into()));
    }
    let mut lambda = opts.lambda0;
    let mut history = vec![cost];
    let mut jac = jacobian(&x, &r);
    for it in 1..=opts.max_iter {
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if jtj.diagonal().iter().all(|v| *v == 0.0) {
            return Err(Error::SingularJacobian);
        }
        loop {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => return Err(Error::SingularJacobian),
                },
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial);
            let step = DVector::from_iterator(x.len(), trial.iter().zip(&x).map(|(t, x)| t - x));
            let rt = residual(&trial);
            let ct = cost_of(&rt);
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let snorm = step.norm() / (1.0 + DVector::from_column_slice(&x).norm());
                x = trial;
                r = rt;
                cost = ct;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-12);
                jac = jacobian(&x, &r);
                // The last clause catches exact fits, where the relative decrease stays O(1).
                if rel < opts.cost_rtol || snorm < opts.step_tol || cost <= 1e-24 * history[0] {
                    return Ok(LmResult { x, cost, jacobian: jac, iterations: it, cost_history: history });
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // No descent direction left: at a minimum to working precision.
                return Ok(LmResult { x, cost, jacobian: jac, iterations: it, cost_history: history });
            }
        }
    }
    Err(Error::NoConvergence(opts.max_iter))
}

/// Standard errors from the Gauss–Newton normal matrix, scaled by the
/// reduced chi-square.
pub fn standard_errors(jac: &DMatrix<f64>, cost: f64) -> Result<(Vec<f64>, f64)> {
    let (m, n) = jac.shape();
    let dof = m.saturating_sub(n).max(1) as f64;
    let chi2 = 2.0 * cost / dof;
    let jtj = jac.transpose() * jac;
    let inv = jtj.try_inverse().ok_or(Error::SingularJacobian)?;
    Ok(((0..n).map(|k| (inv[(k, k)] * chi2).max(0.0).sqrt()).collect(), chi2))
}

/// Free parameter of a spectrum fit, in its unconstrained coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitParam {
    LogG,
    LogitEta,
    Theta,
    /// Mechanical frequency of mode i (rad/s).
    ModeFrequency(usize),
    /// log Γ_m of mode i.
    LogModeGamma(usize),
    ModeWeight(usize),
}

impl FitParam {
    fn get(&self, p: &SystemParams) -> f64 {
        match *self {
            FitParam::LogG => p.g().ln(),
            FitParam::LogitEta => (p.eta_d / (1.0 - p.eta_d)).ln(),
            FitParam::Theta => p.theta,
            FitParam::ModeFrequency(i) => p.modes[i].omega_m,
            FitParam::LogModeGamma(i) => p.modes[i].gamma_m.ln(),
            FitParam::ModeWeight(i) => p.modes[i].coupling_weight,
        }
    }

    fn set(&self, p: &mut SystemParams, v: f64) {
        match *self {
            FitParam::LogG => p.coupling = crate::model_core::CouplingParams::from_g(p.coupling.g0, v.exp()),
            FitParam::LogitEta => p.eta_d = 1.0 / (1.0 + (-v).exp()),
            FitParam::Theta => p.theta = v,
            FitParam::ModeFrequency(i) => p.modes[i].omega_m = v,
            FitParam::LogModeGamma(i) => p.modes[i].gamma_m = v.exp(),
            FitParam::ModeWeight(i) => p.modes[i].coupling_weight = v,
        }
    }

    /// Physical value from the unconstrained one.
    pub fn physical(&self, v: f64) -> f64 {
        match self {
            FitParam::LogG | FitParam::LogModeGamma(_) => v.exp(),
            FitParam::LogitEta => 1.0 / (1.0 + (-v).exp()),
            _ => v,
        }
    }

    /// d(physical)/d(unconstrained).
    fn physical_slope(&self, v: f64) -> f64 {
        match self {
            FitParam::LogG | FitParam::LogModeGamma(_) => v.exp(),
            FitParam::LogitEta => {
                let s = 1.0 / (1.0 + (-v).exp());
                s * (1.0 - s)
            }
            _ => 1.0,
        }
    }
}

/// A PSD of one demodulated channel in shot-noise units, two-sided, on
/// offsets (Hz) from `omega_ref`.
#[derive(Clone, Debug)]
pub struct FitProblem {
    pub offsets_hz: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub model: SystemParams,
    pub omega_ref: f64,
    pub free: Vec<FitParam>,
    /// Optional (lo, hi) bounds on the unconstrained coordinates; LM trial
    /// points are projected onto them.
    pub bounds: Vec<Option<(f64, f64)>>,
    pub options: LmOptions,
}

impl FitProblem {
    /// Weights 1/PSD² of the data. Default bounds: θ within ±π/2 of the
    /// start, η_d in [1e-3, 0.999], g within a factor e³ of the start.
    pub fn new(offsets_hz: Vec<f64>, values: Vec<f64>, model: SystemParams, omega_ref: f64, free: Vec<FitParam>) -> Self {
        let weights = values.iter().map(|v| 1.0 / (v * v)).collect();
        let bounds = free
            .iter()
            .map(|f| {
                let v = f.get(&model);
                match f {
                    FitParam::Theta => Some((v - std::f64::consts::FRAC_PI_2, v + std::f64::consts::FRAC_PI_2)),
                    FitParam::LogitEta => Some((-6.9, 6.9)),
                    FitParam::LogG | FitParam::LogModeGamma(_) => Some((v - 3.0, v + 3.0)),
                    _ => None,
                }
            })
            .collect();
        Self { offsets_hz, values, weights, model, omega_ref, free, bounds, options: LmOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.offsets_hz.len();
        if self.values.len() != n || self.weights.len() != n || self.bounds.len() != self.free.len() {
            return Err(Error::InvalidParams("fit data, weights and bounds must align".into()));
        }
        if n < 10 * self.free.len().max(1) {
            return Err(Error::InvalidParams(format!("{n} points for {} free parameters", self.free.len())));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParams("weights must be positive and finite".into()));
        }
        for (k, f) in self.free.iter().enumerate() {
            if self.free[..k].contains(f) {
                return Err(Error::InvalidParams(format!("{f:?} listed twice")));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.get(&self.model)).collect()
    }

    pub fn params_at(&self, x: &[f64]) -> SystemParams {
        let mut p = self.model.clone();
        for (f, &v) in self.free.iter().zip(x) {
            f.set(&mut p, v);
        }
        p
    }

    pub fn model_values(&self, x: &[f64]) -> Vec<f64> {
        let p = self.params_at(x);
        self.offsets_hz.par_iter().map(|&f| iq_channel_spectrum(&p, self.omega_ref, TAU * f)).collect()
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let m = self.model_values(x);
        m.iter()
            .zip(&self.values)
            .zip(&self.weights)
            .map(|((m, d), w)| w.sqrt() * (m - d))
            .collect()
    }
}

/// Weighted residual Jacobian. The θ column is analytic: the detected
/// spectrum is exactly a + b cos 2θ + c sin 2θ, so three evaluations at
/// fixed θ give the derivative. Other columns use central differences.
pub fn jacobian(problem: &FitProblem, x: &[f64]) -> DMatrix<f64> {
    let f = |v: &[f64]| problem.residuals(v);
    let m = problem.offsets_hz.len();
    let mut j = finite_difference_jacobian(&f, x, m);
    if let Some(k) = problem.free.iter().position(|p| *p == FitParam::Theta) {
        let col = theta_derivative(problem, x);
        for r in 0..m {
            j[(r, k)] = problem.weights[r].sqrt() * col[r];
        }
    }
    j
}

/// ∂S/∂θ of the model at every data offset.
pub fn theta_derivative(problem: &FitProblem, x: &[f64]) -> Vec<f64> {
    let p = problem.params_at(x);
    let th = p.theta;
    let at = |t: f64| {
        let q = p.clone().with_theta(t);
        problem.offsets_hz.par_iter().map(|&f| iq_channel_spectrum(&q, problem.omega_ref, TAU * f)).collect::<Vec<_>>()
    };
    let (s0, s45, s90) = (at(0.0), at(std::f64::consts::FRAC_PI_4), at(std::f64::consts::FRAC_PI_2));
    (0..s0.len())
        .map(|r| {
            let a = 0.5 * (s0[r] + s90[r]);
            let b = 0.5 * (s0[r] - s90[r]);
            let c = s45[r] - a;
            -2.0 * b * (2.0 * th).sin() + 2.0 * c * (2.0 * th).cos()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub free: Vec<FitParam>,
    /// Unconstrained coordinates.
    pub raw: Vec<f64>,
    /// Physical values (g, η_d, θ, ...).
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub params: SystemParams,
    pub c_q: f64,
    pub eta_meas: f64,
}

impl FitResult {
    pub fn value(&self, p: FitParam) -> Option<f64> {
        self.free.iter().position(|f| *f == p).map(|k| self.values[k])
    }
}

pub fn fit_spectrum(problem: &FitProblem) -> Result<FitResult> {
    problem.validate()?;
    let x0 = problem.start();
    let res = levenberg_marquardt_bounded(
        &|x: &[f64]| problem.residuals(x),
        &|x: &[f64], _r: &[f64]| jacobian(problem, x),
        &x0,
        &problem.bounds,
        problem.options,
    )?;
    let (se_raw, chi2) = standard_errors(&res.jacobian, res.cost)?;
    let params = problem.params_at(&res.x);
    let values: Vec<f64> = problem.free.iter().zip(&res.x).map(|(f, v)| f.physical(*v)).collect();
    let stderr = problem.free.iter().zip(&res.x).zip(&se_raw).map(|((f, v), s)| f.physical_slope(*v) * s).collect();
    let rates = readout_rates(&params);
    Ok(FitResult {
        free: problem.free.clone(),
        raw: res.x,
        values,
        stderr,
        reduced_chi2: chi2,
        iterations: res.iterations,
        cost_history: res.cost_history,
        c_q: rates.0,
        eta_meas: rates.1,
        params,
    })
}

/// (C_q, η_meas) of a parameter set at its own quadrature angle.
fn readout_rates(p: &SystemParams) -> (f64, f64) {
    let d = derived_rates(p);
    let r = &mode_rates(p, None)[0];
    (d.c_q, r.gamma_meas / (d.gamma_th + d.gamma_qba))
}

/// Coarse start: θ at the mechanical-readout quadrature, η_d = 0.3, g from
/// the area of the defect peak above the floor.
pub fn initial_guess(problem: &mut FitProblem) {
    let p = &mut problem.model;
    p.theta = quadrature_offset(&p.cavity) - std::f64::consts::FRAC_PI_2;
    p.eta_d = 0.3;
    let df = problem.offsets_hz.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let area: f64 = problem.values.iter().map(|v| (v - 1.0).max(0.0)).sum::<f64>() * df;
    // Peak area ∝ Γ_meas V ∝ g²·(Γ_th + Γ_qba)/Γ'; iterate g on the model area.
    let mut g = p.g().max(1.0);
    for _ in 0..30 {
        let q = p.clone().with_g(g);
        let model_area: f64 = problem.offsets_hz.iter().map(|&f| (iq_channel_spectrum(&q, problem.omega_ref, TAU * f) - 1.0).max(0.0)).sum::<f64>() * df;
        if !(model_area > 0.0) {
            break;
        }
        let ratio = area / model_area;
        g *= ratio.powf(0.5).clamp(0.5, 2.0);
        if (ratio - 1.0).abs() < 1e-3 {
            break;
        }
    }
    *p = p.clone().with_g(g);
}


#[cfg(test)]
mod spectrum_fit_tests {
    use super::*;
    use crate::model_core::spring_shift;

    fn synthetic(p: &SystemParams) -> (Vec<f64>, Vec<f64>, f64) {
        let w_ref = p.defect().omega_m + spring_shift(p, p.defect().omega_m);
        let d = derived_rates(p);
        let width = (d.gamma_th + d.gamma_qba).max(p.defect().gamma_m) / TAU;
        let _ = width;
        let offsets: Vec<f64> = (-200..=200).map(|k| k as f64 * 60.0).collect();
        let vals = offsets.iter().map(|&f| iq_channel_spectrum(p, w_ref, TAU * f)).collect();
        (offsets, vals, w_ref)
    }

    #[test]
    fn recovers_exact_parameters() {
        let truth = SystemParams::reference_device(0.93, 0.31);
        let (f, v, w_ref) = synthetic(&truth);
        let start = truth.clone().with_g(truth.g() * 1.05).with_eta(0.27).with_theta(truth.theta + 0.05);
        let prob = FitProblem::new(f, v, start, w_ref, vec![FitParam::LogG, FitParam::LogitEta, FitParam::Theta]);
        let r = fit_spectrum(&prob).unwrap();
        assert!((r.value(FitParam::LogG).unwrap() / truth.g() - 1.0).abs() < 1e-5, "{:?}", r.values);
        assert!((r.value(FitParam::LogitEta).unwrap() - 0.31).abs() < 1e-5);
        assert!((r.value(FitParam::Theta).unwrap() - truth.theta).abs() < 1e-5);
        assert!((r.c_q - 0.93).abs() < 1e-4);
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn analytic_theta_column_matches_finite_difference() {
        let p = SystemParams::reference_device(0.93, 0.31).with_theta(0.4);
        let (f, v, w_ref) = synthetic(&p);
        let prob = FitProblem::new(f, v, p, w_ref, vec![FitParam::LogG, FitParam::Theta]);
        let x = prob.start();
        let analytic = theta_derivative(&prob, &x);
        let h = 1e-6;
        let up = prob.model_values(&[x[0], x[1] + h]);
        let dn = prob.model_values(&[x[0], x[1] - h]);
        let scale = analytic.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for k in 0..analytic.len() {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-5 * scale, "{k}: {fd} vs {}", analytic[k]);
        }
    }

    #[test]
    fn uniform_weight_scaling_leaves_estimate_unchanged() {
        let truth = SystemParams::reference_device(0.5, 0.4);
        let (f, mut v, w_ref) = synthetic(&truth);
        for (k, x) in v.iter_mut().enumerate() {
            *x *= 1.0 + 0.01 * ((k * 7919 % 13) as f64 - 6.0) / 6.0;
        }
        let start = truth.clone().with_g(truth.g() * 1.1);
        let free = vec![FitParam::LogG, FitParam::LogitEta];
        let a = FitProblem::new(f.clone(), v.clone(), start.clone(), w_ref, free.clone());
        let mut b = a.clone();
        b.weights.iter_mut().for_each(|w| *w *= 1e4);
        let (ra, rb) = (fit_spectrum(&a).unwrap(), fit_spectrum(&b).unwrap());
        for k in 0..2 {
            assert!((ra.values[k] / rb.values[k] - 1.0).abs() < 1e-6);
            assert!((ra.stderr[k] / rb.stderr[k] - 1.0).abs() < 1e-4);
        }
    }
}
