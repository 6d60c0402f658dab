//! Synthetic quadrature trajectories and demodulated homodyne records in the
//! frame rotating at the demodulation frequency, plus a classical cavity
//! integrator for intermodulation studies.
//!
//! Each mode follows dr = A r dt + noise with A = [[−Γ/2, δ], [−δ, −Γ/2]],
//! integrated by an exact rotation followed by additive damping and noise.
//! Channels are i_x = Σ √(4Γ_meas,i) X_i + ξ_x and likewise for Y, with unit
//! two-sided shot-noise density. Backaction noise is one pair of streams
//! shared by all modes; with correlation on, the imprecision streams are
//! ξ_x = ρ b_y + √(1−ρ²) n_x and ξ_y = −ρ b_x + √(1−ρ²) n_y.

use crate::model_core::{mode_rates, readout_correlation, spring_shift, ModeRates, SystemParams};
use crate::tin::DetuningNoiseTrace;
use crate::model_core::CavityMode;
use crate::{Error, Result, C64, TAU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Phase-modulation calibration tone: frequency in Hz, depth β in rad.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTone {
    pub frequency_hz: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub params: SystemParams,
    /// Sample interval and integrator step (s).
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub record_truth: bool,
    /// Keep every `truth_stride`-th truth sample.
    pub truth_stride: usize,
    pub tones: Vec<CalibrationTone>,
    /// Rotating-frame rates; defaults to the chain-derived values.
    pub rates: Vec<ModeRates>,
    /// Demodulation (rotating-frame) frequency, rad/s.
    pub omega_ref: f64,
    /// Backaction–imprecision correlation ρ.
    pub correlation: f64,
    pub correlated: bool,
    pub shot_noise: bool,
    pub max_samples: usize,
}

impl TrajectoryConfig {
    pub fn new(params: SystemParams, dt: f64, duration: f64, seed: u64) -> Self {
        let d = params.defect();
        let omega_ref = d.omega_m + spring_shift(&params, d.omega_m);
        let rates = mode_rates(&params, Some(omega_ref));
        let correlation = readout_correlation(&params);
        Self {
            params,
            dt,
            duration,
            seed,
            record_truth: false,
            truth_stride: 1,
            tones: Vec::new(),
            rates,
            omega_ref,
            correlation,
            correlated: true,
            shot_noise: true,
            max_samples: 1 << 26,
        }
    }

    /// Replace the rotating-frame rates, e.g. with a hand-set filter model.
    pub fn with_rates(mut self, rates: Vec<ModeRates>) -> Self {
        self.rates = rates;
        self
    }

    pub fn n_samples(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.duration >= self.dt) {
            return Err(Error::InvalidParams("need dt > 0 and duration ≥ dt".into()));
        }
        if self.rates.is_empty() {
            return Err(Error::InvalidParams("no modes".into()));
        }
        for r in &self.rates {
            if !(r.gamma > 0.0 && r.gamma_th >= 0.0 && r.gamma_qba >= 0.0 && r.gamma_meas >= 0.0) {
                return Err(Error::InvalidParams(format!("mode rates {r:?}")));
            }
        }
        let max_off = self.rates.iter().map(|r| r.offset.abs()).fold(0.0, f64::max);
        if self.dt * max_off >= 0.1 {
            return Err(Error::StepTooLarge(format!("dt·|δ|max = {:.3} ≥ 0.1", self.dt * max_off)));
        }
        if self.n_samples() > self.max_samples {
            return Err(Error::InvalidParams(format!("{} samples exceed the cap {}", self.n_samples(), self.max_samples)));
        }
        if self.record_truth && self.truth_stride == 0 {
            return Err(Error::InvalidParams("truth_stride must be ≥ 1".into()));
        }
        if !(self.correlation.abs() <= 1.0) {
            return Err(Error::InvalidParams(format!("correlation {} outside [−1, 1]", self.correlation)));
        }
        if !self.tones.is_empty() && !(self.params.coupling.g0 > 0.0) {
            return Err(Error::InvalidParams("calibration tones need g0 > 0".into()));
        }
        Ok(())
    }
}

/// Truth quadratures at every `stride`-th sample, row-major (X1, Y1, X2, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub stride: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Truth {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// State at truth row `j`, i.e. record sample `j·stride`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub i_x: Vec<f64>,
    pub i_y: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
    /// Hz.
    pub demod_frequency: f64,
    pub truth: Option<Truth>,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.i_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_x.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// −i_y. A mode at offset +δ rotates as i_x + i·i_y ∝ e^{−iδt}, so the
    /// complex record i_x − i·i_y shows it at +δ.
    pub fn conjugate_y(&self) -> Vec<f64> {
        self.i_y.iter().map(|v| -v).collect()
    }
}

/// Independent RNG stream `stream` of realization `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const STREAM_INIT: u64 = 0;
const STREAM_THERMAL: u64 = 1;
const STREAM_BACKACTION: u64 = 2;
const STREAM_IMPRECISION: u64 = 3;

#[inline]
fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn simulate(config: &TrajectoryConfig) -> Result<MeasurementRecord> {
    config.params.validate()?;
    config.validate()?;
    let n = config.n_samples();
    let dt = config.dt;
    let modes = &config.rates;
    let nm = modes.len();

    let mut init = rng_stream(config.seed, STREAM_INIT);
    let mut rth = rng_stream(config.seed, STREAM_THERMAL);
    let mut rba = rng_stream(config.seed, STREAM_BACKACTION);
    let mut rim = rng_stream(config.seed, STREAM_IMPRECISION);

    let mut state: Vec<f64> = modes
        .iter()
        .flat_map(|m| {
            let s = m.unconditional_variance().sqrt();
            [s * normal(&mut init), s * normal(&mut init)]
        })
        .collect();

    let rot: Vec<(f64, f64)> = modes.iter().map(|m| ((m.offset * dt).cos(), (m.offset * dt).sin())).collect();
    let damp: Vec<f64> = modes.iter().map(|m| 0.5 * m.gamma * dt).collect();
    let sth: Vec<f64> = modes.iter().map(|m| (m.gamma_th * dt).sqrt()).collect();
    let sba: Vec<f64> = modes.iter().map(|m| (m.gamma_qba * dt).sqrt()).collect();
    let gain: Vec<f64> = modes.iter().map(|m| (4.0 * m.gamma_meas).sqrt()).collect();
    let rho = if config.correlated { config.correlation } else { 0.0 };
    let rho_c = (1.0 - rho * rho).sqrt();
    let shot = if config.shot_noise { 1.0 / dt.sqrt() } else { 0.0 };

    // Tones enter as an equivalent defect displacement A/(g0√2) seen with the
    // unit-weight measurement gain.
    let w0 = config.params.defect().coupling_weight;
    let tone_gain = if w0 > 0.0 { gain[0] / w0 } else { 0.0 };
    let tones: Vec<(f64, f64)> = config
        .tones
        .iter()
        .map(|t| {
            let a = t.depth * TAU * t.frequency_hz / (config.params.coupling.g0 * std::f64::consts::SQRT_2);
            (tone_gain * a, TAU * t.frequency_hz - config.omega_ref)
        })
        .collect();

    let mut i_x = Vec::with_capacity(n);
    let mut i_y = Vec::with_capacity(n);
    let mut truth = config.record_truth.then(|| Truth {
        stride: config.truth_stride,
        dim: 2 * nm,
        values: Vec::with_capacity(2 * nm * n.div_ceil(config.truth_stride)),
    });

    for k in 0..n {
        if let Some(t) = truth.as_mut() {
            if k % t.stride == 0 {
                t.values.extend_from_slice(&state);
            }
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for j in 0..nm {
            sx += gain[j] * state[2 * j];
            sy += gain[j] * state[2 * j + 1];
        }
        if !tones.is_empty() {
            let t = k as f64 * dt;
            for &(a, d) in &tones {
                sx += a * (d * t).cos();
                sy -= a * (d * t).sin();
            }
        }
        let bx = normal(&mut rba);
        let by = normal(&mut rba);
        let nx = normal(&mut rim);
        let ny = normal(&mut rim);
        i_x.push(sx + shot * (rho * by + rho_c * nx));
        i_y.push(sy + shot * (-rho * bx + rho_c * ny));

        for j in 0..nm {
            let (c, s) = rot[j];
            let (x, y) = (state[2 * j], state[2 * j + 1]);
            let xr = c * x + s * y;
            let yr = -s * x + c * y;
            state[2 * j] = xr - damp[j] * x + sth[j] * normal(&mut rth) + sba[j] * bx;
            state[2 * j + 1] = yr - damp[j] * y + sth[j] * normal(&mut rth) + sba[j] * by;
        }
    }

    Ok(MeasurementRecord {
        i_x,
        i_y,
        sample_rate: 1.0 / dt,
        demod_frequency: config.omega_ref / TAU,
        truth,
    })
}

/// Real carrier record v = i_x cos ω_c t + i_y sin ω_c t at `upsample` times
/// the IQ rate, with the IQ channels linearly interpolated. A mode at offset δ
/// appears at ω_c + δ; demodulation returns (i_x, −i_y).
pub fn synthesize_carrier(record: &MeasurementRecord, carrier_hz: f64, upsample: usize) -> Vec<f64> {
    let n = record.len();
    let up = upsample.max(1);
    let dt = record.dt() / up as f64;
    let w = TAU * carrier_hz;
    let mut out = Vec::with_capacity(n * up);
    for k in 0..n {
        let (x0, y0) = (record.i_x[k], record.i_y[k]);
        let (x1, y1) = if k + 1 < n { (record.i_x[k + 1], record.i_y[k + 1]) } else { (x0, y0) };
        for s in 0..up {
            let f = s as f64 / up as f64;
            let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let ph = w * (k * up + s) as f64 * dt;
            out.push(x * ph.cos() + y * ph.sin());
        }
    }
    out
}

/// RK4 integration of ȧ = [i(Δ̄ + δΔ(t)) − κ/2]a + √κ_in·a_in from the
/// unperturbed steady state; returns |a|² on the trace grid. The drive enters
/// through κ_in, or through κ_out for a single-port cavity.
pub fn simulate_classical_cavity(trace: &DetuningNoiseTrace, cav: &CavityMode, drive: f64) -> Result<Vec<f64>> {
    let dt = trace.dt;
    if dt * cav.kappa >= 0.1 {
        return Err(Error::StepTooLarge(format!("dt·κ = {:.3} ≥ 0.1", dt * cav.kappa)));
    }
    let port = if cav.kappa_in > 0.0 { cav.kappa_in } else { cav.kappa_out };
    let f = port.sqrt() * drive;
    let rhs = |a: C64, d: f64| C64::new(-0.5 * cav.kappa, cav.detuning + d) * a + f;
    let mut a = f / C64::new(0.5 * cav.kappa, -cav.detuning);
    let s = &trace.samples;
    let mut out = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        out.push(a.norm_sqr());
        let d0 = s[k];
        let d1 = if k + 1 < s.len() { s[k + 1] } else { d0 };
        let dm = 0.5 * (d0 + d1);
        let k1 = rhs(a, d0);
        let k2 = rhs(a + 0.5 * dt * k1, dm);
        let k3 = rhs(a + 0.5 * dt * k2, dm);
        let k4 = rhs(a + dt * k3, d1);
        a += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::{CouplingParams, MechanicalMode};

    fn toy(gamma: f64, n_th: f64, qba: f64, meas: f64, offset: f64) -> ModeRates {
        ModeRates { offset, gamma, gamma_th: gamma * (n_th + 0.5), gamma_qba: qba, gamma_meas: meas }
    }

    fn toy_config(rates: Vec<ModeRates>, dt: f64, duration: f64, seed: u64) -> TrajectoryConfig {
        let m = MechanicalMode::new(1.0e3, 1.0, 10.0);
        let p = SystemParams::single_mode(m, CavityMode::single_port(1.0e5, -2.0e4), CouplingParams::from_g(1.0, 0.0));
        let mut c = TrajectoryConfig::new(p, dt, duration, seed).with_rates(rates);
        c.correlation = 0.0;
        c
    }

    fn var_of(t: &Truth, comp: usize, skip: usize) -> f64 {
        let v: Vec<f64> = (skip..t.len()).map(|j| t.row(j)[comp]).collect();
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn thermal_equilibrium_variance() {
        // Γ = 1 s⁻¹, 400/Γ record, samples every 0.5/Γ (weakly correlated).
        let n_th = 3.0;
        let mut c = toy_config(vec![toy(1.0, n_th, 0.0, 0.0, 2.0)], 1e-3, 2000.0, 5);
        c.record_truth = true;
        c.truth_stride = 1000;
        let r = simulate(&c).unwrap();
        let t = r.truth.clone().unwrap();
        let v = 0.5 * (var_of(&t, 0, 20) + var_of(&t, 1, 20));
        // Effective independent samples ≈ N/(1 + 2e^{-0.5}/(1 − e^{-0.5})) for the
        // AR(1) correlation e^{-Γ·0.5/2·2}; use a conservative 3σ band.
        let nn = (t.len() - 20) as f64 * 2.0 / 4.1;
        let sigma = (n_th + 0.5) * (2.0 / nn).sqrt();
        assert!((v - (n_th + 0.5)).abs() < 3.0 * sigma, "{v}");
    }

    #[test]
    fn seed_determinism() {
        let c = toy_config(vec![toy(10.0, 2.0, 5.0, 3.0, 40.0)], 1e-3, 2.0, 42);
        let a = simulate(&c).unwrap();
        let b = simulate(&c).unwrap();
        assert_eq!(a, b);
        let mut c2 = c.clone();
        c2.seed = 43;
        assert_ne!(simulate(&c2).unwrap().i_x, a.i_x);
    }

    #[test]
    fn step_bound() {
        let c = toy_config(vec![toy(10.0, 2.0, 0.0, 0.0, 200.0)], 1e-3, 1.0, 0);
        assert!(matches!(simulate(&c), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn shot_noise_floor() {
        let c = toy_config(vec![toy(10.0, 2.0, 0.0, 0.0, 0.0)], 1e-4, 10.0, 7);
        let r = simulate(&c).unwrap();
        let v: f64 = r.i_x.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        // Two-sided density 1 ⇔ sample variance 1/dt.
        assert!((v * c.dt - 1.0).abs() < 0.01);
    }

    #[test]
    fn correlation_convention() {
        // No mechanics: i_x correlates with the Y backaction stream, which is
        // recovered from a pure-backaction mode with Γ_meas = 0.
        let mut c = toy_config(vec![toy(1e-6, 0.0, 1.0, 0.0, 0.0)], 1e-3, 50.0, 3);
        c.rates[0].gamma_th = 0.0;
        c.correlation = 0.6;
        c.record_truth = true;
        let r = simulate(&c).unwrap();
        let t = r.truth.clone().unwrap();
        let n = r.len() - 1;
        let (mut sxy, mut syx, mut ss) = (0.0, 0.0, 0.0);
        for k in 0..n {
            let dby = t.row(k + 1)[1] - (1.0 - 0.5e-9) * t.row(k)[1];
            let dbx = t.row(k + 1)[0] - (1.0 - 0.5e-9) * t.row(k)[0];
            sxy += r.i_x[k] * dby;
            syx += r.i_y[k] * dbx;
            ss += dby * dby;
        }
        let norm = (ss / n as f64).sqrt() * (1.0 / c.dt).sqrt() * n as f64;
        assert!((sxy / norm - 0.6).abs() < 0.02, "{}", sxy / norm);
        assert!((syx / norm + 0.6).abs() < 0.02, "{}", syx / norm);
    }

    #[test]
    fn classical_cavity_steady_state() {
        let cav = CavityMode::single_port(2.0, -0.7);
        let t = DetuningNoiseTrace::new(vec![0.0; 4000], 0.01).unwrap();
        let i = simulate_classical_cavity(&t, &cav, 1.5).unwrap();
        let expect = 2.0 * 1.5 * 1.5 / (0.49 + 1.0);
        assert!(i.iter().all(|v| (v - expect).abs() < 1e-12 * expect));
        let t2 = DetuningNoiseTrace::new(vec![0.0; 10], 0.06).unwrap();
        assert!(matches!(simulate_classical_cavity(&t2, &cav, 1.0), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn classical_cavity_matches_linear_response() {
        let cav = CavityMode::single_port(1.0, CavityMode::magic_detuning(1.0));
        let (w, eps) = (0.3, 1e-4);
        let per = 400;
        let dt = TAU / w / per as f64;
        let t = DetuningNoiseTrace::tones(&[(eps, w, 0.0)], 40 * per, dt);
        let drive = (cav.detuning.powi(2) + 0.25).sqrt();
        let i = simulate_classical_cavity(&t, &cav, drive).unwrap();
        let a1 = crate::tin::linear_field_response(&t, &cav, 1.0);
        let a2 = crate::tin::quadratic_field_response(&t, &cav, 1.0).unwrap();
        let nc = crate::tin::photon_number_noise(&a1, &a2, 1.0).to_time();
        // |ā|² = 1 with this drive; compare the line at ω after the transient.
        let (s, e) = (10 * per, 30 * per);
        let sim: Vec<f64> = i[s..e].to_vec();
        let pert: Vec<f64> = nc[s..e].iter().map(|c| 1.0 + c.re).collect();
        let ps = crate::tin::line_power(&sim, dt, w);
        let pp = crate::tin::line_power(&pert, dt, w);
        assert!((ps / pp - 1.0).abs() < 1e-3, "{ps} {pp}");
    }

    #[test]
    fn carrier_places_positive_offset_above() {
        // Mode at +δ in the rotating frame: (i_x, i_y) = (cos δt, −sin δt).
        let (fs, f_c, f_d, up) = (1.0e5, 1.0e6, 2.0e3, 40);
        let n = 20_000;
        let i_x: Vec<f64> = (0..n).map(|k| (TAU * f_d * k as f64 / fs).cos()).collect();
        let i_y: Vec<f64> = (0..n).map(|k| -(TAU * f_d * k as f64 / fs).sin()).collect();
        let rec = MeasurementRecord { i_x, i_y, sample_rate: fs, demod_frequency: f_c, truth: None };
        let v = synthesize_carrier(&rec, f_c, up);
        let dt = 1.0 / (fs * up as f64);
        let above = crate::tin::line_power(&v, dt, TAU * (f_c + f_d));
        let below = crate::tin::line_power(&v, dt, TAU * (f_c - f_d));
        assert!(above > 1e6 * below, "{above} {below}");
        let iq = crate::dsp::iq_demodulate(&v, fs * up as f64, f_c, up).unwrap();
        let neg = rec.conjugate_y();
        for k in 2000..n - 2000 {
            assert!((iq.i[k] - rec.i_x[k]).abs() < 5e-3 && (iq.q[k] - neg[k]).abs() < 5e-3, "{k}");
        }
    }
}
