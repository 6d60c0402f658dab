//! Thermal intermodulation noise: second-order cavity transduction of
//! detuning fluctuations, the magic-detuning null, and the single-detector
//! homodyne cancellation geometry.

use crate::model_core::{quadrature_offset, CavityMode, SystemParams};
use crate::{Error, Result, C64, TAU};
use rustfft::FftPlanner;

/// Real detuning fluctuation δΔ(t) in rad/s on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DetuningNoiseTrace {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl DetuningNoiseTrace {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if samples.len() < 2 || !(dt > 0.0) || samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("trace needs ≥ 2 finite samples and dt > 0".into()));
        }
        Ok(Self { samples, dt })
    }

    /// Sum of cosines ε·cos(ω t + φ).
    pub fn tones(tones: &[(f64, f64, f64)], n: usize, dt: f64) -> Self {
        let samples = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                tones.iter().map(|&(eps, w, ph)| eps * (w * t + ph).cos()).sum()
            })
            .collect();
        Self { samples, dt }
    }
}

/// Field on the transform grid of a zero-padded trace. Convention
/// X(ω) = ∫x(t)e^{iωt}dt, so d/dt → −iω.
#[derive(Clone, Debug)]
pub struct FieldSpectrum {
    pub values: Vec<C64>,
    pub dt: f64,
    /// Length of the unpadded trace.
    pub len: usize,
}

impl FieldSpectrum {
    pub fn omega(&self, k: usize) -> f64 {
        bin_omega(k, self.values.len(), self.dt)
    }

    /// Back to the time domain, unpadded part only.
    pub fn to_time(&self) -> Vec<C64> {
        let mut buf = self.values.clone();
        let n = buf.len();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let s = 1.0 / (n as f64 * self.dt);
        buf.truncate(self.len);
        buf.iter_mut().for_each(|x| *x *= s);
        buf
    }
}

fn bin_omega(k: usize, n: usize, dt: f64) -> f64 {
    let kk = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    TAU * kk / (n as f64 * dt)
}

fn to_freq(x: &[C64], dt: f64) -> Vec<C64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    buf.iter_mut().for_each(|v| *v *= dt);
    buf
}

fn padded(trace: &DetuningNoiseTrace) -> Vec<C64> {
    let n = trace.samples.len();
    let mut v: Vec<C64> = trace.samples.iter().map(|&x| C64::new(x, 0.0)).collect();
    v.resize(2 * n, C64::default());
    v
}

fn lorentz_den(cav: &CavityMode, w: f64) -> C64 {
    C64::new(0.5 * cav.kappa, -(cav.detuning + w))
}

/// a1(ω) = ā·iΔ(ω)/(κ/2 − i(Δ̄+ω)).
pub fn linear_field_response(trace: &DetuningNoiseTrace, cav: &CavityMode, mean_field: f64) -> FieldSpectrum {
    let x = to_freq(&padded(trace), trace.dt);
    let n = x.len();
    let values = x
        .iter()
        .enumerate()
        .map(|(k, d)| C64::i() * mean_field * d / lorentz_den(cav, bin_omega(k, n, trace.dt)))
        .collect();
    FieldSpectrum { values, dt: trace.dt, len: trace.samples.len() }
}

/// Fraction of the Nyquist band below which 99.99% of the trace power lies.
pub fn band_occupancy(trace: &DetuningNoiseTrace) -> f64 {
    let x = to_freq(&padded(trace), trace.dt);
    let n = x.len();
    let half = n / 2;
    let mut p: Vec<f64> = (0..=half).map(|k| x[k].norm_sqr() + if k > 0 && k < n - k { x[n - k].norm_sqr() } else { 0.0 }).collect();
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (k, v) in p.iter_mut().enumerate() {
        acc += *v;
        if acc >= 0.9999 * total {
            return k as f64 / half as f64;
        }
    }
    1.0
}

/// a2(ω) = −ā∫Δ(ω−ω')Δ(ω')/(L(ω)L(ω')) dω'/2π, via the time-domain product
/// δΔ(t)·a1(t).
pub fn quadratic_field_response(trace: &DetuningNoiseTrace, cav: &CavityMode, mean_field: f64) -> Result<FieldSpectrum> {
    let occ = band_occupancy(trace);
    if occ > 0.4 {
        return Err(Error::AliasWarning(100.0 * occ));
    }
    let a1 = linear_field_response(trace, cav, mean_field);
    let n = a1.values.len();
    let mut full = a1.clone();
    full.len = n;
    let a1t = full.to_time();
    let pad = padded(trace);
    let prod: Vec<C64> = a1t.iter().zip(&pad).map(|(a, d)| a * d.re).collect();
    let pf = to_freq(&prod, trace.dt);
    let values = pf
        .iter()
        .enumerate()
        .map(|(k, v)| C64::i() * v / lorentz_den(cav, bin_omega(k, n, trace.dt)))
        .collect();
    Ok(FieldSpectrum { values, dt: trace.dt, len: trace.samples.len() })
}

/// Intracavity photon-number fluctuation ā*(a1+a2) + h.c. + a1†a1.
pub fn photon_number_noise(a1: &FieldSpectrum, a2: &FieldSpectrum, mean_field: f64) -> FieldSpectrum {
    let n = a1.values.len();
    let mut f1 = a1.clone();
    f1.len = n;
    let mut f2 = a2.clone();
    f2.len = n;
    let t1 = f1.to_time();
    let t2 = f2.to_time();
    let nt: Vec<C64> = t1
        .iter()
        .zip(&t2)
        .map(|(x, y)| C64::new(2.0 * mean_field * (x + y).re + x.norm_sqr(), 0.0))
        .collect();
    FieldSpectrum { values: to_freq(&nt, a1.dt), dt: a1.dt, len: a1.len }
}

/// Second derivative of the static intensity 1/((Δ̄+δ)² + κ²/4) at δ = 0.
pub fn dc_intensity_curvature(kappa: f64, detuning: f64) -> f64 {
    let q = detuning * detuning + 0.25 * kappa * kappa;
    (6.0 * detuning * detuning - 0.5 * kappa * kappa) / q.powi(3)
}

/// Residual photon-number noise kernel at finite κ, times the
/// autoconvolution of the detuning spectrum.
pub fn residual_noise_floor(cav: &CavityMode, s_dd_autoconvolution: f64, omega: f64) -> f64 {
    let (d2, k2) = (cav.detuning.powi(2), cav.kappa.powi(2));
    let a = 4.0 * d2 + k2;
    let num = a * (k2 - 12.0 * d2).powi(2) + 8.0 * (3.0 * k2 - 4.0 * d2) * k2 * omega * omega;
    num / a.powi(5) * s_dd_autoconvolution
}

/// arg χ_opt(0) = atan2(Δ̄, κ/2).
pub fn optical_phase(cav: &CavityMode) -> f64 {
    cav.detuning.atan2(0.5 * cav.kappa)
}

/// Homodyne phasor angle θ_h for a quadrature angle referred to the
/// mechanical-information-free quadrature (θ_disp).
pub fn phasor_angle(theta_disp: f64, cav: &CavityMode) -> f64 {
    theta_disp + optical_phase(cav)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneGeometry {
    /// Phasor angle of ā_hom relative to ā_sig.
    pub theta: f64,
    pub i_lo_over_i_sig: f64,
    pub i_hom_over_i_sig: f64,
    pub visibility: f64,
    pub r: f64,
}

impl HomodyneGeometry {
    /// |ā_sig/ā_hom| − 2cos[θ − 2 arg χ_opt(0)].
    pub fn cancellation_residual(&self, cav: &CavityMode) -> f64 {
        1.0 / self.i_hom_over_i_sig.sqrt() - 2.0 * (self.theta - 2.0 * optical_phase(cav)).cos().abs()
    }

    /// Phasor angles consistent with measured intensity ratios (±θ).
    pub fn angle_from_intensities(i_hom: f64, i_lo: f64) -> Option<f64> {
        let rho = i_hom.sqrt();
        let c = (i_hom + 1.0 - i_lo) / (2.0 * rho);
        (c.abs() <= 1.0).then(|| c.acos())
    }
}

/// LO setting on one branch of the nulling condition: ā_hom/ā_sig =
/// `sign`·ρ·e^{iθ} with ρ = 1/(2|cos(θ − 2 arg χ_opt(0))|).
pub fn lo_setting_branch(theta: f64, cav: &CavityMode, visibility: f64, r: f64, sign: f64) -> Result<HomodyneGeometry> {
    let ratio = 2.0 * (theta - 2.0 * optical_phase(cav)).cos().abs();
    if ratio <= 1e-12 || ratio > 2.0 {
        return Err(Error::NoCancellation(ratio));
    }
    let rho = 1.0 / ratio;
    let hom = C64::from_polar(sign.signum() * rho, theta);
    Ok(HomodyneGeometry { theta, i_lo_over_i_sig: (hom - 1.0).norm_sqr(), i_hom_over_i_sig: rho * rho, visibility, r })
}

/// Both LO settings that null the mixing noise for phasor angle θ, smaller
/// LO power first. ā_hom = ā_sig + r·ā_LO.
pub fn lo_settings_both(theta: f64, cav: &CavityMode, visibility: f64, r: f64) -> Result<[HomodyneGeometry; 2]> {
    let a = lo_setting_branch(theta, cav, visibility, r, 1.0)?;
    let b = lo_setting_branch(theta, cav, visibility, r, -1.0)?;
    Ok(if a.i_lo_over_i_sig <= b.i_lo_over_i_sig { [a, b] } else { [b, a] })
}

pub fn lo_settings_for_quadrature(theta: f64, cav: &CavityMode) -> Result<HomodyneGeometry> {
    lo_settings_both(theta, cav, 0.95, 0.01).map(|[a, _]| a)
}

/// η_hom = I_hom/(I_hom + I_LO(1/v² − 1)).
pub fn homodyne_efficiency(geom: &HomodyneGeometry) -> f64 {
    let d = geom.i_lo_over_i_sig * (1.0 / geom.visibility.powi(2) - 1.0);
    geom.i_hom_over_i_sig / (geom.i_hom_over_i_sig + d)
}

/// Detection efficiency at model quadrature `theta` with the LO on the
/// positive branch, scaled so the mechanical-readout quadrature (displayed
/// angle −90°, I_LO/I_sig = 3) has `eta_readout`.
pub fn detection_efficiency_at(p: &SystemParams, theta: f64, visibility: f64, eta_readout: f64) -> Result<f64> {
    let cav = &p.cavity;
    let eff = |disp: f64| -> Result<f64> {
        Ok(homodyne_efficiency(&lo_setting_branch(phasor_angle(disp, cav), cav, visibility, 0.01, 1.0)?))
    };
    let readout = eff(-std::f64::consts::FRAC_PI_2)?;
    Ok((eta_readout * eff(theta - quadrature_offset(cav))? / readout).min(1.0))
}

/// Power of the `omega` line in a real record sampled at `dt`, from an exact
/// projection over the full record.
pub fn line_power(x: &[f64], dt: f64, omega: f64) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let s: C64 = x
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean) * C64::from_polar(1.0, -omega * k as f64 * dt))
        .sum();
    (2.0 * s / n).norm_sqr()
}

/// Intermodulation-line power at ω1+ω2, relative to the squared mean
/// intensity, from the classical cavity integrator with two tones of
/// amplitude `eps`. The record spans `periods` periods of the tone grid.
pub fn two_tone_intermod(cav: &CavityMode, w1: f64, w2: f64, eps: f64, base: f64, periods: usize) -> Result<f64> {
    let dt = 0.05 / cav.kappa;
    let t_total = periods as f64 * TAU / base;
    let n = (t_total / dt).round() as usize;
    let dt = t_total / n as f64;
    let trace = DetuningNoiseTrace::tones(&[(eps, w1, 0.0), (eps, w2, 0.0)], n, dt);
    let drive = (cav.detuning.powi(2) + 0.25 * cav.kappa.powi(2)).sqrt();
    let i = crate::simulator::simulate_classical_cavity(&trace, cav, drive)?;
    let mean = i.iter().sum::<f64>() / n as f64;
    Ok(line_power(&i, dt, w1 + w2) / (mean * mean))
}

/// Same quantity from the perturbative field responses.
pub fn two_tone_intermod_perturbative(cav: &CavityMode, w1: f64, w2: f64, eps: f64, base: f64, periods: usize, samples_per_base: usize) -> Result<f64> {
    let n = periods * samples_per_base;
    let dt = TAU / base / samples_per_base as f64;
    let trace = DetuningNoiseTrace::tones(&[(eps, w1, 0.0), (eps, w2, 0.0)], n, dt);
    let a1 = linear_field_response(&trace, cav, 1.0);
    let a2 = quadratic_field_response(&trace, cav, 1.0)?;
    let nc = photon_number_noise(&a1, &a2, 1.0).to_time();
    // Discard the edges, where the zero padding leaves transients.
    let skip = (8.0 / (cav.kappa * dt)).ceil() as usize;
    let per = samples_per_base;
    let start = skip.div_ceil(per) * per;
    let stop = n - start;
    let v: Vec<f64> = nc[start..stop].iter().map(|c| c.re).collect();
    Ok(line_power(&v, dt, w1 + w2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cav(kappa: f64, d: f64) -> CavityMode {
        CavityMode::single_port(kappa, d)
    }

    #[test]
    fn zero_trace_zero_response() {
        let t = DetuningNoiseTrace::new(vec![0.0; 64], 0.1).unwrap();
        let c = cav(1.0, -0.3);
        assert!(linear_field_response(&t, &c, 1.0).values.iter().all(|v| v.norm() == 0.0));
        assert!(quadratic_field_response(&t, &c, 1.0).unwrap().values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_tone_linear_lines() {
        let c = cav(1.0, CavityMode::magic_detuning(1.0));
        let (w, eps, dt) = (0.05, 1e-3, 0.05);
        let per = (TAU / w / dt).round() as usize;
        let dt = TAU / w / per as f64;
        let t = DetuningNoiseTrace::tones(&[(eps, w, 0.0)], 20 * per, dt);
        let a1 = linear_field_response(&t, &c, 2.0).to_time();
        let l = |x: f64| C64::new(0.5, -(c.detuning + x));
        for k in (5 * per..15 * per).step_by(97) {
            let tt = k as f64 * dt;
            let expect = C64::i() * 2.0 * eps * 0.5
                * (C64::from_polar(1.0, -w * tt) / l(w) + C64::from_polar(1.0, w * tt) / l(-w));
            assert!((a1[k] - expect).norm() < 1e-9, "{k}");
        }
    }

    #[test]
    fn magic_detuning_dc_null() {
        let k = 2.7;
        assert!(dc_intensity_curvature(k, CavityMode::magic_detuning(k)).abs() < 1e-15);
        assert!(dc_intensity_curvature(k, -k / 2.0).abs() > 1e-3);
    }

    #[test]
    fn residual_floor_kernel() {
        let k = 3.0;
        let m = cav(k, CavityMode::magic_detuning(k));
        assert!(residual_noise_floor(&m, 1.0, 0.0).abs() < 1e-18);
        let r1 = residual_noise_floor(&m, 1.0, 1e-3);
        let r2 = residual_noise_floor(&m, 1.0, 2e-3);
        assert!((r2 / r1 - 4.0).abs() < 1e-9);
        assert!((residual_noise_floor(&cav(k, 0.0), 2.0, 0.0) - 2.0 / k.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn cancellation_maximum() {
        let c = cav(1.0, CavityMode::magic_detuning(1.0));
        let g = lo_settings_for_quadrature(2.0 * optical_phase(&c), &c).unwrap();
        assert!((g.i_hom_over_i_sig - 0.25).abs() < 1e-12);
        assert!(g.cancellation_residual(&c).abs() < 1e-12);
    }

    #[test]
    fn unreachable_quadrature() {
        let c = cav(1.0, CavityMode::magic_detuning(1.0));
        let th = 2.0 * optical_phase(&c) + std::f64::consts::FRAC_PI_2;
        assert!(matches!(lo_settings_for_quadrature(th, &c), Err(Error::NoCancellation(_))));
    }

    #[test]
    fn perfect_visibility_is_lossless() {
        let c = cav(1.0, CavityMode::magic_detuning(1.0));
        let mut g = lo_settings_for_quadrature(-0.7, &c).unwrap();
        g.visibility = 1.0;
        assert_eq!(homodyne_efficiency(&g), 1.0);
    }

    #[test]
    fn sweep_matches_phasor_root_finder() {
        // Independent route: bisection on |ā_sig/(ā_sig + z)| for a phasor z
        // along the ray of angle θ from ā_hom's tip.
        let c = cav(1.0, CavityMode::magic_detuning(1.0));
        for deg in (-110..=0).step_by(10) {
            let th = (deg as f64).to_radians();
            let g = lo_settings_for_quadrature(th, &c).unwrap();
            let target = 2.0 * (th - 2.0 * optical_phase(&c)).cos().abs();
            let f = |rho: f64| 1.0 / rho - target;
            let (mut lo, mut hi) = (1e-6f64, 1e6f64);
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if f(mid) > 0.0 { lo = mid } else { hi = mid }
            }
            let lo_a = (C64::from_polar(lo, th) - 1.0).norm_sqr();
            let lo_b = (C64::from_polar(-lo, th) - 1.0).norm_sqr();
            assert!((g.i_hom_over_i_sig - lo * lo).abs() < 1e-9);
            assert!((g.i_lo_over_i_sig - lo_a.min(lo_b)).abs() < 1e-9);
        }
    }
}
