use super::{gamma_opt, mech_susceptibility, spring_shift, susceptibility_chain, MechanicalMode, SystemParams, ThermalCorrelator};
use crate::quad::integrate_peaks;
use crate::{Result, TAU};

/// Thermal input correlator S_PinPin(ω) for one mode.
pub fn thermal_input_spectrum(mode: &MechanicalMode, omega: f64, corr: ThermalCorrelator) -> f64 {
    let r = omega.abs() / mode.omega_m;
    match corr {
        ThermalCorrelator::Symmetrized => r * (mode.n_th + 0.5),
        ThermalCorrelator::Asymmetric if omega > 0.0 => r * (mode.n_th + 1.0),
        ThermalCorrelator::Asymmetric => r * mode.n_th,
    }
}

/// Classical cavity-frequency noise S_ΔΔ(ω), symmetric in ω.
pub fn spurious_detuning_noise(p: &SystemParams, omega: f64) -> f64 {
    let w = omega.abs();
    p.detuning_noise.white + p.detuning_noise.lines.iter().map(|l| l.eval(w)).sum::<f64>()
}

/// Two-sided detected quadrature spectrum, vacuum level ½.
pub fn detected_spectrum_two_sided(p: &SystemParams, omega: f64) -> f64 {
    let s = susceptibility_chain(p, omega);
    let sdd = spurious_detuning_noise(p, omega);
    let thermal: f64 = p
        .modes
        .iter()
        .zip(&s.chi_pin_theta)
        .map(|(m, c)| c.norm_sqr() * 2.0 * m.gamma_m * thermal_input_spectrum(m, omega, p.thermal))
        .sum();
    let vacuum: f64 = s.chi_aindag_theta.iter().map(|c| c.norm_sqr()).sum();
    p.eta_d * (s.chi_delta_theta.norm_sqr() * sdd + thermal + vacuum) + 0.5 * (1.0 - p.eta_d)
}

/// Single-sided detected spectrum S(ω) + S(−ω); shot noise = 1.
pub fn detected_spectrum(p: &SystemParams, omega: f64) -> f64 {
    detected_spectrum_two_sided(p, omega) + detected_spectrum_two_sided(p, -omega)
}

/// Two-sided spectrum of one demodulated channel at offset ν from `omega_ref`,
/// shot noise = 1.
pub fn iq_channel_spectrum(p: &SystemParams, omega_ref: f64, nu: f64) -> f64 {
    0.5 * (detected_spectrum(p, omega_ref + nu) + detected_spectrum(p, omega_ref - nu))
}

/// Two-sided displacement spectrum of mode `j`, quadrature units.
pub fn mechanical_spectrum_two_sided(p: &SystemParams, omega: f64, j: usize) -> f64 {
    let s = susceptibility_chain(p, omega);
    let g = p.g();
    let mj = &p.modes[j];
    let wj = mj.coupling_weight;
    let chi = mech_susceptibility(mj, omega).norm_sqr();
    let sdd = spurious_detuning_noise(p, omega);
    let back = 4.0 * g * g * wj * wj;
    let mut acc = back * s.chi_delta_x.norm_sqr() * sdd;
    for (i, (m, px)) in p.modes.iter().zip(&s.chi_pin_x).enumerate() {
        let direct = if i == j { 1.0 } else { 0.0 };
        let h = (crate::C64::new(direct, 0.0) - 2.0 * g * wj * px).norm_sqr();
        acc += h * 2.0 * m.gamma_m * thermal_input_spectrum(m, omega, p.thermal);
    }
    acc += back * s.chi_aindag_x.iter().map(|c| c.norm_sqr()).sum::<f64>();
    chi * acc
}

/// Single-sided defect-mode spectrum S_QQ(ω) + S_QQ(−ω).
pub fn mechanical_spectrum(p: &SystemParams, omega: f64) -> f64 {
    mechanical_spectrum_two_sided(p, omega, 0) + mechanical_spectrum_two_sided(p, -omega, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumKind {
    DetectedQuadrature,
    MechanicalPosition,
}

/// Single-sided PSD model on an ordinary-frequency axis.
#[derive(Clone, Debug)]
pub struct SpectrumModel {
    pub kind: SpectrumKind,
    pub params: SystemParams,
}

impl SpectrumModel {
    pub fn new(kind: SpectrumKind, params: SystemParams) -> Self {
        Self { kind, params }
    }

    pub fn eval_hz(&self, f: f64) -> f64 {
        self.eval(TAU * f)
    }

    pub fn eval(&self, omega: f64) -> f64 {
        match self.kind {
            SpectrumKind::DetectedQuadrature => detected_spectrum(&self.params, omega),
            SpectrumKind::MechanicalPosition => mechanical_spectrum(&self.params, omega),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occupancy {
    pub n: f64,
    pub truncation_error: f64,
}

/// n̄ = ∫_0^∞ S̄_QQ dω/2π − ½ for the defect mode.
pub fn occupancy_from_spectrum(model: &SpectrumModel) -> Result<Occupancy> {
    let p = &model.params;
    let peaks: Vec<(f64, f64)> = p
        .modes
        .iter()
        .map(|m| {
            let w2 = m.coupling_weight.powi(2);
            let width = (m.gamma_m + w2 * gamma_opt(p, m.omega_m)).max(m.gamma_m);
            (m.omega_m + w2 * spring_shift(p, m.omega_m), width)
        })
        .collect();
    let r = integrate_peaks(&|w| mechanical_spectrum(p, w), &peaks, 1e-7)?;
    Ok(Occupancy { n: r.value / TAU - 0.5, truncation_error: r.error / TAU })
}
