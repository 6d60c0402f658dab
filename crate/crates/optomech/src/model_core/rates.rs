use super::{cavity_susceptibility, CavityMode, SystemParams};
use crate::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Radiation-pressure force spectrum S_FF(ω) = 4g²κ|χ_c(−ω)|² (two-sided,
/// all channels, no mechanical dressing).
pub fn force_spectrum(p: &SystemParams, omega: f64) -> f64 {
    let c = cavity_susceptibility(&p.cavity, -omega);
    4.0 * p.g().powi(2) * p.cavity.kappa * c.norm_sqr()
}

/// Γ_qba = ¼[S_FF(Ω) + S_FF(−Ω)] at the defect frequency.
pub fn gamma_qba(p: &SystemParams) -> f64 {
    gamma_qba_at(p, p.defect().omega_m)
}

fn gamma_qba_at(p: &SystemParams, om: f64) -> f64 {
    0.25 * (force_spectrum(p, om) + force_spectrum(p, -om))
}

/// ω → 0 limit: g²κ/(κ²/4 + Δ̄²).
pub fn gamma_qba_bad_cavity(p: &SystemParams) -> f64 {
    let k = p.cavity.kappa;
    p.g().powi(2) * k / (0.25 * k * k + p.cavity.detuning.powi(2))
}

/// Optical damping −Im[2√2 g² χ_c^X(ω)] of a unit-weight mode at ω.
pub fn gamma_opt(p: &SystemParams, omega: f64) -> f64 {
    -(self_energy(p, omega)).im
}

/// Optical-spring frequency shift Re[2√2 g² χ_c^X(ω)]/2.
pub fn spring_shift(p: &SystemParams, omega: f64) -> f64 {
    0.5 * self_energy(p, omega).re
}

fn self_energy(p: &SystemParams, omega: f64) -> crate::C64 {
    let cc = cavity_susceptibility(&p.cavity, omega);
    let ccm = cavity_susceptibility(&p.cavity, -omega).conj();
    let cx = crate::C64::i() * (ccm - cc);
    2.0 * SQRT2 * p.g().powi(2) * cx
}

/// Field-enhanced coupling that gives Γ_qba/Γ_th = c_q for the defect mode.
pub fn g_for_cooperativity(p: &SystemParams, c_q: f64) -> f64 {
    let unit = p.clone().with_g(1.0);
    let m = p.defect();
    (c_q * m.n_th * m.gamma_m / gamma_qba(&unit)).sqrt()
}

/// Angle of the quadrature that carries no mechanical information at low
/// frequency, arg χ_c(0). At magic detuning this is −30°.
pub fn quadrature_offset(cav: &CavityMode) -> f64 {
    cavity_susceptibility(cav, 0.0).arg()
}

/// Backaction–imprecision correlation √η cos θ_disp of the demodulated record.
pub fn readout_correlation(p: &SystemParams) -> f64 {
    p.eta_d.sqrt() * (p.theta - quadrature_offset(&p.cavity)).cos()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedRates {
    pub gamma_th: f64,
    pub gamma_qba: f64,
    pub gamma_meas: f64,
    pub c_q: f64,
    pub eta_meas: f64,
    pub n_imp: f64,
    pub heisenberg_ratio: f64,
}

impl DerivedRates {
    /// Rates at the mechanical-readout quadrature from (C_q, η_d, Γ_th, Γ_m).
    pub fn from_cooperativity(c_q: f64, eta_d: f64, gamma_th: f64, gamma_m: f64) -> Self {
        Self::assemble(gamma_th, c_q * gamma_th, eta_d, gamma_m)
    }

    fn assemble(gamma_th: f64, gamma_qba: f64, eta_d: f64, gamma_m: f64) -> Self {
        let gamma_meas = eta_d * gamma_qba;
        let eta_meas = gamma_meas / (gamma_th + gamma_qba);
        Self {
            gamma_th,
            gamma_qba,
            gamma_meas,
            c_q: gamma_qba / gamma_th,
            eta_meas,
            n_imp: gamma_m / (16.0 * gamma_meas),
            heisenberg_ratio: 1.0 / eta_meas.sqrt(),
        }
    }
}

pub fn derived_rates(p: &SystemParams) -> DerivedRates {
    let m = p.defect();
    DerivedRates::assemble(m.n_th * m.gamma_m, gamma_qba(p), p.eta_d, m.gamma_m)
}

/// Per-mode rates in the frame rotating at `omega_ref`, as used by the
/// simulator and the Kalman filter. `gamma_th` includes the mechanical
/// vacuum term Γ_m/2.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeRates {
    pub offset: f64,
    pub gamma: f64,
    pub gamma_th: f64,
    pub gamma_qba: f64,
    pub gamma_meas: f64,
}

impl ModeRates {
    pub fn unconditional_variance(&self) -> f64 {
        (self.gamma_th + self.gamma_qba) / self.gamma
    }
}

/// Chain-derived rates of every mode. The reference frequency defaults to
/// the spring-shifted defect frequency when `omega_ref` is `None`.
pub fn mode_rates(p: &SystemParams, omega_ref: Option<f64>) -> Vec<ModeRates> {
    let theta_disp = p.theta - quadrature_offset(&p.cavity);
    let sin2 = theta_disp.sin().powi(2);
    let d = p.defect();
    let reference = omega_ref.unwrap_or(d.omega_m + spring_shift(p, d.omega_m));
    p.modes
        .iter()
        .map(|m| {
            let w2 = m.coupling_weight.powi(2);
            let qba = w2 * gamma_qba_at(p, m.omega_m);
            ModeRates {
                offset: m.omega_m + w2 * spring_shift(p, m.omega_m) - reference,
                gamma: m.gamma_m + w2 * gamma_opt(p, m.omega_m),
                gamma_th: m.gamma_m * (m.n_th + 0.5),
                gamma_qba: qba,
                gamma_meas: p.eta_d * qba * sin2,
            }
        })
        .collect()
}

/// ((Ω+Δ̄)² + (κ/2)²)/(−4Δ̄Ω).
pub fn ideal_cooling_occupancy(omega_m: f64, kappa: f64, detuning: f64) -> Result<f64> {
    if detuning >= 0.0 || !detuning.is_finite() {
        return Err(Error::InvalidDetuning(detuning));
    }
    Ok(((omega_m + detuning).powi(2) + 0.25 * kappa * kappa) / (-4.0 * detuning * omega_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hz;

    #[test]
    fn reference_operating_point() {
        let p = SystemParams::reference_device(0.93, 0.31);
        let r = derived_rates(&p);
        assert!((r.c_q - 0.93).abs() < 1e-12);
        assert!((p.g() / hz(1.0) / 6.0e5 - 1.0).abs() < 0.01, "g/2π = {}", p.g() / hz(1.0));
        let opt = gamma_opt(&p, p.defect().omega_m);
        assert!(opt > 0.0, "magic detuning must cool");
        assert!((opt / hz(3.72e3) - 1.0).abs() < 0.01, "Γ_opt/2π = {}", opt / hz(1.0));
        assert!(spring_shift(&p, p.defect().omega_m) < 0.0, "red detuning softens the mode");
        let bc = gamma_qba_bad_cavity(&p);
        assert!((bc / r.gamma_qba - 1.0).abs() < 5e-3);
        assert!((quadrature_offset(&p.cavity).to_degrees() + 30.0).abs() < 1e-10);
    }

    #[test]
    fn cooling_limit() {
        let k = hz(13.5e6);
        let n = ideal_cooling_occupancy(hz(1.167e6), k, CavityMode::magic_detuning(k)).unwrap();
        assert!((n - 2.914).abs() < 1e-3, "{n}");
        let om = hz(1.0e6);
        assert!(ideal_cooling_occupancy(om, 1e-9, -om).unwrap() < 1e-20);
        assert!(matches!(ideal_cooling_occupancy(om, k, 0.0), Err(Error::InvalidDetuning(_))));
    }

    #[test]
    fn cooling_limit_wide_cavity_hand_value() {
        // κ/2π = 34.2 MHz, Ω/2π = 1.167 MHz: ((Ω+Δ)² + κ²/4)/(−4ΔΩ) in MHz units.
        let (om, k) = (1.167f64, 34.2f64);
        let d = -k / (2.0 * 3f64.sqrt());
        let hand = ((om + d).powi(2) + k * k / 4.0) / (-4.0 * d * om);
        let v = ideal_cooling_occupancy(hz(om * 1e6), hz(k * 1e6), hz(d * 1e6)).unwrap();
        assert!((v / hand - 1.0).abs() < 1e-12);
        assert!((v - 7.989_439_480_915_516).abs() < 1e-9, "{v}");
    }

    #[test]
    fn zero_coupling_rates() {
        let p = SystemParams::reference_device(0.93, 0.31).with_g(0.0);
        let r = derived_rates(&p);
        assert_eq!((r.gamma_qba, r.c_q, r.eta_meas), (0.0, 0.0, 0.0));
    }
}
