use super::{CavityMode, MechanicalMode, SystemParams};
use crate::C64;
use std::f64::consts::FRAC_1_SQRT_2;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// χ_m(ω) = Ω/(Ω² − ω² − iωΓ).
pub fn mech_susceptibility(mode: &MechanicalMode, omega: f64) -> C64 {
    chi_m(mode.omega_m, mode.gamma_m, omega)
}

/// Same with Γ_m + Γ_opt.
pub fn mech_susceptibility_damped(mode: &MechanicalMode, omega: f64) -> C64 {
    chi_m(mode.omega_m, mode.gamma_m + mode.gamma_opt, omega)
}

fn chi_m(om: f64, gamma: f64, w: f64) -> C64 {
    C64::new(om, 0.0) / C64::new(om * om - w * w, -w * gamma)
}

/// χ_c(ω) = 2^{-1/2}(κ/2 + iΔ − iω)^{-1} with Δ = −Δ̄ (cavity minus laser).
pub fn cavity_susceptibility(cav: &CavityMode, omega: f64) -> C64 {
    let delta = -cav.detuning;
    C64::new(FRAC_1_SQRT_2, 0.0) / C64::new(0.5 * cav.kappa, delta - omega)
}

/// Response functions at one Fourier frequency.
///
/// Channel index 0/1/2 = output (a), input (b), loss (c). The thermal-input
/// responses carry one entry per mechanical mode; `chi_m` is the
/// coupling-weighted sum Σ w_i² χ_i that closes the backaction loop.
#[derive(Clone, Debug)]
pub struct SusceptibilitySet {
    pub chi_m: C64,
    pub chi_c: C64,
    pub chi_c_x: C64,
    pub chi_c_y: C64,
    pub chi_mc_x: C64,
    pub chi_delta_x: C64,
    pub chi_pin_x: Vec<C64>,
    pub chi_ain_x: [C64; 3],
    pub chi_aindag_x: [C64; 3],
    pub chi_delta_y: C64,
    pub chi_pin_y: Vec<C64>,
    pub chi_ain_y: [C64; 3],
    pub chi_aindag_y: [C64; 3],
    pub chi_delta_theta: C64,
    pub chi_pin_theta: Vec<C64>,
    pub chi_ain_theta: [C64; 3],
    pub chi_aindag_theta: [C64; 3],
}

pub fn susceptibility_chain(p: &SystemParams, omega: f64) -> SusceptibilitySet {
    let g = p.coupling.g;
    let abar = p.coupling.mean_field;
    let i = C64::i();

    let chi_i: Vec<C64> = p.modes.iter().map(|m| mech_susceptibility(m, omega)).collect();
    let chi_m: C64 = p.modes.iter().zip(&chi_i).map(|(m, c)| c * m.coupling_weight.powi(2)).sum();

    let cc = cavity_susceptibility(&p.cavity, omega);
    let ccm = cavity_susceptibility(&p.cavity, -omega).conj();
    let chi_c_x = i * (ccm - cc);
    let chi_c_y = -(ccm + cc);
    let chi_mc_x = 1.0 / (1.0 + 2.0 * SQRT2 * g * g * chi_m * chi_c_x);

    // Displacement q responds to X through the backaction force −2g X.
    let y_from = |x: C64, direct: C64| direct + SQRT2 * g * chi_c_y * (-2.0 * g * chi_m * x);

    let chi_delta_x = abar * chi_c_x * chi_mc_x;
    let chi_delta_y = y_from(chi_delta_x, abar * chi_c_y);

    let mut chi_pin_x = Vec::with_capacity(p.modes.len());
    let mut chi_pin_y = Vec::with_capacity(p.modes.len());
    for (m, c) in p.modes.iter().zip(&chi_i) {
        let q = m.coupling_weight * c * chi_mc_x;
        chi_pin_x.push(SQRT2 * g * chi_c_x * q);
        chi_pin_y.push(SQRT2 * g * chi_c_y * q);
    }

    let ks = p.cavity.channels();
    let mut chi_ain_x = [C64::default(); 3];
    let mut chi_aindag_x = [C64::default(); 3];
    let mut chi_ain_y = [C64::default(); 3];
    let mut chi_aindag_y = [C64::default(); 3];
    for k in 0..3 {
        let sk = ks[k].sqrt();
        chi_ain_x[k] = sk * cc * chi_mc_x;
        chi_aindag_x[k] = sk * ccm * chi_mc_x;
        chi_ain_y[k] = y_from(chi_ain_x[k], -i * sk * cc);
        chi_aindag_y[k] = y_from(chi_aindag_x[k], i * sk * ccm);
    }

    let (s, c) = p.theta.sin_cos();
    let sa = ks[0].sqrt();
    let proj = |x: C64, y: C64| -sa * (x * c + y * s);
    let chi_delta_theta = proj(chi_delta_x, chi_delta_y);
    let chi_pin_theta = chi_pin_x.iter().zip(&chi_pin_y).map(|(x, y)| proj(*x, *y)).collect();
    let mut chi_ain_theta = [C64::default(); 3];
    let mut chi_aindag_theta = [C64::default(); 3];
    for k in 0..3 {
        chi_ain_theta[k] = proj(chi_ain_x[k], chi_ain_y[k]);
        chi_aindag_theta[k] = proj(chi_aindag_x[k], chi_aindag_y[k]);
    }
    chi_ain_theta[0] += FRAC_1_SQRT_2 * C64::from_polar(1.0, -p.theta);
    chi_aindag_theta[0] += FRAC_1_SQRT_2 * C64::from_polar(1.0, p.theta);

    SusceptibilitySet {
        chi_m,
        chi_c: cc,
        chi_c_x,
        chi_c_y,
        chi_mc_x,
        chi_delta_x,
        chi_pin_x,
        chi_ain_x,
        chi_aindag_x,
        chi_delta_y,
        chi_pin_y,
        chi_ain_y,
        chi_aindag_y,
        chi_delta_theta,
        chi_pin_theta,
        chi_ain_theta,
        chi_aindag_theta,
    }
}
