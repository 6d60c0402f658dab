//! Closed-form membrane design helpers.

#[derive(Clone, Debug, PartialEq)]
pub struct MembraneInputs {
    /// Film density (kg/m³) and thickness (m).
    pub rho: f64,
    pub h: f64,
    /// Pillar density, height, diameter and triangular-lattice constant.
    pub rho_pil: f64,
    pub h_pil: f64,
    pub d_pil: f64,
    pub a_pil: f64,
    /// Young's modulus (Pa), Poisson ratio, deposition stress (Pa).
    pub youngs: f64,
    pub poisson: f64,
    pub stress: f64,
    /// Lowest density in the modulated film (kg/m³), angular frequency, Q_int.
    pub rho_min: f64,
    pub omega: f64,
    pub q_int: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembraneDesign {
    pub rho_eff: f64,
    pub d_q_clampless: f64,
    pub q_total: f64,
    pub k: f64,
}

pub fn membrane_design_helpers(m: &MembraneInputs) -> MembraneDesign {
    let fill = std::f64::consts::PI / (2.0 * 3f64.sqrt()) * (m.d_pil / m.a_pil).powi(2);
    let rho_eff = m.rho * (1.0 + fill * m.rho_pil * m.h_pil / (m.rho * m.h));
    let d_q = 12.0 * (1.0 - m.poisson.powi(2)) * m.stress.powi(2)
        / (m.youngs * m.rho_min * m.h.powi(2) * m.omega.powi(2));
    MembraneDesign { rho_eff, d_q_clampless: d_q, q_total: d_q * m.q_int, k: m.omega * (rho_eff / m.stress).sqrt() }
}
