use crate::{hz, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MechanicalMode {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub n_th: f64,
    /// Optical damping, informational. The chain generates its own.
    pub gamma_opt: f64,
    /// Coupling relative to the defect mode (defect = 1).
    pub coupling_weight: f64,
}

impl MechanicalMode {
    pub fn new(omega_m: f64, gamma_m: f64, n_th: f64) -> Self {
        Self { omega_m, gamma_m, n_th, gamma_opt: 0.0, coupling_weight: 1.0 }
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.coupling_weight = w;
        self
    }

    pub fn q(&self) -> f64 {
        self.omega_m / self.gamma_m
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.omega_m > 0.0
            && self.gamma_m > 0.0
            && self.n_th >= 0.0
            && self.coupling_weight >= 0.0
            && self.gamma_opt.is_finite();
        if !ok {
            return Err(Error::InvalidParams(format!("mechanical mode {self:?}")));
        }
        if self.q() <= 10.0 {
            return Err(Error::InvalidParams(format!("quality factor {} must exceed 10", self.q())));
        }
        Ok(())
    }
}

/// Cavity mode. `detuning` is Δ̄ = ω_laser − ω_cav, negative on the red side.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityMode {
    pub kappa: f64,
    pub kappa_out: f64,
    pub kappa_in: f64,
    pub kappa_loss: f64,
    pub detuning: f64,
}

impl CavityMode {
    pub fn new(kappa_out: f64, kappa_in: f64, kappa_loss: f64, detuning: f64) -> Result<Self> {
        let c = Self { kappa: kappa_out + kappa_in + kappa_loss, kappa_out, kappa_in, kappa_loss, detuning };
        c.validate()?;
        Ok(c)
    }

    /// Lossless single-port cavity: all decay through the detected output.
    pub fn single_port(kappa: f64, detuning: f64) -> Self {
        Self { kappa, kappa_out: kappa, kappa_in: 0.0, kappa_loss: 0.0, detuning }
    }

    pub fn magic_detuning(kappa: f64) -> f64 {
        -kappa / (2.0 * 3f64.sqrt())
    }

    pub fn at_magic(mut self) -> Self {
        self.detuning = Self::magic_detuning(self.kappa);
        self
    }

    /// Decay rates of the output, input and loss channels.
    pub fn channels(&self) -> [f64; 3] {
        [self.kappa_out, self.kappa_in, self.kappa_loss]
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.kappa_out + self.kappa_in + self.kappa_loss;
        let ok = self.kappa > 0.0
            && self.kappa_out >= 0.0
            && self.kappa_in >= 0.0
            && self.kappa_loss >= 0.0
            && self.detuning.is_finite()
            && ((parts - self.kappa) / self.kappa).abs() < 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("cavity {self:?}: channels must be nonnegative and sum to kappa")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingParams {
    pub g0: f64,
    pub g: f64,
    pub mean_field: f64,
}

impl CouplingParams {
    pub fn from_mean_field(g0: f64, mean_field: f64) -> Self {
        Self { g0, g: g0 * mean_field, mean_field }
    }

    /// Field-enhanced coupling fixed, ā inferred from g0.
    pub fn from_g(g0: f64, g: f64) -> Self {
        Self { g0, g, mean_field: if g0 > 0.0 { g / g0 } else { 0.0 } }
    }

    pub fn validate(&self) -> Result<()> {
        let consistent = (self.g - self.g0 * self.mean_field).abs() <= 1e-12 * self.g.abs().max(1e-300);
        if self.mean_field < 0.0 || self.g0 < 0.0 || !consistent {
            return Err(Error::InvalidParams(format!("coupling {self:?}: need g = g0·ā, ā ≥ 0")));
        }
        Ok(())
    }
}

/// Lorentzian line of cavity-frequency noise. `area` is the variance
/// contributed (rad²/s²), `center` and `width` (FWHM) in rad/s.
#[derive(Clone, Debug, PartialEq)]
pub struct Lorentzian {
    pub center: f64,
    pub width: f64,
    pub area: f64,
}

impl Lorentzian {
    pub fn eval(&self, x: f64) -> f64 {
        let hw = 0.5 * self.width;
        self.area * hw / (std::f64::consts::PI * ((x - self.center).powi(2) + hw * hw))
    }
}

/// Classical detuning noise S_ΔΔ, symmetric in ω.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetuningNoise {
    pub lines: Vec<Lorentzian>,
    pub white: f64,
}

impl DetuningNoise {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty() && self.white == 0.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ThermalCorrelator {
    #[default]
    Symmetrized,
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    /// Index 0 is the defect mode.
    pub modes: Vec<MechanicalMode>,
    pub cavity: CavityMode,
    pub coupling: CouplingParams,
    pub eta_d: f64,
    /// Homodyne quadrature angle in the chain's convention (rad).
    pub theta: f64,
    pub detuning_noise: DetuningNoise,
    pub thermal: ThermalCorrelator,
}

impl SystemParams {
    pub fn single_mode(mode: MechanicalMode, cavity: CavityMode, coupling: CouplingParams) -> Self {
        Self {
            modes: vec![mode],
            cavity,
            coupling,
            eta_d: 1.0,
            theta: 0.0,
            detuning_noise: DetuningNoise::default(),
            thermal: ThermalCorrelator::Symmetrized,
        }
    }

    pub fn defect(&self) -> &MechanicalMode {
        &self.modes[0]
    }

    pub fn g(&self) -> f64 {
        self.coupling.g
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.coupling = CouplingParams::from_g(self.coupling.g0, g);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta_d = eta;
        self
    }

    /// Operating point of the squeezing and state-estimation experiments:
    /// 1.167 MHz defect mode, κ/2π = 34.2 MHz at magic detuning,
    /// g set from the quantum cooperativity, mechanical-readout quadrature.
    pub fn reference_device(c_q: f64, eta_d: f64) -> Self {
        let mode = MechanicalMode::new(hz(1.167e6), hz(6.41e-3), 5.3e6);
        let cavity = CavityMode::single_port(hz(34.2e6), 0.0).at_magic();
        let mut p = Self::single_mode(mode, cavity, CouplingParams::from_g(hz(159.0), 0.0));
        p.eta_d = eta_d;
        let g = super::g_for_cooperativity(&p, c_q);
        p = p.with_g(g);
        let theta0 = super::quadrature_offset(&p.cavity);
        p.theta = theta0 - std::f64::consts::FRAC_PI_2;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidParams("at least one mechanical mode required".into()));
        }
        for m in &self.modes {
            m.validate()?;
        }
        self.cavity.validate()?;
        self.coupling.validate()?;
        if !(0.0..=1.0).contains(&self.eta_d) {
            return Err(Error::InvalidParams(format!("eta_d = {} outside [0, 1]", self.eta_d)));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidParams("theta must be finite".into()));
        }
        for l in &self.detuning_noise.lines {
            if !(l.width > 0.0 && l.area > 0.0) {
                return Err(Error::InvalidParams(format!("detuning-noise line {l:?}: width and area must be positive")));
            }
        }
        if self.detuning_noise.white < 0.0 {
            return Err(Error::InvalidParams("white detuning noise must be nonnegative".into()));
        }
        Ok(())
    }
}
