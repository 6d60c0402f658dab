//! Physical parameters, the Langevin susceptibility chain, analytic noise
//! spectra and the rates derived from them.

mod chain;
mod membrane;
mod params;
mod rates;
mod spectra;

pub use chain::{cavity_susceptibility, mech_susceptibility, mech_susceptibility_damped, susceptibility_chain, SusceptibilitySet};
pub use membrane::{membrane_design_helpers, MembraneDesign, MembraneInputs};
pub use params::{
    CavityMode, CouplingParams, DetuningNoise, Lorentzian, MechanicalMode, SystemParams, ThermalCorrelator,
};
pub use rates::{
    derived_rates, force_spectrum, g_for_cooperativity, gamma_opt, gamma_qba, gamma_qba_bad_cavity,
    ideal_cooling_occupancy, mode_rates, quadrature_offset, readout_correlation, spring_shift, DerivedRates, ModeRates,
};
pub use spectra::{
    detected_spectrum, detected_spectrum_two_sided, iq_channel_spectrum, mechanical_spectrum,
    mechanical_spectrum_two_sided, occupancy_from_spectrum, spurious_detuning_noise, thermal_input_spectrum,
    Occupancy, SpectrumKind, SpectrumModel,
};
