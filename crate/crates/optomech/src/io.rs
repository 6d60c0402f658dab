//! File formats: JSON configuration (Hz and degrees at the boundary),
//! raw little-endian f64 records with a JSON sidecar header, and CSV
//! tables and PSDs.
//!
//! A record `stem` is stored as `stem.f64` (frames of interleaved channels)
//! and `stem.json`:
//!
//! ```json
//! {"version": 1, "sample_rate_hz": 1e6, "length": 1000,
//!  "channels": ["i_x", "i_y"], "units": "shot^1/2 Hz^1/2",
//!  "demod_frequency_hz": 1.149e6}
//! ```

use crate::dsp::{FilterKind, FilterSpec, Psd};
use crate::model_core::{
    g_for_cooperativity, quadrature_offset, CavityMode, CouplingParams, DetuningNoise, Lorentzian, MechanicalMode, SystemParams,
    ThermalCorrelator,
};
use crate::simulator::{CalibrationTone, MeasurementRecord, Truth};
use crate::{hz, Error, Result, TAU};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;
pub const HEADER_VERSION: u32 = 1;
pub const RECORD_UNITS: &str = "shot^1/2 Hz^1/2";

fn json_error(what: &str, e: serde_json::Error) -> Error {
    Error::Config(format!("{what}: line {} column {}: {e}", e.line(), e.column()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub n_th: f64,
    #[serde(default = "one")]
    pub coupling_weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetuningConfig {
    Hz(f64),
    /// Only "magic": −κ/(2√3).
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    pub kappa_out: f64,
    #[serde(default)]
    pub kappa_in: f64,
    #[serde(default)]
    pub kappa_loss: f64,
    pub detuning: DetuningConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub g0: f64,
    /// Field-enhanced coupling; exactly one of `g`, `mean_field`, `c_q`.
    pub g: Option<f64>,
    pub mean_field: Option<f64>,
    pub c_q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzianConfig {
    pub center: f64,
    pub width: f64,
    /// Variance contributed by the line, Hz².
    pub area: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetuningNoiseConfig {
    #[serde(default)]
    pub lines: Vec<LorentzianConfig>,
    /// Hz²/Hz.
    #[serde(default)]
    pub white: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Index 0 is the defect mode.
    pub modes: Vec<ModeConfig>,
    pub cavity: CavityConfig,
    pub coupling: CouplingConfig,
    pub eta_d: f64,
    /// Degrees; omitted means the mechanical-readout quadrature.
    pub theta: Option<f64>,
    #[serde(default)]
    pub detuning_noise: DetuningNoiseConfig,
    #[serde(default)]
    pub asymmetric_thermal: bool,
    /// Metadata only.
    pub x_zpf: Option<f64>,
    pub effective_mass: Option<f64>,
}

impl SystemConfig {
    pub fn to_params(&self) -> Result<SystemParams> {
        if self.modes.is_empty() {
            return Err(Error::Config("system.modes must list at least the defect mode".into()));
        }
        let modes: Vec<MechanicalMode> = self
            .modes
            .iter()
            .map(|m| MechanicalMode::new(hz(m.omega_m), hz(m.gamma_m), m.n_th).with_weight(m.coupling_weight))
            .collect();
        let c = &self.cavity;
        let kappa = hz(c.kappa_out + c.kappa_in + c.kappa_loss);
        let detuning = match &c.detuning {
            DetuningConfig::Hz(d) => hz(*d),
            DetuningConfig::Named(s) if s == "magic" => CavityMode::magic_detuning(kappa),
            DetuningConfig::Named(s) => return Err(Error::Config(format!("system.cavity.detuning: unknown value \"{s}\""))),
        };
        let cavity = CavityMode::new(hz(c.kappa_out), hz(c.kappa_in), hz(c.kappa_loss), detuning)?;
        let k = &self.coupling;
        let given = [k.g.is_some(), k.mean_field.is_some(), k.c_q.is_some()].iter().filter(|b| **b).count();
        if given != 1 {
            return Err(Error::Config("system.coupling needs exactly one of g, mean_field, c_q".into()));
        }
        let mut p = SystemParams::single_mode(modes[0].clone(), cavity, CouplingParams::from_g(hz(k.g0), 0.0));
        p.modes = modes;
        p.eta_d = self.eta_d;
        p.thermal = if self.asymmetric_thermal { ThermalCorrelator::Asymmetric } else { ThermalCorrelator::Symmetrized };
        p.detuning_noise = DetuningNoise {
            lines: self
                .detuning_noise
                .lines
                .iter()
                .map(|l| Lorentzian { center: hz(l.center), width: hz(l.width), area: TAU * TAU * l.area })
                .collect(),
            white: TAU * self.detuning_noise.white,
        };
        p.coupling = match (k.g, k.mean_field, k.c_q) {
            (Some(g), _, _) => CouplingParams::from_g(hz(k.g0), hz(g)),
            (_, Some(a), _) => CouplingParams::from_mean_field(hz(k.g0), a),
            (_, _, Some(c_q)) => CouplingParams::from_g(hz(k.g0), g_for_cooperativity(&p, c_q)),
            _ => unreachable!(),
        };
        p.theta = match self.theta {
            Some(deg) => deg.to_radians(),
            None => quadrature_offset(&p.cavity) - std::f64::consts::FRAC_PI_2,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub frequency: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Seconds.
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_truth: bool,
    #[serde(default = "one_usize")]
    pub truth_stride: usize,
    #[serde(default)]
    pub tones: Vec<ToneConfig>,
    /// Demodulation frequency (Hz); defaults to the spring-shifted defect frequency.
    pub demod_frequency: Option<f64>,
}

fn one_usize() -> usize {
    1
}

impl SimulateConfig {
    pub fn tones(&self) -> Vec<CalibrationTone> {
        self.tones.iter().map(|t| CalibrationTone { frequency_hz: t.frequency, depth: t.depth }).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Record stem (without extension), relative to the working directory.
    pub record: PathBuf,
    /// Seconds.
    pub burn_in: f64,
    pub spacing: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_oversample")]
    pub cov_oversample: usize,
}

fn default_batches() -> usize {
    20
}

fn default_oversample() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum FreeParamConfig {
    G,
    EtaD,
    Theta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// PSD CSV path, relative to the working directory: two-sided, shot-noise
    /// units, offsets from the demodulation frequency.
    pub psd: PathBuf,
    pub demod_frequency: f64,
    pub free: Vec<FreeParamConfig>,
    /// Offset band (Hz).
    pub band: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotNoiseConfig {
    /// (voltage, power) pairs.
    pub points: Vec<[f64; 2]>,
    pub operating_voltage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G0Config {
    pub record: PathBuf,
    pub tones: Vec<ToneConfig>,
    /// Offset band (Hz) containing the mechanical peak.
    pub mech_band: [f64; 2],
    pub n_th: f64,
    /// Hz.
    pub gamma_m: f64,
    #[serde(default)]
    pub c_q: f64,
    #[serde(default = "default_averages")]
    pub averages: usize,
}

fn default_averages() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeatConfig {
    /// Single-channel raw trace stem.
    pub trace: PathBuf,
    pub beat_frequency: f64,
    #[serde(default = "one_usize")]
    pub decimation: usize,
    #[serde(default = "default_segment")]
    pub segment: usize,
}

fn default_segment() -> usize {
    1 << 16
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub shot_noise: Option<ShotNoiseConfig>,
    pub g0: Option<G0Config>,
    pub beat: Option<BeatConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SpectrumKindConfig {
    Detected,
    Mechanical,
    /// Minimum detected spectrum over the band against θ.
    SqueezingVsTheta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraConfig {
    pub kind: SpectrumKindConfig,
    /// Frequency bands [lo, hi] in Hz, each sampled at `points` points.
    pub bands: Vec<[f64; 2]>,
    #[serde(default = "default_points")]
    pub points: usize,
    /// [lo, hi] degrees for squeezing_vs_theta.
    pub theta_range: Option<[f64; 2]>,
    #[serde(default = "default_points")]
    pub theta_points: usize,
    /// LO visibility; when set, η_d follows the homodyne efficiency at each
    /// θ, normalized to `system.eta_d` at the readout quadrature.
    pub visibility: Option<f64>,
}

fn default_points() -> usize {
    401
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStageConfig {
    pub kind: String,
    pub order: Option<usize>,
    pub f_lo: Option<f64>,
    pub f_hi: Option<f64>,
    pub f_c: Option<f64>,
    pub center: Option<f64>,
    pub q: Option<f64>,
}

impl FilterStageConfig {
    pub fn to_kind(&self) -> Result<FilterKind> {
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Error::Config(format!("filter stage \"{}\" needs {k}", self.kind)));
        let order = || self.order.ok_or_else(|| Error::Config(format!("filter stage \"{}\" needs order", self.kind)));
        match self.kind.as_str() {
            "bandpass" => Ok(FilterKind::ButterworthBandpass { order: order()?, f_lo: need(self.f_lo, "f_lo")?, f_hi: need(self.f_hi, "f_hi")? }),
            "lowpass" => Ok(FilterKind::ButterworthLowpass { order: order()?, f_c: need(self.f_c, "f_c")? }),
            "notch" => Ok(FilterKind::Notch { center: need(self.center, "center")?, q: self.q.unwrap_or(crate::dsp::DEFAULT_NOTCH_Q) }),
            k => Err(Error::Config(format!("unknown filter kind \"{k}\""))),
        }
    }
}

pub fn filter_spec(stages: &[FilterStageConfig], zero_phase: bool) -> Result<FilterSpec> {
    Ok(FilterSpec { cascade: stages.iter().map(|s| s.to_kind()).collect::<Result<_>>()?, zero_phase })
}

/// Top-level configuration file; each command reads its own section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub system: SystemConfig,
    pub simulate: Option<SimulateConfig>,
    pub estimate: Option<EstimateConfig>,
    pub fit: Option<FitConfig>,
    pub calibrate: Option<CalibrateConfig>,
    pub spectra: Option<SpectraConfig>,
}

/// Parses and schema-checks a configuration; errors carry line and column.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| json_error("config", e))?;
    if cfg.version != CONFIG_VERSION {
        return Err(Error::Config(format!("config version {} unsupported (expected {CONFIG_VERSION})", cfg.version)));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub version: u32,
    pub sample_rate_hz: f64,
    /// Frames (samples per channel).
    pub length: usize,
    pub channels: Vec<String>,
    pub units: String,
    #[serde(default)]
    pub demod_frequency_hz: Option<f64>,
}

impl RawHeader {
    pub fn validate(&self) -> Result<()> {
        if self.version != HEADER_VERSION {
            return Err(Error::Format(format!("header version {} unsupported", self.version)));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Format(format!("sample rate {} Hz", self.sample_rate_hz)));
        }
        if self.channels.is_empty() {
            return Err(Error::Format("header lists no channels".into()));
        }
        if self.length.checked_mul(self.channels.len()).and_then(|n| n.checked_mul(8)).is_none() {
            return Err(Error::Format("record length overflows".into()));
        }
        Ok(())
    }

    pub fn byte_len(&self) -> usize {
        self.length * self.channels.len() * 8
    }
}

pub fn parse_header(text: &str) -> Result<RawHeader> {
    let h: RawHeader = serde_json::from_str(text).map_err(|e| Error::Format(format!("header: line {} column {}: {e}", e.line(), e.column())))?;
    h.validate()?;
    Ok(h)
}

pub fn header_to_string(h: &RawHeader) -> String {
    serde_json::to_string_pretty(h).expect("header serializes") + "\n"
}

/// Interleaved little-endian frames from per-channel columns.
pub fn encode_frames(channels: &[&[f64]]) -> Result<Vec<u8>> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::Format("channels differ in length".into()));
    }
    let mut out = Vec::with_capacity(n * channels.len() * 8);
    for k in 0..n {
        for c in channels {
            out.extend_from_slice(&c[k].to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits interleaved frames into per-channel columns, checking the size
/// against the header.
pub fn decode_frames(bytes: &[u8], header: &RawHeader) -> Result<Vec<Vec<f64>>> {
    header.validate()?;
    if bytes.len() != header.byte_len() {
        return Err(Error::Format(format!("data has {} bytes, header implies {}", bytes.len(), header.byte_len())));
    }
    let m = header.channels.len();
    let mut cols = vec![Vec::with_capacity(header.length); m];
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        cols[k % m].push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
    }
    Ok(cols)
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f64"), stem.with_extension("json"))
}

pub fn write_raw(stem: &Path, header: &RawHeader, channels: &[&[f64]]) -> Result<()> {
    header.validate()?;
    if channels.len() != header.channels.len() || channels.iter().any(|c| c.len() != header.length) {
        return Err(Error::Format("channel data does not match the header".into()));
    }
    let (data, side) = stem_paths(stem);
    std::fs::write(&data, encode_frames(channels)?)?;
    std::fs::write(&side, header_to_string(header))?;
    Ok(())
}

pub fn read_raw(stem: &Path) -> Result<(RawHeader, Vec<Vec<f64>>)> {
    let (data, side) = stem_paths(stem);
    let header = parse_header(&std::fs::read_to_string(&side)?)?;
    let bytes = std::fs::read(&data)?;
    let cols = decode_frames(&bytes, &header)?;
    Ok((header, cols))
}

/// Writes `stem` (i_x, i_y) and, when present, `stem_truth` with the
/// sampled state (sample rate divided by the truth stride).
pub fn write_record(stem: &Path, rec: &MeasurementRecord) -> Result<()> {
    let header = RawHeader {
        version: HEADER_VERSION,
        sample_rate_hz: rec.sample_rate,
        length: rec.len(),
        channels: vec!["i_x".into(), "i_y".into()],
        units: RECORD_UNITS.into(),
        demod_frequency_hz: Some(rec.demod_frequency),
    };
    write_raw(stem, &header, &[&rec.i_x, &rec.i_y])?;
    if let Some(t) = &rec.truth {
        let cols: Vec<Vec<f64>> = (0..t.dim).map(|j| (0..t.len()).map(|k| t.row(k)[j]).collect()).collect();
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let h = RawHeader {
            version: HEADER_VERSION,
            sample_rate_hz: rec.sample_rate / t.stride as f64,
            length: t.len(),
            channels: (0..t.dim / 2).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect(),
            units: "quadrature".into(),
            demod_frequency_hz: Some(rec.demod_frequency),
        };
        write_raw(&truth_stem(stem), &h, &refs)?;
    }
    Ok(())
}

pub fn truth_stem(stem: &Path) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push("_truth");
    PathBuf::from(s)
}

pub fn read_record(stem: &Path) -> Result<MeasurementRecord> {
    let (h, mut cols) = read_raw(stem)?;
    if h.channels != ["i_x", "i_y"] {
        return Err(Error::Format(format!("record channels {:?}, expected [i_x, i_y]", h.channels)));
    }
    let i_y = cols.pop().expect("two channels");
    let i_x = cols.pop().expect("two channels");
    let truth = match read_raw(&truth_stem(stem)) {
        Ok((th, tc)) => {
            let stride = (h.sample_rate_hz / th.sample_rate_hz).round() as usize;
            let dim = tc.len();
            let values = (0..th.length).flat_map(|k| tc.iter().map(move |c| c[k])).collect();
            Some(Truth { stride, dim, values })
        }
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    Ok(MeasurementRecord { i_x, i_y, sample_rate: h.sample_rate_hz, demod_frequency: h.demod_frequency_hz.unwrap_or(0.0), truth })
}

/// Comma-separated table with one header row. Values use the shortest
/// round-trip representation, so output is deterministic.
pub fn csv_table(headers: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = headers.join(",");
    s.push('\n');
    for r in rows {
        for (k, v) in r.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

/// Two columns, header `frequency_hz,psd[<units>]`.
pub fn psd_to_csv(psd: &Psd, units: &str) -> String {
    let col = format!("psd[{units}]");
    csv_table(&["frequency_hz", &col], psd.freqs.iter().zip(&psd.values).map(|(f, v)| vec![*f, *v]))
}

/// Parses a PSD CSV; returns the PSD and its unit string. Frequencies must
/// be strictly increasing and uniformly spaced to 1e-6 relative.
pub fn parse_psd_csv(text: &str) -> Result<(Psd, String)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let head = rdr.headers().map_err(|e| Error::Format(format!("PSD header: {e}")))?.clone();
    let units = match (head.len(), head.get(0), head.get(1)) {
        (2, Some("frequency_hz"), Some(p)) if p.starts_with("psd[") && p.ends_with(']') => p[4..p.len() - 1].to_string(),
        _ => return Err(Error::Format(format!("PSD header {:?} is not frequency_hz,psd[<units>]", head.iter().collect::<Vec<_>>()))),
    };
    let (mut freqs, mut values) = (Vec::new(), Vec::new());
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Format(format!("PSD row: {e}")))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<f64> {
            let t = row.get(k).unwrap_or("");
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Format(format!("line {line}: bad number \"{t}\""))),
            }
        };
        freqs.push(field(0)?);
        values.push(field(1)?);
    }
    if freqs.len() < 2 {
        return Err(Error::Format("PSD needs at least two rows".into()));
    }
    let df = freqs[1] - freqs[0];
    let scale = freqs.iter().fold(df.abs(), |a, f| a.max(f.abs()));
    if !(df > 0.0) || freqs.windows(2).any(|w| ((w[1] - w[0]) - df).abs() > 1e-6 * df.max(1e-12 * scale)) {
        return Err(Error::Format("PSD frequencies must be increasing and uniformly spaced".into()));
    }
    let two_sided = freqs[0] < 0.0;
    Ok((Psd { freqs, values, averages: 0, two_sided }, units))
}
