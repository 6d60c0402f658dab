//! Signal conditioning and calibration: Butterworth and notch filters as
//! second-order sections, IQ demodulation, Welch PSDs, shot-noise
//! calibration, g0 from phase-modulation tones and beat-note phase noise.

use crate::fitting::{levenberg_marquardt, LmOptions};
use crate::{Error, Result, C64, TAU};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

/// One biquad, a[0] = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    pub fn response(&self, z: C64) -> C64 {
        let zi = 1.0 / z;
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }

    /// Both poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        let (a1, a2) = (self.a[1], self.a[2]);
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }

    /// Transposed direct form II, in place.
    pub fn apply(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let y = b0 * *v + s1;
            s1 = b1 * *v - a1 * y + s2;
            s2 = b2 * *v - a2 * y;
            *v = y;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FilterKind {
    ButterworthBandpass { order: usize, f_lo: f64, f_hi: f64 },
    ButterworthLowpass { order: usize, f_c: f64 },
    Notch { center: f64, q: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub cascade: Vec<FilterKind>,
    /// Forward–backward application; otherwise one pass shifted by the
    /// group delay at the first stage's center frequency.
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { cascade: Vec::new(), zero_phase: true }
    }
}

pub const DEFAULT_NOTCH_Q: f64 = 50.0;

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        let nyq = 0.5 * fs;
        for k in &self.cascade {
            let ok = match *k {
                FilterKind::ButterworthBandpass { order, f_lo, f_hi } => order > 0 && 0.0 < f_lo && f_lo < f_hi && f_hi < nyq,
                FilterKind::ButterworthLowpass { order, f_c } => order > 0 && 0.0 < f_c && f_c < nyq,
                FilterKind::Notch { center, q } => 0.0 < center && center < nyq && q > 0.0,
            };
            if !ok {
                return Err(Error::InvalidParams(format!("{k:?} invalid at fs = {fs} Hz")));
            }
        }
        Ok(())
    }

    /// Realized sections of the whole cascade.
    pub fn sections(&self, fs: f64) -> Result<Vec<Sos>> {
        self.validate(fs)?;
        let mut out = Vec::new();
        for k in &self.cascade {
            out.extend(match *k {
                FilterKind::ButterworthBandpass { order, f_lo, f_hi } => butter_bandpass(order, f_lo, f_hi, fs),
                FilterKind::ButterworthLowpass { order, f_c } => butter_lowpass(order, f_c, fs),
                FilterKind::Notch { center, q } => vec![notch(center, q, fs)],
            });
        }
        for s in &out {
            if !s.is_stable() {
                let r = pole_radius(s);
                return Err(Error::UnstableFilter(r));
            }
        }
        Ok(out)
    }
}

fn pole_radius(s: &Sos) -> f64 {
    let (a1, a2) = (s.a[1], s.a[2]);
    let disc = C64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
    let r1 = (-a1 + disc) / 2.0;
    let r2 = (-a1 - disc) / 2.0;
    r1.norm().max(r2.norm())
}

pub fn cascade_response(sections: &[Sos], f: f64, fs: f64) -> C64 {
    let z = C64::from_polar(1.0, TAU * f / fs);
    sections.iter().fold(C64::new(1.0, 0.0), |h, s| h * s.response(z))
}

/// Left-half-plane poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<C64> {
    (0..order)
        .map(|k| C64::from_polar(1.0, std::f64::consts::PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
        .collect()
}

fn bilinear(s: C64, fs: f64) -> C64 {
    (2.0 * fs + s) / (2.0 * fs - s)
}

/// Groups digital poles into conjugate pairs (real poles pairwise) and
/// attaches the given zero polynomial to each section.
fn pair_sections(poles: &[C64], zeros: &[[f64; 3]]) -> Vec<Sos> {
    let mut complex: Vec<C64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    real.sort_by(f64::total_cmp);
    let mut dens: Vec<[f64; 3]> = complex.iter().map(|p| [1.0, -2.0 * p.re, p.norm_sqr()]).collect();
    for pair in real.chunks(2) {
        dens.push(match pair {
            [a, b] => [1.0, -(a + b), a * b],
            [a] => [1.0, -a, 0.0],
            _ => unreachable!(),
        });
    }
    dens.iter().zip(zeros).map(|(a, b)| Sos { b: *b, a: *a }).collect()
}

fn normalize(mut s: Vec<Sos>, f: f64, fs: f64) -> Vec<Sos> {
    let g = cascade_response(&s, f, fs).norm();
    if let Some(first) = s.first_mut() {
        first.b.iter_mut().for_each(|v| *v /= g);
    }
    s
}

/// Digital Butterworth bandpass by prewarped bilinear transform; `order`
/// sections, unit gain at the geometric band center.
pub fn butter_bandpass(order: usize, f_lo: f64, f_hi: f64, fs: f64) -> Vec<Sos> {
    let w = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (wl, wh) = (w(f_lo), w(f_hi));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let h = p * bw / 2.0;
        let r = (h * h - w0 * w0).sqrt();
        poles.push(bilinear(h + r, fs));
        poles.push(bilinear(h - r, fs));
    }
    let sections = pair_sections(&poles, &vec![[1.0, 0.0, -1.0]; order]);
    let fc = fs / std::f64::consts::PI * (w0 / (2.0 * fs)).atan();
    normalize(sections, fc, fs)
}

/// Digital Butterworth lowpass, unit DC gain.
pub fn butter_lowpass(order: usize, f_c: f64, fs: f64) -> Vec<Sos> {
    let wc = 2.0 * fs * (std::f64::consts::PI * f_c / fs).tan();
    let poles: Vec<C64> = prototype_poles(order).iter().map(|p| bilinear(p * wc, fs)).collect();
    let mut zeros = vec![[1.0, 2.0, 1.0]; order / 2];
    if order % 2 == 1 {
        zeros.push([1.0, 1.0, 0.0]);
    }
    normalize(pair_sections(&poles, &zeros), 0.0, fs)
}

/// Second-order notch, −3 dB width center/q.
pub fn notch(center: f64, q: f64, fs: f64) -> Sos {
    let w0 = TAU * center / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    Sos { b: [1.0 / a0, c / a0, 1.0 / a0], a: [1.0, c / a0, (1.0 - alpha) / a0] }
}

fn run_sections(sections: &[Sos], x: &mut [f64]) {
    for s in sections {
        s.apply(x);
    }
}

/// Group delay −dφ/dω of the cascade at f, in samples.
pub fn group_delay(sections: &[Sos], f: f64, fs: f64) -> f64 {
    let df = 1e-6 * fs;
    let p1 = cascade_response(sections, f - df, fs);
    let p2 = cascade_response(sections, f + df, fs);
    -(p2 / p1).arg() / (TAU * 2.0 * df / fs)
}

fn stage_center(k: &FilterKind) -> f64 {
    match *k {
        FilterKind::ButterworthBandpass { f_lo, f_hi, .. } => (f_lo * f_hi).sqrt(),
        FilterKind::ButterworthLowpass { .. } => 0.0,
        FilterKind::Notch { .. } => 0.0,
    }
}

/// Applies the cascade. Zero-phase mode pads both ends with odd
/// reflections before the forward and backward passes.
pub fn apply_filter_chain(x: &[f64], fs: f64, spec: &FilterSpec) -> Result<Vec<f64>> {
    let sections = spec.sections(fs)?;
    if sections.is_empty() {
        return Ok(x.to_vec());
    }
    if spec.zero_phase {
        Ok(filtfilt(&sections, x))
    } else {
        let mut y = x.to_vec();
        run_sections(&sections, &mut y);
        let d = group_delay(&sections, spec.cascade.first().map(stage_center).unwrap_or(0.0), fs).round().max(0.0) as usize;
        let d = d.min(y.len());
        let mut out = y[d..].to_vec();
        out.resize(y.len(), 0.0);
        Ok(out)
    }
}

pub fn filtfilt(sections: &[Sos], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (6 * sections.len() + 3).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    run_sections(sections, &mut ext);
    ext.reverse();
    run_sections(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[derive(Clone, Debug, PartialEq)]
pub struct IqRecord {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub sample_rate: f64,
}

/// z = LP[2x·e^{−iωt}], decimated; a real tone A cos(ωt + φ) at the
/// demodulation frequency gives z = A e^{iφ}. The low-pass is an 8th-order
/// zero-phase Butterworth at 0.4 of the output rate.
pub fn iq_demodulate(x: &[f64], fs: f64, f_demod: f64, decimation: usize) -> Result<IqRecord> {
    if !(f_demod > 0.0 && f_demod < 0.5 * fs) || decimation == 0 {
        return Err(Error::InvalidParams(format!("demodulation at {f_demod} Hz needs 0 < f < fs/2 and decimation ≥ 1")));
    }
    let w = TAU * f_demod / fs;
    let mut i: Vec<f64> = x.iter().enumerate().map(|(k, v)| 2.0 * v * (w * k as f64).cos()).collect();
    let mut q: Vec<f64> = x.iter().enumerate().map(|(k, v)| -2.0 * v * (w * k as f64).sin()).collect();
    let out_rate = fs / decimation as f64;
    let lp = butter_lowpass(8, (0.4 * out_rate).min(0.45 * fs), fs);
    i = filtfilt(&lp, &i);
    q = filtfilt(&lp, &q);
    Ok(IqRecord {
        i: i.into_iter().step_by(decimation).collect(),
        q: q.into_iter().step_by(decimation).collect(),
        sample_rate: out_rate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchConfig {
    pub segment: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { segment: 1 << 20, overlap: 0.5, window: Window::Hann }
    }
}

impl WelchConfig {
    /// Segment length giving `averages` half-overlapping segments.
    pub fn with_averages(len: usize, averages: usize) -> Self {
        let seg = (2 * len / (averages + 1)).max(2);
        Self { segment: seg, overlap: 0.5, window: Window::Hann }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    /// Hz, ascending.
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub averages: usize,
    pub two_sided: bool,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        if self.freqs.len() > 1 { self.freqs[1] - self.freqs[0] } else { 0.0 }
    }

    /// ∫ PSD df by the rectangle rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution()
    }

    /// Index of the bin nearest to f.
    pub fn bin(&self, f: f64) -> usize {
        let r = self.resolution();
        (((f - self.freqs[0]) / r).round().max(0.0) as usize).min(self.freqs.len() - 1)
    }
}

fn window(kind: Window, n: usize) -> Vec<f64> {
    match kind {
        // Periodic Hann.
        Window::Hann => (0..n).map(|k| 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos()).collect(),
        Window::Rectangular => vec![1.0; n],
    }
}

fn welch_core(x: &[C64], fs: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, usize)> {
    let n = cfg.segment;
    if n < 2 || n > x.len() || !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::InvalidParams(format!("Welch segment {n} for {} samples, overlap {}", x.len(), cfg.overlap)));
    }
    let step = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let starts: Vec<usize> = (0..=x.len() - n).step_by(step).collect();
    let w = window(cfg.window, n);
    let u: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let acc = starts
        .par_iter()
        .fold(
            || vec![0.0; n],
            |mut acc, &s| {
                let mut buf: Vec<C64> = x[s..s + n].iter().zip(&w).map(|(v, w)| v * *w).collect();
                fft.process(&mut buf);
                acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b.norm_sqr());
                acc
            },
        )
        .reduce(|| vec![0.0; n], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let scale = 1.0 / (fs * u * starts.len() as f64);
    Ok((acc.iter().map(|v| v * scale).collect(), starts.len()))
}

/// Single-sided PSD of a real record: white noise of variance σ² at rate
/// f_s gives σ²/(f_s/2).
pub fn welch_psd(x: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Psd> {
    let z: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    let (p, k) = welch_core(&z, fs, cfg)?;
    let n = cfg.segment;
    let half = n / 2;
    let mut values: Vec<f64> = p[..=half].to_vec();
    for (j, v) in values.iter_mut().enumerate() {
        if j != 0 && !(n % 2 == 0 && j == half) {
            *v *= 2.0;
        }
    }
    let freqs = (0..=half).map(|j| j as f64 * fs / n as f64).collect();
    Ok(Psd { freqs, values, averages: k, two_sided: false })
}

/// Two-sided PSD of a complex record on ascending frequencies
/// [−f_s/2, f_s/2): white noise with E|z|² = σ² gives σ²/f_s.
pub fn welch_psd_complex(i: &[f64], q: &[f64], fs: f64, cfg: &WelchConfig) -> Result<Psd> {
    if i.len() != q.len() {
        return Err(Error::InvalidParams("I and Q lengths differ".into()));
    }
    let z: Vec<C64> = i.iter().zip(q).map(|(&a, &b)| C64::new(a, b)).collect();
    let (p, k) = welch_core(&z, fs, cfg)?;
    let n = cfg.segment;
    let neg = n / 2;
    let mut freqs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let b = (j + n - neg) % n;
        let kk = if b >= n.div_ceil(2) { b as f64 - n as f64 } else { b as f64 };
        freqs.push(kk * fs / n as f64);
        values.push(p[b]);
    }
    Ok(Psd { freqs, values, averages: k, two_sided: true })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotNoiseCal {
    pub linear_coeff: f64,
    pub quadratic_coeff: f64,
    /// Covariance of (a, b).
    pub covariance: [[f64; 2]; 2],
    pub operating_voltage: f64,
    pub classical_fraction: f64,
    pub classical_fraction_stderr: f64,
}

impl ShotNoiseCal {
    /// Classical-noise-free reference a·V_op.
    pub fn shot_noise_reference(&self) -> f64 {
        self.linear_coeff * self.operating_voltage
    }
}

fn weighted_poly_fit(points: &[(f64, f64)], powers: &[i32]) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let m = points.len();
    let k = powers.len();
    let mut a = DMatrix::zeros(m, k);
    let mut y = DVector::zeros(m);
    for (r, &(v, p)) in points.iter().enumerate() {
        let w = 1.0 / p.abs().max(1e-300);
        for (c, &e) in powers.iter().enumerate() {
            a[(r, c)] = w * v.powi(e);
        }
        y[r] = w * p;
    }
    let ata = a.transpose() * &a;
    let inv = ata.clone().try_inverse().ok_or_else(|| Error::IllConditioned("singular normal matrix".into()))?;
    let coef = &inv * a.transpose() * &y;
    let rss = (&a * &coef - &y).norm_squared();
    Ok((coef, inv, rss))
}

/// Weighted fit of P(V) = aV + bV² (relative weights 1/P²).
pub fn shot_noise_calibrate(points: &[(f64, f64)], operating_voltage: f64) -> Result<ShotNoiseCal> {
    let mut vs: Vec<f64> = points.iter().map(|p| p.0).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    if vs.len() < 4 {
        return Err(Error::InvalidParams(format!("{} distinct voltages, need ≥ 4", vs.len())));
    }
    let (lo, hi) = (vs[0], vs[vs.len() - 1]);
    if !(lo > 0.0 && hi / lo >= 2.0) {
        return Err(Error::IllConditioned(format!("voltages span [{lo}, {hi}], need a factor ≥ 2")));
    }
    let (c, inv, rss) = weighted_poly_fit(points, &[1, 2])?;
    let dof = (points.len() - 2) as f64;
    let s2 = rss / dof;
    let cov = [[inv[(0, 0)] * s2, inv[(0, 1)] * s2], [inv[(1, 0)] * s2, inv[(1, 1)] * s2]];
    let (a, b) = (c[0], c[1]);
    let v = operating_voltage;
    let d = a + b * v;
    let frac = b * v / d;
    let ga = -b * v / (d * d);
    let gb = a * v / (d * d);
    let var = ga * ga * cov[0][0] + 2.0 * ga * gb * cov[0][1] + gb * gb * cov[1][1];
    if !(a > 0.0) {
        return Err(Error::IllConditioned(format!("linear coefficient {a} ≤ 0")));
    }
    Ok(ShotNoiseCal {
        linear_coeff: a,
        quadratic_coeff: b,
        covariance: cov,
        operating_voltage: v,
        classical_fraction: frac.clamp(0.0, 1.0 - f64::EPSILON),
        classical_fraction_stderr: var.max(0.0).sqrt(),
    })
}

/// p-value of the F-test for adding a cubic term to the aV + bV² model.
pub fn cubic_term_p_value(points: &[(f64, f64)]) -> Result<f64> {
    let n = points.len();
    if n < 5 {
        return Err(Error::InvalidParams("cubic F-test needs ≥ 5 points".into()));
    }
    let (_, _, rss2) = weighted_poly_fit(points, &[1, 2])?;
    let (_, _, rss3) = weighted_poly_fit(points, &[1, 2, 3])?;
    let d2 = (n - 3) as f64;
    let f = ((rss2 - rss3).max(0.0)) / (rss3 / d2);
    let dist = FisherSnedecor::new(1.0, d2).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(1.0 - dist.cdf(f))
}

/// Phase-modulation calibration tone located in a complex IQ PSD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToneSpec {
    /// Absolute tone frequency (Hz); sets the FM amplitude βΩ_mod.
    pub frequency_hz: f64,
    /// Offset from the demodulation frequency (Hz).
    pub offset_hz: f64,
    pub depth: f64,
}

/// Partial mechanical parameters for the occupancy inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MechPrior {
    pub n_th: f64,
    /// Intrinsic damping (rad/s).
    pub gamma_m: f64,
    /// Backaction heating relative to thermal; 0 when negligible.
    pub c_q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct G0Estimate {
    /// rad/s.
    pub g0: f64,
    /// Single-tone estimates, rad/s.
    pub per_tone: Vec<f64>,
    pub occupancy: f64,
    /// Fitted FWHM of the mechanical peak, rad/s.
    pub linewidth: f64,
    pub mech_power: f64,
    pub tone_powers: Vec<f64>,
}

/// Median of the PSD bins in a frequency window.
fn median_in(psd: &Psd, lo: f64, hi: f64) -> Option<f64> {
    let mut v: Vec<f64> = psd.freqs.iter().zip(&psd.values).filter(|(f, _)| **f >= lo && **f <= hi).map(|(_, v)| *v).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Line power above the local background, summing ±`half` bins.
fn line_power(psd: &Psd, f: f64, half: usize) -> Result<f64> {
    let df = psd.resolution();
    let k = psd.bin(f);
    if (psd.freqs[k] - f).abs() > df {
        return Err(Error::ToneNotFound(f));
    }
    let span = 40.0 * df;
    let bg = median_in(psd, f - span, f + span).ok_or(Error::ToneNotFound(f))?;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(psd.values.len() - 1);
    let peak = psd.values[lo..=hi].iter().cloned().fold(0.0, f64::max);
    if peak < 20.0 * bg {
        return Err(Error::ToneNotFound(f));
    }
    Ok(psd.values[lo..=hi].iter().map(|v| v - bg).sum::<f64>() * df)
}

/// Lorentzian fit A(Γ/2π)/((f−f0)² + Γ²/4) + c over a band; returns
/// (area, f0, FWHM Hz, floor). A first pass weights residuals by the data;
/// later passes weight by the previous model, which converges to the
/// χ²-likelihood estimate and removes the low bias of data weighting.
pub fn fit_lorentzian(psd: &Psd, lo: f64, hi: f64, exclude: &[(f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = psd
        .freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f >= lo && **f <= hi && !exclude.iter().any(|(a, b)| **f >= *a && **f <= *b))
        .map(|(f, v)| (*f, *v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::PeakNotFound);
    }
    let floor0 = {
        let mut v: Vec<f64> = pts.iter().map(|p| p.1).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 4]
    };
    let (fpk, vpk) = pts.iter().cloned().fold((0.0, f64::MIN), |a, p| if p.1 > a.1 { p } else { a });
    let height = vpk - floor0;
    if !(height > 0.0) {
        return Err(Error::PeakNotFound);
    }
    let above: f64 = pts.iter().map(|p| (p.1 - floor0).max(0.0)).sum::<f64>() * psd.resolution();
    let w0 = (2.0 * above / (std::f64::consts::PI * height)).max(psd.resolution());
    let model = |x: &[f64], f: f64| {
        let w = x[2].exp();
        x[0].exp() * (w / TAU) / ((f - x[1]).powi(2) + 0.25 * w * w) + x[3]
    };
    let mut x = vec![above.max(1e-300).ln(), fpk, w0.ln(), floor0];
    let mut scale: Vec<f64> = pts.iter().map(|p| p.1.abs().max(1e-300)).collect();
    for _ in 0..4 {
        let resid = |x: &[f64]| pts.iter().zip(&scale).map(|(&(f, v), s)| (model(x, f) - v) / s).collect::<Vec<_>>();
        let jac = |x: &[f64], _: &[f64]| crate::fitting::finite_difference_jacobian(&resid, x, pts.len());
        x = levenberg_marquardt(&resid, &jac, &x, LmOptions::default()).map_err(|_| Error::PeakNotFound)?.x;
        scale = pts.iter().map(|&(f, _)| model(&x, f).abs().max(1e-300)).collect();
    }
    Ok((x[0].exp(), x[1], x[2].exp(), x[3]))
}

/// g0² = (P_mech/P_tone)·(βΩ_mod)²/(4(n+½)) on the two-sided PSD of the
/// complex IQ record, n = n_th Γ_m(1 + C_q)/Γ_fit; geometric mean over tones.
pub fn estimate_g0(psd: &Psd, tones: &[ToneSpec], mech_band: (f64, f64), prior: &MechPrior) -> Result<G0Estimate> {
    if tones.is_empty() {
        return Err(Error::InvalidParams("at least one calibration tone required".into()));
    }
    let mut tone_powers = Vec::with_capacity(tones.len());
    for t in tones {
        tone_powers.push(line_power(psd, t.offset_hz, 2)?);
    }
    let guard = 4.0 * psd.resolution();
    let exclude: Vec<(f64, f64)> = tones.iter().map(|t| (t.offset_hz - guard, t.offset_hz + guard)).collect();
    let (area, _f0, fwhm_hz, _floor) = fit_lorentzian(psd, mech_band.0, mech_band.1, &exclude)?;
    if !(area > 0.0) {
        return Err(Error::PeakNotFound);
    }
    let linewidth = TAU * fwhm_hz;
    let n = prior.n_th * prior.gamma_m * (1.0 + prior.c_q) / linewidth;
    let per_tone: Vec<f64> = tones
        .iter()
        .zip(&tone_powers)
        .map(|(t, p)| {
            let a = t.depth * TAU * t.frequency_hz;
            (area / p * a * a / (4.0 * (n + 0.5))).sqrt()
        })
        .collect();
    let g0 = per_tone.iter().map(|g| g.ln()).sum::<f64>() / per_tone.len() as f64;
    Ok(G0Estimate { g0: g0.exp(), per_tone, occupancy: n, linewidth, mech_power: area, tone_powers })
}

/// Peaks above `threshold`·floor outside a protected band, strongest first,
/// as notch stages of quality factor `q`.
pub fn place_notches(psd: &Psd, floor: f64, threshold: f64, protected: (f64, f64), q: f64, max: usize) -> Vec<FilterKind> {
    let v = &psd.values;
    let mut peaks: Vec<(f64, f64)> = (1..v.len().saturating_sub(1))
        .filter(|&k| v[k] > threshold * floor && v[k] >= v[k - 1] && v[k] >= v[k + 1])
        .map(|k| (psd.freqs[k], v[k]))
        .filter(|(f, _)| !(*f >= protected.0 && *f <= protected.1) && *f > 0.0)
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.into_iter().take(max).map(|(f, _)| FilterKind::Notch { center: f, q }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseNoise {
    pub freqs: Vec<f64>,
    /// rad²/Hz, single-sided.
    pub s_phi: Vec<f64>,
    /// Hz²/Hz, single-sided.
    pub s_nu: Vec<f64>,
}

/// Beat-note phase noise: IQ demodulation at f_beat, unwrapped phase with
/// the mean frequency offset removed, single-sided Welch PSD.
pub fn phase_noise_from_beat(x: &[f64], fs: f64, f_beat: f64, decimation: usize, cfg: &WelchConfig) -> Result<PhaseNoise> {
    if x.len() < 100_000 {
        return Err(Error::InvalidParams(format!("{} samples, need ≥ 1e5", x.len())));
    }
    let iq = iq_demodulate(x, fs, f_beat, decimation)?;
    let amp: Vec<f64> = iq.i.iter().zip(&iq.q).map(|(a, b)| a.hypot(*b)).collect();
    let mut sorted = amp.clone();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[sorted.len() / 2];
    let low = amp.iter().filter(|a| **a < 0.2 * med).count();
    if !(med > 0.0) || low as f64 > 1e-3 * amp.len() as f64 {
        return Err(Error::UnwrapFailure(format!("{low} of {} samples near zero amplitude", amp.len())));
    }
    let mut phase = Vec::with_capacity(amp.len());
    let mut prev = 0.0;
    let mut offset = 0.0;
    for (a, b) in iq.i.iter().zip(&iq.q) {
        let p = b.atan2(*a);
        let mut d = p - prev;
        if d > std::f64::consts::PI {
            offset -= TAU;
            d -= TAU;
        } else if d < -std::f64::consts::PI {
            offset += TAU;
            d += TAU;
        }
        let _ = d;
        prev = p;
        phase.push(p + offset);
    }
    // Remove the best-fit line (residual frequency offset and phase).
    let n = phase.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let pm = phase.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, p) in phase.iter().enumerate() {
        let t = k as f64 - tm;
        sxy += t * (p - pm);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    let detr: Vec<f64> = phase.iter().enumerate().map(|(k, p)| p - pm - slope * (k as f64 - tm)).collect();
    let psd = welch_psd(&detr, iq.sample_rate, cfg)?;
    let s_nu = psd.freqs.iter().zip(&psd.values).map(|(f, s)| f * f * s).collect();
    Ok(PhaseNoise { freqs: psd.freqs, s_phi: psd.values, s_nu })
}
