use clap::{Args, Parser, Subcommand};
use optomech::dsp::{
    cubic_term_p_value, estimate_g0, phase_noise_from_beat, shot_noise_calibrate, welch_psd_complex, MechPrior, ToneSpec, WelchConfig,
};
use optomech::estimator::{
    conditioning_instants, filter_predict, filter_retrodict, reconstruct_covariance, symplectic_diagonalize, FilterModel, FilterOptions,
};
use optomech::fitting::{fit_spectrum, FitParam, FitProblem};
use optomech::io::{
    csv_table, load_config, parse_psd_csv, psd_to_csv, read_raw, read_record, write_record, FreeParamConfig, PipelineConfig,
    SpectrumKindConfig,
};
use optomech::model_core::{detected_spectrum, mechanical_spectrum, mode_rates, quadrature_offset, spring_shift, SystemParams};
use optomech::tin::detection_efficiency_at;
use optomech::simulator::{simulate, TrajectoryConfig};
use optomech::{Error, TAU};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "optomech", version, about = "Simulation, estimation and calibration pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a demodulated measurement record.
    Simulate(Common),
    /// Predict, retrodict and reconstruct conditional covariances.
    Estimate(Common),
    /// Fit the detected-spectrum model to a PSD.
    Fit(Common),
    /// Shot-noise, g0 and beat-note calibrations.
    Calibrate(Common),
    /// Evaluate model spectra.
    Spectra(Common),
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        EXIT_CONFIG
    } else if e.is_io() {
        EXIT_IO
    } else {
        EXIT_NUMERIC
    }
}

struct Run {
    name: &'static str,
    common: Common,
    config_text: String,
    config: PipelineConfig,
    outputs: Vec<String>,
}

impl Run {
    fn open(name: &'static str, common: Common) -> Result<Self, Error> {
        let config_text = std::fs::read_to_string(&common.config)?;
        let config = load_config(&common.config)?;
        std::fs::create_dir_all(&common.out)?;
        Ok(Self { name, common, config_text, config, outputs: Vec::new() })
    }

    fn input(&self, p: &Path) -> PathBuf {
        p.to_path_buf()
    }

    fn write(&mut self, file: &str, text: &str) -> Result<(), Error> {
        std::fs::write(self.common.out.join(file), text)?;
        self.outputs.push(file.to_string());
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.common.seed.or(self.config.simulate.as_ref().map(|s| s.seed)).unwrap_or(0)
    }

    fn params(&self) -> Result<SystemParams, Error> {
        self.config.system.to_params()
    }

    /// Everything needed to re-run: command, seed, version, the config
    /// text and its hash, and the files produced. No timestamps, so reruns
    /// are byte-identical.
    fn finish(mut self) -> Result<(), Error> {
        let hash = Sha256::digest(self.config_text.as_bytes());
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        let manifest = serde_json::json!({
            "command": self.name,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed(),
            "threads": self.common.threads,
            "config_path": self.common.config.display().to_string(),
            "config_sha256": hex,
            "config": serde_json::from_str::<serde_json::Value>(&self.config_text).map_err(|e| Error::Config(e.to_string()))?,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))? + "\n";
        self.outputs.push("manifest.json".into());
        std::fs::write(self.common.out.join("manifest.json"), text)?;
        Ok(())
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, Error> {
    s.as_ref().ok_or_else(|| Error::Config(format!("config has no \"{name}\" section")))
}

fn cmd_simulate(mut run: Run) -> Result<(), Error> {
    let p = run.params()?;
    let s = section(&run.config.simulate, "simulate")?.clone();
    let mut cfg = TrajectoryConfig::new(p.clone(), s.dt, s.duration, run.seed());
    if let Some(f) = s.demod_frequency {
        cfg.omega_ref = TAU * f;
        cfg.rates = mode_rates(&p, Some(cfg.omega_ref));
    }
    cfg.record_truth = s.record_truth;
    cfg.truth_stride = s.truth_stride;
    cfg.tones = s.tones();
    let rec = simulate(&cfg)?;
    write_record(&run.common.out.join("record"), &rec)?;
    run.outputs.extend(["record.f64", "record.json"].map(String::from));
    if rec.truth.is_some() {
        run.outputs.extend(["record_truth.f64", "record_truth.json"].map(String::from));
    }
    run.finish()
}

fn matrix_csv(m: &optomech::nalgebra::DMatrix<f64>, labels: &[String]) -> String {
    let mut headers = vec!["row"];
    headers.extend(labels.iter().map(String::as_str));
    let mut s = headers.join(",") + "\n";
    for r in 0..m.nrows() {
        s.push_str(&labels[r]);
        for c in 0..m.ncols() {
            s.push_str(&format!(",{:?}", m[(r, c)]));
        }
        s.push('\n');
    }
    s
}

fn cmd_estimate(mut run: Run) -> Result<(), Error> {
    let p = run.params()?;
    let e = section(&run.config.estimate, "estimate")?.clone();
    let rec = read_record(&run.input(&e.record))?;
    let omega_ref = TAU * rec.demod_frequency;
    let mut model = FilterModel::new(mode_rates(&p, Some(omega_ref)), rec.dt());
    model.cov_oversample = e.cov_oversample;
    let at = conditioning_instants(rec.len(), (e.burn_in * rec.sample_rate).round() as usize, (e.spacing * rec.sample_rate).round().max(1.0) as usize);
    let opts = FilterOptions::default();
    let (pred, retro) = rayon::join(|| filter_predict(&rec, &model, &at, opts), || filter_retrodict(&rec, &model, &at, opts));
    let (pred, retro) = (pred?, retro?);
    let recon = reconstruct_covariance(&pred, &retro, e.batches)?;
    let dim = recon.cov.nrows();
    let labels: Vec<String> = (0..dim / 2).flat_map(|i| [format!("x{i}"), format!("y{i}")]).collect();

    let rows = (0..dim / 2).map(|j| vec![j as f64, recon.occupancy(j), recon.occupancy_stderr(j), recon.squared_distance[j]]);
    let occ = csv_table(&["mode", "occupancy", "occupancy_stderr", "mean_squared_distance"], rows);
    run.write("occupancies.csv", &occ)?;
    run.write("reconstructed_covariance.csv", &matrix_csv(&recon.cov, &labels))?;
    run.write("reconstructed_covariance_stderr.csv", &matrix_csv(&recon.stderr, &labels))?;
    run.write("correlation.csv", &matrix_csv(&recon.correlation(), &labels))?;

    let rows = pred.indices.iter().zip(&pred.states).zip(&retro.states).map(|((k, a), b)| {
        let mut r = vec![*k as f64 / rec.sample_rate];
        r.extend(a.mean.iter().copied());
        r.extend(b.mean.iter().copied());
        r
    });
    let mut h = vec!["time_s".to_string()];
    h.extend(labels.iter().map(|l| format!("pred_{l}")));
    h.extend(labels.iter().map(|l| format!("retro_{l}")));
    let hr: Vec<&str> = h.iter().map(String::as_str).collect();
    run.write("conditional_means.csv", &csv_table(&hr, rows))?;

    let cp = &pred.states.last().ok_or(Error::InsufficientSlices { got: 0, need: 1 })?.cov;
    let cr = &retro.states[0].cov;
    let diag = (0..dim).map(|k| vec![k as f64, cp[(k, k)], cr[(k, k)]]);
    run.write("covariance_diagonals.csv", &csv_table(&["index", "prediction", "retrodiction"], diag))?;

    let basis = symplectic_diagonalize(&recon.cov)?;
    let coll: Vec<String> = (0..dim / 2).flat_map(|i| [format!("X{i}"), format!("Y{i}")]).collect();
    run.write("collective_coefficients.csv", &matrix_csv(&basis.coefficients, &coll).replacen("row", "collective", 1))?;
    let eig = basis.symplectic_eigenvalues.iter().enumerate().map(|(k, v)| vec![k as f64, *v, v - 0.5]);
    run.write("symplectic_eigenvalues.csv", &csv_table(&["collective_mode", "nu", "occupancy"], eig))?;
    let mut report = format!("slices: {}\n", recon.n_slices);
    if let Some(f) = &recon.flag {
        report.push_str(&format!("flag: {f}\n"));
    }
    run.write("report.txt", &report)?;
    run.finish()
}

fn cmd_fit(mut run: Run) -> Result<(), Error> {
    let p = run.params()?;
    let f = section(&run.config.fit, "fit")?.clone();
    if f.free.is_empty() {
        return Err(Error::Config("fit.free is empty".into()));
    }
    let (psd, _units) = parse_psd_csv(&std::fs::read_to_string(run.input(&f.psd))?)?;
    let (lo, hi) = (f.band[0], f.band[1]);
    if !(lo < hi) {
        return Err(Error::Config(format!("fit.band [{lo}, {hi}] is empty")));
    }
    let (offs, vals): (Vec<f64>, Vec<f64>) = psd.freqs.iter().zip(&psd.values).filter(|(x, _)| **x >= lo && **x <= hi).map(|(a, b)| (*a, *b)).unzip();
    let free: Vec<FitParam> = f
        .free
        .iter()
        .map(|k| match k {
            FreeParamConfig::G => FitParam::LogG,
            FreeParamConfig::EtaD => FitParam::LogitEta,
            FreeParamConfig::Theta => FitParam::Theta,
        })
        .collect();
    let prob = FitProblem::new(offs, vals, p, TAU * f.demod_frequency, free);
    let r = fit_spectrum(&prob)?;
    let names: Vec<&str> = r
        .free
        .iter()
        .map(|k| match k {
            FitParam::LogG => "g_hz",
            FitParam::LogitEta => "eta_d",
            FitParam::Theta => "theta_deg",
            _ => "other",
        })
        .collect();
    let scale = |k: &FitParam| match k {
        FitParam::LogG => 1.0 / TAU,
        FitParam::Theta => 180.0 / std::f64::consts::PI,
        _ => 1.0,
    };
    let mut s = String::from("parameter,value,stderr\n");
    for ((n, k), (v, e)) in names.iter().zip(&r.free).zip(r.values.iter().zip(&r.stderr)) {
        s.push_str(&format!("{n},{:?},{:?}\n", v * scale(k), e * scale(k)));
    }
    s.push_str(&format!("c_q,{:?},\neta_meas,{:?},\nreduced_chi2,{:?},\n", r.c_q, r.eta_meas, r.reduced_chi2));
    run.write("fit_result.csv", &s)?;
    let model = prob.model_values(&r.raw);
    let rows = prob.offsets_hz.iter().zip(&prob.values).zip(&model).map(|((f, d), m)| vec![*f, *d, *m]);
    run.write("fit_curve.csv", &csv_table(&["offset_hz", "data", "model"], rows))?;
    let mut rep = format!("iterations: {}\nreduced chi-square: {:.4}\n", r.iterations, r.reduced_chi2);
    for ((n, k), (v, e)) in names.iter().zip(&r.free).zip(r.values.iter().zip(&r.stderr)) {
        rep.push_str(&format!("{n} = {:.6e} ± {:.2e}\n", v * scale(k), e * scale(k)));
    }
    rep.push_str(&format!("C_q = {:.4}\neta_meas = {:.4}\n", r.c_q, r.eta_meas));
    run.write("fit_report.txt", &rep)?;
    run.finish()
}

fn cmd_calibrate(mut run: Run) -> Result<(), Error> {
    let c = section(&run.config.calibrate, "calibrate")?.clone();
    if c.shot_noise.is_none() && c.g0.is_none() && c.beat.is_none() {
        return Err(Error::Config("calibrate section is empty".into()));
    }
    if let Some(s) = &c.shot_noise {
        let pts: Vec<(f64, f64)> = s.points.iter().map(|p| (p[0], p[1])).collect();
        let cal = shot_noise_calibrate(&pts, s.operating_voltage)?;
        let pval = cubic_term_p_value(&pts).ok();
        let mut t = String::from("quantity,value\n");
        t.push_str(&format!("linear_coeff,{:?}\nquadratic_coeff,{:?}\n", cal.linear_coeff, cal.quadratic_coeff));
        t.push_str(&format!("classical_fraction,{:?}\nclassical_fraction_stderr,{:?}\n", cal.classical_fraction, cal.classical_fraction_stderr));
        t.push_str(&format!("shot_noise_reference,{:?}\n", cal.shot_noise_reference()));
        if let Some(pv) = pval {
            t.push_str(&format!("cubic_term_p_value,{pv:?}\n"));
        }
        run.write("shot_noise.csv", &t)?;
    }
    if let Some(g) = &c.g0 {
        let rec = read_record(&run.input(&g.record))?;
        let cfg = WelchConfig::with_averages(rec.len(), g.averages);
        let psd = welch_psd_complex(&rec.i_x, &rec.conjugate_y(), rec.sample_rate, &cfg)?;
        let tones: Vec<ToneSpec> = g
            .tones
            .iter()
            .map(|t| ToneSpec { frequency_hz: t.frequency, offset_hz: t.frequency - rec.demod_frequency, depth: t.depth })
            .collect();
        let prior = MechPrior { n_th: g.n_th, gamma_m: TAU * g.gamma_m, c_q: g.c_q };
        let est = estimate_g0(&psd, &tones, (g.mech_band[0], g.mech_band[1]), &prior)?;
        let mut t = String::from("quantity,value\n");
        t.push_str(&format!("g0_hz,{:?}\noccupancy,{:?}\nlinewidth_hz,{:?}\n", est.g0 / TAU, est.occupancy, est.linewidth / TAU));
        for (k, v) in est.per_tone.iter().enumerate() {
            t.push_str(&format!("g0_tone{k}_hz,{:?}\n", v / TAU));
        }
        run.write("g0.csv", &t)?;
        run.write("record_psd.csv", &psd_to_csv(&psd, "shot/Hz two-sided"))?;
    }
    if let Some(b) = &c.beat {
        let (h, cols) = read_raw(&run.input(&b.trace))?;
        let x = cols.first().ok_or_else(|| Error::Format("beat trace has no channels".into()))?;
        let cfg = WelchConfig { segment: b.segment, ..Default::default() };
        let pn = phase_noise_from_beat(x, h.sample_rate_hz, b.beat_frequency, b.decimation, &cfg)?;
        let rows = pn.freqs.iter().zip(pn.s_phi.iter().zip(&pn.s_nu)).map(|(f, (a, b))| vec![*f, *a, *b]);
        run.write("phase_noise.csv", &csv_table(&["frequency_hz", "s_phi_rad2_per_hz", "s_nu_hz2_per_hz"], rows))?;
    }
    run.finish()
}

fn band_grid(bands: &[[f64; 2]], points: usize) -> Result<Vec<f64>, Error> {
    if bands.is_empty() {
        return Err(Error::Config("spectra.bands is empty".into()));
    }
    if points < 2 {
        return Err(Error::Config("spectra.points must be ≥ 2".into()));
    }
    let mut f = Vec::new();
    for b in bands {
        if !(b[0] < b[1]) {
            return Err(Error::Config(format!("band [{}, {}] is empty", b[0], b[1])));
        }
        f.extend((0..points).map(|k| b[0] + (b[1] - b[0]) * k as f64 / (points - 1) as f64));
    }
    Ok(f)
}

fn cmd_spectra(mut run: Run) -> Result<(), Error> {
    let p = run.params()?;
    let s = section(&run.config.spectra, "spectra")?.clone();
    let freqs = band_grid(&s.bands, s.points)?;
    match s.kind {
        SpectrumKindConfig::Detected | SpectrumKindConfig::Mechanical => {
            let det = s.kind == SpectrumKindConfig::Detected;
            let rows = freqs.iter().map(|f| {
                let w = TAU * f;
                vec![*f, if det { detected_spectrum(&p, w) } else { mechanical_spectrum(&p, w) }]
            });
            let unit = if det { "psd[shot]" } else { "psd[quadrature/Hz]" };
            run.write("spectrum.csv", &csv_table(&["frequency_hz", unit], rows))?;
        }
        SpectrumKindConfig::SqueezingVsTheta => {
            let [a, b] = s.theta_range.ok_or_else(|| Error::Config("squeezing_vs_theta needs theta_range".into()))?;
            if s.theta_points < 2 || !(a < b) {
                return Err(Error::Config("theta_range must be increasing with theta_points ≥ 2".into()));
            }
            // Angles where the LO cannot null the carrier have no η_d and are skipped.
            let mut rows = Vec::with_capacity(s.theta_points);
            for k in 0..s.theta_points {
                let deg = a + (b - a) * k as f64 / (s.theta_points - 1) as f64;
                let th = deg.to_radians();
                let eta = match s.visibility {
                    Some(v) => match detection_efficiency_at(&p, th, v, p.eta_d) {
                        Ok(e) => e,
                        Err(Error::NoCancellation(_)) => continue,
                        Err(e) => return Err(e),
                    },
                    None => p.eta_d,
                };
                let q = p.clone().with_theta(th).with_eta(eta);
                let (fmin, smin) = freqs
                    .iter()
                    .map(|f| (*f, detected_spectrum(&q, TAU * f)))
                    .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                let disp = (th - quadrature_offset(&p.cavity)).to_degrees();
                rows.push(vec![deg, disp, eta, smin, fmin]);
            }
            let head = ["theta_deg", "displayed_theta_deg", "eta_d", "min_psd_shot", "frequency_hz_at_min"];
            run.write("squeezing_vs_theta.csv", &csv_table(&head, rows))?;
        }
    }
    let w = p.defect().omega_m;
    run.write("summary.csv", &format!("quantity,value\nspring_shift_hz,{:?}\n", spring_shift(&p, w) / TAU))?;
    run.finish()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let (name, common) = match cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Estimate(c) => ("estimate", c),
        Command::Fit(c) => ("fit", c),
        Command::Calibrate(c) => ("calibrate", c),
        Command::Spectra(c) => ("spectra", c),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = Run::open(name, common).and_then(|run| match name {
        "simulate" => cmd_simulate(run),
        "estimate" => cmd_estimate(run),
        "fit" => cmd_fit(run),
        "calibrate" => cmd_calibrate(run),
        _ => cmd_spectra(run),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
