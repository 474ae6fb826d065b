use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use relight_core::fusion::fuse_sequence;
use relight_core::image::{resize_bilinear, to_grayscale, width_for_height, Frame, GrayFrame};
use relight_core::io::{apply_override, load_sequence, read_config_value, save_sequence, write_pgm, RunConfig, VideoManifest, MANIFEST_NAME};
use relight_core::metrics::{
    brightness_histogram, light_stability_score, save_signals_csv, ssim_video, tau_rankings, EvalReport,
    StabilityReport, DEFAULT_TAUS,
};
use relight_core::spectrum::{high_freq_energy, high_freq_energy_ratio, magnitude_spectrum, Spectrum};
use relight_core::synth::{self, FlickerSpec, MovingSquareSpec};
use relight_core::temporal::smooth_sequence;
use relight_core::Error;

use crate::{
    Cli, CliError, Command, EvalArgs, FuseArgs, HistArgs, PipelineArgs, Reports, SmoothArgs, SpectrumArgs,
    SweepTauArgs, SynthArgs, SynthKind,
};

type Result<T> = std::result::Result<T, CliError>;

/// Default low-frequency disc radius for high-frequency energy, as a fraction of Nyquist.
pub const HF_CUTOFF: f64 = 0.25;

pub(crate) fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Smooth(a) => smooth(cli, a, out),
        Command::Fuse(a) => fuse(cli, a, out),
        Command::Pipeline(a) => pipeline(cli, a, out),
        Command::Eval(a) => eval(cli, a, out),
        Command::SweepTau(a) => sweep_tau(cli, a, out),
        Command::Spectrum(a) => spectrum(cli, a, out),
        Command::Hist(a) => hist(cli, a, out),
        Command::Synth(a) => synth_cmd(cli, a, out),
    }
}

pub(crate) fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|source| {
        CliError::Core(Error::Io {
            path: "<stdout>".into(),
            source,
        })
    })
}

/// Config file, then `--set` overrides, then dedicated flags.
fn resolve_config(cli: &Cli, flags: &[(&str, Option<f64>)]) -> Result<RunConfig> {
    let mut doc = match &cli.config {
        Some(path) => read_config_value(path)?,
        None => json!({}),
    };
    for assignment in &cli.set {
        apply_override(&mut doc, assignment).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            match doc.as_object_mut() {
                Some(map) => {
                    map.insert((*key).to_string(), json!(v));
                }
                None => return Err(Error::InvalidData("config document must be a JSON object".into()).into()),
            }
        }
    }
    Ok(RunConfig::from_value(doc)?)
}

fn required<'a>(flag: &'a Option<PathBuf>, fallback: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    flag.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| CliError::Usage(format!("missing {name} (pass the flag or set it in the config)")))
}

/// Frame rate of a loaded sequence: its manifest's when it has one, else the configured rate.
fn source_fps(path: &Path, manifest: &VideoManifest, cfg: &RunConfig) -> f64 {
    if path.is_file() || path.join(MANIFEST_NAME).is_file() {
        manifest.fps
    } else {
        cfg.fps
    }
}

fn grays(frames: &[Frame]) -> Vec<GrayFrame> {
    frames.par_iter().map(to_grayscale).collect()
}

fn resized_to(frames: &[Frame], dims: (usize, usize)) -> Result<Vec<Frame>> {
    Ok(frames
        .par_iter()
        .map(|f| if f.dims() == dims { Ok(f.clone()) } else { resize_bilinear(f, dims.0, dims.1) })
        .collect::<relight_core::Result<_>>()?)
}

fn mean_spectrum(frames: &[Frame]) -> Result<Spectrum> {
    let spectra: Vec<Spectrum> = frames.par_iter().map(|f| magnitude_spectrum(&to_grayscale(f))).collect();
    Ok(Spectrum::mean(&spectra)?)
}

/// Stability of `candidate`; with a reference also SSIM, the reference's
/// stability and the mean-spectrum high-frequency energy ratio. The candidate
/// is resized to the reference resolution for the comparisons.
fn evaluate(candidate: &[Frame], reference: Option<&[Frame]>, cfg: &RunConfig) -> Result<(EvalReport, StabilityReport)> {
    let params = cfg.stability();
    let cand = light_stability_score(&grays(candidate), &params)?;
    let Some(reference) = reference else {
        return Ok((EvalReport::new(&cand, &params, None, None), cand));
    };
    if reference.len() != candidate.len() {
        return Err(Error::InvalidData(format!(
            "frame counts differ: {} reference vs {} candidate",
            reference.len(),
            candidate.len()
        ))
        .into());
    }
    let aligned = resized_to(candidate, reference[0].dims())?;
    let ssim = ssim_video(&aligned, reference, &cfg.ssim)?;
    let ref_report = light_stability_score(&grays(reference), &params)?;
    // A reference without high frequencies, such as a flat video, has no ratio.
    let hf = match high_freq_energy_ratio(&mean_spectrum(&aligned)?, &mean_spectrum(reference)?, HF_CUTOFF) {
        Ok(r) => Some(r),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut report = EvalReport::new(&cand, &params, Some(ssim), Some(&ref_report));
    report.hf_energy_ratio = hf;
    Ok((report, cand))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn write_reports(reports: &Reports, report: &impl Serialize, signals: &StabilityReport) -> Result<()> {
    if let Some(path) = &reports.json {
        write_json(path, report)?;
    }
    if let Some(path) = &reports.csv {
        save_signals_csv(signals, path)?;
    }
    Ok(())
}

fn smooth(cli: &Cli, a: &SmoothArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[("alpha_base", a.alpha), ("tau", a.tau)])?;
    let input = required(&a.input, &cfg.input, "--input")?;
    let output = required(&a.output, &cfg.output, "--output")?;
    let (frames, manifest) = load_sequence(input)?;
    let smoothed = smooth_sequence(&frames, &cfg.flow, &cfg.smoother(), &cfg.bilateral)?;
    save_sequence(&smoothed, output, source_fps(input, &manifest, &cfg))?;
    if frames.len() < 3 && !a.reports.requested() {
        return emit(out, format!("smoothed {} frames; S_LS needs at least 3", frames.len()));
    }
    let params = cfg.stability();
    let before = light_stability_score(&grays(&frames), &params)?;
    let after = light_stability_score(&grays(&smoothed), &params)?;
    emit(out, format!("S_LS before {:.6} after {:.6}", before.s_ls, after.s_ls))?;
    write_reports(&a.reports, &EvalReport::new(&after, &params, None, Some(&before)), &after)
}

fn fuse(cli: &Cli, a: &FuseArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[("beta", a.beta), ("tau", a.tau)])?;
    let input = required(&a.input, &cfg.input, "--input")?;
    let relit_path = required(&a.relit, &cfg.relit, "--relit")?;
    let output = required(&a.output, &cfg.output, "--output")?;
    let (original, manifest) = load_sequence(input)?;
    let (relit, _) = load_sequence(relit_path)?;
    let fused = fuse_sequence(&original, &relit, &cfg.lab_fuse_for_height(original[0].height()))?;
    save_sequence(&fused, output, source_fps(input, &manifest, &cfg))?;
    let ssim = ssim_video(&fused, &original, &cfg.ssim)?;
    let relit_ssim = ssim_video(&resized_to(&relit, original[0].dims())?, &original, &cfg.ssim)?;
    emit(out, format!("SSIM(output, original) {ssim:.6} (relit input {relit_ssim:.6})"))?;
    if a.reports.requested() {
        let (report, signals) = evaluate(&fused, Some(&original), &cfg)?;
        write_reports(&a.reports, &report, &signals)?;
    }
    Ok(())
}

/// Evaluation of the pipeline output next to the raw relit input, both
/// against the original.
#[derive(Debug, Serialize)]
struct PipelineReport {
    output: EvalReport,
    relit: EvalReport,
}

fn pipeline(cli: &Cli, a: &PipelineArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[("alpha_base", a.alpha), ("beta", a.beta), ("tau", a.tau)])?;
    let input = required(&a.input, &cfg.input, "--input")?;
    let relit_path = required(&a.relit, &cfg.relit, "--relit")?;
    let output = required(&a.output, &cfg.output, "--output")?;
    let (original, manifest) = load_sequence(input)?;
    let (relit, _) = load_sequence(relit_path)?;
    if original.len() != relit.len() {
        return Err(Error::InvalidData(format!(
            "frame counts differ: {} original vs {} relit",
            original.len(),
            relit.len()
        ))
        .into());
    }
    let (rw, rh) = relit[0].dims();
    let working = if cfg.downsample && rh > cfg.working_height {
        resized_to(&relit, (width_for_height(rw, rh, cfg.working_height), cfg.working_height))?
    } else {
        relit.clone()
    };
    let smoothed = smooth_sequence(&working, &cfg.flow, &cfg.smoother(), &cfg.bilateral)?;
    let fused = fuse_sequence(&original, &smoothed, &cfg.lab_fuse_for_height(original[0].height()))?;
    save_sequence(&fused, output, source_fps(input, &manifest, &cfg))?;
    let (output_report, signals) = evaluate(&fused, Some(&original), &cfg)?;
    let (relit_report, _) = evaluate(&relit, Some(&original), &cfg)?;
    let report = PipelineReport {
        output: output_report,
        relit: relit_report,
    };
    write_reports(&a.reports, &report, &signals)?;
    emit(out, serde_json::to_string_pretty(&report).expect("report fields are plain numbers"))
}

fn eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[("tau", a.tau)])?;
    let reference_path = required(&a.input, &cfg.input, "--input")?;
    let candidate_path = required(&a.relit, &cfg.relit, "--relit")?;
    let (reference, _) = load_sequence(reference_path)?;
    let (candidate, _) = load_sequence(candidate_path)?;
    let (report, signals) = evaluate(&candidate, Some(&reference), &cfg)?;
    write_reports(&a.reports, &report, &signals)?;
    emit(out, report.to_json())
}

fn sweep_tau(cli: &Cli, a: &SweepTauArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[])?;
    let taus = if a.taus.is_empty() { DEFAULT_TAUS.to_vec() } else { a.taus.clone() };
    let videos: Vec<Vec<GrayFrame>> = a
        .input
        .iter()
        .map(|p| load_sequence(p).map(|(f, _)| grays(&f)))
        .collect::<relight_core::Result<_>>()?;
    let rankings = tau_rankings(&videos, &taus, &cfg.stability())?;
    let consistent = rankings.windows(2).all(|w| w[0].ranking == w[1].ranking);
    for r in &rankings {
        let order: Vec<String> = r.ranking.iter().map(|&i| a.input[i].display().to_string()).collect();
        emit(out, format!("tau {}: {}", r.tau, order.join(" > ")))?;
    }
    emit(out, format!("ranking consistent across thresholds: {}", if consistent { "yes" } else { "no" }))?;
    if let Some(path) = &a.reports.csv {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["tau", "video", "s_LS", "rank"]).map_err(Error::from)?;
        for r in &rankings {
            for (rank, &i) in r.ranking.iter().enumerate() {
                w.write_record([
                    r.tau.to_string(),
                    a.input[i].display().to_string(),
                    r.scores[i].to_string(),
                    (rank + 1).to_string(),
                ])
                .map_err(Error::from)?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    if let Some(path) = &a.reports.json {
        let doc = json!({
            "videos": a.input,
            "taus": taus,
            "rankings": rankings,
            "consistent": consistent,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

fn spectrum(cli: &Cli, a: &SpectrumArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[])?;
    let input = required(&a.input, &cfg.input, "--input")?;
    let (mut frames, _) = load_sequence(input)?;
    let reference = match &a.relit {
        Some(p) => Some(load_sequence(p)?.0),
        None => None,
    };
    if let Some(r) = &reference {
        frames = resized_to(&frames, r[0].dims())?;
    }
    let spectra: Vec<Spectrum> = frames.par_iter().map(|f| magnitude_spectrum(&to_grayscale(f))).collect();
    let mean = Spectrum::mean(&spectra)?;
    if let Some(o) = &a.output {
        if a.per_frame {
            fs::create_dir_all(o).map_err(|source| Error::Io {
                path: o.clone(),
                source,
            })?;
            for (t, s) in spectra.iter().enumerate() {
                write_pgm(&s.log_image(), &o.join(format!("f{t:04}.pgm")))?;
            }
        } else {
            write_pgm(&mean.log_image(), o)?;
        }
    }
    let energy = high_freq_energy(&mean, a.cutoff);
    emit(out, format!("high_freq_energy {energy:.6e}"))?;
    let ratio = match &reference {
        Some(r) => Some(high_freq_energy_ratio(&mean, &mean_spectrum(r)?, a.cutoff)?),
        None => None,
    };
    if let Some(r) = ratio {
        emit(out, format!("hf_energy_ratio {r:.6}"))?;
    }
    if let Some(path) = &a.json {
        let (w, h) = mean.dims();
        let mut doc = json!({
            "frames": frames.len(),
            "width": w,
            "height": h,
            "cutoff": a.cutoff,
            "high_freq_energy": energy,
        });
        if let Some(r) = ratio {
            doc["hf_energy_ratio"] = json!(r);
        }
        write_json(path, &doc)?;
    }
    Ok(())
}

fn hist(cli: &Cli, a: &HistArgs, out: &mut dyn Write) -> Result<()> {
    resolve_config(cli, &[])?;
    let counts: Vec<Vec<u64>> = a
        .input
        .iter()
        .map(|p| {
            let (frames, _) = load_sequence(p)?;
            brightness_histogram(&grays(&frames), a.bins)
        })
        .collect::<relight_core::Result<_>>()?;
    let width = 256 / a.bins;
    let mut header = vec!["bin_start".to_string(), "bin_end".to_string()];
    header.extend(a.input.iter().map(|p| p.display().to_string()));
    let rows = (0..a.bins).map(|b| {
        let mut row = vec![(b * width).to_string(), ((b + 1) * width - 1).to_string()];
        row.extend(counts.iter().map(|c| c[b].to_string()));
        row
    });
    let csv_err = |e: csv::Error| CliError::Core(Error::from(e));
    match &a.reports.csv {
        Some(path) => {
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            w.write_record(&header).map_err(csv_err)?;
            for row in rows {
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            for (p, c) in a.input.iter().zip(&counts) {
                emit(out, format!("{}: {} pixels", p.display(), c.iter().sum::<u64>()))?;
            }
        }
        None => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).map_err(csv_err)?;
            for row in rows {
                w.write_record(&row).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Core(Error::InvalidData(e.to_string())))?;
            emit(out, String::from_utf8_lossy(&bytes).trim_end())?;
        }
    }
    if let Some(path) = &a.reports.json {
        let videos: Vec<Value> = a
            .input
            .iter()
            .zip(&counts)
            .map(|(p, c)| json!({ "path": p, "pixels": c.iter().sum::<u64>(), "counts": c }))
            .collect();
        write_json(path, &json!({ "bins": a.bins, "videos": videos }))?;
    }
    Ok(())
}

fn synth_cmd(cli: &Cli, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli, &[])?;
    let fps = a.fps.unwrap_or(cfg.fps);
    let (w, h, n) = (a.width, a.height, a.frames);
    let frames = match a.kind {
        SynthKind::Constant => synth::constant(w, h, n, [a.base.unwrap_or(128.0) / 255.0; 3]),
        SynthKind::Flicker => {
            let d = FlickerSpec::default();
            let spec = FlickerSpec {
                base: a.base.unwrap_or(d.base),
                amp: a.amp.unwrap_or(d.amp),
                period: a.period.unwrap_or(d.period),
                texture: a.texture.unwrap_or(d.texture),
                seed: a.seed,
            };
            synth::flicker(w, h, n, &spec)?
        }
        SynthKind::MovingSquare => {
            let d = MovingSquareSpec::default();
            let spec = MovingSquareSpec {
                size: a.size.unwrap_or(d.size),
                speed: a.speed.unwrap_or(d.speed),
                background: a.base.unwrap_or(d.background),
                foreground: a.foreground.unwrap_or(d.foreground),
                texture: a.texture.unwrap_or(d.texture),
                seed: a.seed,
            };
            let (frames, truth) = synth::moving_square(w, h, n, &spec)?;
            save_sequence(&frames, &a.output, fps)?;
            write_json(&a.output.join("squares.json"), &truth)?;
            return emit(out, format!("wrote {n} frames and squares.json to {}", a.output.display()));
        }
        SynthKind::TexturedTranslation => {
            synth::textured_translation(w, h, n, a.dx.unwrap_or(2), a.dy.unwrap_or(3), a.sigma.unwrap_or(2.0), a.seed)
        }
        SynthKind::Jitter => synth::jitter(
            w,
            h,
            n,
            a.base.unwrap_or(175.0),
            a.amp.unwrap_or(20.0),
            a.texture.unwrap_or(30.0),
            a.seed,
        ),
        SynthKind::RelitPair => {
            let (original, relit) =
                synth::relit_pair(w, h, n, a.blur.unwrap_or(3.0), a.gain.unwrap_or(0.4), a.amp.unwrap_or(0.0), a.seed);
            save_sequence(&original, &a.output.join("original"), fps)?;
            save_sequence(&relit, &a.output.join("relit"), fps)?;
            return emit(out, format!("wrote {n} original and {n} relit frames to {}", a.output.display()));
        }
    };
    save_sequence(&frames, &a.output, fps)?;
    emit(out, format!("wrote {n} frames to {}", a.output.display()))
}
