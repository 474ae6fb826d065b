//! PNG frame sequences, manifests, and run configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::fusion::{scale_sigma, FuseMode, GuidanceMode, GuidanceSchedule, LabFuseConfig};
use crate::image::{ensure_same_dims, Frame, Plane};
use crate::metrics::{SsimParams, StabilityParams};
use crate::temporal::{BilateralParams, SmootherConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Ordered frame files of a sequence plus its nominal frame rate and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    /// Frame paths, relative to the manifest's directory when written by
    /// [`save_sequence`].
    #[serde(rename = "frames")]
    pub frame_paths: Vec<PathBuf>,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub width: usize,
    pub height: usize,
}

fn default_fps() -> f64 {
    24.0
}

fn decode_png(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => {
            let data = img.to_rgb16().into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect();
            Frame::new(w, h, data)
        }
        _ => Frame::from_rgb8(w, h, &img.to_rgb8().into_raw()),
    }
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn read_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Loads a sequence from a manifest file, or from a directory: through its
/// `manifest.json` when present, otherwise all `.png` files in
/// lexicographic order.
pub fn load_sequence(dir_or_manifest: &Path) -> Result<(Vec<Frame>, VideoManifest)> {
    let meta = fs::metadata(dir_or_manifest).map_err(|e| Error::io(dir_or_manifest, e))?;
    let (base, listed, fps) = if meta.is_dir() {
        let manifest_path = dir_or_manifest.join(MANIFEST_NAME);
        if manifest_path.is_file() {
            let m = read_manifest(&manifest_path)?;
            (dir_or_manifest.to_path_buf(), m.frame_paths, m.fps)
        } else {
            let mut names: Vec<PathBuf> = fs::read_dir(dir_or_manifest)
                .map_err(|e| Error::io(dir_or_manifest, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_png(p))
                .filter_map(|p| p.file_name().map(PathBuf::from))
                .collect();
            names.sort();
            (dir_or_manifest.to_path_buf(), names, default_fps())
        }
    } else {
        let m = read_manifest(dir_or_manifest)?;
        let base = dir_or_manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        (base, m.frame_paths, m.fps)
    };
    if listed.is_empty() {
        return Err(Error::InvalidData(format!("no frames found in {}", dir_or_manifest.display())));
    }
    let paths: Vec<PathBuf> = listed.iter().map(|p| base.join(p)).collect();
    let frames: Vec<Frame> = paths.par_iter().map(|p| decode_png(p)).collect::<Result<_>>()?;
    let dims = frames[0].dims();
    for f in &frames {
        ensure_same_dims(dims, f.dims())?;
    }
    let manifest = VideoManifest {
        frame_paths: paths,
        fps,
        width: dims.0,
        height: dims.1,
    };
    Ok((frames, manifest))
}

/// Writes `f0000.png`, `f0001.png`, ... and `manifest.json` into `dir`.
pub fn save_sequence(frames: &[Frame], dir: &Path, fps: f64) -> Result<VideoManifest> {
    let first = frames.first().ok_or(Error::TooShort {
        what: "frame sequence",
        min: 1,
        actual: 0,
    })?;
    for f in frames {
        ensure_same_dims(first.dims(), f.dims())?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<PathBuf> = (0..frames.len()).map(|i| PathBuf::from(format!("f{i:04}.png"))).collect();
    frames.par_iter().zip(&names).try_for_each(|(f, name)| {
        let path = dir.join(name);
        let img = RgbImage::from_raw(f.width() as u32, f.height() as u32, f.to_rgb8())
            .expect("buffer length matches frame size");
        img.save_with_format(&path, ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })
    })?;
    let manifest = VideoManifest {
        frame_paths: names,
        fps,
        width: first.width(),
        height: first.height(),
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes a plane in `[0, 1]` as a binary 8-bit PGM.
pub fn write_pgm(plane: &Plane, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", plane.width(), plane.height()).into_bytes();
    bytes.extend(plane.data().iter().map(|&v| crate::image::quantize_u8(v)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Every tunable of the pipeline. Absent keys take their defaults; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha_base: f64,
    pub adaptive: bool,
    pub motion_scale: f64,
    pub alpha_floor: f64,
    pub window_size: usize,
    pub window_decay: f64,
    pub bilateral: BilateralParams,
    pub flow: FlowParams,

    pub gamma: f64,
    pub sigma_prior: f64,
    pub steps: usize,
    pub guidance_mode: GuidanceMode,

    pub beta: f64,
    /// Low-pass sigma for the relit lightness, in pixels at 480 rows.
    pub sigma_illum: f64,
    pub fuse_mode: FuseMode,

    pub tau: f64,
    #[serde(rename = "k_I")]
    pub k_i: f64,
    #[serde(rename = "k_C")]
    pub k_c: f64,
    #[serde(rename = "k_dI")]
    pub k_di: f64,
    pub ssim: SsimParams,

    pub fps: f64,
    /// Resize the relit input to `working_height` rows before smoothing.
    pub downsample: bool,
    pub working_height: usize,

    pub input: Option<PathBuf>,
    pub relit: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SmootherConfig::default();
        let g = GuidanceSchedule::default();
        let f = LabFuseConfig::default();
        let m = StabilityParams::default();
        RunConfig {
            alpha_base: s.alpha_base,
            adaptive: s.adaptive,
            motion_scale: s.motion_scale,
            alpha_floor: s.alpha_floor,
            window_size: s.window_size,
            window_decay: s.window_decay,
            bilateral: BilateralParams::default(),
            flow: FlowParams::default(),
            gamma: g.gamma,
            sigma_prior: g.sigma_prior,
            steps: g.total_steps,
            guidance_mode: g.mode,
            beta: f.beta,
            sigma_illum: f.sigma_illum,
            fuse_mode: f.mode,
            tau: m.tau,
            k_i: m.k_i,
            k_c: m.k_c,
            k_di: m.k_di,
            ssim: SsimParams::default(),
            fps: default_fps(),
            downsample: false,
            working_height: 480,
            input: None,
            relit: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn smoother(&self) -> SmootherConfig {
        SmootherConfig {
            alpha_base: self.alpha_base,
            adaptive: self.adaptive,
            motion_scale: self.motion_scale,
            alpha_floor: self.alpha_floor,
            window_size: self.window_size,
            window_decay: self.window_decay,
        }
    }

    pub fn guidance(&self) -> GuidanceSchedule {
        GuidanceSchedule {
            total_steps: self.steps,
            gamma: self.gamma,
            sigma_prior: self.sigma_prior,
            mode: self.guidance_mode,
        }
    }

    /// Fusion settings with `sigma_illum` as configured.
    pub fn lab_fuse(&self) -> LabFuseConfig {
        LabFuseConfig {
            beta: self.beta,
            sigma_illum: self.sigma_illum,
            mode: self.fuse_mode,
        }
    }

    /// Fusion settings with `sigma_illum` scaled to a frame `height` rows tall.
    pub fn lab_fuse_for_height(&self, height: usize) -> LabFuseConfig {
        LabFuseConfig {
            sigma_illum: scale_sigma(self.sigma_illum, height),
            ..self.lab_fuse()
        }
    }

    pub fn stability(&self) -> StabilityParams {
        StabilityParams {
            tau: self.tau,
            k_i: self.k_i,
            k_c: self.k_c,
            k_di: self.k_di,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoother().validate()?;
        self.bilateral.validate()?;
        self.flow.validate()?;
        self.guidance().validate()?;
        self.lab_fuse().validate()?;
        self.stability().validate()?;
        self.ssim.validate()?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::param("fps", "must be > 0"));
        }
        if self.working_height < 1 {
            return Err(Error::param("working_height", "must be >= 1"));
        }
        Ok(())
    }

    /// Builds and validates a config from a JSON value.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_value(value).map_err(|source| Error::Json {
            context: "config".into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        RunConfig::from_value(parse_json(text, "config")?)
    }
}

fn parse_json(text: &str, context: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}

/// Reads the config document at `path` as a JSON value without validating it.
pub fn read_config_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, &path.display().to_string())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_value(read_config_value(path)?)
}

/// Applies `key=value` to a config document. `key` may be a dotted path
/// such as `bilateral.radius`; `value` is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::param("set", format!("expected key=value, got `{assignment}`")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::param("set", format!("malformed key `{key}`")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    if !doc.is_object() {
        *doc = Value::Object(Default::default());
    }
    let mut node = doc;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::param("set", format!("`{key}` descends into a non-object")))?;
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::detailed_scene;

    #[test]
    fn defaults_from_empty_object() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.gamma, 0.3);
        assert_eq!(cfg.tau, 125.0);
        assert_eq!((cfg.k_i, cfg.k_c, cfg.k_di), (20.0, 20.0, 5.0));
        assert_eq!(cfg.alpha_base, 0.9);
        assert_eq!(cfg.beta, 0.3);
        assert_eq!(cfg.steps, 25);
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = RunConfig::from_json_str(r#"{"beta": 0.5}"#).unwrap();
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.tau, 125.0);
        let err = RunConfig::from_json_str(r#"{"beta": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        let err = RunConfig::from_json_str(r#"{"bilateral": {"radius": 2}}"#).unwrap_err();
        assert!(err.to_string().contains("bilateral.radius"));
        assert!(RunConfig::from_json_str(r#"{"betta": 0.5}"#).is_err());
        assert!(RunConfig::from_json_str("{").is_err());
        let cfg = RunConfig::from_json_str(r#"{"fuse_mode": "literal", "guidance_mode": "literal"}"#).unwrap();
        assert_eq!(cfg.fuse_mode, FuseMode::Literal);
        assert_eq!(cfg.guidance_mode, GuidanceMode::Literal);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = RunConfig::from_json_str(r#"{"beta": 0.2, "tau": 110, "flow": {"iterations": 2}}"#).unwrap();
        let b = RunConfig::from_json_str(r#"{"flow": {"iterations": 2}, "tau": 110, "beta": 0.2}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn set_overrides() {
        let mut doc = serde_json::json!({"beta": 0.1});
        apply_override(&mut doc, "beta=0.4").unwrap();
        apply_override(&mut doc, "bilateral.sigma_range=0.05").unwrap();
        apply_override(&mut doc, "fuse_mode=literal").unwrap();
        apply_override(&mut doc, "adaptive=false").unwrap();
        let cfg = RunConfig::from_value(doc.clone()).unwrap();
        assert_eq!(cfg.beta, 0.4);
        assert_eq!(cfg.bilateral.sigma_range, 0.05);
        assert_eq!(cfg.fuse_mode, FuseMode::Literal);
        assert!(!cfg.adaptive);
        assert!(apply_override(&mut doc, "beta").is_err());
        assert!(apply_override(&mut doc, "beta.x=1").is_err());
        assert!(apply_override(&mut doc, ".x=1").is_err());
    }

    #[test]
    fn sequence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..3).map(|s| detailed_scene(17, 11, s)).collect();
        let m = save_sequence(&frames, dir.path(), 30.0).unwrap();
        assert_eq!(m.frame_paths[2], PathBuf::from("f0002.png"));
        assert!(dir.path().join("f0000.png").is_file());
        let (loaded, manifest) = load_sequence(dir.path()).unwrap();
        assert_eq!(manifest.fps, 30.0);
        assert_eq!((manifest.width, manifest.height), (17, 11));
        for (a, b) in frames.iter().zip(&loaded) {
            assert!(a.max_abs_diff(b).unwrap() <= 0.5 / 255.0 + 1e-12);
        }
        let (via_file, _) = load_sequence(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(via_file, loaded);
        assert!(save_sequence(&[], dir.path(), 24.0).is_err());
    }

    #[test]
    fn directory_listing_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("f002.png", 200u8), ("f000.png", 0), ("f001.png", 100)] {
            RgbImage::from_pixel(4, 3, image::Rgb([v, v, v])).save(dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let (frames, m) = load_sequence(dir.path()).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(m.fps, 24.0);
        let firsts: Vec<u8> = frames.iter().map(|f| f.to_rgb8()[0]).collect();
        assert_eq!(firsts, vec![0, 100, 200]);
    }

    #[test]
    fn rejects_mixed_sizes_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::new(4, 3).save(dir.path().join("a.png")).unwrap();
        RgbImage::new(5, 3).save(dir.path().join("b.png")).unwrap();
        assert!(matches!(load_sequence(dir.path()), Err(Error::DimensionMismatch { .. })));
        let empty = tempfile::tempdir().unwrap();
        assert!(load_sequence(empty.path()).is_err());
        let err = load_sequence(&empty.path().join("missing")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn reads_16_bit_and_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Rgba<u16>, _>::from_pixel(2, 2, image::Rgba([65535u16, 32768, 0, 1000]));
        img.save(dir.path().join("x.png")).unwrap();
        let (frames, _) = load_sequence(dir.path()).unwrap();
        let p = frames[0].pixel(1, 1);
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 32768.0 / 65535.0).abs() < 1e-12);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn pgm_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.pgm");
        write_pgm(&Plane::filled(3, 2, 1.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
    }
}
