//! Synthetic gaze dataset: stylized face renders whose iris offsets encode
//! the gaze label, plus the on-disk dataset format (TOML manifest, label
//! CSV, concatenated tensor blob).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GazeAngles;
use crate::tensor::{read_tensor, write_tensor, Dtype, Tensor};

/// Iris offset per radian of gaze, in pixels: k = size / 8.
fn gaze_gain(size: usize) -> f64 {
    size as f64 / 8.0
}

const BG_LEVEL: f64 = 0.35;
const FACE_LEVEL: f64 = 0.65;
const SCLERA_LEVEL: f64 = 0.92;
const IRIS_LEVEL: f64 = 0.08;
const NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: Tensor, // [3, s, s], values in [0,1]
    pub label: GazeAngles,
}

/// Uniform sampling ranges for dataset labels, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRange {
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
}

impl Default for AngleRange {
    fn default() -> AngleRange {
        AngleRange {
            pitch_min: -0.35,
            pitch_max: 0.35,
            yaw_min: -0.5,
            yaw_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub image_size: usize,
    pub labels_csv: String,
    pub images_blob: String,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn eye_geometry(size: usize) -> ((f64, f64), (f64, f64), f64, f64, f64) {
    let s = size as f64;
    let left = (0.40 * s, 0.30 * s); // (row, col)
    let right = (0.40 * s, 0.70 * s);
    let sclera_rx = 0.12 * s; // horizontal semi-axis
    let sclera_ry = 0.11 * s; // vertical semi-axis
    let iris_r = 0.045 * s;
    (left, right, sclera_rx, sclera_ry, iris_r)
}

/// Render one sample with explicit noise controls; `render_sample` applies
/// the default seeded noise and brightness jitter.
pub fn render_sample_with_noise(
    label: GazeAngles,
    size: usize,
    seed: u64,
    noise_sigma: f64,
    brightness_jitter: bool,
) -> Result<SyntheticSample> {
    if !size.is_power_of_two() || size < 32 {
        return Err(Error::InvalidArgument(format!(
            "render size {size} must be a power of two >= 32"
        )));
    }
    let s = size as f64;
    let ((ly, lx), (ry, rx), srx, sry, iris_r) = eye_geometry(size);
    let k = gaze_gain(size);
    // (column, row) iris offset = (k*yaw, k*pitch)
    let dx = k * label.yaw;
    let dy = k * label.pitch;

    let mut gray = vec![BG_LEVEL; size * size];
    let face_c = (0.5 * s, 0.5 * s);
    let (face_ry, face_rx) = (0.42 * s, 0.34 * s);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let fr = (y - face_c.0) / face_ry;
            let fc = (x - face_c.1) / face_rx;
            if fr * fr + fc * fc <= 1.0 {
                gray[r * size + c] = FACE_LEVEL;
            }
            for &(ey, ex) in &[(ly, lx), (ry, rx)] {
                let er = (y - ey) / sry;
                let ec = (x - ex) / srx;
                if er * er + ec * ec <= 1.0 {
                    gray[r * size + c] = SCLERA_LEVEL;
                    let iy = y - (ey + dy);
                    let ix = x - (ex + dx);
                    if iy * iy + ix * ix <= iris_r * iris_r {
                        gray[r * size + c] = IRIS_LEVEL;
                    }
                }
            }
        }
    }

    // image is a pure function of (label, seed, size)
    let mix = seed
        ^ label.pitch.to_bits().rotate_left(17)
        ^ label.yaw.to_bits().rotate_left(41)
        ^ (size as u64).wrapping_mul(0x9e3779b97f4a7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let brightness = if brightness_jitter {
        1.0 + rng.gen_range(-0.1..0.1)
    } else {
        1.0
    };

    let mut data = Vec::with_capacity(3 * size * size);
    for _ch in 0..3 {
        for &g in &gray {
            let noise = if noise_sigma > 0.0 {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                noise_sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            } else {
                0.0
            };
            data.push((g * brightness + noise).clamp(0.0, 1.0));
        }
    }
    Ok(SyntheticSample {
        image: Tensor::from_vec(&[3, size, size], data)?,
        label,
    })
}

pub fn render_sample(label: GazeAngles, size: usize, seed: u64) -> Result<SyntheticSample> {
    render_sample_with_noise(label, size, seed, NOISE_SIGMA, true)
}

/// Closed-form label estimator: centroid of dark pixels inside each eye
/// region, inverted through the rendering geometry. On noiseless renders
/// this recovers labels to a fraction of a degree and bounds what a trained
/// model should approach.
pub fn estimate_label(image: &Tensor) -> Result<GazeAngles> {
    let [c, h, w] = image.dims3()?;
    if c != 3 || h != w {
        return Err(Error::InvalidArgument(format!(
            "expected [3, s, s] image, got {:?}",
            image.shape()
        )));
    }
    let size = h;
    let ((ly, lx), (ry, rx), srx, sry, _) = eye_geometry(size);
    let k = gaze_gain(size);

    let mut total_dx = 0.0;
    let mut total_dy = 0.0;
    let mut eyes = 0;
    for &(ey, ex) in &[(ly, lx), (ry, rx)] {
        let mut sum_x = 0.0;
        let mut sum_y = 0.0;
        let mut count = 0.0;
        let r0 = (ey - sry).floor().max(0.0) as usize;
        let r1 = ((ey + sry).ceil() as usize).min(size);
        let c0 = (ex - srx).floor().max(0.0) as usize;
        let c1 = ((ex + srx).ceil() as usize).min(size);
        for r in r0..r1 {
            for cc in c0..c1 {
                let v = image.data()[r * size + cc]; // channel 0
                if v < 0.3 {
                    sum_y += r as f64 + 0.5;
                    sum_x += cc as f64 + 0.5;
                    count += 1.0;
                }
            }
        }
        if count > 0.0 {
            total_dx += sum_x / count - ex;
            total_dy += sum_y / count - ey;
            eyes += 1;
        }
    }
    if eyes == 0 {
        return Err(Error::InvalidArgument(
            "no iris pixels found in eye regions".into(),
        ));
    }
    Ok(GazeAngles {
        yaw: total_dx / eyes as f64 / k,
        pitch: total_dy / eyes as f64 / k,
    })
}

/// Generate `n` samples and write manifest, label CSV, and image blob into
/// `out_dir`.
pub fn generate_dataset(
    n: usize,
    size: usize,
    seed: u64,
    range: AngleRange,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset must have n >= 1".into()));
    }
    if range.pitch_min > range.pitch_max || range.yaw_min > range.yaw_max {
        return Err(Error::InvalidArgument("empty angle range".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let csv_path = out_dir.join("labels.csv");
    let blob_path = out_dir.join("images.bin");
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
    let mut blob = BufWriter::new(File::create(&blob_path).map_err(|e| Error::io(&blob_path, e))?);

    writeln!(csv, "index,pitch_rad,yaw_rad").map_err(|e| Error::io(&csv_path, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let label = GazeAngles {
            pitch: sample_range(&mut rng, range.pitch_min, range.pitch_max),
            yaw: sample_range(&mut rng, range.yaw_min, range.yaw_max),
        };
        let sample = render_sample(label, size, seed.wrapping_add(i as u64))?;
        writeln!(csv, "{i},{},{}", label.pitch, label.yaw).map_err(|e| Error::io(&csv_path, e))?;
        write_tensor(&mut blob, &sample.image, Dtype::F64).map_err(|e| Error::io(&blob_path, e))?;
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    blob.flush().map_err(|e| Error::io(&blob_path, e))?;

    let manifest = DatasetManifest {
        count: n,
        image_size: size,
        labels_csv: "labels.csv".into(),
        images_blob: "images.bin".into(),
        base_dir: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.toml");
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = toml::from_str(&text)
        .map_err(|e| Error::Format(format!("bad manifest {}: {e}", path.display())))?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(manifest)
}

/// Load every sample described by the manifest, verifying counts match.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<SyntheticSample>> {
    let csv_path = manifest.base_dir.join(&manifest.labels_csv);
    let blob_path = manifest.base_dir.join(&manifest.images_blob);
    let csv = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;

    let mut labels = Vec::new();
    for (lineno, line) in csv.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "index,pitch_rad,yaw_rad" {
                return Err(Error::Format(format!(
                    "unexpected label CSV header: '{line}'"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "label CSV line {lineno}: expected 3 fields, got {}",
                fields.len()
            )));
        }
        let pitch: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Format(format!("label CSV line {lineno}: bad pitch")))?;
        let yaw: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("label CSV line {lineno}: bad yaw")))?;
        labels.push(GazeAngles { pitch, yaw });
    }
    if labels.len() != manifest.count {
        return Err(Error::Integrity(format!(
            "manifest count {} vs {} CSV rows",
            manifest.count,
            labels.len()
        )));
    }

    let file = File::open(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut reader = BufReader::new(file);
    let mut samples = Vec::with_capacity(labels.len());
    for label in labels {
        let image = read_tensor(&mut reader)?;
        if image.shape() != [3, manifest.image_size, manifest.image_size] {
            return Err(Error::Integrity(format!(
                "image record shape {:?} vs manifest size {}",
                image.shape(),
                manifest.image_size
            )));
        }
        samples.push(SyntheticSample { image, label });
    }
    // the blob must contain exactly `count` records
    let mut probe = [0u8; 1];
    match reader.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Integrity(format!(
                "image blob has trailing data after {} records",
                manifest.count
            )))
        }
        Err(e) => return Err(Error::io(&blob_path, e)),
    }
    Ok(samples)
}
