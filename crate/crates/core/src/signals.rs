//! Spherical test signals: band-limited synthetics from real spherical
//! harmonics, constants, noise, planar images pasted onto the sphere through
//! a gnomonic projection, and IDX image/label ingestion.

use std::f64::consts::PI;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::icosphere::{node_count, IcosphereHierarchy};
use crate::lifting::SphericalSignal;
use crate::mat::Mat;

/// Real orthonormal spherical harmonic Y_{l,m} at a unit vector, via the
/// fully normalized associated-Legendre recurrence (stable far beyond the
/// band limits used here; no Condon-Shortley phase, so Y_{1,1} ∝ +x).
pub fn real_sph_harm(l: usize, m: isize, p: [f64; 3]) -> f64 {
    let am = m.unsigned_abs();
    assert!(am <= l, "|m| must not exceed l");
    let z = p[2];
    let s = (1.0 - z * z).max(0.0).sqrt();

    // P̄_am^am up the diagonal, then raise the degree to l.
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for k in 1..=am {
        pmm *= ((2 * k + 1) as f64 / (2 * k) as f64).sqrt() * s;
    }
    let plm = if l == am {
        pmm
    } else {
        let mut p_prev = pmm;
        let mut p_curr = ((2 * am + 3) as f64).sqrt() * z * pmm;
        for deg in (am + 2)..=l {
            let fl = deg as f64;
            let fm = am as f64;
            let a = ((4.0 * fl * fl - 1.0) / (fl * fl - fm * fm)).sqrt();
            let b = (((fl - 1.0) * (fl - 1.0) - fm * fm) / (4.0 * (fl - 1.0) * (fl - 1.0) - 1.0)).sqrt();
            let next = a * (z * p_curr - b * p_prev);
            p_prev = p_curr;
            p_curr = next;
        }
        p_curr
    };

    if m == 0 {
        plm
    } else {
        let phi = p[1].atan2(p[0]);
        let mphi = am as f64 * phi;
        let angular = if m > 0 { mphi.cos() } else { mphi.sin() };
        std::f64::consts::SQRT_2 * plm * angular
    }
}

/// Number of harmonics with degree ≤ band limit.
pub fn harmonic_count(band_limit: usize) -> usize {
    (band_limit + 1) * (band_limit + 1)
}

/// Evaluate every Y_{l,m} with l ≤ band_limit at one point, ordered
/// (0,0), (1,-1), (1,0), (1,1), (2,-2), ...
pub fn harmonic_basis(band_limit: usize, p: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(harmonic_count(band_limit));
    for l in 0..=band_limit {
        for m in -(l as isize)..=(l as isize) {
            out.push(real_sph_harm(l, m, p));
        }
    }
    out
}

/// What synthetic signal to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Constant,
    Bandlimited,
    Noise,
}

/// Recipe for a synthetic spherical signal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SignalKind,
    pub level: usize,
    pub channels: usize,
    /// Maximum spherical-harmonic degree (bandlimited kind only).
    pub band_limit: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self, h: &IcosphereHierarchy) -> Result<()> {
        if self.level > h.max_level() {
            return Err(CoreError::LevelOutOfRange {
                level: self.level,
                reason: format!("mesh only reaches level {}", h.max_level()),
            });
        }
        if self.channels == 0 {
            return Err(CoreError::InvalidConfig("channels must be >= 1".into()));
        }
        if !self.amplitude.is_finite() || self.amplitude < 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "amplitude must be finite and nonnegative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Draw the signal described by `spec` on the mesh. Deterministic in
/// `spec.seed`. Bandlimited signals are random harmonic combinations
/// rescaled per channel to [0, amplitude]; a channel with no spatial
/// variation (band_limit 0) settles at amplitude/2.
pub fn generate(spec: &SyntheticSpec, h: &IcosphereHierarchy) -> Result<SphericalSignal<f64>> {
    spec.validate(h)?;
    let n = node_count(spec.level);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = match spec.kind {
        SignalKind::Constant => Mat::filled(n, spec.channels, spec.amplitude),
        SignalKind::Noise => Mat::from_fn(n, spec.channels, |_, _| rng.gen_range(0.0..=spec.amplitude)),
        SignalKind::Bandlimited => {
            let terms = harmonic_count(spec.band_limit);
            // Coefficients first (channel-major) so the node loop below
            // cannot perturb the stream order.
            let coeffs: Vec<f64> =
                (0..spec.channels * terms).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let coords = h.coords(spec.level);
            let mut raw = Mat::zeros(n, spec.channels);
            for (i, &p) in coords.iter().enumerate().take(n) {
                let basis = harmonic_basis(spec.band_limit, p);
                for ch in 0..spec.channels {
                    let mut acc = 0.0;
                    for (t, &b) in basis.iter().enumerate() {
                        acc += coeffs[ch * terms + t] * b;
                    }
                    *raw.at_mut(i, ch) = acc;
                }
            }
            // Min-max rescale each channel into [0, amplitude].
            for ch in 0..spec.channels {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for i in 0..n {
                    lo = lo.min(raw.at(i, ch));
                    hi = hi.max(raw.at(i, ch));
                }
                let span = hi - lo;
                for i in 0..n {
                    let v = raw.at_mut(i, ch);
                    *v = if span > 1e-12 {
                        (*v - lo) / span * spec.amplitude
                    } else {
                        spec.amplitude / 2.0
                    };
                }
            }
            raw
        }
    };
    SphericalSignal::new(spec.level, values)
}

/// Planar raster with 1 (grayscale) or 3 (RGB) interleaved byte channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<u8>,
}

impl ImageGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::BadData("empty image".into()));
        }
        if !(channels == 1 || channels == 3) {
            return Err(CoreError::BadData(format!("{channels} channels; expected 1 or 3")));
        }
        if data.len() != rows * cols * channels {
            return Err(CoreError::BadData(format!(
                "image payload is {} bytes, expected {}",
                data.len(),
                rows * cols * channels
            )));
        }
        Ok(ImageGrid { rows, cols, channels, data })
    }

    pub fn pixel(&self, r: usize, c: usize, ch: usize) -> u8 {
        self.data[(r * self.cols + c) * self.channels + ch]
    }
}

/// Sphere-to-plane convention for pasting images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Tangent plane at (0,0,1); a node (x,y,z) with z > 0 lands at
    /// (x/z, y/z).
    Gnomonic,
}

/// Half-width of the square image footprint on the tangent plane. The solid
/// angle of the square {|u|,|v| ≤ w} under gnomonic projection is
/// 4·asin(w²/(1+w²)); w = 1.2 gives 2.53 sr ≈ 20% of the sphere.
pub const FOOTPRINT_HALF_WIDTH: f64 = 1.2;

/// Paste `img` onto the mesh at `level`: nodes inside the footprint sample
/// their nearest pixel (bytes rescaled to [0,1]), nodes outside read zero.
pub fn project_image(
    img: &ImageGrid,
    h: &IcosphereHierarchy,
    level: usize,
    projection: Projection,
) -> Result<SphericalSignal<f64>> {
    let Projection::Gnomonic = projection;
    if level > h.max_level() {
        return Err(CoreError::LevelOutOfRange {
            level,
            reason: format!("mesh only reaches level {}", h.max_level()),
        });
    }
    if img.rows == 0 || img.cols == 0 {
        return Err(CoreError::BadData("empty image".into()));
    }
    let n = node_count(level);
    let w = FOOTPRINT_HALF_WIDTH;
    let mut values = Mat::zeros(n, img.channels);
    for (i, &p) in h.coords(level).iter().enumerate().take(n) {
        let [x, y, z] = p;
        if z <= 0.0 {
            continue;
        }
        let u = x / z;
        let v = y / z;
        if u.abs() > w || v.abs() > w {
            continue;
        }
        // u → column, v → row; a 1-pixel image degenerates to that pixel.
        let col = if img.cols == 1 {
            0
        } else {
            (((u + w) / (2.0 * w) * (img.cols - 1) as f64).round() as usize).min(img.cols - 1)
        };
        let row = if img.rows == 1 {
            0
        } else {
            (((v + w) / (2.0 * w) * (img.rows - 1) as f64).round() as usize).min(img.rows - 1)
        };
        for ch in 0..img.channels {
            *values.at_mut(i, ch) = img.pixel(row, col, ch) as f64 / 255.0;
        }
    }
    SphericalSignal::new(level, values)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Contents of one IDX file: either an image stack or a label list,
/// dispatched on the magic number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images(Vec<ImageGrid>),
    Labels(Vec<u8>),
}

fn read_be_u32(r: &mut impl std::io::Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| CoreError::BadData(format!("truncated IDX file: missing {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse an IDX file (big-endian headers, byte payload).
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut r = std::io::BufReader::new(file);
    let magic = read_be_u32(&mut r, "magic")?;
    match magic {
        IDX_IMAGES_MAGIC => {
            let count = read_be_u32(&mut r, "image count")? as usize;
            let rows = read_be_u32(&mut r, "row count")? as usize;
            let cols = read_be_u32(&mut r, "column count")? as usize;
            if rows == 0 || cols == 0 {
                return Err(CoreError::BadData("IDX image dimensions must be nonzero".into()));
            }
            let mut images = Vec::with_capacity(count);
            for i in 0..count {
                let mut data = vec![0u8; rows * cols];
                r.read_exact(&mut data).map_err(|_| {
                    CoreError::BadData(format!("truncated IDX file: image {i} of {count} incomplete"))
                })?;
                images.push(ImageGrid::new(rows, cols, 1, data)?);
            }
            Ok(IdxData::Images(images))
        }
        IDX_LABELS_MAGIC => {
            let count = read_be_u32(&mut r, "label count")? as usize;
            let mut labels = vec![0u8; count];
            r.read_exact(&mut labels)
                .map_err(|_| CoreError::BadData(format!("truncated IDX file: {count} labels expected")))?;
            Ok(IdxData::Labels(labels))
        }
        other => Err(CoreError::BadData(format!("bad IDX magic 0x{other:08x}"))),
    }
}

/// Write a grayscale image stack in IDX format. All images must share one
/// shape.
pub fn write_idx_images(path: impl AsRef<Path>, images: &[ImageGrid]) -> Result<()> {
    let (rows, cols) = match images.first() {
        Some(first) => (first.rows, first.cols),
        None => return Err(CoreError::BadData("cannot write an empty IDX image stack".into())),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.rows != rows || img.cols != cols || img.channels != 1 {
            return Err(CoreError::BadData("IDX images must be same-shape grayscale".into()));
        }
        out.extend_from_slice(&img.data);
    }
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&out)?;
    Ok(())
}

/// Write labels in IDX format.
pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(&out)?;
    Ok(())
}
