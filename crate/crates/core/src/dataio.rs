//! Dataset manifest and raster files.
//!
//! Layout on disk: a `manifest.json` next to the rasters it references.
//! RGB is 8-bit PNG, depth is 16-bit grayscale PNG (`raw * scale` meters,
//! `sky_sentinel` for sky), semantic labels are 8-bit grayscale PNG holding
//! palette ids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::RgbImage;
use crate::scenegen::{class, RenderedTuple, SKY_DEPTH};
use crate::solarpos::{SunGrid, SunPosition};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Meters per depth unit used by the renderer.
pub const DEPTH_SCALE: f64 = 0.01;
pub const DEPTH_SENTINEL: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Png { path: PathBuf, msg: String },
    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("manifest format version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("entry {entry}: missing file {path}")]
    MissingFile { entry: String, path: PathBuf },
    #[error("entry {entry}: class id {class_id} is not in the palette")]
    UnknownClass { entry: String, class_id: u8 },
    #[error("entry {entry}: {detail}")]
    DimensionMismatch { entry: String, detail: String },
    #[error("entry {entry}: {reason}")]
    InvalidEntry { entry: String, reason: String },
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn png(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Png {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: u8,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEncoding {
    /// Meters per stored unit.
    pub scale: f64,
    /// Stored value meaning "no surface" (sky).
    pub sky_sentinel: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scene_id: usize,
    pub split: Split,
    /// Paths are relative to the manifest's directory.
    pub rgb: String,
    pub depth: String,
    pub semseg: String,
    pub azimuth: f64,
    pub zenith: f64,
}

impl ManifestEntry {
    pub fn sun(&self) -> SunPosition {
        SunPosition {
            azimuth: self.azimuth,
            zenith: self.zenith,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub palette: Vec<PaletteEntry>,
    pub depth: DepthEncoding,
    pub entries: Vec<ManifestEntry>,
    /// Directory the relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Manifest with the renderer's palette and depth encoding.
    pub fn synthetic(entries: Vec<ManifestEntry>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            palette: class::NAMES
                .iter()
                .enumerate()
                .map(|(id, name)| PaletteEntry {
                    id: id as u8,
                    name: (*name).to_string(),
                })
                .collect(),
            depth: DepthEncoding {
                scale: DEPTH_SCALE,
                sky_sentinel: DEPTH_SENTINEL,
            },
            entries,
            root: PathBuf::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.palette.iter().map(|p| p.id as usize + 1).max().unwrap_or(0)
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Copy restricted to one split; everything else is kept.
    pub fn subset(&self, split: Split) -> Manifest {
        let mut m = self.clone();
        m.entries.retain(|e| e.split == split);
        m
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Schema checks that do not touch the file system.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.format_version != FORMAT_VERSION {
            return Err(DataError::UnsupportedVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if !(self.depth.scale > 0.0 && self.depth.scale.is_finite()) {
            return Err(DataError::Manifest {
                path: self.root.clone(),
                msg: format!("depth scale {} must be positive", self.depth.scale),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.palette {
            if !seen.insert(p.id) {
                return Err(DataError::Manifest {
                    path: self.root.clone(),
                    msg: format!("palette id {} declared twice", p.id),
                });
            }
        }
        let mut scene_split: BTreeMap<usize, Split> = BTreeMap::new();
        for e in &self.entries {
            e.sun().validate().map_err(|err| DataError::InvalidEntry {
                entry: e.id.clone(),
                reason: err.to_string(),
            })?;
            if let Some(prev) = scene_split.insert(e.scene_id, e.split) {
                if prev != e.split {
                    return Err(DataError::InvalidEntry {
                        entry: e.id.clone(),
                        reason: format!("scene {} appears in both splits", e.scene_id),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_files(&self) -> Result<(), DataError> {
        for e in &self.entries {
            for rel in [&e.rgb, &e.depth, &e.semseg] {
                let path = self.resolve(rel);
                if !path.is_file() {
                    return Err(DataError::MissingFile {
                        entry: e.id.clone(),
                        path,
                    });
                }
            }
        }
        Ok(())
    }

    /// Loads one entry, applying `grid` to its sun angles.
    pub fn load(&self, entry: &ManifestEntry, grid: &SunGrid) -> Result<RenderedTuple, DataError> {
        let mut t = load_tuple(self, entry)?;
        t.sun = grid.apply(&t.sun).map_err(|err| DataError::InvalidEntry {
            entry: entry.id.clone(),
            reason: err.to_string(),
        })?;
        Ok(t)
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), DataError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

/// Reads and validates a manifest, checking that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| DataError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    // check the version before the schema so old/new files get a precise error
    if let Some(v) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if v != u64::from(FORMAT_VERSION) {
            return Err(DataError::UnsupportedVersion {
                found: v as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let mut m: Manifest = serde_json::from_value(raw).map_err(|e| DataError::Manifest {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;
    m.check_files()?;
    Ok(m)
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| DataError::io(path, e))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<(), DataError> {
    let mut enc = png::Encoder::new(create(path)?, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(|e| DataError::png(path, e))?;
    w.write_image_data(bytes).map_err(|e| DataError::png(path, e))?;
    w.finish().map_err(|e| DataError::png(path, e))
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn read_png(path: &Path) -> Result<Decoded, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| DataError::png(path, e))?;
    let mut bytes = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut bytes).map_err(|e| DataError::png(path, e))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

/// Writes RGB quantized to 8 bits per channel.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), DataError> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .flat_map(|px| px.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    write_png(path, img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// Reads 8-bit RGB or RGBA (alpha ignored) into `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<RgbImage, DataError> {
    let d = read_png(path)?;
    if d.depth != png::BitDepth::Eight {
        return Err(DataError::png(path, format!("expected 8-bit color, found {:?}", d.depth)));
    }
    let stride = match d.color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(DataError::png(path, format!("expected RGB, found {other:?}"))),
    };
    let data = d
        .bytes
        .chunks_exact(stride)
        .map(|c| [c[0], c[1], c[2]].map(|v| f64::from(v) / 255.0))
        .collect();
    Ok(RgbImage {
        width: d.width,
        height: d.height,
        data,
    })
}

pub fn write_depth(path: &Path, depth: &[f64], width: usize, height: usize, scale: f64) -> Result<(), DataError> {
    let bytes: Vec<u8> = depth
        .iter()
        .flat_map(|&d| {
            let raw = if d >= SKY_DEPTH || !d.is_finite() {
                DEPTH_SENTINEL
            } else {
                (d / scale).round().clamp(0.0, f64::from(DEPTH_SENTINEL - 1)) as u16
            };
            raw.to_be_bytes()
        })
        .collect();
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Raw 16-bit depth units.
pub fn read_depth_raw(path: &Path) -> Result<(usize, usize, Vec<u16>), DataError> {
    let d = read_png(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(DataError::png(path, "depth must be 16-bit grayscale"));
    }
    let raw = d.bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((d.width, d.height, raw))
}

pub fn write_semseg(path: &Path, labels: &[u8], width: usize, height: usize) -> Result<(), DataError> {
    write_png(path, width, height, png::ColorType::Grayscale, png::BitDepth::Eight, labels)
}

pub fn read_semseg(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let d = read_png(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Eight {
        return Err(DataError::png(path, "labels must be 8-bit grayscale ids"));
    }
    Ok((d.width, d.height, d.bytes))
}

/// Stored depth units to meters; the sentinel maps to [`SKY_DEPTH`].
pub fn decode_depth(raw: &[u16], enc: &DepthEncoding) -> Vec<f64> {
    raw.iter()
        .map(|&r| {
            if r == enc.sky_sentinel {
                SKY_DEPTH
            } else {
                f64::from(r) * enc.scale
            }
        })
        .collect()
}

/// Decodes the three rasters of an entry and checks them against the manifest.
pub fn load_tuple(manifest: &Manifest, entry: &ManifestEntry) -> Result<RenderedTuple, DataError> {
    let rgb = read_rgb(&manifest.resolve(&entry.rgb))?;
    let (dw, dh, raw) = read_depth_raw(&manifest.resolve(&entry.depth))?;
    let (sw, sh, semseg) = read_semseg(&manifest.resolve(&entry.semseg))?;
    if (dw, dh) != (rgb.width, rgb.height) || (sw, sh) != (rgb.width, rgb.height) {
        return Err(DataError::DimensionMismatch {
            entry: entry.id.clone(),
            detail: format!(
                "rgb {}x{}, depth {dw}x{dh}, semseg {sw}x{sh}",
                rgb.width, rgb.height
            ),
        });
    }
    let known: std::collections::BTreeSet<u8> = manifest.palette.iter().map(|p| p.id).collect();
    if let Some(&bad) = semseg.iter().find(|id| !known.contains(id)) {
        return Err(DataError::UnknownClass {
            entry: entry.id.clone(),
            class_id: bad,
        });
    }
    let depth = decode_depth(&raw, &manifest.depth);
    Ok(RenderedTuple {
        width: rgb.width,
        height: rgb.height,
        rgb,
        depth,
        semseg,
        sun: entry.sun(),
    })
}
