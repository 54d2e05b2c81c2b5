//! On-disk dataset format: per-sample directories of binary PGM files and a
//! manifest with CRC32 checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ribforge_core::{ChannelGroups, Tensor};

use crate::error::{io_err, DataError, Result};
use crate::sample::{MaskSet, Provenance, Sample};

pub const FORMAT_VERSION: u32 = 1;
pub const IMAGE_FILE: &str = "image.pgm";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub groups: ChannelGroups,
    pub provenance: Provenance,
    pub seed: u64,
    /// Relative file path → lowercase hex CRC32.
    pub crc32: BTreeMap<String, String>,
}

/// Binary greymap (`P5`, maxval 255, row-major).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a `P5` file with maxval 255, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8], file: &str) -> Result<(usize, usize, Vec<u8>)> {
    let fail = |msg: &str| DataError::Format { file: file.to_string(), msg: msg.to_string() };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(fail("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> { token()?.parse().map_err(|_| fail(&format!("bad {what}"))) };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(fail("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let need = w.checked_mul(h).ok_or_else(|| fail("extent overflow"))?;
    if bytes.len() < start || bytes.len() - start != need {
        return Err(fail(&format!("expected {need} raster bytes")));
    }
    Ok((w, h, bytes[start..].to_vec()))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn plane_bytes(plane: &[f32]) -> Vec<u8> {
    plane.iter().map(|&v| quantize(v)).collect()
}

fn mask_file(prefix: &str, i: usize, width: usize) -> String {
    format!("masks/{prefix}_{i:0width$}.pgm")
}

/// File names of every mask channel in stacked order.
pub fn mask_files(groups: &ChannelGroups) -> Vec<String> {
    let rib_w = groups.ribs.saturating_sub(1).to_string().len().max(2);
    let mut v: Vec<String> = (0..groups.ribs).map(|i| mask_file("rib", i, rib_w)).collect();
    v.extend((0..groups.lungs).map(|i| mask_file("lung", i, 1)));
    v.extend((0..groups.clavicles).map(|i| mask_file("clav", i, 1)));
    v
}

fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// Writes `sample` into `dir` (created if missing).
pub fn write_sample(sample: &Sample, dir: &Path) -> Result<()> {
    sample.validate()?;
    let (h, w) = sample.masks.extent();
    let groups = sample.masks.groups();
    fs::create_dir_all(dir.join("masks")).map_err(io_err(dir))?;
    let mut crc = BTreeMap::new();
    let mut put = |name: String, pixels: Vec<u8>| -> Result<()> {
        let bytes = encode_pgm(w, h, &pixels);
        crc.insert(name.clone(), crc_hex(&bytes));
        let path = dir.join(&name);
        fs::write(&path, bytes).map_err(io_err(&path))
    };
    put(IMAGE_FILE.to_string(), plane_bytes(sample.image.data()))?;
    for (c, name) in mask_files(&groups).into_iter().enumerate() {
        put(name, plane_bytes(sample.masks.channel(c)))?;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        height: h,
        width: w,
        groups,
        provenance: sample.provenance,
        seed: sample.seed,
        crc32: crc,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| DataError::Format { file: path.display().to_string(), msg: e.to_string() })?;
    if m.version != FORMAT_VERSION {
        return Err(DataError::Format { file: path.display().to_string(), msg: format!("unsupported version {}", m.version) });
    }
    Ok(m)
}

/// Reads and verifies one sample directory. Images come back quantised to
/// multiples of 1/255.
pub fn read_sample(dir: &Path) -> Result<Sample> {
    let m = read_manifest(dir)?;
    let (h, w) = (m.height, m.width);
    let load = |name: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let expected = m.crc32.get(name).ok_or_else(|| DataError::Format {
            file: path.display().to_string(),
            msg: "no checksum in manifest".into(),
        })?;
        let actual = crc_hex(&bytes);
        if &actual != expected {
            return Err(DataError::Checksum { file: path.display().to_string(), expected: expected.clone(), actual });
        }
        let (pw, ph, px) = decode_pgm(&bytes, &path.display().to_string())?;
        if (pw, ph) != (w, h) {
            return Err(DataError::Format {
                file: path.display().to_string(),
                msg: format!("extent {pw}x{ph} disagrees with manifest {w}x{h}"),
            });
        }
        Ok(px)
    };
    let image: Vec<f32> = load(IMAGE_FILE)?.into_iter().map(|b| b as f32 / 255.0).collect();
    let mut stack = Vec::with_capacity(m.groups.total() * h * w);
    for name in mask_files(&m.groups) {
        let px = load(&name)?;
        if px.iter().any(|&b| b != 0 && b != 255) {
            return Err(DataError::Format { file: dir.join(&name).display().to_string(), msg: "mask is not binary".into() });
        }
        stack.extend(px.into_iter().map(|b| if b == 255 { 1.0f32 } else { 0.0 }));
    }
    let stack = Tensor::from_vec(&[m.groups.total(), h, w], stack).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(Sample {
        image: Tensor::from_vec(&[1, h, w], image).map_err(|e| DataError::Invalid(e.to_string()))?,
        masks: MaskSet::from_stacked(&stack, &m.groups)?,
        provenance: m.provenance,
        seed: m.seed,
    })
}

/// Image values as they read back from disk.
pub fn quantize_image(image: &Tensor<f32>) -> Tensor<f32> {
    image.map(|v| quantize(v) as f32 / 255.0)
}

/// Sample identifiers of a split directory, sorted.
pub fn list_samples(split_dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(split_dir).map_err(io_err(split_dir))? {
        let entry = entry.map_err(io_err(split_dir))?;
        if entry.path().join(MANIFEST_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Every sample of a split directory, in identifier order.
pub fn read_split(split_dir: &Path) -> Result<Vec<Sample>> {
    list_samples(split_dir)?.iter().map(|id| read_sample(&split_dir.join(id))).collect()
}

/// Writes samples as `<dir>/<prefix><index>` directories.
pub fn write_split(samples: &[Sample], dir: &Path, prefix: &str) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let width = samples.len().saturating_sub(1).to_string().len().max(4);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = format!("{prefix}{i:0width$}");
            write_sample(s, &dir.join(&id))?;
            Ok(id)
        })
        .collect()
}
