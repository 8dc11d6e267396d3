//! Dataset ingestion and preprocessing: manifest CSVs, binary PPM decoding,
//! bilinear resize, normalization, stratified splits, class weights, seeded
//! batch iteration, and the CTEN tensor file format.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Element, Tensor};

/// The fixed ten-class label schema, in canonical order.
pub const CLASS_NAMES: [&str; 10] = [
    "Angioectasia",
    "Bleeding",
    "Erosion",
    "Erythema",
    "Foreign Body",
    "Lymphangiectasia",
    "Normal",
    "Polyp",
    "Ulcer",
    "Worms",
];

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&c| c == name)
}

/// One labeled sample: image path relative to the dataset root.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub label: usize,
}

/// Ordered index of labeled samples under a root directory.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sample count per class, in schema order.
    pub fn histogram(&self) -> [usize; 10] {
        let mut h = [0usize; 10];
        for row in &self.rows {
            h[row.label] += 1;
        }
        h
    }

    /// Errors if any referenced file is missing, listing the first 10 offenders.
    pub fn validate_files(&self) -> Result<()> {
        let missing: Vec<&str> = self
            .rows
            .iter()
            .filter(|r| !self.root.join(&r.path).is_file())
            .map(|r| r.path.as_str())
            .take(10)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::data(format!(
                "missing dataset files (first {}): {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }
}

/// Parses a `path,label` CSV (UTF-8, LF or CRLF, blank lines skipped).
/// Unknown class names and duplicate paths are rejected with their row number.
pub fn load_manifest(csv_path: &Path, root: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(csv_path)
        .map_err(|e| Error::data(format!("cannot read manifest {}: {e}", csv_path.display())))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::data(format!("manifest {} is not UTF-8: {e}", csv_path.display())))?;
    parse_manifest(&text, root)
}

pub fn parse_manifest(text: &str, root: &Path) -> Result<DatasetManifest> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut lines = text.split('\n').enumerate();

    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.strip_suffix('\r').unwrap_or(line);
                if line.is_empty() {
                    if i == 0 {
                        continue;
                    }
                    return Err(Error::data("manifest is missing its header line".to_string()));
                }
                break line;
            }
            None => return Err(Error::data("manifest is empty".to_string())),
        }
    };
    if header != "path,label" {
        return Err(Error::data(format!(
            "manifest header must be 'path,label', got '{header}'"
        )));
    }

    for (i, line) in lines {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let row_no = i + 1; // 1-based file line number
        let Some((path, label)) = line.split_once(',') else {
            return Err(Error::data(format!(
                "malformed manifest row {row_no}: expected 'path,label'"
            )));
        };
        let Some(label_idx) = class_index(label) else {
            return Err(Error::data(format!("unknown class '{label}' at row {row_no}")));
        };
        if !seen.insert(path.to_string()) {
            return Err(Error::data(format!("duplicate path '{path}' at row {row_no}")));
        }
        rows.push(ManifestRow {
            path: path.to_string(),
            label: label_idx,
        });
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        rows,
    })
}

/// 8-bit RGB image, row-major interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

/// Decodes a binary PPM (P6) with maxval 255. Header comments (`#` to end of
/// line) are permitted. Parse errors carry the byte offset of the problem.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::parse(0, "not a binary PPM: magic 'P6' missing"));
    }
    let mut pos = 2usize;
    let width = read_ppm_number(bytes, &mut pos)?;
    let height = read_ppm_number(bytes, &mut pos)?;
    let maxval_at = skip_ppm_whitespace(bytes, pos)?;
    let maxval = read_ppm_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::parse(maxval_at, format!("maxval must be 255, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "expected single whitespace before pixel data"));
    }
    pos += 1;

    let expected = 3 * width * height;
    let available = bytes.len() - pos;
    if available < expected {
        return Err(Error::parse(
            pos + available,
            format!("pixel payload truncated: expected {expected} bytes, got {available}"),
        ));
    }
    Ok(ImageBuffer {
        width,
        height,
        rgb: bytes[pos..pos + expected].to_vec(),
    })
}

/// Advances past whitespace and `#` comments, returning the next token offset.
fn skip_ppm_whitespace(bytes: &[u8], mut pos: usize) -> Result<usize> {
    loop {
        if pos >= bytes.len() {
            return Err(Error::parse(pos, "unexpected end of PPM header"));
        }
        let b = bytes[pos];
        if b.is_ascii_whitespace() {
            pos += 1;
        } else if b == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return Ok(pos);
        }
    }
}

fn read_ppm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let start = skip_ppm_whitespace(bytes, *pos)?;
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::parse(start, "expected an ASCII integer in PPM header"));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("digits are UTF-8");
    let value: usize = text
        .parse()
        .map_err(|_| Error::parse(start, format!("integer '{text}' out of range")))?;
    *pos = end;
    Ok(value)
}

/// Interleaved RGB bytes → planar 3×H×W tensor of byte values (0..255).
pub fn image_to_tensor(img: &ImageBuffer) -> Tensor<f32> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let src = 3 * (y * w + x);
            for c in 0..3 {
                data[(c * h + y) * w + x] = img.rgb[src + c] as f32;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches construction")
}

/// Bilinear resize of a C×H×W tensor with half-pixel centers:
/// `src = (dst + 0.5)·(in/out) − 0.5`, clamped to borders; channels are
/// independent. Interpolation weights are computed in f64.
pub fn resize_bilinear<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() != 3 {
        return Err(Error::contract(format!(
            "resize expects a C×H×W tensor, got {shape:?}"
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("resize target extents must be positive".to_string()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let x = input.data();
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let o = out.data_mut();

    let map = |dst: usize, out_extent: usize, in_extent: usize| -> (usize, usize, f64) {
        let src = (dst as f64 + 0.5) * (in_extent as f64 / out_extent as f64) - 0.5;
        let src = src.clamp(0.0, (in_extent - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(in_extent - 1);
        (lo, hi, src - lo as f64)
    };

    for oy in 0..out_h {
        let (y0, y1, fy) = map(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = map(ox, out_w, w);
            for ci in 0..c {
                let base = ci * h * w;
                let v00 = x[base + y0 * w + x0].as_f64();
                let v01 = x[base + y0 * w + x1].as_f64();
                let v10 = x[base + y1 * w + x0].as_f64();
                let v11 = x[base + y1 * w + x1].as_f64();
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                o[(ci * out_h + oy) * out_w + ox] = T::from_f64(top + (bottom - top) * fy);
            }
        }
    }
    Ok(out)
}

/// Byte-range values → `[−1, 1]`: `x/255`, then `(x − 0.5)/0.5`.
pub fn normalize<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let inv255 = T::from_f64(1.0 / 255.0);
    input.map(|x| (x * inv255 - half) / half)
}

/// Per-class split: `floor(fraction·n_c)` rows to train via a seeded shuffle of
/// that class's rows; the rest go to the holdout. Original manifest order is
/// preserved within each side.
pub fn stratified_split(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!(
            "split fraction must be in (0,1), got {fraction}"
        )));
    }
    let hist = manifest.histogram();
    for (c, &n) in hist.iter().enumerate() {
        if n == 0 {
            return Err(Error::data(format!(
                "class '{}' has no rows; cannot split",
                CLASS_NAMES[c]
            )));
        }
    }

    let mut to_train = vec![false; manifest.len()];
    for c in 0..CLASS_NAMES.len() {
        let indices: Vec<usize> = manifest
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == c)
            .map(|(i, _)| i)
            .collect();
        let take = (fraction * indices.len() as f64).floor() as usize;
        let mut shuffled = indices;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        shuffled.shuffle(&mut rng);
        for &i in shuffled.iter().take(take) {
            to_train[i] = true;
        }
    }

    let pick = |keep: bool| DatasetManifest {
        root: manifest.root.clone(),
        rows: manifest
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| to_train[*i] == keep)
            .map(|(_, r)| r.clone())
            .collect(),
    };
    Ok((pick(true), pick(false)))
}

/// Inverse-frequency α weights: `w_c = N/(K·n_c)`. The weighted mean
/// `Σ n_c·w_c / N` is 1 by construction.
pub fn class_weights(manifest: &DatasetManifest) -> Result<Vec<f64>> {
    let hist = manifest.histogram();
    for (c, &n) in hist.iter().enumerate() {
        if n == 0 {
            return Err(Error::data(format!(
                "class '{}' is absent; cannot compute class weights",
                CLASS_NAMES[c]
            )));
        }
    }
    Ok(class_weights_from_counts(&hist))
}

/// `w_c = N/(K·n_c)` for any class count (callers guarantee n_c ≥ 1).
pub fn class_weights_from_counts(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let k = counts.len();
    counts
        .iter()
        .map(|&c| n as f64 / (k as f64 * c as f64))
        .collect()
}

/// Per-sample preprocessing settings.
#[derive(Clone, Debug)]
pub struct BatchOptions {
    /// Square model input extent; every sample is resized to it.
    pub input_hw: usize,
    /// Random horizontal flips (training only; drawn from the epoch stream).
    pub hflip: bool,
}

/// Materialized inputs and labels for one step.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

pub struct BatchIter<'a> {
    manifest: &'a DatasetManifest,
    opts: BatchOptions,
    order: Vec<usize>,
    flips: Vec<bool>,
    batch_size: usize,
    pos: usize,
}

impl DatasetManifest {
    /// Batches under the permutation seeded by (seed, epoch); the final short
    /// batch is emitted as-is. Samples are decoded → resized → normalized on
    /// demand.
    pub fn batches_shuffled(
        &self,
        opts: &BatchOptions,
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch.wrapping_add(1));
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng);
        let flips = if opts.hflip {
            (0..self.len()).map(|_| rng.gen::<f64>() < 0.5).collect()
        } else {
            vec![false; self.len()]
        };
        Ok(BatchIter {
            manifest: self,
            opts: opts.clone(),
            order,
            flips,
            batch_size,
            pos: 0,
        })
    }

    /// Batches in manifest order with no augmentation (evaluation path).
    pub fn batches_sequential(
        &self,
        opts: &BatchOptions,
        batch_size: usize,
    ) -> Result<BatchIter<'_>> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1".to_string()));
        }
        Ok(BatchIter {
            manifest: self,
            opts: BatchOptions {
                hflip: false,
                ..opts.clone()
            },
            order: (0..self.len()).collect(),
            flips: vec![false; self.len()],
            batch_size,
            pos: 0,
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let span = &self.order[self.pos..end];
        let n = span.len();
        let hw = self.opts.input_hw;
        let mut images = Tensor::zeros(&[n, 3, hw, hw]);
        let mut labels = Vec::with_capacity(n);
        for (slot, &idx) in span.iter().enumerate() {
            let row = &self.manifest.rows[idx];
            let sample = match load_sample(&self.manifest.root, &row.path, hw) {
                Ok(t) => t,
                Err(e) => {
                    self.pos = self.order.len();
                    return Some(Err(e));
                }
            };
            let sample = if self.flips[idx] {
                flip_horizontal(&sample)
            } else {
                sample
            };
            let plane = 3 * hw * hw;
            images.data_mut()[slot * plane..(slot + 1) * plane].copy_from_slice(sample.data());
            labels.push(row.label);
        }
        self.pos = end;
        Some(Ok(Batch { images, labels }))
    }
}

/// Loads one sample as a normalized 3×hw×hw tensor. `.cten` entries are read
/// as pre-decoded 3×H×W byte-range tensors; everything else is binary PPM.
pub fn load_sample(root: &Path, rel_path: &str, hw: usize) -> Result<Tensor<f32>> {
    let full = root.join(rel_path);
    let raw: Tensor<f32> = if rel_path.ends_with(".cten") {
        let t: Tensor<f32> = read_cten(&full)?;
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(Error::data(format!(
                "sample {rel_path}: expected a 3×H×W tensor, got {:?}",
                t.shape()
            )));
        }
        t
    } else {
        let bytes = fs::read(&full)
            .map_err(|e| Error::data(format!("cannot read image {rel_path}: {e}")))?;
        let img = decode_ppm(&bytes).map_err(|e| match e {
            Error::Parse { offset, message } => {
                Error::parse(offset, format!("{rel_path}: {message}"))
            }
            other => other,
        })?;
        image_to_tensor(&img)
    };
    let resized = if raw.shape()[1] == hw && raw.shape()[2] == hw {
        raw
    } else {
        resize_bilinear(&raw, hw, hw)?
    };
    Ok(normalize(&resized))
}

/// Mirrors a C×H×W tensor along the width axis.
pub fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let x = t.data();
    let mut out = Tensor::zeros(&[c, h, w]);
    let o = out.data_mut();
    for ci in 0..c {
        for y in 0..h {
            let base = (ci * h + y) * w;
            for xx in 0..w {
                o[base + xx] = x[base + (w - 1 - xx)];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CTEN tensor files
// ---------------------------------------------------------------------------

const CTEN_MAGIC: &[u8; 4] = b"CTEN";
const CTEN_VERSION: u8 = 1;

/// Serializes a tensor: magic "CTEN", version 1, dtype byte (0 = f32,
/// 1 = f64), ndim byte, ndim little-endian u32 extents, then the payload
/// little-endian in row-major order.
pub fn cten_bytes<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > 255 {
        return Err(Error::contract("CTEN supports at most 255 dimensions".to_string()));
    }
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.numel() * T::DTYPE.width());
    out.extend_from_slice(CTEN_MAGIC);
    out.push(CTEN_VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        if d > u32::MAX as usize {
            return Err(Error::contract(format!("extent {d} exceeds u32 range")));
        }
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn write_cten<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_atomic(path, &cten_bytes(t)?)
}

/// Parses CTEN bytes; the element type must match the file's dtype byte.
pub fn cten_from_bytes<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 4 || &bytes[0..4] != CTEN_MAGIC {
        return Err(Error::parse(0, "bad magic: expected 'CTEN'"));
    }
    if bytes.len() < 5 || bytes[4] != CTEN_VERSION {
        return Err(Error::parse(4, format!("unsupported CTEN version, expected {CTEN_VERSION}")));
    }
    if bytes.len() < 6 {
        return Err(Error::parse(5, "missing dtype byte"));
    }
    let dtype = Dtype::from_code(bytes[5])
        .ok_or_else(|| Error::parse(5, format!("unknown dtype code {}", bytes[5])))?;
    if dtype != T::DTYPE {
        return Err(Error::parse(
            5,
            format!("dtype mismatch: file holds {dtype:?}, caller expects {:?}", T::DTYPE),
        ));
    }
    if bytes.len() < 7 {
        return Err(Error::parse(6, "missing ndim byte"));
    }
    let ndim = bytes[6] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut pos = 7usize;
    for i in 0..ndim {
        if bytes.len() < pos + 4 {
            return Err(Error::parse(pos, format!("truncated extent {i}")));
        }
        let d = u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]);
        if d == 0 {
            return Err(Error::parse(pos, format!("extent {i} is zero")));
        }
        shape.push(d as usize);
        pos += 4;
    }
    let numel: usize = shape.iter().product();
    let width = T::DTYPE.width();
    let expected = numel * width;
    let got = bytes.len() - pos;
    if got != expected {
        return Err(Error::parse(
            pos,
            format!("payload length mismatch: shape {shape:?} needs {expected} bytes, got {got}"),
        ));
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        data.push(T::read_le(&bytes[pos + i * width..]));
    }
    Tensor::new(shape, data)
}

pub fn read_cten<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    cten_from_bytes(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => {
            Error::parse(offset, format!("{}: {message}", path.display()))
        }
        other => other,
    })
}

/// Writes via a temp file in the same directory plus rename, so interrupted
/// runs never leave a partially written file at the target path.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("cannot write to {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_text_10() -> String {
        let mut s = String::from("path,label\n");
        for (i, name) in CLASS_NAMES.iter().enumerate() {
            s.push_str(&format!("img{i}.ppm,{name}\n"));
        }
        s
    }

    #[test]
    fn manifest_with_one_row_per_class() {
        let m = parse_manifest(&manifest_text_10(), Path::new("/data")).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m.histogram(), [1; 10]);
    }

    #[test]
    fn unknown_class_names_row() {
        let text = "path,label\na.ppm,Polyp\nb.ppm,Polyps\n";
        let err = parse_manifest(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("unknown class 'Polyps' at row 3"));
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let text = "path,label\na.ppm,Polyp\na.ppm,Normal\n";
        let err = parse_manifest(text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("duplicate path"));
    }

    #[test]
    fn crlf_and_lf_parse_identically() {
        let lf = manifest_text_10();
        let crlf = lf.replace('\n', "\r\n");
        let a = parse_manifest(&lf, Path::new(".")).unwrap();
        let b = parse_manifest(&crlf, Path::new(".")).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn ppm_decode_two_pixels() {
        let bytes = b"P6\n2 1\n255\n\xff\x00\x00\x00\xff\x00";
        let img = decode_ppm(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.rgb, vec![255, 0, 0, 0, 255, 0]);
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let with = b"P6\n# a comment\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        let without = b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06";
        assert_eq!(decode_ppm(with).unwrap(), decode_ppm(without).unwrap());
    }

    #[test]
    fn ppm_truncation_reports_offset() {
        // Header "P6\n2 1\n255\n" is 11 bytes; payload should be 6, give 5.
        let bytes = b"P6\n2 1\n255\n\x01\x02\x03\x04\x05";
        match decode_ppm(bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 11 + 5),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ppm_wrong_magic_and_maxval() {
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\x00"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
    }

    #[test]
    fn resize_constant_and_half_pixel_row() {
        let one = Tensor::new(vec![1, 1, 1], vec![7.0f32]).unwrap();
        let up = resize_bilinear(&one, 4, 5).unwrap();
        assert!(up.data().iter().all(|&v| v == 7.0));

        let row = Tensor::new(vec![1, 1, 2], vec![0.0f64, 1.0]).unwrap();
        let out = resize_bilinear(&row, 1, 3).unwrap();
        let d = out.data();
        assert!((d[0] - 0.0).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
        assert!((d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resize_identity_is_near_exact() {
        let t = Tensor::<f32>::from_fn(&[3, 5, 4], |i| (i as f32).sin() * 100.0);
        let out = resize_bilinear(&t, 5, 4).unwrap();
        for (a, b) in out.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_bounds_and_midpoint() {
        let t = Tensor::new(vec![3], vec![255.0f64, 0.0, 128.0]).unwrap();
        let n = normalize(&t);
        assert_eq!(n.data()[0], 1.0);
        assert_eq!(n.data()[1], -1.0);
        assert!((n.data()[2] - ((128.0 / 255.0 - 0.5) / 0.5)).abs() < 1e-12);
        assert!((n.data()[2] - 0.003921568).abs() < 1e-6);
    }

    fn synthetic_manifest(per_class: usize) -> DatasetManifest {
        let rows = (0..per_class * 10)
            .map(|i| ManifestRow {
                path: format!("s{i}.ppm"),
                label: i % 10,
            })
            .collect();
        DatasetManifest {
            root: PathBuf::from("."),
            rows,
        }
    }

    #[test]
    fn stratified_split_is_an_exact_partition() {
        let m = synthetic_manifest(10);
        let (train, holdout) = stratified_split(&m, 0.8, 7).unwrap();
        assert_eq!(train.histogram(), [8; 10]);
        assert_eq!(holdout.histogram(), [2; 10]);
        assert_eq!(train.len() + holdout.len(), m.len());

        let train_paths: HashSet<_> = train.rows.iter().map(|r| &r.path).collect();
        assert!(holdout.rows.iter().all(|r| !train_paths.contains(&r.path)));

        let (t2, _) = stratified_split(&m, 0.8, 7).unwrap();
        assert_eq!(train.rows, t2.rows);
    }

    #[test]
    fn split_floor_rule_on_tiny_class() {
        // 3 rows per class at fraction 0.5 → floor(1.5) = 1 train row each.
        let m = synthetic_manifest(3);
        let (train, holdout) = stratified_split(&m, 0.5, 1).unwrap();
        assert_eq!(train.histogram(), [1; 10]);
        assert_eq!(holdout.histogram(), [2; 10]);
    }

    #[test]
    fn class_weight_formula() {
        assert_eq!(class_weights_from_counts(&[5, 5, 5, 5]), vec![1.0; 4]);

        let w = class_weights_from_counts(&[90, 10]);
        assert!((w[0] - 0.5556).abs() < 1e-3);
        assert!((w[1] - 5.0).abs() < 1e-9);

        // Σ n_c·w_c = N
        let counts = [13usize, 7, 25, 1, 4];
        let w = class_weights_from_counts(&counts);
        let n: usize = counts.iter().sum();
        let weighted: f64 = counts.iter().zip(&w).map(|(&c, &wc)| c as f64 * wc).sum();
        assert!((weighted - n as f64).abs() < 1e-9);
    }

    #[test]
    fn cten_round_trip_and_errors() {
        let t = Tensor::<f32>::from_fn(&[3, 4, 5], |i| (i as f32 * 0.7).sin());
        let bytes = cten_bytes(&t).unwrap();
        let back: Tensor<f32> = cten_from_bytes(&bytes).unwrap();
        assert!(back.bits_eq(&t));

        let mut bad_magic = bytes.clone();
        bad_magic[3] = b'M'; // "CTEM"
        assert!(matches!(
            cten_from_bytes::<f32>(&bad_magic),
            Err(Error::Parse { offset: 0, .. })
        ));

        // 2×2 f32 with only 3 payload floats.
        let mut short = Vec::new();
        short.extend_from_slice(b"CTEN");
        short.push(1);
        short.push(0);
        short.push(2);
        short.extend_from_slice(&2u32.to_le_bytes());
        short.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..3 {
            short.extend_from_slice(&1.0f32.to_le_bytes());
        }
        match cten_from_bytes::<f32>(&short).unwrap_err() {
            Error::Parse { offset, message } => {
                assert_eq!(offset, 15);
                assert!(message.contains("mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cten_dtype_must_match_caller() {
        let t = Tensor::<f64>::from_fn(&[2, 2], |i| i as f64);
        let bytes = cten_bytes(&t).unwrap();
        assert!(cten_from_bytes::<f32>(&bytes).is_err());
        assert!(cten_from_bytes::<f64>(&bytes).is_ok());
    }

    #[test]
    fn flip_mirrors_width() {
        let t = Tensor::new(vec![1, 1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(flip_horizontal(&t).data(), &[3.0, 2.0, 1.0]);
    }
}
