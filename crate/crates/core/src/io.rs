//! Image-stack input, result archives and per-group partial files.
//!
//! Two input containers are understood:
//!
//! * a directory of binary 16-bit PGM files (`P5`, maxval 65535, big-endian
//!   samples), ordered by file name;
//! * a raw stack: one JSON header line followed by contiguous little-endian
//!   `u16` frames.
//!
//! Results are written as one `d_m<lag>.bin` file per lag (`f64` little-endian,
//! row-major over the half-plane) next to an `index.json` manifest. Timing
//! lives only in the manifest so the map files are reproducible byte for byte.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::Precision;
use crate::timing::{CounterSnapshot, TimingBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum StackFormat {
    PgmDir,
    RawStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackDims {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_interval: f64,
}

impl StackDims {
    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    /// Shape `(rows, cols)` of the non-redundant half of a frame spectrum.
    pub fn half_plane(&self) -> (usize, usize) {
        (self.height, self.width / 2 + 1)
    }
}

/// N frames of W×H 16-bit pixels, frame-major and row-major within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    dims: StackDims,
    pixels: Vec<u16>,
}

impl ImageStack {
    pub fn new(
        width: usize,
        height: usize,
        frames: usize,
        pixels: Vec<u16>,
        frame_interval: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::Format(format!(
                "stack dimensions must be positive, got {width}x{height}x{frames}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(frames))
            .ok_or_else(|| Error::Format("stack dimensions overflow".into()))?;
        if pixels.len() != expected {
            return Err(Error::Format(format!(
                "pixel buffer holds {} values, expected {expected}",
                pixels.len()
            )));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::Format(format!(
                "frame interval must be positive, got {frame_interval}"
            )));
        }
        Ok(Self {
            dims: StackDims {
                width,
                height,
                frames,
                frame_interval,
            },
            pixels,
        })
    }

    pub fn dims(&self) -> StackDims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn frames(&self) -> usize {
        self.dims.frames
    }

    pub fn frame_interval(&self) -> f64 {
        self.dims.frame_interval
    }

    pub fn frame(&self, index: usize) -> &[u16] {
        let len = self.dims.pixels_per_frame();
        &self.pixels[index * len..(index + 1) * len]
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    /// The first `frames` frames as a new stack.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        if frames > self.dims.frames {
            return Err(Error::InvalidArgument(format!(
                "cannot take {frames} frames from a stack of {}",
                self.dims.frames
            )));
        }
        let len = frames * self.dims.pixels_per_frame();
        Self::new(
            self.dims.width,
            self.dims.height,
            frames,
            self.pixels[..len].to_vec(),
            self.dims.frame_interval,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawHeader {
    width: usize,
    height: usize,
    frames: usize,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_interval: Option<f64>,
}

pub fn load_stack(path: &Path, format: StackFormat) -> Result<ImageStack> {
    let mut source = open_source(path, format)?;
    let dims = source.dims();
    let len = dims.pixels_per_frame();
    let mut pixels = vec![0u16; len * dims.frames];
    for (i, frame) in pixels.chunks_exact_mut(len).enumerate() {
        source.read_frame(i, frame)?;
    }
    ImageStack::new(dims.width, dims.height, dims.frames, pixels, dims.frame_interval)
}

/// Parses one binary PGM image with maxval 65535.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format("PGM magic is not P5".into()));
    }
    let width = parse_header_int(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_header_int(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_header_int(next_token(bytes, &mut pos)?, "maxval")?;
    if maxval != 65535 {
        return Err(Error::Format(format!("PGM maxval must be 65535, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM dimensions must be positive".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("truncated PGM header".into()));
    }
    pos += 1;
    let need = width * height * 2;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("truncated PGM raster: need {need} bytes")))?;
    let pixels = raster
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, pixels))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_int(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM {what}")))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u16]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    buf.reserve(pixels.len() * 2);
    for p in pixels {
        buf.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes every frame as `frame<index>.pgm`, zero-padded so name order is frame order.
pub fn write_pgm_dir(stack: &ImageStack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let digits = stack.frames().to_string().len().max(6);
    for i in 0..stack.frames() {
        let path = dir.join(format!("frame{i:0digits$}.pgm"));
        write_pgm(&path, stack.width(), stack.height(), stack.frame(i))?;
    }
    Ok(())
}

pub fn write_raw_stack(stack: &ImageStack, path: &Path) -> Result<()> {
    let header = RawHeader {
        width: stack.width(),
        height: stack.height(),
        frames: stack.frames(),
        dtype: "u16le".into(),
        frame_interval: Some(stack.frame_interval()),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    line.push(b'\n');
    w.write_all(&line).map_err(|e| Error::io(path, e))?;
    for chunk in stack.pixels().chunks(1 << 16) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|p| p.to_le_bytes()).collect();
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Frame-at-a-time access to a stack, so group execution can re-stream frames
/// from disk instead of holding the whole stack.
pub trait StackSource: Send {
    fn dims(&self) -> StackDims;

    fn read_frame(&mut self, index: usize, out: &mut [u16]) -> Result<()>;
}

/// An in-memory stack viewed as a source.
pub struct MemorySource<'a> {
    stack: &'a ImageStack,
}

impl<'a> MemorySource<'a> {
    pub fn new(stack: &'a ImageStack) -> Self {
        Self { stack }
    }
}

impl StackSource for MemorySource<'_> {
    fn dims(&self) -> StackDims {
        self.stack.dims()
    }

    fn read_frame(&mut self, index: usize, out: &mut [u16]) -> Result<()> {
        out.copy_from_slice(self.stack.frame(index));
        Ok(())
    }
}

pub struct RawFileSource {
    path: PathBuf,
    reader: BufReader<File>,
    dims: StackDims,
    payload_offset: u64,
    bytes: Vec<u8>,
}

impl RawFileSource {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut reader = BufReader::new(file);
        let mut line = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            let n = reader.read(&mut byte).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::Format("raw stack header is not newline-terminated".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 4096 {
                return Err(Error::Format("raw stack header exceeds 4096 bytes".into()));
            }
        }
        let header: RawHeader = serde_json::from_slice(&line)
            .map_err(|e| Error::Format(format!("raw stack header: {e}")))?;
        if header.dtype != "u16le" {
            return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
        }
        if header.width == 0 || header.height == 0 || header.frames == 0 {
            return Err(Error::Format("raw stack dimensions must be positive".into()));
        }
        let frame_interval = header.frame_interval.unwrap_or(1.0);
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::Format("frame_interval must be positive".into()));
        }
        let payload_offset = line.len() as u64 + 1;
        let expected = (header.width * header.height * header.frames * 2) as u64;
        let actual = file_len - payload_offset;
        if actual < expected {
            return Err(Error::Format(format!(
                "truncated raw stack payload: {actual} of {expected} bytes"
            )));
        }
        if actual > expected {
            return Err(Error::Format(format!(
                "raw stack payload has {} trailing bytes",
                actual - expected
            )));
        }
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            dims: StackDims {
                width: header.width,
                height: header.height,
                frames: header.frames,
                frame_interval,
            },
            payload_offset,
            bytes: Vec::new(),
        })
    }
}

impl StackSource for RawFileSource {
    fn dims(&self) -> StackDims {
        self.dims
    }

    fn read_frame(&mut self, index: usize, out: &mut [u16]) -> Result<()> {
        let len = self.dims.pixels_per_frame();
        let offset = self.payload_offset + (index * len * 2) as u64;
        self.reader
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        self.bytes.resize(len * 2, 0);
        self.reader
            .read_exact(&mut self.bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        for (dst, b) in out.iter_mut().zip(self.bytes.chunks_exact(2)) {
            *dst = u16::from_le_bytes([b[0], b[1]]);
        }
        Ok(())
    }
}

pub struct PgmDirSource {
    files: Vec<PathBuf>,
    dims: StackDims,
}

impl PgmDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|ext| ext == "pgm") && path.is_file() {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(Error::Format(format!("no *.pgm files in {}", dir.display())));
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        let first = fs::read(&files[0]).map_err(|e| Error::io(&files[0], e))?;
        let (width, height, _) = parse_pgm(&first)?;
        Ok(Self {
            dims: StackDims {
                width,
                height,
                frames: files.len(),
                frame_interval: 1.0,
            },
            files,
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl StackSource for PgmDirSource {
    fn dims(&self) -> StackDims {
        self.dims
    }

    fn read_frame(&mut self, index: usize, out: &mut [u16]) -> Result<()> {
        let path = &self.files[index];
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, pixels) = parse_pgm(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if (w, h) != (self.dims.width, self.dims.height) {
            return Err(Error::Format(format!(
                "{}: frame is {w}x{h}, stack is {}x{}",
                path.display(),
                self.dims.width,
                self.dims.height
            )));
        }
        out.copy_from_slice(&pixels);
        Ok(())
    }
}

pub fn open_source(path: &Path, format: StackFormat) -> Result<Box<dyn StackSource>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    Ok(match format {
        StackFormat::PgmDir => Box::new(PgmDirSource::open(path)?),
        StackFormat::RawStack => Box::new(RawFileSource::open(path)?),
    })
}

/// Reproducible description of a result set. Everything here is a pure
/// function of the inputs and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_interval: f64,
    pub algorithm: String,
    pub precision: Precision,
    pub q_max: Option<f64>,
    pub retained_wave_vectors: usize,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ArchiveMeta {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width / 2 + 1)
    }
}

/// Per-lag structure-function maps over the half-plane. Positions outside the
/// retained wave-vector set hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultArchive {
    pub lags: Vec<usize>,
    pub maps: Vec<Vec<f64>>,
    pub meta: ArchiveMeta,
    pub timing: Option<TimingBreakdown>,
    pub counters: Option<CounterSnapshot>,
}

impl ResultArchive {
    pub fn map(&self, lag: usize) -> Option<&[f64]> {
        self.lags
            .iter()
            .position(|&m| m == lag)
            .map(|i| self.maps[i].as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags.is_empty() {
            return Err(Error::InvalidArgument("no lags".into()));
        }
        if self.lags.len() != self.maps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} lags but {} maps",
                self.lags.len(),
                self.maps.len()
            )));
        }
        let (rows, cols) = self.meta.shape();
        if let Some(bad) = self.maps.iter().position(|m| m.len() != rows * cols) {
            return Err(Error::InvalidArgument(format!(
                "map for lag {} does not have shape {rows}x{cols}",
                self.lags[bad]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    shape: [usize; 2],
    lags: Vec<usize>,
    files: Vec<String>,
    meta: ArchiveMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counters: Option<CounterSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timing: Option<TimingBreakdown>,
}

const MANIFEST_FORMAT: &str = "ddm-results/1";

pub fn map_file_name(lag: usize) -> String {
    format!("d_m{lag}.bin")
}

pub fn write_results(archive: &ResultArchive, out_dir: &Path) -> Result<PathBuf> {
    archive.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::with_capacity(archive.lags.len());
    for (&lag, map) in archive.lags.iter().zip(&archive.maps) {
        let name = map_file_name(lag);
        let path = out_dir.join(&name);
        write_f64_file(&path, map)?;
        files.push(name);
    }
    let (rows, cols) = archive.meta.shape();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        shape: [rows, cols],
        lags: archive.lags.clone(),
        files,
        meta: archive.meta.clone(),
        counters: archive.counters,
        timing: archive.timing.clone(),
    };
    let path = out_dir.join("index.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_results(dir: &Path) -> Result<ResultArchive> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("index.json: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Format(format!("unknown manifest format {}", manifest.format)));
    }
    if manifest.files.len() != manifest.lags.len() {
        return Err(Error::Format("manifest lists a different number of files and lags".into()));
    }
    let expected = manifest.shape[0] * manifest.shape[1];
    let mut maps = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let map = read_f64_file(&dir.join(name))?;
        if map.len() != expected {
            return Err(Error::Format(format!(
                "{name}: {} values, expected {expected}",
                map.len()
            )));
        }
        maps.push(map);
    }
    Ok(ResultArchive {
        lags: manifest.lags,
        maps,
        meta: manifest.meta,
        timing: manifest.timing,
        counters: manifest.counters,
    })
}

fn write_f64_file(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f64_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{}: length not a multiple of 8", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

/// Structure-function values of one wave-vector group, for every requested lag.
///
/// `range` indexes the retained wave-vector list, not the half-plane.
/// `values` is lag-major: `values[l * range.len() + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub group_id: usize,
    pub range: Range<usize>,
    pub total_wave_vectors: usize,
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
}

const PARTIAL_MAGIC: &[u8; 8] = b"DDMPART1";

pub fn partial_path(out_dir: &Path, group_id: usize) -> PathBuf {
    out_dir.join("partials").join(format!("group{group_id}.bin"))
}

/// Layout: magic, then u64le group id, range start, range end, total wave
/// vectors, lag count, the lags, then the f64le values.
pub fn write_partial(group_id: usize, partial: &Partial, out_dir: &Path) -> Result<PathBuf> {
    if partial.range.start > partial.range.end
        || partial.range.end > partial.total_wave_vectors
    {
        return Err(Error::InvalidArgument(format!(
            "partial range {:?} outside [0, {})",
            partial.range, partial.total_wave_vectors
        )));
    }
    if partial.values.len() != partial.lags.len() * partial.range.len() {
        return Err(Error::InvalidArgument("partial value count mismatch".into()));
    }
    let path = partial_path(out_dir, group_id);
    let dir = path.parent().unwrap();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::with_capacity(48 + 8 * (partial.lags.len() + partial.values.len()));
    buf.extend_from_slice(PARTIAL_MAGIC);
    for v in [
        group_id,
        partial.range.start,
        partial.range.end,
        partial.total_wave_vectors,
        partial.lags.len(),
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &lag in &partial.lags {
        buf.extend_from_slice(&(lag as u64).to_le_bytes());
    }
    for v in &partial.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_partial(path: &Path) -> Result<Partial> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 48 || &bytes[..8] != PARTIAL_MAGIC {
        return Err(bad("not a partial result file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
    let (group_id, start, end, total, n_lags) = (word(0), word(1), word(2), word(3), word(4));
    if start > end || end > total {
        return Err(bad("invalid wave-vector range"));
    }
    let expected = 48 + 8 * (n_lags + n_lags * (end - start));
    if bytes.len() != expected {
        return Err(bad("truncated or oversized payload"));
    }
    let lags = (0..n_lags).map(|i| word(5 + i)).collect();
    let values = bytes[48 + 8 * n_lags..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Partial {
        group_id,
        range: start..end,
        total_wave_vectors: total,
        lags,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_pgm_is_big_endian() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x12, 0x34]);
        let (w, h, px) = parse_pgm(&bytes).unwrap();
        assert_eq!((w, h), (1, 1));
        assert_eq!(px, vec![0x1234]);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 0xff, 0xff]);
        let (_, _, px) = parse_pgm(&bytes).unwrap();
        assert_eq!(px, vec![1, 65535]);
    }

    #[test]
    fn pgm_rejects_8bit_maxval() {
        let mut bytes = b"P5\n1 1\n255\n".to_vec();
        bytes.push(7);
        assert!(matches!(parse_pgm(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_rejects_truncated_raster() {
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend_from_slice(&[0; 7]);
        assert!(matches!(parse_pgm(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_rejects_other_magic() {
        assert!(parse_pgm(b"P2\n1 1\n65535\n0").is_err());
    }

    #[test]
    fn raw_stack_from_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.raw");
        let mut bytes = br#"{"width":2,"height":2,"frames":3,"dtype":"u16le"}"#.to_vec();
        bytes.push(b'\n');
        for v in 0u16..12 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        let stack = load_stack(&path, StackFormat::RawStack).unwrap();
        assert_eq!((stack.width(), stack.height(), stack.frames()), (2, 2, 3));
        assert_eq!(stack.frame(2), &[8, 9, 10, 11]);
        assert_eq!(stack.frame_interval(), 1.0);
    }

    #[test]
    fn raw_stack_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.raw");
        let mut bytes = br#"{"width":2,"height":2,"frames":3,"dtype":"u16le"}"#.to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(&[0; 23]);
        fs::write(&path, &bytes).unwrap();
        let err = load_stack(&path, StackFormat::RawStack).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn raw_stack_rejects_big_endian_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.raw");
        let mut bytes = br#"{"width":1,"height":1,"frames":1,"dtype":"u16be"}"#.to_vec();
        bytes.extend_from_slice(b"\n\0\0");
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_stack(&path, StackFormat::RawStack), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_dir_frames_follow_file_names() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("b.pgm"), 1, 1, &[2]).unwrap();
        write_pgm(&dir.path().join("a.pgm"), 1, 1, &[1]).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let stack = load_stack(dir.path(), StackFormat::PgmDir).unwrap();
        assert_eq!(stack.pixels(), &[1, 2]);
    }

    #[test]
    fn pgm_dir_with_mismatched_frames_fails() {
        let dir = tempfile::tempdir().unwrap();
        write_pgm(&dir.path().join("a.pgm"), 1, 1, &[1]).unwrap();
        write_pgm(&dir.path().join("b.pgm"), 2, 1, &[1, 2]).unwrap();
        let err = load_stack(dir.path(), StackFormat::PgmDir).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn empty_pgm_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_stack(dir.path(), StackFormat::PgmDir),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_path_is_io_error() {
        let err = load_stack(Path::new("/nonexistent/stack.raw"), StackFormat::RawStack)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn archive(lags: Vec<usize>) -> ResultArchive {
        let maps = lags
            .iter()
            .map(|&m| (0..12).map(|i| m as f64 + i as f64 * 0.1).collect())
            .collect();
        ResultArchive {
            lags,
            maps,
            meta: ArchiveMeta {
                width: 4,
                height: 4,
                frames: 2,
                frame_interval: 1.0,
                algorithm: "with_ft".into(),
                precision: Precision::F64,
                q_max: None,
                retained_wave_vectors: 12,
                config: serde_json::Value::Null,
            },
            timing: Some(TimingBreakdown::default()),
            counters: None,
        }
    }

    #[test]
    fn map_files_are_eight_bytes_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_results(&archive(vec![0, 1]), dir.path()).unwrap();
        assert!(manifest.ends_with("index.json"));
        for lag in [0, 1] {
            let len = fs::metadata(dir.path().join(map_file_name(lag))).unwrap().len();
            assert_eq!(len, 4 * 3 * 8);
        }
        let back = read_results(dir.path()).unwrap();
        assert_eq!(back, archive(vec![0, 1]));
    }

    #[test]
    fn empty_lag_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_results(&archive(vec![]), dir.path()).unwrap_err();
        assert!(err.to_string().contains("no lags"));
    }

    #[test]
    fn partial_header_records_range() {
        let dir = tempfile::tempdir().unwrap();
        let lags: Vec<usize> = (0..8).collect();
        let partial = Partial {
            group_id: 0,
            range: 0..100,
            total_wave_vectors: 250,
            values: (0..800).map(|v| v as f64).collect(),
            lags,
        };
        let path = write_partial(0, &partial, dir.path()).unwrap();
        assert!(path.ends_with("partials/group0.bin"));
        let back = read_partial(&path).unwrap();
        assert_eq!(back.range, 0..100);
        assert_eq!(back, partial);
    }

    #[test]
    fn truncated_partial_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let partial = Partial {
            group_id: 1,
            range: 2..4,
            total_wave_vectors: 4,
            lags: vec![0, 1],
            values: vec![0.0; 4],
        };
        let path = write_partial(1, &partial, dir.path()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_partial(&path), Err(Error::Format(_))));
    }
}
