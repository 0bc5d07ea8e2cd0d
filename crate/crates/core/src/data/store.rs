//! Clip store: per-clip tensor files plus a JSON-lines manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::{info, warn};
use mdgan_tensor::serialize::{Payload, RawTensor};
use mdgan_tensor::{Element, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ppm::{self, Frame};
use super::resize::bilinear;
use crate::error::{Error, Result};
use crate::models::spec::{Resolution, CLIP_FRAMES, IMAGE_CHANNELS};
use crate::rng::{stream, Stream};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SOURCES_FILE: &str = "sources.jsonl";
const CLIP_DIR: &str = "clips";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub source_id: String,
    pub clip_index: usize,
    /// Relative to the store root.
    pub file: String,
    pub split: Split,
    pub h: usize,
    pub w: usize,
}

/// Per-source ingest bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub frames: usize,
    pub clips: usize,
    pub width: usize,
    pub height: usize,
}

/// Maps a byte to `[-1, 1]`.
pub fn normalize<T: Element>(v: u8) -> T {
    T::from_f64(v as f64) / T::from_f64(127.5) - T::one()
}

/// Inverse of [`normalize`] with rounding and clamping.
pub fn denormalize<T: Element>(v: T) -> u8 {
    let x = ((v.as_f64() + 1.0) * 127.5).round();
    if x.is_nan() {
        0
    } else {
        x.clamp(0.0, 255.0) as u8
    }
}

/// Numeric-aware filename ordering: `f2` sorts before `f10`.
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(&cb) {
        let ord = if *da && *db {
            let (ta, tb) = (sa.trim_start_matches('0'), sb.trim_start_matches('0'));
            ta.len().cmp(&tb.len()).then(ta.cmp(tb)).then(sa.len().cmp(&sb.len()))
        } else {
            sa.cmp(sb)
        };
        if ord.is_ne() {
            return ord;
        }
    }
    ca.len().cmp(&cb.len())
}

fn list_sorted(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let path = entry.path();
        let is_dir = path.is_dir();
        if want_dirs && is_dir {
            out.push(path);
        } else if !want_dirs && !is_dir && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| {
        let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        natural_cmp(&name(a), &name(b))
    });
    Ok(out)
}

/// Frame ranges `[32 i, 32 i + 32)` of the clips cut from `frames` frames.
pub fn clip_ranges(frames: usize) -> Vec<std::ops::Range<usize>> {
    (0..frames / CLIP_FRAMES).map(|i| i * CLIP_FRAMES..(i + 1) * CLIP_FRAMES).collect()
}

/// Packs 32 same-sized frames into a planar `u8 [3, 32, H, W]` block.
pub fn pack_clip(frames: &[Frame]) -> Result<RawTensor> {
    if frames.len() != CLIP_FRAMES {
        return Err(Error::Data(format!("a clip holds {CLIP_FRAMES} frames, got {}", frames.len())));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    let plane = w * h;
    let mut data = vec![0u8; IMAGE_CHANNELS * CLIP_FRAMES * plane];
    for (t, f) in frames.iter().enumerate() {
        if (f.width, f.height) != (w, h) {
            return Err(Error::Data("frames of one clip differ in size".into()));
        }
        for (p, px) in f.data.chunks_exact(3).enumerate() {
            for c in 0..IMAGE_CHANNELS {
                data[(c * CLIP_FRAMES + t) * plane + p] = px[c];
            }
        }
    }
    Ok(RawTensor::new(vec![IMAGE_CHANNELS, CLIP_FRAMES, h, w], Payload::U8(data))?)
}

/// Splits a planar `[3, T, H, W]` byte block into `T` frames.
pub fn unpack_frames(bytes: &[u8], frames: usize, h: usize, w: usize) -> Vec<Frame> {
    let plane = h * w;
    (0..frames)
        .map(|t| {
            let mut data = Vec::with_capacity(plane * 3);
            for p in 0..plane {
                for c in 0..IMAGE_CHANNELS {
                    data.push(bytes[(c * frames + t) * plane + p]);
                }
            }
            Frame { width: w, height: h, data }
        })
        .collect()
}

fn read_source(dir: &Path) -> Result<(Vec<Frame>, usize, usize)> {
    let files = list_sorted(dir, false)?;
    let usable = files.len() / CLIP_FRAMES * CLIP_FRAMES;
    let mut frames = Vec::with_capacity(usable);
    let mut dims = None;
    for path in &files {
        let f = ppm::read(path)?;
        match dims {
            None => dims = Some((f.width, f.height)),
            Some(d) if d != (f.width, f.height) => {
                return Err(Error::Data(format!(
                    "{}: frame is {}x{}, earlier frames are {}x{}",
                    path.display(),
                    f.width,
                    f.height,
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        if frames.len() < usable {
            frames.push(f);
        }
    }
    let height = dims.map(|d| d.1).unwrap_or(0);
    Ok((frames, files.len(), height))
}

/// Store-wide view of an ingested clip collection.
#[derive(Debug)]
pub struct ClipStore {
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
    cache: Vec<OnceLock<Vec<u8>>>,
}

/// Assigns whole sources to the test split so that its clip count approaches
/// `test_fraction` of the total. Every split gets at least one source.
pub fn split_sources(records: &mut [ClipRecord], test_fraction: f64, seed: u64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!("test_fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter() {
        *counts.entry(&r.source_id).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::config(format!("splitting needs at least 2 sources with clips, got {}", counts.len())));
    }
    let mut sources: Vec<(String, usize)> = counts.into_iter().map(|(s, n)| (s.to_string(), n)).collect();
    sources.shuffle(&mut stream(seed, Stream::Split));
    let total: usize = sources.iter().map(|s| s.1).sum();
    let target = test_fraction * total as f64;
    let mut test = Vec::new();
    let mut taken = 0usize;
    for (src, n) in &sources[..sources.len() - 1] {
        if test.is_empty() || ((taken + n) as f64 - target).abs() < (taken as f64 - target).abs() {
            test.push(src.clone());
            taken += n;
        }
        if taken as f64 >= target {
            break;
        }
    }
    for r in records.iter_mut() {
        r.split = if test.contains(&r.source_id) { Split::Test } else { Split::Train };
    }
    Ok(())
}

/// Cuts every source under `frames_root` into clips resized to the target
/// square resolution and writes a split-tagged store to `out`.
pub fn ingest(frames_root: &Path, out: &Path, resolution: Resolution, test_fraction: f64, seed: u64) -> Result<ClipStore> {
    let side = resolution.pixels();
    let clip_dir = out.join(CLIP_DIR);
    fs::create_dir_all(&clip_dir).map_err(Error::io(&clip_dir))?;
    let mut records = Vec::new();
    let mut sources = Vec::new();
    for dir in list_sorted(frames_root, true)? {
        let source_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let (frames, count, height) = match read_source(&dir) {
            Ok(v) => v,
            Err(e) => {
                warn!("skipping source {source_id}: {e}");
                continue;
            }
        };
        let width = frames.first().map(|f| f.width).unwrap_or(0);
        let ranges = clip_ranges(count);
        if ranges.is_empty() {
            warn!("source {source_id} has {count} frames, fewer than one {CLIP_FRAMES}-frame clip");
        }
        for (ci, range) in ranges.iter().enumerate() {
            let resized: Vec<Frame> = frames[range.clone()].iter().map(|f| bilinear(f, side, side)).collect();
            let file = format!("{CLIP_DIR}/{source_id}_{ci:05}.mdt");
            let path = out.join(&file);
            let raw = pack_clip(&resized)?;
            let mut w = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
            raw.write_to(&mut w)?;
            w.flush().map_err(Error::io(&path))?;
            records.push(ClipRecord {
                source_id: source_id.clone(),
                clip_index: ci,
                file,
                split: Split::Train,
                h: side,
                w: side,
            });
        }
        sources.push(SourceRecord {
            source_id,
            frames: count,
            clips: ranges.len(),
            width,
            height,
        });
    }
    if records.is_empty() {
        return Err(Error::Data(format!("no usable sources under {}", frames_root.display())));
    }
    split_sources(&mut records, test_fraction, seed)?;
    write_jsonl(&out.join(MANIFEST_FILE), &records)?;
    write_jsonl(&out.join(SOURCES_FILE), &sources)?;
    info!("ingested {} clips from {} sources into {}", records.len(), sources.len(), out.display());
    ClipStore::open(out)
}

fn write_jsonl<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_jsonl<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Integrity(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl ClipStore {
    pub fn open(root: &Path) -> Result<Self> {
        let records: Vec<ClipRecord> = read_jsonl(&root.join(MANIFEST_FILE))?;
        if records.is_empty() {
            return Err(Error::Data(format!("store {} has no clips", root.display())));
        }
        let cache = (0..records.len()).map(|_| OnceLock::new()).collect();
        Ok(ClipStore {
            root: root.to_path_buf(),
            records,
            cache,
        })
    }

    pub fn sources(&self) -> Result<Vec<SourceRecord>> {
        read_jsonl(&self.root.join(SOURCES_FILE))
    }

    /// Square side of the stored clips.
    pub fn resolution(&self) -> Result<Resolution> {
        let r = &self.records[0];
        if self.records.iter().any(|c| (c.h, c.w) != (r.h, r.w)) || r.h != r.w {
            return Err(Error::Integrity("store mixes clip sizes".into()));
        }
        Resolution::from_pixels(r.h)
    }

    /// Indices of the records in `split`, in manifest order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// Raw planar bytes of clip `index`, read once and cached.
    pub fn clip_bytes(&self, index: usize) -> Result<&[u8]> {
        if let Some(b) = self.cache[index].get() {
            return Ok(b);
        }
        let rec = &self.records[index];
        let path = self.root.join(&rec.file);
        let mut r = BufReader::new(File::open(&path).map_err(Error::io(&path))?);
        let raw = RawTensor::read_from(&mut r)?;
        let want = [IMAGE_CHANNELS, CLIP_FRAMES, rec.h, rec.w];
        let bytes = match raw.payload {
            Payload::U8(b) if raw.shape == want => b,
            _ => {
                return Err(Error::Integrity(format!(
                    "{}: expected u8 {want:?}, found {:?}",
                    path.display(),
                    raw.shape
                )))
            }
        };
        Ok(self.cache[index].get_or_init(|| bytes))
    }

    /// Clip `index` normalized to `[-1, 1]`, shape `[3, 32, H, W]`.
    pub fn clip<T: Element>(&self, index: usize) -> Result<Tensor<T>> {
        let rec = &self.records[index];
        let data = self.clip_bytes(index)?.iter().map(|&v| normalize(v)).collect();
        Ok(Tensor::from_vec(&[IMAGE_CHANNELS, CLIP_FRAMES, rec.h, rec.w], data)?)
    }

    /// Stacks clips into `Y [N, 3, 32, H, W]` and builds `X` by repeating
    /// each clip's first frame 32 times.
    pub fn load_batch<T: Element>(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        let first = self.records.get(*indices.first().ok_or_else(|| Error::Data("empty batch".into()))?);
        let (h, w) = first.map(|r| (r.h, r.w)).unwrap_or((0, 0));
        let mut data = Vec::with_capacity(indices.len() * IMAGE_CHANNELS * CLIP_FRAMES * h * w);
        for &i in indices {
            data.extend(self.clip_bytes(i)?.iter().map(|&v| normalize::<T>(v)));
        }
        let y = Tensor::from_vec(&[indices.len(), IMAGE_CHANNELS, CLIP_FRAMES, h, w], data)?;
        let x = crate::models::duplicate_frame(&crate::models::first_frame(&y)?, CLIP_FRAMES)?;
        Ok((y, x))
    }
}

/// Writes a `[3, T, H, W]` tensor in `[-1, 1]` as `T` PPM frames named
/// `frame_00000.ppm` and up. Returns how many samples needed clamping.
pub fn export_clip<T: Element>(video: &Tensor<T>, out_dir: &Path) -> Result<usize> {
    let s = video.shape();
    if s.len() != 4 || s[0] != IMAGE_CHANNELS {
        return Err(Error::config(format!("export expects [3,T,H,W], got {s:?}")));
    }
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let tol = 1e-6;
    let clamped = video.values().iter().filter(|v| v.as_f64().abs() > 1.0 + tol).count();
    if clamped > 0 {
        warn!("clamping {clamped} out-of-range samples while exporting to {}", out_dir.display());
    }
    let bytes: Vec<u8> = video.values().iter().map(|&v| denormalize(v)).collect();
    for (t, frame) in unpack_frames(&bytes, s[1], s[2], s[3]).iter().enumerate() {
        ppm::write(&out_dir.join(format!("frame_{t:05}.ppm")), frame)?;
    }
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order() {
        let mut v = vec!["f10.ppm", "f2.ppm", "f1.ppm", "f02.ppm", "a.ppm"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["a.ppm", "f1.ppm", "f2.ppm", "f02.ppm", "f10.ppm"]);
    }

    #[test]
    fn normalization_boundaries() {
        assert_eq!(normalize::<f32>(0), -1.0);
        assert_eq!(normalize::<f32>(255), 1.0);
        assert!((normalize::<f64>(127) + 0.00392156862745098).abs() < 1e-15);
        assert_eq!(denormalize(1.2f32), 255);
        assert_eq!(denormalize(-3.0f64), 0);
        assert_eq!(denormalize(f32::NAN), 0);
    }

    #[test]
    fn clip_counts() {
        assert_eq!(clip_ranges(100).len(), 3);
        assert_eq!(clip_ranges(31).len(), 0);
        assert_eq!(clip_ranges(64), vec![0..32, 32..64]);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let frames: Vec<Frame> = (0..CLIP_FRAMES)
            .map(|t| Frame::new(2, 2, (0..12).map(|i| (i * 7 + t) as u8).collect()).unwrap())
            .collect();
        let raw = pack_clip(&frames).unwrap();
        let Payload::U8(bytes) = &raw.payload else { panic!("u8 payload") };
        assert_eq!(unpack_frames(bytes, CLIP_FRAMES, 2, 2), frames);
        assert!(pack_clip(&frames[..3]).is_err());
    }
}
