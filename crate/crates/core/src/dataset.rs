//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.jsonl      one record per clip: id, action, scene, seed, split
//! <dir>/videos/<id>.bin     one binary clip per record
//! ```
//!
//! A clip file is little-endian: the magic `SVID`, a `u32` format version,
//! `u32` frames/height/width/channels, `u32` action and scene, `u64` seed,
//! then `T*H*W*C` `f32` frame values, `T*H*W` mask bytes (0 or 1) and
//! `H*W*C` `f32` plate values.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{ClipShape, SyntheticVideo};

const MAGIC: &[u8; 4] = b"SVID";
const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One manifest line. Field order is `id, action, scene, seed, split`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: usize,
    pub action: usize,
    pub scene: usize,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<SyntheticVideo>,
    pub val: Vec<SyntheticVideo>,
}

fn video_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("videos").join(format!("{id:06}.bin"))
}

pub fn write_video(path: &Path, v: &SyntheticVideo) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let s = &v.shape;
    let mut buf = Vec::with_capacity(40 + 4 * (v.frames.len() + v.plate.len()) + v.fg_mask.len());
    buf.extend_from_slice(MAGIC);
    for x in [
        VERSION,
        s.frames as u32,
        s.height as u32,
        s.width as u32,
        s.channels as u32,
        v.action as u32,
        v.scene as u32,
    ] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend_from_slice(&v.seed.to_le_bytes());
    for x in &v.frames {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend(v.fg_mask.iter().map(|&m| u8::from(m)));
    for x in &v.plate {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_video(path: &Path, id: usize) -> Result<SyntheticVideo> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let malformed = |detail: &str| Error::Malformed {
        what: "video file",
        detail: format!("{}: {detail}", path.display()),
    };
    if bytes.len() < 40 || &bytes[..4] != MAGIC {
        return Err(malformed("bad magic or truncated header"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if u32_at(0) != VERSION {
        return Err(malformed("unsupported version"));
    }
    let shape = ClipShape {
        frames: u32_at(1) as usize,
        height: u32_at(2) as usize,
        width: u32_at(3) as usize,
        channels: u32_at(4) as usize,
    };
    let (action, scene) = (u32_at(5) as usize, u32_at(6) as usize);
    let seed = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let n_frames = shape.clip_len();
    let n_mask = shape.frames * shape.pixels();
    let n_plate = shape.frame_len();
    if bytes.len() != 40 + 4 * n_frames + n_mask + 4 * n_plate {
        return Err(malformed("payload length does not match header"));
    }
    let floats = |start: usize, n: usize| -> Vec<f32> {
        bytes[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let frames = floats(40, n_frames);
    let mstart = 40 + 4 * n_frames;
    let fg_mask = bytes[mstart..mstart + n_mask].iter().map(|&b| b != 0).collect();
    let plate = floats(mstart + n_mask, n_plate);
    let v = SyntheticVideo {
        id,
        seed,
        shape,
        frames,
        fg_mask,
        plate,
        action,
        scene,
    };
    v.validate()?;
    Ok(v)
}

pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let vdir = dir.join("videos");
    fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let file = File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut w = BufWriter::new(file);
    for (split, videos) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
        for v in videos {
            write_video(&video_path(dir, v.id), v)?;
            let rec = ManifestRecord {
                id: v.id,
                action: v.action,
                scene: v.scene,
                seed: v.seed,
                split,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(&mpath, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&mpath, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(Error::MissingArtifact(mpath));
    }
    let file = File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&mpath, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "manifest",
            detail: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut data = Dataset::default();
    for rec in read_manifest(dir)? {
        let v = read_video(&video_path(dir, rec.id), rec.id)?;
        if v.action != rec.action || v.scene != rec.scene || v.seed != rec.seed {
            return Err(Error::Malformed {
                what: "dataset",
                detail: format!("clip {} disagrees with its manifest record", rec.id),
            });
        }
        match rec.split {
            Split::Train => data.train.push(v),
            Split::Val => data.val.push(v),
        }
    }
    Ok(data)
}
