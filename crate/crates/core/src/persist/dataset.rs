//! `SIMD` dataset container.
//!
//! Layout: magic, version `u32`, config JSON length `u32` and bytes, flags
//! `u32` (bit 0: concept sidecar present), section count `u32`, then a
//! section table of `(offset u64, length u64, crc u32)` entries followed by
//! the sections themselves. Sections, in order: one surface series per
//! `(subject, movie)` stored frame-major (`seconds × vertices` `f32`), one
//! video sequence per clip, one audio sequence per clip, the clip metadata
//! table (`movie, clip, offset_seconds` as `u32`), and optionally the
//! concept matrix (`clips × K` `f64`).

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use ndarray::Array2;

use super::bytes::*;
use crate::datagen::{TripletSource, WindowSource, World, WorldConfig};
use crate::icosphere::SurfaceSeries;
use crate::{Result, SimError};

const MAGIC: &[u8; 4] = b"SIMD";
const VERSION: u32 = 1;
const ENTRY_BYTES: u64 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Section {
    offset: u64,
    len: u64,
    crc: u32,
}

fn series_payload(s: &SurfaceSeries) -> Vec<u8> {
    f32_bytes(s.values.t().iter().copied())
}

pub fn write_dataset(world: &World, path: &Path) -> Result<()> {
    let c = &world.config;
    let json = serde_json::to_vec(c)?;
    let mut payloads: Vec<Vec<u8>> = Vec::new();
    payloads.extend(world.series.iter().map(series_payload));
    payloads.extend(world.video.iter().map(|v| f32_bytes(v.iter().copied())));
    payloads.extend(world.audio.iter().map(|a| f32_bytes(a.iter().copied())));
    let mut meta = Vec::new();
    for movie in 0..c.num_movies {
        for clip in 0..c.clips_per_movie {
            for v in [movie, clip, c.offset_seconds(clip)] {
                meta.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
    }
    payloads.push(meta);
    if let Some(k) = &world.concepts {
        payloads.push(k.iter().flat_map(|x| x.to_le_bytes()).collect());
    }

    let header_len = 4 + 4 + 4 + json.len() as u64 + 4 + 4;
    let mut offset = header_len + ENTRY_BYTES * payloads.len() as u64;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, json.len() as u32)?;
    w.write_all(&json)?;
    put_u32(&mut w, world.concepts.is_some() as u32)?;
    put_u32(&mut w, payloads.len() as u32)?;
    for p in &payloads {
        put_u64(&mut w, offset)?;
        put_u64(&mut w, p.len() as u64)?;
        put_u32(&mut w, crc32fast::hash(p))?;
        offset += p.len() as u64;
    }
    for p in &payloads {
        w.write_all(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Random-access reader. Stimulus sequences are loaded on open; surface
/// windows are read on demand from the series sections.
#[derive(Debug)]
pub struct DatasetReader {
    config: WorldConfig,
    has_concepts: bool,
    sections: Vec<Section>,
    video: Vec<Array2<f32>>,
    audio: Vec<Array2<f32>>,
    file: Mutex<File>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)
            .map_err(|e| SimError::Argument(format!("cannot open dataset {}: {e}", path.display())))?;
        let file_len = file.metadata()?.len();
        let mut head = std::io::BufReader::new(&mut file);
        expect_magic(&mut head, MAGIC)?;
        let version = get_u32(&mut head)?;
        if version != VERSION {
            return Err(SimError::Format(format!("unsupported dataset version {version}")));
        }
        let json_len = get_u32(&mut head)? as usize;
        let config: WorldConfig = serde_json::from_slice(&get_vec(&mut head, json_len)?)
            .map_err(|e| SimError::Format(format!("dataset config: {e}")))?;
        config.validate().map_err(|e| SimError::Format(e.to_string()))?;
        let has_concepts = get_u32(&mut head)? & 1 == 1;
        let count = get_u32(&mut head)? as usize;
        let clips = config.num_clips();
        let expected = config.num_subjects * config.num_movies + 2 * clips + 1 + has_concepts as usize;
        if count != expected {
            return Err(SimError::Format(format!("dataset has {count} sections, config implies {expected}")));
        }
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let s = Section {
                offset: get_u64(&mut head)?,
                len: get_u64(&mut head)?,
                crc: get_u32(&mut head)?,
            };
            if s.offset.checked_add(s.len).is_none_or(|end| end > file_len) {
                return Err(SimError::Format("section extends past end of file".into()));
            }
            sections.push(s);
        }
        drop(head);
        let mut reader = Self {
            config,
            has_concepts,
            sections,
            video: Vec::new(),
            audio: Vec::new(),
            file: Mutex::new(file),
        };
        let c = &reader.config;
        let base = c.num_subjects * c.num_movies;
        let (vt, vd, at, ad) = (c.video_tokens(), c.video_dim, c.audio_tokens, c.audio_dim);
        let mut video = Vec::with_capacity(clips);
        let mut audio = Vec::with_capacity(clips);
        for i in 0..clips {
            video.push(reader.read_matrix_f32(base + i, vt, vd)?);
            audio.push(reader.read_matrix_f32(base + clips + i, at, ad)?);
        }
        reader.video = video;
        reader.audio = audio;
        Ok(reader)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn read_range(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut f = self.file.lock().map_err(|_| SimError::State("dataset file lock poisoned".into()))?;
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; len];
        f.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }

    fn read_section(&self, i: usize) -> Result<Vec<u8>> {
        let s = self.sections[i];
        let buf = self.read_range(s.offset, s.len as usize)?;
        check_crc(&buf, s.crc, &format!("section {i}"))?;
        Ok(buf)
    }

    fn read_matrix_f32(&self, i: usize, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let buf = self.read_section(i)?;
        if buf.len() != rows * cols * 4 {
            return Err(SimError::Format(format!("section {i} has {} bytes, expected {}", buf.len(), rows * cols * 4)));
        }
        Ok(Array2::from_shape_vec((rows, cols), f32_from(&buf)).expect("sized"))
    }

    /// Full surface series of one subject and movie (CRC checked).
    pub fn read_series(&self, subject: usize, movie: usize) -> Result<SurfaceSeries> {
        let c = &self.config;
        if subject >= c.num_subjects || movie >= c.num_movies {
            return Err(SimError::Bounds(format!("series ({subject}, {movie}) out of range")));
        }
        let frames = self.read_matrix_f32(subject * c.num_movies + movie, c.series_seconds(), c.num_vertices())?;
        SurfaceSeries::new(c.mesh_level, frames.t().to_owned())
    }

    /// Clip metadata rows `(movie, clip, offset_seconds)`.
    pub fn read_metadata(&self) -> Result<Vec<[u32; 3]>> {
        let c = &self.config;
        let buf = self.read_section(c.num_subjects * c.num_movies + 2 * c.num_clips())?;
        Ok(buf
            .chunks_exact(12)
            .map(|r| {
                let u = |k: usize| u32::from_le_bytes(r[4 * k..4 * k + 4].try_into().expect("4 bytes"));
                [u(0), u(1), u(2)]
            })
            .collect())
    }

    pub fn read_concepts(&self) -> Result<Option<Array2<f64>>> {
        if !self.has_concepts {
            return Ok(None);
        }
        let c = &self.config;
        let buf = self.read_section(self.sections.len() - 1)?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Array2::from_shape_vec((c.num_clips(), c.concept_dim), values)
            .map(Some)
            .map_err(|_| SimError::Format("concept sidecar has the wrong size".into()))
    }

    /// Loads everything back into a [`World`].
    pub fn load_world(&self) -> Result<World> {
        let c = &self.config;
        let mut series = Vec::with_capacity(c.num_subjects * c.num_movies);
        for s in 0..c.num_subjects {
            for m in 0..c.num_movies {
                series.push(self.read_series(s, m)?);
            }
        }
        Ok(World {
            config: c.clone(),
            series,
            video: self.video.clone(),
            audio: self.audio.clone(),
            concepts: self.read_concepts()?,
        })
    }
}

impl WindowSource for DatasetReader {
    /// Reads only the frames of one window.
    fn window(&self, id: usize) -> Result<Array2<f32>> {
        let c = &self.config;
        if id >= c.num_triplets() {
            return Err(SimError::Bounds(format!("triplet id {id} out of range ({} triplets)", c.num_triplets())));
        }
        let key = c.triplet_key(id);
        let first = c.offset_seconds(key.clip) + c.lag_seconds;
        let frames = c.frames_per_window;
        if first + frames > c.series_seconds() {
            return Err(SimError::Bounds(format!("window {}..{} outside series", first, first + frames)));
        }
        let v = c.num_vertices();
        let s = self.sections[key.subject * c.num_movies + key.movie];
        let buf = self.read_range(s.offset + (first * v * 4) as u64, frames * v * 4)?;
        let frame_major = Array2::from_shape_vec((frames, v), f32_from(&buf)).expect("sized");
        Ok(frame_major.t().to_owned())
    }
}

impl TripletSource for DatasetReader {
    fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn video(&self, id: usize) -> Result<&Array2<f32>> {
        self.check(id)?;
        let k = self.config.triplet_key(id);
        Ok(&self.video[self.config.clip_index(k.movie, k.clip)])
    }

    fn audio(&self, id: usize) -> Result<&Array2<f32>> {
        self.check(id)?;
        let k = self.config.triplet_key(id);
        Ok(&self.audio[self.config.clip_index(k.movie, k.clip)])
    }
}

impl DatasetReader {
    fn check(&self, id: usize) -> Result<()> {
        if id >= self.config.num_triplets() {
            return Err(SimError::Bounds(format!("triplet id {id} out of range")));
        }
        Ok(())
    }
}
