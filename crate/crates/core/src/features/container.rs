//! Binary container for feature sequences.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SCODFEAT"
//! version      u32      1
//! frame_length u32
//! hop_length   u32
//! fft_size     u32
//! sample_rate  u32
//! frames       u64      frame count shared by every stream
//! streams      u32
//! per stream:  name_len u16, name (utf-8), space u8, dim u32
//! payload:     per stream in header order, frames x dim f64 row-major
//! ```
//!
//! A plain feature file holds one stream named `features`; a stereo triple
//! holds `x`, `n` and `y`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FeatureConfig, FeatureSpace, FeatureVector};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCODFEAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameParams {
    pub frame_length: u32,
    pub hop_length: u32,
    pub fft_size: u32,
    pub sample_rate: u32,
}

impl FrameParams {
    pub fn from_config(cfg: &FeatureConfig, sample_rate: u32) -> Self {
        Self {
            frame_length: cfg.frame_length as u32,
            hop_length: cfg.hop_length as u32,
            fft_size: cfg.fft_size as u32,
            sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub name: String,
    pub space: FeatureSpace,
    pub frames: Vec<FeatureVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureContainer {
    pub params: FrameParams,
    pub streams: Vec<FeatureStream>,
}

fn corrupt(e: std::io::Error) -> Error {
    Error::Corrupt(format!("feature container: {e}"))
}

impl FeatureContainer {
    pub fn single(params: FrameParams, frames: Vec<FeatureVector>) -> Result<Self> {
        let space = frames.first().ok_or(Error::Empty("feature frames"))?.space;
        Ok(Self {
            params,
            streams: vec![FeatureStream {
                name: "features".into(),
                space,
                frames,
            }],
        })
    }

    pub fn stream(&self, name: &str) -> Option<&FeatureStream> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn frame_count(&self) -> usize {
        self.streams.first().map_or(0, |s| s.frames.len())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let frames = self.frame_count();
        let mut dims = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            if s.frames.len() != frames {
                return Err(Error::DimensionMismatch {
                    expected: frames,
                    got: s.frames.len(),
                });
            }
            let dim = s.frames.first().map_or(0, FeatureVector::dim);
            if let Some(f) = s.frames.iter().find(|f| f.dim() != dim || f.space != s.space) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.dim(),
                });
            }
            dims.push(dim);
        }
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.params.frame_length)?;
        w.write_u32::<LittleEndian>(self.params.hop_length)?;
        w.write_u32::<LittleEndian>(self.params.fft_size)?;
        w.write_u32::<LittleEndian>(self.params.sample_rate)?;
        w.write_u64::<LittleEndian>(frames as u64)?;
        w.write_u32::<LittleEndian>(self.streams.len() as u32)?;
        for (s, dim) in self.streams.iter().zip(&dims) {
            let name = s.name.as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name)?;
            w.write_u8(s.space.code())?;
            w.write_u32::<LittleEndian>(*dim as u32)?;
        }
        for s in &self.streams {
            for f in &s.frames {
                for v in f.statics.iter().chain(&f.deltas) {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("bad feature container magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let params = FrameParams {
            frame_length: r.read_u32::<LittleEndian>().map_err(corrupt)?,
            hop_length: r.read_u32::<LittleEndian>().map_err(corrupt)?,
            fft_size: r.read_u32::<LittleEndian>().map_err(corrupt)?,
            sample_rate: r.read_u32::<LittleEndian>().map_err(corrupt)?,
        };
        let frames = r.read_u64::<LittleEndian>().map_err(corrupt)? as usize;
        let count = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>().map_err(corrupt)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(corrupt)?;
            let name = String::from_utf8(name).map_err(|_| Error::Corrupt("stream name is not utf-8".into()))?;
            let code = r.read_u8().map_err(corrupt)?;
            let space = FeatureSpace::from_code(code)
                .ok_or_else(|| Error::Corrupt(format!("unknown feature space code {code}")))?;
            let dim = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
            headers.push((name, space, dim));
        }
        let mut streams = Vec::with_capacity(count);
        for (name, space, dim) in headers {
            let mut out = Vec::with_capacity(frames);
            let mut row = vec![0.0; dim];
            for _ in 0..frames {
                r.read_f64_into::<LittleEndian>(&mut row).map_err(corrupt)?;
                out.push(FeatureVector::from_concatenated(&row, space));
            }
            streams.push(FeatureStream {
                name,
                space,
                frames: out,
            });
        }
        Ok(Self { params, streams })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> FrameParams {
        FrameParams {
            frame_length: 200,
            hop_length: 80,
            fft_size: 256,
            sample_rate: 8000,
        }
    }

    proptest! {
        #[test]
        fn round_trips_bit_exact(values in proptest::collection::vec(-1e6f64..1e6, 1..40), frames in 1usize..5) {
            let dim = 2 * (values.len().div_ceil(2));
            let mut row = values.clone();
            row.resize(dim, 0.25);
            let fv: Vec<FeatureVector> = (0..frames)
                .map(|t| FeatureVector::from_concatenated(
                    &row.iter().map(|v| v + t as f64).collect::<Vec<_>>(),
                    FeatureSpace::LogMelFbd42))
                .collect();
            let c = FeatureContainer::single(params(), fv).unwrap();
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = FeatureContainer::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let fv = vec![FeatureVector::from_concatenated(&[1.0, 2.0], FeatureSpace::Mfcc0d26); 3];
        let c = FeatureContainer::single(params(), fv).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            FeatureContainer::read_from(buf.as_slice()),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(
            FeatureContainer::read_from(&b"RIFF0000"[..]),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn streams_must_share_frame_count() {
        let a = vec![FeatureVector::from_concatenated(&[1.0, 2.0], FeatureSpace::Mfcc0d26); 3];
        let c = FeatureContainer {
            params: params(),
            streams: vec![
                FeatureStream {
                    name: "x".into(),
                    space: FeatureSpace::Mfcc0d26,
                    frames: a.clone(),
                },
                FeatureStream {
                    name: "y".into(),
                    space: FeatureSpace::Mfcc0d26,
                    frames: a[..2].to_vec(),
                },
            ],
        };
        assert!(c.write_to(Vec::new()).is_err());
    }
}
