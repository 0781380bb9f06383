//! `FFCK` checkpoints: a trained network with everything needed to
//! reconstruct the volume it was fitted to.
//!
//! Little-endian throughout; the last four bytes are a CRC-32 of everything
//! before them.
//!
//! ```text
//! "FFCK" | u32 version
//! config:  u32 epochs | u32 features | f64 gauss_multiplier | u32 hidden_layers
//!          u32 width | u32 batch_size | f64 learning_rate | u64 seed
//!          u32 band_count | u8 precision | u8 exec
//! u8 coordinate convention | u32 nx, ny, nz
//! u32 grid_count | per grid: u16 name_len, name
//! u8 has_normalization | per grid: f32 min, f32 max
//! encoder: u32 k | u32 bands | k*3 f32 projection | bands f32 log-scales
//! mlp:     u32 layers | per layer: u32 inputs, u32 outputs, weights f32, bias f32
//! losses:  u32 epochs | f64 first | f64 last | u32 crc32 of all f64 losses
//! u32 crc32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::CoordConvention;
use crate::error::{Error, Result};
use crate::net::{band_partition, Dense, FfNetwork, FourierEncoder};
use crate::train::{ExecMode, Precision, TrainConfig};
use crate::volume::{Dims, GridRange, NormalizationParams};

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const VERSION: u32 = 1;

/// Summary of a loss history, enough to tell two training runs apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDigest {
    pub epochs: u32,
    pub first: f64,
    pub last: f64,
    pub crc: u32,
}

impl LossDigest {
    pub fn of(losses: &[f64]) -> Self {
        let mut hasher = crc32fast::Hasher::new();
        for l in losses {
            hasher.update(&l.to_le_bytes());
        }
        LossDigest {
            epochs: losses.len() as u32,
            first: losses.first().copied().unwrap_or(f64::NAN),
            last: losses.last().copied().unwrap_or(f64::NAN),
            crc: hasher.finalize(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dims: Dims,
    pub grid_names: Vec<String>,
    /// Carries the coordinate convention and normalization ranges.
    pub network: FfNetwork<f32>,
    pub losses: LossDigest,
}

struct Out {
    buf: Vec<u8>,
}

impl Out {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::format("FFCK", format!("{v} exceeds u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct In<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::format("FFCK", "unexpected end of data"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format("FFCK", "size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.network;
        if self.grid_names.len() != net.outputs() {
            return Err(Error::Shape(format!(
                "{} grid names for {} outputs",
                self.grid_names.len(),
                net.outputs()
            )));
        }
        let mut o = Out { buf: Vec::new() };
        o.buf.extend_from_slice(MAGIC);
        o.u32(VERSION as usize)?;

        let c = &self.config;
        o.u32(c.epochs)?;
        o.u32(c.features)?;
        o.f64(c.gauss_multiplier);
        o.u32(c.hidden_layers)?;
        o.u32(c.width)?;
        o.u32(c.batch_size)?;
        o.f64(c.learning_rate);
        o.u64(c.seed);
        o.u32(c.band_count)?;
        o.u8(match c.precision {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        o.u8(match c.exec {
            ExecMode::Strict => 0,
            ExecMode::Fast => 1,
        });

        o.u8(net.convention.tag());
        o.u32(self.dims.nx)?;
        o.u32(self.dims.ny)?;
        o.u32(self.dims.nz)?;

        o.u32(self.grid_names.len())?;
        for name in &self.grid_names {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::format("FFCK", format!("grid name {name:?} too long")))?;
            o.u16(len);
            o.buf.extend_from_slice(name.as_bytes());
        }
        match &net.normalization {
            Some(p) => {
                if p.ranges.len() != self.grid_names.len() {
                    return Err(Error::Shape("normalization ranges do not match grids".into()));
                }
                o.u8(1);
                for r in &p.ranges {
                    o.f32s(&[r.min, r.max]);
                }
            }
            None => o.u8(0),
        }

        let enc = &net.encoder;
        o.u32(enc.features())?;
        o.u32(enc.band_count())?;
        for row in enc.basis() {
            o.f32s(row);
        }
        o.f32s(enc.log_scales());

        o.u32(net.layers.len())?;
        for l in &net.layers {
            o.u32(l.inputs)?;
            o.u32(l.outputs)?;
            o.f32s(&l.weights);
            o.f32s(&l.bias);
        }

        o.u32(self.losses.epochs as usize)?;
        o.f64(self.losses.first);
        o.f64(self.losses.last);
        o.u32(self.losses.crc as usize)?;

        let crc = crc32fast::hash(&o.buf);
        o.u32(crc as usize)?;
        Ok(o.buf)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        if data.len() < 8 || &data[..4] != MAGIC {
            return Err(Error::format("FFCK", "bad magic"));
        }
        let (body, tail) = data.split_at(data.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::format("FFCK", "checksum mismatch"));
        }
        let mut r = In { data: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("FFCK", format!("unsupported version {version}")));
        }

        let config = TrainConfig {
            epochs: r.len()?,
            features: r.len()?,
            gauss_multiplier: r.f64()?,
            hidden_layers: r.len()?,
            width: r.len()?,
            batch_size: r.len()?,
            learning_rate: r.f64()?,
            seed: r.u64()?,
            band_count: r.len()?,
            precision: match r.u8()? {
                0 => Precision::F32,
                1 => Precision::F64,
                t => return Err(Error::format("FFCK", format!("unknown precision tag {t}"))),
            },
            exec: match r.u8()? {
                0 => ExecMode::Strict,
                1 => ExecMode::Fast,
                t => return Err(Error::format("FFCK", format!("unknown exec tag {t}"))),
            },
        };

        let tag = r.u8()?;
        let convention = CoordConvention::from_tag(tag)
            .ok_or_else(|| Error::format("FFCK", format!("unknown coordinate convention {tag}")))?;
        let dims = Dims::new(r.len()?, r.len()?, r.len()?);

        let grid_count = r.len()?;
        let mut grid_names = Vec::new();
        for _ in 0..grid_count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("FFCK", "grid name is not UTF-8"))?;
            grid_names.push(name.to_string());
        }
        let normalization = match r.u8()? {
            0 => None,
            1 => {
                let mut ranges = Vec::with_capacity(grid_count);
                for _ in 0..grid_count {
                    ranges.push(GridRange {
                        min: r.f32()?,
                        max: r.f32()?,
                    });
                }
                Some(NormalizationParams { ranges })
            }
            t => return Err(Error::format("FFCK", format!("bad normalization flag {t}"))),
        };

        let k = r.len()?;
        let bands = r.len()?;
        if bands == 0 || bands > k {
            return Err(Error::format("FFCK", format!("{bands} bands for {k} features")));
        }
        let flat = r.f32s(k * 3)?;
        let basis = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let log_scales = r.f32s(bands)?;
        let encoder = FourierEncoder {
            basis,
            log_scales,
            band_of_row: band_partition(k, bands),
            gauss_multiplier: config.gauss_multiplier,
        };

        let layer_count = r.len()?;
        let mut layers = Vec::with_capacity(layer_count);
        let mut expected_inputs = 2 * k;
        for _ in 0..layer_count {
            let inputs = r.len()?;
            let outputs = r.len()?;
            if inputs != expected_inputs {
                return Err(Error::format("FFCK", "layer dimensions do not chain"));
            }
            let weights = r.f32s(inputs * outputs)?;
            let bias = r.f32s(outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
            expected_inputs = outputs;
        }
        if layer_count < 2 || expected_inputs != grid_count {
            return Err(Error::format("FFCK", "output layer does not match grid count"));
        }

        let losses = LossDigest {
            epochs: r.u32()?,
            first: r.f64()?,
            last: r.f64()?,
            crc: r.u32()?,
        };
        if r.pos != body.len() {
            return Err(Error::format("FFCK", "trailing bytes"));
        }

        Ok(Checkpoint {
            config,
            dims,
            grid_names,
            network: FfNetwork {
                encoder,
                layers,
                convention,
                normalization,
            },
            losses,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut data = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut data)?;
        Self::from_bytes(&data)
    }
}
