//! Binary checkpoint format.
//!
//! ```text
//! "SEGF"  u32 version
//! u32 depth, base_channels, convs_per_block, kernel_size,
//!     in_channels, out_channels, input_h, input_w
//! u8 dtype (4 = f32, 8 = f64)   u32 record count
//! per record: u32 name_len, name (UTF-8), u8 rank, rank x u32 dims,
//!             values (little endian)
//! ```
//!
//! Records come in layer order as `<layer>.weight` (rank 4) then
//! `<layer>.bias` (rank 1). All integers are little endian.

use std::fs;
use std::path::Path;

use crate::error::{Result, SegError};
use crate::tensor::{DType, Real, Shape, Tensor};
use crate::unet::{ConvLayer, ModelParams, UNetConfig};

pub const MAGIC: &[u8; 4] = b"SEGF";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(64 + params.num_parameters() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        c.depth,
        c.base_channels,
        c.convs_per_block,
        c.kernel_size,
        c.in_channels,
        c.out_channels,
        c.input_size.0,
        c.input_size.1,
    ] {
        put_u32(&mut out, v);
    }
    out.push(T::DTYPE.tag());
    put_u32(&mut out, params.layers().len() * 2);
    for layer in params.layers() {
        let s = layer.weight.shape();
        let records: [(String, Vec<usize>, &Tensor<T>); 2] = [
            (format!("{}.weight", layer.name), s.dims().to_vec(), &layer.weight),
            (format!("{}.bias", layer.name), vec![layer.bias.numel()], &layer.bias),
        ];
        for (name, dims, t) in records {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            out.push(dims.len() as u8);
            for d in dims {
                put_u32(&mut out, d);
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SegError::ModelFile(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Configuration and element type stored in a checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub config: UNetConfig,
    pub dtype: DType,
    pub records: usize,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(4, "magic")? != MAGIC {
        return Err(SegError::ModelFile("not a segforge model (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(SegError::ModelFile(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut f = [0usize; 8];
    for v in &mut f {
        *v = r.u32("config")?;
    }
    let config = UNetConfig {
        depth: f[0],
        base_channels: f[1],
        convs_per_block: f[2],
        kernel_size: f[3],
        in_channels: f[4],
        out_channels: f[5],
        input_size: (f[6], f[7]),
    };
    let tag = r.u8("dtype")?;
    let dtype = DType::from_tag(tag).ok_or_else(|| SegError::ModelFile(format!("unknown dtype tag {tag}")))?;
    let records = r.u32("record count")?;
    Ok(Header { config, dtype, records })
}

/// Reads only the header.
pub fn peek_header(bytes: &[u8]) -> Result<Header> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Decodes a checkpoint stored with element type `S`, converting to `T`.
fn decode_stored<S: Real, T: Real>(r: &mut Reader<'_>, header: &Header) -> Result<ModelParams<T>> {
    header
        .config
        .validate()
        .map_err(|e| SegError::ModelFile(format!("stored config is invalid: {e}")))?;
    let specs = header.config.layers();
    if header.records != specs.len() * 2 {
        return Err(SegError::ModelFile(format!(
            "expected {} records for this config, found {}",
            specs.len() * 2,
            header.records
        )));
    }
    let mut read_record = |expect: String| -> Result<(Vec<usize>, Vec<T>)> {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| SegError::ModelFile("record name is not UTF-8".into()))?;
        if name != expect {
            return Err(SegError::ModelFile(format!("expected record {expect}, found {name}")));
        }
        let rank = r.u8("rank")? as usize;
        let dims: Vec<usize> = (0..rank).map(|_| r.u32("dims")).collect::<Result<_>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes_needed = numel.and_then(|n| n.checked_mul(S::DTYPE.size()));
        let Some(bytes_needed) = bytes_needed else {
            return Err(SegError::ModelFile(format!("{name}: dimensions overflow")));
        };
        let raw = r.take(bytes_needed, name)?;
        let data = raw
            .chunks_exact(S::DTYPE.size())
            .map(|c| T::of(S::read_le(c).f64()))
            .collect();
        Ok((dims, data))
    };
    let mut layers = Vec::with_capacity(specs.len());
    for spec in &specs {
        let (wd, w) = read_record(format!("{}.weight", spec.name))?;
        let (bd, b) = read_record(format!("{}.bias", spec.name))?;
        let wshape = match wd[..] {
            [a, b, c, d] => Shape::new(a, b, c, d),
            _ => return Err(SegError::ModelFile(format!("{}.weight must have rank 4", spec.name))),
        };
        let bshape = match bd[..] {
            [c] => Shape::new(1, c, 1, 1),
            _ => return Err(SegError::ModelFile(format!("{}.bias must have rank 1", spec.name))),
        };
        layers.push(ConvLayer {
            name: spec.name.clone(),
            weight: Tensor::from_vec(wshape, w)?,
            bias: Tensor::from_vec(bshape, b)?,
        });
    }
    ModelParams::from_layers(header.config, layers)
}

/// Decodes a checkpoint, converting stored values to `T` if needed.
pub fn decode_as<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let params = match header.dtype {
        DType::F32 => decode_stored::<f32, T>(&mut r, &header)?,
        DType::F64 => decode_stored::<f64, T>(&mut r, &header)?,
    };
    if r.pos != bytes.len() {
        return Err(SegError::ModelFile(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

/// Decodes a checkpoint whose stored element type must be `T`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let header = peek_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(SegError::ModelFile(format!(
            "model stores {}, expected {}",
            header.dtype,
            T::DTYPE
        )));
    }
    decode_as(bytes)
}

pub fn save<T: Real>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    fs::write(path, encode(params)).map_err(|source| SegError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| SegError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn with_path(path: &Path, e: SegError) -> SegError {
    match e {
        SegError::ModelFile(m) => SegError::ModelFile(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn load<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    decode(&read(path)?).map_err(|e| with_path(path, e))
}

pub fn load_as<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    decode_as(&read(path)?).map_err(|e| with_path(path, e))
}
