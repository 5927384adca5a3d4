//! On-disk formats: `SPT1` sparse tensors, `HEDW` weights, CSV and `.bin`
//! point clouds, JSON configs.

use std::fs;
use std::path::Path;

use hednet_core::network::{NetworkConfig, PointCloud};
use hednet_core::params::ParamRecord;
use hednet_core::sparse::{Coord, SparseTensor};

use crate::error::{CliError, CliResult};

pub const SPT_MAGIC: &[u8; 4] = b"SPT1";
pub const HEDW_MAGIC: &[u8; 4] = b"HEDW";
const VERSION: u32 = 1;

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Little-endian cursor that reports truncation as a format error.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32, String> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, String> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn finish(&self) -> Result<(), String> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(format!("{n} trailing bytes")),
        }
    }
}

pub fn encode_sparse(t: &SparseTensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + t.len() * (4 * (1 + t.ndim()) + 4 * t.channels()));
    out.extend_from_slice(SPT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.ndim() as u8);
    out.extend_from_slice(&(t.batch_size() as u32).to_le_bytes());
    for &n in t.spatial_shape() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(t.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for c in t.coords() {
        out.extend_from_slice(&c.batch().to_le_bytes());
        for &v in c.spatial() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in t.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sparse(bytes: &[u8]) -> Result<SparseTensor<f32>, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != SPT_MAGIC {
        return Err("not a sparse tensor file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported sparse tensor version {version}"));
    }
    let d = r.u8()? as usize;
    if !(2..=3).contains(&d) {
        return Err(format!("unsupported dimensionality {d}"));
    }
    let batch = r.u32()? as usize;
    let shape = (0..d).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let channels = r.u32()? as usize;
    let n = usize::try_from(r.u64()?).map_err(|_| "row count too large".to_string())?;
    let need = n.checked_mul(4 * (1 + d) + 4 * channels).ok_or("row count too large")?;
    if bytes.len().saturating_sub(r.pos) != need {
        return Err(format!("{n} rows need {need} payload bytes, file has {}", bytes.len() - r.pos));
    }
    let mut coords = Vec::with_capacity(n);
    let mut spatial = vec![0i32; d];
    for _ in 0..n {
        let b = r.i32()?;
        for v in spatial.iter_mut() {
            *v = r.i32()?;
        }
        coords.push(Coord::new(b, &spatial));
    }
    let features = (0..n * channels).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    SparseTensor::new(coords, features, shape, batch, channels).map_err(|e| e.to_string())
}

pub fn read_sparse(path: &Path) -> CliResult<SparseTensor<f32>> {
    decode_sparse(&read(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_sparse(path: &Path, t: &SparseTensor<f32>) -> CliResult<()> {
    write(path, &encode_sparse(t))
}

pub fn encode_weights(records: &[ParamRecord]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(HEDW_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        let name = rec.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| format!("record name `{}` too long", rec.name))?;
        let rank = u8::try_from(rec.dims.len()).map_err(|_| format!("record `{}` has too many dims", rec.name))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &rec.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<ParamRecord>, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != HEDW_MAGIC {
        return Err("not a weights file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported weights version {version}"));
    }
    let count = r.u32()?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "record name is not UTF-8".to_string())?.to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("record size overflows")?;
        if n.checked_mul(4).is_none_or(|b| b > bytes.len()) {
            return Err(format!("record `{name}` claims {n} values"));
        }
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        records.push(ParamRecord { name, dims, data });
    }
    r.finish()?;
    Ok(records)
}

pub fn read_weights(path: &Path) -> CliResult<Vec<ParamRecord>> {
    decode_weights(&read(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_weights(path: &Path, records: &[ParamRecord]) -> CliResult<()> {
    let bytes = encode_weights(records).map_err(|e| CliError::format(path, e))?;
    write(path, &bytes)
}

/// CSV with header `x,y,z[,f1,...]`. An empty file is an empty cloud.
pub fn parse_csv(text: &str) -> Result<PointCloud, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(PointCloud::empty(0));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
        return Err(format!("line 1: header must start with x,y,z, got `{header}`"));
    }
    let width = cols.len();
    let mut values = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(format!("line {}: expected {width} fields, found {}", i + 1, fields.len()));
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| format!("line {}: `{f}` is not a number", i + 1))?;
            values.push(v);
        }
    }
    PointCloud::new(width - 3, values).map_err(|e| e.to_string())
}

/// Consecutive little-endian f32 `(x, y, z, intensity)` quadruples.
pub fn parse_bin(bytes: &[u8]) -> Result<PointCloud, String> {
    if !bytes.len().is_multiple_of(16) {
        return Err(format!("{} bytes is not a whole number of 16-byte points", bytes.len()));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    PointCloud::new(1, values).map_err(|e| e.to_string())
}

pub fn read_point_cloud(path: &Path) -> CliResult<PointCloud> {
    let bytes = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "bin") {
        parse_bin(&bytes)
    } else {
        std::str::from_utf8(&bytes).map_err(|_| "file is not UTF-8 text".to_string()).and_then(parse_csv)
    };
    parsed.map_err(|e| CliError::format(path, e))
}

pub fn read_config(path: &Path) -> CliResult<NetworkConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: NetworkConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.plan().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_round_trip() {
        let t = SparseTensor::new(
            vec![Coord::new(0, &[0, 1, 2]), Coord::new(1, &[3, 0, 0])],
            vec![1.5, -2.0, 0.25, 8.0],
            vec![4, 2, 3],
            2,
            2,
        )
        .unwrap();
        let bytes = encode_sparse(&t);
        assert_eq!(&bytes[..4], b"SPT1");
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 12 + 4 + 8 + 2 * 16 + 4 * 4);
        assert_eq!(decode_sparse(&bytes).unwrap(), t);
        assert!(decode_sparse(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let recs = vec![
            ParamRecord { name: "a.w".into(), dims: vec![1, 2, 2], data: vec![1.0, 2.0, 3.0, 4.0] },
            ParamRecord { name: "a.gamma".into(), dims: vec![2], data: vec![1.0, 1.0] },
        ];
        let bytes = encode_weights(&recs).unwrap();
        assert_eq!(decode_weights(&bytes).unwrap(), recs);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
    }

    #[test]
    fn csv_parsing() {
        let pc = parse_csv("x,y,z,intensity\n1,2,3,0.5\n\n-1,0,0.25,1\n").unwrap();
        assert_eq!((pc.len(), pc.num_extra()), (2, 1));
        assert_eq!(pc.point(1), &[-1.0, 0.0, 0.25, 1.0]);
        assert_eq!(parse_csv("").unwrap().len(), 0);
        let err = parse_csv("x,y,z\n1,2,3\n1,2,oops\n").unwrap_err();
        assert!(err.starts_with("line 3:"), "{err}");
        assert!(parse_csv("x,y,z\n1,2\n").unwrap_err().starts_with("line 2:"));
        assert!(parse_csv("a,b,c\n").is_err());
    }

    #[test]
    fn bin_parsing() {
        let bytes: Vec<u8> = [1.0f32, 2.0, 3.0, 0.5].iter().flat_map(|v| v.to_le_bytes()).collect();
        let pc = parse_bin(&bytes).unwrap();
        assert_eq!(pc.point(0), &[1.0, 2.0, 3.0, 0.5]);
        assert!(parse_bin(&bytes[..15]).is_err());
    }
}
