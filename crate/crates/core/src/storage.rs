//! Versioned binary files for value functions and policy tables.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, a JSON header,
//! then little-endian `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Grid, PolicyTable, ValueField};
use crate::error::{Error, Result};

pub const VALUE_MAGIC: &[u8; 8] = b"TSVALUE\0";
pub const POLICY_MAGIC: &[u8; 8] = b"TSPOLCY\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHeader {
    pub grid: Grid,
    pub gamma: f64,
    pub residual: f64,
    pub iterations: usize,
    pub tol_pde: f64,
    pub tol_h: f64,
    #[serde(default)]
    pub assumption3: Vec<String>,
    #[serde(default)]
    pub box_change: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeader {
    pub grid: Grid,
    pub num_classes: usize,
    pub num_stations: usize,
    pub count: usize,
}

fn encode<H: Serialize>(magic: &[u8; 8], header: &H, data: &[&[f64]]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("serializable header");
    let n: usize = data.iter().map(|d| d.len()).sum();
    let mut out = Vec::with_capacity(16 + h.len() + 8 * n);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for d in data {
        for v in *d {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode<H: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let bad = |m: &str| Error::Parse(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: H = serde_json::from_slice(body)?;
    let rest = &bytes[16 + hlen..];
    if !rest.len().is_multiple_of(8) {
        return Err(bad("data is not a whole number of f64 values"));
    }
    let data = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut out)?;
    Ok(out)
}

pub fn encode_value(v: &ValueField, assumption3: &[String], box_change: Option<f64>) -> Vec<u8> {
    let header = ValueHeader {
        grid: v.grid.clone(),
        gamma: v.gamma,
        residual: v.residual,
        iterations: v.iterations,
        tol_pde: v.tol_pde,
        tol_h: v.tol_h,
        assumption3: assumption3.to_vec(),
        box_change,
        count: v.values.len(),
    };
    encode(VALUE_MAGIC, &header, &[&v.values])
}

pub fn decode_value(bytes: &[u8]) -> Result<(ValueField, ValueHeader)> {
    let (h, values): (ValueHeader, _) = decode(VALUE_MAGIC, bytes)?;
    if values.len() != h.count || h.count != h.grid.len() {
        return Err(Error::Parse("value count does not match the grid".into()));
    }
    let field = ValueField {
        grid: h.grid.clone(),
        values,
        gamma: h.gamma,
        residual: h.residual,
        iterations: h.iterations,
        tol_pde: h.tol_pde,
        tol_h: h.tol_h,
    };
    Ok((field, h))
}

pub fn encode_policy(p: &PolicyTable) -> Vec<u8> {
    let header = PolicyHeader {
        grid: p.grid.clone(),
        num_classes: p.num_classes,
        num_stations: p.num_stations,
        count: p.grid.len(),
    };
    encode(POLICY_MAGIC, &header, &[&p.u, &p.v])
}

pub fn decode_policy(bytes: &[u8]) -> Result<PolicyTable> {
    let (h, data): (PolicyHeader, Vec<f64>) = decode(POLICY_MAGIC, bytes)?;
    let nu = h.count * h.num_classes;
    if h.count != h.grid.len() || data.len() != h.count * (h.num_classes + h.num_stations) {
        return Err(Error::Parse("policy size does not match the grid".into()));
    }
    Ok(PolicyTable {
        grid: h.grid,
        num_classes: h.num_classes,
        num_stations: h.num_stations,
        u: data[..nu].to_vec(),
        v: data[nu..].to_vec(),
    })
}

pub fn write_value(path: impl AsRef<Path>, v: &ValueField, assumption3: &[String], box_change: Option<f64>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_value(v, assumption3, box_change))
}

pub fn read_value(path: impl AsRef<Path>) -> Result<ValueField> {
    Ok(decode_value(&read_bytes(path.as_ref())?)?.0)
}

pub fn write_policy(path: impl AsRef<Path>, p: &PolicyTable) -> Result<()> {
    write_bytes(path.as_ref(), &encode_policy(p))
}

pub fn read_policy(path: impl AsRef<Path>) -> Result<PolicyTable> {
    decode_policy(&read_bytes(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> ValueField {
        let grid = Grid::centered(&[1.0, 0.5], 0.25);
        let values = (0..grid.len()).map(|i| i as f64 * 0.1 - 1.0 / 3.0).collect();
        ValueField { grid, values, gamma: 1.5, residual: 1e-13, iterations: 4, tol_pde: 1e-6, tol_h: 1e-8 }
    }

    #[test]
    fn value_roundtrip_is_bit_exact() {
        let v = field();
        let bytes = encode_value(&v, &["iii".to_string()], Some(1e-12));
        let (back, header) = decode_value(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(header.assumption3, vec!["iii"]);
        assert_eq!(&bytes[..8], VALUE_MAGIC);
    }

    #[test]
    fn policy_roundtrip() {
        let grid = Grid::centered(&[1.0], 0.5);
        let n = grid.len();
        let p = PolicyTable { grid, num_classes: 2, num_stations: 1, u: [1.0, 0.0].repeat(n), v: vec![1.0; n] };
        assert_eq!(decode_policy(&encode_policy(&p)).unwrap(), p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        write_policy(&path, &p).unwrap();
        assert_eq!(read_policy(&path).unwrap(), p);
    }

    #[test]
    fn wrong_magic_rejected() {
        let bytes = encode_value(&field(), &[], None);
        assert!(decode_policy(&bytes).is_err());
        assert!(decode_value(&bytes[..20]).is_err());
    }
}
