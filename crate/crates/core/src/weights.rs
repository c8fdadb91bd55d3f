//! Binary parameter files.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "FMCF" | version | entry count |
//!   { name length | name bytes (UTF-8) | rank | dims × rank | f32 LE × Π dims }*
//! ```
//!
//! Loading is strict: every tensor of the configured pipeline must appear
//! exactly once with the expected dims, nothing else may appear, and the
//! declared sizes must account for the whole file.

use std::collections::HashMap;
use std::path::Path;

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::pipeline::FusionParams;
use crate::tensor::Parameters;

pub const MAGIC: &[u8; 4] = b"FMCF";
pub const VERSION: u32 = 1;

/// One decoded tensor record.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(params: &impl Parameters) -> Vec<u8> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    params.visit("", &mut |name, dims, data| entries.push((name, dims, data.to_vec())));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dims, values) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
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
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail(&self, offset: usize, reason: String) -> Error {
        Error::Format { offset, reason }
    }
}

/// Parses the container without checking names against a pipeline.
pub fn decode_entries(bytes: &[u8]) -> Result<Vec<WeightEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected \"FMCF\"".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let start = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.fail(start + 4, "tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.fail(start, format!("tensor {name:?} size overflows")))?;
        let values_at = r.pos;
        let values: Vec<f32> = r
            .take(n, "values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(r.fail(values_at + 4 * i, format!("non-finite value in {name:?}")));
        }
        entries.push(WeightEntry { name, dims, values });
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

/// Decodes a file into parameters for `config`, strictly.
pub fn decode(bytes: &[u8], config: &FusionConfig) -> Result<FusionParams> {
    let entries = decode_entries(bytes)?;
    let mut by_name: HashMap<String, WeightEntry> = HashMap::with_capacity(entries.len());
    for e in entries {
        if by_name.contains_key(&e.name) {
            return Err(Error::Format {
                offset: 0,
                reason: format!("duplicate tensor {:?}", e.name),
            });
        }
        by_name.insert(e.name.clone(), e);
    }
    let mut params = FusionParams::init(config);
    let mut problem: Option<String> = None;
    params.visit_mut("", &mut |name, dims, data| {
        if problem.is_some() {
            return;
        }
        match by_name.remove(&name) {
            None => problem = Some(format!("missing tensor {name:?}")),
            Some(e) if e.dims != dims => {
                problem = Some(format!("tensor {name:?} has dims {:?}, expected {dims:?}", e.dims))
            }
            Some(e) => data.copy_from_slice(&e.values),
        }
    });
    if let Some(reason) = problem {
        return Err(Error::Format { offset: 0, reason });
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Format {
            offset: 0,
            reason: format!("unknown tensor {extra:?}"),
        });
    }
    Ok(params)
}

pub fn save_weights(params: &FusionParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights(path: &Path, config: &FusionConfig) -> Result<FusionParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FusionConfig {
        FusionConfig {
            channels: 8,
            heads: 2,
            image_size: 32,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let params = FusionParams::init(&cfg());
        let bytes = encode(&params);
        assert_eq!(&bytes[..4], b"FMCF");
        assert_eq!(decode(&bytes, &cfg()).unwrap(), params);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode(&FusionParams::init(&cfg()));
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            match decode(&bytes[..cut], &cfg()) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_header_and_trailing_bytes() {
        let mut bytes = encode(&FusionParams::init(&cfg()));
        bytes.push(0);
        assert!(matches!(decode(&bytes, &cfg()), Err(Error::Format { .. })));
        bytes.pop();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes, &cfg()), Err(Error::Format { offset: 4, .. })));
        bytes[4] = 1;
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, &cfg()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn extra_missing_and_misshaped_entries_are_rejected() {
        struct Extra(FusionParams);
        impl Parameters for Extra {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, Vec<usize>, &[f32])) {
                self.0.visit(prefix, f);
                f("extra.bias".into(), vec![1], &[0.0]);
            }
            fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(String, Vec<usize>, &mut [f32])) {}
        }
        let params = FusionParams::init(&cfg());
        let err = decode(&encode(&Extra(params.clone())), &cfg()).unwrap_err();
        assert!(err.to_string().contains("unknown tensor"), "{err}");

        // A config with more channels expects larger tensors.
        let bigger = FusionConfig { channels: 16, ..cfg() };
        assert!(matches!(decode(&encode(&params), &bigger), Err(Error::Format { .. })));
    }
}
