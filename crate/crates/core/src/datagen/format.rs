//! Columnar batch file: a short text header followed by little-endian data.
//!
//! ```text
//! PFBATCH 1
//! samples <n>
//! classes <C>
//! modalities <M>
//! dims <d1> <d2> ...
//! provenance <free text, one line>
//! end
//! <n × u32 labels><modality 0, column-major f64><modality 1 ...>...
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use super::MultimodalBatch;
use crate::netcore::Matrix;
use crate::{Error, Result};

const MAGIC: &str = "PFBATCH";
const VERSION: u32 = 1;
const FORMAT: &str = "batch";
/// Headers longer than this are rejected before parsing.
pub const MAX_HEADER_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchHeader {
    pub version: u32,
    pub samples: usize,
    pub classes: usize,
    pub dims: Vec<usize>,
    pub provenance: String,
    /// Byte offset of the first label.
    pub data_offset: usize,
}

impl BatchHeader {
    /// Exact payload size implied by the header, if it fits in `usize`.
    pub fn payload_len(&self) -> Option<usize> {
        let label_bytes = self.samples.checked_mul(4)?;
        let cells = self.dims.iter().try_fold(0usize, |acc, &d| {
            acc.checked_add(d.checked_mul(self.samples)?)
        })?;
        label_bytes.checked_add(cells.checked_mul(8)?)
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format(FORMAT, reason)
}

fn encode_header(batch: &MultimodalBatch) -> Result<String> {
    if batch.provenance.contains(['\n', '\r']) {
        return Err(Error::field("provenance", "must be a single line"));
    }
    let dims: Vec<String> = batch.dims().iter().map(usize::to_string).collect();
    Ok(format!(
        "{MAGIC} {VERSION}\nsamples {}\nclasses {}\nmodalities {}\ndims {}\nprovenance {}\nend\n",
        batch.len(),
        batch.classes(),
        batch.modalities(),
        dims.join(" "),
        batch.provenance
    ))
}

pub fn encode_batch(batch: &MultimodalBatch) -> Result<Vec<u8>> {
    let header = encode_header(batch)?;
    let mut out = header.into_bytes();
    for &y in batch.labels() {
        let y = u32::try_from(y).map_err(|_| bad(format!("label {y} exceeds u32")))?;
        out.extend_from_slice(&y.to_le_bytes());
    }
    for x in batch.features() {
        for c in 0..x.cols() {
            for r in 0..x.rows() {
                out.extend_from_slice(&x.get(r, c).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn parse_count(line: Option<&str>, key: &str) -> Result<usize> {
    let line = line.ok_or_else(|| bad(format!("missing `{key}` line")))?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected `{key} <n>`, found `{line}`")))?;
    value
        .trim()
        .parse()
        .map_err(|_| bad(format!("`{key}` is not a count: `{value}`")))
}

/// Parses only the text header at the start of `bytes`.
pub fn decode_batch_header(bytes: &[u8]) -> Result<BatchHeader> {
    let window = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
    let end_marker = b"\nend\n";
    let end = window
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| bad("header terminator `end` not found"))?;
    let data_offset = end + end_marker.len();
    let text = std::str::from_utf8(&window[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.split('\n');

    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| bad("missing magic"))?
        .parse::<u32>()
        .map_err(|_| bad(format!("unreadable version in `{first}`")))?;
    if version != VERSION {
        return Err(Error::Version {
            format: FORMAT,
            found: version,
            expected: VERSION,
        });
    }
    let samples = parse_count(lines.next(), "samples")?;
    let classes = parse_count(lines.next(), "classes")?;
    let modalities = parse_count(lines.next(), "modalities")?;
    let dims_line = lines.next().ok_or_else(|| bad("missing `dims` line"))?;
    let dims = dims_line
        .strip_prefix("dims")
        .ok_or_else(|| bad(format!("expected `dims ...`, found `{dims_line}`")))?
        .split_whitespace()
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| bad(format!("bad dimension `{d}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if dims.len() != modalities {
        return Err(bad(format!(
            "{} dims listed for {modalities} modalities",
            dims.len()
        )));
    }
    let prov_line = lines
        .next()
        .ok_or_else(|| bad("missing `provenance` line"))?;
    let provenance = prov_line
        .strip_prefix("provenance")
        .ok_or_else(|| bad(format!("expected `provenance ...`, found `{prov_line}`")))?
        .strip_prefix(' ')
        .unwrap_or_default()
        .to_string();
    if let Some(extra) = lines.next() {
        return Err(bad(format!("unexpected header line `{extra}`")));
    }
    Ok(BatchHeader {
        version,
        samples,
        classes,
        dims,
        provenance,
        data_offset,
    })
}

pub fn decode_batch(bytes: &[u8]) -> Result<MultimodalBatch> {
    let header = decode_batch_header(bytes)?;
    let expected = header
        .payload_len()
        .ok_or_else(|| bad("declared sizes overflow"))?;
    let payload = &bytes[header.data_offset..];
    if payload.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header implies {expected}{}",
            payload.len(),
            if payload.len() < expected {
                " (truncated)"
            } else {
                ""
            }
        )));
    }
    let n = header.samples;
    let (label_bytes, mut cells) = payload.split_at(n * 4);
    let labels: Vec<usize> = label_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    let mut features = Vec::with_capacity(header.dims.len());
    for &d in &header.dims {
        let (block, rest) = cells.split_at(n * d * 8);
        cells = rest;
        let mut x = Matrix::zeros(n, d);
        for (k, c) in block.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(c.try_into().expect("chunk of 8"));
            x.set(k % n, k / n, v);
        }
        features.push(x);
    }
    Ok(MultimodalBatch::new(features, labels, header.classes)?.with_provenance(header.provenance))
}

pub fn save_batch(batch: &MultimodalBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_batch(batch)?).map_err(|e| Error::io(path, e))
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<MultimodalBatch> {
    let path = path.as_ref();
    decode_batch(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads just the header, without touching the data section.
pub fn read_batch_header(path: impl AsRef<Path>) -> Result<BatchHeader> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(1024);
    file.take(MAX_HEADER_BYTES as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_batch_header(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MultimodalBatch {
        let a = Matrix::from_rows(&[
            vec![1.0, -2.5],
            vec![0.1, f64::MIN_POSITIVE],
            vec![3.0, -0.0],
        ])
        .unwrap();
        let b = Matrix::from_rows(&[vec![7.0], vec![8.0], vec![1e300]]).unwrap();
        MultimodalBatch::new(vec![a, b], vec![2, 0, 1], 3)
            .unwrap()
            .with_provenance("generator seed=3 split=test")
    }

    fn bits(b: &MultimodalBatch) -> Vec<u64> {
        b.features()
            .iter()
            .flat_map(|x| x.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let batch = sample();
        let back = decode_batch(&encode_batch(&batch).unwrap()).unwrap();
        assert_eq!(back, batch);
        assert_eq!(bits(&back), bits(&batch));
        assert_eq!(back.provenance, batch.provenance);
    }

    #[test]
    fn header_only_inspection() {
        let bytes = encode_batch(&sample()).unwrap();
        let h = decode_batch_header(&bytes).unwrap();
        assert_eq!(h.samples, 3);
        assert_eq!(h.classes, 3);
        assert_eq!(h.dims, vec![2, 1]);
        assert_eq!(h.payload_len(), Some(3 * 4 + 9 * 8));
        assert_eq!(h.data_offset + h.payload_len().unwrap(), bytes.len());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_errors() {
        let bytes = encode_batch(&sample()).unwrap();
        for cut in [0, 5, 40, bytes.len() - 1] {
            assert!(
                matches!(decode_batch(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_batch(&longer).is_err());
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bytes = encode_batch(&sample()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("PFBATCH 1", "PFBATCH 9", 1);
        let err = decode_batch_header(text.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::Version {
                found: 9,
                expected: 1,
                ..
            }
        ));
    }

    #[test]
    fn out_of_range_label_in_file_is_rejected() {
        let mut bytes = encode_batch(&sample()).unwrap();
        let off = decode_batch_header(&bytes).unwrap().data_offset;
        bytes[off..off + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_batch(&bytes),
            Err(Error::LabelOutOfRange { label: 7, .. })
        ));
    }

    #[test]
    fn multi_line_provenance_is_refused() {
        let batch = sample().with_provenance("a\nb");
        assert!(encode_batch(&batch).is_err());
    }
}
