//! Binary model checkpoint.
//!
//! ```text
//! "PFCKPT"  u32 version
//! u32 config length, config as JSON
//! u32 network count (3 per modality: encoder, head, predictor)
//! per network: u32 layer count
//!   per layer: u8 activation, u32 rows, u32 cols,
//!              rows·cols f64 weights (row-major), rows f64 bias
//! ```
//!
//! All integers and floats are little-endian; floats are stored as raw bits,
//! so a save/load round trip is exact.

use std::fs;
use std::path::Path;

use super::{ModalityNets, ModelConfig, PdfModel};
use crate::netcore::{Activation, Layer, Matrix, MlpNetwork};
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"PFCKPT";
const VERSION: u32 = 1;
const FORMAT: &str = "checkpoint";

fn bad(reason: impl Into<String>) -> Error {
    Error::format(FORMAT, reason)
}

pub fn encode_checkpoint(model: &PdfModel) -> Result<Vec<u8>> {
    let config =
        serde_json::to_vec(model.config()).map_err(|e| bad(format!("config encoding: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_len(&mut out, config.len())?;
    out.extend_from_slice(&config);
    let nets = model.parameter_groups();
    push_len(&mut out, nets.len())?;
    for net in nets {
        push_len(&mut out, net.layers().len())?;
        for layer in net.layers() {
            out.push(layer.activation.code());
            push_len(&mut out, layer.weight.rows())?;
            push_len(&mut out, layer.weight.cols())?;
            for v in layer.weight.data().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn push_len(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| bad(format!("length {n} exceeds u32")))?;
    out.extend_from_slice(&n.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                bad(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| bad(format!("{what} size overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PdfModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            format: FORMAT,
            found: version,
            expected: VERSION,
        });
    }
    let config_len = r.len("config length")?;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| bad(format!("config: {e}")))?;
    config.validate()?;

    let net_count = r.len("network count")?;
    if net_count != 3 * config.modality_dims.len() {
        return Err(bad(format!(
            "{net_count} networks stored for {} modalities",
            config.modality_dims.len()
        )));
    }
    let mut nets = Vec::with_capacity(net_count);
    for k in 0..net_count {
        let layer_count = r.len("layer count")?;
        // every layer needs at least 9 header bytes
        if layer_count > r.remaining() / 9 {
            return Err(bad(format!("network {k} claims {layer_count} layers")));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for l in 0..layer_count {
            let code = r.take(1, "activation")?[0];
            let activation = Activation::from_code(code)
                .ok_or_else(|| bad(format!("network {k} layer {l}: activation code {code}")))?;
            let rows = r.len("rows")?;
            let cols = r.len("cols")?;
            let cells = rows
                .checked_mul(cols)
                .ok_or_else(|| bad(format!("network {k} layer {l}: shape overflows")))?;
            let weight = Matrix::from_vec(rows, cols, r.floats(cells, "weights")?)?;
            let bias = r.floats(rows, "bias")?;
            layers.push(Layer::new(weight, bias, activation)?);
        }
        nets.push(MlpNetwork::new(layers)?);
    }
    if r.remaining() != 0 {
        return Err(bad(format!("{} trailing bytes", r.remaining())));
    }
    let mut it = nets.into_iter();
    let mut modalities = Vec::with_capacity(net_count / 3);
    while let (Some(encoder), Some(head), Some(predictor)) = (it.next(), it.next(), it.next()) {
        modalities.push(ModalityNets {
            encoder,
            head,
            predictor,
        });
    }
    PdfModel::from_parts(config, modalities)
}

pub fn save_checkpoint(model: &PdfModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PdfModel> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
