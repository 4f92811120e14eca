//! Binary model files.
//!
//! `GIMP` (parameters): magic, version u32, K u32, then for each of the six
//! layers rows u32, cols u32, row-major f64 weights and the f64 biases; a
//! trailing u64 holds the sum of all preceding bytes mod 2^64.
//!
//! `GIMS` (resumable training state) reuses the layer encoding for the current
//! parameters, both Adam moments and the best parameters.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{EpochRecord, Layer, MlpParams, TrainState, LAYER_NAMES};
use crate::io::{read_file, write_file, ByteReader, ByteWriter};
use crate::{Error, Result};

const PARAMS_MAGIC: &[u8; 4] = b"GIMP";
const STATE_MAGIC: &[u8; 4] = b"GIMS";
const VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

fn seal(mut w: ByteWriter) -> Vec<u8> {
    let sum = checksum(&w.buf);
    w.u64(sum);
    w.buf
}

/// Verifies and strips the trailing checksum.
fn unseal<'a>(bytes: &'a [u8], what: &str) -> Result<&'a [u8]> {
    if bytes.len() < 8 {
        return Err(Error::format(what, "file too short for checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != checksum(body) {
        return Err(Error::format(what, "checksum mismatch"));
    }
    Ok(body)
}

fn put_params(w: &mut ByteWriter, p: &MlpParams) {
    for layer in p.layers() {
        w.u32(layer.outputs() as u32);
        w.u32(layer.inputs() as u32);
        for r in 0..layer.outputs() {
            for c in 0..layer.inputs() {
                w.f64(layer.weight[(r, c)]);
            }
        }
        for &b in layer.bias.iter() {
            w.f64(b);
        }
    }
}

fn get_params(r: &mut ByteReader<'_>, k: usize, what: &str) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(k);
    for (layer, name) in params.layers_mut().zip(LAYER_NAMES) {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != (layer.outputs(), layer.inputs()) {
            return Err(Error::format(
                what,
                format!(
                    "layer {name} is {rows}x{cols}, expected {}x{}",
                    layer.outputs(),
                    layer.inputs()
                ),
            ));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(r.f64()?);
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(r.f64()?);
        }
        *layer = Layer {
            weight: DMatrix::from_row_slice(rows, cols, &values),
            bias: DVector::from_vec(bias),
        };
    }
    Ok(params)
}

pub(crate) fn encode_params(p: &MlpParams) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(PARAMS_MAGIC);
    w.u32(VERSION);
    w.u32(p.k() as u32);
    put_params(&mut w, p);
    seal(w)
}

pub(crate) fn decode_params(bytes: &[u8], what: &str) -> Result<MlpParams> {
    let body = unseal(bytes, what)?;
    let mut r = ByteReader::new(body, what);
    r.magic(PARAMS_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    if k == 0 {
        return Err(Error::format(what, "K is zero"));
    }
    let params = get_params(&mut r, k, what)?;
    r.finish()?;
    params.validate()?;
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &MlpParams) -> Result<()> {
    write_file(path, &encode_params(params))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    decode_params(&read_file(path)?, &path.display().to_string())
}

pub(crate) fn encode_state(s: &TrainState) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(STATE_MAGIC);
    w.u32(VERSION);
    w.u32(s.params.k() as u32);
    w.u64(s.epochs_done as u64);
    w.u64(s.step);
    w.f64(s.best_loss);
    w.u64(s.best_epoch as u64);
    w.u64(s.bad_epochs as u64);
    w.u32(s.stopped as u32);
    w.u64(s.history.len() as u64);
    for h in &s.history {
        w.u64(h.epoch as u64);
        w.f64(h.train_loss);
        w.f64(h.val_loss);
    }
    for p in [&s.params, &s.m, &s.v, &s.best] {
        put_params(&mut w, p);
    }
    seal(w)
}

pub(crate) fn decode_state(bytes: &[u8], what: &str) -> Result<TrainState> {
    let body = unseal(bytes, what)?;
    let mut r = ByteReader::new(body, what);
    r.magic(STATE_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let k = r.u32()? as usize;
    let epochs_done = r.u64()? as usize;
    let step = r.u64()?;
    let best_loss = r.f64()?;
    let best_epoch = r.u64()? as usize;
    let bad_epochs = r.u64()? as usize;
    let stopped = r.u32()? != 0;
    let n = r.u64()? as usize;
    if n > body.len() {
        return Err(Error::format(what, "history length exceeds file size"));
    }
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        history.push(EpochRecord {
            epoch: r.u64()? as usize,
            train_loss: r.f64()?,
            val_loss: r.f64()?,
        });
    }
    let params = get_params(&mut r, k, what)?;
    let m = get_params(&mut r, k, what)?;
    let v = get_params(&mut r, k, what)?;
    let best = get_params(&mut r, k, what)?;
    r.finish()?;
    Ok(TrainState {
        epochs_done,
        step,
        params,
        m,
        v,
        best,
        best_loss,
        best_epoch,
        bad_epochs,
        stopped,
        history,
    })
}

pub fn write_train_state(path: &Path, state: &TrainState) -> Result<()> {
    write_file(path, &encode_state(state))
}

pub fn read_train_state(path: &Path) -> Result<TrainState> {
    decode_state(&read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn params_round_trip_bit_exact() {
        let p = MlpParams::init(5, &mut stream(1, "t"));
        let bytes = encode_params(&p);
        assert_eq!(&bytes[..4], b"GIMP");
        assert_eq!(decode_params(&bytes, "t").unwrap(), p);
    }

    #[test]
    fn checksum_is_byte_sum() {
        let p = MlpParams::init(2, &mut stream(2, "t"));
        let bytes = encode_params(&p);
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let sum: u64 = body.iter().map(|&b| b as u64).sum();
        assert_eq!(u64::from_le_bytes(tail.try_into().unwrap()), sum);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_params(&MlpParams::init(3, &mut stream(3, "t")));
        bytes[40] ^= 0x10;
        assert!(matches!(decode_params(&bytes, "t"), Err(Error::Format { .. })));
        assert!(decode_params(&bytes[..10], "t").is_err());
    }

    #[test]
    fn state_round_trips() {
        let mut s = TrainState::new(4, 9);
        s.epochs_done = 3;
        s.step = 17;
        s.best_loss = 0.25;
        s.best_epoch = 2;
        s.bad_epochs = 1;
        s.history.push(EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.4,
        });
        s.m.set_flat(7, 0.125);
        assert_eq!(decode_state(&encode_state(&s), "t").unwrap(), s);
    }
}
