//! Model checkpoints.
//!
//! Layout (little-endian): magic `RFDAE\0\0\0`, u32 version, the model
//! configuration as u32 fields (m, n, H, depth, clf width 1, clf width 2,
//! K, final ReLU flag, feature transform code) followed by f64 fields
//! (λ, mask rate, dropout rate), then every tensor in canonical order as
//! u32 rank, u32 dims and f32 values, and finally the CRC32 of all
//! preceding bytes. Parameters are computed in f64 and stored as f32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DaeModel, FeatureTransform, ModelConfig};

use super::codec::{check_length_and_crc, check_preamble, write_atomic, ByteReader, ByteWriter};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFDAE\0\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Byte length of magic, version and configuration.
pub const CHECKPOINT_HEADER_LEN: usize = 8 + 4 + 9 * 4 + 3 * 8;

pub fn to_bytes(model: &DaeModel) -> Result<Vec<u8>> {
    model.validate()?;
    let c = &model.config;
    let mut w = ByteWriter::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    for v in [
        c.input_features,
        c.seq_len,
        c.hidden,
        c.encoder_depth,
        c.classifier_widths[0],
        c.classifier_widths[1],
        c.num_classes,
    ] {
        w.u32(u32::try_from(v).map_err(|_| Error::Config(format!("{v} exceeds u32")))?);
    }
    w.u32(u32::from(c.final_relu));
    w.u32(c.features.code());
    w.f64(c.lambda);
    w.f64(c.mask_rate);
    w.f64(c.dropout_rate);
    for (shape, values) in model.tensor_shapes().iter().zip(model.tensors()) {
        w.u32(shape.len() as u32);
        for &d in shape {
            w.u32(d as u32);
        }
        for &v in values {
            w.f32(v as f32);
        }
    }
    Ok(w.finish())
}

pub fn from_bytes(data: &[u8]) -> Result<DaeModel> {
    check_preamble(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let mut r = ByteReader::new(data);
    r.take(CHECKPOINT_MAGIC.len() + 4)?;
    let mut dims = [0usize; 9];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let [m, n, h, depth, w1, w2, k, final_relu, features] = dims;
    let (lambda, mask_rate, dropout_rate) = (r.f64()?, r.f64()?, r.f64()?);
    let config = ModelConfig {
        input_features: m,
        seq_len: n,
        hidden: h,
        encoder_depth: depth,
        classifier_widths: [w1, w2],
        num_classes: k,
        final_relu: final_relu != 0,
        lambda,
        mask_rate,
        dropout_rate,
        features: FeatureTransform::from_code(features as u32).unwrap_or(FeatureTransform::Raw),
    };

    let expected = declared_len(&config)
        .ok_or_else(|| Error::Layout("declared tensor sizes overflow".into()))?;
    check_length_and_crc(data, expected)?;
    let shapes = config.tensor_shapes();

    if FeatureTransform::from_code(features as u32).is_none() || final_relu > 1 {
        return Err(Error::Layout(format!(
            "unknown flag values: final_relu={final_relu}, features={features}"
        )));
    }
    config
        .validate()
        .map_err(|e| Error::Layout(format!("stored configuration is invalid: {e}")))?;

    let mut model = DaeModel::zeros(config)?;
    let names = model.tensor_names();
    for ((shape, tensor), name) in shapes.iter().zip(model.tensors_mut()).zip(&names) {
        let rank = r.u32()? as usize;
        let mut stored = Vec::with_capacity(rank);
        for _ in 0..rank {
            stored.push(r.u32()? as usize);
        }
        if &stored != shape {
            return Err(Error::Layout(format!(
                "{name}: stored shape {stored:?}, configuration implies {shape:?}"
            )));
        }
        for v in tensor.iter_mut() {
            let x = r.f32()?;
            if !x.is_finite() {
                return Err(Error::Layout(format!("{name}: non-finite value")));
            }
            *v = f64::from(x);
        }
    }
    Ok(model)
}

/// File length implied by the configuration fields, computed without
/// materializing anything so corrupt headers cannot trigger huge allocations.
fn declared_len(c: &ModelConfig) -> Option<u64> {
    let u = |v: usize| v as u64;
    // rank-r tensor: 4 bytes rank, 4 per dim, 4 per value
    let matrix = |r: u64, k: u64| r.checked_mul(k)?.checked_mul(4)?.checked_add(12);
    let vector = |r: u64| r.checked_mul(4)?.checked_add(8);
    let h = u(c.hidden);
    let lstm_layer = |input: u64| -> Option<u64> {
        let gate = matrix(h, input)?.checked_add(matrix(h, h)?)?.checked_add(vector(h)?)?;
        gate.checked_mul(4)
    };
    let dense = |i: u64, o: u64| matrix(o, i)?.checked_add(vector(o)?);
    let deeper = lstm_layer(h)?.checked_mul(u(c.encoder_depth).saturating_sub(1))?;
    let encoder = if c.encoder_depth == 0 { 0 } else { lstm_layer(u(c.input_features))?.checked_add(deeper)? };
    let [w1, w2] = c.classifier_widths.map(u);
    let head = dense(h, u(c.input_features))?
        .checked_add(dense(h, w1)?)?
        .checked_add(dense(w1, w2)?)?
        .checked_add(dense(w2, u(c.num_classes))?)?;
    (CHECKPOINT_HEADER_LEN as u64 + 4).checked_add(encoder)?.checked_add(head)
}

pub fn write(model: &DaeModel, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn read(path: &Path) -> Result<DaeModel> {
    from_bytes(&std::fs::read(path)?)
}
