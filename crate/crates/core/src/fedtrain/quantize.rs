//! Per-layer uniform quantization of parameter and gradient vectors.

use crate::cnn::ParamSet;
use crate::{Error, Result};

pub const MAX_BITS: u32 = 16;

/// Codes of a uniform quantizer over `[min, min + 2^bits * step]` with
/// reconstruction at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<u16>,
    pub min: f64,
    pub step: f64,
    pub bits: u32,
}

pub fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Config(format!("quantization bits must lie in 1..={MAX_BITS}, got {bits}")))
    }
}

pub fn quantize(v: &[f64], bits: u32) -> Result<Quantized> {
    check_bits(bits)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config("cannot quantize non-finite values".into()));
    }
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Ok(Quantized {
            codes: Vec::new(),
            min: 0.0,
            step: 0.0,
            bits,
        });
    }
    let levels = 1u32 << bits;
    let step = (max - min) / f64::from(levels);
    let top = levels - 1;
    let codes = v
        .iter()
        .map(|&x| {
            if step == 0.0 {
                0
            } else {
                (((x - min) / step).floor() as u32).min(top) as u16
            }
        })
        .collect();
    Ok(Quantized { codes, min, step, bits })
}

pub fn dequantize(q: &Quantized) -> Vec<f64> {
    if q.step == 0.0 {
        return vec![q.min; q.codes.len()];
    }
    q.codes
        .iter()
        .map(|&c| q.min + (f64::from(c) + 0.5) * q.step)
        .collect()
}

/// Quantizes each layer's parameters separately and reconstructs them.
pub fn quantize_params(p: &ParamSet, bits: u32) -> Result<ParamSet> {
    let mut out = p.clone();
    for (_, range) in &p.layout.layers {
        let q = quantize(&p.values[range.clone()], bits)?;
        out.values[range.clone()].copy_from_slice(&dequantize(&q));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_bit_on_unit_interval() {
        let q = quantize(&[0.0, 1.0], 1).unwrap();
        assert_eq!(dequantize(&q), vec![0.25, 0.75]);
    }

    #[test]
    fn constant_vector_is_exact() {
        let v = vec![-3.25; 7];
        for bits in [1, 4, 16] {
            assert_eq!(dequantize(&quantize(&v, bits).unwrap()), v);
        }
    }

    #[test]
    fn bits_out_of_range() {
        assert!(quantize(&[1.0], 0).is_err());
        assert!(quantize(&[1.0], 17).is_err());
        assert!(quantize(&[f64::NAN], 4).is_err());
    }

    proptest! {
        #[test]
        fn error_within_half_step(v in prop::collection::vec(-1e3f64..1e3, 1..64), bits in 1u32..=16) {
            let q = quantize(&v, bits).unwrap();
            let r = dequantize(&q);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let half = (max - min) / f64::from(1u32 << bits) / 2.0;
            for (a, b) in v.iter().zip(&r) {
                prop_assert!((a - b).abs() <= half * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}
