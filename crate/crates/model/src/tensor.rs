//! Conversions between [`Image`]s and `B x 3 x H x W` tensors.

use candle_core::{DType, Device, Tensor};
use stainsep_core::types::CHANNELS;
use stainsep_core::{Image, ScoreMap};

use crate::error::{ModelError, Result};

pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| ModelError::Data("empty image batch".into()))?;
    let (h, w) = first.dims();
    let mut buf: Vec<f64> = Vec::with_capacity(images.len() * CHANNELS * h * w);
    for img in images {
        img.check_same_dims(first)?;
        for c in 0..CHANNELS {
            buf.extend(img.data().iter().skip(c).step_by(CHANNELS));
        }
    }
    Ok(Tensor::from_vec(buf, (images.len(), CHANNELS, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(ModelError::Data(format!("expected {CHANNELS} channels, got {c}")));
    }
    let flat: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let base = i * c * plane;
            let mut data = Vec::with_capacity(c * plane);
            for p in 0..plane {
                for ch in 0..c {
                    data.push(flat[base + ch * plane + p]);
                }
            }
            Ok(Image::new(h, w, data)?)
        })
        .collect()
}

/// Splits a `B x 1 x h x w` score tensor into per-sample maps.
pub fn tensor_to_score_maps(t: &Tensor) -> Result<Vec<ScoreMap>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(ModelError::Data(format!("score tensor has {c} channels")));
    }
    let flat: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    (0..b)
        .map(|i| Ok(ScoreMap::new(h, w, flat[i * h * w..(i + 1) * h * w].to_vec())?))
        .collect()
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_layout() {
        let a = Image::from_fn(3, 4, |y, x| [y as f64 * 0.1, x as f64 * 0.1, 0.5]);
        let b = a.map(|v| 1.0 - v);
        let t = images_to_tensor(&[&a, &b], DType::F64).unwrap();
        assert_eq!(t.dims4().unwrap(), (2, 3, 3, 4));
        // channel 1 of sample 0 at (2, 3) is x * 0.1
        let v: f64 = t.get(0).unwrap().get(1).unwrap().get(2).unwrap().get(3).unwrap().to_scalar().unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        let back = tensor_to_images(&t).unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
