//! Full-image prediction by overlapping patch windows.

use crate::data::fundus::PreparedSample;
use crate::data::patches::grid_origins;
use crate::error::{Error, Result};
use crate::objective::sigmoid;
use crate::raster::Plane;
use crate::real::Real;
use crate::segnet::{predict_logits, NetworkParams};
use crate::tensor::Tensor4;

pub const DEFAULT_STRIDE: usize = 24;
const INFERENCE_BATCH: usize = 32;

/// Probability map for a whole image: the network runs on a `size` window
/// grid with the given stride and overlapping probabilities are averaged.
pub fn predict_probability_map<T: Real>(
    params: &NetworkParams<T>,
    sample: &PreparedSample,
    size: usize,
    stride: usize,
) -> Result<Plane<f64>> {
    if size == 0 || !size.is_multiple_of(4) {
        return Err(Error::Config(format!("patch size {size} must be a positive multiple of 4")));
    }
    let (h, w) = sample.dims();
    let origins = grid_origins(h, w, size, stride)?;
    let channels = sample.channels();
    let mut sum = Plane::filled(h, w, 0.0f64);
    let mut count = Plane::filled(h, w, 0u32);

    for chunk in origins.chunks(INFERENCE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * channels * size * size);
        for &(r, c) in chunk {
            for plane in &sample.input {
                data.extend(plane.window(r, c, size).into_iter().map(T::from_f64));
            }
        }
        let x = Tensor4::from_vec([chunk.len(), channels, size, size], data)?;
        let logits = predict_logits(params, &x)?;
        for (b, &(r, c)) in chunk.iter().enumerate() {
            let item = logits.item(b);
            for dy in 0..size {
                for dx in 0..size {
                    let p = sigmoid(item[dy * size + dx].as_f64());
                    let (rr, cc) = (r + dy, c + dx);
                    sum.set(rr, cc, sum.get(rr, cc) + p);
                    count.set(rr, cc, count.get(rr, cc) + 1);
                }
            }
        }
    }
    let data = sum
        .data()
        .iter()
        .zip(count.data())
        .map(|(&s, &n)| s / n as f64)
        .collect();
    Plane::new(h, w, data)
}
