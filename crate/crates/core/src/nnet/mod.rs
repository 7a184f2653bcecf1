//! Minimal trainable-network core: dense tensors, parameter sets, layers
//! with analytic gradients, Adam, and binary checkpoints.

pub mod gradcheck;
mod layers;
mod params;
mod tensor;

pub use layers::{
    gelu, gelu_backward, relu, relu_backward, AttnCache, BlockCache, LayerNorm, Linear, LnCache,
    MultiHeadSelfAttention, SetPool, SetPoolCache, TransformerBlock,
};
pub use params::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Grads, ParamId, ParamSet,
};
pub use tensor::Tensor;

/// Sinusoidal features: for each value, sin and cos at `n_freq` octave
/// frequencies. Output length = values.len() * 2 * n_freq.
pub fn sinusoidal_features(values: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * 2 * n_freq);
    for &v in values {
        let mut w = std::f64::consts::PI;
        for _ in 0..n_freq {
            out.push((v * w).sin());
            out.push((v * w).cos());
            w *= 2.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoidal_dims() {
        let f = sinusoidal_features(&[0.1, 0.2, 0.3], 4);
        assert_eq!(f.len(), 3 * 2 * 4);
        assert!(f.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}
