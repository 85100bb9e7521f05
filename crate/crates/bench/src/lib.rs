//! Shared setup for the criterion benches.

use std::path::{Path, PathBuf};

use adamms_core::store::{write_checkpoint, Dtype, TensorEntry};

/// Deterministic pseudo-random values in [-1, 1) (xorshift).
pub fn values(seed: u64, n: usize) -> Vec<f32> {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

/// Writes base, donor and pivot checkpoints of `tensors` square matrices.
pub fn synthetic_triplet(dir: &Path, tensors: usize, side: usize, dtype: Dtype) -> [PathBuf; 3] {
    ["base", "donor", "pivot"].map(|role| {
        let entries = (0..tensors).map(|i| {
            let v = values((i * 3 + role.len()) as u64, side * side);
            TensorEntry::from_f32(format!("layers.{i:03}.weight"), dtype, vec![side, side], &v).unwrap()
        });
        let path = dir.join(format!("{role}.safetensors"));
        write_checkpoint(entries, &path).unwrap();
        path
    })
}
