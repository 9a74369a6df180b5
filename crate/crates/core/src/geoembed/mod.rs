//! Location-aware embeddings used for every diversity distance: a
//! multi-scale sinusoidal location encoding fused with network activations
//! through a sigmoid channel attention.

mod attention;
mod encoder;
mod pemb;

pub use attention::{attention_inputs, fit_attention, AttentionHead, AttentionTrainConfig};
pub use encoder::{LocationEncoder, LocationEncoderSpec, DIRECTIONS};
pub use pemb::{load_pemb, read_pemb, save_pemb, write_pemb, PEMB_MAGIC, PEMB_VERSION};

/// Fused embedding of one region, with its planar center.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub region_id: u64,
    pub center: (f64, f64),
    pub z: Vec<f64>,
}

/// Squared Euclidean distance between two embeddings.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_basics() {
        assert_eq!(distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(distance(&[0.0], &[2.0]), 4.0);
        assert_eq!(distance(&[1.0, -3.0], &[4.0, 1.0]), distance(&[4.0, 1.0], &[1.0, -3.0]));
    }

    #[test]
    fn root_distance_obeys_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let p: Vec<Vec<f64>> =
                (0..3).map(|_| (0..5).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
            let ab = distance(&p[0], &p[1]).sqrt();
            let bc = distance(&p[1], &p[2]).sqrt();
            let ac = distance(&p[0], &p[2]).sqrt();
            assert!(ac <= ab + bc + 1e-12);
        }
    }
}
