//! Synthetic domain-shifted benchmarks and the dataset container/file format.

mod dataset;
pub mod image;
pub mod rf;

pub use dataset::{
    DatasetReader, DomainDataset, LabelSection, Manifest, ReadMode, Standardizer, DATASET_VERSION,
};
pub use image::{generate_image_task, ImageSpec};
pub use rf::{
    generate_environment, make_domain_pair, simulate_trajectory, synthesize_signals, Anchor,
    AnchorKind, DomainPair, FloorEnvironment, Obstacle, RfSpec, SignalLayout, Trajectory,
};

/// Deterministic child seed for a named stream, so every artifact derives from one root seed.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}
