//! Synthetic phantoms, tensor files, manifests and checkpoints.

pub mod checkpoint;
pub mod manifest;
pub mod phantom;
pub mod ugt;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use manifest::{load_dataset, read_manifest, write_manifest, Dataset, ManifestRecord, Split};
pub use phantom::{generate_phantom, PhantomSpec, Style};
pub use ugt::{read_tensor, write_tensor, Dtype};
