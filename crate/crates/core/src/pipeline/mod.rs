//! Volume files, preprocessing, the synthetic dataset, run configuration and
//! the command-line front end.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod preprocess;
pub mod volume_file;

pub use cli::dispatch;
pub use config::RunConfig;
pub use dataset::{make_case, read_split, write_dataset, Case, DatasetSpec, Manifest, Split};
pub use preprocess::{center_offsets, crop_volume, embed, normalize_volume};
pub use volume_file::{load_volume, save_volume, CropInfo, Dtype, VolumeFile};
