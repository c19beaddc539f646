//! Dataset preparation: manifest parsing and cleaning, the character
//! dictionary, the packed record store and the train/validation split.

mod dict;
mod manifest;
mod split;
mod store;

pub use dict::{CharDict, DictError, BLANK_INDEX};
pub use manifest::{
    clean_manifest, clean_manifest_file, parse_manifest, read_manifest, write_manifest,
    CleanedManifest, ManifestEntry, ManifestError, RejectReason, Rejection,
};
pub use split::{split, SplitSpec, DEFAULT_RATIO};
pub use store::{Record, RecordStore, StoreError, STORE_MAGIC, STORE_VERSION};
