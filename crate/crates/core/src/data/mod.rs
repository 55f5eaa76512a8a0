//! Patch ingestion: band rasters, resampling, reflectance normalization,
//! label parsing, manifests, the training pair stream and the patch store.

mod bands;
mod labels;
mod manifest;
mod normalize;
mod pairs;
mod patch;
mod resample;
mod store;

pub use bands::{band_index, native_size, read_band_stack, write_raster, BandStack, BAND_NAMES};
pub use labels::{parse_label_metadata, ClassId, LabelSet, LabelVocabulary, LAND_COVER_43};
pub use manifest::{
    build_manifest, manifest_from_ids, read_id_list, validate_ratios, DatasetManifest, Split,
    Splits, MANIFEST_VERSION,
};
pub use normalize::{
    normalize_reflectance, standardize, BandStats, NormalizeMode, REFLECTANCE_SCALE, STD_FLOOR,
};
pub use pairs::{make_training_pair_stream, PairBatch, PairStream};
pub use patch::{Domain, Patch};
pub use resample::{resample_grid, resample_to_grid, ResampleMethod};
pub use store::{PatchStore, StoreWriter, STORE_MAGIC};
