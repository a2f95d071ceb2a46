//! From COCO annotations to a split, balanced and augmented crop corpus.

mod augment;
mod classes;
mod coco;
mod image;
mod manifest;
mod prepare;
mod split;
pub mod synthetic;

pub use augment::{augment, AugmentParams, AugmentRanges};
pub use classes::DemographicClass;
pub use coco::{parse_coco, parse_coco_file, AnnotationRecord, BBox, ParsedCoco};
pub use image::{crop_and_resize, decode_image, read_image, read_ppm, resize_bilinear, write_ppm};
pub use manifest::{read_manifest, write_manifest, Manifest, Origin, SampleRecord, Split};
pub use prepare::{materialize, prepare, PrepareConfig, PrepareReport};
pub use split::{balance_train, split_counts, stratified_split, AugmentJob, SplitRatios};
