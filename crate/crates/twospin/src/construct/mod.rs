//! Constructive machinery: fixpoint-bounding gadget sequences, dense
//! effective-field families with contraction certificates, target-steered
//! gadget building, field-matched pair construction, and activity
//! crossings.

mod bounding;
mod crossing;
mod family;
mod pairs;

pub use bounding::{bounding_pair, BoundingPair, BoundingStep};
pub use crossing::{find_crossing_lambda, Crossing};
pub use family::{
    build_gadget, contraction_data, dense_family, detect_case1, family_images, Case1Find,
    ContractionData, DenseFamily, FamilyImage, FamilyMember, Interval, MapChoiceSeq,
};
pub use pairs::{bootstrap_pairs, find_pair, FindPairConfig, GadgetPair};
