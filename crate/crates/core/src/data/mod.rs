//! Feature store, rating table and attribute subgroups.

mod ratings;
mod site;
mod store;
mod subgroups;

pub use ratings::{load_ratings, normalize_question, parse_ratings, Attribute, RatingTable, MAX_RATING, MIN_RATING};
pub use site::{SiteFilter, SiteGroup, SiteId, SiteKind, CLIP_HIDDEN_LAYERS};
pub use store::{
    assemble_rows, read_store, validate_stimuli, write_store, SampleRow, SiteEntry, SiteMatrix, Stimulus, Store,
    StoreManifest, StoreWriter, BLOB_HEADER_LEN, BLOB_MAGIC, MANIFEST_FILE, STORE_FORMAT_VERSION,
};
pub use subgroups::{all_bundled_questions, bundled_questions, is_partition, Resolved, SubgroupDef, BUNDLED_GROUPS};
