//! Embedding tables, the EMBC cache format, pool bookkeeping and the
//! synthetic Gaussian-mixture data source.

mod cache;
mod pool;
mod synthetic;
mod table;

pub use cache::{load_bundle, load_cache, save_bundle, save_cache, BundleFiles, EMBC_MAGIC, EMBC_VERSION};
pub use pool::{init_pool, PoolState};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use table::{l2_normalize, DatasetBundle, EmbeddingTable, LabelVector, PrototypeTable, NORM_TOLERANCE};
