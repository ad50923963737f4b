pub mod adapters;
pub mod corpus;
pub mod perturb;
pub mod synthetic;

pub use adapters::{load_corpus, rico_categories, LoadOptions, Schema};
pub use corpus::{layout_hash, read_jsonl, write_jsonl, Corpus, SplitRatios};
pub use perturb::{perturb, DEFAULT_NOISE_STD};
pub use synthetic::{gen_synthetic, SyntheticSpec};
