pub mod conformer;
pub mod crf;
pub mod merge;
pub mod model;
pub mod verbalize;

pub use conformer::ResConformer;
pub use model::{FrontendConfig, FrontendModel, HeadOutputs, PdQuery};
pub use merge::{result_merge, FrontendOutput, MergeInput, Polyphone};
pub use verbalize::{verbalize, VerbalizeError};
