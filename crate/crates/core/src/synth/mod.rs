//! Study data model, on-disk format, phantom and cohort generators.

pub mod cohort;
pub mod io;
pub mod phantom;
pub mod tokenizer;
mod volume;

pub use cohort::{make_cohort, make_stratified_cohort, Cohort, CohortConfig, EffectModel, REFERENCE_STRATA};
pub use io::{load_study, save_study};
pub use phantom::{generate_phantom, LesionSpec, OrganSpec, PhantomConfig, RandomLesions};
pub use tokenizer::Vocabulary;
pub use volume::{BinaryMask, Grid, Lesion, MaskVolume, Modality, Report, Study, Volume};
