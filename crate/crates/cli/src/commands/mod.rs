pub mod fit;
pub mod simulate;
pub mod summarize;
pub mod validate;
