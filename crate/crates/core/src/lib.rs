pub mod blackbox;
pub mod design;
pub mod error;
pub mod kriging;
pub mod numeric;
pub mod sampling;
pub mod bounds;
pub mod bayes;
pub mod mbis;
pub mod campaign;
