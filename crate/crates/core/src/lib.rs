pub mod autodiff;
pub mod ode;
pub mod lbn;
pub mod models;
pub mod audio;
pub mod dataset;
pub mod train;
pub mod checkpoint;
