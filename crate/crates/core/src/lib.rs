//! Optimal transport between Lévy measures with a mass reservoir at the
//! origin, together with the bounds, kernel families and viscosity-solution
//! experiments built on top of it.

pub mod bounds;
pub mod cli;
pub mod families;
pub mod measures;
pub mod numeric;
pub mod transport;
pub mod viscosity;
