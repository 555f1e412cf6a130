//! Supercurves on the Riemann sphere: charts and Moebius maps, holomorphic curves with
//! twisted sections, energies, analytic inequalities, bubbling and Gromov convergence.

pub mod bubbling;
pub mod energy;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod inequalities;
pub mod io;
pub mod moduli;
pub mod optim;
pub mod poly;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{Chart, LineBundle, Moebius, SpherePoint, C};
