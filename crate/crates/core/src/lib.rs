//! Circle fitting estimators, Kanatani-Cramer-Rao lower bounds and Monte Carlo
//! measurement of their statistical efficiency under the Cartesian and radial
//! functional noise models.

pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod kcr;
pub mod la_oracle;
pub mod linalg;
pub mod mc;

pub use error::{Error, Result};
pub use fit::{fit, FitReport, Method, WeightFunction};
pub use geometry::{AlgebraicCircleParams, ArcSpec, CircleParams, NoiseModel, NoiseSpec, Point2, Spacing};
