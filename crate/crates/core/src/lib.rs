//! Numerical harmonic analysis on the real unit ball `B_n` (n >= 3).
//!
//! The crate builds, at desk scale, the constructive objects behind one-weight
//! norm inequalities for Bergman-type projections:
//!
//! * the geodesic metric on the boundary sphere and the bracket `[x,y]`
//!   ([`geometry`]);
//! * normalized weighted volumes `nu_alpha` and Carleson-box measures by
//!   quadrature or Monte Carlo ([`measure`]);
//! * adjacent dyadic cube systems on the sphere with Carleson boxes over the
//!   cubes ([`dyadic`]);
//! * Bekollé–Bonami weight constants over cap boxes and over dyadic cubes
//!   ([`weights`]);
//! * the positive dyadic operator dominating the Bergman kernel, dyadic and
//!   global maximal operators, Rubio de Francia iteration and matrix-free
//!   operator-norm estimation ([`operators`]);
//! * replayable verification suites and the sharpness experiment
//!   ([`experiments`]).
//!
//! Everything is deterministic given a 64-bit seed: random streams are split
//! per purpose and parallel reductions run over fixed shards in index order,
//! so results do not depend on thread count.

pub mod dyadic;
pub mod experiments;
pub mod geometry;
pub mod measure;
pub mod operators;
pub mod quad;
pub mod rng;
pub mod weights;

pub use dyadic::{AdjacentFamily, CubeId, DyadicCube, DyadicError, DyadicSystem, FamilyParams};
pub use geometry::{BallPoint, BoxBase, CapBall, CarlesonBox, GeometryError, SpherePoint};
pub use measure::{AlphaMeasure, EstimateMethod, MeasureError, MeasureValue};
pub use operators::{BoxFunction, NormReport, OperatorError, SamplePool};
pub use weights::{BbReport, BbWitness, Weight, WeightError};
