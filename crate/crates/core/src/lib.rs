// Index loops mirror the formulas; `!(a < b)` comparisons are kept so NaN fails them.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cavity;
pub mod composite;
pub mod dyadic;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod homeo;
pub mod linalg;
pub mod quad;
pub mod squeeze;
pub mod tentacle;
pub mod tube;

pub use dyadic::Dyadic;
pub use error::{Error, Result};
pub use geometry::{CantorSystem, Cube, Family, Index, MultiIndex, Point, TowerIndex};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/maps.md")]
    struct Maps;
    #[doc = include_str!("../../../book/src/tentacles.md")]
    struct Tentacles;
    #[doc = include_str!("../../../book/src/energy.md")]
    struct Energy;
    #[doc = include_str!("../../../book/src/cavities.md")]
    struct Cavities;
}
