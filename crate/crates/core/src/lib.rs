pub mod assembly;
pub mod dynamics;
pub mod element;
pub mod error;
pub mod experiments;
pub mod fespace;
pub mod geometry;
pub mod mesh;
pub mod params;
pub mod pod;
pub mod rom;
pub mod solvers;
pub mod sparse;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/time_stepping.md")]
    mod time_stepping {}
    #[doc = include_str!("../../../book/src/pod.md")]
    mod pod {}
    #[doc = include_str!("../../../book/src/rom.md")]
    mod rom {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
