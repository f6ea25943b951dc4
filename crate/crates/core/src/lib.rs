//! Gabor fields: volumetric density fields as mixtures of anisotropic
//! Gaussian and Gabor kernels.

pub mod field;
pub mod fit;
pub mod geometry;
pub mod kernel;
pub mod procedural;
pub mod render;
pub mod sampling;

pub use field::{Field, FieldError, VisibilityMask};
pub use geometry::{Aabb, Mat3, Ray, Vec3};
pub use kernel::{Kernel, KernelError, Primitive, WhitenedRay};

// The book's listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/procedural.md")]
    mod procedural {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
