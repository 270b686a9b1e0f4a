#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/feeder.md")]
pub mod feeder {}

#[doc = include_str!("../../../book/src/capability.md")]
pub mod capability {}

#[doc = include_str!("../../../book/src/voltage.md")]
pub mod voltage {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/certificates.md")]
pub mod certificates {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
