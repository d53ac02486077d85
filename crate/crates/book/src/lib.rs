//! The chapters of the guide in `book/`, compiled and run as doc tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/policies.md")]
pub mod policies {}

#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}

#[doc = include_str!("../../../book/src/sharing.md")]
pub mod sharing {}

#[doc = include_str!("../../../book/src/purchase.md")]
pub mod purchase {}

#[doc = include_str!("../../../book/src/services.md")]
pub mod services {}

#[doc = include_str!("../../../book/src/errors.md")]
pub mod errors {}
