//! The guide under `book/`, compiled so its samples run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/space.md")]
pub mod space {}
#[doc = include_str!("../../../book/src/latency.md")]
pub mod latency {}
#[doc = include_str!("../../../book/src/lmo.md")]
pub mod lmo {}
#[doc = include_str!("../../../book/src/init.md")]
pub mod init {}
#[doc = include_str!("../../../book/src/search.md")]
pub mod search {}
#[doc = include_str!("../../../book/src/projection.md")]
pub mod projection {}
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
