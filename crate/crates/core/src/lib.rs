pub mod abms;
pub mod attribute;
pub mod clock;
pub mod edge_store;
pub mod ledger;
pub mod maabe;
pub mod pairing;
pub mod workflow;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/signatures.md")]
    mod signatures {}
    #[doc = include_str!("../../../book/src/threshold.md")]
    mod threshold {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/encryption.md")]
    mod encryption {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/edge-store.md")]
    mod edge_store {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
