//! Core of a policy-gated private data marketplace.
//!
//! Sellers secret-share their records across `N` computation nodes, seal
//! each node's shares together with a digest of the seller's trust policy,
//! and publish the policy in a catalog. Before computing anything, every
//! node checks the buyer's credentials against the conjunction of all
//! involved policies using the interpreter in [`tpl`].

pub mod tpl;
pub mod builtins;
pub mod canonical;
pub mod crypto;
pub mod sharing;
pub mod credentials;
pub mod protocol;
pub mod node;
pub mod client;
pub mod sandbox;
pub mod bench;
