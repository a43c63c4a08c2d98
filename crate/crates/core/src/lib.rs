//! Core of descrix: a description-driven item store.
//!
//! Items are managed entities whose shape, lifecycle and workflow come from
//! versioned descriptions. Every change is an event in an append-only per-item
//! log; item state is a pure function of that log.

pub mod canonical;
pub mod description;
pub mod ids;
pub mod item;
pub mod kernel;
pub mod lifecycle;
pub mod provenance;
pub mod schema;
pub mod store;
pub mod workflow;

pub use description::{DescriptionKind, DescriptionVersion};
pub use ids::{IdGenerator, ItemId};
pub use item::{Item, Property};
pub use kernel::{Agent, Kernel, KernelConfig, KernelError};
pub use store::{Event, EventBody, EventKind, HistoryFilter};
