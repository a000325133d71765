//! A compact store-and-forward bundle stack with a deterministic disruption
//! simulator.
//!
//! The crate is layered bottom-up:
//!
//! * [`wire`] - SDNV varints and the block-structured bundle image.
//! * [`model`] - bundle values, creation and the two expiry disciplines
//!   (creation timestamp + lifetime, or carried bundle age).
//! * [`integrity`] - the integrity block shared by a keyless CRC-32
//!   reliability suite and an HMAC-SHA256 suite, plus per-node verification
//!   policy.
//! * [`agent`] - the per-node bundle agent running on a local clock.
//! * [`channel`] - convergence-layer adapters: length-prefixed TCP and a
//!   simulated link with bit-error and storage-corruption injection.
//! * [`harness`] - scenarios, the discrete-event simulator, metrics,
//!   reports, presets and the live TCP node runtime.

pub mod agent;
pub mod channel;
pub mod harness;
pub mod integrity;
pub mod model;
pub mod wire;

pub use agent::{Agent, ClockModel, Disposition, Mutation, NodeConfig};
pub use integrity::{
    Coverage, IntegrityBlock, SuiteId, Verdict, VerificationMode, VerificationPolicy,
};
pub use model::{Bundle, EndpointId, ExpiryPolicy, ExpiryStatus};
