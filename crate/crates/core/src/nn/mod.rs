//! Minimal layer toolkit on top of candle: seeded initialization, a named
//! parameter store, and an Adam optimizer whose state can be checkpointed.
//!
//! Layers hold plain tensors that alias the store's variables, so updating a
//! variable in place is immediately visible to every layer using it.

mod adam;
mod layers;
mod store;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv2d, Linear};
pub use store::{load_tensors, save_tensors, ParamStore};
