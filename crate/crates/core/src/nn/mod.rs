//! Minimal numerical substrate: a flat named-tensor store, Adam, parameter
//! EMA, gradient accumulation and named deterministic random streams.

mod optim;
mod rng;
mod store;

pub use optim::{Adam, AdamConfig, Ema, GradAccumulator};
pub use rng::{RngStreams, Stream, StreamState};
pub use store::{ParamStore, TensorId, TensorSpec};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation used for every
/// weight matrix.
pub fn init_uniform<R: rand::Rng + ?Sized>(store: &mut ParamStore, id: TensorId, fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in store.slice_mut(id) {
        *v = rng.random_range(-bound..bound);
    }
}
