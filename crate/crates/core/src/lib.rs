//! Locally differentially private fuzzy counting over data streams.
//!
//! Clients encode items as Bloom filters, hide the real filter among
//! artificial ones with a randomized-response mechanism over cuckoo bucket
//! indices, and send the filters cut into segments. The server stores segment
//! fingerprints with counters in sharded, adaptively growing cuckoo filters
//! and answers fuzzy count queries by matching segments.
//!
//! The [`method`] module puts this pipeline and two baseline mechanisms
//! behind one trait so the [`bench`] harness can compare them by name.

pub mod baselines;
pub mod bench;
pub mod bits;
pub mod client;
pub mod cuckoo;
pub mod encoding;
pub mod error;
pub mod hashing;
pub mod ldp;
pub mod method;
pub mod rng;
pub mod server;

pub use bits::BitVector;
pub use encoding::{BloomFilter, EncoderConfig, Value};
pub use error::{Error, Result};
