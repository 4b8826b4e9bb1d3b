//! Reactive nested sampling.
//!
//! Computes Bayesian evidences with bootstrapped uncertainties and weighted
//! posterior samples. Points are organized as a tree rooted at the full prior
//! volume; new points above the likelihood threshold are drawn either by
//! rejection from a region (MLFriends balls intersected with u-space and
//! v-space ellipsoids) or by slice-based random walks.

// `!(x > y)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrate;
pub mod lrps;
pub mod math;
pub mod model;
pub mod nscore;
pub mod region;
pub mod runio;
pub mod stepsampler;
pub mod tree;

pub use error::{Error, Result};
pub use model::{catalog, Problem};

/// Seedable generator used for every random draw in a run.
pub type EngineRng = rand_chacha::ChaCha8Rng;

/// Serde adapter storing an [`EngineRng`] as seed, stream and word position.
/// The 128-bit position is written as a decimal string so it survives
/// self-describing formats that lack 128-bit integers.
pub(crate) mod rng_serde {
    use rand::SeedableRng;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::EngineRng;

    #[derive(Serialize, Deserialize)]
    struct RngState {
        seed: [u8; 32],
        stream: u64,
        word_pos: String,
    }

    pub fn serialize<S: Serializer>(rng: &EngineRng, s: S) -> Result<S::Ok, S::Error> {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<EngineRng, D::Error> {
        let state = RngState::deserialize(d)?;
        let word_pos: u128 = state.word_pos.parse().map_err(serde::de::Error::custom)?;
        let mut rng = EngineRng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}
