//! Random token strings with controlled alphabet, entropy, conditional
//! entropy and repetition structure.

mod alphabet;
mod context;
mod entropy;
mod generate;

pub use alphabet::{make_alphabet, Alphabet, AlphabetKind, AlphabetSpec, TokenId};
pub use context::{ContextSource, ContextStream};
pub use entropy::{distribution_entropy, nats_to_bits, oversampled_entropy, solve_oversample_prob};
pub use generate::{
    balanced_privileged_map, conditional_string, embed_in_context, entropy_matched_string, partition_string,
    privileged_prob, repeated_substring_string, uniform_string, Placement, PrivilegedMap, Recipe, RecipeKind,
    TokenString,
};
