//! The emotion adapter: a learned query dictionary refined by alternating
//! self-attention over `[queries; emotion tokens]` and cross-attention
//! against image tokens. The first `num_queries` rows of the final block
//! state form the conditioning embedding `c_e`.

mod attention;
mod forward;
mod layers;
mod params;

pub use attention::{attention_logits, attention_weights, scaled_attention};
pub use forward::{adapter_forward, AdapterTape, ConditioningOutput, EmotionEmbedding, ImageEmbedding};
pub use layers::{gelu, gelu_grad};
pub use params::{AdapterConfig, AdapterParams, BlockParams, ResidualParams};
