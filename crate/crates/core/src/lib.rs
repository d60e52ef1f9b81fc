//! Interpretable structural similarity between image feature maps.
//!
//! A feature map is a grid of part embeddings. Two maps are compared by
//! solving an entropy-regularized optimal transport problem between their
//! cells and summing part-wise similarities weighted by the transport plan.
//! The resulting score decomposes into per-location-pair contributions,
//! which is what makes it inspectable.
//!
//! Modules:
//!
//! - [`fmap`]: feature maps, grid pooling and global average pooling.
//! - [`bank`]: galleries and the binary feature-bank file format.
//! - [`ot`]: Sinkhorn solver and an exact transportation-simplex oracle.
//! - [`matching`]: similarity/cost matrices, marginals, structural scores.
//! - [`retrieval`]: coarse cosine ranking followed by structural re-ranking.
//! - [`metrics`]: P@k, R-Precision and MAP@R.
//! - [`losses`]: forward values of structure-augmented training losses.

pub mod bank;
pub mod error;
pub mod fmap;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod ot;
pub mod retrieval;

pub use bank::{read_feature_bank, write_feature_bank, BankError, Gallery, GalleryItem};
pub use error::{Error, Result};
pub use fmap::{gap, pool_grid, FeatureMap, GlobalEmbedding};
pub use matching::{MarginalMode, MatchExplanation};
pub use ot::{sinkhorn, CostMatrix, MarginalPair, SinkhornConfig, TransportPlan};
pub use retrieval::{batch_rerank, coarse_rank, rerank, Combine, RankedList, RetrievalConfig};
