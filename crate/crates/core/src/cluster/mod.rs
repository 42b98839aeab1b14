//! Latent embedding, dimensionality reduction, k-means and archetype picking.

mod archetype;
mod elbow;
mod kmeans;
mod latent;
mod pca;

pub use archetype::{archetype_id, cluster_by_class, select_archetypes, Archetype, ArchetypeSelection, ClassClustering};
pub use elbow::{elbow_select, ELBOW_RANGE};
pub use kmeans::{kmeans, kmeans_best, kmeans_plus_plus, lloyd, sq_dist, wcss_curve, ClusterModel, KMeansConfig, Points};
pub use latent::{embed_dataset, LatentMatrix, Reduction};
pub use pca::Pca;

/// Archetype counts used for the reference comparison: four single-family
/// and two multi-family clusters.
pub const REFERENCE_K_SFH: usize = 4;
pub const REFERENCE_K_MFH: usize = 2;

/// Default number of principal components kept before clustering.
pub const DEFAULT_PCA_COMPONENTS: usize = 64;
