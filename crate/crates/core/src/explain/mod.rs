//! Model explanations: Grad-CAM saliency and t-SNE embeddings of block features.

mod gradcam;
mod tsne;

pub use gradcam::{
    average_heatmap, cam_from_activations, grad_cam, grad_cam_batch, normalize_max, radial_band_mean,
    upsample_bilinear, Heatmap,
};
pub use tsne::{
    conditional_probabilities, embedding_csv, entropy, extract_block_features, joint_probabilities,
    silhouette_score, squared_distances, tsne, Embedding, TsneParams,
};
