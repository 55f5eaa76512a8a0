//! Multi-label land-cover classifier: label dropping, softmax targets,
//! the 18-layer residual network, metrics and feature extraction.

mod metrics;
mod model;
mod resnet;
mod targets;
mod train;

pub use metrics::{
    alpha_grid, evaluate_metrics, f_beta, predict_labels, tau_grid, tune_threshold, Averaging,
    MetricsReport, ThresholdRule,
};
pub use model::{argmax_rows, extract_features, patches_to_tensor, Classifier};
pub use resnet::{ResNet18, ResNetConfig};
pub use targets::{classification_loss, drop_labels, target_distribution, target_tensor};
pub use train::{
    estimate_band_stats, train_classifier, validate, ClassifierConfig, EpochReport,
    TrainedClassifier,
};
