//! Three-layer conv/pool/FC network on MNIST, filter clustering, and
//! cluster-initialized small networks.

mod adam;
mod experiments;
mod idx;
mod kmeans;
mod net;

pub use adam::{adam_step, AdamState, Trainable, BETA1, BETA2, EPSILON};
pub use experiments::{
    angle_comparison, cluster_filters, cluster_init_experiment, cluster_initialized_net, fit, read_filter_bank, train_mnist,
    write_filter_bank, AngleComparison, ClusterInitConfig, ClusterInitOutcome, ClusterInitRow, EpochMetrics, FilterBankHeader, GridCell,
    MnistTrainConfig, TrainedNet, DEFAULT_TRAIN_SIZES, FILTER_BANK_SCHEMA_VERSION, RANDOM_INIT_GRID,
};
pub use idx::{parse_idx, parse_idx_images, parse_idx_labels, write_idx, MnistDataset, IMAGES_MAGIC, LABELS_MAGIC, PIXELS, SIDE};
pub use kmeans::{median, spherical_kmeans, KMeansConfig, KMeansResult};
pub use net::{forward_backward, forward_backward_counted, mean_loss, truncated_normal, ConvNet, NetShape, Params, CLASSES};
