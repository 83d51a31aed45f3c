//! Lloyd's k-means with k-means++ seeding and the iterative small-cluster
//! removal loop built on top of it.

mod iterative;
mod lloyd;

pub use iterative::{
    iterative_kmeans, FinalCluster, OutlierConfig, OutlierIteration, OutlierRun, RemovedRow, Termination,
};
pub use lloyd::{fit_points, inertia_audit, kmeans_fit, Clustering, InertiaAudit, KMeansConfig};

pub(crate) use lloyd::dist2;
