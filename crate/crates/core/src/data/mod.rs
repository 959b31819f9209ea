//! Synthetic datasets and the non-IID partitioning strategies.
//!
//! Strategies, grouped by the kind of skew they produce:
//!
//! | skew               | function                          |
//! |--------------------|-----------------------------------|
//! | none (IID)         | [`partition_iid`]                 |
//! | label, quantity    | [`partition_label_quantity`]      |
//! | label, Dirichlet   | [`partition_label_dirichlet`]     |
//! | sample quantity    | [`partition_quantity_dirichlet`]  |
//! | feature, noise     | [`apply_feature_noise`]           |
//! | feature, synthetic | [`partition_cube_symmetric`]      |
//! | feature, sources   | [`partition_by_source`]           |

mod dataset;
mod generate;
mod noise;
mod partition;
mod report;

pub use dataset::{Dataset, PartitionMap};
pub use generate::{
    assign_sources, blob_centers, gen_blobs, gen_cube, octant_of, sample_blobs, CUBE_PLANE_BAND,
};
pub use noise::{apply_feature_noise, noise_level};
pub use partition::{
    largest_remainder, partition_by_source, partition_cube_symmetric, partition_iid,
    partition_label_dirichlet, partition_label_quantity, partition_quantity_dirichlet,
    sample_dirichlet, RESAMPLE_BUDGET,
};
pub use report::{parse_manifest, skew_report, write_manifest, ClientSkew, ManifestLine, SkewReport};
