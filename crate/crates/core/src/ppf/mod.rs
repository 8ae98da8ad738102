//! Point pair features, their discretization and the global model table.

mod feature;
mod table;

pub use feature::{
    alpha_angle, compute_ppf, discretize, intermediate_frame, neighbor_keys, neighbor_keys_into,
    pose_from_frames, wrap_angle, Ppf, PpfKey, QuantizationParams, MIN_PAIR_DISTANCE,
};
pub use table::{ModelTable, TableEntry, FORMAT_VERSION, MAGIC};
