//! Files in and out: datasets, models, traces, synthetic data and the
//! subprocess scorer bridge.

mod bridge;
mod csvio;
mod export;
mod model_file;
mod synth;

pub use bridge::{blackbox_bridge, BridgeScorer};
pub use csvio::{load_csv, read_csv_str, write_dataset_csv, write_predictions_csv};
pub use export::{write_curve_csv, write_selection_csv, write_trace_csv};
pub use model_file::{load_model, model_from_str, model_to_string, save_model, ModelFile, FORMAT_VERSION};
pub use synth::{gen_synthetic, SyntheticKind, CLUSTER_CENTERS, CLUSTER_SD, TWO_GAUSSIAN_MEANS, TWO_GAUSSIAN_SD};
