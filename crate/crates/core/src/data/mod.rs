pub mod degrade;
pub mod io;
pub mod metrics;
pub mod scene;

pub use degrade::{degrade, Degradation, DegradationKind};
pub use io::{read_gray, read_image, read_mask, stems_in, write_image, write_sample, Dataset};
pub use metrics::{evaluate_metrics, Metrics};
pub use scene::{gen_scene, SceneSpec};
