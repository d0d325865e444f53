pub mod checkpoint;
pub mod network;
pub mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, Container};
pub use network::{SampleCnn, Trace};
pub use spec::{level_time, parse_levels, reference_scales, LevelIndex, ModelSpec, Scale, Task};
