//! Event data model, framing, synthetic recordings, clip slicing and the
//! dataset file format.

pub mod clips;
pub mod dataset;
pub mod frame;
pub mod synth;

pub use clips::{clip_count, slice_clips, tile_clips, PupilCenter, SequenceSample};
pub use dataset::{read_dataset, write_dataset, Recording, RecordingMeta};
pub use frame::{
    frame_events, Event, Framing, Polarity, VoxelFrame, DEFAULT_DELTA_T_US, DEFAULT_HEIGHT, DEFAULT_WIDTH,
};
pub use synth::{generate_synthetic_stream, Motion, NaturalMotion, SyntheticSceneConfig, SyntheticStream, Trajectory};
