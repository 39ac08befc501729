//! Frame ingestion, training-set sampling and synthetic data.

mod frame_file;
mod sample;
mod synth;

pub use frame_file::{import_raw, load_frames, read_frames, write_frames, FrameReader, FrameWriter, RawDtype, MAGIC};
pub use sample::{reservoir_sample, sample_shuffle};
pub use synth::{synth_generate, synth_generate_labeled, SynthKind, SynthSpec};
