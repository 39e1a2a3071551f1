//! Small reverse-mode kernel: just enough to train the recurrent policy and
//! the frame-level baselines without an ML framework.

mod adam;
mod checkpoint;
mod dense;
mod gaussian;
mod heads;
mod lstm;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::Dense;
pub use gaussian::gaussian_logpdf;
pub use heads::{HeadGrads, HeadOutput, Heads};
pub use lstm::{Lstm, LstmCache, LstmState, LstmStepCache};
pub use params::{GradTape, ParamSet, Tensor, TensorId};
