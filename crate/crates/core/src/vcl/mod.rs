//! Video-centralised learning: every track owns a latent centre, clips of a
//! track are pulled towards it and pushed away from the centres of tracks
//! that co-occur with it.

mod history;
mod loss;
mod sampler;
mod schedule;
mod train;

pub use history::{read_history_csv, write_history_csv, EpochRecord};
pub use loss::{grad_centre, grad_z, update_centre, vc_loss, Link, LossGrad, SINGULAR_EPS};
pub use sampler::{gather_frames, sample_clip_consecutive, sample_clip_uniform, ClipSampler, ClipSpan};
pub use schedule::{onecycle_lr, Sgd, ONECYCLE_END_DIV, ONECYCLE_START_DIV};
pub use train::{
    compute_centre_full, eval_representations, train, train_with_observer, CentreTable, CheckpointPolicy, EpochView,
    TrainConfig, TrainOutcome, GRAD_CHUNK,
};
