//! Building pose hypotheses from video: the empty-scene filter cascade,
//! retrieval of matching frames, and optical-flow pose transfer.

mod filter;
mod flow;
mod job;
mod retrieval;

pub use filter::{
    filter_empty, hard_negative_refresh, score_frame, FrameScore, Refresh, ScoreTable, Scorer, Scorers, Thresholds,
};
pub use flow::{accumulate_flow, transfer_pose, FlowField, TargetFrame};
pub use job::{auto_annotate, local_window, mine, Corpus, Frame, MiningConfig, Shot};
pub use retrieval::{global_match, Match};
