//! Object detection head: voting, proposal generation, box decoding,
//! non-maximum suppression, and average-precision evaluation.

mod boxes;
mod head;
mod loss;
mod metrics;

pub use boxes::{iou_aabb, nms, Box3, Detection, GtBox};
pub use head::{
    decode_proposals, DetectConfig, Detector, DetectorOutput, ProposalModule, Proposals,
    VoteModule,
};
pub use loss::{detection_loss, LossBreakdown, LossWeights};
pub use metrics::{average_precision, evaluate_detections, ApReport};
