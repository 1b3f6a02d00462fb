//! Domain vocabulary shared by every other module. Nothing here performs I/O.
//!
//! Every type has a canonical single-line JSON encoding with snake_case
//! field names; timestamps are ISO-8601 UTC with millisecond precision.

mod criteria;
mod envelope;
mod header;
mod records;
mod scalar;
mod time;
mod user;

pub use criteria::{fold_case, InvertedRange, SearchCriteria, SortDir, SortKey};
pub use envelope::{
    AttachmentUpload, CommentPayload, EorPayload, Kind, MessageEnvelope, Payload, SorPayload,
    PROTOCOL_VERSION,
};
pub use header::{
    detector_mask_format, detector_mask_parse, is_valid_partition, validate_header, ClosedStatus,
    DetectorMask, DetectorMaskError, HeaderViolation, RunHeader, RunStatus, TriggerType, MAX_COUNT,
};
pub use records::{
    content_digest, is_valid_digest, is_valid_filename, is_valid_media_type, is_valid_name, Attachment, Comment, CommentError,
    CommentOrigin, IsInfo, MrsMessage, NewComment, Severity,
};
pub use scalar::{Attribute, Scalar, ScalarError, ScalarList, ScalarType};
pub use time::{Timestamp, TimestampError};
pub use user::{Role, User};
