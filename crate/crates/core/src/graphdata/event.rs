use serde::{Deserialize, Serialize};

/// What the user did in a subforum. Posts and replies both count as
/// activity; the distinction is kept for provenance only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Post,
    Reply,
}

/// One logged user action: a post or reply in a subforum at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    /// Epoch seconds, non-negative.
    pub timestamp: i64,
    /// Index into the subforum node set, `0..N`.
    pub subforum_id: usize,
    pub action: Action,
}
