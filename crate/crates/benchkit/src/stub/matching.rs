//! Topic filter matching and the subscription table.

use crate::codec::QoS;

/// Opaque session identifier assigned by the stub's accept loop.
pub type SessionId = u64;

/// Standard MQTT 3.1.1 wildcard semantics: `+` matches exactly one level,
/// `#` matches the remainder of the name including the parent level, and
/// filters starting with a wildcard never match `$`-prefixed topics
/// [MQTT-4.7.2-1].
pub fn match_filter(filter: &str, topic: &str) -> bool {
    if topic.starts_with('$') && (filter.starts_with('#') || filter.starts_with('+')) {
        return false;
    }
    let mut levels = filter.split('/');
    let mut parts = topic.split('/');
    loop {
        match (levels.next(), parts.next()) {
            // '#' also matches the parent: "sport/#" matches "sport"
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(level), Some(part)) if level == part => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// Flat subscription store. (session, filter) pairs are unique; re-subscribing
/// replaces the granted QoS [MQTT-3.8.4-3].
#[derive(Debug, Default)]
pub struct SubscriptionTable {
    entries: Vec<(SessionId, String, QoS)>,
}

impl SubscriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, session: SessionId, filter: &str, granted: QoS) {
        for entry in &mut self.entries {
            if entry.0 == session && entry.1 == filter {
                entry.2 = granted;
                return;
            }
        }
        self.entries.push((session, filter.to_owned(), granted));
    }

    /// Returns true if the (session, filter) pair existed.
    pub fn unsubscribe(&mut self, session: SessionId, filter: &str) -> bool {
        let before = self.entries.len();
        self.entries.retain(|e| !(e.0 == session && e.1 == filter));
        self.entries.len() != before
    }

    pub fn remove_session(&mut self, session: SessionId) {
        self.entries.retain(|e| e.0 != session);
    }

    /// Sessions whose filters match `topic`, each with the highest granted
    /// QoS among its matching filters, ordered by session id.
    pub fn matches(&self, topic: &str) -> Vec<(SessionId, QoS)> {
        let mut out: Vec<(SessionId, QoS)> = Vec::new();
        for (session, filter, granted) in &self.entries {
            if !match_filter(filter, topic) {
                continue;
            }
            match out.iter_mut().find(|(s, _)| s == session) {
                Some(hit) => {
                    if granted.code() > hit.1.code() {
                        hit.1 = *granted;
                    }
                }
                None => out.push((*session, *granted)),
            }
        }
        out.sort_by_key(|(s, _)| *s);
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
