//! Topic name and filter validation (3.1.1 section 4.7).
//!
//! Names carry no wildcards. Filters may use `+` for exactly one level and
//! `#` for the remainder, `#` only as the final level. Both wildcards must
//! occupy a whole level. No `$SYS` special-casing: the harness never
//! publishes reserved topics.

/// Topic names and filters are MQTT strings, capped at a u16 length prefix.
pub const MAX_TOPIC_BYTES: usize = 65_535;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("topic must not be empty")]
    Empty,
    #[error("topic exceeds 65535 bytes")]
    TooLong,
    #[error("topic contains a nul character")]
    EmbeddedNul,
    #[error("topic name must not contain wildcards")]
    WildcardInName,
    #[error("'#' must be the final level of a filter")]
    MultiLevelNotLast,
    #[error("a wildcard must occupy a whole level")]
    WildcardNotAlone,
}

fn validate_common(topic: &str) -> Result<(), TopicError> {
    if topic.is_empty() {
        return Err(TopicError::Empty);
    }
    if topic.len() > MAX_TOPIC_BYTES {
        return Err(TopicError::TooLong);
    }
    if topic.contains('\0') {
        return Err(TopicError::EmbeddedNul);
    }
    Ok(())
}

/// Validate a topic name as used in PUBLISH: wildcards are forbidden.
pub fn validate_topic_name(topic: &str) -> Result<(), TopicError> {
    validate_common(topic)?;
    if topic.contains('+') || topic.contains('#') {
        return Err(TopicError::WildcardInName);
    }
    Ok(())
}

/// Validate a subscription filter's wildcard grammar.
pub fn validate_topic_filter(filter: &str) -> Result<(), TopicError> {
    validate_common(filter)?;
    let levels: Vec<&str> = filter.split('/').collect();
    let last = levels.len() - 1;
    for (i, level) in levels.iter().enumerate() {
        if level.contains('#') {
            if *level != "#" {
                return Err(TopicError::WildcardNotAlone);
            }
            if i != last {
                return Err(TopicError::MultiLevelNotLast);
            }
        }
        if level.contains('+') && *level != "+" {
            return Err(TopicError::WildcardNotAlone);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_plain_names() {
        for name in ["a", "a/b/c", "bench/stub/local/offset/rep0/p07", "a//b", "/"] {
            assert_eq!(validate_topic_name(name), Ok(()), "{name:?}");
        }
    }

    #[test]
    fn rejects_bad_names() {
        assert_eq!(validate_topic_name(""), Err(TopicError::Empty));
        assert_eq!(validate_topic_name("a/+/b"), Err(TopicError::WildcardInName));
        assert_eq!(validate_topic_name("a/#"), Err(TopicError::WildcardInName));
        assert_eq!(validate_topic_name("a\0b"), Err(TopicError::EmbeddedNul));
        assert_eq!(
            validate_topic_name(&"x".repeat(65_536)),
            Err(TopicError::TooLong)
        );
    }

    #[test]
    fn accepts_valid_filters() {
        for filter in ["#", "+", "sport/#", "sport/+/player1", "+/+", "a//b", "sport/tennis"] {
            assert_eq!(validate_topic_filter(filter), Ok(()), "{filter:?}");
        }
    }

    #[test]
    fn rejects_bad_filters() {
        assert_eq!(validate_topic_filter("a/#/b"), Err(TopicError::MultiLevelNotLast));
        assert_eq!(validate_topic_filter("sport+"), Err(TopicError::WildcardNotAlone));
        assert_eq!(validate_topic_filter("sport/ten#"), Err(TopicError::WildcardNotAlone));
        assert_eq!(validate_topic_filter("s+/x"), Err(TopicError::WildcardNotAlone));
        assert_eq!(validate_topic_filter(""), Err(TopicError::Empty));
    }
}
