//! MQTT 3.1.1 topic names and filters.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("empty topic filter")]
    Empty,
    #[error("'#' must be the last level and occupy the whole level: {0:?}")]
    MisplacedMultiLevel(String),
    #[error("'+' must occupy a whole level: {0:?}")]
    MisplacedSingleLevel(String),
    #[error("topic name contains a wildcard: {0:?}")]
    WildcardInName(String),
    #[error("topic contains U+0000")]
    NulCharacter,
}

pub fn validate_filter(filter: &str) -> Result<(), TopicError> {
    if filter.is_empty() {
        return Err(TopicError::Empty);
    }
    if filter.contains('\0') {
        return Err(TopicError::NulCharacter);
    }
    let levels: Vec<&str> = filter.split('/').collect();
    for (i, level) in levels.iter().enumerate() {
        if level.contains('#') && (*level != "#" || i != levels.len() - 1) {
            return Err(TopicError::MisplacedMultiLevel(filter.to_owned()));
        }
        if level.contains('+') && *level != "+" {
            return Err(TopicError::MisplacedSingleLevel(filter.to_owned()));
        }
    }
    Ok(())
}

pub fn validate_topic_name(topic: &str) -> Result<(), TopicError> {
    if topic.is_empty() {
        return Err(TopicError::Empty);
    }
    if topic.contains('\0') {
        return Err(TopicError::NulCharacter);
    }
    if topic.contains(['+', '#']) {
        return Err(TopicError::WildcardInName(topic.to_owned()));
    }
    Ok(())
}

/// Level-wise match of `topic` against a valid `filter`. Topics starting
/// with `$` are not matched by a wildcard in the first level.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut filter = filter.split('/').peekable();
    let mut topic = topic.split('/').peekable();

    if matches!(filter.peek(), Some(&"#" | &"+"))
        && matches!(topic.peek(), Some(t) if t.starts_with('$'))
    {
        return false;
    }

    loop {
        match (filter.next(), topic.next()) {
            (None, None) => return true,
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => (),
            (Some(f), Some(t)) if f == t => (),
            _ => return false,
        }
    }
}
