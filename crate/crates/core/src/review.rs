//! Analyst review actions on coded segments and their append-only log.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::coding::{CodedSegment, SegmentStatus};
use crate::error::{Error, Result};

/// `<pair>:<document>:<sentence>`, e.g. `training:p01:12`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    pub pair: String,
    pub document: String,
    pub sentence: usize,
}

impl SegmentId {
    pub fn of(pair: &str, seg: &CodedSegment) -> Self {
        SegmentId {
            pair: pair.to_string(),
            document: seg.document.clone(),
            sentence: seg.sentence,
        }
    }

    pub fn matches(&self, seg: &CodedSegment) -> bool {
        self.document == seg.document && self.sentence == seg.sentence
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.pair, self.document, self.sentence)
    }
}

impl FromStr for SegmentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("segment id `{s}` is not <set>:<document>:<sentence>"));
        let (pair, rest) = s.split_once(':').ok_or_else(bad)?;
        let (document, sentence) = rest.rsplit_once(':').ok_or_else(bad)?;
        if pair.is_empty() || document.is_empty() {
            return Err(bad());
        }
        Ok(SegmentId {
            pair: pair.to_string(),
            document: document.to_string(),
            sentence: sentence.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for SegmentId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SegmentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Accept,
    Reject,
    Reassign,
}

impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accept" => Ok(ActionKind::Accept),
            "reject" => Ok(ActionKind::Reject),
            "reassign" => Ok(ActionKind::Reassign),
            other => Err(Error::Validation(format!("unknown review action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAction {
    pub segment: SegmentId,
    pub action: ActionKind,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub note: Option<String>,
    pub timestamp: String,
}

impl ReviewAction {
    pub fn validate(&self) -> Result<()> {
        if self.action == ActionKind::Reassign && self.categories.iter().all(|c| c.trim().is_empty()) {
            return Err(Error::Validation("reassign needs at least one category".into()));
        }
        Ok(())
    }

    /// Applies the action to the segment it names.
    pub fn apply(&self, seg: &mut CodedSegment) {
        match self.action {
            ActionKind::Accept => seg.status = SegmentStatus::Accepted,
            ActionKind::Reject => seg.status = SegmentStatus::Rejected,
            ActionKind::Reassign => {
                let mut cats: Vec<String> = self
                    .categories
                    .iter()
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
                cats.sort();
                cats.dedup();
                seg.categories = cats;
                seg.status = SegmentStatus::Reassigned;
            }
        }
    }
}

/// One JSON object per line.
pub fn parse_log(text: &str) -> Result<Vec<ReviewAction>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn log_line(action: &ReviewAction) -> String {
    let mut s = serde_json::to_string(action).expect("serialisable action");
    s.push('\n');
    s
}

/// Replays the log entries of `pair` onto freshly coded segments. Actions
/// whose sentence no longer carries a segment are returned as orphans.
pub fn replay(pair: &str, segments: &mut [CodedSegment], actions: &[ReviewAction]) -> Vec<ReviewAction> {
    let mut orphans = Vec::new();
    for a in actions.iter().filter(|a| a.segment.pair == pair) {
        match segments.iter_mut().find(|s| a.segment.matches(s)) {
            Some(seg) => a.apply(seg),
            None => orphans.push(a.clone()),
        }
    }
    orphans
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::PolarityCounts;

    fn seg(doc: &str, sentence: usize) -> CodedSegment {
        CodedSegment {
            document: doc.into(),
            sentence,
            start: 0,
            end: 5,
            matches: vec![],
            categories: vec!["a".into()],
            status: SegmentStatus::Auto,
            polarity: PolarityCounts::default(),
        }
    }

    fn action(id: &str, kind: ActionKind, cats: &[&str]) -> ReviewAction {
        ReviewAction {
            segment: id.parse().unwrap(),
            action: kind,
            categories: cats.iter().map(|c| c.to_string()).collect(),
            note: None,
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn ids_round_trip() {
        let id: SegmentId = "training:p:01:12".parse().unwrap();
        assert_eq!(id.document, "p:01");
        assert_eq!(id.sentence, 12);
        assert_eq!(id.to_string(), "training:p:01:12");
        assert!("training:p01".parse::<SegmentId>().is_err());
        assert!("training:p01:x".parse::<SegmentId>().is_err());
    }

    #[test]
    fn reassign_requires_categories() {
        assert!(action("t:d:0", ActionKind::Reassign, &[]).validate().is_err());
        assert!(action("t:d:0", ActionKind::Reassign, &[" "]).validate().is_err());
        assert!(action("t:d:0", ActionKind::Reassign, &["b"]).validate().is_ok());
        assert!(action("t:d:0", ActionKind::Accept, &[]).validate().is_ok());
    }

    #[test]
    fn replay_applies_in_order_and_reports_orphans() {
        let mut segs = vec![seg("d", 0), seg("d", 3)];
        let log = vec![
            action("t:d:0", ActionKind::Accept, &[]),
            action("t:d:0", ActionKind::Reject, &[]),
            action("t:d:3", ActionKind::Reassign, &["z", "b", "z"]),
            action("t:d:9", ActionKind::Accept, &[]),
            action("other:d:3", ActionKind::Reject, &[]),
        ];
        let text: String = log.iter().map(log_line).collect();
        let parsed = parse_log(&text).unwrap();
        assert_eq!(parsed, log);
        let orphans = replay("t", &mut segs, &parsed);
        assert_eq!(segs[0].status, SegmentStatus::Rejected);
        assert_eq!(segs[1].status, SegmentStatus::Reassigned);
        assert_eq!(segs[1].categories, vec!["b", "z"]);
        assert_eq!(orphans.len(), 1);
        assert_eq!(orphans[0].segment.sentence, 9);
    }
}
