//! Extraction of `<think>`, `<talk>` and `<play>` segments from agent output.

use std::ops::Range;

use thiserror::Error;

use crate::game::action::{parse_deal, parse_price, parse_rps};
use crate::game::{Action, GameKind};

/// Tag bodies of one agent turn, before game-rule validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnContent {
    pub think: String,
    pub talk: Option<String>,
    pub play: Option<Action>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing <think> segment (span {span:?})")]
    MissingThink { span: Range<usize> },
    #[error("missing <{tag}> segment (span {span:?})")]
    MissingAction { tag: &'static str, span: Range<usize> },
    #[error("<{tag}> appears more than once (second at {span:?})")]
    ConflictingTags { tag: &'static str, span: Range<usize> },
    #[error("cannot read a game action from `{text}` (span {span:?})")]
    UnparseableAction { text: String, span: Range<usize> },
}

impl ParseError {
    pub fn span(&self) -> Range<usize> {
        match self {
            ParseError::MissingThink { span }
            | ParseError::MissingAction { span, .. }
            | ParseError::ConflictingTags { span, .. }
            | ParseError::UnparseableAction { span, .. } => span.clone(),
        }
    }
}

struct Segment {
    body: Range<usize>,
    whole: Range<usize>,
}

/// Finds `<tag>...</tag>`. An opener without a closer is reported as missing,
/// pointing at the opener.
fn find_tag(text: &str, tag: &'static str) -> Result<Option<Segment>, ParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let Some(start) = text.find(&open) else {
        return Ok(None);
    };
    let body_start = start + open.len();
    let Some(rel_end) = text[body_start..].find(&close) else {
        let span = start..body_start;
        return Err(if tag == "think" {
            ParseError::MissingThink { span }
        } else {
            ParseError::MissingAction { tag, span }
        });
    };
    let body_end = body_start + rel_end;
    let whole_end = body_end + close.len();
    if let Some(again) = text[whole_end..].find(&open) {
        let s = whole_end + again;
        return Err(ParseError::ConflictingTags { tag, span: s..s + open.len() });
    }
    Ok(Some(Segment { body: body_start..body_end, whole: start..whole_end }))
}

fn parse_action(kind: GameKind, text: &str) -> Option<Action> {
    match kind {
        GameKind::Rps => parse_rps(text).map(Action::Rps),
        GameKind::Bertrand => parse_price(text).map(Action::Price),
        GameKind::Bargaining => parse_deal(text).map(Action::Deal),
    }
}

/// Parses one agent output. Text outside the tags is ignored.
///
/// RPS turns need a talk or a play (a play may carry a talk along with it);
/// Bertrand turns need talk and play; bargaining turns need a play and may
/// carry a talk.
pub fn parse_agent_output(text: &str, kind: GameKind) -> Result<TurnContent, ParseError> {
    let think = find_tag(text, "think")?;
    let talk = find_tag(text, "talk")?;
    let play = find_tag(text, "play")?;
    let Some(think) = think else {
        return Err(ParseError::MissingThink { span: 0..text.len() });
    };
    let after_think = think.whole.end..text.len();
    let talk_text = talk.as_ref().map(|s| text[s.body.clone()].trim().to_string());
    match kind {
        GameKind::Rps => {
            if talk.is_none() && play.is_none() {
                return Err(ParseError::MissingAction { tag: "talk", span: after_think });
            }
        }
        GameKind::Bertrand => {
            if talk.is_none() {
                return Err(ParseError::MissingAction { tag: "talk", span: after_think });
            }
            if play.is_none() {
                return Err(ParseError::MissingAction { tag: "play", span: after_think });
            }
        }
        GameKind::Bargaining => {
            if play.is_none() {
                return Err(ParseError::MissingAction { tag: "play", span: after_think });
            }
        }
    }
    let action = match &play {
        None => None,
        Some(seg) => {
            let body = &text[seg.body.clone()];
            Some(parse_action(kind, body).ok_or_else(|| ParseError::UnparseableAction {
                text: body.trim().to_string(),
                span: seg.body.clone(),
            })?)
        }
    };
    Ok(TurnContent { think: text[think.body].trim().to_string(), talk: talk_text, play: action })
}

/// Canonical tagged form of a turn: `<think> .. </think> <talk> .. </talk> <play> .. </play>`.
pub fn serialize_turn(content: &TurnContent) -> String {
    let mut s = format!("<think> {} </think>", content.think);
    if let Some(t) = &content.talk {
        s.push_str(&format!(" <talk> {t} </talk>"));
    }
    if let Some(a) = &content.play {
        s.push_str(&format!(" <play> {a} </play>"));
    }
    s
}
