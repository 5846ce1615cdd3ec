//! Tagged step-output protocol.
//!
//! Every agent turn is a reasoning block wrapped in one of four
//! meta-reasoning tags followed by an `<action>…</action>` block:
//!
//! ```text
//! <explore>The soapbar might be near the sink.</explore>
//! <action>go to sinkbasin 1</action>
//! ```
//!
//! Parsing is total: malformed output is a valid (penalised) outcome.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{AgentView, Treatment};
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaTag {
    Planning,
    Explore,
    Reflection,
    Monitor,
}

impl MetaTag {
    pub const ALL: [MetaTag; 4] = [
        MetaTag::Planning,
        MetaTag::Explore,
        MetaTag::Reflection,
        MetaTag::Monitor,
    ];

    /// The literal tag name used in step output and logs.
    pub fn as_str(self) -> &'static str {
        match self {
            MetaTag::Planning => "planning",
            MetaTag::Explore => "explore",
            MetaTag::Reflection => "reflection",
            MetaTag::Monitor => "monitor",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MetaTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown meta-reasoning tag `{s}`")))
    }
}

pub const ACTION_TAG: &str = "action";

/// One parsed agent turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedStep {
    pub tag: MetaTag,
    pub reasoning: String,
    pub action: String,
    pub format_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagName {
    Meta(MetaTag),
    Action,
}

impl TagName {
    fn literal(self) -> &'static str {
        match self {
            TagName::Meta(t) => t.as_str(),
            TagName::Action => ACTION_TAG,
        }
    }
}

const TAG_NAMES: [TagName; 5] = [
    TagName::Meta(MetaTag::Planning),
    TagName::Meta(MetaTag::Explore),
    TagName::Meta(MetaTag::Reflection),
    TagName::Meta(MetaTag::Monitor),
    TagName::Action,
];

/// Recognises `<name>` or `</name>` at the start of `s`.
fn match_tag(s: &str) -> Option<(TagName, bool, usize)> {
    let rest = s.strip_prefix('<')?;
    let (closing, rest) = match rest.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    TAG_NAMES.into_iter().find_map(|name| {
        let lit = name.literal();
        rest.strip_prefix(lit)
            .and_then(|r| r.strip_prefix('>'))
            .map(|_| (name, closing, 1 + closing as usize + lit.len() + 1))
    })
}

/// Parses a step output. Never fails.
///
/// `format_ok` holds iff the text has no nested, interleaved, dangling or
/// unmatched tags, at least one meta-reasoning pair and at least one
/// non-empty action pair. The first meta tag in document order wins; a
/// malformed step falls back to [`MetaTag::Monitor`] and a best-effort action.
pub fn parse(output_text: &str) -> ParsedStep {
    let mut pairs: Vec<(TagName, &str)> = Vec::new();
    let mut open: Option<(TagName, usize)> = None;
    let mut malformed = false;
    let mut i = 0;
    while let Some(off) = output_text[i..].find('<') {
        let at = i + off;
        match match_tag(&output_text[at..]) {
            Some((name, closing, len)) => {
                match (open, closing) {
                    (None, false) => open = Some((name, at + len)),
                    (Some((cur, start)), true) if cur == name => {
                        pairs.push((name, &output_text[start..at]));
                        open = None;
                    }
                    (Some(_), false) => {
                        malformed = true;
                        open = Some((name, at + len));
                    }
                    _ => malformed = true,
                }
                i = at + len;
            }
            None => i = at + 1,
        }
    }
    if open.is_some() {
        malformed = true;
    }

    let first_meta = pairs.iter().find_map(|(n, c)| match n {
        TagName::Meta(t) => Some((*t, c.trim())),
        TagName::Action => None,
    });
    let first_action = pairs
        .iter()
        .find(|(n, _)| *n == TagName::Action)
        .map(|(_, c)| c.trim());
    let action_ok = first_action.is_some_and(|a| !a.is_empty() && !a.contains(['<', '>']));

    match (malformed, first_meta, first_action) {
        (false, Some((tag, reasoning)), Some(action)) if action_ok => ParsedStep {
            tag,
            reasoning: reasoning.to_string(),
            action: action.to_string(),
            format_ok: true,
        },
        _ => ParsedStep {
            tag: MetaTag::Monitor,
            reasoning: first_meta.map(|(_, r)| strip_markup(r)).unwrap_or_default(),
            action: match first_action {
                Some(a) => strip_markup(a),
                None => last_line_action(output_text),
            },
            format_ok: false,
        },
    }
}

fn last_line_action(text: &str) -> String {
    text.lines()
        .rev()
        .map(strip_markup)
        .find(|l| !l.is_empty())
        .unwrap_or_default()
}

/// Removes `<...>` spans and any stray angle brackets.
fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for ch in s.chars() {
        match ch {
            '<' => depth += 1,
            '>' => depth = depth.saturating_sub(1),
            c if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out.trim().to_string()
}

/// One-sentence reasoning text for a tag.
pub fn reasoning_sentence(tag: MetaTag, view: &AgentView, action: &str) -> String {
    let cls = &view.goal.object_class;
    match tag {
        MetaTag::Planning => plan_sentence(view),
        MetaTag::Explore => format!(
            "I have not found what I need yet, so the {cls} could be somewhere I have not checked; I will try: {action}."
        ),
        MetaTag::Reflection => format!(
            "My recent actions made no progress, so I will change my approach and do: {action}."
        ),
        MetaTag::Monitor => match &view.held {
            Some(h) => format!("I am carrying the {h}; the next step toward my subgoal is: {action}."),
            None => format!("My current subgoal is to get a {cls}; the next step is: {action}."),
        },
    }
}

fn plan_sentence(view: &AgentView) -> String {
    let g = &view.goal;
    let cls = &g.object_class;
    let kind = g.receptacle_kind.as_deref().unwrap_or("");
    let steps: Vec<String> = match (g.treatment, g.count) {
        (Treatment::Lamp, _) => vec![
            format!("find a {cls}"),
            format!("take the {cls}"),
            "find the desklamp".to_string(),
            "use the desklamp".to_string(),
        ],
        (Treatment::None, 2) => vec![
            format!("find a {cls}"),
            format!("put it in the {kind}"),
            format!("find a second {cls}"),
            format!("put it in the {kind}"),
        ],
        (Treatment::None, _) => vec![
            format!("find a {cls}"),
            format!("take the {cls}"),
            format!("put it in the {kind}"),
        ],
        (t, _) => {
            let verb = t.verb().unwrap_or_default();
            let appliance = t.appliance().unwrap_or_default();
            vec![
                format!("find a {cls}"),
                format!("take the {cls}"),
                format!("{verb} it with the {appliance}"),
                format!("put it in the {kind}"),
            ]
        }
    };
    let listed: Vec<String> = steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("step {}: {s}", i + 1))
        .collect();
    format!("{}.", listed.join(", "))
}

/// Wraps a reasoning sentence in `tag` and appends the action block.
///
/// `action` must be a non-empty command string without angle brackets, such
/// as any admissible action.
pub fn render(tag: MetaTag, view: &AgentView, action: &str) -> String {
    render_with(tag, &reasoning_sentence(tag, view, action), action)
}

pub fn render_with(tag: MetaTag, reasoning: &str, action: &str) -> String {
    let t = tag.as_str();
    format!("<{t}>{reasoning}</{t}>\n<{ACTION_TAG}>{action}</{ACTION_TAG}>")
}

/// The same step with its meta-reasoning tag pair dropped.
pub fn render_untagged(reasoning: &str, action: &str) -> String {
    format!("{reasoning}\n<{ACTION_TAG}>{action}</{ACTION_TAG}>")
}
