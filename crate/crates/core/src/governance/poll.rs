use std::fmt::Write as _;

use chrono::{NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::GovernanceError;
use crate::crypto::{Address, Digest256};

pub const SAMPLE_POLL: &str = include_str!("sample_poll.json");

const DATE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub text: String,
    /// Running tally, "0" when the poll is sent.
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub text: String,
    pub multiple_choice: bool,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poll {
    pub guid: String,
    pub issuer_id: String,
    pub description: String,
    /// Carried through unchanged; no behavior hangs on it.
    pub close_poll: bool,
    pub close_date: NaiveDateTime,
    pub questions: Vec<Question>,
}

fn malformed(detail: impl Into<String>) -> GovernanceError {
    GovernanceError::MalformedPoll(detail.into())
}

/// Rewrites the loose notation used in hand-written polls into strict JSON:
/// `<placeholder>` tokens become strings and trailing commas are dropped.
fn strictify(input: &str) -> String {
    let chars: Vec<char> = input.chars().collect();
    let mut out = String::with_capacity(input.len());
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            out.push(c);
            if c == '\\' && i + 1 < chars.len() {
                out.push(chars[i + 1]);
                i += 1;
            } else if c == '"' {
                in_string = false;
            }
        } else if c == '"' {
            in_string = true;
            out.push(c);
        } else if c == '<' {
            let end = chars[i..].iter().position(|&d| d == '>').map(|p| i + p);
            match end {
                Some(end) => {
                    let token: String = chars[i..=end].iter().collect();
                    out.push_str(&serde_json::to_string(&token).expect("string serializes"));
                    i = end;
                }
                None => out.push(c),
            }
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|d| !d.is_whitespace());
            if !matches!(next, Some('}') | Some(']')) {
                out.push(c);
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

fn field<'a>(obj: &'a Value, key: &str) -> Result<&'a Value, GovernanceError> {
    obj.get(key).ok_or_else(|| malformed(format!("missing \"{key}\"")))
}

fn text(obj: &Value, key: &str) -> Result<String, GovernanceError> {
    field(obj, key)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(format!("\"{key}\" must be a string")))
}

fn yes_no(obj: &Value, key: &str) -> Result<bool, GovernanceError> {
    match text(obj, key)?.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(malformed(format!("\"{key}\" must be yes or no, got {other:?}"))),
    }
}

/// A lone object stands for a one-element list.
fn one_or_many(v: &Value) -> Vec<&Value> {
    match v {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    }
}

fn parse_answer(v: &Value) -> Result<Answer, GovernanceError> {
    Ok(Answer {
        text: text(v, "text")?,
        value: text(v, "value")?,
    })
}

fn parse_question(v: &Value) -> Result<Question, GovernanceError> {
    let answers = one_or_many(field(field(v, "answers")?, "answer")?)
        .into_iter()
        .map(parse_answer)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Question {
        text: text(v, "text")?,
        multiple_choice: yes_no(v, "multipleChoice")?,
        answers,
    })
}

pub fn parse_poll(json: &str) -> Result<Poll, GovernanceError> {
    let root: Value = serde_json::from_str(&strictify(json)).map_err(|e| malformed(e.to_string()))?;
    let body = field(&root, "eqbPoll")?;
    let close_date = NaiveDateTime::parse_from_str(&text(body, "closeDate")?, DATE_FORMAT)
        .map_err(|e| malformed(format!("closeDate: {e}")))?;
    let questions = match body.get("questions").and_then(|q| q.get("question")) {
        Some(q) => one_or_many(q).into_iter().map(parse_question).collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let poll = Poll {
        guid: text(body, "pollGUID")?,
        issuer_id: text(body, "issuerID")?,
        description: text(body, "description")?,
        close_poll: yes_no(body, "closePoll")?,
        close_date,
        questions,
    };
    poll.check_shape()?;
    Ok(poll)
}

fn quote(s: &str) -> String {
    // Template placeholders are written back bare, as they were read.
    if s.starts_with('<') && s.ends_with('>') && !s.contains('"') {
        s.to_string()
    } else {
        serde_json::to_string(s).expect("string serializes")
    }
}

fn yes_no_str(b: bool) -> &'static str {
    if b {
        "\"yes\""
    } else {
        "\"no\""
    }
}

impl Poll {
    pub fn check_shape(&self) -> Result<(), GovernanceError> {
        if self.questions.is_empty() {
            return Err(malformed("no questions"));
        }
        if let Some(i) = self.questions.iter().position(|q| q.answers.len() < 2) {
            return Err(malformed(format!("question {i} has fewer than two answers")));
        }
        Ok(())
    }

    /// Close date as simulated seconds.
    pub fn close_at(&self) -> u64 {
        Utc.from_utc_datetime(&self.close_date).timestamp().max(0) as u64
    }

    pub fn issuer_address(&self) -> Option<Address> {
        self.issuer_id.parse().ok()
    }

    pub fn id(&self) -> Digest256 {
        crate::crypto::hash(self.to_json().as_bytes())
    }

    pub fn with_close_at(mut self, close_at: u64) -> Self {
        self.close_date = Utc
            .timestamp_opt(close_at as i64, 0)
            .single()
            .expect("in range")
            .naive_utc();
        self
    }

    /// Writes the poll in the `eqbPoll` layout: one question as an object,
    /// several as an array.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n  \"eqbPoll\": {\n");
        let _ = writeln!(s, "    \"pollGUID\": {},", quote(&self.guid));
        let _ = writeln!(s, "    \"issuerID\": {},", quote(&self.issuer_id));
        let _ = writeln!(s, "    \"description\": {},", quote(&self.description));
        let _ = writeln!(s, "    \"closePoll\": {},", yes_no_str(self.close_poll));
        let _ = writeln!(
            s,
            "    \"closeDate\": {},",
            quote(&self.close_date.format(DATE_FORMAT).to_string())
        );
        s.push_str("    \"questions\": {\n      \"question\": ");
        let many = self.questions.len() != 1;
        if many {
            s.push('[');
        }
        for (i, q) in self.questions.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str("{\n");
            let _ = writeln!(s, "        \"text\": {},", quote(&q.text));
            let _ = writeln!(s, "        \"multipleChoice\": {},", yes_no_str(q.multiple_choice));
            s.push_str("        \"answers\": {\n          \"answer\": [");
            for (j, a) in q.answers.iter().enumerate() {
                if j > 0 {
                    s.push_str(", ");
                }
                s.push_str("{\n");
                let _ = writeln!(s, "            \"text\": {},", quote(&a.text));
                let _ = writeln!(s, "            \"value\": {}", quote(&a.value));
                s.push_str("          }");
            }
            s.push_str("]\n        }\n      }");
        }
        if many {
            s.push(']');
        }
        s.push_str("\n    }\n  }\n}\n");
        s
    }
}

impl Serialize for Poll {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_json())
    }
}

impl<'de> Deserialize<'de> for Poll {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        parse_poll(&raw).map_err(serde::de::Error::custom)
    }
}

/// Drops whitespace outside strings and commas that close a list, so two
/// renderings of the same poll compare equal.
pub fn normalize_layout(json: &str) -> String {
    let stripped: String = {
        let mut out = String::new();
        let mut in_string = false;
        let mut escaped = false;
        for c in json.chars() {
            if in_string {
                out.push(c);
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == '"' {
                    in_string = false;
                }
            } else if c == '"' {
                in_string = true;
                out.push(c);
            } else if !c.is_whitespace() {
                out.push(c);
            }
        }
        out
    };
    stripped.replace(",}", "}").replace(",]", "]")
}
