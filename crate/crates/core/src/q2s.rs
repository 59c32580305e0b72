//! Rule-based question-to-statement rewriting for VQA prompting.
//!
//! Open-ended questions become statements with a mask placeholder, answered by
//! picking the most probable candidate (MLM route). Closed-ended questions
//! become plain statements, answered yes/no by thresholding a match score
//! (ITM route).
//!
//! Supported families:
//!
//! | question                        | statement                          |
//! |---------------------------------|------------------------------------|
//! | how many X are there [rest]     | there are [MASK] X [rest].         |
//! | what color is/are X             | the color of X is [MASK].          |
//! | is/are/was/were/can/... S P     | S is/are/... P.                    |
//! | do/does/did S V ...             | S V ... (verb is not re-inflected) |
//! | any X ...                       | some X ...                         |
//!
//! Anything else is reported as [`Q2sError::UnsupportedQuestion`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Q2sError {
    #[error("empty question")]
    EmptyQuestion,
    #[error("unsupported question: {0:?}")]
    UnsupportedQuestion(String),
    #[error("no answer candidates")]
    EmptyCandidates,
    #[error("statement route {route:?} cannot score {given}")]
    RouteMismatch { route: Route, given: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    OpenEnded,
    ClosedEnded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Route {
    Mlm,
    Itm,
}

const WH_WORDS: &[&str] = &["what", "which", "who", "whom", "whose", "where", "when", "why", "how"];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "do", "does", "did", "any", "can", "could", "has", "have",
];
const DO_SUPPORT: &[&str] = &["do", "does", "did"];

/// A lowercased, whitespace-collapsed question with terminal punctuation
/// removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    text: String,
    tokens: Vec<String>,
}

impl Question {
    pub fn parse(raw: &str) -> Result<Self, Q2sError> {
        let lowered = raw.trim().to_lowercase();
        let trimmed = lowered.trim_end_matches(|c: char| c == '?' || c == '.' || c == '!' || c.is_whitespace());
        let tokens: Vec<String> = trimmed.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Q2sError::EmptyQuestion);
        }
        Ok(Self { text: tokens.join(" "), tokens })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Leading pattern: `"how many"`, `"what color"`, or the first token.
    pub fn type_tag(&self) -> String {
        match self.tokens.as_slice() {
            [a, b, ..] if a == "how" && b == "many" => "how many".into(),
            [a, b, ..] if a == "what" && b == "color" => "what color".into(),
            [a, ..] => a.clone(),
            [] => unreachable!("parse rejects empty questions"),
        }
    }

    fn unsupported(&self) -> Q2sError {
        Q2sError::UnsupportedQuestion(self.text.clone())
    }
}

/// Open iff the question starts with a wh-word, closed iff it starts with a
/// supported auxiliary.
pub fn classify(question: &Question) -> Result<QuestionType, Q2sError> {
    let first = question.tokens[0].as_str();
    if WH_WORDS.contains(&first) {
        Ok(QuestionType::OpenEnded)
    } else if AUXILIARIES.contains(&first) {
        Ok(QuestionType::ClosedEnded)
    } else {
        Err(question.unsupported())
    }
}

/// How a match score maps to an answer on the ITM route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polarity {
    pub high: String,
    pub low: String,
}

impl Default for Polarity {
    fn default() -> Self {
        Self { high: "yes".into(), low: "no".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub route: Route,
    /// Whitespace-token index of the mask placeholder (MLM only).
    pub mask_index: Option<usize>,
    /// Answer mapping for the match score (ITM only).
    pub polarity: Option<Polarity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Q2sConfig {
    pub mask_token: String,
    /// Match scores at or above this value answer with the high polarity.
    pub itm_threshold: f64,
}

impl Default for Q2sConfig {
    fn default() -> Self {
        Self { mask_token: "[MASK]".into(), itm_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Converter {
    config: Q2sConfig,
}

impl Converter {
    pub fn new(config: Q2sConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &Q2sConfig {
        &self.config
    }

    pub fn convert(&self, raw: &str) -> Result<(Question, QuestionType, Statement), Q2sError> {
        let q = Question::parse(raw)?;
        let kind = classify(&q)?;
        let s = self.to_statement(&q)?;
        Ok((q, kind, s))
    }

    pub fn to_statement(&self, q: &Question) -> Result<Statement, Q2sError> {
        let t: Vec<&str> = q.tokens.iter().map(String::as_str).collect();
        match classify(q)? {
            QuestionType::OpenEnded => self.open_statement(q, &t),
            QuestionType::ClosedEnded => closed_statement(q, &t),
        }
    }

    fn open_statement(&self, q: &Question, t: &[&str]) -> Result<Statement, Q2sError> {
        let mask = self.config.mask_token.as_str();
        let words: Vec<&str> = match t {
            ["how", "many", rest @ ..] => {
                // "how many X are there [rest]"
                let pos = rest
                    .windows(2)
                    .position(|w| (w[0] == "are" || w[0] == "is") && w[1] == "there")
                    .filter(|&p| p > 0)
                    .ok_or_else(|| q.unsupported())?;
                let mut out = vec!["there", rest[pos], mask];
                out.extend_from_slice(&rest[..pos]);
                out.extend_from_slice(&rest[pos + 2..]);
                out
            }
            ["what", "color", "is" | "are", subject @ ..] if !subject.is_empty() => {
                let mut out = vec!["the", "color", "of"];
                out.extend_from_slice(subject);
                out.extend_from_slice(&["is", mask]);
                out
            }
            _ => return Err(q.unsupported()),
        };
        let mask_index = words.iter().position(|w| *w == mask);
        Ok(Statement { text: sentence(&words), route: Route::Mlm, mask_index, polarity: None })
    }
}

fn closed_statement(q: &Question, t: &[&str]) -> Result<Statement, Q2sError> {
    let (aux, rest) = t.split_first().ok_or_else(|| q.unsupported())?;
    let words: Vec<&str> = if *aux == "any" {
        if rest.is_empty() {
            return Err(q.unsupported());
        }
        std::iter::once("some").chain(rest.iter().copied()).collect()
    } else if DO_SUPPORT.contains(aux) {
        if rest.len() < 2 {
            return Err(q.unsupported());
        }
        rest.to_vec()
    } else {
        let split = subject_len(rest).ok_or_else(|| q.unsupported())?;
        let mut out = rest[..split].to_vec();
        out.push(aux);
        out.extend_from_slice(&rest[split..]);
        out
    };
    Ok(Statement {
        text: sentence(&words),
        route: Route::Itm,
        mask_index: None,
        polarity: Some(Polarity::default()),
    })
}

fn sentence(words: &[&str]) -> String {
    format!("{}.", words.join(" "))
}

const PRONOUNS: &[&str] = &["it", "he", "she", "they", "there", "we", "you", "i"];
const DEMONSTRATIVES: &[&str] = &["this", "that", "these", "those"];
const ARTICLES: &[&str] = &["a", "an", "the"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "under", "near", "behind", "next", "with", "of", "to", "for", "from", "by",
    "over", "above", "below", "inside", "outside", "beside", "around", "into", "onto", "off",
];
const PREDICATE_WORDS: &[&str] = &[
    "not", "white", "black", "red", "blue", "green", "yellow", "brown", "orange", "pink", "purple",
    "gray", "grey", "silver", "gold", "open", "closed", "empty", "full", "big", "small", "large",
    "tall", "short", "old", "new", "young", "wet", "dry", "clean", "dirty", "happy", "sad", "real",
    "visible", "alive", "asleep", "awake", "ripe", "sunny", "cloudy", "dark", "bright", "hot",
    "cold", "safe", "able", "there", "here", "all", "both",
];

fn is_predicate_cue(token: &str) -> bool {
    (token.len() > 4 && token.ends_with("ing"))
        || (token.len() > 3 && token.ends_with("ed"))
        || ARTICLES.contains(&token)
        || PREPOSITIONS.contains(&token)
        || PREDICATE_WORDS.contains(&token)
        || token.chars().all(|c| c.is_ascii_digit())
}

// Number of leading tokens of `rest` that form the subject, leaving at least
// one token of predicate.
fn subject_len(rest: &[&str]) -> Option<usize> {
    if rest.len() < 2 {
        return None;
    }
    let head = rest[0];
    if PRONOUNS.contains(&head) {
        return Some(1);
    }
    if DEMONSTRATIVES.contains(&head) && is_predicate_cue(rest[1]) {
        return Some(1);
    }
    // The token right after the head always belongs to the subject when the
    // head is a determiner; a bare noun subject starts scanning at 1.
    let start = if ARTICLES.contains(&head)
        || DEMONSTRATIVES.contains(&head)
        || ["his", "her", "its", "their", "my", "your", "our"].contains(&head)
    {
        2
    } else {
        1
    };
    let cue = (start..rest.len()).find(|&j| is_predicate_cue(rest[j]));
    Some(cue.unwrap_or(rest.len() - 1).min(rest.len() - 1).max(1))
}

/// Scores produced by the pretrained model for a statement.
#[derive(Debug, Clone, Copy)]
pub enum RouteScores<'a> {
    /// Match score in [0, 1].
    Itm(f64),
    /// Candidate answers with their probabilities at the mask.
    Mlm(&'a [(String, f64)]),
}

/// ITM: high polarity iff `score >= threshold`. MLM: most probable candidate,
/// ties broken by the earliest candidate.
pub fn route_answer(statement: &Statement, scores: RouteScores<'_>, threshold: f64) -> Result<String, Q2sError> {
    match (statement.route, scores) {
        (Route::Itm, RouteScores::Itm(score)) => {
            let pol = statement.polarity.clone().unwrap_or_default();
            Ok(if score >= threshold { pol.high } else { pol.low })
        }
        (Route::Mlm, RouteScores::Mlm(candidates)) => {
            let mut best: Option<&(String, f64)> = None;
            for c in candidates {
                if best.is_none_or(|b| c.1 > b.1) {
                    best = Some(c);
                }
            }
            best.map(|b| b.0.clone()).ok_or(Q2sError::EmptyCandidates)
        }
        (route, RouteScores::Itm(_)) => Err(Q2sError::RouteMismatch { route, given: "a match score" }),
        (route, RouteScores::Mlm(_)) => Err(Q2sError::RouteMismatch { route, given: "candidate probabilities" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convert(q: &str) -> Statement {
        Converter::default().convert(q).unwrap().2
    }

    #[test]
    fn classification_examples() {
        let c = |q: &str| classify(&Question::parse(q).unwrap());
        assert_eq!(c("what color is the shirt?"), Ok(QuestionType::OpenEnded));
        assert_eq!(c("is the zebra sleeping?"), Ok(QuestionType::ClosedEnded));
        assert_eq!(c("any brown apples in the picture?"), Ok(QuestionType::ClosedEnded));
        assert!(matches!(c("tell me the color"), Err(Q2sError::UnsupportedQuestion(_))));
        assert_eq!(Question::parse("  ?? "), Err(Q2sError::EmptyQuestion));
    }

    #[test]
    fn rewriting_families() {
        assert_eq!(convert("how many dogs are there in the yard?").text, "there are [MASK] dogs in the yard.");
        assert_eq!(convert("how many cars is there").text, "there is [MASK] cars.");
        assert_eq!(convert("what color are the shoes?").text, "the color of the shoes is [MASK].");
        assert_eq!(convert("is there a dog?").text, "there is a dog.");
        assert_eq!(convert("is this a kitchen?").text, "this is a kitchen.");
        assert_eq!(convert("are these bananas ripe?").text, "these bananas are ripe.");
        assert_eq!(convert("is the man wearing a hat?").text, "the man is wearing a hat.");
        assert_eq!(convert("is the tennis player jumping?").text, "the tennis player is jumping.");
        assert_eq!(convert("can the dog swim?").text, "the dog can swim.");
        assert_eq!(convert("is it raining?").text, "it is raining.");
        assert_eq!(convert("did the man fall?").text, "the man fall.");
    }

    #[test]
    fn unsupported_patterns() {
        let conv = Converter::default();
        for q in ["why is the sky blue?", "how old is the man?", "what is on the table?", "is?", "does it?", "hello there", "how many are there"] {
            assert!(matches!(conv.convert(q), Err(Q2sError::UnsupportedQuestion(_))), "{q}");
        }
    }

    #[test]
    fn custom_mask_token() {
        let conv = Converter::new(Q2sConfig { mask_token: "<mask>".into(), itm_threshold: 0.5 });
        let s = conv.convert("how many hats are there?").unwrap().2;
        assert_eq!(s.text, "there are <mask> hats.");
        assert_eq!(s.mask_index, Some(2));
    }

    #[test]
    fn normalization_idempotent() {
        let q = Question::parse("  Is   the Zebra sleeping ? ").unwrap();
        assert_eq!(q.text(), "is the zebra sleeping");
        assert_eq!(Question::parse(q.text()).unwrap(), q);
        assert_eq!(q.type_tag(), "is");
    }

    #[test]
    fn routing() {
        let itm = convert("is the zebra sleeping?");
        assert_eq!(route_answer(&itm, RouteScores::Itm(0.9), 0.5).unwrap(), "yes");
        assert_eq!(route_answer(&itm, RouteScores::Itm(0.1), 0.5).unwrap(), "no");
        assert_eq!(route_answer(&itm, RouteScores::Itm(0.5), 0.5).unwrap(), "yes");

        let mlm = convert("what color is the cake?");
        let c = vec![("yellow".to_string(), 0.7), ("green".to_string(), 0.3)];
        assert_eq!(route_answer(&mlm, RouteScores::Mlm(&c), 0.5).unwrap(), "yellow");
        let tie = vec![("red".to_string(), 0.25), ("blue".to_string(), 0.25), ("white".to_string(), 0.25), ("black".to_string(), 0.25)];
        assert_eq!(route_answer(&mlm, RouteScores::Mlm(&tie), 0.5).unwrap(), "red");
        assert_eq!(route_answer(&mlm, RouteScores::Mlm(&[]), 0.5), Err(Q2sError::EmptyCandidates));
        assert!(route_answer(&mlm, RouteScores::Itm(0.3), 0.5).is_err());
    }
}
