//! Parsers for the machine-readable markers the templates ask the model for.

use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::store::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClarifyReply {
    Ask(String),
    Clear(String),
}

fn strip_marker<'a>(line: &'a str, marker: &str) -> Option<&'a str> {
    let head = line.get(..marker.len())?;
    head.eq_ignore_ascii_case(marker).then(|| line[marker.len()..].trim())
}

/// `ASK: ...` or `CLEAR: ...` on the first non-empty line. Anything else,
/// including an empty `CLEAR:`, is taken as a follow-up question.
pub fn parse_clarify(reply: &str) -> ClarifyReply {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    if let Some(q) = strip_marker(line, "CLEAR:").filter(|q| !q.is_empty()) {
        return ClarifyReply::Clear(q.to_owned());
    }
    if let Some(q) = strip_marker(line, "ASK:").filter(|q| !q.is_empty()) {
        return ClarifyReply::Ask(q.to_owned());
    }
    ClarifyReply::Ask(reply.trim().to_owned())
}

/// Best-guess question from the finalize template; a missing marker still
/// yields the raw reply.
pub fn parse_finalize(reply: &str) -> Result<String> {
    let q = match parse_clarify(reply) {
        ClarifyReply::Clear(q) => q,
        ClarifyReply::Ask(raw) => strip_marker(&raw, "ASK:").map(str::to_owned).unwrap_or(raw),
    };
    if q.is_empty() {
        return Err(Error::ParseFailure("finalize reply is empty".into()));
    }
    Ok(q)
}

static NUM: &str = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)";

static BBOX_RE: LazyLock<Regex> = LazyLock::new(|| {
    let sep = r"\s*[,;\s]\s*";
    Regex::new(&format!(r"(?i)BBOX\s*:\s*[\[(]?\s*{NUM}{sep}{NUM}{sep}{NUM}{sep}{NUM}")).unwrap()
});

/// Parse a `BBOX: x0,y0,x1,y1` quadruple, clamp it into [0, 1] and validate.
pub fn parse_bbox(text: &str, min_area: f64) -> Result<BoundingBox> {
    let caps = BBOX_RE
        .captures(text)
        .ok_or_else(|| Error::ParseFailure(format!("no BBOX quadruple in `{}`", text.trim())))?;
    let v: Vec<f64> = (1..=4)
        .map(|i| caps[i].parse::<f64>().map_err(|e| Error::ParseFailure(e.to_string())))
        .collect::<Result<_>>()?;
    BoundingBox::clamped(v[0], v[1], v[2], v[3], min_area).map_err(|e| Error::ParseFailure(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedbackKind {
    Confirm,
    Correct(String),
    Unknown,
}

pub fn parse_feedback(reply: &str) -> FeedbackKind {
    let line = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    if let Some(answer) = strip_marker(line, "CORRECT:") {
        return if answer.is_empty() {
            FeedbackKind::Unknown
        } else {
            FeedbackKind::Correct(answer.to_owned())
        };
    }
    let word = line.trim_end_matches(['.', '!']);
    if word.eq_ignore_ascii_case("CONFIRM") {
        FeedbackKind::Confirm
    } else {
        FeedbackKind::Unknown
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillFields {
    pub question: String,
    pub bbox: BoundingBox,
    pub answer: String,
}

static DISTILL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)Q\s*:\s*(?P<q>.*?)\s*(?:\||\n)\s*(?P<bbox>BBOX\s*:[^|\n]*?)\s*(?:\||\n)\s*A\s*:\s*(?P<a>.*?)\s*$")
        .unwrap()
});

/// Parse `Q: ... | BBOX: x0,y0,x1,y1 | A: ...` (fields may also sit on
/// separate lines).
pub fn parse_distill(reply: &str, min_area: f64) -> Result<DistillFields> {
    let caps = DISTILL_RE
        .captures(reply.trim())
        .ok_or_else(|| Error::ParseFailure(format!("distill reply not in Q|BBOX|A form: `{}`", reply.trim())))?;
    let question = caps["q"].trim().to_owned();
    let answer = caps["a"].trim().to_owned();
    if question.is_empty() || answer.is_empty() {
        return Err(Error::ParseFailure("distilled question or answer is empty".into()));
    }
    let bbox = parse_bbox(&caps["bbox"], min_area)?;
    Ok(DistillFields { question, bbox, answer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::DEFAULT_MIN_BBOX_AREA as MIN;

    #[test]
    fn clarify_markers() {
        assert_eq!(
            parse_clarify("ASK: Could you point to the object you mean?"),
            ClarifyReply::Ask("Could you point to the object you mean?".into())
        );
        assert_eq!(
            parse_clarify("\n  clear: What is the name of the medicine bottle?\n"),
            ClarifyReply::Clear("What is the name of the medicine bottle?".into())
        );
        assert_eq!(parse_clarify("Which bottle?"), ClarifyReply::Ask("Which bottle?".into()));
        assert_eq!(parse_clarify("CLEAR:"), ClarifyReply::Ask("CLEAR:".into()));
    }

    #[test]
    fn finalize_accepts_raw_text() {
        assert_eq!(parse_finalize("CLEAR: What color is it?").unwrap(), "What color is it?");
        assert_eq!(parse_finalize("What color is it?").unwrap(), "What color is it?");
        assert_eq!(parse_finalize("ASK: What color is it?").unwrap(), "What color is it?");
    }

    #[test]
    fn bbox_parsing() {
        let b = parse_bbox("BBOX: 0.32,0.18,0.61,0.74", MIN).unwrap();
        assert_eq!(b, BoundingBox { x0: 0.32, y0: 0.18, x1: 0.61, y1: 0.74 });
        let b = parse_bbox("The box is bbox: [ -0.02, 0.1, 0.5, 1.01 ]", MIN).unwrap();
        assert_eq!(b, BoundingBox { x0: 0.0, y0: 0.1, x1: 0.5, y1: 1.0 });
        assert!(parse_bbox("BBOX: 0.5,0.5,0.5,0.9", MIN).is_err());
        assert!(parse_bbox("somewhere in the middle", MIN).is_err());
    }

    #[test]
    fn feedback_kinds() {
        assert_eq!(parse_feedback("CONFIRM"), FeedbackKind::Confirm);
        assert_eq!(parse_feedback("confirm."), FeedbackKind::Confirm);
        assert_eq!(parse_feedback("CORRECT: Vitamin B6"), FeedbackKind::Correct("Vitamin B6".into()));
        assert_eq!(parse_feedback("CORRECT:"), FeedbackKind::Unknown);
        assert_eq!(parse_feedback("UNKNOWN"), FeedbackKind::Unknown);
        assert_eq!(parse_feedback("maybe?"), FeedbackKind::Unknown);
    }

    #[test]
    fn distill_line() {
        let f = parse_distill(
            "Q: What is the name of this medicine bottle? | BBOX: 0.32,0.18,0.61,0.74 | A: Vitamin B1 (Thiamine)",
            MIN,
        )
        .unwrap();
        assert_eq!(f.question, "What is the name of this medicine bottle?");
        assert_eq!(f.bbox, BoundingBox { x0: 0.32, y0: 0.18, x1: 0.61, y1: 0.74 });
        assert_eq!(f.answer, "Vitamin B1 (Thiamine)");
    }

    #[test]
    fn distill_multiline_and_failures() {
        let f = parse_distill("Q: What color is it?\nBBOX: 0,0,1,1\nA: white", MIN).unwrap();
        assert_eq!(f.answer, "white");
        assert!(parse_distill("Q: x | BBOX: 0.5,0.5,0.5,0.9 | A: y", MIN).is_err());
        assert!(parse_distill("just some text", MIN).is_err());
        assert!(parse_distill("Q:  | BBOX: 0,0,1,1 | A: y", MIN).is_err());
    }
}
