//! Text baseline: external OCR word boxes, pattern rules over short word
//! windows, and per-line merging into field-level detections.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Detection;
use crate::model::{BBox, SampleId};

/// Longest word window a rule is tried on.
pub const MAX_WINDOW: usize = 6;
pub const TEXT_CLASS: &str = "text";

/// Instructions sent to an external classifier along with the page words.
pub const CLASSIFIER_PROMPT: &str = "\
You label text read from a screenshot of an online store page.
Return every span that is a concrete value rather than interface wording:
personal names, street addresses, cities, states, postal codes, emails,
phone numbers, dates, card numbers, security codes, expiry dates, product
titles, brands, prices, quantities, ratings, order totals, shipping costs,
tracking or order numbers, search terms and gift notes.
Leave out labels such as \"Price:\", \"Quantity:\" or \"Add to cart\".
If unsure, include the span.
Reply with JSON only: {\"pii_items\": [{\"text\": \"<exact span>\"}]}";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("classifier: {0}")]
    Classifier(String),
}

/// One OCR word. Wire form: `{"sample_id", "text", "x", "y", "w", "h", "confidence"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    #[serde(with = "sample_id_text")]
    pub sample_id: SampleId,
    pub text: String,
    #[serde(flatten)]
    pub bbox: BBox,
    pub confidence: f64,
}

mod sample_id_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::SampleId;

    pub fn serialize<S: Serializer>(id: &SampleId, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(id)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SampleId, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

pub fn parse_ocr(text: &str) -> Result<Vec<OcrWord>, BaselineError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let word: OcrWord = serde_json::from_str(line).map_err(|e| BaselineError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if word.text.trim().is_empty() {
            return Err(BaselineError::Parse {
                line: i + 1,
                message: "empty word text".into(),
            });
        }
        out.push(word);
    }
    Ok(out)
}

pub fn write_ocr(words: &[OcrWord]) -> String {
    words
        .iter()
        .map(|w| serde_json::to_string(w).expect("ocr words always serialize") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Email,
    Phone,
    CardLuhn,
    Zip,
    Date,
    Money,
    NameGazetteer,
    /// Spans returned by an external classifier.
    Classifier,
}

impl Rule {
    pub const PATTERNS: [Rule; 7] = [
        Rule::Email,
        Rule::Phone,
        Rule::CardLuhn,
        Rule::Zip,
        Rule::Date,
        Rule::Money,
        Rule::NameGazetteer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Email => "email",
            Rule::Phone => "phone",
            Rule::CardLuhn => "card_luhn",
            Rule::Zip => "zip",
            Rule::Date => "date",
            Rule::Money => "money",
            Rule::NameGazetteer => "name_gazetteer",
            Rule::Classifier => "classifier",
        }
    }

    /// Whether the rule accepts a window of words.
    pub fn matches(self, window: &[&str]) -> bool {
        let text = window
            .iter()
            .map(|w| trim_punct(w))
            .collect::<Vec<_>>()
            .join(" ");
        match self {
            Rule::Email => window.len() == 1 && re(&EMAIL, r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}$").is_match(&text),
            Rule::Phone => re(
                &PHONE,
                r"^(\+?1[ .-]?)?(\(\d{3}\)|\d{3})[ .-]?\d{3}[ .-]?\d{4}$",
            )
            .is_match(&text),
            Rule::CardLuhn => {
                text.chars().all(|c| c.is_ascii_digit() || c == ' ' || c == '-') && {
                    let digits: String = text.chars().filter(char::is_ascii_digit).collect();
                    (13..=19).contains(&digits.len()) && luhn_valid(&digits)
                }
            }
            Rule::Zip => re(
                &ZIP,
                r"^(([A-Z][A-Za-z.'-]*)( [A-Z][A-Za-z.'-]*)?,? [A-Z]{2},? )?\d{5}(-\d{4})?$",
            )
            .is_match(&text),
            Rule::Date => re(
                &DATE,
                r"(?i)^(\d{1,2}/\d{1,2}/\d{2,4}|\d{4}-\d{2}-\d{2}|(0[1-9]|1[0-2])/\d{2}|(jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.? \d{1,2},? \d{4}|\d{1,2} (jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.? \d{4})$",
            )
            .is_match(&text),
            Rule::Money => window.len() <= 2
                && re(&MONEY, r"^(US)?[$€£] ?\d{1,3}(,?\d{3})*(\.\d{2})?$").is_match(&text),
            Rule::NameGazetteer => {
                window.len() == 2
                    && window.iter().all(|w| {
                        let w = trim_punct(w);
                        w.chars().next().is_some_and(char::is_uppercase) && gazetteer().contains(&w.to_lowercase())
                    })
            }
            Rule::Classifier => false,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::PATTERNS
            .into_iter()
            .chain([Rule::Classifier])
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}`"))
    }
}

static EMAIL: OnceLock<Regex> = OnceLock::new();
static PHONE: OnceLock<Regex> = OnceLock::new();
static ZIP: OnceLock<Regex> = OnceLock::new();
static DATE: OnceLock<Regex> = OnceLock::new();
static MONEY: OnceLock<Regex> = OnceLock::new();

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("rule patterns compile"))
}

fn trim_punct(word: &str) -> &str {
    word.trim_matches(|c: char| {
        matches!(
            c,
            ',' | ';' | ':' | '(' | ')' | '[' | ']' | '"' | '\'' | '!' | '?'
        )
    })
}

/// Luhn checksum over an ASCII digit string.
pub fn luhn_valid(digits: &str) -> bool {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let sum: u32 = digits
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = (b - b'0') as u32;
            if i % 2 == 1 {
                let dd = d * 2;
                if dd > 9 {
                    dd - 9
                } else {
                    dd
                }
            } else {
                d
            }
        })
        .sum();
    sum.is_multiple_of(10)
}

const GAZETTEER_FIRST: &[&str] = &[
    "james",
    "mary",
    "john",
    "patricia",
    "robert",
    "jennifer",
    "michael",
    "linda",
    "william",
    "elizabeth",
    "david",
    "barbara",
    "richard",
    "susan",
    "joseph",
    "jessica",
    "thomas",
    "sarah",
    "charles",
    "karen",
    "christopher",
    "nancy",
    "daniel",
    "lisa",
    "matthew",
    "betty",
    "anthony",
    "margaret",
    "mark",
    "sandra",
    "donald",
    "ashley",
    "steven",
    "kimberly",
    "paul",
    "emily",
    "andrew",
    "donna",
    "joshua",
    "michelle",
    "kenneth",
    "dorothy",
    "kevin",
    "carol",
    "brian",
    "amanda",
    "george",
    "melissa",
    "edward",
    "deborah",
    "ronald",
    "stephanie",
    "timothy",
    "rebecca",
    "jason",
    "sharon",
    "jeffrey",
    "laura",
    "ryan",
    "cynthia",
    "jacob",
    "kathleen",
    "gary",
    "amy",
    "nicholas",
    "shirley",
    "eric",
    "angela",
    "jonathan",
    "helen",
    "stephen",
    "anna",
    "larry",
    "brenda",
    "justin",
    "pamela",
    "scott",
    "nicole",
    "brandon",
    "emma",
    "benjamin",
    "samantha",
    "samuel",
    "katherine",
    "gregory",
    "christine",
    "frank",
    "debra",
    "alexander",
    "rachel",
    "raymond",
    "catherine",
    "patrick",
    "carolyn",
    "jack",
    "janet",
    "dennis",
    "ruth",
    "jerry",
    "maria",
    "tyler",
    "heather",
    "aaron",
    "diane",
    "jose",
    "virginia",
    "adam",
    "julie",
    "henry",
    "joyce",
    "nathan",
    "victoria",
    "douglas",
    "olivia",
    "zachary",
    "kelly",
    "peter",
    "christina",
    "kyle",
    "lauren",
    "walter",
    "joan",
    "ethan",
    "evelyn",
    "jeremy",
    "judith",
    "harold",
    "megan",
    "keith",
    "cheryl",
    "christian",
    "andrea",
    "roger",
    "hannah",
    "noah",
    "martha",
    "gerald",
    "jacqueline",
    "carl",
    "frances",
    "terry",
    "gloria",
    "sean",
    "ann",
    "austin",
    "teresa",
    "arthur",
    "kathryn",
    "lawrence",
    "sara",
    "jesse",
    "janice",
    "dylan",
    "jean",
    "bryan",
    "alice",
    "joe",
    "madison",
    "jordan",
    "doris",
    "billy",
    "abigail",
    "bruce",
    "julia",
    "albert",
    "judy",
    "willie",
    "grace",
    "gabriel",
    "denise",
    "logan",
    "amber",
    "alan",
    "marilyn",
    "juan",
    "beverly",
    "wayne",
    "danielle",
    "roy",
    "theresa",
    "ralph",
    "sophia",
    "randy",
    "marie",
    "eugene",
    "diana",
    "vincent",
    "brittany",
    "russell",
    "natalie",
    "elijah",
    "isabella",
    "louis",
    "charlotte",
    "bobby",
    "rose",
    "philip",
    "alexis",
    "johnny",
    "kayla",
    "marc",
    "lucas",
    "chloe",
    "owen",
    "claire",
    "ivan",
    "priya",
];

const GAZETTEER_LAST: &[&str] = &[
    "smith",
    "johnson",
    "williams",
    "brown",
    "jones",
    "garcia",
    "miller",
    "davis",
    "rodriguez",
    "martinez",
    "hernandez",
    "lopez",
    "gonzalez",
    "wilson",
    "anderson",
    "thomas",
    "taylor",
    "moore",
    "jackson",
    "martin",
    "lee",
    "perez",
    "thompson",
    "white",
    "harris",
    "sanchez",
    "clark",
    "ramirez",
    "lewis",
    "robinson",
    "walker",
    "young",
    "allen",
    "king",
    "wright",
    "scott",
    "torres",
    "nguyen",
    "hill",
    "flores",
    "green",
    "adams",
    "nelson",
    "baker",
    "hall",
    "rivera",
    "campbell",
    "mitchell",
    "carter",
    "roberts",
    "gomez",
    "phillips",
    "evans",
    "turner",
    "diaz",
    "parker",
    "cruz",
    "edwards",
    "collins",
    "reyes",
    "stewart",
    "morris",
    "morales",
    "murphy",
    "cook",
    "rogers",
    "gutierrez",
    "ortiz",
    "morgan",
    "cooper",
    "peterson",
    "bailey",
    "reed",
    "kelly",
    "howard",
    "ramos",
    "kim",
    "cox",
    "ward",
    "richardson",
    "watson",
    "brooks",
    "chavez",
    "wood",
    "james",
    "bennett",
    "gray",
    "mendoza",
    "ruiz",
    "hughes",
    "price",
    "alvarez",
    "castillo",
    "sanders",
    "patel",
    "myers",
    "long",
    "ross",
    "foster",
    "jimenez",
    "powell",
    "jenkins",
    "perry",
    "russell",
    "sullivan",
    "bell",
    "coleman",
    "butler",
    "henderson",
    "barnes",
    "gonzales",
    "fisher",
    "vasquez",
    "simmons",
    "romero",
    "jordan",
    "patterson",
    "alexander",
    "hamilton",
    "graham",
    "reynolds",
    "griffin",
    "wallace",
    "moreno",
    "west",
    "cole",
    "hayes",
    "bryant",
    "herrera",
    "gibson",
    "ellis",
    "tran",
    "medina",
    "aguilar",
    "stevens",
    "murray",
    "ford",
    "castro",
    "marshall",
    "owens",
    "harrison",
    "fernandez",
    "mcdonald",
    "woods",
    "washington",
    "kennedy",
    "wells",
    "vargas",
    "henry",
    "chen",
    "freeman",
    "webb",
    "tucker",
    "guzman",
    "burns",
    "crawford",
    "olson",
    "simpson",
    "porter",
    "hunter",
    "gordon",
    "mendez",
    "silva",
    "shaw",
    "snyder",
    "mason",
    "dixon",
    "munoz",
    "hunt",
    "hicks",
    "holmes",
    "palmer",
    "wagner",
    "black",
    "robertson",
    "boyd",
    "rose",
    "stone",
    "salazar",
    "fox",
    "warren",
    "mills",
    "meyer",
    "rice",
    "schmidt",
    "garza",
    "daniels",
    "ferguson",
    "nichols",
    "stephens",
    "soto",
    "weaver",
    "ryan",
    "gardner",
    "payne",
    "grant",
    "dunn",
    "kelley",
    "spencer",
    "hawkins",
    "arnold",
    "pierce",
];

/// Lowercased first and last names.
pub fn gazetteer() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        GAZETTEER_FIRST
            .iter()
            .chain(GAZETTEER_LAST)
            .map(|s| s.to_string())
            .collect()
    })
}

/// A flagged run of words `start..=end` (indices into reading order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub rule: Rule,
}

/// Word indices grouped into lines, each line sorted by x, lines by y.
pub fn reading_order(boxes: &[BBox]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by_key(|&i| (boxes[i].y, boxes[i].x, i));
    let mut lines: Vec<(u64, u64, Vec<usize>)> = Vec::new();
    for i in order {
        let b = boxes[i];
        let joined = lines.iter_mut().rev().find(|(top, bottom, members)| {
            let first = boxes[members[0]];
            let overlap = (*bottom)
                .min(b.bottom())
                .saturating_sub((*top).max(b.y as u64));
            overlap as f64 >= 0.5 * first.h.min(b.h) as f64
        });
        match joined {
            Some((top, bottom, members)) => {
                *top = (*top).min(b.y as u64);
                *bottom = (*bottom).max(b.bottom());
                members.push(i);
            }
            None => lines.push((b.y as u64, b.bottom(), vec![i])),
        }
    }
    let mut lines: Vec<Vec<usize>> = lines.into_iter().map(|(_, _, m)| m).collect();
    for line in lines.iter_mut() {
        line.sort_by_key(|&i| (boxes[i].x, i));
    }
    lines
}

/// Applies `rules` to every window of up to [`MAX_WINDOW`] consecutive words
/// and merges overlapping flags of the same rule.
pub fn classify_spans(words: &[&str], rules: &[Rule]) -> Vec<Span> {
    let mut spans = Vec::new();
    for &rule in rules {
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for start in 0..words.len() {
            for len in 1..=MAX_WINDOW.min(words.len() - start) {
                if rule.matches(&words[start..start + len]) {
                    hits.push((start, start + len - 1));
                }
            }
        }
        spans.extend(
            merge_ranges(hits)
                .into_iter()
                .map(|(start, end)| Span { start, end, rule }),
        );
    }
    spans.sort();
    spans
}

fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (s, e) in ranges {
        match out.last_mut() {
            Some((_, last_e)) if s <= *last_e => *last_e = (*last_e).max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// One detection per line the span touches: union of its words there,
/// confidence the minimum member confidence.
pub fn merge_spans_to_boxes(span: &Span, words: &[OcrWord], line_of: &[usize]) -> Vec<Detection> {
    let mut per_line: BTreeMap<usize, (BBox, f64)> = BTreeMap::new();
    for i in span.start..=span.end {
        let w = &words[i];
        per_line
            .entry(line_of[i])
            .and_modify(|(b, c)| {
                *b = union(*b, w.bbox);
                *c = c.min(w.confidence);
            })
            .or_insert((w.bbox, w.confidence));
    }
    per_line
        .into_values()
        .map(|(bbox, confidence)| Detection {
            sample_id: words[span.start].sample_id.clone(),
            class: TEXT_CLASS.to_string(),
            bbox,
            confidence,
        })
        .collect()
}

pub fn union(a: BBox, b: BBox) -> BBox {
    let x = a.x.min(b.x);
    let y = a.y.min(b.y);
    let r = a.right().max(b.right());
    let bt = a.bottom().max(b.bottom());
    BBox::new(x, y, (r - x as u64) as u32, (bt - y as u64) as u32)
}

/// A user-supplied command standing in for a language-model classifier.
///
/// The command reads `{"prompt", "words", "text"}` on stdin and prints
/// `{"pii_items": [{"text": ...}]}`; each returned text is located as an
/// exact run of consecutive words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalClassifier {
    pub argv: Vec<String>,
}

#[derive(Deserialize)]
struct ClassifierReply {
    pii_items: Vec<ClassifierItem>,
}

#[derive(Deserialize)]
struct ClassifierItem {
    text: String,
}

impl ExternalClassifier {
    pub fn new(argv: Vec<String>) -> Self {
        ExternalClassifier { argv }
    }

    /// Flagged exact texts for one page of words in reading order.
    pub fn classify(&self, words: &[&str]) -> Result<Vec<String>, BaselineError> {
        let (program, args) = self
            .argv
            .split_first()
            .ok_or_else(|| BaselineError::Classifier("empty command".into()))?;
        let request = serde_json::json!({
            "prompt": CLASSIFIER_PROMPT,
            "words": words,
            "text": words.join(" "),
        });
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BaselineError::Classifier(format!("{program}: {e}")))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(request.to_string().as_bytes())
            .map_err(|e| BaselineError::Classifier(e.to_string()))?;
        let out = child
            .wait_with_output()
            .map_err(|e| BaselineError::Classifier(e.to_string()))?;
        if !out.status.success() {
            return Err(BaselineError::Classifier(format!(
                "{program} exited with {}",
                out.status
            )));
        }
        let reply: ClassifierReply = serde_json::from_slice(&out.stdout)
            .map_err(|e| BaselineError::Classifier(format!("bad reply: {e}")))?;
        Ok(reply.pii_items.into_iter().map(|i| i.text).collect())
    }

    /// Spans covering each occurrence of each flagged text.
    pub fn spans(&self, words: &[&str]) -> Result<Vec<Span>, BaselineError> {
        let mut hits = Vec::new();
        for flagged in self.classify(words)? {
            let target: Vec<&str> = flagged.split_whitespace().collect();
            if target.is_empty() || target.len() > words.len() {
                continue;
            }
            for start in 0..=words.len() - target.len() {
                if words[start..start + target.len()] == target[..] {
                    hits.push((start, start + target.len() - 1));
                }
            }
        }
        Ok(merge_ranges(hits)
            .into_iter()
            .map(|(start, end)| Span {
                start,
                end,
                rule: Rule::Classifier,
            })
            .collect())
    }
}

/// Detections for every sample in an OCR dump, ordered by sample then position.
pub fn run_baseline(
    ocr: &str,
    rules: &[Rule],
    classifier: Option<&ExternalClassifier>,
) -> Result<Vec<Detection>, BaselineError> {
    let words = parse_ocr(ocr)?;
    let mut by_sample: BTreeMap<SampleId, Vec<OcrWord>> = BTreeMap::new();
    for w in words {
        by_sample.entry(w.sample_id.clone()).or_default().push(w);
    }
    let mut detections = Vec::new();
    for (_, page) in by_sample {
        let boxes: Vec<BBox> = page.iter().map(|w| w.bbox).collect();
        let lines = reading_order(&boxes);
        let mut ordered = Vec::with_capacity(page.len());
        let mut line_of = Vec::with_capacity(page.len());
        for (li, line) in lines.iter().enumerate() {
            for &i in line {
                ordered.push(page[i].clone());
                line_of.push(li);
            }
        }
        let texts: Vec<&str> = ordered.iter().map(|w| w.text.as_str()).collect();
        let mut spans = classify_spans(&texts, rules);
        if let Some(c) = classifier {
            spans.extend(c.spans(&texts)?);
        }
        let mut page_dets: Vec<Detection> = spans
            .iter()
            .flat_map(|s| merge_spans_to_boxes(s, &ordered, &line_of))
            .collect();
        page_dets.sort_by(|a, b| {
            (a.bbox.y, a.bbox.x, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, b.bbox.w, b.bbox.h))
        });
        page_dets.dedup_by(|a, b| a.bbox == b.bbox);
        detections.extend(page_dets);
    }
    Ok(detections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FillTag;

    fn flags(words: &[&str]) -> Vec<Span> {
        classify_spans(words, &Rule::PATTERNS)
    }

    #[test]
    fn email_span() {
        let s = flags(&["Contact:", "marc.arnold@example.com"]);
        assert_eq!(
            s,
            vec![Span {
                start: 1,
                end: 1,
                rule: Rule::Email
            }]
        );
    }

    #[test]
    fn card_span() {
        let s = flags(&["4539", "1488", "0343", "6467"]);
        assert!(s.contains(&Span {
            start: 0,
            end: 3,
            rule: Rule::CardLuhn
        }));
        assert!(!flags(&["4539", "1488", "0343", "6468"])
            .iter()
            .any(|s| s.rule == Rule::CardLuhn));
    }

    #[test]
    fn ui_labels_stay_clean() {
        assert!(flags(&["Add", "to", "cart"]).is_empty());
        assert!(flags(&["Price:"]).is_empty());
        assert!(flags(&["Quantity:", "Proceed", "to", "checkout"]).is_empty());
    }

    #[test]
    fn other_rules() {
        assert_eq!(flags(&["(505)", "555-0143"])[0].rule, Rule::Phone);
        assert_eq!(
            flags(&["Albuquerque,", "NM", "87101"])[0],
            Span {
                start: 0,
                end: 2,
                rule: Rule::Zip
            }
        );
        assert_eq!(flags(&["October", "17,", "2025"])[0].rule, Rule::Date);
        assert_eq!(flags(&["$1,234.50"])[0].rule, Rule::Money);
        assert_eq!(
            flags(&["Ship", "to", "Mary", "Smith"]),
            vec![Span {
                start: 2,
                end: 3,
                rule: Rule::NameGazetteer
            }]
        );
        assert!(flags(&["Mary"]).is_empty());
    }

    fn word(text: &str, x: u32, y: u32, w: u32) -> OcrWord {
        OcrWord {
            sample_id: SampleId::new("l", 0, FillTag::Full),
            text: text.into(),
            bbox: BBox::new(x, y, w, 10),
            confidence: 0.9,
        }
    }

    #[test]
    fn merging() {
        let words = vec![
            word("a", 0, 0, 30),
            word("b", 35, 0, 40),
            word("c", 0, 20, 10),
        ];
        let d = merge_spans_to_boxes(
            &Span {
                start: 0,
                end: 1,
                rule: Rule::Zip,
            },
            &words,
            &[0, 0, 1],
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(0, 0, 75, 10));
        let d = merge_spans_to_boxes(
            &Span {
                start: 1,
                end: 2,
                rule: Rule::Zip,
            },
            &words,
            &[0, 0, 1],
        );
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn end_to_end_is_deterministic() {
        assert!(run_baseline("", &Rule::PATTERNS, None).unwrap().is_empty());
        let words = vec![word("Email:", 0, 0, 48), word("jo@example.org", 56, 0, 112)];
        let dump = write_ocr(&words);
        let a = run_baseline(&dump, &Rule::PATTERNS, None).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].bbox, BBox::new(56, 0, 112, 10));
        assert_eq!(
            crate::eval::write_detections(&a),
            crate::eval::write_detections(&run_baseline(&dump, &Rule::PATTERNS, None).unwrap())
        );
    }

    #[test]
    fn external_classifier_hook() {
        let reply = r#"{"pii_items":[{"text":"Blue Widget"}]}"#;
        let c = ExternalClassifier::new(vec![
            "sh".into(),
            "-c".into(),
            format!("cat > /dev/null; printf '%s' '{reply}'"),
        ]);
        let spans = c.spans(&["Buy", "Blue", "Widget", "now"]).unwrap();
        assert_eq!(
            spans,
            vec![Span {
                start: 1,
                end: 2,
                rule: Rule::Classifier
            }]
        );
    }
}
