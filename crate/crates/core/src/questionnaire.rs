//! Canonical PHQ-9 and GAD-7 item registry.
//!
//! Slugs are stored verbatim as they appear in the released annotation
//! datasets. They are not derivable from the item text by any rule: the
//! PHQ-9 "little interest" slug drops the trailing word "things", and the
//! psychomotor item keeps a capital `Or`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum QuestionnaireError {
    #[error("unknown symptom key {raw:?} for {questionnaire}")]
    UnknownSlug {
        questionnaire: QuestionnaireId,
        raw: String,
    },
    #[error("unknown questionnaire {0:?} (expected phq9 or gad7)")]
    UnknownQuestionnaire(String),
    #[error("invalid verdict {0:?} (expected yes or no)")]
    InvalidVerdict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionnaireId {
    Phq9,
    Gad7,
}

impl QuestionnaireId {
    pub const ALL: [QuestionnaireId; 2] = [QuestionnaireId::Phq9, QuestionnaireId::Gad7];

    /// Machine key used in config files and on the wire.
    pub fn key(self) -> &'static str {
        match self {
            QuestionnaireId::Phq9 => "phq9",
            QuestionnaireId::Gad7 => "gad7",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            QuestionnaireId::Phq9 => "PHQ-9",
            QuestionnaireId::Gad7 => "GAD-7",
        }
    }

    pub fn items(self) -> &'static [SymptomItem] {
        match self {
            QuestionnaireId::Phq9 => PHQ9,
            QuestionnaireId::Gad7 => GAD7,
        }
    }

    /// Slugs in byte-wise sorted order, the order used by the dataset files.
    pub fn sorted_slugs(self) -> Vec<&'static str> {
        let mut slugs: Vec<_> = self.items().iter().map(|i| i.slug).collect();
        slugs.sort_unstable();
        slugs
    }

    pub fn item_by_slug(self, slug: &str) -> Option<&'static SymptomItem> {
        self.items().iter().find(|i| i.slug == slug)
    }
}

impl fmt::Display for QuestionnaireId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for QuestionnaireId {
    type Err = QuestionnaireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "phq9" => Ok(QuestionnaireId::Phq9),
            "gad7" => Ok(QuestionnaireId::Gad7),
            _ => Err(QuestionnaireError::UnknownQuestionnaire(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SymptomItem {
    pub questionnaire: QuestionnaireId,
    pub ordinal: u8,
    pub text: &'static str,
    pub slug: &'static str,
}

const fn item(
    questionnaire: QuestionnaireId,
    ordinal: u8,
    text: &'static str,
    slug: &'static str,
) -> SymptomItem {
    SymptomItem {
        questionnaire,
        ordinal,
        text,
        slug,
    }
}

use QuestionnaireId::{Gad7, Phq9};

static PHQ9: &[SymptomItem] = &[
    item(
        Phq9,
        1,
        "Little interest or pleasure in doing things",
        "Little-interest-or-pleasure-in-doing",
    ),
    item(
        Phq9,
        2,
        "Feeling down, depressed, or hopeless",
        "Feeling-down-depressed-or-hopeless",
    ),
    item(
        Phq9,
        3,
        "Trouble falling or staying asleep, or sleeping too much",
        "Trouble-falling-or-staying-asleep-or-sleeping-too-much",
    ),
    item(
        Phq9,
        4,
        "Feeling tired or having little energy",
        "Feeling-tired-or-having-little-energy",
    ),
    item(
        Phq9,
        5,
        "Poor appetite or overeating",
        "Poor-appetite-or-overeating",
    ),
    item(
        Phq9,
        6,
        "Feeling bad about yourself, or that you are a failure or have let yourself or your family down",
        "Feeling-bad-about-yourself-or-that-you-are-a-failure-or-have-let-yourself-or-your-family-down",
    ),
    item(
        Phq9,
        7,
        "Trouble concentrating on things, such as reading the newspaper or watching television",
        "Trouble-concentrating-on-things-such-as-reading-the-newspaper-or-watching-television",
    ),
    item(
        Phq9,
        8,
        "Moving or speaking so slowly that other people could have noticed. Or the opposite, being so fidgety or restless that you have been moving around a lot more than usual",
        "Moving-or-speaking-so-slowly-that-other-people-could-have-noticed-Or-the-opposite-being-so-fidgety-or-restless-that-you-have-been-moving-around-a-lot-more-than-usual",
    ),
    item(
        Phq9,
        9,
        "Thoughts that you would be better off dead, or of hurting yourself in some way",
        "Thoughts-that-you-would-be-better-off-dead-or-of-hurting-yourself-in-some-way",
    ),
];

static GAD7: &[SymptomItem] = &[
    item(
        Gad7,
        1,
        "Feeling nervous, anxious, or on edge",
        "Feeling-nervous-anxious-or-on-edge",
    ),
    item(
        Gad7,
        2,
        "Not being able to stop or control worrying",
        "Not-being-able-to-stop-or-control-worrying",
    ),
    item(
        Gad7,
        3,
        "Worrying too much about different things",
        "Worrying-too-much-about-different-things",
    ),
    item(Gad7, 4, "Trouble relaxing", "Trouble-relaxing"),
    item(
        Gad7,
        5,
        "Being so restless that it is hard to sit still",
        "Being-so-restless-that-it-is-hard-to-sit-still",
    ),
    item(
        Gad7,
        6,
        "Becoming easily annoyed or irritable",
        "Becoming-easily-annoyed-or-irritable",
    ),
    item(
        Gad7,
        7,
        "Feeling afraid, as if something awful might happen",
        "Feeling-afraid-as-if-something-awful-might-happen",
    ),
];

// Known spelling variants seen in model output and third-party files,
// keyed by normalized form.
static ALIASES: &[(QuestionnaireId, &str, &str)] = &[
    (
        Phq9,
        "little-interest-or-pleasure-in-doing-things",
        "Little-interest-or-pleasure-in-doing",
    ),
    (
        Phq9,
        "thoughts-that-you-would-be-better-off-dead-or-of-hurting-yourself",
        "Thoughts-that-you-would-be-better-off-dead-or-of-hurting-yourself-in-some-way",
    ),
];

/// Ordered items of a questionnaire.
pub fn items(q: QuestionnaireId) -> &'static [SymptomItem] {
    q.items()
}

/// Trim, lowercase and collapse runs of hyphens.
pub fn normalize_slug(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.trim().chars().flat_map(char::to_lowercase) {
        if c == '-' && out.ends_with('-') {
            continue;
        }
        out.push(c);
    }
    out
}

/// Resolve a slug as written by a model or a third-party file to the
/// registered item.
pub fn resolve_slug(
    q: QuestionnaireId,
    raw: &str,
) -> Result<&'static SymptomItem, QuestionnaireError> {
    let wanted = normalize_slug(raw);
    if let Some(found) = q.items().iter().find(|i| normalize_slug(i.slug) == wanted) {
        return Ok(found);
    }
    ALIASES
        .iter()
        .find(|(aq, alias, _)| *aq == q && *alias == wanted)
        .and_then(|(_, _, slug)| q.item_by_slug(slug))
        .ok_or_else(|| QuestionnaireError::UnknownSlug {
            questionnaire: q,
            raw: raw.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymptomVerdict {
    Yes,
    No,
}

impl SymptomVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            SymptomVerdict::Yes => "yes",
            SymptomVerdict::No => "no",
        }
    }

    pub fn is_yes(self) -> bool {
        self == SymptomVerdict::Yes
    }

    pub fn from_bool(present: bool) -> Self {
        if present {
            SymptomVerdict::Yes
        } else {
            SymptomVerdict::No
        }
    }
}

impl FromStr for SymptomVerdict {
    type Err = QuestionnaireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "yes" => Ok(SymptomVerdict::Yes),
            "no" => Ok(SymptomVerdict::No),
            _ => Err(QuestionnaireError::InvalidVerdict(s.to_string())),
        }
    }
}

impl fmt::Display for SymptomVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Serialize)]
struct RegistryEntry {
    ordinal: u8,
    slug: &'static str,
    text: &'static str,
}

/// The registry as the machine-readable document served to the review UI:
/// `{"phq9": [{"ordinal", "slug", "text"}, ...], "gad7": [...]}`.
pub fn registry_json() -> String {
    let doc: std::collections::BTreeMap<&str, Vec<RegistryEntry>> = QuestionnaireId::ALL
        .iter()
        .map(|q| {
            let entries = q
                .items()
                .iter()
                .map(|i| RegistryEntry {
                    ordinal: i.ordinal,
                    slug: i.slug,
                    text: i.text,
                })
                .collect();
            (q.key(), entries)
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&doc).expect("registry serializes");
    out.push('\n');
    out
}
