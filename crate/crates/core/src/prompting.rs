//! Prompt construction for span extraction and verdict classification.
//!
//! Three modes are supported: `naive` (instructions only), `exemplar`
//! (instructions plus worked input/output examples) and `guidance`
//! (exemplar prompting preceded by a reasoning preamble). Rendering is a
//! pure function of the spec and the post.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::ser::PrettyFormatter;

use crate::corpus::{
    load_primate, load_span_ground_truth, source_name, BinaryAnnotation, CorpusError, Post,
    SpanAnnotation,
};
use crate::questionnaire::QuestionnaireId;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error("prompt config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Naive,
    Exemplar,
    Guidance,
}

impl FromStr for PromptMode {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(PromptMode::Naive),
            "exemplar" => Ok(PromptMode::Exemplar),
            "guidance" => Ok(PromptMode::Guidance),
            other => Err(PromptError::Config(format!("unknown prompt mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// JSON object of slug to evidence sentences.
    SpanMap,
    /// Bracketed list of `[slug, yes|no]` pairs.
    VerdictPairs,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::SpanMap => "span_map",
            OutputFormat::VerdictPairs => "verdict_pairs",
        })
    }
}

/// A worked example: a binary-annotated input record and the span output
/// the model is expected to produce for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub input: (Post, BinaryAnnotation),
    pub output: (Post, SpanAnnotation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub questionnaire: QuestionnaireId,
    pub exemplars: Vec<Exemplar>,
    pub guidance_preamble: Option<String>,
    pub output_format: OutputFormat,
    pub system_message: Option<String>,
}

impl PromptSpec {
    pub fn naive(q: QuestionnaireId, output_format: OutputFormat) -> Self {
        PromptSpec {
            mode: PromptMode::Naive,
            questionnaire: q,
            exemplars: Vec::new(),
            guidance_preamble: None,
            output_format,
            system_message: None,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let invalid = |m: &str| Err(PromptError::InvalidSpec(m.to_string()));
        match self.mode {
            PromptMode::Naive if !self.exemplars.is_empty() => {
                return invalid("naive mode takes no exemplars")
            }
            PromptMode::Exemplar | PromptMode::Guidance if self.exemplars.is_empty() => {
                return invalid("exemplar and guidance modes need at least one exemplar")
            }
            _ => {}
        }
        let has_preamble = self
            .guidance_preamble
            .as_deref()
            .is_some_and(|p| !p.trim().is_empty());
        if self.mode == PromptMode::Guidance && !has_preamble {
            return invalid("guidance mode needs a non-empty guidance_preamble");
        }
        for ex in &self.exemplars {
            if ex.input.1.questionnaire != self.questionnaire
                || ex.output.1.questionnaire != self.questionnaire
            {
                return invalid("exemplar questionnaire differs from the spec's");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    pub target_post_id: String,
}

impl RenderedPrompt {
    /// All message contents joined by blank lines.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub const EXPECTED_OUTPUT_HEADER: &str = "And this is an example expected output format:";
pub const TARGET_HEADER: &str = "INPUT:";

fn pretty4(value: &impl Serialize) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PrettyFormatter::with_indent(b"    "));
    value.serialize(&mut ser).expect("prompt JSON serializes");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Serialize)]
struct InputRecord<'a> {
    post_title: &'a str,
    post_text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<[&'a str; 2]>>,
}

#[derive(Serialize)]
struct OutputRecord<'a> {
    post_title: &'a str,
    post_text: &'a str,
    annotations: &'a std::collections::BTreeMap<&'static str, Vec<String>>,
}

/// A binary-annotated record in the JSON layout shown to the model.
pub fn render_input_record(post: &Post, ann: &BinaryAnnotation) -> String {
    pretty4(&InputRecord {
        post_title: &post.title,
        post_text: &post.body,
        annotations: Some(ann.verdicts.iter().map(|(s, v)| [*s, v.as_str()]).collect()),
    })
}

/// The expected span output for an exemplar.
pub fn render_output_record(post: &Post, ann: &SpanAnnotation) -> String {
    pretty4(&OutputRecord {
        post_title: &post.title,
        post_text: &post.body,
        annotations: &ann.evidence,
    })
}

fn render_target_record(post: &Post) -> String {
    pretty4(&InputRecord {
        post_title: &post.title,
        post_text: &post.body,
        annotations: None,
    })
}

/// Verdicts as a single-quoted list of pairs, in sorted slug order.
pub fn render_verdict_pairs(ann: &BinaryAnnotation) -> String {
    let pairs: Vec<String> = ann
        .verdicts
        .iter()
        .map(|(slug, v)| format!("['{slug}', '{v}']"))
        .collect();
    format!("[{}]", pairs.join(", "))
}

/// Post text as given to the model, optionally headed by its title line.
pub fn input_text(post: &Post, include_title: bool) -> String {
    let title = post.title.trim();
    if include_title && !title.is_empty() {
        format!("{title}\n{}", post.body)
    } else {
        post.body.clone()
    }
}

/// The classification instruction with the questionnaire's items inline.
pub fn instruction_text(q: QuestionnaireId) -> String {
    let symptoms: Vec<&str> = q.items().iter().map(|i| i.text).collect();
    format!(
        "For a given user post sentence, does it show signs of the symptom. Answer in binary \"yes\" or \"no\", for every symptom. The symptoms are as follows:\n[{}] .\n\nGive the output as a python list of lists, with the list containing the symptom and the answer, separated by a comma.",
        symptoms.join(",\n")
    )
}

fn span_instruction(q: QuestionnaireId) -> String {
    let mut out = String::from(
        "When given the below JSON formatted file content, I need you to give me the specific sentences from the text that exhibit a set of symptoms. The symptoms are:\n",
    );
    for item in q.items() {
        out.push_str(&format!("- {}: {}\n", item.slug, item.text));
    }
    out.push_str(
        "\nKeep JSON Formatting for output: return one object with the fields \"post_title\", \"post_text\" and \"annotations\", where \"annotations\" maps every symptom key above to the list of sentences from the text that exhibit it, or to an empty list when the text shows no sign of it.",
    );
    out
}

fn render_span_map(spec: &PromptSpec, post: &Post) -> String {
    let mut sections: Vec<String> = Vec::new();
    if let Some(preamble) = &spec.guidance_preamble {
        if spec.mode == PromptMode::Guidance {
            sections.push(preamble.trim().to_string());
        }
    }
    sections.push(span_instruction(spec.questionnaire));
    for (idx, ex) in spec.exemplars.iter().enumerate() {
        let lead = if idx == 0 {
            "Below is an example of INPUT and OUTPUT:"
        } else {
            "Below is another example of INPUT and OUTPUT:"
        };
        sections.push(lead.to_string());
        sections.push(render_input_record(&ex.input.0, &ex.input.1));
        sections.push(EXPECTED_OUTPUT_HEADER.to_string());
        sections.push(render_output_record(&ex.output.0, &ex.output.1));
    }
    sections.push(TARGET_HEADER.to_string());
    sections.push(render_target_record(post));
    sections.join("\n\n")
}

fn render_verdict_prompt(spec: &PromptSpec, post: &Post, include_title: bool) -> String {
    let mut out = String::from("### INSTRUCTION:\n\n");
    if spec.mode == PromptMode::Guidance {
        if let Some(preamble) = &spec.guidance_preamble {
            out.push_str(preamble.trim());
            out.push_str("\n\n");
        }
    }
    out.push_str(&instruction_text(spec.questionnaire));
    for ex in &spec.exemplars {
        out.push_str("\n\n### EXAMPLE INPUT:\n");
        out.push_str(&input_text(&ex.input.0, include_title));
        out.push_str("\n\n### EXAMPLE OUTPUT:\n");
        out.push_str(&render_verdict_pairs(&ex.input.1));
    }
    out.push_str("\n\n### INPUT:\n");
    out.push_str(&input_text(post, include_title));
    out
}

fn wrap(spec_system: Option<&str>, user: String, post: &Post) -> RenderedPrompt {
    let mut messages = Vec::new();
    if let Some(system) = spec_system.filter(|s| !s.trim().is_empty()) {
        messages.push(ChatMessage {
            role: Role::System,
            content: system.to_string(),
        });
    }
    messages.push(ChatMessage {
        role: Role::User,
        content: user,
    });
    RenderedPrompt {
        messages,
        target_post_id: post.id.clone(),
    }
}

/// Render the prompt for annotating one post.
pub fn render(spec: &PromptSpec, post: &Post) -> Result<RenderedPrompt, PromptError> {
    spec.validate()?;
    let user = match spec.output_format {
        OutputFormat::SpanMap => render_span_map(spec, post),
        OutputFormat::VerdictPairs => render_verdict_prompt(spec, post, true),
    };
    Ok(wrap(spec.system_message.as_deref(), user, post))
}

/// The instruction-format prompt used with fine-tuned classifiers.
pub fn render_instruction(post: &Post, q: QuestionnaireId) -> RenderedPrompt {
    let spec = PromptSpec::naive(q, OutputFormat::VerdictPairs);
    wrap(None, render_verdict_prompt(&spec, post, true), post)
}

/// Pull the expected-output blocks back out of a rendered span prompt.
pub fn expected_output_blocks(prompt_text: &str) -> Vec<&str> {
    prompt_text
        .split(EXPECTED_OUTPUT_HEADER)
        .skip(1)
        .filter_map(|rest| rest.trim_start_matches('\n').split("\n\n").next())
        .collect()
}

/// On-disk prompt configuration (TOML).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub mode: PromptMode,
    #[serde(default)]
    pub questionnaire: Option<QuestionnaireId>,
    #[serde(default = "default_format")]
    pub output_format: OutputFormat,
    #[serde(default)]
    pub guidance_preamble: Option<String>,
    #[serde(default)]
    pub system_message: Option<String>,
    #[serde(default)]
    pub exemplars: Vec<ExemplarRef>,
}

fn default_format() -> OutputFormat {
    OutputFormat::SpanMap
}

/// An exemplar referenced by corpus path and record index.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarRef {
    pub input: PathBuf,
    #[serde(default)]
    pub input_index: usize,
    /// Span-format file holding the expected output. When omitted the
    /// output is left empty, which only suits verdict-pair prompts.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub output_index: usize,
}

impl PromptConfig {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))
    }

    /// Resolve exemplar references (relative to `base_dir`) into a spec.
    pub fn into_spec(
        self,
        fallback_q: QuestionnaireId,
        base_dir: &Path,
    ) -> Result<PromptSpec, PromptError> {
        let q = self.questionnaire.unwrap_or(fallback_q);
        let mut exemplars = Vec::with_capacity(self.exemplars.len());
        for r in &self.exemplars {
            let input_path = base_dir.join(&r.input);
            let bytes = read(&input_path)?;
            let inputs = load_primate(&bytes, &source_name(&input_path), q)?;
            let input = inputs.into_iter().nth(r.input_index).ok_or_else(|| {
                PromptError::Config(format!(
                    "{}: no record {}",
                    input_path.display(),
                    r.input_index
                ))
            })?;
            let output = match &r.output {
                Some(path) => {
                    let output_path = base_dir.join(path);
                    let bytes = read(&output_path)?;
                    let outputs = load_span_ground_truth(&bytes, &source_name(&output_path), q)?;
                    outputs.into_iter().nth(r.output_index).ok_or_else(|| {
                        PromptError::Config(format!(
                            "{}: no record {}",
                            output_path.display(),
                            r.output_index
                        ))
                    })?
                }
                None if self.output_format == OutputFormat::SpanMap => {
                    return Err(PromptError::Config(
                        "span_map exemplars need an output file".into(),
                    ))
                }
                None => (input.0.clone(), SpanAnnotation::empty(&input.0.id, q)),
            };
            exemplars.push(Exemplar { input, output });
        }
        let spec = PromptSpec {
            mode: self.mode,
            questionnaire: q,
            exemplars,
            guidance_preamble: self.guidance_preamble,
            output_format: self.output_format,
            system_message: self.system_message,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PromptError> {
    std::fs::read(path).map_err(|err| {
        PromptError::Corpus(CorpusError::Io {
            path: path.display().to_string(),
            err,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questionnaire::QuestionnaireId::{Gad7, Phq9};

    const PRIMATE: &str = include_str!("../tests/fixtures/primate_record.json");
    const SPAN_OUTPUT: &str = include_str!("../tests/fixtures/span_exemplar_output.json");

    fn exemplar() -> Exemplar {
        let input = load_primate(PRIMATE.as_bytes(), "a1.json", Phq9)
            .unwrap()
            .remove(0);
        let output = load_span_ground_truth(SPAN_OUTPUT.as_bytes(), "a2.json", Phq9)
            .unwrap()
            .remove(0);
        Exemplar { input, output }
    }

    fn target(title: &str) -> Post {
        Post {
            id: "t#0".into(),
            title: title.into(),
            body: "I can't sleep and nothing is fun any more.".into(),
        }
    }

    fn count(hay: &str, needle: &str) -> usize {
        hay.matches(needle).count()
    }

    #[test]
    fn exemplar_prompt_embeds_blocks_and_all_slugs() {
        let ex = exemplar();
        let spec = PromptSpec {
            mode: PromptMode::Exemplar,
            questionnaire: Phq9,
            exemplars: vec![ex.clone()],
            guidance_preamble: None,
            output_format: OutputFormat::SpanMap,
            system_message: None,
        };
        let p = render(&spec, &target("t")).unwrap();
        assert_eq!(p.messages.len(), 1);
        let text = p.user_text();
        assert!(text.contains(&render_output_record(&ex.output.0, &ex.output.1)));
        assert!(text.contains(&render_input_record(&ex.input.0, &ex.input.1)));
        for item in Phq9.items() {
            assert!(text.contains(item.slug));
        }
        assert!(!text.contains("May I proceed"));
        assert_eq!(count(text, &target("t").body), 1);
        assert_eq!(render(&spec, &target("t")).unwrap(), p);
    }

    #[test]
    fn naive_gad7_lists_every_item_once() {
        let spec = PromptSpec::naive(Gad7, OutputFormat::SpanMap);
        let p = render(&spec, &target("")).unwrap();
        let text = p.user_text();
        for item in Gad7.items() {
            assert_eq!(count(text, item.text), 1, "{}", item.text);
        }
        assert_eq!(count(text, EXPECTED_OUTPUT_HEADER), 0);
    }

    #[test]
    fn guidance_preamble_precedes_exemplar() {
        let spec = PromptSpec {
            mode: PromptMode::Guidance,
            questionnaire: Phq9,
            exemplars: vec![exemplar()],
            guidance_preamble: Some("think step by step about each symptom".into()),
            output_format: OutputFormat::SpanMap,
            system_message: Some("You are a careful annotator.".into()),
        };
        let p = render(&spec, &target("t")).unwrap();
        assert_eq!(p.messages[0].role, Role::System);
        let text = p.user_text();
        let pre = text.find("think step by step").unwrap();
        let ex = text.find("Below is an example").unwrap();
        assert!(pre < ex);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = PromptSpec::naive(Phq9, OutputFormat::SpanMap);
        spec.exemplars.push(exemplar());
        assert!(matches!(render(&spec, &target("")), Err(PromptError::InvalidSpec(_))));
        spec.mode = PromptMode::Guidance;
        assert!(render(&spec, &target("")).is_err());
        spec.guidance_preamble = Some("  ".into());
        assert!(render(&spec, &target("")).is_err());
        spec.mode = PromptMode::Exemplar;
        spec.exemplars.clear();
        assert!(render(&spec, &target("")).is_err());
        spec.questionnaire = Gad7;
        spec.exemplars.push(exemplar());
        assert!(render(&spec, &target("")).is_err());
    }

    #[test]
    fn instruction_prompt_layout() {
        let p = render_instruction(&target("A title"), Phq9);
        let text = p.user_text();
        assert!(text.starts_with("### INSTRUCTION:"));
        assert!(text.contains("Give the output as a python list of lists"));
        assert!(text.contains("### INPUT:\nA title\nI can't sleep"));
        for item in Phq9.items() {
            assert_eq!(count(text, item.text), 1);
        }
        let untitled = render_instruction(&target("  "), Gad7);
        assert!(untitled.user_text().ends_with("### INPUT:\nI can't sleep and nothing is fun any more."));
        assert_eq!(
            instruction_text(Gad7).lines().filter(|l| l.ends_with(',') || l.ends_with("] .")).count(),
            7
        );
    }

    #[test]
    fn verdict_pair_prompt_with_exemplar() {
        let spec = PromptSpec {
            mode: PromptMode::Exemplar,
            questionnaire: Phq9,
            exemplars: vec![exemplar()],
            guidance_preamble: None,
            output_format: OutputFormat::VerdictPairs,
            system_message: None,
        };
        let text = render(&spec, &target("t")).unwrap().user_text().to_string();
        assert!(text.contains("### EXAMPLE OUTPUT:\n[['Feeling-bad"));
        assert!(text.ends_with("### INPUT:\nt\nI can't sleep and nothing is fun any more."));
    }

    #[test]
    fn exemplar_renderings_reload() {
        let ex = exemplar();
        let input = render_input_record(&ex.input.0, &ex.input.1);
        let back = load_primate(input.as_bytes(), "a1.json", Phq9).unwrap();
        assert_eq!(back[0], ex.input);
        let output = render_output_record(&ex.output.0, &ex.output.1);
        let back = load_span_ground_truth(output.as_bytes(), "a2.json", Phq9).unwrap();
        assert_eq!(back[0], ex.output);
    }

    #[test]
    fn config_round_trip() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
        let cfg = PromptConfig::from_toml(
            r#"
mode = "exemplar"
questionnaire = "phq9"
[[exemplars]]
input = "primate_record.json"
output = "span_exemplar_output.json"
"#,
        )
        .unwrap();
        let spec = cfg.into_spec(Gad7, &dir).unwrap();
        assert_eq!(spec.questionnaire, Phq9);
        assert_eq!(spec.exemplars.len(), 1);
        assert!(PromptConfig::from_toml("mode = \"weird\"").is_err());
        let no_output = PromptConfig::from_toml(
            "mode = \"exemplar\"\n[[exemplars]]\ninput = \"primate_record.json\"\n",
        )
        .unwrap();
        assert!(no_output.into_spec(Phq9, &dir).is_err());
    }
}
