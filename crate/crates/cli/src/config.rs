//! Run configuration: a TOML file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use dxassist_core::evaluation::{Averaging, FailurePolicy, JoinKey, DEFAULT_MATCH_THRESHOLD};
use dxassist_core::parsing::{DEFAULT_ALIGNMENT_THRESHOLD, DEFAULT_ECHO_THRESHOLD};
use dxassist_core::prompting::{OutputFormat, PromptConfig, PromptSpec};
use dxassist_core::questionnaire::QuestionnaireId;
use dxassist_gateway::{CassetteMode, ModelEndpoint, RateLimitPolicy};
use dxassist_review::{ConsensusPolicy, Reviewer};
use serde::Deserialize;

use crate::{CliError, GlobalArgs};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteConfig {
    pub path: Option<PathBuf>,
    pub mode: Option<CassetteMode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Lexical,
    Endpoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub backend: BackendChoice,
    /// Endpoint name used for embeddings when `backend = "endpoint"`.
    pub embedding_endpoint: Option<String>,
    pub averaging: Averaging,
    pub failure_policy: FailurePolicy,
    pub join: JoinKey,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            backend: BackendChoice::Lexical,
            embedding_endpoint: None,
            averaging: Averaging::Micro,
            failure_policy: FailurePolicy::AllNo,
            join: JoinKey::PostId,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub echo: f64,
    pub alignment: f64,
    #[serde(rename = "match")]
    pub match_: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            echo: DEFAULT_ECHO_THRESHOLD,
            alignment: DEFAULT_ALIGNMENT_THRESHOLD,
            match_: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    pub log: Option<PathBuf>,
    pub bind: Option<SocketAddr>,
    pub ui_dir: Option<PathBuf>,
    pub policy: Option<ConsensusPolicy>,
    pub reviewers: Vec<Reviewer>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub questionnaire: Option<QuestionnaireId>,
    /// Prompt configuration file (TOML).
    pub prompt: Option<PathBuf>,
    /// Default input corpora for `annotate`.
    #[serde(default)]
    pub corpus: Vec<PathBuf>,
    /// Span ground truth for `evaluate`.
    pub truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Default endpoint name.
    pub endpoint: Option<String>,
    #[serde(default)]
    pub endpoints: BTreeMap<String, ModelEndpoint>,
    pub cassette: Option<CassetteConfig>,
    #[serde(default)]
    pub rate_limit: RateLimitPolicy,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub review: ReviewConfig,
}

fn must_exist(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

impl RunConfig {
    /// Read `path`, resolving every relative path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.prompt.as_mut().map(rebase);
        cfg.corpus.iter_mut().for_each(rebase);
        cfg.truth.as_mut().map(rebase);
        cfg.output_dir.as_mut().map(rebase);
        if let Some(c) = cfg.cassette.as_mut() {
            c.path.as_mut().map(rebase);
        }
        cfg.review.log.as_mut().map(rebase);
        cfg.review.ui_dir.as_mut().map(rebase);
        for (what, p) in cfg
            .prompt
            .iter()
            .map(|p| ("prompt file", p))
            .chain(cfg.corpus.iter().map(|p| ("corpus", p)))
            .chain(cfg.truth.iter().map(|p| ("truth file", p)))
            .chain(cfg.review.ui_dir.iter().map(|p| ("ui directory", p)))
        {
            must_exist(p, what)?;
        }
        Ok(cfg)
    }
}

/// Configuration after flags have been applied.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cfg: RunConfig,
    pub questionnaire: QuestionnaireId,
    pub out_dir: PathBuf,
    pub mode: CassetteMode,
    pub cassette: Option<PathBuf>,
    pub endpoint_name: Option<String>,
    pub strict: bool,
    pub averaging: Averaging,
    pub policy: ConsensusPolicy,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, CliError> {
        let cfg = match &args.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let cassette = args
            .cassette
            .clone()
            .or_else(|| cfg.cassette.as_ref().and_then(|c| c.path.clone()));
        let mode = args
            .mode
            .or_else(|| cfg.cassette.as_ref().and_then(|c| c.mode))
            .unwrap_or(if cassette.is_some() {
                CassetteMode::Replay
            } else {
                CassetteMode::Passthrough
            });
        Ok(Settings {
            questionnaire: args
                .questionnaire
                .or(cfg.questionnaire)
                .unwrap_or(QuestionnaireId::Phq9),
            out_dir: args
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            mode,
            cassette,
            endpoint_name: args.endpoint_name.clone().or_else(|| cfg.endpoint.clone()),
            strict: args.strict,
            averaging: args.averaging.unwrap_or(cfg.evaluation.averaging),
            policy: args
                .policy
                .or(cfg.review.policy)
                .unwrap_or_default(),
            cfg,
        })
    }

    /// The named endpoint, or the only one configured.
    pub fn endpoint(&self, name: Option<&str>) -> Result<(String, ModelEndpoint), CliError> {
        let eps = &self.cfg.endpoints;
        let name = match name.or(self.endpoint_name.as_deref()) {
            Some(n) => n.to_string(),
            None if eps.len() == 1 => eps.keys().next().cloned().expect("one endpoint"),
            None if eps.is_empty() => {
                return Err(CliError::Usage("no endpoints configured".into()))
            }
            None => {
                return Err(CliError::Usage(format!(
                    "several endpoints configured ({}); pick one with --endpoint-name",
                    eps.keys().cloned().collect::<Vec<_>>().join(", ")
                )))
            }
        };
        let ep = eps
            .get(&name)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("no endpoint named {name:?} in config")))?;
        ep.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok((name, ep))
    }

    pub fn prompt_spec(&self) -> Result<PromptSpec, CliError> {
        let spec = match &self.cfg.prompt {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("prompt {}: {e}", path.display())))?;
                let pc = PromptConfig::from_toml(&text).map_err(|e| CliError::Usage(e.to_string()))?;
                let base = path.parent().unwrap_or(Path::new(""));
                pc.into_spec(self.questionnaire, base)
                    .map_err(|e| CliError::Usage(e.to_string()))?
            }
            None => PromptSpec::naive(self.questionnaire, OutputFormat::SpanMap),
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if spec.questionnaire != self.questionnaire {
            return Err(CliError::Usage(format!(
                "prompt is for {} but the run is for {}",
                spec.questionnaire, self.questionnaire
            )));
        }
        Ok(spec)
    }

    /// Cassette path checked against the mode: replay needs an existing file.
    pub fn cassette_path(&self) -> Result<Option<&Path>, CliError> {
        match (self.mode, self.cassette.as_deref()) {
            (CassetteMode::Passthrough, _) => Ok(None),
            (mode, None) => Err(CliError::Usage(format!(
                "{} mode needs a cassette path (--cassette)",
                match mode {
                    CassetteMode::Record => "record",
                    _ => "replay",
                }
            ))),
            (CassetteMode::Replay, Some(p)) => {
                must_exist(p, "cassette")?;
                Ok(Some(p))
            }
            (_, Some(p)) => Ok(Some(p)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config_and_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("truth.json"), "[]").unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(
            &cfg_path,
            r#"
questionnaire = "gad7"
truth = "truth.json"
output_dir = "out"
endpoint = "mini"

[endpoints.mini]
base_url = "https://api.example.com/v1"
model_name = "gpt-4o-mini"
api_key_env = "OPENAI_API_KEY"

[cassette]
path = "c.jsonl"
mode = "record"

[rate_limit]
max_in_flight = 2

[thresholds]
echo = 0.9

[evaluation]
averaging = "macro"
failure_policy = "exclude"

[review]
policy = "majority"
[[review.reviewers]]
id = "r1"
token = "t1"
"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(cfg.truth.as_deref(), Some(dir.path().join("truth.json").as_path()));
        assert_eq!(cfg.rate_limit.max_in_flight, 2);
        assert_eq!(cfg.rate_limit.max_attempts, RateLimitPolicy::default().max_attempts);
        assert_eq!(cfg.thresholds.echo, 0.9);
        assert_eq!(cfg.thresholds.alignment, DEFAULT_ALIGNMENT_THRESHOLD);

        let args = GlobalArgs {
            config: Some(cfg_path.clone()),
            averaging: Some(Averaging::Micro),
            mode: Some(CassetteMode::Passthrough),
            ..Default::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert_eq!(s.questionnaire, QuestionnaireId::Gad7);
        // Flags win over the file.
        assert_eq!(s.averaging, Averaging::Micro);
        assert_eq!(s.mode, CassetteMode::Passthrough);
        assert_eq!(s.policy, ConsensusPolicy::Majority);
        assert_eq!(s.endpoint(None).unwrap().1.model_name, "gpt-4o-mini");
        assert!(s.endpoint(Some("nope")).is_err());
    }

    #[test]
    fn missing_files_and_unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "truth = \"missing.json\"\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(CliError::Usage(_))));
        std::fs::write(&p, "colour = 1\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(CliError::Usage(_))));
    }

    #[test]
    fn replay_requires_cassette() {
        let args = GlobalArgs {
            mode: Some(CassetteMode::Replay),
            ..Default::default()
        };
        let s = Settings::resolve(&args).unwrap();
        assert!(matches!(s.cassette_path(), Err(CliError::Usage(_))));
    }
}
