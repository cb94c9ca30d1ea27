//! validate, export-finetune and stats.

use std::path::{Path, PathBuf};

use dxassist_core::corpus::{source_name, stats as corpus_stats, Corpus, CorpusStats};
use dxassist_core::finetune::{export, ExportFormat, ExportOptions};
use dxassist_core::questionnaire::QuestionnaireId;

use crate::config::Settings;
use crate::{io_error, CliError};

/// Questionnaire named in a dataset file name (`…PHQ-9…`, `…gad7…`), if any.
fn questionnaire_from_name(path: &Path) -> Option<QuestionnaireId> {
    let name = source_name(path).to_ascii_lowercase();
    let squashed: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
    if squashed.contains("phq9") {
        Some(QuestionnaireId::Phq9)
    } else if squashed.contains("gad7") {
        Some(QuestionnaireId::Gad7)
    } else {
        None
    }
}

fn load(path: &Path, q: QuestionnaireId) -> Result<Corpus, String> {
    Corpus::read_file(path, q).map_err(|e| e.to_string())
}

pub fn validate(settings: &Settings, paths: &[PathBuf]) -> Result<(), CliError> {
    let mut bad = 0;
    for path in paths {
        let q = questionnaire_from_name(path).unwrap_or(settings.questionnaire);
        match load(path, q) {
            Ok(c) => println!("ok    {} ({} records, {q})", path.display(), c.len()),
            Err(e) => {
                bad += 1;
                println!("FAIL  {}: {e}", path.display());
            }
        }
    }
    if bad > 0 {
        return Err(CliError::Data(format!("{bad} of {} files failed to load", paths.len())));
    }
    Ok(())
}

pub fn export_finetune(
    settings: &Settings,
    input: &Path,
    format: ExportFormat,
    include_title: bool,
) -> Result<(), CliError> {
    let q = settings.questionnaire;
    let corpus = load(input, q).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let records = corpus.binary();
    let name = match format {
        ExportFormat::Jsonl => "finetune.jsonl",
        ExportFormat::Text => "finetune.csv",
    };
    let out = settings.out_dir.join(name);
    std::fs::create_dir_all(&settings.out_dir).map_err(|e| io_error(&settings.out_dir, e))?;
    let file = std::fs::File::create(&out).map_err(|e| io_error(&out, e))?;
    let n = export(&records, q, file, ExportOptions { format, include_title })
        .map_err(|e| CliError::Data(e.to_string()))?;
    eprintln!("export-finetune: {n} records -> {}", out.display());
    Ok(())
}

pub fn stats(settings: &Settings, paths: &[PathBuf]) -> Result<(), CliError> {
    let mut all: Vec<CorpusStats> = Vec::new();
    for path in paths {
        let q = questionnaire_from_name(path).unwrap_or(settings.questionnaire);
        let corpus = load(path, q).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let dataset = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        all.push(corpus_stats(&dataset, q, &corpus));
    }
    print!("{}", CorpusStats::render_table(&all));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn questionnaire_from_file_names() {
        let q = |s: &str| questionnaire_from_name(Path::new(s));
        assert_eq!(q("data/GPT-4o-PHQ-9.json"), Some(QuestionnaireId::Phq9));
        assert_eq!(q("GPT-4o-mini_GAD-7.json"), Some(QuestionnaireId::Gad7));
        assert_eq!(q("gad7_truth.json"), Some(QuestionnaireId::Gad7));
        assert_eq!(q("posts.json"), None);
    }
}
