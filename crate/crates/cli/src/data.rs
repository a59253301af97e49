use std::path::{Path, PathBuf};

use pacl::corpus::{parse_block_format, read_jsonl, Corpus, Split, Utterance};
use pacl::trainer::TrainingConfig;
use pacl::wordlevel::{read_wordlevel_jsonl, WordLevelExample};

use crate::error::CliError;
use crate::manifest::Recorder;
use crate::InputFormat;

fn split_file(dir: &Path, names: &[&str], ext: &str) -> Result<PathBuf, CliError> {
    names
        .iter()
        .map(|n| dir.join(format!("{n}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Input(format!("{}: no {}.{ext} file", dir.display(), names[0])))
}

fn read_split(path: &Path, format: InputFormat, rec: &mut Recorder) -> Result<Vec<Utterance>, CliError> {
    let text = rec.read(path)?;
    let parsed = match format {
        InputFormat::Block => parse_block_format(&text),
        InputFormat::Jsonl => read_jsonl(&text),
    };
    parsed.map_err(|e| CliError::input(path, e))
}

/// Reads `train`, `validation` (or `dev`/`valid`) and `test` files from `dir`.
pub fn read_corpus(dir: &Path, format: InputFormat, rec: &mut Recorder) -> Result<Corpus, CliError> {
    let ext = match format {
        InputFormat::Block => "txt",
        InputFormat::Jsonl => "jsonl",
    };
    let train = read_split(&split_file(dir, &["train"], ext)?, format, rec)?;
    let validation = read_split(&split_file(dir, &["validation", "dev", "valid"], ext)?, format, rec)?;
    let test = read_split(&split_file(dir, &["test"], ext)?, format, rec)?;
    Ok(Corpus::new(train, validation, test))
}

pub fn write_corpus(corpus: &Corpus, dir: &Path, rec: &mut Recorder) -> Result<(), CliError> {
    for split in [Split::Train, Split::Validation, Split::Test] {
        let text = pacl::corpus::write_jsonl(corpus.split(split));
        rec.write(&dir.join(format!("{}.jsonl", split.name())), &text)?;
    }
    Ok(())
}

pub fn read_wordlevel(path: &Path, rec: &mut Recorder) -> Result<Vec<WordLevelExample>, CliError> {
    let text = rec.read(path)?;
    read_wordlevel_jsonl(&text).map_err(|e| CliError::input(path, e))
}

/// Parses a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str, base: TrainingConfig) -> Result<TrainingConfig, String> {
    let mut config = base;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        config.set(key.trim(), value.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>, rec: &mut Recorder) -> Result<TrainingConfig, CliError> {
    let config = match path {
        Some(p) => {
            let text = rec.read(p)?;
            parse_config(&text, TrainingConfig::default()).map_err(|e| CliError::input(p, e))?
        }
        None => TrainingConfig::default(),
    };
    rec.seed(config.seed);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_files() {
        let c = parse_config("# comment\n\nlambda5 = 0.25\nseed=7\npretrain=false\n", TrainingConfig::default()).unwrap();
        assert_eq!(c.lambda5, 0.25);
        assert_eq!(c.seed, 7);
        assert!(!c.pretrain);
        let err = parse_config("lambda1=-1\n", TrainingConfig::default()).unwrap_err();
        assert!(err.contains("lambda1"), "{err}");
        let err = parse_config("lamda1=1\n", TrainingConfig::default()).unwrap_err();
        assert!(err.contains("lamda1") && err.contains("unknown"), "{err}");
        assert!(parse_config("seed 3\n", TrainingConfig::default()).is_err());
    }
}
