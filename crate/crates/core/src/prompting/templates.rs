//! Instruction and feedback templates.
//!
//! Templates are plain UTF-8 files with `{{name}}` placeholders. A built-in
//! set is compiled in; an override directory with the same layout
//! (`<dataset>/{system,extraction,ner}.txt`, `generic/…`, `specific/…`,
//! `feedback/…`) takes precedence file by file.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InstructionSet, PromptError, PromptStyle};

macro_rules! builtin {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!(concat!("../../templates/", $path)))),*]
    };
}

static BUILTIN: &[(&str, &str)] = builtin![
    "generic/system.txt",
    "generic/extraction.txt",
    "generic/ner.txt",
    "specific/extraction.txt",
    "specific/ner.txt",
    "feedback/extraction.txt",
    "feedback/ner.txt",
    "fijo/system.txt",
    "fijo/extraction.txt",
    "fijo/ner.txt",
    "gnehm/system.txt",
    "gnehm/extraction.txt",
    "gnehm/ner.txt",
    "green/system.txt",
    "green/extraction.txt",
    "green/ner.txt",
    "kompetencer/system.txt",
    "kompetencer/extraction.txt",
    "kompetencer/ner.txt",
    "sayfullina/system.txt",
    "sayfullina/extraction.txt",
    "sayfullina/ner.txt",
    "skillspan/system.txt",
    "skillspan/extraction.txt",
    "skillspan/ner.txt",
];

/// Metadata used to fill the parametric dataset-specific template when no
/// dedicated instruction file exists for a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub domain: String,
    #[serde(default)]
    pub skill_type: String,
}

#[derive(Clone, Debug, Default)]
pub struct TemplateStore {
    dir: Option<PathBuf>,
}

impl TemplateStore {
    pub fn builtin() -> Self {
        TemplateStore { dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        TemplateStore { dir: Some(dir.into()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn get(&self, rel: &str) -> Result<Option<Cow<'static, str>>, PromptError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(rel);
            if path.is_file() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
                return Ok(Some(Cow::Owned(strip_final_newline(&text).to_string())));
            }
        }
        Ok(BUILTIN.iter().find(|(p, _)| *p == rel).map(|(_, text)| Cow::Borrowed(strip_final_newline(text))))
    }

    fn require(&self, rel: &str) -> Result<Cow<'static, str>, PromptError> {
        self.get(rel)?.ok_or_else(|| PromptError::Template(format!("missing template {rel}")))
    }

    /// Resolves the instructions for a run.
    ///
    /// With `dataset_specific`, the dataset's own files are used when present,
    /// otherwise the parametric template is filled from `profile`. Without
    /// it, the generic instructions are used.
    pub fn instructions(
        &self,
        style: PromptStyle,
        profile: &DatasetProfile,
        dataset_specific: bool,
    ) -> Result<InstructionSet, PromptError> {
        let file = style.template_file();
        let key = profile.name.to_lowercase();
        let generic_system = self.require("generic/system.txt")?;

        if !dataset_specific {
            return Ok(InstructionSet {
                system: generic_system.into_owned(),
                task: self.require(&format!("generic/{file}"))?.into_owned(),
                dataset_specific: false,
            });
        }

        if !key.is_empty() {
            if let Some(task) = self.get(&format!("{key}/{file}"))? {
                let system = self.get(&format!("{key}/system.txt"))?.unwrap_or(generic_system);
                return Ok(InstructionSet {
                    system: system.into_owned(),
                    task: task.into_owned(),
                    dataset_specific: true,
                });
            }
        }

        let mut vars = BTreeMap::new();
        for (name, value) in
            [("language", &profile.language), ("domain", &profile.domain), ("skill_type", &profile.skill_type)]
        {
            if value.trim().is_empty() {
                return Err(PromptError::Template(format!(
                    "dataset {:?} has no instruction files and no {name} for the specific template",
                    profile.name
                )));
            }
            vars.insert(name, value.as_str());
        }
        let task = render(&self.require(&format!("specific/{file}"))?, &vars)?;
        Ok(InstructionSet { system: generic_system.into_owned(), task, dataset_specific: true })
    }

    pub fn feedback(&self, style: PromptStyle) -> Result<Cow<'static, str>, PromptError> {
        self.require(&format!("feedback/{}", style.template_file()))
    }

    /// Dataset names with built-in instruction files.
    pub fn builtin_datasets() -> Vec<&'static str> {
        let mut names: Vec<&str> =
            BUILTIN.iter().filter_map(|(p, _)| p.strip_suffix("/system.txt")).filter(|d| *d != "generic").collect();
        names.sort_unstable();
        names
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix("\r\n").or_else(|| s.strip_suffix('\n')).unwrap_or(s)
}

/// Substitutes `{{name}}` placeholders. Unknown or unterminated
/// placeholders are errors; values are inserted verbatim.
pub fn render(template: &str, vars: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after.find("}}").ok_or_else(|| PromptError::Template("unterminated placeholder".to_string()))?;
        let name = after[..close].trim();
        let value =
            vars.get(name).ok_or_else(|| PromptError::Template(format!("unknown placeholder {{{{{name}}}}}")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(name: &str) -> DatasetProfile {
        DatasetProfile { name: name.to_string(), ..Default::default() }
    }

    #[test]
    fn gnehm_extraction_is_the_ict_prompt() {
        let set = TemplateStore::builtin().instructions(PromptStyle::Extraction, &profile("Gnehm"), true).unwrap();
        assert!(set.task.contains("IT/Technology skills"));
        assert!(set.system.contains("information and communication technology (ICT)"));
        assert!(set.dataset_specific);
    }

    #[test]
    fn generic_when_not_specific() {
        let set = TemplateStore::builtin().instructions(PromptStyle::Ner, &profile("gnehm"), false).unwrap();
        assert!(!set.task.contains("IT/Technology"));
        assert!(set.task.contains("'@@' and '##'"));
        assert!(!set.dataset_specific);
    }

    #[test]
    fn parametric_template_for_unknown_dataset() {
        let p = DatasetProfile {
            name: "acme".into(),
            language: "Dutch".into(),
            domain: "logistics".into(),
            skill_type: "skills and competencies".into(),
        };
        let set = TemplateStore::builtin().instructions(PromptStyle::Extraction, &p, true).unwrap();
        assert!(set.task.starts_with(
            "You are given a sentence from a job description in Dutch, in the logistics domain. Extract all the skills and competencies"
        ));
        let err = TemplateStore::builtin().instructions(PromptStyle::Extraction, &profile("acme"), true);
        assert!(err.is_err());
    }

    #[test]
    fn six_builtin_datasets() {
        assert_eq!(
            TemplateStore::builtin_datasets(),
            ["fijo", "gnehm", "green", "kompetencer", "sayfullina", "skillspan"]
        );
    }

    #[test]
    fn override_directory_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("fijo")).unwrap();
        std::fs::write(dir.path().join("fijo/extraction.txt"), "custom task\n").unwrap();
        let set =
            TemplateStore::with_dir(dir.path()).instructions(PromptStyle::Extraction, &profile("fijo"), true).unwrap();
        assert_eq!(set.task, "custom task");
        assert!(set.system.contains("insurance industry in France"));
    }

    #[test]
    fn render_rejects_unknown_placeholder() {
        let vars = BTreeMap::from([("a", "1")]);
        assert_eq!(render("x {{a}} y", &vars).unwrap(), "x 1 y");
        assert!(render("{{b}}", &vars).is_err());
        assert!(render("{{a", &vars).is_err());
    }
}
