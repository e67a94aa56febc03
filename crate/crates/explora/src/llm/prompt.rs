//! Prompt templates and byte-deterministic prompt assembly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Exemplar;
use crate::error::{Error, Result};
use crate::pool::ExemplarSubset;

/// Dataset-specific prompt layout.
///
/// `exemplar_template` must use `{question}`, `{rationale}` and `{answer}`;
/// `query_template` must use `{input}`. Blocks are joined by `separator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub instruction: String,
    pub exemplar_template: String,
    pub query_template: String,
    pub separator: String,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec {
            instruction: "You are a helpful, respectful and honest assistant helping to solve \
                          math word problems or tasks requiring reasoning or math. Follow given \
                          examples and solve the problems in step by step manner."
                .to_string(),
            exemplar_template:
                "[Question]: {question}\n[Explanation]: {rationale}\n[Answer]: {answer}"
                    .to_string(),
            query_template: "[Question]: {input}\n\n[Explanation]:".to_string(),
            separator: "\n\n".to_string(),
        }
    }
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        for placeholder in ["{question}", "{rationale}", "{answer}"] {
            if !self.exemplar_template.contains(placeholder) {
                return Err(Error::validation(format!(
                    "exemplar_template is missing placeholder {placeholder}"
                )));
            }
        }
        if !self.query_template.contains("{input}") {
            return Err(Error::validation(
                "query_template is missing placeholder {input}",
            ));
        }
        if self.query_template.contains("{question}")
            || self.query_template.contains("{rationale}")
            || self.query_template.contains("{answer}")
        {
            return Err(Error::validation(
                "query_template may only use the {input} placeholder",
            ));
        }
        if self.exemplar_template.contains("{input}") {
            return Err(Error::validation(
                "exemplar_template may not use the {input} placeholder",
            ));
        }
        Ok(())
    }

    /// Render the query section for one input. The simulator keys on this.
    pub fn render_query(&self, input: &str) -> String {
        self.query_template.replace("{input}", input)
    }

    fn render_exemplar(&self, e: &Exemplar) -> String {
        self.exemplar_template
            .replace("{question}", &e.question)
            .replace("{rationale}", &e.rationale)
            .replace("{answer}", &e.answer)
    }

    /// Read a spec from a `key=value` file with `\n`, `\t`, `\\` escapes.
    /// Keys: `instruction`, `exemplar_template`, `query_template`, `separator`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = PromptSpec {
            instruction: String::new(),
            exemplar_template: String::new(),
            query_template: String::new(),
            separator: String::new(),
        };
        let mut seen = [false; 4];
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| {
                Error::data(path, idx + 1, "expected key=value")
            })?;
            let value = unescape(raw);
            match key.trim() {
                "instruction" => {
                    spec.instruction = value;
                    seen[0] = true;
                }
                "exemplar_template" => {
                    spec.exemplar_template = value;
                    seen[1] = true;
                }
                "query_template" => {
                    spec.query_template = value;
                    seen[2] = true;
                }
                "separator" => {
                    spec.separator = value;
                    seen[3] = true;
                }
                other => {
                    return Err(Error::data(path, idx + 1, format!("unknown key {other:?}")));
                }
            }
        }
        let names = ["instruction", "exemplar_template", "query_template", "separator"];
        for (i, present) in seen.iter().enumerate() {
            if !present {
                return Err(Error::data(path, 0, format!("missing key {:?}", names[i])));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn resolve<'a>(exemplars: &'a [Exemplar], id: u32) -> Result<&'a Exemplar> {
    let e = exemplars
        .get(id as usize)
        .ok_or_else(|| Error::validation(format!("unresolved exemplar id {id}")))?;
    if e.id != id {
        return Err(Error::validation(format!(
            "exemplar pool ids are not contiguous: slot {id} holds id {}",
            e.id
        )));
    }
    Ok(e)
}

/// Assemble a prompt: instruction, each subset's exemplars in prompt order,
/// then the rendered query. Purely a function of its inputs.
pub fn build_prompt(
    subsets: &[ExemplarSubset],
    query: &str,
    exemplars: &[Exemplar],
    spec: &PromptSpec,
) -> Result<String> {
    spec.validate()?;
    let mut parts = Vec::with_capacity(2 + subsets.iter().map(ExemplarSubset::len).sum::<usize>());
    parts.push(spec.instruction.clone());
    for subset in subsets {
        for &id in subset.members() {
            parts.push(spec.render_exemplar(resolve(exemplars, id)?));
        }
    }
    parts.push(spec.render_query(query));
    Ok(parts.join(&spec.separator))
}
