//! Mutation prompt assembly from text templates.
//!
//! Templates are plain text with `{name}` placeholders. Substitution is a
//! single pass, so braces inside substituted program code are left alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{MutationContext, PatchType, ProgramRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub diff: String,
    pub full: String,
    pub cross: String,
    pub judge: String,
    pub meta: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            diff: include_str!("../../templates/diff.txt").to_string(),
            full: include_str!("../../templates/full.txt").to_string(),
            cross: include_str!("../../templates/cross.txt").to_string(),
            judge: include_str!("../../templates/judge.txt").to_string(),
            meta: include_str!("../../templates/meta.txt").to_string(),
        }
    }
}

impl TemplateSet {
    /// Loads `<name>.txt` files from `dir`, falling back to the bundled
    /// template for any file that is absent.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (name, slot) in [
            ("diff", &mut set.diff),
            ("full", &mut set.full),
            ("cross", &mut set.cross),
            ("judge", &mut set.judge),
            ("meta", &mut set.meta),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    pub fn for_patch(&self, patch_type: PatchType) -> &str {
        match patch_type {
            PatchType::Diff | PatchType::Init => &self.diff,
            PatchType::Full => &self.full,
            PatchType::Cross => &self.cross,
        }
    }
}

/// Replaces `{key}` for every key in `values`; other braces pass through.
pub fn render_template(template: &str, values: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let substituted = tail[1..].find('}').and_then(|close| {
            let key = &tail[1..1 + close];
            values.get(key).map(|v| (v, close + 2))
        });
        match substituted {
            Some((value, consumed)) => {
                out.push_str(value);
                rest = &tail[consumed..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub language: String,
    pub task_description: String,
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            language: "python".into(),
            task_description: "Improve the program so that it achieves a higher combined_score."
                .into(),
        }
    }
}

pub fn render_metrics(record: &ProgramRecord) -> String {
    let mut out = format!("combined_score: {}", record.fitness);
    for (name, value) in &record.public_metrics {
        out.push_str(&format!("\n{name}: {value}"));
    }
    out
}

fn text_feedback_section(record: &ProgramRecord) -> String {
    if record.text_feedback.trim().is_empty() {
        String::new()
    } else {
        format!(
            "\n\nHere is additional text feedback about the current program:\n{}",
            record.text_feedback.trim_end()
        )
    }
}

fn code_block(language: &str, code: &str) -> String {
    format!("```{language}\n{}\n```", code.trim_end_matches('\n'))
}

fn inspirations_section(ctx: &MutationContext, language: &str) -> String {
    let all: Vec<&ProgramRecord> = ctx
        .top_k_inspirations
        .iter()
        .chain(&ctx.random_inspirations)
        .collect();
    if all.is_empty() {
        return String::new();
    }
    let mut out = String::from(
        "\n# Prior programs\nThe following archived programs may provide useful ideas.\n",
    );
    for r in all {
        out.push_str(&format!(
            "\n## Program {} (combined_score: {})\n{}\n",
            r.id,
            r.fitness,
            code_block(language, &r.code)
        ));
    }
    out
}

fn crossover_section(partner: &ProgramRecord, language: &str) -> String {
    format!(
        "# Crossover partner\nCombine ideas from the current program with this second program (combined_score: {}):\n{}\n{}\n",
        partner.fitness,
        code_block(language, &partner.code),
        render_metrics(partner)
    )
}

/// Builds the mutation prompt for one proposal.
pub fn build_prompt(
    ctx: &MutationContext,
    patch_type: PatchType,
    partner: Option<&ProgramRecord>,
    scratchpad: Option<&str>,
    templates: &TemplateSet,
    settings: &PromptSettings,
) -> String {
    let lang = settings.language.as_str();
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    values.insert("language", lang.to_string());
    values.insert(
        "code_content",
        ctx.parent.code.trim_end_matches('\n').to_string(),
    );
    values.insert("performance_metrics", render_metrics(&ctx.parent));
    values.insert("text_feedback_section", text_feedback_section(&ctx.parent));
    values.insert("inspirations_section", inspirations_section(ctx, lang));
    values.insert(
        "crossover_section",
        partner.map(|p| crossover_section(p, lang)).unwrap_or_default(),
    );
    values.insert("task_description", settings.task_description.clone());
    values.insert(
        "scratchpad_section",
        match scratchpad {
            Some(s) if !s.trim().is_empty() => format!("\n{}\n", s.trim_end()),
            _ => String::new(),
        },
    );
    let rendered = render_template(templates.for_patch(patch_type), &values);
    rendered.trim_end_matches('\n').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::test_record;

    fn context() -> MutationContext {
        let mut parent = test_record("gen-000003", 0, 1.25);
        parent.code = "import math\n# EVOLVE-BLOCK-START\nx = {1: 2}\n# EVOLVE-BLOCK-END\n".into();
        parent.public_metrics.insert("num_valid".into(), 26.0);
        parent.public_metrics.insert("area".into(), 0.5);
        parent.text_feedback = "circle 3 overlaps circle 7".into();
        let mut top = test_record("gen-000001", 0, 1.0);
        top.code = "y = 1\n".into();
        let mut rand = test_record("init-1", 1, 0.5);
        rand.code = "z = 0\n".into();
        MutationContext {
            island_id: 0,
            parent,
            top_k_inspirations: vec![top],
            random_inspirations: vec![rand],
        }
    }

    #[test]
    fn single_pass_substitution() {
        let mut v = BTreeMap::new();
        v.insert("a", "{b}".to_string());
        v.insert("b", "B".to_string());
        assert_eq!(render_template("{a}-{b}-{c}-{", &v), "{b}-B-{c}-{");
    }

    #[test]
    fn golden_diff_prompt() {
        let prompt = build_prompt(
            &context(),
            PatchType::Diff,
            None,
            Some("## Recommendations\n1. Try a hexagonal layout."),
            &TemplateSet::default(),
            &PromptSettings::default(),
        );
        let expected = include_str!("../../tests/fixtures/prompt_diff.golden.txt");
        assert_eq!(prompt, expected.trim_end_matches('\n'));
    }

    #[test]
    fn section_order_and_ending() {
        let p = build_prompt(
            &context(),
            PatchType::Diff,
            None,
            None,
            &TemplateSet::default(),
            &PromptSettings::default(),
        );
        let positions: Vec<usize> = [
            "x = {1: 2}",
            "combined_score: 1.25",
            "circle 3 overlaps",
            "## Program gen-000001",
            "## Program init-1",
            "# Task",
        ]
        .iter()
        .map(|needle| p.find(needle).unwrap_or_else(|| panic!("{needle} missing")))
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
        assert!(p.ends_with("Do not rewrite the entire program; change only the lines your idea needs."));
    }

    #[test]
    fn empty_feedback_omits_section() {
        let mut ctx = context();
        ctx.parent.text_feedback = "  ".into();
        let p = build_prompt(&ctx, PatchType::Full, None, None, &TemplateSet::default(), &PromptSettings::default());
        assert!(!p.contains("additional text feedback"));
        assert!(!p.contains("Do not rewrite the entire program"));
    }

    #[test]
    fn crossover_prompt_has_both_programs() {
        let mut partner = test_record("gen-000002", 0, 0.9);
        partner.code = "# EVOLVE-BLOCK-START\nw = 7\n# EVOLVE-BLOCK-END\n".into();
        let ctx = context();
        let p = build_prompt(&ctx, PatchType::Cross, Some(&partner), None, &TemplateSet::default(), &PromptSettings::default());
        assert!(p.contains("x = {1: 2}"));
        assert!(p.contains("w = 7"));
        assert!(p.contains("# Crossover partner"));
    }

    #[test]
    fn scratchpad_is_included_when_present() {
        let p = build_prompt(&context(), PatchType::Full, None, Some("1. Use numpy."), &TemplateSet::default(), &PromptSettings::default());
        assert!(p.contains("1. Use numpy."));
    }
}
