//! Periodic meta-level digest of recent programs.
//!
//! Every `interval` generations a meta model reads the recently evaluated
//! programs plus the current global leaders and answers in three sections
//! introduced by the headers `PROGRAM SUMMARIES`, `GLOBAL INSIGHTS` and
//! `RECOMMENDATIONS`. The rendered recommendations are appended to
//! subsequent mutation prompts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{compare_rank, ProgramRecord};
use crate::mutation::prompt::{render_metrics, render_template};

pub const SUMMARIES_HEADER: &str = "PROGRAM SUMMARIES";
pub const INSIGHTS_HEADER: &str = "GLOBAL INSIGHTS";
pub const RECOMMENDATIONS_HEADER: &str = "RECOMMENDATIONS";
/// Global leaders added to every refresh window.
pub const WINDOW_TOP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("meta response unusable: {0}")]
pub struct ScratchpadError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramSummary {
    pub id: String,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scratchpad {
    pub program_summaries: Vec<ProgramSummary>,
    pub global_insights: Vec<String>,
    pub recommendations: Vec<String>,
    pub updated_at_generation: u64,
}

impl Scratchpad {
    pub fn is_empty(&self) -> bool {
        self.global_insights.is_empty() && self.recommendations.is_empty()
    }

    /// Persisted form written next to the run's other artifacts.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Scratchpad (generation {})\n\n", self.updated_at_generation);
        out.push_str(&format!("## {SUMMARIES_HEADER}\n"));
        for s in &self.program_summaries {
            out.push_str(&format!("- {}: {}\n", s.id, s.summary));
        }
        out.push_str(&format!("\n## {INSIGHTS_HEADER}\n"));
        for i in &self.global_insights {
            out.push_str(&format!("- {i}\n"));
        }
        out.push_str(&format!("\n## {RECOMMENDATIONS_HEADER}\n"));
        for (n, r) in self.recommendations.iter().enumerate() {
            out.push_str(&format!("{}. {r}\n", n + 1));
        }
        out
    }
}

/// Prompt fragment for mutation prompts; empty for an empty scratchpad.
pub fn render(pad: &Scratchpad) -> String {
    if pad.is_empty() {
        return String::new();
    }
    let mut out = String::from("# Insights from earlier generations\n");
    for i in &pad.global_insights {
        out.push_str(&format!("- {i}\n"));
    }
    if !pad.recommendations.is_empty() {
        out.push_str("Recommendations for this mutation:\n");
        for (n, r) in pad.recommendations.iter().enumerate() {
            out.push_str(&format!("{}. {r}\n", n + 1));
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Summaries,
    Insights,
    Recommendations,
}

fn header_of(line: &str) -> Option<Section> {
    let bare = line
        .trim()
        .trim_start_matches(['#', '*', ' '])
        .trim_end_matches(['*', ':', ' '])
        .to_ascii_uppercase();
    match bare.as_str() {
        SUMMARIES_HEADER => Some(Section::Summaries),
        INSIGHTS_HEADER => Some(Section::Insights),
        RECOMMENDATIONS_HEADER => Some(Section::Recommendations),
        _ => None,
    }
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    if let Some(rest) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
        return rest.trim();
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    t
}

/// Parses the three sections of a meta reply and caps the recommendations.
pub fn parse_meta_response(
    raw: &str,
    max_recommendations: usize,
    generation: u64,
) -> Result<Scratchpad, ScratchpadError> {
    let mut pad = Scratchpad {
        updated_at_generation: generation,
        ..Scratchpad::default()
    };
    let mut seen = [false; 3];
    let mut current = None;
    for line in raw.lines() {
        if let Some(section) = header_of(line) {
            seen[section as usize] = true;
            current = Some(section);
            continue;
        }
        let item = strip_bullet(line);
        if item.is_empty() {
            continue;
        }
        match current {
            Some(Section::Summaries) => {
                if let Some((id, summary)) = item.split_once(':') {
                    pad.program_summaries.push(ProgramSummary {
                        id: id.trim().trim_matches('`').to_string(),
                        summary: summary.trim().to_string(),
                    });
                }
            }
            Some(Section::Insights) => pad.global_insights.push(item.to_string()),
            Some(Section::Recommendations) => pad.recommendations.push(item.to_string()),
            None => {}
        }
    }
    if !seen[Section::Recommendations as usize] {
        return Err(ScratchpadError(format!(
            "no {RECOMMENDATIONS_HEADER} section found"
        )));
    }
    pad.recommendations.truncate(max_recommendations);
    Ok(pad)
}

/// Recent ids still archived plus the global top entries, in creation order.
pub fn select_window<'a>(
    records: &[&'a ProgramRecord],
    recent_ids: &[String],
) -> Vec<&'a ProgramRecord> {
    let by_id: BTreeMap<&str, &ProgramRecord> =
        records.iter().map(|r| (r.id.as_str(), *r)).collect();
    let mut ranked: Vec<&ProgramRecord> = records.to_vec();
    ranked.sort_by(|a, b| compare_rank(a, b));
    let mut chosen: BTreeMap<&str, &ProgramRecord> = ranked
        .into_iter()
        .take(WINDOW_TOP)
        .map(|r| (r.id.as_str(), r))
        .collect();
    for id in recent_ids {
        if let Some(r) = by_id.get(id.as_str()) {
            chosen.insert(r.id.as_str(), r);
        }
    }
    let mut window: Vec<&ProgramRecord> = chosen.into_values().collect();
    window.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
    window
}

/// Meta prompt over a window. Only public metrics and feedback are shown.
pub fn meta_prompt(
    template: &str,
    task_description: &str,
    language: &str,
    window: &[&ProgramRecord],
    previous: &Scratchpad,
    max_recommendations: usize,
) -> String {
    let mut listing = String::new();
    for r in window {
        listing.push_str(&format!(
            "## Program {} (generation {}, {} patch by {})\n{}\n",
            r.id,
            r.generation,
            r.patch_type,
            r.model_name,
            render_metrics(r)
        ));
        if !r.text_feedback.is_empty() {
            listing.push_str(&format!("Feedback: {}\n", r.text_feedback.trim_end()));
        }
        listing.push_str(&format!(
            "```{language}\n{}\n```\n\n",
            r.mutable_code.trim_end_matches('\n')
        ));
    }
    let previous_text = if previous.recommendations.is_empty() {
        "None yet.".to_string()
    } else {
        previous
            .recommendations
            .iter()
            .enumerate()
            .map(|(n, r)| format!("{}. {r}", n + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut values = BTreeMap::new();
    values.insert("task_description", task_description.to_string());
    values.insert("program_listing", listing.trim_end().to_string());
    values.insert("previous_recommendations", previous_text);
    values.insert("max_recommendations", max_recommendations.to_string());
    render_template(template, &values).trim_end().to_string()
}

/// Whether a refresh is due at `generation`.
pub fn refresh_due(generation: u64, interval: Option<u64>) -> bool {
    matches!(interval, Some(i) if i > 0 && generation > 0 && generation.is_multiple_of(i))
}
