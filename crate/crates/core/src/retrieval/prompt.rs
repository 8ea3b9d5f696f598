use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ReformulatedQuery, RetrievedContext};
use crate::evalkit::AblationConfig;
use crate::generation::CotPlan;
use crate::knowledge::{Records, SchemaElement};

/// Fixed section headers, in prompt order.
pub const SECTION_HEADERS: [&str; 6] = [
    "### INSTRUCTIONS",
    "### EXAMPLES",
    "### SCHEMA",
    "### PLAN",
    "### PERCEIVED ERRORS",
    "### QUERY",
];

/// Rendered bodies of the knowledge sections, after ablation.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptSections {
    pub instructions: String,
    pub examples: String,
    pub schema: String,
}

fn render_schema_line(out: &mut String, el: &SchemaElement) {
    let _ = write!(out, "{} {}", el.id(), el.data_type);
    if !el.top_values.is_empty() {
        let values: Vec<String> =
            el.top_values.iter().map(|tv| format!("{:?} x{}", tv.value, tv.frequency)).collect();
        let _ = write!(out, " top: {}", values.join(", "));
    }
    if let Some(d) = &el.description {
        let _ = write!(out, " -- {d}");
    }
    out.push('\n');
}

/// Renders the instruction, example and schema bodies with `ablation`
/// applied. `records` backs the full schema catalog and source queries.
pub fn prompt_sections(
    context: &RetrievedContext,
    ablation: &AblationConfig,
    records: &Records,
) -> PromptSections {
    let mut sections = PromptSections::default();

    if !ablation.disable_instructions {
        for i in &context.instructions {
            let _ = write!(sections.instructions, "- {}", i.record.text);
            if let Some(frag) = &i.record.sql_fragment {
                let _ = write!(sections.instructions, " [{frag}]");
            }
            sections.instructions.push('\n');
        }
    }

    if !ablation.disable_examples {
        if ablation.disable_decomposition {
            let mut seen = BTreeSet::new();
            for e in &context.examples {
                let source_id = &e.record.substatement.source_query_id;
                if !seen.insert(source_id.clone()) {
                    continue;
                }
                match records.source(source_id) {
                    Some(src) => {
                        let _ = writeln!(sections.examples, "-- {}\n{}\n", src.nl_text, src.sql.trim());
                    }
                    None => {
                        let _ = writeln!(
                            sections.examples,
                            "-- {}\n{}\n",
                            e.record.nl_description, e.record.substatement.text
                        );
                    }
                }
            }
        } else {
            for e in &context.examples {
                let _ = writeln!(
                    sections.examples,
                    "-- {}\n{}\n",
                    e.record.nl_description, e.record.substatement.text
                );
            }
        }
    }

    if ablation.disable_schema_linking {
        for el in records.schema.iter().filter(|e| e.column.is_some()) {
            render_schema_line(&mut sections.schema, el);
        }
    } else {
        for el in &context.schema {
            render_schema_line(&mut sections.schema, &el.record);
        }
    }
    sections
}

/// Lays out the prompt with the fixed headers. PLAN and PERCEIVED ERRORS
/// appear only when given.
pub fn render_prompt(query: &str, sections: &PromptSections, plan: Option<&str>, errors: &[String]) -> String {
    let mut out = String::new();
    let mut section = |header: &str, body: &str| {
        out.push_str(header);
        out.push('\n');
        out.push_str(body.trim_end());
        if !body.trim_end().is_empty() {
            out.push('\n');
        }
        out.push('\n');
    };
    section(SECTION_HEADERS[0], &sections.instructions);
    section(SECTION_HEADERS[1], &sections.examples);
    section(SECTION_HEADERS[2], &sections.schema);
    if let Some(plan) = plan {
        section(SECTION_HEADERS[3], plan);
    }
    if !errors.is_empty() {
        let body: String = errors.iter().map(|e| format!("- {e}\n")).collect();
        section(SECTION_HEADERS[4], &body);
    }
    section(SECTION_HEADERS[5], query);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

/// Full prompt for the SQL generation call.
pub fn assemble_prompt(
    rq: &ReformulatedQuery,
    context: &RetrievedContext,
    plan: Option<&CotPlan>,
    errors: &[String],
    ablation: &AblationConfig,
    records: &Records,
) -> String {
    let sections = prompt_sections(context, ablation, records);
    let plan_text = plan.map(|p| p.render(!ablation.disable_pseudo_sql));
    render_prompt(&rq.canonical, &sections, plan_text.as_deref(), errors)
}

/// Body text of the section under `header`, if present.
pub fn section_body<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let start = prompt.find(&format!("{header}\n"))? + header.len() + 1;
    let rest = &prompt[start..];
    let end = SECTION_HEADERS
        .iter()
        .filter_map(|h| rest.find(&format!("\n{h}\n")))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_context_has_headers_and_query_only() {
        let p = render_prompt("Show me x", &PromptSections::default(), None, &[]);
        assert_eq!(p, "### INSTRUCTIONS\n\n### EXAMPLES\n\n### SCHEMA\n\n### QUERY\nShow me x\n");
    }

    #[test]
    fn errors_are_verbatim_and_ordered() {
        let p = render_prompt(
            "Show me x",
            &PromptSections::default(),
            Some("1. do it"),
            &["no such column: bad_col".to_string()],
        );
        let positions: Vec<usize> = SECTION_HEADERS.iter().map(|h| p.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(section_body(&p, "### PERCEIVED ERRORS"), Some("- no such column: bad_col"));
        assert_eq!(section_body(&p, "### PLAN"), Some("1. do it"));
    }
}
