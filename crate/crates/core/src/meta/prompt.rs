//! Rendering of the composite evolutionary prompt: parent + failure log +
//! best and diverse references, then the generation request with the
//! reflection appended.

use crate::ir::serialize;
use crate::population::CandidateRecord;

use super::{EvolutionContext, SystemInstruction};

pub const NO_FAILURES_MARKER: &str = "(no failures recorded)";
pub const TRUNCATION_MARKER: &str = "[... older log entries truncated ...]";
pub const DUPLICATE_REFERENCE_MARKER: &str =
    "(duplicate of the best workflow: only one archive cell is occupied)";

/// The two prompts of one synthesis round. The generate prompt is a
/// template: the reflection section is appended by the generation stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptPair {
    pub reflect: String,
    pub generate_template: String,
}

/// Keep the newest suffix of `log` within `budget` bytes, marking the cut.
fn truncate_log(log: &str, budget: usize) -> String {
    if log.is_empty() {
        return NO_FAILURES_MARKER.to_string();
    }
    if log.len() <= budget {
        return log.to_string();
    }
    // Newest entries are at the end; keep whole lines from the tail.
    let mut kept: Vec<&str> = Vec::new();
    let mut used = 0;
    for line in log.lines().rev() {
        let extra = line.len() + 1;
        if used + extra > budget {
            break;
        }
        used += extra;
        kept.push(line);
    }
    kept.reverse();
    format!("{TRUNCATION_MARKER}\n{}", kept.join("\n"))
}

fn render_record(title: &str, record: &CandidateRecord) -> String {
    format!(
        "## {title}\nreward {:.6} (mean score {:.4}, mean cost ${:.6}, mean latency {:.4}s)\n```json\n{}\n```\n",
        record.reward,
        record.metrics.mean_score,
        record.metrics.mean_cost,
        record.metrics.mean_latency,
        serialize(&record.graph),
    )
}

fn render_context(ctx: &EvolutionContext, log_budget: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Evolution context (iteration {})\n\n",
        ctx.iteration
    ));
    out.push_str(&render_record("Parent workflow", &ctx.parent));
    out.push_str("\n### Parent failure log (newest last)\n");
    out.push_str(&truncate_log(&ctx.parent.log_excerpt, log_budget));
    out.push_str("\n\n");
    out.push_str(&render_record("Best archived workflow", &ctx.top));
    out.push('\n');
    if ctx.diverse.fingerprint == ctx.top.fingerprint {
        out.push_str(&format!(
            "## Diverse archived workflow\n{DUPLICATE_REFERENCE_MARKER}\n"
        ));
    } else {
        out.push_str(&render_record("Diverse archived workflow", &ctx.diverse));
    }
    out
}

const REFLECT_TEMPLATE: &str = include_str!("../../assets/reflect_prompt.md");
const GENERATE_TEMPLATE: &str = include_str!("../../assets/generate_prompt.md");

/// Build the reflect prompt and the generate template for one context.
/// Both come from versioned text assets with `{{slot}}` substitution.
pub fn build_prompt(
    ctx: &EvolutionContext,
    sys: &SystemInstruction,
    log_budget: usize,
) -> PromptPair {
    let context = render_context(ctx, log_budget);
    let fill = |template: &str| {
        template
            .replace("{{system}}", sys.text())
            .replace("{{context}}", &context)
    };
    PromptPair {
        reflect: fill(REFLECT_TEMPLATE),
        generate_template: fill(GENERATE_TEMPLATE),
    }
}

/// Finish the generate prompt by filling in the diagnosis slot.
pub fn finish_generate_prompt(template: &str, reflection: Option<&str>) -> String {
    let diagnosis = reflection.unwrap_or("(reflection disabled for this run)");
    template.replace("{{diagnosis}}", diagnosis)
}

/// Repair prompt after an unparseable generation: same request with the
/// parser error appended.
pub fn repair_prompt(generate_prompt: &str, parse_error: &str) -> String {
    format!(
        "{generate_prompt}\n# Correction required\n\
         Your previous response could not be used: {parse_error}\n\
         Respond again with exactly one fenced ```json block containing a \
         complete, schema-conforming workflow document.\n"
    )
}
