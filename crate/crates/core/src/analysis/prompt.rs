//! Prompt assembly for the batch behavioral analysis call.

use super::{AnalysisError, EventDescription};

/// Expert framing sent ahead of the event descriptions.
pub const ANALYSIS_PREAMBLE: &str = "You are an expert in autonomous-vehicle performance \
analysis and training-scenario design. You will be shown narrative descriptions of recent \
safety-critical events involving a learning driving agent. Identify recurring behavioral \
patterns, diagnose their causes, and recommend where training pressure should be applied.";

/// Response-format contract appended to every analysis prompt.
pub const FORMAT_INSTRUCTION: &str = "Respond with exactly four labeled sections, in this \
order and nothing else:\n\
Situation: a synthesis of the common patterns across the events.\n\
Reasoning: the causal factors behind those patterns.\n\
Recommendation: concrete training guidance for the agent.\n\
CriticalArea: the ego-relative regions needing focused training, using only the literal \
tokens Front, Behind, Left, Right (one or more, comma separated).";

/// Reminder appended when a response fails to parse and is re-requested.
pub const FORMAT_REMINDER: &str = "Your previous reply did not follow the required format. \
Reply again with the four labeled sections Situation, Reasoning, Recommendation and \
CriticalArea, where CriticalArea contains only the tokens Front, Behind, Left, Right.";

/// Assemble the deterministic analysis prompt: preamble, numbered
/// event blocks, then the response-format contract.
pub fn build_prompt(descriptions: &[EventDescription]) -> Result<String, AnalysisError> {
    if descriptions.is_empty() {
        return Err(AnalysisError::EmptyBatch);
    }
    let mut out = String::from(ANALYSIS_PREAMBLE);
    out.push_str("\n\n");
    for (i, d) in descriptions.iter().enumerate() {
        out.push_str(&format!("Scenario {}: {}\n", i + 1, d.text));
    }
    out.push('\n');
    out.push_str(FORMAT_INSTRUCTION);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::DescriptionSource;

    fn desc(text: &str) -> EventDescription {
        EventDescription {
            text: text.to_string(),
            source: DescriptionSource::Stub,
        }
    }

    #[test]
    fn numbers_blocks_in_order() {
        let p = build_prompt(&[desc("first event"), desc("second event")]).unwrap();
        assert!(p.contains("Scenario 1: first event"));
        assert!(p.contains("Scenario 2: second event"));
        assert_eq!(p.matches("Scenario ").count(), 2);
    }

    #[test]
    fn always_carries_the_four_labels_and_is_deterministic() {
        let p1 = build_prompt(&[desc("x")]).unwrap();
        let p2 = build_prompt(&[desc("x")]).unwrap();
        assert_eq!(p1, p2);
        for label in ["Situation", "Reasoning", "Recommendation", "CriticalArea"] {
            assert!(p1.contains(label), "missing {label}");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(build_prompt(&[]), Err(AnalysisError::EmptyBatch)));
    }
}
