use super::MoitError;

/// Instruction a live language-model client would send to enrich a sparse
/// description. Placeholders: `{name}`, `{smiles}`, `{description}`.
pub const ENRICHMENT_PROMPT: &str = "You are an expert chemist. Below is a molecule's name, its SMILES string and a short \
description taken from a public database. Rewrite the description so that it is more informative about the molecule's \
structure, functional groups, physical and chemical properties, and known uses. Keep every fact in the original \
description, do not invent measurements, and answer with the enriched description only.\n\
Name: {name}\nSMILES: {smiles}\nDescription: {description}";

/// Source of enriched descriptions and descriptive QA pairs.
///
/// Implementations must be deterministic for a given input.
pub trait EnricherClient {
    fn enrich(&self, name: &str, smiles: &str, description: &str) -> Result<String, MoitError>;

    /// Up to `count` `(question, answer)` pairs drawn from `description`.
    fn qa_pairs(&self, description: &str, count: usize) -> Result<Vec<(String, String)>, MoitError>;
}

/// Offline stand-in that works purely on the description text.
#[derive(Clone, Copy, Debug, Default)]
pub struct OfflineEnricher;

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let boundary = matches!(c, '.' | '!' | '?') && chars.get(i + 1).map_or(true, |n| n.is_whitespace());
        if boundary {
            let s = cur.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let rest = cur.trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}

impl EnricherClient for OfflineEnricher {
    /// Collapses whitespace and prefixes the molecule name when the
    /// description does not already mention it.
    fn enrich(&self, name: &str, _smiles: &str, description: &str) -> Result<String, MoitError> {
        let body = description.split_whitespace().collect::<Vec<_>>().join(" ");
        if name.is_empty() || body.to_lowercase().contains(&name.to_lowercase()) {
            Ok(body)
        } else {
            Ok(format!("{name}: {body}"))
        }
    }

    /// Sentence `i` becomes the answer to "What is fact i+1 about this
    /// molecule?".
    fn qa_pairs(&self, description: &str, count: usize) -> Result<Vec<(String, String)>, MoitError> {
        Ok(sentences(description)
            .into_iter()
            .take(count)
            .enumerate()
            .map(|(i, s)| (format!("What is fact {} about this molecule?", i + 1), s))
            .collect())
    }
}
