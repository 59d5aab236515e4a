//! Dictionary generation: an attacker-LLM propose/score/refine loop.
//!
//! A meta prompt describes the target system and asks the attacker LLM
//! for one sign phrase at a time. Each proposal is rendered naively
//! (black on white, identity placement) onto every training scenario and
//! scored by the fraction of scenarios it flips; the (phrase, score)
//! pair is appended to the meta prompt's history so the next proposal
//! avoids repeats. The loop stops after `k` unique phrases or when the
//! proposal budget runs out, whichever comes first.

use crate::domain::{Dictionary, DictionaryEntry, DomainError, Scenario, TargetPrompt};
use crate::objective::{objective_score, ObjectiveError, QueryHarness};
use crate::oracle::{Oracle, OracleError, OracleRequest};
use crate::render::{AttackParams, PlacementSpec, RenderError, SignSpec};
use crate::domain::Rgb;

const TEMPLATE_V1: &str = include_str!("../assets/meta_prompt_v1.txt");

/// Identifier of the meta-prompt template baked into this build.
pub const META_PROMPT_VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum DictGenError {
    #[error("meta prompt field {0} must not be empty")]
    EmptyField(&'static str),
    #[error("max_words must be at least 1")]
    InvalidMaxWords,
    #[error("dictionary size k must be at least 1")]
    InvalidK,
    #[error("proposal budget must be at least 1")]
    InvalidBudget,
    #[error("dictionary generation needs a non-empty training scenario set")]
    EmptyTrainingSet,
    #[error("attacker LLM reply had no usable phrase")]
    EmptyProposal,
    #[error("attacker LLM query failed: {0}")]
    AttackerLlm(#[from] OracleError),
    #[error("proposed phrase {phrase:?} cannot be rasterized: {source}")]
    UnrenderablePhrase {
        phrase: String,
        source: RenderError,
    },
    #[error("scoring phrase against the target oracle: {0}")]
    Scoring(#[from] ObjectiveError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The attacker LLM's standing brief: task context, attack instructions,
/// and the history of phrases already tried with their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPrompt {
    task_summary: String,
    vehicle_characteristics: String,
    target_prompt_text: String,
    attacker_objective: String,
    attacker_capabilities: String,
    max_words: usize,
    history: Vec<(String, f64)>,
}

fn require_nonempty(value: &str, field: &'static str) -> Result<(), DictGenError> {
    if value.trim().is_empty() {
        return Err(DictGenError::EmptyField(field));
    }
    Ok(())
}

/// Instantiates the versioned template with empty history.
pub fn build_initial_meta_prompt(
    task_summary: &str,
    vehicle_characteristics: &str,
    target_prompt: &TargetPrompt,
    objective: &str,
    capabilities: &str,
    max_words: usize,
) -> Result<MetaPrompt, DictGenError> {
    require_nonempty(task_summary, "task_summary")?;
    require_nonempty(vehicle_characteristics, "vehicle_characteristics")?;
    require_nonempty(objective, "objective")?;
    require_nonempty(capabilities, "capabilities")?;
    if max_words == 0 {
        return Err(DictGenError::InvalidMaxWords);
    }
    Ok(MetaPrompt {
        task_summary: task_summary.to_owned(),
        vehicle_characteristics: vehicle_characteristics.to_owned(),
        target_prompt_text: target_prompt.text().to_owned(),
        attacker_objective: objective.to_owned(),
        attacker_capabilities: capabilities.to_owned(),
        max_words,
        history: Vec::new(),
    })
}

/// Returns a copy of `meta` with `(phrase, score)` appended to the
/// history; a phrase already present is left as first recorded.
pub fn refine_meta_prompt(meta: &MetaPrompt, phrase: &str, score: f64) -> MetaPrompt {
    let mut next = meta.clone();
    let canonical = crate::domain::canonicalize(phrase);
    if !next
        .history
        .iter()
        .any(|(p, _)| crate::domain::canonicalize(p) == canonical)
    {
        next.history.push((phrase.to_owned(), score));
    }
    next
}

impl MetaPrompt {
    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn history(&self) -> &[(String, f64)] {
        &self.history
    }

    fn history_block(&self) -> String {
        if self.history.is_empty() {
            return "No phrases have been tried yet.".to_owned();
        }
        let mut block = String::from(
            "Phrases already tried, with the fraction of training scenes each flipped:\n",
        );
        for (phrase, score) in &self.history {
            block.push_str(&format!("- \"{phrase}\" -> {score:.2}\n"));
        }
        block.push_str("Propose a new phrase different from every phrase listed above.");
        block
    }

    /// Full prompt text sent to the attacker LLM.
    pub fn render(&self) -> String {
        TEMPLATE_V1
            .replace("{task_summary}", &self.task_summary)
            .replace("{vehicle_characteristics}", &self.vehicle_characteristics)
            .replace("{target_prompt}", &self.target_prompt_text)
            .replace("{objective}", &self.attacker_objective)
            .replace("{capabilities}", &self.attacker_capabilities)
            .replace("{max_words}", &self.max_words.to_string())
            .replace("{history}", &self.history_block())
    }
}

/// Reduces an attacker-LLM reply to a candidate phrase: first line,
/// quotes and edge punctuation stripped per word, truncated to
/// `max_words`, canonicalized to lowercase single-spaced form.
fn distill_phrase(reply: &str, max_words: usize) -> String {
    let first_line = reply.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let trim_set: &[char] = &[
        '"', '\'', '`', '.', ',', '!', '?', ';', ':', '(', ')', '[', ']',
    ];
    let words: Vec<&str> = first_line
        .split_whitespace()
        .map(|w| w.trim_matches(trim_set))
        .filter(|w| !w.is_empty())
        .take(max_words)
        .collect();
    crate::domain::canonicalize(&words.join(" "))
}

/// One proposal round: query the attacker LLM with the rendered meta
/// prompt and distill its reply. An unusable (empty) reply is an error
/// the caller may retry within its budget.
pub fn propose_phrase(
    attacker_llm: &dyn Oracle,
    meta: &MetaPrompt,
) -> Result<String, DictGenError> {
    let prompt = TargetPrompt::new(meta.render()).expect("rendered template is non-empty");
    let request = OracleRequest::text_only(prompt);
    let reply = match attacker_llm.query(&request) {
        Ok(response) => response.raw_text,
        // A refusal wastes the round but should not abort the campaign.
        Err(OracleError::Refusal { .. }) => String::new(),
        Err(e) => return Err(DictGenError::AttackerLlm(e)),
    };
    let phrase = distill_phrase(&reply, meta.max_words);
    if phrase.is_empty() {
        return Err(DictGenError::EmptyProposal);
    }
    Ok(phrase)
}

/// Sign styling used while scoring proposals, before perceptual
/// attributes are optimized: maximum-contrast colors at identity
/// placement unless overridden.
#[derive(Debug, Clone)]
pub struct NaiveTheta {
    pub letter_color: Rgb,
    pub background_color: Rgb,
    pub font_scale: u32,
    pub placement: PlacementSpec,
    pub blend_weight: f64,
}

impl Default for NaiveTheta {
    fn default() -> Self {
        NaiveTheta {
            letter_color: Rgb::BLACK,
            background_color: Rgb::WHITE,
            font_scale: 1,
            placement: PlacementSpec::IDENTITY,
            blend_weight: 1.0,
        }
    }
}

fn naive_params(phrase: &str, naive: &NaiveTheta) -> Result<AttackParams, DictGenError> {
    let sign = SignSpec::new(
        phrase,
        naive.letter_color,
        naive.background_color,
        naive.font_scale,
    )
    .map_err(|source| DictGenError::UnrenderablePhrase {
        phrase: phrase.to_owned(),
        source,
    })?;
    AttackParams::new(0, sign, naive.placement.clone(), naive.blend_weight).map_err(|source| {
        DictGenError::UnrenderablePhrase {
            phrase: phrase.to_owned(),
            source,
        }
    })
}

/// Fraction of training scenarios the phrase flips under naive styling.
pub fn score_phrase(
    phrase: &str,
    training_scenarios: &[Scenario],
    naive: &NaiveTheta,
    harness: &QueryHarness,
) -> Result<f64, DictGenError> {
    if training_scenarios.is_empty() {
        return Err(DictGenError::EmptyTrainingSet);
    }
    crate::render::check_phrase_renderable(phrase).map_err(|source| {
        DictGenError::UnrenderablePhrase {
            phrase: phrase.to_owned(),
            source,
        }
    })?;
    let pi = naive_params(phrase, naive)?;
    let probe = Dictionary::new(vec![DictionaryEntry {
        phrase: phrase.to_owned(),
        score: 0.0,
        round: 0,
    }])?;
    let hits = objective_score(&pi, training_scenarios, harness, &probe)?;
    Ok(hits as f64 / training_scenarios.len() as f64)
}

#[derive(Debug, Clone)]
pub struct DictGenConfig {
    pub max_words: usize,
    /// Attacker-LLM call budget; defaults to `3 * k` when `None`.
    pub proposal_budget: Option<usize>,
    pub naive: NaiveTheta,
    pub task_summary: String,
    pub vehicle_characteristics: String,
    pub attacker_objective: String,
    pub attacker_capabilities: String,
}

/// Outcome of the generation loop. `budget_exhausted` warns that fewer
/// than the requested `k` phrases were collected.
#[derive(Debug)]
pub struct DictGenOutcome {
    pub dictionary: Dictionary,
    pub proposals_used: usize,
    pub budget_exhausted: bool,
    pub meta_prompt: MetaPrompt,
}

/// Runs the propose/score/refine loop until `k` unique phrases are
/// collected or the proposal budget is spent. Unusable or duplicate
/// proposals consume budget without adding entries; every accepted entry
/// records the score measured when it was proposed.
pub fn generate_dictionary(
    k: usize,
    training_scenarios: &[Scenario],
    attacker_llm: &dyn Oracle,
    harness: &QueryHarness,
    config: &DictGenConfig,
) -> Result<DictGenOutcome, DictGenError> {
    if k == 0 {
        return Err(DictGenError::InvalidK);
    }
    if training_scenarios.is_empty() {
        return Err(DictGenError::EmptyTrainingSet);
    }
    let budget = config.proposal_budget.unwrap_or(3 * k);
    if budget == 0 {
        return Err(DictGenError::InvalidBudget);
    }
    let mut meta = build_initial_meta_prompt(
        &config.task_summary,
        &config.vehicle_characteristics,
        harness.prompt(),
        &config.attacker_objective,
        &config.attacker_capabilities,
        config.max_words,
    )?;
    let mut entries: Vec<DictionaryEntry> = Vec::new();
    let mut proposals_used = 0usize;
    while entries.len() < k && proposals_used < budget {
        proposals_used += 1;
        let phrase = match propose_phrase(attacker_llm, &meta) {
            Ok(p) => p,
            Err(DictGenError::EmptyProposal) => continue,
            Err(e) => return Err(e),
        };
        if entries
            .iter()
            .any(|e| crate::domain::canonicalize(&e.phrase) == phrase)
        {
            continue;
        }
        let score = match score_phrase(&phrase, training_scenarios, &config.naive, harness) {
            Ok(s) => s,
            // A phrase the font cannot draw wastes the round.
            Err(DictGenError::UnrenderablePhrase { .. }) => continue,
            Err(e) => return Err(e),
        };
        meta = refine_meta_prompt(&meta, &phrase, score);
        entries.push(DictionaryEntry {
            phrase,
            score,
            round: entries.len() as u32,
        });
    }
    let budget_exhausted = entries.len() < k;
    Ok(DictGenOutcome {
        dictionary: Dictionary::new(entries)?,
        proposals_used,
        budget_exhausted,
        meta_prompt: meta,
    })
}
