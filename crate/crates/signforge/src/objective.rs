//! The attack objective: how many scenarios a candidate flips.
//!
//! For a candidate `pi` the score is the sum over scenarios of an
//! indicator that the oracle's decision on the attacked frame equals the
//! scenario's target label. Scores are integers in `[0, n]`; a higher
//! score means the sign steers more scenes. Oracle refusals and replies
//! that match no label count as zero, not as failures; transport and
//! protocol errors abort the evaluation naming the offending scenario.

use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{indicator_match, Dictionary, Image, Label, LabelSpace, Scenario, TargetPrompt};
use crate::oracle::{Oracle, OracleError, OracleRequest, SceneMetadata, SignInfo};
use crate::render::{render_attack, AttackParams, RenderError};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("rendering candidate on scenario {scenario_id}: {source}")]
    Render {
        scenario_id: String,
        source: RenderError,
    },
    #[error("oracle query for scenario {scenario_id}: {source}")]
    Oracle {
        scenario_id: String,
        source: OracleError,
    },
    #[error("objective needs at least one scenario")]
    NoScenarios,
    #[error("keyword table entry {index} names unknown label {label:?}")]
    KeywordLabelUnknown { index: usize, label: String },
    #[error("keyword table entry {index} has an empty keyword")]
    EmptyKeyword { index: usize },
}

/// Everything needed to put one frame in front of the oracle: the oracle
/// itself, the fixed task prompt, the label space replies are read
/// against, and the keyword table shipped to the simulated oracle as
/// scene metadata (a real endpoint ignores it).
pub struct QueryHarness<'a> {
    oracle: &'a dyn Oracle,
    prompt: &'a TargetPrompt,
    space: &'a LabelSpace,
    keywords: &'a [(String, String)],
}

impl<'a> QueryHarness<'a> {
    pub fn new(
        oracle: &'a dyn Oracle,
        prompt: &'a TargetPrompt,
        space: &'a LabelSpace,
        keywords: &'a [(String, String)],
    ) -> Result<Self, ObjectiveError> {
        for (index, (keyword, label)) in keywords.iter().enumerate() {
            if keyword.trim().is_empty() {
                return Err(ObjectiveError::EmptyKeyword { index });
            }
            if space.get(label).is_none() {
                return Err(ObjectiveError::KeywordLabelUnknown {
                    index,
                    label: label.clone(),
                });
            }
        }
        Ok(QueryHarness {
            oracle,
            prompt,
            space,
            keywords,
        })
    }

    pub fn space(&self) -> &LabelSpace {
        self.space
    }

    pub fn prompt(&self) -> &TargetPrompt {
        self.prompt
    }

    fn metadata(&self, scenario: &Scenario, sign: Option<SignInfo>) -> SceneMetadata {
        SceneMetadata {
            benign_label: scenario.benign_label.as_str().to_owned(),
            keywords: self.keywords.to_vec(),
            sign,
        }
    }

    /// Ask the oracle to decide one frame. `Ok(None)` means the reply
    /// matched no label (or the oracle refused); both score as misses.
    pub(crate) fn decide(
        &self,
        scenario: &Scenario,
        frame: Arc<Image>,
        sign: Option<SignInfo>,
    ) -> Result<Option<Label>, OracleError> {
        let request = OracleRequest::new(self.prompt.clone(), vec![frame])
            .expect("one frame supplied")
            .with_scene(self.metadata(scenario, sign));
        match self.oracle.query(&request) {
            Ok(response) => Ok(crate::oracle::extract_label(&response.raw_text, self.space)),
            Err(OracleError::Refusal { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Render `pi` onto one scenario and report whether the oracle's decision
/// hit the scenario's target label.
fn scenario_hit(
    harness: &QueryHarness,
    pi: &AttackParams,
    dictionary: &Dictionary,
    scenario: &Scenario,
) -> Result<u32, ObjectiveError> {
    let rendered = render_attack(scenario, pi, dictionary).map_err(|source| {
        ObjectiveError::Render {
            scenario_id: scenario.id.clone(),
            source,
        }
    })?;
    let sign = SignInfo {
        text: pi.sign.text.clone(),
        letter_color: pi.sign.letter_color,
        background_color: pi.sign.background_color,
        visible_area_fraction: rendered.visible_area_fraction,
    };
    let observed = harness
        .decide(scenario, Arc::new(rendered.image), Some(sign))
        .map_err(|source| ObjectiveError::Oracle {
            scenario_id: scenario.id.clone(),
            source,
        })?;
    match observed {
        Some(label) => {
            indicator_match(&label, &scenario.target_label).map_err(|source| {
                ObjectiveError::Oracle {
                    scenario_id: scenario.id.clone(),
                    source: OracleError::Configuration(source.to_string()),
                }
            })
        }
        None => Ok(0),
    }
}

/// Number of scenarios whose oracle decision under the attack equals the
/// scenario's target. Scenarios are evaluated in parallel; the sum is
/// order-independent.
pub fn objective_score(
    pi: &AttackParams,
    scenarios: &[Scenario],
    harness: &QueryHarness,
    dictionary: &Dictionary,
) -> Result<u32, ObjectiveError> {
    if scenarios.is_empty() {
        return Err(ObjectiveError::NoScenarios);
    }
    pi.validate_against(dictionary).map_err(|source| ObjectiveError::Render {
        scenario_id: "<validation>".into(),
        source,
    })?;
    let hits: Result<Vec<u32>, ObjectiveError> = scenarios
        .par_iter()
        .map(|scenario| scenario_hit(harness, pi, dictionary, scenario))
        .collect();
    Ok(hits?.into_iter().sum())
}
