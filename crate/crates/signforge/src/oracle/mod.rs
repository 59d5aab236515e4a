//! The black-box decision oracle: request/response types, label
//! extraction from raw replies, a deterministic simulated oracle for
//! offline work, a scripted oracle for tests and mock attacker LLMs, an
//! HTTP client for real endpoints, and a disk cache with query counters.

mod cache;
mod http;

pub use cache::CachedOracle;
pub use http::{HttpOracle, HttpOracleConfig};

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{canonicalize, Image, Label, LabelSpace, Rgb, TargetPrompt};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle {provider}: transport failure after {attempts} attempts: {message}")]
    Transport {
        provider: String,
        attempts: u32,
        message: String,
    },
    #[error("oracle {provider}: refused or empty reply: {detail}")]
    Refusal { provider: String, detail: String },
    #[error("oracle {provider}: malformed response: {detail}")]
    Protocol { provider: String, detail: String },
    #[error("oracle configuration: {0}")]
    Configuration(String),
    #[error("query cache at {path}: {detail}")]
    Cache { path: String, detail: String },
}

impl OracleError {
    /// Transport failures may succeed on retry; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, OracleError::Transport { .. })
    }
}

/// Everything the simulated oracle knows about the frame it is judging:
/// the scenario's no-attack decision, the keyword table mapping sign text
/// to decisions, and the rendered sign's legibility facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub benign_label: String,
    /// (keyword phrase, label token) pairs; first match in the sign text
    /// wins, ties broken by table order.
    pub keywords: Vec<(String, String)>,
    pub sign: Option<SignInfo>,
}

/// The rendered sign as the simulated oracle perceives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignInfo {
    pub text: String,
    pub letter_color: Rgb,
    pub background_color: Rgb,
    /// Fraction of frame pixels the sign footprint covers.
    pub visible_area_fraction: f64,
}

/// One query to the target oracle.
#[derive(Debug, Clone)]
pub struct OracleRequest {
    pub prompt: TargetPrompt,
    pub images: Vec<Arc<Image>>,
    /// Forwarded verbatim to remote providers; never relied upon.
    pub temperature_hint: Option<f64>,
    /// Consumed only by the simulated oracle.
    pub scene: Option<SceneMetadata>,
}

impl OracleRequest {
    pub fn new(prompt: TargetPrompt, images: Vec<Arc<Image>>) -> Result<Self, OracleError> {
        if images.is_empty() {
            return Err(OracleError::Configuration(
                "an oracle request needs at least one image".into(),
            ));
        }
        Ok(OracleRequest {
            prompt,
            images,
            temperature_hint: None,
            scene: None,
        })
    }

    /// Image-free request for text-only LLM calls (the attacker-LLM
    /// proposer). Vision oracles still require at least one image; this
    /// constructor is the single sanctioned exception.
    pub fn text_only(prompt: TargetPrompt) -> Self {
        OracleRequest {
            prompt,
            images: Vec::new(),
            temperature_hint: None,
            scene: None,
        }
    }

    pub fn with_scene(mut self, scene: SceneMetadata) -> Self {
        self.scene = Some(scene);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature_hint = Some(t);
        self
    }
}

/// The observable side of the black box.
#[derive(Debug, Clone)]
pub struct OracleResponse {
    pub raw_text: String,
    /// Filled by [`query_and_extract`]; plain [`Oracle::query`] leaves it
    /// empty because extraction needs the campaign label space.
    pub extracted_label: Option<Label>,
    pub latency_ms: u64,
    pub provider_id: String,
}

/// A black-box decider. Implementations must be safe to call from many
/// threads at once.
pub trait Oracle: Send + Sync {
    fn id(&self) -> &str;
    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError>;
}

/// Queries and resolves the raw reply against `space`, so the response
/// carries its extracted label.
pub fn query_and_extract(
    oracle: &dyn Oracle,
    request: &OracleRequest,
    space: &LabelSpace,
) -> Result<OracleResponse, OracleError> {
    let mut response = oracle.query(request)?;
    response.extracted_label = extract_label(&response.raw_text, space);
    Ok(response)
}

/// True when `inner` occurs in `text` starting at `start` on word
/// boundaries (neighbors absent or non-alphanumeric).
fn is_word_bounded(text: &str, start: usize, len: usize) -> bool {
    let before_ok = start == 0
        || text[..start]
            .chars()
            .next_back()
            .is_some_and(|c| !c.is_alphanumeric());
    let after_ok = start + len == text.len()
        || text[start + len..]
            .chars()
            .next()
            .is_some_and(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

fn earliest_bounded_match(text: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    text.match_indices(needle)
        .find(|(start, _)| is_word_bounded(text, *start, needle.len()))
        .map(|(start, _)| start)
}

/// Scans canonicalized `raw_text` for label-space synonyms and returns the
/// label whose synonym match starts earliest. Ties go to the longest
/// synonym, then to label declaration order. Returns `None` when nothing
/// matches; a no-match is a value, not an error.
pub fn extract_label(raw_text: &str, space: &LabelSpace) -> Option<Label> {
    let canon = canonicalize(raw_text);
    let mut best: Option<(usize, usize, usize)> = None; // (start, -len via cmp, label idx)
    for (synonym, label_idx) in space.synonym_entries() {
        let Some(start) = earliest_bounded_match(&canon, synonym) else {
            continue;
        };
        let candidate = (start, synonym.len(), label_idx);
        best = Some(match best {
            None => candidate,
            Some(current) => {
                // Earlier start wins; then longer synonym; then label order.
                let better = candidate.0 < current.0
                    || (candidate.0 == current.0 && candidate.1 > current.1)
                    || (candidate.0 == current.0
                        && candidate.1 == current.1
                        && candidate.2 < current.2);
                if better {
                    candidate
                } else {
                    current
                }
            }
        });
    }
    best.map(|(_, _, idx)| space.label_at(idx))
}

fn srgb_linearize(channel: u8) -> f64 {
    let c = channel as f64 / 255.0;
    if c <= 0.03928 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn relative_luminance(color: Rgb) -> f64 {
    0.2126 * srgb_linearize(color.r())
        + 0.7152 * srgb_linearize(color.g())
        + 0.0722 * srgb_linearize(color.b())
}

/// WCAG-style contrast between two colors: `(L_hi + 0.05)/(L_lo + 0.05)`
/// over sRGB relative luminance. Symmetric, and always ≥ 1.
pub fn contrast_ratio(fg: Rgb, bg: Rgb) -> f64 {
    let a = relative_luminance(fg);
    let b = relative_luminance(bg);
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    (hi + 0.05) / (lo + 0.05)
}

/// Deterministic offline stand-in for a vision-language decider.
///
/// Reads a sign only when it is legible: letter/background contrast at
/// least `c_min` and footprint at least `a_min` of the frame. A legible
/// sign whose text contains a mapped keyword yields that keyword's label;
/// everything else yields the scenario's benign label.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    c_min: f64,
    a_min: f64,
}

impl Default for SimulatedOracle {
    fn default() -> Self {
        SimulatedOracle {
            c_min: 4.5,
            a_min: 0.005,
        }
    }
}

impl SimulatedOracle {
    pub fn new(c_min: f64, a_min: f64) -> Result<Self, OracleError> {
        if !(c_min.is_finite() && c_min >= 1.0) {
            return Err(OracleError::Configuration(format!(
                "contrast threshold {c_min} must be at least 1"
            )));
        }
        if !(a_min.is_finite() && (0.0..=1.0).contains(&a_min)) {
            return Err(OracleError::Configuration(format!(
                "area threshold {a_min} must lie in [0, 1]"
            )));
        }
        Ok(SimulatedOracle { c_min, a_min })
    }

    fn decide(&self, scene: &SceneMetadata) -> String {
        let Some(sign) = &scene.sign else {
            return scene.benign_label.clone();
        };
        if contrast_ratio(sign.letter_color, sign.background_color) < self.c_min
            || sign.visible_area_fraction < self.a_min
        {
            return scene.benign_label.clone();
        }
        let text = canonicalize(&sign.text);
        let mut best: Option<(usize, usize)> = None; // (start, table idx)
        for (idx, (keyword, _)) in scene.keywords.iter().enumerate() {
            let canon_kw = canonicalize(keyword);
            if let Some(start) = earliest_bounded_match(&text, &canon_kw) {
                let replace = match best {
                    None => true,
                    Some((s, i)) => start < s || (start == s && idx < i),
                };
                if replace {
                    best = Some((start, idx));
                }
            }
        }
        match best {
            Some((_, idx)) => scene.keywords[idx].1.clone(),
            None => scene.benign_label.clone(),
        }
    }
}

impl Oracle for SimulatedOracle {
    fn id(&self) -> &str {
        "simulated"
    }

    fn query(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let started = Instant::now();
        let scene = request.scene.as_ref().ok_or_else(|| {
            OracleError::Configuration(
                "simulated oracle requires scene metadata on the request".into(),
            )
        })?;
        let label = self.decide(scene);
        Ok(OracleResponse {
            raw_text: format!("Decision: {label}."),
            extracted_label: None,
            latency_ms: started.elapsed().as_millis() as u64,
            provider_id: self.id().to_owned(),
        })
    }
}

/// Replays a fixed list of replies, cycling when exhausted. Drives tests
/// and the scripted attacker-LLM path.
pub struct ScriptedOracle {
    id: String,
    replies: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedOracle {
    pub fn new(id: impl Into<String>, replies: Vec<String>) -> Result<Self, OracleError> {
        if replies.is_empty() {
            return Err(OracleError::Configuration(
                "scripted oracle needs at least one reply".into(),
            ));
        }
        Ok(ScriptedOracle {
            id: id.into(),
            replies,
            cursor: Mutex::new(0),
        })
    }
}

impl Oracle for ScriptedOracle {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, _request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let mut cursor = self.cursor.lock().expect("scripted cursor poisoned");
        let reply = self.replies[*cursor % self.replies.len()].clone();
        *cursor += 1;
        Ok(OracleResponse {
            raw_text: reply,
            extracted_label: None,
            latency_ms: 0,
            provider_id: self.id.clone(),
        })
    }
}
