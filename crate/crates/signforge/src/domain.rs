//! Core value types: images, labels, scenarios, prompts, and dictionaries.
//!
//! Everything here is an immutable value. Scenario images sit behind an
//! [`std::sync::Arc`] so scenario sets can be cloned into parallel workers
//! without copying pixel buffers.

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors produced by domain-type constructors and IO helpers.
#[derive(Debug, Error)]
pub enum DomainError {
    #[error("image dimensions {width}x{height} are invalid (zero or too large)")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    PixelBufferMismatch { expected: usize, actual: usize },
    #[error("rectangle {x},{y} {width}x{height} has a zero side")]
    EmptyRect { x: u32, y: u32, width: u32, height: u32 },
    #[error("label space needs at least one label")]
    EmptyLabelSpace,
    #[error("duplicate label {0:?} after canonicalization")]
    DuplicateLabel(String),
    #[error("synonym {synonym:?} maps to both {first:?} and {second:?}")]
    AmbiguousSynonym {
        synonym: String,
        first: String,
        second: String,
    },
    #[error("synonym {synonym:?} refers to unknown label {label:?}")]
    SynonymForUnknownLabel { synonym: String, label: String },
    #[error("label {0:?} is not part of the label space")]
    UnknownLabel(String),
    #[error("labels {left:?} and {right:?} come from different label spaces")]
    LabelSpaceMismatch { left: String, right: String },
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("phrase is empty after canonicalization")]
    EmptyPhrase,
    #[error("duplicate dictionary phrase {0:?}")]
    DuplicatePhrase(String),
    #[error("score {score} for phrase {phrase:?} is outside [0, 1]")]
    ScoreOutOfRange { phrase: String, score: f64 },
    #[error("dictionary line {line} is malformed: {reason}")]
    MalformedDictionaryLine { line: usize, reason: String },
    #[error("scenario {id:?}: placement region exceeds a {width}x{height} image")]
    PlacementOutOfBounds { id: String, width: u32, height: u32 },
    #[error("scenario {id:?}: benign and target label are both {label:?}")]
    DegenerateLabels { id: String, label: String },
    #[error("scenario id is empty")]
    EmptyScenarioId,
    #[error("manifest entry {id:?} duplicates an earlier scenario id")]
    DuplicateScenarioId { id: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png codec error: {0}")]
    Png(String),
    #[error("manifest line {line}: {source}")]
    ManifestJson {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl DomainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DomainError::Io {
            path: path.into(),
            source,
        }
    }
}

/// An 8-bit sRGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);

    pub fn r(&self) -> u8 {
        self.0[0]
    }

    pub fn g(&self) -> u8 {
        self.0[1]
    }

    pub fn b(&self) -> u8 {
        self.0[2]
    }
}

/// Upper bound on total pixels per image; keeps buffer sizes sane.
const MAX_PIXELS: u64 = 1 << 26;

/// An owned RGB8 raster. Row-major, three bytes per pixel, no padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    /// Builds an image from an existing pixel buffer of exactly
    /// `width * height * 3` bytes.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DomainError> {
        if width == 0 || height == 0 || (width as u64) * (height as u64) > MAX_PIXELS {
            return Err(DomainError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(DomainError::PixelBufferMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Builds a solid-color image.
    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, DomainError> {
        if width == 0 || height == 0 || (width as u64) * (height as u64) > MAX_PIXELS {
            return Err(DomainError::InvalidDimensions { width, height });
        }
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(&color.0);
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        debug_assert!(x < self.width && y < self.height);
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Rgb([self.data[i], self.data[i + 1], self.data[i + 2]])
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: Rgb) {
        debug_assert!(x < self.width && y < self.height);
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color.0);
    }

    /// SHA-256 of dimensions plus pixel bytes, as lowercase hex.
    pub fn digest_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.width.to_le_bytes());
        hasher.update(self.height.to_le_bytes());
        hasher.update(&self.data);
        hex_string(&hasher.finalize())
    }

    /// Encodes the image as PNG bytes. Deterministic for identical pixels.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, DomainError> {
        let buf: image::RgbImage =
            image::RgbImage::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length is a type invariant");
        let mut out = Vec::new();
        buf.write_to(
            &mut std::io::Cursor::new(&mut out),
            image::ImageFormat::Png,
        )
        .map_err(|e| DomainError::Png(e.to_string()))?;
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, DomainError> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| DomainError::Png(e.to_string()))?
            .to_rgb8();
        Image::from_raw(decoded.width(), decoded.height(), decoded.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DomainError> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| DomainError::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self, DomainError> {
        let bytes = std::fs::read(path).map_err(|e| DomainError::io(path, e))?;
        Image::from_png_bytes(&bytes)
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// An axis-aligned pixel rectangle with nonzero area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Result<Self, DomainError> {
        if width == 0 || height == 0 {
            return Err(DomainError::EmptyRect {
                x,
                y,
                width,
                height,
            });
        }
        Ok(PixelRect {
            x,
            y,
            width,
            height,
        })
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.width as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.height as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && (x as u64) < self.right() && y >= self.y && (y as u64) < self.bottom()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        )
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        (self.x as u64) < other.right()
            && (other.x as u64) < self.right()
            && (self.y as u64) < other.bottom()
            && (other.y as u64) < self.bottom()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }
}

/// Lowercases, trims, and collapses internal whitespace runs to single
/// spaces. All label and phrase comparisons go through this.
pub fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// A canonical decision token tied to the label space that issued it.
///
/// Labels from different spaces never compare as matching; they fail loudly
/// instead, so a mismatched configuration cannot silently score zero.
#[derive(Debug, Clone)]
pub struct Label {
    token: Arc<str>,
    space: u64,
}

impl Label {
    pub fn as_str(&self) -> &str {
        &self.token
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token)
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space && self.token == other.token
    }
}

impl Eq for Label {}

impl Hash for Label {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.space.hash(state);
        self.token.hash(state);
    }
}

/// Returns 1 when `observed` equals `target`, 0 otherwise.
///
/// Comparing labels minted by different label spaces is a configuration bug
/// and errors rather than returning 0.
pub fn indicator_match(observed: &Label, target: &Label) -> Result<u32, DomainError> {
    if observed.space != target.space {
        return Err(DomainError::LabelSpaceMismatch {
            left: observed.as_str().to_owned(),
            right: target.as_str().to_owned(),
        });
    }
    Ok(u32::from(observed.token == target.token))
}

/// The closed set of decisions an oracle may be mapped onto, plus synonyms.
///
/// Canonical labels are stored in declaration order; every label is
/// implicitly a synonym of itself. The fingerprint binds minted [`Label`]s
/// to this space.
#[derive(Debug, Clone)]
pub struct LabelSpace {
    labels: Vec<Arc<str>>,
    // canonical synonym -> index into labels; includes the labels themselves
    synonyms: HashMap<String, usize>,
    fingerprint: u64,
}

impl LabelSpace {
    /// Builds a space from canonical-ish label strings and per-label synonym
    /// lists. `synonyms` maps a label to extra surface forms.
    pub fn new(
        labels: &[impl AsRef<str>],
        synonyms: &[(impl AsRef<str>, Vec<String>)],
    ) -> Result<Self, DomainError> {
        if labels.is_empty() {
            return Err(DomainError::EmptyLabelSpace);
        }
        let mut canon_labels: Vec<Arc<str>> = Vec::with_capacity(labels.len());
        let mut map: HashMap<String, usize> = HashMap::new();
        for raw in labels {
            let canon = canonicalize(raw.as_ref());
            if canon.is_empty() {
                return Err(DomainError::EmptyPhrase);
            }
            if map.contains_key(&canon) {
                return Err(DomainError::DuplicateLabel(canon));
            }
            map.insert(canon.clone(), canon_labels.len());
            canon_labels.push(Arc::from(canon.as_str()));
        }
        for (label, forms) in synonyms {
            let canon_label = canonicalize(label.as_ref());
            let Some(&idx) = map.get(&canon_label) else {
                return Err(DomainError::SynonymForUnknownLabel {
                    synonym: forms.first().cloned().unwrap_or_default(),
                    label: canon_label,
                });
            };
            for form in forms {
                let canon_form = canonicalize(form);
                if canon_form.is_empty() {
                    return Err(DomainError::EmptyPhrase);
                }
                match map.get(&canon_form) {
                    Some(&existing) if existing != idx => {
                        return Err(DomainError::AmbiguousSynonym {
                            synonym: canon_form,
                            first: canon_labels[existing].to_string(),
                            second: canon_labels[idx].to_string(),
                        });
                    }
                    _ => {
                        map.insert(canon_form, idx);
                    }
                }
            }
        }
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for label in &canon_labels {
            label.hash(&mut hasher);
        }
        let fingerprint = hasher.finish();
        Ok(LabelSpace {
            labels: canon_labels,
            synonyms: map,
            fingerprint,
        })
    }

    /// Mints the label whose canonical form or synonym matches `text`.
    pub fn get(&self, text: &str) -> Option<Label> {
        let canon = canonicalize(text);
        self.synonyms.get(&canon).map(|&idx| Label {
            token: Arc::clone(&self.labels[idx]),
            space: self.fingerprint,
        })
    }

    /// Like [`LabelSpace::get`] but errors with the offending text.
    pub fn require(&self, text: &str) -> Result<Label, DomainError> {
        self.get(text)
            .ok_or_else(|| DomainError::UnknownLabel(text.to_owned()))
    }

    /// Canonical labels in declaration order.
    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.labels.iter().map(|token| Label {
            token: Arc::clone(token),
            space: self.fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// All (canonical synonym, label index) pairs, label forms included.
    /// Iteration order is unspecified.
    pub(crate) fn synonym_entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.synonyms.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub(crate) fn label_at(&self, idx: usize) -> Label {
        Label {
            token: Arc::clone(&self.labels[idx]),
            space: self.fingerprint,
        }
    }
}

/// The fixed instruction text sent to the oracle alongside each frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetPrompt {
    text: String,
}

impl TargetPrompt {
    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyPrompt);
        }
        Ok(TargetPrompt { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Which evaluation pool a scenario belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Used during optimization.
    Known,
    /// Held out; only touched by transfer evaluation.
    Transferability,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Known => f.write_str("known"),
            Split::Transferability => f.write_str("transferability"),
        }
    }
}

/// One attackable camera frame: the clean image, where a sign may legally
/// land, and the benign/target decision pair.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub image: Arc<Image>,
    pub placement_region: PixelRect,
    pub benign_label: Label,
    pub target_label: Label,
    pub split: Split,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        image: Arc<Image>,
        placement_region: PixelRect,
        benign_label: Label,
        target_label: Label,
        split: Split,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyScenarioId);
        }
        if !placement_region.fits_within(image.width(), image.height()) {
            return Err(DomainError::PlacementOutOfBounds {
                id,
                width: image.width(),
                height: image.height(),
            });
        }
        if benign_label == target_label {
            return Err(DomainError::DegenerateLabels {
                label: benign_label.as_str().to_owned(),
                id,
            });
        }
        Ok(Scenario {
            id,
            image,
            placement_region,
            benign_label,
            target_label,
            split,
        })
    }
}

/// One dictionary phrase with the score it earned and the generation round
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub phrase: String,
    pub score: f64,
    pub round: u32,
}

/// An ordered set of candidate phrases with distinct canonical forms and
/// scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dictionary {
    entries: Vec<DictionaryEntry>,
}

impl Dictionary {
    pub fn new(entries: Vec<DictionaryEntry>) -> Result<Self, DomainError> {
        let mut seen: HashMap<String, ()> = HashMap::new();
        for entry in &entries {
            let canon = canonicalize(&entry.phrase);
            if canon.is_empty() {
                return Err(DomainError::EmptyPhrase);
            }
            if !(0.0..=1.0).contains(&entry.score) || !entry.score.is_finite() {
                return Err(DomainError::ScoreOutOfRange {
                    phrase: entry.phrase.clone(),
                    score: entry.score,
                });
            }
            if seen.insert(canon.clone(), ()).is_some() {
                return Err(DomainError::DuplicatePhrase(canon));
            }
        }
        Ok(Dictionary { entries })
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn phrase(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.phrase.as_str())
    }

    pub fn contains_phrase(&self, phrase: &str) -> bool {
        let canon = canonicalize(phrase);
        self.entries
            .iter()
            .any(|e| canonicalize(&e.phrase) == canon)
    }

    /// Entry with the highest score; ties go to the earliest entry.
    pub fn best(&self) -> Option<&DictionaryEntry> {
        self.entries.iter().enumerate().fold(None, |acc, (i, e)| {
            match acc {
                Some((_, best)) if e.score <= DictionaryEntry::score(best) => acc,
                _ => Some((i, e)),
            }
        })
        .map(|(_, e)| e)
    }

    /// Serializes as tab-separated `phrase score round` lines.
    pub fn save_tsv(&self, path: &Path) -> Result<(), DomainError> {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                entry.phrase, entry.score, entry.round
            ));
        }
        std::fs::write(path, out).map_err(|e| DomainError::io(path, e))
    }

    pub fn load_tsv(path: &Path) -> Result<Self, DomainError> {
        let text = std::fs::read_to_string(path).map_err(|e| DomainError::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(phrase), Some(score), Some(round)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(DomainError::MalformedDictionaryLine {
                    line: i + 1,
                    reason: "expected three tab-separated fields".into(),
                });
            };
            if parts.next().is_some() {
                return Err(DomainError::MalformedDictionaryLine {
                    line: i + 1,
                    reason: "more than three fields".into(),
                });
            }
            let score: f64 =
                score
                    .parse()
                    .map_err(|e| DomainError::MalformedDictionaryLine {
                        line: i + 1,
                        reason: format!("bad score: {e}"),
                    })?;
            let round: u32 =
                round
                    .parse()
                    .map_err(|e| DomainError::MalformedDictionaryLine {
                        line: i + 1,
                        reason: format!("bad round: {e}"),
                    })?;
            entries.push(DictionaryEntry {
                phrase: phrase.to_owned(),
                score,
                round,
            });
        }
        Dictionary::new(entries)
    }
}

impl DictionaryEntry {
    fn score(entry: &DictionaryEntry) -> f64 {
        entry.score
    }
}

/// One scenario manifest line. Image paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub image: String,
    pub placement: PixelRect,
    pub benign_label: String,
    pub target_label: String,
    pub split: Split,
}

/// Writes scenarios as `<id>.png` files plus a JSONL manifest in `dir`.
pub fn save_manifest(
    scenarios: &[Scenario],
    dir: &Path,
    manifest_name: &str,
) -> Result<PathBuf, DomainError> {
    std::fs::create_dir_all(dir).map_err(|e| DomainError::io(dir, e))?;
    let manifest_path = dir.join(manifest_name);
    let mut file =
        std::fs::File::create(&manifest_path).map_err(|e| DomainError::io(&manifest_path, e))?;
    for scenario in scenarios {
        let image_name = format!("{}.png", scenario.id);
        scenario.image.save_png(&dir.join(&image_name))?;
        let record = ScenarioRecord {
            id: scenario.id.clone(),
            image: image_name,
            placement: scenario.placement_region,
            benign_label: scenario.benign_label.as_str().to_owned(),
            target_label: scenario.target_label.as_str().to_owned(),
            split: scenario.split,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(file, "{line}").map_err(|e| DomainError::io(&manifest_path, e))?;
    }
    Ok(manifest_path)
}

/// Loads a JSONL manifest, decoding each referenced PNG and minting labels
/// through `space`. Unknown labels and out-of-bounds placements error.
pub fn load_manifest(manifest_path: &Path, space: &LabelSpace) -> Result<Vec<Scenario>, DomainError> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| DomainError::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut scenarios = Vec::new();
    let mut seen_ids: HashMap<String, ()> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScenarioRecord =
            serde_json::from_str(line).map_err(|e| DomainError::ManifestJson {
                line: i + 1,
                source: e,
            })?;
        if seen_ids.insert(record.id.clone(), ()).is_some() {
            return Err(DomainError::DuplicateScenarioId { id: record.id });
        }
        let image = Image::load_png(&base.join(&record.image))?;
        scenarios.push(Scenario::new(
            record.id,
            Arc::new(image),
            record.placement,
            space.require(&record.benign_label)?,
            space.require(&record.target_label)?,
            record.split,
        )?);
    }
    Ok(scenarios)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stop_go_space() -> LabelSpace {
        LabelSpace::new(
            &["stop", "go"],
            &[
                ("stop", vec!["halt".into(), "brake now".into()]),
                ("go", vec!["proceed".into()]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn canonicalize_trims_lowers_and_collapses() {
        assert_eq!(canonicalize("  Stop \t NOW "), "stop now");
        assert_eq!(canonicalize("PROCEED"), "proceed");
        assert_eq!(canonicalize(""), "");
        assert_eq!(canonicalize(" \n\t "), "");
    }

    #[test]
    fn label_space_resolves_synonyms() {
        let space = stop_go_space();
        assert_eq!(space.get("  HALT ").unwrap().as_str(), "stop");
        assert_eq!(space.get("Brake   Now").unwrap().as_str(), "stop");
        assert_eq!(space.get("proceed").unwrap().as_str(), "go");
        assert!(space.get("advance").is_none());
    }

    #[test]
    fn label_space_rejects_ambiguous_synonym() {
        let err = LabelSpace::new(
            &["stop", "go"],
            &[
                ("stop", vec!["move".into()]),
                ("go", vec!["move".into()]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, DomainError::AmbiguousSynonym { .. }));
    }

    #[test]
    fn label_space_rejects_duplicate_labels() {
        let err = LabelSpace::new(&["stop", " STOP "], &[] as &[(&str, Vec<String>)]).unwrap_err();
        assert!(matches!(err, DomainError::DuplicateLabel(_)));
    }

    #[test]
    fn indicator_counts_only_same_space_matches() {
        let space = stop_go_space();
        let a = space.get("stop").unwrap();
        let b = space.get("halt").unwrap();
        let c = space.get("go").unwrap();
        assert_eq!(indicator_match(&a, &b).unwrap(), 1);
        assert_eq!(indicator_match(&a, &c).unwrap(), 0);
    }

    #[test]
    fn indicator_rejects_cross_space_labels() {
        let a = stop_go_space().get("stop").unwrap();
        let other = LabelSpace::new(&["stop", "land"], &[] as &[(&str, Vec<String>)]).unwrap();
        let b = other.get("stop").unwrap();
        assert!(matches!(
            indicator_match(&a, &b),
            Err(DomainError::LabelSpaceMismatch { .. })
        ));
    }

    #[test]
    fn image_round_trips_through_png() {
        let mut img = Image::filled(7, 5, Rgb([10, 20, 30])).unwrap();
        img.set_pixel(3, 2, Rgb([200, 100, 50]));
        let bytes = img.to_png_bytes().unwrap();
        let back = Image::from_png_bytes(&bytes).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.digest_hex(), back.digest_hex());
    }

    #[test]
    fn image_rejects_mismatched_buffer() {
        assert!(matches!(
            Image::from_raw(4, 4, vec![0; 10]),
            Err(DomainError::PixelBufferMismatch { .. })
        ));
        assert!(matches!(
            Image::from_raw(0, 4, vec![]),
            Err(DomainError::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn rect_geometry() {
        let r = PixelRect::new(2, 3, 4, 5).unwrap();
        assert!(r.contains(2, 3));
        assert!(r.contains(5, 7));
        assert!(!r.contains(6, 3));
        assert!(!r.contains(2, 8));
        assert_eq!(r.center(), (4.0, 5.5));
        let other = PixelRect::new(5, 7, 1, 1).unwrap();
        assert!(r.intersects(&other));
        let disjoint = PixelRect::new(6, 3, 2, 2).unwrap();
        assert!(!r.intersects(&disjoint));
        assert!(PixelRect::new(0, 0, 0, 1).is_err());
    }

    #[test]
    fn scenario_validates_bounds_and_labels() {
        let space = stop_go_space();
        let img = Arc::new(Image::filled(10, 10, Rgb::WHITE).unwrap());
        let stop = space.get("stop").unwrap();
        let go = space.get("go").unwrap();
        let rect = PixelRect::new(8, 8, 4, 4).unwrap();
        assert!(matches!(
            Scenario::new("s", Arc::clone(&img), rect, stop.clone(), go.clone(), Split::Known),
            Err(DomainError::PlacementOutOfBounds { .. })
        ));
        let rect = PixelRect::new(0, 0, 10, 10).unwrap();
        assert!(matches!(
            Scenario::new("s", Arc::clone(&img), rect, stop.clone(), stop.clone(), Split::Known),
            Err(DomainError::DegenerateLabels { .. })
        ));
        assert!(Scenario::new("s", img, rect, stop, go, Split::Known).is_ok());
    }

    #[test]
    fn dictionary_round_trips_tsv() {
        let dict = Dictionary::new(vec![
            DictionaryEntry {
                phrase: "proceed onward".into(),
                score: 0.75,
                round: 1,
            },
            DictionaryEntry {
                phrase: "continue ahead".into(),
                score: 1.0 / 3.0,
                round: 2,
            },
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.tsv");
        dict.save_tsv(&path).unwrap();
        let back = Dictionary::load_tsv(&path).unwrap();
        assert_eq!(dict, back);
        assert_eq!(back.best().unwrap().phrase, "proceed onward");
    }

    #[test]
    fn dictionary_rejects_duplicates_and_bad_scores() {
        let dup = Dictionary::new(vec![
            DictionaryEntry {
                phrase: "go on".into(),
                score: 0.5,
                round: 1,
            },
            DictionaryEntry {
                phrase: "  GO   ON".into(),
                score: 0.25,
                round: 2,
            },
        ]);
        assert!(matches!(dup, Err(DomainError::DuplicatePhrase(_))));
        let bad = Dictionary::new(vec![DictionaryEntry {
            phrase: "x".into(),
            score: 1.5,
            round: 0,
        }]);
        assert!(matches!(bad, Err(DomainError::ScoreOutOfRange { .. })));
    }

    #[test]
    fn manifest_round_trips() {
        let space = stop_go_space();
        let img = Arc::new(Image::filled(16, 12, Rgb([3, 4, 5])).unwrap());
        let scenarios = vec![
            Scenario::new(
                "a-000",
                Arc::clone(&img),
                PixelRect::new(1, 2, 5, 5).unwrap(),
                space.get("stop").unwrap(),
                space.get("go").unwrap(),
                Split::Known,
            )
            .unwrap(),
            Scenario::new(
                "a-001",
                img,
                PixelRect::new(0, 0, 16, 12).unwrap(),
                space.get("stop").unwrap(),
                space.get("go").unwrap(),
                Split::Transferability,
            )
            .unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = save_manifest(&scenarios, dir.path(), "scenarios.jsonl").unwrap();
        let back = load_manifest(&path, &space).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "a-000");
        assert_eq!(back[0].image, scenarios[0].image);
        assert_eq!(back[1].split, Split::Transferability);
        assert_eq!(back[1].placement_region, scenarios[1].placement_region);
    }

    #[test]
    fn manifest_rejects_unknown_labels() {
        let space = stop_go_space();
        let img = Arc::new(Image::filled(8, 8, Rgb::WHITE).unwrap());
        let scenario = Scenario::new(
            "b-000",
            img,
            PixelRect::new(0, 0, 8, 8).unwrap(),
            space.get("stop").unwrap(),
            space.get("go").unwrap(),
            Split::Known,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = save_manifest(&[scenario], dir.path(), "scenarios.jsonl").unwrap();
        let narrow = LabelSpace::new(&["land"], &[] as &[(&str, Vec<String>)]).unwrap();
        assert!(matches!(
            load_manifest(&path, &narrow),
            Err(DomainError::UnknownLabel(_))
        ));
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(s in "\\PC*") {
            let once = canonicalize(&s);
            prop_assert_eq!(canonicalize(&once), once);
        }

        #[test]
        fn canonicalize_has_no_edge_or_double_spaces(s in "\\PC*") {
            let c = canonicalize(&s);
            prop_assert!(!c.starts_with(' '));
            prop_assert!(!c.ends_with(' '));
            prop_assert!(!c.contains("  "));
        }
    }
}
