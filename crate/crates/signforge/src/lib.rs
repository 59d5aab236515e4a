//! Black-box synthesis of physical text signs that steer the decisions of
//! vision-language models.
//!
//! The toolkit optimizes a *visual prompt*: a short phrase drawn from a
//! generated dictionary, rasterized onto a sign with chosen letter and
//! background colors, and composited into camera frames. A candidate sign is
//! scored by how many frames make a black-box oracle emit the attacker's
//! target decision, and a cross-entropy search drives that count up.
//!
//! Pipeline stages, each a module:
//!
//! * [`domain`]: images, label spaces, scenarios, dictionaries.
//! * [`render`]: sign rasterization, similarity warps, compositing.
//! * [`oracle`]: decision backends (simulated, scripted, HTTP) plus caching.
//! * [`objective`]: the scalar score a candidate sign earns on a scenario set.
//! * [`dictgen`]: LLM-driven phrase dictionary generation.
//! * [`ceopt`]: cross-entropy optimization over discrete search spaces.
//! * [`eval`]: attack success rate measurement and reporting.
//! * [`scenegen`]: synthetic scenario generation from pose trajectories.
//! * [`campaign`]: configuration, orchestration, and run artifacts.

pub mod campaign;
pub mod ceopt;
pub mod dictgen;
pub mod domain;
pub mod eval;
pub mod objective;
pub mod oracle;
pub mod render;
pub mod scenegen;
