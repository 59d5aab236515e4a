//! Cross-entropy optimization over mixed categorical/integer spaces.
//!
//! The search space is a product of coordinates (a categorical index or
//! a bounded integer range). Each coordinate's range is partitioned into
//! cells; a factorized piecewise-uniform distribution assigns one
//! probability mass per cell. One iteration draws `n_s` candidates (cell
//! by mass, then a value uniformly inside the cell), scores them, keeps
//! the `n_bar_s` best as elites, and reweights each coordinate's masses
//! toward the cells the elites landed in, with importance weights
//! `gamma = surrogate_score / sampling_density`, exponential smoothing
//! toward the previous masses, and a probability floor so no cell ever
//! becomes unreachable.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Additive constant keeping importance weights positive when an elite's
/// objective score is zero.
pub const SCORE_OFFSET: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CeError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid cell partition: {0}")]
    InvalidPartition(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid optimizer settings: {0}")]
    InvalidSettings(String),
    #[error("cannot select {n_bar} elites from {available} scored candidates")]
    EliteCountExceedsSamples { n_bar: usize, available: usize },
    #[error("elite set is empty")]
    NoElites,
    #[error("candidate coordinate {coordinate} value {value} is outside the partition")]
    PointOutsidePartition { coordinate: usize, value: i64 },
    #[error("objective evaluation failed: {0}")]
    Evaluation(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// One axis of the search space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinate {
    /// An unordered index in `0..size`, one partition cell per value.
    Categorical { size: usize },
    /// An inclusive integer range `[lo, hi]` partitioned into `bins`
    /// near-equal cells.
    BoundedInteger { lo: i64, hi: i64, bins: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    coordinates: Vec<Coordinate>,
}

impl SearchSpace {
    pub fn new(coordinates: Vec<Coordinate>) -> Result<Self, CeError> {
        if coordinates.is_empty() {
            return Err(CeError::InvalidSpace("no coordinates".into()));
        }
        for (i, c) in coordinates.iter().enumerate() {
            match *c {
                Coordinate::Categorical { size } => {
                    if size == 0 {
                        return Err(CeError::InvalidSpace(format!(
                            "coordinate {i}: categorical size must be >= 1"
                        )));
                    }
                }
                Coordinate::BoundedInteger { lo, hi, bins } => {
                    if lo > hi {
                        return Err(CeError::InvalidSpace(format!(
                            "coordinate {i}: lo {lo} > hi {hi}"
                        )));
                    }
                    if bins == 0 {
                        return Err(CeError::InvalidSpace(format!(
                            "coordinate {i}: bins must be >= 1"
                        )));
                    }
                    let span = (hi - lo + 1) as u128;
                    if bins as u128 > span {
                        return Err(CeError::InvalidSpace(format!(
                            "coordinate {i}: {bins} bins over a span of {span} values"
                        )));
                    }
                }
            }
        }
        Ok(SearchSpace { coordinates })
    }

    pub fn coordinates(&self) -> &[Coordinate] {
        &self.coordinates
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    fn bounds(&self, coordinate: usize) -> (i64, i64) {
        match self.coordinates[coordinate] {
            Coordinate::Categorical { size } => (0, size as i64 - 1),
            Coordinate::BoundedInteger { lo, hi, .. } => (lo, hi),
        }
    }

    /// Number of points in the product space, if it fits in u128.
    pub fn cardinality(&self) -> u128 {
        self.coordinates
            .iter()
            .map(|c| match *c {
                Coordinate::Categorical { size } => size as u128,
                Coordinate::BoundedInteger { lo, hi, .. } => (hi - lo + 1) as u128,
            })
            .product()
    }
}

/// A concrete point: one integer per coordinate (categorical values are
/// their indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub values: Vec<i64>,
}

/// Inclusive integer interval of one partition cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: i64,
    pub hi: i64,
}

impl Cell {
    pub fn width(&self) -> u64 {
        (self.hi - self.lo + 1) as u64
    }
}

/// Disjoint cells covering every coordinate's range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPartition {
    cells: Vec<Vec<Cell>>,
}

impl CellPartition {
    /// Canonical partition: one cell per categorical value; bounded
    /// integer ranges split into `bins` contiguous near-equal cells (the
    /// first `span mod bins` cells are one wider).
    pub fn regular(space: &SearchSpace) -> Self {
        let cells = space
            .coordinates()
            .iter()
            .map(|c| match *c {
                Coordinate::Categorical { size } => (0..size as i64)
                    .map(|v| Cell { lo: v, hi: v })
                    .collect(),
                Coordinate::BoundedInteger { lo, hi, bins } => {
                    let span = (hi - lo + 1) as u64;
                    let base = span / bins as u64;
                    let extra = span % bins as u64;
                    let mut cells = Vec::with_capacity(bins);
                    let mut cursor = lo;
                    for b in 0..bins as u64 {
                        let width = base + u64::from(b < extra);
                        let cell = Cell {
                            lo: cursor,
                            hi: cursor + width as i64 - 1,
                        };
                        cursor = cell.hi + 1;
                        cells.push(cell);
                    }
                    cells
                }
            })
            .collect();
        CellPartition { cells }
    }

    pub fn cells(&self, coordinate: usize) -> &[Cell] {
        &self.cells[coordinate]
    }

    pub fn coordinate_count(&self) -> usize {
        self.cells.len()
    }

    /// Index of the cell containing `value` on `coordinate`.
    pub fn locate(&self, coordinate: usize, value: i64) -> Result<usize, CeError> {
        let cells = &self.cells[coordinate];
        let idx = cells.partition_point(|c| c.hi < value);
        if idx < cells.len() && cells[idx].lo <= value && value <= cells[idx].hi {
            Ok(idx)
        } else {
            Err(CeError::PointOutsidePartition { coordinate, value })
        }
    }

    fn validate_against(&self, space: &SearchSpace) -> Result<(), CeError> {
        if self.cells.len() != space.len() {
            return Err(CeError::InvalidPartition(format!(
                "{} coordinates in partition, {} in space",
                self.cells.len(),
                space.len()
            )));
        }
        for (i, cells) in self.cells.iter().enumerate() {
            let (lo, hi) = space.bounds(i);
            if cells.is_empty() {
                return Err(CeError::InvalidPartition(format!("coordinate {i}: no cells")));
            }
            let mut cursor = lo;
            for cell in cells {
                if cell.lo != cursor || cell.hi < cell.lo {
                    return Err(CeError::InvalidPartition(format!(
                        "coordinate {i}: cells not contiguous at {cursor}"
                    )));
                }
                cursor = cell.hi + 1;
            }
            if cursor != hi + 1 {
                return Err(CeError::InvalidPartition(format!(
                    "coordinate {i}: cells cover up to {} but range ends at {hi}",
                    cursor - 1
                )));
            }
        }
        Ok(())
    }
}

/// Factorized piecewise-uniform sampling distribution: per coordinate,
/// one probability mass per partition cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEDistribution {
    alpha: Vec<Vec<f64>>,
    epsilon_floor: f64,
}

const MASS_SUM_TOLERANCE: f64 = 1e-9;

impl CEDistribution {
    pub fn new(alpha: Vec<Vec<f64>>, epsilon_floor: f64) -> Result<Self, CeError> {
        let dist = CEDistribution {
            alpha,
            epsilon_floor,
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    fn validate(&self) -> Result<(), CeError> {
        if !(self.epsilon_floor >= 0.0 && self.epsilon_floor.is_finite()) {
            return Err(CeError::InvalidDistribution(
                "epsilon_floor must be finite and >= 0".into(),
            ));
        }
        if self.alpha.is_empty() {
            return Err(CeError::InvalidDistribution("no coordinates".into()));
        }
        for (i, masses) in self.alpha.iter().enumerate() {
            if masses.is_empty() {
                return Err(CeError::InvalidDistribution(format!(
                    "coordinate {i} has no masses"
                )));
            }
            if self.epsilon_floor * masses.len() as f64 > 1.0 + MASS_SUM_TOLERANCE {
                return Err(CeError::InvalidDistribution(format!(
                    "coordinate {i}: floor {} infeasible for {} cells",
                    self.epsilon_floor,
                    masses.len()
                )));
            }
            let sum: f64 = masses.iter().sum();
            if (sum - 1.0).abs() > MASS_SUM_TOLERANCE {
                return Err(CeError::InvalidDistribution(format!(
                    "coordinate {i}: masses sum to {sum}"
                )));
            }
            for (j, &m) in masses.iter().enumerate() {
                if !m.is_finite() || m < 0.0 {
                    return Err(CeError::InvalidDistribution(format!(
                        "coordinate {i} cell {j}: mass {m}"
                    )));
                }
                if m + MASS_SUM_TOLERANCE < self.epsilon_floor {
                    return Err(CeError::InvalidDistribution(format!(
                        "coordinate {i} cell {j}: mass {m} below floor {}",
                        self.epsilon_floor
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Uniform masses per coordinate.
pub fn init_distribution(
    partition: &CellPartition,
    epsilon_floor: f64,
) -> Result<CEDistribution, CeError> {
    let alpha = (0..partition.coordinate_count())
        .map(|c| {
            let m = partition.cells(c).len();
            vec![1.0 / m as f64; m]
        })
        .collect();
    CEDistribution::new(alpha, epsilon_floor)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream per (seed, iteration, candidate).
fn stream_seed(seed: u64, iteration: u64, candidate: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(iteration.wrapping_add(1))) ^ candidate.wrapping_add(1))
}

/// One drawn candidate with the probability the sampler assigned it.
#[derive(Debug, Clone)]
pub struct SampledPoint {
    pub point: CandidatePoint,
    pub density: f64,
}

/// Draws `n_s` candidates: per coordinate a cell by its mass, then an
/// integer uniformly inside the cell. `density` is the exact product of
/// per-coordinate point probabilities (mass / cell width). Fully
/// reproducible from `(seed, iteration)`.
pub fn sample(
    dist: &CEDistribution,
    partition: &CellPartition,
    n_s: usize,
    seed: u64,
    iteration: u64,
) -> Result<Vec<SampledPoint>, CeError> {
    if n_s == 0 {
        return Err(CeError::InvalidSettings("n_s must be >= 1".into()));
    }
    if dist.alpha.len() != partition.coordinate_count() {
        return Err(CeError::InvalidDistribution(format!(
            "{} coordinates in distribution, {} in partition",
            dist.alpha.len(),
            partition.coordinate_count()
        )));
    }
    let mut out = Vec::with_capacity(n_s);
    for candidate in 0..n_s {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, iteration, candidate as u64));
        let mut values = Vec::with_capacity(dist.alpha.len());
        let mut density = 1.0f64;
        for (c, masses) in dist.alpha.iter().enumerate() {
            let cells = partition.cells(c);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = cells.len() - 1;
            for (j, &mass) in masses.iter().enumerate() {
                acc += mass;
                if u < acc {
                    chosen = j;
                    break;
                }
            }
            let cell = cells[chosen];
            let value = if cell.lo == cell.hi {
                cell.lo
            } else {
                rng.random_range(cell.lo..=cell.hi)
            };
            values.push(value);
            density *= masses[chosen] / cell.width() as f64;
        }
        out.push(SampledPoint {
            point: CandidatePoint { values },
            density,
        });
    }
    Ok(out)
}

/// A scored candidate as consumed by elite selection and the update.
#[derive(Debug, Clone)]
pub struct ScoredPoint {
    pub point: CandidatePoint,
    pub score: f64,
    pub density: f64,
}

/// The `n_bar_s` best candidates of one iteration, scores non-increasing.
#[derive(Debug, Clone)]
pub struct EliteSet {
    candidates: Vec<ScoredPoint>,
}

impl EliteSet {
    pub fn candidates(&self) -> &[ScoredPoint] {
        &self.candidates
    }
}

/// Top `n_bar` by score; ties broken by higher sampling density, then by
/// original sample index.
pub fn select_elites(scored: &[ScoredPoint], n_bar: usize) -> Result<EliteSet, CeError> {
    if n_bar == 0 {
        return Err(CeError::InvalidSettings("n_bar_s must be >= 1".into()));
    }
    if n_bar > scored.len() {
        return Err(CeError::EliteCountExceedsSamples {
            n_bar,
            available: scored.len(),
        });
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .score
            .partial_cmp(&scored[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                scored[b]
                    .density
                    .partial_cmp(&scored[a].density)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    Ok(EliteSet {
        candidates: order[..n_bar].iter().map(|&i| scored[i].clone()).collect(),
    })
}

/// Clamps masses to the floor and renormalizes, iterating because the
/// renormalization can push further masses below the floor.
fn apply_floor(masses: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        return;
    }
    for _ in 0..masses.len() + 1 {
        let mut fixed_mass = 0.0;
        let mut free_mass = 0.0;
        let mut any_below = false;
        for &m in masses.iter() {
            if m <= floor {
                any_below = any_below || m < floor;
                fixed_mass += floor;
            } else {
                free_mass += m;
            }
        }
        if !any_below {
            break;
        }
        let scale = (1.0 - fixed_mass) / free_mass;
        for m in masses.iter_mut() {
            if *m <= floor {
                *m = floor;
            } else {
                *m *= scale;
            }
        }
    }
    let sum: f64 = masses.iter().sum();
    for m in masses.iter_mut() {
        *m /= sum;
    }
}

/// Reweights each coordinate's masses toward the elites' cells.
///
/// Each elite contributes `gamma = (max(score, 0) + SCORE_OFFSET) /
/// density` to the cell it landed in; the normalized per-cell totals are
/// mixed with the previous masses (`new = (1 - rho) * raw + rho * old`)
/// and clamped to the floor. When every elite's score is zero or below
/// the iteration carried no signal and `dist` is returned unchanged.
pub fn update_distribution(
    dist: &CEDistribution,
    partition: &CellPartition,
    elites: &EliteSet,
    rho_smooth: f64,
) -> Result<CEDistribution, CeError> {
    if elites.candidates.is_empty() {
        return Err(CeError::NoElites);
    }
    if !(0.0..=1.0).contains(&rho_smooth) || !rho_smooth.is_finite() {
        return Err(CeError::InvalidSettings(format!(
            "rho_smooth {rho_smooth} outside [0, 1]"
        )));
    }
    for e in &elites.candidates {
        if !(e.density > 0.0) {
            return Err(CeError::InvalidDistribution(format!(
                "elite density {} must be positive",
                e.density
            )));
        }
    }
    if elites.candidates.iter().all(|e| e.score <= 0.0) {
        return Ok(dist.clone());
    }
    let mut alpha = Vec::with_capacity(dist.alpha.len());
    for (c, old) in dist.alpha.iter().enumerate() {
        let mut raw = vec![0.0f64; old.len()];
        for e in &elites.candidates {
            let gamma = (e.score.max(0.0) + SCORE_OFFSET) / e.density;
            let j = partition.locate(c, e.point.values[c])?;
            raw[j] += gamma;
        }
        let total: f64 = raw.iter().sum();
        let mut masses: Vec<f64> = raw
            .iter()
            .zip(old)
            .map(|(&r, &o)| (1.0 - rho_smooth) * (r / total) + rho_smooth * o)
            .collect();
        apply_floor(&mut masses, dist.epsilon_floor);
        alpha.push(masses);
    }
    CEDistribution::new(alpha, dist.epsilon_floor)
}

/// A black-box objective over candidate points. Implementations must be
/// safe to call from parallel workers.
pub trait ObjectiveFn: Sync {
    fn evaluate(&self, point: &CandidatePoint) -> Result<f64, CeError>;
}

impl<F> ObjectiveFn for F
where
    F: Fn(&CandidatePoint) -> Result<f64, CeError> + Sync,
{
    fn evaluate(&self, point: &CandidatePoint) -> Result<f64, CeError> {
        self(point)
    }
}

/// Loop controls. `target_score` stops early once the best candidate
/// reaches it; `max_evaluations` truncates before an iteration that
/// would overrun the budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CeSettings {
    pub max_iterations: u32,
    pub n_s: usize,
    pub n_bar_s: usize,
    pub seed: u64,
    pub rho_smooth: f64,
    pub epsilon_floor: f64,
    pub target_score: Option<f64>,
    pub max_evaluations: Option<u64>,
}

impl Default for CeSettings {
    fn default() -> Self {
        CeSettings {
            max_iterations: 30,
            n_s: 20,
            n_bar_s: 5,
            seed: 0,
            rho_smooth: 0.3,
            epsilon_floor: 1e-3,
            target_score: None,
            max_evaluations: None,
        }
    }
}

impl CeSettings {
    fn validate(&self) -> Result<(), CeError> {
        if self.max_iterations == 0 {
            return Err(CeError::InvalidSettings(
                "max_iterations must be >= 1".into(),
            ));
        }
        if self.n_s == 0 {
            return Err(CeError::InvalidSettings("n_s must be >= 1".into()));
        }
        if self.n_bar_s == 0 || self.n_bar_s > self.n_s {
            return Err(CeError::InvalidSettings(format!(
                "n_bar_s {} must be in [1, n_s = {}]",
                self.n_bar_s, self.n_s
            )));
        }
        if !(0.0..=1.0).contains(&self.rho_smooth) {
            return Err(CeError::InvalidSettings(format!(
                "rho_smooth {} outside [0, 1]",
                self.rho_smooth
            )));
        }
        Ok(())
    }
}

/// Distribution snapshot and bests of one iteration. `alpha` is the
/// distribution the iteration sampled from (before its update).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u32,
    pub alpha: Vec<Vec<f64>>,
    pub best_point: CandidatePoint,
    pub best_score: f64,
    pub best_so_far: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub best_point: CandidatePoint,
    pub best_score: f64,
    pub trace: Vec<IterationTrace>,
    pub final_distribution: CEDistribution,
    pub evaluations: u64,
    /// True when the evaluation budget stopped the loop before
    /// `max_iterations` or the target score.
    pub truncated: bool,
}

/// Runs the sample/score/select/update loop and returns the best point
/// ever evaluated with a per-iteration trace.
pub fn optimize(
    space: &SearchSpace,
    partition: &CellPartition,
    objective: &dyn ObjectiveFn,
    settings: &CeSettings,
) -> Result<OptimizeOutcome, CeError> {
    settings.validate()?;
    partition.validate_against(space)?;
    let mut dist = init_distribution(partition, settings.epsilon_floor)?;
    let mut trace = Vec::new();
    let mut best: Option<(CandidatePoint, f64)> = None;
    let mut evaluations = 0u64;
    let mut truncated = false;

    for iteration in 0..settings.max_iterations {
        if let Some(budget) = settings.max_evaluations {
            if evaluations + settings.n_s as u64 > budget {
                truncated = true;
                break;
            }
        }
        let sampled = sample(&dist, partition, settings.n_s, settings.seed, iteration as u64)?;
        let scores: Result<Vec<f64>, CeError> = sampled
            .par_iter()
            .map(|s| objective.evaluate(&s.point))
            .collect();
        let scores = scores?;
        evaluations += settings.n_s as u64;
        let scored: Vec<ScoredPoint> = sampled
            .into_iter()
            .zip(scores)
            .map(|(s, score)| ScoredPoint {
                point: s.point,
                score,
                density: s.density,
            })
            .collect();

        let iter_best = scored
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| {
                a.score
                    .partial_cmp(&b.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(bi.cmp(ai))
            })
            .map(|(_, s)| s.clone())
            .expect("n_s >= 1 candidates");
        let improved = best
            .as_ref()
            .map(|(_, s)| iter_best.score > *s)
            .unwrap_or(true);
        if improved {
            best = Some((iter_best.point.clone(), iter_best.score));
        }
        let best_so_far = best.as_ref().map(|(_, s)| *s).expect("set above");
        trace.push(IterationTrace {
            iteration,
            alpha: dist.alpha().to_vec(),
            best_point: iter_best.point.clone(),
            best_score: iter_best.score,
            best_so_far,
            evaluations,
        });

        if settings.target_score.is_some_and(|t| best_so_far >= t) {
            break;
        }
        let elites = select_elites(&scored, settings.n_bar_s)?;
        dist = update_distribution(&dist, partition, &elites, settings.rho_smooth)?;
    }

    let (best_point, best_score) = best.ok_or_else(|| {
        CeError::InvalidSettings("evaluation budget below one iteration".into())
    })?;
    Ok(OptimizeOutcome {
        best_point,
        best_score,
        trace,
        final_distribution: dist,
        evaluations,
        truncated,
    })
}

/// Uniform random search over the raw space: the query-budget baseline.
pub fn random_search(
    space: &SearchSpace,
    objective: &dyn ObjectiveFn,
    evaluations: u64,
    seed: u64,
) -> Result<(CandidatePoint, f64), CeError> {
    if evaluations == 0 {
        return Err(CeError::InvalidSettings(
            "random search needs at least one evaluation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let mut best: Option<(CandidatePoint, f64)> = None;
    for _ in 0..evaluations {
        let values = (0..space.len())
            .map(|c| {
                let (lo, hi) = space.bounds(c);
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect();
        let point = CandidatePoint { values };
        let score = objective.evaluate(&point)?;
        if best.as_ref().map(|(_, s)| score > *s).unwrap_or(true) {
            best = Some((point, score));
        }
    }
    Ok(best.expect("at least one evaluation"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_cell_partition() -> (SearchSpace, CellPartition) {
        let space = SearchSpace::new(vec![Coordinate::BoundedInteger {
            lo: 0,
            hi: 9,
            bins: 2,
        }])
        .unwrap();
        let partition = CellPartition::regular(&space);
        (space, partition)
    }

    fn scored(values: Vec<i64>, score: f64, density: f64) -> ScoredPoint {
        ScoredPoint {
            point: CandidatePoint { values },
            score,
            density,
        }
    }

    #[test]
    fn regular_partition_splits_ranges_evenly() {
        let space = SearchSpace::new(vec![
            Coordinate::Categorical { size: 3 },
            Coordinate::BoundedInteger {
                lo: 0,
                hi: 255,
                bins: 8,
            },
            Coordinate::BoundedInteger {
                lo: 0,
                hi: 9,
                bins: 4,
            },
        ])
        .unwrap();
        let p = CellPartition::regular(&space);
        assert_eq!(p.cells(0).len(), 3);
        assert!(p.cells(1).iter().all(|c| c.width() == 32));
        assert_eq!(p.cells(1)[7], Cell { lo: 224, hi: 255 });
        // 10 values over 4 bins: widths 3,3,2,2.
        let widths: Vec<u64> = p.cells(2).iter().map(Cell::width).collect();
        assert_eq!(widths, [3, 3, 2, 2]);
        assert_eq!(p.locate(2, 5).unwrap(), 1);
        assert_eq!(p.locate(2, 6).unwrap(), 2);
        assert!(p.locate(2, 10).is_err());
    }

    #[test]
    fn init_distribution_is_uniform_per_coordinate() {
        let space = SearchSpace::new(vec![
            Coordinate::Categorical { size: 4 },
            Coordinate::Categorical { size: 1 },
            Coordinate::BoundedInteger {
                lo: 0,
                hi: 5,
                bins: 3,
            },
            Coordinate::Categorical { size: 2 },
        ])
        .unwrap();
        let d = init_distribution(&CellPartition::regular(&space), 1e-3).unwrap();
        assert_eq!(d.alpha()[0], vec![0.25; 4]);
        assert_eq!(d.alpha()[1], vec![1.0]);
        assert_eq!(d.alpha()[2], vec![1.0 / 3.0; 3]);
        assert_eq!(d.alpha()[3], vec![0.5, 0.5]);
    }

    #[test]
    fn sampling_is_reproducible_and_in_range() {
        let (_, partition) = two_cell_partition();
        let dist = init_distribution(&partition, 1e-3).unwrap();
        let a = sample(&dist, &partition, 50, 7, 3).unwrap();
        let b = sample(&dist, &partition, 50, 7, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.point, y.point);
            assert_eq!(x.density, y.density);
            let v = x.point.values[0];
            assert!((0..=9).contains(&v));
            // Uniform over 2 cells of width 5: density 0.5/5 = 0.1.
            assert!((x.density - 0.1).abs() < 1e-12);
        }
        let c = sample(&dist, &partition, 50, 7, 4).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.point != y.point));
    }

    #[test]
    fn concentrated_distribution_keeps_samples_in_its_cell() {
        // Mass 1 - 3e-3 on cell 1 of 4; at least 99% of 1000 samples must
        // land there (expected 997, sigma ~1.7).
        let space = SearchSpace::new(vec![Coordinate::BoundedInteger {
            lo: 0,
            hi: 39,
            bins: 4,
        }])
        .unwrap();
        let partition = CellPartition::regular(&space);
        let floor = 1e-3;
        let dist = CEDistribution::new(
            vec![vec![floor, 1.0 - 3.0 * floor, floor, floor]],
            floor,
        )
        .unwrap();
        let samples = sample(&dist, &partition, 1000, 11, 0).unwrap();
        let hits = samples
            .iter()
            .filter(|s| (10..20).contains(&s.point.values[0]))
            .count();
        assert!(hits >= 990, "only {hits}/1000 in the concentrated cell");
    }

    #[test]
    fn empirical_cell_frequencies_track_alpha() {
        let space = SearchSpace::new(vec![Coordinate::BoundedInteger {
            lo: 0,
            hi: 63,
            bins: 8,
        }])
        .unwrap();
        let partition = CellPartition::regular(&space);
        let alpha = vec![vec![0.30, 0.05, 0.20, 0.10, 0.05, 0.15, 0.05, 0.10]];
        let dist = CEDistribution::new(alpha.clone(), 1e-3).unwrap();
        let samples = sample(&dist, &partition, 100_000, 42, 0).unwrap();
        let mut counts = [0usize; 8];
        for s in &samples {
            counts[partition.locate(0, s.point.values[0]).unwrap()] += 1;
        }
        let l1: f64 = counts
            .iter()
            .zip(&alpha[0])
            .map(|(&c, &a)| (c as f64 / 100_000.0 - a).abs())
            .sum();
        assert!(l1 <= 0.01, "L1 distance {l1}");
    }

    #[test]
    fn elites_sort_by_score_density_then_index() {
        let rows = vec![
            scored(vec![0], 3.0, 0.1),
            scored(vec![1], 1.0, 0.1),
            scored(vec![2], 2.0, 0.1),
        ];
        let elites = select_elites(&rows, 2).unwrap();
        let picked: Vec<f64> = elites.candidates().iter().map(|e| e.score).collect();
        assert_eq!(picked, [3.0, 2.0]);

        let ties = vec![
            scored(vec![0], 1.0, 0.2),
            scored(vec![1], 1.0, 0.5),
            scored(vec![2], 1.0, 0.5),
        ];
        let elites = select_elites(&ties, 2).unwrap();
        let picked: Vec<i64> = elites
            .candidates()
            .iter()
            .map(|e| e.point.values[0])
            .collect();
        // Density 0.5 beats 0.2; equal densities keep sample order.
        assert_eq!(picked, [1, 2]);

        let all = select_elites(&ties, 3).unwrap();
        assert_eq!(all.candidates().len(), 3);
        assert!(matches!(
            select_elites(&ties, 4),
            Err(CeError::EliteCountExceedsSamples { .. })
        ));
    }

    #[test]
    fn update_concentrates_on_the_elite_cell() {
        let (_, partition) = two_cell_partition();
        let dist = CEDistribution::new(vec![vec![0.5, 0.5]], 0.0).unwrap();
        let elites = EliteSet {
            candidates: vec![
                scored(vec![2], 4.0, 0.1),
                scored(vec![0], 2.0, 0.1),
            ],
        };
        let next = update_distribution(&dist, &partition, &elites, 0.0).unwrap();
        assert_eq!(next.alpha()[0], vec![1.0, 0.0]);
    }

    #[test]
    fn update_splits_evenly_for_symmetric_elites() {
        let (_, partition) = two_cell_partition();
        let dist = CEDistribution::new(vec![vec![0.9, 0.1]], 0.0).unwrap();
        let elites = EliteSet {
            candidates: vec![
                scored(vec![1], 3.0, 0.25),
                scored(vec![8], 3.0, 0.25),
            ],
        };
        let next = update_distribution(&dist, &partition, &elites, 0.0).unwrap();
        let a = next.alpha()[0].clone();
        assert!((a[0] - 0.5).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn update_mixes_with_previous_masses_by_rho() {
        let (_, partition) = two_cell_partition();
        let dist = CEDistribution::new(vec![vec![0.5, 0.5]], 0.0).unwrap();
        let elites = EliteSet {
            candidates: vec![scored(vec![3], 5.0, 0.1)],
        };
        let next = update_distribution(&dist, &partition, &elites, 0.5).unwrap();
        let a = next.alpha()[0].clone();
        assert!((a[0] - 0.75).abs() < 1e-12 && (a[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_iteration_leaves_distribution_unchanged() {
        let (_, partition) = two_cell_partition();
        let dist = CEDistribution::new(vec![vec![0.7, 0.3]], 1e-3).unwrap();
        let elites = EliteSet {
            candidates: vec![
                scored(vec![1], 0.0, 0.1),
                scored(vec![8], -2.0, 0.1),
            ],
        };
        let next = update_distribution(&dist, &partition, &elites, 0.3).unwrap();
        assert_eq!(next, dist);
    }

    #[test]
    fn floor_clamping_preserves_sum_and_floor() {
        let mut masses = vec![0.9995, 0.0003, 0.0002];
        apply_floor(&mut masses, 1e-3);
        let sum: f64 = masses.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(masses.iter().all(|&m| m >= 1e-3 - 1e-12));
        assert!((masses[0] - 0.998).abs() < 1e-9);
    }

    #[test]
    fn optimizer_finds_a_planted_optimum_and_stops_early() {
        let space = SearchSpace::new(vec![
            Coordinate::Categorical { size: 5 },
            Coordinate::BoundedInteger {
                lo: 0,
                hi: 31,
                bins: 4,
            },
        ])
        .unwrap();
        let partition = CellPartition::regular(&space);
        let objective = |p: &CandidatePoint| -> Result<f64, CeError> {
            let cat = if p.values[0] == 3 { 2.0 } else { 0.0 };
            let dist = (p.values[1] - 20).abs() as f64;
            Ok(cat + (10.0 - dist).max(0.0) / 10.0)
        };
        let settings = CeSettings {
            max_iterations: 30,
            n_s: 30,
            n_bar_s: 6,
            seed: 5,
            target_score: Some(3.0),
            ..CeSettings::default()
        };
        let out = optimize(&space, &partition, &objective, &settings).unwrap();
        assert_eq!(out.best_point.values, vec![3, 20]);
        assert_eq!(out.best_score, 3.0);
        assert!(!out.truncated);
        assert!(out.trace.len() <= 30);
        // Early stop: the trace ends the moment the target was reached.
        assert_eq!(out.trace.last().unwrap().best_so_far, 3.0);
        for w in out.trace.windows(2) {
            assert!(w[1].best_so_far >= w[0].best_so_far);
        }
    }

    #[test]
    fn optimizer_rejects_zero_iterations_and_respects_eval_budget() {
        let space = SearchSpace::new(vec![Coordinate::Categorical { size: 4 }]).unwrap();
        let partition = CellPartition::regular(&space);
        let objective = |p: &CandidatePoint| Ok(p.values[0] as f64);
        let bad = CeSettings {
            max_iterations: 0,
            ..CeSettings::default()
        };
        assert!(matches!(
            optimize(&space, &partition, &objective, &bad),
            Err(CeError::InvalidSettings(_))
        ));

        let capped = CeSettings {
            max_iterations: 30,
            n_s: 10,
            n_bar_s: 3,
            max_evaluations: Some(25),
            ..CeSettings::default()
        };
        let out = optimize(&space, &partition, &objective, &capped).unwrap();
        assert!(out.truncated);
        assert_eq!(out.evaluations, 20);
        assert_eq!(out.trace.len(), 2);
    }

    #[test]
    fn perfect_first_iteration_stops_after_one_trace_row() {
        let space = SearchSpace::new(vec![Coordinate::Categorical { size: 2 }]).unwrap();
        let partition = CellPartition::regular(&space);
        let objective = |_: &CandidatePoint| Ok(1.0);
        let settings = CeSettings {
            target_score: Some(1.0),
            ..CeSettings::default()
        };
        let out = optimize(&space, &partition, &objective, &settings).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.best_score, 1.0);
    }

    #[test]
    fn evaluation_errors_propagate() {
        let space = SearchSpace::new(vec![Coordinate::Categorical { size: 2 }]).unwrap();
        let partition = CellPartition::regular(&space);
        let objective = |_: &CandidatePoint| -> Result<f64, CeError> {
            Err(CeError::Evaluation("boom".into()))
        };
        assert!(matches!(
            optimize(&space, &partition, &objective, &CeSettings::default()),
            Err(CeError::Evaluation(_))
        ));
    }

    #[test]
    fn random_search_is_reproducible_and_bounded() {
        let space = SearchSpace::new(vec![
            Coordinate::Categorical { size: 7 },
            Coordinate::BoundedInteger {
                lo: -5,
                hi: 5,
                bins: 1,
            },
        ])
        .unwrap();
        let objective =
            |p: &CandidatePoint| Ok(-((p.values[0] - 4).abs() + (p.values[1] - 2).abs()) as f64);
        let (a_pt, a_score) = random_search(&space, &objective, 400, 9).unwrap();
        let (b_pt, b_score) = random_search(&space, &objective, 400, 9).unwrap();
        assert_eq!(a_pt, b_pt);
        assert_eq!(a_score, b_score);
        assert!((0..7).contains(&a_pt.values[0]));
        assert!((-5..=5).contains(&a_pt.values[1]));
        // 400 uniform draws over 77 points find the optimum w.h.p.
        assert_eq!(a_score, 0.0);
    }

    proptest! {
        #[test]
        fn updates_preserve_distribution_validity(
            seed in 0u64..1000,
            rho in 0.0f64..1.0,
            scores in proptest::collection::vec(0.0f64..50.0, 5),
        ) {
            let space = SearchSpace::new(vec![
                Coordinate::Categorical { size: 6 },
                Coordinate::BoundedInteger { lo: 0, hi: 255, bins: 8 },
            ]).unwrap();
            let partition = CellPartition::regular(&space);
            let dist = init_distribution(&partition, 1e-3).unwrap();
            let sampled = sample(&dist, &partition, 5, seed, 0).unwrap();
            let rows: Vec<ScoredPoint> = sampled
                .into_iter()
                .zip(scores)
                .map(|(s, score)| ScoredPoint { point: s.point, score, density: s.density })
                .collect();
            let elites = select_elites(&rows, 3).unwrap();
            let next = update_distribution(&dist, &partition, &elites, rho).unwrap();
            for masses in next.alpha() {
                let sum: f64 = masses.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                for &m in masses {
                    prop_assert!(m >= 1e-3 - 1e-12);
                }
            }
        }

        #[test]
        fn sampled_points_lie_in_their_located_cells(seed in 0u64..500) {
            let space = SearchSpace::new(vec![
                Coordinate::BoundedInteger { lo: -17, hi: 40, bins: 5 },
            ]).unwrap();
            let partition = CellPartition::regular(&space);
            let dist = init_distribution(&partition, 0.0).unwrap();
            for s in sample(&dist, &partition, 20, seed, 1).unwrap() {
                let v = s.point.values[0];
                prop_assert!((-17..=40).contains(&v));
                let j = partition.locate(0, v).unwrap();
                let cell = partition.cells(0)[j];
                prop_assert!(cell.lo <= v && v <= cell.hi);
                prop_assert!(s.density > 0.0);
            }
        }
    }
}
