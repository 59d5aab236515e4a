//! Synthetic scenario generation: a linear time-invariant trajectory model
//! with Gaussian pose noise and camera tilt, plus a flat-shaded top-down
//! rasterizer that turns poses into annotated [`Scenario`]s.
//!
//! The rasterizer draws parametric ground-plane rectangles (rooftops,
//! vehicles, crowds) seen from a downward-looking camera. Photorealism is
//! out of scope: downstream decision rules key on sign geometry and color,
//! so flat shading is enough for offline end-to-end runs.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use std::sync::Arc;

use crate::domain::{DomainError, Image, Label, PixelRect, Rgb, Scenario, Split};

#[derive(Debug, thiserror::Error)]
pub enum SceneGenError {
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("trajectory needs at least one step")]
    ZeroSteps,
    #[error("exogenous input sequence has {found} entries, needs at least {needed}")]
    ExogenousTooShort { needed: usize, found: usize },
    #[error("covariance is asymmetric: |sigma - sigma^T| reaches {max_delta:e}")]
    AsymmetricCovariance { max_delta: f64 },
    #[error("covariance is not positive semi-definite: eigenvalue {eigenvalue:e}")]
    NotPositiveSemiDefinite { eigenvalue: f64 },
    #[error("tilt standard deviation must be finite and non-negative, got {0}")]
    InvalidTiltStd(f64),
    #[error("scene spec invalid: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Discrete-time linear dynamics `x_{k+1} = (A + B) x_k`, or
/// `x_{k+1} = A x_k + B u_k` when an exogenous input sequence is attached.
#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    a: Matrix3<f64>,
    b: Matrix3<f64>,
    x0: Vector3<f64>,
    steps: usize,
    inputs: Option<Vec<Vector3<f64>>>,
}

fn finite_matrix(m: &Matrix3<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn finite_vector(v: &Vector3<f64>) -> bool {
    v.iter().all(|c| c.is_finite())
}

impl TrajectoryModel {
    pub fn new(
        a: Matrix3<f64>,
        b: Matrix3<f64>,
        x0: Vector3<f64>,
        steps: usize,
    ) -> Result<Self, SceneGenError> {
        if !finite_matrix(&a) {
            return Err(SceneGenError::NonFinite { what: "state matrix A" });
        }
        if !finite_matrix(&b) {
            return Err(SceneGenError::NonFinite { what: "input matrix B" });
        }
        if !finite_vector(&x0) {
            return Err(SceneGenError::NonFinite { what: "initial state x0" });
        }
        if steps == 0 {
            return Err(SceneGenError::ZeroSteps);
        }
        Ok(TrajectoryModel {
            a,
            b,
            x0,
            steps,
            inputs: None,
        })
    }

    /// Switches the recurrence to `x_{k+1} = A x_k + B u_k`. Needs one
    /// input per transition (`steps - 1`); extras are ignored.
    pub fn with_exogenous_inputs(
        mut self,
        inputs: Vec<Vector3<f64>>,
    ) -> Result<Self, SceneGenError> {
        let needed = self.steps - 1;
        if inputs.len() < needed {
            return Err(SceneGenError::ExogenousTooShort {
                needed,
                found: inputs.len(),
            });
        }
        if let Some(bad) = inputs.iter().find(|u| !finite_vector(u)) {
            let _ = bad;
            return Err(SceneGenError::NonFinite { what: "exogenous input" });
        }
        self.inputs = Some(inputs);
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

const SYMMETRY_TOLERANCE: f64 = 1e-9;

fn symmetry_defect(sigma: &Matrix3<f64>) -> f64 {
    let mut max_delta = 0.0f64;
    for i in 0..3 {
        for j in (i + 1)..3 {
            max_delta = max_delta.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    max_delta
}

/// Eigen-decomposes a symmetric PSD covariance, rejecting asymmetry and
/// negative eigenvalues beyond tolerance. Tiny negative eigenvalues from
/// roundoff clamp to zero. Returns (eigenvalues, eigenvectors) unsorted.
fn checked_eigen(sigma: &Matrix3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>), SceneGenError> {
    if !finite_matrix(sigma) {
        return Err(SceneGenError::NonFinite { what: "covariance sigma" });
    }
    let max_delta = symmetry_defect(sigma);
    if max_delta > SYMMETRY_TOLERANCE {
        return Err(SceneGenError::AsymmetricCovariance { max_delta });
    }
    let eigen = SymmetricEigen::new(*sigma);
    let max_abs = eigen.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let floor = -SYMMETRY_TOLERANCE * max_abs.max(1.0);
    if let Some(bad) = eigen.eigenvalues.iter().find(|l| **l < floor) {
        return Err(SceneGenError::NotPositiveSemiDefinite { eigenvalue: *bad });
    }
    let clamped = eigen.eigenvalues.map(|l| l.max(0.0));
    Ok((clamped, eigen.eigenvectors))
}

/// Gaussian position noise `w ~ N(mu, sigma)`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    mu: Vector3<f64>,
    sigma: Matrix3<f64>,
    /// `V diag(sqrt(lambda))`: maps standard normals to `N(0, sigma)`.
    factor: Matrix3<f64>,
}

impl NoiseModel {
    pub fn new(mu: Vector3<f64>, sigma: Matrix3<f64>) -> Result<Self, SceneGenError> {
        if !finite_vector(&mu) {
            return Err(SceneGenError::NonFinite { what: "noise mean mu" });
        }
        let (eigenvalues, eigenvectors) = checked_eigen(&sigma)?;
        let factor = eigenvectors * Matrix3::from_diagonal(&eigenvalues.map(f64::sqrt));
        Ok(NoiseModel { mu, sigma, factor })
    }

    /// Noiseless model: every draw returns zero.
    pub fn zero() -> Self {
        NoiseModel::new(Vector3::zeros(), Matrix3::zeros()).expect("zero is PSD")
    }

    pub fn mu(&self) -> &Vector3<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &Matrix3<f64> {
        &self.sigma
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        let xi = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        self.mu + self.factor * xi
    }
}

/// One observed camera pose: noisy position plus tilt angles (radians)
/// about the two horizontal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub tilt: [f64; 2],
}

impl Pose {
    pub fn new(position: Vector3<f64>, tilt: [f64; 2]) -> Result<Self, SceneGenError> {
        if !finite_vector(&position) || !tilt.iter().all(|t| t.is_finite()) {
            return Err(SceneGenError::NonFinite { what: "pose" });
        }
        Ok(Pose { position, tilt })
    }
}

/// Simulates the trajectory and observes it through the noise model:
/// `z_k = x_k + w_k` with `w_k ~ N(mu, sigma)`, tilt angles drawn
/// independently from `N(0, tilt_std^2)` per axis per step. Reproducible
/// by seed.
pub fn simulate_trajectory(
    model: &TrajectoryModel,
    noise: &NoiseModel,
    tilt_std: f64,
    seed: u64,
) -> Result<Vec<Pose>, SceneGenError> {
    if !(tilt_std.is_finite() && tilt_std >= 0.0) {
        return Err(SceneGenError::InvalidTiltStd(tilt_std));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(model.steps);
    let mut x = model.x0;
    for k in 0..model.steps {
        let w = noise.sample(&mut rng);
        let tilt = [
            tilt_std * rng.sample::<f64, _>(StandardNormal),
            tilt_std * rng.sample::<f64, _>(StandardNormal),
        ];
        poses.push(Pose {
            position: x + w,
            tilt,
        });
        if k + 1 < model.steps {
            x = match &model.inputs {
                None => (model.a + model.b) * x,
                Some(inputs) => model.a * x + model.b * inputs[k],
            };
        }
    }
    Ok(poses)
}

/// One principal axis of the pose-noise ellipsoid.
#[derive(Debug, Clone)]
pub struct EllipsoidAxis {
    /// Unit eigenvector of the covariance.
    pub direction: Vector3<f64>,
    /// `sqrt(eigenvalue)`: the standard deviation along the axis.
    pub length: f64,
}

/// The noise cloud's ellipsoid geometry: eigenvector directions with
/// lengths `sqrt(lambda)`, sorted by descending eigenvalue.
pub fn noise_ellipsoid(sigma: &Matrix3<f64>) -> Result<[EllipsoidAxis; 3], SceneGenError> {
    let (eigenvalues, eigenvectors) = checked_eigen(sigma)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]));
    Ok(order.map(|i| EllipsoidAxis {
        direction: eigenvectors.column(i).into_owned(),
        length: eigenvalues[i].sqrt(),
    }))
}

/// A flat-shaded rectangle on the ground plane, in meters.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub name: String,
    /// Ground-plane center (meters).
    pub center: (f64, f64),
    /// Footprint (width, depth) in meters.
    pub size: (f64, f64),
    pub color: Rgb,
    /// Marks the rectangle signs get pasted onto; exactly one per spec.
    pub attack_surface: bool,
    /// Small squares scattered inside the rectangle (people, cargo).
    pub occupants: u32,
    pub occupant_color: Rgb,
}

/// Parametric top-down scene: layout, camera intrinsics, and the label
/// rule (which benign/target decision the layout implies).
#[derive(Debug, Clone)]
pub struct SceneSpec {
    frame_width: u32,
    frame_height: u32,
    background: Rgb,
    /// Altitude (meters) at which one meter maps to `pixels_per_meter`.
    reference_altitude: f64,
    pixels_per_meter: f64,
    /// Camera altitude floor; poses below it clamp to it.
    min_altitude: f64,
    objects: Vec<SceneObject>,
    benign_label: Label,
    target_label: Label,
}

impl SceneSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        frame_width: u32,
        frame_height: u32,
        background: Rgb,
        reference_altitude: f64,
        pixels_per_meter: f64,
        min_altitude: f64,
        objects: Vec<SceneObject>,
        benign_label: Label,
        target_label: Label,
    ) -> Result<Self, SceneGenError> {
        if frame_width == 0 || frame_height == 0 {
            return Err(SceneGenError::InvalidSpec("frame must be non-empty".into()));
        }
        if !(pixels_per_meter.is_finite() && pixels_per_meter > 0.0) {
            return Err(SceneGenError::InvalidSpec(format!(
                "pixels_per_meter must be positive, got {pixels_per_meter}"
            )));
        }
        if !(min_altitude.is_finite()
            && reference_altitude.is_finite()
            && 0.0 < min_altitude
            && min_altitude <= reference_altitude)
        {
            return Err(SceneGenError::InvalidSpec(format!(
                "need 0 < min_altitude <= reference_altitude, got {min_altitude} and {reference_altitude}"
            )));
        }
        if benign_label == target_label {
            return Err(SceneGenError::InvalidSpec(
                "benign and target labels must differ".into(),
            ));
        }
        let surfaces = objects.iter().filter(|o| o.attack_surface).count();
        if surfaces != 1 {
            return Err(SceneGenError::InvalidSpec(format!(
                "need exactly one attack surface, got {surfaces}"
            )));
        }
        for o in &objects {
            let finite = o.center.0.is_finite()
                && o.center.1.is_finite()
                && o.size.0.is_finite()
                && o.size.1.is_finite();
            if !finite || o.size.0 <= 0.0 || o.size.1 <= 0.0 {
                return Err(SceneGenError::InvalidSpec(format!(
                    "object {} needs a finite positive footprint",
                    o.name
                )));
            }
        }
        let spec = SceneSpec {
            frame_width,
            frame_height,
            background,
            reference_altitude,
            pixels_per_meter,
            min_altitude,
            objects,
            benign_label,
            target_label,
        };
        // The out-of-frame fallback recenters on the attack surface at
        // reference altitude; the surface must render usable there, or
        // regeneration could loop.
        let surface = spec.attack_surface();
        let w_px = surface.size.0 * pixels_per_meter;
        let h_px = surface.size.1 * pixels_per_meter;
        if w_px < 2.0 || h_px < 2.0 {
            return Err(SceneGenError::InvalidSpec(format!(
                "attack surface {} renders under 2 px at reference altitude",
                surface.name
            )));
        }
        if w_px >= frame_width as f64 || h_px >= frame_height as f64 {
            return Err(SceneGenError::InvalidSpec(format!(
                "attack surface {} does not fit the frame at reference altitude",
                surface.name
            )));
        }
        Ok(spec)
    }

    pub fn frame_size(&self) -> (u32, u32) {
        (self.frame_width, self.frame_height)
    }

    pub fn attack_surface(&self) -> &SceneObject {
        self.objects
            .iter()
            .find(|o| o.attack_surface)
            .expect("validated at construction")
    }

    pub fn labels(&self) -> (&Label, &Label) {
        (&self.benign_label, &self.target_label)
    }
}

/// Ground-plane meters to frame pixels for one pose: scale by altitude,
/// shear by tilt, recenter on the frame.
struct Projection {
    camera: (f64, f64),
    scale: f64,
    shear: (f64, f64),
    center: (f64, f64),
}

impl Projection {
    fn new(spec: &SceneSpec, pose: &Pose) -> Projection {
        let altitude = pose.position.z.max(spec.min_altitude);
        Projection {
            camera: (pose.position.x, pose.position.y),
            scale: spec.pixels_per_meter * spec.reference_altitude / altitude,
            shear: (pose.tilt[0].tan(), pose.tilt[1].tan()),
            center: (
                spec.frame_width as f64 / 2.0,
                spec.frame_height as f64 / 2.0,
            ),
        }
    }

    fn project(&self, gx: f64, gy: f64) -> (f64, f64) {
        let dx = (gx - self.camera.0) * self.scale;
        let dy = (gy - self.camera.1) * self.scale;
        (
            self.center.0 + dx + self.shear.0 * dy,
            self.center.1 + dy + self.shear.1 * dx,
        )
    }

    fn project_rect(&self, center: (f64, f64), size: (f64, f64)) -> [(f64, f64); 4] {
        let (cx, cy) = center;
        let (hw, hh) = (size.0 / 2.0, size.1 / 2.0);
        [
            self.project(cx - hw, cy - hh),
            self.project(cx + hw, cy - hh),
            self.project(cx + hw, cy + hh),
            self.project(cx - hw, cy + hh),
        ]
    }
}

/// Fills a convex quad (consistent winding either way) on the image.
fn fill_quad(image: &mut Image, quad: &[(f64, f64); 4], color: Rgb) {
    let (min_x, max_x) = quad
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (min_y, max_y) = quad
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    if !(min_x.is_finite() && max_x.is_finite() && min_y.is_finite() && max_y.is_finite()) {
        return;
    }
    let x0 = min_x.floor().max(0.0) as u32;
    let y0 = min_y.floor().max(0.0) as u32;
    let x1 = (max_x.ceil().min(image.width() as f64)) as u32;
    let y1 = (max_y.ceil().min(image.height() as f64)) as u32;
    // Winding sign from the signed area; edge tests then share it.
    let area: f64 = (0..4)
        .map(|i| {
            let (ax, ay) = quad[i];
            let (bx, by) = quad[(i + 1) % 4];
            ax * by - bx * ay
        })
        .sum();
    let orient = if area >= 0.0 { 1.0 } else { -1.0 };
    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let inside = (0..4).all(|i| {
                let (ax, ay) = quad[i];
                let (bx, by) = quad[(i + 1) % 4];
                orient * ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) >= 0.0
            });
            if inside {
                image.set_pixel(x, y, color);
            }
        }
    }
}

/// A generated scenario plus how it was obtained.
#[derive(Debug, Clone)]
pub struct SceneOutcome {
    pub scenario: Scenario,
    /// The pose actually rendered (the fallback pose when clamped).
    pub pose_used: Pose,
    /// True when the requested pose projected the attack surface out of
    /// frame and the clamped fallback pose was rendered instead.
    pub clamped: bool,
}

fn rect_quad_bounds(quad: &[(f64, f64); 4], width: u32, height: u32) -> Option<PixelRect> {
    let xs: Vec<f64> = quad.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = quad.iter().map(|p| p.1).collect();
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    let min_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x0 = min_x.floor().max(0.0).min(width as f64) as u32;
    let y0 = min_y.floor().max(0.0).min(height as f64) as u32;
    let x1 = max_x.ceil().max(0.0).min(width as f64) as u32;
    let y1 = max_y.ceil().max(0.0).min(height as f64) as u32;
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    PixelRect::new(x0, y0, x1 - x0, y1 - y0).ok()
}

fn rasterize(
    spec: &SceneSpec,
    pose: &Pose,
    seed: u64,
    id: &str,
    split: Split,
) -> Result<Option<Scenario>, SceneGenError> {
    let projection = Projection::new(spec, pose);
    let surface_quad =
        projection.project_rect(spec.attack_surface().center, spec.attack_surface().size);
    let Some(region) = rect_quad_bounds(&surface_quad, spec.frame_width, spec.frame_height)
    else {
        return Ok(None);
    };
    let mut image = Image::filled(spec.frame_width, spec.frame_height, spec.background)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for object in &spec.objects {
        let quad = projection.project_rect(object.center, object.size);
        fill_quad(&mut image, &quad, object.color);
        // Occupants perturb deterministically with the seed; keep the
        // draw count independent of visibility so identical inputs stay
        // byte-identical.
        let occupant_side = 0.12 * object.size.0.min(object.size.1);
        for _ in 0..object.occupants {
            let ux: f64 = rng.random();
            let uy: f64 = rng.random();
            let ox = object.center.0 + (ux - 0.5) * (object.size.0 - occupant_side);
            let oy = object.center.1 + (uy - 0.5) * (object.size.1 - occupant_side);
            let quad = projection.project_rect((ox, oy), (occupant_side, occupant_side));
            fill_quad(&mut image, &quad, object.occupant_color);
        }
    }
    let scenario = Scenario::new(
        id,
        Arc::new(image),
        region,
        spec.benign_label.clone(),
        spec.target_label.clone(),
        split,
    )?;
    Ok(Some(scenario))
}

/// Renders the scene from `pose`. A pose that throws the attack surface
/// out of frame (or produces non-finite geometry) falls back to a clamped
/// pose centered on the surface; the outcome flags the substitution so
/// callers can warn.
pub fn generate_synthetic_scene(
    spec: &SceneSpec,
    pose: &Pose,
    seed: u64,
    id: &str,
    split: Split,
) -> Result<SceneOutcome, SceneGenError> {
    if let Some(scenario) = rasterize(spec, pose, seed, id, split)? {
        return Ok(SceneOutcome {
            scenario,
            pose_used: pose.clone(),
            clamped: false,
        });
    }
    let surface = spec.attack_surface();
    let altitude = pose
        .position
        .z
        .max(spec.min_altitude)
        .min(spec.reference_altitude);
    let fallback = Pose {
        position: Vector3::new(surface.center.0, surface.center.1, altitude),
        tilt: [0.0, 0.0],
    };
    let scenario = rasterize(spec, &fallback, seed, id, split)?.ok_or_else(|| {
        SceneGenError::InvalidSpec(
            "clamped fallback pose still projects the attack surface out of frame".into(),
        )
    })?;
    Ok(SceneOutcome {
        scenario,
        pose_used: fallback,
        clamped: true,
    })
}

/// Splits `total` scenarios into (known, held-out) counts by ratio.
pub fn split_counts(total: usize, known_ratio: f64) -> Result<(usize, usize), SceneGenError> {
    if !(known_ratio.is_finite() && (0.0..=1.0).contains(&known_ratio)) {
        return Err(SceneGenError::InvalidSpec(format!(
            "known_ratio must lie in [0, 1], got {known_ratio}"
        )));
    }
    let known = ((total as f64 * known_ratio).round() as usize).min(total);
    Ok((known, total - known))
}
