//! Template-polytope reachable sets and closed-loop reachability for linear
//! plants driven by network controllers.
//!
//! A face `cᵀy ≤ d` comes from one branch-and-bound solve of `sup cᵀf(x)`.
//! For a plant `x⁺ = Ax + Bπ(x) + k` the objective is the controller
//! scalarized by `Bᵀc` plus the exact linear term `Aᵀc` and offset `cᵀk`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{node_bounds, solve, solve_zonotope, BnbConfig, BnbStatus};
use crate::error::{check_dim, Error, Result};
use crate::model::{Network, ScalarNetwork};
use crate::sets::{matrix_from_rows, BoxRegion, InputSet, Zonotope};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TemplateKind {
    Axes,
    Uniform(usize),
    Pca,
    Custom,
}

/// Unit face normals.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionTemplate {
    pub dirs: Vec<DVector<f64>>,
    pub kind: TemplateKind,
}

impl DirectionTemplate {
    /// `+e₁, −e₁, +e₂, −e₂, …`.
    pub fn axes(n: usize) -> Self {
        let dirs = (0..n)
            .flat_map(|i| {
                let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
                [e.clone(), -e]
            })
            .collect();
        Self {
            dirs,
            kind: TemplateKind::Axes,
        }
    }

    /// `k` directions evenly spaced on the unit circle.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidInput(format!("uniform template needs at least 3 directions, got {k}")));
        }
        let dirs = (0..k)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                DVector::from_column_slice(&[t.cos(), t.sin()])
            })
            .collect();
        Ok(Self {
            dirs,
            kind: TemplateKind::Uniform(k),
        })
    }

    /// Normalizes the given directions.
    pub fn custom(dirs: Vec<DVector<f64>>) -> Result<Self> {
        let dirs = dirs
            .into_iter()
            .map(|d| {
                let n = d.norm();
                if n > 0.0 && n.is_finite() {
                    Ok(d / n)
                } else {
                    Err(Error::InvalidInput("template direction must be nonzero and finite".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if dirs.is_empty() {
            return Err(Error::InvalidInput("empty direction template".into()));
        }
        Ok(Self {
            dirs,
            kind: TemplateKind::Custom,
        })
    }

    /// `±v` for each principal axis of `points`, largest variance first.
    pub fn pca(points: &[DVector<f64>]) -> Result<Self> {
        let basis = pca_basis(points)?;
        let dirs = basis
            .column_iter()
            .flat_map(|v| {
                let v = v.clone_owned();
                [v.clone(), -v]
            })
            .collect();
        Ok(Self {
            dirs,
            kind: TemplateKind::Pca,
        })
    }

    pub fn dim(&self) -> usize {
        self.dirs.first().map_or(0, DVector::len)
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// Eigenvectors of the sample covariance as columns, ordered by decreasing
/// eigenvalue, each with its largest-magnitude component positive. The basis
/// is orthonormal even when the covariance is singular.
pub fn pca_basis(points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = points.first().map_or(0, DVector::len);
    if n == 0 || points.len() < n + 1 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least dim + 1 = {} points, got {}",
            n + 1,
            points.len()
        )));
    }
    let count = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(n), |acc, p| acc + p) / count;
    let mut cov = DMatrix::zeros(n, n);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov /= count - 1.0;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        let lead = (0..n).fold(0, |b, j| if v[j].abs() > v[b].abs() { j } else { b });
        if v[lead] < 0.0 {
            v = -v;
        }
        basis.set_column(k, &(v.normalize()));
    }
    Ok(basis)
}

/// PCA template of `f(X)` from `n_samples` seeded draws of the input set.
pub fn pca_directions<F>(f: F, input: &InputSet, n_samples: usize, seed: u64) -> Result<DirectionTemplate>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<_> = (0..n_samples).map(|_| f(&input.sample(&mut rng))).collect();
    DirectionTemplate::pca(&pts)
}

/// How a template is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSpec {
    Axes,
    Uniform(usize),
    /// PCA over this many samples.
    Pca(usize),
}

impl std::str::FromStr for TemplateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("direction template {s:?} (use axes, uniform:K or pca[:N])"));
        match s.split_once(':') {
            None if s == "axes" => Ok(TemplateSpec::Axes),
            None if s == "pca" => Ok(TemplateSpec::Pca(10_000)),
            Some(("uniform", k)) => Ok(TemplateSpec::Uniform(k.parse().map_err(|_| bad())?)),
            Some(("pca", n)) => Ok(TemplateSpec::Pca(n.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for TemplateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TemplateSpec::Axes => f.write_str("axes"),
            TemplateSpec::Uniform(k) => write!(f, "uniform:{k}"),
            TemplateSpec::Pca(n) => write!(f, "pca:{n}"),
        }
    }
}

impl TemplateSpec {
    /// Builds the template; PCA uses `points`.
    pub fn build(&self, dim: usize, points: &[DVector<f64>]) -> Result<DirectionTemplate> {
        match *self {
            TemplateSpec::Axes => Ok(DirectionTemplate::axes(dim)),
            TemplateSpec::Uniform(k) => {
                if dim != 2 {
                    return Err(Error::Unsupported(format!("uniform template in {dim} dimensions")));
                }
                DirectionTemplate::uniform(k)
            }
            TemplateSpec::Pca(_) => DirectionTemplate::pca(points),
        }
    }

    pub fn samples(&self) -> usize {
        match *self {
            TemplateSpec::Pca(n) => n,
            _ => 0,
        }
    }
}

/// `cᵀy ≤ d`, with the lower end `lb` of the bracket on `sup cᵀy`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Face {
    pub c: Vec<f64>,
    pub d: f64,
    pub lb: f64,
    pub branches: usize,
    pub status: BnbStatus,
    /// The solve failed and `d` is the root zeroth-order bound.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polytope {
    pub faces: Vec<Face>,
}

impl Polytope {
    /// Largest `cᵀy − d` over the faces.
    pub fn violation(&self, y: &DVector<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| DVector::from_column_slice(&f.c).dot(y) - f.d)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, y: &DVector<f64>, slack: f64) -> bool {
        self.violation(y) <= slack
    }

    pub fn total_branches(&self) -> usize {
        self.faces.iter().map(|f| f.branches).sum()
    }

    /// Offset of the face with normal exactly `c`, if present.
    pub fn offset_for(&self, c: &DVector<f64>) -> Option<f64> {
        self.faces
            .iter()
            .find(|f| f.c.len() == c.len() && f.c.iter().zip(c.iter()).all(|(a, b)| a == b))
            .map(|f| f.d)
    }

    /// Axis bounds implied by `±e_i` faces (infinite where a face is missing).
    pub fn axis_bounds(&self, n: usize) -> (DVector<f64>, DVector<f64>) {
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        for i in 0..n {
            let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
            if let Some(d) = self.offset_for(&e) {
                hi[i] = d;
            }
            if let Some(d) = self.offset_for(&-e) {
                lo[i] = -d;
            }
        }
        (lo, hi)
    }
}

/// Solves `sup J` over the input set. A failed solve degrades to the root
/// zeroth-order bound and is marked as a fallback.
pub fn solve_over(j: &ScalarNetwork, input: &InputSet, cfg: &BnbConfig) -> Result<(Face, Vec<f64>)> {
    let attempt = match input {
        InputSet::Box(b) => solve(j, b, cfg),
        InputSet::Zonotope(z) => solve_zonotope(j, z.generators(), z.center(), cfg),
    };
    match attempt {
        Ok(r) => Ok((
            Face {
                c: Vec::new(),
                d: r.ub,
                lb: r.lb,
                branches: r.branches,
                status: r.status,
                fallback: false,
            },
            r.witness,
        )),
        Err(e @ (Error::InvalidInput(_) | Error::Dimension { .. })) => Err(e),
        Err(_) => {
            let zeroth = BnbConfig {
                first_order: false,
                ..cfg.clone()
            };
            let (jj, region) = match input {
                InputSet::Box(b) => (j.clone(), b.clone()),
                InputSet::Zonotope(z) => (
                    j.prepend_affine(z.generators(), z.center())?,
                    BoxRegion::unit(z.latent_dim()),
                ),
            };
            let nb = node_bounds(&jj, &region, &zeroth, None)?;
            Ok((
                Face {
                    c: Vec::new(),
                    d: nb.ub,
                    lb: nb.lb,
                    branches: 1,
                    status: BnbStatus::BranchLimit,
                    fallback: true,
                },
                nb.witness.iter().copied().collect(),
            ))
        }
    }
}

/// Runs one solve per direction, in parallel when `cfg.workers > 1` (each
/// solve then runs single-threaded).
fn solve_directions<F>(dirs: &[DVector<f64>], cfg: &BnbConfig, objective: F, input: &InputSet) -> Result<Vec<Face>>
where
    F: Fn(&DVector<f64>) -> Result<ScalarNetwork> + Sync,
{
    let one = |c: &DVector<f64>, cfg: &BnbConfig| -> Result<Face> {
        let j = objective(c)?;
        let (mut face, _) = solve_over(&j, input, cfg)?;
        face.c = c.iter().copied().collect();
        Ok(face)
    };
    if cfg.workers > 1 && dirs.len() > 1 {
        let inner = BnbConfig {
            workers: 1,
            ..cfg.clone()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
        pool.install(|| dirs.par_iter().map(|c| one(c, &inner)).collect())
    } else {
        dirs.iter().map(|c| one(c, cfg)).collect()
    }
}

/// Template polytope over `net(input)`.
pub fn reach_polytope(
    net: &Network,
    input: &InputSet,
    template: &DirectionTemplate,
    cfg: &BnbConfig,
) -> Result<Polytope> {
    check_dim("input set", net.input_dim(), input.dim())?;
    if template.is_empty() {
        return Err(Error::InvalidInput("empty direction template".into()));
    }
    check_dim("template", net.output_dim(), template.dim())?;
    let faces = solve_directions(&template.dirs, cfg, |c| net.scalarize(c), input)?;
    Ok(Polytope { faces })
}

/// `x⁺ = A x + B u + offset` with `u = π(x)`, over `horizon` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: Option<DVector<f64>>,
    pub horizon: usize,
    pub dt: Option<f64>,
}

/// JSON form `{ "A": [[..]], "B": [[..]], "T": n, "dt": .., "offset": [..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, offset: Option<DVector<f64>>, horizon: usize) -> Result<Self> {
        check_dim("A columns", a.nrows(), a.ncols())?;
        check_dim("B rows", a.nrows(), b.nrows())?;
        if let Some(k) = &offset {
            check_dim("offset", a.nrows(), k.len())?;
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("system matrices must be finite".into()));
        }
        Ok(Self {
            a,
            b,
            offset,
            horizon,
            dt: None,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: SystemFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        file.try_into()
    }

    pub fn check_controller(&self, controller: &Network) -> Result<()> {
        check_dim("controller input", self.state_dim(), controller.input_dim())?;
        check_dim("controller output", self.control_dim(), controller.output_dim())
    }

    /// One step of the closed loop.
    pub fn step(&self, controller: &Network, x: &DVector<f64>) -> DVector<f64> {
        let u = controller.eval_unchecked(x);
        let mut next = &self.a * x + &self.b * u;
        if let Some(k) = &self.offset {
            next += k;
        }
        next
    }

    /// `x ↦ cᵀ(Ax + Bπ(x) + k)` as a scalar network with a linear term.
    pub fn objective(&self, controller: &Network, c: &DVector<f64>) -> Result<ScalarNetwork> {
        check_dim("direction", self.state_dim(), c.len())?;
        let offset = self.offset.as_ref().map_or(0.0, |k| c.dot(k));
        controller
            .scalarize(&self.b.tr_mul(c))?
            .with_linear_term(self.a.tr_mul(c))
            .map(|j| j.with_offset(offset))
    }
}

impl TryFrom<SystemFile> for LinearSystem {
    type Error = Error;

    fn try_from(f: SystemFile) -> Result<Self> {
        let mut sys = LinearSystem::new(
            matrix_from_rows(&f.a, "A")?,
            matrix_from_rows(&f.b, "B")?,
            f.offset.map(DVector::from_vec),
            f.horizon,
        )?;
        sys.dt = f.dt;
        Ok(sys)
    }
}

/// Representation of the set handed to the next step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NextSetMode {
    /// Box aligned with the principal axes of the sampled image, as a zonotope.
    #[serde(rename = "pca-box")]
    PcaBox,
    /// Axis-aligned interval hull.
    #[serde(rename = "hull")]
    Hull,
    /// Whichever of the two has the smaller volume.
    #[serde(rename = "auto")]
    Auto,
}

impl std::str::FromStr for NextSetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca-box" | "pca" => Ok(NextSetMode::PcaBox),
            "hull" => Ok(NextSetMode::Hull),
            "auto" => Ok(NextSetMode::Auto),
            other => Err(Error::Unsupported(format!("next-set mode {other:?} (use auto, pca-box or hull)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachConfig {
    pub bnb: BnbConfig,
    pub template: TemplateSpec,
    pub next_set: NextSetMode,
    /// Samples used for the principal axes of the next set.
    pub pca_samples: usize,
    pub seed: u64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            bnb: BnbConfig::default(),
            template: TemplateSpec::Axes,
            next_set: NextSetMode::Auto,
            pca_samples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub polytope: Polytope,
    /// Over-approximation of the step image fed to the next step.
    pub next_set: InputSet,
    /// Solves spent on the next set beyond the template faces.
    pub extra_faces: Vec<Face>,
}

impl StepResult {
    /// Axis bounds of the image on `dims`: the next set's interval hull
    /// intersected with any axis faces of the polytope.
    pub fn axis_bounds(&self, dims: &[usize]) -> (DVector<f64>, DVector<f64>) {
        let hull = self.next_set.interval_hull();
        let (plo, phi) = self.polytope.axis_bounds(hull.dim());
        let lo = DVector::from_fn(dims.len(), |k, _| hull.lower()[dims[k]].max(plo[dims[k]]));
        let hi = DVector::from_fn(dims.len(), |k, _| hull.upper()[dims[k]].min(phi[dims[k]]));
        (lo, hi)
    }

    pub fn branches(&self) -> usize {
        self.polytope.total_branches() + self.extra_faces.iter().map(|f| f.branches).sum::<usize>()
    }
}

/// Euclidean distance from `point` to the box `[lo, hi]`.
pub fn box_point_distance(lo: &DVector<f64>, hi: &DVector<f64>, point: &DVector<f64>) -> f64 {
    (0..point.len())
        .map(|i| {
            let d = (lo[i] - point[i]).max(point[i] - hi[i]).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The step image projected on `dims` stays strictly outside the ball.
pub fn clears_sphere(step: &StepResult, dims: &[usize], center: &DVector<f64>, radius: f64) -> bool {
    let (lo, hi) = step.axis_bounds(dims);
    box_point_distance(&lo, &hi, center) > radius
}

fn sample_images(sys: &LinearSystem, controller: &Network, set: &InputSet, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sys.step(controller, &set.sample(&mut rng))).collect()
}

/// Reachable polytope of one closed-loop step and the set for the next one.
pub fn closed_loop_step(
    sys: &LinearSystem,
    controller: &Network,
    set: &InputSet,
    cfg: &ReachConfig,
    step_index: usize,
) -> Result<StepResult> {
    sys.check_controller(controller)?;
    check_dim("closed-loop set", sys.state_dim(), set.dim())?;
    let n = sys.state_dim();
    let seed = cfg.seed.wrapping_add(step_index as u64);
    let template_pts = sample_images(sys, controller, set, cfg.template.samples(), seed);
    let template = cfg.template.build(n, &template_pts)?;
    let objective = |c: &DVector<f64>| sys.objective(controller, c);
    let faces = solve_directions(&template.dirs, &cfg.bnb, objective, set)?;
    let polytope = Polytope { faces };

    let mut bases = Vec::new();
    if cfg.next_set != NextSetMode::PcaBox {
        bases.push(DMatrix::identity(n, n));
    }
    if cfg.next_set != NextSetMode::Hull {
        bases.push(if let (TemplateSpec::Pca(_), TemplateKind::Pca) = (cfg.template, &template.kind) {
            pca_basis(&template_pts)?
        } else {
            pca_basis(&sample_images(sys, controller, set, cfg.pca_samples, seed))?
        });
    }
    let mut missing: Vec<DVector<f64>> = Vec::new();
    for basis in &bases {
        for v in basis.column_iter() {
            for s in [1.0, -1.0] {
                let c = v.clone_owned() * s;
                if polytope.offset_for(&c).is_none() && !missing.contains(&c) {
                    missing.push(c);
                }
            }
        }
    }
    let extra_faces = solve_directions(&missing, &cfg.bnb, objective, set)?;
    let extra = Polytope {
        faces: extra_faces.clone(),
    };
    let offset = |c: &DVector<f64>| polytope.offset_for(c).or_else(|| extra.offset_for(c)).expect("solved above");
    let mut best: Option<(f64, InputSet)> = None;
    for basis in &bases {
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for (i, v) in basis.column_iter().enumerate() {
            let v = v.clone_owned();
            hi[i] = offset(&v);
            lo[i] = -offset(&-v);
            if lo[i] > hi[i] {
                let mid = 0.5 * (lo[i] + hi[i]);
                lo[i] = mid;
                hi[i] = mid;
            }
        }
        let volume = (&hi - &lo).product();
        let candidate = if basis.is_identity(0.0) {
            InputSet::Box(BoxRegion::new(lo, hi)?)
        } else {
            let half = (&hi - &lo) * 0.5;
            let mid = (&hi + &lo) * 0.5;
            InputSet::Zonotope(Zonotope::new(basis * DMatrix::from_diagonal(&half), basis * mid)?)
        };
        if best.as_ref().is_none_or(|(v, _)| volume < *v) {
            best = Some((volume, candidate));
        }
    }
    let next_set = best.expect("at least one basis").1;
    Ok(StepResult {
        polytope,
        next_set,
        extra_faces,
    })
}

/// `horizon` closed-loop steps from `initial`.
pub fn closed_loop_reach(
    sys: &LinearSystem,
    controller: &Network,
    initial: &InputSet,
    horizon: usize,
    cfg: &ReachConfig,
) -> Result<Vec<StepResult>> {
    let mut set = initial.clone();
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let step = closed_loop_step(sys, controller, &set, cfg, t)?;
        set = step.next_set.clone();
        out.push(step);
    }
    Ok(out)
}

/// `n` seeded trajectories `x⁰, …, x^horizon` from uniform draws of `initial`.
pub fn simulate(
    sys: &LinearSystem,
    controller: &Network,
    initial: &InputSet,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>> {
    sys.check_controller(controller)?;
    check_dim("initial set", sys.state_dim(), initial.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut x = initial.sample(&mut rng);
            let mut traj = Vec::with_capacity(horizon + 1);
            traj.push(x.clone());
            for _ in 0..horizon {
                x = sys.step(controller, &x);
                traj.push(x.clone());
            }
            traj
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use rand::SeedableRng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn identity_net(n: usize) -> Network {
        Network::new(vec![Layer::new(DMatrix::identity(n, n), DVector::zeros(n), None)]).unwrap()
    }

    #[test]
    fn template_constructors() {
        let a = DirectionTemplate::axes(2);
        assert_eq!(a.dirs, vec![dv(&[1.0, 0.0]), dv(&[-1.0, 0.0]), dv(&[0.0, 1.0]), dv(&[0.0, -1.0])]);
        let u = DirectionTemplate::uniform(4).unwrap();
        let expect = [dv(&[1.0, 0.0]), dv(&[0.0, 1.0]), dv(&[-1.0, 0.0]), dv(&[0.0, -1.0])];
        for (d, e) in u.dirs.iter().zip(expect.iter()) {
            assert!((d - e).amax() < 1e-15);
        }
        for d in DirectionTemplate::uniform(16).unwrap().dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
        }
        assert!(DirectionTemplate::uniform(2).is_err());
        assert!(TemplateSpec::Uniform(8).build(3, &[]).is_err());
    }

    #[test]
    fn template_spec_parsing() {
        assert_eq!("axes".parse::<TemplateSpec>().unwrap(), TemplateSpec::Axes);
        assert_eq!("uniform:16".parse::<TemplateSpec>().unwrap(), TemplateSpec::Uniform(16));
        assert_eq!("pca".parse::<TemplateSpec>().unwrap(), TemplateSpec::Pca(10_000));
        assert_eq!("pca:500".parse::<TemplateSpec>().unwrap(), TemplateSpec::Pca(500));
        assert!("uniform:x".parse::<TemplateSpec>().is_err());
    }

    #[test]
    fn pca_of_box_is_axis_aligned() {
        let b = InputSet::Box(BoxRegion::new(dv(&[0.0, 0.0]), dv(&[4.0, 1.0])).unwrap());
        let t = pca_directions(|x| x.clone(), &b, 10_000, 0).unwrap();
        assert!((t.dirs[0].clone() - dv(&[1.0, 0.0])).amax() < 1e-2);
        assert!((t.dirs[2].clone() - dv(&[0.0, 1.0])).amax() < 1e-2);
    }

    #[test]
    fn pca_finds_a_line() {
        let b = InputSet::Box(BoxRegion::unit(1));
        let t = pca_directions(|x| dv(&[3.0 * x[0], 4.0 * x[0]]), &b, 1000, 1).unwrap();
        let cos = t.dirs[0].dot(&dv(&[0.6, 0.8]));
        assert!(cos.acos() < 1e-3);
        assert!((t.dirs[2].norm() - 1.0).abs() < 1e-12);
        assert!(pca_directions(|x| x.clone(), &b, 1, 1).is_err());
    }

    #[test]
    fn identity_axes_reach_is_the_box() {
        let b = BoxRegion::new(dv(&[0.0, -1.0]), dv(&[2.0, 3.0])).unwrap();
        let p = reach_polytope(
            &identity_net(2),
            &InputSet::Box(b.clone()),
            &DirectionTemplate::axes(2),
            &BnbConfig::default(),
        )
        .unwrap();
        let (lo, hi) = p.axis_bounds(2);
        assert!((lo - b.lower()).amax() < 1e-12 && (hi - b.upper()).amax() < 1e-12);
    }

    #[test]
    fn system_objective_adds_linear_and_offset() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
            Some(dv(&[0.1, -0.2])),
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctrl = Network::random(&[2, 5, 1], Activation::Tanh, &mut rng);
        let c = dv(&[0.3, -0.7]);
        let j = sys.objective(&ctrl, &c).unwrap();
        let x = dv(&[0.4, 1.1]);
        assert!((j.eval(&x).unwrap() - c.dot(&sys.step(&ctrl, &x))).abs() < 1e-14);
    }

    #[test]
    fn zero_dynamics_is_a_fixed_point() {
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), None, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctrl = Network::random(&[2, 3, 1], Activation::Tanh, &mut rng);
        let b = BoxRegion::new(dv(&[0.0, 0.0]), dv(&[1.0, 2.0])).unwrap();
        let cfg = ReachConfig {
            next_set: NextSetMode::Hull,
            ..ReachConfig::default()
        };
        let steps = closed_loop_reach(&sys, &ctrl, &InputSet::Box(b.clone()), 2, &cfg).unwrap();
        for s in &steps {
            let (lo, hi) = s.axis_bounds(&[0, 1]);
            assert!((lo - b.lower()).amax() < 1e-12 && (hi - b.upper()).amax() < 1e-12);
        }
    }

    #[test]
    fn system_dimension_errors() {
        assert!(LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), None, 1).is_err());
        assert!(LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), None, 0).is_err());
        let sys = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), None, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(sys.check_controller(&Network::random(&[3, 2, 1], Activation::Tanh, &mut rng)).is_err());
    }

    #[test]
    fn sphere_distance() {
        let lo = dv(&[0.0, 0.0, 0.0]);
        let hi = dv(&[1.0, 1.0, 1.0]);
        assert_eq!(box_point_distance(&lo, &hi, &dv(&[0.5, 0.5, 0.5])), 0.0);
        assert!((box_point_distance(&lo, &hi, &dv(&[3.0, 1.0, 1.0])) - 2.0).abs() < 1e-15);
    }
}
