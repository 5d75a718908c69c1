use std::path::Path;
use std::time::Instant;

use hessreach::bnb::{solve, solve_zonotope, BnbResult, BnbStatus};
use hessreach::hessian::{hessian_two_layer, scalar_hessian_bound};
use hessreach::lipschitz::lipschitz_report;
use hessreach::oracle::{grid_max, sampled_hessian_norm, sampled_lipschitz, OracleReport};
use hessreach::reach::{
    box_point_distance, closed_loop_reach, pca_directions, reach_polytope, simulate, Face, LinearSystem, TemplateSpec,
};
use hessreach::sets::InputSetFile;
use hessreach::{BoxRegion, HessianBound, InputSet, LocalBounds, Network, ScalarNetwork};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::output::{float, write_json, write_text, Csv};
use crate::{ClosedLoopArgs, CliError, NetworkArgs, RegionArgs, Report, RunConfig, ScalarArgs};

/// JSON body with an optional wall-clock field.
#[derive(Serialize)]
struct Timed<T: Serialize> {
    #[serde(flatten)]
    body: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

fn timed<T: Serialize>(body: T, start: Instant, timing: bool) -> Timed<T> {
    Timed {
        body,
        wall_time_s: timing.then(|| start.elapsed().as_secs_f64()),
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect()
}

/// `lo..hi,lo..hi,…`
fn parse_box(s: &str) -> Result<BoxRegion, CliError> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in s.split(',') {
        let (a, b) = part
            .split_once("..")
            .ok_or_else(|| CliError::Input(format!("box interval {part:?} is not of the form lo..hi")))?;
        lo.push(parse_list(a, "box")?[0]);
        hi.push(parse_list(b, "box")?[0]);
    }
    Ok(BoxRegion::new(DVector::from_vec(lo), DVector::from_vec(hi))?)
}

fn region(args: &RegionArgs) -> Result<Option<InputSet>, CliError> {
    match (&args.input, &args.box_spec) {
        (Some(path), _) => Ok(Some(InputSet::load(path)?)),
        (None, Some(spec)) => Ok(Some(InputSet::Box(parse_box(spec)?))),
        (None, None) => Ok(None),
    }
}

fn required_region(args: &RegionArgs) -> Result<InputSet, CliError> {
    region(args)?.ok_or_else(|| CliError::Input("an input region is required (--input or --box)".into()))
}

fn scalar_objective(net: Network, direction: Option<&str>) -> Result<ScalarNetwork, CliError> {
    match direction {
        Some(d) => Ok(net.scalarize(&DVector::from_vec(parse_list(d, "direction")?))?),
        None if net.output_dim() == 1 => Ok(ScalarNetwork::new(net)?),
        None => Err(CliError::Input(format!(
            "network has {} outputs; pass --direction to pick a scalar objective",
            net.output_dim()
        ))),
    }
}

fn local_bounds(net: &Network, set: Option<&InputSet>) -> Result<LocalBounds, CliError> {
    match set {
        Some(s) => {
            if s.dim() != net.input_dim() {
                return Err(CliError::Input(format!(
                    "input region has dimension {}, network expects {}",
                    s.dim(),
                    net.input_dim()
                )));
            }
            Ok(LocalBounds::localize(net, &s.interval_hull())?)
        }
        None => Ok(LocalBounds::global(net)),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn hessian_bound(cfg: &RunConfig, j: &ScalarNetwork, local: &LocalBounds) -> Result<HessianBound, CliError> {
    if cfg.matrix_hessian && j.depth() == 2 {
        Ok(hessian_two_layer(j, local)?)
    } else {
        Ok(scalar_hessian_bound(j, local, cfg.lipschitz, cfg.suffix_estimate)?)
    }
}

fn solve_set(j: &ScalarNetwork, set: &InputSet, cfg: &RunConfig) -> Result<BnbResult, CliError> {
    Ok(match set {
        InputSet::Box(b) => solve(j, b, &cfg.bnb())?,
        InputSet::Zonotope(z) => solve_zonotope(j, z.generators(), z.center(), &cfg.bnb())?,
    })
}

fn face_converged(f: &Face) -> bool {
    f.status == BnbStatus::Converged && !f.fallback
}

#[derive(Serialize)]
struct LipschitzOut {
    norm: hessreach::Norm,
    method: hessreach::lipschitz::LipschitzMethod,
    total: f64,
    subnet: Vec<f64>,
    region: Option<InputSetFile>,
}

pub(crate) fn lipschitz(cfg: &RunConfig, a: &NetworkArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let net = Network::load(&a.network)?;
    let set = region(&a.region)?;
    let local = local_bounds(&net, set.as_ref())?;
    let rep = lipschitz_report(&net, &local, cfg.norm, cfg.lipschitz)?;
    let path = cfg.output.join("lipschitz.json");
    let out = LipschitzOut {
        norm: cfg.norm,
        method: cfg.lipschitz,
        total: rep.total,
        subnet: rep.subnet,
        region: set.as_ref().map(InputSet::to_file),
    };
    write_json(&path, &timed(out, start, timing))?;
    Ok(Report {
        line: format!("lipschitz: L = {} ({} norm, {}) -> {}", float(rep.total), cfg.norm, cfg.lipschitz.name(), path.display()),
        limited: false,
    })
}

#[derive(Serialize)]
struct HessianOut {
    kind: &'static str,
    upper_curvature: f64,
    spectral_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<Vec<Vec<f64>>>,
}

pub(crate) fn hessian(cfg: &RunConfig, a: &ScalarArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let j = scalar_objective(Network::load(&a.net.network)?, a.direction.as_deref())?;
    let set = region(&a.net.region)?;
    let local = local_bounds(j.network(), set.as_ref())?;
    let bound = hessian_bound(cfg, &j, &local)?;
    let (m, n) = match &bound {
        HessianBound::Matrix { m, n } => (Some(rows(m)), Some(rows(n))),
        HessianBound::Scalar(_) => (None, None),
    };
    let out = HessianOut {
        kind: bound.kind(),
        upper_curvature: bound.upper_curvature(),
        spectral_bound: bound.spectral_bound(),
        m,
        n,
    };
    let path = cfg.output.join("hessian.json");
    write_json(&path, &timed(out, start, timing))?;
    Ok(Report {
        line: format!(
            "hessian: {} bound, spectral {} -> {}",
            bound.kind(),
            float(bound.spectral_bound()),
            path.display()
        ),
        limited: false,
    })
}

pub(crate) fn bnb(cfg: &RunConfig, a: &ScalarArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let j = scalar_objective(Network::load(&a.net.network)?, a.direction.as_deref())?;
    let set = required_region(&a.net.region)?;
    let res = solve_set(&j, &set, cfg)?;
    let path = cfg.output.join("bnb.json");
    write_json(&path, &timed(&res, start, timing))?;
    Ok(Report {
        line: format!(
            "bnb: {:?} lb={} ub={} branches={} -> {}",
            res.status,
            float(res.lb),
            float(res.ub),
            res.branches,
            path.display()
        ),
        limited: res.status != BnbStatus::Converged,
    })
}

fn faces_csv(prefix: &[&str], dim: usize) -> Csv {
    let mut header: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("c{i}")));
    header.extend(["d", "lb", "branches", "status"].map(String::from));
    Csv::new(&header)
}

fn face_cells(prefix: Vec<String>, f: &Face) -> Vec<String> {
    let mut cells = prefix;
    cells.extend(f.c.iter().map(|&v| float(v)));
    cells.extend([float(f.d), float(f.lb), f.branches.to_string(), format!("{:?}", f.status)]);
    cells
}

#[derive(Serialize)]
struct ReachOut<'a> {
    template: String,
    eps_t: f64,
    faces: &'a [Face],
}

pub(crate) fn reach(cfg: &RunConfig, a: &NetworkArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let net = Network::load(&a.network)?;
    let set = required_region(&a.region)?;
    local_bounds(&net, Some(&set))?;
    let spec = cfg.template_spec()?;
    let template = match spec {
        TemplateSpec::Pca(n) => {
            pca_directions(|x| net.eval(x).expect("dimension checked"), &set, n, cfg.seed)?
        }
        other => other.build(net.output_dim(), &[])?,
    };
    let poly = reach_polytope(&net, &set, &template, &cfg.bnb())?;
    let path = cfg.output.join("reach.json");
    let out = ReachOut {
        template: spec.to_string(),
        eps_t: cfg.eps_t,
        faces: &poly.faces,
    };
    write_json(&path, &timed(out, start, timing))?;
    let mut csv = faces_csv(&[], net.output_dim());
    for f in &poly.faces {
        csv.row(&face_cells(Vec::new(), f));
    }
    write_text(&cfg.output.join("faces.csv"), csv.as_str())?;
    let limited = !poly.faces.iter().all(face_converged);
    Ok(Report {
        line: format!(
            "reach: {} faces, branches={} -> {}",
            poly.faces.len(),
            poly.total_branches(),
            path.display()
        ),
        limited,
    })
}

/// Sphere `center`, `radius` in the coordinates `dims`.
struct Obstacle {
    center: DVector<f64>,
    radius: f64,
}

fn parse_obstacles(a: &ClosedLoopArgs, state_dim: usize) -> Result<(Vec<usize>, Vec<Obstacle>), CliError> {
    if a.obstacle.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let dims: Vec<usize> = a
        .obstacle_dims
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok().filter(|&d| d < state_dim))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Input(format!("obstacle dims {:?} are not state indices", a.obstacle_dims)))?;
    let obstacles = a
        .obstacle
        .iter()
        .map(|s| {
            let v = parse_list(s, "obstacle")?;
            if v.len() != dims.len() + 1 || !(v[dims.len()] > 0.0) {
                return Err(CliError::Input(format!(
                    "obstacle {s:?} needs {} center coordinates and a positive radius",
                    dims.len()
                )));
            }
            Ok(Obstacle {
                center: DVector::from_column_slice(&v[..dims.len()]),
                radius: v[dims.len()],
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((dims, obstacles))
}

#[derive(Serialize)]
struct StepOut<'a> {
    step: usize,
    branches: usize,
    faces: &'a [Face],
    extra_faces: &'a [Face],
    next_set: InputSetFile,
    /// Largest face violation over the simulated states at this step.
    max_violation: f64,
    /// Distance from each obstacle center to the step's bounding box, minus the radius.
    clearance: Vec<f64>,
}

#[derive(Serialize)]
struct StepSummary {
    step: usize,
    branches: usize,
    max_violation: f64,
    clearance: Vec<f64>,
}

#[derive(Serialize)]
struct ClosedLoopOut {
    horizon: usize,
    template: String,
    next_set: hessreach::reach::NextSetMode,
    eps_t: f64,
    trajectories: usize,
    total_branches: usize,
    converged: bool,
    contained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    safe: Option<bool>,
    steps: Vec<StepSummary>,
}

pub(crate) fn closedloop(cfg: &RunConfig, a: &ClosedLoopArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let sys = LinearSystem::load(&a.system)?;
    let ctrl = Network::load(&a.controller)?;
    let set = required_region(&a.region)?;
    let horizon = a.steps.unwrap_or(sys.horizon);
    if horizon == 0 {
        return Err(CliError::Input("steps must be at least 1".into()));
    }
    let n = sys.state_dim();
    let (dims, obstacles) = parse_obstacles(a, n)?;
    let steps = closed_loop_reach(&sys, &ctrl, &set, horizon, &cfg.reach()?)?;
    let sims = simulate(&sys, &ctrl, &set, horizon, cfg.samples, cfg.seed)?;

    let out_dir = &cfg.output;
    let mut faces = faces_csv(&["step"], n);
    let mut stats = Csv::new(&["step", "faces", "extra_faces", "branches", "max_violation", "min_clearance"].map(String::from));
    let mut summaries = Vec::new();
    for (t, s) in steps.iter().enumerate() {
        let step = t + 1;
        let max_violation = sims
            .iter()
            .map(|traj| s.polytope.violation(&traj[step]))
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = s.axis_bounds(&dims);
        let clearance: Vec<f64> = obstacles
            .iter()
            .map(|o| box_point_distance(&lo, &hi, &o.center) - o.radius)
            .collect();
        let body = StepOut {
            step,
            branches: s.branches(),
            faces: &s.polytope.faces,
            extra_faces: &s.extra_faces,
            next_set: s.next_set.to_file(),
            max_violation,
            clearance: clearance.clone(),
        };
        write_json(&out_dir.join(format!("step_{step:03}.json")), &body)?;
        for f in &s.polytope.faces {
            faces.row(&face_cells(vec![step.to_string()], f));
        }
        let min_clear = clearance.iter().copied().fold(f64::INFINITY, f64::min);
        stats.row(&[
            step.to_string(),
            s.polytope.faces.len().to_string(),
            s.extra_faces.len().to_string(),
            s.branches().to_string(),
            float(max_violation),
            if obstacles.is_empty() { String::new() } else { float(min_clear) },
        ]);
        summaries.push(StepSummary {
            step,
            branches: s.branches(),
            max_violation,
            clearance,
        });
    }
    write_text(&out_dir.join("faces.csv"), faces.as_str())?;
    write_text(&out_dir.join("stats.csv"), stats.as_str())?;
    write_trajectories(&out_dir.join("trajectories.csv"), &sims, n)?;

    let converged = steps
        .iter()
        .all(|s| s.polytope.faces.iter().chain(&s.extra_faces).all(face_converged));
    let contained = summaries.iter().all(|s| s.max_violation <= 1e-9);
    let safe = (!obstacles.is_empty()).then(|| summaries.iter().all(|s| s.clearance.iter().all(|&c| c > 0.0)));
    let total_branches = summaries.iter().map(|s| s.branches).sum();
    let out = ClosedLoopOut {
        horizon,
        template: cfg.template_spec()?.to_string(),
        next_set: cfg.next_set,
        eps_t: cfg.eps_t,
        trajectories: sims.len(),
        total_branches,
        converged,
        contained,
        safe,
        steps: summaries,
    };
    let path = out_dir.join("closedloop.json");
    write_json(&path, &timed(out, start, timing))?;
    let safety = match safe {
        Some(true) => " safe=true",
        Some(false) => " safe=false",
        None => "",
    };
    Ok(Report {
        line: format!(
            "closedloop: {horizon} steps, branches={total_branches}, contained={contained}{safety} -> {}",
            path.display()
        ),
        limited: !converged,
    })
}

fn write_trajectories(path: &Path, sims: &[Vec<DVector<f64>>], n: usize) -> Result<(), CliError> {
    let mut header = vec!["trajectory".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    let mut csv = Csv::new(&header);
    for (k, traj) in sims.iter().enumerate() {
        for (t, x) in traj.iter().enumerate() {
            let mut cells = vec![k.to_string(), t.to_string()];
            cells.extend(x.iter().map(|&v| float(v)));
            csv.row(&cells);
        }
    }
    write_text(path, csv.as_str())
}

#[derive(Serialize)]
struct AuditCheck {
    quantity: &'static str,
    bound: f64,
    witness: f64,
    tolerance: f64,
    sound: bool,
}

#[derive(Serialize)]
struct AuditOut {
    reports: Vec<OracleReport>,
    checks: Vec<AuditCheck>,
    sound: bool,
    bnb_status: BnbStatus,
}

pub(crate) fn audit(cfg: &RunConfig, a: &ScalarArgs, timing: bool) -> Result<Report, CliError> {
    let start = Instant::now();
    let j = scalar_objective(Network::load(&a.net.network)?, a.direction.as_deref())?;
    let set = required_region(&a.net.region)?;
    let local = local_bounds(j.network(), Some(&set))?;
    let hull = set.interval_hull();
    let f = |x: &DVector<f64>| j.eval(x).expect("dimension checked");

    let lip = lipschitz_report(j.network(), &local, cfg.norm, cfg.lipschitz)?.total;
    let seen_lip = sampled_lipschitz(|x| DVector::from_element(1, f(x)), &hull, cfg.samples, cfg.norm, cfg.seed);
    let curvature = hessian_bound(cfg, &j, &local)?.spectral_bound();
    let hess_points = cfg.samples.min(500);
    let seen_hess = sampled_hessian_norm(f, &hull, hess_points, 1e-4, cfg.seed);
    let res = solve_set(&j, &set, cfg)?;
    let (seen_max, grid_points) = sampled_max(&j, &set, cfg.samples, cfg.seed);

    let check = |quantity, bound: f64, witness: f64, tolerance: f64| AuditCheck {
        quantity,
        bound,
        witness,
        tolerance,
        sound: witness <= bound + tolerance,
    };
    let checks = vec![
        check("lipschitz", lip, seen_lip, 1e-7),
        check("hessian_norm", curvature, seen_hess, 1e-6 * curvature.max(1.0)),
        check("max", res.ub, seen_max, 1e-9),
    ];
    let report = |quantity: &str, value, samples| OracleReport {
        quantity: quantity.into(),
        value,
        samples,
        seed: cfg.seed,
    };
    let reports = vec![
        report("sampled_lipschitz", seen_lip, cfg.samples),
        report("sampled_hessian_norm", seen_hess, hess_points),
        report("grid_max", seen_max, grid_points),
    ];
    let sound = checks.iter().all(|c| c.sound);
    let out = AuditOut {
        reports,
        checks,
        sound,
        bnb_status: res.status,
    };
    let path = cfg.output.join("audit.json");
    write_json(&path, &timed(out, start, timing))?;
    Ok(Report {
        line: format!(
            "audit: {} (3 checks, bnb {:?}) -> {}",
            if sound { "sound" } else { "UNSOUND" },
            res.status,
            path.display()
        ),
        limited: res.status != BnbStatus::Converged,
    })
}

/// Lattice-plus-random maximum over the set; zonotopes are sampled through
/// their latent box.
fn sampled_max(j: &ScalarNetwork, set: &InputSet, samples: usize, seed: u64) -> (f64, usize) {
    let (g, c, latent) = match set {
        InputSet::Box(b) => (None, None, b.clone()),
        InputSet::Zonotope(z) => (
            Some(z.generators().clone()),
            Some(z.center().clone()),
            BoxRegion::unit(z.latent_dim()),
        ),
    };
    let dim = latent.dim();
    let per_axis = ((samples as f64).powf(1.0 / dim as f64).floor() as usize).max(2);
    let lattice = per_axis.checked_pow(dim as u32).filter(|&t| t <= samples.max(1 << dim));
    let per_axis = if lattice.is_some() { per_axis } else { 0 };
    let lift = |z: &DVector<f64>| match (&g, &c) {
        (Some(g), Some(c)) => g * z + c,
        _ => z.clone(),
    };
    let (v, _) = grid_max(|z| j.eval(&lift(z)).expect("dimension checked"), &latent, per_axis, samples, seed);
    (v, lattice.unwrap_or(0) + samples)
}
