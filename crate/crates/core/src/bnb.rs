//! Best-first branch and bound for `sup_{x ∈ X₀} J(x)` over boxes and zonotopes.
//!
//! Every node carries a bracket valid for its own box: the lower end is an
//! exact evaluation, the upper end the smaller of the zeroth-order and the
//! first-order bounds. The pool is a max-heap on the upper bound, so the
//! global upper bound is read off its top.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::hessian::{hessian_two_layer, scalar_hessian_bound, HessianBound};
use crate::lipschitz::{lipschitz_report, LipschitzMethod, Norm};
use crate::localize::LocalBounds;
use crate::model::ScalarNetwork;
use crate::sets::BoxRegion;
use crate::taylor::{box_model_upper, first_lower, shifted_center_box, two_layer_dual_upper, vertex_upper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    #[serde(rename = "maxlen")]
    MaxLength,
    #[serde(rename = "bestub")]
    BestUb,
}

impl std::str::FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxlen" | "max-length" => Ok(Heuristic::MaxLength),
            "bestub" | "best-ub" => Ok(Heuristic::BestUb),
            other => Err(Error::Unsupported(format!("heuristic {other:?} (use maxlen or bestub)"))),
        }
    }
}

impl std::fmt::Display for Heuristic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Heuristic::MaxLength => "maxlen",
            Heuristic::BestUb => "bestub",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    /// Termination gap on `ub − lb`.
    pub eps_t: f64,
    pub heuristic: Heuristic,
    /// Cap on bounded nodes (the root counts as one).
    pub max_branches: usize,
    /// Cap on the pool size.
    pub max_active: usize,
    pub time_limit_s: Option<f64>,
    pub workers: usize,
    /// Combine first-order bounds with the zeroth-order one.
    pub first_order: bool,
    pub lipschitz: LipschitzMethod,
    /// Recompute localization, Lipschitz and Hessian bounds at every node.
    pub recompute: bool,
    /// Use the matrix Hessian bound on two-layer networks.
    pub matrix_hessian: bool,
    /// Tighten the scalar Hessian bound with the suffix-network estimate.
    pub suffix_estimate: bool,
    /// Largest input dimension for which vertex enumeration is attempted.
    pub vertex_max_dim: usize,
    /// Record per-node bound diagnostics.
    pub trace: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            eps_t: 1e-2,
            heuristic: Heuristic::MaxLength,
            max_branches: 1_000_000,
            max_active: 1_000_000,
            time_limit_s: None,
            workers: 1,
            first_order: true,
            lipschitz: LipschitzMethod::Liplt,
            recompute: true,
            matrix_hessian: true,
            suffix_estimate: true,
            vertex_max_dim: 12,
            trace: false,
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_t > 0.0 && self.eps_t.is_finite()) {
            return Err(Error::InvalidInput(format!("eps_t must be positive and finite, got {}", self.eps_t)));
        }
        if self.max_branches == 0 || self.max_active == 0 || self.workers == 0 {
            return Err(Error::InvalidInput("max_branches, max_active and workers must be positive".into()));
        }
        if let Some(t) = self.time_limit_s {
            if !(t > 0.0) {
                return Err(Error::InvalidInput(format!("time limit must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BnbStatus {
    Converged,
    BranchLimit,
    TimeLimit,
    /// The pool emptied with unsplittable boxes still above the gap.
    Stalled,
}

/// Bracket and diagnostics for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBounds {
    pub lb: f64,
    pub ub: f64,
    pub witness: DVector<f64>,
    pub ub_zeroth: f64,
    pub ub_first: Option<f64>,
    pub lipschitz: f64,
    pub curvature: Option<f64>,
    /// Dual hard case or a failed bound computation.
    pub flagged: bool,
}

/// Region constants shared by the bounds of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificates {
    /// ℓ∞ Lipschitz constant of `J`, linear term included.
    pub lipschitz: f64,
    pub hessian: Option<HessianBound>,
}

pub fn certificates(j: &ScalarNetwork, region: &BoxRegion, cfg: &BnbConfig) -> Result<Certificates> {
    let local = LocalBounds::localize(j.network(), region)?;
    let linear = j.linear_term().map_or(0.0, |w| w.lp_norm(1));
    let lipschitz = lipschitz_report(j.network(), &local, Norm::Inf, cfg.lipschitz)?.total + linear;
    let hessian = if !cfg.first_order {
        None
    } else if j.depth() == 2 && cfg.matrix_hessian {
        Some(hessian_two_layer(j, &local)?)
    } else {
        Some(scalar_hessian_bound(j, &local, cfg.lipschitz, cfg.suffix_estimate)?)
    };
    Ok(Certificates { lipschitz, hessian })
}

/// Bounds `sup J` over `region`; `cached` replaces the per-node certificates.
pub fn node_bounds(
    j: &ScalarNetwork,
    region: &BoxRegion,
    cfg: &BnbConfig,
    cached: Option<&Certificates>,
) -> Result<NodeBounds> {
    check_dim("node box", j.input_dim(), region.dim())?;
    let c = region.center();
    let r = region.radii();
    let eps = r.max();
    let (v, g) = j.value_and_grad(&c)?;
    if eps == 0.0 {
        return Ok(NodeBounds {
            lb: v,
            ub: v,
            witness: c,
            ub_zeroth: v,
            ub_first: Some(v),
            lipschitz: 0.0,
            curvature: Some(0.0),
            flagged: false,
        });
    }
    let owned;
    let cert = match cached {
        Some(cert) => cert,
        None => {
            owned = certificates(j, region, cfg)?;
            &owned
        }
    };
    let ub_zeroth = v + cert.lipschitz * eps;
    let mut candidates = Vec::new();
    let mut flagged = false;
    let (ub_first, curvature) = match &cert.hessian {
        None => {
            candidates.push(box_model_upper(v, &g, region, 0.0, &c).1);
            (None, None)
        }
        Some(h) => {
            let lam = h.upper_curvature();
            let (mut ub1, arg) = box_model_upper(v, &g, region, lam, &c);
            candidates.push(arg);
            if lam > 0.0 {
                let y = shifted_center_box(&c, &r, &g, lam);
                if y != c {
                    let (vy, gy) = j.value_and_grad(&y)?;
                    let (u, arg) = box_model_upper(vy, &gy, region, lam, &y);
                    ub1 = ub1.min(u);
                    candidates.push(arg);
                    candidates.push(y);
                }
            }
            if let HessianBound::Matrix { m, .. } = h {
                let dual = two_layer_dual_upper(&g, m, r.norm(), Norm::L2)?;
                flagged |= dual.hard_case;
                ub1 = ub1.min(v + dual.value);
                if j.input_dim() <= cfg.vertex_max_dim {
                    let shift = (-m.symmetric_eigenvalues().min()).max(0.0);
                    let m_psd = m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
                    let deltas = BoxRegion::new(-&r, r.clone())?;
                    let (val, delta) = vertex_upper(&g, &m_psd, &deltas)?;
                    ub1 = ub1.min(v + val);
                    candidates.push(&c + delta);
                }
            }
            (Some(ub1), Some(lam))
        }
    };
    let (lb, witness) = first_lower(j, &c, region, &candidates)?;
    let ub = ub_first.map_or(ub_zeroth, |u| u.min(ub_zeroth)).max(lb);
    Ok(NodeBounds {
        lb,
        ub,
        witness,
        ub_zeroth,
        ub_first,
        lipschitz: cert.lipschitz,
        curvature,
        flagged,
    })
}

/// Node bounds, or the parent's upper bound with an exact center evaluation
/// when the bound engine fails.
fn bound_or_inherit(
    j: &ScalarNetwork,
    region: &BoxRegion,
    cfg: &BnbConfig,
    cached: Option<&Certificates>,
    parent_ub: f64,
) -> NodeBounds {
    node_bounds(j, region, cfg, cached).unwrap_or_else(|_| {
        let c = region.center();
        let v = j.eval_unchecked(&c);
        NodeBounds {
            lb: v,
            ub: parent_ub.max(v),
            witness: c,
            ub_zeroth: parent_ub,
            ub_first: None,
            lipschitz: f64::NAN,
            curvature: None,
            flagged: true,
        }
    })
}

#[derive(Debug, Clone)]
pub struct BnbNode {
    pub region: BoxRegion,
    pub bounds: NodeBounds,
    pub depth: usize,
    /// Creation index; the root is 0.
    pub id: usize,
}

struct PoolEntry(BnbNode);

impl PartialEq for PoolEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PoolEntry {}

impl PartialOrd for PoolEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PoolEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .bounds
            .ub
            .total_cmp(&other.0.bounds.ub)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

/// Active nodes ordered by upper bound, earliest creation first on ties.
#[derive(Default)]
pub struct NodePool {
    heap: BinaryHeap<PoolEntry>,
}

impl NodePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: BnbNode) {
        self.heap.push(PoolEntry(node));
    }

    pub fn peek_ub(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.bounds.ub)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    fn pop(&mut self) -> Option<BnbNode> {
        self.heap.pop().map(|e| e.0)
    }
}

/// Removes and returns the node with the largest upper bound.
pub fn select_node(pool: &mut NodePool) -> Result<BnbNode> {
    pool.pop()
        .ok_or_else(|| Error::InvalidInput("select_node called on an empty pool".into()))
}

fn splittable(b: &BoxRegion, axis: usize) -> bool {
    let (lo, hi) = (b.lower()[axis], b.upper()[axis]);
    let mid = 0.5 * (lo + hi);
    lo < mid && mid < hi
}

/// Longest axis, smallest index on ties; `None` if it cannot be bisected.
pub fn max_length_axis(b: &BoxRegion) -> Option<usize> {
    let w = b.widths();
    let axis = (0..w.len()).fold(0, |best, i| if w[i] > w[best] { i } else { best });
    splittable(b, axis).then_some(axis)
}

/// Axes the heuristic considers for `b`.
fn candidate_axes(b: &BoxRegion, heuristic: Heuristic) -> Vec<usize> {
    match heuristic {
        Heuristic::MaxLength => max_length_axis(b).into_iter().collect(),
        Heuristic::BestUb => (0..b.dim()).filter(|&i| splittable(b, i)).collect(),
    }
}

/// The two children of a split and the chosen axis.
#[derive(Debug, Clone)]
pub struct Split {
    pub axis: usize,
    pub children: [(BoxRegion, NodeBounds); 2],
    /// Bound evaluations spent, including discarded BestUB trials.
    pub evaluations: usize,
}

/// Splits `node` per `cfg.heuristic`; `None` for an unsplittable box.
///
/// BestUB bounds both halves along every axis and keeps the axis minimizing
/// the larger child upper bound (smallest index on ties).
pub fn split_node(
    j: &ScalarNetwork,
    node: &BnbNode,
    cfg: &BnbConfig,
    cached: Option<&Certificates>,
) -> Option<Split> {
    let axes = candidate_axes(&node.region, cfg.heuristic);
    let jobs: Vec<BoxRegion> = axes
        .iter()
        .flat_map(|&a| {
            let (l, r) = node.region.bisect(a);
            [l, r]
        })
        .collect();
    let bounds: Vec<NodeBounds> = jobs
        .iter()
        .map(|b| bound_or_inherit(j, b, cfg, cached, node.bounds.ub))
        .collect();
    choose_split(&axes, jobs, bounds)
}

fn choose_split(axes: &[usize], jobs: Vec<BoxRegion>, bounds: Vec<NodeBounds>) -> Option<Split> {
    if axes.is_empty() {
        return None;
    }
    let evaluations = jobs.len();
    let key = |k: usize| bounds[2 * k].ub.max(bounds[2 * k + 1].ub);
    let best = (1..axes.len()).fold(0, |b, k| if key(k) < key(b) { k } else { b });
    let mut jobs = jobs.into_iter().skip(2 * best);
    let mut bounds = bounds.into_iter().skip(2 * best);
    let left = (jobs.next()?, bounds.next()?);
    let right = (jobs.next()?, bounds.next()?);
    Some(Split {
        axis: axes[best],
        children: [left, right],
        evaluations,
    })
}

/// One bounded node as seen by the solver.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub id: usize,
    pub depth: usize,
    pub radius: f64,
    pub lb: f64,
    pub ub: f64,
    pub ub_zeroth: f64,
    pub ub_first: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BnbResult {
    pub lb: f64,
    pub ub: f64,
    pub witness: Vec<f64>,
    pub branches: usize,
    pub bound_evaluations: usize,
    pub max_active: usize,
    pub flagged_nodes: usize,
    pub status: BnbStatus,
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

impl BnbResult {
    pub fn gap(&self) -> f64 {
        self.ub - self.lb
    }
}

struct Search<'a> {
    j: &'a ScalarNetwork,
    cfg: &'a BnbConfig,
    cached: Option<Certificates>,
    threads: Option<rayon::ThreadPool>,
}

impl Search<'_> {
    fn bound_all(&self, jobs: &[(BoxRegion, f64)]) -> Vec<NodeBounds> {
        let f = |(b, parent_ub): &(BoxRegion, f64)| bound_or_inherit(self.j, b, self.cfg, self.cached.as_ref(), *parent_ub);
        match &self.threads {
            Some(pool) => pool.install(|| jobs.par_iter().map(f).collect()),
            None => jobs.iter().map(f).collect(),
        }
    }
}

/// Solves `sup_{x ∈ region} J(x)` to gap `cfg.eps_t`.
///
/// With `workers > 1` up to `workers` nodes are expanded per round and their
/// children bounded in parallel; results are merged in pop order, so the run
/// is still reproducible for a fixed worker count.
pub fn solve(j: &ScalarNetwork, region: &BoxRegion, cfg: &BnbConfig) -> Result<BnbResult> {
    let start = Instant::now();
    cfg.validate()?;
    check_dim("search box", j.input_dim(), region.dim())?;
    let cached = if cfg.recompute {
        None
    } else {
        Some(certificates(j, region, cfg)?)
    };
    let threads = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let search = Search { j, cfg, cached, threads };

    let root = node_bounds(j, region, cfg, search.cached.as_ref())?;
    let mut trace = Vec::new();
    let record = |trace: &mut Vec<TraceEntry>, node: &BnbNode| {
        if cfg.trace {
            trace.push(TraceEntry {
                id: node.id,
                depth: node.depth,
                radius: node.region.max_radius(),
                lb: node.bounds.lb,
                ub: node.bounds.ub,
                ub_zeroth: node.bounds.ub_zeroth,
                ub_first: node.bounds.ub_first,
            });
        }
    };
    let mut lb = root.lb;
    let mut witness = root.witness.clone();
    let mut flagged = usize::from(root.flagged);
    let root = BnbNode {
        region: region.clone(),
        bounds: root,
        depth: 0,
        id: 0,
    };
    record(&mut trace, &root);
    let mut pool = NodePool::new();
    pool.push(root);
    let mut next_id = 1;
    let mut branches = 1;
    let mut evaluations = 1;
    let mut max_active = 1;
    let mut finalized_ub = f64::NEG_INFINITY;

    let status = loop {
        while pool.peek_ub().is_some_and(|u| u <= lb) {
            pool.pop();
        }
        let ub = lb.max(pool.peek_ub().unwrap_or(f64::NEG_INFINITY)).max(finalized_ub);
        if ub - lb <= cfg.eps_t {
            break BnbStatus::Converged;
        }
        if pool.is_empty() {
            break BnbStatus::Stalled;
        }
        if branches >= cfg.max_branches || pool.len() >= cfg.max_active {
            break BnbStatus::BranchLimit;
        }
        if cfg.time_limit_s.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            break BnbStatus::TimeLimit;
        }

        let mut batch = Vec::new();
        while batch.len() < cfg.workers && pool.peek_ub().is_some_and(|u| u - lb > cfg.eps_t) {
            batch.push(select_node(&mut pool)?);
        }
        let plans: Vec<Vec<usize>> = batch.iter().map(|n| candidate_axes(&n.region, cfg.heuristic)).collect();
        let jobs: Vec<(BoxRegion, f64)> = batch
            .iter()
            .zip(&plans)
            .flat_map(|(n, axes)| {
                axes.iter().flat_map(move |&a| {
                    let (l, r) = n.region.bisect(a);
                    [(l, n.bounds.ub), (r, n.bounds.ub)]
                })
            })
            .collect();
        let mut bounds = search.bound_all(&jobs).into_iter();
        let mut regions = jobs.into_iter().map(|(b, _)| b);
        for (parent, axes) in batch.into_iter().zip(plans) {
            let k = 2 * axes.len();
            let these_regions: Vec<_> = regions.by_ref().take(k).collect();
            let these_bounds: Vec<_> = bounds.by_ref().take(k).collect();
            evaluations += k;
            let Some(split) = choose_split(&axes, these_regions, these_bounds) else {
                finalized_ub = finalized_ub.max(parent.bounds.ub);
                flagged += 1;
                continue;
            };
            for (child_region, mut b) in split.children {
                b.ub = b.ub.min(parent.bounds.ub).max(b.lb);
                flagged += usize::from(b.flagged);
                if b.lb > lb {
                    lb = b.lb;
                    witness = b.witness.clone();
                }
                let child = BnbNode {
                    region: child_region,
                    bounds: b,
                    depth: parent.depth + 1,
                    id: next_id,
                };
                next_id += 1;
                branches += 1;
                record(&mut trace, &child);
                if child.bounds.ub > lb {
                    pool.push(child);
                }
            }
            max_active = max_active.max(pool.len());
        }
    };
    let ub = lb.max(pool.peek_ub().unwrap_or(f64::NEG_INFINITY)).max(finalized_ub);
    Ok(BnbResult {
        lb,
        ub,
        witness: witness.iter().copied().collect(),
        branches,
        bound_evaluations: evaluations,
        max_active,
        flagged_nodes: flagged,
        status,
        wall_time_s: start.elapsed().as_secs_f64(),
        trace,
    })
}

/// Solves over the zonotope `{G z + x_c : ‖z‖∞ ≤ 1}` through its latent box.
/// The witness is reported in the original coordinates.
pub fn solve_zonotope(
    j: &ScalarNetwork,
    g: &DMatrix<f64>,
    x_c: &DVector<f64>,
    cfg: &BnbConfig,
) -> Result<BnbResult> {
    let jz = j.prepend_affine(g, x_c)?;
    let mut res = solve(&jz, &BoxRegion::unit(g.ncols()), cfg)?;
    let z = DVector::from_vec(res.witness);
    res.witness = (g * z + x_c).iter().copied().collect();
    Ok(res)
}
