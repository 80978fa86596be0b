#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transitive_embed::{
    Closure, EmbeddingModel, Label, LossHyper, ModelKind, NodeId, NodeKind, Pair, PartialOrder,
};

/// Random DAG on `n` nodes: each forward pair of a random permutation is an
/// edge with probability `density`. Edges point child → ancestor.
pub fn random_dag(n: usize, density: f64, seed: u64) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<u32> = (0..n as u32).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                edges.push((NodeId(perm[i]), NodeId(perm[j])));
            }
        }
    }
    edges
}

/// Floyd–Warshall boolean reachability, irreflexive.
pub fn warshall(n: usize, edges: &[Pair]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(x, y) in edges {
        r[x.index()][y.index()] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = false;
    }
    r
}

/// Count of cells where `closure` and the oracle disagree.
pub fn oracle_mismatches(closure: &Closure, oracle: &[Vec<bool>]) -> usize {
    let n = oracle.len();
    let mut bad = 0;
    for i in 0..n {
        for j in 0..n {
            let got = closure.contains(NodeId(i as u32), NodeId(j as u32)).unwrap();
            bad += usize::from(got != oracle[i][j]);
        }
    }
    bad
}

/// Complete binary tree with `n` nodes, node `i`'s parent being `(i-1)/2`.
pub fn binary_tree(n: usize) -> PartialOrder {
    PartialOrder::from_edges((1..n).map(|i| (format!("n{i}"), format!("n{}", (i - 1) / 2)))).unwrap()
}

/// Random DAG as a loaded order; isolated nodes are dropped.
pub fn dag_order(n: usize, density: f64, seed: u64) -> PartialOrder {
    let edges = random_dag(n, density, seed);
    PartialOrder::from_edges(edges.iter().map(|&(x, y)| (format!("v{}", x.0), format!("v{}", y.0)))).unwrap()
}

/// Taxonomy-like DAG: node `i > 0` hangs under a uniformly drawn earlier node
/// and, with probability `extra`, under a second one.
pub fn taxonomy(n: usize, extra: f64, seed: u64) -> PartialOrder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((i, rng.gen_range(0..i)));
        if i > 1 && rng.gen_bool(extra) {
            edges.push((i, rng.gen_range(0..i)));
        }
    }
    PartialOrder::from_edges(edges.into_iter().map(|(c, p)| (format!("t{c}"), format!("t{p}")))).unwrap()
}

/// A two-node model with the given rows; widths only for rectangles.
pub fn pair_model(
    kind: ModelKind,
    ux: &[f64],
    uy: &[f64],
    vx: &[f64],
    vy: &[f64],
) -> EmbeddingModel<f64> {
    let dim = ux.len();
    let base = [ux, uy].concat();
    let width = kind.has_widths().then(|| [vx, vy].concat());
    EmbeddingModel::from_parts(kind, dim, base, width, vec![NodeKind::Type; 2]).unwrap()
}

pub const X: NodeId = NodeId(0);
pub const Y: NodeId = NodeId(1);

/// Candidate hinge arguments whose extreme drives the sigmoid losses.
fn candidates(kind: ModelKind, m: &EmbeddingModel<f64>, label: Label, delta: f64) -> Vec<f64> {
    let (ux, uy) = (m.base(X), m.base(Y));
    let zero = vec![0.0; m.dim()];
    let vx = m.width(X).unwrap_or(&zero);
    let vy = m.width(Y).unwrap_or(&zero);
    let mut out = Vec::new();
    for d in 0..m.dim() {
        match (kind, label) {
            (ModelKind::Rect, Label::Positive) => {
                out.push(uy[d] + delta - ux[d]);
                out.push(ux[d] + vx[d] + delta - uy[d] - vy[d]);
            }
            (ModelKind::Rect, Label::Negative) => {
                out.push(ux[d] + delta - uy[d]);
                out.push(uy[d] + vy[d] + delta - ux[d] - vx[d]);
            }
            (_, Label::Positive) => out.push(uy[d] + delta - ux[d]),
            (_, Label::Negative) => out.push(ux[d] + delta - uy[d]),
        }
    }
    out
}

/// True when every nonsmooth point of the loss is at least `margin` away.
pub fn clear_of_kinks(
    m: &EmbeddingModel<f64>,
    label: Label,
    hyper: &LossHyper<f64>,
    margin: f64,
) -> bool {
    let kind = m.kind();
    if kind == ModelKind::Oe {
        let (ux, uy) = (m.base(X), m.base(Y));
        let hinges_clear = (0..m.dim()).all(|d| (uy[d] - ux[d]).abs() > margin);
        let l: f64 = (0..m.dim()).map(|d| (uy[d] - ux[d]).max(0.0).powi(2)).sum();
        return hinges_clear && (label == Label::Positive || (hyper.alpha - l).abs() > margin);
    }
    let mut c = candidates(kind, m, label, hyper.delta);
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (ext, next) = match label {
        Label::Positive => (c[c.len() - 1], c.get(c.len().wrapping_sub(2)).copied()),
        Label::Negative => (c[0], c.get(1).copied()),
    };
    ext.abs() > margin && next.is_none_or(|n| (n - ext).abs() > margin)
}

/// Random two-node configuration.
pub fn random_config(
    kind: ModelKind,
    dim: usize,
    rng: &mut impl Rng,
) -> (EmbeddingModel<f64>, Label, LossHyper<f64>) {
    let u = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let v = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(0.05..1.0)).collect() };
    let (ux, uy, vx, vy) = (u(rng), u(rng), v(rng), v(rng));
    let label = if rng.gen() { Label::Positive } else { Label::Negative };
    let hyper = LossHyper {
        alpha: rng.gen_range(0.5..3.0),
        delta: rng.gen_range(0.0..0.5),
        psi: rng.gen_range(0.5..5.0),
        lambda: rng.gen_range(0.0..0.05),
    };
    (pair_model(kind, &ux, &uy, &vx, &vy), label, hyper)
}

/// Worst per-coordinate relative error between the analytic subgradient and
/// central differences of the pair objective.
pub fn gradient_error(m: &EmbeddingModel<f64>, label: Label, hyper: &LossHyper<f64>, h: f64) -> f64 {
    let g = m.pair_gradient(X, Y, label, hyper);
    let mut coords: Vec<(NodeId, bool, usize, f64)> = Vec::new();
    for d in 0..m.dim() {
        coords.push((X, false, d, g.base_x[d]));
        coords.push((Y, false, d, g.base_y[d]));
        if let (Some(wx), Some(wy)) = (&g.width_x, &g.width_y) {
            coords.push((X, true, d, wx[d]));
            coords.push((Y, true, d, wy[d]));
        }
    }
    let mut worst: f64 = 0.0;
    for (row, is_width, d, analytic) in coords {
        let f = |step: f64| {
            let mut p = m.clone();
            if is_width {
                p.width_mut(row).unwrap()[d] += step;
            } else {
                p.base_mut(row)[d] += step;
            }
            p.pair_objective(X, Y, label, hyper)
        };
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}
