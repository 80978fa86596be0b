//! Order (cone), sigmoid order and rectangle embeddings: parameters, per-pair
//! losses, analytic subgradients and ranking scores.
//!
//! Every node `x` has a base vector `u_x`. For rectangle models it also has a
//! nonnegative width vector `v_x`, so that in dimension `d` the node covers
//! `[u_{x,d}, u_{x,d} + v_{x,d}]`. Entity nodes are points: their widths are
//! pinned at zero. A positive pair `x ≺ y` asks for `u_x ≥ u_y` elementwise
//! (cones), or for the rectangle of `x` to lie inside the rectangle of `y`.
//!
//! Losses depend only on coordinate differences, so they are invariant under
//! translating all base vectors by a common offset.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{read_lines, write_lines, Label};
use crate::poset::{NodeId, NodeKind};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Squared-hinge order embedding with loss margin `alpha`.
    Oe,
    /// Max/min hinge order embedding squashed through a sigmoid.
    SigmaOe,
    /// Hyper-rectangles with sigmoid containment losses.
    Rect,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Oe, ModelKind::SigmaOe, ModelKind::Rect];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Oe => "oe",
            ModelKind::SigmaOe => "sigma_oe",
            ModelKind::Rect => "rect",
        }
    }

    pub fn has_widths(self) -> bool {
        self == ModelKind::Rect
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oe" => Ok(ModelKind::Oe),
            "sigma_oe" | "sigma-oe" => Ok(ModelKind::SigmaOe),
            "rect" => Ok(ModelKind::Rect),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Loss hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossHyper<F> {
    /// Loss margin of the squared-hinge model's negative term.
    pub alpha: F,
    /// Geometric margin added inside every sigmoid-model hinge.
    pub delta: F,
    /// Stiffness multiplying the hinge inside the sigmoid.
    pub psi: F,
    /// Coefficient of the squared-L2 width penalty on type rows.
    pub lambda: F,
}

impl<F: Scalar> Default for LossHyper<F> {
    fn default() -> Self {
        LossHyper {
            alpha: F::one(),
            delta: F::zero(),
            psi: F::one(),
            lambda: F::lit(1e-3),
        }
    }
}

impl<F: Scalar> LossHyper<F> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= F::zero()
            && self.delta >= F::zero()
            && self.psi > F::zero()
            && self.lambda >= F::zero()
            && [self.alpha, self.delta, self.psi, self.lambda]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "need alpha, delta, lambda >= 0 and psi > 0 (got {self:?})"
            )))
        }
    }
}

/// Which side of a rectangle the active violation sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    /// Lower corners: `u_y - u_x` (positive) or `u_x - u_y` (negative).
    Lower,
    /// Upper corners, involving the widths.
    Upper,
}

/// The extreme per-dimension hinge argument of a sigmoid loss and where it occurs.
#[derive(Clone, Copy, Debug)]
struct Extreme<F> {
    value: F,
    dim: usize,
    side: Side,
}

/// Subgradient of one pair's objective with respect to the rows it touches.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient<F> {
    pub x: NodeId,
    pub y: NodeId,
    pub base_x: Vec<F>,
    pub base_y: Vec<F>,
    /// Present for rectangle models.
    pub width_x: Option<Vec<F>>,
    pub width_y: Option<Vec<F>>,
}

impl<F: Scalar> PairGradient<F> {
    pub fn zeros(dim: usize, widths: bool) -> Self {
        PairGradient {
            x: NodeId(0),
            y: NodeId(0),
            base_x: vec![F::zero(); dim],
            base_y: vec![F::zero(); dim],
            width_x: widths.then(|| vec![F::zero(); dim]),
            width_y: widths.then(|| vec![F::zero(); dim]),
        }
    }

    fn reset(&mut self, x: NodeId, y: NodeId) {
        self.x = x;
        self.y = y;
        for buf in [&mut self.base_x, &mut self.base_y]
            .into_iter()
            .chain(self.width_x.as_mut())
            .chain(self.width_y.as_mut())
        {
            buf.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn is_zero(&self) -> bool {
        [&self.base_x, &self.base_y]
            .into_iter()
            .chain(self.width_x.as_ref())
            .chain(self.width_y.as_ref())
            .all(|v| v.iter().all(|g| g.is_zero()))
    }
}

/// Embedding parameters for `N` nodes in `D` dimensions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F> {
    kind: ModelKind,
    dim: usize,
    base: Vec<F>,
    width: Option<Vec<F>>,
    node_kinds: Vec<NodeKind>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Base entries uniform on `(-0.1, 0.1)`; type widths `0.1`, entity widths `0`.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        node_kinds: &[NodeKind],
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = node_kinds.len();
        let base = (0..n * dim)
            .map(|_| F::lit(rng.gen_range(-0.1..0.1)))
            .collect();
        let width = kind.has_widths().then(|| {
            node_kinds
                .iter()
                .flat_map(|k| {
                    let w = match k {
                        NodeKind::Type => F::lit(0.1),
                        NodeKind::Entity => F::zero(),
                    };
                    std::iter::repeat_n(w, dim)
                })
                .collect()
        });
        Self::from_parts(kind, dim, base, width, node_kinds.to_vec())
    }

    /// Assemble a model from row-major parameter buffers, checking every invariant.
    pub fn from_parts(
        kind: ModelKind,
        dim: usize,
        base: Vec<F>,
        width: Option<Vec<F>>,
        node_kinds: Vec<NodeKind>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        let n = node_kinds.len();
        if base.len() != n * dim {
            return Err(Error::Config(format!(
                "base matrix has {} entries, expected {n}x{dim}",
                base.len()
            )));
        }
        match (&width, kind.has_widths()) {
            (Some(w), true) => {
                if w.len() != n * dim {
                    return Err(Error::Config(format!(
                        "width matrix has {} entries, expected {n}x{dim}",
                        w.len()
                    )));
                }
                if w.iter().any(|&v| v.is_nan() || v < F::zero()) {
                    return Err(Error::Config("widths must be nonnegative".into()));
                }
                for (i, k) in node_kinds.iter().enumerate() {
                    if *k == NodeKind::Entity && w[i * dim..(i + 1) * dim].iter().any(|v| !v.is_zero())
                    {
                        return Err(Error::Config(format!("entity row {i} has nonzero width")));
                    }
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config(format!("`{kind}` models carry no widths")))
            }
            (None, true) => return Err(Error::Config("rectangle model needs widths".into())),
        }
        Ok(EmbeddingModel {
            kind,
            dim,
            base,
            width,
            node_kinds,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn node_kinds(&self) -> &[NodeKind] {
        &self.node_kinds
    }

    pub fn base(&self, x: NodeId) -> &[F] {
        let i = x.index() * self.dim;
        &self.base[i..i + self.dim]
    }

    pub fn base_mut(&mut self, x: NodeId) -> &mut [F] {
        let i = x.index() * self.dim;
        &mut self.base[i..i + self.dim]
    }

    pub fn width(&self, x: NodeId) -> Option<&[F]> {
        let i = x.index() * self.dim;
        self.width.as_ref().map(|w| &w[i..i + self.dim])
    }

    pub fn width_mut(&mut self, x: NodeId) -> Option<&mut [F]> {
        let i = x.index() * self.dim;
        let dim = self.dim;
        self.width.as_mut().map(|w| &mut w[i..i + dim])
    }

    pub fn base_matrix(&self) -> &[F] {
        &self.base
    }

    pub fn width_matrix(&self) -> Option<&[F]> {
        self.width.as_deref()
    }

    /// Clamp widths of `x` at zero and pin entity widths to exactly zero.
    pub fn project_row(&mut self, x: NodeId) {
        let entity = self.node_kinds[x.index()] == NodeKind::Entity;
        if let Some(w) = self.width_mut(x) {
            for v in w {
                *v = if entity { F::zero() } else { v.max(F::zero()) };
            }
        }
    }

    pub fn project(&mut self) {
        for i in 0..self.num_nodes() {
            self.project_row(NodeId::from_index(i));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.base
            .iter()
            .chain(self.width.iter().flatten())
            .all(|v| v.is_finite())
    }

    fn expect_kind(&self, expected: ModelKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::ModelKind {
                expected: expected.as_str(),
                actual: self.kind.as_str(),
            })
        }
    }

    /// Widths of `x`, or zeros for models without widths.
    fn widths_or_zero(&self, x: NodeId) -> impl Iterator<Item = F> + '_ {
        let w = self.width(x);
        (0..self.dim).map(move |d| w.map_or(F::zero(), |w| w[d]))
    }

    /// `ℓ(x,y) = ‖[u_y − u_x]₊‖²` for positives, `[α − ℓ(x,y)]₊` for negatives.
    pub fn oe_pair_loss(&self, x: NodeId, y: NodeId, label: Label, hyper: &LossHyper<F>) -> Result<F> {
        self.expect_kind(ModelKind::Oe)?;
        Ok(self.oe_loss(x, y, label, hyper))
    }

    fn squared_violation(&self, x: NodeId, y: NodeId) -> F {
        self.base(y)
            .iter()
            .zip(self.base(x))
            .map(|(&uy, &ux)| {
                let h = (uy - ux).hinge();
                h * h
            })
            .sum()
    }

    fn oe_loss(&self, x: NodeId, y: NodeId, label: Label, hyper: &LossHyper<F>) -> F {
        let l = self.squared_violation(x, y);
        match label {
            Label::Positive => l,
            Label::Negative => (hyper.alpha - l).hinge(),
        }
    }

    /// `σ(ψ·max_d [u_y + Δ − u_x]₊) − ½` for positives and
    /// `σ(ψ·min_d [u_x + Δ − u_y]₊) − ½` for negatives.
    pub fn sigma_oe_pair_loss(
        &self,
        x: NodeId,
        y: NodeId,
        label: Label,
        hyper: &LossHyper<F>,
    ) -> Result<F> {
        self.expect_kind(ModelKind::SigmaOe)?;
        Ok(self.sigmoid_loss(self.cone_extreme(x, y, label, hyper.delta), hyper))
    }

    /// `σ(ψ·max_d δ₊(x,y;d)) − ½` for positives and `σ(ψ·min_d δ₋(x,y;d)) − ½`
    /// for negatives.
    pub fn rect_pair_loss(
        &self,
        x: NodeId,
        y: NodeId,
        label: Label,
        hyper: &LossHyper<F>,
    ) -> Result<F> {
        self.expect_kind(ModelKind::Rect)?;
        Ok(self.sigmoid_loss(self.rect_extreme(x, y, label, hyper.delta), hyper))
    }

    /// Per-dimension rectangle violation: `δ₊` (positive label) is the larger of
    /// the lower-corner and upper-corner containment hinges, `δ₋` (negative
    /// label) the smaller of the two escape hinges.
    pub fn rect_delta(
        &self,
        x: NodeId,
        y: NodeId,
        d: usize,
        label: Label,
        hyper: &LossHyper<F>,
    ) -> Result<F> {
        self.expect_kind(ModelKind::Rect)?;
        if d >= self.dim {
            return Err(Error::Index {
                what: "dimension",
                index: d,
                bound: self.dim,
            });
        }
        let (value, _) = self.rect_terms(x, y, d, label, hyper.delta);
        Ok(value.hinge())
    }

    /// Combined hinge argument in dimension `d` (`max` of the two positive
    /// terms, `min` of the two negative ones) and the side that attains it.
    fn rect_terms(&self, x: NodeId, y: NodeId, d: usize, label: Label, delta: F) -> (F, Side) {
        let (ux, uy) = (self.base(x)[d], self.base(y)[d]);
        let vx = self.width(x).map_or(F::zero(), |w| w[d]);
        let vy = self.width(y).map_or(F::zero(), |w| w[d]);
        match label {
            Label::Positive => {
                let lower = uy + delta - ux;
                let upper = ux + vx + delta - uy - vy;
                if lower >= upper {
                    (lower, Side::Lower)
                } else {
                    (upper, Side::Upper)
                }
            }
            Label::Negative => {
                let lower = ux + delta - uy;
                let upper = uy + vy + delta - ux - vx;
                if lower <= upper {
                    (lower, Side::Lower)
                } else {
                    (upper, Side::Upper)
                }
            }
        }
    }

    /// Positive: the largest `u_y + Δ − u_x`; negative: the smallest `u_x + Δ − u_y`.
    /// Ties go to the lowest dimension.
    fn cone_extreme(&self, x: NodeId, y: NodeId, label: Label, delta: F) -> Extreme<F> {
        let diffs = self.base(x).iter().zip(self.base(y)).map(|(&ux, &uy)| match label {
            Label::Positive => uy + delta - ux,
            Label::Negative => ux + delta - uy,
        });
        extreme(diffs.map(|v| (v, Side::Lower)), label)
    }

    fn rect_extreme(&self, x: NodeId, y: NodeId, label: Label, delta: F) -> Extreme<F> {
        extreme(
            (0..self.dim).map(|d| self.rect_terms(x, y, d, label, delta)),
            label,
        )
    }

    fn sigmoid_loss(&self, e: Extreme<F>, hyper: &LossHyper<F>) -> F {
        (hyper.psi * e.value.hinge()).sigmoid() - F::lit(0.5)
    }

    /// Data loss of one labeled pair under this model's kind.
    pub fn pair_loss(&self, x: NodeId, y: NodeId, label: Label, hyper: &LossHyper<F>) -> F {
        match self.kind {
            ModelKind::Oe => self.oe_loss(x, y, label, hyper),
            ModelKind::SigmaOe => self.sigmoid_loss(self.cone_extreme(x, y, label, hyper.delta), hyper),
            ModelKind::Rect => self.sigmoid_loss(self.rect_extreme(x, y, label, hyper.delta), hyper),
        }
    }

    /// `λ‖v‖²` summed over the type rows among `x` and `y`; zero without widths.
    pub fn width_penalty(&self, x: NodeId, y: NodeId, hyper: &LossHyper<F>) -> F {
        if !self.kind.has_widths() {
            return F::zero();
        }
        [x, y]
            .into_iter()
            .filter(|&n| self.node_kinds[n.index()] == NodeKind::Type)
            .map(|n| self.widths_or_zero(n).map(|v| v * v).sum::<F>())
            .sum::<F>()
            * hyper.lambda
    }

    /// Pair loss plus the width penalty charged to this appearance of its rows.
    pub fn pair_objective(&self, x: NodeId, y: NodeId, label: Label, hyper: &LossHyper<F>) -> F {
        self.pair_loss(x, y, label, hyper) + self.width_penalty(x, y, hyper)
    }

    /// Subgradient of [`pair_objective`](Self::pair_objective).
    pub fn pair_gradient(
        &self,
        x: NodeId,
        y: NodeId,
        label: Label,
        hyper: &LossHyper<F>,
    ) -> PairGradient<F> {
        let mut g = PairGradient::zeros(self.dim, self.kind.has_widths());
        self.pair_gradient_into(x, y, label, hyper, &mut g);
        g
    }

    /// As [`pair_gradient`](Self::pair_gradient), reusing `out`'s buffers.
    ///
    /// Kinks take the zero subgradient; the `max_d`/`min_d` route the whole
    /// gradient to the first extreme dimension.
    pub fn pair_gradient_into(
        &self,
        x: NodeId,
        y: NodeId,
        label: Label,
        hyper: &LossHyper<F>,
        out: &mut PairGradient<F>,
    ) {
        out.reset(x, y);
        let two = F::lit(2.0);
        match self.kind {
            ModelKind::Oe => {
                let sign = match label {
                    Label::Positive => F::one(),
                    Label::Negative => {
                        if hyper.alpha - self.squared_violation(x, y) > F::zero() {
                            -F::one()
                        } else {
                            return;
                        }
                    }
                };
                for d in 0..self.dim {
                    let h = (self.base(y)[d] - self.base(x)[d]).hinge();
                    out.base_y[d] = sign * two * h;
                    out.base_x[d] = -sign * two * h;
                }
            }
            ModelKind::SigmaOe | ModelKind::Rect => {
                let e = match self.kind {
                    ModelKind::SigmaOe => self.cone_extreme(x, y, label, hyper.delta),
                    _ => self.rect_extreme(x, y, label, hyper.delta),
                };
                if e.value > F::zero() {
                    let s = (hyper.psi * e.value).sigmoid();
                    let g = hyper.psi * s * (F::one() - s);
                    let d = e.dim;
                    // ∂/∂(row) of the active hinge argument, scaled by g
                    let (dux, duy, dvx, dvy) = match (label, e.side) {
                        (Label::Positive, Side::Lower) => (-g, g, F::zero(), F::zero()),
                        (Label::Positive, Side::Upper) => (g, -g, g, -g),
                        (Label::Negative, Side::Lower) => (g, -g, F::zero(), F::zero()),
                        (Label::Negative, Side::Upper) => (-g, g, -g, g),
                    };
                    out.base_x[d] = dux;
                    out.base_y[d] = duy;
                    if let (Some(wx), Some(wy)) = (out.width_x.as_mut(), out.width_y.as_mut()) {
                        wx[d] = dvx;
                        wy[d] = dvy;
                    }
                }
            }
        }

        if let (Some(wx), Some(wy)) = (out.width_x.as_mut(), out.width_y.as_mut()) {
            for (n, buf) in [(x, wx), (y, wy)] {
                if self.node_kinds[n.index()] == NodeKind::Entity {
                    buf.iter_mut().for_each(|g| *g = F::zero());
                    continue;
                }
                let w = self.width(n).expect("rect model has widths");
                for (g, &v) in buf.iter_mut().zip(w) {
                    *g = *g + two * hyper.lambda * v;
                }
            }
        }
    }

    /// Margin-free violation magnitude; lower means more confidently `x ≺ y`.
    pub fn raw_score(&self, x: NodeId, y: NodeId) -> F {
        match self.kind {
            ModelKind::Oe => self.squared_violation(x, y),
            ModelKind::SigmaOe => self.cone_extreme(x, y, Label::Positive, F::zero()).value.hinge(),
            ModelKind::Rect => self.rect_extreme(x, y, Label::Positive, F::zero()).value.hinge(),
        }
    }

    /// Write the text embedding format: a `kind \t N \t D` header, then per node
    /// `name \t u_1 … u_D` with a further `\t v_1 … v_D` block for rectangles.
    pub fn write_file(&self, path: &Path, names: &[String]) -> Result<()> {
        if names.len() != self.num_nodes() {
            return Err(Error::Config(format!(
                "{} names for {} embedded nodes",
                names.len(),
                self.num_nodes()
            )));
        }
        write_lines(path, |w| {
            use std::io::Write;
            writeln!(w, "{}\t{}\t{}", self.kind, self.num_nodes(), self.dim)?;
            let join = |row: &[F]| {
                row.iter()
                    .map(|v| format!("{:.8e}", v))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            for (i, name) in names.iter().enumerate() {
                let id = NodeId::from_index(i);
                write!(w, "{name}\t{}", join(self.base(id)))?;
                if let Some(v) = self.width(id) {
                    write!(w, "\t{}", join(v))?;
                }
                writeln!(w)?;
            }
            Ok(())
        })
    }

    /// Read the format written by [`write_file`](Self::write_file). Every node
    /// is read as a type; see [`with_node_kinds`](Self::with_node_kinds).
    pub fn read_file(path: &Path) -> Result<(Vec<String>, Self)> {
        let lines = read_lines(path)?;
        let bad = |line: usize, message: String| Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        };
        let ((hl, header), rows) = lines
            .split_first()
            .ok_or_else(|| bad(1, "empty embedding file".into()))?;
        let head: Vec<&str> = header.split('\t').collect();
        let [kind, n, dim] = head.as_slice() else {
            return Err(bad(*hl, "header must be `kind \\t N \\t D`".into()));
        };
        let kind: ModelKind = kind.parse()?;
        let n: usize = n.parse().map_err(|_| bad(*hl, format!("bad node count `{n}`")))?;
        let dim: usize = dim.parse().map_err(|_| bad(*hl, format!("bad dimension `{dim}`")))?;
        if rows.len() != n {
            return Err(bad(*hl, format!("header promises {n} rows, found {}", rows.len())));
        }
        let parse_row = |line: usize, text: &str| -> Result<Vec<F>> {
            let vals: Vec<F> = text
                .split(' ')
                .map(|t| t.parse::<f64>().map(F::lit))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(line, e.to_string()))?;
            if vals.len() != dim {
                return Err(bad(line, format!("expected {dim} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let mut names = Vec::with_capacity(n);
        let mut base = Vec::with_capacity(n * dim);
        let mut width = kind.has_widths().then(|| Vec::with_capacity(n * dim));
        let mut node_kinds = Vec::with_capacity(n);
        for (line, text) in rows {
            let cols: Vec<&str> = text.split('\t').collect();
            let expected = if kind.has_widths() { 3 } else { 2 };
            if cols.len() != expected {
                return Err(bad(*line, format!("expected {expected} tab-separated fields")));
            }
            names.push(cols[0].to_string());
            base.extend(parse_row(*line, cols[1])?);
            if let Some(width) = width.as_mut() {
                width.extend(parse_row(*line, cols[2])?);
            }
            node_kinds.push(NodeKind::Type);
        }
        Ok((names, Self::from_parts(kind, dim, base, width, node_kinds)?))
    }

    /// Replace node kinds (e.g. with the training vocabulary's), re-projecting widths.
    pub fn with_node_kinds(mut self, node_kinds: Vec<NodeKind>) -> Result<Self> {
        if node_kinds.len() != self.num_nodes() {
            return Err(Error::Config("node kind count mismatch".into()));
        }
        self.node_kinds = node_kinds;
        self.project();
        Ok(self)
    }
}

/// Argmax (positive label) or argmin (negative label) with lowest-index ties.
fn extreme<F: Scalar>(terms: impl Iterator<Item = (F, Side)>, label: Label) -> Extreme<F> {
    let mut best: Option<Extreme<F>> = None;
    for (dim, (value, side)) in terms.enumerate() {
        let better = match (&best, label) {
            (None, _) => true,
            (Some(b), Label::Positive) => value > b.value,
            (Some(b), Label::Negative) => value < b.value,
        };
        if better {
            best = Some(Extreme { value, dim, side });
        }
    }
    best.expect("dimension is at least 1")
}
