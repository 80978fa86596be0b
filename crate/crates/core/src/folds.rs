//! Learn/dev/eval fold generation under the OE protocol and the sanitized protocol.
//!
//! The OE protocol samples dev and eval positives straight from the closure of
//! the input, so most held-out pairs are implied by the learn fold. The
//! sanitized protocol removes every held-out positive that the closure of the
//! learn positives (and, for eval, the dev positives) already implies, rejects
//! sampled negatives that lie in the closure, and drops held-out pairs whose
//! endpoints never occur in the learn fold.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poset::{Closure, NodeId, NodeKind, Pair, PartialOrder};

/// Learn-fold fraction that turns the 838073 closure pairs of the WordNet noun
/// hierarchy into 679241 learn positives.
pub const SANITIZED_LEARN_FRACTION: f64 = 0.81048;
pub const SANITIZED_DEV_SIZE: usize = 4393;
pub const SANITIZED_EVAL_SIZE: usize = 4316;
pub const OE_HELDOUT_SIZE: usize = 4000;
/// Rejection sampling gives up after this many attempts per requested instance.
pub const ATTEMPTS_PER_INSTANCE: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabeledPair {
    pub x: NodeId,
    pub y: NodeId,
    pub label: Label,
}

impl LabeledPair {
    pub fn positive((x, y): Pair) -> Self {
        LabeledPair {
            x,
            y,
            label: Label::Positive,
        }
    }

    pub fn negative((x, y): Pair) -> Self {
        LabeledPair {
            x,
            y,
            label: Label::Negative,
        }
    }

    pub fn pair(&self) -> Pair {
        (self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Oe,
    Sanitized,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Oe => "oe",
            Protocol::Sanitized => "sanitized",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oe" => Ok(Protocol::Oe),
            "sanitized" => Ok(Protocol::Sanitized),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub protocol: Protocol,
    pub learn_fraction: f64,
    pub dev_size: usize,
    pub eval_size: usize,
    pub seed: u64,
}

impl SplitConfig {
    /// Held-out folds of 4000 pairs each; everything else is learn data.
    pub fn oe(seed: u64) -> Self {
        SplitConfig {
            protocol: Protocol::Oe,
            learn_fraction: 1.0,
            dev_size: OE_HELDOUT_SIZE,
            eval_size: OE_HELDOUT_SIZE,
            seed,
        }
    }

    pub fn sanitized(seed: u64) -> Self {
        SplitConfig {
            protocol: Protocol::Sanitized,
            learn_fraction: SANITIZED_LEARN_FRACTION,
            dev_size: SANITIZED_DEV_SIZE,
            eval_size: SANITIZED_EVAL_SIZE,
            seed,
        }
    }

    pub fn for_protocol(protocol: Protocol, seed: u64) -> Self {
        match protocol {
            Protocol::Oe => Self::oe(seed),
            Protocol::Sanitized => Self::sanitized(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learn_fraction > 0.0 && self.learn_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "learn fraction {} outside (0, 1]",
                self.learn_fraction
            )));
        }
        if self.dev_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("dev and eval sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The six labeled folds `L₊ L₋ D₊ D₋ E₊ E₋`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldSet {
    pub learn_pos: Vec<LabeledPair>,
    pub learn_neg: Vec<LabeledPair>,
    pub dev_pos: Vec<LabeledPair>,
    pub dev_neg: Vec<LabeledPair>,
    pub eval_pos: Vec<LabeledPair>,
    pub eval_neg: Vec<LabeledPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSizes {
    pub learn_pos: usize,
    pub learn_neg: usize,
    pub dev_pos: usize,
    pub dev_neg: usize,
    pub eval_pos: usize,
    pub eval_neg: usize,
}

/// File stems of the six folds, in [`FoldSet::folds`] order.
pub const FOLD_NAMES: [&str; 6] = [
    "learn_pos",
    "learn_neg",
    "dev_pos",
    "dev_neg",
    "eval_pos",
    "eval_neg",
];

impl FoldSet {
    pub fn folds(&self) -> [&Vec<LabeledPair>; 6] {
        [
            &self.learn_pos,
            &self.learn_neg,
            &self.dev_pos,
            &self.dev_neg,
            &self.eval_pos,
            &self.eval_neg,
        ]
    }

    fn folds_mut(&mut self) -> [&mut Vec<LabeledPair>; 6] {
        [
            &mut self.learn_pos,
            &mut self.learn_neg,
            &mut self.dev_pos,
            &mut self.dev_neg,
            &mut self.eval_pos,
            &mut self.eval_neg,
        ]
    }

    pub fn sizes(&self) -> FoldSizes {
        FoldSizes {
            learn_pos: self.learn_pos.len(),
            learn_neg: self.learn_neg.len(),
            dev_pos: self.dev_pos.len(),
            dev_neg: self.dev_neg.len(),
            eval_pos: self.eval_pos.len(),
            eval_neg: self.eval_neg.len(),
        }
    }

    pub fn learn(&self) -> impl Iterator<Item = &LabeledPair> {
        self.learn_pos.iter().chain(&self.learn_neg)
    }

    pub fn dev(&self) -> impl Iterator<Item = &LabeledPair> {
        self.dev_pos.iter().chain(&self.dev_neg)
    }

    pub fn eval(&self) -> impl Iterator<Item = &LabeledPair> {
        self.eval_pos.iter().chain(&self.eval_neg)
    }

    /// Closure of the learn positives taken as edges.
    pub fn learn_closure(&self, num_nodes: usize) -> Result<Closure> {
        let pairs: Vec<Pair> = self.learn_pos.iter().map(LabeledPair::pair).collect();
        Closure::from_pairs(&pairs, num_nodes)
    }
}

/// Replace exactly one endpoint of `pair`, chosen by a fair coin, with a node
/// drawn uniformly from the vocabulary minus both original endpoints.
pub fn perturb_negative<R: Rng + ?Sized>(
    pair: Pair,
    num_nodes: usize,
    rng: &mut R,
) -> Result<LabeledPair> {
    let (x, y) = pair;
    if num_nodes < 3 {
        return Err(Error::Config(format!(
            "cannot perturb a pair within a {num_nodes}-node vocabulary"
        )));
    }
    let (lo, hi) = if x < y { (x.0, y.0) } else { (y.0, x.0) };
    let mut r = rng.gen_range(0..num_nodes as u32 - 2);
    if r >= lo {
        r += 1;
    }
    if r >= hi {
        r += 1;
    }
    let swap_target: bool = rng.gen();
    let out = if swap_target {
        (x, NodeId(r))
    } else {
        (NodeId(r), y)
    };
    Ok(LabeledPair::negative(out))
}

/// Split under the protocol named in `cfg`, seeding a fresh stream from `cfg.seed`.
pub fn split(closure: &Closure, cfg: &SplitConfig) -> Result<FoldSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.protocol {
        Protocol::Oe => split_oe_protocol(closure, cfg, &mut rng),
        Protocol::Sanitized => split_sanitized_protocol(closure, cfg, &mut rng),
    }
}

fn shuffled_closure<R: Rng + ?Sized>(closure: &Closure, rng: &mut R) -> Vec<Pair> {
    let mut pairs: Vec<Pair> = closure.pairs().collect();
    pairs.shuffle(rng);
    pairs
}

fn scaled(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).min(total)
}

/// Eval then dev positives drawn without replacement from the closure, the
/// learn fold from what remains. Negatives are one unchecked perturbation per
/// positive, so they may coincide with closure pairs.
pub fn split_oe_protocol<R: Rng + ?Sized>(
    closure: &Closure,
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<FoldSet> {
    cfg.validate()?;
    let total = closure.len();
    if cfg.dev_size + cfg.eval_size >= total {
        return Err(Error::Config(format!(
            "dev ({}) + eval ({}) sizes leave no learn pairs in a closure of {total}",
            cfg.dev_size, cfg.eval_size
        )));
    }
    let pairs = shuffled_closure(closure, rng);
    let (eval, rest) = pairs.split_at(cfg.eval_size);
    let (dev, rest) = rest.split_at(cfg.dev_size);
    let learn = &rest[..scaled(cfg.learn_fraction, rest.len())];

    let n = closure.num_nodes();
    let mut folds = FoldSet {
        learn_pos: learn.iter().copied().map(LabeledPair::positive).collect(),
        dev_pos: dev.iter().copied().map(LabeledPair::positive).collect(),
        eval_pos: eval.iter().copied().map(LabeledPair::positive).collect(),
        ..FoldSet::default()
    };
    // eval negatives first so that they do not depend on the learn fraction
    folds.eval_neg = one_per_positive(&folds.eval_pos, n, rng)?;
    folds.dev_neg = one_per_positive(&folds.dev_pos, n, rng)?;
    folds.learn_neg = one_per_positive(&folds.learn_pos, n, rng)?;
    Ok(folds)
}

fn one_per_positive<R: Rng + ?Sized>(
    positives: &[LabeledPair],
    n: usize,
    rng: &mut R,
) -> Result<Vec<LabeledPair>> {
    positives
        .iter()
        .map(|p| perturb_negative(p.pair(), n, rng))
        .collect()
}

/// Rejection-sample `positives.len()` negatives by perturbing uniformly drawn
/// positives, discarding closure members and, when `allowed` is given, pairs
/// with an endpoint outside it.
fn rejected_negatives<R: Rng + ?Sized>(
    positives: &[LabeledPair],
    closure: &Closure,
    allowed: Option<&[bool]>,
    fold: &'static str,
    rng: &mut R,
) -> Result<Vec<LabeledPair>> {
    let target = positives.len();
    let mut out = Vec::with_capacity(target);
    let budget = ATTEMPTS_PER_INSTANCE.saturating_mul(target);
    let mut attempts = 0;
    while out.len() < target {
        if attempts == budget {
            return Err(Error::PoolExhausted {
                fold,
                achieved: out.len(),
                target,
            });
        }
        attempts += 1;
        let source = positives[rng.gen_range(0..target)];
        let cand = perturb_negative(source.pair(), closure.num_nodes(), rng)?;
        if closure.holds(cand.x, cand.y) {
            continue;
        }
        if let Some(allowed) = allowed {
            if !allowed[cand.x.index()] || !allowed[cand.y.index()] {
                continue;
            }
        }
        out.push(cand);
    }
    Ok(out)
}

/// Sanitized protocol: learn positives are a uniform sample of the closure;
/// dev and eval positives are the next shuffled pairs that survive the leakage
/// and endpoint filters.
pub fn split_sanitized_protocol<R: Rng + ?Sized>(
    closure: &Closure,
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<FoldSet> {
    cfg.validate()?;
    let n = closure.num_nodes();
    let pairs = shuffled_closure(closure, rng);
    let learn_len = scaled(cfg.learn_fraction, pairs.len());
    let mut folds = FoldSet {
        learn_pos: pairs[..learn_len]
            .iter()
            .copied()
            .map(LabeledPair::positive)
            .collect(),
        ..FoldSet::default()
    };
    folds.learn_neg = rejected_negatives(&folds.learn_pos, closure, None, "learn negative", rng)?;

    let learn_closure = folds.learn_closure(n)?;
    let mut seen = vec![false; n];
    for p in folds.learn() {
        seen[p.x.index()] = true;
        seen[p.y.index()] = true;
    }
    let usable = |&(x, y): &Pair| seen[x.index()] && seen[y.index()];

    let mut cursor = pairs[learn_len..].iter();
    folds.dev_pos = take_filtered(&mut cursor, cfg.dev_size, "dev positive", |p| {
        usable(p) && !learn_closure.holds(p.0, p.1)
    })?;
    let dev_pairs: Vec<Pair> = folds.dev_pos.iter().map(LabeledPair::pair).collect();
    let dev_closure = Closure::from_pairs(&dev_pairs, n)?;
    // pairs the dev scan skipped fail the eval filter too, so the cursor carries on
    folds.eval_pos = take_filtered(&mut cursor, cfg.eval_size, "eval positive", |p| {
        usable(p) && !learn_closure.holds(p.0, p.1) && !dev_closure.holds(p.0, p.1)
    })?;

    folds.dev_neg = rejected_negatives(&folds.dev_pos, closure, Some(&seen), "dev negative", rng)?;
    folds.eval_neg =
        rejected_negatives(&folds.eval_pos, closure, Some(&seen), "eval negative", rng)?;
    Ok(folds)
}

fn take_filtered<'a>(
    cursor: &mut impl Iterator<Item = &'a Pair>,
    target: usize,
    fold: &'static str,
    keep: impl Fn(&Pair) -> bool,
) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        match cursor.next() {
            Some(p) if keep(p) => out.push(LabeledPair::positive(*p)),
            Some(_) => {}
            None => {
                return Err(Error::PoolExhausted {
                    fold,
                    achieved: out.len(),
                    target,
                })
            }
        }
    }
    Ok(out)
}

/// Violation counts for the fold invariants. Sanitized-only checks are `None`
/// when verifying under the OE protocol.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldReport {
    pub protocol: Option<Protocol>,
    /// Folds whose negative count differs from the matching positive count.
    pub size_mismatches: usize,
    /// Pairs whose label disagrees with their fold.
    pub mislabeled: usize,
    pub self_pairs: usize,
    /// Pairs present in more than one positive fold.
    pub positive_overlaps: usize,
    pub positives_outside_closure: usize,
    pub negatives_in_closure: Option<usize>,
    /// `D₊ ∩ clo(L₊)`
    pub dev_leaks: Option<usize>,
    /// `E₊ ∩ (clo(L₊) ∪ clo(D₊))`
    pub eval_leaks: Option<usize>,
    /// Held-out pairs with an endpoint that never occurs in `L₊ ∪ L₋`.
    pub unseen_endpoints: Option<usize>,
}

impl FoldReport {
    pub fn total_violations(&self) -> usize {
        self.size_mismatches
            + self.mislabeled
            + self.self_pairs
            + self.positive_overlaps
            + self.positives_outside_closure
            + [
                self.negatives_in_closure,
                self.dev_leaks,
                self.eval_leaks,
                self.unseen_endpoints,
            ]
            .iter()
            .flatten()
            .sum::<usize>()
    }

    pub fn passed(&self) -> bool {
        self.total_violations() == 0
    }
}

/// Audit `folds` against `closure` (the closure of the full input).
pub fn verify_folds(folds: &FoldSet, closure: &Closure, protocol: Protocol) -> FoldReport {
    let n = closure.num_nodes();
    let in_range = |p: &LabeledPair| p.x.index() < n && p.y.index() < n;
    let in_closure = |p: &LabeledPair| in_range(p) && closure.holds(p.x, p.y);
    let mut report = FoldReport {
        protocol: Some(protocol),
        ..FoldReport::default()
    };

    for (pos, neg) in [
        (&folds.learn_pos, &folds.learn_neg),
        (&folds.dev_pos, &folds.dev_neg),
        (&folds.eval_pos, &folds.eval_neg),
    ] {
        if pos.len() != neg.len() {
            report.size_mismatches += 1;
        }
        report.mislabeled += pos.iter().filter(|p| p.label != Label::Positive).count();
        report.mislabeled += neg.iter().filter(|p| p.label != Label::Negative).count();
    }
    for fold in folds.folds() {
        report.self_pairs += fold.iter().filter(|p| p.x == p.y).count();
    }

    let mut owner: HashMap<Pair, usize> = HashMap::new();
    for (i, fold) in [&folds.learn_pos, &folds.dev_pos, &folds.eval_pos]
        .into_iter()
        .enumerate()
    {
        for p in fold {
            match owner.get(&p.pair()) {
                Some(&j) if j != i => report.positive_overlaps += 1,
                Some(_) => {}
                None => {
                    owner.insert(p.pair(), i);
                }
            }
        }
    }
    report.positives_outside_closure = [&folds.learn_pos, &folds.dev_pos, &folds.eval_pos]
        .into_iter()
        .flatten()
        .filter(|p| !in_closure(p))
        .count();

    if protocol == Protocol::Sanitized {
        report.negatives_in_closure = Some(
            [&folds.learn_neg, &folds.dev_neg, &folds.eval_neg]
                .into_iter()
                .flatten()
                .filter(|p| in_closure(p))
                .count(),
        );
        // positives outside clo(T) are already counted; close over the rest
        let closed = |fold: &[LabeledPair]| {
            let pairs: Vec<Pair> = fold
                .iter()
                .filter(|p| in_closure(p) && p.x != p.y)
                .map(LabeledPair::pair)
                .collect();
            Closure::from_pairs(&pairs, n).expect("subset of an acyclic closure")
        };
        let learn_closure = closed(&folds.learn_pos);
        let dev_closure = closed(&folds.dev_pos);
        report.dev_leaks = Some(
            folds
                .dev_pos
                .iter()
                .filter(|p| in_range(p) && learn_closure.holds(p.x, p.y))
                .count(),
        );
        report.eval_leaks = Some(
            folds
                .eval_pos
                .iter()
                .filter(|p| {
                    in_range(p) && (learn_closure.holds(p.x, p.y) || dev_closure.holds(p.x, p.y))
                })
                .count(),
        );
        let mut seen = vec![false; n];
        for p in folds.learn().filter(|p| in_range(p)) {
            seen[p.x.index()] = true;
            seen[p.y.index()] = true;
        }
        report.unseen_endpoints = Some(
            folds
                .dev()
                .chain(folds.eval())
                .filter(|p| !in_range(p) || !seen[p.x.index()] || !seen[p.y.index()])
                .count(),
        );
    }
    report
}

/// Everything needed to replay or audit a split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub protocol: Protocol,
    pub seed: u64,
    pub learn_fraction: f64,
    pub dev_size: usize,
    pub eval_size: usize,
    pub sizes: FoldSizes,
    pub source_edges: String,
    pub source_sha256: String,
    pub closure_pairs: usize,
    pub verification: FoldReport,
}

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Write `vocab.tsv`, the six fold TSVs and `manifest.json` into `dir`.
pub fn write_fold_dir(
    dir: &Path,
    order: &PartialOrder,
    folds: &FoldSet,
    manifest: &Manifest,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join(VOCAB_FILE);
    write_lines(&vocab_path, |w| {
        for (name, kind) in order.names().iter().zip(order.kinds()) {
            let kind = match kind {
                NodeKind::Entity => "entity",
                NodeKind::Type => "type",
            };
            writeln!(w, "{name}\t{kind}")?;
        }
        Ok(())
    })?;
    for (stem, fold) in FOLD_NAMES.iter().zip(folds.folds()) {
        let path = dir.join(format!("{stem}.tsv"));
        write_lines(&path, |w| {
            for p in fold {
                let label = if p.label.is_positive() { 1 } else { 0 };
                writeln!(w, "{}\t{}\t{label}", order.name(p.x), order.name(p.y))?;
            }
            Ok(())
        })?;
    }
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn write_lines(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Vocabulary (as an edgeless order carrying node kinds) and folds read back
/// from a fold directory.
pub fn read_fold_dir(dir: &Path) -> Result<(PartialOrder, FoldSet)> {
    let vocab_path = dir.join(VOCAB_FILE);
    let mut order = PartialOrder::default();
    for (lineno, line) in read_lines(&vocab_path)? {
        let cols: Vec<&str> = line.split('\t').collect();
        let kind = match cols.as_slice() {
            [_, "type"] | [_] => NodeKind::Type,
            [_, "entity"] => NodeKind::Entity,
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("{}: bad vocabulary row", vocab_path.display()),
                })
            }
        };
        let id = order.intern(cols[0]);
        order.set_kind(id, kind);
    }

    let mut folds = FoldSet::default();
    for (stem, fold) in FOLD_NAMES.iter().zip(folds.folds_mut()) {
        let path = dir.join(format!("{stem}.tsv"));
        let mut missing = Vec::new();
        for (lineno, line) in read_lines(&path)? {
            let cols: Vec<&str> = line.split('\t').collect();
            let [x, y, label] = cols.as_slice() else {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("{}: expected 3 columns", path.display()),
                });
            };
            let label = match *label {
                "1" => Label::Positive,
                "0" => Label::Negative,
                other => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("{}: bad label `{other}`", path.display()),
                    })
                }
            };
            match (order.id(x), order.id(y)) {
                (Some(x), Some(y)) => fold.push(LabeledPair { x, y, label }),
                (a, b) => {
                    if a.is_none() {
                        missing.push(x.to_string());
                    }
                    if b.is_none() {
                        missing.push(y.to_string());
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Vocabulary(missing));
        }
    }
    Ok((order, folds))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if !line.is_empty() {
            out.push((i + 1, line.to_string()));
        }
    }
    Ok(out)
}
