//! Chamfer distance, PCA alignment, action accuracies and the geometric
//! quality filter.

use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionVector;
use crate::kernel::{Solid, KernelError};
use crate::raster::GrayImage;

/// Mean Chamfer distance below which a reconstruction counts as a success.
pub const SUCCESS_CD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud covariance has rank < 3")]
    DegenerateCloud,
    #[error("sequence lengths differ ({pred} vs {gt})")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("no input")]
    EmptyInput,
}

type P3 = [f64; 3];

fn d2(a: &P3, b: &P3) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Static k-d tree over a point set for exact nearest-neighbor queries.
pub struct KdTree<'a> {
    pts: &'a [P3],
    idx: Vec<u32>,
    nodes: Vec<KdNode>,
}

#[derive(Clone, Copy)]
enum KdNode {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

const LEAF_SIZE: usize = 8;

impl<'a> KdTree<'a> {
    pub fn new(pts: &'a [P3]) -> Self {
        let mut t = KdTree { pts, idx: (0..pts.len() as u32).collect(), nodes: Vec::new() };
        if !pts.is_empty() {
            t.build(0, pts.len());
        }
        t
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.idx[start..end] {
            let p = self.pts[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        let mid = (start + end) / 2;
        let pts = self.pts;
        self.idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis])
        });
        let value = pts[self.idx[mid] as usize][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id as usize] = KdNode::Split { axis: axis as u8, value, left, right };
        id
    }

    /// Squared distance to the nearest point.
    pub fn nearest_d2(&self, q: &P3) -> f64 {
        let mut best = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best
    }

    fn search(&self, node: u32, q: &P3, best: &mut f64) {
        match self.nodes[node as usize] {
            KdNode::Leaf { start, end } => {
                for &i in &self.idx[start as usize..end as usize] {
                    let d = d2(q, &self.pts[i as usize]);
                    if d < *best {
                        *best = d;
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn mean_nn(from: &[P3], to: &KdTree) -> f64 {
    from.iter().map(|p| to.nearest_d2(p)).sum::<f64>() / from.len() as f64
}

/// [`mean_nn`], or `None` as soon as the mean is known to reach `bound`.
fn mean_nn_below(from: &[P3], to: &KdTree, bound: f64) -> Option<f64> {
    let n = from.len() as f64;
    let limit = bound * n;
    let mut acc = 0.0;
    for p in from {
        acc += to.nearest_d2(p);
        if acc >= limit {
            return None;
        }
    }
    Some(acc / n)
}

/// Symmetric mean squared nearest-neighbor distance. Returns `+∞` if either
/// cloud is empty; see [`try_chamfer`] for the checked variant.
pub fn chamfer(p: &[P3], q: &[P3]) -> f64 {
    try_chamfer(p, q).unwrap_or(f64::INFINITY)
}

pub fn try_chamfer(p: &[P3], q: &[P3]) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let tp = KdTree::new(p);
    let tq = KdTree::new(q);
    Ok(mean_nn(p, &tq) + mean_nn(q, &tp))
}

/// Quadratic reference implementation of [`chamfer`].
pub fn chamfer_brute(p: &[P3], q: &[P3]) -> f64 {
    let one = |a: &[P3], b: &[P3]| {
        a.iter()
            .map(|x| b.iter().map(|y| d2(x, y)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / a.len() as f64
    };
    one(p, q) + one(q, p)
}

/// The 48 signed permutations of three axes, identity first.
pub fn signed_permutations() -> Vec<([usize; 3], [f64; 3])> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for perm in PERMS {
        for bits in 0..8 {
            let s = |b: usize| if bits >> b & 1 == 1 { -1.0 } else { 1.0 };
            out.push((perm, [s(0), s(1), s(2)]));
        }
    }
    out
}

/// Maps prediction points into the ground-truth frame:
/// `x ↦ c_gt + s · F_gt · Π · F_predᵀ · (x − c_pred)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimilarityTransform {
    /// Row `i` of Π picks pred-frame axis `perm[i]` with sign `signs[i]`.
    pub perm: [usize; 3],
    pub signs: [f64; 3],
    #[serde(skip)]
    pub frame_gt: Matrix3<f64>,
    #[serde(skip)]
    pub frame_pred: Matrix3<f64>,
    pub scale: f64,
    pub centroid_gt: P3,
    pub centroid_pred: P3,
}

impl SimilarityTransform {
    pub fn signed_perm_matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, self.perm[i])] = self.signs[i];
        }
        m
    }

    /// Overall linear part without scale.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.frame_gt * self.signed_perm_matrix() * self.frame_pred.transpose()
    }

    pub fn is_proper(&self) -> bool {
        self.rotation().determinant() > 0.0
    }

    pub fn apply(&self, p: &P3) -> P3 {
        let r = self.rotation();
        let c = Vector3::from(self.centroid_pred);
        let v = r * (Vector3::from(*p) - c) * self.scale + Vector3::from(self.centroid_gt);
        [v[0], v[1], v[2]]
    }
}

fn centroid(p: &[P3]) -> P3 {
    let mut c = [0.0; 3];
    for x in p {
        for i in 0..3 {
            c[i] += x[i];
        }
    }
    let n = p.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

fn rms(p: &[P3], c: &P3) -> f64 {
    (p.iter().map(|x| d2(x, c)).sum::<f64>() / p.len() as f64).sqrt()
}

/// Principal axes as matrix columns, by decreasing variance.
pub fn pca_frame(p: &[P3], c: &P3) -> Result<Matrix3<f64>, MetricsError> {
    let mut cov = Matrix3::zeros();
    for x in p {
        let v = Vector3::new(x[0] - c[0], x[1] - c[1], x[2] - c[2]);
        cov += v * v.transpose();
    }
    cov /= p.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if top.is_nan() || top <= 0.0 || eig.eigenvalues[order[2]] <= 1e-12 * top {
        return Err(MetricsError::DegenerateCloud);
    }
    Ok(Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]))
}

/// Which candidate frames the alignment search considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignFamily {
    /// 48 signed permutations between the two PCA frames.
    Pca48,
    /// The PCA candidates plus the 48 signed permutations of world axes.
    PcaAndWorld,
}

/// All candidate transforms of the family, in search order.
pub fn alignment_candidates(
    gt: &[P3],
    pred: &[P3],
    family: AlignFamily,
) -> Result<Vec<SimilarityTransform>, MetricsError> {
    if gt.is_empty() || pred.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let (cg, cp) = (centroid(gt), centroid(pred));
    let mut frames = vec![(pca_frame(gt, &cg)?, pca_frame(pred, &cp)?)];
    if family == AlignFamily::PcaAndWorld {
        frames.push((Matrix3::identity(), Matrix3::identity()));
    }
    let rp = rms(pred, &cp);
    let scale = if rp > 0.0 { rms(gt, &cg) / rp } else { 1.0 };
    let mut out = Vec::new();
    for (fg, fp) in frames {
        for (perm, signs) in signed_permutations() {
            out.push(SimilarityTransform {
                perm,
                signs,
                frame_gt: fg,
                frame_pred: fp,
                scale,
                centroid_gt: cg,
                centroid_pred: cp,
            });
        }
    }
    Ok(out)
}

/// Searches the alignment family for the transform of `pred` minimizing the
/// Chamfer distance to `gt`; ties keep the earliest candidate.
pub fn align_with(gt: &[P3], pred: &[P3], family: AlignFamily) -> Result<(SimilarityTransform, f64), MetricsError> {
    let cands = alignment_candidates(gt, pred, family)?;
    let tg = KdTree::new(gt);
    let mut best: Option<(SimilarityTransform, f64)> = None;
    for t in cands {
        let moved: Vec<P3> = pred.iter().map(|p| t.apply(p)).collect();
        // Candidates that cannot beat the incumbent are abandoned early;
        // all terms are nonnegative so the pruning is exact.
        let bound = best.as_ref().map_or(f64::INFINITY, |b| b.1);
        let Some(to_gt) = mean_nn_below(&moved, &tg, bound) else { continue };
        let tm = KdTree::new(&moved);
        let Some(from_gt) = mean_nn_below(gt, &tm, bound - to_gt) else { continue };
        let cd = from_gt + to_gt;
        if cd < bound {
            best = Some((t, cd));
        }
    }
    Ok(best.expect("family is nonempty"))
}

pub fn align_pca(gt: &[P3], pred: &[P3]) -> Result<(SimilarityTransform, f64), MetricsError> {
    align_with(gt, pred, AlignFamily::Pca48)
}

fn check_lengths(pred: &[ActionVector], gt: &[ActionVector]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

pub fn cmd_accuracy(pred: &[ActionVector], gt: &[ActionVector]) -> Result<f64, MetricsError> {
    check_lengths(pred, gt)?;
    let hits = pred.iter().zip(gt).filter(|(p, g)| p.cmd() == g.cmd()).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Per-step parameter score; a correct parameterless command scores 1.
pub fn step_param_score(pred: &ActionVector, gt: &ActionVector) -> f64 {
    if pred.cmd() != gt.cmd() {
        return 0.0;
    }
    let slots = ActionVector::used_slots(gt.cmd());
    if slots.is_empty() {
        return 1.0;
    }
    let ok = slots.iter().filter(|&&s| pred.0[s] == gt.0[s]).count();
    ok as f64 / slots.len() as f64
}

pub fn param_accuracy(pred: &[ActionVector], gt: &[ActionVector]) -> Result<f64, MetricsError> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| step_param_score(p, g)).sum::<f64>() / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthBin {
    Short,
    Medium,
    Long,
}

impl LengthBin {
    /// Short below 120 actions, medium from 120 up to 200, long from 200.
    pub fn of(len: usize) -> Self {
        if len < 120 {
            LengthBin::Short
        } else if len < 200 {
            LengthBin::Medium
        } else {
            LengthBin::Long
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BinStat {
    pub episodes: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl BinStat {
    fn from_values(v: &[f64]) -> Self {
        if v.is_empty() {
            return BinStat::default();
        }
        BinStat {
            episodes: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Percentages of exactly matching 7-field vectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerfectStats {
    /// Episode-averaged percentages.
    pub overall: BinStat,
    pub short: BinStat,
    pub medium: BinStat,
    pub long: BinStat,
    /// Exact-match percentage pooled over all steps of all episodes.
    pub step_weighted: f64,
}

pub fn perfect_sequence_stats(episodes: &[(Vec<ActionVector>, Vec<ActionVector>)]) -> Result<PerfectStats, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut all = Vec::new();
    let mut bins: [Vec<f64>; 3] = Default::default();
    let (mut hits, mut steps) = (0usize, 0usize);
    for (pred, gt) in episodes {
        check_lengths(pred, gt)?;
        let h = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
        hits += h;
        steps += gt.len();
        let pct = 100.0 * h as f64 / gt.len() as f64;
        all.push(pct);
        bins[LengthBin::of(gt.len()) as usize].push(pct);
    }
    Ok(PerfectStats {
        overall: BinStat::from_values(&all),
        short: BinStat::from_values(&bins[0]),
        medium: BinStat::from_values(&bins[1]),
        long: BinStat::from_values(&bins[2]),
        step_weighted: 100.0 * hits as f64 / steps as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { samples: 4096, seed: 0, threshold: SUCCESS_CD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Pass { cd: f64 },
    Fail { cd: f64 },
    Invalid { reason: String },
}

impl Verdict {
    pub fn cd(&self) -> Option<f64> {
        match self {
            Verdict::Pass { cd } | Verdict::Fail { cd } => Some(*cd),
            Verdict::Invalid { .. } => None,
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

/// Aligned Chamfer distance between two solids' surface samples.
pub fn solid_cd(target: &Solid, rebuilt: &Solid, cfg: &FilterConfig) -> Result<f64, String> {
    let a = target.sample_points(cfg.samples, cfg.seed).map_err(|e| format!("target: {e}"))?;
    let b = match rebuilt.sample_points(cfg.samples, cfg.seed) {
        Ok(b) => b,
        Err(KernelError::EmptySolid) => return Err("rebuilt solid is empty".into()),
        Err(e) => return Err(format!("rebuilt: {e}")),
    };
    align_with(&a.points, &b.points, AlignFamily::PcaAndWorld)
        .map(|(_, cd)| cd)
        .map_err(|e| e.to_string())
}

/// Geometric acceptance test for a reconstruction.
pub fn quality_filter(target: &Solid, rebuilt: &Solid, cfg: &FilterConfig) -> Verdict {
    match solid_cd(target, rebuilt, cfg) {
        Ok(cd) if cd < cfg.threshold => Verdict::Pass { cd },
        Ok(cd) => Verdict::Fail { cd },
        Err(reason) => Verdict::Invalid { reason },
    }
}

/// Hook for an appearance-based similarity score between a target render
/// and a reconstruction render, in `[0, 1]`. No implementation ships; a
/// caller may combine it with [`quality_filter`].
pub trait ExternalSimilarity: Send + Sync {
    fn similarity(&self, target: &GrayImage, rebuilt: &GrayImage) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CdStats {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mu_cmd: f64,
    pub mu_param: f64,
    pub perfect: PerfectStats,
    pub cd: CdStats,
    /// Percent of episodes with CD below [`SUCCESS_CD`].
    pub success_rate: f64,
    /// Percent of episodes whose prediction produced no valid solid.
    pub invalid_rate: f64,
}

/// One evaluated episode: action vectors and the aligned CD (None if the
/// prediction was invalid).
#[derive(Debug, Clone)]
pub struct EpisodeEval {
    pub pred: Vec<ActionVector>,
    pub gt: Vec<ActionVector>,
    pub cd: Option<f64>,
}

impl EvalReport {
    pub fn from_episodes(eps: &[EpisodeEval]) -> Result<EvalReport, MetricsError> {
        if eps.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let (mut cmd, mut par, mut steps) = (0.0, 0.0, 0usize);
        for e in eps {
            let t = e.gt.len();
            cmd += cmd_accuracy(&e.pred, &e.gt)? * t as f64;
            par += param_accuracy(&e.pred, &e.gt)? * t as f64;
            steps += t;
        }
        let pairs: Vec<_> = eps.iter().map(|e| (e.pred.clone(), e.gt.clone())).collect();
        let mut cds: Vec<f64> = eps.iter().filter_map(|e| e.cd).collect();
        cds.sort_by(f64::total_cmp);
        let cd = if cds.is_empty() {
            CdStats::default()
        } else {
            let n = cds.len();
            CdStats {
                mean: cds.iter().sum::<f64>() / n as f64,
                median: if n % 2 == 1 { cds[n / 2] } else { 0.5 * (cds[n / 2 - 1] + cds[n / 2]) },
                min: cds[0],
                max: cds[n - 1],
            }
        };
        let n = eps.len() as f64;
        Ok(EvalReport {
            episodes: eps.len(),
            mu_cmd: cmd / steps as f64,
            mu_param: par / steps as f64,
            perfect: perfect_sequence_stats(&pairs)?,
            cd,
            success_rate: 100.0 * cds.iter().filter(|&&c| c < SUCCESS_CD).count() as f64 / n,
            invalid_rate: 100.0 * eps.iter().filter(|e| e.cd.is_none()).count() as f64 / n,
        })
    }

    /// One header row and one value row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "episodes",
            "mu_cmd",
            "mu_param",
            "perfect_mean",
            "perfect_min",
            "perfect_max",
            "perfect_short",
            "perfect_medium",
            "perfect_long",
            "success_rate",
            "mean_cd",
            "median_cd",
            "invalid_rate",
        ])?;
        let p = &self.perfect;
        w.write_record([
            self.episodes.to_string(),
            format!("{:.6}", self.mu_cmd),
            format!("{:.6}", self.mu_param),
            format!("{:.4}", p.overall.mean),
            format!("{:.4}", p.overall.min),
            format!("{:.4}", p.overall.max),
            format!("{:.4}", p.short.mean),
            format!("{:.4}", p.medium.mean),
            format!("{:.4}", p.long.mean),
            format!("{:.4}", self.success_rate),
            format!("{:.6}", self.cd.mean),
            format!("{:.6}", self.cd.median),
            format!("{:.4}", self.invalid_rate),
        ])?;
        w.flush()?;
        Ok(())
    }
}
