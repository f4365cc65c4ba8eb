//! Multiple-choice visual questions about episodes.
//!
//! Answers are derived from the source sequence, its lowered records, the
//! oracle solid and the compiler's high-level tags. [`verify`] recomputes
//! every answer from a fresh simulation of the episode's action program
//! instead: document features, step events and camera modes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionProgram, HlTag};
use crate::compiler::{compile, CompileConfig};
use crate::dataset::{episode_dirs, load_verified_manifest, DatasetError, EpisodeStatus};
use crate::geometry::{lower_sequence, ExtentType, ExtrudeOp, ExtrudeParams, LoweredRecord, PlaneId, PrimitiveGeom};
use crate::kernel::render::render;
use crate::kernel::{
    build_solid, count_through_holes, render_isometric, symmetry_planes, symmetry_scores, Camera, Framing, Shading,
    Solid, SYMMETRY_TOL,
};
use crate::metrics::{quality_filter, FilterConfig};
use crate::raster::GrayImage;
use crate::sequence::{parse_sequence, CadSequence, PrimitiveKind};
use crate::sim::{run, CameraMode, DocState, EpisodeTrace, Feature, SimConfig, SimEvent, Status};

#[derive(Debug, Error)]
pub enum VqaError {
    #[error("prerequisite unmet: {0}")]
    PrerequisiteUnmet(String),
    #[error("no episode satisfies the prerequisites of {0}")]
    InsufficientEpisodes(Family),
    #[error("episode {id} is not usable: {reason}")]
    NotEligible { id: String, reason: String },
    #[error("no usable episodes in {0}")]
    NoEpisodes(PathBuf),
    #[error("unknown question family {0:?}")]
    UnknownFamily(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad question file {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VqaError + '_ {
    move |source| VqaError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ExtrusionShape,
    ExtrusionCount,
    ExtrusionDifference,
    SketchOrdering,
    SketchIdentification,
    PlaneIdentification,
    PrimitiveIdentification,
    SequencePrediction,
    FrameSequencing,
    HoleDetection,
    SymmetryDetection,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::ExtrusionShape,
        Family::ExtrusionCount,
        Family::ExtrusionDifference,
        Family::SketchOrdering,
        Family::SketchIdentification,
        Family::PlaneIdentification,
        Family::PrimitiveIdentification,
        Family::SequencePrediction,
        Family::FrameSequencing,
        Family::HoleDetection,
        Family::SymmetryDetection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ExtrusionShape => "extrusion_shape",
            Family::ExtrusionCount => "extrusion_count",
            Family::ExtrusionDifference => "extrusion_difference",
            Family::SketchOrdering => "sketch_ordering",
            Family::SketchIdentification => "sketch_identification",
            Family::PlaneIdentification => "plane_identification",
            Family::PrimitiveIdentification => "primitive_identification",
            Family::SequencePrediction => "sequence_prediction",
            Family::FrameSequencing => "frame_sequencing",
            Family::HoleDetection => "hole_detection",
            Family::SymmetryDetection => "symmetry_detection",
        }
    }

    pub fn parse(s: &str) -> Result<Family, VqaError> {
        let norm = s.replace('-', "_");
        Family::ALL.into_iter().find(|f| f.name() == norm).ok_or_else(|| VqaError::UnknownFamily(s.to_string()))
    }

    /// Number of options each question of the family offers.
    pub fn choice_count(self) -> usize {
        match self {
            Family::ExtrusionShape | Family::ExtrusionCount | Family::SketchIdentification => 4,
            Family::ExtrusionDifference | Family::HoleDetection => 2,
            Family::SketchOrdering
            | Family::PlaneIdentification
            | Family::PrimitiveIdentification
            | Family::SequencePrediction => 3,
            Family::FrameSequencing => 6,
            Family::SymmetryDetection => 8,
        }
    }

    fn prompt(self) -> &'static str {
        match self {
            Family::ExtrusionShape => "The sketch in the frame is finished. Which image shows the part right after it is extruded?",
            Family::ExtrusionCount => "How many extrude operations built the part in the image?",
            Family::ExtrusionDifference => {
                "The first two frames show two extrusions of the part in the last image; the second one was made later. Is the second extrusion deeper than the first?"
            }
            Family::SketchOrdering => "In which order were these sketches (A, B, C) drawn to build the part?",
            Family::SketchIdentification => "Which of these sketches was used to build the part in the image?",
            Family::PlaneIdentification => "Which sketch plane is the camera looking at in the frame?",
            Family::PrimitiveIdentification => "Which frame shows the moment right after a {kind} was completed?",
            Family::SequencePrediction => "Given the part and the current screen, which primitive is drawn next?",
            Family::FrameSequencing => "These three frames (A, B, C) come from one recording. In what order were they captured?",
            Family::HoleDetection => "Does the part in the image have a hole through it?",
            Family::SymmetryDetection => "Across which mirror planes, given by their normal axes, is the part in the image symmetric?",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub episode_id: String,
    pub seed: u64,
    /// Family-specific record or step indices the verifier needs to locate
    /// the moment a question is about.
    #[serde(default)]
    pub refs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub family: Family,
    pub prompt: String,
    /// Context images, as paths relative to the question directory.
    pub assets: Vec<String>,
    /// Option labels or image paths.
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub provenance: Provenance,
}

/// A question together with the images its asset paths refer to.
#[derive(Debug, Clone)]
pub struct Generated {
    pub question: Question,
    pub images: Vec<(String, GrayImage)>,
}

/// Depth used to compare extrusions: one-sided `|e1|`, symmetric `2|e1|`,
/// two-sided `|e1| + |e2|`.
pub fn effective_depth(p: &ExtrudeParams) -> f64 {
    match p.sides {
        ExtentType::OneSided => p.e1.abs(),
        ExtentType::Symmetric => 2.0 * p.e1.abs(),
        ExtentType::TwoSided => p.e1.abs() + p.e2.abs(),
    }
}

/// Smallest effective depth difference asked about.
pub const MIN_DEPTH_GAP: f64 = 0.02;
/// Sketch renders at or above this similarity show the same sketch.
pub const SKETCH_MATCH: f64 = 0.9;
/// Sketch renders below this similarity are told apart.
pub const SKETCH_DISTINCT: f64 = 0.6;
const SKETCH_RES: usize = 128;
/// Changed-pixel fraction below which two solid renders agree.
const SHAPE_MATCH: f64 = 0.004;
/// Changed-pixel fraction every pair of shape options must exceed.
const SHAPE_DISTINCT: f64 = 0.02;
/// Gray-level difference that counts a pixel as changed.
const PIXEL_CHANGE: u8 = 24;

const YES_NO: [&str; 2] = ["Yes", "No"];
const LABELS: [&str; 3] = ["A", "B", "C"];
const AXES: [&str; 3] = ["x", "y", "z"];

pub fn sketch_image<'a>(prims: impl IntoIterator<Item = &'a PrimitiveGeom>) -> GrayImage {
    let mut img = GrayImage::new(SKETCH_RES, SKETCH_RES, 255);
    for p in prims {
        for seg in p.polyline(0.005).windows(2) {
            img.line_uv((seg[0].u, seg[0].v), (seg[1].u, seg[1].v), 0);
        }
    }
    img
}

fn coverage(a: &GrayImage, b: &GrayImage) -> f64 {
    let (w, h) = (a.width as i64, a.height as i64);
    let ink = |img: &GrayImage, x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && img.get(x as usize, y as usize) < 128;
    let (mut hit, mut total) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !ink(a, x, y) {
                continue;
            }
            total += 1;
            if (-1..=1).any(|dy| (-1..=1).any(|dx| ink(b, x + dx, y + dy))) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Symmetric stroke overlap of two sketch renders with one pixel of slack.
pub fn sketch_similarity(a: &GrayImage, b: &GrayImage) -> f64 {
    if a.width != b.width || a.height != b.height {
        return 0.0;
    }
    coverage(a, b).min(coverage(b, a))
}

/// Fraction of pixels whose gray levels differ by more than a small margin.
pub fn changed_fraction(a: &GrayImage, b: &GrayImage) -> f64 {
    if a.width != b.width || a.height != b.height {
        return 1.0;
    }
    let n = a.data.iter().zip(&b.data).filter(|(x, y)| x.abs_diff(**y) > PIXEL_CHANGE).count();
    n as f64 / a.data.len().max(1) as f64
}

/// Shaded view of `solid` framed on `framing_solid`.
fn shape_render(solid: &Solid, framing_solid: &Solid, res: usize) -> GrayImage {
    let cam = Camera::isometric(framing_solid, Framing::FitModel);
    render(solid, &cam, res, res, Shading::Lambert)
}

fn symmetry_label(flags: [bool; 3]) -> String {
    let axes: Vec<&str> = AXES.iter().zip(flags).filter(|(_, f)| *f).map(|(a, _)| *a).collect();
    if axes.is_empty() {
        "none".into()
    } else {
        axes.join(",")
    }
}

fn symmetry_options() -> Vec<String> {
    (0..8u8).map(|m| symmetry_label([m & 1 != 0, m & 2 != 0, m & 4 != 0])).collect()
}

fn kind_label(kind: Option<PrimitiveKind>) -> &'static str {
    kind.map_or("extrude", |k| k.name())
}

const KINDS: [Option<PrimitiveKind>; 4] =
    [Some(PrimitiveKind::Line), Some(PrimitiveKind::Arc), Some(PrimitiveKind::Circle), None];

fn permutations3() -> Vec<[usize; 3]> {
    vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
}

fn order_string(labels: impl IntoIterator<Item = usize>) -> String {
    labels.into_iter().map(|i| LABELS[i]).collect::<Vec<_>>().join(", ")
}

/// An episode with everything the generator reads.
pub struct VqaEpisode {
    pub id: String,
    pub lowered: Vec<LoweredRecord>,
    pub oracle: Solid,
    pub program: ActionProgram,
    /// One keyframe per action.
    pub frames: Vec<GrayImage>,
    pub target: GrayImage,
    pub resolution: usize,
    sketches: OnceLock<Vec<GrayImage>>,
    holes: OnceLock<Option<usize>>,
    symmetry: OnceLock<Option<[f64; 3]>>,
}

impl std::fmt::Debug for VqaEpisode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VqaEpisode").field("id", &self.id).field("records", &self.lowered.len()).finish()
    }
}

fn not_eligible(id: &str, reason: impl ToString) -> VqaError {
    VqaError::NotEligible { id: id.to_string(), reason: reason.to_string() }
}

impl VqaEpisode {
    fn assemble(
        id: &str,
        lowered: Vec<LoweredRecord>,
        oracle: Solid,
        program: ActionProgram,
        frames: Vec<GrayImage>,
        target: GrayImage,
        resolution: usize,
    ) -> Self {
        Self {
            id: id.to_string(),
            lowered,
            oracle,
            program,
            frames,
            target,
            resolution,
            sketches: OnceLock::new(),
            holes: OnceLock::new(),
            symmetry: OnceLock::new(),
        }
    }

    /// Compiles and simulates a sequence in memory. The episode must complete
    /// and pass the quality filter.
    pub fn from_sequence(id: &str, seq: &CadSequence, cfg: &CompileConfig, resolution: usize) -> Result<Self, VqaError> {
        let lowered = lower_sequence(seq).map_err(|e| not_eligible(id, e))?;
        let oracle = build_solid(&lowered).map_err(|e| not_eligible(id, e))?;
        let program = compile(&lowered, cfg).map_err(|e| not_eligible(id, e))?.quantized();
        let trace = run(&program, &SimConfig { width: resolution, height: resolution, render: true });
        if let Status::Terminated(r) = &trace.status {
            return Err(not_eligible(id, r));
        }
        let verdict = quality_filter(&oracle, &trace.final_state.doc.solid, &FilterConfig::default());
        if !verdict.passed() {
            return Err(not_eligible(id, format!("quality filter: {verdict:?}")));
        }
        let target = render_isometric(&oracle, resolution, Framing::FitModel).map_err(|e| not_eligible(id, e))?;
        let frames = trace.steps.into_iter().filter_map(|s| s.frame).collect();
        Ok(Self::assemble(id, lowered, oracle, program, frames, target, resolution))
    }

    /// Loads a built episode directory. Only completed episodes that passed
    /// the quality filter are usable.
    pub fn load(dir: &Path) -> Result<Self, VqaError> {
        let m = load_verified_manifest(dir)?;
        let id = m.episode_id.clone();
        if m.status != EpisodeStatus::Completed || !m.passed() {
            return Err(not_eligible(&id, "not a completed, passing episode"));
        }
        let seq = parse_sequence(&m.sequence).map_err(|e| not_eligible(&id, e))?;
        let lowered = lower_sequence(&seq).map_err(|e| not_eligible(&id, e))?;
        let oracle = build_solid(&lowered).map_err(|e| not_eligible(&id, e))?;
        let apath = dir.join("actions.jsonl");
        let text = fs::read_to_string(&apath).map_err(io_err(&apath))?;
        let program = ActionProgram::from_jsonl(&text).map_err(|e| not_eligible(&id, e))?;
        let tpath = dir.join("target.pgm");
        let target = GrayImage::from_pgm(&fs::read(&tpath).map_err(io_err(&tpath))?).map_err(|e| not_eligible(&id, e))?;
        let resolution = target.width;
        let frames = if m.frame_count == program.actions.len() {
            let mut frames = Vec::with_capacity(m.frame_count);
            for i in 0..m.frame_count {
                let p = dir.join(format!("frames/{i:06}.pgm"));
                let bytes = fs::read(&p).map_err(io_err(&p))?;
                frames.push(GrayImage::from_pgm(&bytes).map_err(|e| not_eligible(&id, e))?);
            }
            frames
        } else {
            let trace = run(&program, &SimConfig { width: resolution, height: resolution, render: true });
            trace.steps.into_iter().filter_map(|s| s.frame).collect()
        };
        Ok(Self::assemble(&id, lowered, oracle, program, frames, target, resolution))
    }

    /// Sketch render of every record.
    pub fn sketch_images(&self) -> &[GrayImage] {
        self.sketches.get_or_init(|| {
            self.lowered.iter().map(|r| sketch_image(r.sketch.loops.iter().flat_map(|l| &l.primitives))).collect()
        })
    }

    fn holes(&self) -> Option<usize> {
        *self.holes.get_or_init(|| count_through_holes(&self.oracle).ok())
    }

    fn symmetry(&self) -> Option<[f64; 3]> {
        *self.symmetry.get_or_init(|| symmetry_scores(&self.oracle).ok())
    }

    fn tag_steps(&self, pred: impl Fn(&HlTag) -> bool) -> Vec<usize> {
        self.program.hl_events.iter().filter(|(_, t)| pred(t)).map(|(s, _)| *s).collect()
    }

    /// First action of each record, counting a preceding plane creation.
    fn record_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut pending = None;
        for (s, t) in &self.program.hl_events {
            match t {
                HlTag::PlaneCreate => pending = pending.or(Some(*s)),
                HlTag::SketchBegin => starts.push(pending.take().unwrap_or(*s)),
                _ => {}
            }
        }
        starts
    }

    /// Half-open action range of each record.
    fn record_spans(&self) -> Vec<(usize, usize)> {
        let starts = self.record_starts();
        let eos = self.tag_steps(|t| *t == HlTag::Eos).first().copied().unwrap_or(self.program.actions.len());
        starts.iter().enumerate().map(|(i, &s)| (s, starts.get(i + 1).copied().unwrap_or(eos))).collect()
    }

    /// `(tag step, last step before the next tag, kind)` for every primitive
    /// and extrusion; `None` stands for an extrusion.
    fn operation_spans(&self) -> Vec<(usize, usize, Option<PrimitiveKind>)> {
        let ev = &self.program.hl_events;
        let mut out = Vec::new();
        for (i, (s, t)) in ev.iter().enumerate() {
            let kind = match t {
                HlTag::Primitive(k) => Some(*k),
                HlTag::Extrude => None,
                _ => continue,
            };
            let next = ev[i + 1..].iter().map(|(n, _)| *n).find(|n| n > s).unwrap_or(self.program.actions.len());
            out.push((*s, next - 1, kind));
        }
        out
    }
}

struct Assets {
    prefix: String,
    images: Vec<(String, GrayImage)>,
}

impl Assets {
    fn add(&mut self, img: GrayImage) -> String {
        let name = format!("assets/{}_{}.pgm", self.prefix, self.images.len());
        self.images.push((name.clone(), img));
        name
    }
}

/// Places the correct option among the distractors uniformly at random.
fn place<T>(correct: T, distractors: Vec<T>, rng: &mut ChaCha8Rng) -> (Vec<T>, usize) {
    let mut all: Vec<(bool, T)> = std::iter::once((true, correct)).chain(distractors.into_iter().map(|d| (false, d))).collect();
    all.shuffle(rng);
    let idx = all.iter().position(|(c, _)| *c).expect("correct option present");
    (all.into_iter().map(|(_, t)| t).collect(), idx)
}

fn unmet(msg: impl Into<String>) -> VqaError {
    VqaError::PrerequisiteUnmet(msg.into())
}

fn pick<'a, T>(items: &'a [T], rng: &mut ChaCha8Rng) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Generates one question of `family` about `ep`. `pool` supplies
/// distractor sketches from other episodes. Deterministic given the
/// episode, the pool and `seed`.
pub fn generate(
    family: Family,
    ep: &VqaEpisode,
    pool: &[VqaEpisode],
    seed: u64,
    asset_prefix: &str,
) -> Result<Generated, VqaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut assets = Assets { prefix: asset_prefix.to_string(), images: Vec::new() };
    let mut refs = Vec::new();
    let mut prompt = family.prompt().to_string();
    let n_rec = ep.lowered.len();
    let frame = |s: usize| ep.frames.get(s).cloned().ok_or_else(|| unmet(format!("no frame at step {s}")));

    let (ctx, choices, answer_index): (Vec<String>, Vec<String>, usize) = match family {
        Family::ExtrusionCount => {
            let t = ep.tag_steps(|t| *t == HlTag::Extrude).len() as i64;
            if t == 0 {
                return Err(unmet("no extrusions"));
            }
            let mut near: Vec<i64> = [t - 2, t - 1, t + 1, t + 2].into_iter().filter(|v| *v >= 1).collect();
            near.shuffle(rng);
            near.truncate(3);
            let mut extra = t + 3;
            while near.len() < 3 {
                near.push(extra);
                extra += 1;
            }
            let (c, a) = place(t.to_string(), near.iter().map(|v| v.to_string()).collect(), rng);
            (vec![assets.add(ep.target.clone())], c, a)
        }
        Family::ExtrusionDifference => {
            let depths: Vec<f64> = ep.lowered.iter().map(|r| effective_depth(&r.extrude)).collect();
            let pairs: Vec<(usize, usize)> = (0..n_rec)
                .flat_map(|i| (i + 1..n_rec).map(move |j| (i, j)))
                .filter(|&(i, j)| (depths[i] - depths[j]).abs() >= MIN_DEPTH_GAP)
                .collect();
            if pairs.is_empty() {
                return Err(unmet("no pair of extrusions with distinct depths"));
            }
            let (i, j) = *pick(&pairs, rng);
            let spans = ep.record_spans();
            let fi = frame(spans[i].1 - 1)?;
            let fj = frame(spans[j].1 - 1)?;
            refs = vec![i, j];
            let yes = depths[j] > depths[i];
            let ctx = vec![assets.add(fi), assets.add(fj), assets.add(ep.target.clone())];
            let (c, a) = place(YES_NO[usize::from(!yes)].to_string(), vec![YES_NO[usize::from(yes)].to_string()], rng);
            (ctx, c, a)
        }
        Family::PlaneIdentification => {
            let spans = ep.record_spans();
            let r = rng.random_range(0..n_rec);
            let (lo, hi) = spans[r];
            let steps: Vec<usize> = ep
                .tag_steps(|t| matches!(t, HlTag::Primitive(_)))
                .into_iter()
                .filter(|s| (lo..hi).contains(s))
                .collect();
            let step = *steps.last().ok_or_else(|| unmet("record without primitives"))?;
            refs = vec![r, step];
            let plane = ep.lowered[r].basis.plane_id;
            let others = PlaneId::ALL.iter().filter(|p| **p != plane).map(|p| p.name().to_string()).collect();
            let (c, a) = place(plane.name().to_string(), others, rng);
            (vec![assets.add(frame(step)?), assets.add(ep.target.clone())], c, a)
        }
        Family::PrimitiveIdentification => {
            let spans = ep.operation_spans();
            let present: Vec<usize> = (0..KINDS.len()).filter(|&k| spans.iter().any(|s| s.2 == KINDS[k])).collect();
            if present.len() < 3 {
                return Err(unmet("fewer than three kinds of operation"));
            }
            let mut kinds = present.clone();
            kinds.shuffle(rng);
            let target = kinds[0];
            let end_step = |k: usize, rng: &mut ChaCha8Rng| {
                let cands: Vec<usize> = spans.iter().filter(|s| s.2 == KINDS[k]).map(|s| s.1).collect();
                *pick(&cands, rng)
            };
            let correct = end_step(target, rng);
            let others = vec![end_step(kinds[1], rng), end_step(kinds[2], rng)];
            let (steps, a) = place(correct, others, rng);
            let imgs: Vec<GrayImage> = steps.iter().map(|&s| frame(s)).collect::<Result<_, _>>()?;
            if imgs[0] == imgs[1] || imgs[0] == imgs[2] || imgs[1] == imgs[2] {
                return Err(unmet("option frames coincide"));
            }
            prompt = prompt.replace("{kind}", kind_label(KINDS[target]));
            refs = std::iter::once(target).chain(steps.iter().copied()).collect();
            (Vec::new(), imgs.into_iter().map(|i| assets.add(i)).collect(), a)
        }
        Family::SequencePrediction => {
            let tags: Vec<(usize, PrimitiveKind)> = ep
                .program
                .hl_events
                .iter()
                .filter_map(|(s, t)| match t {
                    HlTag::Primitive(k) if *s > 0 => Some((*s, *k)),
                    _ => None,
                })
                .collect();
            if tags.is_empty() {
                return Err(unmet("no primitives"));
            }
            let (step, kind) = *pick(&tags, rng);
            refs = vec![step];
            let others = KINDS[..3].iter().flatten().filter(|k| **k != kind).map(|k| k.name().to_string()).collect();
            let (c, a) = place(kind.name().to_string(), others, rng);
            (vec![assets.add(frame(step - 1)?), assets.add(ep.target.clone())], c, a)
        }
        Family::FrameSequencing => {
            let mut counts: HashMap<&[u8], usize> = HashMap::new();
            for f in &ep.frames {
                *counts.entry(f.data.as_slice()).or_default() += 1;
            }
            let unique: Vec<usize> = (0..ep.frames.len()).filter(|&i| counts[ep.frames[i].data.as_slice()] == 1).collect();
            if unique.len() < 3 {
                return Err(unmet("fewer than three distinct frames"));
            }
            let mut steps: Vec<usize> = unique.choose_multiple(rng, 3).copied().collect();
            steps.sort_unstable();
            // shown[label] = temporal rank of the frame shown under that label
            let mut shown = [0usize, 1, 2];
            shown.shuffle(rng);
            let ctx = shown.iter().map(|&r| assets.add(ep.frames[steps[r]].clone())).collect();
            let mut by_time = [0usize; 3];
            for (label, &rank) in shown.iter().enumerate() {
                by_time[rank] = label;
            }
            let correct = order_string(by_time);
            let others = permutations3().into_iter().map(order_string).filter(|s| *s != correct).collect();
            let (c, a) = place(correct, others, rng);
            (ctx, c, a)
        }
        Family::SketchOrdering => {
            let imgs = ep.sketch_images();
            let mut order: Vec<usize> = (0..n_rec).collect();
            order.shuffle(rng);
            let mut chosen: Vec<usize> = Vec::new();
            for r in order {
                if chosen.iter().all(|&c| sketch_similarity(&imgs[c], &imgs[r]) < SKETCH_DISTINCT) {
                    chosen.push(r);
                }
                if chosen.len() == 3 {
                    break;
                }
            }
            if chosen.len() < 3 {
                return Err(unmet("fewer than three distinguishable sketches"));
            }
            chosen.sort_unstable();
            let mut shown = [0usize, 1, 2];
            shown.shuffle(rng);
            let ctx = shown.iter().map(|&r| assets.add(imgs[chosen[r]].clone())).collect();
            let mut by_time = [0usize; 3];
            for (label, &rank) in shown.iter().enumerate() {
                by_time[rank] = label;
            }
            let correct = order_string(by_time);
            let mut others: Vec<String> = permutations3().into_iter().map(order_string).filter(|s| *s != correct).collect();
            others.shuffle(rng);
            others.truncate(2);
            let (c, a) = place(correct, others, rng);
            (ctx, c, a)
        }
        Family::SketchIdentification => {
            let own = ep.sketch_images();
            let r = rng.random_range(0..n_rec);
            let donors: Vec<&VqaEpisode> = pool.iter().filter(|p| p.id != ep.id).collect();
            if donors.is_empty() {
                return Err(unmet("no other episodes for distractors"));
            }
            let mut picked: Vec<GrayImage> = Vec::new();
            for _ in 0..200 {
                let d = pick(&donors, rng);
                let cand = pick(d.sketch_images(), rng);
                let clash = own.iter().chain(&picked).any(|o| sketch_similarity(o, cand) >= SKETCH_DISTINCT);
                if !clash {
                    picked.push(cand.clone());
                }
                if picked.len() == 3 {
                    break;
                }
            }
            if picked.len() < 3 {
                return Err(unmet("not enough distinguishable distractor sketches"));
            }
            let (imgs, a) = place(own[r].clone(), picked, rng);
            refs = vec![r];
            (vec![assets.add(ep.target.clone())], imgs.into_iter().map(|i| assets.add(i)).collect(), a)
        }
        Family::ExtrusionShape => {
            let extrude_steps = ep.tag_steps(|t| *t == HlTag::Extrude);
            let mut ks: Vec<usize> = (1..n_rec.min(extrude_steps.len())).collect();
            ks.shuffle(rng);
            let res = ep.resolution;
            let mut found = None;
            for k in ks {
                let Some(opts) = shape_options(&ep.lowered[..=k], res) else { continue };
                found = Some((k, opts));
                break;
            }
            let (k, mut opts) = found.ok_or_else(|| unmet("no extrusion with distinguishable outcomes"))?;
            refs = vec![k];
            let correct = opts.remove(0);
            let (imgs, a) = place(correct, opts, rng);
            let ctx = vec![assets.add(frame(extrude_steps[k] - 1)?)];
            (ctx, imgs.into_iter().map(|i| assets.add(i)).collect(), a)
        }
        Family::HoleDetection => {
            let holes = ep.holes().ok_or_else(|| unmet("hole count differs between resolutions"))?;
            let yes = holes > 0;
            let (c, a) = place(YES_NO[usize::from(!yes)].to_string(), vec![YES_NO[usize::from(yes)].to_string()], rng);
            (vec![assets.add(ep.target.clone())], c, a)
        }
        Family::SymmetryDetection => {
            let scores = ep.symmetry().ok_or_else(|| unmet("cannot sample surface"))?;
            if scores.iter().any(|s| *s >= 0.5 * SYMMETRY_TOL && *s <= 2.0 * SYMMETRY_TOL) {
                return Err(unmet("symmetry score too close to the tolerance"));
            }
            let flags = scores.map(|s| s < SYMMETRY_TOL);
            if !flags.iter().any(|f| *f) {
                return Err(unmet("no mirror symmetry"));
            }
            let correct = symmetry_label(flags);
            let others = symmetry_options().into_iter().filter(|o| *o != correct).collect();
            let (c, a) = place(correct, others, rng);
            (vec![assets.add(ep.target.clone())], c, a)
        }
    };
    let question = Question {
        family,
        prompt,
        assets: ctx,
        choices,
        answer_index,
        provenance: Provenance { episode_id: ep.id.clone(), seed, refs },
    };
    Ok(Generated { question, images: assets.images })
}

/// Renders of the solid after the last record and of three perturbations
/// of that record: depth halved, depth doubled and the operation flipped
/// between adding and cutting. The true render comes first. `None` when a
/// perturbation fails or two renders are too alike to tell apart.
fn shape_options(records: &[LoweredRecord], res: usize) -> Option<Vec<GrayImage>> {
    let k = records.len() - 1;
    let truth = build_solid(records).ok().filter(|s| !s.is_empty())?;
    let variant = |f: &dyn Fn(&mut ExtrudeParams)| {
        let mut recs = records.to_vec();
        f(&mut recs[k].extrude);
        build_solid(&recs).ok().filter(|s| !s.is_empty()).map(|s| shape_render(&s, &truth, res))
    };
    let scale = |m: f64| {
        move |p: &mut ExtrudeParams| {
            p.e1 *= m;
            p.e2 *= m;
        }
    };
    let flip = |p: &mut ExtrudeParams| {
        p.op = match p.op {
            ExtrudeOp::Remove => ExtrudeOp::Union,
            ExtrudeOp::New | ExtrudeOp::Union => ExtrudeOp::Remove,
        }
    };
    let opts = vec![variant(&|_| {})?, variant(&scale(0.5))?, variant(&scale(2.0))?, variant(&flip)?];
    for i in 0..opts.len() {
        for j in i + 1..opts.len() {
            if changed_fraction(&opts[i], &opts[j]) < SHAPE_DISTINCT {
                return None;
            }
        }
    }
    Some(opts)
}

/// A fresh simulation of an episode's program, the ground truth [`verify`]
/// checks answers against.
pub struct Audit {
    pub trace: EpisodeTrace,
    sketches: OnceLock<Vec<GrayImage>>,
}

impl Audit {
    pub fn new(ep: &VqaEpisode) -> Self {
        let cfg = SimConfig { width: ep.resolution, height: ep.resolution, render: true };
        Self { trace: run(&ep.program, &cfg), sketches: OnceLock::new() }
    }

    fn doc(&self) -> &DocState {
        self.trace.final_doc()
    }

    fn sketch_images(&self) -> &[GrayImage] {
        self.sketches.get_or_init(|| {
            self.doc()
                .features
                .iter()
                .filter_map(|f| match f {
                    Feature::Sketch { primitives, .. } => Some(sketch_image(primitives)),
                    _ => None,
                })
                .collect()
        })
    }

    fn extrusions(&self) -> Vec<&ExtrudeParams> {
        self.doc()
            .features
            .iter()
            .filter_map(|f| match f {
                Feature::Extrude { params, .. } => Some(params),
                _ => None,
            })
            .collect()
    }

    fn frame(&self, step: usize) -> Option<&GrayImage> {
        self.trace.steps.get(step).and_then(|s| s.frame.as_ref())
    }

    /// Kind of the most recent committed operation at or before `step`.
    fn last_commit(&self, step: usize) -> Option<Option<PrimitiveKind>> {
        self.trace.steps.iter().take(step + 1).flat_map(|s| &s.events).fold(None, |acc, e| match e {
            SimEvent::PrimitiveCommitted { kind, .. } => Some(Some(*kind)),
            SimEvent::ExtrudeCommitted { .. } => Some(None),
            _ => acc,
        })
    }

    fn best_sketch(&self, img: &GrayImage) -> Option<usize> {
        let (idx, sim) = self
            .sketch_images()
            .iter()
            .enumerate()
            .map(|(i, s)| (i, sketch_similarity(s, img)))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        (sim >= SKETCH_MATCH).then_some(idx)
    }
}

/// Recomputes the answer of `q` from a fresh simulation and confirms that
/// exactly the option at `answer_index` is correct. `assets` resolves the
/// question's image paths.
pub fn verify(q: &Question, audit: &Audit, assets: &dyn Fn(&str) -> Option<GrayImage>) -> bool {
    verify_inner(q, audit, assets).unwrap_or(false)
}

fn only_answer(q: &Question, correct: &str) -> Option<bool> {
    let hits: Vec<usize> = q.choices.iter().enumerate().filter(|(_, c)| *c == correct).map(|(i, _)| i).collect();
    Some(hits == [q.answer_index])
}

fn distinct(choices: &[String]) -> bool {
    let mut c = choices.to_vec();
    c.sort();
    c.dedup();
    c.len() == choices.len()
}

fn verify_inner(q: &Question, audit: &Audit, assets: &dyn Fn(&str) -> Option<GrayImage>) -> Option<bool> {
    if q.answer_index >= q.choices.len() || q.choices.len() != q.family.choice_count() || !distinct(&q.choices) {
        return Some(false);
    }
    if audit.trace.status != Status::Completed {
        return Some(false);
    }
    let refs = &q.provenance.refs;
    let yes_no = |b: bool| YES_NO[usize::from(!b)];
    match q.family {
        Family::ExtrusionCount => only_answer(q, &audit.doc().extrusion_count().to_string()),
        Family::ExtrusionDifference => {
            let ex = audit.extrusions();
            let (a, b) = (ex.get(*refs.first()?)?, ex.get(*refs.get(1)?)?);
            let (da, db) = (effective_depth(a), effective_depth(b));
            if (da - db).abs() < MIN_DEPTH_GAP / 2.0 {
                return Some(false);
            }
            only_answer(q, yes_no(db > da))
        }
        Family::PlaneIdentification => {
            let step = *refs.get(1)?;
            let CameraMode::PlaneView(p) = audit.trace.steps.get(step)?.camera else { return Some(false) };
            if assets(q.assets.first()?)?.data != audit.frame(step)?.data {
                return Some(false);
            }
            only_answer(q, p.name())
        }
        Family::PrimitiveIdentification => {
            let want = KINDS.get(*refs.first()?)?;
            let steps = refs.get(1..)?;
            if steps.len() != q.choices.len() {
                return Some(false);
            }
            let mut hits = Vec::new();
            for (i, (&s, name)) in steps.iter().zip(&q.choices).enumerate() {
                if assets(name)?.data != audit.frame(s)?.data {
                    return Some(false);
                }
                if audit.last_commit(s)? == *want {
                    hits.push(i);
                }
            }
            Some(hits == [q.answer_index])
        }
        Family::SequencePrediction => {
            let step = *refs.first()?;
            if step == 0 || assets(q.assets.first()?)?.data != audit.frame(step - 1)?.data {
                return Some(false);
            }
            let kind = audit.trace.steps[step..].iter().flat_map(|s| &s.events).find_map(|e| match e {
                SimEvent::PrimitiveCommitted { kind, .. } => Some(*kind),
                _ => None,
            })?;
            only_answer(q, kind.name())
        }
        Family::FrameSequencing => {
            let mut found = Vec::new();
            for name in &q.assets {
                let img = assets(name)?;
                let at: Vec<usize> = (0..audit.trace.steps.len())
                    .filter(|&s| audit.frame(s).is_some_and(|f| f.data == img.data))
                    .collect();
                if at.len() != 1 {
                    return Some(false);
                }
                found.push(at[0]);
            }
            if found.len() != 3 {
                return Some(false);
            }
            let mut labels = [0usize, 1, 2];
            labels.sort_by_key(|&l| found[l]);
            only_answer(q, &order_string(labels))
        }
        Family::SketchOrdering => {
            let mut idx = Vec::new();
            for name in &q.assets {
                idx.push(audit.best_sketch(&assets(name)?)?);
            }
            if idx.len() != 3 || idx[0] == idx[1] || idx[0] == idx[2] || idx[1] == idx[2] {
                return Some(false);
            }
            let mut labels = [0usize, 1, 2];
            labels.sort_by_key(|&l| idx[l]);
            only_answer(q, &order_string(labels))
        }
        Family::SketchIdentification => {
            let mut hits = Vec::new();
            for (i, name) in q.choices.iter().enumerate() {
                if audit.best_sketch(&assets(name)?).is_some() {
                    hits.push(i);
                }
            }
            Some(hits == [q.answer_index])
        }
        Family::ExtrusionShape => {
            let k = *refs.first()?;
            let feats = &audit.doc().features;
            let end = feats.iter().enumerate().filter(|(_, f)| matches!(f, Feature::Extrude { .. })).nth(k)?.0;
            let doc = DocState::replay(&feats[..=end]).ok()?;
            let res = audit.frame(0)?.width;
            let truth = shape_render(&doc.solid, &doc.solid, res);
            let mut d = Vec::new();
            for name in &q.choices {
                d.push(changed_fraction(&truth, &assets(name)?));
            }
            let matches: Vec<usize> = (0..d.len()).filter(|&i| d[i] < SHAPE_MATCH).collect();
            Some(matches == [q.answer_index])
        }
        Family::HoleDetection => {
            let n = count_through_holes(&audit.doc().solid).ok()?;
            only_answer(q, yes_no(n > 0))
        }
        Family::SymmetryDetection => {
            let flags = symmetry_planes(&audit.doc().solid, SYMMETRY_TOL).ok()?;
            only_answer(q, &symmetry_label(flags))
        }
    }
}

fn question_seed(seed: u64, family: Family, q: usize) -> u64 {
    let fam = Family::ALL.iter().position(|f| *f == family).expect("listed family") as u64;
    seed ^ (fam << 48) ^ (q as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `n` questions of one family over a set of episodes. Each question draws
/// its episode at random among those meeting the family's prerequisites.
pub fn generate_family(family: Family, episodes: &[VqaEpisode], n: usize, seed: u64) -> Result<Vec<Generated>, VqaError> {
    let out: Vec<Option<Generated>> = (0..n)
        .into_par_iter()
        .map(|q| {
            let qseed = question_seed(seed, family, q);
            let mut order: Vec<usize> = (0..episodes.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(qseed));
            let prefix = format!("{}_{q:04}", family.name());
            order.into_iter().find_map(|i| generate(family, &episodes[i], episodes, qseed, &prefix).ok())
        })
        .collect();
    out.into_iter().collect::<Option<Vec<_>>>().ok_or(VqaError::InsufficientEpisodes(family))
}

/// Loads every usable episode under a dataset root; unusable ones are
/// skipped and counted.
pub fn load_episodes(root: &Path) -> Result<(Vec<VqaEpisode>, usize), VqaError> {
    let dirs = episode_dirs(root)?;
    let loaded: Vec<Result<VqaEpisode, VqaError>> = dirs.par_iter().map(|d| VqaEpisode::load(d)).collect();
    let skipped = loaded.iter().filter(|r| r.is_err()).count();
    Ok((loaded.into_iter().filter_map(Result::ok).collect(), skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaSummary {
    pub seed: u64,
    pub episodes: usize,
    pub skipped_episodes: usize,
    pub generated: BTreeMap<String, usize>,
    /// Families no episode could support, with the reason.
    pub unavailable: BTreeMap<String, String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), VqaError> {
    let json = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, json + "\n").map_err(io_err(path))
}

/// Writes `n` questions per family to `out/<family>.json`, with images under
/// `out/assets/`.
pub fn cmd_vqa(dataset: &Path, n: usize, seed: u64, out: &Path, families: &[Family]) -> Result<VqaSummary, VqaError> {
    let (episodes, skipped) = load_episodes(dataset)?;
    if episodes.is_empty() {
        return Err(VqaError::NoEpisodes(dataset.to_path_buf()));
    }
    let assets_dir = out.join("assets");
    fs::create_dir_all(&assets_dir).map_err(io_err(&assets_dir))?;
    let mut summary = VqaSummary {
        seed,
        episodes: episodes.len(),
        skipped_episodes: skipped,
        generated: BTreeMap::new(),
        unavailable: BTreeMap::new(),
    };
    for &family in families {
        match generate_family(family, &episodes, n, seed) {
            Ok(gens) => {
                for g in &gens {
                    for (name, img) in &g.images {
                        let p = out.join(name);
                        fs::write(&p, img.to_pgm()).map_err(io_err(&p))?;
                    }
                }
                let qs: Vec<&Question> = gens.iter().map(|g| &g.question).collect();
                write_json(&out.join(format!("{}.json", family.name())), &qs)?;
                summary.generated.insert(family.name().into(), qs.len());
            }
            Err(e @ VqaError::InsufficientEpisodes(_)) => {
                summary.unavailable.insert(family.name().into(), e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Reads every `<family>.json` question file in a directory.
pub fn load_questions(dir: &Path) -> Result<Vec<Question>, VqaError> {
    let mut out = Vec::new();
    for family in Family::ALL {
        let p = dir.join(format!("{}.json", family.name()));
        if !p.exists() {
            continue;
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let qs: Vec<Question> = serde_json::from_str(&text).map_err(|source| VqaError::Json { path: p.clone(), source })?;
        out.extend(qs);
    }
    Ok(out)
}

/// Verifies every question in a question directory against freshly
/// simulated episodes. Returns `(passed, total)` per family.
pub fn audit_dir(questions: &Path, dataset: &Path) -> Result<BTreeMap<String, (usize, usize)>, VqaError> {
    let qs = load_questions(questions)?;
    let (episodes, _) = load_episodes(dataset)?;
    let audits: HashMap<&str, Audit> = episodes.par_iter().map(|e| (e.id.as_str(), Audit::new(e))).collect();
    let loader = |name: &str| fs::read(questions.join(name)).ok().and_then(|b| GrayImage::from_pgm(&b).ok());
    let results: Vec<(Family, bool)> = qs
        .par_iter()
        .map(|q| (q.family, audits.get(q.provenance.episode_id.as_str()).is_some_and(|a| verify(q, a, &loader))))
        .collect();
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (f, ok) in results {
        let e = out.entry(f.name().into()).or_default();
        e.0 += usize::from(ok);
        e.1 += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyGrade {
    pub family: Family,
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Expected accuracy of uniform guessing.
    pub chance: f64,
}

/// Per-family accuracy. Missing or out-of-range responses are replaced by
/// a uniform random choice drawn from a generator seeded with `seed`.
pub fn grade(questions: &[Question], responses: &[Option<usize>], seed: u64) -> Vec<FamilyGrade> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: BTreeMap<Family, (usize, usize, f64)> = BTreeMap::new();
    for (i, q) in questions.iter().enumerate() {
        let n = q.choices.len().max(1);
        let pick = match responses.get(i).copied().flatten() {
            Some(r) if r < n => r,
            _ => rng.random_range(0..n),
        };
        let e = acc.entry(q.family).or_default();
        e.0 += 1;
        e.1 += usize::from(pick == q.answer_index);
        e.2 += 1.0 / n as f64;
    }
    acc.into_iter()
        .map(|(family, (questions, correct, chance))| FamilyGrade {
            family,
            questions,
            correct,
            accuracy: correct as f64 / questions as f64,
            chance: chance / questions as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{corpus, SynthConfig};

    fn toy(count: usize) -> Vec<VqaEpisode> {
        let cfg = SynthConfig { centered: 0.3, ..SynthConfig::default() };
        corpus(11, count, &cfg)
            .iter()
            .filter_map(|s| VqaEpisode::from_sequence(&s.source_id, s, &CompileConfig::default(), 96).ok())
            .collect()
    }

    fn loader(g: &Generated) -> impl Fn(&str) -> Option<GrayImage> + '_ {
        move |name| g.images.iter().find(|(n, _)| n == name).map(|(_, i)| i.clone())
    }

    #[test]
    fn effective_depth_modes() {
        let p = |e1, e2, sides| ExtrudeParams { e1, e2, op: ExtrudeOp::New, sides, scale_s: 0.5 };
        assert_eq!(effective_depth(&p(-0.25, 0.0, ExtentType::OneSided)), 0.25);
        assert_eq!(effective_depth(&p(0.25, 0.0, ExtentType::Symmetric)), 0.5);
        assert_eq!(effective_depth(&p(0.25, -0.125, ExtentType::TwoSided)), 0.375);
    }

    #[test]
    fn symmetry_options_are_the_eight_subsets() {
        let o = symmetry_options();
        assert_eq!(o.len(), 8);
        assert!(distinct(&o));
        assert_eq!(symmetry_label([true, false, true]), "x,z");
    }

    #[test]
    fn grade_counts_and_fallback() {
        let q = |a| Question {
            family: Family::HoleDetection,
            prompt: String::new(),
            assets: vec![],
            choices: vec!["Yes".into(), "No".into()],
            answer_index: a,
            provenance: Provenance { episode_id: "e".into(), seed: 0, refs: vec![] },
        };
        let qs: Vec<Question> = (0..4).map(|i| q(i % 2)).collect();
        let right: Vec<Option<usize>> = qs.iter().map(|q| Some(q.answer_index)).collect();
        let wrong: Vec<Option<usize>> = qs.iter().map(|q| Some(1 - q.answer_index)).collect();
        assert_eq!(grade(&qs, &right, 0)[0].accuracy, 1.0);
        assert_eq!(grade(&qs, &wrong, 0)[0].accuracy, 0.0);
        let g = grade(&qs, &[None, Some(9)], 3);
        assert_eq!(g[0].questions, 4);
        assert_eq!(g[0].chance, 0.5);
        assert_eq!(grade(&qs, &[], 3), grade(&qs, &[], 3));
    }

    #[test]
    fn generated_questions_verify_and_perturbed_do_not() {
        let eps = toy(6);
        assert!(eps.len() >= 4);
        let audits: Vec<Audit> = eps.iter().map(Audit::new).collect();
        for family in Family::ALL {
            let mut made = 0;
            for (i, ep) in eps.iter().enumerate() {
                let Ok(g) = generate(family, ep, &eps, 5 + i as u64, "t") else { continue };
                made += 1;
                let q = &g.question;
                assert_eq!(q.choices.len(), family.choice_count(), "{family}");
                assert!(verify(q, &audits[i], &loader(&g)), "{family} on {}", ep.id);
                let mut bad = q.clone();
                bad.answer_index = (q.answer_index + 1) % q.choices.len();
                assert!(!verify(&bad, &audits[i], &loader(&g)), "{family} perturbed");
            }
            if !matches!(family, Family::SymmetryDetection | Family::SketchOrdering | Family::ExtrusionShape) {
                assert!(made > 0, "{family} never applicable");
            }
        }
    }
}
