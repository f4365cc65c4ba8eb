//! Lowered CAD records to UI action programs.
//!
//! The compiler tracks the UI state it expects the simulator to be in (tool,
//! camera, plane list, dialog focus) and emits only the keystrokes needed to
//! move between states. Sketch clicks land on exact canvas positions; widget
//! clicks and delays are jittered when `human_like` is set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::action::{decode_action, encode_action, Action, ActionProgram, Command, HlTag, KeyId};
use crate::geometry::{lower_sequence, ArcGeom, ExtentType, ExtrudeOp, GeometryError, LoweredRecord, PixelPoint, PlaneId, PrimitiveGeom};
use crate::kernel::{build_region, KernelError, PlanarRegion, TAU_TESS};
use crate::sequence::{CadSequence, PrimitiveKind};
use crate::sim::arc_through;
use crate::ui::{self, Focus, Rect};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileConfig {
    /// Jitter widget clicks and delays.
    pub human_like: bool,
    /// Hide finished parts while sketching and hide sketches after the first
    /// extrusion.
    pub manage_visibility: bool,
    /// Zoom in while drawing loops smaller than [`SMALL_LOOP`].
    pub zoom: bool,
    pub seed: u64,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self { human_like: true, manage_visibility: true, zoom: true, seed: 0 }
    }
}

/// Loops whose smallest primitive is shorter than this are drawn zoomed in.
pub const SMALL_LOOP: f64 = 0.02;
/// Fixed delay when jitter is off; the low end of the jittered range.
pub const DT_MIN: f64 = 0.2;
pub const DT_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
struct CustomPlane {
    base: PlaneId,
    /// Offset magnitude as the simulator will decode it.
    typed: f64,
    negative: bool,
}

fn decoded_value(v: f64) -> f64 {
    match decode_action(&encode_action(&Command::Type { value: v })) {
        Ok(Command::Type { value }) => value,
        _ => unreachable!("type commands round-trip"),
    }
}

fn nav_key(p: PlaneId) -> KeyId {
    match p {
        PlaneId::Top => KeyId::ArrowUp,
        PlaneId::Front => KeyId::ArrowDown,
        PlaneId::Right => KeyId::ArrowRight,
    }
}

fn bin_center(x: f64) -> f64 {
    ((x * 1000.0).floor().clamp(0.0, 999.0) + 0.5) / 1000.0
}

fn quantize(p: PixelPoint) -> PixelPoint {
    PixelPoint::new(bin_center(p.u), bin_center(p.v))
}

/// Mid-point click for an arc. The simulator fits a circle through the
/// quantized start, end and mid clicks, so the mid click is chosen among
/// nearby bins to reproduce the intended center and never overshoot the
/// intended sweep; an overshoot turns tangent joins into crossings.
pub fn arc_mid_click(a: &ArcGeom) -> PixelPoint {
    let (qs, qe) = (quantize(a.start), quantize(a.end));
    let ccw = a.signed_sweep() > 0.0;
    let mut best = (f64::INFINITY, quantize(a.mid));
    for du in -3..=3 {
        for dv in -3..=3 {
            let m = quantize(PixelPoint::new(a.mid.u + f64::from(du) * 1e-3, a.mid.v + f64::from(dv) * 1e-3));
            let Some(fit) = arc_through(qs, qe, m) else { continue };
            if (fit.signed_sweep() > 0.0) != ccw {
                continue;
            }
            let over = if fit.sweep_deg > a.sweep_deg { 1.0 } else { 0.0 };
            let score = fit.center.dist(a.center) + (fit.radius - a.radius).abs() + over;
            if score < best.0 {
                best = (score, m);
            }
        }
    }
    best.1
}

/// A click point inside face `f` of `region` that keeps a clear margin from
/// its boundary. Returned in canvas coordinates on bin centers, so the
/// encoded click lands exactly there.
pub fn face_click_point(region: &PlanarRegion, f: usize, rng: Option<&mut ChaCha8Rng>) -> Option<PixelPoint> {
    const GRID: usize = 32;
    let bb = region.loops[f].bbox;
    let to_canvas = |p: [f64; 2]| [bin_center(p[0] + 0.5), bin_center(p[1] + 0.5)];
    let score = |c: [f64; 2]| {
        let p = [c[0] - 0.5, c[1] - 0.5];
        (region.face_at(p) == Some(f)).then(|| region.face_clearance(f, p))
    };
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..GRID {
        for j in 0..GRID {
            let p = [
                bb[0] + (bb[2] - bb[0]) * (i as f64 + 0.5) / GRID as f64,
                bb[1] + (bb[3] - bb[1]) * (j as f64 + 0.5) / GRID as f64,
            ];
            let c = to_canvas(p);
            if let Some(s) = score(c) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
        }
    }
    let (mut pick, clear) = best?;
    if let Some(rng) = rng {
        let need = (0.1 * clear).max(0.002);
        for _ in 0..64 {
            let c = to_canvas([
                pick[0] - 0.5 + clear * rng.random_range(-1.0..1.0),
                pick[1] - 0.5 + clear * rng.random_range(-1.0..1.0),
            ]);
            if score(c).is_some_and(|s| s >= need) {
                pick = c;
                break;
            }
        }
    }
    Some(PixelPoint::new(pick[0], pick[1]))
}

struct Emitter {
    prog: ActionProgram,
    rng: ChaCha8Rng,
    cfg: CompileConfig,
    pending_tag: Option<HlTag>,
}

impl Emitter {
    fn tag(&mut self, t: HlTag) {
        self.pending_tag = Some(t);
    }

    fn push(&mut self, cmd: Command) {
        let dt = if self.cfg.human_like { self.rng.random_range(DT_MIN..=DT_MAX) } else { DT_MIN };
        if let Some(t) = self.pending_tag.take() {
            self.prog.hl_events.push((self.prog.actions.len(), t));
        }
        self.prog.actions.push(Action { cmd, dt });
    }

    fn key(&mut self, k: KeyId) {
        self.push(Command::key(k));
    }

    fn keys(&mut self, k: KeyId, count: u32) {
        if count > 0 {
            self.push(Command::PressKey { key: k, count });
        }
    }

    fn shortcut(&mut self, k: KeyId) {
        self.key(KeyId::ShiftDown);
        self.key(k);
        self.key(KeyId::ShiftUp);
    }

    fn click_at(&mut self, p: PixelPoint) {
        self.push(Command::MoveTo { x: p.u.clamp(0.0, 1.0), y: p.v.clamp(0.0, 1.0) });
        self.push(Command::Click);
    }

    fn click_widget(&mut self, r: &Rect) {
        let p = if self.cfg.human_like {
            let (a, b) = (self.rng.random::<f64>(), self.rng.random::<f64>());
            r.inset_point(a, b)
        } else {
            r.center()
        };
        self.click_at(p);
    }
}

struct Planner {
    em: Emitter,
    custom: Vec<CustomPlane>,
    tool: Option<PrimitiveKind>,
    parts_hidden: bool,
    sketches_hidden: bool,
}

impl Planner {
    /// Index in the plane list of the sketch plane, creating it if needed.
    fn ensure_plane(&mut self, base: PlaneId, offset: f64) -> Result<usize, CompileError> {
        let default_idx = ui::DEFAULT_PLANE_ORDER.iter().position(|&p| p == base).expect("default plane");
        if offset == 0.0 {
            return Ok(default_idx);
        }
        let want = CustomPlane { base, typed: decoded_value(offset.abs()), negative: offset < 0.0 };
        if let Some(i) = self.custom.iter().position(|c| *c == want) {
            return Ok(3 + i);
        }
        if 3 + self.custom.len() >= ui::PLANE_LIST_CAPACITY {
            return Err(CompileError::UnsupportedGeometry("too many sketch planes".into()));
        }
        let em = &mut self.em;
        em.tag(HlTag::PlaneCreate);
        em.click_widget(&ui::PLANE_ICON);
        em.click_widget(&ui::plane_dialog_entry(default_idx));
        em.keys(KeyId::Tab, ui::tabs_between(&ui::PLANE_TAB_ORDER, Focus::None, Focus::OffsetField));
        em.push(Command::Type { value: offset.abs() });
        em.click_widget(if want.negative { &ui::DIRECTION_NEG } else { &ui::DIRECTION_POS });
        em.key(KeyId::Enter);
        self.custom.push(want);
        Ok(2 + self.custom.len())
    }

    fn select_tool(&mut self, kind: PrimitiveKind) {
        self.em.tag(HlTag::Primitive(kind));
        if self.tool == Some(kind) {
            return;
        }
        if self.tool.is_some() {
            self.em.key(KeyId::Escape);
        }
        self.em.key(match kind {
            PrimitiveKind::Line => KeyId::L,
            PrimitiveKind::Arc => KeyId::A,
            PrimitiveKind::Circle => KeyId::C,
        });
        self.tool = Some(kind);
    }

    fn draw_loop(&mut self, prims: &[PrimitiveGeom], min_extent: f64) {
        let zoomed = self.em.cfg.zoom && min_extent < SMALL_LOOP;
        if zoomed {
            self.em.push(Command::Scroll { amount: 1.0 });
        }
        self.em.tag(HlTag::LoopBegin);
        self.em.key(KeyId::ShiftDown);
        let mut shift = true;
        let first = prims[0].start();
        for (i, p) in prims.iter().enumerate() {
            let last = i + 1 == prims.len();
            match p {
                PrimitiveGeom::Circle { center, radius } => {
                    self.select_tool(PrimitiveKind::Circle);
                    self.em.click_at(*center);
                    self.em.click_at(PixelPoint::new(center.u + radius, center.v));
                }
                PrimitiveGeom::Line { start, end } => {
                    self.select_tool(PrimitiveKind::Line);
                    self.em.click_at(*start);
                    // Release shift so the closing click snaps onto the loop start.
                    if last && end.dist(first) < 1e-9 {
                        self.em.key(KeyId::ShiftUp);
                        shift = false;
                    }
                    self.em.click_at(*end);
                }
                PrimitiveGeom::Arc(a) => {
                    self.select_tool(PrimitiveKind::Arc);
                    self.em.click_at(a.start);
                    let closing = last && a.end.dist(first) < 1e-9;
                    if closing {
                        self.em.key(KeyId::ShiftUp);
                    }
                    self.em.click_at(a.end);
                    if closing {
                        self.em.key(KeyId::ShiftDown);
                    }
                    self.em.click_at(arc_mid_click(a));
                }
            }
        }
        if shift {
            self.em.key(KeyId::ShiftUp);
        }
        if zoomed {
            self.em.push(Command::Scroll { amount: -1.0 });
        }
    }

    fn record(&mut self, rec: &LoweredRecord, solid_nonempty: bool) -> Result<(), CompileError> {
        let base = rec.basis.plane_id;
        let list_idx = self.ensure_plane(base, rec.basis.offset)?;

        self.em.tag(HlTag::SketchBegin);
        self.em.key(KeyId::ShiftDown);
        self.em.key(KeyId::Plus);
        self.em.key(nav_key(base));
        self.em.key(KeyId::S);
        self.em.key(KeyId::ShiftUp);
        self.em.click_widget(&ui::plane_list_entry(list_idx));

        let manage = self.em.cfg.manage_visibility;
        if manage && solid_nonempty && !self.parts_hidden {
            self.em.key(KeyId::Y);
            self.parts_hidden = true;
        }
        for lp in &rec.sketch.loops {
            if lp.primitives.is_empty() {
                return Err(CompileError::UnsupportedGeometry("empty loop".into()));
            }
            self.draw_loop(&lp.primitives, lp.min_extent());
        }
        if self.tool.take().is_some() {
            self.em.key(KeyId::Escape);
        }

        let region = build_region(&rec.sketch, TAU_TESS)?;
        let mut first = true;
        for f in region.faces() {
            let rng = if self.em.cfg.human_like { Some(&mut self.em.rng) } else { None };
            let p = face_click_point(&region, f, rng)
                .ok_or_else(|| CompileError::UnsupportedGeometry(format!("face {f} too thin to click")))?;
            if first {
                self.em.tag(HlTag::Extrude);
                first = false;
            }
            self.em.click_at(p);
        }

        let ex = &rec.extrude;
        self.em.shortcut(KeyId::E);
        self.em.click_widget(match ex.op {
            ExtrudeOp::New => &ui::EXTRUDE_NEW,
            ExtrudeOp::Union => &ui::EXTRUDE_ADD,
            ExtrudeOp::Remove => &ui::EXTRUDE_REMOVE,
        });
        let order = &ui::EXTRUDE_TAB_ORDER;
        let mut focus = Focus::TypeSelector;
        let mut goto = |em: &mut Emitter, to: Focus| {
            em.keys(KeyId::Tab, ui::tabs_between(order, focus, to));
            focus = to;
        };
        goto(&mut self.em, Focus::DepthField);
        self.em.push(Command::Type { value: ex.e1 });
        if ex.sides == ExtentType::Symmetric {
            goto(&mut self.em, Focus::SymmetricBox);
            self.em.key(KeyId::Space);
        }
        if ex.op == ExtrudeOp::Remove {
            goto(&mut self.em, Focus::MergeBox);
            self.em.key(KeyId::Space);
        }
        if ex.sides == ExtentType::TwoSided {
            goto(&mut self.em, Focus::SecondDepthField);
            self.em.push(Command::Type { value: ex.e2 });
        }
        self.em.key(KeyId::Enter);

        if manage {
            if self.parts_hidden {
                self.em.shortcut(KeyId::Y);
                self.parts_hidden = false;
            }
            if !self.sketches_hidden {
                self.em.shortcut(KeyId::H);
                self.sketches_hidden = true;
            }
        }
        Ok(())
    }
}

/// Compiles lowered records into an action program.
pub fn compile(records: &[LoweredRecord], cfg: &CompileConfig) -> Result<ActionProgram, CompileError> {
    let mut planner = Planner {
        em: Emitter {
            prog: ActionProgram::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg: *cfg,
            pending_tag: None,
        },
        custom: Vec::new(),
        tool: None,
        parts_hidden: false,
        sketches_hidden: false,
    };
    for (i, rec) in records.iter().enumerate() {
        planner.record(rec, i > 0)?;
    }
    planner.em.tag(HlTag::Eos);
    planner.em.shortcut(KeyId::Seven);
    Ok(planner.em.prog)
}

pub fn compile_sequence(seq: &CadSequence, cfg: &CompileConfig) -> Result<ActionProgram, CompileError> {
    compile(&lower_sequence(seq)?, cfg)
}
