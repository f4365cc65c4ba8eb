//! Deterministic headless CAD user interface.
//!
//! [`step`] is a pure transition over [`SimState`]; [`run`] executes a whole
//! program, renders one keyframe per action and applies the consecutive
//! failure rule.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::action::{decode_action, ActionProgram, ActionVector, Command, HlTag, KeyId};
use crate::geometry::{ArcGeom, ExtentType, ExtrudeOp, ExtrudeParams, LoopGeom, PixelPoint, PlaneId, PrimitiveGeom, SketchGeom};
use crate::kernel::render::{self, Camera, Framing, Shading};
use crate::kernel::{build_region, extrude, PlanarRegion, Solid, TAU_TESS};
use crate::raster::GrayImage;
use crate::sequence::PrimitiveKind;
use crate::ui::{self, Focus};

/// Consecutive failed actions that terminate an episode.
pub const MAX_CONSECUTIVE_FAILURES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tool {
    None,
    Line,
    Circle,
    Arc,
    PlaneCreate,
}

impl Tool {
    fn arity(self) -> usize {
        match self {
            Tool::Line | Tool::Circle => 2,
            Tool::Arc => 3,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraMode {
    Isometric,
    PlaneView(PlaneId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Visibility {
    pub planes: bool,
    pub sketches: bool,
    pub parts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRef {
    pub base: PlaneId,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    Plane(PlaneRef),
    Sketch { plane: PlaneRef, primitives: Vec<PrimitiveGeom> },
    Extrude { sketch: usize, faces: Vec<usize>, params: ExtrudeParams },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("feature {0} does not reference a sketch")]
    BadReference(usize),
    #[error("sketch region: {0}")]
    Region(String),
    #[error("extrude: {0}")]
    Kernel(#[from] crate::kernel::KernelError),
}

/// The document behind the UI: an ordered feature list and the solid it
/// evaluates to.
#[derive(Debug, Clone, Default)]
pub struct DocState {
    pub features: Vec<Feature>,
    pub solid: Arc<Solid>,
}

impl DocState {
    /// Default planes followed by custom planes in creation order.
    pub fn planes(&self) -> Vec<PlaneRef> {
        let mut out: Vec<PlaneRef> =
            ui::DEFAULT_PLANE_ORDER.iter().map(|&base| PlaneRef { base, offset: 0.0 }).collect();
        out.extend(self.features.iter().filter_map(|f| match f {
            Feature::Plane(p) => Some(*p),
            _ => None,
        }));
        out
    }

    pub fn extrusion_count(&self) -> usize {
        self.features.iter().filter(|f| matches!(f, Feature::Extrude { .. })).count()
    }

    fn apply_extrude(&self, sketch: usize, faces: &[usize], params: &ExtrudeParams) -> Result<Solid, SimError> {
        let Some(Feature::Sketch { plane, primitives }) = self.features.get(sketch) else {
            return Err(SimError::BadReference(sketch));
        };
        let (_, region) = sketch_region(primitives)?;
        let selected = region.select_faces(faces);
        Ok(extrude(&self.solid, Arc::new(selected), params, plane.base.axis(), plane.offset)?)
    }

    /// Re-evaluates a feature list from an empty document.
    pub fn replay(features: &[Feature]) -> Result<DocState, SimError> {
        let mut doc = DocState::default();
        for f in features {
            if let Feature::Extrude { sketch, faces, params } = f {
                doc.solid = Arc::new(doc.apply_extrude(*sketch, faces, params)?);
            }
            doc.features.push(f.clone());
        }
        Ok(doc)
    }
}

/// Groups sketch primitives into closed loops: circles stand alone, lines
/// and arcs chain in commit order until they return to the chain start.
/// Chains that never close are dropped.
pub fn chain_loops(prims: &[PrimitiveGeom]) -> Vec<LoopGeom> {
    const EPS: f64 = 1e-9;
    let mut loops = Vec::new();
    let mut chain: Vec<PrimitiveGeom> = Vec::new();
    for p in prims {
        if let PrimitiveGeom::Circle { .. } = p {
            loops.push(LoopGeom { primitives: vec![*p] });
            continue;
        }
        if let Some(last) = chain.last() {
            if last.end().dist(p.start()) > EPS {
                chain.clear();
            }
        }
        chain.push(*p);
        if chain.len() >= 2 && chain[0].start().dist(p.end()) <= EPS {
            loops.push(LoopGeom { primitives: std::mem::take(&mut chain) });
        }
    }
    loops
}

pub fn sketch_region(prims: &[PrimitiveGeom]) -> Result<(Vec<LoopGeom>, PlanarRegion), SimError> {
    let loops = chain_loops(prims);
    let geom = SketchGeom { loops: loops.clone() };
    let region = build_region(&geom, TAU_TESS).map_err(|e| SimError::Region(e.to_string()))?;
    Ok((loops, region))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dialog {
    Plane {
        base: Option<PlaneId>,
        value: Option<f64>,
        negative: bool,
    },
    Extrude {
        sketch: usize,
        faces: Vec<usize>,
        op: Option<ExtrudeOp>,
        depth: Option<f64>,
        symmetric: bool,
        merge_all: bool,
        depth2: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSketch {
    pub plane: PlaneRef,
    pub primitives: Vec<PrimitiveGeom>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub cursor: PixelPoint,
    pub active_tool: Tool,
    pub shift_held: bool,
    pub focus: Focus,
    pub text_buffer: String,
    pub pending_clicks: Vec<PixelPoint>,
    pub active_sketch: Option<ActiveSketch>,
    pub selection: BTreeSet<usize>,
    pub zoom: f64,
    pub camera: CameraMode,
    pub visibility: Visibility,
    pub retry_count: u32,
    pub dialog: Option<Dialog>,
    /// The plane list opened by Shift+S is waiting for a pick.
    pub plane_pick: bool,
    /// Shift+'+' pressed; the next arrow key selects a view.
    pub nav_armed: bool,
    pub doc: DocState,
}

impl Default for SimState {
    fn default() -> Self {
        Self {
            cursor: PixelPoint::new(0.5, 0.5),
            active_tool: Tool::None,
            shift_held: false,
            focus: Focus::None,
            text_buffer: String::new(),
            pending_clicks: Vec::new(),
            active_sketch: None,
            selection: BTreeSet::new(),
            zoom: 1.0,
            camera: CameraMode::Isometric,
            visibility: Visibility { planes: true, sketches: true, parts: true },
            retry_count: 0,
            dialog: None,
            plane_pick: false,
            nav_armed: false,
            doc: DocState::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    PlaneDialogOpened,
    PlaneCreated { index: usize },
    SketchStarted { plane: usize },
    ToolSelected(Tool),
    PrimitiveCommitted { kind: PrimitiveKind, shift_held: bool },
    RegionToggled { face: usize, selected: bool },
    ExtrudeDialogOpened,
    ExtrudeCommitted { feature: usize },
    CameraChanged(CameraMode),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("no-op: {0}")]
    NoOp(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
}

fn noop<T>(msg: impl Into<String>) -> Result<T, StepError> {
    Err(StepError::NoOp(msg.into()))
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, StepError> {
    Err(StepError::InvalidTransition(msg.into()))
}

/// Circle arc through `start`, `mid` and `end`, or `None` if collinear.
pub fn arc_through(start: PixelPoint, end: PixelPoint, mid: PixelPoint) -> Option<ArcGeom> {
    let (ax, ay) = (start.u, start.v);
    let (bx, by) = (mid.u, mid.v);
    let (cx, cy) = (end.u, end.v);
    let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    if d.abs() < 1e-14 {
        return None;
    }
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
    let uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
    let center = PixelPoint::new(ux, uy);
    let ang = |p: PixelPoint| (p.v - uy).atan2(p.u - ux);
    let tau = std::f64::consts::TAU;
    let (a_s, a_m, a_e) = (ang(start), ang(mid), ang(end));
    let to_m = (a_m - a_s).rem_euclid(tau);
    let to_e = (a_e - a_s).rem_euclid(tau);
    let (ccw, sweep) = if to_m < to_e { (true, to_e) } else { (false, tau - to_e) };
    let sweep_deg = sweep.to_degrees();
    let flag = u8::from(ccw == (sweep_deg <= 180.0));
    Some(ArcGeom { start, end, center, mid, radius: center.dist(start), sweep_deg, flag })
}

fn sketch_vertices(sk: &ActiveSketch) -> Vec<PixelPoint> {
    let mut v = Vec::new();
    for p in &sk.primitives {
        match p {
            PrimitiveGeom::Line { start, end } => v.extend([*start, *end]),
            PrimitiveGeom::Arc(a) => v.extend([a.start, a.end]),
            PrimitiveGeom::Circle { .. } => {}
        }
    }
    v
}

fn commit_buffer(st: &mut SimState) -> Result<(), StepError> {
    if st.text_buffer.is_empty() {
        return Ok(());
    }
    let value: f64 = match st.text_buffer.parse() {
        Ok(v) => v,
        Err(_) => return invalid("text field holds a non-number"),
    };
    st.text_buffer.clear();
    match (&mut st.dialog, st.focus) {
        (Some(Dialog::Plane { value: v, .. }), Focus::OffsetField) => *v = Some(value),
        (Some(Dialog::Extrude { depth, .. }), Focus::DepthField) => *depth = Some(value),
        (Some(Dialog::Extrude { depth2, .. }), Focus::SecondDepthField) => *depth2 = Some(value),
        _ => return invalid("typed text has no field"),
    }
    Ok(())
}

fn set_camera(st: &mut SimState, cam: CameraMode, ev: &mut Vec<SimEvent>) {
    st.camera = cam;
    ev.push(SimEvent::CameraChanged(cam));
}

fn press(st: &mut SimState, key: KeyId, count: u32, ev: &mut Vec<SimEvent>) -> Result<(), StepError> {
    let shift = st.shift_held;
    match key {
        KeyId::ShiftDown => {
            if shift {
                return noop("shift already held");
            }
            st.shift_held = true;
        }
        KeyId::ShiftUp => {
            if !shift {
                return noop("shift not held");
            }
            st.shift_held = false;
            st.nav_armed = false;
        }
        KeyId::Tab => {
            let order: &[Focus] = match st.dialog {
                Some(Dialog::Plane { .. }) => &ui::PLANE_TAB_ORDER,
                Some(Dialog::Extrude { .. }) => &ui::EXTRUDE_TAB_ORDER,
                None => return invalid("tab with no dialog"),
            };
            commit_buffer(st)?;
            st.focus = ui::tab_advance(order, st.focus, count.max(1));
        }
        KeyId::Enter => {
            commit_buffer(st)?;
            match st.dialog.clone() {
                None => return invalid("enter with no dialog open"),
                Some(Dialog::Plane { base, value, negative }) => {
                    let (Some(base), Some(value)) = (base, value) else {
                        return invalid("plane dialog incomplete");
                    };
                    if value == 0.0 {
                        return invalid("plane offset is zero");
                    }
                    if st.doc.planes().len() >= ui::PLANE_LIST_CAPACITY {
                        return invalid("plane list is full");
                    }
                    let offset = if negative { -value } else { value };
                    st.doc.features.push(Feature::Plane(PlaneRef { base, offset }));
                    ev.push(SimEvent::PlaneCreated { index: st.doc.planes().len() - 1 });
                }
                Some(Dialog::Extrude { sketch, faces, op, depth, symmetric, merge_all, depth2 }) => {
                    let (Some(op), Some(depth)) = (op, depth) else {
                        return invalid("extrude dialog incomplete");
                    };
                    if op == ExtrudeOp::Remove && !merge_all {
                        return invalid("remove requires merge with all");
                    }
                    let sides = match (symmetric, depth2) {
                        (true, Some(_)) => return invalid("symmetric and second depth both set"),
                        (true, None) => ExtentType::Symmetric,
                        (false, Some(_)) => ExtentType::TwoSided,
                        (false, None) => ExtentType::OneSided,
                    };
                    let params = ExtrudeParams { e1: depth, e2: depth2.unwrap_or(0.0), op, sides, scale_s: 1.0 };
                    let solid = st.doc.apply_extrude(sketch, &faces, &params).or_else(|e| invalid(e.to_string()))?;
                    st.doc.features.push(Feature::Extrude { sketch, faces, params });
                    st.doc.solid = Arc::new(solid);
                    ev.push(SimEvent::ExtrudeCommitted { feature: st.doc.features.len() - 1 });
                }
            }
            st.dialog = None;
            st.focus = Focus::None;
            st.active_tool = Tool::None;
        }
        KeyId::Escape => {
            if st.dialog.is_some() {
                st.dialog = None;
                st.focus = Focus::None;
                st.text_buffer.clear();
                if st.active_tool == Tool::PlaneCreate {
                    st.active_tool = Tool::None;
                }
            } else if st.plane_pick {
                st.plane_pick = false;
            } else if matches!(st.active_tool, Tool::Line | Tool::Circle | Tool::Arc) {
                st.active_tool = Tool::None;
                st.pending_clicks.clear();
                ev.push(SimEvent::ToolSelected(Tool::None));
            } else {
                return noop("nothing to escape");
            }
        }
        KeyId::Space => match (&mut st.dialog, st.focus) {
            (Some(Dialog::Extrude { symmetric, .. }), Focus::SymmetricBox) => *symmetric = !*symmetric,
            (Some(Dialog::Extrude { merge_all, .. }), Focus::MergeBox) => *merge_all = !*merge_all,
            _ => return noop("space without a focused checkbox"),
        },
        KeyId::L | KeyId::C | KeyId::A => {
            let tool = match key {
                KeyId::L => Tool::Line,
                KeyId::C => Tool::Circle,
                _ => Tool::Arc,
            };
            if st.active_sketch.is_none() || st.dialog.is_some() || st.plane_pick {
                return invalid("drawing tools need an open sketch");
            }
            if st.active_tool == tool {
                return noop("tool already active");
            }
            if st.active_tool != Tool::None {
                return invalid("switching tools requires escape first");
            }
            st.active_tool = tool;
            st.pending_clicks.clear();
            ev.push(SimEvent::ToolSelected(tool));
        }
        KeyId::S => {
            if !shift {
                return noop("plain s");
            }
            if st.dialog.is_some() || st.active_sketch.is_some() || st.plane_pick {
                return invalid("cannot start a sketch now");
            }
            st.plane_pick = true;
        }
        KeyId::E => {
            if !shift {
                return noop("plain e");
            }
            let Some(sk) = st.active_sketch.clone() else {
                return invalid("extrude needs a sketch");
            };
            if st.active_tool != Tool::None || st.dialog.is_some() {
                return invalid("finish drawing before extruding");
            }
            if st.selection.is_empty() {
                return invalid("no region selected");
            }
            st.doc.features.push(Feature::Sketch { plane: sk.plane, primitives: sk.primitives });
            st.dialog = Some(Dialog::Extrude {
                sketch: st.doc.features.len() - 1,
                faces: st.selection.iter().copied().collect(),
                op: None,
                depth: None,
                symmetric: false,
                merge_all: false,
                depth2: None,
            });
            st.active_sketch = None;
            st.selection.clear();
            st.focus = Focus::None;
            ev.push(SimEvent::ExtrudeDialogOpened);
        }
        KeyId::P | KeyId::H => {
            if !shift {
                return noop("plain visibility key");
            }
            if key == KeyId::P {
                st.visibility.planes = !st.visibility.planes;
            } else {
                st.visibility.sketches = !st.visibility.sketches;
            }
        }
        KeyId::Y => {
            let want = shift;
            if st.visibility.parts == want {
                return noop("parts visibility unchanged");
            }
            st.visibility.parts = want;
        }
        KeyId::Seven => {
            if !shift {
                return noop("plain 7");
            }
            set_camera(st, CameraMode::Isometric, ev);
        }
        KeyId::Plus => {
            if !shift {
                return noop("plain +");
            }
            st.nav_armed = true;
        }
        KeyId::ArrowUp | KeyId::ArrowDown | KeyId::ArrowRight | KeyId::ArrowLeft => {
            if !st.nav_armed {
                return noop("arrow without view navigation");
            }
            let plane = match key {
                KeyId::ArrowUp => PlaneId::Top,
                KeyId::ArrowDown => PlaneId::Front,
                KeyId::ArrowRight => PlaneId::Right,
                _ => return noop("no view bound to left arrow"),
            };
            st.nav_armed = false;
            set_camera(st, CameraMode::PlaneView(plane), ev);
        }
    }
    Ok(())
}

fn click(st: &mut SimState, ev: &mut Vec<SimEvent>) -> Result<(), StepError> {
    let p = st.cursor;
    if let Some(dialog) = &mut st.dialog {
        match dialog {
            Dialog::Plane { base, .. } => {
                if let Some(i) = (0..3).find(|&i| ui::plane_dialog_entry(i).contains(p)) {
                    *base = Some(ui::DEFAULT_PLANE_ORDER[i]);
                    return Ok(());
                }
                for (rect, neg) in [(ui::DIRECTION_NEG, true), (ui::DIRECTION_POS, false)] {
                    if rect.contains(p) {
                        commit_buffer(st)?;
                        if let Some(Dialog::Plane { negative, .. }) = &mut st.dialog {
                            *negative = neg;
                        }
                        st.focus = Focus::DirectionArrow;
                        return Ok(());
                    }
                }
                return noop("click outside plane dialog widgets");
            }
            Dialog::Extrude { .. } => {
                for (rect, kind) in [
                    (ui::EXTRUDE_NEW, ExtrudeOp::New),
                    (ui::EXTRUDE_ADD, ExtrudeOp::Union),
                    (ui::EXTRUDE_REMOVE, ExtrudeOp::Remove),
                ] {
                    if rect.contains(p) {
                        commit_buffer(st)?;
                        if let Some(Dialog::Extrude { op, .. }) = &mut st.dialog {
                            *op = Some(kind);
                        }
                        st.focus = Focus::TypeSelector;
                        return Ok(());
                    }
                }
                return noop("click outside extrude dialog widgets");
            }
        }
    }
    if st.plane_pick {
        let planes = st.doc.planes();
        let Some(i) = (0..planes.len()).find(|&i| ui::plane_list_entry(i).contains(p)) else {
            return noop("click outside plane list");
        };
        st.plane_pick = false;
        st.active_sketch = Some(ActiveSketch { plane: planes[i], primitives: Vec::new() });
        st.selection.clear();
        ev.push(SimEvent::SketchStarted { plane: i });
        return Ok(());
    }
    let Some(sk) = &mut st.active_sketch else {
        if ui::PLANE_ICON.contains(p) {
            st.dialog = Some(Dialog::Plane { base: None, value: None, negative: false });
            st.active_tool = Tool::PlaneCreate;
            st.focus = Focus::None;
            ev.push(SimEvent::PlaneDialogOpened);
            return Ok(());
        }
        return noop("click on empty workspace");
    };
    match st.active_tool {
        Tool::Line | Tool::Circle | Tool::Arc => {
            if st.camera != CameraMode::PlaneView(sk.plane.base) {
                return noop("sketch plane is not in view");
            }
            let mut q = p;
            if !st.shift_held {
                let radius = ui::SNAP_RADIUS / st.zoom;
                let nearest = sketch_vertices(sk)
                    .into_iter()
                    .map(|v| (v.dist(p), v))
                    .filter(|(d, _)| *d <= radius)
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((_, v)) = nearest {
                    q = v;
                }
            }
            st.pending_clicks.push(q);
            if st.pending_clicks.len() < st.active_tool.arity() {
                return Ok(());
            }
            let c = std::mem::take(&mut st.pending_clicks);
            let prim = match st.active_tool {
                Tool::Line => {
                    if c[0].dist(c[1]) < 1e-9 {
                        return invalid("zero-length line");
                    }
                    PrimitiveGeom::Line { start: c[0], end: c[1] }
                }
                Tool::Circle => {
                    let r = c[0].dist(c[1]);
                    if r < 1e-9 {
                        return invalid("zero-radius circle");
                    }
                    PrimitiveGeom::Circle { center: c[0], radius: r }
                }
                _ => match arc_through(c[0], c[1], c[2]) {
                    Some(a) => PrimitiveGeom::Arc(a),
                    None => return invalid("collinear arc points"),
                },
            };
            let kind = match prim {
                PrimitiveGeom::Line { .. } => PrimitiveKind::Line,
                PrimitiveGeom::Circle { .. } => PrimitiveKind::Circle,
                PrimitiveGeom::Arc(_) => PrimitiveKind::Arc,
            };
            sk.primitives.push(prim);
            ev.push(SimEvent::PrimitiveCommitted { kind, shift_held: st.shift_held });
            Ok(())
        }
        _ => {
            let (_, region) = sketch_region(&sk.primitives).or_else(|e| invalid(e.to_string()))?;
            let Some(face) = region.face_at([p.u - 0.5, p.v - 0.5]) else {
                return noop("click outside every sketch region");
            };
            let selected = st.selection.insert(face);
            if !selected {
                st.selection.remove(&face);
            }
            ev.push(SimEvent::RegionToggled { face, selected });
            Ok(())
        }
    }
}

/// Pure transition on a decoded command.
pub fn step(st: &SimState, cmd: &Command) -> Result<(SimState, Vec<SimEvent>), StepError> {
    let mut next = st.clone();
    let mut ev = Vec::new();
    match *cmd {
        Command::MoveTo { x, y } => next.cursor = PixelPoint::new(x, y),
        Command::Click => click(&mut next, &mut ev)?,
        Command::PressKey { key, count } => press(&mut next, key, count, &mut ev)?,
        Command::Scroll { amount } => next.zoom *= (ui::ZOOM_RATE * amount).exp(),
        Command::Type { value } => {
            if !next.focus.is_text() || next.dialog.is_none() {
                return invalid("typing without a focused text field");
            }
            next.text_buffer = value.to_string();
        }
    }
    Ok((next, ev))
}

/// Transition on a raw vector; malformed vectors are invalid transitions.
pub fn step_vector(st: &SimState, v: &ActionVector) -> Result<(SimState, Vec<SimEvent>), StepError> {
    let cmd = decode_action(v).map_err(|e| StepError::InvalidTransition(e.to_string()))?;
    step(st, &cmd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    /// Render a keyframe after every action.
    pub render: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { width: 224, height: 224, render: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Completed,
    Terminated(String),
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub vector: ActionVector,
    pub outcome: Result<(), StepError>,
    pub events: Vec<SimEvent>,
    pub camera: CameraMode,
    pub frame: Option<GrayImage>,
    pub hl: Vec<HlTag>,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub final_state: SimState,
    pub status: Status,
}

impl EpisodeTrace {
    pub fn final_doc(&self) -> &DocState {
        &self.final_state.doc
    }

    pub fn failures(&self) -> usize {
        self.steps.iter().filter(|s| s.outcome.is_err()).count()
    }
}

/// Executes a program from a fresh state.
pub fn run(prog: &ActionProgram, cfg: &SimConfig) -> EpisodeTrace {
    let vectors = prog.vectors();
    let mut renderer = Renderer::default();
    let mut st = SimState::default();
    let mut steps = Vec::with_capacity(vectors.len());
    let mut status = Status::Completed;
    for (i, v) in vectors.iter().enumerate() {
        let (outcome, events) = match step_vector(&st, v) {
            Ok((next, ev)) => {
                st = next;
                st.retry_count = 0;
                (Ok(()), ev)
            }
            Err(e) => {
                st.retry_count += 1;
                (Err(e), Vec::new())
            }
        };
        let frame = cfg.render.then(|| renderer.render_canvas(&st, cfg));
        steps.push(TraceStep {
            vector: *v,
            outcome,
            events,
            camera: st.camera,
            frame,
            hl: prog.tags_at(i).collect(),
        });
        if st.retry_count >= MAX_CONSECUTIVE_FAILURES {
            status = Status::Terminated(format!("{MAX_CONSECUTIVE_FAILURES} consecutive failures"));
            break;
        }
    }
    EpisodeTrace { steps, final_state: st, status }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct LayerKey {
    features: usize,
    camera: CameraMode,
    width: usize,
    height: usize,
}

/// Keyframe renderer with a one-entry cache for the solid layer.
#[derive(Default)]
pub struct Renderer {
    cache: Option<(LayerKey, Arc<Vec<Option<u8>>>)>,
}

fn camera_for(st: &SimState) -> Camera {
    match st.camera {
        CameraMode::PlaneView(p) => Camera::plane_view(p),
        CameraMode::Isometric if st.doc.solid.is_empty() => Camera::isometric(&st.doc.solid, Framing::Fixed { half_extent: 0.75 }),
        CameraMode::Isometric => Camera::isometric(&st.doc.solid, Framing::FitModel),
    }
}

fn to_world(plane: &PlaneRef, p: PixelPoint) -> [f64; 3] {
    let (a, b) = plane.base.kept_axes();
    let mut w = [0.0; 3];
    w[a] = p.u - 0.5;
    w[b] = p.v - 0.5;
    w[plane.base.axis()] = plane.offset;
    w
}

fn draw_prims(img: &mut GrayImage, cam: &Camera, plane: &PlaneRef, prims: &[PrimitiveGeom], value: u8) {
    let (w, h) = (img.width, img.height);
    for p in prims {
        let pts = p.polyline(0.005);
        for seg in pts.windows(2) {
            let a = cam.project(to_world(plane, seg[0]), w, h);
            let b = cam.project(to_world(plane, seg[1]), w, h);
            img.line((a.0.floor() as i64, a.1.floor() as i64), (b.0.floor() as i64, b.1.floor() as i64), value);
        }
    }
}

fn rect_px(img: &GrayImage, r: &ui::Rect) -> (i64, i64, i64, i64) {
    let (x0, y0) = img.to_pixel(r.u0, r.v0);
    let (x1, y1) = img.to_pixel(r.u1, r.v1);
    (x0, y0, x1.max(x0 + 1), y1.max(y0 + 1))
}

fn widget(img: &mut GrayImage, r: &ui::Rect, focused: bool, filled: bool) {
    let (x0, y0, x1, y1) = rect_px(img, r);
    img.fill_rect(x0, y0, x1, y1, if focused { 200 } else { 250 });
    if filled {
        img.fill_rect(x0 + 1, y0 + 1, x1 - 1, y1 - 1, 40);
    }
    img.stroke_rect(x0, y0, x1, y1, 70);
}

impl Renderer {
    fn solid_layer(&mut self, st: &SimState, cam: &Camera, w: usize, h: usize) -> Arc<Vec<Option<u8>>> {
        let key = LayerKey { features: st.doc.features.len(), camera: st.camera, width: w, height: h };
        if let Some((k, layer)) = &self.cache {
            if *k == key {
                return layer.clone();
            }
        }
        let shading = match st.camera {
            CameraMode::Isometric => Shading::Lambert,
            CameraMode::PlaneView(_) => Shading::Depth,
        };
        let layer = Arc::new(render::render_layer(&st.doc.solid, cam, w, h, shading));
        self.cache = Some((key, layer.clone()));
        layer
    }

    /// Draws the screen for a state: grid, solid, sketches, widgets, cursor.
    pub fn render_canvas(&mut self, st: &SimState, cfg: &SimConfig) -> GrayImage {
        let (w, h) = (cfg.width, cfg.height);
        let mut img = GrayImage::new(w, h, 245);
        let cam = camera_for(st);
        if let CameraMode::PlaneView(_) = st.camera {
            if st.visibility.planes {
                for k in 1..10 {
                    let t = k as f64 / 10.0;
                    img.line_uv((t, 0.0), (t, 0.999), 228);
                    img.line_uv((0.0, t), (0.999, t), 228);
                }
            }
        }
        if st.visibility.parts && !st.doc.solid.is_empty() {
            let layer = self.solid_layer(st, &cam, w, h);
            for (px, v) in img.data.iter_mut().zip(layer.iter()) {
                if let Some(v) = v {
                    *px = *v;
                }
            }
        }
        let visible = |plane: &PlaneRef| match st.camera {
            CameraMode::PlaneView(p) => p == plane.base,
            CameraMode::Isometric => true,
        };
        if st.visibility.sketches {
            for f in &st.doc.features {
                if let Feature::Sketch { plane, primitives } = f {
                    if visible(plane) {
                        draw_prims(&mut img, &cam, plane, primitives, 110);
                    }
                }
            }
        }
        if let Some(sk) = &st.active_sketch {
            if visible(&sk.plane) {
                draw_prims(&mut img, &cam, &sk.plane, &sk.primitives, 20);
            }
            for c in &st.pending_clicks {
                let (x, y) = img.to_pixel(c.u, c.v);
                img.line((x - 2, y - 2), (x + 2, y + 2), 60);
                img.line((x - 2, y + 2), (x + 2, y - 2), 60);
            }
        }
        let (x0, y0, x1, y1) = rect_px(&img, &ui::PLANE_ICON);
        img.stroke_rect(x0, y0, x1, y1, 80);
        match &st.dialog {
            Some(Dialog::Plane { base, negative, .. }) => {
                for i in 0..3 {
                    widget(&mut img, &ui::plane_dialog_entry(i), false, *base == Some(ui::DEFAULT_PLANE_ORDER[i]));
                }
                widget(&mut img, &ui::OFFSET_FIELD, st.focus == Focus::OffsetField, false);
                let arrow = st.focus == Focus::DirectionArrow;
                widget(&mut img, &ui::DIRECTION_NEG, arrow && *negative, false);
                widget(&mut img, &ui::DIRECTION_POS, arrow && !*negative, false);
            }
            Some(Dialog::Extrude { op, symmetric, merge_all, .. }) => {
                let sel = st.focus == Focus::TypeSelector;
                widget(&mut img, &ui::EXTRUDE_NEW, sel, *op == Some(ExtrudeOp::New));
                widget(&mut img, &ui::EXTRUDE_ADD, sel, *op == Some(ExtrudeOp::Union));
                widget(&mut img, &ui::EXTRUDE_REMOVE, sel, *op == Some(ExtrudeOp::Remove));
                widget(&mut img, &ui::DEPTH_FIELD, st.focus == Focus::DepthField, false);
                widget(&mut img, &ui::SYMMETRIC_BOX, st.focus == Focus::SymmetricBox, *symmetric);
                widget(&mut img, &ui::MERGE_BOX, st.focus == Focus::MergeBox, *merge_all);
                widget(&mut img, &ui::SECOND_DEPTH_FIELD, st.focus == Focus::SecondDepthField, false);
            }
            None => {}
        }
        if st.plane_pick {
            for i in 0..st.doc.planes().len() {
                widget(&mut img, &ui::plane_list_entry(i), false, false);
            }
        }
        let (cx, cy) = img.to_pixel(st.cursor.u, st.cursor.v);
        img.line((cx - 3, cy), (cx + 3, cy), 0);
        img.line((cx, cy - 3), (cx, cy + 3), 0);
        img
    }
}
