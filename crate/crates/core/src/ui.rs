//! Screen layout shared by the compiler and the simulator.
//!
//! Screen coordinates are normalized `[0,1]²` with `v` growing downward;
//! while a sketch plane is viewed head-on they coincide with canvas
//! coordinates. Widgets are modal: a click is interpreted against the
//! widgets of the current mode only, so they may overlap the canvas.

use crate::geometry::{PixelPoint, PlaneId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl Rect {
    pub const fn new(u0: f64, v0: f64, u1: f64, v1: f64) -> Self {
        Self { u0, v0, u1, v1 }
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.u >= self.u0 && p.u <= self.u1 && p.v >= self.v0 && p.v <= self.v1
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(0.5 * (self.u0 + self.u1), 0.5 * (self.v0 + self.v1))
    }

    /// Point at fractional position `(a, b) ∈ [0,1]²` inside the rect shrunk
    /// by a 10% margin on each side.
    pub fn inset_point(&self, a: f64, b: f64) -> PixelPoint {
        let (w, h) = (self.u1 - self.u0, self.v1 - self.v0);
        PixelPoint::new(self.u0 + w * (0.1 + 0.8 * a), self.v0 + h * (0.1 + 0.8 * b))
    }
}

/// Toolbar button opening the plane dialog.
pub const PLANE_ICON: Rect = Rect::new(0.02, 0.02, 0.08, 0.06);

/// Reference-plane entries of the plane dialog, in [`DEFAULT_PLANE_ORDER`].
pub fn plane_dialog_entry(i: usize) -> Rect {
    let v0 = 0.20 + 0.06 * i as f64;
    Rect::new(0.70, v0, 0.95, v0 + 0.05)
}

pub const OFFSET_FIELD: Rect = Rect::new(0.70, 0.40, 0.95, 0.45);
/// Direction arrow; its left half flips the offset to the negative side.
pub const DIRECTION_NEG: Rect = Rect::new(0.70, 0.48, 0.82, 0.53);
pub const DIRECTION_POS: Rect = Rect::new(0.83, 0.48, 0.95, 0.53);

/// Order of the default planes in both plane lists.
pub const DEFAULT_PLANE_ORDER: [PlaneId; 3] = [PlaneId::Top, PlaneId::Front, PlaneId::Right];

/// Maximum number of entries the plane list can show.
pub const PLANE_LIST_CAPACITY: usize = 17;

/// Entry `i` of the plane list shown after Shift+S: the three default
/// planes followed by custom planes in creation order.
pub fn plane_list_entry(i: usize) -> Rect {
    let v0 = 0.10 + 0.05 * i as f64;
    Rect::new(0.02, v0, 0.20, v0 + 0.04)
}

/// Extrude dialog type buttons: new, add, remove.
pub const EXTRUDE_NEW: Rect = Rect::new(0.70, 0.15, 0.78, 0.19);
pub const EXTRUDE_ADD: Rect = Rect::new(0.79, 0.15, 0.87, 0.19);
pub const EXTRUDE_REMOVE: Rect = Rect::new(0.88, 0.15, 0.96, 0.19);
pub const DEPTH_FIELD: Rect = Rect::new(0.70, 0.22, 0.96, 0.26);
pub const SYMMETRIC_BOX: Rect = Rect::new(0.70, 0.29, 0.73, 0.32);
pub const MERGE_BOX: Rect = Rect::new(0.70, 0.35, 0.73, 0.38);
pub const SECOND_DEPTH_FIELD: Rect = Rect::new(0.70, 0.41, 0.96, 0.45);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Focus {
    None,
    OffsetField,
    DirectionArrow,
    TypeSelector,
    DepthField,
    SymmetricBox,
    MergeBox,
    SecondDepthField,
}

impl Focus {
    pub fn is_text(self) -> bool {
        matches!(self, Focus::OffsetField | Focus::DepthField | Focus::SecondDepthField)
    }
}

pub const PLANE_TAB_ORDER: [Focus; 2] = [Focus::OffsetField, Focus::DirectionArrow];
pub const EXTRUDE_TAB_ORDER: [Focus; 5] = [
    Focus::TypeSelector,
    Focus::DepthField,
    Focus::SymmetricBox,
    Focus::MergeBox,
    Focus::SecondDepthField,
];

/// Focus after `count` Tab presses in a dialog with the given order.
pub fn tab_advance(order: &[Focus], from: Focus, count: u32) -> Focus {
    let pos = order.iter().position(|&f| f == from);
    let n = order.len();
    let next = match pos {
        Some(p) => (p + count as usize) % n,
        None => (count as usize - 1) % n,
    };
    order[next]
}

/// Tab presses needed to move from `from` to `to`.
pub fn tabs_between(order: &[Focus], from: Focus, to: Focus) -> u32 {
    let n = order.len();
    let target = order.iter().position(|&f| f == to).expect("target in tab order");
    match order.iter().position(|&f| f == from) {
        Some(p) => ((target + n - p) % n) as u32,
        None => target as u32 + 1,
    }
}

/// Snap radius for constraint inference, before zoom.
pub const SNAP_RADIUS: f64 = 0.004;
/// Zoom multiplier per unit of scroll.
pub const ZOOM_RATE: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrude_tab_order() {
        assert_eq!(tab_advance(&EXTRUDE_TAB_ORDER, Focus::DepthField, 1), Focus::SymmetricBox);
        assert_eq!(tab_advance(&EXTRUDE_TAB_ORDER, Focus::TypeSelector, 1), Focus::DepthField);
        assert_eq!(tab_advance(&EXTRUDE_TAB_ORDER, Focus::None, 1), Focus::TypeSelector);
        assert_eq!(tabs_between(&EXTRUDE_TAB_ORDER, Focus::DepthField, Focus::MergeBox), 2);
        assert_eq!(tabs_between(&PLANE_TAB_ORDER, Focus::None, Focus::OffsetField), 1);
        for from in EXTRUDE_TAB_ORDER {
            for to in EXTRUDE_TAB_ORDER {
                let k = tabs_between(&EXTRUDE_TAB_ORDER, from, to);
                if k > 0 {
                    assert_eq!(tab_advance(&EXTRUDE_TAB_ORDER, from, k), to);
                }
            }
        }
    }

    #[test]
    fn plane_list_fits_on_screen() {
        assert!(plane_list_entry(PLANE_LIST_CAPACITY - 1).v1 <= 1.0);
        for i in 0..3 {
            assert!(plane_dialog_entry(i).v1 < OFFSET_FIELD.v0);
        }
    }
}
