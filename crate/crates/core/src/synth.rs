//! Random generator of valid sketch-extrude sequences on the three default
//! plane orientations. Used for tests, benchmarks and demo corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compiler::face_click_point;
use crate::geometry::lower_sequence;
use crate::kernel::{build_region, build_solid, TAU_TESS};
use crate::sequence::{CadSequence, ExtrusionRecordRaw, LoopSpec, PrimitiveSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub min_records: usize,
    pub max_records: usize,
    /// Probability that a sequence is built from outlines centered on the
    /// origin with symmetric extents, which yields mirror-symmetric parts.
    pub centered: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { min_records: 2, max_records: 5, centered: 0.0 }
    }
}

/// Smallest primitive extent accepted, in canvas units.
const MIN_EXTENT: f64 = 0.01;

fn line(x: u8, y: u8) -> PrimitiveSpec {
    PrimitiveSpec::Line { x, y }
}

fn outer_loop(rng: &mut ChaCha8Rng, centered: bool) -> (LoopSpec, [u8; 4]) {
    let x0 = rng.random_range(24..100u8);
    let y0 = rng.random_range(24..100u8);
    let (x1, y1) = if centered {
        (255 - x0 + 1, 255 - y0 + 1)
    } else {
        (rng.random_range(156..232u8), rng.random_range(156..232u8))
    };
    let shapes = if centered { 3 } else { 4 };
    let prims = match rng.random_range(0..shapes) {
        0 => vec![line(x1, y0), line(x1, y1), line(x0, y1), line(x0, y0)],
        1 => {
            let r = (x1 - x0).min(y1 - y0) / 2;
            let (cx, cy) = (x0 + (x1 - x0) / 2, y0 + (y1 - y0) / 2);
            return (LoopSpec::new(vec![PrimitiveSpec::Circle { x: cx, y: cy, radius: r }]), [cx - r, cy - r, cx + r, cy + r]);
        }
        2 => {
            let flag = rng.random_range(0..2u8);
            vec![
                line(x1, y0),
                PrimitiveSpec::Arc { x: x1, y: y1, alpha: 128, flag },
                line(x0, y1),
                PrimitiveSpec::Arc { x: x0, y: y0, alpha: 128, flag },
            ]
        }
        _ => {
            let alpha = rng.random_range(40..100u8);
            let flag = rng.random_range(0..2u8);
            vec![line(x1, y0), line(x1, y1), PrimitiveSpec::Arc { x: x0, y: y0, alpha, flag }]
        }
    };
    (LoopSpec::new(prims), [x0, y0, x1, y1])
}

fn record(rng: &mut ChaCha8Rng, first: bool, centered: bool) -> ExtrusionRecordRaw {
    let (outer, bb) = outer_loop(rng, centered);
    let mut loops = vec![outer];
    if rng.random_bool(0.35) {
        let r = rng.random_range(8..20u8);
        let (cx, cy) = if centered { (128, 128) } else { (bb[0] / 2 + bb[2] / 2, bb[1] / 2 + bb[3] / 2) };
        loops.push(LoopSpec::new(vec![PrimitiveSpec::Circle { x: cx, y: cy, radius: r }]));
    }
    let plane = match rng.random_range(0..3) {
        0 => [128, 128, 128],
        1 => [192, 128, 128],
        _ => [192, 192, 128],
    };
    let mut origin = [
        rng.random_range(112..145u8),
        rng.random_range(112..145u8),
        rng.random_range(112..145u8),
    ];
    if centered {
        origin = [128; 3];
    } else if rng.random_bool(0.5) {
        // Keep the sketch on the default plane through the origin.
        let axis = match plane {
            [128, _, _] => 2,
            [_, 128, _] => 0,
            _ => 1,
        };
        origin[axis] = 128;
    }
    let op = if first { 0 } else if rng.random_bool(0.3) { 1 } else { 2 };
    let sides = if centered { 1 } else { rng.random_range(0..3u8) };
    let e1 = if sides == 0 && rng.random_bool(0.3) { rng.random_range(50..110u8) } else { rng.random_range(146..210u8) };
    let e2 = if sides == 2 { rng.random_range(146..190u8) } else { 128 };
    ExtrusionRecordRaw {
        loops,
        plane,
        origin,
        scale: rng.random_range(96..200u8),
        extents: [e1, e2],
        op,
        sides,
    }
}

/// Geometric checks a generated sequence must pass: it lowers, builds a
/// nonempty solid, has no tiny primitives and every face is clickable.
pub fn acceptable(seq: &CadSequence) -> bool {
    let Ok(lowered) = lower_sequence(seq) else { return false };
    for rec in &lowered {
        if rec.sketch.loops.iter().any(|l| l.min_extent() < MIN_EXTENT) {
            return false;
        }
        let Ok(region) = build_region(&rec.sketch, TAU_TESS) else { return false };
        for f in region.faces() {
            match face_click_point(&region, f, None) {
                Some(p) if region.face_clearance(f, [p.u - 0.5, p.v - 0.5]) >= 0.005 => {}
                _ => return false,
            }
        }
    }
    match build_solid(&lowered) {
        Ok(solid) => !solid.is_empty() && solid.sample_points(64, 0).is_ok(),
        Err(_) => false,
    }
}

/// Draws one acceptable sequence. Deterministic for a given RNG state.
pub fn random_sequence(rng: &mut ChaCha8Rng, cfg: &SynthConfig, source_id: &str) -> CadSequence {
    loop {
        let n = rng.random_range(cfg.min_records..=cfg.max_records);
        let centered = cfg.centered > 0.0 && rng.random_bool(cfg.centered);
        let records = (0..n).map(|i| record(rng, i == 0, centered)).collect();
        let seq = CadSequence { source_id: source_id.to_string(), records };
        if acceptable(&seq) {
            return seq;
        }
    }
}

/// The sequence drawn from a fresh generator seeded with `seed`, named
/// `synth_<seed>`.
pub fn sequence_for_seed(seed: u64, cfg: &SynthConfig) -> CadSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_sequence(&mut rng, cfg, &format!("synth_{seed:05}"))
}

/// `count` sequences named `synth_00000`, `synth_00001`, ...
pub fn corpus(seed: u64, count: usize, cfg: &SynthConfig) -> Vec<CadSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| random_sequence(&mut rng, cfg, &format!("synth_{i:05}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{parse_sequence, validate};

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let a = corpus(7, 12, &SynthConfig::default());
        assert_eq!(a, corpus(7, 12, &SynthConfig::default()));
        for seq in &a {
            assert!(validate(seq).is_valid(), "{}", validate(seq));
            assert!((2..=5).contains(&seq.records.len()));
            assert_eq!(&parse_sequence(&seq.to_line()).unwrap(), seq);
        }
    }

    #[test]
    fn centered_sequences_are_symmetric() {
        let cfg = SynthConfig { centered: 1.0, ..SynthConfig::default() };
        let seq = corpus(3, 1, &cfg).remove(0);
        let solid = build_solid(&lower_sequence(&seq).unwrap()).unwrap();
        assert_eq!(crate::kernel::symmetry_planes(&solid, crate::kernel::SYMMETRY_TOL).unwrap(), [true; 3]);
    }
}
