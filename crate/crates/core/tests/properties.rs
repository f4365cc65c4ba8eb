use std::sync::Arc;

use cadact_core::action::{decode_action, encode_action, Command, HlTag, KeyId};
use cadact_core::compiler::{compile, CompileConfig};
use cadact_core::geometry::{arc_geometry, lower_sequence, normalize, plane_basis, project_point, PixelPoint, PrimitiveGeom};
use cadact_core::kernel::{count_through_holes, PlanarRegion, Prism, Solid};
use cadact_core::metrics::{align_pca, chamfer, chamfer_brute, cmd_accuracy, param_accuracy, perfect_sequence_stats};
use cadact_core::sequence::{parse_sequence, validate, CadSequence, ExtrusionRecordRaw, LoopSpec, PrimitiveSpec};
use cadact_core::sim::{run, DocState, SimConfig, SimEvent, Status};
use cadact_core::synth::{sequence_for_seed, SynthConfig};
use cadact_core::ActionVector;
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

fn primitive() -> impl Strategy<Value = PrimitiveSpec> {
    prop_oneof![
        (any::<u8>(), any::<u8>()).prop_map(|(x, y)| PrimitiveSpec::Line { x, y }),
        (any::<u8>(), any::<u8>(), any::<u8>(), 0..2u8).prop_map(|(x, y, alpha, flag)| PrimitiveSpec::Arc { x, y, alpha, flag }),
        (any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(x, y, radius)| PrimitiveSpec::Circle { x, y, radius }),
    ]
}

fn record() -> impl Strategy<Value = ExtrusionRecordRaw> {
    (
        prop::collection::vec(prop::collection::vec(primitive(), 1..5).prop_map(LoopSpec::new), 1..4),
        any::<[u8; 3]>(),
        any::<[u8; 3]>(),
        any::<u8>(),
        any::<[u8; 2]>(),
        0..3u8,
        0..3u8,
    )
        .prop_map(|(loops, plane, origin, scale, extents, op, sides)| ExtrusionRecordRaw {
            loops,
            plane,
            origin,
            scale,
            extents,
            op,
            sides,
        })
}

fn sequence() -> impl Strategy<Value = CadSequence> {
    ("[a-z0-9_]{1,12}", prop::collection::vec(record(), 1..5))
        .prop_map(|(source_id, records)| CadSequence { source_id, records })
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| Command::MoveTo { x, y }),
        (0..KeyId::ALL.len(), 1..50u32).prop_map(|(k, count)| Command::PressKey { key: KeyId::ALL[k], count }),
        (-1.0..=1.0f64).prop_map(|amount| Command::Scroll { amount }),
        (-1.0..=1.0f64).prop_map(|value| Command::Type { value }),
        Just(Command::Click),
    ]
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec((-1.0..1.0f64, -0.5..0.5f64, -0.2..0.2f64).prop_map(|(x, y, z)| [x, y, z]), n)
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(seq in sequence()) {
        prop_assert_eq!(parse_sequence(&seq.to_line()).unwrap(), seq);
    }

    #[test]
    fn validate_is_pure(seq in sequence()) {
        let before = seq.clone();
        let a = validate(&seq);
        let b = validate(&seq);
        prop_assert_eq!(a, b);
        prop_assert_eq!(seq, before);
    }

    #[test]
    fn normalize_is_strictly_increasing(p in 0..255i64) {
        prop_assert!(normalize(p).unwrap() < normalize(p + 1).unwrap());
        prop_assert!((normalize(p + 1).unwrap() - normalize(p).unwrap() - 1.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn plane_frames_are_right_handed(t in any::<u8>(), f in any::<u8>(), g in any::<u8>(), o in any::<[u8; 3]>()) {
        let b = plane_basis(t, f, g, o).unwrap();
        let det = Matrix3::from_columns(&[b.x_axis, b.y_axis, b.n]).determinant();
        prop_assert!((det - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_matches_3d_construction(
        t in any::<u8>(), f in any::<u8>(), g in any::<u8>(), o in any::<[u8; 3]>(),
        x in any::<u8>(), y in any::<u8>(), s in 0.05..0.4f64,
    ) {
        let b = plane_basis(t, f, g, o).unwrap();
        let origin = Vector3::new(0.1, -0.2, 0.05);
        let center = PixelPoint::new(0.5, 0.5);
        let n = |q: u8| (f64::from(q) - 128.0) / 128.0;
        let pi = std::f64::consts::PI;
        // Z-Y-Z Euler rotation built from the raw angles.
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), pi * n(f))
            * Rotation3::from_axis_angle(&Vector3::y_axis(), pi * n(t))
            * Rotation3::from_axis_angle(&Vector3::z_axis(), pi * n(g));
        let world = r * Vector3::new(n(x) * s, n(y) * s, 0.0) + origin;
        let normal = r * Vector3::z();
        let mut axis = 0;
        for i in 1..3 {
            if normal[i].abs() > normal[axis].abs() {
                axis = i;
            }
        }
        prop_assume!((0..3).all(|i| i == axis || normal[axis].abs() - normal[i].abs() > 1e-9));
        let kept: Vec<usize> = (0..3).filter(|&i| i != axis).collect();
        let want = PixelPoint::new(0.5 * world[kept[0]] + 0.5, 0.5 * world[kept[1]] + 0.5);
        match project_point(x, y, &b, s, origin, center) {
            Ok(p) => prop_assert!((p.u - want.u).abs() < 1e-12 && (p.v - want.v).abs() < 1e-12),
            Err(_) => prop_assert!(!(0.0..=1.0).contains(&want.u) || !(0.0..=1.0).contains(&want.v)),
        }
    }

    #[test]
    fn arc_points_lie_on_circle(
        su in 0.0..1.0f64, sv in 0.0..1.0f64, eu in 0.0..1.0f64, ev in 0.0..1.0f64,
        q in 1..=255u8, flag in 0..2u8,
    ) {
        let (s, e) = (PixelPoint::new(su, sv), PixelPoint::new(eu, ev));
        prop_assume!(s.dist(e) > 1e-4);
        let a = arc_geometry(s, e, q, flag).unwrap();
        for p in [a.start, a.mid, a.end] {
            prop_assert!((p.dist(a.center) - a.radius).abs() <= 1e-9);
        }
        let end = a.point_at(1.0);
        prop_assert!(end.dist(a.end) < 1e-9);
    }

    #[test]
    fn decode_encode_within_half_bin(c in command()) {
        let v = encode_action(&c);
        let d = decode_action(&v).unwrap();
        match (c, d) {
            (Command::MoveTo { x, y }, Command::MoveTo { x: a, y: b }) => {
                prop_assert!((x - a).abs() <= 0.0005 + 1e-12 && (y - b).abs() <= 0.0005 + 1e-12);
            }
            (Command::Scroll { amount: x }, Command::Scroll { amount: a }) | (Command::Type { value: x }, Command::Type { value: a }) => {
                prop_assert!((x - a).abs() <= 0.001 + 1e-12);
            }
            _ => prop_assert_eq!(c, d),
        }
        prop_assert_eq!(encode_action(&d), v);
    }

    #[test]
    fn chamfer_is_symmetric_and_kd_exact(p in cloud(60), q in cloud(45)) {
        prop_assert_eq!(chamfer(&p, &q), chamfer(&q, &p));
        prop_assert!(chamfer(&p, &q) >= 0.0);
        prop_assert!((chamfer(&p, &q) - chamfer_brute(&p, &q)).abs() < 1e-12);
        prop_assert_eq!(chamfer(&p, &p), 0.0);
    }

    #[test]
    fn alignment_absorbs_family_transforms(
        p in cloud(200),
        perm in 0..6usize, signs in any::<[bool; 3]>(), scale in 0.1..10.0f64,
        shift in any::<[i8; 3]>(),
    ) {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let pm = PERMS[perm];
        let moved: Vec<[f64; 3]> = p
            .iter()
            .map(|x| [0, 1, 2].map(|i| scale * if signs[i] { -1.0 } else { 1.0 } * x[pm[i]] + f64::from(shift[i]) / 16.0))
            .collect();
        let (_, cd) = align_pca(&p, &moved).unwrap();
        prop_assert!(cd <= 1e-9, "cd {}", cd);
    }

    #[test]
    fn metric_bounds(cmds in prop::collection::vec(command(), 1..80), flips in prop::collection::vec(any::<bool>(), 80)) {
        let gt: Vec<ActionVector> = cmds.iter().map(encode_action).collect();
        let pred: Vec<ActionVector> = gt
            .iter()
            .zip(&flips)
            .map(|(g, &f)| if f { ActionVector([(g.0[0] + 1) % 5, -1, -1, -1, -1, -1, -1]) } else { *g })
            .collect();
        let mc = cmd_accuracy(&pred, &gt).unwrap();
        let mp = param_accuracy(&pred, &gt).unwrap();
        prop_assert!(mp <= 1.0 && mc <= 1.0);
        let perfect = perfect_sequence_stats(&[(pred.clone(), gt.clone())]).unwrap();
        prop_assert!(perfect.overall.mean <= 100.0 * mc + 1e-9);
        // Commands that survived are exact, so parameter accuracy equals command accuracy.
        prop_assert!((mp - mc).abs() < 1e-12);
    }
}

fn program_for(seed: u64) -> (CadSequence, cadact_core::ActionProgram) {
    let seq = sequence_for_seed(seed, &SynthConfig::default());
    let prog = compile(&lower_sequence(&seq).unwrap(), &CompileConfig { seed, ..CompileConfig::default() }).unwrap();
    (seq, prog)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compiled_programs_are_well_formed(seed in 0..10_000u64) {
        let (seq, prog) = program_for(seed);
        let (_, again) = program_for(seed);
        prop_assert_eq!(&prog, &again);
        prop_assert!(prog.actions.iter().all(|a| (0.2..=0.5).contains(&a.dt)));
        let mut moved = false;
        for a in &prog.actions {
            match a.cmd {
                Command::MoveTo { .. } => moved = true,
                Command::Click => {
                    prop_assert!(moved, "click without a preceding move");
                    moved = false;
                }
                _ => {}
            }
        }
        let steps: Vec<usize> = prog.hl_events.iter().map(|e| e.0).collect();
        prop_assert!(steps.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(prog.hl_events.iter().filter(|e| e.1 == HlTag::Extrude).count(), seq.records.len());
    }

    #[test]
    fn compiled_programs_run_cleanly(seed in 0..10_000u64) {
        let (seq, prog) = program_for(seed);
        let trace = run(&prog.quantized(), &SimConfig { render: false, ..SimConfig::default() });
        prop_assert_eq!(&trace.status, &Status::Completed);
        prop_assert_eq!(trace.failures(), 0);
        // Shift is released only for loop-closing line clicks.
        let released = trace
            .steps
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| matches!(e, SimEvent::PrimitiveCommitted { shift_held: false, .. }))
            .count();
        let closing_lines = lower_sequence(&seq)
            .unwrap()
            .iter()
            .flat_map(|r| r.sketch.loops.clone())
            .filter(|l| l.primitives.len() > 1 && matches!(l.primitives.last(), Some(PrimitiveGeom::Line { .. })))
            .count();
        prop_assert_eq!(released, closing_lines);
        // Replaying the feature list reproduces the document's solid.
        let doc = trace.final_doc();
        let replayed = DocState::replay(&doc.features).unwrap();
        let a = doc.solid.sample_points(512, 3).unwrap();
        let b = replayed.solid.sample_points(512, 3).unwrap();
        prop_assert_eq!(chamfer(&a.points, &b.points), 0.0);
    }

    #[test]
    fn hole_count_is_invariant_under_axis_permutation(perm in 0..6usize, signs in any::<[bool; 3]>(), holes in 0..3usize) {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut loops = vec![vec![[-0.45, -0.25], [0.45, -0.25], [0.45, 0.25], [-0.45, 0.25]]];
        for h in 0..holes {
            let cx = -0.25 + 0.25 * h as f64;
            loops.push((0..128).map(|i| {
                let a = std::f64::consts::TAU * f64::from(i) / 128.0;
                [cx + 0.08 * a.cos(), 0.08 * a.sin()]
            }).collect());
        }
        let plate = Solid::prism(Prism { axis: 2, lo: -0.08, hi: 0.08, region: Arc::new(PlanarRegion::from_loops(loops).unwrap()) });
        let s = signs.map(|b| if b { -1.0 } else { 1.0 });
        let moved = plate.transform_axes(PERMS[perm], s);
        prop_assert_eq!(count_through_holes(&plate).unwrap(), holes);
        prop_assert_eq!(count_through_holes(&moved).unwrap(), holes);
    }
}
