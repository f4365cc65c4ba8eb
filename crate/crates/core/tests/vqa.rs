use std::sync::OnceLock;

use cadact_core::compiler::CompileConfig;
use cadact_core::kernel::{symmetry_planes, SYMMETRY_TOL};
use cadact_core::synth::{corpus, SynthConfig};
use cadact_core::vqa::{generate_family, grade, Family, Question, VqaEpisode, VqaError};

fn episodes(seed: u64, centered: f64) -> Vec<VqaEpisode> {
    let cfg = SynthConfig { centered, ..SynthConfig::default() };
    corpus(seed, 16, &cfg)
        .iter()
        .filter_map(|s| VqaEpisode::from_sequence(&s.source_id, s, &CompileConfig::default(), 64).ok())
        .collect()
}

fn pool() -> &'static [VqaEpisode] {
    static POOL: OnceLock<Vec<VqaEpisode>> = OnceLock::new();
    POOL.get_or_init(|| episodes(21, 0.4))
}

// Upper 0.1% quantiles of the chi-square distribution, indexed by degrees of freedom.
fn chi2_critical(df: usize) -> f64 {
    match df {
        1 => 10.828,
        2 => 13.816,
        3 => 16.266,
        5 => 20.515,
        7 => 24.322,
        _ => unreachable!("no family has {df} degrees of freedom"),
    }
}

fn chi2(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn answer_positions_are_uniform() {
    // Extrusion-shape questions render four solids each, so they get a
    // smaller sample and the same statistic.
    for family in Family::ALL {
        let n = if family == Family::ExtrusionShape { 240 } else { 1200 };
        let qs = generate_family(family, pool(), n, 99).unwrap();
        let k = family.choice_count();
        let mut counts = vec![0usize; k];
        for g in &qs {
            counts[g.question.answer_index] += 1;
        }
        let stat = chi2(&counts);
        assert!(stat < chi2_critical(k - 1), "{family}: chi2 {stat:.2} over {counts:?}");
    }
}

fn sample_questions() -> Vec<Question> {
    [Family::ExtrusionCount, Family::HoleDetection, Family::SymmetryDetection, Family::FrameSequencing]
        .into_iter()
        .flat_map(|f| generate_family(f, pool(), 40, 5).unwrap())
        .map(|g| g.question)
        .collect()
}

#[test]
fn grading_is_exact_on_known_responses() {
    let qs = sample_questions();
    let right: Vec<Option<usize>> = qs.iter().map(|q| Some(q.answer_index)).collect();
    let wrong: Vec<Option<usize>> = qs.iter().map(|q| Some((q.answer_index + 1) % q.choices.len())).collect();
    for g in grade(&qs, &right, 0) {
        assert_eq!((g.correct, g.questions, g.accuracy), (40, 40, 1.0), "{}", g.family);
    }
    for g in grade(&qs, &wrong, 0) {
        assert_eq!((g.correct, g.accuracy), (0, 0.0), "{}", g.family);
    }
}

#[test]
fn grading_chance_matches_option_count() {
    let qs = sample_questions();
    for g in grade(&qs, &[], 3) {
        assert!((g.chance - 1.0 / g.family.choice_count() as f64).abs() < 1e-12);
    }
}

#[test]
fn generation_is_reproducible() {
    for family in [Family::SketchOrdering, Family::PlaneIdentification, Family::ExtrusionDifference] {
        let a = generate_family(family, pool(), 20, 8).unwrap();
        let b = generate_family(family, pool(), 20, 8).unwrap();
        let qa: Vec<&Question> = a.iter().map(|g| &g.question).collect();
        let qb: Vec<&Question> = b.iter().map(|g| &g.question).collect();
        assert_eq!(qa, qb);
        assert!(a.iter().zip(&b).all(|(x, y)| x.images == y.images));
    }
}

#[test]
fn symmetry_needs_a_symmetric_part() {
    let asym: Vec<VqaEpisode> = episodes(3, 0.0)
        .into_iter()
        .filter(|e| symmetry_planes(&e.oracle, SYMMETRY_TOL).unwrap() == [false; 3])
        .collect();
    assert!(asym.len() >= 2, "{} asymmetric episodes", asym.len());
    match generate_family(Family::SymmetryDetection, &asym, 4, 1) {
        Err(VqaError::InsufficientEpisodes(Family::SymmetryDetection)) => {}
        other => panic!("expected no symmetric episodes, got {:?}", other.map(|g| g.len())),
    }
}
