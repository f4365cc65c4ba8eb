use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cadact_core::action::{decode_action, ActionProgram, ActionVector, Command, KeyId};
use cadact_core::kernel::PointCloud;
use cadact_core::raster::GrayImage;
use cadact_core::dataset::{
    cmd_build, cmd_eval, cmd_stats, episode_dirs, load_verified_manifest, sha256_hex, BuildConfig, DatasetError,
    EpisodeStatus,
};
use cadact_core::synth::{corpus, SynthConfig};
use cadact_core::vqa::{audit_dir, cmd_vqa, load_questions, Family, VqaError};
use tempfile::TempDir;

const RES: usize = 48;

fn write_input(dir: &Path, corrupt_line: Option<usize>) -> std::path::PathBuf {
    let cfg = SynthConfig { centered: 0.3, ..SynthConfig::default() };
    let lines: Vec<String> = corpus(7, 10, &cfg)
        .iter()
        .enumerate()
        .map(|(i, s)| if Some(i + 1) == corrupt_line { format!("{}|5,1,2;garbage", s.source_id) } else { s.to_line() })
        .collect();
    let p = dir.join("input.cadseq");
    fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

fn config(input: &Path, out: &Path) -> BuildConfig {
    BuildConfig { seed: 7, resolution: RES, ..BuildConfig::new(input, out) }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn clean_input_builds_passing_episodes() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let out = tmp.path().join("ds");
    let s = cmd_build(&config(&input, &out)).unwrap();
    assert_eq!((s.sequences, s.completed, s.passed, s.failed), (10, 10, 10, 0));
    assert_eq!(s.success_rate, 100.0);
    let dirs = episode_dirs(&out).unwrap();
    assert_eq!(dirs.len(), 10);
    for d in &dirs {
        let m = load_verified_manifest(d).unwrap();
        assert_eq!(m.frame_count, m.action_count);
        for f in ["actions.jsonl", "target.pgm", "cloud.xyz", "manifest.json", "frames/000000.pgm"] {
            assert!(d.join(f).is_file(), "{} missing {f}", d.display());
        }
    }
}

#[test]
fn corrupt_line_fails_only_its_episode() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), Some(3));
    let out = tmp.path().join("ds");
    let s = cmd_build(&config(&input, &out)).unwrap();
    assert_eq!((s.sequences, s.passed, s.failed), (10, 9, 1));
    let failed: Vec<_> = episode_dirs(&out)
        .unwrap()
        .iter()
        .map(|d| load_verified_manifest(d).unwrap())
        .filter(|m| matches!(m.status, EpisodeStatus::Failed { .. }))
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].line_no, 3);
    assert!(failed[0].files.is_empty());
}

#[test]
fn builds_are_reproducible_across_runs_and_workers() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    cmd_build(&config(&input, &a)).unwrap();
    cmd_build(&config(&input, &b)).unwrap();
    cmd_build(&BuildConfig { workers: 2, ..config(&input, &c) }).unwrap();
    let ta = tree(&a);
    assert!(ta.len() > 10 * 5);
    assert_eq!(ta, tree(&b));
    assert_eq!(ta, tree(&c));
}

#[test]
fn resume_restores_missing_and_damaged_episodes() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let out = tmp.path().join("ds");
    let cfg = config(&input, &out);
    cmd_build(&cfg).unwrap();
    let before = tree(&out);
    let dirs = episode_dirs(&out).unwrap();

    // A crash mid-write leaves a scratch directory and no episode.
    let lost = dirs[0].file_name().unwrap().to_string_lossy().into_owned();
    fs::remove_dir_all(&dirs[0]).unwrap();
    fs::create_dir_all(out.join(format!(".{lost}.partial/frames"))).unwrap();
    fs::write(out.join(format!(".{lost}.partial/actions.jsonl")), "truncated").unwrap();
    // A damaged file fails its checksum.
    fs::write(dirs[1].join("target.pgm"), b"P5 1 1 255\n\0").unwrap();

    let s = cmd_build(&cfg).unwrap();
    assert_eq!(s.passed, 10);
    assert_eq!(tree(&out), before);
}

#[test]
fn resume_skips_finished_episodes() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let out = tmp.path().join("ds");
    let cfg = config(&input, &out);
    cmd_build(&cfg).unwrap();
    let dir = &episode_dirs(&out).unwrap()[0];
    let stamp = fs::metadata(dir.join("manifest.json")).unwrap().modified().unwrap();
    cmd_build(&cfg).unwrap();
    assert_eq!(fs::metadata(dir.join("manifest.json")).unwrap().modified().unwrap(), stamp);
}

#[test]
fn config_errors_are_reported() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let cfg = BuildConfig { workers: 0, ..config(&input, &tmp.path().join("x")) };
    assert!(matches!(cmd_build(&cfg), Err(DatasetError::Config(_))));
    let missing = config(&tmp.path().join("nope.cadseq"), &tmp.path().join("y"));
    assert!(matches!(cmd_build(&missing), Err(DatasetError::Io { .. })));
}

fn programs(root: &Path) -> Vec<ActionProgram> {
    episode_dirs(root)
        .unwrap()
        .iter()
        .filter_map(|d| fs::read_to_string(d.join("actions.jsonl")).ok())
        .map(|t| ActionProgram::from_jsonl(&t).unwrap())
        .collect()
}

#[test]
fn stats_match_direct_tallies() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), Some(3));
    let out = tmp.path().join("ds");
    cmd_build(&config(&input, &out)).unwrap();
    let stats = cmd_stats(&out).unwrap();
    let progs = programs(&out);
    let all: Vec<&Command> = progs.iter().flat_map(|p| p.actions.iter().map(|a| &a.cmd)).collect();
    let tabs = all.iter().filter(|c| matches!(c, Command::PressKey { key: KeyId::Tab, .. })).count();
    assert_eq!(stats.tab_counts.values().sum::<usize>(), tabs);
    assert_eq!(stats.keys.get("tab").copied().unwrap_or(0), tabs);
    assert_eq!(stats.commands.values().sum::<usize>(), all.len());
    assert_eq!(stats.sequence_lengths.values().sum::<usize>(), 9);
    let scrolls = all.iter().filter(|c| matches!(c, Command::Scroll { .. })).count();
    assert_eq!(stats.scroll.values().sum::<usize>(), scrolls);
    if scrolls > 0 {
        assert!((stats.scroll_fractions().values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let moves = all.iter().filter(|c| matches!(c, Command::MoveTo { .. })).count();
    assert_eq!(stats.move_x.values().sum::<usize>(), moves);

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(matches!(cmd_stats(&empty), Err(DatasetError::EmptyDataset(_))));
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in tree(from) {
        let p = to.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
}

#[test]
fn eval_scores_ground_truth_and_a_single_edit() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let gt = tmp.path().join("gt");
    cmd_build(&BuildConfig { frames: false, ..config(&input, &gt) }).unwrap();

    let r = cmd_eval(&gt, &gt).unwrap();
    assert_eq!((r.episodes, r.mu_cmd, r.mu_param), (10, 1.0, 1.0));
    assert_eq!((r.success_rate, r.perfect.step_weighted), (100.0, 100.0));

    let pred = tmp.path().join("pred");
    copy_tree(&gt, &pred);
    let dir = &episode_dirs(&pred).unwrap()[4];
    let mut prog = ActionProgram::from_jsonl(&fs::read_to_string(dir.join("actions.jsonl")).unwrap()).unwrap();
    let k = prog.actions.iter().position(|a| matches!(a.cmd, Command::MoveTo { .. })).unwrap();
    prog.actions[k].cmd = Command::key(KeyId::Escape);
    let text = prog.to_jsonl();
    fs::write(dir.join("actions.jsonl"), &text).unwrap();
    let mpath = dir.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();
    for f in m["files"].as_array_mut().unwrap() {
        if f["path"] == "actions.jsonl" {
            f["sha256"] = sha256_hex(text.as_bytes()).into();
        }
    }
    fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();

    let total: usize = programs(&gt).iter().map(|p| p.actions.len()).sum();
    let r = cmd_eval(&pred, &gt).unwrap();
    assert!((r.mu_cmd - (total - 1) as f64 / total as f64).abs() < 1e-12);
    assert!((r.mu_param - r.mu_cmd).abs() < 1e-12);
    assert!((r.perfect.overall.mean - 90.0 - 10.0 * (prog.actions.len() - 1) as f64 / prog.actions.len() as f64).abs() < 1e-9);

    fs::remove_dir_all(&episode_dirs(&pred).unwrap()[0]).unwrap();
    assert!(matches!(cmd_eval(&pred, &gt), Err(DatasetError::IdMismatch(_))));
}

#[test]
fn vqa_over_a_built_dataset_audits_clean() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let ds = tmp.path().join("ds");
    cmd_build(&config(&input, &ds)).unwrap();
    let families: Vec<Family> = Family::ALL.into_iter().filter(|f| *f != Family::ExtrusionShape).collect();
    let (qa, qb) = (tmp.path().join("qa"), tmp.path().join("qb"));
    let sa = cmd_vqa(&ds, 5, 11, &qa, &families).unwrap();
    cmd_vqa(&ds, 5, 11, &qb, &families).unwrap();
    assert_eq!(tree(&qa), tree(&qb));
    assert_eq!(sa.episodes, 10);

    let qs = load_questions(&qa).unwrap();
    assert_eq!(qs.len(), 5 * sa.generated.len());
    for (family, (passed, total)) in audit_dir(&qa, &ds).unwrap() {
        assert_eq!(passed, total, "{family}");
    }
    for q in &qs {
        for a in &q.assets {
            assert!(qa.join(a).is_file(), "missing asset {a}");
        }
    }

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(matches!(cmd_vqa(&empty, 5, 1, &tmp.path().join("qe"), &families), Err(VqaError::NoEpisodes(_))));
}

// The files a downstream loader reads: exactly the manifest's entries, one
// schema-valid vector and one keyframe per action.
#[test]
fn episode_layout_matches_the_loader_contract() {
    let tmp = TempDir::new().unwrap();
    let input = write_input(tmp.path(), None);
    let out = tmp.path().join("ds");
    cmd_build(&config(&input, &out)).unwrap();
    let dirs = episode_dirs(&out).unwrap();
    let ids: Vec<String> = dirs.iter().map(|d| d.file_name().unwrap().to_string_lossy().into_owned()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    for d in &dirs {
        let m = load_verified_manifest(d).unwrap();
        let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
        listed.push("manifest.json".into());
        listed.sort();
        let on_disk: Vec<String> = tree(d).into_keys().collect();
        assert_eq!(listed, on_disk);

        let text = fs::read_to_string(d.join("actions.jsonl")).unwrap();
        let mut tags = 0;
        for (i, line) in text.lines().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["i"], i);
            let a: Vec<i32> = serde_json::from_value(v["a"].clone()).unwrap();
            let vec = ActionVector(a.try_into().unwrap());
            decode_action(&vec).unwrap();
            tags += v.get("hl").map_or(0, |h| h.as_str().unwrap().split('+').count());
        }
        assert_eq!(text.lines().count(), m.action_count);
        assert_eq!(tags, m.hl_event_count);
        assert_eq!(ActionProgram::from_jsonl(&text).unwrap().to_jsonl(), text);

        for i in 0..m.action_count {
            let img = GrayImage::from_pgm(&fs::read(d.join(format!("frames/{i:06}.pgm"))).unwrap()).unwrap();
            assert_eq!((img.width, img.height), (RES, RES));
        }
        let target = GrayImage::from_pgm(&fs::read(d.join("target.pgm")).unwrap()).unwrap();
        assert_eq!((target.width, target.height), (RES, RES));
        assert!(!PointCloud::from_xyz(&fs::read_to_string(d.join("cloud.xyz")).unwrap()).unwrap().points.is_empty());
    }

    let d = &dirs[2];
    let mut text = fs::read_to_string(d.join("actions.jsonl")).unwrap();
    text = text.replacen("\"a\":[4,-1,-1,-1,-1,-1,-1]", "\"a\":[4,0,-1,-1,-1,-1,-1]", 1);
    assert!(ActionProgram::from_jsonl(&text).is_err());
    fs::write(d.join("actions.jsonl"), text).unwrap();
    match load_verified_manifest(d) {
        Err(DatasetError::CorruptEpisode { reason, .. }) => assert!(reason.contains("actions.jsonl"), "{reason}"),
        other => panic!("expected a corrupt episode, got {other:?}"),
    }
}
