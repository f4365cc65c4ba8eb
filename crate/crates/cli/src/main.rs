use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cadact_core::dataset::{cmd_build, cmd_eval, cmd_stats, BuildConfig};
use cadact_core::sequence::{parse_file, sequence_stats, validate};
use cadact_core::synth::{corpus, SynthConfig};
use cadact_core::vqa::{audit_dir, cmd_vqa, grade, load_questions, Family};
use cadact_core::{compile_sequence, CompileConfig, SUCCESS_CD};
use clap::{Args, Parser, Subcommand};

/// CAD sequence to UI action toolchain.
#[derive(Parser)]
#[command(name = "cadact", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic .cadseq corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, env = "CADACT_SEED", default_value_t = 0)]
        seed: u64,
        /// Probability of origin-centered, mirror-symmetric parts.
        #[arg(long, default_value_t = 0.0)]
        centered: f64,
    },
    /// Parse and validate every line of a .cadseq file.
    Validate {
        input: PathBuf,
        /// Also print corpus statistics as CSV to this path.
        #[arg(long)]
        stats_csv: Option<PathBuf>,
    },
    /// Compile one sequence line to an action trace on stdout.
    Compile {
        input: PathBuf,
        /// 0-based index among the file's sequence lines.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, env = "CADACT_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Build (or resume) an episode dataset.
    Build(BuildArgs),
    /// Action statistics over a built dataset.
    Stats {
        dataset: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score predicted action traces against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Visual question answering benchmark.
    #[command(subcommand)]
    Vqa(VqaCmd),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "CADACT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 224)]
    resolution: usize,
    #[arg(long, default_value_t = SUCCESS_CD)]
    threshold: f64,
    /// Fixed delays and keyboard-only dialog navigation.
    #[arg(long)]
    scripted: bool,
    #[arg(long)]
    no_zoom: bool,
    #[arg(long)]
    no_visibility: bool,
    /// Skip per-action keyframes.
    #[arg(long)]
    no_frames: bool,
}

#[derive(Subcommand)]
enum VqaCmd {
    /// Generate questions from a built dataset.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, env = "CADACT_SEED", default_value_t = 0)]
        seed: u64,
        /// Comma-separated family names; all families by default.
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
    },
    /// Re-derive every answer from fresh simulations.
    Audit {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Per-family accuracy of a response file (a JSON array of option
    /// indices or nulls, in question order).
    Grade {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long, env = "CADACT_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn generate(out: &Path, count: usize, seed: u64, centered: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&centered) {
        bail!("--centered must lie in [0, 1]");
    }
    let cfg = SynthConfig { centered, ..SynthConfig::default() };
    let mut w = create(out)?;
    for s in corpus(seed, count, &cfg) {
        writeln!(w, "{}", s.to_line())?;
    }
    w.flush()?;
    Ok(())
}

fn validate_file(input: &Path, stats_csv: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let lines = parse_file(&text);
    let mut ok = Vec::new();
    for l in &lines {
        match &l.parsed {
            Err(e) => println!("{}\t{}\tparse error: {e}", l.line_no, l.source_id()),
            Ok(seq) => {
                let report = validate(seq);
                println!("{}\t{}\t{report}", l.line_no, l.source_id());
                if report.is_valid() {
                    ok.push(seq.clone());
                }
            }
        }
    }
    eprintln!("{} of {} sequences valid", ok.len(), lines.len());
    if let Some(p) = stats_csv {
        sequence_stats(&ok)?.write_csv(create(p)?)?;
    }
    Ok(())
}

fn compile_one(input: &Path, index: usize, seed: u64) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let lines = parse_file(&text);
    let line = lines.get(index).with_context(|| format!("{} has only {} sequences", input.display(), lines.len()))?;
    let seq = line.parsed.as_ref().map_err(|e| anyhow::anyhow!("line {}: {e}", line.line_no))?;
    let prog = compile_sequence(seq, &CompileConfig { seed, ..CompileConfig::default() })?;
    print!("{}", prog.quantized().to_jsonl());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = BuildConfig {
        seed: a.seed,
        workers: a.workers,
        resolution: a.resolution,
        threshold: a.threshold,
        human_like: !a.scripted,
        zoom: !a.no_zoom,
        manage_visibility: !a.no_visibility,
        frames: !a.no_frames,
        ..BuildConfig::new(a.input, a.out)
    };
    let s = cmd_build(&cfg)?;
    eprintln!(
        "{} sequences: {} completed, {} terminated, {} failed, {} passed ({:.1}%)",
        s.sequences, s.completed, s.terminated, s.failed, s.passed, s.success_rate
    );
    Ok(())
}

fn families(names: &[String]) -> Result<Vec<Family>> {
    if names.is_empty() {
        return Ok(Family::ALL.to_vec());
    }
    Ok(names.iter().map(|n| Family::parse(n)).collect::<Result<_, _>>()?)
}

fn vqa(cmd: VqaCmd) -> Result<ExitCode> {
    match cmd {
        VqaCmd::Generate { dataset, out, n, seed, families: names } => {
            let s = cmd_vqa(&dataset, n, seed, &out, &families(&names)?)?;
            for (f, count) in &s.generated {
                eprintln!("{f}: {count}");
            }
            for (f, why) in &s.unavailable {
                eprintln!("{f}: unavailable ({why})");
            }
        }
        VqaCmd::Audit { questions, dataset } => {
            let mut clean = true;
            for (f, (passed, total)) in audit_dir(&questions, &dataset)? {
                println!("{f}\t{passed}/{total}");
                clean &= passed == total;
            }
            if !clean {
                return Ok(ExitCode::FAILURE);
            }
        }
        VqaCmd::Grade { questions, responses, seed } => {
            let qs = load_questions(&questions)?;
            let rs: Vec<Option<usize>> = match responses {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => Vec::new(),
            };
            if rs.len() > qs.len() {
                bail!("{} responses for {} questions", rs.len(), qs.len());
            }
            println!("{}", serde_json::to_string_pretty(&grade(&qs, &rs, seed))?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Generate { out, count, seed, centered } => generate(&out, count, seed, centered)?,
        Cmd::Validate { input, stats_csv } => validate_file(&input, stats_csv.as_deref())?,
        Cmd::Compile { input, index, seed } => compile_one(&input, index, seed)?,
        Cmd::Build(a) => build(a)?,
        Cmd::Stats { dataset, json, csv } => {
            let s = cmd_stats(&dataset)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            if let Some(p) = json {
                write_json(&p, &s)?;
            }
            if let Some(p) = csv {
                s.write_csv(create(&p)?)?;
            }
        }
        Cmd::Eval { pred, gt, json, csv } => {
            let r = cmd_eval(&pred, &gt)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if let Some(p) = json {
                write_json(&p, &r)?;
            }
            if let Some(p) = csv {
                r.write_csv(create(&p)?)?;
            }
        }
        Cmd::Vqa(v) => return vqa(v),
    }
    Ok(ExitCode::SUCCESS)
}
