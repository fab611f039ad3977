//! Command-line front end: dataset preparation, training, evaluation,
//! cross-validation, the named experiment grid, corpus synthesis, and the
//! gradient checker.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 data/parse/io, 3 numeric.
//! `IRN_DATA_ROOT` and `IRN_OUT_ROOT` re-root *relative* data and output
//! paths; no other environment variables are consulted.

pub mod ablation;
pub mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckConfig, Tape};
use crate::error::{Error, Result};
use crate::model::{IrnModel, ModelConfig, Variant};
use crate::skeleton::canonical::{load_canonical_dir, write_canonical, Manifest};
use crate::skeleton::ntu::load_ntu;
use crate::skeleton::pose_stream::{assign_bodies, load_pose_stream};
use crate::skeleton::sbu::load_sbu;
use crate::skeleton::synthetic::{synth_corpus, Archetype};
use crate::skeleton::{InteractionSample, JointObject, LoadReport, PersonJointSet};
use crate::train::init_params;

pub use config::{FileSettings, Settings, SettingsFlags};

pub const ENV_DATA_ROOT: &str = "IRN_DATA_ROOT";
pub const ENV_OUT_ROOT: &str = "IRN_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "irn",
    version,
    about = "Relational-network recognition of two-person skeleton interactions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a source dataset into the canonical record directory.
    Prepare(PrepareArgs),
    /// Train one model on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a prepared dataset.
    Eval(EvalArgs),
    /// Train and evaluate across cross-validation folds.
    Crossval(CrossvalArgs),
    /// Run rows of the standard experiment grid and tabulate accuracies.
    Ablation(AblationArgs),
    /// Generate a synthetic labelled corpus in canonical form.
    Synth(SynthArgs),
    /// Finite-difference checks of every operation and model variant.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Source format: sbu | pose-stream | ntu | synthetic.
    #[arg(long)]
    pub format: String,
    /// Source directory (or file for single-sequence formats). Unused for
    /// the synthetic format.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory for canonical records (must not already hold data).
    #[arg(long)]
    pub out: PathBuf,
    /// Frame rate stamped onto pose-stream sequences.
    #[arg(long, default_value_t = 15.0)]
    pub fps: f64,
    /// Sequence count for the synthetic format.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Coordinate jitter scale for the synthetic format.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Generator seed for the synthetic format.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Canonical data directory (from `prepare` or `synth`).
    #[arg(long)]
    pub data: PathBuf,
    /// Run output directory (checkpoints, history, resolved config).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: SettingsFlags,
    /// Overwrite an output directory holding a different configuration.
    #[arg(long)]
    pub force: bool,
    /// Continue from this run's last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// For fused variants: run the full pretrain-then-fuse procedure.
    #[arg(long)]
    pub pretrain: bool,
    /// For fused variants: seed the between-person stream from this
    /// checkpoint instead of pretraining.
    #[arg(long)]
    pub inter_ckpt: Option<PathBuf>,
    /// For fused variants: seed the within-person stream from this
    /// checkpoint instead of pretraining.
    #[arg(long)]
    pub intra_ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Canonical data directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the report bundle; omitted → print only.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame step within the central window.
    #[arg(long, default_value_t = 1)]
    pub dilation: usize,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: SettingsFlags,
    /// Overwrite an output directory holding a different configuration.
    #[arg(long)]
    pub force: bool,
    /// For fused variants: pretrain the streams within every fold.
    #[arg(long)]
    pub pretrain: bool,
    /// JSON file listing explicit test groups per fold (an array of arrays
    /// of group keys) instead of the seeded protocol.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub settings: SettingsFlags,
    /// Comma-separated row slugs to run (default: every row). See
    /// `ablation::ROWS` for the slug ↔ label table.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    /// Overwrite an output directory holding a different configuration.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for canonical records (must not already hold data).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the probed parameter values.
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    /// Cap on probed coordinates per parameter tensor.
    #[arg(long, default_value_t = 6)]
    pub max_coords: usize,
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(&args),
        Command::Synth(args) => cmd_prepare(&PrepareArgs {
            format: "synthetic".into(),
            input: None,
            out: args.out,
            fps: 15.0,
            count: args.count,
            noise: args.noise,
            seed: args.seed,
        }),
        Command::Train(args) => run::cmd_train(&args),
        Command::Eval(args) => run::cmd_eval(&args),
        Command::Crossval(args) => run::cmd_crossval(&args),
        Command::Ablation(args) => ablation::cmd_ablation(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    }
}

/// Parses argv (for the thin binary) and runs.
pub fn main_from_args<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Usage(e.to_string())),
    };
    run(cli)
}

fn rooted(path: &Path, env: &str) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(env) {
        Some(root) if !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Resolves a data path against `IRN_DATA_ROOT` (relative paths only).
pub fn data_path(path: &Path) -> PathBuf {
    rooted(path, ENV_DATA_ROOT)
}

/// Resolves an output path against `IRN_OUT_ROOT` (relative paths only).
pub fn out_path(path: &Path) -> PathBuf {
    rooted(path, ENV_OUT_ROOT)
}

/// Loads a canonical dataset directory after env-based re-rooting.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<crate::skeleton::SkeletonSequence>)> {
    load_canonical_dir(&data_path(dir))
}

/// Class display names when the dataset defines them.
pub fn class_names(manifest: &Manifest) -> Option<Vec<String>> {
    if manifest.dataset == "synthetic" && manifest.classes == Archetype::ALL.len() {
        Some(
            Archetype::ALL
                .iter()
                .map(|a| a.name().to_string())
                .collect(),
        )
    } else {
        None
    }
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let out = out_path(&args.out);
    let existed = out.exists();
    if existed && fs::read_dir(&out).map_err(|e| Error::io(&out, e))?.next().is_some() {
        return Err(Error::Config(format!(
            "output directory {} is not empty; choose a fresh location",
            out.display()
        )));
    }
    let result = prepare_into(args, &out);
    if result.is_err() && !existed && out.exists() {
        // Never leave a partially written dataset behind.
        let _ = fs::remove_dir_all(&out);
    }
    result
}

fn prepare_into(args: &PrepareArgs, out: &Path) -> Result<()> {
    let input = || -> Result<PathBuf> {
        args.input
            .as_deref()
            .map(data_path)
            .ok_or_else(|| {
                Error::Config(format!("--input is required for format {}", args.format))
            })
    };
    let (report, dataset) = match args.format.as_str() {
        "sbu" => (load_sbu(&input()?)?, "sbu"),
        "ntu" => (load_ntu(&input()?)?, "ntu"),
        "pose-stream" => (load_pose_tree(&input()?, args.fps)?, "pose-stream"),
        "synthetic" => (
            LoadReport {
                sequences: synth_corpus(args.count, args.noise, args.seed),
                warnings: Vec::new(),
            },
            "synthetic",
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown format {other:?}; expected sbu, pose-stream, ntu or synthetic"
            )))
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = write_canonical(out, &report.sequences, dataset)?;
    println!(
        "wrote {} records ({} classes) to {}",
        manifest.records.len(),
        manifest.classes,
        out.display()
    );
    Ok(())
}

/// Loads a directory of per-sequence pose-stream subdirectories. Each
/// subdirectory holds one clip's frame files; a trailing `_L<number>` in
/// its name supplies the class label.
fn load_pose_tree(root: &Path, fps: f64) -> Result<LoadReport> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no sequence subdirectories",
            root.display()
        )));
    }
    let mut report = LoadReport::default();
    for dir in dirs {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("unreadable directory name under {}", root.display())))?
            .to_string();
        let label = match name.rsplit_once("_L") {
            Some((_, digits)) => match digits.parse::<usize>() {
                Ok(l) => Some(l),
                Err(_) => None,
            },
            None => None,
        };
        if label.is_none() {
            report.warnings.push(format!(
                "sequence {name} has no `_L<number>` label suffix; stored unlabelled"
            ));
        }
        let candidates = load_pose_stream(&dir, fps)?;
        report.sequences.push(assign_bodies(&candidates, &name, label)?);
    }
    Ok(report)
}

/// One named gradient check and its outcome.
struct CheckOutcome {
    name: String,
    passed: bool,
    max_rel_err: f64,
    detail: String,
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut outcomes = Vec::new();
    op_checks(args.seed, &mut outcomes)?;
    variant_checks(args.seed, args.max_coords, &mut outcomes)?;

    let mut failures = 0;
    for o in &outcomes {
        if o.passed {
            println!("PASS  {:<42} max rel err {:.3e}", o.name, o.max_rel_err);
        } else {
            failures += 1;
            println!("FAIL  {:<42} {}", o.name, o.detail);
        }
    }
    println!("{} checks, {} failed", outcomes.len(), failures);
    if failures > 0 {
        return Err(Error::Numeric(format!(
            "{failures} gradient checks failed"
        )));
    }
    Ok(())
}

fn op_checks(seed: u64, outcomes: &mut Vec<CheckOutcome>) -> Result<()> {
    use crate::autodiff::{ParamKind, ParamStore, Tensor};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filled = |shape: Vec<usize>| -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        Tensor::new(shape, data).expect("static shape")
    };

    // Each op gets its own small parameter store; the loss is the sum of
    // the op's output so every coordinate receives gradient.
    type Build = Box<dyn FnMut(&mut Tape) -> Result<crate::autodiff::Val>>;
    let mut checks: Vec<(String, ParamStore, Build)> = Vec::new();

    let mut with_params =
        |name: &str,
         shapes: &[(&str, ParamKind, Vec<usize>)],
         build: Build,
         checks: &mut Vec<(String, ParamStore, Build)>| {
            let mut store = ParamStore::new();
            for (pname, kind, shape) in shapes {
                store.register(*pname, *kind, filled(shape.clone()));
            }
            checks.push((name.to_string(), store, build));
        };

    let p = |tape: &mut Tape, name: &str| -> Result<crate::autodiff::Val> {
        let id = tape
            .store()
            .by_name(name)
            .ok_or_else(|| Error::Config(format!("missing probe parameter {name}")))?;
        tape.param(id)
    };

    with_params(
        "op linear",
        &[
            ("x", ParamKind::Weight, vec![3, 4]),
            ("w", ParamKind::Weight, vec![4, 2]),
            ("b", ParamKind::Bias, vec![1, 2]),
        ],
        Box::new(move |tape| {
            let x = p(tape, "x")?;
            let w = p(tape, "w")?;
            let b = p(tape, "b")?;
            let y = tape.linear(x, w, b)?;
            Ok(tape.sum(y))
        }),
        &mut checks,
    );
    with_params(
        "op matmul",
        &[
            ("a", ParamKind::Weight, vec![2, 3]),
            ("b", ParamKind::Weight, vec![3, 4]),
        ],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let b = p(tape, "b")?;
            let y = tape.matmul(a, b)?;
            Ok(tape.sum(y))
        }),
        &mut checks,
    );
    with_params(
        "op add/mul/scale",
        &[
            ("a", ParamKind::Weight, vec![2, 3]),
            ("b", ParamKind::Weight, vec![2, 3]),
        ],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let b = p(tape, "b")?;
            let s = tape.add(a, b)?;
            let m = tape.mul(s, a)?;
            let sc = tape.scale(m, -1.7);
            Ok(tape.sum(sc))
        }),
        &mut checks,
    );
    with_params(
        "op relu",
        &[("a", ParamKind::Weight, vec![2, 5])],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let y = tape.relu(a);
            Ok(tape.sum(y))
        }),
        &mut checks,
    );
    with_params(
        "op sigmoid/tanh",
        &[("a", ParamKind::Weight, vec![2, 4])],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let s = tape.sigmoid(a);
            let t = tape.tanh(s);
            Ok(tape.sum(t))
        }),
        &mut checks,
    );
    with_params(
        "op concat/slice",
        &[
            ("a", ParamKind::Weight, vec![2, 3]),
            ("b", ParamKind::Weight, vec![2, 2]),
        ],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let b = p(tape, "b")?;
            let c = tape.concat_cols(&[a, b])?;
            let s = tape.slice_cols(c, 1, 3)?;
            Ok(tape.sum(s))
        }),
        &mut checks,
    );
    with_params(
        "op mean_rows",
        &[("a", ParamKind::Weight, vec![4, 3])],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            let m = tape.mean_rows(a);
            Ok(tape.sum(m))
        }),
        &mut checks,
    );
    let mask_seed = seed ^ 0xd50;
    with_params(
        "op dropout (fixed mask)",
        &[("a", ParamKind::Weight, vec![2, 6])],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            // Reseeding per evaluation fixes the mask, making the op a
            // deterministic linear map the checker can difference.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let y = tape.dropout(a, 0.25, &mut mask_rng)?;
            Ok(tape.sum(y))
        }),
        &mut checks,
    );
    with_params(
        "op softmax cross-entropy",
        &[("a", ParamKind::Weight, vec![1, 5])],
        Box::new(move |tape| {
            let a = p(tape, "a")?;
            tape.softmax_cross_entropy(a, &[2])
        }),
        &mut checks,
    );
    {
        use crate::autodiff::LstmParams;
        let mut store = ParamStore::new();
        let lstm = LstmParams::register(&mut store, "lstm", 3, 4);
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x15f);
        init_params(&mut store, 0.4, &mut init_rng);
        let steps: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f64) * 0.17 - 0.6).collect())
            .collect();
        checks.push((
            "op lstm".to_string(),
            store,
            Box::new(move |tape| {
                let inputs: Vec<_> = steps
                    .iter()
                    .map(|s| tape.constant_row(s.clone()))
                    .collect();
                let h = lstm.forward(tape, &inputs)?;
                Ok(tape.sum(h))
            }),
        ));
    }

    for (name, mut store, mut build) in checks {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = grad_check(&mut store, &cfg, &mut build)?;
        outcomes.push(CheckOutcome {
            name,
            passed: report.passed(),
            max_rel_err: report.max_rel_err,
            detail: format!("{:?}", report.failures.first()),
        });
    }
    Ok(())
}

/// A random two-person micro-input compatible with a model configuration.
pub fn random_micro_sample(cfg: &ModelConfig, rng: &mut impl Rng, windows: usize) -> InteractionSample {
    let set = |offset: f64, rng: &mut dyn rand::RngCore| -> PersonJointSet {
        let joints = (0..cfg.n_joints)
            .map(|j| JointObject {
                coords: (0..cfg.t * cfg.d)
                    .map(|_| rng.gen_range(-1.0..1.0) + offset)
                    .collect(),
                joint_id: j,
                body_part_id: j % crate::skeleton::BODY_PART_COUNT,
            })
            .collect();
        PersonJointSet {
            joints,
            t: cfg.t,
            d: cfg.d,
        }
    };
    let p1 = set(0.0, rng);
    let p2 = set(0.5, rng);
    let windows = (0..windows)
        .map(|_| (set(0.1, rng), set(0.6, rng)))
        .collect();
    InteractionSample {
        p1,
        p2,
        windows,
        label: 1,
        source: "micro".into(),
    }
}

fn variant_checks(
    seed: u64,
    max_coords: usize,
    outcomes: &mut Vec<CheckOutcome>,
) -> Result<()> {
    for &variant in Variant::ALL.iter() {
        for &use_h in &[false, true] {
            for &lstm in &[false, true] {
                let mut cfg = ModelConfig::new(variant, 3, 4, 3, 2);
                cfg.g_widths = vec![6, 4];
                cfg.f_widths = vec![5, 4];
                cfg.lstm_hidden = 4;
                cfg.dropout = 0.0;
                cfg.use_h = use_h;
                cfg.lstm = lstm;
                cfg.fuse_at = 1;
                let mut model = IrnModel::new(cfg.clone())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                init_params(&mut model.store, 0.4, &mut rng);
                let sample = random_micro_sample(&cfg, &mut rng, if lstm { 2 } else { 0 });
                let pass = model.pass();
                let check_cfg = GradCheckConfig {
                    seed,
                    max_coords_per_param: max_coords,
                    ..GradCheckConfig::default()
                };
                let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let report = grad_check(&mut model.store, &check_cfg, |tape: &mut Tape| {
                    let logits = pass.forward_sample(tape, &sample, &mut dropout_rng)?;
                    tape.softmax_cross_entropy(logits, &[sample.label])
                })?;
                let name = format!(
                    "model {}{}{}",
                    variant.name(),
                    if use_h { " +h" } else { "" },
                    if lstm { " +lstm" } else { "" }
                );
                outcomes.push(CheckOutcome {
                    name,
                    passed: report.passed(),
                    max_rel_err: report.max_rel_err,
                    detail: format!("{:?}", report.failures.first()),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_are_rooted_by_env_overrides_only() {
        // Env-var tests must not race other tests; this one touches unique
        // variable names through the generic helper instead.
        let unique = "IRN_TEST_ROOT_XYZ";
        std::env::remove_var(unique);
        assert_eq!(
            rooted(Path::new("a/b"), unique),
            PathBuf::from("a/b"),
            "unset root leaves paths alone"
        );
        std::env::set_var(unique, "/roots/here");
        assert_eq!(
            rooted(Path::new("a/b"), unique),
            PathBuf::from("/roots/here/a/b")
        );
        assert_eq!(
            rooted(Path::new("/abs/a"), unique),
            PathBuf::from("/abs/a"),
            "absolute paths are never re-rooted"
        );
        std::env::remove_var(unique);
    }

    #[test]
    fn cli_parses_every_subcommand() {
        for argv in [
            vec!["irn", "prepare", "--format", "synthetic", "--out", "x"],
            vec!["irn", "train", "--data", "d", "--out", "o", "--epochs", "2"],
            vec!["irn", "eval", "--checkpoint", "c", "--data", "d"],
            vec!["irn", "crossval", "--data", "d", "--out", "o", "--folds", "3"],
            vec!["irn", "ablation", "--data", "d", "--out", "o", "--rows", "inter,intra"],
            vec!["irn", "synth", "--out", "o", "--count", "5"],
            vec!["irn", "gradcheck", "--seed", "3"],
        ] {
            Cli::try_parse_from(&argv)
                .unwrap_or_else(|e| panic!("{argv:?} failed to parse: {e}"));
        }
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        let err = Cli::try_parse_from(["irn", "train", "--data", "d", "--out", "o", "--bogus"]);
        assert!(err.is_err());
    }

    #[test]
    fn gradcheck_accepts_every_variant_combination() {
        let mut outcomes = Vec::new();
        variant_checks(0x5eed, 2, &mut outcomes).unwrap();
        assert_eq!(outcomes.len(), Variant::ALL.len() * 4);
        for o in &outcomes {
            assert!(o.passed, "{} failed: {}", o.name, o.detail);
        }
    }

    #[test]
    fn op_gradient_checks_pass() {
        let mut outcomes = Vec::new();
        op_checks(0x5eed, &mut outcomes).unwrap();
        assert!(outcomes.len() >= 10);
        for o in &outcomes {
            assert!(o.passed, "{} failed: {}", o.name, o.detail);
        }
    }
}
