use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tbdl::data::{
    load_image, load_split, scan_dataset, split_dataset, synthetic, DatasetManifest, Label, Sample,
    Split, SplitCounts, DEFAULT_RESCALE, IMAGE_SIZE,
};
use tbdl::nn::{Architecture, Model};
use tbdl::train::{
    evaluate, load_checkpoint, predict_samples, train_with, AdamParams, EvalReport, OptimizerKind,
    TrainConfig,
};
use tbdl::Error;

use crate::{Cli, Command, EvalArgs, InfoArgs, PredictArgs, SplitArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    Runtime(Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Data(e) | CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            Error::Layout(_)
            | Error::EmptyClass { .. }
            | Error::Quota { .. }
            | Error::Image { .. }
            | Error::Format(_)
            | Error::Integrity(_)
            | Error::ArchitectureMismatch { .. }
            | Error::Manifest(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => CliError::Data(e),
            _ => CliError::Runtime(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Rejects an existing output unless `--force` was given.
fn check_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "output {} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

fn check_input(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} not found")),
        }));
    }
    Ok(())
}

fn with_bypass(arch: Architecture, bypass: bool) -> Result<Architecture> {
    match (arch, bypass) {
        (a, false) => Ok(a),
        (Architecture::SqueezeNet | Architecture::SqueezeNetBypass, true) => {
            Ok(Architecture::SqueezeNetBypass)
        }
        (a, true) => Err(CliError::Usage(format!("--bypass does not apply to {a}"))),
    }
}

fn display_name(arch: Architecture) -> &'static str {
    match arch {
        Architecture::SqueezeNet => "SqueezeNet",
        Architecture::SqueezeNetBypass => "SqueezeNet+bypass",
        Architecture::ResNet50 => "ResNet50",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.command {
        Command::Split(a) => split(a, force),
        Command::Train(a) => train(a, force),
        Command::Eval(a) => eval(a, force),
        Command::Predict(a) => predict(a),
        Command::Info(a) => info(a),
        Command::Synth(a) => synth(a, force),
    }
}

fn split(a: SplitArgs, force: bool) -> Result<()> {
    let counts = SplitCounts {
        train_per_class: a.train_per_class,
        val_fraction: a.val_fraction,
        test_tb: a.test_tb,
        test_normal: a.test_normal,
    };
    counts.validate()?;
    check_output(&a.out, force)?;
    let raw = scan_dataset(&a.data_dir)?;
    for s in &raw.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    let manifest = split_dataset(&raw, counts, a.seed)?;
    manifest.save(&a.out)?;
    println!("{}", manifest.summary());
    Ok(())
}

fn train(a: TrainArgs, force: bool) -> Result<()> {
    let arch = with_bypass(a.arch, a.bypass)?;
    let optimizer = match a.optimizer.as_str() {
        "sgd" => OptimizerKind::Sgd {
            momentum: a.momentum,
        },
        _ => OptimizerKind::Adam(AdamParams::default()),
    };
    let cfg = TrainConfig {
        arch,
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer,
        lr: a.lr,
        seed: a.seed,
        checkpoint: Some(a.out.clone()),
        patience: a.patience,
        augment: !a.no_augment,
    };
    cfg.validate()?;
    let history_path = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    if history_path == a.out {
        return Err(CliError::Usage("--history and --out must differ".into()));
    }
    check_output(&a.out, force)?;
    check_output(&history_path, force)?;
    check_input(&a.manifest, "manifest")?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let outcome = train_with(&cfg, &manifest, |r| {
        eprintln!(
            "epoch {:>3}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    })?;
    outcome.history.save(&history_path)?;
    println!(
        "best epoch {} of {} (validation)",
        outcome.best_epoch,
        outcome.history.records.len()
    );
    print!("{}", outcome.best_val.render_table(display_name(arch)));
    Ok(())
}

fn eval(a: EvalArgs, force: bool) -> Result<()> {
    let split: Split = a
        .split
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    check_output(&a.report, force)?;
    if let Some(p) = &a.predictions {
        check_output(p, force)?;
        if *p == a.report {
            return Err(CliError::Usage(
                "--predictions and --report must differ".into(),
            ));
        }
    }
    check_input(&a.model, "checkpoint")?;
    check_input(&a.manifest, "manifest")?;
    let model = load_checkpoint(&a.model, a.arch)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let samples = load_split(&manifest, split, DEFAULT_RESCALE)?;
    if samples.is_empty() {
        return Err(CliError::Data(Error::Manifest(format!(
            "split {split} has no images"
        ))));
    }
    let report = evaluate(&model, &samples)?;
    report.save(&a.report)?;
    if let Some(p) = &a.predictions {
        let preds = predict_samples(&model, &samples)?;
        let mut out = String::from("path,label,predicted,p_tb,p_normal\n");
        for (s, pr) in samples.iter().zip(&preds) {
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9}\n",
                s.path,
                s.label,
                pr.label,
                pr.probs[Label::Tb.index()],
                pr.probs[Label::Normal.index()]
            ));
        }
        fs::write(p, out).map_err(|e| Error::io(p, e))?;
    }
    print_report(&report, model.arch());
    Ok(())
}

fn print_report(report: &EvalReport, arch: Architecture) {
    print!("{}", report.render_table(display_name(arch)));
}

fn predict(a: PredictArgs) -> Result<()> {
    check_input(&a.model, "checkpoint")?;
    check_input(&a.image, "image")?;
    let model: Model<f32> = load_checkpoint(&a.model, None)?;
    let image = load_image(&a.image, IMAGE_SIZE, DEFAULT_RESCALE)?;
    let sample = Sample {
        pixels: image,
        // the label only feeds the loss, which is not reported here
        label: Label::Normal,
        path: a.image.display().to_string(),
    };
    let pred = predict_samples(&model, std::slice::from_ref(&sample))?;
    let p = &pred[0];
    let tb = Label::Tb.index();
    let normal = Label::Normal.index();
    println!("{}", p.label);
    println!("TB {:.9}", p.probs[tb]);
    println!("Normal {:.9}", p.probs[normal]);
    Ok(())
}

fn info(a: InfoArgs) -> Result<()> {
    let arch = with_bypass(a.arch, a.bypass)?;
    let model: Model<f32> = Model::build(arch, 0)?;
    let rows = model.summary()?;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<16} {:>16} {:>12}", "name", "output", "params");
    for r in &rows {
        let shape = r
            .output_shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let _ = writeln!(out, "{:<16} {:>16} {:>12}", r.name, shape, group(r.params));
    }
    let _ = writeln!(
        out,
        "{:<16} {:>16} {:>12}",
        "total",
        "",
        group(model.param_count())
    );
    Ok(())
}

/// `11920` -> `11,920`.
fn group(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn synth(a: SynthArgs, force: bool) -> Result<()> {
    if a.tb == 0 || a.normal == 0 {
        return Err(CliError::Usage(
            "--tb and --normal must be at least 1".into(),
        ));
    }
    if a.size < 8 {
        return Err(CliError::Usage("--size must be at least 8".into()));
    }
    check_output(&a.out, force)?;
    synthetic::write_synthetic_dataset(&a.out, a.tb, a.normal, a.size, a.seed)?;
    println!(
        "wrote {} TB and {} Normal images to {}",
        a.tb,
        a.normal,
        a.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_grouping() {
        assert_eq!(group(11920), "11,920");
        assert_eq!(group(999), "999");
        assert_eq!(group(23_512_130), "23,512,130");
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).code(), 1);
        assert_eq!(CliError::from(Error::Layout("x".into())).code(), 2);
        let nan = Error::NonFiniteLoss {
            loss: f64::NAN,
            epoch: 0,
            batch: 0,
            lr: 1.0,
        };
        assert_eq!(CliError::from(nan).code(), 3);
    }
}
