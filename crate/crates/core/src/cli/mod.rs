//! Command-line front end: `train`, `infer`, `eval` and `saliency`.
//!
//! Every command reads an optional TOML run config (`--config`), applies
//! flag overrides and writes the fully resolved config next to its outputs
//! so the run can be repeated with `--config <that file>`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_checkpoint, load_dataset, load_image, save_image, Checkpoint, ImagePair, Layout};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::metrics::{evaluate_pairs, saliency_map, ChannelMode, MetricReport};
use crate::training::{train_loop, TrainConfig, Trainer};

pub const RUN_CONFIG_FILE: &str = "run.toml";
pub const EVAL_REPORT_FILE: &str = "eval_report.tsv";
pub const SALIENCY_COLOR_FILE: &str = "saliency.png";
pub const SALIENCY_RAW_FILE: &str = "saliency_raw.pgm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory (`LR/` + `HR/`, or plain HR images).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Detected from `root` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    pub scale: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            layout: None,
            scale: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub channel_mode: ChannelMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr: Option<PathBuf>,
}

/// Everything a run needs, as read from the TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Checkpoint to load (resume for `train`, weights for the others).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub infer: InferConfig,
    pub saliency: SaliencyConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Applies command-line overrides and settles the seed.
    pub fn apply(&mut self, g: &GlobalArgs) {
        if let Some(s) = g.seed {
            self.seed = Some(s);
        }
        if let Some(o) = &g.out {
            self.out = Some(o.clone());
        }
        if let Some(c) = &g.ckpt {
            self.ckpt = Some(c.clone());
        }
        if let Some(s) = g.scale {
            self.data.scale = s;
        }
        if let Some(d) = &g.dataset {
            self.data.root = Some(d.clone());
        }
        if let Some(m) = g.channel_mode {
            self.eval.channel_mode = m;
        }
        if let Some(n) = g.steps {
            self.train.steps = n;
        }
        let seed = self.seed.unwrap_or(self.train.seed);
        self.seed = Some(seed);
        self.train.seed = seed;
    }

    fn out_dir(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (train, eval, saliency).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint to load; for train, resumes from it.
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,
    /// Upscaling factor, 2 or 4.
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Metric channel mode for eval: rgb or luma.
    #[arg(long = "channel-mode", global = true)]
    pub channel_mode: Option<ChannelMode>,
    /// Total training steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train generator and discriminator on a dataset directory.
    Train,
    /// Upscale one image with a trained checkpoint.
    Infer {
        input: Option<PathBuf>,
        output: Option<PathBuf>,
    },
    /// PSNR/SSIM of a checkpoint and of bicubic upscaling on a dataset.
    Eval,
    /// Input-gradient saliency map of an LR/HR pair.
    Saliency { lr: Option<PathBuf>, hr: Option<PathBuf> },
}

#[derive(Debug, Clone, Parser)]
#[command(name = "srtransgan", version, about = "Transformer GAN super-resolution")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Errors go to stderr.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.global);
    match &cli.command {
        Command::Train => cmd_train(&cfg).map(|_| ()),
        Command::Infer { input, output } => {
            if let Some(i) = input {
                cfg.infer.input = Some(i.clone());
            }
            if let Some(o) = output {
                cfg.infer.output = Some(o.clone());
            }
            cmd_infer(&cfg)
        }
        Command::Eval => cmd_eval(&cfg).map(|_| ()),
        Command::Saliency { lr, hr } => {
            if let Some(p) = lr {
                cfg.saliency.lr = Some(p.clone());
            }
            if let Some(p) = hr {
                cfg.saliency.hr = Some(p.clone());
            }
            cmd_saliency(&cfg)
        }
    }
}

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Usage(format!("missing {what}")))
}

fn check_scale(scale: usize) -> Result<()> {
    if scale == 2 || scale == 4 {
        Ok(())
    } else {
        Err(Error::Usage(format!("scale must be 2 or 4, got {scale}")))
    }
}

fn load_pairs(cfg: &RunConfig) -> Result<Vec<ImagePair>> {
    let root = required(&cfg.data.root, "dataset directory (--dataset or data.root)")?;
    let layout = cfg.data.layout.unwrap_or_else(|| Layout::detect(root));
    let manifest = load_dataset(root, layout, cfg.data.scale)?;
    for r in &manifest.rejected {
        eprintln!("skipping {}: {}", r.name, r.reason);
    }
    if manifest.is_empty() {
        return Err(Error::Dataset {
            problems: vec![format!("no usable images under {}", root.display())],
        });
    }
    manifest.load_pairs()
}

fn load_ckpt_generator(cfg: &mut RunConfig) -> Result<(Checkpoint, Generator)> {
    let path = required(&cfg.ckpt, "checkpoint (--ckpt)")?;
    let ck = load_checkpoint(path)?;
    let gen = ck.generator()?;
    cfg.generator = ck.meta.generator.clone();
    cfg.discriminator = ck.meta.discriminator.clone();
    Ok((ck, gen))
}

/// Trains and returns the final checkpoint path.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    check_scale(cfg.data.scale)?;
    let pairs = load_pairs(&cfg)?;
    let mut trainer = match &cfg.ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            cfg.generator = ck.meta.generator.clone();
            cfg.discriminator = ck.meta.discriminator.clone();
            Trainer::from_checkpoint(&ck, Some(&cfg.train))?
        }
        None => Trainer::new(&cfg.generator, &cfg.discriminator, &cfg.train)?,
    };
    let out = cfg.out_dir("runs/train");
    cfg.out = Some(out.clone());
    cfg.save(&out.join(RUN_CONFIG_FILE))?;
    println!(
        "training {} pairs, steps {}..{}, output {}",
        pairs.len(),
        trainer.step,
        cfg.train.steps,
        out.display()
    );
    let summary = train_loop(&mut trainer, &pairs, &out, |r| {
        println!(
            "step {}\td_loss {:.5}\tg_adv {:.5}\tg_rec {:.5}\tD(real) {:.3}\tD(fake) {:.3}\t{:.0} ms",
            r.step, r.d_loss, r.g_adv, r.g_rec, r.d_real, r.d_fake, r.wall_ms
        )
    })?;
    println!("final checkpoint {}", summary.final_checkpoint.display());
    Ok(summary.final_checkpoint)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    check_scale(cfg.data.scale)?;
    let input = required(&cfg.infer.input, "input image")?.clone();
    let output = required(&cfg.infer.output, "output image path")?.clone();
    let (_, gen) = load_ckpt_generator(&mut cfg)?;
    let lr = load_image(&input)?;
    let [_, h, w] = *lr.shape() else {
        unreachable!("decoded images are [3, H, W]")
    };
    let sr = gen.infer(&lr.reshape(&[1, 3, h, w])?, cfg.data.scale)?;
    let s = cfg.data.scale;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_image(&sr.reshape(&[3, s * h, s * w])?, &output)?;
    let mut side = output.clone().into_os_string();
    side.push(".run.toml");
    cfg.save(Path::new(&side))?;
    println!(
        "{} ({w}x{h}) -> {} ({}x{})",
        input.display(),
        output.display(),
        s * w,
        s * h
    );
    Ok(())
}

/// Evaluates the checkpoint and writes the report; returns it.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricReport> {
    let mut cfg = cfg.clone();
    check_scale(cfg.data.scale)?;
    let (_, gen) = load_ckpt_generator(&mut cfg)?;
    let pairs = load_pairs(&cfg)?;
    let scale = cfg.data.scale;
    let report = evaluate_pairs(&pairs, cfg.eval.channel_mode, |p| {
        let [_, h, w] = *p.lr.shape() else {
            unreachable!("pairs hold [3, H, W] images")
        };
        gen.infer(&p.lr.reshape(&[1, 3, h, w])?, scale)?
            .reshape(&[3, scale * h, scale * w])
    })?;
    let out = cfg.out_dir("runs/eval");
    cfg.out = Some(out.clone());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let tsv = report.to_tsv();
    let path = out.join(EVAL_REPORT_FILE);
    fs::write(&path, &tsv).map_err(|e| Error::io(&path, e))?;
    cfg.save(&out.join(RUN_CONFIG_FILE))?;
    print!("{tsv}");
    Ok(report)
}

pub fn cmd_saliency(cfg: &RunConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let lr_path = required(&cfg.saliency.lr, "LR image")?.clone();
    let hr_path = required(&cfg.saliency.hr, "HR image")?.clone();
    let lr = load_image(&lr_path)?;
    let hr = load_image(&hr_path)?;
    let (ls, hs) = (lr.shape(), hr.shape());
    if hs[1] != 2 * ls[1] || hs[2] != 2 * ls[2] {
        return Err(Error::Usage(format!(
            "HR {}x{} must be exactly twice LR {}x{}",
            hs[2], hs[1], ls[2], ls[1]
        )));
    }
    let (_, gen) = load_ckpt_generator(&mut cfg)?;
    let map = saliency_map(&gen, &lr, &hr)?;
    let out = cfg.out_dir("runs/saliency");
    cfg.out = Some(out.clone());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    save_image(&map.color, out.join(SALIENCY_COLOR_FILE))?;
    let (h, w) = (map.height(), map.width());
    save_image(&map.map.reshape(&[1, h, w])?, out.join(SALIENCY_RAW_FILE))?;
    cfg.save(&out.join(RUN_CONFIG_FILE))?;
    let v = map.map.to_f64_vec();
    println!(
        "saliency {w}x{h}: mean {:.4}, written to {}",
        v.iter().sum::<f64>() / v.len() as f64,
        out.display()
    );
    Ok(())
}
