//! The `daa` command line. Exit codes: 0 success, 1 runtime error, 2 usage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine as _;
use clap::{Args, Parser, Subcommand};
use daa_autograd::Real;

use crate::augment::{
    eval_posthoc_classification, eval_posthoc_segmentation, proxy_fid, AugmentTarget, EvalReport, PosthocConfig,
};
use crate::config::DaaConfig;
use crate::error::{DaaError, Result};
use crate::factors::{FactorOp, MorphOp, SubjectId};
use crate::model::{load_classifier, save_classifier, ModelBundle};
use crate::phantom::{Dataset, Imbalance, Split};
use crate::service::{ApiError, GenerateRequest, ImagingSource, ServiceState, TraverseOutcome, TraverseRequest};
use crate::workflow;

#[derive(Debug, Parser)]
#[command(name = "daa", version, about = "Cardiac image synthesis by anatomy factor arithmetic")]
pub struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for the command's randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset directory.
    Phantom(PhantomArgs),
    /// Pretrain the pathology classifier F.
    #[command(name = "pretrain-f")]
    PretrainF(PretrainArgs),
    /// Train the refiner, generator and discriminator around F.
    Train(TrainArgs),
    /// Synthesize one image from an arithmetic plan.
    Generate(GenerateArgs),
    /// Erode or dilate one factor step by step.
    Traverse(TraverseArgs),
    /// Add confidence-filtered synthetic subjects to the train split.
    Augment(AugmentArgs),
    /// Post-hoc classification and segmentation scores.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Downsample this class in the train split.
    #[arg(long, conflicts_with = "imbalance_vendor")]
    pub imbalance_class: Option<usize>,
    /// Downsample this vendor in the train split.
    #[arg(long)]
    pub imbalance_vendor: Option<u8>,
    /// Share of the downsampled group in the train split.
    #[arg(long, default_value_t = 0.05)]
    pub imbalance_fraction: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<Real>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `pretrain-f`.
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<Real>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub base: String,
    /// `CHANNEL:DONOR`, repeatable.
    #[arg(long, value_parser = donor_op_swap)]
    pub swap: Vec<FactorOp>,
    /// `CHANNEL`, repeatable.
    #[arg(long)]
    pub remove: Vec<usize>,
    /// `CHANNEL:DONOR`, repeatable.
    #[arg(long, value_parser = donor_op_add)]
    pub add: Vec<FactorOp>,
    /// Subject whose imaging factor is used; defaults to the base.
    #[arg(long)]
    pub imaging: Option<String>,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full response (previews, prediction) as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraverseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub channel: usize,
    #[arg(long)]
    pub op: MorphOp,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 6, 9])]
    pub steps: Vec<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "target_vendor")]
    pub target_class: Option<usize>,
    #[arg(long)]
    pub target_vendor: Option<u8>,
    /// Samples to add; defaults to the balancing count.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub pool_multiplier: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Augmented dataset to compare against `--data`.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    /// Report CSV (`experiment,seed,metric,value`).
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub skip_segmentation: bool,
    /// Model whose F embeds images for the proxy FID of synthetic subjects.
    #[arg(long)]
    pub fid_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn donor_op(s: &str, add: bool) -> std::result::Result<FactorOp, String> {
    let (k, donor) = s.split_once(':').ok_or_else(|| format!("expected CHANNEL:DONOR, got `{s}`"))?;
    let k: usize = k.parse().map_err(|_| format!("bad channel `{k}`"))?;
    if donor.is_empty() {
        return Err("empty donor id".into());
    }
    Ok(if add { FactorOp::add(k, donor) } else { FactorOp::swap(k, donor) })
}

fn donor_op_swap(s: &str) -> std::result::Result<FactorOp, String> {
    donor_op(s, false)
}

fn donor_op_add(s: &str) -> std::result::Result<FactorOp, String> {
    donor_op(s, true)
}

fn api(e: ApiError) -> DaaError {
    match e.code.as_str() {
        "invalid_plan" => DaaError::InvalidPlan(e.violations),
        "unknown_subject" => DaaError::UnknownSubject(e.message),
        _ => DaaError::InvalidInput(e.message),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| DaaError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| DaaError::io(path, e))
}

fn unb64(s: &str) -> Result<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| DaaError::InvalidInput(format!("payload: {e}")))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn phantom(cfg: &DaaConfig, seed: Option<u64>, a: &PhantomArgs) -> Result<()> {
    let mut o = cfg.phantom.clone();
    o.n = a.n.unwrap_or(o.n);
    o.size = a.size.unwrap_or(o.size);
    o.seed = seed.unwrap_or(o.seed);
    o.split_seed = a.split_seed.unwrap_or(o.split_seed);
    if let Some(class) = a.imbalance_class {
        o.imbalance = Some(Imbalance::Class {
            class,
            fraction: a.imbalance_fraction,
        });
    }
    if let Some(vendor) = a.imbalance_vendor {
        o.imbalance = Some(Imbalance::Vendor {
            vendor,
            fraction: a.imbalance_fraction,
        });
    }
    let d = workflow::phantom_dataset(&o)?;
    d.save(&a.out)?;
    let m = &d.manifest;
    println!(
        "{} subjects (train {}, val {}, test {}) -> {}",
        d.records.len(),
        m.train.len(),
        m.val.len(),
        m.test.len(),
        a.out.display()
    );
    Ok(())
}

fn pretrain(cfg: &DaaConfig, seed: Option<u64>, a: &PretrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let mut c = cfg.classifier.clone();
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.lr = a.lr.unwrap_or(c.lr);
    let p = workflow::pretrain_f(&data, &cfg.net, &c, seed.unwrap_or(c.seed))?;
    save_classifier(&p.classifier, &a.out)?;
    let best = p.report.best_epoch.map_or("-".into(), |e| e.to_string());
    println!("best epoch {best}, test accuracy {:.4} -> {}", p.test_accuracy, a.out.display());
    Ok(())
}

fn train(cfg: &DaaConfig, seed: Option<u64>, a: &TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let f = load_classifier(&a.classifier)?;
    let mut t = cfg.train.clone();
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lambda1 = a.lambda1.unwrap_or(t.lambda1);
    t.seed = seed.unwrap_or(t.seed);
    let out = workflow::train_model(&data, &cfg.net, f, &t, |e| {
        let l = &e.losses;
        tracing::info!(
            "epoch {} L_D {:.4} L_G {:.4} L_cons {:.4} L_bg {:.4}",
            e.epoch,
            l.l_d,
            l.l_g,
            l.l_cons,
            l.l_bg
        );
    })?;
    out.bundle.save(&a.out)?;
    if let Some(p) = &a.log {
        out.log.save_csv(p)?;
    }
    let sel = out.selected_epoch.map_or("-".into(), |e| e.to_string());
    println!("selected epoch {sel} -> {}", a.out.display());
    Ok(())
}

fn state(data: Option<&Path>, model: Option<&Path>) -> Result<ServiceState> {
    Ok(ServiceState {
        dataset: data.map(Dataset::load).transpose()?,
        model: model.map(ModelBundle::load).transpose()?,
    })
}

fn generate(seed: Option<u64>, a: &GenerateArgs) -> Result<()> {
    let s = state(Some(&a.data), Some(&a.model))?;
    let mut ops = a.swap.clone();
    ops.extend(a.remove.iter().map(|&k| FactorOp::remove(k)));
    ops.extend(a.add.iter().cloned());
    let req = GenerateRequest {
        base_subject: SubjectId::new(a.base.as_str()),
        ops,
        imaging_source: a.imaging.as_ref().map(|id| ImagingSource::Subject {
            subject: SubjectId::new(id.as_str()),
        }),
        seed: seed.unwrap_or(0),
    };
    let resp = s.generate(&req).map_err(api)?;
    write(&a.out, unb64(&resp.image)?)?;
    if let Some(p) = &a.json {
        write(p, json(&resp))?;
    }
    let p = &resp.prediction;
    println!(
        "target {} predicted {} ({}) confidence {:.4} -> {}",
        resp.target_label,
        p.label,
        p.pathology,
        p.confidence,
        a.out.display()
    );
    Ok(())
}

fn traverse(seed: Option<u64>, a: &TraverseArgs) -> Result<()> {
    let s = state(Some(&a.data), Some(&a.model))?;
    let req = TraverseRequest {
        subject: SubjectId::new(a.subject.as_str()),
        channel: a.channel,
        op: a.op,
        steps: a.steps.clone(),
        seed: seed.unwrap_or(0),
    };
    let (entries, warning, body) = match s.traverse(&req).map_err(api)? {
        TraverseOutcome::Complete(r) => (r.entries.clone(), r.warning.clone(), json(&r)),
        TraverseOutcome::Partial(p) => (p.entries.clone(), Some(p.warning.clone()), json(&p)),
    };
    for e in &entries {
        write(&a.out_dir.join(format!("step_{:03}_image.png", e.step)), unb64(&e.image)?)?;
        write(&a.out_dir.join(format!("step_{:03}_factor.png", e.step)), unb64(&e.factor)?)?;
        println!("step {} area {} predicted {} ({:.4})", e.step, e.factor_area, e.prediction.pathology, e.prediction.confidence);
    }
    write(&a.out_dir.join("traverse.json"), body)?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn augment(cfg: &DaaConfig, seed: Option<u64>, a: &AugmentArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let model = ModelBundle::load(&a.model)?;
    let mut o = cfg.augment.clone();
    if let Some(c) = a.target_class {
        o.target = AugmentTarget::Class(c);
    }
    if let Some(v) = a.target_vendor {
        o.target = AugmentTarget::Vendor(v);
    }
    o.count = a.count.or(o.count);
    o.pool_multiplier = a.pool_multiplier.unwrap_or(o.pool_multiplier);
    let out = workflow::augment_to_balance(&model, &data, &o, seed.unwrap_or(0))?;
    out.dataset.save(&a.out)?;
    println!(
        "kept {} of {} candidates, train split now {} -> {}",
        out.kept.len(),
        out.candidates,
        out.dataset.manifest.train.len(),
        a.out.display()
    );
    Ok(())
}

fn eval_one(name: &str, data: &Dataset, cfg: &PosthocConfig, seg: bool, report: &mut EvalReport) -> Result<()> {
    let c = eval_posthoc_classification(data, cfg)?;
    report.push_summary(name, &cfg.seeds, "accuracy", &c.accuracy);
    println!("{name}: accuracy {:.4} ± {:.4}", c.accuracy.mean, c.accuracy.std);
    for (k, r) in c.class_recall.iter().enumerate() {
        if let Some(r) = r {
            let cls = &data.manifest.class_names[k];
            report.push_summary(name, &cfg.seeds, &format!("recall_{cls}"), r);
            println!("{name}: recall {cls} {:.4} ± {:.4}", r.mean, r.std);
        }
    }
    if seg {
        let d = eval_posthoc_segmentation(data, cfg)?;
        report.push_summary(name, &cfg.seeds, "dice", &d);
        println!("{name}: dice {:.4} ± {:.4}", d.mean, d.std);
    }
    Ok(())
}

fn eval(cfg: &DaaConfig, seed: Option<u64>, a: &EvalArgs) -> Result<()> {
    let mut e = cfg.eval.clone();
    if let Some(s) = seed {
        e.seeds = vec![s];
    }
    if let Some(s) = &a.seeds {
        e.seeds = s.clone();
    }
    let mut report = EvalReport::default();
    let base = Dataset::load(&a.data)?;
    eval_one("baseline", &base, &e, !a.skip_segmentation, &mut report)?;
    if let Some(p) = &a.augmented {
        let aug = Dataset::load(p)?;
        eval_one("augmented", &aug, &e, !a.skip_segmentation, &mut report)?;
        if let Some(m) = &a.fid_model {
            let model = ModelBundle::load(m)?;
            let train = aug.split_records(Split::Train);
            let real: Vec<_> = train.iter().filter(|r| !r.synthetic).map(|r| r.image.clone()).collect();
            let fake: Vec<_> = train.iter().filter(|r| r.synthetic).map(|r| r.image.clone()).collect();
            if fake.len() < 2 {
                eprintln!("warning: {} synthetic subjects, proxy FID needs two", fake.len());
            } else {
                let fid = proxy_fid(&real, &fake, &model.classifier)?;
                report.push("augmented", 0, "proxy_fid", fid);
                println!("augmented: proxy FID {fid:.4}");
            }
        }
    }
    report.save(&a.report)?;
    Ok(())
}

fn serve(cfg: &DaaConfig, a: &ServeArgs) -> Result<()> {
    let s = state(a.data.as_deref(), a.model.as_deref())?;
    let addr = a.addr.clone().unwrap_or_else(|| cfg.serve.addr.clone());
    let addr = addr
        .parse()
        .map_err(|e| DaaError::InvalidInput(format!("address `{addr}`: {e}")))?;
    let workers = a.workers.unwrap_or(cfg.serve.workers);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| DaaError::io("tokio runtime", e))?;
    rt.block_on(crate::service::serve(addr, Arc::new(s), workers))
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => DaaConfig::load(p)?,
        None => DaaConfig::default(),
    };
    let seed = cli.seed;
    match &cli.command {
        Command::Phantom(a) => phantom(&cfg, seed, a),
        Command::PretrainF(a) => pretrain(&cfg, seed, a),
        Command::Train(a) => train(&cfg, seed, a),
        Command::Generate(a) => generate(seed, a),
        Command::Traverse(a) => traverse(seed, a),
        Command::Augment(a) => augment(&cfg, seed, a),
        Command::Eval(a) => eval(&cfg, seed, a),
        Command::Serve(a) => serve(&cfg, a),
    }
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let DaaError::InvalidPlan(v) = &e {
                for x in v {
                    eprintln!("  {x}");
                }
            }
            1
        }
    }
}
