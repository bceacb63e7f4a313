use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ltfs::datamodel::{BenchmarkManifest, Head, Subset};
use ltfs::model::{config_hash, Checkpoint, Model, Vocabulary};
use ltfs::trainer::{prepare_samples, run_plan, Mode, RunOutputs, TrainConfig, TrainData};
use serde::Serialize;

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, checkpoints and stage logs.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's head list (comma separated).
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<Head>>,
    /// Overrides the config's combination mode.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Overrides the curriculum order (comma separated).
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Head>>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of this config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory image URIs are resolved against.
    #[arg(long, env = "LTFS_DATA_ROOT")]
    data_root: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "mtl" => Ok(Mode::Mtl),
        "cl" => Ok(Mode::Cl),
        _ => Err(format!("unknown mode '{s}' (mtl, cl)")),
    }
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    config: &'a TrainConfig,
    manifest: String,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::read(&args.config)?;
    if let Some(h) = &args.heads {
        cfg.heads.clone_from(h);
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(s) = &args.stages {
        cfg.stages = Some(s.clone());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let m = BenchmarkManifest::read(&args.manifest)?;
    let plan = cfg.plan()?;
    let sup = cfg.supervision()?;
    let model_config = cfg.model_config(Vocabulary::from_manifest(&m))?;
    let hash = config_hash(&RunIdentity {
        config: &cfg,
        manifest: m.content_hash(),
    });

    let (mut model, state) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::read(path)?;
            if ck.config_hash != hash {
                bail!(
                    "{} was written for config hash {}, this run has {hash}",
                    path.display(),
                    ck.config_hash
                );
            }
            (ck.to_model()?, ck.state.clone())
        }
        None => (Model::new(model_config, cfg.seed)?, None),
    };
    if args.resume.is_some() && state.is_none() {
        bail!("checkpoint has no training state to resume from");
    }

    let source = crate::data_source(args.data_root.as_deref(), &args.manifest);
    let train = prepare_samples(&m, &model.config, &source, Subset::BaseTrain, cfg.short_edge)?;
    let val = if cfg.val {
        prepare_samples(&m, &model.config, &source, Subset::BaseVal, cfg.short_edge)?
    } else {
        Vec::new()
    };
    log::info!("{} training and {} validation images", train.len(), val.len());
    let data = TrainData { train, val };

    let ckpt_dir = args.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    let producer = crate::producer(&args);
    let outputs = RunOutputs {
        metrics_csv: Some(args.out.join("metrics.csv")),
        checkpoint_dir: Some(ckpt_dir),
        config_hash: hash.clone(),
        producer: Some(producer.clone()),
        preamble: crate::preamble(&producer),
    };
    let logs = run_plan(&plan, &sup, &mut model, &data, &outputs, state.as_ref())?;

    let mut ck = Checkpoint::from_model(&model, &hash, None);
    ck.producer = Some(producer);
    ck.write(&args.out.join("final.ckpt.json"))?;
    let stages_path = args.out.join("stages.json");
    std::fs::write(&stages_path, serde_json::to_vec_pretty(&logs)?)
        .with_context(|| format!("writing {}", stages_path.display()))?;
    for l in &logs {
        let last = l.epochs.last();
        println!(
            "stage {} {:?}: {} steps, train acc {:.4}, val acc {}",
            l.stage,
            l.heads.iter().map(|h| h.name()).collect::<Vec<_>>(),
            l.steps,
            last.map_or(0.0, |e| e.train_acc),
            last.and_then(|e| e.val_acc).map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}
