use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use ltfs::datamodel::{BenchmarkManifest, Split};
use ltfs::fewshot::{append_reports, evaluate, read_reports, summary_json, ClassifierKind};
use ltfs::model::Checkpoint;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SplitArg {
    Val,
    Test,
    Both,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Classifiers to fit on the frozen features (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "linear,cosine,proto")]
    classifier: Vec<ClassifierKind>,
    /// Support instances per novel class (comma separated, each 1 to 5).
    #[arg(long, value_delimiter = ',', default_value = "1,5",
          value_parser = clap::value_parser!(u8).range(1..=5))]
    k_shot: Vec<u8>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Short edge images were resized to during training.
    #[arg(long)]
    short_edge: Option<usize>,
    /// Model name in the report; defaults to a prefix of the parameter hash.
    #[arg(long)]
    name: Option<String>,
    /// Report CSV; rows are appended.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON over every row of `--out`; defaults to
    /// `<out stem>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, env = "LTFS_DATA_ROOT")]
    data_root: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let m = BenchmarkManifest::read(&args.manifest)?;
    let model = Checkpoint::read(&args.checkpoint)?.to_model()?;
    let source = crate::data_source(args.data_root.as_deref(), &args.manifest);
    let splits: &[Split] = match args.split {
        SplitArg::Val => &[Split::NovelVal],
        SplitArg::Test => &[Split::NovelTest],
        SplitArg::Both => &[Split::NovelVal, Split::NovelTest],
    };
    let mut settings = Vec::new();
    for &split in splits {
        for &k in &args.k_shot {
            for &kind in &args.classifier {
                settings.push((split, usize::from(k), kind));
            }
        }
    }
    let mut reports = evaluate(&model, &m, &source, args.short_edge, &settings)?;
    if let Some(name) = &args.name {
        for r in &mut reports {
            r.model.clone_from(name);
        }
    }
    append_reports(&args.out, &reports, &crate::preamble(&crate::producer(&args)))?;
    for r in &reports {
        println!(
            "{:?} {}-way {}-shot {:<6} top1 {:6.2} top5 {:6.2}",
            r.split, r.way, r.k_shot, r.classifier, r.top1, r.top5
        );
    }
    let all = read_reports(&args.out)?;
    let path = args
        .summary
        .clone()
        .unwrap_or_else(|| crate::default_sibling(&args.out, ".summary.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&summary_json(&all))?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
