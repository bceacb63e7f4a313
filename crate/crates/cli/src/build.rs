use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ltfs::benchgen::{build_manifest, parse_ade20k, render_stuff_masks, split_summary, Fixture};
use serde::Serialize;

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    /// Fixture JSON holding categories and per-image objects.
    #[arg(long, conflicts_with = "annotations")]
    fixture: Option<PathBuf>,
    /// ADE20K-style directory of per-image JSON annotations; image URIs are
    /// relative to it.
    #[arg(long, requires = "kinds")]
    annotations: Option<PathBuf>,
    /// Category kinds file (object / part / stuff) for `--annotations`.
    #[arg(long)]
    kinds: Option<PathBuf>,
    /// Subdirectory of the annotation root for rendered stuff masks.
    #[arg(long, default_value = "ltfs_stuff")]
    stuff_dir: String,
    /// Context ratio of region boxes to tight boxes.
    #[arg(long, default_value_t = 2.7)]
    gamma: f64,
    #[arg(long)]
    seed: u64,
    /// Manifest to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: BuildArgs) -> Result<()> {
    let raw = match (&args.fixture, &args.annotations, &args.kinds) {
        (Some(path), None, _) => Fixture::read(path)?.into_raw()?,
        (None, Some(root), Some(kinds)) => {
            let mut raw = parse_ade20k(root, kinds)?;
            let written = render_stuff_masks(&mut raw, &root.join(&args.stuff_dir), &args.stuff_dir)?;
            log::info!("rendered {written} stuff masks under {}", root.join(&args.stuff_dir).display());
            raw
        }
        _ => bail!("give either --fixture or --annotations with --kinds"),
    };
    let mut m = build_manifest(&raw, args.gamma, args.seed)?;
    m.producer = Some(crate::producer(&args));
    m.write(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{}", serde_json::to_string_pretty(&split_summary(&m))?);
    Ok(())
}
