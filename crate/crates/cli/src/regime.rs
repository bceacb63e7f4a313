use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use ltfs::datamodel::{BenchmarkManifest, Head};
use ltfs::regimes::{instance_portion_report, scarce_class, scarce_class_adjust, scarce_image, subsample_supervision, write_portion_csv};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Kind {
    ScarceClass,
    ScarceImage,
    ScarceClassAdjust,
    SupervisionFraction,
}

#[derive(Args, Debug, Serialize)]
pub struct RegimeArgs {
    /// Full manifest to derive from.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Fraction of base categories (scarce-class) or training images
    /// (scarce-image, scarce-class-adjust) to keep.
    #[arg(long)]
    keep_ratio: Option<f64>,
    /// Head whose labels are subsampled (supervision-fraction).
    #[arg(long)]
    head: Option<Head>,
    /// Fraction of label units keeping `--head` labels.
    #[arg(long)]
    fraction: Option<f64>,
    /// Required by every kind except scarce-class.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Portion report; defaults to `<out stem>.portion.csv`.
    #[arg(long)]
    portion_csv: Option<PathBuf>,
}

pub fn run(args: RegimeArgs) -> Result<()> {
    let base = BenchmarkManifest::read(&args.manifest)?;
    let seed = || args.seed.with_context(|| format!("--seed is required for {:?}", args.kind));
    let keep = || args.keep_ratio.context("--keep-ratio is required");
    let mut m = match args.kind {
        Kind::ScarceClass => scarce_class(&base, keep()?)?,
        Kind::ScarceImage => scarce_image(&base, keep()?, seed()?)?,
        Kind::ScarceClassAdjust => scarce_class_adjust(&base, keep()?, seed()?)?,
        Kind::SupervisionFraction => {
            let (Some(head), Some(fraction)) = (args.head, args.fraction) else {
                bail!("supervision-fraction needs --head and --fraction");
            };
            subsample_supervision(&base, head, fraction, seed()?)?
        }
    };
    m.producer = Some(crate::producer(&args));
    m.write(&args.out).with_context(|| format!("writing {}", args.out.display()))?;

    let rows = instance_portion_report(&base, &[&m])?;
    let path = args
        .portion_csv
        .clone()
        .unwrap_or_else(|| crate::default_sibling(&args.out, ".portion.csv"));
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_portion_csv(&rows, file)?;
    let row = &rows[1];
    println!(
        "{}: {} training instances, {:.2}% of the full benchmark",
        m.regime.id(),
        row.instances,
        row.portion_pct
    );
    Ok(())
}
