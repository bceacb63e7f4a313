use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ltfs::synth::{render_toy, toy_counts, ToySpec};
use serde::Serialize;
use serde_json::json;

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Directory for `fixture.json`, images and `train.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 200)]
    images: usize,
    #[arg(long, default_value_t = 2)]
    objects_per_image: usize,
    #[arg(long, default_value_t = 3)]
    base_classes: usize,
    #[arg(long, default_value_t = 6)]
    novel_classes: usize,
    /// Instances rendered per novel class.
    #[arg(long, default_value_t = 20)]
    novel_instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let spec = ToySpec {
        image_size: args.image_size,
        images: args.images,
        objects_per_image: args.objects_per_image,
        base_classes: args.base_classes,
        novel_classes: args.novel_classes,
        novel_instances: args.novel_instances,
        seed: args.seed,
    };
    let data = render_toy(&spec);
    data.write(&args.out)?;
    let config = json!({
        "extractor": "tiny",
        "feature_dim": 32,
        "heads": ["cls"],
        "mode": "mtl",
        "epochs": 100,
        "max_steps": 200,
        "lr": 0.1,
        "batch_size": 8,
        "seed": args.seed,
    });
    let path = args.out.join("train.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config)?).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", serde_json::to_string_pretty(&toy_counts(&data))?);
    Ok(())
}
