use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "edgewipe", version, about = "Edge-conditioned object removal for overhead imagery")]
pub struct Cli {
    /// TOML settings file (also read from EDGEWIPE_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Workspace root, overriding the settings file.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a scene into square tiles plus grid.json.
    Slice {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        tile: Option<u32>,
        #[arg(long, value_enum)]
        pad: Option<Pad>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Canny feature image of a tile PNG, or of every tile in a grid directory.
    ExtractCfi {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        canny: CannyArgs,
    },
    /// Class-label feature image of one tile from polygon annotations.
    RenderSfi {
        /// JSON list of {class_id, vertices} in scene pixels.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        row: u32,
        #[arg(long)]
        col: u32,
        #[arg(long)]
        tile: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-shot translator training on the tiles of a scene.
    Train(TrainArgs),
    /// Erase a masked region's edges and re-translate the tile.
    Remove {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a tile's unedited CFI.
    Baseline {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        row: u32,
        #[arg(long)]
        col: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// MSE, PSNR and SSIM between two images.
    Metrics(MetricsArgs),
    /// Forged dataset construction, ingestion and manifest checks.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Forgery detector training and evaluation.
    #[command(subcommand)]
    Detector(DetectorCommand),
    /// Object labels and confidences for an image.
    ScoreObjects {
        #[arg(long)]
        image: PathBuf,
        /// Known object outlines for the offline scorer.
        #[arg(long, conflicts_with = "remote")]
        annotations: Option<PathBuf>,
        /// Use the external scorer configured by scorer_url.
        #[arg(long)]
        remote: bool,
    },
    /// 2-D projection of backbone class probabilities.
    Project {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
        split: SplitArg,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args, Default)]
pub struct CannyArgs {
    #[arg(long)]
    pub sigma: Option<f32>,
    #[arg(long)]
    pub low: Option<f32>,
    #[arg(long)]
    pub high: Option<f32>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Pad {
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Feature {
    Cfi,
    Sfi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub tile: Option<u32>,
    #[arg(long, value_enum, default_value_t = Feature::Cfi)]
    pub feature: Feature,
    /// Required for SFI conditioning.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// TOML or JSON with [generator], [discriminator] and [train] tables.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict training to these tiles, e.g. `0,0 1,2`.
    #[arg(long = "only", value_parser = parse_coord, num_args = 1..)]
    pub only: Vec<(u32, u32)>,
    #[arg(long)]
    pub dump_every: Option<usize>,
    #[arg(long, requires = "dump_every")]
    pub dump_dir: Option<PathBuf>,
    #[command(flatten)]
    pub canny: CannyArgs,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_coord(s: &str) -> Result<(u32, u32), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected ROW,COL, got {s:?}"))?;
    Ok((r.trim().parse().map_err(|e| format!("{e}"))?, c.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionArg {
    Full,
    Tile,
    Masked,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value_t = RegionArg::Full)]
    pub region: RegionArg,
    #[arg(long)]
    pub row: Option<u32>,
    #[arg(long)]
    pub col: Option<u32>,
    #[arg(long)]
    pub tile: Option<u32>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Run removal jobs and write a split manifest.
    Build {
        /// JSON list of removal jobs.
        #[arg(long)]
        jobs: PathBuf,
        /// Source images: a directory (ids are file stems) or a JSON id->path map.
        #[arg(long)]
        sources: PathBuf,
        /// Pristine images, same forms as --sources.
        #[arg(long)]
        pristine: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON split targets; defaults to 162/95 forged and 266/114 pristine.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Index a COCO-style annotated image directory.
    Ingest {
        #[arg(long)]
        root: PathBuf,
    },
    /// Check a manifest's paths, counts and provenance.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    #[value(name = "binary_cnn")]
    BinaryCnn,
    #[value(name = "finetune_pretrained")]
    FinetunePretrained,
}

#[derive(Debug, Subcommand)]
pub enum DetectorCommand {
    /// Train a forged-image detector on a manifest's training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::BinaryCnn)]
        kind: KindArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        input_size: Option<u32>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Backbone weights for finetune_pretrained; a seeded backbone otherwise.
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC of trained detectors on a manifest's validation split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "detector", required = true, num_args = 1..)]
        detectors: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}
