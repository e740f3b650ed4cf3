use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gravekit::adapters::{CommandClassifier, CommandDetector, CommandOcr};
use gravekit::export::{self, Format};
use gravekit::ingest::{decode_raster, Manifest};
use gravekit::pipeline::Adapters;
use gravekit::service::{parse_corrections, Engine, EngineConfig, DEFAULT_CONFIDENCE};
use gravekit::stats::EfdMode;
use gravekit::store::Store;
use gravekit::synth::{self, Degrade, Noise, SynthParams, Tolerances};
use gravekit_core::geometry::trace_outer_contours;
use gravekit_core::raster::binarize_default;
use gravekit_core::workflow::Action;
use gravekit_core::BBox;

#[derive(Parser)]
#[command(name = "gravekit", version, about = "Grave drawing measurement and validation")]
struct Cli {
    /// SQLite database file.
    #[arg(long, global = true, default_value = "gravekit.db")]
    db: PathBuf,
    /// Detections below this confidence are ignored.
    #[arg(long, global = true, default_value_t = DEFAULT_CONFIDENCE)]
    confidence: f64,
    /// External OCR program for scale labels (reads a PNG path, prints text).
    #[arg(long, global = true)]
    ocr: Option<PathBuf>,
    /// External north-arrow classifier (reads a PNG path, prints a bin 0-35).
    #[arg(long, global = true)]
    classifier: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Mild,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatKind {
    Rose,
    Outlines,
    Coefficients,
    Pca,
}

#[derive(Subcommand)]
enum Cmd {
    /// Import a document from a manifest JSON file.
    Ingest { manifest: PathBuf },
    /// Import detection JSON lines, from a file or an external detector.
    Detections {
        document: String,
        #[arg(long, conflicts_with = "detector", required_unless_present = "detector")]
        file: Option<PathBuf>,
        #[arg(long)]
        detector: Option<PathBuf>,
    },
    /// Group detections into graves and create records.
    Assemble { document: String },
    /// Show the next record awaiting validation.
    Queue { document: String },
    /// Apply one workflow action to a record.
    Step {
        record: String,
        #[arg(long)]
        version: u64,
        #[arg(long, value_parser = parse_action)]
        action: Action,
        #[arg(long)]
        payload: Option<String>,
    },
    /// Apply a corrections file (JSON lines of record_id, action, payload).
    ValidateBatch { file: PathBuf },
    /// Show a stored record.
    Record { id: String },
    /// Write validated records as CSV or JSON.
    Export {
        document: String,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Include records that are not validated.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orientation rose, normalized outlines, outline coefficients or PCA scores.
    Stats {
        document: String,
        #[arg(value_enum)]
        kind: StatKind,
        #[arg(long, default_value_t = 10)]
        sector: u32,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Also normalize outlines by their first harmonic.
        #[arg(long)]
        first_harmonic: bool,
        #[arg(long)]
        all: bool,
    },
    /// Generate a synthetic document with ground truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        pages: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        noise: NoiseArg,
        #[arg(long, default_value_t = 0.0)]
        drop_prob: f64,
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
    /// Score an export against synthetic truth.
    Score {
        export: PathBuf,
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long, default_value_t = 2.0)]
        size_pct: f64,
        #[arg(long, default_value_t = 5.0)]
        bearing_deg: f64,
    },
    /// Percentage deviation of one export from a baseline export.
    Compare {
        candidate: PathBuf,
        baseline: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Require this bearer token on every request.
        #[arg(long, env = "GRAVEKIT_TOKEN")]
        token: Option<String>,
    },
    /// Dump the outer contours of an image (or a crop) as JSON.
    Contours {
        image: PathBuf,
        #[arg(long)]
        bbox: Option<String>,
    },
}

fn parse_action(s: &str) -> Result<Action, String> {
    match s {
        "advance" => Ok(Action::Advance),
        "back" => Ok(Action::Back),
        "discard" => Ok(Action::Discard),
        _ => Err("expected advance, back or discard".into()),
    }
}

fn engine(cli: &Cli) -> Result<Engine> {
    let store = Store::open(&cli.db).with_context(|| format!("opening {}", cli.db.display()))?;
    let adapters = Adapters {
        ocr: cli.ocr.clone().map(|program| Arc::new(CommandOcr { program }) as _),
        classifier: cli.classifier.clone().map(|program| Arc::new(CommandClassifier { program }) as _),
    };
    Ok(Engine::new(
        store,
        EngineConfig {
            confidence_threshold: cli.confidence,
            adapters,
            ..Default::default()
        },
    ))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Ingest { manifest } => {
            let doc = Manifest::load(manifest)?;
            print_json(&engine(&cli)?.import_document(&doc)?)?;
        }
        Cmd::Detections { document, file, detector } => {
            let e = engine(&cli)?;
            let text = match (file, detector) {
                (Some(f), _) => read(f)?,
                (None, Some(program)) => {
                    let det = CommandDetector { program: program.clone() };
                    let mut out = String::new();
                    for page in e.pages(document)? {
                        let png = e.page_image(&page.id)?;
                        let raster = decode_raster(&png).map_err(anyhow::Error::msg)?;
                        out.push_str(&det.detect(&raster)?);
                        out.push('\n');
                    }
                    out
                }
                (None, None) => bail!("--file or --detector is required"),
            };
            println!("imported {} detections", e.import_detections(document, &text)?);
        }
        Cmd::Assemble { document } => print_json(&engine(&cli)?.assemble(document)?)?,
        Cmd::Queue { document } => print_json(&engine(&cli)?.next_in_queue(document)?)?,
        Cmd::Step { record, version, action, payload } => {
            let payload = match payload {
                Some(p) => serde_json::from_str(p).context("payload is not JSON")?,
                None => serde_json::Value::Null,
            };
            print_json(&engine(&cli)?.apply_step(record, Some(*version), *action, &payload)?)?;
        }
        Cmd::ValidateBatch { file } => {
            let corrections = parse_corrections(&read(file)?)
                .map_err(|(line, e)| anyhow::anyhow!("{}:{line}: {e}", file.display()))?;
            let n = engine(&cli)?
                .validate_batch(&corrections)
                .map_err(|(i, e)| anyhow::anyhow!("correction {} ({}): {e}", i + 1, corrections[i].record_id))?;
            println!("applied {n} corrections");
        }
        Cmd::Record { id } => print_json(&engine(&cli)?.record(id)?)?,
        Cmd::Export { document, format, all, out } => {
            let text = engine(&cli)?.export(document, (*format).into(), *all)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Stats { document, kind, sector, k, first_harmonic, all } => {
            let e = engine(&cli)?;
            let mode = if *first_harmonic { EfdMode::FirstHarmonic } else { EfdMode::Workflow };
            match kind {
                StatKind::Rose => print_json(&e.rose(document, *sector, *all)?)?,
                StatKind::Outlines => print_json(&e.outlines(document, *all)?)?,
                StatKind::Coefficients => print!("{}", e.coefficients_csv(document, *all, mode)?),
                StatKind::Pca => print!("{}", gravekit::stats::pca_csv(&e.pca(document, *k, *all, mode)?)),
            }
        }
        Cmd::Synth { seed, pages, out, noise, drop_prob, perturb } => {
            let params = SynthParams {
                noise: match noise {
                    NoiseArg::None => Noise::NONE,
                    NoiseArg::Mild => Noise::MILD,
                },
                degrade: Degrade {
                    drop_prob: *drop_prob,
                    perturb_frac: *perturb,
                },
                ..Default::default()
            };
            let doc = synth::write_document(out, *seed, *pages, &params)?;
            println!("wrote {pages} pages of {doc} to {}", out.display());
        }
        Cmd::Score { export: path, truth, format, size_pct, bearing_deg } => {
            let rows = export::import_rows(&read(path)?, (*format).into())?;
            let truth: Vec<synth::PageTruth> = serde_json::from_str(&read(truth)?)?;
            let tol = Tolerances {
                size_pct: *size_pct,
                bearing_deg: *bearing_deg,
                ..Default::default()
            };
            print_json(&synth::score_against_truth(&rows, &truth, tol)?)?;
        }
        Cmd::Compare { candidate, baseline, format } => {
            let f: Format = (*format).into();
            let c = export::import_rows(&read(candidate)?, f)?;
            let b = export::import_rows(&read(baseline)?, f)?;
            print_json(&export::compare_exports(&c, &b)?)?;
        }
        Cmd::Serve { addr, token } => {
            let e = Arc::new(engine(&cli)?);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(gravekit::server::serve(e, addr, token.clone()))?;
        }
        Cmd::Contours { image, bbox } => {
            let bytes = std::fs::read(image).with_context(|| format!("reading {}", image.display()))?;
            let mut raster = decode_raster(&bytes).map_err(anyhow::Error::msg)?;
            let mut offset = (0.0, 0.0);
            if let Some(b) = bbox {
                let v: Vec<f64> = b.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
                let arr: [f64; 4] = v.try_into().map_err(|_| anyhow::anyhow!("bbox needs four numbers"))?;
                let (crop, (x0, y0)) = raster.crop(&BBox::from_array(arr)).context("bbox outside the image")?;
                raster = crop;
                offset = (x0 as f64, y0 as f64);
            }
            let contours: Vec<Vec<[f64; 2]>> = trace_outer_contours(&binarize_default(&raster))
                .iter()
                .map(|c| c.points.iter().map(|p| [p.x + offset.0, p.y + offset.1]).collect())
                .collect();
            println!("{}", serde_json::to_string(&contours)?);
        }
    }
    Ok(())
}
