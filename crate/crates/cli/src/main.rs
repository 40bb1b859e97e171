use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coseg::io::{load_image, load_label_map, overlay, save_image, save_label_map};
use coseg::pipeline::{format_bench_table, parse_manifest, run_bench};
use coseg::{AnalysisOperator, SegConfig, SegmentationReport, Segmenter, TextureTemperature};
use coseg_service::{ServiceConfig, DEFAULT_MAX_PIXELS};

#[derive(Parser)]
#[command(name = "seg", version, about = "Scribble-driven and unsupervised texture segmentation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an image from a scribble label map.
    Supervised {
        #[arg(long)]
        image: PathBuf,
        /// Label map: 0 = unlabeled, 1..=n = scribbled label.
        #[arg(long)]
        scribbles: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Segment an image without scribbles; labels are pruned by their cost.
    Unsupervised {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Mean per-label Dice score of two label maps.
    Dice {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Greedily match result labels to truth labels first.
        #[arg(long)]
        r#match: bool,
    },
    /// Supervised runs over a manifest of `image scribbles truth` lines.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// HTTP session service.
    Serve {
        #[arg(long, env = "SEG_BIND", default_value = "127.0.0.1:8080")]
        bind: std::net::SocketAddr,
        #[arg(long, env = "SEG_MAX_PIXELS", default_value_t = DEFAULT_MAX_PIXELS)]
        max_pixels: usize,
        /// Operator file; the default operator otherwise.
        #[arg(long)]
        operator: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Directory for `labels.png` and `overlay.png`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print diagnostics as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Temperature {
    PerLabel,
    SharedMean,
    SharedMax,
}

impl From<Temperature> for TextureTemperature {
    fn from(t: Temperature) -> Self {
        match t {
            Temperature::PerLabel => TextureTemperature::PerLabel,
            Temperature::SharedMean => TextureTemperature::SharedMean,
            Temperature::SharedMax => TextureTemperature::SharedMax,
        }
    }
}

/// Overrides on top of the mode defaults (or of `--config`).
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON file with any subset of the configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Analysis operator file; the built-in DCT operator otherwise.
    #[arg(long)]
    operator: Option<PathBuf>,
    #[arg(long)]
    patch_side: Option<usize>,
    #[arg(long)]
    overcompleteness: Option<f64>,
    #[arg(long)]
    sigma_tex: Option<f64>,
    /// Patch mask std in pixels (default patch_side / 4).
    #[arg(long)]
    mask_std: Option<f64>,
    #[arg(long)]
    sigma_color: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long, value_enum)]
    temperature: Option<Temperature>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Use the mean gradient magnitude as gamma.
    #[arg(long)]
    mean_gamma: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Initial class count, split into color x texture classes.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    color_classes: Option<usize>,
    #[arg(long)]
    texture_classes: Option<usize>,
    #[arg(long)]
    max_classes: Option<usize>,
    #[arg(long)]
    beta_color: Option<f64>,
    #[arg(long)]
    beta_tex: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Color-only data term.
    #[arg(long)]
    no_texture: bool,
    #[arg(long)]
    max_scribble_samples: Option<usize>,
    #[arg(long)]
    cluster_sample_limit: Option<usize>,
}

macro_rules! set {
    ($config:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field {
            $config.$field = v;
        })*
    };
}

impl ConfigArgs {
    fn build(&self, base: SegConfig) -> Result<SegConfig, String> {
        let mut config = match &self.config {
            Some(path) => {
                let fail = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
                let text = std::fs::read_to_string(path).map_err(|e| fail(&e))?;
                let overrides: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(&e))?;
                let serde_json::Value::Object(overrides) = overrides else {
                    return Err(fail(&"expected a JSON object"));
                };
                // fields missing from the file keep the defaults of the mode
                let mut merged = serde_json::to_value(&base).map_err(|e| fail(&e))?;
                let fields = merged.as_object_mut().expect("config serializes to an object");
                fields.extend(overrides);
                fields.insert("mode".into(), serde_json::to_value(base.mode).map_err(|e| fail(&e))?);
                serde_json::from_value(merged).map_err(|e| fail(&e))?
            }
            None => base,
        };
        set!(
            config, self, patch_side, overcompleteness, sigma_tex, sigma_color, alpha, beta0, gamma, lambda, nu,
            color_classes, texture_classes, max_classes, beta_color, max_iters, tol, seed, max_scribble_samples,
            cluster_sample_limit
        );
        if self.mask_std.is_some() {
            config.mask_std = self.mask_std;
        }
        if self.beta_tex.is_some() {
            config.beta_tex = self.beta_tex;
        }
        if let Some(t) = self.temperature {
            config.temperature = t.into();
        }
        if let Some(n) = self.n {
            config.set_initial_classes(n).map_err(|e| e.to_string())?;
        }
        config.mean_gamma |= self.mean_gamma;
        config.use_texture &= !self.no_texture;
        Ok(config)
    }

    fn segmenter(&self, base: SegConfig) -> Result<Segmenter, String> {
        let config = self.build(base)?;
        let result = match &self.operator {
            Some(path) => AnalysisOperator::load(path).and_then(|op| Segmenter::with_operator(config, Arc::new(op))),
            None => Segmenter::new(config),
        };
        result.map_err(|e| e.to_string())
    }
}

fn report(report: &SegmentationReport, image: &Path, output: &OutputArgs) -> Result<(), String> {
    let labels: Vec<usize> = report.active_labels.iter().map(|l| l + 1).collect();
    if output.json {
        let value = serde_json::json!({
            "image": image.display().to_string(),
            "energy": report.energy,
            "gap": report.gap,
            "iterations": report.iterations,
            "converged": report.converged,
            "millis": report.millis,
            "labels": labels,
        });
        println!("{value}");
    } else {
        println!(
            "energy={:.6} gap={:.6} iterations={} converged={} millis={} labels={labels:?}",
            report.energy, report.gap, report.iterations, report.converged, report.millis
        );
    }
    Ok(())
}

fn write_outputs(report: &SegmentationReport, image_path: &Path, output: &OutputArgs) -> Result<(), String> {
    let Some(dir) = &output.out else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let labels = report.label_map().map_err(|e| e.to_string())?;
    save_label_map(dir.join("labels.png"), &labels).map_err(|e| e.to_string())?;
    let image = load_image(image_path).map_err(|e| e.to_string())?;
    save_image(dir.join("overlay.png"), &overlay(&image, report.segmentation.labels(), 0.5)).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), String> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())?;
    }
    match cli.command {
        Command::Supervised { image, scribbles, output, config } => {
            let segmenter = config.segmenter(SegConfig::supervised())?;
            let result = segmenter.segment_supervised_files(&image, &scribbles).map_err(|e| e.to_string())?;
            report(&result, &image, &output)?;
            write_outputs(&result, &image, &output)
        }
        Command::Unsupervised { image, output, config } => {
            let segmenter = config.segmenter(SegConfig::unsupervised())?;
            let img = load_image(&image).map_err(|e| e.to_string())?;
            let result = segmenter.segment_unsupervised(&img).map_err(|e| e.to_string())?;
            report(&result, &image, &output)?;
            write_outputs(&result, &image, &output)
        }
        Command::Dice { result, truth, r#match } => {
            let result = load_label_map(&result).map_err(|e| e.to_string())?;
            let truth = load_label_map(&truth).map_err(|e| e.to_string())?;
            let score = if r#match {
                let to_usize = |m: &ndarray::Array2<u8>| m.mapv(usize::from);
                let matched = coseg::match_labels(&to_usize(&result), &to_usize(&truth)).map_err(|e| e.to_string())?;
                coseg::dice_score(&matched, &to_usize(&truth))
            } else {
                coseg::dice_score(&result, &truth)
            }
            .map_err(|e| e.to_string())?;
            println!("{score:.6}");
            Ok(())
        }
        Command::Bench { manifest, config } => {
            let segmenter = config.segmenter(SegConfig::supervised())?;
            let text = std::fs::read_to_string(&manifest).map_err(|e| format!("{}: {e}", manifest.display()))?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let entries = parse_manifest(&text, base).map_err(|e| e.to_string())?;
            let rows = run_bench(&segmenter, &entries).map_err(|e| e.to_string())?;
            print!("{}", format_bench_table(&rows));
            Ok(())
        }
        Command::Serve { bind, max_pixels, operator } => {
            let operator = match operator {
                Some(path) => AnalysisOperator::load(path),
                None => AnalysisOperator::default_operator(9, 2.0),
            }
            .map_err(|e| e.to_string())?;
            tracing_subscriber::fmt()
                .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
                .init();
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime
                .block_on(coseg_service::serve(ServiceConfig { bind, max_pixels }, Arc::new(operator)))
                .map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seg: error: {e}");
            ExitCode::FAILURE
        }
    }
}
