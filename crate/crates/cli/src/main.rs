mod inputs;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fidlens::feature_io::{self, FeatureFile, FeatureFileReader, FeatureKind};
use fidlens::resampling::{
    binarize, optimize_resampling_weights, sample_with_replacement, top1_histogram_match,
    top_n_sweep, weights_to_probabilities, BinarizeMode, OptimizerConfig, ShortfallPolicy,
    SweepInputs, LOGITS_LEARNING_RATE, PRE_LOGITS_LEARNING_RATE,
};
use fidlens::sensitivity::{
    add_masked_noise, heatmap_for_image, render_diverging, Heatmap, NoiseRegion, PixelBuffer,
};
use fidlens::synth::{bias_probe, synth_generate, MixtureSpec};
use fidlens::{
    compute_stats, downdate_stats, frechet_distance, kid_polynomial, kid_rbf, KidConfig,
};
use log::info;

use inputs::*;

#[derive(Parser)]
#[command(
    name = "fidlens",
    version,
    about = "Fréchet and kernel distances over feature files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean and covariance of a feature file, written as a stats file.
    Stats {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fréchet distance between two feature or stats files.
    Fid {
        a: PathBuf,
        b: PathBuf,
        /// Compare feature files even when their kinds differ.
        #[arg(long)]
        force: bool,
    },
    /// Kernel inception distance (cubic polynomial, or RBF with --rbf).
    Kid {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        rbf: bool,
        /// RBF scale; defaults to 1/d.
        #[arg(long, requires = "rbf")]
        gamma: Option<f64>,
        #[arg(long)]
        subset_size: Option<usize>,
        #[arg(long, default_value_t = 100)]
        subsets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimize resampling weights and draw a resampled set.
    Resample(ResampleArgs),
    /// Pick generated rows whose Top-1 histogram matches the real one.
    Top1Match {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fill missing classes from the largest remaining bins instead of failing.
        #[arg(long)]
        allow_shortfall: bool,
        #[arg(long)]
        indices: Option<PathBuf>,
    },
    /// Resampled FID after Top-N or middle-N matching for several N, as TSV.
    TopnSweep {
        #[command(flatten)]
        pair: Pair,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        ns: Vec<usize>,
        #[arg(long, value_enum, default_value_t = SweepMode::Both)]
        mode: SweepMode,
        #[command(flatten)]
        opt: OptimizerArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Per-image sensitivity heatmaps as PNG files plus raw grids.
    Heatmap {
        /// Real statistics (stats or feature file).
        #[arg(long)]
        real: PathBuf,
        /// Generated pre-logit features with activations.
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out_dir: PathBuf,
        /// Only the first `limit` images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Masked-noise validation of heatmaps.
    NoiseProbe {
        #[command(subcommand)]
        action: NoiseAction,
    },
    /// Sample a mixture spec into a feature file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Mean FID between independent same-spec draws per sample size, as TSV.
    BiasProbe {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 5000, 20000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check feature and stats files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Pair {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
}

#[derive(Args)]
struct OptimizerArgs {
    /// Learning rate; defaults to 10 for pre-logits and 5 otherwise.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptimizerArgs {
    fn config(&self, default_lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.lr.unwrap_or(default_lr),
            max_iters: self.iters,
            eval_every: self.eval_every,
            sample_size: None,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Space {
    PreLogits,
    Logits,
    Binarized,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMode {
    Top,
    Middle,
    Both,
}

#[derive(Args)]
struct ResampleArgs {
    #[command(flatten)]
    pair: Pair,
    #[arg(long, value_enum, default_value_t = Space::PreLogits)]
    space: Space,
    #[arg(long, conflicts_with = "middle_n")]
    top_n: Option<usize>,
    #[arg(long)]
    middle_n: Option<usize>,
    #[command(flatten)]
    opt: OptimizerArgs,
    /// Required ratio of generated candidates to real samples.
    #[arg(long, default_value_t = 5.0)]
    oversample: f64,
    #[arg(long)]
    indices: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Resampled rows as a feature file.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NoiseAction {
    /// Write noised copies of PNG images for every region and sigma.
    Apply {
        /// Raw heatmap grids from `heatmap`, one grid per image in order.
        #[arg(long)]
        heatmaps: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        images: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = ["important".to_string(), "unimportant".to_string()])]
        regions: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// FID of each noised run against the real statistics, as TSV.
    Score {
        #[arg(long)]
        real: PathBuf,
        /// `region:sigma:features.fidl`, repeatable.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FIDLENS_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("FIDLENS_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            bail!("FIDLENS_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats { input, output } => {
            let file = load_features(&input)?;
            let stats = compute_stats(&file.features)?;
            feature_io::write_stats(&output, &stats)?;
            Ok(())
        }
        Command::Fid { a, b, force } => {
            let sa = load_stats(&a)?;
            let sb = load_stats(&b)?;
            if let (Some(ka), Some(kb)) = (sa.kind, sb.kind) {
                if ka != kb && !force {
                    bail!("refusing to compare {ka} features with {kb} features (use --force)");
                }
            }
            println!("{:.4}", frechet_distance(&sa.stats, &sb.stats)?);
            Ok(())
        }
        Command::Kid {
            a,
            b,
            rbf,
            gamma,
            subset_size,
            subsets,
            seed,
        } => {
            let fa = load_features(&a)?;
            let fb = load_features(&b)?;
            let cfg = KidConfig {
                subset_size: subset_size.unwrap_or_else(|| 1000.min(fa.count()).min(fb.count())),
                subsets,
                seed,
            };
            let value = if rbf {
                kid_rbf(&fa.features, &fb.features, gamma, &cfg)?
            } else {
                kid_polynomial(&fa.features, &fb.features, &cfg)?
            };
            println!("{value:.6}");
            Ok(())
        }
        Command::Resample(args) => resample(args),
        Command::Top1Match {
            real,
            gen,
            seed,
            allow_shortfall,
            indices,
        } => {
            let rf = load_features(&real)?;
            let gf = load_features(&gen)?;
            let policy = if allow_shortfall {
                ShortfallPolicy::Fill
            } else {
                ShortfallPolicy::Error
            };
            let m = top1_histogram_match(
                probabilities(&rf, &real)?,
                probabilities(&gf, &gen)?,
                seed,
                policy,
            )?;
            let real_stats = compute_stats(&rf.features)?;
            let before = uniform_fid(&real_stats, &gf, rf.count(), seed)?;
            let after = frechet_distance(&real_stats, &compute_stats(&select(&gf, &m.indices)?)?)?;
            println!("pre-match FID\t{before:.4}");
            println!("post-match FID\t{after:.4}");
            let off: Vec<String> = m
                .deviation
                .iter()
                .enumerate()
                .filter(|(_, d)| **d != 0)
                .map(|(c, d)| format!("{c}:{d:+}"))
                .collect();
            if !off.is_empty() {
                println!("histogram deviation\t{}", off.join(","));
            }
            if let Some(path) = indices {
                write_indices(&path, &m.indices)?;
            }
            Ok(())
        }
        Command::TopnSweep {
            pair,
            ns,
            mode,
            opt,
            output,
        } => {
            let rf = load_features(&pair.real)?;
            let gf = load_features(&pair.gen)?;
            let inputs = SweepInputs {
                real_probs: probabilities(&rf, &pair.real)?,
                gen_probs: probabilities(&gf, &pair.gen)?,
                real_features: &rf.features,
                gen_features: &gf.features,
            };
            let cfg = opt.config(LOGITS_LEARNING_RATE);
            let modes: &[BinarizeMode] = match mode {
                SweepMode::Top => &[BinarizeMode::Top],
                SweepMode::Middle => &[BinarizeMode::Middle],
                SweepMode::Both => &[BinarizeMode::Top, BinarizeMode::Middle],
            };
            let mut tsv = String::from("mode\tn\tfid\n");
            for &m in modes {
                let name = if m == BinarizeMode::Top {
                    "top"
                } else {
                    "middle"
                };
                for (n, fid) in top_n_sweep(inputs, &ns, m, &cfg)? {
                    tsv.push_str(&format!("{name}\t{n}\t{fid:.6}\n"));
                }
            }
            emit(output.as_deref(), &tsv)
        }
        Command::Heatmap {
            real,
            gen,
            height,
            width,
            out_dir,
            limit,
        } => heatmaps(&real, &gen, height, width, &out_dir, limit),
        Command::NoiseProbe { action } => noise_probe(action),
        Command::Synth {
            spec,
            n,
            seed,
            output,
        } => {
            let spec = load_spec(&spec)?;
            let sample = synth_generate(&spec, n, seed)?;
            let mut file = FeatureFile::new(FeatureKind::PreLogits, sample.features);
            file.probabilities = Some(sample.probabilities);
            feature_io::write_feature_file(&output, &file)?;
            Ok(())
        }
        Command::BiasProbe {
            spec,
            sizes,
            repeats,
            seed,
        } => {
            let spec = load_spec(&spec)?;
            let mut tsv = String::from("n\tmean_fid\n");
            for (n, fid) in bias_probe(&spec, &sizes, repeats, seed)? {
                tsv.push_str(&format!("{n}\t{fid:.6}\n"));
            }
            emit(None, &tsv)
        }
        Command::Validate { files } => {
            let mut failed = 0;
            for path in &files {
                match validate_one(path) {
                    Ok(summary) => println!("{}\tok\t{summary}", path.display()),
                    Err(e) => {
                        failed += 1;
                        println!("{}\tinvalid\t{e:#}", path.display());
                    }
                }
            }
            if failed > 0 {
                bail!("{failed} of {} files failed validation", files.len());
            }
            Ok(())
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_spec(path: &Path) -> Result<MixtureSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MixtureSpec::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn uniform_fid(
    real: &fidlens::GaussianStats,
    gen: &FeatureFile,
    m: usize,
    seed: u64,
) -> Result<f64> {
    let p = vec![1.0 / gen.count() as f64; gen.count()];
    let idx = sample_with_replacement(&p, m, seed)?;
    Ok(frechet_distance(
        real,
        &compute_stats(&select(gen, &idx)?)?,
    )?)
}

fn resample(args: ResampleArgs) -> Result<()> {
    let rf = load_features(&args.pair.real)?;
    let gf = load_features(&args.pair.gen)?;
    let needed = args.oversample * rf.count() as f64;
    if (gf.count() as f64) < needed {
        bail!(
            "{} generated candidates for {} real samples; {}x oversampling needs {}",
            gf.count(),
            rf.count(),
            args.oversample,
            needed.ceil()
        );
    }
    let (space_real, space_gen, default_lr) = match args.space {
        Space::Binarized => {
            let (n, mode) = match (args.top_n, args.middle_n) {
                (Some(n), None) => (n, BinarizeMode::Top),
                (None, Some(n)) => (n, BinarizeMode::Middle),
                _ => bail!("--space binarized needs --top-n or --middle-n"),
            };
            let r = binarize(probabilities(&rf, &args.pair.real)?, n, mode)?.to_features();
            let g = binarize(probabilities(&gf, &args.pair.gen)?, n, mode)?.to_features();
            (r, g, LOGITS_LEARNING_RATE)
        }
        space => {
            if args.top_n.is_some() || args.middle_n.is_some() {
                bail!("--top-n and --middle-n apply only to --space binarized");
            }
            let (expected, lr) = if space == Space::PreLogits {
                (FeatureKind::PreLogits, PRE_LOGITS_LEARNING_RATE)
            } else {
                (FeatureKind::Logits, LOGITS_LEARNING_RATE)
            };
            for (f, p) in [(&rf, &args.pair.real), (&gf, &args.pair.gen)] {
                if f.kind != expected && f.kind != FeatureKind::Generic {
                    bail!("{} holds {} features, not {expected}", p.display(), f.kind);
                }
            }
            (rf.features.clone(), gf.features.clone(), lr)
        }
    };
    let cfg = args.opt.config(default_lr);
    info!(
        "optimizing {} weights at learning rate {}",
        gf.count(),
        cfg.learning_rate
    );
    let result = optimize_resampling_weights(&space_real, &space_gen, &cfg)?;
    let p = weights_to_probabilities(&result.weights);
    let idx = sample_with_replacement(p.as_slice(), rf.count(), cfg.seed)?;
    let real_stats = compute_stats(&rf.features)?;
    let before = uniform_fid(&real_stats, &gf, rf.count(), cfg.seed)?;
    let resampled = select(&gf, &idx)?;
    let after = frechet_distance(&real_stats, &compute_stats(&resampled)?)?;
    println!("pre-resample FID\t{before:.4}");
    println!("post-resample FID\t{after:.4}");
    println!("selected iteration\t{}", result.selected.iteration);
    if let Some(path) = &args.indices {
        write_indices(path, &idx)?;
    }
    if let Some(path) = &args.trace {
        fs::write(path, result.trace.to_tsv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.output {
        feature_io::write_feature_file(path, &FeatureFile::new(gf.kind, resampled))?;
    }
    Ok(())
}

fn heatmaps(
    real: &Path,
    gen: &Path,
    height: usize,
    width: usize,
    out_dir: &Path,
    limit: Option<usize>,
) -> Result<()> {
    let real_stats = load_stats(real)?.stats;
    let mut reader =
        FeatureFileReader::open(gen).with_context(|| format!("reading {}", gen.display()))?;
    if reader.header().kind != FeatureKind::PreLogits {
        bail!(
            "{} holds {} features; heatmaps need pre-logits",
            gen.display(),
            reader.header().kind
        );
    }
    let all = compute_stats(reader.features())?;
    let n = reader.features().count();
    let count = limit.unwrap_or(n).min(n);
    let names: Vec<String> = match reader.image_ids() {
        Some(ids) => ids.iter().map(|s| sanitize(s)).collect(),
        None => (0..n).map(|i| format!("{i:06}")).collect(),
    };
    fs::create_dir_all(out_dir)?;
    let mut grids = Vec::with_capacity(count);
    for (i, name) in names.iter().enumerate().take(count) {
        let Some(acts) = reader.next_activation()? else {
            bail!("{} has no activations block", gen.display());
        };
        let f = reader.features().row(i);
        let base = downdate_stats(&all, &f)?;
        let heat = heatmap_for_image(&real_stats, &base, &f, &acts, n, height, width)
            .with_context(|| format!("image {i}"))?;
        write_png(&out_dir.join(format!("{name}.png")), &heat)?;
        grids.push(heat.values);
        info!("heatmap {}/{count}", i + 1);
    }
    let file = feature_io::grids_to_feature_file(&grids, height, width, None)?;
    feature_io::write_feature_file(out_dir.join("heatmaps.fidl"), &file)?;
    Ok(())
}

fn sanitize(id: &str) -> String {
    let stem = Path::new(id)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(id);
    stem.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_png(path: &Path, heat: &Heatmap) -> Result<()> {
    let rgb = render_diverging(heat);
    let img = image::RgbImage::from_raw(heat.width as u32, heat.height as u32, rgb)
        .context("heatmap buffer size")?;
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_png(path: &Path) -> Result<PixelBuffer> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Ok(PixelBuffer::new(h as usize, w as usize, data)?)
}

fn save_png(path: &Path, img: &PixelBuffer) -> Result<()> {
    let bytes = img
        .data
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let out = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .context("image buffer size")?;
    out.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn noise_probe(action: NoiseAction) -> Result<()> {
    match action {
        NoiseAction::Apply {
            heatmaps,
            images,
            sigmas,
            regions,
            seed,
            out_dir,
        } => {
            let grids = load_features(&heatmaps)?;
            let regions: Vec<NoiseRegion> = regions
                .iter()
                .map(|r| r.parse())
                .collect::<fidlens::Result<_>>()?;
            let width = grids.features.dim();
            if images.is_empty() || grids.count() % images.len() != 0 {
                bail!(
                    "{} heatmap rows cannot be split across {} images",
                    grids.count(),
                    images.len()
                );
            }
            let height = grids.count() / images.len();
            for (i, path) in images.iter().enumerate() {
                let img = load_png(path)?;
                if (img.height, img.width) != (height, width) {
                    bail!(
                        "{} is {}x{}, heatmaps are {height}x{width}",
                        path.display(),
                        img.height,
                        img.width
                    );
                }
                let values: Vec<f64> = (i * height..(i + 1) * height)
                    .flat_map(|r| grids.features.row(r).iter().copied().collect::<Vec<_>>())
                    .collect();
                let source =
                    fidlens::sensitivity::ImportanceMap::new(height, width, values.clone())?;
                let heat = Heatmap {
                    height,
                    width,
                    values,
                    source,
                };
                let name = path.file_name().context("image path has no file name")?;
                for region in &regions {
                    let mask = region.mask(&heat);
                    for (si, &sigma) in sigmas.iter().enumerate() {
                        let dir = out_dir.join(region.name()).join(format!("sigma_{sigma}"));
                        fs::create_dir_all(&dir)?;
                        let stream = (i * sigmas.len() + si) as u64;
                        let noisy = add_masked_noise(
                            &img,
                            &mask,
                            sigma,
                            fidlens::rng::derive_seed(seed, stream),
                        )?;
                        save_png(&dir.join(name), &noisy)?;
                    }
                }
            }
            Ok(())
        }
        NoiseAction::Score { real, runs } => {
            let real_stats = load_stats(&real)?.stats;
            let mut tsv = String::from("region\tsigma\tfid\n");
            for run in &runs {
                let parts: Vec<&str> = run.splitn(3, ':').collect();
                let [region, sigma, path] = parts[..] else {
                    bail!("run '{run}' is not region:sigma:path");
                };
                let region: NoiseRegion = region.parse()?;
                let sigma: f64 = sigma
                    .parse()
                    .with_context(|| format!("bad sigma in '{run}'"))?;
                let stats = load_stats(Path::new(path))?.stats;
                let fid = frechet_distance(&real_stats, &stats)?;
                tsv.push_str(&format!("{}\t{sigma}\t{fid:.6}\n", region.name()));
            }
            emit(None, &tsv)
        }
    }
}

fn validate_one(path: &Path) -> Result<String> {
    if is_stats_file(path)? {
        let s = feature_io::read_stats(path)?;
        return Ok(format!("stats d={} count={}", s.dim(), s.count));
    }
    let file = load_features(path)?;
    let h = file.header();
    let mut summary = format!("{} n={} d={}", file.kind, h.n, h.d);
    if h.classes > 0 {
        summary.push_str(&format!(" C={}", h.classes));
    }
    if file.activations.is_some() {
        let report = feature_io::validate_activation_consistency(&file)?;
        let worst = report
            .images
            .iter()
            .map(|i| i.deviation)
            .fold(0.0, f64::max);
        summary.push_str(&format!(
            " k={} s={} pooling deviation {worst:.2e}",
            h.channels, h.spatial
        ));
        if let Some(bad) = report.worst() {
            bail!(
                "image {} channel {} deviates from its pooled feature by {:.2e}",
                bad.index,
                bad.channel,
                bad.deviation
            );
        }
    }
    Ok(summary)
}
