use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use regionfer::cam::{face_heatmaps, write_heatmap};
use regionfer::data::{
    generate_synthetic, generate_wide_crops, ingest_expw, ingest_ferplus, ingest_rafdb, sidecar_for, Dataset,
    DatasetManifest, ExpwOptions, FerplusOptions, LabeledFace, Split, SyntheticOptions,
};
use regionfer::evaluation::{compare_regions, evaluate, export_features as export_table, ConfusionMatrix};
use regionfer::imaging::{read_gray, write_gray};
use regionfer::models::{Architecture, ClassifierConfig, VisualizerConfig};
use regionfer::regions::{extract_region, region_box, LandmarkSet68, Region};
use regionfer::training::{train_with_progress, Checkpoint, TrainConfig};
use regionfer::Error;

use crate::{
    CamArgs, EvalArgs, ExportArgs, ModelKind, Output, PrepareArgs, PrepareSource, RegionsArgs, SynthArgs, SynthKind,
    TrainArgs, OUT_ENV,
};

/// `println!` that stays quiet when stdout is a closed pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const GRID_CELL: usize = 24;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Io { .. } => 1,
                Error::ClassMismatch { .. } | Error::WrongModelKind { .. } | Error::Checkpoint(_) => 3,
                Error::Divergence { .. } => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("regionfer-out"))
}

fn resolve_out(output: &Output, default_name: &str) -> PathBuf {
    output.out.clone().unwrap_or_else(|| out_root().join(default_name))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        usage(format!("{what} not found: {}", path.display()))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        usage(format!("{what} not found: {}", path.display()))
    }
}

fn require_store(path: &Path) -> Result<()> {
    require_file(&path.join("manifest.json"), "prepared store manifest")
}

/// Refuses to write over an existing file or non-empty directory.
fn guard(path: &Path, force: bool) -> Result<()> {
    let occupied = if path.is_dir() {
        fs::read_dir(path).map_or(true, |mut d| d.next().is_some())
    } else {
        path.exists()
    };
    if occupied && !force {
        return usage(format!("{} already exists; pass --force to overwrite", path.display()));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(s.parse()?)
}

fn parse_region(s: &str) -> Result<Region> {
    Ok(s.parse()?)
}

fn print_manifest(dir: &Path, m: &DatasetManifest) {
    out!("store\t{}", dir.display());
    out!("dataset\t{}", m.name);
    out!("classes\t{}", m.class_names.join(","));
    out!("train\t{}", m.train_total());
    out!("test\t{}", m.test_total());
    for d in &m.discrepancies {
        out!("discrepancy\t{d}");
    }
}

fn save_store(ds: &Dataset, out: &Path) -> Result<()> {
    create_dir(out)?;
    ds.save(out)?;
    print_manifest(out, &ds.manifest());
    Ok(())
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    match args.source {
        PrepareSource::Ferplus {
            pixels,
            votes,
            vote_threshold,
            output,
        } => {
            require_file(&pixels, "pixel CSV")?;
            require_file(&votes, "vote CSV")?;
            if !(vote_threshold > 0.0 && vote_threshold <= 1.0) {
                return usage(format!("--vote-threshold must lie in (0, 1], got {vote_threshold}"));
            }
            let out = resolve_out(&output, "ferplus");
            guard(&out, output.force)?;
            let ds = ingest_ferplus(&pixels, &votes, FerplusOptions { vote_threshold })?;
            save_store(&ds, &out)
        }
        PrepareSource::Rafdb { images, labels, output } => {
            require_dir(&images, "image directory")?;
            require_file(&labels, "label list")?;
            let out = resolve_out(&output, "rafdb");
            guard(&out, output.force)?;
            save_store(&ingest_rafdb(&images, &labels)?, &out)
        }
        PrepareSource::Expw {
            images,
            labels,
            min_confidence,
            seed,
            output,
        } => {
            require_dir(&images, "image directory")?;
            require_file(&labels, "label file")?;
            let out = resolve_out(&output, "expw");
            guard(&out, output.force)?;
            let opts = ExpwOptions {
                min_confidence,
                split_seed: seed,
            };
            save_store(&ingest_expw(&images, &labels, opts)?, &out)
        }
    }
}

fn requested_regions(names: &[String]) -> Result<Vec<Region>> {
    if names.is_empty() {
        return Ok(Region::STANDARD.to_vec());
    }
    names.iter().map(|n| parse_region(n)).collect()
}

pub fn regions(args: RegionsArgs) -> Result<()> {
    let regions = requested_regions(&args.region)?;
    let Some(image_path) = &args.image else {
        out!("region\tlandmarks");
        for r in regions {
            let idx: Vec<String> = r.indices().iter().map(|i| i.to_string()).collect();
            out!("{r}\t{}", idx.join(","));
        }
        return Ok(());
    };
    require_file(image_path, "image")?;
    if !(args.margin >= 0.0 && args.margin.is_finite()) {
        return usage(format!("--margin must be non-negative, got {}", args.margin));
    }
    let landmarks = match &args.landmarks {
        Some(p) => {
            require_file(p, "landmark file")?;
            LandmarkSet68::read(p)?
        }
        None => match sidecar_for(image_path)? {
            Some(l) => l,
            None => return usage(format!("no landmark sidecar next to {}", image_path.display())),
        },
    };
    let image = read_gray(image_path)?;
    if let Some(out) = &args.out {
        guard(out, args.force)?;
        create_dir(out)?;
    }
    let stem = image_path
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    out!("region\tleft\ttop\tright\tbottom\twidth\theight");
    for r in regions {
        let b = region_box(image.width(), image.height(), &landmarks, r, args.margin)?;
        out!(
            "{r}\t{}\t{}\t{}\t{}\t{}\t{}",
            b.left,
            b.top,
            b.right,
            b.bottom,
            b.width(),
            b.height()
        );
        if let Some(out) = &args.out {
            let crop = extract_region(&image, &landmarks, r, args.margin)?;
            write_gray(&out.join(format!("{stem}.{r}.pgm")), &crop.pixels)?;
        }
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let out = resolve_out(&args.output, "synthetic");
    guard(&out, args.output.force)?;
    let ds = match args.kind {
        SynthKind::Faces => {
            let mut opts = SyntheticOptions::new(args.classes, args.per_class, parse_region(&args.signal)?, args.seed);
            if !(args.noise_std >= 0.0 && args.noise_std.is_finite()) {
                return usage(format!("--noise-std must be non-negative, got {}", args.noise_std));
            }
            opts.noise_std = args.noise_std;
            generate_synthetic(&opts)?
        }
        SynthKind::Wide => generate_wide_crops(args.classes, args.per_class, args.seed)?,
    };
    save_store(&ds, &out)
}

fn parse_plan(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split('/')
        .map(|stage| {
            stage
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Usage(format!("bad width `{w}` in --plan `{text}`")))
                })
                .collect()
        })
        .collect()
}

fn architecture(args: &TrainArgs, classes: usize) -> Result<Architecture> {
    Ok(match args.model {
        ModelKind::Classifier => {
            let plan = match &args.plan {
                Some(p) => parse_plan(p)?,
                None => ClassifierConfig::default_plan(),
            };
            Architecture::Classifier(ClassifierConfig::new(plan, classes))
        }
        ModelKind::Visualizer => {
            if args.plan.is_some() {
                return usage("--plan applies to the classifier only");
            }
            Architecture::Visualizer(VisualizerConfig {
                initial_channels: args.initial_channels,
                blocks: args.blocks,
                layers_per_block: args.layers_per_block,
                growth_rate: args.growth_rate,
                compression: args.compression,
                ..VisualizerConfig::with_classes(classes)
            })
        }
    })
}

fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

pub fn train(args: TrainArgs) -> Result<()> {
    require_store(&args.data)?;
    let region = parse_region(&args.region)?;
    let out = resolve_out(&args.output, &format!("{}-{region}.frxa", args.model_name()));
    if out.is_dir() {
        return usage(format!(
            "{} is a directory; --out names the checkpoint file",
            out.display()
        ));
    }
    guard(&out, args.output.force)?;
    guard(&log_path(&out), args.output.force)?;
    let config = TrainConfig {
        lr0: args.lr0,
        max_epochs: args.max_epochs,
        batch_size: args.batch_size,
        runs: args.runs,
        lr_decay_factor: args.lr_decay,
        lr_patience: args.lr_patience,
        stop_patience: args.stop_patience,
        min_lr: args.min_lr,
        seed: args.seed,
        augmentation: !args.no_augment,
        padding: !args.no_padding,
        margin: args.margin,
    };
    config.validate()?;
    let dataset = Dataset::load(&args.data)?;
    let arch = architecture(&args, dataset.num_classes())?;
    arch.validate()?;
    let quiet = args.quiet;
    let outcome = train_with_progress(&arch, &dataset, region, &config, |entry| {
        if !quiet {
            eprintln!("{entry}");
        }
    })?;
    let mut log: String = outcome.log.iter().map(|e| format!("{e}\n")).collect();
    let summary = &outcome.checkpoint.summary;
    log.push_str(&format!(
        "selected_run={} best_test_accuracy={:.6}\n",
        summary.selected_run, outcome.checkpoint.best_test_accuracy
    ));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    outcome.checkpoint.save(&out)?;
    write_text(&log_path(&out), &log)?;
    out!("checkpoint\t{}", out.display());
    out!("region\t{region}");
    out!("model\t{}", arch.kind());
    out!("selected_run\t{}", summary.selected_run);
    out!("best_test_accuracy\t{:.6}", outcome.checkpoint.best_test_accuracy);
    Ok(())
}

impl TrainArgs {
    fn model_name(&self) -> &'static str {
        match self.model {
            ModelKind::Classifier => "classifier",
            ModelKind::Visualizer => "visualizer",
        }
    }
}

fn write_grid(dir: &Path, stem: &str, matrix: &ConfusionMatrix) -> Result<()> {
    let grid = matrix.render_grid(GRID_CELL);
    for ext in ["png", "pgm"] {
        write_gray(&dir.join(format!("{stem}.{ext}")), &grid)?;
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    require_store(&args.data)?;
    let split = parse_split(&args.split)?;
    let checkpoints = args
        .checkpoint
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    let out = resolve_out(&args.output, "eval");
    guard(&out, args.output.force)?;
    let dataset = Dataset::load(&args.data)?;
    if checkpoints.len() == 1 && !args.compare {
        let ckpt = &checkpoints[0];
        let mut result = evaluate(ckpt, &dataset, split)?;
        let mut masked = None;
        if args.mask_contempt {
            if let Some(c) = dataset.class_names.iter().position(|n| n == "contempt") {
                result.matrix = result.matrix.without_class(c);
                result.accuracy = result.matrix.accuracy();
                masked = Some("contempt");
            }
        }
        let mut text = format!(
            "# evaluation\tdataset={}\tsplit={split}\tregion={}\tmodel={}",
            dataset.name,
            ckpt.input.region,
            ckpt.architecture.kind()
        );
        if let Some(m) = masked {
            text.push_str(&format!("\tmasked={m}"));
        }
        text.push_str(&format!(
            "\naccuracy\t{:.6}\nsamples\t{}\n\n{}",
            result.accuracy,
            result.matrix.total(),
            result.matrix.to_text()
        ));
        create_dir(&out)?;
        write_text(&out.join("report.txt"), &text)?;
        write_grid(&out, "confusion", &result.matrix)?;
        out!("report\t{}", out.join("report.txt").display());
        out!("{}\t{:.6}", ckpt.input.region, result.accuracy);
        return Ok(());
    }
    let report = compare_regions(&checkpoints, &dataset, split, args.mask_contempt)?;
    create_dir(&out)?;
    write_text(&out.join("region_report.txt"), &report.to_text())?;
    for row in &report.rows {
        if let Some(e) = &row.result {
            write_grid(&out, &format!("confusion.{}", row.region), &e.matrix)?;
        }
    }
    out!("report\t{}", out.join("region_report.txt").display());
    for row in &report.rows {
        match &row.result {
            Some(e) => out!("{}\t{:.6}", row.region, e.accuracy),
            None => out!("{}\tabsent", row.region),
        }
    }
    Ok(())
}

fn parse_classes(spec: &str, names: &[String]) -> Result<Vec<usize>> {
    if spec == "all" {
        return Ok((0..names.len()).collect());
    }
    spec.split(',')
        .map(|t| {
            let t = t.trim();
            names
                .iter()
                .position(|n| n == t)
                .or_else(|| t.parse::<usize>().ok().filter(|&i| i < names.len()))
                .ok_or_else(|| CliError::Usage(format!("unknown class `{t}`; known: {}", names.join(","))))
        })
        .collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cam(args: CamArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if !matches!(ckpt.architecture, Architecture::Visualizer(_)) {
        return Err(Error::WrongModelKind {
            expected: "visualizer",
            found: ckpt.architecture.kind(),
        }
        .into());
    }
    let classes = parse_classes(&args.classes, &ckpt.class_names)?;
    let mut faces: Vec<(String, LabeledFace)> = Vec::new();
    if let Some(data) = &args.data {
        require_store(data)?;
        let split = parse_split(&args.split)?;
        let dataset = Dataset::load(data)?;
        if dataset.class_names != ckpt.class_names {
            return Err(Error::ClassMismatch {
                expected: ckpt.class_names.clone(),
                found: dataset.class_names.clone(),
            }
            .into());
        }
        for (i, face) in dataset.split(split).take(args.limit).enumerate() {
            faces.push((format!("{split}-{i:06}"), face.clone()));
        }
    } else if args.image.is_empty() {
        return usage("give --image or --data");
    } else {
        for path in &args.image {
            require_file(path, "image")?;
        }
        for path in &args.image {
            let face = LabeledFace {
                image: read_gray(path)?,
                label: 0,
                landmarks: sidecar_for(path)?,
                split: Split::Test,
                source_id: path.display().to_string(),
            };
            faces.push((file_stem(path), face));
        }
    }
    let out = resolve_out(&args.output, "cam");
    guard(&out, args.output.force)?;
    create_dir(&out)?;
    let mut model = ckpt.model()?;
    out!("image\tclass\tcam_sum\tpng\tppm");
    for (stem, face) in &faces {
        for (map, &c) in face_heatmaps(&ckpt, &mut model, face, &classes)?.iter().zip(&classes) {
            let [png, ppm] = write_heatmap(&out, stem, &ckpt.class_names[c], &map.image)?;
            out!(
                "{stem}\t{}\t{:.6}\t{}\t{}",
                ckpt.class_names[c],
                map.cam.sum(),
                png.display(),
                ppm.display()
            );
        }
    }
    Ok(())
}

pub fn export_features(args: ExportArgs) -> Result<()> {
    require_store(&args.data)?;
    let split = parse_split(&args.split)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let out = resolve_out(&args.output, "features.tsv");
    if out.is_dir() {
        return usage(format!("{} is a directory; --out names the table file", out.display()));
    }
    guard(&out, args.output.force)?;
    let dataset = Dataset::load(&args.data)?;
    let table = export_table(&ckpt, &dataset, split)?;
    write_text(&out, &table.to_tsv())?;
    out!("features\t{}", out.display());
    out!("rows\t{}", table.rows.len());
    out!("width\t{}", table.width());
    Ok(())
}
