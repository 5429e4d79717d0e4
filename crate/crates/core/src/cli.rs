//! Command-line front end. `dispatch` parses argv, runs one subcommand and
//! returns the process exit code: 0 on success, 1 on usage errors, 2 on data
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::bake::{
    iterative_bake, BakeConfig, BakeContext, BakeResult, ExternalUncertainty, HeuristicUncertainty, ImageDirProvider,
    OracleUncertainty, RenderProvider, UncertaintySource, ViewProvider, ZeroUncertainty,
};
use crate::camera::{canonical_candidates, read_views, View};
use crate::error::{Error, Result};
use crate::errsim::{compare_over_seeds, make_uq_training_pairs, psnr, CorruptionKind, CorruptionSpec};
use crate::geometry::{load_obj, normalize_to_unit, write_obj, TriMesh};
use crate::image::Image;
use crate::io::{read_pfm, read_png, write_json, write_pfm, write_png, FloatMap, Png8};
use crate::pbrtex::{decode_mr, encode_mr, MrEncodedImage, TextureSet};
use crate::raster::{render_gbuffer, render_preview};
use crate::uncertainty::{mean_ssim, SsimConfig, UncertaintyMap};
use crate::viewsel::{greedy_select_with, SelectionState, Strategy, UqScore};
use crate::{fixtures, kernels};

const THREADS_ENV: &str = "NITEX_THREADS";
const FIXTURE_TEXTURE_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "nitex", version, about = "Multi-view PBR texture baking")]
struct Cli {
    /// Worker threads (falls back to NITEX_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render normal, position, depth and mask maps per view.
    Gbuffers(RunArgs),
    /// Iterative bake from view images or renders of reference textures.
    Bake(RunArgs),
    /// Plan a view order without acquiring images.
    SelectViews(RunArgs),
    /// Corrupt renders and write uncertainty training pairs.
    Simulate(SimulateArgs),
    /// Compare uncertainty- and coverage-driven selection on corrupted views.
    Compare(RunArgs),
    /// Image metrics.
    Metrics {
        #[arg(value_enum)]
        metric: Metric,
        a: PathBuf,
        b: PathBuf,
        /// Optional 1-channel PNG restricting the comparison.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Numeric kernel checks.
    Kernels {
        #[command(subcommand)]
        action: KernelAction,
    },
    /// Write a bundled fixture mesh, reference textures and optional renders.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Psnr,
    Ssim,
}

#[derive(Subcommand, Debug)]
enum KernelAction {
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Settings shared by the pipeline subcommands. Every field can also come
/// from a JSON file given with `--config`; flags take precedence.
#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// OBJ mesh; normalized to the unit box on load.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Bundled fixture used in place of --mesh/--textures.
    #[arg(long)]
    fixture: Option<String>,
    /// Directory with albedo.png and optional mr.png.
    #[arg(long)]
    textures: Option<PathBuf>,
    /// Directory with view_{id:03}.png and optional mr_{id:03}.png.
    #[arg(long)]
    images: Option<PathBuf>,
    /// View set JSON or `canonical`.
    #[arg(long)]
    views: Option<String>,
    /// Frequency multiplier of fixture textures.
    #[arg(long)]
    detail: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    max_views: Option<usize>,
    /// Stopping threshold on mean footprint uncertainty.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epsilon1: Option<f64>,
    #[arg(long, value_parser = parse_uq_score)]
    uq_score: Option<UqScore>,
    /// oracle, heuristic, zero or external:<dir>.
    #[arg(long)]
    uncertainty: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of comparison seeds (0..n).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Corruption kind; omit for the hole+blur suite.
    #[arg(long)]
    kind: Option<CorruptionKind>,
    #[arg(long, default_value_t = 4.0)]
    magnitude: f64,
    #[arg(long, default_value_t = 0.2)]
    region: f64,
    /// Comma-separated view ids; defaults to every view.
    #[arg(long, value_delimiter = ',')]
    view_ids: Option<Vec<u32>>,
}

#[derive(Args, Debug, Clone)]
struct FixtureArgs {
    #[arg(value_parser = clap::builder::PossibleValuesParser::new(fixtures::NAMES))]
    name: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    resolution: usize,
    #[arg(long, default_value_t = 4.0)]
    detail: f64,
    #[arg(long, default_value_t = FIXTURE_TEXTURE_SEED)]
    seed: u64,
    /// Also render every canonical view into the output directory.
    #[arg(long)]
    render: bool,
}

fn parse_uq_score(s: &str) -> std::result::Result<UqScore, String> {
    match s {
        "mean" => Ok(UqScore::Mean),
        "sum" => Ok(UqScore::Sum),
        _ => Err(format!("expected mean or sum, got {s:?}")),
    }
}

/// Fully resolved run settings, as recorded in `run_manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: Option<PathBuf>,
    pub fixture: Option<String>,
    pub textures: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub views: Option<String>,
    pub detail: Option<f64>,
    pub resolution: Option<usize>,
    pub strategy: Option<Strategy>,
    pub max_views: Option<usize>,
    pub epsilon: Option<f64>,
    pub epsilon1: Option<f64>,
    pub uq_score: Option<UqScore>,
    pub uncertainty: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<RunConfig>(&text)?
            }
            None => RunConfig::default(),
        };
        Ok(RunConfig {
            mesh: self.mesh.clone().or(file.mesh),
            fixture: self.fixture.clone().or(file.fixture),
            textures: self.textures.clone().or(file.textures),
            images: self.images.clone().or(file.images),
            views: self.views.clone().or(file.views),
            detail: self.detail.or(file.detail),
            resolution: self.resolution.or(file.resolution),
            strategy: self.strategy.or(file.strategy),
            max_views: self.max_views.or(file.max_views),
            epsilon: self.epsilon.or(file.epsilon),
            epsilon1: self.epsilon1.or(file.epsilon1),
            uq_score: self.uq_score.or(file.uq_score),
            uncertainty: self.uncertainty.clone().or(file.uncertainty),
            seed: self.seed.or(file.seed),
            seeds: self.seeds.or(file.seeds),
            out: self.out.clone().or(file.out),
        })
    }
}

impl RunConfig {
    fn bake_config(&self) -> BakeConfig {
        let d = BakeConfig::default();
        BakeConfig {
            resolution: self.resolution.unwrap_or(d.resolution),
            strategy: self.strategy.unwrap_or(d.strategy),
            max_views: self.max_views.unwrap_or(d.max_views),
            threshold: self.epsilon.unwrap_or(d.threshold),
            epsilon1: self.epsilon1.unwrap_or(d.epsilon1),
            uq_score: self.uq_score.unwrap_or(d.uq_score),
            ..d
        }
    }

    fn out_dir(&self) -> CliResult<&Path> {
        let out = self.out.as_deref().ok_or_else(|| usage("--out is required"))?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(out)
    }
}

/// Which failures are the caller's fault.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn dispatch(argv: &[String]) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 2;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `nitex --help` for usage");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// 0 lets rayon pick.
fn thread_count(flag: Option<usize>) -> std::result::Result<usize, String> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{THREADS_ENV}={v:?} is not a thread count")),
        Err(_) => Ok(0),
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Gbuffers(a) => cmd_gbuffers(&a),
        Command::Bake(a) => cmd_bake(&a),
        Command::SelectViews(a) => cmd_select(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Metrics { metric, a, b, mask } => cmd_metrics(metric, &a, &b, mask.as_deref()),
        Command::Kernels {
            action: KernelAction::Selftest { seed },
        } => cmd_selftest(seed),
        Command::Fixture(a) => cmd_fixture(&a),
    }
}

struct Scene {
    mesh: TriMesh,
    textures: Option<TextureSet>,
}

fn load_scene(cfg: &RunConfig, need_textures: bool) -> CliResult<Scene> {
    let (mesh, textures) = match (&cfg.fixture, &cfg.mesh) {
        (Some(_), Some(_)) => return Err(usage("--fixture and --mesh are mutually exclusive")),
        (Some(name), None) => {
            let mesh = fixtures::by_name(name).ok_or_else(|| usage(format!("unknown fixture {name:?}")))?;
            let textures = if cfg.textures.is_none() {
                let n = cfg.resolution.unwrap_or(BakeConfig::default().resolution);
                Some(fixtures::ground_truth_textures(
                    &mesh,
                    n,
                    cfg.detail.unwrap_or(4.0),
                    FIXTURE_TEXTURE_SEED,
                )?)
            } else {
                None
            };
            (mesh, textures)
        }
        (None, Some(path)) => (normalize_to_unit(&load_obj(path)?)?.0, None),
        (None, None) => return Err(usage("one of --mesh or --fixture is required")),
    };
    let textures = match &cfg.textures {
        Some(dir) => Some(read_textures(dir)?),
        None => textures,
    };
    if need_textures && textures.is_none() {
        return Err(usage("reference textures are required (--textures or --fixture)"));
    }
    Ok(Scene { mesh, textures })
}

fn read_textures(dir: &Path) -> Result<TextureSet> {
    let albedo = read_png(dir.join("albedo.png"))?;
    if albedo.channels != 3 || albedo.width != albedo.height {
        return Err(Error::invalid("albedo.png must be a square RGB image"));
    }
    let n = albedo.width;
    let mr_path = dir.join("mr.png");
    let (roughness, metallic) = if mr_path.exists() {
        let png = read_png(&mr_path)?;
        if png.channels != 3 || png.width != n || png.height != n {
            return Err(Error::dims("mr.png must be RGB and match albedo.png"));
        }
        decode_mr(&MrEncodedImage::from_rgb_bytes(n, n, &png.data)?)
    } else {
        (Image::filled(n, n, 1, 0.5), Image::filled(n, n, 1, 0.0))
    };
    TextureSet::new(albedo.to_image(), roughness, metallic)
}

fn load_views(cfg: &RunConfig) -> Result<Vec<View>> {
    match cfg.views.as_deref() {
        None | Some("canonical") => Ok(canonical_candidates()),
        Some(path) => read_views(path),
    }
}

fn uncertainty_source(spec: &str, textures: Option<&TextureSet>) -> CliResult<Box<dyn UncertaintySource>> {
    Ok(match spec {
        "oracle" => {
            let t = textures.ok_or_else(|| usage("oracle uncertainty needs reference textures"))?;
            Box::new(OracleUncertainty {
                ground_truth: t.albedo.clone(),
                ssim: SsimConfig::default(),
            })
        }
        "heuristic" => Box::new(HeuristicUncertainty),
        "zero" => Box::new(ZeroUncertainty),
        s => match s.strip_prefix("external:") {
            Some(dir) if !dir.is_empty() => Box::new(ExternalUncertainty { dir: dir.into() }),
            _ => return Err(usage(format!("unknown uncertainty source {s:?}"))),
        },
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hashes of the run's input files, keyed by path. Directories
/// contribute every regular file they contain.
fn input_hashes(cfg: &RunConfig, config_file: Option<&Path>) -> Result<BTreeMap<String, String>> {
    let mut paths: Vec<PathBuf> = Vec::new();
    paths.extend(config_file.map(Path::to_path_buf));
    paths.extend(cfg.mesh.clone());
    if let Some(v) = cfg.views.as_deref().filter(|v| *v != "canonical") {
        paths.push(v.into());
    }
    for dir in [cfg.textures.clone(), cfg.images.clone()].into_iter().flatten() {
        paths.push(dir);
    }
    if let Some(dir) = cfg.uncertainty.as_deref().and_then(|u| u.strip_prefix("external:")) {
        paths.push(dir.into());
    }
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(|e| Error::io(&p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.is_file())
                .collect();
            entries.sort();
            for e in entries {
                let bytes = std::fs::read(&e).map_err(|err| Error::io(&e, err))?;
                out.insert(e.display().to_string(), sha256_hex(&bytes));
            }
        } else {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            out.insert(p.display().to_string(), sha256_hex(&bytes));
        }
    }
    Ok(out)
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    config_file: Option<&Path>,
    extra: serde_json::Value,
    started: Instant,
) -> Result<()> {
    // the output location is not part of the run's identity
    let recorded = RunConfig { out: None, ..cfg.clone() };
    let manifest = json!({
        "command": command,
        "config": recorded,
        "settings": extra,
        "versions": {
            "nitex": env!("CARGO_PKG_VERSION"),
            "manifest": 1,
        },
        "inputs": input_hashes(cfg, config_file)?,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&manifest, out.join("run_manifest.json"))
}

fn write_mask(mask: &[bool], n: usize, path: &Path) -> Result<()> {
    write_png(&Png8::from_mask(n, mask.len() / n.max(1), mask), path)
}

fn write_mr(textures: &TextureSet, foreground: &[bool], path: &Path) -> Result<()> {
    let enc = encode_mr(&textures.roughness, &textures.metallic, foreground)?;
    write_png(
        &Png8 {
            width: enc.width,
            height: enc.height,
            channels: 3,
            data: enc.to_rgb_bytes(),
        },
        path,
    )
}

fn cmd_gbuffers(args: &RunArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let scene = load_scene(&cfg, false)?;
    let views = load_views(&cfg)?;
    let out = cfg.out_dir()?;
    for view in &views {
        let g = render_gbuffer(&scene.mesh, view);
        let n = g.resolution;
        let id = view.id;
        write_pfm(&FloatMap::from_image(&g.normal_image())?, out.join(format!("normal_{id:03}.pfm")))?;
        write_pfm(&FloatMap::from_image(&g.position_image())?, out.join(format!("position_{id:03}.pfm")))?;
        write_pfm(&FloatMap::from_image(&g.depth_image())?, out.join(format!("depth_{id:03}.pfm")))?;
        write_mask(&g.mask, n, &out.join(format!("mask_{id:03}.png")))?;
    }
    write_manifest(out, "gbuffers", &cfg, args.config.as_deref(), json!({ "views": views.len() }), started)?;
    Ok(())
}

fn cmd_bake(args: &RunArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let bake_cfg = cfg.bake_config();
    bake_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let scene = load_scene(&cfg, cfg.images.is_none())?;
    let views = load_views(&cfg)?;
    let uq_name = cfg.uncertainty.clone().unwrap_or_else(|| "oracle".into());
    let uq = uncertainty_source(&uq_name, scene.textures.as_ref())?;
    let image_provider;
    let render_provider;
    let provider: &dyn ViewProvider = match &cfg.images {
        Some(dir) => {
            image_provider = ImageDirProvider { dir: dir.clone() };
            &image_provider
        }
        None => {
            render_provider = RenderProvider {
                mesh: &scene.mesh,
                textures: scene.textures.as_ref().expect("checked by load_scene"),
            };
            &render_provider
        }
    };
    let out = cfg.out_dir()?;
    let result = iterative_bake(&scene.mesh, &views, provider, uq.as_ref(), &bake_cfg)?;
    write_bake_outputs(out, &result, &bake_cfg, &uq.name())?;
    write_manifest(out, "bake", &cfg, args.config.as_deref(), json!({ "bake": bake_cfg }), started)?;
    println!("views_used {:?}", result.views_used);
    Ok(())
}

fn write_bake_outputs(out: &Path, result: &BakeResult, cfg: &BakeConfig, uq_name: &str) -> Result<()> {
    let n = result.textures.resolution;
    write_png(&Png8::from_image(&result.textures.albedo), out.join("albedo.png"))?;
    write_mr(&result.textures, &result.occupancy, &out.join("mr.png"))?;
    write_mask(&result.coverage, n, &out.join("coverage.png"))?;
    write_pfm(&FloatMap::from_image(&result.residual_uncertainty.to_image())?, out.join("uncertainty.pfm"))?;
    let report = json!({
        "config": cfg,
        "uncertainty_source": uq_name,
        "views_used": result.views_used,
        "iterations": result.per_view_scores,
        "covered_texels": result.covered_count(),
        "occupied_texels": result.occupancy.iter().filter(|&&o| o).count(),
        "uncovered_fraction": result.uncovered_fraction(),
    });
    write_json(&report, out.join("bake_report.json"))
}

fn cmd_select(args: &RunArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let bake_cfg = cfg.bake_config();
    bake_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let scene = load_scene(&cfg, false)?;
    let views = load_views(&cfg)?;
    let ctx = BakeContext::new(&scene.mesh, &views, &bake_cfg)?;
    let n = ctx.resolution();
    // same seeds as a bake, assumed perfectly observed
    let seeds = vec![0, 1];
    let mut state = SelectionState {
        residual_uncertainty: UncertaintyMap::filled(n, 1.0),
        coverage: ctx.texels.occupied.iter().map(|&o| !o).collect(),
        candidate_footprints: ctx.footprints.clone(),
        used: seeds.clone(),
    };
    for id in &seeds {
        let fp = state
            .candidate_footprints
            .get(id)
            .ok_or_else(|| Error::invalid(format!("view set lacks seed view {id}")))?
            .clone();
        for t in fp {
            state.coverage[t as usize] = true;
            state.residual_uncertainty.values[t as usize] = 0.0;
        }
    }
    let (order, history) = greedy_select_with(
        &state,
        bake_cfg.strategy,
        bake_cfg.max_views,
        bake_cfg.threshold,
        bake_cfg.uq_score,
    )?;
    for id in &seeds {
        println!("{id} seed");
    }
    for (id, scores) in order[seeds.len()..].iter().zip(&history) {
        let s = scores.iter().find(|s| s.view_id == *id).expect("picked view was scored");
        println!("{id} {:.6}", s.score);
    }
    if let Some(out) = cfg.out.as_deref() {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(
            &json!({ "strategy": bake_cfg.strategy, "order": order, "scores": history }),
            out.join("selection_report.json"),
        )?;
        write_manifest(out, "select-views", &cfg, args.config.as_deref(), json!({ "bake": bake_cfg }), started)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = args.run.resolve()?;
    let scene = load_scene(&cfg, true)?;
    let textures = scene.textures.as_ref().expect("required");
    let seed = cfg.seed.unwrap_or(0);
    let specs = match args.kind {
        Some(kind) => vec![CorruptionSpec {
            kind,
            magnitude: args.magnitude,
            region_fraction: args.region,
            seed,
        }],
        None => crate::errsim::hole_blur_suite(seed),
    };
    for s in &specs {
        s.validate().map_err(|e| usage(e.to_string()))?;
    }
    let mut views = load_views(&cfg)?;
    if let Some(ids) = &args.view_ids {
        if let Some(bad) = ids.iter().find(|id| !views.iter().any(|v| v.id == **id)) {
            return Err(usage(format!("unknown view id {bad}")));
        }
        views.retain(|v| ids.contains(&v.id));
    }
    let out = cfg.out_dir()?;
    let pairs = make_uq_training_pairs(&scene.mesh, textures, &views, &specs)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (k, p) in pairs.iter().enumerate() {
        write_png(&Png8::from_image(&p.predicted), out.join(format!("pair_{k}_pred.png")))?;
        write_png(&Png8::from_image(&p.ground_truth), out.join(format!("pair_{k}_gt.png")))?;
        write_pfm(&FloatMap::from_image(&p.target.to_image())?, out.join(format!("pair_{k}_target.pfm")))?;
        entries.push(json!({
            "index": k,
            "view_id": p.view_id,
            "corruption": specs[p.spec_index],
            "covered_texels": p.covered.iter().filter(|&&c| c).count(),
            "mean_target": p.target.mean(),
        }));
    }
    write_json(&json!({ "pairs": entries }), out.join("pairs_manifest.json"))?;
    write_manifest(out, "simulate", &cfg, args.run.config.as_deref(), json!({ "specs": specs }), started)?;
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = args.resolve()?;
    let bake_cfg = cfg.bake_config();
    bake_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let seeds = cfg.seeds.unwrap_or(5);
    if seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let scene = load_scene(&cfg, true)?;
    let textures = scene.textures.as_ref().expect("required");
    if textures.resolution != bake_cfg.resolution {
        return Err(Error::dims(format!(
            "reference textures are {}² but the bake resolution is {}",
            textures.resolution, bake_cfg.resolution
        ))
        .into());
    }
    let views = load_views(&cfg)?;
    let out = cfg.out_dir()?;
    let ctx = BakeContext::new(&scene.mesh, &views, &bake_cfg)?;
    let seed_list: Vec<u64> = (0..seeds).collect();
    let report = compare_over_seeds(&ctx, textures, &seed_list, &bake_cfg)?;
    write_json(&report, out.join("compare_report.json"))?;
    for s in &report.summary {
        println!(
            "{} median_worst_view_psnr {:.4} mean_uncovered_fraction {:.6}",
            s.strategy.as_str(),
            s.median_worst_view_psnr,
            s.mean_uncovered_fraction
        );
    }
    write_manifest(
        out,
        "compare",
        &cfg,
        args.config.as_deref(),
        json!({ "bake": bake_cfg, "seeds": seed_list }),
        started,
    )?;
    Ok(())
}

fn read_any_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => Ok(read_pfm(path)?.to_image()),
        _ => Ok(read_png(path)?.to_image()),
    }
}

fn cmd_metrics(metric: Metric, a: &Path, b: &Path, mask: Option<&Path>) -> CliResult<()> {
    let ia = read_any_image(a)?;
    let ib = read_any_image(b)?;
    let mask = match mask {
        Some(p) => {
            let m = read_png(p)?;
            if m.channels != 1 {
                return Err(Error::invalid("mask must be a 1-channel PNG").into());
            }
            Some(m.data.iter().map(|&v| v > 127).collect::<Vec<bool>>())
        }
        None => None,
    };
    let v = match metric {
        Metric::Psnr => psnr(&ia, &ib, mask.as_deref())?,
        Metric::Ssim => mean_ssim(&ia, &ib, mask.as_deref(), &SsimConfig::default())?,
    };
    if v.is_infinite() {
        println!("inf");
    } else {
        println!("{v:.6}");
    }
    Ok(())
}

fn cmd_selftest(seed: u64) -> CliResult<()> {
    let checks = kernels::selftest(seed);
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {} worst={:.3e} tol={:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Error::invalid(format!("{failed} kernel check(s) failed")).into());
    }
    Ok(())
}

fn cmd_fixture(args: &FixtureArgs) -> CliResult<()> {
    let mesh = fixtures::by_name(&args.name).expect("validated by clap");
    if args.resolution == 0 {
        return Err(usage("--resolution must be positive"));
    }
    let out = args.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let obj = out.join("mesh.obj");
    std::fs::write(&obj, write_obj(&mesh)).map_err(|e| Error::io(&obj, e))?;
    let textures = fixtures::ground_truth_textures(&mesh, args.resolution, args.detail, args.seed)?;
    write_png(&Png8::from_image(&textures.albedo), out.join("albedo.png"))?;
    let n = textures.resolution;
    write_mr(&textures, &vec![true; n * n], &out.join("mr.png"))?;
    let views = canonical_candidates();
    let vjson = crate::camera::views_to_json(&views)?;
    let vpath = out.join("views.json");
    std::fs::write(&vpath, vjson).map_err(|e| Error::io(&vpath, e))?;
    if args.render {
        for v in &views {
            let p = render_preview(&mesh, &textures, v)?;
            write_png(&Png8::from_image(&p.color), out.join(format!("view_{:03}.png", v.id)))?;
        }
    }
    Ok(())
}
