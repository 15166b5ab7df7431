//! Command-line surface for the pipeline: oversegmentation, label
//! propagation, evaluation, descriptor dumps, KNN benchmarking, and
//! synthetic scene generation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use cloudmerge_core::cloud::{
    load_cloud_auto, load_labels, load_weak_labels, sample_weak_labels, save_cloud_ascii,
    save_labels, save_weak_labels, PointAssignment, PointCloud, WeakLabelSet,
};
use cloudmerge_core::config::SceneConfig;
use cloudmerge_core::descriptor::{compute_descriptors, save_descriptors, Descriptor, DescriptorKind};
use cloudmerge_core::geometry::{estimate_frames, LocalFrame};
use cloudmerge_core::merge::{
    extract_instances, save_instance_boxes, self_train, write_trace, BuiltinPredictor,
    FilePredictor, OraclePredictor, RegionPredictor,
};
use cloudmerge_core::metrics::{instance_ap50, miou, overseg_prf, ConfusionMatrix, Instance};
use cloudmerge_core::octree::{brute_force_knn, Octree};
use cloudmerge_core::overseg::{grow, initial_pseudo_labels, select_seeds, Partition};
use cloudmerge_core::synth::load_scene_spec;
use cloudmerge_core::{Error, Result};

#[derive(Parser)]
#[command(name = "cloudmerge", version, about = "Point-cloud weak-label pipeline")]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded region growing; writes the partition and region summary.
    Oversegment(OversegmentArgs),
    /// Full self-training loop; writes labels, trace, and instance boxes.
    Propagate(PropagateArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Per-point descriptor dump in the binary matrix format.
    Descriptor(DescriptorArgs),
    /// Octree vs brute-force KNN timing report.
    BenchKnn(BenchKnnArgs),
    /// Generate a synthetic scene from a spec file.
    Synth(SynthArgs),
    /// Re-run a previous command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// `key = value` config file, overridden by explicit flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long = "theta-th")]
    theta_th: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "t-merge")]
    t_merge: Option<f64>,
    #[arg(long = "t-seed")]
    t_seed: Option<f64>,
    #[arg(long = "lambda-n")]
    lambda_n: Option<f64>,
    #[arg(long = "lambda-des")]
    lambda_des: Option<f64>,
    #[arg(long = "lambda-seg")]
    lambda_seg: Option<f64>,
    #[arg(long = "n-ths")]
    n_ths: Option<usize>,
    #[arg(long = "n-total")]
    n_total: Option<usize>,
    /// Fraction of lowest-curvature points promoted to growth seeds.
    #[arg(long = "seed-fraction")]
    seed_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct WeakArgs {
    /// Existing weak-label file (`index class` rows).
    #[arg(long = "weak-labels", conflicts_with = "sample_fraction")]
    weak_labels: Option<PathBuf>,
    /// Sample this fraction of ground-truth labels as weak supervision.
    #[arg(long = "sample-fraction")]
    sample_fraction: Option<f64>,
}

#[derive(Args)]
struct OversegmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "descriptor-kind", value_enum, default_value_t = KindArg::AdaptedPfh)]
    kind: KindArg,
    #[command(flatten)]
    weak: WeakArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `builtin`, `oracle`, or `file:<dir>` with per-iteration matrices.
    #[arg(long, default_value = "builtin")]
    predictor: String,
    #[arg(long = "descriptor-kind", value_enum, default_value_t = KindArg::AdaptedPfh)]
    kind: KindArg,
    #[command(flatten)]
    weak: WeakArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Label file written by `propagate` (`index region class confidence`).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth cloud with class (and for `inst`, instance) columns.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    task: EvalTask,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Boundary tolerance for the overseg task.
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Sem,
    Inst,
    Overseg,
}

#[derive(Args)]
struct DescriptorArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum KindArg {
    AdaptedPfh,
    OriginalPfh,
    Fpfh,
}

impl KindArg {
    fn to_kind(self) -> DescriptorKind {
        match self {
            KindArg::AdaptedPfh => DescriptorKind::AdaptedPfh,
            KindArg::OriginalPfh => DescriptorKind::OriginalPfh,
            KindArg::Fpfh => DescriptorKind::Fpfh,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KindArg::AdaptedPfh => "adapted-pfh",
            KindArg::OriginalPfh => "original-pfh",
            KindArg::Fpfh => "fpfh",
        }
    }

    fn parse_name(s: &str) -> Result<Self> {
        match s {
            "adapted-pfh" => Ok(KindArg::AdaptedPfh),
            "original-pfh" => Ok(KindArg::OriginalPfh),
            "fpfh" => Ok(KindArg::Fpfh),
            _ => Err(Error::Config(format!("unknown descriptor kind `{s}`"))),
        }
    }
}

#[derive(Args)]
struct BenchKnnArgs {
    /// Input cloud; mutually exclusive with --uniform.
    #[arg(long, conflicts_with = "uniform")]
    input: Option<PathBuf>,
    /// Generate N uniform points in a unit cube instead of reading a file.
    #[arg(long)]
    uniform: Option<usize>,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_) => 3,
        Error::Invariant(_) => 4,
        _ => 2,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Oversegment(args) => cmd_oversegment(&args),
        Command::Propagate(args) => cmd_propagate(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Descriptor(args) => cmd_descriptor(&args),
        Command::BenchKnn(args) => cmd_bench_knn(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Replay(args) => cmd_replay(&args),
    }
}

// ---- configuration -------------------------------------------------------

fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, idx + 1, "expected `key = value`"));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn apply_config_map(cfg: &mut SceneConfig<f64>, map: &BTreeMap<String, String>) -> Result<()> {
    let parse_f = |k: &str, v: &str| -> Result<f64> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))
    };
    let parse_u = |k: &str, v: &str| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))
    };
    for (k, v) in map {
        match k.as_str() {
            "radius" => cfg.radius = parse_f(k, v)?,
            "knn" => cfg.knn = parse_u(k, v)?,
            "theta_th" => cfg.theta_th_deg = parse_f(k, v)?,
            "zeta" => cfg.zeta = parse_f(k, v)?,
            "gamma" => cfg.gamma = parse_f(k, v)?,
            "t_merge" => cfg.t_merge = parse_f(k, v)?,
            "t_seed" => cfg.t_seed = parse_f(k, v)?,
            "lambda_n" => cfg.lambda_n = parse_f(k, v)?,
            "lambda_des" => cfg.lambda_des = parse_f(k, v)?,
            "lambda_seg" => cfg.lambda_seg = parse_f(k, v)?,
            "n_ths" => cfg.n_ths = parse_u(k, v)?,
            "n_total" => cfg.n_total = parse_u(k, v)?,
            "seed_fraction" => cfg.seed_fraction = parse_f(k, v)?,
            "rng_seed" => {
                cfg.rng_seed = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))?
            }
            _ => return Err(Error::Config(format!("unknown config key `{k}`"))),
        }
    }
    Ok(())
}

/// Precedence: built-in defaults < config file < explicit flags.
fn resolve_config(args: &ConfigArgs) -> Result<SceneConfig<f64>> {
    let mut cfg = SceneConfig::default();
    if let Some(path) = &args.config {
        apply_config_map(&mut cfg, &parse_kv_file(path)?)?;
    }
    macro_rules! set {
        ($field:ident, $src:expr) => {
            if let Some(v) = $src {
                cfg.$field = v;
            }
        };
    }
    set!(radius, args.radius);
    set!(knn, args.knn);
    set!(theta_th_deg, args.theta_th);
    set!(zeta, args.zeta);
    set!(gamma, args.gamma);
    set!(t_merge, args.t_merge);
    set!(t_seed, args.t_seed);
    set!(lambda_n, args.lambda_n);
    set!(lambda_des, args.lambda_des);
    set!(lambda_seg, args.lambda_seg);
    set!(n_ths, args.n_ths);
    set!(n_total, args.n_total);
    set!(seed_fraction, args.seed_fraction);
    set!(rng_seed, args.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn config_entries(cfg: &SceneConfig<f64>) -> Vec<(String, String)> {
    vec![
        ("radius".into(), cfg.radius.to_string()),
        ("knn".into(), cfg.knn.to_string()),
        ("theta_th".into(), cfg.theta_th_deg.to_string()),
        ("zeta".into(), cfg.zeta.to_string()),
        ("gamma".into(), cfg.gamma.to_string()),
        ("t_merge".into(), cfg.t_merge.to_string()),
        ("t_seed".into(), cfg.t_seed.to_string()),
        ("lambda_n".into(), cfg.lambda_n.to_string()),
        ("lambda_des".into(), cfg.lambda_des.to_string()),
        ("lambda_seg".into(), cfg.lambda_seg.to_string()),
        ("n_ths".into(), cfg.n_ths.to_string()),
        ("n_total".into(), cfg.n_total.to_string()),
        ("seed_fraction".into(), cfg.seed_fraction.to_string()),
        ("rng_seed".into(), cfg.rng_seed.to_string()),
    ]
}

// ---- manifest -------------------------------------------------------------

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Self {
            entries: vec![
                ("command".into(), command.into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
            ],
        }
    }

    fn put(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    fn put_input(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        self.entries.push((key.into(), path.display().to_string()));
        self.entries
            .push((format!("sha256_{key}"), sha256_file(path)?));
        Ok(self)
    }

    fn put_config(&mut self, cfg: &SceneConfig<f64>) -> &mut Self {
        self.entries.extend(config_entries(cfg));
        self
    }

    fn write(&self, path: &Path, wall: f64) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text.push_str(&format!("wall_time_s = {wall:.3}\n"));
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn require(map: &BTreeMap<String, String>, key: &str) -> Result<String> {
    map.get(key)
        .cloned()
        .ok_or_else(|| Error::Config(format!("manifest is missing `{key}`")))
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let map = parse_kv_file(&args.manifest)?;
    let mut cfg = SceneConfig::default();
    let cfg_keys: BTreeMap<String, String> = map
        .iter()
        .filter(|(k, _)| {
            config_entries(&SceneConfig::default())
                .iter()
                .any(|(key, _)| key == *k)
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    apply_config_map(&mut cfg, &cfg_keys)?;
    let config = ConfigArgs::default();
    let weak = |map: &BTreeMap<String, String>| -> Result<WeakArgs> {
        Ok(WeakArgs {
            weak_labels: map.get("weak_labels").map(PathBuf::from),
            sample_fraction: map
                .get("sample_fraction")
                .map(|v| {
                    v.parse()
                        .map_err(|_| Error::Config("bad sample_fraction".into()))
                })
                .transpose()?,
        })
    };
    // flags were already resolved into the manifest, so replays pass the
    // stored config through a config map and leave the flag set empty
    let with_cfg = |mut a: ConfigArgs| -> ConfigArgs {
        a.radius = Some(cfg.radius);
        a.knn = Some(cfg.knn);
        a.theta_th = Some(cfg.theta_th_deg);
        a.zeta = Some(cfg.zeta);
        a.gamma = Some(cfg.gamma);
        a.t_merge = Some(cfg.t_merge);
        a.t_seed = Some(cfg.t_seed);
        a.lambda_n = Some(cfg.lambda_n);
        a.lambda_des = Some(cfg.lambda_des);
        a.lambda_seg = Some(cfg.lambda_seg);
        a.n_ths = Some(cfg.n_ths);
        a.n_total = Some(cfg.n_total);
        a.seed_fraction = Some(cfg.seed_fraction);
        a.seed = Some(cfg.rng_seed);
        a
    };
    match require(&map, "command")?.as_str() {
        "oversegment" => cmd_oversegment(&OversegmentArgs {
            input: PathBuf::from(require(&map, "input")?),
            out: PathBuf::from(require(&map, "out")?),
            kind: KindArg::parse_name(&require(&map, "descriptor_kind")?)?,
            weak: weak(&map)?,
            config: with_cfg(config),
        }),
        "propagate" => cmd_propagate(&PropagateArgs {
            input: PathBuf::from(require(&map, "input")?),
            out: PathBuf::from(require(&map, "out")?),
            predictor: require(&map, "predictor")?,
            kind: KindArg::parse_name(&require(&map, "descriptor_kind")?)?,
            weak: weak(&map)?,
            config: with_cfg(config),
        }),
        "descriptor" => cmd_descriptor(&DescriptorArgs {
            input: PathBuf::from(require(&map, "input")?),
            kind: KindArg::parse_name(&require(&map, "descriptor_kind")?)?,
            radius: require(&map, "radius")?
                .parse()
                .map_err(|_| Error::Config("bad radius in manifest".into()))?,
            out: PathBuf::from(require(&map, "out")?),
        }),
        "synth" => cmd_synth(&SynthArgs {
            spec: PathBuf::from(require(&map, "spec")?),
            out: PathBuf::from(require(&map, "out")?),
        }),
        other => Err(Error::Config(format!("cannot replay command `{other}`"))),
    }
}

// ---- shared pipeline front end ---------------------------------------------

struct Prepared {
    cloud: PointCloud<f64>,
    tree: Octree<f64>,
    frames: Vec<LocalFrame<f64>>,
    descriptors: Vec<Descriptor<f64>>,
    weak: WeakLabelSet,
}

fn prepare(
    input: &Path,
    kind: DescriptorKind,
    weak_args: &WeakArgs,
    cfg: &SceneConfig<f64>,
) -> Result<Prepared> {
    let cloud: PointCloud<f64> = load_cloud_auto(input)?;
    let tree = Octree::with_defaults(&cloud.positions)?;
    let frames = estimate_frames(&cloud, &tree, cfg.radius)?;
    let (descriptors, _) = compute_descriptors(kind, &cloud, &frames, &tree, cfg.radius)?;
    let weak = match (&weak_args.weak_labels, weak_args.sample_fraction) {
        (Some(path), _) => load_weak_labels(path)?,
        (None, fraction) => {
            if cloud.gt_labels.is_none() {
                return Err(Error::MissingChannel(
                    "ground-truth labels (needed to sample weak labels; pass --weak-labels instead)",
                ));
            }
            sample_weak_labels(&cloud, fraction.unwrap_or(0.002), cfg.rng_seed)?
        }
    };
    Ok(Prepared {
        cloud,
        tree,
        frames,
        descriptors,
        weak,
    })
}

fn grow_partition(p: &Prepared, cfg: &SceneConfig<f64>) -> Result<Partition<f64>> {
    let seeds = select_seeds(&p.cloud, &p.frames, &p.weak, cfg.seed_fraction);
    let mut partition = grow(&p.cloud, &p.frames, &p.descriptors, &p.tree, &seeds, cfg)?;
    initial_pseudo_labels(&mut partition, &p.weak);
    partition.validate()?;
    Ok(partition)
}

fn write_partition_files(partition: &Partition<f64>, out: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut table = String::new();
    for (i, region) in partition.point_region.iter().enumerate() {
        let id = region.map(|r| r as i64).unwrap_or(-1);
        writeln!(table, "{i} {id}").unwrap();
    }
    let path = out.join("partition.txt");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;

    let mut summary = String::from("region_id size class confidence normal curvature\n");
    for region in &partition.regions {
        let agg = region.aggregate();
        let class = region.label_state.class().unwrap_or(-1);
        writeln!(
            summary,
            "{} {} {} {} {} {} {} {}",
            region.id,
            region.len(),
            class,
            region.label_state.confidence(),
            agg.normal.x,
            agg.normal.y,
            agg.normal.z,
            agg.curvature
        )
        .unwrap();
    }
    let path = out.join("regions.txt");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn weak_manifest_fields(m: &mut Manifest, weak: &WeakArgs) {
    if let Some(path) = &weak.weak_labels {
        m.put("weak_labels", path.display());
    }
    if let Some(fraction) = weak.sample_fraction {
        m.put("sample_fraction", fraction);
    }
}

fn cmd_oversegment(args: &OversegmentArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_config(&args.config)?;
    ensure_out_dir(&args.out)?;
    let p = prepare(&args.input, args.kind.to_kind(), &args.weak, &cfg)?;
    let partition = grow_partition(&p, &cfg)?;
    write_partition_files(&partition, &args.out)?;
    save_weak_labels(&p.weak, &args.out.join("weak_labels.txt"))?;

    let mut m = Manifest::new("oversegment");
    m.put_input("input", &args.input)?;
    m.put("out", args.out.display());
    m.put("descriptor_kind", args.kind.name());
    weak_manifest_fields(&mut m, &args.weak);
    m.put_config(&cfg);
    m.write(&args.out.join("manifest.txt"), start.elapsed().as_secs_f64())?;

    println!("regions: {}", partition.regions.len());
    Ok(())
}

fn cmd_propagate(args: &PropagateArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = resolve_config(&args.config)?;
    ensure_out_dir(&args.out)?;
    let p = prepare(&args.input, args.kind.to_kind(), &args.weak, &cfg)?;
    let partition = grow_partition(&p, &cfg)?;

    let mut predictor: Box<dyn RegionPredictor<f64>> = match args.predictor.as_str() {
        "builtin" => Box::new(BuiltinPredictor::new(p.weak.num_classes.max(2))),
        "oracle" => Box::new(OraclePredictor),
        other => match other.strip_prefix("file:") {
            Some(dir) => Box::new(FilePredictor {
                dir: PathBuf::from(dir),
            }),
            None => {
                return Err(Error::Config(format!(
                    "unknown predictor `{other}` (expected builtin, oracle, or file:<dir>)"
                )))
            }
        },
    };

    let (state, trace) = self_train(&p.cloud, partition, predictor.as_mut(), &cfg)?;

    let labels = state.partition.point_labels();
    let assignments: Vec<PointAssignment> = (0..p.cloud.len())
        .map(|i| {
            let region_id = state.partition.point_region[i].map(|r| r as i64).unwrap_or(-1);
            let confidence = state.partition.point_region[i]
                .map(|r| state.partition.regions[r].label_state.confidence())
                .unwrap_or(0.0);
            PointAssignment {
                region_id,
                class_id: labels[i],
                confidence,
            }
        })
        .collect();
    save_labels(&assignments, &args.out.join("labels.txt"))?;
    write_trace(&trace, &args.out.join("trace.csv"))?;
    let boxes = extract_instances(&state, &p.cloud, cfg.radius)?;
    save_instance_boxes(&boxes, &args.out.join("boxes.txt"))?;
    save_weak_labels(&p.weak, &args.out.join("weak_labels.txt"))?;
    write_partition_files(&state.partition, &args.out)?;

    let mut m = Manifest::new("propagate");
    m.put_input("input", &args.input)?;
    m.put("out", args.out.display());
    m.put("predictor", &args.predictor);
    m.put("descriptor_kind", args.kind.name());
    weak_manifest_fields(&mut m, &args.weak);
    m.put_config(&cfg);
    m.write(&args.out.join("manifest.txt"), start.elapsed().as_secs_f64())?;

    let labeled = labels.iter().filter(|&&c| c >= 0).count();
    println!(
        "regions: {}  labeled: {}/{}",
        state.partition.regions.len(),
        labeled,
        p.cloud.len()
    );
    Ok(())
}

fn write_report(rows: &[(String, f64)], out: Option<&Path>) -> Result<()> {
    let mut text = String::from("metric,value\n");
    for (k, v) in rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = load_labels(&args.pred)?;
    let cloud: PointCloud<f64> = load_cloud_auto(&args.gt)?;
    if pred.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} predicted labels vs {} ground-truth points",
            pred.len(),
            cloud.len()
        )));
    }
    let gt_labels = cloud
        .gt_labels
        .as_ref()
        .ok_or(Error::MissingChannel("ground-truth class labels"))?;
    let num_classes = cloud.num_gt_classes().max(1);
    let mut rows = Vec::new();
    match args.task {
        EvalTask::Sem => {
            let pred_classes: Vec<i32> = pred.iter().map(|a| a.class_id).collect();
            let conf = ConfusionMatrix::from_labels(gt_labels, &pred_classes, num_classes)?;
            let (mean, per_class) = miou(&conf);
            rows.push(("miou".to_string(), mean));
            for (c, iou) in per_class.iter().enumerate() {
                if let Some(iou) = iou {
                    rows.push((format!("iou_class_{c}"), *iou));
                }
            }
        }
        EvalTask::Inst => {
            let gt_inst_ids = cloud
                .gt_instances
                .as_ref()
                .ok_or(Error::MissingChannel("ground-truth instance ids"))?;
            // predicted instances are class-connected components: same
            // predicted class and within `tolerance` of each other
            let tree = Octree::with_defaults(&cloud.positions)?;
            let mut parent: Vec<usize> = (0..pred.len()).collect();
            fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
                while parent[i] != i {
                    parent[i] = parent[parent[i]];
                    i = parent[i];
                }
                i
            }
            for i in 0..pred.len() {
                if pred[i].class_id < 0 {
                    continue;
                }
                for j in tree.radius_query(cloud.positions[i], args.tolerance) {
                    if j > i && pred[j].class_id == pred[i].class_id {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
            let mut by_root: BTreeMap<usize, Instance> = BTreeMap::new();
            let mut scores: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for i in 0..pred.len() {
                if pred[i].class_id < 0 {
                    continue;
                }
                let root = find(&mut parent, i);
                let entry = by_root.entry(root).or_insert_with(|| Instance {
                    class_id: pred[i].class_id,
                    points: Default::default(),
                    score: 0.0,
                });
                entry.points.insert(i);
                let s = scores.entry(root).or_insert((0.0, 0));
                s.0 += pred[i].confidence;
                s.1 += 1;
            }
            for (root, inst) in by_root.iter_mut() {
                let (sum, n) = scores[root];
                inst.score = sum / n as f64;
            }
            let pred_instances: Vec<Instance> = by_root.into_values().collect();
            let mut gt_map: BTreeMap<i32, Instance> = BTreeMap::new();
            for i in 0..cloud.len() {
                if gt_labels[i] < 0 {
                    continue;
                }
                let entry = gt_map.entry(gt_inst_ids[i]).or_insert_with(|| Instance {
                    class_id: gt_labels[i],
                    points: Default::default(),
                    score: 1.0,
                });
                entry.points.insert(i);
            }
            let gt_instances: Vec<Instance> = gt_map.into_values().collect();
            let (mean, per_class) = instance_ap50(&pred_instances, &gt_instances, num_classes);
            rows.push(("ap50".to_string(), mean));
            for (c, ap) in per_class.iter().enumerate() {
                if let Some(ap) = ap {
                    rows.push((format!("ap50_class_{c}"), *ap));
                }
            }
        }
        EvalTask::Overseg => {
            let region_ids: Vec<i64> = pred.iter().map(|a| a.region_id).collect();
            let (precision, recall, f1) =
                overseg_prf(&cloud.positions, &region_ids, gt_labels, args.tolerance)?;
            rows.push(("boundary_precision".to_string(), precision));
            rows.push(("boundary_recall".to_string(), recall));
            rows.push(("boundary_f1".to_string(), f1));
        }
    }
    write_report(&rows, args.out.as_deref())
}

fn cmd_descriptor(args: &DescriptorArgs) -> Result<()> {
    let start = Instant::now();
    if args.radius <= 0.0 {
        return Err(Error::Config("radius must be positive".into()));
    }
    let cloud: PointCloud<f64> = load_cloud_auto(&args.input)?;
    let tree = Octree::with_defaults(&cloud.positions)?;
    let frames = estimate_frames(&cloud, &tree, args.radius)?;
    let (descriptors, stats) =
        compute_descriptors(args.kind.to_kind(), &cloud, &frames, &tree, args.radius)?;
    save_descriptors(&descriptors, &args.out)?;

    let manifest_path = args.out.with_extension("manifest.txt");
    let mut m = Manifest::new("descriptor");
    m.put_input("input", &args.input)?;
    m.put("out", args.out.display());
    m.put("descriptor_kind", args.kind.name());
    m.put("radius", args.radius);
    m.put("pair_evaluations", stats.pair_evaluations);
    m.write(&manifest_path, start.elapsed().as_secs_f64())?;

    println!(
        "points: {}  dims: {}  pair evaluations: {}",
        descriptors.len(),
        descriptors.first().map(|d| d.dim()).unwrap_or(0),
        stats.pair_evaluations
    );
    Ok(())
}

fn cmd_bench_knn(args: &BenchKnnArgs) -> Result<()> {
    use rand::Rng;
    use rand::SeedableRng;

    let positions = match (&args.input, args.uniform) {
        (Some(path), _) => load_cloud_auto::<f64>(path)?.positions,
        (None, Some(n)) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            (0..n)
                .map(|_| {
                    cloudmerge_core::scalar::Vec3::new(
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect()
        }
        (None, None) => {
            return Err(Error::Config(
                "bench-knn needs --input or --uniform".into(),
            ))
        }
    };
    let header = "n,queries,k,octree_s,brute_s,ratio\n";
    if args.queries == 0 {
        match &args.out {
            Some(path) => std::fs::write(path, header).map_err(|e| Error::io(path, e))?,
            None => print!("{header}"),
        }
        return Ok(());
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let centers: Vec<cloudmerge_core::scalar::Vec3<f64>> = (0..args.queries)
        .map(|_| positions[rng.gen_range(0..positions.len())])
        .collect();

    let tree = Octree::with_defaults(&positions)?;
    let t0 = Instant::now();
    let mut octree_results = Vec::with_capacity(centers.len());
    for &c in &centers {
        octree_results.push(tree.knn_query(c, args.k)?);
    }
    let octree_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut brute_results = Vec::with_capacity(centers.len());
    for &c in &centers {
        brute_results.push(brute_force_knn(&positions, c, args.k));
    }
    let brute_s = t1.elapsed().as_secs_f64();

    for (a, b) in octree_results.iter().zip(&brute_results) {
        if a != b {
            return Err(Error::Invariant(
                "octree KNN disagrees with brute force".into(),
            ));
        }
    }

    let ratio = if octree_s > 0.0 { brute_s / octree_s } else { f64::INFINITY };
    let line = format!(
        "{},{},{},{:.6},{:.6},{:.2}\n",
        positions.len(),
        args.queries,
        args.k,
        octree_s,
        brute_s,
        ratio
    );
    match &args.out {
        Some(path) => {
            std::fs::write(path, format!("{header}{line}")).map_err(|e| Error::io(path, e))?
        }
        None => print!("{header}{line}"),
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let start = Instant::now();
    let spec = load_scene_spec::<f64>(&args.spec)?;
    let cloud = spec.generate()?;
    save_cloud_ascii(&cloud, &args.out)?;

    let manifest_path = args.out.with_extension("manifest.txt");
    let mut m = Manifest::new("synth");
    m.put_input("spec", &args.spec)?;
    m.put("out", args.out.display());
    m.put("points", cloud.len());
    m.write(&manifest_path, start.elapsed().as_secs_f64())?;

    println!("points: {}", cloud.len());
    Ok(())
}
