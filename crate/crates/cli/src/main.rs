use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sredgenet::ablation::run_edge_skip_ablation;
use sredgenet::edge_net::Branch;
use sredgenet::gradsuite::{run_suite, Suite};
use sredgenet::imageproc::{degrade_pair, load_png, save_edge_png, save_png};
use sredgenet::pipeline::{check_sr_scale, load_edge_ensemble, load_merge, load_sr, quantize_edge, write_manifest};
use sredgenet::training::{evaluate_benchmark, format_psnr, train_to_dir};
use sredgenet::{
    EdgeMap, EdgeNetConfig, Error, FlatConfig, MergeConfig, Model, Module, Pipeline, PipelinePaths,
    Result, SrConfig, TrainConfig, TrainData,
};

#[derive(Parser)]
#[command(name = "sredgenet", version, about = "Edge-enhanced single image super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModuleArg {
    Sr,
    Edge,
    Merge,
}

impl From<ModuleArg> for Module {
    fn from(m: ModuleArg) -> Self {
        match m {
            ModuleArg::Sr => Module::Sr,
            ModuleArg::Edge => Module::Edge,
            ModuleArg::Merge => Module::Merge,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Sr,
    Edge,
    Merge,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    All,
    Core,
    Sr,
    Edge,
    Merge,
}

#[derive(Subcommand)]
enum Command {
    /// Write offset-fixed HR images and their bicubic LR counterparts.
    Degrade {
        #[arg(long, value_parser = ["2", "4", "8"])]
        scale: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one module.
    Train {
        #[arg(long, value_enum)]
        module: ModuleArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint (sr and merge).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run one stage or the whole pipeline on a PNG file or directory.
    Infer {
        #[arg(long, value_enum)]
        stage: Stage,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        sr_ckpt: Option<PathBuf>,
        #[arg(long)]
        edge_manifest: Option<PathBuf>,
        #[arg(long)]
        merge_ckpt: Option<PathBuf>,
        /// Edge map file or directory for `--stage merge`.
        #[arg(long)]
        edge: Option<PathBuf>,
        /// Also write the SR image and edge map of `--stage full`.
        #[arg(long)]
        emit_intermediates: bool,
    },
    /// PSNR/SSIM of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        module: SuiteArg,
    },
    /// Train MergeNet with and without the edge skip and compare them.
    AblateEdgeSkip {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation set in the same layout (defaults to the training set).
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Parameter(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(names)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// `(input, output)` pairs for a file or a directory.
fn io_pairs(input: &Path, output: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if input.is_dir() {
        mkdir(output)?;
        Ok(list_pngs(input)?
            .into_iter()
            .map(|n| (input.join(&n), output.join(&n)))
            .collect())
    } else {
        if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
            mkdir(parent)?;
        }
        Ok(vec![(input.to_path_buf(), output.to_path_buf())])
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}.png"))
}

fn require<'a>(flag: &str, v: &'a Option<PathBuf>) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Usage(format!("--{flag} is required for this stage")))
}

fn degrade(scale: usize, input: &Path, output: &Path) -> Result<()> {
    let hr_dir = output.join("HR");
    let lr_dir = output.join(format!("LR_x{scale}"));
    mkdir(&hr_dir)?;
    mkdir(&lr_dir)?;
    for name in list_pngs(input)? {
        let img = load_png(input.join(&name))?;
        let (lr, hr) = degrade_pair(&img, scale)?;
        save_png(&hr, hr_dir.join(&name))?;
        save_png(&lr, lr_dir.join(&name))?;
        println!("{name}: HR {}x{} -> LR {}x{}", hr.width(), hr.height(), lr.width(), lr.height());
    }
    Ok(())
}

fn train(module: Module, config: &Path, data: &Path, out: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let flat = FlatConfig::load(config)?;
    let mut tc = TrainConfig::from_flat(&flat, module)?;
    if tc.module != module {
        return Err(Error::Config(format!(
            "config says train.module={} but --module {module} was given",
            tc.module
        )));
    }
    if let Some(s) = seed {
        tc.seed = s;
    }
    match module {
        Module::Sr => {
            let cfg = SrConfig::from_flat(&flat)?;
            let data = TrainData::load(module, data, tc.scale, &EdgeNetConfig::default())?;
            let run = train_to_dir(&tc, &Model::sr(&cfg)?, &data, out, "sr", resume)?;
            println!("wrote {}", run.final_checkpoint.display());
        }
        Module::Merge => {
            let cfg = MergeConfig::from_flat(&flat)?;
            let data = TrainData::load(module, data, tc.scale, &EdgeNetConfig::default())?;
            let run = train_to_dir(&tc, &Model::merge(&cfg)?, &data, out, "merge", resume)?;
            println!("wrote {}", run.final_checkpoint.display());
        }
        Module::Edge => {
            if resume.is_some() {
                return Err(Error::Usage("--resume is not supported for the edge ensemble".into()));
            }
            let cfg = EdgeNetConfig::from_flat(&flat)?;
            let data = TrainData::load(module, data, tc.scale, &cfg)?;
            let mut entries = Vec::new();
            for &nr in &cfg.complexities {
                for branch in Branch::ALL {
                    let tag = format!("edge_nr{nr}_{branch}");
                    let model = Model::edge(&cfg.with_nr(nr), branch)?;
                    let run = train_to_dir(&tc, &model, &data, out, &tag, None)?;
                    println!("wrote {}", run.final_checkpoint.display());
                    let file = run.final_checkpoint.file_name().map(PathBuf::from).unwrap_or_default();
                    entries.push((nr, branch, file));
                }
            }
            let manifest = out.join("edge.manifest");
            write_manifest(&manifest, &entries)?;
            println!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    stage: Stage,
    scale: usize,
    input: &Path,
    output: &Path,
    sr_ckpt: &Option<PathBuf>,
    edge_manifest: &Option<PathBuf>,
    merge_ckpt: &Option<PathBuf>,
    edge: &Option<PathBuf>,
    emit: bool,
) -> Result<()> {
    if ![2, 4, 8].contains(&scale) {
        return Err(Error::Usage(format!("--scale must be 2, 4 or 8, got {scale}")));
    }
    if emit && stage != Stage::Full {
        return Err(Error::Usage("--emit-intermediates applies to --stage full".into()));
    }
    let pairs = io_pairs(input, output)?;
    let dir_mode = input.is_dir();
    match stage {
        Stage::Sr => {
            let (net, params) = load_sr(require("sr-ckpt", sr_ckpt)?)?;
            check_sr_scale(&net, scale)?;
            for (i, o) in pairs {
                save_png(&net.infer(&params, &load_png(&i)?)?, &o)?;
            }
        }
        Stage::Edge => {
            let ens = load_edge_ensemble(require("edge-manifest", edge_manifest)?)?;
            for (i, o) in pairs {
                save_edge_png(&ens.predict(&load_png(&i)?)?, &o)?;
            }
        }
        Stage::Merge => {
            let (net, params, trained) = load_merge(require("merge-ckpt", merge_ckpt)?)?;
            if let Some(t) = trained.filter(|&t| t != scale) {
                return Err(Error::Config(format!(
                    "merge checkpoint was trained for x{t} but x{scale} was requested"
                )));
            }
            let edge = require("edge", edge)?;
            for (i, o) in pairs {
                let e = if dir_mode {
                    edge.join(i.file_name().unwrap_or_default())
                } else {
                    edge.clone()
                };
                let e = EdgeMap::from_image(&load_png(&e)?)?;
                save_png(&net.infer(&params, &load_png(&i)?, &e)?, &o)?;
            }
        }
        Stage::Full => {
            let paths = PipelinePaths {
                sr_ckpt: require("sr-ckpt", sr_ckpt)?.clone(),
                edge_manifest: require("edge-manifest", edge_manifest)?.clone(),
                merge_ckpt: require("merge-ckpt", merge_ckpt)?.clone(),
            };
            let pipeline = Pipeline::load(&paths, scale)?;
            for (i, o) in pairs {
                let out = pipeline.run(&load_png(&i)?)?;
                save_png(&out.output, &o)?;
                if emit {
                    let (sr_path, edge_path) = if dir_mode {
                        let name = o.file_name().unwrap_or_default();
                        let sr_dir = output.join("SR");
                        let edge_dir = output.join("EDGE");
                        mkdir(&sr_dir)?;
                        mkdir(&edge_dir)?;
                        (sr_dir.join(name), edge_dir.join(name))
                    } else {
                        (with_suffix(&o, "sr"), with_suffix(&o, "edge"))
                    };
                    save_png(&out.sr, sr_path)?;
                    save_edge_png(&quantize_edge(&out.edge)?, edge_path)?;
                }
            }
        }
    }
    Ok(())
}

fn eval(pred: &Path, gt: &Path, scale: usize, csv: Option<&Path>) -> Result<()> {
    let report = evaluate_benchmark(pred, gt, scale)?;
    print!("{}", report.to_table());
    if let Some(csv) = csv {
        std::fs::write(csv, report.to_csv()).map_err(|e| io_err(csv, e))?;
    }
    Ok(())
}

fn gradcheck(which: SuiteArg) -> Result<bool> {
    let suites: Vec<Suite> = match which {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Core => vec![Suite::Core],
        SuiteArg::Sr => vec![Suite::Sr],
        SuiteArg::Edge => vec![Suite::Edge],
        SuiteArg::Merge => vec![Suite::Merge],
    };
    let start = std::time::Instant::now();
    let mut all_ok = true;
    let mut n = 0;
    for s in suites {
        for r in run_suite(s)? {
            n += 1;
            all_ok &= r.passed();
            println!(
                "{} {:<6} {:<40} rel_err={:.3e} tol={:.0e} kinks={}",
                if r.passed() { "PASS" } else { "FAIL" },
                s,
                r.name,
                r.rel_error,
                r.tolerance,
                r.kinks
            );
        }
    }
    println!(
        "{} checks, {} in {:.1}s",
        n,
        if all_ok { "all passed" } else { "some FAILED" },
        start.elapsed().as_secs_f64()
    );
    Ok(all_ok)
}

fn ablate(config: &Path, data: &Path, eval: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let flat = FlatConfig::load(config)?;
    let mut tc = TrainConfig::from_flat(&flat, Module::Merge)?;
    if let Some(s) = seed {
        tc.seed = s;
    }
    let cfg = MergeConfig::from_flat(&flat)?;
    let train = TrainData::load(Module::Merge, data, tc.scale, &EdgeNetConfig::default())?;
    let eval = match eval {
        Some(dir) => TrainData::load(Module::Merge, dir, tc.scale, &EdgeNetConfig::default())?,
        None => train.clone(),
    };
    let report = run_edge_skip_ablation(&tc, &cfg, &train, &eval)?;
    mkdir(out)?;
    let text = report.to_text();
    let path = out.join("ablation.txt");
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    let csv = format!(
        "variant,psnr,ssim,final_loss\nwith_edge_skip,{},{:.6},{}\nwithout_edge_skip,{},{:.6},{}\ndelta,{:.6},{:.6},\n",
        format_psnr(report.with_skip.psnr),
        report.with_skip.ssim,
        report.with_skip.final_loss,
        format_psnr(report.without_skip.psnr),
        report.without_skip.ssim,
        report.without_skip.final_loss,
        report.psnr_delta(),
        report.ssim_delta()
    );
    let csv_path = out.join("ablation.csv");
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Degrade { scale, input, output } => {
            degrade(scale.parse().expect("validated by clap"), &input, &output)?;
        }
        Command::Train {
            module,
            config,
            data,
            out,
            seed,
            resume,
        } => train(module.into(), &config, &data, &out, seed, resume.as_deref())?,
        Command::Infer {
            stage,
            scale,
            input,
            output,
            sr_ckpt,
            edge_manifest,
            merge_ckpt,
            edge,
            emit_intermediates,
        } => infer(
            stage,
            scale,
            &input,
            &output,
            &sr_ckpt,
            &edge_manifest,
            &merge_ckpt,
            &edge,
            emit_intermediates,
        )?,
        Command::Eval { pred, gt, scale, csv } => eval(&pred, &gt, scale, csv.as_deref())?,
        Command::Gradcheck { module } => return gradcheck(module),
        Command::AblateEdgeSkip {
            config,
            data,
            eval,
            out,
            seed,
        } => ablate(&config, &data, eval.as_deref(), &out, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
