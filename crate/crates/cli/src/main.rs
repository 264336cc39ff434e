mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use roadkf::autodiff::AdamState;
use roadkf::harness::{
    cdf_svg, drive_seed, evaluate, grid_search, horizontal_errors, network_seed, oracle_labels, parse_methods, run_kf,
    run_method, train_on, ErrorSummary, Method, MethodInputs, RoadVariances,
};
use roadkf::io::{
    read_checkpoint, read_config, read_results, results_csv, write_atomic, write_checkpoint, write_drive, write_labels,
    write_network, write_results, Checkpoint, Config, LabelFile, ResultFile,
};
use roadkf::sim::{generate_drive, generate_network};
use roadkf::tgnn::{gradcheck, ModelKind, TrainingDrive};

use data::{drive_path, labels_path, load_all, network_path, region_dir, regions, RegionFiles};

#[derive(Parser)]
#[command(name = "roadkf", version, about = "Road-network aided GNSS Kalman filtering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML configuration file; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one road network per region.
    GenNetwork {
        /// Benchmark directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulate drives on every region's network.
    GenDrives {
        #[arg(long)]
        data: PathBuf,
    },
    /// Label every drive with the offline bidirectional Viterbi decoder.
    LabelOracle {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run one method over the drives of one region.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        region: usize,
        #[arg(long)]
        method: Method,
        /// Road variances as `parallel,perpendicular` (m²).
        #[arg(long, value_parser = parse_variances)]
        sigma: Option<RoadVariances>,
        /// Model checkpoint of a learned method.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for per-drive result files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune the road variances of a classical selector.
    GridSearch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        /// Region left out of tuning.
        #[arg(long)]
        holdout: Option<usize>,
        /// CSV of every evaluated combination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a road-selection network.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Region left out of training.
        #[arg(long)]
        holdout: Option<usize>,
        /// Architecture; overrides the config.
        #[arg(long)]
        kind: Option<ModelKind>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// CSV of per-iteration loss and accuracy.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Leave-one-region-out evaluation.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated methods; overrides the config.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated seeds of the learned methods.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated holdout regions (default all).
        #[arg(long)]
        holdout: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Results table (CSV).
        #[arg(long)]
        out: PathBuf,
        /// CDF plot (SVG).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// CDF plot of per-epoch result files.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Right end of the error axis (m).
        #[arg(long, default_value_t = 50.0)]
        max_error: f64,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
    /// Check training gradients against finite differences.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
    },
}

fn parse_variances(s: &str) -> Result<RoadVariances, String> {
    let (a, b) = s.split_once(',').ok_or("expected parallel,perpendicular")?;
    let parse = |v: &str| -> Result<f64, String> {
        match v.trim() {
            "inf" => Ok(f64::INFINITY),
            v => v.parse().map_err(|_| format!("invalid variance {v:?}")),
        }
    };
    let v = RoadVariances::new(parse(a)?, parse(b)?);
    if v.parallel < 0.0 || v.perpendicular < 0.0 {
        return Err("variances must be non-negative".into());
    }
    Ok(v)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse().map_err(|_| anyhow::anyhow!("invalid {what} {v:?}")))
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string().replace('\n', " ")).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.global.config {
        Some(p) => read_config(p).with_context(|| format!("{}", p.display()))?,
        None => Config::default(),
    };
    let seed = cli.global.seed;
    match cli.command {
        Command::GenNetwork { data } => gen_network(&data, &config, seed),
        Command::GenDrives { data } => gen_drives(&data, &config, seed),
        Command::LabelOracle { data } => label_oracle(&data, &config),
        Command::Run {
            data,
            region,
            method,
            sigma,
            checkpoint,
            out,
        } => run_one(&data, region, method, sigma, checkpoint.as_deref(), out.as_deref(), &config),
        Command::GridSearch {
            data,
            method,
            holdout,
            out,
        } => grid(&data, method, holdout, out.as_deref(), &config),
        Command::Train {
            data,
            holdout,
            kind,
            iterations,
            out,
            log,
        } => {
            let mut config = config;
            if let Some(k) = kind {
                config.model.kind = k;
            }
            if let Some(n) = iterations {
                config.train.iterations = n;
            }
            train_cmd(&data, holdout, &out, log.as_deref(), &config, seed)
        }
        Command::Evaluate {
            data,
            methods,
            seeds,
            holdout,
            iterations,
            out,
            plot,
        } => {
            let mut config = config;
            if let Some(m) = methods {
                config.evaluation.methods = parse_methods(&m)?;
            }
            if let Some(s) = seeds {
                config.evaluation.seeds = parse_list(&s, "seed")?;
            }
            if let Some(h) = holdout {
                config.evaluation.holdout = parse_list(&h, "holdout region")?;
            }
            if let Some(n) = iterations {
                config.train.iterations = n;
            }
            evaluate_cmd(&data, &out, plot.as_deref(), &config)
        }
        Command::PrintConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::Plot { results, out, max_error } => plot(&results, &out, max_error),
        Command::Gradcheck { instances } => {
            let mut config = config;
            if let Some(n) = instances {
                config.gradcheck.instances = n;
            }
            gradcheck_cmd(&config, seed)
        }
    }
}

fn gen_network(root: &Path, config: &Config, seed: u64) -> Result<()> {
    for r in 0..config.benchmark.regions {
        let dir = region_dir(root, r);
        std::fs::create_dir_all(&dir).with_context(|| format!("{}", dir.display()))?;
        let net = generate_network(&config.benchmark.scenario.network, network_seed(seed, r))?;
        write_network(&network_path(&dir), &net)?;
        eprintln!("{}: {} nodes, {} edges", network_path(&dir).display(), net.nodes.len(), net.edges.len());
    }
    Ok(())
}

fn gen_drives(root: &Path, config: &Config, seed: u64) -> Result<()> {
    for (r, dir) in regions(root)?.iter().enumerate() {
        let name = format!("region{r}");
        let graph = roadkf::io::read_network(&network_path(dir))?.build_graph(&config.roads)?;
        let drives = (0..config.benchmark.drives_per_region)
            .into_par_iter()
            .map(|d| generate_drive(&graph, &name, &config.benchmark.scenario, drive_seed(seed, r, d)))
            .collect::<roadkf::Result<Vec<_>>>()?;
        for (d, drive) in drives.iter().enumerate() {
            write_drive(&drive_path(dir, d), drive)?;
        }
        eprintln!("{}: {} drives", dir.display(), drives.len());
    }
    Ok(())
}

fn label_oracle(root: &Path, config: &Config) -> Result<()> {
    for region in load_all(root, &config.roads, false)? {
        let dir = root.join(&region.name);
        let labels = region
            .drives
            .par_iter()
            .map(|d| oracle_labels(d, &region.graph, &config.pipeline))
            .collect::<roadkf::Result<Vec<_>>>()?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for (d, (drive, l)) in region.drives.iter().zip(labels).enumerate() {
            hits += drive.epochs.iter().zip(&l).filter(|(e, l)| **l == Some(e.segment)).count();
            total += drive.epochs.len();
            write_labels(&labels_path(&dir, d), &LabelFile::for_drive(drive, l))?;
        }
        eprintln!("{}: labels match the simulated segment on {:.2}% of epochs", dir.display(), 100.0 * hits as f64 / total as f64);
    }
    Ok(())
}

fn run_one(
    root: &Path,
    region: usize,
    method: Method,
    sigma: Option<RoadVariances>,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    config: &Config,
) -> Result<()> {
    let files = RegionFiles::load(&region_dir(root, region), &config.roads, method == Method::Oracle)?;
    let ckpt = checkpoint.map(read_checkpoint).transpose()?;
    if method.is_learned() && ckpt.is_none() {
        bail!("{method} needs --checkpoint");
    }
    if method.is_tuned() && sigma.is_none() {
        bail!("{method} needs --sigma (see grid-search)");
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    }
    let mut all = Vec::new();
    for (d, drive) in files.drives.iter().enumerate() {
        let inputs = MethodInputs {
            variances: sigma,
            labels: files.labels.as_ref().map(|l| l[d].as_slice()),
            model: ckpt.as_ref().map(|c| &c.model),
        };
        let positions = run_method(method, drive, &files.graph, &inputs, &config.pipeline)?;
        let errors = horizontal_errors(drive, &positions);
        all.extend_from_slice(&errors);
        if let Some(dir) = out {
            let file = ResultFile {
                method,
                network: drive.network.clone(),
                seed: drive.seed,
                positions,
                errors,
            };
            write_results(&dir.join(format!("{}_{}_drive_{d:02}.txt", files.name, result_tag(method))), &file)?;
        }
    }
    let s = ErrorSummary::from_errors(&all);
    println!("method,region,he50_m,he95_m,epochs\n{method},{region},{:.6},{:.6},{}", s.he50, s.he95, s.epochs);
    Ok(())
}

fn result_tag(method: Method) -> String {
    method.name().to_ascii_lowercase().replace('+', "_")
}

fn grid(root: &Path, method: Method, holdout: Option<usize>, out: Option<&Path>, config: &Config) -> Result<()> {
    let regions = load_all(root, &config.roads, false)?;
    let drives: Vec<_> = regions
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != holdout)
        .flat_map(|(_, r)| r.drives.iter().map(move |d| (&r.graph, d)))
        .collect();
    let result = grid_search(method, &drives, &config.pipeline)?;
    if let Some(path) = out {
        let mut csv = String::from("parallel_m2,perpendicular_m2,he95_m\n");
        for p in &result.points {
            csv.push_str(&format!("{:e},{:e},{:.16e}\n", p.variances.parallel, p.variances.perpendicular, p.he95));
        }
        write_atomic(path, csv.as_bytes())?;
    }
    println!(
        "method,combinations,parallel_m2,perpendicular_m2,he95_m\n{method},{},{:e},{:e},{:.6}",
        result.points.len(),
        result.best.variances.parallel,
        result.best.variances.perpendicular,
        result.best.he95
    );
    Ok(())
}

fn train_cmd(root: &Path, holdout: Option<usize>, out: &Path, log: Option<&Path>, config: &Config, seed: u64) -> Result<()> {
    let regions = load_all(root, &config.roads, true)?;
    let folds = regions.iter().map(RegionFiles::fold).collect::<Result<Vec<_>>>()?;
    let train_folds: Vec<_> = folds.iter().enumerate().filter(|(i, _)| Some(*i) != holdout).map(|(_, f)| f).collect();
    if train_folds.is_empty() {
        bail!("no training regions left");
    }
    let every = (config.train.iterations / 20).max(1);
    let (model, training) = train_on(&train_folds, &config.model, &config.train, &config.pipeline, seed, |r, _| {
        if r.iteration % every == 0 {
            eprintln!(
                "iteration {:5} loss {:.4} ce {:.4} mse {:.3} accuracy {:.3}",
                r.iteration, r.loss, r.ce, r.mse, r.accuracy
            );
        }
        Ok(())
    })?;
    if let Some(path) = log {
        let mut csv = String::from("iteration,loss,ce,mse,accuracy,counted,skipped\n");
        for r in &training.log {
            csv.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}\n",
                r.iteration, r.loss, r.ce, r.mse, r.accuracy, r.counted, r.skipped
            ));
        }
        write_atomic(path, csv.as_bytes())?;
    }
    let adam = if training.adam.m.is_empty() {
        AdamState::new(model.params())
    } else {
        training.adam
    };
    write_checkpoint(out, &Checkpoint { model, adam })?;
    eprintln!("{}: {} parameters", out.display(), read_checkpoint(out)?.model.parameter_count());
    Ok(())
}

fn evaluate_cmd(root: &Path, out: &Path, plot_path: Option<&Path>, config: &Config) -> Result<()> {
    let regions = load_all(root, &config.roads, true)?;
    let folds = regions.iter().map(RegionFiles::fold).collect::<Result<Vec<_>>>()?;
    let report = evaluate(&folds, &config.evaluation(), |m| eprintln!("{m}"))?;
    write_atomic(out, results_csv(&report.rows).as_bytes())?;
    for s in &report.summary {
        eprintln!(
            "{:12} HE@50 {:8.3} ± {:6.3} m   HE@95 {:8.3} ± {:6.3} m",
            s.method.name(),
            s.he50_mean,
            s.he50_std,
            s.he95_mean,
            s.he95_std
        );
    }
    if let Some(p) = plot_path {
        let curves: Vec<(String, Vec<f64>)> = report.errors.iter().map(|(m, e)| (m.name().to_string(), e.clone())).collect();
        write_atomic(p, cdf_svg(&curves, axis_end(&curves)).as_bytes())?;
    }
    Ok(())
}

/// A round axis end that shows the 95th percentile of every curve.
fn axis_end(curves: &[(String, Vec<f64>)]) -> f64 {
    let he95 = curves
        .iter()
        .map(|(_, e)| ErrorSummary::from_errors(e).he95)
        .filter(|v| v.is_finite())
        .fold(1.0, f64::max);
    (he95 * 1.2 / 10.0).ceil() * 10.0
}

fn plot(files: &[PathBuf], out: &Path, max_error: f64) -> Result<()> {
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for f in files {
        let r = read_results(f)?;
        match curves.iter_mut().find(|(n, _)| n == r.method.name()) {
            Some((_, e)) => e.extend(r.errors),
            None => curves.push((r.method.name().to_string(), r.errors)),
        }
    }
    if !(max_error > 0.0) {
        bail!("--max-error must be positive");
    }
    write_atomic(out, cdf_svg(&curves, max_error).as_bytes())?;
    Ok(())
}

fn gradcheck_cmd(config: &Config, seed: u64) -> Result<()> {
    let mut scenario = config.benchmark.scenario.clone();
    scenario.drive.duration = scenario.drive.duration.min(60.0);
    let graph = generate_network(&scenario.network, network_seed(seed, 0))?.build_graph(&config.roads)?;
    let drive = generate_drive(&graph, "gradcheck", &scenario, drive_seed(seed, 0, 0))?;
    let labels = oracle_labels(&drive, &graph, &config.pipeline)?;
    let gnss_only = run_kf(&drive, &graph, None, &config.pipeline)?;
    let data = [TrainingDrive {
        graph: &graph,
        drive: &drive,
        labels: &labels,
        gnss_only: &gnss_only,
    }];
    let report = gradcheck(&data, &config.gradcheck, &config.pipeline, seed)?;
    let worst = report.worst().context("no gradients were checked")?;
    println!(
        "checks,worst_relative_error,worst_parameter,tolerance,passed\n{},{:e},{},{:e},{}",
        report.checks.len(),
        worst.relative_error,
        worst.name,
        report.tolerance,
        report.passed()
    );
    if !report.passed() {
        bail!("gradient check failed for {} (relative error {:e})", worst.name, worst.relative_error);
    }
    Ok(())
}
