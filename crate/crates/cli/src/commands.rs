//! The eight subcommands. Each resolves its effective configuration from
//! flags and the config overlay, validates it before any work, and writes
//! outputs atomically with the run manifest embedded.

use std::path::{Path, PathBuf};

use serde_json::json;

use certshift::adversary::{adaptive_attack_sweep, strategic_attack_sweep, AttackBudget};
use certshift::certify::{
    certify, default_eps_grid, evaluate_smoothed, gap_check, pairs_to_samples,
    random_shift_params, shift_dataset, wasserstein_upper_bound,
};
use certshift::classifier::{plain_accuracy, train, TrainConfig, TrainKind};
use certshift::dataset::{generate_synthetic, read_dataset, write_dataset, Dataset};
use certshift::manifest::fnv1a64;
use certshift::psi::{pair_psi, psi_eval, tv_oracle, PsiFn};
use certshift::smoothing::{SeedPolicy, SmoothingSpace, SmoothingSpec};
use certshift::transform::{transform_distance, ParamVector, TransformKind};
use certshift::unlearnable::{run_unlearnability_experiment, PoisonConfig};

use crate::config::{
    parse_float_list, parse_transform, pick, pick_opt, pick_required, Overlay, SmoothingArgs,
};
use crate::error::{runtime, CliError};
use crate::model::{load_model, save_model};
use crate::output::{manifest_hash_hex, manifest_with, opt_cell, render_csv, write_csv, write_json};

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    /// Number of samples.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    classes: Option<u32>,
    /// Image side length.
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn gen_data(args: &GenDataArgs, overlay: &Overlay) -> Result<(), CliError> {
    overlay.check_keys(&["n", "classes", "size", "seed", "out"])?;
    let n = pick(args.n, overlay.get("n")?, 4000);
    let classes = pick(args.classes, overlay.get("classes")?, 4);
    let size = pick(args.size, overlay.get("size")?, 3);
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let out: PathBuf = pick_required(args.out.clone(), overlay.get("out")?, "out")?;
    let manifest = manifest_with(
        "gen-data",
        seed,
        &[
            ("n", json!(n)),
            ("classes", json!(classes)),
            ("size", json!(size)),
        ],
    );
    let dataset =
        generate_synthetic(n, classes, size, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let provenance = serde_json::to_string(&manifest).expect("manifest serializes");
    write_dataset(&dataset, &out, &provenance).map_err(runtime)?;
    println!(
        "wrote {} ({} samples, {} classes, {size}x{size})",
        out.display(),
        dataset.len(),
        dataset.num_classes()
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// logistic or nearest-centroid.
    #[arg(long)]
    model_kind: Option<String>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "model-kind",
        "epochs",
        "learning-rate",
        "batch-size",
        "seed",
        "out",
    ];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let data: PathBuf = pick_required(args.data.clone(), overlay.get("data")?, "data")?;
    let out: PathBuf = pick_required(args.out.clone(), overlay.get("out")?, "out")?;
    let kind_name = pick(
        args.model_kind.clone(),
        overlay.get("model-kind")?,
        "logistic".to_owned(),
    );
    let kind = match kind_name.as_str() {
        "logistic" => TrainKind::Logistic,
        "nearest-centroid" => TrainKind::NearestCentroid,
        other => return Err(CliError::Config(format!("unknown model kind {other:?}"))),
    };
    let spec = args.smoothing.resolve(overlay)?;
    let config = TrainConfig {
        epochs: pick(args.epochs, overlay.get("epochs")?, 30),
        learning_rate: pick(args.learning_rate, overlay.get("learning-rate")?, 0.5),
        batch_size: pick(args.batch_size, overlay.get("batch-size")?, 32),
        smoothing: spec.clone(),
        seed: pick(args.seed, overlay.get("seed")?, 0),
    };
    config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (dataset, checksum) = load_data(&data)?;
    let manifest = manifest_with(
        "train",
        config.seed,
        &[
            ("dataset-checksum", json!(checksum)),
            ("model-kind", json!(kind_name)),
            ("epochs", json!(config.epochs)),
            ("learning-rate", json!(config.learning_rate)),
            ("batch-size", json!(config.batch_size)),
            ("smoothing", json!(spec)),
        ],
    );
    let handle = train(dataset.samples(), dataset.num_classes(), kind, &config)
        .map_err(runtime)?;
    let accuracy = plain_accuracy(&handle, dataset.samples()).map_err(runtime)?;
    save_model(&out, &handle, &manifest)?;
    println!(
        "trained {kind_name} on {} samples, plain accuracy {accuracy:.4}; wrote {}",
        dataset.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct CertifyArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Confidence level for the lower bound.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

pub fn cmd_certify(args: &CertifyArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "model",
        "alpha",
        "seed",
        "grid-min",
        "grid-max",
        "grid-points",
        "out-csv",
        "out-json",
    ];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let data: PathBuf = pick_required(args.data.clone(), overlay.get("data")?, "data")?;
    let model: PathBuf = pick_required(args.model.clone(), overlay.get("model")?, "model")?;
    let alpha = pick(args.alpha, overlay.get("alpha")?, 0.001);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!(
            "--alpha {alpha} must lie strictly between 0 and 1"
        )));
    }
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let spec = args.smoothing.resolve(overlay)?.ok_or_else(|| {
        CliError::Config("certify needs a smoothing family (--smoothing)".to_owned())
    })?;
    let psi = pair_psi(&spec);
    let (grid, grid_desc) = resolve_grid(args.grid_min, args.grid_max, args.grid_points, overlay, psi)?;
    let (dataset, data_checksum) = load_data(&data)?;
    let handle = load_model(&model)?;
    let model_checksum = file_checksum(&model)?;
    let manifest = manifest_with(
        "certify",
        seed,
        &[
            ("dataset-checksum", json!(data_checksum)),
            ("model-checksum", json!(model_checksum)),
            ("smoothing", json!(spec)),
            ("psi", json!(psi)),
            ("alpha", json!(alpha)),
            ("grid", grid_desc),
        ],
    );
    let records = evaluate_smoothed(dataset.samples(), &handle, &spec, &SeedPolicy::new(seed))
        .map_err(runtime)?;
    let curve = certify(&records, psi, alpha, &grid)
        .map_err(runtime)?
        .with_manifest_hash(manifest_hash_hex(&manifest));
    let rows: Vec<String> = curve
        .epsilons
        .iter()
        .zip(&curve.lower_bounds)
        .map(|(e, b)| format!("{e},{b}"))
        .collect();
    if let Some(path) = pick_opt(args.out_csv.clone(), overlay.get("out-csv")?) {
        write_csv(&path, &manifest, "epsilon,lower_bound", &rows)?;
        println!("wrote {}", path.display());
    } else {
        print!("{}", render_csv(&manifest, "epsilon,lower_bound", &rows));
    }
    if let Some(path) = pick_opt(args.out_json.clone(), overlay.get("out-json")?) {
        write_json(&path, &manifest, "certificate", &curve)?;
        println!("wrote {}", path.display());
    }
    println!(
        "certified: p_lower {:.6} ({:?}, n={}, alpha={alpha})",
        curve.p_lower, curve.bound_kind, curve.n
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct ShiftEvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Transform family of the shift.
    #[arg(long)]
    shift_transform: Option<String>,
    /// One global parameter, comma-separated components.
    #[arg(long)]
    theta: Option<String>,
    /// Mean parameter norm for per-sample random shifts.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

pub fn cmd_shift_eval(args: &ShiftEvalArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "model",
        "shift-transform",
        "theta",
        "eps",
        "seed",
        "out-json",
    ];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let data: PathBuf = pick_required(args.data.clone(), overlay.get("data")?, "data")?;
    let model: PathBuf = pick_required(args.model.clone(), overlay.get("model")?, "model")?;
    let kind = parse_transform(&pick_required(
        args.shift_transform.clone(),
        overlay.get("shift-transform")?,
        "shift-transform",
    )?)?;
    let theta = pick_opt(args.theta.clone(), overlay.get("theta")?);
    let eps = pick_opt(args.eps, overlay.get("eps")?);
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let spec = args.smoothing.resolve(overlay)?.ok_or_else(|| {
        CliError::Config("shift-eval needs a smoothing family (--smoothing)".to_owned())
    })?;
    let psi = pair_psi(&spec);
    let (dataset, data_checksum) = load_data(&data)?;
    let handle = load_model(&model)?;
    let model_checksum = file_checksum(&model)?;
    let samples = dataset.samples();
    let components = samples[0].image.num_components();

    let (params, shift_desc) = match (theta, eps) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--theta and --eps are mutually exclusive".to_owned(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "shift-eval needs --theta or --eps".to_owned(),
            ))
        }
        (Some(text), None) => {
            let values = parse_float_list(&text, "theta")?;
            if values.len() != kind.param_len(components) {
                return Err(CliError::Config(format!(
                    "--theta has {} components, transform takes {}",
                    values.len(),
                    kind.param_len(components)
                )));
            }
            let theta = kind
                .param(values.clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
            let params = vec![theta; samples.len()];
            (params, json!({ "mode": "global", "theta": values }))
        }
        (None, Some(eps)) => {
            let ids: Vec<u32> = samples.iter().map(|s| s.id).collect();
            let params =
                random_shift_params(kind, components, eps, &ids, &SeedPolicy::new(seed))
                    .map_err(|e| CliError::Config(e.to_string()))?;
            (params, json!({ "mode": "random", "eps": eps }))
        }
    };

    let manifest = manifest_with(
        "shift-eval",
        seed,
        &[
            ("dataset-checksum", json!(data_checksum)),
            ("model-checksum", json!(model_checksum)),
            ("smoothing", json!(spec)),
            ("shift-transform", json!(kind)),
            ("shift", shift_desc.clone()),
        ],
    );
    let pairs = shift_dataset(samples, kind, &params).map_err(runtime)?;
    let wasserstein = wasserstein_upper_bound(&pairs).map_err(runtime)?;
    // Same seed policy on both sides couples the noise draws per sample id.
    let policy = SeedPolicy::new(seed);
    let clean = evaluate_smoothed(samples, &handle, &spec, &policy).map_err(runtime)?;
    let shifted =
        evaluate_smoothed(&pairs_to_samples(&pairs), &handle, &spec, &policy).map_err(runtime)?;
    let report = gap_check(&clean, &shifted, psi, wasserstein).map_err(runtime)?;
    if let Some(path) = pick_opt(args.out_json.clone(), overlay.get("out-json")?) {
        let payload = json!({
            "shift": shift_desc,
            "wasserstein_bound": wasserstein,
            "gap": report,
        });
        write_json(&path, &manifest, "shift_eval", &payload)?;
        println!("wrote {}", path.display());
    }
    println!(
        "gap {:.4} vs psi({:.4}) {:.4} + slack {:.4}: {}",
        report.gap,
        wasserstein,
        report.psi_value,
        report.slack,
        if report.pass { "PASS" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "accuracy gap {:.4} exceeds psi {:.4} + slack {:.4}",
            report.gap, report.psi_value, report.slack
        )))
    }
}

#[derive(Debug, clap::Args)]
pub struct AttackArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// strategic (plain victim) or adaptive (smoothed victim).
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    /// Comma-separated per-sample budget thresholds.
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    gamma_max: Option<f64>,
    #[arg(long)]
    gamma_count: Option<usize>,
    #[arg(long)]
    pgd_steps: Option<u32>,
    #[arg(long)]
    grad_draws: Option<u32>,
    #[arg(long)]
    eval_draws: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_attack(args: &AttackArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "model",
        "mode",
        "gammas",
        "gamma-max",
        "gamma-count",
        "pgd-steps",
        "grad-draws",
        "eval-draws",
        "seed",
        "out",
    ];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let data: PathBuf = pick_required(args.data.clone(), overlay.get("data")?, "data")?;
    let model: PathBuf = pick_required(args.model.clone(), overlay.get("model")?, "model")?;
    let mode = pick(args.mode.clone(), overlay.get("mode")?, "strategic".to_owned());
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let gammas = match pick_opt(args.gammas.clone(), overlay.get("gammas")?) {
        Some(text) => parse_float_list(&text, "gammas")?,
        None => {
            let max = pick(args.gamma_max, overlay.get("gamma-max")?, 2.0);
            let count = pick(args.gamma_count, overlay.get("gamma-count")?, 10);
            if !(max > 0.0 && count >= 1) {
                return Err(CliError::Config(
                    "--gamma-max must be positive and --gamma-count at least 1".to_owned(),
                ));
            }
            (1..=count).map(|i| max * i as f64 / count as f64).collect()
        }
    };
    let spec = args.smoothing.resolve(overlay)?;
    let (dataset, data_checksum) = load_data(&data)?;
    let handle = load_model(&model)?;
    let model_checksum = file_checksum(&model)?;
    let budget = AttackBudget {
        pgd_steps: pick(args.pgd_steps, overlay.get("pgd-steps")?, 20),
        grad_noise_draws: pick(args.grad_draws, overlay.get("grad-draws")?, 16),
        eval_noise_draws: pick(args.eval_draws, overlay.get("eval-draws")?, 100),
        ..AttackBudget::default()
    };
    let manifest = manifest_with(
        "attack",
        seed,
        &[
            ("dataset-checksum", json!(data_checksum)),
            ("model-checksum", json!(model_checksum)),
            ("mode", json!(mode)),
            ("smoothing", json!(spec)),
            ("gammas", json!(gammas)),
            ("pgd-steps", json!(budget.pgd_steps)),
            ("grad-draws", json!(budget.grad_noise_draws)),
            ("eval-draws", json!(budget.eval_noise_draws)),
        ],
    );
    let outcomes = match mode.as_str() {
        "strategic" => {
            if spec.is_some() {
                return Err(CliError::Config(
                    "strategic mode attacks the plain model; drop the smoothing flags".to_owned(),
                ));
            }
            strategic_attack_sweep(dataset.samples(), &handle, &gammas).map_err(runtime)?
        }
        "adaptive" => {
            let spec = spec.ok_or_else(|| {
                CliError::Config("adaptive mode needs a smoothing family".to_owned())
            })?;
            adaptive_attack_sweep(
                dataset.samples(),
                &handle,
                &spec,
                &budget,
                &gammas,
                &SeedPolicy::new(seed),
            )
            .map_err(runtime)?
        }
        other => return Err(CliError::Config(format!("unknown attack mode {other:?}"))),
    };
    let rows: Vec<String> = outcomes
        .iter()
        .map(|o| {
            format!(
                "{},{},{},{}",
                o.gamma, o.wasserstein_bound, o.accuracy, o.attacked_fraction
            )
        })
        .collect();
    let header = "gamma,wasserstein_bound,accuracy,attacked_fraction";
    if let Some(path) = pick_opt(args.out.clone(), overlay.get("out")?) {
        write_csv(&path, &manifest, header, &rows)?;
        println!("wrote {}", path.display());
    } else {
        print!("{}", render_csv(&manifest, header, &rows));
    }
    for o in &outcomes {
        println!(
            "gamma {:.3}: accuracy {:.4}, W <= {:.4}, attacked {:.3}",
            o.gamma, o.accuracy, o.wasserstein_bound, o.attacked_fraction
        );
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct PoisonArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated perturbation budgets.
    #[arg(long)]
    eps_list: Option<String>,
    /// Poison against the smoothed proxy loss (true/false).
    #[arg(long)]
    adaptive: Option<bool>,
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    victim_epochs: Option<u32>,
    #[arg(long)]
    victim_learning_rate: Option<f64>,
    #[arg(long)]
    victim_batch_size: Option<usize>,
    #[arg(long)]
    pgd_steps: Option<u32>,
    #[arg(long)]
    outer_cap: Option<u32>,
    #[arg(long)]
    proxy_size: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn cmd_poison(args: &PoisonArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec![
        "data",
        "eps-list",
        "adaptive",
        "alpha",
        "victim-epochs",
        "victim-learning-rate",
        "victim-batch-size",
        "pgd-steps",
        "outer-cap",
        "proxy-size",
        "train-size",
        "val-size",
        "test-size",
        "seed",
        "out-json",
        "out-csv",
    ];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let data: PathBuf = pick_required(args.data.clone(), overlay.get("data")?, "data")?;
    let eps_text = pick(
        args.eps_list.clone(),
        overlay.get("eps-list")?,
        "0.5,1.0".to_owned(),
    );
    let eps_list = parse_float_list(&eps_text, "eps-list")?;
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let spec = args.smoothing.resolve(overlay)?;
    let defaults = PoisonConfig::default();
    let base = PoisonConfig {
        eps_budget: 0.0,
        pgd_steps: pick(args.pgd_steps, overlay.get("pgd-steps")?, defaults.pgd_steps),
        outer_cap: pick(args.outer_cap, overlay.get("outer-cap")?, defaults.outer_cap),
        proxy_size: pick(args.proxy_size, overlay.get("proxy-size")?, defaults.proxy_size),
        train_size: pick(args.train_size, overlay.get("train-size")?, defaults.train_size),
        val_size: pick(args.val_size, overlay.get("val-size")?, defaults.val_size),
        test_size: pick(args.test_size, overlay.get("test-size")?, defaults.test_size),
        adaptive: pick(args.adaptive, overlay.get("adaptive")?, false),
        adaptive_draws: defaults.adaptive_draws,
        seed,
        alpha: pick(args.alpha, overlay.get("alpha")?, defaults.alpha),
    };
    let victim = TrainConfig {
        epochs: pick(args.victim_epochs, overlay.get("victim-epochs")?, 10),
        learning_rate: pick(
            args.victim_learning_rate,
            overlay.get("victim-learning-rate")?,
            0.5,
        ),
        batch_size: pick(args.victim_batch_size, overlay.get("victim-batch-size")?, 32),
        smoothing: None,
        seed,
    };
    victim
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (dataset, data_checksum) = load_data(&data)?;
    let manifest = manifest_with(
        "poison",
        seed,
        &[
            ("dataset-checksum", json!(data_checksum)),
            ("eps-list", json!(eps_list)),
            ("adaptive", json!(base.adaptive)),
            ("alpha", json!(base.alpha)),
            ("smoothing", json!(spec)),
            ("victim-epochs", json!(victim.epochs)),
            ("victim-learning-rate", json!(victim.learning_rate)),
            ("victim-batch-size", json!(victim.batch_size)),
            ("pgd-steps", json!(base.pgd_steps)),
            ("outer-cap", json!(base.outer_cap)),
            (
                "splits",
                json!([base.proxy_size, base.train_size, base.val_size, base.test_size]),
            ),
        ],
    );
    let mut reports = Vec::new();
    for &eps in &eps_list {
        let config = PoisonConfig {
            eps_budget: eps,
            ..base.clone()
        };
        config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let report = run_unlearnability_experiment(&dataset, &config, &victim, spec.as_ref())
            .map_err(runtime)?;
        println!(
            "eps {eps}: poisoned-val {:.4}, clean-test {:.4}, certified bound {:.4}",
            report.poisoned_val_accuracy, report.clean_test_accuracy, report.certified_bound
        );
        reports.push(report);
    }
    if let Some(path) = pick_opt(args.out_json.clone(), overlay.get("out-json")?) {
        write_json(&path, &manifest, "reports", &reports)?;
        println!("wrote {}", path.display());
    }
    let rows: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.eps_budget,
                r.victim_train_accuracy,
                r.poisoned_val_accuracy,
                r.clean_test_accuracy,
                r.val_lower_bound,
                r.psi_value,
                r.certified_bound
            )
        })
        .collect();
    let header = "eps_budget,victim_train_accuracy,poisoned_val_accuracy,clean_test_accuracy,\
                  val_lower_bound,psi_value,certified_bound";
    if let Some(path) = pick_opt(args.out_csv.clone(), overlay.get("out-csv")?) {
        write_csv(&path, &manifest, header, &rows)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct TvCheckArgs {
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    n_thetas: Option<u32>,
    /// Monte Carlo draws per parameter (Gaussian families; 0 disables).
    #[arg(long)]
    mc_draws: Option<u32>,
    /// Largest parameter norm probed.
    #[arg(long)]
    max_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_tv_check(args: &TvCheckArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec!["n-thetas", "mc-draws", "max-norm", "seed", "out"];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let spec = args.smoothing.resolve(overlay)?.ok_or_else(|| {
        CliError::Config("tv-check needs a smoothing family (--smoothing)".to_owned())
    })?;
    let n_thetas = pick(args.n_thetas, overlay.get("n-thetas")?, 200);
    let mc_draws = pick(args.mc_draws, overlay.get("mc-draws")?, 10_000);
    let max_norm = pick(
        args.max_norm,
        overlay.get("max-norm")?,
        default_max_norm(&spec),
    );
    if !(max_norm > 0.0 && max_norm.is_finite() && n_thetas > 0) {
        return Err(CliError::Config(
            "--max-norm must be positive and --n-thetas nonzero".to_owned(),
        ));
    }
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let psi = pair_psi(&spec);
    let manifest = manifest_with(
        "tv-check",
        seed,
        &[
            ("smoothing", json!(spec)),
            ("psi", json!(psi)),
            ("n-thetas", json!(n_thetas)),
            ("mc-draws", json!(mc_draws)),
            ("max-norm", json!(max_norm)),
        ],
    );
    let (kind, components) = theta_space(&spec);
    let policy = SeedPolicy::new(seed);
    let mc_policy = policy.stream(0x4d43);
    let mut rows = Vec::new();
    let mut failures = 0u32;
    for i in 0..n_thetas {
        // Deterministic norm ladder, random direction per index.
        let norm = max_norm * f64::from(i + 1) / f64::from(n_thetas);
        let theta = random_shift_params(kind, components, norm, &[i], &policy)
            .map_err(runtime)?
            .remove(0);
        let distance = theta_distance(&spec, kind, &theta)?;
        let tv = tv_oracle(&spec, &theta, mc_draws, mc_policy.sample_seed(i)).map_err(runtime)?;
        let psi_value = psi_eval(psi, distance).map_err(runtime)?;
        let exact_ok = tv.exact <= psi_value + 1e-9;
        let mc_ok = match (tv.mc_estimate, tv.mc_stderr) {
            (Some(mc), Some(se)) => mc <= psi_value + 3.0 * se,
            _ => true,
        };
        let pass = exact_ok && mc_ok;
        if !pass {
            failures += 1;
        }
        rows.push(format!(
            "{distance},{},{},{},{psi_value},{pass}",
            tv.exact,
            opt_cell(tv.mc_estimate),
            opt_cell(tv.mc_stderr)
        ));
    }
    let header = "theta_norm,tv_exact,tv_mc,tv_mc_stderr,psi,pass";
    if let Some(path) = pick_opt(args.out.clone(), overlay.get("out")?) {
        write_csv(&path, &manifest, header, &rows)?;
        println!("wrote {}", path.display());
    } else {
        print!("{}", render_csv(&manifest, header, &rows));
    }
    if failures == 0 {
        println!("tv-check: {n_thetas}/{n_thetas} parameters satisfy tv <= psi");
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "tv exceeded psi on {failures}/{n_thetas} parameters"
        )))
    }
}

#[derive(Debug, clap::Args)]
pub struct PsiTableArgs {
    #[command(flatten)]
    smoothing: SmoothingArgs,
    #[arg(long)]
    grid_min: Option<f64>,
    #[arg(long)]
    grid_max: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Monte Carlo draws per row (Gaussian families; 0 disables).
    #[arg(long)]
    mc_draws: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn cmd_psi_table(args: &PsiTableArgs, overlay: &Overlay) -> Result<(), CliError> {
    let mut keys = vec!["grid-min", "grid-max", "grid-points", "mc-draws", "seed", "out"];
    keys.extend(SmoothingArgs::KEYS);
    overlay.check_keys(&keys)?;
    let spec = args.smoothing.resolve(overlay)?.ok_or_else(|| {
        CliError::Config("psi-table needs a smoothing family (--smoothing)".to_owned())
    })?;
    let mc_draws = pick(args.mc_draws, overlay.get("mc-draws")?, 10_000);
    let seed = pick(args.seed, overlay.get("seed")?, 0);
    let psi = pair_psi(&spec);
    let (grid, grid_desc) =
        resolve_grid(args.grid_min, args.grid_max, args.grid_points, overlay, psi)?;
    let manifest = manifest_with(
        "psi-table",
        seed,
        &[
            ("smoothing", json!(spec)),
            ("psi", json!(psi)),
            ("grid", grid_desc),
            ("mc-draws", json!(mc_draws)),
        ],
    );
    let (kind, components) = theta_space(&spec);
    let dim = kind.param_len(components);
    let mc_policy = SeedPolicy::new(seed).stream(0x4d43);
    let mut rows = Vec::new();
    for (i, &eps) in grid.iter().enumerate() {
        // Axis-aligned parameter of norm eps; for box noise this direction
        // saturates the bound, so tv_exact meets psi there.
        let mut values = vec![0.0; dim];
        values[0] = eps;
        let theta = kind
            .param(values)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let tv = tv_oracle(&spec, &theta, mc_draws, mc_policy.sample_seed(i as u32))
            .map_err(runtime)?;
        let psi_value = psi_eval(psi, eps).map_err(runtime)?;
        rows.push(format!(
            "{eps},{psi_value},{},{},{}",
            tv.exact,
            opt_cell(tv.mc_estimate),
            opt_cell(tv.mc_stderr)
        ));
    }
    let header = "epsilon,psi,tv_exact,tv_mc,tv_mc_stderr";
    if let Some(path) = pick_opt(args.out.clone(), overlay.get("out")?) {
        write_csv(&path, &manifest, header, &rows)?;
        println!("wrote {}", path.display());
    } else {
        print!("{}", render_csv(&manifest, header, &rows));
    }
    Ok(())
}

fn load_data(path: &Path) -> Result<(Dataset, String), CliError> {
    let dataset = read_dataset(path)
        .map_err(|e| CliError::Config(format!("dataset {}: {e}", path.display())))?;
    Ok((dataset, file_checksum(path)?))
}

fn file_checksum(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}

/// Linear grid when any grid flag is present, otherwise the psi-adapted
/// default. Returns the grid plus its manifest description.
fn resolve_grid(
    flag_min: Option<f64>,
    flag_max: Option<f64>,
    flag_points: Option<usize>,
    overlay: &Overlay,
    psi: PsiFn,
) -> Result<(Vec<f64>, serde_json::Value), CliError> {
    let min = pick_opt(flag_min, overlay.get("grid-min")?);
    let max = pick_opt(flag_max, overlay.get("grid-max")?);
    let points = pick_opt(flag_points, overlay.get("grid-points")?);
    if min.is_none() && max.is_none() && points.is_none() {
        return Ok((default_eps_grid(psi), json!({ "mode": "auto" })));
    }
    let min = min.unwrap_or(0.0);
    let max = max.unwrap_or(1.0);
    let points = points.unwrap_or(64);
    if !(min >= 0.0 && max > min && max.is_finite() && points >= 2) {
        return Err(CliError::Config(format!(
            "invalid grid: min {min}, max {max}, points {points}"
        )));
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
        .collect();
    Ok((
        grid,
        json!({ "mode": "linear", "min": min, "max": max, "points": points }),
    ))
}

/// Transform space and component count used to draw check parameters for a
/// smoothing family. Pixel-space noise measures plain l2, modeled here as a
/// 3-component translation (the oracle depends only on the norm).
fn theta_space(spec: &SmoothingSpec) -> (TransformKind, usize) {
    match spec.space() {
        SmoothingSpace::Transform(t) => (t, 3),
        SmoothingSpace::PixelSpace => (TransformKind::VectorTranslate, 3),
    }
}

fn theta_distance(
    spec: &SmoothingSpec,
    kind: TransformKind,
    theta: &ParamVector,
) -> Result<f64, CliError> {
    match spec.space() {
        SmoothingSpace::Transform(_) => transform_distance(kind, theta).map_err(runtime),
        SmoothingSpace::PixelSpace => Ok(theta.norm()),
    }
}

fn default_max_norm(spec: &SmoothingSpec) -> f64 {
    use certshift::smoothing::SmoothingKind;
    match spec.kind() {
        SmoothingKind::GaussianParam { sigma, .. } | SmoothingKind::PixelGaussian { sigma } => {
            if sigma > 0.0 {
                3.0 * sigma
            } else {
                1.0
            }
        }
        SmoothingKind::UniformParam { a, .. } => 1.5 * a,
        SmoothingKind::UniformHue => std::f64::consts::PI,
        SmoothingKind::ChannelSelect => 1.0,
    }
}
