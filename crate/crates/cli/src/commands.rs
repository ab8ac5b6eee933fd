//! Subcommand implementations.

use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use gsbench_core::data::{generate_synthetic, load_featureset, save_featureset, SyntheticConfig};
use gsbench_core::eval::{evaluate, make_holdout, make_split};
use gsbench_core::metric::MetricKind;
use gsbench_core::model::EmbeddingModel;
use gsbench_core::sampler::SamplerKind;
use gsbench_core::seeding::{derive, stream};
use gsbench_core::trainer::train;
use gsbench_core::Error as CoreError;

use crate::args::{BenchArgs, EvalArgs, GenArgs, TrainArgs};
use crate::bench::{run_bench, sha256_hex, BenchSettings, TargetMap};
use crate::config::ExperimentConfig;
use crate::csvio::{
    write_comparison_csv, write_epochs_csv, write_eval_csv, write_metrics_csv, EvalRow,
};

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        num_classes: args.classes,
        num_groups: args.groups,
        samples_per_class_min: args.per_class_min.unwrap_or(args.per_class),
        samples_per_class_max: args.per_class_max.unwrap_or(args.per_class),
        ambient_dim: args.dim,
        group_center_scale: args.group_scale,
        class_center_scale: args.class_scale,
        within_class_sigma: args.sigma,
        nuisance_dim: args.nuisance_dim,
        nuisance_sigma: args.nuisance_sigma,
        seed: args.seed,
    };
    let set = generate_synthetic(&cfg)?;
    save_featureset(&set, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let manifest = format!(
        "command = gen\nclasses = {}\ngroups = {}\nper_class_min = {}\nper_class_max = {}\ndim = {}\ngroup_scale = {}\nclass_scale = {}\nsigma = {}\nnuisance_dim = {}\nnuisance_sigma = {}\nseed = {}\n",
        cfg.num_classes,
        cfg.num_groups,
        cfg.samples_per_class_min,
        cfg.samples_per_class_max,
        cfg.ambient_dim,
        cfg.group_center_scale,
        cfg.class_center_scale,
        cfg.within_class_sigma,
        cfg.nuisance_dim,
        cfg.nuisance_sigma,
        cfg.seed
    );
    let manifest_path = args.out.with_extension("manifest");
    write_text(&manifest_path, &manifest)?;

    println!(
        "N={} C={} d_in={}",
        set.num_samples(),
        set.num_classes(),
        set.dim()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::resolve(&args.run)?;
    let train_bytes = std::fs::read(&args.train_file)
        .with_context(|| format!("reading {}", args.train_file.display()))?;
    let train_set =
        load_featureset(&args.train_file).with_context(|| args.train_file.display().to_string())?;

    let (eval_source, split_name) = match &args.test_file {
        Some(path) => {
            let set =
                load_featureset(path).with_context(|| path.display().to_string())?;
            (set, file_stem(path))
        }
        None => (train_set.clone(), file_stem(&args.train_file)),
    };
    let split = make_split(
        &eval_source,
        cfg.queries_per_class,
        derive(cfg.train.seed, stream::EVAL_SPLIT),
    )?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut manifest = cfg.manifest_body();
    manifest.push_str(&format!("command = train\ntrain_file = {}\n", args.train_file.display()));
    manifest.push_str(&format!("train_data_sha256 = {}\n", sha256_hex(&train_bytes)));
    if let Some(path) = &args.test_file {
        manifest.push_str(&format!("test_file = {}\n", path.display()));
    }

    match train(&train_set, &cfg.train, cfg.sampler_kind) {
        Ok((model, log)) => {
            model.save(args.out.join("checkpoint.txt"))?;
            write_text(&args.out.join("metrics.csv"), &write_metrics_csv(&log.iterations))?;
            write_text(&args.out.join("epochs.csv"), &write_epochs_csv(&log.epochs))?;
            let report = evaluate(&model, &split, cfg.train.metric)?;
            let row = EvalRow {
                split: split_name,
                seed: cfg.train.seed,
                rank1: report.rank1,
                map: report.map,
                num_queries: report.num_queries,
            };
            write_text(&args.out.join("eval.csv"), &write_eval_csv(&[row]))?;
            write_text(&args.out.join("manifest.txt"), &manifest)?;
            let last_epoch = cfg.train.total_epochs.saturating_sub(1);
            println!(
                "trained {} epochs ({} iterations) with {}; final epoch mean loss {:.6}",
                cfg.train.total_epochs,
                log.iterations.len(),
                cfg.sampler_kind.name(),
                log.epoch_mean_loss(last_epoch),
            );
            println!(
                "eval: rank1 {:.4} mAP {:.4} over {} queries",
                report.rank1, report.map, report.num_queries
            );
            Ok(())
        }
        Err(err @ CoreError::Diverged { .. }) => {
            let diag = format!("{err}\n\nresolved configuration:\n{manifest}");
            write_text(&args.out.join("diagnostics.txt"), &diag)?;
            Err(err).context("training aborted; diagnostics written")
        }
        Err(err) => Err(err.into()),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = EmbeddingModel::load(&args.checkpoint)
        .with_context(|| args.checkpoint.display().to_string())?;
    let set = load_featureset(&args.features)
        .with_context(|| args.features.display().to_string())?;
    let metric = MetricKind::from_str(args.metric.as_deref().unwrap_or("euclidean"))?;
    let seed = args.seed.unwrap_or(0);
    let split = make_split(
        &set,
        args.queries_per_class.unwrap_or(1),
        derive(seed, stream::EVAL_SPLIT),
    )?;
    let report = evaluate(&model, &split, metric)?;
    let row = EvalRow {
        split: file_stem(&args.features),
        seed,
        rank1: report.rank1,
        map: report.map,
        num_queries: report.num_queries,
    };
    write_text(&args.out, &write_eval_csv(&[row]))?;
    let manifest = format!(
        "command = eval\ncheckpoint = {}\nfeatures = {}\nqueries_per_class = {}\nmetric = {}\nseed = {seed}\n",
        args.checkpoint.display(),
        args.features.display(),
        args.queries_per_class.unwrap_or(1),
        metric.name(),
    );
    write_text(&args.out.with_extension("manifest"), &manifest)?;
    println!(
        "eval: rank1 {:.4} mAP {:.4} over {} queries",
        report.rank1, report.map, report.num_queries
    );
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let experiment = ExperimentConfig::resolve(&args.run)?;
    let mut samplers = Vec::new();
    for name in args.samplers.split(',') {
        samplers.push(SamplerKind::from_str(name.trim())?);
    }
    let runs = args.runs.unwrap_or(experiment.runs);
    let experiment = ExperimentConfig { runs, ..experiment };

    let train_bytes = std::fs::read(&args.train_file)
        .with_context(|| format!("reading {}", args.train_file.display()))?;
    let data_sha256 = sha256_hex(&train_bytes);
    let full_set =
        load_featureset(&args.train_file).with_context(|| args.train_file.display().to_string())?;

    // Evaluation pool: an explicit test file, or a per-class holdout carved
    // from the training file before training.
    let (train_set, eval_pool) = match &args.test_file {
        Some(path) => {
            let pool = load_featureset(path).with_context(|| path.display().to_string())?;
            (full_set, pool)
        }
        None => {
            let hpc = args.holdout_per_class.unwrap_or(experiment.holdout_per_class);
            make_holdout(
                &full_set,
                hpc,
                derive(experiment.train.seed, stream::EVAL_SPLIT),
            )?
        }
    };
    let split = make_split(
        &eval_pool,
        experiment.queries_per_class,
        derive(experiment.train.seed, stream::EVAL_SPLIT ^ 0xff),
    )?;

    let target = if args.target_map == "auto" {
        TargetMap::Auto
    } else {
        TargetMap::Fixed(
            args.target_map
                .parse()
                .with_context(|| format!("target_map {:?}", args.target_map))?,
        )
    };
    let settings = BenchSettings {
        experiment: experiment.clone(),
        samplers,
        target,
        eval_every: args.eval_every,
    };

    let outcome = run_bench(&train_set, &split, &settings, &data_sha256)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(
        &args.out.join("comparison.csv"),
        &write_comparison_csv(&outcome.rows),
    )?;
    let mut manifest = experiment.manifest_body();
    manifest.push_str(&format!(
        "command = bench\ntrain_file = {}\ntrain_data_sha256 = {}\nsamplers = {}\ntarget_map = {}\neval_every = {}\n",
        args.train_file.display(),
        data_sha256,
        args.samplers,
        args.target_map,
        args.eval_every
    ));
    write_text(&args.out.join("manifest.txt"), &manifest)?;

    for (name, mean, std) in &outcome.aggregates {
        println!("{name}: mAcc {mean:.4} ± {std:.4} over {runs} runs");
    }
    Ok(())
}
