use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use kws_ode::checkpoint::{config_digest, Checkpoint};
use kws_ode::dataset::{build_index, generate_corpus, Dataset, IndexConfig, SynthConfig, KEYWORDS};
use kws_ode::models::{LayerKind, ModelSpec};
use kws_ode::train::{evaluate, train as run_training, BnMode, TrainConfig};
use log::info;

use crate::{Axis, CountArgs, DataArgs, EvalArgs, PrepareArgs, SweepArgs, SynthArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn index_config(args: &DataArgs) -> IndexConfig {
    let keywords = args
        .subset
        .clone()
        .unwrap_or_else(|| KEYWORDS.iter().map(|s| s.to_string()).collect());
    IndexConfig {
        seed: args.index_seed,
        keywords,
        ..IndexConfig::default()
    }
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let index = build_index(&args.data_dir, &index_config(args))
        .with_context(|| format!("indexing {}", args.data_dir.display()))?;
    Ok(Dataset::new(index)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        speakers: a.speakers,
        noise_seconds: a.noise_seconds,
        ..SynthConfig::default()
    };
    let s = generate_corpus(&a.out, &cfg)?;
    println!(
        "wrote {} utterances ({} validation, {} test) and {} noise files to {}",
        s.utterances,
        s.validation,
        s.testing,
        s.noise_files,
        a.out.display()
    );
    Ok(())
}

pub fn prepare(a: PrepareArgs) -> Result<()> {
    let index = build_index(&a.data.data_dir, &index_config(&a.data))
        .with_context(|| format!("indexing {}", a.data.data_dir.display()))?;
    print!("{}", index.summary());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let spec = ModelSpec::new(a.model);
    let mut cfg = TrainConfig::for_variant(a.model, a.seed);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let description = format!(
        "{} keywords={:?} index_seed={}",
        cfg.describe(),
        index_config(&a.data).keywords,
        a.data.index_seed
    );
    info!("training {} for {} epochs", a.model, cfg.epochs);
    let outcome = run_training(spec.clone(), &data, &cfg)?;
    let ckpt = Checkpoint {
        config_digest: config_digest(&spec, &description),
        epoch: outcome.state.epoch,
        model: outcome.model,
    };
    ckpt.save(&a.out)?;
    let steps = a.out.with_extension("steps.csv");
    let epochs = a.out.with_extension("epochs.csv");
    write_file(&steps, &outcome.state.log.steps_csv())?;
    write_file(&epochs, &outcome.state.log.epochs_csv())?;
    let last = outcome.state.log.epochs.last();
    println!(
        "checkpoint {} after {} steps; final validation accuracy {:.4}, best {:.4}",
        a.out.display(),
        outcome.state.step,
        last.map_or(f64::NAN, |e| e.val_accuracy),
        outcome.state.best_validation_accuracy
    );
    println!("metrics {} {}", steps.display(), epochs.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let tol = a.tol.unwrap_or(ckpt.model.spec().infer_tolerance);
    if a.batch_size == 0 {
        return Err(UsageError("--batch-size must be at least 1".into()).into());
    }
    let mode: BnMode = a.bn.into();
    let split = a.split.into();
    let r = evaluate(&ckpt.model, &data, split, tol, a.batch_size, mode)?;
    println!("model {}", ckpt.model.spec().variant);
    println!("split {split} ({} samples)", r.total);
    println!("accuracy {:.4} ({}/{})", r.accuracy, r.correct, r.total);
    println!("mean_nfe {:.3}", r.mean_nfe);
    println!("total_mults {}", r.total_mults);
    if let Some(path) = a.csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        if fresh {
            writeln!(f, "split,tolerance,batch_size,bn,accuracy,mean_nfe,total_mults")?;
        }
        let bn = match mode {
            BnMode::Lbn => "lbn",
            BnMode::Naive => "naive",
        };
        writeln!(
            f,
            "{split},{tol},{},{bn},{},{},{}",
            a.batch_size, r.accuracy, r.mean_nfe, r.total_mults
        )?;
    }
    Ok(())
}

fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn count(a: CountArgs) -> Result<()> {
    let spec = ModelSpec::new(a.model);
    let cost = spec.cost();
    let (k1, k2, k3) = match spec.family() {
        kws_ode::models::Family::Tcnn => ("m", "s", "c"),
        kws_ode::models::Family::Tdnn => ("w", "s", "d"),
    };
    println!("{}", a.model);
    println!(
        "{:<10} {:<10} {:>3} {:>3} {:>4} {:>4} {:>8} {:>10}",
        "layer", "type", k1, k2, k3, "l", "# param", "# mult"
    );
    let mut csv = String::from("layer,type,kernel,stride,channels,length,params,mults,in_ode\n");
    for r in &cost.rows {
        let kernel = if r.kind == LayerKind::AvgPool && r.out_len == 1 {
            String::new()
        } else {
            r.kernel.to_string()
        };
        println!(
            "{:<10} {:<10} {:>3} {:>3} {:>4} {:>4} {:>8} {:>10}{}",
            r.name,
            r.kind.label(),
            kernel,
            r.stride,
            r.channels,
            r.out_len,
            grouped(r.params),
            grouped(r.mults),
            if r.in_ode { "  (per NFE)" } else { "" }
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.name,
            r.kind.label(),
            r.kernel,
            r.stride,
            r.channels,
            r.out_len,
            r.params,
            r.mults,
            r.in_ode
        );
    }
    println!("total params {}", grouped(cost.total_params));
    println!(
        "total mults  {} + {} x NFE",
        grouped(cost.mults_fixed),
        grouped(cost.mults_per_eval)
    );
    println!("at NFE={}: {}", a.nfe, grouped(cost.total_mults(a.nfe)));
    let _ = writeln!(
        csv,
        "total,,,,,,{},{},",
        cost.total_params,
        cost.total_mults(a.nfe)
    );
    if let Some(path) = a.csv {
        write_file(&path, &csv)?;
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let data = load_dataset(&a.data)?;
    let model = &ckpt.model;
    let split = a.split.into();
    let mut csv = String::new();
    match a.axis {
        Axis::Tolerance => {
            csv.push_str("tolerance,accuracy,mean_nfe,total_mults\n");
            for &tol in &a.values {
                if !(tol > 0.0) {
                    return Err(UsageError(format!("tolerance {tol} must be positive")).into());
                }
                let r = evaluate(model, &data, split, tol, 1, BnMode::Lbn)?;
                info!("tol {tol}: accuracy {:.4}, mean nfe {:.3}", r.accuracy, r.mean_nfe);
                let _ = writeln!(csv, "{tol},{},{},{}", r.accuracy, r.mean_nfe, r.total_mults);
            }
        }
        Axis::Batch => {
            csv.push_str("batch_size,accuracy_lbn,accuracy_naive\n");
            let tol = a.tol.unwrap_or(model.spec().infer_tolerance);
            for &b in &a.values {
                if b < 1.0 || b.fract() != 0.0 {
                    return Err(UsageError(format!("batch size {b} must be a positive integer")).into());
                }
                let b = b as usize;
                let lbn = evaluate(model, &data, split, tol, b, BnMode::Lbn)?;
                let naive = evaluate(model, &data, split, tol, b, BnMode::Naive)?;
                info!("batch {b}: lbn {:.4}, naive {:.4}", lbn.accuracy, naive.accuracy);
                let _ = writeln!(csv, "{b},{},{}", lbn.accuracy, naive.accuracy);
            }
        }
    }
    write_file(&a.csv, &csv)?;
    print!("{csv}");
    Ok(())
}
