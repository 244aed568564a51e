use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use qkge_core::checkpoint::ModelCheckpoint;
use qkge_core::evalrank::{eta_histogram, evaluate, write_metrics_csv, EvalOptions, RankResult, TieBreak};
use qkge_core::inference::{run_inference, InferOptions};
use qkge_core::kgdata::{load_dataset, resolve_dataset, KnowledgeGraph, Split};
use qkge_core::model::{EntityRepr, Model, ModelKind, QuantumContext};
use qkge_core::rng::{stream, Stream};
use qkge_core::training::{fit_with, init_model, write_log_csv, NoiseScale, TrainConfig};

use crate::{EvalArgs, ExportArgs, InferArgs, TrainArgs};

fn load_kg(name: &str, seed: u64) -> Result<KnowledgeGraph> {
    let path = resolve_dataset(name);
    let kg = load_dataset(&path, &mut stream(seed, Stream::Split))
        .with_context(|| format!("loading dataset {}", path.display()))?;
    let st = kg.stats();
    eprintln!(
        "dataset {}: {} entities, {} predicates, {} triples ({} / {} / {})",
        kg.name, st.entities, st.predicates, st.triples, st.train, st.valid, st.test
    );
    Ok(kg)
}

fn print_table(dataset: &str, model: &str, r: &RankResult) {
    println!("{:<10} {:<9} {:<9} {:>8} {:>8} {:>8}", "dataset", "model", "direction", "MR", "Hits@3", "Hits@10");
    for (name, m) in [("object", r.object), ("subject", r.subject), ("combined", r.combined)] {
        println!(
            "{:<10} {:<9} {:<9} {:>8.2} {:>8.1} {:>8.1}",
            dataset,
            model,
            name,
            m.mr,
            100.0 * m.hits3,
            100.0 * m.hits10
        );
    }
}

fn metrics_json(r: &RankResult) -> serde_json::Value {
    serde_json::json!({
        "object": r.object,
        "subject": r.subject,
        "combined": r.combined,
    })
}

pub fn train(a: TrainArgs) -> Result<()> {
    let model: ModelKind = a.model.parse().map_err(|_| anyhow!("unknown model {:?}", a.model))?;
    let defaults = TrainConfig::default();
    let rank = match (model.is_quantum(), a.rank) {
        (true, Some(r)) if r != 1 << a.qubits => bail!("--rank {r} does not match --qubits {} (2^{} = {})", a.qubits, a.qubits, 1usize << a.qubits),
        (true, _) => 1 << a.qubits,
        (false, r) => r.unwrap_or(defaults.rank),
    };
    let cfg = TrainConfig {
        model,
        qubits: a.qubits,
        rank,
        lr: a.lr.unwrap_or(defaults.lr),
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        eval_every: a.eval_every.unwrap_or(defaults.eval_every),
        patience: a.patience.unwrap_or(defaults.patience),
        kappa: a.kappa.unwrap_or(defaults.kappa),
        negatives: a.negatives.unwrap_or(defaults.negatives),
        init_range: a.init_range.unwrap_or(defaults.init_range),
        dropout: a.dropout,
        noise: a.noise,
        noise_scale: if a.noise_variance { NoiseScale::Variance } else { NoiseScale::StdDev },
        noise_at_eval: a.noise_at_eval,
        loss: a.loss.parse().map_err(|_| anyhow!("unknown loss {:?}", a.loss))?,
        lambda: a.lambda.unwrap_or(defaults.lambda),
        filtered_negatives: a.filtered_negatives,
        seed: a.seed,
    };
    cfg.validate()?;
    let kg = load_kg(&a.data.dataset, cfg.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let initial = init_model(&kg, &cfg, &mut stream(cfg.seed, Stream::Init))?;
    let eval_opts = EvalOptions {
        noise: if cfg.noise_at_eval { cfg.noise } else { 0.0 },
        noise_scale: cfg.noise_scale,
        seed: cfg.seed,
        ..EvalOptions::default()
    };
    let res = fit_with(
        initial,
        &kg,
        &cfg,
        |m| Ok(evaluate(m, &kg, Split::Valid, &eval_opts)?.combined.hits3),
        |row| match row.valid_hits3 {
            Some(h) => eprintln!("epoch {:>4}  loss {:.6}  valid Hits@3 {:.2}%  {:.0}s", row.epoch, row.loss, 100.0 * h, row.wall_seconds),
            None => eprintln!("epoch {:>4}  loss {:.6}  {:.0}s", row.epoch, row.loss, row.wall_seconds),
        },
    )?;
    write_log_csv(&a.out.join("train_log.csv"), &res.log)?;
    let test = evaluate(&res.best, &kg, Split::Test, &eval_opts)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &kg.name, model.name(), &test)?;
    let snapshot = serde_json::json!({
        "best_epoch": res.best_epoch,
        "epochs_run": res.epochs_run,
        "valid_hits3": res.best_valid_hits3,
        "test": metrics_json(&test),
    });
    ModelCheckpoint::new(&res.best, &kg.entities, &kg.predicates, &cfg, snapshot).save(&a.out.join("model.ckpt"))?;
    eprintln!("best epoch {} (valid Hits@3 {:.2}%), wrote {}", res.best_epoch, 100.0 * res.best_valid_hits3, a.out.display());
    print_table(&kg.name, model.name(), &test);
    Ok(())
}

fn load_checkpoint(path: &Path, kg: &KnowledgeGraph) -> Result<(ModelCheckpoint, Model)> {
    let ck = ModelCheckpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    ck.check_vocab(&kg.entities, &kg.predicates)?;
    let model = ck.model()?;
    Ok((ck, model))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "valid" => Split::Valid,
        "test" => Split::Test,
        other => bail!("unknown split {other:?} (train, valid or test)"),
    };
    let probe = ModelCheckpoint::load(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let kg = load_kg(&a.data.dataset, probe.header.seed)?;
    let (_, model) = load_checkpoint(&a.checkpoint, &kg)?;
    let opts = EvalOptions {
        ties: if a.pessimistic { TieBreak::Pessimistic } else { TieBreak::Optimistic },
        noise: a.noise,
        noise_scale: if a.noise_variance { NoiseScale::Variance } else { NoiseScale::StdDev },
        shots: a.shots,
        seed: a.seed,
    };
    let r = evaluate(&model, &kg, split, &opts)?;
    fs::create_dir_all(&a.out)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &kg.name, model.kind().name(), &r)?;
    if let Some(bins) = a.histogram {
        eta_histogram(&model, &kg, split, bins)?.write_csv(&a.out.join("histogram.csv"))?;
    }
    print_table(&kg.name, model.kind().name(), &r);
    Ok(())
}

fn entity_id(kg: &KnowledgeGraph, name: &str) -> Result<usize> {
    kg.entities.id(name).ok_or_else(|| anyhow!("unknown entity {name:?}"))
}

pub fn infer(a: InferArgs) -> Result<()> {
    let probe = ModelCheckpoint::load(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let kg = load_kg(&a.data.dataset, probe.header.seed)?;
    let (_, model) = load_checkpoint(&a.checkpoint, &kg)?;
    let Model::Quantum(q) = &model else {
        bail!("inference needs a circuit model (qce or fqce), found {}", model.kind());
    };
    let s = entity_id(&kg, &a.subject)?;
    let p = kg
        .predicates
        .id(&a.predicate)
        .ok_or_else(|| anyhow!("unknown predicate {:?}", a.predicate))?;
    let solutions = match (&a.solutions, a.idealistic) {
        (Some(names), true) => Some(names.iter().map(|n| entity_id(&kg, n)).collect::<Result<Vec<_>>>()?),
        (Some(_), false) => bail!("--solutions is only used with --idealistic"),
        _ => None,
    };
    let opts = InferOptions {
        solutions,
        iterations: a.iterations,
        expected_solutions: kg.known_objects(s, p).len(),
        shots: a.shots,
        top_k: a.top_k,
    };
    let report = run_inference(q, s, p, &opts, &mut stream(a.seed, Stream::Shots))?;
    fs::create_dir_all(&a.out)?;
    let mut f = std::io::BufWriter::new(fs::File::create(a.out.join("inference.csv"))?);
    writeln!(f, "index,entity,probability,post_amplification_probability,sample_frequency")?;
    for i in 0..report.num_entities {
        let freq = match &report.tally {
            Some(t) if t.post_selected > 0 => t.counts[i] as f64 / t.post_selected as f64,
            _ => 0.0,
        };
        writeln!(
            f,
            "{i},{},{},{},{}",
            kg.entities.name(i),
            report.initial_index_p0[i],
            report.final_index_p0[i],
            freq
        )?;
    }
    f.flush()?;
    println!("query ({}, {}), {} entities, {} iterations", a.subject, a.predicate, report.num_entities, report.iterations);
    println!("Pr(A=0) before {:.6}  after {:.6}  (closed form {:.6})", report.initial_p0, report.final_p0, report.predicted_final_p0);
    if let Some(p) = report.postselected_success {
        println!("post-selected success probability {p:.6}");
    }
    if let Some(t) = &report.tally {
        if t.post_selected == 0 {
            println!("no shot post-selected the ancilla in |0>");
        } else {
            println!("{} of {} shots post-selected; top candidates:", t.post_selected, t.shots);
            for (i, c) in &t.top {
                println!("  {:<24} {:>8} {:.4}", kg.entities.name(*i), c, *c as f64 / t.post_selected as f64);
            }
        }
    }
    Ok(())
}

pub fn export_embeddings(a: ExportArgs) -> Result<()> {
    let probe = ModelCheckpoint::load(&a.checkpoint).with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let kg = load_kg(&a.data.dataset, probe.header.seed)?;
    let (_, model) = load_checkpoint(&a.checkpoint, &kg)?;
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(&a.out)?);
    match &model {
        Model::Quantum(q) => {
            let ctx = QuantumContext::full(q, None)?;
            for e in 0..q.num_entities() {
                let amps = ctx.entity(e).amplitudes();
                let row: Vec<String> = match &q.entities {
                    EntityRepr::Amplitude(v) => v[e].vector.iter().map(|x| x.to_string()).collect(),
                    EntityRepr::Circuit(_) => amps
                        .iter()
                        .map(|z| z.re)
                        .chain(amps.iter().map(|z| z.im))
                        .map(|x| x.to_string())
                        .collect(),
                };
                writeln!(f, "{},{}", kg.entities.name(e), row.join(","))?;
            }
        }
        Model::Classical(c) => {
            for e in 0..c.num_entities {
                let row: Vec<String> = c.entity(e).iter().map(|x| x.to_string()).collect();
                writeln!(f, "{},{}", kg.entities.name(e), row.join(","))?;
            }
        }
    }
    f.flush()?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}
