use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use postcn_core::augmentation::apply_pipeline;
use postcn_core::kcs::{sequence_descriptor, triangle_len};
use postcn_core::model::{
    check_discriminator, check_embedding, check_generator, check_temporal, evaluate_records,
    CheckPlan,
};
use postcn_core::nn::GradCheckReport;
use postcn_core::rng::{purpose, substream};
use postcn_core::{
    generate_corpus, read_dataset_file, write_dataset_file, AugmentationConfig, Checkpoint,
    CorpusSpec, Discriminator, Pose2D, PoseModel, PoseSequence2D, SequenceRecord, TrainConfig,
    Trainer,
};

use crate::Command;

const GRAD_TOLERANCE: f64 = 1e-4;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData { spec, out, common } => gen_data(spec.as_deref(), &out, common.seed),
        Command::Augment {
            config,
            input,
            out,
            masks,
            common,
        } => {
            let masks = masks.unwrap_or_else(|| default_mask_path(&out));
            augment(config.as_deref(), &input, &out, &masks, common.seed)
        }
        Command::Train {
            config,
            data,
            out,
            workers,
            common,
        } => train(config.as_deref(), &data, &out, workers, common.seed),
        Command::Eval {
            ckpt,
            data,
            config,
            common,
        } => eval(&ckpt, &data, config.as_deref(), common.seed),
        Command::GradCheck {
            config,
            points,
            coords,
            common,
        } => grad_check(config.as_deref(), points, coords, common.seed),
        Command::Describe {
            input,
            out,
            interval,
        } => describe(&input, out.as_deref(), interval),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(std::io::BufReader::new(file))
                .with_context(|| format!("reading config {}", p.display()))
        }
    }
}

fn read_data(path: &Path) -> Result<Vec<SequenceRecord>> {
    read_dataset_file(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn print_json(value: &Value) -> Result<ExitCode> {
    println!("{}", serde_json::to_string(value)?);
    Ok(ExitCode::SUCCESS)
}

fn default_mask_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".masks.jsonl");
    PathBuf::from(name)
}

fn gen_data(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<ExitCode> {
    let mut spec: CorpusSpec = read_config(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let records = generate_corpus(&spec)?;
    write_dataset_file(out, &records).with_context(|| format!("writing {}", out.display()))?;
    log::info!("wrote {} sequences to {}", records.len(), out.display());
    print_json(&json!({
        "sequences": records.len(),
        "frames": records.iter().map(SequenceRecord::len).sum::<usize>(),
        "seed": spec.seed,
    }))
}

fn augment(
    config: Option<&Path>,
    input: &Path,
    out: &Path,
    masks: &Path,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let mut config: AugmentationConfig = read_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let records = read_data(input)?;
    let mut augmented = Vec::with_capacity(records.len());
    let mut mask_out = BufWriter::new(
        File::create(masks).with_context(|| format!("creating {}", masks.display()))?,
    );
    let mut totals = [0usize; 5];
    for (i, r) in records.iter().enumerate() {
        let a = apply_pipeline(&config, &r.poses2d(), &r.topology, 0, i as u32)?;
        let mut frames: Vec<Pose2D> = a.poses.frames.clone();
        for &t in &a.mask.frames {
            frames[t].visibility.fill(false);
        }
        for &(t, k) in a.mask.points.iter().chain(&a.mask.area) {
            frames[t].visibility[k] = false;
        }
        let poses2d = PoseSequence2D::new(frames);
        augmented.push(SequenceRecord::from_poses(
            r.topology.clone(),
            r.spec.clone(),
            r.cameras.clone(),
            &r.poses3d(),
            &poses2d,
        )?);
        serde_json::to_writer(&mut mask_out, &json!({ "sequence": i, "mask": a.mask }))?;
        mask_out.write_all(b"\n")?;
        for (slot, n) in [
            a.mask.frames.len(),
            a.mask.points.len(),
            a.mask.area.len(),
            a.mask.shifts.len(),
            a.mask.swaps.len(),
        ]
        .into_iter()
        .enumerate()
        {
            totals[slot] += n;
        }
    }
    mask_out.flush()?;
    write_dataset_file(out, &augmented).with_context(|| format!("writing {}", out.display()))?;
    print_json(&json!({
        "sequences": records.len(),
        "masked_frames": totals[0],
        "masked_points": totals[1],
        "area_masked_points": totals[2],
        "shifts": totals[3],
        "swaps": totals[4],
    }))
}

fn train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    workers: Option<usize>,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let mut config: TrainConfig = read_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    let records = read_data(data)?;
    let trainer = Trainer::new(config)?;
    log::info!(
        "training on {} sequences, {} generator parameters",
        records.len(),
        trainer.config.model.generator_param_count()
    );
    let state = trainer.fit(&records, |_| {})?;
    let ckpt = Checkpoint::new(
        trainer.config.clone(),
        &state.generator,
        &state.discriminator,
        state.history.clone(),
    );
    ckpt.save(out)
        .with_context(|| format!("writing checkpoint {}", out.display()))?;
    print_json(&json!({
        "epochs": state.epoch,
        "generator_parameters": state.generator.num_scalars(),
        "discriminator_parameters": state.discriminator.num_scalars(),
        "history": state.history,
    }))
}

fn eval(ckpt: &Path, data: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<ExitCode> {
    let ckpt =
        Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let model = PoseModel::new(ckpt.config.model.clone())?;
    let store = ckpt.generator()?;
    let augmentation = match config {
        Some(p) => {
            let mut a: AugmentationConfig = read_config(Some(p))?;
            if let Some(s) = seed {
                a.seed = s;
            }
            Some(a)
        }
        None => None,
    };
    let records = read_data(data)?;
    let report = evaluate_records(&model, &store, &records, augmentation.as_ref())?;
    print_json(&serde_json::to_value(report)?)
}

fn report_json(r: &GradCheckReport) -> Value {
    json!({
        "max_rel_error": r.max_rel_error,
        "checked": r.checked,
        "excluded": r.excluded.len(),
    })
}

fn grad_check(
    config: Option<&Path>,
    points: usize,
    coords: usize,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let config: TrainConfig = read_config(config)?;
    let seed = seed.unwrap_or(config.seed);
    let model = PoseModel::new(config.model.clone())?;
    let disc = Discriminator::new(config.model.clone())?;
    let plan = CheckPlan {
        points,
        max_coords: Some(coords),
        ..CheckPlan::default()
    };
    let mut rng = substream(seed, purpose::GRAD_CHECK, 0, 0);
    let window = config.model.tcn.window;
    let reports = [
        ("embedding", check_embedding(&model, 2, &plan, &mut rng)?),
        (
            "temporal",
            check_temporal(&model, window + 1, &plan, &mut rng)?,
        ),
        (
            "generator",
            check_generator(&model, window, &plan, &mut rng)?,
        ),
        (
            "discriminator",
            check_discriminator(
                &disc,
                2 * config.model.discriminator.window,
                &plan,
                &mut rng,
            )?,
        ),
    ];
    let max = reports
        .iter()
        .map(|(_, r)| r.max_rel_error)
        .fold(0.0, f64::max);
    let mut out = serde_json::Map::new();
    for (name, r) in &reports {
        out.insert(name.to_string(), report_json(r));
    }
    out.insert("max_rel_error".into(), json!(max));
    out.insert("passed".into(), json!(max < GRAD_TOLERANCE));
    print_json(&Value::Object(out))?;
    if max < GRAD_TOLERANCE {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: max relative error {max:e} is not below {GRAD_TOLERANCE:e}");
        Ok(ExitCode::from(2))
    }
}

fn describe(input: &Path, out: Option<&Path>, interval: usize) -> Result<ExitCode> {
    let records = read_data(input)?;
    let mut w: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for (i, r) in records.iter().enumerate() {
        let d = sequence_descriptor(&r.poses3d(), &r.topology, interval)?;
        let tri = triangle_len(r.topology.num_bones());
        for (t, f) in d.frames.iter().enumerate() {
            let line = json!({
                "sequence": i,
                "t": t,
                "psi": &f[..tri],
                "phi": &f[tri..2 * tri],
                "joints": &f[2 * tri..],
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}
