//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! The multi-task trend criteria train three models end to end and take
//! about an hour on one CPU core. Set `CODEC_LM_SKIP_TREND=1` to report them
//! as skipped instead.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use codec_lm::cli::{
    dispatch, run_compile_data, run_eval, run_simulate, run_train, run_train_codec, EvalArgs, ExperimentConfig,
    TextMode, TrainArgs, TrainStage,
};
use codec_lm::codec::{AcousticTokenMatrix, CodecModel};
use codec_lm::evalkit::{content_error_rate, levenshtein, mcd, sim, CepstraSeq, Report, NO_PROCESSING};
use codec_lm::generate::{run_task, ModelBundle, TaskRequest};
use codec_lm::nclm::{CodecLm, LmItem, LmKind, ModelConfig, SamplingConfig};
use codec_lm::prompting::{
    build_example, layout_check, sample_materials, MaterialConfig, PromptElement, Special, TaskSpec, UtterancePool,
    VocabMap,
};
use codec_lm::synthworld::{Manifest, Split, MANIFEST_FILE};
use codec_lm::trainer::{apply_text_dropout, sample_task, RunConfig, Stage, Trainer, TrainingData};

const FIXTURE: &str = include_str!("fixtures/trend_reference.json");

struct Outcome {
    id: &'static str,
    status: &'static str,
}

fn check(id: &'static str, budget: Option<Duration>, f: impl FnOnce() -> Result<String>) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (status, mut detail) = match result {
        Ok(Ok(d)) => ("PASS", d),
        Ok(Err(e)) => ("FAIL", format!("{e:#}")),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            ("FAIL", format!("panicked: {msg}"))
        }
    };
    let mut status = status;
    if let Some(b) = budget {
        if elapsed > b && status == "PASS" {
            status = "FAIL";
            detail = format!("{detail}; over the {}s budget", b.as_secs());
        }
    }
    println!("{status} criterion {id:<3} {detail} [{:.1}s]", elapsed.as_secs_f64());
    Outcome { id, status }
}

fn skipped(id: &'static str, why: &str) -> Outcome {
    println!("SKIP criterion {id:<3} {why}");
    Outcome { id, status: "SKIP" }
}

/// Shared trend-scale world: corpus and codec rendered once.
struct World {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    codec_snr_db: f64,
    codec_seconds: f64,
}

impl World {
    fn build() -> Result<Self> {
        let dir = tempfile::tempdir()?;
        let mut cfg = ExperimentConfig::trend_ci(1);
        cfg.out_root = dir.path().join("run");
        run_simulate(&cfg)?;
        let start = Instant::now();
        let summary = run_train_codec(&cfg)?;
        let codec_seconds = start.elapsed().as_secs_f64();
        let codec_snr_db = summary.details["held_out_snr_db"]
            .as_f64()
            .ok_or_else(|| anyhow!("train-codec summary lacks held_out_snr_db"))?;
        Ok(Self {
            _dir: dir,
            cfg,
            codec_snr_db,
            codec_seconds,
        })
    }

    fn manifest(&self) -> Result<Manifest> {
        Ok(Manifest::load(&self.cfg.corpus_dir().join(MANIFEST_FILE))?)
    }

    fn codec(&self) -> Result<CodecModel> {
        Ok(CodecModel::load(&self.cfg.codec_path())?)
    }
}

fn fixture() -> Result<Value> {
    Ok(serde_json::from_str(FIXTURE)?)
}

fn prompt_conformance(world: &World) -> Result<String> {
    let manifest = world.manifest()?;
    let codec = world.codec()?;
    let vocab = VocabMap::new(codec.config.codebook_size, codec.config.num_layers);
    let pool = UtterancePool::load(&manifest, Split::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    for task in TaskSpec::ALL {
        for k in 0..100 {
            let (materials, _) = sample_materials(task, &pool, &MaterialConfig::train(), &mut rng)?;
            let include_text = rng.random_bool(0.5);
            let example = build_example(&materials, include_text, &vocab, &codec, &world.cfg.prompt)?;
            let verdict = layout_check(&example, vocab.codebook_size);
            ensure!(verdict.ok, "{task} material {k}: {:?}", verdict.reason);
            checked += 1;
        }
    }
    Ok(format!("{checked} examples conform"))
}

fn loss_item(cfg: &ModelConfig, seed: u64) -> (Vec<u32>, Vec<PromptElement>, AcousticTokenMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = cfg.num_layers;
    let v = cfg.codebook_size as u32;
    let text: Vec<u32> = (0..2 + seed as usize % 3).map(|_| rng.random_range(0..16)).collect();
    let a = AcousticTokenMatrix::new(3, l, (0..3 * l).map(|_| rng.random_range(0..v)).collect());
    let frames = 2 + seed as usize % 2;
    let o = AcousticTokenMatrix::new(frames, l, (0..frames * l).map(|_| rng.random_range(0..v)).collect());
    (text, vec![PromptElement::Special(Special::Tse), PromptElement::Codes(a)], o)
}

fn max_gradient_error(model: &CodecLm, loss: &dyn Fn(&CodecLm) -> Tensor) -> Result<f64> {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let grads = loss(model).backward()?;
    let mut worst = 0.0f64;
    for name in model.params.names().to_vec() {
        let var = model.params.var(&name);
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1()?,
            None => vec![0.0; var.elem_count()],
        };
        let base = model.params.values(&name)?;
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + EPS;
            model.params.set_values(&name, &probe)?;
            let up: f64 = loss(model).to_scalar()?;
            probe[i] = base[i] - EPS;
            model.params.set_values(&name, &probe)?;
            let down: f64 = loss(model).to_scalar()?;
            model.params.set_values(&name, &base)?;
            let numeric = (up - down) / (2.0 * EPS);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn loss_calibration() -> Result<String> {
    let desk = ModelConfig::desk();
    let (t, a, o) = loss_item(&desk, 1);
    let item = LmItem {
        text: &t,
        prompt: &a,
        target: &o,
    };
    let ar = CodecLm::new(desk.clone(), LmKind::Ar, 5, DType::F64)?;
    ar.zero_output_head()?;
    let ar_loss: f64 = ar.ar_loss(&[item], None)?.to_scalar()?;
    ensure!((ar_loss - 65f64.ln()).abs() < 1e-6, "uniform AR loss {ar_loss} vs ln 65");
    let nar = CodecLm::new(desk.clone(), LmKind::Nar, 6, DType::F64)?;
    nar.zero_output_head()?;
    for l in 2..=desk.num_layers {
        let nar_loss: f64 = nar.nar_loss(&[item], l, None)?.to_scalar()?;
        ensure!((nar_loss - 64f64.ln()).abs() < 1e-6, "uniform NAR loss {nar_loss} at layer {l} vs ln 64");
    }

    let cfg = ModelConfig::gradcheck();
    let parts: Vec<_> = (0..2).map(|s| loss_item(&cfg, 40 + s)).collect();
    let items: Vec<LmItem> = parts
        .iter()
        .map(|(t, a, o)| LmItem {
            text: t,
            prompt: a,
            target: o,
        })
        .collect();
    let ar = CodecLm::new(cfg.clone(), LmKind::Ar, 11, DType::F64)?;
    let nar = CodecLm::new(cfg.clone(), LmKind::Nar, 12, DType::F64)?;
    let n = ar.params.num_parameters().max(nar.params.num_parameters());
    ensure!(n <= 1000, "gradcheck model has {n} parameters");
    let ar_err = max_gradient_error(&ar, &|m| m.ar_loss(&items, None).expect("ar loss"))?;
    let nar_err = max_gradient_error(&nar, &|m| m.nar_loss(&items, 2, None).expect("nar loss"))?;
    ensure!(ar_err < 1e-4, "AR max relative gradient error {ar_err:.3e}");
    ensure!(nar_err < 1e-4, "NAR max relative gradient error {nar_err:.3e}");
    Ok(format!(
        "uniform AR {ar_loss:.6}, NAR ln 64; gradient error AR {ar_err:.2e}, NAR {nar_err:.2e} over {n} params"
    ))
}

fn overfit_oracle(world: &World) -> Result<String> {
    let manifest = world.manifest()?;
    let codec = world.codec()?;
    let vocab = VocabMap::new(codec.config.codebook_size, codec.config.num_layers);
    let pool = UtterancePool::load(&manifest, Split::Train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (materials, _) = sample_materials(TaskSpec::ZsTts, &pool, &MaterialConfig::train(), &mut rng)?;
    let example = build_example(&materials, true, &vocab, &codec, &world.cfg.prompt)?;
    let data = TrainingData::new(vocab.clone(), codec.checksum(), vec![example.clone()]);

    let mut model = ModelConfig::trend_ci();
    model.dropout = 0.0;
    let mut run = RunConfig::desk_stage1();
    run.stage = Stage::TtsOnly;
    run.steps = 2000;
    run.warmup_steps = 50;
    run.peak_lr = 1e-3;
    run.batch_size = 1;
    run.seed = 9;
    let mut trainer = Trainer::new(run, model.clone(), &vocab, &codec.checksum())?;
    let item = LmItem::from(&example);
    let mut losses = (f64::INFINITY, f64::INFINITY);
    while !trainer.is_done() {
        trainer.train_step(&data)?;
        if trainer.step() % 100 != 0 && !trainer.is_done() {
            continue;
        }
        let (ar, nar) = trainer.checkpoint()?.models()?;
        let ar_loss: f64 = ar.ar_loss(&[item], None)?.to_dtype(DType::F64)?.to_scalar()?;
        let mut nar_worst = 0.0f64;
        for l in 2..=model.num_layers {
            nar_worst = nar_worst.max(nar.nar_loss(&[item], l, None)?.to_dtype(DType::F64)?.to_scalar()?);
        }
        losses = (ar_loss, nar_worst);
        if ar_loss < 0.05 && nar_worst < 0.05 {
            break;
        }
    }
    let steps = trainer.step();
    ensure!(
        losses.0 < 0.05 && losses.1 < 0.05,
        "after {steps} steps ar_loss {:.4}, worst NAR layer loss {:.4}",
        losses.0,
        losses.1
    );
    let bundle = ModelBundle::from_checkpoint(&trainer.checkpoint()?)?;
    let mut request = TaskRequest::new(materials.inputs.clone(), materials.text.clone());
    request.sampling = SamplingConfig::greedy();
    request.prompt = world.cfg.prompt.clone();
    let out = run_task(&request, &bundle, &codec, &vocab, &mut ChaCha8Rng::seed_from_u64(0))?;
    ensure!(
        out.codes == example.target,
        "greedy output {}x{} differs from the {}x{} target",
        out.codes.num_frames(),
        out.codes.num_layers(),
        example.target.num_frames(),
        example.target.num_layers()
    );
    Ok(format!(
        "converged at step {steps} (ar {:.4}, nar {:.4}); greedy output reproduces {} frames",
        losses.0,
        losses.1,
        example.target.num_frames()
    ))
}

fn codec_properties(world: &World) -> Result<String> {
    let trained = world.codec()?;
    let mut m = trained.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for cb in &mut m.codebooks {
        cb.mapv_inplace(|_| rng.random_range(-1.0f32..1.0));
    }
    m.pin_zero_codewords();
    for k in 0..1000 {
        let z: Vec<f32> = (0..m.config.latent_dim).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let e = m.residual_energies(&z);
        ensure!(e.windows(2).all(|w| w[1] <= w[0]), "frame {k}: residual energies {e:?}");
    }
    for model in [&m, &trained] {
        let silent = codec_lm::synthworld::Waveform::silence(4000, model.config.sample_rate);
        let codes = model.encode(&silent)?;
        ensure!(codes.codes().iter().all(|&c| c == 0), "silence does not encode to code 0");
        let back = model.decode(&codes)?;
        ensure!(back.samples.iter().all(|&x| x == 0.0), "code 0 does not decode to silence");
        ensure!(back.len() == silent.len(), "decoded length {} vs {}", back.len(), silent.len());
    }
    let reference = fixture()?["codec_snr_db"]
        .as_f64()
        .ok_or_else(|| anyhow!("fixture lacks codec_snr_db"))?;
    ensure!(
        world.codec_snr_db >= reference,
        "held-out SNR {:.4} dB below fixture {reference:.4} dB",
        world.codec_snr_db
    );
    ensure!(world.codec_seconds < 600.0, "codec training took {:.0}s", world.codec_seconds);
    Ok(format!(
        "1000 frames monotone; zero fixed point exact; SNR {:.4} dB >= {reference:.4} dB (training {:.0}s)",
        world.codec_snr_db, world.codec_seconds
    ))
}

fn sampling_contracts() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut counts = [0f64; 6];
    for _ in 0..60_000 {
        counts[sample_task(&mut rng, &TaskSpec::ALL)?.index()] += 1.0;
    }
    let stat: f64 = counts.iter().map(|c| (c - 10_000.0).powi(2) / 10_000.0).sum();
    let p = 1.0 - ChiSquared::new(5.0)?.cdf(stat);
    ensure!(p > 0.01, "chi-square {stat:.3}, p {p:.4}");

    let example = codec_lm::prompting::TrainingExample {
        task: TaskSpec::Ns,
        text: vec![1, 2, 3],
        prompt: Vec::new(),
        target: AcousticTokenMatrix::zeros(1, 1),
        meta: Default::default(),
    };
    let dropped = (0..10_000)
        .filter(|_| apply_text_dropout(example.clone(), &mut rng, 0.5).text.is_empty())
        .count();
    let rate = dropped as f64 / 10_000.0;
    ensure!((0.48..=0.52).contains(&rate), "text dropout rate {rate}");
    Ok(format!("task draws chi-square {stat:.2} (p {p:.3}); text dropout rate {rate:.4}"))
}

fn metric_suite() -> Result<String> {
    let constant = |n: usize, v: Vec<f64>| CepstraSeq {
        times: vec![0.0; n],
        frames: vec![v; n],
    };
    let mut v = vec![0.0; 14];
    let a = constant(5, v.clone());
    v[3] = 1.0;
    let b = constant(7, v);
    let d = mcd(&a, &b)?;
    ensure!((d - 6.1419).abs() < 1e-4, "closed-form MCD {d}");
    ensure!(mcd(&a, &a)? == 0.0, "MCD identity");
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..50 {
        let mut random = |n: usize| CepstraSeq {
            times: vec![0.0; n],
            frames: (0..n).map(|_| (0..14).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        };
        let (x, y) = (random(6), random(9));
        ensure!((mcd(&x, &y)? - mcd(&y, &x)?).abs() < 1e-12, "MCD asymmetry");
    }

    ensure!((sim(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])? - 1.0).abs() < 1e-15, "sim identity");
    ensure!(sim(&[1.0, 0.0], &[0.0, 1.0])? == 0.0, "sim orthogonal");
    ensure!((sim(&[1.0, 0.0], &[-2.0, 0.0])? + 1.0).abs() < 1e-15, "sim opposite");
    ensure!((sim(&[1.0, 0.0], &[1.0, 1.0])? - 0.5f64.sqrt()).abs() < 1e-12, "sim 45 degrees");
    ensure!(sim(&[0.0, 0.0], &[1.0, 1.0]).is_err(), "zero embedding accepted");

    let r = [1u8, 2, 3, 4];
    ensure!(content_error_rate(&r, &r)? == 0.0, "CER identity");
    ensure!(content_error_rate(&[], &r)? == 1.0, "CER empty hypothesis");
    ensure!(content_error_rate(&[1u8, 9, 3, 4], &r)? == 0.25, "CER substitution");
    ensure!(content_error_rate(&[1u8, 2, 3, 4, 5, 6], &r)? == 0.5, "CER insertions");
    ensure!(content_error_rate::<u8>(&r, &[]).is_err(), "empty reference accepted");
    ensure!(levenshtein(b"kitten", b"sitting") == 3, "kitten/sitting");
    Ok("mcd, sim and CER cases exact".into())
}

fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml())?;
    Ok(())
}

fn cli(args: &[&str], config: &Path) -> Result<()> {
    let mut argv: Vec<std::ffi::OsString> = vec!["codec-lm".into()];
    argv.extend(args.iter().map(|a| a.into()));
    argv.push("--config".into());
    argv.push(config.into());
    let code = dispatch(argv);
    ensure!(code == 0, "`{}` exited with {code}", args.join(" "));
    Ok(())
}

fn codec_impact_direction(world: &World) -> Result<String> {
    let path = world.cfg.out_root.parent().expect("run dir has a parent").join("impact.toml");
    write_config(&world.cfg, &path)?;
    cli(&["codec-impact"], &path)?;
    let report: Report =
        serde_json::from_str(&std::fs::read_to_string(world.cfg.reports_dir().join("codec_impact.json"))?)?;
    let mut notes = Vec::new();
    for subset in ["clean", "noisy"] {
        let raw = report.row(subset, "raw").ok_or_else(|| anyhow!("missing {subset}/raw row"))?;
        let rt = report
            .row(subset, "codec_round_trip")
            .ok_or_else(|| anyhow!("missing {subset}/codec_round_trip row"))?;
        ensure!(raw.n > 0 && raw.n == rt.n, "{subset}: {} raw vs {} round-trip items", raw.n, rt.n);
        let pairs = [
            ("CER", raw.scores.cer, rt.scores.cer, true),
            ("SIM", raw.scores.sim, rt.scores.sim, false),
            ("MCD", raw.scores.mcd, rt.scores.mcd, true),
        ];
        let mut compared = 0;
        for (name, r, t, lower_is_better) in pairs {
            if let (Some(r), Some(t)) = (r, t) {
                let degraded_or_equal = if lower_is_better { t >= r } else { t <= r };
                ensure!(degraded_or_equal, "{subset} {name}: raw {r:.4}, round trip {t:.4}");
                notes.push(format!("{subset} {name} {r:.3}->{t:.3}"));
                compared += 1;
            }
        }
        ensure!(compared > 0, "{subset}: no metric present");
    }
    Ok(notes.join(", "))
}

fn hash_tree(root: &Path) -> Result<BTreeMap<PathBuf, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path)?);
                out.insert(path.strip_prefix(root)?.to_path_buf(), hex::encode(digest));
            }
        }
    }
    Ok(out)
}

fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(seed);
    cfg.corpus.num_speakers = 10;
    cfg.corpus.utterances_per_speaker = 4;
    cfg.codec_train.steps = 50;
    cfg.data.examples_per_task = 4;
    cfg.model = ModelConfig {
        depth: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        dropout: 0.1,
        max_positions: 512,
        ..cfg.model
    };
    for run in [&mut cfg.stage1, &mut cfg.stage2] {
        run.steps = 5;
        run.warmup_steps = 1;
        run.batch_size = 2;
    }
    cfg.eval.items_per_task = 2;
    cfg.eval.impact_items = 2;
    cfg
}

fn full_cli_run(dir: &Path) -> Result<BTreeMap<PathBuf, String>> {
    let mut cfg = tiny_config(5);
    cfg.out_root = PathBuf::from("run");
    let config = dir.join("c.toml");
    write_config(&cfg, &config)?;
    cli(&["simulate"], &config)?;
    cli(&["train-codec"], &config)?;
    cli(&["compile-data"], &config)?;
    cli(&["train", "--stage", "tts"], &config)?;
    let tts = dir.join("run/train/tts/final.ckpt");
    let tts = tts.to_str().expect("utf-8 path");
    cli(&["train", "--stage", "multitask", "--init", tts], &config)?;
    cli(&["train", "--stage", "multitask", "--name", "random"], &config)?;
    let multi = dir.join("run/train/multitask/final.ckpt");
    let multi = multi.to_str().expect("utf-8 path");
    cli(&["infer", "--checkpoint", multi, "--text", "off", "--tasks", "ns,sr", "--label", "probe"], &config)?;
    cli(&["eval", "--checkpoint", multi, "--tasks", "all", "--text", "both", "--name", "multi"], &config)?;
    cli(&["codec-impact"], &config)?;
    cli(&["report"], &config)?;
    hash_tree(&dir.join("run"))
}

fn reproducibility() -> Result<String> {
    let first = tempfile::tempdir()?;
    let second = tempfile::tempdir()?;
    let a = full_cli_run(first.path())?;
    let b = full_cli_run(second.path())?;
    ensure!(a.len() > 20, "only {} artifacts produced", a.len());
    let a_names: Vec<_> = a.keys().collect();
    let b_names: Vec<_> = b.keys().collect();
    ensure!(a_names == b_names, "artifact sets differ");
    let differing: Vec<_> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure!(differing.is_empty(), "hashes differ for {differing:?}");
    Ok(format!("{} artifacts byte-identical across two runs", a.len()))
}

/// Outputs of the full two-stage and random-init trend runs.
struct TrendRuns {
    two_stage: Report,
    random: Report,
}

fn load_report(cfg: &ExperimentConfig, name: &str) -> Result<Report> {
    let path = cfg.reports_dir().join(format!("{name}.json"));
    Ok(serde_json::from_str(&std::fs::read_to_string(&path).with_context(|| path.display().to_string())?)?)
}

fn trend_runs(world: &World) -> Result<TrendRuns> {
    let cfg = &world.cfg;
    run_compile_data(cfg)?;
    run_train(
        cfg,
        &TrainArgs {
            stage: TrainStage::Tts,
            init: None,
            resume: None,
            name: None,
        },
    )?;
    run_train(
        cfg,
        &TrainArgs {
            stage: TrainStage::Multitask,
            init: Some(cfg.train_dir("tts").join("final.ckpt")),
            resume: None,
            name: None,
        },
    )?;
    run_eval(
        cfg,
        &EvalArgs {
            checkpoint: cfg.train_dir("multitask").join("final.ckpt"),
            tasks: TaskSpec::ALL.to_vec(),
            text: vec![TextMode::On, TextMode::Off],
            name: "two_stage".into(),
        },
    )?;
    let mut random_cfg = cfg.clone();
    random_cfg.stage2.steps = cfg.stage1.steps + cfg.stage2.steps;
    run_train(
        &random_cfg,
        &TrainArgs {
            stage: TrainStage::Multitask,
            init: None,
            resume: None,
            name: Some("random".into()),
        },
    )?;
    run_eval(
        &random_cfg,
        &EvalArgs {
            checkpoint: cfg.train_dir("random").join("final.ckpt"),
            tasks: vec![TaskSpec::ZsTts],
            text: vec![TextMode::On],
            name: "random".into(),
        },
    )?;
    Ok(TrendRuns {
        two_stage: load_report(cfg, "two_stage")?,
        random: load_report(cfg, "random")?,
    })
}

fn mean_cer(report: &Report, task: TaskSpec, system: &str) -> Result<f64> {
    report
        .row(task.short_name(), system)
        .and_then(|r| r.scores.cer)
        .ok_or_else(|| anyhow!("no CER for {task} / {system}"))
}

fn trend_fixture(key: &str) -> String {
    fixture()
        .ok()
        .and_then(|f| f["trend"][key].as_f64())
        .map_or("unrecorded".into(), |v| format!("{v:.4}"))
}

fn text_benefit(runs: &TrendRuns) -> Result<String> {
    let r = &runs.two_stage;
    let mut notes = Vec::new();
    for task in [TaskSpec::Ns, TaskSpec::Tse] {
        let on = mean_cer(r, task, "text_on")?;
        let off = mean_cer(r, task, "text_off")?;
        notes.push(format!(
            "{task} CER with text {on:.4} vs without {off:.4} (fixture {} vs {})",
            trend_fixture(&format!("{}_cer_text_on", task.short_name())),
            trend_fixture(&format!("{}_cer_text_off", task.short_name()))
        ));
        if on >= off {
            bail!(notes.join("; "));
        }
    }
    Ok(notes.join("; "))
}

/// Fraction of `system` items on `task` for which `wins(system, other)` holds
/// against the matching `other` item, or against itself when `other` is None.
fn win_rate(
    report: &Report,
    task: TaskSpec,
    system: &str,
    other: Option<&str>,
    wins: impl Fn(&codec_lm::evalkit::ItemScore, &codec_lm::evalkit::ItemScore) -> Option<bool>,
) -> Result<(usize, usize)> {
    let of = |s: &str| -> BTreeMap<&str, &codec_lm::evalkit::ItemScore> {
        report
            .items
            .iter()
            .filter(|i| i.task == Some(task) && i.system == s)
            .map(|i| (i.id.as_str(), i))
            .collect()
    };
    let mine = of(system);
    let theirs = of(other.unwrap_or(system));
    ensure!(!mine.is_empty(), "no {task} items for {system}");
    let mut won = 0;
    for (id, item) in &mine {
        let rival = theirs.get(id).ok_or_else(|| anyhow!("{id} missing for the comparison system"))?;
        if wins(item, rival).ok_or_else(|| anyhow!("{id}: metric missing"))? {
            won += 1;
        }
    }
    Ok((won, mine.len()))
}

fn speech_removal(runs: &TrendRuns) -> Result<String> {
    let (won, n) = win_rate(&runs.two_stage, TaskSpec::Sr, "text_on", Some(NO_PROCESSING), |o, b| {
        Some(o.scores.mcd? < b.scores.mcd?)
    })?;
    let rate = won as f64 / n as f64;
    let out = mean_cer_like(&runs.two_stage, TaskSpec::Sr);
    ensure!(rate >= 0.8, "SR output beats no processing on {won}/{n} items; {out}");
    Ok(format!("SR output beats no processing on {won}/{n} items; {out}"))
}

fn mean_cer_like(report: &Report, task: TaskSpec) -> String {
    let m = |s: &str| report.row(task.short_name(), s).and_then(|r| r.scores.mcd);
    match (m("text_on"), m(NO_PROCESSING)) {
        (Some(a), Some(b)) => format!("mean MCD {a:.3} vs {b:.3} dB (fixture {})", trend_fixture("sr_mcd_text_on")),
        _ => "mean MCD unavailable".into(),
    }
}

fn speaker_selectivity(runs: &TrendRuns) -> Result<String> {
    let (won, n) = win_rate(&runs.two_stage, TaskSpec::Tse, "text_on", None, |o, _| {
        Some(o.scores.sim? > o.scores.sim_interferer?)
    })?;
    ensure!(
        won as f64 / n as f64 >= 0.8,
        "TSE output closer to the target than the interferer on {won}/{n} items"
    );
    Ok(format!("TSE output closer to the target than the interferer on {won}/{n} items"))
}

fn editing_locality(runs: &TrendRuns) -> Result<String> {
    let out = mean_cer(&runs.two_stage, TaskSpec::Cse, "text_on")?;
    let base = mean_cer(&runs.two_stage, TaskSpec::Cse, NO_PROCESSING)?;
    let note = format!(
        "CSE CER {out:.4} vs unedited input {base:.4} (fixture {})",
        trend_fixture("cse_cer_text_on")
    );
    ensure!(out < base, "{note}");
    Ok(note)
}

fn two_stage_benefit(runs: &TrendRuns) -> Result<String> {
    let two = mean_cer(&runs.two_stage, TaskSpec::ZsTts, "text_on")?;
    let random = mean_cer(&runs.random, TaskSpec::ZsTts, "text_on")?;
    let note = format!(
        "ZS-TTS CER two-stage {two:.4} vs random init {random:.4} (fixture {} vs {})",
        trend_fixture("tts_cer_two_stage"),
        trend_fixture("tts_cer_random")
    );
    ensure!(two <= random, "{note}");
    Ok(note)
}

fn main() {
    std::env::set_var("CODEC_LM_DETERMINISTIC", "1");
    let mut outcomes = Vec::new();
    outcomes.push(check("7", None, sampling_contracts));
    outcomes.push(check("8", Some(Duration::from_secs(60)), metric_suite));
    outcomes.push(check("2", Some(Duration::from_secs(120)), loss_calibration));

    let world = World::build();
    let world = match world {
        Ok(w) => Some(w),
        Err(e) => {
            println!("shared world could not be built: {e:#}");
            None
        }
    };
    let need_world = |id: &'static str, f: &dyn Fn(&World) -> Result<String>, budget: Option<Duration>| match &world {
        Some(w) => check(id, budget, || f(w)),
        None => check(id, None, || bail!("shared world unavailable")),
    };
    outcomes.push(need_world("1", &prompt_conformance, Some(Duration::from_secs(60))));
    outcomes.push(need_world("4", &codec_properties, None));
    outcomes.push(need_world("3", &overfit_oracle, Some(Duration::from_secs(300))));
    outcomes.push(need_world("9", &codec_impact_direction, None));
    outcomes.push(check("10", None, reproducibility));

    if std::env::var("CODEC_LM_SKIP_TREND").is_ok_and(|v| v == "1") {
        for id in ["5a", "5b", "5c", "5d", "6"] {
            outcomes.push(skipped(id, "trend runs disabled by CODEC_LM_SKIP_TREND"));
        }
    } else {
        let start = Instant::now();
        let runs = match &world {
            Some(w) => catch_unwind(AssertUnwindSafe(|| trend_runs(w)))
                .unwrap_or_else(|_| Err(anyhow!("trend pipeline panicked"))),
            None => Err(anyhow!("shared world unavailable")),
        };
        println!("trend pipeline finished in {:.0}s", start.elapsed().as_secs_f64());
        let criteria: [(&'static str, fn(&TrendRuns) -> Result<String>); 5] = [
            ("5a", text_benefit),
            ("5b", speech_removal),
            ("5c", speaker_selectivity),
            ("5d", editing_locality),
            ("6", two_stage_benefit),
        ];
        for (id, f) in criteria {
            outcomes.push(match &runs {
                Ok(r) => check(id, None, || f(r)),
                Err(e) => check(id, None, || bail!("trend pipeline failed: {e:#}")),
            });
        }
    }

    let failed: Vec<&str> = outcomes.iter().filter(|o| o.status == "FAIL").map(|o| o.id).collect();
    let passed = outcomes.iter().filter(|o| o.status == "PASS").count();
    println!(
        "acceptance: {passed} passed, {} failed, {} skipped",
        failed.len(),
        outcomes.len() - passed - failed.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
