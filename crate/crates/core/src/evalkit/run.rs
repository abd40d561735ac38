//! Held-out evaluation sets, per-system scoring and the codec round-trip
//! comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    cepstra, content_error_rate, mcd, mean_scores, sim, EvalError, ItemScore, Report, ReportRow, Result, Scores,
    METRIC_VERSION, OUT_OF_SCOPE,
};
use crate::codec::CodecModel;
use crate::generate::{BatchOutput, RequestSpec};
use crate::prompting::{EvalReferences, PromptInputs, TaskMaterials, TaskSpec};
use crate::synthworld::{
    analyze_content, generate_noise, mix_at_snr, read_waveform, speaker_embed, write_waveform, Manifest, NoiseBank,
    NoiseSpec, Split, SymbolSeq, Waveform, SYMBOL_SAMPLES,
};
use crate::util::{atomic_write, rng_for, sha256_hex};

pub const EVAL_MANIFEST: &str = "eval.jsonl";
pub const NO_PROCESSING: &str = "no_processing";
const MIN_EMBED_SAMPLES: usize = 3 * SYMBOL_SAMPLES;

/// One held-out item: model inputs plus the signals used to score it.
/// Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub task: TaskSpec,
    pub text: Vec<u8>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub baseline: PathBuf,
    pub reference: PathBuf,
    pub speaker: Option<PathBuf>,
    pub interferer: Option<PathBuf>,
    pub snr_db: Option<f64>,
}

impl EvalItem {
    /// Inference request for this item. With `with_text` off the text is
    /// withheld for the tasks that can run without it.
    pub fn request(&self, with_text: bool) -> RequestSpec {
        let text = if with_text || self.task.text_required() {
            self.text.clone()
        } else {
            Vec::new()
        };
        RequestSpec {
            id: self.id.clone(),
            task: self.task,
            inputs: self.inputs.clone(),
            text,
            sampling: None,
        }
    }
}

fn input_waves(inputs: &PromptInputs) -> Vec<(&'static str, &Waveform)> {
    match inputs {
        PromptInputs::Ns { noisy } | PromptInputs::Sr { noisy } => vec![("noisy", noisy)],
        PromptInputs::Tse { enrollment, mixture } => vec![("enrollment", enrollment), ("mixture", mixture)],
        PromptInputs::ZsTts { prompt } => vec![("prompt", prompt)],
        PromptInputs::Cse { pre, post } => vec![("pre", pre), ("post", post)],
        PromptInputs::Nse { pre, mid, post } => vec![("pre", pre), ("mid", mid), ("post", post)],
    }
}

/// Writes every waveform of `items` under `dir` together with `eval.jsonl`.
/// Empty optional context segments are left out of the inputs.
pub fn write_eval_set(dir: &Path, items: &[(String, TaskMaterials, EvalReferences)]) -> Result<Vec<EvalItem>> {
    std::fs::create_dir_all(dir.join("waves"))?;
    let mut out = Vec::with_capacity(items.len());
    let mut lines = String::new();
    for (id, materials, refs) in items {
        let put = |name: &str, wave: &Waveform| -> Result<PathBuf> {
            let rel = PathBuf::from("waves").join(format!("{id}.{name}.f32"));
            write_waveform(&dir.join(&rel), wave)?;
            Ok(rel)
        };
        let mut inputs = BTreeMap::new();
        for (name, wave) in input_waves(&materials.inputs) {
            if !wave.is_empty() {
                inputs.insert(name.to_string(), put(name, wave)?);
            }
        }
        let item = EvalItem {
            id: id.clone(),
            task: materials.inputs.task(),
            text: materials.text.0.clone(),
            inputs,
            baseline: put("baseline", &refs.baseline)?,
            reference: put("reference", &refs.reference)?,
            speaker: refs.speaker.as_ref().map(|w| put("speaker", w)).transpose()?,
            interferer: refs.interferer.as_ref().map(|w| put("interferer", w)).transpose()?,
            snr_db: materials.meta.snr_db,
        };
        lines.push_str(&serde_json::to_string(&item)?);
        lines.push('\n');
        out.push(item);
    }
    atomic_write(&dir.join(EVAL_MANIFEST), lines.as_bytes())?;
    Ok(out)
}

pub fn read_eval_manifest(path: &Path) -> Result<Vec<EvalItem>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Recognized symbols; empty audio recognizes as nothing.
fn recognize(wave: &Waveform) -> Result<Vec<u8>> {
    if wave.is_empty() {
        return Ok(Vec::new());
    }
    let padded = wave.fit_to(wave.len().max(SYMBOL_SAMPLES));
    Ok(analyze_content(&padded)?.symbols.0)
}

fn embedding(wave: &Waveform) -> Result<[f64; crate::synthworld::NUM_BANDS]> {
    Ok(speaker_embed(&wave.fit_to(wave.len().max(MIN_EMBED_SAMPLES)))?)
}

/// References loaded for scoring one item.
struct LoadedRefs {
    reference: Waveform,
    speaker: Option<Waveform>,
    interferer: Option<Waveform>,
}

fn load_refs(item: &EvalItem, base: &Path) -> Result<LoadedRefs> {
    let load = |p: &Option<PathBuf>| p.as_ref().map(|p| read_waveform(&base.join(p))).transpose();
    Ok(LoadedRefs {
        reference: read_waveform(&base.join(&item.reference))?,
        speaker: load(&item.speaker)?,
        interferer: load(&item.interferer)?,
    })
}

fn score_loaded(task: TaskSpec, text: &[u8], wave: &Waveform, refs: &LoadedRefs) -> Result<Scores> {
    let mut scores = Scores::default();
    if task == TaskSpec::Sr {
        let out = cepstra(&wave.fit_to(wave.len().max(1)))?;
        scores.mcd = Some(mcd(&out, &cepstra(&refs.reference)?)?);
        return Ok(scores);
    }
    scores.cer = Some(content_error_rate(&recognize(wave)?, text)?);
    let emb = embedding(wave)?;
    if let Some(spk) = &refs.speaker {
        scores.sim = Some(sim(&emb, &embedding(spk)?)?);
    }
    if let Some(other) = &refs.interferer {
        scores.sim_interferer = Some(sim(&emb, &embedding(other)?)?);
    }
    Ok(scores)
}

/// Scores one output waveform against the item's references.
///
/// NS, TSE, ZS-TTS, CSE and NSE: content-error rate against the item text
/// and speaker similarity (TSE also to the interferer). SR: mel-cepstral
/// distortion against the true noise.
pub fn score_output(item: &EvalItem, wave: &Waveform, base: &Path) -> Result<Scores> {
    score_loaded(item.task, &item.text, wave, &load_refs(item, base)?)
}

/// A directory of batch outputs (`outputs.jsonl` plus waveforms) under a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOutputs {
    pub label: String,
    pub dir: PathBuf,
}

fn read_outputs(system: &SystemOutputs) -> Result<BTreeMap<String, BatchOutput>> {
    let path = system.dir.join("outputs.jsonl");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| EvalError::CoverageError(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let o: BatchOutput = serde_json::from_str(l)?;
            Ok((o.id.clone(), o))
        })
        .collect()
}

fn rows_by_group(items: &[ItemScore], group: impl Fn(&ItemScore) -> String, systems: &[String]) -> Vec<ReportRow> {
    let groups: BTreeSet<String> = items.iter().map(&group).collect();
    let mut rows = Vec::new();
    for g in &groups {
        for system in systems {
            let (n, scores) = mean_scores(
                items
                    .iter()
                    .filter(|i| &i.system == system && &group(i) == g)
                    .map(|i| &i.scores),
            );
            if n > 0 {
                rows.push(ReportRow {
                    group: g.clone(),
                    system: system.clone(),
                    n,
                    scores,
                });
            }
        }
    }
    rows
}

/// Scores every system on every manifest item of `tasks` (all tasks when
/// empty), plus a no-processing row per task computed from the raw input.
pub fn evaluate_run(
    manifest: &Path,
    systems: &[SystemOutputs],
    tasks: &[TaskSpec],
    checkpoint_id: Option<String>,
) -> Result<Report> {
    if systems.is_empty() {
        return Err(EvalError::CoverageError("no system outputs given".into()));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let dataset_id = sha256_hex(&std::fs::read(manifest)?);
    let mut eval_items = read_eval_manifest(manifest)?;
    if !tasks.is_empty() {
        eval_items.retain(|i| tasks.contains(&i.task));
    }
    if eval_items.is_empty() {
        return Err(EvalError::CoverageError("evaluation manifest is empty".into()));
    }
    let outputs: Vec<BTreeMap<String, BatchOutput>> = systems.iter().map(read_outputs).collect::<Result<_>>()?;
    for (system, out) in systems.iter().zip(&outputs) {
        if let Some(missing) = eval_items.iter().find(|i| !out.contains_key(&i.id)) {
            return Err(EvalError::CoverageError(format!(
                "system `{}` has no output for `{}`",
                system.label, missing.id
            )));
        }
    }

    let mut items = Vec::new();
    for item in &eval_items {
        let refs = load_refs(item, base)?;
        let mut push = |system: &str, wave: &Waveform| -> Result<()> {
            items.push(ItemScore {
                id: item.id.clone(),
                task: Some(item.task),
                system: system.to_string(),
                snr_db: item.snr_db,
                scores: score_loaded(item.task, &item.text, wave, &refs)?,
            });
            Ok(())
        };
        push(NO_PROCESSING, &read_waveform(&base.join(&item.baseline))?)?;
        for (system, out) in systems.iter().zip(&outputs) {
            let o = &out[&item.id];
            push(&system.label, &read_waveform(&system.dir.join(&o.output))?)?;
        }
    }
    let mut labels = vec![NO_PROCESSING.to_string()];
    labels.extend(systems.iter().map(|s| s.label.clone()));
    let rows = rows_by_group(&items, |i| i.task.map_or_else(String::new, |t| t.short_name().to_string()), &labels);
    Ok(Report {
        kind: "evaluation".into(),
        metric_version: METRIC_VERSION.into(),
        dataset_id,
        checkpoint_id,
        rows,
        items,
        out_of_scope: OUT_OF_SCOPE.iter().map(|s| s.to_string()).collect(),
    })
}

/// One utterance of the codec round-trip comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactItem {
    pub id: String,
    /// `clean` or `noisy`.
    pub subset: String,
    pub text: SymbolSeq,
    pub wave: Waveform,
    /// Clean speech of the same utterance.
    pub speaker: Waveform,
}

/// The first `n` test-split utterances (by id), each once as recorded and
/// once mixed with an evaluation noise template at an SNR drawn from 0..20 dB.
pub fn impact_items(manifest: &Manifest, seed: u64, n: usize) -> Result<Vec<ImpactItem>> {
    let mut records: Vec<_> = manifest.split(Split::Test).collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records.truncate(n);
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let bank = NoiseBank::new(manifest.header.config.seed);
    let mut rng = rng_for(seed, "evalkit/impact");
    let mut clean_items = Vec::with_capacity(records.len());
    let mut noisy_items = Vec::with_capacity(records.len());
    for record in records {
        let clean = manifest.read(record)?;
        let spec = NoiseSpec {
            template_id: rng.random_range(NoiseBank::eval_ids()),
            gain: 1.0,
        };
        let noise = generate_noise(&bank, &spec, clean.len(), rng.random())?;
        let snr = rng.random_range(0.0..20.0);
        let mix = mix_at_snr(&clean, &noise, snr)?;
        noisy_items.push(ImpactItem {
            id: record.id.clone(),
            subset: "noisy".into(),
            text: SymbolSeq(record.symbols.clone()),
            wave: mix.mixture,
            speaker: clean.clone(),
        });
        clean_items.push(ImpactItem {
            id: record.id.clone(),
            subset: "clean".into(),
            text: SymbolSeq(record.symbols.clone()),
            speaker: clean.clone(),
            wave: clean,
        });
    }
    clean_items.extend(noisy_items);
    Ok(clean_items)
}

fn impact_scores(item: &ImpactItem, wave: &Waveform) -> Result<Scores> {
    Ok(Scores {
        cer: Some(content_error_rate(&recognize(wave)?, item.text.as_slice())?),
        sim: Some(sim(&embedding(wave)?, &embedding(&item.speaker)?)?),
        sim_interferer: None,
        mcd: Some(mcd(&cepstra(&wave.fit_to(wave.len().max(1)))?, &cepstra(&item.wave)?)?),
    })
}

/// Raw versus encode-decode round-trip metrics for each subset: content-error
/// rate, similarity to the clean utterance and MCD to the raw signal itself.
pub fn codec_impact(items: &[ImpactItem], codec: &CodecModel) -> Result<Report> {
    if items.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut hasher_input = Vec::new();
    let mut scored = Vec::new();
    for item in items {
        hasher_input.extend_from_slice(item.id.as_bytes());
        hasher_input.extend_from_slice(item.subset.as_bytes());
        for x in &item.wave.samples {
            hasher_input.extend_from_slice(&x.to_le_bytes());
        }
        let round_trip = codec.decode(&codec.encode(&item.wave)?)?;
        for (system, wave) in [("raw", &item.wave), ("codec_round_trip", &round_trip)] {
            scored.push(ItemScore {
                id: format!("{}/{}", item.subset, item.id),
                task: None,
                system: system.into(),
                snr_db: None,
                scores: impact_scores(item, wave)?,
            });
        }
    }
    let systems = ["raw".to_string(), "codec_round_trip".to_string()];
    let rows = rows_by_group(&scored, |i| i.id.split('/').next().unwrap_or_default().to_string(), &systems);
    Ok(Report {
        kind: "codec_impact".into(),
        metric_version: METRIC_VERSION.into(),
        dataset_id: sha256_hex(&hasher_input),
        checkpoint_id: Some(codec.checksum()),
        rows,
        items: scored,
        out_of_scope: OUT_OF_SCOPE.iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::nclm::StopReason;
    use crate::prompting::{sample_materials, MaterialConfig, UtterancePool};
    use crate::synthworld::{build_corpus, CorpusConfig};

    fn corpus(dir: &Path) -> Manifest {
        let cfg = CorpusConfig {
            num_speakers: 10,
            utterances_per_speaker: 4,
            ..CorpusConfig::default()
        };
        build_corpus(&cfg, dir).unwrap()
    }

    fn eval_set(manifest: &Manifest, dir: &Path) -> Vec<EvalItem> {
        let pool = UtterancePool::load(manifest, Split::Test).unwrap();
        let mut rng = rng_for(3, "test/eval-set");
        let mut items = Vec::new();
        for task in TaskSpec::ALL {
            for k in 0..2 {
                let (m, r) = sample_materials(task, &pool, &MaterialConfig::eval(), &mut rng).unwrap();
                items.push((format!("{}-{k}", task.short_name()), m, r));
            }
        }
        write_eval_set(dir, &items).unwrap()
    }

    /// A system whose output is each item's reference signal.
    fn oracle_outputs(items: &[EvalItem], base: &Path, dir: &Path) {
        std::fs::create_dir_all(dir).unwrap();
        let mut lines = String::new();
        for item in items {
            let output = format!("{}.f32", item.id);
            let wave = read_waveform(&base.join(&item.reference)).unwrap();
            write_waveform(&dir.join(&output), &wave).unwrap();
            let o = BatchOutput {
                id: item.id.clone(),
                task: item.task,
                output,
                codes: String::new(),
                stop_reason: StopReason::Eos,
                frames: 0,
                edit_frames: None,
                context_fidelity: None,
                millis: None,
            };
            lines.push_str(&serde_json::to_string(&o).unwrap());
            lines.push('\n');
        }
        std::fs::write(dir.join("outputs.jsonl"), lines).unwrap();
    }

    #[test]
    fn coverage_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(&dir.path().join("corpus"));
        let set = dir.path().join("eval");
        let items = eval_set(&m, &set);
        let manifest = set.join(EVAL_MANIFEST);
        assert!(matches!(evaluate_run(&manifest, &[], &[], None), Err(EvalError::CoverageError(_))));
        let out = dir.path().join("out");
        oracle_outputs(&items[1..], &set, &out);
        let system = SystemOutputs {
            label: "model".into(),
            dir: out,
        };
        assert!(matches!(evaluate_run(&manifest, &[system], &[], None), Err(EvalError::CoverageError(_))));
    }

    #[test]
    fn report_matches_direct_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(&dir.path().join("corpus"));
        let set = dir.path().join("eval");
        let items = eval_set(&m, &set);
        let out = dir.path().join("oracle");
        oracle_outputs(&items, &set, &out);
        let system = SystemOutputs {
            label: "oracle".into(),
            dir: out.clone(),
        };
        let manifest = set.join(EVAL_MANIFEST);
        let report = evaluate_run(&manifest, std::slice::from_ref(&system), &[], Some("ck".into())).unwrap();
        assert_eq!(report, evaluate_run(&manifest, std::slice::from_ref(&system), &[], Some("ck".into())).unwrap());
        let only_ns = evaluate_run(&manifest, &[system], &[TaskSpec::Ns], None).unwrap();
        assert!(only_ns.rows.iter().all(|r| r.group == "ns"));
        for task in TaskSpec::ALL {
            assert!(report.row(task.short_name(), NO_PROCESSING).is_some(), "{task}");
            assert_eq!(report.row(task.short_name(), "oracle").unwrap().n, 2);
        }
        for item in &items {
            let wave = read_waveform(&out.join(format!("{}.f32", item.id))).unwrap();
            let got = report
                .items
                .iter()
                .find(|s| s.id == item.id && s.system == "oracle")
                .unwrap();
            let load = |p: &PathBuf| read_waveform(&set.join(p)).unwrap();
            if item.task == TaskSpec::Sr {
                let want = mcd(&cepstra(&wave).unwrap(), &cepstra(&load(&item.reference)).unwrap()).unwrap();
                assert!((got.scores.mcd.unwrap() - want).abs() < 1e-9);
                assert_eq!(want, 0.0);
                continue;
            }
            let hyp = analyze_content(&wave.fit_to(wave.len().max(800))).unwrap().symbols.0;
            let errors = crate::evalkit::levenshtein(&hyp, &item.text) as f64 / item.text.len() as f64;
            assert!((got.scores.cer.unwrap() - errors).abs() < 1e-9);
            let pad = |w: Waveform| w.fit_to(w.len().max(2400));
            let e = speaker_embed(&pad(wave.clone())).unwrap();
            let s = speaker_embed(&pad(load(item.speaker.as_ref().unwrap()))).unwrap();
            let cos = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()
                / (e.iter().map(|a| a * a).sum::<f64>().sqrt() * s.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!((got.scores.sim.unwrap() - cos).abs() < 1e-9);
            assert_eq!(got.scores.sim_interferer.is_some(), item.task == TaskSpec::Tse);
        }
        let ns = report.row("ns", "oracle").unwrap();
        assert_eq!(ns.scores.cer, Some(0.0));
        assert!(report.row("sr", NO_PROCESSING).unwrap().scores.mcd.unwrap() > 0.0);
    }

    #[test]
    fn text_is_withheld_only_where_optional() {
        let mut item = EvalItem {
            id: "a".into(),
            task: TaskSpec::Ns,
            text: vec![1, 2],
            inputs: BTreeMap::new(),
            baseline: PathBuf::new(),
            reference: PathBuf::new(),
            speaker: None,
            interferer: None,
            snr_db: None,
        };
        assert!(item.request(false).text.is_empty());
        assert_eq!(item.request(true).text, vec![1, 2]);
        item.task = TaskSpec::Cse;
        assert_eq!(item.request(false).text, vec![1, 2]);
    }

    #[test]
    fn codec_impact_is_deterministic_and_raw_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let items = impact_items(&m, 5, 3).unwrap();
        assert_eq!(items.len(), 6);
        assert_eq!(items, impact_items(&m, 5, 3).unwrap());
        let codec = CodecModel::init(CodecConfig::symbol_rate(), 0).unwrap();
        let report = codec_impact(&items, &codec).unwrap();
        assert_eq!(report, codec_impact(&items, &codec).unwrap());
        assert_eq!(report.rows.len(), 4);
        let raw = report.row("clean", "raw").unwrap();
        assert_eq!(raw.scores.mcd, Some(0.0));
        assert_eq!(raw.scores.cer, Some(0.0));
        assert!((raw.scores.sim.unwrap() - 1.0).abs() < 1e-12);
        assert!(report.row("noisy", "codec_round_trip").is_some());
        assert!(matches!(codec_impact(&[], &codec), Err(EvalError::EmptyInput)));
    }
}
