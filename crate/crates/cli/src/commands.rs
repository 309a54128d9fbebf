use std::fmt::Write as _;
use std::path::Path;

use mrrc_core::data::{
    generate_dataset, load_dataset, save_dataset, validate_tokens, Batch, GrammarSpec, SceneExample, SyntheticGrammar,
    Vocabulary,
};
use mrrc_core::models::{build_model, load_checkpoint, save_checkpoint, Model, ModelConfig};
use mrrc_core::tpr::interference_report;
use mrrc_core::training::{
    decode_dataset, gradcheck_model, score_captions, teacher_forced_accuracy, train_scst, train_xe, GradcheckOptions,
    ScstStats,
};
use mrrc_core::write_atomic;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

fn emit(record: &impl Serialize) -> Result<String, CliError> {
    let line = serde_json::to_string(record).map_err(|e| mrrc_core::Error::contract(e.to_string()))?;
    println!("{line}");
    Ok(line)
}

/// Rejects datasets whose shapes or token ids the model cannot take.
fn check_fit(model: &ModelConfig, data: &[SceneExample]) -> Result<(), CliError> {
    validate_tokens(data, model.vocab_size)?;
    for ex in data {
        if ex.region_dim() != model.region_dim || ex.tags.len() != model.tag_dim || ex.k() > model.k_max {
            return Err(CliError::Usage(format!(
                "scene {} has {} regions of width {} and {} tags; model takes up to {} of width {} and {} tags",
                ex.id,
                ex.k(),
                ex.region_dim(),
                ex.tags.len(),
                model.k_max,
                model.region_dim,
                model.tag_dim
            )));
        }
    }
    Ok(())
}

pub fn gen(cfg: &RunConfig) -> Result<(), CliError> {
    let grammar = SyntheticGrammar::new(cfg.data.grammar.clone())?;
    let data = generate_dataset(&grammar, cfg.data.n, cfg.data.seed)?;
    save_dataset(&data, &cfg.paths.dataset)?;
    grammar.vocab().save(&cfg.paths.vocab)?;
    println!("wrote {} scenes to {}", data.len(), cfg.paths.dataset.display());
    Ok(())
}

fn scst_csv(stats: &[ScstStats]) -> String {
    let mut s = String::from("step,loss,sample_reward,greedy_reward\n");
    for (i, st) in stats.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", st.loss, st.mean_sample_reward, st.mean_greedy_reward);
    }
    s
}

fn run_scst(cfg: &RunConfig, model: &mut Model, data: &[SceneExample], out: &Path) -> Result<(), CliError> {
    let stats = train_scst(model, data, &cfg.train)?;
    save_checkpoint(model, out)?;
    write_atomic(&cfg.paths.scst_history, scst_csv(&stats).as_bytes())?;
    let last = stats.last();
    emit(&json!({
        "command": "scst",
        "steps": stats.len(),
        "final_sample_reward": last.map(|s| s.mean_sample_reward),
        "final_greedy_reward": last.map(|s| s.mean_greedy_reward),
    }))?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset)?;
    check_fit(&cfg.model, &data)?;
    let mut model = build_model(&cfg.model)?;
    let history = train_xe(&mut model, &data, &cfg.train)?;
    save_checkpoint(&model, &cfg.paths.checkpoint)?;
    write_atomic(&cfg.paths.history, history.to_csv().as_bytes())?;
    let last = history.epochs.last();
    emit(&json!({
        "command": "train",
        "variant": model.config().variant.name(),
        "steps": history.steps(),
        "epochs": history.epochs.len(),
        "final_nll": last.map(|e| e.nll),
        "final_acc": last.map(|e| e.acc),
        "teacher_forced_acc": teacher_forced_accuracy(&model, &data, cfg.train.batch_size)?,
    }))?;
    if cfg.train.scst.enabled {
        run_scst(cfg, &mut model, &data, &cfg.paths.checkpoint)?;
    }
    Ok(())
}

pub fn scst(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset)?;
    let mut model = load_checkpoint(&cfg.paths.checkpoint)?;
    check_fit(model.config(), &data)?;
    let out = cfg.paths.scst_checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    run_scst(cfg, &mut model, &data, &out)
}

fn beam_width(cfg: &RunConfig) -> usize {
    if cfg.decode.greedy {
        1
    } else {
        cfg.decode.beam
    }
}

pub fn decode(cfg: &RunConfig, workers: Option<usize>) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset)?;
    let model = load_checkpoint(&cfg.paths.checkpoint)?;
    check_fit(model.config(), &data)?;
    let vocab = Vocabulary::load(&cfg.paths.vocab)?;
    let decoded = decode_dataset(&model, &data, beam_width(cfg), cfg.decode.max_len, workers)?;
    let mut text = String::new();
    for (ex, caption) in data.iter().zip(&decoded) {
        let _ = writeln!(text, "{}\t{}", ex.id, vocab.render(caption));
    }
    write_atomic(&cfg.paths.captions, text.as_bytes())?;
    println!("wrote {} captions to {}", decoded.len(), cfg.paths.captions.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, workers: Option<usize>) -> Result<(), CliError> {
    let data = load_dataset(&cfg.paths.dataset)?;
    let model = load_checkpoint(&cfg.paths.checkpoint)?;
    check_fit(model.config(), &data)?;
    let decoded = decode_dataset(&model, &data, beam_width(cfg), cfg.decode.max_len, workers)?;
    let metrics = score_captions(&data, &decoded)?;
    let line = emit(&metrics)?;
    if let Some(path) = &cfg.paths.metrics {
        write_atomic(path, format!("{line}\n").as_bytes())?;
    }
    Ok(())
}

/// Small scenes for gradient checks: a two-noun, two-adjective grammar
/// sized to the requested model.
fn gradcheck_batch(cfg: &RunConfig) -> Result<Batch, CliError> {
    let g = &cfg.gradcheck;
    let words = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
    let spec = GrammarSpec {
        nouns: words("n", 2),
        adjectives: words("a", 2),
        verbs: words("v", 1),
        region_dim: g.region_dim,
        tag_dim: g.tag_dim,
        k_max: g.k_max,
        noise: 0.1,
        prototype_seed: g.seed,
    };
    let grammar = SyntheticGrammar::new(spec)?;
    if grammar.vocab().len() > g.vocab_size {
        return Err(CliError::Usage(format!(
            "gradcheck.vocab_size must be at least {}",
            grammar.vocab().len()
        )));
    }
    let data = generate_dataset(&grammar, g.batch, g.seed)?;
    let refs: Vec<&SceneExample> = data.iter().collect();
    Ok(Batch::from_examples(&refs, g.k_max)?)
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let g = &cfg.gradcheck;
    let batch = gradcheck_batch(cfg)?;
    let opts = GradcheckOptions {
        step: g.step,
        tol: g.tol,
        max_coords: g.max_coords,
        seed: g.seed,
        mutation: None,
    };
    let mut failed = Vec::new();
    println!("variant\ttensor\tchecked\tmax_rel_err\tstatus");
    for variant in g.variants()? {
        let model = build_model(&ModelConfig {
            variant,
            d: g.d,
            e: g.e,
            vocab_size: g.vocab_size,
            region_dim: g.region_dim,
            tag_dim: g.tag_dim,
            k_max: g.k_max,
            m_intermediate: g.m_intermediate,
            mrrc_gate: g.mrrc_gate,
            seed: g.seed,
            ..ModelConfig::default()
        })?;
        let report = gradcheck_model(&model, &batch, &opts)?;
        for t in &report.tensors {
            let status = if t.passed { "ok" } else { "FAIL" };
            println!("{variant}\t{}\t{}\t{:.3e}\t{status}", t.name, t.checked, t.max_rel_err);
            if !t.passed {
                failed.push(format!("{variant}/{}", t.name));
            }
        }
        emit(&json!({
            "command": "gradcheck",
            "variant": variant.name(),
            "tensors": report.tensors.len(),
            "max_rel_err": report.max_rel_err(),
            "tol": report.tol,
            "passed": report.passed(),
        }))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}

pub fn tprlab(cfg: &RunConfig) -> Result<(), CliError> {
    let c = &cfg.tprlab;
    println!("mode\tT\tdim\tmean_err\tmax_err");
    for &dim in &c.dims {
        for row in interference_report(c.t, dim, c.trials, c.seed)? {
            println!("{}\t{}\t{}\t{:.6e}\t{:.6e}", row.mode, row.t, row.dim, row.mean_err, row.max_err);
        }
    }
    Ok(())
}
