use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use craft_core::config::{
    load_config, load_endpoint_config, load_mix_spec, AppConfig, ConfigError, ConfigOverride, LoadedConfig, Strictness,
};
use craft_core::corpus_io::{read_records, JsonlWriter};
use craft_core::eval::item::{adapter_by_name, load_dataset};
use craft_core::eval::template::{TemplatePack, DEFAULT_TEMPLATE_COUNT};
use craft_core::eval::{evaluate, EvalReport};
use craft_core::gen::endpoint::ManagedEndpoint;
use craft_core::gen::{GenOptions, Generator};
use craft_core::matcher::CandidateChunk;
use craft_core::mixer::{mix_datasets, ratio_sweep, MixManifest};
use craft_core::pipeline::{candidates_path, read_stats, run_extraction, PipelineError, RunStats, STATS_FILE};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::run_record::{self, digests, sidecar, RunTimer};
use crate::{absolute, init_logging, Cli, Command, EvalArgs, ExtractArgs, GenerateArgs, MixArgs, StatsArgs, SweepArgs};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let strictness = if cli.lax { Strictness::Lax } else { Strictness::Strict };
    let flag_level = cli.log_level.as_deref();
    match cli.command {
        Command::Extract(args) => extract(args, strictness, flag_level),
        Command::Generate(args) => generate(args, strictness, flag_level),
        Command::Mix(args) => mix(args, strictness, flag_level),
        Command::Sweep(args) => sweep(args, strictness, flag_level),
        Command::Eval(args) => eval(args, strictness, flag_level),
        Command::Stats(args) => {
            init_logging(flag_level, None);
            stats(args)
        }
    }
}

fn print_json(value: &impl Serialize) {
    use std::io::Write;
    // a closed pipe (`craft stats | head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

/// Unwraps a loaded config, logging lax-mode warnings now that logging is up.
fn configured(loaded: Result<LoadedConfig, ConfigError>) -> Result<AppConfig, CliError> {
    let loaded = loaded?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.config)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("runtime", e.to_string(), None))
}

fn extract(args: ExtractArgs, strictness: Strictness, flag_level: Option<&str>) -> Result<(), CliError> {
    let timer = RunTimer::start("extract");
    let mut overrides = Vec::new();
    if let Some(n) = args.max_tokens {
        overrides.push(ConfigOverride::new("extract.max_tokens", n as i64));
    }
    if let Some(n) = args.min_distinct {
        overrides.push(ConfigOverride::new("extract.min_distinct", n as i64));
    }
    if let Some(n) = args.workers {
        overrides.push(ConfigOverride::new("extract.workers", n as i64));
    }
    if args.stable_order {
        overrides.push(ConfigOverride::new("extract.stable_order", true));
    }
    if let Some(dir) = &args.output_dir {
        overrides.push(ConfigOverride::path("extract.output_dir", &absolute(dir)?));
    }
    let loaded = load_config(Some(&args.config), &overrides, strictness);
    init_logging(flag_level, loaded.as_ref().ok().map(|l| l.config.log_level.as_str()));
    let config = configured(loaded)?;
    log::info!("resolved config: {}", serde_json::to_string(&config).expect("config serializes"));
    config.check_inputs("extract")?;

    let (run, lexicons) = config.extraction()?;
    for l in &lexicons {
        log::info!(
            "lexicon {}: {} keywords ({} duplicates removed)",
            l.lexicon.region_id,
            l.lexicon.len(),
            l.duplicates_removed
        );
    }
    let outputs: Vec<PathBuf> = run
        .lexicons
        .iter()
        .map(|l| candidates_path(&run.output_dir, &l.region_id))
        .chain([run.output_dir.join(STATS_FILE)])
        .collect();
    let record_path = run.output_dir.join("run.json");
    let (result, stats) = match run_extraction(&run) {
        Ok(stats) => (Ok(()), stats),
        Err(PipelineError::Source { source, stats }) => {
            let stats = *stats;
            (Err(CliError::from(PipelineError::Source { source, stats: Box::new(stats.clone()) })), stats)
        }
        Err(e) => return Err(e.into()),
    };
    let record = timer.finish(&config, BTreeMap::new(), outputs, &stats, result.as_ref().err());
    run_record::write(&record_path, &record)?;
    result?;
    print_json(&stats);
    Ok(())
}

fn generate(args: GenerateArgs, strictness: Strictness, flag_level: Option<&str>) -> Result<(), CliError> {
    let timer = RunTimer::start("generate");
    let mut overrides = Vec::new();
    if !args.candidates.is_empty() {
        let files = args.candidates.iter().map(|p| absolute(p)).collect::<Result<Vec<_>, _>>()?;
        overrides.push(ConfigOverride::paths("generate.candidates", &files));
    }
    if let Some(mode) = args.mode {
        let name = match mode {
            crate::ModeArg::Cd => "context_dependent",
            crate::ModeArg::Cf => "context_free",
            crate::ModeArg::Both => "both",
        };
        overrides.push(ConfigOverride::new("generate.mode", name));
    }
    if let Some(out) = &args.out {
        overrides.push(ConfigOverride::path("generate.output", &absolute(out)?));
    }
    if args.stable_order {
        overrides.push(ConfigOverride::new("generate.stable_order", true));
    }
    let loaded = load_config(args.config.as_deref(), &overrides, strictness);
    init_logging(flag_level, loaded.as_ref().ok().map(|l| l.config.log_level.as_str()));
    let config = configured(loaded)?;
    log::info!("resolved config: {}", serde_json::to_string(&config).expect("config serializes"));
    let settings = &config.generate;
    if settings.candidates.is_empty() {
        return Err(CliError::new("usage", "no candidate files given (--candidates)", None));
    }
    config.check_inputs("generate")?;

    let question = Arc::new(ManagedEndpoint::from_config(&config.endpoints.question)?);
    let answer = match &config.endpoints.answer {
        Some(c) => Arc::new(ManagedEndpoint::from_config(c)?),
        None => question.clone(),
    };
    let context_free = match &config.endpoints.context_free_answer {
        Some(c) => Some(Arc::new(ManagedEndpoint::from_config(c)?)),
        None => None,
    };
    let generator = Generator::new(
        question,
        answer,
        context_free,
        GenOptions {
            mode: settings.mode,
            validation: settings.validation,
            stable_order: settings.stable_order,
            region_names: settings.region_names.clone(),
        },
    );

    let readers = settings
        .candidates
        .iter()
        .map(read_records::<CandidateChunk>)
        .collect::<Result<Vec<_>, _>>()?;
    let candidates = readers.into_iter().flatten().map(|r| r.map(|(_, c)| c));
    let mut writer = JsonlWriter::create(&settings.output)?;
    let stats = runtime()?.block_on(generator.generate_batch(candidates, |r| writer.write(&r)))?;
    writer.finish()?;
    log::info!("{} records written to {}", stats.records_emitted, settings.output.display());

    let inputs = digests(settings.candidates.iter().map(PathBuf::as_path))?;
    let record = timer.finish(&config, inputs, vec![settings.output.clone()], &stats, None);
    run_record::write(&sidecar(&settings.output, ".run.json"), &record)?;
    print_json(&stats);
    Ok(())
}

fn mix_overrides(seed: Option<u64>, out: Option<&Path>) -> Result<Vec<ConfigOverride>, CliError> {
    let mut overrides = Vec::new();
    if let Some(seed) = seed {
        // TOML integers are signed; keep the bit pattern of large seeds
        overrides.push(ConfigOverride::new("seed", seed as i64));
    }
    if let Some(out) = out {
        overrides.push(ConfigOverride::path("output", &absolute(out)?));
    }
    Ok(overrides)
}

fn mix(args: MixArgs, strictness: Strictness, flag_level: Option<&str>) -> Result<(), CliError> {
    init_logging(flag_level, None);
    let timer = RunTimer::start("mix");
    let mut overrides = mix_overrides(args.seed, args.out.as_deref())?;
    if let Some(n) = args.general_count {
        overrides.push(ConfigOverride::new("general_count", n as i64));
    }
    if let Some(n) = args.cultural_count {
        overrides.push(ConfigOverride::new("cultural_count", n as i64));
    }
    if args.allow_short {
        overrides.push(ConfigOverride::new("allow_short", true));
    }
    let spec = load_mix_spec(&args.spec, &overrides, strictness)?;
    log::info!("resolved spec: {}", serde_json::to_string(&spec).expect("spec serializes"));
    let manifest = mix_datasets(&spec)?;
    let inputs = digests([spec.general_source.as_path(), spec.cultural_source.as_path()])?;
    let outputs = vec![manifest.output_path.clone(), craft_core::mixer::manifest_path(&manifest.output_path)];
    let record = timer.finish(&spec, inputs, outputs, &manifest, None);
    run_record::write(&sidecar(&spec.output, ".run.json"), &record)?;
    print_json(&manifest);
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    step: usize,
    max: usize,
    points: &'a [MixManifest],
}

fn sweep(args: SweepArgs, strictness: Strictness, flag_level: Option<&str>) -> Result<(), CliError> {
    init_logging(flag_level, None);
    let timer = RunTimer::start("sweep");
    let overrides = mix_overrides(args.seed, args.out.as_deref())?;
    let spec = load_mix_spec(&args.spec, &overrides, strictness)?;
    let manifests = ratio_sweep(&spec, args.step, args.max)?;
    let summary = SweepSummary {
        step: args.step,
        max: args.max,
        points: &manifests,
    };
    let inputs = digests([spec.general_source.as_path(), spec.cultural_source.as_path()])?;
    let outputs = manifests.iter().map(|m| m.output_path.clone()).collect();
    let config = json!({"spec": spec, "step": args.step, "max": args.max});
    let record = timer.finish(&config, inputs, outputs, &summary, None);
    run_record::write(&sidecar(&spec.output, ".sweep.run.json"), &record)?;
    print_json(&summary);
    Ok(())
}

fn eval(args: EvalArgs, strictness: Strictness, flag_level: Option<&str>) -> Result<(), CliError> {
    init_logging(flag_level, None);
    let timer = RunTimer::start("eval");
    let endpoint_config = load_endpoint_config(&args.endpoint, strictness)?;
    let adapter = adapter_by_name(&args.adapter)
        .ok_or_else(|| CliError::new("usage", format!("unknown adapter {:?}", args.adapter), None))?;
    let items = load_dataset(&args.dataset, adapter.as_ref())?;
    let pack = match &args.templates {
        Some(dir) => TemplatePack::load_dir(dir)?,
        None => TemplatePack::builtin(),
    };
    if pack.len() != DEFAULT_TEMPLATE_COUNT {
        log::warn!("template pack has {} templates; reports usually average {DEFAULT_TEMPLATE_COUNT}", pack.len());
    }
    let endpoint = ManagedEndpoint::from_config(&endpoint_config)?;
    let dataset_name = args
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let log_path = args.log.clone().unwrap_or_else(|| sidecar(&args.out, ".responses.jsonl"));
    let mut log_writer = JsonlWriter::create(&log_path)?;
    let report: EvalReport = runtime()?.block_on(evaluate(&dataset_name, &items, &endpoint, &pack, |e| log_writer.write(e)))?;
    log_writer.finish()?;

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let body = serde_json::to_vec_pretty(&report).expect("report serializes");
    std::fs::write(&args.out, body).map_err(|e| CliError::io(&args.out, e))?;

    let failure = (!report.valid).then(|| {
        CliError::new(
            "endpoint",
            format!("evaluation stopped early: {}", report.error.as_deref().unwrap_or("unknown error")),
            None,
        )
    });
    let config = json!({
        "dataset": args.dataset,
        "adapter": args.adapter,
        "templates": pack,
        "endpoint": endpoint_config,
    });
    let mut inputs = vec![args.dataset.clone()];
    inputs.extend(args.templates.iter().cloned());
    let inputs = digests(inputs.iter().filter(|p| p.is_file()).map(PathBuf::as_path))?;
    let record = timer.finish(&config, inputs, vec![args.out.clone(), log_path], &report, failure.as_ref());
    run_record::write(&sidecar(&args.out, ".run.json"), &record)?;
    if let Some(e) = failure {
        return Err(e);
    }
    print_json(&report);
    Ok(())
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    let stats: RunStats = read_stats(&args.run)?;
    print_json(&stats);
    Ok(())
}
