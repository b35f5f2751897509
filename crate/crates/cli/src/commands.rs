//! Subcommand bodies. Each reads its inputs, calls into the library and
//! writes its outputs; nothing here holds state between runs.

use std::path::{Path, PathBuf};

use cascadener::backend::ReplayMode;
use cascadener::classification::Mode;
use cascadener::dataio::{
    corpus_to_string, decontaminate, parse_conll, parse_corpus, parse_sentences, read_text, split_dataset,
    stratified_sample, write_conll, write_corpus, write_text, ConllOptions,
};
use cascadener::dyncat::{run_dynamic_categorization, SynonymTable};
use cascadener::eval::{aggregate_report, project_to_level, CountTable, UnknownPolicy};
use cascadener::markup::reembed_each;
use cascadener::metrics::{metric_report, ReportConfig};
use cascadener::pipeline::{extract_sentence, label_marked, run_ner_batch, write_batch, Labeling, PipelineConfig};
use cascadener::validation::validate_dataset;
use cascadener::{AnnotatedSentence, Entity, Level, Sentence, Taxonomy, TypeList};
use serde_json::json;

use crate::backends::Backends;
use crate::settings::Settings;
use crate::{
    ClassifyArgs, Cli, CliError, Command, ConvertArgs, DecontaminateArgs, DyncatArgs, DyncatCommand, EvalArgs,
    ExtractArgs, FormatArg, LabelArgs, LevelArg, MetricsArgs, ModeArg, NerArgs, ReplayModeArg, ReportFormat,
    SampleArgs, SplitArgs, UnknownArg, ValidateArgs,
};

struct Ctx {
    settings: Settings,
    backends: Backends,
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        settings.seed = seed;
    }
    settings.dyncat.seed = settings.seed;
    let mode = match cli.global.replay_mode {
        ReplayModeArg::Playback => ReplayMode::Playback,
        ReplayModeArg::Record => ReplayMode::Record,
    };
    let backends = Backends::new(cli.global.replay.as_ref(), mode)?;
    let ctx = Ctx { settings, backends };
    match cli.command {
        Command::Ner(a) => ner(&ctx, a),
        Command::Extract(a) => extract(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Eval(a) => eval(a),
        Command::Metrics(a) => metrics(&ctx, a),
        Command::Dyncat {
            command: DyncatCommand::Run(a),
        } => dyncat(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Decontaminate(a) => decontam(&ctx, a),
        Command::Convert(a) => convert(a),
        Command::Validate(a) => validate(a),
    }
}

fn level(l: LevelArg) -> Level {
    match l {
        LevelArg::Coarse => Level::Coarse,
        LevelArg::Medium => Level::Medium,
        LevelArg::Fine => Level::Fine,
    }
}

fn mode(m: ModeArg) -> Mode {
    match m {
        ModeArg::Supervised => Mode::Supervised,
        ModeArg::ZeroShot => Mode::ZeroShot,
    }
}

fn load_taxonomy(source: Option<&str>) -> Result<Taxonomy, CliError> {
    match source {
        None | Some("dynamicner") => Ok(Taxonomy::dynamicner()),
        Some(path) => Taxonomy::load(path).map_err(CliError::op),
    }
}

/// `None` when neither `--types` nor a taxonomy flag was given.
fn labeling(args: &LabelArgs) -> Result<Option<Labeling>, CliError> {
    if let Some(types) = &args.types {
        let tl = TypeList::new(types.iter().map(|t| t.trim()), false).map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(Some(Labeling::Flat(tl)));
    }
    if args.taxonomy.is_none() && args.depth.is_none() {
        return Ok(None);
    }
    Ok(Some(Labeling::Taxonomy {
        taxonomy: load_taxonomy(args.taxonomy.as_deref())?,
        depth: args.depth.map_or(Level::Fine, level),
    }))
}

fn pipeline_config(
    s: &Settings,
    labeling: Labeling,
    m: Mode,
    rounds: Option<usize>,
) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::new(labeling, m).with_seed(s.seed);
    cfg.extraction.rounds = rounds.unwrap_or(s.rounds);
    cfg.extraction.diversity_temperature = s.temperature;
    cfg.extraction.max_tokens = s.max_tokens;
    cfg.workers = s.workers;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn read_sentences(path: &Path) -> Result<Vec<Sentence>, CliError> {
    parse_sentences(&read_text(path).map_err(CliError::op)?).map_err(CliError::op)
}

fn read_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>, CliError> {
    parse_corpus(&read_text(path).map_err(CliError::op)?).map_err(CliError::op)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn emit(output: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => write_text(p, text).map_err(CliError::op),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ner(ctx: &Ctx, a: NerArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let labeling = labeling(&a.labels)?.unwrap_or(Labeling::Taxonomy {
        taxonomy: Taxonomy::dynamicner(),
        depth: Level::Fine,
    });
    let mut cfg = pipeline_config(s, labeling, mode(a.labels.mode), a.rounds)?;
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.fail_fast = a.fail_fast;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let sentences = read_sentences(&a.input)?;
    let ext = ctx.backends.chat(&s.extractor);
    let cls = ctx.backends.chat(&s.classifier);
    let out = run_ner_batch(ext.as_ref(), cls.as_ref(), &sentences, &cfg).map_err(CliError::op)?;
    write_batch(&out, &a.output).map_err(CliError::op)?;
    eprintln!(
        "{} of {} sentences labeled, {} failed",
        out.manifest.predictions,
        out.manifest.sentences,
        out.manifest.errors.len()
    );
    Ok(())
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let flat = Labeling::Flat(TypeList::new(["entity"], false).expect("non-empty"));
    let cfg = pipeline_config(s, flat, Mode::Supervised, a.rounds)?;
    let ext = ctx.backends.chat(&s.extractor);
    let mut out = String::new();
    for sentence in read_sentences(&a.input)? {
        let (rounds, spans) = extract_sentence(ext.as_ref(), &sentence, &cfg)
            .map_err(|e| CliError::Op(format!("sentence {}: {e}", sentence.id)))?;
        let line = json!({
            "id": sentence.id,
            "language": sentence.language.as_str(),
            "text": sentence.text,
            "spans": spans,
            "rounds": rounds,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    write_text(&a.output, &out).map_err(CliError::op)
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let m = mode(a.labels.mode);
    let fixed = labeling(&a.labels)?;
    let cls = ctx.backends.chat(&s.classifier);
    let mut out = Vec::new();
    for rec in read_corpus(&a.input)? {
        let lab = fixed.clone().unwrap_or_else(|| Labeling::Flat(rec.type_list.clone()));
        let cfg = pipeline_config(s, lab, m, None)?;
        let marked = reembed_each(&rec.sentence, &rec.spans()).map_err(CliError::op)?;
        let mut entities = Vec::with_capacity(marked.len());
        for (span, mk) in rec.spans().into_iter().zip(&marked) {
            let label = label_marked(cls.as_ref(), mk, &cfg)
                .map_err(|e| CliError::Op(format!("sentence {}: {e}", rec.id())))?;
            entities.push(Entity::new(span, label));
        }
        out.push(AnnotatedSentence::new(
            rec.sentence.clone(),
            entities,
            cfg.output_type_list(),
        ));
    }
    write_corpus(&out, &a.output).map_err(CliError::op)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut pred = read_corpus(&a.pred)?;
    let mut gold = read_corpus(&a.gold)?;
    let granularity = match a.level {
        Some(l) => {
            let tax = load_taxonomy(a.taxonomy.as_deref())?;
            pred = project_to_level(&pred, &tax, level(l));
            gold = project_to_level(&gold, &tax, level(l));
            level(l).as_str()
        }
        None => "flat",
    };
    let policy = match a.unknown {
        UnknownArg::Drop => UnknownPolicy::Drop,
        UnknownArg::Fp => UnknownPolicy::CountAsFp,
    };
    let mut table = CountTable::default();
    table.add(&pred, &gold, granularity, policy).map_err(CliError::op)?;
    let report = aggregate_report(&table);
    let text = match a.format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    };
    emit(a.output.as_ref(), &text)
}

fn metrics(ctx: &Ctx, a: MetricsArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let ds = read_corpus(&a.input)?;
    let emb = a.cohesion.then(|| ctx.backends.embedder(&s.embedder, s.embedder_dim));
    let cfg = ReportConfig {
        thresholds: s.thresholds,
        seed: s.seed,
        ..Default::default()
    };
    let report = metric_report(&ds, emb.as_deref(), &cfg).map_err(CliError::op)?;
    let text = match a.format {
        ReportFormat::Text => report.to_table(),
        ReportFormat::Json => serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    };
    emit(a.output.as_ref(), &text)
}

fn dyncat(ctx: &Ctx, a: DyncatArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    let ds = read_corpus(&a.input)?;
    let tax = load_taxonomy(a.taxonomy.as_deref())?;
    let mut cfg = s.dyncat.clone();
    cfg.synonyms = match &a.synonyms {
        Some(p) => SynonymTable::load(p).map_err(CliError::op)?,
        None => SynonymTable::starter(),
    };
    let emb = a.cohesion.then(|| ctx.backends.embedder(&s.embedder, s.embedder_dim));
    let (out, log) = run_dynamic_categorization(&ds, &tax, &cfg, emb.as_deref()).map_err(CliError::op)?;
    write_corpus(&out, &a.output).map_err(CliError::op)?;
    let log_path = a.log.unwrap_or_else(|| sidecar(&a.output, ".audit.jsonl"));
    write_text(&log_path, &log.to_jsonl()).map_err(CliError::op)?;
    match log.convergence() {
        Some((true, _)) => eprintln!("targets met"),
        Some((false, unmet)) => eprintln!("targets not met: {}", unmet.join(", ")),
        None => {}
    }
    Ok(())
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<(), CliError> {
    let ds = read_corpus(&a.input)?;
    let (out, manifest) = stratified_sample(&ds, a.total, ctx.settings.seed);
    write_corpus(&out, &a.output).map_err(CliError::op)?;
    let path = a.manifest.unwrap_or_else(|| sidecar(&a.output, ".manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(path, &text).map_err(CliError::op)
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<(), CliError> {
    if a.names.len() != a.ratios.len() {
        return Err(CliError::Usage(format!(
            "{} names for {} ratios",
            a.names.len(),
            a.ratios.len()
        )));
    }
    let ds = read_corpus(&a.input)?;
    let parts = split_dataset(&ds, &a.ratios, ctx.settings.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| CliError::Op(format!("{}: {e}", a.output_dir.display())))?;
    for (name, part) in a.names.iter().zip(&parts) {
        write_corpus(part, a.output_dir.join(format!("{name}.jsonl"))).map_err(CliError::op)?;
    }
    let sizes: Vec<String> = a
        .names
        .iter()
        .zip(&parts)
        .map(|(n, p)| format!("{n}={}", p.len()))
        .collect();
    eprintln!("{}", sizes.join(" "));
    Ok(())
}

fn decontam(ctx: &Ctx, a: DecontaminateArgs) -> Result<(), CliError> {
    let s = &ctx.settings;
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(CliError::Usage(format!("threshold {} is outside (0, 1]", a.threshold)));
    }
    let ds = read_corpus(&a.input)?;
    let reference = read_sentences(&a.reference)?;
    let emb = ctx.backends.embedder(&s.embedder, s.embedder_dim);
    let (kept, excluded) = decontaminate(&ds, &reference, emb.as_ref(), a.threshold).map_err(CliError::op)?;
    write_corpus(&kept, &a.output).map_err(CliError::op)?;
    let lines: String = excluded
        .iter()
        .map(|e| serde_json::to_string(e).expect("exclusion serializes") + "\n")
        .collect();
    let path = a.exclusions.unwrap_or_else(|| sidecar(&a.output, ".excluded.jsonl"));
    write_text(path, &lines).map_err(CliError::op)?;
    eprintln!("{} kept, {} excluded", kept.len(), excluded.len());
    Ok(())
}

fn infer_format(given: Option<FormatArg>, path: &Path) -> Result<FormatArg, CliError> {
    if let Some(f) = given {
        return Ok(f);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "json") => Ok(FormatArg::Jsonl),
        Some("conll" | "bio" | "iob") => Ok(FormatArg::Conll),
        _ => Err(CliError::Usage(format!(
            "cannot infer the format of {}; pass --from/--to or --format",
            path.display()
        ))),
    }
}

fn read_any(path: &Path, format: FormatArg, language: &str, lenient: bool) -> Result<Vec<AnnotatedSentence>, CliError> {
    match format {
        FormatArg::Jsonl => read_corpus(path),
        FormatArg::Conll => parse_conll(
            &read_text(path).map_err(CliError::op)?,
            language,
            ConllOptions { lenient },
        )
        .map_err(CliError::op),
    }
}

fn convert(a: ConvertArgs) -> Result<(), CliError> {
    let from = infer_format(a.from, &a.input)?;
    let to = infer_format(a.to, &a.output)?;
    let ds = read_any(&a.input, from, &a.language, a.lenient)?;
    match to {
        FormatArg::Jsonl => write_text(&a.output, &corpus_to_string(&ds)),
        FormatArg::Conll => write_conll(&ds, &a.output),
    }
    .map_err(CliError::op)
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let format = infer_format(a.format, &a.input)?;
    let ds = read_any(&a.input, format, &a.language, false)?;
    let report = validate_dataset(&ds);
    if report.is_valid() {
        println!("{} records valid", ds.len());
        Ok(())
    } else {
        print!("{report}");
        Err(CliError::Op(format!("{} violations", report.violations.len())))
    }
}
