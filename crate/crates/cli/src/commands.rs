use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use funcsense_core::annotation::{confusion_matrix, AgreementReport, FieldMapping, GoldDataset, LabelStore};
use funcsense_core::corpus::{read_instances_jsonl, write_instances_jsonl, Extractor, Instance};
use funcsense_core::embeddings::{
    cache_read, cache_write, embed_batch, CachingProvider, EmbeddingMatrix, EmbeddingProvider, RemoteProvider, StubProvider,
};
use funcsense_core::evaluation::{aggregate_confusion, render_aggregate, run_experiment, EvalReport, ExperimentSpec};
use funcsense_core::linear_model::{train_multiclass, MulticlassModel};
use funcsense_core::projection::{emit_scatter, project as project_embeddings, ScatterFormat};
use funcsense_core::schema::{FeatureName, SenseInventory};
use funcsense_core::Error;
use serde_json::json;

use crate::config::{required, ProviderKind, RunConfig};
use crate::server::{self, AppState};
use crate::{
    AdjudicateArgs, AgreeArgs, CliError, EmbedArgs, ExperimentArgs, ExtractArgs, ImportArgs, PredictArgs, ProjectArgs,
    ServeArgs, TrainArgs, TrainFlags,
};

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_gold(path: &Path) -> Result<GoldDataset, CliError> {
    Ok(GoldDataset::read_jsonl(open(path)?)?)
}

/// Instances from either an instance JSONL file or a gold JSONL file.
fn read_any_instances(path: &Path) -> Result<Vec<Instance>, CliError> {
    match read_instances_jsonl(open(path)?) {
        Ok(instances) => Ok(instances),
        Err(first) => match GoldDataset::read_jsonl(open(path)?) {
            Ok(gold) => Ok(gold.items().iter().map(|i| i.instance.clone()).collect()),
            Err(_) => Err(first.into()),
        },
    }
}

fn apply_train_flags(flags: &TrainFlags, cfg: &mut RunConfig) -> Result<(), CliError> {
    if let Some(c) = flags.c {
        cfg.train.c = c;
    }
    if let Some(e) = flags.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(t) = flags.tolerance {
        cfg.train.tolerance = t;
    }
    if let Some(s) = flags.shuffle_seed {
        cfg.train.shuffle_seed = s;
    }
    cfg.train.validate()?;
    Ok(())
}

/// `exp1`, `exp2`, `exp3` (all features) or `exp3-<feature>`.
fn experiment_specs(name: &str) -> Result<Vec<ExperimentSpec>, CliError> {
    match name {
        "exp1" => Ok(vec![ExperimentSpec::exp1()]),
        "exp2" => Ok(vec![ExperimentSpec::exp2()]),
        "exp3" => Ok(ExperimentSpec::exp3_all()),
        other => match other.strip_prefix("exp3-") {
            Some(f) => Ok(vec![ExperimentSpec::exp3(f.parse::<FeatureName>()?)]),
            None => Err(CliError::Usage(format!(
                "unknown experiment '{other}' (expected exp1, exp2, exp3 or exp3-<feature>)"
            ))),
        },
    }
}

pub fn extract(args: ExtractArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let corpus = required(args.corpus, &mut cfg.paths.corpus, "corpus")?;
    let out = required(args.out, &mut cfg.paths.instances, "instances")?;
    if let Some(t) = args.target {
        cfg.corpus.target = t;
    }
    if let Some(d) = args.delimiters {
        cfg.corpus.delimiters = d.into_iter().filter(|s| !s.is_empty()).collect();
    }
    if let Some(t) = args.tokenizer {
        cfg.corpus.tokenizer = t.into();
    }
    if args.limit.is_some() {
        cfg.corpus.limit = args.limit;
    }
    let extractor = Extractor {
        target: cfg.corpus.target.clone(),
        delimiters: cfg.corpus.delimiter_set()?,
        tokenizer: cfg.corpus.tokenizer,
    };
    let doc = corpus.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
    let instances = extractor.extract(open(&corpus)?, &doc, cfg.corpus.limit)?;
    write_instances_jsonl(create(&out)?, &instances)?;
    if instances.is_empty() {
        eprintln!("warning: no occurrences of '{}' in {}", cfg.corpus.target, corpus.display());
    }
    println!("{} instance(s) written to {}", instances.len(), out.display());
    Ok(())
}

pub fn import(args: ImportArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let delimiter = match args.separator.as_str() {
        "tab" => b'\t',
        "comma" => b',',
        "semicolon" => b';',
        s if s.len() == 1 => s.as_bytes()[0],
        s => return Err(CliError::Usage(format!("separator must be a single byte, got '{s}'"))),
    };
    if let Some(t) = args.target {
        cfg.corpus.target = t;
    }
    if let Some(t) = args.tokenizer {
        cfg.corpus.tokenizer = t.into();
    }
    let mapping = FieldMapping {
        delimiter,
        target: cfg.corpus.target.clone(),
        text: args.text_column,
        id: args.id_column,
        gold: Some(args.gold_column).filter(|g| !g.is_empty()),
        label_a: args.label_a_column,
        label_b: args.label_b_column,
        target_occurrence: args.occurrence_column,
        doc_prefix: args.table.file_stem().and_then(|s| s.to_str()).unwrap_or("import").to_string(),
    };
    let gold = GoldDataset::import_table(open(&args.table)?, &mapping, &cfg.corpus.delimiter_set()?, cfg.corpus.tokenizer)?;
    gold.validate_labels(&SenseInventory::sich())?;
    gold.write_jsonl(create(&args.out)?)?;
    println!("{} item(s) written to {}", gold.len(), args.out.display());
    Ok(())
}

fn embed_with<P: EmbeddingProvider>(
    provider: P,
    instances: &[Instance],
    cfg: &RunConfig,
    out: &Path,
) -> Result<EmbeddingMatrix, CliError> {
    let matrix = match &cfg.embeddings.memo {
        Some(memo) => {
            let caching = CachingProvider::open(provider, memo)?;
            let matrix = embed_batch(&caching, instances, cfg.embeddings.mode)?;
            caching.save(memo)?;
            eprintln!("memo: {} hit(s), {} miss(es)", caching.hits(), caching.misses());
            matrix
        }
        None => embed_batch(&provider, instances, cfg.embeddings.mode)?,
    };
    cache_write(out, &matrix)?;
    Ok(matrix)
}

pub fn embed(args: EmbedArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let input = required(args.input, &mut cfg.paths.instances, "instances")?;
    let out = required(args.out, &mut cfg.paths.cache, "cache")?;
    let p = args.provider;
    let e = &mut cfg.embeddings;
    if let Some(m) = args.mode {
        e.mode = m.into();
    }
    if let Some(k) = p.provider {
        e.provider = k;
    }
    if p.endpoint.is_some() {
        e.endpoint = p.endpoint;
    }
    if let Some(d) = p.dim {
        e.dim = d;
    }
    if let Some(s) = p.embed_seed {
        e.seed = s;
    }
    if p.pooling.is_some() {
        e.pooling = p.pooling;
    }
    if p.layer.is_some() {
        e.layer = p.layer;
    }
    if p.memo.is_some() {
        e.memo = p.memo;
    }
    let instances = read_any_instances(&input)?;
    let matrix = match cfg.embeddings.provider {
        ProviderKind::Stub => {
            if cfg.embeddings.dim == 0 {
                return Err(CliError::Usage("--dim must be positive".into()));
            }
            embed_with(StubProvider::new(cfg.embeddings.dim, cfg.embeddings.seed), &instances, cfg, &out)?
        }
        ProviderKind::Remote => {
            let endpoint = cfg
                .embeddings
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Usage("--endpoint is required for the remote provider".into()))?;
            let remote = RemoteProvider::connect(&endpoint, cfg.embeddings.pooling.as_deref(), cfg.embeddings.layer)?;
            embed_with(remote, &instances, cfg, &out)?
        }
    };
    println!("{} x {} embeddings written to {}", matrix.len(), matrix.dim(), out.display());
    Ok(())
}

pub fn agree(args: AgreeArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let gold = read_gold(&dataset)?;
    let inventory = SenseInventory::sich();
    let (a, b) = gold.annotator_labels(&args.annotator_a, &args.annotator_b);
    let matrix = confusion_matrix(&a, &b, &inventory.class_ids())?;
    let report = AgreementReport::from_matrix(&args.annotator_a, &args.annotator_b, &matrix)?;
    print!("{}", report.render());
    if let Some(path) = args.json {
        write_text(&path, &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    }
    Ok(())
}

fn read_decisions(path: &Path) -> Result<Vec<(String, u32)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(id), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(format!("{}:{}: expected 'id<TAB>class'", path.display(), n + 1)).into());
        };
        let class = class
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("{}:{}: bad class '{class}'", path.display(), n + 1)))?;
        out.push((id.trim().to_string(), class));
    }
    Ok(out)
}

pub fn adjudicate(args: AdjudicateArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let mut gold = read_gold(&dataset)?;
    let inventory = SenseInventory::sich();
    if let Some(decisions) = args.decisions {
        let out = args.out.expect("clap enforces --out");
        let decisions = read_decisions(&decisions)?;
        for (id, class) in &decisions {
            gold.adjudicate(id, *class, &args.adjudicator, &inventory)?;
        }
        gold.write_jsonl(create(&out)?)?;
        println!("{} decision(s) applied, written to {}", decisions.len(), out.display());
    }
    let open_items: Vec<_> = gold
        .items()
        .iter()
        .filter(|i| matches!((i.label_a, i.label_b), (Some(a), Some(b)) if a != b) && i.adjudications.is_empty())
        .collect();
    println!("{} unresolved disagreement(s)", open_items.len());
    for item in open_items {
        let phrase: Vec<&str> = item
            .instance
            .context_tokens(funcsense_core::corpus::ContextMode::Phrasal)
            .iter()
            .map(|t| t.surface.as_str())
            .collect();
        println!(
            "{}\t{}\t{}\t{}",
            item.id(),
            item.label_a.unwrap(),
            item.label_b.unwrap(),
            phrase.join(" ")
        );
    }
    Ok(())
}

fn labeled_rows(
    spec: &ExperimentSpec,
    gold: &GoldDataset,
    inventory: &SenseInventory,
) -> Result<Vec<(String, i64)>, CliError> {
    Ok(spec.labeled_instances(gold, inventory)?)
}

pub fn train(args: TrainArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let cache = required(args.cache, &mut cfg.paths.cache, "cache")?;
    let out = required(args.out, &mut cfg.paths.model, "model")?;
    apply_train_flags(&args.train, cfg)?;
    let specs = experiment_specs(&args.experiment)?;
    let [spec] = specs.as_slice() else {
        return Err(CliError::Usage("train needs a single experiment, e.g. exp3-agentive".into()));
    };
    let gold = read_gold(&dataset)?;
    let matrix = cache_read(&cache)?;
    let rows = labeled_rows(spec, &gold, &SenseInventory::sich())?;
    let ids: Vec<&str> = rows.iter().map(|(id, _)| id.as_str()).collect();
    let labels: Vec<i64> = rows.iter().map(|(_, c)| *c).collect();
    let x = matrix.select(&ids)?;
    let model = train_multiclass(x.view(), &labels, &cfg.train)?;
    model.save(&out)?;
    println!(
        "{}: {} instance(s), {} class(es), model written to {}",
        spec.name,
        rows.len(),
        model.class_ids().len(),
        out.display()
    );
    Ok(())
}

fn report_text(report: &EvalReport) -> Result<String, CliError> {
    let mut text = report.render();
    if report.experiment == "exp1" && report.classes.contains(&1) {
        let agg = aggregate_confusion(&report.classes, &report.confusion, 1)?;
        text.push_str("\nclass 1 vs. all other classes\n");
        text.push_str(&render_aggregate(1, &agg));
    }
    Ok(text)
}

pub fn experiment(args: ExperimentArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let cache = required(args.cache, &mut cfg.paths.cache, "cache")?;
    let out = required(args.out, &mut cfg.paths.reports, "reports")?;
    apply_train_flags(&args.train, cfg)?;
    if let Some(f) = args.folds {
        cfg.cv.folds = f;
    }
    if let Some(s) = args.fold_seed {
        cfg.cv.seed = s;
    }
    if let Some(s) = args.stratified {
        cfg.cv.stratified = s;
    }
    let specs = experiment_specs(&args.name)?;
    let gold = read_gold(&dataset)?;
    let matrix = cache_read(&cache)?;
    let inventory = SenseInventory::sich();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let run = cfg.to_json();
    for spec in specs {
        let mut report = run_experiment(&spec, &gold, &inventory, &matrix, &cfg.cv_config())?;
        report.config["run"] = run.clone();
        let text = report_text(&report)?;
        write_text(
            &out.join(format!("{}.json", spec.name)),
            &serde_json::to_string_pretty(&report).map_err(Error::from)?,
        )?;
        write_text(&out.join(format!("{}.txt", spec.name)), &text)?;
        println!("{text}");
    }
    Ok(())
}

pub fn project(args: ProjectArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let cache = required(args.cache, &mut cfg.paths.cache, "cache")?;
    let format = match args.format {
        Some(f) => f,
        None if args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) => ScatterFormat::Svg,
        None => ScatterFormat::Tsv,
    };
    let gold = read_gold(&dataset)?;
    let matrix = cache_read(&cache)?;
    let inventory = SenseInventory::sich();
    let labels: Vec<(String, i64)> = gold
        .gold_labels()?
        .into_iter()
        .map(|(id, c)| (id.to_string(), c as i64))
        .collect();
    let filter: Option<BTreeSet<i64>> = args.classes.map(|c| c.into_iter().collect());
    let result = project_embeddings(&matrix, &labels, filter.as_ref(), args.refit, &cfg.pca)?;
    let names: BTreeMap<i64, String> = inventory.classes().iter().map(|c| (c.id as i64, c.name.clone())).collect();
    emit_scatter(&result, &args.out, format, &names)?;
    println!(
        "{} point(s) written to {}; explained variance {:.1}% / {:.1}%",
        result.ids.len(),
        args.out.display(),
        100.0 * result.explained_variance_ratio[0],
        100.0 * result.explained_variance_ratio[1]
    );
    Ok(())
}

pub fn predict(args: PredictArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let model_path = required(args.model, &mut cfg.paths.model, "model")?;
    let cache = required(args.cache, &mut cfg.paths.cache, "cache")?;
    let model = MulticlassModel::load(&model_path)?;
    let matrix = cache_read(&cache)?;
    if matrix.dim() != model.dim() {
        return Err(Error::domain(format!("cache dimension {} but model expects {}", matrix.dim(), model.dim())).into());
    }
    let gold = args.dataset.as_deref().map(read_gold).transpose()?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let (mut answered, mut correct, mut scored) = (0usize, 0usize, 0usize);
    for (i, id) in matrix.ids().iter().enumerate() {
        let x: Vec<f64> = matrix.row(i).iter().map(|&v| v as f64).collect();
        let p = match args.min_margin {
            Some(m) => model.predict_abstaining(&x, m)?,
            None => model.predict(&x)?,
        };
        if !p.abstained {
            answered += 1;
            if let Some(g) = gold.as_ref().and_then(|g| g.get(id)).and_then(|item| item.gold_label()) {
                scored += 1;
                correct += usize::from(p.class_id == g as i64);
            }
        }
        let record = json!({
            "id": id,
            "class_id": if p.abstained { serde_json::Value::Null } else { p.class_id.into() },
            "abstained": p.abstained,
            "scores": p.scores,
        });
        match writeln!(sink, "{record}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r?,
        }
    }
    sink.flush()?;
    let n = matrix.len();
    eprintln!("answered {answered}/{n} (coverage {:.3})", answered as f64 / n as f64);
    if scored > 0 {
        eprintln!("precision on {scored} gold-labeled answer(s): {:.3}", correct as f64 / scored as f64);
    }
    Ok(())
}

pub fn serve(args: ServeArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dataset = required(args.dataset, &mut cfg.paths.dataset, "dataset")?;
    let s = &mut cfg.serve;
    if let Some(h) = args.host {
        s.host = h;
    }
    if let Some(p) = args.port {
        s.port = p;
    }
    if args.static_dir.is_some() {
        s.static_dir = args.static_dir;
    }
    if let Some(a) = args.annotator_a {
        s.annotator_a = a;
    }
    if let Some(b) = args.annotator_b {
        s.annotator_b = b;
    }
    if args.save.is_some() {
        s.save = args.save;
    }
    cfg.validate().map_err(CliError::Config)?;
    let gold = read_gold(&dataset)?;
    let s = &cfg.serve;
    let store = LabelStore::new(gold, SenseInventory::sich(), &s.annotator_a, &s.annotator_b)?;
    let state = Arc::new(AppState::new(store, s.save.clone()));
    server::serve(state, s.static_dir.clone(), &s.host, s.port)
}
