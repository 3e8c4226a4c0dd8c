use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airdecode::diagnostics::{
    data_volume_sweep, omega_sweep, recompute_overlaps, write_gnuplot, write_jsonl,
    write_sweep_csv, write_volume_csv, OverlapRatios, SweepRow,
};
use airdecode::metrics::{
    attribute_accuracy, continuation_perplexity, distinctness, BayesClassifier,
    ClassifierHandle, ItemFailure, MetricsReport,
};
use airdecode::toy::{ToyCorpus, ToyCorpusConfig, PROMPTS};
use airdecode::{
    generate_batch, AttributeEnsemble, AttributePreset, CompositionMode, GenerationConfig,
    GenerationRequest, GenerationTrace, NGramModel, Smoothing, TokenizerConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{read_corpus, ClassifierConfig, RunConfig};
use crate::{Cli, Command, DecodeFlags, DiagnoseArgs, EvalArgs, GenerateArgs, SweepArgs, ToyArgs};

/// Exit status for runs that finished but had too many per-item failures.
const PARTIAL_FAILURE: u8 = 2;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let ctx = Ctx { cli, config };
    match &cli.command {
        Command::Train => ctx.train(),
        Command::Generate(args) => ctx.generate(args),
        Command::Eval(args) => ctx.eval(args),
        Command::Sweep(args) => ctx.sweep(args),
        Command::Diagnose(args) => ctx.diagnose(args),
        Command::MakeToyCorpus(args) => ctx.make_toy_corpus(args),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: Option<RunConfig>,
}

impl Ctx<'_> {
    fn require_config(&self) -> Result<&RunConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| anyhow!("this command needs --config"))
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = match (&self.cli.out, &self.config) {
            (Some(o), _) => o.clone(),
            (None, Some(c)) => c.out.clone(),
            (None, None) => PathBuf::from("out"),
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn seed(&self) -> u64 {
        self.cli
            .seed
            .or(self.config.as_ref().map(|c| c.seed))
            .unwrap_or(0)
    }

    fn load_ensemble(&self, model: Option<&Path>) -> Result<AttributeEnsemble> {
        let manifest = match (model, &self.config) {
            (Some(m), _) => m.to_owned(),
            (None, Some(c)) => c.model_dir().join("manifest.json"),
            (None, None) => bail!("give --model or a --config whose model has been trained"),
        };
        AttributeEnsemble::load(&manifest)
            .with_context(|| format!("loading ensemble {}", manifest.display()))
    }

    /// Preset from the flag, else the config, with flag and config overrides.
    fn preset(&self, flags: &DecodeFlags) -> Result<AttributePreset> {
        let mut preset = match (&flags.preset, &self.config) {
            (Some(name), _) => AttributePreset::named(name).ok_or_else(|| {
                anyhow!(
                    "unknown preset `{name}` (expected one of {})",
                    AttributePreset::NAMES.join(", ")
                )
            })?,
            (None, Some(c)) => c.preset(),
            (None, None) => AttributePreset::named("sentiment").expect("built-in preset"),
        };
        if let Some(w) = flags.omega {
            preset.omega = w;
        }
        if let Some(k) = flags.top_k {
            preset.top_k = Some(k);
        }
        if let Some(p) = flags.top_p {
            preset.top_p = p;
        }
        if let Some(n) = flags.length {
            preset.length = n;
        }
        preset.validate()?;
        Ok(preset)
    }

    fn mode(&self, flags: &DecodeFlags) -> CompositionMode {
        flags
            .mode
            .or(self.config.as_ref().map(|c| c.mode))
            .unwrap_or_default()
    }

    fn train(&self) -> Result<ExitCode> {
        let config = self.require_config()?;
        let labeled = config.labeled_corpora()?;
        let base = config.base_corpus.as_deref().map(read_corpus).transpose()?;
        let ensemble = AttributeEnsemble::build(&labeled, base.as_deref(), &config.ensemble_config())?;
        let dir = match &self.cli.out {
            Some(o) => o.join("model"),
            None => config.model_dir(),
        };
        let manifest = ensemble.save(&dir)?;
        println!(
            "trained {} label models ({}) and a base model; order {}, {} types",
            ensemble.num_classes(),
            ensemble.labels().join(", "),
            config.order,
            ensemble.vocab().len()
        );
        println!("manifest: {}", manifest.display());
        Ok(ExitCode::SUCCESS)
    }

    fn generate(&self, args: &GenerateArgs) -> Result<ExitCode> {
        let ensemble = self.load_ensemble(args.model.as_deref())?;
        let preset = self.preset(&args.decode)?;
        let mode = self.mode(&args.decode);
        let overlap_k = args
            .decode
            .overlap_k
            .unwrap_or(200)
            .min(ensemble.vocab().len());
        let mut gen = GenerationConfig::from_preset(&preset, mode);
        gen.sampler.seed = self.seed();
        gen.stop_at_eos = args.stop_at_eos;
        gen.overlap_k = Some(overlap_k);
        gen.trace_top = overlap_k;

        let prompts: Vec<String> = if !args.prompt.is_empty() {
            args.prompt.clone()
        } else {
            match &self.config {
                Some(c) if !c.prompts.is_empty() => c.prompts.clone(),
                _ => vec![String::new()],
            }
        };
        let targets: Vec<String> = if args.target.is_empty() {
            ensemble.labels().to_vec()
        } else {
            args.target.clone()
        };
        if args.num == 0 {
            bail!("--num must be at least 1");
        }
        let requests: Vec<GenerationRequest> = (0..args.num)
            .map(|i| GenerationRequest {
                prompt: prompts[(i / targets.len()) % prompts.len()].clone(),
                target: targets[i % targets.len()].clone(),
            })
            .collect();

        let results = generate_batch(&ensemble, &requests, &gen, self.seed(), self.cli.jobs);
        let out = self.out_dir()?;
        let trace_dir = out.join("traces");
        fs::create_dir_all(&trace_dir)?;
        let mut lines = Vec::new();
        let mut errors = 0usize;
        for (i, result) in results.into_iter().enumerate() {
            let trace = match result {
                Ok(t) => t,
                Err(e) => {
                    errors += 1;
                    eprintln!("generation {i} failed: {e}");
                    continue;
                }
            };
            let trace_path = trace_dir.join(format!("{i:04}.jsonl"));
            fs::write(&trace_path, trace.to_jsonl()?)
                .with_context(|| format!("writing {}", trace_path.display()))?;
            println!("[{}] {} | {}", trace.target, trace.prompt, trace.text);
            lines.push(GenerationRecord::new(i, &trace, &trace_path));
        }
        let path = out.join("generations.jsonl");
        write_jsonl(&lines, create(&path)?)?;
        println!(
            "{} generations ({mode}, omega {}) written to {}",
            lines.len(),
            preset.omega,
            path.display()
        );
        Ok(status(errors, args.num))
    }

    fn eval(&self, args: &EvalArgs) -> Result<ExitCode> {
        let records = read_records(&args.texts)?;
        let needs_ensemble = args.classifier_url.is_none();
        let ensemble = match self.load_ensemble(args.model.as_deref()) {
            Ok(e) => Some(e),
            Err(e) if needs_ensemble => return Err(e),
            Err(_) => None,
        };
        let tokenizer: TokenizerConfig = ensemble
            .as_ref()
            .map(|e| *e.tokenizer())
            .or(self.config.as_ref().map(|c| c.tokenizer))
            .unwrap_or_default();
        let eval_model = self.eval_model(args, ensemble.as_ref(), tokenizer)?;

        let classifier = match &args.classifier_url {
            Some(url) => {
                let settings = self
                    .config
                    .as_ref()
                    .and_then(|c| c.classifier.clone())
                    .unwrap_or_default();
                ClassifierHandle::External(settings.external(url))
            }
            None => ClassifierHandle::Bayes(BayesClassifier {
                ensemble: ensemble.as_ref().expect("loaded when no endpoint is set"),
            }),
        };
        let in_flight = self
            .config
            .as_ref()
            .and_then(|c| c.classifier.as_ref())
            .and_then(|c: &ClassifierConfig| c.max_in_flight)
            .unwrap_or(classifier.default_in_flight());

        let items: Vec<(String, String)> = records
            .iter()
            .map(|r| (full_text(r), r.target.clone()))
            .collect();
        let accuracy = attribute_accuracy(&items, classifier.as_classifier(), in_flight)?;

        let ppl_items: Vec<_> = records
            .iter()
            .map(|r| {
                (
                    tokenizer.tokenize(&r.prompt, eval_model.vocab()),
                    tokenizer.tokenize(&r.text, eval_model.vocab()),
                )
            })
            .collect();
        let words: Vec<Vec<String>> = records.iter().map(|r| tokenizer.split(&r.text)).collect();
        let report = MetricsReport {
            accuracy: accuracy.accuracy,
            mean_toxicity: accuracy.mean_score,
            mean_ppl: continuation_perplexity(&ppl_items, &eval_model)?,
            dist1: distinctness(&words, 1)?,
            dist2: distinctness(&words, 2)?,
            dist3: distinctness(&words, 3)?,
            n_texts: records.len(),
        };

        let out = self.out_dir()?;
        let full = EvalOutput {
            metrics: report.clone(),
            classifier: match classifier {
                ClassifierHandle::Bayes(_) => "bayes".into(),
                ClassifierHandle::External(c) => c.endpoint,
            },
            n_scored: accuracy.n_scored,
            failures: accuracy.failures.clone(),
        };
        fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&full)?)?;
        report.write_csv(create(&out.join("metrics.csv"))?)?;

        let show = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.4}"));
        println!("texts      {}", report.n_texts);
        println!("accuracy   {}", show(report.accuracy));
        if report.mean_toxicity.is_some() {
            println!("mean score {}", show(report.mean_toxicity));
        }
        println!("perplexity {:.3}", report.mean_ppl);
        println!(
            "dist-1/2/3 {:.4} / {:.4} / {:.4}",
            report.dist1, report.dist2, report.dist3
        );
        if !accuracy.failures.is_empty() {
            eprintln!(
                "{} of {} classifier calls failed; see metrics.json",
                accuracy.failures.len(),
                report.n_texts
            );
        }
        Ok(if accuracy.failed() {
            ExitCode::from(PARTIAL_FAILURE)
        } else {
            ExitCode::SUCCESS
        })
    }

    fn eval_model(
        &self,
        args: &EvalArgs,
        ensemble: Option<&AttributeEnsemble>,
        tokenizer: TokenizerConfig,
    ) -> Result<NGramModel> {
        if let Some(path) = &args.eval_model {
            return NGramModel::load(path).with_context(|| format!("loading {}", path.display()));
        }
        let corpus = args
            .eval_corpus
            .clone()
            .or(self.config.as_ref().and_then(|c| c.eval_corpus.clone()));
        if let Some(path) = corpus {
            let order = self
                .config
                .as_ref()
                .map(|c| c.order)
                .or(ensemble.map(|e| e.base().order()))
                .unwrap_or(3);
            return train_eval_model(&path, order, tokenizer);
        }
        match ensemble {
            Some(e) => {
                log::warn!("no evaluation corpus given; scoring perplexity with the base model");
                Ok(e.base().clone())
            }
            None => bail!("perplexity needs --eval-corpus, --eval-model or a --model"),
        }
    }

    fn sweep(&self, args: &SweepArgs) -> Result<ExitCode> {
        let config = self.require_config()?;
        let labeled = config.labeled_corpora()?;
        let base = config.base_corpus.as_deref().map(read_corpus).transpose()?;
        let ensemble = match &args.model {
            Some(m) => self.load_ensemble(Some(m))?,
            None => AttributeEnsemble::build(&labeled, base.as_deref(), &config.ensemble_config())?,
        };
        let eval_model = match &config.eval_corpus {
            Some(path) => train_eval_model(path, config.order, config.tokenizer)?,
            None => {
                log::warn!("config has no eval_corpus; scoring perplexity with the base model");
                ensemble.base().clone()
            }
        };

        let mut settings = config.sweep_settings(ensemble.labels(), self.cli.jobs);
        settings.preset = self.preset(&args.decode)?;
        settings.seed = self.seed();
        if let Some(w) = &args.omegas {
            settings.omegas = w.clone();
        }
        if let Some(m) = &args.modes {
            settings.modes = m.clone();
        }
        if let Some(n) = args.samples {
            settings.samples_per_point = n;
        }
        if let Some(k) = args.decode.overlap_k {
            settings.overlap_k = k;
        }
        if let Some(m) = args.decode.mode {
            settings.modes = vec![m];
        }

        let out = self.out_dir()?;
        let report = omega_sweep(&ensemble, &eval_model, &settings)?;
        write_sweep_csv(&report.rows, create(&out.join("sweep.csv"))?)?;
        write_jsonl(&report.rows, create(&out.join("sweep.jsonl"))?)?;
        write_gnuplot(&report.rows, create(&out.join("sweep.dat"))?)?;
        print_rows(&report.rows);
        let mut failures = report.failures;
        let points = settings.omegas.len() * settings.modes.len();

        let volumes = args.volumes.clone().unwrap_or_else(|| config.sweep.volumes.clone());
        let mut total = points;
        if !volumes.is_empty() {
            let (rows, vol_failures) = data_volume_sweep(
                &labeled,
                base.as_deref(),
                &volumes,
                &config.ensemble_config(),
                &eval_model,
                &settings,
            )?;
            write_volume_csv(&rows, create(&out.join("volume.csv"))?)?;
            write_jsonl(&rows, create(&out.join("volume.jsonl"))?)?;
            println!();
            println!("{:>7} {:>7} {:>14} {:>6} {:>8}", "volume", "omega", "mode", "acc", "ppl");
            for r in &rows {
                println!(
                    "{:>7} {:>7} {:>14} {:>6.3} {:>8.2}",
                    r.volume, r.row.omega, r.row.mode.as_str(), r.row.acc, r.row.ppl
                );
            }
            total += points * volumes.len();
            failures.extend(vol_failures);
        }
        for f in &failures {
            eprintln!("omega {} {}: {}", f.omega, f.mode, f.message);
        }
        println!("artifacts written to {}", out.display());
        Ok(status(failures.len(), total))
    }

    fn diagnose(&self, args: &DiagnoseArgs) -> Result<ExitCode> {
        let out = self.out_dir()?;
        let path = out.join("diagnose.csv");
        let mut w = create(&path)?;
        writeln!(w, "file,step,k,r_or,r_oa,r_ora,logged_r_or,logged_r_oa,logged_r_ora")?;
        let mut worst = 0.0f64;
        let mut compared = 0usize;
        println!("{:<28} {:>6} {:>7} {:>7} {:>7}", "trace", "steps", "r_or", "r_oa", "r_ora");
        for trace in &args.traces {
            let text = fs::read_to_string(trace)
                .with_context(|| format!("reading {}", trace.display()))?;
            let steps = GenerationTrace::steps_from_jsonl(&text)
                .with_context(|| format!("parsing {}", trace.display()))?;
            let ratios = recompute_overlaps(&steps, args.overlap_k)
                .with_context(|| format!("recomputing overlaps for {}", trace.display()))?;
            let name = trace.display().to_string();
            for (step, r) in steps.iter().zip(&ratios) {
                let logged = step.overlap.filter(|o| o.k == r.k);
                let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    csv_field(&name),
                    step.step,
                    r.k,
                    r.r_or,
                    r.r_oa,
                    r.r_ora,
                    cell(logged.map(|o| o.r_or)),
                    cell(logged.map(|o| o.r_oa)),
                    cell(logged.map(|o| o.r_ora)),
                )?;
                if let Some(o) = logged {
                    compared += 1;
                    worst = worst
                        .max((o.r_or - r.r_or).abs())
                        .max((o.r_oa - r.r_oa).abs())
                        .max((o.r_ora - r.r_ora).abs());
                }
            }
            if let Some(mean) = OverlapRatios::mean(ratios.iter()) {
                println!(
                    "{:<28} {:>6} {:>7.4} {:>7.4} {:>7.4}",
                    short_name(trace),
                    steps.len(),
                    mean.r_or,
                    mean.r_oa,
                    mean.r_ora
                );
            }
        }
        w.flush()?;
        if compared > 0 {
            println!("{compared} steps compared with logged ratios; largest gap {worst:e}");
        } else {
            println!("no logged ratios with matching k to compare against");
        }
        Ok(if worst > args.tolerance {
            eprintln!("recomputed ratios differ from the logged ones by {worst:e}");
            ExitCode::from(PARTIAL_FAILURE)
        } else {
            ExitCode::SUCCESS
        })
    }

    fn make_toy_corpus(&self, args: &ToyArgs) -> Result<ExitCode> {
        let out = self.out_dir()?;
        let mut cfg = ToyCorpusConfig {
            docs_per_class: args.docs_per_class,
            ..Default::default()
        };
        if let Some(s) = self.cli.seed {
            cfg.seed = s;
        }
        let corpus = ToyCorpus::generate(&cfg);
        let heldout = ToyCorpus::generate(&ToyCorpusConfig {
            seed: cfg.seed + 1000,
            ..cfg.clone()
        });
        write_lines(&out.join("positive.txt"), &corpus.positive)?;
        write_lines(&out.join("negative.txt"), &corpus.negative)?;
        write_lines(&out.join("heldout.txt"), &heldout.all_docs())?;
        let prompts: Vec<String> = PROMPTS.iter().map(|p| format!("{p:?}")).collect();
        let toml = format!(
            r#"task = "sentiment"
order = 3
seed = 7
out = "run"
eval_corpus = "heldout.txt"
prompts = [{}]

[corpora]
positive = "positive.txt"
negative = "negative.txt"

[sweep]
samples_per_point = 100
# The synthetic vocabulary has only a few hundred types.
overlap_k = 20
"#,
            prompts.join(", ")
        );
        fs::write(out.join("airdecode.toml"), toml)?;
        println!(
            "wrote {} documents per label, {} held-out documents and airdecode.toml to {}",
            cfg.docs_per_class,
            2 * cfg.docs_per_class,
            out.display()
        );
        Ok(ExitCode::SUCCESS)
    }
}

/// One line of `generations.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct GenerationRecord {
    index: usize,
    target: String,
    #[serde(default)]
    prompt: String,
    text: String,
    #[serde(default)]
    mode: Option<CompositionMode>,
    #[serde(default)]
    omega: Option<f64>,
    #[serde(default)]
    n_tokens: Option<usize>,
    #[serde(default)]
    overlap: Option<OverlapRatios>,
    #[serde(default)]
    trace: Option<PathBuf>,
}

impl GenerationRecord {
    fn new(index: usize, t: &GenerationTrace, trace: &Path) -> Self {
        GenerationRecord {
            index,
            target: t.target.clone(),
            prompt: t.prompt.clone(),
            text: t.text.clone(),
            mode: Some(t.mode),
            omega: Some(t.omega),
            n_tokens: Some(t.tokens.len()),
            overlap: t.mean_overlap(),
            trace: Some(trace.to_owned()),
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    metrics: MetricsReport,
    classifier: String,
    n_scored: usize,
    failures: Vec<ItemFailure>,
}

/// Records need only `text` and `target`; other fields are optional.
fn read_records(path: &Path) -> Result<Vec<GenerationRecord>> {
    #[derive(Deserialize)]
    struct Minimal {
        text: String,
        target: String,
        #[serde(default)]
        prompt: String,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m: Minimal = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: bad record", path.display(), n + 1))?;
        records.push(GenerationRecord {
            index: records.len(),
            target: m.target,
            prompt: m.prompt,
            text: m.text,
            mode: None,
            omega: None,
            n_tokens: None,
            overlap: None,
            trace: None,
        });
    }
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(records)
}

fn full_text(r: &GenerationRecord) -> String {
    if r.prompt.is_empty() {
        r.text.clone()
    } else {
        format!("{} {}", r.prompt, r.text)
    }
}

fn train_eval_model(path: &Path, order: usize, tokenizer: TokenizerConfig) -> Result<NGramModel> {
    let docs = read_corpus(path)?;
    NGramModel::train_texts(&docs, &tokenizer, order, Smoothing::for_order(order))
        .with_context(|| format!("training the evaluation model on {}", path.display()))
}

fn print_rows(rows: &[SweepRow]) {
    println!(
        "{:>7} {:>14} {:>6} {:>8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "omega", "mode", "acc", "ppl", "dist1", "dist2", "dist3", "r_or", "r_oa", "r_ora"
    );
    for r in rows {
        println!(
            "{:>7} {:>14} {:>6.3} {:>8.2} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            r.omega, r.mode.as_str(), r.acc, r.ppl, r.dist1, r.dist2, r.dist3, r.r_or, r.r_oa, r.r_ora
        );
    }
}

/// Nonzero when more than a tenth of the items failed.
fn status(failures: usize, total: usize) -> ExitCode {
    if total > 0 && failures as f64 / total as f64 > airdecode::metrics::MAX_FAILURE_RATE {
        ExitCode::from(PARTIAL_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn short_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}
