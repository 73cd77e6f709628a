use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use margin_audit::decompose::{influence_by_stratum, prepare, term_key, InfluenceTable};
use margin_audit::scm::oracle_stratum_direct_effects;
use margin_audit::{
    bootstrap_decomposition, decompose_with, estimate_effect, explain, export_model, import_model, load_dataset,
    oracle_effects, BnPolicy, BootstrapConfig, BuiltinModel, DecompositionMode, DecompositionReport, EffectKind,
    NuisanceConfig, NuisanceMethod, NuisanceSet, OracleMode, ScmSpec, ScoreSource, SfmDataset, SfmSchema, Target,
    ThresholdSpec,
};

use crate::args::*;
use crate::plot;
use crate::report;

pub enum Status {
    Success,
    Fail,
}

fn seed_or_default(seed: Option<u64>, notes: &mut Vec<String>) -> u64 {
    seed.unwrap_or_else(|| {
        let note = format!("--seed not given; using {DEFAULT_SEED}");
        eprintln!("note: {note}");
        notes.push(note);
        DEFAULT_SEED
    })
}

/// `dir/stem.csv` -> `dir/stem<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn threshold_spec(args: &ThresholdArgs) -> Option<ThresholdSpec> {
    let spec = match (args.t, args.quantile) {
        (Some(t), _) => ThresholdSpec::fixed(t),
        (None, Some(q)) => ThresholdSpec::quantile(q),
        (None, None) => return None,
    };
    Some(spec.strict(args.strict_threshold))
}

fn build_model(args: &ModelArgs, seed: u64) -> Result<ScmSpec> {
    if let Some(path) = &args.model_file {
        return Ok(import_model(&read(path)?)?);
    }
    let builtin = match args.model {
        Some(ModelName::HiringBasic) => BuiltinModel::HiringBasic {
            p0: args.p0,
            p1: args.p1,
        },
        Some(ModelName::HiringExtended) => BuiltinModel::HiringExtended {
            alpha: args.alpha,
            beta: args.beta,
            lambda: args.lambda,
        },
        Some(ModelName::RandomDiscrete) => BuiltinModel::RandomDiscrete {
            z_levels: args.z_levels,
            w_levels: args.w_levels,
            seed: args.model_seed.unwrap_or(seed),
            no_direct: args.no_direct,
        },
        None => bail!("either --model or --model-file is required"),
    };
    Ok(ScmSpec::builtin(builtin)?)
}

pub fn simulate(args: SimulateArgs) -> Result<Status> {
    let mut notes = vec![];
    let seed = seed_or_default(args.seed, &mut notes);
    let model = build_model(&args.model, seed)?;
    let threshold = threshold_spec(&args.threshold).unwrap_or_else(|| ThresholdSpec::fixed(0.5).strict(args.threshold.strict_threshold));
    let mut data = model.sample_dataset(args.n, seed, threshold)?;
    if args.score == ScoreArg::OutcomeFit {
        data = data.with_score_source(ScoreSource::OutcomeFit);
        data = prepare(&data, &NuisanceConfig::frequency())?;
    }
    let out = File::create(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    data.write_csv(BufWriter::new(out))?;
    fs::write(sidecar(&args.out, ".schema.json"), data.schema().to_json() + "\n")?;
    fs::write(sidecar(&args.out, ".model.json"), export_model(&model) + "\n")?;
    let tv = margin_audit::tv(&data, Target::Y)?.value;
    eprintln!("wrote {} rows to {} (TV(y) = {tv:.4})", data.n(), args.out.display());
    Ok(Status::Success)
}

struct Loaded {
    data: SfmDataset,
    schema_path: PathBuf,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    if !args.data.is_file() {
        bail!("data file {} not found", args.data.display());
    }
    let schema_path = args.schema.clone().unwrap_or_else(|| sidecar(&args.data, ".schema.json"));
    let mut schema = SfmSchema::from_json(&read(&schema_path)?)
        .with_context(|| format!("invalid schema {}", schema_path.display()))?;
    if let Some(spec) = threshold_spec(&args.threshold) {
        schema.threshold = Some(spec);
    } else if args.threshold.strict_threshold {
        let spec = schema
            .threshold
            .ok_or_else(|| anyhow!("--strict-threshold needs a threshold (--t or --quantile, or one in the schema)"))?;
        schema.threshold = Some(spec.strict(true));
    }
    let file = File::open(&args.data).with_context(|| format!("cannot open {}", args.data.display()))?;
    let mut data = load_dataset(BufReader::new(file), &schema)
        .with_context(|| format!("cannot load {}", args.data.display()))?;
    if args.swap_groups {
        data = data.swap_groups();
    }
    Ok(Loaded { data, schema_path })
}

fn nuisance_config(args: &EstimationArgs, data: &SfmDataset) -> Result<NuisanceConfig> {
    let cfg = NuisanceConfig {
        method: match args.nuisance {
            NuisanceArg::Frequency => NuisanceMethod::Frequency,
            NuisanceArg::Logistic => NuisanceMethod::Logistic,
            NuisanceArg::Auto => NuisanceMethod::Auto,
        },
        smoothing: args.smoothing,
        bins: args.bins.unwrap_or(data.schema().bins),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn bootstrap_config(args: &BootstrapArgs, replicates: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig {
        replicates,
        seed,
        level: args.level,
        refit_nuisances: !args.no_refit,
    }
}

/// Re-runs the estimators one term at a time to name the one that fails.
fn failing_term(data: &SfmDataset, config: &NuisanceConfig) -> Option<String> {
    let data = match prepare(data, config) {
        Ok(d) => d,
        Err(_) => return Some("score (outcome fit)".into()),
    };
    let targets = data.available_targets();
    let set = match NuisanceSet::fit(&data, &targets, config) {
        Ok(s) => s,
        Err(_) => return Some("nuisance models".into()),
    };
    for t in targets {
        for k in [EffectKind::De, EffectKind::Ie, EffectKind::Se, EffectKind::Tv] {
            if estimate_effect(&data, &set, k, t).is_err() {
                return Some(term_key(k, t));
            }
        }
    }
    None
}

fn estimation_error(e: margin_audit::Error, data: &SfmDataset, config: &NuisanceConfig) -> anyhow::Error {
    match failing_term(data, config) {
        Some(term) => anyhow!(e).context(format!("estimation failed at term {term}")),
        None => anyhow!(e).context("estimation failed"),
    }
}

fn mode_of(m: ModeArg) -> DecompositionMode {
    match m {
        ModeArg::Thm1 => DecompositionMode::Thm1,
        ModeArg::Cor1 => DecompositionMode::Cor1,
    }
}

fn run_decomposition(
    data: &SfmDataset,
    config: &NuisanceConfig,
    mode: DecompositionMode,
    boot: Option<&BootstrapConfig>,
) -> Result<DecompositionReport> {
    if mode == DecompositionMode::Cor1 && !data.has(Target::Y) {
        return Err(anyhow!(margin_audit::Error::MissingOutcome));
    }
    let result = match boot {
        Some(b) => bootstrap_decomposition(data, config, mode, b),
        None => decompose_with(data, config, mode),
    };
    result.map_err(|e| match e {
        margin_audit::Error::EmptyCell { .. }
        | margin_audit::Error::DegenerateAttribute(_)
        | margin_audit::Error::NoConvergence(_) => estimation_error(e, data, config),
        other => anyhow!(other),
    })
}

fn write_replicates(path: Option<&Path>, report: &DecompositionReport) -> Result<()> {
    if let (Some(p), Some(m)) = (path, &report.replicates) {
        m.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

pub fn decompose(args: DecomposeArgs) -> Result<Status> {
    let loaded = load(&args.data)?;
    let data = &loaded.data;
    let config = nuisance_config(&args.estimation, data)?;
    let mode = mode_of(args.mode);
    let mut notes = vec![];
    let boot = match args.bootstrap.bootstrap {
        Some(r) if r > 0 => Some(bootstrap_config(&args.bootstrap, r, seed_or_default(args.bootstrap.seed, &mut notes))),
        _ => None,
    };
    let result = run_decomposition(data, &config, mode, boot.as_ref())?;
    write_replicates(args.bootstrap.replicates_out.as_deref(), &result)?;
    let echo = report::ConfigEcho {
        command: "decompose",
        data: Some(&args.data.data),
        schema: Some(&loaded.schema_path),
        mode: Some(mode),
        nuisance: Some(config),
        threshold: data.schema().threshold,
        swap_groups: args.data.swap_groups,
        bootstrap: boot,
        policy: None,
    };
    let value = report::build(&echo, &result, None, notes)?;
    write_json(args.out.as_deref(), &value)?;
    if let Some(prefix) = &args.plot {
        plot::write(prefix, &result)?;
    }
    Ok(Status::Success)
}

pub fn audit(args: AuditArgs) -> Result<Status> {
    let mut policy = BnPolicy::from_json(&read(&args.policy)?)
        .with_context(|| format!("invalid policy {}", args.policy.display()))?;
    policy.strict |= args.strict;
    policy.mirrored |= args.mirrored;
    let loaded = load(&args.data)?;
    let data = &loaded.data;
    let config = nuisance_config(&args.estimation, data)?;
    let mut notes = vec![];
    let seed = seed_or_default(args.bootstrap.seed, &mut notes);
    let replicates = args.bootstrap.bootstrap.unwrap_or(BootstrapConfig::default().replicates);
    let boot = bootstrap_config(&args.bootstrap, replicates, seed);
    let result = margin_audit::audit(data, &config, &policy, &boot).map_err(|e| match e {
        margin_audit::Error::EmptyCell { .. } | margin_audit::Error::DegenerateAttribute(_) => {
            estimation_error(e, data, &config)
        }
        other => anyhow!(other),
    })?;
    write_replicates(args.bootstrap.replicates_out.as_deref(), &result.decomposition)?;
    let echo = report::ConfigEcho {
        command: "audit",
        data: Some(&args.data.data),
        schema: Some(&loaded.schema_path),
        mode: Some(result.decomposition.mode),
        nuisance: Some(config),
        threshold: data.schema().threshold,
        swap_groups: args.data.swap_groups,
        bootstrap: Some(boot),
        policy: Some(policy),
    };
    let value = report::build(&echo, &result.decomposition, Some(&result), notes)?;
    write_json(args.out.as_deref(), &value)?;
    let text = explain(&result);
    if args.out.is_some() {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
    Ok(if result.is_success() { Status::Success } else { Status::Fail })
}

pub fn influence(args: InfluenceArgs) -> Result<Status> {
    let loaded = load(&args.data)?;
    let config = nuisance_config(&args.estimation, &loaded.data)?;
    let data = prepare(&loaded.data, &config)?;
    let target = match &args.target {
        Some(t) => Target::parse(t)?,
        None if data.has(Target::Y) => Target::Y,
        None => Target::S,
    };
    let set = NuisanceSet::fit(&data, &[target], &config).map_err(|e| estimation_error(e, &data, &config))?;
    let table = InfluenceTable::compute(&data, &set, target).map_err(|e| estimation_error(e, &data, &config))?;
    let mut w = writer(args.out.as_deref())?;
    table.write_csv(&data, &mut w)?;
    w.flush()?;
    if let Some(path) = &args.strata_out {
        let value = json!({
            "target": target,
            "de": influence_by_stratum(&data, &table.de),
            "ie": influence_by_stratum(&data, &table.ie),
            "se": influence_by_stratum(&data, &table.se),
        });
        write_json(Some(path), &value)?;
    }
    Ok(Status::Success)
}

/// Threshold stored in the schema next to a `.model.json` sidecar, if any.
fn sibling_threshold(model_file: &Path) -> Option<ThresholdSpec> {
    let name = model_file.file_name()?.to_string_lossy();
    let stem = name.strip_suffix(".model.json")?;
    let schema = model_file.with_file_name(format!("{stem}.schema.json"));
    SfmSchema::from_json(&fs::read_to_string(schema).ok()?).ok()?.threshold
}

pub fn oracle(args: OracleArgs) -> Result<Status> {
    let mut notes = vec![];
    let needs_seed = args.mc.is_some() || args.model.model == Some(ModelName::RandomDiscrete);
    let seed = if needs_seed {
        seed_or_default(args.seed, &mut notes)
    } else {
        args.seed.unwrap_or(DEFAULT_SEED)
    };
    let model = build_model(&args.model, seed)?;
    let threshold = threshold_spec(&args.threshold)
        .or_else(|| args.model.model_file.as_deref().and_then(sibling_threshold))
        .unwrap_or_else(|| ThresholdSpec::fixed(0.5).strict(args.threshold.strict_threshold));
    let mode = match args.mc {
        Some(samples) => OracleMode::MonteCarlo { samples, seed },
        None => OracleMode::Exact,
    };
    let mut effects = serde_json::Map::new();
    for t in Target::ALL {
        effects.insert(t.name().into(), serde_json::to_value(oracle_effects(&model, t, &threshold, mode)?)?);
    }
    let mut value = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "model": serde_json::from_str::<serde_json::Value>(&export_model(&model))?,
        "threshold": threshold,
        "resolved_threshold": model.resolve_threshold(&threshold)?,
        "mode": if args.mc.is_some() { "monte_carlo" } else { "exact" },
        "effects": effects,
    });
    if args.strata {
        let mut strata = serde_json::Map::new();
        for t in Target::ALL {
            strata.insert(
                t.name().into(),
                serde_json::to_value(oracle_stratum_direct_effects(&model, t, &threshold)?)?,
            );
        }
        value["strata"] = serde_json::Value::Object(strata);
    }
    if !notes.is_empty() {
        value["notes"] = json!(notes);
    }
    write_json(args.out.as_deref(), &value)?;
    Ok(Status::Success)
}
