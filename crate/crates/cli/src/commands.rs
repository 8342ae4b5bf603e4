//! Command implementations. Every command is a pure function of
//! (arguments, config, seed) to its output files.

use std::io::Write;

use anyhow::{anyhow, bail, Context, Result};

use corrsense::detectors::{
    ModifiedStDisjointIntervals, RandomizedKsets, StConfig, StDisjointIntervals, UniformScan,
    VarianceThresholding,
};
use corrsense::divergence::{
    bound_report, kl_chi2_scale, kl_normalized, kl_unnormalized, optimal_truncation_width,
};
use corrsense::exec::Parallelism;
use corrsense::model::{ContaminationClass, ModelKind};
use corrsense::risk::{estimate_risk_with_trials, InstanceFamily, RiskConfig};
use corrsense::rng::{stream, tag};
use corrsense::sensing::History;

use crate::config::{ExperimentConfig, GridPoint, ProcedureKind};

fn parse_model(text: &str) -> Result<ModelKind> {
    match text {
        "normalized" => Ok(ModelKind::Normalized),
        "unnormalized" => Ok(ModelKind::Unnormalized),
        other => bail!("unknown model {other:?} (expected normalized or unnormalized)"),
    }
}

fn parse_class(text: &str, n: u32, k: u32) -> Result<ContaminationClass> {
    match text {
        "ksets" => Ok(ContaminationClass::KSets { n, k }),
        "kintervals" => Ok(ContaminationClass::KIntervals { n, k }),
        "disjoint-kintervals" | "disjoint_kintervals" => {
            Ok(ContaminationClass::DisjointKIntervals { n, k })
        }
        other => bail!("unknown class {other:?}"),
    }
}

fn write_text(path: Option<&str>, text: &str) -> Result<()> {
    match path {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {path}"))?;
        }
        None => {
            print!("{text}");
            std::io::stdout().flush()?;
        }
    }
    Ok(())
}

pub fn kl(model: &str, rhos: &[f64], ks: &[u32], output: Option<&str>) -> Result<i32> {
    let mut out = String::from("schema,model,rho,k,kl\n");
    let emit_normalized = model == "normalized" || model == "all";
    let emit_unnormalized = model == "unnormalized" || model == "all";
    let emit_chi2 = model == "chi2-scale" || model == "all";
    if !(emit_normalized || emit_unnormalized || emit_chi2) {
        bail!("unknown model {model:?} (expected normalized, unnormalized, chi2-scale or all)");
    }
    for &rho in rhos {
        for &k in ks {
            if emit_normalized {
                let v = kl_normalized(rho, k).map_err(|e| anyhow!("rho={rho}, k={k}: {e}"))?;
                out.push_str(&format!("kl.v1,normalized,{rho},{k},{v}\n"));
            }
            if emit_unnormalized {
                let v = kl_unnormalized(rho, k).map_err(|e| anyhow!("rho={rho}, k={k}: {e}"))?;
                out.push_str(&format!("kl.v1,unnormalized,{rho},{k},{v}\n"));
            }
        }
        if emit_chi2 {
            let v = kl_chi2_scale(rho).map_err(|e| anyhow!("rho={rho}: {e}"))?;
            out.push_str(&format!("kl.v1,chi2_scale,{rho},0,{v}\n"));
        }
    }
    write_text(output, &out)?;
    Ok(0)
}

pub fn bounds(
    class: &str,
    n: u32,
    k: u32,
    rho: f64,
    m: u32,
    model: &str,
    output: Option<&str>,
) -> Result<i32> {
    let class = parse_class(class, n, k)?;
    let model = parse_model(model)?;
    let report = bound_report(&class, rho, m, model)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(output, &text)?;
    Ok(0)
}

pub fn calibrate(config_path: &str, output: Option<&str>) -> Result<i32> {
    let config = ExperimentConfig::load(config_path)?;
    let point = config.single_point()?;
    let mut summary = serde_json::json!({
        "schema_version": 1,
        "procedure": config.procedure.name(),
        "model": config.model,
        "n": point.n,
        "k": point.k,
        "rho": point.rho,
        "m": point.m,
    });
    let class = config.class.class(point.n, point.k);
    let obj = summary.as_object_mut().unwrap();
    match config.procedure {
        ProcedureKind::UniformScan => {
            let scan = UniformScan::new(
                class,
                point.rho,
                point.m,
                corrsense::detectors::Calibration::MonteCarloNull {
                    alpha: config.alpha,
                    n_sims: config.calibration_sims,
                    seed: corrsense::rng::derive_seed(config.seed, &[tag::CALIBRATION]),
                },
            )?;
            obj.insert("scan_threshold".into(), scan.threshold().into());
        }
        ProcedureKind::SimpleSum => {
            obj.insert("alpha".into(), config.alpha.into());
        }
        ProcedureKind::StDisjoint => {
            let st = StDisjointIntervals::new(
                class,
                point.rho,
                point.m,
                config.model,
                StConfig::default(),
            )?;
            obj.insert("gamma".into(), st.gamma().into());
            obj.insert("m_bar".into(), st.m_bar().into());
            obj.insert("passes".into(), st.passes().into());
        }
        ProcedureKind::ModifiedSt => {
            let st = ModifiedStDisjointIntervals::new(
                class,
                point.rho,
                point.m,
                config.model,
                StConfig::default(),
            )?;
            obj.insert("gamma".into(), st.gamma().into());
            obj.insert("m_bar".into(), st.m_bar().into());
            obj.insert("passes".into(), st.passes().into());
            obj.insert("effective_p".into(), st.effective_p().into());
        }
        ProcedureKind::RandomizedKsets => {
            let p = config
                .p
                .ok_or_else(|| anyhow!("randomized_ksets needs the `p` field"))?;
            let proc = RandomizedKsets::new(
                class,
                point.rho,
                point.m,
                p,
                config.alpha,
                config.calibration_sims,
                corrsense::rng::derive_seed(config.seed, &[tag::CALIBRATION]),
            )?;
            obj.insert("scan_threshold".into(), proc.threshold().into());
            obj.insert("subsample_size".into(), proc.subsample_size().into());
            obj.insert("rounds".into(), proc.rounds().into());
        }
        ProcedureKind::VarianceThresholding => {
            let proc = VarianceThresholding::new(class, point.rho, point.m, StConfig::default())?;
            obj.insert("gamma".into(), proc.gamma().into());
            obj.insert("m_bar".into(), proc.m_bar().into());
            obj.insert("passes".into(), proc.passes().into());
            obj.insert("subsample_size".into(), proc.subsample_size().into());
        }
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_text(output, &text)?;
    Ok(0)
}

const SUMMARY_HEADER: &str =
    "schema,procedure,model,class,n,k,rho,m,trials,type1,type2_worst,risk,ci\n";

fn summary_row(
    config: &ExperimentConfig,
    point: GridPoint,
    est: &corrsense::risk::RiskEstimate,
) -> String {
    format!(
        "risk-summary.v1,{},{},{},{},{},{},{},{},{},{},{},{}\n",
        config.procedure.name(),
        model_name(config.model),
        config.class.name(),
        point.n,
        point.k,
        point.rho,
        point.m,
        config.trials,
        est.type1_rate,
        est.type2_worst_rate,
        est.risk,
        est.ci_halfwidth,
    )
}

fn model_name(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Normalized => "normalized",
        ModelKind::Unnormalized => "unnormalized",
    }
}

pub fn simulate(
    config_path: &str,
    summary: Option<&str>,
    trials_out: Option<&str>,
    trace_out: Option<&str>,
) -> Result<i32> {
    let config = ExperimentConfig::load(config_path)?;
    let point = config.single_point()?;
    let procedure = config.build_procedure(point)?;
    let family = InstanceFamily {
        class: config.class.class(point.n, point.k),
        rho: point.rho,
        model: config.model,
    };
    let risk_config = risk_config_for(&config, config.seed);
    let (est, records) = estimate_risk_with_trials(procedure.as_ref(), &family, &risk_config)?;

    let mut text = String::from(SUMMARY_HEADER);
    text.push_str(&summary_row(&config, point, &est));
    let target = summary.or(config.output.as_deref());
    write_text(target, &text)?;

    // Per-trial JSONL accompanies the summary: an explicit --trials-out wins,
    // otherwise a file summary gets a sibling `<path>.trials.jsonl`.
    let trials_path = trials_out
        .map(str::to_owned)
        .or_else(|| target.map(|t| format!("{t}.trials.jsonl")));
    if let Some(path) = trials_path {
        let mut out = String::new();
        for record in &records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        std::fs::write(&path, out).with_context(|| format!("writing {path}"))?;
    }

    if let Some(path) = trace_out {
        // Re-run the first alternative trial with tracing enabled; the
        // stream derivation matches the risk engine's.
        let alternatives = corrsense::risk::alternatives_for(
            &family.class,
            procedure.is_exchangeable(&family.class),
            risk_config.alternatives,
            &mut stream(config.seed, &[tag::ALTERNATIVES]),
        )?;
        let instance = family.alternative_instance(alternatives[0].clone())?;
        let mut rng = stream(config.seed, &[tag::ALT, 0, 0]);
        let (_, history) = procedure.run_trial_traced(&instance, &mut rng)?;
        let history: History =
            history.ok_or_else(|| anyhow!("procedure does not expose session traces"))?;
        std::fs::write(path, history.to_jsonl()).with_context(|| format!("writing {path}"))?;
    }
    Ok(0)
}

fn risk_config_for(config: &ExperimentConfig, seed: u64) -> RiskConfig {
    RiskConfig {
        trials: config.trials,
        alternatives: corrsense::risk::AlternativeSelection::Sampled(config.alternatives),
        delta: config.delta,
        master_seed: seed,
        parallelism: match config.workers {
            None => Parallelism::default(),
            Some(w) => Parallelism::Parallel { workers: Some(w) },
        },
    }
}

/// Sweep manifest entry: a completed grid point and the output-file byte
/// offset after its row was flushed.
#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    key: String,
    offset: u64,
}

fn point_key(p: GridPoint) -> String {
    format!("n={},k={},rho={},m={}", p.n, p.k, p.rho, p.m)
}

pub fn sweep(config_path: &str, output: Option<&str>, resume: bool) -> Result<i32> {
    let config = ExperimentConfig::load(config_path)?;
    let output = output
        .map(str::to_owned)
        .or_else(|| config.output.clone())
        .ok_or_else(|| anyhow!("sweep needs --output or an `output` field in the config"))?;
    let manifest_path = format!("{output}.manifest");
    let grid = config.grid();

    let mut done: std::collections::HashSet<String> = std::collections::HashSet::new();
    if resume && std::path::Path::new(&manifest_path).exists() {
        let manifest_text = std::fs::read_to_string(&manifest_path)?;
        let mut last_offset = 0u64;
        for line in manifest_text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: ManifestEntry = serde_json::from_str(line)
                .with_context(|| format!("parsing manifest {manifest_path}"))?;
            last_offset = entry.offset;
            done.insert(entry.key);
        }
        // Drop any partial trailing row the interruption left behind.
        let file = std::fs::OpenOptions::new().write(true).open(&output)?;
        file.set_len(last_offset)?;
    } else {
        let header = SUMMARY_HEADER.trim_end_matches('\n');
        std::fs::write(&output, format!("{header},error\n"))?;
        std::fs::write(&manifest_path, "")?;
    }

    let mut failures = 0usize;
    for (index, &point) in grid.iter().enumerate() {
        let key = point_key(point);
        if done.contains(&key) {
            continue;
        }
        let seed = corrsense::rng::derive_seed(config.seed, &[index as u64]);
        let row = match run_point(&config, point, seed) {
            Ok(est) => {
                let mut row = summary_row(&config, point, &est);
                row.pop();
                format!("{row},\n")
            }
            Err(err) => {
                failures += 1;
                format!(
                    "risk-summary.v1,{},{},{},{},{},{},{},{},,,,,{}\n",
                    config.procedure.name(),
                    model_name(config.model),
                    config.class.name(),
                    point.n,
                    point.k,
                    point.rho,
                    point.m,
                    config.trials,
                    err.to_string().replace(',', ";"),
                )
            }
        };
        let mut file = std::fs::OpenOptions::new().append(true).open(&output)?;
        file.write_all(row.as_bytes())?;
        file.flush()?;
        let offset = std::fs::metadata(&output)?.len();
        let mut manifest = std::fs::OpenOptions::new()
            .append(true)
            .open(&manifest_path)?;
        let entry = ManifestEntry { key, offset };
        manifest.write_all(format!("{}\n", serde_json::to_string(&entry)?).as_bytes())?;
        manifest.flush()?;
    }
    Ok(if failures > 0 { 1 } else { 0 })
}

fn run_point(
    config: &ExperimentConfig,
    point: GridPoint,
    seed: u64,
) -> Result<corrsense::risk::RiskEstimate> {
    let procedure = config.build_procedure(point)?;
    let family = InstanceFamily {
        class: config.class.class(point.n, point.k),
        rho: point.rho,
        model: config.model,
    };
    let risk_config = risk_config_for(config, seed);
    Ok(corrsense::risk::estimate_risk(
        procedure.as_ref(),
        &family,
        &risk_config,
    )?)
}

pub fn optimal_p(k: u32, m: u32, model: &str, rhos: &[f64], output: Option<&str>) -> Result<i32> {
    let model_kind = parse_model(model)?;
    let mut out = String::from("schema,model,k,m,rho,p_star,objective,ceil_inv_rho\n");
    for &rho in rhos {
        let (p_star, objective) = optimal_truncation_width(rho, k, m, model_kind)?;
        let target = if rho > 0.0 {
            (1.0 / rho).ceil()
        } else {
            f64::INFINITY
        };
        out.push_str(&format!(
            "optimal-p.v1,{model},{k},{m},{rho},{p_star},{objective},{target}\n"
        ));
    }
    write_text(output, &out)?;
    Ok(0)
}

pub fn replay(trace_path: &str, budget: Option<u64>) -> Result<i32> {
    let text = std::fs::read_to_string(trace_path)
        .with_context(|| format!("reading trace {trace_path}"))?;
    let history = History::from_jsonl(&text)?;
    let mut cumulative = 0u64;
    for (i, round) in history.rounds().iter().enumerate() {
        cumulative += round.query.len() as u64;
        let mean = round.obs.iter().sum::<f64>() / round.obs.len() as f64;
        println!(
            "t={} |query|={} cumulative_cost={} obs_mean={:.4}",
            i + 1,
            round.query.len(),
            cumulative,
            mean
        );
    }
    println!(
        "rounds={} total_cost={}",
        history.len(),
        history.total_cost()
    );
    if let Some(budget) = budget {
        if history.total_cost() > budget {
            bail!(
                "trace violates the budget: cost {} exceeds {budget}",
                history.total_cost()
            );
        }
        println!("budget={budget} ok");
    }
    Ok(0)
}
