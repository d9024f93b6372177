use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use splitlearn::analysis::{
    advantage_csv, advantage_table, convergence_csv, convergence_study, fit_error_expansion,
    parse_convergence_csv, ConvergenceRecord, CostCurve, StudyConfig,
};
use splitlearn::data::{generate_batch, load_dataset, save_dataset, Dataset, DistributionParams};
use splitlearn::reference::ReferencePropagator;
use splitlearn::spectral::{subflow_count, Quartic, SpectralProblem};
use splitlearn::splitcore::{
    builtin, order_residuals, path_segments, project_to_fourth_order, PathPolyline,
    SchemeDescriptor,
};
use splitlearn::train::{
    hessian_condition_number, run_pipeline, scheme_loss, step_count, trace_csv, CandidateSpec,
    TrainConfig,
};

use crate::manifest::RunManifest;
use crate::{
    AdvantageArgs, Command, ConvergeArgs, EvalArgs, FitArgs, GenDataArgs, HessianArgs,
    ProblemArgs, ProjectArgs, ReplayArgs, Statistic, TrainArgs, VisualizeArgs,
};

/// Bad flags or flag combinations; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Library argument errors found while checking flags become usage errors.
fn check<T>(r: splitlearn::Result<T>) -> Result<T> {
    use splitlearn::Error as E;
    r.map_err(|e| match e {
        E::InvalidArgument(_)
        | E::GammaLength { .. }
        | E::NotSymmetric
        | E::NotConsistent
        | E::DenseCap { .. }
        | E::Mismatch(_) => usage(e.to_string()),
        other => other.into(),
    })
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Converge(a) => converge(a),
        Command::Fit(a) => fit(a),
        Command::Advantage(a) => advantage(a),
        Command::Project(a) => project(a),
        Command::Visualize(a) => visualize(a),
        Command::Hessian(a) => hessian(a),
        Command::Replay(a) => replay(a),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn prepare_out(out: &Path) -> Result<()> {
    if out.is_file() {
        return Err(usage(format!("--out {} is a file, expected a directory", out.display())));
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_output(manifest: &mut RunManifest, path: PathBuf, contents: &str) -> Result<()> {
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    manifest.outputs.push(path);
    Ok(())
}

fn quartic(coeffs: &[f64]) -> Result<Quartic> {
    match coeffs {
        [c4, c2, c1] => Ok(Quartic::new(*c4, *c2, *c1)),
        _ => Err(usage(format!(
            "--potential expects three coefficients c4,c2,c1, got {}",
            coeffs.len()
        ))),
    }
}

fn build_problem(p: &ProblemArgs) -> Result<SpectralProblem> {
    if !p.t.is_finite() {
        return Err(usage("--T must be finite"));
    }
    check(SpectralProblem::with_quartic(p.m, p.l, quartic(&p.potential)?))
}

fn dataset_problem(ds: &Dataset) -> Result<SpectralProblem> {
    check(SpectralProblem::with_quartic(ds.meta.m, ds.meta.half_width, ds.meta.potential))
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// A built-in name or the path of a scheme file.
fn resolve_scheme(spec: &str) -> Result<SchemeDescriptor> {
    if let Some(d) = builtin(spec) {
        return Ok(d);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!(
            "unknown scheme `{spec}`: neither a built-in name nor an existing file"
        )));
    }
    SchemeDescriptor::load(path).with_context(|| format!("loading scheme {spec}"))
}

fn resolve_schemes(specs: &mut [String], manifest_inputs: &mut Vec<PathBuf>) -> Result<Vec<SchemeDescriptor>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs.iter_mut() {
        if builtin(spec).is_none() {
            let abs = absolute(Path::new(spec))?;
            *spec = abs.display().to_string();
            manifest_inputs.push(abs);
        }
        out.push(resolve_scheme(spec)?);
    }
    Ok(out)
}

fn gen_data(mut a: GenDataArgs) -> Result<()> {
    let problem = build_problem(&a.problem)?;
    let params = DistributionParams {
        x_cent: a.xcent,
        x_std_dev: a.xstd,
        sigma: a.sigma,
    };
    check(params.validate(a.problem.l))?;
    a.out = absolute(&a.out)?;
    prepare_out(&a.out)?;
    info!("building reference propagator (M = {})", a.problem.m);
    let reference = ReferencePropagator::build(&problem)?;
    let ds = generate_batch(&problem, &reference, params, a.count, a.seed, a.problem.t)?;
    save_dataset(&ds, &a.out)?;
    let mut manifest = RunManifest::new("gen-data", &a)?;
    manifest.outputs.push(a.out.join("manifest.txt"));
    manifest.outputs.push(a.out.join("data.bin"));
    manifest.write(&a.out)?;
    info!("wrote {} pairs to {}", ds.len(), a.out.display());
    Ok(())
}

fn parse_candidates(spec: &str, default: &CandidateSpec) -> Result<CandidateSpec> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| usage(format!("bad number `{s}` in --candidates {spec}")))
    };
    let bad = || usage(format!("--candidates expects grid[:lo:hi:step] or random:count[:lo:hi], got `{spec}`"));
    match parts.as_slice() {
        ["grid"] => match default {
            CandidateSpec::Grid { .. } => Ok(default.clone()),
            _ => Ok(CandidateSpec::Grid { lo: -0.5, hi: 0.4, step: 0.1 }),
        },
        ["grid", lo, hi, step] => Ok(CandidateSpec::Grid {
            lo: num(lo)?,
            hi: num(hi)?,
            step: num(step)?,
        }),
        ["random", count] | ["random", count, _, _] => {
            let count = count.parse().map_err(|_| bad())?;
            let (lo, hi) = if parts.len() == 4 {
                (num(parts[2])?, num(parts[3])?)
            } else {
                (-0.5, 0.5)
            };
            Ok(CandidateSpec::Random { count, lo, hi })
        }
        _ => Err(bad()),
    }
}

fn candidates_text(spec: &CandidateSpec) -> String {
    match spec {
        CandidateSpec::Grid { lo, hi, step } => format!("grid:{lo}:{hi}:{step}"),
        CandidateSpec::Random { count, lo, hi } => format!("random:{count}:{lo}:{hi}"),
    }
}

/// Fill every unset training option with the defaults for `K`.
fn resolve_train(a: &mut TrainArgs) -> Result<TrainConfig> {
    let base = if a.k <= 5 {
        TrainConfig::k5_defaults()
    } else {
        TrainConfig::k8_defaults()
    };
    let candidates = match &a.candidates {
        Some(s) => parse_candidates(s, &base.candidates)?,
        None => base.candidates.clone(),
    };
    let config = TrainConfig {
        stages: a.k,
        t: a.problem.t,
        h: a.h,
        candidates,
        keep_best: a.keep.or(base.keep_best),
        epsilon: a.epsilon,
        delta: a.delta.unwrap_or(base.delta),
        iterations: a.iters.unwrap_or(base.iterations),
        learning_rate: a.lr.unwrap_or(base.learning_rate),
        decay_rate: a.decay.unwrap_or(base.decay_rate),
        batch_size: a.batch.unwrap_or(base.batch_size),
        seed: a.seed,
        val_every: a.val_every.unwrap_or(base.val_every),
    };
    check(config.validate())?;
    a.candidates = Some(candidates_text(&config.candidates));
    a.keep = config.keep_best;
    a.delta = Some(config.delta);
    a.iters = Some(config.iterations);
    a.lr = Some(config.learning_rate);
    a.decay = Some(config.decay_rate);
    a.batch = Some(config.batch_size);
    a.val_every = Some(config.val_every);
    Ok(config)
}

fn train(mut a: TrainArgs) -> Result<()> {
    let config = resolve_train(&mut a)?;
    let problem = build_problem(&a.problem)?;
    a.train = absolute(&a.train)?;
    a.valid = absolute(&a.valid)?;
    a.out = absolute(&a.out)?;
    let train = load(&a.train)?;
    let valid = load(&a.valid)?;
    check(train.check_compatible(&problem, config.t)).context("training set")?;
    check(valid.check_compatible(&problem, config.t)).context("validation set")?;
    if valid.is_empty() {
        return Err(usage("validation set is empty"));
    }
    if config.iterations > 0 && train.is_empty() {
        return Err(usage("training set is empty"));
    }
    prepare_out(&a.out)?;

    let result = run_pipeline(&problem, &config, &train, &valid)?;
    info!(
        "{} candidates, {} kept after screening (epsilon {:.4e})",
        result.candidate_count,
        result.screened.len(),
        result.epsilon
    );
    let mut manifest = RunManifest::new("train", &a)?;
    manifest.inputs = vec![a.train.clone(), a.valid.clone()];
    manifest.results.push(("candidates".into(), result.candidate_count.to_string()));
    manifest.results.push(("screened".into(), result.screened.len().to_string()));
    manifest.results.push(("epsilon".into(), format!("{:e}", result.epsilon)));
    write_output(&mut manifest, a.out.join("leaderboard.csv"), &result.leaderboard.to_csv())?;
    write_output(&mut manifest, a.out.join("trace.csv"), &trace_csv(&result.trace))?;
    if let Some(best) = result.leaderboard.head().filter(|e| !e.diverged) {
        let reduced = splitlearn::splitcore::ReducedCoeffs::new(config.stages, best.gamma.clone())?;
        let d = SchemeDescriptor::from_reduced(format!("learned{}", config.stages), reduced.clone());
        write_output(&mut manifest, a.out.join("best.scheme"), &d.to_text())?;
        info!("best gamma {:?}, validation loss {:.6e}", best.gamma, best.validation_loss);
        if a.hessian {
            let rep = hessian_condition_number(&problem, &reduced, &valid.pairs, config.t, config.h)?;
            manifest.results.push(("hessian_condition".into(), format!("{:e}", rep.condition_number)));
            write_output(&mut manifest, a.out.join("hessian.csv"), &hessian_csv(&rep.eigenvalues, rep.condition_number))?;
        }
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn eval(mut a: EvalArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let schemes = resolve_schemes(&mut a.scheme, &mut inputs)?;
    a.data = absolute(&a.data)?;
    a.out = absolute(&a.out)?;
    let data = load(&a.data)?;
    if data.is_empty() {
        return Err(usage("dataset is empty"));
    }
    let problem = dataset_problem(&data)?;
    let n = check(step_count(data.meta.t, a.h))?;
    prepare_out(&a.out)?;
    let mut csv = String::from("scheme,K,N,h,subflowEvals,loss,rms\n");
    for s in &schemes {
        let loss = scheme_loss(&problem, &s.coeffs, &data.pairs, a.h, n)?;
        info!("{}: loss {loss:.6e}, rms {:.6e}", s.name, loss.sqrt());
        let _ = writeln!(
            csv,
            "{},{},{n},{:.16e},{},{loss:.16e},{:.16e}",
            s.name,
            s.stages(),
            a.h,
            subflow_count(s.stages(), n, s.symmetric),
            loss.sqrt()
        );
    }
    let mut manifest = RunManifest::new("eval", &a)?;
    manifest.inputs = inputs;
    manifest.inputs.push(a.data.clone());
    write_output(&mut manifest, a.out.join("eval.csv"), &csv)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn converge(mut a: ConvergeArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let schemes = resolve_schemes(&mut a.scheme, &mut inputs)?;
    if a.ns.is_empty() || a.ns.contains(&0) || a.ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--ns must be positive and strictly ascending"));
    }
    a.out = absolute(&a.out)?;
    let (problem, pairs, t) = match (&a.data, &a.config) {
        (Some(path), None) => {
            let abs = absolute(path)?;
            a.data = Some(abs.clone());
            inputs.push(abs.clone());
            let ds = load(&abs)?;
            if ds.is_empty() {
                return Err(usage("dataset is empty"));
            }
            (dataset_problem(&ds)?, ds.pairs, ds.meta.t)
        }
        (None, Some(name)) => {
            let cfg = check(StudyConfig::named(name))?;
            if a.count == 0 {
                return Err(usage("--count must be positive"));
            }
            let problem = check(SpectralProblem::with_quartic(a.m, a.l, cfg.potential))?;
            check(cfg.params.validate(a.l))?;
            let reference = ReferencePropagator::build(&problem)?;
            let ds = generate_batch(&problem, &reference, cfg.params, a.count, a.seed, cfg.t)?;
            (problem, ds.pairs, cfg.t)
        }
        _ => return Err(usage("give exactly one of --data and --config")),
    };
    prepare_out(&a.out)?;
    let mut records = Vec::new();
    for s in &schemes {
        let r = convergence_study(&problem, s, &pairs, &a.ns, t)?;
        for rec in &r {
            info!("{} N={} median {:.4e}", rec.scheme, rec.n, rec.median);
        }
        records.extend(r);
    }
    let mut manifest = RunManifest::new("converge", &a)?;
    manifest.inputs = inputs;
    write_output(&mut manifest, a.out.join("convergence.csv"), &convergence_csv(&records))?;
    manifest.write(&a.out)?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<ConvergenceRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_convergence_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn group_by_scheme(records: Vec<ConvergenceRecord>) -> BTreeMap<String, Vec<ConvergenceRecord>> {
    let mut out: BTreeMap<String, Vec<ConvergenceRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.scheme.clone()).or_default().push(r);
    }
    out
}

fn fit(mut a: FitArgs) -> Result<()> {
    a.input = absolute(&a.input)?;
    a.out = absolute(&a.out)?;
    let groups = group_by_scheme(read_records(&a.input)?);
    for s in &a.scheme {
        if !groups.contains_key(s) {
            return Err(usage(format!("scheme `{s}` not found in {}", a.input.display())));
        }
    }
    prepare_out(&a.out)?;
    let mut csv = String::from("scheme,C2,C4,C6,objective,condition,flatDirections\n");
    for (name, recs) in &groups {
        if !a.scheme.is_empty() && !a.scheme.contains(name) {
            continue;
        }
        let pts: Vec<(f64, f64)> = recs
            .iter()
            .map(|r| (r.h, if a.stat == Statistic::Mean { r.mean } else { r.median }))
            .collect();
        let f = fit_error_expansion(&pts).with_context(|| format!("fitting {name}"))?;
        info!("{name}: C2 {:.4e} C4 {:.4e} C6 {:.4e}", f.c2, f.c4, f.c6);
        let _ = writeln!(
            csv,
            "{name},{:.10e},{:.10e},{:.10e},{:.6e},{:.6e},{}",
            f.c2, f.c4, f.c6, f.objective, f.condition, f.flat_directions
        );
    }
    let mut manifest = RunManifest::new("fit", &a)?;
    manifest.inputs.push(a.input.clone());
    write_output(&mut manifest, a.out.join("fit.csv"), &csv)?;
    manifest.write(&a.out)?;
    Ok(())
}

fn advantage(mut a: AdvantageArgs) -> Result<()> {
    if !(a.budget > 0.0 && a.budget.is_finite()) {
        return Err(usage("--budget must be positive"));
    }
    let mut records = Vec::new();
    for p in a.input.iter_mut() {
        *p = absolute(p)?;
        records.extend(read_records(p)?);
    }
    a.out = absolute(&a.out)?;
    let curves = group_by_scheme(records)
        .values()
        .map(|r| CostCurve::from_records(r))
        .collect::<splitlearn::Result<Vec<_>>>()?;
    let rows = check(advantage_table(&curves, &a.baseline, a.budget))?;
    prepare_out(&a.out)?;
    let mut manifest = RunManifest::new("advantage", &a)?;
    manifest.inputs = a.input.clone();
    write_output(&mut manifest, a.out.join("advantage.csv"), &advantage_csv(&rows, a.budget))?;
    manifest.write(&a.out)?;
    Ok(())
}

fn project(mut a: ProjectArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let scheme = resolve_schemes(std::slice::from_mut(&mut a.scheme), &mut inputs)?.remove(0);
    let reduced = scheme
        .reduced
        .clone()
        .ok_or_else(|| usage(format!("scheme `{}` is not symmetric", scheme.name)))?;
    let projected = check(project_to_fourth_order(&reduced))?;
    a.out = absolute(&a.out)?;
    prepare_out(&a.out)?;
    let d = SchemeDescriptor::from_reduced(format!("{}proj", scheme.name), projected);
    let res = order_residuals(&d.coeffs);
    println!(
        "gamma = {}",
        d.reduced.as_ref().map(|r| format!("{:?}", r.gamma())).unwrap_or_default()
    );
    println!("w112 = {:e}, w122 = {:e}", res.w112, res.w122);
    let mut manifest = RunManifest::new("project", &a)?;
    manifest.inputs = inputs;
    manifest.results.push(("w112".into(), format!("{:e}", res.w112)));
    manifest.results.push(("w122".into(), format!("{:e}", res.w122)));
    write_output(&mut manifest, a.out.join("projected.scheme"), &d.to_text())?;
    manifest.write(&a.out)?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn visualize(mut a: VisualizeArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let schemes = resolve_schemes(&mut a.scheme, &mut inputs)?;
    a.out = absolute(&a.out)?;
    prepare_out(&a.out)?;
    let paths: Vec<(String, PathPolyline)> = schemes
        .iter()
        .map(|s| (s.name.clone(), path_segments(&s.coeffs)))
        .collect();
    let mut manifest = RunManifest::new("visualize", &a)?;
    manifest.inputs = inputs;
    let named: Vec<(&str, &PathPolyline)> = paths.iter().map(|(n, p)| (n.as_str(), p)).collect();
    write_output(&mut manifest, a.out.join("paths.svg"), &PathPolyline::to_svg(&named))?;
    for (i, (name, p)) in paths.iter().enumerate() {
        let file = a.out.join(format!("path-{}-{}.csv", i + 1, file_stem(name)));
        write_output(&mut manifest, file, &p.to_csv())?;
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn hessian_csv(eigenvalues: &[f64], condition: f64) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (i, e) in eigenvalues.iter().enumerate() {
        let _ = writeln!(out, "{},{e:.10e}", i + 1);
    }
    let _ = writeln!(out, "condition,{condition:.10e}");
    out
}

fn hessian(mut a: HessianArgs) -> Result<()> {
    let mut inputs = Vec::new();
    let scheme = resolve_schemes(std::slice::from_mut(&mut a.scheme), &mut inputs)?.remove(0);
    let reduced = scheme
        .reduced
        .clone()
        .ok_or_else(|| usage(format!("scheme `{}` is not symmetric", scheme.name)))?;
    if reduced.gamma().is_empty() {
        return Err(usage("scheme has no free parameters"));
    }
    a.data = absolute(&a.data)?;
    a.out = absolute(&a.out)?;
    let data = load(&a.data)?;
    if data.is_empty() {
        return Err(usage("dataset is empty"));
    }
    let problem = dataset_problem(&data)?;
    check(step_count(data.meta.t, a.h))?;
    prepare_out(&a.out)?;
    let rep = hessian_condition_number(&problem, &reduced, &data.pairs, data.meta.t, a.h)?;
    info!("condition number {:.4e}", rep.condition_number);
    let mut manifest = RunManifest::new("hessian", &a)?;
    manifest.inputs = inputs;
    manifest.inputs.push(a.data.clone());
    manifest.results.push(("condition".into(), format!("{:e}", rep.condition_number)));
    write_output(&mut manifest, a.out.join("hessian.csv"), &hessian_csv(&rep.eigenvalues, rep.condition_number))?;
    manifest.write(&a.out)?;
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let mut m = manifest.clone();
    if let Some(out) = &a.out {
        let out = absolute(out)?;
        m.config.insert("out".into(), serde_json::Value::String(out.display().to_string()));
    }
    info!("replaying `{}` recorded by version {}", m.command, m.version);
    let command = match m.command.as_str() {
        "gen-data" => Command::GenData(m.config_as()?),
        "train" => Command::Train(m.config_as()?),
        "eval" => Command::Eval(m.config_as()?),
        "converge" => Command::Converge(m.config_as()?),
        "fit" => Command::Fit(m.config_as()?),
        "advantage" => Command::Advantage(m.config_as()?),
        "project" => Command::Project(m.config_as()?),
        "visualize" => Command::Visualize(m.config_as()?),
        "hessian" => Command::Hessian(m.config_as()?),
        other => bail!("cannot replay command `{other}`"),
    };
    dispatch(command)
}
