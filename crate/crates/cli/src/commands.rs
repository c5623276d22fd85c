use std::fs;
use std::path::Path;

use meanfield_core::drift::FieldKind;
use meanfield_core::exact::{enumerate_states, expected_occupancy, generator, transient};
use meanfield_core::meandrift::poisson_mean_intensity;
use meanfield_core::model::{parse_f64_list, validate, SATURATED_CHANNEL};
use meanfield_core::odesolve::default_step;
use meanfield_core::sim::{binomial_marginal_fit, poisson_marginal_fit, uniform_grid};
use meanfield_core::{
    compare, ensemble, intensity, limit_drift, load_model, mean_drift, solve, CompareOptions, CountVector, LimitMode,
    ModelSpec, OccupancyMeasure, SimColumn, SimConfig, SimMode, StateId, Trajectory, Variant,
};

use crate::table::{format_number, format_optional, parse_trajectory, Csv};
use crate::{
    ChaosArgs, Command, Common, CompareArgs, DriftArgs, ExactArgs, Failure, MeandriftArgs, OdeArgs, SimArgs,
    SimulateArgs, ValidateArgs,
};

type Outcome = Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Validate(args) => run_validate(args),
        Command::Drift(args) => run_drift(args),
        Command::Meandrift(args) => run_meandrift(args),
        Command::Ode(args) => run_ode(args),
        Command::Exact(args) => run_exact(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Compare(args) => run_compare(args),
        Command::Chaos(args) => run_chaos(args),
    }
}

fn load(common: &Common) -> Result<ModelSpec, Failure> {
    let text = match &common.model {
        Some(path) => fs::read_to_string(path).map_err(|e| Failure {
            kind: meanfield_core::ErrorKind::Model,
            tag: "model-file",
            detail: format!("{}: {e}", path.display()),
        })?,
        None => SATURATED_CHANNEL.to_string(),
    };
    Ok(load_model(&text)?)
}

fn emit(common: &Common, csv: Csv) -> Outcome {
    let text = csv.finish();
    match &common.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure {
            kind: meanfield_core::ErrorKind::Usage,
            tag: "io",
            detail: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn positive_population(n: u64) -> Result<u64, Failure> {
    if n == 0 {
        return Err(Failure::usage("--N must be at least 1"));
    }
    Ok(n)
}

fn initial(model: &ModelSpec, init: &Option<String>) -> Result<OccupancyMeasure, Failure> {
    match init {
        Some(text) => Ok(model.parse_occupancy(text)?),
        None => {
            let mut v = vec![0.0; model.dim()];
            v[0] = 1.0;
            Ok(OccupancyMeasure::new(v)?)
        }
    }
}

fn state_arg(model: &ModelSpec, text: &str) -> Result<StateId, Failure> {
    if let Some(id) = model.state_id(text) {
        return Ok(id);
    }
    match text.parse::<usize>() {
        Ok(i) if (1..=model.dim()).contains(&i) => Ok(i - 1),
        _ => Err(Failure::usage(format!("unknown state `{text}`"))),
    }
}

fn population_list(text: &str) -> Result<Vec<u64>, Failure> {
    let ns: Result<Vec<u64>, _> = text.split(',').map(|s| s.trim().parse::<u64>()).collect();
    match ns {
        Ok(ns) if !ns.is_empty() && ns.iter().all(|&n| n >= 1) => Ok(ns),
        _ => Err(Failure::usage(format!(
            "--Ns must list positive integers, got `{text}`"
        ))),
    }
}

fn time_list(text: &Option<String>, t_end: f64, points: usize) -> Result<Vec<f64>, Failure> {
    match text {
        Some(text) => {
            let mut times = parse_f64_list(text)?;
            if times.iter().any(|&x| !(0.0..=t_end).contains(&x)) {
                return Err(Failure::usage("--times must lie inside [0, t]"));
            }
            times.sort_by(f64::total_cmp);
            times.dedup();
            Ok(times)
        }
        None => Ok(uniform_grid(t_end, points)),
    }
}

fn end_time(t: f64) -> Result<f64, Failure> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Failure::usage(format!("--t must be positive, got {t}")));
    }
    Ok(t)
}

fn limit_mode(model: &ModelSpec, text: &Option<String>) -> Result<LimitMode, Failure> {
    match text.as_deref() {
        None if model.has_limit_rates() => Ok(LimitMode::Declared),
        None | Some("numeric") => Ok(LimitMode::Numeric),
        Some("declared") => Ok(LimitMode::Declared),
        Some(other) => Err(Failure::usage(format!(
            "--limit must be declared or numeric, got `{other}`"
        ))),
    }
}

fn sim_mode(text: &str) -> Result<SimMode, Failure> {
    Ok(text.parse::<SimMode>()?)
}

fn occupancy_header(model: &ModelSpec, prefix: &str) -> Vec<String> {
    model.state_names().iter().map(|s| format!("{prefix}{s}")).collect()
}

fn run_validate(args: ValidateArgs) -> Outcome {
    let model = load(&args.common)?;
    let report = validate(&model, positive_population(args.n)?, args.samples, args.seed)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut csv = Csv::new(&[
        "N",
        "pairs",
        "non_negative",
        "lipschitz_estimate",
        "bound_estimate",
        "max_rate",
    ]);
    csv.row(&[
        report.n.to_string(),
        report.pairs.to_string(),
        report.non_negative.to_string(),
        format_number(report.lipschitz_estimate),
        format_number(report.bound_estimate),
        format_number(report.max_rate),
    ]);
    emit(&args.common, csv)
}

fn run_drift(args: DriftArgs) -> Outcome {
    let model = load(&args.common)?;
    let m = model.parse_occupancy(&args.m)?;
    let m = m.as_slice();
    let csv = match args.n {
        Some(n) => {
            let n = positive_population(n)?;
            if args.full {
                let mut csv = Csv::new(&["from", "to", "intensity"]);
                for t in model.transitions() {
                    let v = intensity(&model, n, m, t.from, t.to)?;
                    let names = model.state_names();
                    csv.row(&[names[t.from].clone(), names[t.to].clone(), format_number(v)]);
                }
                csv
            } else {
                let mut csv = Csv::new(&occupancy_header(&model, "F_"));
                csv.numbers(&meanfield_core::drift(&model, n, m)?);
                csv
            }
        }
        None => {
            let mode = limit_mode(&model, &args.limit)?;
            if args.full {
                return Err(Failure::usage("--full needs --N"));
            }
            let mut csv = Csv::new(&occupancy_header(&model, "F_"));
            csv.numbers(&limit_drift(&model, m, mode)?);
            csv
        }
    };
    emit(&args.common, csv)
}

fn run_meandrift(args: MeandriftArgs) -> Outcome {
    let model = load(&args.common)?;
    let n = positive_population(args.n)?;
    let m = model.parse_occupancy(&args.m)?;
    let m = m.as_slice();
    let csv = if args.full {
        let mut csv = Csv::new(&["from", "to", "mean_intensity"]);
        for t in model.transitions() {
            let v = poisson_mean_intensity(&model, n, m, t.from, t.to, args.tol)?;
            let names = model.state_names();
            csv.row(&[names[t.from].clone(), names[t.to].clone(), format_number(v)]);
        }
        csv
    } else {
        let mut csv = Csv::new(&occupancy_header(&model, "F_"));
        csv.numbers(&mean_drift(&model, n, m, args.tol)?);
        csv
    };
    emit(&args.common, csv)
}

fn trajectory_csv(model: &ModelSpec, traj: &Trajectory) -> Csv {
    let mut header = vec!["t".to_string()];
    header.extend(occupancy_header(model, "phi_"));
    let mut csv = Csv::new(&header);
    for (t, p) in traj.times.iter().zip(&traj.points) {
        let mut row = vec![*t];
        row.extend(p);
        csv.numbers(&row);
    }
    csv
}

fn run_ode(args: OdeArgs) -> Outcome {
    let model = load(&args.common)?;
    let t_end = end_time(args.t)?;
    let phi0 = initial(&model, &args.init)?;
    let variant = match args.variant.as_str() {
        "drift" => Variant::Drift,
        "meandrift" => Variant::MeanDrift { tolerance: args.tol },
        "limit" => Variant::Limit(limit_mode(&model, &args.limit)?),
        other => {
            return Err(Failure::usage(format!(
                "--variant must be drift, meandrift or limit, got `{other}`"
            )))
        }
    };
    let n = match (variant, args.n) {
        (Variant::Limit(_), _) => 0,
        (_, Some(n)) => positive_population(n)?,
        (_, None) => return Err(Failure::usage("--N is required for the drift and meandrift variants")),
    };
    let times = if args.full {
        let h = args.step.unwrap_or_else(|| default_step(t_end));
        let steps = (t_end / h).ceil() as usize;
        (1..steps).map(|k| k as f64 * h).collect()
    } else {
        time_list(&args.times, t_end, args.points)?
    };
    let mut traj = solve(&model, variant, n, &phi0, t_end, &times, args.step)?;
    if !args.full {
        // the solver always reports 0 and t; keep only the requested times
        let (kept_times, kept_points) = traj
            .times
            .iter()
            .zip(&traj.points)
            .filter(|(t, _)| times.contains(t))
            .map(|(t, p)| (*t, p.clone()))
            .unzip();
        traj.times = kept_times;
        traj.points = kept_points;
    }
    emit(&args.common, trajectory_csv(&model, &traj))
}

fn run_exact(args: ExactArgs) -> Outcome {
    let model = load(&args.common)?;
    let n = positive_population(args.n)?;
    let t_end = end_time(args.t)?;
    let phi0 = initial(&model, &args.init)?;
    let times = match &args.times {
        Some(_) => time_list(&args.times, t_end, 0)?,
        None => vec![t_end],
    };
    let space = enumerate_states(model.dim(), n, args.cap)?;
    let gen = generator(&model, &space)?;
    let start = CountVector::from_occupancy(&phi0, n)?;
    let mut dist = space.point_mass(start.counts())?;

    let mut header = vec!["t".to_string()];
    header.extend(occupancy_header(&model, "phi_"));
    let mut csv = Csv::new(&header);
    for &t in &times {
        if t > dist.time {
            dist = transient(&gen, &dist, t - dist.time, args.tol)?;
        }
        let mut row = vec![t];
        row.extend(expected_occupancy(&space, &dist).as_slice());
        csv.numbers(&row);
    }
    if args.full {
        if dist.time < t_end {
            dist = transient(&gen, &dist, t_end - dist.time, args.tol)?;
        }
        let mut header = occupancy_header(&model, "n_");
        header.push("probability".into());
        csv.section(&header);
        for (state, p) in space.states().iter().zip(&dist.probs) {
            let mut row: Vec<String> = state.iter().map(|c| c.to_string()).collect();
            row.push(format_number(*p));
            csv.row(&row);
        }
    }
    emit(&args.common, csv)
}

fn sim_config(n: u64, t_end: f64, sim: &SimArgs) -> Result<SimConfig, Failure> {
    if sim.reps == 0 {
        return Err(Failure::usage("--reps must be at least 1"));
    }
    Ok(SimConfig::new(n, sim_mode(&sim.mode)?, t_end, sim.reps, sim.seed))
}

fn read_reference(model: &ModelSpec, path: &Path) -> Result<Trajectory, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let (times, points) =
        parse_trajectory(&text, model.dim()).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(Trajectory {
        times,
        points,
        kind: FieldKind::Custom,
        n: None,
        step: 0.0,
    })
}

fn run_simulate(args: SimulateArgs) -> Outcome {
    let model = load(&args.common)?;
    let n = positive_population(args.n)?;
    let t_end = end_time(args.t)?;
    let phi0 = initial(&model, &args.init)?;
    let init = CountVector::from_occupancy(&phi0, n)?;
    let mut config = sim_config(n, t_end, &args.sim)?;
    config.grid = time_list(&args.times, t_end, args.points)?;
    for h in &args.hist {
        let (t, s) = h
            .split_once(',')
            .ok_or_else(|| Failure::usage(format!("--hist expects `t,state`, got `{h}`")))?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("--hist time `{t}` is not a number")))?;
        config.histograms.push((t, state_arg(&model, s.trim())?));
    }
    let reference = match &args.reference {
        Some(path) => Some(read_reference(&model, path)?),
        None => None,
    };
    let stats = ensemble(&model, &config, &init, reference.as_ref())?;
    eprintln!("replications: {} completed, {} failed", stats.completed, stats.failed);
    if let Some(mse) = stats.mse_sup {
        eprintln!("mse_sup: {}", format_number(mse));
    }

    let mut header = vec!["t".to_string()];
    header.extend(occupancy_header(&model, "mean_phi_"));
    header.extend(occupancy_header(&model, "stderr_phi_"));
    let mut csv = Csv::new(&header);
    for ((t, mean), se) in stats.grid.iter().zip(&stats.mean).zip(&stats.stderr) {
        let mut row = vec![*t];
        row.extend(mean);
        row.extend(se);
        csv.numbers(&row);
    }
    if !stats.histograms.is_empty() {
        csv.section(&["t", "state", "k", "count"]);
        for h in &stats.histograms {
            for (k, &c) in h.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
                csv.row(&[
                    format_number(h.time),
                    model.state_names()[h.state].clone(),
                    k.to_string(),
                    c.to_string(),
                ]);
            }
        }
    }
    emit(&args.common, csv)
}

fn run_compare(args: CompareArgs) -> Outcome {
    let model = load(&args.common)?;
    let ns = population_list(&args.ns)?;
    let t = end_time(args.t)?;
    let phi0 = initial(&model, &args.init)?;
    let state = state_arg(&model, &args.state)?;
    let sim = match args.reps {
        Some(0) => return Err(Failure::usage("--reps must be at least 1")),
        Some(reps) => Some(SimColumn {
            reps,
            seed: args.seed,
            mode: sim_mode(&args.mode)?,
        }),
        None => None,
    };
    let options = CompareOptions {
        state,
        meandrift_tolerance: args.tol,
        step: args.step,
        state_cap: args.cap,
        sim,
        ..CompareOptions::default()
    };
    let rows = compare(&model, &ns, t, &phi0, &options);

    let p = format!("phi{}", state + 1);
    let mut header = vec![
        "N".to_string(),
        format!("{p}_drift"),
        format!("{p}_meandrift"),
        format!("{p}_exact"),
    ];
    if options.sim.is_some() {
        header.push(format!("{p}_sim_mean"));
        header.push(format!("{p}_sim_stderr"));
    }
    let mut csv = Csv::new(&header);
    for row in &rows {
        for note in &row.notes {
            eprintln!("note: N = {}: {note}", row.n);
        }
        let mut fields = vec![
            row.n.to_string(),
            format_optional(row.drift),
            format_optional(row.meandrift),
            format_optional(row.exact),
        ];
        if options.sim.is_some() {
            fields.push(format_optional(row.sim_mean));
            fields.push(format_optional(row.sim_stderr));
        }
        csv.row(&fields);
    }
    emit(&args.common, csv)
}

fn run_chaos(args: ChaosArgs) -> Outcome {
    let model = load(&args.common)?;
    let ns = population_list(&args.ns)?;
    let t = end_time(args.t)?;
    let phi0 = initial(&model, &args.init)?;
    let state = state_arg(&model, &args.state)?;
    let variant = match args.variant.as_str() {
        "drift" => Variant::Drift,
        "meandrift" => Variant::MeanDrift { tolerance: args.tol },
        other => {
            return Err(Failure::usage(format!(
                "--variant must be drift or meandrift, got `{other}`"
            )))
        }
    };
    let mut csv = Csv::new(&["N", "phi", "lambda", "mean_count", "tv_poisson", "tv_binomial"]);
    for n in ns {
        let phi = solve(&model, variant, n, &phi0, t, &[], None)?.last()[state];
        let mut config = sim_config(n, t, &args.sim)?;
        config.grid = vec![t];
        config.histograms = vec![(t, state)];
        let init = CountVector::from_occupancy(&phi0, n)?;
        let stats = ensemble(&model, &config, &init, None)?;
        let counts = &stats.histograms[0].counts;
        let lambda = n as f64 * phi;
        csv.numbers(&[
            n as f64,
            phi,
            lambda,
            n as f64 * stats.mean[0][state],
            poisson_marginal_fit(counts, lambda),
            binomial_marginal_fit(counts, n, phi.clamp(0.0, 1.0)),
        ]);
    }
    emit(&args.common, csv)
}
