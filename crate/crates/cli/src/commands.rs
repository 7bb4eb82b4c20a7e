use std::path::PathBuf;

use beaflow::calculus::{check_game_gradient, check_problem_gradient, CheckReport};
use beaflow::harness::{batch_order_study, order_check_game, order_check_single, parse_ladder, Band, SlopeReport};
use beaflow::optimizers::simultaneous_gd;
use beaflow::problems::{
    make_bilinear_game, make_dirac_gan, make_logistic, make_quadratic, make_quadratic_game, seeded_rng, BatchSchedule,
    DiracGan, DiracVariant, Game, GameVariant, Problem,
};
use beaflow::regularizers::{
    expected_shuffled_loss, gan_interaction_coeffs, modified_loss_sgd, CoeffMode, ExpectationMethod, RegularizerBreakdown,
    MAX_ENUMERATION,
};
use beaflow::table::{fmt_f64, CsvTable};
use beaflow::{Error, ParamVector};
use itertools::Itertools;
use serde::Serialize;

use crate::config::{Command, RunConfig};

/// Failure classes that map onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Library errors caused by bad configuration rather than numerics.
fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Domain { .. } | Error::TooManyPermutations { .. } | Error::MissingAnchor(_) => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Run(other),
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub enum Subject {
    Single(Box<dyn Problem>),
    Game(Box<dyn Game>),
}

impl Subject {
    fn dim(&self) -> usize {
        match self {
            Subject::Single(p) => p.dim(),
            Subject::Game(g) => g.dim_phi() + g.dim_theta(),
        }
    }
}

fn game_variant(v: Option<&str>) -> CliResult<GameVariant> {
    match v.unwrap_or("general") {
        "general" => Ok(GameVariant::General),
        "zero_sum" => Ok(GameVariant::ZeroSum),
        "common_payoff" => Ok(GameVariant::CommonPayoff),
        other => Err(usage(format!("config field problem.variant: unknown game variant {other:?}"))),
    }
}

fn dirac_variant(v: Option<&str>) -> CliResult<DiracVariant> {
    match v.unwrap_or("non_saturating") {
        "non_saturating" => Ok(DiracVariant::NonSaturating),
        "saturating" => Ok(DiracVariant::Saturating),
        other => Err(usage(format!("config field problem.variant: unknown Dirac-GAN variant {other:?}"))),
    }
}

pub fn build_subject(cfg: &RunConfig) -> CliResult<Subject> {
    let p = &cfg.problem;
    let variant = p.variant.as_deref();
    Ok(match p.name.as_str() {
        "quadratic" => Subject::Single(Box::new(make_quadratic(p.dim, p.num_examples, cfg.seed).map_err(classify)?)),
        "logistic" => Subject::Single(Box::new(make_logistic(p.dim, p.num_examples, cfg.seed).map_err(classify)?)),
        "quadratic_game" => Subject::Game(Box::new(
            make_quadratic_game(p.dim, p.dim_theta, cfg.seed, game_variant(variant)?).map_err(classify)?,
        )),
        "bilinear_game" => Subject::Game(Box::new(make_bilinear_game())),
        "dirac_gan" => Subject::Game(Box::new(make_dirac_gan(dirac_variant(variant)?))),
        other => return Err(usage(format!("config field problem.name: unknown problem {other:?}"))),
    })
}

pub fn build_schedule(cfg: &RunConfig, problem: &dyn Problem) -> CliResult<BatchSchedule> {
    let s = &cfg.schedule;
    if s.identical {
        return BatchSchedule::repeated(&problem.full_batch(), s.n).map_err(classify);
    }
    let size = s.batch_size.unwrap_or(problem.examples().len() / s.n);
    if size == 0 {
        return Err(usage(format!("config field schedule.n: {} batches need more than {} examples", s.n, problem.examples().len())));
    }
    let built = if s.shuffle {
        BatchSchedule::shuffled_partition(problem.examples(), size, s.n, cfg.seed)
    } else {
        BatchSchedule::partition(problem.examples(), size, s.n)
    };
    built.map_err(classify)
}

fn start_point(cfg: &RunConfig, dim: usize) -> CliResult<ParamVector> {
    match &cfg.start {
        Some(v) if v.len() != dim => Err(usage(format!("config field start: expected {dim} values, got {}", v.len()))),
        Some(v) => ParamVector::new(v.clone()).map_err(classify),
        None => Ok(ParamVector::random_uniform(dim, &mut seeded_rng(cfg.seed.wrapping_add(1)), -1.0, 1.0)),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(cfg: &RunConfig) -> CliResult<Self> {
        let dir = PathBuf::from(&cfg.out_dir);
        std::fs::create_dir_all(&dir)?;
        let out = Self { dir };
        out.json("run_config.json", cfg)?;
        Ok(out)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("reports serialize");
        std::fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }

    fn csv(&self, name: &str, table: &CsvTable) -> CliResult<()> {
        table.write_to(&self.dir.join(name))?;
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a RunConfig,
    passed: bool,
    #[serde(flatten)]
    body: T,
}

/// Runs the configured command; `Ok(true)` when every acceptance check passed.
pub fn run(cfg: &RunConfig) -> CliResult<bool> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    log::info!("running {}", cfg.command.name());
    match cfg.command {
        Command::OrderCheck => order_check(cfg),
        Command::Regularizers => regularizers(cfg),
        Command::GanCoeffs => gan_coeffs(cfg),
        Command::CheckGradients => check_gradients(cfg),
    }
}

#[derive(Serialize)]
struct OrderCheckBody {
    band: Band,
    report: SlopeReport,
}

fn order_check(cfg: &RunConfig) -> CliResult<bool> {
    let ladder = parse_ladder(&cfg.ladder).map_err(classify)?;
    let subject = build_subject(cfg)?;
    let start = start_point(cfg, subject.dim())?;
    let report = match &subject {
        Subject::Single(p) => {
            if cfg.flow.is_game() {
                return Err(usage(format!("config field flow: {} needs a game problem", cfg.flow)));
            }
            let schedule = build_schedule(cfg, p.as_ref())?;
            order_check_single(p.as_ref(), &start, &schedule, cfg.flow, &ladder, &cfg.anchor, &cfg.integrator, &cfg.derivatives)
        }
        Subject::Game(g) => {
            if !cfg.flow.is_game() {
                return Err(usage(format!("config field flow: {} is not a game flow", cfg.flow)));
            }
            let (phi, theta) = start.split_at(g.dim_phi());
            order_check_game(g.as_ref(), &phi, &theta, cfg.flow, &ladder, &cfg.anchor, &cfg.integrator, &cfg.derivatives)
        }
    }
    .map_err(classify)?;
    let band = cfg.band.unwrap_or_else(|| Band::expected_for(cfg.flow));
    let passed = band.contains(report.slope);
    let out = Output::new(cfg)?;
    out.csv("order_check.csv", &report.to_csv())?;
    println!(
        "{} {}: slope {:.4} (r^2 {:.6}) band [{}, {}] {}",
        cfg.problem.name,
        cfg.flow,
        report.slope,
        report.r_squared,
        band.lo,
        band.hi,
        if passed { "PASS" } else { "FAIL" }
    );
    out.json("order_check.json", &Report { config: cfg, passed, body: OrderCheckBody { band, report } })?;
    log::info!("wrote {}", out.path("order_check.json").display());
    Ok(passed)
}

#[derive(Serialize)]
struct PermutationRow {
    order: Vec<usize>,
    breakdown: RegularizerBreakdown,
}

#[derive(Serialize)]
struct RegularizerBody {
    permutations: Vec<PermutationRow>,
    closed_form: RegularizerBreakdown,
    brute_force: RegularizerBreakdown,
    order_study: Option<beaflow::harness::BatchOrderReport>,
}

const EXPECTATION_TOLERANCE: f64 = 1e-10;

fn breakdown_cells(b: &RegularizerBreakdown) -> [String; 4] {
    [fmt_f64(b.base_loss), fmt_f64(b.norm_term), fmt_f64(b.alignment_term), fmt_f64(b.total)]
}

fn regularizers(cfg: &RunConfig) -> CliResult<bool> {
    let n = cfg.schedule.n;
    if n > MAX_ENUMERATION {
        return Err(usage(format!("config field schedule.n: permutation enumeration is limited to n <= {MAX_ENUMERATION}, got {n}")));
    }
    let Subject::Single(problem) = build_subject(cfg)? else {
        return Err(usage("config field problem.name: regularizers need a single-objective problem"));
    };
    let problem = problem.as_ref();
    let schedule = build_schedule(cfg, problem)?;
    let theta = start_point(cfg, problem.dim())?;
    let anchor = match &cfg.anchor {
        beaflow::harness::AnchorPolicy::StartPoint => theta.clone(),
        beaflow::harness::AnchorPolicy::Explicit(v) if v.len() == theta.dim() => ParamVector::new(v.clone()).map_err(classify)?,
        beaflow::harness::AnchorPolicy::Explicit(v) => {
            return Err(usage(format!("config field anchor: expected {} values, got {}", theta.dim(), v.len())))
        }
    };
    let mut permutations = Vec::new();
    for order in (0..n).permutations(n) {
        let permuted = schedule.permuted(&order).map_err(classify)?;
        let breakdown = modified_loss_sgd(problem, &theta, &permuted, cfg.h, Some(&anchor), &cfg.derivatives).map_err(classify)?;
        permutations.push(PermutationRow { order, breakdown });
    }
    let expectation = |m| expected_shuffled_loss(problem, &theta, &schedule, cfg.h, Some(&anchor), m, &cfg.derivatives).map_err(classify);
    let closed_form = expectation(ExpectationMethod::ClosedForm)?;
    let brute_force = expectation(ExpectationMethod::BruteForce)?;
    let order_study = if (2..=beaflow::harness::MAX_ORDER_STUDY).contains(&n) {
        Some(batch_order_study(problem, &theta, &schedule, cfg.h, &cfg.derivatives).map_err(classify)?)
    } else {
        None
    };

    let out = Output::new(cfg)?;
    let mut table = CsvTable::new(["order", "base_loss", "norm_term", "alignment_term", "total"]);
    for row in &permutations {
        let mut cells = vec![row.order.iter().join("-")];
        cells.extend(breakdown_cells(&row.breakdown));
        table.push_row(cells);
    }
    out.csv("regularizers.csv", &table)?;

    let mut exp = CsvTable::new(["quantity", "closed_form", "brute_force", "abs_diff"]);
    let names = ["base_loss", "norm_term", "alignment_term", "total"];
    let cf = [closed_form.base_loss, closed_form.norm_term, closed_form.alignment_term, closed_form.total];
    let bf = [brute_force.base_loss, brute_force.norm_term, brute_force.alignment_term, brute_force.total];
    for i in 0..4 {
        exp.push_row(vec![names[i].into(), fmt_f64(cf[i]), fmt_f64(bf[i]), fmt_f64((cf[i] - bf[i]).abs())]);
    }
    out.csv("expectation.csv", &exp)?;
    if let Some(study) = &order_study {
        out.csv("order_study.csv", &study.to_csv())?;
    }

    let diff = (closed_form.total - brute_force.total).abs();
    let passed = diff <= EXPECTATION_TOLERANCE * closed_form.total.abs().max(1.0);
    println!(
        "{} n={n}: closed form {:.12e}, brute force {:.12e}, |diff| {:.3e} {}",
        cfg.problem.name,
        closed_form.total,
        brute_force.total,
        diff,
        if passed { "PASS" } else { "FAIL" }
    );
    out.json(
        "regularizers.json",
        &Report { config: cfg, passed, body: RegularizerBody { permutations, closed_form, brute_force, order_study } },
    )?;
    Ok(passed)
}

fn grid(values: &[f64], k: usize) -> Vec<f64> {
    if values.is_empty() {
        (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect()
    } else {
        values.to_vec()
    }
}

#[derive(Serialize)]
struct GanBody {
    d_current: Vec<f64>,
    d_prev: Vec<f64>,
    non_saturating: beaflow::regularizers::CoeffMatrix,
    saturating: beaflow::regularizers::CoeffMatrix,
}

fn gan_coeffs(cfg: &RunConfig) -> CliResult<bool> {
    let d_current = grid(&cfg.gan.d_current, cfg.gan.grid);
    let d_prev = grid(&cfg.gan.d_prev, cfg.gan.grid);
    if d_current.is_empty() || d_prev.is_empty() {
        return Err(usage("config field gan: probability grid is empty"));
    }
    let non_saturating = gan_interaction_coeffs(&d_current, &d_prev, CoeffMode::NonSaturating).map_err(classify)?;
    let saturating = gan_interaction_coeffs(&d_current, &d_prev, CoeffMode::Saturating).map_err(classify)?;
    let trajectory = if cfg.gan.steps > 0 { Some(dirac_summary(cfg)?) } else { None };

    let out = Output::new(cfg)?;
    out.csv("coeffs_non_saturating.csv", &non_saturating.to_csv())?;
    out.csv("coeffs_saturating.csv", &saturating.to_csv())?;
    if let Some(t) = &trajectory {
        out.csv("gan_trajectory.csv", t)?;
    }
    println!("gan coefficients: {}x{} grid written to {}", d_current.len(), d_prev.len(), out.dir.display());
    out.json("gan_coeffs.json", &Report { config: cfg, passed: true, body: GanBody { d_current, d_prev, non_saturating, saturating } })?;
    Ok(true)
}

/// Side-by-side Dirac-GAN runs of both generator losses with the coefficient
/// of each step, using `D(θ_k; φ_k)` and `D(θ_{k−1}; φ_{k−1})`.
fn dirac_summary(cfg: &RunConfig) -> CliResult<CsvTable> {
    let [phi0, theta0] = cfg.gan.start;
    let run = |variant| {
        let game = make_dirac_gan(variant);
        simultaneous_gd(&game, &ParamVector::scalar(phi0), &ParamVector::scalar(theta0), cfg.gan.h, cfg.gan.steps).map_err(classify)
    };
    let ns = run(DiracVariant::NonSaturating)?;
    let sat = run(DiracVariant::Saturating)?;
    let d = |pair: &(ParamVector, ParamVector)| DiracGan::fake_probability(pair.0[0], pair.1[0]);
    let mut t = CsvTable::new([
        "step", "ns_phi", "ns_theta", "ns_d", "ns_coeff", "sat_phi", "sat_theta", "sat_d", "sat_coeff",
    ]);
    for k in 1..=cfg.gan.steps {
        let mut row = vec![k.to_string()];
        for (traj, mode) in [(&ns, CoeffMode::NonSaturating), (&sat, CoeffMode::Saturating)] {
            let (cur, prev) = (d(&traj.iterates[k]), d(&traj.iterates[k - 1]));
            let c = gan_interaction_coeffs(&[cur], &[prev], mode).map_err(classify)?;
            let (p, th) = &traj.iterates[k];
            row.extend([fmt_f64(p[0]), fmt_f64(th[0]), fmt_f64(cur), fmt_f64(c.entries[0][0])]);
        }
        t.push_row(row);
    }
    Ok(t)
}

#[derive(Serialize)]
struct GradientCheckRow {
    name: String,
    report: CheckReport,
}

fn check_gradients(cfg: &RunConfig) -> CliResult<bool> {
    let p = &cfg.problem;
    let mut rng = seeded_rng(cfg.seed.wrapping_add(2));
    let mut rows = Vec::new();
    let quadratic = make_quadratic(p.dim, p.num_examples, cfg.seed).map_err(classify)?;
    let logistic = make_logistic(p.dim, p.num_examples, cfg.seed).map_err(classify)?;
    for (name, problem) in [("quadratic", &quadratic as &dyn Problem), ("logistic", &logistic)] {
        let points: Vec<_> = (0..5).map(|_| ParamVector::random_uniform(problem.dim(), &mut rng, -1.5, 1.5)).collect();
        let report = check_problem_gradient(problem, &points, &problem.full_batch(), &cfg.derivatives).map_err(classify)?;
        rows.push(GradientCheckRow { name: name.into(), report });
    }
    let mut games: Vec<(String, Box<dyn Game>)> = vec![("bilinear_game".into(), Box::new(make_bilinear_game()))];
    for v in [GameVariant::General, GameVariant::ZeroSum, GameVariant::CommonPayoff] {
        let g = make_quadratic_game(p.dim, p.dim_theta, cfg.seed, v).map_err(classify)?;
        games.push((format!("quadratic_game/{}", g.descriptor().variant.clone().unwrap_or_default()), Box::new(g)));
    }
    for v in [DiracVariant::NonSaturating, DiracVariant::Saturating] {
        games.push((format!("dirac_gan/{}", v.name()), Box::new(make_dirac_gan(v))));
    }
    for (name, game) in &games {
        let points: Vec<_> = (0..5)
            .map(|_| {
                (
                    ParamVector::random_uniform(game.dim_phi(), &mut rng, -1.5, 1.5),
                    ParamVector::random_uniform(game.dim_theta(), &mut rng, -1.5, 1.5),
                )
            })
            .collect();
        let report = check_game_gradient(game.as_ref(), &points, &cfg.derivatives).map_err(classify)?;
        rows.push(GradientCheckRow { name: name.clone(), report });
    }

    let passed = rows.iter().all(|r| r.report.passed);
    let out = Output::new(cfg)?;
    let mut t = CsvTable::new(["name", "max_abs", "max_rel", "passed", "points_tested"]);
    for r in &rows {
        t.push_row(vec![
            r.name.clone(),
            fmt_f64(r.report.max_abs),
            fmt_f64(r.report.max_rel),
            r.report.passed.to_string(),
            r.report.points_tested.to_string(),
        ]);
        println!("{:<28} max_abs {:.3e} {}", r.name, r.report.max_abs, if r.report.passed { "PASS" } else { "FAIL" });
    }
    out.csv("check_gradients.csv", &t)?;
    out.json("check_gradients.json", &Report { config: cfg, passed, body: serde_json::json!({ "results": rows }) })?;
    Ok(passed)
}
