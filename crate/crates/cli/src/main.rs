//! Batch front end for the half-space walk library.
//!
//! Every subcommand reads a model file, runs one query or experiment, and
//! writes either `key=value` lines or a CSV table. Output is deterministic:
//! identical arguments (including the seed) produce byte-identical bytes.
//!
//! Exit codes: 0 on success, 1 when a solver reports non-convergence (the
//! residual diagnostics go to standard error), 2 for invalid models,
//! malformed arguments, or failed hypothesis checks.

use clap::{Parser, Subcommand, ValueEnum};
use halfwalk::geometry::{self, Direction, DualPoint};
use halfwalk::green::{self, BoxPolicy, ConvergenceRow, GreenKind};
use halfwalk::ladder::{mc_boundary_oracle, BoundaryTarget};
use halfwalk::model::{default_search_bound, validate};
use halfwalk::{deviations, harmonic, JumpDistribution, LatticeVector};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "halfwalk", version, about = "Lattice walks killed outside a half-space: geometry, harmonic functions, Green's functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural hypotheses of a model file and report them.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the dual boundary point a(q) for a direction q.
    Geometry {
        #[command(flatten)]
        common: Common,
        /// Direction as comma-separated reals, normalized internally.
        #[arg(long)]
        q: String,
    },
    /// Evaluate the positive harmonic function attached to a boundary point.
    Harmonic {
        #[command(flatten)]
        common: Common,
        /// Direction whose boundary point a(q) is used.
        #[arg(long, conflicts_with = "a")]
        q: Option<String>,
        /// Explicit boundary point as comma-separated reals.
        #[arg(long)]
        a: Option<String>,
        /// Evaluation points, semicolon-separated lattice vectors.
        #[arg(long)]
        z: String,
    },
    /// Solve the Green's function of one target on the default box.
    Green {
        #[command(flatten)]
        common: Common,
        /// Source point to report G(source, target) at.
        #[arg(long)]
        source: String,
        /// Target (column) point of the solve.
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value_t = KindArg::Killed)]
        kind: KindArg,
    },
    /// Martin-kernel convergence table along a target schedule.
    Ratio {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q: String,
        #[arg(long)]
        z: String,
        #[arg(long)]
        z0: String,
        /// Schedule: `diag:a..b:step`, `wall:a..b:step`, or `x,y;x,y;...`.
        #[arg(long)]
        targets: String,
    },
    /// Horizontal-shift invariance ratios along a target schedule.
    Shiftcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        z: String,
        /// Horizontal shift vector (last coordinate 0).
        #[arg(long)]
        w: String,
        /// Number of copies of w to shift by, e.g. the horizontal period.
        #[arg(long)]
        k_hat: i64,
        #[arg(long)]
        targets: String,
    },
    /// Free-walk kernel against the homogeneous limit e^{a(q)·z}.
    Neyspitzer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        q: String,
        #[arg(long)]
        z: String,
        #[arg(long)]
        targets: String,
    },
    /// Rate functional of a piecewise-linear path, or the escape cost of a
    /// direction.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Path as `t:x,y;t:x,y;...` with strictly increasing times from 0.
        #[arg(long, conflicts_with = "q")]
        path: Option<String>,
        /// Direction for the escape cost a(q)·q and its duality check.
        #[arg(long)]
        q: Option<String>,
    },
    /// Monte Carlo oracle for the vertical-marginal boundary functions.
    Mc {
        #[command(flatten)]
        common: Common,
        /// Starting height, at least 1.
        #[arg(long)]
        y0: i64,
        #[arg(long, value_enum)]
        target: McTarget,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        /// Seed is mandatory: estimates must be reproducible.
        #[arg(long)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct Common {
    /// Model file: `dim d` then `jump x.. y p` lines.
    #[arg(long)]
    model: PathBuf,
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Write output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Killed,
    Free,
}

impl From<KindArg> for GreenKind {
    fn from(k: KindArg) -> GreenKind {
        match k {
            KindArg::Killed => GreenKind::Killed,
            KindArg::Free => GreenKind::Free,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum McTarget {
    Survival,
    Overshoot,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<halfwalk::Error> for Failure {
    fn from(e: halfwalk::Error) -> Failure {
        Failure {
            code: if e.is_non_convergence() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("halfwalk: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// 17 significant digits, enough to round-trip an f64 exactly.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn nums(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn load_model(common: &Common) -> Result<JumpDistribution, Failure> {
    let text = std::fs::read_to_string(&common.model)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", common.model.display())))?;
    Ok(JumpDistribution::parse(&text)?)
}

fn emit(common: &Common, text: &str) -> Result<(), Failure> {
    match &common.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_reals(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("malformed {what} component `{t}`")))
        })
        .collect()
}

fn parse_lattice(s: &str, what: &str) -> Result<LatticeVector, Failure> {
    let coords = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| Failure::usage(format!("malformed {what} component `{t}`")))
        })
        .collect::<Result<Vec<i64>, Failure>>()?;
    if coords.is_empty() {
        return Err(Failure::usage(format!("{what} is empty")));
    }
    Ok(LatticeVector::new(coords))
}

fn parse_direction(s: &str) -> Result<Direction, Failure> {
    Ok(Direction::normalized(parse_reals(s, "direction")?)?)
}

/// `diag:a..b:step` for (n,..,n), `wall:a..b:step` for (n,0,..,0,1), or an
/// explicit semicolon-separated list of lattice points.
fn parse_targets(s: &str, dim: usize) -> Result<Vec<LatticeVector>, Failure> {
    let range = |body: &str| -> Result<Vec<i64>, Failure> {
        let err = || Failure::usage(format!("malformed schedule `{s}`, expected `a..b:step`"));
        let (span, step) = body.rsplit_once(':').ok_or_else(err)?;
        let (a, b) = span.split_once("..").ok_or_else(err)?;
        let a: i64 = a.trim().parse().map_err(|_| err())?;
        let b: i64 = b.trim().parse().map_err(|_| err())?;
        let step: i64 = step.trim().parse().map_err(|_| err())?;
        if step <= 0 || b < a {
            return Err(err());
        }
        Ok((a..=b).step_by(step as usize).collect())
    };
    if let Some(body) = s.strip_prefix("diag:") {
        Ok(range(body)?
            .into_iter()
            .map(|n| LatticeVector::new(vec![n; dim]))
            .collect())
    } else if let Some(body) = s.strip_prefix("wall:") {
        Ok(range(body)?
            .into_iter()
            .map(|n| {
                let mut coords = vec![0i64; dim];
                coords[0] = n;
                coords[dim - 1] = 1;
                LatticeVector::new(coords)
            })
            .collect())
    } else {
        s.split(';')
            .map(|p| parse_lattice(p, "target"))
            .collect::<Result<Vec<_>, _>>()
            .and_then(|v| {
                if v.is_empty() {
                    Err(Failure::usage("empty target list"))
                } else {
                    Ok(v)
                }
            })
    }
}

fn parse_path(s: &str) -> Result<deviations::PiecewiseLinearPath, Failure> {
    let breakpoints = s
        .split(';')
        .map(|seg| {
            let (t, pos) = seg
                .split_once(':')
                .ok_or_else(|| Failure::usage(format!("malformed breakpoint `{seg}`, expected `t:x,y`")))?;
            let time: f64 = t
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("malformed time `{t}`")))?;
            Ok((time, parse_reals(pos, "breakpoint")?))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(deviations::PiecewiseLinearPath::new(breakpoints)?)
}

fn csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n,abs_zn,kernel,limit,abs_err\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            num(r.abs_zn),
            num(r.kernel),
            num(r.limit),
            num(r.abs_err)
        )
        .expect("string writes cannot fail");
    }
    out
}

fn class_name(class: halfwalk::BoundaryClass) -> &'static str {
    match class {
        halfwalk::BoundaryClass::PositiveInterior => "positive_interior",
        halfwalk::BoundaryClass::Tangent => "tangent",
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { common } => {
            let model = load_model(&common)?;
            let report = validate(&model, default_search_bound(&model))?;
            let ok = report.irreducible && report.mean_nonzero && report.y_aperiodic;
            let mut text = String::new();
            writeln!(text, "irreducible={}", report.irreducible).unwrap();
            writeln!(text, "mean={}", nums(&report.mean)).unwrap();
            writeln!(text, "mean_nonzero={}", report.mean_nonzero).unwrap();
            writeln!(text, "y_aperiodic={}", report.y_aperiodic).unwrap();
            writeln!(text, "left_continuous={}", report.left_continuous).unwrap();
            writeln!(text, "period={}", report.period).unwrap();
            writeln!(text, "hypotheses={}", if ok { "satisfied" } else { "violated" }).unwrap();
            emit(&common, &text)?;
            if ok {
                Ok(())
            } else {
                Err(Failure::usage("model violates the standing hypotheses"))
            }
        }
        Command::Geometry { common, q } => {
            let model = load_model(&common)?;
            let q = parse_direction(&q)?;
            let a = geometry::a_of_q(&model, &q, common.tol)?;
            let grad = geometry::grad_phi(&model, &a);
            let class = geometry::classify(&model, &a, geometry::CLASS_TOL)?;
            let mut text = String::new();
            writeln!(text, "a={}", nums(a.coords())).unwrap();
            writeln!(text, "phi={}", num(geometry::phi(&model, &a))).unwrap();
            writeln!(text, "grad_phi={}", nums(grad.as_slice())).unwrap();
            writeln!(text, "kkt_residual={}", num(geometry::kkt_residual(&model, &a, &q))).unwrap();
            writeln!(text, "class={}", class_name(class)).unwrap();
            emit(&common, &text)
        }
        Command::Harmonic { common, q, a, z } => {
            let model = load_model(&common)?;
            let a = match (q, a) {
                (Some(q), None) => geometry::a_of_q(&model, &parse_direction(&q)?, common.tol.min(1e-10))?,
                (None, Some(a)) => DualPoint::new(parse_reals(&a, "boundary point")?),
                _ => return Err(Failure::usage("harmonic needs exactly one of --q or --a")),
            };
            let ev = harmonic::build(&model, &a, common.tol.min(1e-9))?;
            let mut text = String::new();
            writeln!(text, "a={}", nums(ev.a().coords())).unwrap();
            writeln!(text, "class={}", class_name(ev.class())).unwrap();
            writeln!(text, "table_height={}", ev.table().height()).unwrap();
            for point in z.split(';') {
                let point = parse_lattice(point, "evaluation point")?;
                writeln!(text, "h({})={}", point, num(ev.evaluate(&point)?)).unwrap();
            }
            emit(&common, &text)
        }
        Command::Green {
            common,
            source,
            target,
            kind,
        } => {
            let model = load_model(&common)?;
            let source = parse_lattice(&source, "source")?;
            let target = parse_lattice(&target, "target")?;
            let boundary = BoxPolicy::default().box_for(&target);
            let kind = GreenKind::from(kind);
            let field = match kind {
                GreenKind::Killed => green::green_killed(&model, &target, &boundary, common.tol)?,
                GreenKind::Free => green::green_free(&model, &target, &boundary, common.tol)?,
            };
            let mut text = String::new();
            writeln!(text, "g={}", num(field.value(&source))).unwrap();
            writeln!(text, "box_x={}", field.truncation_box().x_half_widths()[0]).unwrap();
            writeln!(text, "box_y={}", field.truncation_box().y_max()).unwrap();
            writeln!(text, "iterations={}", field.iterations()).unwrap();
            writeln!(text, "residual={}", num(field.residual())).unwrap();
            emit(&common, &text)
        }
        Command::Ratio {
            common,
            q,
            z,
            z0,
            targets,
        } => {
            let model = load_model(&common)?;
            let rows = green::ratio_limit_experiment(
                &model,
                &parse_direction(&q)?,
                &parse_targets(&targets, model.dim())?,
                &parse_lattice(&z, "z")?,
                &parse_lattice(&z0, "z0")?,
                &BoxPolicy::default(),
                common.tol,
            )?;
            emit(&common, &csv(&rows))
        }
        Command::Shiftcheck {
            common,
            z,
            w,
            k_hat,
            targets,
        } => {
            let model = load_model(&common)?;
            let rows = green::shift_ratio_check(
                &model,
                &parse_targets(&targets, model.dim())?,
                &parse_lattice(&z, "z")?,
                &parse_lattice(&w, "w")?,
                k_hat,
                &BoxPolicy::default(),
                common.tol,
            )?;
            emit(&common, &csv(&rows))
        }
        Command::Neyspitzer {
            common,
            q,
            z,
            targets,
        } => {
            let model = load_model(&common)?;
            let rows = green::ney_spitzer_experiment(
                &model,
                &parse_direction(&q)?,
                &parse_targets(&targets, model.dim())?,
                &parse_lattice(&z, "z")?,
                &BoxPolicy::default(),
                common.tol,
            )?;
            emit(&common, &csv(&rows))
        }
        Command::Rate { common, path, q } => {
            let model = load_model(&common)?;
            let mut text = String::new();
            match (path, q) {
                (Some(path), None) => {
                    let path = parse_path(&path)?;
                    writeln!(text, "rate_free={}", num(deviations::rate_free(&model, &path))).unwrap();
                    writeln!(text, "rate_killed={}", num(deviations::rate_killed(&model, &path)))
                        .unwrap();
                }
                (None, Some(q)) => {
                    let cost = deviations::optimal_cost(&model, &parse_direction(&q)?)?;
                    writeln!(text, "cost={}", num(cost.cost)).unwrap();
                    writeln!(text, "legendre_side={}", num(cost.legendre_side)).unwrap();
                    writeln!(text, "product_side={}", num(cost.product_side)).unwrap();
                }
                _ => return Err(Failure::usage("rate needs exactly one of --path or --q")),
            }
            emit(&common, &text)
        }
        Command::Mc {
            common,
            y0,
            target,
            paths,
            horizon,
            seed,
        } => {
            let model = load_model(&common)?;
            if y0 < 1 {
                return Err(Failure::usage("start height must be at least 1"));
            }
            let target = match target {
                McTarget::Survival => BoundaryTarget::Survival,
                McTarget::Overshoot => BoundaryTarget::FinalPosition,
            };
            let est = mc_boundary_oracle(&model.y_marginal(), y0, target, paths, horizon, seed);
            let mut text = String::new();
            writeln!(text, "estimate={}", num(est.estimate)).unwrap();
            writeln!(text, "std_error={}", num(est.std_error)).unwrap();
            writeln!(text, "censored_fraction={}", num(est.censored_fraction)).unwrap();
            writeln!(text, "n_paths={}", est.n_paths).unwrap();
            emit(&common, &text)
        }
    }
}
