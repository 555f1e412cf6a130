//! `supercurve`: energies, residuals, bubbling analysis and Gromov distances from the shell.

mod config;
mod output;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use supercurve::bubbling::{analyze, geometric_ladder, BubbleOptions, Family};
use supercurve::energy::{energy_curve, energy_section, hbar, Region};
use supercurve::fields::{make_instance, residual_global, CatalogKind, Connection, Diff, Grid, SuperSection};
use supercurve::io::{bubble_report_json, instance_json, parse_instance, parse_stable, stable_json};
use supercurve::moduli::{
    auto_epsilon, bubble_tree_limit, bubble_tree_member, collapse_witness, ghost_tree_limit, ghost_tree_member,
    gromov_convergence_check, rho_distance, validate_stable, RhoOptions, StableSupercurve, Witness, TERM_NAMES,
};
use supercurve::{Error, LineBundle, Moebius, SpherePoint, C};

use config::RunConfig;
use output::{float, to_json, Table};
use verify::{Suite, SuiteOptions};

#[derive(Parser)]
#[command(name = "supercurve", version, about = "Holomorphic supercurves on the Riemann sphere")]
struct Cli {
    /// TOML run configuration; `SUPERCURVE_<KEY>` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Energies of φ and ψ over a region.
    Energy {
        #[arg(long)]
        input: PathBuf,
        /// `sphere`, `disc:RE,IM,R`, `annulus:RE,IM,R0,R1` or a JSON region.
        #[arg(long, default_value = "sphere")]
        region: String,
    },
    /// Sup of the holomorphicity residuals over both charts.
    Residual {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 21)]
        grid: usize,
        /// Half-width of the square grid in each chart.
        #[arg(long, default_value_t = 1.0)]
        half: f64,
        /// Central-difference step; exact derivatives when omitted.
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, value_enum, default_value_t = ConnArg::LeviCivita)]
        connection: ConnArg,
    },
    /// `(φ ∘ m, ψ ∘ m)` for `m` given as 8 reals `re a, im a, …, im d`.
    Pullback {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        moebius: Vec<f64>,
    },
    /// Concentration points, rescalings, bubbles and limits of a family.
    Bubble(BubbleArgs),
    /// The distance ρ_ε between two stable supercurves.
    Rho {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// A positive number or `auto`.
        #[arg(long, default_value = "auto")]
        eps: String,
        #[arg(long, default_value_t = 10_000)]
        grid: usize,
    },
    /// Checks the Gromov convergence axioms along a sequence.
    Convergence(ConvergenceArgs),
    /// Randomized verification suites.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Per-instance results.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Isoperimetric constant (default 1/(4π)).
        #[arg(long)]
        constant: Option<f64>,
    },
    /// Prints a catalog instance or stable supercurve.
    Catalog {
        #[arg(value_enum)]
        kind: CatalogArg,
        #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
        d: i32,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Sequence index for the tree catalogs; the limit when omitted.
        #[arg(long)]
        nu: Option<f64>,
    },
}

#[derive(Args)]
struct BubbleArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Bubble)]
    family: FamilyArg,
    /// Base instance of the constant and pullback families.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    d: i32,
    #[arg(long)]
    nu0: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    /// Mass profile and rescaling ladders.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[arg(long, conflicts_with = "catalog")]
    limit: Option<PathBuf>,
    #[arg(long = "member", requires = "limit")]
    members: Vec<PathBuf>,
    #[arg(long, value_enum)]
    catalog: Option<TreeArg>,
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    nus: Vec<f64>,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    d: i32,
    /// Use the known collapse maps of the bubble tree instead of searching.
    #[arg(long)]
    known_witnesses: bool,
    #[arg(long, default_value = "0.05")]
    eps: String,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    grid: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnArg {
    Trivial,
    LeviCivita,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Bubble,
    Constant,
    Pullback,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TreeArg {
    Bubble,
    Ghost,
}

#[derive(Clone, Copy, ValueEnum)]
enum CatalogArg {
    Identity,
    Power,
    Bubble,
    RandomRational,
    BubbleTree,
    GhostTree,
}

enum Failure {
    /// Bad flags, files or records.
    Usage(String),
    /// A computation did not converge or a check failed.
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Quadrature { .. } | Error::NonFinite(_) | Error::NoBlowUp | Error::NotPositiveDefinite => {
                Failure::Numeric(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<bool, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_instance(path: &Path) -> Result<SuperSection, Failure> {
    parse_instance(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_stable(path: &Path) -> Result<StableSupercurve, Failure> {
    let x = parse_stable(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let violations = validate_stable(&x);
    if !violations.is_empty() {
        let list = serde_json::to_string(&violations).unwrap();
        return Err(Failure::Usage(format!("{}: not a stable supercurve: {list}", path.display())));
    }
    Ok(x)
}

fn emit(out: &Option<PathBuf>, v: &Value) -> Result<(), Failure> {
    let text = to_json(v);
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_region(s: &str) -> Result<Region, Failure> {
    let bad = || Failure::Usage(format!("region: cannot parse `{s}`"));
    let region = if s.trim_start().starts_with('{') {
        serde_json::from_str(s).map_err(|e| Failure::Usage(format!("region: {e}")))?
    } else if s == "sphere" {
        Region::Sphere
    } else {
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let v: Vec<f64> = rest.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
        match (kind, v.as_slice()) {
            ("disc", &[re, im, r]) => Region::disc(SpherePoint::finite(C::new(re, im)), r),
            ("annulus", &[re, im, inner, outer]) => Region::Annulus { center: SpherePoint::finite(C::new(re, im)), inner, outer },
            _ => return Err(bad()),
        }
    };
    region.validate()?;
    Ok(region)
}

fn energy(cfg: &RunConfig, out: &Option<PathBuf>, input: &Path, region: &str) -> Outcome {
    let section = load_instance(input)?;
    let region = parse_region(region)?;
    let e_phi = energy_curve(section.curve(), &region, cfg.rel_tol)?;
    let e_psi = energy_section(&section, &region, cfg.rel_tol)?;
    emit(
        out,
        &json!({
            "region": region,
            "phi": e_phi,
            "psi": e_psi,
            "total": { "value": e_phi.value + e_psi.value, "error": e_phi.error + e_psi.error },
            "experimental": section.bundle().is_experimental(),
        }),
    )?;
    Ok(true)
}

fn residual(out: &Option<PathBuf>, input: &Path, grid: usize, half: f64, step: Option<f64>, conn: ConnArg) -> Outcome {
    let section = load_instance(input)?;
    if grid < 2 || !(half > 0.0) || step.is_some_and(|h| !(h > 0.0)) {
        return Err(Failure::Usage("grid needs at least 2 points and positive half-width and step".into()));
    }
    let conn = match conn {
        ConnArg::Trivial => Connection::Trivial,
        ConnArg::LeviCivita => Connection::LeviCivita,
    };
    let diff = step.map_or(Diff::Exact, Diff::Central);
    let r = residual_global(section.curve(), &section, conn, &Grid::square(half, grid), diff)?;
    emit(out, &json!({ "phi": r.phi, "psi": r.psi, "grid": grid, "half": half, "step": step, "experimental": section.bundle().is_experimental() }))?;
    Ok(true)
}

fn pullback(out: &Option<PathBuf>, input: &Path, reals: &[f64]) -> Outcome {
    if reals.len() != 8 {
        return Err(Failure::Usage(format!("moebius: expected 8 reals, got {}", reals.len())));
    }
    let section = load_instance(input)?;
    let m = Moebius::from_reals(reals)?;
    emit(out, &instance_json(&section.pullback(&m)))?;
    Ok(true)
}

fn bubble(cfg: &RunConfig, out: &Option<PathBuf>, a: &BubbleArgs) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.nu0 = a.nu0.unwrap_or(cfg.nu0);
    cfg.count = a.count.unwrap_or(cfg.count);
    cfg.grid = a.grid.unwrap_or(cfg.grid);
    cfg.validate().map_err(Failure::Usage)?;
    let ladder = geometric_ladder(cfg.nu0, cfg.count);
    let base = || -> Result<SuperSection, Failure> {
        match &a.input {
            Some(p) => load_instance(p),
            None => Ok(make_instance(CatalogKind::RandomRational { degree: 2, seed: cfg.seed }, a.d)?.1),
        }
    };
    let family = match a.family {
        FamilyArg::Bubble => Family::bubble(a.d, ladder)?,
        FamilyArg::Constant => {
            let s = base()?;
            Family::constant(s.curve().clone(), s, ladder)?
        }
        FamilyArg::Pullback => {
            let s = base()?;
            Family::pullback(s.curve().clone(), s, ladder)?
        }
    };
    let opts = BubbleOptions { grid: cfg.grid, eps0: cfg.eps0, eps_count: cfg.eps_count, rel_tol: cfg.rel_tol, ..Default::default() };
    let report = analyze(&family, hbar(cfg.rel_tol)?, &opts)?;
    if let Some(path) = &a.csv {
        let mut t = Table::new(vec!["point", "chart", "center_re", "center_im", "eps", "nu", "e_phi", "e_psi", "delta"]);
        for (k, p) in report.points.iter().enumerate() {
            let prof = &p.profile;
            for (i, eps) in prof.epsilons.iter().enumerate() {
                for (j, nu) in prof.nus.iter().enumerate() {
                    let delta = p
                        .rescaling
                        .as_ref()
                        .and_then(|r| r.nus.iter().position(|x| x == nu).map(|q| r.deltas[q]))
                        .unwrap_or(f64::NAN);
                    t.push(vec![
                        k.to_string(),
                        p.center.chart.index().to_string(),
                        float(p.center.z.re),
                        float(p.center.z.im),
                        float(*eps),
                        float(*nu),
                        float(prof.raw_phi[i][j]),
                        float(prof.raw_psi[i][j]),
                        float(delta),
                    ]);
                }
            }
        }
        t.write(path).map_err(Failure::Usage)?;
    }
    emit(out, &bubble_report_json(&report))?;
    Ok(true)
}

fn parse_eps(s: &str, x: &StableSupercurve, rel_tol: f64) -> Result<f64, Failure> {
    if s == "auto" {
        return Ok(auto_epsilon(x, rel_tol)?);
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 && e.is_finite() => Ok(e),
        _ => Err(Failure::Usage(format!("eps: expected a positive number or `auto`, got `{s}`"))),
    }
}

fn witness_json(w: &Witness) -> Value {
    json!({
        "f": w.f.iter().map(|v| v + 1).collect::<Vec<_>>(),
        "maps": w.maps.iter().map(|m| m.to_reals().to_vec()).collect::<Vec<_>>(),
    })
}

fn rho_options(cfg: &RunConfig, grid: usize) -> Result<RhoOptions, Failure> {
    if grid < 10 {
        return Err(Failure::Usage("grid must have at least 10 points".into()));
    }
    Ok(RhoOptions { grid, search_tol: cfg.search_tol, ..Default::default() })
}

fn rho(cfg: &RunConfig, out: &Option<PathBuf>, x: &Path, y: &Path, eps: &str, grid: usize) -> Outcome {
    let (x, y) = (load_stable(x)?, load_stable(y)?);
    let eps = parse_eps(eps, &x, cfg.rel_tol)?;
    let opts = rho_options(cfg, grid)?;
    let v = match rho_distance(&x, &y, eps, &opts)? {
        None => json!({ "eps": eps, "total": "infinity" }),
        Some(b) => {
            let terms: serde_json::Map<String, Value> = TERM_NAMES.iter().zip(b.terms).map(|(n, t)| (n.to_string(), json!(t))).collect();
            json!({ "eps": eps, "total": b.total, "terms": terms, "witness": witness_json(&b.witness) })
        }
    };
    emit(out, &v)?;
    Ok(true)
}

fn convergence(cfg: &RunConfig, out: &Option<PathBuf>, a: &ConvergenceArgs) -> Outcome {
    let bundle = LineBundle::new(a.d)?;
    let (limit, sequence, known) = match (a.catalog, &a.limit) {
        (Some(t), _) => {
            if a.nus.is_empty() || a.nus.iter().any(|nu| !(*nu > 1.0)) {
                return Err(Failure::Usage("nus must be numbers above 1".into()));
            }
            let (limit, seq): (StableSupercurve, Vec<StableSupercurve>) = match t {
                TreeArg::Bubble => (bubble_tree_limit(bundle), a.nus.iter().map(|&nu| bubble_tree_member(bundle, nu)).collect::<Result<_, _>>()?),
                TreeArg::Ghost => (ghost_tree_limit(bundle), a.nus.iter().map(|&nu| ghost_tree_member(bundle, nu)).collect()),
            };
            let known = if a.known_witnesses && t == TreeArg::Bubble {
                Some(a.nus.iter().map(|&nu| collapse_witness(nu)).collect::<Result<Vec<_>, _>>()?)
            } else {
                None
            };
            (limit, seq, known)
        }
        (None, Some(l)) => {
            if a.members.is_empty() {
                return Err(Failure::Usage("at least one --member is required".into()));
            }
            let seq = a.members.iter().map(|p| load_stable(p)).collect::<Result<Vec<_>, _>>()?;
            (load_stable(l)?, seq, None)
        }
        (None, None) => return Err(Failure::Usage("give --catalog or --limit with --member files".into())),
    };
    if !(a.tol > 0.0) {
        return Err(Failure::Usage("tol must be positive".into()));
    }
    let eps = parse_eps(&a.eps, &limit, cfg.rel_tol)?;
    let opts = rho_options(cfg, a.grid)?;
    let rep = gromov_convergence_check(&sequence, &limit, known.as_deref(), eps, a.tol, &opts)?;
    let v = json!({
        "eps": rep.eps,
        "tol": rep.tol,
        "pass": rep.pass,
        "axioms": rep.axioms,
        "witnesses": rep.witnesses.iter().map(|w| w.as_ref().map(witness_json)).collect::<Vec<_>>(),
    });
    emit(out, &v)?;
    Ok(rep.pass)
}

fn verify(cfg: &RunConfig, out: &Option<PathBuf>, suite: Suite, count: usize, csv: &Option<PathBuf>, constant: Option<f64>) -> Outcome {
    if count == 0 {
        return Err(Failure::Usage("count must be positive".into()));
    }
    let constant = constant.unwrap_or_else(verify::default_constant);
    if !(constant >= 0.0) {
        return Err(Failure::Usage("constant must be nonnegative".into()));
    }
    let o = SuiteOptions { count, seed: cfg.seed, rel_tol: cfg.rel_tol, grid: cfg.grid, constant };
    let (summary, table) = verify::run(suite, &o);
    if let Some(p) = csv {
        table.write(p).map_err(Failure::Usage)?;
    }
    emit(out, &serde_json::to_value(&summary).unwrap())?;
    Ok(summary.ok())
}

#[allow(clippy::too_many_arguments)]
fn catalog(cfg: &RunConfig, out: &Option<PathBuf>, kind: CatalogArg, d: i32, k: usize, eps: f64, degree: usize, nu: Option<f64>) -> Outcome {
    let bundle = LineBundle::new(d)?;
    let v = match kind {
        CatalogArg::BubbleTree => stable_json(&match nu {
            Some(nu) => bubble_tree_member(bundle, nu)?,
            None => bubble_tree_limit(bundle),
        }),
        CatalogArg::GhostTree => stable_json(&match nu {
            Some(nu) => ghost_tree_member(bundle, nu),
            None => ghost_tree_limit(bundle),
        }),
        _ => {
            let kind = match kind {
                CatalogArg::Identity => CatalogKind::Identity,
                CatalogArg::Power => CatalogKind::Power { k },
                CatalogArg::Bubble => CatalogKind::Bubble { eps },
                _ => CatalogKind::RandomRational { degree, seed: cfg.seed },
            };
            instance_json(&make_instance(kind, d)?.1)
        }
    };
    emit(out, &v)?;
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    let env: Vec<(String, String)> = std::env::vars().collect();
    let mut cfg = RunConfig::load(cli.config.as_deref(), &env).map_err(Failure::Usage)?;
    cfg.rel_tol = cli.rel_tol.unwrap_or(cfg.rel_tol);
    cfg.seed = cli.seed.unwrap_or(cfg.seed);
    cfg.validate().map_err(Failure::Usage)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let out = &cli.output;
    match &cli.cmd {
        Cmd::Energy { input, region } => energy(&cfg, out, input, region),
        Cmd::Residual { input, grid, half, step, connection } => residual(out, input, *grid, *half, *step, *connection),
        Cmd::Pullback { input, moebius } => pullback(out, input, moebius),
        Cmd::Bubble(a) => bubble(&cfg, out, a),
        Cmd::Rho { x, y, eps, grid } => rho(&cfg, out, x, y, eps, *grid),
        Cmd::Convergence(a) => convergence(&cfg, out, a),
        Cmd::Verify { suite, count, csv, constant } => verify(&cfg, out, *suite, *count, csv, *constant),
        Cmd::Catalog { kind, d, k, eps, degree, nu } => catalog(&cfg, out, *kind, *d, *k, *eps, *degree, *nu),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
