//! `cts`: reproducible experiments on concatenated tensor networks.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use cts::circuit::{encode, Circuit};
use cts::fit::{fit_grid, fit_mps, matched_chi, FitConfig, GridShape, ParameterCount};
use cts::grid::{Direction, Truncation};
use cts::monte_carlo::{mc_contract, transfer_sum, McConfig, TorusNetwork};
use cts::mpo_compress::{compress_doubling, compress_product, CompressConfig};
use cts::mps::{apply_mpo, truncate_svd, Mps};
use cts::oracle::{self, StateVector};
use cts::tree::{ground_state_sweep, Hamiltonian, TreeConfig, TreeNetwork};
use cts::trotter::{evolution_grid, full_step_mpo, half_step_mpo, Bonds, IsingModel, TrotterPlan};
use cts::{CtsError, C64};

#[derive(Parser)]
#[command(name = "cts", version, about = "Concatenated tensor network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Report every wall-clock field as 0.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Contract the Ising Trotter grid approximately and compare with the exact norm.
    Evolve(EvolveArgs),
    /// Fit grids and matched MPSs to the evolved Ising state.
    Fit(FitArgs),
    /// Encode a circuit as a grid and contract it.
    Circuit(CircuitArgs),
    /// Compress products of Ising Trotter rows.
    Compress(CompressArgs),
    /// Metropolis contraction of a torus network.
    Mc(McArgs),
    /// Ground state of the Ising chain on a (loop-augmented) tree.
    Tree(TreeArgs),
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 3.5)]
    t: f64,
    /// Trotter steps; each contributes two grid rows.
    #[arg(long, default_value_t = 12)]
    steps: usize,
    /// Comma-separated list of cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = [12])]
    chi: Vec<usize>,
    #[arg(long)]
    correct: bool,
    #[arg(long, default_value = "left_to_right")]
    direction: String,
    /// Initial product state: plus or zero.
    #[arg(long, default_value = "plus")]
    initial: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 3.5)]
    t: f64,
    /// Grid row counts to scan (the last row is physical).
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3])]
    rows: Vec<usize>,
    /// Horizontal bond dimensions to scan.
    #[arg(long, value_delimiter = ',', default_values_t = [2])]
    dh: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    dv: usize,
    /// Number of seeds per shape, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 100)]
    sweeps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CircuitArgs {
    /// Circuit JSON; a seeded random circuit when absent.
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    wires: usize,
    #[arg(long, default_value_t = 8)]
    depth: usize,
    /// Compare every amplitude with the state-vector simulator.
    #[arg(long)]
    oracle: bool,
    /// Also write the encoded grid as JSON here.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 4)]
    chi: usize,
    /// Square a full Trotter step this many times; without it the two half
    /// steps are compressed into one row.
    #[arg(long)]
    doubling: Option<usize>,
    /// Refuse compressions below this fidelity.
    #[arg(long)]
    min_fidelity: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, default_value_t = 2)]
    rows: usize,
    #[arg(long, default_value_t = 2)]
    cols: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// All tensor entries 1; otherwise uniform in [lo, hi].
    #[arg(long)]
    uniform: bool,
    #[arg(long, default_value_t = 0.1)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    split: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TreeArgs {
    /// Chain length of the transverse-field Ising model.
    #[arg(long)]
    ising: usize,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Largest bond; defaults to the exact requirement 2^(n/2).
    #[arg(long)]
    bond: Option<usize>,
    /// Replace inner nodes by triangles with these internal dimensions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    loops: Option<Vec<usize>>,
    #[arg(long, default_value_t = 50)]
    sweeps: usize,
    #[command(flatten)]
    common: Common,
}

/// Column-ordered result table.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Table { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(cell).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    fn json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|r| Value::Object(self.header.iter().map(|h| h.to_string()).zip(r.iter().cloned()).collect::<Map<_, _>>()))
                .collect(),
        )
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or_else(|| Value::String(x.to_string()))
}

enum Failure {
    Validation(String),
    Numeric(String),
}

impl From<CtsError> for Failure {
    fn from(e: CtsError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

type Outcome = Result<Output, Failure>;

struct Output {
    table: Table,
    /// Extra JSON fields reported alongside the table.
    extra: Option<Value>,
    /// Line echoed to standard error.
    summary: Option<String>,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn wall_ms(common: &Common, start: Instant) -> f64 {
    if common.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64() * 1e3
    }
}

fn initial_state(name: &str) -> Result<[C64; 2], Failure> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match name {
        "plus" => Ok([C64::new(s, 0.0), C64::new(s, 0.0)]),
        "zero" => Ok([C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
        _ => Err(invalid(format!("unknown initial state {name:?}, use plus or zero"))),
    }
}

/// `⟨ψ|ψ⟩` of the Trotter state by lossless MPO application.
fn exact_norm(model: &IsingModel, plan: &TrotterPlan, initial: &[C64; 2]) -> Result<f64, CtsError> {
    let dt = plan.dt();
    let rows = [half_step_mpo(model, Bonds::Odd, dt)?, half_step_mpo(model, Bonds::Even, dt)?];
    let mut psi = Mps::from_product(&vec![initial.to_vec(); model.n_sites])?;
    for r in 0..2 * plan.steps {
        psi = apply_mpo(&rows[r % 2], &psi)?;
        psi = truncate_svd(&psi, 1 << model.n_sites.div_ceil(2))?.0;
    }
    psi.norm_sqr()
}

fn evolve(a: &EvolveArgs) -> Outcome {
    if a.chi.is_empty() || a.chi.contains(&0) {
        return Err(invalid("--chi values must be at least 1"));
    }
    if a.n < 2 {
        return Err(invalid("--n must be at least 2"));
    }
    let direction: Direction = a.direction.parse()?;
    let initial = initial_state(&a.initial)?;
    let model = IsingModel::new(a.n, a.b)?;
    let plan = TrotterPlan::new(a.t, a.steps)?;
    let grid = evolution_grid(&model, &plan, &initial)?;
    let ids = vec![nalgebra::DMatrix::<C64>::identity(2, 2); a.n];
    let norm_grid = grid.double_layer(&ids)?;
    let exact = exact_norm(&model, &plan, &initial)?;
    let mut table = Table::new(vec!["chi_cut", "raw_err", "corrected_err", "wall_ms"]);
    let mut summary = String::new();
    for &chi in &a.chi {
        let start = Instant::now();
        let report = if a.correct {
            norm_grid.contract_with_correction(direction, chi, Truncation::Svd)?
        } else {
            norm_grid.contract_approx(direction, chi, Truncation::Svd)?
        };
        let ms = wall_ms(&a.common, start);
        let raw = (report.value - exact).norm() / exact;
        let corrected = a.correct.then(|| (report.corrected - exact).norm() / exact);
        let _ = write!(summary, "chi={chi} raw={:.3}%", 100.0 * raw);
        if let Some(c) = corrected {
            let _ = write!(summary, " corrected={:.3}%", 100.0 * c);
        }
        summary.push('\n');
        table.push(vec![json!(chi), num(raw), corrected.map(num).unwrap_or(Value::Null), num(ms)]);
    }
    Ok(Output { table, extra: Some(json!({ "exact_norm": num(exact) })), summary: Some(summary.trim_end().to_string()) })
}

fn fit(a: &FitArgs) -> Outcome {
    if a.rows.iter().any(|&r| r < 1) || a.dh.iter().any(|&d| d < 1) || a.dv < 1 || a.seeds < 1 {
        return Err(invalid("--rows, --dh, --dv and --seeds must be at least 1"));
    }
    if a.n < 2 || a.n > oracle::MAX_EVOLVE {
        return Err(invalid(format!("--n must lie in 2..={}", oracle::MAX_EVOLVE)));
    }
    let model = IsingModel::new(a.n, a.b)?;
    let target = oracle::evolve_exact(&model, a.t, &StateVector::plus(a.n)?)?;
    let dims = vec![2; a.n];
    let mut table = Table::new(vec!["kind", "rows", "d_h", "d_v", "chi", "seed", "params", "fidelity", "log10_infidelity"]);
    for &rows in &a.rows {
        for &dh in &a.dh {
            let shape = GridShape::uniform(rows, a.n, dh, a.dv);
            for seed in a.common.seed..a.common.seed + a.seeds {
                let cfg = FitConfig { max_sweeps: a.sweeps, ..FitConfig::seeded(seed) };
                let g = fit_grid(target.amplitudes(), &shape, &cfg)?;
                let params = g.network.parameter_count();
                let chi = matched_chi(&dims, params);
                let m = fit_mps(target.amplitudes(), &dims, chi, &cfg)?;
                for (kind, f, p, c) in [("cts", g.fidelity, params, Value::Null), ("mps", m.fidelity, m.network.parameter_count(), json!(chi))] {
                    table.push(vec![
                        json!(kind),
                        json!(rows),
                        json!(dh),
                        json!(a.dv),
                        c,
                        json!(seed),
                        json!(p),
                        num(f),
                        num((1.0 - f).max(0.0).log10()),
                    ]);
                }
            }
        }
    }
    Ok(Output { table, extra: None, summary: None })
}

fn circuit(a: &CircuitArgs) -> Outcome {
    let c = match &a.file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Circuit>(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        }
        None => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.common.seed);
            Circuit::random(a.wires, a.depth, &mut rng)
        }
    };
    c.validate()?;
    let grid = encode(&c)?;
    if let Some(path) = &a.grid_out {
        let text = serde_json::to_string(&grid.to_json()).map_err(CtsError::from)?;
        std::fs::write(path, text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    }
    let amps = grid.grid_to_state(1 << oracle::MAX_QUBITS)?;
    let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
    let mut table = Table::new(vec!["wires", "layers", "grid_rows", "grid_cols", "norm_sqr", "max_deviation"]);
    let mut summary = None;
    let deviation = if a.oracle {
        let want = oracle::simulate(&c)?;
        let dev = amps.iter().zip(want.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        summary = Some(format!("max amplitude deviation {dev:e}"));
        num(dev)
    } else {
        Value::Null
    };
    table.push(vec![json!(c.n_wires), json!(c.layers.len()), json!(grid.rows()), json!(grid.cols()), num(norm), deviation]);
    Ok(Output { table, extra: None, summary })
}

fn compress(a: &CompressArgs) -> Outcome {
    if a.chi < 1 {
        return Err(invalid("--chi must be at least 1"));
    }
    let model = IsingModel::new(a.n, a.b)?;
    let cfg = CompressConfig { min_fidelity: a.min_fidelity, ..CompressConfig::new(a.chi) };
    let mut table = Table::new(vec!["level", "steps", "fidelity", "max_bond"]);
    match a.doubling {
        None => {
            let rows = [half_step_mpo(&model, Bonds::Odd, a.dt)?, half_step_mpo(&model, Bonds::Even, a.dt)?];
            let c = compress_product(&rows, &cfg)?;
            table.push(vec![json!(1), json!(1), num(c.fidelity), json!(c.mpo.max_bond())]);
        }
        Some(k) => {
            let row = full_step_mpo(&model, a.dt)?;
            let d = compress_doubling(&row, k, &cfg)?;
            for (l, f) in d.fidelities.iter().enumerate() {
                table.push(vec![json!(l + 1), json!(1u64 << (l + 1)), num(*f), if l + 1 == k { json!(d.mpo.max_bond()) } else { Value::Null }]);
            }
        }
    }
    Ok(Output { table, extra: None, summary: None })
}

fn mc(a: &McArgs) -> Outcome {
    if a.rows < 1 || a.cols < 1 || a.d < 1 {
        return Err(invalid("--rows, --cols and --d must be at least 1"));
    }
    let t = if a.uniform {
        TorusNetwork::from_fn(a.rows, a.cols, a.d, |_, _, _| C64::new(1.0, 0.0))?
    } else {
        if !(a.lo >= 0.0 && a.hi > a.lo) {
            return Err(invalid("need 0 <= --lo < --hi"));
        }
        TorusNetwork::random_real(a.rows, a.cols, a.d, a.lo, a.hi, a.common.seed)?
    };
    let cfg = McConfig {
        n_samples: a.samples,
        burn_in: a.burn_in,
        thinning: a.thinning,
        seed: a.common.seed,
        split_row: a.split,
        chains: a.chains,
        estimate_z: true,
    };
    let r = mc_contract(&t, &cfg)?;
    let exact = transfer_sum(&t).ok();
    let d = &r.diagnostics;
    let mut table = Table::new(vec![
        "estimate_re",
        "estimate_im",
        "std_error",
        "exact_re",
        "acceptance",
        "chains",
        "samples",
        "sign_flag",
        "ergodicity_flag",
        "phase_variance",
        "zero_fraction",
    ]);
    table.push(vec![
        num(d.estimate_re),
        num(d.estimate_im),
        num(d.std_error),
        exact.map(|z| num(z.re)).unwrap_or(Value::Null),
        num(d.acceptance),
        json!(d.chains),
        json!(d.samples),
        json!(d.sign_flag),
        json!(d.ergodicity_flag),
        num(d.phase_variance),
        num(d.zero_fraction),
    ]);
    let summary = format!("estimate {:.6} ± {:.6}", r.estimate.re, r.std_error);
    Ok(Output { table, extra: None, summary: Some(summary) })
}

fn tree(a: &TreeArgs) -> Outcome {
    if a.ising < 2 {
        return Err(invalid("--ising must be at least 2"));
    }
    let model = IsingModel::new(a.ising, a.b)?;
    let bond = a.bond.unwrap_or(1 << (a.ising / 2));
    let mut t = TreeNetwork::balanced(a.ising, 2, bond, a.common.seed)?;
    let mut loop_err = Value::Null;
    if let Some(dims) = &a.loops {
        let dims: [usize; 3] = dims.as_slice().try_into().map_err(|_| invalid("--loops takes three dimensions"))?;
        let (looped, err) = t.with_loops(dims, 300, a.common.seed)?;
        t = looped;
        loop_err = num(err);
    }
    let h = Hamiltonian::ising(&model);
    let start = Instant::now();
    let g = ground_state_sweep(&t, &h, &TreeConfig { max_sweeps: a.sweeps, ..TreeConfig::default() })?;
    let ms = wall_ms(&a.common, start);
    let exact = if a.ising <= 12 { Some(oracle::ground_energy(&model)?) } else { None };
    let gap = exact.map(|e| g.energy - e);
    let mut table = Table::new(vec!["n", "b", "bond", "params", "loop_fit_error", "energy", "exact", "gap", "sweeps", "converged", "flagged", "wall_ms"]);
    table.push(vec![
        json!(a.ising),
        num(a.b),
        json!(bond),
        json!(g.tree.parameter_count()),
        loop_err,
        num(g.energy),
        exact.map(num).unwrap_or(Value::Null),
        gap.map(num).unwrap_or(Value::Null),
        json!(g.sweeps),
        json!(g.converged),
        json!(g.flagged),
        num(ms),
    ]);
    let summary = gap.map(|x| format!("energy {:.12} gap {x:e}", g.energy));
    Ok(Output { table, extra: None, summary })
}

fn emit(common: &Common, out: &Output) -> Result<(), Failure> {
    let text = match common.format {
        Format::Csv => out.table.csv(),
        Format::Json => {
            let mut v = json!({ "rows": out.table.json() });
            if let (Some(Value::Object(extra)), Value::Object(obj)) = (&out.extra, &mut v) {
                obj.extend(extra.clone());
            }
            serde_json::to_string_pretty(&v).map_err(CtsError::from)? + "\n"
        }
    };
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|e| invalid(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, result) = match &cli.command {
        Command::Evolve(a) => (&a.common, evolve(a)),
        Command::Fit(a) => (&a.common, fit(a)),
        Command::Circuit(a) => (&a.common, circuit(a)),
        Command::Compress(a) => (&a.common, compress(a)),
        Command::Mc(a) => (&a.common, mc(a)),
        Command::Tree(a) => (&a.common, tree(a)),
    };
    match result.and_then(|out| {
        emit(common, &out)?;
        if let Some(s) = &out.summary {
            eprintln!("{s}");
        }
        Ok(())
    }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
    }
}
