use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use recsplit::branching::{generate_paintbox_keyed, replicates, sample_partition_keyed, simulate_martingale_keyed};
use recsplit::ewens_pitman::{equivalence_suite, noncoincidence_check};
use recsplit::exact_counts::{expected_blocks, expected_count_r};
use recsplit::moments::{closed_form_moments, moments_m};
use recsplit::suite::{all_passed, run_suite, SuiteConfig};
use recsplit::{solve_malthusian, SplitLaw, StreamKey};

/// Recursive crumb/solid splitting: Malthusian exponents, exact block-count
/// means, partition and paintbox simulation, moments of the martingale limit.
#[derive(Parser, Debug)]
#[command(name = "recsplit", version)]
struct Cli {
    /// Global seed; each subcommand draws from its own stream under it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve psi(alpha) = 1 and print the asymptotic constants.
    Solve {
        #[arg(long)]
        law: String,
        #[arg(long)]
        json: bool,
    },
    /// Sample occupancy vectors of n balls.
    Sample {
        #[arg(long)]
        law: String,
        #[arg(short = 'n')]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the solids of one paintbox down to a size threshold.
    Paintbox {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long, default_value_t = 10_000)]
        max_gen: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate traces of the intrinsic martingale.
    Martingale {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 25)]
        kmax: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact E[K_n] and E[K_nr].
    Expect {
        #[arg(long)]
        law: String,
        #[arg(short = 'n', value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(short = 'r', value_delimiter = ',')]
        r: Vec<usize>,
        #[arg(long)]
        precision_bits: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Moments a_k = E[M^k] of the martingale limit.
    Moments {
        #[arg(long)]
        law: String,
        #[arg(short = 'K', default_value_t = 12)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chi-squared test of the (alpha, alpha/d) multi-split against Ewens-Pitman.
    Equivalence {
        #[arg(long)]
        alpha: f64,
        #[arg(short = 'd')]
        d: usize,
        #[arg(short = 'n', default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long)]
        json: bool,
    },
    /// Fit a two-parameter Ewens-Pitman pair to a tripartite model.
    Noncoincidence {
        #[arg(short = 'r')]
        r: u32,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run the verification suite and print a JSON report.
    Verify {
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// How a run ended.
enum Outcome {
    Done,
    VerificationFailed,
}

type CliResult = Result<Outcome, String>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(2),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Solve { law, json } => solve(&load_law(&law)?, json),
        Command::Sample { law, n, reps, out } => sample(&load_law(&law)?, n, reps, seed, out.as_deref()),
        Command::Paintbox {
            law,
            delta,
            max_gen,
            out,
        } => paintbox(&load_law(&law)?, delta, max_gen, seed, out.as_deref()),
        Command::Martingale {
            law,
            kmax,
            reps,
            delta,
            out,
        } => martingale(&load_law(&law)?, kmax, reps, delta, seed, out.as_deref()),
        Command::Expect {
            law,
            n,
            r,
            precision_bits,
            out,
        } => expect(&load_law(&law)?, &n, &r, precision_bits, out.as_deref()),
        Command::Moments { law, k, out } => moments(&load_law(&law)?, k, out.as_deref()),
        Command::Equivalence {
            alpha,
            d,
            n,
            reps,
            json,
        } => equivalence(alpha, d, n, reps, seed, json),
        Command::Noncoincidence { r, gamma, json } => noncoincidence(r, gamma, json),
        Command::Verify { quick, out } => verify(quick, seed, out.as_deref()),
    }
}

/// A law given inline as JSON or as a path to a JSON file.
fn load_law(arg: &str) -> Result<SplitLaw, String> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| format!("reading law file {arg}: {e}"))?
    };
    SplitLaw::from_json(&text).map_err(|e| format!("law {arg}: {e}"))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, String> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| format!("creating {}: {e}", p.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, String> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(open_output(path)?))
}

fn csv_err(e: impl std::fmt::Display) -> String {
    format!("writing csv: {e}")
}

/// Rounds to 15 significant digits.
fn sig15(x: f64) -> f64 {
    format!("{x:.14e}").parse().unwrap_or(x)
}

fn solve(law: &SplitLaw, as_json: bool) -> CliResult {
    let s = solve_malthusian(law).map_err(|e| format!("solve: {e}"))?;
    let fields = [
        ("alpha_star", s.alpha_star),
        ("psi_prime", s.psi_prime),
        ("phi", s.phi_at_star),
        ("c_blocks", s.c_blocks),
        ("c_nx", s.c_nx),
    ];
    if as_json {
        let mut map = serde_json::Map::new();
        for (k, v) in fields {
            map.insert(k.to_string(), json!(sig15(v)));
        }
        map.insert("lattice".into(), json!(s.lattice));
        println!("{}", serde_json::Value::Object(map));
    } else {
        for (k, v) in fields {
            println!("{k:<11} {}", sig15(v));
        }
        if s.lattice {
            println!("lattice     true (constants are log-periodic averages)");
        }
    }
    Ok(Outcome::Done)
}

fn sample(law: &SplitLaw, n: usize, reps: usize, seed: u64, out: Option<&Path>) -> CliResult {
    let key = StreamKey::for_task(seed, "sample");
    let samples = replicates(reps, key, |k| sample_partition_keyed(law, n, k));
    let mut w = csv_writer(out)?;
    let mut header = vec!["rep".to_string(), "K_n".to_string()];
    header.extend((1..=n).map(|r| format!("K_n{r}")));
    w.write_record(&header).map_err(csv_err)?;
    for (rep, occ) in samples.into_iter().enumerate() {
        let occ = occ.map_err(|e| format!("sample rep {rep}: {e}"))?;
        let mut row = vec![rep.to_string(), occ.blocks().to_string()];
        row.extend(occ.counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(Outcome::Done)
}

fn paintbox(law: &SplitLaw, delta: f64, max_gen: usize, seed: u64, out: Option<&Path>) -> CliResult {
    let pb = generate_paintbox_keyed(law, delta, max_gen, StreamKey::for_task(seed, "paintbox"))
        .map_err(|e| format!("paintbox: {e}"))?;
    let mut w = csv_writer(out)?;
    w.write_record(["rank", "size"]).map_err(csv_err)?;
    for (i, s) in pb.solids.iter().enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    eprintln!(
        "{} solids, residual crumb mass {} in {} crumbs, {} generations",
        pb.solids.len(),
        pb.residual_crumb_mass,
        pb.residual_crumb_count,
        pb.generations_explored
    );
    if !pb.complete {
        eprintln!("warning: generation cap {max_gen} reached; solids above delta may be missing");
    }
    Ok(Outcome::Done)
}

fn martingale(law: &SplitLaw, kmax: usize, reps: usize, delta: f64, seed: u64, out: Option<&Path>) -> CliResult {
    let alpha = solve_malthusian(law).map_err(|e| format!("solve: {e}"))?.alpha_star;
    let key = StreamKey::for_task(seed, "martingale");
    let traces = replicates(reps, key, |k| simulate_martingale_keyed(law, alpha, kmax, delta, k));
    let mut w = csv_writer(out)?;
    w.write_record(["rep", "k", "M_k"]).map_err(csv_err)?;
    for (rep, trace) in traces.into_iter().enumerate() {
        let trace = trace.map_err(|e| format!("martingale rep {rep}: {e}"))?;
        for (k, m) in trace.values.iter().enumerate() {
            w.write_record([rep.to_string(), k.to_string(), m.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;
    Ok(Outcome::Done)
}

fn expect(law: &SplitLaw, ns: &[usize], rs: &[usize], precision_bits: Option<u32>, out: Option<&Path>) -> CliResult {
    let s = solve_malthusian(law).map_err(|e| format!("solve: {e}"))?;
    let mut w = csv_writer(out)?;
    w.write_record(["n", "r", "value", "ratio_to_asymptote"]).map_err(csv_err)?;
    for &n in ns {
        let scale = (n as f64).powf(s.alpha_star);
        let value = expected_blocks(law, n, precision_bits).map_err(|e| format!("E[K_{n}]: {e}"))?;
        w.write_record([n.to_string(), String::new(), value.to_string(), (value / scale / s.c_blocks).to_string()])
            .map_err(csv_err)?;
        for &r in rs.iter().filter(|&&r| r <= n) {
            let value =
                expected_count_r(law, n, r, precision_bits).map_err(|e| format!("E[K_{n},{r}]: {e}"))?;
            let ratio = value / scale / s.c_count_r(r);
            w.write_record([n.to_string(), r.to_string(), value.to_string(), ratio.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;
    Ok(Outcome::Done)
}

fn moments(law: &SplitLaw, k: usize, out: Option<&Path>) -> CliResult {
    let s = solve_malthusian(law).map_err(|e| format!("solve: {e}"))?;
    let table = moments_m(law, s.alpha_star, k).map_err(|e| format!("moments: {e}"))?;
    let closed = table.family.closed_form(s.alpha_star);
    let mut w = csv_writer(out)?;
    w.write_record(["k", "a_k", "b_k", "closed_form_if_any", "rel_gap"])
        .map_err(csv_err)?;
    for (q, a) in table.a.iter().enumerate() {
        let b = table.b.as_ref().map(|b| b[q].to_string()).unwrap_or_default();
        let (cf, gap) = match &closed {
            Some(family) => {
                let exact = closed_form_moments(family, q as f64).map_err(|e| format!("closed form: {e}"))?;
                (exact.to_string(), (a / exact - 1.0).abs().to_string())
            }
            None => (String::new(), String::new()),
        };
        w.write_record([q.to_string(), a.to_string(), b, cf, gap]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    Ok(Outcome::Done)
}

fn equivalence(alpha: f64, d: usize, n: usize, reps: usize, seed: u64, as_json: bool) -> CliResult {
    let task_seed = StreamKey::for_task(seed, "equivalence").derive_seed();
    let report = equivalence_suite(alpha, d, n, reps, task_seed).map_err(|e| format!("equivalence: {e}"))?;
    if as_json {
        println!("{}", serde_json::to_string(&report).map_err(|e| e.to_string())?);
    } else {
        println!("chi2        {}", report.chi2);
        println!("dof         {}", report.dof);
        println!("p_value     {}", report.p_value);
        println!("max_p_gap   {}", report.p_n_gaps.iter().fold(0.0f64, |a, &b| a.max(b)));
        println!("control_p   {}", report.control.p_value);
    }
    Ok(if report.p_value >= 1e-3 {
        Outcome::Done
    } else {
        Outcome::VerificationFailed
    })
}

fn noncoincidence(r: u32, gamma: f64, as_json: bool) -> CliResult {
    let report = noncoincidence_check(r, gamma).map_err(|e| format!("noncoincidence: {e}"))?;
    if as_json {
        println!("{}", serde_json::to_string(&report).map_err(|e| e.to_string())?);
    } else {
        println!("alpha_fit      {}", report.alpha_fit);
        println!("theta_fit      {}", report.theta_fit);
        println!("residual_at_4  {}", report.residual_at_4);
    }
    Ok(Outcome::Done)
}

fn verify(quick: bool, seed: u64, out: Option<&Path>) -> CliResult {
    let config = if quick {
        SuiteConfig::quick(seed)
    } else {
        SuiteConfig::full(seed)
    };
    let results = run_suite(&config).map_err(|e| format!("verify: {e}"))?;
    for r in &results {
        eprintln!(
            "{} {:<48} {:>12.4e} (threshold {:e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.check_name,
            r.statistic,
            r.threshold
        );
    }
    let text = serde_json::to_string_pretty(&results).map_err(|e| e.to_string())?;
    let mut sink = open_output(out)?;
    writeln!(sink, "{text}").map_err(|e| format!("writing report: {e}"))?;
    Ok(if all_passed(&results) {
        Outcome::Done
    } else {
        Outcome::VerificationFailed
    })
}
