//! Command-line interface: enumeration tables, class listings, tree
//! drawings, symbolic expansions, bound ledgers, and the verification
//! suites, with JSON/CSV emission for machine consumption.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gp_hierarchy::boardgame::{
    map_count, partition_classes, CollapseMap, EchelonClass,
};
use gp_hierarchy::harness::{
    emit, run_check, run_suite, CheckKind, EmitFormat, HarnessError, Report, RunConfig,
    CONFIG_ENV_VAR,
};
use gp_hierarchy::kernels::{assemble_jk, bound_ledger};
use gp_hierarchy::trees::{build_forest, Child, TreeForest};

#[derive(Parser)]
#[command(
    name = "gph",
    about = "Collapse-map combinatorics and spectral-grid certification \
             for the cubic GP hierarchy",
    after_help = "Configuration is read from the TOML file named by --config \
                  or the GPH_CONFIG environment variable; command-line flags \
                  override file values."
)]
struct Cli {
    /// Path to a TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tabulate map and class counts for all shapes up to (k, r).
    Enumerate {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        r: usize,
        /// Write the table to a CSV file instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List the move-equivalence classes of shape (k, r).
    Classes {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        r: usize,
        /// Also dump the classes as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the contraction forest of one collapse map.
    Trees {
        #[arg(long)]
        k: usize,
        /// Comma-separated collapse map, e.g. "2,2,3,5".
        #[arg(long)]
        rho: String,
        /// Also write a DOT graph description.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Print the factorized integrand of one collapse map term by term.
    Expand {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        rho: String,
        /// Also dump the expansion as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the per-tree and aggregate bound tables for shape (k, r).
    Ledger {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        r: usize,
        /// Time horizon T.
        #[arg(long, default_value_t = 0.1)]
        t: f64,
        /// Sobolev mass constant M.
        #[arg(long, default_value_t = 1.0)]
        m: f64,
        /// Trilinear space-time constant C.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Run a single verification check.
    Verify {
        #[arg(long, value_enum)]
        check: CheckKind,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report to a file.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the flattened CSV report to a file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the configured verification suite (all checks by default).
    Suite {
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_rho(s: &str) -> Result<Vec<usize>, HarnessError> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| HarnessError::Config(format!("bad rho entry {tok:?}: {e}")))
        })
        .collect()
}

fn child_name(c: Child) -> String {
    match c {
        Child::Internal(i) => format!("c{i}"),
        Child::Leaf(i) => format!("u{i}"),
    }
}

fn print_forest(forest: &TreeForest) -> String {
    let mut out = String::new();
    for j in 1..=forest.k() {
        let marker = if forest.distinguished_tree() == j { " (distinguished)" } else { "" };
        out.push_str(&format!("tree {j}{marker}\n"));
        let root = forest.root_child(j);
        out.push_str(&format!("  root{j} -> {}\n", child_name(root)));
        let mut stack = vec![root];
        while let Some(c) = stack.pop() {
            if let Child::Internal(i) = c {
                let (a, b) = forest.children(i);
                out.push_str(&format!(
                    "  c{i} -> {} {}\n",
                    child_name(a),
                    child_name(b)
                ));
                stack.push(a);
                stack.push(b);
            }
        }
    }
    out
}

fn forest_dot(forest: &TreeForest) -> String {
    let mut out = String::from("digraph forest {\n");
    for j in 1..=forest.k() {
        out.push_str(&format!("  root{j} [shape=box];\n"));
        let root = forest.root_child(j);
        out.push_str(&format!("  root{j} -> {};\n", child_name(root)));
        let mut stack = vec![root];
        while let Some(c) = stack.pop() {
            if let Child::Internal(i) = c {
                let (a, b) = forest.children(i);
                out.push_str(&format!("  c{i} -> {};\n", child_name(a)));
                out.push_str(&format!("  c{i} -> {};\n", child_name(b)));
                stack.push(a);
                stack.push(b);
            }
        }
    }
    out.push_str("}\n");
    out
}

fn class_listing(classes: &[EchelonClass]) -> String {
    let mut out = String::new();
    for (i, class) in classes.iter().enumerate() {
        out.push_str(&format!(
            "class {i}: echelon {:?}, {} members\n",
            class.echelon.as_map().rho(),
            class.members.len()
        ));
        for (member, pi) in &class.members {
            out.push_str(&format!("  member {:?} pi={:?}\n", member.rho(), pi));
        }
    }
    out
}

fn write_or_print(path: Option<&PathBuf>, content: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn emit_report(
    report: &Report,
    json: Option<&PathBuf>,
    csv: Option<&PathBuf>,
) -> Result<(), HarnessError> {
    print!("{}", emit(report, EmitFormat::Text)?);
    if let Some(p) = json {
        std::fs::write(p, emit(report, EmitFormat::Json)?)?;
    }
    if let Some(p) = csv {
        std::fs::write(p, emit(report, EmitFormat::Csv)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Enumerate { k, r, csv } => {
            let mut out = String::from("k,r,map_count,class_count,bound_2^(k+r)\n");
            for kk in 1..=k {
                for rr in 1..=r {
                    let classes = partition_classes(kk, rr)?;
                    out.push_str(&format!(
                        "{kk},{rr},{},{},{}\n",
                        map_count(kk, rr),
                        classes.len(),
                        1u128 << (kk + rr)
                    ));
                }
            }
            write_or_print(csv.as_ref(), &out)?;
            Ok(true)
        }
        Cmd::Classes { k, r, json } => {
            let classes = partition_classes(k, r)?;
            print!("{}", class_listing(&classes));
            println!(
                "{} maps in {} classes (bound {})",
                map_count(k, r),
                classes.len(),
                1u128 << (k + r)
            );
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_string_pretty(&classes)?)?;
            }
            Ok(true)
        }
        Cmd::Trees { k, rho, dot } => {
            let map = CollapseMap::new(k, parse_rho(&rho)?)?;
            let forest = build_forest(&map);
            print!("{}", print_forest(&forest));
            if let Some(p) = dot {
                std::fs::write(p, forest_dot(&forest))?;
            }
            Ok(true)
        }
        Cmd::Expand { k, rho, json } => {
            let map = CollapseMap::new(k, parse_rho(&rho)?)?;
            let jk = assemble_jk(&map);
            for (j, factor) in jk.factors.iter().enumerate() {
                println!("tree {} ({} terms)", j + 1, factor.len());
                for term in &factor.terms {
                    let tag = if term.distinguished_count() > 0 { " [distinguished]" } else { "" };
                    println!("  {term}{tag}");
                }
            }
            if let Some(p) = json {
                let dump = serde_json::json!({
                    "k": jk.k,
                    "r": jk.r,
                    "factors": jk.factors,
                });
                std::fs::write(p, serde_json::to_string_pretty(&dump)?)?;
            }
            Ok(true)
        }
        Cmd::Ledger { k, r, t, m, c } => {
            println!("shape k={k} r={r}, T={t}, M={m}, C={c}");
            for (i, class) in partition_classes(k, r)?.iter().enumerate() {
                let forest = build_forest(class.echelon.as_map());
                let ledger = bound_ledger(&forest);
                println!("class {i}: echelon {:?}", class.echelon.as_map().rho());
                for tb in &ledger.per_tree {
                    println!(
                        "  tree {} m={} distinguished={} 2^{} C^{} T^{}/2 phi^{} -> {:.6e}",
                        tb.tree,
                        tb.m,
                        tb.distinguished,
                        tb.pow2,
                        tb.c_exp,
                        tb.t_half_exp,
                        tb.phi_exp,
                        tb.value(t, m, c)
                    );
                }
                println!(
                    "  aggregate 2^{} C^{} T^{}/2 phi^{} -> {:.6e}",
                    ledger.agg_pow2,
                    ledger.agg_c_exp,
                    ledger.agg_t_half_exp,
                    ledger.agg_phi_exp,
                    ledger.aggregate_value(t, m, c)
                );
            }
            println!(
                "final bound 2 M^(2k-2) (2 C M^4 T)^((r+1)/2) = {:.6e}",
                gp_hierarchy::kernels::final_bound(k, r, t, m, c)
            );
            Ok(true)
        }
        Cmd::Verify { check, k, r, n, d, t, seed, json, csv } => {
            let mut cfg = cfg;
            if let Some(v) = k {
                cfg.k = v;
            }
            if let Some(v) = r {
                cfg.r = v;
            }
            if let Some(v) = n {
                cfg.n = v;
            }
            if let Some(v) = d {
                cfg.d = v;
            }
            if let Some(v) = t {
                cfg.t = v;
                cfg.mild_t = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            cfg.validate()?;
            let report = Report::from_records(vec![run_check(check, &cfg)]);
            emit_report(&report, json.as_ref(), csv.as_ref())?;
            Ok(report.pass)
        }
        Cmd::Suite { json, csv } => {
            let report = run_suite(&cfg)?;
            emit_report(&report, json.as_ref(), csv.as_ref())?;
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e} (config path flag --config or ${CONFIG_ENV_VAR})");
            ExitCode::from(2)
        }
    }
}
