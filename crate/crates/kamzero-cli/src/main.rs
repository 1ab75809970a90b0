use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use kamzero::config::{parse_config, RunConfig};
use kamzero::{pipeline, report};

/// KAM iteration with zero normal frequencies.
#[derive(Parser)]
#[command(name = "kamzero", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take ξ from this sample of the `[grid]` section.
    #[arg(long)]
    xi_index: Option<usize>,
    /// Override `[budgets] max_steps`.
    #[arg(long)]
    max_steps: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the KAM iteration and write the report and ε-trace.
    Run(Common),
    /// Write the KAM-form NLS Hamiltonian as a series file.
    NlsBuild(Common),
    /// Estimate the excluded parameter measure on the grid.
    Measure(Common),
    /// Run the parity and invariant suite.
    Check(Common),
}

fn load(c: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let text = fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    let cfg = parse_config(&text).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| format!("  {e}")).collect();
        anyhow!("invalid configuration {}:\n{}", c.config.display(), lines.join("\n"))
    })?;
    let out = match (&c.out, &cfg.output.dir) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("."),
    };
    Ok((cfg, out))
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_run(c: &Common) -> anyhow::Result<u8> {
    let (cfg, out) = load(c)?;
    let rep = pipeline::run_config(&cfg, c.xi_index, c.max_steps)?;
    print_paths(&report::emit_iteration(&rep, &out, &cfg.output.report, &cfg.output.trace)?);
    for r in &rep.records {
        println!("m={} eps={:.3e} eps_next={:.3e} delta0={:.3e}", r.m, r.eps_measured, r.eps_next, r.delta0);
    }
    println!("verdict: {:?}", rep.verdict);
    Ok(rep.verdict.exit_code() as u8)
}

fn cmd_nls_build(c: &Common) -> anyhow::Result<u8> {
    let (cfg, out) = load(c)?;
    let b = pipeline::nls_build(&cfg, c.xi_index)?;
    fs::create_dir_all(&out)?;
    let path = out.join(&cfg.output.series);
    fs::write(&path, b.form.r.to_text())?;
    let nf = out.join("normal_form.json");
    fs::write(&nf, report::to_json(&b.form.n0)?)?;
    print_paths(&[path, nf]);
    println!("omega = {:?}", b.form.n0.omega);
    println!("A = {:?}", b.form.a_matrix);
    println!("R terms = {}, Birkhoff dropped = {:.3e}, largest B coupling = {:.3e}", b.form.r.len(), b.birkhoff.dropped, b.form.b_coupling);
    Ok(0)
}

fn cmd_measure(c: &Common) -> anyhow::Result<u8> {
    let (cfg, out) = load(c)?;
    let reps = pipeline::measure_config(&cfg)?;
    print_paths(&report::emit_measure(&reps, &out, "measure.json", &cfg.output.measure)?);
    for r in &reps {
        for f in &r.families {
            println!("gamma={:.3e} {:?}: fraction={:.4e} bound={:.4e}", r.gamma, f.family, f.fraction, f.analytic_bound);
        }
    }
    Ok(0)
}

fn cmd_check(c: &Common) -> anyhow::Result<u8> {
    let (cfg, out) = load(c)?;
    let rep = pipeline::check_config(&cfg, c.xi_index, c.max_steps.unwrap_or(2))?;
    fs::create_dir_all(&out)?;
    let path = out.join("check.json");
    fs::write(&path, report::to_json(&rep)?)?;
    print_paths(&[path]);
    println!("{}", if rep.passed { "check passed" } else { "check FAILED" });
    Ok(if rep.passed { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::NlsBuild(c) => cmd_nls_build(c),
        Command::Measure(c) => cmd_measure(c),
        Command::Check(c) => cmd_check(c),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
