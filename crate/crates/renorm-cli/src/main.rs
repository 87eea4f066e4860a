//! Command-line driver: parse a recipe, run constructions and checks, emit
//! reports and CSV grids.
//!
//! Exit codes: 0 all requested checks pass; 1 a check failed its threshold;
//! 2 parse or parameter error; 3 numeric failure.

mod commands;
mod recipe;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use renorm::error::Error;

use commands::{Flags, Outcome};
use recipe::Recipe;

#[derive(Parser)]
#[command(
    name = "renorm",
    about = "Build and verify total renormalizations of cylinder diffeomorphisms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Recipe file (structured text with [target], [plugin], ... sections).
    recipe: PathBuf,
    /// Override the verification grid, e.g. 64x64.
    #[arg(long)]
    grid: Option<String>,
    /// Override the reported derivative order (0..=2).
    #[arg(long)]
    order: Option<usize>,
    /// Override the Lyapunov seed count.
    #[arg(long)]
    seed: Option<usize>,
    /// Output directory for reports and CSV artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Compile the target into a plugin and report the construction.
    Build(Common),
    /// Check the three plugin axioms on a sampling grid.
    Validate(Common),
    /// Sample the plugin's output map to CSV.
    OutputGrid(Common),
    /// Sample the target map itself to CSV.
    SampleMap(Common),
    /// Star two built plugins and check the output law.
    Star(Common),
    /// Assemble a multi-band universal map and report per band.
    Universal(Common),
    /// Transfer densities and estimate the Lyapunov relation.
    Measure(Common),
    /// Run the Lie-algebra battery (compactified triple, flow identities).
    Lielab(Common),
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::InvalidParameter(_) | Error::InvalidTarget { .. }
        | Error::NotCompilable(_) | Error::Io(_) => 2,
        Error::NumericFailure(_)
        | Error::ReturnTimeOverflow { .. }
        | Error::InversionFailure { .. }
        | Error::LiftFailure { .. }
        | Error::InvalidIsotopy { .. }
        | Error::FragmentationFailure(_)
        | Error::DegenerateMeasure(_) => 3,
    }
}

fn run(common: &Common, name: &str, f: impl Fn(&Recipe, &Flags) -> Result<Outcome, Error>) -> ExitCode {
    let flags = Flags {
        grid: common.grid.clone(),
        order: common.order,
        seed: common.seed,
        out: common.out.clone(),
    };
    let recipe = match Recipe::load(&common.recipe) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    let outcome = match f(&recipe, &flags) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    // resolve the output directory: flag, then [output] dir, then `out`
    let out_dir = flags
        .out
        .clone()
        .or_else(|| {
            recipe
                .get("output", "dir")
                .map(|e| match &recipe.dir {
                    Some(d) => d.join(&e.value),
                    None => PathBuf::from(&e.value),
                })
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }
    let report_path = out_dir.join(format!("{name}.report"));
    if let Err(e) = std::fs::write(&report_path, &outcome.report) {
        eprintln!("error: cannot write {}: {e}", report_path.display());
        return ExitCode::from(2);
    }
    for (file, content) in &outcome.files {
        if let Err(e) = std::fs::write(out_dir.join(file), content) {
            eprintln!("error: cannot write {file}: {e}");
            return ExitCode::from(2);
        }
    }
    print!("{}", outcome.report);
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        if let Some(key) = &outcome.fail_key {
            eprintln!("check failed: {key}");
        }
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Build(c) => run(c, "build", commands::build),
        Command::Validate(c) => run(c, "validate", commands::validate),
        Command::OutputGrid(c) => run(c, "output-grid", commands::output_grid),
        Command::SampleMap(c) => run(c, "sample-map", commands::sample_map),
        Command::Star(c) => run(c, "star", commands::star),
        Command::Universal(c) => run(c, "universal", commands::universal),
        Command::Measure(c) => run(c, "measure", commands::measure),
        Command::Lielab(c) => run(c, "lielab", commands::lielab),
    }
}
