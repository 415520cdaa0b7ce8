//! Prints one PASS/FAIL/SKIP line per acceptance criterion.
//!
//! A8 is evaluated from `results/flagship_e0` and `results/flagship_e5000`
//! at the workspace root when both hold a trajectory, or from the
//! directories named by `TTNHEOM_FLAGSHIP_DIRS=dir_e0:dir_e5000`.
//! `TTNHEOM_ACCEPTANCE_ONLY=A1,A4` restricts the run.

use std::path::PathBuf;

use ttnheom::verify::{run_criteria, Suite, ALL};

fn flagship_dirs() -> Option<(PathBuf, PathBuf)> {
    let (a, b) = match std::env::var("TTNHEOM_FLAGSHIP_DIRS") {
        Ok(v) => {
            let (a, b) = v.split_once(':')?;
            (PathBuf::from(a), PathBuf::from(b))
        }
        Err(_) => {
            let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../results");
            (root.join("flagship_e0"), root.join("flagship_e5000"))
        }
    };
    (a.join("trajectory.csv").is_file() && b.join("trajectory.csv").is_file()).then_some((a, b))
}

fn main() {
    let only = std::env::var("TTNHEOM_ACCEPTANCE_ONLY").ok();
    let ids: Vec<&str> = match &only {
        Some(s) => s.split(',').map(str::trim).collect(),
        None => ALL.to_vec(),
    };
    let mut suite = Suite::new();
    suite.flagship_dirs = flagship_dirs();
    let verbose = std::env::var_os("TTNHEOM_ACCEPTANCE_QUIET").is_none();
    run_criteria(&ids, &mut suite, &mut |o| {
        println!("{}", o.line());
        if verbose {
            for n in &o.notes {
                println!("    {n}");
            }
        }
    });
}
