use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use equibit_core::simnet::{run, Scenario};

use crate::CliError;

pub const OUT_ENV: &str = "EQB_SIM_OUT";
pub const DEFAULT_OUT: &str = "eqb-out";

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write(path: PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(&path, contents).map_err(|e| CliError::Write {
        path,
        reason: e.to_string(),
    })
}

pub fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or(flag)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn cmd_run(path: &Path, seed: Option<u64>, out: Option<PathBuf>, verbose: u8) -> Result<String, CliError> {
    let mut scenario = Scenario::from_json(&read(path)?)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let (world, transcript) = run(&scenario)?;
    let dir = output_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Write {
        path: dir.clone(),
        reason: e.to_string(),
    })?;
    write(dir.join("transcript.json"), &transcript.to_json())?;
    write(dir.join("equity.chain.json"), &world.equity.export())?;
    write(dir.join("payment.chain.json"), &world.payment.export())?;

    let mut s = String::new();
    if verbose > 0 {
        for e in &transcript.log {
            let _ = writeln!(s, "[t+{:>4}h] {:<8} {:<24} {}", e.tick, e.actor, e.event, e.detail);
        }
    }
    let f = &transcript.final_state;
    let _ = writeln!(s, "scenario {} seed {}", transcript.scenario, transcript.seed);
    let _ = writeln!(
        s,
        "ticks {}  equity height {}  payment height {}  events {}  rejected txs {}",
        world.tick,
        f.equity.height,
        f.payment.height,
        transcript.log.len(),
        transcript.events("tx_rejected").count()
    );
    let _ = writeln!(s, "wrote {}", dir.display());
    let _ = writeln!(s, "digest {}", transcript.digest);
    Ok(s)
}
