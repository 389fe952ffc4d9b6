//! Run the three-round simulation from a script and print the accuracy table.
//!
//! ```text
//! cargo run --example simulation -- crates/core/examples/three_rounds.yaml
//! ```

use std::path::PathBuf;

use interlearn::sim::{render_table, run_rounds, write_jsonl, SimScript};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/three_rounds.yaml")));
    let script = SimScript::load(&path)?;
    let run = run_rounds(&script)?;
    print!("{}", render_table(&run.reports));

    let out = std::env::temp_dir().join("interlearn_sim_report.jsonl");
    write_jsonl(&out, &run.reports, &run.dialogues)?;
    println!("\nper-dialogue rows written to {}", out.display());
    Ok(())
}
