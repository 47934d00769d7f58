//! End-to-end run with the mock backend: synthetic CSVs in, bundle and
//! report out. Pass an output directory, or a temporary one is used.

use std::fs;
use std::path::PathBuf;

use flowprompt::bundle::{cmd_run, verify_bundle, RunConfig};
use flowprompt::dataset::{write_csv, Schema};
use flowprompt::report::cmd_report;
use flowprompt::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("flowprompt-mock-pipeline"));
    fs::create_dir_all(&root)?;

    let data = generate(&SynthConfig::default());
    let schema = Schema::unsw_nb15();
    let (train, test) = (root.join("train.csv"), root.join("test.csv"));
    write_csv(fs::File::create(&train)?, &schema, &data.train)?;
    write_csv(fs::File::create(&test)?, &schema, &data.test)?;

    let config = RunConfig {
        n: 1000,
        dev_size: 300,
        bootstrap_resamples: 500,
        ..RunConfig::new(train, test, root.join("bundle"))
    };
    let bundle = cmd_run(&config)?;
    verify_bundle(&bundle.dir)?;
    println!("bundle at {}\n", bundle.dir.display());
    print!("{}", cmd_report(&bundle.dir)?);
    Ok(())
}
