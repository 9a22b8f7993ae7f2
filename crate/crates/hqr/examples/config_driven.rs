//! Running a named experiment from a TOML configuration, the same way the
//! `hqr` binary does, and writing CSV plus metadata.

use hqr::experiment::{self, Config, ConfigSource, ExperimentName, OutputFormat};

const CONFIG: &str = r#"
schema_version = 1
seed = 11

[fig7]
theta_rad = [0.01]
local_loss = [0.001, 0.01, 0.1]

[presets.si]
tau_nr_ns = 500.0
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = ConfigSource {
        label: "inline.toml".into(),
        text: CONFIG.into(),
    };
    let cfg = Config::load(Some(&source), &["fig7.theta_rad=[0.01, 0.1]".into()])?;
    let data = experiment::run_experiment(ExperimentName::Fig7, &cfg)?;
    print!("{}", data.to_csv());

    let out = std::env::temp_dir().join("hqr-config-driven").join("fig7.csv");
    let files = experiment::write_outputs(ExperimentName::Fig7, &cfg, &data, OutputFormat::Csv, &out)?;
    println!("wrote {} and {}", files.data.display(), files.metadata.display());

    let report = experiment::validate_config(&source)?;
    print!("{report}");
    Ok(())
}
