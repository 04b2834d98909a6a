//! Print the default experiment configuration as JSON.

fn main() {
    let cfg = kedrl::config::ExperimentConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg.echo()).expect("config serializes"));
}
