//! Train on synthetic two-category scenes and report AP for every setting.
//!
//! `cargo run --release -p deal-core --example toy_run -- [train] [test] [epochs] [seed]`
//!
//! `TOY_OUT` names a directory for checkpoints and the metrics log;
//! `TOY_LAMBDA` overrides the density-loss weight (default 10).

use deal_core::eval::{evaluate_protocol, EvalConfig, PromptProtocol};
use deal_core::model::ModelConfig;
use deal_core::scene::{generate_dataset, GeneratorConfig, Setting};
use deal_core::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let n_train = *args.first().unwrap_or(&200) as usize;
    let n_test = *args.get(1).unwrap_or(&50) as usize;
    let epochs = *args.get(2).unwrap_or(&1) as usize;
    let seed = *args.get(3).unwrap_or(&0);
    let lambda = std::env::var("TOY_LAMBDA").ok().map_or(Ok(10.0), |v| v.parse())?;
    let gen = GeneratorConfig::default();
    let train_set = generate_dataset(&gen, n_train, seed)?;
    let test_set = generate_dataset(&gen, n_test, seed + 1_000_000)?;
    let model_cfg = ModelConfig {
        lambda,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = std::env::var_os("TOY_OUT").map(std::path::PathBuf::from);
    let (model, report) = train(&train_set, &model_cfg, &train_cfg, out.as_deref())?;
    println!(
        "trained {} steps in {:.1}s ({:.1} ms/image), epoch losses {:?}",
        report.steps,
        report.seconds,
        1000.0 * report.seconds / report.steps as f64,
        report.epoch_losses
    );
    let eval = |protocol, jitter| {
        let cfg = EvalConfig {
            seed,
            jitter,
            ..EvalConfig::default()
        };
        evaluate_protocol(&model, &test_set, protocol, &cfg)
    };
    for s in Setting::ALL {
        println!("{}", eval(PromptProtocol::Setting(s), 0.0)?);
    }
    println!("{}", eval(PromptProtocol::Count(3), 0.0)?);
    println!("{}", eval(PromptProtocol::Setting(Setting::S3), 0.25)?);
    Ok(())
}
