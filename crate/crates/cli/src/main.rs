//! Command-line pipeline: dataset synthesis, adversarial training,
//! conditional sampler training, sampling, and quality assessment.
//!
//! Every command takes a `--seed` and optional `--config` (key=value file,
//! overridden by flags) and produces byte-identical artifacts on reruns with
//! identical inputs.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "geogen",
    version,
    about = "Generative parametrization and Bayesian conditioning of channelized subsurface images"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a channelized training set plus a reference image.
    GenData(commands::gen_data::Args),
    /// Train the unconditional generator adversarially.
    TrainGan(commands::train_gan::Args),
    /// Train an inference network against an observation set.
    TrainInference(commands::train_inference::Args),
    /// Draw realizations as PGM images (and optionally a GEOD batch).
    Sample(commands::sample::Args),
    /// Score realization sets: ANODI, MDS, discriminator histograms,
    /// memorization.
    Assess(commands::assess::Args),
    /// Train the neural sampler on the built-in Gaussian mixtures.
    ToyMixture(commands::toy_mixture::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData(args) => commands::gen_data::run(args),
        Cmd::TrainGan(args) => commands::train_gan::run(args),
        Cmd::TrainInference(args) => commands::train_inference::run(args),
        Cmd::Sample(args) => commands::sample::run(args),
        Cmd::Assess(args) => commands::assess::run(args),
        Cmd::ToyMixture(args) => commands::toy_mixture::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
