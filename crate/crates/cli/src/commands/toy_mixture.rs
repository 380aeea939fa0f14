//! `toy-mixture`: train the neural sampler on the built-in Gaussian
//! mixtures and score the draw against the analytic density.

use crate::config::FileConfig;
use geogen::assess::js_divergence_masses;
use geogen::conditioner::{
    sample_latents, train_sampler, write_sampler_trace, MixtureTarget, SamplerConfig,
};
use geogen::data::{mixture_plot_range, sample_histogram_masses, GaussianMixture};
use geogen::{rng, Error, Result};
use std::io::Write;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// `1d` or `2d`.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    /// Points to draw from the trained sampler.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub const HIST_BINS: usize = 50;

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let case = cfg.resolve(args.case, "case", "1d".into())?;
    let gm = match case.as_str() {
        "1d" => GaussianMixture::toy_1d(),
        "2d" => GaussianMixture::toy_2d(),
        other => return Err(Error::usage(format!("unknown case `{other}` (1d or 2d)"))),
    };
    let default_points = if gm.dim() == 1 { 1000 } else { 4000 };
    let points = cfg.resolve(args.points, "points", default_points)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let sc = SamplerConfig {
        batch: cfg.resolve(args.batch, "batch", 256)?,
        k: cfg.resolve_opt(args.k, "k")?,
        lr: cfg.resolve(args.lr, "lr", 3e-3)?,
        beta1: 0.9,
        max_iters: cfg.resolve(args.iters, "iters", 1000)?,
        seed,
        n_w: gm.dim(),
        hidden: cfg.resolve(args.hidden, "hidden", 64)?,
        intermediate: cfg.resolve(args.depth, "depth", 3)?,
        use_entropy: true,
        early_stop_window: 0,
        early_stop_rel: 0.0,
    };
    cfg.finish()?;

    let mut target = MixtureTarget { gm: &gm };
    let (inet, trace) = train_sampler(&mut target, &sc)?;
    let samples_f32 = sample_latents(&inet, points, rng::derive(seed, "eval"))?;
    let samples: Vec<f64> = samples_f32.iter().map(|&v| v as f64).collect();

    std::fs::create_dir_all(&args.out)?;
    write_sampler_trace(&args.out.join("trace.csv"), &trace)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(args.out.join("samples.csv"))?);
    writeln!(f, "{}", (0..gm.dim()).map(|i| format!("z{i}")).collect::<Vec<_>>().join(","))?;
    for row in samples.chunks_exact(gm.dim()) {
        writeln!(f, "{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
    }
    f.flush()?;

    let score = match gm.dim() {
        1 => {
            let (lo, hi) = mixture_plot_range(&gm);
            let got = sample_histogram_masses(&samples, lo, hi, HIST_BINS);
            let want = gm.bin_masses_1d(lo, hi, HIST_BINS);
            let js = js_divergence_masses(&got, &want);

            let mut f =
                std::io::BufWriter::new(std::fs::File::create(args.out.join("histogram.csv"))?);
            writeln!(f, "bin_lo,bin_hi,count,analytic_mass")?;
            let width = (hi - lo) / HIST_BINS as f64;
            for (b, (&g, &w)) in got.iter().zip(&want).enumerate() {
                let count = (g * points as f64).round() as u64;
                writeln!(f, "{},{},{count},{w}", lo + b as f64 * width, lo + (b + 1) as f64 * width)?;
            }
            f.flush()?;
            println!("JS divergence vs analytic bin masses: {js:.4}");
            js
        }
        2 => {
            // fraction of samples nearest each component mean
            let means = gm.means();
            let mut counts = vec![0usize; means.len()];
            for p in samples.chunks_exact(2) {
                let nearest = means
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da = (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2);
                        let db = (p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2);
                        da.total_cmp(&db)
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                counts[nearest] += 1;
            }
            let mut f =
                std::io::BufWriter::new(std::fs::File::create(args.out.join("histogram.csv"))?);
            writeln!(f, "component,fraction")?;
            let mut dev = 0.0f64;
            for (i, &c) in counts.iter().enumerate() {
                let frac = c as f64 / points as f64;
                dev = dev.max((frac - 1.0 / 3.0).abs());
                writeln!(f, "{i},{frac}")?;
            }
            f.flush()?;
            println!("max component-fraction deviation from 1/3: {dev:.4}");
            dev
        }
        _ => unreachable!(),
    };
    std::fs::write(args.out.join("score.txt"), format!("{score}\n"))?;
    Ok(())
}
