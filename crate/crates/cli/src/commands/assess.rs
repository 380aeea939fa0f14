//! `assess`: the quantitative comparison pipeline over realization sets.

use crate::config::FileConfig;
use geogen::assess::{
    anodi_scores, discriminator_histogram, js_divergence, memorization_check, smacof_mds,
    stats_histogram, write_anodi_csv, write_embedding_csv, write_histogram_csv,
    write_memorization_csv, AnodiReport, DEFAULT_MDS_ITERS, DEFAULT_MDS_TOL, DEFAULT_WINDOW,
};
use geogen::data::Dataset;
use geogen::layers::discriminator_from_checkpoint;
use geogen::{Error, Result};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Reference image (GEOD; image 0 is used).
    #[arg(long)]
    reference: PathBuf,
    /// Realization sets to assess, as `name=path.geod`; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Pattern window side.
    #[arg(long)]
    window: Option<usize>,
    /// Comma-separated downsampling factors.
    #[arg(long)]
    resolutions: Option<String>,
    /// Discriminator checkpoint for score histograms (classifier mode).
    #[arg(long)]
    disc: Option<PathBuf>,
    /// Training dataset for the memorization check.
    #[arg(long)]
    memorize_against: Option<PathBuf>,
    #[arg(long)]
    blur_sigma: Option<f64>,
    #[arg(long)]
    mds_iters: Option<usize>,
    #[arg(long)]
    mds_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Histogram bins for discriminator scores.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let window = cfg.resolve(args.window, "window", DEFAULT_WINDOW)?;
    let resolutions_raw =
        cfg.resolve(args.resolutions, "resolutions", "1,2,4,8".to_string())?;
    let mds_iters = cfg.resolve(args.mds_iters, "mds_iters", DEFAULT_MDS_ITERS)?;
    let mds_tol = cfg.resolve(args.mds_tol, "mds_tol", DEFAULT_MDS_TOL)?;
    let blur_sigma = cfg.resolve(args.blur_sigma, "blur_sigma", 1.0)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let bins = cfg.resolve(args.bins, "bins", 20)?;
    cfg.finish()?;

    let resolutions: Vec<usize> = resolutions_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::usage(format!("bad resolution `{s}`")))
        })
        .collect::<Result<_>>()?;
    if args.sets.is_empty() {
        return Err(Error::usage("at least one --set name=path is required"));
    }

    let reference = Dataset::load(&args.reference)?;
    let ref_img = reference.image(0);
    let ref_dims = (reference.height(), reference.width());

    let mut sets: Vec<(String, Dataset)> = Vec::new();
    for spec in &args.sets {
        let Some((name, path)) = spec.split_once('=') else {
            return Err(Error::usage(format!("--set expects name=path, got `{spec}`")));
        };
        sets.push((name.to_string(), Dataset::load(std::path::Path::new(path))?));
    }

    std::fs::create_dir_all(&args.out)?;

    // ANODI per set
    let mut reports: Vec<(String, AnodiReport)> = Vec::new();
    for (name, data) in &sets {
        let images: Vec<&[f32]> = (0..data.count()).map(|i| data.image(i)).collect();
        let report = anodi_scores(
            &images,
            (data.height(), data.width()),
            ref_img,
            ref_dims,
            &resolutions,
            window,
        )?;
        reports.push((name.clone(), report));
    }
    write_anodi_csv(&args.out.join("anodi.csv"), &reports)?;

    // MDS embedding of every image (all sets + the reference) using
    // full-resolution pattern-histogram divergences as distances.
    let mut labels: Vec<(String, usize)> = vec![("reference".into(), 0)];
    let mut hists = vec![stats_histogram(ref_img, ref_dims, 1, window)?];
    for (name, data) in &sets {
        for i in 0..data.count() {
            labels.push((name.clone(), i));
            hists.push(stats_histogram(
                data.image(i),
                (data.height(), data.width()),
                1,
                window,
            )?);
        }
    }
    let n = hists.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = js_divergence(&hists[i], &hists[j])?;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let embedding = smacof_mds(&dist, n, mds_iters, mds_tol, seed)?;
    let rows: Vec<(String, usize, f64, f64)> = labels
        .into_iter()
        .zip(&embedding.points)
        .map(|((m, i), &(x, y))| (m, i, x, y))
        .collect();
    write_embedding_csv(&args.out.join("embedding.csv"), &rows)?;
    println!(
        "MDS stress {} after {} iterations over {n} images",
        embedding.stress, embedding.iterations
    );

    if let Some(path) = &args.disc {
        let mut disc = discriminator_from_checkpoint(path)?;
        for (name, data) in &sets {
            let hist = discriminator_histogram(&mut disc, data.images(), bins)?;
            write_histogram_csv(&args.out.join(format!("disc_hist_{name}.csv")), &hist)?;
            println!("{name}: score mean {:.4}, variance {:.5}", hist.mean, hist.variance);
        }
    }

    if let Some(path) = &args.memorize_against {
        let train = Dataset::load(path)?;
        for (name, data) in &sets {
            let images: Vec<&[f32]> = (0..data.count()).map(|i| data.image(i)).collect();
            let report = memorization_check(&images, &train, blur_sigma)?;
            write_memorization_csv(
                &args.out.join(format!("memorization_{name}.csv")),
                &report,
            )?;
            let min = report.rows.iter().map(|r| r.distance).fold(f64::INFINITY, f64::min);
            println!("{name}: nearest augmented-neighbor distance {min:.4}");
        }
    }

    for (name, report) in &reports {
        for row in &report.rows {
            println!(
                "{name} x1/{}: inconsistency {:.4}, diversity {:.4}",
                row.resolution, row.inconsistency, row.diversity
            );
        }
    }
    Ok(())
}
