use geogen::assess::{binarize_clean, DEFAULT_MIN_SIZE};
use geogen::conditioner::*;
use geogen::layers::generator_from_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let gen_path = &args[1];
    let iters: usize = args[2].parse().unwrap();
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(21);
    let mut gen = generator_from_checkpoint(std::path::Path::new(gen_path)).unwrap();
    let size = gen.image_size();
    let obs = Observations::example_a().scaled_to(size, size).unwrap();
    let spec = PosteriorSpec::new(obs.clone(), 0.1).unwrap();
    let t0 = std::time::Instant::now();
    let cfg = SamplerConfig { max_iters: iters, ..SamplerConfig::paper(gen.latent_dim(), seed) };
    let (inet, trace) = {
        let mut target = PosteriorTarget { gen: &mut gen, spec };
        train_sampler(&mut target, &cfg).unwrap()
    };
    println!("trained {} iters in {:.0}s, final objective {:.3}", trace.len(), t0.elapsed().as_secs_f64(), trace.last().unwrap().objective);
    let px = size * size;
    let realizations = sample_conditional(&mut gen, &inet, 100, 5).unwrap();
    let need = (0.9 * obs.len() as f64).ceil() as usize;
    let mut honoring = 0;
    let mut sign_honoring = 0;
    let mut hist = vec![0usize; obs.len() + 1];
    let mut per_obs = vec![0usize; obs.len()];
    let mut cont_sum = vec![0f64; obs.len()];
    for img in realizations.chunks_exact(px) {
        let binary = binarize_clean(img, size, size, DEFAULT_MIN_SIZE).unwrap();
        let honored = obs.points().iter().filter(|&&(r, c, v)| (binary[r * size + c] == 1) == (v > 0.0)).count();
        hist[honored] += 1;
        if honored >= need { honoring += 1; }
        let sign_ok = obs.points().iter().filter(|&&(r, c, v)| (img[r * size + c] > 0.0) == (v > 0.0)).count();
        if sign_ok >= need { sign_honoring += 1; }
        for (i, &(r, c, v)) in obs.points().iter().enumerate() {
            if (binary[r * size + c] == 1) != (v > 0.0) { per_obs[i] += 1; }
            cont_sum[i] += img[r * size + c] as f64;
        }
    }
    println!("honoring (>= {need}/{}): {honoring}/100 (sign-based: {sign_honoring}/100)", obs.len());
    println!("distribution: {hist:?}");
    println!("per-obs violation counts:");
    for (i, &(r, c, v)) in obs.points().iter().enumerate() {
        println!("  obs {i} ({r},{c},{v:+.0}): violated {}x, mean value {:.3}", per_obs[i], cont_sum[i] / 100.0);
    }
}
