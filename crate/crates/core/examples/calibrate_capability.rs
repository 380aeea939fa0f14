use geogen::assess::{binarize_clean, DEFAULT_MIN_SIZE};
use geogen::conditioner::*;
use geogen::layers::generator_from_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut gen = generator_from_checkpoint(std::path::Path::new(&args[1])).unwrap();
    let restarts: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(16);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(300);
    let size = gen.image_size();
    let obs = Observations::example_a().scaled_to(size, size).unwrap();
    let spec = PosteriorSpec::new(obs.clone(), 0.1).unwrap();
    let mins = optimize_conditional(&mut gen, None, &spec, CondLoss::GaussianPrior, restarts, iters, 0.05, 3).unwrap();
    let mut best_honor = 0;
    for m in &mins {
        use geogen::autodiff::{Tape, Tensor};
        use geogen::layers::Mode;
        let z = Tensor::<f32>::new(vec![1, gen.latent_dim()], m.z.clone()).unwrap();
        let mut tape = Tape::new();
        let zid = tape.leaf(&z);
        let (img, _) = gen.forward(&mut tape, zid, Mode::Eval, false).unwrap();
        let img = tape.value(img).to_vec();
        let binary = binarize_clean(&img, size, size, DEFAULT_MIN_SIZE).unwrap();
        let honored = obs.points().iter().filter(|&&(r, c, v)| (binary[r * size + c] == 1) == (v > 0.0)).count();
        best_honor = best_honor.max(honored);
        println!("restart: loss {:.3} (from {:.3}), honored {honored}/16", m.loss, m.initial_loss);
    }
    println!("best honored: {best_honor}/16");
}
