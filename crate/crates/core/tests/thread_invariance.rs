use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqpen::tasks::enc_dec::{EncDecModel, EncDecTask};
use seqpen::tasks::idx::{ImageDataset, Split};
use seqpen::{penalty_grad_full, sgd_run, PenaltyKind, PenaltySpec, SgdConfig};

fn task() -> EncDecTask {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let images = Array2::from_shape_fn((n, 30), |_| rng.gen_range(0.0..1.0));
    let labels = (0..n).map(|i| (i % 5) as u8).collect();
    let ds = ImageDataset::new(images, labels, Split::Train).unwrap();
    EncDecTask::with_model(EncDecModel::new(30, 16, 6, 5).unwrap(), Arc::new(ds), 0.02).unwrap()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let t = task();
    let x = t.model().init_params(2);
    let spec = PenaltySpec::new(PenaltyKind::Linear, 10.0).unwrap();
    let cfg = SgdConfig::practical(1e-3, 32, 2, 9);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let run = |pool: &rayon::ThreadPool| {
        pool.install(|| {
            let g = penalty_grad_full(&t, &spec, &x).unwrap();
            let r = sgd_run(&t, &spec, &x, &cfg).unwrap();
            (g, r.candidate.into_inner())
        })
    };
    let (g1, x1) = run(&single);
    let (g4, x4) = run(&many);
    assert!(g1.iter().zip(&g4).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(x1.iter().zip(&x4).all(|(a, b)| a.to_bits() == b.to_bits()));
}
