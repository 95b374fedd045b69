#![cfg(feature = "parallel")]

use std::sync::Arc;

use abcr::baselines::PriorSpec;
use abcr::godambe::MEstimate;
use abcr::harness::{fit_abcr, AbcrSettings};
use abcr::lmm::{LmmDesign, LmmModel, LmmTheta};
use abcr::numerics::RngStream;
use abcr::{EstimatingFunctionModel, TuningConstants};

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn thread_count_does_not_change_results() {
    let design = Arc::new(LmmDesign::one_way(20, 3).unwrap());
    let model = LmmModel::new(design, TuningConstants::default());
    let theta = LmmTheta { alpha: vec![1.0, 0.5, -0.5], sigma1_sq: 1.5, sigma2_sq: 0.8 }.to_vector();
    let y = model.simulate(&theta, &mut RngStream::new(3, 0));
    let rng = RngStream::new(4, 0);
    let run = |threads: usize| {
        pool(threads).install(|| {
            let est = MEstimate::monte_carlo(&model, &y, 100, 1e-4, &rng).unwrap();
            let settings = AbcrSettings { nsim: 100, n_iter: 5000, burn_in: 500, pilot_iter: 3000, ..AbcrSettings::default() };
            let fit = fit_abcr(&model, &y, &PriorSpec::lmm_default(3), &settings, &rng).unwrap();
            let mut csv = Vec::new();
            fit.chain.write_csv(&mut csv).unwrap();
            (est.k.matrix().clone(), csv)
        })
    };
    let (k1, c1) = run(1);
    let (k4, c4) = run(4);
    assert_eq!(k1, k4);
    assert_eq!(c1, c4);
}
