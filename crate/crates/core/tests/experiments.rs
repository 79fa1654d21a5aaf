use depthpose::ransac::{EstimationConfig, Variant};
use depthpose::synth::{run_hybrid_ablation, run_noise_sweep, run_shift_ablation, Corpus, Method, SceneSpec};

fn quick() -> EstimationConfig {
    EstimationConfig { min_iterations: 200, ..Default::default() }
}

#[test]
fn shift_ablation_cardinality() {
    let spec = SceneSpec { n_points: 80, outlier_fraction: 0.1, seed: 1, ..Default::default() };
    let ex = run_shift_ablation(&spec, &[0.0, 0.5], &[Method::FULL, Method::ScaleOnly], 3, &quick()).unwrap();
    assert_eq!(ex.records.len(), 12);
    assert_eq!(ex.table.len(), 4);
    assert!(ex.cell(0.5, "scale-only").is_some());
}

#[test]
fn trials_do_not_depend_on_thread_count() {
    let spec = SceneSpec { n_points: 80, outlier_fraction: 0.2, seed: 2, ..Default::default() };
    let corpora = Corpus::standard();
    let variants = [Variant::HYBRID, Variant::POINT_ONLY];
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_hybrid_ablation(&spec, &corpora, &variants, 4, &quick()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn zero_shift_methods_are_tied() {
    // Priors carry 3% log-normal noise, like sensor depth.
    let spec = SceneSpec { outlier_fraction: 0.2, depth_noise_sigma: 0.03, seed: 3, ..Default::default() };
    let methods = [Method::FULL, Method::ScaleOnly, Method::Pnp];
    let ex = run_shift_ablation(&spec, &[0.0], &methods, 40, &EstimationConfig::default()).unwrap();
    for a in &ex.table {
        for b in &ex.table {
            assert!(a.median_rotation <= 2.0 * b.median_rotation, "{a:?} {b:?}");
            assert!(a.median_translation <= 2.0 * b.median_translation, "{a:?} {b:?}");
        }
    }
}

#[test]
fn more_pixel_noise_does_not_help() {
    let spec = SceneSpec { outlier_fraction: 0.1, seed: 4, ..Default::default() };
    let ex = run_noise_sweep(&spec, &[0.5, 1.0, 2.0], &[Method::FULL], 40, &quick()).unwrap();
    let rot: Vec<f64> = ex.table.iter().map(|c| c.median_rotation).collect();
    assert!(rot.windows(2).all(|w| w[0] <= w[1]), "{rot:?}");
}
