use encdp::data::{synth_gaussian_blobs, Dataset};
use encdp::model::{evaluate_accuracy, Architecture, Mlp};
use encdp::trainer::fit_non_private;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backprop_matches_central_differences() {
    let arch = Architecture::new(vec![3, 3, 2]).unwrap();
    assert_eq!(arch.param_count(), 20);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    for point in 0..50 {
        let params: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let label = rng.random_range(0..2);
        let model = Mlp::from_params(arch.clone(), params.clone()).unwrap();
        let mut g = vec![0.0; 20];
        model.example_gradient(&x, label, &mut g).unwrap();
        let mut fd = vec![0.0; 20];
        for i in 0..20 {
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let lp = Mlp::from_params(arch.clone(), plus).unwrap().loss(&x, label).unwrap();
            let lm = Mlp::from_params(arch.clone(), minus).unwrap().loss(&x, label).unwrap();
            fd[i] = (lp - lm) / (2.0 * h);
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(diff <= 1e-4 * scale.max(1e-8), "point {point}: {g:?} vs {fd:?}");
    }
}

#[test]
fn untrained_model_scores_chance_on_random_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let dim = 20;
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let data = Dataset::new("random", dim, 10, features, labels).unwrap();
    let model = Mlp::he_init(Architecture::new(vec![dim, 16, 10]).unwrap(), 4);
    let acc = evaluate_accuracy(&model, &data).unwrap();
    assert!((acc - 0.10).abs() <= 0.01, "{acc}");
}

#[test]
fn separable_blobs_are_learned_without_privacy() {
    let train = synth_gaussian_blobs(10, 2000, 20, 1).unwrap();
    let test = synth_gaussian_blobs(10, 1000, 20, 2).unwrap();
    let mut model = Mlp::he_init(Architecture::new(vec![20, 10]).unwrap(), 3);
    fit_non_private(&mut model, &train, 30, 10, 0.5, 5).unwrap();
    let acc = evaluate_accuracy(&model, &test).unwrap();
    assert!(acc > 0.99, "{acc}");
}
