use trailmark::autoencoder::{encode, grid_search_ae, pooled_len, train_autoencoder, AEHyper};
use trailmark::preprocess::SampleTensor;

/// Smooth phase-shifted waves, one sample per phase.
fn waves(n: usize, m: usize) -> SampleTensor {
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let phase = s as f64 * 0.7;
            (0..4)
                .flat_map(|c| (0..m).map(move |t| 0.5 + 0.3 * (t as f64 * 0.2 + phase + c as f64).sin()))
                .collect()
        })
        .collect();
    SampleTensor::from_samples(4, m, &samples)
}

#[test]
fn trained_config_beats_untrained() {
    let data = waves(10, 32);
    let grid = [AEHyper::new(4, 4, 1e-2, 0, 4, 0), AEHyper::new(4, 4, 1e-2, 60, 4, 0)];
    let r = grid_search_ae(&data, &grid, 0.2, 3).unwrap();
    assert_eq!(r.best.epochs, 60);
    assert!(r.candidates[1].holdout_mae < r.candidates[0].holdout_mae);
    assert_eq!(r.holdout_indices.len(), 2);
    assert_eq!(r.train_indices.len(), 8);
}

#[test]
fn training_reduces_loss_and_encodes_all_samples() {
    let data = waves(6, 24);
    let t = train_autoencoder(&data, &AEHyper::new(3, 2, 1e-2, 40, 2, 9)).unwrap();
    assert_eq!(t.loss_curve.len(), 40);
    assert!(t.loss_curve[39] < t.loss_curve[0]);
    let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
    let v = encode(&t.params, &data, &ids, false).unwrap();
    assert_eq!(v.len(), 6);
    assert!(v.iter().all(|mv| mv.values.len() == 2 * pooled_len(24) && mv.values.iter().all(|x| x.is_finite())));
}
