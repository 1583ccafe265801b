use softpose::codec::{decode, encode, encode_multi};
use softpose::rotation::geodesic_angle;
use softpose::seeding::item_rng;
use softpose::toyhead::{self, make_toy_dataset, median, symmetric_equivalents, toy_features, TrainConfig};
use softpose::{build_grid, default_merge_tolerance, EmConfig, KernelParams, OrientationGrid, SoftAssignment};

const SEED: u64 = 7;

fn setup() -> (OrientationGrid, KernelParams) {
    (build_grid(16, default_merge_tolerance(16)).unwrap(), KernelParams::new(6.0, 16).unwrap())
}

fn l1(a: &SoftAssignment, b: &SoftAssignment) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum()
}

#[test]
fn asymmetric_body_is_learned_to_codec_accuracy() {
    let (grid, params) = setup();
    let train_set = make_toy_dataset(2000, 1, &mut item_rng(SEED, 0)).unwrap();
    let test_set = make_toy_dataset(200, 1, &mut item_rng(SEED, 1)).unwrap();
    let trained = toyhead::train(&train_set, &grid, &params, &TrainConfig::default(), &mut item_rng(SEED, 2)).unwrap();
    let ev = toyhead::evaluate(&trained.head, &grid, &test_set, &EmConfig::for_kernel(&params)).unwrap();

    let roundtrip: Vec<f64> = test_set
        .labels
        .iter()
        .map(|q| geodesic_angle(q, &decode(&grid, &encode(&grid, q, &params)).unwrap()).to_degrees())
        .collect();
    let bound = roundtrip.iter().sum::<f64>() / roundtrip.len() as f64;
    let top1 = ev.top1_median_deg();
    println!("s=1 top-1 median {top1:.2} deg, codec roundtrip mean {bound:.2} deg");
    assert!(top1 < 2.0 * bound);
    assert!(trained.epoch_losses.last() < trained.epoch_losses.first());
}

#[test]
fn symmetric_body_output_leans_toward_the_mixture_target() {
    let (grid, params) = setup();
    let s = 2;
    let train_set = make_toy_dataset(2000, s, &mut item_rng(SEED, 0)).unwrap();
    let test_set = make_toy_dataset(100, s, &mut item_rng(SEED, 1)).unwrap();
    let trained = toyhead::train(&train_set, &grid, &params, &TrainConfig::default(), &mut item_rng(SEED, 2)).unwrap();
    let em = EmConfig::for_kernel(&params);

    let (mut to_mixture, mut to_single) = (0.0, 0.0);
    let mut multimodal = 0;
    let mut top2_errors = Vec::new();
    for q in &test_set.labels {
        let out = trained.head.predict(&grid, &toy_features(q, s)).unwrap();
        let equivalents: Vec<_> = symmetric_equivalents(q, s).into_iter().map(|e| (e, 1.0 / s as f64)).collect();
        to_mixture += l1(&out, &encode_multi(&grid, &equivalents, &params).unwrap());
        to_single += l1(&out, &encode(&grid, q, &params));

        let means = toyhead::top2(&grid, &out, &em).unwrap();
        if means.len() >= 2 {
            multimodal += 1;
        }
        let nearest = means.iter().map(|m| geodesic_angle(m, q)).fold(f64::INFINITY, f64::min);
        top2_errors.push(nearest.to_degrees());
    }
    let n = test_set.len() as f64;
    println!(
        "s=2 mean L1 to mixture target {:.3}, to single-label target {:.3}, multimodal {multimodal}/{}",
        to_mixture / n,
        to_single / n,
        test_set.len()
    );
    assert!(to_mixture < to_single);
    assert!(multimodal as f64 >= 0.9 * n);
    assert!(median(&top2_errors) < 30.0);
}
