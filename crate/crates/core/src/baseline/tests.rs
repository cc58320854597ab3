use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::templates;

fn cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::new((0..n).map(|_| [(); 3].map(|_| rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

fn gt(class_id: usize, t: Point3) -> GroundTruth {
    GroundTruth {
        class_id,
        transform: RigidTransform::from_translation(t),
    }
}

fn random_bank(n: usize, points: usize, rng: &mut ChaCha8Rng) -> (TrainBank, Vec<PointCloud>) {
    let clouds: Vec<PointCloud> = (0..n).map(|_| cloud(points, rng)).collect();
    let entries = clouds
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), gt(i % 3, [i as f64, 0.0, 0.0])))
        .collect();
    (TrainBank::new(entries).unwrap(), clouds)
}

#[test]
fn exact_query_returns_its_entry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (bank, clouds) = random_bank(20, 30, &mut rng);
    let m = nn_retrieve(&clouds[7], &bank, None).unwrap();
    assert_eq!((m.index, m.distance, m.class_id), (7, 0.0, 1));
    assert_eq!(m.transform.translation_array(), [7.0, 0.0, 0.0]);
}

#[test]
fn nearer_entry_wins_and_ties_go_low() {
    let a = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
    let b = PointCloud::new(vec![[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]).unwrap();
    let bank = TrainBank::new(vec![(a.clone(), gt(0, [0.0; 3])), (b, gt(1, [1.0; 3]))]).unwrap();
    let q = PointCloud::new(vec![[0.0, 0.8, 0.0], [1.0, 0.8, 0.0]]).unwrap();
    assert_eq!(nn_retrieve(&q, &bank, None).unwrap().index, 1);
    let dup = TrainBank::new(vec![(a.clone(), gt(0, [0.0; 3])), (a.clone(), gt(0, [1.0; 3]))]).unwrap();
    assert_eq!(nn_retrieve(&a, &dup, None).unwrap().index, 0);
}

#[test]
fn retrieval_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (bank, clouds) = random_bank(500, 40, &mut rng);
    for _ in 0..10 {
        let q = cloud(40, &mut rng);
        let mut best = (f64::INFINITY, 0);
        for (i, c) in clouds.iter().enumerate() {
            let mut d = 0.0;
            for (p, r) in q.points().iter().zip(c.points()) {
                for k in 0..3 {
                    d += (p[k] - r[k]) * (p[k] - r[k]);
                }
            }
            if d < best.0 {
                best = (d, i);
            }
        }
        let m = nn_retrieve(&q, &bank, None).unwrap();
        assert_eq!(m.index, best.1);
        assert!((m.distance - best.0.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn class_filter_is_respected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (bank, _) = random_bank(60, 10, &mut rng);
    for _ in 0..20 {
        let q = cloud(10, &mut rng);
        for c in 0..3 {
            assert_eq!(nn_retrieve(&q, &bank, Some(c)).unwrap().class_id, c);
        }
    }
    assert!(nn_retrieve(&cloud(10, &mut rng), &bank, Some(5)).is_err());
}

#[test]
fn mismatched_query_is_not_applicable() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (bank, _) = random_bank(5, 10, &mut rng);
    let err = nn_retrieve(&cloud(11, &mut rng), &bank, None).unwrap_err();
    assert!(matches!(err, Error::NotApplicable(_)), "{err}");
    assert!(TrainBank::new(vec![]).is_err());
}

#[test]
fn confusion_examples() {
    let m = confusion_matrix(&[(0, 0), (1, 1), (2, 2), (1, 1)], 3).unwrap();
    assert_eq!(m, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
    let m = confusion_matrix(&[(0, 2)], 3).unwrap();
    assert_eq!(m[0][2], 1);
    assert_eq!(m.iter().flatten().sum::<usize>(), 1);
    assert!(confusion_matrix(&[(0, 3)], 3).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(usize, usize)> = (0..300).map(|_| (rng.gen_range(0..4), rng.gen_range(0..4))).collect();
    let m = confusion_matrix(&pairs, 4).unwrap();
    for k in 0..4 {
        assert_eq!(m[k].iter().sum::<usize>(), pairs.iter().filter(|p| p.0 == k).count());
    }
    let n = normalize_confusion(&m);
    for row in &n {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(normalize_confusion(&[vec![0, 0]]), vec![vec![0.0, 0.0]]);
}

fn test_templates() -> Vec<ObjectTemplate> {
    vec![
        ObjectTemplate::new(0, "cube", templates::box_mesh([0.3, 0.3, 0.3], 1), 8, 1).unwrap(),
        ObjectTemplate::new(1, "ball", templates::icosphere(0.1, 1), 8, 2).unwrap(),
    ]
}

fn samples(n: usize, rng: &mut ChaCha8Rng) -> Vec<EvalSample> {
    (0..n)
        .map(|i| EvalSample {
            sequence: i / 4,
            frame: i % 4,
            cloud: cloud(5, rng),
            gt: Some(GroundTruth {
                class_id: (i / 4) % 2,
                transform: RigidTransform::from_axis_angle(
                    [rng.gen(), 1.0, rng.gen()],
                    rng.gen_range(-3.0..3.0),
                    [rng.gen(), rng.gen(), rng.gen()],
                ),
            }),
        })
        .collect()
}

fn perfect(s: &[EvalSample]) -> Vec<EvalPrediction> {
    s.iter()
        .map(|s| {
            let g = s.gt.unwrap();
            let mut d = vec![0.0; 2];
            d[g.class_id] = 1.0;
            EvalPrediction {
                class_id: g.class_id,
                transform: g.transform,
                class_distribution: Some(d),
            }
        })
        .collect()
}

#[test]
fn perfect_predictor_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = samples(12, &mut rng);
    let t = test_templates();
    let r = evaluate("oracle", &s, &perfect(&s), EvalMode::GivenClass, &t).unwrap();
    assert_eq!((r.e_c, r.e_v2v), (0.0, Some(0.0)));
    let r = evaluate("oracle", &s, &perfect(&s), EvalMode::PredictedClass, &t).unwrap();
    assert_eq!((r.e_c, r.e_ch, r.accuracy, r.sequence_accuracy), (0.0, Some(0.0), Some(100.0), Some(100.0)));
    let m = r.confusion.unwrap();
    assert_eq!(m[0][1] + m[1][0], 0);
}

#[test]
fn constant_center_offset_gives_that_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = samples(10, &mut rng);
    let p: Vec<EvalPrediction> = perfect(&s)
        .into_iter()
        .map(|mut p| {
            p.transform.translation.x += 0.01;
            p
        })
        .collect();
    let r = evaluate("shifted", &s, &p, EvalMode::GivenClass, &test_templates()).unwrap();
    assert!((r.e_c - 0.01).abs() < 1e-15);
    // every vertex moves by 1 cm
    let n = test_templates()[0].mesh.vertices.len() as f64;
    assert!((r.per_sample[0].e_v2v.unwrap() - 0.01 * n.sqrt()).abs() < 1e-12);
}

#[test]
fn evaluation_ignores_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = samples(24, &mut rng);
    let p: Vec<EvalPrediction> = perfect(&s)
        .into_iter()
        .map(|mut p| {
            p.transform.translation.y += rng.gen_range(-0.1..0.1);
            p.class_id = rng.gen_range(0..2);
            p
        })
        .collect();
    let t = test_templates();
    let base = evaluate("x", &s, &p, EvalMode::PredictedClass, &t).unwrap();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    for _ in 0..5 {
        idx.shuffle(&mut rng);
        let s2: Vec<EvalSample> = idx.iter().map(|&i| s[i].clone()).collect();
        let p2: Vec<EvalPrediction> = idx.iter().map(|&i| p[i].clone()).collect();
        let r = evaluate("x", &s2, &p2, EvalMode::PredictedClass, &t).unwrap();
        assert!((r.e_c - base.e_c).abs() <= 1e-12);
        assert!((r.e_ch.unwrap() - base.e_ch.unwrap()).abs() <= 1e-12);
        assert_eq!(r.accuracy, base.accuracy);
        assert_eq!(r.confusion, base.confusion);
    }
}

#[test]
fn missing_ground_truth_is_skipped_and_counted() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = samples(6, &mut rng);
    let p = perfect(&s);
    s[2].gt = None;
    let r = evaluate("x", &s, &p, EvalMode::GivenClass, &test_templates()).unwrap();
    assert_eq!((r.samples, r.skipped), (5, 1));
}

#[test]
fn voting_can_fix_isolated_mistakes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = samples(8, &mut rng);
    let mut p = perfect(&s);
    // one wrong frame in each sequence
    for i in [0, 4] {
        let wrong = 1 - p[i].class_id;
        p[i].class_id = wrong;
        p[i].class_distribution = Some(if wrong == 0 { vec![0.9, 0.1] } else { vec![0.1, 0.9] });
    }
    let r = evaluate("x", &s, &p, EvalMode::PredictedClass, &test_templates()).unwrap();
    assert_eq!(r.accuracy, Some(75.0));
    assert_eq!(r.sequence_accuracy, Some(100.0));
}

#[test]
fn chamfer_never_exceeds_the_fixed_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = &test_templates()[0];
    for _ in 0..50 {
        let a = RigidTransform::from_axis_angle([rng.gen(), rng.gen(), 1.0], rng.gen_range(-3.0..3.0), [rng.gen(), 0.0, 0.0]);
        let b = RigidTransform::from_axis_angle([1.0, rng.gen(), rng.gen()], rng.gen_range(-0.3..0.3), [rng.gen(), 0.1, 0.0]);
        let (va, vb) = (a.apply_all(&t.mesh.vertices), b.compose(&a).apply_all(&t.mesh.vertices));
        let matched = va.iter().zip(&vb).map(|(x, y)| dist2(x, y).sqrt()).sum::<f64>() / va.len() as f64;
        assert!(chamfer_distance(&va, &vb).unwrap() <= 2.0 * matched + 1e-12);
    }
}

#[test]
fn report_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = samples(8, &mut rng);
    let r = evaluate("oracle", &s, &perfect(&s), EvalMode::PredictedClass, &test_templates()).unwrap();
    let text = r.to_text();
    assert!(text.contains("accuracy (%)") && text.contains("cube"));
    let csv = r.confusion_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap(), "gt\\pred,cube,ball");
    assert_eq!(csv.lines().count(), 3);
    let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path(), "report").unwrap();
    assert!(dir.path().join("report_confusion.csv").exists());
}

#[test]
fn mode_parsing() {
    assert_eq!("given-class".parse::<EvalMode>().unwrap(), EvalMode::GivenClass);
    assert_eq!("predicted-class".parse::<EvalMode>().unwrap(), EvalMode::PredictedClass);
    assert!("both".parse::<EvalMode>().is_err());
}
