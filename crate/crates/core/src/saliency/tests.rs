use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::templates;
use crate::model::tests::tiny_config;

fn template() -> ObjectTemplate {
    ObjectTemplate::new(0, "c0", templates::box_mesh([0.3, 0.3, 0.3], 1), 6, 40).unwrap()
}

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(0.0..1.7), rng.gen_range(-0.2..0.2)])
            .collect(),
    )
    .unwrap()
}

fn gt() -> RigidTransform {
    RigidTransform::from_axis_angle([0.0, 1.0, 0.0], 0.4, [0.1, 0.8, 0.05])
}

fn offset_loss(net: &PopupNetwork, t: &ObjectTemplate, pts: Vec<Point3>) -> f64 {
    saliency_scores(net, t, &PointCloud::new(pts).unwrap(), &gt()).unwrap().loss
}

#[test]
fn scores_agree_with_finite_differences_toward_the_median() {
    let net = PopupNetwork::new(tiny_config(), 11).unwrap();
    let t = template();
    let c = cloud(40, 2);
    let s = saliency_scores(&net, &t, &c, &gt()).unwrap();
    let h = 1e-6;
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].abs().total_cmp(&s.scores[a].abs()));
    let top = &order[..c.len() / 10];
    let mut agree = 0;
    for &i in top {
        let p = c.points()[i];
        let r = [0, 1, 2].map(|a| p[a] - s.median[a]);
        let nr = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        let shifted = |sign: f64| {
            let mut pts = c.points().to_vec();
            pts[i] = [0, 1, 2].map(|a| p[a] - sign * h * r[a] / nr);
            offset_loss(&net, &t, pts)
        };
        // derivative of the loss along -r/|r|; the score is |r|^2 times it
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        if fd.signum() == s.scores[i].signum() && (fd * nr * nr - s.scores[i]).abs() <= 1e-4 * s.scores[i].abs() + 1e-8 {
            agree += 1;
        }
    }
    assert!(agree * 10 >= top.len() * 9, "{agree} of {}", top.len());
}

#[test]
fn score_formula_examples() {
    let m = [1.0, 0.0, 0.0];
    let pts = [[3.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 4.0], [2.0, 5.0, 0.0]];
    let g = [[0.5, 9.0, 0.0], [7.0, 7.0, 7.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
    // r = (2,0,0): -2 * 1 ; r = 0 ; zero gradients
    assert_eq!(point_scores(&pts, &m, &g), vec![-2.0, 0.0, 0.0, 0.0]);
    let g = [[-1.0, 0.0, 0.0], [0.0; 3], [0.0, 0.0, -0.25], [0.0; 3]];
    assert_eq!(point_scores(&pts, &m, &g), vec![4.0, 0.0, 4.0, 0.0]);
}

#[test]
fn point_at_the_median_scores_zero() {
    let net = PopupNetwork::new(tiny_config(), 4).unwrap();
    // symmetric pairs around c put the median exactly on c
    let c0 = [0.05, 0.85, -0.02];
    let half = cloud(15, 5).into_points();
    let mut pts: Vec<Point3> = half.iter().map(|p| [0, 1, 2].map(|a| 2.0 * c0[a] - p[a])).collect();
    pts.splice(7..7, [c0]);
    pts.extend(half);
    let c = PointCloud::new(pts).unwrap();
    let s = saliency_scores(&net, &template(), &c, &gt()).unwrap();
    assert_eq!(s.median, c0);
    assert_eq!(s.scores[7], 0.0);
}

#[test]
fn duplicates_share_and_unsampled_points_get_zero_gradient() {
    let net = PopupNetwork::new(tiny_config(), 4).unwrap();
    let mut pts = cloud(30, 8).into_points();
    pts.push(pts[3]);
    let s = saliency_scores(&net, &template(), &PointCloud::new(pts).unwrap(), &gt()).unwrap();
    assert_eq!(s.gradients[3], s.gradients[30]);

    // 200 distinct points, 48 network inputs: the rest receive no gradient
    let big = cloud(200, 9);
    let s = saliency_scores(&net, &template(), &big, &gt()).unwrap();
    let zero = s.gradients.iter().filter(|g| **g == [0.0; 3]).count();
    assert!(zero >= 200 - 48, "{zero}");
}

#[test]
fn scores_follow_a_permutation_of_the_cloud() {
    let net = PopupNetwork::new(tiny_config(), 6).unwrap();
    let t = template();
    let c = cloud(40, 3);
    let base = saliency_scores(&net, &t, &c, &gt()).unwrap();
    let mut perm: Vec<usize> = (0..40).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let s = saliency_scores(&net, &t, &c.select(&perm), &gt()).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(s.scores[k], base.scores[i]);
    }
}

#[test]
fn iteration_moves_exactly_the_selected_points() {
    let net = PopupNetwork::new(tiny_config(), 6).unwrap();
    let t = template();
    let c = cloud(250, 4);
    let cfg = SaliencyConfig::default();
    let res = saliency_iterate(&net, &t, &c, &gt(), &cfg).unwrap();
    assert_eq!(res.touched.len(), 10);
    assert_eq!(res.losses.len(), 11);
    let mut prev = c.clone();
    for it in 0..10 {
        let chosen = &res.touched[it];
        assert_eq!(chosen.len(), 3);
        // selection is the top of the scores, ties to the lower index
        let scores = &res.scores[it];
        let worst = chosen.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for i in 0..250 {
            if !chosen.contains(&i) {
                assert!(scores[i] < worst || (scores[i] == worst && chosen.iter().all(|&j| j < i || scores[j] > worst)));
            }
        }
        let m = coordinate_median(prev.points()).unwrap();
        assert_eq!(res.medians[it], m);
        let next = &res.clouds[it];
        for i in 0..250 {
            let p = prev.points()[i];
            if chosen.contains(&i) {
                let want = [0, 1, 2].map(|a| p[a] - 0.05 * (p[a] - m[a]));
                assert_eq!(next.points()[i], want);
            } else {
                assert_eq!(next.points()[i], p);
            }
        }
        prev = next.clone();
    }
    assert!(res.touched_union().len() <= 30);
}

#[test]
fn rejects_bad_fraction() {
    let net = PopupNetwork::new(tiny_config(), 6).unwrap();
    let cfg = SaliencyConfig {
        fraction: 0.0,
        ..Default::default()
    };
    assert!(saliency_iterate(&net, &template(), &cloud(20, 1), &gt(), &cfg).is_err());
}

#[test]
fn export_writes_scores_mask_and_trace() {
    let net = PopupNetwork::new(tiny_config(), 6).unwrap();
    let c = cloud(60, 4);
    let cfg = SaliencyConfig {
        iterations: 2,
        ..Default::default()
    };
    let res = saliency_iterate(&net, &template(), &c, &gt(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_saliency(&res, &c, dir.path()).unwrap();
    let ply = crate::io::read_ply(&dir.path().join("scores.ply")).unwrap();
    assert_eq!(ply.points, c.points());
    assert_eq!(ply.scalars["saliency"], res.scores[0]);
    let touched: Vec<Vec<usize>> =
        serde_json::from_slice(&std::fs::read(dir.path().join("touched.json")).unwrap()).unwrap();
    assert_eq!(touched, res.touched);
    let trace = std::fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}
