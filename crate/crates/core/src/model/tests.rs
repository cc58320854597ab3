use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{PointCloud, RigidTransform};
use crate::tensor::{Graph, Tensor};

pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        input_points: 48,
        num_keypoints: 6,
        global_levels: vec![SaLevel::new(12, 5, &[8, 8]), SaLevel::new(4, 4, &[12])],
        global_widths: vec![16],
        center_widths: vec![8],
        local_k: 20,
        local_level: SaLevel::new(8, 4, &[8]),
        local_widths: vec![8, 6],
        interp_neighbors: 3,
        decoder_layers: 2,
        decoder_width: 10,
        posenc_bands: 2,
        class_head: true,
        class_widths: vec![8],
        direct_rt: false,
        direct_widths: vec![8],
        no_local_features: false,
    }
}

fn cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.7), rng.gen_range(-0.3..0.3)]).collect()
}

fn keypoints(n: usize) -> Vec<Point3> {
    (0..n).map(|i| {
        let a = i as f64 * 1.3;
        [0.1 * a.cos(), 0.05 * (i as f64 - 2.0), 0.1 * a.sin()]
    }).collect()
}

#[test]
fn class_encoding_is_one_hot() {
    let c = ClassEncoding::new(2, 4).unwrap();
    assert_eq!(c.one_hot(), &[0.0, 0.0, 1.0, 0.0]);
    assert!(ClassEncoding::new(4, 4).is_err());
}

#[test]
fn untrained_forward_is_deterministic_and_finite() {
    let net = PopupNetwork::new(tiny_config(), 7).unwrap();
    let pc = PointCloud::new(cloud(60, 1)).unwrap();
    let a = net.predict(&pc, &keypoints(6), &ForwardOptions::new(1)).unwrap();
    let b = PopupNetwork::new(tiny_config(), 7).unwrap().predict(&pc, &keypoints(6), &ForwardOptions::new(1)).unwrap();
    assert_eq!(a, b);
    assert!(a.center.iter().chain(a.offsets.iter().flatten()).all(|v| v.is_finite()));
    let probs = a.class_probs.unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12 && probs.iter().all(|&p| p >= 0.0));
}

#[test]
fn global_encoding_is_permutation_invariant() {
    let net = PopupNetwork::new(tiny_config(), 3).unwrap();
    let pts = cloud(80, 2);
    let base = net.encode_global(&PointCloud::new(pts.clone()).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut p = pts.clone();
        p.shuffle(&mut rng);
        assert_eq!(net.encode_global(&PointCloud::new(p).unwrap()).unwrap(), base);
    }
}

#[test]
fn local_encoding_ignores_order_and_duplicates() {
    let net = PopupNetwork::new(tiny_config(), 4).unwrap();
    let center = [0.1, 0.9, 0.0];
    let kp: Vec<Point3> = keypoints(6).iter().map(|k| [k[0] + center[0], k[1] + center[1], k[2] + center[2]]).collect();
    let local = cloud(20, 3);
    let base = net.encode_local(&kp, &PointCloud::new(local.clone()).unwrap(), center).unwrap();
    let mut shuffled = local.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(net.encode_local(&kp, &PointCloud::new(shuffled).unwrap(), center).unwrap(), base);
    let doubled: Vec<Point3> = local.iter().chain(local.iter()).copied().collect();
    assert_eq!(net.encode_local(&kp, &PointCloud::new(doubled).unwrap(), center).unwrap(), base);
    assert_eq!(base.shape(), &[6, 6]);
}

#[test]
fn decoder_shares_weights_across_rows() {
    let net = PopupNetwork::new(tiny_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kp = keypoints(6);
    let fg: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
    let fl = Tensor::matrix(6, 6, (0..36).map(|_| rng.gen()).collect()).unwrap();
    let class = ClassEncoding::new(0, 3).unwrap();
    let d = net.decode_offsets(&kp, &fg, &fl, &class).unwrap();
    // swap rows 1 and 4 of both inputs
    let mut kp2 = kp.clone();
    kp2.swap(1, 4);
    let mut fl2 = fl.clone();
    for c in 0..6 {
        fl2.data_mut().swap(6 + c, 24 + c);
    }
    let d2 = net.decode_offsets(&kp2, &fg, &fl2, &class).unwrap();
    assert_eq!(d2.row_slice(1), d.row_slice(4));
    assert_eq!(d2.row_slice(4), d.row_slice(1));
    assert_eq!(d2.row_slice(0), d.row_slice(0));
    // identical rows give identical offsets
    let kp3 = vec![kp[2]; 6];
    let fl3 = Tensor::matrix(6, 6, (0..6).flat_map(|_| fl.row_slice(2).to_vec()).collect()).unwrap();
    let d3 = net.decode_offsets(&kp3, &fg, &fl3, &class).unwrap();
    assert!((1..6).all(|r| d3.row_slice(r) == d3.row_slice(0)));
    assert!(net.decode_offsets(&kp, &fg, &fl, &ClassEncoding::new(0, 4).unwrap()).is_err());
}

#[test]
fn zero_output_layer_gives_zero_offsets() {
    let mut net = PopupNetwork::new(tiny_config(), 6).unwrap();
    net.zero_decoder_output();
    let pc = PointCloud::new(cloud(50, 4)).unwrap();
    let p = net.predict(&pc, &keypoints(6), &ForwardOptions::new(2)).unwrap();
    assert!(p.offsets.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn uniform_logits_give_uniform_distribution() {
    let mut net = PopupNetwork::new(tiny_config(), 1).unwrap();
    for id in net.params().ids().collect::<Vec<_>>() {
        if net.params().name(id).starts_with("class.1") {
            net.params_mut().get_mut(id).data_mut().fill(0.0);
        }
    }
    let probs = net.predict_class(&[0.3; 16]).unwrap();
    assert!(probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn direct_head_outputs_rotations() {
    let mut config = tiny_config();
    config.direct_rt = true;
    let mut net = PopupNetwork::new(config.clone(), 2).unwrap();
    let class = ClassEncoding::new(1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fg: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
    let fl: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
    let tf = net.direct_rt_head(&fg, &fl, &class, [0.0; 3]).unwrap();
    assert!(tf.is_valid(1e-9));
    net.zero_decoder_output();
    let tf = net.direct_rt_head(&fg, &fl, &class, [1.0, 2.0, 3.0]).unwrap();
    assert!(tf.rotation_angle_to(&RigidTransform::identity()) < 1e-15);
    assert_eq!(tf.translation_array(), [1.0, 2.0, 3.0]);
    config.direct_rt = false;
    let plain = PopupNetwork::new(config, 2).unwrap();
    assert!(plain.direct_rt_head(&fg, &fl, &class, [0.0; 3]).is_err());
}

#[test]
fn oversized_inputs_are_sampled_and_merged() {
    let net = PopupNetwork::new(tiny_config(), 0).unwrap();
    let mut pts = cloud(100, 9);
    pts.push(pts[3]);
    let prep = net.prepare(&pts).unwrap();
    assert_eq!(prep.points.len(), 48);
    assert!(prep.points.windows(2).all(|w| w[0] < w[1]));
    let small = net.prepare(&pts[..30]).unwrap();
    assert_eq!(small.points.len(), 30);
}

#[test]
fn no_local_features_zeroes_them() {
    let mut config = tiny_config();
    config.no_local_features = true;
    let net = PopupNetwork::new(config, 0).unwrap();
    let pts = cloud(40, 1);
    let mut g = Graph::with_params(net.params());
    let x = g.constant(Tensor::from_points(&pts));
    let fv = net.forward(&mut g, x, &keypoints(6), &ForwardOptions::new(0)).unwrap();
    assert!(g.value(fv.f_local).data().iter().all(|&v| v == 0.0));
}

#[test]
fn parameters_restore_by_name() {
    let net = PopupNetwork::new(tiny_config(), 11).unwrap();
    let restored = PopupNetwork::from_params(tiny_config(), net.params().clone()).unwrap();
    assert_eq!(restored.params(), net.params());
    let mut other = tiny_config();
    other.decoder_width = 12;
    assert!(PopupNetwork::from_params(other, net.params().clone()).is_err());
}
