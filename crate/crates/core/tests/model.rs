use acvae_core::data::NormStats;
use acvae_core::model::{
    product_pool, reparameterize, reparameterize_graph, AcousticFeatureSequence, ArchConfig,
    AttributeLabel, Category, Checkpoint, Model,
};
use acvae_core::tensor::{grad_check, GradCheckOptions, Graph, Tensor};
use acvae_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn speakers(k: usize) -> Vec<Category> {
    vec![Category::new("speaker", k)]
}

fn features(q: usize, n: usize, seed: u64) -> AcousticFeatureSequence {
    let t = Tensor::randn(&[q * n], 1.0, &mut rng(seed)).unwrap();
    AcousticFeatureSequence::new(q, n, t.into_data()).unwrap()
}

fn model(q: usize, k: usize, seed: u64) -> Model {
    Model::new(ArchConfig::standard(q, speakers(k)), &mut rng(seed)).unwrap()
}

#[test]
fn label_planes_widen_next_layer_input() {
    let cfg = ArchConfig::with_widths(36, speakers(4), [8, 16, 16], 8, [8, 8]);
    let m = Model::new(cfg, &mut rng(0)).unwrap();
    let w = m.params().get("enc.1.linear.weight").unwrap();
    assert_eq!(w.shape()[1], 8 + 4);
    // The classifier never sees the label.
    let w = m.params().get("cls.1.linear.weight").unwrap();
    assert_eq!(w.shape()[1], 8);
}

#[test]
fn encoder_shape_arithmetic() {
    let m = model(36, 4, 1);
    let c = AttributeLabel::one_hot(4, 2).unwrap();
    let (mu, lv) = m.encode(&features(36, 64, 2), &c).unwrap();
    assert_eq!(mu.shape(), &[8, 9, 16]);
    assert_eq!(lv.shape(), mu.shape());
    assert!(lv.data().iter().all(|v| (-14.0..=14.0).contains(v)));
}

#[test]
fn encoder_depends_on_label() {
    let m = model(36, 4, 3);
    let x = features(36, 32, 4);
    let (a, _) = m
        .encode(&x, &AttributeLabel::one_hot(4, 0).unwrap())
        .unwrap();
    let (b, _) = m
        .encode(&x, &AttributeLabel::one_hot(4, 1).unwrap())
        .unwrap();
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .sum();
    assert!(diff > 1e-6);
}

#[test]
fn log_variance_is_clamped() {
    let mut m = model(8, 2, 5);
    let names = m.params().names().to_vec();
    for (name, t) in names.iter().zip(m.params_mut().tensors_mut()) {
        if name.contains("head.log_var.weight") {
            t.data_mut().iter_mut().for_each(|v| *v *= 1e6);
        }
    }
    let c = AttributeLabel::one_hot(2, 0).unwrap();
    let (mu, lv) = m.encode(&features(8, 16, 6), &c).unwrap();
    assert!(lv.data().iter().all(|v| (-14.0..=14.0).contains(v)));
    assert!(lv.data().iter().any(|v| v.abs() == 14.0));
    let (_, dlv) = m.decode(&mu, &c).unwrap();
    assert!(dlv.data().iter().all(|v| (-14.0..=14.0).contains(v)));
    assert!(dlv.data().iter().any(|v| v.abs() == 14.0));
}

#[test]
fn decoder_restores_input_shape() {
    let m = model(36, 4, 7);
    let c = AttributeLabel::one_hot(4, 3).unwrap();
    for n in [16, 64, 128] {
        let (z, _) = m.encode(&features(36, n, n as u64), &c).unwrap();
        let (mu, lv) = m.decode(&z, &c).unwrap();
        assert_eq!(mu.shape(), &[36, n]);
        assert_eq!(lv.shape(), &[36, n]);
    }
}

#[test]
fn rejects_inadmissible_lengths() {
    let m = model(8, 2, 8);
    let c = AttributeLabel::one_hot(2, 0).unwrap();
    let min = m.config().min_frames().unwrap();
    assert_eq!(min, 4);
    let err = m.encode(&features(8, 2, 9), &c).unwrap_err();
    assert!(
        matches!(&err, Error::Dimension(msg) if msg.contains(&min.to_string())),
        "{err}"
    );
    assert!(m.encode(&features(8, 18, 9), &c).is_err());
    assert!(m.classify(&features(8, 2, 9)).is_err());
    // A latent that does not come from an admissible length is rejected too.
    assert!(m.decode(&Tensor::zeros(&[8, 3, 4]).unwrap(), &c).is_err());
    assert!(m.decode(&Tensor::zeros(&[7, 2, 4]).unwrap(), &c).is_err());
}

#[test]
fn wrong_feature_dimension_or_label_is_rejected() {
    let m = model(8, 2, 10);
    assert!(m
        .encode(
            &features(12, 16, 1),
            &AttributeLabel::one_hot(2, 0).unwrap()
        )
        .is_err());
    assert!(m
        .encode(&features(8, 16, 1), &AttributeLabel::one_hot(3, 0).unwrap())
        .is_err());
}

fn pool(logits: &[f64], k: usize, w: usize) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, k, 1, w], logits.to_vec()).unwrap());
    let y = product_pool(&mut g, x, &[(0, k)]).unwrap();
    g.value(y).to_vec()
}

#[test]
fn product_pooling_examples() {
    // One segment: plain log-softmax.
    let out = pool(&[1.0, 2.0, 3.0], 3, 1);
    let z = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    for (o, l) in out.iter().zip([1.0, 2.0, 3.0]) {
        assert!((o - (l - z)).abs() < 1e-14);
    }
    // Uniform segments give a uniform result.
    let out = pool(&[0.3; 12], 4, 3);
    for o in out {
        assert!((o + 4f64.ln()).abs() < 1e-14);
    }
    // (0.9, 0.1) x (0.5, 0.5) renormalizes to (0.9, 0.1); layout is [class][segment].
    let out = pool(&[0.9f64.ln(), 0.5f64.ln(), 0.1f64.ln(), 0.5f64.ln()], 2, 2);
    assert!((out[0].exp() - 0.9).abs() < 1e-14);
    assert!((out[1].exp() - 0.1).abs() < 1e-14);
}

#[test]
fn classifier_pools_groups_independently() {
    let cats = vec![Category::new("speaker", 3), Category::new("style", 2)];
    let cfg = ArchConfig::standard(8, cats);
    let m = Model::new(cfg, &mut rng(11)).unwrap();
    let lp = m.classify(&features(8, 32, 12)).unwrap();
    assert_eq!(lp.len(), 5);
    let s1: f64 = lp[..3].iter().map(|v| v.exp()).sum();
    let s2: f64 = lp[3..].iter().map(|v| v.exp()).sum();
    assert!((s1 - 1.0).abs() < 1e-10 && (s2 - 1.0).abs() < 1e-10);
}

#[test]
fn reparameterization_examples() {
    let mu = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
    let zero = Tensor::zeros(&[3]).unwrap();
    let ones = Tensor::full(&[3], 1.0).unwrap();
    assert_eq!(reparameterize(&mu, &zero, &zero).unwrap().data(), mu.data());
    let z = reparameterize(&mu, &zero, &ones).unwrap();
    for (a, b) in z.data().iter().zip(mu.data()) {
        assert!((a - (b + 1.0)).abs() < 1e-15);
    }
    assert!(reparameterize(&mu, &zero, &Tensor::zeros(&[2]).unwrap()).is_err());
}

#[test]
fn reparameterized_sample_mean() {
    let (mu, log_var) = (0.7, 0.4f64);
    let n = 100_000;
    let eps = Tensor::randn(&[n], 1.0, &mut rng(13)).unwrap();
    let z = reparameterize(
        &Tensor::full(&[n], mu).unwrap(),
        &Tensor::full(&[n], log_var).unwrap(),
        &eps,
    )
    .unwrap();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let sigma = (0.5 * log_var).exp();
    assert!((mean - mu).abs() < 3.0 * sigma / (n as f64).sqrt());
}

#[test]
fn reparameterization_gradients() {
    let mut r = rng(14);
    let mu = Tensor::randn(&[2, 3], 1.0, &mut r).unwrap();
    let lv = Tensor::randn(&[2, 3], 1.0, &mut r).unwrap();
    let eps = Tensor::randn(&[2, 3], 1.0, &mut r).unwrap();
    let f = |g: &mut Graph, p: &[acvae_core::tensor::Var]| {
        let z = reparameterize_graph(g, p[0], p[1], eps.clone())?;
        let sq = g.square(z);
        Ok(g.sum(sq))
    };
    let err = grad_check(&[mu.clone(), lv.clone()], f, &GradCheckOptions::default()).unwrap();
    assert!(err < 1e-6, "{err}");

    let mut g = Graph::new();
    let (m, l) = (g.param(mu), g.param(lv));
    let z = reparameterize_graph(&mut g, m, l, eps).unwrap();
    let s = g.sum(z);
    g.backward(s).unwrap();
    assert!(g.grad(m).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let mut m = model(8, 2, 15);
    m.update_running_stats(&[(
        0,
        acvae_core::tensor::BatchStats {
            mean: (0..16).map(|i| i as f64 * 0.1).collect(),
            var: vec![0.3; 16],
        },
    )]);
    let ck = Checkpoint {
        model: m,
        norm: Some(NormStats {
            mean: vec![0.1, 1.0 / 3.0],
            std: vec![1.7, 0.2],
        }),
        speakers: vec!["a".into(), "b".into()],
        step: 42,
    };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.model.params(), ck.model.params());
    assert_eq!(back.model.running_stats(), ck.model.running_stats());
    assert_eq!(back.model.config(), ck.model.config());
    assert_eq!(back.norm, ck.norm);
    assert_eq!((back.speakers, back.step), (ck.speakers, 42));

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Corrupt(_))
    ));
    assert!(Checkpoint::from_bytes(b"not a checkpoint at all, definitely not").is_err());
}

#[test]
fn default_architecture_validates() {
    let cfg = ArchConfig::standard(36, speakers(4));
    cfg.validate().unwrap();
    assert_eq!(cfg.label_len(), 4);
    assert_eq!(cfg.downsampling(), (4, 4));
    let mut bad = cfg.clone();
    bad.classifier.last_mut().unwrap().channels = 3;
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = cfg;
    bad.q_dim = 30;
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Any admissible length runs through every network with the stated
    /// shapes, and the posterior is normalized.
    #[test]
    fn fully_convolutional_contract(k in 1usize..=8, seed in 0u64..1000, classes in 2usize..5) {
        let n = 4 * k;
        let m = Model::new(ArchConfig::small(8, speakers(classes)), &mut rng(seed)).unwrap();
        let c = AttributeLabel::one_hot(classes, seed as usize % classes).unwrap();
        let x = features(8, n, seed);
        let (mu, _) = m.encode(&x, &c).unwrap();
        prop_assert_eq!(mu.shape(), &[8, 2, n / 4]);
        let (xm, _) = m.decode(&mu, &c).unwrap();
        prop_assert_eq!(xm.shape(), &[8, n]);
        let lp = m.classify(&x).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(lp.iter().all(|v| v.is_finite()));
    }
}
