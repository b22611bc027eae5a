use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::data::MultiViewBatch;
use crate::encoders::{encoder_count, Architecture, EncoderConfig, ViewSchema, PREDICTION_HEAD_TARGET};
use crate::encoders::formula_count;
use crate::rng::{self, Rng};
use crate::tensor::{grad_check_params, Graph, Mode, Tape, Tensor};
use crate::training::{weighted_cross_entropy, ClassWeights};
use crate::Error;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn batch_for(views: &[ViewSchema], b: usize, seed: u64) -> MultiViewBatch {
    let mut r = rng::stream(seed, "batch");
    MultiViewBatch {
        schemas: views.to_vec(),
        views: views.iter().map(|v| randn(&mut r, &v.batch_shape(b))).collect(),
        labels: (0..b).map(|i| i % 2).collect(),
    }
}

fn config(strategy: Strategy, component: Component, arch: Architecture) -> FusionConfig {
    FusionConfig {
        strategy,
        component,
        encoder: EncoderConfig::new(arch),
        ..FusionConfig::default()
    }
}

fn assert_simplex(p: &Tensor) {
    let k = p.shape()[1];
    for row in p.data().chunks(k) {
        assert!(row.iter().all(|&x| x >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn input_alignment() {
    let views = ViewSchema::canonical_all();
    let fused = fused_schema(&views).unwrap();
    assert_eq!((fused.steps, fused.channels), (12, 18));
    let b = batch_for(&views, 3, 1);
    let parts: Vec<(&ViewSchema, &Tensor)> = views.iter().zip(&b.views).collect();
    let x = align_and_merge_input(&parts).unwrap();
    assert_eq!(x.shape(), &[3, 12, 18]);
    let topo = &b.views[4];
    for s in 0..3 {
        for t in 0..12 {
            assert_eq!(x.at(&[s, t, 16]), topo.at(&[s, 0]));
            assert_eq!(x.at(&[s, t, 17]), topo.at(&[s, 1]));
            assert_eq!(x.at(&[s, t, 11]), b.views[1].at(&[s, t, 0]));
        }
    }
    let one = align_and_merge_input(&parts[..1]).unwrap();
    assert_eq!(&one, &b.views[0]);
    let short = ViewSchema::temporal("short", 6, 2);
    assert!(matches!(fused_schema(&[views[0].clone(), short]), Err(Error::Alignment(_))));
}

#[test]
fn topography_broadcast_example() {
    let topo = ViewSchema::topography();
    let radar = ViewSchema::radar();
    let t = Tensor::new(vec![1, 2], vec![7.0, 9.0]).unwrap();
    let r = Tensor::zeros(&[1, 12, 2]);
    let x = align_and_merge_input(&[(&radar, &r), (&topo, &t)]).unwrap();
    for s in 0..12 {
        assert_eq!((x.at(&[0, s, 2]), x.at(&[0, s, 3])), (7.0, 9.0));
    }
}

#[test]
fn feature_concat_head_matches_reference() {
    let m = MvlModel::new(
        config(Strategy::Feature, Component::None, Architecture::Gru),
        ViewSchema::canonical_all(),
        0,
    )
    .unwrap();
    assert_eq!(m.store.count_prefix("head.fused."), PREDICTION_HEAD_TARGET);
    assert_eq!(PredictionHead::param_count(320, 2), 20802);
}

/// Five homogeneous views, average merges: assembled counts follow the
/// closed-form accounting for every strategy.
#[test]
fn parameter_formulas_hold() {
    let views: Vec<ViewSchema> = (0..5).map(|i| ViewSchema::temporal(format!("v{i}"), 12, 2)).collect();
    for arch in Architecture::TEMPORAL {
        let enc = EncoderConfig::new(arch);
        let n_e = encoder_count(&views[0], &enc);
        let n_p = PredictionHead::param_count(64, 2);
        for s in Strategy::ALL {
            let mut cfg = config(s, Component::None, arch);
            if s == Strategy::Feature {
                cfg.merge = Some(MergeKind::Average);
            }
            let m = MvlModel::new(cfg, views.clone(), 1).unwrap();
            let expected = if s == Strategy::Input {
                formula_count(s, encoder_count(&fused_schema(&views).unwrap(), &enc), n_p, 5)
            } else {
                formula_count(s, n_e, n_p, 5)
            };
            assert_eq!(m.param_count(), expected, "{arch:?} {s:?}");
        }
    }
}

#[test]
fn every_strategy_outputs_simplex_rows() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 4, 2);
    for s in Strategy::ALL {
        for c in Component::ALL {
            if !c.legal_with(s) {
                continue;
            }
            let mut m = MvlModel::new(config(s, c, Architecture::Gru), views.clone(), 3).unwrap();
            let p = m.predict(&b).unwrap();
            assert_eq!(p.shape(), &[4, 2]);
            assert_simplex(&p);
        }
    }
}

#[test]
fn component_legality() {
    for s in [Strategy::Input, Strategy::Ensemble] {
        for c in [Component::GFusion, Component::MultiLoss] {
            let r = MvlModel::new(config(s, c, Architecture::Gru), ViewSchema::canonical_all(), 0);
            assert!(matches!(r, Err(Error::Config(_))), "{s:?} {c:?}");
        }
    }
    let bad = FusionConfig {
        merge: Some(MergeKind::Concat),
        ..config(Strategy::Decision, Component::None, Architecture::Gru)
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert_eq!("G-Fusion".parse::<Component>().unwrap(), Component::GFusion);
    assert_eq!("multi_loss".parse::<Component>().unwrap(), Component::MultiLoss);
    assert_eq!("Hybrid".parse::<Strategy>().unwrap(), Strategy::Hybrid);
}

#[test]
fn merge_examples() {
    let mut t = Tape::new();
    let z1 = t.constant(Tensor::matrix(&[&[1.0, 1.0]]).unwrap());
    let z2 = t.constant(Tensor::matrix(&[&[0.0, 0.0]]).unwrap());
    let w = t.constant(Tensor::new(vec![1, 2, 2], vec![0.9, 0.1, 0.1, 0.9]).unwrap());
    let out = weighted_sum(&mut t, w, &[z1, z2]).unwrap();
    assert_eq!(t.value(out).data(), &[0.9, 0.1]);

    let y1 = t.constant(Tensor::matrix(&[&[1.0, 0.0]]).unwrap());
    let y2 = t.constant(Tensor::matrix(&[&[0.0, 1.0]]).unwrap());
    let w = t.constant(Tensor::new(vec![1, 2, 2], vec![0.8, 0.8, 0.2, 0.2]).unwrap());
    let out = weighted_sum(&mut t, w, &[y1, y2]).unwrap();
    assert_eq!(t.value(out).data(), &[0.8, 0.2]);
    let avg = average(&mut t, &[y1, y2]).unwrap();
    assert_eq!(t.value(avg).data(), &[0.5, 0.5]);

    let rows = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]].map(|r| Tensor::matrix(&[&r]).unwrap());
    let p = average_detached(&rows).unwrap();
    assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15 && (p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(average_detached(&rows[..1]).unwrap(), rows[0]);

    let same = average(&mut t, &[z1, z1, z1]).unwrap();
    assert_eq!(t.value(same).data(), &[1.0, 1.0]);
    let bad = t.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(average(&mut t, &[z1, bad]), Err(Error::Merge(_))));
}

#[test]
fn zero_gate_equals_average_bit_for_bit() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 5, 4);
    for s in [Strategy::Feature, Strategy::Decision, Strategy::Hybrid] {
        let mut plain = config(s, Component::None, Architecture::Gru);
        if s == Strategy::Feature {
            plain.merge = Some(MergeKind::Average);
        }
        let mut a = MvlModel::new(plain, views.clone(), 9).unwrap();
        let mut g = MvlModel::new(config(s, Component::GFusion, Architecture::Gru), views.clone(), 9).unwrap();
        assert_eq!(a.predict(&b).unwrap(), g.predict(&b).unwrap(), "{s:?}");
        let w = g.gate_weights(&b).unwrap().unwrap();
        assert!(w.data().iter().all(|&x| x == 0.2));
    }
}

#[test]
fn gate_weights_sum_to_one_per_position() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 3, 5);
    let mut m = MvlModel::new(config(Strategy::Feature, Component::GFusion, Architecture::Gru), views, 2).unwrap();
    let mut r = rng::stream(1, "gate");
    for p in m.store.params_mut().iter_mut().filter(|p| p.name.starts_with("gate.")) {
        p.value = randn(&mut r, p.value.shape());
    }
    let w = m.gate_weights(&b).unwrap().unwrap();
    assert_eq!(w.shape(), &[3, 5, 64]);
    for s in 0..3 {
        for f in 0..64 {
            let sum: f64 = (0..5).map(|v| w.at(&[s, v, f])).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!((0..5).all(|v| w.at(&[s, v, f]) >= 0.0));
        }
    }
    let p = m.predict(&b).unwrap();
    assert_simplex(&p);
}

#[test]
fn decision_matches_ensemble_with_copied_weights() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 6, 6);
    for arch in Architecture::TEMPORAL {
        let mut ens = MvlModel::new(config(Strategy::Ensemble, Component::None, arch), views.clone(), 4).unwrap();
        let mut dec = MvlModel::new(config(Strategy::Decision, Component::None, arch), views.clone(), 5).unwrap();
        let copied = ens.load_members_into_decision(&mut dec).unwrap();
        assert_eq!(copied, dec.store.params().len() + dec.store.buffers().len());
        assert_eq!(ens.predict(&b).unwrap(), dec.predict(&b).unwrap(), "{arch:?}");
        assert_eq!(ens.predict_views(&b).unwrap(), dec.predict_views(&b).unwrap());
    }
}

#[test]
fn single_view_input_is_the_baseline() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 4, 7);
    for v in &views {
        let cfg = config(Strategy::Input, Component::None, Architecture::TempCnn);
        let mut input = MvlModel::new(cfg.clone(), vec![v.clone()], 11).unwrap();
        let mut base = MvlModel::single_view(v.clone(), &config(Strategy::Hybrid, Component::GFusion, Architecture::TempCnn), 11)
            .unwrap();
        assert_eq!(input.predict(&b).unwrap(), base.predict(&b).unwrap());
    }
}

#[test]
fn ensemble_of_one_is_its_member() {
    let v = ViewSchema::radar();
    let b = batch_for(std::slice::from_ref(&v), 4, 8);
    let mut ens = MvlModel::new(config(Strategy::Ensemble, Component::None, Architecture::Gru), vec![v.clone()], 3).unwrap();
    let mut member =
        MvlModel::single_view(v.clone(), &config(Strategy::Input, Component::None, Architecture::Gru), member_seed(3, "radar"))
            .unwrap();
    assert_eq!(ens.predict(&b).unwrap(), member.predict(&b).unwrap());
}

#[test]
fn hybrid_outputs_average_branches() {
    let views = ViewSchema::canonical_all();
    let b = batch_for(&views, 4, 9);
    let mut m = MvlModel::new(config(Strategy::Hybrid, Component::None, Architecture::Gru), views, 1).unwrap();
    let h = m.hybrid_outputs(&b).unwrap();
    for i in 0..h.fused.numel() {
        let avg = 0.5 * h.feature.data()[i] + 0.5 * h.decision.data()[i];
        assert!((h.fused.data()[i] - avg).abs() < 1e-15);
    }
    assert_simplex(&h.feature);
    assert_simplex(&h.decision);
    assert_eq!(h.fused, m.predict(&b).unwrap());
    let mut f = MvlModel::new(config(Strategy::Feature, Component::None, Architecture::Gru), ViewSchema::canonical_all(), 1)
        .unwrap();
    assert!(f.hybrid_outputs(&b).is_err());
}

/// Perturbing a shared encoder weight moves both Hybrid branches.
#[test]
fn hybrid_encoders_feed_both_branches() {
    let views = vec![ViewSchema::radar(), ViewSchema::weather()];
    let b = batch_for(&views, 4, 10);
    let mut m = MvlModel::new(config(Strategy::Hybrid, Component::None, Architecture::Gru), views, 2).unwrap();
    let before = m.hybrid_outputs(&b).unwrap();
    let id = m.store.id("encoder.radar.projection.weight").unwrap();
    m.store.get_mut(id).value.data_mut()[0] += 1e-3;
    let after = m.hybrid_outputs(&b).unwrap();
    assert_ne!(before.feature, after.feature);
    assert_ne!(before.decision, after.decision);
}

#[test]
fn multi_loss_examples() {
    let mut t = Tape::new();
    let one = t.constant(Tensor::scalar(1.0));
    let views = vec![one; 5];
    let l = multi_loss(&mut t, one, &views, 0.3).unwrap();
    assert!((t.value(l).data()[0] - 2.5).abs() < 1e-15);
    let l0 = multi_loss(&mut t, one, &views, 0.0).unwrap();
    assert_eq!(l0, one);
    assert!(matches!(multi_loss(&mut t, one, &[], 0.3), Err(Error::Config(_))));
    assert!(multi_loss(&mut t, one, &views, -1.0).is_err());
}

/// With the fused term zeroed, the auxiliary term reaches encoders and
/// auxiliary heads but not the fused head.
#[test]
fn auxiliary_gradient_paths() {
    let views = vec![ViewSchema::radar(), ViewSchema::weather()];
    let b = batch_for(&views, 6, 11);
    let mut m = MvlModel::new(config(Strategy::Feature, Component::MultiLoss, Architecture::Gru), views, 3).unwrap();
    let weights = ClassWeights::uniform(2);
    let (net, store, schemas) = m.parts_mut().unwrap();
    store.zero_grads();
    let mut r = rng::stream(0, "dropout");
    let mut g = Graph::new(store, Mode::Train, Some(&mut r));
    let out = net.forward(&mut g, schemas, &b, true).unwrap();
    assert_eq!(out.view_probs.len(), 2);
    let fused = weighted_cross_entropy(&mut g.tape, out.probs, &b.labels, &weights).unwrap();
    let fused = g.tape.scale(fused, 0.0).unwrap();
    let per: Vec<_> = out
        .view_probs
        .iter()
        .map(|&p| weighted_cross_entropy(&mut g.tape, p, &b.labels, &weights).unwrap())
        .collect();
    let loss = multi_loss(&mut g.tape, fused, &per, 0.3).unwrap();
    g.backward(loss).unwrap();
    let norm = |prefix: &str| -> f64 {
        m.store
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum()
    };
    assert_eq!(norm("head.fused."), 0.0);
    assert!(norm("aux.radar.") > 0.0 && norm("aux.weather.") > 0.0);
    assert!(norm("encoder.radar.") > 0.0 && norm("encoder.weather.") > 0.0);
}

#[test]
fn auxiliary_heads_do_not_shift_main_initialisation() {
    let views = vec![ViewSchema::radar(), ViewSchema::weather()];
    let b = batch_for(&views, 4, 12);
    let mut plain = MvlModel::new(config(Strategy::Feature, Component::None, Architecture::Gru), views.clone(), 5).unwrap();
    let mut multi = MvlModel::new(config(Strategy::Feature, Component::MultiLoss, Architecture::Gru), views, 5).unwrap();
    assert_eq!(plain.predict(&b).unwrap(), multi.predict(&b).unwrap());
    assert_eq!(multi.inference_param_count(), plain.param_count());
}

#[test]
fn feature_embedding_width_mismatch_is_a_merge_error() {
    let views = vec![ViewSchema::radar(), ViewSchema::weather()];
    let b = batch_for(&views, 3, 13);
    let mut m = MvlModel::new(config(Strategy::Feature, Component::None, Architecture::Gru), views, 0).unwrap();
    let mut short = b.clone();
    short.views[1] = Tensor::zeros(&[3, 12, 3]);
    assert!(matches!(m.predict(&short), Err(Error::Schema(_))));
}

/// Every strategy (and component) passes a finite-difference check of the
/// class-weighted loss with respect to all parameters.
#[test]
fn strategies_pass_grad_check() {
    let views = vec![ViewSchema::temporal("a", 4, 2), ViewSchema::temporal("b", 4, 3), ViewSchema::fixed("c", 2)];
    let small = EncoderConfig {
        hidden: 5,
        embedding_dim: 4,
        dense: 6,
        heads: 2,
        key_dim: 3,
        dropout: 0.2,
        ..EncoderConfig::new(Architecture::Gru)
    };
    let mut cases = Vec::new();
    for s in Strategy::ALL {
        if s == Strategy::Ensemble {
            continue;
        }
        for c in Component::ALL {
            if c.legal_with(s) {
                cases.push((s, c));
            }
        }
    }
    let weights = ClassWeights::from_counts(vec![3, 2, 5]).unwrap();
    for (i, (s, c)) in cases.into_iter().enumerate() {
        let cfg = FusionConfig {
            strategy: s,
            component: c,
            encoder: small.clone(),
            classes: 3,

            ..FusionConfig::default()
        };
        let mut m = MvlModel::new(cfg, views.clone(), i as u64).unwrap();
        let mut r = rng::stream(i as u64, "gate");
        for p in m.store.params_mut().iter_mut().filter(|p| p.name.starts_with("gate.")) {
            p.value = randn(&mut r, p.value.shape());
        }
        let mut b = batch_for(&views, 5, 20 + i as u64);
        b.labels = vec![0, 1, 2, 1, 0];
        let multi = c == Component::MultiLoss;
        let (net, store, schemas) = m.parts_mut().unwrap();
        let rep = grad_check_params(
            store,
            |g| {
                let out = net.forward(g, schemas, &b, multi)?;
                let fused = weighted_cross_entropy(&mut g.tape, out.probs, &b.labels, &weights)?;
                if !multi {
                    return Ok(fused);
                }
                let per = out
                    .view_probs
                    .iter()
                    .map(|&p| weighted_cross_entropy(&mut g.tape, p, &b.labels, &weights))
                    .collect::<crate::Result<Vec<_>>>()?;
                multi_loss(&mut g.tape, fused, &per, 0.3)
            },
            4,
            31,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{s:?}/{c:?}: {rep:?}");
    }
}
