use super::*;
use crate::data::{synth_generate, FeatureColumn, FeatureSchema, Role, Split};
use crate::gradcheck;
use crate::tensor::ParamStore;

fn cat_dataset(order: &[usize]) -> Dataset {
    let names = ["a", "b", "c"];
    let ids: [Vec<usize>; 3] = [
        vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 3, 0, 1],
        vec![2, 2, 1, 1, 0, 0, 2, 1, 0, 2, 1, 0],
        vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 0, 1, 2],
    ];
    let mut columns: Vec<FeatureSchema> = order
        .iter()
        .map(|&i| FeatureSchema::categorical(names[i], 3, Role::NonSensitive))
        .collect();
    columns.push(FeatureSchema::categorical("s", 2, Role::Sensitive));
    columns.push(FeatureSchema::categorical("y", 2, Role::Label));
    let features = order
        .iter()
        .map(|&i| FeatureColumn {
            name: names[i].into(),
            data: ColumnData::Categorical {
                ids: ids[i].clone(),
                vocab: vec!["x".into(), "y".into(), "z".into()],
                cardinality: 3,
            },
        })
        .collect();
    let labels = vec![0., 1., 0., 1., 1., 0., 0., 1., 1., 0., 1., 0.];
    let sensitive = vec![1., 1., 0., 0., 1., 0., 1., 0., 1., 0., 0., 1.];
    Dataset::from_parts(
        Schema::new(columns).unwrap(),
        features,
        labels,
        sensitive,
        vec!["0".into(), "1".into()],
    )
    .unwrap()
}

fn all_rows(ds: &Dataset) -> ModelInput {
    ds.input(&(0..ds.len()).collect::<Vec<_>>())
}

fn set(model: &mut FairIntModel, name: &str, f: impl Fn(usize, usize) -> f64) {
    let id = model.params().id(name).unwrap();
    let t = &mut model.params_mut().get_mut(id).tensor;
    let cols = t.cols();
    for (k, v) in t.values_mut().iter_mut().enumerate() {
        *v = f(k / cols, k % cols);
    }
}

#[test]
fn attention_has_one_score_per_feature_and_rows_sum_to_one() {
    let ds = cat_dataset(&[0, 1, 2]);
    let config = ModelConfig {
        attention_heads: 2,
        ..ModelConfig::default()
    };
    let model = FairIntModel::new(config, Architecture::FairInt, &ds, 7).unwrap();
    let trace = model.trace(&all_rows(&ds)).unwrap();
    assert_eq!(trace.attention.len(), 2);
    for a in &trace.attention {
        assert_eq!(a.shape(), &[12, 3]);
        for r in 0..12 {
            let s: f64 = a.row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(a.row_slice(r).iter().all(|&p| p > 0.0));
        }
    }
    assert_eq!(trace.fused.unwrap().shape(), &[12, 8]);
    assert_eq!(trace.prediction.len(), 12);
}

#[test]
fn zero_key_projection_gives_uniform_attention() {
    let ds = cat_dataset(&[0, 1, 2]);
    let mut model =
        FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    set(&mut model, "bid.w_key.h0", |_, _| 0.0);
    let trace = model.trace(&all_rows(&ds)).unwrap();
    for &p in trace.attention[0].values() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn aligned_feature_takes_all_attention() {
    let ds = cat_dataset(&[0, 1, 2]);
    let mut model =
        FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    // Constant pseudo-sensitive embedding u = (1, 1, 1, 1).
    set(&mut model, "sar.l3.weight", |_, _| 0.0);
    set(&mut model, "sar.l3.bias", |_, _| 1.0);
    set(&mut model, "bid.w_query.h0", |i, j| f64::from(i == j));
    set(&mut model, "bid.w_key.h0", |i, j| f64::from(i == j));
    set(&mut model, "embed.a", |_, _| 10.0);
    set(&mut model, "embed.b", |_, _| 0.0);
    set(&mut model, "embed.c", |_, _| 0.0);
    let trace = model.trace(&all_rows(&ds)).unwrap();
    for r in 0..12 {
        let row = trace.attention[0].row_slice(r);
        assert!(row[0] > 1.0 - 1e-12, "{row:?}");
    }
    let s = trace.pseudo_embed.values();
    assert!(s.iter().all(|&v| v == 1.0));
}

#[test]
fn feature_permutation_permutes_attention_and_keeps_prediction() {
    let ds = cat_dataset(&[0, 1, 2]);
    let order = [2, 0, 1];
    let perm_ds = cat_dataset(&order);
    let model = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 3).unwrap();
    let mut permuted =
        FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &perm_ds, 99).unwrap();

    let d = model.config().embed_dim;
    let mut store = ParamStore::new();
    for (_, p) in permuted.params().iter() {
        let src = model.params().by_name(&p.name).unwrap().tensor.clone();
        let t = if p.name == "sar.l0.weight" {
            let cols = src.cols();
            let mut v = Vec::with_capacity(src.len());
            for &block in &order {
                for r in block * d..(block + 1) * d {
                    v.extend_from_slice(src.row_slice(r));
                }
            }
            Tensor::matrix(src.rows(), cols, v).unwrap()
        } else {
            src
        };
        store.add(p.name.clone(), t).unwrap();
    }
    permuted.set_params(store).unwrap();

    let a = model.trace(&all_rows(&ds)).unwrap();
    let b = permuted.trace(&all_rows(&perm_ds)).unwrap();
    for r in 0..12 {
        for (i, &src) in order.iter().enumerate() {
            assert!((b.attention[0].at(r, i) - a.attention[0].at(r, src)).abs() < 1e-12);
        }
        assert!((a.prediction[r] - b.prediction[r]).abs() < 1e-12);
    }
}

#[test]
fn zero_scalar_head_gives_half() {
    let ds = cat_dataset(&[0, 1, 2]);
    let mut model =
        FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    set(&mut model, "sar.scalar.weight", |_, _| 0.0);
    set(&mut model, "sar.scalar.bias", |_, _| 0.0);
    let trace = model.trace(&all_rows(&ds)).unwrap();
    assert!(trace.pseudo.iter().all(|&p| p == 0.5));
}

#[test]
fn vanilla_sar_does_not_train_embeddings() {
    let ds = cat_dataset(&[0, 1, 2]);
    let model = FairIntModel::new(ModelConfig::default(), Architecture::Vanilla, &ds, 1).unwrap();
    let mut g = Graph::new();
    let f = model
        .forward::<rand_chacha::ChaCha8Rng>(&mut g, &all_rows(&ds), None)
        .unwrap();
    assert!(f.attention.is_empty() && f.fused.is_none());
    let root = g.sum(f.pseudo).unwrap();
    let grads = g.backward(root).unwrap().for_params(model.params());
    for name in ["embed.a", "embed.b", "embed.c"] {
        let id = model.params().id(name).unwrap();
        assert!(grads.get(id).iter().all(|&x| x == 0.0), "{name}");
    }
    let sar = model.params().id("sar.l0.weight").unwrap();
    assert!(grads.get(sar).iter().any(|&x| x != 0.0));
    assert!(model.params().id("baseline.l2.weight").is_some());
    assert!(model.params().id("bid.w_res").is_none());
}

#[test]
fn parameter_names_and_shapes() {
    let ds = synth_generate(200, 1.0, 0.5, 1).unwrap();
    let model = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    let shape = |n: &str| model.params().by_name(n).unwrap().tensor.shape().to_vec();
    assert_eq!(shape("embed.proxy1"), vec![4, 1]);
    assert_eq!(shape("sar.l0.weight"), vec![20, 16]);
    assert_eq!(shape("sar.l3.weight"), vec![8, 4]);
    assert_eq!(shape("sar.scalar.weight"), vec![4, 1]);
    assert_eq!(shape("bid.w_query.h0"), vec![4, 4]);
    assert_eq!(shape("bid.w_value.h0"), vec![4, 4]);
    assert_eq!(shape("bid.w_res"), vec![4, 4]);
    assert_eq!(shape("head.l0.weight"), vec![4, 1]);
    let w = model.params().id("head.l0.weight").unwrap();
    let b = model.params().id("head.l0.bias").unwrap();
    assert!(model.is_weight(w) && !model.is_weight(b));
}

#[test]
fn init_is_seeded() {
    let ds = cat_dataset(&[0, 1, 2]);
    let a = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 5).unwrap();
    let b = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 5).unwrap();
    let c = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params(), c.params());
}

#[test]
fn save_load_round_trip() {
    let ds = synth_generate(300, 1.0, 0.5, 2)
        .unwrap()
        .split((0.6, 0.2, 0.2), 2)
        .unwrap();
    for arch in [Architecture::FairInt, Architecture::Vanilla] {
        let model = FairIntModel::new(ModelConfig::default(), arch, &ds, 4).unwrap();
        let back = FairIntModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(model, back);
        let input = ds.full_batch(Split::Test).unwrap().input;
        assert_eq!(model.trace(&input).unwrap(), back.trace(&input).unwrap());
        assert!(back.compatible_with(&ds));
    }
    let mut bytes = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 4)
        .unwrap()
        .to_bytes();
    bytes[20] ^= 0xff;
    assert!(matches!(
        FairIntModel::from_bytes(&bytes),
        Err(Error::Format(_))
    ));
}

#[test]
fn mismatched_input_is_rejected() {
    let ds = cat_dataset(&[0, 1, 2]);
    let model = FairIntModel::new(ModelConfig::default(), Architecture::FairInt, &ds, 1).unwrap();
    let input = all_rows(&ds).permuted(&[0, 1]);
    assert!(matches!(model.trace(&input), Err(Error::Dimension(_))));
    let other = synth_generate(100, 1.0, 0.5, 1).unwrap();
    assert!(!model.compatible_with(&other));
}

#[test]
fn bad_config_is_rejected() {
    let ds = cat_dataset(&[0, 1, 2]);
    for config in [
        ModelConfig {
            embed_dim: 0,
            ..ModelConfig::default()
        },
        ModelConfig {
            sar_hidden: vec![4, 0],
            ..ModelConfig::default()
        },
    ] {
        assert!(matches!(
            FairIntModel::new(config, Architecture::FairInt, &ds, 1),
            Err(Error::Config(_))
        ));
    }
}

#[test]
fn forward_gradients_match_finite_differences() {
    let ds = synth_generate(100, 1.0, 0.5, 3)
        .unwrap()
        .split((0.8, 0.1, 0.1), 3)
        .unwrap();
    let input = ds.input(&(0..10).collect::<Vec<_>>());
    let config = ModelConfig {
        attention_heads: 2,
        value_dim: Some(3),
        sar_hidden: vec![6],
        head_hidden: vec![5],
        ..ModelConfig::default()
    };
    for arch in [Architecture::FairInt, Architecture::Vanilla] {
        let model = FairIntModel::new(config.clone(), arch, &ds, 8).unwrap();
        let report = gradcheck::check_store(model.params(), 1e-6, |g, store| {
            let mut m = model.clone();
            m.set_params(store.clone())?;
            let f = m.forward::<rand_chacha::ChaCha8Rng>(g, &input, None)?;
            let p = g.sum(f.prediction)?;
            if arch == Architecture::Vanilla {
                // The baseline SAR reads detached embeddings, so a perturbed
                // embedding moves ŝ with no analytic gradient to match.
                return Ok(p);
            }
            let s = g.sum(f.pseudo)?;
            g.add(p, s)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "{arch:?}: {report:?}");
    }
}

#[test]
fn dropout_only_changes_training_forward() {
    let ds = cat_dataset(&[0, 1, 2]);
    let config = ModelConfig {
        head_hidden: vec![8],
        ..ModelConfig::default()
    };
    let model = FairIntModel::new(config, Architecture::FairInt, &ds, 1).unwrap();
    let input = all_rows(&ds);
    let eval = model.trace(&input).unwrap().prediction;
    let mut rng = rng::stream(1, Stream::Dropout, 0);
    let mut g = Graph::new();
    let f = model
        .forward(
            &mut g,
            &input,
            Some(DropoutCtx {
                rate: 0.5,
                rng: &mut rng,
            }),
        )
        .unwrap();
    assert_ne!(g.value(f.prediction).values(), &eval[..]);
    let mut g = Graph::new();
    let f = model
        .forward(
            &mut g,
            &input,
            Some(DropoutCtx {
                rate: 0.0,
                rng: &mut rng,
            }),
        )
        .unwrap();
    assert_eq!(g.value(f.prediction).values(), &eval[..]);
}
