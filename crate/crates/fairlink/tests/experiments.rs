//! Directional, statistics-level properties of the optimization and the
//! evaluation harness. These run seeded desk-scale experiments; they are
//! slower than unit tests but deterministic.

use fairlink::distill::{distill, DistillConfig};
use fairlink::eval::evaluate;
use fairlink::graph::{generate_sbm, split_edges, SbmConfig};
use fairlink::predictor::{Architecture, Substrate, TrainConfig};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn sage_recovers_structure_on_separable_sbm300() {
    // multi-block graph with dense intra connectivity; block-level scores
    // alone already separate most candidate pairs
    let g = generate_sbm(&SbmConfig {
        n_nodes: 300,
        group_sizes: vec![50; 6],
        p_intra: 0.5,
        p_inter: 0.005,
        feature_dim: 8,
        feature_signal: 1.0,
        seed: 7,
    })
    .unwrap();
    let split = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 7).unwrap();
    let sub = Substrate::from_graph(&g, &split);
    let rec = evaluate(
        "sbm300-sep",
        &sub,
        &split,
        g.sensitive(),
        Architecture::Sage,
        &TrainConfig {
            seed: 0,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(rec.auc > 85.0, "test AUC {:.2} <= 85", rec.auc);
}

#[test]
fn gradient_matching_makes_progress_without_fairness() {
    // with alpha = 0, the utility loss averaged over the last 10% of epochs
    // must sit below the first 10% (5-seed mean)
    let g = generate_sbm(&SbmConfig {
        n_nodes: 100,
        group_sizes: vec![50, 50],
        p_intra: 0.15,
        p_inter: 0.03,
        feature_dim: 4,
        feature_signal: 1.0,
        seed: 11,
    })
    .unwrap();
    let split = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 11).unwrap();

    let mut heads = Vec::new();
    let mut tails = Vec::new();
    for seed in 0..5 {
        let cfg = DistillConfig {
            alpha: 0.0,
            seed,
            ..DistillConfig::default()
        };
        let run = distill(&g, &split, Architecture::Sage, &cfg).unwrap();
        let t = run.util_trace.len();
        let k = (t / 10).max(1);
        heads.push(mean(&run.util_trace[..k]));
        tails.push(mean(&run.util_trace[t - k..]));
    }
    let head = mean(&heads);
    let tail = mean(&tails);
    assert!(
        tail < head,
        "utility loss did not trend down: first-10% mean {head:.4}, last-10% mean {tail:.4}"
    );
}

#[test]
fn raising_alpha_does_not_worsen_downstream_dp() {
    // alpha = 0 vs alpha = 2.5 on SBM-300; the mean downstream gap must not
    // grow beyond a one-point noise band
    let g = generate_sbm(&SbmConfig {
        n_nodes: 300,
        group_sizes: vec![150, 150],
        p_intra: 0.1,
        p_inter: 0.01,
        feature_dim: 8,
        feature_signal: 1.0,
        seed: 7,
    })
    .unwrap();
    let split = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 7).unwrap();
    let seeds: Vec<u64> = (0..5).collect();

    let dp_for_alpha = |alpha: f64, seed: u64| -> f64 {
        let cfg = DistillConfig {
            alpha,
            t_total: 60,
            seed,
            ..DistillConfig::default()
        };
        let run = distill(&g, &split, Architecture::Sage, &cfg).unwrap();
        let artifact = fairlink::distill::export_synthetic(
            &run.synthetic,
            fairlink::distill::ExportMode::Weighted,
            None,
        )
        .unwrap();
        let sub = fairlink::eval::substrate_from_artifact(&artifact, 2 * split.train_pos.len());
        evaluate(
            "knob",
            &sub,
            &split,
            g.sensitive(),
            Architecture::Sage,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap()
        .delta_dp
    };

    // one worker per alpha arm
    let (dp0, dp25) = std::thread::scope(|scope| {
        let h0 = scope.spawn(|| seeds.iter().map(|&s| dp_for_alpha(0.0, s)).collect::<Vec<_>>());
        let h1 = scope.spawn(|| seeds.iter().map(|&s| dp_for_alpha(2.5, s)).collect::<Vec<_>>());
        (h0.join().unwrap(), h1.join().unwrap())
    });
    let (m0, m25) = (mean(&dp0), mean(&dp25));
    assert!(
        m25 <= m0 + 1.0,
        "dp at alpha=2.5 ({m25:.2}) exceeds dp at alpha=0 ({m0:.2}) + 1.0"
    );
}

#[test]
fn seed_variation_keeps_metrics_within_band() {
    // split fixed; only theta_0 and negative resampling vary across seeds
    let g = generate_sbm(&SbmConfig {
        n_nodes: 300,
        group_sizes: vec![150, 150],
        p_intra: 0.1,
        p_inter: 0.01,
        feature_dim: 8,
        feature_signal: 1.0,
        seed: 7,
    })
    .unwrap();
    let split = split_edges(&g, (0.8, 0.1, 0.1), 1.0, 7).unwrap();
    let sub = Substrate::from_graph(&g, &split);

    let records: Vec<_> = (0..10)
        .map(|seed| {
            evaluate(
                "band",
                &sub,
                &split,
                g.sensitive(),
                Architecture::Sage,
                &TrainConfig {
                    seed,
                    ..TrainConfig::default()
                },
            )
            .unwrap()
        })
        .collect();
    let std_of = |f: fn(&fairlink::eval::MetricsRecord) -> f64| -> f64 {
        let vals: Vec<f64> = records.iter().map(f).collect();
        let m = mean(&vals);
        (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    for (name, s) in [
        ("f1", std_of(|r| r.f1)),
        ("auc", std_of(|r| r.auc)),
        ("delta_dp", std_of(|r| r.delta_dp)),
        ("delta_eo", std_of(|r| r.delta_eo)),
    ] {
        assert!(s < 10.0, "{name} std across seeds is {s:.2} >= 10");
    }
}
