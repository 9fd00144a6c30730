//! Acceptance checks. Each test prints one `PASS` or `FAIL` line per
//! criterion and fails when its criterion does.
//!
//! The dataset-backed criteria are `#[ignore]`d; run them with
//! `cargo test -p rgrec --release --test acceptance -- --include-ignored
//! --nocapture` after pointing `RGREC_LASTFM_DIR` (and optionally
//! `RGREC_MOVIELENS_DIR`, `RGREC_DIANPING_DIR`) at directories holding
//! `kg_final.txt` and `ratings_final.txt`. `RGREC_ACCEPTANCE_WORK` selects
//! where workspaces and the shared cache are kept.

mod common;

use std::f64::consts::{FRAC_PI_2, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};

use common::{brute_auc, brute_f1, brute_topk, oracle_mine, random_graph};
use rand::Rng;
use rgrec::config::PipelineConfig;
use rgrec::embed::{train_embeddings, Composition, EmbeddingModel, KgeConfig, KgeKind};
use rgrec::eval::{auc, f1, rank_metrics, rank_of, EvalReport};
use rgrec::kg::{KnowledgeGraph, PredicateId};
use rgrec::model::{aggregate_rule, expand, gradient_check, user_representation, Example, ModelParams, RgRecModel};
use rgrec::pipeline::{run_ablation, run_repeated, Ablation, Dataset, Pipeline, Stage};
use rgrec::rules::{mine_rules, MiningConfig, Rule, RuleSet};
use rgrec::seed;
use rgrec::synth::{self, SynthConfig};
use rgrec::weights::{pretrain_loss, pretrain_loss_and_gradient, FeatureMatrix};
use tempfile::TempDir;

fn verdict(id: &str, ok: bool, detail: &str) -> bool {
    println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn require(id: &str, ok: bool, detail: &str) {
    assert!(verdict(id, ok, detail), "{id} failed: {detail}");
}

fn dataset_dir(var: &str) -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os(var)?);
    (dir.join("kg_final.txt").is_file() && dir.join("ratings_final.txt").is_file()).then_some(dir)
}

fn work_dir() -> PathBuf {
    std::env::var_os("RGREC_ACCEPTANCE_WORK")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rgrec-acceptance"))
}

/// Default configuration for a dataset directory; every criterion
/// shares one artifact cache so identical stages are computed once.
fn dataset_config(name: &str, dir: &Path, label: &str) -> PipelineConfig {
    let work = work_dir();
    let mut cfg = PipelineConfig::for_dataset(name);
    cfg.kg = dir.join("kg_final.txt");
    cfg.ratings = dir.join("ratings_final.txt");
    cfg.workspace = work.join(name).join(label);
    cfg.cache = Some(work.join("cache"));
    cfg
}

fn lastfm_or_fail(ids: &[&str]) -> PathBuf {
    match dataset_dir("RGREC_LASTFM_DIR") {
        Some(d) => d,
        None => {
            for id in ids {
                verdict(id, false, "Last.FM not available; set RGREC_LASTFM_DIR");
            }
            panic!("Last.FM not available");
        }
    }
}

fn mean_of(report: &EvalReport, metric: &str) -> f64 {
    report.get(metric).expect("metric present").mean()
}

fn within(id: &str, what: &str, got: f64, want: f64, tol: f64) -> bool {
    verdict(
        id,
        (got - want).abs() <= tol,
        &format!("{what} = {got:.4}, expected {want:.3} ± {tol}"),
    )
}

#[test]
#[ignore = "needs the Last.FM dataset"]
fn criterion_1_and_2_lastfm_ctr_and_topk() {
    let dir = lastfm_or_fail(&["criterion 1", "criterion 2"]);
    let cfg = dataset_config("lastfm", &dir, "default");
    let report = run_repeated(&cfg).expect("pipeline runs");
    let mut ok = true;
    ok &= within("criterion 1", "AUC (5-run mean)", mean_of(&report, "auc"), 0.825, 0.02);
    ok &= within("criterion 1", "F1 (5-run mean)", mean_of(&report, "f1"), 0.747, 0.02);
    ok &= within("criterion 2", "Hits@5", mean_of(&report, "hits@5"), 0.450, 0.03);
    ok &= within("criterion 2", "Hits@10", mean_of(&report, "hits@10"), 0.571, 0.03);
    ok &= within("criterion 2", "NDCG@5", mean_of(&report, "ndcg@5"), 0.324, 0.03);
    ok &= within("criterion 2", "NDCG@10", mean_of(&report, "ndcg@10"), 0.363, 0.03);
    assert!(ok);
}

fn mined_lengths(cfg: &PipelineConfig) -> Vec<usize> {
    let p = Pipeline::new(cfg.clone()).expect("workspace");
    p.run(Stage::Mine, true).expect("mining runs");
    let text = fs::read_to_string(p.path("rules.mined.tsv")).expect("rules file");
    let mut hist = vec![0; cfg.max_rule_len + 1];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let body = line.rsplit('\t').next().unwrap();
        hist[body.split(',').count()] += 1;
    }
    hist
}

#[test]
#[ignore = "needs the Last.FM dataset"]
fn criterion_3_lastfm_rule_counts() {
    let dir = lastfm_or_fail(&["criterion 3"]);
    let id = "criterion 3";
    let near = |got: usize, want: f64| (got as f64 - want).abs() <= 0.1 * want;
    let mut cfg = dataset_config("lastfm", &dir, "mine-3");
    let h3 = mined_lengths(&cfg);
    let total: usize = h3.iter().sum();
    let mut ok = verdict(id, near(total, 57.0), &format!("I=3 mined {total} rules, expected 57 ± 10%"));
    ok &= verdict(id, near(h3[2], 6.0), &format!("I=3 length-2 rules {}, expected 6 ± 10%", h3[2]));
    ok &= verdict(id, near(h3[3], 51.0), &format!("I=3 length-3 rules {}, expected 51 ± 10%", h3[3]));
    cfg.max_rule_len = 4;
    cfg.workspace = work_dir().join("lastfm").join("mine-4");
    let h4 = mined_lengths(&cfg);
    ok &= verdict(id, near(h4[4], 335.0), &format!("I=4 length-4 rules {}, expected 335 ± 10%", h4[4]));
    assert!(ok);
}

fn ablation_auc(cfg: &PipelineConfig, mode: Ablation) -> Vec<(String, f64)> {
    let report = run_ablation(cfg, mode).expect("ablation runs");
    report.rows.iter().map(|(label, r)| (label.clone(), mean_of(r, "auc"))).collect()
}

#[test]
#[ignore = "needs the Last.FM dataset"]
fn criterion_4_filtering_strategy_ordering() {
    let dir = lastfm_or_fail(&["criterion 4"]);
    let rows = ablation_auc(&dataset_config("lastfm", &dir, "default"), Ablation::FilterStrategy);
    let get = |name: &str| rows.iter().find(|(l, _)| l == name).unwrap().1;
    let (rotate, transe, cwa) = (get("rotate"), get("transe"), get("cwa"));
    require(
        "criterion 4",
        rotate >= transe - 0.005 && rotate >= cwa - 0.005,
        &format!("AUC rotate {rotate:.4}, transe {transe:.4}, cwa {cwa:.4}"),
    );
}

#[test]
#[ignore = "needs the Last.FM dataset"]
fn criterion_5_pretraining_helps() {
    let dir = lastfm_or_fail(&["criterion 5"]);
    let rows = ablation_auc(&dataset_config("lastfm", &dir, "default"), Ablation::NoPretrain);
    let get = |name: &str| rows.iter().find(|(l, _)| l == name).unwrap().1;
    let (with, without) = (get("pretrain"), get("no-pretrain"));
    require(
        "criterion 5",
        with - without >= 0.01,
        &format!("AUC with pre-training {with:.4}, without {without:.4}"),
    );
}

#[test]
#[ignore = "needs the MovieLens-1M dataset"]
fn criterion_6_movielens_auc() {
    let Some(dir) = dataset_dir("RGREC_MOVIELENS_DIR") else {
        require("criterion 6", false, "MovieLens-1M not available; set RGREC_MOVIELENS_DIR");
        return;
    };
    let report = run_repeated(&dataset_config("movielens", &dir, "default")).expect("pipeline runs");
    assert!(within("criterion 6", "MovieLens-1M AUC", mean_of(&report, "auc"), 0.913, 0.02));
}

/// Loads a dataset in the integer `kg_final.txt` / `ratings_final.txt`
/// layout at Dianping-Food's field conventions; the real files are used
/// when `RGREC_DIANPING_DIR` is set.
#[test]
fn criterion_6_dianping_format_loads() {
    let tmp = TempDir::new().unwrap();
    let dir = match dataset_dir("RGREC_DIANPING_DIR") {
        Some(d) => d,
        None => {
            fs::write(
                tmp.path().join("kg_final.txt"),
                "0\t0\t5\n1\t0\t5\n2\t1\t6\n3\t1\t6\n4\t2\t7\n",
            )
            .unwrap();
            fs::write(
                tmp.path().join("ratings_final.txt"),
                "0\t0\t1\n0\t2\t0\n1\t1\t1\n1\t3\t1\n2\t4\t1\n2\t0\t0\n",
            )
            .unwrap();
            tmp.path().to_path_buf()
        }
    };
    let loaded = Dataset::load(&dir.join("kg_final.txt"), &dir.join("ratings_final.txt"), None)
        .and_then(|d| rgrec::kg::merge_interactions(&d.kg, &d.data, &d.item_map).map(|g| (d, g)));
    let ok = match &loaded {
        Ok((d, g)) => g.num_users() == d.data.vocab().num_users() && g.num_interactions() == d.data.num_positives(),
        Err(_) => false,
    };
    let detail = match &loaded {
        Ok((d, g)) => format!(
            "Dianping-format files load: {} triples, {} users, {} interactions",
            d.kg.base_triples().count(),
            g.num_users(),
            g.num_interactions()
        ),
        Err(e) => format!("loading failed: {e}"),
    };
    require("criterion 6", ok, &detail);
}

fn check_gradients() -> bool {
    let id = "criterion 7";
    let mut worst_model: f64 = 0.0;
    let mut checked = 0;
    for s in 0..30 {
        let g = random_graph(s);
        let Ok(mined) = mine_rules(&g, &MiningConfig::default()) else {
            continue;
        };
        let rules: Vec<Rule> = mined.rules().take(3).cloned().collect();
        if rules.is_empty() {
            continue;
        }
        let depth = rules.iter().map(Rule::len).max().unwrap();
        let mut rng = seed::rng(s);
        let mut params = ModelParams::init(3, g.graph().num_entities(), depth, rules.len(), None, &mut rng);
        params.values_mut().iter_mut().for_each(|v| *v *= 3.0);
        let trees: Vec<Vec<_>> = (0..6)
            .map(|k| {
                let u = g.user_entity(k % g.num_users() as u32);
                rules.iter().map(|r| expand(&g, u, r, 2, None, &mut rng)).collect()
            })
            .collect();
        let batch: Vec<Example> = trees
            .iter()
            .enumerate()
            .map(|(k, t)| Example {
                item: g.item_entity((k % g.num_items()) as u32),
                label: (k % 2) as f64,
                trees: t,
            })
            .collect();
        worst_model = worst_model.max(gradient_check(&params, &batch, 0.05, 1e-5));
        checked += 1;
    }

    let mut worst_w: f64 = 0.0;
    for s in 0..20 {
        let mut rng = seed::rng(500 + s);
        let (rows, cols) = (30, 6);
        let values = (0..rows * cols).map(|_| rng.gen_bool(0.4) as u8).collect();
        let labels = (0..rows).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
        let x = FeatureMatrix::new(rows, cols, values, labels, 0).unwrap();
        let all: Vec<usize> = (0..rows).collect();
        let w: Vec<f64> = (0..cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, grad) = pretrain_loss_and_gradient(&x, &all, &w, 0.1);
        for j in 0..cols {
            let eps = 1e-5;
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += eps;
            down[j] -= eps;
            let fd = (pretrain_loss(&x, &all, &up, 0.1) - pretrain_loss(&x, &all, &down, 0.1)) / (2.0 * eps);
            let scale = fd.abs().max(grad[j].abs());
            if scale > 1e-7 {
                worst_w = worst_w.max((fd - grad[j]).abs() / scale);
            }
        }
    }
    verdict(
        id,
        checked >= 10 && worst_model < 1e-4 && worst_w < 1e-4,
        &format!(
            "gradient check: fine-tuning loss {worst_model:.2e} over {checked} graphs, pre-training loss {worst_w:.2e}"
        ),
    )
}

fn check_unit_modulus() -> bool {
    let g = KnowledgeGraph::from_labeled(&[["a", "r", "b"], ["b", "r", "c"], ["a", "s", "c"], ["c", "t", "a"]]);
    let cfg = KgeConfig {
        dim: 16,
        steps: 200,
        batch_size: 4,
        negatives: 3,
        learning_rate: 0.05,
        margin: 2.0,
        ..KgeConfig::default()
    };
    let (m, _) = train_embeddings(&g, &cfg).unwrap();
    // A rotation is stored as its phases, one real per coordinate, so its
    // modulus is one by construction; evaluating cos² + sin² in floating
    // point may still round by an ulp.
    let structural = m.predicate_table().len() == m.num_base_predicates() * m.dim()
        && (0..m.num_base_predicates() as u32).all(|b| {
            let p = PredicateId::from_base(b);
            [p, p.inverse()].iter().all(|&q| match m.predicate(q) {
                Composition::Phases(v) => v.iter().all(|t| t.is_finite() && *t > -std::f64::consts::PI && *t <= std::f64::consts::PI),
                Composition::Translation(_) => false,
            })
        });
    let dev = m.predicate_moduli().iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        "criterion 7",
        structural && dev <= f64::EPSILON,
        &format!("RotatE predicates are pure phases; evaluated modulus deviates by at most {dev:.1e}"),
    )
}

fn check_composition() -> bool {
    let model = |rows: &[f64]| EmbeddingModel::from_parts(KgeKind::RotatE, 1, vec![0.0; 2], rows.to_vec()).unwrap();
    let p = PredicateId::from_base;
    let mut ok = true;
    for (head, a, b) in [(0.75, 0.25, 0.5), (FRAC_PI_2, 0.5, FRAC_PI_2 - 0.5), (0.0, 1.0, -1.0), (-2.5, -1.0, -1.5)] {
        let m = model(&[head, a, b]);
        let c = m.composition_confidence(p(0), &Rule::new(vec![p(1), p(2)]));
        ok &= c.value == 0.0;
    }
    let m = model(&[0.5, 0.25, 0.25]);
    ok &= m.composition_confidence(p(0), &Rule::new(vec![p(1), p(2), p(2).inverse(), p(1)])).value == 0.0;
    let hand = model(&[FRAC_PI_2, 0.0]).composition_confidence(p(0), &Rule::new(vec![p(1)])).value;
    verdict(
        "criterion 7",
        ok && (hand + SQRT_2).abs() < 1e-9,
        &format!("exact compositions score 0; hand case {hand:.12} vs -√2"),
    )
}

fn check_mining() -> bool {
    let mut mismatches = 0;
    for s in 0..100 {
        let g = random_graph(s);
        for max_len in 2..=4 {
            let mined = mine_rules(
                &g,
                &MiningConfig {
                    max_len,
                    ..MiningConfig::default()
                },
            )
            .unwrap();
            let got: std::collections::BTreeSet<Vec<PredicateId>> = mined.rules().map(|r| r.body().to_vec()).collect();
            if got != oracle_mine(&g, max_len) {
                mismatches += 1;
            }
        }
    }
    verdict(
        "criterion 7",
        mismatches == 0,
        &format!("rule mining equals exhaustive enumeration on 100 random graphs, I = 2..4 ({mismatches} mismatches)"),
    )
}

fn check_metrics() -> bool {
    let mut rng = seed::rng(31);
    let mut bad = 0;
    let mut n_ctr = 0;
    while n_ctr < 1000 {
        let n = rng.gen_range(2..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        n_ctr += 1;
        bad += ((auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() > 1e-12) as usize;
        bad += ((f1(&scores, &labels, 0.5) - brute_f1(&scores, &labels, 0.5)).abs() > 1e-12) as usize;
    }
    for _ in 0..1000 {
        let lists: Vec<Vec<f64>> = (0..rng.gen_range(1..10))
            .map(|_| (0..rng.gen_range(1..30)).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect())
            .collect();
        let ranks: Vec<f64> = lists.iter().map(|l| rank_of(l[0], &l[1..])).collect();
        for k in [5, 10] {
            let (h, n) = rank_metrics(&ranks, k);
            let (bh, bn) = brute_topk(&lists, k);
            bad += ((h - bh).abs() > 1e-12 || (n - bn).abs() > 1e-12) as usize;
        }
    }
    verdict(
        "criterion 7",
        bad == 0,
        &format!("AUC, F1, Hits@k and NDCG@k equal brute force on 1000 instances each ({bad} mismatches)"),
    )
}

fn check_selection_and_linearity() -> bool {
    let mut worst: f64 = 0.0;
    for s in 0..20 {
        let g = random_graph(s);
        let rules: Vec<Rule> = mine_rules(&g, &MiningConfig::default()).unwrap().rules().take(3).cloned().collect();
        if rules.is_empty() {
            continue;
        }
        let depth = rules.iter().map(Rule::len).max().unwrap();
        let mut rng = seed::rng(s);
        let params = ModelParams::init(4, g.graph().num_entities(), depth, rules.len(), None, &mut rng);
        let u = g.user_entities().next().unwrap();
        let trees: Vec<_> = rules.iter().map(|r| expand(&g, u, r, 3, None, &mut rng)).collect();
        let with = |w: &[f64]| {
            let mut p = params.clone();
            p.rule_weights_mut().copy_from_slice(w);
            user_representation(&p, &trees)
        };
        for (j, tree) in trees.iter().enumerate() {
            let onehot: Vec<f64> = (0..rules.len()).map(|k| (k == j) as u8 as f64).collect();
            let direct = aggregate_rule(&params, tree);
            for (a, b) in with(&onehot).iter().zip(&direct) {
                worst = worst.max((a - b).abs());
            }
        }
        let w1: Vec<f64> = (0..rules.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..rules.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 0.3 * a + 1.7 * b).collect();
        let (u1, u2, um) = (with(&w1), with(&w2), with(&mix));
        for k in 0..u1.len() {
            worst = worst.max((um[k] - (0.3 * u1[k] + 1.7 * u2[k])).abs());
        }
    }
    verdict(
        "criterion 7",
        worst < 1e-9,
        &format!("one-hot rule weights select a rule and the combination is linear (max error {worst:.1e})"),
    )
}

fn check_checkpoints_and_determinism() -> bool {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    synth::write(
        &SynthConfig {
            users: 30,
            items: 60,
            interactions_per_user: 6,
            ..SynthConfig::default()
        },
        &data,
    )
    .unwrap();
    let cfg = |ws: &str| {
        let pairs: Vec<(String, String)> = [
            ("workspace", ws),
            ("num_rules", "8"),
            ("embed.dim", "8"),
            ("embed.steps", "60"),
            ("embed.batch_size", "32"),
            ("embed.negatives", "4"),
            ("pretrain.learning_rate", "0.01"),
            ("pretrain.max_epochs", "10"),
            ("train.max_epochs", "3"),
            ("train.dim", "4"),
            ("train.fanout", "2"),
            ("eval.repeats", "2"),
            ("eval.negatives", "20"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        PipelineConfig::from_pairs(&pairs, &data).unwrap()
    };
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let files = [
        "split.train.idx",
        "rules.mined.tsv",
        "embedding.rotate.bin",
        "rules.ranked.tsv",
        "weights.tsv",
        "features.bin",
        "model.bin",
    ];
    let outputs: Vec<Vec<Vec<u8>>> = ["a", "b"]
        .iter()
        .map(|ws| {
            let c = cfg(ws);
            single.install(|| Pipeline::new(c.clone()).unwrap().run(Stage::Evaluate, true)).unwrap();
            let mut out: Vec<Vec<u8>> = files.iter().map(|f| fs::read(c.workspace.join(f)).unwrap()).collect();
            let report = fs::read_to_string(c.workspace.join("report.txt")).unwrap();
            out.push(report.lines().filter(|l| l.starts_with("# values")).collect::<Vec<_>>().join("\n").into_bytes());
            out
        })
        .collect();
    let deterministic = outputs[0] == outputs[1];

    let ws = data.join("a");
    let model = RgRecModel::load(ws.join("model.bin")).unwrap();
    model.save(tmp.path().join("again.bin")).unwrap();
    let model_ok = fs::read(ws.join("model.bin")).unwrap() == fs::read(tmp.path().join("again.bin")).unwrap()
        && RgRecModel::load(tmp.path().join("again.bin")).unwrap() == model;
    let emb = EmbeddingModel::load(ws.join("embedding.rotate.bin")).unwrap();
    emb.save(tmp.path().join("emb.bin")).unwrap();
    let emb_ok = fs::read(ws.join("embedding.rotate.bin")).unwrap() == fs::read(tmp.path().join("emb.bin")).unwrap();
    let d = Dataset::load(&data.join("kg_final.txt"), &data.join("ratings_final.txt"), None).unwrap();
    let g = rgrec::kg::merge_interactions(&d.kg, &d.data, &d.item_map).unwrap();
    let ranked = RuleSet::read(ws.join("rules.ranked.tsv"), g.graph());
    let feats_ok = ranked
        .and_then(|r| FeatureMatrix::load(ws.join("features.bin"), &r))
        .map(|f| f.rows() > 0)
        .unwrap_or(false);
    let mut bytes = fs::read(ws.join("model.bin")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(tmp.path().join("cut.bin"), &bytes).unwrap();
    let truncated_rejected = RgRecModel::load(tmp.path().join("cut.bin")).is_err();

    let a = verdict(
        "criterion 7",
        model_ok && emb_ok && feats_ok && truncated_rejected,
        &format!("checkpoints round-trip bit-exactly and truncated files are rejected (model {model_ok}, embedding {emb_ok}, features {feats_ok}, truncation {truncated_rejected})"),
    );
    let b = verdict(
        "criterion 7",
        deterministic,
        "two single-threaded end-to-end runs produce byte-identical artifacts and metrics",
    );
    a && b
}

#[test]
fn criterion_7_property_suite() {
    let results = [
        check_gradients(),
        check_unit_modulus(),
        check_composition(),
        check_mining(),
        check_metrics(),
        check_selection_and_linearity(),
        check_checkpoints_and_determinism(),
    ];
    assert!(results.iter().all(|&r| r), "criterion 7 has failing checks");
}
