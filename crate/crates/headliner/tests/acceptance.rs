//! End-to-end acceptance suite.
//!
//! Each test prints one `ACCEPT Cnn <name>: PASS` line (visible with
//! `--nocapture`) and enforces its numeric threshold directly, so a failing
//! criterion fails the build. Criteria 8 and 10 share one experiment run
//! through a lazy static; criterion 10 recomputes it from scratch and
//! compares bytes.

use std::sync::LazyLock;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use headliner::align::{edit_stats, levenshtein_align, EditStats};
use headliner::confusion::{sample_confused, ConfusionModel};
use headliner::eval::{lcs_length, rouge_l, rouge_n};
use headliner::model::{Batch, BatchItem, ForwardOpts, Mode, Model, ModelConfig};
use headliner::numerics::{gradient_check, Graph, NumericsError, ParamSet, Tensor, Var};
use headliner::pipeline::{run_experiment, ExperimentArgs, ExperimentResult};
use headliner::seed::{stream_rng, stream_seed};
use headliner::synth::{SynthConfig, SynthTask};
use headliner::training::{
    exact_match_rate, lr_schedule_step, teacher_forcing_prob, train, EncodedPair, Regime,
    TrainConfig,
};
use headliner::vocab::{tokenize_chars, TokenId, Unit, Vocabulary};

fn pass(criterion: &str, started: Instant, detail: &str) {
    println!(
        "ACCEPT {criterion}: PASS ({:.1}s) {detail}",
        started.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// C1: analytic gradients vs central finite differences
// ---------------------------------------------------------------------------

fn rand_tensor(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Squashes any op output to a scalar through tanh and summation so every
/// component contributes to the checked loss.
fn scalarize(g: &mut Graph, y: Var) -> Result<Var, NumericsError> {
    let squashed = g.tanh(y)?;
    let n = g.value(squashed).len();
    let flat = if g.value(squashed).rank() == 2 {
        squashed
    } else {
        g.reshape(squashed, &[1, n])?
    };
    let (rows, cols) = g.value(flat).dims2()?;
    let ones = g.input(Tensor::filled(&[cols, 1], 1.0))?;
    let col = g.matmul(flat, ones)?;
    let ones2 = g.input(Tensor::filled(&[1, rows], 1.0))?;
    let total = g.matmul(ones2, col)?;
    g.reshape(total, &[])
}

fn check_primitive<F>(name: &str, shapes: &[&[usize]], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let slots: Vec<usize> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| params.add(format!("p{i}"), rand_tensor(s, &mut rng)))
        .collect();
    let forward = |ps: &ParamSet| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = slots.iter().map(|&s| g.param(ps, s)).collect::<Result<_, _>>()?;
        let y = build(&mut g, &vars)?;
        let loss = scalarize(&mut g, y)?;
        Ok(g.value(loss).item())
    };
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = slots.iter().map(|&s| g.param(&params, s)).collect::<Result<_, _>>().unwrap();
        let y = build(&mut g, &vars).unwrap();
        let loss = scalarize(&mut g, y).unwrap();
        g.backward(loss).unwrap();
        g.flush_grads(&mut params);
    }
    let err = gradient_check(forward, &mut params, 1e-5).unwrap();
    assert!(err < 1e-4, "{name}: max relative error {err}");
    err
}

fn arnn_err_fixture() -> (Model, Batch, ForwardOpts) {
    let vocab: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
    let v = std::sync::Arc::new(Vocabulary::from_content_tokens(vocab));
    let mut cfg = ModelConfig::new(Mode::ArnnErr, v.clone(), v);
    cfg.num_layers = 2;
    cfg.hidden_dim = 8;
    cfg.embed_dim = 4;
    let model = Model::new(cfg, 2024);
    // ragged lengths so padding, masking, and state carry are all on the
    // differentiated path
    let items = [
        BatchItem {
            source: vec![5, 6, 7, 8],
            target: vec![9, 10],
            labels: Some(vec![true, false, true, true]),
        },
        BatchItem {
            source: vec![11, 9],
            target: vec![5, 6, 7],
            labels: Some(vec![false, true]),
        },
        BatchItem {
            source: vec![8, 8, 12],
            target: vec![14],
            labels: Some(vec![true, true, false]),
        },
    ];
    let batch = Batch::new(&items).unwrap();
    let opts = ForwardOpts::train(Mode::ArnnErr, 0.0, 1.0, 1.0);
    (model, batch, opts)
}

#[test]
fn criterion_01_gradient_integrity() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut track = |e: f64| {
        if e > worst {
            worst = e;
        }
    };

    track(check_primitive("matmul", &[&[3, 4], &[4, 2]], 1, |g, v| g.matmul(v[0], v[1])));
    track(check_primitive("add", &[&[3, 4], &[3, 4]], 2, |g, v| g.add(v[0], v[1])));
    track(check_primitive("add-bias", &[&[3, 4], &[4]], 3, |g, v| g.add(v[0], v[1])));
    track(check_primitive("mul", &[&[2, 5], &[2, 5]], 4, |g, v| g.mul(v[0], v[1])));
    track(check_primitive("row_scale", &[&[2, 5], &[2, 1]], 5, |g, v| {
        let s = g.reshape(v[1], &[2])?;
        g.row_scale(v[0], s)
    }));
    track(check_primitive("sigmoid", &[&[4, 3]], 6, |g, v| g.sigmoid(v[0])));
    track(check_primitive("tanh", &[&[4, 3]], 7, |g, v| g.tanh(v[0])));
    track(check_primitive("softmax", &[&[3, 5]], 8, |g, v| g.softmax(v[0])));
    track(check_primitive("masked_softmax", &[&[2, 4]], 9, |g, v| {
        let mask = Tensor::from_vec(&[2, 4], vec![1., 1., 0., 1., 0., 1., 1., 0.]).unwrap();
        g.masked_softmax(v[0], &mask)
    }));
    track(check_primitive("embedding", &[&[4, 3]], 10, |g, v| g.embedding(v[0], &[0, 2, 1, 2])));
    track(check_primitive("cosine", &[&[3, 4], &[3, 4]], 11, |g, v| g.cosine(v[0], v[1])));
    track(check_primitive("cross_entropy", &[&[3, 4]], 12, |g, v| {
        let p = g.softmax(v[0])?;
        let w = Tensor::from_vec(&[3], vec![0.5, 0.3, 0.2]).unwrap();
        g.cross_entropy(p, &[1, 0, 3], &w)
    }));
    track(check_primitive("binary_cross_entropy", &[&[4, 1]], 13, |g, v| {
        let s = g.sigmoid(v[0])?;
        let p = g.reshape(s, &[4])?;
        let l = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let w = Tensor::from_vec(&[4], vec![0.25; 4]).unwrap();
        g.binary_cross_entropy(p, &l, &w)
    }));
    track(check_primitive("concat", &[&[2, 2], &[2, 3]], 14, |g, v| g.concat(&[v[0], v[1]])));
    track(check_primitive("col", &[&[3, 4]], 15, |g, v| {
        let c = g.col(v[0], 2)?;
        g.reshape(c, &[3, 1])
    }));
    track(check_primitive("scale", &[&[2, 3]], 16, |g, v| g.scale(v[0], -1.7)));
    track(check_primitive("recip", &[&[2, 3]], 17, |g, v| {
        let s = g.sigmoid(v[0])?; // keep the argument away from the pole
        g.recip(s, 1e-12)
    }));
    track(check_primitive("dropout-path", &[&[3, 4]], 18, |g, v| {
        // fixed-mask dropout behaves like an elementwise product; emulate
        // with a frozen mask through mul to keep f deterministic
        let mask = g.input(Tensor::from_vec(&[3, 4], vec![
            1.25, 0.0, 1.25, 1.25, 0.0, 1.25, 1.25, 0.0, 1.25, 1.25, 1.25, 0.0,
        ])?)?;
        g.mul(v[0], mask)
    }));

    // full joint loss on a 2-layer dim-8 arnn_err model
    let (mut model, batch, opts) = arnn_err_fixture();
    model.batch_backward(&batch, &opts, 7).unwrap();
    let probe = model.with_params(model.params.clone());
    let err = gradient_check(
        |ps| {
            probe
                .with_params(ps.clone())
                .batch_loss_value(&batch, &opts, 7)
                .map_err(|_| NumericsError::NonFiniteValue { op: "model loss" })
        },
        &mut model.params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "full arnn_err loss: max relative error {err}");
    track(err);

    assert!(t.elapsed().as_secs() < 120, "criterion 1 exceeded its budget");
    pass("C01 gradient-integrity", t, &format!("max relative error {worst:.2e}"));
}

// ---------------------------------------------------------------------------
// C2: alignment cost vs exhaustive edit-script search
// ---------------------------------------------------------------------------

/// Recursively tries every edit script with no memoization; independent of
/// the DP implementation.
fn exhaustive_edit_cost(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let diagonal = exhaustive_edit_cost(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let delete = exhaustive_edit_cost(&a[1..], b) + 1;
    let insert = exhaustive_edit_cost(a, &b[1..]) + 1;
    diagonal.min(delete).min(insert)
}

fn all_sequences(alphabet: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out: Vec<Vec<TokenId>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<TokenId>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for t in 0..alphabet {
                let mut s = seq.clone();
                s.push(t);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn criterion_02_alignment_oracle() {
    let t = Instant::now();
    let seqs = all_sequences(3, 5);
    assert_eq!(seqs.len(), 364);
    let mut checked = 0u64;
    for a in &seqs {
        for b in &seqs {
            let alignment = levenshtein_align(a, b);
            let oracle = exhaustive_edit_cost(a, b);
            assert_eq!(
                alignment.cost(),
                oracle,
                "cost mismatch for {a:?} vs {b:?}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 364 * 364);
    assert!(t.elapsed().as_secs() < 120, "criterion 2 exceeded its budget");
    pass("C02 alignment-oracle", t, &format!("{checked} pairs, every length class 0..=5"));
}

// ---------------------------------------------------------------------------
// C3: confusion channel statistics
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_confusion_channel_statistics() {
    let t = Instant::now();
    let v = Vocabulary::from_content_tokens(["a", "b", "c"].map(String::from));
    let (a, b, c) = (
        v.id_of("a").unwrap(),
        v.id_of("b").unwrap(),
        v.id_of("c").unwrap(),
    );
    let rows = [
        (a, vec![(a, 0.7), (b, 0.2), (c, 0.1)]),
        (b, vec![(a, 0.05), (b, 0.9), (c, 0.05)]),
        (c, vec![(a, 0.25), (b, 0.25), (c, 0.5)]),
    ];
    let model = ConfusionModel::from_probability_rows(&v, rows.clone()).unwrap();
    model.validate().unwrap();

    let draws = 100_000;
    let mut worst = 0.0f64;
    for (p, expected) in &rows {
        let source = vec![*p; draws];
        let sample = sample_confused(&source, &model, stream_seed(99, &format!("row{p}")));
        for &(q, prob) in expected {
            let freq =
                sample.corrupted.iter().filter(|&&y| y == q).count() as f64 / draws as f64;
            let dev = (freq - prob).abs();
            assert!(dev < 0.01, "P({q}|{p}) empirical {freq} vs {prob}");
            if dev > worst {
                worst = dev;
            }
        }
        // row sums of the model itself
        let sum: f64 = (0..v.len()).map(|q| model.probability(*p, q)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        // labels agree with the draw everywhere
        for (j, &l) in sample.labels.iter().enumerate() {
            assert_eq!(l, sample.corrupted[j] == *p);
        }
    }
    pass("C03 confusion-statistics", t, &format!("max empirical deviation {worst:.4}"));
}

// ---------------------------------------------------------------------------
// C4: e ≡ 1 reduction identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_reduction_identity() {
    let t = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(44);
    for case in 0..100 {
        let hidden = [4, 8, 12][case % 3];
        let embed = [3, 4, 6][(case / 3) % 3];
        let layers = 1 + case % 2;
        let vocab_n = 6 + case % 5;
        let tokens: Vec<String> = (0..vocab_n).map(|i| format!("t{i}")).collect();
        let v = std::sync::Arc::new(Vocabulary::from_content_tokens(tokens));
        let mut cfg = ModelConfig::new(Mode::ArnnErr, v.clone(), v.clone());
        cfg.hidden_dim = hidden;
        cfg.embed_dim = embed;
        cfg.num_layers = layers;
        let model = Model::new(cfg, 1000 + case as u64);

        let len = rng.random_range(1..7usize);
        let source: Vec<TokenId> =
            (0..len).map(|_| rng.random_range(5..v.len())).collect();

        let mut opts_err = ForwardOpts::eval(Mode::ArnnErr);
        opts_err.force_e_one = true;
        let opts_plain = ForwardOpts::eval(Mode::Arnn);

        let enc_err = model.encode(&source, &opts_err).unwrap();
        let enc_plain = model.encode(&source, &opts_plain).unwrap();
        for (he, hp) in enc_err.hidden.iter().zip(&enc_plain.hidden) {
            for (x, y) in he.data().iter().zip(hp.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }

        let mut st_err = model.init_decoder(&enc_err);
        let mut st_plain = model.init_decoder(&enc_plain);
        let mut prev = headliner::vocab::Special::Bos.id();
        for _ in 0..3 {
            let (pe, ne) = model.decode_step(&enc_err, &st_err, prev, &opts_err).unwrap();
            let (pp, np) = model.decode_step(&enc_plain, &st_plain, prev, &opts_plain).unwrap();
            for (x, y) in pe.iter().zip(&pp) {
                assert!(
                    (x - y).abs() <= 1e-12,
                    "case {case}: probability drift {}",
                    (x - y).abs()
                );
            }
            prev = pe
                .iter()
                .enumerate()
                .max_by(|(i, x), (j, y)| x.partial_cmp(y).unwrap().then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap();
            st_err = ne;
            st_plain = np;
        }
    }
    pass("C04 reduction-identity", t, "100 configurations, ≤1e-12 per component");
}

// ---------------------------------------------------------------------------
// C5: ROUGE oracle
// ---------------------------------------------------------------------------

fn brute_force_lcs(a: &[TokenId], b: &[TokenId]) -> usize {
    fn is_subsequence(needle: &[TokenId], hay: &[TokenId]) -> bool {
        let mut it = hay.iter();
        needle.iter().all(|n| it.by_ref().any(|h| h == n))
    }
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        if (mask.count_ones() as usize) <= best {
            continue;
        }
        let sub: Vec<TokenId> = a
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &t)| t)
            .collect();
        if is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

#[test]
fn criterion_05_rouge_oracle() {
    let t = Instant::now();
    let seqs = all_sequences(3, 6);
    assert_eq!(seqs.len(), 1093);
    for a in &seqs {
        for b in &seqs {
            assert_eq!(
                lcs_length(a, b),
                brute_force_lcs(a, b),
                "LCS mismatch for {a:?} vs {b:?}"
            );
        }
    }

    // hand-computed reference cases: ref [a,b,c] vs cand [a,b,d]
    let reference = vec![0usize, 1, 2];
    let candidate = vec![0usize, 1, 3];
    let r1 = rouge_n(&candidate, &reference, 1).unwrap();
    assert!((r1.recall - 2.0 / 3.0).abs() < 1e-15);
    let r2 = rouge_n(&candidate, &reference, 2).unwrap();
    assert!((r2.recall - 0.5).abs() < 1e-15);
    let rl = rouge_l(&candidate, &reference).unwrap();
    assert!((rl.recall - 2.0 / 3.0).abs() < 1e-15);

    assert!(t.elapsed().as_secs() < 120, "criterion 5 exceeded its budget");
    pass("C05 rouge-oracle", t, "1093^2 LCS pairs + hand cases");
}

// ---------------------------------------------------------------------------
// C6: schedule fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_schedule_fidelity() {
    let t = Instant::now();
    assert!((teacher_forcing_prob(0.0, 1.0) - 0.5).abs() < 1e-12);
    let expected = 1.0 / (1.0 + std::f64::consts::E);
    assert!((teacher_forcing_prob(1.0, 1.0) - expected).abs() < 1e-12);
    let decayed = lr_schedule_step(0.1, 3.0, 3.0, 1.15);
    assert!((decayed - 0.1 / 1.15).abs() < 1e-12);
    assert_eq!(lr_schedule_step(0.1, 3.0, 2.9, 1.15), 0.1);
    pass("C06 schedule-fidelity", t, "inverse-sigmoid and lr-decay reference points");
}

// ---------------------------------------------------------------------------
// C7: clean-regime memorization
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_memorization() {
    let t = Instant::now();
    let task = SynthTask::new(SynthConfig { vocab_size: 50, ..SynthConfig::default() }, 77);
    let records = task.generate_corpus(50, 78);
    let (sources, targets): (Vec<_>, Vec<_>) = records
        .iter()
        .map(|r| (tokenize_chars(&r.source), tokenize_chars(&r.target)))
        .unzip();
    let source_vocab = std::sync::Arc::new(Vocabulary::build(sources.clone(), 1));
    let target_vocab = std::sync::Arc::new(Vocabulary::build(targets.clone(), 1));
    let pairs: Vec<EncodedPair> = sources
        .iter()
        .zip(&targets)
        .map(|(s, g)| EncodedPair {
            source: source_vocab.encode(s),
            target: target_vocab.encode(g),
        })
        .collect();

    let mut cfg = ModelConfig::new(Mode::Arnn, source_vocab, target_vocab);
    cfg.hidden_dim = 64;
    cfg.embed_dim = 32;
    cfg.max_decode_len = 10;
    let mut model = Model::new(cfg, 79);

    let train_cfg = TrainConfig {
        regime: Regime::Clean,
        max_epochs: 500,
        batch_size: 25,
        initial_lr: 0.5,
        dropout: 0.0,
        val_fraction: 0.0,
        eval_interval: 1.0,
        master_seed: 80,
        ..TrainConfig::default()
    };
    // 500 epochs at most; stop as soon as the bar is cleared
    let chunks = 20;
    let mut epochs_run = 0;
    let mut rate = 0.0;
    let mut chunk_cfg = TrainConfig { max_epochs: 500 / chunks, ..train_cfg };
    for chunk in 0..chunks {
        chunk_cfg.master_seed = stream_seed(train_cfg.master_seed, &format!("chunk{chunk}"));
        train(&mut model, &pairs, &chunk_cfg, None).unwrap();
        epochs_run += chunk_cfg.max_epochs;
        rate = exact_match_rate(&model, &pairs).unwrap();
        if rate >= 0.95 {
            break;
        }
    }
    assert!(
        rate >= 0.95,
        "exact-match rate {rate} after {epochs_run} epochs"
    );
    assert!(t.elapsed().as_secs() < 600, "criterion 7 exceeded its budget");
    pass(
        "C07 memorization",
        t,
        &format!("{:.0}% exact match after {epochs_run} epochs", rate * 100.0),
    );
}

// ---------------------------------------------------------------------------
// C8 + C10: robustness trend and byte determinism
// ---------------------------------------------------------------------------

fn grid_args() -> ExperimentArgs {
    // the defaults are the acceptance configuration
    ExperimentArgs::default()
}

static GRID: LazyLock<ExperimentResult> = LazyLock::new(|| {
    run_experiment(&grid_args()).expect("experiment runs")
});

#[test]
fn criterion_08_robustness_trend() {
    let t = Instant::now();
    let result = &*GRID;
    println!("{}", result.grid_table());

    let proposed = result.cell("proposed").unwrap();
    let naive_arnn = result.cell("naive-arnn").unwrap();
    let gap = proposed.rouge1 - naive_arnn.rouge1;
    assert!(
        gap >= 1.0,
        "proposed ROUGE-1 {:.2} vs naive-arnn {:.2}: gap {gap:.2} < 1 point",
        proposed.rouge1,
        naive_arnn.rouge1
    );

    for cell in ["clean-rnn", "clean-arnn"] {
        let corrupted = result.cell(cell).unwrap();
        let clean = result.oracle_cell(cell).unwrap();
        assert!(
            clean.rouge1 > corrupted.rouge1,
            "{cell}: clean-input ROUGE-1 {:.2} does not dominate corrupted {:.2}",
            clean.rouge1,
            corrupted.rouge1
        );
    }
    assert!(t.elapsed().as_secs() < 2700, "criterion 8 exceeded its budget");
    pass(
        "C08 robustness-trend",
        t,
        &format!("proposed-naive gap {gap:.2} points over {} seeds", grid_args().seeds.len()),
    );
}

#[test]
fn criterion_10_determinism() {
    let t = Instant::now();
    let first = &*GRID;
    let second = run_experiment(&grid_args()).unwrap();
    assert_eq!(first.grid_csv(), second.grid_csv(), "grid.csv differs between runs");
    assert_eq!(first.oracle_csv(), second.oracle_csv(), "oracle.csv differs between runs");
    assert_eq!(first.per_seed_csv(), second.per_seed_csv(), "per_seed.csv differs between runs");
    pass("C10 determinism", t, "two full experiment runs, byte-identical tables");
}

// ---------------------------------------------------------------------------
// C9: CER fidelity on a known channel
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_cer_fidelity() {
    let t = Instant::now();
    let task = SynthTask::new(
        SynthConfig { substitution_rate: 0.2, ..SynthConfig::default() },
        90,
    );
    let pairs = task.generate_transcript_pairs(1500, 91);
    let corpus: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| tokenize_chars(&p.reference))
        .collect();
    let vocab = Vocabulary::build(corpus, 1);

    let mut stats = EditStats::default();
    for p in &pairs {
        let r = vocab.encode(&Unit::Char.tokenize(&p.reference, None).unwrap());
        let h = vocab.encode(&Unit::Char.tokenize(&p.hyp, None).unwrap());
        stats.merge(&edit_stats(&levenshtein_align(&r, &h)));
    }
    let cer = stats.error_rate().unwrap();
    assert!(
        (cer - 0.20).abs() <= 0.01,
        "aggregate CER {cer:.4} outside 0.20 ± 0.01"
    );
    pass("C09 cer-fidelity", t, &format!("CER {cer:.4} on a 20% channel"));
}

// ---------------------------------------------------------------------------
// shared sanity for the experiment grid shape
// ---------------------------------------------------------------------------

#[test]
fn experiment_grid_shape() {
    let t = Instant::now();
    let result = &*GRID;
    assert_eq!(result.grid.len(), 5);
    let csv = result.grid_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cell,rouge1_f1,rouge2_f1,rougeL_f1"));
    assert_eq!(lines.count(), 5);
    for (_, s) in &result.grid {
        for v in [s.rouge1, s.rouge2, s.rouge_l] {
            assert!((0.0..=100.0).contains(&v));
        }
    }
    pass("grid-shape", t, "5 rows x 3 ROUGE columns");
}

// seed independence across grid cells
#[test]
fn experiment_cells_use_distinct_streams() {
    let t = Instant::now();
    let mut seeds = std::collections::HashSet::new();
    for (name, _, _) in headliner::pipeline::GRID_CELLS {
        assert!(seeds.insert(stream_seed(1, &format!("train/{name}"))));
        assert!(seeds.insert(stream_seed(1, &format!("init/{name}"))));
    }
    assert_eq!(seeds.len(), 10);
    pass("cell-stream-independence", t, "no corruption stream shared between cells");
}

// deterministic RNG sanity shared by every criterion above
#[test]
fn stream_rng_is_stable() {
    let a: Vec<u64> = stream_rng(5, "x").random_iter().take(3).collect();
    let b: Vec<u64> = stream_rng(5, "x").random_iter().take(3).collect();
    assert_eq!(a, b);
}
