use lgd::harness::{
    edge_targets, eval_edge_fidelity, gen_dataset, load_checkpoint, load_corpus, load_ddpm, load_lgp, read_metrics,
    run_ddpm_job, run_lgp_job, save_checkpoint, save_corpus, save_ddpm, save_lgp, split_corpus, sweep_beta,
    sweep_stop_frac, write_csv, DatasetConfig, DdpmJob, Experiment, LgpJob, MetricsRow, SweepRow, CURVE_HEADER,
    METRICS_HEADER, SWEEP_HEADER,
};
use lgd::maps::{extract_edges, DEFAULT_EDGE_THRESHOLD};
use lgd::predictor::LgpTrainConfig;
use lgd::sampler::SampleRunConfig;
use lgd::{Error, Tensor32};
use proptest::prelude::*;
use std::path::Path;
use std::sync::OnceLock;

fn small_data(n: usize, seed: u64) -> DatasetConfig {
    DatasetConfig { n, size: 16, seed, ..DatasetConfig::default() }
}

#[test]
fn dataset_is_deterministic_and_balanced() {
    let a = gen_dataset(&small_data(30, 4)).unwrap();
    let b = gen_dataset(&small_data(30, 4)).unwrap();
    assert_eq!(a.items.len(), 30);
    for (x, y) in a.items.iter().zip(&b.items) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.class, y.class);
    }
    let h = a.histogram();
    let (lo, hi) = (h.iter().min().unwrap(), h.iter().max().unwrap());
    assert!(hi - lo <= 1, "{h:?}");
    for item in &a.items {
        assert_eq!(item.image.shape(), [1, 16, 16]);
        assert!(item.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(item.edges, extract_edges(&item.image, DEFAULT_EDGE_THRESHOLD).unwrap());
        assert!(item.sketch.is_some());
    }
    let c = gen_dataset(&small_data(30, 5)).unwrap();
    assert_ne!(a.items[0].image, c.items[0].image);
}

#[test]
fn dataset_rejects_bad_configs() {
    assert!(matches!(gen_dataset(&DatasetConfig { size: 15, ..small_data(4, 0) }), Err(Error::Config(_))));
    assert!(gen_dataset(&small_data(0, 0)).is_err());
    let unknown = DatasetConfig { classes: vec!["hexagon".into()], ..small_data(2, 0) };
    assert!(gen_dataset(&unknown).is_err());
}

#[test]
fn split_holds_out_a_tenth() {
    for n in [10, 97, 2000] {
        let (train, held) = split_corpus(n);
        assert_eq!(train.end, held.start);
        assert_eq!(held.end, n);
        assert_eq!(held.len(), ((n as f64) * 0.1).round() as usize);
    }
}

fn tensors() -> impl Strategy<Value = Vec<(String, Tensor32)>> {
    let one = ("[a-z.0-9]{1,12}", prop::collection::vec(1usize..4, 0..4)).prop_flat_map(|(name, shape)| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f32>(), n)
            .prop_map(move |data| (name.clone(), Tensor32::new(shape.clone(), data).unwrap()))
    });
    prop::collection::vec(one, 0..5)
}

fn bits(t: &Tensor32) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(entries in tensors(), config in ".{0,40}") {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.lgdf");
        save_checkpoint(&path, &entries, &config).unwrap();
        let (back, cfg) = load_checkpoint(&path).unwrap();
        prop_assert_eq!(cfg, config);
        prop_assert_eq!(back.len(), entries.len());
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.shape(), t1.shape());
            prop_assert_eq!(bits(t0), bits(t1));
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) {
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn damaged_checkpoints_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.lgdf");
    let entries = vec![
        ("first".to_string(), Tensor32::full([2, 3], 1.0)),
        ("second".to_string(), Tensor32::full([4], 2.0)),
    ];
    save_checkpoint(&path, &entries, "{}").unwrap();
    let bytes = std::fs::read(&path).unwrap();

    write_bytes(&path, &bytes[..bytes.len() - 12]);
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, Error::Checkpoint { .. }));
    assert!(err.to_string().contains("entry 1"), "{err}");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    write_bytes(&path, &bad);
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("magic"));

    let mut bad = bytes.clone();
    bad[4] = 9;
    write_bytes(&path, &bad);
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("version"));

    let mut long = bytes.clone();
    long.push(0);
    write_bytes(&path, &long);
    assert!(load_checkpoint(&path).is_err());

    assert!(load_checkpoint(&dir.path().join("missing")).is_err());
}

struct Fixture {
    corpus: lgd::harness::ShapesCorpus,
    ddpm: lgd::denoiser::Ddpm,
    lgp: lgd::predictor::Lgp<f32>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = gen_dataset(&small_data(20, 1)).unwrap();
        let mut job = DdpmJob { base_width: 8, schedule_steps: 6, ..DdpmJob::default() };
        job.train.steps = 3;
        job.train.batch_size = 4;
        let (ddpm, log) = run_ddpm_job(&corpus, &job).unwrap();
        assert_eq!(log.len(), 3);
        let lgp_job = LgpJob {
            hidden_dims: vec![16, 8],
            train: LgpTrainConfig { steps: 3, batch_size: 2, pixels_per_image: Some(8), ..LgpTrainConfig::default() },
            ..LgpJob::default()
        };
        let (lgp, _) = run_lgp_job(&corpus, &ddpm, &lgp_job).unwrap();
        Fixture { corpus, ddpm, lgp }
    })
}

#[test]
fn models_and_corpora_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let classes: Vec<String> = f.corpus.class_names().to_vec();

    save_ddpm(&dir.path().join("d"), &f.ddpm, &classes).unwrap();
    let (ddpm, names) = load_ddpm(&dir.path().join("d")).unwrap();
    assert_eq!(names, classes);
    assert_eq!(ddpm.unet.params(), f.ddpm.unet.params());
    assert_eq!(ddpm.schedule.steps(), f.ddpm.schedule.steps());

    save_lgp(&dir.path().join("l"), &f.lgp).unwrap();
    let lgp = load_lgp(&dir.path().join("l")).unwrap();
    assert_eq!(lgp.params(), f.lgp.params());
    assert_eq!(lgp.running_stats(), f.lgp.running_stats());
    assert_eq!(lgp.config(), f.lgp.config());

    save_corpus(&dir.path().join("c"), &f.corpus).unwrap();
    let corpus = load_corpus(&dir.path().join("c")).unwrap();
    assert_eq!(corpus.items.len(), f.corpus.items.len());
    for (a, b) in corpus.items.iter().zip(&f.corpus.items) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.sketch, b.sketch);
        assert_eq!(a.class, b.class);
    }

    // A predictor file is not a denoiser.
    assert!(load_ddpm(&dir.path().join("l")).is_err());
}

fn experiment() -> Experiment<'static> {
    let f = fixture();
    Experiment {
        ddpm: &f.ddpm,
        lgp: &f.lgp,
        targets: targets(),
        run: SampleRunConfig { steps: 6, cfg_scale: 2.0, height: 16, width: 16, ..SampleRunConfig::default() },
    }
}

fn targets() -> &'static [lgd::harness::EdgeTarget] {
    static T: OnceLock<Vec<lgd::harness::EdgeTarget>> = OnceLock::new();
    T.get_or_init(|| {
        let f = fixture();
        let (_, held) = split_corpus(f.corpus.items.len());
        edge_targets(&f.corpus, held, true, None).unwrap()
    })
}

fn comparable(rows: &[MetricsRow]) -> Vec<(u64, f64, f64, f64, Option<f64>)> {
    rows.iter()
        .map(|r| (r.seed, r.beta, r.stop_frac, r.edge_fidelity_mse, r.lgp_loss))
        .collect()
}

#[test]
fn sweeps_cover_every_value_and_repeat_exactly() {
    let exp = experiment();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let seeds = [0, 1, 2];
    let betas = [0.0, 0.8, 1.6];
    let (summary, rows) = sweep_beta(&exp, &pool, &betas, 0.5, &seeds).unwrap();
    assert_eq!(summary.len(), betas.len());
    assert_eq!(rows.len(), betas.len() * seeds.len());
    assert_eq!(summary.iter().map(|s| s.beta).collect::<Vec<_>>(), betas);
    assert!(summary.iter().all(|s| s.n == seeds.len()));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.edge_fidelity_mse)));
    assert!(rows.iter().filter(|r| r.beta == 0.0).all(|r| r.lgp_loss.is_none()));
    assert!(rows.iter().filter(|r| r.beta > 0.0).all(|r| r.lgp_loss.is_some()));
    let (_, again) = sweep_beta(&exp, &pool, &betas, 0.5, &seeds).unwrap();
    assert_eq!(comparable(&rows), comparable(&again));

    let stops = [0.0, 0.5, 0.9];
    let (summary, rows) = sweep_stop_frac(&exp, &pool, &stops, 1.6, &seeds[..1]).unwrap();
    assert_eq!(summary.len(), stops.len());
    assert_eq!(rows.len(), stops.len());

    assert!(sweep_beta(&exp, &pool, &[-1.0], 0.5, &seeds).is_err());
    assert!(sweep_stop_frac(&exp, &pool, &[1.5], 1.0, &seeds).is_err());
    assert!(sweep_stop_frac(&exp, &pool, &[1.0], 1.0, &seeds).is_err());
}

#[test]
fn single_runs_score_against_their_target() {
    let exp = experiment();
    let run = exp.run_one("x", 1.0, 0.5, 4).unwrap();
    let target = exp.target_for(4).unwrap();
    assert_eq!(run.image.shape(), [1, 16, 16]);
    assert_eq!(run.row.edge_fidelity_mse, eval_edge_fidelity(&run.image, &target.edges).unwrap() as f64);
}

#[test]
fn csv_outputs_carry_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let row = MetricsRow {
        experiment: "e".into(),
        seed: 3,
        beta: 1.6,
        stop_frac: 0.5,
        edge_fidelity_mse: 0.25,
        lgp_loss: None,
        wall_ms: 12.0,
    };
    let path = dir.path().join("m.csv");
    write_csv(&path, &["note".into()], std::slice::from_ref(&row)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# note");
    assert_eq!(lines[1], METRICS_HEADER);
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].seed, 3);
    assert_eq!(back[0].lgp_loss, None);
    assert_eq!(back[0].edge_fidelity_mse, 0.25);

    let summary = lgd::harness::summarize(&[row]);
    let path = dir.path().join("s.csv");
    write_csv::<SweepRow>(&path, &[], &summary).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next(), Some(SWEEP_HEADER));

    let path = dir.path().join("c.csv");
    write_csv(&path, &[], &[lgd::harness::CurvePoint { t_norm: 0.5, mse: 0.1 }]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().next(), Some(CURVE_HEADER));
}
