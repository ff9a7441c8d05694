use super::*;
use crate::codec::Codec;
use crate::radiomap::Record;

fn small() -> ExperimentConfig {
    ExperimentConfig {
        train_count: 4,
        test_count: 3,
        grid_blocks: [8, 8, 4],
        extent_m: [80.0, 80.0, 40.0],
        patch: 2,
        width: 8,
        heads: 2,
        codebook_size: 8,
        ..ExperimentConfig::default()
    }
}

fn test_records(cfg: &ExperimentConfig) -> Vec<Record> {
    let ds = cfg.dataset(true).unwrap();
    (0..ds.count).map(|i| Record::generate(&ds, i).unwrap()).collect()
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small();
    let text = toml::to_string(&cfg).unwrap();
    let back: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn unknown_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    assert!(matches!(ExperimentConfig::load(Some(&path)), Err(Error::Schema(_))));
    std::fs::write(&path, "epochs = 3\n").unwrap();
    assert_eq!(ExperimentConfig::load(Some(&path)).unwrap().epochs, 3);
    std::fs::write(&path, "epochs = 0\n").unwrap();
    assert!(matches!(ExperimentConfig::load(Some(&path)), Err(Error::Validation(_))));
}

#[test]
fn splits_use_different_maps() {
    let cfg = small();
    let a = Record::generate(&cfg.dataset(false).unwrap(), 0).unwrap();
    let b = Record::generate(&cfg.dataset(true).unwrap(), 0).unwrap();
    assert_ne!(a.map.values_dbm, b.map.values_dbm);
}

#[test]
fn idw_with_full_sampling_is_exact_up_to_transport() {
    let cfg = ExperimentConfig { tau: 1.0, ..small() };
    let s = evaluate_idw(&test_records(&cfg), &cfg, f64::INFINITY, 0).unwrap();
    // Only the 1/256 dB fixed-point rounding remains.
    assert!(s.mse < (FIXED_HALF_STEP * FIXED_HALF_STEP), "{}", s.mse);
    assert_eq!(s.link_error_rate, 0.0);
}

const FIXED_HALF_STEP: f64 = crate::channel::FIXED16_STEP_DB / 2.0 + 1e-12;

#[test]
fn idw_and_codec_share_the_scoring_path() {
    let cfg = small();
    let recs = test_records(&cfg);
    let codec = Codec::new(cfg.codec(), cfg.grid().unwrap(), 1).unwrap();
    let c = evaluate_codec(&codec, &recs, &cfg, f64::INFINITY, 0).unwrap();
    let i = evaluate_idw(&recs, &cfg, f64::INFINITY, 0).unwrap();
    for (row, rec) in c.rows.iter().zip(&recs) {
        let (recon, _) = crate::training::reconstruct(&codec, rec, &cfg.eval_channel(f64::INFINITY, 0, 0)).unwrap();
        let direct = score_map(rec, &recon, &cfg).unwrap();
        assert_eq!(row.map_id, rec.meta.id);
        assert!(direct.rkmse.is_finite());
    }
    assert_eq!(c.n_maps, i.n_maps);
    assert!(c.rows.iter().chain(&i.rows).all(|r| r.rkmse.is_finite()));
}

#[test]
fn sweep_rows_are_ordered_and_reproducible() {
    let cfg = small();
    let recs = test_records(&cfg);
    let codec = Codec::new(cfg.codec(), cfg.grid().unwrap(), 2).unwrap();
    let spec = SweepSpec {
        axis: SweepAxis::Snr,
        values: vec![0.0, 4.0, 8.0, 12.0, 16.0],
        repeats: 2,
        methods: vec![Method::Codec, Method::Idw],
    };
    let a = sweep(&codec, &recs, &cfg, &spec).unwrap();
    assert_eq!(a.len(), 5 * 2 * 2);
    assert!(a.windows(2).all(|w| w[0].value <= w[1].value));
    let b = sweep(&codec, &recs, &cfg, &spec).unwrap();
    let bits = |rows: &[SweepRow]| rows.iter().map(|r| (r.mse.to_bits(), r.rkmse.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    // Repeats see different link noise.
    assert_ne!(a[0].link_error_rate, a[2].link_error_rate);
}

#[test]
fn every_axis_runs() {
    let cfg = small();
    let recs = test_records(&cfg);
    let codec = Codec::new(cfg.codec(), cfg.grid().unwrap(), 3).unwrap();
    for (axis, values) in [
        (SweepAxis::Tau, vec![0.1, 0.3]),
        (SweepAxis::NWin, vec![1.0, 2.0]),
        (SweepAxis::NTx, vec![1.0, 3.0]),
    ] {
        let spec = SweepSpec { axis, values, repeats: 1, methods: vec![Method::Codec, Method::Idw] };
        let rows = sweep(&codec, &recs, &cfg, &spec).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.rkmse.is_finite() && r.axis == axis.name()));
    }
    let bad = SweepSpec { axis: SweepAxis::NWin, values: vec![1.5], repeats: 1, methods: vec![Method::Idw] };
    assert!(sweep(&codec, &recs, &cfg, &bad).is_err());
    let empty = SweepSpec { axis: SweepAxis::Snr, values: vec![], repeats: 1, methods: vec![Method::Idw] };
    assert!(empty.validate().is_err());
}

#[test]
fn csv_round_trip_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let row = |value: f64, method, rkmse| SweepRow {
        axis: "snr".into(),
        value,
        repeat: 0,
        method,
        n_maps: 2,
        mse: 1.0,
        kmse: 2.0,
        rkmse,
        link_error_rate: 0.1,
    };
    let rows = vec![row(0.0, Method::Codec, 5.0), row(0.0, Method::Idw, 6.0), row(12.0, Method::Codec, 4.0)];
    write_sweep_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_COLUMNS.join(","));
    assert_eq!(read_sweep_csv(&path).unwrap(), rows);

    let md = render_report(&rows);
    assert!(md.contains("| 0 | yes (5.0000 vs 6.0000) |"), "{md}");
    assert!(md.contains("| codec | yes | yes |"), "{md}");
    assert!(md.contains("snr,codec_mse,codec_kmse,codec_rkmse,idw_mse,idw_kmse,idw_rkmse"));

    std::fs::write(&path, "axis,value\nsnr,1\n").unwrap();
    assert!(matches!(read_sweep_csv(&path), Err(Error::Schema(_))));
    std::fs::write(&path, format!("{}\nsnr,x,0,codec,1,1,1,1,0\n", SWEEP_COLUMNS.join(","))).unwrap();
    assert!(matches!(read_sweep_csv(&path), Err(Error::Schema(_))));
}

#[test]
fn parsing_axis_and_method() {
    assert_eq!("n_win".parse::<SweepAxis>().unwrap(), SweepAxis::NWin);
    assert!("frequency".parse::<SweepAxis>().is_err());
    assert_eq!("idw".parse::<Method>().unwrap(), Method::Idw);
}
