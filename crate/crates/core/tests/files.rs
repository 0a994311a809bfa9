//! Dataset, prediction and covariance-cache files, and scoring of external
//! synchronizer output.

use std::fs;

use scss::bench::{run_sync_eval, SyncEvalConfig, SyncRule};
use scss::covariance::{read_bank, write_bank};
use scss::demod::{count_valid_errors, demodulate};
use scss::mixture::{
    gen_dataset, read_dataset, read_predictions, soi_symbol_offset, write_dataset, write_predictions, Dataset,
    MixtureParams, Prediction, FLAG_BITS, FLAG_COMPONENTS, FLAG_PREDICTIONS, FLAG_SHAT,
};
use scss::signals::{ComplexSignal, OfdmSpec, QpskSpec};
use scss::{Error, C64};

fn small_dataset(count: usize, n: usize, seed: u64) -> Dataset {
    let (q, o) = (QpskSpec::default(), OfdmSpec::default());
    gen_dataset(&q, &o, &MixtureParams::new(n, -3.0, 15.0, &q, &o), count, seed).unwrap()
}

fn eval(ds: &std::path::Path, preds: Option<&std::path::Path>) -> scss::Result<scss::bench::SweepResult> {
    run_sync_eval(&SyncEvalConfig {
        dataset: ds.to_path_buf(),
        predictions: preds.map(|p| p.to_path_buf()),
        rule: SyncRule::Map,
        block_len: 320,
        epsilon_scale: 1e-9,
    })
}

fn metric(r: &scss::bench::SweepResult, name: &str) -> f64 {
    r.rows.iter().find(|x| x.metric == name).unwrap().value
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.scss");
    let d = small_dataset(7, 200, 3);
    assert_eq!(d.header.flags, FLAG_COMPONENTS | FLAG_BITS);
    write_dataset(&d, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.header, d.header);
    for (a, b) in back.records.iter().zip(&d.records) {
        assert_eq!(a.y.samples, b.y.samples);
        assert_eq!(a.s.as_ref().unwrap().samples, b.s.as_ref().unwrap().samples);
        assert_eq!(a.b.as_ref().unwrap().samples, b.b.as_ref().unwrap().samples);
        assert_eq!((a.k_s, a.k_b), (b.k_s, b.k_b));
        assert_eq!(a.bits, b.bits);
    }
    // header layout: magic, version, N, K_s, K_b, count, SIR, SNR, flags
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SCSS");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 200);
    assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 16);
    assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 80);
    assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 7);
    assert_eq!(f64::from_le_bytes(bytes[18..26].try_into().unwrap()), -3.0);
    assert_eq!(f64::from_le_bytes(bytes[26..34].try_into().unwrap()), 15.0);
    assert_eq!(u32::from_le_bytes(bytes[34..38].try_into().unwrap()), 3);
}

#[test]
fn noiseless_header_stores_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.scss");
    let (q, o) = (QpskSpec::gaussian(), OfdmSpec::gaussian());
    let d = gen_dataset(&q, &o, &MixtureParams::new(64, 0.0, f64::INFINITY, &q, &o), 2, 1).unwrap();
    assert_eq!(d.header.flags, FLAG_COMPONENTS);
    write_dataset(&d, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.header.snr_db, f64::INFINITY);
    assert!(back.records[0].bits.is_empty());
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.scss");
    write_dataset(&small_dataset(3, 100, 4), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    for cut in [0, 3, 20, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    fs::write(&path, &extra).unwrap();
    assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    assert!(matches!(read_dataset(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn prediction_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = small_dataset(4, 96, 5);
    let preds: Vec<Prediction> = d
        .records
        .iter()
        .map(|r| Prediction {
            k_s: r.k_s,
            k_b: r.k_b,
            k_b_hat: 79 - r.k_b,
            s_hat: None,
        })
        .collect();
    let p = dir.path().join("p.scss");
    write_predictions(&d.header, &preds, &p).unwrap();
    let (h, back) = read_predictions(&p).unwrap();
    assert_eq!(h.flags, FLAG_PREDICTIONS);
    assert_eq!(back, preds);

    let with_s: Vec<Prediction> = preds
        .iter()
        .zip(&d.records)
        .map(|(p, r)| Prediction {
            s_hat: Some(r.y.samples.clone()),
            ..p.clone()
        })
        .collect();
    write_predictions(&d.header, &with_s, &p).unwrap();
    let (h, back) = read_predictions(&p).unwrap();
    assert_eq!(h.flags, FLAG_PREDICTIONS | FLAG_SHAT);
    assert_eq!(back, with_s);
    // a dataset is not a prediction file
    let ds = dir.path().join("d.scss");
    write_dataset(&d, &ds).unwrap();
    assert!(read_predictions(&ds).is_err());
}

#[test]
fn scoring_external_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.scss");
    let d = small_dataset(400, 160, 6);
    write_dataset(&d, &ds).unwrap();
    let p = dir.path().join("p.scss");
    let mk = |f: &dyn Fn(usize, usize) -> usize| -> Vec<Prediction> {
        d.records
            .iter()
            .enumerate()
            .map(|(i, r)| Prediction {
                k_s: r.k_s,
                k_b: r.k_b,
                k_b_hat: f(i, r.k_b),
                s_hat: None,
            })
            .collect()
    };

    write_predictions(&d.header, &mk(&|_, k| k), &p).unwrap();
    let r = eval(&ds, Some(&p)).unwrap();
    assert_eq!(metric(&r, "accuracy"), 1.0);
    assert_eq!(metric(&r, "mean_abs_shift_err"), 0.0);
    assert_eq!(r.rows[0].method, "FILE");

    // labels of another record: chance level
    let labels: Vec<usize> = d.records.iter().map(|r| r.k_b).collect();
    write_predictions(&d.header, &mk(&|i, _| labels[(i * 151 + 17) % 400]), &p).unwrap();
    let acc = metric(&eval(&ds, Some(&p)).unwrap(), "accuracy");
    assert!(acc < 0.05, "shuffled accuracy {acc}");

    write_predictions(&d.header, &mk(&|_, k| k)[..399], &p).unwrap();
    assert!(matches!(eval(&ds, Some(&p)), Err(Error::Length { .. })));

    write_predictions(&d.header, &mk(&|_, _| 80), &p).unwrap();
    assert!(matches!(eval(&ds, Some(&p)), Err(Error::OutOfRange { .. })));
}

#[test]
fn pass_through_separator_scores_like_matched_filter() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.scss");
    let d = small_dataset(20, 1280, 7);
    write_dataset(&d, &ds).unwrap();
    let preds: Vec<Prediction> = d
        .records
        .iter()
        .map(|r| Prediction {
            k_s: r.k_s,
            k_b: r.k_b,
            k_b_hat: r.k_b,
            s_hat: Some(r.y.samples.clone()),
        })
        .collect();
    let p = dir.path().join("p.scss");
    write_predictions(&d.header, &preds, &p).unwrap();
    let r = eval(&ds, Some(&p)).unwrap();

    let q = QpskSpec::default();
    let (mut e, mut t) = (0, 0);
    let mut per_record = Vec::new();
    for rec in &d.records {
        let dm = demodulate(&rec.y, &q).unwrap();
        let (a, b) = count_valid_errors(&dm, &rec.bits, q.alphabet).unwrap();
        e += a;
        t += b;
        per_record.push(a as f64 / b as f64);
    }
    assert!(e > 0);
    let mf = per_record.iter().sum::<f64>() / per_record.len() as f64;
    assert!((metric(&r, "ber") - mf).abs() < 1e-15);
    assert!((mf - e as f64 / t as f64).abs() < 1e-15);
    // the recorded symbol offset is the one implied by the stored shift
    assert_eq!(d.records[0].y.meta.symbol_offset, Some(soi_symbol_offset(&q, d.records[0].k_s)));
    let _ = ComplexSignal::new(vec![C64::new(0.0, 0.0)]);
}

#[test]
fn internal_synchronizer_on_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.scss");
    let (q, o) = (QpskSpec::default(), OfdmSpec::default());
    let d = gen_dataset(&q, &o, &MixtureParams::new(640, 0.0, 20.0, &q, &o), 60, 8).unwrap();
    write_dataset(&d, &ds).unwrap();
    let r = eval(&ds, None).unwrap();
    assert_eq!(r.rows[0].method, "MAP");
    assert!(metric(&r, "accuracy") > 0.9);
    assert!((metric(&r, "chance") - 1.0 / 80.0).abs() < 1e-15);
}

#[test]
fn bank_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.scov");
    let setup = scss::bounds::SyncSetup::gaussian(-4.0, 25.0);
    let bank = setup.analytic_bank(48).unwrap();
    write_bank(&bank, -4.0, 25.0, &path).unwrap();
    let (back, sir, snr) = read_bank(&path).unwrap();
    assert_eq!((sir, snr), (-4.0, 25.0));
    assert_eq!(back.block_len(), 48);
    assert_eq!(back.num_shifts(), 80);
    for m in [0, 33, 79] {
        let a = bank.c_yy(m).unwrap().entries();
        let b = back.c_yy(m).unwrap().entries();
        assert!((a - b).norm() < 1e-9);
    }
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SCOV");
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(read_bank(&path).is_err());
}
