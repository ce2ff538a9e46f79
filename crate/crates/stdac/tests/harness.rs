use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use stdac::curves::{emit_curves, parse_plot_points, Variant};
use stdac::idx::{self, IdxImages};
use stdac::results::{self, read_results, summary_value, SUMMARY_METRICS};
use stdac::stdac_core::dac::Model;
use stdac::stdac_core::data::ImageSet;
use stdac::stdac_core::Tensor;
use stdac::viz::{self, class_stats, st_grid, GAP};
use stdac::{checkpoint_file, run_experiment, Error, ExperimentConfig};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist10k")
}

fn images_path() -> PathBuf {
    data_dir().join("train-images-idx3-ubyte.gz")
}

fn labels_path() -> PathBuf {
    data_dir().join("train-labels-idx1-ubyte.gz")
}

fn small_set(n: usize) -> ImageSet {
    let all = idx::load_idx(&images_path(), Some(&labels_path())).unwrap();
    all.subset(&(0..n).collect::<Vec<_>>())
}

/// A quick configuration: no augmentation, small batches, plain thresholds.
fn tiny_config(out: &Path, name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.name = name.into();
    c.data_dir = data_dir();
    c.limit = 16;
    c.batch_size = 8;
    c.eval_batch = 16;
    c.max_epochs = 1;
    c.rotation_deg = 0.0;
    c.translation_frac = 0.0;
    c.scale_min = 1.0;
    c.scale_max = 1.0;
    c.out_dir = out.to_path_buf();
    c
}

#[test]
fn idx_round_trip_is_byte_exact() {
    let raw = idx::read_images(&images_path()).unwrap();
    assert_eq!((raw.count, raw.rows, raw.cols), (10_000, 28, 28));
    let labels = idx::read_labels(&labels_path()).unwrap();
    assert_eq!(labels.len(), 10_000);

    let dir = tempfile::tempdir().unwrap();
    let set = ImageSet::new(raw.to_tensor().unwrap(), Some(labels.clone())).unwrap();
    for suffix in ["", ".gz"] {
        let (ip, lp) = idx::save_idx(&set, dir.path(), "copy", suffix).unwrap();
        assert_eq!(idx::read_images(&ip).unwrap(), raw);
        assert_eq!(idx::read_labels(&lp.unwrap()).unwrap(), labels);
    }
    let plain = fs::read(dir.path().join("copy-images-idx3-ubyte")).unwrap();
    assert_eq!(plain, idx::read_maybe_gz(&images_path()).unwrap());
}

#[test]
fn gzip_detected_without_extension() {
    let dir = tempfile::tempdir().unwrap();
    let renamed = dir.path().join("images.bin");
    fs::copy(images_path(), &renamed).unwrap();
    assert_eq!(idx::read_images(&renamed).unwrap().count, 10_000);
}

#[test]
fn idx_errors() {
    let dir = tempfile::tempdir().unwrap();
    let img = IdxImages {
        count: 3,
        rows: 2,
        cols: 2,
        pixels: vec![9; 12],
    };
    let ip = dir.path().join("i");
    idx::write_images(&ip, &img).unwrap();
    let lp = dir.path().join("l");
    idx::write_labels(&lp, &[1, 2]).unwrap();
    assert!(matches!(
        idx::load_idx(&ip, Some(&lp)),
        Err(Error::CountMismatch {
            images: 3,
            labels: 2
        })
    ));
    // a label file where labels are expected to be images, and vice versa
    assert!(matches!(
        idx::load_idx(&lp, None),
        Err(Error::BadMagic { .. })
    ));
    assert!(matches!(idx::read_labels(&ip), Err(Error::BadMagic { .. })));

    let bytes = fs::read(&ip).unwrap();
    fs::write(&ip, &bytes[..bytes.len() - 5]).unwrap();
    let e = idx::read_images(&ip).unwrap_err();
    assert!(
        matches!(
            e,
            Error::Truncated {
                expected: 28,
                actual: 23,
                ..
            }
        ),
        "{e}"
    );

    idx::write_labels(&lp, &[1, 12]).unwrap();
    assert!(matches!(
        idx::read_labels(&lp),
        Err(Error::LabelRange {
            index: 1,
            label: 12,
            ..
        })
    ));
    assert!(matches!(
        idx::read_images(&dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "cfg");
    let p = dir.path().join("x.conf");
    cfg.save(&p).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    for k in ExperimentConfig::KEYS {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{k} = "))),
            "{k}"
        );
    }
    assert_eq!(ExperimentConfig::load(&p).unwrap(), cfg);
}

#[test]
fn single_epoch_run_writes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "one");
    let data = small_set(16);
    let out = run_experiment(&cfg, &data, |_, _| {}).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].rows.len(), 1);
    assert!(out.records[0].complete);

    let parsed = read_results(&out.run_csvs[0]).unwrap();
    assert_eq!(parsed.rows.len(), 1);
    assert_eq!(parsed.config, cfg);
    assert_eq!(parsed.code_version, results::CODE_VERSION);
    assert!(parsed.complete);
    assert_eq!(
        parsed.run_record().unwrap().rows[0].loss,
        out.records[0].rows[0].loss
    );

    let summary = read_results(&out.summary).unwrap();
    assert_eq!(summary.config, cfg);
    let ck = &out.checkpoints[0];
    assert!(ck.ends_with("checkpoints/one-run0-best.stdac"));
    let timing = fs::read_to_string(dir.path().join("runs/one/run0.timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 2);
}

#[test]
fn repeats_and_summary_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), "rep");
    cfg.repeat = 3;
    cfg.seed = 40;
    let data = small_set(16);
    let out = run_experiment(&cfg, &data, |_, _| {}).unwrap();
    assert_eq!(out.run_csvs.len(), 3);
    let seeds: Vec<u64> = out.records.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![40, 41, 42]);

    // recompute the summary from the CSV files alone
    let runs: Vec<_> = out
        .run_csvs
        .iter()
        .map(|p| read_results(p).unwrap().run_record().unwrap())
        .collect();
    let summary = read_results(&out.summary).unwrap();
    let means = summary.floats("mean").unwrap();
    let stds = summary.floats("std").unwrap();
    for (i, m) in SUMMARY_METRICS.iter().enumerate() {
        let vals: Vec<f64> = runs.iter().filter_map(|r| summary_value(r, m)).collect();
        let a = results::aggregate(&vals).unwrap();
        assert!((means[i].unwrap() - a.mean).abs() <= 1e-12, "{m}");
        assert!((stds[i].unwrap() - a.std).abs() <= 1e-12, "{m}");
    }
}

#[test]
fn failed_run_keeps_partial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), "broken");
    cfg.max_epochs = 3;
    // the second epoch's thresholds (u = 1.99, l = -0.1) select nothing
    cfg.rate = -1.0;
    let data = small_set(16);
    let e = run_experiment(&cfg, &data, |_, _| {}).unwrap_err();
    assert!(
        matches!(
            e,
            Error::RunFailed {
                run: 0,
                epochs: 1,
                ..
            }
        ),
        "{e}"
    );
    let parsed = read_results(&dir.path().join("runs/broken/run0.csv")).unwrap();
    assert!(!parsed.complete);
    assert_eq!(parsed.rows.len(), 1);
    assert!(
        !read_results(&dir.path().join("runs/broken/summary.csv"))
            .unwrap()
            .complete
    );
}

#[test]
fn checkpoint_restores_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), "ck");
    cfg.st_layer_count = 1;
    let data = small_set(16);
    let out = run_experiment(&cfg, &data, |_, _| {}).unwrap();
    let (back_cfg, mut model) = checkpoint_file::load(&out.checkpoints[0]).unwrap();
    assert_eq!(back_cfg, cfg);
    let f = model.label_features(data.images(), 16).unwrap();
    let pred = stdac::stdac_core::dac::cluster_assign(&f);
    let s = stdac::stdac_core::metrics::score(&pred, &data.labels().unwrap().into()).unwrap();
    let best = out.records[0]
        .rows
        .iter()
        .filter_map(|r| r.scores.map(|s| s.acc))
        .chain(out.records[0].initial.map(|s| s.acc))
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(s.acc, best);
    assert!(dir
        .path()
        .join("checkpoints/ck-run0-epoch1.stdac")
        .is_file());

    let bytes = fs::read(&out.checkpoints[0]).unwrap();
    let bad = dir.path().join("bad.stdac");
    fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert!(checkpoint_file::load(&bad).is_err());
}

fn fake_record(run: usize, acc: Option<Vec<f64>>) -> stdac::results::RunRecord {
    use stdac::results::{EpochRow, RunRecord};
    use stdac::stdac_core::metrics::Scores;
    let n = acc.as_ref().map_or(3, Vec::len);
    RunRecord {
        run,
        seed: run as u64,
        initial: None,
        rows: (0..n)
            .map(|i| EpochRow {
                epoch: i + 1,
                loss: 1.0 / (i as f64 + 1.0 + run as f64),
                selected_fraction: 0.9 + 0.01 * i as f64,
                skipped_batches: 0,
                scores: acc.as_ref().map(|a| Scores {
                    acc: a[i],
                    nmi: a[i] * 0.9,
                    ari: a[i] * 0.8,
                }),
                lambda: 0.0045 * i as f64,
                upper: 0.99 - 0.0045 * i as f64,
                lower: 0.9 + 0.0045 * i as f64,
                wall_seconds: 1.0,
            })
            .collect(),
        complete: true,
    }
}

#[test]
fn curves_one_line_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let variants: Vec<Variant> = (0..4)
        .map(|k| Variant {
            label: format!("st{k}"),
            record: fake_record(
                k,
                Some(vec![0.3 + 0.1 * k as f64, 0.1 / 3.0 + k as f64 * 0.2, 0.7]),
            ),
        })
        .collect();
    let out = emit_curves(&variants, dir.path()).unwrap();
    assert!(out.warnings.is_empty());
    let svg = fs::read_to_string(dir.path().join("acc.svg")).unwrap();
    let series = parse_plot_points(&svg);
    assert_eq!(series.len(), 4);
    let table = fs::read_to_string(dir.path().join("acc.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    for (k, (label, pts)) in series.iter().enumerate() {
        assert_eq!(label, &format!("st{k}"));
        for (i, (epoch, value)) in pts.iter().enumerate() {
            assert_eq!(*epoch, i + 1);
            assert_eq!(value, rows[i][k + 1]);
            assert_eq!(
                value.parse::<f64>().unwrap(),
                variants[k].record.rows[i].scores.unwrap().acc
            );
        }
    }
}

#[test]
fn curves_warn_about_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let variants = vec![
        Variant {
            label: "labeled".into(),
            record: fake_record(0, Some(vec![0.5, 0.6, 0.7])),
        },
        Variant {
            label: "unlabeled".into(),
            record: fake_record(1, None),
        },
    ];
    let out = emit_curves(&variants, dir.path()).unwrap();
    let svg = fs::read_to_string(dir.path().join("acc.svg")).unwrap();
    assert_eq!(parse_plot_points(&svg).len(), 1);
    assert_eq!(
        parse_plot_points(&fs::read_to_string(dir.path().join("loss.svg")).unwrap()).len(),
        2
    );
    let manifest = fs::read_to_string(&out.manifest).unwrap();
    for m in ["acc", "nmi", "ari"] {
        assert!(
            manifest.contains(&format!("warning {m}: unlabeled: no values")),
            "{manifest}"
        );
    }
    assert!(!manifest.contains("warning loss"));
}

#[test]
fn identity_st_visual_matches_input() {
    let data = small_set(8);
    let mut model =
        Model::new(stdac::stdac_core::dac::BackboneConfig::with_st_layers(1), 3).unwrap();
    model.override_st_theta(Some([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let g = st_grid(&mut [&mut model], data.images()).unwrap();
    assert_eq!((g.width, g.height), (2 * 28 + GAP, 8 * 28 + 7 * GAP));
    for r in 0..8 {
        let left = g.tile(0, r, 28, 28, GAP);
        let right = g.tile(1, r, 28, 28, GAP);
        let worst = left
            .iter()
            .zip(&right)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "row {r}: {worst}");
        assert_eq!(left, data.images().slice_rows(r, r + 1).data());
    }
    let dir = tempfile::tempdir().unwrap();
    let p =
        viz::emit_st_visuals(&mut [&mut model], &["identity"], data.images(), dir.path()).unwrap();
    let bytes = fs::read(p).unwrap();
    assert!(bytes.starts_with(b"P5\n"));
}

#[test]
fn st_visuals_need_st_layers() {
    let data = small_set(2);
    let mut model = Model::new(Default::default(), 1).unwrap();
    assert!(matches!(
        st_grid(&mut [&mut model], data.images()),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn class_statistics_layout() {
    // constant images per class: every std pixel is zero
    let n = 20;
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    let imgs = Tensor::from_fn(&[n, 4, 4, 1], |i| f64::from(labels[i / 16]) / 10.0);
    let s = class_stats(&imgs, Some(&labels)).unwrap();
    assert_eq!(s.classes, (0..10).collect::<Vec<u8>>());
    assert!(s.std.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(s.mean[3], vec![0.3; 16]);

    let dir = tempfile::tempdir().unwrap();
    let paths = viz::class_statistics(None, &imgs, Some(&labels), dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let pgm = fs::read(&paths[0]).unwrap();
    let text = String::from_utf8_lossy(&pgm[..200]);
    assert!(
        text.contains(&format!("{} 4\n", 10 * 4 + 9 * GAP)),
        "{text}"
    );
    assert!(matches!(
        viz::class_statistics(None, &imgs, None, dir.path()),
        Err(Error::MissingLabels)
    ));

    let mut model =
        Model::new(stdac::stdac_core::dac::BackboneConfig::with_st_layers(1), 0).unwrap();
    let data = small_set(20);
    let paths =
        viz::class_statistics(Some(&mut model), data.images(), data.labels(), dir.path()).unwrap();
    assert_eq!(paths.len(), 6);
}

fn stdac_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stdac"))
}

#[test]
fn cli_train_eval_viz() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.conf");
    tiny_config(dir.path(), "cli").save(&cfg_path).unwrap();
    let ok = |c: &mut Command| {
        let o = c.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    ok(stdac_bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--st-layers", "1", "--seed", "5"]));
    let ck = dir.path().join("checkpoints/cli-run0-best.stdac");
    let parsed = read_results(&dir.path().join("runs/cli/run0.csv")).unwrap();
    assert_eq!((parsed.config.st_layer_count, parsed.config.seed), (1, 5));

    let eval = ok(stdac_bin()
        .args(["eval", "--checkpoint"])
        .arg(&ck)
        .args(["--dataset", "mnist"]));
    assert!(
        eval.contains("images 16") && eval.contains("acc "),
        "{eval}"
    );

    ok(stdac_bin()
        .args(["viz", "--kind", "st", "--checkpoint"])
        .arg(dir.path().join("checkpoints/cli-run0-epoch1.stdac"))
        .arg("--checkpoint")
        .arg(&ck));
    assert!(dir.path().join("viz/st.pgm").is_file());
    ok(stdac_bin()
        .args(["viz", "--kind", "stats", "--checkpoint"])
        .arg(&ck));
    assert!(dir.path().join("viz/st-variance.pgm").is_file());
    ok(stdac_bin()
        .args(["viz", "--kind", "curves", "--checkpoint"])
        .arg(&ck));
    assert!(dir.path().join("curves/acc.svg").is_file());

    let o = stdac_bin()
        .args(["train", "--config"])
        .arg(dir.path().join("nope.conf"))
        .output()
        .unwrap();
    assert!(!o.status.success());
}
