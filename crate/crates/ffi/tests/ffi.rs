use std::ffi::{c_char, CStr, CString};
use std::ptr;

use gma_uncertainty::checkpoint::Checkpoint;
use gma_uncertainty::config::Config;
use gma_uncertainty::dataset::{save_clip, save_dataset};
use gma_uncertainty::model::Model;
use gma_uncertainty::skeleton::SkeletonTopology;
use gma_uncertainty::synthgen::{generate, SynthConfig};
use gma_uncertainty::trainer::make_partition;
use gma_uncertainty_ffi::*;

fn tiny_config() -> Config {
    let mut cfg = Config::default();
    cfg.encoder.widths = vec![8];
    cfg.encoder.strides = vec![2];
    cfg.encoder.embedding_dim = 16;
    cfg.udm.hidden = vec![8];
    cfg.udm.t_eval = 8;
    cfg.udm.n = 16;
    cfg.ufm.widths = [16, 4];
    cfg
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        gma_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: CString,
    data: CString,
    clip: CString,
    coords: Vec<f64>,
    frames: usize,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SynthConfig {
        subjects_per_class: 4,
        clips_per_subject: 2,
        frames: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = tiny_config();
    let partition = make_partition(&cfg, &ds).unwrap();
    let model = Model::new(cfg, SkeletonTopology::coco17()).unwrap();
    let ck = Checkpoint::from_model(&model, 0, None, None, Some(partition));
    let ckpt = dir.path().join("m.ckpt");
    ck.save(&ckpt).unwrap();
    let data = dir.path().join("data");
    save_dataset(&ds, &data).unwrap();
    let clip = dir.path().join("clip.json");
    save_clip(&ds.clips[0], &clip).unwrap();
    Fixture {
        ckpt: CString::new(ckpt.to_str().unwrap()).unwrap(),
        data: CString::new(data.to_str().unwrap()).unwrap(),
        clip: CString::new(clip.to_str().unwrap()).unwrap(),
        coords: ds.clips[0].coords().to_vec(),
        frames: ds.clips[0].frames(),
        _dir: dir,
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gma_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn predict_from_coords_matches_file() {
    let f = fixture();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(gma_model_load(f.ckpt.as_ptr(), &mut m), GmaStatus::Ok);
        assert_eq!(gma_model_joint_count(m), 17);
        assert_eq!(gma_model_embedding_dim(m), 16);
        let mut a = GmaPrediction::default();
        let mut b = GmaPrediction::default();
        assert_eq!(gma_predict(m, f.coords.as_ptr(), f.frames, 17, 10.0, &mut a), GmaStatus::Ok);
        assert_eq!(gma_predict_file(m, f.clip.as_ptr(), &mut b), GmaStatus::Ok);
        assert!(a.p_f > 0.0 && a.p_f < 1.0);
        // Same coordinates; only the clip id seeding the dropout stream differs.
        assert_eq!(a.u_a, b.u_a);
        assert_eq!(a.hard_label, u8::from(a.p_f >= 0.5));

        let levels = [0.0, 0.25, 0.5];
        let mut means = [0.0; 3];
        assert_eq!(
            gma_noise_probe(m, f.coords.as_ptr(), f.frames, 17, 10.0, levels.as_ptr(), 3, 2, means.as_mut_ptr()),
            GmaStatus::Ok
        );
        assert_eq!(means[0], a.u_a);
        gma_model_free(m);
    }
}

#[test]
fn evaluate_through_handles() {
    let f = fixture();
    unsafe {
        let mut m = ptr::null_mut();
        let mut d = ptr::null_mut();
        assert_eq!(gma_model_load(f.ckpt.as_ptr(), &mut m), GmaStatus::Ok);
        assert_eq!(gma_dataset_load(f.data.as_ptr(), &mut d), GmaStatus::Ok);
        assert_eq!(gma_dataset_len(d), 16);
        let split = CString::new("all").unwrap();
        let mut out = GmaMetrics::default();
        assert_eq!(gma_evaluate(m, d, split.as_ptr(), &mut out), GmaStatus::Ok);
        assert_eq!(out.records, 16);
        assert!(out.auc_roc >= 0.0 && out.auc_roc <= 100.0);
        let bad = CString::new("holdout").unwrap();
        assert_eq!(gma_evaluate(m, d, bad.as_ptr(), &mut out), GmaStatus::Config);
        assert!(last_error().contains("holdout"));
        gma_dataset_free(d);
        gma_model_free(m);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    let f = fixture();
    unsafe {
        let mut m = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.ckpt").unwrap();
        assert_eq!(gma_model_load(missing.as_ptr(), &mut m), GmaStatus::Io);
        assert!(m.is_null());
        assert!(last_error().contains("/definitely/not/here.ckpt"));
        assert_eq!(gma_model_load(ptr::null(), &mut m), GmaStatus::NullPointer);

        assert_eq!(gma_model_load(f.ckpt.as_ptr(), &mut m), GmaStatus::Ok);
        let mut out = GmaPrediction::default();
        // 13 joints against a 17-joint model.
        assert_eq!(gma_predict(m, f.coords.as_ptr(), f.frames, 13, 10.0, &mut out), GmaStatus::Topology);
        assert_eq!(gma_predict(ptr::null(), f.coords.as_ptr(), f.frames, 17, 10.0, &mut out), GmaStatus::NullPointer);
        gma_model_free(m);

        let mut d = ptr::null_mut();
        // Zero subjects is an infeasible generator config.
        assert_eq!(gma_dataset_generate(0, 1, 10, 0, &mut d), GmaStatus::Config);
        assert_eq!(gma_dataset_generate(2, 1, 20, 0, &mut d), GmaStatus::Ok);
        assert_eq!(gma_dataset_len(d), 4);
        gma_dataset_free(d);
        gma_model_free(ptr::null_mut());
        gma_dataset_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gma_uncertainty.h")).unwrap();
    for sym in ["gma_model_load", "gma_predict", "gma_noise_probe", "gma_evaluate", "gma_last_error", "GMA_STATUS_OK", "GmaPrediction"] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    // Skipped when no C compiler is installed.
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child
                .stdin
                .take()
                .expect("piped")
                .write_all(b"#include \"gma_uncertainty.h\"\nint main(void) { GmaPrediction p; (void)p; return gma_version() == 0; }\n")?;
            child.wait_with_output()
        })
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
