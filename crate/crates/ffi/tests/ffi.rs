use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use sspsc::synth::{generate, SynthConfig};
use sspsc_ffi::*;

fn last_error() -> String {
    let p = sspsc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Data {
    xs: Vec<f64>,
    ys: Vec<i32>,
    xt: Vec<f64>,
    yt: Vec<i32>,
    n1: usize,
    n2: usize,
    m: usize,
}

fn data() -> Data {
    let p = generate(&SynthConfig { n_source: 60, n_target: 60, ..SynthConfig::default() }).unwrap();
    let flat = |x: &nalgebra::DMatrix<f64>| x.transpose().as_slice().to_vec();
    Data {
        xs: flat(&p.source_features),
        ys: p.source_labels.iter().map(|&y| y as i32).collect(),
        xt: flat(&p.target_features),
        yt: p.target_labels[..p.n_target_labeled].iter().map(|&y| y as i32).collect(),
        n1: 60,
        n2: 60,
        m: 5,
    }
}

unsafe fn dataset(d: &Data) -> *mut SspscDataset {
    let mut ds = ptr::null_mut();
    let st = sspsc_dataset_new(
        d.xs.as_ptr(),
        d.ys.as_ptr(),
        d.n1,
        d.xt.as_ptr(),
        d.n2,
        d.yt.as_ptr(),
        d.yt.len(),
        d.m,
        &mut ds,
    );
    assert_eq!(st, SspscStatus::Ok);
    ds
}

#[test]
fn fit_predict_save_load() {
    let d = data();
    unsafe {
        let ds = dataset(&d);
        let mut hp = std::mem::zeroed::<SspscHyperparams>();
        assert_eq!(sspsc_hyperparams_default(d.m, &mut hp), SspscStatus::Ok);
        assert_eq!(hp.r, 4);
        hp.max_outer_iters = 20;
        let mut model = ptr::null_mut();
        assert_eq!(sspsc_fit(ds, &hp, &mut model), SspscStatus::Ok);
        assert_eq!(sspsc_model_dim(model), 5);

        let mut scores = vec![0.0; d.n2];
        let mut labels = vec![0i32; d.n2];
        assert_eq!(
            sspsc_predict(model, d.xt.as_ptr(), d.n2, d.m, scores.as_mut_ptr(), labels.as_mut_ptr()),
            SspscStatus::Ok
        );
        let mut varphi = vec![0.0; 5];
        assert_eq!(sspsc_model_target_weights(model, varphi.as_mut_ptr(), 5), SspscStatus::Ok);
        for i in 0..d.n2 {
            let s: f64 = (0..5).map(|c| d.xt[i * 5 + c] * varphi[c]).sum();
            assert!((s - scores[i]).abs() <= 1e-12 * (1.0 + s.abs()));
            assert_eq!(labels[i], if scores[i] >= 0.0 { 1 } else { -1 });
        }

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.txt").to_str().unwrap()).unwrap();
        assert_eq!(sspsc_model_save(model, path.as_ptr()), SspscStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(sspsc_model_load(path.as_ptr(), &mut loaded), SspscStatus::Ok);
        let mut again = vec![0.0; d.n2];
        assert_eq!(
            sspsc_predict(loaded, d.xt.as_ptr(), d.n2, d.m, again.as_mut_ptr(), ptr::null_mut()),
            SspscStatus::Ok
        );
        assert_eq!(again, scores);

        sspsc_model_free(loaded);
        sspsc_model_free(model);
        sspsc_dataset_free(ds);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    let d = data();
    unsafe {
        let mut ds = ptr::null_mut();
        let bad_labels = vec![0i32; d.n1];
        let st = sspsc_dataset_new(
            d.xs.as_ptr(),
            bad_labels.as_ptr(),
            d.n1,
            d.xt.as_ptr(),
            d.n2,
            ptr::null(),
            0,
            d.m,
            &mut ds,
        );
        assert_eq!(st, SspscStatus::InvalidInput);
        assert!(ds.is_null());
        assert!(last_error().contains("label"));

        let ds = dataset(&d);
        let mut hp = std::mem::zeroed::<SspscHyperparams>();
        sspsc_hyperparams_default(d.m, &mut hp);
        hp.delta = 0.5;
        let mut model = ptr::null_mut();
        assert_eq!(sspsc_fit(ds, &hp, &mut model), SspscStatus::InvalidInput);
        assert!(last_error().contains("infeasible"));
        assert!(model.is_null());

        assert_eq!(sspsc_fit(ptr::null(), &hp, &mut model), SspscStatus::NullPointer);
        assert_eq!(sspsc_fit(ds, ptr::null(), ptr::null_mut()), SspscStatus::NullPointer);

        let missing = CString::new("/nonexistent/dir/model.txt").unwrap();
        assert_eq!(sspsc_model_load(missing.as_ptr(), &mut model), SspscStatus::Io);

        assert_eq!(sspsc_model_dim(ptr::null()), 0);
        sspsc_model_free(ptr::null_mut());
        sspsc_dataset_free(ptr::null_mut());
        sspsc_dataset_free(ds);
    }
}

#[test]
fn predict_rejects_wrong_width() {
    let d = data();
    unsafe {
        let ds = dataset(&d);
        let mut model = ptr::null_mut();
        let mut hp = std::mem::zeroed::<SspscHyperparams>();
        sspsc_hyperparams_default(d.m, &mut hp);
        hp.max_outer_iters = 2;
        assert_eq!(sspsc_fit(ds, &hp, &mut model), SspscStatus::Ok);
        let x = [0.0; 4];
        let mut s = [0.0; 1];
        assert_eq!(
            sspsc_predict(model, x.as_ptr(), 1, 4, s.as_mut_ptr(), ptr::null_mut()),
            SspscStatus::InvalidInput
        );
        sspsc_model_free(model);
        sspsc_dataset_free(ds);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sspsc.h")).unwrap();
    for name in [
        "sspsc_dataset_new",
        "sspsc_fit",
        "sspsc_predict",
        "sspsc_model_save",
        "sspsc_model_load",
        "sspsc_model_free",
        "sspsc_last_error",
        "typedef struct SspscModel SspscModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "sspsc.h"

int main(void) {
    double xs[] = {2, 0, 2.2, 0.1, 1.8, -0.1, -2, 0, -2.1, 0.2, -1.9, -0.2};
    int ys[] = {1, 1, 1, -1, -1, -1};
    double xt[] = {2, 1, -2, 1, 2.1, 0.9, -1.9, 1.1};
    int yt[] = {1, -1};
    SspscDataset *ds = NULL;
    SspscHyperparams hp;
    if (sspsc_hyperparams_default(2, &hp) != SSPSC_STATUS_OK) return 1;
    hp.k = 2;
    if (sspsc_dataset_new(xs, ys, 6, xt, 4, yt, 2, 2, &ds) != SSPSC_STATUS_OK) return 2;
    SspscModel *model = NULL;
    if (sspsc_fit(ds, &hp, &model) != SSPSC_STATUS_OK) { puts(sspsc_last_error()); return 3; }
    double scores[4];
    int labels[4];
    if (sspsc_predict(model, xt, 4, 2, scores, labels) != SSPSC_STATUS_OK) return 4;
    hp.delta = 0.25;
    SspscModel *bad = NULL;
    if (sspsc_fit(ds, &hp, &bad) != SSPSC_STATUS_INVALID_INPUT || bad != NULL) return 5;
    printf("%d %d %d %d\n", labels[0], labels[1], labels[2], labels[3]);
    sspsc_model_free(model);
    sspsc_dataset_free(ds);
    return 0;
}
"#;

/// Compiles a C program against the header and static library. Skipped when
/// no C compiler or built static library is available.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libsspsc_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping C smoke test: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stdout));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "1 -1 1 -1");
}
