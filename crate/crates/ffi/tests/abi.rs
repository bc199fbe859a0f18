use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use respnet::models::{save_checkpoint, Model, ModelConfig, ModelKind};
use respnet_ffi::*;

fn last_error() -> String {
    let p = respnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tone(seconds: f64, rate: u32) -> Vec<f32> {
    (0..(seconds * f64::from(rate)) as usize).map(|i| (i as f32 * 0.7).sin() * 0.5).collect()
}

#[test]
fn scores_match_the_library_and_validate_inputs() {
    let (mut a, mut h) = (0.0, 0.0);
    unsafe {
        assert_eq!(respnet_icbhi_scores(0.75, 1.0, &mut a, &mut h), RespnetStatus::Ok);
        assert_eq!((a, h), respnet::metrics::icbhi_scores(0.75, 1.0));
        assert_eq!(respnet_icbhi_scores(1.5, 0.5, &mut a, &mut h), RespnetStatus::InvalidArgument);
        assert!(last_error().contains("[0, 1]"));
        assert_eq!(respnet_icbhi_scores(0.5, 0.5, ptr::null_mut(), &mut h), RespnetStatus::NullArgument);
    }
}

#[test]
fn frontend_patches_round_trip() {
    unsafe {
        let mut fe = ptr::null_mut();
        assert_eq!(respnet_frontend_new(7, &mut fe), RespnetStatus::InvalidArgument);
        assert!(fe.is_null());
        assert_eq!(respnet_frontend_new(RESPNET_FRONTEND_GAMMA, &mut fe), RespnetStatus::Ok);
        let audio = tone(20.0, 4000);
        let mut patches = ptr::null_mut();
        assert_eq!(respnet_frontend_patches(fe, audio.as_ptr(), audio.len(), 4000, &mut patches), RespnetStatus::Ok);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(respnet_patches_shape(patches, &mut rows, &mut cols), RespnetStatus::Ok);
        assert_eq!((respnet_patches_count(patches), rows, cols), (2, 124, 154));
        let data = std::slice::from_raw_parts(respnet_patches_data(patches), 2 * rows * cols);
        let fe_rust = respnet::spectrogram::FrontEnd::new(respnet::spectrogram::FrontEndKind::Gamma);
        let clip = respnet::dsp::AudioClip::new(audio.clone(), 4000, "x", None).unwrap();
        let expect: Vec<f32> = fe_rust.patches(&clip).unwrap().into_iter().flat_map(|p| p.values).collect();
        assert_eq!(data, &expect[..]);
        respnet_patches_free(patches);

        let short = tone(1.0, 4000);
        assert_eq!(respnet_frontend_patches(fe, short.as_ptr(), short.len(), 4000, &mut patches), RespnetStatus::Shape);
        assert!(patches.is_null());
        respnet_frontend_free(fe);
        respnet_frontend_free(ptr::null_mut());
    }
}

#[test]
fn model_load_predict_and_classify() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&Model::new(ModelConfig::new(ModelKind::Baseline, 3), 2).unwrap(), &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(respnet_model_load(cpath.as_ptr(), &mut model), RespnetStatus::Ok);
        assert_eq!(respnet_model_num_classes(model), 3);
        let (mut rows, mut cols) = (0, 0);
        assert_eq!(respnet_model_input_shape(model, &mut rows, &mut cols), RespnetStatus::Ok);
        assert_eq!((rows, cols), (124, 154));

        let inputs: Vec<f32> = (0..2 * rows * cols).map(|i| ((i % 17) as f32 - 8.0) / 8.0).collect();
        let mut probs = [0.0f64; 6];
        assert_eq!(respnet_model_predict(model, inputs.as_ptr(), 2, probs.as_mut_ptr(), 5), RespnetStatus::BufferTooSmall);
        assert_eq!(respnet_model_predict(model, inputs.as_ptr(), 2, probs.as_mut_ptr(), 6), RespnetStatus::Ok);
        for row in probs.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let (mut mean, mut label) = ([0.0f64; 3], usize::MAX);
        assert_eq!(respnet_model_classify(model, inputs.as_ptr(), 2, mean.as_mut_ptr(), 3, &mut label), RespnetStatus::Ok);
        for c in 0..3 {
            assert!((mean[c] - (probs[c] + probs[3 + c]) / 2.0).abs() < 1e-12);
        }
        let best = (0..3).fold(0, |b, c| if mean[c] > mean[b] { c } else { b });
        assert_eq!(label, best);
        assert_eq!(respnet_model_classify(model, inputs.as_ptr(), 0, mean.as_mut_ptr(), 3, &mut label), RespnetStatus::InvalidArgument);
        respnet_model_free(model);
    }
}

#[test]
fn load_failures_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let garbage = dir.path().join("bad.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(respnet_model_load(missing.as_ptr(), &mut model), RespnetStatus::Io);
        assert!(model.is_null());
        assert!(last_error().contains("none.ckpt"));
        assert_eq!(respnet_model_load(garbage.as_ptr(), &mut model), RespnetStatus::Format);
        assert_eq!(respnet_model_load(ptr::null(), &mut model), RespnetStatus::NullArgument);
        assert_eq!(respnet_model_num_classes(ptr::null()), 0);
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(respnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/respnet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "respnet_model_load",
        "respnet_model_predict",
        "respnet_model_classify",
        "respnet_frontend_patches",
        "respnet_icbhi_scores",
        "respnet_last_error",
        "RESPNET_STATUS_BUFFER_TOO_SMALL",
        "RESPNET_FRONTEND_GAMMA",
        "typedef struct RespnetModel RespnetModel",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"respnet.h\"\nint main(void) {\n  RespnetModel *m = 0;\n  double a, h;\n  RespnetStatus s = respnet_icbhi_scores(0.5, 0.5, &a, &h);\n  respnet_model_free(m);\n  return s == RESPNET_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("a C compiler is available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
