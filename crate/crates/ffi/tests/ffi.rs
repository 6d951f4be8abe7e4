use std::ffi::{CStr, CString};
use std::ptr;

use sparse_surfel_ffi::*;

fn last_error() -> String {
    let p = ss_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn synth(kind: SsSceneKind, size: usize) -> (*mut SsViews, *mut SsMesh) {
    let dims = [4.0, 3.0, 2.5];
    let mut views = ptr::null_mut();
    let mut gt = ptr::null_mut();
    let st = unsafe { ss_views_synthesize(kind, dims.as_ptr(), size, size, 2, 0, 5.0, &mut views, &mut gt) };
    assert_eq!(st, SsStatus::Ok);
    (views, gt)
}

#[test]
fn version_and_clean_error_state() {
    let v = unsafe { CStr::from_ptr(ss_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let (views, gt) = synth(SsSceneKind::BoxRoom, 16);
    assert!(ss_last_error().is_null());
    unsafe {
        ss_views_free(views);
        ss_mesh_free(gt);
    }
}

#[test]
fn pipeline_roundtrip() {
    let (views, gt) = synth(SsSceneKind::BoxRoom, 32);
    unsafe {
        assert_eq!(ss_views_count(views), 2);
        let (mut w, mut h) = (0usize, 0usize);
        assert_eq!(ss_views_size(views, 1, &mut w, &mut h), SsStatus::Ok);
        assert_eq!((w, h), (32, 32));

        let mut field = ptr::null_mut();
        assert_eq!(ss_reconstruct(views, 32, 0, 0, &mut field), SsStatus::Ok);
        assert_eq!(ss_field_len(field), 2 * 32 * 32);

        let mut depth = vec![0.0; w * h];
        let mut acc = vec![0.0; w * h];
        let st = ss_field_render(
            field,
            views,
            0,
            ptr::null_mut(),
            depth.as_mut_ptr(),
            ptr::null_mut(),
            acc.as_mut_ptr(),
        );
        assert_eq!(st, SsStatus::Ok);
        assert!(acc.iter().any(|&a| a > 0.5) && depth.iter().all(|d| d.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("s.ply").to_str().unwrap()).unwrap();
        assert_eq!(ss_field_write_ply(field, path.as_ptr()), SsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ss_field_read_ply(path.as_ptr(), &mut back), SsStatus::Ok);
        let mut depth2 = vec![0.0; w * h];
        ss_field_render(
            back,
            views,
            0,
            ptr::null_mut(),
            depth2.as_mut_ptr(),
            ptr::null_mut(),
            ptr::null_mut(),
        );
        assert_eq!(depth, depth2);

        let mut mesh = ptr::null_mut();
        assert_eq!(
            ss_extract_mesh(field, views, SsPreset::Scannet, 0.04, 0.16, &mut mesh),
            SsStatus::Ok
        );
        let nv = ss_mesh_vertex_count(mesh);
        let nf = ss_mesh_face_count(mesh);
        assert!(nv > 0 && nf > 0);
        let mut faces = vec![0u32; 3 * nf];
        assert_eq!(ss_mesh_faces(mesh, faces.as_mut_ptr(), faces.len()), SsStatus::Ok);
        assert!(faces.iter().all(|&i| (i as usize) < nv));
        let mut verts = vec![0.0; 3 * nv - 1];
        assert_eq!(
            ss_mesh_vertices(mesh, verts.as_mut_ptr(), verts.len()),
            SsStatus::InvalidArgument
        );

        let mut m = SsMeshMetrics::default();
        // same surface, independent samples
        assert_eq!(
            ss_mesh_metrics(gt, gt, views, 0.05, 20_000, 0, &mut m),
            SsStatus::Ok
        );
        assert!(m.precision > 0.99 && m.cd < 0.05, "{m:?}");
        assert_eq!(
            ss_mesh_metrics(mesh, gt, views, 0.05, 2000, 0, &mut m),
            SsStatus::Ok
        );
        assert!(m.cd.is_finite() && (0.0..=1.0).contains(&m.f1));

        ss_mesh_free(mesh);
        ss_field_free(back);
        ss_field_free(field);
        ss_mesh_free(gt);
        ss_views_free(views);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut views = ptr::null_mut();
        let missing = CString::new("/nonexistent/cameras.json").unwrap();
        assert_eq!(ss_views_load(missing.as_ptr(), &mut views), SsStatus::Io);
        assert!(last_error().contains("/nonexistent/cameras.json"));
        assert!(views.is_null());

        assert_eq!(ss_views_load(ptr::null(), &mut views), SsStatus::NullPointer);
        let dims = [-1.0, 1.0, 1.0];
        let st = ss_views_synthesize(
            SsSceneKind::BoxRoom,
            dims.as_ptr(),
            8,
            8,
            2,
            0,
            0.0,
            &mut views,
            ptr::null_mut(),
        );
        assert_eq!(st, SsStatus::InvalidArgument);
        assert!(last_error().contains("dims"));

        let room = [4.0, 3.0, 2.5];
        let mut one = ptr::null_mut();
        ss_views_synthesize(
            SsSceneKind::BoxRoom,
            room.as_ptr(),
            8,
            8,
            1,
            0,
            0.0,
            &mut one,
            ptr::null_mut(),
        );
        let mut field = ptr::null_mut();
        assert_eq!(
            ss_reconstruct(one, 16, 0, 0, &mut field),
            SsStatus::InvalidArgument
        );
        assert_eq!(ss_views_count(ptr::null()), 0);
        ss_views_free(one);
        ss_views_free(ptr::null_mut());
        ss_mesh_free(ptr::null_mut());
        ss_field_free(ptr::null_mut());
    }
}

#[test]
fn empty_after_cull_has_its_own_code() {
    let (views, gt) = synth(SsSceneKind::TexturedPlane, 16);
    let dir = tempfile::tempdir().unwrap();
    let behind = dir.path().join("behind.obj");
    std::fs::write(&behind, "v -1 -1 -5\nv 1 -1 -5\nv 0 1 -5\nf 1 2 3\n").unwrap();
    let path = CString::new(behind.to_str().unwrap()).unwrap();
    unsafe {
        let mut mesh = ptr::null_mut();
        assert_eq!(ss_mesh_read(path.as_ptr(), &mut mesh), SsStatus::Ok);
        assert_eq!(ss_mesh_face_count(mesh), 1);
        let mut m = SsMeshMetrics::default();
        assert_eq!(
            ss_mesh_metrics(gt, mesh, views, 0.05, 500, 0, &mut m),
            SsStatus::Empty
        );
        assert!(last_error().contains("empty after frustum culling"));
        ss_mesh_free(mesh);
        ss_mesh_free(gt);
        ss_views_free(views);
    }
}

#[test]
fn header_is_generated() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sparse_surfel.h")).unwrap();
    for name in [
        "ss_last_error",
        "ss_views_synthesize",
        "ss_reconstruct",
        "ss_extract_mesh",
        "ss_mesh_metrics",
        "SS_STATUS_EMPTY",
        "typedef struct SsViews SsViews;",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sparse_surfel.h\"\nint main(void) { SsViews *v = 0; return (int)ss_views_count(v); }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
