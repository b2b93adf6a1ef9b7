use coag_web::{homogeneous_decay, Majorant};

#[test]
fn constant_kernel_decay_follows_the_riccati_solution() {
    let out = homogeneous_decay("constant", 1.0, 1.0, 10).unwrap();
    assert_eq!(out.len() % 3, 0);
    let n = out.len() / 3 - 1;
    let (t, m0) = (out[3 * n], out[3 * n + 1]);
    assert_eq!(t, 1.0);
    assert!((m0 - 2.0 / 3.0).abs() <= 0.01 * 2.0 / 3.0, "M0 = {m0}");
}

#[test]
fn majorant_views_are_consistent() {
    let m = Majorant::new().unwrap();
    let t = 0.5 * m.horizon();
    let prof = m.profile(1.0, t, 1e-2, 1e2, 50).unwrap();
    for row in prof.chunks(3) {
        assert!(row[1] <= row[2] * (1.0 + 1e-12));
    }
    assert!(m.vmax(1.0, t).unwrap() > 0.0);
    assert!(m.vmax(-1.0, t).unwrap().is_nan());
    let path = m.path(1.0, 1e10, m.horizon()).unwrap();
    let n = path.len() / 3 - 1;
    assert!(path[3 * n + 1] < 1.0 && path[3 * n + 2] <= 1e10);
}
