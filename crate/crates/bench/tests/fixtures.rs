use mfpod::{FieldSurrogate, Method};
use mfpod_bench::{dataset, problem, snapshots, surrogate};

#[test]
fn fixtures_build_consistent_objects() {
    let p = problem(20, 1500, 2500);
    let data = dataset(&p, 20, 8);
    assert_eq!((data.n_lf(), data.n_hf()), (20, 8));
    let s = surrogate(&data, Method::Mf, 3);
    assert_eq!(s.k(), 3);
    let field = s.predict_field(&mfpod::DesignSpace::esc().center()).unwrap();
    assert_eq!(field.values().len(), p.grid().m_i());
    let snaps = snapshots(p.grid().clone(), 6);
    assert_eq!(snaps.n_snapshots(), 6);
}
