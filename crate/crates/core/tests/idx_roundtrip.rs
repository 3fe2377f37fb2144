use escape_core::experiments::idx::{
    encode_images, encode_labels, parse_idx, parse_idx_as, write_idx, IdxKind,
};
use escape_core::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn images_round_trip_through_a_file(
        n in 1usize..5, rows in 1usize..6, cols in 1usize..6, seed in any::<u8>(),
    ) {
        let pixels: Vec<u8> = (0..n * rows * cols)
            .map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed))
            .collect();
        let bytes = encode_images(n, rows, cols, &pixels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images");
        write_idx(&path, &bytes).unwrap();
        let m = parse_idx_as(&path, IdxKind::Images).unwrap();
        prop_assert_eq!(m.shape(), (rows * cols, n));
        for k in 0..n {
            for p in 0..rows * cols {
                prop_assert_eq!(m[(p, k)], f64::from(pixels[k * rows * cols + p]));
            }
        }
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn labels_round_trip_through_a_file(labels in proptest::collection::vec(any::<u8>(), 1..50)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels");
        write_idx(&path, &encode_labels(&labels)).unwrap();
        let m = parse_idx(&path).unwrap();
        let back: Vec<u8> = m.iter().map(|&v| v as u8).collect();
        prop_assert_eq!(back, labels);
    }
}

#[test]
fn kind_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("images");
    write_idx(&path, &encode_images(1, 1, 1, &[7]).unwrap()).unwrap();
    assert!(matches!(parse_idx_as(&path, IdxKind::Labels), Err(Error::Format(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(parse_idx("/no/such/idx"), Err(Error::Io { .. })));
}
