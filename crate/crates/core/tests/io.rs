use std::fs;
use std::path::Path;

use proptest::prelude::*;

use umiclust::io::{
    downsample_depth, gene_std_devs, read_labels, read_matrix, select_top_variable_genes, write_csv,
    write_labels, write_mtx, write_report, IngestOptions, MatrixFormat,
};
use umiclust::{CountMatrix, Sampler, SamplerConfig};

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

#[test]
fn tenx_directory_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "matrix.mtx",
        "%%MatrixMarket matrix coordinate integer general\n\
         % genes x cells\n\
         5 4 7\n\
         1 1 3\n2 1 1\n5 2 4\n3 3 2\n4 3 7\n1 4 1\n5 4 9\n",
    );
    write(
        dir.path(),
        "genes.tsv",
        "ENSG1\tCD3D\nENSG2\tCD8A\nENSG3\tMS4A1\nENSG4\tLYZ\nENSG5\tNKG7\n",
    );
    write(dir.path(), "barcodes.tsv", "AAAC-1\nAAAG-1\nAACT-1\nAAGT-1\n");
    let m = read_matrix(dir.path(), &IngestOptions::new(MatrixFormat::TenxDir)).unwrap();
    assert_eq!((m.n_genes(), m.n_cells(), m.nnz()), (5, 4, 7));
    assert_eq!(m.gene_names().unwrap()[2], "MS4A1");
    assert_eq!(m.cell_names().unwrap()[3], "AAGT-1");
    assert_eq!(m.cell(0), &[(0, 3), (1, 1)]);
    assert_eq!(m.cell(1), &[(4, 4)]);
    assert_eq!(m.cell(2), &[(2, 2), (3, 7)]);
    assert_eq!(m.cell(3), &[(0, 1), (4, 9)]);
}

#[test]
fn entry_count_mismatch_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "m.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 1 1\n");
    let err = read_matrix(dir.path().join("m.mtx"), &IngestOptions::new(MatrixFormat::Mtx)).unwrap_err();
    assert!(matches!(err, umiclust::Error::Format { .. }), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = read_matrix("/nonexistent/x.mtx", &IngestOptions::new(MatrixFormat::Mtx)).unwrap_err();
    assert!(matches!(err, umiclust::Error::Io { .. }));
}

#[test]
fn six_gene_standard_deviations() {
    // Rows are cells.
    let dense = vec![
        vec![0, 1, 0, 1, 5, 0],
        vec![0, 1, 10, 2, 0, 0],
        vec![0, 1, 0, 3, 5, 0],
        vec![0, 1, 10, 4, 0, 8],
    ];
    let m = CountMatrix::from_dense(&dense).unwrap();
    let sd = gene_std_devs(&m);
    for g in 0..6 {
        let col: Vec<f64> = dense.iter().map(|r| f64::from(r[g])).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let two_pass = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((sd[g] - two_pass).abs() < 1e-12, "gene {g}");
    }
    let top = select_top_variable_genes(&m, 3).unwrap();
    // SDs are 0, 0, 5, 1.118, 2.5, 3.464.
    let expect: Vec<Vec<u32>> = dense.iter().map(|r| vec![r[2], r[4], r[5]]).collect();
    assert_eq!(top.to_dense(), expect);
}

#[test]
fn selecting_every_gene_is_identity() {
    let m = CountMatrix::from_dense(&[vec![1, 0, 2], vec![0, 3, 0]]).unwrap();
    assert_eq!(select_top_variable_genes(&m, 3).unwrap(), m);
    assert!(select_top_variable_genes(&m, 4).is_err());
}

#[test]
fn thinning_mean_matches_binomial() {
    let m = CountMatrix::from_dense(&[vec![1000]]).unwrap();
    let xs: Vec<f64> = (0..1000u64)
        .map(|seed| downsample_depth(&m, 100, seed).unwrap().total_umi(0) as f64)
        .collect();
    let mean = xs.iter().sum::<f64>() / 1000.0;
    // Binomial(1000, 0.1) has variance 90.
    let se = (90.0f64 / 1000.0).sqrt();
    assert!((mean - 100.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn thinning_is_seeded() {
    let m = CountMatrix::from_dense(&[vec![40, 60, 7], vec![3, 2, 1]]).unwrap();
    assert_eq!(downsample_depth(&m, 20, 9).unwrap(), downsample_depth(&m, 20, 9).unwrap());
    assert!(downsample_depth(&m, 0, 9).is_err());
}

#[test]
fn labels_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("labels.csv");
    let names = vec!["a".to_string(), "b".into(), "c".into()];
    write_labels(&p, &[2, 0, 2], Some(&names)).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "cell,cluster\na,2\nb,0\nc,2\n");
    let (n, part) = read_labels(&p).unwrap();
    assert_eq!(n, names);
    assert_eq!(part.labels, vec![2, 0, 2]);
}

#[test]
fn report_carries_documented_fields() {
    let m = CountMatrix::from_dense(&[vec![5, 0], vec![0, 5], vec![4, 1], vec![1, 4]]).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 4,
        burn_in: 1,
        ..SamplerConfig::default()
    };
    let report = Sampler::new(cfg).unwrap().run(&m).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.json");
    write_report(&p, &report).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    for key in ["config", "trace", "final_k", "labels_path", "wall_ms"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["trace"].as_array().unwrap().len(), 4);
    assert_eq!(v["config"]["n_iterations"], 4);
    for phase in ["sweep", "params", "moves", "total"] {
        assert!(v["wall_ms"][phase].as_f64().unwrap() >= 0.0);
    }
}

fn arb_matrix() -> impl Strategy<Value = Vec<Vec<u32>>> {
    (1usize..8, 1usize..8).prop_flat_map(|(n, v)| {
        proptest::collection::vec(proptest::collection::vec(prop_oneof![3 => Just(0u32), 1 => 1u32..50], v), n)
    })
}

proptest! {
    #[test]
    fn mtx_round_trip(dense in arb_matrix()) {
        let m = CountMatrix::from_dense(&dense).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mtx");
        write_mtx(&p, &m).unwrap();
        let back = read_matrix(&p, &IngestOptions::new(MatrixFormat::Mtx)).unwrap();
        prop_assert_eq!(back.to_dense(), dense);
        let p2 = dir.path().join("m2.mtx");
        write_mtx(&p2, &back).unwrap();
        prop_assert_eq!(fs::read_to_string(&p).unwrap(), fs::read_to_string(&p2).unwrap());
    }

    #[test]
    fn csv_round_trip(dense in arb_matrix()) {
        let m = CountMatrix::from_dense(&dense).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv(&p, &m).unwrap();
        let back = read_matrix(&p, &IngestOptions::new(MatrixFormat::Csv)).unwrap();
        prop_assert_eq!(back.to_dense(), dense);
    }

    #[test]
    fn thinning_never_adds_counts(dense in arb_matrix(), target in 1u64..100, seed: u64) {
        let m = CountMatrix::from_dense(&dense).unwrap();
        let t = downsample_depth(&m, target, seed).unwrap();
        for (a, b) in m.to_dense().iter().zip(t.to_dense()) {
            prop_assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        }
        for i in 0..m.n_cells() {
            if m.total_umi(i) <= target {
                prop_assert_eq!(m.cell(i), t.cell(i));
            }
        }
    }

    #[test]
    fn gene_selection_keeps_counts(dense in arb_matrix(), pick in 0usize..8) {
        let m = CountMatrix::from_dense(&dense).unwrap();
        let k = 1 + pick % m.n_genes();
        let s = select_top_variable_genes(&m, k).unwrap();
        let sd = gene_std_devs(&m);
        let mut order: Vec<usize> = (0..m.n_genes()).collect();
        order.sort_by(|&a, &b| sd[b].total_cmp(&sd[a]).then(a.cmp(&b)));
        let mut keep = order[..k].to_vec();
        keep.sort_unstable();
        let expect: Vec<Vec<u32>> = dense.iter().map(|r| keep.iter().map(|&g| r[g]).collect()).collect();
        prop_assert_eq!(s.to_dense(), expect);
    }
}
