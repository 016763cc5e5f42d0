use std::fs;
use std::path::Path;

use lwgcn::numkit::{colsum, Mat};
use lwgcn::skeleton::*;
use lwgcn::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-chunk means computed by scanning each interval separately.
fn chunk_oracle(points: &[[f64; 3]], times: &[f64], m: usize) -> Vec<f64> {
    let t0 = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let t1 = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dur = t1 - t0;
    let overall: Vec<f64> = (0..3).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / points.len() as f64).collect();
    let mut prev = overall;
    let mut out = Vec::new();
    for c in 0..m {
        let lo = t0 + dur * c as f64 / m as f64;
        let hi = t0 + dur * (c + 1) as f64 / m as f64;
        let members: Vec<&[f64; 3]> = points
            .iter()
            .zip(times)
            .filter(|(_, &t)| {
                if dur == 0.0 {
                    c == 0
                } else if c + 1 == m {
                    t >= lo
                } else {
                    t >= lo && t < hi
                }
            })
            .map(|(p, _)| p)
            .collect();
        if !members.is_empty() {
            prev = (0..3).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        }
        out.extend_from_slice(&prev);
    }
    out
}

#[test]
fn chunking_matches_interval_scan_on_random_trajectories() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let t = rng.random_range(1..40);
        let m = rng.random_range(1..7);
        let pts: Vec<[f64; 3]> = (0..t)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        // integer time stamps keep interval boundaries exact for both sides
        let times: Vec<f64> = (0..t).map(|i| (3 * i) as f64).collect();
        let got = temporal_chunking(&Trajectory::new(pts.clone(), times.clone()).unwrap(), m).unwrap();
        let want = chunk_oracle(&pts, &times, m);
        assert_eq!(got.len(), 3 * m);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn chunking_eight_points_four_chunks_is_pair_means() {
    let pts: Vec<[f64; 3]> = (0..8).map(|i| [i as f64, (i * i) as f64, -2.0 * i as f64]).collect();
    let got = temporal_chunking(&Trajectory::uniform(pts.clone()).unwrap(), 4).unwrap();
    let want: Vec<f64> = pts
        .chunks(2)
        .flat_map(|p| (0..3).map(move |d| (p[0][d] + p[1][d]) / 2.0))
        .collect();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn power_map_matches_repeated_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Mat::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let basis = power_map_basis(&a, 3).unwrap();
    for (p, m) in basis.mats().iter().enumerate() {
        // naive triple loop product, p+1 factors
        let mut want = a.clone();
        for _ in 0..p {
            let mut next = Mat::zeros(4, 4);
            for i in 0..4 {
                for j in 0..4 {
                    for l in 0..4 {
                        next[(i, j)] += want[(i, l)] * a[(l, j)];
                    }
                }
            }
            want = next;
        }
        assert!(m.sub(&want).unwrap().max_abs() <= 1e-10);
    }
}

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> SkeletonGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    SkeletonGraph::new(n, edges).unwrap()
}

proptest! {
    #[test]
    fn chunk_length_and_within_chunk_order(seed in 0u64..1000, t in 1usize..30, m in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..t).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let traj = Trajectory::uniform(pts.clone()).unwrap();
        let out = temporal_chunking(&traj, m).unwrap();
        prop_assert_eq!(out.len(), 3 * m);

        // reverse the points inside the chunk holding the most points, keeping the time stamps
        let dur = (t - 1) as f64;
        let chunk_of = |i: usize| if dur == 0.0 { 0 } else { ((i as f64 / dur * m as f64).floor() as usize).min(m - 1) };
        let target = (0..m).max_by_key(|c| (0..t).filter(|&i| chunk_of(i) == *c).count()).unwrap();
        let idx: Vec<usize> = (0..t).filter(|&i| chunk_of(i) == target).collect();
        let mut perm = pts.clone();
        for (a, b) in idx.iter().zip(idx.iter().rev()) {
            perm[*a] = pts[*b];
        }
        let out2 = temporal_chunking(&Trajectory::uniform(perm).unwrap(), m).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn handcrafted_is_column_stochastic(seed in 0u64..1000, n in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = handcrafted_adjacency(&random_graph(n, &mut rng));
        prop_assert!(a.data().iter().all(|&v| v >= 0.0));
        prop_assert!(colsum(&a).iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn power_map_preserves_column_stochasticity(seed in 0u64..1000, n in 1usize..12, k in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = handcrafted_adjacency(&random_graph(n, &mut rng));
        let basis = power_map_basis(&a, k).unwrap();
        for m in basis.mats() {
            prop_assert!(colsum(&m).iter().all(|s| (s - 1.0).abs() <= 1e-9));
            prop_assert!(m.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sequence_round_trip(seed in 0u64..500, n in 1usize..8, t in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Vec<[f64; 3]>> = (0..t)
            .map(|_| (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random(), rng.random_range(-1e3..1e3)]).collect())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.txt");
        write_sequence(&path, &frames).unwrap();
        let g = SkeletonGraph::chain(n);
        let loaded = load_fpha_sequence(&path, &g, 4, false).unwrap();
        let direct = signal_from_frames(&frames, n, 4, false).unwrap();
        prop_assert!(loaded.u.sub(&direct).unwrap().max_abs() <= 1e-12);
    }
}

#[test]
fn single_frame_file_repeats_joints() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.txt");
    fs::write(&path, "1 2 3 4 5 6\n").unwrap();
    let s = load_fpha_sequence(&path, &SkeletonGraph::chain(2), 3, false).unwrap();
    assert_eq!(s.u.shape(), (9, 2));
    for c in 0..3 {
        assert_eq!([s.u[(3 * c, 0)], s.u[(3 * c + 1, 0)], s.u[(3 * c + 2, 0)]], [1.0, 2.0, 3.0]);
        assert_eq!([s.u[(3 * c, 1)], s.u[(3 * c + 1, 1)], s.u[(3 * c + 2, 1)]], [4.0, 5.0, 6.0]);
    }
}

fn random_frames(n: usize, t: usize, seed: u64) -> Vec<Vec<[f64; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
        .collect()
}

#[test]
fn hand_sequence_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.txt");
    write_sequence(&path, &random_frames(21, 100, 1)).unwrap();
    let s = load_fpha_sequence(&path, &SkeletonGraph::hand21(), 4, false).unwrap();
    assert_eq!(s.u.shape(), (12, 21));
    let c = load_fpha_sequence(&path, &SkeletonGraph::hand21(), 4, true).unwrap();
    let total: f64 = (0..3).map(|d| (0..21).map(|j| (0..4).map(|k| c.u[(3 * k + d, j)]).sum::<f64>()).sum::<f64>()).sum();
    assert!(total.abs() < 1e-9, "centered signal should have zero mean, got {total}");
}

#[test]
fn malformed_sequence_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    fs::write(&path, "1 2 3 4 5 6\n1 2 x 4 5 6\n").unwrap();
    match load_fpha_sequence(&path, &SkeletonGraph::chain(2), 4, false) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    fs::write(&path, "1 2 3 4 5\n").unwrap();
    assert!(matches!(load_fpha_sequence(&path, &SkeletonGraph::chain(2), 4, false), Err(Error::Format(_))));
    fs::write(&path, "\n").unwrap();
    assert!(load_fpha_sequence(&path, &SkeletonGraph::chain(2), 4, false).is_err());
}

fn write_manifest(dir: &Path, rows: &[(String, &str, &str)]) -> std::path::PathBuf {
    let mut text = String::from("path,label,split\n");
    for (p, l, s) in rows {
        text.push_str(&format!("{p},{l},{s}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, text).unwrap();
    path
}

fn seq_files(dir: &Path, count: usize) -> Vec<String> {
    fs::create_dir_all(dir.join("seqs")).unwrap();
    (0..count)
        .map(|i| {
            let rel = format!("seqs/s{i:04}.txt");
            write_sequence(&dir.join(&rel), &random_frames(3, 5, i as u64)).unwrap();
            rel
        })
        .collect()
}

#[test]
fn manifest_split_sizes_and_order_independence() {
    let dir = tempfile::tempdir().unwrap();
    let files = seq_files(dir.path(), 1175);
    let labels = ["open", "pour", "wave"];
    let rows: Vec<(String, &str, &str)> = files
        .iter()
        .enumerate()
        .map(|(i, f)| (f.clone(), labels[i % 3], if i < 600 { "train" } else { "test" }))
        .collect();
    let g = SkeletonGraph::chain(3);
    let ds = load_split(&write_manifest(dir.path(), &rows), &g, 4, false).unwrap();
    assert_eq!((ds.train.len(), ds.test.len()), (600, 575));
    assert_eq!(ds.class_names, ["open", "pour", "wave"]);
    ds.validate().unwrap();

    let mut shuffled = rows.clone();
    shuffled.reverse();
    shuffled.swap(3, 900);
    let ds2 = load_split(&write_manifest(dir.path(), &shuffled), &g, 4, false).unwrap();
    assert_eq!(ds, ds2);
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = seq_files(dir.path(), 3);
    let g = SkeletonGraph::chain(3);
    let load = |rows: &[(String, &str, &str)]| load_split(&write_manifest(dir.path(), rows), &g, 4, false);

    let dup = load(&[(f[0].clone(), "a", "train"), (f[0].clone(), "a", "test"), (f[1].clone(), "a", "test")]);
    assert!(matches!(dup, Err(Error::Manifest(_))));
    let unknown = load(&[(f[0].clone(), "a", "train"), (f[1].clone(), "b", "test")]);
    assert!(matches!(unknown, Err(Error::Manifest(_))));
    let no_test = load(&[(f[0].clone(), "a", "train"), (f[1].clone(), "a", "train")]);
    assert!(matches!(no_test, Err(Error::Manifest(_))));
    let bad_split = load(&[(f[0].clone(), "a", "valid")]);
    assert!(matches!(bad_split, Err(Error::Manifest(_))));
}

#[test]
fn dataset_export_round_trip() {
    let ds = synth_dataset(&SynthConfig {
        num_classes: 3,
        n: 5,
        per_class: 4,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.export(dir.path()).unwrap();
    assert_eq!(Dataset::import(dir.path()).unwrap(), ds);
}

#[test]
fn synth_dataset_errors_and_layout() {
    assert!(synth_dataset(&SynthConfig { num_classes: 1, ..SynthConfig::default() }).is_err());
    assert!(synth_dataset(&SynthConfig { n: 1, ..SynthConfig::default() }).is_err());
    assert!(synth_dataset(&SynthConfig { per_class: 1, ..SynthConfig::default() }).is_err());
    let ds = synth_dataset(&SynthConfig::default()).unwrap();
    assert_eq!(ds.samples.len(), 100);
    assert_eq!((ds.train.len(), ds.test.len()), (50, 50));
    assert!(ds.samples.iter().all(|s| s.u.shape() == (12, 12)));
    ds.validate().unwrap();
    let other = synth_dataset(&SynthConfig { seed: 1, ..SynthConfig::default() }).unwrap();
    assert_ne!(ds, other);
}
