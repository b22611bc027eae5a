use std::f64::consts::PI;
use std::fs;

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::encoders::ViewSchema;
use crate::rng;
use crate::Error;

fn tiny() -> Dataset {
    let spec = SynthSpec {
        train: 14,
        test: 6,
        ..SynthSpec::default()
    };
    synth_generate(&spec, 3).unwrap()
}

#[test]
fn ndvi_examples() {
    let mut row = vec![0.0; 11];
    row[RED_BAND] = 0.1;
    row[NIR_BAND] = 0.5;
    let v = compute_ndvi(&row, 11, RED_BAND, NIR_BAND).unwrap();
    assert!((v[0] - 0.4 / 0.6).abs() < 1e-15);
    row[RED_BAND] = 0.5;
    assert_eq!(compute_ndvi(&row, 11, RED_BAND, NIR_BAND).unwrap(), vec![0.0]);
    row[RED_BAND] = 0.0;
    row[NIR_BAND] = 0.0;
    assert_eq!(compute_ndvi(&row, 11, RED_BAND, NIR_BAND).unwrap(), vec![0.0]);
    assert!(matches!(compute_ndvi(&row, 11, 11, 6), Err(Error::Validation(_))));
}

proptest! {
    #[test]
    fn ndvi_bounded(red in 0.0f64..10.0, nir in 0.0f64..10.0) {
        prop_assume!(red + nir > 0.0);
        let mut row = vec![0.0; 11];
        row[RED_BAND] = red;
        row[NIR_BAND] = nir;
        let v = compute_ndvi(&row, 11, RED_BAND, NIR_BAND).unwrap()[0];
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn entropy_invariant_to_offset_and_scale(
        xs in prop::collection::vec(-5.0f64..5.0, 16),
        offset in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let h = spectral_entropy(&xs).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| x * scale + offset).collect();
        let h2 = spectral_entropy(&ys).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - h2).abs() < 1e-9);
    }
}

#[test]
fn resample_examples() {
    let days: Vec<f64> = (0..12).map(|m| m as f64 * 365.0 / 12.0 + 3.0).collect();
    let values: Vec<f64> = (0..24).map(|i| i as f64).collect();
    assert_eq!(resample_monthly(&days, &values, 2).unwrap(), values);

    let out = resample_monthly(&[1.0, 2.0], &[2.0, 4.0], 1).unwrap();
    assert_eq!(out, vec![3.0; 12]);

    let m = 365.0 / 12.0;
    let out = resample_monthly(&[1.0, 2.0 * m + 1.0], &[1.0, 5.0], 1).unwrap();
    assert_eq!(&out[..3], &[1.0, 3.0, 5.0]);
    assert!(out[3..].iter().all(|&v| v == 5.0));

    let out = resample_monthly(&[5.0 * m], &[7.0], 1).unwrap();
    assert_eq!(out, vec![7.0; 12]);

    assert!(matches!(resample_monthly(&[], &[], 1), Err(Error::EmptySeries(_))));
    assert!(matches!(resample_monthly(&[400.0], &[1.0], 1), Err(Error::Validation(_))));
}

#[test]
fn entropy_examples() {
    assert_eq!(spectral_entropy(&[0.3; 12]).unwrap(), 0.0);
    assert_eq!(spectral_entropy(&[0.1; 256]).unwrap(), 0.0);
    let sine: Vec<f64> = (0..64).map(|t| (2.0 * PI * 5.0 * t as f64 / 64.0).sin()).collect();
    assert!(spectral_entropy(&sine).unwrap() < 1e-9);
    assert!(matches!(spectral_entropy(&[1.0, 2.0, 3.0]), Err(Error::Validation(_))));
    let ramp: Vec<f64> = (0..12).map(|t| t as f64).collect();
    let h = spectral_entropy(&ramp).unwrap();
    assert!(h > 0.0 && h < 1.0);
}

/// Brute-force DFT entropy as an oracle for the FFT path.
#[test]
fn entropy_matches_direct_dft() {
    let mut r = rng::stream(1, "entropy");
    for t in [4usize, 7, 12, 33] {
        let xs: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut r)).collect();
        let mean = xs.iter().sum::<f64>() / t as f64;
        let power: Vec<f64> = (1..=t / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, x) in xs.iter().enumerate() {
                    let a = -2.0 * PI * (k * n) as f64 / t as f64;
                    re += (x - mean) * a.cos();
                    im += (x - mean) * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let total: f64 = power.iter().sum();
        let h: f64 = power.iter().map(|p| p / total).filter(|&q| q > 0.0).map(|q| -q * q.ln()).sum();
        let expected = h / ((t / 2) as f64).ln();
        assert!((spectral_entropy(&xs).unwrap() - expected).abs() < 1e-12, "T={t}");
    }
}

#[test]
fn container_round_trip_is_bit_exact() {
    let d = tiny();
    let bytes = encode(&d).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back, d);
    for (a, b) in d.metadata().iter().zip(back.metadata()) {
        assert_eq!(a.latitude.to_bits(), b.latitude.to_bits());
    }
    assert_eq!(encode(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mvds");
    save_dataset(&d, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);
}

#[test]
fn container_rejects_corruption() {
    let bytes = encode(&tiny()).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    for cut in [1, 4, 80] {
        assert!(matches!(decode(&bytes[..bytes.len() - cut]), Err(Error::Truncated(_))));
    }
    assert!(matches!(decode(&bytes[..10]), Err(Error::Truncated(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode(&long), Err(Error::Format(_))));
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let spec = SynthSpec {
        train: 400,
        test: 100,
        ..SynthSpec::default()
    };
    let a = synth_generate(&spec, 9).unwrap();
    assert_eq!(a, synth_generate(&spec, 9).unwrap());
    assert_ne!(a, synth_generate(&spec, 10).unwrap());
    assert_eq!(a.len(), 500);
    assert_eq!(a.metadata().iter().filter(|m| m.is_test).count(), 100);
    let counts = a.class_counts();
    assert!(counts[0] > 200 && counts[1] > 200);
    let (train, test) = a.split_by_flag();
    assert_eq!((train.len(), test.len()), (400, 100));
}

/// Class-conditional means of the view-level bits: in the complementary
/// spec each view's bit is independent of the label.
#[test]
fn complementary_views_are_individually_uninformative() {
    let spec = SynthSpec {
        train: 4000,
        test: 0,
        noise: 0.0,
        ..SynthSpec::default()
    };
    let d = synth_generate(&spec, 5).unwrap();
    let mut table = [[0usize; 2]; 4];
    for i in 0..d.len() {
        let b1 = d.sample("optical", i).unwrap()[11 * 3] < 0.0;
        let b2 = d.sample("radar", i).unwrap()[2 * 3] > 1.0;
        let y = d.labels()[i];
        assert_eq!(y, usize::from(b1 ^ b2));
        table[usize::from(b1) * 2 + usize::from(b2)][y] += 1;
    }
    let p = |b1: usize| {
        let pos = table[b1 * 2][1] + table[b1 * 2 + 1][1];
        let all = table[b1 * 2].iter().chain(&table[b1 * 2 + 1]).sum::<usize>();
        pos as f64 / all as f64
    };
    assert!((p(0) - 0.5).abs() < 0.05 && (p(1) - 0.5).abs() < 0.05);
}

#[test]
fn split_examples() {
    let labels: Vec<usize> = (0..100).map(|i| usize::from(i % 2 == 0)).collect();
    let (tr, te) = split_indices(&labels, 2, 0.3, 1).unwrap();
    assert_eq!((tr.len(), te.len()), (70, 30));
    let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    assert_eq!(split_indices(&labels, 2, 0.3, 1).unwrap(), (tr, te));

    let skewed: Vec<usize> = (0..100).map(|i| usize::from(i < 10)).collect();
    let (_, te) = split_indices(&skewed, 2, 0.3, 2).unwrap();
    assert_eq!(te.len(), 30);
    assert!(te.iter().any(|&i| skewed[i] == 1) && te.iter().any(|&i| skewed[i] == 0));
    let tiny: Vec<usize> = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
    let (tr, te) = split_indices(&tiny, 2, 0.1, 3).unwrap();
    assert!(te.iter().any(|&i| tiny[i] == 1) && tr.iter().any(|&i| tiny[i] == 1));
    assert!(matches!(split_indices(&labels, 2, 1.0, 0), Err(Error::Config(_))));
}

#[test]
fn derived_ndvi_view() {
    let d = tiny();
    let optical = d.schema("optical").unwrap().clone();
    let with = d
        .with_derived_view(ndvi_schema(&optical), "optical", |x| ndvi_sample(x, 11))
        .unwrap();
    assert_eq!(with.view_names(), vec!["optical", "radar", "ndvi"]);
    let x = d.sample("optical", 4).unwrap();
    let v = with.sample("ndvi", 4).unwrap();
    let (r, n) = (f64::from(x[3 * 11 + RED_BAND]), f64::from(x[3 * 11 + NIR_BAND]));
    assert_eq!(v[3], ((n - r) / (n + r)) as f32);
}

#[test]
fn batches_and_subsets() {
    let d = tiny();
    let b = d.batch(&[3, 1]).unwrap();
    assert_eq!(b.view("optical").unwrap().1.shape(), &[2, 12, 11]);
    assert_eq!(b.labels, vec![d.labels()[3], d.labels()[1]]);
    assert_eq!(b.view("radar").unwrap().1.at(&[1, 0, 1]), f64::from(d.sample("radar", 1).unwrap()[1]));
    let s = d.select_views(&["radar"]).unwrap();
    assert_eq!(s.schemas(), &[ViewSchema::radar()]);
    assert!(d.select_views(&["weather"]).is_err());
}

fn write(dir: &std::path::Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn import_fixture(radar_rows: &str, labels: &str) -> Result<(Dataset, ImportReport), Error> {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "topo.csv", "id,elev,slope\na,1,2\nb,3,4\nc,5,6\n");
    write(p, "radar.csv", &format!("id,v0,v1,v2,v3\n{radar_rows}"));
    write(p, "labels.csv", labels);
    let manifest = ImportManifest::from_toml(
        r#"
task = "binary"
labels = "labels.csv"

[[views]]
name = "topography"
path = "topo.csv"
temporal = false
channels = 2

[[views]]
name = "radar"
path = "radar.csv"
steps = 2
channels = 2
"#,
    )?
    .resolve(p);
    import_csv(&manifest)
}

const LABELS: &str = "id,label,country,continent,year,latitude,longitude,is_test\n\
    a,0,Kenya,Africa,2019,1.5,36.8,false\n\
    b,1,France,Europe,2020,46.1,2.2,true\n\
    c,1,India,Asia,2021,20.0,77.0,false\n";

#[test]
fn import_happy_path() {
    let (d, rep) = import_fixture("a,1,2,3,4\nb,5,6,7,8\nc,9,10,11,12\n", LABELS).unwrap();
    assert_eq!(rep, ImportReport { imported: 3, dropped: 0 });
    assert_eq!(d.labels(), &[0, 1, 1]);
    assert_eq!(d.sample("radar", 1).unwrap(), &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(d.sample("topography", 2).unwrap(), &[5.0, 6.0]);
    assert_eq!(d.metadata()[1].continent, "Europe");
    assert!(d.metadata()[1].is_test);
    let back = decode(&encode(&d).unwrap()).unwrap();
    assert_eq!(encode(&back).unwrap(), encode(&d).unwrap());
}

#[test]
fn import_drops_partial_samples() {
    let (d, rep) = import_fixture("a,1,2,3,4\nc,9,10,11,12\n", LABELS).unwrap();
    assert_eq!(rep, ImportReport { imported: 2, dropped: 1 });
    assert_eq!(d.len(), 2);
}

#[test]
fn import_errors() {
    let labels = format!("{LABELS}z,0,X,Y,2019,0,0,false\n");
    assert!(matches!(
        import_fixture("a,1,2,3,4\nb,5,6,7,8\nc,9,10,11,12\n", &labels),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        import_fixture("a,1,2,3,4\nb,5,6,7,8\nc,9,10,11,12\nq,1,1,1,1\n", LABELS),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        import_fixture("a,1,2,x,4\nb,5,6,7,8\nc,9,10,11,12\n", LABELS),
        Err(Error::Validation(_))
    ));
}

#[test]
fn entropy_report_shapes() {
    let rep = entropy_report(&tiny()).unwrap();
    assert_eq!(rep.features.len(), 13);
    assert_eq!(rep.view_means.len(), 2);
    assert!(rep.features.iter().all(|f| (0.0..=1.0).contains(&f.mean) && f.min <= f.median && f.median <= f.max));
    let csv = rep.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 14);
}
