use relight::colorspace::RgbImage;
use relight::dataio::{load_tuple, read_manifest, Manifest, Split, MANIFEST_FILE};
use relight::metrics::{evaluate, MeanImageBaseline, MssimReport, Relighter, SsimConfig, REPORT_SCHEMA_VERSION};
use relight::scenegen::{generate_dataset, DatasetConfig};
use relight::solarpos::{SunPosition, BENCHMARK_POSITIONS};

/// Looks the answer up in the dataset itself.
struct Oracle<'a>(&'a Manifest);

impl Relighter for Oracle<'_> {
    fn relight_tuple(&self, depth: &[f64], semseg: &[u8], _w: usize, _h: usize, target: &SunPosition) -> Result<RgbImage, String> {
        for e in &self.0.entries {
            if e.sun() != *target {
                continue;
            }
            let t = load_tuple(self.0, e).map_err(|e| e.to_string())?;
            if t.depth == depth && t.semseg == semseg {
                return Ok(t.rgb);
            }
        }
        Err("no such tuple".into())
    }
}

fn dataset(dir: &std::path::Path) -> Manifest {
    let cfg = DatasetConfig::new(6, BENCHMARK_POSITIONS[..3].to_vec(), 24, 24, 11);
    generate_dataset(&cfg, dir).unwrap();
    read_manifest(&dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn perfect_model_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path());
    let r = evaluate(&Oracle(&m), "oracle", &m, None, &SsimConfig::default()).unwrap();
    assert_eq!(r.schema_version, REPORT_SCHEMA_VERSION);
    assert_eq!(r.positions.len(), 3);
    assert!(r.positions.iter().all(|p| p.mean_mssim == 1.0));
    assert_eq!(r.global_mean, 1.0);
    assert_eq!(r.evaluations, m.split(Split::Test).len());
}

#[test]
fn absent_positions_are_skipped_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path());
    let b = MeanImageBaseline::fit(&m).unwrap();
    let r = evaluate(&b, "baseline", &m, Some(&BENCHMARK_POSITIONS), &SsimConfig::default()).unwrap();
    assert_eq!(r.positions.len(), 3, "only positions with ground truth are reported");
    assert!(r.positions.iter().all(|p| p.mean_mssim < 1.0 && p.mean_mssim > 0.0));
    let mean = r.positions.iter().map(|p| p.mean_mssim).sum::<f64>() / 3.0;
    assert!((r.global_mean - mean).abs() < 1e-15);
    let back = MssimReport::from_toml(&r.to_toml().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn regenerated_dataset_reloads_identically() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, mb) = (dataset(a.path()), dataset(b.path()));
    assert_eq!(ma.entries, mb.entries);
    for (ea, eb) in ma.entries.iter().zip(&mb.entries).step_by(5) {
        let (ta, tb) = (load_tuple(&ma, ea).unwrap(), load_tuple(&mb, eb).unwrap());
        assert_eq!(ta, tb);
    }
}
