// temporary timing probe, removed before finalizing
use std::time::Instant;

use tempfile::tempdir;
use voxseg::dataset::DatasetRoot;
use voxseg::phantom_io::synth_dataset;
use voxseg::RunConfig;
use voxseg_core::contrast::train_contrast_mapper;
use voxseg_core::teacher::train;

#[test]
#[ignore]
fn timing_probe() {
    let dir = tempdir().unwrap();
    let config = RunConfig::default();

    let t0 = Instant::now();
    let manifest = synth_dataset(&config.phantom, dir.path()).unwrap();
    println!("synth: {:?}", t0.elapsed());

    let root = DatasetRoot::load(&manifest).unwrap();
    let t0 = Instant::now();
    let data = root.load_train_data(&config.train).unwrap();
    println!("load: {:?} ({} labeled / {} unlabeled)", t0.elapsed(), data.labeled.len(), data.unlabeled.len());

    // one epoch of mean-teacher
    let mut tc = config.train.clone();
    tc.epochs = 2;
    tc.rampup_epochs = 1;
    let t0 = Instant::now();
    let out = train(&data, &tc, None).unwrap();
    println!("2 MT epochs: {:?} (history {})", t0.elapsed(), out.history.len());

    // supervised-only epoch cost
    let mut ts = tc.clone();
    ts.lambda_mse_max = 0.0;
    ts.epochs = 2;
    let t0 = Instant::now();
    train(&data, &ts, None).unwrap();
    println!("2 supervised epochs: {:?}", t0.elapsed());

    // contrast mapper: 10 epochs over all pairs
    let pairs = root.load_aligned_pairs(config.train.target_spacing_mm).unwrap();
    println!("pairs: {}", pairs.len());
    let mut cc = config.train.clone();
    cc.contrast_epochs = 10;
    let t0 = Instant::now();
    train_contrast_mapper(&pairs[..4], &cc).unwrap();
    println!("10 contrast epochs on 4 pairs: {:?}", t0.elapsed());
}
