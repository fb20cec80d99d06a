use atlasseg::evaluation::{biomarker, dice, evaluate_subject, grid_search, GridSearchConfig};
use atlasseg::fusion::{segment, AtlasBank, FusionConfig, SegmentOptions};
use atlasseg::imaging::io::{read_bank, write_bank};
use atlasseg::imaging::{preprocess_bundle, Region, SubjectBundle, DEFAULT_BINS};
use atlasseg::phantom::{generate_bank, generate_base, PhantomSpec};
use atlasseg::registration::RegistrationConfig;
use atlasseg::Error;

fn small_bank(seed: u64, size: usize) -> Vec<SubjectBundle> {
    let spec = PhantomSpec {
        seed,
        resolution: 32,
        bank_size: size,
        test_size: 0,
        deform_mag: 1.0,
        ..Default::default()
    };
    generate_bank(&spec)
        .unwrap()
        .bank
        .iter()
        .map(|s| preprocess_bundle(&s.bundle, DEFAULT_BINS).unwrap())
        .collect()
}

fn registration() -> RegistrationConfig {
    RegistrationConfig {
        alpha: 0.01,
        levels: vec![16, 32],
        ..Default::default()
    }
}

#[test]
fn cached_grid_cells_match_direct_segmentation() {
    let bundles = small_bank(3, 6);
    let bank = AtlasBank::new(bundles.clone()).unwrap();
    let cfg = GridSearchConfig {
        n_values: vec![1, 3],
        thresholds: vec![0.3, 0.5],
        registration: registration(),
        ..Default::default()
    };
    let result = grid_search(&bank, &bundles[..2], &cfg).unwrap();
    let cell = result.cell(3, 0.5).unwrap();
    for (s, rec) in bundles[..2].iter().zip(&cell.records) {
        let fusion = FusionConfig {
            n: 3,
            threshold: 0.5,
            registration: registration(),
        };
        let seg = segment(s, &bank, &fusion, SegmentOptions::default()).unwrap();
        let direct =
            evaluate_subject(s.id(), s.mask().unwrap(), &seg.hard, s.peak_dense(), None).unwrap();
        assert_eq!(&direct, rec);
    }
    assert!(result.cell(1, 0.3).is_some());
    assert_eq!(result.cells.len(), 4);
}

#[test]
fn gridsearch_rejects_n_beyond_bank() {
    let bundles = small_bank(4, 3);
    let bank = AtlasBank::new(bundles.clone()).unwrap();
    let cfg = GridSearchConfig {
        n_values: vec![3],
        registration: registration(),
        ..Default::default()
    };
    assert!(matches!(
        grid_search(&bank, &bundles, &cfg),
        Err(Error::Config(_))
    ));
}

#[test]
fn bank_round_trips_through_disk() {
    let bundles = small_bank(5, 3);
    let bank = AtlasBank::new(bundles).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bank(&bank, dir.path()).unwrap();
    let back = read_bank(dir.path()).unwrap();
    assert_eq!(back.ids(), bank.ids());
    for (a, b) in back.subjects().iter().zip(bank.subjects()) {
        assert_eq!(a.magnitude(), b.magnitude());
        assert_eq!(a.mask(), b.mask());
        assert_eq!(a.peak_dense(), b.peak_dense());
        assert!(a.is_normalized());
    }
}

#[test]
fn brain_stem_biomarker_matches_its_mean() {
    let spec = PhantomSpec {
        resolution: 256,
        ..Default::default()
    };
    let base = generate_base(&spec).unwrap().bundle;
    let mask = base.mask().unwrap();
    let n = mask.count(Region::BrainStem) as f64;
    let b = biomarker(base.peak_dense().unwrap(), mask, Region::BrainStem, None).unwrap();
    let tolerance = 3.0 * spec.dense_sigma / n.sqrt();
    assert!(
        (b - spec.brainstem_mu).abs() <= tolerance,
        "biomarker {b}, expected {} ± {tolerance}",
        spec.brainstem_mu
    );
}

#[test]
fn unregistered_subjects_overlap_partially() {
    let spec = PhantomSpec {
        resolution: 64,
        bank_size: 6,
        test_size: 0,
        ..Default::default()
    };
    let set = generate_bank(&spec).unwrap();
    for pair in set.bank.windows(2) {
        let d = dice(
            pair[0].bundle.mask().unwrap(),
            pair[1].bundle.mask().unwrap(),
            Region::Full,
        )
        .unwrap();
        assert!(d > 0.0 && d < 1.0, "{d}");
    }
}

#[test]
fn csf_cutoff_changes_biomarkers_near_csf() {
    let spec = PhantomSpec {
        resolution: 128,
        ..Default::default()
    };
    let base = generate_base(&spec).unwrap().bundle;
    let peak = base.peak_dense().unwrap();
    // a dilated cerebellum reaches into the synthetic CSF band
    let mask = base.mask().unwrap();
    let g = *mask.grid();
    let grown = atlasseg::imaging::LabelMask::from_fn(g, |i, j| {
        let near = (-3i64..=3).any(|di| {
            (-3i64..=3).any(|dj| {
                let (x, y) = (i as i64 + di, j as i64 + dj);
                x >= 0
                    && y >= 0
                    && (x as usize) < g.width()
                    && (y as usize) < g.height()
                    && mask.get(x as usize, y as usize) == atlasseg::imaging::Label::Cerebellum
            })
        });
        if near {
            atlasseg::imaging::Label::Cerebellum
        } else {
            atlasseg::imaging::Label::Background
        }
    });
    let without = biomarker(peak, &grown, Region::Cerebellum, None).unwrap();
    let with = biomarker(peak, &grown, Region::Cerebellum, Some(spec.csf_mu / 2.0)).unwrap();
    assert!(without > with + 5.0, "{without} vs {with}");
}
