use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan_core::data::{draw_corner, draw_flips, split_dataset, synth_phantom, Grade, Graded};

#[test]
fn crops_reach_every_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (source, patch) = ([6, 5, 4], [4, 4, 4]);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..1000 {
        let c = draw_corner(source, patch, &mut rng).unwrap();
        assert!((0..3).all(|a| c[a] + patch[a] <= source[a]));
        seen.insert(c);
    }
    assert_eq!(seen.len(), 3 * 2);
    assert!(seen.contains(&[0, 0, 0]) && seen.contains(&[2, 1, 0]));
}

#[test]
fn flip_rate_matches_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws = 10_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        for (a, f) in draw_flips(0.5, &mut rng).unwrap().into_iter().enumerate() {
            counts[a] += usize::from(f);
        }
    }
    for c in counts {
        let rate = c as f64 / draws as f64;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }
    assert_eq!(draw_flips(0.0, &mut rng).unwrap(), [false; 3]);
    assert!(draw_flips(1.5, &mut rng).is_err());
}

#[test]
fn phantom_tumors_are_a_plausible_fraction() {
    for seed in 0..100 {
        for grade in [Grade::Hgg, Grade::Lgg] {
            let s = synth_phantom(seed, [32, 32, 32], grade).unwrap();
            let h = s.labels.histogram();
            let tumor = (h[1] + h[2] + h[3] + h[4]) as f64 / s.labels.data().len() as f64;
            assert!((0.01..=0.30).contains(&tumor), "seed {seed} {grade:?}: {tumor}");
        }
    }
}

#[test]
fn phantoms_are_deterministic() {
    let a = synth_phantom(42, [20, 24, 16], Grade::Hgg).unwrap();
    let b = synth_phantom(42, [20, 24, 16], Grade::Hgg).unwrap();
    assert_eq!(a.image.data(), b.image.data());
    assert_eq!(a.labels, b.labels);
    assert_ne!(synth_phantom(43, [20, 24, 16], Grade::Hgg).unwrap().labels, a.labels);
}

#[derive(Clone, Debug, PartialEq)]
struct Case(usize, Grade);

impl Graded for Case {
    fn grade(&self) -> Grade {
        self.1
    }
}

#[test]
fn challenge_sized_split_counts() {
    let cases: Vec<Case> = (0..275).map(|i| Case(i, if i < 220 { Grade::Hgg } else { Grade::Lgg })).collect();
    let (train, val) = split_dataset(cases, 0.9, 1).unwrap();
    let count = |v: &[Case], g| v.iter().filter(|c| c.1 == g).count();
    assert_eq!((count(&train, Grade::Hgg), count(&train, Grade::Lgg)), (198, 49));
    assert_eq!((count(&val, Grade::Hgg), count(&val, Grade::Lgg)), (22, 6));
}
