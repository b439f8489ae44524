use proptest::prelude::*;
use rand::Rng;

use ppcf::bench::{run_experiment, ExperimentConfig};
use ppcf::encoding::{dice, encode_string, qgram_dice};
use ppcf::ldp::{count_lower_bound, count_upper_bound, MechanismParams};
use ppcf::method::MethodRegistry;
use ppcf::{rng, EncoderConfig};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.random_range(5..12);
    (0..len)
        .map(|_| rng.random_range(b'a'..=b'z') as char)
        .collect()
}

fn mutate(word: &str, edits: usize, rng: &mut impl Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    for _ in 0..edits {
        let i = rng.random_range(0..chars.len());
        chars[i] = rng.random_range(b'a'..=b'z') as char;
    }
    chars.into_iter().collect()
}

#[test]
fn bloom_dice_tracks_qgram_dice() {
    let cfg = EncoderConfig::default();
    let mut rng = rng::seeded(2024);
    let (mut plain, mut encoded) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        let a = random_word(&mut rng);
        let edits = rng.random_range(0..a.len());
        let b = mutate(&a, edits, &mut rng);
        plain.push(qgram_dice(&a, &b, cfg.q));
        let (ea, eb) = (
            encode_string(&a, &cfg).unwrap(),
            encode_string(&b, &cfg).unwrap(),
        );
        encoded.push(dice(&ea, &eb).unwrap());
    }
    let rho = pearson(&ranks(&plain), &ranks(&encoded));
    assert!(rho > 0.8, "Spearman {rho}");
}

proptest! {
    #[test]
    fn bounds_bracket_the_true_count(
        c in 0.0f64..1e6,
        extra in 0.0f64..1e6,
        eps in 0.5f64..12.0,
        l in 8usize..40,
        log_b in 4u32..14,
        s_t in 0.5f64..=1.0,
        m in 1usize..8,
    ) {
        let p = MechanismParams { epsilon: eps, l, buckets: 1 << log_b, s_t, m, ..Default::default() };
        let lo = count_lower_bound(c, &p).unwrap();
        let hi = count_upper_bound(c, c + extra, &p).unwrap();
        prop_assert!(lo <= c + 1e-9 * c.max(1.0));
        prop_assert!(lo >= 0.0);
        prop_assert!(hi >= c - 1e-9 * c.max(1.0));
    }
}

fn small_grid() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        seed = 9
        methods = ["ppcf", "rappor", "cms"]
        epsilons = [4.0, 8.0]
        segments = [1, 3]
        repetitions = 2
        max_words = 60
        queries = 20
        ingest = "synthetic"
        truth = "fuzzy"
        timing = false
        fpr_checkpoints = [50, 100]
        fpr_probes = 20
        [settings]
        t_cap = 4
        [settings.encoder]
        l = 16
        [settings.mechanism]
        l = 16
        buckets = 64
        "#,
    )
    .unwrap();
    cfg.clients = 500;
    cfg
}

#[test]
fn same_seed_gives_byte_identical_csvs() {
    let reg = MethodRegistry::default();
    let cfg = small_grid();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, &reg, a.path()).unwrap();
    run_experiment(&cfg, &reg, b.path()).unwrap();
    for name in ["config.toml", "records.csv", "fpr.csv", "summary.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty(), "{name} empty");
        assert!(x == y, "{name} differs between runs");
    }
    assert!(!a.path().join("timing.csv").exists());

    let mut other = cfg.clone();
    other.seed = 10;
    let c = tempfile::tempdir().unwrap();
    run_experiment(&other, &reg, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("records.csv")).unwrap(),
        std::fs::read(c.path().join("records.csv")).unwrap()
    );
}

#[test]
fn csv_headers_and_summary_shape() {
    let reg = MethodRegistry::default();
    let mut cfg = small_grid();
    cfg.timing = true;
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&cfg, &reg, dir.path()).unwrap();
    assert_eq!(res.summary.len(), 3 * 2 * 2);
    let mut rd = csv::Reader::from_path(dir.path().join("records.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    for col in [
        "method",
        "query",
        "true_exact",
        "true_fuzzy",
        "estimate",
        "abs_error",
        "latency_ns",
        "n_inserted",
        "seed",
    ] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    for row in rd.records() {
        let row = row.unwrap();
        let get = |c: &str| {
            row[header.iter().position(|h| h == c).unwrap()]
                .parse::<f64>()
                .unwrap()
        };
        assert!((get("abs_error") - (get("estimate") - get("true_fuzzy")).abs()).abs() < 1e-9);
        assert!(get("true_exact") <= get("true_fuzzy"));
    }
    assert!(dir.path().join("timing.csv").exists());
}
