use ppcf::baselines::{
    cms_estimate, cms_update, rappor_report, RapporAggregate, RapporConfig, Sketch, SketchConfig,
};
use ppcf::rng;

// More than the usual 30 seeds: a tighter standard error makes the check
// stricter, not looser.
const SEEDS: u64 = 300;

fn within_three_se(estimates: &[f64], truth: f64) -> (bool, f64, f64) {
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    ((mean - truth).abs() <= 3.0 * se, mean, se)
}

#[test]
fn rappor_debias_is_unbiased_over_seeds() {
    let cfg = RapporConfig::default();
    for count in [100u64, 400] {
        let estimates: Vec<f64> = (0..SEEDS)
            .map(|seed| {
                let mut rng = rng::derive(seed, "rappor-debias", count);
                let mut agg = RapporAggregate::new(&cfg).unwrap();
                for client in 0..count {
                    let cohort = (client % cfg.cohorts as u64) as usize;
                    agg.add(
                        cohort,
                        &rappor_report(&"mercutio".into(), cohort, &cfg, &mut rng).unwrap(),
                    )
                    .unwrap();
                }
                agg.estimate(&"mercutio".into())
            })
            .collect();
        let (ok, mean, se) = within_three_se(&estimates, count as f64);
        assert!(ok, "count {count}: mean {mean} se {se}");
    }
}

#[test]
fn cms_debias_is_unbiased_over_seeds() {
    let cfg = SketchConfig::default();
    for count in [100u64, 400] {
        let estimates: Vec<f64> = (0..SEEDS)
            .map(|seed| {
                let mut rng = rng::derive(seed, "cms-debias", count);
                let mut sketch = Sketch::new(&cfg).unwrap();
                for _ in 0..count {
                    sketch
                        .add(&cms_update(&"tybalt".into(), &cfg, &mut rng).unwrap())
                        .unwrap();
                }
                cms_estimate(&sketch, &"tybalt".into())
            })
            .collect();
        let (ok, mean, se) = within_three_se(&estimates, count as f64);
        assert!(ok, "count {count}: mean {mean} se {se}");
    }
}
