use dqs_core::config::{Algorithm, RunConfig};
use dqs_core::env::EnvKind;
use dqs_core::runner::run;

fn small(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        population: 16,
        m: 4,
        k: 2,
        n_grad: 4,
        policy_hidden: 16,
        actor_hidden: 16,
        critic_hidden: 16,
        discriminator_hidden: 16,
        batch_size: 16,
        num_eval: 64,
        n_cells: 64,
        ..RunConfig::default()
    }
}

#[test]
fn identical_config_identical_outputs() {
    for env in [EnvKind::PointMass2D, EnvKind::PlanarArm] {
        for algorithm in [Algorithm::Dqs, Algorithm::MapElitesBaseline] {
            let c = RunConfig {
                env,
                algorithm,
                ..small(5)
            };
            let a = run(&c).unwrap();
            let b = run(&c).unwrap();
            assert_eq!(a.metrics_csv(), b.metrics_csv(), "{env} {algorithm:?}");
            assert_eq!(a.species_stats_csv(), b.species_stats_csv());
            assert_eq!(a.audit_csv(), b.audit_csv());
            assert_eq!(a.archive_csv(), b.archive_csv());
        }
    }
}

#[test]
fn seeds_change_results() {
    let a = run(&small(1)).unwrap();
    let b = run(&small(2)).unwrap();
    assert_ne!(a.metrics_csv(), b.metrics_csv());
}

#[test]
fn ablations_share_the_metrics_schema() {
    let header = |c: &RunConfig| {
        run(c)
            .unwrap()
            .metrics_csv()
            .lines()
            .next()
            .unwrap()
            .to_owned()
    };
    let base = header(&small(0));
    assert_eq!(
        header(&RunConfig {
            lambda: 0.0,
            ..small(0)
        }),
        base
    );
    assert_eq!(
        header(&RunConfig {
            m: 1,
            k: 2,
            ..small(0)
        }),
        base
    );
    assert_eq!(
        header(&RunConfig {
            algorithm: Algorithm::MapElitesBaseline,
            ..small(0)
        }),
        base
    );
}

#[test]
fn population_metrics_are_consistent() {
    let r = run(&small(3)).unwrap();
    assert_eq!(r.metrics.len(), 4);
    for row in &r.metrics {
        assert!(row.coverage > 0.0 && row.coverage <= 1.0);
        assert!(row.max_fitness.unwrap() * 64.0 >= row.qd_score || row.qd_score < 0.0);
        assert!(row.species_separation.unwrap() >= 0.0);
        assert!(row.discriminator_loss.unwrap().is_finite());
        assert!(row.wall_seconds.is_none());
    }
    assert_eq!(r.species_stats.len(), 4 * 4);
    assert!(r
        .species_stats
        .iter()
        .filter(|s| s.generation == 3)
        .all(|s| s.avg_elite_age >= 1.0));
}
