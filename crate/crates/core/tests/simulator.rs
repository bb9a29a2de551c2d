use psr_core::procedure::cumulative_state;
use psr_core::simulator::{run_experiment, simulate, ExperimentSettings, OcclusionModel, Pipeline, SimConfig};

#[test]
fn traces_respect_mask_and_state_graph() {
    for seed in 0..5 {
        let config = SimConfig::heavy_occlusion(seed);
        for trace in simulate(&config).unwrap() {
            for det in &trace.asd_detections {
                assert!(!trace.occlusion_mask[det.frame as usize], "detection on occluded frame {}", det.frame);
            }
            let correct = trace.ground_truth.correct_only();
            for e in correct.events() {
                let bits = cumulative_state(&trace.ground_truth, &config.procedure, e.frame).unwrap();
                assert!(config.procedure.state_id_of(&bits).is_some(), "frame {} is not a known state", e.frame);
            }
        }
    }
}

#[test]
fn experiment_is_reproducible() {
    let config = SimConfig::heavy_occlusion(77);
    let settings = ExperimentSettings::default();
    assert_eq!(run_experiment(&config, &settings).unwrap(), run_experiment(&config, &settings).unwrap());
}

#[test]
fn more_occlusion_never_speeds_up_asd() {
    let settings = ExperimentSettings::default();
    for seed in 0..10 {
        let mut last = 0.0;
        for p_occlude in [0.0, 0.02, 0.05, 0.1, 0.2, 0.4] {
            let mut config = SimConfig::heavy_occlusion(seed);
            config.occlusion = OcclusionModel { p_occlude, p_reveal: 0.05 };
            let rec = run_experiment(&config, &settings).unwrap();
            let tau = rec.pipeline(Pipeline::AsdOnly).summary.tau_s.unwrap();
            assert!(tau >= last - 1e-12, "seed {seed}: tau {tau} < {last} at p_occlude {p_occlude}");
            last = tau;
        }
    }
}

#[test]
fn slow_reveal_hurts_asd_but_not_temporal() {
    let settings = ExperimentSettings::default();
    let mut config = SimConfig::heavy_occlusion(4);
    config.occlusion = OcclusionModel { p_occlude: 0.3, p_reveal: 0.005 };
    let rec = run_experiment(&config, &settings).unwrap();
    let asd = rec.pipeline(Pipeline::AsdOnly).summary.tau_s.unwrap();
    let temporal = rec.pipeline(Pipeline::TemporalOnly).summary.tau_s.unwrap();
    // Temporal responses finish within delay_max + ramp_len frames.
    assert!(temporal <= 1.7, "temporal tau {temporal}");
    assert!(asd > 5.0 * temporal, "asd tau {asd} vs temporal {temporal}");
}

#[test]
fn false_positives_trade_f1_for_delay() {
    let settings = ExperimentSettings::default();
    let mut config = SimConfig::heavy_occlusion(8);
    config.temporal.fp_rate = 0.01;
    config.temporal.fp_peak = 0.8;
    let rec = run_experiment(&config, &settings).unwrap();
    let asd = &rec.pipeline(Pipeline::AsdOnly).summary;
    let fused = &rec.pipeline(Pipeline::Fused).summary;
    assert!(fused.f1 < asd.f1, "fused f1 {} vs asd {}", fused.f1, asd.f1);
    assert!(fused.tau_s.unwrap() < asd.tau_s.unwrap());
}
