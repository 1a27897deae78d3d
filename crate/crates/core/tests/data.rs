use avsm_core::data::{
    mix_sources, synthesize_sources, MixSource, Placement, PlacementMode, ToyCorpusConfig, PEAK_LIMIT,
};
use avsm_core::Error;
use std::ops::Range;
use std::time::Instant;

/// Silence-trimmed target power over `region`: 20 ms frames, frames more
/// than 40 dB under the loudest are dropped.
fn active_power_oracle(target: &[f64], region: Range<usize>) -> f64 {
    let frame_energy: Vec<f64> = target.chunks(320).map(|f| f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).collect();
    let loudest = frame_energy.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<f64> = region.filter(|i| frame_energy[i / 320] >= loudest * 1e-4).map(|i| target[i] * target[i]).collect();
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn measured_snr(clean: &[f64], stem: &[f64], region: Range<usize>) -> f64 {
    let ps = stem[region.clone()].iter().map(|v| v * v).sum::<f64>() / region.len() as f64;
    10.0 * (active_power_oracle(clean, region) / ps).log10()
}

#[test]
fn generated_scenes_hit_their_requested_snrs() {
    let t0 = Instant::now();
    let cfg = ToyCorpusConfig::default();
    let mut worst = 0.0f64;
    for i in 0..200 {
        let s = synthesize_sources(&cfg, 2024, i).unwrap();
        let mix = mix_sources(
            &s.target,
            &[
                MixSource { name: "interferer", samples: &s.interferer, placement: s.interferer_placement, snr_db: s.snr_interferer_db },
                MixSource { name: "noise", samples: &s.noise, placement: s.noise_placement, snr_db: s.snr_noise_db },
            ],
        )
        .unwrap();
        let n = s.target.len();
        let ri = s.interferer_placement.region(n, s.interferer.len());
        let rn = s.noise_placement.region(n, s.noise.len());
        worst = worst.max((measured_snr(&mix.clean, &mix.stems[0], ri) - s.snr_interferer_db).abs());
        worst = worst.max((measured_snr(&mix.clean, &mix.stems[1], rn) - s.snr_noise_db).abs());
    }
    println!("worst SNR error {worst:.2e} dB in {:?}", t0.elapsed());
    assert!(worst < 0.1);
}

#[test]
fn mixture_is_the_sum_of_its_parts() {
    let s = synthesize_sources(&ToyCorpusConfig::default(), 1, 3).unwrap();
    let mix = mix_sources(
        &s.target,
        &[
            MixSource { name: "interferer", samples: &s.interferer, placement: s.interferer_placement, snr_db: -5.0 },
            MixSource { name: "noise", samples: &s.noise, placement: s.noise_placement, snr_db: 3.0 },
        ],
    )
    .unwrap();
    for i in 0..mix.noisy.len() {
        let sum = mix.clean[i] + mix.stems[0][i] + mix.stems[1][i];
        assert!((mix.noisy[i] - sum).abs() < 1e-12);
    }
    let peak = mix.noisy.iter().chain(&mix.clean).fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak <= PEAK_LIMIT + 1e-12);
}

#[test]
fn synthesis_is_deterministic_per_seed_and_index() {
    let cfg = ToyCorpusConfig::default();
    assert_eq!(synthesize_sources(&cfg, 5, 2).unwrap(), synthesize_sources(&cfg, 5, 2).unwrap());
    assert_ne!(synthesize_sources(&cfg, 5, 2).unwrap().target, synthesize_sources(&cfg, 5, 3).unwrap().target);
    assert_ne!(synthesize_sources(&cfg, 6, 2).unwrap().target, synthesize_sources(&cfg, 5, 2).unwrap().target);
    let s = synthesize_sources(&cfg, 5, 2).unwrap();
    assert_eq!(s.target.len(), 16_000);
    assert_eq!(s.video.frames, 25);
    assert!(s.snr_interferer_db >= cfg.snr_min_db && s.snr_interferer_db <= cfg.snr_max_db);
}

#[test]
fn zero_power_sources_are_rejected() {
    let target = vec![0.1; 1000];
    let silent = vec![0.0; 1000];
    let src = MixSource { name: "noise", samples: &silent, placement: Placement::default(), snr_db: 0.0 };
    assert_eq!(mix_sources(&target, &[src]), Err(Error::ZeroPowerSource("noise".into())));
    let loud = vec![0.3; 1000];
    let src = MixSource { name: "noise", samples: &loud, placement: Placement::default(), snr_db: 0.0 };
    assert_eq!(mix_sources(&silent, &[src]), Err(Error::ZeroPowerSource("target".into())));
    assert_eq!(mix_sources(&[], &[]), Err(Error::EmptyInput));
}

#[test]
fn equal_power_noise_at_zero_db_keeps_unit_gain() {
    let target: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 0.25 } else { -0.25 }).collect();
    let noise: Vec<f64> = (0..1000).map(|i| if i % 3 == 0 { 0.25 } else { -0.25 }).collect();
    let src = MixSource { name: "noise", samples: &noise, placement: Placement::default(), snr_db: 0.0 };
    let mix = mix_sources(&target, &[src]).unwrap();
    assert!((mix.gains[0] - 1.0).abs() < 1e-12);
    assert_eq!(mix.peak_scale, 1.0);
    // looped placement repeats the noise over the whole target
    assert_eq!(mix.stems[0][1000..2000], mix.stems[0][..1000]);
}

#[test]
fn loud_scenes_are_rescaled_jointly() {
    let target: Vec<f64> = (0..2000).map(|i| 0.9 * (i as f64 * 0.05).sin()).collect();
    let noise: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.31).cos()).collect();
    let src = MixSource { name: "noise", samples: &noise, placement: Placement::default(), snr_db: -6.0 };
    let mix = mix_sources(&target, &[src]).unwrap();
    assert!(mix.peak_scale < 1.0);
    let peak = mix.noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - PEAK_LIMIT).abs() < 1e-12);
    assert!((measured_snr(&mix.clean, &mix.stems[0], 0..2000) + 6.0).abs() < 1e-9);
}

#[test]
fn placement_regions() {
    let once = Placement { start: 300, mode: PlacementMode::Truncate };
    assert_eq!(once.region(1000, 200), 300..500);
    assert_eq!(once.region(1000, 900), 300..1000);
    assert_eq!(once.region(200, 50), 200..200);
    let looped = Placement { start: 100, mode: PlacementMode::Loop };
    assert_eq!(looped.region(1000, 7), 100..1000);
    let laid = looped.lay(&[1.0, 2.0, 3.0], 8);
    assert_eq!(laid, vec![0.0; 8]);
    let laid = Placement { start: 2, mode: PlacementMode::Loop }.lay(&[1.0, 2.0, 3.0], 8);
    assert_eq!(laid, vec![0.0, 0.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
}
