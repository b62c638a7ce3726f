use std::sync::OnceLock;

use proptest::prelude::*;

use avrobust::corruption::{corrupt_sequence, mix_noise_at_snr, sample_plan, CorruptionConfig};
use avrobust::data::{generate_corpus, generate_noise_banks, NoiseBankSpec, PairedSequence, Split, SynthSpec};
use avrobust::distillation::{eta_schedule, EmaConfig};
use avrobust::exec::Exec;
use avrobust::masking::{sample_mask_plan, MaskConfig};
use avrobust::rng::stream_parts;
use avrobust::training::{edit_distance, Resources};

struct Fixture {
    _dir: tempfile::TempDir,
    train: Vec<PairedSequence>,
    res: Resources,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::default();
        let m = generate_corpus(&spec, 12, 1, 1, &dir.path().join("corpus"), Exec::Sequential).unwrap();
        let banks =
            generate_noise_banks(&spec, &NoiseBankSpec::default(), &m, &dir.path().join("noise"), Exec::Sequential).unwrap();
        let res = Resources::new(banks, 0, spec.video_size);
        let train = m.load_split(Split::Train).unwrap();
        Fixture { _dir: dir, train, res }
    })
}

fn ratio_range() -> impl Strategy<Value = [f64; 2]> {
    (0.0..0.9f64, 0.0..0.9f64).prop_map(|(a, b)| [a.min(b), a.max(b)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_avoid_corruption_and_clean_frames_survive(
        visual in ratio_range(),
        audio in ratio_range(),
        pa in 0.0..0.9f64,
        pv in 0.0..0.9f64,
        seg_a in 1usize..8,
        seg_v in 1usize..8,
        key in 0u64..1000,
    ) {
        let f = fixture();
        let seq = &f.train[(key as usize) % f.train.len()];
        let cfg = CorruptionConfig {
            visual_ratio_range: visual,
            audio_ratio_range: audio,
            audio_augment: None,
            ..CorruptionConfig::default()
        };
        let mask_cfg = MaskConfig { audio_mask_prob: pa, video_mask_prob: pv, audio_segment_len: seg_a, video_segment_len: seg_v };
        let mut r = stream_parts(key, &["prop"]);
        let plan = sample_plan(seq.len(), &cfg, f.res.ctx(), &mut r).unwrap();
        let mask = sample_mask_plan(seq.len(), &mask_cfg, &plan, &mut r).unwrap();
        mask.check_disjoint(&plan).unwrap();
        let c = plan.union();
        prop_assert!(mask.union().iter().all(|t| !c.contains(t)));
        let (a, v) = corrupt_sequence(seq, &plan, f.res.ctx()).unwrap();
        for t in 0..seq.len() {
            if !plan.c_audio.contains(&t) {
                prop_assert_eq!(a.row(t), seq.audio.row(t));
            }
            if !plan.c_video.contains(&t) {
                prop_assert_eq!(v.row(t), seq.video.row(t));
            }
        }
    }

    #[test]
    fn plans_are_reproducible_from_their_key(key in 0u64..10_000) {
        let f = fixture();
        let seq = &f.train[(key as usize) % f.train.len()];
        let cfg = CorruptionConfig::default();
        let a = sample_plan(seq.len(), &cfg, f.res.ctx(), &mut stream_parts(key, &["again"])).unwrap();
        let b = sample_plan(seq.len(), &cfg, f.res.ctx(), &mut stream_parts(key, &["again"])).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn mixing_hits_the_requested_snr(
        signal in prop::collection::vec(-4.0..4.0f64, 1..200),
        snr in -30.0..30.0f64,
        seed in 0u64..1000,
    ) {
        prop_assume!(signal.iter().any(|&x| x != 0.0));
        let noise: Vec<f64> = (0..signal.len()).map(|i| ((i as f64 + seed as f64) * 0.37).sin() + 0.1).collect();
        let mix = mix_noise_at_snr(&signal, &noise, snr).unwrap();
        let ms = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let added: Vec<f64> = mix.output.iter().zip(&signal).map(|(o, s)| o - s).collect();
        let achieved = 10.0 * (ms(&signal) / ms(&added)).log10();
        prop_assert!((achieved - snr).abs() < 1e-6);
    }

    #[test]
    fn edit_distance_is_a_metric(
        x in prop::collection::vec(0u32..4, 0..10),
        y in prop::collection::vec(0u32..4, 0..10),
        z in prop::collection::vec(0u32..4, 0..10),
    ) {
        prop_assert_eq!(edit_distance(&x, &x), 0);
        prop_assert_eq!(edit_distance(&x, &y), edit_distance(&y, &x));
        prop_assert!(edit_distance(&x, &z) <= edit_distance(&x, &y) + edit_distance(&y, &z));
        let d = edit_distance(&x, &y);
        prop_assert!(d >= x.len().abs_diff(y.len()) && d <= x.len().max(y.len()));
    }

    #[test]
    fn eta_stays_within_its_endpoints(total in 1usize..10_000, step in 0usize..20_000) {
        let ema = EmaConfig::default();
        let eta = eta_schedule(step, total, &ema);
        prop_assert!((ema.eta_start..=ema.eta_end).contains(&eta));
        prop_assert!(eta <= eta_schedule(step + 1, total, &ema));
    }
}
