use proptest::prelude::*;

use ptcore::ema::{ema_update, init_teacher};
use ptcore::math::{mse_consistency, softmax, NetConfig, ParamSet};
use ptcore::noise::inject_symmetric;
use ptcore::schedules::{ema_coefficient, rampup_weight, selection_ratio, ScheduleConfig};
use ptcore::selection::{kept_count, select_small_loss};

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..12)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(z in logits()) {
        let p = softmax(&z);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(z in logits(), c in -1e3f64..1e3) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_preserves_order(z in logits()) {
        let p = softmax(&z);
        for i in 0..z.len() {
            for j in 0..z.len() {
                if z[i] > z[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn consistency_is_symmetric_and_bounded(a in logits(), b in logits()) {
        let n = a.len().min(b.len());
        let (p, q) = (softmax(&a[..n]), softmax(&b[..n]));
        let d = mse_consistency(&p, &q).unwrap();
        prop_assert_eq!(d, mse_consistency(&q, &p).unwrap());
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(mse_consistency(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn kept_count_bounds(n in 1usize..500, ratio in 0.0001f64..=1.0) {
        let k = kept_count(n, ratio);
        prop_assert!(k >= 1 && k <= n);
        prop_assert!(k as f64 >= ratio * n as f64 - 1e-9);
        prop_assert!(k == 1 || ((k - 1) as f64) < ratio * n as f64);
    }

    #[test]
    fn kept_losses_never_exceed_abandoned(
        losses in prop::collection::vec(0.0f64..10.0, 1..200),
        ratio in 0.01f64..=1.0,
    ) {
        let sel = select_small_loss(&losses, ratio).unwrap();
        let max_kept = sel.kept_indices.iter().map(|&i| losses[i]).fold(f64::MIN, f64::max);
        for &i in &sel.abandoned_indices {
            prop_assert!(losses[i] >= max_kept);
        }
    }

    #[test]
    fn selection_ratio_shrinks_monotonically(r in 0.0f64..0.9, t_cap in 1usize..1000, t in 0usize..3000) {
        let cfg = ScheduleConfig { abandon_rate: r, turning_iteration: t_cap, ..Default::default() };
        let now = selection_ratio(t, &cfg);
        prop_assert!(selection_ratio(t + 1, &cfg) <= now);
        prop_assert!(now <= 1.0 && now >= 1.0 - r - 1e-15);
    }

    #[test]
    fn rampup_is_increasing_and_capped(e in 0.0f64..6.0, step in 0.0f64..1.0) {
        let cfg = ScheduleConfig::default();
        let w = rampup_weight(e, &cfg);
        prop_assert!(rampup_weight(e + step, &cfg) >= w);
        prop_assert!(w > 0.0 && w <= cfg.rampup_max);
    }

    #[test]
    fn ema_coefficient_is_monotone_and_capped(it in 0usize..100_000) {
        let cfg = ScheduleConfig::default();
        let a = ema_coefficient(it, &cfg);
        prop_assert!(ema_coefficient(it + 1, &cfg) >= a);
        prop_assert!((0.0..=cfg.ema_cap).contains(&a));
    }

    #[test]
    fn ema_stays_in_the_segment(alpha in 0.0f64..0.999, k in 1usize..30, s1 in any::<u64>(), s2 in any::<u64>()) {
        let cfg = NetConfig::new(3, vec![4], 2);
        let (w0, w) = (ParamSet::init_uniform(&cfg, s1), ParamSet::init_uniform(&cfg, s2));
        let mut t = init_teacher(&w0);
        for _ in 0..k {
            ema_update(&mut t, &w, alpha).unwrap();
        }
        for ((v, a), b) in t.weights.values().zip(w0.values()).zip(w.values()) {
            prop_assert!(*v >= a.min(*b) - 1e-15 && *v <= a.max(*b) + 1e-15);
        }
    }

    #[test]
    fn symmetric_noise_flips_exact_counts(
        sizes in prop::collection::vec(0usize..60, 2..8),
        rate in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let c = sizes.len();
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        let (noisy, audit) = inject_symmetric(&labels, rate, c, seed).unwrap();
        for (k, &n) in sizes.iter().enumerate() {
            let flipped = (0..labels.len()).filter(|&i| labels[i] == k && audit.flip_mask[i]).count();
            prop_assert_eq!(flipped, ((rate * n as f64).round() as usize).min(n));
        }
        for i in 0..labels.len() {
            prop_assert_eq!(audit.flip_mask[i], noisy[i] != labels[i]);
            prop_assert!(noisy[i] < c);
        }
    }
}
