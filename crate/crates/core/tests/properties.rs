use geonca::data::{decode_map, encode_map, ClassGrid, ClassLegend};
use geonca::eval::accuracy;
use geonca::trainer::{loss, TrainConfig, TrainSet, TrainTarget, Trainer};
use geonca::{
    depthwise_convolve, make_sobel, neighborhood_max, perceive, softmax_logits, step, Axis, BoolGrid, CellGrid,
    ChannelLayout, FilterBank, InductionField, InductionMode, ModelParams, Padding, StepConfig, STATE_LIMIT,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn layout() -> ChannelLayout {
    ChannelLayout::default()
}

fn grid(h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = CellGrid<f64>> {
    prop::collection::vec(lo..hi, h * w * 16).prop_map(move |v| CellGrid::from_values(h, w, layout(), v).unwrap())
}

fn sized_grid(max: usize, lo: f64, hi: f64) -> impl Strategy<Value = CellGrid<f64>> {
    (1..=max, 1..=max).prop_flat_map(move |(h, w)| grid(h, w, lo, hi))
}

fn pair(max: usize) -> impl Strategy<Value = (CellGrid<f64>, CellGrid<f64>)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| (grid(h, w, -4.0, 4.0), grid(h, w, -4.0, 4.0)))
}

fn legality(h: usize, w: usize) -> impl Strategy<Value = BoolGrid> {
    prop::collection::vec(prop::bool::weighted(0.7), h * w).prop_map(move |b| BoolGrid::from_bits(h, w, b).unwrap())
}

fn params(seed: u64, hidden: usize) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = ModelParams::init(layout(), hidden, &mut rng);
    let w2: Vec<f64> = (0..p.layer(geonca::Layer::W2).len())
        .map(|i| ((i * 7919 + seed as usize) % 200) as f64 / 1000.0 - 0.1)
        .collect();
    ModelParams::from_layers(
        layout(),
        hidden,
        p.layer(geonca::Layer::W1).to_vec(),
        p.layer(geonca::Layer::B1).to_vec(),
        w2,
        p.layer(geonca::Layer::B2).to_vec(),
    )
    .unwrap()
}

fn kl(p: &[f64], h: &[f64]) -> f64 {
    p.iter().zip(h).filter(|(p, _)| **p > 0.0).map(|(p, h)| p * (p / h).ln()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolution_is_linear((g1, g2) in pair(8), a in -3.0f64..3.0, b in -3.0f64..3.0, size in prop::sample::select(vec![3usize, 5, 7])) {
        let k = make_sobel::<f64>(size, Axis::X).unwrap();
        let mixed: Vec<f64> = g1.values().iter().zip(g2.values()).map(|(x, y)| a * x + b * y).collect();
        let mixed = CellGrid::from_values(g1.height(), g1.width(), layout(), mixed).unwrap();
        let lhs = depthwise_convolve(&mixed, &k, Padding::Zero);
        let c1 = depthwise_convolve(&g1, &k, Padding::Zero);
        let c2 = depthwise_convolve(&g2, &k, Padding::Zero);
        for ((l, x), y) in lhs.values().iter().zip(c1.values()).zip(c2.values()) {
            prop_assert!((l - (a * x + b * y)).abs() < 1e-5);
        }
    }

    #[test]
    fn neighborhood_max_is_monotone((g, bump) in pair(8), ch in 0usize..16) {
        let bigger: Vec<f64> = g.values().iter().zip(bump.values()).map(|(x, d)| x + d.abs()).collect();
        let bigger = CellGrid::from_values(g.height(), g.width(), layout(), bigger).unwrap();
        let lo = neighborhood_max(&g, ch, 3).unwrap();
        let hi = neighborhood_max(&bigger, ch, 3).unwrap();
        for (a, b) in lo.values().iter().zip(hi.values()) {
            prop_assert!(a <= b);
        }
        let identity = neighborhood_max(&g, ch, 1).unwrap();
        for (i, v) in identity.values().iter().enumerate() {
            prop_assert_eq!(*v, g.values()[i * 16 + ch]);
        }
    }

    #[test]
    fn softmax_lies_on_the_simplex(g in sized_grid(8, -30.0, 30.0)) {
        let s = softmax_logits(&g);
        for r in 0..g.height() {
            for c in 0..g.width() {
                let p = s.at(r, c);
                prop_assert!(p.iter().all(|x| *x > 0.0 && *x <= 1.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mirrored_grid_negates_horizontal_derivatives(g in sized_grid(8, -3.0, 3.0)) {
        let (h, w) = (g.height(), g.width());
        let mirrored = CellGrid::from_fn(h, w, layout(), |r, c, ch| g.get(r, w - 1 - c, ch));
        let bank = FilterBank::standard();
        let a = perceive(&g, &bank);
        let b = perceive(&mirrored, &bank);
        prop_assert_eq!(a.depth(), 8 * 16);
        for r in 0..h {
            for c in 0..w {
                let (pa, pb) = (a.at(r, c), b.at(r, w - 1 - c));
                for block in 1..7 {
                    let sign = if block % 2 == 1 { -1.0 } else { 1.0 };
                    for ch in 0..16 {
                        let (x, y) = (pa[block * 16 + ch], pb[block * 16 + ch]);
                        prop_assert!((x - sign * y).abs() < 1e-6, "block {} ch {}: {} vs {}", block, ch, x, y);
                    }
                }
            }
        }
    }

    #[test]
    fn illegal_cells_never_change(
        (g, legal) in (2usize..9, 2usize..9).prop_flat_map(|(h, w)| (grid(h, w, -2.0, 2.0), legality(h, w))),
        seed in 0u64..1000,
    ) {
        let p = params(seed, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = g.clone();
        for _ in 0..4 {
            state = step(&state, &p, &StepConfig::default(), &legal, None, &mut rng).unwrap();
            prop_assert!(state.values().iter().all(|v| v.abs() <= STATE_LIMIT));
        }
        for (r, c) in legal.not().iter_set() {
            prop_assert_eq!(state.cell(r, c), g.cell(r, c));
        }
    }

    #[test]
    fn zero_parameters_touch_only_the_induction_region(
        (g, region) in (2usize..9, 2usize..9).prop_flat_map(|(h, w)| (grid(h, w, -2.0, 2.0), legality(h, w))),
        class in 0usize..4,
        seed in 0u64..1000,
    ) {
        let (h, w) = (g.height(), g.width());
        let field = InductionField::one_hot(region.clone(), 4, |_, _| class).unwrap();
        let p = ModelParams::<f64>::zeros(layout(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let next = step(&g, &p, &StepConfig::default(), &BoolGrid::filled(h, w, true), Some(&field), &mut rng).unwrap();
        for (r, c) in region.not().iter_set() {
            prop_assert_eq!(next.cell(r, c), g.cell(r, c));
        }
    }

    #[test]
    fn exact_gradient_induction_never_increases_kl(
        logits in prop::collection::vec(-4.0f64..4.0, 4),
        target in prop::collection::vec(0.01f64..1.0, 4),
        concentration in 0.05f64..1.0,
    ) {
        let z: f64 = target.iter().sum();
        let p: Vec<f64> = target.iter().map(|t| t / z).collect();
        let mut g = CellGrid::<f64>::zeros(1, 1, layout());
        for (j, l) in logits.iter().enumerate() {
            g.set(0, 0, j, *l);
        }
        let region = BoolGrid::filled(1, 1, true);
        let targets = geonca::Field::from_values(1, 1, 4, p.clone()).unwrap();
        let field = InductionField::new(region, targets).unwrap();
        let cfg = StepConfig { concentration, induction_mode: InductionMode::ExactKlGradient, ..StepConfig::default() };
        let zero = ModelParams::<f64>::zeros(layout(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev = kl(&p, softmax_logits(&g).at(0, 0));
        for _ in 0..16 {
            g = step(&g, &zero, &cfg, &BoolGrid::filled(1, 1, true), Some(&field), &mut rng).unwrap();
            let now = kl(&p, softmax_logits(&g).at(0, 0));
            prop_assert!(now <= prev + 1e-12, "{} > {}", now, prev);
            prev = now;
        }
    }

    #[test]
    fn loss_is_non_negative(
        (g, labels) in (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
            (grid(h, w, -30.0, 30.0), prop::collection::vec(prop::option::of(0u8..4), h * w))
        })
    ) {
        let t = TrainTarget::from_labels(g.height(), g.width(), 4, &labels).unwrap();
        let report = loss(&g, &t).unwrap();
        prop_assert!(report.total >= 0.0);
        prop_assert!(report.per_cell.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn accuracy_is_bounded_and_ignores_hidden_channels(
        (g, labels) in (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
            (grid(h, w, -1.0, 1.0), prop::collection::vec(prop::option::of(0u8..4), h * w))
        }),
        perm in Just((5usize..16).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let t = TrainTarget::from_labels(g.height(), g.width(), 4, &labels).unwrap();
        let a = accuracy(&g, &t, 0.1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let shuffled = CellGrid::from_fn(g.height(), g.width(), layout(), |r, c, ch| {
            if ch < 5 { g.get(r, c, ch) } else { g.get(r, c, perm[ch - 5]) }
        });
        prop_assert_eq!(accuracy(&shuffled, &t, 0.1).unwrap(), a);
    }

    #[test]
    fn decode_inverts_encode(
        (h, w, cells) in (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(prop::option::of(0u8..4), h * w))
        })
    ) {
        let legend = ClassLegend::traffic();
        let classes = ClassGrid::new(h, w, cells).unwrap();
        let back = decode_map(&encode_map(&classes, &legend), &legend, h, w).unwrap();
        prop_assert_eq!(back, classes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pool_is_conserved(seed in 0u64..1000, pool in 2usize..7, batch in 1usize..3) {
        let ds = geonca::data::synth_generate(&geonca::data::SynthConfig {
            seed,
            per_location: 3,
            height: 10,
            width: 10,
            ..Default::default()
        })
        .unwrap();
        let refs: Vec<_> = ds.samples.iter().collect();
        let cfg = TrainConfig { steps: 3, batch_size: batch, pool_size: pool, hidden: 8, epochs: 4, seed, ..Default::default() };
        let mut t = Trainer::<f32>::new(cfg, layout(), TrainSet::from_samples(&refs, 4).unwrap()).unwrap();
        for _ in 0..4 {
            t.run_epoch().unwrap();
            prop_assert_eq!(t.pool().len(), pool);
            for e in t.pool() {
                prop_assert!(e.sample < refs.len());
                if let Some(s) = &e.state {
                    prop_assert_eq!((s.height(), s.width()), (10, 10));
                }
            }
        }
    }
}

#[test]
fn training_is_independent_of_thread_count() {
    let ds = geonca::data::synth_generate(&geonca::data::SynthConfig {
        seed: 3,
        per_location: 4,
        height: 10,
        width: 10,
        ..Default::default()
    })
    .unwrap();
    let refs: Vec<_> = ds.samples.iter().collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = TrainConfig { steps: 4, batch_size: 4, pool_size: 4, hidden: 8, epochs: 3, ..Default::default() };
            let mut t = Trainer::<f32>::new(cfg, layout(), TrainSet::from_samples(&refs, 4).unwrap()).unwrap();
            t.fit(|_, _| Ok(())).unwrap();
            t.checkpoint_bytes()
        })
    };
    assert_eq!(run(1), run(3));
}
