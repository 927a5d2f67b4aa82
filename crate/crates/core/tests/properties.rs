use std::collections::BTreeSet;

use proptest::prelude::*;

use xcdsim::cache::{LruCache, Probe, Request};
use xcdsim::{
    build_assignment, grid_size, infinite_cache_misses, simulate, swizzle_chiplet, tiles_to_lines,
    validate_config, AttentionConfig, AttnGrid, ChipletTopology, Granularity, MappingStrategy,
    PassDirection, SimParams, TensorLayout,
};

fn arb_config(max_seqlen: usize) -> impl Strategy<Value = AttentionConfig> {
    (
        1usize..=3,
        prop::sample::select(vec![1usize, 2, 3, 4, 6, 8, 16]),
        prop::sample::select(vec![1usize, 2, 4]),
        1usize..=max_seqlen,
        prop::sample::select(vec![16usize, 56, 64, 128]),
        prop::sample::select(vec![16usize, 32, 64, 128]),
        prop::sample::select(vec![16usize, 32, 64]),
        any::<bool>(),
    )
        .prop_filter_map("blocks exceed seqlen", |(b, kv, g, n, d, bm, bn, bwd)| {
            let cfg = AttentionConfig {
                batch: b,
                num_q_heads: kv * g,
                num_kv_heads: kv,
                seqlen: n,
                head_dim: d,
                block_m: bm,
                block_n: bn,
                dtype_bytes: 2,
                pass: if bwd {
                    PassDirection::Backward
                } else {
                    PassDirection::Forward
                },
            };
            validate_config(&cfg).ok().map(|_| cfg)
        })
}

fn arb_topology() -> impl Strategy<Value = ChipletTopology> {
    (1usize..=12, 1usize..=4).prop_map(|(x, chunk)| ChipletTopology {
        num_xcd: x,
        dispatch_chunk: chunk,
        ..ChipletTopology::default()
    })
}

fn arb_strategy() -> impl Strategy<Value = MappingStrategy> {
    prop::sample::select(MappingStrategy::ALL.to_vec())
}

fn small_topology(x: usize, l2: u64) -> ChipletTopology {
    ChipletTopology {
        num_xcd: x,
        l2_bytes_per_xcd: l2,
        ..ChipletTopology::default()
    }
}

proptest! {
    #[test]
    fn swizzle_is_a_permutation(x in 1usize..=16, per in 1usize..=300, extra in 0usize..16) {
        // the remainder past the last multiple of x passes through
        let grid = x * per + extra % x;
        let image: BTreeSet<usize> = (0..grid).map(|w| swizzle_chiplet(w, grid, x)).collect();
        prop_assert_eq!(image.len(), grid);
        prop_assert_eq!(image.iter().next_back().copied(), grid.checked_sub(1));
    }

    #[test]
    fn assignments_are_balanced_bijections(cfg in arb_config(4096), topo in arb_topology(), s in arb_strategy()) {
        let grid = validate_config(&cfg).unwrap();
        let a = build_assignment(s, &grid, &topo);
        prop_assert!(a.is_bijective(&grid));
        prop_assert!(a.queue_length_spread() <= topo.dispatch_chunk);
        prop_assert_eq!(a.total(), grid_size(&grid));
        prop_assert_eq!(a.origin, s);
    }

    #[test]
    fn swizzled_head_first_wavefront_has_one_head_per_die(
        per_xcd in 1usize..=4,
        x in prop::sample::select(vec![2usize, 4, 8]),
        n in 256usize..4096,
        batch in 1usize..=2,
    ) {
        let grid = validate_config(&AttentionConfig::mha(batch, per_xcd * x, n, 64)).unwrap();
        let a = build_assignment(MappingStrategy::SwizzledHeadFirst, &grid, &ChipletTopology::default().with_xcds(x));
        for k in 0..a.queues[0].len() {
            let heads: BTreeSet<_> = a.queues.iter().map(|q| (q[k].tile.batch, q[k].tile.q_head)).collect();
            prop_assert_eq!(heads.len(), x);
        }
        for q in &a.queues {
            // each (batch, head) lives on exactly one die
            for e in q {
                let elsewhere = a.queues.iter().filter(|o| o.iter().any(|f| f.tile.batch == e.tile.batch && f.tile.q_head == e.tile.q_head)).count();
                prop_assert_eq!(elsewhere, 1);
            }
        }
    }

    #[test]
    fn single_die_collapses_swizzles(cfg in arb_config(1024), w in 1usize..=8, line in any::<bool>()) {
        // swizzling is a no-op on one die; the two naive orders still differ
        use MappingStrategy::*;
        let grid = validate_config(&cfg).unwrap();
        let topo = small_topology(1, 256 * 1024);
        let g = if line { Granularity::Line } else { Granularity::Tile };
        let params = SimParams::for_topology(&topo).with_concurrency(w).with_granularity(g);
        let run = |s| simulate(&build_assignment(s, &grid, &topo), &grid, &topo, &params).unwrap();
        prop_assert_eq!(run(SwizzledHeadFirst), run(NaiveHeadFirst));
        prop_assert_eq!(run(SwizzledBlockFirst), run(NaiveBlockFirst));
    }

    #[test]
    fn single_die_strategies_agree_without_capacity_misses(cfg in arb_config(1024), w in 1usize..=8, line in any::<bool>()) {
        let grid = validate_config(&cfg).unwrap();
        let total = TensorLayout::new(&grid, true).total_bytes();
        let topo = small_topology(1, total.next_power_of_two().max(16 * 128));
        let g = if line { Granularity::Line } else { Granularity::Tile };
        let params = SimParams::for_topology(&topo).with_concurrency(w).with_granularity(g);
        let run = |s| simulate(&build_assignment(s, &grid, &topo), &grid, &topo, &params).unwrap();
        let base = run(MappingStrategy::ALL[0]);
        for s in &MappingStrategy::ALL[1..] {
            prop_assert_eq!(&run(*s), &base);
        }
    }

    #[test]
    fn accounting_is_conserved(cfg in arb_config(1024), topo in arb_topology(), s in arb_strategy(), w in 1usize..=12, line in any::<bool>()) {
        let grid = validate_config(&cfg).unwrap();
        let topo = ChipletTopology { l2_bytes_per_xcd: 64 * 1024, ..topo };
        let g = if line { Granularity::Line } else { Granularity::Tile };
        let params = SimParams::for_topology(&topo).with_concurrency(w).with_granularity(g);
        let a = build_assignment(s, &grid, &topo);
        let r = simulate(&a, &grid, &topo, &params).unwrap();
        let comp = infinite_cache_misses(&a, &grid, &topo, &params);
        let mut sum = xcdsim::sim::Stats::default();
        for (x, c) in r.per_xcd.iter().zip(&comp) {
            prop_assert_eq!(x.stats.accesses, x.stats.hits + x.stats.misses);
            // no finite cache beats the compulsory bound
            prop_assert!(x.stats.misses >= c.lines);
            prop_assert!(x.stats.hbm_bytes_read >= c.bytes);
            sum += x.stats;
        }
        prop_assert_eq!(sum, r.total.stats);
        prop_assert!((0.0..=1.0).contains(&r.hit_rate()));
    }

    #[test]
    fn swapping_queues_swaps_reports(cfg in arb_config(1024), x in 2usize..=6, s in arb_strategy(), i in 0usize..6, j in 0usize..6, line in any::<bool>()) {
        let (i, j) = (i % x, j % x);
        let grid = validate_config(&cfg).unwrap();
        let topo = small_topology(x, 64 * 1024);
        let g = if line { Granularity::Line } else { Granularity::Tile };
        let params = SimParams::for_topology(&topo).with_concurrency(3).with_granularity(g);
        let a = build_assignment(s, &grid, &topo);
        let mut b = a.clone();
        b.queues.swap(i, j);
        let (ra, rb) = (simulate(&a, &grid, &topo, &params).unwrap(), simulate(&b, &grid, &topo, &params).unwrap());
        prop_assert_eq!(&ra.per_xcd[i], &rb.per_xcd[j]);
        prop_assert_eq!(&ra.per_xcd[j], &rb.per_xcd[i]);
        prop_assert_eq!(&ra.total, &rb.total);
    }

    #[test]
    fn simulation_is_deterministic(cfg in arb_config(1024), topo in arb_topology(), s in arb_strategy()) {
        let grid = validate_config(&cfg).unwrap();
        let params = SimParams::for_topology(&topo).with_concurrency(4);
        let a = build_assignment(s, &grid, &topo);
        prop_assert_eq!(simulate(&a, &grid, &topo, &params).unwrap(), simulate(&a, &grid, &topo, &params).unwrap());
    }

    #[test]
    fn lru_misses_shrink_with_capacity(
        trace in prop::collection::vec(0u64..40, 1..400),
        small in 1u64..=32,
        extra in 0u64..=32,
    ) {
        // units carry a fixed size so both caches see the same requests
        let misses = |cap: u64| {
            let mut c = LruCache::new(cap * 64);
            trace.iter().filter(|&&u| {
                c.access(Request::read(u, 64 * (1 + u % 3)), &mut |_| {}) == Probe::Miss
            }).count()
        };
        prop_assert!(misses(small + extra) <= misses(small));
    }

    #[test]
    fn tiles_cover_their_byte_span(cfg in arb_config(2048), line in prop::sample::select(vec![64u64, 128, 256])) {
        let grid: AttnGrid = validate_config(&cfg).unwrap();
        let layout = TensorLayout::new(&grid, true);
        let tile = grid.tiles().last().unwrap();
        let prog = xcdsim::trace::WgProgram::new(&grid, tile, true);
        for phase in prog.phases() {
            for a in phase.accesses {
                let span = layout.span(&a.rect);
                let lines = tiles_to_lines(&a.rect, &layout, line).unwrap();
                prop_assert_eq!(lines.first().copied(), Some(span.start / line));
                prop_assert_eq!(lines.last().copied(), Some((span.end - 1) / line));
                prop_assert!(lines.windows(2).all(|w| w[1] == w[0] + 1));
                prop_assert!(span.end <= layout.total_bytes());
            }
        }
    }
}
