//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the target
//! exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blocktensor::block::{blocks_to_text, parse_blocks};
use blocktensor::cp::{cp_description_length, greedy_order, select_rank};
use blocktensor::mdl::elias_delta_length;
use blocktensor::pipeline::{factorize_cp, factorize_tucker, PipelineConfig};
use blocktensor::synth::{evaluate, generate, SynthSpec};
use blocktensor::tucker::{mdl_tucker, trivial_tucker, tucker_description_length, tucker_reconstruct, TuckerOptions};
use blocktensor::{merge_density, reconstruct, Block, Cell, Density, Dims, SparseBinaryTensor};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn same(a: &SparseBinaryTensor, b: &SparseBinaryTensor) -> bool {
    a.dims() == b.dims() && a.cells() == b.cells()
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn random_block(rng: &mut ChaCha8Rng, d: Dims) -> Block {
    Block::from_sets([
        random_set(rng, d.get(0)),
        random_set(rng, d.get(1)),
        random_set(rng, d.get(2)),
    ])
}

fn random_tensor(rng: &mut ChaCha8Rng, d: Dims, p: f64) -> SparseBinaryTensor {
    let mut cells = Vec::new();
    for i in 0..d.get(0) {
        for j in 0..d.get(1) {
            for k in 0..d.get(2) {
                if rng.gen_bool(p) {
                    cells.push(Cell::new(i, j, k));
                }
            }
        }
    }
    SparseBinaryTensor::new(d, cells).unwrap()
}

fn subsets(n: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << n))
        .map(|m| (0..n).filter(|&i| m >> i & 1 == 1).collect())
        .collect()
}

fn desk_scale_recovery() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut slowest = Duration::ZERO;
    for r in [5usize, 10, 15] {
        let (mut noisy_sum, mut control_max) = (0.0, 0.0f64);
        for seed in 0..5u64 {
            for noise in [0.1, 0.0] {
                let spec = SynthSpec {
                    block_dims_mean: [12; 3],
                    additive_noise: noise,
                    destructive_noise: noise,
                    ..SynthSpec::new(Dims::new(100, 150, 200), r, seed)
                };
                let data = generate(&spec).map_err(|e| e.to_string())?;
                let cfg = PipelineConfig {
                    density: 1.0 - (noise + 0.05),
                    walk_length: 5,
                    seed,
                    ..Default::default()
                };
                let t = Instant::now();
                let res = factorize_cp(&data.noisy, &cfg).map_err(|e| e.to_string())?;
                slowest = slowest.max(t.elapsed());
                let e = evaluate(&res.decomposition.reconstruct(), &data.noisy, &data.noise_free)
                    .map_err(|e| e.to_string())?;
                if noise > 0.0 {
                    noisy_sum += e.rel_noise_free;
                } else {
                    control_max = control_max.max(e.rel_noise_free);
                }
            }
        }
        let mean = noisy_sum / 5.0;
        ok &= control_max == 0.0 && (r < 10 || mean <= 0.05);
        lines.push(format!("r={r} noisy mean {mean:.4} control max {control_max:.4}"));
    }
    ok &= slowest < Duration::from_secs(120);
    let detail = format!("{}; slowest instance {:.1}s", lines.join(", "), slowest.as_secs_f64());
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hull_minimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let d = Dims::new(rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let all: Vec<Cell> = (0..d.get(0))
            .flat_map(|i| (0..d.get(1)).flat_map(move |j| (0..d.get(2)).map(move |k| Cell::new(i, j, k))))
            .collect();
        let cells: Vec<Cell> = loop {
            let s: Vec<Cell> = all.iter().copied().filter(|_| rng.gen_bool(0.3)).collect();
            if !s.is_empty() {
                break s;
            }
        };
        let hull = Block::convex_hull(&cells);
        let rank_one = hull.cells().count() as u64 == hull.volume()
            && Block::convex_hull(&hull.cells().collect::<Vec<_>>()) == hull;
        let contains = cells.iter().all(|c| hull.contains(c));
        let mut minimal = true;
        for a in subsets(d.get(0)) {
            for b in subsets(d.get(1)) {
                for c in subsets(d.get(2)) {
                    let cand = Block::from_sets([a.clone(), b.clone(), c.clone()]);
                    if cells.iter().all(|x| cand.contains(x)) && !hull.is_within(&cand) {
                        minimal = false;
                    }
                }
            }
        }
        if !(rank_one && contains && minimal) {
            violations += 1;
        }
    }
    check(violations == 0, || format!("{violations} violations"))?;
    Ok("10000 subsets, 0 violations".into())
}

fn merge_density_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..1000 {
        let d = Dims::new(rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let fill = rng.gen_range(0.05..0.9);
        let x = random_tensor(&mut rng, d, fill);
        let a = random_block(&mut rng, d);
        let b = random_block(&mut rng, d);
        let others: Vec<Block> = (0..rng.gen_range(0..4)).map(|_| random_block(&mut rng, d)).collect();
        let set = |blk: &Block| blk.cells().collect::<HashSet<Cell>>();
        let merged: HashSet<Cell> = set(&a).union(&set(&b)).copied().collect();
        let mut hull_cells = set(&Block::convex_hull(merged.iter()));
        hull_cells.retain(|c| !merged.contains(c));
        let covered: HashSet<Cell> = others.iter().flat_map(|o| o.cells()).collect();
        let hits = hull_cells
            .iter()
            .filter(|c| x.contains(c) || covered.contains(c))
            .count() as u64;
        let want = if hull_cells.is_empty() {
            Density::from_integer(1)
        } else {
            Density::new(hits, hull_cells.len() as u64)
        };
        let got = merge_density(&x, &a, &b, &others);
        check(got == want, || format!("instance {n}: {got} vs {want}"))?;
    }
    Ok("1000 instances, exact equality".into())
}

fn xor_error(x: &SparseBinaryTensor, blocks: &[&Block]) -> u64 {
    reconstruct(blocks.iter().copied(), x.dims())
        .unwrap()
        .xor_count(x)
        .unwrap()
}

fn greedy_vs_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut matches, total) = (0, 200);
    let mut worst: f64 = 1.0;
    for n in 0..total {
        let d = Dims::new(rng.gen_range(3..=5), rng.gen_range(3..=5), rng.gen_range(3..=5));
        let planted: Vec<Block> = (0..rng.gen_range(1..=3)).map(|_| random_block(&mut rng, d)).collect();
        let mut cells: HashSet<Cell> = planted.iter().flat_map(|b| b.cells()).collect();
        for _ in 0..rng.gen_range(0..6) {
            let c = Cell::new(
                rng.gen_range(0..d.get(0)),
                rng.gen_range(0..d.get(1)),
                rng.gen_range(0..d.get(2)),
            );
            if !cells.remove(&c) {
                cells.insert(c);
            }
        }
        let x = SparseBinaryTensor::new(d, cells).unwrap();
        let mut cands = planted.clone();
        while cands.len() < rng.gen_range(2..=10) {
            cands.push(random_block(&mut rng, d));
        }
        let ordered = greedy_order(&x, &cands);
        let greedy = xor_error(&x, &ordered.blocks.iter().collect::<Vec<_>>());
        let mut best = u64::MAX;
        for mask in 0u32..(1 << cands.len()) {
            let pick: Vec<&Block> = (0..cands.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &cands[i])
                .collect();
            best = best.min(xor_error(&x, &pick));
        }
        check(greedy >= best, || {
            format!("instance {n}: greedy {greedy} below optimum {best}")
        })?;
        if greedy == best {
            matches += 1;
        } else {
            worst = worst.max(greedy as f64 / best.max(1) as f64);
        }
    }
    let detail = format!("greedy optimal on {matches}/{total}, worst ratio {worst:.2}");
    if 2 * matches >= total {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Builds the Elias delta codeword of `x` and returns its length.
fn elias_codeword_len(x: u64) -> u64 {
    let bin = format!("{x:b}");
    let n = bin.len() as u64;
    let nbin = format!("{n:b}");
    let code = format!("{}{}{}", "0".repeat(nbin.len() - 1), nbin, &bin[1..]);
    code.len() as u64
}

fn mdl_arithmetic() -> Outcome {
    for x in 1..=64u64 {
        let got = elias_delta_length(x).map_err(|e| e.to_string())?;
        check(got == elias_codeword_len(x), || format!("elias({x}) = {got}"))?;
    }
    let d = Dims::new(3, 3, 3);
    let blk =
        |a: &[usize], b: &[usize], c: &[usize]| Block::new(a.iter().copied(), b.iter().copied(), c.iter().copied());
    let mut f2: Vec<Cell> = (0..2).flat_map(|i| (0..3).map(move |j| Cell::new(i, j, 1))).collect();
    f2.push(Cell::new(2, 0, 0));
    // (model, error) bits evaluated by hand with exact binomials
    let fixtures = [
        (
            vec![
                Cell::new(0, 0, 0),
                Cell::new(0, 1, 0),
                Cell::new(1, 0, 0),
                Cell::new(2, 2, 2),
            ],
            vec![blk(&[0, 1], &[0, 1], &[0])],
            (10.509775004326936, 16.03333696038395, 2),
        ),
        (
            f2,
            vec![blk(&[0, 1], &[0, 1, 2], &[1]), blk(&[2], &[0], &[0, 1])],
            (21.434587507932715, 12.002815015607053, 1),
        ),
        (
            vec![
                Cell::new(0, 0, 0),
                Cell::new(1, 1, 1),
                Cell::new(2, 2, 2),
                Cell::new(0, 1, 2),
            ],
            vec![blk(&[0, 1, 2], &[0, 1, 2], &[0, 1, 2])],
            (5.754887502163468, 18.854070912242754, 23),
        ),
    ];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    for (n, (cells, prefix, (model, error, be))) in fixtures.into_iter().enumerate() {
        let x = SparseBinaryTensor::new(d, cells).unwrap();
        let rec = cp_description_length(&x, &prefix);
        check(
            close(rec.model_bits, model) && close(rec.error_bits, error) && rec.boolean_error == be,
            || format!("fixture {n}: {rec:?}"),
        )?;
        check(close(rec.total_bits, model + error), || {
            format!("fixture {n}: total {}", rec.total_bits)
        })?;
    }
    let planted = [
        Block::new(0..4, 0..5, 0..3),
        Block::new(6..9, 7..10, 5..9),
        Block::new(11..15, 12..14, 10..13),
    ];
    let x = reconstruct(&planted, Dims::new(16, 16, 16)).unwrap();
    let mut cands = planted.to_vec();
    cands.push(Block::new(1..3, 1..3, 1..2));
    cands.push(Block::new(0..15, 0..15, 0..15));
    let ordered = greedy_order(&x, &cands);
    let (cp, report) = select_rank(&x, &ordered.blocks).map_err(|e| e.to_string())?;
    check(report.chosen_rank == 3 && cp.rank() == 3, || {
        format!("chosen rank {}", report.chosen_rank)
    })?;
    Ok("elias 1..64 exact, 3 fixtures within 1e-9, rank 3 selected".into())
}

fn tucker_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut commits = 0;
    for n in 0..1000 {
        let d = Dims::new(rng.gen_range(2..=6), rng.gen_range(2..=6), rng.gen_range(2..=6));
        let blocks: Vec<Block> = (0..rng.gen_range(1..=6)).map(|_| random_block(&mut rng, d)).collect();
        let t = trivial_tucker(d, &blocks).map_err(|e| e.to_string())?;
        let want = reconstruct(&blocks, d).unwrap();
        check(same(&tucker_reconstruct(&t), &want), || {
            format!("list {n}: trivial reconstruction differs")
        })?;

        let mut cells: HashSet<Cell> = want.cells().iter().copied().collect();
        for _ in 0..rng.gen_range(0..4) {
            cells.insert(Cell::new(
                rng.gen_range(0..d.get(0)),
                rng.gen_range(0..d.get(1)),
                rng.gen_range(0..d.get(2)),
            ));
        }
        let x = SparseBinaryTensor::new(d, cells).unwrap();
        let out = mdl_tucker(&x, &blocks, TuckerOptions::default()).map_err(|e| e.to_string())?;
        let mut prev = out.initial_bits;
        for &bits in &out.trace {
            check(bits < prev, || format!("list {n}: commit went from {prev} to {bits}"))?;
            prev = bits;
        }
        commits += out.trace.len();
        out.decomposition.validate().map_err(|e| format!("list {n}: {e}"))?;
        let fresh = tucker_description_length(&x, &out.decomposition);
        check((fresh - out.bits).abs() <= 1e-9 * fresh.abs().max(1.0), || {
            format!("list {n}: incremental {} vs fresh {fresh}", out.bits)
        })?;
    }
    let fixtures = [
        vec![Block::new(0..3, 0..3, 0..3), Block::new(0..3, 0..3, 0..3)],
        vec![
            Block::new(0..3, 0..2, 1..4),
            Block::new(4..7, 3..6, 5..7),
            Block::new(0..3, 0..2, 1..4),
        ],
        vec![
            Block::new(1..4, 1..4, 1..4),
            Block::new(5..8, 0..2, 6..8),
            Block::new(1..4, 1..4, 1..4),
            Block::new(5..8, 0..2, 6..8),
        ],
    ];
    for (n, blocks) in fixtures.iter().enumerate() {
        let x = reconstruct(blocks, Dims::new(8, 8, 8)).unwrap();
        let out = mdl_tucker(&x, blocks, TuckerOptions::default()).map_err(|e| e.to_string())?;
        let b = blocks.len();
        let dims = out.decomposition.core_dims();
        check(dims.iter().all(|&s| s < b) && out.boolean_error == 0, || {
            format!("duplicate fixture {n}: core {dims:?} from {b} blocks")
        })?;
    }
    Ok(format!(
        "1000 lists, {commits} commits all decreasing, 3 duplicate fixtures collapsed"
    ))
}

fn determinism_and_round_trip() -> Outcome {
    let spec = SynthSpec {
        block_dims_mean: [8; 3],
        additive_noise: 0.1,
        destructive_noise: 0.1,
        ..SynthSpec::new(Dims::new(50, 60, 70), 6, 13)
    };
    let snapshot = || -> Result<Vec<String>, String> {
        let data = generate(&spec).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig {
            seed: 5,
            ..Default::default()
        };
        let cp = factorize_cp(&data.noisy, &cfg).map_err(|e| e.to_string())?;
        let tk = factorize_tucker(&data.noisy, &cfg, None, TuckerOptions::default()).map_err(|e| e.to_string())?;
        let core = tk.outcome.map(|o| o.decomposition.core_text()).unwrap_or_default();
        Ok(vec![
            data.noisy.to_text(),
            data.noise_free.to_text(),
            blocks_to_text(&cp.decomposition.blocks()),
            cp.report.to_csv(),
            (0..3).map(|m| cp.decomposition.factor_matrix_market(m)).collect(),
            core,
        ])
    };
    let first = snapshot()?;
    for rep in 1..3 {
        check(snapshot()? == first, || format!("repetition {rep} differs"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = generate(&spec).map_err(|e| e.to_string())?;
    let path = dir.path().join("x.txt");
    data.noisy.save(&path).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(&path).unwrap();
    let loaded = SparseBinaryTensor::load(&path, None).map_err(|e| e.to_string())?;
    check(same(&loaded, &data.noisy), || "tensor load differs".into())?;
    let again = dir.path().join("y.txt");
    loaded.save(&again).map_err(|e| e.to_string())?;
    check(std::fs::read(&again).unwrap() == bytes, || {
        "tensor save bytes differ".into()
    })?;

    let blocks = generate(&spec).unwrap().truth;
    let text = blocks_to_text(&blocks);
    let parsed = parse_blocks(text.as_bytes()).map_err(|e| e.to_string())?;
    check(parsed == blocks && blocks_to_text(&parsed) == text, || {
        "blocks round trip differs".into()
    })?;
    Ok("3 identical repetitions, tensor and block files round-trip byte-exact".into())
}

fn enron_shaped_fixture() -> Outcome {
    let d = Dims::new(146, 146, 38);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = (d.volume() as f64 * 0.0023).round() as usize;
    let mut cells = HashSet::new();
    while cells.len() < target {
        cells.insert(Cell::new(
            rng.gen_range(0..146),
            rng.gen_range(0..146),
            rng.gen_range(0..38),
        ));
    }
    let mut text = String::from("# 146 x 146 x 38 sender receiver week\n");
    let mut sorted: Vec<Cell> = cells.into_iter().collect();
    sorted.sort();
    for c in &sorted {
        text.push_str(&format!("{} {} {} 1\n", c.i + 1, c.j + 1, c.k + 1));
    }
    let x = SparseBinaryTensor::parse(text.as_bytes(), Some(d)).map_err(|e| e.to_string())?;
    check(x.dims() == d && x.nnz() == target && x.cells() == &sorted[..], || {
        "loader mismatch".into()
    })?;
    let t = Instant::now();
    let res = factorize_cp(&x, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    check(res.boolean_error <= x.nnz() as u64, || {
        "error above the empty model".into()
    })?;
    Ok(format!(
        "{} cells loaded, factorized to rank {} in {:.2}s (published real-data errors not reproduced)",
        x.nnz(),
        res.decomposition.rank(),
        t.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("desk-scale recovery", desk_scale_recovery),
        ("convex hull minimality", hull_minimality),
        ("merge density oracle", merge_density_oracle),
        ("greedy vs exhaustive", greedy_vs_exhaustive),
        ("MDL arithmetic", mdl_arithmetic),
        ("Tucker identities", tucker_identities),
        ("determinism and round trip", determinism_and_round_trip),
        ("Enron-shaped loader fixture", enron_shaped_fixture),
    ];
    let mut failed = Vec::new();
    for (n, (name, f)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match res {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", n + 1),
            Err(detail) => {
                println!("criterion {} ({name}): FAIL - {detail}", n + 1);
                failed.push(n + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
