//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod gradients;
pub mod preprocess;

use deal_core::eval::{compute_ap, ImageEval, ScaleBucket, RECALL_POINTS};
use deal_core::geometry::PixelBox;
use deal_core::model::{hungarian_match, ModelConfig};
use deal_core::scene::{generate_scene, GeneratorConfig, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest architecture that exercises every component.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        channels: 4,
        hidden: 4,
        heads: 2,
        decoder_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn small_model() -> ModelConfig {
    ModelConfig {
        channels: 8,
        hidden: 16,
        heads: 2,
        decoder_layers: 1,
        ..ModelConfig::default()
    }
}

pub fn scene(size: usize, objects: (usize, usize), seed: u64) -> Scene {
    let cfg = GeneratorConfig {
        width: size,
        height: size,
        min_objects: objects.0,
        max_objects: objects.1,
        max_size: 12.min(size),
        ..GeneratorConfig::default()
    };
    generate_scene(&cfg, format!("s{seed}"), seed).unwrap()
}

// ---------------------------------------------------------------- matching

/// Minimum total cost over all injective row->column maps (rows <= cols) or
/// column->row maps, by enumerating permutations.
pub fn brute_force_min(cost: &[f64], rows: usize, cols: usize) -> f64 {
    fn go(cost: &[f64], cols: usize, row: usize, rows: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, transpose: bool) {
        if row == rows {
            *best = best.min(acc);
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                let v = if transpose { cost[c * cols + row] } else { cost[row * cols + c] };
                go(cost, cols, row + 1, rows, used, acc + v, best, transpose);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    if rows <= cols {
        go(cost, cols, 0, rows, &mut vec![false; cols], 0.0, &mut best, false);
    } else {
        go(cost, cols, 0, cols, &mut vec![false; rows], 0.0, &mut best, true);
    }
    best
}

/// Checks `hungarian_match` against enumeration on one random matrix.
pub fn check_matcher(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let rows = r.random_range(1..=7);
    let cols = r.random_range(1..=7);
    // small integer costs make ties common and totals exact
    let cost: Vec<f64> = (0..rows * cols).map(|_| r.random_range(0..20) as f64).collect();
    let pairs = hungarian_match(&cost, rows, cols).map_err(|e| e.to_string())?;
    if pairs.len() != rows.min(cols) {
        return Err(format!("{rows}x{cols}: {} pairs", pairs.len()));
    }
    let mut seen_r = vec![false; rows];
    let mut seen_c = vec![false; cols];
    for &(i, j) in &pairs {
        if seen_r[i] || seen_c[j] {
            return Err(format!("{rows}x{cols}: not one-to-one"));
        }
        seen_r[i] = true;
        seen_c[j] = true;
    }
    let total: f64 = pairs.iter().map(|&(i, j)| cost[i * cols + j]).sum();
    let best = brute_force_min(&cost, rows, cols);
    if total != best {
        return Err(format!("{rows}x{cols}: total {total} != optimum {best} (seed {seed})"));
    }
    Ok(())
}

// ---------------------------------------------------------------------- AP

fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Exhaustive PR oracle: for every cut-off `n` of the ranked detection list,
/// re-runs greedy matching on the first `n` detections from scratch and
/// records the (TP, FP) counts; interpolated precision at each recall level
/// is the best precision over cut-offs whose recall reaches it (compared in
/// integers).
pub fn ap_oracle(images: &[ImageEval], thr: f64, bucket: Option<ScaleBucket>) -> f64 {
    let keep = |g: &PixelBox| bucket.is_none_or(|b| b.contains(g));
    let n_pos: usize = images.iter().map(|im| im.gts.iter().filter(|g| keep(g)).count()).sum();
    if n_pos == 0 {
        return 0.0;
    }
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (i, im) in images.iter().enumerate() {
        for (d, &(_, s)) in im.detections.iter().enumerate() {
            ranked.push((i, d, s));
        }
    }
    // insertion sort: stable by construction
    for a in 1..ranked.len() {
        let mut b = a;
        while b > 0 && ranked[b - 1].2 < ranked[b].2 {
            ranked.swap(b - 1, b);
            b -= 1;
        }
    }
    let mut points: Vec<(usize, usize)> = Vec::new();
    for n in 1..=ranked.len() {
        let mut taken: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.gts.len()]).collect();
        let (mut tp, mut fp) = (0usize, 0usize);
        for &(i, d, _) in &ranked[..n] {
            let det = images[i].detections[d].0;
            let pick = |inside: bool, taken: &[bool]| {
                let mut best: Option<usize> = None;
                let mut best_iou = thr;
                for (g, gt) in images[i].gts.iter().enumerate() {
                    let o = box_iou(&det, gt);
                    if !taken[g] && keep(gt) == inside && o >= thr && (best.is_none() || o > best_iou) {
                        best = Some(g);
                        best_iou = o;
                    }
                }
                best
            };
            if let Some(g) = pick(true, &taken[i]) {
                taken[i][g] = true;
                tp += 1;
            } else if let Some(g) = pick(false, &taken[i]) {
                taken[i][g] = true;
            } else {
                fp += 1;
            }
        }
        points.push((tp, fp));
    }
    let levels = RECALL_POINTS - 1;
    let mut sum = 0.0;
    for r in 0..=levels {
        let best = points
            .iter()
            .filter(|&&(tp, fp)| tp * levels >= r * n_pos && tp + fp > 0)
            .map(|&(tp, fp)| tp as f64 / (tp + fp) as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / RECALL_POINTS as f64
}

/// Random small instance: <= 5 images, <= 6 GTs and <= 10 detections each,
/// detections jittered from GTs or placed at random, scores from a coarse
/// grid so ties occur.
pub fn random_ap_instance(seed: u64) -> Vec<ImageEval> {
    let mut r = rng(seed);
    let n_images = r.random_range(1..=5);
    (0..n_images)
        .map(|_| {
            let n_gt = r.random_range(0..=6);
            let gts: Vec<PixelBox> = (0..n_gt)
                .map(|_| {
                    let s = r.random_range(3.0..40.0);
                    PixelBox::new(r.random_range(0.0..60.0), r.random_range(0.0..60.0), s, s * r.random_range(0.6..1.5))
                })
                .collect();
            let n_det = r.random_range(0..=10);
            let detections = (0..n_det)
                .map(|_| {
                    let score = r.random_range(0..=10) as f64 / 10.0;
                    let b = if !gts.is_empty() && r.random_bool(0.7) {
                        let g = gts[r.random_range(0..gts.len())];
                        let j = |v: f64, r: &mut ChaCha8Rng| v * r.random_range(-0.3..0.3);
                        PixelBox::new(g.x + j(g.w, &mut r), g.y + j(g.h, &mut r), g.w * r.random_range(0.7..1.3), g.h * r.random_range(0.7..1.3))
                    } else {
                        PixelBox::new(r.random_range(0.0..60.0), r.random_range(0.0..60.0), r.random_range(2.0..30.0), r.random_range(2.0..30.0))
                    };
                    (b, score)
                })
                .collect();
            ImageEval { detections, gts }
        })
        .collect()
}

/// Compares `compute_ap` with the oracle at all thresholds and buckets.
pub fn check_ap(seed: u64) -> Result<(), String> {
    let inst = random_ap_instance(seed);
    let buckets = [None, Some(ScaleBucket::VeryTiny), Some(ScaleBucket::Tiny), Some(ScaleBucket::Small), Some(ScaleBucket::Medium)];
    for thr in [0.25, 0.5, 0.75] {
        for b in buckets {
            let got = compute_ap(&inst, thr, b).ap;
            let want = ap_oracle(&inst, thr, b);
            if (got - want).abs() > 1e-9 {
                return Err(format!("seed {seed} thr {thr} bucket {b:?}: {got} vs oracle {want}"));
            }
        }
    }
    Ok(())
}

// ----------------------------------------------------------------- density

/// Sums the density target for a random scene and prompted-category subset.
/// Returns `Ok(true)` when the objects' centre cells are distinct (the sum
/// must equal the count), `Ok(false)` when cells collide (the sum may only
/// fall short).
pub fn check_density_count(seed: u64) -> Result<bool, String> {
    use deal_core::model::{build_density_target, DENSITY_STRIDE};
    let mut r = rng(seed);
    let size = [64, 96, 128][r.random_range(0..3)];
    let s = scene(size, (1, r.random_range(1..=12)), seed);
    let prompted: Vec<u32> = match r.random_range(0..3) {
        0 => vec![0],
        1 => vec![1],
        _ => vec![0, 1],
    };
    let grid = (size / DENSITY_STRIDE, size / DENSITY_STRIDE);
    let target = build_density_target(&s.annotations, &prompted, DENSITY_STRIDE, grid);
    let sum: f64 = target.data().iter().sum();
    let cells: Vec<(i64, i64)> = s
        .annotations
        .iter()
        .filter(|a| prompted.contains(&a.category))
        .map(|a| {
            let (cx, cy) = a.bbox.center();
            ((cx / DENSITY_STRIDE as f64).floor() as i64, (cy / DENSITY_STRIDE as f64).floor() as i64)
        })
        .collect();
    let mut distinct = cells.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let count = cells.len() as f64;
    if distinct.len() == cells.len() {
        if sum != count {
            return Err(format!("seed {seed}: density sum {sum} != {count} prompted objects"));
        }
        Ok(true)
    } else {
        if sum != distinct.len() as f64 {
            return Err(format!("seed {seed}: density sum {sum} != {} occupied cells", distinct.len()));
        }
        Ok(false)
    }
}

// ------------------------------------------------------------------ cycles

/// Runs one random prompt-growing cycle and checks its structure: one new
/// prompt per step, each choice a true argmin of the coverage (or detection
/// quality), and under the safe policy every prompt strictly inside a
/// ground-truth box of its own category. Returns whether the cycle was
/// inter-class and its `K`.
pub fn check_cycle(seed: u64) -> Result<(bool, usize), String> {
    use deal_core::train::{run_cycle, CycleKind, SelectionPolicy};
    use deal_tensor::Tape;
    let mut r = rng(seed);
    let model = deal_core::model::Deal::<f64>::new(tiny_model(), seed).map_err(|e| e.to_string())?;
    let s = scene(64, (2, 10), seed);
    let present = s.categories_present();
    let kind = if r.random_bool(0.5) {
        CycleKind::Inter
    } else {
        CycleKind::Intra(present[r.random_range(0..present.len())])
    };
    let k_steps = r.random_range(1..=3);
    let policy = if r.random_bool(0.75) { SelectionPolicy::Safe } else { SelectionPolicy::Literal };
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let features = model.encode(&p, tape.constant(&s.image)).map_err(|e| e.to_string())?;
    let cycle = run_cycle(&model, &p, &features, &s, kind, k_steps, r.random(), policy, false).map_err(|e| e.to_string())?;
    let ctx = format!("seed {seed} {kind} K={k_steps} {policy:?}");

    let prompted: Vec<u32> = match kind {
        CycleKind::Intra(c) => vec![c],
        CycleKind::Inter => present.clone(),
    };
    let gts: Vec<PixelBox> = s.annotations.iter().filter(|a| prompted.contains(&a.category)).map(|a| a.bbox).collect();
    let gt_cats: Vec<u32> = s.annotations.iter().filter(|a| prompted.contains(&a.category)).map(|a| a.category).collect();
    let initial = match kind {
        CycleKind::Intra(_) => 1,
        CycleKind::Inter => present.len(),
    };
    if cycle.initial_prompts != initial || cycle.prompts.len() != initial + k_steps || cycle.history.len() != k_steps + 1 {
        return Err(format!("{ctx}: prompt counts {} / {}", cycle.initial_prompts, cycle.prompts.len()));
    }
    for (k, step) in cycle.history.iter().enumerate() {
        if step.n_prompts != initial + k {
            return Err(format!("{ctx}: step {k} saw {} prompts", step.n_prompts));
        }
        if k == k_steps {
            if step.selected.is_some() {
                return Err(format!("{ctx}: last step selected a prompt"));
            }
            continue;
        }
        let added = cycle.prompts[initial + k];
        let dets: Vec<(PixelBox, f64)> = step.detections.iter().map(|d| (d.bbox.to_pixel(64.0, 64.0), d.score.clamp(0.0, 1.0))).collect();
        match policy {
            SelectionPolicy::Safe => {
                let cover: Vec<f64> = gts.iter().map(|g| dets.iter().map(|(b, sc)| sc * box_iou(b, g)).fold(0.0, f64::max)).collect();
                let min = cover.iter().cloned().fold(f64::INFINITY, f64::min);
                let Some(i) = step.selected else {
                    return Err(format!("{ctx}: step {k} selected nothing"));
                };
                if cover[i] > min + 1e-12 {
                    return Err(format!("{ctx}: step {k} chose coverage {} but minimum is {min}", cover[i]));
                }
                if (added.x, added.y) != gts[i].center() || added.category != gt_cats[i] {
                    return Err(format!("{ctx}: step {k} prompt {added:?} is not the centre of object {i}"));
                }
            }
            SelectionPolicy::Literal => {
                let quality: Vec<f64> = dets.iter().map(|(b, sc)| gts.iter().map(|g| sc * box_iou(b, g)).fold(0.0, f64::max)).collect();
                let min = quality.iter().cloned().fold(f64::INFINITY, f64::min);
                let hit = step.detections.iter().zip(&quality).any(|(d, &q)| {
                    q <= min + 1e-12 && (d.bbox.cx * 64.0 - added.x).abs() < 1e-9 && (d.bbox.cy * 64.0 - added.y).abs() < 1e-9
                });
                if !hit {
                    return Err(format!("{ctx}: step {k} prompt {added:?} is not at a minimum-quality detection"));
                }
            }
        }
    }
    if policy == SelectionPolicy::Safe {
        for (i, pr) in cycle.prompts.iter().enumerate() {
            if let CycleKind::Intra(c) = kind {
                if pr.category != c {
                    return Err(format!("{ctx}: prompt {i} has category {} in an intra cycle of {c}", pr.category));
                }
            }
            let ok = s.annotations.iter().any(|a| a.category == pr.category && a.bbox.contains_strictly(pr.x, pr.y));
            if !ok {
                return Err(format!("{ctx}: prompt {i} {pr:?} is not inside an object of its category"));
            }
        }
    }
    Ok((kind == CycleKind::Inter, k_steps))
}

// ----------------------------------------------------------------- service

/// Trains a default-size model briefly on toy scenes, writes the final
/// checkpoint under `dir` and loads it back into a fresh model.
pub fn toy_checkpoint(dir: &std::path::Path) -> (deal_core::model::Deal<f64>, deal_core::scene::Dataset) {
    use deal_core::scene::generate_dataset;
    use deal_core::train::{train, TrainConfig};
    let data = generate_dataset(&GeneratorConfig::default(), 8, 21).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        seed: 2,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let (_, report) = train(&data, &ModelConfig::default(), &cfg, Some(dir)).unwrap();
    let mut model = deal_core::model::Deal::<f64>::new(ModelConfig::default(), 99).unwrap();
    deal_tensor::load_checkpoint(report.checkpoints.last().unwrap(), &mut model.params).unwrap();
    (model, data)
}

/// Exercises the inference endpoint on every scene: response invariants,
/// duplicate-prompt idempotence, statelessness and zero-prompt rejection.
/// Returns the slowest request time in milliseconds.
pub fn check_service(model: &deal_core::model::Deal<f64>, scenes: &[Scene]) -> Result<f64, String> {
    use base64::Engine;
    use deal_core::scene::{sample_prompts, save_png, Setting};
    use deal_core::service::{handle_infer, InferRequest, ServiceError};
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut slowest: f64 = 0.0;
    for (i, scene) in scenes.iter().enumerate() {
        let path = dir.path().join(format!("{i}.png"));
        save_png(&scene.image, &path).map_err(|e| e.to_string())?;
        let image = base64::engine::general_purpose::STANDARD.encode(std::fs::read(&path).map_err(|e| e.to_string())?);
        let prompts = sample_prompts(scene, Setting::S3, i as u64, 0.0).map_err(|e| e.to_string())?.prompts;
        let request = |prompts: Vec<_>| InferRequest {
            image_id: None,
            image_base64: Some(image.clone()),
            prompts,
            score_threshold: None,
        };
        let started = std::time::Instant::now();
        let single = handle_infer(&request(prompts.clone()), Some(model), None).map_err(|e| format!("scene {i}: {e}"))?;
        slowest = slowest.max(started.elapsed().as_secs_f64() * 1000.0);

        let (h, w) = (scene.height(), scene.width());
        let dm = &single.density_map;
        if (dm.width, dm.height) != (w / 8, h / 8) || dm.values.len() != dm.width * dm.height {
            return Err(format!("scene {i}: density map {}x{}", dm.width, dm.height));
        }
        if dm.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("scene {i}: density value outside [0, 1]"));
        }
        if !(model.config.n_min..=model.config.n_max).contains(&single.n_query) {
            return Err(format!("scene {i}: n_query {}", single.n_query));
        }
        for d in &single.detections {
            let [cx, cy, bw, bh] = d.bbox;
            let ok = (0.0..=1.0).contains(&cx)
                && (0.0..=1.0).contains(&cy)
                && bw > 0.0
                && bh > 0.0
                && d.score >= model.config.score_threshold
                && d.score <= 1.0
                && prompts.iter().any(|p| p.category == d.prompt_group);
            if !ok {
                return Err(format!("scene {i}: detection {d:?} violates the response contract"));
            }
        }

        let mut doubled = prompts.clone();
        doubled.extend(prompts.iter().copied());
        let twice = handle_infer(&request(doubled), Some(model), None).map_err(|e| e.to_string())?;
        if twice.detections != single.detections || twice.n_query != single.n_query || twice.density_map != single.density_map {
            return Err(format!("scene {i}: duplicated prompt changed the response"));
        }
        let again = handle_infer(&request(prompts.clone()), Some(model), None).map_err(|e| e.to_string())?;
        if again.detections != single.detections || again.n_query != single.n_query || again.density_map != single.density_map {
            return Err(format!("scene {i}: repeated request gave a different response"));
        }
        match handle_infer(&request(Vec::new()), Some(model), None) {
            Err(ServiceError::BadRequest(m)) if m.contains("P2SOD requires at least one point prompt") => {}
            other => return Err(format!("scene {i}: zero-prompt request gave {other:?}")),
        }
    }
    Ok(slowest)
}
