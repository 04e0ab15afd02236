use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deal_tensor::{concat, logit, Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

use super::layers::{from_tokens, grid_centres, sine_embedding, to_tokens, Attention, Conv, DecoderLayer, EncoderBlock, Init, Linear, Norm};
use super::{Detection, ModelConfig, DENSITY_STRIDE, INPUT_MULTIPLE};
use crate::error::{DealError, Result};
use crate::geometry::NormBox;
use crate::scene::{CategoryId, PointPrompt};

/// Backbone levels at strides 4, 8, 16 and 32, each `1 x C x h x w`.
#[derive(Clone, Copy, Debug)]
pub struct Pyramid<'t, S> {
    pub l2: Var<'t, S>,
    pub l3: Var<'t, S>,
    pub l4: Var<'t, S>,
    pub l5: Var<'t, S>,
}

/// Stride-8 enhanced feature `S3`, `1 x C x h x w`.
#[derive(Clone, Copy, Debug)]
pub struct Enhanced<'t, S> {
    pub s3: Var<'t, S>,
}

impl<S: Scalar> Enhanced<'_, S> {
    pub fn grid(&self) -> (usize, usize) {
        let s = self.s3.shape();
        (s[2], s[3])
    }
}

/// Image-level features shared by every prompt set on that image.
#[derive(Clone, Copy, Debug)]
pub struct Features<'t, S> {
    pub pyramid: Pyramid<'t, S>,
    pub enhanced: Enhanced<'t, S>,
    pub image_size: (usize, usize),
}

/// `k x d` prompt embedding and the category of each row.
#[derive(Clone, Debug)]
pub struct PromptEmbedding<'t, S> {
    pub pe: Var<'t, S>,
    pub groups: Vec<CategoryId>,
    /// Prompt locations in pixels.
    pub points: Vec<(f64, f64)>,
}

/// `1 x 1 x h x w` density map with values in `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct DensityMap<'t, S> {
    pub grid: Var<'t, S>,
}

impl<S: Scalar> DensityMap<'_, S> {
    pub fn total(&self) -> f64 {
        self.grid.value().iter().map(|v| v.as_f64()).sum()
    }

    pub fn values(&self) -> Vec<f64> {
        self.grid.value().iter().map(|v| v.as_f64()).collect()
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.grid.shape();
        (s[2], s[3])
    }
}

/// Decoder outputs for `n` queries.
#[derive(Clone, Debug)]
pub struct Decoded<'t, S> {
    /// `n x 1` objectness probabilities.
    pub scores: Var<'t, S>,
    /// `n x 4` normalised `(cx, cy, w, h)`.
    pub boxes: Var<'t, S>,
    /// Density-map cell (row-major) seeding each query.
    pub reference_cells: Vec<usize>,
    pub prompt_groups: Vec<CategoryId>,
    pub warnings: Vec<String>,
}

impl<S: Scalar> Decoded<'_, S> {
    pub fn len(&self) -> usize {
        self.reference_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_cells.is_empty()
    }

    /// Detached detections. Extents are floored at a tiny positive value so
    /// saturated sigmoids still give valid boxes.
    pub fn detections(&self) -> Vec<Detection> {
        let (s, b) = (self.scores.value(), self.boxes.value());
        (0..self.len())
            .map(|i| Detection {
                bbox: NormBox {
                    cx: b[4 * i].as_f64(),
                    cy: b[4 * i + 1].as_f64(),
                    w: b[4 * i + 2].as_f64().max(1e-9),
                    h: b[4 * i + 3].as_f64().max(1e-9),
                },
                score: s[i].as_f64(),
                prompt_group: self.prompt_groups[i],
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct HeadOutput<'t, S> {
    pub embedding: PromptEmbedding<'t, S>,
    pub density: DensityMap<'t, S>,
    pub n_query: usize,
    pub decoded: Decoded<'t, S>,
}

/// Detached result of one inference call.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub detections: Vec<Detection>,
    pub n_query: usize,
    pub density: Vec<f64>,
    /// `(h, w)` of the density grid.
    pub density_dims: (usize, usize),
    pub warnings: Vec<String>,
}

/// `clamp(round(density_sum), n_min, n_max)`.
pub fn allocate_queries(density_sum: f64, n_min: usize, n_max: usize) -> usize {
    let rounded = if density_sum.is_finite() { density_sum.round().max(0.0) } else { 0.0 };
    (rounded as usize).clamp(n_min, n_max)
}

#[derive(Clone, Copy, Debug)]
struct Stage {
    down: Conv,
    refine: Conv,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: Conv,
    stages: [Stage; 4],
    l5_encoder: EncoderBlock,
    l5_pos: Linear,
    fuse4: Conv,
    fuse3: Conv,
    down2: Conv,
    merge: Conv,
    csp: Conv,
    prompt_proj: Linear,
    prompt_encoder: EncoderBlock,
    kernel_attn: Attention,
    kernel_proj: Linear,
    density_temperature: ParamId,
    density_conv: Conv,
    query_proj: Linear,
    memory_proj: Linear,
    pos_proj: Linear,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
    score_head: Linear,
    box_hidden: Linear,
    box_out: Linear,
}

/// Initial scale of the cosine prompt-to-feature responses.
const INITIAL_TEMPERATURE: f64 = 10.0;

/// Rows scaled to unit L2 norm.
fn unit_rows<'t, S: Scalar>(x: Var<'t, S>) -> Result<Var<'t, S>> {
    let n = x.shape()[0];
    let norm = x.square().sum_axis(1)?.add_scalar(S::lit(1e-12)).sqrt().reshape([n, 1])?;
    Ok(x.div(norm)?)
}

/// DEAL detector with its parameters.
#[derive(Clone, Debug)]
pub struct Deal<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    layout: Layout,
}

impl<S: Scalar> Deal<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let (c, d, heads) = (config.channels, config.hidden, config.heads);
        let stem = Conv::new(&mut init, "backbone.stem", 3, c / 2, 3, 2)?;
        let mut stages = Vec::with_capacity(4);
        for (i, cin) in [c / 2, c, c, c].into_iter().enumerate() {
            let name = format!("backbone.l{}", i + 2);
            stages.push(Stage {
                down: Conv::new(&mut init, &format!("{name}.down"), cin, c, 3, 2)?,
                refine: Conv::new(&mut init, &format!("{name}.refine"), c, c, 3, 1)?,
            });
        }
        let stages: [Stage; 4] = stages.try_into().expect("four stages");
        let l5_encoder = EncoderBlock::new(&mut init, "hfe.encoder", c, heads)?;
        let l5_pos = Linear::new(&mut init, "hfe.pos", c, c)?;
        let fuse4 = Conv::new(&mut init, "hfe.fuse4", c, c, 3, 1)?;
        let fuse3 = Conv::new(&mut init, "hfe.fuse3", c, c, 3, 1)?;
        let down2 = Conv::new(&mut init, "hfe.down2", c, c, 3, 2)?;
        let merge = Conv::new(&mut init, "hfe.merge", 2 * c, c, 1, 1)?;
        let csp = Conv::new(&mut init, "hfe.csp", c, c, 3, 1)?;
        let prompt_proj = Linear::new(&mut init, "prompt.proj", 3 * c, d)?;
        let prompt_encoder = EncoderBlock::new(&mut init, "prompt.encoder", d, heads)?;
        let kernel_attn = Attention::new(&mut init, "density.attn", d, c, d, d, heads)?;
        let kernel_proj = Linear::new(&mut init, "density.kernel", d, c)?;
        let density_temperature = init.add("density.temperature", Tensor::full([1], S::lit(INITIAL_TEMPERATURE)).with_grad())?;
        let density_conv = Conv::new(&mut init, "density.conv", 1, 1, 3, 1)?;
        let prior = logit(config.prior_prob);
        *init.store.get_mut(density_conv.bias_id()) = Tensor::full([1], S::lit(prior)).with_grad();
        let query_proj = Linear::new(&mut init, "decoder.query", c + 1, d)?;
        let memory_proj = Linear::new(&mut init, "decoder.memory", c + 1, d)?;
        let pos_proj = Linear::new(&mut init, "decoder.pos", d, d)?;
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(&mut init, &format!("decoder.layer{i}"), d, heads))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = Norm::new(&mut init, "decoder.norm", d)?;
        let score_head = Linear::new(&mut init, "head.score", d, 1)?;
        *init.store.get_mut(score_head.bias_id()) = Tensor::full([1], S::lit(prior)).with_grad();
        let box_hidden = Linear::new(&mut init, "head.box.hidden", d, d)?;
        let box_out = Linear::scaled(&mut init, "head.box.out", d, 4, 0.0)?;
        let layout = Layout {
            stem,
            stages,
            l5_encoder,
            l5_pos,
            fuse4,
            fuse3,
            down2,
            merge,
            csp,
            prompt_proj,
            prompt_encoder,
            kernel_attn,
            kernel_proj,
            density_temperature,
            density_conv,
            query_proj,
            memory_proj,
            pos_proj,
            decoder,
            decoder_norm,
            score_head,
            box_hidden,
            box_out,
        };
        Ok(Self { config, params, layout })
    }

    /// Toy CNN backbone on a `3 x H x W` (or `1 x 3 x H x W`) image in `[0, 1]`.
    pub fn backbone_forward<'t>(&self, p: &Bound<'t, S>, image: Var<'t, S>) -> Result<Pyramid<'t, S>> {
        let shape = image.shape();
        let image = match shape[..] {
            [3, h, w] => image.reshape([1, 3, h, w])?,
            [1, 3, _, _] => image,
            _ => return Err(DealError::Shape(format!("expected a 3 x H x W image, got {shape:?}"))),
        };
        let (h, w) = (image.shape()[2], image.shape()[3]);
        if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 {
            return Err(DealError::Shape(format!(
                "image {w}x{h} is not a multiple of {INPUT_MULTIPLE} on both sides; pad it first"
            )));
        }
        let l = &self.layout;
        let x = image.add_scalar(S::lit(-0.5)).scale(S::lit(2.0));
        let mut x = l.stem.apply(p, x)?.silu();
        let mut levels = Vec::with_capacity(4);
        for stage in &l.stages {
            let down = stage.down.apply(p, x)?.silu();
            x = down.add(stage.refine.apply(p, down)?.silu())?;
            levels.push(x);
        }
        Ok(Pyramid {
            l2: levels[0],
            l3: levels[1],
            l4: levels[2],
            l5: levels[3],
        })
    }

    /// Global self-attention on the coarsest level, then top-down and
    /// bottom-up fusion into the stride-8 feature `S3`.
    pub fn hfe_forward<'t>(&self, p: &Bound<'t, S>, pyr: &Pyramid<'t, S>) -> Result<Enhanced<'t, S>> {
        let c = self.config.channels;
        for (name, v) in [("L2", pyr.l2), ("L3", pyr.l3), ("L4", pyr.l4), ("L5", pyr.l5)] {
            if v.shape()[1] != c {
                return Err(DealError::Config(format!("{name} has {} channels, model expects {c}", v.shape()[1])));
            }
        }
        let l = &self.layout;
        let (h5, w5) = (pyr.l5.shape()[2], pyr.l5.shape()[3]);
        let tokens = to_tokens(pyr.l5)?;
        let pos = p.get(l.l5_pos.bias_id()).tape().constant_from([h5 * w5, c], sine_embedding(&grid_centres(h5, w5), c))?;
        let pos = l.l5_pos.apply(p, pos)?;
        let l5 = from_tokens(l.l5_encoder.apply(p, tokens, Some(pos))?, h5, w5)?;
        let p4 = l.fuse4.apply(p, l5.upsample2x()?.add(pyr.l4)?)?.silu();
        let p3 = l.fuse3.apply(p, p4.upsample2x()?.add(pyr.l3)?)?.silu();
        let d2 = l.down2.apply(p, pyr.l2)?.silu();
        let a = l.merge.apply(p, concat(&[p3, d2], 1)?)?.silu();
        let s3 = a.add(l.csp.apply(p, a)?.silu())?;
        Ok(Enhanced { s3 })
    }

    pub fn encode<'t>(&self, p: &Bound<'t, S>, image: Var<'t, S>) -> Result<Features<'t, S>> {
        let shape = image.shape();
        let image_size = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let pyramid = self.backbone_forward(p, image)?;
        let enhanced = self.hfe_forward(p, &pyramid)?;
        Ok(Features {
            pyramid,
            enhanced,
            image_size,
        })
    }

    /// Samples each point from the stride-8/16/32 levels, projects the
    /// concatenation to `d` and relates the prompts with self-attention.
    /// `image_size` is `(H, W)` in pixels.
    pub fn embed_prompts<'t>(
        &self,
        p: &Bound<'t, S>,
        pyr: &Pyramid<'t, S>,
        prompts: &[PointPrompt],
        image_size: (usize, usize),
    ) -> Result<PromptEmbedding<'t, S>> {
        if prompts.is_empty() {
            return Err(DealError::Argument("P2SOD requires at least one point prompt".into()));
        }
        let (ih, iw) = (image_size.0 as f64, image_size.1 as f64);
        for (i, q) in prompts.iter().enumerate() {
            if !(q.x.is_finite() && q.y.is_finite() && q.x >= 0.0 && q.y >= 0.0 && q.x <= iw && q.y <= ih) {
                return Err(DealError::Argument(format!(
                    "prompt {i} at ({}, {}) lies outside the {}x{} image",
                    q.x, q.y, iw, ih
                )));
            }
        }
        let levels = [(pyr.l3, 8.0), (pyr.l4, 16.0), (pyr.l5, 32.0)];
        let mut rows = Vec::with_capacity(prompts.len());
        for q in prompts {
            let mut parts = Vec::with_capacity(3);
            for (level, stride) in levels {
                let s = level.shape();
                let (c, h, w) = (s[1], s[2], s[3]);
                let gx = (q.x / stride - 0.5).clamp(0.0, (w - 1) as f64);
                let gy = (q.y / stride - 0.5).clamp(0.0, (h - 1) as f64);
                parts.push(level.reshape([c, h, w])?.bilinear_sample(gx, gy)?);
            }
            let row = concat(&parts, 0)?;
            let width = row.shape()[0];
            rows.push(row.reshape([1, width])?);
        }
        let l = &self.layout;
        let x = l.prompt_proj.apply(p, concat(&rows, 0)?)?;
        let pe = l.prompt_encoder.apply(p, x, None)?;
        Ok(PromptEmbedding {
            pe,
            groups: prompts.iter().map(|q| q.category).collect(),
            points: prompts.iter().map(|q| (q.x, q.y)).collect(),
        })
    }

    /// Prompt kernels from cross-attention, scaled cosine responses against `S3`,
    /// max over prompts, then a 3x3 convolution and sigmoid.
    pub fn activate_prompts<'t>(
        &self,
        p: &Bound<'t, S>,
        pe: &PromptEmbedding<'t, S>,
        enhanced: &Enhanced<'t, S>,
    ) -> Result<DensityMap<'t, S>> {
        let d = self.config.hidden;
        if pe.pe.shape()[1] != d {
            return Err(DealError::Shape(format!("prompt embedding width {} != hidden width {d}", pe.pe.shape()[1])));
        }
        let l = &self.layout;
        let (h, w) = enhanced.grid();
        let c = enhanced.s3.shape()[1];
        let tokens = to_tokens(enhanced.s3)?;
        let attended = l.kernel_attn.apply(p, pe.pe, tokens, tokens)?;
        let s3 = enhanced.s3.reshape([c, h, w])?;
        let templates = pe
            .points
            .iter()
            .map(|&(x, y)| {
                let gx = (x / DENSITY_STRIDE as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let gy = (y / DENSITY_STRIDE as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                s3.bilinear_sample(gx, gy)?.reshape([1, c])
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let kernels = l.kernel_proj.apply(p, pe.pe.add(attended)?)?.add(concat(&templates, 0)?)?;
        let responses = unit_rows(kernels)?
            .matmul(unit_rows(tokens)?.transpose()?)?
            .mul(p.get(l.density_temperature))?;
        let fused = responses.max_axis(0)?.reshape([1, 1, h, w])?;
        let grid = l.density_conv.apply(p, fused)?.sigmoid();
        Ok(DensityMap { grid })
    }

    /// Modulates `S3` by the density map, seeds `n_query` queries at the
    /// highest-density cells and decodes scores and boxes.
    pub fn modulate_and_decode<'t>(
        &self,
        p: &Bound<'t, S>,
        enhanced: &Enhanced<'t, S>,
        dm: &DensityMap<'t, S>,
        pe: &PromptEmbedding<'t, S>,
        n_query: usize,
    ) -> Result<Decoded<'t, S>> {
        if n_query == 0 {
            return Err(DealError::Argument("n_query must be at least 1".into()));
        }
        let (h, w) = enhanced.grid();
        if dm.dims() != (h, w) {
            return Err(DealError::Shape(format!("density map {:?} does not match feature grid {:?}", dm.dims(), (h, w))));
        }
        let mut warnings = Vec::new();
        let cells = h * w;
        let n = if n_query > cells {
            let msg = format!("n_query {n_query} exceeds the {cells} density cells; clamped");
            log::warn!("{msg}");
            warnings.push(msg);
            cells
        } else {
            n_query
        };
        let l = &self.layout;
        let d = self.config.hidden;
        let tape = dm.grid.tape();
        let modulated = enhanced.s3.mul(dm.grid)?;
        // the density value rides along as an extra channel so layer norms
        // downstream cannot erase the modulation strength
        let tokens = concat(&[to_tokens(modulated)?, dm.grid.reshape([cells, 1])?], 1)?;

        let values = dm.grid.value();
        let mut order: Vec<usize> = (0..cells).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
        order.truncate(n);
        let centres = grid_centres(h, w);
        let refs: Vec<(f64, f64)> = order.iter().map(|&i| centres[i]).collect();

        let q_pos = l.pos_proj.apply(p, tape.constant_from([n, d], sine_embedding(&refs, d))?)?;
        let m_pos = l.pos_proj.apply(p, tape.constant_from([cells, d], sine_embedding(&centres, d))?)?;
        let memory = l.memory_proj.apply(p, tokens)?;
        let mut q = l.query_proj.apply(p, tokens.index_select(&order)?)?;
        for layer in &l.decoder {
            q = layer.apply(p, q, q_pos, memory, m_pos)?;
        }
        let q = l.decoder_norm.apply(p, q)?;
        let scores = l.score_head.apply(p, q)?.sigmoid();
        let delta = l.box_out.apply(p, l.box_hidden.apply(p, q)?.silu())?;
        let (w0, h0) = (1.0 / w as f64, 1.0 / h as f64);
        let base: Vec<S> = refs
            .iter()
            .flat_map(|&(x, y)| [logit(x), logit(y), logit(w0), logit(h0)])
            .map(S::lit)
            .collect();
        let boxes = delta.add(tape.constant_from([n, 4], base)?)?.sigmoid();

        let prompt_groups = affinity_groups(&q.value(), &pe.pe.value(), d, &pe.groups);
        Ok(Decoded {
            scores,
            boxes,
            reference_cells: order,
            prompt_groups,
            warnings,
        })
    }

    /// Prompt-dependent part of the forward pass. The density-derived query
    /// count is raised to `query_floor` when smaller (0 disables the floor).
    pub fn head<'t>(
        &self,
        p: &Bound<'t, S>,
        features: &Features<'t, S>,
        prompts: &[PointPrompt],
        query_floor: usize,
    ) -> Result<HeadOutput<'t, S>> {
        let embedding = self.embed_prompts(p, &features.pyramid, prompts, features.image_size)?;
        let density = self.activate_prompts(p, &embedding, &features.enhanced)?;
        let n_query = allocate_queries(density.total(), self.config.n_min, self.config.n_max).max(query_floor);
        let decoded = self.modulate_and_decode(p, &features.enhanced, &density, &embedding, n_query)?;
        Ok(HeadOutput {
            embedding,
            density,
            n_query,
            decoded,
        })
    }

    /// Full forward pass on a fresh tape with frozen weights.
    pub fn infer(&self, image: &Tensor<S>, prompts: &[PointPrompt]) -> Result<Inference> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let features = self.encode(&p, tape.constant(image))?;
        let out = self.head(&p, &features, prompts, 0)?;
        Ok(Inference {
            detections: out.decoded.detections(),
            n_query: out.n_query,
            density: out.density.values(),
            density_dims: out.density.dims(),
            warnings: out.decoded.warnings,
        })
    }
}

/// Category of the prompt row with the highest cosine similarity to each
/// query feature; ties go to the first row.
fn affinity_groups<S: Scalar>(queries: &[S], pe: &[S], d: usize, groups: &[CategoryId]) -> Vec<CategoryId> {
    let norm = |v: &[S]| v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt().max(1e-12);
    let rows: Vec<(&[S], f64)> = pe.chunks(d).map(|r| (r, norm(r))).collect();
    queries
        .chunks(d)
        .map(|q| {
            let qn = norm(q);
            let mut best = (f64::NEG_INFINITY, groups[0]);
            for ((r, rn), &g) in rows.iter().zip(groups) {
                let cos = q.iter().zip(r.iter()).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / (qn * rn);
                if cos > best.0 {
                    best = (cos, g);
                }
            }
            best.1
        })
        .collect()
}
