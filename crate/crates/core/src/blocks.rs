//! Transformer sub-blocks: a Pre-LN multi-head-attention block and a
//! Post-LN feed-forward block, with floating-point, transform-fused, and
//! fake-quantized forward passes.
//!
//! The block is where the migration story has to hold end to end: fusing a
//! transform into the LayerNorm parameters, the consuming weights, and (for
//! Post-LN) the residual branch must leave the floating-point output
//! unchanged for every input, not just calibration data.

use crate::error::{Error, Result};
use crate::quant::{calibrate_minmax, fake_quant, QuantParams, QuantSpec};
use crate::tensor::{add, layernorm, matmul, softmax_rows, Matrix};
use crate::transform::{
    fuse_into_layernorm, migrate_linear, residual_correction, LinearLayer, TransformVectors,
};

/// LayerNorm affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn unit(width: usize) -> Self {
        LayerNormParams {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            eps: 1e-5,
        }
    }
}

/// The computation hanging off the LayerNorm output.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockBody {
    /// Multi-head attention: q/k/v projections, per-head softmax attention,
    /// output projection.
    Mha {
        q: LinearLayer,
        k: LinearLayer,
        v: LinearLayer,
        out: LinearLayer,
        head_dim: usize,
        causal: bool,
    },
    /// Feed-forward: up projection, ReLU, down projection.
    Ffn { up: LinearLayer, down: LinearLayer },
    /// Bare chain of linear layers, no residual. Available for experiments
    /// with unusual wirings; not produced by the standard builders.
    LinearChain { layers: Vec<LinearLayer> },
}

/// One transformer sub-structure: LayerNorm, a body, and residual wiring.
///
/// Residual sources follow the two canonical wirings: a Pre-LN MHA block
/// adds the block input (the shortcut bypasses the LayerNorm), a Post-LN FFN
/// block adds the LayerNorm output itself. After fusion the Post-LN shortcut
/// carries a channel-wise multiply-add ([`ResidualFix`]) that reconstructs
/// the pre-transform activation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    pub ln: LayerNormParams,
    pub body: BlockBody,
    pub residual: bool,
    pub residual_fix: Option<ResidualFix>,
}

/// Channel-wise multiply-add applied on the shortcut branch of a fused
/// Post-LN block: `a ⊙ scale + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFix {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Block kinds, mirroring the two wirings plus the bare chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    PreLnMha,
    PostLnFfn,
    LinearChain,
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockKind::PreLnMha => write!(f, "pre_ln_mha"),
            BlockKind::PostLnFfn => write!(f, "post_ln_ffn"),
            BlockKind::LinearChain => write!(f, "linear_chain"),
        }
    }
}

impl BlockGraph {
    /// Pre-LN multi-head attention block.
    pub fn pre_ln_mha(
        ln: LayerNormParams,
        q: LinearLayer,
        k: LinearLayer,
        v: LinearLayer,
        out: LinearLayer,
        head_dim: usize,
        causal: bool,
    ) -> Result<Self> {
        let width = ln.gamma.len();
        if ln.beta.len() != width {
            return Err(Error::Dimension(format!(
                "layernorm gamma has {} entries, beta has {}",
                width,
                ln.beta.len()
            )));
        }
        for (name, layer) in [("q", &q), ("k", &k), ("v", &v)] {
            if layer.in_width() != width {
                return Err(Error::Dimension(format!(
                    "{name} projection expects {} inputs but block width is {width}",
                    layer.in_width()
                )));
            }
        }
        if q.out_width() != k.out_width() || q.out_width() != v.out_width() {
            return Err(Error::Dimension(format!(
                "q/k/v widths disagree: {}, {}, {}",
                q.out_width(),
                k.out_width(),
                v.out_width()
            )));
        }
        if head_dim == 0 || !q.out_width().is_multiple_of(head_dim) {
            return Err(Error::Dimension(format!(
                "projection width {} not divisible by head_dim {head_dim}",
                q.out_width()
            )));
        }
        if out.in_width() != v.out_width() || out.out_width() != width {
            return Err(Error::Dimension(format!(
                "output projection is {}x{}, expected {}x{}",
                out.out_width(),
                out.in_width(),
                width,
                v.out_width()
            )));
        }
        Ok(BlockGraph {
            ln,
            body: BlockBody::Mha {
                q,
                k,
                v,
                out,
                head_dim,
                causal,
            },
            residual: true,
            residual_fix: None,
        })
    }

    /// Post-LN feed-forward block.
    pub fn post_ln_ffn(ln: LayerNormParams, up: LinearLayer, down: LinearLayer) -> Result<Self> {
        let width = ln.gamma.len();
        if ln.beta.len() != width {
            return Err(Error::Dimension(format!(
                "layernorm gamma has {} entries, beta has {}",
                width,
                ln.beta.len()
            )));
        }
        if up.in_width() != width || down.in_width() != up.out_width() || down.out_width() != width
        {
            return Err(Error::Dimension(format!(
                "ffn wiring broken: width {width}, up {}x{}, down {}x{}",
                up.out_width(),
                up.in_width(),
                down.out_width(),
                down.in_width()
            )));
        }
        Ok(BlockGraph {
            ln,
            body: BlockBody::Ffn { up, down },
            residual: true,
            residual_fix: None,
        })
    }

    /// Bare LayerNorm -> linear chain, no residual.
    pub fn linear_chain(ln: LayerNormParams, layers: Vec<LinearLayer>) -> Result<Self> {
        let mut width = ln.gamma.len();
        if layers.is_empty() {
            return Err(Error::EmptyInput(
                "linear chain needs at least one layer".into(),
            ));
        }
        for layer in &layers {
            if layer.in_width() != width {
                return Err(Error::Dimension(format!(
                    "chain link expects {} inputs, previous width is {width}",
                    layer.in_width()
                )));
            }
            width = layer.out_width();
        }
        Ok(BlockGraph {
            ln,
            body: BlockBody::LinearChain { layers },
            residual: false,
            residual_fix: None,
        })
    }

    pub fn kind(&self) -> BlockKind {
        match self.body {
            BlockBody::Mha { .. } => BlockKind::PreLnMha,
            BlockBody::Ffn { .. } => BlockKind::PostLnFfn,
            BlockBody::LinearChain { .. } => BlockKind::LinearChain,
        }
    }

    /// Block input width.
    pub fn width(&self) -> usize {
        self.ln.gamma.len()
    }

    /// Number of fake-quantization nodes the quantized forward inserts
    /// (activation nodes plus weight tensors). Fusion never changes this.
    pub fn quant_node_count(&self) -> usize {
        match &self.body {
            // ln-out, probs, attn-out + 4 weights
            BlockBody::Mha { .. } => 3 + 4,
            // ln-out, relu-out + 2 weights
            BlockBody::Ffn { .. } => 2 + 2,
            BlockBody::LinearChain { layers } => layers.len() + layers.len(),
        }
    }

    /// Channel-wise multiply-add operations on the residual branch. Zero for
    /// an unfused block; fusing a Post-LN block adds exactly one.
    pub fn residual_op_count(&self) -> usize {
        usize::from(self.residual_fix.is_some())
    }
}

/// Per-head scaled dot-product attention over full-width q/k/v activations.
/// Heads are consecutive column slices of width `head_dim`; scores use the
/// 1/sqrt(head_dim) scale and optional causal masking.
pub fn multi_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    head_dim: usize,
    causal: bool,
) -> Result<Matrix> {
    if q.cols() != k.cols() || q.cols() != v.cols() || q.rows() != k.rows() || q.rows() != v.rows()
    {
        return Err(Error::Dimension(format!(
            "attention operands disagree: q {}x{}, k {}x{}, v {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if head_dim == 0 || !q.cols().is_multiple_of(head_dim) {
        return Err(Error::Dimension(format!(
            "width {} not divisible by head_dim {head_dim}",
            q.cols()
        )));
    }
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for h in 0..q.cols() / head_dim {
        let start = h * head_dim;
        let qh = q.columns(start, head_dim);
        let kh = k.columns(start, head_dim);
        let vh = v.columns(start, head_dim);
        let probs = softmax_rows(&matmul(&qh, &kh)?, scale, causal)?;
        let head_out = matmul(&probs, &vh.transpose())?;
        out.set_columns(start, &head_out);
    }
    Ok(out)
}

fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

fn shortcut_of(block: &BlockGraph, a: &Matrix) -> Result<Matrix> {
    match &block.residual_fix {
        Some(fix) => {
            let tv = TransformVectors {
                shift: fix.shift.clone(),
                scale: fix.scale.clone(),
                threshold: 1.0,
            };
            residual_correction(a, &tv)
        }
        None => Ok(a.clone()),
    }
}

/// Exact floating-point forward pass: LayerNorm, body, residual add per the
/// block's wiring. This is the reference output every equivalence and
/// quantization-error measurement compares against.
pub fn forward_fp(block: &BlockGraph, x: &Matrix) -> Result<Matrix> {
    if x.cols() != block.width() {
        return Err(Error::Dimension(format!(
            "block width is {} but input has {} columns",
            block.width(),
            x.cols()
        )));
    }
    let a = layernorm(x, &block.ln.gamma, &block.ln.beta, block.ln.eps)?;
    match &block.body {
        BlockBody::Mha {
            q,
            k,
            v,
            out,
            head_dim,
            causal,
        } => {
            let attn = multi_head_attention(
                &q.forward(&a)?,
                &k.forward(&a)?,
                &v.forward(&a)?,
                *head_dim,
                *causal,
            )?;
            let o = out.forward(&attn)?;
            if block.residual {
                add(&o, x)
            } else {
                Ok(o)
            }
        }
        BlockBody::Ffn { up, down } => {
            let d = down.forward(&relu(&up.forward(&a)?))?;
            if block.residual {
                add(&d, &shortcut_of(block, &a)?)
            } else {
                Ok(d)
            }
        }
        BlockBody::LinearChain { layers } => {
            let mut cur = a;
            for layer in layers {
                cur = layer.forward(&cur)?;
            }
            Ok(cur)
        }
    }
}

/// Fuses a transform into the block: LayerNorm parameters absorb the shift
/// and scale, every layer consuming the LayerNorm output is migrated, and a
/// Post-LN residual branch gains the channel-wise multiply-add that undoes
/// the transform. The fused block computes the same function as the
/// original.
pub fn fuse_block(block: &BlockGraph, tv: &TransformVectors) -> Result<BlockGraph> {
    if tv.len() != block.width() {
        return Err(Error::Dimension(format!(
            "transform is {} wide but block width is {}",
            tv.len(),
            block.width()
        )));
    }
    if block.residual_fix.is_some() {
        return Err(Error::Config(
            "block already carries a fused transform; fuse once per block".into(),
        ));
    }
    let (gamma, beta) = fuse_into_layernorm(&block.ln.gamma, &block.ln.beta, tv)?;
    let ln = LayerNormParams {
        gamma,
        beta,
        eps: block.ln.eps,
    };
    match &block.body {
        BlockBody::Mha {
            q,
            k,
            v,
            out,
            head_dim,
            causal,
        } => Ok(BlockGraph {
            ln,
            body: BlockBody::Mha {
                q: migrate_linear(q, tv)?,
                k: migrate_linear(k, tv)?,
                v: migrate_linear(v, tv)?,
                out: out.clone(),
                head_dim: *head_dim,
                causal: *causal,
            },
            residual: block.residual,
            residual_fix: None,
        }),
        BlockBody::Ffn { up, down } => Ok(BlockGraph {
            ln,
            body: BlockBody::Ffn {
                up: migrate_linear(up, tv)?,
                down: down.clone(),
            },
            residual: block.residual,
            residual_fix: block.residual.then(|| ResidualFix {
                scale: tv.scale.clone(),
                shift: tv.shift.clone(),
            }),
        }),
        BlockBody::LinearChain { layers } => {
            let mut migrated = Vec::with_capacity(layers.len());
            for (i, layer) in layers.iter().enumerate() {
                migrated.push(if i == 0 {
                    migrate_linear(layer, tv)?
                } else {
                    layer.clone()
                });
            }
            Ok(BlockGraph {
                ln,
                body: BlockBody::LinearChain { layers: migrated },
                residual: block.residual,
                residual_fix: None,
            })
        }
    }
}

/// A block with quantization specs attached and, once calibrated, the
/// quantization parameters for every node.
#[derive(Debug, Clone)]
pub struct QuantizedBlock {
    pub block: BlockGraph,
    pub act_spec: QuantSpec,
    pub wgt_spec: QuantSpec,
    params: Option<NodeParams>,
}

#[derive(Debug, Clone)]
struct NodeParams {
    activations: Vec<QuantParams>,
    weights: Vec<QuantParams>,
}

/// Names of the activation quantization nodes, in forward order.
pub fn activation_node_names(body: &BlockBody) -> Vec<String> {
    match body {
        BlockBody::Mha { .. } => vec!["ln_out".into(), "attn_probs".into(), "attn_out".into()],
        BlockBody::Ffn { .. } => vec!["ln_out".into(), "ffn_mid".into()],
        BlockBody::LinearChain { layers } => (0..layers.len())
            .map(|i| {
                if i == 0 {
                    "ln_out".into()
                } else {
                    format!("chain_mid_{i}")
                }
            })
            .collect(),
    }
}

/// Names of the weight tensors, matching [`body_weights`] order.
pub fn weight_node_names(body: &BlockBody) -> Vec<String> {
    match body {
        BlockBody::Mha { .. } => vec!["w_q".into(), "w_k".into(), "w_v".into(), "w_out".into()],
        BlockBody::Ffn { .. } => vec!["w_up".into(), "w_down".into()],
        BlockBody::LinearChain { layers } => {
            (0..layers.len()).map(|i| format!("w_chain_{i}")).collect()
        }
    }
}

/// The block's linear layers in quantization-node order.
pub fn body_weights(body: &BlockBody) -> Vec<&LinearLayer> {
    match body {
        BlockBody::Mha { q, k, v, out, .. } => vec![q, k, v, out],
        BlockBody::Ffn { up, down } => vec![up, down],
        BlockBody::LinearChain { layers } => layers.iter().collect(),
    }
}

/// Activation tensors at each quantization node, captured by a plain
/// floating-point forward. Attention probabilities of all heads are pooled
/// into a single tensor so they share one set of quantization parameters.
pub fn capture_activations(block: &BlockGraph, x: &Matrix) -> Result<Vec<Matrix>> {
    let a = layernorm(x, &block.ln.gamma, &block.ln.beta, block.ln.eps)?;
    match &block.body {
        BlockBody::Mha {
            q,
            k,
            v,
            head_dim,
            causal,
            ..
        } => {
            let qm = q.forward(&a)?;
            let km = k.forward(&a)?;
            let vm = v.forward(&a)?;
            let scale = 1.0 / (*head_dim as f64).sqrt();
            let heads = qm.cols() / head_dim;
            let mut probs_all = Matrix::zeros(x.rows(), heads * x.rows());
            let mut attn_out = Matrix::zeros(x.rows(), qm.cols());
            for h in 0..heads {
                let start = h * head_dim;
                let p = softmax_rows(
                    &matmul(&qm.columns(start, *head_dim), &km.columns(start, *head_dim))?,
                    scale,
                    *causal,
                )?;
                let ho = matmul(&p, &vm.columns(start, *head_dim).transpose())?;
                probs_all.set_columns(h * x.rows(), &p);
                attn_out.set_columns(start, &ho);
            }
            Ok(vec![a, probs_all, attn_out])
        }
        BlockBody::Ffn { up, .. } => {
            let mid = relu(&up.forward(&a)?);
            Ok(vec![a, mid])
        }
        BlockBody::LinearChain { layers } => {
            let mut acts = vec![a];
            for layer in &layers[..layers.len() - 1] {
                let next = layer.forward(acts.last().unwrap())?;
                acts.push(next);
            }
            Ok(acts)
        }
    }
}

impl QuantizedBlock {
    /// Attaches specs without calibrating; [`forward`](Self::forward) fails
    /// until [`calibrate`](Self::calibrate) runs.
    pub fn new(block: BlockGraph, act_spec: QuantSpec, wgt_spec: QuantSpec) -> Result<Self> {
        act_spec.validate()?;
        wgt_spec.validate()?;
        Ok(QuantizedBlock {
            block,
            act_spec,
            wgt_spec,
            params: None,
        })
    }

    /// Min-max calibrates every quantization node on `x_calib`.
    pub fn calibrate(&mut self, x_calib: &Matrix) -> Result<()> {
        let acts = capture_activations(&self.block, x_calib)?;
        let activations = acts
            .iter()
            .map(|t| calibrate_minmax(t, &self.act_spec))
            .collect::<Result<Vec<_>>>()?;
        let weights = body_weights(&self.block.body)
            .iter()
            .map(|l| calibrate_minmax(&l.weight, &self.wgt_spec))
            .collect::<Result<Vec<_>>>()?;
        self.params = Some(NodeParams {
            activations,
            weights,
        });
        Ok(())
    }

    pub fn is_calibrated(&self) -> bool {
        self.params.is_some()
    }

    /// Forward pass with fake quantization at every node: the LayerNorm
    /// output, the attention probabilities and attention output (or the FFN
    /// mid activation), and every weight tensor.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let params = self.params.as_ref().ok_or_else(|| {
            Error::Config("quantized forward requires calibration; call calibrate() first".into())
        })?;
        let block = &self.block;
        if x.cols() != block.width() {
            return Err(Error::Dimension(format!(
                "block width is {} but input has {} columns",
                block.width(),
                x.cols()
            )));
        }
        let qw: Vec<LinearLayer> = body_weights(&block.body)
            .iter()
            .zip(&params.weights)
            .map(|(l, p)| {
                Ok(LinearLayer {
                    weight: fake_quant(&l.weight, p, &self.wgt_spec)?,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let a = layernorm(x, &block.ln.gamma, &block.ln.beta, block.ln.eps)?;
        let aq = self.fq_act(&a, &params.activations[0])?;
        match &block.body {
            BlockBody::Mha {
                head_dim, causal, ..
            } => {
                let qm = qw[0].forward(&aq)?;
                let km = qw[1].forward(&aq)?;
                let vm = qw[2].forward(&aq)?;
                let scale = 1.0 / (*head_dim as f64).sqrt();
                let heads = qm.cols() / head_dim;
                let mut attn_out = Matrix::zeros(x.rows(), qm.cols());
                for h in 0..heads {
                    let start = h * head_dim;
                    let p = softmax_rows(
                        &matmul(&qm.columns(start, *head_dim), &km.columns(start, *head_dim))?,
                        scale,
                        *causal,
                    )?;
                    let pq = self.fq_act(&p, &params.activations[1])?;
                    let ho = matmul(&pq, &vm.columns(start, *head_dim).transpose())?;
                    attn_out.set_columns(start, &ho);
                }
                let attn_q = self.fq_act(&attn_out, &params.activations[2])?;
                let o = qw[3].forward(&attn_q)?;
                if block.residual {
                    add(&o, x)
                } else {
                    Ok(o)
                }
            }
            BlockBody::Ffn { .. } => {
                let mid = relu(&qw[0].forward(&aq)?);
                let mid_q = self.fq_act(&mid, &params.activations[1])?;
                let d = qw[1].forward(&mid_q)?;
                if block.residual {
                    add(&d, &shortcut_of(block, &a)?)
                } else {
                    Ok(d)
                }
            }
            BlockBody::LinearChain { .. } => {
                let mut cur = aq;
                for (i, layer) in qw.iter().enumerate() {
                    cur = layer.forward(&cur)?;
                    if i + 1 < qw.len() {
                        cur = self.fq_act(&cur, &params.activations[i + 1])?;
                    }
                }
                Ok(cur)
            }
        }
    }

    fn fq_act(&self, x: &Matrix, params: &QuantParams) -> Result<Matrix> {
        if self.act_spec.is_identity() {
            return Ok(x.clone());
        }
        // per-token (and pooled-probs) slicing is tied to the calibration
        // batch shape; when the eval tensor differs, recalibrate on it
        let expected = crate::quant::calibrate_slice_count(&self.act_spec, x)?;
        if expected != params.slices.len() {
            let p = calibrate_minmax(x, &self.act_spec)?;
            return fake_quant(x, &p, &self.act_spec);
        }
        fake_quant(x, params, &self.act_spec)
    }
}
