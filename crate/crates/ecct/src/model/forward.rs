//! Forward pass builders shared by training, evaluation and gradient
//! verification.

use super::{param_index, param_specs, EcctConfig, ModelError, ParameterSet, Variant};
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::codes::LinearCode;
use crate::gf2::BitMatrix;
use crate::mask::{self, AttentionMask};

/// Attention masks and the PCMs feeding each stream's syndrome, in stream
/// order. One entry for Conventional/SM, two (systematic first) for DM.
pub fn variant_masks(
    code: &LinearCode,
    variant: Variant,
) -> Result<(Vec<AttentionMask>, Vec<BitMatrix>), ModelError> {
    let (mask_sys, mask_conv, h_sys, h_conv) = mask::dm_mask_pair(code)?;
    Ok(match variant {
        Variant::Conventional => (vec![mask_conv], vec![h_conv]),
        Variant::Sm => (vec![mask_sys], vec![h_sys]),
        Variant::Dm => (vec![mask_sys, mask_conv], vec![h_sys, h_conv]),
    })
}

/// Additive pre-softmax tile for one mask: 0 where attention is allowed,
/// the sentinel where it is forbidden.
pub fn mask_tensor<T: Scalar>(mask: &AttentionMask) -> Tensor<T> {
    Tensor::from_vec(
        &[mask.size(), mask.size()],
        mask.additive(T::zero(), T::mask_sentinel()),
    )
}

/// Build the decoder forward pass on `g`. `params` follows the
/// [`param_specs`] order; each entry of `stream_inputs` is a `(B*seq)`
/// vector of input scalars and `masks` the matching `(seq, seq)` additive
/// tiles. Returns `(B, n)` logits.
pub fn forward_batch<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &EcctConfig,
    n: usize,
    seq: usize,
    params: &[Var],
    stream_inputs: &[Var],
    masks: &[Var],
) -> Result<Var, ModelError> {
    cfg.validate()?;
    let streams = cfg.variant.streams();
    if stream_inputs.len() != streams || masks.len() != streams {
        return Err(ModelError::VariantArityMismatch {
            expected: streams,
            got: stream_inputs.len().max(masks.len()),
        });
    }
    let specs = param_specs(cfg, n, seq);
    if params.len() != specs.len() {
        return Err(ModelError::ConfigMismatch(format!(
            "{} parameter vars for a config declaring {}",
            params.len(),
            specs.len()
        )));
    }
    let index = param_index(&specs);
    let p = |name: &str| -> Result<Var, ModelError> {
        index
            .get(name)
            .map(|&i| params[i])
            .ok_or_else(|| ModelError::ConfigMismatch(format!("missing parameter {name}")))
    };

    let batch = {
        let count = g.value(stream_inputs[0]).numel();
        if seq == 0 || count % seq != 0 {
            return Err(ModelError::ConfigMismatch(format!(
                "{count} input scalars do not tile sequence length {seq}"
            )));
        }
        count / seq
    };

    let d = cfg.embed_dim;
    let dh = d / cfg.heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());

    let mut stream_outputs = Vec::with_capacity(streams);
    for si in 0..streams {
        let group = if cfg.param_groups() == 1 { 0 } else { si };
        let pre = |rest: &str| format!("s{group}.{rest}");
        let mut x = g.embed_scale(stream_inputs[si], p(&pre("embed"))?)?;
        for l in 0..cfg.n_layers {
            let lp = |rest: &str| pre(&format!("l{l}.{rest}"));
            // Pre-norm masked multi-head self-attention with residual.
            let h1 = g.layer_norm(x, p(&lp("ln1.gain"))?, p(&lp("ln1.bias"))?)?;
            let q = g.matmul(h1, p(&lp("wq"))?)?;
            let k = g.matmul(h1, p(&lp("wk"))?)?;
            let v = g.matmul(h1, p(&lp("wv"))?)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for hi in 0..cfg.heads {
                let qh = g.slice_cols(q, hi * dh, dh)?;
                let kh = g.slice_cols(k, hi * dh, dh)?;
                let vh = g.slice_cols(v, hi * dh, dh)?;
                let scores = g.batched_matmul_nt(qh, kh, seq, seq)?;
                let scaled = g.scale(scores, scale)?;
                let probs = g.softmax_masked(scaled, masks[si])?;
                heads.push(g.batched_matmul_nn(probs, vh, seq, seq)?);
            }
            let merged = g.concat(&heads, 1)?;
            let attn = g.matmul(merged, p(&lp("wo"))?)?;
            x = g.add(x, attn)?;
            // Pre-norm FFN with residual.
            let h2 = g.layer_norm(x, p(&lp("ln2.gain"))?, p(&lp("ln2.bias"))?)?;
            let hidden = g.matmul(h2, p(&lp("ffn.w1"))?)?;
            let act = g.gelu(hidden)?;
            let ffn = g.matmul(act, p(&lp("ffn.w2"))?)?;
            x = g.add(x, ffn)?;
        }
        stream_outputs.push(x);
    }

    // Output head.
    let fused = match cfg.variant {
        Variant::Conventional | Variant::Sm => {
            g.layer_norm(stream_outputs[0], p("head.ln.gain")?, p("head.ln.bias")?)?
        }
        Variant::Dm => {
            let merged = if cfg.per_stream_output_norm {
                let a = g.layer_norm(stream_outputs[0], p("head.ln0.gain")?, p("head.ln0.bias")?)?;
                let b = g.layer_norm(stream_outputs[1], p("head.ln1.gain")?, p("head.ln1.bias")?)?;
                g.concat_blocks(a, b, seq, seq)?
            } else {
                let cat = g.concat_blocks(stream_outputs[0], stream_outputs[1], seq, seq)?;
                g.layer_norm(cat, p("head.ln.gain")?, p("head.ln.bias")?)?
            };
            g.seq_linear(p("head.fuse")?, merged, 2 * seq)?
        }
    };
    let projected = g.matmul(fused, p("head.proj")?)?; // (B*seq, 1)
    let per_sample = g.reshape(projected, &[batch, seq])?;
    Ok(g.matmul(per_sample, p("head.final")?)?) // (B, n)
}

/// Loss: binary cross-entropy between the multiplicative-noise bits and
/// `sigmoid(-logit)` (positive logit = bit 0), summed over bits, averaged
/// over the batch.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    targets: Var,
    batch: usize,
) -> Result<Var, ModelError> {
    let neg = g.scale(logits, -T::one())?;
    let total = g.bce_with_logits(neg, targets)?;
    Ok(g.scale(total, T::one() / T::of_f64(batch as f64))?)
}

/// Inference convenience: run a batch through a parameter snapshot on a
/// fresh gradient-free graph and return the `(B, n)` logits.
pub fn forward_logits<T: Scalar>(
    cfg: &EcctConfig,
    n: usize,
    seq: usize,
    params: &ParameterSet<T>,
    masks: &[Tensor<T>],
    stream_scalars: &[Vec<T>],
) -> Result<Tensor<T>, ModelError> {
    let mut g: Graph<T> = Graph::new();
    let param_vars: Vec<Var> =
        params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let mask_vars: Vec<Var> = masks.iter().map(|m| g.constant(m.clone())).collect();
    let input_vars: Vec<Var> = stream_scalars
        .iter()
        .map(|s| g.constant(Tensor::from_vec(&[s.len()], s.clone())))
        .collect();
    let logits = forward_batch(&mut g, cfg, n, seq, &param_vars, &input_vars, &mask_vars)?;
    Ok(g.value(logits).clone())
}
