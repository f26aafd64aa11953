//! Transformer building blocks composed from tape primitives.
//!
//! Everything here is differentiable end to end because it only calls tape
//! ops; the gradient-check suite drives these with `f64`.

use crate::error::Result;
use crate::tensor::{Element, Tape, Tensor, ValueId};

/// Additive causal mask: 0 where key <= query position, large negative
/// otherwise. Applied before softmax.
pub fn causal_mask<E: Element>(len: usize) -> Tensor<E> {
    let neg = E::from_f64(-1e9);
    let mut data = vec![E::ZERO; len * len];
    for i in 0..len {
        for j in (i + 1)..len {
            data[i * len + j] = neg;
        }
    }
    Tensor::new(vec![len, len], data).expect("mask shape")
}

/// Scaled dot-product attention over pre-projected q/k/v.
///
/// `q`: [S_q, d], `k`/`v`: [S_kv, d]; `d` splits into `n_heads` heads and the
/// logits are scaled by 1/sqrt(head_dim). `mask`, when present, is an
/// additive [S_q, S_kv] tensor (broadcast over heads). Output is [S_q, d].
pub fn attention<E: Element>(
    tape: &mut Tape<E>,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    n_heads: usize,
    mask: Option<ValueId>,
) -> Result<ValueId> {
    let (s_q, d) = (tape.shape(q)[0], tape.shape(q)[1]);
    let s_kv = tape.shape(k)[0];
    let hd = d / n_heads;
    debug_assert_eq!(hd * n_heads, d, "d_model must divide by n_heads");

    // [S, d] -> [H, S, hd]
    let split = |tape: &mut Tape<E>, x: ValueId, s: usize| -> Result<ValueId> {
        let r = tape.reshape(x, &[s, n_heads, hd])?;
        tape.transpose(r, &[1, 0, 2])
    };
    let qh = split(tape, q, s_q)?;
    let kh = split(tape, k, s_kv)?;
    let vh = split(tape, v, s_kv)?;

    let kt = tape.transpose(kh, &[0, 2, 1])?; // [H, hd, S_kv]
    let logits = tape.matmul(qh, kt)?; // [H, S_q, S_kv]
    let scaled = tape.scale(logits, E::from_f64(1.0 / (hd as f64).sqrt()))?;
    let masked = match mask {
        Some(m) => tape.add(scaled, m)?,
        None => scaled,
    };
    let probs = tape.softmax(masked, 2)?;
    let ctx = tape.matmul(probs, vh)?; // [H, S_q, hd]
    let back = tape.transpose(ctx, &[1, 0, 2])?; // [S_q, H, hd]
    tape.reshape(back, &[s_q, d])
}

/// Full attention sublayer: project x (or a separate kv source) with
/// q/k/v/o weight ids and run [`attention`].
#[allow(clippy::too_many_arguments)]
pub fn attention_sublayer<E: Element>(
    tape: &mut Tape<E>,
    x: ValueId,
    kv_source: ValueId,
    wq: ValueId,
    wk: ValueId,
    wv: ValueId,
    wo: ValueId,
    n_heads: usize,
    mask: Option<ValueId>,
) -> Result<ValueId> {
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(kv_source, wk)?;
    let v = tape.matmul(kv_source, wv)?;
    let ctx = attention(tape, q, k, v, n_heads, mask)?;
    tape.matmul(ctx, wo)
}

/// Two-layer MLP: linear -> gelu -> linear, with optional biases.
pub fn mlp2<E: Element>(
    tape: &mut Tape<E>,
    x: ValueId,
    w1: ValueId,
    b1: Option<ValueId>,
    w2: ValueId,
    b2: Option<ValueId>,
) -> Result<ValueId> {
    let mut h = tape.matmul(x, w1)?;
    if let Some(b) = b1 {
        h = tape.add(h, b)?;
    }
    let h = tape.gelu(h)?;
    let mut out = tape.matmul(h, w2)?;
    if let Some(b) = b2 {
        out = tape.add(out, b)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_attention_returns_value_row() {
        // Softmax over one logit is 1, so output == v regardless of q.
        let mut tape = Tape::<f64>::new();
        let q = tape.leaf(
            Tensor::new(vec![2, 4], vec![5.0, -3.0, 0.1, 2.0, 0.0, 0.0, 1.0, -1.0]).unwrap(),
            false,
        );
        let k = tape.leaf(Tensor::new(vec![1, 4], vec![0.3; 4]).unwrap(), false);
        let v = tape.leaf(
            Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let out = attention(&mut tape, q, k, v, 2, None).unwrap();
        let data = tape.value(out).data().to_vec();
        assert_eq!(&data[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&data[4..], &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn causal_mask_blocks_future() {
        // With a causal mask, changing a later token must not affect an
        // earlier position's output.
        let d = 4;
        let run = |future_val: f64| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let mut data = vec![0.1, -0.2, 0.3, 0.4, 0.0, 0.5, -0.5, 0.2];
            data.extend_from_slice(&[future_val; 4]);
            let x = tape.leaf(Tensor::new(vec![3, d], data).unwrap(), false);
            let m = causal_mask::<f64>(3);
            let mid = tape.leaf(m, false);
            let out = attention(&mut tape, x, x, x, 1, Some(mid)).unwrap();
            tape.value(out).data()[..2 * d].to_vec()
        };
        assert_eq!(run(1.0), run(-9.0));
    }
}
