//! Running an embedding + LSTM over a token sequence, with backprop.

use super::layers::{Embedding, LstmCache, LstmCell};

/// Final `(h, c)` after feeding `tokens` from a zero state, plus one cache per step.
pub fn encode_tokens(embed: &Embedding, cell: &LstmCell, tokens: &[u32]) -> (Vec<f64>, Vec<f64>, Vec<LstmCache>) {
    let hd = cell.hidden_dim();
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    let mut caches = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let (h2, c2, cache) = cell.forward(embed.lookup(t), &h, &c);
        h = h2;
        c = c2;
        caches.push(cache);
    }
    (h, c, caches)
}

/// Inference-only version of [`encode_tokens`].
pub fn final_state(embed: &Embedding, cell: &LstmCell, tokens: &[u32]) -> Vec<f64> {
    let hd = cell.hidden_dim();
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    for &t in tokens {
        (h, c) = cell.step(embed.lookup(t), &h, &c);
    }
    h
}

/// Backpropagates `dh`, `dc` on the final state through every step,
/// accumulating gradients into `cell` and `embed`.
pub fn backprop_tokens(embed: &mut Embedding, cell: &mut LstmCell, tokens: &[u32], caches: &[LstmCache], dh: &[f64], dc: &[f64]) {
    let (mut dh, mut dc) = (dh.to_vec(), dc.to_vec());
    for (t, cache) in tokens.iter().zip(caches).rev() {
        let (dx, dh_prev, dc_prev) = cell.backward(cache, &dh, &dc);
        embed.backward(*t, &dx);
        dh = dh_prev;
        dc = dc_prev;
    }
}
