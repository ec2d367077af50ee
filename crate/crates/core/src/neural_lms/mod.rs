//! Feed-forward and recurrent next-atom models over per-location temporal
//! atom streams, and their training loops.

mod mlp;
mod nnlm;
mod rnn;
mod train;

pub use mlp::EmbedMlp;
pub use nnlm::{train_nnlm, Nnlm};
pub use rnn::{train_rnn, Rnn, INITIAL_HIDDEN};
pub use train::{TrainConfig, TrainCurves};
pub(crate) use train::{fit, parallel_batch_grad, shuffled_batches};

use crate::error::{check_index, Result};
use crate::quantizer::QuantizedVideo;

/// The temporal atom stream at every grid location of every video, video by
/// video in row-major location order.
pub fn streams(corpus: &[QuantizedVideo], vocab: usize) -> Result<Vec<Vec<u32>>> {
    let mut out = Vec::new();
    for v in corpus {
        if v.k > vocab {
            check_index("atom", v.k - 1, vocab)?;
        }
        for i in 0..v.hc {
            for j in 0..v.wc {
                out.push(v.stream(i, j));
            }
        }
    }
    Ok(out)
}
