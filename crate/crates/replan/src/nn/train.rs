//! Transition-model training: RMSProp over the gamma-weighted squared
//! reconstruction error with an L2 weight penalty and inverted dropout.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use super::network::{Network, Standardization};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::NnError;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden_widths: Vec<usize>,
    pub lambda: f64,
    pub dropout_p: f64,
    pub epochs: usize,
    pub rate: f64,
    /// Effective rate at epoch e is rate / (1 + rate_decay * e).
    pub rate_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_widths: vec![32],
            lambda: 0.0,
            dropout_p: 0.1,
            epochs: 200,
            rate: 1e-3,
            rate_decay: 0.0,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: TrainHistory,
    /// Unweighted mean squared error on the held-out 20% test split.
    pub test_mse: f64,
    pub best_val_loss: f64,
}

const RMSPROP_DECAY: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;

/// 80/20 train/test split, 20%-of-train validation split; returns the
/// best-validation weights seen over all epochs.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, NnError> {
    if dataset.len() < 100 {
        return Err(NnError::DatasetTooSmall { got: dataset.len(), need: 100 });
    }
    dataset.validate()?;
    let gamma = dataset.compute_loss_weights()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_test = dataset.len() / 5;
    let (train80, test_idx) = order.split_at(dataset.len() - n_test);
    let n_val = train80.len() / 5;
    let (train_idx, val_idx) = train80.split_at(train80.len() - n_val);

    let in_dim = dataset.state_dim + dataset.action_dim;
    let (mu, sigma) = standardization_stats(dataset, train_idx, in_dim);

    let mut net = Network::random(
        dataset.state_dim,
        dataset.action_dim,
        &config.hidden_widths,
        config.dropout_p,
        config.seed ^ 0x9e37_79b9_7f4a_7c15,
    );
    net.standardization = Standardization::Stats { mu: mu.clone(), sigma: sigma.clone() };
    net.loss_weights = gamma.clone();

    // working copies: transposed weights (in x out) and bias rows
    let mut wts: Vec<Tensor> = net.layers.iter().map(|l| l.weights.transpose()).collect();
    let mut bs: Vec<Tensor> = net.layers.iter().map(|l| Tensor::row_vector(l.bias.clone())).collect();
    let mut wt_cache: Vec<Tensor> = wts.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let mut b_cache: Vec<Tensor> = bs.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();

    let std_inputs = |idx: &[usize]| -> Tensor {
        let mut t = Tensor::zeros(idx.len(), in_dim);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &v) in dataset.inputs(i).iter().enumerate() {
                t.data[r * in_dim + c] = (v - mu[c]) / sigma[c];
            }
        }
        t
    };
    let raw_targets = |idx: &[usize]| -> Tensor {
        let mut t = Tensor::zeros(idx.len(), dataset.state_dim);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &v) in dataset.targets(i).iter().enumerate() {
                t.data[r * dataset.state_dim + c] = v;
            }
        }
        t
    };

    let val_x = std_inputs(val_idx);
    let val_y = raw_targets(val_idx);

    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut best_weights: Option<(Vec<Tensor>, Vec<Tensor>)> = None;

    let mut shuffled: Vec<usize> = train_idx.to_vec();
    for epoch in 0..config.epochs {
        shuffled.shuffle(&mut rng);
        let rate = config.rate / (1.0 + config.rate_decay * epoch as f64);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in shuffled.chunks(config.batch_size.max(1)) {
            let x = std_inputs(chunk);
            let y = raw_targets(chunk);
            let loss = train_batch(
                &mut wts,
                &mut bs,
                &mut wt_cache,
                &mut b_cache,
                x,
                y,
                &gamma,
                config,
                rate,
                &mut rng,
            )?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            epoch_loss += loss;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches.max(1) as f64);

        let val_loss = weighted_mse(&forward_batch(&wts, &bs, &val_x, net.state_dim), &val_y, &gamma);
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch });
        }
        history.val_loss.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best_weights = Some((wts.clone(), bs.clone()));
        }
    }

    if let Some((bw, bb)) = best_weights {
        wts = bw;
        bs = bb;
    }
    for (k, layer) in net.layers.iter_mut().enumerate() {
        layer.weights = wts[k].transpose();
        layer.bias = bs[k].data.clone();
    }

    let test_x = std_inputs(test_idx);
    let test_y = raw_targets(test_idx);
    let pred = forward_batch(&wts, &bs, &test_x, net.state_dim);
    let test_mse = unweighted_mse(&pred, &test_y);

    Ok(TrainOutcome { network: net, history, test_mse, best_val_loss: best_val })
}

/// Unweighted MSE of a trained network on arbitrary rows of a dataset.
pub fn evaluate_mse(net: &Network, dataset: &Dataset) -> Result<f64, NnError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..dataset.len() {
        let input = dataset.inputs(r);
        let (s, a) = input.split_at(dataset.state_dim);
        let pred = net.predict(s, a)?;
        for (p, t) in pred.iter().zip(dataset.targets(r)) {
            total += (p - t) * (p - t);
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    wts: &mut [Tensor],
    bs: &mut [Tensor],
    wt_cache: &mut [Tensor],
    b_cache: &mut [Tensor],
    x: Tensor,
    y: Tensor,
    gamma: &[f64],
    config: &TrainConfig,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, NnError> {
    let batch = x.rows;
    let n_layers = wts.len();
    let mut tape = Tape::new();
    let x_node = tape.constant(x);
    let y_node = tape.constant(y);
    let mut wt_nodes = Vec::with_capacity(n_layers);
    let mut b_nodes = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        wt_nodes.push(tape.leaf(wts[k].clone()));
        b_nodes.push(tape.leaf(bs[k].clone()));
    }
    let mut acts = x_node;
    for k in 0..n_layers {
        let lin = tape.matmul(acts, wt_nodes[k]);
        let pre = tape.add(lin, b_nodes[k]);
        if k + 1 == n_layers {
            acts = pre;
            break;
        }
        let mut z = tape.relu(pre);
        if config.dropout_p > 0.0 {
            let keep = 1.0 - config.dropout_p;
            let width = tape.value(z).cols;
            let mask_data: Vec<f64> = (0..batch * width)
                .map(|_| if rng.gen::<f64>() < config.dropout_p { 0.0 } else { 1.0 / keep })
                .collect();
            let mask = tape.constant(Tensor::from_vec(batch, width, mask_data));
            z = tape.mul_elem(z, mask);
        }
        acts = tape.concat_cols(&[acts, z]);
    }
    let residual = tape.sub(acts, y_node);
    let gamma_node = tape.constant(Tensor::broadcast_rows(gamma, batch));
    let weighted = tape.mul_elem(residual, gamma_node);
    let sq = tape.square(weighted);
    let mut loss = tape.sum(sq);
    loss = tape.scale(loss, 1.0 / batch as f64);
    if config.lambda > 0.0 {
        for &w in &wt_nodes {
            let sqw = tape.square(w);
            let s = tape.sum(sqw);
            let reg = tape.scale(s, config.lambda);
            loss = tape.add(loss, reg);
        }
    }
    let loss_value = tape.value(loss).data[0];

    let mut wrt: Vec<_> = wt_nodes.clone();
    wrt.extend_from_slice(&b_nodes);
    let grads = tape.grad(loss, &wrt)?;
    for k in 0..n_layers {
        rmsprop_update(&mut wts[k], &grads[k], &mut wt_cache[k], rate);
        rmsprop_update(&mut bs[k], &grads[n_layers + k], &mut b_cache[k], rate);
    }
    Ok(loss_value)
}

fn rmsprop_update(param: &mut Tensor, grad: &Tensor, cache: &mut Tensor, rate: f64) {
    for i in 0..param.data.len() {
        let g = grad.data[i];
        cache.data[i] = RMSPROP_DECAY * cache.data[i] + (1.0 - RMSPROP_DECAY) * g * g;
        param.data[i] -= rate * g / (cache.data[i].sqrt() + RMSPROP_EPS);
    }
}

/// Eval-mode batched forward over working (transposed) weights.
fn forward_batch(wts: &[Tensor], bs: &[Tensor], x: &Tensor, out_dim: usize) -> Tensor {
    let mut acts = x.clone();
    for (k, (wt, b)) in wts.iter().zip(bs.iter()).enumerate() {
        let last = k + 1 == wts.len();
        let mut z = acts.matmul(wt);
        for r in 0..z.rows {
            for c in 0..z.cols {
                z.data[r * z.cols + c] += b.data[c];
            }
        }
        if last {
            debug_assert_eq!(z.cols, out_dim);
            return z;
        }
        let z = z.map(|v| v.max(0.0));
        let mut next = Tensor::zeros(acts.rows, acts.cols + z.cols);
        for r in 0..acts.rows {
            next.data[r * next.cols..r * next.cols + acts.cols]
                .copy_from_slice(acts.row(r));
            next.data[r * next.cols + acts.cols..(r + 1) * next.cols].copy_from_slice(z.row(r));
        }
        acts = next;
    }
    unreachable!()
}

fn weighted_mse(pred: &Tensor, target: &Tensor, gamma: &[f64]) -> f64 {
    let mut total = 0.0;
    for r in 0..pred.rows {
        for c in 0..pred.cols {
            let d = gamma[c] * (pred.get(r, c) - target.get(r, c));
            total += d * d;
        }
    }
    total / pred.rows.max(1) as f64
}

fn unweighted_mse(pred: &Tensor, target: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        total += d * d;
    }
    total / pred.data.len().max(1) as f64
}

fn standardization_stats(dataset: &Dataset, idx: &[usize], in_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; in_dim];
    for &i in idx {
        for (c, &v) in dataset.inputs(i).iter().enumerate() {
            mu[c] += v;
        }
    }
    for m in mu.iter_mut() {
        *m /= idx.len().max(1) as f64;
    }
    let mut var = vec![0.0; in_dim];
    for &i in idx {
        for (c, &v) in dataset.inputs(i).iter().enumerate() {
            var[c] += (v - mu[c]) * (v - mu[c]);
        }
    }
    let sigma: Vec<f64> = var
        .iter()
        .map(|&v| (v / idx.len().max(1) as f64).sqrt().max(1e-9))
        .collect();
    (mu, sigma)
}
