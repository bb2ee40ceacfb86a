//! Conditional VAE: encoder, reparameterized sampling, decoder, the
//! β-weighted conditional ELBO, and its analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};
use crate::nn::{dense_backward_cached, dense_forward, Activation, DenseLayer};

/// Architecture hyperparameters. `cond_dim = 0` gives the unconditional
/// VAE baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_hidden_enc: usize,
    pub n_hidden_dec: usize,
    pub latent_dim: usize,
    pub cond_dim: usize,
    pub beta: f64,
}

impl VaeConfig {
    pub fn with_dims(input_dim: usize, cond_dim: usize) -> Self {
        VaeConfig {
            input_dim,
            hidden_dim: 128,
            n_hidden_enc: 4,
            n_hidden_dec: 4,
            latent_dim: 8,
            cond_dim,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_hidden_enc", self.n_hidden_enc),
            ("n_hidden_dec", self.n_hidden_dec),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig::with_dims(640, 0)
    }
}

/// All trainable tensors. The canonical tensor order, used by the
/// optimizer, the gradient container, and the checkpoint alike, is:
/// encoder layers, mu head, logvar head, decoder layers, output layer,
/// each as (weights, bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: VaeConfig,
    pub encoder_layers: Vec<DenseLayer<T>>,
    pub mu_head: DenseLayer<T>,
    pub logvar_head: DenseLayer<T>,
    pub decoder_layers: Vec<DenseLayer<T>>,
    pub output_layer: DenseLayer<T>,
}

/// One posterior draw for a single input row.
#[derive(Debug, Clone)]
pub struct LatentSample<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub z: Vec<T>,
    pub eps: Vec<T>,
}

/// Loss and its two terms, each already averaged over the batch:
/// `loss = recon + beta * kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub loss: T,
    pub recon: T,
    pub kl: T,
}

/// Gradients in the canonical tensor order.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub tensors: Vec<(Matrix<T>, Vec<T>)>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.tensors.len() * 2);
        for (w, b) in &self.tensors {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, drawn in canonical tensor order
    /// from a single seeded stream. The condition columns of the first
    /// encoder and decoder layers start at zero: a fresh model is
    /// condition-agnostic, and taxonomy slots that never appear in a
    /// training set stay inert instead of injecting untrained noise when
    /// they first light up.
    pub fn init(config: &VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_in = config.input_dim + config.cond_dim;
        let dec_in = config.latent_dim + config.cond_dim;
        let h = config.hidden_dim;

        let zero_cond_columns = |layer: &mut DenseLayer<T>, lead: usize, cond: usize| {
            for r in 0..layer.weights.rows() {
                for v in &mut layer.weights.row_mut(r)[lead..lead + cond] {
                    *v = T::from_f64(0.0);
                }
            }
        };

        let mut encoder_layers = Vec::with_capacity(config.n_hidden_enc);
        for i in 0..config.n_hidden_enc {
            let in_dim = if i == 0 { enc_in } else { h };
            encoder_layers.push(DenseLayer::init(in_dim, h, Activation::ReLU, &mut rng));
        }
        let mu_head = DenseLayer::init(h, config.latent_dim, Activation::Linear, &mut rng);
        let logvar_head = DenseLayer::init(h, config.latent_dim, Activation::Linear, &mut rng);
        let mut decoder_layers = Vec::with_capacity(config.n_hidden_dec);
        for i in 0..config.n_hidden_dec {
            let in_dim = if i == 0 { dec_in } else { h };
            decoder_layers.push(DenseLayer::init(in_dim, h, Activation::ReLU, &mut rng));
        }
        let output_layer = DenseLayer::init(h, config.input_dim, Activation::Linear, &mut rng);

        if config.cond_dim > 0 {
            zero_cond_columns(&mut encoder_layers[0], config.input_dim, config.cond_dim);
            zero_cond_columns(&mut decoder_layers[0], config.latent_dim, config.cond_dim);
        }

        Ok(ModelParams {
            config: config.clone(),
            encoder_layers,
            mu_head,
            logvar_head,
            decoder_layers,
            output_layer,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            encoder_layers: self.encoder_layers.iter().map(DenseLayer::cast).collect(),
            mu_head: self.mu_head.cast(),
            logvar_head: self.logvar_head.cast(),
            decoder_layers: self.decoder_layers.iter().map(DenseLayer::cast).collect(),
            output_layer: self.output_layer.cast(),
        }
    }

    /// Layers in canonical order, with their checkpoint name stems.
    pub fn named_layers(&self) -> Vec<(String, &DenseLayer<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder_layers.iter().enumerate() {
            out.push((format!("enc.{i}"), l));
        }
        out.push(("mu".to_string(), &self.mu_head));
        out.push(("logvar".to_string(), &self.logvar_head));
        for (i, l) in self.decoder_layers.iter().enumerate() {
            out.push((format!("dec.{i}"), l));
        }
        out.push(("out".to_string(), &self.output_layer));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer<T>> {
        let mut out: Vec<&mut DenseLayer<T>> = Vec::new();
        out.extend(self.encoder_layers.iter_mut());
        out.push(&mut self.mu_head);
        out.push(&mut self.logvar_head);
        out.extend(self.decoder_layers.iter_mut());
        out.push(&mut self.output_layer);
        out
    }

    /// Flat parameter slices in canonical order, for the optimizer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in self.layers_mut() {
            let DenseLayer { weights, bias, .. } = l;
            out.push(weights.data_mut());
            out.push(bias.as_mut_slice());
        }
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (_, l) in self.named_layers() {
            out.push(l.weights.data().len());
            out.push(l.bias.len());
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// Copies of all tensors, flattened in canonical order. Inverse of
    /// [`ModelParams::import_flat`]; used by the gradient checker.
    pub fn export_flat(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for (_, l) in self.named_layers() {
            out.push(l.weights.data().to_vec());
            out.push(l.bias.clone());
        }
        out
    }

    pub fn import_flat(&mut self, flat: &[Vec<T>]) {
        let mut it = flat.iter();
        for l in self.layers_mut() {
            l.weights.data_mut().copy_from_slice(it.next().expect("tensor count"));
            l.bias.copy_from_slice(it.next().expect("tensor count"));
        }
        assert!(it.next().is_none(), "tensor count");
    }

    pub fn all_finite(&self) -> bool {
        self.named_layers()
            .iter()
            .all(|(_, l)| l.weights.all_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

fn check_cols<T: Scalar>(op: &'static str, m: &Matrix<T>, want: usize, what: &str) -> Result<()> {
    if m.cols() != want {
        return Err(Error::dim(
            op,
            format!("{what} has {} columns, config needs {want}", m.cols()),
        ));
    }
    Ok(())
}

/// Posterior parameters for a batch: `(mu, logvar)`, each `B x latent_dim`.
pub fn encode<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_cols("encode", x, params.config.input_dim, "x")?;
    check_cols("encode", c, params.config.cond_dim, "condition")?;
    let mut h = x.concat_cols(c)?;
    for l in &params.encoder_layers {
        h = dense_forward(l, &h)?;
    }
    let mu = dense_forward(&params.mu_head, &h)?;
    let logvar = dense_forward(&params.logvar_head, &h)?;
    Ok((mu, logvar))
}

/// `z = mu + exp(0.5 * logvar) ⊙ eps`, elementwise over matching shapes.
pub fn reparameterize<T: Scalar>(
    mu: &Matrix<T>,
    logvar: &Matrix<T>,
    eps: &Matrix<T>,
) -> Result<Matrix<T>> {
    if mu.rows() != logvar.rows()
        || mu.cols() != logvar.cols()
        || mu.rows() != eps.rows()
        || mu.cols() != eps.cols()
    {
        return Err(Error::dim("reparameterize", "mu/logvar/eps shapes differ"));
    }
    let mut z = mu.clone();
    let half = T::from_f64(0.5);
    for ((zv, &lv), &e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *zv += (half * lv).exp() * e;
    }
    Ok(z)
}

/// Reconstruction `x_hat`, `B x input_dim`.
pub fn decode<T: Scalar>(
    params: &ModelParams<T>,
    z: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_cols("decode", z, params.config.latent_dim, "z")?;
    check_cols("decode", c, params.config.cond_dim, "condition")?;
    let mut d = z.concat_cols(c)?;
    for l in &params.decoder_layers {
        d = dense_forward(l, &d)?;
    }
    dense_forward(&params.output_layer, &d)
}

/// Closed-form KL of `N(mu, exp(logvar))` against the standard normal:
/// `0.5 * Σ_d (mu_d² + exp(logvar_d) − 1 − logvar_d)`.
pub fn kl_gaussian<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    assert_eq!(mu.len(), logvar.len());
    let half = T::from_f64(0.5);
    let mut s = T::zero();
    for (&m, &lv) in mu.iter().zip(logvar) {
        s += m * m + lv.exp() - T::one() - lv;
    }
    half * s
}

fn kl_rows<T: Scalar>(mu: &Matrix<T>, logvar: &Matrix<T>) -> Vec<T> {
    (0..mu.rows())
        .map(|r| kl_gaussian(mu.row(r), logvar.row(r)))
        .collect()
}

fn squared_error_rows<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>) -> Vec<T> {
    (0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(xhat.row(r))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum()
        })
        .collect()
}

fn breakdown<T: Scalar>(recon_rows: &[T], kl_rows: &[T], beta: T) -> LossBreakdown<T> {
    let b = T::from_usize(recon_rows.len());
    let recon = recon_rows.iter().copied().sum::<T>() / b;
    let kl = kl_rows.iter().copied().sum::<T>() / b;
    LossBreakdown {
        loss: recon + beta * kl,
        recon,
        kl,
    }
}

/// Conditional ELBO loss for one batch with caller-supplied noise:
/// mean over rows of `Σ_d (x_d − x̂_d)² + beta · KL`.
pub fn elbo_loss<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    c: &Matrix<T>,
    eps: &Matrix<T>,
    beta: T,
) -> Result<LossBreakdown<T>> {
    let (mu, logvar) = encode(params, x, c)?;
    let z = reparameterize(&mu, &logvar, eps)?;
    let xhat = decode(params, &z, c)?;
    Ok(breakdown(
        &squared_error_rows(x, &xhat),
        &kl_rows(&mu, &logvar),
        beta,
    ))
}

/// [`elbo_loss`] plus analytic gradients for every tensor, in canonical
/// order. One forward pass with cached activations, one backward pass.
pub fn elbo_with_grads<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    c: &Matrix<T>,
    eps: &Matrix<T>,
    beta: T,
) -> Result<(LossBreakdown<T>, ModelGrads<T>)> {
    check_cols("elbo_with_grads", x, params.config.input_dim, "x")?;
    check_cols("elbo_with_grads", c, params.config.cond_dim, "condition")?;
    let b = x.rows();
    let latent = params.config.latent_dim;

    // Forward, keeping every layer input/output for the backward pass.
    let mut enc_in = Vec::with_capacity(params.encoder_layers.len());
    let mut h = x.concat_cols(c)?;
    for l in &params.encoder_layers {
        let out = dense_forward(l, &h)?;
        enc_in.push(h);
        h = out;
    }
    let h_top = h;
    let mu = dense_forward(&params.mu_head, &h_top)?;
    let logvar = dense_forward(&params.logvar_head, &h_top)?;
    let z = reparameterize(&mu, &logvar, eps)?;

    let mut dec_in = Vec::with_capacity(params.decoder_layers.len());
    let mut d = z.concat_cols(c)?;
    for l in &params.decoder_layers {
        let out = dense_forward(l, &d)?;
        dec_in.push(d);
        d = out;
    }
    let d_top = d;
    let xhat = dense_forward(&params.output_layer, &d_top)?;

    let loss = breakdown(&squared_error_rows(x, &xhat), &kl_rows(&mu, &logvar), beta);

    // Backward. d(loss)/d(xhat) = 2 (xhat − x) / B.
    let inv_b = T::one() / T::from_usize(b);
    let two = T::from_f64(2.0);
    let mut grad_xhat = xhat.clone();
    for (g, &xv) in grad_xhat.data_mut().iter_mut().zip(x.data()) {
        *g = two * (*g - xv) * inv_b;
    }

    let (out_w, out_b, mut grad_d) =
        dense_backward_cached(&params.output_layer, &d_top, &xhat, &grad_xhat)?;
    let mut dec_grads = Vec::with_capacity(params.decoder_layers.len());
    for (i, l) in params.decoder_layers.iter().enumerate().rev() {
        let out_ref = if i + 1 < params.decoder_layers.len() {
            &dec_in[i + 1]
        } else {
            &d_top
        };
        let (gw, gb, gin) = dense_backward_cached(l, &dec_in[i], out_ref, &grad_d)?;
        dec_grads.push((gw, gb));
        grad_d = gin;
    }
    dec_grads.reverse();

    // Split the gradient at [z | c]; condition columns carry no parameters.
    let grad_z = grad_d.left_cols(latent);

    // dmu = dz + (beta/B) mu;
    // dlogvar = dz ⊙ eps ⊙ 0.5 exp(0.5 logvar) + (beta/B) 0.5 (exp(logvar) − 1).
    let half = T::from_f64(0.5);
    let kl_scale = beta * inv_b;
    let mut grad_mu = grad_z.clone();
    for (g, &m) in grad_mu.data_mut().iter_mut().zip(mu.data()) {
        *g += kl_scale * m;
    }
    let mut grad_logvar = grad_z;
    for ((g, (&lv, &e)), ()) in grad_logvar
        .data_mut()
        .iter_mut()
        .zip(logvar.data().iter().zip(eps.data()))
        .zip(std::iter::repeat(()))
    {
        *g = *g * e * half * (half * lv).exp() + kl_scale * half * (lv.exp() - T::one());
    }

    let (mu_w, mu_b, grad_h_mu) =
        dense_backward_cached(&params.mu_head, &h_top, &mu, &grad_mu)?;
    let (lv_w, lv_b, grad_h_lv) =
        dense_backward_cached(&params.logvar_head, &h_top, &logvar, &grad_logvar)?;
    let mut grad_h = grad_h_mu;
    for (g, &a) in grad_h.data_mut().iter_mut().zip(grad_h_lv.data()) {
        *g += a;
    }

    let mut enc_grads = Vec::with_capacity(params.encoder_layers.len());
    for (i, l) in params.encoder_layers.iter().enumerate().rev() {
        let out_ref = if i + 1 < params.encoder_layers.len() {
            &enc_in[i + 1]
        } else {
            &h_top
        };
        let (gw, gb, gin) = dense_backward_cached(l, &enc_in[i], out_ref, &grad_h)?;
        enc_grads.push((gw, gb));
        grad_h = gin;
    }
    enc_grads.reverse();

    let mut tensors = enc_grads;
    tensors.push((mu_w, mu_b));
    tensors.push((lv_w, lv_b));
    tensors.extend(dec_grads);
    tensors.push((out_w, out_b));
    Ok((loss, ModelGrads { tensors }))
}

/// Deterministic anomaly score for one feature row: encode, take `z = mu`
/// (no sampling), decode, return `Σ_d (x_d − x̂_d)²`.
pub fn reconstruction_error<T: Scalar>(
    params: &ModelParams<T>,
    x_row: &[T],
    c_row: &[T],
) -> Result<T> {
    let x = Matrix::from_vec(1, x_row.len(), x_row.to_vec())?;
    let c = Matrix::from_vec(1, c_row.len(), c_row.to_vec())?;
    Ok(reconstruction_errors(params, &x, &c)?[0])
}

/// [`reconstruction_error`] for every row of a batch sharing one condition
/// layout (`c` is `B x cond_dim`).
pub fn reconstruction_errors<T: Scalar>(
    params: &ModelParams<T>,
    x: &Matrix<T>,
    c: &Matrix<T>,
) -> Result<Vec<T>> {
    let (mu, _logvar) = encode(params, x, c)?;
    let xhat = decode(params, &mu, c)?;
    Ok(squared_error_rows(x, &xhat))
}

/// Rows of one condition vector repeated `n` times.
pub fn repeat_condition<T: Scalar>(c_row: &[T], n: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(n, c_row.len());
    for r in 0..n {
        m.row_mut(r).copy_from_slice(c_row);
    }
    m
}

/// One posterior draw for a single row, keeping the noise used.
pub fn sample_latent<T: Scalar>(
    params: &ModelParams<T>,
    x_row: &[T],
    c_row: &[T],
    eps: &[T],
) -> Result<LatentSample<T>> {
    let x = Matrix::from_vec(1, x_row.len(), x_row.to_vec())?;
    let c = Matrix::from_vec(1, c_row.len(), c_row.to_vec())?;
    let (mu, logvar) = encode(params, &x, &c)?;
    let e = Matrix::from_vec(1, eps.len(), eps.to_vec())?;
    let z = reparameterize(&mu, &logvar, &e)?;
    Ok(LatentSample {
        mu: mu.row(0).to_vec(),
        logvar: logvar.row(0).to_vec(),
        z: z.row(0).to_vec(),
        eps: eps.to_vec(),
    })
}
