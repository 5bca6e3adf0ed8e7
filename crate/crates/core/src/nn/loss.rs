use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Cross-entropy of `softmax(logits)` against a class label. The gradient with
/// respect to the logits is `softmax - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad> {
    if logits.len() < 2 {
        return Err(Error::Shape(format!(
            "softmax needs at least two classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(Error::InvalidLabel {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = (log_sum - logits[label]).max(0.0);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok(LossGrad { loss, grad })
}

/// `||prediction - target||^2` and its gradient with respect to the prediction.
pub fn squared_error(prediction: &[f64], target: &[f64]) -> Result<LossGrad> {
    if prediction.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target {}",
            prediction.len(),
            target.len()
        )));
    }
    let grad: Vec<f64> = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t))
        .collect();
    let loss = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(LossGrad { loss, grad })
}

/// Diagonal Gaussian parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::Shape(format!(
                "mean has {} entries, log-variance {}",
                mu.len(),
                log_var.len()
            )));
        }
        Ok(Self { mu, log_var })
    }

    /// Splits an encoder output `[mu..., log_var...]` in half.
    pub fn from_concat(values: &[f64]) -> Result<Self> {
        if values.len() % 2 != 0 {
            return Err(Error::Shape("encoder output must have even length".into()));
        }
        let (mu, lv) = values.split_at(values.len() / 2);
        Self::new(mu.to_vec(), lv.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlLoss {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_log_var: Vec<f64>,
}

/// `KL[N(mu, diag(exp(log_var))) || N(0, I)]` with gradients.
pub fn kl_to_standard_normal(g: &GaussianParams) -> KlLoss {
    let mut loss = 0.0;
    let mut grad_log_var = Vec::with_capacity(g.dim());
    for (&m, &lv) in g.mu.iter().zip(&g.log_var) {
        let var = lv.exp();
        loss += 0.5 * (m * m + var - 1.0 - lv);
        grad_log_var.push(0.5 * (var - 1.0));
    }
    KlLoss {
        loss,
        grad_mu: g.mu.clone(),
        grad_log_var,
    }
}

/// `z = mu + exp(log_var / 2) * alpha`.
pub fn reparameterize(g: &GaussianParams, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != g.dim() {
        return Err(Error::Shape(format!(
            "noise has {} entries, latent dimension is {}",
            alpha.len(),
            g.dim()
        )));
    }
    Ok(g.mu
        .iter()
        .zip(&g.log_var)
        .zip(alpha)
        .map(|((m, lv), a)| m + (0.5 * lv).exp() * a)
        .collect())
}

/// Pulls a gradient on `z` back to `(mu, log_var)` through [`reparameterize`].
pub fn reparameterize_backward(
    g: &GaussianParams,
    alpha: &[f64],
    grad_z: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let grad_mu = grad_z.to_vec();
    let grad_log_var = g
        .log_var
        .iter()
        .zip(alpha)
        .zip(grad_z)
        .map(|((lv, a), gz)| gz * 0.5 * (0.5 * lv).exp() * a)
        .collect();
    (grad_mu, grad_log_var)
}
