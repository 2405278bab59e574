use rand::Rng;

use super::config::{KlForm, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Linear, Mlp, ParamStore, PointEncoder, Tensor, Var};
use crate::BOX_DIMS;

/// Diagonal Gaussian over the latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Prior, recognition, context and prediction networks sharing one
/// parameter store.
#[derive(Debug, Clone)]
pub struct GlenetModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    context: Option<PointEncoder>,
    prior_backbone: PointEncoder,
    prior_head: Linear,
    recognition_backbone: PointEncoder,
    recognition_head: Mlp,
    prediction: Mlp,
}

/// Prediction outputs: seven offsets and one direction logit.
pub(crate) const PRED_OUT: usize = BOX_DIMS + 1;
/// Recognition box features: seven offsets and `cos r`.
pub(crate) const BOX_FEATURES: usize = BOX_DIMS + 1;

impl GlenetModel {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let in_dim = config.coordinates.dim();
        let latent = config.latent_dim;
        let context = (!config.context_channels.is_empty())
            .then(|| PointEncoder::new(&mut store, "context", in_dim, &config.context_channels, rng));
        let prior_backbone = PointEncoder::new(&mut store, "prior.backbone", in_dim, &config.backbone_channels, rng);
        let feat = prior_backbone.out_dim();
        // small initial weights keep the initial latent sigmas near 1
        let prior_head = Linear::new(&mut store, "prior.head", feat, 2 * latent, Init::Uniform(0.01), rng);
        let recognition_backbone =
            PointEncoder::new(&mut store, "recognition.backbone", in_dim, &config.backbone_channels, rng);
        let mut dims = vec![feat + BOX_FEATURES];
        dims.extend_from_slice(&config.recognition_hidden);
        dims.push(2 * latent);
        let recognition_head =
            Mlp::with_output_init(&mut store, "recognition.head", &dims, false, Init::Uniform(0.01), rng);
        let mut dims = vec![latent + config.context_dim()];
        dims.extend_from_slice(&config.prediction_hidden);
        dims.push(PRED_OUT);
        let prediction = Mlp::with_output_init(&mut store, "prediction", &dims, false, Init::Uniform(0.01), rng);
        Ok(Self {
            config,
            store,
            context,
            prior_backbone,
            prior_head,
            recognition_backbone,
            recognition_head,
            prediction,
        })
    }

    /// Rebuilds the architecture for `config` and takes every tensor from
    /// `params` by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, &mut crate::rng::seeded(0))?;
        if params.len() != model.store.len() {
            return Err(Error::structural(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                model.store.len()
            )));
        }
        let names: Vec<String> = model.store.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let id = params
                .id_of(name)
                .ok_or_else(|| Error::structural(format!("checkpoint lacks tensor {name}")))?;
            let src = params.get(id);
            let dst = &mut model.store.tensors_mut()[i];
            if src.shape() != dst.shape() {
                return Err(Error::structural(format!(
                    "tensor {name}: checkpoint shape {:?}, architecture {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(model)
    }

    pub fn points_per_cloud(&self) -> usize {
        self.config.num_points
    }

    fn split_latent(&self, g: &mut Graph, out: Var) -> Result<(Var, Var)> {
        let l = self.config.latent_dim;
        Ok((g.slice_cols(out, 0, l)?, g.slice_cols(out, l, 2 * l)?))
    }

    /// `(mu, log sigma)` of the prior for a `[clouds * N, in]` stack.
    pub fn prior(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Result<(Var, Var)> {
        let f = self.prior_backbone.forward(g, store, points, self.points_per_cloud())?;
        let out = self.prior_head.forward(g, store, f)?;
        self.split_latent(g, out)
    }

    pub fn context(&self, g: &mut Graph, store: &ParamStore, points: Var) -> Result<Option<Var>> {
        match &self.context {
            Some(enc) => Ok(Some(enc.forward(g, store, points, self.points_per_cloud())?)),
            None => Ok(None),
        }
    }

    /// `(mu, log sigma)` of the recognition posterior.
    pub fn recognition(&self, g: &mut Graph, store: &ParamStore, points: Var, box_features: Var) -> Result<(Var, Var)> {
        let f = self.recognition_backbone.forward(g, store, points, self.points_per_cloud())?;
        let x = g.concat_cols(&[f, box_features])?;
        let out = self.recognition_head.forward(g, store, x)?;
        self.split_latent(g, out)
    }

    /// `[rows, 8]`: seven offsets then the direction logit.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, z: Var, context: Option<Var>) -> Result<Var> {
        let x = match context {
            Some(c) => g.concat_cols(&[z, c])?,
            None => z,
        };
        self.prediction.forward(g, store, x)
    }
}

/// Latent regulariser between prior `(mu_p, log s_p)` and posterior
/// `(mu_q, log s_q)`, summed over latent dimensions and averaged over rows.
pub fn kl_graph(
    g: &mut Graph,
    prior: (Var, Var),
    posterior: (Var, Var),
    form: KlForm,
) -> Result<Var> {
    let (mu_p, ls_p) = prior;
    let (mu_q, ls_q) = posterior;
    let rows = g.value(mu_p).rows();
    let dims = g.value(mu_p).cols();
    // Printed/Exact: ln(s_q/s_p) + (s_p^2 + d^2) / (2 s_q^2); Elbo swaps the roles
    let ((ls_num, ls_den), shift) = match form {
        KlForm::Printed => ((ls_p, ls_q), 0.0),
        KlForm::Exact => ((ls_p, ls_q), -0.5),
        KlForm::Elbo => ((ls_q, ls_p), -0.5),
    };
    let log_ratio = g.sub(ls_den, ls_num)?;
    let var_num = {
        let t = g.scale(ls_num, 2.0)?;
        g.exp(t)?
    };
    let inv_var_den = {
        let t = g.scale(ls_den, -2.0)?;
        g.exp(t)?
    };
    let d = g.sub(mu_p, mu_q)?;
    let d2 = g.square(d)?;
    let num = g.add(var_num, d2)?;
    let quad = g.mul(num, inv_var_den)?;
    let quad = g.scale(quad, 0.5)?;
    let per = g.add(log_ratio, quad)?;
    let total = g.sum(per)?;
    let total = g.add_scalar(total, shift * (rows * dims) as f64)?;
    g.scale(total, 1.0 / rows as f64)
}

/// Scalar evaluation of the latent regulariser for one pair of Gaussians.
pub fn kl_divergence_value(prior: &LatentGaussian, posterior: &LatentGaussian, form: KlForm) -> Result<f64> {
    if prior.mu.len() != posterior.mu.len() || prior.sigma.len() != prior.mu.len() || posterior.sigma.len() != prior.mu.len() {
        return Err(Error::structural("latent dimensionalities differ"));
    }
    let mut total = 0.0;
    for k in 0..prior.mu.len() {
        let (sp, sq) = (prior.sigma[k], posterior.sigma[k]);
        if !(sp > 0.0 && sq > 0.0) {
            return Err(Error::domain("latent sigma must be positive"));
        }
        let d = prior.mu[k] - posterior.mu[k];
        total += match form {
            KlForm::Printed => (sq / sp).ln() + sp * sp / (2.0 * sq * sq) + d * d / (2.0 * sq * sq),
            KlForm::Exact => (sq / sp).ln() + sp * sp / (2.0 * sq * sq) + d * d / (2.0 * sq * sq) - 0.5,
            KlForm::Elbo => (sp / sq).ln() + sq * sq / (2.0 * sp * sp) + d * d / (2.0 * sp * sp) - 0.5,
        };
    }
    Ok(total)
}

/// Row `i` of `t` repeated `n` times.
pub(crate) fn repeat_row(t: &Tensor, i: usize, n: usize) -> Result<Tensor> {
    let row = t.row(i);
    let mut data = Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Tensor::matrix(n, row.len(), data)
}
