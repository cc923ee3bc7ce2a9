//! The assembled forecaster.

use crate::autodiff::{Graph, Var};
use crate::basis::{BasisGenerator, BasisTensor};
use crate::coef::{CoefNet, View};
use crate::config::ModelConfig;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::forecast::ForecastHead;
use crate::losses::{infonce_loss, mse_loss, smoothness_loss, total_loss, LossComponents};
use crate::nn::{Bound, Init, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct BasisFormer {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub basis: BasisGenerator,
    pub coef: CoefNet,
    pub head: ForecastHead,
}

/// Graph nodes of one training forward pass.
pub struct TrainForward<'g> {
    /// `[B, C, O]`, normalized.
    pub prediction: Var<'g>,
    pub pred: Var<'g>,
    pub align: Var<'g>,
    pub smooth: Var<'g>,
    pub total: Var<'g>,
}

impl TrainForward<'_> {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            pred: self.pred.item(),
            align: self.align.item(),
            smooth: self.smooth.item(),
            total: self.total.item(),
        }
    }
}

/// Final-layer attention maps for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    /// Series attending over basis, `[H, C, N]`.
    pub series_to_basis: Tensor,
    /// Basis attending over series, `[H, N, C]`.
    pub basis_to_series: Tensor,
}

impl BasisFormer {
    /// Builds a freshly initialized model; every parameter is drawn from
    /// `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let basis = BasisGenerator::new(config, &mut store, &mut init)?;
        let coef = CoefNet::new(config, &mut store, &mut init);
        let head = ForecastHead::new(config, &mut store, &mut init);
        Ok(Self {
            config: config.clone(),
            store,
            basis,
            coef,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn check_batch(&self, x: &Tensor, taus: &[f64]) -> Result<()> {
        let want = [taus.len(), self.config.channels, self.config.input_len];
        if x.shape() != want {
            return Err(Error::Input(format!(
                "history must be [B, C, I] = {want:?}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Basis `[B, N, I+O]`, coefficients `[B, C, N, H]` and prediction
    /// `[B, C, O]` from the history alone.
    fn predict_graph<'g>(&self, g: &'g Graph, x: Var<'g>, taus: &[f64], p: &Bound<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>, crate::coef::CoefOutput<'g>)> {
        let (i, o) = (self.config.input_len, self.config.output_len);
        let z = self.basis.forward(g, taus, p)?;
        let z_x = z.slice_last(0, i)?;
        let z_y = z.slice_last(i, o)?;
        let cx = self.coef.forward(x, z_x, View::History, p)?;
        let prediction = self.head.forward(cx.coef, z_y, p)?;
        Ok((z, z_y, prediction, cx))
    }

    /// Both views, the three objectives and their weighted sum.
    pub fn forward_train<'g>(&self, g: &'g Graph, p: &Bound<'g>, batch: &Batch) -> Result<TrainForward<'g>> {
        self.check_batch(&batch.x, &batch.taus)?;
        let x = g.constant(batch.x.clone());
        let y = g.constant(batch.y.clone());
        let (z, z_y, prediction, cx) = self.predict_graph(g, x, &batch.taus, p)?;
        let cy = self.coef.forward(y, z_y, View::Future, p)?;
        let pred = mse_loss(prediction, y)?;
        let align = infonce_loss(cx.coef, cy.coef, self.config.temperature)?;
        let smooth = smoothness_loss(z)?;
        let total = total_loss(pred, align, smooth, &self.config.loss_weights())?;
        Ok(TrainForward {
            prediction,
            pred,
            align,
            smooth,
            total,
        })
    }

    /// `x: [B, C, I]` normalized history → `[B, C, O]` normalized forecast.
    pub fn forecast_batch(&self, x: &Tensor, taus: &[f64]) -> Result<Tensor> {
        self.check_batch(x, taus)?;
        let g = Graph::new();
        let p = self.store.bind_frozen(&g);
        let (_, _, prediction, _) = self.predict_graph(&g, g.constant(x.clone()), taus, &p)?;
        Ok(prediction.value())
    }

    /// Single window: `x: [C, I]` → `[C, O]`.
    pub fn forecast(&self, x: &Tensor, tau: f64) -> Result<Tensor> {
        let (c, i, o) = (self.config.channels, self.config.input_len, self.config.output_len);
        if x.shape() != [c, i] {
            return Err(Error::Input(format!("history must be [C, I] = [{c}, {i}], got {:?}", x.shape())));
        }
        self.forecast_batch(&x.clone().reshape([1, c, i])?, &[tau])?.reshape([c, o])
    }

    pub fn basis_at(&self, tau: f64) -> Result<BasisTensor> {
        let g = Graph::new();
        let p = self.store.bind_frozen(&g);
        let z = self.basis.forward(&g, &[tau], &p)?.value();
        let s = z.shape().to_vec();
        BasisTensor::new(z.reshape([s[1], s[2]])?, self.config.input_len)
    }

    pub fn attention(&self, x: &Tensor, tau: f64) -> Result<AttentionMaps> {
        let (c, i) = (self.config.channels, self.config.input_len);
        let g = Graph::new();
        let p = self.store.bind_frozen(&g);
        let xv = g.constant(x.clone().reshape([1, c, i])?);
        let (_, _, _, cx) = self.predict_graph(&g, xv, &[tau], &p)?;
        let drop_batch = |t: Tensor| {
            let s = t.shape()[1..].to_vec();
            t.reshape(s)
        };
        Ok(AttentionMaps {
            series_to_basis: drop_batch(cx.series_attention.value())?,
            basis_to_series: drop_batch(cx.basis_attention.value())?,
        })
    }
}
