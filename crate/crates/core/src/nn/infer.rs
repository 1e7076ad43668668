use rayon::prelude::*;

use super::model::{LayerSpec, ModelPackage};
use super::tensor::{
    activation, batch_norm_inference, concat_skip, conv2d, maxpool2, upsample2, Activation, FeatureTensor,
};
use super::{ModelError, Variant};
use crate::linalg::{ChannelTensor, ComplexMatrix, C64};

/// Builds the network input for one subcarrier.
///
/// With `h_hat` the layout is `[Re H̃, Im H̃, Re Ĥ, Im Ĥ, log10(1+K̃)·1, σ²·1]`;
/// without it `[Re H̃, Im H̃, σ²·1, 0]`. Every channel is multiplied by `s_in`.
pub fn assemble_input(
    h_tilde: &ComplexMatrix,
    h_hat: Option<&ComplexMatrix>,
    k_factor: f64,
    noise_var: f64,
    input_scale: f64,
) -> Result<FeatureTensor, ModelError> {
    if !(k_factor >= 0.0) || !(noise_var >= 0.0) || !(input_scale > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "need K >= 0, noise variance >= 0, s_in > 0; got {k_factor}, {noise_var}, {input_scale}"
        )));
    }
    let (rows, cols) = h_tilde.shape();
    let hw = rows * cols;
    let s = input_scale;
    // row-major planes: element (r, c) sits at r * cols + c
    let re_im = |m: &ComplexMatrix, out: &mut Vec<f64>| {
        let mut im = Vec::with_capacity(hw);
        for r in 0..rows {
            for c in 0..cols {
                out.push(s * m[(r, c)].re);
                im.push(s * m[(r, c)].im);
            }
        }
        out.extend(im);
    };
    let mut data = Vec::with_capacity(6 * hw);
    re_im(h_tilde, &mut data);
    let channels = match h_hat {
        Some(h_hat) => {
            if h_hat.shape() != (rows, cols) {
                return Err(ModelError::InputShape {
                    expected: format!("{rows}x{cols}"),
                    actual: format!("{}x{} out-of-band estimate", h_hat.nrows(), h_hat.ncols()),
                });
            }
            re_im(h_hat, &mut data);
            data.extend(std::iter::repeat_n(s * (1.0 + k_factor).log10(), hw));
            data.extend(std::iter::repeat_n(s * noise_var, hw));
            6
        }
        None => {
            data.extend(std::iter::repeat_n(s * noise_var, hw));
            data.extend(std::iter::repeat_n(0.0, hw));
            4
        }
    };
    FeatureTensor::new(channels, rows, cols, data)
}

/// Runs the layer graph and returns the 2-channel tanh output before `s_out` scaling.
pub fn forward_raw(model: &ModelPackage, input: &FeatureTensor) -> Result<FeatureTensor, ModelError> {
    let (h, w) = model.shape();
    if input.shape() != (model.input_channels(), h, w) {
        return Err(ModelError::InputShape {
            expected: format!("{:?}", (model.input_channels(), h, w)),
            actual: format!("{:?}", input.shape()),
        });
    }
    let layers = model.layers();
    let mut kept: Vec<Option<FeatureTensor>> = vec![None; layers.len()];
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        x = match layer {
            LayerSpec::Conv(c) => conv2d(&x, c)?,
            LayerSpec::BatchNorm(b) => batch_norm_inference(&x, b)?,
            LayerSpec::Relu => activation(&x, Activation::Relu),
            LayerSpec::Tanh => activation(&x, Activation::Tanh),
            LayerSpec::MaxPool2 => maxpool2(&x)?,
            LayerSpec::Upsample2 => upsample2(&x),
            LayerSpec::ConcatSkip { source } => {
                // topology validated at construction: the source is earlier and retained
                concat_skip(&x, kept[*source].as_ref().expect("retained skip source"))?
            }
        };
        if model.is_retained(i) {
            kept[i] = Some(x.clone());
        }
    }
    Ok(x)
}

/// `H̄ = s_out · (out₀ + j·out₁)`.
pub fn forward(model: &ModelPackage, input: &FeatureTensor) -> Result<ComplexMatrix, ModelError> {
    let out = forward_raw(model, input)?;
    let s = model.output_scale();
    let (h, w) = model.shape();
    Ok(ComplexMatrix::from_fn(h, w, |r, c| {
        C64::new(s * out.get(0, r, c), s * out.get(1, r, c))
    }))
}

/// Per-subcarrier network inputs.
#[derive(Debug, Clone, Copy)]
pub struct NetworkInput<'a> {
    pub inband: &'a ChannelTensor,
    /// Required by out-of-band models, ignored by in-band ones.
    pub oob: Option<&'a ChannelTensor>,
    pub k_factor: f64,
    pub noise_var: f64,
}

/// Applies `assemble_input` + `forward` independently on every subcarrier.
pub fn estimate_all_subcarriers(model: &ModelPackage, input: &NetworkInput<'_>) -> crate::Result<ChannelTensor> {
    model.ensure_shape(input.inband.rows(), input.inband.cols())?;
    let oob = match model.variant() {
        Variant::Oob => {
            let oob = input.oob.ok_or_else(|| {
                ModelError::InvalidParameter("out-of-band model needs the out-of-band estimate".into())
            })?;
            input.inband.ensure_same_shape(oob)?;
            Some(oob)
        }
        Variant::Inband => None,
    };
    let slices = (0..input.inband.len())
        .into_par_iter()
        .map(|n| {
            let x = assemble_input(
                &input.inband[n],
                oob.map(|o| &o[n]),
                input.k_factor,
                input.noise_var,
                model.input_scale(),
            )?;
            forward(model, &x)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    ChannelTensor::new(slices)
}
