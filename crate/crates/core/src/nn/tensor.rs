use super::ModelError;

/// Real-valued `channels × height × width` feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ModelError::InvalidParameter(format!(
                "feature tensor dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(ModelError::InputShape {
                expected: format!("{} values", channels * height * width),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(FeatureTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        FeatureTensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Self {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

/// Convolution with square kernel, stride 1 and symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let h = (height + 2 * self.padding).checked_sub(self.kernel)? + 1;
        let w = (width + 2 * self.padding).checked_sub(self.kernel)? + 1;
        Some((h, w))
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 {
            return Err(ModelError::InvalidParameter("conv dims must be >= 1".into()));
        }
        if self.weight.len() != self.weight_len() || self.bias.len() != self.out_channels {
            return Err(ModelError::SizeMismatch(format!(
                "conv {}->{} k{} needs {} weights and {} biases, got {} and {}",
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.weight_len(),
                self.out_channels,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Inference-mode batch normalisation with stored running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let c = self.gamma.len();
        if c == 0 || self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(ModelError::SizeMismatch("batchnorm parameter vectors differ in length".into()));
        }
        if self.var.iter().any(|v| !(*v >= 0.0)) || !(self.eps >= 0.0) {
            return Err(ModelError::InvalidParameter(
                "batchnorm running variance and epsilon must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

pub fn conv2d(x: &FeatureTensor, conv: &Conv2d) -> Result<FeatureTensor, ModelError> {
    conv.check()?;
    if x.channels != conv.in_channels {
        return Err(ModelError::InputShape {
            expected: format!("{} channels", conv.in_channels),
            actual: format!("{} channels", x.channels),
        });
    }
    let (oh, ow) = conv
        .output_size(x.height, x.width)
        .ok_or_else(|| ModelError::InputShape {
            expected: format!("spatial size >= kernel {}", conv.kernel),
            actual: format!("{}x{}", x.height, x.width),
        })?;
    let (ih, iw) = (x.height as isize, x.width as isize);
    let k = conv.kernel;
    let pad = conv.padding as isize;
    let mut out = FeatureTensor::zeros(conv.out_channels, oh, ow);
    for o in 0..conv.out_channels {
        let plane = out.plane_mut(o);
        plane.iter_mut().for_each(|v| *v = conv.bias[o]);
        for i in 0..conv.in_channels {
            let src = x.plane(i);
            let wbase = (o * conv.in_channels + i) * k * k;
            for ky in 0..k {
                // output rows whose input row y + ky - pad is inside the image
                let dy = ky as isize - pad;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = ((ih - dy).min(oh as isize)).max(0) as usize;
                for kx in 0..k {
                    let w = conv.weight[wbase + ky * k + kx];
                    if w == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - pad;
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = ((iw - dx).min(ow as isize)).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y_lo..y_hi {
                        let sy = (y as isize + dy) as usize;
                        let src_row = &src[sy * x.width..(sy + 1) * x.width];
                        let dst_row = &mut plane[y * ow..(y + 1) * ow];
                        for xx in x_lo..x_hi {
                            dst_row[xx] += w * src_row[(xx as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `y = γ (x - μ) / √(σ² + ε) + β` per channel.
pub fn batch_norm_inference(x: &FeatureTensor, bn: &BatchNorm) -> Result<FeatureTensor, ModelError> {
    bn.check()?;
    if x.channels != bn.channels() {
        return Err(ModelError::InputShape {
            expected: format!("{} channels", bn.channels()),
            actual: format!("{} channels", x.channels),
        });
    }
    let mut out = x.clone();
    for c in 0..x.channels {
        let scale = bn.gamma[c] / (bn.var[c] + bn.eps).sqrt();
        let shift = bn.beta[c] - scale * bn.mean[c];
        out.plane_mut(c).iter_mut().for_each(|v| *v = scale * *v + shift);
    }
    Ok(out)
}

pub fn activation(x: &FeatureTensor, kind: Activation) -> FeatureTensor {
    match kind {
        Activation::Relu => x.clone().map(|v| v.max(0.0)),
        Activation::Tanh => x.clone().map(f64::tanh),
    }
}

/// 2×2 non-overlapping max-pool.
pub fn maxpool2(x: &FeatureTensor) -> Result<FeatureTensor, ModelError> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(ModelError::InputShape {
            expected: "even spatial dims for maxpool2".into(),
            actual: format!("{}x{}", x.height, x.width),
        });
    }
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = FeatureTensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                let m = x
                    .get(c, 2 * y, 2 * xx)
                    .max(x.get(c, 2 * y, 2 * xx + 1))
                    .max(x.get(c, 2 * y + 1, 2 * xx))
                    .max(x.get(c, 2 * y + 1, 2 * xx + 1));
                out.data[(c * oh + y) * ow + xx] = m;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour 2× replication.
pub fn upsample2(x: &FeatureTensor) -> FeatureTensor {
    let (oh, ow) = (x.height * 2, x.width * 2);
    let mut out = FeatureTensor::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        for y in 0..oh {
            for xx in 0..ow {
                out.data[(c * oh + y) * ow + xx] = x.get(c, y / 2, xx / 2);
            }
        }
    }
    out
}

/// Channel concatenation: decoder channels first, then encoder channels.
pub fn concat_skip(decoder: &FeatureTensor, encoder: &FeatureTensor) -> Result<FeatureTensor, ModelError> {
    if (decoder.height, decoder.width) != (encoder.height, encoder.width) {
        return Err(ModelError::InputShape {
            expected: format!("{}x{}", decoder.height, decoder.width),
            actual: format!("{}x{}", encoder.height, encoder.width),
        });
    }
    let mut data = Vec::with_capacity(decoder.data.len() + encoder.data.len());
    data.extend_from_slice(&decoder.data);
    data.extend_from_slice(&encoder.data);
    Ok(FeatureTensor {
        channels: decoder.channels + encoder.channels,
        height: decoder.height,
        width: decoder.width,
        data,
    })
}
