//! Architecture descriptors for the two detectors and their builders.
//!
//! CNN-VAE stacks four convolution blocks in the encoder and five transposed
//! convolution blocks in the decoder. SCVAE replaces each stack with a single
//! Fire Module (squeeze 1×1, then parallel 1×1 and 3×3 extends concatenated on
//! channels). Every convolution is followed by relu and batch normalization; the
//! final dense layer of each half is bare.
//!
//! Descriptors have a canonical text form, used inside checkpoints and printed by
//! `describe`:
//!
//! ```text
//! architecture SCVAE
//! time_window 16
//! features 6
//! latent_dim 100
//! encoder
//!   fire enc.fire squeeze=16 extend1x1=16 extend3x3=32
//!   flatten
//!   dense enc.fc out=200
//! decoder
//!   latent_map 1x1x100
//!   transpose_fire dec.fire squeeze=16 extend1x1=16 extend3x3=1
//!   flatten
//!   dense dec.fc out=192
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::VaeModel;
use crate::ops::{ConvSpec, Padding};
use crate::tensor::TensorError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("descriptor line {line}: {message}")]
    Descriptor { line: usize, message: String },
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch {
        expected: ModelKind,
        found: ModelKind,
    },
    #[error("input shape mismatch: model expects {expected:?}, got {found:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "CNN_VAE")]
    CnnVae,
    #[serde(rename = "SCVAE")]
    Scvae,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::CnnVae => "CNN_VAE",
            ModelKind::Scvae => "SCVAE",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "CNN_VAE" | "CNNVAE" => Ok(ModelKind::CnnVae),
            "SCVAE" => Ok(ModelKind::Scvae),
            _ => Err(ModelError::InvalidArchitecture(format!(
                "unknown model kind `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FireModuleSpec {
    pub squeeze_channels: usize,
    pub extend1x1_channels: usize,
    pub extend3x3_channels: usize,
    pub transposed: bool,
}

impl FireModuleSpec {
    pub fn out_channels(&self) -> usize {
        self.extend1x1_channels + self.extend3x3_channels
    }

    pub fn squeeze(&self) -> ConvSpec {
        ConvSpec::new(self.squeeze_channels, 1, Padding::Same, self.transposed)
    }

    pub fn extend1x1(&self) -> ConvSpec {
        ConvSpec::new(self.extend1x1_channels, 1, Padding::Same, self.transposed)
    }

    pub fn extend3x3(&self) -> ConvSpec {
        ConvSpec::new(self.extend3x3_channels, 3, Padding::Same, self.transposed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Convolution (or transposed convolution), relu, batch normalization.
    Conv {
        name: String,
        spec: ConvSpec,
    },
    Fire {
        name: String,
        spec: FireModuleSpec,
    },
    Flatten,
    /// Bare affine layer.
    Dense {
        name: String,
        out: usize,
    },
    /// `[batch, Z]` viewed as a `[batch, 1, 1, Z]` map.
    LatentMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchitectureSpec {
    pub kind: ModelKind,
    pub time_window: usize,
    pub num_features: usize,
    pub latent_dim: usize,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

/// Activation shape between layers: a `[h, w, c]` map or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Map(usize, usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Map(h, w, c) => h * w * c,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActShape::Map(h, w, c) => write!(f, "{h}x{w}x{c}"),
            ActShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

impl ArchitectureSpec {
    pub fn cnn_vae(
        time_window: usize,
        num_features: usize,
        latent_dim: usize,
    ) -> Result<Self, ModelError> {
        if time_window < 3 || num_features < 3 {
            return Err(ModelError::InvalidArchitecture(format!(
                "CNN_VAE needs time_window >= 3 and features >= 3 (got {time_window}x{num_features}): \
                 its fourth encoder convolution is a 3x3 VALID convolution"
            )));
        }
        let conv = |i: usize, out: usize, padding: Padding| Layer::Conv {
            name: format!("enc.conv{i}"),
            spec: ConvSpec::new(out, 3, padding, false),
        };
        let tconv = |i: usize, out: usize, padding: Padding| Layer::Conv {
            name: format!("dec.tconv{i}"),
            spec: ConvSpec::new(out, 3, padding, true),
        };
        let spec = ArchitectureSpec {
            kind: ModelKind::CnnVae,
            time_window,
            num_features,
            latent_dim,
            encoder: vec![
                conv(1, 16, Padding::Same),
                conv(2, 32, Padding::Same),
                conv(3, 64, Padding::Same),
                conv(4, 128, Padding::Valid),
                Layer::Flatten,
                Layer::Dense {
                    name: "enc.fc".into(),
                    out: 2 * latent_dim,
                },
            ],
            decoder: vec![
                Layer::LatentMap,
                tconv(1, 128, Padding::Same),
                tconv(2, 64, Padding::Same),
                tconv(3, 32, Padding::Valid),
                tconv(4, 16, Padding::Valid),
                tconv(5, 1, Padding::Valid),
                Layer::Flatten,
                Layer::Dense {
                    name: "dec.fc".into(),
                    out: 2 * time_window * num_features,
                },
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scvae(
        time_window: usize,
        num_features: usize,
        latent_dim: usize,
    ) -> Result<Self, ModelError> {
        let spec = ArchitectureSpec {
            kind: ModelKind::Scvae,
            time_window,
            num_features,
            latent_dim,
            encoder: vec![
                Layer::Fire {
                    name: "enc.fire".into(),
                    spec: FireModuleSpec {
                        squeeze_channels: 16,
                        extend1x1_channels: 16,
                        extend3x3_channels: 32,
                        transposed: false,
                    },
                },
                Layer::Flatten,
                Layer::Dense {
                    name: "enc.fc".into(),
                    out: 2 * latent_dim,
                },
            ],
            decoder: vec![
                Layer::LatentMap,
                Layer::Fire {
                    name: "dec.fire".into(),
                    spec: FireModuleSpec {
                        squeeze_channels: 16,
                        extend1x1_channels: 16,
                        extend3x3_channels: 1,
                        transposed: true,
                    },
                },
                Layer::Flatten,
                Layer::Dense {
                    name: "dec.fc".into(),
                    out: 2 * time_window * num_features,
                },
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn new(
        kind: ModelKind,
        time_window: usize,
        num_features: usize,
        latent_dim: usize,
    ) -> Result<Self, ModelError> {
        match kind {
            ModelKind::CnnVae => Self::cnn_vae(time_window, num_features, latent_dim),
            ModelKind::Scvae => Self::scvae(time_window, num_features, latent_dim),
        }
    }

    pub fn input_shape(&self) -> ActShape {
        ActShape::Map(self.time_window, self.num_features, 1)
    }

    /// Number of reconstructed values (`tw·#f`); the decoder emits twice this.
    pub fn window_len(&self) -> usize {
        self.time_window * self.num_features
    }

    /// Activation shape after each layer of `layers`, starting from `input`.
    pub fn trace(layers: &[Layer], input: ActShape) -> Result<Vec<ActShape>, ModelError> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for layer in layers {
            cur = match (layer, cur) {
                (Layer::Conv { name, spec }, ActShape::Map(h, w, _)) => {
                    if spec.transposed {
                        let k = spec.kernel;
                        ActShape::Map(
                            spec.padding.transpose_extent(h, k),
                            spec.padding.transpose_extent(w, k),
                            spec.out_channels,
                        )
                    } else {
                        let oh = spec.padding.conv_extent(h, spec.kernel);
                        let ow = spec.padding.conv_extent(w, spec.kernel);
                        match (oh, ow) {
                            (Some(oh), Some(ow)) => ActShape::Map(oh, ow, spec.out_channels),
                            _ => {
                                return Err(ModelError::InvalidArchitecture(format!(
                                "{name}: {h}x{w} input is smaller than its {k}x{k} VALID kernel",
                                k = spec.kernel
                            )))
                            }
                        }
                    }
                }
                (Layer::Fire { spec, .. }, ActShape::Map(h, w, _)) => {
                    ActShape::Map(h, w, spec.out_channels())
                }
                (Layer::Flatten, s) => ActShape::Flat(s.len()),
                (Layer::Dense { out, .. }, ActShape::Flat(_)) => ActShape::Flat(*out),
                (Layer::LatentMap, ActShape::Flat(n)) => ActShape::Map(1, 1, n),
                (layer, shape) => {
                    return Err(ModelError::InvalidArchitecture(format!(
                        "layer {layer:?} cannot consume activation {shape}"
                    )))
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.time_window == 0 || self.num_features == 0 || self.latent_dim == 0 {
            return Err(ModelError::InvalidArchitecture(
                "extents must be positive".into(),
            ));
        }
        let enc = Self::trace(&self.encoder, self.input_shape())?;
        if enc.last() != Some(&ActShape::Flat(2 * self.latent_dim)) {
            return Err(ModelError::InvalidArchitecture(format!(
                "encoder must end in {} values (mean and log-variance)",
                2 * self.latent_dim
            )));
        }
        let dec = Self::trace(&self.decoder, ActShape::Flat(self.latent_dim))?;
        if dec.last() != Some(&ActShape::Flat(2 * self.window_len())) {
            return Err(ModelError::InvalidArchitecture(format!(
                "decoder must end in tw*#f*2 = {} values",
                2 * self.window_len()
            )));
        }
        Ok(())
    }

    /// Human-readable per-layer listing with output shapes.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} (time window {}, {} features, |Z| = {})\n",
            self.kind, self.time_window, self.num_features, self.latent_dim
        );
        let mut section = |title: &str, layers: &[Layer], input: ActShape| {
            out.push_str(&format!("{title}\n"));
            out.push_str(&format!(
                "  {:<22} {:>10} {:>7} {:>7} {:>8}  {}\n",
                "layer", "# outputs", "kernel", "stride", "padding", "output"
            ));
            let shapes = Self::trace(layers, input).unwrap_or_default();
            for (layer, shape) in layers.iter().zip(shapes) {
                let row = |kind: &str, spec: &ConvSpec| {
                    format!(
                        "  {:<22} {:>10} {:>7} {:>7} {:>8}",
                        kind, spec.out_channels, spec.kernel, spec.stride, spec.padding
                    )
                };
                match layer {
                    Layer::Conv { spec, .. } => {
                        let kind = if spec.transposed {
                            "trans conv"
                        } else {
                            "conv"
                        };
                        out.push_str(&format!("{}  {shape}\n", row(kind, spec)));
                    }
                    Layer::Fire { spec, .. } => {
                        let (conv, fire) = if spec.transposed {
                            ("trans conv", "trans fire")
                        } else {
                            ("conv", "fire")
                        };
                        out.push_str(&format!(
                            "{}\n",
                            row(&format!("{fire} squeeze/{conv}"), &spec.squeeze())
                        ));
                        out.push_str(&format!(
                            "{}\n",
                            row(&format!("{fire} extend1/{conv}"), &spec.extend1x1())
                        ));
                        out.push_str(&format!(
                            "{}  {shape}\n",
                            row(&format!("{fire} extend2/{conv}"), &spec.extend3x3())
                        ));
                    }
                    Layer::Dense { out: n, .. } => {
                        out.push_str(&format!(
                            "  {:<22} {:>10} {:>7} {:>7} {:>8}  {shape}\n",
                            "fully connected", n, "-", "-", "-"
                        ));
                    }
                    Layer::Flatten => out.push_str(&format!("  {:<22} {:>44}\n", "flatten", shape)),
                    Layer::LatentMap => {
                        out.push_str(&format!("  {:<22} {:>44}\n", "latent map", shape))
                    }
                }
            }
        };
        section("encoder", &self.encoder, self.input_shape());
        section("decoder", &self.decoder, ActShape::Flat(self.latent_dim));
        out
    }
}

fn write_layer(f: &mut fmt::Formatter<'_>, layer: &Layer, latent_dim: usize) -> fmt::Result {
    match layer {
        Layer::Conv { name, spec } => writeln!(
            f,
            "  {} {name} out={} kernel={} stride={} padding={}",
            if spec.transposed {
                "transpose_conv"
            } else {
                "conv"
            },
            spec.out_channels,
            spec.kernel,
            spec.stride,
            spec.padding
        ),
        Layer::Fire { name, spec } => writeln!(
            f,
            "  {} {name} squeeze={} extend1x1={} extend3x3={}",
            if spec.transposed {
                "transpose_fire"
            } else {
                "fire"
            },
            spec.squeeze_channels,
            spec.extend1x1_channels,
            spec.extend3x3_channels
        ),
        Layer::Flatten => writeln!(f, "  flatten"),
        Layer::Dense { name, out } => writeln!(f, "  dense {name} out={out}"),
        Layer::LatentMap => writeln!(f, "  latent_map 1x1x{latent_dim}"),
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "architecture {}", self.kind)?;
        writeln!(f, "time_window {}", self.time_window)?;
        writeln!(f, "features {}", self.num_features)?;
        writeln!(f, "latent_dim {}", self.latent_dim)?;
        writeln!(f, "encoder")?;
        for layer in &self.encoder {
            write_layer(f, layer, self.latent_dim)?;
        }
        writeln!(f, "decoder")?;
        for layer in &self.decoder {
            write_layer(f, layer, self.latent_dim)?;
        }
        Ok(())
    }
}

fn parse_layer(line: usize, text: &str, latent_dim: usize) -> Result<Layer, ModelError> {
    let err = |message: String| ModelError::Descriptor { line, message };
    let mut parts = text.split_whitespace();
    let keyword = parts.next().unwrap_or_default();
    let mut name = None;
    let mut kv = std::collections::BTreeMap::new();
    for part in parts {
        match part.split_once('=') {
            Some((k, v)) => {
                kv.insert(k, v);
            }
            None if name.is_none() => name = Some(part.to_string()),
            None => return Err(err(format!("unexpected token `{part}`"))),
        }
    }
    let num = |key: &str| -> Result<usize, ModelError> {
        kv.get(key)
            .ok_or_else(|| err(format!("missing `{key}=`")))?
            .parse()
            .map_err(|_| err(format!("`{key}` is not a non-negative integer")))
    };
    let layer_name = || name.clone().ok_or_else(|| err("missing layer name".into()));
    match keyword {
        "conv" | "transpose_conv" => {
            let padding: Padding = kv
                .get("padding")
                .ok_or_else(|| err("missing `padding=`".into()))?
                .parse()
                .map_err(|e: TensorError| err(e.to_string()))?;
            let mut spec = ConvSpec::new(
                num("out")?,
                num("kernel")?,
                padding,
                keyword == "transpose_conv",
            );
            spec.stride = num("stride")?;
            if spec.stride != 1 {
                return Err(err(format!("stride {} is not supported", spec.stride)));
            }
            Ok(Layer::Conv {
                name: layer_name()?,
                spec,
            })
        }
        "fire" | "transpose_fire" => Ok(Layer::Fire {
            name: layer_name()?,
            spec: FireModuleSpec {
                squeeze_channels: num("squeeze")?,
                extend1x1_channels: num("extend1x1")?,
                extend3x3_channels: num("extend3x3")?,
                transposed: keyword == "transpose_fire",
            },
        }),
        "flatten" => Ok(Layer::Flatten),
        "dense" => Ok(Layer::Dense {
            name: layer_name()?,
            out: num("out")?,
        }),
        "latent_map" => {
            let expected = format!("1x1x{latent_dim}");
            if name.as_deref() != Some(expected.as_str()) {
                return Err(err(format!("latent_map must be {expected}")));
            }
            Ok(Layer::LatentMap)
        }
        other => Err(ModelError::Tensor(TensorError::UnsupportedPrimitive(
            other.to_string(),
        ))),
    }
}

impl FromStr for ArchitectureSpec {
    type Err = ModelError;

    fn from_str(text: &str) -> Result<Self, ModelError> {
        let mut header = std::collections::BTreeMap::new();
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        let mut section: Option<bool> = None;
        let mut latent_dim = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            match trimmed {
                "encoder" => section = Some(true),
                "decoder" => section = Some(false),
                _ if raw.starts_with("  ") => {
                    let layer = parse_layer(line, trimmed, latent_dim)?;
                    match section {
                        Some(true) => encoder.push(layer),
                        Some(false) => decoder.push(layer),
                        None => {
                            return Err(ModelError::Descriptor {
                                line,
                                message: "layer outside encoder/decoder section".into(),
                            })
                        }
                    }
                }
                _ => {
                    let (key, value) = trimmed.split_once(' ').ok_or(ModelError::Descriptor {
                        line,
                        message: format!("expected `key value`, got `{trimmed}`"),
                    })?;
                    if key == "latent_dim" {
                        latent_dim = value.parse().unwrap_or(0);
                    }
                    header.insert(key.to_string(), (line, value.to_string()));
                }
            }
        }
        let field = |key: &str| {
            header.get(key).cloned().ok_or(ModelError::Descriptor {
                line: 0,
                message: format!("missing `{key}`"),
            })
        };
        let number = |key: &str| -> Result<usize, ModelError> {
            let (line, v) = field(key)?;
            v.parse().map_err(|_| ModelError::Descriptor {
                line,
                message: format!("`{key}` is not an integer"),
            })
        };
        let spec = ArchitectureSpec {
            kind: field("architecture")?.1.parse()?,
            time_window: number("time_window")?,
            num_features: number("features")?,
            latent_dim: number("latent_dim")?,
            encoder,
            decoder,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// CNN-VAE with freshly initialized parameters.
pub fn build_cnn_vae(
    time_window: usize,
    num_features: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<VaeModel<f64>, ModelError> {
    VaeModel::init(
        ArchitectureSpec::cnn_vae(time_window, num_features, latent_dim)?,
        seed,
    )
}

/// SCVAE with freshly initialized parameters.
pub fn build_scvae(
    time_window: usize,
    num_features: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<VaeModel<f64>, ModelError> {
    VaeModel::init(
        ArchitectureSpec::scvae(time_window, num_features, latent_dim)?,
        seed,
    )
}

pub fn build(
    kind: ModelKind,
    time_window: usize,
    num_features: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<VaeModel<f64>, ModelError> {
    VaeModel::init(
        ArchitectureSpec::new(kind, time_window, num_features, latent_dim)?,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_encoder_shape_walk() {
        let spec = ArchitectureSpec::cnn_vae(16, 6, 100).unwrap();
        let shapes = ArchitectureSpec::trace(&spec.encoder, spec.input_shape()).unwrap();
        assert_eq!(
            shapes,
            vec![
                ActShape::Map(16, 6, 16),
                ActShape::Map(16, 6, 32),
                ActShape::Map(16, 6, 64),
                ActShape::Map(14, 4, 128),
                ActShape::Flat(7168),
                ActShape::Flat(200),
            ]
        );
        let dec = ArchitectureSpec::trace(&spec.decoder, ActShape::Flat(100)).unwrap();
        let spatial: Vec<_> = dec
            .iter()
            .filter_map(|s| match s {
                ActShape::Map(h, _, _) => Some(*h),
                _ => None,
            })
            .collect();
        assert_eq!(spatial, [1, 1, 1, 3, 5, 7]);
        assert_eq!(dec.last(), Some(&ActShape::Flat(192)));
    }

    #[test]
    fn scvae_fire_concatenates_channels() {
        let spec = ArchitectureSpec::scvae(16, 6, 100).unwrap();
        let enc = ArchitectureSpec::trace(&spec.encoder, spec.input_shape()).unwrap();
        assert_eq!(enc[0], ActShape::Map(16, 6, 48));
        let dec = ArchitectureSpec::trace(&spec.decoder, ActShape::Flat(100)).unwrap();
        assert_eq!(dec[1], ActShape::Map(1, 1, 17));
    }

    #[test]
    fn cnn_vae_rejects_tiny_inputs() {
        let err = ArchitectureSpec::cnn_vae(2, 6, 10).unwrap_err();
        assert!(err.to_string().contains("VALID"));
        assert!(ArchitectureSpec::cnn_vae(6, 2, 10).is_err());
        assert!(ArchitectureSpec::scvae(1, 1, 10).is_ok());
    }

    #[test]
    fn descriptor_text_round_trips() {
        for spec in [
            ArchitectureSpec::cnn_vae(8, 31, 100).unwrap(),
            ArchitectureSpec::scvae(4, 73, 7).unwrap(),
        ] {
            let text = spec.to_string();
            let parsed: ArchitectureSpec = text.parse().unwrap();
            assert_eq!(parsed, spec);
            assert_eq!(parsed.to_string(), text);
        }
    }

    #[test]
    fn unknown_layer_is_rejected_as_unsupported_primitive() {
        let text = ArchitectureSpec::scvae(4, 3, 2)
            .unwrap()
            .to_string()
            .replace(
                "  flatten\n  dense enc.fc",
                "  maxpool p size=2\n  flatten\n  dense enc.fc",
            );
        let err = text.parse::<ArchitectureSpec>().unwrap_err();
        assert_eq!(
            err,
            ModelError::Tensor(TensorError::UnsupportedPrimitive("maxpool".into()))
        );
    }

    #[test]
    fn summary_lists_table_rows() {
        let s = ArchitectureSpec::scvae(16, 6, 100).unwrap().summary();
        assert!(s.contains("fire extend2/conv"));
        assert!(s.contains("trans fire extend2/trans conv"));
        assert!(s.contains("fully connected"));
    }
}
