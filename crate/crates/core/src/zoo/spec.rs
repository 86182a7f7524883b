//! Declarative descriptions of the five base architectures and their
//! ablation variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::same_padding;
use crate::nn::pool::POOL_WINDOW;

/// Samples in one input clip: 4 s at 8 kHz.
pub const INPUT_SAMPLES: usize = 32000;
pub const FC_DIM: usize = 1000;
pub const FC_DROPOUT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    MaxPool4,
    ResblockGroup,
    GlobalAvgPool,
    Flatten,
    FcBlock,
    DenseSoftmax,
}

/// One row of an architecture. `repeat` stacks identical convs (or residual
/// blocks for `ResblockGroup`); only the first of a stack may change the
/// channel count or use a stride other than 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub rf: usize,
    pub stride: usize,
    pub out_channels: usize,
    pub repeat: usize,
    pub with_bn: bool,
    pub dropout: f64,
}

impl LayerSpec {
    fn conv(rf: usize, stride: usize, out: usize, repeat: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            rf,
            stride,
            out_channels: out,
            repeat,
            with_bn: true,
            dropout: 0.0,
        }
    }

    fn res_group(out: usize, blocks: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ResblockGroup,
            rf: 3,
            stride: 1,
            out_channels: out,
            repeat: blocks,
            with_bn: true,
            dropout: 0.0,
        }
    }

    fn simple(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            rf: 0,
            stride: 1,
            out_channels: 0,
            repeat: 1,
            with_bn: false,
            dropout: 0.0,
        }
    }

    fn fc(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FcBlock,
            rf: 0,
            stride: 1,
            out_channels: dim,
            repeat: 1,
            with_bn: true,
            dropout: FC_DROPOUT,
        }
    }

    /// Weight layers contributed: convs, FC layers and the softmax dense.
    pub fn weight_layers(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.repeat,
            LayerKind::ResblockGroup => 2 * self.repeat,
            LayerKind::FcBlock | LayerKind::DenseSoftmax => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Base {
    M3,
    M5,
    M11,
    M18,
    M34Res,
}

impl Base {
    pub fn name(self) -> &'static str {
        match self {
            Base::M3 => "m3",
            Base::M5 => "m5",
            Base::M11 => "m11",
            Base::M18 => "m18",
            Base::M34Res => "m34-res",
        }
    }

    pub fn weight_layers(self) -> usize {
        match self {
            Base::M3 => 3,
            Base::M5 => 5,
            Base::M11 => 11,
            Base::M18 => 18,
            Base::M34Res => 34,
        }
    }

    pub const ALL: [Base; 5] = [Base::M3, Base::M5, Base::M11, Base::M18, Base::M34Res];

    /// First-layer filters and `(width, stack depth, pool after)` per group.
    fn column(self) -> (usize, &'static [(usize, usize, bool)]) {
        match self {
            Base::M3 => (256, &[(256, 1, true)]),
            Base::M5 => (128, &[(128, 1, true), (256, 1, true), (512, 1, true)]),
            Base::M11 => (64, &[(64, 2, true), (128, 2, true), (256, 3, true), (512, 2, false)]),
            Base::M18 => (64, &[(64, 4, true), (128, 4, true), (256, 4, true), (512, 4, false)]),
            // group depths count residual blocks
            Base::M34Res => (48, &[(48, 3, true), (96, 4, true), (192, 6, true), (384, 3, false)]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    /// Two 1000-wide FC layers (BN, dropout 0.3) replace global pooling.
    Fc,
    /// +50% filters for M3, +100% for M5.
    Big,
    /// First-layer receptive field 8.
    SmallRf,
    /// First-layer receptive field 320.
    LargeRf,
    /// No batch norm; convolutions get biases.
    NoBn,
    /// First-layer stride 1 instead of 4.
    Stride1,
}

impl Variant {
    fn suffix(self) -> &'static str {
        match self {
            Variant::Plain => "",
            Variant::Fc => "-fc",
            Variant::Big => "-big",
            Variant::SmallRf => "-srf",
            Variant::LargeRf => "-lrf",
            Variant::NoBn => "-no-bn",
            Variant::Stride1 => "-stride1",
        }
    }

    const SUFFIXED: [Variant; 6] = [
        Variant::Fc,
        Variant::Big,
        Variant::SmallRf,
        Variant::LargeRf,
        Variant::NoBn,
        Variant::Stride1,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub base: Base,
    pub variant: Variant,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    /// Weight-layer count implied by the name.
    pub declared_weight_layers: usize,
    /// Clip length the FC head is sized for (FC variants only).
    pub input_samples: usize,
    /// Channel multiplier applied by [`ArchitectureSpec::with_width`].
    pub width: f64,
}

/// One row of a symbolic shape trace: layer name and `(time, channels)`
/// of its output for a single example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub layer: String,
    pub time: usize,
    pub channels: usize,
}

/// Every identifier [`ArchitectureSpec::from_name`] accepts in canonical form.
pub fn supported_names() -> Vec<String> {
    let mut names: Vec<String> = Base::ALL.iter().map(|b| b.name().to_string()).collect();
    for v in Variant::SUFFIXED {
        for b in Base::ALL {
            if v == Variant::Big && !matches!(b, Base::M3 | Base::M5) {
                continue;
            }
            names.push(canonical_name(b, v));
        }
    }
    names
}

fn canonical_name(base: Base, variant: Variant) -> String {
    match (base, variant) {
        (Base::M34Res, v) if v != Variant::Plain => format!("m34{}", v.suffix()),
        (b, v) => format!("{}{}", b.name(), v.suffix()),
    }
}

fn parse_base(s: &str) -> Option<Base> {
    Some(match s {
        "m3" => Base::M3,
        "m5" => Base::M5,
        "m11" => Base::M11,
        "m18" => Base::M18,
        "m34" | "m34-res" => Base::M34Res,
        _ => return None,
    })
}

/// Splits an identifier such as `m18-lrf` or `m34-no-bn` into base and variant.
pub fn parse_name(name: &str) -> Result<(Base, Variant)> {
    let lower = name.trim().to_ascii_lowercase();
    let unknown = || Error::UnknownArchitecture(name.to_string());
    if let Some(b) = parse_base(&lower) {
        return Ok((b, Variant::Plain));
    }
    for v in Variant::SUFFIXED {
        if let Some(rest) = lower.strip_suffix(v.suffix()) {
            let b = parse_base(rest).ok_or_else(unknown)?;
            if v == Variant::Big && !matches!(b, Base::M3 | Base::M5) {
                return Err(unknown());
            }
            return Ok((b, v));
        }
    }
    Err(unknown())
}

impl ArchitectureSpec {
    pub fn from_name(name: &str, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let (base, variant) = parse_name(name)?;
        let (first, groups) = base.column();
        let widen = match (variant, base) {
            (Variant::Big, Base::M3) => 1.5,
            (Variant::Big, Base::M5) => 2.0,
            _ => 1.0,
        };
        let w = |c: usize| (c as f64 * widen).round() as usize;
        let first_rf = match variant {
            Variant::SmallRf => 8,
            Variant::LargeRf => 320,
            _ => 80,
        };
        let first_stride = if variant == Variant::Stride1 { 1 } else { 4 };

        let mut layers = vec![
            LayerSpec::conv(first_rf, first_stride, w(first), 1),
            LayerSpec::simple(LayerKind::MaxPool4),
        ];
        for &(width, depth, pool) in groups {
            layers.push(match base {
                Base::M34Res => LayerSpec::res_group(w(width), depth),
                _ => LayerSpec::conv(3, 1, w(width), depth),
            });
            if pool {
                layers.push(LayerSpec::simple(LayerKind::MaxPool4));
            }
        }
        if variant == Variant::Fc {
            layers.push(LayerSpec::simple(LayerKind::Flatten));
            layers.push(LayerSpec::fc(FC_DIM));
            layers.push(LayerSpec::fc(FC_DIM));
        } else {
            layers.push(LayerSpec::simple(LayerKind::GlobalAvgPool));
        }
        let mut dense = LayerSpec::simple(LayerKind::DenseSoftmax);
        dense.out_channels = num_classes;
        layers.push(dense);

        if variant == Variant::NoBn {
            for l in &mut layers {
                l.with_bn = false;
            }
        }

        let declared = base.weight_layers() + if variant == Variant::Fc { 2 } else { 0 };
        Ok(ArchitectureSpec {
            name: canonical_name(base, variant),
            base,
            variant,
            layers,
            num_classes,
            declared_weight_layers: declared,
            input_samples: INPUT_SAMPLES,
            width: 1.0,
        })
    }

    /// Scales every convolution's filter count by `scale` (at least one
    /// filter each). FC widths are left alone.
    pub fn with_width(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("width scale {scale} must be positive")));
        }
        for l in &mut self.layers {
            if matches!(l.kind, LayerKind::Conv | LayerKind::ResblockGroup) {
                l.out_channels = ((l.out_channels as f64 * scale).round() as usize).max(1);
            }
        }
        self.width *= scale;
        Ok(self)
    }

    /// Sets the clip length an FC head is sized for.
    pub fn with_input_samples(mut self, samples: usize) -> Self {
        self.input_samples = samples;
        self
    }

    pub fn weight_layer_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::weight_layers).sum()
    }

    pub fn first_receptive_field(&self) -> usize {
        self.layers[0].rf
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.with_bn)
    }

    /// Symbolic forward pass over shapes: `(time, channels)` after every
    /// layer (stacks are expanded to one entry per conv or block).
    pub fn shape_trace(&self, input_time: usize) -> Result<Vec<TraceEntry>> {
        let first_rf = self.first_receptive_field();
        if input_time < first_rf {
            return Err(Error::TooShort {
                op: "shape_trace",
                time: input_time,
                min: first_rf,
            });
        }
        let mut out = vec![TraceEntry {
            layer: "input".into(),
            time: input_time,
            channels: 1,
        }];
        let (mut t, mut c) = (input_time, 1usize);
        let (mut conv_i, mut pool_i, mut group_i, mut fc_i) = (0, 0, 0, 0);
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv => {
                    for r in 0..l.repeat {
                        conv_i += 1;
                        let stride = if r == 0 { l.stride } else { 1 };
                        t = same_padding(t, l.rf, stride).0;
                        c = l.out_channels;
                        out.push(TraceEntry {
                            layer: format!("conv{conv_i}"),
                            time: t,
                            channels: c,
                        });
                    }
                }
                LayerKind::ResblockGroup => {
                    group_i += 1;
                    for b in 0..l.repeat {
                        conv_i += 2;
                        c = l.out_channels;
                        out.push(TraceEntry {
                            layer: format!("res{group_i}.block{}", b + 1),
                            time: t,
                            channels: c,
                        });
                    }
                }
                LayerKind::MaxPool4 => {
                    pool_i += 1;
                    t = t.div_ceil(POOL_WINDOW);
                    out.push(TraceEntry {
                        layer: format!("maxpool{pool_i}"),
                        time: t,
                        channels: c,
                    });
                }
                LayerKind::GlobalAvgPool => {
                    t = 1;
                    out.push(TraceEntry {
                        layer: "global_avg_pool".into(),
                        time: t,
                        channels: c,
                    });
                }
                LayerKind::Flatten => {
                    c *= t;
                    t = 1;
                    out.push(TraceEntry {
                        layer: "flatten".into(),
                        time: t,
                        channels: c,
                    });
                }
                LayerKind::FcBlock => {
                    fc_i += 1;
                    c = l.out_channels;
                    out.push(TraceEntry {
                        layer: format!("fc{fc_i}"),
                        time: 1,
                        channels: c,
                    });
                }
                LayerKind::DenseSoftmax => {
                    c = l.out_channels;
                    out.push(TraceEntry {
                        layer: "dense".into(),
                        time: 1,
                        channels: c,
                    });
                }
            }
        }
        Ok(out)
    }
}
