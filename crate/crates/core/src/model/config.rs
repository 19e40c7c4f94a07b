use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// ConvLSTM temporal branch, linear fusion.
    #[serde(rename = "STN")]
    Stn,
    /// ConvLSTM temporal branch, cross-attention fusion.
    #[serde(rename = "STN-TF")]
    StnTf,
    /// sLSTM temporal branch, linear fusion.
    #[serde(rename = "STN-sLSTM")]
    StnSlstm,
    /// sLSTM temporal branch, cross-attention fusion.
    #[serde(rename = "STN-sLSTM-TF")]
    StnSlstmTf,
    /// Flattened patch through a single LSTM, no convolution or fusion.
    #[serde(rename = "LSTM-flat")]
    LstmFlat,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Stn,
        Variant::StnTf,
        Variant::StnSlstm,
        Variant::StnSlstmTf,
        Variant::LstmFlat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Stn => "STN",
            Variant::StnTf => "STN-TF",
            Variant::StnSlstm => "STN-sLSTM",
            Variant::StnSlstmTf => "STN-sLSTM-TF",
            Variant::LstmFlat => "LSTM-flat",
        }
    }

    pub fn uses_slstm(self) -> bool {
        matches!(self, Variant::StnSlstm | Variant::StnSlstmTf)
    }

    pub fn uses_convlstm(self) -> bool {
        matches!(self, Variant::Stn | Variant::StnTf)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::StnTf | Variant::StnSlstmTf)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{s}' (expected one of STN, STN-TF, STN-sLSTM, STN-sLSTM-TF, LSTM-flat)"
                ))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// h; also the fusion width d
    pub hidden: usize,
    /// b, stacked dual-branch + fusion stages
    pub stn_blocks: usize,
    /// a
    pub slstm_heads: usize,
    /// l
    pub slstm_layers: usize,
    /// f
    pub fusion_heads: usize,
    pub fusion_blocks: usize,
    pub fusion_ff: bool,
    /// r; patches are (2r+1)×(2r+1)
    pub radius: usize,
    /// n
    pub steps: usize,
    /// τ
    pub horizon: usize,
    pub conv_channels: [usize; 3],
    pub mlp_hidden: usize,
    pub convlstm_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        preset("table2-best").unwrap()
    }
}

pub const PRESETS: [&str; 6] = [
    "table2-best",
    "table2-2",
    "table2-3",
    "table2-4",
    "table2-5",
    "stn-baseline",
];

/// Named configurations. The `table2-*` rows fix (h, b, a, l, f) with the
/// sLSTM + attention variant; `stn-baseline` is the narrower ConvLSTM model.
pub fn preset(name: &str) -> Option<ModelConfig> {
    let (h, b, a, l, f) = match name {
        "table2-best" => (64, 2, 4, 2, 8),
        "table2-2" => (64, 2, 2, 1, 8),
        "table2-3" => (64, 1, 8, 1, 2),
        "table2-4" => (64, 2, 8, 2, 2),
        "table2-5" => (64, 2, 8, 1, 8),
        "stn-baseline" => {
            return Some(ModelConfig::new(Variant::Stn, 32, 1, 1, 1, 1));
        }
        _ => return None,
    };
    Some(ModelConfig::new(Variant::StnSlstmTf, h, b, a, l, f))
}

impl ModelConfig {
    /// Remaining fields take their defaults: r=5, n=6, τ=1, one fusion block
    /// with feedforward, conv plan h/4 → h/2 → h, MLP width h, 3×3 ConvLSTM.
    pub fn new(variant: Variant, h: usize, b: usize, a: usize, l: usize, f: usize) -> Self {
        Self {
            variant,
            hidden: h,
            stn_blocks: b,
            slstm_heads: a,
            slstm_layers: l,
            fusion_heads: f,
            fusion_blocks: 1,
            fusion_ff: true,
            radius: 5,
            steps: 6,
            horizon: 1,
            conv_channels: Self::conv_plan(h),
            mlp_hidden: h,
            convlstm_kernel: 3,
        }
    }

    pub fn conv_plan(h: usize) -> [usize; 3] {
        [(h / 4).max(1), (h / 2).max(1), h]
    }

    /// Rebuilds the conv plan and MLP width from `hidden`.
    pub fn with_hidden(mut self, h: usize) -> Self {
        self.hidden = h;
        self.conv_channels = Self::conv_plan(h);
        self.mlp_hidden = h;
        self
    }

    pub fn patch_side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn convlstm_channels(&self) -> usize {
        (self.hidden / 4).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("stn_blocks", self.stn_blocks),
            ("slstm_heads", self.slstm_heads),
            ("slstm_layers", self.slstm_layers),
            ("fusion_heads", self.fusion_heads),
            ("fusion_blocks", self.fusion_blocks),
            ("steps", self.steps),
            ("horizon", self.horizon),
            ("mlp_hidden", self.mlp_hidden),
            ("convlstm_kernel", self.convlstm_kernel),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if self.conv_channels[2] != self.hidden {
            return Err(Error::Config(format!(
                "last conv width {} must equal hidden {}",
                self.conv_channels[2], self.hidden
            )));
        }
        if self.variant.uses_slstm() && self.hidden % self.slstm_heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by slstm_heads {}",
                self.hidden, self.slstm_heads
            )));
        }
        if self.variant.uses_attention() && self.hidden % self.fusion_heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} is not divisible by fusion_heads {}",
                self.hidden, self.fusion_heads
            )));
        }
        if self.convlstm_kernel % 2 == 0 {
            return Err(Error::Config("convlstm_kernel must be odd".into()));
        }
        Ok(())
    }

    /// `key=value` pairs, one per field.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let c = self.conv_channels;
        [
            ("variant", self.variant.to_string()),
            ("hidden", self.hidden.to_string()),
            ("stn_blocks", self.stn_blocks.to_string()),
            ("slstm_heads", self.slstm_heads.to_string()),
            ("slstm_layers", self.slstm_layers.to_string()),
            ("fusion_heads", self.fusion_heads.to_string()),
            ("fusion_blocks", self.fusion_blocks.to_string()),
            ("fusion_ff", self.fusion_ff.to_string()),
            ("radius", self.radius.to_string()),
            ("steps", self.steps.to_string()),
            ("horizon", self.horizon.to_string()),
            ("conv_channels", format!("{},{},{}", c[0], c[1], c[2])),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("convlstm_kernel", self.convlstm_kernel.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub const KEYS: [&'static str; 14] = [
        "variant",
        "hidden",
        "stn_blocks",
        "slstm_heads",
        "slstm_layers",
        "fusion_heads",
        "fusion_blocks",
        "fusion_ff",
        "radius",
        "steps",
        "horizon",
        "conv_channels",
        "mlp_hidden",
        "convlstm_kernel",
    ];

    /// Sets one field from its textual form. Setting `hidden` also resets
    /// the derived conv plan and MLP width.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<usize> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{value}'")))
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "hidden" => *self = self.clone().with_hidden(num()?),
            "stn_blocks" | "b" => self.stn_blocks = num()?,
            "slstm_heads" | "a" => self.slstm_heads = num()?,
            "slstm_layers" | "l" => self.slstm_layers = num()?,
            "fusion_heads" | "f" => self.fusion_heads = num()?,
            "fusion_blocks" => self.fusion_blocks = num()?,
            "fusion_ff" => {
                self.fusion_ff = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("fusion_ff: expected true/false, got '{value}'")))?
            }
            "radius" | "r" => self.radius = num()?,
            "steps" | "n" => self.steps = num()?,
            "horizon" | "tau" => self.horizon = num()?,
            "conv_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("conv_channels: bad list '{value}'")))?;
                self.conv_channels = parts.try_into().map_err(|_| {
                    Error::Config(format!("conv_channels needs three widths, got '{value}'"))
                })?;
            }
            "mlp_hidden" => self.mlp_hidden = num()?,
            "convlstm_kernel" => self.convlstm_kernel = num()?,
            _ => return Err(Error::Config(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}
