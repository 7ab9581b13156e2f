use std::fmt;
use std::str::FromStr;

use crate::components::{CLOSENESS_LEN, COMPONENT_LEN};
use crate::error::{Error, Result};

/// Which fusion weights of `W1 * X_c + W2 * X_r + W3 * X_extra` are learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMode {
    /// All three weights learned.
    C0,
    /// `W3` removed.
    C1,
    /// `W2` removed.
    C2,
    /// `W1` removed.
    C3,
    /// Plain summation.
    C4,
    /// Per-element softmax over the three weight logits.
    C5,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::C0,
        FusionMode::C1,
        FusionMode::C2,
        FusionMode::C3,
        FusionMode::C4,
        FusionMode::C5,
    ];

    /// Whether weight `k` (0-based: W1, W2, W3) is a learned tensor.
    pub fn weight_enabled(self, k: usize) -> bool {
        match self {
            FusionMode::C0 | FusionMode::C5 => true,
            FusionMode::C1 => k != 2,
            FusionMode::C2 => k != 1,
            FusionMode::C3 => k != 0,
            FusionMode::C4 => false,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format!("{self:?}").to_lowercase())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?} (expected c0..c5)")))
    }
}

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    /// Short-term prediction module removed.
    V1,
    /// Long-term relation module (and with it the consistency term) removed.
    V2,
    /// Consistency term removed from the loss.
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::V1, Variant::V2, Variant::V3];

    pub fn uses_short_term(self) -> bool {
        self != Variant::V1
    }

    pub fn uses_relations(self) -> bool {
        self != Variant::V2
    }

    pub fn uses_consistency(self) -> bool {
        matches!(self, Variant::Full | Variant::V1)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format!("{self:?}").to_lowercase())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected full, v1, v2, v3)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub relation_dim: usize,
    pub closeness_len: usize,
    pub component_len: usize,
    pub conv_filters: usize,
    pub conv_layers: usize,
    pub transformer_depth: usize,
    pub heads: usize,
    /// Hidden widths of the relation MLP `g`; output width is `relation_dim`.
    pub g_hidden: Vec<usize>,
    /// Hidden widths of the relation decoder; output width is `2 * H * W`.
    pub mlp_r_hidden: Vec<usize>,
    /// Hidden widths of the extra-feature MLP; output width is `2 * H * W`.
    pub mlp_extra_hidden: Vec<usize>,
    pub fusion: FusionMode,
    pub variant: Variant,
    pub alpha: f64,
    pub beta: f64,
    pub intervals_per_day: usize,
}

impl ModelConfig {
    pub fn new(height: usize, width: usize, intervals_per_day: usize) -> Self {
        Self {
            height,
            width,
            relation_dim: 256,
            closeness_len: CLOSENESS_LEN,
            component_len: COMPONENT_LEN,
            conv_filters: 32,
            conv_layers: 3,
            transformer_depth: 2,
            heads: 4,
            g_hidden: vec![256],
            mlp_r_hidden: vec![512],
            mlp_extra_hidden: vec![128],
            fusion: FusionMode::C5,
            variant: Variant::Full,
            alpha: 1.0,
            beta: 1.0,
            intervals_per_day,
        }
    }

    /// Sets `d_R` and rescales the hidden widths that default to multiples of it.
    pub fn with_relation_dim(mut self, d: usize) -> Self {
        self.relation_dim = d;
        self.g_hidden = vec![d];
        self.mlp_r_hidden = vec![2 * d];
        self
    }

    pub fn flow_len(&self) -> usize {
        2 * self.height * self.width
    }

    pub fn extra_len(&self) -> usize {
        self.intervals_per_day + 7
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return fail(format!("grid {}x{}", self.height, self.width));
        }
        if self.closeness_len != CLOSENESS_LEN || self.component_len != COMPONENT_LEN {
            return fail(format!(
                "component lengths must be closeness {CLOSENESS_LEN} and period/trend {COMPONENT_LEN}"
            ));
        }
        if self.relation_dim == 0 || !self.relation_dim.is_multiple_of(2) {
            return fail(format!("relation_dim {} must be even and positive", self.relation_dim));
        }
        if self.heads == 0 || !self.relation_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "relation_dim {} not divisible by {} heads",
                self.relation_dim, self.heads
            ));
        }
        if self.conv_filters == 0 || self.intervals_per_day == 0 {
            return fail("conv_filters and intervals_per_day must be positive".into());
        }
        if self.g_hidden.iter().chain(&self.mlp_r_hidden).chain(&self.mlp_extra_hidden).any(|&w| w == 0) {
            return fail("hidden widths must be positive".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail(format!("alpha {} and beta {} must be >= 0", self.alpha, self.beta));
        }
        match (self.variant, self.fusion) {
            (Variant::V1, FusionMode::C3) => fail("v1 has no short-term term, so c3 (W1 removed) is meaningless".into()),
            (Variant::V2, FusionMode::C2) => fail("v2 has no relation term, so c2 (W2 removed) is meaningless".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
        }
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("c9".parse::<FusionMode>().is_err());
    }

    #[test]
    fn table_of_enabled_weights() {
        let table: Vec<[bool; 3]> = FusionMode::ALL
            .iter()
            .map(|m| [0, 1, 2].map(|k| m.weight_enabled(k)))
            .collect();
        assert_eq!(
            table,
            vec![
                [true, true, true],
                [true, true, false],
                [true, false, true],
                [false, true, true],
                [false, false, false],
                [true, true, true],
            ]
        );
    }

    #[test]
    fn defaults_and_validation() {
        let c = ModelConfig::new(8, 8, 24);
        assert_eq!(c.relation_dim, 256);
        assert_eq!((c.alpha, c.beta), (1.0, 1.0));
        assert_eq!(c.fusion, FusionMode::C5);
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.heads = 3;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.variant = Variant::V2;
        bad.fusion = FusionMode::C2;
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.beta = -1.0;
        assert!(bad.validate().is_err());
    }
}
