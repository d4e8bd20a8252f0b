use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Tcnn,
    Tdnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    OdeTcnn20,
    OdeTcnn30,
    OdeTdnn32,
    OdeTdnn29,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::OdeTcnn20,
        Variant::OdeTcnn30,
        Variant::OdeTdnn32,
        Variant::OdeTdnn29,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OdeTcnn20 => "ode-tcnn20",
            Variant::OdeTcnn30 => "ode-tcnn30",
            Variant::OdeTdnn32 => "ode-tdnn32",
            Variant::OdeTdnn29 => "ode-tdnn29",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Variant::OdeTcnn20 | Variant::OdeTcnn30 => Family::Tcnn,
            Variant::OdeTdnn32 | Variant::OdeTdnn29 => Family::Tdnn,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

pub const INPUT_FRAMES: usize = 101;
pub const INPUT_COEFFS: usize = 40;
pub const N_CLASSES: usize = 12;

/// Per-variant architecture and solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Channels (TCNN) or dimensionality (TDNN) inside the network.
    pub width: usize,
    pub depth_t: f64,
    pub train_tolerance: f64,
    pub infer_tolerance: f64,
    pub n_classes: usize,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        let (width, depth_t, infer_tolerance) = match variant {
            Variant::OdeTcnn20 => (20, 1.0, 0.5),
            Variant::OdeTcnn30 => (30, 1.0, 0.5),
            Variant::OdeTdnn32 => (32, 3.0, 1e-2),
            Variant::OdeTdnn29 => (29, 3.0, 5e-3),
        };
        Self {
            variant,
            width,
            depth_t,
            train_tolerance: 1e-3,
            infer_tolerance,
            n_classes: N_CLASSES,
        }
    }

    pub fn family(&self) -> Family {
        self.variant.family()
    }

    /// Table-style layer list, input to output.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let w = self.width;
        match self.family() {
            Family::Tcnn => vec![
                LayerSpec::conv("stem", LayerKind::Conv, 3, 1, 1, INPUT_COEFFS, w, 101, false),
                LayerSpec::pool("pool", 4, 4, w, 25),
                LayerSpec::conv("ode.conv1", LayerKind::Conv, 9, 1, 4, w, w, 25, true),
                LayerSpec::conv("ode.conv2", LayerKind::Conv, 9, 1, 4, w, w, 25, true),
                LayerSpec::conv("ode.conv3", LayerKind::Conv, 1, 1, 0, w, w, 25, true),
                LayerSpec::pool("gap", 25, 25, w, 1),
                LayerSpec::conv("fc", LayerKind::Fc, 1, 1, 0, w, self.n_classes, 1, false),
            ],
            Family::Tdnn => vec![
                LayerSpec::conv("stem", LayerKind::TdnnSub, 3, 3, 1, INPUT_COEFFS, w, 34, false),
                LayerSpec::conv("ode.tdnn", LayerKind::Tdnn, 3, 1, 1, w, w, 34, true),
                LayerSpec::pool("gap", 34, 34, w, 1),
                LayerSpec::conv("fc", LayerKind::Fc, 1, 1, 0, w, self.n_classes, 1, false),
            ],
        }
    }

    /// State length inside the ODE block.
    pub fn state_len(&self) -> usize {
        match self.family() {
            Family::Tcnn => 25,
            Family::Tdnn => 34,
        }
    }

    pub fn cost(&self) -> CostReport {
        let rows: Vec<CostRow> = self
            .layers()
            .iter()
            .map(|l| CostRow {
                name: l.name.clone(),
                kind: l.kind,
                kernel: l.kernel,
                stride: l.stride,
                channels: l.c_out,
                out_len: l.out_len,
                params: l.params(),
                mults: l.mults(),
                in_ode: l.in_ode,
            })
            .collect();
        let total_params = rows.iter().map(|r| r.params).sum();
        let mults_fixed = rows.iter().filter(|r| !r.in_ode).map(|r| r.mults).sum();
        let mults_per_eval = rows.iter().filter(|r| r.in_ode).map(|r| r.mults).sum();
        CostReport {
            variant: self.variant,
            rows,
            total_params,
            mults_fixed,
            mults_per_eval,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    AvgPool,
    Tdnn,
    TdnnSub,
    Fc,
}

impl LayerKind {
    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Conv => "Conv",
            LayerKind::AvgPool => "Avg. pool",
            LayerKind::Tdnn => "TDNN",
            LayerKind::TdnnSub => "TDNN-SUB",
            LayerKind::Fc => "FC",
        }
    }
}

/// One row of the architecture table. Kernel height `r` is always 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Kernel width `m` or TDNN window `w`.
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub out_len: usize,
    pub in_ode: bool,
}

impl LayerSpec {
    #[allow(clippy::too_many_arguments)]
    fn conv(
        name: &str,
        kind: LayerKind,
        kernel: usize,
        stride: usize,
        padding: usize,
        c_in: usize,
        c_out: usize,
        out_len: usize,
        in_ode: bool,
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            kernel,
            stride,
            padding,
            c_in,
            c_out,
            out_len,
            in_ode,
        }
    }

    fn pool(name: &str, window: usize, stride: usize, c: usize, out_len: usize) -> Self {
        Self::conv(name, LayerKind::AvgPool, window, stride, 0, c, c, out_len, false)
    }

    pub fn params(&self) -> u64 {
        match self.kind {
            LayerKind::AvgPool => 0,
            _ => (self.kernel * self.c_in * self.c_out) as u64,
        }
    }

    /// Kernel elements times output positions; padding-edge products are
    /// counted like any other.
    pub fn mults(&self) -> u64 {
        self.params() * self.out_len as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub out_len: usize,
    pub params: u64,
    pub mults: u64,
    pub in_ode: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub variant: Variant,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    /// Multiplies outside the ODE block, classifier included.
    pub mults_fixed: u64,
    /// Multiplies of one dynamics evaluation.
    pub mults_per_eval: u64,
}

impl CostReport {
    pub fn total_mults(&self, nfe: u64) -> u64 {
        self.mults_fixed + self.mults_per_eval * nfe
    }

    /// Total multiplies at a fractional (mean) NFE, rounded to the nearest
    /// integer.
    pub fn total_mults_at(&self, mean_nfe: f64) -> u64 {
        (self.mults_fixed as f64 + self.mults_per_eval as f64 * mean_nfe).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_totals() {
        let totals: Vec<u64> = Variant::ALL
            .iter()
            .map(|&v| ModelSpec::new(v).cost().total_params)
            .collect();
        assert_eq!(totals, vec![10_240, 21_060, 7_296, 6_351]);
    }

    #[test]
    fn tcnn20_rows() {
        let cost = ModelSpec::new(Variant::OdeTcnn20).cost();
        let p: Vec<u64> = cost.rows.iter().map(|r| r.params).collect();
        let m: Vec<u64> = cost.rows.iter().map(|r| r.mults).collect();
        assert_eq!(p, vec![2400, 0, 3600, 3600, 400, 0, 240]);
        assert_eq!(m, vec![242_400, 0, 90_000, 90_000, 10_000, 0, 240]);
        assert_eq!(cost.mults_per_eval, 190_000);
        assert_eq!(cost.total_mults(20), 4_042_640);
        assert_eq!(cost.total_mults(0), 242_640);
    }

    #[test]
    fn tdnn_rows() {
        let cost = ModelSpec::new(Variant::OdeTdnn32).cost();
        assert_eq!(cost.rows[0].mults, 130_560);
        assert_eq!(cost.mults_per_eval, 104_448);
        assert_eq!(cost.rows.last().unwrap().mults, 384);
        assert_eq!(cost.total_mults(0), 130_944);
        assert_eq!(ModelSpec::new(Variant::OdeTdnn29).cost().mults_per_eval, 3 * 29 * 29 * 34);
        assert_eq!(3 * 29 * 29 * 34, 85_782);
    }

    #[test]
    fn variant_settings() {
        let s = ModelSpec::new(Variant::OdeTcnn30);
        assert_eq!((s.width, s.depth_t, s.infer_tolerance), (30, 1.0, 0.5));
        let s = ModelSpec::new(Variant::OdeTdnn29);
        assert_eq!((s.width, s.depth_t, s.infer_tolerance), (29, 3.0, 5e-3));
        assert_eq!(s.train_tolerance, 1e-3);
        assert_eq!("ode-tdnn32".parse::<Variant>().unwrap(), Variant::OdeTdnn32);
        assert!("ode-tcnn40".parse::<Variant>().is_err());
    }
}
