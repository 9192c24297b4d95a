//! Simulated color-mixing lab: a 12-well plate, three dyes, a pipette wash
//! station and a camera. Mixtures follow Beer–Lambert attenuation per
//! linear-RGB channel with volume-fraction concentrations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use labmcp_color::{parse_hex, srgb_delta_e, SrgbColor};
use labmcp_protocol::{
    ContentBlock, InputSchema, PropertySchema, ServerError, ServerIdentity, ToolCallResult,
    ToolDescriptor, ToolServer,
};
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{number_arg, string_arg, svg};

pub const WELLS: usize = 12;
pub const MAX_DISPENSE_ML: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dye {
    Red,
    Yellow,
    Blue,
}

impl Dye {
    pub const ALL: [Dye; 3] = [Dye::Red, Dye::Yellow, Dye::Blue];

    pub fn name(self) -> &'static str {
        match self {
            Dye::Red => "red",
            Dye::Yellow => "yellow",
            Dye::Blue => "blue",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dye {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "red" => Ok(Dye::Red),
            "yellow" => Ok(Dye::Yellow),
            "blue" => Ok(Dye::Blue),
            _ => Err(SimError::UnknownDye(s.to_owned())),
        }
    }
}

/// Optical density per linear-RGB channel of each pure dye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyeModel {
    pub red: [f64; 3],
    pub yellow: [f64; 3],
    pub blue: [f64; 3],
}

impl Default for DyeModel {
    /// Calibrated by brute force over the 5%-step ternary grid so that both
    /// #6A4C9C and #D6C6AF lie within ΔE00 ≈ 1.1 of their closest grid mixture.
    /// Pure dyes render as #ED3562, #F5F7B0 and #325EE1.
    fn default() -> Self {
        Self {
            red: [0.17, 3.34, 2.11],
            yellow: [0.09, 0.07, 0.84],
            blue: [3.44, 2.18, 0.28],
        }
    }
}

impl DyeModel {
    pub fn density(&self, dye: Dye) -> [f64; 3] {
        match dye {
            Dye::Red => self.red,
            Dye::Yellow => self.yellow,
            Dye::Blue => self.blue,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for dye in Dye::ALL {
            if self.density(dye).iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(SimError::Config(format!(
                    "{dye} densities must be finite and non-negative"
                )));
            }
        }
        if self.red == self.yellow || self.red == self.blue || self.yellow == self.blue {
            return Err(SimError::Config("dye densities must be distinct".into()));
        }
        Ok(())
    }

    /// Noise-free linear RGB of a mixture with the given per-dye volumes.
    /// Returns `None` for an empty well.
    pub fn mix_linear(&self, volumes: [f64; 3]) -> Option<[f64; 3]> {
        let total: f64 = volumes.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut out = [0.0; 3];
        for (k, channel) in out.iter_mut().enumerate() {
            let od: f64 = Dye::ALL
                .iter()
                .map(|d| volumes[d.index()] / total * self.density(*d)[k])
                .sum();
            *channel = (-od).exp();
        }
        Some(out)
    }

    pub fn mix(&self, volumes: [f64; 3]) -> Option<SrgbColor> {
        self.mix_linear(volumes).map(SrgbColor::from_linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-channel Gaussian noise in linear RGB.
    pub stddev: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            stddev: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimLabConfig {
    #[serde(default)]
    pub dyes: DyeModel,
    #[serde(default)]
    pub noise: NoiseConfig,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown dye {0:?}; expected red, yellow or blue")]
    UnknownDye(String),
    #[error("volume {0} mL is outside 0..={MAX_DISPENSE_ML}")]
    Volume(f64),
    #[error("well {0} is not a well number between 1 and {WELLS}")]
    Well(f64),
    #[error("nothing to measure in well {0}")]
    EmptyWell(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Plate state for one server process.
#[derive(Debug)]
pub struct Plate {
    config: SimLabConfig,
    wells: [[f64; 3]; WELLS],
    washes: u32,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

fn well_index(well: f64) -> Result<usize, SimError> {
    if well.fract() != 0.0 || !(1.0..=WELLS as f64).contains(&well) {
        return Err(SimError::Well(well));
    }
    Ok(well as usize - 1)
}

impl Plate {
    pub fn new(config: SimLabConfig) -> Result<Self, SimError> {
        config.dyes.validate()?;
        if !(config.noise.stddev.is_finite() && config.noise.stddev >= 0.0) {
            return Err(SimError::Config("noise stddev must be >= 0".into()));
        }
        let noise = (config.noise.stddev > 0.0)
            .then(|| Normal::new(0.0, config.noise.stddev).expect("stddev checked"));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.noise.seed),
            config,
            wells: [[0.0; 3]; WELLS],
            washes: 0,
            noise,
        })
    }

    pub fn dyes(&self) -> &DyeModel {
        &self.config.dyes
    }

    /// Volumes (red, yellow, blue) in well 1..=12.
    pub fn well(&self, well: usize) -> Option<[f64; 3]> {
        self.wells.get(well.checked_sub(1)?).copied()
    }

    pub fn dispense(&mut self, dye: &str, volume_ml: f64, well: f64) -> Result<String, SimError> {
        let dye: Dye = dye.parse()?;
        if !(0.0..=MAX_DISPENSE_ML).contains(&volume_ml) {
            return Err(SimError::Volume(volume_ml));
        }
        let idx = well_index(well)?;
        self.wells[idx][dye.index()] += volume_ml;
        let [r, y, b] = self.wells[idx];
        Ok(format!(
            "dispensed {volume_ml} mL {dye} into well {}; totals red={r} yellow={y} blue={b} mL",
            idx + 1
        ))
    }

    pub fn measure(&mut self, well: f64) -> Result<SrgbColor, SimError> {
        let idx = well_index(well)?;
        let mut linear = self
            .config
            .dyes
            .mix_linear(self.wells[idx])
            .ok_or(SimError::EmptyWell(idx + 1))?;
        if let Some(noise) = &self.noise {
            for c in &mut linear {
                *c += noise.sample(&mut self.rng);
            }
        }
        Ok(SrgbColor::from_linear(linear))
    }

    pub fn wash(&mut self) -> u32 {
        self.washes += 1;
        self.washes
    }

    pub fn washes(&self) -> u32 {
        self.washes
    }

    pub fn reset(&mut self) {
        self.wells = [[0.0; 3]; WELLS];
        self.washes = 0;
        self.rng = ChaCha8Rng::seed_from_u64(self.config.noise.seed);
    }
}

fn reply(result: Result<String, SimError>) -> ToolCallResult {
    match result {
        Ok(text) => ToolCallResult::text(text),
        Err(e) => ToolCallResult::error(e.to_string()),
    }
}

/// Text rendering of ΔE00 between two hex colors.
pub fn color_difference_text(hex_a: &str, hex_b: &str) -> Result<String, String> {
    let a = parse_hex(hex_a).map_err(|e| e.to_string())?;
    let b = parse_hex(hex_b).map_err(|e| e.to_string())?;
    Ok(srgb_delta_e(a, b).value().to_string())
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    let well = || PropertySchema::number().describe("Well number, 1-12");
    vec![
        ToolDescriptor::new(
            "dispense",
            "Dispense a volume of one dye into a well of the mixing plate",
            InputSchema::new()
                .property("dye", PropertySchema::string().describe("red, yellow or blue"), true)
                .property("volume_ml", PropertySchema::number().describe("Volume in mL, 0-2"), true)
                .property("well", well(), true),
        ),
        ToolDescriptor::new(
            "measure_color",
            "Photograph a well and report the mixture color as hex",
            InputSchema::new().property("well", well(), true),
        ),
        ToolDescriptor::new("wash", "Rinse the pipette tip", InputSchema::new()),
        ToolDescriptor::new(
            "move_to",
            "Move the arm above a well (no effect in simulation)",
            InputSchema::new().property("well", well(), true),
        ),
        ToolDescriptor::new(
            "reset_plate",
            "Empty every well and zero the counters",
            InputSchema::new(),
        ),
        ToolDescriptor::new(
            "color_difference",
            "CIEDE2000 color difference between two hex colors",
            InputSchema::new()
                .property("hex_a", PropertySchema::string(), true)
                .property("hex_b", PropertySchema::string(), true),
        ),
    ]
}

pub fn server(config: SimLabConfig) -> Result<(ToolServer, Arc<Mutex<Plate>>), ServerError> {
    let plate = Plate::new(config).map_err(|e| ServerError::InvalidDescriptor(e.to_string()))?;
    let plate = Arc::new(Mutex::new(plate));
    let mut server = ToolServer::new(ServerIdentity::new("simlab", env!("CARGO_PKG_VERSION")))?;
    let mut descs = descriptors().into_iter();
    let mut next = || descs.next().expect("descriptor list matches handlers");

    let p = plate.clone();
    server = server.with_tool(next(), move |args| {
        reply(p.lock().dispense(
            string_arg(args, "dye"),
            number_arg(args, "volume_ml"),
            number_arg(args, "well"),
        ))
    })?;

    let p = plate.clone();
    server = server.with_tool(next(), move |args| {
        let well = number_arg(args, "well");
        match p.lock().measure(well) {
            Ok(color) => ToolCallResult::text(color.to_hex())
                .with(ContentBlock::svg(&svg::swatch(color, &format!("well {well}")))),
            Err(e) => ToolCallResult::error(e.to_string()),
        }
    })?;

    let p = plate.clone();
    server = server.with_tool(next(), move |_| {
        ToolCallResult::text(format!("washed (n={})", p.lock().wash()))
    })?;

    server = server.with_tool(next(), move |args| {
        let well = number_arg(args, "well");
        reply(well_index(well).map(|i| format!("arm at well {}", i + 1)))
    })?;

    let p = plate.clone();
    server = server.with_tool(next(), move |_| {
        p.lock().reset();
        ToolCallResult::text(format!("plate reset: {WELLS} wells empty"))
    })?;

    server = server.with_tool(next(), move |args| {
        match color_difference_text(string_arg(args, "hex_a"), string_arg(args, "hex_b")) {
            Ok(text) => ToolCallResult::text(text),
            Err(e) => ToolCallResult::error(e),
        }
    })?;

    Ok((server, plate))
}
