//! Device model: opcodes, the register file that parameterizes them, and the
//! command-stream container produced by codegen and consumed by the
//! simulator. A command stream is a flat list of units; each unit writes some
//! registers and then issues one opcode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{DwMode, SubgraphKind};

/// Bytes the DMA engine moves per cycle between system memory and SRAM.
pub const BUS_BYTES_PER_CYCLE: u64 = 16;
/// A requantize issue on `n` elements takes `ceil(16n / pe_count)` cycles:
/// the multiply-shift-clamp pipeline is 16x narrower than the MAC array.
pub const REQUANT_LANE_DIVISOR: u64 = 16;
/// Fixed pipeline fill cost charged once per requantize issue.
pub const REQUANT_SETUP_CYCLES: u64 = 64;
/// `DMA_TENSOR` value addressing the subgraph's packed weight blob instead of
/// a boundary tensor.
pub const WEIGHTS_TENSOR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParallelMode {
    /// PEs split the reduction (input channel) axis.
    Input,
    /// PEs split the output channel axis.
    Output,
}

impl fmt::Display for ParallelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParallelMode::Input => "input",
            ParallelMode::Output => "output",
        })
    }
}

impl FromStr for ParallelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(ParallelMode::Input),
            "output" => Ok(ParallelMode::Output),
            other => Err(Error::Model(format!(
                "unknown parallel mode '{other}' (expected input or output)"
            ))),
        }
    }
}

/// One point in the design space the toolchain targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsaVariant {
    pub pe_count: u32,
    pub sram_bytes: u64,
    pub parallel_mode: ParallelMode,
    pub dw_mode: DwMode,
}

impl IsaVariant {
    pub fn validate(&self) -> Result<()> {
        if self.pe_count == 0 || self.pe_count > 4096 {
            return Err(Error::Model(format!(
                "pe count {} out of range (1..=4096)",
                self.pe_count
            )));
        }
        if self.sram_bytes < 1024 {
            return Err(Error::Model(format!(
                "sram size {} below the 1 KiB minimum",
                self.sram_bytes
            )));
        }
        Ok(())
    }
}

impl fmt::Display for IsaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} PEs, {} B sram, {}-parallel, dw {}",
            self.pe_count, self.sram_bytes, self.parallel_mode, self.dw_mode
        )
    }
}

macro_rules! registers {
    ($($variant:ident = $idx:literal => $name:literal),+ $(,)?) => {
        /// Register file layout. Indices are stable; they are the wire format.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[repr(u8)]
        pub enum Reg {
            $(#[serde(rename = $name)] $variant = $idx,)+
        }

        impl Reg {
            pub const COUNT: usize = [$($idx,)+].len();
            pub const ALL: [Reg; Self::COUNT] = [$(Reg::$variant,)+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Reg::$variant => $name,)+
                }
            }

            pub fn from_index(idx: u8) -> Option<Reg> {
                match idx {
                    $($idx => Some(Reg::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

registers! {
    InAddr = 0 => "IN_ADDR",
    InH = 1 => "IN_H",
    InW = 2 => "IN_W",
    InC = 3 => "IN_C",
    Src2Addr = 4 => "SRC2_ADDR",
    OutAddr = 5 => "OUT_ADDR",
    OutH = 6 => "OUT_H",
    OutW = 7 => "OUT_W",
    OutC = 8 => "OUT_C",
    WAddr = 9 => "W_ADDR",
    BAddr = 10 => "B_ADDR",
    KH = 11 => "K_H",
    KW = 12 => "K_W",
    Stride = 13 => "STRIDE",
    PadTop = 14 => "PAD_TOP",
    PadLeft = 15 => "PAD_LEFT",
    ReqEnable = 16 => "REQ_ENABLE",
    ReqM = 17 => "REQ_M",
    ReqShift = 18 => "REQ_SHIFT",
    ClampLo = 19 => "CLAMP_LO",
    ClampHi = 20 => "CLAMP_HI",
    ActM = 21 => "ACT_M",
    ActS = 22 => "ACT_S",
    PoolMode = 23 => "POOL_MODE",
    PoolK = 24 => "POOL_K",
    PoolStride = 25 => "POOL_STRIDE",
    PoolM = 26 => "POOL_M",
    PoolS = 27 => "POOL_S",
    ElemCount = 28 => "ELEM_COUNT",
    DmaTensor = 29 => "DMA_TENSOR",
    DmaOffset = 30 => "DMA_OFFSET",
    DmaSramAddr = 31 => "DMA_SRAM_ADDR",
    DmaRowBytes = 32 => "DMA_ROW_BYTES",
    DmaRowStride = 33 => "DMA_ROW_STRIDE",
    DmaRowCount = 34 => "DMA_ROW_COUNT",
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! opcodes {
    ($($variant:ident => $name:literal reads [$($reg:ident),*]),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum Opcode {
            $(#[serde(rename = $name)] $variant,)+
        }

        impl Opcode {
            pub const COUNT: usize = [$($name,)+].len();
            pub const ALL: [Opcode; Self::COUNT] = [$(Opcode::$variant,)+];

            pub fn name(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name,)+
                }
            }

            /// Registers the functional unit reads when this opcode issues.
            /// The stream validator requires each to be written beforehand.
            pub fn reads(self) -> &'static [Reg] {
                match self {
                    $(Opcode::$variant => &[$(Reg::$reg,)*],)+
                }
            }
        }
    };
}

opcodes! {
    Conv => "OP_CONV" reads [InAddr, InH, InW, InC, OutAddr, OutH, OutW, OutC, WAddr, BAddr, KH, KW, Stride, PadTop, PadLeft, ReqEnable],
    ConvRelu => "OP_CONV_RELU" reads [InAddr, InH, InW, InC, OutAddr, OutH, OutW, OutC, WAddr, BAddr, KH, KW, Stride, PadTop, PadLeft, ReqEnable],
    DepthConv => "OP_DEPTH_CONV" reads [InAddr, InH, InW, InC, OutAddr, OutH, OutW, OutC, WAddr, BAddr, KH, KW, Stride, PadTop, PadLeft, ReqEnable],
    MatMul => "OP_MAT_MUL" reads [InAddr, InC, OutAddr, OutC, WAddr, BAddr],
    ActRelu => "OP_ACT_RELU" reads [InAddr, OutAddr, ElemCount],
    ActLrelu => "OP_ACT_LRELU" reads [InAddr, OutAddr, ElemCount, ActM, ActS],
    Pool => "OP_POOL" reads [InAddr, InH, InW, InC, OutAddr, OutH, OutW, PoolMode, PoolK, PoolStride, PoolM, PoolS],
    EAbs => "OP_E_ABS" reads [InAddr, OutAddr, ElemCount],
    CMin => "OP_C_MIN" reads [InAddr, Src2Addr, OutAddr, ElemCount],
    CMax => "OP_C_MAX" reads [InAddr, Src2Addr, OutAddr, ElemCount],
    EAdd => "OP_E_ADD" reads [InAddr, Src2Addr, OutAddr, ElemCount],
    E32Add => "OP_E32_ADD" reads [InAddr, Src2Addr, OutAddr, ElemCount],
    DmaRead => "OP_DMA_READ" reads [DmaTensor, DmaOffset, DmaSramAddr, DmaRowBytes, DmaRowStride, DmaRowCount],
    DmaWrite => "OP_DMA_WRITE" reads [DmaTensor, DmaOffset, DmaSramAddr, DmaRowBytes, DmaRowStride, DmaRowCount],
    Requant => "OP_REQUANT" reads [InAddr, OutAddr, ElemCount, ReqM, ReqShift, ClampLo, ClampHi],
}

impl Opcode {
    pub fn is_dma(self) -> bool {
        matches!(self, Opcode::DmaRead | Opcode::DmaWrite)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegWrite {
    pub reg: Reg,
    pub value: u32,
}

/// Register writes followed by one opcode issue. `class` records which
/// workload the issue belongs to (the class of the source graph node), so
/// reports can split cycles by layer type even when, say, a depthwise layer
/// is emulated with plain convolution issues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamUnit {
    pub regs: Vec<RegWrite>,
    pub op: Opcode,
    pub class: SubgraphKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandStream {
    pub variant: IsaVariant,
    pub subgraph_id: u32,
    pub kind: SubgraphKind,
    pub units: Vec<StreamUnit>,
}

impl CommandStream {
    pub fn register_writes(&self) -> u64 {
        self.units.iter().map(|u| u.regs.len() as u64).sum()
    }

    pub fn issues(&self) -> usize {
        self.units.len()
    }
}

/// Two's-complement packing for signed register payloads.
pub fn encode_i32(v: i32) -> u32 {
    v as u32
}

pub fn decode_i32(v: u32) -> i32 {
    v as i32
}
