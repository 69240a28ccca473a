//! The 56-counter Autophase feature vector.
//!
//! Semantics that the feature names leave open are pinned here and by the
//! fixture tests: returnInt counts call-like instructions (including invoke)
//! whose result type is a plain integer type; TotalMemInst covers load,
//! store, alloca and getelementptr; testUnary counts fneg.

use super::parser::{BasicBlock, Instruction, IrModule};

pub const FEATURE_COUNT: usize = 56;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "BBNumArgsHi",
    "BBNumArgsLo",
    "onePred",
    "onePredOneSuc",
    "onePredTwoSuc",
    "oneSuccessor",
    "twoPred",
    "twoPredOneSuc",
    "twoEach",
    "twoSuccessor",
    "morePreds",
    "BB03Phi",
    "BBHiPhi",
    "BBNoPhi",
    "BeginPhi",
    "BranchCount",
    "returnInt",
    "CriticalCount",
    "NumEdges",
    "const32Bit",
    "const64Bit",
    "numConstZeroes",
    "numConstOnes",
    "UncondBranches",
    "binaryConstArg",
    "NumAShrInst",
    "NumAddInst",
    "NumAllocaInst",
    "NumAndInst",
    "BlockMid",
    "BlockLow",
    "NumBitCastInst",
    "NumBrInst",
    "NumCallInst",
    "NumGetElementPtrInst",
    "NumICmpInst",
    "NumLShrInst",
    "NumLoadInst",
    "NumMulInst",
    "NumOrInst",
    "NumPHIInst",
    "NumRetInst",
    "NumSExtInst",
    "NumSelectInst",
    "NumShlInst",
    "NumStoreInst",
    "NumSubInst",
    "NumTruncInst",
    "NumXorInst",
    "NumZExtInst",
    "TotalBlocks",
    "TotalInsts",
    "TotalMemInst",
    "TotalFuncs",
    "ArgsPhi",
    "testUnary",
];

pub mod idx {
    pub const BB_NUM_ARGS_HI: usize = 0;
    pub const BB_NUM_ARGS_LO: usize = 1;
    pub const ONE_PRED: usize = 2;
    pub const ONE_PRED_ONE_SUC: usize = 3;
    pub const ONE_PRED_TWO_SUC: usize = 4;
    pub const ONE_SUCCESSOR: usize = 5;
    pub const TWO_PRED: usize = 6;
    pub const TWO_PRED_ONE_SUC: usize = 7;
    pub const TWO_EACH: usize = 8;
    pub const TWO_SUCCESSOR: usize = 9;
    pub const MORE_PREDS: usize = 10;
    pub const BB_03_PHI: usize = 11;
    pub const BB_HI_PHI: usize = 12;
    pub const BB_NO_PHI: usize = 13;
    pub const BEGIN_PHI: usize = 14;
    pub const BRANCH_COUNT: usize = 15;
    pub const RETURN_INT: usize = 16;
    pub const CRITICAL_COUNT: usize = 17;
    pub const NUM_EDGES: usize = 18;
    pub const CONST_32BIT: usize = 19;
    pub const CONST_64BIT: usize = 20;
    pub const NUM_CONST_ZEROES: usize = 21;
    pub const NUM_CONST_ONES: usize = 22;
    pub const UNCOND_BRANCHES: usize = 23;
    pub const BINARY_CONST_ARG: usize = 24;
    pub const BLOCK_MID: usize = 29;
    pub const BLOCK_LOW: usize = 30;
    pub const TOTAL_BLOCKS: usize = 50;
    pub const TOTAL_INSTS: usize = 51;
    pub const TOTAL_MEM_INST: usize = 52;
    pub const TOTAL_FUNCS: usize = 53;
    pub const ARGS_PHI: usize = 54;
    pub const TEST_UNARY: usize = 55;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutophaseFeatures {
    pub values: [u64; FEATURE_COUNT],
}

impl AutophaseFeatures {
    pub fn zeros() -> Self {
        AutophaseFeatures {
            values: [0; FEATURE_COUNT],
        }
    }

    pub fn total_insts(&self) -> u64 {
        self.values[idx::TOTAL_INSTS]
    }
}

const BINARY_OPS: [&str; 18] = [
    "add", "fadd", "sub", "fsub", "mul", "fmul", "udiv", "sdiv", "fdiv", "urem", "srem", "frem",
    "shl", "lshr", "ashr", "and", "or", "xor",
];

fn opcode_slot(opcode: &str) -> Option<usize> {
    Some(match opcode {
        "ashr" => 25,
        "add" => 26,
        "alloca" => 27,
        "and" => 28,
        "bitcast" => 31,
        "br" => 32,
        "call" | "invoke" | "callbr" => 33,
        "getelementptr" => 34,
        "icmp" => 35,
        "lshr" => 36,
        "load" => 37,
        "mul" => 38,
        "or" => 39,
        "phi" => 40,
        "ret" => 41,
        "sext" => 42,
        "select" => 43,
        "shl" => 44,
        "store" => 45,
        "sub" => 46,
        "trunc" => 47,
        "xor" => 48,
        "zext" => 49,
        _ => return None,
    })
}

fn is_plain_int_type(t: &str) -> bool {
    t.len() > 1 && t.starts_with('i') && t[1..].chars().all(|c| c.is_ascii_digit())
}

/// Incoming arms of a phi: each arm closes with `%block ]`, so arms equal
/// the number of block references sitting directly before a closing bracket.
fn phi_incoming_count(inst: &Instruction) -> u64 {
    let toks = &inst.operands;
    let mut arms = 0;
    for (i, t) in toks.iter().enumerate() {
        if !t.starts_with('%') {
            continue;
        }
        let closes_here = t.trim_end_matches(',').ends_with(']');
        let next_closes = toks
            .get(i + 1)
            .map(|n| n.starts_with(']'))
            .unwrap_or(false);
        if closes_here || next_closes {
            arms += 1;
        }
    }
    arms
}

fn has_float_literal(inst: &Instruction) -> bool {
    inst.operands.iter().any(|t| {
        let c = t.trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | ',' | '<' | '>'));
        if c.starts_with("0x") {
            return c[2..].chars().all(|ch| ch.is_ascii_hexdigit());
        }
        c.contains('.') && c.parse::<f64>().is_ok()
    })
}

pub fn extract_autophase(m: &IrModule) -> AutophaseFeatures {
    let mut f = AutophaseFeatures::zeros();
    let v = &mut f.values;
    for func in &m.functions {
        v[idx::TOTAL_FUNCS] += 1;
        for block in &func.blocks {
            extract_block(block, v);
        }
        // Critical edges need both endpoints' degrees.
        for block in &func.blocks {
            if block.successors.len() < 2 {
                continue;
            }
            for succ in &block.successors {
                let target = func.blocks.iter().find(|b| &b.label == succ);
                if let Some(t) = target {
                    if t.predecessors.len() >= 2 {
                        v[idx::CRITICAL_COUNT] += 1;
                    }
                }
            }
        }
    }
    f
}

fn extract_block(block: &BasicBlock, v: &mut [u64; FEATURE_COUNT]) {
    v[idx::TOTAL_BLOCKS] += 1;
    let npred = block.predecessors.len();
    let nsucc = block.successors.len();
    v[idx::NUM_EDGES] += nsucc as u64;
    match npred {
        1 => v[idx::ONE_PRED] += 1,
        2 => v[idx::TWO_PRED] += 1,
        n if n > 2 => v[idx::MORE_PREDS] += 1,
        _ => {}
    }
    if nsucc == 1 {
        v[idx::ONE_SUCCESSOR] += 1;
    }
    if nsucc == 2 {
        v[idx::TWO_SUCCESSOR] += 1;
    }
    if npred == 1 && nsucc == 1 {
        v[idx::ONE_PRED_ONE_SUC] += 1;
    }
    if npred == 1 && nsucc == 2 {
        v[idx::ONE_PRED_TWO_SUC] += 1;
    }
    if npred == 2 && nsucc == 1 {
        v[idx::TWO_PRED_ONE_SUC] += 1;
    }
    if npred == 2 && nsucc == 2 {
        v[idx::TWO_EACH] += 1;
    }

    let mut phi_count = 0u64;
    let mut phi_args = 0u64;
    for (i, inst) in block.instructions.iter().enumerate() {
        v[idx::TOTAL_INSTS] += 1;
        if let Some(slot) = opcode_slot(&inst.opcode) {
            v[slot] += 1;
        }
        match inst.opcode.as_str() {
            "phi" => {
                phi_count += 1;
                let args = phi_incoming_count(inst);
                phi_args += args;
                v[idx::ARGS_PHI] += args;
                if i == 0 {
                    v[idx::BEGIN_PHI] += 1;
                }
            }
            "br" => {
                v[idx::BRANCH_COUNT] += 1;
                if block.successors.len() == 1 && !inst.operands.iter().any(|t| t == "i1") {
                    v[idx::UNCOND_BRANCHES] += 1;
                }
            }
            "load" | "store" | "alloca" | "getelementptr" => {
                v[idx::TOTAL_MEM_INST] += 1;
            }
            "fneg" => v[idx::TEST_UNARY] += 1,
            "call" | "invoke" | "callbr" => {
                if inst
                    .result_type
                    .as_deref()
                    .map(is_plain_int_type)
                    .unwrap_or(false)
                {
                    v[idx::RETURN_INT] += 1;
                }
            }
            _ => {}
        }
        for c in &inst.int_consts {
            match c.width {
                Some(32) => v[idx::CONST_32BIT] += 1,
                Some(64) => v[idx::CONST_64BIT] += 1,
                _ => {}
            }
            if c.value == 0 {
                v[idx::NUM_CONST_ZEROES] += 1;
            }
            if c.value == 1 {
                v[idx::NUM_CONST_ONES] += 1;
            }
        }
        if BINARY_OPS.contains(&inst.opcode.as_str())
            && (!inst.int_consts.is_empty() || has_float_literal(inst))
        {
            v[idx::BINARY_CONST_ARG] += 1;
        }
    }
    match phi_count {
        0 => v[idx::BB_NO_PHI] += 1,
        1..=3 => v[idx::BB_03_PHI] += 1,
        _ => v[idx::BB_HI_PHI] += 1,
    }
    match phi_args {
        0 => {}
        1..=5 => v[idx::BB_NUM_ARGS_LO] += 1,
        _ => v[idx::BB_NUM_ARGS_HI] += 1,
    }
    let ninst = block.instructions.len();
    if ninst < 15 {
        v[idx::BLOCK_LOW] += 1;
    } else if ninst <= 500 {
        v[idx::BLOCK_MID] += 1;
    }
}

pub fn instruction_count(m: &IrModule) -> u64 {
    extract_autophase(m).total_insts()
}
