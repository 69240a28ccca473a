//! Line-oriented parser for textual LLVM IR.
//!
//! Deliberately tolerant: it recovers opcodes, a few operand classes, phi
//! arity, integer literals, and the CFG. Unknown opcodes are recorded
//! verbatim. That is everything feature extraction needs; full IR semantics
//! are out of scope.

use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntConst {
    /// Bit width of the nearest preceding integer type token, if any.
    pub width: Option<u32>,
    pub value: i128,
}

#[derive(Clone, Debug)]
pub struct Instruction {
    pub opcode: String,
    pub operands: Vec<String>,
    pub result_type: Option<String>,
    pub int_consts: Vec<IntConst>,
    pub is_terminator: bool,
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
    pub successors: Vec<String>,
    pub predecessors: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct IrFunction {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
}

#[derive(Clone, Debug)]
pub struct IrModule {
    pub functions: Vec<IrFunction>,
}

pub const IMPLICIT_ENTRY_LABEL: &str = "__entry__";

const TERMINATORS: [&str; 11] = [
    "ret",
    "br",
    "switch",
    "indirectbr",
    "invoke",
    "callbr",
    "resume",
    "unreachable",
    "cleanupret",
    "catchret",
    "catchswitch",
];

/// Words that may precede the opcode or the result type of an instruction.
const MODIFIERS: [&str; 30] = [
    "tail",
    "musttail",
    "notail",
    "volatile",
    "atomic",
    "inbounds",
    "nuw",
    "nsw",
    "exact",
    "fast",
    "nnan",
    "ninf",
    "nsz",
    "arcp",
    "contract",
    "afn",
    "reassoc",
    "zeroext",
    "signext",
    "inreg",
    "noalias",
    "nonnull",
    "dereferenceable",
    "ccc",
    "fastcc",
    "coldcc",
    "swiftcc",
    "cxx_fast_tlscc",
    "spir_func",
    "spir_kernel",
];

pub fn parse_ir(text: &str) -> Result<IrModule, ParseError> {
    let mut functions = Vec::new();
    let mut current: Option<FunctionBuilder> = None;

    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let lineno = idx + 1;
        let line = strip_comment(raw).trim().to_string();
        if line.is_empty() {
            continue;
        }
        match current.as_mut() {
            None => {
                if line.starts_with("define") {
                    let name = function_name(&line).unwrap_or_else(|| "anonymous".to_string());
                    if line.ends_with("{}") {
                        functions.push(IrFunction {
                            name,
                            blocks: Vec::new(),
                        });
                        continue;
                    }
                    let mut fb = FunctionBuilder::new(name, lineno);
                    if !line.ends_with('{') {
                        // Signature split across lines: scan forward to the brace.
                        let mut found = false;
                        for (_, cont) in lines.by_ref() {
                            if strip_comment(cont).trim_end().ends_with('{') {
                                found = true;
                                break;
                            }
                        }
                        if !found {
                            return Err(err(lineno, "function define without body"));
                        }
                    }
                    fb.open_line = lineno;
                    current = Some(fb);
                }
                // declarations, globals, metadata, target lines: no blocks
            }
            Some(fb) => {
                if line == "}" {
                    let fb = current.take().unwrap();
                    functions.push(fb.finish(lineno)?);
                } else if let Some(label) = block_label(&line) {
                    fb.start_block(label, lineno)?;
                } else if is_continuation(&line) {
                    fb.append_to_last(&line, lineno)?;
                } else {
                    fb.push_instruction(&line, lineno)?;
                }
            }
        }
    }
    if let Some(fb) = current {
        return Err(err(fb.open_line, "unclosed function body"));
    }
    Ok(IrModule { functions })
}

struct FunctionBuilder {
    name: String,
    open_line: usize,
    blocks: Vec<PendingBlock>,
}

struct PendingBlock {
    label: String,
    start_line: usize,
    raw_instructions: Vec<(String, usize)>,
}

impl FunctionBuilder {
    fn new(name: String, open_line: usize) -> Self {
        FunctionBuilder {
            name,
            open_line,
            blocks: Vec::new(),
        }
    }

    fn check_last_terminated(&self, lineno: usize) -> Result<(), ParseError> {
        if let Some(b) = self.blocks.last() {
            match b.raw_instructions.last() {
                Some((text, _)) if is_terminator_text(text) => Ok(()),
                Some((_, l)) => Err(err(*l, format!("block '{}' not terminated", b.label))),
                None => Err(err(
                    lineno.saturating_sub(1).max(b.start_line),
                    format!("empty block '{}'", b.label),
                )),
            }
        } else {
            Ok(())
        }
    }

    fn start_block(&mut self, label: String, lineno: usize) -> Result<(), ParseError> {
        self.check_last_terminated(lineno)?;
        if self.blocks.iter().any(|b| b.label == label) {
            return Err(err(lineno, format!("duplicate block label '{label}'")));
        }
        self.blocks.push(PendingBlock {
            label,
            start_line: lineno,
            raw_instructions: Vec::new(),
        });
        Ok(())
    }

    fn push_instruction(&mut self, line: &str, lineno: usize) -> Result<(), ParseError> {
        if self.blocks.is_empty() {
            self.blocks.push(PendingBlock {
                label: IMPLICIT_ENTRY_LABEL.to_string(),
                start_line: lineno,
                raw_instructions: Vec::new(),
            });
        }
        let block = self.blocks.last_mut().unwrap();
        if let Some((prev, prev_line)) = block.raw_instructions.last() {
            if is_terminator_text(prev) {
                let _ = prev_line;
                return Err(err(lineno, "instruction after terminator"));
            }
        }
        block.raw_instructions.push((line.to_string(), lineno));
        Ok(())
    }

    fn append_to_last(&mut self, line: &str, lineno: usize) -> Result<(), ParseError> {
        let block = self
            .blocks
            .last_mut()
            .ok_or_else(|| err(lineno, "continuation outside a block"))?;
        let (text, _) = block
            .raw_instructions
            .last_mut()
            .ok_or_else(|| err(lineno, "continuation without an instruction"))?;
        text.push(' ');
        text.push_str(line);
        Ok(())
    }

    fn finish(self, close_line: usize) -> Result<IrFunction, ParseError> {
        self.check_last_terminated(close_line)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for pb in &self.blocks {
            let mut instructions = Vec::with_capacity(pb.raw_instructions.len());
            for (text, lineno) in &pb.raw_instructions {
                instructions.push(parse_instruction(text, *lineno)?);
            }
            let successors = match instructions.last() {
                Some(term) if term.is_terminator => successor_labels(term),
                _ => Vec::new(),
            };
            blocks.push(BasicBlock {
                label: pb.label.clone(),
                instructions,
                successors,
                predecessors: Vec::new(),
            });
        }
        // Resolve predecessors; unknown branch targets are structural errors.
        let labels: Vec<String> = blocks.iter().map(|b| b.label.clone()).collect();
        let mut preds: Vec<Vec<String>> = vec![Vec::new(); blocks.len()];
        for b in &blocks {
            for succ in &b.successors {
                match labels.iter().position(|l| l == succ) {
                    Some(i) => {
                        if !preds[i].contains(&b.label) {
                            preds[i].push(b.label.clone());
                        }
                    }
                    None => {
                        return Err(err(
                            close_line,
                            format!(
                                "function '{}': branch to unknown label '{succ}'",
                                self.name
                            ),
                        ))
                    }
                }
            }
        }
        for (b, p) in blocks.iter_mut().zip(preds) {
            b.predecessors = p;
        }
        Ok(IrFunction {
            name: self.name,
            blocks,
        })
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_string = !in_string,
            ';' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

fn function_name(line: &str) -> Option<String> {
    let at = line.find('@')?;
    let rest = &line[at + 1..];
    if let Some(stripped) = rest.strip_prefix('"') {
        let end = stripped.find('"')?;
        return Some(stripped[..end].to_string());
    }
    let end = rest
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.' || c == '$' || c == '-'))
        .unwrap_or(rest.len());
    Some(rest[..end].to_string())
}

/// `label:` possibly with trailing content already stripped by the comment
/// pass. Quoted labels (`"a b":`) are unquoted.
fn block_label(line: &str) -> Option<String> {
    let colon = line.find(':')?;
    let (head, tail) = line.split_at(colon);
    if !tail[1..].trim().is_empty() {
        return None;
    }
    let head = head.trim();
    if head.is_empty() {
        return None;
    }
    if let Some(q) = head.strip_prefix('"') {
        let inner = q.strip_suffix('"')?;
        return Some(inner.to_string());
    }
    let valid = head
        .chars()
        .all(|c| c.is_alphanumeric() || c == '_' || c == '.' || c == '$' || c == '-');
    if valid {
        Some(head.to_string())
    } else {
        None
    }
}

/// Continuation lines of multi-line instructions: switch cases, the closing
/// bracket, invoke destinations, and landingpad clauses.
fn is_continuation(line: &str) -> bool {
    if line == "]" {
        return true;
    }
    if line.starts_with("to label") || line.starts_with("unwind label") {
        return true;
    }
    if line == "cleanup" || line.starts_with("catch ") || line.starts_with("filter ") {
        return true;
    }
    // switch case: `i32 7, label %bb`
    let mut toks = line.split_whitespace();
    match (toks.next(), line.contains(", label %")) {
        (Some(t), true) => is_int_type(t),
        _ => false,
    }
}

fn is_terminator_text(text: &str) -> bool {
    let opcode = opcode_of(text);
    TERMINATORS.contains(&opcode.as_str())
}

fn opcode_of(text: &str) -> String {
    let mut tokens = text.split_whitespace().peekable();
    if let Some(first) = tokens.peek() {
        if first.starts_with('%') {
            // `%x = opcode ...`
            let mut t = tokens.clone();
            t.next();
            if t.peek() == Some(&"=") {
                tokens = t;
                tokens.next();
            }
        }
    }
    for tok in tokens {
        if MODIFIERS.contains(&tok) {
            continue;
        }
        return tok.to_string();
    }
    String::new()
}

fn is_int_type(tok: &str) -> bool {
    tok.len() > 1
        && tok.starts_with('i')
        && tok[1..].chars().all(|c| c.is_ascii_digit())
}

fn clean_token(tok: &str) -> &str {
    tok.trim_matches(|c| matches!(c, '(' | ')' | '[' | ']' | '{' | '}' | '<' | '>' | ',' | '"'))
}

fn is_plain_int_type(clean: &str) -> bool {
    is_int_type(clean) && !clean.ends_with('*')
}

fn parse_instruction(text: &str, _lineno: usize) -> Result<Instruction, ParseError> {
    let opcode = opcode_of(text);
    let mut tokens = text.split_whitespace().peekable();
    // Skip `%x =` if present.
    if let Some(first) = tokens.peek() {
        if first.starts_with('%') {
            let mut t = tokens.clone();
            t.next();
            if t.peek() == Some(&"=") {
                tokens = t;
                tokens.next();
            }
        }
    }
    let mut rest: Vec<&str> = Vec::new();
    let mut seen_opcode = false;
    for tok in tokens {
        if !seen_opcode {
            if tok == opcode {
                seen_opcode = true;
            }
            continue;
        }
        rest.push(tok);
    }
    let result_type = rest
        .iter()
        .find(|t| !MODIFIERS.contains(&t.trim_end_matches(|c: char| c == ',')))
        .map(|t| t.trim_end_matches(',').to_string());

    let mut int_consts = Vec::new();
    let mut width: Option<u32> = None;
    let mut skip_next = false;
    let mut prev_clean = String::new();
    for (i, tok) in rest.iter().enumerate() {
        let clean = clean_token(tok);
        if skip_next {
            skip_next = false;
            prev_clean = clean.to_string();
            continue;
        }
        if prev_clean == "align" {
            prev_clean = clean.to_string();
            continue;
        }
        if is_plain_int_type(clean) {
            width = clean[1..].parse().ok();
            prev_clean = clean.to_string();
            continue;
        }
        // Array/vector length prefix: `[4 x i32]`, `<8 x i16>`
        if let Ok(_n) = clean.parse::<i128>() {
            let next_is_x = rest.get(i + 1).map(|t| clean_token(t)) == Some("x");
            if next_is_x {
                skip_next = true;
                prev_clean = clean.to_string();
                continue;
            }
            if !tok.starts_with('%') && !tok.starts_with('!') && !tok.starts_with('#') {
                int_consts.push(IntConst {
                    width,
                    value: clean.parse().unwrap(),
                });
            }
        } else if clean == "true" {
            int_consts.push(IntConst {
                width: Some(1),
                value: 1,
            });
        } else if clean == "false" {
            int_consts.push(IntConst {
                width: Some(1),
                value: 0,
            });
        }
        prev_clean = clean.to_string();
    }

    Ok(Instruction {
        is_terminator: TERMINATORS.contains(&opcode.as_str()),
        operands: rest.iter().map(|s| s.to_string()).collect(),
        result_type,
        int_consts,
        opcode,
    })
}

/// Branch targets: every `label %X` pair in the terminator, deduplicated.
fn successor_labels(inst: &Instruction) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let toks = &inst.operands;
    for i in 0..toks.len() {
        if clean_token(&toks[i]) == "label" {
            if let Some(next) = toks.get(i + 1) {
                let t = clean_token(next);
                if let Some(name) = t.strip_prefix('%') {
                    let name = name.trim_matches('"').to_string();
                    if !out.contains(&name) {
                        out.push(name);
                    }
                }
            }
        }
    }
    out
}
