//! Text form of a [`Dut`]: a line-oriented format with `#` comments.
//!
//! ```text
//! dut magic
//! input x 32
//! output y 32
//! block 0:
//!   t = x == 0xDEADBEEF
//!   br t ? 1 : 2
//! block 1:
//!   halt {y=0}
//! block 2:
//!   halt {y=x}
//! entry 0
//! max_cycles 1
//! ```

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use super::{
    Arm, BasicBlock, BinaryOp, BlockId, BranchEdge, Dut, DutParts, Expr, Port, Register, Stmt, Terminator, UnaryOp,
    DEFAULT_MAX_STEPS_PER_CYCLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    Syntax,
    UndefinedReference,
    WidthMismatch,
    DanglingTarget,
    RegisterNotUpdated,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UndefinedReference => "undefined-reference",
            ParseErrorKind::WidthMismatch => "width-mismatch",
            ParseErrorKind::DanglingTarget => "dangling-target",
            ParseErrorKind::RegisterNotUpdated => "register-not-updated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind} error: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

fn err<T>(line: usize, column: usize, kind: ParseErrorKind, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, column, kind, message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Op(&'static str),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn lex(line: &str, lineno: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), col });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let value = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                u64::from_str_radix(hex, 16)
            } else {
                text.parse::<u64>()
            };
            match value {
                Ok(v) => out.push(Token { tok: Tok::Num(v), col }),
                Err(_) => return err(lineno, col, ParseErrorKind::Syntax, format!("bad number `{text}`")),
            }
            continue;
        }
        let next = chars.get(i + 1).copied();
        let next2 = chars.get(i + 2).copied();
        let (op, len): (Option<&'static str>, usize) = match (c, next, next2) {
            ('<', Some('<'), _) => (Some("<<"), 2),
            ('>', Some('>'), _) => (Some(">>"), 2),
            ('<', Some('='), Some('u')) => (Some("<=u"), 3),
            ('>', Some('='), Some('u')) => (Some(">=u"), 3),
            ('<', Some('u'), _) => (Some("<u"), 2),
            ('>', Some('u'), _) => (Some(">u"), 2),
            ('=', Some('='), _) => (Some("=="), 2),
            ('!', Some('='), _) => (Some("!="), 2),
            ('+', ..) => (Some("+"), 1),
            ('-', ..) => (Some("-"), 1),
            ('*', ..) => (Some("*"), 1),
            ('&', ..) => (Some("&"), 1),
            ('|', ..) => (Some("|"), 1),
            ('^', ..) => (Some("^"), 1),
            ('~', ..) => (Some("~"), 1),
            ('!', ..) => (Some("!"), 1),
            _ => (None, 1),
        };
        if let Some(op) = op {
            // `<u` must not swallow an identifier that merely starts with `u`.
            if op.ends_with('u') && chars.get(i + len).is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_') {
                return err(lineno, col, ParseErrorKind::Syntax, "unsigned comparison must be followed by a space");
            }
            out.push(Token { tok: Tok::Op(op), col });
            i += len;
            continue;
        }
        match c {
            '(' | ')' | '{' | '}' | ',' | '=' | ':' | '?' | '.' => {
                out.push(Token { tok: Tok::Punct(c), col });
                i += 1;
            }
            _ => return err(lineno, col, ParseErrorKind::Syntax, format!("unexpected character `{c}`")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum RawKind {
    Num(u64),
    Ident(String),
    Unary(UnaryOp, Box<RawExpr>),
    Binary(BinaryOp, Box<RawExpr>, Box<RawExpr>),
}

#[derive(Debug, Clone)]
struct RawExpr {
    kind: RawKind,
    line: usize,
    col: usize,
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, text_len: usize) -> Self {
        Cursor { toks, pos: 0, line, end_col: text_len + 1 }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => err(self.line, self.col(), ParseErrorKind::Syntax, format!("expected `{c}`")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize), ParseError> {
        let col = self.col();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok((s, col))
            }
            _ => err(self.line, col, ParseErrorKind::Syntax, format!("expected {what}")),
        }
    }

    fn number(&mut self, what: &str) -> Result<(u64, usize), ParseError> {
        let col = self.col();
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok((v, col))
            }
            _ => err(self.line, col, ParseErrorKind::Syntax, format!("expected {what}")),
        }
    }

    fn block_id(&mut self) -> Result<(BlockId, usize), ParseError> {
        let (v, col) = self.number("block id")?;
        match BlockId::try_from(v) {
            Ok(id) => Ok((id, col)),
            Err(_) => err(self.line, col, ParseErrorKind::Syntax, "block id exceeds 32 bits"),
        }
    }

    fn width(&mut self) -> Result<u8, ParseError> {
        let (v, col) = self.number("width")?;
        if (1..=64).contains(&v) {
            Ok(v as u8)
        } else {
            err(self.line, col, ParseErrorKind::WidthMismatch, format!("width {v} outside 1..=64"))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            err(self.line, self.col(), ParseErrorKind::Syntax, "unexpected trailing tokens")
        }
    }

    fn expr(&mut self) -> Result<RawExpr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, min_level: u8) -> Result<RawExpr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((op, level)) = match self.peek() {
            Some(Tok::Op(s)) => binary_op(s),
            _ => None,
        } {
            if level < min_level {
                break;
            }
            let col = self.col();
            self.pos += 1;
            let rhs = self.binary(level + 1)?;
            lhs = RawExpr { kind: RawKind::Binary(op, Box::new(lhs), Box::new(rhs)), line: self.line, col };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<RawExpr, ParseError> {
        let col = self.col();
        let line = self.line;
        match self.peek().cloned() {
            Some(Tok::Op("~")) | Some(Tok::Op("!")) => {
                self.pos += 1;
                let arg = self.unary()?;
                Ok(RawExpr { kind: RawKind::Unary(UnaryOp::Not, Box::new(arg)), line, col })
            }
            Some(Tok::Op("-")) => {
                self.pos += 1;
                let arg = self.unary()?;
                Ok(RawExpr { kind: RawKind::Unary(UnaryOp::Neg, Box::new(arg)), line, col })
            }
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(RawExpr { kind: RawKind::Num(v), line, col })
            }
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(RawExpr { kind: RawKind::Ident(s), line, col })
            }
            Some(Tok::Punct('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_punct(')')?;
                Ok(e)
            }
            _ => err(line, col, ParseErrorKind::Syntax, "expected an expression"),
        }
    }
}

fn binary_op(s: &str) -> Option<(BinaryOp, u8)> {
    Some(match s {
        "|" => (BinaryOp::Or, 1),
        "^" => (BinaryOp::Xor, 2),
        "&" => (BinaryOp::And, 3),
        "==" => (BinaryOp::Eq, 4),
        "!=" => (BinaryOp::Ne, 4),
        "<u" => (BinaryOp::Ltu, 5),
        "<=u" => (BinaryOp::Leu, 5),
        ">u" => (BinaryOp::Gtu, 5),
        ">=u" => (BinaryOp::Geu, 5),
        "<<" => (BinaryOp::Shl, 6),
        ">>" => (BinaryOp::Shr, 6),
        "+" => (BinaryOp::Add, 7),
        "-" => (BinaryOp::Sub, 7),
        "*" => (BinaryOp::Mul, 8),
        _ => return None,
    })
}

struct RawStmt {
    name: String,
    name_col: usize,
    width: Option<u8>,
    expr: RawExpr,
}

enum RawTerm {
    Goto(BlockId),
    Branch(RawExpr, BlockId, BlockId),
    Assign(bool, Vec<(String, usize, RawExpr)>),
}

struct RawBlock {
    id: BlockId,
    line: usize,
    stmts: Vec<RawStmt>,
    term: Option<(RawTerm, usize)>,
}

/// Parses a DUT document from raw bytes; invalid UTF-8 is a syntax error.
pub fn parse_dut_bytes(bytes: &[u8]) -> Result<Dut, ParseError> {
    match core::str::from_utf8(bytes) {
        Ok(text) => parse_dut(text),
        Err(e) => err(1, e.valid_up_to() + 1, ParseErrorKind::Syntax, "document is not valid UTF-8"),
    }
}

/// Parses and validates a DUT document.
pub fn parse_dut(text: &str) -> Result<Dut, ParseError> {
    use ParseErrorKind::*;

    let mut name: Option<String> = None;
    let mut inputs: Vec<Port> = Vec::new();
    let mut registers: Vec<Register> = Vec::new();
    let mut outputs: Vec<Port> = Vec::new();
    let mut unreachable: Vec<(BranchEdge, usize, usize)> = Vec::new();
    let mut blocks: Vec<RawBlock> = Vec::new();
    let mut entry: Option<(BlockId, usize)> = None;
    let mut max_cycles: Option<u32> = None;
    let mut max_steps: Option<u64> = None;
    let mut globals: BTreeSet<String> = BTreeSet::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("");
        let toks = lex(line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(&toks, lineno, line.chars().count());
        let keyword = match &toks[0].tok {
            Tok::Ident(s) => s.as_str(),
            _ => return err(lineno, toks[0].col, Syntax, "expected a keyword or statement"),
        };
        let is_assignment = matches!(toks.get(1).map(|t| &t.tok), Some(Tok::Punct('=')) | Some(Tok::Punct(':'))) && keyword != "block";
        if is_assignment {
            let Some(block) = blocks.last_mut() else {
                return err(lineno, 1, Syntax, "statement outside of a block");
            };
            if block.term.is_some() {
                return err(lineno, 1, Syntax, "statement after the block terminator");
            }
            let (local, name_col) = cur.ident("local name")?;
            let width = if cur.eat_punct(':') { Some(cur.width()?) } else { None };
            cur.expect_punct('=')?;
            let expr = cur.expr()?;
            cur.finish()?;
            block.stmts.push(RawStmt { name: local, name_col, width, expr });
            continue;
        }
        cur.bump();
        match keyword {
            "dut" => {
                if name.is_some() {
                    return err(lineno, 1, Syntax, "duplicate `dut` line");
                }
                name = Some(cur.ident("design name")?.0);
                cur.finish()?;
            }
            "input" | "output" | "reg" => {
                let (n, col) = cur.ident("port name")?;
                let width = cur.width()?;
                let init = if keyword == "reg" {
                    match cur.ident("`init`")? {
                        (k, _) if k == "init" => {}
                        (_, c) => return err(lineno, c, Syntax, "expected `init`"),
                    }
                    Some(cur.number("initial value")?)
                } else {
                    None
                };
                cur.finish()?;
                if keyword == "output" {
                    if outputs.iter().any(|p| p.name == n) {
                        return err(lineno, col, Syntax, format!("output `{n}` declared twice"));
                    }
                    outputs.push(Port { name: n, width });
                } else {
                    if !globals.insert(n.clone()) {
                        return err(lineno, col, Syntax, format!("`{n}` declared twice"));
                    }
                    match init {
                        None => inputs.push(Port { name: n, width }),
                        Some((init, icol)) => {
                            if init > super::mask(width) {
                                return err(lineno, icol, WidthMismatch, "initial value does not fit the register");
                            }
                            registers.push(Register { name: n, width, init });
                        }
                    }
                }
            }
            "unreachable" => {
                let (site, col) = cur.block_id()?;
                cur.expect_punct('.')?;
                let (arm, acol) = cur.ident("`then` or `else`")?;
                let Some(arm) = Arm::parse(&arm) else {
                    return err(lineno, acol, Syntax, "expected `then` or `else`");
                };
                cur.finish()?;
                unreachable.push((BranchEdge::new(site, arm), lineno, col));
            }
            "block" => {
                let (id, col) = cur.block_id()?;
                cur.expect_punct(':')?;
                cur.finish()?;
                if blocks.iter().any(|b| b.id == id) {
                    return err(lineno, col, Syntax, format!("block {id} defined twice"));
                }
                blocks.push(RawBlock { id, line: lineno, stmts: Vec::new(), term: None });
            }
            "entry" => {
                let v = cur.block_id()?;
                cur.finish()?;
                entry = Some(v);
            }
            "max_cycles" => {
                let (v, col) = cur.number("cycle count")?;
                cur.finish()?;
                match u32::try_from(v) {
                    Ok(v) if v > 0 => max_cycles = Some(v),
                    _ => return err(lineno, col, Syntax, "max_cycles must be in 1..2^32"),
                }
            }
            "max_steps" => {
                let (v, col) = cur.number("step count")?;
                cur.finish()?;
                if v == 0 {
                    return err(lineno, col, Syntax, "max_steps must be positive");
                }
                max_steps = Some(v);
            }
            "goto" | "br" | "cycle" | "halt" => {
                let Some(block) = blocks.last_mut() else {
                    return err(lineno, 1, Syntax, "terminator outside of a block");
                };
                if block.term.is_some() {
                    return err(lineno, 1, Syntax, "block already has a terminator");
                }
                let term = match keyword {
                    "goto" => RawTerm::Goto(cur.block_id()?.0),
                    "br" => {
                        let cond = cur.expr()?;
                        cur.expect_punct('?')?;
                        let (t, _) = cur.block_id()?;
                        cur.expect_punct(':')?;
                        let (e, _) = cur.block_id()?;
                        RawTerm::Branch(cond, t, e)
                    }
                    _ => {
                        let mut items = Vec::new();
                        if !cur.at_end() {
                            cur.expect_punct('{')?;
                            if !cur.eat_punct('}') {
                                loop {
                                    let (n, col) = cur.ident("register or output name")?;
                                    cur.expect_punct('=')?;
                                    items.push((n, col, cur.expr()?));
                                    if cur.eat_punct('}') {
                                        break;
                                    }
                                    cur.expect_punct(',')?;
                                }
                            }
                        }
                        RawTerm::Assign(keyword == "cycle", items)
                    }
                };
                cur.finish()?;
                block.term = Some((term, lineno));
            }
            other => return err(lineno, 1, Syntax, format!("unknown keyword `{other}`")),
        }
    }

    let Some(name) = name else {
        return err(1, 1, Syntax, "missing `dut <name>` line");
    };
    let Some((entry, _)) = entry else {
        return err(text.lines().count().max(1), 1, Syntax, "missing `entry <id>` line");
    };

    let mut block_lines = BTreeMap::new();
    let mut built = Vec::with_capacity(blocks.len());
    for raw in blocks {
        block_lines.insert(raw.id, raw.line);
        built.push(elaborate_block(raw, &inputs, &registers, &outputs)?);
    }

    let mut declared_unreachable = BTreeSet::new();
    for (edge, line, col) in &unreachable {
        let Some(b) = built.iter().find(|b| b.id == edge.site) else {
            return err(*line, *col, DanglingTarget, format!("no block {}", edge.site));
        };
        if !matches!(b.terminator, Terminator::Branch { .. }) {
            return err(*line, *col, DanglingTarget, format!("block {} does not end in a branch", edge.site));
        }
        declared_unreachable.insert(*edge);
    }

    let parts = DutParts {
        name,
        inputs,
        registers,
        outputs,
        blocks: built,
        entry,
        max_cycles: max_cycles.unwrap_or(1),
        max_steps_per_cycle: max_steps.unwrap_or(DEFAULT_MAX_STEPS_PER_CYCLE),
        declared_unreachable,
    };
    parts.build().map_err(|e| {
        let line = e.block.and_then(|b| block_lines.get(&b).copied()).unwrap_or(1);
        ParseError { line, column: 1, kind: e.kind, message: e.detail }
    })
}

struct Scope<'a> {
    inputs: &'a [Port],
    registers: &'a [Register],
    locals: Vec<(String, u8)>,
}

impl Scope<'_> {
    fn lookup(&self, name: &str) -> Option<(Expr, u8)> {
        if let Some(i) = self.locals.iter().rposition(|(n, _)| n == name) {
            return Some((Expr::Local(i), self.locals[i].1));
        }
        if let Some(i) = self.inputs.iter().position(|p| p.name == name) {
            return Some((Expr::Input(i), self.inputs[i].width));
        }
        if let Some(i) = self.registers.iter().position(|r| r.name == name) {
            return Some((Expr::Reg(i), self.registers[i].width));
        }
        None
    }

    /// Width an expression has on its own; `None` for constant-only trees.
    fn natural(&self, e: &RawExpr) -> Result<Option<u8>, ParseError> {
        Ok(match &e.kind {
            RawKind::Num(_) => None,
            RawKind::Ident(n) => match self.lookup(n) {
                Some((_, w)) => Some(w),
                None => return err(e.line, e.col, ParseErrorKind::UndefinedReference, format!("`{n}` is not defined")),
            },
            RawKind::Unary(_, a) => self.natural(a)?,
            RawKind::Binary(op, l, r) => {
                if op.is_comparison() {
                    Some(1)
                } else if op.is_shift() {
                    self.natural(l)?
                } else {
                    match self.natural(l)? {
                        Some(w) => Some(w),
                        None => self.natural(r)?,
                    }
                }
            }
        })
    }

    fn elaborate(&self, e: &RawExpr, hint: Option<u8>) -> Result<Expr, ParseError> {
        use ParseErrorKind::*;
        match &e.kind {
            RawKind::Num(v) => {
                let Some(w) = hint else {
                    return err(e.line, e.col, WidthMismatch, "cannot infer the width of this constant");
                };
                if *v > super::mask(w) {
                    return err(e.line, e.col, WidthMismatch, format!("constant {v} does not fit in {w} bits"));
                }
                Ok(Expr::Const { value: *v, width: w })
            }
            RawKind::Ident(n) => match self.lookup(n) {
                Some((x, _)) => Ok(x),
                None => err(e.line, e.col, UndefinedReference, format!("`{n}` is not defined")),
            },
            RawKind::Unary(op, a) => {
                let w = self.natural(a)?.or(hint);
                let arg = self.elaborate(a, w)?;
                let width = w.unwrap_or(1);
                Ok(Expr::Unary { op: *op, width, arg: Box::new(arg) })
            }
            RawKind::Binary(op, l, r) => {
                let lw = self.natural(l)?;
                let rw = self.natural(r)?;
                if op.is_shift() {
                    let Some(w) = lw.or(hint) else {
                        return err(e.line, e.col, WidthMismatch, "cannot infer the width of this shift");
                    };
                    let lhs = self.elaborate(l, Some(w))?;
                    let rhs = self.elaborate(r, rw.or(Some(w)))?;
                    return Ok(Expr::Binary { op: *op, width: w, lhs: Box::new(lhs), rhs: Box::new(rhs) });
                }
                let operand = if op.is_comparison() { lw.or(rw) } else { lw.or(rw).or(hint) };
                let Some(w) = operand else {
                    return err(e.line, e.col, WidthMismatch, "cannot infer operand widths");
                };
                for (side, sw) in [(l, lw), (r, rw)] {
                    if let Some(sw) = sw {
                        if sw != w {
                            return err(
                                side.line,
                                side.col,
                                WidthMismatch,
                                format!("operands of `{}` have widths {w} and {sw}", op.symbol()),
                            );
                        }
                    }
                }
                let lhs = self.elaborate(l, Some(w))?;
                let rhs = self.elaborate(r, Some(w))?;
                let width = if op.is_comparison() { 1 } else { w };
                Ok(Expr::Binary { op: *op, width, lhs: Box::new(lhs), rhs: Box::new(rhs) })
            }
        }
    }

    fn exact(&self, e: &RawExpr, width: u8, what: &str) -> Result<Expr, ParseError> {
        if let Some(w) = self.natural(e)? {
            if w != width {
                return err(e.line, e.col, ParseErrorKind::WidthMismatch, format!("{what} expects width {width}, got {w}"));
            }
        }
        self.elaborate(e, Some(width))
    }
}

fn elaborate_block(raw: RawBlock, inputs: &[Port], registers: &[Register], outputs: &[Port]) -> Result<BasicBlock, ParseError> {
    use ParseErrorKind::*;
    let mut scope = Scope { inputs, registers, locals: Vec::new() };
    let mut stmts = Vec::with_capacity(raw.stmts.len());
    for s in raw.stmts {
        if inputs.iter().any(|p| p.name == s.name) || registers.iter().any(|r| r.name == s.name) {
            return err(s.expr.line, s.name_col, Syntax, format!("local `{}` shadows a port", s.name));
        }
        if scope.locals.iter().any(|(n, _)| *n == s.name) {
            return err(s.expr.line, s.name_col, Syntax, format!("local `{}` assigned twice", s.name));
        }
        let expr = scope.elaborate(&s.expr, s.width)?;
        let width = match s.width {
            Some(w) => w,
            None => match scope.natural(&s.expr)? {
                Some(w) => w,
                None => return err(s.expr.line, s.expr.col, WidthMismatch, "constant assignment needs a `:width` annotation"),
            },
        };
        scope.locals.push((s.name.clone(), width));
        stmts.push(Stmt { name: s.name, width, expr });
    }
    let Some((term, tline)) = raw.term else {
        return err(raw.line, 1, Syntax, format!("block {} has no terminator", raw.id));
    };
    let terminator = match term {
        RawTerm::Goto(t) => Terminator::Goto(t),
        RawTerm::Branch(cond, then_target, else_target) => {
            Terminator::Branch { cond: scope.exact(&cond, 1, "branch condition")?, then_target, else_target }
        }
        RawTerm::Assign(is_cycle, items) => {
            let targets: Vec<(&str, u8)> = if is_cycle {
                registers.iter().map(|r| (r.name.as_str(), r.width)).collect()
            } else {
                outputs.iter().map(|p| (p.name.as_str(), p.width)).collect()
            };
            let mut slots: Vec<Option<Expr>> = alloc::vec![None; targets.len()];
            for (n, col, e) in items {
                let Some(i) = targets.iter().position(|(t, _)| *t == n) else {
                    let what = if is_cycle { "register" } else { "output" };
                    return err(tline, col, UndefinedReference, format!("no {what} named `{n}`"));
                };
                if slots[i].is_some() {
                    return err(tline, col, RegisterNotUpdated, format!("`{n}` assigned more than once"));
                }
                slots[i] = Some(scope.exact(&e, targets[i].1, &format!("`{n}`"))?);
            }
            let mut values = Vec::with_capacity(slots.len());
            for (slot, (n, _)) in slots.into_iter().zip(&targets) {
                match slot {
                    Some(e) => values.push(e),
                    None => {
                        let what = if is_cycle { "register" } else { "output" };
                        return err(tline, 1, RegisterNotUpdated, format!("{what} `{n}` is not assigned"));
                    }
                }
            }
            if is_cycle {
                Terminator::CycleEnd(values)
            } else {
                Terminator::Halt(values)
            }
        }
    };
    Ok(BasicBlock { id: raw.id, stmts, terminator })
}

fn write_const(out: &mut String, v: u64) {
    if v < 10 {
        let _ = write!(out, "{v}");
    } else {
        let _ = write!(out, "0x{v:X}");
    }
}

fn write_expr(out: &mut String, dut: &Dut, stmts: &[Stmt], e: &Expr, top: bool) {
    match e {
        Expr::Const { value, .. } => write_const(out, *value),
        Expr::Input(i) => out.push_str(&dut.inputs()[*i].name),
        Expr::Reg(i) => out.push_str(&dut.registers()[*i].name),
        Expr::Local(i) => out.push_str(&stmts[*i].name),
        Expr::Unary { op, arg, .. } => {
            out.push_str(op.symbol());
            write_expr(out, dut, stmts, arg, false);
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            if !top {
                out.push('(');
            }
            write_expr(out, dut, stmts, lhs, false);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, dut, stmts, rhs, false);
            if !top {
                out.push(')');
            }
        }
    }
}

/// Serializes a [`Dut`] back into the text format; `parse_dut` of the result
/// reproduces the same design.
pub fn render_dut(dut: &Dut) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dut {}", dut.name());
    for p in dut.inputs() {
        let _ = writeln!(out, "input {} {}", p.name, p.width);
    }
    for r in dut.registers() {
        let _ = write!(out, "reg {} {} init ", r.name, r.width);
        write_const(&mut out, r.init);
        out.push('\n');
    }
    for p in dut.outputs() {
        let _ = writeln!(out, "output {} {}", p.name, p.width);
    }
    for e in dut.declared_unreachable() {
        let _ = writeln!(out, "unreachable {e}");
    }
    for b in dut.blocks().values() {
        let _ = writeln!(out, "block {}:", b.id);
        for (i, s) in b.stmts.iter().enumerate() {
            let _ = write!(out, "  {}:{} = ", s.name, s.width);
            write_expr(&mut out, dut, &b.stmts[..i], &s.expr, true);
            out.push('\n');
        }
        out.push_str("  ");
        match &b.terminator {
            Terminator::Goto(t) => {
                let _ = write!(out, "goto {t}");
            }
            Terminator::Branch { cond, then_target, else_target } => {
                out.push_str("br ");
                write_expr(&mut out, dut, &b.stmts, cond, true);
                let _ = write!(out, " ? {then_target} : {else_target}");
            }
            Terminator::CycleEnd(values) | Terminator::Halt(values) => {
                let (kw, names): (&str, Vec<&str>) = match &b.terminator {
                    Terminator::CycleEnd(_) => ("cycle", dut.registers().iter().map(|r| r.name.as_str()).collect()),
                    _ => ("halt", dut.outputs().iter().map(|p| p.name.as_str()).collect()),
                };
                let _ = write!(out, "{kw} {{");
                for (i, (n, e)) in names.iter().zip(values).enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let _ = write!(out, "{n}=");
                    write_expr(&mut out, dut, &b.stmts, e, true);
                }
                out.push('}');
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "entry {}", dut.entry());
    let _ = writeln!(out, "max_cycles {}", dut.max_cycles());
    if dut.max_steps_per_cycle() != DEFAULT_MAX_STEPS_PER_CYCLE {
        let _ = writeln!(out, "max_steps {}", dut.max_steps_per_cycle());
    }
    out
}

impl fmt::Display for Dut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_dut(self))
    }
}
