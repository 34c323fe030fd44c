//! A tiny scripting language that exists to generate call/return events.
//!
//! ```text
//! program := def* stmt*
//! def     := "def" NAME "(" ")" "{" stmt* "}"
//! stmt    := "work" INT ";" | "call" NAME ";" | "repeat" INT "{" stmt* "}"
//! ```
//!
//! `#` starts a comment that runs to the end of the line. `work N` lets N
//! nanoseconds pass on the session clock; `call f` runs `f`'s body between a
//! Call and a Return event.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::events::{DispatchError, EventKind, FunctionId, HookRegistry, TOPLEVEL};
use crate::timebase::{TimeError, TimeSource};

pub const DEFAULT_MAX_DEPTH: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Work(u64),
    Call(String),
    Repeat(u64, Vec<Stmt>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncDef {
    pub name: String,
    pub body: Vec<Stmt>,
}

/// A validated program: unique definitions and every call resolvable.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Script {
    defs: Vec<FuncDef>,
    body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("call to undefined function `{0}`")]
    Undefined(String),
    #[error("function `{0}` defined more than once")]
    Duplicate(String),
    #[error("`{TOPLEVEL}` cannot be defined by a script")]
    Reserved,
    #[error("function name is empty")]
    EmptyName,
}

impl Script {
    pub fn new(defs: Vec<FuncDef>, body: Vec<Stmt>) -> Result<Self, ScriptError> {
        let mut names = HashMap::new();
        for d in &defs {
            if d.name.is_empty() {
                return Err(ScriptError::EmptyName);
            }
            if d.name == TOPLEVEL {
                return Err(ScriptError::Reserved);
            }
            if names.insert(d.name.as_str(), ()).is_some() {
                return Err(ScriptError::Duplicate(d.name.clone()));
            }
        }
        fn check(stmts: &[Stmt], names: &HashMap<&str, ()>) -> Result<(), ScriptError> {
            for s in stmts {
                match s {
                    Stmt::Call(n) if !names.contains_key(n.as_str()) => {
                        return Err(ScriptError::Undefined(n.clone()))
                    }
                    Stmt::Repeat(_, body) => check(body, names)?,
                    _ => {}
                }
            }
            Ok(())
        }
        for d in &defs {
            check(&d.body, &names)?;
        }
        check(&body, &names)?;
        Ok(Script { defs, body })
    }

    pub fn defs(&self) -> &[FuncDef] {
        &self.defs
    }

    pub fn body(&self) -> &[Stmt] {
        &self.body
    }
}

impl fmt::Display for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn block(f: &mut fmt::Formatter<'_>, stmts: &[Stmt], indent: usize) -> fmt::Result {
            for s in stmts {
                write!(f, "{:indent$}", "")?;
                match s {
                    Stmt::Work(n) => writeln!(f, "work {n};")?,
                    Stmt::Call(name) => writeln!(f, "call {name};")?,
                    Stmt::Repeat(n, body) => {
                        writeln!(f, "repeat {n} {{")?;
                        block(f, body, indent + 4)?;
                        writeln!(f, "{:indent$}}}", "")?;
                    }
                }
            }
            Ok(())
        }
        for d in &self.defs {
            writeln!(f, "def {}() {{", d.name)?;
            block(f, &d.body, 4)?;
            writeln!(f, "}}")?;
        }
        block(f, &self.body, 0)
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(source: &str) -> Result<Vec<Token>, ScriptError> {
    let mut out = Vec::new();
    for (lineno, text) in source.lines().enumerate() {
        let line = lineno + 1;
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(Token {
                    tok: Tok::Ident(word),
                    line,
                    column,
                });
            } else if c.is_ascii_digit() {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let digits: String = chars[start..i].iter().collect();
                let value = digits.parse::<u64>().map_err(|_| {
                    syntax(line, column, format!("integer `{digits}` out of range"))
                })?;
                out.push(Token {
                    tok: Tok::Int(value),
                    line,
                    column,
                });
            } else if "(){};".contains(c) {
                out.push(Token {
                    tok: Tok::Punct(c),
                    line,
                    column,
                });
                i += 1;
            } else {
                return Err(syntax(line, column, format!("unexpected character `{c}`")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.column)).unwrap_or(self.end)
    }

    fn err(&self, message: impl Into<String>) -> ScriptError {
        let (l, c) = self.here();
        syntax(l, c, message)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect_punct(&mut self, p: char) -> Result<(), ScriptError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Punct(c), ..
            }) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{p}`"))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ScriptError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Ident(s), ..
            }) if !is_keyword(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expect_int(&mut self) -> Result<u64, ScriptError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Int(n), ..
            }) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected integer")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s == kw)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ScriptError> {
        self.expect_punct('{')?;
        let mut stmts = Vec::new();
        loop {
            match self.peek() {
                Some(Token {
                    tok: Tok::Punct('}'),
                    ..
                }) => {
                    self.pos += 1;
                    return Ok(stmts);
                }
                None => return Err(self.err("unterminated block, expected `}`")),
                _ => stmts.push(self.stmt()?),
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ScriptError> {
        let (line, column) = self.here();
        let Some(Token {
            tok: Tok::Ident(kw),
            ..
        }) = self.next()
        else {
            return Err(syntax(line, column, "expected `work`, `call` or `repeat`"));
        };
        match kw.as_str() {
            "work" => {
                let n = self.expect_int()?;
                self.expect_punct(';')?;
                Ok(Stmt::Work(n))
            }
            "call" => {
                let name = self.expect_ident("function name")?;
                self.expect_punct(';')?;
                Ok(Stmt::Call(name))
            }
            "repeat" => {
                let n = self.expect_int()?;
                let body = self.block()?;
                Ok(Stmt::Repeat(n, body))
            }
            "def" => Err(syntax(
                line,
                column,
                "definitions are only allowed at top level",
            )),
            other => Err(syntax(line, column, format!("unknown statement `{other}`"))),
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "def" | "work" | "call" | "repeat")
}

/// Parses and validates a script.
pub fn parse(source: &str) -> Result<Script, ScriptError> {
    let tokens = lex(source)?;
    let end = source
        .lines()
        .enumerate()
        .last()
        .map(|(i, l)| (i + 1, l.chars().count() + 1))
        .unwrap_or((1, 1));
    let mut p = Parser {
        tokens,
        pos: 0,
        end,
    };
    let mut defs = Vec::new();
    let mut body = Vec::new();
    while p.peek().is_some() {
        if p.at_keyword("def") {
            if !body.is_empty() {
                return Err(p.err("definitions must precede statements"));
            }
            p.pos += 1;
            let name = p.expect_ident("function name")?;
            p.expect_punct('(')?;
            p.expect_punct(')')?;
            let fbody = p.block()?;
            defs.push(FuncDef { name, body: fbody });
        } else {
            body.push(p.stmt()?);
        }
    }
    Script::new(defs, body)
}

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("call depth limit of {0} exceeded")]
    DepthLimit(usize),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("clock error: {0}")]
    Clock(#[from] TimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_depth: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

enum Cont<'a> {
    Block { stmts: &'a [Stmt], pc: usize },
    Repeat { body: &'a [Stmt], left: u64 },
    Return(usize),
}

/// Executes the script's top-level body, sending events through `registry`
/// and letting time pass on the registry's clock.
pub fn run(script: &Script, registry: &HookRegistry) -> Result<(), RuntimeError> {
    run_with(script, registry, RunOptions::default())
}

pub fn run_with(
    script: &Script,
    registry: &HookRegistry,
    opts: RunOptions,
) -> Result<(), RuntimeError> {
    let index: HashMap<&str, usize> = script
        .defs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.name.as_str(), i))
        .collect();
    let ids: Vec<FunctionId> = script
        .defs
        .iter()
        .map(|d| FunctionId::script(&d.name).expect("validated by Script::new"))
        .collect();
    let clock: &TimeSource = registry.source();

    // Explicit continuation stack so deep recursion does not use the native stack.
    let mut conts = vec![Cont::Block {
        stmts: &script.body,
        pc: 0,
    }];
    let mut depth = 0usize;
    while let Some(cont) = conts.pop() {
        match cont {
            Cont::Block { stmts, pc } => {
                let Some(stmt) = stmts.get(pc) else { continue };
                conts.push(Cont::Block { stmts, pc: pc + 1 });
                match stmt {
                    Stmt::Work(dt) => clock.consume(*dt)?,
                    Stmt::Call(name) => {
                        if depth >= opts.max_depth {
                            return Err(RuntimeError::DepthLimit(opts.max_depth));
                        }
                        let i = index[name.as_str()];
                        depth += 1;
                        registry.send_event(&ids[i], EventKind::Call)?;
                        conts.push(Cont::Return(i));
                        conts.push(Cont::Block {
                            stmts: &script.defs[i].body,
                            pc: 0,
                        });
                    }
                    Stmt::Repeat(n, body) => conts.push(Cont::Repeat { body, left: *n }),
                }
            }
            Cont::Repeat { body, left } => {
                if left > 0 {
                    conts.push(Cont::Repeat {
                        body,
                        left: left - 1,
                    });
                    conts.push(Cont::Block { stmts: body, pc: 0 });
                }
            }
            Cont::Return(i) => {
                depth -= 1;
                registry.send_event(&ids[i], EventKind::Return)?;
            }
        }
    }
    Ok(())
}
